// SPDX-License-Identifier: Apache-2.0

//! Geometry assignment for topology matrices.
//!
//! Intervals are solved in normalized units where `sum dx = sum dy = n` for
//! an `n x n` topology, so one unit is `extent_nm / n` nanometres. Design
//! rules are stored in nanometres and normalized per topology.

mod constraints;
mod solver;

use std::time::Instant;

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use constraints::{
    extract_constraints, AreaConstraint, Axis, ConstraintSet, RangeConstraint, RangeKind,
};
pub use solver::{solve, Budget, GeometrySolution, SolveResult, FEASIBILITY_TOL};

use crate::drc;
use crate::error::{Error, Result};
use crate::geometry::{decode_squish, Layout, SquishPattern};
use crate::rng::PatRng;
use crate::topology::Topology;

/// Design rules in nanometres, as read from the rules JSON block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignRules {
    pub space_min: f64,
    pub width_min: f64,
    /// nm²
    pub area_min: f64,
    /// nm²
    pub area_max: f64,
    pub extent_nm: i64,
}

/// Slack kept on every inequality, in nm, so that rounding to the nm grid
/// cannot turn a tight constraint into a violation.
const MARGIN_NM: f64 = 0.01;

impl DesignRules {
    pub fn validate(&self) -> Result<()> {
        let ok = self.space_min > 0.0
            && self.width_min > 0.0
            && self.area_min >= 0.0
            && self.area_min < self.area_max
            && self.extent_nm > 0
            && [self.space_min, self.width_min, self.area_min, self.area_max]
                .iter()
                .all(|v| v.is_finite());
        if !ok {
            return Err(Error::Parameter(format!(
                "invalid design rules {self:?}: need 0 < space_min, width_min; \
                 0 <= area_min < area_max; extent_nm > 0"
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: DesignRules = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("rules serialize")
    }

    /// Rules in the units of an `n x n` topology.
    pub fn normalized(&self, n: usize) -> NormalizedRules {
        let scale = self.extent_nm as f64 / n as f64;
        NormalizedRules {
            space_min: self.space_min / scale,
            width_min: self.width_min / scale,
            area_min: self.area_min / (scale * scale),
            area_max: self.area_max / (scale * scale),
            total_extent: n as f64,
            unit_scale: scale,
            lo: 1.0 / scale,
            margin: MARGIN_NM / scale,
        }
    }

    /// Tightened copy for retry `attempt`: space and width grow by
    /// `attempt` nm, the area window shrinks by `attempt * 2 * extent` nm².
    pub fn tightened(&self, attempt: usize) -> DesignRules {
        let a = attempt as f64;
        let area_pad = a * 2.0 * self.extent_nm as f64;
        DesignRules {
            space_min: self.space_min + a,
            width_min: self.width_min + a,
            area_min: if self.area_min > 0.0 { self.area_min + area_pad } else { 0.0 },
            area_max: self.area_max - area_pad,
            extent_nm: self.extent_nm,
        }
    }
}

/// Rules in normalized units, as consumed by the solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedRules {
    pub space_min: f64,
    pub width_min: f64,
    pub area_min: f64,
    pub area_max: f64,
    pub total_extent: f64,
    /// nm per unit.
    pub unit_scale: f64,
    /// Smallest interval; one nanometre.
    pub lo: f64,
    pub margin: f64,
}

/// Solving-R: i.i.d. uniform draws on `(0, 1]`, rescaled to the sums.
pub fn init_random(cs: &ConstraintSet, rng: &mut PatRng) -> GeometrySolution {
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| 1.0 - rng.gen::<f64>()).collect() };
    let dx = draw(cs.n_x);
    let dy = draw(cs.n_y);
    GeometrySolution::rescaled(dx, dy, cs.total_extent)
}

/// Geometric vectors of existing patterns for Solving-E.
pub type GeometryLibrary = [(Vec<f64>, Vec<f64>)];

/// Solving-E: a uniformly drawn library pair rescaled to the sums. Falls
/// back to [`init_random`] when no entry has matching lengths.
pub fn init_existing(library: &GeometryLibrary, cs: &ConstraintSet, rng: &mut PatRng) -> GeometrySolution {
    let matching: Vec<&(Vec<f64>, Vec<f64>)> = library
        .iter()
        .filter(|(dx, dy)| dx.len() == cs.n_x && dy.len() == cs.n_y)
        .collect();
    if matching.is_empty() {
        warn!(
            "no library entry with {}x{} intervals ({} entries); using random init",
            cs.n_x,
            cs.n_y,
            library.len()
        );
        return init_random(cs, rng);
    }
    let (dx, dy) = matching[rng.gen_range(0..matching.len())];
    GeometrySolution::rescaled(dx.clone(), dy.clone(), cs.total_extent)
}

/// Solving-D: solves the `blocks` diagonal sub-problems independently and
/// concatenates them. The result is an init, not necessarily feasible.
pub fn init_divide(
    topo: &Topology,
    rules: &NormalizedRules,
    blocks: usize,
    budget: Budget,
    parallel: bool,
) -> Result<GeometrySolution> {
    let n = topo.rows();
    if !topo.is_square() {
        return Err(Error::Size(format!("topology {}x{} is not square", n, topo.cols())));
    }
    if blocks < 2 || blocks > n {
        return Err(Error::Parameter(format!(
            "block count {blocks} must lie in 2..={n}"
        )));
    }
    let bounds: Vec<(usize, usize)> = (0..blocks)
        .map(|b| (b * n / blocks, (b + 1) * n / blocks))
        .collect();
    let one = |&(s, e): &(usize, usize)| -> (Vec<f64>, Vec<f64>) {
        let len = e - s;
        let sub_extent = rules.total_extent * len as f64 / n as f64;
        let uniform = || {
            let v = vec![sub_extent / len as f64; len];
            (v.clone(), v)
        };
        let Ok(window) = topo.window(s, s, len, len) else {
            return uniform();
        };
        let sub_rules = NormalizedRules {
            total_extent: sub_extent,
            ..*rules
        };
        let cs = constraints::extract_unchecked(&window, &sub_rules, true);
        let init = GeometrySolution::uniform(len, len, sub_extent);
        match solve(&cs, &init, budget) {
            Ok(SolveResult::Solved { solution, .. }) => (solution.dx, solution.dy),
            _ => uniform(),
        }
    };
    let parts: Vec<(Vec<f64>, Vec<f64>)> = if parallel {
        bounds.par_iter().map(one).collect()
    } else {
        bounds.iter().map(one).collect()
    };
    let mut dx = Vec::with_capacity(n);
    let mut dy = Vec::with_capacity(n);
    for (px, py) in parts {
        dx.extend(px);
        dy.extend(py);
    }
    Ok(GeometrySolution::rescaled(dx, dy, rules.total_extent))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// Solving-R
    #[serde(rename = "R")]
    Random,
    /// Solving-E
    #[serde(rename = "E")]
    Existing,
    /// Solving-D
    #[serde(rename = "D")]
    Divide,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "R" | "r" => Ok(Strategy::Random),
            "E" | "e" => Ok(Strategy::Existing),
            "D" | "d" => Ok(Strategy::Divide),
            other => Err(Error::Parameter(format!("unknown strategy `{other}`, expected R, E or D"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LegalizeOptions {
    pub strategy: Strategy,
    pub budget: Budget,
    /// Restarts after the first solve, each from a fresh init.
    pub restarts: usize,
    /// Quantize-and-check attempts with progressively tightened rules.
    pub attempts: usize,
    pub blocks: usize,
    pub parallel_blocks: bool,
    pub library: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Default for LegalizeOptions {
    fn default() -> Self {
        LegalizeOptions {
            strategy: Strategy::Random,
            budget: Budget::default(),
            restarts: 3,
            attempts: 3,
            blocks: 4,
            parallel_blocks: false,
            library: Vec::new(),
        }
    }
}

impl LegalizeOptions {
    pub fn with_strategy(strategy: Strategy) -> Self {
        LegalizeOptions {
            strategy,
            ..LegalizeOptions::default()
        }
    }
}

/// Initial point for one solve under the configured strategy.
pub fn initial_solution(
    topo: &Topology,
    cs: &ConstraintSet,
    rules: &NormalizedRules,
    opts: &LegalizeOptions,
    rng: &mut PatRng,
) -> Result<GeometrySolution> {
    match opts.strategy {
        Strategy::Random => Ok(init_random(cs, rng)),
        Strategy::Existing => Ok(init_existing(&opts.library, cs, rng)),
        Strategy::Divide => init_divide(topo, rules, opts.blocks, opts.budget, opts.parallel_blocks),
    }
}

#[derive(Debug, Clone)]
pub struct SolveStats {
    pub solution: Option<GeometrySolution>,
    pub inits: usize,
    pub iterations: usize,
    pub micros: u64,
}

/// Init plus solve with up to `opts.restarts` reseeded restarts; the
/// legality gate used by augmentation.
pub fn solve_topology(
    topo: &Topology,
    rules: &NormalizedRules,
    opts: &LegalizeOptions,
    rng: &mut PatRng,
) -> Result<SolveStats> {
    let start = Instant::now();
    let cs = extract_constraints(topo, rules)?;
    let mut iterations = 0;
    let mut inits = 0;
    for restart in 0..=opts.restarts {
        let init = if restart > 0 && opts.strategy == Strategy::Divide {
            // the block init is deterministic, so restarts draw random inits
            init_random(&cs, rng)
        } else {
            initial_solution(topo, &cs, rules, opts, rng)?
        };
        inits += 1;
        let result = solve(&cs, &init, opts.budget)?;
        iterations += result.iterations();
        match result {
            SolveResult::Solved { solution, .. } => {
                return Ok(SolveStats {
                    solution: Some(solution),
                    inits,
                    iterations,
                    micros: start.elapsed().as_micros() as u64,
                })
            }
            SolveResult::Failure { iterations: 0, .. } => break,
            SolveResult::Failure { .. } => {}
        }
    }
    Ok(SolveStats {
        solution: None,
        inits,
        iterations,
        micros: start.elapsed().as_micros() as u64,
    })
}

/// Rounds cumulative positions to whole nanometres. Each run of intervals
/// moves by less than 1 nm, so integer width and space bounds met with a
/// positive margin still hold afterwards.
pub fn quantize(dx: &[f64], unit_scale: f64, extent_nm: i64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(dx.len());
    let mut acc = 0.0;
    let mut prev = 0i64;
    for (i, d) in dx.iter().enumerate() {
        acc += d;
        let pos = if i + 1 == dx.len() {
            extent_nm
        } else {
            (acc * unit_scale).round() as i64
        };
        if pos <= prev {
            return Err(Error::validation(format!("interval {i} rounds to zero width")));
        }
        out.push((pos - prev) as f64);
        prev = pos;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct LegalPattern {
    pub layout: Layout,
    /// Squish pattern in whole nanometres (`unit_scale = 1`).
    pub pattern: SquishPattern,
    pub attempts: usize,
    pub inits: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Legal(Box<LegalPattern>),
    Discard(String),
}

impl Outcome {
    pub fn is_legal(&self) -> bool {
        matches!(self, Outcome::Legal(_))
    }
}

/// Solves, quantizes to the nm grid, decodes and re-checks with the DRC.
/// Never returns a layout that fails [`drc::check`] under `rules`.
pub fn legalize_pattern(
    topo: &Topology,
    rules: &DesignRules,
    opts: &LegalizeOptions,
    rng: &mut PatRng,
) -> Result<Outcome> {
    rules.validate()?;
    drc::Prefilter::default().check(topo)?;
    if !topo.is_square() {
        return Err(Error::Size(format!(
            "topology {}x{} is not square",
            topo.rows(),
            topo.cols()
        )));
    }
    let n = topo.rows();
    let mut inits = 0;
    let mut iterations = 0;
    let mut last = String::from("no attempt made");
    for attempt in 0..opts.attempts.max(1) {
        let tight = rules.tightened(attempt);
        if tight.validate().is_err() {
            last = format!("rules cannot be tightened for attempt {attempt}");
            break;
        }
        let norm = tight.normalized(n);
        let stats = solve_topology(topo, &norm, opts, rng)?;
        inits += stats.inits;
        iterations += stats.iterations;
        let Some(sol) = stats.solution else {
            return Ok(Outcome::Discard(format!(
                "no feasible geometry after {inits} inits"
            )));
        };
        let (dx, dy) = match (
            quantize(&sol.dx, norm.unit_scale, rules.extent_nm),
            quantize(&sol.dy, norm.unit_scale, rules.extent_nm),
        ) {
            (Ok(dx), Ok(dy)) => (dx, dy),
            (Err(e), _) | (_, Err(e)) => {
                last = e.to_string();
                continue;
            }
        };
        let pattern = SquishPattern::new(topo.clone(), dx, dy, 1.0)?;
        let layout = decode_squish(&pattern)?;
        let report = drc::check(&layout, rules);
        if report.clean {
            return Ok(Outcome::Legal(Box::new(LegalPattern {
                layout,
                pattern,
                attempts: attempt + 1,
                inits,
                iterations,
            })));
        }
        last = format!(
            "{} violations after rounding on attempt {}",
            report.violations.len(),
            attempt + 1
        );
    }
    Ok(Outcome::Discard(last))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn bars_rules() -> DesignRules {
        DesignRules {
            space_min: 40.0,
            width_min: 20.0,
            area_min: 0.0,
            area_max: 1e12,
            extent_nm: 300,
        }
    }

    #[test]
    fn normalization() {
        let r = DesignRules {
            space_min: 64.0,
            width_min: 32.0,
            area_min: 4096.0,
            area_max: 1e6,
            extent_nm: 2048,
        };
        let n = r.normalized(16);
        assert_eq!(n.unit_scale, 128.0);
        assert_eq!(n.space_min, 0.5);
        assert_eq!(n.width_min, 0.25);
        assert_eq!(n.area_min, 0.25);
        assert_eq!(n.total_extent, 16.0);
    }

    #[test]
    fn rules_json_rejects_unknown_and_invalid() {
        assert!(DesignRules::from_json(
            r#"{"space_min":1,"width_min":1,"area_min":0,"area_max":10,"extent_nm":100}"#
        )
        .is_ok());
        assert!(DesignRules::from_json(
            r#"{"space_min":1,"width_min":1,"area_min":0,"area_max":10,"extent_nm":100,"x":1}"#
        )
        .is_err());
        assert!(DesignRules::from_json(
            r#"{"space_min":0,"width_min":1,"area_min":0,"area_max":10,"extent_nm":100}"#
        )
        .is_err());
    }

    #[test]
    fn quantize_keeps_sum_and_runs() {
        let d = vec![0.3, 1.45, 1.25, 1.0];
        let q = quantize(&d, 10.0, 40).unwrap();
        assert_eq!(q.iter().sum::<f64>(), 40.0);
        assert_eq!(q, vec![3.0, 15.0, 12.0, 10.0]);
        assert!(quantize(&[0.01, 3.99], 1.0, 4).is_err());
    }

    #[test]
    fn two_bars_become_clean_layout() {
        let t = Topology::from_rows(&[[1u8, 0, 1], [1, 0, 1], [1, 0, 1]]).unwrap();
        let out = legalize_pattern(&t, &bars_rules(), &LegalizeOptions::default(), &mut seeded(1)).unwrap();
        let Outcome::Legal(p) = out else { panic!("discarded: {out:?}") };
        assert_eq!(p.layout.polygons.len(), 2);
        assert!(drc::check(&p.layout, &bars_rules()).clean);
        assert!(p.pattern.dx[1] >= 40.0);
    }

    #[test]
    fn all_zero_is_empty_layout() {
        let t = Topology::zeros(4, 4);
        let out = legalize_pattern(&t, &bars_rules(), &LegalizeOptions::default(), &mut seeded(2)).unwrap();
        let Outcome::Legal(p) = out else { panic!() };
        assert!(p.layout.polygons.is_empty());
    }

    #[test]
    fn infeasible_rules_discard() {
        let t = Topology::from_rows(&[[1u8, 0, 1], [1, 0, 1], [1, 0, 1]]).unwrap();
        let mut r = bars_rules();
        r.space_min = 200.0;
        r.width_min = 60.0;
        let out = legalize_pattern(&t, &r, &LegalizeOptions::default(), &mut seeded(3)).unwrap();
        assert!(!out.is_legal());
    }

    #[test]
    fn deterministic_given_seed() {
        let t = Topology::from_rows(&[[1u8, 1, 0, 0], [0, 1, 0, 1], [0, 1, 0, 1], [0, 0, 0, 1]]).unwrap();
        let r = DesignRules {
            space_min: 30.0,
            width_min: 30.0,
            area_min: 2000.0,
            area_max: 40000.0,
            extent_nm: 400,
        };
        for strategy in [Strategy::Random, Strategy::Divide] {
            let opts = LegalizeOptions {
                blocks: 2,
                ..LegalizeOptions::with_strategy(strategy)
            };
            let a = legalize_pattern(&t, &r, &opts, &mut seeded(9)).unwrap();
            let b = legalize_pattern(&t, &r, &opts, &mut seeded(9)).unwrap();
            match (a, b) {
                (Outcome::Legal(a), Outcome::Legal(b)) => assert_eq!(a.layout, b.layout),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn random_init_sums_and_seeds() {
        let t = Topology::zeros(5, 5);
        let cs = extract_constraints(&t, &bars_rules().normalized(5)).unwrap();
        let a = init_random(&cs, &mut seeded(1));
        let b = init_random(&cs, &mut seeded(2));
        assert!((a.dx.iter().sum::<f64>() - 5.0).abs() < 1e-12);
        assert_ne!(a.dx, b.dx);
    }

    #[test]
    fn existing_init_rescales_and_falls_back() {
        let t = Topology::zeros(2, 2);
        let cs = extract_constraints(&t, &bars_rules().normalized(2)).unwrap();
        let lib = vec![(vec![10.0, 30.0], vec![20.0, 20.0])];
        let s = init_existing(&lib, &cs, &mut seeded(1));
        assert_eq!(s.dx, vec![0.5, 1.5]);
        assert_eq!(s.dy, vec![1.0, 1.0]);
        let bad = vec![(vec![1.0; 3], vec![1.0; 3])];
        let f = init_existing(&bad, &cs, &mut seeded(1));
        assert_eq!(f, init_random(&cs, &mut seeded(1)));
    }

    #[test]
    fn divide_with_unit_blocks_is_uniform() {
        let t = Topology::zeros(4, 4);
        let r = bars_rules().normalized(4);
        let s = init_divide(&t, &r, 4, Budget::default(), false).unwrap();
        assert_eq!(s.dx, vec![1.0; 4]);
        assert_eq!(s.dy, vec![1.0; 4]);
        assert!(init_divide(&t, &r, 1, Budget::default(), false).is_err());
    }

    #[test]
    fn divide_blocks_satisfy_local_constraints() {
        let t = Topology::from_rows(&[
            [1u8, 0, 1, 0],
            [1, 0, 1, 0],
            [0, 0, 0, 0],
            [0, 1, 1, 0],
        ])
        .unwrap();
        let rules = DesignRules {
            space_min: 30.0,
            width_min: 20.0,
            area_min: 0.0,
            area_max: 1e9,
            extent_nm: 200,
        };
        let norm = rules.normalized(4);
        let s = init_divide(&t, &norm, 2, Budget::default(), true).unwrap();
        let block = t.window(0, 0, 2, 2).unwrap();
        let sub = NormalizedRules { total_extent: 2.0, ..norm };
        let cs = constraints::extract_unchecked(&block, &sub, true);
        assert!(cs.max_violation(&s.dx[..2], &s.dy[..2]) <= 1e-9);
    }
}
