// SPDX-License-Identifier: Apache-2.0

//! Feasibility solver for a [`ConstraintSet`].
//!
//! Each iteration linearizes the violated and nearly active constraints and
//! takes the minimum-norm Levenberg-Marquardt step toward their targets
//! inside the subspace that keeps `sum dx` and `sum dy` fixed:
//!
//! ```text
//! (P J^T J P + mu I) d = P J^T t
//! ```
//!
//! The step is accepted by backtracking on the sum of squared violations,
//! then projected onto `{delta >= lo, sum delta = S}` per axis.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::constraints::{Axis, ConstraintSet};
use crate::error::{Error, Result};

/// Iteration and wall-clock limits for one solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub max_iters: usize,
    /// Optional; leaving it unset keeps results independent of machine speed.
    pub max_time: Option<Duration>,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_iters: 200,
            max_time: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeometrySolution {
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    /// Largest violation of any extracted constraint.
    pub residual: f64,
}

impl GeometrySolution {
    /// Scales `dx` and `dy` to sum to `total`; degenerate vectors become uniform.
    pub fn rescaled(dx: Vec<f64>, dy: Vec<f64>, total: f64) -> GeometrySolution {
        let fix = |v: Vec<f64>| -> Vec<f64> {
            let s: f64 = v.iter().sum();
            if !(s > 0.0 && s.is_finite()) || v.iter().any(|d| !(*d > 0.0)) {
                return vec![total / v.len() as f64; v.len()];
            }
            v.into_iter().map(|d| d * total / s).collect()
        };
        GeometrySolution {
            dx: fix(dx),
            dy: fix(dy),
            residual: f64::INFINITY,
        }
    }

    pub fn uniform(n_x: usize, n_y: usize, total: f64) -> GeometrySolution {
        GeometrySolution::rescaled(vec![1.0; n_x], vec![1.0; n_y], total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolveResult {
    Solved { solution: GeometrySolution, iterations: usize },
    Failure { best_residual: f64, iterations: usize, reason: String },
}

impl SolveResult {
    pub fn is_solved(&self) -> bool {
        matches!(self, SolveResult::Solved { .. })
    }

    pub fn iterations(&self) -> usize {
        match self {
            SolveResult::Solved { iterations, .. } | SolveResult::Failure { iterations, .. } => {
                *iterations
            }
        }
    }
}

/// Reported success threshold on the largest violation.
pub const FEASIBILITY_TOL: f64 = 1e-6;

// linear row: +1 on v[off + a ..= off + b]; area row: dense gradient
enum Row {
    Range { off: usize, a: usize, b: usize, min: f64 },
    AreaMin(usize),
    AreaMax(usize),
}

struct Problem<'a> {
    cs: &'a ConstraintSet,
    rows: Vec<Row>,
    margin: f64,
}

impl<'a> Problem<'a> {
    fn new(cs: &'a ConstraintSet, margin: f64) -> Self {
        let n_x = cs.n_x;
        let mut rows = Vec::new();
        for r in cs.ranges() {
            let off = if r.axis == Axis::X { 0 } else { n_x };
            rows.push(Row::Range {
                off,
                a: r.a,
                b: r.b,
                min: r.min,
            });
        }
        for i in 0..n_x + cs.n_y {
            rows.push(Row::Range {
                off: 0,
                a: i,
                b: i,
                min: cs.lo,
            });
        }
        for (p, poly) in cs.polygons.iter().enumerate() {
            if poly.min > 0.0 {
                rows.push(Row::AreaMin(p));
            }
            if poly.max.is_finite() {
                rows.push(Row::AreaMax(p));
            }
        }
        Problem { cs, rows, margin }
    }

    fn n(&self) -> usize {
        self.cs.n_x + self.cs.n_y
    }

    /// Slack of every row against its margin-tightened target.
    fn slacks(&self, v: &[f64]) -> Vec<f64> {
        let (dx, dy) = v.split_at(self.cs.n_x);
        self.rows
            .iter()
            .map(|row| match *row {
                Row::Range { off, a, b, min } => {
                    v[off + a..=off + b].iter().sum::<f64>() - min - self.margin
                }
                Row::AreaMin(p) => {
                    let poly = &self.cs.polygons[p];
                    poly.area(dx, dy) - poly.min - self.margin
                }
                Row::AreaMax(p) => {
                    let poly = &self.cs.polygons[p];
                    poly.max - self.margin - poly.area(dx, dy)
                }
            })
            .collect()
    }

    fn gradient(&self, row: &Row, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        let n_x = self.cs.n_x;
        let sign = match row {
            Row::Range { off, a, b, .. } => {
                for g in &mut out[off + a..=off + b] {
                    *g = 1.0;
                }
                return;
            }
            Row::AreaMin(_) => 1.0,
            Row::AreaMax(_) => -1.0,
        };
        let p = match row {
            Row::AreaMin(p) | Row::AreaMax(p) => *p,
            Row::Range { .. } => unreachable!(),
        };
        for &(i, j) in &self.cs.polygons[p].cells {
            out[j] += sign * v[n_x + i];
            out[n_x + i] += sign * v[j];
        }
    }
}

fn merit(slacks: &[f64]) -> f64 {
    slacks.iter().map(|s| if *s < 0.0 { s * s } else { 0.0 }).sum()
}

/// Euclidean projection of `v` onto `{w >= lo, sum w = total}`.
pub(crate) fn project_capped_simplex(v: &mut [f64], lo: f64, total: f64) {
    let n = v.len();
    let t = total - lo * n as f64;
    let mut u: Vec<f64> = v.iter().map(|x| x - lo).collect();
    let mut sorted = u.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &s) in sorted.iter().enumerate() {
        cum += s;
        let th = (cum - t) / (j + 1) as f64;
        if s - th > 0.0 {
            theta = th;
        }
    }
    for (x, ui) in v.iter_mut().zip(u.iter_mut()) {
        *x = lo + (*ui - theta).max(0.0);
    }
}

fn project(v: &mut [f64], cs: &ConstraintSet, lo: f64) {
    let (dx, dy) = v.split_at_mut(cs.n_x);
    project_capped_simplex(dx, lo, cs.total_extent);
    project_capped_simplex(dy, lo, cs.total_extent);
}

/// Solves for interval vectors meeting every constraint in `cs`, each
/// inequality with at least `cs.margin` to spare. Deterministic in its inputs.
pub fn solve(cs: &ConstraintSet, init: &GeometrySolution, budget: Budget) -> Result<SolveResult> {
    let margin = cs.margin;
    if init.dx.len() != cs.n_x || init.dy.len() != cs.n_y {
        return Err(Error::Size(format!(
            "init has {}+{} intervals, constraints expect {}+{}",
            init.dx.len(),
            init.dy.len(),
            cs.n_x,
            cs.n_y
        )));
    }
    if init.dx.iter().chain(&init.dy).any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::validation("initial intervals must be strictly positive"));
    }
    if let Some(reason) = cs.infeasible_by_counting() {
        return Ok(SolveResult::Failure {
            best_residual: f64::INFINITY,
            iterations: 0,
            reason,
        });
    }
    let start = Instant::now();
    let prob = Problem::new(cs, margin);
    let n = prob.n();
    let lo = cs.lo + margin;
    let mut v: Vec<f64> = init.dx.iter().chain(&init.dy).copied().collect();
    project(&mut v, cs, lo);
    let mut slacks = prob.slacks(&v);
    let mut phi = merit(&slacks);
    let mut mu = 1e-9;
    // constraints within this distance of their target are held in place
    let hold = 0.5 * margin.max(1e-6) + 1e-3 * cs.total_extent / n as f64;
    let mut grad = vec![0.0; n];
    let (n_x, n_y) = (cs.n_x as f64, cs.n_y as f64);
    for it in 0..budget.max_iters {
        if slacks.iter().all(|s| *s >= -1e-12) {
            return Ok(finish(cs, v, it));
        }
        if let Some(limit) = budget.max_time {
            if start.elapsed() > limit {
                return Ok(SolveResult::Failure {
                    best_residual: phi.sqrt(),
                    iterations: it,
                    reason: "time budget exhausted".into(),
                });
            }
        }
        // Gauss-Newton system restricted to the zero-sum subspace
        let mut jtj = DMatrix::<f64>::zeros(n, n);
        let mut jtt = DVector::<f64>::zeros(n);
        for (row, &s) in prob.rows.iter().zip(&slacks) {
            if s >= hold {
                continue;
            }
            prob.gradient(row, &v, &mut grad);
            // P g: remove the per-axis mean
            let mx = grad[..cs.n_x].iter().sum::<f64>() / n_x;
            let my = grad[cs.n_x..].iter().sum::<f64>() / n_y;
            for (i, g) in grad.iter_mut().enumerate() {
                *g -= if i < cs.n_x { mx } else { my };
            }
            let t = (-s).max(0.0);
            for i in 0..n {
                if grad[i] == 0.0 {
                    continue;
                }
                jtt[i] += grad[i] * t;
                for j in 0..n {
                    jtj[(i, j)] += grad[i] * grad[j];
                }
            }
        }
        let mut accepted = false;
        for _ in 0..8 {
            let mut h = jtj.clone();
            for i in 0..n {
                h[(i, i)] += mu;
            }
            let Some(chol) = h.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let d = chol.solve(&jtt);
            let mut alpha = 1.0;
            while alpha > 1e-3 {
                let mut cand: Vec<f64> = v.iter().zip(d.iter()).map(|(a, b)| a + alpha * b).collect();
                project(&mut cand, cs, lo);
                let cs_slacks = prob.slacks(&cand);
                let cphi = merit(&cs_slacks);
                if cphi < phi * (1.0 - 1e-4 * alpha) {
                    v = cand;
                    slacks = cs_slacks;
                    phi = cphi;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if accepted {
                mu = (mu * 0.1).max(1e-12);
                break;
            }
            mu *= 10.0;
        }
        if !accepted {
            return Ok(SolveResult::Failure {
                best_residual: phi.sqrt(),
                iterations: it + 1,
                reason: "no descent step found".into(),
            });
        }
    }
    if slacks.iter().all(|s| *s >= -1e-12) {
        return Ok(finish(cs, v, budget.max_iters));
    }
    Ok(SolveResult::Failure {
        best_residual: phi.sqrt(),
        iterations: budget.max_iters,
        reason: "iteration budget exhausted".into(),
    })
}

fn finish(cs: &ConstraintSet, v: Vec<f64>, iterations: usize) -> SolveResult {
    let (dx, dy) = v.split_at(cs.n_x);
    let residual = cs.max_violation(dx, dy);
    SolveResult::Solved {
        solution: GeometrySolution {
            dx: dx.to_vec(),
            dy: dy.to_vec(),
            residual,
        },
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::legalize::constraints::extract_constraints;
    use crate::legalize::NormalizedRules;
    use crate::topology::Topology;
    use proptest::prelude::*;

    fn rules(extent: f64) -> NormalizedRules {
        NormalizedRules {
            space_min: 4.0,
            width_min: 2.0,
            area_min: 0.0,
            area_max: 1e6,
            total_extent: extent,
            unit_scale: 1.0,
            lo: 1e-3,
            margin: 1e-4,
        }
    }

    fn solved(r: SolveResult) -> GeometrySolution {
        match r {
            SolveResult::Solved { solution, .. } => solution,
            other => panic!("expected a solution, got {other:?}"),
        }
    }

    #[test]
    fn two_bars_are_feasible_by_substitution() {
        let t = Topology::from_rows(&[[1u8, 0, 1]]).unwrap();
        let cs = extract_constraints(&t, &rules(30.0)).unwrap();
        // start from a point violating the space rule
        let init = GeometrySolution::rescaled(vec![10.0, 0.5, 10.0], vec![1.0], 30.0);
        let s = solved(solve(&cs, &init, Budget::default()).unwrap());
        assert!(s.dx[0] >= 2.0 && s.dx[2] >= 2.0 && s.dx[1] >= 4.0, "{s:?}");
        assert!((s.dx.iter().sum::<f64>() - 30.0).abs() < 1e-9);
        assert!(s.residual <= FEASIBILITY_TOL);
    }

    #[test]
    fn all_zero_returns_rescaled_init() {
        let t = Topology::zeros(3, 3);
        let cs = extract_constraints(&t, &rules(9.0)).unwrap();
        let init = GeometrySolution::rescaled(vec![1.0, 2.0, 3.0], vec![3.0, 3.0, 3.0], 9.0);
        let s = solved(solve(&cs, &init, Budget::default()).unwrap());
        for (a, b) in s.dx.iter().zip([1.5, 3.0, 4.5]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn overfull_row_fails_immediately() {
        let t = Topology::from_rows(&[[1u8, 0, 1]]).unwrap();
        let cs = extract_constraints(&t, &rules(7.5)).unwrap();
        let init = GeometrySolution::uniform(3, 1, 7.5);
        let r = solve(&cs, &init, Budget::default()).unwrap();
        assert!(matches!(r, SolveResult::Failure { iterations: 0, .. }));
    }

    #[test]
    fn area_bounds_are_met() {
        let t = Topology::from_rows(&[[0u8, 0, 0], [0, 1, 0], [0, 0, 0]]).unwrap();
        let mut r = rules(12.0);
        r.area_min = 30.0;
        r.area_max = 31.0;
        let cs = extract_constraints(&t, &r).unwrap();
        let init = GeometrySolution::uniform(3, 3, 12.0);
        let s = solved(solve(&cs, &init, Budget::default()).unwrap());
        let area = s.dx[1] * s.dy[1];
        assert!((30.0..=31.0).contains(&area), "{area}");
        assert!(s.residual <= FEASIBILITY_TOL);
    }

    #[test]
    fn rejects_non_positive_init() {
        let t = Topology::zeros(1, 2);
        let cs = extract_constraints(&t, &rules(2.0)).unwrap();
        let init = GeometrySolution {
            dx: vec![2.0, 0.0],
            dy: vec![2.0],
            residual: 0.0,
        };
        assert!(solve(&cs, &init, Budget::default()).is_err());
    }

    #[test]
    fn projection_hits_bounds_and_sum() {
        let mut v = vec![5.0, -1.0, 0.2, 3.0];
        project_capped_simplex(&mut v, 0.5, 6.0);
        assert!((v.iter().sum::<f64>() - 6.0).abs() < 1e-12);
        assert!(v.iter().all(|x| *x >= 0.5));
        // already feasible points are fixed
        let mut w = vec![1.0, 2.0, 3.0];
        project_capped_simplex(&mut w, 0.5, 6.0);
        assert_eq!(w, vec![1.0, 2.0, 3.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn success_means_every_constraint_holds(
            cells in proptest::collection::vec(0u8..=1, 36),
            seed in any::<u64>(),
        ) {
            let t = Topology::from_cells(6, 6, cells).unwrap();
            prop_assume!(crate::drc::prefilter(&t));
            let mut r = rules(40.0);
            r.space_min = 1.5;
            r.width_min = 1.0;
            r.area_min = 2.0;
            r.area_max = 200.0;
            let cs = extract_constraints(&t, &r).unwrap();
            let mut rng = crate::rng::seeded(seed);
            let init = crate::legalize::init_random(&cs, &mut rng);
            if let SolveResult::Solved { solution, .. } = solve(&cs, &init, Budget::default()).unwrap() {
                prop_assert!(cs.max_violation(&solution.dx, &solution.dy) <= FEASIBILITY_TOL);
                prop_assert!(solution.dx.iter().chain(&solution.dy).all(|d| *d > 0.0));
            }
        }
    }
}
