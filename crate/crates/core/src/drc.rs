// SPDX-License-Identifier: Apache-2.0

//! Design-rule checking on decoded layouts, and the topology pre-filter.
//!
//! The checker works from the layout alone: it re-encodes the polygons on
//! their own scan-line grid and measures runs in nanometres. It shares no
//! constraint objects with the legalizer.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{encode_squish, Layout};
use crate::legalize::DesignRules;
use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Space,
    Width,
    Area,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub rule: Rule,
    pub location: String,
    pub measured: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DrcReport {
    pub violations: Vec<Violation>,
    pub clean: bool,
}

impl DrcReport {
    /// One JSON object per violation, newline-terminated.
    pub fn to_json_lines(&self) -> String {
        let mut s = String::new();
        for v in &self.violations {
            s.push_str(&serde_json::to_string(v).expect("violation serializes"));
            s.push('\n');
        }
        s
    }
}

/// Checks space, width and area rules. Space is measured only between
/// distinct polygons, along rows and columns of the scan-line grid.
pub fn check(layout: &Layout, rules: &DesignRules) -> DrcReport {
    let mut violations = Vec::new();
    let sq = match encode_squish(layout) {
        Ok(sq) => sq,
        Err(e) => {
            // an invalid layout cannot be measured; report it as one violation
            violations.push(Violation {
                rule: Rule::Width,
                location: format!("layout: {e}"),
                measured: 0.0,
                bound: rules.width_min,
            });
            return DrcReport {
                violations,
                clean: false,
            };
        }
    };
    let topo = &sq.topology;
    let xs = prefix(&sq.dx);
    let ys = prefix(&sq.dy);
    let comps = topo.components();
    let mut label = vec![usize::MAX; topo.rows() * topo.cols()];
    for (id, comp) in comps.iter().enumerate() {
        for &(r, c) in comp {
            label[r * topo.cols() + c] = id;
        }
    }
    let lab = |r: usize, c: usize| label[r * topo.cols() + c];

    for r in 0..topo.rows() {
        let cells: Vec<usize> = (0..topo.cols()).map(|c| lab(r, c)).collect();
        let where_ = |a: usize, b: usize| {
            format!("y=[{},{}] x=[{},{}]", ys[r], ys[r + 1], xs[a], xs[b + 1])
        };
        scan_line(&cells, &xs, rules, &where_, &mut violations);
    }
    for c in 0..topo.cols() {
        let cells: Vec<usize> = (0..topo.rows()).map(|r| lab(r, c)).collect();
        let where_ = |a: usize, b: usize| {
            format!("x=[{},{}] y=[{},{}]", xs[c], xs[c + 1], ys[a], ys[b + 1])
        };
        scan_line(&cells, &ys, rules, &where_, &mut violations);
    }
    for comp in &comps {
        let area: i64 = comp
            .iter()
            .map(|&(r, c)| (xs[c + 1] - xs[c]) * (ys[r + 1] - ys[r]))
            .sum();
        let a = area as f64;
        if a < rules.area_min || a > rules.area_max {
            let (r, c) = comp[0];
            violations.push(Violation {
                rule: Rule::Area,
                location: format!("polygon containing ({},{})", xs[c], ys[r]),
                measured: a,
                bound: if a < rules.area_min { rules.area_min } else { rules.area_max },
            });
        }
    }
    DrcReport {
        clean: violations.is_empty(),
        violations,
    }
}

fn prefix(d: &[f64]) -> Vec<i64> {
    let mut out = vec![0i64];
    let mut acc = 0i64;
    for v in d {
        acc += *v as i64;
        out.push(acc);
    }
    out
}

// `cells` holds component labels along one line, usize::MAX for empty
fn scan_line(
    cells: &[usize],
    pos: &[i64],
    rules: &DesignRules,
    where_: &dyn Fn(usize, usize) -> String,
    out: &mut Vec<Violation>,
) {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=cells.len() {
        let filled = |k: usize| cells[k] != usize::MAX;
        if i == cells.len() || filled(i) != filled(start) {
            runs.push((start, i - 1));
            start = i;
        }
    }
    for (idx, &(a, b)) in runs.iter().enumerate() {
        let len = (pos[b + 1] - pos[a]) as f64;
        if cells[a] != usize::MAX {
            if len < rules.width_min {
                out.push(Violation {
                    rule: Rule::Width,
                    location: where_(a, b),
                    measured: len,
                    bound: rules.width_min,
                });
            }
        } else if idx > 0 && idx + 1 < runs.len() {
            let left = cells[a - 1];
            let right = cells[b + 1];
            if left != right && len < rules.space_min {
                out.push(Violation {
                    rule: Rule::Space,
                    location: where_(a, b),
                    measured: len,
                    bound: rules.space_min,
                });
            }
        }
    }
}

/// A named predicate that rejects invalid topologies; returns a reason.
pub type TopologyRule = fn(&Topology) -> Option<String>;

/// Ordered list of rejection rules; the default holds only the bow-tie rule.
#[derive(Clone)]
pub struct Prefilter {
    rules: Vec<(&'static str, TopologyRule)>,
}

impl Default for Prefilter {
    fn default() -> Self {
        Prefilter {
            rules: vec![("bow-tie", bow_tie)],
        }
    }
}

impl Prefilter {
    pub fn empty() -> Self {
        Prefilter { rules: Vec::new() }
    }

    pub fn with_rule(mut self, name: &'static str, rule: TopologyRule) -> Self {
        self.rules.push((name, rule));
        self
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.rules.iter().map(|(n, _)| *n).collect()
    }

    pub fn check(&self, topo: &Topology) -> Result<()> {
        for (name, rule) in &self.rules {
            if let Some(reason) = rule(topo) {
                return Err(Error::Prefilter(format!("{name}: {reason}")));
            }
        }
        Ok(())
    }

    pub fn passes(&self, topo: &Topology) -> bool {
        self.check(topo).is_ok()
    }
}

/// Any 2x2 window equal to `[[1,0],[0,1]]` or `[[0,1],[1,0]]`.
pub fn bow_tie(topo: &Topology) -> Option<String> {
    for r in 0..topo.rows().saturating_sub(1) {
        for c in 0..topo.cols().saturating_sub(1) {
            let a = topo.get(r, c);
            let b = topo.get(r, c + 1);
            let d = topo.get(r + 1, c);
            let e = topo.get(r + 1, c + 1);
            if a == e && b == d && a != b {
                return Some(format!("corner contact at rows {r}-{}, cols {c}-{}", r + 1, c + 1));
            }
        }
    }
    None
}

/// Default pre-filter verdict.
pub fn prefilter(topo: &Topology) -> bool {
    Prefilter::default().passes(topo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rules() -> DesignRules {
        DesignRules {
            space_min: 50.0,
            width_min: 20.0,
            area_min: 100.0,
            area_max: 30000.0,
            extent_nm: 400,
        }
    }

    #[test]
    fn narrow_gap_is_one_space_violation() {
        let l = Layout::new(
            400,
            400,
            vec![Layout::rect(0, 0, 100, 100), Layout::rect(140, 0, 240, 100)],
        )
        .unwrap();
        let r = check(&l, &rules());
        assert_eq!(r.violations.len(), 1, "{:?}", r.violations);
        assert_eq!(r.violations[0].rule, Rule::Space);
        assert_eq!(r.violations[0].measured, 40.0);
        assert!(!r.clean);
    }

    #[test]
    fn single_rectangle_is_clean() {
        let l = Layout::new(400, 400, vec![Layout::rect(100, 100, 200, 250)]).unwrap();
        let r = check(&l, &rules());
        assert!(r.clean && r.violations.is_empty());
        assert_eq!(r.to_json_lines(), "");
    }

    #[test]
    fn area_one_over_the_bound() {
        let mut ru = rules();
        ru.area_max = 100.0 * 150.0 - 1.0;
        let l = Layout::new(400, 400, vec![Layout::rect(100, 100, 200, 250)]).unwrap();
        let r = check(&l, &ru);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].rule, Rule::Area);
        assert_eq!(r.violations[0].measured, 15000.0);
        let line = r.to_json_lines();
        assert!(line.starts_with("{\"rule\":\"area\""));
        assert!(line.ends_with("}\n"));
    }

    #[test]
    fn thin_bar_fails_width_in_every_row() {
        let l = Layout::new(400, 400, vec![Layout::rect(100, 100, 110, 300)]).unwrap();
        let r = check(&l, &rules());
        assert!(r.violations.iter().all(|v| v.rule == Rule::Width));
        assert_eq!(r.violations.len(), 1);
    }

    #[test]
    fn gap_inside_one_polygon_is_not_space() {
        // U shape: the notch is part of a single polygon
        let u = vec![[0, 0], [300, 0], [300, 200], [200, 200], [200, 100], [100, 100], [100, 200], [0, 200]];
        let l = Layout::new(400, 400, vec![u]).unwrap();
        let mut ru = rules();
        ru.space_min = 150.0;
        ru.area_max = 1e9;
        assert!(check(&l, &ru).clean);
    }

    #[test]
    fn invariant_under_translation_and_rotation() {
        let base = vec![Layout::rect(0, 0, 100, 100), Layout::rect(140, 0, 240, 100)];
        let moved: Vec<_> = base
            .iter()
            .map(|r| r.iter().map(|p| [p[0] + 60, p[1] + 150]).collect())
            .collect();
        let rotated: Vec<_> = base
            .iter()
            .map(|r| r.iter().map(|p| [400 - p[1], p[0]]).collect())
            .collect();
        let a = check(&Layout::new(400, 400, base).unwrap(), &rules());
        let b = check(&Layout::new(400, 400, moved).unwrap(), &rules());
        let c = check(&Layout::new(400, 400, rotated).unwrap(), &rules());
        assert_eq!(a.violations.len(), b.violations.len());
        assert_eq!(a.violations.len(), c.violations.len());
        assert_eq!(a.violations[0].measured, c.violations[0].measured);
    }

    #[test]
    fn prefilter_examples() {
        assert!(!prefilter(&Topology::from_rows(&[[1u8, 0], [0, 1]]).unwrap()));
        assert!(!prefilter(&Topology::from_rows(&[[0u8, 1], [1, 0]]).unwrap()));
        assert!(prefilter(&Topology::from_rows(&[[1u8, 1], [0, 1]]).unwrap()));
        assert!(prefilter(&Topology::ones(5, 5)));
    }

    #[test]
    fn prefilter_is_pluggable() {
        fn no_full_rows(t: &Topology) -> Option<String> {
            (0..t.rows())
                .any(|r| t.row(r).iter().all(|&v| v == 1))
                .then(|| "full row".to_string())
        }
        let p = Prefilter::default().with_rule("full-row", no_full_rows);
        assert_eq!(p.names(), vec!["bow-tie", "full-row"]);
        assert!(matches!(p.check(&Topology::ones(2, 2)), Err(Error::Prefilter(_))));
    }
}
