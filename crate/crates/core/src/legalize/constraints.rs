// SPDX-License-Identifier: Apache-2.0

//! Constraint extraction from a topology matrix.
//!
//! Row runs constrain sums of `dx`, column runs sums of `dy`. Every
//! maximal run of 1s gives a width constraint, every run of 0s with a 1-run
//! on both sides a space constraint. Each 4-connected component gets one
//! area constraint `sum_{(i,j)} dx_j * dy_i`.

use serde::{Deserialize, Serialize};

use super::NormalizedRules;
use crate::drc;
use crate::error::Result;
use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangeKind {
    Width,
    Space,
}

/// `sum_{i=a..=b} delta_i >= min` along `axis`, from row or column `line`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeConstraint {
    pub kind: RangeKind,
    pub axis: Axis,
    pub line: usize,
    pub a: usize,
    pub b: usize,
    pub min: f64,
}

/// One polygon: its cells `(row, col)` and the area interval.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaConstraint {
    pub cells: Vec<(usize, usize)>,
    pub min: f64,
    pub max: f64,
}

impl AreaConstraint {
    pub fn area(&self, dx: &[f64], dy: &[f64]) -> f64 {
        self.cells.iter().map(|&(i, j)| dx[j] * dy[i]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub n_x: usize,
    pub n_y: usize,
    pub set_s: Vec<RangeConstraint>,
    pub set_w: Vec<RangeConstraint>,
    pub polygons: Vec<AreaConstraint>,
    /// Lower bound on every interval.
    pub lo: f64,
    /// Required value of `sum dx` and of `sum dy`.
    pub total_extent: f64,
    /// Slack the solver keeps on every inequality.
    pub margin: f64,
}

impl ConstraintSet {
    pub fn ranges(&self) -> impl Iterator<Item = &RangeConstraint> {
        self.set_w.iter().chain(&self.set_s)
    }

    /// Largest violation of any constraint by `(dx, dy)`, sums included.
    pub fn max_violation(&self, dx: &[f64], dy: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for r in self.ranges() {
            let v = match r.axis {
                Axis::X => dx,
                Axis::Y => dy,
            };
            let s: f64 = v[r.a..=r.b].iter().sum();
            worst = worst.max(r.min - s);
        }
        for p in &self.polygons {
            let a = p.area(dx, dy);
            worst = worst.max(p.min - a).max(a - p.max);
        }
        for &d in dx.iter().chain(dy) {
            worst = worst.max(self.lo - d);
        }
        worst = worst.max((dx.iter().sum::<f64>() - self.total_extent).abs());
        worst = worst.max((dy.iter().sum::<f64>() - self.total_extent).abs());
        worst
    }

    /// Cheap infeasibility test: along some row or column the lower bounds
    /// of a disjoint cover of the line already exceed the extent.
    pub fn infeasible_by_counting(&self) -> Option<String> {
        for (axis, n) in [(Axis::X, self.n_x), (Axis::Y, self.n_y)] {
            let mut lines: std::collections::BTreeMap<usize, Vec<&RangeConstraint>> =
                Default::default();
            for r in self.ranges().filter(|r| r.axis == axis) {
                lines.entry(r.line).or_default().push(r);
            }
            for (line, runs) in lines {
                let covered: usize = runs.iter().map(|r| r.b - r.a + 1).sum();
                let need: f64 = runs.iter().map(|r| r.min.max(self.lo * (r.b - r.a + 1) as f64)).sum::<f64>()
                    + (n - covered) as f64 * self.lo;
                if need > self.total_extent {
                    let name = if axis == Axis::X { "row" } else { "column" };
                    return Some(format!(
                        "{name} {line} needs {need} units, extent is {}",
                        self.total_extent
                    ));
                }
            }
        }
        if self.lo * self.n_x.max(self.n_y) as f64 > self.total_extent {
            return Some("interval lower bounds exceed the extent".into());
        }
        None
    }
}

/// Extracts the constraint system of `topo` under `rules`.
pub fn extract_constraints(topo: &Topology, rules: &NormalizedRules) -> Result<ConstraintSet> {
    drc::Prefilter::default().check(topo)?;
    Ok(extract_unchecked(topo, rules, false))
}

/// Extraction without the pre-filter. With `open_border`, polygons touching
/// the matrix border are treated as truncated and get no lower area bound.
pub(crate) fn extract_unchecked(
    topo: &Topology,
    rules: &NormalizedRules,
    open_border: bool,
) -> ConstraintSet {
    let mut set_s = Vec::new();
    let mut set_w = Vec::new();
    for r in 0..topo.rows() {
        line_runs(topo.row(r), Axis::X, r, rules, &mut set_w, &mut set_s);
    }
    for c in 0..topo.cols() {
        line_runs(&topo.column(c), Axis::Y, c, rules, &mut set_w, &mut set_s);
    }
    let polygons = topo
        .components()
        .into_iter()
        .map(|cells| {
            let touches = cells
                .iter()
                .any(|&(i, j)| i == 0 || j == 0 || i + 1 == topo.rows() || j + 1 == topo.cols());
            AreaConstraint {
                min: if open_border && touches { 0.0 } else { rules.area_min },
                max: rules.area_max,
                cells,
            }
        })
        .collect();
    ConstraintSet {
        n_x: topo.cols(),
        n_y: topo.rows(),
        set_s,
        set_w,
        polygons,
        lo: rules.lo,
        total_extent: rules.total_extent,
        margin: rules.margin,
    }
}

fn line_runs(
    cells: &[u8],
    axis: Axis,
    line: usize,
    rules: &NormalizedRules,
    set_w: &mut Vec<RangeConstraint>,
    set_s: &mut Vec<RangeConstraint>,
) {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=cells.len() {
        if i == cells.len() || cells[i] != cells[start] {
            runs.push((cells[start], start, i - 1));
            start = i;
        }
    }
    for (idx, &(v, a, b)) in runs.iter().enumerate() {
        if v == 1 {
            set_w.push(RangeConstraint {
                kind: RangeKind::Width,
                axis,
                line,
                a,
                b,
                min: rules.width_min,
            });
        } else if idx > 0 && idx + 1 < runs.len() {
            set_s.push(RangeConstraint {
                kind: RangeKind::Space,
                axis,
                line,
                a,
                b,
                min: rules.space_min,
            });
        }
    }
}
