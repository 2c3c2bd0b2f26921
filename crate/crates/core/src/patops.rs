// SPDX-License-Identifier: Apache-2.0

//! Topology augmentation behind a legality gate, and library statistics.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drc::Prefilter;
use crate::error::{Error, Result};
use crate::geometry::{topology_complexity, Complexity, SquishPattern};
use crate::legalize::{solve_topology, DesignRules, LegalizeOptions};
use crate::rng::{self, PatRng};
use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub p_flip: f64,
    pub p_rotate: f64,
    pub p_mirror: f64,
    pub p_concat: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_flip: 0.5,
            p_rotate: 1.0,
            p_mirror: 0.5,
            p_concat: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_flip", self.p_flip),
            ("p_rotate", self.p_rotate),
            ("p_mirror", self.p_mirror),
            ("p_concat", self.p_concat),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Parameter(format!("{name} = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Mirror left-right (reverse column order).
pub fn flip_horizontal(t: &Topology) -> Topology {
    let mut out = Topology::zeros(t.rows(), t.cols());
    for r in 0..t.rows() {
        for c in 0..t.cols() {
            out.set(r, t.cols() - 1 - c, t.is_set(r, c));
        }
    }
    out
}

/// Mirror top-bottom (reverse row order).
pub fn flip_vertical(t: &Topology) -> Topology {
    flip_horizontal(&t.transpose()).transpose()
}

/// Counter-clockwise rotation by `quarter_turns * 90` degrees.
pub fn rotate(t: &Topology, quarter_turns: usize) -> Topology {
    let mut out = t.clone();
    for _ in 0..quarter_turns % 4 {
        // (r, c) -> (c, rows-1-r) is a quarter turn counter-clockwise with row 0 at the bottom
        let mut next = Topology::zeros(out.cols(), out.rows());
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                next.set(c, out.rows() - 1 - r, out.is_set(r, c));
            }
        }
        out = next;
    }
    out
}

/// `t` joined with its mirror image along the columns (`vertical_axis`) or
/// rows, cropped back to the original size around the seam.
pub fn symmetric_mirror(t: &Topology, vertical_axis: bool) -> Topology {
    if !vertical_axis {
        return symmetric_mirror(&t.transpose(), true).transpose();
    }
    let (rows, cols) = (t.rows(), t.cols());
    let m = flip_horizontal(t);
    let mut wide = Topology::zeros(rows, 2 * cols);
    for r in 0..rows {
        for c in 0..cols {
            wide.set(r, c, t.is_set(r, c));
            wide.set(r, cols + c, m.is_set(r, c));
        }
    }
    wide.window(0, cols / 2, rows, cols).expect("crop inside the doubled matrix")
}

/// 2x2 tile `[[t, p1], [p2, p3]]` (row 0 of `t` at the bottom left),
/// cropped to `t`'s size at offset `(r0, c0)`.
pub fn concat_crop(t: &Topology, partners: [&Topology; 3], r0: usize, c0: usize) -> Result<Topology> {
    let (n, m) = (t.rows(), t.cols());
    if partners.iter().any(|p| p.rows() != n || p.cols() != m) {
        return Err(Error::Size("concat partners must match the pattern size".into()));
    }
    if r0 > n || c0 > m {
        return Err(Error::Size(format!("crop offset ({r0},{c0}) outside {n}x{m}")));
    }
    let tiles = [t, partners[0], partners[1], partners[2]];
    let mut out = Topology::zeros(n, m);
    for r in 0..n {
        for c in 0..m {
            let (rr, cc) = (r + r0, c + c0);
            let tile = tiles[(rr / n) * 2 + cc / m];
            out.set(r, c, tile.is_set(rr % n, cc % m));
        }
    }
    Ok(out)
}

/// Candidate transforms of `t`. Each operation fires independently with its
/// probability and yields one candidate; when more than one fires, their
/// composition (in the order flip, rotate, mirror, concat) is added too.
pub fn candidates(
    t: &Topology,
    library: &[Topology],
    cfg: &AugmentConfig,
    rng: &mut PatRng,
) -> Result<Vec<Topology>> {
    cfg.validate()?;
    let mut ops: Vec<Box<dyn Fn(&Topology) -> Result<Topology>>> = Vec::new();
    if rng.gen::<f64>() < cfg.p_flip {
        let horizontal = rng.gen::<bool>();
        ops.push(Box::new(move |x| {
            Ok(if horizontal { flip_horizontal(x) } else { flip_vertical(x) })
        }));
    }
    if rng.gen::<f64>() < cfg.p_rotate && t.is_square() {
        let turns = rng.gen_range(1..=3);
        ops.push(Box::new(move |x| Ok(rotate(x, turns))));
    }
    if rng.gen::<f64>() < cfg.p_mirror {
        let vertical = rng.gen::<bool>();
        ops.push(Box::new(move |x| Ok(symmetric_mirror(x, vertical))));
    }
    if rng.gen::<f64>() < cfg.p_concat {
        let pool: Vec<&Topology> = library
            .iter()
            .filter(|p| p.rows() == t.rows() && p.cols() == t.cols())
            .collect();
        if !pool.is_empty() {
            let pick: Vec<Topology> = (0..3)
                .map(|_| pool[rng.gen_range(0..pool.len())].clone())
                .collect();
            let r0 = rng.gen_range(0..=t.rows());
            let c0 = rng.gen_range(0..=t.cols());
            ops.push(Box::new(move |x| {
                concat_crop(x, [&pick[0], &pick[1], &pick[2]], r0, c0)
            }));
        }
    }
    let mut out = Vec::with_capacity(ops.len() + 1);
    for op in &ops {
        out.push(op(t)?);
    }
    if ops.len() > 1 {
        let mut x = t.clone();
        for op in &ops {
            x = op(&x)?;
        }
        out.push(x);
    }
    Ok(out)
}

/// Gated augmentation: candidates that pass the pre-filter and for which
/// the legalizer finds a feasible geometry. Duplicates are dropped.
pub fn augment(
    t: &Topology,
    library: &[Topology],
    cfg: &AugmentConfig,
    rules: &DesignRules,
    opts: &LegalizeOptions,
    rng: &mut PatRng,
) -> Result<Vec<Topology>> {
    let prefilter = Prefilter::default();
    let mut seen = BTreeSet::new();
    let mut accepted = Vec::new();
    for cand in candidates(t, library, cfg, rng)? {
        if !prefilter.passes(&cand) || !cand.is_square() || seen.contains(&cand) {
            continue;
        }
        let norm = rules.normalized(cand.rows());
        let stats = solve_topology(&cand, &norm, opts, rng)?;
        if stats.solution.is_some() {
            seen.insert(cand.clone());
            accepted.push(cand);
        }
    }
    Ok(accepted)
}

/// Source library followed by every new gated survivor of `rounds` passes
/// of [`augment`]. Item `i` of a pass uses the random stream `seed + i`
/// (offset per round), so the result does not depend on `parallel`.
pub fn augment_library(
    library: &[Topology],
    cfg: &AugmentConfig,
    rules: &DesignRules,
    opts: &LegalizeOptions,
    rounds: usize,
    seed: u64,
    parallel: bool,
) -> Result<Vec<Topology>> {
    let mut out: Vec<Topology> = Vec::new();
    let mut seen = BTreeSet::new();
    for t in library {
        if seen.insert(t.clone()) {
            out.push(t.clone());
        }
    }
    for round in 0..rounds {
        let base = seed.wrapping_add((round as u64) << 32);
        let source = out.clone();
        let one = |i: usize| -> Result<Vec<Topology>> {
            let mut r = rng::stream(base, i as u64);
            augment(&source[i], &source, cfg, rules, opts, &mut r)
        };
        let results: Vec<Result<Vec<Topology>>> = if parallel {
            (0..source.len()).into_par_iter().map(one).collect()
        } else {
            (0..source.len()).map(one).collect()
        };
        for res in results {
            for t in res? {
                if seen.insert(t.clone()) {
                    out.push(t);
                }
            }
        }
    }
    Ok(out)
}

/// Complexity histogram and its entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct LibraryStats {
    pub histogram: BTreeMap<Complexity, usize>,
    pub diversity: f64,
}

impl LibraryStats {
    pub fn from_complexities(cs: impl IntoIterator<Item = Complexity>) -> Result<Self> {
        let mut histogram = BTreeMap::new();
        for c in cs {
            *histogram.entry(c).or_insert(0) += 1;
        }
        if histogram.is_empty() {
            return Err(Error::validation("library is empty"));
        }
        let diversity = entropy_bits(histogram.values().copied());
        Ok(LibraryStats { histogram, diversity })
    }

    pub fn size(&self) -> usize {
        self.histogram.values().sum()
    }

    /// Sum of two histograms.
    pub fn merge(&self, other: &LibraryStats) -> LibraryStats {
        let mut histogram = self.histogram.clone();
        for (k, v) in &other.histogram {
            *histogram.entry(*k).or_insert(0) += v;
        }
        let diversity = entropy_bits(histogram.values().copied());
        LibraryStats { histogram, diversity }
    }

    /// CSV with header `cx,cy,count`, bins in ascending order.
    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("cx,cy,count\n");
        for (k, v) in &self.histogram {
            s.push_str(&format!("{},{},{}\n", k.cx, k.cy, v));
        }
        s
    }

    /// `{"size": .., "diversity_bits": ..}`
    pub fn stats_json(&self) -> String {
        serde_json::json!({"size": self.size(), "diversity_bits": self.diversity}).to_string()
    }
}

/// Shannon entropy in bits of a histogram given by its counts.
pub fn entropy_bits(counts: impl IntoIterator<Item = usize>) -> f64 {
    let counts: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    let h: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / t;
            -p * p.log2()
        })
        .sum();
    // a single bin gives -1*log2(1) = -0.0
    h.max(0.0)
}

pub fn diversity(library: &[SquishPattern]) -> Result<f64> {
    complexity_histogram(library).map(|s| s.diversity)
}

pub fn complexity_histogram(library: &[SquishPattern]) -> Result<LibraryStats> {
    LibraryStats::from_complexities(library.iter().map(|sq| topology_complexity(&sq.topology)))
}

pub fn topology_stats(library: &[Topology]) -> Result<LibraryStats> {
    LibraryStats::from_complexities(library.iter().map(topology_complexity))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn t(rows: &[&str]) -> Topology {
        let r: Vec<Vec<u8>> = rows
            .iter()
            .map(|s| s.bytes().map(|b| b - b'0').collect())
            .collect();
        Topology::from_rows(&r).unwrap()
    }

    #[test]
    fn symmetric_pattern_survives_half_turn() {
        let s = t(&["0000", "0110", "0110", "0000"]);
        assert_eq!(rotate(&s, 2), s);
    }

    #[test]
    fn quarter_turn_moves_corner() {
        let a = t(&["100", "000", "000"]);
        // bottom-left goes to bottom-right under a counter-clockwise turn
        assert_eq!(rotate(&a, 1), t(&["001", "000", "000"]));
        assert_eq!(rotate(&a, 4), a);
    }

    #[test]
    fn mirror_crop_is_symmetric() {
        let a = t(&["1100", "1000", "0000", "0000"]);
        let m = symmetric_mirror(&a, true);
        assert_eq!(m, flip_horizontal(&m));
        assert_eq!(m.rows(), 4);
        let v = symmetric_mirror(&a, false);
        assert_eq!(v, flip_vertical(&v));
    }

    #[test]
    fn concat_crop_offsets() {
        let a = t(&["11", "00"]);
        let b = t(&["10", "00"]);
        let z = Topology::zeros(2, 2);
        assert_eq!(concat_crop(&a, [&b, &z, &z], 0, 0).unwrap(), a);
        assert_eq!(concat_crop(&a, [&b, &z, &z], 0, 2).unwrap(), b);
        assert_eq!(concat_crop(&a, [&b, &z, &z], 0, 1).unwrap(), t(&["11", "00"]));
        assert_eq!(concat_crop(&a, [&z, &b, &z], 1, 0).unwrap(), t(&["00", "10"]));
    }

    #[test]
    fn seam_bow_tie_is_rejected_by_gate() {
        // corner of `a` meets corner of `b` diagonally across the seam
        let a = t(&["000", "000", "001"]);
        let b = t(&["100", "000", "000"]);
        let z = Topology::zeros(3, 3);
        let crop = concat_crop(&a, [&z, &z, &b], 1, 1).unwrap();
        assert!(!crate::drc::prefilter(&crop));
        let cfg = AugmentConfig {
            p_flip: 0.0,
            p_rotate: 0.0,
            p_mirror: 0.0,
            p_concat: 1.0,
        };
        let rules = DesignRules {
            space_min: 10.0,
            width_min: 10.0,
            area_min: 0.0,
            area_max: 1e9,
            extent_nm: 300,
        };
        // only partners of shape `b` and `z`; every seam crop containing both
        // corners is a bow-tie and must not come back
        for seed in 0..50 {
            let out = augment(&a, &[b.clone(), z.clone()], &cfg, &rules, &LegalizeOptions::default(), &mut seeded(seed)).unwrap();
            assert!(out.iter().all(crate::drc::prefilter));
            assert!(!out.contains(&crop));
        }
    }

    #[test]
    fn entropy_examples() {
        let c = |cx, cy| Complexity { cx, cy };
        assert_eq!(LibraryStats::from_complexities(vec![c(2, 2); 5]).unwrap().diversity, 0.0);
        let four = LibraryStats::from_complexities(vec![c(1, 1), c(1, 2), c(2, 1), c(3, 3)]).unwrap();
        assert_eq!(four.diversity, 2.0);
        assert!(LibraryStats::from_complexities(vec![]).is_err());
        assert_eq!(four.histogram_csv().lines().next(), Some("cx,cy,count"));
        assert_eq!(four.stats_json(), r#"{"diversity_bits":2.0,"size":4}"#);
    }

    #[test]
    fn merge_sums_counts() {
        let c = |cx, cy| Complexity { cx, cy };
        let a = LibraryStats::from_complexities(vec![c(1, 1)]).unwrap();
        let b = LibraryStats::from_complexities(vec![c(1, 1), c(2, 2)]).unwrap();
        let m = a.merge(&b);
        assert_eq!(m.size(), 3);
        assert_eq!(m.histogram[&c(1, 1)], 2);
    }

    fn square(n: usize) -> impl Strategy<Value = Topology> {
        proptest::collection::vec(0u8..=1, n * n)
            .prop_map(move |cells| Topology::from_cells(n, n, cells).unwrap())
    }

    proptest! {
        #[test]
        fn flips_are_involutions(a in square(5)) {
            prop_assert_eq!(flip_horizontal(&flip_horizontal(&a)), a.clone());
            prop_assert_eq!(flip_vertical(&flip_vertical(&a)), a.clone());
            prop_assert_eq!(rotate(&rotate(&a, 1), 3), a);
        }

        #[test]
        fn ops_preserve_size_and_ones_count(a in square(6), seed in any::<u64>()) {
            let lib = vec![a.clone()];
            for c in candidates(&a, &lib, &AugmentConfig::default(), &mut seeded(seed)).unwrap() {
                prop_assert_eq!((c.rows(), c.cols()), (6, 6));
            }
            prop_assert_eq!(rotate(&a, 1).count_ones(), a.count_ones());
        }

        #[test]
        fn entropy_bounded_by_occupied_bins(counts in proptest::collection::vec(1usize..50, 1..20)) {
            let h = entropy_bits(counts.iter().copied());
            prop_assert!(h >= 0.0);
            prop_assert!(h <= (counts.len() as f64).log2() + 1e-12);
            let mut rev = counts.clone();
            rev.reverse();
            prop_assert!((entropy_bits(rev) - h).abs() < 1e-12);
        }
    }
}
