// SPDX-License-Identifier: Apache-2.0

//! Layout data model and the squish encoding.
//!
//! A [`Layout`] is a set of rectilinear polygons with integer nanometre
//! coordinates. Scan lines through every vertical and horizontal edge cut
//! the extent into a grid; the squish form records which grid cells are
//! covered ([`Topology`]) together with the widths of the grid columns
//! (`dx`) and the heights of the grid rows (`dy`).
//!
//! Layout JSON:
//!
//! ```json
//! {"units":"nm","extent":[2048,2048],"polygons":[[[500,600],[900,600],[900,1100],[500,1100]]]}
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::Topology;

/// Vertex in integer nanometres.
pub type Point = [i64; 2];

/// Closed rectilinear ring; the closing edge from the last vertex back to
/// the first is implicit.
pub type Ring = Vec<Point>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub extent_w: i64,
    pub extent_h: i64,
    pub polygons: Vec<Ring>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutFile {
    units: String,
    extent: [i64; 2],
    polygons: Vec<Ring>,
}

impl Layout {
    pub fn new(extent_w: i64, extent_h: i64, polygons: Vec<Ring>) -> Result<Self> {
        let layout = Layout {
            extent_w,
            extent_h,
            polygons,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn empty(extent_w: i64, extent_h: i64) -> Self {
        Layout {
            extent_w,
            extent_h,
            polygons: Vec::new(),
        }
    }

    /// Axis-aligned rectangle ring, counter-clockwise from the lower-left corner.
    pub fn rect(x0: i64, y0: i64, x1: i64, y1: i64) -> Ring {
        vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: LayoutFile = serde_json::from_str(text)?;
        if file.units != "nm" {
            return Err(Error::validation(format!(
                "unsupported units `{}`, expected `nm`",
                file.units
            )));
        }
        Layout::new(file.extent[0], file.extent[1], file.polygons)
    }

    pub fn to_json(&self) -> String {
        let file = LayoutFile {
            units: "nm".into(),
            extent: [self.extent_w, self.extent_h],
            polygons: self.polygons.clone(),
        };
        serde_json::to_string(&file).expect("layout serialization is infallible")
    }

    /// Checks every structural invariant: vertices inside the extent,
    /// alternating axis-aligned edges, simple rings, disjoint interiors.
    pub fn validate(&self) -> Result<()> {
        if self.extent_w <= 0 || self.extent_h <= 0 {
            return Err(Error::validation(format!(
                "extent must be positive, got {}x{}",
                self.extent_w, self.extent_h
            )));
        }
        for (p, ring) in self.polygons.iter().enumerate() {
            validate_ring(p, ring, self.extent_w, self.extent_h)?;
        }
        let (xs, ys) = self.scan_lines();
        let cover = self.coverage(&xs, &ys);
        if let Some(pos) = cover.iter().position(|&c| c > 1) {
            let cols = xs.len() - 1;
            let (r, c) = (pos / cols, pos % cols);
            return Err(Error::validation(format!(
                "polygon interiors overlap in cell x=[{},{}] y=[{},{}]",
                xs[c],
                xs[c + 1],
                ys[r],
                ys[r + 1]
            )));
        }
        Ok(())
    }

    fn scan_lines(&self) -> (Vec<i64>, Vec<i64>) {
        let mut xs = vec![0, self.extent_w];
        let mut ys = vec![0, self.extent_h];
        for ring in &self.polygons {
            for v in ring {
                xs.push(v[0]);
                ys.push(v[1]);
            }
        }
        xs.sort_unstable();
        xs.dedup();
        ys.sort_unstable();
        ys.dedup();
        (xs, ys)
    }

    /// Number of polygons covering each grid cell (row-major), by even-odd
    /// crossing at the cell centre. Centres never lie on an edge, so the
    /// count is exact.
    fn coverage(&self, xs: &[i64], ys: &[i64]) -> Vec<u32> {
        let cols = xs.len() - 1;
        let rows = ys.len() - 1;
        let mut cover = vec![0u32; rows * cols];
        let mut crossings = Vec::new();
        for ring in &self.polygons {
            let n = ring.len();
            for r in 0..rows {
                let cy2 = ys[r] + ys[r + 1];
                crossings.clear();
                for i in 0..n {
                    let (a, b) = (ring[i], ring[(i + 1) % n]);
                    if a[0] == b[0] {
                        let (lo, hi) = (a[1].min(b[1]), a[1].max(b[1]));
                        if 2 * lo < cy2 && cy2 < 2 * hi {
                            crossings.push(a[0]);
                        }
                    }
                }
                crossings.sort_unstable();
                for pair in crossings.chunks_exact(2) {
                    let c0 = xs.partition_point(|&x| x < pair[0]);
                    let c1 = xs.partition_point(|&x| x < pair[1]);
                    for c in c0..c1 {
                        cover[r * cols + c] += 1;
                    }
                }
            }
        }
        cover
    }
}

fn validate_ring(p: usize, ring: &Ring, w: i64, h: i64) -> Result<()> {
    let n = ring.len();
    if n < 4 {
        return Err(Error::validation(format!(
            "polygon {p}: needs at least 4 vertices, has {n}"
        )));
    }
    for (i, v) in ring.iter().enumerate() {
        if v[0] < 0 || v[0] > w || v[1] < 0 || v[1] > h {
            return Err(Error::validation(format!(
                "polygon {p}: vertex {i} ({}, {}) outside extent {w}x{h}",
                v[0], v[1]
            )));
        }
    }
    // 0 = horizontal, 1 = vertical
    let mut dirs = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        let dir = match (a[0] == b[0], a[1] == b[1]) {
            (true, true) => {
                return Err(Error::validation(format!(
                    "polygon {p}: zero-length edge at vertex {i}"
                )))
            }
            (false, true) => 0,
            (true, false) => 1,
            (false, false) => {
                return Err(Error::validation(format!(
                    "polygon {p}: edge from vertex {i} is not axis-aligned"
                )))
            }
        };
        dirs.push(dir);
    }
    for i in 0..n {
        if dirs[i] == dirs[(i + 1) % n] {
            return Err(Error::validation(format!(
                "polygon {p}: edges at vertex {} do not alternate horizontal/vertical",
                (i + 1) % n
            )));
        }
    }
    for i in 0..n {
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (a0, a1) = (ring[i], ring[(i + 1) % n]);
            let (b0, b1) = (ring[j], ring[(j + 1) % n]);
            let overlap_x = a0[0].min(a1[0]).max(b0[0].min(b1[0]))
                <= a0[0].max(a1[0]).min(b0[0].max(b1[0]));
            let overlap_y = a0[1].min(a1[1]).max(b0[1].min(b1[1]))
                <= a0[1].max(a1[1]).min(b0[1].max(b1[1]));
            if overlap_x && overlap_y {
                return Err(Error::validation(format!(
                    "polygon {p}: self-intersection between edges at vertices {i} and {j}"
                )));
            }
        }
    }
    Ok(())
}

/// Scan-line coordinates of a layout: every distinct vertical-edge x (and
/// horizontal-edge y) together with the extent boundaries.
pub fn extract_scanlines(layout: &Layout) -> Result<(Vec<i64>, Vec<i64>)> {
    layout.validate()?;
    Ok(layout.scan_lines())
}

/// Squish pattern: topology plus interval vectors.
///
/// `dx[j]` is the width of column `j` and `dy[i]` the height of row `i`,
/// both in units of `unit_scale` nanometres.
#[derive(Debug, Clone, PartialEq)]
pub struct SquishPattern {
    pub topology: Topology,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    pub unit_scale: f64,
}

impl SquishPattern {
    pub fn new(topology: Topology, dx: Vec<f64>, dy: Vec<f64>, unit_scale: f64) -> Result<Self> {
        let sq = SquishPattern {
            topology,
            dx,
            dy,
            unit_scale,
        };
        sq.validate()?;
        Ok(sq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dx.len() != self.topology.cols() || self.dy.len() != self.topology.rows() {
            return Err(Error::Size(format!(
                "interval vectors {}x{} do not match topology {}x{}",
                self.dy.len(),
                self.dx.len(),
                self.topology.rows(),
                self.topology.cols()
            )));
        }
        for (axis, v) in [("dx", &self.dx), ("dy", &self.dy)] {
            if let Some((i, d)) = v.iter().enumerate().find(|(_, d)| !(**d > 0.0 && d.is_finite())) {
                return Err(Error::validation(format!(
                    "{axis}[{i}] = {d} must be strictly positive"
                )));
            }
        }
        if !(self.unit_scale > 0.0 && self.unit_scale.is_finite()) {
            return Err(Error::validation(format!(
                "unit_scale {} must be positive",
                self.unit_scale
            )));
        }
        Ok(())
    }

    /// Drops every scan line whose two neighbouring columns (rows) are
    /// identical; no polygon edge can lie on such a line.
    pub fn canonicalize(&self) -> SquishPattern {
        let (topo, dx) = merge_columns(&self.topology, &self.dx);
        let (topo_t, dy) = merge_columns(&topo.transpose(), &self.dy);
        SquishPattern {
            topology: topo_t.transpose(),
            dx,
            dy,
            unit_scale: self.unit_scale,
        }
    }

    /// Deltas CSV: header `axis,index,delta`, then one row per x interval,
    /// one per y interval, and a final `scale,0,<unit_scale>` row.
    pub fn deltas_csv(&self) -> String {
        let mut s = String::from("axis,index,delta\n");
        for (i, d) in self.dx.iter().enumerate() {
            let _ = writeln!(s, "x,{i},{d}");
        }
        for (i, d) in self.dy.iter().enumerate() {
            let _ = writeln!(s, "y,{i},{d}");
        }
        let _ = writeln!(s, "scale,0,{}", self.unit_scale);
        s
    }

    /// Parses a deltas CSV, returning `(dx, dy, unit_scale)`.
    pub fn parse_deltas_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "axis,index,delta")) => {}
            _ => return Err(Error::Format("line 1: expected header `axis,index,delta`".into())),
        }
        let (mut dx, mut dy, mut scale) = (Vec::new(), Vec::new(), None);
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Format(format!("line {}: malformed row `{line}`", lineno + 1));
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(bad());
            }
            let idx: usize = parts[1].parse().map_err(|_| bad())?;
            let val: f64 = parts[2].parse().map_err(|_| bad())?;
            let target = match parts[0] {
                "x" => &mut dx,
                "y" => &mut dy,
                "scale" => {
                    scale = Some(val);
                    continue;
                }
                _ => return Err(bad()),
            };
            if idx != target.len() {
                return Err(Error::Format(format!(
                    "line {}: index {idx} out of order",
                    lineno + 1
                )));
            }
            target.push(val);
        }
        Ok((dx, dy, scale.unwrap_or(1.0)))
    }
}

fn merge_columns(topo: &Topology, dx: &[f64]) -> (Topology, Vec<f64>) {
    let mut keep_cols: Vec<usize> = vec![0];
    let mut widths = vec![dx[0]];
    for c in 1..topo.cols() {
        let last = *keep_cols.last().unwrap();
        if (0..topo.rows()).all(|r| topo.get(r, c) == topo.get(r, last)) {
            *widths.last_mut().unwrap() += dx[c];
        } else {
            keep_cols.push(c);
            widths.push(dx[c]);
        }
    }
    let mut cells = Vec::with_capacity(topo.rows() * keep_cols.len());
    for r in 0..topo.rows() {
        for &c in &keep_cols {
            cells.push(topo.get(r, c));
        }
    }
    let merged = Topology::from_cells(topo.rows(), keep_cols.len(), cells)
        .expect("merged topology keeps binary cells");
    (merged, widths)
}

/// Encodes a layout on its own scan-line grid. Intervals are in nanometres
/// (`unit_scale = 1`).
pub fn encode_squish(layout: &Layout) -> Result<SquishPattern> {
    let (xs, ys) = extract_scanlines(layout)?;
    let cover = layout.coverage(&xs, &ys);
    let cols = xs.len() - 1;
    let rows = ys.len() - 1;
    let cells = cover.iter().map(|&c| (c > 0) as u8).collect();
    let topology = Topology::from_cells(rows, cols, cells)?;
    let dx = xs.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    let dy = ys.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    SquishPattern::new(topology, dx, dy, 1.0)
}

/// Scan-line positions in nm: rounded cumulative sums of the intervals.
fn positions_nm(deltas: &[f64], scale: f64, axis: &str) -> Result<Vec<i64>> {
    let mut out = Vec::with_capacity(deltas.len() + 1);
    out.push(0i64);
    let mut acc = 0.0;
    for (i, d) in deltas.iter().enumerate() {
        acc += d;
        let pos = (acc * scale).round() as i64;
        if pos <= *out.last().unwrap() {
            return Err(Error::validation(format!(
                "{axis}[{i}] collapses to zero width at {scale} nm/unit"
            )));
        }
        out.push(pos);
    }
    Ok(out)
}

/// Rebuilds the polygons of a squish pattern.
///
/// Each 4-connected component of 1-cells becomes one ring. Components that
/// enclose a hole, or that touch themselves at a single corner, are cut
/// along grid columns into pieces that can each be bounded by one simple
/// ring; the pieces share edges, so the covered point set is unchanged.
pub fn decode_squish(sq: &SquishPattern) -> Result<Layout> {
    sq.validate()?;
    let xs = positions_nm(&sq.dx, sq.unit_scale, "dx")?;
    let ys = positions_nm(&sq.dy, sq.unit_scale, "dy")?;
    let mut polygons = Vec::new();
    for comp in sq.topology.components() {
        for piece in simple_pieces(comp) {
            polygons.push(trace_ring(&piece, &xs, &ys));
        }
    }
    Ok(Layout {
        extent_w: *xs.last().unwrap(),
        extent_h: *ys.last().unwrap(),
        polygons,
    })
}

type Cells = Vec<(usize, usize)>;

fn simple_pieces(comp: Cells) -> Vec<Cells> {
    let mut out = Vec::new();
    let mut work = vec![comp];
    while let Some(piece) = work.pop() {
        match find_cut(&piece) {
            None => out.push(piece),
            Some(cut) => {
                let (left, right): (Cells, Cells) = piece.into_iter().partition(|&(_, c)| c < cut);
                for part in [left, right] {
                    work.extend(connected_parts(part));
                }
            }
        }
    }
    out.sort_unstable_by_key(|p| p[0]);
    out
}

fn connected_parts(cells: Cells) -> Vec<Cells> {
    let Some(bbox) = bounding_box(&cells) else {
        return Vec::new();
    };
    let local = LocalGrid::new(&cells, bbox);
    let topo = Topology::from_cells(local.h, local.w, local.mask.clone())
        .expect("local mask is binary");
    topo.components()
        .into_iter()
        .map(|comp| {
            comp.into_iter()
                .map(|(r, c)| (r + bbox.0, c + bbox.1))
                .collect()
        })
        .collect()
}

fn bounding_box(cells: &Cells) -> Option<(usize, usize, usize, usize)> {
    let r0 = cells.iter().map(|c| c.0).min()?;
    let c0 = cells.iter().map(|c| c.1).min()?;
    let r1 = cells.iter().map(|c| c.0).max()?;
    let c1 = cells.iter().map(|c| c.1).max()?;
    Some((r0, c0, r1, c1))
}

/// Membership mask of a cell set over its bounding box.
struct LocalGrid {
    h: usize,
    w: usize,
    mask: Vec<u8>,
}

impl LocalGrid {
    fn new(cells: &Cells, (r0, c0, r1, c1): (usize, usize, usize, usize)) -> Self {
        let (h, w) = (r1 - r0 + 1, c1 - c0 + 1);
        let mut mask = vec![0u8; h * w];
        for &(r, c) in cells {
            mask[(r - r0) * w + (c - c0)] = 1;
        }
        LocalGrid { h, w, mask }
    }

    fn at(&self, r: isize, c: isize) -> bool {
        r >= 0
            && c >= 0
            && (r as usize) < self.h
            && (c as usize) < self.w
            && self.mask[r as usize * self.w + c as usize] == 1
    }
}

/// Column index `k` such that splitting the piece into columns `< k` and
/// `>= k` removes an enclosed hole or a corner pinch; `None` when the piece
/// is already bounded by a single simple ring.
fn find_cut(cells: &Cells) -> Option<usize> {
    let bbox = bounding_box(cells)?;
    let grid = LocalGrid::new(cells, bbox);
    let (h, w) = (grid.h as isize, grid.w as isize);

    // flood the complement from outside the bounding box
    let (eh, ew) = (grid.h + 2, grid.w + 2);
    let mut outside = vec![false; eh * ew];
    let mut stack = vec![(0isize, 0isize)];
    outside[0] = true;
    while let Some((r, c)) = stack.pop() {
        for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
            let (nr, nc) = (r + dr, c + dc);
            if nr < 0 || nc < 0 || nr >= eh as isize || nc >= ew as isize {
                continue;
            }
            let idx = nr as usize * ew + nc as usize;
            if !outside[idx] && !grid.at(nr - 1, nc - 1) {
                outside[idx] = true;
                stack.push((nr, nc));
            }
        }
    }
    let mut hole_col = None;
    for r in 0..h {
        for c in 0..w {
            if !grid.at(r, c) && !outside[(r + 1) as usize * ew + (c + 1) as usize] {
                hole_col = Some(hole_col.map_or(c, |m: isize| m.min(c)));
            }
        }
    }
    if let Some(c) = hole_col {
        return Some(bbox.1 + c as usize);
    }
    for r in 0..h - 1 {
        for c in 0..w - 1 {
            let (a, b) = (grid.at(r, c), grid.at(r, c + 1));
            let (d, e) = (grid.at(r + 1, c), grid.at(r + 1, c + 1));
            if (a && e && !b && !d) || (b && d && !a && !e) {
                return Some(bbox.1 + c as usize + 1);
            }
        }
    }
    None
}

/// Boundary of a hole-free, pinch-free cell set as a counter-clockwise ring
/// with collinear vertices removed.
fn trace_ring(cells: &Cells, xs: &[i64], ys: &[i64]) -> Ring {
    let set: HashSet<(usize, usize)> = cells.iter().copied().collect();
    let filled = |r: isize, c: isize| r >= 0 && c >= 0 && set.contains(&(r as usize, c as usize));
    // grid vertex (col, row) -> next vertex, interior on the left
    let mut next: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    for &(r, c) in cells {
        let (ri, ci) = (r as isize, c as isize);
        if !filled(ri - 1, ci) {
            next.insert((c, r), (c + 1, r));
        }
        if !filled(ri, ci + 1) {
            next.insert((c + 1, r), (c + 1, r + 1));
        }
        if !filled(ri + 1, ci) {
            next.insert((c + 1, r + 1), (c, r + 1));
        }
        if !filled(ri, ci - 1) {
            next.insert((c, r + 1), (c, r));
        }
    }
    // lowest row, then lowest column: always a convex corner
    let start = *next
        .keys()
        .min_by_key(|&&(c, r)| (r, c))
        .expect("non-empty cell set has a boundary");
    let mut loop_pts = vec![start];
    let mut cur = next[&start];
    while cur != start {
        loop_pts.push(cur);
        cur = next[&cur];
    }
    let n = loop_pts.len();
    let mut ring = Vec::new();
    for i in 0..n {
        let prev = loop_pts[(i + n - 1) % n];
        let here = loop_pts[i];
        let nxt = loop_pts[(i + 1) % n];
        let collinear = (prev.0 == here.0 && here.0 == nxt.0) || (prev.1 == here.1 && here.1 == nxt.1);
        if !collinear {
            ring.push([xs[here.0], ys[here.1]]);
        }
    }
    ring
}

/// Pads a pattern to `n x n` by repeatedly halving the widest interval
/// (lowest index on ties) and duplicating its column or row.
pub fn pad_to_square(sq: &SquishPattern, n: usize) -> Result<SquishPattern> {
    sq.validate()?;
    let (rows, cols) = (sq.topology.rows(), sq.topology.cols());
    if rows > n || cols > n {
        return Err(Error::Size(format!(
            "pattern {rows}x{cols} does not fit in {n}x{n}"
        )));
    }
    let (topo, dx) = split_columns(&sq.topology, &sq.dx, n);
    let (topo_t, dy) = split_columns(&topo.transpose(), &sq.dy, n);
    Ok(SquishPattern {
        topology: topo_t.transpose(),
        dx,
        dy,
        unit_scale: sq.unit_scale,
    })
}

fn split_columns(topo: &Topology, dx: &[f64], n: usize) -> (Topology, Vec<f64>) {
    // source column feeding each output column
    let mut source: Vec<usize> = (0..dx.len()).collect();
    let mut widths = dx.to_vec();
    while widths.len() < n {
        let mut best = 0;
        for (i, &w) in widths.iter().enumerate() {
            if w > widths[best] {
                best = i;
            }
        }
        let half = widths[best] / 2.0;
        widths[best] = half;
        widths.insert(best + 1, half);
        source.insert(best + 1, source[best]);
    }
    let mut cells = Vec::with_capacity(topo.rows() * n);
    for r in 0..topo.rows() {
        for &c in &source {
            cells.push(topo.get(r, c));
        }
    }
    let out = Topology::from_cells(topo.rows(), source.len(), cells).expect("binary cells");
    (out, widths)
}

/// Scan-line counts minus one, per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Complexity {
    pub cx: usize,
    pub cy: usize,
}

pub fn complexity(sq: &SquishPattern) -> Complexity {
    topology_complexity(&sq.topology)
}

/// Complexity depends only on which adjacent columns/rows differ, so it can
/// be read from the topology alone.
pub fn topology_complexity(topo: &Topology) -> Complexity {
    let cx = 1 + (1..topo.cols())
        .filter(|&c| (0..topo.rows()).any(|r| topo.get(r, c) != topo.get(r, c - 1)))
        .count();
    let cy = 1 + (1..topo.rows())
        .filter(|&r| topo.row(r) != topo.row(r - 1))
        .count();
    Complexity { cx, cy }
}

/// Standalone SVG, one closed path per polygon, y axis pointing up.
pub fn render_svg(layout: &Layout) -> String {
    let (w, h) = (layout.extent_w, layout.extent_h);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(
        s,
        r##"<rect x="0" y="0" width="{w}" height="{h}" fill="#ffffff" stroke="#000000"/>"##
    );
    let _ = writeln!(s, r#"<g transform="matrix(1 0 0 -1 0 {h})">"#);
    for ring in &layout.polygons {
        let mut d = String::new();
        for (i, p) in ring.iter().enumerate() {
            let _ = write!(d, "{}{} {} ", if i == 0 { "M" } else { "L" }, p[0], p[1]);
        }
        d.push('Z');
        let _ = writeln!(s, r##"<path d="{d}" fill="#3b6ea5"/>"##);
    }
    s.push_str("</g>\n</svg>\n");
    s
}

/// Point-set equality of two layouts over the same extent: both are
/// rasterised on the union of their scan lines and compared cell by cell.
pub fn same_coverage(a: &Layout, b: &Layout) -> bool {
    if a.extent_w != b.extent_w || a.extent_h != b.extent_h {
        return false;
    }
    let (mut xs, mut ys) = a.scan_lines();
    let (xb, yb) = b.scan_lines();
    xs.extend(xb);
    ys.extend(yb);
    xs.sort_unstable();
    xs.dedup();
    ys.sort_unstable();
    ys.dedup();
    let to_bool = |v: Vec<u32>| v.into_iter().map(|c| c > 0).collect::<Vec<_>>();
    to_bool(a.coverage(&xs, &ys)) == to_bool(b.coverage(&xs, &ys))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_layout() -> Layout {
        Layout::new(2048, 2048, vec![Layout::rect(500, 600, 900, 1100)]).unwrap()
    }

    #[test]
    fn scanlines_of_rectangle() {
        let (xs, ys) = extract_scanlines(&rect_layout()).unwrap();
        assert_eq!(xs, vec![0, 500, 900, 2048]);
        assert_eq!(ys, vec![0, 600, 1100, 2048]);
    }

    #[test]
    fn scanlines_of_empty_layout() {
        let (xs, ys) = extract_scanlines(&Layout::empty(2048, 2048)).unwrap();
        assert_eq!(xs, vec![0, 2048]);
        assert_eq!(ys, vec![0, 2048]);
    }

    #[test]
    fn shared_edge_coordinate_appears_once() {
        let l = Layout::new(
            2048,
            2048,
            vec![Layout::rect(100, 100, 900, 300), Layout::rect(900, 500, 1200, 800)],
        )
        .unwrap();
        let (xs, _) = extract_scanlines(&l).unwrap();
        assert_eq!(xs.iter().filter(|&&x| x == 900).count(), 1);
    }

    #[test]
    fn non_rectilinear_edge_names_vertex() {
        let l = Layout::new(100, 100, vec![vec![[0, 0], [10, 0], [12, 10], [0, 10]]]);
        let msg = l.unwrap_err().to_string();
        assert!(msg.contains("vertex 1"), "{msg}");
    }

    #[test]
    fn rejects_overlap_and_self_intersection() {
        let overlap = Layout::new(
            100,
            100,
            vec![Layout::rect(0, 0, 50, 50), Layout::rect(40, 40, 60, 60)],
        );
        assert!(overlap.is_err());
        // figure-eight style ring crossing itself
        let crossing = vec![
            [0, 0],
            [20, 0],
            [20, 20],
            [10, 20],
            [10, -0],
            [5, 0],
            [5, 10],
            [0, 10],
        ];
        assert!(Layout::new(100, 100, vec![crossing]).is_err());
        assert!(Layout::new(100, 100, vec![Layout::rect(0, 0, 200, 10)]).is_err());
    }

    #[test]
    fn encode_single_rectangle() {
        let sq = encode_squish(&rect_layout()).unwrap();
        assert_eq!(
            sq.topology,
            Topology::from_rows(&[[0u8, 0, 0], [0, 1, 0], [0, 0, 0]]).unwrap()
        );
        assert_eq!(sq.dx, vec![500.0, 400.0, 1148.0]);
        assert_eq!(sq.dy, vec![600.0, 500.0, 948.0]);
    }

    #[test]
    fn encode_full_extent() {
        let l = Layout::new(2048, 2048, vec![Layout::rect(0, 0, 2048, 2048)]).unwrap();
        let sq = encode_squish(&l).unwrap();
        assert_eq!(sq.topology, Topology::ones(1, 1));
        assert_eq!(sq.dx, vec![2048.0]);
        assert_eq!(sq.dy, vec![2048.0]);
    }

    #[test]
    fn encode_l_shape() {
        let l = Layout::new(
            100,
            100,
            vec![vec![[0, 0], [100, 0], [100, 50], [50, 50], [50, 100], [0, 100]]],
        )
        .unwrap();
        let sq = encode_squish(&l).unwrap();
        assert_eq!(sq.topology, Topology::from_rows(&[[1u8, 1], [1, 0]]).unwrap());
    }

    #[test]
    fn decode_full_and_center() {
        let sq = SquishPattern::new(Topology::ones(1, 1), vec![2048.0], vec![2048.0], 1.0).unwrap();
        let l = decode_squish(&sq).unwrap();
        assert_eq!(l.polygons, vec![Layout::rect(0, 0, 2048, 2048)]);

        let sq = encode_squish(&rect_layout()).unwrap();
        assert_eq!(decode_squish(&sq).unwrap(), rect_layout());
    }

    #[test]
    fn decode_diagonal_cells_gives_two_rectangles() {
        let sq = SquishPattern::new(
            Topology::from_rows(&[[1u8, 0], [0, 1]]).unwrap(),
            vec![10.0, 10.0],
            vec![10.0, 10.0],
            1.0,
        )
        .unwrap();
        let l = decode_squish(&sq).unwrap();
        assert_eq!(
            l.polygons,
            vec![Layout::rect(0, 0, 10, 10), Layout::rect(10, 10, 20, 20)]
        );
    }

    #[test]
    fn decode_rejects_non_positive_interval() {
        let sq = SquishPattern {
            topology: Topology::ones(1, 2),
            dx: vec![1.0, 0.0],
            dy: vec![1.0],
            unit_scale: 1.0,
        };
        assert!(matches!(decode_squish(&sq), Err(Error::Validation(_))));
    }

    #[test]
    fn decode_ring_with_hole_roundtrips() {
        let topo = Topology::from_rows(&[[1u8, 1, 1], [1, 0, 1], [1, 1, 1]]).unwrap();
        let sq = SquishPattern::new(topo, vec![10.0; 3], vec![10.0; 3], 1.0).unwrap();
        let l = decode_squish(&sq).unwrap();
        assert!(l.polygons.len() >= 2);
        l.validate().unwrap();
        let back = encode_squish(&l).unwrap().canonicalize();
        assert_eq!(back.topology, sq.topology);
    }

    #[test]
    fn decode_pinched_component_is_split() {
        // one component that touches itself at a corner
        let topo = Topology::from_rows(&[
            [1u8, 1, 1, 0],
            [1, 0, 1, 0],
            [1, 1, 0, 1],
            [0, 0, 1, 1],
        ])
        .unwrap();
        let sq = SquishPattern::new(topo.clone(), vec![5.0; 4], vec![5.0; 4], 1.0).unwrap();
        let l = decode_squish(&sq).unwrap();
        l.validate().unwrap();
        assert_eq!(encode_squish(&l).unwrap().canonicalize().topology, topo);
    }

    #[test]
    fn pad_single_cell() {
        let sq = SquishPattern::new(Topology::ones(1, 1), vec![2048.0], vec![2048.0], 1.0).unwrap();
        let p = pad_to_square(&sq, 2).unwrap();
        assert_eq!(p.dx, vec![1024.0, 1024.0]);
        assert_eq!(p.topology, Topology::ones(2, 2));
    }

    #[test]
    fn pad_identity_and_size_error() {
        let sq = encode_squish(&rect_layout()).unwrap();
        assert_eq!(pad_to_square(&sq, 3).unwrap(), sq);
        assert!(matches!(pad_to_square(&sq, 2), Err(Error::Size(_))));
    }

    #[test]
    fn pad_is_lossless_for_center_rectangle() {
        let sq = encode_squish(&rect_layout()).unwrap();
        let p = pad_to_square(&sq, 4).unwrap();
        assert_eq!(decode_squish(&p).unwrap(), decode_squish(&sq).unwrap());
    }

    #[test]
    fn complexity_examples() {
        let sq = encode_squish(&rect_layout()).unwrap();
        assert_eq!(complexity(&sq), Complexity { cx: 3, cy: 3 });
        let empty = encode_squish(&Layout::empty(2048, 2048)).unwrap();
        assert_eq!(complexity(&empty), Complexity { cx: 1, cy: 1 });
        let padded = pad_to_square(&sq, 8).unwrap();
        assert_eq!(complexity(&padded), complexity(&sq));
        assert_eq!(padded.canonicalize(), sq);
    }

    #[test]
    fn svg_path_counts() {
        let svg = render_svg(&Layout::empty(2048, 2048));
        assert_eq!(svg.matches("<path").count(), 0);
        let svg = render_svg(&rect_layout());
        assert_eq!(svg.matches("<path").count(), 1);
        let d = svg.split("d=\"").nth(1).unwrap().split('"').next().unwrap();
        assert!(d.starts_with('M') && d.ends_with('Z'));
        assert_eq!(d.matches('L').count(), 3);
        let sq = SquishPattern::new(
            Topology::from_rows(&[[1u8, 0, 1], [0, 0, 0], [1, 1, 0]]).unwrap(),
            vec![10.0; 3],
            vec![10.0; 3],
            1.0,
        )
        .unwrap();
        let l = decode_squish(&sq).unwrap();
        assert_eq!(render_svg(&l).matches("<path").count(), l.polygons.len());
    }

    #[test]
    fn json_roundtrip_is_bit_exact() {
        let text = r#"{"units":"nm","extent":[2048,2048],"polygons":[[[500,600],[900,600],[900,1100],[500,1100]]]}"#;
        let l = Layout::from_json(text).unwrap();
        assert_eq!(l.to_json(), text);
        assert!(Layout::from_json(r#"{"units":"um","extent":[1,1],"polygons":[]}"#).is_err());
        assert!(Layout::from_json(r#"{"units":"nm","extent":[1,1],"polygons":[],"x":1}"#).is_err());
    }

    #[test]
    fn deltas_csv_roundtrip() {
        let sq = encode_squish(&rect_layout()).unwrap();
        let (dx, dy, s) = SquishPattern::parse_deltas_csv(&sq.deltas_csv()).unwrap();
        assert_eq!((dx, dy, s), (sq.dx.clone(), sq.dy.clone(), 1.0));
    }
}
