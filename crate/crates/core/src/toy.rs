// SPDX-License-Identifier: Apache-2.0

//! Small bundled datasets: four 4x4 topologies, a generator of rule-clean
//! layouts on a 2048 nm extent, and a generator of arbitrary rectilinear
//! layouts for codec testing.

use rand::Rng;

use crate::error::Result;
use crate::geometry::{encode_squish, pad_to_square, Layout, Ring, SquishPattern};
use crate::legalize::DesignRules;
use crate::rng::{self, PatRng};
use crate::topology::Topology;

pub const TOY_EXTENT_NM: i64 = 2048;
/// Matrix side of the padded toy library.
pub const TOY_SIDE: usize = 16;

/// Four distinct 4x4 topologies, each passing the pre-filter, with four
/// distinct complexities.
pub fn toy_topologies() -> Vec<Topology> {
    let rows: [[[u8; 4]; 4]; 4] = [
        [[0, 0, 0, 0], [0, 1, 1, 0], [0, 1, 1, 0], [0, 0, 0, 0]],
        [[1, 0, 1, 0], [1, 0, 1, 0], [1, 0, 1, 0], [1, 0, 1, 0]],
        [[1, 1, 1, 1], [1, 0, 0, 0], [1, 0, 0, 0], [1, 0, 0, 0]],
        [[0, 0, 0, 0], [1, 1, 1, 1], [0, 0, 0, 0], [0, 0, 0, 0]],
    ];
    rows.iter()
        .map(|r| Topology::from_rows(r).expect("static pattern"))
        .collect()
}

/// Rules every generated toy layout satisfies.
pub fn toy_rules() -> DesignRules {
    DesignRules {
        space_min: 96.0,
        width_min: 96.0,
        area_min: 96.0 * 96.0,
        area_max: 600_000.0,
        extent_nm: TOY_EXTENT_NM,
    }
}

/// Axis-aligned L: the bounding box `[x0,x1] x [y0,y1]` minus one corner
/// rectangle reaching to `(xc, yc)`. `corner` picks which corner is removed.
fn l_shape(x0: i64, y0: i64, x1: i64, y1: i64, xc: i64, yc: i64, corner: u8) -> Ring {
    match corner % 4 {
        // top-right removed
        0 => vec![[x0, y0], [x1, y0], [x1, yc], [xc, yc], [xc, y1], [x0, y1]],
        // top-left removed
        1 => vec![[x0, y0], [x1, y0], [x1, y1], [xc, y1], [xc, yc], [x0, yc]],
        // bottom-left removed
        2 => vec![[xc, y0], [x1, y0], [x1, y1], [x0, y1], [x0, yc], [xc, yc]],
        // bottom-right removed
        _ => vec![[x0, y0], [xc, y0], [xc, yc], [x1, yc], [x1, y1], [x0, y1]],
    }
}

fn overlaps(a: &[i64; 4], b: &[i64; 4], gap: i64) -> bool {
    a[0] < b[2] + gap && b[0] < a[2] + gap && a[1] < b[3] + gap && b[1] < a[3] + gap
}

/// 1 to `max_polygons` rectangles and L shapes with arbitrary nm
/// coordinates; polygons may touch but never overlap.
pub fn random_layout(rng: &mut PatRng, extent: i64, max_polygons: usize) -> Layout {
    let target = rng.gen_range(1..=max_polygons.max(1));
    let mut boxes: Vec<[i64; 4]> = Vec::new();
    let mut polygons = Vec::new();
    let mut tries = 0;
    while polygons.len() < target && tries < 500 {
        tries += 1;
        let w = rng.gen_range(8..=extent / 3);
        let h = rng.gen_range(8..=extent / 3);
        let x0 = rng.gen_range(0..=extent - w);
        let y0 = rng.gen_range(0..=extent - h);
        let bb = [x0, y0, x0 + w, y0 + h];
        if boxes.iter().any(|b| overlaps(b, &bb, 0)) {
            continue;
        }
        let ring = if rng.gen::<bool>() {
            Layout::rect(bb[0], bb[1], bb[2], bb[3])
        } else {
            let xc = rng.gen_range(x0 + 1..x0 + w);
            let yc = rng.gen_range(y0 + 1..y0 + h);
            l_shape(bb[0], bb[1], bb[2], bb[3], xc, yc, rng.gen_range(0..4))
        };
        boxes.push(bb);
        polygons.push(ring);
    }
    Layout::new(extent, extent, polygons).expect("generated polygons are disjoint")
}

/// A layout clean under [`toy_rules`]: 1 to 4 shapes on a 64 nm lattice,
/// widths of at least 128 nm and at least 128 nm between shapes.
pub fn toy_layout(rng: &mut PatRng) -> Layout {
    const STEP: i64 = 64;
    let cells = TOY_EXTENT_NM / STEP;
    let target = rng.gen_range(1..=4);
    let mut boxes: Vec<[i64; 4]> = Vec::new();
    let mut polygons = Vec::new();
    let mut tries = 0;
    while polygons.len() < target && tries < 200 {
        tries += 1;
        let w = rng.gen_range(2..=8);
        let h = rng.gen_range(2..=8);
        let x0 = rng.gen_range(0..=cells - w);
        let y0 = rng.gen_range(0..=cells - h);
        let bb = [x0 * STEP, y0 * STEP, (x0 + w) * STEP, (y0 + h) * STEP];
        if boxes.iter().any(|b| overlaps(b, &bb, 2 * STEP)) {
            continue;
        }
        let ring = if w >= 4 && h >= 4 && rng.gen::<bool>() {
            let xc = (x0 + rng.gen_range(2..=w - 2)) * STEP;
            let yc = (y0 + rng.gen_range(2..=h - 2)) * STEP;
            l_shape(bb[0], bb[1], bb[2], bb[3], xc, yc, rng.gen_range(0..4))
        } else {
            Layout::rect(bb[0], bb[1], bb[2], bb[3])
        };
        boxes.push(bb);
        polygons.push(ring);
    }
    Layout::new(TOY_EXTENT_NM, TOY_EXTENT_NM, polygons).expect("generated polygons are disjoint")
}

/// `count` toy layouts encoded and padded to 16x16; item `i` uses the
/// random stream `seed + i`.
pub fn toy_library(count: usize, seed: u64) -> Result<Vec<(Layout, SquishPattern)>> {
    (0..count)
        .map(|i| {
            let layout = toy_layout(&mut rng::stream(seed, i as u64));
            let sq = pad_to_square(&encode_squish(&layout)?, TOY_SIDE)?;
            Ok((layout, sq))
        })
        .collect()
}
