//! Procedural box-built chairs and tables, mirror-symmetric in x.
//!
//! Axes: x lateral (mirror axis), y up, z front-to-back.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use super::LabeledVoxelGrid;
use crate::error::{Result, VoxError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    /// back = 1, seat = 2, leg = 3, armrest = 4
    Chair,
    /// top = 1, leg = 2, shelf = 3
    Table,
}

impl Category {
    pub fn n_parts(self) -> usize {
        match self {
            Category::Chair => 4,
            Category::Table => 3,
        }
    }

    pub fn part_names(self) -> &'static [&'static str] {
        match self {
            Category::Chair => &["back", "seat", "leg", "armrest"],
            Category::Table => &["top", "leg", "shelf"],
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Chair => "chair",
            Category::Table => "table",
        })
    }
}

impl FromStr for Category {
    type Err = VoxError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chair" => Ok(Category::Chair),
            "table" => Ok(Category::Table),
            other => Err(VoxError::Config(format!("unknown category `{other}`"))),
        }
    }
}

/// Probability that a chair gets armrests.
pub const ARMREST_PROBABILITY: f64 = 0.7;
const SHELF_PROBABILITY: f64 = 0.5;

fn span(rng: &mut Xoshiro256StarStar, r: usize, lo: f64, hi: f64) -> usize {
    let a = (lo * r as f64).round() as usize;
    let b = (hi * r as f64).round() as usize;
    rng.gen_range(a..=b.max(a))
}

/// Pure function of `(category, seed, resolution)`. Requires an even `resolution ≥ 16`.
pub fn generate_synthetic(category: Category, seed: u64, resolution: usize) -> Result<LabeledVoxelGrid> {
    if resolution < 16 || !resolution.is_multiple_of(2) {
        return Err(VoxError::Precondition(format!(
            "synthetic shapes need an even resolution ≥ 16, got {resolution}"
        )));
    }
    let r = resolution;
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let id = format!("{category}_{seed:06}");
    let mut g = LabeledVoxelGrid::empty(r, category.n_parts(), &category.to_string(), &id);
    match category {
        Category::Chair => chair(&mut g, &mut rng),
        Category::Table => table(&mut g, &mut rng),
    }
    Ok(g)
}

fn chair(g: &mut LabeledVoxelGrid, rng: &mut Xoshiro256StarStar) {
    let r = g.resolution;
    let half = span(rng, r, 0.22, 0.34);
    let (x0, x1) = (r / 2 - half, r / 2 + half);
    let z0 = span(rng, r, 0.15, 0.28);
    let z1 = (z0 + span(rng, r, 0.42, 0.56)).min(r - 1);
    let floor = rng.gen_range(0..=1);
    let seat_y = floor + span(rng, r, 0.28, 0.42);
    let seat_t = span(rng, r, 0.06, 0.12).max(1);
    let leg_w = span(rng, r, 0.06, 0.1).max(1);
    let back_t = span(rng, r, 0.06, 0.1).max(1);
    let top = (seat_y + seat_t + span(rng, r, 0.35, 0.48)).min(r - 1);

    let leg = 3;
    for (xa, xb) in [(x0, x0 + leg_w), (x1 - leg_w, x1)] {
        for (za, zb) in [(z0, z0 + leg_w), (z1 - leg_w, z1)] {
            g.fill_box([xa, floor, za], [xb, seat_y, zb], leg);
        }
    }
    g.fill_box([x0, seat_y, z0], [x1, seat_y + seat_t, z1], 2);
    g.fill_box([x0, seat_y + seat_t, z0], [x1, top, z0 + back_t], 1);

    if rng.gen_bool(ARMREST_PROBABILITY) {
        let arm_w = span(rng, r, 0.04, 0.08).max(1);
        let arm_y = seat_y + seat_t + span(rng, r, 0.12, 0.2);
        let arm_t = span(rng, r, 0.04, 0.07).max(1);
        let arm_y = arm_y.min(top.saturating_sub(arm_t + 1));
        for (xa, xb) in [(x0, x0 + arm_w), (x1 - arm_w, x1)] {
            g.fill_box([xa, arm_y, z0 + back_t], [xb, arm_y + arm_t, z1], 4);
        }
    }
}

fn table(g: &mut LabeledVoxelGrid, rng: &mut Xoshiro256StarStar) {
    let r = g.resolution;
    let half = span(rng, r, 0.3, 0.44);
    let (x0, x1) = (r / 2 - half, r / 2 + half);
    let z0 = span(rng, r, 0.1, 0.25);
    let z1 = (z0 + span(rng, r, 0.45, 0.65)).min(r - 1);
    let top_y = span(rng, r, 0.5, 0.72);
    let top_t = span(rng, r, 0.05, 0.1).max(1);
    let leg_w = span(rng, r, 0.06, 0.1).max(1);
    for (xa, xb) in [(x0, x0 + leg_w), (x1 - leg_w, x1)] {
        for (za, zb) in [(z0, z0 + leg_w), (z1 - leg_w, z1)] {
            g.fill_box([xa, 0, za], [xb, top_y, zb], 2);
        }
    }
    g.fill_box([x0, top_y, z0], [x1, top_y + top_t, z1], 1);
    if rng.gen_bool(SHELF_PROBABILITY) {
        let y = span(rng, r, 0.12, 0.25);
        g.fill_box([x0 + leg_w, y, z0 + leg_w], [x1 - leg_w, y + 1, z1 - leg_w], 3);
    }
}
