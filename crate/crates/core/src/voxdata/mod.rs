//! Labeled voxel grids, part canonicalization, synthetic shapes and splits.

mod canonical;
mod manifest;
mod synth;
mod vxp;

pub use canonical::{canonicalize_all, canonicalize_part, place_nearest, reassemble_gt, PartCanonical, PartTransform};
pub use manifest::{split_dataset, DatasetManifest, Split};
pub use synth::{generate_synthetic, Category};
pub use vxp::{read_vxp, read_vxp_bytes, write_vxp, write_vxp_bytes};

use crate::error::{Result, VoxError};

/// A cubic grid of part labels; 0 is empty, `1..=n_parts` are parts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledVoxelGrid {
    pub resolution: usize,
    pub n_parts: usize,
    pub category: String,
    pub item_id: String,
    /// `x·R² + y·R + z`, x slowest.
    pub labels: Vec<u8>,
}

impl LabeledVoxelGrid {
    pub fn empty(resolution: usize, n_parts: usize, category: &str, item_id: &str) -> Self {
        LabeledVoxelGrid {
            resolution,
            n_parts,
            category: category.to_string(),
            item_id: item_id.to_string(),
            labels: vec![0; resolution.pow(3)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.resolution.pow(3) {
            return Err(VoxError::Precondition(format!(
                "{} labels for resolution {}",
                self.labels.len(),
                self.resolution
            )));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l as usize > self.n_parts) {
            return Err(VoxError::Precondition(format!(
                "label {l} exceeds {} parts",
                self.n_parts
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.resolution + y) * self.resolution + z
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, label: u8) {
        let i = self.index(x, y, z);
        self.labels[i] = label;
    }

    /// Paint the half-open box `[lo, hi)` with `label`.
    pub fn fill_box(&mut self, lo: [usize; 3], hi: [usize; 3], label: u8) {
        let r = self.resolution;
        for x in lo[0]..hi[0].min(r) {
            for y in lo[1]..hi[1].min(r) {
                for z in lo[2]..hi[2].min(r) {
                    self.set(x, y, z, label);
                }
            }
        }
    }

    /// Binary occupancy of one part.
    pub fn part_occupancy(&self, part: usize) -> Vec<f32> {
        self.labels
            .iter()
            .map(|&l| if l as usize == part { 1.0 } else { 0.0 })
            .collect()
    }

    /// Binary occupancy of the whole shape.
    pub fn occupancy(&self) -> Vec<f32> {
        self.labels.iter().map(|&l| if l > 0 { 1.0 } else { 0.0 }).collect()
    }

    pub fn part_present(&self, part: usize) -> bool {
        self.labels.iter().any(|&l| l as usize == part)
    }
}
