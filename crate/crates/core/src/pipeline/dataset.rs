//! Preprocessed items and batch assembly.

use std::path::Path;

use voxatt_tensor::{Scalar, Tensor};

use crate::error::{Result, VoxError};
use crate::model::{ModelConfig, TRANSFORM_DIM};
use crate::voxdata::{
    canonicalize_all, generate_synthetic, read_vxp, Category, DatasetManifest, LabeledVoxelGrid, Split,
};

/// One shape with its canonical parts and ground-truth placements.
#[derive(Clone, Debug)]
pub struct Item {
    pub grid: LabeledVoxelGrid,
    pub occupancy: Vec<f32>,
    /// Canonical parts back to back, `N_p·R³`.
    pub parts: Vec<f32>,
    pub present: Vec<bool>,
    pub transforms: Vec<[f64; TRANSFORM_DIM]>,
}

impl Item {
    pub fn new(grid: LabeledVoxelGrid) -> Result<Self> {
        grid.validate()?;
        let mut parts = Vec::with_capacity(grid.n_parts * grid.labels.len());
        let mut present = Vec::new();
        let mut transforms = Vec::new();
        for (c, t) in canonicalize_all(&grid) {
            parts.extend_from_slice(&c.occupancy);
            present.push(c.present);
            transforms.push(t.to_array());
        }
        Ok(Item {
            occupancy: grid.occupancy(),
            grid,
            parts,
            present,
            transforms,
        })
    }

    pub fn id(&self) -> &str {
        &self.grid.item_id
    }
}

/// Tensors for a list of items.
pub struct Batch<T: Scalar> {
    /// `(B, 1, R, R, R)`
    pub input: Tensor<T>,
    /// `(B, N_p, R³)`
    pub parts: Tensor<T>,
    /// `(B, R³)`
    pub shape: Tensor<T>,
    /// `(B, N_p, 6)`
    pub transforms: Tensor<T>,
    /// One flag per `(item, part)`.
    pub present: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub resolution: usize,
    pub n_parts: usize,
    pub items: Vec<Item>,
}

impl Dataset {
    pub fn from_grids(grids: Vec<LabeledVoxelGrid>) -> Result<Self> {
        let first = grids
            .first()
            .ok_or_else(|| VoxError::Precondition("dataset has no items".into()))?;
        let (resolution, n_parts) = (first.resolution, first.n_parts);
        let mut items = Vec::with_capacity(grids.len());
        for g in grids {
            if g.resolution != resolution || g.n_parts != n_parts {
                return Err(VoxError::Precondition(format!(
                    "{} is {}³ with {} parts, expected {resolution}³ with {n_parts}",
                    g.item_id, g.resolution, g.n_parts
                )));
            }
            items.push(Item::new(g)?);
        }
        Ok(Dataset {
            resolution,
            n_parts,
            items,
        })
    }

    /// Synthetic items for `seeds`, generated in memory.
    pub fn synthetic(category: Category, seeds: impl IntoIterator<Item = u64>, resolution: usize) -> Result<Self> {
        let grids = seeds
            .into_iter()
            .map(|s| generate_synthetic(category, s, resolution))
            .collect::<Result<Vec<_>>>()?;
        Self::from_grids(grids)
    }

    /// The `split` items of a manifest, read from `dir/{id}.vxp`.
    pub fn load(dir: &Path, manifest: &DatasetManifest, split: Split) -> Result<Self> {
        let ids = manifest.ids(split);
        if ids.is_empty() {
            return Err(VoxError::Precondition(format!("manifest has no {split} items")));
        }
        let grids = ids
            .iter()
            .map(|id| read_vxp(&dir.join(format!("{id}.vxp"))))
            .collect::<Result<Vec<_>>>()?;
        let ds = Self::from_grids(grids)?;
        if ds.resolution != manifest.resolution || ds.n_parts != manifest.n_parts {
            return Err(VoxError::Precondition(format!(
                "manifest declares {}³ with {} parts, files are {}³ with {}",
                manifest.resolution, manifest.n_parts, ds.resolution, ds.n_parts
            )));
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn position(&self, id: &str) -> Result<usize> {
        self.items
            .iter()
            .position(|it| it.id() == id)
            .ok_or_else(|| VoxError::Precondition(format!("no item `{id}` in the dataset")))
    }

    /// Error unless the items fit the model's grid and part count.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        if self.resolution != cfg.resolution || self.n_parts != cfg.n_parts {
            return Err(VoxError::Config(format!(
                "dataset is {}³ with {} parts, model expects {}³ with {}",
                self.resolution, self.n_parts, cfg.resolution, cfg.n_parts
            )));
        }
        Ok(())
    }

    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Batch<T> {
        let (r, np) = (self.resolution, self.n_parts);
        let b = indices.len();
        let v = r * r * r;
        let cast = |x: &[f32]| x.iter().map(|&x| T::of(x as f64)).collect::<Vec<T>>();
        let mut input = Vec::with_capacity(b * v);
        let mut parts = Vec::with_capacity(b * np * v);
        let mut transforms = Vec::with_capacity(b * np * TRANSFORM_DIM);
        let mut present = Vec::with_capacity(b * np);
        for &i in indices {
            let it = &self.items[i];
            input.extend(cast(&it.occupancy));
            parts.extend(cast(&it.parts));
            transforms.extend(it.transforms.iter().flatten().map(|&x| T::of(x)));
            present.extend_from_slice(&it.present);
        }
        let t = |shape: &[usize], data: Vec<T>| Tensor::new(shape, data).expect("batch shapes are consistent");
        Batch {
            shape: t(&[b, v], input.clone()),
            input: t(&[b, 1, r, r, r], input),
            parts: t(&[b, np, v], parts),
            transforms: t(&[b, np, TRANSFORM_DIM], transforms),
            present,
        }
    }
}
