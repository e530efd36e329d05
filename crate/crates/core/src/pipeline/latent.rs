//! Edits in part-latent space: swapping, mixing, interpolation, and the
//! head's attention weights.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;
use voxatt_tensor::{Graph, Scalar, Tensor};

use super::dataset::Dataset;
use super::eval::{split_forward, Recon};
use crate::error::{Result, VoxError};
use crate::model::{Model, Pass};

/// Eval-mode latents `(n, L)` and part latents `(n, N_p, L)`.
fn encode<T: Scalar>(model: &Model<T>, data: &Dataset, indices: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
    data.check(&model.config)?;
    let net = model.net();
    let b = data.batch::<T>(indices);
    let mut g = Graph::new();
    let x = g.constant(b.input);
    let z = net.encode(&mut g, x, &mut Pass::eval())?;
    let pl = net.project(&mut g, z)?;
    Ok((g.value(z).clone(), g.value(pl).clone()))
}

fn decode<T: Scalar>(model: &Model<T>, z: Tensor<T>, part_latents: Tensor<T>) -> Result<Vec<Recon>> {
    let net = model.net();
    let mut g = Graph::new();
    let z = g.constant(z);
    let pl = g.constant(part_latents);
    let f = net.from_part_latents(&mut g, z, pl, &mut Pass::eval())?;
    Ok(split_forward(&g, &f, f.head.transforms))
}

/// Exchange part `part` (0-based) between items `a` and `b`, then decode,
/// regress and assemble both.
pub fn swap<T: Scalar>(model: &Model<T>, data: &Dataset, a: usize, b: usize, part: usize) -> Result<(Recon, Recon)> {
    let np = model.config.n_parts;
    if part >= np {
        return Err(VoxError::Parameter(format!(
            "part index {part} out of range for {np} parts"
        )));
    }
    let l = model.config.latent();
    let (z, mut pl) = encode(model, data, &[a, b])?;
    let d = pl.data_mut();
    let (ra, rb) = (part * l, (np + part) * l);
    for k in 0..l {
        d.swap(ra + k, rb + k);
    }
    let mut out = decode(model, z, pl)?;
    let second = out.pop().expect("two items");
    Ok((out.pop().expect("two items"), second))
}

/// One donor per part slot, drawn with replacement from `n_items`.
pub fn pick_donors(n_items: usize, n_parts: usize, seed: u64) -> Vec<usize> {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let all: Vec<usize> = (0..n_items).collect();
    (0..n_parts)
        .map(|_| *all.choose(&mut rng).expect("non-empty dataset"))
        .collect()
}

/// Part `p` of the result comes from item `donors[p]`.
pub fn mix<T: Scalar>(model: &Model<T>, data: &Dataset, donors: &[usize]) -> Result<Recon> {
    let np = model.config.n_parts;
    if donors.len() != np {
        return Err(VoxError::Parameter(format!("{} donors for {np} parts", donors.len())));
    }
    let l = model.config.latent();
    let (_, pl) = encode(model, data, donors)?;
    let mut mixed = Vec::with_capacity(np * l);
    for (p, _) in donors.iter().enumerate() {
        // row p of donor p
        let off = (p * np + p) * l;
        mixed.extend_from_slice(&pl.data()[off..off + l]);
    }
    let mut z = vec![T::zero(); l];
    for row in mixed.chunks(l) {
        for (a, &b) in z.iter_mut().zip(row) {
            *a = *a + b;
        }
    }
    let z = Tensor::new(&[1, l], z)?;
    let pl = Tensor::new(&[1, np, l], mixed)?;
    Ok(decode(model, z, pl)?.remove(0))
}

/// `steps` shapes along `(1−α)·z_a + α·z_b` with α evenly spaced over [0, 1].
pub fn interpolate<T: Scalar>(
    model: &Model<T>,
    data: &Dataset,
    a: usize,
    b: usize,
    steps: usize,
) -> Result<Vec<Recon>> {
    if steps < 2 {
        return Err(VoxError::Parameter(format!(
            "interpolation needs at least 2 steps, got {steps}"
        )));
    }
    let l = model.config.latent();
    let (z, _) = encode(model, data, &[a, b])?;
    let (za, zb) = (&z.data()[..l], &z.data()[l..]);
    let mut rows = Vec::with_capacity(steps * l);
    for k in 0..steps {
        let alpha = T::of(k as f64 / (steps - 1) as f64);
        rows.extend(za.iter().zip(zb).map(|(&x, &y)| (T::one() - alpha) * x + alpha * y));
    }
    let net = model.net();
    let mut g = Graph::new();
    let zv = g.constant(Tensor::new(&[steps, l], rows)?);
    let f = net.from_latent(&mut g, zv, &mut Pass::eval())?;
    Ok(split_forward(&g, &f, f.head.transforms))
}

/// Row-stochastic `N_p × N_p` attention weights of one head.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub layer: usize,
    pub block: usize,
    pub head: usize,
    pub n_parts: usize,
    /// Row-major, row `i` holds how part `i` attends to every part.
    pub weights: Vec<f64>,
}

impl AttentionMap {
    pub fn name(&self) -> String {
        format!("layer{}_block{}_head{}", self.layer, self.block, self.head)
    }
}

/// Attention weights for one item. The channelwise head's per-channel maps
/// are averaged over channels.
pub fn attention_maps<T: Scalar>(model: &Model<T>, data: &Dataset, item: usize) -> Result<Vec<AttentionMap>> {
    let h = &model.config.head;
    if !h.mode.is_attention() {
        return Err(VoxError::Unsupported(format!(
            "the {} head has no attention maps",
            h.mode
        )));
    }
    data.check(&model.config)?;
    let b = data.batch::<T>(&[item]);
    let mut g = Graph::new();
    let x = g.constant(b.input);
    let f = model.net().forward(&mut g, x, &mut Pass::eval())?;
    let np = model.config.n_parts;
    let mut out = Vec::new();
    for (li, blocks) in f.head.maps.iter().enumerate() {
        for (bi, &m) in blocks.iter().enumerate() {
            let t = g.value(m);
            let groups = t.numel() / (h.heads * np * np);
            for head in 0..h.heads {
                let mut weights = vec![0.0; np * np];
                for c in 0..groups {
                    let off = (c * h.heads + head) * np * np;
                    for (w, v) in weights.iter_mut().zip(&t.data()[off..off + np * np]) {
                        *w += v.f64() / groups as f64;
                    }
                }
                out.push(AttentionMap {
                    layer: h.layers[li],
                    block: bi,
                    head,
                    n_parts: np,
                    weights,
                });
            }
        }
    }
    Ok(out)
}
