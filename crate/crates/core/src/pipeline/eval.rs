//! Eval-mode reconstruction and the metric report.

use voxatt_tensor::{Graph, Scalar, Tensor, Var};

use super::dataset::Dataset;
use crate::error::Result;
use crate::metrics::{
    jsd, mean_part_miou, miou, mmd_cov, sample_points, symmetry_score, transform_mse, Distance, MatchMode,
    MetricReport, SetMetrics,
};
use crate::model::{Forward, Model, Pass, TRANSFORM_DIM};

/// One reconstructed shape, all grids as `R³` blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Recon {
    /// Canonical parts, `N_p·R³`.
    pub parts: Vec<f32>,
    pub transforms: Vec<[f64; TRANSFORM_DIM]>,
    /// Parts placed in the shape frame, `N_p·R³`.
    pub placed: Vec<f32>,
    pub shape: Vec<f32>,
}

fn to_f32<T: Scalar>(t: &Tensor<T>) -> Vec<f32> {
    t.data().iter().map(|v| v.f64() as f32).collect()
}

/// Split the batched outputs of a forward pass into per-item records.
pub fn split_forward<T: Scalar>(g: &Graph<T>, f: &Forward, transforms: Var) -> Vec<Recon> {
    let parts = g.value(f.decoded.parts);
    let b = parts.shape()[0];
    let per = |t: &Tensor<T>| {
        let n = t.numel() / b;
        let flat = to_f32(t);
        (0..b).map(|i| flat[i * n..(i + 1) * n].to_vec()).collect::<Vec<_>>()
    };
    let tr = g.value(transforms);
    let np = tr.shape()[1];
    let (ps, placed, shapes) = (per(parts), per(g.value(f.placed)), per(g.value(f.shape)));
    (0..b)
        .map(|i| Recon {
            parts: ps[i].clone(),
            transforms: (0..np)
                .map(|p| std::array::from_fn(|k| tr.at(&[i, p, k]).f64()))
                .collect(),
            placed: placed[i].clone(),
            shape: shapes[i].clone(),
        })
        .collect()
}

/// Eval-mode reconstruction of `indices`, in chunks of `batch`. With
/// `gt_transforms` the decoded parts are placed by the ground truth instead of
/// the head's prediction.
pub fn reconstruct<T: Scalar>(
    model: &Model<T>,
    data: &Dataset,
    indices: &[usize],
    batch: usize,
    gt_transforms: bool,
) -> Result<Vec<Recon>> {
    data.check(&model.config)?;
    let net = model.net();
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch.max(1)) {
        let b = data.batch::<T>(chunk);
        let mut g = Graph::new();
        let x = g.constant(b.input);
        let mut f = net.forward(&mut g, x, &mut Pass::eval())?;
        let mut transforms = f.head.transforms;
        if gt_transforms {
            transforms = g.constant(b.transforms);
            let (placed, shape) = net.assemble(&mut g, f.decoded.parts, transforms)?;
            f.placed = placed;
            f.shape = shape;
        }
        out.extend(split_forward(&g, &f, transforms));
    }
    Ok(out)
}

/// Point-cloud set metrics in reconstruction mode: reconstruction `i` is
/// paired with reference `i`.
#[derive(Clone, Copy, Debug)]
pub struct SetMetricOptions {
    pub points: usize,
    pub seed: u64,
}

impl Default for SetMetricOptions {
    fn default() -> Self {
        SetMetricOptions { points: 256, seed: 0 }
    }
}

/// Score reconstructions of `data.items[indices[i]]`.
pub fn metric_report(
    data: &Dataset,
    indices: &[usize],
    recons: &[Recon],
    set: Option<SetMetricOptions>,
) -> Result<MetricReport> {
    let (r, np) = (data.resolution, data.n_parts);
    let v = r * r * r;
    let mut ious = Vec::with_capacity(recons.len());
    let mut shape_iou = 0.0;
    let (mut pred_t, mut gt_t, mut present) = (Vec::new(), Vec::new(), Vec::new());
    let mut sym_parts = vec![(0.0, 0usize); np];
    let mut sym = 0.0;
    for (&i, rec) in indices.iter().zip(recons) {
        let it = &data.items[i];
        ious.push(
            (0..np)
                .map(|p| it.present[p].then(|| miou(&rec.parts[p * v..(p + 1) * v], &it.parts[p * v..(p + 1) * v])))
                .collect(),
        );
        shape_iou += miou(&rec.shape, &it.occupancy);
        pred_t.extend_from_slice(&rec.transforms);
        gt_t.extend_from_slice(&it.transforms);
        present.extend_from_slice(&it.present);
        for p in 0..np {
            if it.present[p] {
                sym_parts[p].0 += symmetry_score(&rec.placed[p * v..(p + 1) * v], r);
                sym_parts[p].1 += 1;
            }
        }
        sym += symmetry_score(&rec.shape, r);
    }
    let n = recons.len().max(1) as f64;
    let set = match set {
        Some(o) => Some(set_metrics(data, indices, recons, o)?),
        None => None,
    };
    Ok(MetricReport {
        items: recons.len(),
        part: mean_part_miou(&ious),
        shape_miou: shape_iou / n,
        transform_mse: transform_mse(&pred_t, &gt_t, &present),
        symmetry_parts: sym_parts.iter().map(|&(s, c)| (c > 0).then(|| s / c as f64)).collect(),
        symmetry: sym / n,
        set,
    })
}

fn set_metrics(data: &Dataset, indices: &[usize], recons: &[Recon], o: SetMetricOptions) -> Result<SetMetrics> {
    let r = data.resolution;
    let mut gen = Vec::with_capacity(recons.len());
    let mut refs = Vec::with_capacity(recons.len());
    for (k, (&i, rec)) in indices.iter().zip(recons).enumerate() {
        let seed = o.seed.wrapping_add(2 * k as u64);
        gen.push(sample_points(&rec.shape, r, o.points, seed)?);
        refs.push(sample_points(&data.items[i].occupancy, r, o.points, seed + 1)?);
    }
    let (mmd_cd, cov_cd) = mmd_cov(&gen, &refs, Distance::Chamfer, MatchMode::Paired)?;
    let (mmd_emd, cov_emd) = mmd_cov(&gen, &refs, Distance::Emd, MatchMode::Paired)?;
    Ok(SetMetrics {
        jsd: jsd(&gen, &refs)?,
        mmd_cd,
        mmd_emd,
        cov_cd,
        cov_emd,
    })
}

/// Reconstruct and score a whole dataset.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    data: &Dataset,
    batch: usize,
    gt_transforms: bool,
    set: Option<SetMetricOptions>,
) -> Result<MetricReport> {
    if data.is_empty() {
        return Err(crate::error::VoxError::Precondition("nothing to evaluate".into()));
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let recons = reconstruct(model, data, &indices, batch, gt_transforms)?;
    metric_report(data, &indices, &recons, set)
}
