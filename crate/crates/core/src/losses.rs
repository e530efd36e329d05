//! Loss terms and the per-stage weighted composites.

use voxatt_tensor::{CustomOp, Graph, Scalar, Tensor, Var};

use crate::error::{Result, VoxError};

/// Probabilities are clamped this far from 0 and 1 before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub pi: f64,
    pub part: f64,
    pub trans: f64,
    pub ac: f64,
    pub shape: f64,
    /// Weight of the occupied-voxel term in the modified cross entropy.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            pi: 1.0,
            part: 1.0,
            trans: 10.0,
            ac: 1.0,
            shape: 10.0,
            gamma: 0.6,
        }
    }
}

impl LossWeights {
    pub fn scaled(&self, c: f64) -> Self {
        LossWeights {
            pi: self.pi * c,
            part: self.part * c,
            trans: self.trans * c,
            ac: self.ac * c,
            shape: self.shape * c,
            gamma: self.gamma,
        }
    }
}

/// `‖M − blockdiag(P)‖² + ‖ΣP_i − I‖²` with `M_ij = P_i·P_j`, which expands
/// to `Σ‖P_i² − P_i‖² + Σ_{i≠j}‖P_iP_j‖² + ‖ΣP_i − I‖²`.
pub fn loss_pi<T: Scalar>(g: &mut Graph<T>, bank: Var) -> Result<Var> {
    let shape = g.shape(bank).to_vec();
    if shape.len() != 3 || shape[1] != shape[2] {
        return Err(VoxError::Precondition(format!(
            "projection bank must be (N_p, L, L), got {shape:?}"
        )));
    }
    let (np, l) = (shape[0], shape[1]);
    let rows = g.reshape(bank, &[1, np * l, l])?;
    let cols = g.permute(bank, &[1, 0, 2])?;
    let cols = g.reshape(cols, &[1, l, np * l])?;
    let prod = g.bmm(rows, cols, false)?;
    let prod = g.reshape(prod, &[np * l, np * l])?;
    let diag = g.block_diag(bank)?;
    let d = g.sub(prod, diag)?;
    let products = g.sum_squares(d);
    let total = g.sum_axis(bank, 0)?;
    let eye = g.constant(Tensor::eye(l));
    let d = g.sub(total, eye)?;
    let partition = g.sum_squares(d);
    Ok(g.add(products, partition)?)
}

/// Mean over included rows of `−2(γ·t·ln o + (1−γ)(1−t)·ln(1−o))`.
struct MaskedBce<T: Scalar> {
    target: Tensor<T>,
    /// One flag per row of the last axis; `None` includes every row.
    mask: Option<Vec<bool>>,
    gamma: T,
    count: usize,
}

impl<T: Scalar> MaskedBce<T> {
    fn row_len(&self) -> usize {
        *self.target.shape().last().expect("non-empty shape")
    }

    fn included(&self, row: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[row])
    }

    fn forward(&self, o: &Tensor<T>) -> T {
        let n = self.row_len();
        let (lo, hi) = (T::of(BCE_CLAMP), T::one() - T::of(BCE_CLAMP));
        let two = T::of(2.0);
        let mut acc = T::zero();
        for (row, (os, ts)) in o.data().chunks(n).zip(self.target.data().chunks(n)).enumerate() {
            if !self.included(row) {
                continue;
            }
            for (&o, &t) in os.iter().zip(ts) {
                let o = o.max(lo).min(hi);
                acc = acc
                    - two * (self.gamma * t * o.ln() + (T::one() - self.gamma) * (T::one() - t) * (T::one() - o).ln());
            }
        }
        if self.count == 0 {
            T::zero()
        } else {
            acc / T::of(self.count as f64)
        }
    }
}

impl<T: Scalar> CustomOp<T> for MaskedBce<T> {
    fn name(&self) -> &'static str {
        "masked_bce"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> voxatt_tensor::Result<Vec<Option<Tensor<T>>>> {
        let o = inputs[0];
        let n = self.row_len();
        let mut d = Tensor::zeros(o.shape());
        if self.count > 0 {
            let (lo, hi) = (T::of(BCE_CLAMP), T::one() - T::of(BCE_CLAMP));
            let scale = grad_out.item() * T::of(-2.0) / T::of(self.count as f64);
            let chunks = d
                .data_mut()
                .chunks_mut(n)
                .zip(o.data().chunks(n))
                .zip(self.target.data().chunks(n));
            for (row, ((ds, os), ts)) in chunks.enumerate() {
                if !self.included(row) {
                    continue;
                }
                for ((dv, &o), &t) in ds.iter_mut().zip(os).zip(ts) {
                    if o < lo || o > hi {
                        continue;
                    }
                    *dv = scale * (self.gamma * t / o - (T::one() - self.gamma) * (T::one() - t) / (T::one() - o));
                }
            }
        }
        Ok(vec![Some(d)])
    }
}

fn masked_bce<T: Scalar>(
    g: &mut Graph<T>,
    o: Var,
    target: &Tensor<T>,
    mask: Option<&[bool]>,
    gamma: f64,
) -> Result<Var> {
    if g.shape(o) != target.shape() {
        return Err(VoxError::Precondition(format!(
            "prediction {:?} and target {:?} differ",
            g.shape(o),
            target.shape()
        )));
    }
    let n = *target.shape().last().expect("non-empty shape");
    let rows = target.numel() / n;
    if let Some(m) = mask {
        if m.len() != rows {
            return Err(VoxError::Precondition(format!(
                "mask has {} entries for {rows} rows",
                m.len()
            )));
        }
    }
    let included = mask.map_or(rows, |m| m.iter().filter(|&&b| b).count());
    let op = MaskedBce {
        target: target.clone(),
        mask: mask.map(<[bool]>::to_vec),
        gamma: T::of(gamma),
        count: included * n,
    };
    let value = op.forward(g.value(o));
    Ok(g.custom(&[o], Tensor::scalar(value), Box::new(op)))
}

/// Modified cross entropy over canonical parts `(B, N_p, R³)`. `present`
/// has one flag per `(item, part)`; `None` keeps every part.
pub fn loss_part<T: Scalar>(
    g: &mut Graph<T>,
    parts: Var,
    target: &Tensor<T>,
    present: Option<&[bool]>,
    gamma: f64,
) -> Result<Var> {
    masked_bce(g, parts, target, present, gamma)
}

/// Modified cross entropy over assembled shapes `(B, R³)`.
pub fn loss_shape<T: Scalar>(g: &mut Graph<T>, shape: Var, target: &Tensor<T>, gamma: f64) -> Result<Var> {
    masked_bce(g, shape, target, None, gamma)
}

/// Squared error summed over parameters and present parts, averaged over the batch.
pub fn loss_trans<T: Scalar>(g: &mut Graph<T>, pred: Var, gt: &Tensor<T>, present: &[bool]) -> Result<Var> {
    let shape = g.shape(pred).to_vec();
    if shape != gt.shape() || shape.len() != 3 {
        return Err(VoxError::Precondition(format!(
            "transform prediction {shape:?} and target {:?} differ",
            gt.shape()
        )));
    }
    let (b, np, t) = (shape[0], shape[1], shape[2]);
    if present.len() != b * np {
        return Err(VoxError::Precondition(format!(
            "mask has {} entries for {} parts",
            present.len(),
            b * np
        )));
    }
    let mask: Vec<T> = present
        .iter()
        .flat_map(|&p| std::iter::repeat_n(if p { T::one() } else { T::zero() }, t))
        .collect();
    let target = g.constant(gt.clone());
    let mask = g.constant(Tensor::new(&shape, mask)?);
    let d = g.sub(pred, target)?;
    let d = g.mul(d, mask)?;
    let s = g.sum_squares(d);
    Ok(g.scale(s, T::one() / T::of(b as f64)))
}

/// Mean squared difference, summed over unordered pairs of layers.
pub fn loss_ac<T: Scalar>(g: &mut Graph<T>, vectors: &[Var]) -> Result<Var> {
    if vectors.len() < 2 {
        log::warn!("consistency loss over {} layer(s) is identically zero", vectors.len());
        return Ok(g.constant(Tensor::scalar(T::zero())));
    }
    let mut total: Option<Var> = None;
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            let d = g.sub(vectors[i], vectors[j])?;
            let n = g.value(d).numel();
            let s = g.sum_squares(d);
            let m = g.scale(s, T::one() / T::of(n as f64));
            total = Some(match total {
                Some(t) => g.add(t, m)?,
                None => m,
            });
        }
    }
    Ok(total.expect("at least one pair"))
}

/// Terms available to a stage composite; unused ones may be `None`.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossTerms {
    pub pi: Option<Var>,
    pub part: Option<Var>,
    pub trans: Option<Var>,
    pub ac: Option<Var>,
    pub shape: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageLossReport {
    pub stage: u8,
    pub epoch: usize,
    pub pi: Option<f64>,
    pub part: Option<f64>,
    pub trans: Option<f64>,
    pub ac: Option<f64>,
    pub shape: Option<f64>,
    pub total: f64,
}

impl StageLossReport {
    pub fn terms(&self) -> [Option<f64>; 5] {
        [self.pi, self.part, self.trans, self.ac, self.shape]
    }

    /// Σ ω_k·L_k recomputed from the reported terms.
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        let ws = [w.pi, w.part, w.trans, w.ac, w.shape];
        self.terms().iter().zip(ws).map(|(t, w)| t.map_or(0.0, |t| t * w)).sum()
    }
}

/// Which terms a stage combines: 1 = (PI, part), 2 = (trans, AC), 3 = all.
pub fn stage_terms(stage: u8) -> Result<[bool; 5]> {
    match stage {
        1 => Ok([true, true, false, false, false]),
        2 => Ok([false, false, true, true, false]),
        3 => Ok([true; 5]),
        s => Err(VoxError::Config(format!("no training stage {s}"))),
    }
}

/// Weighted sum of the stage's terms. A term is active when the stage uses
/// it and its weight is non-zero; an active term must be supplied.
pub fn stage_loss<T: Scalar>(
    g: &mut Graph<T>,
    stage: u8,
    epoch: usize,
    terms: &LossTerms,
    weights: &LossWeights,
) -> Result<(Var, StageLossReport)> {
    let used = stage_terms(stage)?;
    let names = ["pi", "part", "trans", "ac", "shape"];
    let vars = [terms.pi, terms.part, terms.trans, terms.ac, terms.shape];
    let ws = [weights.pi, weights.part, weights.trans, weights.ac, weights.shape];
    let mut values = [None; 5];
    let mut total: Option<Var> = None;
    for k in 0..5 {
        if !used[k] || ws[k] == 0.0 {
            continue;
        }
        let v = vars[k].ok_or_else(|| VoxError::Precondition(format!("stage {stage} needs the {} loss", names[k])))?;
        values[k] = Some(g.value(v).item().f64());
        let term = g.scale(v, T::of(ws[k]));
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    let total = match total {
        Some(t) => t,
        None => g.constant(Tensor::scalar(T::zero())),
    };
    let report = StageLossReport {
        stage,
        epoch,
        pi: values[0],
        part: values[1],
        trans: values[2],
        ac: values[3],
        shape: values[4],
        total: g.value(total).item().f64(),
    };
    Ok((total, report))
}
