use crate::error::{Result, TensorError};
use crate::graph::{Graph, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;

/// Per-channel statistics of one training-mode batch-norm call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, the quantity tracked by running statistics.
    pub var: Vec<T>,
}

impl<T: Scalar> BatchStats<T> {
    /// `running = momentum · running + (1 − momentum) · batch`.
    pub fn update_running(&self, running_mean: &mut [T], running_var: &mut [T], momentum: T) {
        let keep = momentum;
        let take = T::one() - momentum;
        for (r, &m) in running_mean.iter_mut().zip(&self.mean) {
            *r = keep * *r + take * m;
        }
        for (r, &v) in running_var.iter_mut().zip(&self.var) {
            *r = keep * *r + take * v;
        }
    }
}

struct ChannelLayout {
    batch: usize,
    channels: usize,
    spatial: usize,
}

impl<T: Scalar> Graph<T> {
    fn bn_layout(&self, x: Var, gamma: Var, beta: Var) -> Result<ChannelLayout> {
        let s = self.shape(x);
        if s.len() < 2 {
            return Err(TensorError::dim("batchnorm", "(B, C, …)", format!("{s:?}")));
        }
        let c = s[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(TensorError::dim(
                "batchnorm",
                format!("gamma/beta ({c})"),
                format!("{:?} / {:?}", self.shape(gamma), self.shape(beta)),
            ));
        }
        Ok(ChannelLayout {
            batch: s[0],
            channels: c,
            spatial: s[2..].iter().product(),
        })
    }

    /// Batch normalization with batch statistics. Returns the output and the
    /// statistics the caller folds into its running buffers.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats<T>)> {
        let l = self.bn_layout(x, gamma, beta)?;
        let count = l.batch * l.spatial;
        if count < 2 {
            return Err(TensorError::Precondition(format!(
                "batchnorm training needs at least 2 values per channel, got {count}"
            )));
        }
        let xd = self.value(x).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let eps = T::of(NORM_EPS);
        let n = T::of(count as f64);
        let mut mean = vec![T::zero(); l.channels];
        let mut var = vec![T::zero(); l.channels];
        let mut inv_std = vec![T::zero(); l.channels];
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for c in 0..l.channels {
            let chunks = || (0..l.batch).map(move |b| (b * l.channels + c) * l.spatial);
            let mut s = T::zero();
            for base in chunks() {
                s = s + xd[base..base + l.spatial].iter().copied().sum();
            }
            let m = s / n;
            let mut sq = T::zero();
            for base in chunks() {
                sq = sq + xd[base..base + l.spatial].iter().map(|&e| (e - m) * (e - m)).sum();
            }
            let v = sq / n;
            let is = T::one() / (v + eps).sqrt();
            for base in chunks() {
                for j in base..base + l.spatial {
                    let h = (xd[j] - m) * is;
                    xhat[j] = h;
                    out[j] = gd[c] * h + bd[c];
                }
            }
            mean[c] = m;
            var[c] = sq / T::of((count - 1) as f64);
            inv_std[c] = is;
        }
        let v = Tensor::new(self.shape(x), out)?;
        let y = self.push(
            v,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: true,
            },
        );
        Ok((y, BatchStats { mean, var }))
    }

    /// Batch normalization with fixed running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
    ) -> Result<Var> {
        let l = self.bn_layout(x, gamma, beta)?;
        if running_mean.len() != l.channels || running_var.len() != l.channels {
            return Err(TensorError::dim(
                "batchnorm",
                format!("running stats ({})", l.channels),
                format!("{} / {}", running_mean.len(), running_var.len()),
            ));
        }
        let xd = self.value(x).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let eps = T::of(NORM_EPS);
        let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for (j, (h, o)) in xhat.iter_mut().zip(out.iter_mut()).enumerate() {
            let c = (j / l.spatial) % l.channels;
            *h = (xd[j] - running_mean[c]) * inv_std[c];
            *o = gd[c] * *h + bd[c];
        }
        let v = Tensor::new(self.shape(x), out)?;
        Ok(self.push(
            v,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: false,
            },
        ))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let f = *s.last().unwrap();
        if self.shape(gamma) != [f] || self.shape(beta) != [f] {
            return Err(TensorError::dim(
                "layer_norm",
                format!("gamma/beta ({f})"),
                format!("{:?}", self.shape(gamma)),
            ));
        }
        let xd = self.value(x).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let eps = T::of(NORM_EPS);
        let nf = T::of(f as f64);
        let rows = xd.len() / f;
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        let mut inv_std = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &xd[r * f..(r + 1) * f];
            let m = row.iter().copied().sum::<T>() / nf;
            let v = row.iter().map(|&e| (e - m) * (e - m)).sum::<T>() / nf;
            let is = T::one() / (v + eps).sqrt();
            inv_std[r] = is;
            for j in 0..f {
                let h = (row[j] - m) * is;
                xhat[r * f + j] = h;
                out[r * f + j] = gd[j] * h + bd[j];
            }
        }
        let v = Tensor::new(&s, out)?;
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }
}

pub(crate) fn backward<T: Scalar>(g: &Graph<T>, i: usize, grad: &Tensor<T>) -> Option<Vec<(Var, Tensor<T>)>> {
    let res = match g.op(i) {
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        } => {
            let s = g.shape(*x);
            let (batch, channels) = (s[0], s[1]);
            let spatial: usize = s[2..].iter().product();
            let gd = g.value(*gamma).data();
            let dy = grad.data();
            let mut dx = vec![T::zero(); dy.len()];
            let mut dgamma = vec![T::zero(); channels];
            let mut dbeta = vec![T::zero(); channels];
            let n = T::of((batch * spatial) as f64);
            for c in 0..channels {
                let bases: Vec<usize> = (0..batch).map(|b| (b * channels + c) * spatial).collect();
                let mut sum_dy = T::zero();
                let mut sum_dy_xhat = T::zero();
                for &base in &bases {
                    for j in base..base + spatial {
                        sum_dy = sum_dy + dy[j];
                        sum_dy_xhat = sum_dy_xhat + dy[j] * xhat[j];
                    }
                }
                dgamma[c] = sum_dy_xhat;
                dbeta[c] = sum_dy;
                let scale = gd[c] * inv_std[c];
                for &base in &bases {
                    for j in base..base + spatial {
                        dx[j] = if *train {
                            scale * (dy[j] - sum_dy / n - xhat[j] * sum_dy_xhat / n)
                        } else {
                            scale * dy[j]
                        };
                    }
                }
            }
            vec![
                (*x, Tensor::new(s, dx).expect("dx")),
                (*gamma, Tensor::new(&[channels], dgamma).expect("dgamma")),
                (*beta, Tensor::new(&[channels], dbeta).expect("dbeta")),
            ]
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let s = g.shape(*x);
            let f = *s.last().unwrap();
            let gd = g.value(*gamma).data();
            let dy = grad.data();
            let nf = T::of(f as f64);
            let mut dx = vec![T::zero(); dy.len()];
            let mut dgamma = vec![T::zero(); f];
            let mut dbeta = vec![T::zero(); f];
            for (r, &is) in inv_std.iter().enumerate() {
                let mut sum1 = T::zero();
                let mut sum2 = T::zero();
                for j in 0..f {
                    let k = r * f + j;
                    let dh = dy[k] * gd[j];
                    sum1 = sum1 + dh;
                    sum2 = sum2 + dh * xhat[k];
                    dgamma[j] = dgamma[j] + dy[k] * xhat[k];
                    dbeta[j] = dbeta[j] + dy[k];
                }
                for j in 0..f {
                    let k = r * f + j;
                    let dh = dy[k] * gd[j];
                    dx[k] = is * (dh - sum1 / nf - xhat[k] * sum2 / nf);
                }
            }
            vec![
                (*x, Tensor::new(s, dx).expect("dx")),
                (*gamma, Tensor::new(&[f], dgamma).expect("dgamma")),
                (*beta, Tensor::new(&[f], dbeta).expect("dbeta")),
            ]
        }
        _ => return None,
    };
    Some(res)
}
