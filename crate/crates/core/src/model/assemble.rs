//! Differentiable placement of canonical parts and their union.

use voxatt_tensor::{CustomOp, Graph, Scalar, Tensor, Var};

use super::config::TRANSFORM_DIM;
use crate::error::{Result, VoxError};

/// Trilinear sampling coordinates along one axis for one part.
struct AxisSamples<T> {
    /// Lower corner index of each output coordinate.
    base: Vec<isize>,
    frac: Vec<T>,
    /// `∂u/∂scale` and `∂u/∂translation` per output coordinate.
    du_ds: Vec<T>,
    du_dt: Vec<T>,
}

fn axis_samples<T: Scalar>(scale: T, translation: T, r: usize) -> AxisSamples<T> {
    let rf = T::of(r as f64);
    let half = T::of(0.5);
    let mut s = AxisSamples {
        base: Vec::with_capacity(r),
        frac: Vec::with_capacity(r),
        du_ds: Vec::with_capacity(r),
        du_dt: Vec::with_capacity(r),
    };
    for i in 0..r {
        let w = (T::of(i as f64) + half) / rf;
        let c = (w - half - translation) / scale + half;
        let u = c * rf - half;
        let b = u.floor();
        s.base.push(b.to_isize().unwrap_or(isize::MIN / 2));
        s.frac.push(u - b);
        s.du_ds.push(-(c - half) * rf / scale);
        s.du_dt.push(-rf / scale);
    }
    s
}

fn samples<T: Scalar>(t: &[T], r: usize) -> [AxisSamples<T>; 3] {
    [0, 1, 2].map(|a| axis_samples(t[a], t[3 + a], r))
}

#[inline]
fn corner(base: isize, d: usize, r: usize) -> Option<usize> {
    let i = base + d as isize;
    (i >= 0 && (i as usize) < r).then_some(i as usize)
}

/// `(weight, ∂weight/∂u)` of corner `d ∈ {0,1}`.
#[inline]
fn weight<T: Scalar>(frac: T, d: usize) -> (T, T) {
    if d == 0 {
        (T::one() - frac, -T::one())
    } else {
        (frac, T::one())
    }
}

fn sample_one<T: Scalar>(v: &[T], s: &[AxisSamples<T>; 3], r: usize, out: &mut [T]) {
    for x in 0..r {
        for y in 0..r {
            for z in 0..r {
                let mut acc = T::zero();
                for dx in 0..2 {
                    let Some(ix) = corner(s[0].base[x], dx, r) else {
                        continue;
                    };
                    let wx = weight(s[0].frac[x], dx).0;
                    for dy in 0..2 {
                        let Some(iy) = corner(s[1].base[y], dy, r) else {
                            continue;
                        };
                        let wy = weight(s[1].frac[y], dy).0;
                        for dz in 0..2 {
                            let Some(iz) = corner(s[2].base[z], dz, r) else {
                                continue;
                            };
                            let wz = weight(s[2].frac[z], dz).0;
                            acc = acc + wx * wy * wz * v[(ix * r + iy) * r + iz];
                        }
                    }
                }
                out[(x * r + y) * r + z] = acc;
            }
        }
    }
}

struct ApplyTransform {
    r: usize,
}

impl<T: Scalar> CustomOp<T> for ApplyTransform {
    fn name(&self) -> &'static str {
        "apply_transform"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> voxatt_tensor::Result<Vec<Option<Tensor<T>>>> {
        let r = self.r;
        let n = r * r * r;
        let (vol, tf) = (inputs[0], inputs[1]);
        let items = tf.numel() / TRANSFORM_DIM;
        let mut dv = Tensor::zeros(vol.shape());
        let mut dt = Tensor::zeros(tf.shape());
        for p in 0..items {
            let t = &tf.data()[p * TRANSFORM_DIM..(p + 1) * TRANSFORM_DIM];
            let s = samples(t, r);
            let v = &vol.data()[p * n..(p + 1) * n];
            let go = &grad_out.data()[p * n..(p + 1) * n];
            let dvp = &mut dv.data_mut()[p * n..(p + 1) * n];
            let mut dparam = [T::zero(); TRANSFORM_DIM];
            for x in 0..r {
                for y in 0..r {
                    for z in 0..r {
                        let g = go[(x * r + y) * r + z];
                        if g == T::zero() {
                            continue;
                        }
                        let mut du = [T::zero(); 3];
                        for dx in 0..2 {
                            let Some(ix) = corner(s[0].base[x], dx, r) else {
                                continue;
                            };
                            let (wx, dwx) = weight(s[0].frac[x], dx);
                            for dy in 0..2 {
                                let Some(iy) = corner(s[1].base[y], dy, r) else {
                                    continue;
                                };
                                let (wy, dwy) = weight(s[1].frac[y], dy);
                                for dz in 0..2 {
                                    let Some(iz) = corner(s[2].base[z], dz, r) else {
                                        continue;
                                    };
                                    let (wz, dwz) = weight(s[2].frac[z], dz);
                                    let idx = (ix * r + iy) * r + iz;
                                    let val = v[idx];
                                    dvp[idx] = dvp[idx] + g * wx * wy * wz;
                                    du[0] = du[0] + dwx * wy * wz * val;
                                    du[1] = du[1] + wx * dwy * wz * val;
                                    du[2] = du[2] + wx * wy * dwz * val;
                                }
                            }
                        }
                        let pos = [x, y, z];
                        for a in 0..3 {
                            let d = g * du[a];
                            dparam[a] = dparam[a] + d * s[a].du_ds[pos[a]];
                            dparam[3 + a] = dparam[3 + a] + d * s[a].du_dt[pos[a]];
                        }
                    }
                }
            }
            dt.data_mut()[p * TRANSFORM_DIM..(p + 1) * TRANSFORM_DIM].copy_from_slice(&dparam);
        }
        Ok(vec![Some(dv), Some(dt)])
    }
}

/// Place canonical volumes `(…, R³)` by per-item transforms `(…, 6)` holding
/// `(s_x, s_y, s_z, t_x, t_y, t_z)`.
///
/// Output voxel centre `w ∈ [0,1]³` reads the canonical coordinate
/// `c = (w − ½ − t) / s + ½` by trilinear interpolation, zero outside.
pub fn apply_transform<T: Scalar>(g: &mut Graph<T>, volumes: Var, transforms: Var, r: usize) -> Result<Var> {
    let n = r * r * r;
    let (vs, ts) = (g.shape(volumes).to_vec(), g.shape(transforms).to_vec());
    if vs.last() != Some(&n) || ts.last() != Some(&TRANSFORM_DIM) || vs[..vs.len() - 1] != ts[..ts.len() - 1] {
        return Err(VoxError::Precondition(format!(
            "apply_transform expects (…, {n}) and (…, 6), got {vs:?} and {ts:?}"
        )));
    }
    let tf = g.value(transforms);
    for (i, row) in tf.data().chunks(TRANSFORM_DIM).enumerate() {
        if let Some(s) = row[..3].iter().find(|s| !(**s > T::zero())) {
            return Err(VoxError::Parameter(format!("non-positive scale {s} for item {i}")));
        }
    }
    let vol = g.value(volumes);
    let mut out = Tensor::zeros(&vs);
    for (p, row) in tf.data().chunks(TRANSFORM_DIM).enumerate() {
        let s = samples(row, r);
        sample_one(
            &vol.data()[p * n..(p + 1) * n],
            &s,
            r,
            &mut out.data_mut()[p * n..(p + 1) * n],
        );
    }
    Ok(g.custom(&[volumes, transforms], out, Box::new(ApplyTransform { r })))
}

/// Voxelwise maximum over the part axis of `(B, N_p, R³)`; ties route the
/// gradient to the lowest part index.
pub fn compose_shape<T: Scalar>(g: &mut Graph<T>, placed: Var) -> Result<Var> {
    Ok(g.max_axis(placed, 1)?)
}
