//! 3D convolution and its transpose via im2col + GEMM.

use crate::error::{Result, TensorError};
use crate::gemm::gemm;
use crate::graph::{Graph, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Geometry of a cross-correlation from a `dense` grid to a `coarse` grid.
#[derive(Clone, Copy, Debug)]
struct Geom {
    channels: usize,
    dense: [usize; 3],
    coarse: [usize; 3],
    k: usize,
    stride: usize,
    pad: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.channels * self.k * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.coarse.iter().product()
    }

    fn dense_len(&self) -> usize {
        self.channels * self.dense.iter().product::<usize>()
    }
}

/// Gather receptive fields of `x (channels, dense…)` into `cols (rows, cols)`.
fn im2col<T: Scalar>(x: &[T], g: &Geom, cols: &mut [T]) {
    let [dh, dw, dd] = g.dense;
    let [oh, ow, od] = g.coarse;
    let p = g.cols();
    let k = g.k;
    for c in 0..g.channels {
        let xc = &x[c * dh * dw * dd..(c + 1) * dh * dw * dd];
        for kx in 0..k {
            for ky in 0..k {
                for kz in 0..k {
                    let r = ((c * k + kx) * k + ky) * k + kz;
                    let row = &mut cols[r * p..(r + 1) * p];
                    for ox in 0..oh {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        let seg = &mut row[ox * ow * od..(ox + 1) * ow * od];
                        if ix < 0 || ix >= dh as isize {
                            seg.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        for oy in 0..ow {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            let seg2 = &mut seg[oy * od..(oy + 1) * od];
                            if iy < 0 || iy >= dw as isize {
                                seg2.iter_mut().for_each(|v| *v = T::zero());
                                continue;
                            }
                            let base = (ix as usize * dw + iy as usize) * dd;
                            for (oz, v) in seg2.iter_mut().enumerate() {
                                let iz = (oz * g.stride + kz) as isize - g.pad as isize;
                                *v = if iz < 0 || iz >= dd as isize {
                                    T::zero()
                                } else {
                                    xc[base + iz as usize]
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add `cols` back onto the dense grid (adjoint of [`im2col`]).
fn col2im<T: Scalar>(cols: &[T], g: &Geom, x: &mut [T]) {
    let [dh, dw, dd] = g.dense;
    let [oh, ow, od] = g.coarse;
    let p = g.cols();
    let k = g.k;
    for c in 0..g.channels {
        let xc = &mut x[c * dh * dw * dd..(c + 1) * dh * dw * dd];
        for kx in 0..k {
            for ky in 0..k {
                for kz in 0..k {
                    let r = ((c * k + kx) * k + ky) * k + kz;
                    let row = &cols[r * p..(r + 1) * p];
                    for ox in 0..oh {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= dh as isize {
                            continue;
                        }
                        for oy in 0..ow {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= dw as isize {
                                continue;
                            }
                            let base = (ix as usize * dw + iy as usize) * dd;
                            let seg = &row[(ox * ow + oy) * od..(ox * ow + oy + 1) * od];
                            for (oz, &v) in seg.iter().enumerate() {
                                let iz = (oz * g.stride + kz) as isize - g.pad as isize;
                                if iz >= 0 && (iz as usize) < dd {
                                    let e = &mut xc[base + iz as usize];
                                    *e = *e + v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_5d(op: &'static str, s: &[usize]) -> Result<()> {
    if s.len() != 5 {
        return Err(TensorError::dim(op, "(B, C, H, W, D)", format!("{s:?}")));
    }
    Ok(())
}

fn check_kernel(op: &'static str, ws: &[usize]) -> Result<usize> {
    if ws.len() != 5 || ws[2] != ws[3] || ws[3] != ws[4] {
        return Err(TensorError::dim(op, "cubic kernel (·, ·, k, k, k)", format!("{ws:?}")));
    }
    Ok(ws[2])
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], spatial: usize) {
    for (chunk, &b) in out.chunks_mut(spatial).zip(bias.iter().cycle()) {
        chunk.iter_mut().for_each(|v| *v = *v + b);
    }
}

fn bias_grad<T: Scalar>(dy: &[T], channels: usize, spatial: usize) -> Vec<T> {
    let mut db = vec![T::zero(); channels];
    for (i, chunk) in dy.chunks(spatial).enumerate() {
        db[i % channels] = db[i % channels] + chunk.iter().copied().sum();
    }
    db
}

pub fn conv_output_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let span = input + 2 * pad;
    if stride == 0 || span < k {
        None
    } else {
        Some((span - k) / stride + 1)
    }
}

pub fn deconv_output_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let full = (input - 1) * stride + k;
    if stride == 0 || full <= 2 * pad {
        None
    } else {
        Some(full - 2 * pad)
    }
}

impl<T: Scalar> Graph<T> {
    /// Cross-correlation of `x (B, C_in, H, W, D)` with `w (C_out, C_in, k, k, k)`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        check_5d("conv3d", &xs)?;
        let k = check_kernel("conv3d", &ws)?;
        if ws[1] != xs[1] {
            return Err(TensorError::dim(
                "conv3d",
                format!("C_in {}", ws[1]),
                format!("C_in {}", xs[1]),
            ));
        }
        let (c_out, c_in) = (ws[0], ws[1]);
        let mut coarse = [0; 3];
        for a in 0..3 {
            coarse[a] = conv_output_extent(xs[2 + a], k, stride, pad)
                .ok_or_else(|| TensorError::config("conv3d", format!("non-positive output extent for input {xs:?}")))?;
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(TensorError::dim(
                    "conv3d",
                    format!("bias ({c_out})"),
                    format!("{:?}", self.shape(b)),
                ));
            }
        }
        let g = Geom {
            channels: c_in,
            dense: [xs[2], xs[3], xs[4]],
            coarse,
            k,
            stride,
            pad,
        };
        let (rows, p) = (g.rows(), g.cols());
        let batch = xs[0];
        let mut out = vec![T::zero(); batch * c_out * p];
        let mut cols = vec![T::zero(); rows * p];
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        for n in 0..batch {
            im2col(&xd[n * g.dense_len()..(n + 1) * g.dense_len()], &g, &mut cols);
            gemm(
                false,
                false,
                c_out,
                p,
                rows,
                T::one(),
                wd,
                &cols,
                T::zero(),
                &mut out[n * c_out * p..(n + 1) * c_out * p],
            );
        }
        if let Some(b) = b {
            add_bias(&mut out, self.value(b).data(), p);
        }
        let v = Tensor::new(&[batch, c_out, coarse[0], coarse[1], coarse[2]], out)?;
        Ok(self.push(v, Op::Conv3d { x, w, b, stride, pad }))
    }

    /// Transposed convolution of `x (B, C_in, H, W, D)` with `w (C_in, C_out, k, k, k)`;
    /// the exact adjoint of [`Graph::conv3d`] with the same weight.
    pub fn deconv3d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        check_5d("deconv3d", &xs)?;
        let k = check_kernel("deconv3d", &ws)?;
        if ws[0] != xs[1] {
            return Err(TensorError::dim(
                "deconv3d",
                format!("C_in {}", ws[0]),
                format!("C_in {}", xs[1]),
            ));
        }
        let (c_in, c_out) = (ws[0], ws[1]);
        let mut dense = [0; 3];
        for a in 0..3 {
            dense[a] = deconv_output_extent(xs[2 + a], k, stride, pad).ok_or_else(|| {
                TensorError::config("deconv3d", format!("non-positive output extent for input {xs:?}"))
            })?;
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(TensorError::dim(
                    "deconv3d",
                    format!("bias ({c_out})"),
                    format!("{:?}", self.shape(b)),
                ));
            }
        }
        let g = Geom {
            channels: c_out,
            dense,
            coarse: [xs[2], xs[3], xs[4]],
            k,
            stride,
            pad,
        };
        let (rows, p) = (g.rows(), g.cols());
        let batch = xs[0];
        let out_len = g.dense_len();
        let mut out = vec![T::zero(); batch * out_len];
        let mut cols = vec![T::zero(); rows * p];
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        for n in 0..batch {
            gemm(
                true,
                false,
                rows,
                p,
                c_in,
                T::one(),
                wd,
                &xd[n * c_in * p..(n + 1) * c_in * p],
                T::zero(),
                &mut cols,
            );
            col2im(&cols, &g, &mut out[n * out_len..(n + 1) * out_len]);
        }
        if let Some(b) = b {
            add_bias(&mut out, self.value(b).data(), dense.iter().product());
        }
        let v = Tensor::new(&[batch, c_out, dense[0], dense[1], dense[2]], out)?;
        Ok(self.push(v, Op::Deconv3d { x, w, b, stride, pad }))
    }
}

pub(crate) fn backward<T: Scalar>(g: &Graph<T>, i: usize, grad: &Tensor<T>) -> Option<Vec<(Var, Tensor<T>)>> {
    let res = match g.op(i) {
        Op::Conv3d { x, w, b, stride, pad } => {
            let xs = g.shape(*x);
            let ws = g.shape(*w);
            let os = grad.shape();
            let (c_out, c_in, k) = (ws[0], ws[1], ws[2]);
            let geom = Geom {
                channels: c_in,
                dense: [xs[2], xs[3], xs[4]],
                coarse: [os[2], os[3], os[4]],
                k,
                stride: *stride,
                pad: *pad,
            };
            let (rows, p) = (geom.rows(), geom.cols());
            let xd = g.value(*x).data();
            let wd = g.value(*w).data();
            let dy = grad.data();
            let need_x = g.requires_grad(*x);
            let mut dx = vec![T::zero(); if need_x { xd.len() } else { 0 }];
            let mut dw = vec![T::zero(); wd.len()];
            let mut cols = vec![T::zero(); rows * p];
            for n in 0..xs[0] {
                let dyn_ = &dy[n * c_out * p..(n + 1) * c_out * p];
                im2col(&xd[n * geom.dense_len()..(n + 1) * geom.dense_len()], &geom, &mut cols);
                gemm(false, true, c_out, rows, p, T::one(), dyn_, &cols, T::one(), &mut dw);
                if need_x {
                    gemm(true, false, rows, p, c_out, T::one(), wd, dyn_, T::zero(), &mut cols);
                    col2im(&cols, &geom, &mut dx[n * geom.dense_len()..(n + 1) * geom.dense_len()]);
                }
            }
            let mut res = vec![(*w, Tensor::new(ws, dw).expect("dw"))];
            if need_x {
                res.push((*x, Tensor::new(xs, dx).expect("dx")));
            }
            if let Some(b) = b {
                res.push((*b, Tensor::new(&[c_out], bias_grad(dy, c_out, p)).expect("db")));
            }
            res
        }
        Op::Deconv3d { x, w, b, stride, pad } => {
            let xs = g.shape(*x);
            let ws = g.shape(*w);
            let os = grad.shape();
            let (c_in, c_out, k) = (ws[0], ws[1], ws[2]);
            let geom = Geom {
                channels: c_out,
                dense: [os[2], os[3], os[4]],
                coarse: [xs[2], xs[3], xs[4]],
                k,
                stride: *stride,
                pad: *pad,
            };
            let (rows, p) = (geom.rows(), geom.cols());
            let xd = g.value(*x).data();
            let wd = g.value(*w).data();
            let dy = grad.data();
            let need_x = g.requires_grad(*x);
            let mut dx = vec![T::zero(); if need_x { xd.len() } else { 0 }];
            let mut dw = vec![T::zero(); wd.len()];
            let mut dcols = vec![T::zero(); rows * p];
            let out_len = geom.dense_len();
            for n in 0..xs[0] {
                im2col(&dy[n * out_len..(n + 1) * out_len], &geom, &mut dcols);
                let xn = &xd[n * c_in * p..(n + 1) * c_in * p];
                gemm(false, true, c_in, rows, p, T::one(), xn, &dcols, T::one(), &mut dw);
                if need_x {
                    gemm(
                        false,
                        false,
                        c_in,
                        p,
                        rows,
                        T::one(),
                        wd,
                        &dcols,
                        T::zero(),
                        &mut dx[n * c_in * p..(n + 1) * c_in * p],
                    );
                }
            }
            let mut res = vec![(*w, Tensor::new(ws, dw).expect("dw"))];
            if need_x {
                res.push((*x, Tensor::new(xs, dx).expect("dx")));
            }
            if let Some(b) = b {
                let spatial = os[2] * os[3] * os[4];
                res.push((*b, Tensor::new(&[c_out], bias_grad(dy, c_out, spatial)).expect("db")));
            }
            res
        }
        _ => return None,
    };
    Some(res)
}
