use crate::error::{Result, TensorError};
use crate::graph::{Graph, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::{numel, split_axis, Tensor};

pub(crate) fn permute_tensor<T: Scalar>(t: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let shape = t.shape();
    let nd = shape.len();
    let mut in_strides = vec![1usize; nd];
    for k in (0..nd.saturating_sub(1)).rev() {
        in_strides[k] = in_strides[k + 1] * shape[k + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let src = t.data();
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; nd];
    let last = nd - 1;
    let (last_extent, last_stride) = (out_shape[last], strides[last]);
    loop {
        let base: usize = idx[..last].iter().zip(&strides[..last]).map(|(i, s)| i * s).sum();
        for k in 0..last_extent {
            out.push(src[base + k * last_stride]);
        }
        // odometer over all but the last axis
        let mut ax = last;
        loop {
            if ax == 0 {
                return Tensor::new(&out_shape, out).expect("permute shape");
            }
            ax -= 1;
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

fn narrow_data<T: Scalar>(t: &Tensor<T>, axis: usize, start: usize, len: usize) -> Tensor<T> {
    let (outer, n, inner) = split_axis(t.shape(), axis);
    let src = t.data();
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        out.extend_from_slice(&src[base..base + len * inner]);
    }
    let mut shape = t.shape().to_vec();
    shape[axis] = len;
    Tensor::new(&shape, out).expect("narrow shape")
}

impl<T: Scalar> Graph<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    /// Reorder axes: output axis `k` is input axis `perm[k]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let nd = self.shape(x).len();
        let mut seen = vec![false; nd];
        if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::config(
                "permute",
                format!("{perm:?} is not a permutation of {nd} axes"),
            ));
        }
        let v = permute_tensor(self.value(x), perm);
        Ok(self.push(v, Op::Permute { x, perm: perm.to_vec() }))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x);
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(TensorError::config(
                "narrow",
                format!("range {start}+{len} on axis {axis} of {shape:?}"),
            ));
        }
        let v = narrow_data(self.value(x), axis, start, len);
        Ok(self.push(v, Op::Narrow { x, axis, start }))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| TensorError::Precondition("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::config("concat", format!("axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let ok = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(k, (a, b))| k == axis || a == b);
            if !ok {
                return Err(TensorError::dim("concat", format!("{base:?}"), format!("{s:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let t = self.value(x);
                let n = t.shape()[axis];
                out.extend_from_slice(&t.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let v = Tensor::new(&shape, out)?;
        Ok(self.push(v, Op::Concat { xs: xs.to_vec(), axis }))
    }

    /// `(n, r, c)` stack of blocks to a `(n·r, n·c)` block-diagonal matrix.
    pub fn block_diag(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(TensorError::dim("block_diag", "(n, r, c)", format!("{s:?}")));
        }
        let (n, r, c) = (s[0], s[1], s[2]);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * r * n * c];
        for b in 0..n {
            for i in 0..r {
                let row = (b * r + i) * n * c + b * c;
                out[row..row + c].copy_from_slice(&src[(b * r + i) * c..(b * r + i + 1) * c]);
            }
        }
        let v = Tensor::new(&[n * r, n * c], out)?;
        Ok(self.push(v, Op::BlockDiag(x)))
    }
}

pub(crate) fn backward<T: Scalar>(g: &Graph<T>, i: usize, grad: &Tensor<T>) -> Option<Vec<(Var, Tensor<T>)>> {
    let res = match g.op(i) {
        Op::Reshape(x) => {
            let gx = grad.clone().reshaped(g.shape(*x)).expect("reshape grad");
            vec![(*x, gx)]
        }
        Op::Permute { x, perm } => {
            let mut inv = vec![0; perm.len()];
            for (k, &p) in perm.iter().enumerate() {
                inv[p] = k;
            }
            vec![(*x, permute_tensor(grad, &inv))]
        }
        Op::Narrow { x, axis, start } => {
            let in_shape = g.shape(*x);
            let (outer, n, inner) = split_axis(in_shape, *axis);
            let len = grad.shape()[*axis];
            let mut gx = vec![T::zero(); numel(in_shape)];
            for o in 0..outer {
                let dst = (o * n + start) * inner;
                gx[dst..dst + len * inner].copy_from_slice(&grad.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![(*x, Tensor::new(in_shape, gx).expect("narrow grad"))]
        }
        Op::Concat { xs, axis } => {
            let mut start = 0;
            xs.iter()
                .map(|&x| {
                    let len = g.shape(x)[*axis];
                    let part = narrow_data(grad, *axis, start, len);
                    start += len;
                    (x, part)
                })
                .collect()
        }
        Op::BlockDiag(x) => {
            let s = g.shape(*x);
            let (n, r, c) = (s[0], s[1], s[2]);
            let src = grad.data();
            let mut gx = vec![T::zero(); n * r * c];
            for b in 0..n {
                for ii in 0..r {
                    let row = (b * r + ii) * n * c + b * c;
                    gx[(b * r + ii) * c..(b * r + ii + 1) * c].copy_from_slice(&src[row..row + c]);
                }
            }
            vec![(*x, Tensor::new(s, gx).expect("block grad"))]
        }
        _ => return None,
    };
    Some(res)
}
