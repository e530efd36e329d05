use crate::error::{Result, TensorError};
use crate::graph::{Graph, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::{split_axis, Tensor};

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape.to_vec();
    s.remove(axis);
    if s.is_empty() {
        s.push(1);
    }
    s
}

impl<T: Scalar> Graph<T> {
    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(TensorError::config(
                op,
                format!("axis {axis} out of range for {:?}", self.shape(x)),
            ));
        }
        Ok(())
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    /// Σ x², the squared Frobenius norm.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|&e| e * e).sum();
        self.push(Tensor::scalar(s), Op::SumSquares(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = T::of(self.value(x).numel() as f64);
        let s = self.sum_all(x);
        self.scale(s, T::one() / n)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("sum_axis", x, axis)?;
        let t = self.value(x);
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let src = t.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let row = &src[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (acc, &e) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc = *acc + e;
                }
            }
        }
        let v = Tensor::new(&reduced_shape(t.shape(), axis), out)?;
        Ok(self.push(v, Op::SumAxis { x, axis }))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("mean_axis", x, axis)?;
        let n = T::of(self.shape(x)[axis] as f64);
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, T::one() / n))
    }

    /// Maximum over `axis`. The gradient goes to the first maximal entry.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("max_axis", x, axis)?;
        let t = self.value(x);
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let src = t.data();
        let mut out = vec![T::zero(); outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for ii in 0..inner {
                let mut best = src[o * n * inner + ii];
                let mut arg = 0;
                for k in 1..n {
                    let e = src[(o * n + k) * inner + ii];
                    if e > best {
                        best = e;
                        arg = k;
                    }
                }
                out[o * inner + ii] = best;
                argmax[o * inner + ii] = arg;
            }
        }
        let v = Tensor::new(&reduced_shape(t.shape(), axis), out)?;
        Ok(self.push(v, Op::MaxAxis { x, axis, argmax }))
    }
}

pub(crate) fn backward<T: Scalar>(g: &Graph<T>, i: usize, grad: &Tensor<T>) -> Option<Vec<(Var, Tensor<T>)>> {
    let res = match g.op(i) {
        Op::SumAll(x) => {
            let d = grad.item();
            vec![(*x, Tensor::full(g.shape(*x), d))]
        }
        Op::SumSquares(x) => {
            let d = grad.item();
            let two = T::of(2.0);
            vec![(*x, g.value(*x).map(|e| two * e * d))]
        }
        Op::SumAxis { x, axis } => {
            let shape = g.shape(*x);
            let (outer, n, inner) = split_axis(shape, *axis);
            let src = grad.data();
            let mut gx = Vec::with_capacity(outer * n * inner);
            for o in 0..outer {
                for _ in 0..n {
                    gx.extend_from_slice(&src[o * inner..(o + 1) * inner]);
                }
            }
            vec![(*x, Tensor::new(shape, gx).expect("sum grad"))]
        }
        Op::MaxAxis { x, axis, argmax } => {
            let shape = g.shape(*x);
            let (outer, n, inner) = split_axis(shape, *axis);
            let src = grad.data();
            let mut gx = vec![T::zero(); outer * n * inner];
            for o in 0..outer {
                for ii in 0..inner {
                    let k = argmax[o * inner + ii];
                    gx[(o * n + k) * inner + ii] = src[o * inner + ii];
                }
            }
            vec![(*x, Tensor::new(shape, gx).expect("max grad"))]
        }
        _ => return None,
    };
    Some(res)
}
