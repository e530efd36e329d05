use crate::error::{Result, TensorError};
use crate::graph::{Graph, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::{split_axis, Tensor};

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("shape preserved")
}

impl<T: Scalar> Graph<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::dim(
                op,
                format!("{:?}", self.shape(a)),
                format!("{:?}", self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let v = self.value(x).map(|e| e * c);
        self.push(v, Op::Scale(x, c))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.exp());
        self.push(v, Op::Exp(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let v = self.value(x).map(|e| if e > T::zero() { e } else { e * slope });
        self.push(v, Op::LeakyRelu(x, slope))
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::config(
                "softmax",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * n + k) * inner + i;
                let mut m = T::neg_infinity();
                for k in 0..n {
                    m = m.max(src[idx(k)]);
                }
                let mut s = T::zero();
                for k in 0..n {
                    let e = (src[idx(k)] - m).exp();
                    out[idx(k)] = e;
                    s = s + e;
                }
                for k in 0..n {
                    out[idx(k)] = out[idx(k)] / s;
                }
            }
        }
        let v = Tensor::new(&shape, out)?;
        Ok(self.push(v, Op::Softmax { x, axis }))
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn backward<T: Scalar>(g: &Graph<T>, i: usize, grad: &Tensor<T>) -> Option<Vec<(Var, Tensor<T>)>> {
    let out = g.node_value(i);
    let res = match g.op(i) {
        Op::Add(a, b) => vec![(*a, grad.clone()), (*b, grad.clone())],
        Op::Sub(a, b) => vec![(*a, grad.clone()), (*b, grad.map(|e| -e))],
        Op::Mul(a, b) => {
            let (va, vb) = (g.value(*a), g.value(*b));
            vec![
                (*a, zip_map(grad, vb, |d, y| d * y)),
                (*b, zip_map(grad, va, |d, x| d * x)),
            ]
        }
        Op::Scale(x, c) => {
            let c = *c;
            vec![(*x, grad.map(|e| e * c))]
        }
        Op::Exp(x) => vec![(*x, zip_map(grad, out, |d, y| d * y))],
        Op::Sigmoid(x) => vec![(*x, zip_map(grad, out, |d, y| d * y * (T::one() - y)))],
        Op::LeakyRelu(x, slope) => {
            let slope = *slope;
            let vx = g.value(*x);
            vec![(*x, zip_map(grad, vx, |d, e| if e > T::zero() { d } else { d * slope }))]
        }
        Op::Softmax { x, axis } => {
            let (outer, n, inner) = split_axis(out.shape(), *axis);
            let y = out.data();
            let d = grad.data();
            let mut dx = vec![T::zero(); y.len()];
            for o in 0..outer {
                for ii in 0..inner {
                    let idx = |k: usize| (o * n + k) * inner + ii;
                    let dot: T = (0..n).map(|k| d[idx(k)] * y[idx(k)]).sum();
                    for k in 0..n {
                        dx[idx(k)] = y[idx(k)] * (d[idx(k)] - dot);
                    }
                }
            }
            vec![(*x, Tensor::new(out.shape(), dx).expect("shape"))]
        }
        _ => return None,
    };
    Some(res)
}
