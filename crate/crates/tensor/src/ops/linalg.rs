use crate::error::{Result, TensorError};
use crate::gemm::gemm;
use crate::graph::{Graph, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Graph<T> {
    /// Affine map over the last axis: `x (…, F_in) · wᵀ + b` with
    /// `w (F_out, F_in)` and `b (F_out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 {
            return Err(TensorError::dim("dense", "weight (F_out, F_in)", format!("{ws:?}")));
        }
        let (f_out, f_in) = (ws[0], ws[1]);
        if *xs.last().unwrap() != f_in {
            return Err(TensorError::dim(
                "dense",
                format!("last axis {f_in}"),
                format!("{xs:?}"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [f_out] {
                return Err(TensorError::dim(
                    "dense",
                    format!("bias ({f_out})"),
                    format!("{:?}", self.shape(b)),
                ));
            }
        }
        let m = self.value(x).numel() / f_in;
        let mut out = vec![T::zero(); m * f_out];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(f_out) {
                row.copy_from_slice(bias);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        gemm(
            false,
            true,
            m,
            f_out,
            f_in,
            T::one(),
            self.value(x).data(),
            self.value(w).data(),
            beta,
            &mut out,
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = f_out;
        let v = Tensor::new(&shape, out)?;
        Ok(self.push(v, Op::Linear { x, w, b }))
    }

    /// Batched matrix product over matching leading axes:
    /// `a (…, m, k) · b (…, k, n)`, or `b (…, n, k)` transposed when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(TensorError::dim("bmm", format!("{sa:?}"), format!("{sb:?}")));
        }
        let nd = sa.len();
        let (m, k) = (sa[nd - 2], sa[nd - 1]);
        let (kb, n) = if trans_b {
            (sb[nd - 1], sb[nd - 2])
        } else {
            (sb[nd - 2], sb[nd - 1])
        };
        if k != kb {
            return Err(TensorError::dim("bmm", format!("inner {k}"), format!("inner {kb}")));
        }
        let batch: usize = sa[..nd - 2].iter().product();
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); batch * m * n];
        for p in 0..batch {
            gemm(
                false,
                trans_b,
                m,
                n,
                k,
                T::one(),
                &da[p * m * k..(p + 1) * m * k],
                &db[p * k * n..(p + 1) * k * n],
                T::zero(),
                &mut out[p * m * n..(p + 1) * m * n],
            );
        }
        let mut shape = sa;
        shape[nd - 1] = n;
        let v = Tensor::new(&shape, out)?;
        Ok(self.push(v, Op::Bmm { a, b, trans_b }))
    }
}

pub(crate) fn backward<T: Scalar>(g: &Graph<T>, i: usize, grad: &Tensor<T>) -> Option<Vec<(Var, Tensor<T>)>> {
    let res = match g.op(i) {
        Op::Linear { x, w, b } => {
            let ws = g.shape(*w);
            let (f_out, f_in) = (ws[0], ws[1]);
            let xv = g.value(*x);
            let m = xv.numel() / f_in;
            let dy = grad.data();
            let mut res = Vec::with_capacity(3);
            if g.requires_grad(*x) {
                let mut dx = vec![T::zero(); m * f_in];
                gemm(
                    false,
                    false,
                    m,
                    f_in,
                    f_out,
                    T::one(),
                    dy,
                    g.value(*w).data(),
                    T::zero(),
                    &mut dx,
                );
                res.push((*x, Tensor::new(xv.shape(), dx).expect("dx")));
            }
            if g.requires_grad(*w) {
                let mut dw = vec![T::zero(); f_out * f_in];
                gemm(true, false, f_out, f_in, m, T::one(), dy, xv.data(), T::zero(), &mut dw);
                res.push((*w, Tensor::new(ws, dw).expect("dw")));
            }
            if let Some(b) = b {
                let mut db = vec![T::zero(); f_out];
                for row in dy.chunks(f_out) {
                    for (acc, &e) in db.iter_mut().zip(row) {
                        *acc = *acc + e;
                    }
                }
                res.push((*b, Tensor::new(&[f_out], db).expect("db")));
            }
            res
        }
        Op::Bmm { a, b, trans_b } => {
            let sa = g.shape(*a);
            let sb = g.shape(*b);
            let nd = sa.len();
            let (m, k) = (sa[nd - 2], sa[nd - 1]);
            let n = grad.shape()[nd - 1];
            let batch: usize = sa[..nd - 2].iter().product();
            let (va, vb) = (g.value(*a).data(), g.value(*b).data());
            let dy = grad.data();
            let mut da = vec![T::zero(); batch * m * k];
            let mut db = vec![T::zero(); batch * k * n];
            for p in 0..batch {
                let dyp = &dy[p * m * n..(p + 1) * m * n];
                let bp = &vb[p * k * n..(p + 1) * k * n];
                let ap = &va[p * m * k..(p + 1) * m * k];
                // dA = dY · op(B)ᵀ
                gemm(
                    false,
                    !*trans_b,
                    m,
                    k,
                    n,
                    T::one(),
                    dyp,
                    bp,
                    T::zero(),
                    &mut da[p * m * k..(p + 1) * m * k],
                );
                if *trans_b {
                    // B stored (n, k): dB = dYᵀ · A
                    gemm(
                        true,
                        false,
                        n,
                        k,
                        m,
                        T::one(),
                        dyp,
                        ap,
                        T::zero(),
                        &mut db[p * k * n..(p + 1) * k * n],
                    );
                } else {
                    // B stored (k, n): dB = Aᵀ · dY
                    gemm(
                        true,
                        false,
                        k,
                        n,
                        m,
                        T::one(),
                        ap,
                        dyp,
                        T::zero(),
                        &mut db[p * k * n..(p + 1) * k * n],
                    );
                }
            }
            vec![
                (*a, Tensor::new(sa, da).expect("da")),
                (*b, Tensor::new(sb, db).expect("db")),
            ]
        }
        _ => return None,
    };
    Some(res)
}
