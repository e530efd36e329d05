#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use voxatt_tensor::{grad_check, GradCheckOptions, Graph, Result, Scalar, Tensor, Var};

pub fn rng(seed: u64) -> Xoshiro256StarStar {
    Xoshiro256StarStar::seed_from_u64(seed)
}

pub fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Fixed, non-uniform weights so that reductions do not hide sign errors.
pub fn probe<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|j| (j as f64 * 0.7 + 0.3).sin() + 0.1).collect();
    Tensor::from_f64(shape, &data).unwrap()
}

/// `Σ y ⊙ probe`, a scalar that depends on every entry of `y`.
pub fn weighted_sum<T: Scalar>(g: &mut Graph<T>, y: Var) -> Result<Var> {
    let w = g.constant(probe(g.shape(y)));
    let p = g.mul(y, w)?;
    Ok(g.sum_all(p))
}

pub fn assert_grad_f64(
    name: &str,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    inputs: &[Tensor<f64>],
    tol: f64,
) {
    let report = grad_check(f, inputs, GradCheckOptions::default()).unwrap();
    assert!(
        report.max_rel_error < tol,
        "{name}: max rel error {} at {:?}",
        report.max_rel_error,
        report.worst
    );
}

/// f32 reverse-mode gradients against f64 central differences.
pub fn assert_grad_f32(
    name: &str,
    f32_fn: impl Fn(&mut Graph<f32>, &[Var]) -> Result<Var>,
    f64_fn: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    inputs: &[Tensor<f64>],
    tol: f64,
) {
    let mut g = Graph::<f32>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.cast())).collect();
    let y = f32_fn(&mut g, &vars).unwrap();
    g.backward(y).unwrap();
    let h = 1e-6;
    let eval = |vals: &[Tensor<f64>]| {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.input(t.clone())).collect();
        let y = f64_fn(&mut g, &vars).unwrap();
        g.value(y).item()
    };
    let mut work = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + h;
            let fp = eval(&work);
            work[i].data_mut()[j] = x0 - h;
            let fm = eval(&work);
            work[i].data_mut()[j] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[j] as f64;
            let e = voxatt_tensor::relative_error(a, numeric, 1e-3);
            assert!(e < tol, "{name} (f32): input {i} entry {j}: {a} vs {numeric} (rel {e})");
        }
    }
}
