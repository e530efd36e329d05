//! Central finite-difference verification of reverse-mode gradients.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::optim::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Lower bound on the relative-error denominator, so entries whose true
    /// gradient is zero are judged by absolute error.
    pub floor: f64,
    /// Check at most this many evenly strided entries per input.
    pub max_entries: Option<usize>,
    /// Skip entries whose stencil straddles a point where the function is
    /// not differentiable (a leaky-ReLU knee, a max switch, a lattice
    /// crossing in trilinear sampling). Central differences at h and h/2
    /// must agree within `kink_tolerance`, which catches knees away from
    /// the centre, and the second differences at h and h/2 must agree within
    /// `curvature_tolerance` (in gradient units), which catches knees at the
    /// centre. Skips are counted in the report. Accepted entries use the
    /// Richardson combination of the two central estimates.
    pub skip_kinks: bool,
    pub kink_tolerance: f64,
    pub curvature_tolerance: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            floor: 1e-3,
            max_entries: None,
            skip_kinks: false,
            kink_tolerance: 1e-6,
            curvature_tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, flat element index) of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Entries left out because their stencil crossed a kink.
    pub skipped: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn entries(len: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < len => {
            let stride = len as f64 / m as f64;
            (0..m).map(|i| (i as f64 * stride) as usize).collect()
        }
        _ => (0..len).collect(),
    }
}

fn scalar_of(g: &Graph<f64>, v: Var, input: usize, index: usize) -> Result<f64> {
    let t = g.value(v);
    if t.numel() != 1 {
        return Err(TensorError::dim(
            "grad_check",
            "scalar output",
            format!("{:?}", t.shape()),
        ));
    }
    let y = t.item();
    if !y.is_finite() {
        return Err(TensorError::NonFinite { input, index });
    }
    Ok(y)
}

struct Tracker {
    report: GradCheckReport,
    opts: GradCheckOptions,
}

impl Tracker {
    fn new(opts: GradCheckOptions) -> Self {
        Tracker {
            report: GradCheckReport {
                max_rel_error: 0.0,
                worst: None,
                checked: 0,
                skipped: 0,
            },
            opts,
        }
    }

    /// Central difference at `x0`, or `None` when the kink test rejects it.
    fn numeric(&mut self, x0: f64, mut at: impl FnMut(f64) -> Result<f64>) -> Result<Option<f64>> {
        let h = self.opts.h;
        let (fp, fm) = (at(x0 + h)?, at(x0 - h)?);
        let d = (fp - fm) / (2.0 * h);
        if self.opts.skip_kinks {
            let (f0, fp2, fm2) = (at(x0)?, at(x0 + h / 2.0)?, at(x0 - h / 2.0)?);
            let d2 = (fp2 - fm2) / h;
            // h·(f''(h) − f''(h/2)): O(h³) when smooth, the slope jump at a centred knee
            let bend = ((fp - 2.0 * f0 + fm) - 4.0 * (fp2 - 2.0 * f0 + fm2)) / h;
            let scale = d.abs().max(self.opts.floor);
            if relative_error(d, d2, self.opts.floor) > self.opts.kink_tolerance
                || bend.abs() / scale > self.opts.curvature_tolerance
            {
                self.report.skipped += 1;
                return Ok(None);
            }
            // Richardson extrapolation cancels the h² truncation term
            return Ok(Some((4.0 * d2 - d) / 3.0));
        }
        Ok(Some(d))
    }

    fn record(&mut self, input: usize, index: usize, analytic: f64, numeric: f64) -> Result<()> {
        if !analytic.is_finite() {
            return Err(TensorError::NonFinite { input, index });
        }
        let e = relative_error(analytic, numeric, self.opts.floor);
        self.report.checked += 1;
        if self.report.worst.is_none() || e > self.report.max_rel_error {
            self.report.max_rel_error = e;
            self.report.worst = Some((input, index));
        }
        Ok(())
    }
}

/// Compare the reverse-mode gradient of the scalar `f(inputs)` with central
/// differences `(f(x+h) − f(x−h)) / 2h`, entry by entry.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    for (i, t) in inputs.iter().enumerate() {
        if let Some(j) = t.data().iter().position(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite { input: i, index: j });
        }
    }
    let eval = |values: &[Tensor<f64>], input: usize, index: usize| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.input(t.clone())).collect();
        let y = f(&mut g, &vars)?;
        scalar_of(&g, y, input, index)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let y = f(&mut g, &vars)?;
    scalar_of(&g, y, 0, 0)?;
    g.backward(y)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut tracker = Tracker::new(opts);
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in entries(inputs[i].numel(), opts.max_entries) {
            let x0 = inputs[i].data()[j];
            let numeric = tracker.numeric(x0, |x| {
                work[i].data_mut()[j] = x;
                eval(&work, i, j)
            })?;
            work[i].data_mut()[j] = x0;
            if let Some(d) = numeric {
                tracker.record(i, j, analytic[i].data()[j], d)?;
            }
        }
    }
    Ok(tracker.report)
}

/// [`grad_check`] over named parameters of a store. `f` builds the scalar
/// objective by binding parameters from the store it is given.
pub fn grad_check_params<F>(
    store: &mut ParamStore<f64>,
    names: &[&str],
    f: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let ids: Vec<ParamId> = names.iter().map(|n| store.id(n)).collect::<Result<_>>()?;
    let mut g = Graph::new();
    let y = f(&mut g, store)?;
    scalar_of(&g, y, 0, 0)?;
    g.backward(y)?;
    let analytic: Vec<Tensor<f64>> = ids
        .iter()
        .map(|&id| {
            g.binding(id.0)
                .and_then(|v| g.grad(v).cloned())
                .unwrap_or_else(|| Tensor::zeros(store.get(id).value.shape()))
        })
        .collect();

    let mut tracker = Tracker::new(opts);
    for (i, &id) in ids.iter().enumerate() {
        for j in entries(store.get(id).value.numel(), opts.max_entries) {
            let x0 = store.get(id).value.data()[j];
            let numeric = tracker.numeric(x0, |x| {
                store.get_mut(id).value.data_mut()[j] = x;
                let mut g = Graph::new();
                let y = f(&mut g, store)?;
                scalar_of(&g, y, i, j)
            })?;
            store.get_mut(id).value.data_mut()[j] = x0;
            if let Some(d) = numeric {
                tracker.record(i, j, analytic[i].data()[j], d)?;
            }
        }
    }
    Ok(tracker.report)
}
