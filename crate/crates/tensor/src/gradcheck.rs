//! Central finite-difference gradient checking in double precision.

use rand::seq::index::sample;
use rand::SeedableRng;

use crate::{no_grad, Result, Tensor};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Check at most this many entries per tensor (sampled without
    /// replacement); `None` checks every entry.
    pub max_per_tensor: Option<usize>,
    /// Denominator floor for the relative error, so that vanishing gradients
    /// are compared in absolute terms.
    pub floor: f64,
    /// The floor is also raised to `noise_units · ε·|L| / step`, where
    /// `ε·|L| / step` is the rounding error of the central difference itself.
    /// Entries below that resolution cannot be told apart from zero.
    pub noise_units: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-5, max_per_tensor: None, floor: 1e-6, noise_units: 1e4, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct Mismatch {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<Mismatch>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tol
    }
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the reverse-mode gradient of `loss_fn` with respect to each
/// tensor in `wrt` against central differences. `loss_fn` must read the
/// current values of `wrt` every time it is called and return a scalar.
pub fn check<F>(wrt: &[Tensor<f64>], loss_fn: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn() -> Result<Tensor<f64>>,
{
    for t in wrt {
        t.zero_grad();
        t.set_requires_grad(true);
    }
    let loss = loss_fn()?;
    let floor = opts.floor.max(opts.noise_units * f64::EPSILON * loss.item().abs() / opts.step);
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = wrt
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut rng = rand::rngs::StdRng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    let eval = || -> Result<f64> { no_grad(|| loss_fn().map(|l| l.item())) };
    for (ti, t) in wrt.iter().enumerate() {
        let n = t.numel();
        let indices: Vec<usize> = match opts.max_per_tensor {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for idx in indices {
            let orig = t.values()[idx];
            t.values_mut()[idx] = orig + opts.step;
            let plus = eval()?;
            t.values_mut()[idx] = orig - opts.step;
            let minus = eval()?;
            t.values_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[ti][idx];
            let e = rel_err(a, numeric, floor);
            report.checked += 1;
            if e > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(e);
                if e >= report.max_rel_err {
                    report.worst = Some(Mismatch { tensor: ti, index: idx, analytic: a, numeric, rel_err: e });
                }
            }
        }
    }
    Ok(report)
}
