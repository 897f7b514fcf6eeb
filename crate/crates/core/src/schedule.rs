//! Learning-rate schedules.

/// Cosine annealing from `lr_init` at step 0 to `lr_min` at `total`.
/// Steps past `total` (and any step of a zero-length schedule) stay at
/// `lr_min`.
pub fn cosine_lr(step: usize, total: usize, lr_init: f64, lr_min: f64) -> f64 {
    if total == 0 || step >= total {
        return lr_min;
    }
    let t = step as f64 / total as f64;
    lr_min + 0.5 * (lr_init - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Learning rate of every step of a run of `steps` optimizer updates; the
/// first update uses `lr_init` and the last one `lr_min`.
pub fn cosine_schedule(steps: usize, lr_init: f64, lr_min: f64) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![lr_init],
        _ => (0..steps).map(|s| cosine_lr(s, steps - 1, lr_init, lr_min)).collect(),
    }
}
