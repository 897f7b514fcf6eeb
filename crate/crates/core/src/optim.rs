//! AdamW with decoupled weight decay.

use hybsens_tensor::{Element, Tensor};
use serde::{Deserialize, Serialize};

use crate::nn::ParamList;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-2 }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config("AdamW needs betas in [0, 1), eps > 0 and weight_decay >= 0"))
        }
    }
}

/// First and second moment estimates of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// Optimizer state, aligned with the parameter list it was created for.
#[derive(Clone, Debug)]
pub struct AdamW<T: Element> {
    pub cfg: AdamWConfig,
    /// Number of updates applied so far.
    pub step: u64,
    pub names: Vec<String>,
    pub moments: Vec<Moments<T>>,
}

impl<T: Element> AdamW<T> {
    pub fn new(params: &ParamList<T>, cfg: AdamWConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(AdamW {
            cfg,
            step: 0,
            names: params.iter().map(|(n, _)| n.clone()).collect(),
            moments: params
                .iter()
                .map(|(_, p)| Moments { m: vec![T::zero(); p.numel()], v: vec![T::zero(); p.numel()] })
                .collect(),
        })
    }

    fn check_alignment(&self, params: &ParamList<T>) -> Result<()> {
        let aligned = params.len() == self.names.len()
            && params.iter().zip(&self.names).zip(&self.moments).all(|(((n, p), name), mo)| {
                n == name && p.numel() == mo.m.len()
            });
        if aligned {
            Ok(())
        } else {
            Err(Error::config("optimizer state does not match the parameter list"))
        }
    }

    /// Applies one update with learning rate `lr` using the gradients stored
    /// on `params`. Parameters without a gradient are left alone. If any
    /// gradient holds a NaN or infinity nothing is modified.
    pub fn step(&mut self, params: &ParamList<T>, lr: f64) -> Result<()> {
        self.check_alignment(params)?;
        for (name, p) in params {
            if let Some(g) = p.grad_ref().as_ref() {
                if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                    log::error!("gradient of `{name}` is {} at element {i}; skipping the update", g[i]);
                    return Err(Error::NonFiniteGradient(name.clone()));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let decay = T::from_f64_lossy(1.0 - lr * c.weight_decay);
        let step_size = T::from_f64_lossy(lr / bc1);
        let inv_sqrt_bc2 = T::from_f64_lossy(1.0 / bc2.sqrt());
        let eps = T::from_f64_lossy(c.eps);
        for ((_, p), mo) in params.iter().zip(self.moments.iter_mut()) {
            let grad = p.grad_ref();
            let Some(g) = grad.as_ref() else { continue };
            let mut values = p.values_mut();
            for (((x, &gi), m), v) in values.iter_mut().zip(g).zip(mo.m.iter_mut()).zip(mo.v.iter_mut()) {
                *m = b1 * *m + one_b1 * gi;
                *v = b2 * *v + one_b2 * gi * gi;
                *x = *x * decay - step_size * *m / ((*v).sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }

    pub fn zero_grad(params: &ParamList<T>) {
        params.iter().for_each(|(_, p)| p.zero_grad());
    }
}

/// Global L2 norm of all present gradients.
pub fn grad_norm<T: Element>(params: &[(String, Tensor<T>)]) -> f64 {
    params
        .iter()
        .filter_map(|(_, p)| p.grad())
        .flat_map(|g| g.into_iter().map(|v| v.to_f64().unwrap_or(f64::NAN).powi(2)))
        .sum::<f64>()
        .sqrt()
}
