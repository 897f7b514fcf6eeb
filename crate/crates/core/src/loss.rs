//! Training objective: SmoothL1 + (1 − SSIM) + optional perceptual distance.

use hybsens_tensor::{Conv2dSpec, Element, Tensor};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How SSIM statistics are pooled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SsimMode {
    /// Gaussian-weighted local statistics over every fully-contained window.
    #[default]
    Windowed,
    /// One set of statistics per image and channel.
    Global,
}

/// SSIM constants and window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimOptions {
    pub c1: f64,
    pub c2: f64,
    pub window: usize,
    pub sigma: f64,
    pub mode: SsimMode,
}

impl Default for SsimOptions {
    fn default() -> Self {
        SsimOptions { c1: 1e-4, c2: 9e-4, window: 11, sigma: 1.5, mode: SsimMode::Windowed }
    }
}

impl SsimOptions {
    /// Window side actually used for an `h×w` image: the configured size,
    /// shrunk to the largest odd size that fits.
    pub fn window_for(&self, h: usize, w: usize) -> usize {
        let k = self.window.min(h).min(w).max(1);
        if k % 2 == 0 {
            k - 1
        } else {
            k
        }
    }
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_taps(k: usize, sigma: f64) -> Vec<f64> {
    let c = (k as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..k).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Image-pair distance from an external feature network (LPIPS and the like).
pub trait PerceptualDistance<T: Element> {
    fn name(&self) -> &str;

    /// Mean distance over the batch as a scalar tensor. Should be
    /// differentiable in `x` when used for training.
    fn distance(&self, x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>>;
}

/// Mean SSIM between two `(N, C, H, W)` batches, differentiable in both.
pub fn ssim<T: Element>(x: &Tensor<T>, y: &Tensor<T>, opts: &SsimOptions) -> Result<Tensor<T>> {
    if x.shape() != y.shape() {
        return Err(hybsens_tensor::TensorError::mismatch("ssim", x.shape(), y.shape()).into());
    }
    let [_, c, h, w] = x.dims();
    let c1 = T::from_f64_lossy(opts.c1);
    let c2 = T::from_f64_lossy(opts.c2);
    let filter = |t: &Tensor<T>| -> Result<Tensor<T>> {
        match opts.mode {
            SsimMode::Global => Ok(t.global_avg_pool()),
            SsimMode::Windowed => {
                let k = opts.window_for(h, w);
                let g = gaussian_taps(k, opts.sigma);
                let mut kernel = Vec::with_capacity(c * k * k);
                for _ in 0..c {
                    for a in &g {
                        kernel.extend(g.iter().map(|b| a * b));
                    }
                }
                let kernel = Tensor::<T>::from_f64(&kernel, [c, 1, k, k])?;
                Ok(t.conv2d(&kernel, None, Conv2dSpec::default().with_groups(c))?)
            }
        }
    };
    let mx = filter(x)?;
    let my = filter(y)?;
    let mxx = mx.square();
    let myy = my.square();
    let mxy = mx.mul(&my)?;
    let sxx = filter(&x.square())?.sub(&mxx)?;
    let syy = filter(&y.square())?.sub(&myy)?;
    let sxy = filter(&x.mul(y)?)?.sub(&mxy)?;
    let two = T::from_f64_lossy(2.0);
    let num = mxy.scale(two).add_scalar(c1).mul(&sxy.scale(two).add_scalar(c2))?;
    let den = mxx.add(&myy)?.add_scalar(c1).mul(&sxx.add(&syy)?.add_scalar(c2))?;
    Ok(num.div(&den)?.mean())
}

/// Weights and constants of the composite loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub beta: f64,
    pub ssim: SsimOptions,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { w1: 1.0, w2: 0.3, w3: 0.7, beta: 1.0, ssim: SsimOptions::default() }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w1 < 0.0 || self.w2 < 0.0 || self.w3 < 0.0 {
            return Err(Error::config("loss weights must be non-negative"));
        }
        if self.beta <= 0.0 || !self.beta.is_finite() {
            return Err(Error::config("SmoothL1 beta must be positive"));
        }
        if self.ssim.c1 <= 0.0 || self.ssim.c2 <= 0.0 || self.ssim.window == 0 || self.ssim.sigma <= 0.0 {
            return Err(Error::config("SSIM constants, window and sigma must be positive"));
        }
        Ok(())
    }
}

/// Individual terms of one loss evaluation, for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub smooth_l1: f64,
    pub ssim: f64,
    pub perceptual: Option<f64>,
    pub total: f64,
}

/// `w1·SmoothL1 + w2·(1 − SSIM) + w3·perceptual`. Without a perceptual
/// backend the third term is dropped.
pub struct CompositeLoss<T: Element> {
    pub cfg: LossConfig,
    pub perceptual: Option<Box<dyn PerceptualDistance<T>>>,
}

impl<T: Element> std::fmt::Debug for CompositeLoss<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CompositeLoss")
            .field("cfg", &self.cfg)
            .field("perceptual", &self.perceptual.as_ref().map(|p| p.name().to_string()))
            .finish()
    }
}

impl<T: Element> CompositeLoss<T> {
    pub fn new(cfg: LossConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(CompositeLoss { cfg, perceptual: None })
    }

    pub fn with_perceptual(mut self, backend: Box<dyn PerceptualDistance<T>>) -> Self {
        self.perceptual = Some(backend);
        self
    }

    pub fn forward(&self, restored: &Tensor<T>, target: &Tensor<T>) -> Result<(Tensor<T>, LossTerms)> {
        let l1 = restored.smooth_l1(target, T::from_f64_lossy(self.cfg.beta))?;
        let s = ssim(restored, target, &self.cfg.ssim)?;
        let ls = s.neg().add_scalar(T::one());
        let mut total = l1.scale(T::from_f64_lossy(self.cfg.w1)).add(&ls.scale(T::from_f64_lossy(self.cfg.w2)))?;
        let mut terms = LossTerms {
            smooth_l1: l1.item().to_f64().unwrap_or(f64::NAN),
            ssim: s.item().to_f64().unwrap_or(f64::NAN),
            perceptual: None,
            total: 0.0,
        };
        if let Some(p) = &self.perceptual {
            let lp = p.distance(restored, target)?;
            terms.perceptual = lp.item().to_f64();
            total = total.add(&lp.scale(T::from_f64_lossy(self.cfg.w3)))?;
        }
        terms.total = total.item().to_f64().unwrap_or(f64::NAN);
        Ok((total, terms))
    }
}
