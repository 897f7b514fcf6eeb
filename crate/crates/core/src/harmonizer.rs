//! Decoder fusion through input-conditioned scale/shift calibration.

use hybsens_tensor::{Element, Tensor, TensorError};
use rand::Rng;

use crate::nn::{join, Conv2d, Module, ParamList, PlainBlock};
use crate::Result;

/// Conditioned weighting layer: three parallel convolutions at different
/// kernel sizes, averaged, then projected to the output width.
#[derive(Clone, Debug)]
pub struct Cwl<T: Element> {
    pub branches: Vec<Conv2d<T>>,
    pub proj: Conv2d<T>,
}

impl<T: Element> Cwl<T> {
    pub const KERNELS: [usize; 3] = [1, 3, 5];

    pub fn new<R: Rng + ?Sized>(cin: usize, hidden: usize, cout: usize, rng: &mut R) -> Self {
        Cwl {
            branches: Self::KERNELS.iter().map(|&k| Conv2d::same(cin, hidden, k, rng)).collect(),
            proj: Conv2d::pointwise(hidden, cout, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut acc = self.branches[0].forward(x)?;
        for b in &self.branches[1..] {
            acc = acc.add(&b.forward(x)?)?;
        }
        let avg = acc.scale(T::one() / T::from_usize_lossy(self.branches.len()));
        self.proj.forward(&avg)
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        self.branches.iter().map(|b| b.macs(n, h, w)).sum::<u64>() + self.proj.macs(n, h, w)
    }
}

impl<T: Element> Module<T> for Cwl<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        self.branches.collect_params(&join(prefix, "branches"), out);
        self.proj.collect_params(&join(prefix, "proj"), out);
    }
}

/// `conv1x1(x) ⊙ scale(x) + shift(x)`.
#[derive(Clone, Debug)]
pub struct Calibrator<T: Element> {
    pub main: Conv2d<T>,
    pub scale: Cwl<T>,
    pub shift: Cwl<T>,
}

impl<T: Element> Calibrator<T> {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, hidden: usize, rng: &mut R) -> Self {
        Calibrator {
            main: Conv2d::pointwise(cin, cout, rng),
            scale: Cwl::new(cin, hidden, cout, rng),
            shift: Cwl::new(cin, hidden, cout, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let m = self.main.forward(x)?;
        Ok(m.mul(&self.scale.forward(x)?)?.add(&self.shift.forward(x)?)?)
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        let co = self.main.out_channels();
        self.main.macs(n, h, w) + self.scale.macs(n, h, w) + self.shift.macs(n, h, w) + (n * co * h * w) as u64
    }
}

impl<T: Element> Module<T> for Calibrator<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        self.main.collect_params(&join(prefix, "main"), out);
        self.scale.collect_params(&join(prefix, "scale"), out);
        self.shift.collect_params(&join(prefix, "shift"), out);
    }
}

/// Concatenates skip and upsampled features and refines them, either with
/// a chain of calibrators or (ablated) with a plain conv block.
#[derive(Clone, Debug)]
pub enum ScaleHarmonizer<T: Element> {
    Calibrated(Vec<Calibrator<T>>),
    Plain(PlainBlock<T>),
}

#[derive(Clone, Copy, Debug)]
pub struct HarmonizerOptions {
    pub enabled: bool,
    pub stages: usize,
    /// CWL hidden width as a fraction of the output width.
    pub cwl_ratio: f64,
    pub plain_expansion: f64,
}

impl<T: Element> ScaleHarmonizer<T> {
    pub const DEFAULT_STAGES: usize = 3;

    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, opts: &HarmonizerOptions, rng: &mut R) -> Self {
        if !opts.enabled {
            return ScaleHarmonizer::Plain(PlainBlock::new(cin, cout, opts.plain_expansion, rng));
        }
        let hidden = ((opts.cwl_ratio * cout as f64).round() as usize).max(1);
        let stages = (0..opts.stages)
            .map(|i| Calibrator::new(if i == 0 { cin } else { cout }, cout, hidden, rng))
            .collect();
        ScaleHarmonizer::Calibrated(stages)
    }

    pub fn out_channels(&self) -> usize {
        match self {
            ScaleHarmonizer::Calibrated(s) => s.last().map_or(0, |c| c.main.out_channels()),
            ScaleHarmonizer::Plain(p) => p.out_channels(),
        }
    }

    pub fn refine(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            ScaleHarmonizer::Calibrated(stages) => {
                let mut x = x.clone();
                for s in stages {
                    x = s.forward(&x)?;
                }
                Ok(x)
            }
            ScaleHarmonizer::Plain(p) => p.forward(x),
        }
    }

    pub fn forward(&self, skip: &Tensor<T>, up: &Tensor<T>) -> Result<Tensor<T>> {
        let (s, u) = (skip.shape(), up.shape());
        if (s.n(), s.h(), s.w()) != (u.n(), u.h(), u.w()) {
            return Err(TensorError::mismatch("scale_harmonizer", s, u).into());
        }
        self.refine(&Tensor::cat_channels(&[skip.clone(), up.clone()])?)
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        match self {
            ScaleHarmonizer::Calibrated(stages) => stages.iter().map(|s| s.macs(n, h, w)).sum(),
            ScaleHarmonizer::Plain(p) => p.macs(n, h, w),
        }
    }
}

impl<T: Element> Module<T> for ScaleHarmonizer<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        match self {
            ScaleHarmonizer::Calibrated(stages) => stages.collect_params(&join(prefix, "stages"), out),
            ScaleHarmonizer::Plain(p) => p.collect_params(&join(prefix, "plain"), out),
        }
    }
}
