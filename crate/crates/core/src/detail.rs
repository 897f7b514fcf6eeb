//! Encoder-side detail restoration: residual context blocks, activation-free
//! gated blocks, and the quaternion units that fuse them.

use hybsens_tensor::{Element, Tensor};
use rand::Rng;

use crate::nn::{join, lrelu, simple_gate, Conv2d, Dropout, Module, ParamList, PlainBlock};
use crate::quaternion::QuaternionFusion;
use crate::Result;

/// Global context pooling with a spatial-softmax attention mask.
#[derive(Clone, Debug)]
pub struct ContextBlock<T: Element> {
    pub mask: Conv2d<T>,
    pub transform1: Conv2d<T>,
    pub transform2: Conv2d<T>,
}

impl<T: Element> ContextBlock<T> {
    pub fn new<R: Rng + ?Sized>(c: usize, rng: &mut R) -> Self {
        ContextBlock {
            mask: Conv2d::pointwise(c, 1, rng),
            transform1: Conv2d::pointwise(c, c, rng),
            transform2: Conv2d::pointwise(c, c, rng),
        }
    }

    /// Returns the output and the `(N, 1, 1, HW)` spatial mask.
    pub fn forward_with_mask(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let [n, c, h, w] = x.dims();
        let mask = self.mask.forward(x)?.reshape([n, 1, 1, h * w])?.softmax(3)?;
        let flat = x.reshape([n, 1, c, h * w])?;
        let context = flat.matmul_nt(&mask)?.reshape([n, c, 1, 1])?;
        let context = self.transform2.forward(&lrelu(&self.transform1.forward(&context)?))?;
        Ok((x.add(&context)?, mask))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_with_mask(x)?.0)
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        let c = self.transform1.out_channels();
        self.mask.macs(n, h, w)
            + (n * c * h * w) as u64
            + self.transform1.macs(n, 1, 1)
            + self.transform2.macs(n, 1, 1)
    }
}

impl<T: Element> Module<T> for ContextBlock<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        self.mask.collect_params(&join(prefix, "mask"), out);
        self.transform1.collect_params(&join(prefix, "transform1"), out);
        self.transform2.collect_params(&join(prefix, "transform2"), out);
    }
}

/// Residual context block: `x + LReLU(ctx(dw(LReLU(dw(x)))))`.
#[derive(Clone, Debug)]
pub struct Rcb<T: Element> {
    pub dw1: Conv2d<T>,
    pub dw2: Conv2d<T>,
    pub context: ContextBlock<T>,
}

impl<T: Element> Rcb<T> {
    pub fn new<R: Rng + ?Sized>(c: usize, rng: &mut R) -> Self {
        Rcb { dw1: Conv2d::depthwise(c, 3, rng), dw2: Conv2d::depthwise(c, 3, rng), context: ContextBlock::new(c, rng) }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let r = lrelu(&self.dw1.forward(x)?);
        let r = self.context.forward(&self.dw2.forward(&r)?)?;
        Ok(x.add(&lrelu(&r))?)
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        self.dw1.macs(n, h, w) + self.dw2.macs(n, h, w) + self.context.macs(n, h, w)
    }
}

impl<T: Element> Module<T> for Rcb<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        self.dw1.collect_params(&join(prefix, "dw1"), out);
        self.dw2.collect_params(&join(prefix, "dw2"), out);
        self.context.collect_params(&join(prefix, "context"), out);
    }
}

/// Nonlinear activation-free block: two gated residual parts, the first with
/// simple channel attention.
#[derive(Debug)]
pub struct Nafb<T: Element> {
    pub expand1: Conv2d<T>,
    pub dw1: Conv2d<T>,
    pub sca: Conv2d<T>,
    pub project1: Conv2d<T>,
    pub expand2: Conv2d<T>,
    pub dw2: Conv2d<T>,
    pub project2: Conv2d<T>,
    pub dropout: Dropout,
}

impl<T: Element> Nafb<T> {
    pub fn new<R: Rng + ?Sized>(c: usize, dropout: Dropout, rng: &mut R) -> Self {
        Nafb {
            expand1: Conv2d::pointwise(c, 2 * c, rng),
            dw1: Conv2d::depthwise(2 * c, 3, rng),
            sca: Conv2d::pointwise(c, c, rng),
            project1: Conv2d::pointwise(c, c, rng),
            expand2: Conv2d::pointwise(c, 2 * c, rng),
            dw2: Conv2d::depthwise(2 * c, 3, rng),
            project2: Conv2d::pointwise(c, c, rng),
            dropout,
        }
    }

    fn drop(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        self.dropout.apply(x)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let t = simple_gate(&self.dw1.forward(&self.expand1.forward(x)?)?)?;
        let t = t.mul(&self.sca.forward(&t.global_avg_pool())?)?;
        let y = x.add(&self.drop(self.project1.forward(&t)?)?)?;
        let t = simple_gate(&self.dw2.forward(&self.expand2.forward(&y)?)?)?;
        Ok(y.add(&self.drop(self.project2.forward(&t)?)?)?)
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        let c = self.project1.out_channels();
        let gate = (n * c * h * w) as u64;
        self.expand1.macs(n, h, w)
            + self.dw1.macs(n, h, w)
            + gate
            + self.sca.macs(n, 1, 1)
            + gate
            + self.project1.macs(n, h, w)
            + self.expand2.macs(n, h, w)
            + self.dw2.macs(n, h, w)
            + gate
            + self.project2.macs(n, h, w)
    }
}

impl<T: Element> Module<T> for Nafb<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        self.expand1.collect_params(&join(prefix, "expand1"), out);
        self.dw1.collect_params(&join(prefix, "dw1"), out);
        self.sca.collect_params(&join(prefix, "sca"), out);
        self.project1.collect_params(&join(prefix, "project1"), out);
        self.expand2.collect_params(&join(prefix, "expand2"), out);
        self.dw2.collect_params(&join(prefix, "dw2"), out);
        self.project2.collect_params(&join(prefix, "project2"), out);
    }
}

/// One encoder unit. With either branch enabled the branches are fused by a
/// quaternion conv (a disabled branch leaves its slot at zero); with both
/// disabled the unit is a plain conv block.
#[derive(Debug)]
pub enum DetailUnit<T: Element> {
    Quaternion { rcb: Option<Rcb<T>>, nafb: Option<Nafb<T>>, fusion: QuaternionFusion<T> },
    Plain(PlainBlock<T>),
}

#[derive(Clone, Debug)]
pub struct DetailOptions {
    pub use_rcb: bool,
    pub use_nafb: bool,
    pub quaternion_kernel: usize,
    pub dropout: Dropout,
    pub plain_expansion: f64,
}

impl<T: Element> DetailUnit<T> {
    pub fn new<R: Rng + ?Sized>(c: usize, opts: &DetailOptions, rng: &mut R) -> Self {
        if !opts.use_rcb && !opts.use_nafb {
            return DetailUnit::Plain(PlainBlock::new(c, c, opts.plain_expansion, rng));
        }
        DetailUnit::Quaternion {
            rcb: opts.use_rcb.then(|| Rcb::new(c, rng)),
            nafb: opts.use_nafb.then(|| Nafb::new(c, opts.dropout.clone(), rng)),
            fusion: QuaternionFusion::new(c, opts.quaternion_kernel, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            DetailUnit::Quaternion { rcb, nafb, fusion } => {
                let a = rcb.as_ref().map(|m| m.forward(x)).transpose()?;
                let b = nafb.as_ref().map(|m| m.forward(x)).transpose()?;
                fusion.forward([a.as_ref(), b.as_ref(), None])
            }
            DetailUnit::Plain(p) => p.forward(x),
        }
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        match self {
            DetailUnit::Quaternion { rcb, nafb, fusion } => {
                let slots = rcb.is_some() as usize + nafb.is_some() as usize;
                rcb.as_ref().map_or(0, |m| m.macs(n, h, w))
                    + nafb.as_ref().map_or(0, |m| m.macs(n, h, w))
                    + fusion.macs(slots, n, h, w)
            }
            DetailUnit::Plain(p) => p.macs(n, h, w),
        }
    }
}

impl<T: Element> Module<T> for DetailUnit<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        match self {
            DetailUnit::Quaternion { rcb, nafb, fusion } => {
                rcb.collect_params(&join(prefix, "rcb"), out);
                nafb.collect_params(&join(prefix, "nafb"), out);
                fusion.collect_params(&join(prefix, "fusion"), out);
            }
            DetailUnit::Plain(p) => p.collect_params(&join(prefix, "plain"), out),
        }
    }
}

/// A sequence of detail units at one encoder scale (shape-preserving).
#[derive(Debug)]
pub struct DetailRestorer<T: Element> {
    pub units: Vec<DetailUnit<T>>,
}

impl<T: Element> DetailRestorer<T> {
    pub const DEFAULT_UNITS: usize = 6;

    pub fn new<R: Rng + ?Sized>(c: usize, units: usize, opts: &DetailOptions, rng: &mut R) -> Self {
        DetailRestorer { units: (0..units).map(|_| DetailUnit::new(c, opts, rng)).collect() }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = x.clone();
        for u in &self.units {
            x = u.forward(&x)?;
        }
        Ok(x)
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        self.units.iter().map(|u| u.macs(n, h, w)).sum()
    }
}

impl<T: Element> Module<T> for DetailRestorer<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        self.units.collect_params(prefix, out);
    }
}
