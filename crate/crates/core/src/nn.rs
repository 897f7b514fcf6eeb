//! Parameterised building blocks shared by every stage of the network.

use std::cell::RefCell;
use std::rc::Rc;

use hybsens_tensor::{is_grad_enabled, Conv2dSpec, Element, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Result;

/// Named parameter list in registration order.
pub type ParamList<T> = Vec<(String, Tensor<T>)>;

/// Anything that owns trainable tensors.
pub trait Module<T: Element> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>);

    fn params(&self) -> ParamList<T> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T: Element, M: Module<T>> Module<T> for Vec<M> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        for (i, m) in self.iter().enumerate() {
            m.collect_params(&join(prefix, &i.to_string()), out);
        }
    }
}

impl<T: Element, M: Module<T>> Module<T> for Option<M> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        if let Some(m) = self {
            m.collect_params(prefix, out);
        }
    }
}

/// Dropout rate plus the random stream its masks are drawn from. Clones
/// share the stream, so one handle can reseed every block of a model.
#[derive(Clone, Debug)]
pub struct Dropout {
    pub p: f64,
    rng: Rc<RefCell<ChaCha8Rng>>,
}

impl Dropout {
    pub fn new(p: f64, seed: u64) -> Self {
        Dropout { p, rng: Rc::new(RefCell::new(ChaCha8Rng::seed_from_u64(seed))) }
    }

    pub fn reseed(&self, seed: u64) {
        *self.rng.borrow_mut() = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Applies dropout while a graph is being recorded; identity otherwise.
    pub fn apply<T: Element>(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        if self.p > 0.0 && is_grad_enabled() {
            Ok(x.dropout(self.p, &mut *self.rng.borrow_mut())?)
        } else {
            Ok(x)
        }
    }
}

pub(crate) const LRELU_SLOPE: f64 = 0.2;

pub(crate) fn lrelu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.leaky_relu(T::from_f64_lossy(LRELU_SLOPE))
}

/// 2-D convolution layer with PyTorch-style uniform initialisation.
#[derive(Clone, Debug)]
pub struct Conv2d<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub spec: Conv2dSpec,
}

impl<T: Element> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        k: usize,
        spec: Conv2dSpec,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = (cin / spec.groups) * k * k;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Tensor::uniform([cout, cin / spec.groups, k, k], -bound, bound, rng).requires_grad_(true);
        let bias = bias.then(|| Tensor::uniform(Shape::channels(cout), -bound, bound, rng).requires_grad_(true));
        Conv2d { weight, bias, spec }
    }

    /// `k×k` stride-1 convolution with same padding.
    pub fn same<R: Rng + ?Sized>(cin: usize, cout: usize, k: usize, rng: &mut R) -> Self {
        Self::new(cin, cout, k, Conv2dSpec::same(k), true, rng)
    }

    pub fn pointwise<R: Rng + ?Sized>(cin: usize, cout: usize, rng: &mut R) -> Self {
        Self::same(cin, cout, 1, rng)
    }

    /// `k×k` depthwise convolution over `c` channels.
    pub fn depthwise<R: Rng + ?Sized>(c: usize, k: usize, rng: &mut R) -> Self {
        Self::new(c, c, k, Conv2dSpec::same(k).with_groups(c), true, rng)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.conv2d(&self.weight, self.bias.as_ref(), self.spec)?)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1] * self.spec.groups
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let [_, _, kh, kw] = self.weight.dims();
        self.spec.output_hw(h, w, kh, kw).unwrap_or((0, 0))
    }

    /// Multiply-accumulates for one call on an `n×·×h×w` input.
    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        let [co, cig, kh, kw] = self.weight.dims();
        let (ho, wo) = self.output_hw(h, w);
        (n * co * cig * kh * kw * ho * wo) as u64
    }
}

impl<T: Element> Module<T> for Conv2d<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((join(prefix, "bias"), b.clone()));
        }
    }
}

/// Layer normalisation across channels at every pixel.
#[derive(Clone, Debug)]
pub struct LayerNorm<T: Element> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: f64,
}

impl<T: Element> LayerNorm<T> {
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(c: usize) -> Self {
        LayerNorm {
            gamma: Tensor::ones(Shape::channels(c)).requires_grad_(true),
            beta: Tensor::zeros(Shape::channels(c)).requires_grad_(true),
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.layer_norm_channels(&self.gamma, &self.beta, T::from_f64_lossy(self.eps))?)
    }
}

impl<T: Element> Module<T> for LayerNorm<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        out.push((join(prefix, "gamma"), self.gamma.clone()));
        out.push((join(prefix, "beta"), self.beta.clone()));
    }
}

/// conv3×3 → LeakyReLU → conv3×3, with a residual when the widths agree.
/// Stands in for a disabled block in ablation configurations.
#[derive(Clone, Debug)]
pub struct PlainBlock<T: Element> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
}

impl<T: Element> PlainBlock<T> {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, expansion: f64, rng: &mut R) -> Self {
        let hidden = ((expansion * cout as f64).round() as usize).max(1);
        PlainBlock { conv1: Conv2d::same(cin, hidden, 3, rng), conv2: Conv2d::same(hidden, cout, 3, rng) }
    }

    fn residual(&self) -> bool {
        self.conv1.in_channels() == self.conv2.out_channels()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.conv2.forward(&lrelu(&self.conv1.forward(x)?))?;
        if self.residual() {
            Ok(y.add(x)?)
        } else {
            Ok(y)
        }
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        self.conv1.macs(n, h, w) + self.conv2.macs(n, h, w)
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.out_channels()
    }
}

impl<T: Element> Module<T> for PlainBlock<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        self.conv1.collect_params(&join(prefix, "conv1"), out);
        self.conv2.collect_params(&join(prefix, "conv2"), out);
    }
}

/// Splits `2C` channels in half and multiplies the halves.
pub fn simple_gate<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let c = x.shape().c();
    if c % 2 != 0 {
        return Err(crate::Error::config(format!("simple gate needs an even channel count, got {c}")));
    }
    let a = x.narrow_channels(0, c / 2)?;
    let b = x.narrow_channels(c / 2, c / 2)?;
    Ok(a.mul(&b)?)
}
