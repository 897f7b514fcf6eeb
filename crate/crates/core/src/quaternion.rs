//! Hamilton-product convolution fusing parallel branch outputs.
//!
//! Branch outputs occupy the imaginary slots of a quaternion feature with a
//! zero real part: `Q = 0 + A·i + B·j + C·k`. A quaternion kernel
//! `W = Wr + Wi·i + Wj·j + Wk·k` shares its four real kernels across all
//! four output components:
//!
//! ```text
//! r = −A*Wi − B*Wj − C*Wk
//! i =  A*Wr − B*Wk + C*Wj
//! j =  A*Wk + B*Wr − C*Wi
//! k =  A*Wj − B*Wi + C*Wr
//! ```
//!
//! With `C = 0` this is the two-branch fusion used by the detail restorer.

use hybsens_tensor::{Conv2dSpec, Element, Shape, Tensor, TensorError};
use rand::Rng;

use crate::nn::{join, Conv2d, Module, ParamList};
use crate::{Error, Result};

/// Four same-shaped component maps.
#[derive(Clone, Debug)]
pub struct QuaternionFeature<T: Element> {
    pub r: Tensor<T>,
    pub i: Tensor<T>,
    pub j: Tensor<T>,
    pub k: Tensor<T>,
}

impl<T: Element> QuaternionFeature<T> {
    /// Splits a `(N, 4C, H, W)` tensor laid out as `[r | i | j | k]`.
    pub fn from_concat(x: &Tensor<T>) -> Result<Self> {
        let mut parts = x.chunk_channels(4)?.into_iter();
        let mut next = || parts.next().expect("four chunks");
        Ok(QuaternionFeature { r: next(), i: next(), j: next(), k: next() })
    }

    /// Pure feature from two branch maps: `(0, a, b, 0)`.
    pub fn from_branches(a: &Tensor<T>, b: &Tensor<T>) -> Result<Self> {
        if a.shape() != b.shape() {
            return Err(TensorError::mismatch("quaternion", a.shape(), b.shape()).into());
        }
        let zero = Tensor::zeros(a.shape());
        Ok(QuaternionFeature { r: zero.clone(), i: a.clone(), j: b.clone(), k: zero })
    }

    pub fn concat(&self) -> Result<Tensor<T>> {
        Ok(Tensor::cat_channels(&[self.r.clone(), self.i.clone(), self.j.clone(), self.k.clone()])?)
    }

    pub fn shape(&self) -> Shape {
        self.r.shape()
    }
}

/// Component indices into `[Wr, Wi, Wj, Wk]`.
const R: usize = 0;
const I: usize = 1;
const J: usize = 2;
const K: usize = 3;

/// Row = output component, column = input slot (A, B, C):
/// which kernel multiplies that slot and with which sign.
const HAMILTON: [[(usize, bool); 3]; 4] = [
    [(I, true), (J, true), (K, true)],
    [(R, false), (K, true), (J, false)],
    [(K, false), (R, false), (I, true)],
    [(J, false), (I, true), (R, false)],
];

/// Quaternion-valued kernel: four real kernels of identical geometry.
#[derive(Clone, Debug)]
pub struct QuaternionKernel<T: Element> {
    /// `[Wr, Wi, Wj, Wk]`, each `(Co, Ci, k, k)`.
    pub w: [Tensor<T>; 4],
}

impl<T: Element> QuaternionKernel<T> {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, k: usize, rng: &mut R) -> Self {
        // Each output sums several conv terms; scale down accordingly.
        let bound = 0.5 / ((cin * k * k) as f64).sqrt();
        let mut mk = || Tensor::uniform([cout, cin, k, k], -bound, bound, rng).requires_grad_(true);
        QuaternionKernel { w: [mk(), mk(), mk(), mk()] }
    }

    pub fn from_parts(wr: Tensor<T>, wi: Tensor<T>, wj: Tensor<T>, wk: Tensor<T>) -> Result<Self> {
        let s = wr.shape();
        if [&wi, &wj, &wk].iter().any(|t| t.shape() != s) || s.h() % 2 == 0 || s.h() != s.w() {
            return Err(Error::config(format!("quaternion kernel parts must share one odd square shape, got {s}")));
        }
        Ok(QuaternionKernel { w: [wr, wi, wj, wk] })
    }

    pub fn in_channels(&self) -> usize {
        self.w[0].dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.w[0].dims()[0]
    }

    fn ksize(&self) -> usize {
        self.w[0].dims()[2]
    }

    /// Assembles the signed block kernel `(4·Co, n·Ci, k, k)` for the active
    /// slots, so the whole product is a single convolution.
    fn block_weight(&self, active: &[usize]) -> Result<Tensor<T>> {
        let [co, ci, k, _] = self.w[0].dims();
        let flat = |t: &Tensor<T>| t.reshape([1, t.numel(), 1, 1]);
        let mut rows = Vec::with_capacity(4);
        for row in HAMILTON {
            let cols: Vec<Tensor<T>> = active
                .iter()
                .map(|&slot| {
                    let (comp, negate) = row[slot];
                    if negate {
                        self.w[comp].neg()
                    } else {
                        self.w[comp].clone()
                    }
                })
                .collect();
            let row_w = Tensor::cat_channels(&cols)?;
            rows.push(flat(&row_w)?);
        }
        Ok(Tensor::cat_channels(&rows)?.reshape([4 * co, active.len() * ci, k, k])?)
    }

    /// Hamilton-product convolution of the pure quaternion `(0, A, B, C)`;
    /// `None` slots are zero. Returns `[r | i | j | k]` concatenated along
    /// channels.
    pub fn forward_concat(&self, slots: [Option<&Tensor<T>>; 3]) -> Result<Tensor<T>> {
        let active: Vec<usize> = (0..3).filter(|&s| slots[s].is_some()).collect();
        let inputs: Vec<Tensor<T>> = active.iter().map(|&s| slots[s].unwrap().clone()).collect();
        let first = inputs.first().ok_or_else(|| Error::config("quaternion conv needs at least one slot"))?;
        for t in &inputs[1..] {
            if t.shape() != first.shape() {
                return Err(TensorError::mismatch("quaternion_conv", first.shape(), t.shape()).into());
            }
        }
        let x = if inputs.len() == 1 { inputs[0].clone() } else { Tensor::cat_channels(&inputs)? };
        let w = self.block_weight(&active)?;
        Ok(x.conv2d(&w, None, Conv2dSpec::same(self.ksize()))?)
    }

    pub fn forward(&self, slots: [Option<&Tensor<T>>; 3]) -> Result<QuaternionFeature<T>> {
        QuaternionFeature::from_concat(&self.forward_concat(slots)?)
    }

    pub fn macs(&self, active_slots: usize, n: usize, h: usize, w: usize) -> u64 {
        let [co, ci, k, _] = self.w[0].dims();
        (n * 4 * co * active_slots * ci * k * k * h * w) as u64
    }
}

impl<T: Element> Module<T> for QuaternionKernel<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        for (name, t) in ["r", "i", "j", "k"].iter().zip(&self.w) {
            out.push((join(prefix, &format!("w{name}")), t.clone()));
        }
    }
}

/// Two-branch fusion: `A` in the i slot, `B` in the j slot.
pub fn quaternion_conv<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    w: &QuaternionKernel<T>,
) -> Result<QuaternionFeature<T>> {
    if a.shape() != b.shape() {
        return Err(TensorError::mismatch("quaternion_conv", a.shape(), b.shape()).into());
    }
    w.forward([Some(a), Some(b), None])
}

/// Maps the four components back to a single `C`-channel map with a 1×1
/// projection over their concatenation.
#[derive(Clone, Debug)]
pub struct Collapse<T: Element> {
    pub proj: Conv2d<T>,
}

impl<T: Element> Collapse<T> {
    pub fn new<R: Rng + ?Sized>(c: usize, rng: &mut R) -> Self {
        Collapse { proj: Conv2d::pointwise(4 * c, c, rng) }
    }

    pub fn forward(&self, q: &QuaternionFeature<T>) -> Result<Tensor<T>> {
        self.forward_concat(&q.concat()?)
    }

    pub fn forward_concat(&self, q: &Tensor<T>) -> Result<Tensor<T>> {
        self.proj.forward(q)
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        self.proj.macs(n, h, w)
    }
}

impl<T: Element> Module<T> for Collapse<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        self.proj.collect_params(prefix, out);
    }
}

/// Quaternion conv followed by collapse.
#[derive(Clone, Debug)]
pub struct QuaternionFusion<T: Element> {
    pub kernel: QuaternionKernel<T>,
    pub collapse: Collapse<T>,
}

impl<T: Element> QuaternionFusion<T> {
    pub fn new<R: Rng + ?Sized>(c: usize, k: usize, rng: &mut R) -> Self {
        QuaternionFusion { kernel: QuaternionKernel::new(c, c, k, rng), collapse: Collapse::new(c, rng) }
    }

    pub fn forward(&self, slots: [Option<&Tensor<T>>; 3]) -> Result<Tensor<T>> {
        self.collapse.forward_concat(&self.kernel.forward_concat(slots)?)
    }

    pub fn macs(&self, active_slots: usize, n: usize, h: usize, w: usize) -> u64 {
        self.kernel.macs(active_slots, n, h, w) + self.collapse.macs(n, h, w)
    }
}

impl<T: Element> Module<T> for QuaternionFusion<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        self.kernel.collect_params(&join(prefix, "kernel"), out);
        self.collapse.collect_params(&join(prefix, "collapse"), out);
    }
}
