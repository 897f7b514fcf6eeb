//! Bottleneck stage: inter-channel attention between the image and prior
//! streams, quaternion fusion of the three attention variants, and pyramid
//! pooling.

use hybsens_tensor::{Element, Shape, Tensor, TensorError};
use rand::Rng;

use crate::nn::{join, simple_gate, Conv2d, LayerNorm, Module, ParamList, PlainBlock};
use crate::quaternion::QuaternionFusion;
use crate::{Error, Result};

/// Transformer block whose attention map is channel×channel per head.
///
/// Queries come from one source, keys and values from the other; the block
/// output is a residual on the key/value source.
#[derive(Clone, Debug)]
pub struct Attention<T: Element> {
    pub heads: usize,
    pub norm: LayerNorm<T>,
    pub q: Conv2d<T>,
    pub kv: Conv2d<T>,
    pub q_dw: Conv2d<T>,
    pub kv_dw: Conv2d<T>,
    pub proj: Conv2d<T>,
    /// `(1, heads, 1, 1)`.
    pub temperature: Tensor<T>,
    pub ffn_norm: LayerNorm<T>,
    pub ffn_in: Conv2d<T>,
    pub ffn_out: Conv2d<T>,
}

impl<T: Element> Attention<T> {
    pub const DEFAULT_TEMPERATURE: f64 = 1.0;

    pub fn new<R: Rng + ?Sized>(c: usize, heads: usize, ffn_expansion: usize, rng: &mut R) -> Self {
        let hc = heads * c;
        let hidden = ffn_expansion * c;
        Attention {
            heads,
            norm: LayerNorm::new(c),
            q: Conv2d::pointwise(c, hc, rng),
            kv: Conv2d::pointwise(c, 2 * hc, rng),
            q_dw: Conv2d::depthwise(hc, 3, rng),
            kv_dw: Conv2d::depthwise(2 * hc, 3, rng),
            proj: Conv2d::pointwise(hc, c, rng),
            temperature: Tensor::full([1, heads, 1, 1], T::from_f64_lossy(Self::DEFAULT_TEMPERATURE))
                .requires_grad_(true),
            ffn_norm: LayerNorm::new(c),
            ffn_in: Conv2d::pointwise(c, 2 * hidden, rng),
            ffn_out: Conv2d::pointwise(hidden, c, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.proj.out_channels()
    }

    /// Returns the block output and the softmaxed `(N, h, C, C)` map.
    pub fn forward_traced(&self, q_src: &Tensor<T>, kv_src: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        if q_src.shape() != kv_src.shape() {
            return Err(TensorError::mismatch("inter_channel_attention", q_src.shape(), kv_src.shape()).into());
        }
        let [n, c, h, w] = kv_src.dims();
        let heads = self.heads;
        let split = |t: &Tensor<T>| t.reshape([n, heads, c, h * w]);

        let q = self.q_dw.forward(&self.q.forward(&self.norm.forward(q_src)?)?)?;
        let kv = self.kv_dw.forward(&self.kv.forward(&self.norm.forward(kv_src)?)?)?;
        let k = kv.narrow_channels(0, heads * c)?;
        let v = kv.narrow_channels(heads * c, heads * c)?;

        let logits = split(&q)?.matmul_nt(&split(&k)?)?.div(&self.temperature)?;
        let attn = logits.softmax(3)?;
        let mixed = attn.matmul(&split(&v)?)?.reshape([n, heads * c, h, w])?;
        let y = self.proj.forward(&mixed)?.add(kv_src)?;
        let f = self.ffn_out.forward(&simple_gate(&self.ffn_in.forward(&self.ffn_norm.forward(&y)?)?)?)?;
        Ok((y.add(&f)?, attn))
    }

    pub fn forward(&self, q_src: &Tensor<T>, kv_src: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_traced(q_src, kv_src)?.0)
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        let c = self.channels();
        let hidden = self.ffn_out.in_channels();
        let l = h * w;
        self.q.macs(n, h, w)
            + self.kv.macs(n, h, w)
            + self.q_dw.macs(n, h, w)
            + self.kv_dw.macs(n, h, w)
            + 2 * (n * self.heads * c * c * l) as u64
            + self.proj.macs(n, h, w)
            + self.ffn_in.macs(n, h, w)
            + (n * hidden * l) as u64
            + self.ffn_out.macs(n, h, w)
    }
}

impl<T: Element> Module<T> for Attention<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        self.norm.collect_params(&join(prefix, "norm"), out);
        self.q.collect_params(&join(prefix, "q"), out);
        self.kv.collect_params(&join(prefix, "kv"), out);
        self.q_dw.collect_params(&join(prefix, "q_dw"), out);
        self.kv_dw.collect_params(&join(prefix, "kv_dw"), out);
        self.proj.collect_params(&join(prefix, "proj"), out);
        out.push((join(prefix, "temperature"), self.temperature.clone()));
        self.ffn_norm.collect_params(&join(prefix, "ffn_norm"), out);
        self.ffn_in.collect_params(&join(prefix, "ffn_in"), out);
        self.ffn_out.collect_params(&join(prefix, "ffn_out"), out);
    }
}

/// Adjust-colour transformer: queries from the prior, keys/values from the
/// image features.
pub fn act<T: Element>(x: &Tensor<T>, prior: &Tensor<T>, p: &Attention<T>) -> Result<Tensor<T>> {
    p.forward(prior, x)
}

/// Keep-feature transformer: queries from the image, keys/values (and the
/// residual) from the prior.
pub fn kft<T: Element>(x: &Tensor<T>, prior: &Tensor<T>, p: &Attention<T>) -> Result<Tensor<T>> {
    p.forward(x, prior)
}

/// Self-attention transformer over the image features.
pub fn sat<T: Element>(x: &Tensor<T>, p: &Attention<T>) -> Result<Tensor<T>> {
    p.forward(x, x)
}

#[derive(Clone, Copy, Debug)]
pub struct MaqOptions {
    pub use_act: bool,
    pub use_kft: bool,
    pub use_sat: bool,
    pub heads: usize,
    pub ffn_expansion: usize,
    pub quaternion_kernel: usize,
    pub plain_expansion: f64,
}

/// Multi-attention quaternion block. ACT, KFT and SAT outputs fill the i, j
/// and k slots; the image stream gets the collapsed fusion as a residual and
/// the prior stream is carried forward by KFT.
#[derive(Clone, Debug)]
pub enum MaqBlock<T: Element> {
    Attention {
        act: Option<Attention<T>>,
        kft: Option<Attention<T>>,
        sat: Option<Attention<T>>,
        fusion: QuaternionFusion<T>,
    },
    Plain(PlainBlock<T>),
}

impl<T: Element> MaqBlock<T> {
    pub fn new<R: Rng + ?Sized>(c: usize, opts: &MaqOptions, rng: &mut R) -> Self {
        if !(opts.use_act || opts.use_kft || opts.use_sat) {
            return MaqBlock::Plain(PlainBlock::new(c, c, opts.plain_expansion, rng));
        }
        let mut mk = |on: bool| on.then(|| Attention::new(c, opts.heads, opts.ffn_expansion, rng));
        let act = mk(opts.use_act);
        let kft = mk(opts.use_kft);
        let sat = mk(opts.use_sat);
        MaqBlock::Attention { act, kft, sat, fusion: QuaternionFusion::new(c, opts.quaternion_kernel, rng) }
    }

    pub fn needs_prior(&self) -> bool {
        matches!(self, MaqBlock::Attention { act, kft, .. } if act.is_some() || kft.is_some())
    }

    /// Returns `(x', prior')`; attention maps are appended to `trace`.
    pub fn forward(
        &self,
        x: &Tensor<T>,
        prior: Option<&Tensor<T>>,
        trace: &mut Vec<Tensor<T>>,
    ) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        match self {
            MaqBlock::Plain(p) => Ok((p.forward(x)?, prior.cloned())),
            MaqBlock::Attention { act, kft, sat, fusion } => {
                let need_prior = || prior.ok_or_else(|| Error::config("ACT/KFT need prior features"));
                let mut run = |m: &Attention<T>, q: &Tensor<T>, kv: &Tensor<T>| -> Result<Tensor<T>> {
                    let (o, a) = m.forward_traced(q, kv)?;
                    trace.push(a);
                    Ok(o)
                };
                let a = match act {
                    Some(m) => Some(run(m, need_prior()?, x)?),
                    None => None,
                };
                let b = match kft {
                    Some(m) => Some(run(m, x, need_prior()?)?),
                    None => None,
                };
                let s = match sat {
                    Some(m) => Some(run(m, x, x)?),
                    None => None,
                };
                let fused = fusion.forward([a.as_ref(), b.as_ref(), s.as_ref()])?;
                let next_prior = b.or_else(|| prior.cloned());
                Ok((x.add(&fused)?, next_prior))
            }
        }
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        match self {
            MaqBlock::Plain(p) => p.macs(n, h, w),
            MaqBlock::Attention { act, kft, sat, fusion } => {
                let mods = [act, kft, sat];
                let slots = mods.iter().filter(|m| m.is_some()).count();
                mods.iter().map(|m| m.as_ref().map_or(0, |m| m.macs(n, h, w))).sum::<u64>()
                    + fusion.macs(slots, n, h, w)
            }
        }
    }
}

impl<T: Element> Module<T> for MaqBlock<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        match self {
            MaqBlock::Attention { act, kft, sat, fusion } => {
                act.collect_params(&join(prefix, "act"), out);
                kft.collect_params(&join(prefix, "kft"), out);
                sat.collect_params(&join(prefix, "sat"), out);
                fusion.collect_params(&join(prefix, "fusion"), out);
            }
            MaqBlock::Plain(p) => p.collect_params(&join(prefix, "plain"), out),
        }
    }
}

/// Spatial pyramid pooling: pooled context at several granularities,
/// projected, upsampled, and fused with the input.
#[derive(Clone, Debug)]
pub struct Spp<T: Element> {
    pub sizes: Vec<usize>,
    pub branches: Vec<Conv2d<T>>,
    pub fuse: Conv2d<T>,
}

impl<T: Element> Spp<T> {
    pub const DEFAULT_SIZES: [usize; 4] = [1, 2, 4, 8];

    pub fn new<R: Rng + ?Sized>(c: usize, branch_channels: usize, sizes: &[usize], rng: &mut R) -> Self {
        let branches = sizes.iter().map(|_| Conv2d::pointwise(c, branch_channels, rng)).collect();
        Spp {
            sizes: sizes.to_vec(),
            branches,
            fuse: Conv2d::pointwise(c + sizes.len() * branch_channels, c, rng),
        }
    }

    /// Pool grid actually used for an `h×w` input (clamped to the input).
    pub fn pool_size(s: usize, h: usize, w: usize) -> (usize, usize) {
        (s.min(h), s.min(w))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [_, _, h, w] = x.dims();
        let mut parts = vec![x.clone()];
        for (&s, conv) in self.sizes.iter().zip(&self.branches) {
            let (ph, pw) = Self::pool_size(s, h, w);
            let pooled = conv.forward(&x.adaptive_avg_pool(ph, pw)?)?;
            parts.push(pooled.upsample_bilinear(h, w)?);
        }
        self.fuse.forward(&Tensor::cat_channels(&parts)?)
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        let mut total = self.fuse.macs(n, h, w);
        for (&s, conv) in self.sizes.iter().zip(&self.branches) {
            let (ph, pw) = Self::pool_size(s, h, w);
            total += conv.macs(n, ph, pw) + (4 * n * conv.out_channels() * h * w) as u64;
        }
        total
    }
}

impl<T: Element> Module<T> for Spp<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        self.branches.collect_params(&join(prefix, "branches"), out);
        self.fuse.collect_params(&join(prefix, "fuse"), out);
    }
}

/// Embed → MAQ chain → SPP, at the bottleneck scale.
#[derive(Clone, Debug)]
pub struct FeatureContextualizer<T: Element> {
    pub embed: Conv2d<T>,
    pub blocks: Vec<MaqBlock<T>>,
    pub spp: Spp<T>,
}

impl<T: Element> FeatureContextualizer<T> {
    pub fn new<R: Rng + ?Sized>(
        cin: usize,
        c: usize,
        blocks: usize,
        spp_channels: usize,
        opts: &MaqOptions,
        rng: &mut R,
    ) -> Self {
        FeatureContextualizer {
            embed: Conv2d::same(cin, c, 3, rng),
            blocks: (0..blocks).map(|_| MaqBlock::new(c, opts, rng)).collect(),
            spp: Spp::new(c, spp_channels, &Spp::<T>::DEFAULT_SIZES, rng),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.embed.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.embed.out_channels()
    }

    pub fn forward_traced(
        &self,
        x: &Tensor<T>,
        prior: Option<&Tensor<T>>,
        trace: &mut Vec<Tensor<T>>,
    ) -> Result<Tensor<T>> {
        if x.shape().c() != self.in_channels() {
            return Err(TensorError::mismatch(
                "feature_contextualizer",
                x.shape(),
                Shape::new(x.shape().n(), self.in_channels(), x.shape().h(), x.shape().w()),
            )
            .into());
        }
        let mut h = self.embed.forward(x)?;
        let mut p = prior.cloned();
        for b in &self.blocks {
            let (nh, np) = b.forward(&h, p.as_ref(), trace)?;
            h = nh;
            p = np;
        }
        self.spp.forward(&h)
    }

    pub fn forward(&self, x: &Tensor<T>, prior: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        self.forward_traced(x, prior, &mut Vec::new())
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        self.embed.macs(n, h, w) + self.blocks.iter().map(|b| b.macs(n, h, w)).sum::<u64>() + self.spp.macs(n, h, w)
    }
}

impl<T: Element> Module<T> for FeatureContextualizer<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        self.embed.collect_params(&join(prefix, "embed"), out);
        self.blocks.collect_params(&join(prefix, "blocks"), out);
        self.spp.collect_params(&join(prefix, "spp"), out);
    }
}
