//! Gray-world colour balance prior and its feature extractor.

use hybsens_tensor::{Conv2dSpec, Element, Tensor};
use rand::Rng;

use crate::detail::Nafb;
use crate::nn::{join, Conv2d, Dropout, Module, ParamList};
use crate::{Error, Result};

/// Per-pixel mean of R, G, B replicated into all three channels.
pub fn compute_prior<T: Element>(img: &Tensor<T>) -> Result<Tensor<T>> {
    if img.shape().c() != 3 {
        return Err(Error::config(format!("prior needs a 3-channel image, got {}", img.shape())));
    }
    Ok(img.channel_mean_replicated())
}

/// Spatial mean of each channel, per sample: the gray-world statistics
/// `(a_R, a_G, a_B)`.
pub fn channel_means<T: Element>(img: &Tensor<T>) -> Result<Vec<[f64; 3]>> {
    let [n, c, h, w] = img.dims();
    if c != 3 {
        return Err(Error::config(format!("channel means need a 3-channel image, got {}", img.shape())));
    }
    let v = img.to_f64_vec();
    let hw = h * w;
    Ok((0..n)
        .map(|b| {
            let mut m = [0.0; 3];
            for (ch, slot) in m.iter_mut().enumerate() {
                let off = (b * 3 + ch) * hw;
                *slot = v[off..off + hw].iter().sum::<f64>() / hw as f64;
            }
            m
        })
        .collect())
}

/// Prior image plus its learned embeddings.
#[derive(Clone, Debug)]
pub struct PriorPack<T: Element> {
    pub prior_image: Tensor<T>,
    /// `(N, Ĉ, H/2^(S-1), W/2^(S-1))`; absent when only the top merge is used.
    pub bottleneck_feat: Option<Tensor<T>>,
    /// Full-resolution features merged into the last harmonizer.
    pub top_feat: Tensor<T>,
}

/// NAFB stacks with strided downsampling, mirroring the encoder widths.
#[derive(Debug)]
pub struct PriorExtractor<T: Element> {
    pub stages: Vec<Vec<Nafb<T>>>,
    pub downs: Vec<Conv2d<T>>,
    pub embed: Option<Conv2d<T>>,
}

impl<T: Element> PriorExtractor<T> {
    pub const DEFAULT_BLOCKS: usize = 2;

    /// `widths` are the encoder widths per scale. Without `embed_channels`
    /// only the full-resolution stage is built.
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        blocks: usize,
        embed_channels: Option<usize>,
        dropout: &Dropout,
        rng: &mut R,
    ) -> Self {
        let scales = if embed_channels.is_some() { widths.len() } else { 1.min(widths.len()) };
        let mut stages = Vec::new();
        let mut downs = Vec::new();
        for s in 0..scales {
            if s > 0 {
                downs.push(Conv2d::new(widths[s - 1], widths[s], 3, Conv2dSpec::same(3).with_stride(2), true, rng));
            }
            stages.push((0..blocks).map(|_| Nafb::new(widths[s], dropout.clone(), rng)).collect());
        }
        let embed = embed_channels.map(|c| Conv2d::same(widths[scales - 1], c, 3, rng));
        PriorExtractor { stages, downs, embed }
    }

    pub fn forward(&self, prior_image: &Tensor<T>) -> Result<PriorPack<T>> {
        let mut h = prior_image.clone();
        let mut top = None;
        for (s, blocks) in self.stages.iter().enumerate() {
            if s > 0 {
                h = self.downs[s - 1].forward(&h)?;
            }
            for b in blocks {
                h = b.forward(&h)?;
            }
            if s == 0 {
                top = Some(h.clone());
            }
        }
        let bottleneck_feat = self.embed.as_ref().map(|e| e.forward(&h)).transpose()?;
        Ok(PriorPack {
            prior_image: prior_image.clone(),
            bottleneck_feat,
            top_feat: top.unwrap_or_else(|| prior_image.clone()),
        })
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        let (mut h, mut w) = (h, w);
        let mut total = 0;
        for (s, blocks) in self.stages.iter().enumerate() {
            if s > 0 {
                total += self.downs[s - 1].macs(n, h, w);
                (h, w) = self.downs[s - 1].output_hw(h, w);
            }
            total += blocks.iter().map(|b| b.macs(n, h, w)).sum::<u64>();
        }
        total + self.embed.as_ref().map_or(0, |e| e.macs(n, h, w))
    }
}

impl<T: Element> Module<T> for PriorExtractor<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        for (s, blocks) in self.stages.iter().enumerate() {
            if s > 0 {
                self.downs[s - 1].collect_params(&join(prefix, &format!("down{s}")), out);
            }
            blocks.collect_params(&join(prefix, &format!("stage{s}")), out);
        }
        self.embed.collect_params(&join(prefix, "embed"), out);
    }
}
