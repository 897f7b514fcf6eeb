//! The full U-shaped network, its configuration and cost accounting.

use hybsens_tensor::{no_grad, Conv2dSpec, Element, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contextualizer::{FeatureContextualizer, MaqOptions};
use crate::detail::{DetailOptions, DetailRestorer};
use crate::harmonizer::{HarmonizerOptions, ScaleHarmonizer};
use crate::nn::{join, Conv2d, Dropout, Module, ParamList};
use crate::prior::{compute_prior, PriorExtractor, PriorPack};
use crate::{Error, Result};

/// Ablation switches, one per column group of the component study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct Switches {
    pub use_prior_guide_fc: bool,
    pub use_prior_skip: bool,
    pub use_sat: bool,
    pub use_act: bool,
    pub use_kft: bool,
    pub use_rcb: bool,
    pub use_nafb: bool,
    pub use_sh: bool,
    pub use_io_skip: bool,
}

impl Default for Switches {
    fn default() -> Self {
        Self::all_on()
    }
}

impl Switches {
    pub const fn all_on() -> Self {
        Switches {
            use_prior_guide_fc: true,
            use_prior_skip: true,
            use_sat: true,
            use_act: true,
            use_kft: true,
            use_rcb: true,
            use_nafb: true,
            use_sh: true,
            use_io_skip: true,
        }
    }

    /// Plain U-Net backbone.
    pub const fn all_off() -> Self {
        Switches {
            use_prior_guide_fc: false,
            use_prior_skip: false,
            use_sat: false,
            use_act: false,
            use_kft: false,
            use_rcb: false,
            use_nafb: false,
            use_sh: false,
            use_io_skip: false,
        }
    }

    /// The eleven rows of the component study, backbone first and the full
    /// model last.
    pub fn study_rows() -> Vec<(&'static str, Switches)> {
        let off = Self::all_off();
        let fc_all = Switches { use_prior_guide_fc: true, use_sat: true, use_act: true, use_kft: true, ..off };
        let dr_fc = Switches { use_rcb: true, use_nafb: true, ..fc_all };
        vec![
            ("backbone", off),
            ("+SAT", Switches { use_sat: true, ..off }),
            ("+SAT+ACT", Switches { use_prior_guide_fc: true, use_sat: true, use_act: true, ..off }),
            ("+FC", fc_all),
            ("+RCB", Switches { use_rcb: true, ..off }),
            ("+DR", Switches { use_rcb: true, use_nafb: true, ..off }),
            ("+FC+DR", dr_fc),
            ("+SH", Switches { use_sh: true, ..off }),
            ("+FC+DR+SH", Switches { use_sh: true, ..dr_fc }),
            ("+prior skip", Switches { use_sh: true, use_prior_skip: true, ..dr_fc }),
            ("full", Self::all_on()),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if (self.use_act || self.use_kft) && !self.use_prior_guide_fc {
            return Err(Error::config("ACT and KFT attend to the prior; enable use_prior_guide_fc with them"));
        }
        Ok(())
    }
}

/// Widths, depths and switches defining one network instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub num_scales: usize,
    pub dr_units: usize,
    pub maq_blocks: usize,
    pub embed_channels: usize,
    pub heads: usize,
    pub harmonizer_stages: usize,
    /// Harmonizer output widths from the bottleneck outwards.
    pub decoder_channels: Vec<usize>,
    /// CWL hidden width relative to the harmonizer output width.
    pub cwl_ratio: f64,
    pub spp_channels: usize,
    pub ffn_expansion: usize,
    pub dr_quaternion_kernel: usize,
    pub maq_quaternion_kernel: usize,
    pub prior_blocks: usize,
    /// Hidden width multiplier of the plain blocks used by ablated stages.
    pub plain_expansion: f64,
    pub dropout: f64,
    pub switches: Switches,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_channels: 3,
            num_scales: 3,
            dr_units: 6,
            maq_blocks: 4,
            embed_channels: 48,
            heads: 4,
            harmonizer_stages: 3,
            decoder_channels: vec![24, 24, 16],
            cwl_ratio: 0.75,
            spp_channels: 12,
            ffn_expansion: 2,
            dr_quaternion_kernel: 3,
            maq_quaternion_kernel: 1,
            prior_blocks: 2,
            plain_expansion: 6.56,
            dropout: 0.0,
            switches: Switches::all_on(),
        }
    }
}

impl ModelConfig {
    /// Encoder width at each scale.
    pub fn encoder_widths(&self) -> Vec<usize> {
        (0..self.num_scales).map(|s| self.base_channels << s).collect()
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.encoder_widths().last().copied().unwrap_or(self.base_channels)
    }

    /// Required divisor of input height and width.
    pub fn size_multiple(&self) -> usize {
        1 << self.num_scales.saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        self.switches.validate()?;
        if self.num_scales == 0 {
            return Ok(());
        }
        if self.decoder_channels.len() != self.num_scales {
            return Err(Error::config(format!(
                "decoder_channels has {} entries for {} scales",
                self.decoder_channels.len(),
                self.num_scales
            )));
        }
        let checks = [
            (self.base_channels > 0, "base_channels must be positive"),
            (self.embed_channels > 0, "embed_channels must be positive"),
            (self.heads > 0, "heads must be positive"),
            (self.decoder_channels.iter().all(|&c| c > 0), "decoder widths must be positive"),
            (self.dr_quaternion_kernel % 2 == 1, "quaternion kernels must be odd"),
            (self.maq_quaternion_kernel % 2 == 1, "quaternion kernels must be odd"),
            (self.plain_expansion > 0.0, "plain_expansion must be positive"),
            ((0.0..1.0).contains(&self.dropout), "dropout must lie in [0, 1)"),
            (self.cwl_ratio > 0.0, "cwl_ratio must be positive"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::config(msg));
            }
        }
        if self.switches.use_sh && self.harmonizer_stages == 0 {
            return Err(Error::config("harmonizer_stages must be positive"));
        }
        Ok(())
    }

    /// This configuration with a different set of switches.
    pub fn ablate(&self, switches: Switches) -> Result<ModelConfig> {
        let cfg = ModelConfig { switches, ..self.clone() };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Checks `switches` and returns the default configuration realising them.
pub fn ablate(cfg: &ModelConfig, switches: Switches) -> Result<ModelConfig> {
    cfg.ablate(switches)
}

/// The restoration network.
#[derive(Debug)]
pub struct HybSens<T: Element = f32> {
    cfg: ModelConfig,
    pub encoder: Vec<DetailRestorer<T>>,
    pub downs: Vec<Conv2d<T>>,
    pub prior: Option<PriorExtractor<T>>,
    pub contextualizer: Option<FeatureContextualizer<T>>,
    /// Bottleneck first.
    pub harmonizers: Vec<ScaleHarmonizer<T>>,
    pub ups: Vec<Conv2d<T>>,
    pub head: Option<Conv2d<T>>,
    dropout: Dropout,
}

impl<T: Element> HybSens<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let sw = cfg.switches;
        let s_count = cfg.num_scales;
        let dropout = Dropout::new(cfg.dropout, rng.gen());
        let mut model = HybSens {
            cfg: cfg.clone(),
            encoder: Vec::new(),
            downs: Vec::new(),
            prior: None,
            contextualizer: None,
            harmonizers: Vec::new(),
            ups: Vec::new(),
            head: None,
            dropout: dropout.clone(),
        };
        if s_count == 0 {
            return Ok(model);
        }
        let widths = cfg.encoder_widths();
        let dr = DetailOptions {
            use_rcb: sw.use_rcb,
            use_nafb: sw.use_nafb,
            quaternion_kernel: cfg.dr_quaternion_kernel,
            dropout: dropout.clone(),
            plain_expansion: cfg.plain_expansion,
        };
        for s in 0..s_count {
            if s > 0 {
                model.downs.push(Conv2d::new(
                    widths[s - 1],
                    widths[s],
                    3,
                    Conv2dSpec::same(3).with_stride(2),
                    true,
                    rng,
                ));
            }
            model.encoder.push(DetailRestorer::new(widths[s], cfg.dr_units, &dr, rng));
        }

        if sw.use_prior_guide_fc || sw.use_prior_skip {
            let embed = sw.use_prior_guide_fc.then_some(cfg.embed_channels);
            model.prior = Some(PriorExtractor::new(&widths, cfg.prior_blocks, embed, &dropout, rng));
        }

        let maq = MaqOptions {
            use_act: sw.use_act,
            use_kft: sw.use_kft,
            use_sat: sw.use_sat,
            heads: cfg.heads,
            ffn_expansion: cfg.ffn_expansion,
            quaternion_kernel: cfg.maq_quaternion_kernel,
            plain_expansion: cfg.plain_expansion,
        };
        let bottleneck = cfg.bottleneck_channels();
        model.contextualizer = Some(FeatureContextualizer::new(
            bottleneck,
            cfg.embed_channels,
            cfg.maq_blocks,
            cfg.spp_channels,
            &maq,
            rng,
        ));

        let sh = HarmonizerOptions {
            enabled: sw.use_sh,
            stages: cfg.harmonizer_stages,
            cwl_ratio: cfg.cwl_ratio,
            plain_expansion: cfg.plain_expansion,
        };
        let mut up_width = cfg.embed_channels;
        for s in 0..s_count {
            let level = s_count - 1 - s;
            if s > 0 {
                let from = cfg.decoder_channels[s - 1];
                model.ups.push(Conv2d::pointwise(from, cfg.decoder_channels[s], rng));
                up_width = cfg.decoder_channels[s];
            }
            let mut skip_width = widths[level];
            if level == 0 && sw.use_prior_skip {
                skip_width += widths[0];
            }
            model.harmonizers.push(ScaleHarmonizer::new(skip_width + up_width, cfg.decoder_channels[s], &sh, rng));
        }
        model.head = Some(Conv2d::same(cfg.decoder_channels[s_count - 1], 3, 3, rng));
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Restarts the stream dropout masks are drawn from.
    pub fn reseed_dropout(&self, seed: u64) {
        self.dropout.reseed(seed);
    }

    fn check_input(&self, img: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = img.dims();
        if c != 3 {
            return Err(Error::config(format!("expected an RGB batch, got {}", img.shape())));
        }
        let m = self.cfg.size_multiple();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::Indivisible { h, w, multiple: m });
        }
        Ok(())
    }

    /// Runs the prior branch on an RGB batch, if the configuration has one.
    pub fn prior_pack(&self, img: &Tensor<T>) -> Result<Option<PriorPack<T>>> {
        match &self.prior {
            Some(p) => Ok(Some(p.forward(&compute_prior(img)?)?)),
            None => Ok(None),
        }
    }

    /// Raw (unclamped) output; attention maps of every transformer are
    /// appended to `trace` in execution order.
    pub fn forward_traced(&self, img: &Tensor<T>, trace: &mut Vec<Tensor<T>>) -> Result<Tensor<T>> {
        self.check_input(img)?;
        if self.cfg.num_scales == 0 {
            return Ok(img.clone());
        }
        let s_count = self.cfg.num_scales;
        let mut skips = Vec::with_capacity(s_count);
        let mut h = img.clone();
        for s in 0..s_count {
            if s > 0 {
                h = self.downs[s - 1].forward(&h)?;
            }
            h = self.encoder[s].forward(&h)?;
            skips.push(h.clone());
        }

        let pack = self.prior_pack(img)?;
        let fc = self.contextualizer.as_ref().expect("built for num_scales > 0");
        let guide = pack.as_ref().and_then(|p| p.bottleneck_feat.as_ref());
        let mut d = fc.forward_traced(&h, guide, trace)?;

        for s in 0..s_count {
            let level = s_count - 1 - s;
            let skip = &skips[level];
            if s > 0 {
                let [_, _, sh, sw] = skip.dims();
                d = self.ups[s - 1].forward(&d.upsample_bilinear(sh, sw)?)?;
            }
            let skip = match (&pack, level == 0 && self.cfg.switches.use_prior_skip) {
                (Some(p), true) => Tensor::cat_channels(&[skip.clone(), p.top_feat.clone()])?,
                _ => skip.clone(),
            };
            d = self.harmonizers[s].forward(&skip, &d)?;
        }
        let out = self.head.as_ref().expect("built").forward(&d)?;
        if self.cfg.switches.use_io_skip {
            Ok(out.add(img)?)
        } else {
            Ok(out)
        }
    }

    /// Training-time forward: no clamping.
    pub fn forward(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_traced(img, &mut Vec::new())
    }

    /// Inference: no graph, output clamped to `[0, 1]`.
    pub fn predict(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        no_grad(|| Ok(self.forward(img)?.clamp(T::zero(), T::one())))
    }

    /// Analytic multiply-accumulate count of one forward pass on an
    /// `n×3×h×w` batch (convolutions, matrix products, elementwise products
    /// and bilinear taps).
    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        let s_count = self.cfg.num_scales;
        if s_count == 0 {
            return 0;
        }
        let mut total = 0;
        let mut dims = Vec::with_capacity(s_count);
        let (mut ch, mut cw) = (h, w);
        for s in 0..s_count {
            if s > 0 {
                total += self.downs[s - 1].macs(n, ch, cw);
                (ch, cw) = self.downs[s - 1].output_hw(ch, cw);
            }
            total += self.encoder[s].macs(n, ch, cw);
            dims.push((ch, cw));
        }
        if let Some(p) = &self.prior {
            total += p.macs(n, h, w);
        }
        let fc = self.contextualizer.as_ref().expect("built");
        total += fc.macs(n, ch, cw);
        for s in 0..s_count {
            let level = s_count - 1 - s;
            let (lh, lw) = dims[level];
            if s > 0 {
                let from = self.cfg.decoder_channels[s - 1];
                total += (4 * n * from * lh * lw) as u64 + self.ups[s - 1].macs(n, lh, lw);
            }
            total += self.harmonizers[s].macs(n, lh, lw);
        }
        total + self.head.as_ref().expect("built").macs(n, h, w)
    }
}

impl<T: Element> Module<T> for HybSens<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        for (s, enc) in self.encoder.iter().enumerate() {
            if s > 0 {
                self.downs[s - 1].collect_params(&join(prefix, &format!("down{s}")), out);
            }
            enc.collect_params(&join(prefix, &format!("encoder{s}")), out);
        }
        self.prior.collect_params(&join(prefix, "prior"), out);
        self.contextualizer.collect_params(&join(prefix, "fc"), out);
        for (s, h) in self.harmonizers.iter().enumerate() {
            if s > 0 {
                self.ups[s - 1].collect_params(&join(prefix, &format!("up{s}")), out);
            }
            h.collect_params(&join(prefix, &format!("decoder{s}")), out);
        }
        self.head.collect_params(&join(prefix, "head"), out);
    }
}

/// Trainable scalar count of the network described by `cfg`.
pub fn count_params(cfg: &ModelConfig) -> Result<usize> {
    Ok(HybSens::<f32>::new(cfg, 0)?.num_params())
}

/// Analytic MAC count for one `1×3×h×w` forward pass.
pub fn count_macs(cfg: &ModelConfig, h: usize, w: usize) -> Result<u64> {
    Ok(HybSens::<f32>::new(cfg, 0)?.macs(1, h, w))
}
