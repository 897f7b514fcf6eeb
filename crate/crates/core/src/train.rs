//! The training loop.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{augment, load_image, to_tensor, AugmentConfig, Pair};
use crate::loss::{CompositeLoss, LossConfig};
use crate::manifest::{Manifest, Record};
use crate::model::{HybSens, ModelConfig};
use crate::nn::Module;
use crate::optim::{AdamW, AdamWConfig};
use crate::schedule::cosine_lr;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Fixed number of optimizer steps; overrides `epochs` when set.
    pub steps: Option<usize>,
    pub batch: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub adamw: AdamWConfig,
    pub augment: AugmentConfig,
    pub loss: LossConfig,
    pub seed: u64,
    /// Save a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            steps: None,
            batch: 16,
            lr_init: 2e-4,
            lr_min: 1e-6,
            adamw: AdamWConfig::default(),
            augment: AugmentConfig::default(),
            loss: LossConfig::default(),
            seed: 0,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    /// Small CPU preset: 64×64 crops, batch 4, 2000 steps. Much shorter than
    /// the default schedule.
    pub fn desk() -> Self {
        TrainConfig {
            steps: Some(2000),
            batch: 4,
            augment: AugmentConfig { resize: 64, crop: 64, ..AugmentConfig::default() },
            checkpoint_every: 500,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::config("batch must be at least 1"));
        }
        if !(self.lr_min < self.lr_init && self.lr_min >= 0.0) {
            return Err(Error::config("need 0 <= lr_min < lr_init"));
        }
        if self.steps.is_none() && self.epochs == 0 {
            return Err(Error::config("set epochs or steps"));
        }
        self.adamw.validate()?;
        self.augment.validate()?;
        self.loss.validate()
    }

    pub fn steps_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch).max(1)
    }

    pub fn total_steps(&self, samples: usize) -> usize {
        self.steps.unwrap_or(self.epochs * self.steps_per_epoch(samples))
    }

    /// Learning rate of the (0-based) `step`: the first step uses `lr_init`,
    /// the last one `lr_min`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.lr_init;
        }
        cosine_lr(step, total - 1, self.lr_init, self.lr_min)
    }
}

/// Training pairs addressed by index.
pub trait SampleSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn load(&self, index: usize) -> Result<Pair>;

    /// Human-readable name of a sample for logs.
    fn describe(&self, index: usize) -> String {
        format!("sample {index}")
    }
}

impl SampleSource for [Pair] {
    fn len(&self) -> usize {
        <[Pair]>::len(self)
    }

    fn load(&self, index: usize) -> Result<Pair> {
        Ok(self[index].clone())
    }
}

/// The training split of a manifest with repeat factors expanded. Images are
/// decoded on demand.
#[derive(Clone, Debug)]
pub struct ManifestSamples {
    records: Vec<Record>,
}

impl ManifestSamples {
    pub fn new(manifest: &Manifest) -> Self {
        ManifestSamples { records: manifest.training_samples().into_iter().cloned().collect() }
    }
}

impl SampleSource for ManifestSamples {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn load(&self, index: usize) -> Result<Pair> {
        let r = &self.records[index];
        let target = r
            .target_path
            .as_ref()
            .ok_or_else(|| Error::Manifest(format!("{} has no target", r.input_path.display())))?;
        Ok(Pair { input: load_image(&r.input_path)?, target: load_image(target)? })
    }

    fn describe(&self, index: usize) -> String {
        self.records[index].input_path.display().to_string()
    }
}

/// SplitMix64 finaliser, used to derive independent stream seeds.
pub fn mix_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_EPOCH: u64 = 1;
const STREAM_AUGMENT: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

/// Indices of the samples used by `step`: consecutive slices of a per-epoch
/// shuffle.
pub fn batch_indices(cfg: &TrainConfig, samples: usize, step: usize) -> Vec<usize> {
    let spe = cfg.steps_per_epoch(samples);
    let epoch = step / spe;
    let mut order: Vec<usize> = (0..samples).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, STREAM_EPOCH, epoch as u64)));
    let start = (step % spe) * cfg.batch;
    order.into_iter().skip(start).take(cfg.batch).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    /// 1-based step number.
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub smooth_l1: f64,
    pub ssim: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<String>,
}

/// Model, optimizer and loss of one training run.
pub struct Trainer {
    pub model: HybSens<f32>,
    pub optimizer: AdamW<f32>,
    pub loss: CompositeLoss<f32>,
    pub cfg: TrainConfig,
    /// Completed steps.
    pub step: usize,
    pub total_steps: usize,
    samples: usize,
}

impl Trainer {
    /// Fresh run over `samples` training pairs.
    pub fn new(model_cfg: &ModelConfig, cfg: TrainConfig, samples: usize) -> Result<Self> {
        cfg.validate()?;
        if samples == 0 {
            return Err(Error::config("no training samples"));
        }
        let model = HybSens::new(model_cfg, cfg.seed)?;
        let optimizer = AdamW::new(&model.params(), cfg.adamw)?;
        let loss = CompositeLoss::new(cfg.loss)?;
        let total_steps = cfg.total_steps(samples);
        Ok(Trainer { model, optimizer, loss, cfg, step: 0, total_steps, samples })
    }

    /// Continues the run saved in `ckpt`.
    pub fn resume(ckpt: &Checkpoint, cfg: TrainConfig, samples: usize) -> Result<Self> {
        let mut t = Trainer::new(&ckpt.meta.model, cfg, samples)?;
        ckpt.load_params(&t.model.params())?;
        t.optimizer = ckpt
            .optimizer(&t.model.params())?
            .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state to resume from".into()))?;
        t.step = usize::try_from(ckpt.meta.step).map_err(|_| Error::Checkpoint("step out of range".into()))?;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::capture(&self.model, Some(&self.optimizer), self.step as u64, self.cfg.seed);
        c.meta.extra = serde_json::to_value(&self.cfg).unwrap_or_default();
        c
    }

    pub fn finished(&self) -> bool {
        self.step >= self.total_steps
    }

    /// Loads, augments and stacks the pairs of batch `step`. Unreadable
    /// samples are skipped and named in the second return value.
    fn batch(&self, data: &(impl SampleSource + ?Sized), step: usize) -> Result<(Vec<Pair>, Vec<String>)> {
        let mut pairs = Vec::new();
        let mut skipped = Vec::new();
        for (slot, idx) in batch_indices(&self.cfg, self.samples, step).into_iter().enumerate() {
            match data.load(idx) {
                Ok(p) => {
                    let seed = mix_seed(self.cfg.seed, STREAM_AUGMENT, ((step as u64) << 16) | slot as u64);
                    pairs.push(augment(&p, &self.cfg.augment, seed)?);
                }
                Err(e) => {
                    log::warn!("skipping {}: {e}", data.describe(idx));
                    skipped.push(format!("{}: {e}", data.describe(idx)));
                }
            }
        }
        if pairs.is_empty() {
            return Err(Error::Manifest(format!("every sample of step {} failed to load", step + 1)));
        }
        Ok((pairs, skipped))
    }

    /// Runs one optimizer step.
    pub fn train_step(&mut self, data: &(impl SampleSource + ?Sized)) -> Result<StepLog> {
        if data.len() != self.samples {
            return Err(Error::config(format!(
                "trainer was set up for {} samples, got {}",
                self.samples,
                data.len()
            )));
        }
        let step = self.step;
        let (pairs, skipped) = self.batch(data, step)?;
        let inputs: Vec<_> = pairs.iter().map(|p| &p.input).collect();
        let targets: Vec<_> = pairs.iter().map(|p| &p.target).collect();
        let (x, y) = (to_tensor(&inputs)?, to_tensor(&targets)?);

        let lr = self.cfg.lr_at(step, self.total_steps);
        self.model.reseed_dropout(mix_seed(self.cfg.seed, STREAM_DROPOUT, step as u64));
        let params = self.model.params();
        AdamW::zero_grad(&params);
        let out = self.model.forward(&x)?;
        let (loss, terms) = self.loss.forward(&out, &y)?;
        if !terms.total.is_finite() {
            return Err(Error::NonFiniteLoss { step: step + 1, value: terms.total });
        }
        loss.backward()?;
        self.optimizer.step(&params, lr)?;
        self.step += 1;
        Ok(StepLog { step: self.step, lr, loss: terms.total, smooth_l1: terms.smooth_l1, ssim: terms.ssim, skipped })
    }
}

/// Files written by [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutputs {
    pub last_checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub logs: Vec<StepLog>,
}

/// Trains on the manifest's training split, writing `loss_log.jsonl`,
/// periodic `step_XXXXXXX.ckpt` files and `last.ckpt` to `out_dir`. With
/// `resume` the run continues from that checkpoint.
pub fn train(
    manifest: &Manifest,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutputs> {
    let data = ManifestSamples::new(manifest);
    if data.is_empty() {
        return Err(Error::Manifest("the manifest has no training records".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut trainer = match resume {
        Some(p) => Trainer::resume(&Checkpoint::load(p)?, cfg.clone(), data.len())?,
        None => Trainer::new(model_cfg, cfg.clone(), data.len())?,
    };
    let loss_log = out_dir.join("loss_log.jsonl");
    let mut log_file = std::fs::OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&loss_log)
        .map_err(|e| Error::io(&loss_log, e))?;
    let last = out_dir.join("last.ckpt");
    let mut logs = Vec::new();
    log::info!(
        "training {} parameters on {} samples for {} steps",
        trainer.model.num_params(),
        data.len(),
        trainer.total_steps
    );
    while !trainer.finished() {
        let entry = trainer.train_step(&data)?;
        writeln!(log_file, "{}", serde_json::to_string(&entry)?).map_err(|e| Error::io(&loss_log, e))?;
        if entry.step % 50 == 0 || entry.step == 1 {
            log::info!("step {}/{} lr {:.3e} loss {:.5}", entry.step, trainer.total_steps, entry.lr, entry.loss);
        }
        if cfg.checkpoint_every > 0 && entry.step % cfg.checkpoint_every == 0 {
            let ckpt = trainer.checkpoint();
            ckpt.save(out_dir.join(format!("step_{:07}.ckpt", entry.step)))?;
            ckpt.save(&last)?;
        }
        logs.push(entry);
    }
    trainer.checkpoint().save(&last)?;
    Ok(TrainOutputs { last_checkpoint: last, loss_log, logs })
}
