//! Dataset manifests: which image files are used for training and testing.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    TestPaired,
    TestUnpaired,
}

impl Split {
    pub fn is_paired(self) -> bool {
        self != Split::TestUnpaired
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::TestPaired => "test_paired",
            Split::TestUnpaired => "test_unpaired",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "UIEB")]
    Uieb,
    #[serde(rename = "EUVP-dark")]
    EuvpDark,
    #[serde(rename = "EUVP-imagenet")]
    EuvpImagenet,
    #[serde(rename = "EUVP-scenes")]
    EuvpScenes,
    #[serde(rename = "LSUI")]
    Lsui,
    #[serde(rename = "RUIE")]
    Ruie,
    #[serde(rename = "other")]
    Other,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

fn one() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub input_path: PathBuf,
    #[serde(default)]
    pub target_path: Option<PathBuf>,
    pub split: Split,
    pub source: Source,
    #[serde(default = "one")]
    pub repeat_factor: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<Record>,
}

impl Manifest {
    /// Reads one JSON record per non-empty line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line)
                .map_err(|e| Error::Manifest(format!("{}:{}: {e}", path.display(), i + 1)))?;
            records.push(rec);
        }
        Ok(Manifest { records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Training records with each one repeated `repeat_factor` times.
    pub fn training_samples(&self) -> Vec<&Record> {
        self.split(Split::Train).flat_map(|r| std::iter::repeat(r).take(r.repeat_factor as usize)).collect()
    }

    /// Checks targets, repeat factors, file existence and that no file is
    /// used by both the training split and a test split.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (i, r) in self.records.iter().enumerate() {
            if r.split.is_paired() && r.target_path.is_none() {
                problems.push(format!("record {i} ({}) in split {} has no target", r.input_path.display(), r.split));
            }
            if r.repeat_factor == 0 {
                problems.push(format!("record {i} has repeat_factor 0"));
            }
            for p in std::iter::once(&r.input_path).chain(r.target_path.iter()) {
                if !p.is_file() {
                    problems.push(format!("record {i}: {} does not exist", p.display()));
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::Manifest(problems.join("; ")));
        }
        let canonical = |p: &Path| p.canonicalize().map_err(|e| Error::io(p, e));
        let mut train = HashSet::new();
        for r in self.split(Split::Train) {
            train.insert(canonical(&r.input_path)?);
            if let Some(t) = &r.target_path {
                train.insert(canonical(t)?);
            }
        }
        for r in self.records.iter().filter(|r| r.split != Split::Train) {
            for p in std::iter::once(&r.input_path).chain(r.target_path.iter()) {
                if train.contains(&canonical(p)?) {
                    return Err(Error::Manifest(format!(
                        "{} is used for training and in split {}",
                        p.display(),
                        r.split
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Requested samples from one image folder (optionally paired with a
/// reference folder holding files of the same name or stem).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourcePlan {
    pub source: Source,
    pub input_dir: PathBuf,
    #[serde(default)]
    pub target_dir: Option<PathBuf>,
    #[serde(default)]
    pub train: usize,
    #[serde(default)]
    pub test: usize,
    #[serde(default = "one")]
    pub repeat_factor: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPlan {
    pub sources: Vec<SourcePlan>,
    /// Multiplies every requested count.
    #[serde(default = "unit_scale")]
    pub scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn unit_scale() -> f64 {
    1.0
}

impl DataPlan {
    /// The full training and test plan over the standard dataset layouts
    /// below `root`.
    pub fn standard(root: &Path) -> Self {
        let paired = |source, input: &str, target: &str, train, test, repeat_factor| SourcePlan {
            source,
            input_dir: root.join(input),
            target_dir: Some(root.join(target)),
            train,
            test,
            repeat_factor,
        };
        let unpaired = |source, input: &str, test| SourcePlan {
            source,
            input_dir: root.join(input),
            target_dir: None,
            train: 0,
            test,
            repeat_factor: 1,
        };
        DataPlan {
            sources: vec![
                paired(Source::Uieb, "UIEB/raw-890", "UIEB/reference-890", 800, 90, 2),
                paired(
                    Source::EuvpDark,
                    "EUVP/Paired/underwater_dark/trainA",
                    "EUVP/Paired/underwater_dark/trainB",
                    800,
                    80,
                    1,
                ),
                paired(
                    Source::EuvpImagenet,
                    "EUVP/Paired/underwater_imagenet/trainA",
                    "EUVP/Paired/underwater_imagenet/trainB",
                    700,
                    70,
                    1,
                ),
                paired(
                    Source::EuvpScenes,
                    "EUVP/Paired/underwater_scenes/trainA",
                    "EUVP/Paired/underwater_scenes/trainB",
                    500,
                    50,
                    1,
                ),
                paired(Source::Lsui, "LSUI/input", "LSUI/GT", 2000, 200, 1),
                unpaired(Source::Uieb, "UIEB/challenging-60", 60),
                unpaired(Source::Other, "EUVP/Unpaired/trainA", 200),
                unpaired(Source::Ruie, "RUIE", 200),
            ],
            scale: 1.0,
            seed: 0,
        }
    }
}

/// Outcome of [`build_manifest`]: the manifest plus notes on every source
/// that could not supply its full quota.
#[derive(Clone, Debug, Default)]
pub struct BuildReport {
    pub manifest: Manifest,
    pub notes: Vec<String>,
}

fn is_image(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn list_images(dir: &Path) -> Vec<PathBuf> {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return Vec::new();
    };
    let mut files: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| is_image(p)).collect();
    files.sort();
    files
}

/// Reference image for `input`: same file name, else same stem with any
/// image extension.
fn find_target(input: &Path, target_dir: &Path) -> Option<PathBuf> {
    let name = input.file_name()?;
    let same = target_dir.join(name);
    if same.is_file() {
        return Some(same);
    }
    let stem = input.file_stem()?.to_str()?;
    IMAGE_EXTENSIONS
        .iter()
        .flat_map(|e| [e.to_string(), e.to_ascii_uppercase()])
        .map(|e| target_dir.join(format!("{stem}.{e}")))
        .find(|p| p.is_file())
}

/// Samples the plan's files with a seeded shuffle. Sources with fewer files
/// than requested are scaled down proportionally and noted in the report.
/// A source that is asked for images but has none is an error; an empty
/// manifest is an error unless `allow_empty`.
pub fn build_manifest(plan: &DataPlan, allow_empty: bool) -> Result<BuildReport> {
    if !(plan.scale >= 0.0 && plan.scale.is_finite()) {
        return Err(Error::config("plan scale must be a non-negative number"));
    }
    let mut report = BuildReport::default();
    let mut missing = Vec::new();
    for (si, sp) in plan.sources.iter().enumerate() {
        let want_train = (sp.train as f64 * plan.scale).round() as usize;
        let want_test = (sp.test as f64 * plan.scale).round() as usize;
        let wanted = want_train + want_test;
        if wanted == 0 {
            continue;
        }
        if sp.target_dir.is_none() && want_train > 0 {
            return Err(Error::config(format!("{} has no reference folder and cannot supply training pairs", sp.source)));
        }
        let mut candidates: Vec<(PathBuf, Option<PathBuf>)> = list_images(&sp.input_dir)
            .into_iter()
            .filter_map(|p| match &sp.target_dir {
                Some(td) => find_target(&p, td).map(|t| (p, Some(t))),
                None => Some((p, None)),
            })
            .collect();
        if candidates.is_empty() {
            missing.push(format!("{} ({})", sp.source, sp.input_dir.display()));
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ (si as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        candidates.shuffle(&mut rng);
        let (n_train, n_test) = if candidates.len() >= wanted {
            (want_train, want_test)
        } else {
            let f = candidates.len() as f64 / wanted as f64;
            let n_train = (want_train as f64 * f).floor() as usize;
            let n_test = ((want_test as f64 * f).floor() as usize).min(candidates.len() - n_train);
            report.notes.push(format!(
                "{} ({}): {} images available for {wanted} requested; downscaled to {n_train} train + {n_test} test",
                sp.source,
                sp.input_dir.display(),
                candidates.len()
            ));
            (n_train, n_test)
        };
        let test_split = if sp.target_dir.is_some() { Split::TestPaired } else { Split::TestUnpaired };
        for (i, (input, target)) in candidates.into_iter().take(n_train + n_test).enumerate() {
            let train = i < n_train;
            report.manifest.records.push(Record {
                input_path: input,
                target_path: target,
                split: if train { Split::Train } else { test_split },
                source: sp.source,
                repeat_factor: if train { sp.repeat_factor } else { 1 },
            });
        }
    }
    if !missing.is_empty() {
        return Err(Error::Manifest(format!("no images found for: {}", missing.join(", "))));
    }
    if report.manifest.records.is_empty() && !allow_empty {
        return Err(Error::Manifest("the plan selects no images (pass allow_empty to accept this)".into()));
    }
    Ok(report)
}
