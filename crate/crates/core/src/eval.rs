//! Evaluation runs over the test splits of a manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use hybsens_tensor::Tensor;
use image::Rgb32FImage;
use serde::{Deserialize, Serialize};

use crate::data::{crop, load_image, pad_to_multiple, tensor_image, to_tensor};
use crate::loss::{PerceptualDistance, SsimOptions};
use crate::manifest::{Manifest, Split};
use crate::metrics::{psnr, psnr_for_report, ssim, uciqe, uiqm};
use crate::model::HybSens;
use crate::{Error, Result};

/// Metrics of one image. Full-reference fields are `None` on unpaired splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub dataset: String,
    pub split: Split,
    pub image: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
    pub uciqe: f64,
    pub uiqm: f64,
}

/// Arithmetic means over the rows of one dataset and split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub dataset: String,
    pub split: Split,
    pub images: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
    pub uciqe: f64,
    pub uiqm: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summary: Vec<EvalSummary>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

impl EvalReport {
    /// Builds the report, computing one summary per (dataset, split) group.
    /// PSNR means use the report cap for identical pairs.
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let mut groups: BTreeMap<(String, String), Vec<&EvalRow>> = BTreeMap::new();
        for r in &rows {
            groups.entry((r.dataset.clone(), r.split.to_string())).or_default().push(r);
        }
        let summary = groups
            .into_values()
            .map(|g| {
                let n = g.len() as f64;
                EvalSummary {
                    dataset: g[0].dataset.clone(),
                    split: g[0].split,
                    images: g.len(),
                    psnr: mean_of(g.iter().map(|r| r.psnr.map(psnr_for_report))),
                    ssim: mean_of(g.iter().map(|r| r.ssim)),
                    lpips: mean_of(g.iter().map(|r| r.lpips)),
                    uciqe: g.iter().map(|r| r.uciqe).sum::<f64>() / n,
                    uiqm: g.iter().map(|r| r.uiqm).sum::<f64>() / n,
                }
            })
            .collect();
        EvalReport { rows, summary }
    }

    /// Per-image rows followed by summary rows, one JSON object per line.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for r in &self.rows {
            let mut v = serde_json::to_value(r)?;
            v["kind"] = "image".into();
            if let Some(p) = r.psnr {
                v["psnr"] = serde_json::json!(psnr_for_report(p));
            }
            writeln!(f, "{v}").map_err(|e| Error::io(path, e))?;
        }
        for s in &self.summary {
            let mut v = serde_json::to_value(s)?;
            v["kind"] = "mean".into();
            writeln!(f, "{v}").map_err(|e| Error::io(path, e))?;
        }
        f.flush().map_err(|e| Error::io(path, e))
    }

    /// Fixed-width summary table.
    pub fn table(&self) -> String {
        let show_lpips = self.summary.iter().any(|s| s.lpips.is_some());
        let cell = |v: Option<f64>, digits: usize| v.map_or("-".to_string(), |x| format!("{x:.digits$}"));
        let mut out = format!("{:<24} {:>8} {:>8}", "dataset", "PSNR", "SSIM");
        if show_lpips {
            out.push_str(&format!(" {:>8}", "LPIPS"));
        }
        out.push_str(&format!(" {:>8} {:>8}\n", "UCIQE", "UIQM"));
        for s in &self.summary {
            let name = format!("{} ({})", s.dataset, s.split);
            let _ = write!(out, "{:<24} {:>8} {:>8}", name, cell(s.psnr, 2), cell(s.ssim, 4));
            if show_lpips {
                let _ = write!(out, " {:>8}", cell(s.lpips, 4));
            }
            let _ = writeln!(out, " {:>8.4} {:>8.4}", s.uciqe, s.uiqm);
        }
        out
    }
}

/// Runs `model` on an image of any size: reflect-pads to the required
/// multiple, predicts and crops back.
pub fn restore_image(model: &HybSens<f32>, img: &Rgb32FImage) -> Result<Rgb32FImage> {
    let m = model.config().size_multiple() as u32;
    let padded = pad_to_multiple(img, m);
    let out: Tensor<f32> = model.predict(&to_tensor(&[&padded])?)?;
    let restored = tensor_image(&out, 0)?;
    Ok(crop(&restored, 0, 0, img.width(), img.height()))
}

/// Scores restorations of every test record. `restore` maps an input image
/// to the enhanced image; paired splits also get PSNR, SSIM and (with a
/// backend) LPIPS against the reference.
pub fn evaluate(
    manifest: &Manifest,
    restore: &dyn Fn(&Rgb32FImage) -> Result<Rgb32FImage>,
    perceptual: Option<&dyn PerceptualDistance<f32>>,
) -> Result<EvalReport> {
    let tests: Vec<_> = manifest.records.iter().filter(|r| r.split != Split::Train).collect();
    if tests.is_empty() {
        return Err(Error::Manifest("the manifest has no test records".into()));
    }
    let ssim_opts = SsimOptions::default();
    let mut rows = Vec::with_capacity(tests.len());
    for r in tests {
        let input = load_image(&r.input_path)?;
        let out = restore(&input)?;
        let mut row = EvalRow {
            dataset: r.source.to_string(),
            split: r.split,
            image: r.input_path.display().to_string(),
            psnr: None,
            ssim: None,
            lpips: None,
            uciqe: uciqe(&out),
            uiqm: uiqm(&out),
        };
        if r.split == Split::TestPaired {
            let target_path = r.target_path.as_ref().ok_or_else(|| {
                Error::Manifest(format!("paired test record {} has no target", r.input_path.display()))
            })?;
            let target = load_image(target_path)?;
            if target.dimensions() != out.dimensions() {
                return Err(Error::Manifest(format!(
                    "{}: restored image is {:?}, reference is {:?}",
                    r.input_path.display(),
                    out.dimensions(),
                    target.dimensions()
                )));
            }
            row.psnr = Some(psnr(&out, &target, 1.0));
            row.ssim = Some(ssim(&out, &target, &ssim_opts));
            if let Some(p) = perceptual {
                let d = p.distance(&to_tensor(&[&out])?, &to_tensor(&[&target])?)?;
                row.lpips = Some(d.item() as f64);
            }
        }
        rows.push(row);
    }
    Ok(EvalReport::from_rows(rows))
}
