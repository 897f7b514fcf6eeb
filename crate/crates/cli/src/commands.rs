use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hybsens::checkpoint::Checkpoint;
use hybsens::config::RunConfig;
use hybsens::data::{load_image, save_png, tensor_image, to_tensor};
use hybsens::eval::{evaluate, restore_image};
use hybsens::manifest::{build_manifest, DataPlan, Manifest, IMAGE_EXTENSIONS};
use hybsens::prior::{channel_means, compute_prior};
use hybsens::train::TrainConfig;
use hybsens::{count_macs, count_params, ModelConfig, Switches};
use serde_json::json;

use super::{BenchArgs, BuildArgs, CliError, CliResult, EvalArgs, InferArgs, ModelArgs, PriorArgs, TrainArgs};

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn study_row(name: &str) -> CliResult<Switches> {
    let rows = Switches::study_rows();
    rows.iter().find(|(n, _)| n.eq_ignore_ascii_case(name)).map(|(_, s)| *s).ok_or_else(|| {
        let names: Vec<_> = rows.iter().map(|(n, _)| *n).collect();
        CliError::Usage(format!("unknown ablation `{name}`; choose one of {}", names.join(", ")))
    })
}

/// The run configuration from `--config` (or the defaults), with the
/// ablation override applied.
fn run_config(args: &ModelArgs, train_default: TrainConfig) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig { model: ModelConfig::default(), train: train_default },
    };
    if let Some(name) = &args.ablation {
        cfg.model = cfg.model.ablate(study_row(name)?)?;
    }
    Ok(cfg)
}

pub fn manifest_build(a: BuildArgs) -> CliResult<()> {
    let mut plan = match &a.plan {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| CliError::Io { path: p.clone(), source })?;
            let mut plan: DataPlan =
                toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            for s in &mut plan.sources {
                s.input_dir = a.root.join(&s.input_dir);
                s.target_dir = s.target_dir.as_ref().map(|t| a.root.join(t));
            }
            plan
        }
        None => DataPlan::standard(&a.root),
    };
    if let Some(s) = a.scale {
        plan.scale = s;
    }
    if let Some(s) = a.seed {
        plan.seed = s;
    }
    let report = build_manifest(&plan, a.allow_empty)?;
    for note in &report.notes {
        log::warn!("{note}");
    }
    report.manifest.validate()?;
    report.manifest.save(&a.out)?;
    let mut counts: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    for r in &report.manifest.records {
        let e = counts.entry((r.split.to_string(), r.source.to_string())).or_default();
        e.0 += 1;
        e.1 += r.repeat_factor as usize;
    }
    for ((split, source), (records, samples)) in counts {
        println!("{split:<14} {source:<14} {records:>6} records {samples:>6} samples");
    }
    println!("wrote {} records to {}", report.manifest.records.len(), a.out.display());
    Ok(())
}

pub fn manifest_validate(path: &Path) -> CliResult<()> {
    let m = Manifest::load(path)?;
    m.validate()?;
    println!("{}: {} records, {} training samples, valid", path.display(), m.records.len(), m.training_samples().len());
    Ok(())
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let preset = if a.desk { TrainConfig::desk() } else { TrainConfig::default() };
    let mut cfg = run_config(&a.model, preset)?;
    let t = &mut cfg.train;
    if let Some(v) = a.steps {
        t.steps = Some(v);
    }
    if let Some(v) = a.epochs {
        t.epochs = v;
        t.steps = None;
    }
    if let Some(v) = a.batch {
        t.batch = v;
    }
    if let Some(v) = a.lr_init {
        t.lr_init = v;
    }
    if let Some(v) = a.lr_min {
        t.lr_min = v;
    }
    if let Some(v) = a.crop {
        t.augment.crop = v;
        t.augment.resize = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.checkpoint_every {
        t.checkpoint_every = v;
    }
    t.validate()?;
    cfg.model.validate()?;
    let manifest = Manifest::load(&a.manifest)?;
    manifest.validate()?;
    std::fs::create_dir_all(&a.out).map_err(|source| CliError::Io { path: a.out.clone(), source })?;
    write_file(&a.out.join("config.toml"), &cfg.to_toml_string()?)?;
    let out = hybsens::train::train(&manifest, &cfg.model, &cfg.train, &a.out, a.resume.as_deref())?;
    if let Some(last) = out.logs.last() {
        println!("step {} loss {:.6} lr {:.3e}", last.step, last.loss, last.lr);
    }
    println!("checkpoint {}", out.last_checkpoint.display());
    println!("loss log {}", out.loss_log.display());
    Ok(())
}

fn images_in(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn infer(a: InferArgs) -> CliResult<()> {
    let model = Checkpoint::load(&a.checkpoint)?.model()?;
    let jobs: Vec<(PathBuf, PathBuf)> = if a.input.is_dir() {
        std::fs::create_dir_all(&a.output).map_err(|source| CliError::Io { path: a.output.clone(), source })?;
        images_in(&a.input)?
            .into_iter()
            .map(|p| {
                let out = a.output.join(p.file_stem().unwrap_or_default()).with_extension("png");
                (p, out)
            })
            .collect()
    } else {
        vec![(a.input.clone(), a.output.clone())]
    };
    for (src, dst) in &jobs {
        let restored = restore_image(&model, &load_image(src)?)?;
        save_png(&restored, dst)?;
        log::info!("{} -> {}", src.display(), dst.display());
    }
    println!("restored {} image(s)", jobs.len());
    Ok(())
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let report = match &a.checkpoint {
        Some(p) => {
            let model = Checkpoint::load(p)?.model()?;
            evaluate(&manifest, &|img| restore_image(&model, img), None)?
        }
        None => evaluate(&manifest, &|img| Ok(img.clone()), None)?,
    };
    if let Some(out) = &a.out {
        report.write_jsonl(out)?;
    }
    print!("{}", report.table());
    Ok(())
}

pub fn prior(a: PriorArgs) -> CliResult<()> {
    let img = load_image(&a.input)?;
    let x = to_tensor(&[&img])?;
    let p = compute_prior(&x)?;
    save_png(&tensor_image(&p, 0)?, &a.output)?;
    let [r, g, b] = channel_means(&x)?[0];
    let spread = r.max(g).max(b) - r.min(g).min(b);
    let report = json!({
        "input": a.input.display().to_string(),
        "prior": a.output.display().to_string(),
        "channel_means": { "r": r, "g": g, "b": b },
        "prior_mean": (r + g + b) / 3.0,
        "gray_world_spread": spread,
    });
    if let Some(path) = &a.report {
        write_file(path, &serde_json::to_string_pretty(&report).map_err(hybsens::Error::from)?)?;
    }
    println!("channel means R {r:.6} G {g:.6} B {b:.6} (spread {spread:.6})");
    Ok(())
}

fn cost(cfg: &ModelConfig, h: usize, w: usize) -> CliResult<(usize, u64)> {
    Ok((count_params(cfg)?, count_macs(cfg, h, w)?))
}

pub fn bench(a: BenchArgs) -> CliResult<()> {
    let base = run_config(&a.model, TrainConfig::default())?.model;
    let rows: Vec<(String, ModelConfig)> = if a.study {
        Switches::study_rows()
            .into_iter()
            .map(|(n, s)| Ok((n.to_string(), base.ablate(s)?)))
            .collect::<CliResult<_>>()?
    } else {
        vec![("model".to_string(), base)]
    };
    for (name, cfg) in rows {
        let (params, macs) = cost(&cfg, a.height, a.width)?;
        if a.json {
            let v = json!({ "name": name, "params": params, "macs": macs, "height": a.height, "width": a.width });
            println!("{v}");
        } else {
            println!(
                "{name:<12} params {params:>9} ({:.3}M)  MACs {macs:>12} ({:.3}G at 1x3x{}x{})",
                params as f64 / 1e6,
                macs as f64 / 1e9,
                a.height,
                a.width
            );
        }
    }
    Ok(())
}
