use std::path::Path;
use std::process::{Command, Output};

use image::{Rgb, RgbImage};

fn hybsens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybsens"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("HYBSENS_DATA_ROOT")
        .output()
        .expect("run hybsens")
}

fn ok(args: &[&str]) -> String {
    let out = hybsens(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_png(path: &Path, seed: u32) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    let img = RgbImage::from_fn(16, 16, |x, y| {
        let v = (x * 13 + y * 7 + seed * 31) % 256;
        Rgb([v as u8, (v / 2 + 40) as u8, (255 - v) as u8])
    });
    img.save(path).unwrap();
}

/// A small paired source plus an unpaired one under `root`.
fn dataset(root: &Path) {
    for i in 0..6 {
        write_png(&root.join(format!("pairs/in/{i}.png")), i);
        write_png(&root.join(format!("pairs/ref/{i}.png")), i + 100);
    }
    for i in 0..2 {
        write_png(&root.join(format!("wild/{i}.png")), i + 200);
    }
    std::fs::write(
        root.join("plan.toml"),
        r#"seed = 1

[[sources]]
source = "LSUI"
input_dir = "pairs/in"
target_dir = "pairs/ref"
train = 4
test = 2

[[sources]]
source = "RUIE"
input_dir = "wild"
test = 2
"#,
    )
    .unwrap();
}

#[test]
fn bench_reports_the_default_model() {
    let out = ok(&["bench", "--json"]);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    let params = v["params"].as_u64().unwrap() as f64;
    let macs = v["macs"].as_u64().unwrap() as f64;
    assert!((params - 1.145e6).abs() < 0.05 * 1.145e6, "{params}");
    assert!((macs - 10.05e9).abs() < 0.15 * 10.05e9, "{macs}");
    let study = ok(&["bench", "--study", "--height", "64", "--width", "64"]);
    assert_eq!(study.lines().count(), 11);
    assert!(study.starts_with("backbone"));
    let backbone = ok(&["bench", "--ablation", "backbone", "--json"]);
    let v: serde_json::Value = serde_json::from_str(backbone.trim()).unwrap();
    assert!((v["params"].as_u64().unwrap() as f64 - 1.469e6).abs() < 0.05 * 1.469e6);
    assert!(!hybsens(&["bench", "--ablation", "nonsense"]).status.success());
}

#[test]
fn prior_writes_a_gray_image_and_channel_means() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.png");
    let img = RgbImage::from_pixel(8, 8, Rgb([51, 102, 153]));
    img.save(&input).unwrap();
    let out = dir.path().join("prior.png");
    let report = dir.path().join("prior.json");
    let text = ok(&["prior", input.to_str().unwrap(), out.to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert!(text.contains("R 0.200000 G 0.400000 B 0.600000"), "{text}");
    let prior = image::open(&out).unwrap().to_rgb8();
    assert!(prior.pixels().all(|p| p.0 == [102, 102, 102]));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!((v["channel_means"]["b"].as_f64().unwrap() - 0.6).abs() < 1e-6);
    assert!((v["gray_world_spread"].as_f64().unwrap() - 0.4).abs() < 1e-6);
}

#[test]
fn manifest_build_validate_train_infer_eval() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    dataset(&root);
    let manifest = dir.path().join("m.jsonl");
    let m = manifest.to_str().unwrap();
    let built = ok(&[
        "manifest",
        "build",
        "--root",
        root.to_str().unwrap(),
        "--plan",
        root.join("plan.toml").to_str().unwrap(),
        "--out",
        m,
    ]);
    assert!(built.contains("wrote 8 records"), "{built}");
    assert!(ok(&["manifest", "validate", m]).contains("valid"));

    // The data root may also come from the environment.
    let env_out = Command::new(env!("CARGO_BIN_EXE_hybsens"))
        .args(["manifest", "build", "--plan", root.join("plan.toml").to_str().unwrap(), "--out"])
        .arg(dir.path().join("m2.jsonl"))
        .env("HYBSENS_DATA_ROOT", &root)
        .output()
        .unwrap();
    assert!(env_out.status.success(), "{}", String::from_utf8_lossy(&env_out.stderr));
    assert_eq!(std::fs::read(&manifest).unwrap(), std::fs::read(dir.path().join("m2.jsonl")).unwrap());

    let config = dir.path().join("run.toml");
    std::fs::write(&config, "[train]\nbatch = 2\nseed = 3\n[train.augment]\nresize = 16\ncrop = 16\n").unwrap();
    let run = dir.path().join("run");
    let trained = ok(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--manifest",
        m,
        "--out",
        run.to_str().unwrap(),
        "--steps",
        "2",
        "--checkpoint-every",
        "0",
    ]);
    assert!(trained.contains("step 2 "), "{trained}");
    let log = std::fs::read_to_string(run.join("loss_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let saved = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(saved.contains("steps = 2") && saved.contains("batch = 2"), "{saved}");
    let ckpt = run.join("last.ckpt");

    // Odd sizes are padded internally and cropped back.
    let odd = dir.path().join("odd.png");
    RgbImage::from_pixel(13, 10, Rgb([20, 120, 140])).save(&odd).unwrap();
    let restored = dir.path().join("restored.png");
    ok(&["infer", "--checkpoint", ckpt.to_str().unwrap(), odd.to_str().unwrap(), restored.to_str().unwrap()]);
    assert_eq!(image::open(&restored).unwrap().to_rgb8().dimensions(), (13, 10));
    let out_dir = dir.path().join("restored_dir");
    let many = ok(&[
        "infer",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        root.join("wild").to_str().unwrap(),
        out_dir.to_str().unwrap(),
    ]);
    assert!(many.contains("restored 2 image(s)"));
    assert!(out_dir.join("0.png").is_file() && out_dir.join("1.png").is_file());

    let report = dir.path().join("eval.jsonl");
    let table = ok(&["eval", "--manifest", m, "--checkpoint", ckpt.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert!(table.contains("LSUI (test_paired)") && table.contains("RUIE (test_unpaired)"), "{table}");
    let rows = std::fs::read_to_string(&report).unwrap();
    assert_eq!(rows.lines().count(), 4 + 2);
    let baseline = ok(&["eval", "--manifest", m]);
    assert!(baseline.contains("LSUI (test_paired)"));
}

#[test]
fn errors_are_reported_with_a_failing_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = hybsens(&["manifest", "build", "--root", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("no images found") && err.contains("UIEB"), "{err}");

    let out = hybsens(&["manifest", "build", "--out", "x.jsonl"]);
    assert!(!out.status.success(), "missing data root must be rejected");

    let out = hybsens(&["infer", "--checkpoint", "/nonexistent.ckpt", "a.png", "b.png"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent.ckpt"));
}

#[test]
fn empty_plan_requires_allow_empty() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    dataset(root);
    let plan = root.join("plan.toml");
    let out = root.join("m.jsonl");
    let args = ["manifest", "build", "--root", root.to_str().unwrap(), "--plan", plan.to_str().unwrap(), "--scale", "0"];
    let refused = hybsens(&[&args[..], &["--out", out.to_str().unwrap()]].concat());
    assert!(!refused.status.success());
    let accepted = ok(&[&args[..], &["--allow-empty", "--out", out.to_str().unwrap()]].concat());
    assert!(accepted.contains("wrote 0 records"));
}
