//! Property checks used both by the per-module test targets and by the
//! acceptance harness. Each check panics on failure and returns a short
//! summary of what it measured.

use hybsens::checkpoint::Checkpoint;
use hybsens::contextualizer::{act, kft, sat, Attention, FeatureContextualizer, MaqBlock, MaqOptions, Spp};
use hybsens::data::{tensor_image, to_tensor, AugmentConfig, Pair};
use hybsens::detail::{ContextBlock, Nafb, Rcb};
use hybsens::harmonizer::{Calibrator, Cwl, HarmonizerOptions, ScaleHarmonizer};
use hybsens::loss::{ssim, CompositeLoss, LossConfig, SsimMode, SsimOptions};
use hybsens::metrics;
use hybsens::nn::{simple_gate, Conv2d, Dropout};
use hybsens::prior::{compute_prior, PriorExtractor};
use hybsens::quaternion::{quaternion_conv, Collapse, QuaternionFeature, QuaternionFusion, QuaternionKernel};
use hybsens::tensor::{no_grad, Conv2dSpec, Shape, Tensor};
use hybsens::train::{StepLog, TrainConfig, Trainer};
use hybsens::{HybSens, ModelConfig};
use rand::Rng;

use super::oracles;
use super::{assert_grads, grad_opts, max_abs_diff, project, randn, rng, tensors, uniform};

// ------------------------------------------------------------- gradients

/// Every tensor primitive the network is built from, on three shapes each.
pub fn grad_tensor_ops() -> String {
    let shapes: [[usize; 4]; 3] = [[1, 2, 3, 3], [2, 3, 4, 5], [1, 4, 6, 2]];
    let opts = grad_opts(30);
    let mut checked = 0;
    for (si, &s) in shapes.iter().enumerate() {
        let seed = 100 + si as u64;
        let x = randn(s, seed);
        let y = randn(s, seed + 1);
        let ch = randn(Shape::channels(s[1]), seed + 2);
        let pos = uniform(s, 0.5, 2.0, seed + 3);
        let mut unary: Vec<(&str, Box<dyn Fn() -> hybsens::Result<Tensor<f64>>>)> = Vec::new();
        let (x1, x2, x3, x4, x5, x6, x7, x8) =
            (x.clone(), x.clone(), x.clone(), x.clone(), x.clone(), x.clone(), x.clone(), x.clone());
        unary.push(("neg", Box::new(move || Ok(project(&x1.neg(), seed)?))));
        unary.push(("scale+shift", Box::new(move || Ok(project(&x2.scale(-1.7).add_scalar(0.3), seed)?))));
        unary.push(("square", Box::new(move || Ok(project(&x3.square(), seed)?))));
        unary.push(("exp", Box::new(move || Ok(project(&x4.exp(), seed)?))));
        unary.push(("leaky_relu", Box::new(move || Ok(project(&x5.leaky_relu(0.2), seed)?))));
        unary.push(("sigmoid", Box::new(move || Ok(project(&x6.sigmoid(), seed)?))));
        unary.push(("abs", Box::new(move || Ok(project(&x7.abs(), seed)?))));
        unary.push(("softmax", Box::new(move || Ok(project(&x8.softmax(3)?, seed)?))));
        for (name, f) in &unary {
            checked += assert_grads(name, &[x.clone()], &opts, f).checked;
        }
        let p = pos.clone();
        checked += assert_grads("sqrt", &[pos.clone()], &opts, || Ok(project(&p.sqrt(), seed)?)).checked;
        let (a, b, c) = (x.clone(), y.clone(), ch.clone());
        checked += assert_grads("add/mul/div broadcast", &[x.clone(), y.clone(), ch.clone()], &opts, || {
            let t = a.add(&b)?.mul(&c)?.sub(&b.mul(&a)?)?;
            Ok(project(&t.div(&c.square().add_scalar(1.0))?, seed)?)
        })
        .checked;
        let (a, b) = (x.clone(), y.clone());
        checked += assert_grads("smooth_l1", &[x.clone(), y.clone()], &opts, || Ok(a.scale(2.0).smooth_l1(&b, 1.0)?))
            .checked;
        let a = x.clone();
        checked += assert_grads("sum/mean/global_avg_pool", &[x.clone()], &opts, || {
            Ok(project(&a.global_avg_pool(), seed)?.add(&a.mean())?.add(&a.square().sum())?)
        })
        .checked;
        let (a, g, b2) = (x.clone(), ch.clone(), randn(Shape::channels(s[1]), seed + 4));
        let bb = b2.clone();
        checked += assert_grads("layer_norm", &[x.clone(), ch.clone(), b2], &opts, || {
            Ok(project(&a.layer_norm_channels(&g, &bb, 1e-5)?, seed)?)
        })
        .checked;
        let a = x.clone();
        checked += assert_grads("layout", &[x.clone()], &opts, || {
            let c = a.shape().c();
            let parts = a.chunk_channels(1)?;
            let joined = Tensor::cat_channels(&[parts[0].clone(), a.narrow_channels(c - 1, 1)?])?;
            let [n, cc, h, w] = joined.dims();
            let r = joined.reshape([n, 1, cc * h, w])?.transpose_last2();
            Ok(project(&r, seed)?)
        })
        .checked;
        let (a, b) = (x.clone(), y.clone());
        checked += assert_grads("matmul", &[x.clone(), y.clone()], &opts, || {
            let prod = a.matmul(&b.transpose_last2())?.add(&a.matmul_nt(&b)?)?;
            let prod2 = a.transpose_last2().matmul(&b)?;
            Ok(project(&prod, seed)?.add(&project(&prod2, seed + 9)?)?)
        })
        .checked;
        let a = x.clone();
        checked += assert_grads("pool/upsample", &[x.clone()], &opts, || {
            let [_, _, h, w] = a.dims();
            let p = a.adaptive_avg_pool(2.min(h), 2.min(w))?.upsample_bilinear(h + 3, w + 1)?;
            Ok(project(&p, seed)?)
        })
        .checked;
        let a = x.clone();
        checked += assert_grads("clamp", &[x.clone()], &opts, || Ok(project(&a.clamp(-0.5, 0.5), seed)?)).checked;
        let a = x.clone();
        checked += assert_grads("dropout", &[x.clone()], &opts, || {
            Ok(project(&a.dropout(0.3, &mut rng(seed))?, seed)?)
        })
        .checked;
        // Convolutions: dense, pointwise, depthwise, strided and grouped.
        let cin = s[1];
        let convs = [
            ([cin + 1, cin, 3, 3], Conv2dSpec::same(3)),
            ([2, cin, 1, 1], Conv2dSpec::default()),
            ([cin, 1, 3, 3], Conv2dSpec::same(3).with_groups(cin)),
            ([cin, cin, 3, 3], Conv2dSpec::same(3).with_stride(2)),
            ([cin, 1, 5, 5], Conv2dSpec::same(5).with_groups(cin)),
        ];
        for (ci, (wdims, spec)) in convs.into_iter().enumerate() {
            let w = randn(wdims, seed + 20 + ci as u64);
            let b = randn(Shape::channels(wdims[0]), seed + 40 + ci as u64);
            let (a, ww, bb) = (x.clone(), w.clone(), b.clone());
            checked += assert_grads("conv2d", &[x.clone(), w, b], &opts, || {
                Ok(project(&a.conv2d(&ww, Some(&bb), spec)?, seed)?)
            })
            .checked;
        }
    }
    format!("{checked} entries over 17 primitive groups")
}

/// Block-level gradient checks in double precision.
pub fn grad_blocks() -> String {
    let opts = grad_opts(6);
    let mut checked = 0;
    let mut run = |name: &str, wrt: Vec<Tensor<f64>>, f: &dyn Fn() -> hybsens::Result<Tensor<f64>>| {
        checked += assert_grads(name, &wrt, &opts, f).checked;
    };
    let r = &mut rng(7);

    let collapse = Collapse::<f64>::new(3, r);
    let q = randn([1, 12, 4, 4], 1);
    let mut wrt = tensors(&collapse);
    wrt.push(q.clone());
    run("collapse", wrt, &|| project(&collapse.forward(&QuaternionFeature::from_concat(&q)?)?, 1));

    let fusion = QuaternionFusion::<f64>::new(3, 3, r);
    let (a, b, c) = (randn([1, 3, 5, 5], 2), randn([1, 3, 5, 5], 3), randn([1, 3, 5, 5], 4));
    let mut wrt = tensors(&fusion);
    wrt.extend([a.clone(), b.clone(), c.clone()]);
    run("quaternion fusion", wrt, &|| {
        let two = fusion.forward([Some(&a), Some(&b), None])?;
        let three = fusion.forward([Some(&a), Some(&b), Some(&c)])?;
        Ok(project(&two, 2)?.add(&project(&three, 3)?)?)
    });

    let nafb = Nafb::<f64>::new(4, Dropout::new(0.0, 0), r);
    let x = randn([1, 4, 8, 8], 5);
    let mut wrt = tensors(&nafb);
    wrt.push(x.clone());
    run("nafb", wrt, &|| project(&nafb.forward(&x)?, 5));

    let rcb = Rcb::<f64>::new(3, r);
    let x = randn([1, 3, 6, 6], 6);
    let mut wrt = tensors(&rcb);
    wrt.push(x.clone());
    run("rcb", wrt, &|| project(&rcb.forward(&x)?, 6));

    let cb = ContextBlock::<f64>::new(3, r);
    let x = randn([2, 3, 4, 5], 7);
    let mut wrt = tensors(&cb);
    wrt.push(x.clone());
    run("context block", wrt, &|| project(&cb.forward(&x)?, 7));

    let att = Attention::<f64>::new(4, 2, 2, r);
    let (x, p) = (randn([1, 4, 5, 5], 8), randn([1, 4, 5, 5], 9));
    let mut wrt = tensors(&att);
    wrt.extend([x.clone(), p.clone()]);
    run("act/kft/sat", wrt, &|| {
        Ok(project(&act(&x, &p, &att)?, 8)?.add(&project(&kft(&x, &p, &att)?, 9)?)?.add(&project(&sat(&x, &att)?, 10)?)?)
    });

    let maq_opts = MaqOptions {
        use_act: true,
        use_kft: true,
        use_sat: true,
        heads: 2,
        ffn_expansion: 2,
        quaternion_kernel: 1,
        plain_expansion: 2.0,
    };
    let maq = MaqBlock::<f64>::new(4, &maq_opts, r);
    let (x, p) = (randn([1, 4, 4, 4], 11), randn([1, 4, 4, 4], 12));
    let mut wrt = tensors(&maq);
    wrt.extend([x.clone(), p.clone()]);
    run("maq block", wrt, &|| {
        let (nx, np) = maq.forward(&x, Some(&p), &mut Vec::new())?;
        Ok(project(&nx, 11)?.add(&project(&np.expect("prior stream"), 12)?)?)
    });

    let spp = Spp::<f64>::new(4, 2, &Spp::<f64>::DEFAULT_SIZES, r);
    let x = randn([1, 4, 8, 8], 13);
    let mut wrt = tensors(&spp);
    wrt.push(x.clone());
    run("spp", wrt, &|| project(&spp.forward(&x)?, 13));

    let fc_opts = MaqOptions { heads: 4, ..maq_opts };
    let fc = FeatureContextualizer::<f64>::new(12, 48, 4, 12, &fc_opts, r);
    let (x, p) = (randn([1, 12, 8, 8], 14), randn([1, 48, 8, 8], 15));
    let mut wrt = tensors(&fc);
    wrt.extend([x.clone(), p.clone()]);
    run("feature contextualizer", wrt, &|| project(&fc.forward(&x, Some(&p))?, 14));

    let cwl = Cwl::<f64>::new(3, 2, 4, r);
    let x = randn([1, 3, 6, 6], 16);
    let mut wrt = tensors(&cwl);
    wrt.push(x.clone());
    run("cwl", wrt, &|| project(&cwl.forward(&x)?, 16));

    let cal = Calibrator::<f64>::new(3, 4, 2, r);
    let mut wrt = tensors(&cal);
    wrt.push(x.clone());
    run("calibrator", wrt, &|| project(&cal.forward(&x)?, 17));

    let sh_opts = HarmonizerOptions { enabled: true, stages: 3, cwl_ratio: 0.75, plain_expansion: 2.0 };
    let sh = ScaleHarmonizer::<f64>::new(7, 4, &sh_opts, r);
    let (skip, up) = (randn([1, 3, 6, 6], 18), randn([1, 4, 6, 6], 19));
    let mut wrt = tensors(&sh);
    wrt.extend([skip.clone(), up.clone()]);
    run("scale harmonizer", wrt, &|| project(&sh.forward(&skip, &up)?, 18));

    let pe = PriorExtractor::<f64>::new(&[3, 6, 12], 2, Some(48), &Dropout::new(0.0, 0), r);
    let img = uniform([1, 3, 8, 8], 0.0, 1.0, 20);
    let mut wrt = tensors(&pe);
    wrt.push(img.clone());
    run("prior extractor", wrt, &|| {
        let pack = pe.forward(&compute_prior(&img)?)?;
        Ok(project(&pack.bottleneck_feat.expect("embedding"), 20)?.add(&project(&pack.top_feat, 21)?)?)
    });

    let (restored, target) = (uniform([2, 3, 12, 12], 0.0, 1.0, 22), uniform([2, 3, 12, 12], 0.0, 1.0, 23));
    let loss = CompositeLoss::<f64>::new(LossConfig::default()).expect("default loss");
    run("composite loss", vec![restored.clone()], &|| Ok(loss.forward(&restored, &target)?.0));
    let global = SsimOptions { mode: SsimMode::Global, ..SsimOptions::default() };
    run("ssim (global)", vec![restored.clone(), target.clone()], &|| ssim(&restored, &target, &global));
    format!("{checked} entries over 15 blocks")
}

/// Full network at 1×3×16×16 with a sample of every parameter tensor.
pub fn grad_full_model() -> String {
    let model = HybSens::<f64>::new(&ModelConfig::default(), 3).expect("default model");
    let x = uniform([1, 3, 16, 16], 0.0, 1.0, 30);
    let mut wrt = vec![x.clone()];
    wrt.extend(tensors(&model));
    let n_tensors = wrt.len();
    let opts = grad_opts(1);
    let rep = assert_grads("full model", &wrt, &opts, || project(&model.forward(&x)?, 30));
    format!("{} entries across {n_tensors} tensors, max rel err {:.1e}", rep.checked, rep.max_rel_err)
}

// ------------------------------------------------------------- algebra

fn conv_oracle(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let (out, dims) = oracles::conv(
        &x.to_vec(),
        x.dims(),
        &conv.weight.to_vec(),
        conv.weight.dims(),
        conv.bias.as_ref().map(|b| b.to_vec()).as_deref(),
        conv.spec,
    );
    Tensor::from_vec(out, dims).unwrap()
}

/// Identity real kernel and zero imaginary kernels map `(0, A, B, 0)` to
/// itself.
pub fn quaternion_identity_passthrough() -> String {
    let c = 3;
    let mut eye = vec![0.0; c * c];
    (0..c).for_each(|i| eye[i * c + i] = 1.0);
    let wr = Tensor::<f64>::from_vec(eye, [c, c, 1, 1]).unwrap();
    let z = || Tensor::<f64>::zeros([c, c, 1, 1]);
    let kernel = QuaternionKernel::from_parts(wr, z(), z(), z()).unwrap();
    let (a, b) = (randn([2, c, 4, 5], 40), randn([2, c, 4, 5], 41));
    let q = quaternion_conv(&a, &b, &kernel).unwrap();
    assert!(q.r.values().iter().all(|&v| v == 0.0), "real part not zero");
    assert!(q.k.values().iter().all(|&v| v == 0.0), "k part not zero");
    assert_eq!(q.i.to_vec(), a.to_vec(), "i slot differs from A");
    assert_eq!(q.j.to_vec(), b.to_vec(), "j slot differs from B");
    "(0, A, B, 0) reproduced exactly".into()
}

/// Each Hamilton component against four independent convolutions.
pub fn quaternion_term_oracle() -> String {
    let r = &mut rng(42);
    let kernel = QuaternionKernel::<f64>::new(3, 2, 3, r);
    let (a, b) = (randn([2, 3, 5, 4], 43), randn([2, 3, 5, 4], 44));
    let q = quaternion_conv(&a, &b, &kernel).unwrap();
    let spec = Conv2dSpec::same(3);
    let cv = |x: &Tensor<f64>, w: usize| {
        let wt = &kernel.w[w];
        oracles::conv(&x.to_vec(), x.dims(), &wt.to_vec(), wt.dims(), None, spec).0
    };
    let (wr, wi, wj, wk) = (0, 1, 2, 3);
    let comb = |p: Vec<f64>, sp: f64, m: Vec<f64>, sm: f64| -> Vec<f64> {
        p.iter().zip(&m).map(|(u, v)| sp * u + sm * v).collect()
    };
    let expect = [
        comb(cv(&a, wi), -1.0, cv(&b, wj), -1.0),
        comb(cv(&a, wr), 1.0, cv(&b, wk), -1.0),
        comb(cv(&a, wk), 1.0, cv(&b, wr), 1.0),
        comb(cv(&a, wj), 1.0, cv(&b, wi), -1.0),
    ];
    let got = [q.r.to_vec(), q.i.to_vec(), q.j.to_vec(), q.k.to_vec()];
    let err = (0..4).map(|i| max_abs_diff(&got[i], &expect[i])).fold(0.0, f64::max);
    assert!(err < 1e-8, "Hamilton components deviate by {err:e}");
    format!("max deviation {err:.1e}")
}

pub fn simple_gate_ones_identity() -> String {
    let first = randn([2, 3, 4, 4], 50);
    let x = Tensor::cat_channels(&[first.clone(), Tensor::ones([2, 3, 4, 4])]).unwrap();
    let y = simple_gate(&x).unwrap();
    assert_eq!(y.to_vec(), first.to_vec(), "ones chunk is not an identity");
    let x = Tensor::cat_channels(&[first, Tensor::zeros([2, 3, 4, 4])]).unwrap();
    assert!(simple_gate(&x).unwrap().values().iter().all(|&v| v == 0.0), "zero chunk does not zero the output");
    "ones chunk passes the other chunk unchanged".into()
}

/// Rows of every attention map sum to one.
pub fn attention_rows_normalized() -> String {
    let r = &mut rng(51);
    let att = Attention::<f64>::new(8, 2, 2, r);
    let mut worst: f64 = 0.0;
    for (i, side) in [3usize, 5, 8].into_iter().enumerate() {
        let (q, kv) = (randn([2, 8, side, side], 52 + i as u64), randn([2, 8, side, side], 60 + i as u64));
        let (_, map) = att.forward_traced(&q.scale(3.0), &kv).unwrap();
        let v = map.values();
        for row in v.chunks(8) {
            assert!(row.iter().all(|&p| p > 0.0 && p < 1.0), "attention entry outside (0, 1)");
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    assert!(worst < 1e-6, "a row sums to 1 ± {worst:e}");
    // The raw softmax on a shifted input.
    let x = randn([1, 2, 3, 7], 70);
    let a = x.softmax(3).unwrap().to_vec();
    let b = x.add_scalar(1000.0).softmax(3).unwrap().to_vec();
    assert!(max_abs_diff(&a, &b) < 1e-6, "softmax is not shift invariant");
    format!("max row-sum error {worst:.1e}")
}

/// `main(x) ⊙ scale(x) + shift(x)` against an elementwise recomputation
/// from independent convolutions.
pub fn calibrator_formula_oracle() -> String {
    let r = &mut rng(80);
    let cal = Calibrator::<f64>::new(4, 5, 3, r);
    let x = randn([2, 4, 6, 7], 81);
    let got = cal.forward(&x).unwrap().to_vec();
    let cwl = |m: &Cwl<f64>| -> Vec<f64> {
        let outs: Vec<Vec<f64>> = m.branches.iter().map(|b| conv_oracle(b, &x).to_vec()).collect();
        let avg: Vec<f64> = (0..outs[0].len()).map(|i| outs.iter().map(|o| o[i]).sum::<f64>() / 3.0).collect();
        let avg = Tensor::from_vec(avg, [2, 3, 6, 7]).unwrap();
        conv_oracle(&m.proj, &avg).to_vec()
    };
    let main = conv_oracle(&cal.main, &x).to_vec();
    let (scale, shift) = (cwl(&cal.scale), cwl(&cal.shift));
    let expect: Vec<f64> = (0..main.len()).map(|i| main[i] * scale[i] + shift[i]).collect();
    let err = max_abs_diff(&got, &expect);
    assert!(err < 1e-8, "calibrator deviates from its formula by {err:e}");
    format!("max deviation {err:.1e}")
}

pub fn context_mask_sums_to_one() -> String {
    let r = &mut rng(90);
    let cb = ContextBlock::<f64>::new(5, r);
    let x = randn([3, 5, 6, 7], 91).scale(4.0);
    let (_, mask) = cb.forward_with_mask(&x).unwrap();
    let v = mask.values();
    let worst = v.chunks(42).map(|m| (m.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-12, "mask sums to 1 ± {worst:e}");
    format!("3 samples, max deviation {worst:.1e}")
}

/// Prior channels are identical and channel order does not matter.
pub fn prior_channel_equality_and_permutation() -> String {
    let img = uniform([2, 3, 5, 7], 0.0, 1.0, 95);
    let p = compute_prior(&img).unwrap();
    let v = p.values();
    let hw = 35;
    for b in 0..2 {
        let base = b * 3 * hw;
        for c in 1..3 {
            assert_eq!(&v[base..base + hw], &v[base + c * hw..base + (c + 1) * hw], "prior channels differ");
        }
    }
    let parts = img.chunk_channels(3).unwrap();
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    for perm in perms {
        let permuted = Tensor::cat_channels(&perm.map(|i| parts[i].clone())).unwrap();
        assert_eq!(compute_prior(&permuted).unwrap().to_vec(), p.to_vec(), "prior changes under {perm:?}");
    }
    "channels identical, invariant under all 6 permutations".into()
}

// ------------------------------------------------------------- metrics

pub struct MetricAgreement {
    pub psnr: f64,
    pub ssim: f64,
    pub uciqe: f64,
    pub uiqm: f64,
}

/// Library metrics against the brute-force oracles on `n` random 32×32
/// images (pairs for the full-reference measures).
pub fn metric_oracles(n: usize) -> MetricAgreement {
    let mut worst = MetricAgreement { psnr: 0.0, ssim: 0.0, uciqe: 0.0, uiqm: 0.0 };
    let opts = SsimOptions::default();
    for i in 0..n as u64 {
        let x = super::random_image(32, 32, 1000 + i);
        let mut r = rng(2000 + i);
        let amp = 0.05 + 0.3 * (i as f32 / n as f32);
        let y = image::Rgb32FImage::from_fn(32, 32, |px, py| {
            image::Rgb(x.get_pixel(px, py).0.map(|v| (v + amp * (r.gen::<f32>() - 0.5)).clamp(0.0, 1.0)))
        });
        worst.psnr = worst.psnr.max((metrics::psnr(&x, &y, 1.0) - oracles::psnr(&x, &y)).abs());
        worst.ssim = worst.ssim.max((metrics::ssim(&x, &y, &opts) - oracles::ssim(&x, &y)).abs());
        worst.uciqe = worst.uciqe.max((metrics::uciqe(&x) - oracles::uciqe(&x)).abs());
        worst.uiqm = worst.uiqm.max((metrics::uiqm(&x) - oracles::uiqm(&x)).abs());
    }
    assert!(worst.psnr < 1e-9, "PSNR deviates by {:e} dB", worst.psnr);
    assert!(worst.ssim < 1e-6, "SSIM deviates by {:e}", worst.ssim);
    assert!(worst.uciqe < 1e-6, "UCIQE deviates by {:e}", worst.uciqe);
    assert!(worst.uiqm < 1e-6, "UIQM deviates by {:e}", worst.uiqm);
    worst
}

// ------------------------------------------------------------- shapes

/// Attention maps of the bottleneck are `(N, h, Ĉ, Ĉ)` at every spatial size.
pub fn attention_map_shapes() -> String {
    let cfg = ModelConfig::default();
    let fc_opts = MaqOptions {
        use_act: true,
        use_kft: true,
        use_sat: true,
        heads: cfg.heads,
        ffn_expansion: cfg.ffn_expansion,
        quaternion_kernel: cfg.maq_quaternion_kernel,
        plain_expansion: cfg.plain_expansion,
    };
    let fc = FeatureContextualizer::<f32>::new(12, 48, cfg.maq_blocks, cfg.spp_channels, &fc_opts, &mut rng(5));
    for side in [8usize, 16, 32] {
        let x = Tensor::<f32>::randn([2, 12, side, side], &mut rng(side as u64));
        let p = Tensor::<f32>::randn([2, 48, side, side], &mut rng(side as u64 + 1));
        let mut trace = Vec::new();
        let out = no_grad(|| fc.forward_traced(&x, Some(&p), &mut trace)).unwrap();
        assert_eq!(out.dims(), [2, 48, side, side], "bottleneck output shape at {side}");
        assert_eq!(trace.len(), 3 * cfg.maq_blocks, "one map per transformer");
        for m in &trace {
            assert_eq!(m.dims(), [2, cfg.heads, 48, 48], "attention map shape at {side}");
        }
    }
    format!("{} maps of (N, {}, 48, 48) at 8, 16 and 32", 3 * cfg.maq_blocks, cfg.heads)
}

pub fn forward_shapes() -> String {
    let model = HybSens::<f32>::new(&ModelConfig::default(), 1).unwrap();
    for side in [64usize, 128, 256] {
        let x = Tensor::<f32>::uniform([1, 3, side, side], 0.0, 1.0, &mut rng(side as u64));
        let y = model.predict(&x).unwrap();
        assert_eq!(y.dims(), x.dims(), "output shape at {side}");
        assert!(y.all_finite(), "non-finite output at {side}");
    }
    "64², 128², 256² in = out".into()
}

// ------------------------------------------------------------- training

/// Configuration of the small deterministic runs: augmentation and dropout
/// on, so that every random stream is exercised.
pub fn repro_config(steps: usize) -> (ModelConfig, TrainConfig) {
    let model = ModelConfig { dropout: 0.1, ..ModelConfig::default() };
    let train = TrainConfig {
        steps: Some(steps),
        batch: 2,
        augment: AugmentConfig { resize: 40, crop: 32, ..AugmentConfig::default() },
        seed: 11,
        ..TrainConfig::default()
    };
    (model, train)
}

pub fn run_steps(trainer: &mut Trainer, data: &[Pair], steps: usize) -> Vec<StepLog> {
    (0..steps).map(|_| trainer.train_step(data).expect("training step")).collect()
}

/// Two fresh runs with one seed log identical losses.
pub fn seeded_runs_identical(steps: usize) -> String {
    let data = super::small_pairs(3, 48, 300);
    let (mc, tc) = repro_config(steps);
    let mut a = Trainer::new(&mc, tc.clone(), data.len()).unwrap();
    let mut b = Trainer::new(&mc, tc, data.len()).unwrap();
    let la = run_steps(&mut a, &data, steps);
    let lb = run_steps(&mut b, &data, steps);
    assert_eq!(la, lb, "loss logs differ between identically seeded runs");
    format!("{steps} steps, final loss {:.5}", la.last().map_or(0.0, |l| l.loss))
}

/// Saving after `split` steps, reloading and continuing matches an
/// uninterrupted run for the next `after` steps.
pub fn resume_matches_continuous(split: usize, after: usize) -> String {
    let data = super::small_pairs(3, 48, 310);
    let (mc, tc) = repro_config(split + after);
    let mut cont = Trainer::new(&mc, tc.clone(), data.len()).unwrap();
    let full = run_steps(&mut cont, &data, split + after);

    let mut first = Trainer::new(&mc, tc.clone(), data.len()).unwrap();
    run_steps(&mut first, &data, split);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    first.checkpoint().save(&path).unwrap();
    drop(first);
    let mut resumed = Trainer::resume(&Checkpoint::load(&path).unwrap(), tc, data.len()).unwrap();
    let rest = run_steps(&mut resumed, &data, after);

    let mut worst: f64 = 0.0;
    for (c, r) in full[split..].iter().zip(&rest) {
        assert_eq!(c.step, r.step, "step numbering differs after resume");
        assert_eq!(c.lr, r.lr, "learning rate differs after resume");
        worst = worst.max((c.loss - r.loss).abs());
    }
    assert!(worst < 1e-5, "resumed losses deviate by {worst:e}");
    format!("{after} steps after resume, max loss deviation {worst:.1e}")
}

pub struct OverfitReport {
    pub identity_psnr: f64,
    pub final_psnr: f64,
    pub first_loss: f64,
    pub final_loss: f64,
    pub last_lr: f64,
}

/// Trains the default model on four 64×64 pairs, batch 1 cycling through
/// them, with no augmentation.
pub fn overfit(steps: usize) -> OverfitReport {
    let data: Vec<Pair> = (0..4).map(super::scene).collect();
    let cfg = TrainConfig {
        steps: Some(steps),
        batch: 1,
        augment: AugmentConfig::none(64),
        seed: 7,
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&ModelConfig::default(), cfg, data.len()).unwrap();
    let logs = run_steps(&mut trainer, &data, steps);

    let loss = CompositeLoss::<f32>::new(LossConfig::default()).unwrap();
    let (mut psnr, mut ident, mut final_loss) = (0.0, 0.0, 0.0);
    for p in &data {
        let x = to_tensor(&[&p.input]).unwrap();
        let y = to_tensor(&[&p.target]).unwrap();
        let raw = no_grad(|| trainer.model.forward(&x)).unwrap();
        final_loss += loss.forward(&raw, &y).unwrap().1.total / data.len() as f64;
        let restored = tensor_image(&trainer.model.predict(&x).unwrap(), 0).unwrap();
        psnr += metrics::psnr(&restored, &p.target, 1.0) / data.len() as f64;
        ident += metrics::psnr(&p.input, &p.target, 1.0) / data.len() as f64;
    }
    OverfitReport {
        identity_psnr: ident,
        final_psnr: psnr,
        first_loss: logs[0].loss,
        final_loss,
        last_lr: logs.last().map_or(f64::NAN, |l| l.lr),
    }
}
