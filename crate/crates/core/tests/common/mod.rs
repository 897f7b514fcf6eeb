//! Helpers shared by the integration test targets. Each target uses a
//! different subset.
#![allow(dead_code)]

pub mod checks;
pub mod oracles;

use hybsens::data::Pair;
use hybsens::nn::{Conv2d, Module};
use hybsens::tensor::gradcheck::{check, GradCheckOptions, GradCheckReport};
use hybsens::tensor::{Element, Shape, Tensor};
use image::{Rgb, Rgb32FImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relative tolerance of every finite-difference check.
pub const GRAD_TOL: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: impl Into<Shape>, seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, &mut rng(seed))
}

pub fn uniform(shape: impl Into<Shape>, lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, lo, hi, &mut rng(seed))
}

/// `Σ y ⊙ w` for a fixed random `w`: a scalar whose gradient differs for
/// every element of `y`.
pub fn project(y: &Tensor<f64>, seed: u64) -> hybsens::Result<Tensor<f64>> {
    let w = Tensor::randn(y.shape(), &mut rng(seed ^ 0x5eed));
    Ok(y.mul(&w)?.sum())
}

pub fn grad_opts(max_per_tensor: usize) -> GradCheckOptions {
    GradCheckOptions { max_per_tensor: Some(max_per_tensor), ..Default::default() }
}

/// Runs a gradient check and panics with the worst entry on failure.
pub fn assert_grads(
    name: &str,
    wrt: &[Tensor<f64>],
    opts: &GradCheckOptions,
    f: impl Fn() -> hybsens::Result<Tensor<f64>>,
) -> GradCheckReport {
    let rep = check(wrt, || f().map_err(|e| hybsens::tensor::TensorError::invalid("loss", e.to_string())), opts)
        .unwrap_or_else(|e| panic!("{name}: {e}"));
    assert!(rep.passes(GRAD_TOL), "{name}: max rel err {:.3e} ({:?})", rep.max_rel_err, rep.worst);
    rep
}

/// Parameters of a module, tensors only.
pub fn tensors<T: Element>(m: &impl Module<T>) -> Vec<Tensor<T>> {
    m.params().into_iter().map(|(_, t)| t).collect()
}

pub fn zero_all<T: Element>(m: &impl Module<T>) {
    for (_, t) in m.params() {
        t.fill(T::zero());
    }
}

/// Sets every parameter whose name does not end in `temperature` to zero.
pub fn zero_all_but_temperature<T: Element>(m: &impl Module<T>) {
    for (name, t) in m.params() {
        if !name.ends_with("temperature") {
            t.fill(T::zero());
        }
    }
}

/// Makes a same-width convolution the identity: centre tap 1 on the
/// diagonal, zero bias.
pub fn set_identity<T: Element>(conv: &Conv2d<T>) {
    let [co, cig, kh, kw] = conv.weight.dims();
    let groups = conv.spec.groups;
    let mut w = vec![T::zero(); co * cig * kh * kw];
    for o in 0..co {
        let i = if groups == 1 { o } else { 0 };
        w[((o * cig + i) * kh + kh / 2) * kw + kw / 2] = T::one();
    }
    conv.weight.set_values(&w).unwrap();
    if let Some(b) = &conv.bias {
        b.fill(T::zero());
    }
}

/// Largest absolute elementwise difference.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn random_image(w: u32, h: u32, seed: u64) -> Rgb32FImage {
    let mut r = rng(seed);
    Rgb32FImage::from_fn(w, h, |_, _| Rgb([r.gen::<f32>(), r.gen::<f32>(), r.gen::<f32>()]))
}

/// Synthetic 64×64 training pair: a smooth textured reference and an input
/// with a depth-dependent colour cast and haze.
pub fn scene(seed: u32) -> Pair {
    let s = seed as f32;
    let target = Rgb32FImage::from_fn(64, 64, |x, y| {
        let (u, v) = (x as f32 / 63.0, y as f32 / 63.0);
        let r = 0.5 + 0.4 * ((u * 6.0 + s).sin() * (v * 4.0 - s).cos());
        let g = 0.5 + 0.35 * ((u + v) * 5.0 + s * 0.7).sin();
        let b = 0.45 + 0.4 * (((u - 0.5).powi(2) + (v - 0.5).powi(2)).sqrt() * 9.0 - s).cos();
        let check = if ((x / 8) + (y / 8) + seed) % 2 == 0 { 0.08 } else { -0.08 };
        Rgb([(r + check).clamp(0.0, 1.0), (g + check).clamp(0.0, 1.0), (b + check).clamp(0.0, 1.0)])
    });
    let input = Rgb32FImage::from_fn(64, 64, |x, y| {
        let p = target.get_pixel(x, y).0;
        let t = 0.55 + 0.3 * (y as f32 / 63.0);
        Rgb([p[0] * 0.45 * t + 0.05, p[1] * 0.8 * t + 0.25 * (1.0 - t), p[2] * 0.9 * t + 0.3 * (1.0 - t)])
    });
    Pair { input, target }
}

/// Smaller pairs for quick training runs.
pub fn small_pairs(n: usize, side: u32, seed: u64) -> Vec<Pair> {
    (0..n)
        .map(|i| {
            let target = random_image(side, side, seed + i as u64);
            let input = Rgb32FImage::from_fn(side, side, |x, y| {
                let p = target.get_pixel(x, y).0;
                Rgb([p[0] * 0.5, p[1] * 0.9, p[2] * 0.8 + 0.1])
            });
            Pair { input, target }
        })
        .collect()
}
