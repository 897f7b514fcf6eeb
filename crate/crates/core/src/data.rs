//! Image decoding and encoding, tensor conversion, padding and paired
//! augmentation.

use std::path::Path;

use hybsens_tensor::Tensor;
use image::imageops::{self, FilterType};
use image::{Rgb, Rgb32FImage, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Decodes an 8-bit PNG or JPEG into RGB values in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Rgb32FImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    let rgb = img.to_rgb8();
    Ok(Rgb32FImage::from_fn(rgb.width(), rgb.height(), |x, y| {
        Rgb(rgb.get_pixel(x, y).0.map(|v| v as f32 / 255.0))
    }))
}

/// Round-half-up 8-bit quantisation of a value in `[0, 1]`.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8
}

pub fn to_rgb8(img: &Rgb32FImage) -> RgbImage {
    RgbImage::from_fn(img.width(), img.height(), |x, y| Rgb(img.get_pixel(x, y).0.map(quantize)))
}

/// Writes an 8-bit PNG.
pub fn save_png(img: &Rgb32FImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    to_rgb8(img)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Stacks equally-sized images into an `(N, 3, H, W)` tensor.
pub fn to_tensor(images: &[&Rgb32FImage]) -> Result<Tensor<f32>> {
    let Some(first) = images.first() else {
        return Err(Error::config("cannot build a tensor from zero images"));
    };
    let (w, h) = first.dimensions();
    let plane = (w * h) as usize;
    let mut data = vec![0.0f32; images.len() * 3 * plane];
    for (n, img) in images.iter().enumerate() {
        if img.dimensions() != (w, h) {
            return Err(Error::config(format!(
                "batch mixes {}x{} and {}x{} images",
                w,
                h,
                img.width(),
                img.height()
            )));
        }
        for (i, px) in img.pixels().enumerate() {
            for c in 0..3 {
                data[(n * 3 + c) * plane + i] = px.0[c];
            }
        }
    }
    Ok(Tensor::from_vec(data, [images.len(), 3, h as usize, w as usize])?)
}

/// Image `n` of an `(N, 3, H, W)` tensor.
pub fn tensor_image(t: &Tensor<f32>, n: usize) -> Result<Rgb32FImage> {
    let [batch, c, h, w] = t.dims();
    if c != 3 || n >= batch {
        return Err(Error::config(format!("no RGB image {n} in a tensor of shape {}", t.shape())));
    }
    let v = t.values();
    let plane = h * w;
    let base = n * 3 * plane;
    Ok(Rgb32FImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([v[base + i], v[base + plane + i], v[base + 2 * plane + i]])
    }))
}

/// Reflect-pads (without repeating the edge) on the bottom and right so both
/// sides become multiples of `multiple`.
pub fn pad_to_multiple(img: &Rgb32FImage, multiple: u32) -> Rgb32FImage {
    let m = multiple.max(1);
    let (w, h) = img.dimensions();
    let (pw, ph) = (w.div_ceil(m) * m, h.div_ceil(m) * m);
    if (pw, ph) == (w, h) {
        return img.clone();
    }
    let mirror = |i: u32, n: u32| -> u32 {
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let r = i % period;
        if r < n {
            r
        } else {
            period - r
        }
    };
    Rgb32FImage::from_fn(pw, ph, |x, y| *img.get_pixel(mirror(x, w), mirror(y, h)))
}

pub fn crop(img: &Rgb32FImage, x: u32, y: u32, w: u32, h: u32) -> Rgb32FImage {
    imageops::crop_imm(img, x, y, w, h).to_image()
}

pub fn resize(img: &Rgb32FImage, w: u32, h: u32) -> Rgb32FImage {
    if img.dimensions() == (w, h) {
        return img.clone();
    }
    imageops::resize(img, w, h, FilterType::Triangle)
}

/// An input image and its reference, pixel-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub input: Rgb32FImage,
    pub target: Rgb32FImage,
}

/// Random geometric augmentation applied identically to both images of a
/// pair: resize, random rescale, crop, flips, quarter turns, transposition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Square side both images are first resized to; 0 keeps the size.
    pub resize: u32,
    /// Square crop side of the result.
    pub crop: u32,
    pub scale_min: f64,
    pub scale_max: f64,
    pub p_scale: f64,
    pub p_hflip: f64,
    pub p_vflip: f64,
    pub p_rot90: f64,
    pub p_transpose: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            resize: 256,
            crop: 256,
            scale_min: 0.8,
            scale_max: 1.2,
            p_scale: 0.5,
            p_hflip: 0.5,
            p_vflip: 0.5,
            p_rot90: 0.5,
            p_transpose: 0.5,
        }
    }
}

impl AugmentConfig {
    /// Resize and crop only.
    pub fn none(side: u32) -> Self {
        AugmentConfig {
            resize: side,
            crop: side,
            p_scale: 0.0,
            p_hflip: 0.0,
            p_vflip: 0.0,
            p_rot90: 0.0,
            p_transpose: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_scale, self.p_hflip, self.p_vflip, self.p_rot90, self.p_transpose];
        if self.crop == 0
            || probs.iter().any(|p| !(0.0..=1.0).contains(p))
            || !(self.scale_min > 0.0 && self.scale_min <= self.scale_max)
        {
            return Err(Error::config("augmentation needs crop > 0, probabilities in [0, 1] and 0 < scale_min <= scale_max"));
        }
        Ok(())
    }
}

/// The geometric operations drawn for one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentPlan {
    /// Size before cropping.
    pub scaled: (u32, u32),
    pub crop_origin: (u32, u32),
    pub hflip: bool,
    pub vflip: bool,
    /// Clockwise quarter turns.
    pub quarter_turns: u8,
    pub transpose: bool,
}

impl AugmentPlan {
    pub fn draw<R: Rng + ?Sized>(cfg: &AugmentConfig, size: (u32, u32), rng: &mut R) -> Self {
        let (mut w, mut h) = if cfg.resize > 0 { (cfg.resize, cfg.resize) } else { size };
        if cfg.p_scale > 0.0 && rng.gen_bool(cfg.p_scale) {
            let f = rng.gen_range(cfg.scale_min..=cfg.scale_max);
            w = ((w as f64 * f).round() as u32).max(1);
            h = ((h as f64 * f).round() as u32).max(1);
        }
        // Too small for the crop: upscale, keeping the aspect ratio.
        let short = w.min(h);
        if short < cfg.crop {
            let f = cfg.crop as f64 / short as f64;
            w = ((w as f64 * f).ceil() as u32).max(cfg.crop);
            h = ((h as f64 * f).ceil() as u32).max(cfg.crop);
        }
        let ox = rng.gen_range(0..=w - cfg.crop);
        let oy = rng.gen_range(0..=h - cfg.crop);
        let mut coin = |p: f64| p > 0.0 && rng.gen_bool(p);
        let hflip = coin(cfg.p_hflip);
        let vflip = coin(cfg.p_vflip);
        let quarter_turns = if coin(cfg.p_rot90) { rng.gen_range(1..=3) } else { 0 };
        let transpose = cfg.p_transpose > 0.0 && rng.gen_bool(cfg.p_transpose);
        AugmentPlan { scaled: (w, h), crop_origin: (ox, oy), hflip, vflip, quarter_turns, transpose }
    }

    pub fn apply(&self, img: &Rgb32FImage, crop_side: u32) -> Rgb32FImage {
        let mut out = resize(img, self.scaled.0, self.scaled.1);
        out = crop(&out, self.crop_origin.0, self.crop_origin.1, crop_side, crop_side);
        if self.hflip {
            imageops::flip_horizontal_in_place(&mut out);
        }
        if self.vflip {
            imageops::flip_vertical_in_place(&mut out);
        }
        out = match self.quarter_turns {
            1 => imageops::rotate90(&out),
            2 => imageops::rotate180(&out),
            3 => imageops::rotate270(&out),
            _ => out,
        };
        if self.transpose {
            out = transpose(&out);
        }
        out
    }
}

/// Swaps the two spatial axes.
pub fn transpose(img: &Rgb32FImage) -> Rgb32FImage {
    Rgb32FImage::from_fn(img.height(), img.width(), |x, y| *img.get_pixel(y, x))
}

/// Augments a pair with a transform drawn from `seed`.
pub fn augment(pair: &Pair, cfg: &AugmentConfig, seed: u64) -> Result<Pair> {
    cfg.validate()?;
    if cfg.resize == 0 && pair.input.dimensions() != pair.target.dimensions() {
        return Err(Error::config(format!(
            "input {:?} and target {:?} differ in size and no resize is configured",
            pair.input.dimensions(),
            pair.target.dimensions()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan = AugmentPlan::draw(cfg, pair.input.dimensions(), &mut rng);
    Ok(Pair { input: plan.apply(&pair.input, cfg.crop), target: plan.apply(&pair.target, cfg.crop) })
}
