//! Full-reference (PSNR, SSIM) and no-reference (UCIQE, UIQM) image quality
//! measures on RGB images with values in `[0, 1]`.

use image::Rgb32FImage;

use crate::loss::{gaussian_taps, SsimMode, SsimOptions};

/// PSNR reported in tables when the images are identical.
pub const PSNR_REPORT_CAP: f64 = 100.0;

/// One channel as a row-major `f64` plane.
pub fn channel(img: &Rgb32FImage, c: usize) -> Vec<f64> {
    img.pixels().map(|p| p.0[c] as f64).collect()
}

fn check_same(x: &Rgb32FImage, y: &Rgb32FImage, what: &str) {
    assert_eq!(x.dimensions(), y.dimensions(), "{what}: image sizes differ");
}

/// `10·log10(max² / MSE)`, `+∞` when the images are identical.
pub fn psnr(x: &Rgb32FImage, y: &Rgb32FImage, max_val: f64) -> f64 {
    check_same(x, y, "psnr");
    psnr_slices(x.as_raw(), y.as_raw(), max_val)
}

pub fn psnr_slices(x: &[f32], y: &[f32], max_val: f64) -> f64 {
    assert_eq!(x.len(), y.len(), "psnr: lengths differ");
    let mse = x.iter().zip(y).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>() / x.len().max(1) as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_val * max_val / mse).log10()
    }
}

/// PSNR as printed in reports: infinite values become [`PSNR_REPORT_CAP`].
pub fn psnr_for_report(v: f64) -> f64 {
    v.min(PSNR_REPORT_CAP)
}

/// Gaussian-filters a plane keeping only fully-contained windows.
fn filter_valid(p: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (ho, wo) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = taps.iter().enumerate().map(|(t, g)| g * p[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = taps.iter().enumerate().map(|(t, g)| g * rows[(y + t) * wo + x]).sum();
        }
    }
    (out, ho, wo)
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, opts: &SsimOptions) -> f64 {
    let (c1, c2) = (opts.c1, opts.c2);
    let ratio = |mx: f64, my: f64, sxx: f64, syy: f64, sxy: f64| {
        ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    };
    match opts.mode {
        SsimMode::Global => {
            let n = a.len() as f64;
            let (mx, my) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
            let sxx = a.iter().map(|v| v * v).sum::<f64>() / n - mx * mx;
            let syy = b.iter().map(|v| v * v).sum::<f64>() / n - my * my;
            let sxy = a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>() / n - mx * my;
            ratio(mx, my, sxx, syy, sxy)
        }
        SsimMode::Windowed => {
            let taps = gaussian_taps(opts.window_for(h, w), opts.sigma);
            let prod = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(p, q)| p * q).collect() };
            let (mx, ..) = filter_valid(a, h, w, &taps);
            let (my, ..) = filter_valid(b, h, w, &taps);
            let (exx, ..) = filter_valid(&prod(a, a), h, w, &taps);
            let (eyy, ..) = filter_valid(&prod(b, b), h, w, &taps);
            let (exy, ..) = filter_valid(&prod(a, b), h, w, &taps);
            let n = mx.len() as f64;
            (0..mx.len())
                .map(|i| {
                    let (u, v) = (mx[i], my[i]);
                    ratio(u, v, exx[i] - u * u, eyy[i] - v * v, exy[i] - u * v)
                })
                .sum::<f64>()
                / n
        }
    }
}

/// Mean SSIM over windows and the three channels.
pub fn ssim(x: &Rgb32FImage, y: &Rgb32FImage, opts: &SsimOptions) -> f64 {
    check_same(x, y, "ssim");
    let (w, h) = (x.width() as usize, x.height() as usize);
    (0..3).map(|c| ssim_plane(&channel(x, c), &channel(y, c), h, w, opts)).sum::<f64>() / 3.0
}

// ---------------------------------------------------------------- UCIQE

pub const UCIQE_COEFFS: [f64; 3] = [0.4680, 0.2745, 0.2576];

/// sRGB (D65) to XYZ.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const D: f64 = 6.0 / 29.0;
    if t > D * D * D {
        t.cbrt()
    } else {
        t / (3.0 * D * D) + 4.0 / 29.0
    }
}

/// CIELab of an sRGB triple in `[0, 1]`. The white point is the image of
/// RGB white, so neutral greys map to `a = b = 0`.
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let xyz: [f64; 3] = std::array::from_fn(|r| (0..3).map(|c| RGB_TO_XYZ[r][c] * lin[c]).sum());
    let white: [f64; 3] = std::array::from_fn(|r| RGB_TO_XYZ[r].iter().sum());
    let [fx, fy, fz] = std::array::from_fn(|r| lab_f(xyz[r] / white[r]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UciqeTerms {
    pub chroma_std: f64,
    pub luminance_contrast: f64,
    pub saturation_mean: f64,
}

impl UciqeTerms {
    pub fn value(&self) -> f64 {
        let [c1, c2, c3] = UCIQE_COEFFS;
        c1 * self.chroma_std + c2 * self.luminance_contrast + c3 * self.saturation_mean
    }
}

/// Number of pixels in each 1% tail used for the luminance contrast.
pub fn tail_count(n: usize) -> usize {
    ((0.01 * n as f64).round() as usize).clamp(1, n.max(1))
}

pub fn uciqe_terms(img: &Rgb32FImage) -> UciqeTerms {
    let lab: Vec<[f64; 3]> = img.pixels().map(|p| srgb_to_lab(p.0.map(|v| v as f64))).collect();
    let n = lab.len().max(1) as f64;
    let l: Vec<f64> = lab.iter().map(|v| v[0] / 100.0).collect();
    let chroma: Vec<f64> = lab.iter().map(|v| v[1].hypot(v[2]) / 100.0).collect();
    let mean_c = chroma.iter().sum::<f64>() / n;
    let chroma_std = (chroma.iter().map(|c| (c - mean_c).powi(2)).sum::<f64>() / n).sqrt();

    let mut sorted = l.clone();
    sorted.sort_by(f64::total_cmp);
    let k = tail_count(sorted.len());
    let luminance_contrast = if sorted.is_empty() {
        0.0
    } else {
        sorted[sorted.len() - k..].iter().sum::<f64>() / k as f64 - sorted[..k].iter().sum::<f64>() / k as f64
    };

    let saturation_mean = chroma
        .iter()
        .zip(&l)
        .map(|(&c, &lv)| {
            let d = c.hypot(lv);
            if d > 0.0 {
                c / d
            } else {
                0.0
            }
        })
        .sum::<f64>()
        / n;
    UciqeTerms { chroma_std, luminance_contrast, saturation_mean }
}

pub fn uciqe(img: &Rgb32FImage) -> f64 {
    uciqe_terms(img).value()
}

// ---------------------------------------------------------------- UIQM

pub const UIQM_COEFFS: [f64; 3] = [0.0282, 0.2953, 3.5753];
/// Block side of the EME and logAMEE measures.
pub const UIQM_BLOCK: usize = 10;
const UISM_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];
const TRIM_ALPHA: f64 = 0.1;

/// Mean after discarding `ceil(α·K)` smallest and `floor(α·K)` largest values.
pub fn trimmed_mean(values: &[f64], alpha: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    let lo = (alpha * k as f64).ceil() as usize;
    let hi = (alpha * k as f64).floor() as usize;
    let kept = if lo + hi < k { &v[lo..k - hi] } else { &v[..] };
    if kept.is_empty() {
        return 0.0;
    }
    kept.iter().sum::<f64>() / kept.len() as f64
}

/// Colourfulness from trimmed statistics of the opponent channels.
pub fn uicm(img: &Rgb32FImage) -> f64 {
    let px: Vec<[f64; 3]> = img.pixels().map(|p| p.0.map(|v| v as f64 * 255.0)).collect();
    let rg: Vec<f64> = px.iter().map(|p| p[0] - p[1]).collect();
    let yb: Vec<f64> = px.iter().map(|p| (p[0] + p[1]) / 2.0 - p[2]).collect();
    let stats = |v: &[f64]| {
        let mu = trimmed_mean(v, TRIM_ALPHA);
        let var = v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / v.len().max(1) as f64;
        (mu, var)
    };
    let (mu_rg, var_rg) = stats(&rg);
    let (mu_yb, var_yb) = stats(&yb);
    -0.0268 * mu_rg.hypot(mu_yb) + 0.1586 * (var_rg + var_yb).sqrt()
}

/// Mirror index for the half-sample symmetric boundary (`d c b a | a b c d`).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Sobel gradient magnitude with reflected borders, rescaled so the maximum
/// is 255 (all zeros stay zero).
pub fn sobel_magnitude(p: &[f64], h: usize, w: usize) -> Vec<f64> {
    let at = |y: isize, x: isize| p[reflect(y, h) * w + reflect(x, w)];
    let mut mag = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            mag[y as usize * w + x as usize] = gx.hypot(gy);
        }
    }
    let max = mag.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        mag.iter_mut().for_each(|v| *v *= 255.0 / max);
    }
    mag
}

/// Whole `block×block` tiles of an `h×w` grid as `(y0, x0)`; ragged edges
/// are dropped.
fn blocks(h: usize, w: usize, block: usize) -> impl Iterator<Item = (usize, usize)> {
    let (k2, k1) = (h / block, w / block);
    (0..k1).flat_map(move |bx| (0..k2).map(move |by| (by * block, bx * block)))
}

fn block_range(planes: &[&[f64]], w: usize, y0: usize, x0: usize, block: usize) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in planes {
        for y in y0..y0 + block {
            for &v in &p[y * w + x0..y * w + x0 + block] {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    (lo, hi)
}

/// Measure of enhancement: `2/(k1·k2) · Σ ln(max/min)` over blocks with a
/// non-zero minimum.
pub fn eme(p: &[f64], h: usize, w: usize, block: usize) -> f64 {
    let nb = (h / block) * (w / block);
    if nb == 0 {
        return 0.0;
    }
    let sum: f64 = blocks(h, w, block)
        .map(|(y0, x0)| {
            let (lo, hi) = block_range(&[p], w, y0, x0, block);
            if lo == 0.0 || hi == 0.0 {
                0.0
            } else {
                (hi / lo).ln()
            }
        })
        .sum();
    2.0 / nb as f64 * sum
}

/// Sharpness: weighted EME of each channel's edge map.
pub fn uism(img: &Rgb32FImage) -> f64 {
    let (w, h) = (img.width() as usize, img.height() as usize);
    (0..3)
        .map(|c| {
            let p: Vec<f64> = channel(img, c).into_iter().map(|v| v * 255.0).collect();
            let edges: Vec<f64> = sobel_magnitude(&p, h, w).iter().zip(&p).map(|(e, v)| e * v).collect();
            UISM_WEIGHTS[c] * eme(&edges, h, w, UIQM_BLOCK)
        })
        .sum()
}

/// Contrast: logAMEE over blocks spanning all three channels.
pub fn uiconm(img: &Rgb32FImage) -> f64 {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let planes: Vec<Vec<f64>> = (0..3).map(|c| channel(img, c).into_iter().map(|v| v * 255.0).collect()).collect();
    let refs: Vec<&[f64]> = planes.iter().map(|p| p.as_slice()).collect();
    let nb = (h / UIQM_BLOCK) * (w / UIQM_BLOCK);
    if nb == 0 {
        return 0.0;
    }
    let sum: f64 = blocks(h, w, UIQM_BLOCK)
        .map(|(y0, x0)| {
            let (lo, hi) = block_range(&refs, w, y0, x0, UIQM_BLOCK);
            let (top, bot) = (hi - lo, hi + lo);
            if top == 0.0 || bot == 0.0 {
                0.0
            } else {
                (top / bot) * (top / bot).ln()
            }
        })
        .sum();
    -sum / nb as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UiqmTerms {
    pub uicm: f64,
    pub uism: f64,
    pub uiconm: f64,
}

impl UiqmTerms {
    pub fn value(&self) -> f64 {
        let [c1, c2, c3] = UIQM_COEFFS;
        c1 * self.uicm + c2 * self.uism + c3 * self.uiconm
    }
}

pub fn uiqm_terms(img: &Rgb32FImage) -> UiqmTerms {
    UiqmTerms { uicm: uicm(img), uism: uism(img), uiconm: uiconm(img) }
}

pub fn uiqm(img: &Rgb32FImage) -> f64 {
    uiqm_terms(img).value()
}
