//! Straightforward reference implementations, written without reusing the
//! library code they are compared against.

use hybsens::tensor::Conv2dSpec;
use image::Rgb32FImage;

/// Direct nested-loop convolution over NCHW data.
pub fn conv(
    x: &[f64],
    [n, cin, h, w]: [usize; 4],
    wt: &[f64],
    [cout, cig, kh, kw]: [usize; 4],
    bias: Option<&[f64]>,
    spec: Conv2dSpec,
) -> (Vec<f64>, [usize; 4]) {
    let ho = (h + 2 * spec.padding - kh) / spec.stride + 1;
    let wo = (w + 2 * spec.padding - kw) / spec.stride + 1;
    let cog = cout / spec.groups;
    let mut out = vec![0.0; n * cout * ho * wo];
    for b in 0..n {
        for co in 0..cout {
            let grp = co / cog;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = bias.map_or(0.0, |bb| bb[co]);
                    for ci in 0..cig {
                        let c = grp * cig + ci;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                                let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                s += wt[((co * cig + ci) * kh + ky) * kw + kx]
                                    * x[((b * cin + c) * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[((b * cout + co) * ho + oy) * wo + ox] = s;
                }
            }
        }
    }
    (out, [n, cout, ho, wo])
}

// ------------------------------------------------------------------ PSNR

/// Mean squared error in a first pass, the decibel value in a second.
pub fn psnr(x: &Rgb32FImage, y: &Rgb32FImage) -> f64 {
    let mut diffs = Vec::new();
    for (px, py) in x.pixels().zip(y.pixels()) {
        for c in 0..3 {
            diffs.push(px.0[c] as f64 - py.0[c] as f64);
        }
    }
    let mut mse = 0.0;
    for d in &diffs {
        mse += d * d;
    }
    mse /= diffs.len() as f64;
    if mse == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (1.0 / mse).log10()
}

// ------------------------------------------------------------------ SSIM

/// Gaussian-windowed SSIM with a full 2-D window evaluated at every valid
/// position, averaged over positions and channels. The window shrinks to
/// the largest odd size that fits.
pub fn ssim(x: &Rgb32FImage, y: &Rgb32FImage) -> f64 {
    let (c1, c2, sigma) = (1e-4, 9e-4, 1.5);
    let (w, h) = (x.width() as usize, x.height() as usize);
    let mut k = 11.min(w).min(h);
    if k % 2 == 0 {
        k -= 1;
    }
    let centre = (k / 2) as f64;
    let mut win = vec![0.0; k * k];
    for dy in 0..k {
        for dx in 0..k {
            let r2 = (dy as f64 - centre).powi(2) + (dx as f64 - centre).powi(2);
            win[dy * k + dx] = (-r2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);

    let mut acc = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        let a = |px: u32, py: u32| x.get_pixel(px, py).0[c] as f64;
        let b = |px: u32, py: u32| y.get_pixel(px, py).0[c] as f64;
        for oy in 0..=h - k {
            for ox in 0..=w - k {
                let (mut mx, mut my, mut exx, mut eyy, mut exy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..k {
                    for dx in 0..k {
                        let g = win[dy * k + dx];
                        let (u, v) = (a((ox + dx) as u32, (oy + dy) as u32), b((ox + dx) as u32, (oy + dy) as u32));
                        mx += g * u;
                        my += g * v;
                        exx += g * u * u;
                        eyy += g * v * v;
                        exy += g * u * v;
                    }
                }
                let (vx, vy, cxy) = (exx - mx * mx, eyy - my * my, exy - mx * my);
                acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    acc / count as f64
}

// ----------------------------------------------------------------- UCIQE

const M: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

/// CIELab with the reference white taken as the XYZ of RGB (1, 1, 1).
pub fn lab(rgb: [f64; 3]) -> [f64; 3] {
    const EPS: f64 = 216.0 / 24389.0;
    const KAPPA: f64 = 24389.0 / 27.0;
    let lin: Vec<f64> =
        rgb.iter().map(|&c| if c > 0.04045 { ((c + 0.055) / 1.055).powf(2.4) } else { c / 12.92 }).collect();
    let mut f = [0.0; 3];
    for r in 0..3 {
        let xyz = M[r][0] * lin[0] + M[r][1] * lin[1] + M[r][2] * lin[2];
        let white = M[r][0] + M[r][1] + M[r][2];
        let t = xyz / white;
        f[r] = if t > EPS { t.powf(1.0 / 3.0) } else { (KAPPA * t + 16.0) / 116.0 };
    }
    [116.0 * f[1] - 16.0, 500.0 * (f[0] - f[1]), 200.0 * (f[1] - f[2])]
}

/// `(σ_chroma, luminance contrast, mean saturation)` with chroma and
/// lightness on a unit scale; the contrast is the gap between the means of
/// the brightest and darkest 1% (at least one pixel).
pub fn uciqe_terms(img: &Rgb32FImage) -> [f64; 3] {
    let mut chroma = Vec::new();
    let mut light = Vec::new();
    let mut sat = Vec::new();
    for p in img.pixels() {
        let [l, a, b] = lab([p.0[0] as f64, p.0[1] as f64, p.0[2] as f64]);
        let c = (a * a + b * b).sqrt() / 100.0;
        let l = l / 100.0;
        chroma.push(c);
        light.push(l);
        let denom = (c * c + l * l).sqrt();
        sat.push(if denom == 0.0 { 0.0 } else { c / denom });
    }
    let n = chroma.len() as f64;
    let mean = chroma.iter().sum::<f64>() / n;
    let var = chroma.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;

    let mut desc = light.clone();
    desc.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let k = ((n / 100.0).round() as usize).max(1);
    let top: f64 = desc.iter().take(k).sum::<f64>() / k as f64;
    let bottom: f64 = desc.iter().rev().take(k).sum::<f64>() / k as f64;

    [var.sqrt(), top - bottom, sat.iter().sum::<f64>() / n]
}

pub fn uciqe(img: &Rgb32FImage) -> f64 {
    let [s, c, m] = uciqe_terms(img);
    0.4680 * s + 0.2745 * c + 0.2576 * m
}

// ------------------------------------------------------------------ UIQM

fn plane255(img: &Rgb32FImage, c: usize) -> Vec<Vec<f64>> {
    (0..img.height())
        .map(|y| (0..img.width()).map(|x| img.get_pixel(x, y).0[c] as f64 * 255.0).collect())
        .collect()
}

/// Asymmetric alpha-trimmed mean: drop `ceil(αK)` from the bottom and
/// `floor(αK)` from the top.
fn trimmed(values: &[f64], alpha: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = v.len();
    let t_l = (alpha * k as f64).ceil() as usize;
    let t_r = (alpha * k as f64).floor() as usize;
    let mut s = 0.0;
    for x in &v[t_l..k - t_r] {
        s += x;
    }
    s / (k - t_l - t_r) as f64
}

pub fn uicm(img: &Rgb32FImage) -> f64 {
    let (r, g, b) = (plane255(img, 0), plane255(img, 1), plane255(img, 2));
    let mut rg = Vec::new();
    let mut yb = Vec::new();
    for y in 0..r.len() {
        for x in 0..r[0].len() {
            rg.push(r[y][x] - g[y][x]);
            yb.push(0.5 * (r[y][x] + g[y][x]) - b[y][x]);
        }
    }
    let (m_rg, m_yb) = (trimmed(&rg, 0.1), trimmed(&yb, 0.1));
    let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    -0.0268 * (m_rg * m_rg + m_yb * m_yb).sqrt() + 0.1586 * (var(&rg, m_rg) + var(&yb, m_yb)).sqrt()
}

/// Sobel magnitude on a one-pixel symmetric-padded copy, scaled to a
/// maximum of 255.
fn sobel(p: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (h, w) = (p.len(), p[0].len());
    let idx = |i: isize, n: usize| -> usize {
        if i < 0 {
            (-i - 1) as usize
        } else if i >= n as isize {
            2 * n - 1 - i as usize
        } else {
            i as usize
        }
    };
    let padded: Vec<Vec<f64>> =
        (-1..=h as isize).map(|y| (-1..=w as isize).map(|x| p[idx(y, h)][idx(x, w)]).collect()).collect();
    let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let ky = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let mut out = vec![vec![0.0; w]; h];
    let mut max = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let (mut gx, mut gy) = (0.0, 0.0);
            for i in 0..3 {
                for j in 0..3 {
                    gx += kx[i][j] * padded[y + i][x + j];
                    gy += ky[i][j] * padded[y + i][x + j];
                }
            }
            out[y][x] = (gx * gx + gy * gy).sqrt();
            max = max.max(out[y][x]);
        }
    }
    if max > 0.0 {
        for row in &mut out {
            for v in row.iter_mut() {
                *v = *v / max * 255.0;
            }
        }
    }
    out
}

const BLOCK: usize = 10;

pub fn uism(img: &Rgb32FImage) -> f64 {
    let weights = [0.299, 0.587, 0.114];
    let mut total = 0.0;
    for c in 0..3 {
        let p = plane255(img, c);
        let e = sobel(&p);
        let (h, w) = (p.len(), p[0].len());
        let (k2, k1) = (h / BLOCK, w / BLOCK);
        let mut s = 0.0;
        for by in 0..k2 {
            for bx in 0..k1 {
                let mut lo = f64::MAX;
                let mut hi = f64::MIN;
                for y in by * BLOCK..(by + 1) * BLOCK {
                    for x in bx * BLOCK..(bx + 1) * BLOCK {
                        let v = e[y][x] * p[y][x];
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                if lo > 0.0 && hi > 0.0 {
                    s += (hi / lo).ln();
                }
            }
        }
        if k1 * k2 > 0 {
            total += weights[c] * 2.0 / (k1 * k2) as f64 * s;
        }
    }
    total
}

pub fn uiconm(img: &Rgb32FImage) -> f64 {
    let planes: Vec<Vec<Vec<f64>>> = (0..3).map(|c| plane255(img, c)).collect();
    let (h, w) = (planes[0].len(), planes[0][0].len());
    let (k2, k1) = (h / BLOCK, w / BLOCK);
    if k1 * k2 == 0 {
        return 0.0;
    }
    let mut s = 0.0;
    for by in 0..k2 {
        for bx in 0..k1 {
            let mut lo = f64::MAX;
            let mut hi = f64::MIN;
            for p in &planes {
                for row in &p[by * BLOCK..(by + 1) * BLOCK] {
                    for &v in &row[bx * BLOCK..(bx + 1) * BLOCK] {
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
            }
            let (top, bot) = (hi - lo, hi + lo);
            if top != 0.0 && bot != 0.0 {
                s += (top / bot) * (top / bot).ln();
            }
        }
    }
    -s / (k1 * k2) as f64
}

pub fn uiqm(img: &Rgb32FImage) -> f64 {
    0.0282 * uicm(img) + 0.2953 * uism(img) + 3.5753 * uiconm(img)
}
