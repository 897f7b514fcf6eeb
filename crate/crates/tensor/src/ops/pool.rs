use crate::{macs, Element, Result, Shape, Tensor, TensorError};

/// Bin `i` of `out` adaptive bins over `len` inputs: `[floor(i·len/out), ceil((i+1)·len/out))`.
fn adaptive_bin(i: usize, len: usize, out: usize) -> (usize, usize) {
    (i * len / out, ((i + 1) * len).div_ceil(out))
}

/// Source indices and interpolation weight for half-pixel-centred bilinear
/// resampling of one axis.
fn bilinear_axis(len_in: usize, len_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = len_in as f64 / len_out as f64;
    (0..len_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len_in - 1);
            let i1 = if i0 + 1 < len_in { i0 + 1 } else { i0 };
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

impl<T: Element> Tensor<T> {
    /// Average pooling into an `out_h × out_w` grid of adaptive bins.
    pub fn adaptive_avg_pool(&self, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
        let [n, c, h, w] = self.dims();
        if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
            return Err(TensorError::invalid(
                "adaptive_avg_pool",
                format!("cannot pool {} to {out_h}x{out_w}", self.shape()),
            ));
        }
        let bins: Vec<(usize, usize, usize, usize)> = (0..out_h)
            .flat_map(|i| {
                let (y0, y1) = adaptive_bin(i, h, out_h);
                (0..out_w).map(move |j| {
                    let (x0, x1) = adaptive_bin(j, w, out_w);
                    (y0, y1, x0, x1)
                })
            })
            .collect();
        let mut out = Vec::with_capacity(n * c * bins.len());
        {
            let xv = self.values();
            for plane in xv.chunks(h * w).take(n * c) {
                for &(y0, y1, x0, x1) in &bins {
                    let mut s = T::zero();
                    for y in y0..y1 {
                        for x in x0..x1 {
                            s += plane[y * w + x];
                        }
                    }
                    out.push(s / T::from_usize_lossy((y1 - y0) * (x1 - x0)));
                }
            }
        }
        Ok(Tensor::from_op(
            Shape::new(n, c, out_h, out_w),
            out,
            "adaptive_avg_pool",
            vec![self.clone()],
            move |g, _| {
                let mut gx = vec![T::zero(); n * c * h * w];
                for (p, plane) in gx.chunks_mut(h * w).enumerate() {
                    for (b, &(y0, y1, x0, x1)) in bins.iter().enumerate() {
                        let v = g[p * bins.len() + b] / T::from_usize_lossy((y1 - y0) * (x1 - x0));
                        for y in y0..y1 {
                            for x in x0..x1 {
                                plane[y * w + x] += v;
                            }
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Bilinear resize with half-pixel centres (no corner alignment).
    pub fn upsample_bilinear(&self, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
        let [n, c, h, w] = self.dims();
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return Err(TensorError::invalid(
                "upsample_bilinear",
                format!("cannot resize {} to {out_h}x{out_w}", self.shape()),
            ));
        }
        let ys: Vec<(usize, usize, T)> =
            bilinear_axis(h, out_h).into_iter().map(|(a, b, l)| (a, b, T::from_f64_lossy(l))).collect();
        let xs: Vec<(usize, usize, T)> =
            bilinear_axis(w, out_w).into_iter().map(|(a, b, l)| (a, b, T::from_f64_lossy(l))).collect();
        let mut out = Vec::with_capacity(n * c * out_h * out_w);
        {
            let xv = self.values();
            for plane in xv.chunks(h * w).take(n * c) {
                for &(y0, y1, ly) in &ys {
                    let (r0, r1) = (&plane[y0 * w..(y0 + 1) * w], &plane[y1 * w..(y1 + 1) * w]);
                    for &(x0, x1, lx) in &xs {
                        let top = r0[x0] + (r0[x1] - r0[x0]) * lx;
                        let bot = r1[x0] + (r1[x1] - r1[x0]) * lx;
                        out.push(top + (bot - top) * ly);
                    }
                }
            }
        }
        macs::add((4 * n * c * out_h * out_w) as u64);
        Ok(Tensor::from_op(
            Shape::new(n, c, out_h, out_w),
            out,
            "upsample_bilinear",
            vec![self.clone()],
            move |g, _| {
                let mut gx = vec![T::zero(); n * c * h * w];
                let one = T::one();
                for (p, plane) in gx.chunks_mut(h * w).enumerate() {
                    let gp = &g[p * out_h * out_w..(p + 1) * out_h * out_w];
                    for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
                        for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                            let go = gp[oy * out_w + ox];
                            plane[y0 * w + x0] += go * (one - ly) * (one - lx);
                            plane[y0 * w + x1] += go * (one - ly) * lx;
                            plane[y1 * w + x0] += go * ly * (one - lx);
                            plane[y1 * w + x1] += go * ly * lx;
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }
}
