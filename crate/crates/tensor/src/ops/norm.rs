use crate::{Element, Result, Tensor, TensorError};

impl<T: Element> Tensor<T> {
    /// Layer normalization across channels, independently at every spatial
    /// location, followed by a per-channel affine (`gamma`, `beta` of `C`
    /// elements each).
    pub fn layer_norm_channels(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
        let [n, c, h, w] = self.dims();
        if gamma.numel() != c || beta.numel() != c {
            return Err(TensorError::mismatch("layer_norm", self.shape(), gamma.shape()));
        }
        let hw = h * w;
        let inv_c = T::one() / T::from_usize_lossy(c.max(1));
        let (mean, inv_std) = channel_stats(&self.values(), n, c, hw, eps);
        let mut out = vec![T::zero(); self.numel()];
        {
            let (xv, gv, bv) = (self.values(), gamma.values(), beta.values());
            for b in 0..n {
                let (mu, is) = (&mean[b * hw..(b + 1) * hw], &inv_std[b * hw..(b + 1) * hw]);
                for ch in 0..c {
                    let off = (b * c + ch) * hw;
                    let (g, bb) = (gv[ch], bv[ch]);
                    for p in 0..hw {
                        out[off + p] = (xv[off + p] - mu[p]) * is[p] * g + bb;
                    }
                }
            }
        }
        let (xc, gc, bc) = (self.clone(), gamma.clone(), beta.clone());
        Ok(Tensor::from_op(
            self.shape(),
            out,
            "layer_norm",
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |dy, _| {
                let (xv, gv) = (xc.values(), gc.values());
                let mut dx = xc.requires_grad().then(|| vec![T::zero(); xc.numel()]);
                let mut dg = gc.requires_grad().then(|| vec![T::zero(); c]);
                let mut db = bc.requires_grad().then(|| vec![T::zero(); c]);
                let mut sum_d = vec![T::zero(); hw];
                let mut sum_dx = vec![T::zero(); hw];
                for b in 0..n {
                    let (mu, is) = (&mean[b * hw..(b + 1) * hw], &inv_std[b * hw..(b + 1) * hw]);
                    sum_d.iter_mut().for_each(|v| *v = T::zero());
                    sum_dx.iter_mut().for_each(|v| *v = T::zero());
                    for ch in 0..c {
                        let off = (b * c + ch) * hw;
                        let g = gv[ch];
                        let mut acc_g = T::zero();
                        let mut acc_b = T::zero();
                        for p in 0..hw {
                            let xhat = (xv[off + p] - mu[p]) * is[p];
                            let d = dy[off + p];
                            acc_g += d * xhat;
                            acc_b += d;
                            let dxhat = d * g;
                            sum_d[p] += dxhat;
                            sum_dx[p] += dxhat * xhat;
                        }
                        if let Some(dg) = dg.as_mut() {
                            dg[ch] += acc_g;
                        }
                        if let Some(db) = db.as_mut() {
                            db[ch] += acc_b;
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        for ch in 0..c {
                            let off = (b * c + ch) * hw;
                            let g = gv[ch];
                            for p in 0..hw {
                                let xhat = (xv[off + p] - mu[p]) * is[p];
                                let dxhat = dy[off + p] * g;
                                dx[off + p] = is[p] * (dxhat - inv_c * sum_d[p] - xhat * inv_c * sum_dx[p]);
                            }
                        }
                    }
                }
                vec![dx, dg, db]
            },
        ))
    }

    /// Softmax along `axis` (0..=3) with max-subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        if axis > 3 {
            return Err(TensorError::invalid("softmax", format!("axis {axis} out of range")));
        }
        let dims = self.dims();
        let len = dims[axis];
        let inner: usize = dims[axis + 1..].iter().product();
        let outer: usize = dims[..axis].iter().product();
        let mut out = vec![T::zero(); self.numel()];
        {
            let xv = self.values();
            let mut buf = vec![T::zero(); len];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut m = T::neg_infinity();
                    for k in 0..len {
                        m = m.max(xv[base + k * inner]);
                    }
                    let mut s = T::zero();
                    for k in 0..len {
                        let e = (xv[base + k * inner] - m).exp();
                        buf[k] = e;
                        s += e;
                    }
                    for k in 0..len {
                        out[base + k * inner] = buf[k] / s;
                    }
                }
            }
        }
        Ok(Tensor::from_op(self.shape(), out, "softmax", vec![self.clone()], move |dy, y| {
            let mut dx = vec![T::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut dot = T::zero();
                    for k in 0..len {
                        let idx = base + k * inner;
                        dot += dy[idx] * y[idx];
                    }
                    for k in 0..len {
                        let idx = base + k * inner;
                        dx[idx] = y[idx] * (dy[idx] - dot);
                    }
                }
            }
            vec![Some(dx)]
        }))
    }
}

/// Per-location channel mean and `1/sqrt(var + eps)` (biased variance).
fn channel_stats<T: Element>(x: &[T], n: usize, c: usize, hw: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let inv_c = T::one() / T::from_usize_lossy(c.max(1));
    let mut mean = vec![T::zero(); n * hw];
    let mut var = vec![T::zero(); n * hw];
    for b in 0..n {
        let mu = &mut mean[b * hw..(b + 1) * hw];
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for p in 0..hw {
                mu[p] += x[off + p];
            }
        }
        mu.iter_mut().for_each(|v| *v *= inv_c);
        let va = &mut var[b * hw..(b + 1) * hw];
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for p in 0..hw {
                let d = x[off + p] - mu[p];
                va[p] += d * d;
            }
        }
    }
    let inv_std = var.iter().map(|&v| T::one() / (v * inv_c + eps).sqrt()).collect();
    (mean, inv_std)
}
