use crate::{Element, Result, Shape, Tensor, TensorError};

impl<T: Element> Tensor<T> {
    /// Concatenates along the channel axis. All inputs must agree on N, H, W.
    pub fn cat_channels(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::invalid("cat_channels", "no inputs"))?;
        let [n, _, h, w] = first.dims();
        for p in parts {
            let [pn, _, ph, pw] = p.dims();
            if (pn, ph, pw) != (n, h, w) {
                return Err(TensorError::mismatch("cat_channels", first.shape(), p.shape()));
            }
        }
        let hw = h * w;
        let widths: Vec<usize> = parts.iter().map(|p| p.shape().c()).collect();
        let c_total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * c_total * hw);
        {
            let vals: Vec<_> = parts.iter().map(|p| p.values()).collect();
            for b in 0..n {
                for (v, &c) in vals.iter().zip(&widths) {
                    out.extend_from_slice(&v[b * c * hw..(b + 1) * c * hw]);
                }
            }
        }
        let parents = parts.to_vec();
        let needs: Vec<bool> = parts.iter().map(|p| p.requires_grad()).collect();
        Ok(Tensor::from_op(Shape::new(n, c_total, h, w), out, "cat_channels", parents, move |g, _| {
            let mut grads: Vec<Option<Vec<T>>> = needs
                .iter()
                .zip(&widths)
                .map(|(&need, &c)| need.then(|| Vec::with_capacity(n * c * hw)))
                .collect();
            let mut off = 0;
            for _ in 0..n {
                for (gr, &c) in grads.iter_mut().zip(&widths) {
                    if let Some(gr) = gr {
                        gr.extend_from_slice(&g[off..off + c * hw]);
                    }
                    off += c * hw;
                }
            }
            grads
        }))
    }

    /// Channels `[start, start + len)`.
    pub fn narrow_channels(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        let [n, c, h, w] = self.dims();
        if start + len > c {
            return Err(TensorError::invalid(
                "narrow_channels",
                format!("range {start}..{} exceeds {c} channels", start + len),
            ));
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * len * hw);
        {
            let v = self.values();
            for b in 0..n {
                out.extend_from_slice(&v[(b * c + start) * hw..(b * c + start + len) * hw]);
            }
        }
        Ok(Tensor::from_op(Shape::new(n, len, h, w), out, "narrow_channels", vec![self.clone()], move |g, _| {
            let mut gx = vec![T::zero(); n * c * hw];
            for b in 0..n {
                gx[(b * c + start) * hw..(b * c + start + len) * hw]
                    .copy_from_slice(&g[b * len * hw..(b + 1) * len * hw]);
            }
            vec![Some(gx)]
        }))
    }

    /// Splits the channel axis into `chunks` equal parts.
    pub fn chunk_channels(&self, chunks: usize) -> Result<Vec<Tensor<T>>> {
        let c = self.shape().c();
        if chunks == 0 || c % chunks != 0 {
            return Err(TensorError::invalid(
                "chunk_channels",
                format!("{c} channels do not split into {chunks} equal chunks"),
            ));
        }
        let len = c / chunks;
        (0..chunks).map(|i| self.narrow_channels(i * len, len)).collect()
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&self, shape: impl Into<Shape>) -> Result<Tensor<T>> {
        let shape = shape.into();
        if shape.numel() != self.numel() {
            return Err(TensorError::mismatch("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(shape, self.to_vec(), "reshape", vec![self.clone()], |g, _| {
            vec![Some(g.to_vec())]
        }))
    }

    /// Swaps the last two dims.
    pub fn transpose_last2(&self) -> Tensor<T> {
        let [a, b, r, c] = self.dims();
        let out = transpose_blocks(&self.values(), a * b, r, c);
        Tensor::from_op(Shape::new(a, b, c, r), out, "transpose", vec![self.clone()], move |g, _| {
            vec![Some(transpose_blocks(g, a * b, c, r))]
        })
    }
}

fn transpose_blocks<T: Element>(x: &[T], batches: usize, rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..batches {
        let off = bi * rows * cols;
        for i in 0..rows {
            for j in 0..cols {
                out[off + j * rows + i] = x[off + i * cols + j];
            }
        }
    }
    out
}
