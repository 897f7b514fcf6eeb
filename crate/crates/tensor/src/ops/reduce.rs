use crate::{Element, Result, Shape, Tensor, TensorError};

impl<T: Element> Tensor<T> {
    /// Sum of all elements as a `(1,1,1,1)` tensor.
    pub fn sum(&self) -> Tensor<T> {
        let s: T = self.values().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(Shape::scalar(), vec![s], "sum", vec![self.clone()], move |g, _| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel().max(1);
        self.sum().scale(T::one() / T::from_usize_lossy(n))
    }

    /// Global average pooling over `H×W`, giving `(N, C, 1, 1)`.
    pub fn global_avg_pool(&self) -> Tensor<T> {
        let [n, c, h, w] = self.dims();
        let hw = h * w;
        let inv = T::one() / T::from_usize_lossy(hw.max(1));
        let data: Vec<T> = self
            .values()
            .chunks(hw.max(1))
            .take(n * c)
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        Tensor::from_op(Shape::new(n, c, 1, 1), data, "global_avg_pool", vec![self.clone()], move |g, _| {
            let mut gx = Vec::with_capacity(n * c * hw);
            for &go in g {
                gx.extend(std::iter::repeat(go * inv).take(hw));
            }
            vec![Some(gx)]
        })
    }

    /// Mean over channels at every pixel, replicated into each of the `C`
    /// output channels. Terms are summed in ascending order, so the result
    /// does not depend on channel order.
    pub fn channel_mean_replicated(&self) -> Tensor<T> {
        let [n, c, h, w] = self.dims();
        let hw = h * w;
        let inv = T::one() / T::from_usize_lossy(c.max(1));
        let mut data = Vec::with_capacity(self.numel());
        {
            let v = self.values();
            let mut terms = Vec::with_capacity(c);
            for b in 0..n {
                let sample = &v[b * c * hw..(b + 1) * c * hw];
                let mean: Vec<T> = (0..hw)
                    .map(|p| {
                        terms.clear();
                        terms.extend((0..c).map(|ch| sample[ch * hw + p]));
                        terms.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                        terms.iter().copied().sum::<T>() * inv
                    })
                    .collect();
                for _ in 0..c {
                    data.extend_from_slice(&mean);
                }
            }
        }
        Tensor::from_op(self.shape(), data, "channel_mean_replicated", vec![self.clone()], move |g, _| {
            let mut gx = Vec::with_capacity(n * c * hw);
            for b in 0..n {
                let gs = &g[b * c * hw..(b + 1) * c * hw];
                let total: Vec<T> = (0..hw).map(|p| (0..c).map(|ch| gs[ch * hw + p]).sum::<T>() * inv).collect();
                for _ in 0..c {
                    gx.extend_from_slice(&total);
                }
            }
            vec![Some(gx)]
        })
    }

    /// Mean SmoothL1 (Huber with threshold `beta`) between `self` and `target`:
    /// `0.5·d²/β` when `|d| < β`, else `|d| − 0.5·β`.
    pub fn smooth_l1(&self, target: &Tensor<T>, beta: T) -> Result<Tensor<T>> {
        self.check_same_shape(target, "smooth_l1")?;
        if beta <= T::zero() {
            return Err(TensorError::invalid("smooth_l1", "beta must be positive"));
        }
        let n = self.numel();
        let half = T::from_f64_lossy(0.5);
        let inv_n = T::one() / T::from_usize_lossy(n.max(1));
        let total: T = self
            .values()
            .iter()
            .zip(target.values().iter())
            .map(|(&r, &t)| {
                let d = (r - t).abs();
                if d < beta {
                    half * d * d / beta
                } else {
                    d - half * beta
                }
            })
            .sum();
        let (pc, tc) = (self.clone(), target.clone());
        Ok(Tensor::from_op(
            Shape::scalar(),
            vec![total * inv_n],
            "smooth_l1",
            vec![self.clone(), target.clone()],
            move |g, _| {
                let (pv, tv) = (pc.values(), tc.values());
                let d: Vec<T> = pv
                    .iter()
                    .zip(tv.iter())
                    .map(|(&r, &t)| {
                        let diff = r - t;
                        let v = if diff.abs() < beta { diff / beta } else { diff.signum() };
                        v * g[0] * inv_n
                    })
                    .collect();
                let gt = tc.requires_grad().then(|| d.iter().map(|&v| -v).collect());
                let gp = pc.requires_grad().then_some(d);
                vec![gp, gt]
            },
        ))
    }
}
