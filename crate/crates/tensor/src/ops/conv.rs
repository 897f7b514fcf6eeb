use crate::gemm::{gemm, MatView};
use crate::{macs, Element, Result, Shape, Tensor, TensorError};

/// Stride, zero padding and channel grouping of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec { stride: 1, padding: 0, groups: 1 }
    }
}

impl Conv2dSpec {
    /// Stride 1 with `k/2` padding, so odd kernels keep the spatial size.
    pub fn same(k: usize) -> Self {
        Conv2dSpec { stride: 1, padding: k / 2, groups: 1 }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    /// Output spatial size for an `h×w` input and `kh×kw` kernel.
    pub fn output_hw(&self, h: usize, w: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if self.stride == 0 || ph < kh || pw < kw {
            return None;
        }
        Some(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
    groups: usize,
}

impl Geometry {
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }
    /// Rows of the unfolded patch matrix per group.
    fn k(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }
    fn l(&self) -> usize {
        self.ho * self.wo
    }
    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
    fn depthwise(&self) -> bool {
        self.groups == self.cin && self.cout == self.cin && self.groups > 1
    }
    /// Output columns `ox` whose source column `ox*s + kj - p` is in range.
    #[inline]
    fn ox_range(&self, kj: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.pad);
        let lo = if kj >= p { 0 } else { (p - kj).div_ceil(s) };
        let hi = if self.w + p > kj { ((self.w - 1 + p - kj) / s + 1).min(self.wo) } else { 0 };
        (lo, hi.max(lo))
    }
}

fn im2col<T: Element>(x: &[T], g: &Geometry, n: usize, grp: usize, col: &mut [T]) {
    let (cig, l) = (g.cin_g(), g.l());
    let plane = g.h * g.w;
    let mut r = 0;
    for ci in 0..cig {
        let src = &x[(n * g.cin + grp * cig + ci) * plane..][..plane];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &mut col[r * l..(r + 1) * l];
                let (lo, hi) = g.ox_range(kj);
                for oy in 0..g.ho {
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    dst[..lo].iter_mut().for_each(|v| *v = T::zero());
                    dst[hi..].iter_mut().for_each(|v| *v = T::zero());
                    if g.stride == 1 {
                        let start = lo + kj - g.pad;
                        dst[lo..hi].copy_from_slice(&srow[start..start + (hi - lo)]);
                    } else {
                        for ox in lo..hi {
                            dst[ox] = srow[ox * g.stride + kj - g.pad];
                        }
                    }
                }
                r += 1;
            }
        }
    }
}

fn col2im<T: Element>(col: &[T], g: &Geometry, n: usize, grp: usize, dx: &mut [T]) {
    let (cig, l) = (g.cin_g(), g.l());
    let plane = g.h * g.w;
    let mut r = 0;
    for ci in 0..cig {
        let dst = &mut dx[(n * g.cin + grp * cig + ci) * plane..][..plane];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &col[r * l..(r + 1) * l];
                let (lo, hi) = g.ox_range(kj);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let srow = &row[oy * g.wo..(oy + 1) * g.wo];
                    if g.stride == 1 {
                        let start = lo + kj - g.pad;
                        for (d, &v) in drow[start..start + (hi - lo)].iter_mut().zip(&srow[lo..hi]) {
                            *d += v;
                        }
                    } else {
                        for ox in lo..hi {
                            drow[ox * g.stride + kj - g.pad] += srow[ox];
                        }
                    }
                }
                r += 1;
            }
        }
    }
}

/// Copies one plane into a zero-bordered buffer of `(h+2p)×(w+2p)`.
fn pad_plane<T: Element>(src: &[T], g: &Geometry, buf: &mut [T]) {
    let pw = g.w + 2 * g.pad;
    buf.iter_mut().for_each(|v| *v = T::zero());
    for y in 0..g.h {
        buf[(y + g.pad) * pw + g.pad..][..g.w].copy_from_slice(&src[y * g.w..(y + 1) * g.w]);
    }
}

fn depthwise_forward<T: Element>(x: &[T], w: &[T], g: &Geometry, out: &mut [T]) {
    let (plane_in, plane_out, kk) = (g.h * g.w, g.l(), g.kh * g.kw);
    let pw = g.w + 2 * g.pad;
    let mut buf = vec![T::zero(); (g.h + 2 * g.pad) * pw];
    for nc in 0..g.n * g.cin {
        let c = nc % g.cin;
        pad_plane(&x[nc * plane_in..][..plane_in], g, &mut buf);
        let dst = &mut out[nc * plane_out..][..plane_out];
        let wc = &w[c * kk..(c + 1) * kk];
        for oy in 0..g.ho {
            let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
            for ki in 0..g.kh {
                let prow = &buf[(oy * g.stride + ki) * pw..][..pw];
                for kj in 0..g.kw {
                    let wv = wc[ki * g.kw + kj];
                    if g.stride == 1 {
                        for (d, &s) in drow.iter_mut().zip(&prow[kj..kj + g.wo]) {
                            *d += wv * s;
                        }
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate() {
                            *d += wv * prow[ox * g.stride + kj];
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_backward<T: Element>(
    x: &[T],
    w: &[T],
    g: &Geometry,
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let (plane_in, plane_out, kk) = (g.h * g.w, g.l(), g.kh * g.kw);
    let pw = g.w + 2 * g.pad;
    let psize = (g.h + 2 * g.pad) * pw;
    let mut buf = vec![T::zero(); psize];
    let mut dbuf = vec![T::zero(); psize];
    for nc in 0..g.n * g.cin {
        let c = nc % g.cin;
        let gout = &dy[nc * plane_out..][..plane_out];
        let wc = &w[c * kk..(c + 1) * kk];
        if let Some(dw) = dw.as_deref_mut() {
            pad_plane(&x[nc * plane_in..][..plane_in], g, &mut buf);
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let mut acc = T::zero();
                    for oy in 0..g.ho {
                        let grow = &gout[oy * g.wo..(oy + 1) * g.wo];
                        let prow = &buf[(oy * g.stride + ki) * pw..][..pw];
                        if g.stride == 1 {
                            acc += grow.iter().zip(&prow[kj..kj + g.wo]).map(|(&a, &b)| a * b).sum::<T>();
                        } else {
                            for (ox, &gv) in grow.iter().enumerate() {
                                acc += gv * prow[ox * g.stride + kj];
                            }
                        }
                    }
                    dw[c * kk + ki * g.kw + kj] += acc;
                }
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            dbuf.iter_mut().for_each(|v| *v = T::zero());
            for oy in 0..g.ho {
                let grow = &gout[oy * g.wo..(oy + 1) * g.wo];
                for ki in 0..g.kh {
                    let prow = &mut dbuf[(oy * g.stride + ki) * pw..][..pw];
                    for kj in 0..g.kw {
                        let wv = wc[ki * g.kw + kj];
                        if g.stride == 1 {
                            for (d, &gv) in prow[kj..kj + g.wo].iter_mut().zip(grow) {
                                *d += wv * gv;
                            }
                        } else {
                            for (ox, &gv) in grow.iter().enumerate() {
                                prow[ox * g.stride + kj] += wv * gv;
                            }
                        }
                    }
                }
            }
            let dst = &mut dx[nc * plane_in..][..plane_in];
            for y in 0..g.h {
                for (d, &s) in dst[y * g.w..(y + 1) * g.w].iter_mut().zip(&dbuf[(y + g.pad) * pw + g.pad..][..g.w]) {
                    *d += s;
                }
            }
        }
    }
}

fn gemm_forward<T: Element>(x: &[T], w: &[T], g: &Geometry, out: &mut [T]) {
    let (cig, cog, k, l) = (g.cin_g(), g.cout_g(), g.k(), g.l());
    let mut col = if g.pointwise() { Vec::new() } else { vec![T::zero(); k * l] };
    for n in 0..g.n {
        for grp in 0..g.groups {
            let (src, src_view) = if g.pointwise() {
                (x, MatView::rows((n * g.cin + grp * cig) * l, l))
            } else {
                im2col(x, g, n, grp, &mut col);
                (&col[..], MatView::rows(0, l))
            };
            gemm(
                cog,
                k,
                l,
                T::one(),
                w,
                MatView::rows(grp * cog * k, k),
                src,
                src_view,
                T::zero(),
                out,
                MatView::rows((n * g.cout + grp * cog) * l, l),
            );
        }
    }
}

fn gemm_backward<T: Element>(
    x: &[T],
    w: &[T],
    g: &Geometry,
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let (cig, cog, k, l) = (g.cin_g(), g.cout_g(), g.k(), g.l());
    let mut col = if g.pointwise() { Vec::new() } else { vec![T::zero(); k * l] };
    for n in 0..g.n {
        for grp in 0..g.groups {
            let dy_view = MatView::rows((n * g.cout + grp * cog) * l, l);
            if let Some(dw) = dw.as_deref_mut() {
                let (src, src_view) = if g.pointwise() {
                    (x, MatView::rows((n * g.cin + grp * cig) * l, l))
                } else {
                    im2col(x, g, n, grp, &mut col);
                    (&col[..], MatView::rows(0, l))
                };
                // dW_g += dY_g · colᵀ
                gemm(
                    cog,
                    l,
                    k,
                    T::one(),
                    dy,
                    dy_view,
                    src,
                    src_view.t(),
                    T::one(),
                    dw,
                    MatView::rows(grp * cog * k, k),
                );
            }
            if let Some(dx) = dx.as_deref_mut() {
                let wt = MatView::rows(grp * cog * k, k).t();
                if g.pointwise() {
                    gemm(
                        k,
                        cog,
                        l,
                        T::one(),
                        w,
                        wt,
                        dy,
                        dy_view,
                        T::zero(),
                        dx,
                        MatView::rows((n * g.cin + grp * cig) * l, l),
                    );
                } else {
                    gemm(k, cog, l, T::one(), w, wt, dy, dy_view, T::zero(), &mut col, MatView::rows(0, l));
                    col2im(&col, g, n, grp, dx);
                }
            }
        }
    }
}

impl<T: Element> Tensor<T> {
    /// 2-D cross-correlation with weight `(C_out, C_in/groups, kH, kW)` and
    /// optional bias of `C_out` elements.
    pub fn conv2d(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>, spec: Conv2dSpec) -> Result<Tensor<T>> {
        let [n, cin, h, w] = self.dims();
        let [cout, cin_g, kh, kw] = weight.dims();
        let groups = spec.groups.max(1);
        if cin_g * groups != cin || cout % groups != 0 {
            return Err(TensorError::mismatch("conv2d", self.shape(), weight.shape()));
        }
        if let Some(b) = bias {
            if b.numel() != cout {
                return Err(TensorError::mismatch("conv2d bias", weight.shape(), b.shape()));
            }
        }
        let (ho, wo) = spec.output_hw(h, w, kh, kw).ok_or_else(|| {
            TensorError::invalid(
                "conv2d",
                format!("kernel {kh}x{kw} with padding {} does not fit input {}", spec.padding, self.shape()),
            )
        })?;
        let g = Geometry { n, cin, h, w, cout, kh, kw, ho, wo, stride: spec.stride, pad: spec.padding, groups };
        let out_shape = Shape::new(n, cout, ho, wo);
        let mut out = vec![T::zero(); out_shape.numel()];
        {
            let (xv, wv) = (self.values(), weight.values());
            if g.depthwise() {
                depthwise_forward(&xv, &wv, &g, &mut out);
            } else {
                gemm_forward(&xv, &wv, &g, &mut out);
            }
        }
        if let Some(b) = bias {
            let bv = b.values();
            let l = g.l();
            for (i, chunk) in out.chunks_mut(l).enumerate() {
                let bc = bv[i % cout];
                chunk.iter_mut().for_each(|v| *v += bc);
            }
        }
        macs::add((n * cout * cin_g * kh * kw * ho * wo) as u64);

        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let (xc, wc, bc) = (self.clone(), weight.clone(), bias.cloned());
        Ok(Tensor::from_op(out_shape, out, "conv2d", parents, move |dy, _| {
            let (xv, wv) = (xc.values(), wc.values());
            let mut dx = xc.requires_grad().then(|| vec![T::zero(); xc.numel()]);
            let mut dw = wc.requires_grad().then(|| vec![T::zero(); wc.numel()]);
            if g.depthwise() {
                depthwise_backward(&xv, &wv, &g, dy, dx.as_deref_mut(), dw.as_deref_mut());
            } else {
                gemm_backward(&xv, &wv, &g, dy, dx.as_deref_mut(), dw.as_deref_mut());
            }
            let mut grads = vec![dx, dw];
            if let Some(b) = &bc {
                let db = b.requires_grad().then(|| {
                    let mut db = vec![T::zero(); g.cout];
                    for (i, chunk) in dy.chunks(g.l()).enumerate() {
                        db[i % g.cout] += chunk.iter().copied().sum::<T>();
                    }
                    db
                });
                grads.push(db);
            }
            grads
        }))
    }
}
