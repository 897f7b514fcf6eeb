use rand::Rng;

use crate::{macs, Element, Result, Shape, Tensor, TensorError};

#[derive(Clone, Copy, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinKind {
    fn name(self) -> &'static str {
        match self {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
            BinKind::Div => "div",
        }
    }
}

/// Calls `f(out_index, a_index, b_index)` for every element of `out`.
#[inline]
fn for_each_broadcast(out: Shape, sa: [usize; 4], sb: [usize; 4], mut f: impl FnMut(usize, usize, usize)) {
    let [d0, d1, d2, d3] = out.0;
    let mut o = 0;
    for i0 in 0..d0 {
        for i1 in 0..d1 {
            for i2 in 0..d2 {
                let base_a = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                let base_b = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                for i3 in 0..d3 {
                    f(o, base_a + i3 * sa[3], base_b + i3 * sb[3]);
                    o += 1;
                }
            }
        }
    }
}

fn binary<T: Element>(a: &Tensor<T>, b: &Tensor<T>, kind: BinKind) -> Result<Tensor<T>> {
    let (sa_shape, sb_shape) = (a.shape(), b.shape());
    let out_shape = sa_shape
        .broadcast_with(&sb_shape)
        .ok_or_else(|| TensorError::mismatch(kind.name(), sa_shape, sb_shape))?;
    let sa = sa_shape.broadcast_strides(&out_shape).expect("broadcastable");
    let sb = sb_shape.broadcast_strides(&out_shape).expect("broadcastable");
    let same = sa_shape == sb_shape;

    let apply = |x: T, y: T| match kind {
        BinKind::Add => x + y,
        BinKind::Sub => x - y,
        BinKind::Mul => x * y,
        BinKind::Div => x / y,
    };

    let data = {
        let (av, bv) = (a.values(), b.values());
        if same {
            match kind {
                BinKind::Add => av.iter().zip(bv.iter()).map(|(&x, &y)| x + y).collect(),
                BinKind::Sub => av.iter().zip(bv.iter()).map(|(&x, &y)| x - y).collect(),
                BinKind::Mul => av.iter().zip(bv.iter()).map(|(&x, &y)| x * y).collect(),
                BinKind::Div => av.iter().zip(bv.iter()).map(|(&x, &y)| x / y).collect(),
            }
        } else {
            let mut out = vec![T::zero(); out_shape.numel()];
            for_each_broadcast(out_shape, sa, sb, |o, ia, ib| out[o] = apply(av[ia], bv[ib]));
            out
        }
    };
    if kind == BinKind::Mul {
        macs::add(out_shape.numel() as u64);
    }

    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(out_shape, data, kind.name(), vec![a.clone(), b.clone()], move |g, _| {
        let need_a = ac.requires_grad();
        let need_b = bc.requires_grad();
        let mut ga = need_a.then(|| vec![T::zero(); ac.numel()]);
        let mut gb = need_b.then(|| vec![T::zero(); bc.numel()]);
        let (av, bv) = (ac.values(), bc.values());
        for_each_broadcast(out_shape, sa, sb, |o, ia, ib| {
            let go = g[o];
            match kind {
                BinKind::Add => {
                    if let Some(ga) = ga.as_mut() {
                        ga[ia] += go;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[ib] += go;
                    }
                }
                BinKind::Sub => {
                    if let Some(ga) = ga.as_mut() {
                        ga[ia] += go;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[ib] -= go;
                    }
                }
                BinKind::Mul => {
                    if let Some(ga) = ga.as_mut() {
                        ga[ia] += go * bv[ib];
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[ib] += go * av[ia];
                    }
                }
                BinKind::Div => {
                    let y = bv[ib];
                    if let Some(ga) = ga.as_mut() {
                        ga[ia] += go / y;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[ib] -= go * av[ia] / (y * y);
                    }
                }
            }
        });
        vec![ga, gb]
    }))
}

/// Elementwise map with derivative `df(x, y)` expressed through the input
/// `x` and output `y`.
fn unary<T, F, D>(x: &Tensor<T>, op: &'static str, f: F, df: D) -> Tensor<T>
where
    T: Element,
    F: Fn(T) -> T,
    D: Fn(T, T) -> T + 'static,
{
    let data: Vec<T> = x.values().iter().map(|&v| f(v)).collect();
    let xc = x.clone();
    Tensor::from_op(x.shape(), data, op, vec![x.clone()], move |g, y| {
        let xv = xc.values();
        let gx = g
            .iter()
            .zip(xv.iter().zip(y))
            .map(|(&go, (&xi, &yi))| go * df(xi, yi))
            .collect();
        vec![Some(gx)]
    })
}

impl<T: Element> Tensor<T> {
    /// Broadcasting elementwise sum.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, BinKind::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, BinKind::Sub)
    }

    /// Broadcasting elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, BinKind::Mul)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, BinKind::Div)
    }

    pub fn neg(&self) -> Tensor<T> {
        unary(self, "neg", |v| -v, |_, _| -T::one())
    }

    pub fn scale(&self, s: T) -> Tensor<T> {
        unary(self, "scale", move |v| v * s, move |_, _| s)
    }

    pub fn add_scalar(&self, s: T) -> Tensor<T> {
        unary(self, "add_scalar", move |v| v + s, |_, _| T::one())
    }

    pub fn square(&self) -> Tensor<T> {
        unary(self, "square", |v| v * v, |x, _| x + x)
    }

    pub fn sqrt(&self) -> Tensor<T> {
        let half = T::from_f64_lossy(0.5);
        unary(self, "sqrt", |v| v.sqrt(), move |_, y| half / y)
    }

    pub fn exp(&self) -> Tensor<T> {
        unary(self, "exp", |v| v.exp(), |_, y| y)
    }

    pub fn abs(&self) -> Tensor<T> {
        unary(self, "abs", |v| v.abs(), |x, _| if x > T::zero() {
            T::one()
        } else if x < T::zero() {
            -T::one()
        } else {
            T::zero()
        })
    }

    pub fn leaky_relu(&self, slope: T) -> Tensor<T> {
        unary(
            self,
            "leaky_relu",
            move |v| if v >= T::zero() { v } else { v * slope },
            move |x, _| if x >= T::zero() { T::one() } else { slope },
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        unary(
            self,
            "sigmoid",
            |v| T::one() / (T::one() + (-v).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    /// Clamp into `[lo, hi]`; gradient passes only where the input was inside.
    pub fn clamp(&self, lo: T, hi: T) -> Tensor<T> {
        unary(
            self,
            "clamp",
            move |v| v.max(lo).min(hi),
            move |x, _| if x >= lo && x <= hi { T::one() } else { T::zero() },
        )
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1/(1-p)`. `p == 0` is the identity.
    pub fn dropout<R: Rng + ?Sized>(&self, p: f64, rng: &mut R) -> Result<Tensor<T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::invalid("dropout", format!("rate {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(self.clone());
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.numel())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let data = self.values().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        Ok(Tensor::from_op(self.shape(), data, "dropout", vec![self.clone()], move |g, _| {
            vec![Some(g.iter().zip(&mask).map(|(&go, &m)| go * m).collect())]
        }))
    }
}
