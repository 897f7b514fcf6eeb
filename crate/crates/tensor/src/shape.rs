use std::fmt;

/// Four-dimensional shape, conventionally `(N, C, H, W)`.
///
/// Attention maps reuse the same container as `(N, heads, rows, cols)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub const fn scalar() -> Self {
        Shape([1, 1, 1, 1])
    }

    /// Per-channel vector shape `(1, C, 1, 1)` used for biases and affines.
    pub const fn channels(c: usize) -> Self {
        Shape([1, c, 1, 1])
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }
    pub fn c(&self) -> usize {
        self.0[1]
    }
    pub fn h(&self) -> usize {
        self.0[2]
    }
    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn hw(&self) -> usize {
        self.0[2] * self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn dims(&self) -> [usize; 4] {
        self.0
    }

    /// Row-major strides.
    pub fn strides(&self) -> [usize; 4] {
        let [_, c, h, w] = self.0;
        [c * h * w, h * w, w, 1]
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn with_c(&self, c: usize) -> Self {
        Shape([self.0[0], c, self.0[2], self.0[3]])
    }

    /// Strides to read `self` as if it had shape `out`, with size-1 dims
    /// broadcast (stride 0). `None` when not broadcastable.
    pub(crate) fn broadcast_strides(&self, out: &Shape) -> Option<[usize; 4]> {
        let s = self.strides();
        let mut r = [0; 4];
        for d in 0..4 {
            if self.0[d] == out.0[d] {
                r[d] = if self.0[d] == 1 { 0 } else { s[d] };
            } else if self.0[d] == 1 {
                r[d] = 0;
            } else {
                return None;
            }
        }
        Some(r)
    }

    pub(crate) fn broadcast_with(&self, other: &Shape) -> Option<Shape> {
        let mut out = [0; 4];
        for d in 0..4 {
            let (a, b) = (self.0[d], other.0[d]);
            out[d] = if a == b {
                a
            } else if a == 1 {
                b
            } else if b == 1 {
                a
            } else {
                return None;
            };
        }
        Some(Shape(out))
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "({n}, {c}, {h}, {w})")
    }
}

impl From<[usize; 4]> for Shape {
    fn from(d: [usize; 4]) -> Self {
        Shape(d)
    }
}
