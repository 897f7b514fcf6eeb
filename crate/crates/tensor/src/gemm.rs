use crate::Element;

/// Strided view of a row-major `rows×cols` matrix stored in a slice.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatView {
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl MatView {
    /// Plain row-major storage.
    pub fn rows(offset: usize, cols: usize) -> Self {
        MatView { offset, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major matrix that has `cols` columns in storage.
    pub fn transposed(offset: usize, stored_cols: usize) -> Self {
        MatView { offset, rs: 1, cs: stored_cols }
    }

    pub fn t(self) -> Self {
        MatView { offset: self.offset, rs: self.cs, cs: self.rs }
    }

    fn last_index(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            return self.offset;
        }
        self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// `C[m×n] = alpha * A[m×k] · B[k×n] + beta * C`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    av: MatView,
    b: &[T],
    bv: MatView,
    beta: T,
    c: &mut [T],
    cv: MatView,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() > cv.last_index(m, n), "gemm: C view out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = cv.offset + i * cv.rs + j * cv.cs;
                c[idx] = if beta == T::zero() { T::zero() } else { beta * c[idx] };
            }
        }
        return;
    }
    assert!(a.len() > av.last_index(m, k), "gemm: A view out of bounds");
    assert!(b.len() > bv.last_index(k, n), "gemm: B view out of bounds");
    // SAFETY: the three asserts above bound every reachable index.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(av.offset),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.offset),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}
