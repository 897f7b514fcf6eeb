use crate::gemm::{gemm, MatView};
use crate::{macs, Element, Result, Shape, Tensor, TensorError};

/// View of batch `b` of a stored `(B0, B1, rows, cols)` tensor, optionally
/// transposed.
fn view(b: usize, rows: usize, cols: usize, transposed: bool) -> MatView {
    let off = b * rows * cols;
    if transposed {
        MatView::transposed(off, cols)
    } else {
        MatView::rows(off, cols)
    }
}

impl<T: Element> Tensor<T> {
    /// Batched matrix product over the last two dims: `op(a) · op(b)` where
    /// `op` optionally transposes. Leading dims must match exactly.
    pub fn matmul_ext(&self, other: &Tensor<T>, trans_a: bool, trans_b: bool) -> Result<Tensor<T>> {
        let [a0, a1, ar, ac] = self.dims();
        let [b0, b1, br, bc] = other.dims();
        let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if a0 != b0 || a1 != b1 || k != kb {
            return Err(TensorError::mismatch("matmul", self.shape(), other.shape()));
        }
        let batches = a0 * a1;
        let out_shape = Shape::new(a0, a1, m, n);
        let mut out = vec![T::zero(); out_shape.numel()];
        {
            let (av, bv) = (self.values(), other.values());
            for bi in 0..batches {
                gemm(
                    m,
                    k,
                    n,
                    T::one(),
                    &av,
                    view(bi, ar, ac, trans_a),
                    &bv,
                    view(bi, br, bc, trans_b),
                    T::zero(),
                    &mut out,
                    MatView::rows(bi * m * n, n),
                );
            }
        }
        macs::add((batches * m * k * n) as u64);

        let (ac_t, bc_t) = (self.clone(), other.clone());
        Ok(Tensor::from_op(out_shape, out, "matmul", vec![self.clone(), other.clone()], move |dc, _| {
            let (av, bv) = (ac_t.values(), bc_t.values());
            let da = ac_t.requires_grad().then(|| {
                // d op(a) = dC · op(b)ᵀ, written through op's inverse view.
                let mut da = vec![T::zero(); av.len()];
                for bi in 0..batches {
                    gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        dc,
                        MatView::rows(bi * m * n, n),
                        &bv,
                        view(bi, br, bc, trans_b).t(),
                        T::zero(),
                        &mut da,
                        view(bi, ar, ac, trans_a),
                    );
                }
                da
            });
            let db = bc_t.requires_grad().then(|| {
                // d op(b) = op(a)ᵀ · dC
                let mut db = vec![T::zero(); bv.len()];
                for bi in 0..batches {
                    gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        &av,
                        view(bi, ar, ac, trans_a).t(),
                        dc,
                        MatView::rows(bi * m * n, n),
                        T::zero(),
                        &mut db,
                        view(bi, br, bc, trans_b),
                    );
                }
                db
            });
            vec![da, db]
        }))
    }

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.matmul_ext(other, false, false)
    }

    /// `self · otherᵀ` over the last two dims.
    pub fn matmul_nt(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.matmul_ext(other, false, true)
    }
}
