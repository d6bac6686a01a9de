use super::Scalar;

/// Row and column strides of a matrix view, in elements.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Strides(pub usize, pub usize);

impl Strides {
    pub fn row_major(cols: usize) -> Self {
        Strides(cols, 1)
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn transposed(cols: usize) -> Self {
        Strides(1, cols)
    }

    fn span(self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.0 + (cols - 1) * self.1 + 1
        }
    }
}

/// `c = alpha · a(m×k) · b(k×n) + beta · c(m×n)` over strided slices.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    sa: Strides,
    b: &[T],
    sb: Strides,
    beta: T,
    c: &mut [T],
    sc: Strides,
) {
    assert!(sa.span(m, k) <= a.len(), "gemm: lhs view out of bounds");
    assert!(sb.span(k, n) <= b.len(), "gemm: rhs view out of bounds");
    assert!(sc.span(m, n) <= c.len(), "gemm: output view out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every addressed element lies inside the slices (checked above),
    // and `c` is exclusively borrowed so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            sc.0 as isize,
            sc.1 as isize,
        )
    }
}
