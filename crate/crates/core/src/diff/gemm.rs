//! Thin wrapper over the blocked GEMM kernel.

use crate::Real;

/// `c = alpha * op(a) * op(b) + beta * c` with explicit row/column strides.
///
/// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`. Strides are in elements,
/// so a transposed operand is expressed by swapping its strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: Real,
    a: &[Real],
    a_strides: (usize, usize),
    b: &[Real],
    b_strides: (usize, usize),
    beta: Real,
    c: &mut [Real],
    c_strides: (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let v = &mut c[i * c_strides.0 + j * c_strides.1];
                *v *= beta;
            }
        }
        return;
    }
    debug_assert!(a.len() > (m - 1) * a_strides.0 + (k - 1) * a_strides.1);
    debug_assert!(b.len() > (k - 1) * b_strides.0 + (n - 1) * b_strides.1);
    debug_assert!(c.len() > (m - 1) * c_strides.0 + (n - 1) * c_strides.1);
    // SAFETY: the debug assertions above document the bounds every caller
    // upholds; all slices outlive the call and `c` does not alias `a` or `b`.
    unsafe {
        kernel(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            c_strides.0 as isize,
            c_strides.1 as isize,
        );
    }
}

#[cfg(not(feature = "single-precision"))]
use matrixmultiply::dgemm as kernel;
#[cfg(feature = "single-precision")]
use matrixmultiply::sgemm as kernel;

/// Row-major strides for an `rows x cols` block.
#[inline]
pub(crate) fn rm(cols: usize) -> (usize, usize) {
    (cols, 1)
}

/// Strides that read a row-major `rows x cols` block as its transpose.
#[inline]
pub(crate) fn tr(cols: usize) -> (usize, usize) {
    (1, cols)
}
