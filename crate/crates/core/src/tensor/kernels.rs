//! Dense kernels on row-major slices.
//!
//! Matrix products go through `matrixmultiply`, single-threaded. Each output
//! element's arithmetic depends only on the inner dimension, not on how many
//! rows are computed at once, so prefix computations match full ones bit for
//! bit.

use super::Scalar;

#[inline]
fn check(a: usize, b: usize, c: usize, m: usize, k: usize, n: usize) {
    assert!(a >= m * k && b >= k * n && c >= m * n, "gemm operand too small");
}

/// `c[m, n] = a[m, k] · b[k, n]`, or `c += a · b` when `accumulate`.
pub fn gemm<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    check(a.len(), b.len(), c.len(), m, k, n);
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: sizes checked above; `c` is a unique borrow.
    unsafe { T::gemm_raw(m, k, n, a.as_ptr(), (k as isize, 1), b.as_ptr(), (n as isize, 1), beta, c.as_mut_ptr(), n as isize) }
}

/// `c[m, n] (+)= aᵀ · b` where `a` is stored as `[k, m]`.
pub fn gemm_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    check(a.len(), b.len(), c.len(), m, k, n);
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: as in `gemm`; `a` is read with swapped strides.
    unsafe { T::gemm_raw(m, k, n, a.as_ptr(), (1, m as isize), b.as_ptr(), (n as isize, 1), beta, c.as_mut_ptr(), n as isize) }
}

/// `c[m, n] (+)= a · bᵀ` where `b` is stored as `[n, k]`.
pub fn gemm_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    check(a.len(), b.len(), c.len(), m, k, n);
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: as in `gemm`; `b` is read with swapped strides.
    unsafe { T::gemm_raw(m, k, n, a.as_ptr(), (k as isize, 1), b.as_ptr(), (1, k as isize), beta, c.as_mut_ptr(), n as isize) }
}

/// A matrix view into a slice: element `(i, j)` lives at
/// `offset + i * row_stride + j * col_stride`.
#[derive(Debug, Clone, Copy)]
pub struct View {
    pub offset: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl View {
    pub fn rows(offset: usize, row_stride: usize) -> Self {
        Self { offset, row_stride, col_stride: 1 }
    }

    /// The transpose of a row-major view.
    pub fn transposed(offset: usize, row_stride: usize) -> Self {
        Self { offset, row_stride: 1, col_stride: row_stride }
    }

    fn end(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            return self.offset;
        }
        self.offset + (rows - 1) * self.row_stride + (cols - 1) * self.col_stride + 1
    }
}

/// `c (+)= a · b` on strided views: `a` is `m x k`, `b` is `k x n`, `c` is
/// `m x n` with unit column stride.
#[allow(clippy::too_many_arguments)]
pub fn gemm_view<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    av: View,
    b: &[T],
    bv: View,
    c: &mut [T],
    c_offset: usize,
    c_row_stride: usize,
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(av.end(m, k) <= a.len() && bv.end(k, n) <= b.len(), "gemm view out of bounds");
    assert!(View::rows(c_offset, c_row_stride).end(m, n) <= c.len(), "gemm output out of bounds");
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: every touched element was bounds-checked above and `c` is a
    // unique borrow, so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr().add(av.offset),
            (av.row_stride as isize, av.col_stride as isize),
            b.as_ptr().add(bv.offset),
            (bv.row_stride as isize, bv.col_stride as isize),
            beta,
            c.as_mut_ptr().add(c_offset),
            c_row_stride as isize,
        )
    }
}

/// Row-major transpose of an `rows x cols` matrix.
pub fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> alloc::vec::Vec<T> {
    let mut out = alloc::vec![T::zero(); rows * cols];
    const B: usize = 32;
    for i0 in (0..rows).step_by(B) {
        for j0 in (0..cols).step_by(B) {
            for i in i0..(i0 + B).min(rows) {
                for j in j0..(j0 + B).min(cols) {
                    out[j * rows + i] = a[i * cols + j];
                }
            }
        }
    }
    out
}

/// Dot product with eight independent partial sums (fixed order).
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`.
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = alloc::vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive() {
        for (m, k, n) in [(1, 1, 1), (5, 3, 7), (9, 16, 4), (33, 17, 65)] {
            let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
            let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
            let mut c = alloc::vec![0.0; m * n];
            gemm(&a, &b, &mut c, m, k, n, false);
            for (x, y) in c.iter().zip(&naive(&a, &b, m, k, n)) {
                assert!((x - y).abs() < 1e-12);
            }
            gemm(&a, &b, &mut c, m, k, n, true);
            let twice: Vec<f64> = naive(&a, &b, m, k, n).iter().map(|x| x + x).collect();
            for (x, y) in c.iter().zip(&twice) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_variants() {
        let (m, k, n) = (6, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(&a, &b, m, k, n);
        let mut c = alloc::vec![0.0; m * n];
        gemm_tn(&transpose(&a, m, k), &b, &mut c, m, k, n, false);
        assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));
        gemm_nt(&a, &transpose(&b, k, n), &mut c, m, k, n, false);
        assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn row_results_do_not_depend_on_row_count() {
        let (k, n) = (13, 9);
        let a: Vec<f32> = (0..7 * k).map(|i| (i as f32 * 0.3).sin()).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i as f32 * 0.7).cos()).collect();
        let mut full = alloc::vec![0.0f32; 7 * n];
        gemm(&a, &b, &mut full, 7, k, n, false);
        for rows in 1..7 {
            // also starting mid-matrix
            let mut tail = alloc::vec![0.0f32; (7 - rows) * n];
            gemm(&a[rows * k..], &b, &mut tail, 7 - rows, k, n, false);
            assert_eq!(tail[..], full[rows * n..]);
            let mut part = alloc::vec![0.0f32; rows * n];
            gemm(&a[..rows * k], &b, &mut part, rows, k, n, false);
            assert_eq!(part[..], full[..rows * n]);
        }
    }

    #[test]
    fn transpose_round_trip() {
        let a: Vec<f64> = (0..35).map(|i| i as f64).collect();
        let t = transpose(&a, 5, 7);
        // a[r][c] lands at t[c][r]
        assert_eq!(t[0], 0.0);
        assert_eq!(t[5], 1.0);
        assert_eq!(t[4 * 5 + 1], 11.0);
        assert_eq!(transpose(&t, 7, 5), a);
    }

    #[test]
    fn dot_matches_sum() {
        let a: Vec<f64> = (0..19).map(|i| i as f64).collect();
        assert_eq!(dot(&a, &a), (0..19).map(|i| (i * i) as f64).sum::<f64>());
    }
}
