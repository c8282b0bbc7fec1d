//! Dense row-major kernels shared by the encoder, the probe and the optimizer.
//!
//! Everything operates on flat slices. Matrix products go through
//! `matrixmultiply`, which accepts arbitrary strides, so transposed operands
//! and per-head column slices never need to be copied out.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Floating-point element type of the numeric paths (`f32` in production,
/// `f64` for gradient checking).
pub trait Scalar:
    Float + Debug + Default + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    /// `c = alpha * a * b + beta * c` with explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn from_f64(v: f64) -> Self;
    fn from_f32(v: f32) -> Self;
    fn as_f64(self) -> f64;
    fn as_f32(self) -> f32;
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    assert!(
        rs >= 0 && cs >= 0 && (last as usize) < len,
        "gemm operand out of bounds"
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                check_extent(a.len(), m, k, rsa, csa);
                check_extent(b.len(), k, n, rsb, csb);
                check_extent(c.len(), m, n, rsc, csc);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every operand extent was bounds-checked above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn from_f32(v: f32) -> Self {
                v as $t
            }
            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn as_f32(self) -> f32 {
                self as f32
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// `a[m×k] · b[k×n]`, both row-major.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a,
        k as isize,
        1,
        b,
        n as isize,
        1,
        T::zero(),
        &mut c,
        n as isize,
        1,
    );
    c
}

/// `c += aᵀ · b` where `a` is `[m×k]` and `b` is `[m×n]`; `c` is `[k×n]`.
pub fn matmul_tn_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    T::gemm(
        k,
        m,
        n,
        T::one(),
        a,
        1,
        k as isize,
        b,
        n as isize,
        1,
        T::one(),
        c,
        n as isize,
        1,
    );
}

/// `a[m×k] · bᵀ` where `b` is `[n×k]`.
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a,
        k as isize,
        1,
        b,
        1,
        k as isize,
        T::zero(),
        &mut c,
        n as isize,
        1,
    );
    c
}

/// Adds `bias[n]` to every row of `x[rows×n]`.
pub fn add_row_bias<T: Scalar>(x: &mut [T], bias: &[T]) {
    let n = bias.len();
    for row in x.chunks_exact_mut(n) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += *b;
        }
    }
}

/// Column sums of `x[rows×n]` accumulated into `out[n]`.
pub fn col_sum_acc<T: Scalar>(x: &[T], out: &mut [T]) {
    let n = out.len();
    for row in x.chunks_exact(n) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += *v;
        }
    }
}

/// In-place numerically stable softmax of one row.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let v = x.as_f64();
    T::from_f64(0.5 * v * (1.0 + libm::erf(v / SQRT_2)))
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let v = x.as_f64();
    let cdf = 0.5 * (1.0 + libm::erf(v / SQRT_2));
    let pdf = INV_SQRT_2PI * (-0.5 * v * v).exp();
    T::from_f64(cdf + v * pdf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
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
    fn products_match_triple_loop() {
        let a: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..20).map(|i| (i as f64 * 0.11).cos()).collect();
        let c = matmul(&a, &b, 3, 4, 5);
        let r = naive(&a, &b, 3, 4, 5);
        for (x, y) in c.iter().zip(&r) {
            assert!((x - y).abs() < 1e-12);
        }

        // aᵀ·b with a [4×3], b [4×5]
        let mut at = vec![0.0; 12];
        for i in 0..3 {
            for p in 0..4 {
                at[p * 3 + i] = a[i * 4 + p];
            }
        }
        let mut acc = vec![0.0; 15];
        matmul_tn_acc(&at, &b, &mut acc, 4, 3, 5);
        for (x, y) in acc.iter().zip(&r) {
            assert!((x - y).abs() < 1e-12);
        }

        // a·bᵀ with bt [5×4]
        let mut bt = vec![0.0; 20];
        for p in 0..4 {
            for j in 0..5 {
                bt[j * 4 + p] = b[p * 5 + j];
            }
        }
        let c2 = matmul_nt(&a, &bt, 3, 4, 5);
        for (x, y) in c2.iter().zip(&r) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut row = vec![1000.0f32, 999.0, -5.0, 0.0];
        softmax_in_place(&mut row);
        let s: f32 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
        assert_eq!(gelu(0.0f64), 0.0);
    }
}
