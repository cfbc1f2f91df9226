//! Scalar abstraction shared by the numeric parts of the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar used by the predictor networks, feature vectors
/// and smoothed estimates: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Name written into checkpoints so a file states its own precision.
    const TAG: &'static str;

    /// Converts an `f64` literal; every finite `f64` maps to some value.
    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `c += a · b` for row-major `a` (m × k), `b` (k × n) and `c` (m × n).
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]);
}

impl Real for f32 {
    const TAG: &'static str = "f32";

    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn gemm(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        // SAFETY: the slices cover the row-major extents checked above.
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, 1.0,
                a.as_ptr(), k as isize, 1,
                b.as_ptr(), n as isize, 1,
                1.0,
                c.as_mut_ptr(), n as isize, 1,
            )
        }
    }
}

impl Real for f64 {
    const TAG: &'static str = "f64";

    #[inline]
    fn lit(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    fn gemm(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        // SAFETY: the slices cover the row-major extents checked above.
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, 1.0,
                a.as_ptr(), k as isize, 1,
                b.as_ptr(), n as isize, 1,
                1.0,
                c.as_mut_ptr(), n as isize, 1,
            )
        }
    }
}

/// `y += a * x` over equal-length slices.
#[inline(always)]
pub(crate) fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `y += Σ a[k]·x[k]` over four rows in one pass, so `y` is loaded and
/// stored once per four rows.
#[inline(always)]
pub(crate) fn axpy4<T: Real>(y: &mut [T], a: [T; 4], x: [&[T]; 4]) {
    let n = y.len();
    let (x0, x1, x2, x3) = (&x[0][..n], &x[1][..n], &x[2][..n], &x[3][..n]);
    for k in 0..n {
        y[k] += a[0] * x0[k] + a[1] * x1[k] + a[2] * x2[k] + a[3] * x3[k];
    }
}

/// `y += Σ a·row(i)` over `(i, a)` pairs, four rows at a time. Uses AVX2
/// code when the CPU has it.
#[inline]
pub(crate) fn accumulate_rows<'a, T: Real + 'a>(
    y: &mut [T],
    pairs: impl Iterator<Item = (usize, T)>,
    row: impl Fn(usize) -> &'a [T],
) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        unsafe { accumulate_rows_avx2(y, pairs, row) };
        return;
    }
    accumulate_rows_portable(y, pairs, row)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn accumulate_rows_avx2<'a, T: Real + 'a>(
    y: &mut [T],
    pairs: impl Iterator<Item = (usize, T)>,
    row: impl Fn(usize) -> &'a [T],
) {
    accumulate_rows_portable(y, pairs, row)
}

#[inline(always)]
fn accumulate_rows_portable<'a, T: Real + 'a>(
    y: &mut [T],
    pairs: impl Iterator<Item = (usize, T)>,
    row: impl Fn(usize) -> &'a [T],
) {
    let mut buf: [(usize, T); 4] = [(0, T::zero()); 4];
    let mut n = 0;
    for (i, a) in pairs {
        buf[n] = (i, a);
        n += 1;
        if n == 4 {
            axpy4(y, [buf[0].1, buf[1].1, buf[2].1, buf[3].1], [row(buf[0].0), row(buf[1].0), row(buf[2].0), row(buf[3].0)]);
            n = 0;
        }
    }
    for &(i, a) in &buf[..n] {
        axpy(y, a, row(i));
    }
}

/// `out[b] += a · row(i)` for every `(i, b, a)`, where `out` holds rows of
/// width `w`.
#[inline]
pub(crate) fn scatter_rows<'a, T: Real + 'a>(out: &mut [T], w: usize, entries: &[(u32, u32, T)], row: impl Fn(usize) -> &'a [T]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        unsafe { scatter_rows_avx2(out, w, entries, row) };
        return;
    }
    scatter_rows_portable(out, w, entries, row)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn scatter_rows_avx2<'a, T: Real + 'a>(out: &mut [T], w: usize, entries: &[(u32, u32, T)], row: impl Fn(usize) -> &'a [T]) {
    scatter_rows_portable(out, w, entries, row)
}

#[inline(always)]
fn scatter_rows_portable<'a, T: Real + 'a>(out: &mut [T], w: usize, entries: &[(u32, u32, T)], row: impl Fn(usize) -> &'a [T]) {
    for &(i, b, a) in entries {
        let b = b as usize;
        axpy(&mut out[b * w..(b + 1) * w], a, row(i as usize));
    }
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Numerically stable softmax written into `out`.
pub fn softmax_into<T: Real>(logits: &[T], out: &mut Vec<T>) {
    out.clear();
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    out.extend(logits.iter().map(|&z| (z - max).exp()));
    let total: T = out.iter().copied().sum();
    for p in out.iter_mut() {
        *p /= total;
    }
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    softmax_into(logits, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_product() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|v| v as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|v| (v % 7) as f64 - 3.0).collect();
        let mut c = vec![1.0; m * n];
        f64::gemm(m, k, n, &a, &b, &mut c);
        for i in 0..m {
            for j in 0..n {
                let want = 1.0 + (0..k).map(|t| a[i * k + t] * b[t * n + j]).sum::<f64>();
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
        let (a32, b32): (Vec<f32>, Vec<f32>) = (a.iter().map(|&v| v as f32).collect(), b.iter().map(|&v| v as f32).collect());
        let mut c32 = vec![0.0f32; m * n];
        f32::gemm(m, k, n, &a32, &b32, &mut c32);
        assert!(c32.iter().zip(&c).all(|(x, y)| (*x as f64 - (y - 1.0)).abs() < 1e-4));
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = softmax(&[0.0f64; 9]);
        for v in p {
            assert!((v - 1.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_survives_large_logits() {
        let p = softmax(&[1000.0f32, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-6);
        assert!(p[1] >= 0.0);
    }
}
