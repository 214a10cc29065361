// Shared helpers for the multiplicative updates.

use ndarray::{Array2, ArrayView2, ArrayViewMut2, Zip};
use rand::Rng;
use rayon::prelude::*;

use crate::{Exec, EPS};

/// Runs `f` for each source index, in parallel when allowed. Output order
/// always follows source order.
pub(crate) fn per_source<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Exec::Sequential => (0..n).map(f).collect(),
        Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
    }
}

/// Runs `f` on every source's slot of `items`, in parallel when allowed.
pub(crate) fn for_each_source<T, F>(exec: Exec, items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    match exec {
        Exec::Sequential => items.iter_mut().enumerate().for_each(|(s, t)| f(s, t)),
        Exec::Parallel => items.par_iter_mut().enumerate().for_each(|(s, t)| f(s, t)),
    }
}

pub(crate) fn uniform_positive(rng: &mut impl Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(0.1..1.0))
}

/// Floors every entry at [`EPS`] and rescales columns to sum to 1.
pub(crate) fn condition_columns(mut m: ArrayViewMut2<'_, f64>) {
    m.mapv_inplace(|v| v.max(EPS));
    for mut col in m.columns_mut() {
        let s = col.sum();
        col.mapv_inplace(|v| v / s);
    }
}

/// Floors every entry at [`EPS`] and rescales the whole array to sum to 1.
pub(crate) fn normalize_total(mut m: ArrayViewMut2<'_, f64>) -> f64 {
    m.mapv_inplace(|v| v.max(EPS));
    let s = m.sum();
    m.mapv_inplace(|v| v / s);
    s
}

/// `p / max(q, EPS)`, with zero wherever `p` is zero.
pub(crate) fn ratio(p: ArrayView2<'_, f64>, q: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut rho = Array2::zeros(p.dim());
    Zip::from(&mut rho).and(p).and(q).for_each(|r, &p, &q| {
        *r = if p > 0.0 { p / q.max(EPS) } else { 0.0 };
    });
    rho
}

/// Sum of `p log(p/q)` over entries with `p > 0`; infinite if such an entry
/// has `q = 0`.
pub(crate) fn kl_terms<'a>(pairs: impl Iterator<Item = (&'a f64, f64)>) -> f64 {
    let mut kl = 0.0;
    for (&p, q) in pairs {
        if p > 0.0 {
            if q <= 0.0 {
                return f64::INFINITY;
            }
            kl += p * (p / q).ln();
        }
    }
    kl
}

pub(crate) fn check_simplex(values: impl Iterator<Item = f64>, what: &str) -> crate::Result<()> {
    let mut sum = 0.0;
    for v in values {
        if !v.is_finite() || v < 0.0 {
            return Err(crate::Error::InvalidArgument(format!("{what} has a negative or non-finite entry")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(crate::Error::InvalidArgument(format!("{what} sums to {sum}, expected 1")));
    }
    Ok(())
}

pub(crate) fn dims_positive(dims: &[(&str, usize)]) -> crate::Result<()> {
    for (name, v) in dims {
        if *v == 0 {
            return Err(crate::Error::InvalidDimension(format!("{name} must be at least 1")));
        }
    }
    Ok(())
}

/// Matrix product written into a row-major array. `dot` may pick column-major
/// output, which makes later elementwise passes stride badly.
pub(crate) fn mul(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    ndarray::linalg::general_mat_mul(1.0, &a, &b, 0.0, &mut out);
    out
}

/// `a * b^T`, row-major.
pub(crate) fn mul_transposed(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    mul(a, b.t())
}
