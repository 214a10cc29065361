//! Reference computations that materialize the full posterior arrays the
//! library avoids. Slow and only meant for tiny instances.

#![allow(dead_code)]

use dirsep::{Spectrogram, DirectionField, SparseDirectionalObservation, DenseDirectionalObservation, NtfModel, NmfModel};
use ndarray::{Array, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_spectrogram(r: &mut ChaCha8Rng, f: usize, t: usize) -> Spectrogram {
    Spectrogram::from_magnitudes(Array2::from_shape_simple_fn((f, t), || r.random_range(0.0..1.0))).unwrap()
}

/// Random sparse observation in which every direction bin is used at least
/// once, so densifying it keeps all `d` bins.
pub fn random_covering_sparse(r: &mut ChaCha8Rng, f: usize, t: usize, d: usize) -> SparseDirectionalObservation {
    assert!(f * t >= d);
    let p = random_spectrogram(r, f, t);
    let mut idx: Vec<usize> = (0..f * t).map(|i| if i < d { i } else { r.random_range(0..d) }).collect();
    // Shuffle so the covering entries land anywhere.
    for i in (1..idx.len()).rev() {
        let j = r.random_range(0..=i);
        idx.swap(i, j);
    }
    let dirs = DirectionField::new(Array2::from_shape_vec((f, t), idx).unwrap(), d).unwrap();
    SparseDirectionalObservation::new(p, dirs).unwrap()
}

pub fn random_dense(r: &mut ChaCha8Rng, f: usize, t: usize, d: usize) -> DenseDirectionalObservation {
    let mut p = Array3::from_shape_simple_fn((f, t, d), || r.random_range(0.01..1.0));
    let total = p.sum();
    p /= total;
    DenseDirectionalObservation::new(p).unwrap()
}

/// One NMF step through `r(f,t,z) = p(f,t) q(f|z) q(t,z) / q(f,t)`.
pub fn nmf_brute_force(p: &Array2<f64>, m: &NmfModel) -> (Array2<f64>, Array2<f64>) {
    let (nf, nt, nz) = m.dims();
    let (w, h) = (m.dict(), m.act());
    let mut r = Array3::<f64>::zeros((nf, nt, nz));
    for ((f, t, z), v) in r.indexed_iter_mut() {
        let q: f64 = (0..nz).map(|k| w[[f, k]] * h[[t, k]]).sum();
        *v = p[[f, t]] * w[[f, z]] * h[[t, z]] / q;
    }
    let mut dict = r.sum_axis(Axis(1));
    for mut col in dict.columns_mut() {
        let s = col.sum();
        col /= s;
    }
    let mut act = r.sum_axis(Axis(0));
    let s = act.sum();
    act /= s;
    (dict, act)
}

/// One directional NTF step through the five-way posterior
/// `r(f,t,d,s,z) = p(f,t,d) q(d,s) q(f|z,s) q(t,z|s) / q(f,t,d)`.
/// Returns `(dir, dict, act)` in the library's index order.
pub fn ntf_brute_force(p: &Array3<f64>, m: &NtfModel) -> (Array2<f64>, Array3<f64>, Array3<f64>) {
    let d = m.dims();
    let (dir0, dict0, act0) = (m.dir(), m.dict(), m.act());
    let mut q = Array3::<f64>::zeros((d.f, d.t, d.d));
    for ((f, t, k), v) in q.indexed_iter_mut() {
        for s in 0..d.s {
            for z in 0..d.z {
                *v += dir0[[k, s]] * dict0[[s, f, z]] * act0[[s, t, z]];
            }
        }
    }
    let mut r = Array::<f64, _>::zeros((d.f, d.t, d.d, d.s, d.z));
    for ((f, t, k, s, z), v) in r.indexed_iter_mut() {
        *v = p[[f, t, k]] * dir0[[k, s]] * dict0[[s, f, z]] * act0[[s, t, z]] / q[[f, t, k]];
    }
    let mut dir = Array2::<f64>::zeros((d.d, d.s));
    let mut dict = Array3::<f64>::zeros((d.s, d.f, d.z));
    let mut act = Array3::<f64>::zeros((d.s, d.t, d.z));
    for ((f, t, k, s, z), &v) in r.indexed_iter() {
        dir[[k, s]] += v;
        dict[[s, f, z]] += v;
        act[[s, t, z]] += v;
    }
    let total = dir.sum();
    dir /= total;
    for s in 0..d.s {
        for z in 0..d.z {
            let c: f64 = (0..d.f).map(|f| dict[[s, f, z]]).sum();
            for f in 0..d.f {
                dict[[s, f, z]] /= c;
            }
        }
        let a = act.index_axis(Axis(0), s).sum();
        act.index_axis_mut(Axis(0), s).mapv_inplace(|v| v / a);
    }
    (dir, dict, act)
}

pub fn max_abs_diff<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn max_rel_diff<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

/// Explicit least-squares projection of `x` onto the span of the given
/// references and their delays `0..l`, via the normal equations.
pub fn project_explicit(refs: &[&[f64]], x: &[f64], l: usize) -> Vec<f64> {
    let n = refs[0].len();
    let len = n + l - 1;
    let cols = refs.len() * l;
    let mut a = nalgebra::DMatrix::<f64>::zeros(len, cols);
    for (j, r) in refs.iter().enumerate() {
        for b in 0..l {
            for i in 0..n {
                a[(i + b, j * l + b)] = r[i];
            }
        }
    }
    let mut y = nalgebra::DVector::<f64>::zeros(len);
    for (i, &v) in x.iter().enumerate() {
        y[i] = v;
    }
    let at = a.transpose();
    let coef = (&at * &a).lu().solve(&(&at * &y)).expect("full-rank normal equations");
    (&a * coef).iter().copied().collect()
}
