//! Probabilistic NMF with KL-divergence multiplicative updates, and
//! supervised NMF with per-source dictionaries held fixed.
//!
//! A spectrogram `p(f,t)` is approximated by `q(f,t) = sum_z q(f|z) q(t,z)`.
//! One update computes the ratio `rho = p / q` once and reuses it for both
//! factors, so no `F x T x Z` array is ever allocated.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{check_simplex, condition_columns, dims_positive, kl_terms, mul, mul_transposed, normalize_total, ratio, uniform_positive};
use crate::separation::SeparationMask;
use crate::spectral::Spectrogram;
use crate::{Exec, EPS};

/// Iteration control shared by every fitting routine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub iterations: usize,
    /// Stop early once the relative KL decrease of one step falls below this.
    pub rel_tol: Option<f64>,
    /// Record KL after every step (implied by `rel_tol`).
    pub track_kl: bool,
    pub exec: Exec,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { iterations: 200, rel_tol: None, track_kl: false, exec: Exec::Sequential }
    }
}

impl FitOptions {
    pub fn iterations(iterations: usize) -> Self {
        Self { iterations, ..Self::default() }
    }

    pub fn tracked(mut self) -> Self {
        self.track_kl = true;
        self
    }
}

/// A fitted model and, when requested, the KL divergence before the first
/// step and after each step.
#[derive(Debug, Clone)]
pub struct Fit<M> {
    pub model: M,
    pub kl_trace: Vec<f64>,
    pub iterations: usize,
}

pub(crate) fn run_fit<M>(
    init: M,
    opts: &FitOptions,
    kl: impl Fn(&M) -> f64,
    step: impl Fn(&M) -> Result<M>,
) -> Result<Fit<M>> {
    if opts.iterations == 0 {
        return Err(Error::InvalidArgument("iteration count must be at least 1".into()));
    }
    let track = opts.track_kl || opts.rel_tol.is_some();
    let mut model = init;
    let mut trace = Vec::new();
    if track {
        trace.push(kl(&model));
    }
    let mut done = 0;
    for _ in 0..opts.iterations {
        model = step(&model)?;
        done += 1;
        if track {
            let cur = kl(&model);
            let prev = *trace.last().expect("trace starts non-empty");
            trace.push(cur);
            if let Some(tol) = opts.rel_tol {
                if (prev - cur) <= tol * prev.abs().max(f64::MIN_POSITIVE) {
                    break;
                }
            }
        }
    }
    Ok(Fit { model, kl_trace: trace, iterations: done })
}

/// KL divergence `sum p log(p/q)` in nats. Infinite when `q` vanishes where
/// `p` does not.
pub fn kl_divergence(p: &Spectrogram, q: ArrayView2<'_, f64>) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::ShapeMismatch(format!("p is {:?}, q is {:?}", p.dim(), q.dim())));
    }
    Ok(kl_terms(p.p().iter().zip(q.iter().copied())))
}

/// `q(f|z)` as an `F x Z` matrix and `q(t,z)` as a `T x Z` joint.
#[derive(Debug, Clone, PartialEq)]
pub struct NmfModel {
    dict: Array2<f64>,
    act: Array2<f64>,
    pub seed: u64,
    pub iterations: usize,
}

#[derive(Serialize, Deserialize)]
struct NmfJson {
    f: usize,
    t: usize,
    z: usize,
    seed: u64,
    iterations: usize,
    dict: Vec<f64>,
    act: Vec<f64>,
}

impl NmfModel {
    pub fn new(dict: Array2<f64>, act: Array2<f64>) -> Result<Self> {
        if dict.ncols() != act.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "dictionary has {} atoms, activations {}",
                dict.ncols(),
                act.ncols()
            )));
        }
        dims_positive(&[("F", dict.nrows()), ("T", act.nrows()), ("Z", dict.ncols())])?;
        for (z, col) in dict.columns().into_iter().enumerate() {
            check_simplex(col.iter().copied(), &format!("dictionary column {z}"))?;
        }
        check_simplex(act.iter().copied(), "activations")?;
        Ok(Self { dict, act, seed: 0, iterations: 0 })
    }

    pub fn dict(&self) -> &Array2<f64> {
        &self.dict
    }

    pub fn act(&self) -> &Array2<f64> {
        &self.act
    }

    pub fn into_dict(self) -> Array2<f64> {
        self.dict
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.dict.nrows(), self.act.nrows(), self.dict.ncols())
    }

    /// `q(z) = sum_t q(t,z)`.
    pub fn atom_weights(&self) -> Vec<f64> {
        self.act.sum_axis(Axis(0)).to_vec()
    }

    /// Model marginal `q(f,t)`.
    pub fn marginal(&self) -> Array2<f64> {
        mul_transposed(self.dict.view(), self.act.view())
    }

    pub fn to_json(&self) -> Result<String> {
        let (f, t, z) = self.dims();
        Ok(serde_json::to_string(&NmfJson {
            f,
            t,
            z,
            seed: self.seed,
            iterations: self.iterations,
            dict: self.dict.iter().copied().collect(),
            act: self.act.iter().copied().collect(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: NmfJson = serde_json::from_str(s)?;
        let shape_err = |e: ndarray::ShapeError| Error::ShapeMismatch(e.to_string());
        let dict = Array2::from_shape_vec((j.f, j.z), j.dict).map_err(shape_err)?;
        let act = Array2::from_shape_vec((j.t, j.z), j.act).map_err(shape_err)?;
        let mut m = Self::new(dict, act)?;
        m.seed = j.seed;
        m.iterations = j.iterations;
        Ok(m)
    }
}

/// Random strictly positive model, deterministic in `seed`.
pub fn nmf_init(f: usize, t: usize, z: usize, seed: u64) -> Result<NmfModel> {
    dims_positive(&[("F", f), ("T", t), ("Z", z)])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dict = uniform_positive(&mut rng, (f, z));
    let mut act = uniform_positive(&mut rng, (t, z));
    condition_columns(dict.view_mut());
    normalize_total(act.view_mut());
    Ok(NmfModel { dict, act, seed, iterations: 0 })
}

/// One multiplicative update:
/// `q1(t,z) = q0(t,z) sum_f rho(f,t) q0(f|z)` and
/// `q1(f,z) = q0(f|z) sum_t rho(f,t) q0(t,z)`, conditioned over `f`.
pub fn nmf_update(p: &Spectrogram, m0: &NmfModel) -> Result<NmfModel> {
    let (f, t, _) = m0.dims();
    if p.dim() != (f, t) {
        return Err(Error::ShapeMismatch(format!("spectrogram is {:?}, model is {:?}", p.dim(), (f, t))));
    }
    let q = m0.marginal();
    let rho = ratio(p.view(), q.view());
    let mut act = &m0.act * &mul(rho.t(), m0.dict.view());
    let mut dict = &m0.dict * &mul(rho.view(), m0.act.view());
    drop(rho);
    normalize_total(act.view_mut());
    condition_columns(dict.view_mut());
    Ok(NmfModel { dict, act, seed: m0.seed, iterations: m0.iterations + 1 })
}

pub fn nmf_fit(p: &Spectrogram, z: usize, seed: u64, opts: &FitOptions) -> Result<Fit<NmfModel>> {
    let (f, t) = p.dim();
    let init = nmf_init(f, t, z, seed)?;
    run_fit(
        init,
        opts,
        |m| kl_divergence(p, m.marginal().view()).unwrap_or(f64::INFINITY),
        |m| nmf_update(p, m),
    )
}

/// Learns a dictionary `q(f|z)` from clean training material; the
/// activations are discarded.
pub fn nmf_fit_dictionary(p_train: &Spectrogram, z: usize, iters: usize, seed: u64) -> Result<Array2<f64>> {
    Ok(nmf_fit(p_train, z, seed, &FitOptions::iterations(iters))?.model.into_dict())
}

/// Mixture model `q(f,t) = sum_s q(s) sum_z q(f|z,s) q(t,z|s)` with the
/// dictionaries fixed from training.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedModel {
    dicts: Vec<Array2<f64>>,
    act: Vec<Array2<f64>>,
    weights: Vec<f64>,
    pub seed: u64,
    pub iterations: usize,
}

impl SupervisedModel {
    pub fn num_sources(&self) -> usize {
        self.dicts.len()
    }

    pub fn dicts(&self) -> &[Array2<f64>] {
        &self.dicts
    }

    /// Per-source `q(t,z|s)`.
    pub fn activations(&self) -> &[Array2<f64>] {
        &self.act
    }

    /// `q(s)`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn source_marginals(&self) -> Vec<Array2<f64>> {
        self.dicts.iter().zip(&self.act).map(|(w, h)| mul_transposed(w.view(), h.view())).collect()
    }

    pub fn marginal(&self) -> Array2<f64> {
        let per_source = self.source_marginals();
        let mut q = Array2::zeros(per_source[0].dim());
        for (qs, &w) in per_source.iter().zip(&self.weights) {
            q.scaled_add(w, qs);
        }
        q
    }

    /// Posterior `q(s|f,t)`.
    pub fn mask(&self) -> SeparationMask {
        let weighted: Vec<Array2<f64>> = self
            .source_marginals()
            .into_iter()
            .zip(&self.weights)
            .map(|(q, &w)| q * w)
            .collect();
        SeparationMask::from_unnormalized(&weighted)
    }
}

fn supervised_init(f: usize, t: usize, dicts: &[Array2<f64>], seed: u64) -> Result<SupervisedModel> {
    if dicts.is_empty() {
        return Err(Error::InvalidArgument("need at least one source dictionary".into()));
    }
    for (s, d) in dicts.iter().enumerate() {
        if d.nrows() != f {
            return Err(Error::ShapeMismatch(format!(
                "dictionary {s} has {} frequency bins, mixture has {f}",
                d.nrows()
            )));
        }
        dims_positive(&[("Z", d.ncols())])?;
        for col in d.columns() {
            check_simplex(col.iter().copied(), &format!("dictionary {s} column"))?;
        }
    }
    dims_positive(&[("T", t)])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let act = dicts
        .iter()
        .map(|d| {
            let mut h = uniform_positive(&mut rng, (t, d.ncols()));
            normalize_total(h.view_mut());
            h
        })
        .collect();
    let s = dicts.len();
    Ok(SupervisedModel {
        dicts: dicts.to_vec(),
        act,
        weights: vec![1.0 / s as f64; s],
        seed,
        iterations: 0,
    })
}

/// One update of activations and source weights; dictionaries stay fixed.
pub fn supervised_update(p: &Spectrogram, m0: &SupervisedModel) -> Result<SupervisedModel> {
    let q = m0.marginal();
    if p.dim() != q.dim() {
        return Err(Error::ShapeMismatch(format!("spectrogram is {:?}, model is {:?}", p.dim(), q.dim())));
    }
    let rho = ratio(p.view(), q.view());
    let mut joint: Vec<Array2<f64>> = m0
        .dicts
        .iter()
        .zip(&m0.act)
        .zip(&m0.weights)
        .map(|((w, h), &qs)| {
            let mut j = mul(rho.t(), w.view());
            Zip::from(&mut j).and(h).for_each(|j, &h| *j = (*j * h * qs).max(EPS));
            j
        })
        .collect();
    let mass: Vec<f64> = joint.iter().map(|j| j.sum()).collect();
    let total: f64 = mass.iter().sum();
    for (j, &m) in joint.iter_mut().zip(&mass) {
        j.mapv_inplace(|v| v / m);
    }
    Ok(SupervisedModel {
        dicts: m0.dicts.clone(),
        act: joint,
        weights: mass.iter().map(|m| m / total).collect(),
        seed: m0.seed,
        iterations: m0.iterations + 1,
    })
}

pub fn supervised_nmf_fit_with(
    p_mix: &Spectrogram,
    dicts: &[Array2<f64>],
    seed: u64,
    opts: &FitOptions,
) -> Result<Fit<SupervisedModel>> {
    let (f, t) = p_mix.dim();
    let init = supervised_init(f, t, dicts, seed)?;
    run_fit(
        init,
        opts,
        |m| kl_divergence(p_mix, m.marginal().view()).unwrap_or(f64::INFINITY),
        |m| supervised_update(p_mix, m),
    )
}

/// Fits activations against fixed per-source dictionaries and returns the
/// model together with its soft mask `q(s|f,t)`.
pub fn supervised_nmf_fit(
    p_mix: &Spectrogram,
    dicts: &[Array2<f64>],
    iters: usize,
    seed: u64,
) -> Result<(SupervisedModel, SeparationMask)> {
    let fit = supervised_nmf_fit_with(p_mix, dicts, seed, &FitOptions::iterations(iters))?;
    let mask = fit.model.mask();
    Ok((fit.model, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::Rng;

    fn random_spectrogram(f: usize, t: usize, seed: u64) -> Spectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Spectrogram::from_magnitudes(Array2::from_shape_simple_fn((f, t), || rng.random_range(0.0..1.0))).unwrap()
    }

    /// Builds `r(f,t,z) = p(f,t) q0(z|f,t)` explicitly and marginalizes it.
    fn brute_force_update(p: &Spectrogram, m0: &NmfModel) -> (Array2<f64>, Array2<f64>) {
        let (f, t, z) = m0.dims();
        let mut r = Array3::<f64>::zeros((f, t, z));
        for i in 0..f {
            for j in 0..t {
                let joint: Vec<f64> = (0..z).map(|k| m0.dict()[[i, k]] * m0.act()[[j, k]]).collect();
                let total: f64 = joint.iter().sum();
                for k in 0..z {
                    r[[i, j, k]] = p.p()[[i, j]] * joint[k] / total;
                }
            }
        }
        let act = r.sum_axis(Axis(0));
        let mut dict = r.sum_axis(Axis(1));
        for k in 0..z {
            let s: f64 = dict.column(k).sum();
            dict.column_mut(k).mapv_inplace(|v| v / s);
        }
        let s = act.sum();
        (dict, act / s)
    }

    #[test]
    fn init_is_deterministic_and_normalized() {
        assert_eq!(nmf_init(5, 7, 3, 42).unwrap(), nmf_init(5, 7, 3, 42).unwrap());
        assert_ne!(nmf_init(5, 7, 3, 42).unwrap(), nmf_init(5, 7, 3, 43).unwrap());
        let m = nmf_init(4, 6, 1, 0).unwrap();
        assert!((m.dict().sum() - 1.0).abs() < 1e-12);
        assert!((m.act().sum() - 1.0).abs() < 1e-12);
        for seed in 0..100 {
            let m = nmf_init(6, 5, 3, seed).unwrap();
            assert!(m.dict().iter().chain(m.act().iter()).all(|&v| v > 0.0));
        }
        assert!(matches!(nmf_init(0, 3, 3, 0), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn kl_examples() {
        let p = Spectrogram::from_magnitudes(Array2::from_shape_vec((2, 1), vec![1.0, 1.0]).unwrap()).unwrap();
        let q = Array2::from_shape_vec((2, 1), vec![0.25, 0.75]).unwrap();
        let expect = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kl_divergence(&p, q.view()).unwrap() - expect).abs() < 1e-15);
        assert!((expect - 0.1438).abs() < 1e-4);
        assert_eq!(kl_divergence(&p, p.view()).unwrap(), 0.0);
        let zero = Array2::from_shape_vec((2, 1), vec![0.0, 1.0]).unwrap();
        assert_eq!(kl_divergence(&p, zero.view()).unwrap(), f64::INFINITY);
    }

    #[test]
    fn update_matches_brute_force() {
        let p = random_spectrogram(3, 4, 9);
        let m0 = nmf_init(3, 4, 2, 5).unwrap();
        let m1 = nmf_update(&p, &m0).unwrap();
        let (dict, act) = brute_force_update(&p, &m0);
        assert!((m1.dict() - &dict).iter().all(|e| e.abs() < 1e-12));
        assert!((m1.act() - &act).iter().all(|e| e.abs() < 1e-12));
    }

    #[test]
    fn model_marginal_is_a_fixed_point() {
        let m0 = nmf_init(6, 5, 3, 1).unwrap();
        let p = Spectrogram::from_magnitudes(m0.marginal()).unwrap();
        let m1 = nmf_update(&p, &m0).unwrap();
        assert!((m1.dict() - m0.dict()).iter().all(|e| e.abs() < 1e-12));
        assert!((m1.act() - m0.act()).iter().all(|e| e.abs() < 1e-12));
    }

    #[test]
    fn rank_one_profile_is_recovered() {
        let spectral = [0.1, 0.4, 0.2, 0.3];
        let temporal = [1.0, 3.0, 0.5, 2.0, 2.5];
        let p = Spectrogram::from_magnitudes(Array2::from_shape_fn((4, 5), |(f, t)| spectral[f] * temporal[t])).unwrap();
        let dict = nmf_fit_dictionary(&p, 1, 100, 3).unwrap();
        for f in 0..4 {
            assert!((dict[[f, 0]] - spectral[f]).abs() < 1e-6);
        }
        assert!(nmf_fit_dictionary(&p, 1, 0, 3).is_err());
        assert_eq!(dict, nmf_fit_dictionary(&p, 1, 100, 3).unwrap());
    }

    #[test]
    fn kl_does_not_increase() {
        for seed in 0..5 {
            let p = random_spectrogram(8, 9, 100 + seed);
            let fit = nmf_fit(&p, 3, seed, &FitOptions::iterations(50).tracked()).unwrap();
            for w in fit.kl_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-10, "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn relative_tolerance_stops_early() {
        // A generic target has a positive KL floor, so relative progress dies out.
        let p = random_spectrogram(6, 5, 1);
        let opts = FitOptions { rel_tol: Some(1e-6), ..FitOptions::iterations(200) };
        let fit = nmf_fit(&p, 2, 7, &opts).unwrap();
        assert!(fit.iterations < 200);
        assert_eq!(fit.kl_trace.len(), fit.iterations + 1);
    }

    #[test]
    fn json_round_trip() {
        let mut m = nmf_init(3, 4, 2, 11).unwrap();
        m.iterations = 17;
        let back = NmfModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back.seed, 11);
        assert_eq!(back.iterations, 17);
        assert!((back.dict() - m.dict()).iter().all(|e| e.abs() < 1e-12));
        assert!((back.act() - m.act()).iter().all(|e| e.abs() < 1e-12));
    }

    #[test]
    fn supervised_disjoint_support() {
        // Source 0 lives in bins 0..3, source 1 in bins 3..6.
        let a = [0.5, 0.3, 0.2, 0.0, 0.0, 0.0];
        let b = [0.0, 0.0, 0.0, 0.2, 0.2, 0.6];
        let ga = [1.0, 0.0, 2.0, 1.0, 0.5];
        let gb = [0.3, 1.0, 1.0, 0.0, 2.0];
        let mix = Array2::from_shape_fn((6, 5), |(f, t)| a[f] * ga[t] + b[f] * gb[t]);
        let p = Spectrogram::from_magnitudes(mix).unwrap();
        let da = Array2::from_shape_fn((6, 1), |(f, _)| a[f]);
        let db = Array2::from_shape_fn((6, 1), |(f, _)| b[f]);
        let (_, mask) = supervised_nmf_fit(&p, &[da.clone(), db.clone()], 50, 0).unwrap();
        for f in 0..6 {
            for t in 0..5 {
                let owner = if f < 3 { 0 } else { 1 };
                if (owner == 0 && ga[t] > 0.0) || (owner == 1 && gb[t] > 0.0) {
                    assert!(mask.get(owner, f, t) >= 0.99, "bin ({f},{t})");
                }
            }
        }

        let (_, single) = supervised_nmf_fit(&p, &[da], 10, 0).unwrap();
        assert!(single.values().iter().all(|&v| v == 1.0));

        let short = Array2::from_elem((5, 1), 0.2);
        assert!(matches!(supervised_nmf_fit(&p, &[short, db], 10, 0), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn supervised_kl_does_not_increase() {
        let p = random_spectrogram(10, 12, 77);
        let d0 = nmf_fit_dictionary(&random_spectrogram(10, 8, 1), 3, 20, 0).unwrap();
        let d1 = nmf_fit_dictionary(&random_spectrogram(10, 8, 2), 2, 20, 0).unwrap();
        let fit = supervised_nmf_fit_with(&p, &[d0, d1], 3, &FitOptions::iterations(50).tracked()).unwrap();
        for w in fit.kl_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10);
        }
        let m = &fit.model;
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for h in m.activations() {
            assert!((h.sum() - 1.0).abs() < 1e-9);
        }
    }
}
