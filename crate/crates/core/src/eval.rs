//! BSS_EVAL source-to-distortion, -interference and -artifact ratios.
//!
//! An estimate is split into `s_target`, its projection onto delayed copies
//! (delays `0..L`) of the matching reference, `e_interf`, the additional
//! part explained by delayed copies of all references, and `e_artif`, the
//! remainder. Projections are computed on the zero-padded support of length
//! `N + L - 1` through Gram matrices of reference cross-correlations.

use std::sync::Arc;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::AudioClip;

/// Largest magnitude reported for any ratio, in dB.
pub const DB_CAP: f64 = 300.0;

/// Energy ratios beyond this (240 dB) are below rounding noise and reported
/// at the cap.
const EXACT_RATIO: f64 = 1e24;

pub const DEFAULT_FILTER_LENGTH: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceScores {
    pub reference: usize,
    pub estimate: usize,
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalScores {
    /// One record per reference, in reference order.
    pub sources: Vec<SourceScores>,
    /// `permutation[j]` is the estimate matched to reference `j`.
    pub permutation: Vec<usize>,
    pub filter_length: usize,
    pub sdr: MetricSummary,
    pub sir: MetricSummary,
    pub sar: MetricSummary,
}

fn summary(values: impl Iterator<Item = f64> + Clone) -> MetricSummary {
    let n = values.clone().count() as f64;
    MetricSummary { mean: values.clone().sum::<f64>() / n, min: values.fold(f64::INFINITY, f64::min) }
}

/// Orthogonal decomposition of one estimate against one reference.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub s_target: Vec<f64>,
    pub e_interf: Vec<f64>,
    pub e_artif: Vec<f64>,
}

impl Decomposition {
    pub fn ratios(&self) -> (f64, f64, f64) {
        let target = energy(&self.s_target);
        let interf = energy(&self.e_interf);
        let artif = energy(&self.e_artif);
        let distortion: f64 = self.e_interf.iter().zip(&self.e_artif).map(|(a, b)| (a + b) * (a + b)).sum();
        let signal: f64 = self.s_target.iter().zip(&self.e_interf).map(|(a, b)| (a + b) * (a + b)).sum();
        (to_db(target, distortion), to_db(target, interf), to_db(signal, artif))
    }
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn to_db(num: f64, den: f64) -> f64 {
    if num <= 0.0 {
        return -DB_CAP;
    }
    if den <= num / EXACT_RATIO {
        return DB_CAP;
    }
    (10.0 * (num / den).log10()).clamp(-DB_CAP, DB_CAP)
}

struct Spectra {
    nfft: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Spectra {
    fn new(nfft: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { nfft, forward: planner.plan_fft_forward(nfft), inverse: planner.plan_fft_inverse(nfft) }
    }

    fn forward(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.nfft];
        for (b, &v) in buf.iter_mut().zip(x) {
            b.re = v;
        }
        self.forward.process(&mut buf);
        buf
    }

    fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.inverse.process(&mut spec);
        let scale = 1.0 / self.nfft as f64;
        spec.into_iter().map(|c| c.re * scale).collect()
    }

    /// `c(k) = sum_m a[m] b[m + k]`, indexed modulo `nfft`.
    fn xcorr(&self, a: &[Complex64], b: &[Complex64]) -> Vec<f64> {
        self.inverse(a.iter().zip(b).map(|(x, y)| x.conj() * y).collect())
    }
}

/// Precomputed reference correlations for one set of references.
struct Projector {
    refs_hat: Vec<Vec<Complex64>>,
    spectra: Spectra,
    len: usize,
    filter_length: usize,
    full: GramSolver,
    own: Vec<GramSolver>,
}

struct GramSolver {
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    fallback: DMatrix<f64>,
}

impl GramSolver {
    /// Factors a symmetric positive semidefinite Gram matrix, adding
    /// `1e-10 * trace / n` to the diagonal when it is numerically singular.
    fn new(g: DMatrix<f64>) -> Self {
        if let Some(chol) = g.clone().cholesky().filter(well_conditioned) {
            return Self { chol: Some(chol), fallback: g };
        }
        let n = g.nrows();
        let jitter = 1e-10 * g.trace() / n as f64;
        let mut reg = g.clone();
        for i in 0..n {
            reg[(i, i)] += jitter;
        }
        Self { chol: reg.clone().cholesky(), fallback: reg }
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match &self.chol {
            Some(c) => c.solve(rhs),
            None => self
                .fallback
                .clone()
                .svd(true, true)
                .solve(rhs, 1e-12)
                .unwrap_or_else(|_| DVector::zeros(rhs.len())),
        }
    }
}

fn well_conditioned(c: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> bool {
    let d = c.l_dirty().diagonal();
    let max = d.max();
    let min = d.min();
    max > 0.0 && min > 1e-7 * max
}

impl Projector {
    fn new(references: &[Vec<f64>], filter_length: usize) -> Self {
        let len = references[0].len();
        let nfft = (len + filter_length - 1).next_power_of_two();
        let spectra = Spectra::new(nfft);
        let refs_hat: Vec<Vec<Complex64>> = references.iter().map(|r| spectra.forward(r)).collect();
        let ns = references.len();
        let l = filter_length;

        // G[(i,a),(j,b)] = sum_n r_i[n-a] r_j[n-b] = c_ij(a - b).
        let mut g = DMatrix::zeros(ns * l, ns * l);
        for i in 0..ns {
            for j in i..ns {
                let c = spectra.xcorr(&refs_hat[i], &refs_hat[j]);
                for a in 0..l {
                    for b in 0..l {
                        let lag = (a as isize - b as isize).rem_euclid(nfft as isize) as usize;
                        g[(i * l + a, j * l + b)] = c[lag];
                        g[(j * l + b, i * l + a)] = c[lag];
                    }
                }
            }
        }
        let own = (0..ns).map(|j| GramSolver::new(g.view((j * l, j * l), (l, l)).into_owned())).collect();
        Self { refs_hat, spectra, len, filter_length, full: GramSolver::new(g), own }
    }

    /// `D[(j,b)] = sum_n est[n] r_j[n-b]` for the given references.
    fn correlations(&self, est_hat: &[Complex64], which: &[usize]) -> DVector<f64> {
        let l = self.filter_length;
        let mut d = DVector::zeros(which.len() * l);
        for (k, &j) in which.iter().enumerate() {
            let c = self.spectra.xcorr(&self.refs_hat[j], est_hat);
            for b in 0..l {
                d[k * l + b] = c[b];
            }
        }
        d
    }

    /// `sum_{j,b} coef[(j,b)] r_j[n-b]` over the padded support.
    fn synthesize(&self, coef: &DVector<f64>, which: &[usize]) -> Vec<f64> {
        let l = self.filter_length;
        let mut acc = vec![Complex64::new(0.0, 0.0); self.spectra.nfft];
        for (k, &j) in which.iter().enumerate() {
            let filt = self.spectra.forward(&coef.as_slice()[k * l..(k + 1) * l]);
            for ((a, f), r) in acc.iter_mut().zip(&filt).zip(&self.refs_hat[j]) {
                *a += f * r;
            }
        }
        let mut out = self.spectra.inverse(acc);
        out.truncate(self.len + l - 1);
        out
    }

    fn decompose(&self, estimate: &[f64], target: usize) -> Decomposition {
        let all: Vec<usize> = (0..self.refs_hat.len()).collect();
        let est_hat = self.spectra.forward(estimate);
        let coef_t = self.own[target].solve(&self.correlations(&est_hat, &[target]));
        let s_target = self.synthesize(&coef_t, &[target]);
        let coef_all = self.full.solve(&self.correlations(&est_hat, &all));
        let p_all = self.synthesize(&coef_all, &all);
        let padded = estimate.iter().copied().chain(std::iter::repeat(0.0));
        let e_interf = p_all.iter().zip(&s_target).map(|(p, s)| p - s).collect();
        let e_artif = padded.zip(&p_all).map(|(e, p)| e - p).collect();
        Decomposition { s_target, e_interf, e_artif }
    }
}

fn validate(references: &[Vec<f64>], estimates: &[Vec<f64>], filter_length: usize) -> Result<()> {
    if references.is_empty() {
        return Err(Error::InvalidArgument("need at least one reference".into()));
    }
    if references.len() != estimates.len() {
        return Err(Error::InvalidArgument(format!(
            "{} references but {} estimates",
            references.len(),
            estimates.len()
        )));
    }
    if filter_length == 0 {
        return Err(Error::InvalidArgument("filter length must be at least 1".into()));
    }
    let n = references[0].len();
    if n == 0 || references.iter().chain(estimates).any(|x| x.len() != n) {
        return Err(Error::LengthMismatch("all references and estimates must share one non-zero length".into()));
    }
    if let Some(j) = references.iter().position(|r| r.iter().all(|&v| v == 0.0)) {
        return Err(Error::DegenerateReference(j));
    }
    Ok(())
}

/// Decomposes `estimate` against reference `target` with an `L`-tap
/// distortion filter.
pub fn decompose(references: &[Vec<f64>], estimate: &[f64], target: usize, filter_length: usize) -> Result<Decomposition> {
    validate(references, &vec![estimate.to_vec(); references.len()], filter_length)?;
    if target >= references.len() {
        return Err(Error::InvalidArgument(format!("no reference {target}")));
    }
    Ok(Projector::new(references, filter_length).decompose(estimate, target))
}

/// Scores every estimate against every reference and keeps the assignment
/// with the highest mean SIR (lexicographically first on ties).
pub fn bss_eval(references: &[Vec<f64>], estimates: &[Vec<f64>], filter_length: usize) -> Result<EvalScores> {
    validate(references, estimates, filter_length)?;
    let ns = references.len();
    let projector = Projector::new(references, filter_length);
    // pair[i][j]: estimate i against reference j.
    let pair: Vec<Vec<(f64, f64, f64)>> = estimates
        .iter()
        .map(|e| (0..ns).map(|j| projector.decompose(e, j).ratios()).collect())
        .collect();

    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in (0..ns).permutations(ns) {
        // perm[j] is the estimate assigned to reference j.
        let mean_sir = perm.iter().enumerate().map(|(j, &i)| pair[i][j].1).sum::<f64>() / ns as f64;
        if best.as_ref().is_none_or(|(b, _)| mean_sir > *b) {
            best = Some((mean_sir, perm));
        }
    }
    let permutation = best.expect("at least one permutation").1;
    let sources: Vec<SourceScores> = permutation
        .iter()
        .enumerate()
        .map(|(j, &i)| {
            let (sdr, sir, sar) = pair[i][j];
            SourceScores { reference: j, estimate: i, sdr, sir, sar }
        })
        .collect();
    Ok(EvalScores {
        sdr: summary(sources.iter().map(|s| s.sdr)),
        sir: summary(sources.iter().map(|s| s.sir)),
        sar: summary(sources.iter().map(|s| s.sar)),
        sources,
        permutation,
        filter_length,
    })
}

/// [`bss_eval`] on the first channel of each clip.
pub fn bss_eval_clips(references: &[AudioClip], estimates: &[AudioClip], filter_length: usize) -> Result<EvalScores> {
    let first = |c: &[AudioClip]| c.iter().map(|x| x.channel(0).to_vec()).collect::<Vec<_>>();
    bss_eval(&first(references), &first(estimates), filter_length)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn perfect_estimates_hit_the_cap() {
        let refs = vec![noise(2000, 1), noise(2000, 2)];
        let s = bss_eval(&refs, &refs, 16).unwrap();
        assert_eq!(s.permutation, vec![0, 1]);
        for src in &s.sources {
            assert_eq!((src.sdr, src.sir, src.sar), (DB_CAP, DB_CAP, DB_CAP));
        }
    }

    #[test]
    fn scalar_interference_gives_twenty_db() {
        let refs = vec![noise(20000, 3), noise(20000, 4)];
        let est0: Vec<f64> = refs[0].iter().zip(&refs[1]).map(|(a, b)| a + 0.1 * b).collect();
        let est1: Vec<f64> = refs[1].iter().zip(&refs[0]).map(|(a, b)| a + 0.1 * b).collect();
        let s = bss_eval(&refs, &[est0, est1], 1).unwrap();
        assert!((s.sources[0].sir - 20.0).abs() < 0.5, "{}", s.sources[0].sir);
    }

    #[test]
    fn swapped_estimates_swap_the_permutation() {
        let refs = vec![noise(3000, 5), noise(3000, 6)];
        let ests: Vec<Vec<f64>> = refs
            .iter()
            .enumerate()
            .map(|(k, r)| r.iter().zip(noise(3000, 10 + k as u64)).map(|(a, n)| a + 0.05 * n).collect())
            .collect();
        let a = bss_eval(&refs, &ests, 8).unwrap();
        let swapped = vec![ests[1].clone(), ests[0].clone()];
        let b = bss_eval(&refs, &swapped, 8).unwrap();
        assert_eq!(a.permutation, vec![0, 1]);
        assert_eq!(b.permutation, vec![1, 0]);
        for (x, y) in a.sources.iter().zip(&b.sources) {
            assert!((x.sdr - y.sdr).abs() < 1e-9 && (x.sir - y.sir).abs() < 1e-9);
        }
    }

    #[test]
    fn errors() {
        let refs = vec![noise(100, 1), vec![0.0; 100]];
        assert!(matches!(bss_eval(&refs, &refs, 4), Err(Error::DegenerateReference(1))));
        let refs = vec![noise(100, 1), noise(100, 2)];
        let short = vec![noise(100, 1), noise(90, 2)];
        assert!(matches!(bss_eval(&refs, &short, 4), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn residual_is_orthogonal_to_delayed_references() {
        let refs = vec![noise(500, 7), noise(500, 8)];
        let est: Vec<f64> = noise(500, 9).iter().zip(&refs[0]).map(|(n, r)| 0.3 * n + r).collect();
        let l = 6;
        let dec = decompose(&refs, &est, 0, l).unwrap();
        let norm_a = energy(&dec.e_artif).sqrt();
        for r in &refs {
            for delay in 0..l {
                let dot: f64 = (0..dec.e_artif.len())
                    .filter(|&n| n >= delay && n - delay < r.len())
                    .map(|n| dec.e_artif[n] * r[n - delay])
                    .sum();
                assert!(dot.abs() <= 1e-6 * norm_a * energy(r).sqrt());
            }
        }
    }
}
