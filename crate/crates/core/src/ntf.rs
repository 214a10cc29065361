//! Directional nonnegative tensor factorization.
//!
//! The observation is a distribution `p(f,t,d)` over frequency, frame and
//! quantized direction. It is modelled as
//!
//! ```text
//! q(f,t,d) = sum_{s,z} q(d,s) q(f|z,s) q(t,z|s)
//! ```
//!
//! Because `q(d|s)` does not depend on `z`, all atoms of a source are tied to
//! one direction distribution, which is what lets the model group atoms into
//! sources without training data.
//!
//! Every update is one minorization-maximization step. The ratio
//! `rho = p / q` is formed once per step and shared by all three factors.
//! When each bin carries a single direction (the sparse form), `rho` is an
//! `F x T` array and a step costs `O(FTZS)` time and `O(FTS + FZS + TZS)`
//! memory, independent of the number of direction bins.

use std::f64::consts::PI;

use ndarray::{s, Array2, Array3, ArrayView2, ArrayViewMut2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::doa::{bin_center, DirectionField};
use crate::error::{Error, Result};
use crate::factors::{
    check_simplex, condition_columns, dims_positive, for_each_source, kl_terms, mul, mul_transposed, normalize_total, per_source,
    uniform_positive,
};
use crate::nmf::{run_fit, Fit, FitOptions};
use crate::separation::SeparationMask;
use crate::spectral::Spectrogram;
use crate::{Exec, EPS};

/// How the soft mask treats the observed direction of a bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// `q(s | f, t, d(f,t))`: uses the observed direction of each bin.
    #[default]
    Conditioned,
    /// `q(s | f, t)` with the direction summed out.
    Marginal,
}

impl std::str::FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conditioned" => Ok(Self::Conditioned),
            "marginal" => Ok(Self::Marginal),
            other => Err(Error::InvalidArgument(format!("unknown mask mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NtfDims {
    pub f: usize,
    pub t: usize,
    pub d: usize,
    pub s: usize,
    pub z: usize,
}

/// Factors `q(d,s)` (`D x S`), `q(f|z,s)` (`S x F x Z`, columns sum to one
/// over `f`) and `q(t,z|s)` (`S x T x Z`, each slice sums to one).
#[derive(Debug, Clone, PartialEq)]
pub struct NtfModel {
    dir: Array2<f64>,
    dict: Array3<f64>,
    act: Array3<f64>,
    pub seed: u64,
    pub iterations: usize,
}

#[derive(Serialize, Deserialize)]
struct NtfJson {
    dims: NtfDims,
    seed: u64,
    iterations: usize,
    #[serde(default)]
    mask_mode: Option<MaskMode>,
    dir: Vec<f64>,
    dict: Vec<f64>,
    act: Vec<f64>,
}

impl NtfModel {
    pub fn new(dir: Array2<f64>, dict: Array3<f64>, act: Array3<f64>) -> Result<Self> {
        let (d, s) = dir.dim();
        let (s1, f, z) = dict.dim();
        let (s2, t, z2) = act.dim();
        if s1 != s || s2 != s || z2 != z {
            return Err(Error::ShapeMismatch(format!(
                "direction factor {:?}, dictionary {:?}, activations {:?}",
                dir.dim(),
                dict.dim(),
                act.dim()
            )));
        }
        dims_positive(&[("F", f), ("T", t), ("D", d), ("S", s), ("Z", z)])?;
        check_simplex(dir.iter().copied(), "direction factor")?;
        for src in 0..s {
            for (k, col) in dict.index_axis(Axis(0), src).columns().into_iter().enumerate() {
                check_simplex(col.iter().copied(), &format!("dictionary column {k} of source {src}"))?;
            }
            check_simplex(act.index_axis(Axis(0), src).iter().copied(), &format!("activations of source {src}"))?;
        }
        Ok(Self { dir, dict, act, seed: 0, iterations: 0 })
    }

    pub fn dims(&self) -> NtfDims {
        let (d, s) = self.dir.dim();
        let (_, f, z) = self.dict.dim();
        NtfDims { f, t: self.act.shape()[1], d, s, z }
    }

    /// Joint `q(d,s)`.
    pub fn dir(&self) -> &Array2<f64> {
        &self.dir
    }

    /// `q(f|z,s)` indexed `[s, f, z]`.
    pub fn dict(&self) -> &Array3<f64> {
        &self.dict
    }

    /// `q(t,z|s)` indexed `[s, t, z]`.
    pub fn act(&self) -> &Array3<f64> {
        &self.act
    }

    /// `q(s) = sum_d q(d,s)`.
    pub fn source_weights(&self) -> Vec<f64> {
        self.dir.sum_axis(Axis(0)).to_vec()
    }

    /// `q(d|s)` as a `D x S` matrix with unit column sums.
    pub fn direction_given_source(&self) -> Array2<f64> {
        let mut c = self.dir.clone();
        for mut col in c.columns_mut() {
            let s = col.sum();
            col.mapv_inplace(|v| v / s);
        }
        c
    }

    /// `q(f,t|s)` for one source.
    pub fn source_marginal(&self, s: usize) -> Array2<f64> {
        mul_transposed(self.dict.index_axis(Axis(0), s), self.act.index_axis(Axis(0), s))
    }

    fn source_marginals(&self, exec: Exec) -> Vec<Array2<f64>> {
        per_source(exec, self.dims().s, |s| self.source_marginal(s))
    }

    /// Full model marginal `q(f,t,d)` as an `F x T x D` array.
    pub fn marginal(&self) -> Array3<f64> {
        dense_marginal(&self.source_marginals(Exec::Sequential), &self.dir)
    }

    /// The same model with sources reordered: output source `i` is input
    /// source `order[i]`.
    pub fn permute_sources(&self, order: &[usize]) -> Self {
        let mut out = self.clone();
        for (i, &j) in order.iter().enumerate() {
            out.dir.column_mut(i).assign(&self.dir.column(j));
            out.dict.index_axis_mut(Axis(0), i).assign(&self.dict.index_axis(Axis(0), j));
            out.act.index_axis_mut(Axis(0), i).assign(&self.act.index_axis(Axis(0), j));
        }
        out
    }

    pub fn to_json(&self, mask_mode: Option<MaskMode>) -> Result<String> {
        Ok(serde_json::to_string(&NtfJson {
            dims: self.dims(),
            seed: self.seed,
            iterations: self.iterations,
            mask_mode,
            dir: self.dir.iter().copied().collect(),
            dict: self.dict.iter().copied().collect(),
            act: self.act.iter().copied().collect(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<(Self, Option<MaskMode>)> {
        let j: NtfJson = serde_json::from_str(s)?;
        let NtfDims { f, t, d, s, z } = j.dims;
        let shape_err = |e: ndarray::ShapeError| Error::ShapeMismatch(e.to_string());
        let dir = Array2::from_shape_vec((d, s), j.dir).map_err(shape_err)?;
        let dict = Array3::from_shape_vec((s, f, z), j.dict).map_err(shape_err)?;
        let act = Array3::from_shape_vec((s, t, z), j.act).map_err(shape_err)?;
        let mut m = Self::new(dir, dict, act)?;
        m.seed = j.seed;
        m.iterations = j.iterations;
        Ok((m, j.mask_mode))
    }
}

fn dense_marginal(source_marginals: &[Array2<f64>], dir: &Array2<f64>) -> Array3<f64> {
    let (nf, nt) = source_marginals[0].dim();
    let nd = dir.nrows();
    let mut q = Array3::zeros((nf, nt, nd));
    for (s, qs) in source_marginals.iter().enumerate() {
        for d in 0..nd {
            q.slice_mut(s![.., .., d]).scaled_add(dir[[d, s]], qs);
        }
    }
    q
}

/// Random strictly positive model, deterministic in `seed`.
pub fn dntf_init(f: usize, t: usize, d: usize, s: usize, z: usize, seed: u64) -> Result<NtfModel> {
    dims_positive(&[("F", f), ("T", t), ("D", d), ("S", s), ("Z", z)])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir = uniform_positive(&mut rng, (d, s));
    normalize_total(dir.view_mut());
    let mut dict = Array3::zeros((s, f, z));
    let mut act = Array3::zeros((s, t, z));
    for src in 0..s {
        let mut w = uniform_positive(&mut rng, (f, z));
        condition_columns(w.view_mut());
        dict.index_axis_mut(Axis(0), src).assign(&w);
        let mut h = uniform_positive(&mut rng, (t, z));
        normalize_total(h.view_mut());
        act.index_axis_mut(Axis(0), src).assign(&h);
    }
    Ok(NtfModel { dir, dict, act, seed, iterations: 0 })
}

/// Spectrogram plus one direction index per bin, standing for
/// `p(f,t,d) = p(f,t) [d = d(f,t)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDirectionalObservation {
    p: Spectrogram,
    dirs: DirectionField,
}

impl SparseDirectionalObservation {
    pub fn new(p: Spectrogram, dirs: DirectionField) -> Result<Self> {
        if p.dim() != dirs.dim() {
            return Err(Error::ShapeMismatch(format!(
                "spectrogram is {:?}, direction field is {:?}",
                p.dim(),
                dirs.dim()
            )));
        }
        Ok(Self { p, dirs })
    }

    pub fn spectrogram(&self) -> &Spectrogram {
        &self.p
    }

    pub fn directions(&self) -> &DirectionField {
        &self.dirs
    }

    pub fn num_directions(&self) -> usize {
        self.dirs.num_directions()
    }

    /// Scatters `p(f,t)` into bin `d(f,t)` of an `F x T x D` tensor, keeping
    /// empty direction bins.
    pub fn to_tensor(&self) -> Array3<f64> {
        let (nf, nt) = self.p.dim();
        let mut out = Array3::zeros((nf, nt, self.num_directions()));
        for ((f, t), &v) in self.p.p().indexed_iter() {
            out[[f, t, self.dirs.get(f, t)]] = v;
        }
        out
    }

    /// `KL(p || q(f,t,d(f,t)))`.
    pub fn kl(&self, model: &NtfModel) -> f64 {
        let qs = model.source_marginals(Exec::Sequential);
        let q = sparse_denominator(&qs, model.dir(), &self.dirs);
        kl_terms(self.p.p().iter().zip(q.iter().copied()))
    }
}

/// Dense `F x T x D` observation with strictly positive direction marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseDirectionalObservation {
    p: Array3<f64>,
    bins: Vec<usize>,
}

impl DenseDirectionalObservation {
    pub fn new(p: Array3<f64>) -> Result<Self> {
        check_simplex(p.iter().copied(), "dense observation")?;
        let p = if p.is_standard_layout() { p } else { p.as_standard_layout().into_owned() };
        if p.sum_axis(Axis(0)).sum_axis(Axis(0)).iter().any(|&m| m <= 0.0) {
            return Err(Error::InvalidArgument("every direction bin needs positive mass".into()));
        }
        let bins = (0..p.shape()[2]).collect();
        Ok(Self { p, bins })
    }

    /// Densifies a sparse observation, dropping direction bins that received
    /// no mass. [`Self::bins`] maps the kept bins back to their original
    /// indices.
    pub fn from_sparse(sparse: &SparseDirectionalObservation) -> Result<Self> {
        let full = sparse.to_tensor();
        let mass = full.sum_axis(Axis(0)).sum_axis(Axis(0));
        let bins: Vec<usize> = (0..mass.len()).filter(|&d| mass[d] > 0.0).collect();
        let p = full.select(Axis(2), &bins).as_standard_layout().into_owned();
        check_simplex(p.iter().copied(), "dense observation")?;
        Ok(Self { p, bins })
    }

    pub fn tensor(&self) -> &Array3<f64> {
        &self.p
    }

    /// Original direction index of each kept bin.
    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    pub fn num_directions(&self) -> usize {
        self.p.shape()[2]
    }

    pub fn grid_dim(&self) -> (usize, usize) {
        (self.p.shape()[0], self.p.shape()[1])
    }

    /// `p(f,t) = sum_d p(f,t,d)`.
    pub fn spectral_marginal(&self) -> Array2<f64> {
        self.p.sum_axis(Axis(2))
    }

    pub fn kl(&self, model: &NtfModel) -> f64 {
        kl_terms(self.p.iter().zip(model.marginal().iter().copied()))
    }

    pub fn kl_dnmf(&self, model: &DnmfModel) -> f64 {
        kl_terms(self.p.iter().zip(model.marginal().iter().copied()))
    }
}

/// `normalize_total` for a `D x S` table, adding up per-source columns first.
/// Relabeling two sources then cannot change how the total rounds.
fn normalize_dir(mut dir: ArrayViewMut2<'_, f64>) {
    dir.mapv_inplace(|v| v.max(EPS));
    let total: f64 = dir.columns().into_iter().map(|c| c.sum()).sum();
    dir.mapv_inplace(|v| v / total);
}

fn check_model_shape(model: NtfDims, f: usize, t: usize, d: usize) -> Result<()> {
    if (model.f, model.t, model.d) != (f, t, d) {
        return Err(Error::ShapeMismatch(format!(
            "observation is {f}x{t}x{d}, model is {}x{}x{}",
            model.f, model.t, model.d
        )));
    }
    Ok(())
}

/// `q(f,t,d(f,t)) = sum_s q(d(f,t),s) q(f,t|s)`.
fn sparse_denominator(qs: &[Array2<f64>], dir: &Array2<f64>, dirs: &DirectionField) -> Array2<f64> {
    let ns = qs.len();
    let dir_rows: Vec<f64> = dir.iter().copied().collect();
    let q_std: Vec<_> = qs.iter().map(|q| q.as_standard_layout()).collect();
    let q_sl: Vec<&[f64]> = q_std.iter().map(|q| q.as_slice().expect("standard layout")).collect();
    let idx = dirs.indices().as_standard_layout();
    let values = idx
        .as_slice()
        .expect("standard layout")
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let row = &dir_rows[d * ns..(d + 1) * ns];
            let mut q = 0.0;
            for (w, q_s) in row.iter().zip(&q_sl) {
                q += w * q_s[i];
            }
            q
        })
        .collect();
    Array2::from_shape_vec(qs[0].dim(), values).expect("shape matches")
}

/// Updates `q(f|z,s)` and `q(t,z|s)` of one source given
/// `g(f,t) = sum_d rho(f,t,d) q0(d,s)`.
fn source_factor_step(dict: ArrayView2<'_, f64>, act: ArrayView2<'_, f64>, g: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
    let mut w = &dict * &mul(g, act);
    let mut h = &act * &mul(g.t(), dict);
    condition_columns(w.view_mut());
    normalize_total(h.view_mut());
    (w, h)
}

struct SourceStep {
    dir_acc: Vec<f64>,
    dict: Array2<f64>,
    act: Array2<f64>,
}

fn assemble(m0: &NtfModel, steps: Vec<SourceStep>) -> NtfModel {
    let dims = m0.dims();
    let mut dir = Array2::zeros((dims.d, dims.s));
    let mut dict = Array3::zeros((dims.s, dims.f, dims.z));
    let mut act = Array3::zeros((dims.s, dims.t, dims.z));
    for (s, step) in steps.into_iter().enumerate() {
        for d in 0..dims.d {
            dir[[d, s]] = m0.dir[[d, s]] * step.dir_acc[d];
        }
        dict.index_axis_mut(Axis(0), s).assign(&step.dict);
        act.index_axis_mut(Axis(0), s).assign(&step.act);
    }
    normalize_dir(dir.view_mut());
    NtfModel { dir, dict, act, seed: m0.seed, iterations: m0.iterations + 1 }
}

/// One update on a sparse observation. Sequential.
pub fn dntf_update_sparse(obs: &SparseDirectionalObservation, m0: &NtfModel) -> Result<NtfModel> {
    dntf_update_sparse_with(obs, m0, Exec::Sequential)
}

pub fn dntf_update_sparse_with(obs: &SparseDirectionalObservation, m0: &NtfModel, exec: Exec) -> Result<NtfModel> {
    let dims = m0.dims();
    let (nf, nt) = obs.p.dim();
    check_model_shape(dims, nf, nt, obs.num_directions())?;
    let p = obs.p.view();
    let p = p.as_standard_layout();
    let idx = obs.dirs.indices().as_standard_layout();

    let mut sums: Vec<SourceSums> = (0..dims.s)
        .map(|_| SourceSums {
            dir: vec![0.0; dims.d],
            dict: Array2::zeros((nf, dims.z)),
            act: Array2::zeros((nt, dims.z)),
        })
        .collect();
    for f0 in (0..nf).step_by(BLOCK) {
        for t0 in (0..nt).step_by(BLOCK) {
            let (fr, tr) = (f0..(f0 + BLOCK).min(nf), t0..(t0 + BLOCK).min(nt));
            let block = s![fr.clone(), tr.clone()];
            sparse_block(p.slice(block), idx.slice(block), m0, fr, tr, &mut sums, exec);
        }
    }

    let mut dir = Array2::zeros((dims.d, dims.s));
    let mut dict = Array3::zeros((dims.s, dims.f, dims.z));
    let mut act = Array3::zeros((dims.s, dims.t, dims.z));
    for (s, sum) in sums.iter().enumerate() {
        for d in 0..dims.d {
            dir[[d, s]] = m0.dir[[d, s]] * sum.dir[d];
        }
        let mut w = dict.index_axis_mut(Axis(0), s);
        w.assign(&(&m0.dict.index_axis(Axis(0), s) * &sum.dict));
        condition_columns(w);
        let mut h = act.index_axis_mut(Axis(0), s);
        h.assign(&(&m0.act.index_axis(Axis(0), s) * &sum.act));
        normalize_total(h);
    }
    normalize_dir(dir.view_mut());
    Ok(NtfModel { dir, dict, act, seed: m0.seed, iterations: m0.iterations + 1 })
}

/// Side of the square time-frequency blocks the sparse update walks through.
/// Per-block intermediates stay in cache and nothing of size `F x T` is
/// allocated.
const BLOCK: usize = 128;

/// Multiplicative-update numerators of one source, accumulated over blocks.
struct SourceSums {
    dir: Vec<f64>,
    dict: Array2<f64>,
    act: Array2<f64>,
}

/// Adds one block's contribution. With `rho = p / q(f,t,d(f,t))` and
/// `g_s = rho q0(d(f,t),s)`: `dir(d,s) += sum_{d(f,t)=d} rho q(f,t|s)`,
/// `dict_s += g_s act_s` and `act_s += g_s^T dict_s`.
fn sparse_block(
    p: ArrayView2<'_, f64>,
    idx: ArrayView2<'_, usize>,
    m0: &NtfModel,
    fr: std::ops::Range<usize>,
    tr: std::ops::Range<usize>,
    sums: &mut [SourceSums],
    exec: Exec,
) {
    let ns = sums.len();
    let shape = (fr.len(), tr.len());
    let (p, idx) = (p.as_standard_layout(), idx.as_standard_layout());
    let (p, idx) = (p.as_slice().expect("standard layout"), idx.as_slice().expect("standard layout"));
    let dicts: Vec<_> = (0..ns).map(|s| m0.dict.slice(s![s, fr.clone(), ..])).collect();
    let acts: Vec<_> = (0..ns).map(|s| m0.act.slice(s![s, tr.clone(), ..])).collect();
    let qs = per_source(exec, ns, |s| mul_transposed(dicts[s], acts[s]));
    let cols: Vec<Vec<f64>> = m0.dir.columns().into_iter().map(|c| c.to_vec()).collect();

    // Sources summed in order.
    let mut rho = vec![0.0; p.len()];
    for (w, q) in cols.iter().zip(&qs) {
        for ((r, &d), &q) in rho.iter_mut().zip(idx).zip(q.as_slice().expect("standard layout")) {
            *r += w[d] * q;
        }
    }
    for (r, &p) in rho.iter_mut().zip(p) {
        let v = p / r.max(EPS);
        *r = if p > 0.0 { v } else { 0.0 };
    }

    for_each_source(exec, sums, |s, sum| {
        let w = &cols[s];
        let q = qs[s].as_slice().expect("standard layout");
        let mut g = Array2::zeros(shape);
        for (((g, &r), &d), &q) in g.as_slice_mut().expect("standard layout").iter_mut().zip(&rho).zip(idx).zip(q) {
            sum.dir[d] += r * q;
            *g = r * w[d];
        }
        let mut dict = sum.dict.slice_mut(s![fr.clone(), ..]);
        ndarray::linalg::general_mat_mul(1.0, &g, &acts[s], 1.0, &mut dict);
        let mut act = sum.act.slice_mut(s![tr.clone(), ..]);
        ndarray::linalg::general_mat_mul(1.0, &g.t(), &dicts[s], 1.0, &mut act);
    });
}

/// One update on a dense observation. Sequential.
pub fn dntf_update_dense(obs: &DenseDirectionalObservation, m0: &NtfModel) -> Result<NtfModel> {
    dntf_update_dense_with(obs, m0, Exec::Sequential)
}

pub fn dntf_update_dense_with(obs: &DenseDirectionalObservation, m0: &NtfModel, exec: Exec) -> Result<NtfModel> {
    let dims = m0.dims();
    let (nf, nt) = obs.grid_dim();
    check_model_shape(dims, nf, nt, obs.num_directions())?;
    let qs = m0.source_marginals(exec);
    let rho = dense_ratio(&obs.p, &qs, &m0.dir);

    let steps = per_source(exec, dims.s, |s| {
        let (dir_acc, g) = dense_source_sums(&rho, &qs[s], &m0.dir, s);
        let (dict, act) =
            source_factor_step(m0.dict.index_axis(Axis(0), s), m0.act.index_axis(Axis(0), s), g.view());
        SourceStep { dir_acc, dict, act }
    });
    Ok(assemble(m0, steps))
}

/// `rho(f,t,d) = p(f,t,d) / sum_s q(d,s) q(f,t|s)`.
fn dense_ratio(p: &Array3<f64>, qs: &[Array2<f64>], dir: &Array2<f64>) -> Array3<f64> {
    let (_, _, nd) = p.dim();
    let ns = qs.len();
    // dir_rows[d * ns + s] = q(d,s)
    let dir_rows: Vec<f64> = dir.iter().copied().collect();
    let q_std: Vec<_> = qs.iter().map(|q| q.as_standard_layout()).collect();
    let q_slices: Vec<&[f64]> = q_std.iter().map(|q| q.as_slice().expect("standard layout")).collect();
    let mut rho = Array3::zeros(p.raw_dim());
    let p_flat = p.as_slice().expect("standard layout");
    let r_flat = rho.as_slice_mut().expect("standard layout");
    let mut q_ft = vec![0.0; ns];
    for (i, (r, pl)) in r_flat.chunks_exact_mut(nd).zip(p_flat.chunks_exact(nd)).enumerate() {
        for (s, q) in q_slices.iter().enumerate() {
            q_ft[s] = q[i];
        }
        for d in 0..nd {
            if pl[d] > 0.0 {
                let row = &dir_rows[d * ns..(d + 1) * ns];
                let q: f64 = row.iter().zip(&q_ft).map(|(a, b)| a * b).sum();
                r[d] = pl[d] / q.max(EPS);
            }
        }
    }
    rho
}

/// For one source: `acc(d) = sum_{f,t} rho(f,t,d) q(f,t|s)` and
/// `g(f,t) = sum_d rho(f,t,d) q(d,s)`.
fn dense_source_sums(
    rho: &Array3<f64>,
    q_s: &Array2<f64>,
    dir: &Array2<f64>,
    s: usize,
) -> (Vec<f64>, Array2<f64>) {
    let nd = rho.shape()[2];
    let w: Vec<f64> = dir.column(s).to_vec();
    let mut acc = vec![0.0; nd];
    let mut g = Array2::zeros(q_s.dim());
    let q_std = q_s.as_standard_layout();
    let q = q_std.as_slice().expect("standard layout");
    let out = g.as_slice_mut().expect("standard layout");
    for (i, lane) in rho.as_slice().expect("standard layout").chunks_exact(nd).enumerate() {
        let mut gv = 0.0;
        for d in 0..nd {
            acc[d] += lane[d] * q[i];
            gv += lane[d] * w[d];
        }
        out[i] = gv;
    }
    (acc, g)
}

/// Iterates [`dntf_update_sparse_with`] from a seeded initialization.
pub fn fit_dntf_sparse(
    obs: &SparseDirectionalObservation,
    num_sources: usize,
    num_atoms: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<Fit<NtfModel>> {
    let (nf, nt) = obs.p.dim();
    let init = dntf_init(nf, nt, obs.num_directions(), num_sources, num_atoms, seed)?;
    run_fit(init, opts, |m| obs.kl(m), |m| dntf_update_sparse_with(obs, m, opts.exec))
}

pub fn fit_dntf_dense(
    obs: &DenseDirectionalObservation,
    num_sources: usize,
    num_atoms: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<Fit<NtfModel>> {
    let (nf, nt) = obs.grid_dim();
    let init = dntf_init(nf, nt, obs.num_directions(), num_sources, num_atoms, seed)?;
    run_fit(init, opts, |m| obs.kl(m), |m| dntf_update_dense_with(obs, m, opts.exec))
}

/// Soft mask from a fitted model. Bins where the model puts no mass are
/// split evenly.
pub fn posterior_mask(model: &NtfModel, obs: &SparseDirectionalObservation, mode: MaskMode) -> Result<SeparationMask> {
    let dims = model.dims();
    let (nf, nt) = obs.p.dim();
    check_model_shape(dims, nf, nt, obs.num_directions())?;
    let weights: Vec<Array2<f64>> = match mode {
        MaskMode::Conditioned => (0..dims.s)
            .map(|s| {
                let mut w = model.source_marginal(s);
                Zip::from(&mut w).and(obs.dirs.indices()).for_each(|w, &d| *w *= model.dir[[d, s]]);
                w
            })
            .collect(),
        MaskMode::Marginal => {
            let qs = model.source_weights();
            (0..dims.s).map(|s| model.source_marginal(s) * qs[s]).collect()
        }
    };
    Ok(SeparationMask::from_unnormalized(&weights))
}

/// Posterior from a dense observation. The conditioned mode averages
/// `q(s|f,t,d)` under the observed `p(d|f,t)`; bins with no observed mass
/// fall back to the marginal posterior.
fn dense_posterior(qs: &[Array2<f64>], dir: &Array2<f64>, obs: &DenseDirectionalObservation, mode: MaskMode) -> SeparationMask {
    let prior: Vec<f64> = dir.sum_axis(Axis(0)).to_vec();
    let marginal: Vec<Array2<f64>> = qs.iter().zip(&prior).map(|(q, &w)| q * w).collect();
    if mode == MaskMode::Marginal {
        return SeparationMask::from_unnormalized(&marginal);
    }
    let rho = dense_ratio(&obs.p, qs, dir);
    let p_ft = obs.spectral_marginal();
    // sum_s g_s q_s = p(f,t) wherever p(f,t) > 0, so per-bin normalization
    // divides by the observed mass.
    let weights: Vec<Array2<f64>> = (0..qs.len())
        .map(|s| {
            let (_, g) = dense_source_sums(&rho, &qs[s], dir, s);
            let mut w = &g * &qs[s];
            Zip::from(&mut w).and(&p_ft).and(&marginal[s]).for_each(|w, &p, &m| {
                if p <= 0.0 {
                    *w = m;
                }
            });
            w
        })
        .collect();
    SeparationMask::from_unnormalized(&weights)
}

pub fn posterior_mask_dense(model: &NtfModel, obs: &DenseDirectionalObservation, mode: MaskMode) -> Result<SeparationMask> {
    let (nf, nt) = obs.grid_dim();
    check_model_shape(model.dims(), nf, nt, obs.num_directions())?;
    Ok(dense_posterior(&model.source_marginals(Exec::Sequential), &model.dir, obs, mode))
}

/// Circular summary of `q(d|s)` for one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDirection {
    pub source: usize,
    /// Weighted circular mean of bin-center azimuths, radians in `[0, 2pi)`.
    pub azimuth: f64,
    /// Mean resultant length in `[0, 1]`.
    pub concentration: f64,
    /// False when the resultant vanishes and the mean is undefined; the
    /// azimuth is then reported as the center of bin 0.
    pub defined: bool,
    pub weight: f64,
    pub distribution: Vec<f64>,
}

/// Per-source direction summaries, sorted by azimuth.
pub fn source_direction_summary(model: &NtfModel) -> Vec<SourceDirection> {
    summarize_directions(&model.dir, &(0..model.dims().d).collect::<Vec<_>>(), model.dims().d)
}

/// `bins[i]` is the original index of row `i` of `dir` among `num_dirs` bins.
pub fn summarize_directions(dir: &Array2<f64>, bins: &[usize], num_dirs: usize) -> Vec<SourceDirection> {
    let mut out: Vec<SourceDirection> = dir
        .columns()
        .into_iter()
        .enumerate()
        .map(|(s, col)| {
            let weight = col.sum();
            let mut distribution = vec![0.0; num_dirs];
            let (mut c, mut sn) = (0.0, 0.0);
            for (&b, &v) in bins.iter().zip(col.iter()) {
                let q = v / weight;
                distribution[b] = q;
                let a = bin_center(b, num_dirs);
                c += q * a.cos();
                sn += q * a.sin();
            }
            let r = c.hypot(sn).min(1.0);
            let defined = r > 1e-9;
            let azimuth = if defined { sn.atan2(c).rem_euclid(2.0 * PI) } else { bin_center(0, num_dirs) };
            SourceDirection { source: s, azimuth, concentration: if defined { r } else { 0.0 }, defined, weight, distribution }
        })
        .collect();
    out.sort_by(|a, b| a.azimuth.total_cmp(&b.azimuth).then(a.source.cmp(&b.source)));
    out
}

/// Two-factor baseline `q(f,t,d) = sum_s q(f,t|s) q(d,s)` with an
/// unstructured per-source spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct DnmfModel {
    joint: Array3<f64>,
    dir: Array2<f64>,
    pub seed: u64,
    pub iterations: usize,
}

impl DnmfModel {
    pub fn new(joint: Array3<f64>, dir: Array2<f64>) -> Result<Self> {
        let (s, f, t) = joint.dim();
        let (d, s2) = dir.dim();
        if s != s2 {
            return Err(Error::ShapeMismatch(format!("joint has {s} sources, direction factor {s2}")));
        }
        dims_positive(&[("F", f), ("T", t), ("D", d), ("S", s)])?;
        check_simplex(dir.iter().copied(), "direction factor")?;
        for src in 0..s {
            check_simplex(joint.index_axis(Axis(0), src).iter().copied(), &format!("spectrogram of source {src}"))?;
        }
        Ok(Self { joint, dir, seed: 0, iterations: 0 })
    }

    /// `q(f,t|s)` indexed `[s, f, t]`.
    pub fn joint(&self) -> &Array3<f64> {
        &self.joint
    }

    pub fn dir(&self) -> &Array2<f64> {
        &self.dir
    }

    pub fn num_sources(&self) -> usize {
        self.dir.ncols()
    }

    fn source_marginals(&self) -> Vec<Array2<f64>> {
        self.joint.outer_iter().map(|v| v.to_owned()).collect()
    }

    pub fn marginal(&self) -> Array3<f64> {
        dense_marginal(&self.source_marginals(), &self.dir)
    }

    pub fn posterior_mask(&self, obs: &DenseDirectionalObservation, mode: MaskMode) -> Result<SeparationMask> {
        let (_, f, t) = self.joint.dim();
        if (f, t, self.dir.nrows()) != (obs.grid_dim().0, obs.grid_dim().1, obs.num_directions()) {
            return Err(Error::ShapeMismatch("observation does not match model".into()));
        }
        Ok(dense_posterior(&self.source_marginals(), &self.dir, obs, mode))
    }
}

pub fn dnmf_init(f: usize, t: usize, d: usize, s: usize, seed: u64) -> Result<DnmfModel> {
    dims_positive(&[("F", f), ("T", t), ("D", d), ("S", s)])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir = uniform_positive(&mut rng, (d, s));
    normalize_total(dir.view_mut());
    let mut joint = Array3::zeros((s, f, t));
    for src in 0..s {
        let mut j = uniform_positive(&mut rng, (f, t));
        normalize_total(j.view_mut());
        joint.index_axis_mut(Axis(0), src).assign(&j);
    }
    Ok(DnmfModel { joint, dir, seed, iterations: 0 })
}

pub fn dnmf_update(obs: &DenseDirectionalObservation, m0: &DnmfModel) -> Result<DnmfModel> {
    dnmf_update_with(obs, m0, Exec::Sequential)
}

pub fn dnmf_update_with(obs: &DenseDirectionalObservation, m0: &DnmfModel, exec: Exec) -> Result<DnmfModel> {
    let (ns, nf, nt) = m0.joint.dim();
    if (nf, nt, m0.dir.nrows()) != (obs.grid_dim().0, obs.grid_dim().1, obs.num_directions()) {
        return Err(Error::ShapeMismatch("observation does not match model".into()));
    }
    let qs = m0.source_marginals();
    let rho = dense_ratio(&obs.p, &qs, &m0.dir);
    let steps = per_source(exec, ns, |s| {
        let (acc, g) = dense_source_sums(&rho, &qs[s], &m0.dir, s);
        let mut j = &qs[s] * &g;
        normalize_total(j.view_mut());
        (acc, j)
    });
    let mut dir = Array2::zeros(m0.dir.dim());
    let mut joint = Array3::zeros((ns, nf, nt));
    for (s, (acc, j)) in steps.into_iter().enumerate() {
        for (d, a) in acc.iter().enumerate() {
            dir[[d, s]] = m0.dir[[d, s]] * a;
        }
        joint.index_axis_mut(Axis(0), s).assign(&j);
    }
    normalize_dir(dir.view_mut());
    Ok(DnmfModel { joint, dir, seed: m0.seed, iterations: m0.iterations + 1 })
}

pub fn fit_dnmf(obs: &DenseDirectionalObservation, num_sources: usize, seed: u64, opts: &FitOptions) -> Result<Fit<DnmfModel>> {
    let (nf, nt) = obs.grid_dim();
    let init = dnmf_init(nf, nt, obs.num_directions(), num_sources, seed)?;
    run_fit(init, opts, |m| obs.kl_dnmf(m), |m| dnmf_update_with(obs, m, opts.exec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmf::{nmf_update, NmfModel};
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_sparse(f: usize, t: usize, d: usize, seed: u64) -> SparseDirectionalObservation {
        let mut r = rng(seed);
        let p = Spectrogram::from_magnitudes(Array2::from_shape_simple_fn((f, t), || r.random_range(0.0..1.0))).unwrap();
        let dirs = DirectionField::new(Array2::from_shape_simple_fn((f, t), || r.random_range(0..d)), d).unwrap();
        SparseDirectionalObservation::new(p, dirs).unwrap()
    }

    fn random_dense(f: usize, t: usize, d: usize, seed: u64) -> DenseDirectionalObservation {
        let mut r = rng(seed);
        let mut p = Array3::from_shape_simple_fn((f, t, d), || r.random_range(0.01..1.0));
        let total = p.sum();
        p /= total;
        DenseDirectionalObservation::new(p).unwrap()
    }

    fn max_abs(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn flat(m: &NtfModel) -> Vec<f64> {
        m.dir.iter().chain(m.dict.iter()).chain(m.act.iter()).copied().collect()
    }

    /// Materializes r(f,t,d,s,z) = p q(d,s) q(f|z,s) q(t,z|s) / q(f,t,d)
    /// and marginalizes it.
    fn brute_force(p: &Array3<f64>, m: &NtfModel) -> NtfModel {
        let NtfDims { f: nf, t: nt, d: nd, s: ns, z: nz } = m.dims();
        let q = m.marginal();
        let mut r = ndarray::Array::<f64, _>::zeros((nf, nt, nd, ns, nz));
        for ((f, t, d, s, z), v) in r.indexed_iter_mut() {
            *v = p[[f, t, d]] * m.dir[[d, s]] * m.dict[[s, f, z]] * m.act[[s, t, z]] / q[[f, t, d]];
        }
        let mut dir = Array2::zeros((nd, ns));
        let mut dict = Array3::zeros((ns, nf, nz));
        let mut act = Array3::zeros((ns, nt, nz));
        for ((f, t, d, s, z), &v) in r.indexed_iter() {
            dir[[d, s]] += v;
            dict[[s, f, z]] += v;
            act[[s, t, z]] += v;
        }
        for s in 0..ns {
            for z in 0..nz {
                let c: f64 = (0..nf).map(|f| dict[[s, f, z]]).sum();
                (0..nf).for_each(|f| dict[[s, f, z]] /= c);
            }
            let a = act.index_axis(Axis(0), s).sum();
            act.index_axis_mut(Axis(0), s).mapv_inplace(|v| v / a);
        }
        let total = dir.sum();
        dir /= total;
        NtfModel { dir, dict, act, seed: m.seed, iterations: m.iterations + 1 }
    }

    #[test]
    fn single_source_single_direction_is_nmf() {
        let obs = random_sparse(6, 5, 1, 1);
        let m0 = dntf_init(6, 5, 1, 1, 3, 2).unwrap();
        let m1 = dntf_update_sparse(&obs, &m0).unwrap();
        let n0 = NmfModel::new(m0.dict.index_axis(Axis(0), 0).to_owned(), m0.act.index_axis(Axis(0), 0).to_owned()).unwrap();
        let n1 = nmf_update(obs.spectrogram(), &n0).unwrap();
        assert!(max_abs(m1.dict.as_slice().unwrap(), n1.dict().as_slice().unwrap()) < 1e-14);
        assert!(max_abs(m1.act.as_slice().unwrap(), n1.act().as_slice().unwrap()) < 1e-14);
        assert_eq!(m1.dir[[0, 0]], 1.0);
    }

    #[test]
    fn dense_update_matches_brute_force() {
        for seed in 0..10 {
            let obs = random_dense(4, 3, 3, seed);
            let m0 = dntf_init(4, 3, 3, 2, 2, seed + 100).unwrap();
            let got = dntf_update_dense(&obs, &m0).unwrap();
            let want = brute_force(obs.tensor(), &m0);
            assert!(max_abs(&flat(&got), &flat(&want)) < 1e-12);
        }
    }

    #[test]
    fn sparse_update_matches_dense() {
        for seed in 0..10 {
            let obs = random_sparse(5, 4, 3, seed);
            let full = obs.to_tensor();
            let m0 = dntf_init(5, 4, 3, 2, 3, seed + 7).unwrap();
            let sparse = dntf_update_sparse(&obs, &m0).unwrap();
            let want = brute_force(&full, &m0);
            for (a, b) in flat(&sparse).iter().zip(flat(&want)) {
                assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-300), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn exact_model_is_a_fixed_point() {
        let m0 = dntf_init(5, 4, 3, 2, 2, 9).unwrap();
        let obs = DenseDirectionalObservation::new(m0.marginal()).unwrap();
        let m1 = dntf_update_dense(&obs, &m0).unwrap();
        assert!(max_abs(&flat(&m0), &flat(&m1)) < 1e-13);
    }

    #[test]
    fn kl_does_not_increase() {
        let opts = FitOptions::iterations(30).tracked();
        for seed in 0..3 {
            let sparse = random_sparse(8, 6, 4, seed);
            let dense = random_dense(6, 5, 3, seed);
            let traces = [
                fit_dntf_sparse(&sparse, 2, 3, seed, &opts).unwrap().kl_trace,
                fit_dntf_dense(&dense, 2, 3, seed, &opts).unwrap().kl_trace,
                fit_dnmf(&dense, 2, seed, &opts).unwrap().kl_trace,
            ];
            for trace in traces {
                assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-10), "{trace:?}");
            }
        }
    }

    #[test]
    fn source_permutation_commutes_with_update() {
        let obs = random_sparse(6, 5, 4, 3);
        let m0 = dntf_init(6, 5, 4, 2, 3, 4).unwrap();
        let a = dntf_update_sparse(&obs, &m0.permute_sources(&[1, 0])).unwrap();
        let b = dntf_update_sparse(&obs, &m0).unwrap().permute_sources(&[1, 0]);
        assert_eq!(a, b);

        let m0 = dntf_init(6, 5, 4, 3, 2, 5).unwrap();
        let order = [2, 0, 1];
        let a = dntf_update_sparse(&obs, &m0.permute_sources(&order)).unwrap();
        let b = dntf_update_sparse(&obs, &m0).unwrap().permute_sources(&order);
        assert!(max_abs(&flat(&a), &flat(&b)) < 1e-14);
    }

    #[test]
    fn parallel_is_bit_identical() {
        let obs = random_sparse(12, 9, 5, 8);
        let opts = FitOptions::iterations(5);
        let seq = fit_dntf_sparse(&obs, 3, 4, 1, &opts).unwrap().model;
        let par = fit_dntf_sparse(&obs, 3, 4, 1, &FitOptions { exec: Exec::Parallel, ..opts }).unwrap().model;
        assert_eq!(seq, par);
        let dense = DenseDirectionalObservation::from_sparse(&obs).unwrap();
        let seq = fit_dnmf(&dense, 3, 1, &opts).unwrap().model;
        let par = fit_dnmf(&dense, 3, 1, &FitOptions { exec: Exec::Parallel, ..opts }).unwrap().model;
        assert_eq!(seq, par);
    }

    /// Two sources with disjoint frequency support and distinct directions.
    fn disjoint_scene(seed: u64) -> (SparseDirectionalObservation, Array2<usize>) {
        let (nf, nt, nd) = (16, 20, 6);
        let mut r = rng(seed);
        let owner = Array2::from_shape_fn((nf, nt), |(f, _)| usize::from(f >= nf / 2));
        let mag = Array2::from_shape_fn((nf, nt), |_| r.random_range(0.1..1.0));
        let dirs = owner.mapv(|o| if o == 0 { 1 } else { 4 });
        let obs = SparseDirectionalObservation::new(
            Spectrogram::from_magnitudes(mag).unwrap(),
            DirectionField::new(dirs, nd).unwrap(),
        )
        .unwrap();
        (obs, owner)
    }

    #[test]
    fn disjoint_sources_are_separated() {
        let (obs, owner) = disjoint_scene(2);
        let model = fit_dntf_sparse(&obs, 2, 3, 0, &FitOptions::iterations(100)).unwrap().model;
        let mask = posterior_mask(&model, &obs, MaskMode::Conditioned).unwrap();
        // Sources are identified up to permutation.
        let src_of_low = if mask.get(0, 0, 0) > 0.5 { 0 } else { 1 };
        let correct = owner
            .indexed_iter()
            .filter(|&((f, t), &o)| mask.get(if o == 0 { src_of_low } else { 1 - src_of_low }, f, t) > 0.5)
            .count();
        assert!(correct as f64 / owner.len() as f64 >= 0.95);
    }

    #[test]
    fn mask_modes() {
        let obs = random_sparse(5, 4, 3, 6);
        let m = dntf_init(5, 4, 3, 1, 2, 1).unwrap();
        for mode in [MaskMode::Conditioned, MaskMode::Marginal] {
            assert!(posterior_mask(&m, &obs, mode).unwrap().values().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        }
        let m = dntf_init(5, 4, 3, 2, 2, 1).unwrap();
        let c = posterior_mask(&m, &obs, MaskMode::Conditioned).unwrap();
        let g = posterior_mask(&m, &obs, MaskMode::Marginal).unwrap();
        assert_ne!(c, g);
        // Conditioned posterior by hand for one bin.
        let d = obs.directions().get(2, 3);
        let w: Vec<f64> = (0..2).map(|s| m.dir[[d, s]] * m.source_marginal(s)[[2, 3]]).collect();
        assert!((c.get(0, 2, 3) - w[0] / (w[0] + w[1])).abs() < 1e-14);
        assert_eq!(
            posterior_mask_dense(&m, &DenseDirectionalObservation::from_sparse(&obs).unwrap(), MaskMode::Conditioned)
                .unwrap()
                .values()
                .shape(),
            c.values().shape()
        );
    }

    #[test]
    fn dense_conditioned_mask_agrees_with_sparse() {
        let obs = random_sparse(6, 5, 3, 12);
        let dense = DenseDirectionalObservation::new(obs.to_tensor()).unwrap();
        let m = dntf_init(6, 5, 3, 2, 2, 3).unwrap();
        let a = posterior_mask(&m, &obs, MaskMode::Conditioned).unwrap();
        let b = posterior_mask_dense(&m, &dense, MaskMode::Conditioned).unwrap();
        assert!(max_abs(a.values().as_slice().unwrap(), b.values().as_slice().unwrap()) < 1e-12);
    }

    #[test]
    fn direction_summaries() {
        let mut dir = Array2::zeros((8, 2));
        dir[[2, 0]] = 0.5;
        dir[[6, 1]] = 0.25;
        dir[[7, 1]] = 0.25;
        let out = summarize_directions(&dir, &(0..8).collect::<Vec<_>>(), 8);
        assert_eq!(out[0].source, 0);
        assert!((out[0].azimuth - bin_center(2, 8)).abs() < 1e-12);
        assert!((out[0].concentration - 1.0).abs() < 1e-12);
        assert!((out[1].azimuth - 7.0 * PI / 4.0).abs() < 1e-12);
        assert!(out[1].concentration < 1.0);

        // Opposite bins cancel.
        let mut dir = Array2::zeros((4, 1));
        dir[[0, 0]] = 0.5;
        dir[[2, 0]] = 0.5;
        let out = summarize_directions(&dir, &[0, 1, 2, 3], 4);
        assert!(!out[0].defined);
        assert_eq!(out[0].concentration, 0.0);
    }

    #[test]
    fn dnmf_single_source_recovers_marginals() {
        let obs = random_dense(5, 4, 3, 4);
        let m = dnmf_update(&obs, &dnmf_init(5, 4, 3, 1, 2).unwrap()).unwrap();
        let p_ft = obs.spectral_marginal();
        assert!(max_abs(m.joint().as_slice().unwrap(), p_ft.as_slice().unwrap()) < 1e-14);
        let p_d = obs.tensor().sum_axis(Axis(0)).sum_axis(Axis(0));
        assert!(max_abs(m.dir().as_slice().unwrap(), p_d.as_slice().unwrap()) < 1e-14);
    }

    #[test]
    fn dnmf_matches_brute_force() {
        let obs = random_dense(4, 3, 3, 8);
        let m0 = dnmf_init(4, 3, 3, 2, 1).unwrap();
        let q = m0.marginal();
        let p = obs.tensor();
        let mut joint = Array3::<f64>::zeros((2, 4, 3));
        let mut dir = Array2::<f64>::zeros((3, 2));
        for ((f, t, d), &pv) in p.indexed_iter() {
            for s in 0..2 {
                let r = pv * m0.dir()[[d, s]] * m0.joint()[[s, f, t]] / q[[f, t, d]];
                joint[[s, f, t]] += r;
                dir[[d, s]] += r;
            }
        }
        for s in 0..2 {
            let n = joint.index_axis(Axis(0), s).sum();
            joint.index_axis_mut(Axis(0), s).mapv_inplace(|v| v / n);
        }
        let m1 = dnmf_update(&obs, &m0).unwrap();
        assert!(max_abs(m1.joint().as_slice().unwrap(), joint.as_slice().unwrap()) < 1e-12);
        assert!(max_abs(m1.dir().as_slice().unwrap(), dir.as_slice().unwrap()) < 1e-12);
    }

    #[test]
    fn observation_construction() {
        let mut p = Array3::zeros((2, 2, 3));
        p[[0, 0, 0]] = 0.5;
        p[[1, 1, 2]] = 0.5;
        assert!(DenseDirectionalObservation::new(p.clone()).is_err());
        let sparse = SparseDirectionalObservation::new(
            Spectrogram::from_magnitudes(p.sum_axis(Axis(2))).unwrap(),
            DirectionField::new(Array2::from_shape_vec((2, 2), vec![0, 0, 0, 2]).unwrap(), 3).unwrap(),
        )
        .unwrap();
        let dense = DenseDirectionalObservation::from_sparse(&sparse).unwrap();
        assert_eq!(dense.bins(), &[0, 2]);
        assert_eq!(dense.num_directions(), 2);
        let bad = dntf_init(2, 2, 2, 1, 1, 0).unwrap();
        assert!(matches!(dntf_update_sparse(&sparse, &bad), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn json_round_trip() {
        let mut m = dntf_init(4, 3, 5, 2, 2, 21).unwrap();
        m.iterations = 9;
        let (back, mode) = NtfModel::from_json(&m.to_json(Some(MaskMode::Marginal)).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(mode, Some(MaskMode::Marginal));
        assert!("conditioned".parse::<MaskMode>().is_ok());
        assert!("posterior".parse::<MaskMode>().is_err());
    }

    #[test]
    fn init_is_seeded_and_valid() {
        let a = dntf_init(4, 3, 5, 2, 2, 1).unwrap();
        assert_eq!(a, dntf_init(4, 3, 5, 2, 2, 1).unwrap());
        assert_ne!(a, dntf_init(4, 3, 5, 2, 2, 2).unwrap());
        assert!(NtfModel::new(a.dir.clone(), a.dict.clone(), a.act.clone()).is_ok());
        assert!(dntf_init(4, 3, 0, 2, 2, 1).is_err());
    }
}
