//! The three-microphone experiment: two sources, one-sample delays, every
//! algorithm scored with BSS_EVAL.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::doa::{design_doa_solver, direction_field, ArrayGeometry, DEFAULT_SPEED_OF_SOUND};
use crate::error::{Error, Result};
use crate::eval::{bss_eval_clips, EvalScores, DEFAULT_FILTER_LENGTH};
use crate::nmf::{nmf_fit_dictionary, supervised_nmf_fit_with, FitOptions};
use crate::ntf::{
    fit_dnmf, fit_dntf_sparse, posterior_mask, source_direction_summary, summarize_directions,
    DenseDirectionalObservation, MaskMode, SourceDirection, SparseDirectionalObservation,
};
use crate::separation::{apply_mask, ideal_binary_mask, ideal_ratio_mask, SeparationMask};
use crate::spectral::{normalize_magnitude, stft, stft_channels, AudioClip, StftConfig};
use crate::synth::SyntheticClip;
use crate::wav::read_wav;
use crate::Exec;

const PEAK: f64 = 0.9;

/// The mixture, the array it was "recorded" with and the per-source images
/// at microphone 0, all under one gain.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureScene {
    pub mixture: AudioClip,
    pub geometry: ArrayGeometry,
    pub ground_truth: Vec<AudioClip>,
    /// Gain applied to every channel and reference.
    pub gain: f64,
}

fn delayed(x: &[f64]) -> impl Iterator<Item = f64> + '_ {
    std::iter::once(0.0).chain(x[..x.len().saturating_sub(1)].iter().copied())
}

/// Unnormalized channels: `s1+s2`, `delay(s1)+s2`, `s1+delay(s2)`.
pub fn mix_channels(s1: &[f64], s2: &[f64]) -> [Vec<f64>; 3] {
    assert_eq!(s1.len(), s2.len());
    let ch0 = s1.iter().zip(s2).map(|(a, b)| a + b).collect();
    let ch1 = delayed(s1).zip(s2).map(|(a, b)| a + b).collect();
    let ch2 = s1.iter().zip(delayed(s2)).map(|(a, b)| a + b).collect();
    [ch0, ch1, ch2]
}

fn mono_samples(clip: &AudioClip, which: &str) -> Result<Vec<f64>> {
    if clip.num_channels() != 1 {
        return Err(Error::InvalidArgument(format!("{which} must be mono, got {} channels", clip.num_channels())));
    }
    Ok(clip.channel(0).to_vec())
}

/// Builds the scene of two sources arriving along the -x and -y axes of a
/// right-triangle array whose legs are one sample of travel. The shorter
/// clip is zero-padded to the longer one.
pub fn synthesize_mixture(s1: &AudioClip, s2: &AudioClip) -> Result<MixtureScene> {
    synthesize_mixture_with(s1, s2, DEFAULT_SPEED_OF_SOUND)
}

pub fn synthesize_mixture_with(s1: &AudioClip, s2: &AudioClip, speed_of_sound: f64) -> Result<MixtureScene> {
    if s1.sample_rate() != s2.sample_rate() {
        return Err(Error::SampleRateMismatch(s1.sample_rate(), s2.sample_rate()));
    }
    let sr = s1.sample_rate();
    let mut a = mono_samples(s1, "first source")?;
    let mut b = mono_samples(s2, "second source")?;
    let len = a.len().max(b.len());
    a.resize(len, 0.0);
    b.resize(len, 0.0);

    let channels = mix_channels(&a, &b);
    let peak = channels.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.0 { PEAK / peak } else { 1.0 };
    let scaled = |x: &[f64]| x.iter().map(|v| v * gain).collect::<Vec<_>>();

    Ok(MixtureScene {
        mixture: AudioClip::new(channels.iter().map(|c| scaled(c)).collect(), sr)?,
        geometry: ArrayGeometry::one_sample_triangle(sr, speed_of_sound),
        ground_truth: vec![AudioClip::mono(scaled(&a), sr)?, AudioClip::mono(scaled(&b), sr)?],
        gain,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Dntf,
    Dnmf,
    Supervised,
    Irm,
    Ibm,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [Algorithm::Dntf, Algorithm::Dnmf, Algorithm::Supervised, Algorithm::Irm, Algorithm::Ibm];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dntf => "dntf",
            Algorithm::Dnmf => "dnmf",
            Algorithm::Supervised => "supervised",
            Algorithm::Irm => "irm",
            Algorithm::Ibm => "ibm",
        }
    }

    /// Row label in the printed table.
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Dntf => "Directional NTF",
            Algorithm::Dnmf => "Directional NMF",
            Algorithm::Supervised => "Supervised NMF",
            Algorithm::Irm => "Ideal ratio mask",
            Algorithm::Ibm => "Ideal binary mask",
        }
    }

    pub fn is_oracle(self) -> bool {
        matches!(self, Algorithm::Irm | Algorithm::Ibm)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}")))
    }
}

/// A clip given either as a WAV path or as a synthetic speaker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClipSource {
    Path(PathBuf),
    Synthetic { synthetic: SyntheticClip },
}

impl ClipSource {
    pub fn load(&self) -> Result<AudioClip> {
        match self {
            ClipSource::Path(p) => read_wav(p),
            ClipSource::Synthetic { synthetic } => synthetic.render(),
        }
    }

    fn resolve(&mut self, base: &Path) {
        if let ClipSource::Path(p) = self {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Model and decoding parameters shared by the blind and supervised paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationParams {
    pub num_sources: usize,
    pub num_atoms: usize,
    pub num_directions: usize,
    pub iterations: usize,
    pub seed: u64,
    pub stft: StftConfig,
    pub mask_mode: MaskMode,
    pub exec: Exec,
}

impl Default for SeparationParams {
    fn default() -> Self {
        Self {
            num_sources: 2,
            num_atoms: 20,
            num_directions: 24,
            iterations: 200,
            seed: 0,
            stft: StftConfig::default(),
            mask_mode: MaskMode::default(),
            exec: Exec::Sequential,
        }
    }
}

impl SeparationParams {
    fn fit_options(&self) -> FitOptions {
        FitOptions { exec: self.exec, ..FitOptions::iterations(self.iterations) }
    }
}

/// Output of one separation run.
#[derive(Debug, Clone)]
pub struct Separation {
    pub estimates: Vec<AudioClip>,
    pub mask: SeparationMask,
    /// Fitted parameters as JSON; `None` for oracle masks.
    pub model_json: Option<String>,
    /// Per-source direction summaries for the directional models.
    pub directions: Option<Vec<SourceDirection>>,
    pub iterations: usize,
    pub seconds: f64,
}

impl Separation {
    pub fn seconds_per_iteration(&self) -> Option<f64> {
        (self.iterations > 0).then(|| self.seconds / self.iterations as f64)
    }
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Blind separation of a multichannel mixture with directional NTF or the
/// directional NMF baseline.
pub fn separate_directional(
    mixture: &AudioClip,
    geometry: &ArrayGeometry,
    algorithm: Algorithm,
    params: &SeparationParams,
) -> Result<Separation> {
    if geometry.num_mics() != mixture.num_channels() {
        return Err(Error::ShapeMismatch(format!(
            "geometry has {} microphones, mixture {} channels",
            geometry.num_mics(),
            mixture.num_channels()
        )));
    }
    let grids = stft_channels(mixture, &params.stft)?;
    let solver = design_doa_solver(geometry)?;
    let field = direction_field(&solver, &grids, params.num_directions)?;
    let p = normalize_magnitude(&grids[0])?;
    let obs = SparseDirectionalObservation::new(p.clone(), field)?;
    let opts = params.fit_options();

    let start = Instant::now();
    let (mask, model_json, directions, iterations) = match algorithm {
        Algorithm::Dntf => {
            let fit = fit_dntf_sparse(&obs, params.num_sources, params.num_atoms, params.seed, &opts)?;
            let mask = posterior_mask(&fit.model, &obs, params.mask_mode)?;
            let json = fit.model.to_json(Some(params.mask_mode))?;
            (mask, json, source_direction_summary(&fit.model), fit.iterations)
        }
        Algorithm::Dnmf => {
            let dense = DenseDirectionalObservation::from_sparse(&obs)?;
            let fit = fit_dnmf(&dense, params.num_sources, params.seed, &opts)?;
            let mask = fit.model.posterior_mask(&dense, params.mask_mode)?;
            let dirs = summarize_directions(fit.model.dir(), dense.bins(), params.num_directions);
            let json = serde_json::to_string_pretty(&json!({
                "kind": "dnmf",
                "seed": fit.model.seed,
                "iterations": fit.model.iterations,
                "mask_mode": params.mask_mode,
                "direction_bins": dense.bins(),
                "dir": rows(fit.model.dir()),
                "joint": fit.model.joint().outer_iter().map(|j| rows(&j.to_owned())).collect::<Vec<_>>(),
            }))?;
            (mask, json, dirs, fit.iterations)
        }
        other => return Err(Error::InvalidArgument(format!("{other} is not a directional algorithm"))),
    };
    let seconds = start.elapsed().as_secs_f64();
    let estimates = apply_mask(&grids[0], &mask, &p)?;
    Ok(Separation { estimates, mask, model_json: Some(model_json), directions: Some(directions), iterations, seconds })
}

/// Supervised NMF on channel 0: one dictionary per training clip, then
/// activations against the fixed dictionaries.
pub fn separate_supervised(mixture: &AudioClip, training: &[AudioClip], params: &SeparationParams) -> Result<Separation> {
    if training.is_empty() {
        return Err(Error::Config("supervised separation needs one training clip per source".into()));
    }
    let grid = stft(mixture.channel(0), mixture.sample_rate(), &params.stft)?;
    let p = normalize_magnitude(&grid)?;
    let dicts = training
        .iter()
        .enumerate()
        .map(|(i, clip)| {
            if clip.sample_rate() != mixture.sample_rate() {
                return Err(Error::SampleRateMismatch(mixture.sample_rate(), clip.sample_rate()));
            }
            let g = stft(clip.channel(0), clip.sample_rate(), &params.stft)?;
            nmf_fit_dictionary(&normalize_magnitude(&g)?, params.num_atoms, params.iterations, params.seed.wrapping_add(i as u64 + 1))
        })
        .collect::<Result<Vec<_>>>()?;

    let start = Instant::now();
    let fit = supervised_nmf_fit_with(&p, &dicts, params.seed, &params.fit_options())?;
    let seconds = start.elapsed().as_secs_f64();
    let mask = fit.model.mask();
    let json = serde_json::to_string_pretty(&json!({
        "kind": "supervised",
        "seed": fit.model.seed,
        "iterations": fit.model.iterations,
        "weights": fit.model.weights(),
        "dicts": fit.model.dicts().iter().map(rows).collect::<Vec<_>>(),
        "activations": fit.model.activations().iter().map(rows).collect::<Vec<_>>(),
    }))?;
    let estimates = apply_mask(&grid, &mask, &p)?;
    Ok(Separation { estimates, mask, model_json: Some(json), directions: None, iterations: fit.iterations, seconds })
}

/// Oracle masks computed from the true source images at microphone 0.
pub fn separate_oracle(mixture: &AudioClip, references: &[AudioClip], algorithm: Algorithm, stft_cfg: &StftConfig) -> Result<Separation> {
    let start = Instant::now();
    let grid = stft(mixture.channel(0), mixture.sample_rate(), stft_cfg)?;
    let p = normalize_magnitude(&grid)?;
    let refs = references
        .iter()
        .map(|r| stft(r.channel(0), r.sample_rate(), stft_cfg))
        .collect::<Result<Vec<_>>>()?;
    let mask = match algorithm {
        Algorithm::Irm => ideal_ratio_mask(&refs)?,
        Algorithm::Ibm => ideal_binary_mask(&refs)?,
        other => return Err(Error::InvalidArgument(format!("{other} is not an oracle mask"))),
    };
    let estimates = apply_mask(&grid, &mask, &p)?;
    Ok(Separation { estimates, mask, model_json: None, directions: None, iterations: 0, seconds: start.elapsed().as_secs_f64() })
}

fn default_seed() -> u64 {
    0
}
fn default_sources() -> usize {
    2
}
fn default_atoms() -> usize {
    20
}
fn default_directions() -> usize {
    24
}
fn default_iterations() -> usize {
    200
}
fn default_algorithms() -> Vec<Algorithm> {
    Algorithm::ALL.to_vec()
}
fn default_filter_length() -> usize {
    DEFAULT_FILTER_LENGTH
}
fn default_speed() -> f64 {
    DEFAULT_SPEED_OF_SOUND
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Exactly two clips; the first arrives along -x, the second along -y.
    pub source_paths: Vec<ClipSource>,
    /// One clean clip per source, needed only by the supervised baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_paths: Option<Vec<ClipSource>>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_sources", alias = "S")]
    pub num_sources: usize,
    #[serde(default = "default_atoms", alias = "Z")]
    pub num_atoms: usize,
    #[serde(default = "default_directions", alias = "D")]
    pub num_directions: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub stft: StftConfig,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub mask_mode: MaskMode,
    #[serde(default = "default_filter_length")]
    pub filter_length: usize,
    #[serde(default = "default_speed")]
    pub speed_of_sound: f64,
    /// Let per-source work use the rayon pool. Scores do not change.
    #[serde(default)]
    pub parallel: bool,
}

impl ExperimentConfig {
    /// Default parameters for the given sources.
    pub fn new(source_paths: Vec<ClipSource>) -> Self {
        Self {
            source_paths,
            training_paths: None,
            seed: 0,
            num_sources: 2,
            num_atoms: 20,
            num_directions: 24,
            iterations: 200,
            stft: StftConfig::default(),
            algorithms: default_algorithms(),
            mask_mode: MaskMode::default(),
            filter_length: DEFAULT_FILTER_LENGTH,
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
            parallel: false,
        }
    }

    /// Parses a JSON config; relative clip paths are taken relative to the
    /// file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.source_paths.iter_mut().for_each(|c| c.resolve(base));
        if let Some(t) = cfg.training_paths.as_mut() {
            t.iter_mut().for_each(|c| c.resolve(base));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.source_paths.len() != 2 {
            return Err(Error::Config(format!("need exactly 2 sources, got {}", self.source_paths.len())));
        }
        if self.num_sources != 2 {
            return Err(Error::Config("the two-source scene needs num_sources = 2".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms requested".into()));
        }
        let all = self.source_paths.iter().chain(self.training_paths.iter().flatten());
        for c in all {
            if let ClipSource::Path(p) = c {
                if !p.exists() {
                    return Err(Error::Config(format!("{} does not exist", p.display())));
                }
            }
        }
        if self.algorithms.contains(&Algorithm::Supervised) {
            match &self.training_paths {
                Some(t) if t.len() == self.num_sources => {}
                Some(t) => {
                    return Err(Error::Config(format!("supervised needs {} training clips, got {}", self.num_sources, t.len())))
                }
                None => return Err(Error::Config("supervised requires training_paths".into())),
            }
        }
        self.stft.validate()?;
        if self.filter_length == 0 {
            return Err(Error::Config("filter_length must be positive".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> SeparationParams {
        SeparationParams {
            num_sources: self.num_sources,
            num_atoms: self.num_atoms,
            num_directions: self.num_directions,
            iterations: self.iterations,
            seed: self.seed,
            stft: self.stft,
            mask_mode: self.mask_mode,
            exec: if self.parallel { Exec::Parallel } else { Exec::Sequential },
        }
    }
}

#[derive(Debug, Clone)]
pub struct AlgorithmResult {
    pub algorithm: Algorithm,
    pub scores: EvalScores,
    pub separation: Separation,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub scene: MixtureScene,
    pub results: Vec<AlgorithmResult>,
}

impl ExperimentReport {
    pub fn get(&self, algorithm: Algorithm) -> Option<&AlgorithmResult> {
        self.results.iter().find(|r| r.algorithm == algorithm)
    }

    /// `{algorithm: {sdr_mean, sdr_min, ..., seconds_per_iteration}}`;
    /// oracle rows have a null time.
    pub fn to_json_value(&self) -> Value {
        let mut map = serde_json::Map::new();
        for r in &self.results {
            let s = &r.scores;
            map.insert(
                r.algorithm.name().into(),
                json!({
                    "sdr_mean": s.sdr.mean,
                    "sdr_min": s.sdr.min,
                    "sir_mean": s.sir.mean,
                    "sir_min": s.sir.min,
                    "sar_mean": s.sar.mean,
                    "sar_min": s.sar.min,
                    "seconds_per_iteration": r.separation.seconds_per_iteration(),
                }),
            );
        }
        Value::Object(map)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_json_value())?)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<20} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>10}\n",
            "Algorithm", "SDR", "minSDR", "SIR", "minSIR", "SAR", "minSAR", "s/iter"
        );
        for r in &self.results {
            let s = &r.scores;
            let time = r.separation.seconds_per_iteration().map_or("N/A".to_string(), |t| format!("{t:.4}"));
            out += &format!(
                "{:<20} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>10}\n",
                r.algorithm.label(),
                s.sdr.mean,
                s.sdr.min,
                s.sir.mean,
                s.sir.min,
                s.sar.mean,
                s.sar.min,
                time
            );
        }
        out
    }
}

/// Runs every requested algorithm on a prepared scene.
pub fn run_scene(
    scene: &MixtureScene,
    algorithms: &[Algorithm],
    training: Option<&[AudioClip]>,
    params: &SeparationParams,
    filter_length: usize,
) -> Result<Vec<AlgorithmResult>> {
    algorithms
        .iter()
        .map(|&algorithm| {
            log::info!("running {algorithm}");
            let separation = match algorithm {
                Algorithm::Dntf | Algorithm::Dnmf => separate_directional(&scene.mixture, &scene.geometry, algorithm, params)?,
                Algorithm::Supervised => separate_supervised(
                    &scene.mixture,
                    training.ok_or_else(|| Error::Config("supervised requires training clips".into()))?,
                    params,
                )?,
                Algorithm::Irm | Algorithm::Ibm => separate_oracle(&scene.mixture, &scene.ground_truth, algorithm, &params.stft)?,
            };
            let scores = bss_eval_clips(&scene.ground_truth, &separation.estimates, filter_length)?;
            Ok(AlgorithmResult { algorithm, scores, separation })
        })
        .collect()
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let sources = config.source_paths.iter().map(ClipSource::load).collect::<Result<Vec<_>>>()?;
    let scene = synthesize_mixture_with(&sources[0], &sources[1], config.speed_of_sound)?;
    let training = match (&config.training_paths, config.algorithms.contains(&Algorithm::Supervised)) {
        (Some(t), true) => Some(t.iter().map(ClipSource::load).collect::<Result<Vec<_>>>()?),
        _ => None,
    };
    let results = run_scene(&scene, &config.algorithms, training.as_deref(), &config.params(), config.filter_length)?;
    Ok(ExperimentReport { scene, results })
}

/// Per-source share of the mixture energy at microphone 0 (diagnostic).
pub fn energy_shares(scene: &MixtureScene) -> Vec<f64> {
    let e: Vec<f64> = scene.ground_truth.iter().map(|c| c.channel(0).iter().map(|v| v * v).sum()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|v| if total > 0.0 { v / total } else { 0.0 }).collect()
}

/// Histogram of direction indices over bins where one source dominates the
/// other by `margin_db`; row `s` counts bins dominated by source `s`.
pub fn dominant_direction_histogram(scene: &MixtureScene, stft_cfg: &StftConfig, num_dirs: usize, margin_db: f64) -> Result<Array2<usize>> {
    let grids = stft_channels(&scene.mixture, stft_cfg)?;
    let solver = design_doa_solver(&scene.geometry)?;
    let field = direction_field(&solver, &grids, num_dirs)?;
    let refs: Vec<_> = scene
        .ground_truth
        .iter()
        .map(|r| stft(r.channel(0), r.sample_rate(), stft_cfg).map(|g| g.magnitude()))
        .collect::<Result<_>>()?;
    let ratio = 10f64.powf(margin_db / 20.0);
    let mut hist = Array2::zeros((refs.len(), num_dirs));
    for s in 0..refs.len() {
        for ((f, t), &m) in refs[s].indexed_iter() {
            let others = refs.iter().enumerate().filter(|(o, _)| *o != s).map(|(_, r)| r[[f, t]]).fold(0.0, f64::max);
            if m > 0.0 && m > ratio * others {
                hist[[s, field.get(f, t)]] += 1;
            }
        }
    }
    Ok(hist)
}

/// The most populated direction bin per row.
pub fn histogram_modes(hist: &Array2<usize>) -> Vec<usize> {
    hist.axis_iter(Axis(0))
        .map(|row| row.iter().enumerate().fold(0, |b, (i, &v)| if v > row[b] { i } else { b }))
        .collect()
}
