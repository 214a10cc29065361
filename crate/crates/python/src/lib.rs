//! Python bindings. Signals, spectrograms and masks cross the boundary as
//! nested lists of floats; direction fields as nested lists of ints.

use dirsep::doa::{design_doa_solver, direction_field as compute_field, ArrayGeometry, DEFAULT_SPEED_OF_SOUND};
use dirsep::eval::DEFAULT_FILTER_LENGTH;
use dirsep::harness::{separate_directional as separate_clip, Algorithm, SeparationParams};
use dirsep::nmf::FitOptions;
use dirsep::ntf::{dntf_update_sparse, fit_dntf_sparse};
use dirsep::spectral::{istft_samples, stft_channels};
use dirsep::synth::{speech_like as render_speech, SpeakerProfile};
use dirsep::{AudioClip, ComplexGrid, DirectionField, MaskMode, Spectrogram, SparseDirectionalObservation, StftConfig, Window};
use ndarray::{Array2, Array3};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(dirsep_py, DirsepError, PyValueError, "Raised for invalid input or a failed computation.");

fn err(e: dirsep::Error) -> PyErr {
    DirsepError::new_err(e.to_string())
}

/// Rectangular nested list to array; ragged input is rejected.
pub fn to_array<T: Clone>(rows: Vec<Vec<T>>, what: &str) -> Result<Array2<T>, String> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(format!("{what} is empty"));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(format!("{what} row {i} has {} entries, expected {ncols}", rows[i].len()));
    }
    let nrows = rows.len();
    Array2::from_shape_vec((nrows, ncols), rows.into_iter().flatten().collect()).map_err(|e| e.to_string())
}

pub fn to_rows<T: Clone>(a: &Array2<T>) -> Vec<Vec<T>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn to_rows3(a: &Array3<f64>) -> Vec<Vec<Vec<f64>>> {
    a.outer_iter().map(|m| m.rows().into_iter().map(|r| r.to_vec()).collect()).collect()
}

fn array<T: Clone>(rows: Vec<Vec<T>>, what: &str) -> PyResult<Array2<T>> {
    to_array(rows, what).map_err(PyValueError::new_err)
}

fn stft_config(frame_size: usize, hop: usize) -> PyResult<StftConfig> {
    StftConfig::new(frame_size, hop, Window::SqrtHann).map_err(err)
}

fn mask_mode(name: &str) -> PyResult<MaskMode> {
    name.parse().map_err(err)
}

fn observation(spectrogram: Vec<Vec<f64>>, directions: Vec<Vec<usize>>, num_directions: usize) -> PyResult<SparseDirectionalObservation> {
    let p = Spectrogram::from_magnitudes(array(spectrogram, "spectrogram")?).map_err(err)?;
    let dirs = DirectionField::new(array(directions, "directions")?, num_directions).map_err(err)?;
    SparseDirectionalObservation::new(p, dirs).map_err(err)
}

fn clip(channels: Vec<Vec<f64>>, sample_rate: u32) -> PyResult<AudioClip> {
    AudioClip::new(channels, sample_rate).map_err(err)
}

/// Complex STFT of one channel, bins by frames.
#[pyclass(name = "Grid", module = "dirsep_py", frozen)]
pub struct PyGrid(ComplexGrid);

#[pymethods]
impl PyGrid {
    /// `(bins, frames)`.
    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    #[getter]
    fn sample_rate(&self) -> u32 {
        self.0.sample_rate()
    }

    fn magnitude(&self) -> Vec<Vec<f64>> {
        to_rows(&self.0.magnitude())
    }

    fn real(&self) -> Vec<Vec<f64>> {
        to_rows(&self.0.values().mapv(|c| c.re))
    }

    fn imag(&self) -> Vec<Vec<f64>> {
        to_rows(&self.0.values().mapv(|c| c.im))
    }

    fn __repr__(&self) -> String {
        let (f, t) = self.0.dim();
        format!("Grid(bins={f}, frames={t}, sample_rate={})", self.0.sample_rate())
    }
}

#[pyfunction]
#[pyo3(signature = (signal, sample_rate = 16000, frame_size = 1024, hop = 256))]
fn stft(signal: Vec<f64>, sample_rate: u32, frame_size: usize, hop: usize) -> PyResult<PyGrid> {
    dirsep::stft(&signal, sample_rate, &stft_config(frame_size, hop)?).map(PyGrid).map_err(err)
}

#[pyfunction]
fn istft(grid: &PyGrid) -> PyResult<Vec<f64>> {
    istft_samples(&grid.0).map_err(err)
}

/// Synthetic speech from a numbered speaker (even: low voice, odd: high).
#[pyfunction]
#[pyo3(signature = (speaker, seed, duration = 3.0, sample_rate = 16000))]
fn speech_like(speaker: u64, seed: u64, duration: f64, sample_rate: u32) -> PyResult<Vec<f64>> {
    let c = render_speech(&SpeakerProfile::numbered(speaker), duration, sample_rate, seed).map_err(err)?;
    Ok(c.into_channels().remove(0))
}

/// The two-source delay scene. Returns a dict with `mixture` (3 channels),
/// `references`, `positions` and `speed_of_sound`.
#[pyfunction]
#[pyo3(signature = (first, second, sample_rate = 16000))]
fn synthesize_mixture<'py>(py: Python<'py>, first: Vec<f64>, second: Vec<f64>, sample_rate: u32) -> PyResult<Bound<'py, PyDict>> {
    let scene = dirsep::synthesize_mixture(&clip(vec![first], sample_rate)?, &clip(vec![second], sample_rate)?).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("mixture", scene.mixture.channels().to_vec())?;
    out.set_item("references", scene.ground_truth.iter().map(|c| c.channel(0).to_vec()).collect::<Vec<_>>())?;
    out.set_item("positions", scene.geometry.positions.clone())?;
    out.set_item("speed_of_sound", scene.geometry.speed_of_sound)?;
    Ok(out)
}

fn geometry(positions: Option<Vec<Vec<f64>>>, speed_of_sound: f64, sample_rate: u32) -> PyResult<ArrayGeometry> {
    match positions {
        Some(p) => ArrayGeometry::new(p, speed_of_sound).map_err(err),
        None => Ok(ArrayGeometry::one_sample_triangle(sample_rate, speed_of_sound)),
    }
}

/// Quantized direction of every time-frequency bin of a multichannel
/// mixture. Without `positions` the three-microphone triangle of the delay
/// scene is assumed.
#[pyfunction]
#[pyo3(signature = (
    mixture, sample_rate = 16000, num_directions = 24, positions = None,
    speed_of_sound = DEFAULT_SPEED_OF_SOUND, frame_size = 1024, hop = 256,
))]
#[allow(clippy::too_many_arguments)]
fn direction_field(
    mixture: Vec<Vec<f64>>,
    sample_rate: u32,
    num_directions: usize,
    positions: Option<Vec<Vec<f64>>>,
    speed_of_sound: f64,
    frame_size: usize,
    hop: usize,
) -> PyResult<Vec<Vec<usize>>> {
    let mix = clip(mixture, sample_rate)?;
    let solver = design_doa_solver(&geometry(positions, speed_of_sound, sample_rate)?).map_err(err)?;
    let grids = stft_channels(&mix, &stft_config(frame_size, hop)?).map_err(err)?;
    let field = compute_field(&solver, &grids, num_directions).map_err(err)?;
    Ok(to_rows(field.indices()))
}

/// Directional NTF model: `dir` is `q(d,s)` (D x S), `dict` holds
/// `q(f|z,s)` (S x F x Z) and `act` holds `q(t,z|s)` (S x T x Z).
#[pyclass(name = "NtfModel", module = "dirsep_py", frozen)]
pub struct PyNtfModel(dirsep::NtfModel);

#[pymethods]
impl PyNtfModel {
    #[staticmethod]
    #[pyo3(signature = (f, t, d, s, z, seed = 0))]
    fn init(f: usize, t: usize, d: usize, s: usize, z: usize, seed: u64) -> PyResult<Self> {
        dirsep::dntf_init(f, t, d, s, z, seed).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        dirsep::NtfModel::from_json(text).map(|(m, _)| Self(m)).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json(None).map_err(err)
    }

    /// `{"f", "t", "d", "s", "z"}`.
    #[getter]
    fn dims<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = self.0.dims();
        let out = PyDict::new(py);
        for (k, v) in [("f", d.f), ("t", d.t), ("d", d.d), ("s", d.s), ("z", d.z)] {
            out.set_item(k, v)?;
        }
        Ok(out)
    }

    #[getter]
    fn dir(&self) -> Vec<Vec<f64>> {
        to_rows(self.0.dir())
    }

    #[getter]
    fn dict(&self) -> Vec<Vec<Vec<f64>>> {
        to_rows3(self.0.dict())
    }

    #[getter]
    fn act(&self) -> Vec<Vec<Vec<f64>>> {
        to_rows3(self.0.act())
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.0.iterations
    }

    /// `q(s)`.
    fn source_weights(&self) -> Vec<f64> {
        self.0.source_weights()
    }

    /// One multiplicative update against a spectrogram and direction field.
    fn update(&self, spectrogram: Vec<Vec<f64>>, directions: Vec<Vec<usize>>) -> PyResult<Self> {
        let obs = observation(spectrogram, directions, self.0.dims().d)?;
        dntf_update_sparse(&obs, &self.0).map(Self).map_err(err)
    }

    fn kl(&self, spectrogram: Vec<Vec<f64>>, directions: Vec<Vec<usize>>) -> PyResult<f64> {
        Ok(observation(spectrogram, directions, self.0.dims().d)?.kl(&self.0))
    }

    /// Per-source soft mask, S x F x T. `mode` is "conditioned" or "marginal".
    #[pyo3(signature = (spectrogram, directions, mode = "conditioned"))]
    fn mask(&self, spectrogram: Vec<Vec<f64>>, directions: Vec<Vec<usize>>, mode: &str) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let obs = observation(spectrogram, directions, self.0.dims().d)?;
        let m = dirsep::posterior_mask(&self.0, &obs, mask_mode(mode)?).map_err(err)?;
        Ok(to_rows3(m.values()))
    }

    fn __repr__(&self) -> String {
        let d = self.0.dims();
        format!("NtfModel(f={}, t={}, d={}, s={}, z={}, iterations={})", d.f, d.t, d.d, d.s, d.z, self.0.iterations)
    }
}

/// Fits directional NTF to a spectrogram (any nonnegative F x T array; it is
/// normalized) and its direction field.
#[pyfunction]
#[pyo3(signature = (spectrogram, directions, num_directions = 24, num_sources = 2, num_atoms = 20, iterations = 200, seed = 0))]
fn fit_dntf(
    spectrogram: Vec<Vec<f64>>,
    directions: Vec<Vec<usize>>,
    num_directions: usize,
    num_sources: usize,
    num_atoms: usize,
    iterations: usize,
    seed: u64,
) -> PyResult<PyNtfModel> {
    let obs = observation(spectrogram, directions, num_directions)?;
    let fit = fit_dntf_sparse(&obs, num_sources, num_atoms, seed, &FitOptions::iterations(iterations)).map_err(err)?;
    Ok(PyNtfModel(fit.model))
}

/// Blind separation of a three-channel delay-scene mixture (or any array
/// given by `positions`). Returns one signal per source.
#[pyfunction]
#[pyo3(signature = (
    mixture, sample_rate = 16000, algorithm = "dntf", num_sources = 2, num_atoms = 20,
    num_directions = 24, iterations = 200, seed = 0, mask_mode = "conditioned", positions = None,
))]
#[allow(clippy::too_many_arguments)]
fn separate(
    mixture: Vec<Vec<f64>>,
    sample_rate: u32,
    algorithm: &str,
    num_sources: usize,
    num_atoms: usize,
    num_directions: usize,
    iterations: usize,
    seed: u64,
    mask_mode: &str,
    positions: Option<Vec<Vec<f64>>>,
) -> PyResult<Vec<Vec<f64>>> {
    let algorithm: Algorithm = algorithm.parse().map_err(err)?;
    let params = SeparationParams {
        num_sources,
        num_atoms,
        num_directions,
        iterations,
        seed,
        mask_mode: self::mask_mode(mask_mode)?,
        ..SeparationParams::default()
    };
    let mix = clip(mixture, sample_rate)?;
    let geometry = geometry(positions, DEFAULT_SPEED_OF_SOUND, sample_rate)?;
    let sep = separate_clip(&mix, &geometry, algorithm, &params).map_err(err)?;
    Ok(sep.estimates.into_iter().map(|c| c.into_channels().remove(0)).collect())
}

/// BSS_EVAL scores. Returns per-reference `sdr`, `sir`, `sar` lists (in
/// reference order), the matched `permutation` and the means.
#[pyfunction]
#[pyo3(signature = (references, estimates, filter_length = DEFAULT_FILTER_LENGTH))]
fn bss_eval<'py>(
    py: Python<'py>,
    references: Vec<Vec<f64>>,
    estimates: Vec<Vec<f64>>,
    filter_length: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let scores = dirsep::bss_eval(&references, &estimates, filter_length).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("sdr", scores.sources.iter().map(|s| s.sdr).collect::<Vec<_>>())?;
    out.set_item("sir", scores.sources.iter().map(|s| s.sir).collect::<Vec<_>>())?;
    out.set_item("sar", scores.sources.iter().map(|s| s.sar).collect::<Vec<_>>())?;
    out.set_item("permutation", scores.permutation.clone())?;
    out.set_item("sdr_mean", scores.sdr.mean)?;
    out.set_item("sir_mean", scores.sir.mean)?;
    out.set_item("sar_mean", scores.sar.mean)?;
    Ok(out)
}

/// Runs the experiment described by a JSON config file and returns the
/// report as JSON text.
#[pyfunction]
fn run_experiment(config_path: &str) -> PyResult<String> {
    let cfg = dirsep::ExperimentConfig::from_file(config_path).map_err(err)?;
    cfg.validate().map_err(err)?;
    dirsep::run_experiment(&cfg).and_then(|r| r.to_json()).map_err(err)
}

#[pymodule]
fn dirsep_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DirsepError", m.py().get_type::<DirsepError>())?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyNtfModel>()?;
    m.add_function(wrap_pyfunction!(stft, m)?)?;
    m.add_function(wrap_pyfunction!(istft, m)?)?;
    m.add_function(wrap_pyfunction!(speech_like, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_mixture, m)?)?;
    m.add_function(wrap_pyfunction!(direction_field, m)?)?;
    m.add_function(wrap_pyfunction!(fit_dntf, m)?)?;
    m.add_function(wrap_pyfunction!(separate, m)?)?;
    m.add_function(wrap_pyfunction!(bss_eval, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
