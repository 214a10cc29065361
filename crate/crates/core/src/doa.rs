//! Per-bin direction of arrival from inter-microphone phase differences.
//!
//! For a plane wave with wave vector `k`, the phase at microphone `i`
//! relative to microphone 0 is `(x_i - x_0) . k`. Stacking these equations
//! for all microphones gives an overdetermined linear system whose matrix
//! depends only on the array geometry, so its pseudoinverse is computed once
//! and every bin costs one small matrix-vector product.
//!
//! Azimuths are reported as the direction of `k` itself. With the phase
//! convention of [`crate::spectral::stft`], a source whose signal reaches the
//! microphone at `(delta, 0)` one sample later than the origin has azimuth
//! `pi`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::ComplexGrid;

pub const DEFAULT_SPEED_OF_SOUND: f64 = 340.29;

fn default_speed_of_sound() -> f64 {
    DEFAULT_SPEED_OF_SOUND
}

/// Microphone positions in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub positions: Vec<Vec<f64>>,
    #[serde(default = "default_speed_of_sound")]
    pub speed_of_sound: f64,
}

impl ArrayGeometry {
    pub fn new(positions: Vec<Vec<f64>>, speed_of_sound: f64) -> Result<Self> {
        let g = Self { positions, speed_of_sound };
        g.validate()?;
        Ok(g)
    }

    /// Microphones at `(0,0)`, `(delta,0)` and `(0,delta)`.
    pub fn right_triangle(delta: f64, speed_of_sound: f64) -> Self {
        Self {
            positions: vec![vec![0.0, 0.0], vec![delta, 0.0], vec![0.0, delta]],
            speed_of_sound,
        }
    }

    /// The right triangle whose leg is the distance sound travels in one sample.
    pub fn one_sample_triangle(sample_rate: u32, speed_of_sound: f64) -> Self {
        Self::right_triangle(speed_of_sound / sample_rate as f64, speed_of_sound)
    }

    pub fn num_mics(&self) -> usize {
        self.positions.len()
    }

    pub fn dim(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidGeometry(format!("positions must be 2-D or 3-D, got {dim}-D")));
        }
        if self.positions.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidGeometry("positions have mixed dimensions".into()));
        }
        if self.positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGeometry("positions must be finite".into()));
        }
        if !self.speed_of_sound.is_finite() || self.speed_of_sound <= 0.0 {
            return Err(Error::InvalidGeometry("speed of sound must be positive".into()));
        }
        if self.num_mics() < dim + 1 {
            return Err(Error::DegenerateGeometry);
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let g: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        g.validate()?;
        Ok(g)
    }

    /// `(M-1) x dim` matrix with rows `x_i - x_0`.
    pub fn difference_matrix(&self) -> DMatrix<f64> {
        let m = self.num_mics();
        let dim = self.dim();
        DMatrix::from_fn(m - 1, dim, |i, j| self.positions[i + 1][j] - self.positions[0][j])
    }
}

/// Wave vector estimate in radians per meter.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveVector(pub Vec<f64>);

impl WaveVector {
    /// Azimuth of the horizontal component in `[0, 2pi)`.
    pub fn azimuth(&self) -> f64 {
        wrap_angle(self.0[1].atan2(self.0[0]))
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w >= 2.0 * PI {
        0.0
    } else {
        w
    }
}

/// Precomputed least-squares solver for one array geometry.
#[derive(Debug, Clone)]
pub struct DoaSolver {
    diffs: DMatrix<f64>,
    pinv: DMatrix<f64>,
}

/// Builds the solver, failing when the position differences do not span the
/// full space.
pub fn design_doa_solver(geometry: &ArrayGeometry) -> Result<DoaSolver> {
    geometry.validate()?;
    let diffs = geometry.difference_matrix();
    let svd = diffs.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax.is_nan() || smax <= 0.0 || smin <= 1e-9 * smax {
        return Err(Error::DegenerateGeometry);
    }
    let pinv = svd.pseudo_inverse(1e-12 * smax).map_err(|_| Error::DegenerateGeometry)?;
    Ok(DoaSolver { diffs, pinv })
}

impl DoaSolver {
    pub fn pinv(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    pub fn differences(&self) -> &DMatrix<f64> {
        &self.diffs
    }

    pub fn num_mics(&self) -> usize {
        self.diffs.nrows() + 1
    }

    pub fn dim(&self) -> usize {
        self.diffs.ncols()
    }

    /// Least-squares wave vector for one time-frequency bin. Returns `None`
    /// when a channel is exactly zero and its phase is undefined.
    pub fn estimate(&self, bin: &[Complex64]) -> Option<WaveVector> {
        assert_eq!(bin.len(), self.num_mics(), "one coefficient per microphone");
        if bin.iter().any(|y| y.norm_sqr() == 0.0) {
            return None;
        }
        let reference = bin[0].conj();
        // arg() of the product is already wrapped to (-pi, pi].
        let phases = DVector::from_iterator(bin.len() - 1, bin[1..].iter().map(|y| (y * reference).arg()));
        Some(self.solve(&phases))
    }

    /// Applies the pseudoinverse to a vector of phase differences.
    pub fn solve(&self, phase_differences: &DVector<f64>) -> WaveVector {
        WaveVector((&self.pinv * phase_differences).iter().copied().collect())
    }
}

pub fn estimate_doa(solver: &DoaSolver, bin: &[Complex64]) -> Option<WaveVector> {
    solver.estimate(bin)
}

/// Maps the azimuth of `k` onto one of `num_dirs` equal arcs; `k = 0` is bin 0.
pub fn quantize_direction(k: &WaveVector, num_dirs: usize) -> usize {
    assert!(num_dirs >= 1, "need at least one direction bin");
    quantize_azimuth(k.azimuth(), num_dirs)
}

pub fn quantize_azimuth(azimuth: f64, num_dirs: usize) -> usize {
    let a = wrap_angle(azimuth);
    ((num_dirs as f64 * a / (2.0 * PI)).floor() as usize).min(num_dirs - 1)
}

/// Center azimuth of a direction bin.
pub fn bin_center(bin: usize, num_dirs: usize) -> f64 {
    (bin as f64 + 0.5) * 2.0 * PI / num_dirs as f64
}

/// Quantized direction index for every time-frequency bin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionField {
    num_directions: usize,
    d: Array2<usize>,
}

#[derive(Serialize, Deserialize)]
struct DirectionFieldJson {
    num_directions: usize,
    rows: usize,
    cols: usize,
    d: Vec<Vec<usize>>,
}

impl DirectionField {
    pub fn new(d: Array2<usize>, num_directions: usize) -> Result<Self> {
        if num_directions == 0 {
            return Err(Error::InvalidDimension("direction count must be at least 1".into()));
        }
        if let Some(&bad) = d.iter().find(|&&v| v >= num_directions) {
            return Err(Error::InvalidArgument(format!(
                "direction index {bad} out of range for {num_directions} bins"
            )));
        }
        Ok(Self { num_directions, d })
    }

    pub fn num_directions(&self) -> usize {
        self.num_directions
    }

    pub fn indices(&self) -> &Array2<usize> {
        &self.d
    }

    pub fn dim(&self) -> (usize, usize) {
        self.d.dim()
    }

    pub fn get(&self, f: usize, t: usize) -> usize {
        self.d[[f, t]]
    }

    pub fn to_json(&self) -> Result<String> {
        let (rows, cols) = self.d.dim();
        let j = DirectionFieldJson {
            num_directions: self.num_directions,
            rows,
            cols,
            d: self.d.rows().into_iter().map(|r| r.to_vec()).collect(),
        };
        Ok(serde_json::to_string(&j)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: DirectionFieldJson = serde_json::from_str(s)?;
        if j.d.len() != j.rows || j.d.iter().any(|r| r.len() != j.cols) {
            return Err(Error::ShapeMismatch("direction matrix does not match its header".into()));
        }
        let flat: Vec<usize> = j.d.into_iter().flatten().collect();
        let d = Array2::from_shape_vec((j.rows, j.cols), flat)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(d, j.num_directions)
    }

    /// One line per frequency bin, comma-separated frame values.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.d.rows() {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(',');
                }
                first = false;
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Estimates and quantizes the direction of every bin of a multichannel STFT.
///
/// Bins where some channel is exactly zero take the direction of the nearest
/// reliable frame at the same frequency (earlier frame on ties), or bin 0 if
/// the whole frequency row is unreliable.
pub fn direction_field(solver: &DoaSolver, grids: &[ComplexGrid], num_dirs: usize) -> Result<DirectionField> {
    if num_dirs == 0 {
        return Err(Error::InvalidDimension("direction count must be at least 1".into()));
    }
    if grids.len() != solver.num_mics() {
        return Err(Error::ShapeMismatch(format!(
            "{} channel grids for a {}-microphone array",
            grids.len(),
            solver.num_mics()
        )));
    }
    let (nf, nt) = grids[0].dim();
    if grids.iter().any(|g| g.dim() != (nf, nt)) {
        return Err(Error::ShapeMismatch("channel grids differ in shape".into()));
    }

    let mut d = Array2::zeros((nf, nt));
    let mut bin = vec![Complex64::new(0.0, 0.0); grids.len()];
    let mut row: Vec<Option<usize>> = vec![None; nt];
    for f in 0..nf {
        for (t, slot) in row.iter_mut().enumerate() {
            for (b, g) in bin.iter_mut().zip(grids) {
                *b = g.values()[[f, t]];
            }
            *slot = solver.estimate(&bin).map(|k| quantize_direction(&k, num_dirs));
        }
        fill_unreliable(&row, d.row_mut(f).as_slice_mut().expect("standard layout"));
    }
    DirectionField::new(d, num_dirs)
}

fn fill_unreliable(row: &[Option<usize>], out: &mut [usize]) {
    let n = row.len();
    // Distance to the closest reliable frame on each side.
    let mut prev: Vec<Option<usize>> = vec![None; n];
    let mut last = None;
    for t in 0..n {
        if row[t].is_some() {
            last = Some(t);
        }
        prev[t] = last;
    }
    let mut next = None;
    for t in (0..n).rev() {
        if row[t].is_some() {
            next = Some(t);
        }
        let pick = match (prev[t], next) {
            (Some(p), Some(q)) => Some(if t - p <= q - t { p } else { q }),
            (Some(p), None) => Some(p),
            (None, Some(q)) => Some(q),
            (None, None) => None,
        };
        out[t] = pick.and_then(|i| row[i]).unwrap_or(0);
    }
}
