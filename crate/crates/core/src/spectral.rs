//! Time-domain and time-frequency representations.
//!
//! Frames are laid out so that every input sample is covered by the full
//! set of overlapping windows: the signal is zero-padded by
//! `frame_size - hop` samples at the front and up to the next frame
//! boundary at the back. With a window pair satisfying constant overlap-add
//! the inverse transform is then exact over the whole signal, not only its
//! interior.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multichannel audio with equal-length channels.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidArgument("audio clip needs at least one channel".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        let len = channels[0].len();
        if let Some((i, c)) = channels.iter().enumerate().find(|(_, c)| c.len() != len) {
            return Err(Error::LengthMismatch(format!(
                "channel {i} has {} samples, channel 0 has {len}",
                c.len()
            )));
        }
        Ok(Self { channels, sample_rate })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.channels[i]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Window {
    /// Square-root periodic Hann, used for both analysis and synthesis.
    SqrtHann,
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        (0..len)
            .map(|n| {
                let hann = 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos();
                match self {
                    Window::SqrtHann => hann.sqrt(),
                    Window::Hann => hann,
                    Window::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Window::SqrtHann => "sqrt-hann",
            Window::Hann => "hann",
            Window::Rectangular => "rectangular",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub frame_size: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { frame_size: 1024, hop: 256, window: Window::SqrtHann }
    }
}

impl StftConfig {
    pub fn new(frame_size: usize, hop: usize, window: Window) -> Result<Self> {
        let cfg = Self { frame_size, hop, window };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_size < 2 || !self.frame_size.is_multiple_of(2) {
            return Err(Error::InvalidTransform(format!(
                "frame size must be even and at least 2, got {}",
                self.frame_size
            )));
        }
        if self.hop == 0 || self.hop > self.frame_size {
            return Err(Error::InvalidTransform(format!(
                "hop must be in 1..={}, got {}",
                self.frame_size, self.hop
            )));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.frame_size / 2 + 1
    }

    fn front_pad(&self) -> usize {
        self.frame_size - self.hop
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        (len - 1 + self.front_pad()) / self.hop + 1
    }

    /// Constant value of the overlapped squared window, or an error when the
    /// overlap-add of analysis times synthesis window is not constant.
    pub fn cola_gain(&self) -> Result<f64> {
        self.validate()?;
        let w = self.window.coefficients(self.frame_size);
        let sums: Vec<f64> = (0..self.hop)
            .map(|n| (n..self.frame_size).step_by(self.hop).map(|i| w[i] * w[i]).sum())
            .collect();
        let max = sums.iter().cloned().fold(f64::MIN, f64::max);
        let min = sums.iter().cloned().fold(f64::MAX, f64::min);
        if max <= 0.0 {
            return Err(Error::NotCola { deviation: f64::INFINITY });
        }
        let deviation = (max - min) / max;
        if deviation > 1e-9 {
            return Err(Error::NotCola { deviation });
        }
        Ok(sums.iter().sum::<f64>() / sums.len() as f64)
    }
}

/// Complex STFT coefficients of one channel, `F x T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    values: Array2<Complex64>,
    config: StftConfig,
    sample_rate: u32,
    signal_len: usize,
}

impl ComplexGrid {
    pub fn from_parts(
        values: Array2<Complex64>,
        config: StftConfig,
        sample_rate: u32,
        signal_len: usize,
    ) -> Result<Self> {
        config.validate()?;
        let (f, t) = values.dim();
        if f != config.num_bins() {
            return Err(Error::ShapeMismatch(format!(
                "grid has {f} bins, frame size {} implies {}",
                config.frame_size,
                config.num_bins()
            )));
        }
        if signal_len == 0 || t != config.num_frames(signal_len) {
            return Err(Error::ShapeMismatch(format!(
                "grid has {t} frames, inconsistent with a signal of {signal_len} samples"
            )));
        }
        Ok(Self { values, config, sample_rate, signal_len })
    }

    /// Same transform parameters, new coefficients.
    pub fn with_values(&self, values: Array2<Complex64>) -> Result<Self> {
        Self::from_parts(values, self.config, self.sample_rate, self.signal_len)
    }

    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn num_bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_frames(&self) -> usize {
        self.values.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Magnitudes `|G(f,t)|`.
    pub fn magnitude(&self) -> Array2<f64> {
        self.values.mapv(|c| c.norm())
    }
}

struct Transform {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Transform {
    fn new(config: &StftConfig) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(config.frame_size),
            inverse: planner.plan_fft_inverse(config.frame_size),
            window: config.window.coefficients(config.frame_size),
        }
    }
}

/// Short-time Fourier transform of a single channel.
pub fn stft(signal: &[f64], sample_rate: u32, config: &StftConfig) -> Result<ComplexGrid> {
    config.validate()?;
    let n = config.frame_size;
    if signal.len() < n {
        return Err(Error::SignalTooShort { len: signal.len(), frame_size: n });
    }
    let tr = Transform::new(config);
    let frames = config.num_frames(signal.len());
    let bins = config.num_bins();
    let pad = config.front_pad() as isize;
    let mut values = Array2::<Complex64>::zeros((bins, frames));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..frames {
        let start = t as isize * config.hop as isize - pad;
        for (i, b) in buf.iter_mut().enumerate() {
            let idx = start + i as isize;
            let x = if idx >= 0 && (idx as usize) < signal.len() { signal[idx as usize] } else { 0.0 };
            *b = Complex64::new(x * tr.window[i], 0.0);
        }
        tr.forward.process(&mut buf);
        for f in 0..bins {
            values[[f, t]] = buf[f];
        }
    }
    Ok(ComplexGrid { values, config: *config, sample_rate, signal_len: signal.len() })
}

/// STFT of every channel of a clip.
pub fn stft_channels(clip: &AudioClip, config: &StftConfig) -> Result<Vec<ComplexGrid>> {
    clip.channels()
        .iter()
        .map(|c| stft(c, clip.sample_rate(), config))
        .collect()
}

/// Weighted overlap-add inverse of [`stft`], trimmed to the original length.
pub fn istft(grid: &ComplexGrid) -> Result<AudioClip> {
    let samples = istft_samples(grid)?;
    AudioClip::mono(samples, grid.sample_rate)
}

pub fn istft_samples(grid: &ComplexGrid) -> Result<Vec<f64>> {
    let config = &grid.config;
    let gain = config.cola_gain()?;
    let n = config.frame_size;
    let tr = Transform::new(config);
    let pad = config.front_pad();
    let frames = grid.num_frames();
    let mut out = vec![0.0; pad + (frames - 1) * config.hop + n];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let norm = 1.0 / (n as f64 * gain);
    for t in 0..frames {
        fill_hermitian(grid.values.column(t).iter().copied(), &mut buf);
        tr.inverse.process(&mut buf);
        let start = t * config.hop;
        for (i, b) in buf.iter().enumerate() {
            out[start + i] += b.re * tr.window[i] * norm;
        }
    }
    Ok(out[pad..pad + grid.signal_len].to_vec())
}

fn fill_hermitian(half: impl Iterator<Item = Complex64>, buf: &mut [Complex64]) {
    let n = buf.len();
    for (f, c) in half.enumerate() {
        buf[f] = c;
    }
    // DC and Nyquist bins of a real signal carry no imaginary part.
    buf[0].im = 0.0;
    buf[n / 2].im = 0.0;
    for f in 1..n / 2 {
        buf[n - f] = buf[f].conj();
    }
}

/// Nonnegative `F x T` distribution plus the mass needed to undo normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    p: Array2<f64>,
    scale: f64,
}

impl Spectrogram {
    /// Normalizes an arbitrary nonnegative array into a spectrogram.
    pub fn from_magnitudes(mag: Array2<f64>) -> Result<Self> {
        if mag.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidArgument("magnitudes must be finite and nonnegative".into()));
        }
        let scale: f64 = mag.sum();
        if scale <= 0.0 {
            return Err(Error::EmptySpectrogram);
        }
        Ok(Self { p: mag / scale, scale })
    }

    pub fn p(&self) -> &Array2<f64> {
        &self.p
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.p.view()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dim(&self) -> (usize, usize) {
        self.p.dim()
    }
}

/// `p = |grid| / sum |grid|`.
pub fn normalize_magnitude(grid: &ComplexGrid) -> Result<Spectrogram> {
    Spectrogram::from_magnitudes(grid.magnitude())
}
