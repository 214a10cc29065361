//! Synthetic test material: speech-like utterances and band-limited chords.
//!
//! An utterance is a sequence of syllables. Each syllable is an optional
//! noise burst (a fricative-like onset) followed by a voiced segment: a
//! harmonic series on a drifting fundamental, shaped by a formant envelope
//! that glides between two vowels. Speakers differ in pitch range and
//! formant scaling, while the vowel inventory is shared, so two speakers
//! overlap heavily in frequency as real talkers do.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::spectral::AudioClip;

/// First three formants (Hz) of a small vowel inventory.
const VOWELS: [[f64; 3]; 10] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [660.0, 1720.0, 2410.0],
    [440.0, 1020.0, 2240.0],
    [490.0, 1350.0, 1690.0],
    [390.0, 1990.0, 2550.0],
    [640.0, 1190.0, 2390.0],
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    /// Median fundamental in Hz.
    pub pitch_hz: f64,
    /// Multiplier applied to every formant frequency.
    pub formant_scale: f64,
    /// Syllables per second.
    pub syllable_rate: f64,
    /// Spectral tilt corner in Hz; lower values give a darker voice.
    pub tilt_hz: f64,
}

impl SpeakerProfile {
    /// A reproducible speaker. Even indices are low-pitched, odd indices
    /// high-pitched; the remaining traits are drawn from the index.
    pub fn numbered(index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + index);
        let high = index % 2 == 1;
        Self {
            pitch_hz: if high { rng.random_range(170.0..240.0) } else { rng.random_range(90.0..140.0) },
            formant_scale: if high { rng.random_range(1.08..1.2) } else { rng.random_range(0.92..1.02) },
            syllable_rate: rng.random_range(3.5..5.5),
            tilt_hz: rng.random_range(350.0..700.0),
        }
    }
}

/// Source description used by experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClip {
    pub speaker: u64,
    pub seed: u64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
}

fn default_duration() -> f64 {
    3.0
}

fn default_rate() -> u32 {
    16000
}

impl SyntheticClip {
    pub fn render(&self) -> Result<AudioClip> {
        speech_like(&SpeakerProfile::numbered(self.speaker), self.duration, self.sample_rate, self.seed)
    }
}

fn formant_gain(freq: f64, formants: &[f64; 3], scale: f64, tilt: f64) -> f64 {
    const BANDWIDTHS: [f64; 3] = [90.0, 120.0, 180.0];
    const LEVELS: [f64; 3] = [1.0, 0.6, 0.3];
    let mut g = 0.02;
    for k in 0..3 {
        let x = (freq - formants[k] * scale) / (BANDWIDTHS[k] * 0.5);
        g += LEVELS[k] / (1.0 + x * x);
    }
    g / (1.0 + freq / tilt)
}

/// Raised-cosine attack and release over `ramp` samples.
fn envelope(i: usize, len: usize, ramp: usize) -> f64 {
    let ramp = ramp.min(len / 2).max(1);
    let edge = i.min(len - 1 - i);
    if edge >= ramp {
        1.0
    } else {
        0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
    }
}

/// Second-order resonator used to color noise bursts.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(center: f64, bandwidth: f64, sample_rate: f64) -> Self {
        let r = (-PI * bandwidth / sample_rate).exp();
        let theta = 2.0 * PI * center / sample_rate;
        Self { a1: 2.0 * r * theta.cos(), a2: -r * r, gain: 1.0 - r, y1: 0.0, y2: 0.0 }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// A speech-like utterance peak-normalized to 0.5.
pub fn speech_like(profile: &SpeakerProfile, duration: f64, sample_rate: u32, seed: u64) -> Result<AudioClip> {
    let sr = sample_rate as f64;
    let total = (duration * sr).round() as usize;
    let mut out = vec![0.0; total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nyquist = 0.45 * sr;

    let mut pos = (rng.random_range(0.02..0.15) * sr) as usize;
    while pos < total {
        let syllable = (rng.random_range(0.6..1.4) / profile.syllable_rate * sr) as usize;

        // Optional unvoiced onset.
        if rng.random_bool(0.4) {
            let len = (rng.random_range(0.03..0.08) * sr) as usize;
            let center = rng.random_range(2500.0..6000.0f64).min(nyquist);
            let mut res = Resonator::new(center, rng.random_range(800.0..2000.0), sr);
            let level = rng.random_range(0.05..0.15);
            for i in 0..len {
                if pos + i >= total {
                    break;
                }
                let n: f64 = rng.random_range(-1.0..1.0);
                out[pos + i] += level * res.step(n) * 8.0 * envelope(i, len, len / 4);
            }
            pos += len;
        }

        let voiced = syllable.min(total.saturating_sub(pos));
        if voiced > 0 {
            let from = VOWELS[rng.random_range(0..VOWELS.len())];
            let to = VOWELS[rng.random_range(0..VOWELS.len())];
            let f0_start = profile.pitch_hz * rng.random_range(0.85..1.2);
            let f0_end = profile.pitch_hz * rng.random_range(0.8..1.1);
            let level = rng.random_range(0.5..1.0);
            let vibrato = rng.random_range(4.0..7.0);
            let n_harm = (nyquist / (0.8 * profile.pitch_hz)) as usize;
            let mut phases: Vec<f64> = (0..n_harm).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            let ramp = (0.025 * sr) as usize;
            for i in 0..voiced {
                let u = i as f64 / voiced as f64;
                let formants = [
                    from[0] + u * (to[0] - from[0]),
                    from[1] + u * (to[1] - from[1]),
                    from[2] + u * (to[2] - from[2]),
                ];
                let f0 = (f0_start + u * (f0_end - f0_start))
                    * (1.0 + 0.015 * (2.0 * PI * vibrato * i as f64 / sr).sin());
                let mut v = 0.0;
                for (h, ph) in phases.iter_mut().enumerate() {
                    let fh = f0 * (h + 1) as f64;
                    if fh >= nyquist {
                        break;
                    }
                    *ph += 2.0 * PI * fh / sr;
                    v += formant_gain(fh, &formants, profile.formant_scale, profile.tilt_hz) * ph.sin();
                }
                out[pos + i] += level * v * envelope(i, voiced, ramp);
            }
            for ph in phases.iter_mut() {
                *ph %= 2.0 * PI;
            }
        }
        pos += voiced;

        let pause = if rng.random_bool(0.15) { rng.random_range(0.2..0.4) } else { rng.random_range(0.02..0.12) };
        pos += (pause * sr) as usize;
    }

    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    AudioClip::mono(out, sample_rate)
}

/// Sum of sinusoids at `freqs` (Hz) gated on and off in random segments.
pub fn sine_chord(freqs: &[f64], duration: f64, sample_rate: u32, seed: u64) -> Result<AudioClip> {
    let sr = sample_rate as f64;
    let total = (duration * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<f64> = freqs.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let amps: Vec<f64> = freqs.iter().map(|_| rng.random_range(0.5..1.0)).collect();
    let mut gate = vec![0.0; total];
    let mut pos = 0;
    while pos < total {
        let len = ((rng.random_range(0.15..0.5) * sr) as usize).min(total - pos);
        let level = if rng.random_bool(0.75) { rng.random_range(0.4..1.0) } else { 0.0 };
        for i in 0..len {
            gate[pos + i] = level * envelope(i, len, (0.03 * sr) as usize);
        }
        pos += len;
    }
    let scale = 0.5 / amps.iter().sum::<f64>();
    let samples = (0..total)
        .map(|n| {
            let t = n as f64 / sr;
            let v: f64 = freqs
                .iter()
                .zip(&phases)
                .zip(&amps)
                .map(|((f, p), a)| a * (2.0 * PI * f * t + p).sin())
                .sum();
            scale * gate[n] * v
        })
        .collect();
    AudioClip::mono(samples, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speech_is_deterministic_and_bounded() {
        let p = SpeakerProfile::numbered(3);
        let a = speech_like(&p, 1.0, 16000, 9).unwrap();
        let b = speech_like(&p, 1.0, 16000, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 16000);
        let peak = a.channel(0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 0.5).abs() < 1e-12);
        assert_ne!(a, speech_like(&p, 1.0, 16000, 10).unwrap());
    }

    #[test]
    fn speakers_differ_in_pitch() {
        assert!(SpeakerProfile::numbered(0).pitch_hz < 150.0);
        assert!(SpeakerProfile::numbered(1).pitch_hz > 160.0);
    }

    #[test]
    fn chord_stays_in_band() {
        use crate::spectral::{stft, StftConfig};
        let clip = sine_chord(&[2000.0, 2500.0], 1.0, 16000, 1).unwrap();
        let g = stft(clip.channel(0), 16000, &StftConfig::default()).unwrap();
        let mag = g.magnitude();
        let total: f64 = mag.iter().map(|v| v * v).sum();
        // 1024-point frames at 16 kHz: 15.6 Hz per bin.
        let in_band: f64 = mag.rows().into_iter().enumerate().filter(|(f, _)| (115..=170).contains(f)).map(|(_, r)| r.iter().map(|v| v * v).sum::<f64>()).sum();
        assert!(in_band / total > 0.999);
    }
}
