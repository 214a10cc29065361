//! Soft masks, oracle masks and resynthesis.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{istft, AudioClip, ComplexGrid, Spectrogram};

/// `S x F x T` weights; every bin sums to one over sources.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationMask {
    m: Array3<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MaskHeader {
    pub dims: [usize; 3],
    pub order: String,
    pub dtype: String,
}

impl SeparationMask {
    pub fn new(m: Array3<f64>) -> Result<Self> {
        if m.is_empty() {
            return Err(Error::InvalidDimension("mask must be non-empty".into()));
        }
        if m.iter().any(|&v| !(0.0..=1.0 + 1e-12).contains(&v)) {
            return Err(Error::InvalidArgument("mask entries must lie in [0, 1]".into()));
        }
        let sums = m.sum_axis(Axis(0));
        if sums.iter().any(|s| (s - 1.0).abs() > 1e-9) {
            return Err(Error::InvalidArgument("mask does not sum to 1 over sources".into()));
        }
        Ok(Self { m })
    }

    /// Normalizes nonnegative per-source weights bin by bin; bins with no
    /// weight at all are split evenly.
    pub fn from_unnormalized(weights: &[Array2<f64>]) -> Self {
        let s = weights.len();
        let (nf, nt) = weights[0].dim();
        let mut m = Array3::zeros((s, nf, nt));
        for f in 0..nf {
            for t in 0..nt {
                let total: f64 = weights.iter().map(|w| w[[f, t]]).sum();
                for (i, w) in weights.iter().enumerate() {
                    m[[i, f, t]] = if total > 0.0 { w[[f, t]] / total } else { 1.0 / s as f64 };
                }
            }
        }
        Self { m }
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.m
    }

    pub fn num_sources(&self) -> usize {
        self.m.shape()[0]
    }

    /// `(F, T)`.
    pub fn grid_dim(&self) -> (usize, usize) {
        (self.m.shape()[1], self.m.shape()[2])
    }

    pub fn get(&self, s: usize, f: usize, t: usize) -> f64 {
        self.m[[s, f, t]]
    }

    pub fn header(&self) -> MaskHeader {
        let sh = self.m.shape();
        MaskHeader {
            dims: [sh[0], sh[1], sh[2]],
            order: "row-major [source][frequency][frame]".into(),
            dtype: "f64-le".into(),
        }
    }

    /// Writes raw little-endian values to `bin_path` and the header to
    /// `header_path`.
    pub fn write(&self, bin_path: impl AsRef<Path>, header_path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(bin_path)?);
        for v in self.m.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        std::fs::write(header_path, serde_json::to_string_pretty(&self.header())?)?;
        Ok(())
    }

    pub fn read(bin_path: impl AsRef<Path>, header_path: impl AsRef<Path>) -> Result<Self> {
        let header: MaskHeader = serde_json::from_str(&std::fs::read_to_string(header_path)?)?;
        let bytes = std::fs::read(bin_path)?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let [s, f, t] = header.dims;
        let m = Array3::from_shape_vec((s, f, t), values).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(m)
    }
}

/// Resynthesizes each source from `scale * p(f,t) * mask(s,f,t)` with the
/// mixture phase.
pub fn apply_mask(mix: &ComplexGrid, mask: &SeparationMask, magnitude: &Spectrogram) -> Result<Vec<AudioClip>> {
    if mask.grid_dim() != mix.dim() || magnitude.dim() != mix.dim() {
        return Err(Error::ShapeMismatch(format!(
            "mixture grid {:?}, mask {:?}, spectrogram {:?}",
            mix.dim(),
            mask.grid_dim(),
            magnitude.dim()
        )));
    }
    let scale = magnitude.scale();
    let phase = mix.values().mapv(|c| if c.norm_sqr() > 0.0 { c / c.norm() } else { Complex64::new(1.0, 0.0) });
    (0..mask.num_sources())
        .map(|s| {
            let m = mask.m.index_axis(Axis(0), s);
            let mut values = phase.clone();
            ndarray::Zip::from(&mut values)
                .and(&m)
                .and(magnitude.p())
                .for_each(|v, &w, &p| *v *= scale * p * w);
            istft(&mix.with_values(values)?)
        })
        .collect()
}

fn check_same_shape(grids: &[ComplexGrid]) -> Result<(usize, usize)> {
    let first = grids.first().ok_or_else(|| Error::InvalidArgument("need at least one source grid".into()))?;
    let dim = first.dim();
    if grids.iter().any(|g| g.dim() != dim) {
        return Err(Error::ShapeMismatch("source grids differ in shape".into()));
    }
    Ok(dim)
}

/// `|G_s| / sum_s' |G_s'|`; silent bins are split evenly.
pub fn ideal_ratio_mask(grids: &[ComplexGrid]) -> Result<SeparationMask> {
    check_same_shape(grids)?;
    let mags: Vec<Array2<f64>> = grids.iter().map(ComplexGrid::magnitude).collect();
    Ok(SeparationMask::from_unnormalized(&mags))
}

/// Indicator of the loudest source per bin; ties and silent bins go to the
/// lowest source index.
pub fn ideal_binary_mask(grids: &[ComplexGrid]) -> Result<SeparationMask> {
    let (nf, nt) = check_same_shape(grids)?;
    let mut m = Array3::zeros((grids.len(), nf, nt));
    for f in 0..nf {
        for t in 0..nt {
            let mut best = 0;
            let mut best_mag = grids[0].values()[[f, t]].norm();
            for (s, g) in grids.iter().enumerate().skip(1) {
                let mag = g.values()[[f, t]].norm();
                if mag > best_mag {
                    best = s;
                    best_mag = mag;
                }
            }
            m[[best, f, t]] = 1.0;
        }
    }
    Ok(SeparationMask { m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{normalize_magnitude, stft, StftConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn uniform_and_identity_masks() {
        let x = noise(6000, 1);
        let g = stft(&x, 16000, &StftConfig::default()).unwrap();
        let p = normalize_magnitude(&g).unwrap();
        let (nf, nt) = g.dim();

        let one = SeparationMask::new(Array3::ones((1, nf, nt))).unwrap();
        let out = apply_mask(&g, &one, &p).unwrap();
        assert!(max_diff(out[0].channel(0), &x) < 1e-6);

        let half = SeparationMask::new(Array3::from_elem((2, nf, nt), 0.5)).unwrap();
        let out = apply_mask(&g, &half, &p).unwrap();
        let expect: Vec<f64> = x.iter().map(|v| v / 2.0).collect();
        for clip in &out {
            assert!(max_diff(clip.channel(0), &expect) < 1e-6);
        }
    }

    #[test]
    fn binary_halves_sum_to_mixture() {
        let x = noise(6000, 2);
        let g = stft(&x, 16000, &StftConfig::default()).unwrap();
        let p = normalize_magnitude(&g).unwrap();
        let (nf, nt) = g.dim();
        let m = Array3::from_shape_fn((2, nf, nt), |(s, f, _)| if (f < nf / 2) == (s == 0) { 1.0 } else { 0.0 });
        let out = apply_mask(&g, &SeparationMask::new(m).unwrap(), &p).unwrap();
        let sum: Vec<f64> = out[0].channel(0).iter().zip(out[1].channel(0)).map(|(a, b)| a + b).collect();
        assert!(max_diff(&sum, &x) < 1e-6);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let g = stft(&noise(4096, 3), 16000, &StftConfig::default()).unwrap();
        let p = normalize_magnitude(&g).unwrap();
        let bad = SeparationMask::new(Array3::ones((1, 3, 3))).unwrap();
        assert!(matches!(apply_mask(&g, &bad, &p), Err(Error::ShapeMismatch(_))));
    }

    fn grids(seed: u64) -> Vec<ComplexGrid> {
        let cfg = StftConfig::default();
        (0..3).map(|s| stft(&noise(3000, seed + s), 16000, &cfg).unwrap()).collect()
    }

    #[test]
    fn ratio_mask_definition() {
        let gs = grids(10);
        let m = ideal_ratio_mask(&gs).unwrap();
        let (nf, nt) = gs[0].dim();
        for f in 0..nf {
            for t in 0..nt {
                let total: f64 = gs.iter().map(|g| g.values()[[f, t]].norm()).sum();
                for (s, g) in gs.iter().enumerate() {
                    assert!((m.get(s, f, t) - g.values()[[f, t]].norm() / total).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn ratio_mask_edge_cases() {
        let g = grids(20).remove(0);
        let equal = ideal_ratio_mask(&[g.clone(), g.clone()]).unwrap();
        assert!(equal.values().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let silent = g.with_values(Array2::zeros(g.dim())).unwrap();
        let m = ideal_ratio_mask(&[g.clone(), silent.clone()]).unwrap();
        let (nf, nt) = g.dim();
        for f in 0..nf {
            for t in 0..nt {
                let expect = if g.values()[[f, t]].norm() > 0.0 { 1.0 } else { 0.5 };
                assert_eq!(m.get(0, f, t), expect);
            }
        }
        let bad = stft(&noise(9000, 1), 16000, &StftConfig::default()).unwrap();
        assert!(ideal_ratio_mask(&[g, bad]).is_err());
    }

    #[test]
    fn binary_mask_structure_and_ties() {
        let gs = grids(30);
        let m = ideal_binary_mask(&gs).unwrap();
        let (nf, nt) = gs[0].dim();
        for f in 0..nf {
            for t in 0..nt {
                let mags: Vec<f64> = gs.iter().map(|g| g.values()[[f, t]].norm()).collect();
                let winner = (0..3).fold(0, |b, s| if mags[s] > mags[b] { s } else { b });
                for s in 0..3 {
                    assert_eq!(m.get(s, f, t), if s == winner { 1.0 } else { 0.0 });
                }
            }
        }
        let tie = ideal_binary_mask(&[gs[0].clone(), gs[0].clone()]).unwrap();
        assert!(tie.values().index_axis(Axis(0), 0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn binary_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = ideal_ratio_mask(&grids(40)).unwrap();
        let (b, h) = (dir.path().join("mask.bin"), dir.path().join("mask.json"));
        m.write(&b, &h).unwrap();
        assert_eq!(SeparationMask::read(&b, &h).unwrap(), m);
    }
}
