//! Multichannel audio source separation with directional nonnegative tensor
//! factorization.
//!
//! The pipeline: [`spectral`] turns each microphone signal into an STFT,
//! [`doa`] assigns every time-frequency bin a quantized direction of arrival,
//! [`ntf`] fits a frequency x time x direction factorization whose sources
//! share one direction distribution across all of their dictionary atoms, and
//! [`separation`] turns the fitted posterior into per-source audio. [`nmf`]
//! holds plain and supervised NMF, [`eval`] the BSS_EVAL metrics, and
//! [`harness`] the three-microphone experiment that ties it all together.

pub mod doa;
pub mod error;
pub mod eval;
mod factors;
pub mod harness;
pub mod nmf;
pub mod ntf;
pub mod separation;
pub mod spectral;
pub mod synth;
pub mod wav;

pub use doa::{
    design_doa_solver, direction_field, estimate_doa, quantize_direction, ArrayGeometry, DirectionField, DoaSolver,
    WaveVector,
};
pub use error::{Error, Result};
pub use eval::{bss_eval, EvalScores, SourceScores};
pub use harness::{run_experiment, synthesize_mixture, ExperimentConfig, ExperimentReport, MixtureScene};
pub use nmf::{
    kl_divergence, nmf_fit_dictionary, nmf_init, nmf_update, supervised_nmf_fit, FitOptions, NmfModel,
    SupervisedModel,
};
pub use ntf::{
    dnmf_init, dnmf_update, dntf_init, dntf_update_dense, dntf_update_sparse, posterior_mask,
    source_direction_summary, DenseDirectionalObservation, DnmfModel, MaskMode, NtfModel,
    SparseDirectionalObservation,
};
pub use separation::{apply_mask, ideal_binary_mask, ideal_ratio_mask, SeparationMask};
pub use spectral::{istft, normalize_magnitude, stft, AudioClip, ComplexGrid, Spectrogram, StftConfig, Window};

/// Floor applied to denominators and factor entries in multiplicative updates.
pub const EPS: f64 = 1e-12;

/// Whether per-source work inside an update may run on the rayon pool.
///
/// Results are bit-identical in both modes: parallel work is split by source
/// and every cross-source reduction runs in source order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    #[default]
    Sequential,
    Parallel,
}
