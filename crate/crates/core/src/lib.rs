//! Property-guided counterfactual repair for anomaly detection.
//!
//! Detectors whose score splits into per-feature terms localise anomalies;
//! a diffusion model trained on normal data regenerates the flagged region
//! under gradient guidance from four repair properties.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod data;
pub mod detector;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod nn;
pub mod property;
pub mod repair;
pub mod rng;
pub mod stats;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use detector::{
    binarize, calibrate_thresholds, fit_gauss, fit_recon, grad_region_score, region_score, AnomalyMask,
    AnyDetector, DecomposableScore, Detector, DetectorKind, GaussDetector, ReconConfig, ReconDetector,
    Thresholds,
};
pub use diffusion::{
    ancestral_sample, forward_noise, make_schedule, predict_mu, train_denoiser, Denoiser, DiffusionConfig,
    NoiseSchedule, StdMode,
};
pub use error::{Error, Result};
pub use property::{
    conformal_threshold, grad_guidance, loss_breakdown, metrics, satisfaction_rate, tnr, LossBreakdown,
    MetricsRecord, PropertyObjective, PropertyWeights, Tolerances,
};
pub use repair::{
    baseline_repair, guided_repair, make_guidance_schedule, repair_observed, GuidanceSchedule, InfillMode,
    RepairConfig, RepairResult, StepRecord,
};
pub use tensor::{Tape, Tensor, Var};
pub use data::{
    fit_scaler, gen_synthetic_image, gen_synthetic_ts, load_csv_dataset, write_csv_dataset, AnomalyKind,
    AnomalySpec, Dataset, Modality, Scaler,
};
pub use harness::{
    ablation_sweep, aggregate_delta, run_experiment, run_experiment_with, tnr_report, write_report, AggregateReport,
    ExperimentConfig,
};
