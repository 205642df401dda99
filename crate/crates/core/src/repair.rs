//! Property-guided masked-infill repair and its unguided baseline.
//!
//! Each reverse step denoises the current iterate, subtracts `η_t` times the
//! property-loss gradient, then overwrites the non-anomalous region with a
//! noised copy of `x_bad`.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::{AnomalyMask, Detector};
use crate::diffusion::{noise_to_level, predict_mu, Denoiser, StdMode};
use crate::error::{ensure_dim, Error, Result};
use crate::property::{LossBreakdown, MetricsRecord, PropertyObjective, PropertyWeights, Tolerances};
use crate::rng::{Purpose, Stream};

/// Per-step guidance strengths `η_1..η_T`, nondecreasing in `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSchedule {
    eta: Vec<f64>,
}

impl GuidanceSchedule {
    /// `η_t` for `t` in `1..=T`.
    pub fn eta(&self, t: usize) -> f64 {
        self.eta[t - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.eta
    }

    pub fn is_zero(&self) -> bool {
        self.eta.iter().all(|e| *e == 0.0)
    }
}

pub fn make_guidance_schedule(steps: usize, eta_start: f64, eta_end: f64) -> Result<GuidanceSchedule> {
    if steps == 0 {
        return Err(Error::InvalidParameter("guidance schedule needs T ≥ 1".into()));
    }
    if !(eta_start >= 0.0 && eta_start <= eta_end && eta_end.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need 0 ≤ eta_start ≤ eta_end, got {eta_start}, {eta_end}"
        )));
    }
    let eta = if steps == 1 {
        vec![eta_end]
    } else {
        (0..steps)
            .map(|i| eta_start + (eta_end - eta_start) * i as f64 / (steps - 1) as f64)
            .collect()
    };
    Ok(GuidanceSchedule { eta })
}

/// Noise level of the `x_bad` copy pasted into `ω̄` at step `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InfillMode {
    /// `ℓ = t`.
    PaperLiteral,
    /// `ℓ = t − 1`, so the last step pastes `x_bad` itself.
    #[default]
    LevelMatched,
}

impl InfillMode {
    pub fn level(self, t: usize) -> usize {
        match self {
            InfillMode::PaperLiteral => t,
            InfillMode::LevelMatched => t - 1,
        }
    }
}

impl std::str::FromStr for InfillMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-literal" => Ok(InfillMode::PaperLiteral),
            "level-matched" => Ok(InfillMode::LevelMatched),
            other => Err(Error::InvalidParameter(format!("unknown infill mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepairConfig {
    pub weights: PropertyWeights,
    pub tol: Tolerances,
    pub eta_start: f64,
    pub eta_end: f64,
    pub infill_mode: InfillMode,
    pub seed: u64,
    /// Record wall-clock seconds; off keeps outputs byte-reproducible.
    pub timing: bool,
}

impl Default for RepairConfig {
    fn default() -> Self {
        RepairConfig {
            weights: PropertyWeights::default(),
            tol: Tolerances::default(),
            eta_start: 0.1,
            eta_end: 0.2,
            infill_mode: InfillMode::LevelMatched,
            seed: 0,
            timing: false,
        }
    }
}

impl RepairConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.tol.validate()?;
        make_guidance_schedule(1, self.eta_start, self.eta_end).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairResult {
    pub x_fix: Vec<f64>,
    pub losses: LossBreakdown,
    pub metrics: MetricsRecord,
    pub seed: u64,
    pub instance: u64,
    pub guided: bool,
    pub infill_mode: InfillMode,
    pub std_mode: StdMode,
    /// SHA-256 over the bit patterns of every iterate, hex encoded.
    pub trajectory_hash: String,
    pub seconds: f64,
}

/// One reverse step as seen by an observer.
#[derive(Debug)]
pub struct StepRecord<'a> {
    pub t: usize,
    pub level: usize,
    /// `x_bad` noised to `level`.
    pub x_bad_level: &'a [f64],
    /// The denoised, guided proposal before infilling.
    pub proposal: &'a [f64],
    /// `x_fix,t−1` after infilling.
    pub next: &'a [f64],
}

/// `μ_θ(x_t, t) + σ_t·z − η·∇L(x_t)`. The gradient is skipped when `η = 0`.
pub fn guided_step<D: Detector + ?Sized>(
    den: &Denoiser,
    objective: &PropertyObjective<'_, D>,
    x_t: &[f64],
    t: usize,
    eta: f64,
    z: &[f64],
) -> Result<Vec<f64>> {
    ensure_dim("guided_step", x_t.len(), z.len())?;
    let mu = predict_mu(den, x_t, t)?;
    let sigma = if t > 1 { den.schedule().sigma(t) } else { 0.0 };
    let mut x: Vec<f64> = mu.iter().zip(z).map(|(m, z)| m + sigma * z).collect();
    if eta != 0.0 {
        let g = objective.gradient(x_t)?;
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= eta * gi;
        }
    }
    Ok(x)
}

pub fn guided_repair<D: Detector + ?Sized>(
    det: &D,
    den: &Denoiser,
    x_bad: &[f64],
    omega: &AnomalyMask,
    cfg: &RepairConfig,
    instance: u64,
) -> Result<RepairResult> {
    run(det, den, x_bad, omega, cfg, instance, true, &mut |_| {})
}

pub fn baseline_repair<D: Detector + ?Sized>(
    det: &D,
    den: &Denoiser,
    x_bad: &[f64],
    omega: &AnomalyMask,
    cfg: &RepairConfig,
    instance: u64,
) -> Result<RepairResult> {
    run(det, den, x_bad, omega, cfg, instance, false, &mut |_| {})
}

/// [`guided_repair`] (or the baseline when `guided` is false) with a callback
/// after every reverse step.
#[allow(clippy::too_many_arguments)]
pub fn repair_observed<D: Detector + ?Sized>(
    det: &D,
    den: &Denoiser,
    x_bad: &[f64],
    omega: &AnomalyMask,
    cfg: &RepairConfig,
    instance: u64,
    guided: bool,
    observer: &mut dyn FnMut(&StepRecord<'_>),
) -> Result<RepairResult> {
    run(det, den, x_bad, omega, cfg, instance, guided, observer)
}

#[allow(clippy::too_many_arguments)]
fn run<D: Detector + ?Sized>(
    det: &D,
    den: &Denoiser,
    x_bad: &[f64],
    omega: &AnomalyMask,
    cfg: &RepairConfig,
    instance: u64,
    guided: bool,
    observer: &mut dyn FnMut(&StepRecord<'_>),
) -> Result<RepairResult> {
    let started = Instant::now();
    if !den.is_trained() {
        return Err(Error::Untrained);
    }
    let n = x_bad.len();
    ensure_dim("repair: detector", det.dim(), n)?;
    ensure_dim("repair: denoiser", den.dim(), n)?;
    ensure_dim("repair: mask", omega.len(), n)?;
    cfg.validate()?;
    if x_bad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("x_bad".into()));
    }

    let schedule = den.schedule();
    let steps = schedule.steps();
    let eta = if guided {
        make_guidance_schedule(steps, cfg.eta_start, cfg.eta_end)?
    } else {
        make_guidance_schedule(steps, 0.0, 0.0)?
    };
    let objective = PropertyObjective::new(det, x_bad, omega, cfg.tol, cfg.weights)?;
    let mask = omega.bits();

    let mut init = Stream::for_purpose(cfg.seed, Purpose::RepairInit, instance);
    let mut denoise = Stream::for_purpose(cfg.seed, Purpose::RepairDenoise, instance);
    let mut infill = Stream::for_purpose(cfg.seed, Purpose::RepairInfill, instance);
    let mut hasher = Sha256::new();

    let mut x = init.normals(n);
    hash_iterate(&mut hasher, &x);
    for t in (1..=steps).rev() {
        let z = denoise.normals(n);
        let eps = infill.normals(n);
        let proposal = guided_step(den, &objective, &x, t, eta.eta(t), &z)?;
        let level = cfg.infill_mode.level(t);
        let x_bad_level = noise_to_level(schedule.a(level), x_bad, &eps);
        let next: Vec<f64> = mask
            .iter()
            .zip(proposal.iter().zip(&x_bad_level))
            .map(|(&anomalous, (&p, &b))| if anomalous { p } else { b })
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("repair iterate at step {t}")));
        }
        hash_iterate(&mut hasher, &next);
        observer(&StepRecord {
            t,
            level,
            x_bad_level: &x_bad_level,
            proposal: &proposal,
            next: &next,
        });
        x = next;
    }

    let losses = objective.breakdown(&x)?;
    let metrics = objective.metrics(&x)?;
    Ok(RepairResult {
        x_fix: x,
        losses,
        metrics,
        seed: cfg.seed,
        instance,
        guided,
        infill_mode: cfg.infill_mode,
        std_mode: schedule.std_mode(),
        trajectory_hash: hex::encode(hasher.finalize()),
        seconds: if cfg.timing {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        },
    })
}

fn hash_iterate(hasher: &mut Sha256, x: &[f64]) {
    for v in x {
        hasher.update(v.to_bits().to_le_bytes());
    }
}
