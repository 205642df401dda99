//! Linearly decomposable anomaly detectors.
//!
//! A detector maps an input `x ∈ Rⁿ` to per-feature scores `α(x) ∈ Rⁿ` and a
//! scalar regulariser `β(x)` whose sum is the anomaly score
//! `s(x) = Σ αᵢ(x) + β(x)`. Thresholding `α` localises the anomaly
//! ([`binarize`]); summing `α` over a binary region `z` gives the region score
//! `s_z(x) = β(x) + Σ_{zᵢ=1} αᵢ(x)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{ensure_dim, Error, Result};
use crate::nn::{train_mlp, Activation, MlpParams, TrainConfig};
use crate::stats::quantile;
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposableScore {
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub total: f64,
}

impl DecomposableScore {
    /// `β + Σ_{zᵢ=1} αᵢ`.
    pub fn region(&self, z: &AnomalyMask) -> Result<f64> {
        ensure_dim("region_score", self.alpha.len(), z.len())?;
        Ok(self.beta
            + self
                .alpha
                .iter()
                .zip(z.bits())
                .filter(|(_, &on)| on)
                .map(|(a, _)| a)
                .sum::<f64>())
    }

    /// Absolute gap between the stored total and `Σα + β`.
    pub fn decomposition_gap(&self) -> f64 {
        (self.total - (self.alpha.iter().sum::<f64>() + self.beta)).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    tau: Vec<f64>,
}

impl Thresholds {
    pub fn new(tau: Vec<f64>) -> Result<Self> {
        if tau.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("thresholds".into()));
        }
        Ok(Thresholds { tau })
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }
}

/// Binary feature mask `ω ∈ {0,1}ⁿ`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnomalyMask {
    bits: Vec<bool>,
}

impl AnomalyMask {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        AnomalyMask { bits }
    }

    /// Parses a 0/1 vector, rejecting anything else.
    pub fn from_binary(values: &[f64]) -> Result<Self> {
        let bits = values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if v == 0.0 {
                    Ok(false)
                } else if v == 1.0 {
                    Ok(true)
                } else {
                    Err(Error::InvalidParameter(format!(
                        "mask entry {i} is {v}, expected 0 or 1"
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AnomalyMask { bits })
    }

    pub fn zeros(n: usize) -> Self {
        AnomalyMask {
            bits: vec![false; n],
        }
    }

    pub fn ones(n: usize) -> Self {
        AnomalyMask {
            bits: vec![true; n],
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// `ω̄ = 1 − ω`.
    pub fn complement(&self) -> Self {
        AnomalyMask {
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// The linear-decomposition contract shared by every detector.
pub trait Detector: Send + Sync {
    fn dim(&self) -> usize;

    fn score(&self, x: &[f64]) -> Result<DecomposableScore>;

    /// Records `α(x)` (shape `[n]`) and `β(x)` (shape `[1]`) on `x`'s tape.
    fn decompose_var<'t>(&self, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)>;
}

pub fn region_score<D: Detector + ?Sized>(det: &D, x: &[f64], z: &AnomalyMask) -> Result<f64> {
    det.score(x)?.region(z)
}

/// `∇ₓ s_z(x)` via the tape.
pub fn grad_region_score<D: Detector + ?Sized>(
    det: &D,
    x: &[f64],
    z: &AnomalyMask,
) -> Result<Vec<f64>> {
    ensure_dim("grad_region_score", det.dim(), x.len())?;
    ensure_dim("grad_region_score", det.dim(), z.len())?;
    let tape = Tape::new();
    let xv = tape.vector(x.to_vec());
    let (alpha, beta) = det.decompose_var(xv)?;
    let zv = tape.vector(z.to_f64());
    let s = alpha.mul(&zv)?.sum().add(&beta)?;
    Ok(tape.backward(s)?.wrt(xv).into_data())
}

/// Per-feature type-7 quantile of the training-set feature scores.
pub fn calibrate_thresholds<D: Detector + ?Sized>(
    det: &D,
    train: &[Vec<f64>],
    q: f64,
) -> Result<Thresholds> {
    if train.is_empty() {
        return Err(Error::Empty("calibrate_thresholds"));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!("quantile level {q} outside (0, 1)")));
    }
    let n = det.dim();
    let mut columns = vec![Vec::with_capacity(train.len()); n];
    for x in train {
        let s = det.score(x)?;
        for (col, a) in columns.iter_mut().zip(s.alpha) {
            col.push(a);
        }
    }
    let tau = columns
        .iter()
        .map(|c| quantile(c, q))
        .collect::<Result<Vec<_>>>()?;
    Thresholds::new(tau)
}

/// `ωᵢ = 1` iff `αᵢ ≥ τᵢ`.
pub fn binarize(score: &DecomposableScore, tau: &Thresholds) -> Result<AnomalyMask> {
    ensure_dim("binarize", tau.len(), score.alpha.len())?;
    Ok(AnomalyMask::from_bits(
        score
            .alpha
            .iter()
            .zip(tau.tau())
            .map(|(a, t)| a >= t)
            .collect(),
    ))
}

fn check_train(train: &[Vec<f64>]) -> Result<usize> {
    let first = train.first().ok_or(Error::Empty("training data"))?;
    let n = first.len();
    if n == 0 {
        return Err(Error::Empty("feature vector"));
    }
    for (i, x) in train.iter().enumerate() {
        if x.len() != n {
            return Err(Error::InvalidParameter(format!(
                "ragged training data: row {i} has {} features, expected {n}",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("training row {i}")));
        }
    }
    Ok(n)
}

/// Diagonal Gaussian likelihood detector:
/// `αᵢ(x) = ½ log(2πσᵢ²) + (xᵢ − μᵢ)²/(2σᵢ²)`, `β ≡ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussDetector {
    mu: Vec<f64>,
    sigma: Vec<f64>,
    sigma_floor: f64,
}

impl GaussDetector {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>, sigma_floor: f64) -> Result<Self> {
        if mu.len() != sigma.len() || mu.is_empty() {
            return Err(Error::shape("gauss", "mu and sigma lengths differ"));
        }
        if !(sigma_floor > 0.0) {
            return Err(Error::InvalidParameter("sigma_floor must be positive".into()));
        }
        if mu.iter().chain(&sigma).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gauss parameters".into()));
        }
        let sigma = sigma.into_iter().map(|s| s.max(sigma_floor)).collect();
        Ok(GaussDetector {
            mu,
            sigma,
            sigma_floor,
        })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let data: Vec<f64> = self.mu.iter().chain(&self.sigma).copied().collect();
        let mut ckpt = Checkpoint::new("gauss", &data);
        ckpt.n = Some(self.mu.len());
        ckpt.sigma_floor = Some(self.sigma_floor);
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind("gauss")?;
        let n = ckpt.n.ok_or_else(|| Error::Checkpoint("gauss needs n".into()))?;
        let values = crate::checkpoint::decode_f64s(&ckpt.data)?;
        if values.len() != 2 * n {
            return Err(Error::Checkpoint(format!(
                "gauss payload has {} values, expected {}",
                values.len(),
                2 * n
            )));
        }
        Self::new(
            values[..n].to_vec(),
            values[n..].to_vec(),
            ckpt.sigma_floor.unwrap_or(DEFAULT_SIGMA_FLOOR),
        )
    }
}

/// Per-feature maximum-likelihood (population) mean and std.
pub fn fit_gauss(train: &[Vec<f64>], sigma_floor: f64) -> Result<GaussDetector> {
    let n = check_train(train)?;
    let m = train.len() as f64;
    let mut mu = vec![0.0; n];
    for x in train {
        mu.iter_mut().zip(x).for_each(|(a, v)| *a += v);
    }
    mu.iter_mut().for_each(|a| *a /= m);
    let mut var = vec![0.0; n];
    for x in train {
        for i in 0..n {
            var[i] += (x[i] - mu[i]).powi(2);
        }
    }
    let sigma = var.into_iter().map(|v| (v / m).sqrt()).collect();
    GaussDetector::new(mu, sigma, sigma_floor)
}

impl Detector for GaussDetector {
    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn score(&self, x: &[f64]) -> Result<DecomposableScore> {
        ensure_dim("score", self.dim(), x.len())?;
        let mut alpha = Vec::with_capacity(x.len());
        let mut log_norm = 0.0;
        let mut quad = 0.0;
        for ((xi, m), s) in x.iter().zip(&self.mu).zip(&self.sigma) {
            let z2 = ((xi - m) / s).powi(2);
            let c = 0.5 * (2.0 * PI * s * s).ln();
            alpha.push(c + 0.5 * z2);
            log_norm += c;
            quad += z2;
        }
        Ok(DecomposableScore {
            alpha,
            beta: 0.0,
            total: log_norm + 0.5 * quad,
        })
    }

    fn decompose_var<'t>(&self, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let tape = x.tape();
        ensure_dim("score", self.dim(), x.value().len())?;
        let mu = tape.vector(self.mu.clone());
        let inv = tape.vector(self.sigma.iter().map(|s| 0.5 / (s * s)).collect());
        let norm = tape.vector(
            self.sigma
                .iter()
                .map(|s| 0.5 * (2.0 * PI * s * s).ln())
                .collect(),
        );
        let alpha = x.sub(&mu)?.square().mul(&inv)?.add(&norm)?;
        Ok((alpha, tape.scalar(0.0)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconConfig {
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub latent: usize,
    pub activation: Activation,
    pub train: TrainConfig,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            hidden: vec![128],
            latent: 32,
            activation: Activation::Silu,
            train: TrainConfig {
                steps: 1500,
                batch_size: 32,
                ..TrainConfig::default()
            },
        }
    }
}

/// Autoencoder detector: `αᵢ(x) = (x̂ᵢ − xᵢ)²`, `β ≡ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconDetector {
    net: MlpParams,
}

impl ReconDetector {
    pub fn new(net: MlpParams) -> Result<Self> {
        if net.input_dim() != net.output_dim() || net.time_embed().is_some() {
            return Err(Error::shape(
                "recon",
                format!(
                    "autoencoder maps {} to {}",
                    net.input_dim(),
                    net.output_dim()
                ),
            ));
        }
        Ok(ReconDetector { net })
    }

    /// Randomly initialised autoencoder of the configured shape.
    pub fn untrained(n: usize, cfg: &ReconConfig, seed: u64) -> Result<Self> {
        let mut sizes = vec![n];
        sizes.extend(&cfg.hidden);
        sizes.push(cfg.latent);
        sizes.extend(cfg.hidden.iter().rev());
        sizes.push(n);
        Self::new(MlpParams::init(&sizes, cfg.activation, None, seed)?)
    }

    pub fn net(&self) -> &MlpParams {
        &self.net
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(x, None)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_mlp("recon", &self.net)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind("recon")?;
        Self::new(ckpt.to_mlp()?)
    }

    /// Mean per-instance reconstruction error `s(x)` over `data`.
    pub fn mean_score(&self, data: &[Vec<f64>]) -> Result<f64> {
        let mut total = 0.0;
        for x in data {
            total += self.score(x)?.total;
        }
        Ok(total / data.len().max(1) as f64)
    }
}

/// Trains the autoencoder on normal data by minimising mean squared
/// reconstruction error with AdamW.
pub fn fit_recon(train: &[Vec<f64>], cfg: &ReconConfig, seed: u64) -> Result<ReconDetector> {
    let n = check_train(train)?;
    let mut det = ReconDetector::untrained(n, cfg, seed)?;
    let batch = cfg.train.batch_size.clamp(1, train.len());
    train_mlp(&mut det.net, &cfg.train, seed, 1, |tape, params, net, stream| {
        let rows: Vec<usize> = if batch == train.len() {
            (0..batch).collect()
        } else {
            stream.sample_indices(train.len(), batch)
        };
        let data: Vec<f64> = rows.iter().flat_map(|&r| train[r].iter().copied()).collect();
        let x = tape.leaf(Tensor::matrix(batch, n, data)?);
        let xhat = net.forward_tape(params, x, None)?;
        Ok(xhat.sub(&x)?.square().mean())
    })?;
    Ok(det)
}

impl Detector for ReconDetector {
    fn dim(&self) -> usize {
        self.net.input_dim()
    }

    fn score(&self, x: &[f64]) -> Result<DecomposableScore> {
        ensure_dim("score", self.dim(), x.len())?;
        let xhat = self.reconstruct(x)?;
        let diff: Vec<f64> = xhat.iter().zip(x).map(|(a, b)| a - b).collect();
        let alpha: Vec<f64> = diff.iter().map(|d| d * d).collect();
        let total = diff.iter().fold(0.0, |acc, d| d.mul_add(*d, acc));
        Ok(DecomposableScore {
            alpha,
            beta: 0.0,
            total,
        })
    }

    fn decompose_var<'t>(&self, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let tape = x.tape();
        let n = self.dim();
        ensure_dim("score", n, x.value().len())?;
        let params = self.net.bind(tape);
        let row = x.reshape(&[1, n])?;
        let xhat = self.net.forward_tape(&params, row, None)?.reshape(&[n])?;
        let alpha = xhat.sub(&x)?.square();
        Ok((alpha, tape.scalar(0.0)))
    }
}

/// Either shipped detector, as loaded from a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyDetector {
    Gauss(GaussDetector),
    Recon(ReconDetector),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Gauss,
    Recon,
}

impl AnyDetector {
    pub fn kind(&self) -> DetectorKind {
        match self {
            AnyDetector::Gauss(_) => DetectorKind::Gauss,
            AnyDetector::Recon(_) => DetectorKind::Recon,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        match self {
            AnyDetector::Gauss(d) => d.to_checkpoint(),
            AnyDetector::Recon(d) => d.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        match ckpt.kind.as_str() {
            "gauss" => Ok(AnyDetector::Gauss(GaussDetector::from_checkpoint(ckpt)?)),
            "recon" => Ok(AnyDetector::Recon(ReconDetector::from_checkpoint(ckpt)?)),
            other => Err(Error::Checkpoint(format!("{other:?} is not a detector kind"))),
        }
    }
}

impl Detector for AnyDetector {
    fn dim(&self) -> usize {
        match self {
            AnyDetector::Gauss(d) => d.dim(),
            AnyDetector::Recon(d) => d.dim(),
        }
    }

    fn score(&self, x: &[f64]) -> Result<DecomposableScore> {
        match self {
            AnyDetector::Gauss(d) => d.score(x),
            AnyDetector::Recon(d) => d.score(x),
        }
    }

    fn decompose_var<'t>(&self, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        match self {
            AnyDetector::Gauss(d) => d.decompose_var(x),
            AnyDetector::Recon(d) => d.decompose_var(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;

    fn identity_recon(n: usize) -> ReconDetector {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        let layer = Layer {
            weight: Tensor::matrix(n, n, w).unwrap(),
            bias: Tensor::zeros(&[n]),
            act: Activation::Identity,
        };
        ReconDetector::new(MlpParams::new(vec![layer], None).unwrap()).unwrap()
    }

    #[test]
    fn gauss_two_point_moments() {
        let det = fit_gauss(&[vec![0.0], vec![2.0]], DEFAULT_SIGMA_FLOOR).unwrap();
        assert_eq!(det.mu(), &[1.0]);
        assert_eq!(det.sigma(), &[1.0]);
    }

    #[test]
    fn gauss_constant_feature_clamped() {
        let train = vec![vec![3.0, 0.0], vec![3.0, 2.0], vec![3.0, 4.0]];
        let det = fit_gauss(&train, DEFAULT_SIGMA_FLOOR).unwrap();
        assert_eq!(det.sigma()[0], 1e-3);
        assert!((det.sigma()[1] - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(det.mu(), &[3.0, 2.0]);
    }

    #[test]
    fn gauss_rejects_empty() {
        assert!(matches!(fit_gauss(&[], 1e-3), Err(Error::Empty(_))));
    }

    #[test]
    fn gauss_closed_form_nll() {
        let det = GaussDetector::new(vec![0.0, 0.0], vec![1.0, 1.0], 1e-3).unwrap();
        let s = det.score(&[0.0, 1.0]).unwrap();
        // ½ log(2π) and ½ log(2π) + ½.
        let c = 0.5 * (2.0 * PI).ln();
        assert!((s.alpha[0] - c).abs() < 1e-12);
        assert!((s.alpha[0] - 0.918939).abs() < 1e-6);
        assert!((s.alpha[1] - 1.418939).abs() < 1e-6);
        assert!(s.decomposition_gap() < 1e-12);
    }

    #[test]
    fn identity_autoencoder_scores_zero() {
        let det = identity_recon(3);
        let s = det.score(&[1.5, -2.0, 0.25]).unwrap();
        assert_eq!(s.alpha, vec![0.0; 3]);
        assert_eq!(s.total, 0.0);
        let g = grad_region_score(&det, &[1.5, -2.0, 0.25], &AnomalyMask::ones(3)).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn region_score_examples() {
        let s = DecomposableScore {
            alpha: vec![1.0, 2.0, 3.0],
            beta: 0.5,
            total: 6.5,
        };
        let z = AnomalyMask::from_binary(&[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(s.region(&z).unwrap(), 4.5);
        assert_eq!(s.region(&AnomalyMask::ones(3)).unwrap(), s.total);
        assert_eq!(s.region(&AnomalyMask::zeros(3)).unwrap(), 0.5);
        assert!(AnomalyMask::from_binary(&[1.0, 0.5]).is_err());
    }

    #[test]
    fn binarize_is_inclusive() {
        let score = DecomposableScore {
            alpha: vec![0.1, 0.9, 0.5],
            beta: 0.0,
            total: 1.5,
        };
        let tau = Thresholds::new(vec![0.5; 3]).unwrap();
        assert_eq!(binarize(&score, &tau).unwrap().to_f64(), vec![0.0, 1.0, 1.0]);
        let low = Thresholds::new(vec![1.0; 3]).unwrap();
        assert_eq!(binarize(&score, &low).unwrap().count(), 0);
        let short = Thresholds::new(vec![1.0; 2]).unwrap();
        assert!(binarize(&score, &short).is_err());
    }

    #[test]
    fn calibration_uses_type7_quantile() {
        // One feature whose Gauss scores are an increasing function of x; the
        // recon identity detector scores everything 0.
        let det = identity_recon(1);
        let train: Vec<Vec<f64>> = (1..=10).map(|v| vec![f64::from(v)]).collect();
        let tau = calibrate_thresholds(&det, &train, 0.9).unwrap();
        assert_eq!(tau.tau(), &[0.0]);

        let gauss = GaussDetector::new(vec![0.0], vec![1.0], 1e-3).unwrap();
        let tau = calibrate_thresholds(&gauss, &train, 0.9).unwrap();
        let scores: Vec<f64> = train.iter().map(|x| gauss.score(x).unwrap().alpha[0]).collect();
        let expected = scores[8] + 0.1 * (scores[9] - scores[8]);
        assert!((tau.tau()[0] - expected).abs() < 1e-12);
        assert!(calibrate_thresholds(&gauss, &[], 0.9).is_err());
        assert!(calibrate_thresholds(&gauss, &train, 1.0).is_err());
    }

    #[test]
    fn gauss_gradient_examples() {
        let det = GaussDetector::new(vec![0.0], vec![1.0], 1e-3).unwrap();
        let g = grad_region_score(&det, &[2.0], &AnomalyMask::ones(1)).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-15);
        let g = grad_region_score(&det, &[2.0], &AnomalyMask::zeros(1)).unwrap();
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let det = GaussDetector::new(vec![0.0; 3], vec![1.0; 3], 1e-3).unwrap();
        assert!(det.score(&[1.0, 2.0]).is_err());
        let recon = identity_recon(3);
        assert!(recon.score(&[1.0]).is_err());
        assert!(grad_region_score(&recon, &[1.0; 3], &AnomalyMask::ones(2)).is_err());
    }

    #[test]
    fn checkpoints_roundtrip() {
        let det = GaussDetector::new(vec![0.5, -1.0], vec![2.0, 0.1], 1e-3).unwrap();
        let any = AnyDetector::Gauss(det);
        let back = AnyDetector::from_checkpoint(&any.to_checkpoint()).unwrap();
        assert_eq!(back, any);
        let recon = AnyDetector::Recon(ReconDetector::untrained(4, &ReconConfig::default(), 1).unwrap());
        let back = AnyDetector::from_checkpoint(&recon.to_checkpoint()).unwrap();
        assert_eq!(back, recon);
    }
}
