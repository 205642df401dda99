//! DDPM background: linear variance schedule, forward noising, an
//! ε-prediction denoiser, and unguided ancestral sampling.
//!
//! Steps are 1-based: `t = 1..=T`, with `a_0 := 1`.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, ScheduleSpec};
use crate::error::{ensure_dim, Error, Result};
use crate::nn::{train_mlp, Activation, MlpParams, TrainConfig};
use crate::rng::{Purpose, Stream};
use crate::tensor::Tensor;

/// Per-step sampling noise scale used by the reverse process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StdMode {
    /// `σ_t = √b_t`.
    #[default]
    Standard,
    /// `σ_t = b_t`.
    PaperLiteral,
}

impl std::str::FromStr for StdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(StdMode::Standard),
            "paper-literal" => Ok(StdMode::PaperLiteral),
            other => Err(Error::InvalidParameter(format!("unknown std mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    b: Vec<f64>,
    a: Vec<f64>,
    sigma: Vec<f64>,
    spec: ScheduleSpec,
}

/// Default `(b_start, b_end)` for `T` steps: the 1000-step DDPM range
/// `[1e-4, 0.02]` rescaled by `1000/T`, clamped below 0.999.
pub fn default_b_range(steps: usize) -> (f64, f64) {
    let scale = 1000.0 / steps.max(1) as f64;
    ((1e-4 * scale).min(0.999), (0.02 * scale).min(0.999))
}

pub fn make_schedule(steps: usize, b_start: f64, b_end: f64, std_mode: StdMode) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidParameter("schedule needs T ≥ 1".into()));
    }
    if !(b_start > 0.0 && b_start <= b_end && b_end < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < b_start ≤ b_end < 1, got {b_start}, {b_end}"
        )));
    }
    let b: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                b_start
            } else {
                b_start + (b_end - b_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut a = Vec::with_capacity(steps);
    let mut prev = 1.0;
    for bt in &b {
        prev *= 1.0 - bt;
        a.push(prev);
    }
    let sigma = b
        .iter()
        .map(|&bt| match std_mode {
            StdMode::Standard => bt.sqrt(),
            StdMode::PaperLiteral => bt,
        })
        .collect();
    Ok(NoiseSchedule {
        b,
        a,
        sigma,
        spec: ScheduleSpec {
            steps,
            b_start,
            b_end,
            std_mode,
        },
    })
}

impl NoiseSchedule {
    pub fn from_spec(spec: &ScheduleSpec) -> Result<Self> {
        make_schedule(spec.steps, spec.b_start, spec.b_end, spec.std_mode)
    }

    pub fn steps(&self) -> usize {
        self.b.len()
    }

    pub fn spec(&self) -> ScheduleSpec {
        self.spec
    }

    pub fn std_mode(&self) -> StdMode {
        self.spec.std_mode
    }

    /// Same `b` values with a different sampling std.
    pub fn with_std_mode(&self, mode: StdMode) -> Self {
        make_schedule(self.spec.steps, self.spec.b_start, self.spec.b_end, mode)
            .expect("spec already validated")
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidParameter(format!(
                "step {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    pub fn b(&self, t: usize) -> f64 {
        self.b[t - 1]
    }

    /// Cumulative `a_t = Π_{i≤t} (1 − b_i)`, with `a_0 = 1`.
    pub fn a(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.a[t - 1]
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }

    pub fn b_values(&self) -> &[f64] {
        &self.b
    }

    pub fn a_values(&self) -> &[f64] {
        &self.a
    }
}

/// `√a_t·x0 + √(1 − a_t)·ε`.
pub fn forward_noise(schedule: &NoiseSchedule, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    ensure_dim("forward_noise", x0.len(), eps.len())?;
    Ok(noise_to_level(schedule.a(t), x0, eps))
}

pub(crate) fn noise_to_level(a: f64, x0: &[f64], eps: &[f64]) -> Vec<f64> {
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    x0.iter().zip(eps).map(|(x, e)| sa * x + sn * e).collect()
}

/// Standard DDPM posterior mean under ε-parameterisation:
/// `μ = (x_t − b_t/√(1 − a_t)·ε̂) / √(1 − b_t)`.
pub fn posterior_mean(schedule: &NoiseSchedule, x_t: &[f64], t: usize, eps_hat: &[f64]) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    ensure_dim("predict_mu", x_t.len(), eps_hat.len())?;
    let bt = schedule.b(t);
    let coef = bt / (1.0 - schedule.a(t)).sqrt();
    let scale = 1.0 / (1.0 - bt).sqrt();
    Ok(x_t
        .iter()
        .zip(eps_hat)
        .map(|(x, e)| scale * (x - coef * e))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    #[serde(rename = "T")]
    pub steps: usize,
    pub b_start: Option<f64>,
    pub b_end: Option<f64>,
    pub std_mode: StdMode,
    pub hidden: Vec<usize>,
    pub time_embed: usize,
    pub activation: Activation,
    pub train: TrainConfig,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            steps: 100,
            b_start: None,
            b_end: None,
            std_mode: StdMode::Standard,
            hidden: vec![256, 256],
            time_embed: 32,
            activation: Activation::Silu,
            train: TrainConfig {
                steps: 3000,
                batch_size: 64,
                ..TrainConfig::default()
            },
        }
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        let (s, e) = default_b_range(self.steps);
        make_schedule(
            self.steps,
            self.b_start.unwrap_or(s),
            self.b_end.unwrap_or(e),
            self.std_mode,
        )
    }
}

/// Noise-prediction network `ε_θ(x_t, t)` bound to its schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    net: MlpParams,
    schedule: NoiseSchedule,
    trained_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Loss on a fixed evaluation batch before the first update.
    pub initial_loss: f64,
    /// Loss on the same batch after the last update.
    pub final_loss: f64,
    pub steps: usize,
}

impl Denoiser {
    pub fn from_parts(net: MlpParams, schedule: NoiseSchedule, trained_steps: u64) -> Result<Self> {
        if net.input_dim() != net.output_dim() {
            return Err(Error::shape(
                "denoiser",
                format!("maps {} to {}", net.input_dim(), net.output_dim()),
            ));
        }
        if net.time_embed().is_none() {
            return Err(Error::InvalidParameter("denoiser must be time-conditioned".into()));
        }
        Ok(Denoiser {
            net,
            schedule,
            trained_steps,
        })
    }

    pub fn untrained(n: usize, cfg: &DiffusionConfig, seed: u64) -> Result<Self> {
        let mut sizes = vec![n];
        sizes.extend(&cfg.hidden);
        sizes.push(n);
        let net = MlpParams::init(&sizes, cfg.activation, Some(cfg.time_embed), seed)?;
        Self::from_parts(net, cfg.schedule()?, 0)
    }

    pub fn dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn net(&self) -> &MlpParams {
        &self.net
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn trained_steps(&self) -> u64 {
        self.trained_steps
    }

    pub fn is_trained(&self) -> bool {
        self.trained_steps > 0
    }

    pub fn with_std_mode(&self, mode: StdMode) -> Self {
        Denoiser {
            schedule: self.schedule.with_std_mode(mode),
            ..self.clone()
        }
    }

    pub fn predict_eps(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        self.schedule.check_step(t)?;
        self.net.forward(x_t, Some(t))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::from_mlp("denoiser", &self.net);
        ckpt.schedule = Some(self.schedule.spec());
        ckpt.trained_steps = Some(self.trained_steps);
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind("denoiser")?;
        let spec = ckpt
            .schedule
            .ok_or_else(|| Error::Checkpoint("denoiser needs a schedule".into()))?;
        Self::from_parts(
            ckpt.to_mlp()?,
            NoiseSchedule::from_spec(&spec)?,
            ckpt.trained_steps.unwrap_or(0),
        )
    }

    /// Mean squared noise-prediction error on fixed draws from `stream`.
    fn eval_loss(&self, data: &[Vec<f64>], seed: u64) -> Result<f64> {
        let mut stream = Stream::for_purpose(seed, Purpose::Training, 1_000);
        let n = self.dim();
        let count = 256.min(4 * data.len()).max(1);
        let mut total = 0.0;
        for _ in 0..count {
            let x0 = &data[stream.index(data.len())];
            let t = 1 + stream.index(self.schedule.steps());
            let eps = stream.normals(n);
            let x_t = forward_noise(&self.schedule, x0, t, &eps)?;
            let pred = self.predict_eps(&x_t, t)?;
            total += pred.iter().zip(&eps).map(|(p, e)| (p - e).powi(2)).sum::<f64>() / n as f64;
        }
        Ok(total / count as f64)
    }
}

/// `μ_θ(x_t, t)` from the predicted noise.
pub fn predict_mu(den: &Denoiser, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
    let eps = den.predict_eps(x_t, t)?;
    posterior_mean(&den.schedule, x_t, t, &eps)
}

/// Trains `ε_θ` on normal data: minibatch MSE between sampled noise and its
/// prediction at uniformly drawn steps.
pub fn train_denoiser(
    normal: &[Vec<f64>],
    cfg: &DiffusionConfig,
    seed: u64,
) -> Result<(Denoiser, TrainReport)> {
    let first = normal.first().ok_or(Error::Empty("denoiser training data"))?;
    let n = first.len();
    if normal.iter().any(|x| x.len() != n) {
        return Err(Error::InvalidParameter("ragged denoiser training data".into()));
    }
    let mut den = Denoiser::untrained(n, cfg, seed)?;
    let initial_loss = den.eval_loss(normal, seed)?;
    let schedule = den.schedule.clone();
    let batch = cfg.train.batch_size.max(1);
    train_mlp(&mut den.net, &cfg.train, seed, 2, |tape, params, net, stream| {
        let mut inputs = Vec::with_capacity(batch * n);
        let mut targets = Vec::with_capacity(batch * n);
        let mut steps = Vec::with_capacity(batch);
        for _ in 0..batch {
            let x0 = &normal[stream.index(normal.len())];
            let t = 1 + stream.index(schedule.steps());
            let eps = stream.normals(n);
            inputs.extend(noise_to_level(schedule.a(t), x0, &eps));
            targets.extend(eps);
            steps.push(t);
        }
        let x = tape.leaf(Tensor::matrix(batch, n, inputs)?);
        let target = tape.leaf(Tensor::matrix(batch, n, targets)?);
        let pred = net.forward_tape(params, x, Some(&steps))?;
        Ok(pred.sub(&target)?.square().mean())
    })?;
    den.trained_steps = cfg.train.steps as u64;
    let final_loss = den.eval_loss(normal, seed)?;
    Ok((
        den,
        TrainReport {
            initial_loss,
            final_loss,
            steps: cfg.train.steps,
        },
    ))
}

/// Unguided reverse process from `x_T ~ N(0, I)`; no noise is added on the
/// final step.
pub fn ancestral_sample(den: &Denoiser, seed: u64, stream: u64) -> Result<Vec<f64>> {
    if !den.is_trained() {
        return Err(Error::Untrained);
    }
    let n = den.dim();
    let mut rng = Stream::for_purpose(seed, Purpose::Sampling, stream);
    let mut x = rng.normals(n);
    for t in (1..=den.schedule.steps()).rev() {
        let mu = predict_mu(den, &x, t)?;
        let z = rng.normals(n);
        let s = if t > 1 { den.schedule.sigma(t) } else { 0.0 };
        x = mu.iter().zip(&z).map(|(m, z)| m + s * z).collect();
    }
    Ok(x)
}
