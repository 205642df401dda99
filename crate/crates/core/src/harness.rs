//! Baseline-versus-guided evaluation: model preparation, paired repairs,
//! median improvements, TNR under a conformal threshold, ablations and
//! report files.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::data::{
    fit_scaler, gen_synthetic_image, gen_synthetic_ts, load_csv_dataset, AnomalyKind, AnomalySpec, Dataset,
    Scaler, DEFAULT_SCALE_FLOOR,
};
use crate::detector::{
    binarize, calibrate_thresholds, fit_gauss, fit_recon, AnomalyMask, AnyDetector, Detector, DetectorKind,
    ReconConfig, Thresholds, DEFAULT_SIGMA_FLOOR,
};
use crate::diffusion::{train_denoiser, Denoiser, DiffusionConfig, TrainReport};
use crate::error::{Error, Result};
use crate::property::{conformal_threshold, satisfaction_rate, tnr, LossBreakdown, MetricsRecord, Tolerances};
use crate::repair::{baseline_repair, guided_repair, RepairConfig, RepairResult};
use crate::stats::{mean, median, quantile};

pub const REPORT_SCHEMA: &str = "arpro-report-v1";

/// Floor on `|baseline|` in the per-pair improvement.
/// Upper end of the image preset's noise schedule.
pub const IMAGE_B_END: f64 = 0.05;

pub const DELTA_DENOMINATOR_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    SyntheticTs,
    SyntheticImage,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Dataset directory for `csv`.
    pub path: Option<PathBuf>,
    pub n_features: usize,
    pub window_len: usize,
    pub side: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub anomalies: Vec<AnomalySpec>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::SyntheticTs,
            path: None,
            n_features: 4,
            window_len: 32,
            side: 16,
            n_train: 200,
            n_test: 50,
            anomalies: vec![
                AnomalySpec {
                    kind: AnomalyKind::Spike,
                    magnitude: 2.5,
                    extent: 0.05,
                    count: 1,
                },
                AnomalySpec {
                    kind: AnomalyKind::LevelShift,
                    magnitude: 1.5,
                    extent: 0.1,
                    count: 1,
                },
            ],
        }
    }
}

impl DataConfig {
    pub fn image() -> Self {
        DataConfig {
            source: DataSource::SyntheticImage,
            anomalies: vec![
                AnomalySpec {
                    kind: AnomalyKind::SquareDefect,
                    magnitude: 2.0,
                    extent: 0.05,
                    count: 1,
                },
                AnomalySpec {
                    kind: AnomalyKind::StripeDefect,
                    magnitude: 2.0,
                    extent: 0.1,
                    count: 1,
                },
            ],
            ..DataConfig::default()
        }
    }

    /// Raw (unscaled) dataset.
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self.source {
            DataSource::SyntheticTs => gen_synthetic_ts(
                self.n_features,
                self.window_len,
                self.n_train,
                self.n_test,
                &self.anomalies,
                seed,
            ),
            DataSource::SyntheticImage => {
                gen_synthetic_image(self.side, self.n_train, self.n_test, &self.anomalies, seed)
            }
            DataSource::Csv => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::InvalidParameter("csv data source needs a path".into()))?;
                load_csv_dataset(path)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    pub sigma_floor: f64,
    pub recon: ReconConfig,
    /// Training-set quantile used for the per-feature thresholds `τ`.
    pub tau_quantile: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            kind: DetectorKind::Gauss,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            recon: ReconConfig::default(),
            tau_quantile: 0.9,
        }
    }
}

impl DetectorConfig {
    pub fn fit(&self, train: &[Vec<f64>], seed: u64) -> Result<AnyDetector> {
        Ok(match self.kind {
            DetectorKind::Gauss => AnyDetector::Gauss(fit_gauss(train, self.sigma_floor)?),
            DetectorKind::Recon => AnyDetector::Recon(fit_recon(train, &self.recon, seed)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub detector: DetectorConfig,
    pub diffusion: DiffusionConfig,
    pub repair: RepairConfig,
    /// Cap on repaired anomalous test instances.
    pub n_instances: usize,
    /// Instances used per ablation value.
    pub ablation_instances: usize,
    /// Conformal confidence for instance selection and TNR.
    pub confidence: f64,
    /// Similarity tolerance for the satisfaction rate; `None` uses the 95th
    /// percentile of the run's baseline `l2`.
    pub delta2: Option<f64>,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataConfig::default(),
            detector: DetectorConfig::default(),
            diffusion: DiffusionConfig::default(),
            repair: RepairConfig::default(),
            n_instances: 50,
            ablation_instances: 20,
            confidence: 0.95,
            delta2: None,
            seed: 0,
            jobs: 1,
        }
    }
}

impl ExperimentConfig {
    /// 16×16 texture benchmark with the autoencoder detector. The shorter
    /// noise range keeps ancestral sampling bounded on the low-rank texture
    /// data, and the autoencoder loss needs a smaller guidance step.
    pub fn image() -> Self {
        ExperimentConfig {
            data: DataConfig::image(),
            detector: DetectorConfig {
                kind: DetectorKind::Recon,
                ..DetectorConfig::default()
            },
            diffusion: DiffusionConfig {
                b_end: Some(IMAGE_B_END),
                ..DiffusionConfig::default()
            },
            repair: RepairConfig {
                eta_start: 0.02,
                eta_end: 0.05,
                ..RepairConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.repair.validate()?;
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "confidence {} outside (0, 1)",
                self.confidence
            )));
        }
        if self.n_instances == 0 {
            return Err(Error::InvalidParameter("n_instances must be positive".into()));
        }
        if matches!(self.delta2, Some(d) if !(d > 0.0)) {
            return Err(Error::InvalidParameter("delta2 must be positive".into()));
        }
        Ok(())
    }
}

/// Everything a run needs, in standardised coordinates.
#[derive(Debug, Clone)]
pub struct Models {
    pub data: Dataset,
    pub scaler: Scaler,
    pub detector: AnyDetector,
    pub tau: Thresholds,
    pub denoiser: Denoiser,
    pub denoiser_report: Option<TrainReport>,
}

/// Raw dataset and its fitted scaler; both are pure functions of the config.
pub fn load_scaled(cfg: &ExperimentConfig) -> Result<(Dataset, Scaler)> {
    let raw = cfg.data.load(cfg.seed)?;
    raw.validate()?;
    let scaler = fit_scaler(&raw.train, DEFAULT_SCALE_FLOOR)?;
    Ok((scaler.apply_dataset(&raw)?, scaler))
}

/// Loads data and trains both models from `cfg`.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Models> {
    cfg.validate()?;
    let (data, scaler) = load_scaled(cfg)?;
    let detector = cfg.detector.fit(&data.train, cfg.seed)?;
    let (denoiser, report) = train_denoiser(&data.train, &cfg.diffusion, cfg.seed)?;
    assemble(cfg, data, scaler, detector, denoiser, Some(report))
}

/// Builds [`Models`] around already trained networks.
pub fn assemble(
    cfg: &ExperimentConfig,
    data: Dataset,
    scaler: Scaler,
    detector: AnyDetector,
    denoiser: Denoiser,
    denoiser_report: Option<TrainReport>,
) -> Result<Models> {
    let n = data.dim();
    for (what, dim) in [("detector", detector.dim()), ("denoiser", denoiser.dim())] {
        if dim != n {
            return Err(Error::InvalidParameter(format!(
                "{what} expects dimension {dim} but the dataset has {n}"
            )));
        }
    }
    let tau = calibrate_thresholds(&detector, &data.train, cfg.detector.tau_quantile)?;
    Ok(Models {
        data,
        scaler,
        detector,
        tau,
        denoiser,
        denoiser_report,
    })
}

/// An anomalous test instance chosen for repair.
#[derive(Debug, Clone, PartialEq)]
pub struct Selected {
    pub instance_id: u64,
    pub x_bad: Vec<f64>,
    pub omega: AnomalyMask,
    pub score: f64,
}

/// Conformal threshold on training scores and the test instances above it,
/// in test order, at most `cap`.
pub fn select_anomalies(models: &Models, confidence: f64, cap: usize) -> Result<(f64, Vec<Selected>)> {
    let train_scores = total_scores(&models.detector, &models.data.train)?;
    let threshold = conformal_threshold(&train_scores, confidence)?;
    let mut picked = Vec::new();
    for (i, x) in models.data.test.iter().enumerate() {
        if picked.len() == cap {
            break;
        }
        let s = models.detector.score(x)?;
        if s.total > threshold {
            picked.push(Selected {
                instance_id: i as u64,
                x_bad: x.clone(),
                omega: binarize(&s, &models.tau)?,
                score: s.total,
            });
        }
    }
    if picked.is_empty() {
        return Err(Error::NoAnomalies { threshold });
    }
    Ok((threshold, picked))
}

pub fn total_scores<D: Detector + ?Sized>(det: &D, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    xs.iter().map(|x| Ok(det.score(x)?.total)).collect()
}

/// Per-pair improvement `100·(b − g)/max(|b|, 1e-9)`, median over pairs.
pub fn aggregate_delta(baseline: &[f64], guided: &[f64]) -> Result<f64> {
    if baseline.len() != guided.len() {
        return Err(Error::InvalidParameter(format!(
            "{} baseline values but {} guided values",
            baseline.len(),
            guided.len()
        )));
    }
    if baseline.is_empty() {
        return Err(Error::Empty("aggregate_delta"));
    }
    let p: Vec<f64> = baseline
        .iter()
        .zip(guided)
        .map(|(b, g)| 100.0 * (b - g) / b.abs().max(DELTA_DENOMINATOR_FLOOR))
        .collect();
    median(&p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TnrReport {
    #[serde(serialize_with = "finite_or_inf", deserialize_with = "parse_finite_or_inf")]
    pub threshold: f64,
    pub tnr_baseline: f64,
    pub tnr_guided: f64,
}

pub fn tnr_report<D: Detector + ?Sized>(
    det: &D,
    train: &[Vec<f64>],
    baseline: &[Vec<f64>],
    guided: &[Vec<f64>],
    confidence: f64,
) -> Result<TnrReport> {
    let threshold = conformal_threshold(&total_scores(det, train)?, confidence)?;
    Ok(TnrReport {
        threshold,
        tnr_baseline: tnr(&total_scores(det, baseline)?, threshold)?,
        tnr_guided: tnr(&total_scores(det, guided)?, threshold)?,
    })
}

fn finite_or_inf<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn parse_finite_or_inf<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Repr::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRecord {
    pub metrics: MetricsRecord,
    pub losses: LossBreakdown,
    pub seconds: f64,
    pub trajectory_hash: String,
}

impl From<&RepairResult> for ArmRecord {
    fn from(r: &RepairResult) -> Self {
        ArmRecord {
            metrics: r.metrics,
            losses: r.losses,
            seconds: r.seconds,
            trajectory_hash: r.trajectory_hash.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance_id: u64,
    pub score: f64,
    pub omega_count: usize,
    pub baseline: ArmRecord,
    pub guided: ArmRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmPair<T> {
    pub baseline: T,
    pub guided: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub schema: String,
    pub seed: u64,
    pub dim: usize,
    pub n_instances: usize,
    pub medians: ArmPair<MetricsRecord>,
    pub delta_percent: MetricsRecord,
    pub tnr: TnrReport,
    pub delta2: f64,
    pub satisfaction_rate: ArmPair<f64>,
    pub seconds_median: ArmPair<f64>,
    pub denoiser: Option<TrainReport>,
    pub notes: Vec<String>,
    /// Effective configuration and overrides, as supplied by the caller.
    pub provenance: serde_json::Value,
    pub instances: Vec<InstanceRecord>,
}

const SIGNED_METRIC_NOTE: &str = "delta_percent is the median over instances of 100*(baseline-guided)/max(|baseline|,1e-9); \
     m_omega and m_omega_bar are signed, so values above 100 mean the guided repair improved past zero by more than the baseline's magnitude";

/// Repairs of one instance in both arms with shared noise.
pub struct PairedRepair {
    pub selected: Selected,
    pub baseline: RepairResult,
    pub guided: RepairResult,
}

/// Maps `f` over `items` on `jobs` threads, keeping input order.
fn par_map<T: Sync, R: Send>(jobs: usize, items: &[T], f: impl Fn(&T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    if jobs <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}

/// Runs both arms on every selected instance, in parallel over `jobs`
/// threads; results keep instance order.
pub fn repair_pairs(models: &Models, selected: &[Selected], repair: &RepairConfig, jobs: usize) -> Result<Vec<PairedRepair>> {
    par_map(jobs, selected, |s| {
        let baseline = baseline_repair(&models.detector, &models.denoiser, &s.x_bad, &s.omega, repair, s.instance_id)?;
        let guided = guided_repair(&models.detector, &models.denoiser, &s.x_bad, &s.omega, repair, s.instance_id)?;
        Ok(PairedRepair {
            selected: s.clone(),
            baseline,
            guided,
        })
    })
}

/// One arm over every selected instance.
pub fn repair_arm(
    models: &Models,
    selected: &[Selected],
    repair: &RepairConfig,
    guided: bool,
    jobs: usize,
) -> Result<Vec<RepairResult>> {
    par_map(jobs, selected, |s| {
        let run = if guided { guided_repair } else { baseline_repair };
        run(&models.detector, &models.denoiser, &s.x_bad, &s.omega, repair, s.instance_id)
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<AggregateReport> {
    let models = prepare(cfg)?;
    run_experiment_with(cfg, &models, serde_json::to_value(cfg).expect("config serialises"))
}

pub fn run_experiment_with(cfg: &ExperimentConfig, models: &Models, provenance: serde_json::Value) -> Result<AggregateReport> {
    cfg.validate()?;
    let (_, selected) = select_anomalies(models, cfg.confidence, cfg.n_instances)?;
    let pairs = repair_pairs(models, &selected, &cfg.repair, cfg.jobs)?;
    aggregate(cfg, models, &pairs, provenance)
}

fn metric_column(pairs: &[PairedRepair], k: usize, guided: bool) -> Vec<f64> {
    pairs
        .iter()
        .map(|p| if guided { &p.guided } else { &p.baseline }.metrics.as_array()[k])
        .collect()
}

fn per_metric(f: impl Fn(usize) -> Result<f64>) -> Result<MetricsRecord> {
    Ok(MetricsRecord::from_array([f(0)?, f(1)?, f(2)?, f(3)?]))
}

pub fn aggregate(
    cfg: &ExperimentConfig,
    models: &Models,
    pairs: &[PairedRepair],
    provenance: serde_json::Value,
) -> Result<AggregateReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("repair pairs"));
    }
    let medians = ArmPair {
        baseline: per_metric(|k| median(&metric_column(pairs, k, false)))?,
        guided: per_metric(|k| median(&metric_column(pairs, k, true)))?,
    };
    let delta_percent = per_metric(|k| aggregate_delta(&metric_column(pairs, k, false), &metric_column(pairs, k, true)))?;

    let fixes = |guided: bool| -> Vec<Vec<f64>> {
        pairs
            .iter()
            .map(|p| if guided { &p.guided } else { &p.baseline }.x_fix.clone())
            .collect()
    };
    let tnr = tnr_report(&models.detector, &models.data.train, &fixes(false), &fixes(true), cfg.confidence)?;

    let losses = |guided: bool| -> Vec<LossBreakdown> {
        pairs
            .iter()
            .map(|p| if guided { p.guided.losses } else { p.baseline.losses })
            .collect()
    };
    let delta2 = match cfg.delta2 {
        Some(d) => d,
        None => quantile(&losses(false).iter().map(|l| l.l2).collect::<Vec<_>>(), 0.95)?.max(1e-9),
    };
    let tol = Tolerances { delta2, ..cfg.repair.tol };
    let satisfaction_rate = ArmPair {
        baseline: satisfaction_rate(&losses(false), &tol)?,
        guided: satisfaction_rate(&losses(true), &tol)?,
    };
    let seconds = |guided: bool| -> Vec<f64> {
        pairs
            .iter()
            .map(|p| if guided { p.guided.seconds } else { p.baseline.seconds })
            .collect()
    };

    Ok(AggregateReport {
        schema: REPORT_SCHEMA.into(),
        seed: cfg.seed,
        dim: models.data.dim(),
        n_instances: pairs.len(),
        medians,
        delta_percent,
        tnr,
        delta2,
        satisfaction_rate,
        seconds_median: ArmPair {
            baseline: median(&seconds(false))?,
            guided: median(&seconds(true))?,
        },
        denoiser: models.denoiser_report.clone(),
        notes: vec![SIGNED_METRIC_NOTE.into()],
        provenance,
        instances: pairs
            .iter()
            .map(|p| InstanceRecord {
                instance_id: p.selected.instance_id,
                score: p.selected.score,
                omega_count: p.selected.omega.count(),
                baseline: (&p.baseline).into(),
                guided: (&p.guided).into(),
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationParam {
    Lambda1,
    Lambda2,
    Lambda3,
    Lambda4,
    EtaScale,
}

impl std::str::FromStr for AblationParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda1" => Ok(AblationParam::Lambda1),
            "lambda2" => Ok(AblationParam::Lambda2),
            "lambda3" => Ok(AblationParam::Lambda3),
            "lambda4" => Ok(AblationParam::Lambda4),
            "eta_scale" | "eta-scale" => Ok(AblationParam::EtaScale),
            other => Err(Error::InvalidParameter(format!(
                "unknown ablation parameter {other:?}; expected lambda1..lambda4 or eta_scale"
            ))),
        }
    }
}

impl AblationParam {
    pub fn name(self) -> &'static str {
        match self {
            AblationParam::Lambda1 => "lambda1",
            AblationParam::Lambda2 => "lambda2",
            AblationParam::Lambda3 => "lambda3",
            AblationParam::Lambda4 => "lambda4",
            AblationParam::EtaScale => "eta_scale",
        }
    }

    pub fn apply(self, base: &RepairConfig, value: f64) -> RepairConfig {
        let mut cfg = *base;
        match self {
            AblationParam::Lambda1 => cfg.weights.lambda1 = value,
            AblationParam::Lambda2 => cfg.weights.lambda2 = value,
            AblationParam::Lambda3 => cfg.weights.lambda3 = value,
            AblationParam::Lambda4 => cfg.weights.lambda4 = value,
            AblationParam::EtaScale => {
                cfg.eta_start *= value;
                cfg.eta_end *= value;
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: f64,
    pub mean: MetricsRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub schema: String,
    pub param: AblationParam,
    pub seed: u64,
    pub n_instances: usize,
    pub rows: Vec<AblationRow>,
    /// `(max − min)/max(|mean over rows|, 1e-9)` of each metric's row means.
    pub relative_range: MetricsRecord,
    pub provenance: serde_json::Value,
}

/// Guided repairs of the first `cfg.ablation_instances` selected instances
/// with one parameter varied.
pub fn ablation_sweep(
    cfg: &ExperimentConfig,
    models: &Models,
    param: AblationParam,
    values: &[f64],
    provenance: serde_json::Value,
) -> Result<AblationTable> {
    if values.is_empty() {
        return Err(Error::Empty("ablation values"));
    }
    cfg.validate()?;
    let (_, selected) = select_anomalies(models, cfg.confidence, cfg.ablation_instances.max(1))?;
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let repair = param.apply(&cfg.repair, value);
        repair.validate()?;
        let results = repair_arm(models, &selected, &repair, true, cfg.jobs)?;
        let mean = per_metric(|k| mean(&results.iter().map(|r| r.metrics.as_array()[k]).collect::<Vec<_>>()))?;
        rows.push(AblationRow { value, mean });
    }
    let relative_range = per_metric(|k| {
        let col: Vec<f64> = rows.iter().map(|r| r.mean.as_array()[k]).collect();
        let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        Ok((hi - lo) / mean(&col)?.abs().max(1e-9))
    })?;
    Ok(AblationTable {
        schema: REPORT_SCHEMA.into(),
        param,
        seed: cfg.seed,
        n_instances: selected.len(),
        rows,
        relative_range,
        provenance,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serialises") + "\n"
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for row in rows {
        w.write_record(&row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

/// `report.json`, `summary.csv` (one row per instance and arm) and
/// `aggregates.csv`.
pub fn write_report(report: &AggregateReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("report.json"), &to_json(report))?;

    let summary = report.instances.iter().flat_map(|inst| {
        [("baseline", &inst.baseline), ("guided", &inst.guided)].map(|(arm, r)| {
            let mut row = vec![inst.instance_id.to_string(), arm.to_string()];
            row.extend(r.metrics.as_array().iter().map(f64::to_string));
            row.extend([r.losses.l1, r.losses.l2, r.losses.l3, r.losses.l4].iter().map(f64::to_string));
            row.push(r.seconds.to_string());
            row
        })
    });
    write_file(
        &dir.join("summary.csv"),
        &csv_text(
            &["instance_id", "arm", "m_s", "m_d", "m_omega", "m_omega_bar", "l1", "l2", "l3", "l4", "seconds"],
            summary,
        ),
    )?;

    let mut rows: Vec<Vec<String>> = MetricsRecord::NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            vec![
                name.to_string(),
                report.medians.baseline.as_array()[k].to_string(),
                report.medians.guided.as_array()[k].to_string(),
                report.delta_percent.as_array()[k].to_string(),
            ]
        })
        .collect();
    let plain = |name: &str, b: f64, g: f64| vec![name.to_string(), b.to_string(), g.to_string(), String::new()];
    rows.push(plain("tnr", report.tnr.tnr_baseline, report.tnr.tnr_guided));
    rows.push(plain("satisfaction_rate", report.satisfaction_rate.baseline, report.satisfaction_rate.guided));
    rows.push(plain("seconds", report.seconds_median.baseline, report.seconds_median.guided));
    write_file(
        &dir.join("aggregates.csv"),
        &csv_text(&["metric", "baseline", "guided", "delta_percent"], rows),
    )
}

pub fn write_ablation(table: &AblationTable, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = format!("ablation_{}", table.param.name());
    write_file(&dir.join(format!("{stem}.json")), &to_json(table))?;
    let rows = table.rows.iter().map(|r| {
        let mut row = vec![r.value.to_string()];
        row.extend(r.mean.as_array().iter().map(f64::to_string));
        row
    });
    write_file(
        &dir.join(format!("{stem}.csv")),
        &csv_text(&["value", "m_s", "m_d", "m_omega", "m_omega_bar"], rows),
    )
}
