use std::fs;
use std::path::Path;

use arpro_core::checkpoint::Checkpoint;
use arpro_core::harness::{
    ablation_sweep, assemble, load_scaled, repair_arm, run_experiment_with, select_anomalies, write_ablation,
    write_report, AblationParam, DataSource, Models,
};
use arpro_core::{
    train_denoiser, AnyDetector, Denoiser, Error, ExperimentConfig, InfillMode, LossBreakdown, MetricsRecord, Result,
    StdMode,
};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::args::{AblateCmd, Common, EvalCmd, Kind, ModelPaths, RepairCmd, RepairFlags};

/// Effective configuration plus what produced it.
struct Setup {
    cfg: ExperimentConfig,
    provenance: Value,
}

fn json_err(context: impl Into<String>, source: serde_json::Error) -> Error {
    Error::Json {
        context: context.into(),
        source,
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.to_path_buf()))
    }
}

/// Overlays `patch` onto `base`, recursing into objects.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn preset(kind: Kind) -> ExperimentConfig {
    match kind {
        Kind::Ts => ExperimentConfig::default(),
        Kind::Image => ExperimentConfig::image(),
    }
}

fn setup(command: &str, common: &Common, models: Option<&ModelPaths>, flags: Option<&RepairFlags>) -> Result<Setup> {
    // Every referenced path is checked before any work starts.
    if let Some(path) = &common.config {
        require_file(path)?;
    }
    if let Some(dir) = &common.input {
        for name in ["train.csv", "test.csv", "test_labels.csv"] {
            require_file(&dir.join(name))?;
        }
    }
    if let Some(m) = models {
        for path in [&m.detector, &m.denoiser].into_iter().flatten() {
            require_file(path)?;
        }
    }

    let mut effective = serde_json::to_value(preset(common.kind)).expect("config serialises");
    let mut file_contents = Value::Null;
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        file_contents = serde_json::from_str(&text).map_err(|e| json_err(path.display().to_string(), e))?;
        merge(&mut effective, file_contents.clone());
    }
    let context = common
        .config
        .as_ref()
        .map_or_else(|| "configuration".to_string(), |p| p.display().to_string());
    let mut cfg: ExperimentConfig = serde_json::from_value(effective).map_err(|e| json_err(context, e))?;

    let mut overrides = Map::new();
    overrides.insert("kind".into(), json!(format!("{:?}", common.kind).to_lowercase()));
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        overrides.insert("seed".into(), json!(seed));
    }
    cfg.repair.seed = cfg.seed;
    if let Some(jobs) = common.jobs {
        cfg.jobs = jobs;
        overrides.insert("jobs".into(), json!(jobs));
    }
    if let Some(dir) = &common.input {
        cfg.data.source = DataSource::Csv;
        cfg.data.path = Some(dir.clone());
        overrides.insert("input".into(), json!(dir));
    }
    if let Some(m) = models {
        if let Some(p) = &m.detector {
            overrides.insert("detector".into(), json!(p));
        }
        if let Some(p) = &m.denoiser {
            overrides.insert("denoiser".into(), json!(p));
        }
    }
    if let Some(f) = flags {
        apply_flags(&mut cfg, f, &mut overrides)?;
    }
    cfg.validate()?;
    if cfg.jobs == 0 {
        return Err(Error::InvalidParameter("--jobs must be at least 1".into()));
    }

    let provenance = json!({
        "command": command,
        "config_file": common.config,
        "config": file_contents,
        "overrides": overrides,
        "effective": cfg,
    });
    Ok(Setup { cfg, provenance })
}

fn apply_flags(cfg: &mut ExperimentConfig, f: &RepairFlags, overrides: &mut Map<String, Value>) -> Result<()> {
    let w = &mut cfg.repair.weights;
    for (name, value, slot) in [
        ("lambda1", f.lambda1, &mut w.lambda1),
        ("lambda2", f.lambda2, &mut w.lambda2),
        ("lambda3", f.lambda3, &mut w.lambda3),
        ("lambda4", f.lambda4, &mut w.lambda4),
    ] {
        if let Some(v) = value {
            *slot = v;
            overrides.insert(name.into(), json!(v));
        }
    }
    if let Some(v) = f.eta_start {
        cfg.repair.eta_start = v;
        overrides.insert("eta_start".into(), json!(v));
    }
    if let Some(v) = f.eta_end {
        cfg.repair.eta_end = v;
        overrides.insert("eta_end".into(), json!(v));
    }
    if let Some(mode) = &f.infill_mode {
        cfg.repair.infill_mode = mode.parse::<InfillMode>()?;
        overrides.insert("infill_mode".into(), json!(mode));
    }
    if let Some(mode) = &f.std_mode {
        cfg.diffusion.std_mode = mode.parse::<StdMode>()?;
        overrides.insert("std_mode".into(), json!(mode));
    }
    if f.timing {
        cfg.repair.timing = true;
        overrides.insert("timing".into(), json!(true));
    }
    Ok(())
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("output serialises") + "\n";
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn load_models(setup: &Setup, paths: &ModelPaths, std_override: bool) -> Result<Models> {
    let cfg = &setup.cfg;
    let (data, scaler) = load_scaled(cfg)?;
    let detector = match &paths.detector {
        Some(p) => AnyDetector::from_checkpoint(&Checkpoint::load(p)?)?,
        None => cfg.detector.fit(&data.train, cfg.seed)?,
    };
    let (denoiser, report) = match &paths.denoiser {
        Some(p) => {
            let den = Denoiser::from_checkpoint(&Checkpoint::load(p)?)?;
            let den = if std_override {
                den.with_std_mode(cfg.diffusion.std_mode)
            } else {
                den
            };
            (den, None)
        }
        None => {
            let (den, report) = train_denoiser(&data.train, &cfg.diffusion, cfg.seed)?;
            (den, Some(report))
        }
    };
    assemble(cfg, data, scaler, detector, denoiser, report)
}

pub fn gen_data(common: &Common) -> Result<()> {
    if common.input.is_some() {
        return Err(Error::InvalidParameter("gen-data writes synthetic data and takes no --input".into()));
    }
    let s = setup("gen-data", common, None, None)?;
    if s.cfg.data.source == DataSource::Csv {
        return Err(Error::InvalidParameter("gen-data needs a synthetic data source".into()));
    }
    let ds = s.cfg.data.load(s.cfg.seed)?;
    arpro_core::write_csv_dataset(&ds, &common.out)?;
    write_json(&common.out.join("provenance.json"), &s.provenance)
}

pub fn train_detector(common: &Common) -> Result<()> {
    let s = setup("train-detector", common, None, None)?;
    let (data, scaler) = load_scaled(&s.cfg)?;
    let det = s.cfg.detector.fit(&data.train, s.cfg.seed)?;
    create_out(&common.out)?;
    det.to_checkpoint().save(&common.out.join("detector.json"))?;
    write_json(&common.out.join("scaler.json"), &scaler)?;
    write_json(&common.out.join("provenance.json"), &s.provenance)
}

pub fn train_diffusion(common: &Common) -> Result<()> {
    let s = setup("train-diffusion", common, None, None)?;
    let (data, _) = load_scaled(&s.cfg)?;
    let (den, report) = train_denoiser(&data.train, &s.cfg.diffusion, s.cfg.seed)?;
    create_out(&common.out)?;
    den.to_checkpoint().save(&common.out.join("denoiser.json"))?;
    write_json(
        &common.out.join("train_report.json"),
        &json!({ "report": report, "provenance": s.provenance }),
    )
}

#[derive(Serialize)]
struct RepairRecord {
    instance_id: u64,
    score: f64,
    omega: Vec<u8>,
    /// Original data scale.
    x_bad: Vec<f64>,
    /// Original data scale.
    x_fix: Vec<f64>,
    losses: LossBreakdown,
    metrics: MetricsRecord,
    trajectory_hash: String,
    seconds: f64,
}

#[derive(Serialize)]
struct RepairOutput {
    schema: &'static str,
    arm: &'static str,
    seed: u64,
    threshold: f64,
    feature_names: Vec<String>,
    provenance: Value,
    repairs: Vec<RepairRecord>,
}

fn csv_line(fields: impl IntoIterator<Item = String>) -> String {
    let quoted: Vec<String> = fields
        .into_iter()
        .map(|f| {
            if f.contains([',', '"', '\n']) {
                format!("\"{}\"", f.replace('"', "\"\""))
            } else {
                f
            }
        })
        .collect();
    quoted.join(",") + "\n"
}

pub fn repair(cmd: &RepairCmd) -> Result<()> {
    let s = setup("repair", &cmd.common, Some(&cmd.models), Some(&cmd.flags))?;
    let guided = !cmd.baseline;
    let mut provenance = s.provenance.clone();
    provenance["overrides"]["arm"] = json!(if guided { "guided" } else { "baseline" });
    let models = load_models(&s, &cmd.models, cmd.flags.std_mode.is_some())?;
    let (threshold, selected) = select_anomalies(&models, s.cfg.confidence, s.cfg.n_instances)?;
    let results = repair_arm(&models, &selected, &s.cfg.repair, guided, s.cfg.jobs)?;

    let mut repairs = Vec::with_capacity(results.len());
    for (sel, r) in selected.iter().zip(results) {
        repairs.push(RepairRecord {
            instance_id: sel.instance_id,
            score: sel.score,
            omega: sel.omega.bits().iter().map(|&b| u8::from(b)).collect(),
            x_bad: models.scaler.invert(&sel.x_bad)?,
            x_fix: models.scaler.invert(&r.x_fix)?,
            losses: r.losses,
            metrics: r.metrics,
            trajectory_hash: r.trajectory_hash,
            seconds: r.seconds,
        });
    }
    let out = RepairOutput {
        schema: arpro_core::harness::REPORT_SCHEMA,
        arm: if guided { "guided" } else { "baseline" },
        seed: s.cfg.seed,
        threshold,
        feature_names: models.data.feature_names.clone(),
        provenance,
        repairs,
    };

    create_out(&cmd.common.out)?;
    write_json(&cmd.common.out.join("repairs.json"), &out)?;
    let mut text = csv_line(std::iter::once("instance_id".to_string()).chain(out.feature_names.iter().cloned()));
    for r in &out.repairs {
        text += &csv_line(std::iter::once(r.instance_id.to_string()).chain(r.x_fix.iter().map(f64::to_string)));
    }
    let path = cmd.common.out.join("x_fix.csv");
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

pub fn evaluate(cmd: &EvalCmd) -> Result<()> {
    let s = setup("evaluate", &cmd.common, Some(&cmd.models), Some(&cmd.flags))?;
    let models = load_models(&s, &cmd.models, cmd.flags.std_mode.is_some())?;
    let report = run_experiment_with(&s.cfg, &models, s.provenance.clone())?;
    write_report(&report, &cmd.common.out)
}

fn parse_values(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("--values: {v:?} is not a number")))
        })
        .collect()
}

pub fn ablate(cmd: &AblateCmd) -> Result<()> {
    let params = cmd
        .param
        .split(',')
        .map(|p| p.trim().parse::<AblationParam>())
        .collect::<Result<Vec<_>>>()?;
    let values = parse_values(&cmd.values)?;
    let mut s = setup("ablate", &cmd.common, Some(&cmd.models), Some(&cmd.flags))?;
    s.provenance["overrides"]["param"] = json!(cmd.param);
    s.provenance["overrides"]["values"] = json!(values);
    let models = load_models(&s, &cmd.models, cmd.flags.std_mode.is_some())?;
    for param in params {
        let table = ablation_sweep(&s.cfg, &models, param, &values, s.provenance.clone())?;
        write_ablation(&table, &cmd.common.out)?;
    }
    Ok(())
}
