//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::thread;
use std::time::{Duration, Instant};

use arpro_core::data::heldout_normal_ts;
use arpro_core::detector::DetectorKind;
use arpro_core::harness::{load_scaled, prepare, select_anomalies, total_scores};
use arpro_core::nn::TrainConfig;
use arpro_core::rng::{Purpose, Stream};
use arpro_core::*;
use serde_json::Value;

type CliResult = std::result::Result<(), String>;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { name, pass, detail }
}

fn random_point(stream: &mut Stream, n: usize, scale: f64) -> Vec<f64> {
    stream.normals(n).into_iter().map(|v| scale * v).collect()
}

fn random_mask(stream: &mut Stream, n: usize) -> AnomalyMask {
    AnomalyMask::from_bits((0..n).map(|_| stream.coin()).collect())
}

/// Gauss detector on the time-series benchmark and an autoencoder on the
/// image benchmark, both in standardised coordinates.
fn fitted_detectors() -> (AnyDetector, AnyDetector) {
    let ts = ExperimentConfig::default();
    let (ts_data, _) = load_scaled(&ts).unwrap();
    let gauss = ts.detector.fit(&ts_data.train, 0).unwrap();
    let mut img = ExperimentConfig::image();
    img.detector.recon.train = TrainConfig {
        steps: 300,
        ..img.detector.recon.train
    };
    let (img_data, _) = load_scaled(&img).unwrap();
    let recon = img.detector.fit(&img_data.train, 0).unwrap();
    assert_eq!(recon.kind(), DetectorKind::Recon);
    (gauss, recon)
}

fn criterion_decomposability(dets: &[&AnyDetector; 2]) -> Outcome {
    let started = Instant::now();
    let mut worst_total = 0.0f64;
    let mut worst_region = 0.0f64;
    for (k, det) in dets.iter().enumerate() {
        let n = det.dim();
        let mut stream = Stream::for_purpose(100 + k as u64, Purpose::Data, 0);
        for _ in 0..1000 {
            let x = random_point(&mut stream, n, 2.0);
            let z = random_mask(&mut stream, n);
            let s = det.score(&x).unwrap();
            let scale = 1.0 + s.total.abs();
            worst_total = worst_total.max((s.total - s.alpha.iter().sum::<f64>() - s.beta).abs() / scale);
            let additivity = s.region(&z).unwrap() + s.region(&z.complement()).unwrap() - (s.total + s.beta);
            worst_region = worst_region.max(additivity.abs() / scale);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        "1 decomposability",
        worst_total <= 1e-9 && worst_region <= 1e-9 && secs < 5.0,
        format!("max scaled gap {worst_total:.2e}, region gap {worst_region:.2e}, 2x1000 inputs, {secs:.2}s"),
    )
}

fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn max_rel_err(grad: &[f64], fd: &[f64]) -> f64 {
    grad.iter()
        .zip(fd)
        .map(|(g, d)| (g - d).abs() / d.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn criterion_gradients(dets: &[&AnyDetector; 2]) -> Outcome {
    let started = Instant::now();
    let tol = Tolerances {
        delta4: 0.5,
        ..Tolerances::default()
    };
    let weights = PropertyWeights::new(1.0, 0.5, 2.0, 1.5).unwrap();
    let mut stream = Stream::for_purpose(200, Purpose::Data, 0);
    let (mut worst_region, mut worst_guidance) = (0.0f64, 0.0f64);
    let mut points = 0;
    while points < 100 {
        let det = dets[points % 2];
        let n = det.dim();
        let x_bad = random_point(&mut stream, n, 1.5);
        let x_fix = random_point(&mut stream, n, 1.5);
        let omega = random_mask(&mut stream, n);
        let obj = PropertyObjective::new(det, &x_bad, &omega, tol, weights).unwrap();
        let (s_fix, s_bad) = (det.score(&x_fix).unwrap(), det.score(&x_bad).unwrap());
        let hinge3 = s_fix.region(&omega).unwrap() - s_bad.region(&omega).unwrap();
        let bar = omega.complement();
        let hinge4 = s_fix.region(&bar).unwrap() - s_bad.region(&bar).unwrap() - tol.delta4;
        if hinge3.abs() < 1e-2 || hinge4.abs() < 1e-2 {
            continue;
        }
        let region = grad_region_score(det, &x_fix, &omega).unwrap();
        let fd = central_difference(&|y| region_score(det, y, &omega).unwrap(), &x_fix, 1e-5);
        worst_region = worst_region.max(max_rel_err(&region, &fd));
        let guidance = obj.gradient(&x_fix).unwrap();
        let fd = central_difference(&|y| obj.breakdown(y).unwrap().total, &x_fix, 1e-5);
        worst_guidance = worst_guidance.max(max_rel_err(&guidance, &fd));
        points += 1;
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        "2 gradients",
        worst_region <= 1e-6 && worst_guidance <= 1e-6 && secs < 30.0,
        format!("max rel err region {worst_region:.2e}, guidance {worst_guidance:.2e}, 100 points, {secs:.2}s"),
    )
}

/// Time-series benchmark models with a short denoiser run; the repair
/// invariants hold for any denoiser.
fn quick_models() -> arpro_core::harness::Models {
    let mut cfg = ExperimentConfig::default();
    cfg.diffusion.train.steps = 300;
    prepare(&cfg).unwrap()
}

fn criterion_zero_guidance(models: &arpro_core::harness::Models) -> Outcome {
    let started = Instant::now();
    let (_, selected) = select_anomalies(models, 0.95, 20).unwrap();
    let mut equal = 0;
    for seed in 0..20u64 {
        let s = &selected[seed as usize % selected.len()];
        let cfg = RepairConfig {
            eta_start: 0.0,
            eta_end: 0.0,
            seed,
            ..RepairConfig::default()
        };
        let g = guided_repair(&models.detector, &models.denoiser, &s.x_bad, &s.omega, &cfg, s.instance_id).unwrap();
        let b = baseline_repair(&models.detector, &models.denoiser, &s.x_bad, &s.omega, &cfg, s.instance_id).unwrap();
        if g.trajectory_hash == b.trajectory_hash && g.x_fix == b.x_fix {
            equal += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        "3 zero-guidance equivalence",
        equal == 20 && secs < 120.0,
        format!("{equal}/20 seeds with identical trajectory hash, {secs:.1}s"),
    )
}

fn criterion_mask_preservation(models: &arpro_core::harness::Models) -> Outcome {
    let (_, selected) = select_anomalies(models, 0.95, 5).unwrap();
    let mut violations = 0usize;
    let mut steps = 0usize;
    let mut final_gap = 0.0f64;
    for mode in [InfillMode::LevelMatched, InfillMode::PaperLiteral] {
        let cfg = RepairConfig {
            infill_mode: mode,
            ..RepairConfig::default()
        };
        for s in &selected {
            let bits = s.omega.bits();
            let res = repair_observed(
                &models.detector,
                &models.denoiser,
                &s.x_bad,
                &s.omega,
                &cfg,
                s.instance_id,
                true,
                &mut |rec| {
                    steps += 1;
                    violations += bits
                        .iter()
                        .enumerate()
                        .filter(|(i, &a)| !a && rec.next[*i] != rec.x_bad_level[*i])
                        .count();
                },
            )
            .unwrap();
            if mode == InfillMode::LevelMatched {
                for (i, &a) in bits.iter().enumerate() {
                    if !a {
                        final_gap = final_gap.max((res.x_fix[i] - s.x_bad[i]).abs());
                    }
                }
            }
        }
    }
    outcome(
        "4 mask preservation",
        violations == 0 && final_gap <= 1e-12,
        format!("{violations} mismatches over {steps} steps in both modes, final level-matched gap {final_gap:.1e}"),
    )
}

struct SeedRun {
    report: AggregateReport,
}

fn run_benchmark(image: bool) -> (Vec<SeedRun>, Duration) {
    let started = Instant::now();
    let runs = SEEDS
        .iter()
        .map(|&seed| {
            let mut cfg = if image {
                ExperimentConfig::image()
            } else {
                ExperimentConfig::default()
            };
            cfg.seed = seed;
            cfg.repair.seed = seed;
            SeedRun {
                report: run_experiment(&cfg).unwrap(),
            }
        })
        .collect();
    (runs, started.elapsed())
}

fn directional(r: &AggregateReport) -> bool {
    let (b, g) = (&r.medians.baseline, &r.medians.guided);
    g.m_omega < b.m_omega && g.m_s < b.m_s && r.delta_percent.m_omega >= 20.0 && g.m_omega < 0.0
}

fn criterion_directional(label: &str, runs: &[SeedRun], elapsed: Duration) -> (bool, String) {
    let passing = runs.iter().filter(|r| directional(&r.report)).count();
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "dM_omega {:.1}% M_omega {:.1}/{:.1} M_s {:.1}/{:.1}",
                r.report.delta_percent.m_omega,
                r.report.medians.baseline.m_omega,
                r.report.medians.guided.m_omega,
                r.report.medians.baseline.m_s,
                r.report.medians.guided.m_s
            )
        })
        .collect();
    let secs = elapsed.as_secs_f64();
    (
        passing >= 4 && secs < 900.0,
        format!("{label} {passing}/5 seeds in {secs:.0}s [{}]", per_seed.join("; ")),
    )
}

fn criterion_tnr(runs: &[SeedRun]) -> Outcome {
    let passing = runs
        .iter()
        .filter(|r| r.report.tnr.tnr_guided >= r.report.tnr.tnr_baseline && r.report.tnr.tnr_guided >= 0.9)
        .count();
    let detail: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.2}/{:.2}", r.report.tnr.tnr_baseline, r.report.tnr.tnr_guided))
        .collect();
    outcome(
        "6 TNR",
        passing >= 4,
        format!("{passing}/5 seeds, baseline/guided TNR per seed [{}]", detail.join(", ")),
    )
}

fn criterion_coverage() -> Outcome {
    let cfg = ExperimentConfig::default();
    let d = &cfg.data;
    let ds = d.load(cfg.seed).unwrap();
    let det = cfg.detector.fit(&ds.train, cfg.seed).unwrap();
    let threshold = conformal_threshold(&total_scores(&det, &ds.train).unwrap(), 0.95).unwrap();
    let held = heldout_normal_ts(d.n_features, d.window_len, 500, cfg.seed).unwrap();
    let scores = total_scores(&det, &held).unwrap();
    let exceed = scores.iter().filter(|&&s| s > threshold).count() as f64 / scores.len() as f64;
    let bound = 0.05 + 2.0 / 500f64.sqrt();
    outcome(
        "7 conformal coverage",
        exceed <= bound,
        format!("exceedance {exceed:.3} <= {bound:.3} on 500 held-out normals"),
    )
}

fn arpro(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arpro"))
        .args(args)
        .output()
        .expect("arpro runs")
}

fn arpro_ok(args: &[&str]) -> CliResult {
    let out = arpro(args);
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`arpro {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

/// Names of differing or unmatched files between two output directories.
fn dir_diff(a: &Path, b: &Path) -> Vec<String> {
    let names = |d: &Path| -> Vec<String> {
        let mut v: Vec<String> = fs::read_dir(d)
            .map(|it| it.filter_map(|e| e.ok()).map(|e| e.file_name().to_string_lossy().into_owned()).collect())
            .unwrap_or_default();
        v.sort();
        v
    };
    let (na, nb) = (names(a), names(b));
    if na != nb || na.is_empty() {
        return vec![format!("{} vs {}: file sets differ", a.display(), b.display())];
    }
    na.into_iter()
        .filter(|n| fs::read(a.join(n)).ok() != fs::read(b.join(n)).ok())
        .collect()
}

struct CliFixture {
    root: PathBuf,
}

impl CliFixture {
    fn path(&self, rel: &str) -> String {
        self.root.join(rel).display().to_string()
    }
}

fn criterion_determinism(fx: &CliFixture) -> Outcome {
    let p = |r: &str| fx.path(r);
    let mut diffs = Vec::new();
    let mut run = |tag: &str, args: &[&str]| -> CliResult {
        for copy in ["a", "b"] {
            let out = p(&format!("{tag}_{copy}"));
            let mut full: Vec<&str> = args.to_vec();
            full.extend(["--out", &out]);
            arpro_ok(&full)?;
        }
        diffs.extend(
            dir_diff(&fx.root.join(format!("{tag}_a")), &fx.root.join(format!("{tag}_b")))
                .into_iter()
                .map(|f| format!("{tag}/{f}")),
        );
        Ok(())
    };
    let (data, det, den) = (p("gen_a"), p("det_a/detector.json"), p("den_a/denoiser.json"));
    let steps: CliResult = (|| {
        run("gen", &["gen-data", "--kind", "ts", "--seed", "0"])?;
        run("det", &["train-detector", "--input", &data, "--seed", "0"])?;
        run("den", &["train-diffusion", "--input", &data, "--seed", "0"])?;
        let models = ["--input", &data, "--detector", &det, "--denoiser", &den, "--seed", "0"];
        let mut repair = vec!["repair"];
        repair.extend(models);
        run("repair", &repair)?;
        let mut evaluate = vec!["evaluate"];
        evaluate.extend(models);
        run("evaluate", &evaluate)
    })();
    match steps {
        Err(e) => outcome("9 CLI determinism", false, e),
        Ok(()) => outcome(
            "9 CLI determinism",
            diffs.is_empty(),
            if diffs.is_empty() {
                "gen-data, train-detector, train-diffusion, repair, evaluate byte-identical on rerun".into()
            } else {
                format!("differing outputs: {}", diffs.join(", "))
            },
        ),
    }
}

fn criterion_ablation(fx: &CliFixture) -> Outcome {
    let started = Instant::now();
    let (data, det, den) = (fx.path("gen_a"), fx.path("det_a/detector.json"), fx.path("den_a/denoiser.json"));
    let params = ["lambda1", "lambda2", "lambda3", "lambda4"];
    for copy in ["abl_a", "abl_b"] {
        let out = fx.path(copy);
        let args = [
            "ablate", "--input", &data, "--detector", &det, "--denoiser", &den, "--seed", "0", "--param",
            "lambda1,lambda2,lambda3,lambda4", "--values", "0.1,1,10", "--out", &out,
        ];
        if let Err(e) = arpro_ok(&args) {
            return outcome("8 ablation", false, e);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let mut problems = Vec::new();
    let mut m_d_range = f64::NAN;
    for param in params {
        let path = fx.root.join("abl_a").join(format!("ablation_{param}.json"));
        let table: Value = match fs::read_to_string(&path).ok().and_then(|t| serde_json::from_str(&t).ok()) {
            Some(v) => v,
            None => {
                problems.push(format!("{param}: unreadable table"));
                continue;
            }
        };
        let rows = table["rows"].as_array().cloned().unwrap_or_default();
        let complete = rows.len() == 3
            && rows.iter().all(|r| {
                ["m_s", "m_d", "m_omega", "m_omega_bar"]
                    .iter()
                    .all(|m| r["mean"][m].as_f64().is_some_and(f64::is_finite))
            });
        if !complete {
            problems.push(format!("{param}: incomplete 3x4 table"));
        }
        if table["n_instances"].as_u64() != Some(20) {
            problems.push(format!("{param}: {} instances", table["n_instances"]));
        }
        if param == "lambda2" {
            m_d_range = table["relative_range"]["m_d"].as_f64().unwrap_or(f64::NAN);
        }
    }
    let diffs = dir_diff(&fx.root.join("abl_a"), &fx.root.join("abl_b"));
    if !diffs.is_empty() {
        problems.push(format!("rerun differs: {}", diffs.join(", ")));
    }
    outcome(
        "8 ablation",
        problems.is_empty() && secs < 1800.0,
        if problems.is_empty() {
            format!("4 tables of 3x4 means over 20 instances, deterministic, lambda2 relative m_d range {m_d_range:.3}, {secs:.0}s")
        } else {
            problems.join("; ")
        },
    )
}

fn main() {
    // The two benchmarks each run single-threaded, side by side.
    let ts = thread::spawn(|| run_benchmark(false));
    let image = thread::spawn(|| run_benchmark(true));

    let mut outcomes = Vec::new();
    let (gauss, recon) = fitted_detectors();
    outcomes.push(criterion_decomposability(&[&gauss, &recon]));
    outcomes.push(criterion_gradients(&[&gauss, &recon]));
    let models = quick_models();
    outcomes.push(criterion_zero_guidance(&models));
    outcomes.push(criterion_mask_preservation(&models));

    let dir = tempfile::tempdir().expect("temp dir");
    let fx = CliFixture {
        root: dir.path().to_path_buf(),
    };
    let determinism = criterion_determinism(&fx);
    let ablation = criterion_ablation(&fx);

    let (ts_runs, ts_time) = ts.join().expect("time-series benchmark");
    let (img_runs, img_time) = image.join().expect("image benchmark");
    let (ts_pass, ts_detail) = criterion_directional("time-series", &ts_runs, ts_time);
    let (img_pass, img_detail) = criterion_directional("image", &img_runs, img_time);
    outcomes.push(outcome("5 directional benchmark", ts_pass && img_pass, format!("{ts_detail} | {img_detail}")));
    outcomes.push(criterion_tnr(&ts_runs));
    outcomes.push(criterion_coverage());
    outcomes.push(ablation);
    outcomes.push(determinism);

    outcomes.sort_by_key(|o| o.name);
    println!();
    for o in &outcomes {
        println!("{} criterion {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
