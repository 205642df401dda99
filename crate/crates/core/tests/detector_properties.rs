use arpro_core::detector::calibrate_thresholds;
use arpro_core::nn::{Activation, TrainConfig};
use arpro_core::rng::{Purpose, Stream};
use arpro_core::*;
use proptest::prelude::*;

const N: usize = 12;

fn gauss() -> GaussDetector {
    let mu: Vec<f64> = (0..N).map(|i| 0.3 * i as f64 - 1.0).collect();
    let sigma: Vec<f64> = (0..N).map(|i| 0.5 + 0.1 * i as f64).collect();
    GaussDetector::new(mu, sigma, 1e-3).unwrap()
}

fn recon() -> ReconDetector {
    let cfg = ReconConfig {
        hidden: vec![16],
        latent: 4,
        activation: Activation::Silu,
        train: TrainConfig::default(),
    };
    ReconDetector::untrained(N, &cfg, 5).unwrap()
}

fn vector() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, N)
}

fn mask() -> impl Strategy<Value = AnomalyMask> {
    prop::collection::vec(any::<bool>(), N).prop_map(AnomalyMask::from_bits)
}

fn check_decomposition(det: &dyn Detector, x: &[f64], z: &AnomalyMask) -> std::result::Result<(), TestCaseError> {
    let s = det.score(x).unwrap();
    let sum: f64 = s.alpha.iter().sum::<f64>() + s.beta;
    prop_assert!((s.total - sum).abs() <= 1e-9 * (1.0 + s.total.abs()));
    let sz = s.region(z).unwrap();
    let szb = s.region(&z.complement()).unwrap();
    prop_assert!((sz + szb - (s.total + s.beta)).abs() <= 1e-9 * (1.0 + s.total.abs()));
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn gauss_decomposes(x in vector(), z in mask()) {
        check_decomposition(&gauss(), &x, &z)?;
    }

    #[test]
    fn recon_decomposes(x in vector(), z in mask()) {
        check_decomposition(&recon(), &x, &z)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn recon_region_is_monotone(x in vector(), bits in prop::collection::vec(0u8..3, N)) {
        // 0: in neither, 1: in the larger mask only, 2: in both.
        let small = AnomalyMask::from_bits(bits.iter().map(|&b| b == 2).collect());
        let large = AnomalyMask::from_bits(bits.iter().map(|&b| b >= 1).collect());
        let det = recon();
        prop_assert!(region_score(&det, &x, &small).unwrap() <= region_score(&det, &x, &large).unwrap());
    }

    #[test]
    fn loss_total_is_linear_in_each_weight(
        x_bad in vector(),
        x_fix in vector(),
        omega in mask(),
        w in prop::collection::vec(0.0f64..3.0, 4),
        k in 0usize..4,
        c in 0.0f64..5.0,
    ) {
        let det = gauss();
        let tol = Tolerances::default();
        let base = PropertyWeights::new(w[0], w[1], w[2], w[3]).unwrap();
        let mut scaled = base.as_array();
        scaled[k] = c;
        let scaled = PropertyWeights::new(scaled[0], scaled[1], scaled[2], scaled[3]).unwrap();
        let a = loss_breakdown(&det, &x_bad, &x_fix, &omega, &tol, &base).unwrap();
        let b = loss_breakdown(&det, &x_bad, &x_fix, &omega, &tol, &scaled).unwrap();
        let terms = [a.l1, a.l2, a.l3, a.l4];
        prop_assert_eq!([b.l1, b.l2, b.l3, b.l4], terms);
        let expected = a.total + (c - base.as_array()[k]) * terms[k];
        prop_assert!((b.total - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
    }

    #[test]
    fn hinges_are_nonnegative_and_vanish_at_identity(x_bad in vector(), x_fix in vector(), omega in mask()) {
        let det = recon();
        let tol = Tolerances::default();
        let w = PropertyWeights::default();
        let l = loss_breakdown(&det, &x_bad, &x_fix, &omega, &tol, &w).unwrap();
        prop_assert!(l.l3 >= 0.0 && l.l4 >= 0.0);
        let same = loss_breakdown(&det, &x_bad, &x_bad, &omega, &tol, &w).unwrap();
        prop_assert_eq!(same.l3, 0.0);
        prop_assert_eq!(same.l4, 0.0);
        prop_assert!(same.l2 < 1e-5);
    }

    #[test]
    fn region_metrics_add_up(x_bad in vector(), x_fix in vector(), omega in mask()) {
        let det = gauss();
        let m = metrics(&det, &x_bad, &x_fix, &omega).unwrap();
        let s_bad = det.score(&x_bad).unwrap().total;
        prop_assert!((m.m_omega + m.m_omega_bar - (m.m_s - s_bad)).abs() <= 1e-9 * (1.0 + s_bad.abs()));
        prop_assert!(m.m_d >= 0.0);
    }
}

fn rel_err(g: f64, fd: f64) -> f64 {
    (g - fd).abs() / fd.abs().max(1.0)
}

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn region_gradients_match_finite_differences() {
    let g = gauss();
    let r = recon();
    let dets: [&dyn Detector; 2] = [&g, &r];
    let mut stream = Stream::for_purpose(11, Purpose::Data, 0);
    let mut worst = 0.0f64;
    for point in 0..100 {
        let det = dets[point % 2];
        let x: Vec<f64> = stream.normals(N).iter().map(|v| 2.0 * v).collect();
        let z = AnomalyMask::from_bits((0..N).map(|_| stream.coin()).collect());
        let grad = grad_region_score(det, &x, &z).unwrap();
        let fd = central_difference(|y| region_score(det, y, &z).unwrap(), &x, 1e-5);
        for (a, b) in grad.iter().zip(&fd) {
            worst = worst.max(rel_err(*a, *b));
        }
    }
    assert!(worst <= 1e-6, "max relative error {worst:e}");
}

#[test]
fn guidance_gradients_match_finite_differences_away_from_kinks() {
    let g = gauss();
    let r = recon();
    let dets: [&dyn Detector; 2] = [&g, &r];
    let tol = Tolerances { delta4: 0.5, ..Tolerances::default() };
    let w = PropertyWeights::new(1.0, 0.7, 1.3, 0.9).unwrap();
    let mut stream = Stream::for_purpose(12, Purpose::Data, 0);
    let mut checked = 0;
    let mut worst = 0.0f64;
    while checked < 100 {
        let det = dets[checked % 2];
        let x_bad: Vec<f64> = stream.normals(N).iter().map(|v| 2.0 * v).collect();
        let x_fix: Vec<f64> = stream.normals(N).iter().map(|v| 2.0 * v).collect();
        let omega = AnomalyMask::from_bits((0..N).map(|_| stream.coin()).collect());
        let obj = PropertyObjective::new(det, &x_bad, &omega, tol, w).unwrap();
        // Skip points within reach of a hinge kink.
        let s_fix = det.score(&x_fix).unwrap();
        let s_bad = det.score(&x_bad).unwrap();
        let m3 = s_fix.region(&omega).unwrap() - s_bad.region(&omega).unwrap();
        let m4 = s_fix.region(&omega.complement()).unwrap()
            - s_bad.region(&omega.complement()).unwrap()
            - tol.delta4;
        if m3.abs() < 1e-2 || m4.abs() < 1e-2 {
            continue;
        }
        let grad = obj.gradient(&x_fix).unwrap();
        let fd = central_difference(|y| obj.breakdown(y).unwrap().total, &x_fix, 1e-5);
        for (a, b) in grad.iter().zip(&fd) {
            worst = worst.max(rel_err(*a, *b));
        }
        checked += 1;
    }
    assert!(worst <= 1e-6, "max relative error {worst:e}");
}

#[test]
fn calibrated_thresholds_flag_about_ten_percent_of_training_features() {
    let det = gauss();
    let mut stream = Stream::for_purpose(13, Purpose::Data, 0);
    let train: Vec<Vec<f64>> = (0..400).map(|_| stream.normals(N)).collect();
    let tau = calibrate_thresholds(&det, &train, 0.9).unwrap();
    let mut flagged = vec![0usize; N];
    for x in &train {
        let m = binarize(&det.score(x).unwrap(), &tau).unwrap();
        for (f, b) in flagged.iter_mut().zip(m.bits()) {
            *f += usize::from(*b);
        }
    }
    for f in flagged {
        assert!(f as f64 / train.len() as f64 <= 0.1 + 0.01, "{f} of 400 flagged");
    }
}
