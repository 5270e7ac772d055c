//! Statistical checks of the calibrate-then-evaluate pipeline on synthetic
//! data with known miscalibration.

use gazecal::calibration::{build_recalibration_points, pit_values, Component};
use gazecal::io::split_calibration;
use gazecal::metrics::{
    coverage_curve, error_uncertainty_correlation, evaluate_cpe, grid, inclusion_rate,
    CalibratedQuantiles, CiQuery, GaussianQuantiles, Indicator, JointLevelAdjusted,
};
use gazecal::rng::Stream;
use gazecal::synth::{analytic_coverage_variance_scaled, generate_scenario, Scenario};
use gazecal::toytrain::{generate_toy_data, train_hetero, ToyDataConfig, ToySplit, TrainConfig};
use gazecal::{
    calibrated_median, fit_calibrator, AngularPair, GaussianMarginal, LabeledPrediction,
    PredictionSet,
};

fn scenario(s: Scenario, n: usize, seed: u64) -> PredictionSet {
    generate_scenario(&s.config(n, seed)).unwrap()
}

#[test]
fn recalibration_points_hug_diagonal_for_uniform_pits() {
    let set = scenario(Scenario::WellSpecified, 1000, 21);
    for c in Component::BOTH {
        let pts = build_recalibration_points(&pit_values(&set, c).unwrap()).unwrap();
        let worst = pts.iter().map(|p| (p.x - p.y).abs()).fold(0.0, f64::max);
        assert!(worst < 0.05, "{c}: max |x - y| = {worst}");
    }
}

#[test]
fn well_specified_map_is_near_identity() {
    let cp = fit_calibrator(&scenario(Scenario::WellSpecified, 1000, 3)).unwrap();
    for c in Component::BOTH {
        for i in 0..=100 {
            let p = i as f64 / 100.0;
            let d = (cp.map(c).eval(p).unwrap() - p).abs();
            assert!(d < 0.06, "{c}: |m({p}) - {p}| = {d}");
        }
    }
}

#[test]
fn overconfident_map_stretches_upper_quantiles() {
    let cp = fit_calibrator(&scenario(Scenario::Overconfident, 1000, 4)).unwrap();
    for c in Component::BOTH {
        let q = cp.map(c).invert(0.9).unwrap();
        assert!(q > 0.97, "{c}: m⁻¹(0.9) = {q}");
    }
}

#[test]
fn heavy_tails_push_map_outward() {
    for seed in 0..5 {
        let cp = fit_calibrator(&scenario(Scenario::HeavyTailed, 2000, seed)).unwrap();
        for c in Component::BOTH {
            let q = cp.map(c).invert(0.975).unwrap();
            assert!(q > 0.975, "seed {seed}, {c}: m⁻¹(0.975) = {q}");
        }
    }
}

#[test]
fn variance_scaled_coverage_matches_analytic() {
    let n = 100_000;
    for (s, alpha) in [
        (Scenario::Overconfident, 0.5),
        (Scenario::Underconfident, 2.0),
    ] {
        let set = scenario(s, n, 8);
        let qf = GaussianQuantiles::new(&set);
        for ind in [Indicator::Pitch, Indicator::Yaw] {
            let curve = coverage_curve(&qf, ind).unwrap();
            for pt in &curve.points[1..10] {
                let want = analytic_coverage_variance_scaled(alpha, pt.p).unwrap();
                let tol = 3.0 * (pt.p * (1.0 - pt.p) / n as f64).sqrt();
                assert!(
                    (pt.coverage - want).abs() < tol,
                    "α = {alpha}, {ind:?}, p = {}: {} vs {want}",
                    pt.p,
                    pt.coverage
                );
            }
        }
    }
}

#[test]
fn independent_components_square_joint_coverage() {
    let set = scenario(Scenario::WellSpecified, 100_000, 12);
    let cov =
        gazecal::metrics::empirical_coverage(&GaussianQuantiles::new(&set), 0.7, Indicator::Joint)
            .unwrap();
    assert!((cov - 0.49).abs() < 0.01, "joint coverage {cov}");

    let r = inclusion_rate(
        &GaussianQuantiles::new(&set),
        CiQuery::symmetric(0.95).unwrap(),
    )
    .unwrap();
    assert!(
        (r.inclusion_rate - 0.9025).abs() < 0.005,
        "inclusion {}",
        r.inclusion_rate
    );
}

#[test]
fn joint_adjusted_oracle_tracks_diagonal() {
    let set = scenario(Scenario::WellSpecified, 100_000, 13);
    let curve = coverage_curve(
        &JointLevelAdjusted(GaussianQuantiles::new(&set)),
        Indicator::Joint,
    )
    .unwrap();
    for pt in &curve.points {
        assert!(
            (pt.coverage - pt.p).abs() < 0.01,
            "p = {}: {}",
            pt.p,
            pt.coverage
        );
    }
}

#[test]
fn independent_uncertainty_has_no_correlation() {
    let set = scenario(Scenario::WellSpecified, 10_000, 14);
    let mut s = Stream::new(14, 1000, 0);
    let shuffled = PredictionSet::new(
        set.iter()
            .map(|x| {
                let v = 0.001 + 0.01 * s.uniform();
                LabeledPrediction::new(
                    x.id.clone(),
                    GaussianMarginal::new(x.pitch.mean(), v).unwrap(),
                    GaussianMarginal::new(x.yaw.mean(), v).unwrap(),
                    x.truth,
                )
                .unwrap()
            })
            .collect(),
    )
    .unwrap();
    let rho = error_uncertainty_correlation(&shuffled, &shuffled.means()).unwrap();
    assert!(rho.abs() < 0.03, "rho = {rho}");
}

#[test]
fn symmetric_miscalibration_keeps_median() {
    let set = scenario(Scenario::Overconfident, 3000, 15);
    let (cal, test) = split_calibration(&set, 1000, 15).unwrap();
    let cp = fit_calibrator(&cal).unwrap();
    for s in test.iter().take(200) {
        let med = calibrated_median(&cp, s).unwrap();
        // R⁻¹(0.5) departs from 0.5 only by sampling noise: at n_cal = 1000 one
        // standard error moves the median by about 0.08 predicted σ
        for c in Component::BOTH {
            let m = s.marginal(c);
            let shift = (med.get(c) - m.mean()).abs() / m.std_dev();
            assert!(shift < 0.3, "{c}: shift {shift} σ");
        }
    }
}

/// Per-component CPE improves wherever the raw predictor is visibly off.
#[test]
fn calibration_improves_per_component_cpe() {
    for s in Scenario::ALL {
        for seed in 0..10 {
            let set = scenario(s, 21_000, 100 + seed);
            let (cal, test) = split_calibration(&set, 1000, seed).unwrap();
            let cp = fit_calibrator(&cal).unwrap();
            for ind in [Indicator::Pitch, Indicator::Yaw] {
                let raw = evaluate_cpe(&GaussianQuantiles::new(&test), ind)
                    .unwrap()
                    .cpe;
                let fixed = evaluate_cpe(&CalibratedQuantiles::new(&test, &cp), ind)
                    .unwrap()
                    .cpe;
                if raw > 0.05 {
                    assert!(
                        fixed < raw,
                        "{} seed {seed} {ind:?}: {fixed} vs {raw}",
                        s.name()
                    );
                }
            }
        }
    }
}

#[test]
fn calibrated_joint_cpe_floors_near_product_curve() {
    // per-component calibration gives joint coverage ≈ p², whose CPE is
    // sqrt(Σ (p - p²)² / 10) over the grid
    let floor = (grid().iter().map(|p| (p - p * p).powi(2)).sum::<f64>() / 10.0).sqrt();
    let set = scenario(Scenario::Overconfident, 21_000, 31);
    let (cal, test) = split_calibration(&set, 1000, 31).unwrap();
    let cp = fit_calibrator(&cal).unwrap();
    let joint = evaluate_cpe(&CalibratedQuantiles::new(&test, &cp), Indicator::Joint)
        .unwrap()
        .cpe;
    assert!((joint - floor).abs() < 0.02, "joint {joint}, floor {floor}");
}

#[test]
fn trained_model_is_overconfident_under_shift() {
    let train_cfg = ToyDataConfig {
        n_samples: 2000,
        seed: 40,
        ..ToyDataConfig::default()
    };
    let model = train_hetero(
        &generate_toy_data(&train_cfg, ToySplit::Train).unwrap(),
        &TrainConfig::default(),
    )
    .unwrap();
    let shifted = ToyDataConfig {
        noise_sd: 0.25,
        ..train_cfg.clone()
    };
    let test = model
        .prediction_set(&generate_toy_data(&shifted, ToySplit::Test).unwrap())
        .unwrap();
    let raw = evaluate_cpe(&GaussianQuantiles::new(&test), Indicator::Joint)
        .unwrap()
        .cpe;
    assert!(raw > 0.1, "CPE under shift {raw}");

    let same = model
        .prediction_set(&generate_toy_data(&train_cfg, ToySplit::Test).unwrap())
        .unwrap();
    let pitch = evaluate_cpe(&GaussianQuantiles::new(&same), Indicator::Pitch)
        .unwrap()
        .cpe;
    assert!(pitch < raw);
}

#[test]
fn median_is_a_point_estimate_with_defined_error() {
    let set = scenario(Scenario::Biased, 2000, 50);
    let (cal, test) = split_calibration(&set, 500, 50).unwrap();
    let cp = fit_calibrator(&cal).unwrap();
    let medians: Vec<AngularPair> = test
        .iter()
        .map(|s| calibrated_median(&cp, s).unwrap())
        .collect();
    let raw = gazecal::metrics::mean_angular_error(&test, &test.means()).unwrap();
    let fixed = gazecal::metrics::mean_angular_error(&test, &medians).unwrap();
    // the calibrated median removes most of the 0.05 rad shift
    assert!(fixed < raw, "{fixed} vs {raw}");
}
