//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Tolerances, sample sizes and time limits are fixed here.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use gazecal::calibration::Component;
use gazecal::distributions::{std_normal_cdf, std_normal_quantile};
use gazecal::io::split_calibration;
use gazecal::isotonic::{pava_fit, WeightedPoint};
use gazecal::metrics::{
    coverage_curve, error_uncertainty_correlation, evaluate_cpe, inclusion_rate,
    CalibratedQuantiles, CiQuery, GaussianQuantiles, Indicator, JointLevelAdjusted,
};
use gazecal::rng::Stream;
use gazecal::synth::{analytic_coverage_variance_scaled, generate_scenario, Scenario};
use gazecal::toytrain::{
    generate_toy_data, mean_nll, nll_gradient, train_hetero, ToyDataConfig, ToyDataset,
    ToyHeteroModel, ToySplit, TrainConfig,
};
use gazecal::{fit_calibrator, AngularPair, PredictionSet};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn scenario(s: Scenario, n: usize, seed: u64) -> PredictionSet {
    generate_scenario(&s.config(n, seed)).expect("scenario")
}

fn cpe(set: &PredictionSet, ind: Indicator) -> f64 {
    evaluate_cpe(&GaussianQuantiles::new(set), ind).unwrap().cpe
}

fn calibrated_cpe(test: &PredictionSet, cal: &PredictionSet, ind: Indicator) -> f64 {
    let cp = fit_calibrator(cal).unwrap();
    evaluate_cpe(&CalibratedQuantiles::new(test, &cp), ind)
        .unwrap()
        .cpe
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn c1_proper_minimum() -> Outcome {
    let set = scenario(Scenario::WellSpecified, 100_000, 1);
    let v = evaluate_cpe(
        &JointLevelAdjusted(GaussianQuantiles::new(&set)),
        Indicator::Joint,
    )
    .unwrap()
    .cpe;
    outcome(v < 0.01, format!("joint-oracle CPE = {v:.5} (< 0.01)"))
}

fn c2_overconfidence() -> Outcome {
    let t = 100_000;
    let set = scenario(Scenario::Overconfident, t, 2);
    let qf = GaussianQuantiles::new(&set);
    let mut worst_ratio: f64 = 0.0;
    for ind in [Indicator::Pitch, Indicator::Yaw] {
        for pt in coverage_curve(&qf, ind).unwrap().points {
            let want = if pt.p == 0.0 || pt.p == 1.0 {
                pt.p
            } else {
                analytic_coverage_variance_scaled(0.5, pt.p).unwrap()
            };
            let tol = 3.0 * (pt.p * (1.0 - pt.p) / t as f64).sqrt();
            let dev = (pt.coverage - want).abs();
            let ratio = if tol > 0.0 {
                dev / tol
            } else if dev == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            worst_ratio = worst_ratio.max(ratio);
        }
    }
    let joint = cpe(&set, Indicator::Joint);
    outcome(
        worst_ratio <= 1.0 && joint > 0.15,
        format!(
            "max |coverage - Φ(0.5 z_p)| = {worst_ratio:.2} × 3σ bound (≤ 1); uncalibrated CPE = {joint:.4} (> 0.15)"
        ),
    )
}

/// Calibrated joint CPE, as the criterion states, plus per-component values
/// printed for context.
fn c3_calibration_efficacy() -> Outcome {
    let mut pass = true;
    let mut lines = Vec::new();
    for s in [
        Scenario::Overconfident,
        Scenario::Underconfident,
        Scenario::Biased,
        Scenario::HeavyTailed,
    ] {
        let mut worst_cal: f64 = 0.0;
        let mut not_improved = 0;
        let mut worst_component: f64 = 0.0;
        for seed in 0..10 {
            let set = scenario(s, 21_000, 1000 + seed);
            let (cal, test) = split_calibration(&set, 1000, seed).unwrap();
            let raw = cpe(&test, Indicator::Joint);
            let fixed = calibrated_cpe(&test, &cal, Indicator::Joint);
            worst_cal = worst_cal.max(fixed);
            if fixed >= raw {
                not_improved += 1;
            }
            for ind in [Indicator::Pitch, Indicator::Yaw] {
                worst_component = worst_component.max(calibrated_cpe(&test, &cal, ind));
            }
        }
        let ok = worst_cal < 0.05 && not_improved == 0;
        pass &= ok;
        lines.push(format!(
            "{}: max calibrated CPE {worst_cal:.4}, not improved {not_improved}/10 [per-component max {worst_component:.4}]",
            s.name()
        ));
    }
    outcome(pass, lines.join("; "))
}

fn c4_small_calibration() -> Outcome {
    let mut improved = 0;
    let mut joint = Vec::new();
    let mut component = Vec::new();
    for seed in 0..10 {
        let set = scenario(Scenario::Overconfident, 20_100, 2000 + seed);
        let (cal, test) = split_calibration(&set, 100, seed).unwrap();
        let raw = cpe(&test, Indicator::Joint);
        let fixed = calibrated_cpe(&test, &cal, Indicator::Joint);
        if fixed < raw {
            improved += 1;
        }
        joint.push(fixed);
        component.push(
            calibrated_cpe(&test, &cal, Indicator::Pitch).max(calibrated_cpe(
                &test,
                &cal,
                Indicator::Yaw,
            )),
        );
    }
    let med = median(joint);
    outcome(
        improved >= 9 && med < 0.10,
        format!(
            "improved {improved}/10 (≥ 9); median calibrated CPE {med:.4} (< 0.10) [per-component median {:.4}]",
            median(component)
        ),
    )
}

fn c5_interval_inclusion() -> Outcome {
    let q = CiQuery::symmetric(0.95).unwrap();
    let set = scenario(Scenario::WellSpecified, 21_000, 5);
    let (cal, test) = split_calibration(&set, 1000, 5).unwrap();
    let cp = fit_calibrator(&cal).unwrap();
    let r = inclusion_rate(&CalibratedQuantiles::new(&test, &cp), q).unwrap();
    let over = scenario(Scenario::Overconfident, 20_000, 5);
    let raw = inclusion_rate(&GaussianQuantiles::new(&over), q).unwrap();
    let pass = (0.88..=0.92).contains(&r.inclusion_rate)
        && (0.93..=0.97).contains(&r.inclusion_rate_pitch)
        && (0.93..=0.97).contains(&r.inclusion_rate_yaw)
        && raw.inclusion_rate < 0.75;
    outcome(
        pass,
        format!(
            "calibrated joint {:.4} in [0.88, 0.92]; pitch {:.4}, yaw {:.4} in [0.93, 0.97]; uncalibrated α=0.5 joint {:.4} (< 0.75)",
            r.inclusion_rate, r.inclusion_rate_pitch, r.inclusion_rate_yaw, raw.inclusion_rate
        ),
    )
}

/// Exhaustive monotone least squares over consecutive-block partitions of
/// points already sorted by strictly increasing x.
fn brute_force_objective(pts: &[WeightedPoint]) -> f64 {
    let n = pts.len();
    let mut best = f64::INFINITY;
    for cuts in 0u32..(1 << (n - 1)) {
        let mut blocks = Vec::new();
        let mut start = 0;
        for i in 0..n {
            if i == n - 1 || cuts & (1 << i) != 0 {
                blocks.push(start..i + 1);
                start = i + 1;
            }
        }
        let means: Vec<f64> = blocks
            .iter()
            .map(|b| {
                let w: f64 = pts[b.clone()].iter().map(|p| p.weight).sum();
                pts[b.clone()].iter().map(|p| p.weight * p.y).sum::<f64>() / w
            })
            .collect();
        if means.windows(2).any(|m| m[0] > m[1]) {
            continue;
        }
        let obj: f64 = blocks
            .iter()
            .zip(&means)
            .flat_map(|(b, m)| {
                pts[b.clone()]
                    .iter()
                    .map(move |p| p.weight * (p.y - m).powi(2))
            })
            .sum();
        best = best.min(obj);
    }
    best
}

fn c6_isotonic_oracle() -> Outcome {
    let mut s = Stream::new(6, 600, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = 1 + s.below(8) as usize;
        // distinct x on the 0.05 grid strictly inside (0, 1)
        let mut xs: Vec<u64> = (1..20).collect();
        for i in 0..n {
            let j = i + s.below((xs.len() - i) as u64) as usize;
            xs.swap(i, j);
        }
        let mut xs: Vec<f64> = xs[..n].iter().map(|&k| k as f64 * 0.05).collect();
        xs.sort_by(f64::total_cmp);
        let pts: Vec<WeightedPoint> = xs
            .iter()
            .map(|&x| WeightedPoint::new(x, s.below(21) as f64 * 0.05, 1.0 + s.below(4) as f64))
            .collect();
        let map = pava_fit(&pts).unwrap();
        let obj: f64 = pts
            .iter()
            .map(|p| p.weight * (p.y - map.eval(p.x).unwrap()).powi(2))
            .sum();
        worst = worst.max((obj - brute_force_objective(&pts)).abs());
    }
    outcome(
        worst <= 1e-9,
        format!("max objective gap {worst:.2e} over 200 instances (≤ 1e-9)"),
    )
}

fn c7_gradient_check() -> Outcome {
    let mut s = Stream::new(7, 700, 0);
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    for _ in 0..100 {
        let d = 1 + s.below(5) as usize;
        let n = 1 + s.below(64) as usize;
        let mut model = ToyHeteroModel::zeros(d);
        for w in model.params_mut() {
            *w = s.uniform_range(-1.0, 1.0);
        }
        let data = ToyDataset::new(
            (0..n)
                .map(|_| (0..d).map(|_| s.uniform_range(-1.5, 1.5)).collect())
                .collect(),
            (0..n)
                .map(|_| AngularPair::new(s.uniform_range(-1.5, 1.5), s.uniform_range(-2.0, 2.0)))
                .collect(),
        )
        .unwrap();
        let analytic = nll_gradient(&model, &data).unwrap().params();
        for (k, a) in analytic.iter().enumerate() {
            let mut plus = model.clone();
            *plus.params_mut()[k] += h;
            let mut minus = model.clone();
            *minus.params_mut()[k] -= h;
            let fd =
                (mean_nll(&plus, &data).unwrap() - mean_nll(&minus, &data).unwrap()) / (2.0 * h);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    outcome(
        worst < 1e-4,
        format!("max relative error {worst:.2e} over 100 configurations (< 1e-4)"),
    )
}

fn c8_numerical_kernels() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 0..=12_000 {
        let z = -6.0 + i as f64 * 1e-3;
        let back = std_normal_quantile(std_normal_cdf(z).unwrap()).unwrap();
        worst = worst.max((back - z).abs());
    }
    let z975 = std_normal_quantile(0.975).unwrap();
    outcome(
        worst < 1e-6 && (z975 - 1.959964).abs() <= 1e-5,
        format!("max round-trip error {worst:.2e} on [-6, 6] (< 1e-6); z_0.975 = {z975:.7}"),
    )
}

fn run_pipeline(dir: &Path, threads: usize) -> Vec<u8> {
    let bin = env!("CARGO_BIN_EXE_gazecal");
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let steps: [Vec<String>; 3] = [
        [
            "synth", "--n", "5000", "--seed", "11", "--alpha", "0.5", "--out",
        ]
        .iter()
        .map(|s| s.to_string())
        .chain([p("d.csv")])
        .collect(),
        vec![
            "calibrate".into(),
            "--in".into(),
            p("d.csv"),
            "--n-cal".into(),
            "500".into(),
            "--seed".into(),
            "11".into(),
            "--out-map".into(),
            p("m.json"),
            "--out-test".into(),
            p("t.csv"),
        ],
        vec![
            "evaluate".into(),
            "--in".into(),
            p("t.csv"),
            "--map".into(),
            p("m.json"),
            "--report".into(),
            p("r.json"),
        ],
    ];
    for args in steps {
        let status = Command::new(bin)
            .args(&args)
            .env("RAYON_NUM_THREADS", threads.to_string())
            .status()
            .expect("spawn gazecal");
        assert!(status.success(), "{args:?}");
    }
    std::fs::read(dir.join("r.json")).unwrap()
}

fn c9_determinism() -> Outcome {
    // one directory for every run: the report echoes its input paths
    let dir = tempfile::TempDir::new().unwrap();
    let runs: Vec<Vec<u8>> = [1usize, 1, 4, 8]
        .iter()
        .map(|&t| run_pipeline(dir.path(), t))
        .collect();
    let same_runs = runs[0] == runs[1];
    let same_workers = runs.iter().all(|r| *r == runs[0]);

    let cfg = Scenario::HeavyTailed.config(20_000, 9);
    let lib = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let set = generate_scenario(&cfg).unwrap();
                evaluate_cpe(&GaussianQuantiles::new(&set), Indicator::Joint)
                    .unwrap()
                    .cpe
                    .to_bits()
            })
    };
    let same_lib = lib(1) == lib(6);
    outcome(
        same_runs && same_workers && same_lib,
        format!(
            "report bytes equal across runs: {same_runs}; across 1/4/8 workers: {same_workers}; library CPE bits across pools: {same_lib}"
        ),
    )
}

fn c10_correlation_invariance() -> Outcome {
    let data_cfg = ToyDataConfig {
        n_samples: 3000,
        seed: 10,
        log_variance_slope: 1.0,
        ..ToyDataConfig::default()
    };
    let model = train_hetero(
        &generate_toy_data(&data_cfg, ToySplit::Train).unwrap(),
        &TrainConfig {
            iterations: 1000,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let set = model
        .prediction_set(&generate_toy_data(&data_cfg, ToySplit::Test).unwrap())
        .unwrap();
    let (cal, test) = split_calibration(&set, 500, 10).unwrap();
    let before = error_uncertainty_correlation(&test, &test.means()).unwrap();
    let cp = fit_calibrator(&cal).unwrap();
    // exercise the map on every sample before recomputing
    let _ = evaluate_cpe(&CalibratedQuantiles::new(&test, &cp), Indicator::Joint).unwrap();
    for s in test.iter() {
        for c in Component::BOTH {
            let _ = gazecal::calibrated_quantile(&cp, s, c, 0.5).unwrap();
        }
    }
    let after = error_uncertainty_correlation(&test, &test.means()).unwrap();
    outcome(
        before.to_bits() == after.to_bits(),
        format!("correlation {before:.6} before, {after:.6} after (bit-identical)"),
    )
}

type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (
            1,
            "proper-score minimum",
            Duration::from_secs(10),
            c1_proper_minimum,
        ),
        (
            2,
            "overconfidence detection",
            Duration::from_secs(10),
            c2_overconfidence,
        ),
        (
            3,
            "calibration efficacy",
            Duration::from_secs(120),
            c3_calibration_efficacy,
        ),
        (
            4,
            "small-calibration regime",
            Duration::from_secs(60),
            c4_small_calibration,
        ),
        (
            5,
            "interval inclusion",
            Duration::from_secs(60),
            c5_interval_inclusion,
        ),
        (
            6,
            "isotonic oracle equivalence",
            Duration::from_secs(60),
            c6_isotonic_oracle,
        ),
        (
            7,
            "gradient check",
            Duration::from_secs(60),
            c7_gradient_check,
        ),
        (
            8,
            "numerical kernels",
            Duration::from_secs(60),
            c8_numerical_kernels,
        ),
        (9, "determinism", Duration::from_secs(120), c9_determinism),
        (
            10,
            "correlation invariance",
            Duration::from_secs(60),
            c10_correlation_invariance,
        ),
    ];
    let mut failed = Vec::new();
    for (id, name, limit, run) in criteria {
        let start = Instant::now();
        let o = run();
        let took = start.elapsed();
        let pass = o.pass && took <= limit;
        println!(
            "{} {id:>2} {name}: {} [{:.2}s, limit {}s]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
        if !pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 10 criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
