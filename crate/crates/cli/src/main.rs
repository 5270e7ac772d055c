//! `gazecal`: synthesize, calibrate and evaluate gaze-angle prediction dumps.
//!
//! Exit codes: 0 success, 1 runtime or data failure, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gazecal::calibration::{calibrated_median, fit_calibrator, AngularPair, PredictionSet};
use gazecal::error::Error;
use gazecal::io::{self, Dump};
use gazecal::metrics::{
    error_uncertainty_correlation, evaluate_cpe, inclusion_rate, mean_angular_error,
    CalibratedQuantiles, CiQuery, CiReport, GaussianQuantiles, Indicator, QuantileFunction,
    QuantileRow, TwoPointQuantiles,
};
use gazecal::synth::{generate_scenario, SynthConfig, TruthNoise};
use gazecal::toytrain::{
    generate_toy_data, train_hetero, train_quantile_baseline, ToyDataConfig, ToySplit, TrainConfig,
};
use gazecal::CalibratedPredictor;

#[derive(Parser)]
#[command(name = "gazecal", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic prediction dump with controlled miscalibration.
    Synth(SynthArgs),
    /// Split a dump, fit per-component calibration maps, save map and test rows.
    Calibrate(CalibrateArgs),
    /// Coverage, CPE, interval inclusion and point-estimate metrics for a dump.
    Evaluate(EvaluateArgs),
    /// Train a toy model on generated data and dump its test predictions.
    ToyTrain(ToyTrainArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseKind {
    Gaussian,
    StudentT,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ratio of predicted to true standard deviation.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = NoiseKind::Gaussian)]
    noise: NoiseKind,
    /// Degrees of freedom for student-t noise.
    #[arg(long, default_value_t = 3.0)]
    nu: f64,
    #[arg(long, default_value_t = 0.08)]
    sigma_pitch: f64,
    #[arg(long, default_value_t = 0.1)]
    sigma_yaw: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    bias_pitch: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    bias_yaw: f64,
    /// Half-width of the uniform range of latent means (radians).
    #[arg(long, default_value_t = 0.3)]
    mean_range: f64,
    /// Output dump (.csv or .jsonl).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 100)]
    n_cal: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_map: PathBuf,
    #[arg(long)]
    out_test: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum IndicatorArg {
    Joint,
    Pitch,
    Yaw,
}

impl From<IndicatorArg> for Indicator {
    fn from(a: IndicatorArg) -> Self {
        match a {
            IndicatorArg::Joint => Indicator::Joint,
            IndicatorArg::Pitch => Indicator::Pitch,
            IndicatorArg::Yaw => Indicator::Yaw,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Calibration map; point estimates become calibrated medians.
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    ci: f64,
    #[arg(long)]
    report: PathBuf,
    /// Optional coverage curve CSV (p,coverage,abs_error).
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Coverage event behind the headline `cpe` and the curve.
    #[arg(long, value_enum, default_value_t = IndicatorArg::Joint)]
    indicator: IndicatorArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ToyKind {
    Hetero,
    Quantile,
}

#[derive(Args)]
struct ToyTrainArgs {
    #[arg(long, value_enum)]
    kind: ToyKind,
    /// Training samples; the emitted test split has the same size.
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    features: usize,
    #[arg(long, default_value_t = 0.1)]
    noise_sd: f64,
    /// Noise level of the emitted test split; defaults to --noise-sd.
    #[arg(long)]
    test_noise_sd: Option<f64>,
    /// Slope of the log-variance in the first feature.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    log_var_slope: f64,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 5000)]
    iterations: usize,
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON file for the fitted weights.
    #[arg(long)]
    out_model: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::ToyTrain(a) => toy_train(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_samples: a.n,
        seed: a.seed,
        truth_noise: match a.noise {
            NoiseKind::Gaussian => TruthNoise::Gaussian,
            NoiseKind::StudentT => TruthNoise::StudentT { nu: a.nu },
        },
        sigma_true_pitch: a.sigma_pitch,
        sigma_true_yaw: a.sigma_yaw,
        variance_scale: a.alpha,
        mean_bias: AngularPair::new(a.bias_pitch, a.bias_yaw),
        mean_range: a.mean_range,
    };
    let set = generate_scenario(&cfg)?;
    write_with(&a.out, |p| io::write_predictions_file(&set, p))
}

fn write_with(path: &Path, f: impl FnOnce(&Path) -> gazecal::Result<()>) -> Result<()> {
    f(path).with_context(|| format!("writing {}", path.display()))
}

fn read_predictions(path: &Path) -> Result<PredictionSet> {
    io::read_predictions_file(path).with_context(|| format!("reading {}", path.display()))
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let set = read_predictions(&a.input)?;
    let (cal, test) = io::split_calibration(&set, a.n_cal, a.seed)?;
    let mut cp = fit_calibrator(&cal)?;
    cp.meta.created = Some(chrono::Utc::now().to_rfc3339());
    write_with(&a.out_map, |p| {
        io::write_calibrator(&cp, std::io::BufWriter::new(std::fs::File::create(p)?))
    })?;
    write_with(&a.out_test, |p| io::write_predictions_file(&test, p))
}

#[derive(Serialize)]
struct CurveRow {
    p: f64,
    coverage: f64,
    abs_error: f64,
}

#[derive(Serialize)]
struct ConfigEcho {
    input: String,
    map: Option<String>,
    ci: f64,
    indicator: Indicator,
    dump: &'static str,
}

#[derive(Serialize)]
struct Report {
    n_samples: usize,
    /// CPE under the selected indicator.
    cpe: Option<f64>,
    cpe_joint: Option<f64>,
    cpe_pitch: Option<f64>,
    cpe_yaw: Option<f64>,
    curve: Vec<CurveRow>,
    ci: CiReport,
    point_estimate: Option<&'static str>,
    mean_angular_error_deg: Option<f64>,
    error_uncertainty_correlation: Option<f64>,
    crossing_rows: usize,
    config: ConfigEcho,
    seed: Option<u64>,
}

/// Selected CPE, CPE under (joint, pitch, yaw), and the selected report.
type CpeFields = (Option<f64>, [Option<f64>; 3], Option<gazecal::CpeReport>);

fn cpe_fields(qf: &dyn QuantileFunction, selected: Indicator) -> Result<CpeFields> {
    let mut by = [None, None, None];
    let mut chosen = None;
    for (k, ind) in [Indicator::Joint, Indicator::Pitch, Indicator::Yaw]
        .into_iter()
        .enumerate()
    {
        let r = evaluate_cpe(qf, ind)?;
        by[k] = Some(r.cpe);
        if ind == selected {
            chosen = Some(r);
        }
    }
    Ok((chosen.as_ref().map(|r| r.cpe), by, chosen))
}

/// Correlation is undefined for constant series; report it as absent.
fn optional_correlation(set: &PredictionSet, points: &[AngularPair]) -> Result<Option<f64>> {
    match error_uncertainty_correlation(set, points) {
        Ok(v) => Ok(Some(v)),
        Err(Error::Degenerate(_) | Error::InsufficientData { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let indicator = Indicator::from(a.indicator);
    let query = CiQuery::symmetric(a.ci)?;
    let dump =
        io::read_dump_file(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let map = a
        .map
        .as_deref()
        .map(|p| {
            std::fs::File::open(p)
                .map_err(Error::from)
                .and_then(io::read_calibrator)
                .with_context(|| format!("reading map {}", p.display()))
        })
        .transpose()?;

    let config = |dump: &'static str| ConfigEcho {
        input: a.input.display().to_string(),
        map: a.map.as_ref().map(|p| p.display().to_string()),
        ci: a.ci,
        indicator,
        dump,
    };

    let report = match dump {
        Dump::Predictions(set) => {
            if set.is_empty() {
                bail!("{} contains no predictions", a.input.display());
            }
            evaluate_predictions(&set, map.as_ref(), indicator, query, config("predictions"))?
        }
        Dump::Quantiles(rows) => {
            if map.is_some() {
                bail!("a calibration map applies to Gaussian prediction dumps, not quantile dumps");
            }
            evaluate_quantiles(&rows, query, config("quantiles"))?
        }
    };
    let (report, curve) = report;

    write_with(&a.report, |p| {
        io::write_json(&report, std::io::BufWriter::new(std::fs::File::create(p)?))
    })?;
    if let (Some(path), Some(curve)) = (a.curve.as_deref(), curve) {
        write_with(path, |p| {
            io::write_curve_csv(&curve, std::io::BufWriter::new(std::fs::File::create(p)?))
        })?;
    } else if a.curve.is_some() {
        bail!("no coverage curve is available for a two-quantile dump");
    }
    Ok(())
}

fn curve_rows(r: &Option<gazecal::CpeReport>) -> Vec<CurveRow> {
    r.iter()
        .flat_map(|r| {
            r.curve
                .points
                .iter()
                .zip(&r.per_point_errors)
                .map(|(pt, e)| CurveRow {
                    p: pt.p,
                    coverage: pt.coverage,
                    abs_error: *e,
                })
        })
        .collect()
}

fn evaluate_predictions(
    set: &PredictionSet,
    map: Option<&CalibratedPredictor>,
    indicator: Indicator,
    query: CiQuery,
    config: ConfigEcho,
) -> Result<(Report, Option<gazecal::CpeReport>)> {
    let raw = GaussianQuantiles::new(set);
    let calibrated = map.map(|cp| CalibratedQuantiles::new(set, cp));
    let qf: &dyn QuantileFunction = match &calibrated {
        Some(c) => c,
        None => &raw,
    };
    let (cpe, [cpe_joint, cpe_pitch, cpe_yaw], chosen) = cpe_fields(qf, indicator)?;
    let ci = inclusion_rate(qf, query)?;
    let (label, points) = match map {
        Some(cp) => (
            "calibrated_median",
            set.iter()
                .map(|s| calibrated_median(cp, s))
                .collect::<gazecal::Result<Vec<_>>>()?,
        ),
        None => ("mean", set.means()),
    };
    let report = Report {
        n_samples: set.len(),
        cpe,
        cpe_joint,
        cpe_pitch,
        cpe_yaw,
        curve: curve_rows(&chosen),
        ci,
        point_estimate: Some(label),
        mean_angular_error_deg: Some(mean_angular_error(set, &points)?),
        // stored variances against uncalibrated-mean errors
        error_uncertainty_correlation: optional_correlation(set, &set.means())?,
        crossing_rows: 0,
        config,
        seed: None,
    };
    Ok((report, chosen))
}

fn evaluate_quantiles(
    rows: &[QuantileRow],
    query: CiQuery,
    config: ConfigEcho,
) -> Result<(Report, Option<gazecal::CpeReport>)> {
    if rows.is_empty() {
        bail!("quantile dump contains no rows");
    }
    let qf = TwoPointQuantiles {
        rows,
        lower_level: gazecal::toytrain::BASELINE_LOWER,
        upper_level: gazecal::toytrain::BASELINE_UPPER,
    };
    let ci = inclusion_rate(&qf, query)
        .context("a two-quantile dump only answers its stored levels (use --ci 0.95)")?;
    let report = Report {
        n_samples: rows.len(),
        cpe: None,
        cpe_joint: None,
        cpe_pitch: None,
        cpe_yaw: None,
        curve: Vec::new(),
        ci,
        point_estimate: None,
        mean_angular_error_deg: None,
        error_uncertainty_correlation: None,
        crossing_rows: io::crossing_rows(rows).len(),
        config,
        seed: None,
    };
    Ok((report, None))
}

fn toy_train(a: ToyTrainArgs) -> Result<()> {
    let data_cfg = ToyDataConfig {
        n_samples: a.n,
        n_features: a.features,
        seed: a.seed,
        noise_sd: a.noise_sd,
        log_variance_slope: a.log_var_slope,
    };
    let test_cfg = ToyDataConfig {
        noise_sd: a.test_noise_sd.unwrap_or(a.noise_sd),
        ..data_cfg.clone()
    };
    let train_cfg = TrainConfig {
        learning_rate: a.lr,
        iterations: a.iterations,
        seed: a.seed,
    };
    let train = generate_toy_data(&data_cfg, ToySplit::Train)?;
    let test = generate_toy_data(&test_cfg, ToySplit::Test)?;
    match a.kind {
        ToyKind::Hetero => {
            let model = train_hetero(&train, &train_cfg)?;
            let set = model.prediction_set(&test)?;
            write_with(&a.out, |p| io::write_predictions_file(&set, p))?;
            write_model(a.out_model.as_deref(), &model)
        }
        ToyKind::Quantile => {
            let model = train_quantile_baseline(&train, &train_cfg)?;
            if model.has_crossing() {
                eprintln!(
                    "warning: quantile heads cross on {} training rows",
                    model.crossing_rows
                );
            }
            let rows = model.quantile_rows(&test);
            write_with(&a.out, |p| io::write_quantiles_file(&rows, p))?;
            write_model(a.out_model.as_deref(), &model)
        }
    }
}

fn write_model<T: Serialize>(path: Option<&Path>, model: &T) -> Result<()> {
    match path {
        Some(path) => write_with(path, |p| {
            io::write_json(model, std::io::BufWriter::new(std::fs::File::create(p)?))
        }),
        None => Ok(()),
    }
}
