//! Deterministic synthetic prediction sets with known miscalibration.
//!
//! Each sample draws a latent mean uniformly from `±mean_range` per component,
//! adds noise with scale `sigma_true` (Gaussian or scaled Student-t), and
//! reports a Gaussian predictor with mean `latent + mean_bias` and variance
//! `(variance_scale · sigma_true)²`. Noise draws that would push a truth
//! outside |pitch| ≤ π/2, |yaw| ≤ π are redrawn.
//!
//! Sample `t` uses the stream `(seed, domain::SCENARIO, t)` of [`crate::rng`],
//! consuming draws in the order: pitch mean, yaw mean, pitch noise, yaw noise.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{AngularPair, LabeledPrediction, PredictionSet};
use crate::distributions::{std_normal_cdf, std_normal_quantile, GaussianMarginal};
use crate::error::{invalid, Error, Result};
use crate::rng::{domain, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthNoise {
    Gaussian,
    StudentT { nu: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub truth_noise: TruthNoise,
    pub sigma_true_pitch: f64,
    pub sigma_true_yaw: f64,
    /// Ratio α of predicted to true standard deviation.
    pub variance_scale: f64,
    pub mean_bias: AngularPair,
    /// Half-width of the uniform distribution of latent means.
    pub mean_range: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            seed: 0,
            truth_noise: TruthNoise::Gaussian,
            sigma_true_pitch: 0.08,
            sigma_true_yaw: 0.1,
            variance_scale: 1.0,
            mean_bias: AngularPair::default(),
            mean_range: 0.3,
        }
    }
}

/// Named failure modes used throughout the tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    WellSpecified,
    /// Predicted σ half the true σ.
    Overconfident,
    /// Predicted σ twice the true σ.
    Underconfident,
    /// Predicted means shifted by 0.05 rad on both components.
    Biased,
    /// Student-t truth noise with ν = 3.
    HeavyTailed,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::WellSpecified,
        Scenario::Overconfident,
        Scenario::Underconfident,
        Scenario::Biased,
        Scenario::HeavyTailed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::WellSpecified => "well-specified",
            Scenario::Overconfident => "overconfident",
            Scenario::Underconfident => "underconfident",
            Scenario::Biased => "biased",
            Scenario::HeavyTailed => "heavy-tailed",
        }
    }

    pub fn config(self, n_samples: usize, seed: u64) -> SynthConfig {
        let base = SynthConfig {
            n_samples,
            seed,
            ..SynthConfig::default()
        };
        match self {
            Scenario::WellSpecified => base,
            Scenario::Overconfident => SynthConfig {
                variance_scale: 0.5,
                ..base
            },
            Scenario::Underconfident => SynthConfig {
                variance_scale: 2.0,
                ..base
            },
            Scenario::Biased => SynthConfig {
                mean_bias: AngularPair::new(0.05, 0.05),
                ..base
            },
            Scenario::HeavyTailed => SynthConfig {
                truth_noise: TruthNoise::StudentT { nu: 3.0 },
                ..base
            },
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(invalid("n_samples must be positive"));
        }
        for (name, v) in [
            ("sigma_true_pitch", self.sigma_true_pitch),
            ("sigma_true_yaw", self.sigma_true_yaw),
            ("variance_scale", self.variance_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.mean_range.is_finite() && (0.0..FRAC_PI_2).contains(&self.mean_range)) {
            return Err(invalid(format!(
                "mean_range must lie in [0, pi/2), got {}",
                self.mean_range
            )));
        }
        if !(self.mean_bias.pitch.is_finite() && self.mean_bias.yaw.is_finite()) {
            return Err(invalid("mean_bias must be finite"));
        }
        if let TruthNoise::StudentT { nu } = self.truth_noise {
            if !(nu.is_finite() && nu > 2.0) {
                return Err(invalid(format!("student-t nu must exceed 2, got {nu}")));
            }
        }
        Ok(())
    }
}

fn draw_truth(stream: &mut Stream, noise: TruthNoise, mean: f64, sigma: f64, bound: f64) -> f64 {
    loop {
        let eps = match noise {
            TruthNoise::Gaussian => stream.normal(),
            TruthNoise::StudentT { nu } => stream.student_t(nu),
        };
        let truth = mean + sigma * eps;
        if truth.abs() <= bound {
            return truth;
        }
    }
}

fn generate_sample(cfg: &SynthConfig, t: usize) -> Result<LabeledPrediction> {
    let mut stream = Stream::new(cfg.seed, domain::SCENARIO, t as u64);
    let latent_pitch = stream.uniform_range(-cfg.mean_range, cfg.mean_range);
    let latent_yaw = stream.uniform_range(-cfg.mean_range, cfg.mean_range);
    let truth = AngularPair::new(
        draw_truth(
            &mut stream,
            cfg.truth_noise,
            latent_pitch,
            cfg.sigma_true_pitch,
            FRAC_PI_2,
        ),
        draw_truth(
            &mut stream,
            cfg.truth_noise,
            latent_yaw,
            cfg.sigma_true_yaw,
            PI,
        ),
    );
    let pitch = GaussianMarginal::new(
        latent_pitch + cfg.mean_bias.pitch,
        (cfg.variance_scale * cfg.sigma_true_pitch).powi(2),
    )?;
    let yaw = GaussianMarginal::new(
        latent_yaw + cfg.mean_bias.yaw,
        (cfg.variance_scale * cfg.sigma_true_yaw).powi(2),
    )?;
    LabeledPrediction::new(t.to_string(), pitch, yaw, truth)
}

pub fn generate_scenario(cfg: &SynthConfig) -> Result<PredictionSet> {
    cfg.validate()?;
    let samples = (0..cfg.n_samples)
        .into_par_iter()
        .map(|t| generate_sample(cfg, t))
        .collect::<Result<Vec<_>>>()?;
    PredictionSet::new(samples)
}

/// True per-component coverage Φ(α·Φ⁻¹(p)) of a Gaussian quantile whose σ is
/// scaled by α relative to the truth.
pub fn analytic_coverage_variance_scaled(alpha: f64, p: f64) -> Result<f64> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(invalid(format!(
            "alpha must be positive and finite, got {alpha}"
        )));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::OutOfDomain {
            name: "p",
            value: p,
        });
    }
    std_normal_cdf(alpha * std_normal_quantile(p)?)
}
