//! Desk-scale trainers on linear features.
//!
//! [`train_hetero`] fits a two-head (mean, log-variance) linear model per gaze
//! component by full-batch gradient descent on the heteroskedastic Gaussian
//! NLL with a smooth-L1 residual term:
//!
//! ```text
//! NLL = ½·s + l(μ − θ) / (2·eˢ),   l(r) = ½r² if |r| < 1 else |r| − ½
//! ```
//!
//! where `s` is the predicted log-variance. [`train_quantile_baseline`] fits
//! lower/upper quantile heads with the pinball loss.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{AngularPair, Component, LabeledPrediction, PredictionSet};
use crate::distributions::GaussianMarginal;
use crate::error::{invalid, Error, Result};
use crate::metrics::QuantileRow;
use crate::rng::{domain, Stream};

pub fn smooth_l1(residual: f64) -> f64 {
    let a = residual.abs();
    if a < 1.0 {
        0.5 * residual * residual
    } else {
        a - 0.5
    }
}

pub fn smooth_l1_derivative(residual: f64) -> f64 {
    if residual.abs() < 1.0 {
        residual
    } else {
        residual.signum()
    }
}

pub fn nll_loss(mean: f64, log_variance: f64, truth: f64) -> f64 {
    0.5 * log_variance + smooth_l1(mean - truth) / (2.0 * log_variance.exp())
}

/// Pinball loss of a τ-quantile prediction.
pub fn pinball_loss(pred: f64, truth: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(pinball(pred, truth, tau))
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfDomain {
            name: "tau",
            value: tau,
        })
    }
}

fn pinball(pred: f64, truth: f64, tau: f64) -> f64 {
    if truth >= pred {
        (truth - pred) * tau
    } else {
        (pred - truth) * (1.0 - tau)
    }
}

fn pinball_derivative(pred: f64, truth: f64, tau: f64) -> f64 {
    if truth >= pred {
        -tau
    } else {
        1.0 - tau
    }
}

/// Features plus (pitch, yaw) targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub features: Vec<Vec<f64>>,
    pub truths: Vec<AngularPair>,
}

impl ToyDataset {
    pub fn new(features: Vec<Vec<f64>>, truths: Vec<AngularPair>) -> Result<Self> {
        if features.len() != truths.len() {
            return Err(invalid(format!(
                "{} feature rows for {} targets",
                features.len(),
                truths.len()
            )));
        }
        let d = features.first().map_or(0, Vec::len);
        if features.iter().any(|f| f.len() != d) {
            return Err(invalid("feature rows have inconsistent lengths"));
        }
        if features.iter().flatten().any(|v| !v.is_finite())
            || truths
                .iter()
                .any(|t| !(t.pitch.is_finite() && t.yaw.is_finite()))
        {
            return Err(invalid("features and targets must be finite"));
        }
        Ok(Self { features, truths })
    }

    pub fn len(&self) -> usize {
        self.truths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truths.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    fn check_trainable(&self) -> Result<()> {
        let needed = self.n_features() + 2;
        if self.len() < needed {
            return Err(Error::InsufficientData {
                needed,
                got: self.len(),
            });
        }
        Ok(())
    }
}

/// Inner product of `w` with `[1, x...]`.
fn affine(w: &[f64], x: &[f64]) -> f64 {
    w[0] + w[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
}

/// Adds `scale · [1, x...]` into `acc`.
fn accumulate(acc: &mut [f64], x: &[f64], scale: f64) {
    acc[0] += scale;
    for (a, v) in acc[1..].iter_mut().zip(x) {
        *a += scale * v;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroHeads {
    /// Mean weights, intercept first.
    pub mean: Vec<f64>,
    /// Log-variance weights, intercept first.
    pub log_variance: Vec<f64>,
}

impl HeteroHeads {
    fn zeros(d: usize) -> Self {
        Self {
            mean: vec![0.0; d + 1],
            log_variance: vec![0.0; d + 1],
        }
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.mean.iter_mut().chain(self.log_variance.iter_mut())
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.mean.iter().chain(self.log_variance.iter())
    }
}

/// Linear heteroskedastic regressor: per component, a mean head and a
/// log-variance head over `[1, x]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyHeteroModel {
    pub n_features: usize,
    pub pitch: HeteroHeads,
    pub yaw: HeteroHeads,
}

impl ToyHeteroModel {
    pub fn zeros(n_features: usize) -> Self {
        Self {
            n_features,
            pitch: HeteroHeads::zeros(n_features),
            yaw: HeteroHeads::zeros(n_features),
        }
    }

    pub fn heads(&self, c: Component) -> &HeteroHeads {
        match c {
            Component::Pitch => &self.pitch,
            Component::Yaw => &self.yaw,
        }
    }

    pub fn heads_mut(&mut self, c: Component) -> &mut HeteroHeads {
        match c {
            Component::Pitch => &mut self.pitch,
            Component::Yaw => &mut self.yaw,
        }
    }

    /// Flat view of all weights: pitch mean, pitch log-variance, yaw mean,
    /// yaw log-variance.
    pub fn params(&self) -> Vec<f64> {
        self.pitch
            .params()
            .chain(self.yaw.params())
            .copied()
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut f64> {
        self.pitch
            .params_mut()
            .chain(self.yaw.params_mut())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }

    /// (mean, log-variance) for one component.
    pub fn predict_raw(&self, x: &[f64], c: Component) -> (f64, f64) {
        let h = self.heads(c);
        (affine(&h.mean, x), affine(&h.log_variance, x))
    }

    pub fn predict(&self, x: &[f64]) -> Result<(GaussianMarginal, GaussianMarginal)> {
        let (mp, sp) = self.predict_raw(x, Component::Pitch);
        let (my, sy) = self.predict_raw(x, Component::Yaw);
        Ok((
            GaussianMarginal::new(mp, sp.exp())?,
            GaussianMarginal::new(my, sy.exp())?,
        ))
    }

    /// Labeled predictions for every row of `data`, ids `0..n`.
    pub fn prediction_set(&self, data: &ToyDataset) -> Result<PredictionSet> {
        let samples = data
            .features
            .iter()
            .zip(&data.truths)
            .enumerate()
            .map(|(i, (x, truth))| {
                let (pitch, yaw) = self.predict(x)?;
                LabeledPrediction::new(i.to_string(), pitch, yaw, *truth)
            })
            .collect::<Result<Vec<_>>>()?;
        PredictionSet::new(samples)
    }
}

fn check_model_shape(model: &ToyHeteroModel, data: &ToyDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if model.n_features != data.n_features() {
        return Err(invalid(format!(
            "model expects {} features, data has {}",
            model.n_features,
            data.n_features()
        )));
    }
    Ok(())
}

/// Mean over samples of the summed pitch and yaw NLL.
pub fn mean_nll(model: &ToyHeteroModel, data: &ToyDataset) -> Result<f64> {
    check_model_shape(model, data)?;
    let total: f64 = data
        .features
        .iter()
        .zip(&data.truths)
        .map(|(x, t)| {
            Component::BOTH
                .iter()
                .map(|&c| {
                    let (m, s) = model.predict_raw(x, c);
                    nll_loss(m, s, t.get(c))
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / data.len() as f64)
}

/// Exact gradient of [`mean_nll`] with respect to every weight.
pub fn nll_gradient(model: &ToyHeteroModel, data: &ToyDataset) -> Result<ToyHeteroModel> {
    check_model_shape(model, data)?;
    let n = data.len() as f64;
    let mut grad = ToyHeteroModel::zeros(model.n_features);
    for (x, t) in data.features.iter().zip(&data.truths) {
        for c in Component::BOTH {
            let (m, s) = model.predict_raw(x, c);
            let r = m - t.get(c);
            let inv2var = 0.5 * (-s).exp();
            let d_mean = smooth_l1_derivative(r) * inv2var;
            let d_logvar = 0.5 - smooth_l1(r) * inv2var;
            let g = grad.heads_mut(c);
            accumulate(&mut g.mean, x, d_mean / n);
            accumulate(&mut g.log_variance, x, d_logvar / n);
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    /// Seed for data generation; descent itself is deterministic.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            iterations: 5000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(invalid(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

fn sample_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Zero mean heads; log-variance intercept at ln(sample variance of truths).
pub fn initial_hetero_model(data: &ToyDataset) -> Result<ToyHeteroModel> {
    data.check_trainable()?;
    let mut model = ToyHeteroModel::zeros(data.n_features());
    for c in Component::BOTH {
        let first = data.truths[0].get(c);
        if data.truths.iter().all(|t| t.get(c) == first) {
            return Err(Error::Degenerate(format!("{c} targets are constant")));
        }
        let var = sample_variance(data.truths.iter().map(|t| t.get(c)));
        if var.is_nan() || var <= 0.0 {
            return Err(Error::Degenerate(format!("{c} targets are constant")));
        }
        model.heads_mut(c).log_variance[0] = var.ln();
    }
    Ok(model)
}

/// Full-batch gradient descent; returns the model and the mean NLL before each
/// step plus the final value (`iterations + 1` entries).
pub fn train_hetero_traced(
    data: &ToyDataset,
    cfg: &TrainConfig,
) -> Result<(ToyHeteroModel, Vec<f64>)> {
    cfg.validate()?;
    let mut model = initial_hetero_model(data)?;
    let mut losses = Vec::with_capacity(cfg.iterations + 1);
    losses.push(mean_nll(&model, data)?);
    for it in 0..cfg.iterations {
        let grad = nll_gradient(&model, data)?;
        for (w, g) in model.params_mut().into_iter().zip(grad.params()) {
            *w -= cfg.learning_rate * g;
        }
        let loss = mean_nll(&model, data)?;
        if !(loss.is_finite() && model.is_finite()) {
            return Err(Error::Diverged(format!(
                "non-finite loss after {} iterations",
                it + 1
            )));
        }
        losses.push(loss);
    }
    if losses[losses.len() - 1] > losses[0] {
        return Err(Error::Diverged(format!(
            "final NLL {} exceeds initial NLL {}",
            losses[losses.len() - 1],
            losses[0]
        )));
    }
    Ok((model, losses))
}

pub fn train_hetero(data: &ToyDataset, cfg: &TrainConfig) -> Result<ToyHeteroModel> {
    train_hetero_traced(data, cfg).map(|(m, _)| m)
}

/// Quantile levels of the two-point baseline.
pub const BASELINE_LOWER: f64 = 0.025;
pub const BASELINE_UPPER: f64 = 0.975;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileHeads {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantilePairModel {
    pub n_features: usize,
    pub lower_level: f64,
    pub upper_level: f64,
    pub pitch: QuantileHeads,
    pub yaw: QuantileHeads,
    /// Training rows where a lower head exceeds its upper head after fitting.
    pub crossing_rows: usize,
}

impl QuantilePairModel {
    pub fn heads(&self, c: Component) -> &QuantileHeads {
        match c {
            Component::Pitch => &self.pitch,
            Component::Yaw => &self.yaw,
        }
    }

    pub fn has_crossing(&self) -> bool {
        self.crossing_rows > 0
    }

    /// (lower, upper) for one component.
    pub fn predict(&self, x: &[f64], c: Component) -> (f64, f64) {
        let h = self.heads(c);
        (affine(&h.lower, x), affine(&h.upper, x))
    }

    fn count_crossings(&self, data: &ToyDataset) -> usize {
        data.features
            .iter()
            .filter(|x| {
                Component::BOTH.iter().any(|&c| {
                    let (lo, hi) = self.predict(x, c);
                    lo > hi
                })
            })
            .count()
    }

    pub fn quantile_rows(&self, data: &ToyDataset) -> Vec<QuantileRow> {
        data.features
            .iter()
            .zip(&data.truths)
            .enumerate()
            .map(|(i, (x, truth))| {
                let (pitch_lo, pitch_hi) = self.predict(x, Component::Pitch);
                let (yaw_lo, yaw_hi) = self.predict(x, Component::Yaw);
                QuantileRow {
                    id: i.to_string(),
                    pitch_lo,
                    pitch_hi,
                    yaw_lo,
                    yaw_hi,
                    truth: *truth,
                }
            })
            .collect()
    }
}

/// Mean over samples of the pinball losses of all four heads.
pub fn mean_pinball(model: &QuantilePairModel, data: &ToyDataset) -> f64 {
    let total: f64 = data
        .features
        .iter()
        .zip(&data.truths)
        .map(|(x, t)| {
            Component::BOTH
                .iter()
                .map(|&c| {
                    let (lo, hi) = model.predict(x, c);
                    pinball(lo, t.get(c), model.lower_level)
                        + pinball(hi, t.get(c), model.upper_level)
                })
                .sum::<f64>()
        })
        .sum();
    total / data.len() as f64
}

/// Subgradient descent on the pinball losses at 2.5% and 97.5%, zero
/// initialization. Crossing quantiles are counted, not repaired.
pub fn train_quantile_baseline(data: &ToyDataset, cfg: &TrainConfig) -> Result<QuantilePairModel> {
    cfg.validate()?;
    data.check_trainable()?;
    let d = data.n_features();
    let n = data.len() as f64;
    let zeros = || QuantileHeads {
        lower: vec![0.0; d + 1],
        upper: vec![0.0; d + 1],
    };
    let mut model = QuantilePairModel {
        n_features: d,
        lower_level: BASELINE_LOWER,
        upper_level: BASELINE_UPPER,
        pitch: zeros(),
        yaw: zeros(),
        crossing_rows: 0,
    };
    for _ in 0..cfg.iterations {
        let mut grad = [zeros(), zeros()];
        for (x, t) in data.features.iter().zip(&data.truths) {
            for (k, c) in Component::BOTH.into_iter().enumerate() {
                let (lo, hi) = model.predict(x, c);
                let y = t.get(c);
                accumulate(
                    &mut grad[k].lower,
                    x,
                    pinball_derivative(lo, y, model.lower_level) / n,
                );
                accumulate(
                    &mut grad[k].upper,
                    x,
                    pinball_derivative(hi, y, model.upper_level) / n,
                );
            }
        }
        for (heads, g) in [&mut model.pitch, &mut model.yaw].into_iter().zip(&grad) {
            for (w, gw) in heads.lower.iter_mut().zip(&g.lower) {
                *w -= cfg.learning_rate * gw;
            }
            for (w, gw) in heads.upper.iter_mut().zip(&g.upper) {
                *w -= cfg.learning_rate * gw;
            }
        }
    }
    model.crossing_rows = model.count_crossings(data);
    Ok(model)
}

/// Synthetic linear data for the toy trainers.
///
/// Features are uniform on [-1, 1]. Per component, the target is
/// `w*·[1, x] + sqrt(v(x))·ε` with `v(x) = noise_sd² · exp(log_variance_slope · x₀)`
/// and ε standard normal. `w*` is drawn from the `(seed, TOY_WEIGHTS)` stream:
/// intercepts uniform on ±0.1, slopes uniform on ±0.2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDataConfig {
    pub n_samples: usize,
    pub n_features: usize,
    pub seed: u64,
    pub noise_sd: f64,
    pub log_variance_slope: f64,
}

impl Default for ToyDataConfig {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            n_features: 3,
            seed: 0,
            noise_sd: 0.1,
            log_variance_slope: 0.0,
        }
    }
}

/// Which sample stream a toy dataset is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToySplit {
    Train,
    Test,
}

/// True mean weights `[pitch, yaw]`, intercept first.
pub fn true_mean_weights(cfg: &ToyDataConfig) -> [Vec<f64>; 2] {
    let mut s = Stream::new(cfg.seed, domain::TOY_WEIGHTS, 0);
    let mut draw = || {
        let mut w = vec![s.uniform_range(-0.1, 0.1)];
        w.extend((0..cfg.n_features).map(|_| s.uniform_range(-0.2, 0.2)));
        w
    };
    let pitch = draw();
    let yaw = draw();
    [pitch, yaw]
}

pub fn generate_toy_data(cfg: &ToyDataConfig, split: ToySplit) -> Result<ToyDataset> {
    if cfg.n_samples == 0 || cfg.n_features == 0 {
        return Err(invalid(
            "toy data needs at least one sample and one feature",
        ));
    }
    if !(cfg.noise_sd.is_finite() && cfg.noise_sd > 0.0) || !cfg.log_variance_slope.is_finite() {
        return Err(invalid(
            "noise_sd must be positive and log_variance_slope finite",
        ));
    }
    let weights = true_mean_weights(cfg);
    let tag = match split {
        ToySplit::Train => domain::TOY_TRAIN,
        ToySplit::Test => domain::TOY_TEST,
    };
    let rows: Vec<(Vec<f64>, AngularPair)> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| {
            let mut s = Stream::new(cfg.seed, tag, i as u64);
            let x: Vec<f64> = (0..cfg.n_features)
                .map(|_| s.uniform_range(-1.0, 1.0))
                .collect();
            let sd = cfg.noise_sd * (0.5 * cfg.log_variance_slope * x[0]).exp();
            let mut target = |w: &[f64], bound: f64| loop {
                let y = affine(w, &x) + sd * s.normal();
                if y.abs() <= bound {
                    return y;
                }
            };
            let pitch = target(&weights[0], std::f64::consts::FRAC_PI_2);
            let yaw = target(&weights[1], std::f64::consts::PI);
            (x, AngularPair::new(pitch, yaw))
        })
        .collect();
    let (features, truths) = rows.into_iter().unzip();
    ToyDataset::new(features, truths)
}
