//! Labeled predictions and per-component isotonic recalibration.
//!
//! The recalibration dataset for one component is built from the
//! probability-integral-transform (PIT) values `u_t = F_t(θ_t)` of a held-out
//! calibration set: sorted PIT values are paired with their empirical CDF
//! `i / (n + 1)` and fitted by [`pava_fit`]. Calibrated quantiles are then
//! `F_t⁻¹(R⁻¹(p))`.

use std::collections::HashSet;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::distributions::GaussianMarginal;
use crate::error::{invalid, Error, Result};
use crate::isotonic::{pava_fit, MonotoneMap, WeightedPoint};

/// Smallest calibration set accepted by [`fit_calibrator`].
pub const MIN_CALIBRATION_SAMPLES: usize = 10;

/// Calibrated probabilities are kept this far from 0 and 1 before the
/// Gaussian quantile is taken.
pub const PROBABILITY_CLAMP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Pitch,
    Yaw,
}

impl Component {
    pub const BOTH: [Component; 2] = [Component::Pitch, Component::Yaw];
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Component::Pitch => f.write_str("pitch"),
            Component::Yaw => f.write_str("yaw"),
        }
    }
}

/// Gaze direction as (pitch, yaw) in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AngularPair {
    pub pitch: f64,
    pub yaw: f64,
}

impl AngularPair {
    pub fn new(pitch: f64, yaw: f64) -> Self {
        Self { pitch, yaw }
    }

    /// Checks the ranges required of ground-truth labels:
    /// |pitch| ≤ π/2 and |yaw| ≤ π.
    pub fn validate(&self) -> Result<()> {
        if !(self.pitch.is_finite() && self.pitch.abs() <= FRAC_PI_2) {
            return Err(invalid(format!(
                "pitch must be finite with |pitch| <= pi/2, got {}",
                self.pitch
            )));
        }
        if !(self.yaw.is_finite() && self.yaw.abs() <= PI) {
            return Err(invalid(format!(
                "yaw must be finite with |yaw| <= pi, got {}",
                self.yaw
            )));
        }
        Ok(())
    }

    pub fn get(&self, c: Component) -> f64 {
        match c {
            Component::Pitch => self.pitch,
            Component::Yaw => self.yaw,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPrediction {
    pub id: String,
    pub pitch: GaussianMarginal,
    pub yaw: GaussianMarginal,
    pub truth: AngularPair,
}

impl LabeledPrediction {
    pub fn new(
        id: impl Into<String>,
        pitch: GaussianMarginal,
        yaw: GaussianMarginal,
        truth: AngularPair,
    ) -> Result<Self> {
        truth.validate()?;
        Ok(Self {
            id: id.into(),
            pitch,
            yaw,
            truth,
        })
    }

    pub fn marginal(&self, c: Component) -> &GaussianMarginal {
        match c {
            Component::Pitch => &self.pitch,
            Component::Yaw => &self.yaw,
        }
    }

    pub fn mean(&self) -> AngularPair {
        AngularPair::new(self.pitch.mean(), self.yaw.mean())
    }

    /// Scalar uncertainty sqrt(var_pitch + var_yaw).
    pub fn scalar_uncertainty(&self) -> f64 {
        (self.pitch.variance() + self.yaw.variance()).sqrt()
    }
}

/// Ordered collection of labeled predictions with unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    samples: Vec<LabeledPrediction>,
}

impl PredictionSet {
    pub fn new(samples: Vec<LabeledPrediction>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(invalid(format!("duplicate sample id `{}`", s.id)));
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[LabeledPrediction] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledPrediction> {
        self.samples.iter()
    }

    pub fn means(&self) -> Vec<AngularPair> {
        self.samples.iter().map(LabeledPrediction::mean).collect()
    }

    pub fn into_samples(self) -> Vec<LabeledPrediction> {
        self.samples
    }
}

impl<'a> IntoIterator for &'a PredictionSet {
    type Item = &'a LabeledPrediction;
    type IntoIter = std::slice::Iter<'a, LabeledPrediction>;
    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMeta {
    pub n_calibration: usize,
    /// RFC 3339 creation time, when known.
    pub created: Option<String>,
}

/// Independent pitch and yaw calibration maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedPredictor {
    pub pitch_map: MonotoneMap,
    pub yaw_map: MonotoneMap,
    pub meta: CalibrationMeta,
}

impl CalibratedPredictor {
    pub fn identity() -> Self {
        Self {
            pitch_map: MonotoneMap::identity(),
            yaw_map: MonotoneMap::identity(),
            meta: CalibrationMeta {
                n_calibration: 0,
                created: None,
            },
        }
    }

    pub fn map(&self, c: Component) -> &MonotoneMap {
        match c {
            Component::Pitch => &self.pitch_map,
            Component::Yaw => &self.yaw_map,
        }
    }

    pub fn quantile(&self, s: &LabeledPrediction, c: Component, p: f64) -> Result<f64> {
        calibrated_quantile(self, s, c, p)
    }

    pub fn median(&self, s: &LabeledPrediction) -> Result<AngularPair> {
        calibrated_median(self, s)
    }
}

/// PIT values F_t(θ_t) for one component, in sample order.
pub fn pit_values(set: &PredictionSet, component: Component) -> Result<Vec<f64>> {
    if set.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    set.iter()
        .map(|s| s.marginal(component).cdf(s.truth.get(component)))
        .collect()
}

/// Pair sorted PIT values with their empirical CDF i/(n+1).
pub fn build_recalibration_points(pits: &[f64]) -> Result<Vec<WeightedPoint>> {
    let n = pits.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mut sorted = pits.to_vec();
    sorted.sort_by(f64::total_cmp);
    let denom = (n + 1) as f64;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, u)| WeightedPoint::unit(u, (i + 1) as f64 / denom))
        .collect())
}

fn fit_component(set: &PredictionSet, c: Component) -> Result<MonotoneMap> {
    pava_fit(&build_recalibration_points(&pit_values(set, c)?)?)
}

pub fn fit_calibrator(calibration_set: &PredictionSet) -> Result<CalibratedPredictor> {
    let n = calibration_set.len();
    if n < MIN_CALIBRATION_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_CALIBRATION_SAMPLES,
            got: n,
        });
    }
    Ok(CalibratedPredictor {
        pitch_map: fit_component(calibration_set, Component::Pitch)?,
        yaw_map: fit_component(calibration_set, Component::Yaw)?,
        meta: CalibrationMeta {
            n_calibration: n,
            created: None,
        },
    })
}

/// F⁻¹(R⁻¹(p)) for one sample and component.
pub fn calibrated_quantile(
    cp: &CalibratedPredictor,
    s: &LabeledPrediction,
    component: Component,
    p: f64,
) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::OutOfDomain {
            name: "p",
            value: p,
        });
    }
    let adjusted = cp
        .map(component)
        .invert(p)?
        .clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
    s.marginal(component).quantile(adjusted)
}

pub fn calibrated_median(cp: &CalibratedPredictor, s: &LabeledPrediction) -> Result<AngularPair> {
    Ok(AngularPair::new(
        calibrated_quantile(cp, s, Component::Pitch, 0.5)?,
        calibrated_quantile(cp, s, Component::Yaw, 0.5)?,
    ))
}
