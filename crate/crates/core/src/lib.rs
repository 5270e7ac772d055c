//! Post-hoc calibration of Gaussian gaze-angle predictors.
//!
//! A predictor emits, per image, independent Gaussian marginals for pitch and
//! yaw. This crate measures how well those distributions cover the ground
//! truth ([`metrics`]), learns per-component isotonic recalibration maps from
//! a small held-out set ([`isotonic`], [`calibration`]), and provides
//! synthetic data ([`synth`]), toy trainers ([`toytrain`]) and file formats
//! ([`io`]) to exercise the whole pipeline.

pub mod calibration;
pub mod distributions;
pub mod error;
pub mod io;
pub mod isotonic;
pub mod metrics;
pub mod rng;
pub mod synth;
pub mod toytrain;

pub use calibration::{
    calibrated_median, calibrated_quantile, fit_calibrator, AngularPair, CalibratedPredictor,
    Component, LabeledPrediction, PredictionSet,
};
pub use distributions::GaussianMarginal;
pub use error::{Error, Result};
pub use isotonic::{pava_fit, MonotoneMap, WeightedPoint};
pub use metrics::{CiQuery, CiReport, CoverageCurve, CpeReport, Indicator, QuantileRow};
