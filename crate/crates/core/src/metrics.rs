//! Coverage-based evaluation of probabilistic gaze predictions.
//!
//! The pointwise coverage error at probability `p` is
//! `|p − (1/T) Σ_t I{θ_t ≤ F_t⁻¹(p)}|`, and the Coverage Probability Error
//! (CPE) is `sqrt((1/10) Σ_{i=0}^{10} err(0.1 i)²)`: eleven grid points, divisor
//! ten. Under [`Indicator::Joint`] a sample counts as covered only when both
//! pitch and yaw fall below their quantiles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{AngularPair, CalibratedPredictor, Component, PredictionSet};
use crate::error::{invalid, Error, Result};

/// Number of points on the coverage grid 0.0, 0.1, ..., 1.0.
pub const GRID_POINTS: usize = 11;

pub fn grid() -> [f64; GRID_POINTS] {
    std::array::from_fn(|i| i as f64 / 10.0)
}

/// Per-sample quantile queries bound to a labeled sample collection.
pub trait QuantileFunction: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn truth(&self, t: usize) -> AngularPair;

    /// Quantile of sample `t`, component `c`, at level `p` in (0, 1).
    fn quantile(&self, t: usize, c: Component, p: f64) -> Result<f64>;
}

/// Uncalibrated Gaussian quantiles F_t⁻¹(p).
#[derive(Debug, Clone, Copy)]
pub struct GaussianQuantiles<'a> {
    pub set: &'a PredictionSet,
}

impl<'a> GaussianQuantiles<'a> {
    pub fn new(set: &'a PredictionSet) -> Self {
        Self { set }
    }
}

impl QuantileFunction for GaussianQuantiles<'_> {
    fn len(&self) -> usize {
        self.set.len()
    }
    fn truth(&self, t: usize) -> AngularPair {
        self.set.samples()[t].truth
    }
    fn quantile(&self, t: usize, c: Component, p: f64) -> Result<f64> {
        self.set.samples()[t].marginal(c).quantile(p)
    }
}

/// Calibrated quantiles F_t⁻¹(R⁻¹(p)).
#[derive(Debug, Clone, Copy)]
pub struct CalibratedQuantiles<'a> {
    pub set: &'a PredictionSet,
    pub predictor: &'a CalibratedPredictor,
}

impl<'a> CalibratedQuantiles<'a> {
    pub fn new(set: &'a PredictionSet, predictor: &'a CalibratedPredictor) -> Self {
        Self { set, predictor }
    }
}

impl QuantileFunction for CalibratedQuantiles<'_> {
    fn len(&self) -> usize {
        self.set.len()
    }
    fn truth(&self, t: usize) -> AngularPair {
        self.set.samples()[t].truth
    }
    fn quantile(&self, t: usize, c: Component, p: f64) -> Result<f64> {
        self.predictor.quantile(&self.set.samples()[t], c, p)
    }
}

/// Queries the wrapped function at per-component level `sqrt(p)`.
///
/// With independent, per-component calibrated components the joint indicator
/// then has coverage `p`, which makes this the reference predictor for the
/// joint coverage curve.
#[derive(Debug, Clone, Copy)]
pub struct JointLevelAdjusted<Q>(pub Q);

impl<Q: QuantileFunction> QuantileFunction for JointLevelAdjusted<Q> {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn truth(&self, t: usize) -> AngularPair {
        self.0.truth(t)
    }
    fn quantile(&self, t: usize, c: Component, p: f64) -> Result<f64> {
        self.0.quantile(t, c, p.sqrt())
    }
}

/// One row of a two-quantile prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileRow {
    pub id: String,
    pub pitch_lo: f64,
    pub pitch_hi: f64,
    pub yaw_lo: f64,
    pub yaw_hi: f64,
    pub truth: AngularPair,
}

impl QuantileRow {
    pub fn is_crossing(&self) -> bool {
        self.pitch_lo > self.pitch_hi || self.yaw_lo > self.yaw_hi
    }
}

/// Stored lower/upper quantile predictions; only the two stored levels can be
/// queried.
#[derive(Debug, Clone)]
pub struct TwoPointQuantiles<'a> {
    pub rows: &'a [QuantileRow],
    pub lower_level: f64,
    pub upper_level: f64,
}

impl QuantileFunction for TwoPointQuantiles<'_> {
    fn len(&self) -> usize {
        self.rows.len()
    }
    fn truth(&self, t: usize) -> AngularPair {
        self.rows[t].truth
    }
    fn quantile(&self, t: usize, c: Component, p: f64) -> Result<f64> {
        let r = &self.rows[t];
        let lower = (p - self.lower_level).abs() < 1e-12;
        let upper = (p - self.upper_level).abs() < 1e-12;
        match (c, lower, upper) {
            (Component::Pitch, true, _) => Ok(r.pitch_lo),
            (Component::Pitch, _, true) => Ok(r.pitch_hi),
            (Component::Yaw, true, _) => Ok(r.yaw_lo),
            (Component::Yaw, _, true) => Ok(r.yaw_hi),
            _ => Err(Error::UnsupportedLevel(p)),
        }
    }
}

/// Which coverage event is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Indicator {
    /// Both components at or below their quantiles.
    #[default]
    Joint,
    Pitch,
    Yaw,
}

impl Indicator {
    fn components(self) -> &'static [Component] {
        match self {
            Indicator::Joint => &Component::BOTH,
            Indicator::Pitch => &[Component::Pitch],
            Indicator::Yaw => &[Component::Yaw],
        }
    }
}

fn ensure_non_empty<Q: QuantileFunction + ?Sized>(qf: &Q) -> Result<()> {
    if qf.is_empty() {
        Err(Error::InsufficientData { needed: 1, got: 0 })
    } else {
        Ok(())
    }
}

fn fraction(count: usize, total: usize) -> f64 {
    count as f64 / total as f64
}

/// Observed fraction of samples whose truth lies at or below the level-`p`
/// quantile. The limits at p = 0 and p = 1 are exact.
pub fn empirical_coverage<Q: QuantileFunction + ?Sized>(
    qf: &Q,
    p: f64,
    indicator: Indicator,
) -> Result<f64> {
    ensure_non_empty(qf)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("p must lie in [0, 1], got {p}")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    let comps = indicator.components();
    let covered = (0..qf.len())
        .into_par_iter()
        .map(|t| {
            let truth = qf.truth(t);
            for &c in comps {
                if truth.get(c) > qf.quantile(t, c, p)? {
                    return Ok(false);
                }
            }
            Ok(true)
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(fraction(covered.iter().filter(|&&b| b).count(), qf.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub p: f64,
    pub coverage: f64,
}

/// Coverage at the canonical 11-point grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurve {
    pub points: Vec<CurvePoint>,
}

impl CoverageCurve {
    pub fn new(coverage: [f64; GRID_POINTS]) -> Self {
        Self {
            points: grid()
                .into_iter()
                .zip(coverage)
                .map(|(p, coverage)| CurvePoint { p, coverage })
                .collect(),
        }
    }

    pub fn coverages(&self) -> Vec<f64> {
        self.points.iter().map(|pt| pt.coverage).collect()
    }
}

pub fn coverage_curve<Q: QuantileFunction + ?Sized>(
    qf: &Q,
    indicator: Indicator,
) -> Result<CoverageCurve> {
    let mut cov = [0.0; GRID_POINTS];
    for (slot, p) in cov.iter_mut().zip(grid()) {
        *slot = empirical_coverage(qf, p, indicator)?;
    }
    Ok(CoverageCurve::new(cov))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpeReport {
    pub cpe: f64,
    pub curve: CoverageCurve,
    pub per_point_errors: Vec<f64>,
}

pub fn cpe(curve: &CoverageCurve) -> Result<CpeReport> {
    if curve.points.len() != GRID_POINTS {
        return Err(invalid(format!(
            "coverage curve must have {GRID_POINTS} points, got {}",
            curve.points.len()
        )));
    }
    let errors: Vec<f64> = curve
        .points
        .iter()
        .map(|pt| (pt.p - pt.coverage).abs())
        .collect();
    let sum_sq: f64 = errors.iter().map(|e| e * e).sum();
    Ok(CpeReport {
        cpe: (sum_sq / 10.0).sqrt(),
        curve: curve.clone(),
        per_point_errors: errors,
    })
}

/// Coverage curve and CPE in one call.
pub fn evaluate_cpe<Q: QuantileFunction + ?Sized>(
    qf: &Q,
    indicator: Indicator,
) -> Result<CpeReport> {
    cpe(&coverage_curve(qf, indicator)?)
}

/// Two-sided interval request [p_l, p_u].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiQuery {
    pub p_l: f64,
    pub p_u: f64,
    pub p_ci: f64,
}

impl CiQuery {
    pub fn new(p_l: f64, p_u: f64) -> Result<Self> {
        if !(p_l > 0.0 && p_u < 1.0 && p_l < p_u) {
            return Err(invalid(format!(
                "interval levels must satisfy 0 < p_l < p_u < 1, got p_l = {p_l}, p_u = {p_u}"
            )));
        }
        Ok(Self {
            p_l,
            p_u,
            p_ci: p_u - p_l,
        })
    }

    /// Symmetric interval: p_l = (1 − ci)/2, p_u = 1 − p_l.
    pub fn symmetric(ci: f64) -> Result<Self> {
        if !(ci > 0.0 && ci < 1.0) {
            return Err(invalid(format!(
                "confidence level must lie in (0, 1), got {ci}"
            )));
        }
        let p_l = (1.0 - ci) / 2.0;
        Self::new(p_l, 1.0 - p_l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiReport {
    pub query: CiQuery,
    /// Fraction of samples with both components inside their intervals.
    pub inclusion_rate: f64,
    pub inclusion_rate_pitch: f64,
    pub inclusion_rate_yaw: f64,
    pub avg_range_pitch: f64,
    pub avg_range_yaw: f64,
    pub avg_range_combined: f64,
}

pub fn inclusion_rate<Q: QuantileFunction + ?Sized>(qf: &Q, q: CiQuery) -> Result<CiReport> {
    ensure_non_empty(qf)?;
    let q = CiQuery::new(q.p_l, q.p_u)?;
    // (inside pitch, inside yaw, range pitch, range yaw) per sample
    let rows = (0..qf.len())
        .into_par_iter()
        .map(|t| {
            let truth = qf.truth(t);
            let mut inside = [false; 2];
            let mut range = [0.0; 2];
            for (k, c) in Component::BOTH.into_iter().enumerate() {
                let lo = qf.quantile(t, c, q.p_l)?;
                let hi = qf.quantile(t, c, q.p_u)?;
                let v = truth.get(c);
                inside[k] = lo <= v && v <= hi;
                range[k] = hi - lo;
            }
            Ok((inside, range))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = rows.len();
    let count = |f: &dyn Fn(&[bool; 2]) -> bool| rows.iter().filter(|(i, _)| f(i)).count();
    let mean = |k: usize| rows.iter().map(|(_, r)| r[k]).sum::<f64>() / n as f64;
    let avg_range_pitch = mean(0);
    let avg_range_yaw = mean(1);
    Ok(CiReport {
        query: q,
        inclusion_rate: fraction(count(&|i| i[0] && i[1]), n),
        inclusion_rate_pitch: fraction(count(&|i| i[0]), n),
        inclusion_rate_yaw: fraction(count(&|i| i[1]), n),
        avg_range_pitch,
        avg_range_yaw,
        avg_range_combined: 0.5 * (avg_range_pitch + avg_range_yaw),
    })
}

fn gaze_vector(a: &AngularPair) -> [f64; 3] {
    let (sp, cp) = a.pitch.sin_cos();
    let (sy, cy) = a.yaw.sin_cos();
    [cp * sy, sp, cp * cy]
}

/// Angle in degrees between the gaze vectors of two (pitch, yaw) pairs.
pub fn angular_error(pred: &AngularPair, truth: &AngularPair) -> f64 {
    let a = gaze_vector(pred);
    let b = gaze_vector(truth);
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    dot.clamp(-1.0, 1.0).acos().to_degrees()
}

pub fn mean_angular_error(set: &PredictionSet, point_estimates: &[AngularPair]) -> Result<f64> {
    if set.len() != point_estimates.len() {
        return Err(invalid(format!(
            "{} point estimates for {} samples",
            point_estimates.len(),
            set.len()
        )));
    }
    if set.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let total: f64 = set
        .iter()
        .zip(point_estimates)
        .map(|(s, pe)| angular_error(pe, &s.truth))
        .sum();
    Ok(total / set.len() as f64)
}

/// Ranks starting at 1, ties receiving their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate(
            "correlation is undefined for a constant series".into(),
        ));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid("series lengths differ"));
    }
    if a.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: a.len(),
        });
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Spearman correlation between angular error and sqrt(var_pitch + var_yaw).
pub fn error_uncertainty_correlation(
    set: &PredictionSet,
    point_estimates: &[AngularPair],
) -> Result<f64> {
    if set.len() != point_estimates.len() {
        return Err(invalid(format!(
            "{} point estimates for {} samples",
            point_estimates.len(),
            set.len()
        )));
    }
    if set.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: set.len(),
        });
    }
    let errors: Vec<f64> = set
        .iter()
        .zip(point_estimates)
        .map(|(s, pe)| angular_error(pe, &s.truth))
        .collect();
    let uncertainty: Vec<f64> = set.iter().map(|s| s.scalar_uncertainty()).collect();
    spearman(&errors, &uncertainty)
}
