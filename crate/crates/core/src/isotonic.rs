//! Monotone calibration maps on [0, 1], fitted by pool-adjacent-violators.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedPoint {
    pub x: f64,
    pub y: f64,
    pub weight: f64,
}

impl WeightedPoint {
    pub fn new(x: f64, y: f64, weight: f64) -> Self {
        Self { x, y, weight }
    }

    pub fn unit(x: f64, y: f64) -> Self {
        Self::new(x, y, 1.0)
    }
}

/// Nondecreasing piecewise-linear map of [0, 1] onto itself.
///
/// Knots have strictly increasing `x`, nondecreasing `y`, and are anchored at
/// `(0, 0)` and `(1, 1)`, so the map is a continuous surjection of [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMap", into = "RawMap")]
pub struct MonotoneMap {
    knots: Vec<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct RawMap {
    knots: Vec<[f64; 2]>,
}

impl TryFrom<RawMap> for MonotoneMap {
    type Error = Error;
    fn try_from(raw: RawMap) -> Result<Self> {
        MonotoneMap::new(raw.knots.into_iter().map(|[x, y]| (x, y)).collect())
    }
}

impl From<MonotoneMap> for RawMap {
    fn from(m: MonotoneMap) -> Self {
        RawMap {
            knots: m.knots.into_iter().map(|(x, y)| [x, y]).collect(),
        }
    }
}

impl MonotoneMap {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(invalid("a monotone map needs at least 2 knots"));
        }
        if knots[0] != (0.0, 0.0) {
            return Err(invalid(format!(
                "first knot must be (0, 0), got {:?}",
                knots[0]
            )));
        }
        if knots[knots.len() - 1] != (1.0, 1.0) {
            return Err(invalid(format!(
                "last knot must be (1, 1), got {:?}",
                knots[knots.len() - 1]
            )));
        }
        for (i, pair) in knots.windows(2).enumerate() {
            let ((x0, y0), (x1, y1)) = (pair[0], pair[1]);
            if x1.partial_cmp(&x0) != Some(Ordering::Greater) {
                return Err(invalid(format!(
                    "knot x must be strictly increasing (knot {} -> {}: {x0} -> {x1})",
                    i,
                    i + 1
                )));
            }
            if y1.partial_cmp(&y0).is_none_or(|o| o == Ordering::Less) {
                return Err(invalid(format!(
                    "knot y must be nondecreasing (knot {} -> {}: {y0} -> {y1})",
                    i,
                    i + 1
                )));
            }
        }
        if knots
            .iter()
            .any(|&(x, y)| !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y))
        {
            return Err(invalid("knots must lie in the unit square"));
        }
        Ok(Self { knots })
    }

    pub fn identity() -> Self {
        Self {
            knots: vec![(0.0, 0.0), (1.0, 1.0)],
        }
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn eval(&self, p: f64) -> Result<f64> {
        map_eval(self, p)
    }

    pub fn invert(&self, p: f64) -> Result<f64> {
        map_invert(self, p)
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(format!("{name} must lie in [0, 1], got {v}")))
    }
}

/// Weighted isotonic least-squares fit, anchored at (0, 0) and (1, 1).
///
/// Points sharing an `x` are first pooled into their weighted mean. Fitted
/// values at `x = 0` or `x = 1` are superseded by the anchors.
pub fn pava_fit(points: &[WeightedPoint]) -> Result<MonotoneMap> {
    let (xs, fitted) = isotonic_fit(points)?;
    let mut knots = Vec::with_capacity(xs.len() + 2);
    knots.push((0.0, 0.0));
    knots.extend(
        xs.iter()
            .zip(&fitted)
            .filter(|(&x, _)| x > 0.0 && x < 1.0)
            .map(|(&x, &y)| (x, y.clamp(0.0, 1.0))),
    );
    knots.push((1.0, 1.0));
    MonotoneMap::new(knots)
}

/// Unanchored isotonic fit: distinct sorted x values and their fitted values.
pub(crate) fn isotonic_fit(points: &[WeightedPoint]) -> Result<(Vec<f64>, Vec<f64>)> {
    if points.is_empty() {
        return Err(invalid("pava_fit needs at least one point"));
    }
    for p in points {
        check_unit("x", p.x)?;
        check_unit("y", p.y)?;
        if !(p.weight.is_finite() && p.weight > 0.0) {
            return Err(invalid(format!(
                "weights must be positive and finite, got {}",
                p.weight
            )));
        }
    }

    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x));

    // pool tied x
    let mut xs: Vec<f64> = Vec::with_capacity(sorted.len());
    let mut wy: Vec<f64> = Vec::with_capacity(sorted.len());
    let mut w: Vec<f64> = Vec::with_capacity(sorted.len());
    for p in &sorted {
        if xs.last() == Some(&p.x) {
            *wy.last_mut().unwrap() += p.weight * p.y;
            *w.last_mut().unwrap() += p.weight;
        } else {
            xs.push(p.x);
            wy.push(p.weight * p.y);
            w.push(p.weight);
        }
    }

    let fitted = pava(&wy, &w);
    Ok((xs, fitted))
}

/// Pool-adjacent-violators on pre-sorted data given as (Σwy, Σw) per point.
/// Returns the fitted value for every input position.
fn pava(wy: &[f64], w: &[f64]) -> Vec<f64> {
    struct Block {
        wy: f64,
        w: f64,
        len: usize,
    }
    impl Block {
        fn mean(&self) -> f64 {
            self.wy / self.w
        }
    }

    let mut blocks: Vec<Block> = Vec::with_capacity(wy.len());
    for (&s, &v) in wy.iter().zip(w) {
        blocks.push(Block {
            wy: s,
            w: v,
            len: 1,
        });
        while blocks.len() >= 2 {
            let last = &blocks[blocks.len() - 1];
            let prev = &blocks[blocks.len() - 2];
            if prev.mean() <= last.mean() {
                break;
            }
            let last = blocks.pop().unwrap();
            let prev = blocks.last_mut().unwrap();
            prev.wy += last.wy;
            prev.w += last.w;
            prev.len += last.len;
        }
    }

    blocks
        .iter()
        .flat_map(|b| std::iter::repeat_n(b.mean(), b.len))
        .collect()
}

/// Evaluate the map by linear interpolation between bracketing knots.
pub fn map_eval(m: &MonotoneMap, p: f64) -> Result<f64> {
    check_unit("p", p)?;
    let k = &m.knots;
    let j = k.partition_point(|&(x, _)| x <= p);
    if j == k.len() {
        return Ok(k[j - 1].1);
    }
    let ((x0, y0), (x1, y1)) = (k[j - 1], k[j]);
    let t = (p - x0) / (x1 - x0);
    Ok((y0 + t * (y1 - y0)).clamp(y0, y1))
}

/// Preimage of `p` under the map; the midpoint when the preimage is an interval.
pub fn map_invert(m: &MonotoneMap, p: f64) -> Result<f64> {
    check_unit("p", p)?;
    let k = &m.knots;
    let last = k.len() - 1;

    // left edge: inf { x : m(x) >= p }
    let j = k.partition_point(|&(_, y)| y < p);
    let left = if j == 0 {
        k[0].0
    } else {
        let ((x0, y0), (x1, y1)) = (k[j - 1], k[j]);
        (x0 + (p - y0) / (y1 - y0) * (x1 - x0)).clamp(x0, x1)
    };

    // right edge: sup { x : m(x) <= p }
    let i = k.partition_point(|&(_, y)| y <= p) - 1;
    let right = if i == last {
        k[last].0
    } else {
        let ((x0, y0), (x1, y1)) = (k[i], k[i + 1]);
        (x0 + (p - y0) / (y1 - y0) * (x1 - x0)).clamp(x0, x1)
    };

    Ok(0.5 * (left + right))
}
