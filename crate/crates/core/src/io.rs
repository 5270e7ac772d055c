//! Prediction and quantile dumps on disk, calibrator persistence, and the
//! seeded calibration/test split.
//!
//! Two tabular layouts are understood, each as CSV (with the exact header
//! below) or JSON Lines (one object per row, same keys):
//!
//! ```text
//! id,pitch_mean,yaw_mean,pitch_var,yaw_var,pitch_true,yaw_true
//! id,pitch_lo,pitch_hi,yaw_lo,yaw_hi,pitch_true,yaw_true
//! ```
//!
//! Angles are radians, variances radians². Floats are written in their
//! shortest round-trip form, so a write/read cycle is lossless. Any invalid
//! row fails the whole read.

use std::collections::HashSet;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::calibration::{AngularPair, CalibratedPredictor, LabeledPrediction, PredictionSet};
use crate::distributions::GaussianMarginal;
use crate::error::{invalid, Error, Result};
use crate::metrics::{CpeReport, QuantileRow};
use crate::rng::{domain, Stream};

pub const PREDICTION_COLUMNS: [&str; 7] = [
    "id",
    "pitch_mean",
    "yaw_mean",
    "pitch_var",
    "yaw_var",
    "pitch_true",
    "yaw_true",
];

pub const QUANTILE_COLUMNS: [&str; 7] = [
    "id",
    "pitch_lo",
    "pitch_hi",
    "yaw_lo",
    "yaw_hi",
    "pitch_true",
    "yaw_true",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// `.jsonl` / `.ndjson` mean JSON Lines; anything else is CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("jsonl") || e.eq_ignore_ascii_case("ndjson") => {
                Format::Jsonl
            }
            _ => Format::Csv,
        }
    }
}

/// Contents of a dump whose layout was detected from its header or keys.
#[derive(Debug, Clone, PartialEq)]
pub enum Dump {
    Predictions(PredictionSet),
    Quantiles(Vec<QuantileRow>),
}

fn parse_error(line: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column: column.to_string(),
        message: message.into(),
    }
}

/// One data row: source line, id, and the six numeric fields in column order.
struct RawRow {
    line: usize,
    id: String,
    values: [f64; 6],
}

enum Layout {
    Predictions,
    Quantiles,
}

impl Layout {
    fn columns(&self) -> &'static [&'static str; 7] {
        match self {
            Layout::Predictions => &PREDICTION_COLUMNS,
            Layout::Quantiles => &QUANTILE_COLUMNS,
        }
    }

    fn detect<'a>(names: impl Iterator<Item = &'a str> + Clone, ordered: bool) -> Option<Layout> {
        let matches = |cols: &[&str; 7]| {
            if ordered {
                names.clone().eq(cols.iter().copied())
            } else {
                let got: HashSet<&str> = names.clone().collect();
                got.len() == names.clone().count() && got == cols.iter().copied().collect()
            }
        };
        if matches(&PREDICTION_COLUMNS) {
            Some(Layout::Predictions)
        } else if matches(&QUANTILE_COLUMNS) {
            Some(Layout::Quantiles)
        } else {
            None
        }
    }
}

fn parse_number(text: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| parse_error(line, column, format!("`{text}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_error(line, column, format!("`{text}` is not finite")));
    }
    Ok(v)
}

fn read_csv_table<R: Read>(reader: R) -> Result<(Option<Layout>, Vec<RawRow>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Err(parse_error(1, "header", "missing header")),
        Some(h) => h?,
    };
    let layout = Layout::detect(header.iter(), true).ok_or_else(|| {
        parse_error(
            1,
            "header",
            format!(
                "expected `{}` or `{}`, got `{}`",
                PREDICTION_COLUMNS.join(","),
                QUANTILE_COLUMNS.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        )
    })?;
    let cols = layout.columns();
    let mut rows = Vec::new();
    for record in records {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(line, "row", e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != cols.len() {
            return Err(parse_error(
                line,
                "row",
                format!("expected {} fields, got {}", cols.len(), record.len()),
            ));
        }
        let mut values = [0.0; 6];
        for (k, v) in values.iter_mut().enumerate() {
            *v = parse_number(&record[k + 1], line, cols[k + 1])?;
        }
        rows.push(RawRow {
            line,
            id: record[0].to_string(),
            values,
        });
    }
    Ok((Some(layout), rows))
}

fn read_jsonl_table<R: Read>(reader: R) -> Result<(Option<Layout>, Vec<RawRow>)> {
    let mut layout = None;
    let mut rows = Vec::new();
    for (k, text) in std::io::BufReader::new(reader).lines().enumerate() {
        let text = text?;
        let line = k + 1;
        if text.trim().is_empty() {
            continue;
        }
        let obj = match serde_json::from_str::<Value>(&text) {
            Ok(Value::Object(obj)) => obj,
            Ok(_) => return Err(parse_error(line, "row", "expected a JSON object")),
            Err(e) => return Err(parse_error(line, "row", e.to_string())),
        };
        let this = Layout::detect(obj.keys().map(String::as_str), false).ok_or_else(|| {
            parse_error(
                line,
                "row",
                format!(
                    "keys must be exactly {{{}}} or {{{}}}",
                    PREDICTION_COLUMNS.join(", "),
                    QUANTILE_COLUMNS.join(", ")
                ),
            )
        })?;
        let cols = this.columns();
        match &layout {
            None => layout = Some(this),
            Some(l) if l.columns() == cols => {}
            Some(_) => return Err(parse_error(line, "row", "rows mix dump layouts")),
        }
        let id = match &obj["id"] {
            Value::String(s) => s.clone(),
            Value::Number(n) => n.to_string(),
            _ => return Err(parse_error(line, "id", "id must be a string")),
        };
        let mut values = [0.0; 6];
        for (k, v) in values.iter_mut().enumerate() {
            let col = cols[k + 1];
            *v = obj[col]
                .as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| parse_error(line, col, "expected a finite number"))?;
        }
        rows.push(RawRow { line, id, values });
    }
    Ok((layout, rows))
}

fn read_table<R: Read>(reader: R, format: Format) -> Result<(Option<Layout>, Vec<RawRow>)> {
    let (layout, rows) = match format {
        Format::Csv => read_csv_table(reader)?,
        Format::Jsonl => read_jsonl_table(reader)?,
    };
    let mut seen = HashSet::with_capacity(rows.len());
    for r in &rows {
        if r.id.is_empty() {
            return Err(parse_error(r.line, "id", "empty id"));
        }
        if !seen.insert(r.id.as_str()) {
            return Err(parse_error(
                r.line,
                "id",
                format!("duplicate id `{}`", r.id),
            ));
        }
    }
    Ok((layout, rows))
}

fn check_truth(r: &RawRow) -> Result<AngularPair> {
    let truth = AngularPair::new(r.values[4], r.values[5]);
    if truth.pitch.abs() > std::f64::consts::FRAC_PI_2 {
        return Err(parse_error(r.line, "pitch_true", "|pitch| exceeds pi/2"));
    }
    if truth.yaw.abs() > std::f64::consts::PI {
        return Err(parse_error(r.line, "yaw_true", "|yaw| exceeds pi"));
    }
    Ok(truth)
}

fn to_prediction(r: RawRow) -> Result<LabeledPrediction> {
    let [pm, ym, pv, yv, ..] = r.values;
    for (col, v) in [("pitch_var", pv), ("yaw_var", yv)] {
        if v <= 0.0 {
            return Err(parse_error(
                r.line,
                col,
                format!("variance must be positive, got {v}"),
            ));
        }
    }
    let truth = check_truth(&r)?;
    LabeledPrediction::new(
        r.id,
        GaussianMarginal::new(pm, pv)?,
        GaussianMarginal::new(ym, yv)?,
        truth,
    )
}

fn to_quantile_row(r: RawRow) -> Result<QuantileRow> {
    let truth = check_truth(&r)?;
    let [pitch_lo, pitch_hi, yaw_lo, yaw_hi, ..] = r.values;
    Ok(QuantileRow {
        id: r.id,
        pitch_lo,
        pitch_hi,
        yaw_lo,
        yaw_hi,
        truth,
    })
}

/// Reads either dump layout, detected from the CSV header or JSON keys.
/// An empty JSON Lines file reads as an empty prediction set.
pub fn read_dump<R: Read>(reader: R, format: Format) -> Result<Dump> {
    let (layout, rows) = read_table(reader, format)?;
    match layout.unwrap_or(Layout::Predictions) {
        Layout::Predictions => {
            let samples = rows
                .into_iter()
                .map(to_prediction)
                .collect::<Result<Vec<_>>>()?;
            Ok(Dump::Predictions(PredictionSet::new(samples)?))
        }
        Layout::Quantiles => Ok(Dump::Quantiles(
            rows.into_iter()
                .map(to_quantile_row)
                .collect::<Result<Vec<_>>>()?,
        )),
    }
}

pub fn read_predictions<R: Read>(reader: R, format: Format) -> Result<PredictionSet> {
    match read_dump(reader, format)? {
        Dump::Predictions(set) => Ok(set),
        Dump::Quantiles(_) => Err(parse_error(
            1,
            "header",
            "found a quantile dump where predictions were expected",
        )),
    }
}

/// Quantile rows in file order. Rows with lo > hi are kept; see
/// [`QuantileRow::is_crossing`].
pub fn read_quantiles<R: Read>(reader: R, format: Format) -> Result<Vec<QuantileRow>> {
    match read_dump(reader, format)? {
        Dump::Quantiles(rows) => Ok(rows),
        Dump::Predictions(set) if set.is_empty() => Ok(Vec::new()),
        Dump::Predictions(_) => Err(parse_error(
            1,
            "header",
            "found a prediction dump where quantiles were expected",
        )),
    }
}

pub fn read_dump_file(path: &Path) -> Result<Dump> {
    read_dump(std::fs::File::open(path)?, Format::from_path(path))
}

pub fn read_predictions_file(path: &Path) -> Result<PredictionSet> {
    read_predictions(std::fs::File::open(path)?, Format::from_path(path))
}

/// Indices of rows whose lower quantile exceeds the upper one.
pub fn crossing_rows(rows: &[QuantileRow]) -> Vec<usize> {
    rows.iter()
        .enumerate()
        .filter(|(_, r)| r.is_crossing())
        .map(|(i, _)| i)
        .collect()
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    id: &'a str,
    pitch_mean: f64,
    yaw_mean: f64,
    pitch_var: f64,
    yaw_var: f64,
    pitch_true: f64,
    yaw_true: f64,
}

#[derive(Serialize)]
struct QuantileRecord<'a> {
    id: &'a str,
    pitch_lo: f64,
    pitch_hi: f64,
    yaw_lo: f64,
    yaw_hi: f64,
    pitch_true: f64,
    yaw_true: f64,
}

fn write_records<W: Write, T: Serialize>(
    mut sink: W,
    format: Format,
    header: &[&str],
    records: impl Iterator<Item = T>,
) -> Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(sink);
            w.write_record(header)?;
            for r in records {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Format::Jsonl => {
            for r in records {
                serde_json::to_writer(&mut sink, &r)?;
                sink.write_all(b"\n")?;
            }
            sink.flush()?;
        }
    }
    Ok(())
}

pub fn write_predictions<W: Write>(set: &PredictionSet, sink: W, format: Format) -> Result<()> {
    let records = set.iter().map(|s| PredictionRecord {
        id: &s.id,
        pitch_mean: s.pitch.mean(),
        yaw_mean: s.yaw.mean(),
        pitch_var: s.pitch.variance(),
        yaw_var: s.yaw.variance(),
        pitch_true: s.truth.pitch,
        yaw_true: s.truth.yaw,
    });
    write_records(sink, format, &PREDICTION_COLUMNS, records)
}

pub fn write_quantiles<W: Write>(rows: &[QuantileRow], sink: W, format: Format) -> Result<()> {
    let records = rows.iter().map(|r| QuantileRecord {
        id: &r.id,
        pitch_lo: r.pitch_lo,
        pitch_hi: r.pitch_hi,
        yaw_lo: r.yaw_lo,
        yaw_hi: r.yaw_hi,
        pitch_true: r.truth.pitch,
        yaw_true: r.truth.yaw,
    });
    write_records(sink, format, &QUANTILE_COLUMNS, records)
}

pub fn write_predictions_file(set: &PredictionSet, path: &Path) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_predictions(set, f, Format::from_path(path))
}

pub fn write_quantiles_file(rows: &[QuantileRow], path: &Path) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_quantiles(rows, f, Format::from_path(path))
}

pub fn write_calibrator<W: Write>(cp: &CalibratedPredictor, mut sink: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut sink, cp)?;
    sink.write_all(b"\n")?;
    Ok(())
}

/// Parses and validates a calibrator (monotone knots, anchored endpoints).
pub fn read_calibrator<R: Read>(reader: R) -> Result<CalibratedPredictor> {
    Ok(serde_json::from_reader(reader)?)
}

/// `p,coverage,abs_error`, one row per grid level.
pub fn write_curve_csv<W: Write>(report: &CpeReport, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["p", "coverage", "abs_error"])?;
    for (pt, err) in report.curve.points.iter().zip(&report.per_point_errors) {
        w.serialize((pt.p, pt.coverage, err))?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON plus trailing newline.
pub fn write_json<W: Write, T: Serialize + ?Sized>(value: &T, mut sink: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut sink, value)?;
    sink.write_all(b"\n")?;
    Ok(())
}

/// Seeded uniform sample of `n_cal` rows without replacement (partial
/// Fisher–Yates on the `(seed, SPLIT, 0)` stream). Both halves keep the
/// input order.
pub fn split_calibration(
    set: &PredictionSet,
    n_cal: usize,
    seed: u64,
) -> Result<(PredictionSet, PredictionSet)> {
    let n = set.len();
    if n_cal == 0 {
        return Err(invalid("n_cal must be positive"));
    }
    if n_cal >= n {
        return Err(invalid(format!(
            "n_cal = {n_cal} must be smaller than the set size {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut stream = Stream::new(seed, domain::SPLIT, 0);
    for i in 0..n_cal {
        let j = i + stream.below((n - i) as u64) as usize;
        idx.swap(i, j);
    }
    let mut in_cal = vec![false; n];
    for &i in &idx[..n_cal] {
        in_cal[i] = true;
    }
    let (cal, test): (Vec<_>, Vec<_>) = set.iter().cloned().zip(in_cal).partition(|(_, c)| *c);
    Ok((
        PredictionSet::new(cal.into_iter().map(|(s, _)| s).collect())?,
        PredictionSet::new(test.into_iter().map(|(s, _)| s).collect())?,
    ))
}
