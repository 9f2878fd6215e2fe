//! Evaluation metrics: ROC sweep, distance-without-localization probability
//! and per-stage timing, plus their delimited-text tables.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};

pub const OPERATING_FPR: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    None,
    TruePositive,
    FalsePositive,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::None => "none",
            Outcome::TruePositive => "tp",
            Outcome::FalsePositive => "fp",
        })
    }
}

impl FromStr for Outcome {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Outcome::None),
            "tp" => Ok(Outcome::TruePositive),
            "fp" => Ok(Outcome::FalsePositive),
            other => Err(Error::param(format!("unknown outcome `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub segmentation_ms: f64,
    pub description_ms: f64,
    pub matching_ms: f64,
    pub verification_ms: f64,
}

impl StageTimings {
    pub fn as_array(&self) -> [f64; 4] {
        [
            self.segmentation_ms,
            self.description_ms,
            self.matching_ms,
            self.verification_ms,
        ]
    }

    pub fn total(&self) -> f64 {
        self.as_array().iter().sum()
    }
}

/// Per-scan evaluation record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub scan_index: usize,
    /// Cumulative travel at this scan (m).
    pub travelled_m: f64,
    /// Travel since the last true detection, or since the start (m).
    pub distance_since_detection_m: f64,
    pub outcome: Outcome,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Samples with `score >= threshold` are predicted positive.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    /// Index of the point whose FPR is closest to 0.2.
    pub operating_point: usize,
}

/// Sweeps every distinct score as a threshold, from `(0, 0)` to `(1, 1)`.
pub fn roc_curve(scores: &[(f64, bool)]) -> Result<RocCurve> {
    let positives = scores.iter().filter(|(_, l)| *l).count();
    let negatives = scores.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }
    if scores.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::param("NaN score"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (p, n) = (positives as f64, negatives as f64);
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n,
            tpr: tp as f64 / p,
            threshold: t,
        });
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();
    let operating_point = points
        .iter()
        .enumerate()
        .min_by(|a, b| {
            (a.1.fpr - OPERATING_FPR)
                .abs()
                .total_cmp(&(b.1.fpr - OPERATING_FPR).abs())
        })
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(RocCurve {
        points,
        auc,
        operating_point,
    })
}

/// Fraction of total travel spent in no-detection stretches of length at
/// least `x`, evaluated at each `x`.
pub fn localization_probability(stretches: &[f64], total: f64, xs: &[f64]) -> Result<Vec<(f64, f64)>> {
    if !(total > 0.0) {
        return Err(Error::param("total distance must be positive"));
    }
    if stretches.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::param("stretch lengths must be non-negative"));
    }
    Ok(xs
        .iter()
        .map(|&x| {
            let covered: f64 = stretches.iter().filter(|&&s| s > 0.0 && s >= x).sum();
            (x, (covered / total).min(1.0))
        })
        .collect())
}

/// Maximal runs of meters without a detection, from one flag per meter.
/// Returns the run lengths and the total distance.
pub fn stretches_from_flags(flags: &[bool]) -> (Vec<f64>, f64) {
    let mut out = Vec::new();
    let mut run = 0usize;
    for &detected in flags {
        if detected {
            if run > 0 {
                out.push(run as f64);
            }
            run = 0;
        } else {
            run += 1;
        }
    }
    if run > 0 {
        out.push(run as f64);
    }
    (out, flags.len() as f64)
}

/// No-detection stretches along a run: the travel between consecutive true
/// detections, from the start and up to the last record.
pub fn stretches_from_records(records: &[EvalRecord]) -> (Vec<f64>, f64) {
    let mut out = Vec::new();
    let mut last = 0.0;
    let mut total: f64 = 0.0;
    for r in records {
        total = total.max(r.travelled_m);
        if r.outcome == Outcome::TruePositive {
            if r.travelled_m > last {
                out.push(r.travelled_m - last);
            }
            last = r.travelled_m;
        }
    }
    if total > last {
        out.push(total - last);
    }
    (out, total)
}

/// Evenly spaced `x` samples `0, step, …` up to and including `max`.
pub fn distance_grid(max: f64, step: f64) -> Vec<f64> {
    let n = (max / step).floor() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub stage: &'static str,
    pub mean_ms: f64,
    pub std_ms: f64,
}

pub const STAGES: [&str; 4] = [
    "segmentation",
    "description",
    "matching",
    "geometric_verification",
];

/// Mean and sample standard deviation per stage, then the total.
pub fn timing_report(records: &[EvalRecord]) -> Result<Vec<TimingRow>> {
    if records.len() < 2 {
        return Err(Error::param("timing report needs at least two records"));
    }
    let stats = |values: Vec<f64>| {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    };
    let mut rows: Vec<TimingRow> = STAGES
        .iter()
        .enumerate()
        .map(|(k, stage)| {
            let (mean_ms, std_ms) = stats(records.iter().map(|r| r.timings.as_array()[k]).collect());
            TimingRow { stage, mean_ms, std_ms }
        })
        .collect();
    let (mean_ms, std_ms) = stats(records.iter().map(|r| r.timings.total()).collect());
    rows.push(TimingRow {
        stage: "total",
        mean_ms,
        std_ms,
    });
    Ok(rows)
}

pub fn roc_csv(curve: &RocCurve) -> String {
    let mut s = String::from("fpr,tpr,threshold,operating_point\n");
    for (i, p) in curve.points.iter().enumerate() {
        let op = u8::from(i == curve.operating_point);
        writeln!(s, "{},{},{},{}", p.fpr, p.tpr, p.threshold, op).unwrap();
    }
    s
}

pub fn probability_csv(samples: &[(f64, f64)]) -> String {
    let mut s = String::from("x,p\n");
    for (x, p) in samples {
        writeln!(s, "{x},{p}").unwrap();
    }
    s
}

pub fn timing_csv(rows: &[TimingRow]) -> String {
    let mut s = String::from("stage,mean_ms,std_ms\n");
    for r in rows {
        writeln!(s, "{},{},{}", r.stage, r.mean_ms, r.std_ms).unwrap();
    }
    s
}

pub const RECORDS_HEADER: &str = "scan_index,travelled_m,distance_since_detection_m,outcome,segmentation_ms,description_ms,matching_ms,verification_ms";

pub fn records_csv(records: &[EvalRecord]) -> String {
    let mut s = format!("{RECORDS_HEADER}\n");
    for r in records {
        let t = &r.timings;
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.scan_index,
            r.travelled_m,
            r.distance_since_detection_m,
            r.outcome,
            t.segmentation_ms,
            t.description_ms,
            t.matching_ms,
            t.verification_ms
        )
        .unwrap();
    }
    s
}

fn csv_rows<'a>(text: &'a str, header: &str, origin: &str) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        _ => {
            return Err(Error::Parse {
                path: origin.into(),
                line: 1,
                reason: format!("expected header `{header}`"),
            })
        }
    }
    let width = header.split(',').count();
    lines
        .map(|(n, l)| {
            let fields: Vec<&str> = l.split(',').map(str::trim).collect();
            if fields.len() != width {
                return Err(Error::Parse {
                    path: origin.into(),
                    line: n + 1,
                    reason: format!("expected {width} fields, found {}", fields.len()),
                });
            }
            Ok((n + 1, fields))
        })
        .collect()
}

fn field<T: FromStr>(value: &str, origin: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| Error::Parse {
        path: origin.into(),
        line,
        reason: format!("invalid value `{value}`"),
    })
}

pub fn parse_records_csv(text: &str, origin: &str) -> Result<Vec<EvalRecord>> {
    csv_rows(text, RECORDS_HEADER, origin)?
        .into_iter()
        .map(|(line, f)| {
            let num = |i: usize| field::<f64>(f[i], origin, line);
            Ok(EvalRecord {
                scan_index: field(f[0], origin, line)?,
                travelled_m: num(1)?,
                distance_since_detection_m: num(2)?,
                outcome: field(f[3], origin, line)?,
                timings: StageTimings {
                    segmentation_ms: num(4)?,
                    description_ms: num(5)?,
                    matching_ms: num(6)?,
                    verification_ms: num(7)?,
                },
            })
        })
        .collect()
}

pub const SCORES_HEADER: &str = "score,label";

pub fn scores_csv(scores: &[(f64, bool)]) -> String {
    let mut s = format!("{SCORES_HEADER}\n");
    for (w, l) in scores {
        writeln!(s, "{w},{}", u8::from(*l)).unwrap();
    }
    s
}

pub fn parse_scores_csv(text: &str, origin: &str) -> Result<Vec<(f64, bool)>> {
    csv_rows(text, SCORES_HEADER, origin)?
        .into_iter()
        .map(|(line, f)| {
            let label = match f[1] {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::Parse {
                        path: origin.into(),
                        line,
                        reason: format!("label must be 0 or 1, got `{other}`"),
                    })
                }
            };
            Ok((field(f[0], origin, line)?, label))
        })
        .collect()
}
