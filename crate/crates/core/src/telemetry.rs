//! Round reports, the generalization bound term, time-to-accuracy under a
//! link model, and CSV/JSON emission.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: u64,
    pub train_loss: f64,
    /// NaN for regression tasks.
    pub test_top1: f64,
    pub test_top3: f64,
    pub up_bytes: u64,
    pub down_bytes: u64,
    /// Local training time of the round (slowest selected client).
    pub lttr_s: f64,
    /// `r * V * min_k |D^k|`
    pub m_r: u64,
    pub epsilon_bound: f64,
}

/// Column order shared by the CSV header and the JSON object keys.
pub const REPORT_FIELDS: [&str; 9] = [
    "round",
    "train_loss",
    "test_top1",
    "test_top3",
    "up_bytes",
    "down_bytes",
    "lttr_s",
    "m_r",
    "epsilon_bound",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModel {
    pub downlink_mbps: f64,
    pub uplink_mbps: f64,
    pub agg_seconds: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            downlink_mbps: 110.6,
            uplink_mbps: 14.0,
            agg_seconds: 0.0,
        }
    }
}

impl LinkModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.downlink_mbps > 0.0 && self.downlink_mbps.is_finite()) {
            return Err(Error::config("downlink_mbps", "must be positive"));
        }
        if !(self.uplink_mbps > 0.0 && self.uplink_mbps.is_finite()) {
            return Err(Error::config("uplink_mbps", "must be positive"));
        }
        if !(self.agg_seconds >= 0.0 && self.agg_seconds.is_finite()) {
            return Err(Error::config("agg_seconds", "must be non-negative"));
        }
        Ok(())
    }

    pub fn uplink_seconds(&self, bytes: u64) -> f64 {
        bytes as f64 * 8.0 / (self.uplink_mbps * 1e6)
    }

    pub fn downlink_seconds(&self, bytes: u64) -> f64 {
        bytes as f64 * 8.0 / (self.downlink_mbps * 1e6)
    }

    /// Compute, transfer and aggregation time of one round.
    pub fn round_seconds(&self, r: &RoundReport) -> f64 {
        r.lttr_s
            + self.uplink_seconds(r.up_bytes)
            + self.downlink_seconds(r.down_bytes)
            + self.agg_seconds
    }
}

/// Bound on the average generalization error after `m` client samples:
///
/// `(S L/m) ln(2BD) + (3S/m) ln(LD) + S B^2/(2m) + (2S/m) ln(4d max(m/S, 1))`
pub fn epsilon_bound(s: f64, layers: f64, width: f64, b: f64, d: f64, m: f64) -> Result<f64> {
    for (name, v) in [("S", s), ("L", layers), ("D", width), ("d", d), ("m_r", m)] {
        if !(v >= 1.0 && v.is_finite()) {
            return Err(Error::input(format!(
                "{name} = {v} must be a finite value >= 1"
            )));
        }
    }
    if !(b >= 2.0 && b.is_finite()) {
        return Err(Error::input(format!("B = {b} must be >= 2")));
    }
    let t1 = s * layers / m * (2.0 * b * width).ln();
    let t2 = 3.0 * s / m * (layers * width).ln();
    let t3 = s * b * b / (2.0 * m);
    let t4 = 2.0 * s / m * (4.0 * d * (m / s).max(1.0)).ln();
    Ok(t1 + t2 + t3 + t4)
}

pub fn save_ratio(dense_bytes: u64, method_bytes: u64) -> Result<f64> {
    if method_bytes == 0 {
        return Err(Error::input("method bytes must be positive"));
    }
    Ok(dense_bytes as f64 / method_bytes as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Top1,
    Top3,
}

impl Metric {
    pub fn of(self, r: &RoundReport) -> f64 {
        match self {
            Metric::Top1 => r.test_top1,
            Metric::Top3 => r.test_top3,
        }
    }
}

/// Modeled seconds until `metric` first reaches `target`, or `None`.
pub fn tta_estimate(
    reports: &[RoundReport],
    link: &LinkModel,
    metric: Metric,
    target: f64,
) -> Option<f64> {
    let mut total = 0.0;
    for r in reports {
        total += link.round_seconds(r);
        if metric.of(r) >= target {
            return Some(total);
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::config("format", format!("{s:?} is not csv or json"))),
        }
    }
}

/// 17 significant digits.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Field values in column order; `float` renders non-finite values.
fn fields(r: &RoundReport, float: fn(f64) -> String) -> [String; 9] {
    [
        r.round.to_string(),
        float(r.train_loss),
        float(r.test_top1),
        float(r.test_top3),
        r.up_bytes.to_string(),
        r.down_bytes.to_string(),
        float(r.lttr_s),
        r.m_r.to_string(),
        float(r.epsilon_bound),
    ]
}

pub fn render_csv(reports: &[RoundReport]) -> String {
    let mut out = REPORT_FIELDS.join(",");
    out.push('\n');
    for r in reports {
        out.push_str(&fields(r, num).join(","));
        out.push('\n');
    }
    out
}

/// Array of objects; non-finite numbers become `null`.
pub fn render_json(reports: &[RoundReport]) -> String {
    fn json_num(v: f64) -> String {
        if v.is_finite() {
            num(v)
        } else {
            "null".into()
        }
    }
    let mut out = String::from("[");
    for (i, r) in reports.iter().enumerate() {
        out.push_str(if i == 0 { "\n  {" } else { ",\n  {" });
        for (j, (name, value)) in REPORT_FIELDS.iter().zip(fields(r, json_num)).enumerate() {
            let sep = if j == 0 { "" } else { ", " };
            write!(out, "{sep}\"{name}\": {value}").unwrap();
        }
        out.push('}');
    }
    out.push_str(if reports.is_empty() { "]\n" } else { "\n]\n" });
    out
}

pub fn render(reports: &[RoundReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => render_csv(reports),
        ReportFormat::Json => render_json(reports),
    }
}

pub fn emit_reports(reports: &[RoundReport], format: ReportFormat, path: &Path) -> Result<()> {
    std::fs::write(path, render(reports, format)).map_err(|e| Error::io(path, e))
}

fn parse_field<T: FromStr>(s: &str, name: &str, row: usize) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Format {
        offset: row,
        msg: format!("bad {name} value {s:?}"),
    })
}

/// Parses CSV written by [`render_csv`]; `offset` in errors is the record number.
pub fn parse_csv(text: &str) -> Result<Vec<RoundReport>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::Format {
        offset: 0,
        msg: e.to_string(),
    })?;
    if header.iter().ne(REPORT_FIELDS) {
        return Err(Error::Format {
            offset: 0,
            msg: format!("unexpected header {header:?}"),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Format {
            offset: row,
            msg: e.to_string(),
        })?;
        let f = |j: usize| rec.get(j).unwrap_or("");
        out.push(RoundReport {
            round: parse_field(f(0), REPORT_FIELDS[0], row)?,
            train_loss: parse_field(f(1), REPORT_FIELDS[1], row)?,
            test_top1: parse_field(f(2), REPORT_FIELDS[2], row)?,
            test_top3: parse_field(f(3), REPORT_FIELDS[3], row)?,
            up_bytes: parse_field(f(4), REPORT_FIELDS[4], row)?,
            down_bytes: parse_field(f(5), REPORT_FIELDS[5], row)?,
            lttr_s: parse_field(f(6), REPORT_FIELDS[6], row)?,
            m_r: parse_field(f(7), REPORT_FIELDS[7], row)?,
            epsilon_bound: parse_field(f(8), REPORT_FIELDS[8], row)?,
        });
    }
    Ok(out)
}

/// Parses JSON written by [`render_json`]; `null` reads back as NaN.
pub fn parse_json(text: &str) -> Result<Vec<RoundReport>> {
    let bad = |row: usize, msg: String| Error::Format { offset: row, msg };
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| bad(0, e.to_string()))?;
    let items = value
        .as_array()
        .ok_or_else(|| bad(0, "expected an array".into()))?;
    items
        .iter()
        .enumerate()
        .map(|(row, item)| {
            let get = |k: &str| item.get(k).ok_or_else(|| bad(row, format!("missing {k}")));
            let float = |k: &str| -> Result<f64> {
                let v = get(k)?;
                if v.is_null() {
                    Ok(f64::NAN)
                } else {
                    v.as_f64()
                        .ok_or_else(|| bad(row, format!("{k} is not a number")))
                }
            };
            let int = |k: &str| -> Result<u64> {
                get(k)?
                    .as_u64()
                    .ok_or_else(|| bad(row, format!("{k} is not an unsigned integer")))
            };
            Ok(RoundReport {
                round: int("round")?,
                train_loss: float("train_loss")?,
                test_top1: float("test_top1")?,
                test_top3: float("test_top3")?,
                up_bytes: int("up_bytes")?,
                down_bytes: int("down_bytes")?,
                lttr_s: float("lttr_s")?,
                m_r: int("m_r")?,
                epsilon_bound: float("epsilon_bound")?,
            })
        })
        .collect()
}

pub fn read_reports(path: &Path, format: ReportFormat) -> Result<Vec<RoundReport>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        ReportFormat::Csv => parse_csv(&text),
        ReportFormat::Json => parse_json(&text),
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn report(round: u64, top1: f64, up: u64) -> RoundReport {
        RoundReport {
            round,
            train_loss: 0.1 * round as f64 + 1.0 / 3.0,
            test_top1: top1,
            test_top3: f64::NAN,
            up_bytes: up,
            down_bytes: 1000,
            lttr_s: 0.5,
            m_r: 10 * round,
            epsilon_bound: 1.0 / (round as f64 + 7.0),
        }
    }

    fn same(a: &RoundReport, b: &RoundReport) -> bool {
        let f = |x: f64, y: f64| x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan());
        a.round == b.round
            && f(a.train_loss, b.train_loss)
            && f(a.test_top1, b.test_top1)
            && f(a.test_top3, b.test_top3)
            && a.up_bytes == b.up_bytes
            && a.down_bytes == b.down_bytes
            && f(a.lttr_s, b.lttr_s)
            && a.m_r == b.m_r
            && f(a.epsilon_bound, b.epsilon_bound)
    }

    #[test]
    fn bound_positive_and_decreasing() {
        let e = epsilon_bound(20.0, 2.0, 10.0, 2.0, 4.0, 1000.0).unwrap();
        assert!(e > 0.0);
        let s = 20.0;
        let mut m = s * std::f64::consts::E;
        for _ in 0..20 {
            let a = epsilon_bound(s, 2.0, 10.0, 2.0, 4.0, m).unwrap();
            let b = epsilon_bound(s, 2.0, 10.0, 2.0, 4.0, 2.0 * m).unwrap();
            assert!(b < a);
            m *= 1.7;
        }
        assert!(epsilon_bound(0.5, 2.0, 10.0, 2.0, 4.0, 1000.0).is_err());
        assert!(epsilon_bound(20.0, 2.0, 10.0, 1.5, 4.0, 1000.0).is_err());
    }

    #[test]
    fn tta_examples() {
        let link = LinkModel {
            downlink_mbps: 110.6,
            uplink_mbps: 14.0,
            agg_seconds: 0.25,
        };
        let reports = vec![report(1, 0.9, 100), report(2, 0.95, 100)];
        let t = tta_estimate(&reports, &link, Metric::Top1, 0.8).unwrap();
        assert_eq!(t, link.round_seconds(&reports[0]));
        let two = tta_estimate(&reports, &link, Metric::Top1, 0.93).unwrap();
        assert!(two > t);
        assert_eq!(tta_estimate(&reports, &link, Metric::Top1, 0.99), None);
        assert_eq!(tta_estimate(&reports, &link, Metric::Top3, 0.0), None);

        let doubled: Vec<_> = reports
            .iter()
            .map(|r| RoundReport {
                up_bytes: 2 * r.up_bytes,
                ..r.clone()
            })
            .collect();
        assert!(tta_estimate(&doubled, &link, Metric::Top1, 0.93).unwrap() > two);

        assert!((link.uplink_seconds(16_400_000) - 9.371_428_571_428_571).abs() < 1e-12);
    }

    #[test]
    fn save_ratio_examples() {
        assert_eq!(save_ratio(10, 10).unwrap(), 1.0);
        assert!(save_ratio(10, 0).is_err());
    }

    #[test]
    fn empty_outputs() {
        assert_eq!(render_csv(&[]), format!("{}\n", REPORT_FIELDS.join(",")));
        assert_eq!(render_json(&[]), "[]\n");
        assert!(parse_csv(&render_csv(&[])).unwrap().is_empty());
        assert!(parse_json(&render_json(&[])).unwrap().is_empty());
    }

    #[test]
    fn json_uses_null_for_nan() {
        let j = render_json(&[report(1, 0.5, 3)]);
        assert!(j.contains("\"test_top3\": null"));
        let keys: Vec<usize> = REPORT_FIELDS
            .iter()
            .map(|k| j.find(&format!("\"{k}\"")).unwrap())
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let reports: Vec<_> = (1..5).map(|r| report(r, 0.1 * r as f64, 7 * r)).collect();
        for fmt in [ReportFormat::Csv, ReportFormat::Json] {
            let path = dir.path().join(format!("r.{}", fmt.extension()));
            emit_reports(&reports, fmt, &path).unwrap();
            let back = read_reports(&path, fmt).unwrap();
            assert!(reports.iter().zip(&back).all(|(a, b)| same(a, b)));
        }
        let missing = dir.path().join("nope/r.csv");
        let err = emit_reports(&reports, ReportFormat::Csv, &missing).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    proptest! {
        #[test]
        fn text_roundtrip_is_exact(
            loss in any::<f64>(), top1 in 0.0f64..1.0, eps in 1e-300f64..1e300,
            up in any::<u64>(), m in any::<u64>(),
        ) {
            let r = RoundReport { train_loss: loss, test_top1: top1, epsilon_bound: eps, up_bytes: up, m_r: m, ..report(3, 0.0, 0) };
            let csv = parse_csv(&render_csv(std::slice::from_ref(&r))).unwrap();
            prop_assert!(same(&csv[0], &r));
            if loss.is_finite() {
                let json = parse_json(&render_json(std::slice::from_ref(&r))).unwrap();
                prop_assert!(same(&json[0], &r));
            }
        }
    }
}
