//! CSV and report formats for evaluation output.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BDResult, Summary};
use crate::error::{Error, Result};
use crate::types::{EvalRecord, MetricKind, RDCurve, RDPoint};

/// `image_id` of the trailing summary row in a results CSV.
pub const SUMMARY_ROW: &str = "mean";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Results CSV: `image_id,bpp,cer,wer,psnr`, one row per image, then a
/// summary row. Images without text have blank `cer`/`wer`.
pub fn write_results_csv(path: &Path, records: &[EvalRecord], summary: Option<&Summary>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["image_id", "bpp", "cer", "wer", "psnr"])?;
    for r in records {
        w.write_record([r.image_id.clone(), r.bpp.to_string(), opt(r.cer), opt(r.wer), r.psnr.to_string()])?;
    }
    if let Some(s) = summary {
        w.write_record([SUMMARY_ROW.to_string(), s.mean_bpp.to_string(), opt(s.mean_cer), opt(s.mean_wer), s.mean_psnr.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads per-image rows, skipping the summary row.
pub fn read_results_csv(path: &Path) -> Result<Vec<EvalRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| not_found_or(path, e))?;
    let parse = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| Error::Format { path: path.into(), reason: format!("bad number `{s}`") })
        }
    };
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        if row.len() != 5 {
            return Err(Error::Format { path: path.into(), reason: format!("expected 5 columns, got {}", row.len()) });
        }
        if &row[0] == SUMMARY_ROW {
            continue;
        }
        let need = |s: &str| parse(s)?.ok_or_else(|| Error::Format { path: path.into(), reason: "missing value".into() });
        out.push(EvalRecord { image_id: row[0].to_string(), bpp: need(&row[1])?, cer: parse(&row[2])?, wer: parse(&row[3])?, psnr: need(&row[4])? });
    }
    Ok(out)
}

fn not_found_or(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Error::NotFound(path.into()),
        _ => e.into(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    label: String,
    metric_kind: MetricKind,
    bpp: f64,
    value: f64,
}

/// Curve CSV: `label,metric_kind,bpp,value`.
pub fn write_curves_csv(path: &Path, curves: &[RDCurve]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for c in curves {
        for p in c.points() {
            w.serialize(CurveRow { label: c.label.clone(), metric_kind: c.metric, bpp: p.bpp, value: p.value })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Groups rows by `(label, metric_kind)` in order of first appearance.
pub fn read_curves_csv(path: &Path) -> Result<Vec<RDCurve>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| not_found_or(path, e))?;
    let mut groups: Vec<(String, MetricKind, Vec<RDPoint>)> = Vec::new();
    for row in rdr.deserialize::<CurveRow>() {
        let row = row.map_err(|e| Error::Format { path: path.into(), reason: e.to_string() })?;
        let point = RDPoint { bpp: row.bpp, value: row.value };
        match groups.iter_mut().find(|(l, m, _)| *l == row.label && *m == row.metric_kind) {
            Some((_, _, pts)) => pts.push(point),
            None => groups.push((row.label, row.metric_kind, vec![point])),
        }
    }
    groups.into_iter().map(|(l, m, p)| RDCurve::new(l, m, p)).collect()
}

/// Structured BD report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BDReport {
    pub reference: String,
    pub target: String,
    /// `rate`, `cer`, `wer` or `psnr`.
    pub metric: String,
    /// Quality metric of the curves.
    pub quality: MetricKind,
    pub value: Option<f64>,
    pub overlap: (f64, f64),
    pub valid: bool,
    pub floored_points: usize,
}

impl BDReport {
    pub fn new(reference: &RDCurve, target: &RDCurve, metric: &str, result: &BDResult) -> Self {
        Self {
            reference: reference.label.clone(),
            target: target.label.clone(),
            metric: metric.to_string(),
            quality: reference.metric,
            value: result.value,
            overlap: result.overlap,
            valid: result.valid(),
            floored_points: result.floored_points,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_roundtrip_with_blank_text_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let recs = vec![
            EvalRecord { image_id: "a".into(), bpp: 0.25, cer: Some(0.1), wer: Some(0.5), psnr: 31.25 },
            EvalRecord { image_id: "b".into(), bpp: 0.5, cer: None, wer: None, psnr: 99.0 },
        ];
        let s = super::super::aggregate(&recs).unwrap();
        write_results_csv(&path, &recs, Some(&s)).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("b,0.5,,,99\n"));
        assert!(text.ends_with("mean,0.375,0.1,0.5,65.125\n"));
        assert_eq!(read_results_csv(&path).unwrap(), recs);
    }

    #[test]
    fn curves_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let pts = |o: f64| (1..=3).map(|i| RDPoint { bpp: i as f64 * 0.1, value: o / i as f64 }).collect::<Vec<_>>();
        let curves = vec![
            RDCurve::new("kappa=0", MetricKind::Cer, pts(0.5)).unwrap(),
            RDCurve::new("kappa=0", MetricKind::Psnr, pts(30.0)).unwrap(),
        ];
        write_curves_csv(&path, &curves).unwrap();
        assert_eq!(read_curves_csv(&path).unwrap(), curves);
        assert!(matches!(read_curves_csv(&dir.path().join("missing.csv")), Err(Error::NotFound(_))));
    }
}
