//! Pixel-count coverage and IoU, plus the per-method aggregate report.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{mask_overlap, GeometryError, RasterMask};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("undefined metric: {0}")]
    Undefined(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("threshold {0} outside (0, 1]")]
    Threshold(f64),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = MetricError> = std::result::Result<T, E>;

/// `|c ∩ s| / |s|`.
pub fn coverage(c: &RasterMask, s: &RasterMask) -> Result<f64> {
    let (inter, _) = mask_overlap(c, s)?;
    let total = s.count();
    if total == 0 {
        return Err(MetricError::Undefined("coverage of an empty target"));
    }
    Ok(inter as f64 / total as f64)
}

/// `|c ∩ s| / |c ∪ s|`.
pub fn iou(c: &RasterMask, s: &RasterMask) -> Result<f64> {
    let (inter, union) = mask_overlap(c, s)?;
    if union == 0 {
        return Err(MetricError::Undefined("iou of two empty masks"));
    }
    Ok(inter as f64 / union as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub episode_id: usize,
    pub cov: f64,
    pub iou: f64,
    pub wall_time_sec: f64,
}

/// Fraction of records with `cov >= t`.
pub fn cov_at(records: &[EvalRecord], t: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(MetricError::Undefined("cov@t over no records"));
    }
    if !(t > 0.0 && t <= 1.0) {
        return Err(MetricError::Threshold(t));
    }
    Ok(records.iter().filter(|r| r.cov >= t).count() as f64 / records.len() as f64)
}

/// One row of the aggregate table; `time_sec` is the mean per episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub shape: String,
    #[serde(rename = "cov@0.95")]
    pub cov_95: f64,
    #[serde(rename = "cov@0.90")]
    pub cov_90: f64,
    pub cov: f64,
    pub iou: f64,
    pub time_sec: f64,
}

impl ReportRow {
    pub fn aggregate(method: &str, shape: &str, records: &[EvalRecord]) -> Result<Self> {
        let n = records.len() as f64;
        let mean = |f: fn(&EvalRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            method: method.into(),
            shape: shape.into(),
            cov_95: cov_at(records, 0.95)?,
            cov_90: cov_at(records, 0.90)?,
            cov: mean(|r| r.cov),
            iou: mean(|r| r.iou),
            time_sec: mean(|r| r.wall_time_sec),
        })
    }
}

pub const REPORT_HEADER: [&str; 7] = ["method", "shape", "cov@0.95", "cov@0.90", "cov", "iou", "time_sec"];

pub fn write_report<W: Write>(w: W, rows: &[ReportRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if rows.is_empty() {
        wr.write_record(REPORT_HEADER)?;
    }
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_records<W: Write>(w: W, records: &[EvalRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[u8]) -> RasterMask {
        RasterMask::from_cells(bits.len(), 1, bits.iter().map(|&b| b as f64).collect()).unwrap()
    }

    fn recs(covs: &[f64]) -> Vec<EvalRecord> {
        covs.iter()
            .enumerate()
            .map(|(i, &cov)| EvalRecord { episode_id: i, cov, iou: cov, wall_time_sec: 0.0 })
            .collect()
    }

    #[test]
    fn coverage_cases() {
        let s = mask(&[1, 1, 1, 1]);
        assert_eq!(coverage(&s, &s).unwrap(), 1.0);
        assert_eq!(coverage(&mask(&[0, 0, 0, 0]), &s).unwrap(), 0.0);
        assert_eq!(coverage(&mask(&[1, 1, 0, 0]), &s).unwrap(), 0.5);
        assert!(matches!(coverage(&s, &mask(&[0, 0, 0, 0])), Err(MetricError::Undefined(_))));
    }

    #[test]
    fn iou_cases() {
        let s = mask(&[1, 1, 0, 0]);
        assert_eq!(iou(&s, &s).unwrap(), 1.0);
        assert_eq!(iou(&mask(&[1, 0, 0, 0]), &s).unwrap(), 0.5);
        assert!((iou(&mask(&[0, 1, 1, 0]), &s).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(iou(&mask(&[0, 0, 0, 0]), &mask(&[0, 0, 0, 0])).is_err());
    }

    #[test]
    fn coverage_is_not_symmetric() {
        let a = mask(&[1, 1, 1, 1]);
        let b = mask(&[1, 1, 0, 0]);
        assert_ne!(coverage(&a, &b).unwrap(), coverage(&b, &a).unwrap());
        assert_eq!(iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
    }

    #[test]
    fn cov_at_cases() {
        let r = recs(&[0.96, 0.91, 0.80]);
        assert!((cov_at(&r, 0.95).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((cov_at(&r, 0.90).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let full = recs(&[1.0, 1.0]);
        for t in [0.1, 0.5, 0.95, 1.0] {
            assert_eq!(cov_at(&full, t).unwrap(), 1.0);
        }
        assert!(cov_at(&[], 0.5).is_err());
        assert!(cov_at(&r, 0.0).is_err());
    }

    #[test]
    fn report_csv_header() {
        let row = ReportRow::aggregate("fan", "square", &recs(&[1.0, 0.5])).unwrap();
        let mut buf = Vec::new();
        write_report(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), REPORT_HEADER.join(","));
        assert_eq!(text.lines().nth(1).unwrap(), "fan,square,0.5,0.5,0.75,0.75,0.0");
    }
}
