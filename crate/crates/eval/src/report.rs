//! Per-sample metric tables and their aggregates.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};

pub const CSV_HEADER: &str = "sample_id,dsc,ssim,sift_rate";
pub const METRICS: [Metric; 3] = [Metric::Dsc, Metric::Ssim, Metric::SiftRate];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Dsc,
    Ssim,
    SiftRate,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Dsc => "dsc",
            Metric::Ssim => "ssim",
            Metric::SiftRate => "sift_rate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub sample_id: String,
    pub dsc: f64,
    pub ssim: f64,
    pub sift_rate: f64,
}

impl SampleMetrics {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Dsc => self.dsc,
            Metric::Ssim => self.ssim,
            Metric::SiftRate => self.sift_rate,
        }
    }
}

/// Mean and sample standard deviation (`n − 1`); `std` is `None` below two
/// samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub rate: f64,
    pub std: Option<f64>,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let rate = values.iter().sum::<f64>() / n;
        let std = (values.len() > 1)
            .then(|| (values.iter().map(|v| (v - rate).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Aggregate { rate, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub model: String,
    pub count: usize,
    /// Which standard deviation the aggregates use.
    pub std_convention: String,
    pub dsc: Aggregate,
    pub ssim: Aggregate,
    pub sift_rate: Aggregate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub model: String,
    pub samples: Vec<SampleMetrics>,
}

impl MetricReport {
    pub fn new(model: impl Into<String>, samples: Vec<SampleMetrics>) -> Result<Self> {
        if samples.is_empty() {
            return Err(EvalError::Report("a report needs at least one sample".into()));
        }
        for s in &samples {
            for m in METRICS {
                let v = s.get(m);
                if !(0.0..=1.0).contains(&v) {
                    return Err(EvalError::Report(format!(
                        "sample {} has {} = {v}, outside [0, 1]",
                        s.sample_id,
                        m.name()
                    )));
                }
            }
        }
        Ok(MetricReport {
            model: model.into(),
            samples,
        })
    }

    pub fn values(&self, m: Metric) -> Vec<f64> {
        self.samples.iter().map(|s| s.get(m)).collect()
    }

    pub fn aggregate(&self, m: Metric) -> Aggregate {
        Aggregate::of(&self.values(m))
    }

    pub fn summary(&self) -> Summary {
        Summary {
            model: self.model.clone(),
            count: self.samples.len(),
            std_convention: "sample (n-1)".into(),
            dsc: self.aggregate(Metric::Dsc),
            ssim: self.aggregate(Metric::Ssim),
            sift_rate: self.aggregate(Metric::SiftRate),
        }
    }

    /// Values use shortest round-trip formatting, so the CSV reproduces the
    /// report exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for s in &self.samples {
            let _ = writeln!(out, "{},{},{},{}", s.sample_id, s.dsc, s.ssim, s.sift_rate);
        }
        out
    }

    pub fn from_csv(model: impl Into<String>, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(EvalError::Report(format!("metrics CSV must start with {CSV_HEADER:?}")));
        }
        let mut samples = Vec::new();
        for (i, line) in lines.enumerate() {
            let bad = || EvalError::Report(format!("malformed metrics row {}: {line:?}", i + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            samples.push(SampleMetrics {
                sample_id: f[0].to_string(),
                dsc: num(f[1])?,
                ssim: num(f[2])?,
                sift_rate: num(f[3])?,
            });
        }
        MetricReport::new(model, samples)
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary())?)
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        fs::write(dir.join(format!("{stem}.json")), self.summary_json()?)?;
        Ok(())
    }

    /// Reads a per-sample CSV; the model name is the file stem.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let model = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        MetricReport::from_csv(model, &fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_uses_sample_std() {
        let a = Aggregate::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(a.rate, 2.5);
        assert!((a.std.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(Aggregate::of(&[0.3]).std, None);
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        let s = SampleMetrics {
            sample_id: "a".into(),
            dsc: 1.2,
            ssim: 0.0,
            sift_rate: 0.0,
        };
        assert!(MetricReport::new("m", vec![s]).is_err());
        assert!(MetricReport::new("m", vec![]).is_err());
    }
}
