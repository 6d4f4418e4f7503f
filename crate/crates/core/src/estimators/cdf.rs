use std::io::Write;

use super::{invalid, EstimatorError, RangeEstimate};

/// Empirical distribution of absolute range errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCdf {
    sorted: Vec<f64>,
}

impl ErrorCdf {
    pub fn from_errors(mut errors: Vec<f64>) -> Result<Self, EstimatorError> {
        if errors.is_empty() {
            return Err(invalid("estimates", "need at least one estimate"));
        }
        if errors.iter().any(|e| !e.is_finite()) {
            return Err(invalid("estimates", "non-finite error"));
        }
        errors.sort_by(f64::total_cmp);
        Ok(Self { sorted: errors })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn errors(&self) -> &[f64] {
        &self.sorted
    }

    /// F(x): fraction of errors ≤ x.
    pub fn at(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&e| e <= x) as f64 / self.sorted.len() as f64
    }

    /// Smallest error e with F(e) ≥ p.
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.sorted.len();
        let rank = (p.clamp(0.0, 1.0) * n as f64).ceil() as usize;
        self.sorted[rank.clamp(1, n) - 1]
    }

    /// Step points (distinct error, cumulative probability).
    pub fn points(&self) -> Vec<(f64, f64)> {
        let n = self.sorted.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, &e) in self.sorted.iter().enumerate() {
            let p = (i + 1) as f64 / n;
            match out.last_mut() {
                Some(last) if last.0 == e => last.1 = p,
                _ => out.push((e, p)),
            }
        }
        out
    }
}

pub fn error_cdf(estimates: &[RangeEstimate], truth_m: f64) -> Result<ErrorCdf, EstimatorError> {
    ErrorCdf::from_errors(estimates.iter().map(|e| (e.range_m - truth_m).abs()).collect())
}

/// Several named CDFs evaluated on the union of their error samples.
#[derive(Debug, Clone, Default)]
pub struct CdfTable {
    pub columns: Vec<(String, ErrorCdf)>,
}

impl CdfTable {
    pub fn push(&mut self, name: impl Into<String>, cdf: ErrorCdf) {
        self.columns.push((name.into(), cdf));
    }

    pub fn get(&self, name: &str) -> Option<&ErrorCdf> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }

    pub fn error_axis(&self) -> Vec<f64> {
        let mut xs: Vec<f64> = self.columns.iter().flat_map(|(_, c)| c.errors().iter().copied()).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        xs
    }

    /// Columns `range_error_m` followed by one CDF column per curve.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["range_error_m".to_string()];
        header.extend(self.columns.iter().map(|(n, _)| n.clone()));
        w.write_record(&header)?;
        for x in self.error_axis() {
            let mut row = vec![x.to_string()];
            row.extend(self.columns.iter().map(|(_, c)| c.at(x).to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}
