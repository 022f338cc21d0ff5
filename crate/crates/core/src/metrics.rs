//! Per-round metrics and their CSV representation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "round,grad_norm_sq,loss,consensus_error,elapsed_ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    /// `||grad L||^2` at the server model or the network average.
    pub grad_norm_sq: f64,
    pub loss: f64,
    /// Present in decentralized runs only.
    pub consensus_error: Option<f64>,
    /// Wall time of the round; zero unless timing was requested.
    pub elapsed_ms: u64,
}

impl RoundMetrics {
    /// One CSV row without a trailing newline. Floats use the shortest
    /// representation that parses back exactly.
    pub fn csv_row(&self) -> String {
        let ce = self.consensus_error.map(|c| format!("{c:e}")).unwrap_or_default();
        format!("{},{:e},{:e},{},{}", self.round, self.grad_norm_sq, self.loss, ce, self.elapsed_ms)
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let bad = || Error::arg(format!("malformed metrics row `{line}`"));
        let cols: Vec<&str> = line.trim_end().split(',').collect();
        if cols.len() != 5 {
            return Err(bad());
        }
        Ok(Self {
            round: cols[0].parse().map_err(|_| bad())?,
            grad_norm_sq: cols[1].parse().map_err(|_| bad())?,
            loss: cols[2].parse().map_err(|_| bad())?,
            consensus_error: if cols[3].is_empty() {
                None
            } else {
                Some(cols[3].parse().map_err(|_| bad())?)
            },
            elapsed_ms: cols[4].parse().map_err(|_| bad())?,
        })
    }
}

/// Streams rows to `out`, flushing after each.
pub struct MetricsWriter<W: Write> {
    out: W,
    label: String,
}

impl<W: Write> MetricsWriter<W> {
    /// Writes the header immediately; `label` names the sink in errors.
    pub fn new(mut out: W, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        writeln!(out, "{CSV_HEADER}")
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(&label, e))?;
        Ok(Self { out, label })
    }

    pub fn write(&mut self, m: &RoundMetrics) -> Result<()> {
        writeln!(self.out, "{}", m.csv_row())
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.label, e))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Renders a whole series, header included.
pub fn to_csv(metrics: &[RoundMetrics]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for m in metrics {
        s.push_str(&m.csv_row());
        s.push('\n');
    }
    s
}

pub fn parse_csv(text: &str) -> Result<Vec<RoundMetrics>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::arg("missing metrics header"));
    }
    lines.map(RoundMetrics::parse_csv_row).collect()
}

/// Mean `grad_norm_sq` over the last `tail` rounds.
pub fn stationary_gap(metrics: &[RoundMetrics], tail: usize) -> Result<f64> {
    if metrics.is_empty() {
        return Err(Error::arg("no metrics to summarize"));
    }
    if tail == 0 || tail > metrics.len() {
        return Err(Error::arg(format!("tail {tail} outside 1..={}", metrics.len())));
    }
    let window = &metrics[metrics.len() - tail..];
    Ok(window.iter().map(|m| m.grad_norm_sq).sum::<f64>() / tail as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: &[f64]) -> Vec<RoundMetrics> {
        values
            .iter()
            .enumerate()
            .map(|(round, &v)| RoundMetrics {
                round,
                grad_norm_sq: v,
                loss: 0.0,
                consensus_error: None,
                elapsed_ms: 0,
            })
            .collect()
    }

    #[test]
    fn gap_examples() {
        assert!((stationary_gap(&series(&[0.7; 12]), 10).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(stationary_gap(&series(&[1.0, 9.0]), 1).unwrap(), 9.0);
        assert_eq!(stationary_gap(&series(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), 3).unwrap(), 5.0);
        assert!(stationary_gap(&[], 1).is_err());
        assert!(stationary_gap(&series(&[1.0]), 2).is_err());
    }

    #[test]
    fn writer_emits_header_and_rows() {
        let w = MetricsWriter::new(Vec::new(), "mem").unwrap();
        assert_eq!(String::from_utf8(w.into_inner()).unwrap(), format!("{CSV_HEADER}\n"));
        let mut w = MetricsWriter::new(Vec::new(), "mem").unwrap();
        let rows = series(&[0.1, 1e-300, 12345.678]);
        for r in &rows {
            w.write(r).unwrap();
        }
        let text = String::from_utf8(w.into_inner()).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(parse_csv(&text).unwrap(), rows);
        let dec = RoundMetrics {
            consensus_error: Some(0.25),
            ..rows[0].clone()
        };
        assert_eq!(RoundMetrics::parse_csv_row(&dec.csv_row()).unwrap(), dec);
        assert!(rows[0].csv_row().contains(",,"));
    }
}
