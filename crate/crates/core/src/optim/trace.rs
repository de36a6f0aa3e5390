use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::theory::Phase;
use crate::error::{Error, Result};
use crate::sim::CostReport;

pub const CSV_COLUMNS: &str = "k,q,f,feas,gnormL,phase,messages,rounds,ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub q: f64,
    pub f: f64,
    /// `||A x_k - b||_2`, which equals `||g_k||_2`.
    pub feas: f64,
    pub gnorm_l: f64,
    pub phase: Phase,
    /// Cumulative messages up to and including the step that produced row `k`.
    pub messages: usize,
    pub rounds: usize,
    /// Wall time since the start; left empty unless timing was requested.
    pub ms: Option<f64>,
    /// Step taken from this iterate (not exported).
    #[serde(skip)]
    pub alpha: Option<f64>,
    /// Richardson sweeps of the solve from this iterate (not exported).
    #[serde(skip)]
    pub sweeps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTrace {
    /// Ordered `key=value` pairs written as `# key=value` lines.
    pub header: Vec<(String, String)>,
    pub rows: Vec<TraceRow>,
    pub cost: Option<CostReport>,
    pub converged: bool,
    pub lambda: Vec<f64>,
    pub x: Vec<f64>,
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

impl RunTrace {
    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Number of steps taken.
    pub fn iterations(&self) -> usize {
        self.rows.last().map_or(0, |r| r.k)
    }

    /// First `k` whose feasibility is at or below `target`.
    pub fn first_feasible(&self, target: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.feas <= target).map(|r| r.k)
    }

    /// Only the data rows, for reproducibility comparisons.
    pub fn csv_body(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_COLUMNS);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.k,
                num(r.q),
                num(r.f),
                num(r.feas),
                num(r.gnorm_l),
                r.phase,
                r.messages,
                r.rounds,
                r.ms.map(num).unwrap_or_default()
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(out, "# {k}={v}");
        }
        out + &self.csv_body()
    }

    /// Parses a CSV written by [`to_csv`](Self::to_csv). Only the header
    /// pairs and exported columns are recovered.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut trace = RunTrace::default();
        let mut lines = text.lines().enumerate();
        let mut saw_columns = false;
        for (no, line) in lines.by_ref() {
            if let Some(rest) = line.strip_prefix("# ") {
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("line {}: header without '='", no + 1)))?;
                trace.header.push((k.to_string(), v.to_string()));
            } else if line == CSV_COLUMNS {
                saw_columns = true;
                break;
            } else {
                return Err(Error::Parse(format!(
                    "line {}: expected header or column line",
                    no + 1
                )));
            }
        }
        if !saw_columns {
            return Err(Error::Parse("missing column line".into()));
        }
        for (no, line) in lines {
            let bad = |what: &str| Error::Parse(format!("line {}: bad {what}", no + 1));
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 9 {
                return Err(bad("column count"));
            }
            let float = |i: usize, what: &str| cells[i].parse::<f64>().map_err(|_| bad(what));
            let int = |i: usize, what: &str| cells[i].parse::<usize>().map_err(|_| bad(what));
            let k = int(0, "k")?;
            if k != trace.rows.len() {
                return Err(bad("iteration index"));
            }
            trace.rows.push(TraceRow {
                k,
                q: float(1, "q")?,
                f: float(2, "f")?,
                feas: float(3, "feas")?,
                gnorm_l: float(4, "gnormL")?,
                phase: cells[5].parse()?,
                messages: int(6, "messages")?,
                rounds: int(7, "rounds")?,
                ms: if cells[8].is_empty() {
                    None
                } else {
                    Some(float(8, "ms")?)
                },
                alpha: None,
                sweeps: None,
            });
        }
        trace.converged = trace.header_value("converged") == Some("true");
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let t = RunTrace {
            header: vec![
                ("method".into(), "gradient".into()),
                ("converged".into(), "true".into()),
            ],
            rows: (0..3)
                .map(|k| TraceRow {
                    k,
                    q: -0.1 * k as f64,
                    f: 1.0 / 3.0,
                    feas: 10f64.powi(-(k as i32) * 7),
                    gnorm_l: 2.5e-300,
                    phase: Phase::Terminal,
                    messages: 4 * k,
                    rounds: k,
                    ms: None,
                    alpha: None,
                    sweeps: None,
                })
                .collect(),
            converged: true,
            ..RunTrace::default()
        };
        let csv = t.to_csv();
        assert!(csv.starts_with("# method=gradient\n"));
        assert!(csv.contains("\nk,q,f,feas,gnormL,phase,messages,rounds,ms\n0,"));
        let back = RunTrace::from_csv(&csv).unwrap();
        assert_eq!(back.rows, t.rows);
        assert_eq!(back.header, t.header);
        assert!(back.converged);
        assert_eq!(back.first_feasible(1e-10), Some(2));
    }

    #[test]
    fn malformed_csv() {
        assert!(RunTrace::from_csv("").is_err());
        assert!(RunTrace::from_csv(
            "k,q,f,feas,gnormL,phase,messages,rounds,ms\n1,0,0,0,0,strict,0,0,\n"
        )
        .is_err());
        assert!(RunTrace::from_csv(
            "k,q,f,feas,gnormL,phase,messages,rounds,ms\n0,0,0,0,0,loud,0,0,\n"
        )
        .is_err());
    }
}
