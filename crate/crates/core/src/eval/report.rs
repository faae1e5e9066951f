use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(obj − ref) / ref · 100`.
pub fn gap(obj: f64, reference: f64) -> Result<f64> {
    if !(reference > 0.0) || !obj.is_finite() {
        return Err(Error::Argument(format!(
            "gap needs a positive reference and finite objective, got obj {obj}, ref {reference}"
        )));
    }
    Ok((obj - reference) / reference * 100.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub id: String,
    /// Cities (TSP) or customers (CVRP).
    pub scale: usize,
    pub method: String,
    pub objective: f64,
    pub reference: f64,
    /// `exact`, `file` or `nn2opt`.
    pub reference_source: String,
    /// Percent.
    pub gap: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapReport {
    pub rows: Vec<GapRow>,
    pub mean_objective: f64,
    pub mean_gap: f64,
    pub total_seconds: f64,
}

impl GapReport {
    pub fn from_rows(rows: Vec<GapRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Argument("empty report".into()));
        }
        let n = rows.len() as f64;
        Ok(GapReport {
            mean_objective: rows.iter().map(|r| r.objective).sum::<f64>() / n,
            mean_gap: rows.iter().map(|r| r.gap).sum::<f64>() / n,
            total_seconds: rows.iter().map(|r| r.seconds).sum(),
            rows,
        })
    }

    pub const CSV_HEADER: &'static str = "id,scale,method,objective,reference,reference_source,gap_percent,seconds";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:.10},{:.10},{},{:.6},{:.6}",
                r.id, r.scale, r.method, r.objective, r.reference, r.reference_source, r.gap, r.seconds
            );
        }
        s
    }

    /// One line per (method, scale): mean objective, mean gap and total time.
    pub fn to_markdown(&self) -> String {
        let mut groups: BTreeMap<(String, usize), Vec<&GapRow>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry((r.method.clone(), r.scale)).or_default().push(r);
        }
        let mut s = String::from("| Method | N | Obj. | Gap | Time |\n|---|---:|---:|---:|---:|\n");
        for ((method, scale), rows) in groups {
            let n = rows.len() as f64;
            let obj = rows.iter().map(|r| r.objective).sum::<f64>() / n;
            let g = rows.iter().map(|r| r.gap).sum::<f64>() / n;
            let t: f64 = rows.iter().map(|r| r.seconds).sum();
            let _ = writeln!(s, "| {method} | {scale} | {obj:.4} | {g:.3}% | {} |", fmt_time(t));
        }
        s
    }
}

fn fmt_time(secs: f64) -> String {
    if secs < 60.0 {
        format!("{secs:.1}s")
    } else if secs < 3600.0 {
        format!("{:.1}m", secs / 60.0)
    } else {
        format!("{:.1}h", secs / 3600.0)
    }
}
