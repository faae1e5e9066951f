//! Exact oracles, the NN+2-opt baseline, optimality gaps, evaluation reports
//! and the attention memory benchmark.

pub mod bench;
pub mod exact;
pub mod heuristic;
pub mod report;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::instance::{Instance, Problem};
use crate::model::IcamModel;
use crate::rollout::{solve, RolloutMode};

pub use bench::{bench_attention, fit_slope, BenchRecord, Mechanism};
pub use exact::{exact_cvrp, exact_tsp, ExactSolution};
pub use heuristic::{nn_two_opt, HeuristicSolution};
pub use report::{gap, GapReport, GapRow};

/// Solver being evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Icam(RolloutMode),
    Nn2opt,
    Exact,
}

impl Method {
    pub fn label(self) -> String {
        match self {
            Method::Icam(m) => format!("icam/{}", m.label()),
            Method::Nn2opt => "nn2opt".into(),
            Method::Exact => "exact".into(),
        }
    }
}

/// Where reference objectives come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReferenceSpec {
    Exact,
    Nn2opt,
    /// JSON lines with `id` and `length` (or `objective`), in original units.
    File(PathBuf),
    /// Exact if small enough, else the file entry, else NN+2-opt.
    Auto(Option<PathBuf>),
}

impl FromStr for ReferenceSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(ReferenceSpec::Exact),
            "nn2opt" => Ok(ReferenceSpec::Nn2opt),
            "auto" => Ok(ReferenceSpec::Auto(None)),
            _ => {
                if let Some(p) = s.strip_prefix("file:") {
                    Ok(ReferenceSpec::File(p.into()))
                } else if let Some(p) = s.strip_prefix("auto:") {
                    Ok(ReferenceSpec::Auto(Some(p.into())))
                } else {
                    Err(Error::Argument(format!(
                        "unknown reference {s:?} (exact, nn2opt, auto, file:PATH, auto:PATH)"
                    )))
                }
            }
        }
    }
}

#[derive(Deserialize)]
struct RefLine {
    id: String,
    #[serde(alias = "objective")]
    length: f64,
}

/// Reference objectives keyed by instance id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReferenceTable(pub HashMap<String, f64>);

impl ReferenceTable {
    pub fn load(path: &Path) -> Result<Self> {
        let lines: Vec<RefLine> = crate::instance::io::read_jsonl(path)?;
        Ok(ReferenceTable(lines.into_iter().map(|l| (l.id, l.length)).collect()))
    }
}

fn exact_length(inst: &Instance) -> Result<f64> {
    Ok(match inst.problem {
        Problem::Tsp => exact_tsp(inst)?.length,
        Problem::Cvrp => exact_cvrp(inst)?.length,
    })
}

fn fits_exact(inst: &Instance) -> bool {
    match inst.problem {
        Problem::Tsp => inst.len() <= exact::MAX_EXACT_TSP,
        Problem::Cvrp => inst.customers() <= exact::MAX_EXACT_CVRP,
    }
}

/// Reference objective of `inst` in original units, with its source label.
pub fn reference_for(inst: &Instance, spec: &ReferenceSpec, table: Option<&ReferenceTable>) -> Result<(f64, &'static str)> {
    let from_table = || -> Result<f64> {
        table
            .and_then(|t| t.0.get(&inst.id).copied())
            .ok_or_else(|| Error::Argument(format!("no reference entry for {}", inst.id)))
    };
    match spec {
        ReferenceSpec::Exact => Ok((exact_length(inst)? * inst.unit_scale, "exact")),
        ReferenceSpec::Nn2opt => Ok((nn_two_opt(inst)?.length * inst.unit_scale, "nn2opt")),
        ReferenceSpec::File(_) => Ok((from_table()?, "file")),
        ReferenceSpec::Auto(_) => {
            if fits_exact(inst) {
                Ok((exact_length(inst)? * inst.unit_scale, "exact"))
            } else if let Ok(v) = from_table() {
                Ok((v, "file"))
            } else if inst.problem == Problem::Tsp {
                Ok((nn_two_opt(inst)?.length * inst.unit_scale, "nn2opt"))
            } else {
                Err(Error::Argument(format!(
                    "{}: too large for the exact oracle and no reference file entry",
                    inst.id
                )))
            }
        }
    }
}

/// Objective of `method` on `inst` in original units, and its wall time.
pub fn run_method(inst: &Instance, method: Method, model: Option<&IcamModel>) -> Result<(f64, f64)> {
    let t0 = Instant::now();
    let obj = match method {
        Method::Icam(mode) => {
            let model = model.ok_or_else(|| Error::Argument("icam evaluation needs a checkpoint".into()))?;
            return solve(model, inst, mode, None).map(|s| (s.length, s.seconds));
        }
        Method::Nn2opt => nn_two_opt(inst)?.length,
        Method::Exact => exact_length(inst)?,
    };
    Ok((obj * inst.unit_scale, t0.elapsed().as_secs_f64()))
}

/// Evaluates `method` on every instance against `refs`, in input order.
pub fn evaluate(instances: &[Instance], method: Method, model: Option<&IcamModel>, refs: &ReferenceSpec) -> Result<GapReport> {
    let table = match refs {
        ReferenceSpec::File(p) | ReferenceSpec::Auto(Some(p)) => Some(ReferenceTable::load(p)?),
        _ => None,
    };
    let rows = instances
        .par_iter()
        .map(|inst| {
            let (objective, seconds) = run_method(inst, method, model)?;
            let (reference, source) = reference_for(inst, refs, table.as_ref())?;
            Ok(GapRow {
                id: inst.id.clone(),
                scale: match inst.problem {
                    Problem::Tsp => inst.len(),
                    Problem::Cvrp => inst.customers(),
                },
                method: method.label(),
                objective,
                reference,
                reference_source: source.into(),
                gap: gap(objective, reference)?,
                seconds,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    GapReport::from_rows(rows)
}
