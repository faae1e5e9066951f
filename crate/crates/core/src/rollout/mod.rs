//! Solution construction: multi-start greedy/sampled rollouts, feasibility
//! checks, tour lengths and ×8-augmented inference.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{augment_x8, Instance, Problem};
use crate::model::decoder::{decode, Choice, DecodeTrace};
use crate::model::encoder::encode;
use crate::model::{IcamModel, ModelVars};
use crate::numeric::Tape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RolloutMode {
    #[serde(rename = "greedy-single")]
    GreedySingle,
    #[serde(rename = "greedy-multi")]
    GreedyMulti,
    #[serde(rename = "sample")]
    Sample,
    #[serde(rename = "augmented×8")]
    Augmented,
}

impl RolloutMode {
    pub fn label(self) -> &'static str {
        match self {
            RolloutMode::GreedySingle => "greedy-single",
            RolloutMode::GreedyMulti => "greedy-multi",
            RolloutMode::Sample => "sample",
            RolloutMode::Augmented => "augmented×8",
        }
    }
}

impl std::str::FromStr for RolloutMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "greedy-single" => Ok(RolloutMode::GreedySingle),
            "multi" | "greedy-multi" | "greedy" => Ok(RolloutMode::GreedyMulti),
            "sample" => Ok(RolloutMode::Sample),
            "aug8" | "augmented" | "augmented×8" => Ok(RolloutMode::Augmented),
            other => Err(Error::Argument(format!(
                "unknown mode {other:?} (single, multi, sample, aug8)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub order: Vec<usize>,
    pub step_logps: Vec<f64>,
    /// Euclidean length in instance coordinates.
    pub length: f64,
}

impl Trajectory {
    /// Return to maximize: the negated length.
    pub fn ret(&self) -> f64 {
        -self.length
    }

    pub fn logp(&self) -> f64 {
        self.step_logps.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub instance_id: String,
    pub mode: RolloutMode,
    pub trajectories: Vec<Trajectory>,
}

impl RolloutBatch {
    /// Shortest trajectory; ties go to the lowest index.
    pub fn best(&self) -> &Trajectory {
        let mut best = &self.trajectories[0];
        for t in &self.trajectories[1..] {
            if t.length < best.length {
                best = t;
            }
        }
        best
    }
}

/// Checks an order against the solution invariants, naming the first violation.
pub fn check_order(inst: &Instance, order: &[usize]) -> Result<()> {
    let n = inst.len();
    let bad = |msg: String| Err(Error::Contract(format!("{}: {msg}", inst.id)));
    if let Some(pos) = order.iter().position(|&v| v >= n) {
        return bad(format!("position {pos}: node {} out of range", order[pos]));
    }
    let mut seen = vec![false; n];
    match inst.problem {
        Problem::Tsp => {
            for (pos, &v) in order.iter().enumerate() {
                if seen[v] {
                    return bad(format!("position {pos}: node {v} visited twice"));
                }
                seen[v] = true;
            }
            if order.len() != n {
                return bad(format!("tour visits {} of {n} nodes", order.len()));
            }
        }
        Problem::Cvrp => {
            if order.first() != Some(&0) {
                return bad("route does not start at the depot".into());
            }
            if order.last() != Some(&0) {
                return bad("route does not end at the depot".into());
            }
            let cap = inst.capacity();
            let mut load = 0u32;
            for (pos, w) in order.windows(2).enumerate() {
                let v = w[1];
                if v == 0 {
                    if w[0] == 0 {
                        return bad(format!("position {}: empty route", pos + 1));
                    }
                    load = 0;
                    continue;
                }
                if seen[v] {
                    return bad(format!("position {}: customer {v} served twice", pos + 1));
                }
                seen[v] = true;
                load += inst.demand(v);
                if load > cap {
                    return bad(format!("position {}: load {load} exceeds capacity {cap}", pos + 1));
                }
            }
            if let Some(c) = (1..n).find(|&c| !seen[c]) {
                return bad(format!("customer {c} never served"));
            }
        }
    }
    Ok(())
}

/// Sum of legs; TSP tours are closed back to the first node.
pub fn tour_length(inst: &Instance, order: &[usize]) -> Result<f64> {
    check_order(inst, order)?;
    let mut len: f64 = order.windows(2).map(|w| inst.dist(w[0], w[1])).sum();
    if inst.problem == Problem::Tsp {
        len += inst.dist(order[order.len() - 1], order[0]);
    }
    Ok(len)
}

/// Start nodes used by a mode: every city (TSP) or customer (CVRP) for
/// multi-start, only the first one otherwise.
pub fn starts_for(inst: &Instance, mode: RolloutMode) -> Vec<usize> {
    let first = match inst.problem {
        Problem::Tsp => 0,
        Problem::Cvrp => 1,
    };
    match mode {
        RolloutMode::GreedySingle => vec![first],
        _ => (first..inst.len()).collect(),
    }
}

/// Runs the model on `inst` from `starts`, leaving the graph on `tape`.
pub fn rollout_on_tape(
    tape: &mut Tape,
    model: &IcamModel,
    vars: &ModelVars,
    inst: &Instance,
    starts: &[usize],
    choice: Choice<'_>,
) -> Result<(Vec<Trajectory>, DecodeTrace)> {
    let enc = encode(tape, &model.config, vars, inst, inst.scale())?;
    let dec = decode(tape, &model.config, vars, inst, &enc, starts, choice)?;
    let trajectories = dec
        .orders
        .into_iter()
        .zip(dec.step_logps)
        .map(|(order, step_logps)| {
            let length = tour_length(inst, &order)?;
            Ok(Trajectory {
                order,
                step_logps,
                length,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((trajectories, dec.trace))
}

fn run(model: &IcamModel, inst: &Instance, starts: &[usize], choice: Choice<'_>) -> Result<Vec<Trajectory>> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    Ok(rollout_on_tape(&mut tape, model, &vars, inst, starts, choice)?.0)
}

/// Constructs solutions for `inst`. Sampling draws from `seed` (default 0).
/// Augmented mode returns the best trajectory of each of the 8 images, with
/// lengths measured on the original instance.
pub fn rollout(model: &IcamModel, inst: &Instance, mode: RolloutMode, seed: Option<u64>) -> Result<RolloutBatch> {
    let trajectories = match mode {
        RolloutMode::GreedySingle | RolloutMode::GreedyMulti => run(model, inst, &starts_for(inst, mode), Choice::Greedy)?,
        RolloutMode::Sample => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
            run(model, inst, &starts_for(inst, mode), Choice::Sample(&mut rng))?
        }
        RolloutMode::Augmented => solve_augmented(model, inst, RolloutMode::GreedyMulti)?.per_image,
    };
    Ok(RolloutBatch {
        instance_id: inst.id.clone(),
        mode,
        trajectories,
    })
}

pub struct AugmentedSolution {
    pub best: Trajectory,
    /// Best trajectory found on each image, in image order.
    pub per_image: Vec<Trajectory>,
}

/// Solves all 8 symmetry images with `per_image` mode and keeps the shortest
/// tour. Node indices are shared by all images, so orders map back unchanged.
pub fn solve_augmented(model: &IcamModel, inst: &Instance, per_image: RolloutMode) -> Result<AugmentedSolution> {
    if per_image == RolloutMode::Augmented {
        return Err(Error::Argument("per-image mode cannot itself be augmented".into()));
    }
    let images = augment_x8(inst)?;
    let mut best_per_image = Vec::with_capacity(8);
    for img in &images {
        let batch = rollout(model, img, per_image, None)?;
        let t = batch.best().clone();
        let length = tour_length(inst, &t.order)?;
        best_per_image.push(Trajectory { length, ..t });
    }
    let mut best = 0;
    for (i, t) in best_per_image.iter().enumerate() {
        if t.length < best_per_image[best].length {
            best = i;
        }
    }
    Ok(AugmentedSolution {
        best: best_per_image[best].clone(),
        per_image: best_per_image,
    })
}

/// One line of a solution file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub id: String,
    pub order: Vec<usize>,
    /// Length in the instance's original units.
    pub length: f64,
    pub mode: RolloutMode,
    pub seconds: f64,
}

/// Solves one instance and reports the best trajectory.
pub fn solve(model: &IcamModel, inst: &Instance, mode: RolloutMode, seed: Option<u64>) -> Result<SolutionRecord> {
    let t0 = Instant::now();
    let batch = rollout(model, inst, mode, seed)?;
    let best = batch.best();
    Ok(SolutionRecord {
        id: inst.id.clone(),
        order: best.order.clone(),
        length: best.length * inst.unit_scale,
        mode,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Instance {
        Instance::tsp("sq", vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap()
    }

    #[test]
    fn square_tour_length() {
        let sq = square();
        assert_eq!(tour_length(&sq, &[0, 1, 2, 3]).unwrap(), 4.0);
        assert_eq!(tour_length(&sq, &[3, 2, 1, 0]).unwrap(), 4.0);
        assert!(tour_length(&sq, &[0, 1, 2]).is_err());
        assert!(tour_length(&sq, &[0, 1, 1, 3]).is_err());
    }

    #[test]
    fn cvrp_checks() {
        let inst = Instance::cvrp("c", vec![[0.0, 0.0], [3.0, 4.0], [0.0, 1.0]], vec![0, 6, 6], 10).unwrap();
        assert_eq!(tour_length(&inst, &[0, 1, 0, 2, 0]).unwrap(), 12.0);
        let err = tour_length(&inst, &[0, 1, 2, 0]).unwrap_err().to_string();
        assert!(err.contains("exceeds capacity"), "{err}");
        assert!(tour_length(&inst, &[0, 1, 0, 0, 2, 0]).is_err());
        assert!(tour_length(&inst, &[0, 1, 0]).is_err());
        assert!(tour_length(&inst, &[1, 0, 2, 0]).is_err());
    }

    #[test]
    fn mode_labels() {
        assert_eq!(serde_json::to_string(&RolloutMode::Augmented).unwrap(), "\"augmented×8\"");
        assert_eq!("aug8".parse::<RolloutMode>().unwrap(), RolloutMode::Augmented);
    }
}
