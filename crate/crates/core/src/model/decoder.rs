//! Autoregressive decoding, batched over trajectories that share an instance.
//!
//! Per step and trajectory: the context (first and last city for TSP; last
//! node and remaining load for CVRP) is fused into one query row, refined by
//! an AAFM over the node embeddings whose bias is the current node's
//! adaptation row plus the feasibility mask, then scored against every node
//! embedding with the clipped, bias-shifted compatibility
//! `ξ·tanh(q·h_i/√d + A_{last,i})`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::instance::{Instance, Problem};
use crate::model::context::DecoderContext;
use crate::model::encoder::{encode, EncoderOutput};
use crate::model::{BiasSite, IcamModel, ModelConfig, ModelVars};
use crate::numeric::aft::MASK_BIAS;
use crate::numeric::kernels::masked_softmax;
use crate::numeric::{Tape, Tensor, Var};

/// How the next node is picked.
pub enum Choice<'a> {
    /// Most probable node; ties go to the lowest index.
    Greedy,
    Sample(&'a mut ChaCha8Rng),
    /// Replays the given complete orders (teacher forcing).
    Forced(&'a [Vec<usize>]),
}

/// Per-step log-probability vectors left on the tape by [`decode`].
#[derive(Clone, Debug, Default)]
pub struct DecodeTrace {
    /// `(log p of the chosen node per active row, trajectory index of each row)`
    steps: Vec<(Var, Vec<usize>)>,
    trajectories: usize,
}

impl DecodeTrace {
    pub fn trajectories(&self) -> usize {
        self.trajectories
    }

    /// `Σ_i weights[i] · log p(π^i)` as one scalar on the tape.
    pub fn weighted_logp(&self, tape: &mut Tape, weights: &[f64]) -> Result<Var> {
        if weights.len() != self.trajectories {
            return Err(Error::Dimension(format!(
                "{} weights for {} trajectories",
                weights.len(),
                self.trajectories
            )));
        }
        let mut total: Option<Var> = None;
        for (lp, rows) in &self.steps {
            let w: Vec<f64> = rows.iter().map(|&r| weights[r]).collect();
            let s = tape.weighted_sum(*lp, &w)?;
            total = Some(match total {
                Some(t) => tape.add(t, s)?,
                None => s,
            });
        }
        match total {
            Some(t) => Ok(t),
            // every trajectory was fully forced: log p = 0
            None => Ok(tape.constant(Tensor::scalar(0.0))),
        }
    }

    pub fn logp_of(&self, tape: &mut Tape, trajectory: usize) -> Result<Var> {
        let mut w = vec![0.0; self.trajectories];
        w[trajectory] = 1.0;
        self.weighted_logp(tape, &w)
    }
}

pub struct Decoded {
    pub orders: Vec<Vec<usize>>,
    pub step_logps: Vec<Vec<f64>>,
    pub trace: DecodeTrace,
}

/// Decoder-side projections of the node embeddings, computed once per instance.
pub struct DecoderKeys {
    k: Var,
    v: Var,
}

pub fn prepare(tape: &mut Tape, vars: &ModelVars, enc: &EncoderOutput) -> Result<DecoderKeys> {
    Ok(DecoderKeys {
        k: tape.matmul(enc.h, vars.get("decoder.aafm.wk")?)?,
        v: tape.matmul(enc.h, vars.get("decoder.aafm.wv")?)?,
    })
}

/// Clipped compatibilities `u` (`P×N`) for the given contexts, and the
/// feasibility mask (`true` = masked) in the same layout.
#[allow(clippy::too_many_arguments)]
pub fn step_logits(
    tape: &mut Tape,
    cfg: &ModelConfig,
    vars: &ModelVars,
    inst: &Instance,
    enc: &EncoderOutput,
    keys: &DecoderKeys,
    ctxs: &[&DecoderContext],
) -> Result<(Var, Vec<bool>)> {
    let n = enc.nodes;
    let p = ctxs.len();
    let d = cfg.embed_dim;
    let mut mask = vec![false; p * n];
    for (r, c) in ctxs.iter().enumerate() {
        c.write_mask(inst, &mut mask[r * n..(r + 1) * n]);
        if mask[r * n..(r + 1) * n].iter().all(|&m| m) {
            return Err(Error::Contract(format!(
                "no feasible node for trajectory row {r} at step {}",
                c.step
            )));
        }
    }
    let lasts: Vec<usize> = ctxs.iter().map(|c| c.last).collect();

    let h_last = tape.gather_rows(enc.h, &lasts)?;
    let context = match cfg.problem {
        Problem::Tsp => {
            let firsts: Vec<usize> = ctxs.iter().map(|c| c.first).collect();
            let h_first = tape.gather_rows(enc.h, &firsts)?;
            tape.concat_cols(h_first, h_last)?
        }
        Problem::Cvrp => {
            let load: Vec<f64> = ctxs
                .iter()
                .map(|c| c.remaining as f64 / c.capacity as f64)
                .collect();
            let load = tape.constant(Tensor::new(vec![p, 1], load)?);
            tape.concat_cols(h_last, load)?
        }
    };
    let q = tape.matmul(context, vars.get("decoder.query.weight")?)?;
    let q = tape.add_row(q, vars.get("decoder.query.bias")?)?;

    let rows = tape.gather_rows(enc.bias_base, &lasts)?;
    let a = tape.mul(rows, vars.get(&cfg.alpha_name(BiasSite::DecoderAafm))?)?;
    let mask_bias = Tensor::new(
        vec![p, n],
        mask.iter().map(|&m| if m { MASK_BIAS } else { 0.0 }).collect(),
    )?;
    let mask_bias = tape.constant(mask_bias);
    let a = tape.add(a, mask_bias)?;
    let refined = tape.aafm(q, keys.k, keys.v, a)?;
    let refined = tape.matmul(refined, vars.get("decoder.combine.weight")?)?;
    let refined = tape.add_row(refined, vars.get("decoder.combine.bias")?)?;

    let score = tape.matmul_nt(refined, enc.h)?;
    let score = tape.scale(score, 1.0 / (d as f64).sqrt())?;
    let compat_bias = tape.mul(rows, vars.get(&cfg.alpha_name(BiasSite::Compatibility))?)?;
    let score = tape.add(score, compat_bias)?;
    let u = tape.tanh(score)?;
    let u = tape.scale(u, cfg.clip)?;
    Ok((u, mask))
}

fn pick_greedy(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

fn pick_sample(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_feasible = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_feasible = i;
            if r < acc {
                return i;
            }
        }
    }
    last_feasible
}

/// Constructs one trajectory per start node, recording log-probabilities on
/// `tape`. The forced start is not a decision and contributes no log-probability.
#[allow(clippy::too_many_arguments)]
pub fn decode(
    tape: &mut Tape,
    cfg: &ModelConfig,
    vars: &ModelVars,
    inst: &Instance,
    enc: &EncoderOutput,
    starts: &[usize],
    mut choice: Choice<'_>,
) -> Result<Decoded> {
    if inst.problem != cfg.problem {
        return Err(Error::Contract(format!(
            "model for {} given a {} instance",
            cfg.problem.name(),
            inst.problem.name()
        )));
    }
    if let Choice::Forced(orders) = &choice {
        if orders.len() != starts.len() {
            return Err(Error::Contract("forced orders and starts differ in count".into()));
        }
    }
    let n = inst.len();
    let keys = prepare(tape, vars, enc)?;
    let mut ctxs = starts
        .iter()
        .map(|&s| DecoderContext::start(inst, s))
        .collect::<Result<Vec<_>>>()?;
    let mut step_logps = vec![Vec::new(); starts.len()];
    let mut trace = DecodeTrace {
        steps: Vec::new(),
        trajectories: starts.len(),
    };
    let mut probs = vec![0.0; n];

    loop {
        let active: Vec<usize> = (0..ctxs.len()).filter(|&i| !ctxs[i].is_done()).collect();
        if active.is_empty() {
            break;
        }
        let refs: Vec<&DecoderContext> = active.iter().map(|&i| &ctxs[i]).collect();
        let (u, mask) = step_logits(tape, cfg, vars, inst, enc, &keys, &refs)?;
        let mut picks = Vec::with_capacity(active.len());
        for (r, &ti) in active.iter().enumerate() {
            let row = &tape.value(u).data()[r * n..(r + 1) * n];
            let mrow = &mask[r * n..(r + 1) * n];
            masked_softmax(row, mrow, &mut probs)
                .ok_or_else(|| Error::Infeasible(format!("trajectory {ti}: every node masked")))?;
            let pick = match &mut choice {
                Choice::Greedy => pick_greedy(&probs),
                Choice::Sample(rng) => pick_sample(&probs, rng),
                Choice::Forced(orders) => {
                    let pos = ctxs[ti].order.len();
                    *orders[ti].get(pos).ok_or_else(|| {
                        Error::Contract(format!("forced order {ti} ends before the tour is complete"))
                    })?
                }
            };
            if pick >= n || mrow[pick] {
                return Err(Error::Contract(format!(
                    "trajectory {ti}: node {pick} is infeasible at step {}",
                    ctxs[ti].step
                )));
            }
            picks.push(pick);
        }
        let lp = tape.log_softmax_pick(u, &mask, &picks)?;
        for (r, &ti) in active.iter().enumerate() {
            step_logps[ti].push(tape.value(lp).data()[r]);
            ctxs[ti].apply(inst, picks[r])?;
        }
        trace.steps.push((lp, active));
    }

    let orders: Vec<Vec<usize>> = ctxs.into_iter().map(DecoderContext::into_order).collect();
    if let Choice::Forced(forced) = &choice {
        for (i, (got, want)) in orders.iter().zip(forced.iter()).enumerate() {
            if got != want {
                return Err(Error::Contract(format!(
                    "forced order {i} is not a complete feasible solution: replay gave {got:?}"
                )));
            }
        }
    }
    Ok(Decoded {
        orders,
        step_logps,
        trace,
    })
}

/// The start node implied by a complete order.
pub fn start_of(problem: Problem, order: &[usize]) -> Result<usize> {
    let idx = match problem {
        Problem::Tsp => 0,
        Problem::Cvrp => 1,
    };
    order
        .get(idx)
        .copied()
        .ok_or_else(|| Error::Contract("order too short".into()))
}

/// `log p(π | X) = Σ_t log p(π_t | X, π_{1:t−1})`, teacher-forced along `order`.
pub fn log_prob_of_solution(tape: &mut Tape, model: &IcamModel, vars: &ModelVars, inst: &Instance, order: &[usize]) -> Result<Var> {
    let enc = encode(tape, &model.config, vars, inst, inst.scale())?;
    let start = start_of(inst.problem, order)?;
    if inst.problem == Problem::Cvrp && order.first() != Some(&0) {
        return Err(Error::Contract("CVRP order must start at the depot".into()));
    }
    let orders = [order.to_vec()];
    let dec = decode(tape, &model.config, vars, inst, &enc, &[start], Choice::Forced(&orders))?;
    dec.trace.logp_of(tape, 0)
}
