//! Policy-gradient losses. Each loss is linear in the trajectory
//! log-probabilities, `L = Σ_m Σ_i w_mi · log p(π^i | X_m)`, so it is built
//! from a weight table and one weighted sum per instance.

use crate::error::{Error, Result};
use crate::model::DecodeTrace;
use crate::numeric::{Tape, Var};
use crate::train::config::TopkBaseline;

/// `G_mi = R_mi − mean_i R_mi`, one row per instance.
pub fn advantage(returns: &[Vec<f64>]) -> Vec<Vec<f64>> {
    returns.iter().map(|row| centered(row, row)).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn centered(row: &[f64], baseline_of: &[f64]) -> Vec<f64> {
    let b = mean(baseline_of);
    row.iter().map(|r| r - b).collect()
}

/// Indices of the `k` largest returns, best first; ties go to the lower index.
pub fn top_k(row: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > row.len() {
        return Err(Error::Argument(format!("k = {k} with {} trajectories", row.len())));
    }
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

/// Weights of the shared-baseline loss `−1/(B·N) Σ G·log p` for one
/// instance of a batch of `b`.
pub fn pomo_row(row: &[f64], b: usize) -> Vec<f64> {
    let scale = b as f64 * row.len() as f64;
    centered(row, row).iter().map(|g| -g / scale).collect()
}

/// Weights of the elite loss `−1/(B·k) Σ_{top k} G·log p` for one instance.
pub fn topk_row(row: &[f64], k: usize, baseline: TopkBaseline, b: usize) -> Result<Vec<f64>> {
    let top = top_k(row, k)?;
    let g = match baseline {
        TopkBaseline::Full => centered(row, row),
        TopkBaseline::Subset => {
            let elite: Vec<f64> = top.iter().map(|&i| row[i]).collect();
            centered(row, &elite)
        }
    };
    let scale = b as f64 * k as f64;
    let mut w = vec![0.0; row.len()];
    for &i in &top {
        w[i] = -g[i] / scale;
    }
    Ok(w)
}

/// Weights of `L_POMO + β·L_Top` for one instance.
pub fn joint_row(row: &[f64], beta: f64, k: usize, baseline: TopkBaseline, b: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Argument(format!("beta must lie in [0, 1], got {beta}")));
    }
    let mut w = pomo_row(row, b);
    if beta == 0.0 {
        return Ok(w);
    }
    for (a, t) in w.iter_mut().zip(topk_row(row, k, baseline, b)?) {
        *a += beta * t;
    }
    Ok(w)
}

pub fn pomo_weights(returns: &[Vec<f64>]) -> Vec<Vec<f64>> {
    returns.iter().map(|r| pomo_row(r, returns.len())).collect()
}

pub fn topk_weights(returns: &[Vec<f64>], k: usize, baseline: TopkBaseline) -> Result<Vec<Vec<f64>>> {
    returns.iter().map(|r| topk_row(r, k, baseline, returns.len())).collect()
}

pub fn joint_weights(returns: &[Vec<f64>], beta: f64, k: usize, baseline: TopkBaseline) -> Result<Vec<Vec<f64>>> {
    returns
        .iter()
        .map(|r| joint_row(r, beta, k, baseline, returns.len()))
        .collect()
}

/// `Σ_m Σ_i w_mi · log p_mi` on the tape, one trace per instance.
pub fn weighted_loss(tape: &mut Tape, traces: &[DecodeTrace], weights: &[Vec<f64>]) -> Result<Var> {
    if traces.len() != weights.len() || traces.is_empty() {
        return Err(Error::Dimension(format!("{} traces, {} weight rows", traces.len(), weights.len())));
    }
    let mut total: Option<Var> = None;
    for (trace, w) in traces.iter().zip(weights) {
        let part = trace.weighted_logp(tape, w)?;
        total = Some(match total {
            Some(t) => tape.add(t, part)?,
            None => part,
        });
    }
    Ok(total.expect("non-empty"))
}

pub fn pomo_loss(tape: &mut Tape, traces: &[DecodeTrace], returns: &[Vec<f64>]) -> Result<Var> {
    weighted_loss(tape, traces, &pomo_weights(returns))
}

pub fn topk_loss(tape: &mut Tape, traces: &[DecodeTrace], returns: &[Vec<f64>], k: usize, baseline: TopkBaseline) -> Result<Var> {
    weighted_loss(tape, traces, &topk_weights(returns, k, baseline)?)
}

pub fn joint_loss(
    tape: &mut Tape,
    traces: &[DecodeTrace],
    returns: &[Vec<f64>],
    beta: f64,
    k: usize,
    baseline: TopkBaseline,
) -> Result<Var> {
    weighted_loss(tape, traces, &joint_weights(returns, beta, k, baseline)?)
}
