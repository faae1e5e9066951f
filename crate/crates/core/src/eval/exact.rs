//! Exact solvers for small instances.

use crate::error::{Error, Result};
use crate::instance::{Instance, Problem};

/// Largest TSP solved by [`exact_tsp`].
pub const MAX_EXACT_TSP: usize = 15;
/// Largest customer count solved by [`exact_cvrp`].
pub const MAX_EXACT_CVRP: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct ExactSolution {
    pub length: f64,
    /// TSP: a permutation starting at 0. CVRP: `[0, route…, 0, route…, 0]`.
    pub order: Vec<usize>,
}

/// `dp[mask][j]`: shortest path from node `root` through every node of `mask`
/// (a subset of `nodes`), ending at `nodes[j]`. Returns the table and the
/// predecessor table for reconstruction.
fn held_karp_paths(inst: &Instance, root: usize, nodes: &[usize]) -> (Vec<f64>, Vec<u8>) {
    let m = nodes.len();
    let full = 1usize << m;
    let mut dp = vec![f64::INFINITY; full * m];
    let mut pred = vec![u8::MAX; full * m];
    for j in 0..m {
        dp[(1 << j) * m + j] = inst.dist(root, nodes[j]);
    }
    for mask in 1..full {
        for j in 0..m {
            if mask & (1 << j) == 0 {
                continue;
            }
            let cur = dp[mask * m + j];
            if !cur.is_finite() {
                continue;
            }
            for k in 0..m {
                if mask & (1 << k) != 0 {
                    continue;
                }
                let next = mask | (1 << k);
                let cand = cur + inst.dist(nodes[j], nodes[k]);
                if cand < dp[next * m + k] {
                    dp[next * m + k] = cand;
                    pred[next * m + k] = j as u8;
                }
            }
        }
    }
    (dp, pred)
}

fn unwind(pred: &[u8], m: usize, mut mask: usize, mut j: usize, nodes: &[usize]) -> Vec<usize> {
    let mut path = Vec::new();
    loop {
        path.push(nodes[j]);
        let p = pred[mask * m + j];
        mask &= !(1 << j);
        if p == u8::MAX {
            break;
        }
        j = p as usize;
    }
    path.reverse();
    path
}

/// Optimal closed tour by Held–Karp dynamic programming, `O(2^N·N²)`.
pub fn exact_tsp(inst: &Instance) -> Result<ExactSolution> {
    if inst.problem != Problem::Tsp {
        return Err(Error::Argument("exact_tsp needs a TSP instance".into()));
    }
    let n = inst.len();
    if n > MAX_EXACT_TSP {
        return Err(Error::Size(format!(
            "exact TSP is limited to {MAX_EXACT_TSP} nodes, got {n}; use the nn2opt heuristic instead"
        )));
    }
    if n <= 3 {
        let order: Vec<usize> = (0..n).collect();
        let length = closed_length(inst, &order);
        return Ok(ExactSolution { length, order });
    }
    let nodes: Vec<usize> = (1..n).collect();
    let m = nodes.len();
    let (dp, pred) = held_karp_paths(inst, 0, &nodes);
    let full = (1 << m) - 1;
    let mut best = (f64::INFINITY, 0);
    for j in 0..m {
        let c = dp[full * m + j] + inst.dist(nodes[j], 0);
        if c < best.0 {
            best = (c, j);
        }
    }
    let mut order = vec![0];
    order.extend(unwind(&pred, m, full, best.1, &nodes));
    Ok(ExactSolution { length: best.0, order })
}

fn closed_length(inst: &Instance, order: &[usize]) -> f64 {
    (0..order.len())
        .map(|i| inst.dist(order[i], order[(i + 1) % order.len()]))
        .sum()
}

/// Optimal CVRP solution: the cheapest route for every capacity-feasible
/// customer subset (Held–Karp from the depot), then the cheapest partition
/// of all customers into such subsets.
pub fn exact_cvrp(inst: &Instance) -> Result<ExactSolution> {
    if inst.problem != Problem::Cvrp {
        return Err(Error::Argument("exact_cvrp needs a CVRP instance".into()));
    }
    let m = inst.customers();
    if m > MAX_EXACT_CVRP {
        return Err(Error::Size(format!(
            "exact CVRP is limited to {MAX_EXACT_CVRP} customers, got {m}"
        )));
    }
    let nodes: Vec<usize> = (1..=m).collect();
    let full = (1usize << m) - 1;
    let (dp, pred) = held_karp_paths(inst, 0, &nodes);
    let cap = inst.capacity();
    // route[mask] = (cost, last customer index)
    let mut route = vec![(f64::INFINITY, 0usize); full + 1];
    for mask in 1..=full {
        let load: u32 = (0..m).filter(|j| mask & (1 << j) != 0).map(|j| inst.demand(nodes[j])).sum();
        if load > cap {
            continue;
        }
        for j in 0..m {
            if mask & (1 << j) != 0 {
                let c = dp[mask * m + j] + inst.dist(nodes[j], 0);
                if c < route[mask].0 {
                    route[mask] = (c, j);
                }
            }
        }
    }
    // best[mask]: cheapest cover of mask; the route holding its lowest
    // customer is enumerated over the submasks containing that bit.
    let mut best = vec![f64::INFINITY; full + 1];
    let mut choice = vec![0usize; full + 1];
    best[0] = 0.0;
    for mask in 1..=full {
        let low = mask & mask.wrapping_neg();
        let rest = mask ^ low;
        let mut sub = rest;
        loop {
            let r = sub | low;
            let c = route[r].0 + best[mask ^ r];
            if c < best[mask] {
                best[mask] = c;
                choice[mask] = r;
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
    }
    let mut order = vec![0];
    let mut mask = full;
    while mask != 0 {
        let r = choice[mask];
        order.extend(unwind(&pred, m, r, route[r].1, &nodes));
        order.push(0);
        mask ^= r;
    }
    Ok(ExactSolution {
        length: best[full],
        order,
    })
}
