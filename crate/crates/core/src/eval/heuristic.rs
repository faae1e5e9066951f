use crate::error::{Error, Result};
use crate::instance::{Instance, Problem};

/// Improvements smaller than this are ignored so 2-opt terminates.
const MIN_GAIN: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct HeuristicSolution {
    pub length: f64,
    pub order: Vec<usize>,
    /// Accepted 2-opt moves.
    pub moves: usize,
}

/// Greedy nearest-neighbour tour from node 0; ties go to the lower index.
pub fn nearest_neighbor(inst: &Instance) -> Vec<usize> {
    let n = inst.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut cur = 0;
    visited[0] = true;
    order.push(0);
    for _ in 1..n {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for j in 0..n {
            if !visited[j] {
                let d = inst.dist(cur, j);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
        }
        visited[best] = true;
        order.push(best);
        cur = best;
    }
    order
}

/// First-improvement 2-opt to a local optimum. Calls `on_move` with the tour
/// length after every accepted move.
pub fn two_opt(inst: &Instance, order: &mut [usize], mut on_move: impl FnMut(f64)) -> usize {
    let n = order.len();
    let mut moves = 0;
    if n < 4 {
        return 0;
    }
    let mut length = tour(inst, order);
    let mut improved = true;
    while improved {
        improved = false;
        for i in 0..n - 1 {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue; // the two edges share node order[0]
                }
                let (a, b) = (order[i], order[i + 1]);
                let (c, d) = (order[j], order[(j + 1) % n]);
                let delta = inst.dist(a, c) + inst.dist(b, d) - inst.dist(a, b) - inst.dist(c, d);
                if delta < -MIN_GAIN {
                    order[i + 1..=j].reverse();
                    length += delta;
                    moves += 1;
                    on_move(length);
                    improved = true;
                }
            }
        }
    }
    moves
}

fn tour(inst: &Instance, order: &[usize]) -> f64 {
    (0..order.len())
        .map(|i| inst.dist(order[i], order[(i + 1) % order.len()]))
        .sum()
}

/// Nearest neighbour from node 0 followed by 2-opt; deterministic.
pub fn nn_two_opt(inst: &Instance) -> Result<HeuristicSolution> {
    if inst.problem != Problem::Tsp {
        return Err(Error::Argument("the nn2opt baseline supports TSP only".into()));
    }
    let mut order = nearest_neighbor(inst);
    let moves = two_opt(inst, &mut order, |_| {});
    Ok(HeuristicSolution {
        length: tour(inst, &order),
        order,
        moves,
    })
}
