use crate::error::{Error, Result};
use crate::instance::{Instance, Problem};

/// Construction state of one trajectory.
///
/// TSP: starts with the start city visited. CVRP: starts at the depot with the
/// first customer already chosen; the depot cannot be chosen twice in a row,
/// a customer is feasible while unvisited and its demand fits the remaining
/// capacity, and returning to the depot refills the vehicle.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderContext {
    pub problem: Problem,
    /// Decisions taken so far, the forced start included.
    pub step: usize,
    pub first: usize,
    pub last: usize,
    pub remaining: u32,
    pub capacity: u32,
    pub visited: Vec<bool>,
    pub order: Vec<usize>,
    unserved: usize,
}

impl DecoderContext {
    /// Starts a trajectory at `start` (a city for TSP, a customer for CVRP).
    pub fn start(inst: &Instance, start: usize) -> Result<Self> {
        let n = inst.len();
        let mut visited = vec![false; n];
        match inst.problem {
            Problem::Tsp => {
                if start >= n {
                    return Err(Error::Argument(format!("start {start} out of range for {n} nodes")));
                }
                visited[start] = true;
                Ok(DecoderContext {
                    problem: Problem::Tsp,
                    step: 1,
                    first: start,
                    last: start,
                    remaining: 0,
                    capacity: 0,
                    visited,
                    order: vec![start],
                    unserved: n - 1,
                })
            }
            Problem::Cvrp => {
                if start == 0 || start >= n {
                    return Err(Error::Argument(format!("CVRP start must be a customer, got {start}")));
                }
                visited[start] = true;
                let cap = inst.capacity();
                Ok(DecoderContext {
                    problem: Problem::Cvrp,
                    step: 1,
                    first: start,
                    last: start,
                    remaining: cap - inst.demand(start),
                    capacity: cap,
                    visited,
                    order: vec![0, start],
                    unserved: n - 2,
                })
            }
        }
    }

    pub fn is_done(&self) -> bool {
        self.unserved == 0
    }

    pub fn is_feasible(&self, inst: &Instance, node: usize) -> bool {
        if self.is_done() || node >= self.visited.len() {
            return false;
        }
        match self.problem {
            Problem::Tsp => !self.visited[node],
            Problem::Cvrp if node == 0 => self.last != 0,
            Problem::Cvrp => !self.visited[node] && inst.demand(node) <= self.remaining,
        }
    }

    /// Writes the infeasibility mask (`true` = masked) into `out`.
    pub fn write_mask(&self, inst: &Instance, out: &mut [bool]) {
        for (i, m) in out.iter_mut().enumerate() {
            *m = !self.is_feasible(inst, i);
        }
    }

    pub fn apply(&mut self, inst: &Instance, node: usize) -> Result<()> {
        if !self.is_feasible(inst, node) {
            return Err(Error::Contract(format!(
                "node {node} is infeasible at step {} (last {}, remaining {})",
                self.step, self.last, self.remaining
            )));
        }
        if self.problem == Problem::Cvrp && node == 0 {
            self.remaining = self.capacity;
        } else {
            self.visited[node] = true;
            self.unserved -= 1;
            if self.problem == Problem::Cvrp {
                self.remaining -= inst.demand(node);
            }
        }
        self.order.push(node);
        self.last = node;
        self.step += 1;
        Ok(())
    }

    /// The finished order; CVRP orders are closed with a final depot visit.
    pub fn into_order(mut self) -> Vec<usize> {
        if self.problem == Problem::Cvrp && self.order.last() != Some(&0) {
            self.order.push(0);
        }
        self.order
    }
}
