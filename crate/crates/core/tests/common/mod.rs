//! Helpers shared by the integration tests.
#![allow(dead_code)]

use icam::instance::{generate_uniform, CapacityRule, Instance, Problem};
use icam::model::decoder::Choice;
use icam::model::{log_prob_of_solution, IcamModel, ModelConfig};
use icam::numeric::Tape;
use icam::rollout::{rollout_on_tape, starts_for, tour_length, RolloutMode};
use icam::train::{joint_loss, pomo_loss, topk_loss, TopkBaseline};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Six-city TSP or five-customer CVRP; the capacity leaves room for
/// multi-customer routes so sampled tours differ in length.
pub fn small_instance(problem: Problem, seed: u64) -> Instance {
    match problem {
        Problem::Tsp => generate_uniform(Problem::Tsp, 6, CapacityRule::ByScale, seed).unwrap(),
        Problem::Cvrp => generate_uniform(Problem::Cvrp, 5, CapacityRule::Fixed { capacity: 30 }, seed).unwrap(),
    }
}

fn replay_logp(model: &IcamModel, inst: &Instance, order: &[usize]) -> f64 {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let lp = log_prob_of_solution(&mut tape, model, &vars, inst, order).unwrap();
    tape.value(lp).item()
}

/// Oracle weights for one row of returns: shared-baseline, elite and joint,
/// written out directly from their definitions.
pub fn oracle_weights(row: &[f64], b: usize, k: usize, beta: f64) -> [Vec<f64>; 3] {
    let n = row.len();
    let mean = row.iter().sum::<f64>() / n as f64;
    let pomo: Vec<f64> = row.iter().map(|r| -(r - mean) / (b * n) as f64).collect();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &c| row[c].partial_cmp(&row[a]).unwrap().then(a.cmp(&c)));
    let mut top = vec![0.0; n];
    for &i in &idx[..k] {
        top[i] = -(row[i] - mean) / (b * k) as f64;
    }
    let joint = pomo.iter().zip(&top).map(|(p, t)| p + beta * t).collect();
    [pomo, top, joint]
}

/// Checks the analytic parameter gradients of the three losses on a batch
/// of two sampled instances against central differences of the replayed
/// log-probabilities. Returns the worst relative error.
/// Gradients smaller than this are compared in absolute terms.
pub const FLOOR: f64 = 1e-6;

pub fn loss_gradient_error(problem: Problem, seed: u64) -> f64 {
    let model = IcamModel::new(ModelConfig::tiny(problem), seed).unwrap();
    let insts = [small_instance(problem, 2 * seed), small_instance(problem, 2 * seed + 1)];
    let b = insts.len();
    let (k, beta) = (3, 0.1);

    // sample trajectories once; their orders stay fixed below
    let mut orders = Vec::new();
    let mut returns = Vec::new();
    {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        for (m, inst) in insts.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + m as u64);
            let starts = starts_for(inst, RolloutMode::GreedyMulti);
            let (trajs, _) = rollout_on_tape(&mut tape, &model, &vars, inst, &starts, Choice::Sample(&mut rng)).unwrap();
            orders.push(trajs.iter().map(|t| t.order.clone()).collect::<Vec<_>>());
            returns.push(trajs.iter().map(|t| t.ret()).collect::<Vec<_>>());
        }
    }

    let mut worst = 0.0f64;
    // equal returns would zero every weight and make the check vacuous
    for row in &returns {
        assert!(row.iter().any(|r| (r - row[0]).abs() > 1e-6), "degenerate returns {row:?}");
    }
    for which in 0..3 {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let mut traces = Vec::new();
        for (m, inst) in insts.iter().enumerate() {
            let starts = starts_for(inst, RolloutMode::GreedyMulti);
            let (_, trace) = rollout_on_tape(&mut tape, &model, &vars, inst, &starts, Choice::Forced(&orders[m])).unwrap();
            traces.push(trace);
        }
        let loss = match which {
            0 => pomo_loss(&mut tape, &traces, &returns).unwrap(),
            1 => topk_loss(&mut tape, &traces, &returns, k, TopkBaseline::Full).unwrap(),
            _ => joint_loss(&mut tape, &traces, &returns, beta, k, TopkBaseline::Full).unwrap(),
        };
        tape.backward(loss).unwrap();
        let mut store = model.params.clone();
        store.zero_grad();
        vars.collect_grads(&tape, &mut store).unwrap();

        let weights: Vec<Vec<f64>> = returns.iter().map(|r| oracle_weights(r, b, k, beta)[which].clone()).collect();
        let oracle_loss = |m: &IcamModel| -> f64 {
            let mut total = 0.0;
            for (mi, inst) in insts.iter().enumerate() {
                for (o, w) in orders[mi].iter().zip(&weights[mi]) {
                    if *w != 0.0 {
                        total += w * replay_logp(m, inst, o);
                    }
                }
            }
            total
        };
        assert!((tape.value(loss).item() - oracle_loss(&model)).abs() < 1e-12);

        // fourth-order stencil: truncation O(h⁴) sits well below rounding.
        // A ReLU unit whose pre-activation lies within 2h of zero puts a kink
        // inside the stencil; smaller steps keep it on one side.
        for (name, t) in model.params.iter() {
            let analytic = store.get(name).unwrap().grad.clone().unwrap_or_else(|| vec![0.0; t.numel()]);
            for idx in 0..t.numel() {
                let at = |dx: f64| {
                    let mut p = model.clone();
                    p.params.get_mut(name).unwrap().data_mut()[idx] += dx;
                    oracle_loss(&p)
                };
                let mut err = f64::INFINITY;
                for h in [1e-4, 1e-5, 1e-6] {
                    let fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
                    err = err.min((analytic[idx] - fd).abs() / analytic[idx].abs().max(fd.abs()).max(FLOOR));
                    if err <= 1e-5 {
                        break;
                    }
                }
                worst = worst.max(err);
            }
        }
    }
    worst
}

/// Parses a `.vrp` file, normalizes it, solves it with `model` and checks the
/// objective against a recomputation on the original coordinates. Returns
/// `(objective, relative error)`.
pub fn ingest_vrp(path: &std::path::Path, model: &IcamModel) -> (f64, f64) {
    use icam::instance::cvrplib::{parse_cvrplib, scale_cvrplib};
    use icam::rollout::{check_order, solve};

    let text = std::fs::read_to_string(path).unwrap();
    let raw = parse_cvrplib(&text).unwrap();
    let scaled = scale_cvrplib(&raw).unwrap();
    assert!(scaled.in_unit_square());
    let extent = (0..2)
        .map(|a| {
            let v = scaled.coords.iter().map(|c| c[a]);
            v.clone().fold(f64::MIN, f64::max) - v.fold(f64::MAX, f64::min)
        })
        .fold(0.0, f64::max);
    assert!((extent - 1.0).abs() < 1e-12);

    let sol = solve(model, &scaled, RolloutMode::GreedyMulti, None).unwrap();
    check_order(&raw, &sol.order).unwrap();
    let original: f64 = sol
        .order
        .windows(2)
        .map(|w| {
            let (p, q) = (raw.coords[w[0]], raw.coords[w[1]]);
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
        })
        .sum();
    (sol.length, (sol.length - original).abs() / original)
}

/// Direct double loop over the pooling formula, with no shifting.
pub fn aafm_oracle(q: &[f64], k: &[f64], v: &[f64], a: &[f64], nq: usize, nkv: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; nq * d];
    for i in 0..nq {
        for c in 0..d {
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 0..nkv {
                let w = (a[i * nkv + j] + k[j * d + c]).exp();
                num += w * v[j * d + c];
                den += w;
            }
            out[i * d + c] = 1.0 / (1.0 + (-q[i * d + c]).exp()) * num / den;
        }
    }
    out
}

/// Heap's algorithm over `items`, calling `f` on every permutation.
pub fn permutations(items: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k <= 1 {
        f(items);
        return;
    }
    for i in 0..k {
        permutations(items, k - 1, f);
        let j = if k % 2 == 0 { i } else { 0 };
        items.swap(j, k - 1);
    }
}

pub fn brute_tsp(inst: &Instance) -> f64 {
    let mut rest: Vec<usize> = (1..inst.len()).collect();
    let k = rest.len();
    let mut best = f64::INFINITY;
    permutations(&mut rest, k, &mut |p| {
        let mut order = vec![0];
        order.extend_from_slice(p);
        best = best.min(tour_length(inst, &order).unwrap());
    });
    best
}

/// Every customer permutation cut into consecutive routes at every subset of
/// the gaps.
pub fn brute_cvrp(inst: &Instance) -> f64 {
    let mut cust: Vec<usize> = (1..inst.len()).collect();
    let k = cust.len();
    let mut best = f64::INFINITY;
    permutations(&mut cust, k, &mut |p| {
        for cuts in 0..1u32 << (k - 1) {
            let mut total = 0.0;
            let mut load = 0;
            let mut prev = 0;
            let mut ok = true;
            for (i, &c) in p.iter().enumerate() {
                if i > 0 && cuts >> (i - 1) & 1 == 1 {
                    total += inst.dist(prev, 0);
                    prev = 0;
                    load = 0;
                }
                load += inst.demand(c);
                if load > inst.capacity() {
                    ok = false;
                    break;
                }
                total += inst.dist(prev, c);
                prev = c;
            }
            if ok {
                best = best.min(total + inst.dist(prev, 0));
            }
        }
    });
    best
}
