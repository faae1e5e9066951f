//! Three-stage REINFORCE training with a shared multi-start baseline.
//!
//! Each batch draws a scale (and CVRP capacity), generates `bs(N)` fresh
//! instances, samples one trajectory per start node on every instance and
//! takes one Adam step on the stage loss. Instances are independent shards,
//! each on its own tape; their gradients are summed in instance order so a
//! run is reproducible regardless of thread count.

pub mod config;
pub mod loss;
pub mod optim;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::{derive_seed, generate_uniform, CapacityRule, Instance, Problem};
use crate::model::{Choice, IcamModel};
use crate::numeric::checkpoint::{self, DType};
use crate::numeric::Tape;
use crate::rollout::{rollout_on_tape, starts_for, RolloutMode};

pub use config::{batch_size, AdamConfig, BatchRule, LossKind, ScaleRule, StagePlan, TopkBaseline, TrainingConfig};
pub use loss::{advantage, joint_loss, pomo_loss, top_k, topk_loss};
pub use optim::{clip_grad_norm, Adam};

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    /// 1-based, counted across stages.
    pub epoch: usize,
    pub stage: usize,
    /// Mean length over every sampled trajectory of the epoch.
    pub mean_length: f64,
    pub loss: f64,
    pub alphas: Vec<(String, f64)>,
    /// Wall time of the epoch.
    pub seconds: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,stage,mean_length,loss,alpha,seconds";

    /// CSV row; several α values are joined with `;`.
    pub fn csv_row(&self) -> String {
        let alpha: Vec<String> = self.alphas.iter().map(|(_, v)| format!("{v:.6}")).collect();
        format!(
            "{},{},{:.6},{:.6e},{},{:.3}",
            self.epoch,
            self.stage,
            self.mean_length,
            self.loss,
            alpha.join(";"),
            self.seconds
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub scale: usize,
    pub size: usize,
    pub loss: f64,
    pub mean_length: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

struct Shard {
    grads: Vec<Vec<f64>>,
    loss: f64,
    length_sum: f64,
    trajectories: usize,
}

/// Samples multi-start trajectories on `inst` and returns the gradient of
/// its share of the batch loss, in parameter-store order.
fn run_shard(
    model: &IcamModel,
    inst: &Instance,
    plan: &StagePlan,
    cfg: &TrainingConfig,
    batch: usize,
    sample_seed: u64,
) -> Result<Shard> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let starts = starts_for(inst, RolloutMode::GreedyMulti);
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let (trajs, trace) = rollout_on_tape(&mut tape, model, &vars, inst, &starts, Choice::Sample(&mut rng))?;
    let returns: Vec<f64> = trajs.iter().map(|t| t.ret()).collect();
    let weights = match plan.loss {
        LossKind::Pomo => loss::pomo_row(&returns, batch),
        LossKind::Joint => {
            let k = cfg.k.min(returns.len());
            loss::joint_row(&returns, cfg.beta, k, cfg.topk_baseline, batch)?
        }
    };
    let l = trace.weighted_logp(&mut tape, &weights)?;
    let loss = tape.value(l).item();
    tape.backward(l)?;
    let grads = model
        .params
        .iter()
        .map(|(name, t)| {
            let v = vars.get(name)?;
            Ok(tape.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Shard {
        grads,
        loss,
        length_sum: trajs.iter().map(|t| t.length).sum(),
        trajectories: trajs.len(),
    })
}

/// Instances of one batch: the scale, capacity and instance seeds all derive
/// from `batch_seed`.
pub fn batch_instances(problem: Problem, plan: &StagePlan, batch_seed: u64) -> Result<Vec<Instance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(batch_seed);
    let n = plan.scale.sample(&mut rng);
    let capacity = match plan.capacity {
        CapacityRule::Uniform { lo, hi } => CapacityRule::Fixed {
            capacity: rng.gen_range(lo..=hi),
        },
        rule => rule,
    };
    let size = plan.batch.size(n);
    if size == 0 {
        return Err(Error::Config(format!("batch size is 0 at scale {n}")));
    }
    let base: u64 = rng.gen();
    (0..size as u64)
        .map(|i| generate_uniform(problem, n, capacity, derive_seed(base, i)))
        .collect()
}

fn frozen_names(model: &IcamModel) -> Vec<String> {
    if model.config.alpha_trainable {
        Vec::new()
    } else {
        model.config.alpha_names()
    }
}

/// One optimizer step on a freshly generated batch.
pub fn train_batch(
    model: &mut IcamModel,
    adam: &mut Adam,
    cfg: &TrainingConfig,
    plan: &StagePlan,
    batch_seed: u64,
) -> Result<BatchStats> {
    let instances = batch_instances(model.config.problem, plan, batch_seed)?;
    let b = instances.len();
    let shards = {
        let m: &IcamModel = model;
        instances
            .par_iter()
            .enumerate()
            .map(|(i, inst)| run_shard(m, inst, plan, cfg, b, derive_seed(!batch_seed, i as u64)))
            .collect::<Vec<_>>()
    };
    let shards = shards.into_iter().collect::<Result<Vec<_>>>()?;

    let mut loss = 0.0;
    let mut length_sum = 0.0;
    let mut count = 0;
    let mut total: Vec<Vec<f64>> = model.params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
    for s in &shards {
        loss += s.loss;
        length_sum += s.length_sum;
        count += s.trajectories;
        for (acc, g) in total.iter_mut().zip(&s.grads) {
            acc.iter_mut().zip(g).for_each(|(a, x)| *a += x);
        }
    }
    model.params.zero_grad();
    let names: Vec<String> = model.params.names().map(String::from).collect();
    for (name, g) in names.iter().zip(&total) {
        model.params.accumulate_grad(name, g)?;
    }
    let grad_norm = model.params.grad_norm();
    if !loss.is_finite() || !grad_norm.is_finite() {
        return Err(Error::Numeric(diagnostic(model, batch_seed, loss)));
    }
    if let Some(max) = cfg.grad_clip {
        clip_grad_norm(&mut model.params, max);
    }
    let frozen = frozen_names(model);
    adam.step(&mut model.params, plan.lr, &frozen)?;
    model.params.zero_grad();
    Ok(BatchStats {
        scale: match model.config.problem {
            Problem::Tsp => instances[0].len(),
            Problem::Cvrp => instances[0].customers(),
        },
        size: b,
        loss,
        mean_length: length_sum / count as f64,
        grad_norm,
    })
}

/// Batch seed, loss, α values and the largest per-parameter gradient norms.
fn diagnostic(model: &IcamModel, batch_seed: u64, loss: f64) -> String {
    let alphas: Vec<String> = model.alpha_values().iter().map(|(n, v)| format!("{n}={v}")).collect();
    let mut norms: Vec<(f64, &str)> = model
        .params
        .iter()
        .filter_map(|(n, t)| t.grad.as_ref().map(|g| (g.iter().map(|x| x * x).sum::<f64>().sqrt(), n.as_str())))
        .collect();
    norms.sort_by(|a, b| b.0.total_cmp(&a.0));
    let top: Vec<String> = norms.iter().take(5).map(|(v, n)| format!("{n}={v:.3e}")).collect();
    format!(
        "non-finite training step: batch seed {batch_seed:#018x}, loss {loss}, alpha [{}], grad norms [{}]",
        alphas.join(", "),
        top.join(", ")
    )
}

#[derive(Debug, Default)]
pub struct TrainOutcome {
    pub history: Vec<EpochMetrics>,
    pub checkpoints: Vec<PathBuf>,
}

/// Runs every stage of `cfg` on `model`. With `out`, writes `config.toml`,
/// `metrics.csv`, a checkpoint per stage (`stageS.ckpt`), every
/// `checkpoint_every` epochs (`epochE.ckpt`) and `final.ckpt`.
pub fn train(
    cfg: &TrainingConfig,
    model: &mut IcamModel,
    out: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model.config.problem != cfg.problem() {
        return Err(Error::Contract("model and training config disagree on the problem".into()));
    }
    let mut metrics = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
            let cpath = dir.join("config.toml");
            fs::write(&cpath, cfg.to_toml()?).map_err(|e| Error::file(&cpath, e))?;
            let mpath = dir.join("metrics.csv");
            let mut f = fs::File::create(&mpath).map_err(|e| Error::file(&mpath, e))?;
            writeln!(f, "{}", EpochMetrics::CSV_HEADER)?;
            Some(f)
        }
        None => None,
    };
    let mut outcome = TrainOutcome::default();
    let save = |model: &IcamModel, name: String, outcome: &mut TrainOutcome| -> Result<()> {
        if let Some(dir) = out {
            let p = dir.join(name);
            checkpoint::save(&model.params, &p, DType::F64)?;
            outcome.checkpoints.push(p);
        }
        Ok(())
    };

    let mut adam = Adam::new(cfg.adam);
    let mut epoch = 0;
    let mut batch_index = 0u64;
    for (si, plan) in cfg.stages.iter().enumerate() {
        for _ in 0..plan.epochs {
            epoch += 1;
            let t0 = Instant::now();
            let mut loss = 0.0;
            let mut length = 0.0;
            for _ in 0..cfg.batches_per_epoch {
                let seed = derive_seed(cfg.seed, batch_index);
                batch_index += 1;
                let stats = match train_batch(model, &mut adam, cfg, plan, seed) {
                    Ok(s) => s,
                    Err(Error::Numeric(msg)) => {
                        if let Some(dir) = out {
                            let _ = fs::write(dir.join("nan-dump.txt"), format!("epoch {epoch}\n{msg}\n"));
                        }
                        return Err(Error::Numeric(format!("epoch {epoch}: {msg}")));
                    }
                    Err(e) => return Err(e),
                };
                loss += stats.loss;
                length += stats.mean_length;
            }
            let nb = cfg.batches_per_epoch as f64;
            let m = EpochMetrics {
                epoch,
                stage: si + 1,
                mean_length: length / nb,
                loss: loss / nb,
                alphas: model.alpha_values(),
                seconds: t0.elapsed().as_secs_f64(),
            };
            if let Some(f) = metrics.as_mut() {
                writeln!(f, "{}", m.csv_row())?;
                f.flush()?;
            }
            on_epoch(&m);
            outcome.history.push(m);
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                save(model, format!("epoch{epoch}.ckpt"), &mut outcome)?;
            }
        }
        save(model, format!("stage{}.ckpt", si + 1), &mut outcome)?;
    }
    save(model, "final.ckpt".into(), &mut outcome)?;
    Ok(outcome)
}
