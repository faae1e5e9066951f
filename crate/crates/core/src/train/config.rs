use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{CapacityRule, Problem};
use crate::model::ModelConfig;

/// How the scale (cities, or CVRP customers) of each batch is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScaleRule {
    Fixed { n: usize },
    /// Discrete uniform over `[lo, hi]`, drawn once per batch.
    Uniform { lo: usize, hi: usize },
}

impl ScaleRule {
    pub fn sample(self, rng: &mut impl Rng) -> usize {
        match self {
            ScaleRule::Fixed { n } => n,
            ScaleRule::Uniform { lo, hi } => rng.gen_range(lo..=hi),
        }
    }

    pub fn bounds(self) -> (usize, usize) {
        match self {
            ScaleRule::Fixed { n } => (n, n),
            ScaleRule::Uniform { lo, hi } => (lo, hi),
        }
    }
}

/// Batch size as a function of the batch scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BatchRule {
    Fixed { size: usize },
    /// `floor(base · (reference / N)²)`.
    Scaled { base: usize, reference: usize },
}

impl BatchRule {
    pub fn size(self, n: usize) -> usize {
        match self {
            BatchRule::Fixed { size } => size,
            BatchRule::Scaled { base, reference } => {
                let r = reference as f64 / n as f64;
                (base as f64 * r * r).floor() as usize
            }
        }
    }
}

/// `bs(N) = floor(base · (100/N)²)`.
pub fn batch_size(base: usize, n: usize) -> usize {
    BatchRule::Scaled { base, reference: 100 }.size(n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Pomo,
    Joint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub epochs: usize,
    pub scale: ScaleRule,
    /// CVRP only; a uniform rule is drawn once per batch.
    #[serde(default = "default_capacity")]
    pub capacity: CapacityRule,
    pub batch: BatchRule,
    pub lr: f64,
    pub loss: LossKind,
}

fn default_capacity() -> CapacityRule {
    CapacityRule::Fixed { capacity: 50 }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Which baseline the top-k term subtracts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopkBaseline {
    /// The mean over all N trajectories, shared with the POMO term.
    #[default]
    Full,
    /// The mean over the selected k trajectories.
    Subset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub seed: u64,
    pub batches_per_epoch: usize,
    /// Weight of the top-k term in the joint loss.
    pub beta: f64,
    /// Elite trajectories per instance; capped at the trajectory count.
    pub k: usize,
    #[serde(default)]
    pub topk_baseline: TopkBaseline,
    /// Global gradient-norm bound, if any.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Extra checkpoint every this many epochs (0: stage boundaries only).
    #[serde(default)]
    pub checkpoint_every: usize,
    pub model: ModelConfig,
    pub stages: Vec<StagePlan>,
}

impl TrainingConfig {
    /// Full three-stage schedule: 100 / 2,200 (TSP) or 700 (CVRP) / 200 epochs
    /// of 1,000 batches on scales 100 then [100, 500].
    pub fn paper(problem: Problem) -> Self {
        let (bs1, base, stage2, clip) = match problem {
            Problem::Tsp => (256, 160, 2200, None),
            Problem::Cvrp => (128, 128, 700, Some(5.0)),
        };
        let varying = ScaleRule::Uniform { lo: 100, hi: 500 };
        let cap2 = CapacityRule::Uniform { lo: 50, hi: 100 };
        let scaled = BatchRule::Scaled { base, reference: 100 };
        TrainingConfig {
            seed: 0,
            batches_per_epoch: 1000,
            beta: 0.1,
            k: 20,
            topk_baseline: TopkBaseline::Full,
            grad_clip: clip,
            adam: AdamConfig::default(),
            checkpoint_every: 0,
            model: ModelConfig::paper(problem),
            stages: vec![
                StagePlan {
                    epochs: 100,
                    scale: ScaleRule::Fixed { n: 100 },
                    capacity: CapacityRule::Fixed { capacity: 50 },
                    batch: BatchRule::Fixed { size: bs1 },
                    lr: 1e-4,
                    loss: LossKind::Pomo,
                },
                StagePlan {
                    epochs: stage2,
                    scale: varying,
                    capacity: cap2,
                    batch: scaled,
                    lr: 1e-4,
                    loss: LossKind::Pomo,
                },
                StagePlan {
                    epochs: 200,
                    scale: varying,
                    capacity: cap2,
                    batch: scaled,
                    lr: 1e-5,
                    loss: LossKind::Joint,
                },
            ],
        }
    }

    /// CPU-sized schedule: 20 epochs at N = 10, 60 on [10, 50], 20 joint-loss
    /// epochs, with the small model and batch sizes scaled to reference 10.
    pub fn desk(problem: Problem) -> Self {
        let mut cfg = Self::paper(problem);
        let varying = ScaleRule::Uniform { lo: 10, hi: 50 };
        let cap2 = CapacityRule::Uniform { lo: 20, hi: 40 };
        let scaled = BatchRule::Scaled { base: 32, reference: 10 };
        cfg.model = ModelConfig::desk(problem);
        cfg.batches_per_epoch = 10;
        cfg.stages = vec![
            StagePlan {
                epochs: 20,
                scale: ScaleRule::Fixed { n: 10 },
                capacity: CapacityRule::Fixed { capacity: 20 },
                batch: BatchRule::Fixed { size: 32 },
                lr: 1e-3,
                loss: LossKind::Pomo,
            },
            StagePlan {
                epochs: 60,
                scale: varying,
                capacity: cap2,
                batch: scaled,
                lr: 1e-3,
                loss: LossKind::Pomo,
            },
            StagePlan {
                epochs: 20,
                scale: varying,
                capacity: cap2,
                batch: scaled,
                lr: 1e-4,
                loss: LossKind::Joint,
            },
        ];
        cfg
    }

    pub fn preset(name: &str, problem: Problem) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper(problem)),
            "desk" => Ok(Self::desk(problem)),
            other => Err(Error::Config(format!("unknown preset {other:?} (paper, desk)"))),
        }
    }

    pub fn problem(&self) -> Problem {
        self.model.problem
    }

    pub fn total_epochs(&self) -> usize {
        self.stages.iter().map(|s| s.epochs).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.batches_per_epoch == 0 {
            return bad("batches_per_epoch must be positive".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        let a = self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("Adam needs beta1, beta2 in [0, 1) and eps > 0".into());
        }
        if self.stages.is_empty() {
            return bad("no stages".into());
        }
        let min_scale = match self.problem() {
            Problem::Tsp => 2,
            Problem::Cvrp => 1,
        };
        for (i, s) in self.stages.iter().enumerate() {
            let (lo, hi) = s.scale.bounds();
            if lo > hi {
                return bad(format!("stage {}: scale bounds out of order", i + 1));
            }
            if lo < min_scale {
                return bad(format!("stage {}: scale {lo} is too small", i + 1));
            }
            if !(s.lr > 0.0) {
                return bad(format!("stage {}: learning rate must be positive", i + 1));
            }
            // the rule is monotone in N, so the largest scale gives the smallest batch
            if s.batch.size(hi) == 0 || s.batch.size(lo) == 0 {
                return bad(format!("stage {}: batch size is 0 at scale {hi}", i + 1));
            }
            if let CapacityRule::Uniform { lo, hi } = s.capacity {
                if lo == 0 || lo > hi {
                    return bad(format!("stage {}: bad capacity range", i + 1));
                }
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainingConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_toml(&text)
    }
}
