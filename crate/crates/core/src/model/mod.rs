//! The ICAM policy network.
//!
//! Parameter names are part of the checkpoint format and stay stable:
//!
//! | name | shape |
//! |------|-------|
//! | `embed.node.weight`, `embed.node.bias` | `in×d`, `d` (`in` = 2 TSP, 3 CVRP) |
//! | `embed.depot.weight`, `embed.depot.bias` | `2×d`, `d` (CVRP only) |
//! | `encoder.layers.{l}.aafm.{wq,wk,wv}` | `d×d` |
//! | `encoder.layers.{l}.norm{1,2}.{scale,shift}` | `d` |
//! | `encoder.layers.{l}.ff.{w1,b1,w2,b2}` | `d×f`, `f`, `f×d`, `d` |
//! | `decoder.query.weight`, `decoder.query.bias` | `2d×d` (TSP) or `(d+1)×d` (CVRP), `d` |
//! | `decoder.aafm.{wk,wv}` | `d×d` |
//! | `decoder.combine.weight`, `decoder.combine.bias` | `d×d`, `d` |
//! | `alpha` (shared) or `encoder.layers.{l}.alpha`, `decoder.aafm.alpha`, `decoder.compat.alpha` | `1` |

pub mod bias;
pub mod context;
pub mod decoder;
pub mod encoder;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Problem;
use crate::numeric::{ParameterStore, Tape, Tensor, Var};

pub use bias::{adaptation_bias, AdaptationBias};
pub use context::DecoderContext;
pub use decoder::{log_prob_of_solution, Choice, DecodeTrace, Decoded};
pub use encoder::EncoderOutput;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaSharing {
    /// One α for every site.
    Shared,
    /// One α per encoder layer, one for the decoder AAFM, one for compatibility.
    PerSite,
}

/// Where an adaptation bias enters the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BiasSite {
    Encoder(usize),
    DecoderAafm,
    Compatibility,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub problem: Problem,
    pub embed_dim: usize,
    pub ff_dim: usize,
    pub encoder_layers: usize,
    pub clip: f64,
    pub alpha_init: f64,
    pub alpha_sharing: AlphaSharing,
    #[serde(default = "yes")]
    pub alpha_trainable: bool,
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    /// Full-size settings: d = 128, FF = 512, 12 layers, ξ = 50, α₀ = 1.
    pub fn paper(problem: Problem) -> Self {
        ModelConfig {
            problem,
            embed_dim: 128,
            ff_dim: 512,
            encoder_layers: 12,
            clip: 50.0,
            alpha_init: 1.0,
            alpha_sharing: AlphaSharing::PerSite,
            alpha_trainable: true,
        }
    }

    /// CPU-scale settings used by the desk preset.
    pub fn desk(problem: Problem) -> Self {
        ModelConfig {
            embed_dim: 64,
            ff_dim: 128,
            encoder_layers: 3,
            ..Self::paper(problem)
        }
    }

    /// Smallest useful network, for gradient checks.
    pub fn tiny(problem: Problem) -> Self {
        ModelConfig {
            embed_dim: 8,
            ff_dim: 16,
            encoder_layers: 2,
            ..Self::paper(problem)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.ff_dim == 0 || self.encoder_layers == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Config("clip must be positive".into()));
        }
        if !self.alpha_init.is_finite() {
            return Err(Error::Config("alpha_init must be finite".into()));
        }
        Ok(())
    }

    pub fn alpha_name(&self, site: BiasSite) -> String {
        match (self.alpha_sharing, site) {
            (AlphaSharing::Shared, _) => "alpha".into(),
            (AlphaSharing::PerSite, BiasSite::Encoder(l)) => format!("encoder.layers.{l}.alpha"),
            (AlphaSharing::PerSite, BiasSite::DecoderAafm) => "decoder.aafm.alpha".into(),
            (AlphaSharing::PerSite, BiasSite::Compatibility) => "decoder.compat.alpha".into(),
        }
    }

    pub fn alpha_names(&self) -> Vec<String> {
        match self.alpha_sharing {
            AlphaSharing::Shared => vec!["alpha".into()],
            AlphaSharing::PerSite => (0..self.encoder_layers)
                .map(BiasSite::Encoder)
                .chain([BiasSite::DecoderAafm, BiasSite::Compatibility])
                .map(|s| self.alpha_name(s))
                .collect(),
        }
    }

    fn node_features(&self) -> usize {
        match self.problem {
            Problem::Tsp => 2,
            Problem::Cvrp => 3,
        }
    }

    fn query_inputs(&self) -> usize {
        match self.problem {
            Problem::Tsp => 2 * self.embed_dim,
            Problem::Cvrp => self.embed_dim + 1,
        }
    }

    /// Every parameter name with its shape and initializer fan-in
    /// (`None` for constants: norm scale 1, shift 0, α).
    fn layout(&self) -> Vec<(String, Vec<usize>, Init)> {
        let d = self.embed_dim;
        let f = self.ff_dim;
        let mut v = vec![
            ("embed.node.weight".into(), vec![self.node_features(), d], Init::Uniform(self.node_features())),
            ("embed.node.bias".into(), vec![d], Init::Uniform(self.node_features())),
        ];
        if self.problem == Problem::Cvrp {
            v.push(("embed.depot.weight".into(), vec![2, d], Init::Uniform(2)));
            v.push(("embed.depot.bias".into(), vec![d], Init::Uniform(2)));
        }
        for l in 0..self.encoder_layers {
            let p = format!("encoder.layers.{l}");
            for w in ["wq", "wk", "wv"] {
                v.push((format!("{p}.aafm.{w}"), vec![d, d], Init::Uniform(d)));
            }
            for n in ["norm1", "norm2"] {
                v.push((format!("{p}.{n}.scale"), vec![d], Init::Const(1.0)));
                v.push((format!("{p}.{n}.shift"), vec![d], Init::Const(0.0)));
            }
            v.push((format!("{p}.ff.w1"), vec![d, f], Init::Uniform(d)));
            v.push((format!("{p}.ff.b1"), vec![f], Init::Uniform(d)));
            v.push((format!("{p}.ff.w2"), vec![f, d], Init::Uniform(f)));
            v.push((format!("{p}.ff.b2"), vec![d], Init::Uniform(f)));
        }
        let qi = self.query_inputs();
        v.push(("decoder.query.weight".into(), vec![qi, d], Init::Uniform(qi)));
        v.push(("decoder.query.bias".into(), vec![d], Init::Uniform(qi)));
        v.push(("decoder.aafm.wk".into(), vec![d, d], Init::Uniform(d)));
        v.push(("decoder.aafm.wv".into(), vec![d, d], Init::Uniform(d)));
        v.push(("decoder.combine.weight".into(), vec![d, d], Init::Uniform(d)));
        v.push(("decoder.combine.bias".into(), vec![d], Init::Uniform(d)));
        for name in self.alpha_names() {
            v.push((name, vec![1], Init::Const(self.alpha_init)));
        }
        v
    }

    /// Recovers the architecture from checkpoint parameter names and shapes.
    /// `clip` and `alpha_init` are not stored and take their defaults.
    pub fn infer(params: &ParameterStore) -> Result<Self> {
        let d = params.require("embed.node.bias")?.numel();
        let problem = if params.contains("embed.depot.weight") {
            Problem::Cvrp
        } else {
            Problem::Tsp
        };
        let layers = (0..)
            .take_while(|l| params.contains(&format!("encoder.layers.{l}.aafm.wq")))
            .count();
        if layers == 0 {
            return Err(Error::Checkpoint("no encoder layers found".into()));
        }
        let ff = params.require("encoder.layers.0.ff.b1")?.numel();
        let sharing = if params.contains("alpha") {
            AlphaSharing::Shared
        } else {
            AlphaSharing::PerSite
        };
        let cfg = ModelConfig {
            problem,
            embed_dim: d,
            ff_dim: ff,
            encoder_layers: layers,
            alpha_sharing: sharing,
            ..ModelConfig::paper(problem)
        };
        cfg.check_params(params)?;
        Ok(cfg)
    }

    /// Every expected parameter exists with the right shape, and nothing else.
    pub fn check_params(&self, params: &ParameterStore) -> Result<()> {
        let layout = self.layout();
        for (name, shape, _) in &layout {
            let t = params.require(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Contract(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        if params.len() != layout.len() {
            let known: std::collections::HashSet<&str> = layout.iter().map(|(n, _, _)| n.as_str()).collect();
            let extra: Vec<&str> = params.names().filter(|n| !known.contains(n)).collect();
            return Err(Error::Contract(format!("unexpected parameters {extra:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Init {
    Uniform(usize),
    Const(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcamModel {
    pub config: ModelConfig,
    pub params: ParameterStore,
}

impl IcamModel {
    /// Fresh parameters: weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterStore::new();
        for (name, shape, init) in config.layout() {
            let t = match init {
                Init::Uniform(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    Tensor::from_fn(&shape, |_| rng.gen_range(-bound..bound))
                }
                Init::Const(c) => Tensor::from_fn(&shape, |_| c),
            };
            params.insert(name, t)?;
        }
        Ok(IcamModel { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ParameterStore) -> Result<Self> {
        config.validate()?;
        if config.problem != ModelConfig::infer(&params)?.problem {
            return Err(Error::Contract("checkpoint problem does not match config".into()));
        }
        config.check_params(&params)?;
        Ok(IcamModel { config, params })
    }

    pub fn alpha_values(&self) -> Vec<(String, f64)> {
        self.config
            .alpha_names()
            .into_iter()
            .map(|n| {
                let v = self.params.get(&n).map_or(f64::NAN, Tensor::item);
                (n, v)
            })
            .collect()
    }

    /// Places every parameter on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| (name.clone(), tape.leaf(t.clone())))
            .collect();
        ModelVars { vars }
    }
}

/// Parameter handles on one tape.
pub struct ModelVars {
    vars: HashMap<String, Var>,
}

impl ModelVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter {name} not bound")))
    }

    /// Copies tape gradients of all parameters into `store`'s grad slots.
    pub fn collect_grads(&self, tape: &Tape, store: &mut ParameterStore) -> Result<()> {
        for (name, &v) in &self.vars {
            if let Some(g) = tape.grad(v) {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_round_trips_through_inference() {
        for problem in [Problem::Tsp, Problem::Cvrp] {
            for sharing in [AlphaSharing::Shared, AlphaSharing::PerSite] {
                let cfg = ModelConfig {
                    alpha_sharing: sharing,
                    ..ModelConfig::tiny(problem)
                };
                let m = IcamModel::new(cfg.clone(), 3).unwrap();
                assert_eq!(ModelConfig::infer(&m.params).unwrap(), cfg);
            }
        }
    }

    #[test]
    fn alpha_starts_at_one() {
        let m = IcamModel::new(ModelConfig::tiny(Problem::Tsp), 0).unwrap();
        assert_eq!(m.alpha_values().len(), 4);
        assert!(m.alpha_values().iter().all(|(_, v)| *v == 1.0));
    }

    #[test]
    fn paper_defaults() {
        let c = ModelConfig::paper(Problem::Tsp);
        assert_eq!((c.embed_dim, c.ff_dim, c.encoder_layers), (128, 512, 12));
        assert_eq!(c.clip, 50.0);
        assert_eq!(c.alpha_init, 1.0);
    }
}
