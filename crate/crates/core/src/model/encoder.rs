use crate::error::Result;
use crate::instance::{Instance, Problem};
use crate::model::bias::bias_base;
use crate::model::{BiasSite, ModelConfig, ModelVars};
use crate::numeric::{Tape, Tensor, Var};

/// Final node embeddings `H` (`N×d`) plus the α-free bias factor reused by
/// the decoder.
pub struct EncoderOutput {
    pub h: Var,
    /// `−log2(N)·d_ij` as a constant on the tape.
    pub bias_base: Var,
    pub nodes: usize,
}

fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

fn norm(tape: &mut Tape, vars: &ModelVars, x: Var, prefix: &str) -> Result<Var> {
    let n = tape.instance_norm(x)?;
    let s = tape.mul_row(n, vars.get(&format!("{prefix}.scale"))?)?;
    tape.add_row(s, vars.get(&format!("{prefix}.shift"))?)
}

/// `(x, y)` per city, or depot `(x, y)` plus customer `(x, y, demand/capacity)`.
fn embed(tape: &mut Tape, vars: &ModelVars, inst: &Instance) -> Result<Var> {
    match inst.problem {
        Problem::Tsp => {
            let x = Tensor::new(vec![inst.len(), 2], inst.coords.iter().flatten().copied().collect())?;
            let x = tape.constant(x);
            linear(tape, x, vars.get("embed.node.weight")?, vars.get("embed.node.bias")?)
        }
        Problem::Cvrp => {
            let cap = inst.capacity() as f64;
            let depot = tape.constant(Tensor::new(vec![1, 2], inst.coords[0].to_vec())?);
            let feats: Vec<f64> = (1..inst.len())
                .flat_map(|i| [inst.coords[i][0], inst.coords[i][1], inst.demand(i) as f64 / cap])
                .collect();
            let cust = tape.constant(Tensor::new(vec![inst.len() - 1, 3], feats)?);
            let hd = linear(tape, depot, vars.get("embed.depot.weight")?, vars.get("embed.depot.bias")?)?;
            let hc = linear(tape, cust, vars.get("embed.node.weight")?, vars.get("embed.node.bias")?)?;
            tape.concat_rows(hd, hc)
        }
    }
}

/// Runs the encoder with adaptation scale `scale` (normally `inst.scale()`).
pub fn encode(
    tape: &mut Tape,
    cfg: &ModelConfig,
    vars: &ModelVars,
    inst: &Instance,
    scale: usize,
) -> Result<EncoderOutput> {
    inst.validate()?;
    let base = tape.constant(bias_base(scale, &inst.distance_matrix())?);
    let mut h = embed(tape, vars, inst)?;
    for l in 0..cfg.encoder_layers {
        let p = format!("encoder.layers.{l}");
        let alpha = vars.get(&cfg.alpha_name(BiasSite::Encoder(l)))?;
        let a = tape.mul(base, alpha)?;
        let q = tape.matmul(h, vars.get(&format!("{p}.aafm.wq"))?)?;
        let k = tape.matmul(h, vars.get(&format!("{p}.aafm.wk"))?)?;
        let v = tape.matmul(h, vars.get(&format!("{p}.aafm.wv"))?)?;
        let att = tape.aafm(q, k, v, a)?;
        let r = tape.add(h, att)?;
        let h1 = norm(tape, vars, r, &format!("{p}.norm1"))?;

        let f = linear(tape, h1, vars.get(&format!("{p}.ff.w1"))?, vars.get(&format!("{p}.ff.b1"))?)?;
        let f = tape.relu(f)?;
        let f = linear(tape, f, vars.get(&format!("{p}.ff.w2"))?, vars.get(&format!("{p}.ff.b2"))?)?;
        let r = tape.add(h1, f)?;
        h = norm(tape, vars, r, &format!("{p}.norm2"))?;
    }
    Ok(EncoderOutput {
        h,
        bias_base: base,
        nodes: inst.len(),
    })
}
