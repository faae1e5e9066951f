//! Forward-pass cost of AAFM against single-head dot-product attention.
//!
//! Peak memory is the largest intermediate buffer a mechanism allocates
//! (inputs and the `N×d` output excluded). AAFM builds each adaptation-bias
//! row from the coordinates as it goes, so its largest intermediate is the
//! `N×d` key table; attention needs the `N×N` score matrix.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::aft::{aft_forward_streaming, AftDims};
use crate::numeric::kernels::{matmul_acc, matmul_nt_acc};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Aafm,
    Mha,
}

impl Mechanism {
    pub fn label(self) -> &'static str {
        match self {
            Mechanism::Aafm => "aafm",
            Mechanism::Mha => "mha",
        }
    }
}

impl std::str::FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aafm" | "aft" | "aft-full" => Ok(Mechanism::Aafm),
            "mha" | "attention" => Ok(Mechanism::Mha),
            other => Err(Error::Argument(format!("unknown mechanism {other:?} (aafm, mha)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub mechanism: Mechanism,
    pub n: usize,
    pub d: usize,
    /// Fastest of the repeats.
    pub seconds: f64,
    /// Bytes of the largest intermediate buffer.
    pub peak_bytes: usize,
}

/// Random inputs shared by both mechanisms.
pub struct BenchInputs {
    pub n: usize,
    pub d: usize,
    pub coords: Vec<[f64; 2]>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
}

impl BenchInputs {
    pub fn random(n: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |len: usize| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let q = draw(n * d);
        let k = draw(n * d);
        let v = draw(n * d);
        let coords = (0..n).map(|_| [rng.gen(), rng.gen()]).collect();
        BenchInputs { n, d, coords, q, k, v }
    }
}

/// AAFM forward with the bias `−α·log2(N)·d_ij` computed row by row.
/// Returns the output and the largest intermediate size in bytes.
pub fn aafm_forward(x: &BenchInputs, alpha: f64) -> Result<(Vec<f64>, usize)> {
    let (n, d) = (x.n, x.d);
    let f = -alpha * (n as f64).log2();
    let out = aft_forward_streaming(&x.q, &x.k, &x.v, AftDims { nq: n, nkv: n, d }, |i, row| {
        let [xi, yi] = x.coords[i];
        for (r, [xj, yj]) in row.iter_mut().zip(&x.coords) {
            *r = f * (xi - xj).hypot(yi - yj);
        }
    })?;
    // exp-key and exp-key·value tables (N×d each), one bias/weight row (N)
    let peak = (n * d).max(n) * std::mem::size_of::<f64>();
    Ok((out, peak))
}

/// Single-head scaled dot-product attention `softmax(QKᵀ/√d)·V`.
pub fn mha_forward(x: &BenchInputs) -> (Vec<f64>, usize) {
    let (n, d) = (x.n, x.d);
    let mut scores = vec![0.0; n * n];
    matmul_nt_acc(&x.q, &x.k, n, d, n, &mut scores);
    let s = 1.0 / (d as f64).sqrt();
    for row in scores.chunks_mut(n) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b * s));
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v * s - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    let mut out = vec![0.0; n * d];
    matmul_acc(&scores, &x.v, n, n, d, &mut out);
    let peak = scores.len().max(n * d) * std::mem::size_of::<f64>();
    (out, peak)
}

/// Times both mechanisms over `ns` (fastest of `repeats` runs each).
pub fn bench_attention(ns: &[usize], d: usize, repeats: usize, mechanisms: &[Mechanism], seed: u64) -> Result<Vec<BenchRecord>> {
    if d == 0 || repeats == 0 || ns.iter().any(|&n| n < 2) {
        return Err(Error::Argument("bench needs d ≥ 1, repeats ≥ 1 and every N ≥ 2".into()));
    }
    let mut out = Vec::new();
    for &n in ns {
        let x = BenchInputs::random(n, d, seed ^ n as u64);
        for &mech in mechanisms {
            let mut best = f64::INFINITY;
            let mut peak = 0;
            for _ in 0..repeats {
                let t0 = Instant::now();
                peak = match mech {
                    Mechanism::Aafm => aafm_forward(&x, 1.0)?.1,
                    Mechanism::Mha => mha_forward(&x).1,
                };
                best = best.min(t0.elapsed().as_secs_f64());
            }
            out.push(BenchRecord {
                mechanism: mech,
                n,
                d,
                seconds: best,
                peak_bytes: peak,
            });
        }
    }
    Ok(out)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}
