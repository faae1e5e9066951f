//! Fused attention-free pooling with an additive pairwise bias:
//!
//! `out_i = σ(Q_i) ⊙ Σ_j exp(A_ij)·exp(K_j) ⊙ V_j / Σ_j exp(A_ij)·exp(K_j)`
//!
//! The weights factor as `exp(A_ij − a_i)·exp(K_jc − k_c)` after shifting by the
//! row max of `A` and the column max of `K`; both sums are then two matrix
//! products. Rows whose shifted denominator underflows are recomputed with the
//! exact per-`(i, c)` shift `max_j (A_ij + K_jc)`.

use crate::error::{Error, Result};
use crate::numeric::kernels::{matmul_acc, matmul_nt_acc, matmul_tn_acc, sigmoid};

/// Bias entries at or below this value count as masked.
pub const MASK_LIMIT: f64 = -1e8;

/// Sentinel added to the bias of masked keys.
pub const MASK_BIAS: f64 = -1e9;

const DEN_UNDERFLOW: f64 = 1e-250;

/// Shapes of one call: `nq` query rows, `nkv` key/value rows, `d` features.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AftDims {
    pub nq: usize,
    pub nkv: usize,
    pub d: usize,
}

#[derive(Clone, Debug)]
pub struct AftCache {
    dims: AftDims,
    sig_q: Vec<f64>,
    ratio: Vec<f64>,
    den: Vec<f64>,
    a_w: Vec<f64>,
    e: Vec<f64>,
    ev: Vec<f64>,
    /// Rows recomputed with the exact shift, with that shift (`d` values each).
    exact: Vec<(usize, Vec<f64>)>,
}

impl AftCache {
    pub fn used_exact_path(&self) -> bool {
        !self.exact.is_empty()
    }
}

pub struct AftGrads {
    pub dq: Vec<f64>,
    pub dk: Vec<f64>,
    pub dv: Vec<f64>,
    pub da: Vec<f64>,
}

fn row_max(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn aft_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    a: &[f64],
    dims: AftDims,
) -> Result<(Vec<f64>, AftCache)> {
    let AftDims { nq, nkv, d } = dims;
    if q.len() != nq * d || k.len() != nkv * d || v.len() != nkv * d || a.len() != nq * nkv {
        return Err(Error::Dimension(format!(
            "aafm: q {} k {} v {} a {} for {dims:?}",
            q.len(),
            k.len(),
            v.len(),
            a.len()
        )));
    }
    if q.iter().chain(k).chain(v).any(|x| !x.is_finite()) || a.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::Numeric("aafm: non-finite input".into()));
    }

    let mut rmax = vec![0.0; nq];
    for i in 0..nq {
        let m = row_max(&a[i * nkv..(i + 1) * nkv]);
        if m <= MASK_LIMIT {
            return Err(Error::Infeasible(format!("aafm: query row {i} has every key masked")));
        }
        rmax[i] = m;
    }

    let mut kmax = vec![f64::NEG_INFINITY; d];
    for j in 0..nkv {
        for c in 0..d {
            kmax[c] = kmax[c].max(k[j * d + c]);
        }
    }

    let mut a_w = vec![0.0; nq * nkv];
    for i in 0..nq {
        for j in 0..nkv {
            a_w[i * nkv + j] = (a[i * nkv + j] - rmax[i]).exp();
        }
    }
    let mut e = vec![0.0; nkv * d];
    let mut ev = vec![0.0; nkv * d];
    for j in 0..nkv {
        for c in 0..d {
            let x = (k[j * d + c] - kmax[c]).exp();
            e[j * d + c] = x;
            ev[j * d + c] = x * v[j * d + c];
        }
    }
    let mut num = vec![0.0; nq * d];
    let mut den = vec![0.0; nq * d];
    matmul_acc(&a_w, &ev, nq, nkv, d, &mut num);
    matmul_acc(&a_w, &e, nq, nkv, d, &mut den);

    // Rows whose factored denominator underflowed are redone exactly; the
    // decision is per row so a row's result never depends on its neighbours.
    let mut exact = Vec::new();
    for i in 0..nq {
        if den[i * d..(i + 1) * d].iter().any(|&x| !(x > DEN_UNDERFLOW)) {
            let shift = exact_row(k, v, &a[i * nkv..(i + 1) * nkv], d, &mut num[i * d..(i + 1) * d], &mut den[i * d..(i + 1) * d]);
            exact.push((i, shift));
        }
    }

    let sig_q: Vec<f64> = q.iter().map(|&x| sigmoid(x)).collect();
    let ratio: Vec<f64> = num.iter().zip(&den).map(|(n, d)| n / d).collect();
    let out: Vec<f64> = sig_q.iter().zip(&ratio).map(|(s, r)| s * r).collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("aafm: non-finite output".into()));
    }
    Ok((
        out,
        AftCache {
            dims,
            sig_q,
            ratio,
            den,
            a_w,
            e,
            ev,
            exact,
        },
    ))
}

/// Inference-only forward that asks `bias_row(i, row)` for one bias row at a
/// time, so no `nq × nkv` buffer exists; the largest temporaries are the
/// `nkv × d` key tables. Matches [`aft_forward`] on the same bias.
pub fn aft_forward_streaming(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    dims: AftDims,
    mut bias_row: impl FnMut(usize, &mut [f64]),
) -> Result<Vec<f64>> {
    let AftDims { nq, nkv, d } = dims;
    if q.len() != nq * d || k.len() != nkv * d || v.len() != nkv * d {
        return Err(Error::Dimension(format!("aafm: q {} k {} v {} for {dims:?}", q.len(), k.len(), v.len())));
    }
    let mut kmax = vec![f64::NEG_INFINITY; d];
    for j in 0..nkv {
        for c in 0..d {
            kmax[c] = kmax[c].max(k[j * d + c]);
        }
    }
    let mut e = vec![0.0; nkv * d];
    let mut ev = vec![0.0; nkv * d];
    for j in 0..nkv {
        for c in 0..d {
            let x = (k[j * d + c] - kmax[c]).exp();
            e[j * d + c] = x;
            ev[j * d + c] = x * v[j * d + c];
        }
    }
    let mut out = vec![0.0; nq * d];
    let mut a = vec![0.0; nkv];
    let mut w = vec![0.0; nkv];
    let mut num = vec![0.0; d];
    let mut den = vec![0.0; d];
    for i in 0..nq {
        bias_row(i, &mut a);
        let m = row_max(&a);
        if m <= MASK_LIMIT {
            return Err(Error::Infeasible(format!("aafm: query row {i} has every key masked")));
        }
        if m.is_nan() {
            return Err(Error::Numeric(format!("aafm: NaN in bias row {i}")));
        }
        for (wj, aj) in w.iter_mut().zip(&a) {
            *wj = (aj - m).exp();
        }
        num.fill(0.0);
        den.fill(0.0);
        matmul_acc(&w, &ev, 1, nkv, d, &mut num);
        matmul_acc(&w, &e, 1, nkv, d, &mut den);
        if den.iter().any(|&x| !(x > DEN_UNDERFLOW)) {
            exact_row(k, v, &a, d, &mut num, &mut den);
        }
        for c in 0..d {
            out[i * d + c] = sigmoid(q[i * d + c]) * (num[c] / den[c]);
        }
    }
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("aafm: non-finite output".into()));
    }
    Ok(out)
}

/// Pools one query row with the per-feature shift `max_j (a_j + K_jc)`,
/// overwriting `num`/`den`; returns the shift.
fn exact_row(k: &[f64], v: &[f64], a_row: &[f64], d: usize, num: &mut [f64], den: &mut [f64]) -> Vec<f64> {
    let mut shift = vec![f64::NEG_INFINITY; d];
    for (j, &aj) in a_row.iter().enumerate() {
        for c in 0..d {
            shift[c] = shift[c].max(aj + k[j * d + c]);
        }
    }
    num.fill(0.0);
    den.fill(0.0);
    for (j, &aj) in a_row.iter().enumerate() {
        for c in 0..d {
            let w = (aj + k[j * d + c] - shift[c]).exp();
            num[c] += w * v[j * d + c];
            den[c] += w;
        }
    }
    shift
}

pub fn aft_backward(g: &[f64], k: &[f64], v: &[f64], a: &[f64], cache: &AftCache) -> AftGrads {
    let AftDims { nq, nkv, d } = cache.dims;
    let sig_q = &cache.sig_q;
    let ratio = &cache.ratio;
    let (a_w, e, ev) = (&cache.a_w, &cache.e, &cache.ev);

    let dq: Vec<f64> = (0..nq * d)
        .map(|x| g[x] * ratio[x] * sig_q[x] * (1.0 - sig_q[x]))
        .collect();
    // Gradient reaching the pooled ratio, divided by its denominator.
    let mut gd: Vec<f64> = (0..nq * d).map(|x| g[x] * sig_q[x] / cache.den[x]).collect();
    let exact_gd: Vec<Vec<f64>> = cache
        .exact
        .iter()
        .map(|(i, _)| {
            let row = gd[i * d..(i + 1) * d].to_vec();
            gd[i * d..(i + 1) * d].fill(0.0);
            row
        })
        .collect();

    let mut dk = vec![0.0; nkv * d];
    let mut dv = vec![0.0; nkv * d];
    let mut da = vec![0.0; nq * nkv];

    let grd: Vec<f64> = gd.iter().zip(ratio).map(|(x, r)| x * r).collect();
    let mut s1 = vec![0.0; nkv * d];
    let mut s2 = vec![0.0; nkv * d];
    matmul_tn_acc(a_w, &gd, nq, nkv, d, &mut s1);
    matmul_tn_acc(a_w, &grd, nq, nkv, d, &mut s2);
    for x in 0..nkv * d {
        dv[x] = e[x] * s1[x];
        dk[x] = e[x] * (v[x] * s1[x] - s2[x]);
    }
    let mut t1 = vec![0.0; nq * nkv];
    let mut t2 = vec![0.0; nq * nkv];
    matmul_nt_acc(&gd, ev, nq, d, nkv, &mut t1);
    matmul_nt_acc(&grd, e, nq, d, nkv, &mut t2);
    for x in 0..nq * nkv {
        da[x] = a_w[x] * (t1[x] - t2[x]);
    }

    for ((i, shift), gd_row) in cache.exact.iter().zip(&exact_gd) {
        let i = *i;
        for j in 0..nkv {
            let aij = a[i * nkv + j];
            let mut acc = 0.0;
            for c in 0..d {
                let jc = j * d + c;
                let w = (aij + k[jc] - shift[c]).exp();
                let coef = gd_row[c] * w;
                let diff = v[jc] - ratio[i * d + c];
                dv[jc] += coef;
                dk[jc] += coef * diff;
                acc += coef * diff;
            }
            da[i * nkv + j] = acc;
        }
    }
    AftGrads { dq, dk, dv, da }
}
