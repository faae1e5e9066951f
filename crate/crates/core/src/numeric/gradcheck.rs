use crate::error::Result;
use crate::numeric::tape::{Tape, Var};
use crate::numeric::tensor::Tensor;

/// Largest relative disagreement between the tape gradient of `f` at `x`
/// and central differences with step `h`, scaled by `max(1, |analytic|)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let loss = f(&mut tape, xv)?;
    tape.backward(loss)?;
    let analytic = tape.grad(xv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.numel()]);

    let eval = |data: Vec<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::new(x.shape().to_vec(), data)?);
        let out = f(&mut tape, xv)?;
        Ok(tape.value(out).item())
    };
    let numeric = central_differences(|d| eval(d.to_vec()), x.data(), h)?;
    Ok(max_relative_error(&analytic, &numeric))
}

/// Central-difference gradient of a scalar function of a flat vector.
pub fn central_differences<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut point = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = point[i];
        point[i] = orig + h;
        let up = f(&point)?;
        point[i] = orig - h;
        let down = f(&point)?;
        point[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}
