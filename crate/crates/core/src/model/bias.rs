//! Adaptation bias `A_ij = −α · log2(N) · d_ij`.

use crate::error::{Error, Result};
use crate::instance::DistanceMatrix;
use crate::numeric::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptationBias {
    pub alpha: f64,
    pub a: Tensor,
}

/// The α-free factor `−log2(n) · d`, shape `N×N`.
pub fn bias_base(n: usize, d: &DistanceMatrix) -> Result<Tensor> {
    if n < 2 {
        return Err(Error::Argument(format!("adaptation bias needs scale n >= 2, got {n}")));
    }
    let k = -(n as f64).log2();
    Tensor::new(vec![d.len(), d.len()], d.as_slice().iter().map(|x| k * x).collect())
}

pub fn adaptation_bias(n: usize, d: &DistanceMatrix, alpha: f64) -> Result<AdaptationBias> {
    let mut a = bias_base(n, d)?;
    a.data_mut().iter_mut().for_each(|x| *x *= alpha);
    a.check_finite("adaptation bias")?;
    Ok(AdaptationBias { alpha, a })
}
