//! Small building blocks shared by the DRE, RSAS and FFN modules.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;

/// Channel layer norm followed by per-channel scale and shift (`[C]` each).
pub fn affine_layer_norm<T: Scalar>(
    g: &Graph<T>,
    x: &Var<T>,
    gamma: &Var<T>,
    beta: &Var<T>,
    eps: f64,
) -> Result<Var<T>> {
    let c = gamma.shape()[0];
    let y = g.layer_norm(x, eps)?;
    let gm = g.reshape(gamma, &[c, 1, 1])?;
    let bt = g.reshape(beta, &[c, 1, 1])?;
    let scaled = g.mul(&y, &gm)?;
    g.add(&scaled, &bt)
}

/// Adds a `[C]` bias to a C×H×W map when present.
pub fn add_channel_bias<T: Scalar>(g: &Graph<T>, x: Var<T>, bias: Option<&Var<T>>) -> Result<Var<T>> {
    match bias {
        None => Ok(x),
        Some(b) => {
            let c = b.shape()[0];
            let b = g.reshape(b, &[c, 1, 1])?;
            g.add(&x, &b)
        }
    }
}

pub fn conv<T: Scalar>(
    g: &Graph<T>,
    x: &Var<T>,
    k: &Var<T>,
    bias: Option<&Var<T>>,
    stride: usize,
    pad: usize,
) -> Result<Var<T>> {
    let y = g.conv2d(x, k, stride, pad)?;
    add_channel_bias(g, y, bias)
}

/// Smallest multiple of `m` that is at least `n`.
pub fn round_up(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}
