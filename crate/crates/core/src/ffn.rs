//! Frequency-domain feed-forward block: a learnable per-channel spectral
//! weight applied to P×P patches, then a pointwise C → eC → C MLP.

use crate::error::{Result, RstError};
use crate::fft::half_width;
use crate::graph::{Graph, Var};
use crate::layers::{affine_layer_norm, conv, round_up};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Shape of the spectral weight for `c` channels and patch `p`.
pub fn spectral_shape(c: usize, p: usize) -> [usize; 4] {
    [c, p, half_width(p), 2]
}

/// `1 + 0i` everywhere: the spectral stage starts as the identity.
pub fn identity_spectral_weight<T: Scalar>(c: usize, p: usize) -> Tensor<T> {
    Tensor::from_fn(&spectral_shape(c, p), |k| if k % 2 == 0 { T::one() } else { T::zero() })
}

/// Reflect-pads to a multiple of `patch`, reweights, and crops back.
pub fn spectral_stage<T: Scalar>(g: &Graph<T>, x: &Var<T>, weight: &Var<T>, patch: usize) -> Result<Var<T>> {
    let (_, h, w) = x.value().chw("spectral_reweight")?;
    let (ph, pw) = (round_up(h, patch), round_up(w, patch));
    if (ph, pw) == (h, w) {
        return g.spectral_reweight(x, weight, patch);
    }
    let padded = g.reflect_pad(x, ph, pw)?;
    let y = g.spectral_reweight(&padded, weight, patch)?;
    g.crop(&y, h, w)
}

#[derive(Clone, Debug)]
pub struct FfnParams<T> {
    pub gamma: Var<T>,
    pub beta: Var<T>,
    pub spectral: Var<T>,
    pub fc1: Var<T>,
    pub fc1_bias: Option<Var<T>>,
    pub fc2: Var<T>,
    pub fc2_bias: Option<Var<T>>,
    pub patch: usize,
    pub eps: f64,
}

impl<T: Scalar> FfnParams<T> {
    pub fn from_set(set: &ParamSet<T>, prefix: &str, patch: usize, eps: f64) -> Result<Self> {
        let p = |s: &str| set.get(&format!("{prefix}.{s}")).cloned();
        let o = |s: &str| set.get_opt(&format!("{prefix}.{s}")).cloned();
        Ok(Self {
            gamma: p("norm.gamma")?,
            beta: p("norm.beta")?,
            spectral: p("spectral")?,
            fc1: p("fc1.weight")?,
            fc1_bias: o("fc1.bias"),
            fc2: p("fc2.weight")?,
            fc2_bias: o("fc2.bias"),
            patch,
            eps,
        })
    }
}

/// `fc2(gelu(fc1(spectral(LN(x)))))`, without the residual.
pub fn ffn_branch<T: Scalar>(g: &Graph<T>, x: &Var<T>, p: &FfnParams<T>) -> Result<Var<T>> {
    let c = x.value().chw("ffn")?.0;
    if p.gamma.shape() != [c] || p.fc1.shape().get(1) != Some(&c) {
        return Err(RstError::shape("ffn", x.shape(), p.fc1.shape()));
    }
    let y = affine_layer_norm(g, x, &p.gamma, &p.beta, p.eps)?;
    let y = spectral_stage(g, &y, &p.spectral, p.patch)?;
    let y = conv(g, &y, &p.fc1, p.fc1_bias.as_ref(), 1, 0)?;
    let y = g.gelu(&y);
    conv(g, &y, &p.fc2, p.fc2_bias.as_ref(), 1, 0)
}

pub fn ffn_forward<T: Scalar>(g: &Graph<T>, x: &Var<T>, p: &FfnParams<T>) -> Result<Var<T>> {
    let branch = ffn_branch(g, x, p)?;
    g.add(x, &branch)
}
