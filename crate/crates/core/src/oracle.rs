//! Slow, independent double-precision references.
//!
//! Nothing here calls into `ops`, `fft` or the layer modules: every oracle
//! recomputes its result from the defining formula with scalar loops, so a
//! bug in a fast path cannot hide behind a shared helper.

use serde::Serialize;

use crate::error::{Result, RstError};
use crate::tensor::Tensor;

/// Outcome of one oracle comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub op: String,
    pub instance: String,
    pub max_abs_diff: f64,
    pub rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Flat index of the worst element when the check fails.
    pub failing_index: Option<usize>,
}

impl OracleReport {
    /// Compares on max absolute difference.
    pub fn abs(op: &str, instance: impl Into<String>, got: &[f64], want: &[f64], tol: f64) -> Self {
        let (max_abs_diff, worst) = worst_diff(got, want);
        let scale = max_abs(got).max(max_abs(want)).max(1e-8);
        let pass = max_abs_diff <= tol && got.len() == want.len();
        Self {
            op: op.to_string(),
            instance: instance.into(),
            max_abs_diff,
            rel_error: max_abs_diff / scale,
            tolerance: tol,
            pass,
            failing_index: (!pass).then_some(worst),
        }
    }

    /// Compares on relative error `max|a−b| / max(|a|, |b|, 1e-8)`.
    pub fn rel(op: &str, instance: impl Into<String>, got: &[f64], want: &[f64], tol: f64) -> Self {
        let mut r = Self::abs(op, instance, got, want, f64::INFINITY);
        r.tolerance = tol;
        r.pass = r.rel_error <= tol && got.len() == want.len();
        if !r.pass {
            r.failing_index = Some(worst_diff(got, want).1);
        }
        r
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn worst_diff(a: &[f64], b: &[f64]) -> (f64, usize) {
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| ((x - y).abs(), i))
        .fold((0.0, 0), |acc, cur| if cur.0 > acc.0 || cur.0.is_nan() { cur } else { acc })
}

/// Relative error as used by gradient audits.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    num / max_abs(a).max(max_abs(b)).max(1e-8)
}

/// Full 2-D DFT of one `h × w` plane by direct summation; returns (re, im).
pub fn naive_dft2(x: &[f64], h: usize, w: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for xx in 0..w {
                    let ang = -2.0
                        * std::f64::consts::PI
                        * (((u * y) % h) as f64 / h as f64 + ((v * xx) % w) as f64 / w as f64);
                    let s = x[y * w + xx];
                    re += s * ang.cos();
                    im += s * ang.sin();
                }
            }
            out.push((re, im));
        }
    }
    out
}

pub fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// Six-loop cross-correlation; `x` is C_in×H×W, `k` is C_out×C_in×kh×kw.
pub fn naive_conv2d(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(&[co, oh, ow]);
    for o in 0..co {
        for y in 0..oh {
            for xo in 0..ow {
                let mut s = 0.0;
                for c in 0..ci {
                    for i in 0..kh {
                        for j in 0..kw {
                            let iy = (y * stride + i) as isize - pad as isize;
                            let ix = (xo * stride + j) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                s += k.at(&[o, c, i, j]) * x.at(&[c, iy as usize, ix as usize]);
                            }
                        }
                    }
                }
                out.set(&[o, y, xo], s);
            }
        }
    }
    out
}

fn sample_bilinear(x: &Tensor<f64>, c: usize, py: f64, px: f64) -> f64 {
    let (h, w) = (x.shape()[1] as isize, x.shape()[2] as isize);
    let (y0, x0) = (py.floor(), px.floor());
    let mut s = 0.0;
    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        let (yy, xx) = (y0 as isize + dy, x0 as isize + dx);
        let wy = 1.0 - (py - (y0 + dy as f64)).abs();
        let wx = 1.0 - (px - (x0 + dx as f64)).abs();
        if yy >= 0 && xx >= 0 && yy < h && xx < w {
            s += wy * wx * x.at(&[c, yy as usize, xx as usize]);
        }
    }
    s
}

/// Deformable convolution by looping over taps and bilinear corners.
pub fn naive_deform_conv(x: &Tensor<f64>, offsets: &Tensor<f64>, k: &Tensor<f64>) -> Tensor<f64> {
    let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let mut out = Tensor::zeros(&[co, h, w]);
    for o in 0..co {
        for y in 0..h {
            for xo in 0..w {
                let mut s = 0.0;
                for i in 0..kh {
                    for j in 0..kw {
                        let t = i * kw + j;
                        let py = y as f64 + i as f64 - (kh / 2) as f64 + offsets.at(&[2 * t, y, xo]);
                        let px = xo as f64 + j as f64 - (kw / 2) as f64 + offsets.at(&[2 * t + 1, y, xo]);
                        for c in 0..ci {
                            s += k.at(&[o, c, i, j]) * sample_bilinear(x, c, py, px);
                        }
                    }
                }
                out.set(&[o, y, xo], s);
            }
        }
    }
    out
}

/// Multiply-add counter for instrumented oracle runs.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct MacCounter(pub u64);

/// `softmax(QKᵀ/√d_h + B)·V` per head with Q = tokens·P_Q etc. Tokens are
/// n×d, projections d×d, bias n×n. Counts the multiply-adds of the
/// projections, logits and value mixing.
pub fn naive_attention(
    tokens: &Tensor<f64>,
    pq: &Tensor<f64>,
    pk: &Tensor<f64>,
    pv: &Tensor<f64>,
    bias: &Tensor<f64>,
    heads: usize,
    counter: &mut MacCounter,
) -> (Tensor<f64>, Tensor<f64>) {
    let (n, d) = (tokens.shape()[0], tokens.shape()[1]);
    let project = |p: &Tensor<f64>, counter: &mut MacCounter| {
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            for c in 0..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += tokens.at(&[r, k]) * p.at(&[k, c]);
                    counter.0 += 1;
                }
                out[r * d + c] = s;
            }
        }
        out
    };
    let q = project(pq, counter);
    let kk = project(pk, counter);
    let v = project(pv, counter);
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Tensor::zeros(&[n, d]);
    let mut probs = Tensor::zeros(&[heads, n, n]);
    for hd in 0..heads {
        let cols = hd * dh..(hd + 1) * dh;
        for i in 0..n {
            let mut logits = vec![0.0; n];
            for (j, l) in logits.iter_mut().enumerate() {
                let mut s = 0.0;
                for c in cols.clone() {
                    s += q[i * d + c] * kk[j * d + c];
                    counter.0 += 1;
                }
                *l = s * scale + bias.at(&[i, j]);
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for (j, e) in exps.iter().enumerate() {
                probs.set(&[hd, i, j], e / total);
            }
            for c in cols.clone() {
                let mut s = 0.0;
                for j in 0..n {
                    s += exps[j] / total * v[j * d + c];
                    counter.0 += 1;
                }
                out.set(&[i, c], s);
            }
        }
    }
    (out, probs)
}

/// Pre-residual attention branch of a radial strip attention block,
/// computed as one HW×HW attention whose logits are masked to -∞ outside
/// each pixel's window (block-diagonal), then projected per pixel.
///
/// `window_of[p]` is the window id of pixel `p`; `bias(p, q)` gives the
/// positional bias between pixels in the same window.
#[allow(clippy::too_many_arguments)]
pub fn block_diagonal_attention(
    features: &Tensor<f64>,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
    pq: &Tensor<f64>,
    pk: &Tensor<f64>,
    pv: &Tensor<f64>,
    po: &Tensor<f64>,
    heads: usize,
    window_of: &[usize],
    bias: impl Fn(usize, usize) -> f64,
) -> Tensor<f64> {
    let (c, h, w) = (features.shape()[0], features.shape()[1], features.shape()[2]);
    let hw = h * w;
    // per-pixel layer norm, tokens as rows
    let mut tok = vec![0.0; hw * c];
    for p in 0..hw {
        let vals: Vec<f64> = (0..c).map(|ch| features.data()[ch * hw + p]).collect();
        let mean = vals.iter().sum::<f64>() / c as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        for ch in 0..c {
            tok[p * c + ch] = (vals[ch] - mean) / (var + eps).sqrt() * gamma[ch] + beta[ch];
        }
    }
    let q = naive_matmul(&tok, pq.data(), hw, c, c);
    let k = naive_matmul(&tok, pk.data(), hw, c, c);
    let v = naive_matmul(&tok, pv.data(), hw, c, c);
    let dh = c / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut mixed = vec![0.0; hw * c];
    for hd in 0..heads {
        for i in 0..hw {
            let mut logits = vec![f64::NEG_INFINITY; hw];
            for (j, l) in logits.iter_mut().enumerate() {
                if window_of[i] != window_of[j] {
                    continue;
                }
                let mut s = 0.0;
                for ch in hd * dh..(hd + 1) * dh {
                    s += q[i * c + ch] * k[j * c + ch];
                }
                *l = s * scale + bias(i, j);
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for ch in hd * dh..(hd + 1) * dh {
                mixed[i * c + ch] = (0..hw).map(|j| exps[j] / total * v[j * c + ch]).sum();
            }
        }
    }
    // output projection P_O is stored C_out×C_in (a 1×1 convolution kernel)
    let mut out = Tensor::zeros(&[c, h, w]);
    for p in 0..hw {
        for o in 0..c {
            let s: f64 = (0..c).map(|i| po.data()[o * c + i] * mixed[p * c + i]).sum();
            out.data_mut()[o * hw + p] = s;
        }
    }
    out
}

/// Outcome of a central-difference estimate at one parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FdEstimate {
    Smooth(f64),
    /// One-sided slopes disagree: the point sits on a kink and is excluded.
    Kink { forward: f64, backward: f64 },
}

impl FdEstimate {
    pub fn value(self) -> Option<f64> {
        match self {
            FdEstimate::Smooth(v) => Some(v),
            FdEstimate::Kink { .. } => None,
        }
    }
}

/// Central differences of a scalar function of `params`.
///
/// `f` receives the full perturbed parameter vector and returns the loss
/// together with the parameter values it actually used (for example after
/// rounding to f32), so the step in the denominator is the real one.
pub fn finite_diff_grad(
    mut f: impl FnMut(&[f64]) -> (f64, Vec<f64>),
    params: &[f64],
    indices: &[usize],
    eps: f64,
) -> Result<Vec<FdEstimate>> {
    let mut work = params.to_vec();
    let (f0, _) = f(&work);
    if !f0.is_finite() {
        return Err(RstError::NonFinite("finite_diff_grad: f(params)".into()));
    }
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let orig = work[i];
        work[i] = orig + eps;
        let (fp, used_p) = f(&work);
        work[i] = orig - eps;
        let (fm, used_m) = f(&work);
        work[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(RstError::NonFinite(format!("finite_diff_grad: parameter {i}")));
        }
        let (hp, hm) = (used_p[i] - orig, orig - used_m[i]);
        let forward = (fp - f0) / hp;
        let backward = (f0 - fm) / hm;
        let scale = forward.abs().max(backward.abs()).max(1e-3);
        if (forward - backward).abs() > 0.1 * scale {
            out.push(FdEstimate::Kink { forward, backward });
        } else {
            out.push(FdEstimate::Smooth((fp - fm) / (hp + hm)));
        }
    }
    Ok(out)
}

/// PSNR in dB for signals in [0, 1].
pub fn psnr(a: &[f64], b: &[f64]) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    10.0 * (1.0 / mse).log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ident(p: &[f64]) -> Vec<f64> {
        p.to_vec()
    }

    #[test]
    fn square_derivative() {
        let est = finite_diff_grad(|p| (p[0] * p[0], ident(p)), &[3.0], &[0], 1e-6).unwrap();
        assert!((est[0].value().unwrap() - 6.0).abs() < 1e-6);
    }

    #[test]
    fn abs_at_zero_is_a_kink() {
        let est = finite_diff_grad(|p| (p[0].abs(), ident(p)), &[0.0], &[0], 1e-6).unwrap();
        assert!(matches!(est[0], FdEstimate::Kink { .. }));
    }

    #[test]
    fn non_finite_function_errors() {
        assert!(finite_diff_grad(|p| (f64::NAN, ident(p)), &[1.0], &[0], 1e-6).is_err());
    }

    #[test]
    fn dft_of_delta_is_flat() {
        let mut x = vec![0.0; 12];
        x[0] = 1.0;
        for (re, im) in naive_dft2(&x, 3, 4) {
            assert!((re - 1.0).abs() < 1e-12 && im.abs() < 1e-12);
        }
    }

    #[test]
    fn dft_is_linear() {
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..20).map(|i| (i as f64 * 1.3).cos()).collect();
        let s: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let (dx, dy, ds) = (naive_dft2(&x, 4, 5), naive_dft2(&y, 4, 5), naive_dft2(&s, 4, 5));
        for i in 0..20 {
            assert!((dx[i].0 + dy[i].0 - ds[i].0).abs() < 1e-9);
            assert!((dx[i].1 + dy[i].1 - ds[i].1).abs() < 1e-9);
        }
    }

    #[test]
    fn single_token_attention_returns_value_row() {
        let tok = Tensor::from_f64(&[1, 2], &[0.5, -1.0]).unwrap();
        let eye = Tensor::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let pv = Tensor::from_f64(&[2, 2], &[2.0, 0.0, 1.0, 3.0]).unwrap();
        let b = Tensor::zeros(&[1, 1]);
        let mut ctr = MacCounter::default();
        let (out, probs) = naive_attention(&tok, &eye, &eye, &pv, &b, 1, &mut ctr);
        assert_eq!(out.data(), &[0.0, -3.0]);
        assert_eq!(probs.data(), &[1.0]);
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let tok = Tensor::from_fn(&[6, 4], |i| ((i * 7) % 5) as f64 * 0.3 - 0.6);
        let p = Tensor::from_fn(&[4, 4], |i| ((i * 3) % 7) as f64 * 0.2 - 0.5);
        let b = Tensor::from_fn(&[6, 6], |i| (i % 4) as f64 * 0.1);
        let (_, probs) = naive_attention(&tok, &p, &p, &p, &b, 2, &mut MacCounter::default());
        for row in probs.data().chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
