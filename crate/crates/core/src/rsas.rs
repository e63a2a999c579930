//! Radial strip attention: pixels are grouped into one window per azimuth
//! bin, attended with an angular relative-position bias, and merged back to
//! their source pixels.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RstError};
use crate::graph::{Graph, Var};
use crate::layers::{affine_layer_norm, conv};
use crate::ops::{gather_tokens, scatter_tokens};
use crate::params::ParamSet;
use crate::polar::WindowLayout;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How token angles are assigned before taking pairwise differences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    /// Bin centres: `θ = θ_max(r + ½)/N_r`, `φ = 2π(a + ½)/N_φ`.
    #[default]
    Bins,
    /// Per-pixel angles: `θ = θ_max·ρ/ρ_max` and the pixel azimuth.
    Continuous,
}

/// Per-pair lookup indices and trigonometric factors for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasTerms {
    pub n: usize,
    radial_index: Vec<usize>,
    azimuth_index: Vec<usize>,
    sin_theta: Vec<f64>,
    cos_theta: Vec<f64>,
    sin_phi: Vec<f64>,
    cos_phi: Vec<f64>,
}

fn table_index(op: &'static str, a: usize, b: usize, n: usize) -> Result<usize> {
    if a >= n || b >= n {
        return Err(RstError::invalid(op, format!("bin pair ({a}, {b}) outside table for {n} bins")));
    }
    Ok(a + n - 1 - b)
}

impl BiasTerms {
    /// Tokens carry (radial bin, azimuth bin) and angles (θ, φ).
    pub fn new(
        radial_bins: &[usize],
        azimuth_bins: &[usize],
        theta: &[f64],
        phi: &[f64],
        n_r: usize,
        n_phi: usize,
    ) -> Result<Self> {
        let n = radial_bins.len();
        if azimuth_bins.len() != n || theta.len() != n || phi.len() != n {
            return Err(RstError::invalid("compute_bias", "token attribute lengths differ"));
        }
        let mut t = Self {
            n,
            radial_index: Vec::with_capacity(n * n),
            azimuth_index: Vec::with_capacity(n * n),
            sin_theta: Vec::with_capacity(n * n),
            cos_theta: Vec::with_capacity(n * n),
            sin_phi: Vec::with_capacity(n * n),
            cos_phi: Vec::with_capacity(n * n),
        };
        for i in 0..n {
            for j in 0..n {
                t.radial_index.push(table_index("compute_bias", radial_bins[i], radial_bins[j], n_r)?);
                t.azimuth_index.push(table_index("compute_bias", azimuth_bins[i], azimuth_bins[j], n_phi)?);
                let (st, ct) = (theta[i] - theta[j]).sin_cos();
                let (sp, cp) = (phi[i] - phi[j]).sin_cos();
                t.sin_theta.push(st);
                t.cos_theta.push(ct);
                t.sin_phi.push(sp);
                t.cos_phi.push(cp);
            }
        }
        Ok(t)
    }

    /// Angles at bin centres.
    pub fn from_bins(
        radial_bins: &[usize],
        azimuth_bins: &[usize],
        n_r: usize,
        n_phi: usize,
        theta_max: f64,
    ) -> Result<Self> {
        let theta: Vec<f64> = radial_bins
            .iter()
            .map(|&r| theta_max * (r as f64 + 0.5) / n_r as f64)
            .collect();
        let phi: Vec<f64> = azimuth_bins
            .iter()
            .map(|&a| std::f64::consts::TAU * (a as f64 + 0.5) / n_phi as f64)
            .collect();
        Self::new(radial_bins, azimuth_bins, &theta, &phi, n_r, n_phi)
    }

    /// Terms for window `w` of `layout`.
    pub fn for_window(layout: &WindowLayout, w: usize, theta_max: f64, mode: BiasMode) -> Result<Self> {
        let pixels = &layout.windows[w];
        let rb: Vec<usize> = pixels.iter().map(|&p| layout.radial_bin[p]).collect();
        let ab: Vec<usize> = pixels.iter().map(|&p| layout.azimuth_bin[p]).collect();
        match mode {
            BiasMode::Bins => Self::from_bins(&rb, &ab, layout.n_r, layout.n_phi, theta_max),
            BiasMode::Continuous => {
                let r_max = if layout.r_max > 0.0 { layout.r_max } else { 1.0 };
                let theta: Vec<f64> = pixels.iter().map(|&p| theta_max * layout.radius[p] / r_max).collect();
                let phi: Vec<f64> = pixels.iter().map(|&p| layout.azimuth[p]).collect();
                Self::new(&rb, &ab, &theta, &phi, layout.n_r, layout.n_phi)
            }
        }
    }

    fn check_tables<T: Scalar>(&self, radial: &Tensor<T>, azimuth: &Tensor<T>) -> Result<()> {
        let rows = |t: &Tensor<T>| match t.shape() {
            &[r, 2] => Ok(r),
            s => Err(RstError::invalid("compute_bias", format!("bias table must be [rows, 2], got {s:?}"))),
        };
        let (nr, na) = (rows(radial)?, rows(azimuth)?);
        let max_r = self.radial_index.iter().copied().max().unwrap_or(0);
        let max_a = self.azimuth_index.iter().copied().max().unwrap_or(0);
        if self.n > 0 && (max_r >= nr || max_a >= na) {
            return Err(RstError::invalid("compute_bias", "relative bin index outside bias table"));
        }
        Ok(())
    }
}

/// `B[i,j] = a_θ sin Δθ + b_θ cos Δθ + a_φ sin Δφ + b_φ cos Δφ` with the
/// coefficients read from `[2N−1, 2]` tables (columns a, b).
pub fn compute_bias<T: Scalar>(terms: &BiasTerms, radial: &Tensor<T>, azimuth: &Tensor<T>) -> Result<Tensor<T>> {
    terms.check_tables(radial, azimuth)?;
    let (r, a) = (radial.data(), azimuth.data());
    let out = (0..terms.n * terms.n)
        .map(|k| {
            let (ir, ia) = (terms.radial_index[k], terms.azimuth_index[k]);
            T::from_f64(
                r[2 * ir].as_f64() * terms.sin_theta[k]
                    + r[2 * ir + 1].as_f64() * terms.cos_theta[k]
                    + a[2 * ia].as_f64() * terms.sin_phi[k]
                    + a[2 * ia + 1].as_f64() * terms.cos_phi[k],
            )
        })
        .collect();
    Tensor::new(&[terms.n, terms.n], out)
}

impl<T: Scalar> Graph<T> {
    pub fn angular_bias(&self, terms: Rc<BiasTerms>, radial: &Var<T>, azimuth: &Var<T>) -> Result<Var<T>> {
        let value = compute_bias(&terms, radial.value(), azimuth.value())?;
        let (rs, as_) = (radial.shape().to_vec(), azimuth.shape().to_vec());
        Ok(self.record("angular_bias", &[radial, azimuth], value, move |g, needs| {
            let mut gr = Tensor::<T>::zeros(&rs);
            let mut ga = Tensor::<T>::zeros(&as_);
            for (k, &gv) in g.data().iter().enumerate() {
                let gv = gv.as_f64();
                let (ir, ia) = (terms.radial_index[k], terms.azimuth_index[k]);
                let rd = gr.data_mut();
                rd[2 * ir] += T::from_f64(gv * terms.sin_theta[k]);
                rd[2 * ir + 1] += T::from_f64(gv * terms.cos_theta[k]);
                let ad = ga.data_mut();
                ad[2 * ia] += T::from_f64(gv * terms.sin_phi[k]);
                ad[2 * ia + 1] += T::from_f64(gv * terms.cos_phi[k]);
            }
            vec![needs[0].then_some(gr), needs[1].then_some(ga)]
        }))
    }
}

/// `softmax(QKᵀ/√d_h + B)·V` per head on an n×d token matrix. Returns the
/// mixed tokens and one n×n probability matrix per head.
pub fn window_attention<T: Scalar>(
    g: &Graph<T>,
    tokens: &Var<T>,
    pq: &Var<T>,
    pk: &Var<T>,
    pv: &Var<T>,
    bias: &Var<T>,
    heads: usize,
) -> Result<(Var<T>, Vec<Var<T>>)> {
    let &[n, d] = tokens.shape() else {
        return Err(RstError::invalid("window_attention", format!("tokens must be n×d, got {:?}", tokens.shape())));
    };
    for p in [pq, pk, pv] {
        if p.shape() != [d, d] {
            return Err(RstError::shape("window_attention", tokens.shape(), p.shape()));
        }
    }
    if bias.shape() != [n, n] {
        return Err(RstError::shape("window_attention", &[n, n], bias.shape()));
    }
    if heads == 0 || d % heads != 0 {
        return Err(RstError::invalid("window_attention", format!("width {d} not divisible by {heads} heads")));
    }
    let q = g.matmul(tokens, pq)?;
    let k = g.matmul(tokens, pk)?;
    let v = g.matmul(tokens, pv)?;
    let dh = d / heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q.clone(), k.clone(), v.clone())
        } else {
            (
                g.slice_cols(&q, h * dh, dh)?,
                g.slice_cols(&k, h * dh, dh)?,
                g.slice_cols(&v, h * dh, dh)?,
            )
        };
        let kt = g.transpose(&kh)?;
        let logits = g.matmul(&qh, &kt)?;
        let logits = g.scale(&logits, scale);
        let logits = g.add(&logits, bias)?;
        let p = g.softmax(&logits, 1)?;
        outs.push(g.matmul(&p, &vh)?);
        probs.push(p);
    }
    let out = if heads == 1 { outs.pop().unwrap() } else { g.concat_cols(&outs)? };
    Ok((out, probs))
}

/// Tensor-level wrapper around [`window_attention`]; probabilities are
/// stacked to heads×n×n.
pub fn attend<T: Scalar>(
    tokens: &Tensor<T>,
    pq: &Tensor<T>,
    pk: &Tensor<T>,
    pv: &Tensor<T>,
    bias: &Tensor<T>,
    heads: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g = Graph::no_grad();
    let c = |t: &Tensor<T>| g.constant(t.clone());
    let (out, probs) = window_attention(&g, &c(tokens), &c(pq), &c(pk), &c(pv), &c(bias), heads)?;
    let probs = g.stack(&probs)?;
    Ok((out.value().clone(), probs.value().clone()))
}

/// Splits a C×H×W map into per-window n×C token matrices.
pub fn partition<T: Scalar>(x: &Tensor<T>, layout: &WindowLayout) -> Result<Vec<Tensor<T>>> {
    check_layout(x.shape(), layout)?;
    layout.windows.iter().map(|w| gather_tokens(x, w)).collect()
}

/// Returns every window token to its source pixel, windows taken in
/// ascending azimuth-bin order.
pub fn azimuth_patch_merge<T: Scalar>(windows: &[Tensor<T>], layout: &WindowLayout) -> Result<Tensor<T>> {
    if windows.len() != layout.windows.len() {
        return Err(RstError::invalid(
            "azimuth_patch_merge",
            format!("{} windows for a layout with {}", windows.len(), layout.windows.len()),
        ));
    }
    let c = windows.iter().find_map(|t| t.shape().get(1).copied()).unwrap_or(0);
    let mut rows = Vec::new();
    for (t, idx) in windows.iter().zip(&layout.windows) {
        if t.shape() != [idx.len(), c] {
            return Err(RstError::shape("azimuth_patch_merge", t.shape(), &[idx.len(), c]));
        }
        rows.extend_from_slice(t.data());
    }
    let order = layout.order();
    scatter_tokens(&Tensor::new(&[order.len(), c], rows)?, &order, layout.height, layout.width)
}

fn check_layout(shape: &[usize], layout: &WindowLayout) -> Result<()> {
    match shape {
        &[_, h, w] if (h, w) == (layout.height, layout.width) => Ok(()),
        s => Err(RstError::shape("rsas", s, &[layout.height, layout.width])),
    }
}

/// Window layout plus the precomputed bias terms of every non-empty window.
#[derive(Clone, Debug)]
pub struct StripPlan {
    pub layout: Rc<WindowLayout>,
    pub terms: Vec<Option<Rc<BiasTerms>>>,
    order: Rc<Vec<usize>>,
    windows: Vec<Rc<Vec<usize>>>,
}

impl StripPlan {
    pub fn new(layout: WindowLayout, theta_max: f64, mode: BiasMode) -> Result<Self> {
        let terms = (0..layout.windows.len())
            .map(|w| {
                if layout.windows[w].is_empty() {
                    Ok(None)
                } else {
                    BiasTerms::for_window(&layout, w, theta_max, mode).map(|t| Some(Rc::new(t)))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            order: Rc::new(layout.order()),
            windows: layout.windows.iter().map(|w| Rc::new(w.clone())).collect(),
            layout: Rc::new(layout),
            terms,
        })
    }
}

/// Handles for one attention block.
#[derive(Clone, Debug)]
pub struct RsasParams<T> {
    pub gamma: Var<T>,
    pub beta: Var<T>,
    pub pq: Var<T>,
    pub pk: Var<T>,
    pub pv: Var<T>,
    pub out: Var<T>,
    pub out_bias: Option<Var<T>>,
    pub bias_radial: Var<T>,
    pub bias_azimuth: Var<T>,
    pub heads: usize,
    pub eps: f64,
}

impl<T: Scalar> RsasParams<T> {
    /// Reads `{prefix}.norm.*`, `{prefix}.q|k|v`, `{prefix}.out.*` and the
    /// two bias tables.
    pub fn from_set(set: &ParamSet<T>, prefix: &str, heads: usize, eps: f64) -> Result<Self> {
        let p = |s: &str| set.get(&format!("{prefix}.{s}")).cloned();
        Ok(Self {
            gamma: p("norm.gamma")?,
            beta: p("norm.beta")?,
            pq: p("q")?,
            pk: p("k")?,
            pv: p("v")?,
            out: p("out.weight")?,
            out_bias: set.get_opt(&format!("{prefix}.out.bias")).cloned(),
            bias_radial: p("bias_radial")?,
            bias_azimuth: p("bias_azimuth")?,
            heads,
            eps,
        })
    }
}

pub struct RsasOutput<T> {
    /// Attention branch before the residual add.
    pub branch: Var<T>,
    /// Per window (empty windows give an empty list), one n×n matrix per head.
    pub probs: Vec<Vec<Var<T>>>,
}

/// Normalize, partition, attend per window with angular bias, merge, project.
pub fn rsas_branch<T: Scalar>(g: &Graph<T>, x: &Var<T>, plan: &StripPlan, p: &RsasParams<T>) -> Result<RsasOutput<T>> {
    check_layout(x.shape(), &plan.layout)?;
    let (_, h, w) = x.value().chw("rsas")?;
    let normed = affine_layer_norm(g, x, &p.gamma, &p.beta, p.eps)?;
    let mut mixed = Vec::new();
    let mut probs = Vec::with_capacity(plan.windows.len());
    for (idx, terms) in plan.windows.iter().zip(&plan.terms) {
        let Some(terms) = terms else {
            probs.push(Vec::new());
            continue;
        };
        let tokens = g.gather_tokens(&normed, Rc::clone(idx))?;
        let bias = g.angular_bias(Rc::clone(terms), &p.bias_radial, &p.bias_azimuth)?;
        let (out, pr) = window_attention(g, &tokens, &p.pq, &p.pk, &p.pv, &bias, p.heads)?;
        mixed.push(out);
        probs.push(pr);
    }
    let rows = g.concat_rows(&mixed)?;
    let merged = g.scatter_tokens(&rows, Rc::clone(&plan.order), h, w)?;
    let branch = conv(g, &merged, &p.out, p.out_bias.as_ref(), 1, 0)?;
    Ok(RsasOutput { branch, probs })
}

pub fn rsas_forward<T: Scalar>(g: &Graph<T>, x: &Var<T>, plan: &StripPlan, p: &RsasParams<T>) -> Result<Var<T>> {
    let branch = rsas_branch(g, x, plan, p)?.branch;
    g.add(x, &branch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{block_diagonal_attention, naive_attention, MacCounter};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tables(nr: usize, na: usize, rng: &mut ChaCha8Rng) -> (Tensor<f64>, Tensor<f64>) {
        (
            Tensor::uniform(&[2 * nr - 1, 2], -1.0, 1.0, rng),
            Tensor::uniform(&[2 * na - 1, 2], -1.0, 1.0, rng),
        )
    }

    #[test]
    fn diagonal_bias_is_cosine_terms_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (tr, ta) = tables(3, 4, &mut rng);
        let terms = BiasTerms::from_bins(&[0, 1, 2, 1], &[0, 3, 2, 2], 3, 4, 1.2).unwrap();
        let b = compute_bias(&terms, &tr, &ta).unwrap();
        for i in 0..4 {
            let want = tr.at(&[2, 1]) + ta.at(&[3, 1]);
            assert!((b.at(&[i, i]) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn sine_only_bias_is_antisymmetric() {
        let terms = BiasTerms::from_bins(&[0, 1, 2, 2, 0], &[0, 1, 2, 3, 3], 3, 4, 1.5).unwrap();
        let tr = Tensor::<f64>::from_fn(&[5, 2], |k| if k % 2 == 0 { 0.7 } else { 0.0 });
        let ta = Tensor::from_fn(&[7, 2], |k| if k % 2 == 0 { -0.3 } else { 0.0 });
        let b = compute_bias(&terms, &tr, &ta).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert!((b.at(&[i, j]) + b.at(&[j, i])).abs() < 1e-15);
            }
        }
        let zero = compute_bias(&terms, &Tensor::<f64>::zeros(&[5, 2]), &Tensor::zeros(&[7, 2])).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_range_bins_rejected() {
        assert!(BiasTerms::from_bins(&[0, 3], &[0, 0], 3, 1, 1.0).is_err());
        let terms = BiasTerms::from_bins(&[0, 2], &[0, 0], 3, 1, 1.0).unwrap();
        assert!(compute_bias(&terms, &Tensor::<f64>::zeros(&[3, 2]), &Tensor::zeros(&[1, 2])).is_err());
    }

    #[test]
    fn single_token_returns_value_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tok = Tensor::<f64>::uniform(&[1, 3], -1.0, 1.0, &mut rng);
        let p: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::uniform(&[3, 3], -1.0, 1.0, &mut rng)).collect();
        let (out, probs) = attend(&tok, &p[0], &p[1], &p[2], &Tensor::full(&[1, 1], 5.0), 1).unwrap();
        assert_eq!(probs.data(), &[1.0]);
        let v = crate::ops::matmul(&tok, &p[2]).unwrap();
        assert_eq!(out.data(), v.data());
    }

    #[test]
    fn zero_query_gives_mean_of_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tok = Tensor::<f64>::uniform(&[4, 2], -1.0, 1.0, &mut rng);
        let pk = Tensor::uniform(&[2, 2], -1.0, 1.0, &mut rng);
        let pv = Tensor::uniform(&[2, 2], -1.0, 1.0, &mut rng);
        let (out, _) = attend(&tok, &Tensor::zeros(&[2, 2]), &pk, &pv, &Tensor::zeros(&[4, 4]), 1).unwrap();
        let v = crate::ops::matmul(&tok, &pv).unwrap();
        for c in 0..2 {
            let mean: f64 = (0..4).map(|r| v.at(&[r, c])).sum::<f64>() / 4.0;
            for r in 0..4 {
                assert!((out.at(&[r, c]) - mean).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn matches_naive_attention_with_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for heads in [1, 2] {
            let tok = Tensor::<f64>::uniform(&[5, 4], -1.0, 1.0, &mut rng);
            let p: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::uniform(&[4, 4], -1.0, 1.0, &mut rng)).collect();
            let b = Tensor::uniform(&[5, 5], -1.0, 1.0, &mut rng);
            let (out, probs) = attend(&tok, &p[0], &p[1], &p[2], &b, heads).unwrap();
            let (want, want_p) = naive_attention(&tok, &p[0], &p[1], &p[2], &b, heads, &mut MacCounter(0));
            assert!(out.max_abs_diff(&want) < 1e-12);
            assert!(probs.max_abs_diff(&want_p) < 1e-12);
        }
    }

    #[test]
    fn merge_inverts_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (h, w, nphi) in [(4, 4, 4), (5, 7, 8), (6, 3, 1)] {
            let layout = WindowLayout::for_size(h, w, nphi, 2).unwrap();
            let x = Tensor::<f64>::uniform(&[3, h, w], -1.0, 1.0, &mut rng);
            let back = azimuth_patch_merge(&partition(&x, &layout).unwrap(), &layout).unwrap();
            assert_eq!(back, x);
        }
        let layout = WindowLayout::for_size(4, 4, 4, 2).unwrap();
        assert!(azimuth_patch_merge::<f64>(&[], &layout).is_err());
    }

    fn random_params(g: &Graph<f64>, c: usize, nr: usize, na: usize, rng: &mut ChaCha8Rng) -> RsasParams<f64> {
        let mut u = |s: &[usize]| g.param(Tensor::uniform(s, -0.6, 0.6, rng));
        RsasParams {
            gamma: u(&[c]),
            beta: u(&[c]),
            pq: u(&[c, c]),
            pk: u(&[c, c]),
            pv: u(&[c, c]),
            out: u(&[c, c, 1, 1]),
            out_bias: None,
            bias_radial: u(&[2 * nr - 1, 2]),
            bias_azimuth: u(&[2 * na - 1, 2]),
            heads: 1,
            eps: 1e-6,
        }
    }

    #[test]
    fn zero_output_projection_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = Graph::<f64>::no_grad();
        let mut p = random_params(&g, 3, 2, 4, &mut rng);
        p.out = g.constant(Tensor::zeros(&[3, 3, 1, 1]));
        let plan = StripPlan::new(WindowLayout::for_size(6, 5, 4, 2).unwrap(), 1.5, BiasMode::Bins).unwrap();
        let x = g.constant(Tensor::uniform(&[3, 6, 5], -1.0, 1.0, &mut rng));
        let y = rsas_forward(&g, &x, &plan, &p).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn matches_block_diagonal_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = Graph::<f64>::no_grad();
        let p = random_params(&g, 4, 3, 4, &mut rng);
        let layout = WindowLayout::for_size(8, 8, 4, 3).unwrap();
        let plan = StripPlan::new(layout.clone(), 1.5, BiasMode::Bins).unwrap();
        let x = g.constant(Tensor::uniform(&[4, 8, 8], -1.0, 1.0, &mut rng));
        let got = rsas_branch(&g, &x, &plan, &p).unwrap().branch;
        let (tr, ta) = (p.bias_radial.value(), p.bias_azimuth.value());
        let bias = |i: usize, j: usize| {
            let t = BiasTerms::from_bins(
                &[layout.radial_bin[i], layout.radial_bin[j]],
                &[layout.azimuth_bin[i], layout.azimuth_bin[j]],
                3,
                4,
                1.5,
            )
            .unwrap();
            compute_bias(&t, tr, ta).unwrap().at(&[0, 1])
        };
        let want = block_diagonal_attention(
            x.value(),
            p.gamma.value().data(),
            p.beta.value().data(),
            1e-6,
            p.pq.value(),
            p.pk.value(),
            p.pv.value(),
            p.out.value(),
            1,
            &layout.azimuth_bin,
            bias,
        );
        assert!(got.value().max_abs_diff(&want) < 1e-12);
    }
}
