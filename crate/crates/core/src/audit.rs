//! Oracle audits: every fast kernel and backward rule is compared against
//! the brute-force references in [`crate::oracle`] on seeded random
//! instances. Each comparison yields one [`OracleReport`].

use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dre::{dre_forward, DreParams, GateAxis};
use crate::error::{Result, RstError};
use crate::ffn::{ffn_forward, identity_spectral_weight, FfnParams};
use crate::fft::rfft2;
use crate::graph::{Fault, Graph, Var};
use crate::model::{build, forward_graph, ModelConfig, Plans};
use crate::ops::{conv2d, conv_transpose2d, deform_conv2d, matmul, softmax};
use crate::oracle::{
    naive_attention, naive_conv2d, naive_deform_conv, naive_dft2, naive_matmul, FdEstimate,
    MacCounter, OracleReport,
};
use crate::params::ParamSet;
use crate::polar::{build_polar_grid, build_sector_masks, WindowLayout};
use crate::rsas::{attend, rsas_branch, rsas_forward, BiasMode, BiasTerms, RsasParams, StripPlan};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const VALUE_TOL: f64 = 1e-5;
pub const GRAD_TOL_F32: f64 = 1e-3;
pub const GRAD_TOL_F64: f64 = 1e-6;
pub const MODEL_GRAD_TOL_F64: f64 = 1e-4;
pub const EPS_F32: f64 = 1e-3;
pub const EPS_F64: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditScope {
    Tensor,
    Dre,
    Rsas,
    Ffn,
    Model,
    All,
}

impl FromStr for AuditScope {
    type Err = RstError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "tensor" => Self::Tensor,
            "dre" => Self::Dre,
            "rsas" => Self::Rsas,
            "ffn" => Self::Ffn,
            "model" => Self::Model,
            "all" => Self::All,
            _ => return Err(RstError::Config(format!("unknown audit scope '{s}'"))),
        })
    }
}

#[derive(Clone, Debug)]
pub struct AuditOptions {
    pub seed: u64,
    /// Random instances per value comparison.
    pub instances: usize,
    pub fault: Option<Fault>,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 30,
            fault: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AuditSummary {
    pub total: usize,
    pub failed: usize,
}

type Sink<'a> = dyn FnMut(OracleReport) + 'a;

/// Runs the audits of `scope`, handing each report to `sink`.
pub fn run_audit(scope: AuditScope, opts: &AuditOptions, sink: &mut Sink) -> Result<AuditSummary> {
    let mut summary = AuditSummary::default();
    let mut emit = |r: OracleReport| {
        summary.total += 1;
        if !r.pass {
            summary.failed += 1;
        }
        sink(r);
    };
    let all = scope == AuditScope::All;
    if all || scope == AuditScope::Tensor {
        tensor_values(opts, &mut emit)?;
        for r in tensor_gradients(opts)? {
            emit(r);
        }
    }
    if all || scope == AuditScope::Dre {
        dre_audits(opts, &mut emit)?;
    }
    if all || scope == AuditScope::Rsas {
        rsas_audits(opts, &mut emit)?;
    }
    if all || scope == AuditScope::Ffn {
        ffn_audits(opts, &mut emit)?;
    }
    if all || scope == AuditScope::Model {
        emit(model_gradient_audit(opts.seed, 10, opts.fault)?);
    }
    Ok(summary)
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

fn tensor_values(opts: &AuditOptions, emit: &mut dyn FnMut(OracleReport)) -> Result<()> {
    let mut rng = rng_for(opts.seed, 1);
    for i in 0..opts.instances {
        let (m, k, n) = (rng.gen_range(1..=16), rng.gen_range(1..=16), rng.gen_range(1..=16));
        let a = uniform(&[m, k], &mut rng);
        let b = uniform(&[k, n], &mut rng);
        let got = matmul(&a.cast::<f32>(), &b.cast::<f32>())?;
        let want = naive_matmul(a.data(), b.data(), m, k, n);
        emit(OracleReport::abs("matmul", format!("#{i} {m}x{k}x{n}"), &got.to_f64_vec(), &want, VALUE_TOL));
    }
    for i in 0..opts.instances {
        let (ci, co) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let (h, w) = (rng.gen_range(3..=12), rng.gen_range(3..=12));
        let kk = rng.gen_range(1..=3);
        let (stride, pad) = (rng.gen_range(1..=2), rng.gen_range(0..=1));
        let x = uniform(&[ci, h, w], &mut rng);
        let k = uniform(&[co, ci, kk, kk], &mut rng);
        let got = conv2d(&x.cast::<f32>(), &k.cast::<f32>(), stride, pad)?;
        let want = naive_conv2d(&x, &k, stride, pad);
        let desc = format!("#{i} {ci}->{co} {h}x{w} k{kk} s{stride} p{pad}");
        emit(OracleReport::abs("conv2d", desc, &got.to_f64_vec(), &want.to_f64_vec(), VALUE_TOL));
    }
    for i in 0..opts.instances {
        let (ci, co) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let (h, w) = (2 * rng.gen_range(1..=5), 2 * rng.gen_range(1..=5));
        let x = uniform(&[ci, h, w], &mut rng);
        let k = uniform(&[co, ci, 2, 2], &mut rng);
        let y = uniform(&[co, h / 2, w / 2], &mut rng);
        let lhs: f64 = dot(&naive_conv2d(&x, &k, 2, 0), &y);
        let rhs: f64 = dot(&x, &conv_transpose2d(&y.cast::<f32>(), &k.cast::<f32>(), 2)?.cast());
        emit(OracleReport::abs("conv_transpose2d", format!("#{i} adjoint {h}x{w}"), &[rhs], &[lhs], VALUE_TOL));
    }
    for i in 0..opts.instances {
        let (h, w) = (1 << rng.gen_range(0..=4), 1 << rng.gen_range(0..=4));
        let x = uniform(&[1, h, w], &mut rng);
        let spec = rfft2(&x.cast::<f32>())?;
        let full = naive_dft2(x.data(), h, w);
        let (mut got, mut want) = (Vec::new(), Vec::new());
        for u in 0..h {
            for v in 0..spec.half_width() {
                let z = spec.at(0, u, v);
                got.extend([z.re as f64, z.im as f64]);
                want.extend([full[u * w + v].0, full[u * w + v].1]);
            }
        }
        emit(OracleReport::abs("rfft2", format!("#{i} {h}x{w}"), &got, &want, VALUE_TOL));
    }
    for i in 0..opts.instances {
        let (r, c) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let x = Tensor::<f64>::uniform(&[r, c], -20.0, 20.0, &mut rng);
        let p = softmax(&x.cast::<f32>(), 1)?;
        let sums: Vec<f64> = p.to_f64_vec().chunks(c).map(|row| row.iter().sum()).collect();
        emit(OracleReport::abs("softmax", format!("#{i} row sums {r}x{c}"), &sums, &vec![1.0; r], 1e-6));
    }
    Ok(())
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// A differentiable computation on a list of inputs.
pub type GradFn<'a, T> = dyn Fn(&Graph<T>, &[Var<T>]) -> Result<Var<T>> + 'a;

/// Compares backward-mode gradients of `Σ R ⊙ f(inputs)` (R fixed random)
/// with central differences at up to `samples` entries per input.
#[allow(clippy::too_many_arguments)]
pub fn grad_check<T: Scalar>(
    op: &str,
    instance: impl Into<String>,
    inputs: &[Tensor<T>],
    f: &GradFn<T>,
    samples: usize,
    eps: f64,
    tol: f64,
    fault: Option<Fault>,
    rng: &mut ChaCha8Rng,
) -> Result<OracleReport> {
    let probe = f(&Graph::no_grad(), &inputs.iter().map(|t| Graph::no_grad().constant(t.clone())).collect::<Vec<_>>())?;
    let weights: Tensor<f64> = uniform(probe.shape(), rng);
    let g = match fault {
        Some(ft) => Graph::new().with_fault(ft),
        None => Graph::new(),
    };
    let vars: Vec<Var<T>> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&g, &vars)?;
    let loss = g.mul(&out, &g.constant(weights.cast()))?;
    let loss = g.sum(&loss);
    let grads = g.backward(&loss)?;
    let analytic: Vec<f64> = vars.iter().flat_map(|v| grads.get(v).to_f64_vec()).collect();

    let flat: Vec<f64> = inputs.iter().flat_map(|t| t.to_f64_vec()).collect();
    let mut indices = Vec::new();
    let mut offset = 0;
    for t in inputs {
        let n = t.numel();
        indices.extend(sample(rng, n, samples.min(n)).into_iter().map(|i| offset + i));
        offset += n;
    }
    let shapes: Vec<Vec<usize>> = inputs.iter().map(|t| t.shape().to_vec()).collect();
    let eval = |params: &[f64]| -> (f64, Vec<f64>) {
        let g = Graph::<T>::no_grad();
        let mut at = 0;
        let mut used = Vec::with_capacity(params.len());
        let vars: Vec<Var<T>> = shapes
            .iter()
            .map(|s| {
                let n: usize = s.iter().product();
                let t = Tensor::<T>::from_f64(s, &params[at..at + n]).unwrap();
                used.extend(t.to_f64_vec());
                at += n;
                g.constant(t)
            })
            .collect();
        let value = match f(&g, &vars) {
            Ok(out) => out.value().to_f64_vec().iter().zip(weights.data()).map(|(a, b)| a * b).sum(),
            Err(_) => f64::NAN,
        };
        (value, used)
    };
    let estimates = crate::oracle::finite_diff_grad(eval, &flat, &indices, eps)?;
    let (mut got, mut want, mut kinks) = (Vec::new(), Vec::new(), 0);
    for (&i, e) in indices.iter().zip(&estimates) {
        match e {
            FdEstimate::Smooth(v) => {
                got.push(analytic[i]);
                want.push(*v);
            }
            FdEstimate::Kink { .. } => kinks += 1,
        }
    }
    let mut desc = instance.into();
    desc.push_str(&format!(" {} {} samples", T::NAME, got.len()));
    if kinks > 0 {
        desc.push_str(&format!(", {kinks} kinks excluded"));
    }
    Ok(OracleReport::rel(&format!("grad:{op}"), desc, &got, &want, tol))
}

fn tensor_gradients(opts: &AuditOptions) -> Result<Vec<OracleReport>> {
    let mut rng = rng_for(opts.seed, 2);
    let mut out = Vec::new();
    let mut check = |op: &str, shapes: &[&[usize]], f: &GradFn<f32>, rng: &mut ChaCha8Rng| -> Result<()> {
        let inputs: Vec<Tensor<f32>> = shapes.iter().map(|s| uniform(s, rng).cast()).collect();
        let desc = format!("{shapes:?}");
        out.push(grad_check(op, desc, &inputs, f, 12, EPS_F32, GRAD_TOL_F32, opts.fault, rng)?);
        Ok(())
    };
    check("add", &[&[2, 3, 4], &[3, 1]], &|g, v| g.add(&v[0], &v[1]), &mut rng)?;
    check("sub", &[&[4, 3], &[4, 3]], &|g, v| g.sub(&v[0], &v[1]), &mut rng)?;
    check("mul", &[&[2, 3, 4], &[2, 1, 4]], &|g, v| g.mul(&v[0], &v[1]), &mut rng)?;
    check("scale", &[&[5]], &|g, v| Ok(g.scale(&v[0], 1.7)), &mut rng)?;
    check("gelu", &[&[3, 5]], &|g, v| Ok(g.gelu(&v[0])), &mut rng)?;
    check("abs", &[&[3, 5]], &|g, v| Ok(g.abs(&v[0])), &mut rng)?;
    check("layer_norm", &[&[4, 3, 3]], &|g, v| g.layer_norm(&v[0], 1e-6), &mut rng)?;
    check("sum", &[&[2, 3]], &|g, v| Ok(g.sum(&v[0])), &mut rng)?;
    check("mean", &[&[2, 3]], &|g, v| Ok(g.mean(&v[0])), &mut rng)?;
    check("sum_axis0", &[&[3, 2, 4]], &|g, v| g.sum_axis0(&v[0]), &mut rng)?;
    check("matmul", &[&[4, 5], &[5, 3]], &|g, v| g.matmul(&v[0], &v[1]), &mut rng)?;
    check("transpose", &[&[4, 5]], &|g, v| g.transpose(&v[0]), &mut rng)?;
    check("softmax", &[&[3, 2, 4]], &|g, v| g.softmax(&v[0], 1), &mut rng)?;
    check("conv2d", &[&[2, 6, 5], &[3, 2, 3, 3]], &|g, v| g.conv2d(&v[0], &v[1], 1, 1), &mut rng)?;
    check("conv2d", &[&[2, 6, 6], &[3, 2, 2, 2]], &|g, v| g.conv2d(&v[0], &v[1], 2, 0), &mut rng)?;
    check("conv_transpose2d", &[&[3, 3, 2], &[3, 2, 2, 2]], &|g, v| g.conv_transpose2d(&v[0], &v[1], 2), &mut rng)?;
    check("reshape", &[&[2, 6]], &|g, v| g.reshape(&v[0], &[3, 4]), &mut rng)?;
    check("reflect_pad", &[&[2, 3, 5]], &|g, v| g.reflect_pad(&v[0], 8, 8), &mut rng)?;
    check("crop", &[&[2, 5, 5]], &|g, v| g.crop(&v[0], 3, 4), &mut rng)?;
    check(
        "gather_scatter",
        &[&[2, 3, 3]],
        &|g, v| {
            let perm = std::rc::Rc::new(vec![4, 0, 8, 1, 7, 2, 6, 3, 5]);
            let t = g.gather_tokens(&v[0], perm.clone())?;
            let t = g.scale(&t, 2.0);
            g.scatter_tokens(&t, perm, 3, 3)
        },
        &mut rng,
    )?;
    check(
        "concat_slice",
        &[&[2, 3], &[4, 3]],
        &|g, v| {
            let rows = g.concat_rows(&[v[0].clone(), v[1].clone()])?;
            let a = g.slice_cols(&rows, 0, 1)?;
            let b = g.slice_cols(&rows, 1, 2)?;
            let ab = g.mul(&a, &b)?;
            g.concat_cols(&[ab, rows])
        },
        &mut rng,
    )?;
    check("stack", &[&[2, 3], &[2, 3]], &|g, v| g.stack(&[v[0].clone(), v[1].clone()]), &mut rng)?;
    check(
        "spectral_reweight",
        &[&[2, 8, 8], &[2, 8, 5, 2]],
        &|g, v| g.spectral_reweight(&v[0], &v[1], 8),
        &mut rng,
    )?;
    check("rfft2_magnitude", &[&[2, 8, 4]], &|g, v| g.rfft2_magnitude(&v[0]), &mut rng)?;
    let (gx, go, gk) = deform_instance(&mut rng, 2, 5, 5);
    let inputs = [gx.cast::<f32>(), go.cast(), gk.cast()];
    out.push(grad_check(
        "deform_conv2d",
        "2x5x5 -> 3",
        &inputs,
        &|g, v| g.deform_conv2d(&v[0], &v[1], &v[2]),
        12,
        EPS_F32,
        GRAD_TOL_F32,
        opts.fault,
        &mut rng,
    )?);
    Ok(out)
}

/// Input, offsets and kernel with every sampling point at least 0.05 px
/// away from the integer lattice.
pub fn deform_instance(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>) {
    let x = uniform(&[c, h, w], rng);
    let offsets = Tensor::from_fn(&[18, h, w], |_| {
        let whole = rng.gen_range(-2..=1) as f64;
        whole + rng.gen_range(0.05..0.95)
    });
    let k = uniform(&[3, c, 3, 3], rng);
    (x, offsets, k)
}

fn dre_audits(opts: &AuditOptions, emit: &mut dyn FnMut(OracleReport)) -> Result<()> {
    let mut rng = rng_for(opts.seed, 3);
    for i in 0..opts.instances {
        let (h, w) = (rng.gen_range(3..=10), rng.gen_range(3..=10));
        let (x, off, k) = deform_instance(&mut rng, 2, h, w);
        let got = deform_conv2d(&x.cast::<f32>(), &off.cast(), &k.cast())?;
        let want = naive_deform_conv(&x, &off, &k);
        emit(OracleReport::abs("deform_conv2d", format!("#{i} {h}x{w}"), &got.to_f64_vec(), &want.to_f64_vec(), VALUE_TOL));
    }
    let masks = build_sector_masks(&build_polar_grid(16, 16), 4)?;
    for i in 0..opts.instances.min(20) {
        let x = Tensor::<f32>::uniform(&[3, 16, 16], 0.0, 1.0, &mut rng);
        let kd = Tensor::<f32>::uniform(&[8, 3, 3, 3], -0.5, 0.5, &mut rng);
        let g = Graph::<f32>::no_grad();
        let p = DreParams {
            offset_kernels: (0..4).map(|_| g.constant(Tensor::zeros(&[18, 3, 3, 3]))).collect(),
            offset_biases: vec![None; 4],
            deform_kernel: g.constant(kd.clone()),
            deform_bias: None,
            gate_axis: GateAxis::Sector,
        };
        let got = dre_forward(&g, &g.constant(x.clone()), &masks, &p)?;
        let want = naive_conv2d(&x.cast(), &kd.cast(), 1, 1);
        emit(OracleReport::abs(
            "dre_zero_offset",
            format!("#{i} 3x16x16"),
            &got.value().to_f64_vec(),
            &want.to_f64_vec(),
            1e-6,
        ));
    }
    emit(dre_gradient::<f32>(&mut rng, EPS_F32, GRAD_TOL_F32, opts.fault)?);
    emit(dre_gradient::<f64>(&mut rng, EPS_F64, GRAD_TOL_F64, opts.fault)?);
    Ok(())
}

fn dre_gradient<T: Scalar>(rng: &mut ChaCha8Rng, eps: f64, tol: f64, fault: Option<Fault>) -> Result<OracleReport> {
    let masks = build_sector_masks(&build_polar_grid(8, 8), 4)?;
    // offset biases near half a pixel keep every sample off the integer lattice
    let mut inputs: Vec<Tensor<T>> = vec![Tensor::uniform(&[3, 8, 8], 0.0, 1.0, rng)];
    inputs.extend((0..4).map(|_| Tensor::uniform(&[18, 3, 3, 3], -0.01, 0.01, rng)));
    inputs.extend((0..4).map(|_| Tensor::uniform(&[18], 0.35, 0.65, rng)));
    inputs.push(Tensor::uniform(&[4, 3, 3, 3], -1.0, 1.0, rng));
    let f = |g: &Graph<T>, v: &[Var<T>]| {
        let p = DreParams {
            offset_kernels: v[1..5].to_vec(),
            offset_biases: v[5..9].iter().cloned().map(Some).collect(),
            deform_kernel: v[9].clone(),
            deform_bias: None,
            gate_axis: GateAxis::Sector,
        };
        dre_forward(g, &v[0], &masks, &p)
    };
    grad_check("dre", "3x8x8 -> 4", &inputs, &f, 10, eps, tol, fault, rng)
}

fn rsas_audits(opts: &AuditOptions, emit: &mut dyn FnMut(OracleReport)) -> Result<()> {
    let mut rng = rng_for(opts.seed, 4);
    for i in 0..opts.instances {
        let n = rng.gen_range(1..=12);
        let heads = [1, 2][rng.gen_range(0..2)];
        let d = heads * rng.gen_range(1..=4);
        let tok = uniform(&[n, d], &mut rng);
        let p: Vec<Tensor<f64>> = (0..3).map(|_| uniform(&[d, d], &mut rng)).collect();
        let b = uniform(&[n, n], &mut rng);
        let c = |t: &Tensor<f64>| t.cast::<f32>();
        let (got, probs) = attend(&c(&tok), &c(&p[0]), &c(&p[1]), &c(&p[2]), &c(&b), heads)?;
        let (want, _) = naive_attention(&tok, &p[0], &p[1], &p[2], &b, heads, &mut MacCounter(0));
        let desc = format!("#{i} n={n} d={d} heads={heads}");
        emit(OracleReport::abs("window_attention", desc.clone(), &got.to_f64_vec(), &want.to_f64_vec(), VALUE_TOL));
        let sums: Vec<f64> = probs.to_f64_vec().chunks(n).map(|r| r.iter().sum()).collect();
        emit(OracleReport::abs("attention_rows", desc, &sums, &vec![1.0; sums.len()], 1e-6));
    }
    let plan = StripPlan::new(WindowLayout::for_size(4, 4, 4, 2)?, std::f64::consts::FRAC_PI_2, BiasMode::Bins)?;
    let shapes: [&[usize]; 9] = [&[3, 4, 4], &[3], &[3], &[3, 3], &[3, 3], &[3, 3], &[3, 3, 1, 1], &[3, 2], &[7, 2]];
    let inputs: Vec<Tensor<f32>> = shapes.iter().map(|s| uniform(s, &mut rng).cast()).collect();
    let f = |g: &Graph<f32>, v: &[Var<f32>]| {
        let p = RsasParams {
            gamma: v[1].clone(),
            beta: v[2].clone(),
            pq: v[3].clone(),
            pk: v[4].clone(),
            pv: v[5].clone(),
            out: v[6].clone(),
            out_bias: None,
            bias_radial: v[7].clone(),
            bias_azimuth: v[8].clone(),
            heads: 1,
            eps: 1e-6,
        };
        rsas_forward(g, &v[0], &plan, &p)
    };
    emit(grad_check("rsas", "3x4x4", &inputs, &f, 10, EPS_F32, GRAD_TOL_F32, opts.fault, &mut rng)?);
    let terms = std::rc::Rc::new(BiasTerms::from_bins(&[0, 1, 2, 1], &[0, 1, 1, 3], 3, 4, 1.2)?);
    let bias_inputs = [uniform(&[5, 2], &mut rng).cast::<f32>(), uniform(&[7, 2], &mut rng).cast()];
    let fb = |g: &Graph<f32>, v: &[Var<f32>]| g.angular_bias(terms.clone(), &v[0], &v[1]);
    emit(grad_check("angular_bias", "4 tokens", &bias_inputs, &fb, 10, EPS_F32, GRAD_TOL_F32, opts.fault, &mut rng)?);

    // window locality of the pre-residual branch
    let layout = WindowLayout::for_size(8, 8, 4, 3)?;
    let plan = StripPlan::new(layout.clone(), 1.5, BiasMode::Bins)?;
    let g = Graph::<f64>::no_grad();
    let params: Vec<Var<f64>> = shapes[1..]
        .iter()
        .map(|s| {
            let s = s.iter().map(|&d| if d == 3 { 4 } else { d }).collect::<Vec<_>>();
            g.constant(uniform(&s, &mut rng))
        })
        .collect();
    let p = RsasParams {
        gamma: params[0].clone(),
        beta: params[1].clone(),
        pq: params[2].clone(),
        pk: params[3].clone(),
        pv: params[4].clone(),
        out: params[5].clone(),
        out_bias: None,
        bias_radial: g.constant(uniform(&[5, 2], &mut rng)),
        bias_azimuth: g.constant(uniform(&[7, 2], &mut rng)),
        heads: 1,
        eps: 1e-6,
    };
    for i in 0..opts.instances.min(10) {
        let x = uniform(&[4, 8, 8], &mut rng);
        let base = rsas_branch(&g, &g.constant(x.clone()), &plan, &p)?.branch;
        let pixel = rng.gen_range(0..64);
        let mut xp = x.clone();
        for ch in 0..4 {
            xp.data_mut()[ch * 64 + pixel] += 0.5;
        }
        let moved = rsas_branch(&g, &g.constant(xp), &plan, &p)?.branch;
        let win = layout.azimuth_bin[pixel];
        let (mut got, mut want) = (Vec::new(), Vec::new());
        for q in (0..64).filter(|&q| layout.azimuth_bin[q] != win) {
            for ch in 0..4 {
                got.push(moved.value().data()[ch * 64 + q]);
                want.push(base.value().data()[ch * 64 + q]);
            }
        }
        emit(OracleReport::abs("window_locality", format!("#{i} pixel {pixel}"), &got, &want, 0.0));
    }
    Ok(())
}

fn ffn_audits(opts: &AuditOptions, emit: &mut dyn FnMut(OracleReport)) -> Result<()> {
    let mut rng = rng_for(opts.seed, 5);
    for i in 0..opts.instances.min(10) {
        let x = uniform(&[2, 16, 8], &mut rng).cast::<f32>();
        let y = crate::ops::spectral_reweight(&x, &identity_spectral_weight(2, 8), 8)?;
        emit(OracleReport::abs("spectral_identity", format!("#{i} 2x16x8"), &y.to_f64_vec(), &x.to_f64_vec(), 1e-6));
    }
    let shapes: [&[usize]; 6] = [&[2, 8, 8], &[2], &[2], &[2, 8, 5, 2], &[4, 2, 1, 1], &[2, 4, 1, 1]];
    let inputs: Vec<Tensor<f32>> = shapes.iter().map(|s| uniform(s, &mut rng).cast()).collect();
    let f = |g: &Graph<f32>, v: &[Var<f32>]| {
        let p = FfnParams {
            gamma: v[1].clone(),
            beta: v[2].clone(),
            spectral: v[3].clone(),
            fc1: v[4].clone(),
            fc1_bias: None,
            fc2: v[5].clone(),
            fc2_bias: None,
            patch: 8,
            eps: 1e-6,
        };
        ffn_forward(g, &v[0], &p)
    };
    emit(grad_check("ffn", "2x8x8", &inputs, &f, 10, EPS_F32, GRAD_TOL_F32, opts.fault, &mut rng)?);
    Ok(())
}

/// Full-network gradient audit in f64 on a 3×16×16 input, tiny config,
/// with random offset kernels and bias tables so every path is active.
pub fn model_gradient_audit(seed: u64, samples: usize, fault: Option<Fault>) -> Result<OracleReport> {
    let mut rng = rng_for(seed, 6);
    let cfg = ModelConfig::tiny();
    let mut ws = build::<f64>(&cfg, seed)?;
    for (name, t) in ws.iter_mut() {
        if name.starts_with("dre.offset") {
            *t = Tensor::uniform(t.shape(), -0.05, 0.05, &mut rng);
        } else if name.contains("bias_") || name.ends_with("beta") {
            *t = Tensor::uniform(t.shape(), -0.5, 0.5, &mut rng);
        }
    }
    let x = Tensor::<f64>::uniform(&[3, 16, 16], 0.0, 1.0, &mut rng);
    let plans = Plans::new(&cfg, 16, 16)?;
    let weights = uniform(&[3, 16, 16], &mut rng);
    let g = match fault {
        Some(ft) => Graph::new().with_fault(ft),
        None => Graph::new(),
    };
    let ps = ParamSet::track(&g, &ws);
    let out = forward_graph(&g, &g.constant(x.clone()), &ps, &cfg, &plans)?;
    let loss = g.sum(&g.mul(&out, &g.constant(weights.clone()))?);
    let grads = ps.gradients(&ws, &g.backward(&loss)?);
    let analytic: Vec<f64> = grads.iter().flat_map(|(_, t)| t.to_f64_vec()).collect();
    let flat = ws.flatten();
    let indices = sample(&mut rng, flat.len(), samples).into_vec();
    let mut probe = ws.clone();
    let eval = |params: &[f64]| {
        probe.assign_flat(params);
        let g = Graph::no_grad();
        let ps = ParamSet::constants(&g, &probe);
        let out = forward_graph(&g, &g.constant(x.clone()), &ps, &cfg, &plans).unwrap();
        let v = out.value().data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        (v, params.to_vec())
    };
    let est = crate::oracle::finite_diff_grad(eval, &flat, &indices, EPS_F64)?;
    let (mut got, mut want) = (Vec::new(), Vec::new());
    let names: Vec<&str> = ws.names().collect();
    let mut sampled = Vec::new();
    for (&i, e) in indices.iter().zip(&est) {
        if let Some(v) = e.value() {
            got.push(analytic[i]);
            want.push(v);
            sampled.push(param_name_at(&ws, &names, i));
        }
    }
    let desc = format!("tiny 3x16x16 f64 params [{}]", sampled.join(", "));
    Ok(OracleReport::rel("grad:model", desc, &got, &want, MODEL_GRAD_TOL_F64))
}

fn param_name_at(ws: &crate::params::WeightStore<f64>, names: &[&str], flat_index: usize) -> String {
    let mut at = 0;
    for (n, (_, t)) in names.iter().zip(ws.iter()) {
        if flat_index < at + t.numel() {
            return format!("{n}[{}]", flat_index - at);
        }
        at += t.numel();
    }
    String::from("?")
}
