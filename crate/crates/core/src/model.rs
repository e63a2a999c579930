//! The full restoration network: DRE embedding, FFN-only encoder, RSAS+FFN
//! decoder with additive skips, and a 3×3 head predicting the residual.

use std::f64::consts::FRAC_PI_2;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dre::{dre_forward, DreParams, GateAxis, KERNEL, OFFSET_GROUPS};
use crate::error::{Result, RstError};
use crate::ffn::{ffn_forward, identity_spectral_weight, spectral_shape, FfnParams};
use crate::graph::{Graph, Var};
use crate::layers::{add_channel_bias, conv, round_up};
use crate::params::{ParamSet, WeightStore};
use crate::polar::{build_polar_grid, build_sector_masks, SectorMaskSet, WindowLayout};
use crate::rsas::{rsas_forward, BiasMode, RsasParams, StripPlan};
use crate::scalar::{Precision, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub levels: usize,
    pub blocks: Vec<usize>,
    /// Width of level 0; doubles per level.
    pub channels: usize,
    pub sectors: usize,
    pub n_phi: Vec<usize>,
    pub n_r: Vec<usize>,
    pub theta_max: f64,
    pub patch: usize,
    pub heads: usize,
    pub ffn_expansion: usize,
    /// Adds biases to every convolution-type layer.
    pub bias: bool,
    /// One offset kernel shared by all sectors instead of one per sector.
    pub share_offset_kernels: bool,
    pub gate_axis: GateAxis,
    pub bias_mode: BiasMode,
    pub ln_eps: f64,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            blocks: vec![6, 6, 12],
            channels: 32,
            sectors: 4,
            n_phi: vec![8; 3],
            n_r: vec![8; 3],
            theta_max: FRAC_PI_2,
            patch: 8,
            heads: 1,
            ffn_expansion: 2,
            bias: false,
            share_offset_kernels: false,
            gate_axis: GateAxis::Sector,
            bias_mode: BiasMode::Bins,
            ln_eps: 1e-6,
            precision: Precision::F32,
        }
    }
}

impl ModelConfig {
    /// Two levels, sixteen channels, one block each.
    pub fn tiny() -> Self {
        Self {
            levels: 2,
            blocks: vec![1, 1],
            channels: 16,
            sectors: 4,
            n_phi: vec![4, 4],
            n_r: vec![4, 4],
            ..Self::default()
        }
    }

    pub fn width(&self, level: usize) -> usize {
        self.channels << level
    }

    /// Inputs are reflect-padded to a multiple of this.
    pub fn pad_multiple(&self) -> usize {
        (1 << (self.levels - 1)) * self.patch
    }

    pub fn padded_size(&self, h: usize, w: usize) -> (usize, usize) {
        let m = self.pad_multiple();
        (round_up(h, m), round_up(w, m))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(RstError::Config(m));
        if self.levels == 0 || self.levels > 8 {
            return fail(format!("levels must be in 1..=8, got {}", self.levels));
        }
        for (name, v) in [("blocks", &self.blocks), ("n_phi", &self.n_phi), ("n_r", &self.n_r)] {
            if v.len() != self.levels {
                return fail(format!("{name} has {} entries for {} levels", v.len(), self.levels));
            }
            if v.contains(&0) {
                return fail(format!("{name} entries must be at least 1"));
            }
        }
        for (name, v) in [
            ("channels", self.channels),
            ("sectors", self.sectors),
            ("heads", self.heads),
            ("ffn_expansion", self.ffn_expansion),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if !self.patch.is_power_of_two() {
            return fail(format!("patch must be a power of two, got {}", self.patch));
        }
        if !self.channels.is_multiple_of(self.heads) {
            return fail(format!("{} channels not divisible by {} heads", self.channels, self.heads));
        }
        if !self.theta_max.is_finite() || self.ln_eps.is_nan() || self.ln_eps <= 0.0 {
            return fail("theta_max must be finite and ln_eps positive".into());
        }
        Ok(())
    }

    /// Every parameter name and shape in store order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut push = |n: String, s: Vec<usize>| out.push((n, s));
        let k = KERNEL;
        let offset_names: Vec<String> = if self.share_offset_kernels {
            vec!["dre.offset.shared".into()]
        } else {
            (0..self.sectors).map(|i| format!("dre.offset.{i}")).collect()
        };
        for n in offset_names {
            push(format!("{n}.weight"), vec![OFFSET_GROUPS, 3, k, k]);
            if self.bias {
                push(format!("{n}.bias"), vec![OFFSET_GROUPS]);
            }
        }
        push("dre.deform.weight".into(), vec![self.channels, 3, k, k]);
        if self.bias {
            push("dre.deform.bias".into(), vec![self.channels]);
        }
        let ffn = |push: &mut dyn FnMut(String, Vec<usize>), p: &str, c: usize| {
            let e = self.ffn_expansion * c;
            push(format!("{p}.norm.gamma"), vec![c]);
            push(format!("{p}.norm.beta"), vec![c]);
            push(format!("{p}.spectral"), spectral_shape(c, self.patch).to_vec());
            push(format!("{p}.fc1.weight"), vec![e, c, 1, 1]);
            if self.bias {
                push(format!("{p}.fc1.bias"), vec![e]);
            }
            push(format!("{p}.fc2.weight"), vec![c, e, 1, 1]);
            if self.bias {
                push(format!("{p}.fc2.bias"), vec![c]);
            }
        };
        for l in 0..self.levels {
            let c = self.width(l);
            for b in 0..self.blocks[l] {
                ffn(&mut push, &format!("encoder.{l}.block.{b}.ffn"), c);
            }
            if l + 1 < self.levels {
                push(format!("encoder.{l}.down.weight"), vec![self.width(l + 1), c, 2, 2]);
                if self.bias {
                    push(format!("encoder.{l}.down.bias"), vec![self.width(l + 1)]);
                }
            }
        }
        for l in (0..self.levels).rev() {
            let c = self.width(l);
            if l + 1 < self.levels {
                push(format!("decoder.{l}.up.weight"), vec![self.width(l + 1), c, 2, 2]);
                if self.bias {
                    push(format!("decoder.{l}.up.bias"), vec![c]);
                }
            }
            for b in 0..self.blocks[l] {
                let p = format!("decoder.{l}.block.{b}");
                push(format!("{p}.attn.norm.gamma"), vec![c]);
                push(format!("{p}.attn.norm.beta"), vec![c]);
                for m in ["q", "k", "v"] {
                    push(format!("{p}.attn.{m}"), vec![c, c]);
                }
                push(format!("{p}.attn.out.weight"), vec![c, c, 1, 1]);
                if self.bias {
                    push(format!("{p}.attn.out.bias"), vec![c]);
                }
                push(format!("{p}.attn.bias_radial"), vec![2 * self.n_r[l] - 1, 2]);
                push(format!("{p}.attn.bias_azimuth"), vec![2 * self.n_phi[l] - 1, 2]);
                ffn(&mut push, &format!("{p}.ffn"), c);
            }
        }
        push("head.weight".into(), vec![3, self.channels, k, k]);
        if self.bias {
            push("head.bias".into(), vec![3]);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

enum Init {
    Zeros,
    Ones,
    Spectral,
    Uniform(f64),
}

fn init_rule(name: &str, shape: &[usize]) -> Init {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    if name.starts_with("dre.offset.") || leaf == "bias" || leaf == "beta" || leaf.starts_with("bias_") {
        return Init::Zeros;
    }
    match leaf {
        "gamma" => Init::Ones,
        "spectral" => Init::Spectral,
        _ => {
            let fan_in = if name.ends_with(".up.weight") {
                shape[0] * shape[2] * shape[3]
            } else {
                shape[1..].iter().product()
            };
            Init::Uniform(1.0 / (fan_in as f64).sqrt())
        }
    }
}

/// Deterministic seeded initialization.
pub fn build<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<WeightStore<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ws = WeightStore::new();
    for (name, shape) in cfg.param_shapes() {
        let t = match init_rule(&name, &shape) {
            Init::Zeros => Tensor::zeros(&shape),
            Init::Ones => Tensor::ones(&shape),
            Init::Spectral => identity_spectral_weight(shape[0], shape[1]),
            Init::Uniform(a) => Tensor::uniform(&shape, -a, a, &mut rng),
        };
        ws.insert(name, t)?;
    }
    Ok(ws)
}

/// Fails unless `ws` holds exactly the tensors `cfg` expects, in order.
pub fn check_weights<T: Scalar>(cfg: &ModelConfig, ws: &WeightStore<T>) -> Result<()> {
    let want = cfg.param_shapes();
    if want.len() != ws.len() {
        return Err(RstError::Config(format!(
            "weights hold {} tensors, config expects {}",
            ws.len(),
            want.len()
        )));
    }
    for ((name, shape), (got_name, t)) in want.iter().zip(ws.iter()) {
        if name != got_name || shape.as_slice() != t.shape() {
            return Err(RstError::Config(format!(
                "weights tensor '{got_name}' {:?} does not match expected '{name}' {shape:?}",
                t.shape()
            )));
        }
    }
    Ok(())
}

/// Size-dependent geometry: sector masks and per-level strip windows.
#[derive(Clone, Debug)]
pub struct Plans {
    pub height: usize,
    pub width: usize,
    pub padded: (usize, usize),
    pub masks: SectorMaskSet,
    pub strips: Vec<StripPlan>,
}

impl Plans {
    pub fn new(cfg: &ModelConfig, height: usize, width: usize) -> Result<Self> {
        cfg.validate()?;
        let min = 1 << (cfg.levels - 1);
        if height < min || width < min {
            return Err(RstError::invalid(
                "forward",
                format!("{height}×{width} input is below the {min}×{min} minimum"),
            ));
        }
        let (ph, pw) = cfg.padded_size(height, width);
        let masks = build_sector_masks(&build_polar_grid(ph, pw), cfg.sectors)?;
        let strips = (0..cfg.levels)
            .map(|l| {
                let layout = WindowLayout::for_size(ph >> l, pw >> l, cfg.n_phi[l], cfg.n_r[l])?;
                StripPlan::new(layout, cfg.theta_max, cfg.bias_mode)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            height,
            width,
            padded: (ph, pw),
            masks,
            strips,
        })
    }
}

pub struct ForwardOutput<T> {
    pub output: Var<T>,
    /// Predicted residual on the padded grid.
    pub residual: Var<T>,
    pub embedding: Var<T>,
    /// Output of each encoder level after its blocks.
    pub encoder: Vec<Var<T>>,
    /// Output of each decoder level after its blocks.
    pub decoder: Vec<Var<T>>,
}

/// Runs the network on a 3×H×W image whose geometry matches `plans`.
pub fn forward_detailed<T: Scalar>(
    g: &Graph<T>,
    x: &Var<T>,
    ps: &ParamSet<T>,
    cfg: &ModelConfig,
    plans: &Plans,
) -> Result<ForwardOutput<T>> {
    let (c, h, w) = x.value().chw("forward")?;
    if c != 3 || (h, w) != (plans.height, plans.width) {
        return Err(RstError::shape("forward", x.shape(), &[3, plans.height, plans.width]));
    }
    let (ph, pw) = plans.padded;
    let xp = if (ph, pw) == (h, w) { x.clone() } else { g.reflect_pad(x, ph, pw)? };

    let dre = DreParams::from_set(ps, cfg.sectors, cfg.share_offset_kernels, cfg.gate_axis)?;
    let embedding = dre_forward(g, &xp, &plans.masks, &dre)?;

    let mut encoder = Vec::with_capacity(cfg.levels);
    let mut f = embedding.clone();
    for l in 0..cfg.levels {
        g.push_scope(format!("encoder.{l}"));
        for b in 0..cfg.blocks[l] {
            let prefix = format!("encoder.{l}.block.{b}.ffn");
            let p = FfnParams::from_set(ps, &prefix, cfg.patch, cfg.ln_eps)?;
            f = g.scoped(format!("block.{b}.ffn"), || ffn_forward(g, &f, &p))?;
        }
        encoder.push(f.clone());
        if l + 1 < cfg.levels {
            let k = ps.get(&format!("encoder.{l}.down.weight"))?;
            let bias = ps.get_opt(&format!("encoder.{l}.down.bias"));
            f = g.scoped("down", || conv(g, &f, k, bias, 2, 0))?;
        }
        g.pop_scope();
    }

    let mut decoder = vec![None; cfg.levels];
    let mut d = encoder[cfg.levels - 1].clone();
    for l in (0..cfg.levels).rev() {
        g.push_scope(format!("decoder.{l}"));
        if l + 1 < cfg.levels {
            let k = ps.get(&format!("decoder.{l}.up.weight"))?;
            let bias = ps.get_opt(&format!("decoder.{l}.up.bias"));
            let up = g.scoped("up", || add_channel_bias(g, g.conv_transpose2d(&d, k, 2)?, bias))?;
            d = g.scoped("skip", || g.add(&up, &encoder[l]))?;
        }
        for b in 0..cfg.blocks[l] {
            let prefix = format!("decoder.{l}.block.{b}");
            let attn = RsasParams::from_set(ps, &format!("{prefix}.attn"), cfg.heads, cfg.ln_eps)?;
            let ffn = FfnParams::from_set(ps, &format!("{prefix}.ffn"), cfg.patch, cfg.ln_eps)?;
            d = g.scoped(format!("block.{b}.attn"), || rsas_forward(g, &d, &plans.strips[l], &attn))?;
            d = g.scoped(format!("block.{b}.ffn"), || ffn_forward(g, &d, &ffn))?;
        }
        decoder[l] = Some(d.clone());
        g.pop_scope();
    }

    let residual = g.scoped("head", || conv(g, &d, ps.get("head.weight")?, ps.get_opt("head.bias"), 1, 1))?;
    let restored = g.add(&xp, &residual)?;
    let output = if (ph, pw) == (h, w) { restored } else { g.crop(&restored, h, w)? };
    Ok(ForwardOutput {
        output,
        residual,
        embedding,
        encoder,
        decoder: decoder.into_iter().map(Option::unwrap).collect(),
    })
}

pub fn forward_graph<T: Scalar>(
    g: &Graph<T>,
    x: &Var<T>,
    ps: &ParamSet<T>,
    cfg: &ModelConfig,
    plans: &Plans,
) -> Result<Var<T>> {
    Ok(forward_detailed(g, x, ps, cfg, plans)?.output)
}

/// Inference on a 3×H×W image.
pub fn forward<T: Scalar>(x: &Tensor<T>, ws: &WeightStore<T>, cfg: &ModelConfig) -> Result<Tensor<T>> {
    let (_, h, w) = x.chw("forward")?;
    let plans = Plans::new(cfg, h, w)?;
    forward_with_plans(x, ws, cfg, &plans)
}

pub fn forward_with_plans<T: Scalar>(
    x: &Tensor<T>,
    ws: &WeightStore<T>,
    cfg: &ModelConfig,
    plans: &Plans,
) -> Result<Tensor<T>> {
    let g = Graph::no_grad();
    let ps = ParamSet::constants(&g, ws);
    let xv = g.constant(x.clone());
    let out = forward_graph(&g, &xv, &ps, cfg, plans)?;
    Ok(Rc::try_unwrap(out.rc()).unwrap_or_else(|rc| (*rc).clone()))
}

/// Multiply-add counts per module.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FlopTable {
    pub rows: Vec<(String, u64)>,
}

impl FlopTable {
    pub fn total(&self) -> u64 {
        self.rows.iter().map(|(_, v)| v).sum()
    }

    pub fn get(&self, module: &str) -> Option<u64> {
        self.rows.iter().find(|(m, _)| m == module).map(|(_, v)| *v)
    }
}

fn conv_macs(h_out: usize, w_out: usize, c_out: usize, c_in: usize, kh: usize, kw: usize) -> u64 {
    (h_out * w_out * c_out * c_in * kh * kw) as u64
}

/// FFT cost `5N·log₂N` with `N = P²`, two transforms per patch and channel.
pub fn fft_flops(c: usize, h: usize, w: usize, patch: usize) -> u64 {
    let n = (patch * patch) as u64;
    let patches = (h.div_ceil(patch) * w.div_ceil(patch)) as u64;
    c as u64 * patches * 2 * 5 * n * n.trailing_zeros() as u64
}

pub fn ffn_flops(c: usize, h: usize, w: usize, patch: usize, expansion: usize) -> u64 {
    2 * conv_macs(h, w, expansion * c, c, 1, 1) + fft_flops(c, h, w, patch)
}

/// Projections `3nd²` plus logits and mixing `2n²d` for one window.
pub fn attention_flops(n: usize, d: usize) -> u64 {
    (3 * n * d * d + 2 * n * n * d) as u64
}

pub fn rsas_flops(layout: &WindowLayout, c: usize) -> u64 {
    let windows: u64 = layout.window_sizes().iter().map(|&n| attention_flops(n, c)).sum();
    windows + conv_macs(layout.height, layout.width, c, c, 1, 1)
}

/// Analytic multiply-adds for an H×W input (counted on the padded grid).
pub fn count_flops(cfg: &ModelConfig, h: usize, w: usize) -> Result<FlopTable> {
    cfg.validate()?;
    let (ph, pw) = cfg.padded_size(h, w);
    let mut rows = Vec::new();
    let k = KERNEL;
    let offsets = cfg.sectors as u64 * conv_macs(ph, pw, OFFSET_GROUPS, 3, k, k);
    rows.push(("dre".to_string(), offsets + conv_macs(ph, pw, cfg.channels, 3, k, k)));
    for l in 0..cfg.levels {
        let (hl, wl, c) = (ph >> l, pw >> l, cfg.width(l));
        let per_block = ffn_flops(c, hl, wl, cfg.patch, cfg.ffn_expansion);
        rows.push((format!("encoder.{l}"), cfg.blocks[l] as u64 * per_block));
        if l + 1 < cfg.levels {
            rows.push((format!("encoder.{l}.down"), conv_macs(hl / 2, wl / 2, cfg.width(l + 1), c, 2, 2)));
        }
    }
    for l in (0..cfg.levels).rev() {
        let (hl, wl, c) = (ph >> l, pw >> l, cfg.width(l));
        if l + 1 < cfg.levels {
            rows.push((format!("decoder.{l}.up"), conv_macs(hl / 2, wl / 2, cfg.width(l + 1), c, 2, 2)));
        }
        let layout = WindowLayout::for_size(hl, wl, cfg.n_phi[l], cfg.n_r[l])?;
        let per_block = rsas_flops(&layout, c) + ffn_flops(c, hl, wl, cfg.patch, cfg.ffn_expansion);
        rows.push((format!("decoder.{l}"), cfg.blocks[l] as u64 * per_block));
    }
    rows.push(("head".to_string(), conv_macs(ph, pw, 3, cfg.channels, k, k)));
    Ok(FlopTable { rows })
}
