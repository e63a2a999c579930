//! Single-image training demo: L1 + spectral-magnitude L1 loss, AdamW with
//! a cosine learning-rate schedule, and the bundled synthetic blur pair.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{RunConfig, TrainConfig};
use crate::error::{Result, RstError};
use crate::graph::{Graph, Var};
use crate::image_io::{quantize, read_image, Image8};
use crate::model::{build, forward_graph, Plans};
use crate::params::{ParamSet, WeightStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAX_STEPS: usize = 500;
pub const BLUR_TAPS: usize = 9;

/// `end + ½(start − end)(1 + cos(π·step/total))`.
pub fn cosine_lr(step: usize, total: usize, start: f64, end: f64) -> f64 {
    let frac = if total == 0 { 0.0 } else { step as f64 / total as f64 };
    end + 0.5 * (start - end) * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// AdamW with decoupled weight decay; moments kept in f64.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn from_config(t: &TrainConfig) -> Self {
        Self::new(t.beta1, t.beta2, t.adam_eps, t.weight_decay)
    }

    /// One update; `params` and `grads` are parallel lists of flat buffers.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                p[i] -= lr * self.weight_decay * p[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// `mean|pred − target| + λ·mean||F(pred)| − |F(target)||` with the
/// orthonormal DFT scaling `1/√(HW)`.
pub fn restoration_loss<T: Scalar>(g: &Graph<T>, pred: &Var<T>, target: &Var<T>, lambda: f64) -> Result<Var<T>> {
    let diff = g.sub(pred, target)?;
    let spatial = g.mean(&g.abs(&diff));
    if lambda == 0.0 {
        return Ok(spatial);
    }
    let fp = g.rfft2_magnitude(pred)?;
    let ft = g.rfft2_magnitude(target)?;
    let fd = g.sub(&fp, &ft)?;
    let spectral = g.mean(&g.abs(&fd));
    let (_, h, w) = pred.value().chw("restoration_loss")?;
    let weighted = g.scale(&spectral, T::from_f64(lambda / ((h * w) as f64).sqrt()));
    g.add(&spatial, &weighted)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub seed: u64,
    pub steps: Vec<StepLog>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = format!("# seed={}\nstep,lr,loss\n", self.seed);
        for r in &self.steps {
            writeln!(s, "{},{:e},{:e}", r.step, r.lr, r.loss).unwrap();
        }
        s
    }

    /// Mean loss over the `window` steps ending at `end` (inclusive, 1-based).
    pub fn trailing_mean(&self, end: usize, window: usize) -> f64 {
        let end = end.min(self.steps.len());
        let start = end.saturating_sub(window);
        let slice = &self.steps[start..end];
        slice.iter().map(|r| r.loss).sum::<f64>() / slice.len().max(1) as f64
    }
}

pub struct Trained<T> {
    pub weights: WeightStore<T>,
    pub log: TrainLog,
}

/// Overfits the weights built from `seed` to `pairs` (blurred, sharp),
/// cycling through the pairs one per step.
pub fn train_demo<T: Scalar>(cfg: &RunConfig, pairs: &[(Tensor<T>, Tensor<T>)], steps: usize, seed: u64) -> Result<Trained<T>> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(RstError::invalid("train_demo", "no training pairs"));
    }
    if steps > MAX_STEPS {
        return Err(RstError::invalid("train_demo", format!("at most {MAX_STEPS} steps, got {steps}")));
    }
    for (b, s) in pairs {
        if b.shape() != s.shape() {
            return Err(RstError::shape("train_demo", b.shape(), s.shape()));
        }
    }
    let mcfg = &cfg.model;
    let tc = &cfg.train;
    let mut ws = build::<T>(mcfg, seed)?;
    let mut plans: Vec<Plans> = Vec::new();
    for (b, _) in pairs {
        let (_, h, w) = b.chw("train_demo")?;
        plans.push(Plans::new(mcfg, h, w)?);
    }
    let mut opt = AdamW::from_config(tc);
    let mut flat: Vec<Vec<f64>> = ws.iter().map(|(_, t)| t.to_f64_vec()).collect();
    let mut log = TrainLog { seed, steps: Vec::with_capacity(steps) };
    for step in 0..steps {
        let k = step % pairs.len();
        let g = Graph::<T>::new();
        let ps = ParamSet::track(&g, &ws);
        let x = g.constant(pairs[k].0.clone());
        let target = g.constant(pairs[k].1.clone());
        let pred = forward_graph(&g, &x, &ps, mcfg, &plans[k])?;
        let loss = restoration_loss(&g, &pred, &target, tc.lambda_freq)?;
        let loss_value = loss.value().item().as_f64();
        if !loss_value.is_finite() {
            return Err(RstError::NonFinite(format!("loss at step {step}")));
        }
        let grads = g.backward(&loss)?;
        let grads: Vec<Vec<f64>> = ps.gradients(&ws, &grads).into_iter().map(|(_, t)| t.to_f64_vec()).collect();
        let lr = cosine_lr(step, steps, tc.lr_start, tc.lr_end);
        let mut views: Vec<&mut [f64]> = flat.iter_mut().map(|v| v.as_mut_slice()).collect();
        let grad_views: Vec<&[f64]> = grads.iter().map(|v| v.as_slice()).collect();
        opt.step(&mut views, &grad_views, lr);
        for ((_, t), src) in ws.iter_mut().zip(&flat) {
            for (d, &s) in t.data_mut().iter_mut().zip(src) {
                *d = T::from_f64(s);
            }
        }
        log.steps.push(StepLog {
            step: step + 1,
            lr,
            loss: loss_value,
        });
    }
    Ok(Trained { weights: ws, log })
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// 9-tap horizontal box blur with mirrored borders, on 8-bit data.
pub fn box_blur_horizontal(img: &Image8) -> Image8 {
    let (w, h, c) = (img.width, img.height, img.channels);
    let half = (BLUR_TAPS / 2) as isize;
    let mut data = vec![0u8; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let s: f64 = (-half..=half)
                    .map(|d| img.data[(y * w + reflect(x as isize + d, w)) * c + ch] as f64)
                    .sum();
                data[(y * w + x) * c + ch] = quantize(s / BLUR_TAPS as f64 / 255.0);
            }
        }
    }
    Image8 { data, ..img.clone() }
}

/// Seeded sharp pattern (coloured rectangles and thin vertical bars on a
/// flat background) and its blurred observation.
pub fn synthetic_pair(seed: u64, size: usize) -> (Image8, Image8) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let color = |rng: &mut ChaCha8Rng| [rng.gen::<u8>(), rng.gen::<u8>(), rng.gen::<u8>()];
    let bg = color(&mut rng);
    let mut data: Vec<u8> = (0..size * size).flat_map(|_| bg).collect();
    let mut paint = |x0: usize, y0: usize, x1: usize, y1: usize, col: [u8; 3]| {
        for y in y0..y1.min(size) {
            for x in x0..x1.min(size) {
                data[(y * size + x) * 3..(y * size + x) * 3 + 3].copy_from_slice(&col);
            }
        }
    };
    for _ in 0..6 {
        let (x0, y0) = (rng.gen_range(0..size), rng.gen_range(0..size));
        let (wd, ht) = (rng.gen_range(3..size / 2), rng.gen_range(3..size / 2));
        let col = color(&mut rng);
        paint(x0, y0, x0 + wd, y0 + ht, col);
    }
    for _ in 0..4 {
        let x0 = rng.gen_range(0..size);
        let col = color(&mut rng);
        paint(x0, 0, x0 + 2, size, col);
    }
    let sharp = Image8 {
        width: size,
        height: size,
        channels: 3,
        data,
    };
    (box_blur_horizontal(&sharp), sharp)
}

/// The repository's bundled 32×32 pair lives here.
pub fn bundled_data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join("synthetic")
}

pub const SYNTHETIC_SEED: u64 = 0;
pub const SYNTHETIC_SIZE: usize = 32;

/// Source path of the blurred image, blurred tensor, sharp tensor.
pub type NamedPair<T> = (PathBuf, Tensor<T>, Tensor<T>);

/// Pairs `blur/NAME` with `sharp/NAME` under `dir`, sorted by name.
pub fn load_pairs<T: Scalar>(dir: &Path) -> Result<Vec<NamedPair<T>>> {
    let blur_dir = dir.join("blur");
    let entries = std::fs::read_dir(&blur_dir).map_err(|e| RstError::io(&blur_dir, e))?;
    let mut names: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(RstError::format(&blur_dir, "no images found"));
    }
    let mut out = Vec::with_capacity(names.len());
    for blur_path in names {
        let sharp_path = dir.join("sharp").join(blur_path.file_name().unwrap());
        let blur = read_image(&blur_path)?;
        let sharp = read_image(&sharp_path)?;
        if (blur.width, blur.height) != (sharp.width, sharp.height) {
            return Err(RstError::format(
                &sharp_path,
                format!(
                    "size {}×{} does not match blurred {}×{}",
                    sharp.width, sharp.height, blur.width, blur.height
                ),
            ));
        }
        if blur.channels != 3 || sharp.channels != 3 {
            return Err(RstError::format(&blur_path, "expected colour images"));
        }
        out.push((blur_path, blur.to_tensor(), sharp.to_tensor()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image_io::{encode_pnm, write_image};

    #[test]
    fn adamw_first_step_by_hand() {
        // f(w) = w²/2, g = w = 1; m̂ = 1, v̂ = 1 after bias correction.
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.01);
        let mut w = [1.0];
        opt.step(&mut [&mut w], &[&[1.0]], 0.1);
        let want = (1.0 - 0.1 * 0.01) - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((w[0] - want).abs() < 1e-15);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0, 100, 1e-3, 1e-7), 1e-3);
        assert!((cosine_lr(100, 100, 1e-3, 1e-7) - 1e-7).abs() < 1e-20);
        assert!((cosine_lr(50, 100, 1e-3, 1e-7) - (1e-3 + 1e-7) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::from_fn(&[3, 4, 4], |k| k as f64 / 48.0));
        let loss = restoration_loss(&g, &x, &x.clone(), 0.1).unwrap();
        assert_eq!(loss.value().item(), 0.0);
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..8).map(|i| reflect(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
    }

    #[test]
    fn blur_preserves_constant_rows() {
        let img = Image8 {
            width: 5,
            height: 2,
            channels: 1,
            data: vec![10, 10, 10, 10, 10, 0, 90, 0, 0, 0],
        };
        let b = box_blur_horizontal(&img);
        assert_eq!(&b.data[..5], &[10; 5]);
        // row 2 = [0,90,0,0,0]; x=0 window mirrors to 90 twice
        assert_eq!(b.data[5], quantize(180.0 / 9.0 / 255.0));
    }

    #[test]
    fn bundled_pair_matches_generator() {
        let (blur, sharp) = synthetic_pair(SYNTHETIC_SEED, SYNTHETIC_SIZE);
        let dir = bundled_data_dir();
        let on_disk_blur = std::fs::read(dir.join("blur/pair0.ppm")).unwrap();
        let on_disk_sharp = std::fs::read(dir.join("sharp/pair0.ppm")).unwrap();
        assert_eq!(on_disk_blur, encode_pnm(&blur).unwrap());
        assert_eq!(on_disk_sharp, encode_pnm(&sharp).unwrap());
    }

    #[test]
    #[ignore = "rewrites the bundled synthetic pair"]
    fn regenerate_bundled_pair() {
        let (blur, sharp) = synthetic_pair(SYNTHETIC_SEED, SYNTHETIC_SIZE);
        let dir = bundled_data_dir();
        for (sub, img) in [("blur", &blur), ("sharp", &sharp)] {
            std::fs::create_dir_all(dir.join(sub)).unwrap();
            write_image(&dir.join(sub).join("pair0.ppm"), img).unwrap();
        }
    }
}
