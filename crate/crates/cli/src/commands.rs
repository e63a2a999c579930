use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rst_core::audit::{run_audit, AuditOptions, AuditScope};
use rst_core::dre::{generate_offsets, DreParams};
use rst_core::image_io::{load_rgb, read_image, save_rgb, write_image, Image8};
use rst_core::model::{check_weights, count_flops, forward_with_plans};
use rst_core::polar::{build_polar_grid, build_sector_masks, WindowLayout};
use rst_core::train::{bundled_data_dir, load_pairs, synthetic_pair, train_demo as run_train};
use rst_core::{build, weights_io, Fault, Graph, ParamSet, Plans, Precision, RstError, RunConfig, Scalar, Tensor, WeightStore};

use crate::CliError;

type CliResult = Result<(), CliError>;

const IMAGE_EXTENSIONS: [&str; 4] = ["ppm", "pgm", "pnm", "png"];

pub struct Context {
    pub cfg: RunConfig,
    pub weights: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Context {
    pub fn new(
        config: Option<PathBuf>,
        weights: Option<PathBuf>,
        seed: Option<u64>,
        precision: Option<Precision>,
        out: Option<PathBuf>,
        tiny_default: bool,
    ) -> Result<Self, CliError> {
        let mut cfg = match &config {
            Some(p) => RunConfig::load(p)?,
            None if tiny_default => RunConfig::tiny(),
            None => RunConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(p) = precision {
            cfg.model.precision = p;
        }
        let out = out.or_else(|| cfg.output.clone());
        Ok(Self { cfg, weights, out })
    }

    fn out(&self, what: &str) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("{what} needs --out PATH")))
    }

    fn load_weights<T: Scalar>(&self) -> Result<WeightStore<T>, CliError> {
        let ws = match &self.weights {
            Some(p) => weights_io::load::<T>(p)?,
            None => {
                eprintln!("note: no --weights given, using seeded initialization (seed {})", self.cfg.seed);
                build::<T>(&self.cfg.model, self.cfg.seed)?
            }
        };
        check_weights(&self.cfg.model, &ws)?;
        Ok(ws)
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| RstError::io(path, e).into())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| RstError::io(path, e).into())
}

pub fn init(ctx: &Context) -> CliResult {
    let out = ctx.out("init")?;
    let ws = build::<f32>(&ctx.cfg.model, ctx.cfg.seed)?;
    let bytes = weights_io::encode(&ws)?;
    std::fs::write(out, &bytes).map_err(|e| RstError::io(out, e))?;
    println!("params {}", ws.param_count());
    println!("crc32 {:08x}", crc32fast::hash(&bytes));
    println!("seed {}", ctx.cfg.seed);
    Ok(())
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| RstError::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn worker_count(jobs: usize) -> usize {
    let cap = std::env::var("RST_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    cap.min(jobs).max(1)
}

fn restore_one<T: Scalar>(ctx: &Context, ws: &WeightStore<T>, input: &Path, output: &Path) -> Result<(), RstError> {
    let x = load_rgb::<T>(input)?;
    let (_, h, w) = x.chw("forward")?;
    let plans = Plans::new(&ctx.cfg.model, h, w)?;
    let y = forward_with_plans(&x, ws, &ctx.cfg.model, &plans)?;
    save_rgb(output, &y)
}

fn forward_typed<T: Scalar>(ctx: &Context, input: &Path) -> CliResult {
    let out = ctx.out("forward")?;
    let ws = ctx.load_weights::<T>()?;
    if !input.is_dir() {
        restore_one(ctx, &ws, input, out)?;
        println!("{} -> {}", input.display(), out.display());
        return Ok(());
    }
    create_dir(out)?;
    let files = image_files(input)?;
    let next = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..worker_count(files.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(src) = files.get(i) else { break };
                let dst = out.join(src.file_name().unwrap());
                match restore_one(ctx, &ws, src, &dst) {
                    Ok(()) => println!("{} -> {}", src.display(), dst.display()),
                    Err(e) => failures.lock().unwrap().push(e),
                }
            });
        }
    });
    let failures = failures.into_inner().unwrap();
    for e in &failures {
        eprintln!("error: {e}");
    }
    match failures.into_iter().next() {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

pub fn forward(ctx: &Context, input: &Path) -> CliResult {
    match ctx.cfg.model.precision {
        Precision::F32 => forward_typed::<f32>(ctx, input),
        Precision::F64 => forward_typed::<f64>(ctx, input),
    }
}

fn train_typed<T: Scalar>(ctx: &Context, dir: &Path, steps: usize, log_path: &Path) -> CliResult {
    let out = ctx.out("train-demo")?;
    let pairs: Vec<(Tensor<T>, Tensor<T>)> = load_pairs::<T>(dir)?.into_iter().map(|(_, b, s)| (b, s)).collect();
    let start = Instant::now();
    let trained = run_train(&ctx.cfg, &pairs, steps, ctx.cfg.seed)?;
    weights_io::save(&trained.weights, out)?;
    write_text(log_path, &trained.log.to_csv())?;
    let log = &trained.log;
    println!(
        "seed {} steps {} loss {:.5} -> {:.5} ({:.1?})",
        log.seed,
        steps,
        log.trailing_mean(10.min(steps), 10),
        log.trailing_mean(steps, 10),
        start.elapsed()
    );
    println!("weights {}", out.display());
    println!("log {}", log_path.display());
    Ok(())
}

pub fn train_demo(ctx: &Context, data_dir: Option<PathBuf>, steps: Option<usize>, log: Option<PathBuf>) -> CliResult {
    let dir = data_dir.unwrap_or_else(bundled_data_dir);
    let steps = steps.unwrap_or(ctx.cfg.train.steps);
    let log = log.unwrap_or_else(|| ctx.out.clone().unwrap_or_default().with_extension("csv"));
    match ctx.cfg.model.precision {
        Precision::F32 => train_typed::<f32>(ctx, &dir, steps, &log),
        Precision::F64 => train_typed::<f64>(ctx, &dir, steps, &log),
    }
}

fn bench_typed<T: Scalar>(ctx: &Context, sizes: &[usize]) -> CliResult {
    let model = &ctx.cfg.model;
    let ws = ctx.load_weights::<T>()?;
    let mut csv = String::from("size,flops,params,ms\n");
    for &size in sizes {
        let flops = count_flops(model, size, size)?.total();
        let plans = Plans::new(model, size, size)?;
        let (img, _) = synthetic_pair(ctx.cfg.seed, size.max(8));
        let x = img.to_tensor::<T>();
        let x = if size == img.width { x } else { Tensor::full(&[3, size, size], T::from_f64(0.5)) };
        let start = Instant::now();
        forward_with_plans(&x, &ws, model, &plans)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        csv.push_str(&format!("{size},{flops},{},{ms:.3}\n", ws.param_count()));
    }
    match &ctx.out {
        Some(p) => write_text(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

pub fn bench(ctx: &Context, sizes: &[usize]) -> CliResult {
    if sizes.is_empty() {
        return Err(CliError::Usage("bench needs at least one size".into()));
    }
    match ctx.cfg.model.precision {
        Precision::F32 => bench_typed::<f32>(ctx, sizes),
        Precision::F64 => bench_typed::<f64>(ctx, sizes),
    }
}

pub fn audit(ctx: &Context, scope: AuditScope, fault: Option<Fault>, instances: usize) -> CliResult {
    let opts = AuditOptions {
        seed: ctx.cfg.seed,
        instances,
        fault,
    };
    let mut lines = String::new();
    let to_stdout = ctx.out.is_none();
    let mut stdout = std::io::stdout().lock();
    let mut stdout_open = true;
    let summary = run_audit(scope, &opts, &mut |r| {
        let line = serde_json::to_string(&r).expect("report serializes");
        if !to_stdout {
            lines.push_str(&line);
            lines.push('\n');
        } else if stdout_open {
            // a closed pipe only ends the stream; the exit status still counts every report
            stdout_open = writeln!(stdout, "{line}").is_ok();
        }
    })?;
    drop(stdout);
    if let Some(p) = &ctx.out {
        write_text(p, &lines)?;
    }
    eprintln!("{} reports, {} failed", summary.total, summary.failed);
    if summary.failed > 0 {
        return Err(CliError::AuditFailed(summary.failed));
    }
    Ok(())
}

fn gray(width: usize, height: usize, data: Vec<u8>) -> Image8 {
    Image8 {
        width,
        height,
        channels: 1,
        data,
    }
}

/// Mean per-tap displacement length of a 2k×H×W offset field.
fn offset_magnitude(field: &Tensor<f32>) -> Vec<f64> {
    let (c, h, w) = (field.shape()[0], field.shape()[1], field.shape()[2]);
    let hw = h * w;
    let d = field.data();
    (0..hw)
        .map(|p| {
            (0..c / 2)
                .map(|t| (d[2 * t * hw + p] as f64).hypot(d[(2 * t + 1) * hw + p] as f64))
                .sum::<f64>()
                / (c / 2) as f64
        })
        .collect()
}

pub fn masks(ctx: &Context, input: Option<&Path>, height: usize, width: usize) -> CliResult {
    let out = ctx.out("masks")?;
    let model = &ctx.cfg.model;
    let image = match input {
        Some(p) => {
            let img = read_image(p)?;
            if img.channels != 3 {
                return Err(RstError::format(p, "expected a colour image").into());
            }
            img
        }
        None => {
            let (blur, _) = synthetic_pair(ctx.cfg.seed, height.max(width).max(8));
            let data = (0..height * width)
                .flat_map(|p| {
                    let (y, x) = (p / width, p % width);
                    let q = (y * blur.width + x) * 3;
                    [blur.data[q], blur.data[q + 1], blur.data[q + 2]]
                })
                .collect();
            Image8 {
                width,
                height,
                channels: 3,
                data,
            }
        }
    };
    let (h, w) = (image.height, image.width);
    let set = build_sector_masks(&build_polar_grid(h, w), model.sectors)?;
    create_dir(out)?;
    for i in 0..set.count {
        let data = set.mask(i).into_iter().map(|m| m * 255).collect();
        write_image(&out.join(format!("mask_{i}.pgm")), &gray(w, h, data))?;
    }

    let ws = ctx.load_weights::<f32>()?;
    let g = Graph::<f32>::no_grad();
    let ps = ParamSet::constants(&g, &ws);
    let p = DreParams::from_set(&ps, model.sectors, model.share_offset_kernels, model.gate_axis)?;
    let x = g.constant(image.to_tensor::<f32>());
    let field = generate_offsets(&g, &x, &set, &p.offset_kernels, &p.offset_biases, p.gate_axis)?;
    let mag = offset_magnitude(field.fused.value());
    let peak = mag.iter().copied().fold(0.0, f64::max);
    let heat = mag
        .iter()
        .map(|&m| if peak > 0.0 { (m / peak * 255.0).round() as u8 } else { 0 })
        .collect();
    write_image(&out.join("offsets.pgm"), &gray(w, h, heat))?;
    println!("{} sector masks and offsets.pgm (peak offset {peak:.4} px) in {}", set.count, out.display());
    Ok(())
}

/// Fully saturated colour for hue `t` in [0, 1).
fn hue(t: f64) -> [u8; 3] {
    let h = t * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r, g, b].map(|v: f64| (v * 255.0).round() as u8)
}

pub fn windows(ctx: &Context, height: usize, width: usize, level: usize) -> CliResult {
    let out = ctx.out("windows")?;
    let model = &ctx.cfg.model;
    if level >= model.levels {
        return Err(CliError::Usage(format!("level {level} out of range, model has {}", model.levels)));
    }
    let layout = WindowLayout::for_size(height, width, model.n_phi[level], model.n_r[level])?;
    let data = layout
        .azimuth_bin
        .iter()
        .flat_map(|&b| hue(b as f64 / layout.n_phi as f64))
        .collect();
    create_dir(out)?;
    let img = Image8 {
        width,
        height,
        channels: 3,
        data,
    };
    write_image(&out.join("windows.ppm"), &img)?;
    let manifest = serde_json::to_string_pretty(&layout).expect("layout serializes");
    write_text(&out.join("windows.json"), &manifest)?;
    println!(
        "{} windows, sizes {:?}, written to {}",
        layout.windows.len(),
        layout.window_sizes(),
        out.display()
    );
    Ok(())
}
