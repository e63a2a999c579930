use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rst_core::audit::AuditScope;
use rst_core::{Precision, RstError};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "rst", version, about = "Radial strip transformer for image deblurring")]
struct Cli {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Weight file to load.
    #[arg(long, global = true)]
    weights: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured precision.
    #[arg(long, global = true, value_parser = ["f32", "f64"])]
    precision: Option<String>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write freshly initialized weights to --out.
    Init,
    /// Restore an image, or every image in a directory.
    Forward { input: PathBuf },
    /// Overfit a small model to blur/sharp pairs; writes weights and a loss log.
    TrainDemo {
        /// Holds blur/ and sharp/ subdirectories with matching file names.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// Loss log CSV; defaults to the weight path with a .csv extension.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Analytic FLOPs, parameter count and measured forward time per size.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "32,64")]
        sizes: Vec<usize>,
    },
    /// Compare fast kernels and gradients against the reference oracles.
    Audit {
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long, value_enum)]
        inject_fault: Option<FaultArg>,
        #[arg(long, default_value_t = 30)]
        instances: usize,
    },
    /// Dump sector masks and the fused offset magnitude as graymaps.
    Masks {
        /// Image fed to the offset generator; a synthetic pattern otherwise.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
    },
    /// Dump the radial strip layout of one decoder level.
    Windows {
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        level: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FaultArg {
    Conv2d,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    AuditFailed(usize),
    Core(RstError),
}

impl From<RstError> for CliError {
    fn from(e: RstError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::AuditFailed(_) => 2,
            CliError::Core(RstError::Io { .. } | RstError::Format { .. } | RstError::Checksum { .. }) => 3,
            CliError::Core(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::AuditFailed(n) => write!(f, "{n} audit report(s) failed"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let precision = cli
        .precision
        .as_deref()
        .map(|p| p.parse::<Precision>().map_err(CliError::Usage))
        .transpose()?;
    let tiny_default = matches!(cli.command, Command::TrainDemo { .. });
    let ctx = commands::Context::new(cli.config, cli.weights, cli.seed, precision, cli.out, tiny_default)?;
    match cli.command {
        Command::Init => commands::init(&ctx),
        Command::Forward { input } => commands::forward(&ctx, &input),
        Command::TrainDemo { data_dir, steps, log } => commands::train_demo(&ctx, data_dir, steps, log),
        Command::Bench { sizes } => commands::bench(&ctx, &sizes),
        Command::Audit {
            scope,
            inject_fault,
            instances,
        } => {
            let scope: AuditScope = scope.parse().map_err(|e: RstError| CliError::Usage(e.to_string()))?;
            let fault = inject_fault.map(|FaultArg::Conv2d| rst_core::Fault::Conv2dKernelGrad);
            commands::audit(&ctx, scope, fault, instances)
        }
        Command::Masks { input, height, width } => commands::masks(&ctx, input.as_deref(), height, width),
        Command::Windows { height, width, level } => commands::windows(&ctx, height, width, level),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
