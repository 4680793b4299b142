use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use spd_gbw::batchnorm::GbwbnConfig;
use spd_gbw::linalg::io::{load_batch, write_atomic};
use spd_gbw::network::TrainConfig;
use spd_gbw::{Error, SymmetricMatrix};
use spd_gbw_cli::diagnose::{diagnose, DiagnoseConfig, DEFAULT_THRESHOLDS};
use spd_gbw_cli::grid::{load_dataset, run_grid, write_report, BnAblation, GridConfig, Status};
use spd_gbw_cli::synth::{generate, write_dataset, KappaSpacing, SyntheticSpec};
use spd_gbw_cli::verify::{self, Suite, VerifyConfig, DEFAULT_DIMS};
use spd_gbw_cli::{exit_code, thread_limit, EXIT_OK, EXIT_USAGE, EXIT_VERIFY_FAILED};

#[derive(Parser)]
#[command(name = "spd-gbw", version, about = "SPD geometry diagnostics, checks and synthetic training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Condition-number counts without, before and after the GBWBN layer.
    Diagnose(DiagnoseArgs),
    /// Run a verification suite and report per-check residuals.
    Verify(VerifyArgs),
    /// Write a synthetic labeled dataset and its manifest.
    Generate(GenerateArgs),
    /// Train over a grid of theta / lambda values, with and without GBWBN.
    Train(TrainArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 15)]
    dim: usize,
    /// Samples per class.
    #[arg(long, default_value_t = 150)]
    count: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 10.0)]
    kappa_min: f64,
    #[arg(long, default_value_t = 1e6)]
    kappa_max: f64,
    #[arg(long, default_value_t = 1.5)]
    separation: f64,
    /// Wishart degrees of freedom (0: three times the dimension).
    #[arg(long, default_value_t = 0)]
    dof: usize,
    #[arg(long, value_enum, default_value = "random")]
    spacing: Spacing,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Spacing {
    Random,
    Grid,
}

impl SynthArgs {
    fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            dim: self.dim,
            count_per_class: self.count,
            num_classes: self.classes,
            kappa_min: self.kappa_min,
            kappa_max: self.kappa_max,
            seed: self.seed,
            separation: self.separation,
            dof: self.dof,
            spacing: match self.spacing {
                Spacing::Random => KappaSpacing::Random,
                Spacing::Grid => KappaSpacing::Grid,
            },
        }
    }
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Batch manifest; without it a synthetic batch is generated from the flags below.
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    synth: SynthArgs,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    #[arg(long, default_value_t = 1)]
    mean_iters: usize,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS.to_vec())]
    thresholds: Vec<f64>,
    /// Recorded in the report.
    #[arg(long, default_value_t = 0)]
    epoch: usize,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "dim", value_delimiter = ',', default_values_t = DEFAULT_DIMS.to_vec())]
    dims: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    synth: SynthArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest with labels.
    #[arg(long)]
    data: PathBuf,
    /// BiMap dimensions, e.g. 15,12.
    #[arg(long, value_delimiter = ',', default_values_t = vec![15usize, 12])]
    arch: Vec<usize>,
    /// Theta grid.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0])]
    theta: Vec<f64>,
    /// Ridge grid, added as X + lambda I.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0])]
    lambda: Vec<f64>,
    #[arg(long, value_enum, default_value = "with")]
    bn: BnArg,
    #[arg(long, default_value_t = 2.5e-3)]
    lr: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 30)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    momentum: f64,
    #[arg(long, default_value_t = 1)]
    mean_iters: usize,
    /// Output directory for metrics, summary and checkpoints.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum BnArg {
    With,
    Without,
    Both,
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn json(value: &impl serde::Serialize) -> Result<String, Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn cmd_diagnose(a: &DiagnoseArgs) -> Result<u8, Error> {
    let batch: Vec<SymmetricMatrix> = match &a.input {
        Some(path) => load_batch(path)?.1.matrices,
        None => generate(&a.synth.spec())?.samples.into_iter().map(|x| x.sym().clone()).collect(),
    };
    let cfg = DiagnoseConfig {
        lambda: a.lambda,
        bn: GbwbnConfig {
            theta: a.theta,
            mean_iters: a.mean_iters,
            ..GbwbnConfig::default()
        },
        thresholds: a.thresholds.clone(),
        epoch: a.epoch,
    };
    cfg.bn.validate()?;
    let report = diagnose(&batch, &cfg)?;
    let text = match a.format {
        Format::Csv => report.to_csv(),
        Format::Json => json(&report)?,
    };
    emit(a.out.as_deref(), &text)?;
    Ok(EXIT_OK)
}

fn cmd_verify(a: &VerifyArgs) -> Result<u8, Error> {
    let suite: Suite = a.suite.parse()?;
    let report = verify::run(
        suite,
        &VerifyConfig {
            seed: a.seed,
            dims: a.dims.clone(),
        },
    )?;
    let text = match a.format {
        Format::Csv => report.to_csv(),
        Format::Json => json(&report)?,
    };
    emit(a.out.as_deref(), &text)?;
    for c in report.failures() {
        eprintln!(
            "FAIL {}/{}: residual {:e} > {:e}{}",
            c.suite.name(),
            c.name,
            c.residual,
            c.tolerance,
            c.detail.as_ref().map(|d| format!(" ({d})")).unwrap_or_default()
        );
    }
    Ok(if report.passed { EXIT_OK } else { EXIT_VERIFY_FAILED })
}

fn cmd_generate(a: &GenerateArgs) -> Result<u8, Error> {
    let manifest = write_dataset(&a.synth.spec(), &a.out)?;
    println!("wrote {} matrices to {}", manifest.count, a.out.display());
    Ok(EXIT_OK)
}

fn cmd_train(a: &TrainArgs) -> Result<u8, Error> {
    let data = load_dataset(&a.data)?;
    let cfg = GridConfig {
        arch: a.arch.clone(),
        thetas: a.theta.clone(),
        lambdas: a.lambda.clone(),
        bn: match a.bn {
            BnArg::With => BnAblation::With,
            BnArg::Without => BnAblation::Without,
            BnArg::Both => BnAblation::Both,
        },
        bn_config: GbwbnConfig {
            momentum: a.momentum,
            mean_iters: a.mean_iters,
            ..GbwbnConfig::default()
        },
        train: TrainConfig {
            lr: a.lr,
            epochs: a.epochs,
            batch_size: a.batch_size,
            seed: a.seed,
            lambda_reg: 0.0,
        },
        test_fraction: a.test_fraction,
    };
    std::fs::create_dir_all(&a.out)?;
    let report = run_grid(&cfg, &data, Some(&a.out))?;
    write_report(&report, &a.out, matches!(a.format, Format::Json))?;
    for r in &report.results {
        let acc = r.final_metrics().map(|m| format!("{:.4}", m.test_acc)).unwrap_or_else(|| "-".into());
        match &r.status {
            Status::Ok => println!("{}: final test accuracy {acc}", r.point.label()),
            Status::Diverged { epoch, detail } => {
                eprintln!("{}: diverged at epoch {epoch}: {detail}", r.point.label())
            }
            Status::Failed { detail } => eprintln!("{}: failed: {detail}", r.point.label()),
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match thread_limit() {
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_USAGE);
            }
        }
        Ok(None) => {}
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let result = match &cli.command {
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
