//! `hardi` — synthesize phantom q-space datasets, train the reconstruction
//! network, reconstruct test voxels with the dictionary and network methods,
//! and aggregate NMSE reports.
//!
//! Exit codes: 0 success, 1 validation/usage error, 2 runtime failure,
//! 3 self-test failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hardi_recon::error::Error;
use hardi_recon::experiment::{
    evaluate, reconstruct, synthesize, train_model, EvaluateSpec, LambdaChoice, Layout, Method,
    Precision, ReconstructSpec, SynthSpec, TrainSpec,
};
use hardi_recon::geometry::{SubsetStrategy, UpsampleMethod};
use hardi_recon::model::{OptimizerChoice, PermutePolicy};
use hardi_recon::selftest::{self, SelftestOptions};
use hardi_recon::synth::FiberMix;

#[derive(Parser)]
#[command(
    name = "hardi",
    about = "Reconstruct dense q-space diffusion signals from reduced direction sets",
    version
)]
struct Cli {
    /// Base seed for every stochastic choice.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,

    /// Worker threads (0 = all cores). Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Network numeric precision. Checkpoints are f32 either way.
    #[arg(long, global = true, value_enum, default_value_t = PrecisionArg::F32)]
    precision: PrecisionArg,

    /// Dataset/experiment root directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    L2,
    Cs,
    /// Solver-level alias for cs.
    L1,
    Cnn,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::L2 => Method::L2,
            MethodArg::Cs | MethodArg::L1 => Method::Cs,
            MethodArg::Cnn => Method::Cnn,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    UniformAngular,
    Random,
}

impl From<StrategyArg> for SubsetStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::UniformAngular => SubsetStrategy::UniformAngular,
            StrategyArg::Random => SubsetStrategy::Random,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum UpsampleArg {
    Idw,
    Nearest,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PermuteArg {
    Off,
    Fixed,
    PerEpoch,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-tensor dataset (train + test splits).
    Synth(SynthArgs),
    /// Train one reconstruction network per requested K_L.
    Train(TrainArgs),
    /// Reconstruct the test split with one or more methods.
    Reconstruct(ReconstructArgs),
    /// Aggregate per-voxel NMSE into a metrics report (plus ODF exports).
    Evaluate(EvaluateArgs),
    /// Run gradient, adjoint, and solver optimality self-checks (f64).
    Selftest,
    /// Gradient checks only.
    #[command(hide = true, name = "selftest-grad")]
    SelftestGrad,
}

#[derive(Args)]
struct SynthArgs {
    /// Training voxels.
    #[arg(long, default_value_t = 8000)]
    n_train: usize,
    /// Test voxels.
    #[arg(long, default_value_t = 2000)]
    n_test: usize,
    /// Gradient directions.
    #[arg(long, default_value_t = 90)]
    k: usize,
    /// b-value in s/mm^2.
    #[arg(long, default_value_t = 2000.0)]
    b: f64,
    /// Rician noise level (fraction of B0); 0 disables noise.
    #[arg(long, default_value_t = 0.02)]
    sigma: f64,
    /// Voxel-type mix as four fractions: isotropic,1-,2-,3-fiber.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    mix: Option<Vec<f64>>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (defaults to --out).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Reduced direction counts; one network is trained per value.
    #[arg(long = "k-low", default_values_t = [30usize, 23, 18])]
    k_low: Vec<usize>,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 30)]
    patience: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 500)]
    batch_size: usize,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    optimizer: OptimizerArg,
    #[arg(long, value_enum, default_value_t = UpsampleArg::Idw)]
    upsample: UpsampleArg,
    /// Direction-order shuffling: off, one fixed random order (default), or
    /// a fresh order per voxel per epoch.
    #[arg(long, value_enum, default_value_t = PermuteArg::Fixed)]
    permute: PermuteArg,
    /// Zero-initialize the final decoder filter.
    #[arg(long)]
    zero_init_final: bool,
    #[arg(long, value_enum, default_value_t = StrategyArg::UniformAngular)]
    subset_strategy: StrategyArg,
    /// Fraction of training voxels held out for validation.
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    /// Continue from an existing checkpoint, extending epoch numbering.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Dataset directory (defaults to --out).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_values_t = [MethodArg::L2, MethodArg::Cs, MethodArg::Cnn])]
    method: Vec<MethodArg>,
    #[arg(long = "k-low", default_values_t = [30usize, 23, 18])]
    k_low: Vec<usize>,
    /// Regularization weight; omitted = 5-fold cross-validation.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Spherical-harmonic order of the dictionary (even).
    #[arg(long, default_value_t = 8)]
    sh_order: usize,
    /// Training voxels used for lambda cross-validation.
    #[arg(long, default_value_t = 300)]
    cv_voxels: usize,
    /// Average the network output over N random test-time permutations.
    #[arg(long, default_value_t = 0)]
    tta_perms: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::UniformAngular)]
    subset_strategy: StrategyArg,
    /// Export the dictionary pair as CSV + JSON sidecars.
    #[arg(long)]
    export_dictionary: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Dataset directory (defaults to --out).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_values_t = [MethodArg::L2, MethodArg::Cs, MethodArg::Cnn])]
    method: Vec<MethodArg>,
    #[arg(long = "k-low", default_values_t = [30usize, 23, 18])]
    k_low: Vec<usize>,
    /// Also write per-voxel NMSE values.
    #[arg(long)]
    per_voxel: bool,
    /// Merge reconstruction wall times into the report (non-reproducible).
    #[arg(long)]
    with_timings: bool,
    /// Export ODF SH coefficients for this many leading voxels.
    #[arg(long, default_value_t = 10)]
    odf_voxels: usize,
    #[arg(long, default_value_t = 8)]
    sh_order: usize,
}

fn dedup_methods(args: &[MethodArg]) -> Vec<Method> {
    let mut out: Vec<Method> = Vec::new();
    for &m in args {
        let m: Method = m.into();
        if !out.contains(&m) {
            out.push(m);
        }
    }
    out
}

fn run(cli: Cli) -> Result<(), Error> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::validation(format!("thread pool: {e}")))?;
    }

    match cli.command {
        Command::Synth(args) => {
            if args.n_train == 0 || args.n_test == 0 {
                return Err(Error::validation(
                    "--n-train and --n-test must both be positive",
                ));
            }
            let mut spec = SynthSpec::new(args.n_train, args.n_test, args.sigma, cli.seed);
            spec.k = args.k;
            spec.bvalue = args.b;
            if let Some(mix) = args.mix {
                spec.mix = FiberMix {
                    isotropic: mix[0],
                    one: mix[1],
                    two: mix[2],
                    three: mix[3],
                };
            }
            let layout = Layout::new(&cli.out);
            let scheme = synthesize(&spec, &layout)?;
            println!(
                "wrote {} train + {} test voxels on a {}-direction b={} scheme under {}",
                args.n_train,
                args.n_test,
                scheme.len(),
                scheme.bvalue(),
                cli.out.display()
            );
        }
        Command::Train(args) => {
            let layout = Layout::new(args.data.unwrap_or_else(|| cli.out.clone()));
            for &k_low in &args.k_low {
                let mut spec = TrainSpec::new(k_low, cli.seed);
                spec.config.epochs = args.epochs;
                spec.config.patience = args.patience;
                spec.config.lr = args.lr;
                spec.config.batch_size = args.batch_size;
                spec.config.optimizer = match args.optimizer {
                    OptimizerArg::Adam => OptimizerChoice::Adam,
                    OptimizerArg::Sgd => OptimizerChoice::Sgd,
                };
                spec.config.upsample = match args.upsample {
                    UpsampleArg::Idw => UpsampleMethod::Idw,
                    UpsampleArg::Nearest => UpsampleMethod::Nearest,
                };
                spec.config.permute = match args.permute {
                    PermuteArg::Off => PermutePolicy::Off,
                    PermuteArg::Fixed => PermutePolicy::Fixed,
                    PermuteArg::PerEpoch => PermutePolicy::PerEpoch,
                };
                spec.config.zero_init_final = args.zero_init_final;
                spec.config.val_fraction = args.val_fraction;
                spec.strategy = args.subset_strategy.into();
                spec.resume = args.resume;
                spec.precision = cli.precision.into();
                let report = train_model(&layout, &spec)?;
                println!(
                    "k_low {k_low}: best val NMSE {:.6} at epoch {} ({} epochs run{}); checkpoint {}",
                    report.best_val_nmse,
                    report.best_epoch,
                    report.epochs_run,
                    if report.stopped_early { ", early stop" } else { "" },
                    report.checkpoint_dir.display()
                );
            }
        }
        Command::Reconstruct(args) => {
            let layout = Layout::new(args.data.unwrap_or_else(|| cli.out.clone()));
            if args.sh_order % 2 != 0 {
                return Err(Error::validation("--sh-order must be even"));
            }
            for method in dedup_methods(&args.method) {
                for &k_low in &args.k_low {
                    let mut spec = ReconstructSpec::new(method, k_low, cli.seed);
                    spec.lambda = match args.lambda {
                        Some(l) => LambdaChoice::Fixed(l),
                        None => LambdaChoice::CrossValidate,
                    };
                    spec.max_iters = args.max_iters;
                    spec.tolerance = args.tol;
                    spec.sh_order = args.sh_order;
                    spec.cv_voxels = args.cv_voxels;
                    spec.tta_perms = args.tta_perms;
                    spec.strategy = args.subset_strategy.into();
                    spec.export_dictionary = args.export_dictionary;
                    spec.precision = cli.precision.into();
                    let (path, meta) = reconstruct(&layout, &spec)?;
                    match meta.lambda {
                        Some(lambda) => println!(
                            "{} k_low {k_low}: {} voxels in {:.2}s (lambda {lambda}, {}), {}",
                            meta.method,
                            meta.n_voxels,
                            meta.seconds,
                            meta.lambda_source.as_deref().unwrap_or("fixed"),
                            path.display()
                        ),
                        None => println!(
                            "{} k_low {k_low}: {} voxels in {:.2}s, {}",
                            meta.method,
                            meta.n_voxels,
                            meta.seconds,
                            path.display()
                        ),
                    }
                }
            }
        }
        Command::Evaluate(args) => {
            let layout = Layout::new(args.data.unwrap_or_else(|| cli.out.clone()));
            let spec = EvaluateSpec {
                methods: dedup_methods(&args.method),
                k_lows: args.k_low.clone(),
                per_voxel: args.per_voxel,
                with_timings: args.with_timings,
                odf_voxels: args.odf_voxels,
                sh_order: args.sh_order,
            };
            let report = evaluate(&layout, &spec)?;
            print!("{}", report.to_csv()?);
            println!("wrote {}", layout.metrics_csv().display());
        }
        Command::Selftest => {
            let report = selftest::run(&SelftestOptions::default());
            let mut failed = false;
            for check in &report.checks {
                println!(
                    "{} {} ({})",
                    if check.passed { "PASS" } else { "FAIL" },
                    check.name,
                    check.detail
                );
                failed |= !check.passed;
            }
            if failed {
                std::process::exit(3);
            }
        }
        Command::SelftestGrad => {
            let opts = SelftestOptions::default();
            let report = selftest::run(&opts);
            let mut failed = false;
            for check in report.checks.iter().filter(|c| c.name.starts_with("gradcheck")) {
                println!(
                    "{} {} ({})",
                    if check.passed { "PASS" } else { "FAIL" },
                    check.name,
                    check.detail
                );
                failed |= !check.passed;
            }
            if failed {
                std::process::exit(3);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            // help/version requests are not errors
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
