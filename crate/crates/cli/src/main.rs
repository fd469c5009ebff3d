//! Command-line front end: a sampling benchmark for the layered quantizer,
//! per-round privacy accounting, and the federated learning experiment
//! driver.

mod config;

use cepam_core::fl::data::{load_mnist, DataError, Dataset};
use cepam_core::fl::model::MlpSpec;
use cepam_core::fl::{
    metrics_csv, run_experiment, summarize, FlError, RoundMetrics, Scheme, SchemeSummary,
    STREAM_TAG_DATA,
};
use cepam_core::lattice::{LatticeError, LatticeSpec};
use cepam_core::layered_noise::{LayeredNoiseSpec, NoiseError};
use cepam_core::privacy::{
    amplified_base_epsilon, calibrate_sigma, cepam_gaussian_round, cepam_laplace_round,
    PrivacyError, RoundPrivacyReport,
};
use cepam_core::quantizer::{lrsuq_encode, QuantizerError, RsuqConfig, DEFAULT_MAX_TRIALS};
use cepam_core::rng::{RandomStream, GENERATOR_ID};
use cepam_core::stats::{ks_one_sample, laplace_cdf, mean_and_variance, normal_cdf};
use clap::{Args, Parser, Subcommand};
use config::ExperimentFile;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Quantizer(#[from] QuantizerError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Fl(#[from] FlError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("reading {path}: {source}")]
    ReadConfig {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path}: {source}")]
    ParseConfig {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("unknown scheme {0:?} (try one of {1}, or \"all\")")]
    UnknownScheme(String, String),
    #[error("unknown data source {0:?} (known: mnist, synthetic)")]
    UnknownSource(String),
    #[error("no seeds to run")]
    NoSeeds,
    #[error("writing {path}: {source}")]
    WriteOutput {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Parser)]
#[command(
    name = "cepam",
    version,
    about = "Channel simulation tools: layered quantization, privacy accounting, federated learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the layered quantizer and compare its error law to the target.
    QuantizeBench(QuantizeBenchArgs),
    /// Per-round privacy accounting for the compressed mechanisms.
    Privacy {
        #[command(subcommand)]
        command: PrivacyCommand,
    },
    /// Train the federated schemes and write metrics.csv / summary.json.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct QuantizeBenchArgs {
    /// Block dimension of the lattice (and of the Gaussian law).
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// Gaussian standard deviation. The default law is Gaussian with sigma 1.
    #[arg(long, conflicts_with = "b")]
    sigma: Option<f64>,
    /// Laplace scale; selects the scalar Laplace law instead.
    #[arg(long)]
    b: Option<f64>,
    /// Lattice cell width.
    #[arg(long, default_value_t = 1e-5)]
    alpha: f64,
    /// Number of vectors to encode.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Subcommand)]
enum PrivacyCommand {
    /// Report (eps, delta) for one Gaussian round at a given base budget.
    Gaussian {
        /// Mechanism noise standard deviation before averaging over clients.
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 0.1)]
        clip: f64,
        #[arg(long, default_value_t = 15)]
        local_iters: u32,
        #[arg(long, default_value_t = 30)]
        clients: u32,
        #[arg(long, default_value_t = 2000)]
        dataset_size: u64,
        /// Budget the unamplified round mechanism is held to.
        #[arg(long)]
        eps_base: f64,
    },
    /// Report (eps, delta) for one scalar Laplace round at a given base budget.
    Laplace {
        /// Laplace noise scale.
        #[arg(long)]
        b: f64,
        #[arg(long, default_value_t = 0.1)]
        clip: f64,
        #[arg(long, default_value_t = 15)]
        local_iters: u32,
        #[arg(long, default_value_t = 2000)]
        dataset_size: u64,
        #[arg(long)]
        eps_base: f64,
    },
    /// Smallest Gaussian sigma meeting an (eps, delta) target after
    /// subsampling amplification.
    Calibrate {
        /// Target epsilon after amplification.
        #[arg(long)]
        eps: f64,
        /// Target delta.
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 0.1)]
        clip: f64,
        #[arg(long, default_value_t = 15)]
        local_iters: u32,
        #[arg(long, default_value_t = 30)]
        clients: u32,
        #[arg(long)]
        dataset_size: u64,
    },
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment description (TOML); every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run this single seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Scheme name or "all"; replaces the config's scheme list.
    #[arg(long)]
    scheme: Option<String>,
    /// Directory for metrics.csv and summary.json.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Compute client updates on this many threads.
    #[arg(long, default_value_t = 1)]
    parallel_clients: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::QuantizeBench(args) => quantize_bench(&args),
        Command::Privacy { command } => privacy(&command),
        Command::Simulate(args) => simulate(&args),
    }
}

// ---------------------------------------------------------------------------
// quantize-bench
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct QuantizeBenchReport {
    generator: &'static str,
    mechanism: &'static str,
    dim: usize,
    alpha: f64,
    scale: f64,
    samples: usize,
    seed: u64,
    acceptance_rate_expected: f64,
    acceptance_rate_measured: f64,
    mean_trials: f64,
    error_mean: f64,
    error_variance: f64,
    error_variance_expected: f64,
    ks_vs_target: f64,
}

fn quantize_bench(args: &QuantizeBenchArgs) -> Result<(), CliError> {
    let (noise, mechanism, scale, variance_expected) = match (args.sigma, args.b) {
        (_, Some(b)) => (LayeredNoiseSpec::laplace(b)?, "laplace", b, 2.0 * b * b),
        (sigma, None) => {
            let sigma = sigma.unwrap_or(1.0);
            (
                LayeredNoiseSpec::gaussian(sigma, args.dim)?,
                "gaussian",
                sigma,
                sigma * sigma,
            )
        }
    };
    let lattice = LatticeSpec::new(args.dim, args.alpha)?;
    let config = RsuqConfig::new(lattice, noise, DEFAULT_MAX_TRIALS)?;

    // Inputs come from their own stream so the codec stream stays replayable.
    let mut input_stream = RandomStream::new(args.seed).child(1);
    let mut codec_stream = RandomStream::new(args.seed).child(2);
    let mut errors = Vec::with_capacity(args.samples * args.dim);
    let mut total_trials = 0u64;
    let mut x = vec![0.0f64; args.dim];
    for _ in 0..args.samples {
        input_stream.fill_normal(&mut x);
        let enc = lrsuq_encode(&x, &mut codec_stream, &config)?;
        total_trials += enc.block.h;
        errors.extend(enc.reconstruction.iter().zip(&x).map(|(y, xi)| y - xi));
    }

    let (error_mean, error_variance) = mean_and_variance(&errors);
    let ks = match config.noise() {
        LayeredNoiseSpec::GaussianIso { sigma, .. } => {
            let s = *sigma;
            ks_one_sample(&errors, |t| normal_cdf(t / s))
        }
        LayeredNoiseSpec::Laplace { b } => {
            let b = *b;
            ks_one_sample(&errors, |t| laplace_cdf(t, b))
        }
    };
    let report = QuantizeBenchReport {
        generator: GENERATOR_ID,
        mechanism,
        dim: args.dim,
        alpha: args.alpha,
        scale,
        samples: args.samples,
        seed: args.seed,
        acceptance_rate_expected: config.noise().acceptance_probability(),
        acceptance_rate_measured: args.samples as f64 / total_trials as f64,
        mean_trials: total_trials as f64 / args.samples as f64,
        error_mean,
        error_variance,
        error_variance_expected: variance_expected,
        ks_vs_target: ks,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// privacy
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct CalibrationReport {
    sigma: f64,
    achieved: RoundPrivacyReport,
}

fn privacy(command: &PrivacyCommand) -> Result<(), CliError> {
    match *command {
        PrivacyCommand::Gaussian {
            sigma,
            clip,
            local_iters,
            clients,
            dataset_size,
            eps_base,
        } => {
            let report =
                cepam_gaussian_round(clip, local_iters, clients, sigma, dataset_size, eps_base)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
        }
        PrivacyCommand::Laplace {
            b,
            clip,
            local_iters,
            dataset_size,
            eps_base,
        } => {
            let report = cepam_laplace_round(clip, local_iters, b, dataset_size, eps_base)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
        }
        PrivacyCommand::Calibrate {
            eps,
            delta,
            clip,
            local_iters,
            clients,
            dataset_size,
        } => {
            let sigma = calibrate_sigma(eps, delta, clip, local_iters, clients, dataset_size)?;
            let eps_base = amplified_base_epsilon(eps, dataset_size, local_iters);
            let achieved =
                cepam_gaussian_round(clip, local_iters, clients, sigma, dataset_size, eps_base)?;
            let report = CalibrationReport { sigma, achieved };
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::ReadConfig {
                path: path.clone(),
                source,
            })?;
            ExperimentFile::parse(&text).map_err(|source| CliError::ParseConfig {
                path: path.clone(),
                source,
            })?
        }
        None => ExperimentFile::default(),
    };

    let schemes = resolve_schemes(args.scheme.as_deref(), &cfg.experiment.schemes)?;
    let seeds: Vec<u64> = match args.seed {
        Some(s) => vec![s],
        None => cfg.experiment.seeds.clone(),
    };
    if seeds.is_empty() {
        return Err(CliError::NoSeeds);
    }

    let (train, val, test) = load_data(&cfg)?;
    let model = MlpSpec::new(&cfg.model.layers)?;
    let parallel = args.parallel_clients > 1;

    let mut runs: Vec<(Scheme, u64, Vec<RoundMetrics>)> = Vec::new();
    for &scheme in &schemes {
        for &seed in &seeds {
            let tc = cfg.training_config(scheme, seed, parallel);
            eprintln!(
                "running {scheme} seed {seed}: {} rounds, {} clients",
                tc.rounds(),
                tc.clients
            );
            let metrics = run_experiment(&model, &train, &val, &test, &tc)?;
            if let Some(last) = metrics.last() {
                eprintln!(
                    "finished {scheme} seed {seed}: val_acc {:.4}, test_acc {:.4}, {} uplink bits",
                    last.val_acc,
                    last.test_acc,
                    metrics.iter().map(|m| m.uplink_bits).sum::<u64>()
                );
            }
            runs.push((scheme, seed, metrics));
        }
    }

    std::fs::create_dir_all(&args.out_dir).map_err(|source| CliError::WriteOutput {
        path: args.out_dir.clone(),
        source,
    })?;
    let csv_path = args.out_dir.join("metrics.csv");
    std::fs::write(&csv_path, metrics_csv(&runs)).map_err(|source| CliError::WriteOutput {
        path: csv_path.clone(),
        source,
    })?;

    let summaries: Vec<SchemeSummary> = schemes
        .iter()
        .map(|&scheme| {
            let per_seed: Vec<(u64, Vec<RoundMetrics>)> = runs
                .iter()
                .filter(|(s, _, _)| *s == scheme)
                .map(|(_, seed, m)| (*seed, m.clone()))
                .collect();
            summarize(scheme, &per_seed)
        })
        .collect();
    let summary_path = args.out_dir.join("summary.json");
    let summary_json = serde_json::to_string_pretty(&summaries).expect("summaries serialize");
    std::fs::write(&summary_path, summary_json).map_err(|source| CliError::WriteOutput {
        path: summary_path.clone(),
        source,
    })?;

    eprintln!(
        "wrote {} and {}",
        csv_path.display(),
        summary_path.display()
    );
    Ok(())
}

fn resolve_schemes(flag: Option<&str>, from_config: &[String]) -> Result<Vec<Scheme>, CliError> {
    let names: Vec<String> = match flag {
        Some(s) => vec![s.to_string()],
        None => from_config.to_vec(),
    };
    let mut out = Vec::new();
    for name in &names {
        if name == "all" {
            out.extend(Scheme::ALL);
        } else {
            let scheme = Scheme::from_str(name).map_err(|_| {
                let known = Scheme::ALL
                    .iter()
                    .map(|s| s.name())
                    .collect::<Vec<_>>()
                    .join(", ");
                CliError::UnknownScheme(name.clone(), known)
            })?;
            out.push(scheme);
        }
    }
    out.dedup();
    Ok(out)
}

/// Resolves the training, validation, and test sets. MNIST that cannot be
/// found degrades to synthetic data with a warning rather than failing, so
/// the default experiment runs anywhere.
fn load_data(cfg: &ExperimentFile) -> Result<(Dataset, Dataset, Dataset), CliError> {
    let d = &cfg.data;
    match d.source.as_str() {
        "synthetic" => Ok(synthetic_splits(cfg)),
        "mnist" => {
            let dir = d
                .dir
                .clone()
                .or_else(|| std::env::var_os("CEPAM_DATA_DIR").map(PathBuf::from));
            match dir {
                Some(dir) => match mnist_splits(cfg, &dir) {
                    Ok(splits) => Ok(splits),
                    Err(e) => {
                        eprintln!(
                            "warning: loading mnist from {} failed ({e}); using synthetic data",
                            dir.display()
                        );
                        Ok(synthetic_splits(cfg))
                    }
                },
                None => {
                    eprintln!(
                        "warning: no data directory (set data.dir or CEPAM_DATA_DIR); using synthetic data"
                    );
                    Ok(synthetic_splits(cfg))
                }
            }
        }
        other => Err(CliError::UnknownSource(other.to_string())),
    }
}

fn mnist_splits(
    cfg: &ExperimentFile,
    dir: &Path,
) -> Result<(Dataset, Dataset, Dataset), DataError> {
    let d = &cfg.data;
    let (train_full, test) = load_mnist(dir, d.train + d.val, d.test)?;
    let train = train_full.take(0, d.train)?;
    let val = train_full.take(d.train, d.val)?;
    Ok((train, val, test))
}

fn synthetic_splits(cfg: &ExperimentFile) -> (Dataset, Dataset, Dataset) {
    let d = &cfg.data;
    let total = d.train + d.val + d.test;
    let mut stream = RandomStream::new(d.synthetic_seed).child(STREAM_TAG_DATA);
    let all = Dataset::synthetic(
        total,
        d.synthetic_dim,
        d.synthetic_classes,
        d.synthetic_spread,
        &mut stream,
    );
    let train = all.take(0, d.train).expect("sized to fit");
    let val = all.take(d.train, d.val).expect("sized to fit");
    let test = all.take(d.train + d.val, d.test).expect("sized to fit");
    (train, val, test)
}
