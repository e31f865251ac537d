use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use proxlead::error::Error;
use proxlead::harness::{
    cached_reference, compare, estimate_c_csv, estimate_c_for, reference_path, run_experiment, sweep, BudgetAxis,
    ExperimentConfig, RunSummary,
};
use proxlead::problem::generate_synthetic;

#[derive(Parser)]
#[command(name = "proxlead", version, about = "Decentralized composite optimization with compressed communication")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run { config: PathBuf },
    /// Run a grid over one configuration field.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<String>,
    },
    /// Run several experiments on the same instance and align their curves.
    Compare {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Budget axis: iterations, bits or grad_evals.
        #[arg(long, default_value = "iterations")]
        align: String,
    },
    /// Monte-Carlo estimate of the compressor's noise-to-signal constant.
    EstimateC {
        config: PathBuf,
        #[arg(long, default_value_t = 200)]
        vectors: usize,
        #[arg(long, default_value_t = 2000)]
        trials: usize,
    },
    /// Solve the centralized problem and cache the optimum.
    Reference { config: PathBuf },
}

const EXIT_FAILURE: u8 = 1;
const EXIT_DIVERGENCE: u8 = 2;
const EXIT_CONFIG: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Config(_)
        | Error::InvalidParams(_)
        | Error::InvalidTopology(_)
        | Error::InvalidMixingWeight(_)
        | Error::MixingMatrix(_)
        | Error::InvalidCompressor(_)
        | Error::NotStronglyConvex(_)
        | Error::DimensionMismatch { .. } => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

fn load(path: &Path) -> Result<ExperimentConfig, Error> {
    ExperimentConfig::load(path)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "config".into())
}

fn report(summary: &RunSummary) {
    println!("output: {}", summary.dir.display());
    if let Some(last) = summary.aggregate.last() {
        println!(
            "k = {}  suboptimality = {:e}  consensus_err = {:e}  bits = {}  grad_evals = {}",
            last.k, last.mean[0], last.mean[1], last.mean[3] as u64, last.mean[4] as u64
        );
    }
}

fn execute(cmd: Command) -> Result<u8, Error> {
    match cmd {
        Command::Run { config } => {
            let mut cfg = load(&config)?;
            cfg.name.get_or_insert_with(|| stem(&config));
            let summary = run_experiment(&cfg)?;
            report(&summary);
            if let Some((r, e)) = summary.failures.first() {
                eprintln!("replica {r}: {e}");
                return Ok(exit_code(e));
            }
            Ok(0)
        }
        Command::Sweep { config, axis, values } => {
            let mut cfg = load(&config)?;
            cfg.name.get_or_insert_with(|| stem(&config));
            let summary = sweep(&cfg, &axis, &values)?;
            println!("output: {}", summary.dir.display());
            let mut diverged = false;
            for p in &summary.points {
                match &p.last {
                    Some(r) => println!("{axis} = {}  C = {}  suboptimality = {:e}", p.value, p.c, r.mean[0]),
                    None => println!("{axis} = {}  diverged", p.value),
                }
                diverged |= p.diverged;
            }
            Ok(if diverged { EXIT_DIVERGENCE } else { 0 })
        }
        Command::Compare { configs, align } => {
            let axis: BudgetAxis = align.parse()?;
            let labelled = configs.iter().map(|p| Ok((stem(p), load(p)?))).collect::<Result<Vec<_>, Error>>()?;
            let summary = compare(&labelled, axis)?;
            println!("output: {}", summary.path.display());
            for c in &summary.curves {
                println!("{}: final suboptimality = {:e}", c.label, c.suboptimality.last().copied().unwrap_or(f64::NAN));
            }
            Ok(0)
        }
        Command::EstimateC { config, vectors, trials } => {
            let mut cfg = load(&config)?;
            cfg.name.get_or_insert_with(|| stem(&config));
            let (est, analytic) = estimate_c_for(&cfg, vectors, trials)?;
            let root = cfg.output_root();
            std::fs::create_dir_all(&root)?;
            let path = root.join(format!("{}-estimate-c.csv", cfg.label()));
            std::fs::write(&path, estimate_c_csv(&est))?;
            let max_z = est.per_vector.iter().map(|v| v.max_bias_z).fold(0.0, f64::max);
            println!("output: {}", path.display());
            println!("c_hat = {}  analytic bound = {}  max bias z = {:.2}", est.c_hat, analytic, max_z);
            Ok(0)
        }
        Command::Reference { config } => {
            let cfg = load(&config)?;
            let prob = generate_synthetic(&cfg.synthetic_spec())?;
            let cache = cfg.output_root().join("cache");
            let sol = cached_reference(&prob, &cfg, 1.0 / prob.constants().1, Some(&cache))?;
            println!("output: {}", reference_path(&cache, &cfg).display());
            println!("objective = {}  |x*| = {}  fixed-point residual = {:e}", sol.obj_star, sol.x_star.norm(), sol.fixed_point_residual(&prob));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors share the configuration exit code; 2 is reserved for divergence
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
