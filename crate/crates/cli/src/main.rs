//! `cgp`: runs conformal GP validation experiments from a JSON config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use conformal_gp::experiment::{confidence_label, emit_report, run_experiment, ExperimentConfig, ReportFormat};
use conformal_gp::metrics::beta_soft_threshold;
use conformal_gp::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "cgp", version, about = "Gaussian-process surrogates with cross-conformal prediction intervals")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the evaluation grid described by a config file and write reports.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Comma-separated subset of json, csv, md; overrides the config.
        #[arg(long, value_delimiter = ',')]
        format: Option<Vec<String>>,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads, 0 for one per core.
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Parse and validate a config without running it.
    Check { config: PathBuf },
    /// Print the Beta soft coverage threshold for n training points.
    Threshold {
        #[arg(long)]
        n: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.05, 0.01])]
        alpha: Vec<f64>,
        #[arg(long, default_value_t = 0.1)]
        upsilon: f64,
    },
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn load_config(path: &PathBuf, seed: Option<u64>, format: Option<Vec<String>>) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(list) = format {
        cfg.formats = list.iter().map(|f| f.parse::<ReportFormat>()).collect::<Result<_, _>>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(config: PathBuf, out_dir: PathBuf, format: Option<Vec<String>>, seed: Option<u64>, threads: usize) -> ExitCode {
    let cfg = match load_config(&config, seed, format) {
        Ok(c) => c,
        Err(e) => return fail(code_for(&e), e),
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        log::warn!("could not size the worker pool: {e}");
    }
    let report = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => return fail(code_for(&e), e),
    };
    let paths = match emit_report(&report, &cfg.formats, &out_dir) {
        Ok(p) => p,
        Err(e) => return fail(EXIT_RUNTIME, format!("writing reports to {}: {e}", out_dir.display())),
    };
    for b in &report.branches {
        if let conformal_gp::experiment::BranchStatus::Failed { error } = &b.status {
            eprintln!("warning: kernel nu={} failed: {error}", b.nu);
        }
    }
    for a in &report.alphas {
        let name = |idx: Option<usize>| {
            idx.map(|i| {
                let r = &report.records[i];
                match r.beta_power {
                    Some(b) => format!("{} nu={} beta={}", r.method.label(), r.nu, b),
                    None => format!("{} nu={}", r.method.label(), r.nu),
                }
            })
            .unwrap_or_else(|| "none".into())
        };
        println!(
            "{}%: threshold {:.3}, {} passing, narrowest: {}, best correlated: {}",
            confidence_label(a.alpha),
            a.soft_threshold,
            a.n_passing,
            name(a.selection.min_width),
            name(a.selection.max_spearman)
        );
    }
    for p in &paths {
        println!("wrote {}", p.display());
    }
    if report.all_branches_failed() {
        return fail(EXIT_RUNTIME, "every kernel branch failed");
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.command {
        Command::Run { config, out_dir, format, seed, threads } => run(config, out_dir, format, seed, threads),
        Command::Check { config } => match load_config(&config, None, None) {
            Ok(_) => {
                println!("{}: ok", config.display());
                ExitCode::SUCCESS
            }
            Err(e) => fail(code_for(&e), e),
        },
        Command::Threshold { n, alpha, upsilon } => {
            for a in alpha {
                match beta_soft_threshold(n, a, upsilon) {
                    Ok(t) => println!("{}% {t:.6}", confidence_label(a)),
                    Err(e) => return fail(EXIT_CONFIG, e),
                }
            }
            ExitCode::SUCCESS
        }
    }
}
