use std::path::PathBuf;
use std::process::ExitCode;

use blrkit::optimizers::registry;
use blrkit_harness::compare::{compare, read_trace};
use blrkit_harness::config::load_config;
use blrkit_harness::experiment::{exit_code, run_experiment, ExperimentError, COLUMNS};
use blrkit_harness::problem::ProblemKind;
use blrkit_harness::verify::{verify, Suite};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

/// Exit codes: 0 success, 1 convergence or verification failure, 2 bad config or setup.
#[derive(Parser)]
#[command(name = "blrkit", version, about = "Bayesian learning rule experiments and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run experiment configs, writing <output>.csv and <output>.json for each.
    Run {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Number of configs run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run the invariant checks of one module (or all).
    Verify {
        /// expfam, estimators, blr, optimizers, conjugate, problems or all.
        suite: Suite,
        /// Also write the report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare two CSV traces step by step.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "loss_at_eval_point,lambda_norm,residual")]
        cols: Vec<String>,
        #[arg(long, default_value_t = 0.0)]
        tol: f64,
        /// Print the per-step deviations as JSON.
        #[arg(long)]
        json: bool,
    },
    /// List optimizer presets, problem kinds and trace columns.
    List,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { configs, jobs } => run(&configs, jobs),
        Command::Verify { suite, report } => run_verify(suite, report),
        Command::Compare { a, b, cols, tol, json } => run_compare(&a, &b, &cols, tol, json),
        Command::List => {
            list();
            0
        }
    };
    ExitCode::from(code)
}

/// Runs one config; returns its exit code and a one-line summary.
fn run_one(path: &PathBuf) -> (u8, String) {
    let cfg = match load_config(path) {
        Ok(c) => c,
        Err(e) => return (2, format!("{}: {e}", path.display())),
    };
    match run_experiment(&cfg) {
        Ok(out) => {
            let last = out.trace.records.last();
            let msg = format!(
                "{}: {} after {} steps, loss {}, residual {} -> {}",
                path.display(),
                out.trace.status.as_str(),
                out.trace.records.len(),
                last.map_or(f64::NAN, |r| r.loss),
                last.map_or(f64::NAN, |r| r.residual),
                out.csv.display()
            );
            (exit_code(&out.trace) as u8, msg)
        }
        Err(e @ ExperimentError::Setup(_)) => (2, format!("{}: {e}", path.display())),
        Err(e) => (1, format!("{}: {e}", path.display())),
    }
}

fn run(configs: &[PathBuf], jobs: usize) -> u8 {
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("cannot start worker pool: {e}");
            return 2;
        }
    };
    let results: Vec<(u8, String)> = pool.install(|| configs.par_iter().map(run_one).collect());
    for (code, msg) in &results {
        if *code == 0 {
            println!("{msg}");
        } else {
            eprintln!("{msg}");
        }
    }
    results.iter().map(|r| r.0).max().unwrap_or(0)
}

fn run_verify(suite: Suite, report: Option<PathBuf>) -> u8 {
    let r = verify(suite);
    for c in &r.checks {
        println!("{c}");
    }
    let failed = r.failures().count();
    println!("{} checks, {failed} failed, {:.0} ms", r.checks.len(), r.elapsed_ms);
    if let Some(path) = report {
        if let Err(e) = std::fs::write(&path, r.to_json()) {
            eprintln!("cannot write {}: {e}", path.display());
            return 2;
        }
    }
    u8::from(!r.passed)
}

fn run_compare(a: &PathBuf, b: &PathBuf, cols: &[String], tol: f64, json: bool) -> u8 {
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
    let report = read_trace(a).and_then(|ta| read_trace(b).and_then(|tb| compare(&ta, &tb, &cols, tol)));
    match report {
        Ok(r) => {
            if json {
                println!("{}", serde_json::to_string_pretty(&r).expect("plain data serializes"));
            }
            println!(
                "{}: max deviation {:e} over {} (rows {} vs {}, tol {:e})",
                if r.passed { "match" } else { "differ" },
                r.max_abs_deviation,
                r.columns.join(","),
                r.rows.0,
                r.rows.1,
                r.tol
            );
            u8::from(!r.passed)
        }
        Err(e) => {
            eprintln!("{e}");
            2
        }
    }
}

fn list() {
    println!("optimizers:");
    for name in registry().names() {
        println!("  {name:<16} {}", registry().entry(name).map(|e| e.summary).unwrap_or_default());
    }
    println!("problems:");
    for kind in ProblemKind::ALL {
        println!("  {:<16} {}", kind.as_str(), kind.summary());
    }
    println!("suites: {}", Suite::MODULES.iter().map(|s| s.as_str()).chain(["all"]).collect::<Vec<_>>().join(", "));
    println!("trace columns: {}", COLUMNS.join(", "));
}
