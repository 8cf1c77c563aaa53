use std::path::PathBuf;
use std::process::ExitCode;

use bpire_cli::{
    emit_report, load_config, run_experiment, Experiment, EXIT_METRIC_FAIL, EXIT_PASS, EXIT_USAGE,
};
use clap::Parser;

/// Run one experiment and write its report to `<out>/<experiment>-<seed>/`.
#[derive(Debug, Parser)]
#[command(name = "bpire", version)]
struct Cli {
    /// check, theorem, lemma1, corollary, grey, decay, sre, oracle or hill.
    experiment: Experiment,
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to BPIRE_WORKERS, then the config, then
    /// the number of available cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn env_workers() -> Result<Option<usize>, String> {
    match std::env::var("BPIRE_WORKERS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| format!("BPIRE_WORKERS must be a positive integer, not `{v}`")),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_PASS
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let mut cfg = match load_config(&cli.config, Some(cli.experiment)) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(bpire_cli::RunError::from(e).exit_code() as u8);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    let from_env = match env_workers() {
        Ok(w) => w,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    let configured = (cfg.workers > 0).then_some(cfg.workers);
    cfg.workers = cli
        .workers
        .or(from_env)
        .or(configured)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));

    let result = run_experiment(&cfg).and_then(|report| {
        let files = emit_report(&report, &cfg.out_dir)?;
        Ok((report, files))
    });
    match result {
        Ok((report, files)) => {
            for m in &report.metrics {
                println!(
                    "{} {}: estimate {} theory {} tolerance {}",
                    if m.pass { "PASS" } else { "FAIL" },
                    m.name,
                    m.estimate,
                    m.theory,
                    m.tolerance
                );
            }
            if let Some(dir) = files.first().and_then(|p| p.parent()) {
                println!("report written to {}", dir.display());
            }
            ExitCode::from(if report.pass {
                EXIT_PASS
            } else {
                EXIT_METRIC_FAIL
            } as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
