mod commands;
mod config;
mod report;

use anyhow::Result;
use clap::Parser;
use config::{ExperimentConfig, FileConfig, Kind, Overrides, PreconditionError};
use kss_core::error::KssError;
use report::{Envelope, Status, Timing, SCHEMA_VERSION};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

/// Root-count experiments for random Kostlan-Shub-Smale systems.
///
/// Each experiment writes `<out>/<kind>/report.json` plus CSV files; `report`
/// consolidates them into `<out>/report.json` and `<out>/checks.csv`.
/// Exit codes: 0 success, 2 precondition failure, 3 failed checks in `report`.
#[derive(Debug, Parser)]
#[command(name = "kss", version)]
struct Cli {
    kind: Kind,
    /// TOML file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    m: Option<usize>,
    /// One degree or a comma-separated list.
    #[arg(long, value_delimiter = ',')]
    d: Option<Vec<usize>>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<PreconditionError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<KssError>() {
        Some(KssError::InvalidParameter(_) | KssError::Precondition(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p).map_err(|e| PreconditionError(format!("{e:#}")))?,
        None => FileConfig::default(),
    };
    let overrides = Overrides { m: cli.m, d: cli.d, replicates: cli.replicates, seed: cli.seed, out: cli.out };
    let cfg = ExperimentConfig::resolve(cli.kind, file, overrides)?;
    let start = Instant::now();

    if cfg.kind == Kind::Report {
        let full = report::full_report(&cfg)?;
        std::fs::create_dir_all(&cfg.out)?;
        let path = cfg.out.join("report.json");
        report::write_checks_csv(&cfg.out.join("checks.csv"), &full.checks)?;
        for c in full.checks.iter().filter(|c| c.status == Status::Fail) {
            println!("FAIL {}: {} ({})", c.name, c.detail, c.tolerance);
        }
        println!("{} passed, {} failed, {} skipped", full.passed, full.failed, full.skipped);
        let failed = full.failed;
        let env = Envelope {
            schema_version: SCHEMA_VERSION,
            kind: cfg.kind,
            config: cfg.clone(),
            payload: full,
            timing: Timing { wall_clock_seconds: start.elapsed().as_secs_f64() },
        };
        report::write_json(&path, &env)?;
        println!("wrote {}", path.display());
        return Ok(if failed > 0 { ExitCode::from(3) } else { ExitCode::SUCCESS });
    }

    let dir = cfg.kind_dir(cfg.kind);
    std::fs::create_dir_all(&dir)?;
    let payload = match cfg.kind {
        Kind::Simulate => serde_json::to_value(commands::simulate(&cfg, &dir)?)?,
        Kind::KacRice => serde_json::to_value(commands::kac_rice(&cfg, &dir)?)?,
        Kind::Chaos => serde_json::to_value(commands::chaos(&cfg, &dir)?)?,
        Kind::Partition => serde_json::to_value(commands::partition(&cfg, &dir)?)?,
        Kind::LocalField => serde_json::to_value(commands::local_field(&cfg, &dir)?)?,
        Kind::Report => unreachable!(),
    };
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        kind: cfg.kind,
        config: cfg.clone(),
        payload,
        timing: Timing { wall_clock_seconds: start.elapsed().as_secs_f64() },
    };
    let path = dir.join("report.json");
    report::write_json(&path, &env)?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}
