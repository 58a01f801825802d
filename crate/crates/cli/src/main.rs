use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use tubular_core::harness::config::ToleranceSpec;
use tubular_core::harness::report::default_out_dir;
use tubular_core::harness::{emit, resolve, run_scenario_with, Format, RunOptions, ScenarioConfig, BUILTIN_SCENARIOS};

/// Verify tubular-neighbourhood constructions on built-in or user-supplied scenarios.
#[derive(Parser)]
#[command(name = "tubular", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage of a scenario and write a residual report.
    Run {
        /// Built-in scenario name or path to a TOML scenario file.
        scenario: String,
        /// Replace every stage tolerance by T.
        #[arg(long, value_name = "T")]
        tol: Option<f64>,
        /// Number of diagram (and point-case) samples.
        #[arg(long, value_name = "N")]
        samples: Option<usize>,
        /// Output file. Defaults to `<scenario>.<ext>` in $TUBULAR_OUT_DIR or ./tubular-out.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        /// `table` (CSV) or `lines` (JSON lines).
        #[arg(long, value_name = "F", default_value = "table")]
        format: Format,
        /// Record per-stage wall time (reports are then no longer reproducible bit for bit).
        #[arg(long)]
        timing: bool,
    },
    /// List built-in scenarios.
    List,
    /// Validate a scenario without running it.
    Check { scenario: String },
}

fn load(scenario: &str) -> Result<ScenarioConfig> {
    resolve(scenario).with_context(|| format!("invalid scenario `{scenario}`"))
}

fn run(
    scenario: &str,
    tol: Option<f64>,
    samples: Option<usize>,
    out: Option<PathBuf>,
    format: Format,
    timing: bool,
) -> Result<bool> {
    let mut cfg = load(scenario)?;
    if let Some(t) = tol {
        if !(t.is_finite() && t > 0.0) {
            bail!("--tol must be a positive number, got {t}");
        }
        cfg.tolerances = ToleranceSpec::uniform(t);
    }
    if let Some(n) = samples {
        if n == 0 {
            bail!("--samples must be at least 1");
        }
        cfg.samples.diagram = n;
        cfg.samples.point_case = n;
    }
    cfg.validate().context("invalid overrides")?;

    let run = run_scenario_with(&cfg, &RunOptions { record_timing: timing })?;
    println!(
        "{:<20} {:>7} {:>12} {:>12} {:>10}  result",
        "stage", "samples", "max", "mean", "tolerance"
    );
    for r in &run.reports {
        println!(
            "{:<20} {:>7} {:>12.3e} {:>12.3e} {:>10.1e}  {}",
            r.stage,
            r.sample_count,
            r.max_residual,
            r.mean_residual,
            r.tolerance,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    for (stage, message) in &run.errors {
        eprintln!("{stage}: {message}");
    }

    let path = out.unwrap_or_else(|| default_out_dir().join(format!("{}.{}", cfg.name, format.extension())));
    emit(&run.reports, format, &path).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(run.all_pass())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            scenario,
            tol,
            samples,
            out,
            format,
            timing,
        } => run(&scenario, tol, samples, out, format, timing),
        Command::List => {
            for name in BUILTIN_SCENARIOS {
                println!("{name}");
            }
            Ok(true)
        }
        Command::Check { scenario } => load(&scenario).map(|cfg| {
            let stages: Vec<_> = cfg.stages().iter().map(|s| s.name()).collect();
            println!("{}: ok ({})", cfg.name, stages.join(", "));
            true
        }),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
