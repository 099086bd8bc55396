use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use fabsim_core::config::{self, Diagnostic, ExperimentConfig, Severity};
use fabsim_core::report;
use fabsim_core::sim::{self, RunResult};

#[derive(Parser)]
#[command(name = "fabsim", about = "Permissioned-blockchain fairness simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a single run from a preset name or a TOML config file.
    Run {
        config: String,
        /// Output directory for report.csv, timeseries and summary.
        #[arg(long, default_value = "fabsim-out")]
        out: PathBuf,
    },
    /// Execute every point of a sweep preset.
    Sweep {
        preset: String,
        #[arg(long, default_value = "fabsim-out")]
        out: PathBuf,
        /// Base seed the per-point seeds are derived from.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Worker threads; results are merged in point order regardless.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// List available presets.
    Presets {
        #[command(subcommand)]
        command: PresetsCommand,
    },
    /// Check a TOML config file; exits nonzero on errors.
    Validate { config: PathBuf },
}

#[derive(Subcommand)]
enum PresetsCommand {
    List,
}

fn load_config(spec: &str) -> Result<ExperimentConfig> {
    if let Some(cfg) = config::preset(spec) {
        return Ok(cfg);
    }
    let path = Path::new(spec);
    if !path.exists() {
        bail!("'{spec}' is neither a preset nor an existing config file");
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ExperimentConfig::from_toml_str(&text)?)
}

fn print_diagnostics(diags: &[Diagnostic]) {
    for d in diags {
        let tag = match d.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        eprintln!("{tag}: {}", d.message);
    }
}

fn check_config(cfg: &ExperimentConfig) -> Result<()> {
    let diags = cfg.validate();
    print_diagnostics(&diags);
    if ExperimentConfig::has_errors(&diags) {
        bail!("config '{}' has errors", cfg.name);
    }
    Ok(())
}

fn write_outputs(out: &Path, runs: &[RunResult]) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("report.csv"), report::render_report(runs))?;
    fs::write(out.join("summary.txt"), report::render_summary(runs))?;
    for r in runs {
        let name = format!("timeseries_{}.csv", r.config.name);
        fs::write(out.join(name), report::render_timeseries(r))?;
    }
    Ok(())
}

fn run_points(points: &[ExperimentConfig], parallel: usize) -> Vec<RunResult> {
    let parallel = parallel.max(1).min(points.len().max(1));
    if parallel <= 1 {
        return points.iter().map(sim::run).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<RunResult>>> = Mutex::new(vec![None; points.len()]);
    std::thread::scope(|scope| {
        for _ in 0..parallel {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= points.len() {
                    break;
                }
                let result = sim::run(&points[i]);
                slots.lock().unwrap()[i] = Some(result);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.unwrap()).collect()
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config: spec, out } => {
            let cfg = load_config(&spec)?;
            check_config(&cfg)?;
            let result = sim::run(&cfg);
            print!("{}", report::render_summary(std::slice::from_ref(&result)));
            write_outputs(&out, std::slice::from_ref(&result))?;
            if !result.agreement_ok {
                bail!("ledger agreement violated in run '{}'", cfg.name);
            }
        }
        Command::Sweep { preset, out, seed, parallel } => {
            let sweep = config::sweep_preset(&preset, seed)
                .with_context(|| format!("unknown sweep preset '{preset}'"))?;
            for point in &sweep.points {
                let diags = point.validate();
                if ExperimentConfig::has_errors(&diags) {
                    print_diagnostics(&diags);
                    bail!("sweep point '{}' has errors", point.name);
                }
            }
            let runs = run_points(&sweep.points, parallel);
            write_outputs(&out, &runs)?;
            println!("{}: {} runs -> {}", sweep.name, runs.len(), out.display());
            if let Some(bad) = runs.iter().find(|r| !r.agreement_ok) {
                bail!("ledger agreement violated in run '{}'", bad.config.name);
            }
        }
        Command::Presets { command: PresetsCommand::List } => {
            println!("runs:");
            for name in config::RUN_PRESETS {
                println!("  {name}");
            }
            println!("sweeps:");
            for name in config::SWEEP_PRESETS {
                println!("  {name}");
            }
        }
        Command::Validate { config: path } => {
            let text = fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))?;
            let cfg = ExperimentConfig::from_toml_str(&text)?;
            let diags = cfg.validate();
            print_diagnostics(&diags);
            if ExperimentConfig::has_errors(&diags) {
                bail!("config '{}' has errors", cfg.name);
            }
            println!("ok: {}", cfg.name);
        }
    }
    Ok(())
}
