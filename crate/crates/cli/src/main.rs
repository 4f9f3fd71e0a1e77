use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use chipnet::sim::output;
use chipnet::sim::Comparison;
use chipnet::{Mode, ScenarioConfig};
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "chipnet", version, about = "CPU/GPU chiplet mesh simulator")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override `sim.max_cycles`.
    #[arg(long)]
    cycles: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Run one scenario and write metrics, traces and a summary.
    Run(Common),
    /// Run the scenario under all four network configurations.
    Compare(Common),
    /// Run the scenario with static GPU:CPU VC splits 1:3, 2:2 and 3:1.
    SweepVc(Common),
    /// Parse and validate the scenario without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(common: &Common) -> Result<ScenarioConfig> {
    let mut config = ScenarioConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.sim.seed = seed;
    }
    if let Some(cycles) = common.cycles {
        config.sim.max_cycles = cycles;
    }
    config.validate()?;
    Ok(config)
}

/// Writes every file or none: all contents go to temporaries in `dir`
/// first and are renamed into place only once all of them are written.
fn write_all(dir: &Path, files: &[(&str, String)]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut staged = Vec::with_capacity(files.len());
    for (name, contents) in files {
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(contents.as_bytes())?;
        tmp.as_file().sync_all()?;
        staged.push((tmp, dir.join(name)));
    }
    for (tmp, path) in staged {
        tmp.persist(&path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn print_table(c: &Comparison) {
    println!(
        "{:<16} {:>12} {:>12} {:>12} {:>12} {:>8}",
        "config", "cpu_latency", "gpu_latency", "cpu_tput", "gpu_tput", "reconf"
    );
    for (label, r) in &c.rows {
        println!(
            "{:<16} {:>12.3} {:>12.3} {:>12.5} {:>12.5} {:>8}",
            label,
            r.cpu.mean_latency,
            r.gpu.mean_latency,
            r.cpu.throughput,
            r.gpu.throughput,
            r.reconfigurations
        );
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.verb {
        Verb::Run(common) => {
            let config = load(&common)?;
            let result = chipnet::run(&config)?;
            write_all(
                &common.out,
                &[
                    ("metrics.csv", output::metrics_csv(&result)),
                    ("kf_trace.csv", output::kf_trace_csv(&result)),
                    (
                        "controller_trace.csv",
                        output::controller_trace_csv(&result),
                    ),
                    ("summary.txt", output::summary_txt(&result)),
                ],
            )?;
            println!("{}", output::summary_line(&result));
        }
        Verb::Compare(common) => {
            let config = load(&common)?;
            let configs: Vec<_> = Mode::ALL.iter().map(|&m| config.with_mode(m)).collect();
            let table = chipnet::compare(&configs)?;
            write_all(
                &common.out,
                &[("comparison.csv", output::comparison_csv(&table))],
            )?;
            print_table(&table);
        }
        Verb::SweepVc(common) => {
            let config = load(&common)?;
            let table = chipnet::sweep_vc(&config, &[(1, 3), (2, 2), (3, 1)])?;
            write_all(
                &common.out,
                &[("sweep_vc.csv", output::comparison_csv(&table))],
            )?;
            print_table(&table);
        }
        Verb::Validate { config } => {
            ScenarioConfig::load(&config)?.validate()?;
            println!("{}: ok", config.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
