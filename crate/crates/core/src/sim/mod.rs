//! Scenario configuration, the global cycle loop and result rendering.

pub mod config;
mod engine;
pub mod output;

use rayon::prelude::*;

use crate::controller::DecisionReason;
use crate::error::SimError;
use crate::kalman::Signal;
use crate::traffic::EpochTelemetry;
use config::{Mode, ScenarioConfig};

/// Aggregates for one traffic class over the measurement window.
///
/// Latency and throughput cover packets created (respectively flits
/// delivered) at or after the warmup cycle and before `max_cycles`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ClassStats {
    /// Requests plus replies created over the whole run.
    pub packets_injected: u64,
    pub packets_delivered: u64,
    /// Replies delivered back to their requester.
    pub transactions_completed: u64,
    pub latency_samples: u64,
    /// Creation to tail ejection, in cycles, source queueing included.
    pub mean_latency: f64,
    pub min_latency: u64,
    pub max_latency: u64,
    /// Flits delivered per cycle, counted in full-width flits.
    pub throughput: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub telemetry: EpochTelemetry,
    /// Signal in force at the end of the epoch.
    pub applied: Signal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KfRecord {
    pub epoch: u64,
    pub cycle: u64,
    /// Normalised (dramfull, icnt_push, icnt_shader).
    pub z: [f64; 3],
    pub x_prior: f64,
    pub p_prior: f64,
    pub gain: [f64; 3],
    pub x_post: f64,
    pub p_post: f64,
    pub predicted: f64,
    pub signal: Signal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControllerRecord {
    pub cycle: u64,
    pub kf_signal: Signal,
    pub applied: Signal,
    pub changed: bool,
    pub reason: DecisionReason,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimResult {
    pub mode: Mode,
    pub seed: u64,
    pub max_cycles: u64,
    /// Includes any drain cycles.
    pub cycles_run: u64,
    pub cpu: ClassStats,
    pub gpu: ClassStats,
    pub reconfigurations: u64,
    pub epochs: Vec<EpochRecord>,
    pub kf_trace: Vec<KfRecord>,
    pub controller_trace: Vec<ControllerRecord>,
}

impl SimResult {
    /// Mean latency over both classes, weighted by sample count.
    pub fn mean_latency(&self) -> f64 {
        let n = self.cpu.latency_samples + self.gpu.latency_samples;
        if n == 0 {
            return 0.0;
        }
        (self.cpu.mean_latency * self.cpu.latency_samples as f64
            + self.gpu.mean_latency * self.gpu.latency_samples as f64)
            / n as f64
    }

    pub fn packets_injected(&self) -> u64 {
        self.cpu.packets_injected + self.gpu.packets_injected
    }

    pub fn packets_delivered(&self) -> u64 {
        self.cpu.packets_delivered + self.gpu.packets_delivered
    }
}

/// Validates and runs one scenario.
pub fn run(config: &ScenarioConfig) -> Result<SimResult, SimError> {
    let scenario = config.validate()?;
    engine::Engine::new(scenario).run()
}

/// Labelled results, in input order.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub rows: Vec<(String, SimResult)>,
}

/// Runs configurations that differ only in mode, in parallel.
pub fn compare(configs: &[ScenarioConfig]) -> Result<Comparison, SimError> {
    if let Some(first) = configs.first() {
        let reference = first.to_toml_string();
        if configs
            .iter()
            .any(|c| c.with_mode(first.sim.mode).to_toml_string() != reference)
        {
            return Err(SimError::Inconsistent("fields other than the mode"));
        }
    }
    let results: Vec<_> = configs.par_iter().map(run).collect::<Result<_, _>>()?;
    Ok(Comparison {
        rows: configs
            .iter()
            .zip(results)
            .map(|(c, r)| (c.sim.mode.name().to_string(), r))
            .collect(),
    })
}

/// Static-partition sweep: each `(gpu, cpu)` split runs in two-subnet-fair
/// mode with `gpu + cpu` VCs, the lowest `gpu` of them reserved for GPU
/// traffic. Rows are labelled `gpu:cpu`.
pub fn sweep_vc(
    config: &ScenarioConfig,
    splits: &[(usize, usize)],
) -> Result<Comparison, SimError> {
    let configs: Vec<_> = splits
        .iter()
        .map(|&(gpu, cpu)| {
            let mut c = config.with_mode(Mode::TwoSubnetFair);
            c.network.vcs = gpu + cpu;
            c.network.static_gpu_vcs = Some(gpu);
            c
        })
        .collect();
    let results: Vec<_> = configs.par_iter().map(run).collect::<Result<_, _>>()?;
    Ok(Comparison {
        rows: splits
            .iter()
            .zip(results)
            .map(|(&(g, c), r)| (format!("{g}:{c}"), r))
            .collect(),
    })
}
