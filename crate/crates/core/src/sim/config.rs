//! Scenario configuration: one TOML file fully determines a run.
//!
//! ```toml
//! [sim]
//! mode = "two-subnet-kf"      # four-subnet | two-subnet-rr | two-subnet-fair | two-subnet-kf
//! seed = 1
//! max_cycles = 100000
//! warmdrain = true
//!
//! [topology]
//! width = 6
//! height = 6
//! placement = "default"       # or "shuffled" (uses placement_seed) or "grid" (uses grid)
//!
//! [network]
//! vcs = 4
//! buffer_depth = 4
//! pipeline_depth = 4
//!
//! [traffic]
//! cpu = [{ start = 0, rate = 0.01 }]
//! gpu = [{ start = 0, rate = 0.01 }, { start = 20000, rate = 0.05 }]
//! ```
//!
//! Every section and field has a default; see the `Default` impls.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controller::PolicyParams;
use crate::error::ConfigError;
use crate::kalman::{KalmanModel, KalmanState, Signal};
use crate::router::{MsgKind, RouterParams, TrafficClass, VcPartition};
use crate::topology::{Placement, Topology};
use crate::traffic::{McParams, Phase, TrafficProfile};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Four physically separate subnets (CPU/GPU × request/reply).
    FourSubnet,
    /// Request and reply subnets, VCs shared by both classes, round-robin.
    TwoSubnetRr,
    /// Request and reply subnets, static VC split, round-robin.
    TwoSubnetFair,
    /// Request and reply subnets reconfigured by the filter and controller.
    TwoSubnetKf,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::FourSubnet,
        Mode::TwoSubnetRr,
        Mode::TwoSubnetFair,
        Mode::TwoSubnetKf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::FourSubnet => "four-subnet",
            Mode::TwoSubnetRr => "two-subnet-rr",
            Mode::TwoSubnetFair => "two-subnet-fair",
            Mode::TwoSubnetKf => "two-subnet-kf",
        }
    }

    pub fn subnet_count(self) -> usize {
        match self {
            Mode::FourSubnet => 4,
            _ => 2,
        }
    }
}

/// Subnet carrying a message: `{request, reply}` with two subnets,
/// `{cpu-req, cpu-reply, gpu-req, gpu-reply}` with four.
pub fn subnet_of(class: TrafficClass, msg: MsgKind, subnet_count: usize) -> usize {
    let m = match msg {
        MsgKind::Request => 0,
        MsgKind::Reply => 1,
    };
    if subnet_count == 4 {
        2 * class.index() + m
    } else {
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub mode: Mode,
    pub seed: u64,
    pub max_cycles: u64,
    /// Stop injecting at `max_cycles` and run until every packet is delivered.
    pub warmdrain: bool,
    /// Drain must finish within `drain_factor × max_cycles` extra cycles.
    pub drain_factor: u64,
    /// Check credit and packet conservation every cycle.
    pub check_invariants: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            mode: Mode::TwoSubnetKf,
            seed: 1,
            max_cycles: 100_000,
            warmdrain: true,
            drain_factor: 10,
            check_invariants: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    pub width: usize,
    pub height: usize,
    /// `default`, `shuffled` or `grid`.
    pub placement: String,
    pub placement_seed: u64,
    /// Row-major rows of `C`/`G`/`M`, used with `placement = "grid"`.
    pub grid: Vec<String>,
}

impl Default for TopologySection {
    fn default() -> Self {
        Self {
            width: 6,
            height: 6,
            placement: "default".into(),
            placement_seed: 0,
            grid: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub vcs: usize,
    pub buffer_depth: usize,
    pub pipeline_depth: u64,
    /// In four-subnet mode each subnet gets half the channel width, so
    /// packets take twice as many flits.
    pub split_channel_width: bool,
    /// GPU share of the static split in two-subnet-fair mode (default V/2).
    pub static_gpu_vcs: Option<usize>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            vcs: 4,
            buffer_depth: 4,
            pipeline_depth: 4,
            split_channel_width: true,
            static_gpu_vcs: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficSection {
    pub request_flits: u16,
    pub reply_flits: u16,
    pub cpu_cores_per_node: u32,
    pub gpu_cores_per_node: u32,
    pub cpu: Vec<Phase>,
    pub gpu: Vec<Phase>,
}

impl Default for TrafficSection {
    fn default() -> Self {
        Self {
            request_flits: 1,
            reply_flits: 5,
            cpu_cores_per_node: 1,
            gpu_cores_per_node: 2,
            cpu: vec![Phase {
                start: 0,
                rate: 0.01,
            }],
            gpu: vec![Phase {
                start: 0,
                rate: 0.01,
            }],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanSection {
    pub a: Vec<Vec<f64>>,
    /// Control-input matrix; empty rows mean no control input.
    pub b: Vec<Vec<f64>>,
    /// Observation model, one row per metric (dramfull, icnt_push, icnt_shader).
    pub h: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    pub p0: Vec<Vec<f64>>,
    pub threshold: f64,
}

impl Default for KalmanSection {
    fn default() -> Self {
        Self {
            a: vec![vec![1.0]],
            b: vec![vec![]],
            h: vec![vec![0.6], vec![0.5], vec![0.7]],
            q: vec![vec![0.01]],
            r: vec![
                vec![0.05, 0.0, 0.0],
                vec![0.0, 0.05, 0.0],
                vec![0.0, 0.0, 0.05],
            ],
            x0: vec![0.0],
            p0: vec![vec![1.0]],
            threshold: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub warmup_cycles: u64,
    pub hold_min_cycles: u64,
    pub revert_after_cycles: u64,
    pub epoch_len_cycles: u64,
    /// Force the applied signal (0 or 1) regardless of the filter.
    pub pin_signal: Option<u8>,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let p = PolicyParams::default();
        Self {
            warmup_cycles: p.warmup_cycles,
            hold_min_cycles: p.hold_min_cycles,
            revert_after_cycles: p.revert_after_cycles,
            epoch_len_cycles: p.epoch_len_cycles,
            pin_signal: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub sim: SimSection,
    pub topology: TopologySection,
    pub network: NetworkSection,
    pub traffic: TrafficSection,
    pub memory: McParams,
    pub kalman: KalmanSection,
    pub controller: ControllerSection,
}

/// Validated runtime form of a config.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub mode: Mode,
    pub seed: u64,
    pub max_cycles: u64,
    pub warmdrain: bool,
    pub drain_factor: u64,
    pub check_invariants: bool,
    pub topology: Topology,
    pub router: RouterParams,
    pub cpu: TrafficProfile,
    pub gpu: TrafficProfile,
    pub reply_len: u16,
    /// Flits per full-width flit: 2 when four subnets split the channel.
    pub width_factor: u16,
    pub memory: McParams,
    pub kalman: KalmanModel,
    pub kalman_init: KalmanState,
    pub threshold: f64,
    pub policy: PolicyParams,
    pub pin: Option<Signal>,
    /// Static partition for two-subnet-fair.
    pub fair_partition: VcPartition,
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ConfigError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(ConfigError::Invalid(format!(
            "kalman.{name} has ragged rows"
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serialises")
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        let mut c = self.clone();
        c.sim.mode = mode;
        c
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.sim.seed = seed;
        c
    }

    pub fn policy(&self) -> PolicyParams {
        PolicyParams {
            warmup_cycles: self.controller.warmup_cycles,
            hold_min_cycles: self.controller.hold_min_cycles,
            revert_after_cycles: self.controller.revert_after_cycles,
            epoch_len_cycles: self.controller.epoch_len_cycles,
        }
    }

    pub fn validate(&self) -> Result<Scenario, ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);
        let mode = self.sim.mode;
        if self.sim.max_cycles == 0 {
            return Err(invalid("sim.max_cycles must be positive".into()));
        }
        if self.sim.drain_factor == 0 {
            return Err(invalid("sim.drain_factor must be positive".into()));
        }

        let placement = match self.topology.placement.as_str() {
            "default" => Placement::Default,
            "shuffled" => Placement::Shuffled {
                seed: self.topology.placement_seed,
            },
            "grid" => Placement::Grid(self.topology.grid.clone()),
            other => return Err(invalid(format!("unknown placement {other:?}"))),
        };
        let topology = Topology::build(
            self.topology.width,
            self.topology.height,
            &placement,
            mode.subnet_count(),
        )?;

        let net = &self.network;
        if net.vcs < 2 || net.vcs > 64 {
            return Err(invalid(format!(
                "network.vcs must be in 2..=64, got {}",
                net.vcs
            )));
        }
        if net.buffer_depth == 0 {
            return Err(invalid("network.buffer_depth must be positive".into()));
        }
        if net.pipeline_depth < 4 {
            return Err(invalid(format!(
                "network.pipeline_depth must be at least 4, got {}",
                net.pipeline_depth
            )));
        }
        let router = RouterParams {
            num_vcs: net.vcs,
            buffer_depth: net.buffer_depth,
            pipeline_depth: net.pipeline_depth,
        };
        let fair_partition =
            VcPartition::split(net.static_gpu_vcs.unwrap_or(net.vcs / 2), net.vcs)?;

        let t = &self.traffic;
        if t.reply_flits == 0 || t.request_flits == 0 {
            return Err(invalid("packet lengths must be at least one flit".into()));
        }
        let width_factor: u16 = if mode == Mode::FourSubnet && net.split_channel_width {
            2
        } else {
            1
        };
        let request_len = t.request_flits * width_factor;
        let reply_len = t.reply_flits * width_factor;
        let cpu = TrafficProfile {
            class: TrafficClass::Cpu,
            phases: t.cpu.clone(),
            cores_per_node: t.cpu_cores_per_node,
            request_len,
        };
        let gpu = TrafficProfile {
            class: TrafficClass::Gpu,
            phases: t.gpu.clone(),
            cores_per_node: t.gpu_cores_per_node,
            request_len,
        };
        cpu.validate().map_err(invalid)?;
        gpu.validate().map_err(invalid)?;

        if self.memory.queue_capacity == 0 {
            return Err(invalid("memory.queue_capacity must be positive".into()));
        }

        let k = &self.kalman;
        let a = matrix("a", &k.a)?;
        let n = a.nrows();
        let b = if k.b.iter().all(Vec::is_empty) {
            DMatrix::zeros(n, 0)
        } else {
            matrix("b", &k.b)?
        };
        let kalman = KalmanModel::new(
            a,
            b,
            matrix("h", &k.h)?,
            matrix("q", &k.q)?,
            matrix("r", &k.r)?,
        )?;
        if kalman.obs_dim() != 3 {
            return Err(invalid(format!(
                "kalman.h must have 3 rows (one per telemetry metric), got {}",
                kalman.obs_dim()
            )));
        }
        let kalman_init =
            kalman.initial_state(DVector::from_column_slice(&k.x0), matrix("p0", &k.p0)?)?;

        let policy = self.policy();
        policy.validate().map_err(invalid)?;
        let pin = match self.controller.pin_signal {
            None => None,
            Some(v) => Some(
                Signal::from_u8(v)
                    .ok_or_else(|| invalid(format!("pin_signal must be 0 or 1, got {v}")))?,
            ),
        };

        Ok(Scenario {
            mode,
            seed: self.sim.seed,
            max_cycles: self.sim.max_cycles,
            warmdrain: self.sim.warmdrain,
            drain_factor: self.sim.drain_factor,
            check_invariants: self.sim.check_invariants,
            topology,
            router,
            cpu,
            gpu,
            reply_len,
            width_factor,
            memory: self.memory,
            kalman,
            kalman_init,
            threshold: k.threshold,
            policy,
            pin,
            fair_partition,
        })
    }
}
