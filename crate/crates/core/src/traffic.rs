//! Synthetic traffic sources, memory controllers and per-epoch telemetry.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::router::{MsgKind, Packet, TrafficClass};
use crate::topology::{NodeId, NodeRole};

/// Constant injection rate from `start` until the next phase begins.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub start: u64,
    /// Packets per core per cycle.
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrafficProfile {
    pub class: TrafficClass,
    pub phases: Vec<Phase>,
    pub cores_per_node: u32,
    pub request_len: u16,
}

impl TrafficProfile {
    pub fn validate(&self) -> Result<(), String> {
        let name = self.class.name();
        let first = self
            .phases
            .first()
            .ok_or_else(|| format!("{name} traffic has no phases"))?;
        if first.start != 0 {
            return Err(format!("{name} traffic: first phase must start at cycle 0"));
        }
        if self.phases.windows(2).any(|w| w[0].start >= w[1].start) {
            return Err(format!(
                "{name} traffic: phases must have strictly increasing start cycles"
            ));
        }
        if let Some(p) = self.phases.iter().find(|p| !(0.0..=1.0).contains(&p.rate)) {
            return Err(format!("{name} traffic: rate {} outside [0, 1]", p.rate));
        }
        if self.request_len == 0 {
            return Err(format!(
                "{name} traffic: request length must be at least one flit"
            ));
        }
        Ok(())
    }

    pub fn rate_at(&self, cycle: u64) -> f64 {
        let i = self.phases.partition_point(|p| p.start <= cycle);
        self.phases[i.saturating_sub(1)].rate
    }

    /// Whether any phase injects.
    pub fn is_active(&self) -> bool {
        self.phases.iter().any(|p| p.rate > 0.0)
    }
}

pub fn class_of_role(role: NodeRole) -> Option<TrafficClass> {
    match role {
        NodeRole::CpuChiplet => Some(TrafficClass::Cpu),
        NodeRole::GpuChiplet => Some(TrafficClass::Gpu),
        NodeRole::MemoryController => None,
    }
}

/// Random stream keyed by `(seed, node, cycle)`, so draws never depend on
/// how many values other nodes or earlier cycles consumed.
pub fn node_cycle_rng(seed: u64, node_index: usize, cycle: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(node_index as u64).to_le_bytes());
    key[16..24].copy_from_slice(&cycle.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Bernoulli injection for one node and cycle: each core independently
/// issues a request with the phase's rate, addressed to a memory controller
/// drawn uniformly. Packet ids are taken from `next_id`.
#[allow(clippy::too_many_arguments)]
pub fn generate_traffic(
    node: NodeId,
    node_index: usize,
    role: NodeRole,
    profile: &TrafficProfile,
    cycle: u64,
    seed: u64,
    mcs: &[NodeId],
    next_id: &mut u64,
    out: &mut Vec<Packet>,
) {
    debug_assert_eq!(
        class_of_role(role),
        Some(profile.class),
        "profile class must match node role"
    );
    let rate = profile.rate_at(cycle);
    if rate <= 0.0 || mcs.is_empty() {
        return;
    }
    let mut rng = node_cycle_rng(seed, node_index, cycle);
    for _ in 0..profile.cores_per_node {
        if rng.random_bool(rate) {
            let dest = mcs[rng.random_range(0..mcs.len())];
            out.push(Packet {
                id: *next_id,
                class: profile.class,
                msg: MsgKind::Request,
                src: node,
                dest,
                inject_cycle: cycle,
                len: profile.request_len,
            });
            *next_id += 1;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McParams {
    /// Requests in service plus completed replies not yet handed to the
    /// network.
    pub queue_capacity: usize,
    pub service_latency: u64,
}

impl Default for McParams {
    fn default() -> Self {
        Self {
            queue_capacity: 16,
            service_latency: 30,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct McTick {
    pub reply: Option<Packet>,
    /// Refused arrivals still waiting at the ejection port, per class.
    pub dramfull: [u64; 2],
}

/// Abstract memory controller: bounded in-order queue with fixed latency and
/// at most one completion per cycle.
#[derive(Clone, Debug)]
pub struct McState {
    node: NodeId,
    params: McParams,
    queue: VecDeque<(Packet, u64)>,
    busy_until: u64,
    /// Arrivals refused by a full queue, oldest first.
    port: VecDeque<Packet>,
    outstanding_replies: usize,
}

impl McState {
    pub fn new(node: NodeId, params: McParams) -> Self {
        Self {
            node,
            params,
            queue: VecDeque::with_capacity(params.queue_capacity),
            busy_until: 0,
            port: VecDeque::new(),
            outstanding_replies: 0,
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    /// The network may eject a new request here only while no refused
    /// arrival is waiting.
    pub fn accepting(&self) -> bool {
        self.port.is_empty()
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    /// Requests held by the controller, queued or refused at the port.
    pub fn held(&self) -> usize {
        self.queue.len() + self.port.len()
    }

    pub fn held_by_class(&self, class: TrafficClass) -> usize {
        self.queue
            .iter()
            .map(|(p, _)| p)
            .chain(self.port.iter())
            .filter(|p| p.class == class)
            .count()
    }

    pub fn outstanding_replies(&self) -> usize {
        self.outstanding_replies
    }

    /// Frees the slot held by a reply once its head has entered the network.
    pub fn reply_injected(&mut self) {
        debug_assert!(self.outstanding_replies > 0);
        self.outstanding_replies -= 1;
    }

    fn has_room(&self) -> bool {
        self.queue.len() + self.outstanding_replies < self.params.queue_capacity
    }

    /// One controller cycle: retire at most one finished request as a reply,
    /// then admit refused and new arrivals in order while room remains.
    pub fn tick(
        &mut self,
        arrivals: impl IntoIterator<Item = Packet>,
        cycle: u64,
        reply_len: u16,
        next_id: &mut u64,
    ) -> McTick {
        let mut result = McTick::default();
        if self.queue.front().is_some_and(|&(_, done)| done <= cycle) {
            let (req, _) = self.queue.pop_front().expect("checked front");
            result.reply = Some(Packet {
                id: *next_id,
                class: req.class,
                msg: MsgKind::Reply,
                src: self.node,
                dest: req.src,
                inject_cycle: cycle,
                len: reply_len,
            });
            *next_id += 1;
            self.outstanding_replies += 1;
        }
        self.port.extend(arrivals);
        while self.has_room() {
            let Some(req) = self.port.pop_front() else {
                break;
            };
            let done = (cycle + self.params.service_latency).max(self.busy_until + 1);
            self.busy_until = done;
            self.queue.push_back((req, done));
        }
        for req in &self.port {
            result.dramfull[req.class.index()] += 1;
        }
        result
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClassTelemetry {
    /// Requests issued by the class's cores this epoch.
    pub icnt_push: u64,
    /// Reply-VC cycles spent ready but blocked at the ejection port.
    pub stall_icnt_shader: u64,
    /// Request-cycles refused by a full memory-controller queue.
    pub stall_dramfull: u64,
    /// Reply flits delivered per cycle.
    pub throughput_proxy: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochTelemetry {
    pub epoch: u64,
    /// First cycle after the epoch.
    pub end_cycle: u64,
    pub cpu: ClassTelemetry,
    pub gpu: ClassTelemetry,
}

impl EpochTelemetry {
    pub fn class(&self, class: TrafficClass) -> &ClassTelemetry {
        match class {
            TrafficClass::Cpu => &self.cpu,
            TrafficClass::Gpu => &self.gpu,
        }
    }
}

/// Running per-class tallies for the current epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TelemetryCounters {
    pub icnt_push: [u64; 2],
    pub stall_icnt_shader: [u64; 2],
    pub stall_dramfull: [u64; 2],
    pub reply_flits: [u64; 2],
}

impl TelemetryCounters {
    /// Snapshots the epoch and resets every tally.
    pub fn collect_epoch(&mut self, epoch: u64, end_cycle: u64, epoch_len: u64) -> EpochTelemetry {
        let snap = std::mem::take(self);
        let class = |c: TrafficClass| {
            let i = c.index();
            ClassTelemetry {
                icnt_push: snap.icnt_push[i],
                stall_icnt_shader: snap.stall_icnt_shader[i],
                stall_dramfull: snap.stall_dramfull[i],
                throughput_proxy: snap.reply_flits[i] as f64 / epoch_len as f64,
            }
        };
        EpochTelemetry {
            epoch,
            end_cycle,
            cpu: class(TrafficClass::Cpu),
            gpu: class(TrafficClass::Gpu),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(class: TrafficClass, phases: Vec<Phase>, cores: u32) -> TrafficProfile {
        TrafficProfile {
            class,
            phases,
            cores_per_node: cores,
            request_len: 1,
        }
    }

    fn count(p: &TrafficProfile, role: NodeRole, cycles: u64, mcs: &[NodeId]) -> Vec<Packet> {
        let mut out = Vec::new();
        let mut id = 0;
        for c in 0..cycles {
            generate_traffic(NodeId::new(1, 1), 7, role, p, c, 11, mcs, &mut id, &mut out);
        }
        out
    }

    #[test]
    fn zero_rate_generates_nothing() {
        let p = profile(
            TrafficClass::Cpu,
            vec![Phase {
                start: 0,
                rate: 0.0,
            }],
            1,
        );
        assert!(count(&p, NodeRole::CpuChiplet, 5_000, &[NodeId::new(0, 0)]).is_empty());
    }

    #[test]
    fn full_rate_single_mc() {
        let mc = NodeId::new(0, 2);
        let p = profile(
            TrafficClass::Cpu,
            vec![Phase {
                start: 0,
                rate: 1.0,
            }],
            1,
        );
        let pkts = count(&p, NodeRole::CpuChiplet, 100, &[mc]);
        assert_eq!(pkts.len(), 100);
        for (c, pk) in pkts.iter().enumerate() {
            assert_eq!(pk.inject_cycle, c as u64);
            assert_eq!(pk.dest, mc);
        }
    }

    #[test]
    fn binomial_count_within_three_sigma() {
        // n = 10_000, p = 0.3: mean 3000, sigma = sqrt(2100) ≈ 45.8
        let p = profile(
            TrafficClass::Cpu,
            vec![Phase {
                start: 0,
                rate: 0.3,
            }],
            1,
        );
        let n = count(&p, NodeRole::CpuChiplet, 10_000, &[NodeId::new(0, 0)]).len() as f64;
        let sigma = (10_000.0f64 * 0.3 * 0.7).sqrt();
        assert!((n - 3000.0).abs() <= 3.0 * sigma, "count {n}");
    }

    #[test]
    fn gpu_nodes_inject_per_core() {
        let p = profile(
            TrafficClass::Gpu,
            vec![Phase {
                start: 0,
                rate: 1.0,
            }],
            2,
        );
        assert_eq!(
            count(&p, NodeRole::GpuChiplet, 50, &[NodeId::new(0, 0)]).len(),
            100
        );
    }

    #[test]
    fn phases_select_rate() {
        let p = profile(
            TrafficClass::Gpu,
            vec![
                Phase {
                    start: 0,
                    rate: 0.1,
                },
                Phase {
                    start: 100,
                    rate: 0.0,
                },
                Phase {
                    start: 200,
                    rate: 0.9,
                },
            ],
            1,
        );
        assert_eq!(p.rate_at(0), 0.1);
        assert_eq!(p.rate_at(99), 0.1);
        assert_eq!(p.rate_at(100), 0.0);
        assert_eq!(p.rate_at(5_000), 0.9);
        assert!(p.validate().is_ok());
        let bad = profile(
            TrafficClass::Gpu,
            vec![Phase {
                start: 5,
                rate: 0.1,
            }],
            1,
        );
        assert!(bad.validate().is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let mcs = [NodeId::new(0, 1), NodeId::new(5, 1), NodeId::new(0, 2)];
        let p = profile(
            TrafficClass::Gpu,
            vec![Phase {
                start: 0,
                rate: 0.2,
            }],
            2,
        );
        assert_eq!(
            count(&p, NodeRole::GpuChiplet, 2_000, &mcs),
            count(&p, NodeRole::GpuChiplet, 2_000, &mcs)
        );
    }

    fn request(id: u64, class: TrafficClass) -> Packet {
        Packet {
            id,
            class,
            msg: MsgKind::Request,
            src: NodeId::new(2, 2),
            dest: NodeId::new(0, 1),
            inject_cycle: 0,
            len: 1,
        }
    }

    #[test]
    fn quiescent_mc() {
        let mut mc = McState::new(NodeId::new(0, 1), McParams::default());
        let mut id = 0;
        let t = mc.tick([], 0, 5, &mut id);
        assert_eq!(t, McTick::default());
    }

    #[test]
    fn reply_after_service_latency() {
        let mut mc = McState::new(NodeId::new(0, 1), McParams::default());
        let mut id = 100;
        assert!(mc
            .tick([request(1, TrafficClass::Cpu)], 40, 5, &mut id)
            .reply
            .is_none());
        for c in 41..70 {
            assert!(mc.tick([], c, 5, &mut id).reply.is_none());
        }
        let reply = mc.tick([], 70, 5, &mut id).reply.unwrap();
        assert_eq!(reply.inject_cycle, 70);
        assert_eq!(reply.dest, NodeId::new(2, 2));
        assert_eq!(reply.msg, MsgKind::Reply);
        assert_eq!(reply.len, 5);
        assert_eq!(reply.id, 100);
    }

    #[test]
    fn full_queue_blocks_and_counts_stalls() {
        // Capacity 1, latency 10. Two GPU arrivals at t = 0: the first is
        // served and completes at 10; its reply holds the slot until it is
        // handed to the network (acknowledged right after the tick), so the
        // second is admitted at 11 after 11 refused cycles (0..=10).
        let params = McParams {
            queue_capacity: 1,
            service_latency: 10,
        };
        let mut mc = McState::new(NodeId::new(0, 1), params);
        let mut id = 0;
        let mut stalls = 0;
        let mut admitted_at = None;
        for c in 0..30 {
            let arrivals = if c == 0 {
                vec![request(1, TrafficClass::Gpu), request(2, TrafficClass::Gpu)]
            } else {
                vec![]
            };
            let t = mc.tick(arrivals, c, 5, &mut id);
            stalls += t.dramfull[TrafficClass::Gpu.index()];
            assert_eq!(t.dramfull[TrafficClass::Cpu.index()], 0);
            if t.reply.is_some() {
                mc.reply_injected();
            }
            if admitted_at.is_none() && mc.accepting() {
                admitted_at = Some(c);
            }
            assert!(mc.queue_len() <= 1);
        }
        assert_eq!(stalls, 11);
        assert_eq!(admitted_at, Some(11));
    }

    #[test]
    fn one_completion_per_cycle_in_order() {
        let mut mc = McState::new(NodeId::new(0, 1), McParams::default());
        let mut id = 0;
        let mut replies = Vec::new();
        mc.tick((0..3).map(|i| request(i, TrafficClass::Cpu)), 0, 1, &mut id);
        for c in 1..40 {
            if let Some(r) = mc.tick([], c, 1, &mut id).reply {
                replies.push(r.inject_cycle);
                mc.reply_injected();
            }
        }
        assert_eq!(replies, vec![30, 31, 32]);
    }

    #[test]
    fn collect_epoch_snapshots_and_resets() {
        let mut t = TelemetryCounters::default();
        t.icnt_push[TrafficClass::Gpu.index()] = 3;
        t.reply_flits[TrafficClass::Gpu.index()] = 50;
        let e = t.collect_epoch(4, 5_000, 1_000);
        assert_eq!(e.gpu.icnt_push, 3);
        assert_eq!(e.gpu.throughput_proxy, 0.05);
        assert_eq!(e.cpu, ClassTelemetry::default());
        assert_eq!(t, TelemetryCounters::default());
    }
}
