//! The global cycle loop.
//!
//! Per cycle: traffic generation, network-interface injection, every router
//! in row-major order (subnet by subnet), memory controllers, then epoch
//! bookkeeping. Flits and credits produced by a router carry a future
//! arrival cycle, so tick order inside a cycle cannot change the outcome.

use std::collections::VecDeque;

use crate::controller::{arb_mode_for, vc_partition_for, Controller};
use crate::error::{InvariantViolation, SimError};
use crate::kalman::{Predictor, Signal};
use crate::router::{
    vc_allowed, ArbMode, Flit, MsgKind, Packet, Router, TickContext, TickOutput, TrafficClass,
    VcPartition,
};
use crate::sim::config::{subnet_of, Mode, Scenario};
use crate::sim::{ClassStats, ControllerRecord, EpochRecord, KfRecord, SimResult};
use crate::topology::{NodeRole, Port};
use crate::traffic::{generate_traffic, McState, TelemetryCounters};

/// Source side of a node's injection channel into one subnet.
#[derive(Clone, Debug)]
struct Ni {
    queue: VecDeque<Packet>,
    /// Packet being serialised: `(packet, vc, next flit)`.
    current: Option<(Packet, usize, u16)>,
    credits: Vec<u32>,
    busy: Vec<bool>,
    tail_sent: Vec<bool>,
    credit_incoming: VecDeque<(u64, usize)>,
    vc_ptr: usize,
}

impl Ni {
    fn new(num_vcs: usize, depth: u32) -> Self {
        Self {
            queue: VecDeque::new(),
            current: None,
            credits: vec![depth; num_vcs],
            busy: vec![false; num_vcs],
            tail_sent: vec![false; num_vcs],
            credit_incoming: VecDeque::new(),
            vc_ptr: 0,
        }
    }

    fn is_idle(&self) -> bool {
        self.queue.is_empty() && self.current.is_none() && self.credit_incoming.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Accum {
    latency_sum: u128,
    latency_count: u64,
    min_latency: Option<u64>,
    max_latency: u64,
    window_flits: u64,
    requests_created: u64,
    replies_created: u64,
    requests_delivered: u64,
    replies_delivered: u64,
}

pub(crate) struct Engine {
    sc: Scenario,
    routers: Vec<Vec<Router>>,
    nis: Vec<Vec<Ni>>,
    mc_of_node: Vec<Option<usize>>,
    mcs: Vec<McState>,
    mc_arrivals: Vec<VecDeque<(u64, Packet)>>,
    mc_nodes: Vec<crate::topology::NodeId>,
    partition: Option<VcPartition>,
    arb: ArbMode,
    counters: TelemetryCounters,
    predictor: Option<Predictor>,
    controller: Option<Controller>,
    applied: Signal,
    next_id: u64,
    cycle: u64,
    acc: [Accum; 2],
    reconfigurations: u64,
    epochs: Vec<EpochRecord>,
    kf_trace: Vec<KfRecord>,
    controller_trace: Vec<ControllerRecord>,
    scratch: TickOutput,
    gen_buf: Vec<Packet>,
}

impl Engine {
    pub(crate) fn new(sc: Scenario) -> Self {
        let topo = &sc.topology;
        let subnets = topo.subnet_count();
        let v = sc.router.num_vcs;
        let b = sc.router.buffer_depth as u32;
        let routers = (0..subnets)
            .map(|_| topo.nodes().map(|n| Router::new(n, sc.router)).collect())
            .collect();
        let nis = (0..subnets)
            .map(|_| (0..topo.num_nodes()).map(|_| Ni::new(v, b)).collect())
            .collect();
        let mut mc_of_node = vec![None; topo.num_nodes()];
        let mut mcs = Vec::new();
        let mut mc_nodes = Vec::new();
        for n in topo.nodes() {
            if topo.role(n) == NodeRole::MemoryController {
                mc_of_node[topo.index_of(n)] = Some(mcs.len());
                mcs.push(McState::new(n, sc.memory));
                mc_nodes.push(n);
            }
        }
        let partition = match sc.mode {
            Mode::FourSubnet | Mode::TwoSubnetRr => None,
            Mode::TwoSubnetFair => Some(sc.fair_partition),
            Mode::TwoSubnetKf => {
                Some(vc_partition_for(Signal::Balanced, v).expect("validated VC count"))
            }
        };
        let (predictor, controller) = if sc.mode == Mode::TwoSubnetKf {
            (
                Some(Predictor::new(
                    sc.kalman.clone(),
                    sc.kalman_init.clone(),
                    sc.threshold,
                )),
                Some(Controller::new(sc.policy, sc.pin)),
            )
        } else {
            (None, None)
        };
        let mc_count = mcs.len();
        Self {
            routers,
            nis,
            mc_of_node,
            mcs,
            mc_arrivals: vec![VecDeque::new(); mc_count],
            mc_nodes,
            partition,
            arb: ArbMode::RoundRobin,
            counters: TelemetryCounters::default(),
            predictor,
            controller,
            applied: Signal::Balanced,
            next_id: 0,
            cycle: 0,
            acc: [Accum::default(); 2],
            reconfigurations: 0,
            epochs: Vec::new(),
            kf_trace: Vec::new(),
            controller_trace: Vec::new(),
            scratch: TickOutput::default(),
            gen_buf: Vec::new(),
            sc,
        }
    }

    pub(crate) fn run(mut self) -> Result<SimResult, SimError> {
        let max = self.sc.max_cycles;
        while self.cycle < max {
            self.step(true)?;
        }
        if self.sc.warmdrain {
            let limit = max + self.sc.drain_factor * max;
            while !self.is_quiescent() {
                if self.cycle >= limit {
                    return Err(SimError::DrainTimeout {
                        limit: limit - max,
                        outstanding: self.outstanding(),
                    });
                }
                self.step(false)?;
            }
        }
        Ok(self.finish())
    }

    /// Applies a fixed allocation signal, bypassing filter and controller.
    #[cfg(test)]
    pub(crate) fn force_signal(&mut self, s: Signal) {
        self.applied = s;
        self.partition = Some(vc_partition_for(s, self.sc.router.num_vcs).unwrap());
        self.arb = arb_mode_for(s);
    }

    pub(crate) fn step(&mut self, inject: bool) -> Result<(), SimError> {
        let t = self.cycle;
        if inject {
            self.generate(t);
        }
        self.inject(t)?;
        self.tick_routers(t)?;
        self.tick_mcs(t);
        let epoch_len = self.sc.policy.epoch_len_cycles;
        if inject && (t + 1).is_multiple_of(epoch_len) {
            self.end_epoch(t + 1)?;
        }
        if self.sc.check_invariants {
            self.check_invariants(t)?;
        }
        self.cycle += 1;
        Ok(())
    }

    fn generate(&mut self, t: u64) {
        let topo = &self.sc.topology;
        let subnets = topo.subnet_count();
        for i in 0..topo.num_nodes() {
            let role = topo.roles()[i];
            let profile = match role {
                NodeRole::CpuChiplet => &self.sc.cpu,
                NodeRole::GpuChiplet => &self.sc.gpu,
                NodeRole::MemoryController => continue,
            };
            self.gen_buf.clear();
            generate_traffic(
                topo.node_at(i),
                i,
                role,
                profile,
                t,
                self.sc.seed,
                &self.mc_nodes,
                &mut self.next_id,
                &mut self.gen_buf,
            );
            for p in self.gen_buf.drain(..) {
                let c = p.class.index();
                self.counters.icnt_push[c] += 1;
                self.acc[c].requests_created += 1;
                self.nis[subnet_of(p.class, MsgKind::Request, subnets)][i]
                    .queue
                    .push_back(p);
            }
        }
    }

    fn inject(&mut self, t: u64) -> Result<(), SimError> {
        let v = self.sc.router.num_vcs;
        let depth = self.sc.router.buffer_depth as u32;
        let partition = self.partition.as_ref();
        for (s, nis) in self.nis.iter_mut().enumerate() {
            for (i, ni) in nis.iter_mut().enumerate() {
                while let Some(&(at, vc)) = ni.credit_incoming.front() {
                    if at > t {
                        break;
                    }
                    ni.credit_incoming.pop_front();
                    ni.credits[vc] += 1;
                    if ni.tail_sent[vc] && ni.credits[vc] == depth {
                        ni.busy[vc] = false;
                        ni.tail_sent[vc] = false;
                    }
                }
                if ni.current.is_none() {
                    if let Some(class) = ni.queue.front().map(|p| p.class) {
                        let free = (0..v)
                            .map(|k| (ni.vc_ptr + k) % v)
                            .find(|&vc| !ni.busy[vc] && vc_allowed(partition, class, vc));
                        if let Some(vc) = free {
                            let p = ni.queue.pop_front().expect("front checked");
                            ni.busy[vc] = true;
                            ni.vc_ptr = (vc + 1) % v;
                            if p.msg == MsgKind::Reply {
                                let m = self.mc_of_node[i]
                                    .expect("replies originate at memory controllers");
                                self.mcs[m].reply_injected();
                            }
                            ni.current = Some((p, vc, 0));
                        }
                    }
                }
                if let Some((p, vc, seq)) = ni.current.as_mut() {
                    if ni.credits[*vc] > 0 {
                        let flit = p.flit(*seq);
                        self.routers[s][i].accept_flit(Port::Local, *vc, flit, t + 1)?;
                        ni.credits[*vc] -= 1;
                        *seq += 1;
                        if flit.is_tail() {
                            ni.tail_sent[*vc] = true;
                            ni.current = None;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn tick_routers(&mut self, t: u64) -> Result<(), SimError> {
        let link = self.sc.router.link_delay();
        let eject = self.sc.router.eject_delay();
        let mut out = std::mem::take(&mut self.scratch);
        for s in 0..self.routers.len() {
            for i in 0..self.routers[s].len() {
                let eject_open = self.mc_of_node[i].is_none_or(|m| self.mcs[m].accepting());
                let ctx = TickContext {
                    partition: self.partition.as_ref(),
                    arb: &self.arb,
                    eject_open,
                };
                out.clear();
                self.routers[s][i].tick(t, &ctx, &mut out)?;
                let node = self.sc.topology.node_at(i);
                for &(port, vc, flit) in &out.flits {
                    let nb = self.sc.topology.neighbor(node, port).ok_or_else(|| {
                        InvariantViolation {
                            invariant: "route stays on mesh",
                            cycle: t,
                            detail: format!("router {node} sent a flit off the {port:?} edge"),
                        }
                    })?;
                    let j = self.sc.topology.index_of(nb);
                    self.routers[s][j].accept_flit(port.opposite(), vc, flit, t + link)?;
                }
                for &(port, vc) in &out.credits {
                    if port == Port::Local {
                        self.nis[s][i].credit_incoming.push_back((t + 1, vc));
                    } else {
                        let nb = self
                            .sc
                            .topology
                            .neighbor(node, port)
                            .expect("credit for a connected port");
                        let j = self.sc.topology.index_of(nb);
                        self.routers[s][j].accept_credit(port.opposite(), vc, t + 1);
                    }
                }
                for c in 0..2 {
                    self.counters.stall_icnt_shader[c] += out.eject_stalls[c];
                }
                for k in 0..out.ejected.len() {
                    let flit = out.ejected[k];
                    self.sink(flit, t + eject, i)?;
                }
            }
        }
        self.scratch = out;
        Ok(())
    }

    fn sink(&mut self, flit: Flit, at: u64, node: usize) -> Result<(), SimError> {
        let c = flit.class.index();
        let in_window = at >= self.sc.policy.warmup_cycles && at < self.sc.max_cycles;
        if in_window {
            self.acc[c].window_flits += 1;
        }
        if flit.msg == MsgKind::Reply && at < self.sc.max_cycles {
            self.counters.reply_flits[c] += 1;
        }
        if !flit.is_tail() {
            return Ok(());
        }
        let latency = at - flit.inject_cycle;
        if self.sc.check_invariants {
            let depth = self.sc.router.pipeline_depth;
            let floor = depth * (flit.src.manhattan(flit.dest) as u64 + 1) + flit.len as u64 - 1;
            if latency < floor {
                return Err(InvariantViolation {
                    invariant: "latency >= pipeline_depth * hops + len - 1",
                    cycle: at,
                    detail: format!(
                        "packet {} latency {latency} below floor {floor}",
                        flit.packet_id
                    ),
                }
                .into());
            }
        }
        let acc = &mut self.acc[c];
        if flit.inject_cycle >= self.sc.policy.warmup_cycles
            && flit.inject_cycle < self.sc.max_cycles
        {
            acc.latency_sum += latency as u128;
            acc.latency_count += 1;
            acc.min_latency = Some(acc.min_latency.map_or(latency, |m| m.min(latency)));
            acc.max_latency = acc.max_latency.max(latency);
        }
        match flit.msg {
            MsgKind::Request => {
                acc.requests_delivered += 1;
                let m = self.mc_of_node[node].ok_or_else(|| InvariantViolation {
                    invariant: "requests terminate at memory controllers",
                    cycle: at,
                    detail: format!(
                        "request {} ejected at non-controller node {}",
                        flit.packet_id, flit.dest
                    ),
                })?;
                let packet = Packet {
                    id: flit.packet_id,
                    class: flit.class,
                    msg: flit.msg,
                    src: flit.src,
                    dest: flit.dest,
                    inject_cycle: flit.inject_cycle,
                    len: flit.len,
                };
                self.mc_arrivals[m].push_back((at, packet));
            }
            MsgKind::Reply => acc.replies_delivered += 1,
        }
        Ok(())
    }

    fn tick_mcs(&mut self, t: u64) {
        let subnets = self.sc.topology.subnet_count();
        let reply_len = self.sc.reply_len;
        for m in 0..self.mcs.len() {
            let arrivals = &mut self.mc_arrivals[m];
            let ready = arrivals.iter().take_while(|&&(at, _)| at <= t).count();
            let result = self.mcs[m].tick(
                arrivals.drain(..ready).map(|(_, p)| p),
                t,
                reply_len,
                &mut self.next_id,
            );
            for c in 0..2 {
                self.counters.stall_dramfull[c] += result.dramfull[c];
            }
            if let Some(reply) = result.reply {
                self.acc[reply.class.index()].replies_created += 1;
                let node = self.sc.topology.index_of(self.mc_nodes[m]);
                self.nis[subnet_of(reply.class, MsgKind::Reply, subnets)][node]
                    .queue
                    .push_back(reply);
            }
        }
    }

    fn end_epoch(&mut self, end_cycle: u64) -> Result<(), SimError> {
        let len = self.sc.policy.epoch_len_cycles;
        let epoch = end_cycle / len - 1;
        let telemetry = self.counters.collect_epoch(epoch, end_cycle, len);
        if let (Some(pred), Some(ctrl)) = (self.predictor.as_mut(), self.controller.as_mut()) {
            let step = pred.step(&telemetry)?;
            self.kf_trace.push(KfRecord {
                epoch,
                cycle: end_cycle,
                z: [step.z[0], step.z[1], step.z[2]],
                x_prior: step.prior.x[0],
                p_prior: step.prior.p[(0, 0)],
                gain: [
                    step.state.gain[(0, 0)],
                    step.state.gain[(0, 1)],
                    step.state.gain[(0, 2)],
                ],
                x_post: step.state.x[0],
                p_post: step.state.p[(0, 0)],
                predicted: step.predicted,
                signal: step.signal,
            });
            let d = ctrl.decide(step.signal, end_cycle);
            self.controller_trace.push(ControllerRecord {
                cycle: end_cycle,
                kf_signal: step.signal,
                applied: d.applied,
                changed: d.changed,
                reason: d.reason,
            });
            if d.changed {
                self.reconfigurations += 1;
                self.applied = d.applied;
                self.partition = Some(
                    vc_partition_for(d.applied, self.sc.router.num_vcs)
                        .expect("validated VC count"),
                );
                self.arb = arb_mode_for(d.applied);
            }
        }
        self.epochs.push(EpochRecord {
            telemetry,
            applied: self.applied,
        });
        Ok(())
    }

    fn is_quiescent(&self) -> bool {
        self.nis.iter().flatten().all(Ni::is_idle)
            && self.routers.iter().flatten().all(Router::is_quiescent)
            && self
                .mcs
                .iter()
                .all(|m| m.held() == 0 && m.outstanding_replies() == 0)
            && self.mc_arrivals.iter().all(VecDeque::is_empty)
    }

    fn outstanding(&self) -> u64 {
        self.acc
            .iter()
            .map(|a| {
                a.requests_created + a.replies_created - a.requests_delivered - a.replies_delivered
            })
            .sum()
    }

    /// Credit conservation on every link and packet conservation per class
    /// and message kind (which covers every subnet).
    fn check_invariants(&self, t: u64) -> Result<(), InvariantViolation> {
        let topo = &self.sc.topology;
        let b = self.sc.router.buffer_depth;
        let v = self.sc.router.num_vcs;
        for s in 0..self.routers.len() {
            for i in 0..topo.num_nodes() {
                let node = topo.node_at(i);
                let r = &self.routers[s][i];
                for port in [Port::East, Port::West, Port::North, Port::South] {
                    let Some(nb) = topo.neighbor(node, port) else {
                        continue;
                    };
                    let down = &self.routers[s][topo.index_of(nb)];
                    for vc in 0..v {
                        let total = r.credits(port, vc) as usize
                            + r.credits_in_flight(port, vc)
                            + down.occupancy(port.opposite(), vc);
                        if total != b {
                            return Err(InvariantViolation {
                                invariant: "credit conservation",
                                cycle: t,
                                detail: format!(
                                    "subnet {s} link {node}->{nb} vc {vc}: credits + in flight + occupancy = {total}, expected {b}"
                                ),
                            });
                        }
                    }
                }
                let ni = &self.nis[s][i];
                for vc in 0..v {
                    let in_flight = ni.credit_incoming.iter().filter(|&&(_, x)| x == vc).count();
                    let total = ni.credits[vc] as usize + in_flight + r.occupancy(Port::Local, vc);
                    if total != b {
                        return Err(InvariantViolation {
                            invariant: "credit conservation",
                            cycle: t,
                            detail: format!("subnet {s} injection link at {node} vc {vc}: total {total}, expected {b}"),
                        });
                    }
                }
            }
        }

        // [class][msg]
        let mut queued = [[0u64; 2]; 2];
        let mut in_network = [[0u64; 2]; 2];
        let msg_idx = |m: MsgKind| match m {
            MsgKind::Request => 0,
            MsgKind::Reply => 1,
        };
        for ni in self.nis.iter().flatten() {
            for p in &ni.queue {
                queued[p.class.index()][msg_idx(p.msg)] += 1;
            }
            if let Some((p, _, _)) = &ni.current {
                in_network[p.class.index()][msg_idx(p.msg)] += 1;
            }
        }
        for r in self.routers.iter().flatten() {
            for (_, _, f) in r.buffered() {
                if f.is_tail() {
                    in_network[f.class.index()][msg_idx(f.msg)] += 1;
                }
            }
        }
        for class in TrafficClass::ALL {
            let c = class.index();
            let at_mc: u64 = self
                .mcs
                .iter()
                .map(|m| m.held_by_class(class) as u64)
                .sum::<u64>()
                + self
                    .mc_arrivals
                    .iter()
                    .flatten()
                    .filter(|(_, p)| p.class == class)
                    .count() as u64;
            let a = &self.acc[c];
            let req_rhs = queued[c][0] + in_network[c][0] + at_mc + a.replies_created;
            let rep_rhs = queued[c][1] + in_network[c][1] + a.replies_delivered;
            if a.requests_created != req_rhs || a.replies_created != rep_rhs {
                return Err(InvariantViolation {
                    invariant: "packet conservation",
                    cycle: t,
                    detail: format!(
                        "{}: requests created {} vs queued+network+mc+retired {}; replies created {} vs queued+network+delivered {}",
                        class.name(),
                        a.requests_created,
                        req_rhs,
                        a.replies_created,
                        rep_rhs
                    ),
                });
            }
        }
        Ok(())
    }

    fn finish(self) -> SimResult {
        let window = self
            .sc
            .max_cycles
            .saturating_sub(self.sc.policy.warmup_cycles)
            .max(1);
        let class_stats = |c: TrafficClass| {
            let a = &self.acc[c.index()];
            ClassStats {
                packets_injected: a.requests_created + a.replies_created,
                packets_delivered: a.requests_delivered + a.replies_delivered,
                transactions_completed: a.replies_delivered,
                latency_samples: a.latency_count,
                mean_latency: if a.latency_count > 0 {
                    a.latency_sum as f64 / a.latency_count as f64
                } else {
                    0.0
                },
                min_latency: a.min_latency.unwrap_or(0),
                max_latency: a.max_latency,
                throughput: a.window_flits as f64 / self.sc.width_factor as f64 / window as f64,
            }
        };
        SimResult {
            mode: self.sc.mode,
            seed: self.sc.seed,
            max_cycles: self.sc.max_cycles,
            cycles_run: self.cycle,
            cpu: class_stats(TrafficClass::Cpu),
            gpu: class_stats(TrafficClass::Gpu),
            reconfigurations: self.reconfigurations,
            epochs: self.epochs,
            kf_trace: self.kf_trace,
            controller_trace: self.controller_trace,
        }
    }
}
