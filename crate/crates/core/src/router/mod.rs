//! Input-buffered virtual-channel router with credit-based wormhole flow
//! control.
//!
//! A head flit spends one cycle in each of route computation, VC allocation
//! and switch allocation, then `pipeline_depth - 3` cycles in switch and link
//! traversal, so a hop costs `pipeline_depth` cycles. Body flits skip the
//! first two stages and follow the head back-to-back.

pub mod alloc;
pub mod flit;

use std::collections::VecDeque;

use crate::error::InvariantViolation;
use crate::topology::{xy_route, NodeId, OutputPort, Port, NUM_PORTS};
pub use alloc::{
    vc_allowed, ArbMode, ArbPattern, PatternSlot, SaRequest, SwitchAllocator, VcAllocator,
    VcPartition, VcRequest,
};
pub use flit::{Flit, FlitKind, MsgKind, Packet, TrafficClass};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RouterParams {
    pub num_vcs: usize,
    pub buffer_depth: usize,
    pub pipeline_depth: u64,
}

impl RouterParams {
    /// Cycles from switch-allocation win to visibility in the downstream
    /// input buffer.
    #[inline]
    pub fn link_delay(&self) -> u64 {
        self.pipeline_depth - 2
    }

    /// Cycles from switch-allocation win at the destination to ejection.
    #[inline]
    pub fn eject_delay(&self) -> u64 {
        self.pipeline_depth - 3
    }
}

impl Default for RouterParams {
    fn default() -> Self {
        Self {
            num_vcs: 4,
            buffer_depth: 4,
            pipeline_depth: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VcState {
    Idle,
    /// Route computed at cycle `since`; waiting for an output VC.
    Routing {
        out: OutputPort,
        since: u64,
    },
    /// Output VC held; flits may bid for the switch from `ready_at` on.
    Active {
        out: OutputPort,
        out_vc: usize,
        ready_at: u64,
    },
}

#[derive(Clone, Debug)]
struct InputVc {
    buf: VecDeque<(Flit, u64)>,
    state: VcState,
}

#[derive(Clone, Debug)]
struct InputPort {
    vcs: Vec<InputVc>,
    sa_ptr: usize,
}

/// Upstream view of a downstream input port.
#[derive(Clone, Debug)]
struct OutputLink {
    credits: Vec<u32>,
    busy: Vec<bool>,
    tail_sent: Vec<bool>,
    credit_incoming: VecDeque<(u64, usize)>,
}

/// Per-cycle network state shared by every router in a subnet.
#[derive(Clone, Copy, Debug)]
pub struct TickContext<'a> {
    pub partition: Option<&'a VcPartition>,
    pub arb: &'a ArbMode,
    /// Whether a request head may eject at this node (memory controller
    /// port not blocked).
    pub eject_open: bool,
}

#[derive(Clone, Debug, Default)]
pub struct TickOutput {
    /// Flits leaving on mesh ports: `(port, downstream vc, flit)`.
    pub flits: Vec<(Port, usize, Flit)>,
    /// Flits leaving the network at this node.
    pub ejected: Vec<Flit>,
    /// Credits returned upstream: `(input port, vc)`.
    pub credits: Vec<(Port, usize)>,
    /// Reply VCs ready to eject that lost arbitration this cycle, per class.
    pub eject_stalls: [u64; 2],
}

impl TickOutput {
    pub fn clear(&mut self) {
        self.flits.clear();
        self.ejected.clear();
        self.credits.clear();
        self.eject_stalls = [0; 2];
    }
}

#[derive(Clone, Debug)]
pub struct Router {
    node: NodeId,
    params: RouterParams,
    inputs: Vec<InputPort>,
    outputs: Vec<OutputLink>,
    va: VcAllocator,
    sa: SwitchAllocator,
    va_requests: Vec<Vec<VcRequest>>,
    va_grants: Vec<(usize, usize)>,
    sa_requests: Vec<Option<SaRequest>>,
    sa_choice: Vec<Option<usize>>,
    sa_grants: Vec<Option<usize>>,
}

impl Router {
    pub fn new(node: NodeId, params: RouterParams) -> Self {
        let v = params.num_vcs;
        let b = params.buffer_depth as u32;
        let inputs = (0..NUM_PORTS)
            .map(|_| InputPort {
                vcs: (0..v)
                    .map(|_| InputVc {
                        buf: VecDeque::with_capacity(params.buffer_depth),
                        state: VcState::Idle,
                    })
                    .collect(),
                sa_ptr: 0,
            })
            .collect();
        let outputs = (0..NUM_PORTS)
            .map(|_| OutputLink {
                credits: vec![b; v],
                busy: vec![false; v],
                tail_sent: vec![false; v],
                credit_incoming: VecDeque::new(),
            })
            .collect();
        Self {
            node,
            params,
            inputs,
            outputs,
            va: VcAllocator::new(NUM_PORTS * v, NUM_PORTS),
            sa: SwitchAllocator::new(NUM_PORTS, NUM_PORTS),
            va_requests: vec![Vec::new(); NUM_PORTS],
            va_grants: Vec::new(),
            sa_requests: vec![None; NUM_PORTS],
            sa_choice: vec![None; NUM_PORTS],
            sa_grants: vec![None; NUM_PORTS],
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn params(&self) -> &RouterParams {
        &self.params
    }

    /// Places a flit into an input VC buffer; it becomes visible to the
    /// pipeline at `visible_at`.
    pub fn accept_flit(
        &mut self,
        port: Port,
        vc: usize,
        flit: Flit,
        visible_at: u64,
    ) -> Result<(), InvariantViolation> {
        let buf = &mut self.inputs[port.index()].vcs[vc].buf;
        if buf.len() >= self.params.buffer_depth {
            return Err(InvariantViolation {
                invariant: "buffer occupancy <= B",
                cycle: visible_at,
                detail: format!(
                    "router {} input {:?} vc {} overflow with packet {}",
                    self.node, port, vc, flit.packet_id
                ),
            });
        }
        buf.push_back((flit, visible_at));
        Ok(())
    }

    /// Schedules a credit for output `port`/`vc` to arrive at `arrive_at`.
    pub fn accept_credit(&mut self, port: Port, vc: usize, arrive_at: u64) {
        self.outputs[port.index()]
            .credit_incoming
            .push_back((arrive_at, vc));
    }

    pub fn occupancy(&self, port: Port, vc: usize) -> usize {
        self.inputs[port.index()].vcs[vc].buf.len()
    }

    pub fn credits(&self, port: Port, vc: usize) -> u32 {
        self.outputs[port.index()].credits[vc]
    }

    pub fn credits_in_flight(&self, port: Port, vc: usize) -> usize {
        self.outputs[port.index()]
            .credit_incoming
            .iter()
            .filter(|&&(_, v)| v == vc)
            .count()
    }

    pub fn vc_state(&self, port: Port, vc: usize) -> VcState {
        self.inputs[port.index()].vcs[vc].state
    }

    /// Every buffered flit as `(input port, vc, flit)`.
    pub fn buffered(&self) -> impl Iterator<Item = (Port, usize, &Flit)> + '_ {
        self.inputs.iter().enumerate().flat_map(|(p, ip)| {
            ip.vcs.iter().enumerate().flat_map(move |(v, vc)| {
                vc.buf.iter().map(move |(f, _)| (Port::from_index(p), v, f))
            })
        })
    }

    pub fn buffered_flits(&self) -> usize {
        self.inputs
            .iter()
            .flat_map(|p| p.vcs.iter())
            .map(|vc| vc.buf.len())
            .sum()
    }

    /// True when no flit is buffered and no credit is pending.
    pub fn is_quiescent(&self) -> bool {
        self.buffered_flits() == 0 && self.outputs.iter().all(|o| o.credit_incoming.is_empty())
    }

    /// Advances the router by one cycle.
    pub fn tick(
        &mut self,
        cycle: u64,
        ctx: &TickContext<'_>,
        out: &mut TickOutput,
    ) -> Result<(), InvariantViolation> {
        let v = self.params.num_vcs;
        let b = self.params.buffer_depth as u32;

        // Credits arriving this cycle.
        for o in self.outputs.iter_mut() {
            while let Some(&(at, vc)) = o.credit_incoming.front() {
                if at > cycle {
                    break;
                }
                o.credit_incoming.pop_front();
                o.credits[vc] += 1;
                if o.credits[vc] > b {
                    return Err(InvariantViolation {
                        invariant: "credits <= B",
                        cycle,
                        detail: format!(
                            "router {} vc {} holds {} credits",
                            self.node, vc, o.credits[vc]
                        ),
                    });
                }
                if o.tail_sent[vc] && o.credits[vc] == b {
                    o.busy[vc] = false;
                    o.tail_sent[vc] = false;
                }
            }
        }

        // Route computation for heads that became visible.
        for ip in self.inputs.iter_mut() {
            for vc in ip.vcs.iter_mut() {
                if vc.state != VcState::Idle {
                    continue;
                }
                if let Some(&(flit, visible)) = vc.buf.front() {
                    if visible <= cycle {
                        if !flit.is_head() {
                            return Err(InvariantViolation {
                                invariant: "wormhole ordering",
                                cycle,
                                detail: format!(
                                    "router {} idle VC fronted by non-head flit {:?}",
                                    self.node, flit
                                ),
                            });
                        }
                        vc.state = VcState::Routing {
                            out: xy_route(self.node, flit.dest),
                            since: cycle,
                        };
                    }
                }
            }
        }

        // VC allocation.
        for reqs in self.va_requests.iter_mut() {
            reqs.clear();
        }
        for (p, ip) in self.inputs.iter().enumerate() {
            for (vi, vc) in ip.vcs.iter().enumerate() {
                if let VcState::Routing { out, since } = vc.state {
                    if since < cycle {
                        let class = vc.buf.front().expect("routed VC holds its head").0.class;
                        self.va_requests[out.port().index()].push(VcRequest {
                            input: p * v + vi,
                            class,
                        });
                    }
                }
            }
        }
        for o in 0..NUM_PORTS {
            if self.va_requests[o].is_empty() {
                continue;
            }
            self.va_grants.clear();
            if o == Port::Local.index() {
                // Ejection needs no downstream VC.
                self.va_grants
                    .extend(self.va_requests[o].iter().map(|r| (r.input, 0)));
            } else {
                let free: Vec<bool> = self.outputs[o].busy.iter().map(|b| !b).collect();
                self.va.allocate(
                    o,
                    &self.va_requests[o],
                    &free,
                    ctx.partition,
                    &mut self.va_grants,
                );
            }
            for &(input, out_vc) in &self.va_grants {
                let vc = &mut self.inputs[input / v].vcs[input % v];
                let VcState::Routing { out, .. } = vc.state else {
                    unreachable!("VA grant to a VC that was not routing")
                };
                if o != Port::Local.index() {
                    let class = vc.buf.front().expect("head present").0.class;
                    if !vc_allowed(ctx.partition, class, out_vc) {
                        return Err(InvariantViolation {
                            invariant: "class isolation",
                            cycle,
                            detail: format!(
                                "{} packet granted VC {} outside its partition",
                                class.name(),
                                out_vc
                            ),
                        });
                    }
                    self.outputs[o].busy[out_vc] = true;
                }
                vc.state = VcState::Active {
                    out,
                    out_vc,
                    ready_at: cycle + 1,
                };
            }
        }

        // Switch allocation: input arbitration picks one VC per input port,
        // output arbitration one input per output port.
        for p in 0..NUM_PORTS {
            self.sa_requests[p] = None;
            self.sa_choice[p] = None;
            let ip = &self.inputs[p];
            for k in 0..v {
                let vi = (ip.sa_ptr + k) % v;
                let vc = &ip.vcs[vi];
                if let Some(o) = self.eligible(vc, cycle, ctx) {
                    self.sa_requests[p] = Some(SaRequest {
                        class: vc.buf.front().expect("eligible VC has a flit").0.class,
                        out: o,
                    });
                    self.sa_choice[p] = Some(vi);
                    break;
                }
            }
        }
        self.sa
            .allocate(&self.sa_requests, ctx.arb, &mut self.sa_grants);

        // Stall accounting for replies waiting at the ejection port.
        for (p, ip) in self.inputs.iter().enumerate() {
            for (vi, vc) in ip.vcs.iter().enumerate() {
                if self.eligible(vc, cycle, ctx) != Some(Port::Local.index()) {
                    continue;
                }
                let flit = vc.buf.front().expect("eligible").0;
                let won =
                    self.sa_grants[Port::Local.index()] == Some(p) && self.sa_choice[p] == Some(vi);
                if flit.msg == MsgKind::Reply && !won {
                    out.eject_stalls[flit.class.index()] += 1;
                }
            }
        }

        // Switch and link traversal.
        for o in 0..NUM_PORTS {
            let Some(p) = self.sa_grants[o] else { continue };
            let vi = self.sa_choice[p].expect("granted input has a chosen VC");
            let ip = &mut self.inputs[p];
            ip.sa_ptr = (vi + 1) % v;
            let vc = &mut ip.vcs[vi];
            let VcState::Active { out_vc, .. } = vc.state else {
                unreachable!("switch grant to inactive VC")
            };
            let (flit, _) = vc.buf.pop_front().expect("granted VC has a flit");
            out.credits.push((Port::from_index(p), vi));
            if flit.is_tail() {
                if !vc.buf.is_empty() {
                    return Err(InvariantViolation {
                        invariant: "one packet per VC",
                        cycle,
                        detail: format!("router {} VC {} holds flits behind a tail", self.node, vi),
                    });
                }
                vc.state = VcState::Idle;
            }
            if o == Port::Local.index() {
                out.ejected.push(flit);
            } else {
                let link = &mut self.outputs[o];
                debug_assert!(link.credits[out_vc] > 0);
                link.credits[out_vc] -= 1;
                if flit.is_tail() {
                    link.tail_sent[out_vc] = true;
                }
                out.flits.push((Port::from_index(o), out_vc, flit));
            }
        }
        Ok(())
    }

    /// Output port index a VC would bid for this cycle, if it may bid.
    fn eligible(&self, vc: &InputVc, cycle: u64, ctx: &TickContext<'_>) -> Option<usize> {
        let VcState::Active {
            out,
            out_vc,
            ready_at,
        } = vc.state
        else {
            return None;
        };
        let &(flit, visible) = vc.buf.front()?;
        if ready_at > cycle || visible > cycle {
            return None;
        }
        match out {
            OutputPort::Eject => {
                if flit.is_head() && flit.msg == MsgKind::Request && !ctx.eject_open {
                    None
                } else {
                    Some(Port::Local.index())
                }
            }
            _ => {
                let o = out.port().index();
                (self.outputs[o].credits[out_vc] > 0).then_some(o)
            }
        }
    }
}
