use std::collections::{HashMap, VecDeque};

use chipnet::router::{
    vc_allowed, ArbMode, ArbPattern, MsgKind, Packet, Router, RouterParams, SaRequest,
    SwitchAllocator, TickContext, TickOutput, TrafficClass, VcPartition, VcState,
};
use chipnet::topology::{xy_route, NodeId, Port};
use proptest::prelude::*;

const HERE: NodeId = NodeId::new(2, 2);
const INPUTS: [Port; 5] = [
    Port::East,
    Port::West,
    Port::North,
    Port::South,
    Port::Local,
];

#[derive(Clone, Debug)]
struct PacketPlan {
    input: usize,
    gpu: bool,
    len: u16,
    dest: (u16, u16),
}

fn packet_plan() -> impl Strategy<Value = PacketPlan> {
    (0usize..5, any::<bool>(), 1u16..6, (0u16..5, 0u16..5)).prop_map(|(input, gpu, len, dest)| {
        PacketPlan {
            input,
            gpu,
            len,
            dest,
        }
    })
}

/// Feeds packets into one router, sinks everything it emits and checks
/// per-flit properties along the way. Returns the number of packets delivered.
fn drive(
    plans: &[PacketPlan],
    partition: Option<VcPartition>,
    arb: ArbMode,
) -> Result<usize, TestCaseError> {
    let params = RouterParams::default();
    let mut router = Router::new(HERE, params);
    let mut queues: Vec<VecDeque<Packet>> = vec![VecDeque::new(); 5];
    for (id, s) in plans.iter().enumerate() {
        queues[s.input].push_back(Packet {
            id: id as u64,
            class: if s.gpu {
                TrafficClass::Gpu
            } else {
                TrafficClass::Cpu
            },
            msg: MsgKind::Reply,
            src: NodeId::new(0, 0),
            dest: NodeId::new(s.dest.0, s.dest.1),
            inject_cycle: 0,
            len: s.len,
        });
    }
    // Packet being fed on each input port: (packet, vc, next seq).
    let mut feeding: Vec<Option<(Packet, usize, u16)>> = vec![None; 5];
    // Packet owning each output VC, as seen by the receiver.
    let mut owner: HashMap<(Port, usize), u64> = HashMap::new();
    let mut received: HashMap<u64, u16> = HashMap::new();
    let mut out = TickOutput::default();
    let mut done = 0;
    for t in 0..5_000u64 {
        for p in 0..5 {
            if feeding[p].is_none() {
                if let Some(class) = queues[p].front().map(|pk| pk.class) {
                    let free = (0..params.num_vcs).find(|&vc| {
                        router.occupancy(INPUTS[p], vc) == 0
                            && router.vc_state(INPUTS[p], vc) == VcState::Idle
                            && vc_allowed(partition.as_ref(), class, vc)
                    });
                    if let Some(vc) = free {
                        feeding[p] = Some((queues[p].pop_front().unwrap(), vc, 0));
                    }
                }
            }
            if let Some((pk, vc, seq)) = feeding[p].as_mut() {
                if router.occupancy(INPUTS[p], *vc) < params.buffer_depth {
                    router
                        .accept_flit(INPUTS[p], *vc, pk.flit(*seq), t + 1)
                        .unwrap();
                    *seq += 1;
                    if *seq == pk.len {
                        feeding[p] = None;
                    }
                }
            }
        }
        out.clear();
        let ctx = TickContext {
            partition: partition.as_ref(),
            arb: &arb,
            eject_open: true,
        };
        router
            .tick(t, &ctx, &mut out)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let mut used = [false; 5];
        for &(port, vc, flit) in &out.flits {
            prop_assert!(!used[port.index()], "two flits on {:?} at {}", port, t);
            used[port.index()] = true;
            prop_assert_eq!(xy_route(HERE, flit.dest).port(), port);
            prop_assert!(
                vc_allowed(partition.as_ref(), flit.class, vc),
                "class {:?} on vc {}",
                flit.class,
                vc
            );
            if flit.is_head() {
                prop_assert!(
                    owner.insert((port, vc), flit.packet_id).is_none(),
                    "vc {:?}/{} reused mid-packet",
                    port,
                    vc
                );
            } else {
                prop_assert_eq!(owner.get(&(port, vc)), Some(&flit.packet_id));
            }
            if flit.is_tail() {
                owner.remove(&(port, vc));
            }
            router.accept_credit(port, vc, t + 2);
            let n = received.entry(flit.packet_id).or_default();
            prop_assert_eq!(*n, flit.seq);
            *n += 1;
            if flit.is_tail() {
                done += 1;
            }
        }
        for flit in &out.ejected {
            prop_assert_eq!(flit.dest, HERE);
            let n = received.entry(flit.packet_id).or_default();
            prop_assert_eq!(*n, flit.seq);
            *n += 1;
            if flit.is_tail() {
                done += 1;
            }
        }
        if done == plans.len() {
            break;
        }
    }
    prop_assert_eq!(done, plans.len());
    prop_assert!(router.buffered_flits() == 0);
    Ok(done)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wormhole_and_isolation_with_partition(plans in prop::collection::vec(packet_plan(), 1..60), gpu_vcs in 1usize..4, pattern in any::<bool>()) {
        let arb = if pattern { ArbMode::Pattern(ArbPattern::gpu_gpu_cpu()) } else { ArbMode::RoundRobin };
        drive(&plans, Some(VcPartition::split(gpu_vcs, 4).unwrap()), arb)?;
    }

    #[test]
    fn wormhole_without_partition(plans in prop::collection::vec(packet_plan(), 1..60)) {
        drive(&plans, None, ArbMode::RoundRobin)?;
    }

    #[test]
    fn round_robin_window_fairness(mask in 1u8..32, m in 1usize..40) {
        let requesters: Vec<usize> = (0..5).filter(|i| mask & (1 << i) != 0).collect();
        let k = requesters.len();
        let mut alloc = SwitchAllocator::new(5, 5);
        let mut requests = vec![None; 5];
        for &i in &requesters {
            requests[i] = Some(SaRequest { class: TrafficClass::Cpu, out: 0 });
        }
        let mut grants = vec![None; 5];
        let stream: Vec<usize> = (0..k * m * 3)
            .map(|_| {
                alloc.allocate(&requests, &ArbMode::RoundRobin, &mut grants);
                grants[0].unwrap()
            })
            .collect();
        for w in stream.windows(k * m) {
            for &r in &requesters {
                let n = w.iter().filter(|&&g| g == r).count();
                prop_assert!(n + 1 >= m && n <= m + 1, "requester {} got {} of {}", r, n, k * m);
            }
        }
    }

    #[test]
    fn pattern_never_starves_cpu(gpu_mask in 0u8..16) {
        let mut alloc = SwitchAllocator::new(5, 5);
        let mut requests = vec![None; 5];
        for i in 0..4 {
            if gpu_mask & (1 << i) != 0 {
                requests[i] = Some(SaRequest { class: TrafficClass::Gpu, out: 1 });
            }
        }
        requests[4] = Some(SaRequest { class: TrafficClass::Cpu, out: 1 });
        let mode = ArbMode::Pattern(ArbPattern::gpu_gpu_cpu());
        let mut grants = vec![None; 5];
        let mut last = 0usize;
        for t in 1..=600usize {
            alloc.allocate(&requests, &mode, &mut grants);
            if grants[1] == Some(4) {
                prop_assert!(t - last <= 6, "CPU gap {} at {}", t - last, t);
                last = t;
            }
        }
        prop_assert!(600 - last <= 6);
    }
}
