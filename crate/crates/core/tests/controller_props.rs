use chipnet::controller::{
    arb_mode_for, epoch_decide, vc_partition_for, PolicyParams, PolicyState,
};
use chipnet::kalman::Signal;
use chipnet::router::{ArbMode, TrafficClass};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = PolicyParams> {
    (1u64..20, 1u64..10, 1u64..20, 1u64..4).prop_map(|(w, h, r, e)| PolicyParams {
        warmup_cycles: w * 1000,
        hold_min_cycles: h * 1000 * e.max(1),
        revert_after_cycles: r * 1000,
        epoch_len_cycles: e * 1000,
    })
}

proptest! {
    #[test]
    fn decision_traces_obey_the_rules(p in params(), signals in prop::collection::vec(any::<bool>(), 1..300)) {
        prop_assert!(p.validate().is_ok());
        let mut state = PolicyState::default();
        let mut last_change: Option<u64> = None;
        let mut favor_start: Option<u64> = None;
        for (k, &s) in signals.iter().enumerate() {
            let cycle = (k as u64 + 1) * p.epoch_len_cycles;
            let kf = if s { Signal::FavorGpu } else { Signal::Balanced };
            let d = epoch_decide(&p, &state, kf, cycle);
            // Purity.
            prop_assert_eq!(d, epoch_decide(&p, &state, kf, cycle));
            if cycle < p.warmup_cycles {
                prop_assert_eq!(d.applied, Signal::Balanced);
            }
            if d.changed {
                if let Some(l) = last_change {
                    prop_assert!(cycle - l >= p.hold_min_cycles);
                }
                last_change = Some(cycle);
            }
            match (d.applied, favor_start) {
                (Signal::FavorGpu, None) => favor_start = Some(cycle),
                (Signal::FavorGpu, Some(since)) => {
                    prop_assert!(
                        cycle - since <= p.revert_after_cycles + p.hold_min_cycles + p.epoch_len_cycles,
                        "signal 1 held from {} to {}", since, cycle
                    );
                }
                (Signal::Balanced, _) => favor_start = None,
            }
            state = d.state;
        }
    }

    #[test]
    fn maps_are_total_and_constant(v in 2usize..64) {
        for s in [Signal::Balanced, Signal::FavorGpu] {
            let a = vc_partition_for(s, v).unwrap();
            prop_assert_eq!(&a, &vc_partition_for(s, v).unwrap());
            for vc in 0..v {
                prop_assert!(a.allows(TrafficClass::Gpu, vc) != a.allows(TrafficClass::Cpu, vc));
            }
        }
        let even = vc_partition_for(Signal::Balanced, v).unwrap();
        let favor = vc_partition_for(Signal::FavorGpu, v).unwrap();
        prop_assert!(favor.gpu_vcs().len() >= even.gpu_vcs().len());
        prop_assert_eq!(arb_mode_for(Signal::Balanced), ArbMode::RoundRobin);
    }
}
