mod common;

use chipnet::kalman::Signal;
use chipnet::traffic::Phase;
use chipnet::{compare, run, sweep_vc, Mode, ScenarioConfig, SimError};
use common::preset;
use proptest::prelude::*;

fn small(mode: Mode, cpu: f64, gpu: f64) -> ScenarioConfig {
    let mut c = ScenarioConfig::default().with_mode(mode);
    c.topology.width = 4;
    c.topology.height = 4;
    c.sim.max_cycles = 6_000;
    c.controller.warmup_cycles = 1_000;
    c.controller.hold_min_cycles = 1_000;
    c.controller.revert_after_cycles = 2_000;
    c.controller.epoch_len_cycles = 200;
    c.traffic.cpu = vec![Phase {
        start: 0,
        rate: cpu,
    }];
    c.traffic.gpu = vec![Phase {
        start: 0,
        rate: gpu,
    }];
    c
}

/// A 2x2 mesh with one CPU, one GPU and one memory controller at the far
/// corner, where the CPU issues exactly one request at cycle 1. Buffers are
/// deep enough to cover the credit round trip, so flits stream back-to-back.
fn single_request(depth: u64) -> ScenarioConfig {
    let mut c = ScenarioConfig::default().with_mode(Mode::TwoSubnetRr);
    c.topology.width = 2;
    c.topology.height = 2;
    c.topology.placement = "grid".into();
    c.topology.grid = vec!["CG".into(), "GM".into()];
    c.network.pipeline_depth = depth;
    c.network.buffer_depth = 8;
    c.traffic.cpu = vec![
        Phase {
            start: 0,
            rate: 0.0,
        },
        Phase {
            start: 1,
            rate: 1.0,
        },
        Phase {
            start: 2,
            rate: 0.0,
        },
    ];
    c.traffic.gpu = vec![Phase {
        start: 0,
        rate: 0.0,
    }];
    c.sim.max_cycles = 200;
    c.sim.check_invariants = true;
    c.controller.warmup_cycles = 1;
    c.controller.hold_min_cycles = 10;
    c.controller.epoch_len_cycles = 10;
    c
}

#[test]
fn single_request_latency_matches_hand_trace() {
    for depth in [4, 5, 7] {
        let r = run(&single_request(depth)).unwrap();
        // Request: three routers at `depth` cycles each, one flit.
        // Reply: same path, four more flits, and it enters the source queue
        // one cycle after the controller finishes it.
        assert_eq!(r.cpu.latency_samples, 2);
        assert_eq!(r.cpu.min_latency, 3 * depth);
        assert_eq!(r.cpu.max_latency, 3 * depth + 4 + 1);
        assert_eq!(r.cpu.transactions_completed, 1);
    }
    // With 4-flit buffers a 7-stage pipeline cannot keep the link busy: the
    // credit loop is longer than the buffer, so the reply tail arrives later.
    let mut c = single_request(7);
    c.network.buffer_depth = 4;
    let r = run(&c).unwrap();
    assert_eq!(r.cpu.min_latency, 21);
    assert!(r.cpu.max_latency > 26);
}

#[test]
fn zero_load_delivers_nothing() {
    let r = run(&small(Mode::TwoSubnetKf, 0.0, 0.0)).unwrap();
    assert_eq!(r.packets_injected(), 0);
    assert_eq!(r.packets_delivered(), 0);
    assert_eq!(r.cpu.latency_samples + r.gpu.latency_samples, 0);
    assert!(!r.kf_trace.is_empty());
    assert!(r.kf_trace.iter().all(|k| k.signal == Signal::Balanced));
    assert_eq!(r.reconfigurations, 0);
}

#[test]
fn identical_runs_are_identical() {
    let c = small(Mode::TwoSubnetKf, 0.02, 0.04);
    assert_eq!(run(&c).unwrap(), run(&c).unwrap());
    let t = compare(&[c.clone(), c.clone()]).unwrap();
    assert_eq!(t.rows[0], t.rows[1]);
}

#[test]
fn compare_rejects_mismatched_configs() {
    let a = small(Mode::TwoSubnetRr, 0.01, 0.01);
    let b = small(Mode::TwoSubnetFair, 0.01, 0.02);
    assert!(matches!(
        compare(&[a.clone(), b]),
        Err(SimError::Inconsistent(_))
    ));
    assert!(matches!(
        compare(&[a.clone(), a.with_seed(9)]),
        Err(SimError::Inconsistent(_))
    ));
}

#[test]
fn sweep_without_gpu_load_leaves_cpu_throughput_alone() {
    let mut c = small(Mode::TwoSubnetFair, 0.005, 0.0);
    c.sim.max_cycles = 10_000;
    let t = sweep_vc(&c, &[(1, 3), (2, 2), (3, 1)]).unwrap();
    assert_eq!(t.rows.len(), 3);
    let labels: Vec<_> = t.rows.iter().map(|(l, _)| l.as_str()).collect();
    assert_eq!(labels, ["1:3", "2:2", "3:1"]);
    for (_, r) in &t.rows[1..] {
        assert_eq!(r.cpu.packets_delivered, t.rows[0].1.cpu.packets_delivered);
        assert_eq!(r.cpu.throughput, t.rows[0].1.cpu.throughput);
        assert_eq!(r.gpu.packets_injected, 0);
    }
}

#[test]
fn gpu_stalls_grow_with_gpu_demand() {
    let rates = [0.01, 0.03, 0.05];
    let mut means = Vec::new();
    for rate in rates {
        let mut total = 0.0;
        for seed in 1..=10 {
            let mut c = small(Mode::TwoSubnetFair, 0.01, rate).with_seed(seed);
            c.sim.warmdrain = false;
            let r = run(&c).unwrap();
            total += r
                .epochs
                .iter()
                .map(|e| {
                    (e.telemetry.gpu.stall_icnt_shader + e.telemetry.gpu.stall_dramfull) as f64
                })
                .sum::<f64>();
        }
        means.push(total / 10.0);
    }
    for w in means.windows(2) {
        assert!(w[1] >= 0.95 * w[0], "stall means {means:?}");
    }
    assert!(means[2] > means[0], "stall means {means:?}");
}

#[test]
fn bursts_show_up_in_stall_counters() {
    let mut c = preset("two-subnet-fair.toml");
    c.sim.max_cycles = 40_000;
    c.sim.warmdrain = false;
    let r = run(&c).unwrap();
    let stalls = |from: u64, to: u64| -> f64 {
        let sel: Vec<_> = r
            .epochs
            .iter()
            .filter(|e| e.telemetry.end_cycle > from && e.telemetry.end_cycle <= to)
            .map(|e| (e.telemetry.gpu.stall_icnt_shader + e.telemetry.gpu.stall_dramfull) as f64)
            .collect();
        sel.iter().sum::<f64>() / sel.len() as f64
    };
    assert!(stalls(20_000, 30_000) > 5.0 * stalls(10_000, 20_000));
}

#[test]
fn pinned_filter_matches_fair_mode() {
    for seed in 1..=3 {
        let fair = small(Mode::TwoSubnetFair, 0.02, 0.05).with_seed(seed);
        let mut kf = fair.with_mode(Mode::TwoSubnetKf);
        kf.controller.pin_signal = Some(0);
        let (a, b) = (run(&kf).unwrap(), run(&fair).unwrap());
        assert_eq!((a.cpu, a.gpu, a.cycles_run), (b.cpu, b.gpu, b.cycles_run));
        assert_eq!(a.epochs, b.epochs);
    }
}

#[test]
fn pinned_favour_reconfigures_once_after_warmup() {
    let mut c = small(Mode::TwoSubnetKf, 0.01, 0.02);
    c.controller.pin_signal = Some(1);
    c.controller.revert_after_cycles = 100_000;
    let r = run(&c).unwrap();
    assert_eq!(r.reconfigurations, 1);
    let first = r.controller_trace.iter().find(|d| d.changed).unwrap();
    assert_eq!(first.cycle, 1_000);
    assert_eq!(first.applied, Signal::FavorGpu);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn random_runs_conserve_and_drain(
        seed in any::<u64>(), mode in 0usize..4, cpu in 0.0f64..0.05, gpu in 0.0f64..0.08, shuffled in any::<bool>(),
    ) {
        let mut c = small(Mode::ALL[mode], cpu, gpu).with_seed(seed);
        c.sim.max_cycles = 3_000;
        c.sim.check_invariants = true;
        if shuffled {
            c.topology.placement = "shuffled".into();
            c.topology.placement_seed = seed;
        }
        let r = run(&c).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(r.packets_delivered(), r.packets_injected());
        prop_assert!(r.cycles_run <= 11 * c.sim.max_cycles);
    }
}
