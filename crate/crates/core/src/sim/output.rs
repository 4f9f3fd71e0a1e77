//! CSV and summary rendering. Every function returns the complete file
//! contents; callers decide where and how to write them.
//!
//! Column orders:
//!
//! - `metrics.csv`: `epoch,end_cycle,applied_signal,` then for `cpu` and
//!   `gpu` in turn `<class>_icnt_push,<class>_stall_icnt_shader,<class>_stall_dramfull,<class>_throughput_proxy`.
//! - `kf_trace.csv`: `epoch,cycle,z_dramfull,z_icnt_push,z_icnt_shader,x_prior,p_prior,k_dramfull,k_icnt_push,k_icnt_shader,x_post,p_post,predicted,signal`.
//! - `controller_trace.csv`: `cycle,kf_signal,applied_signal,changed,reason`.
//! - comparison tables: `label,mode,` then per class `<class>_mean_latency,<class>_throughput,<class>_delivered`, then `reconfigurations`.

use std::fmt::Write;

use super::{ClassStats, Comparison, SimResult};

/// Formats like C's `%.9g`: 9 significant digits, trailing zeros trimmed,
/// scientific notation for exponents below -4 or above 8.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let m = trim_zeros(mantissa.to_string());
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub fn metrics_csv(r: &SimResult) -> String {
    let mut s = String::from("epoch,end_cycle,applied_signal");
    for class in ["cpu", "gpu"] {
        write!(
            s,
            ",{class}_icnt_push,{class}_stall_icnt_shader,{class}_stall_dramfull,{class}_throughput_proxy"
        )
        .unwrap();
    }
    s.push('\n');
    for e in &r.epochs {
        let t = &e.telemetry;
        write!(s, "{},{},{}", t.epoch, t.end_cycle, e.applied.as_u8()).unwrap();
        for c in [&t.cpu, &t.gpu] {
            write!(
                s,
                ",{},{},{},{}",
                c.icnt_push,
                c.stall_icnt_shader,
                c.stall_dramfull,
                fmt_f64(c.throughput_proxy)
            )
            .unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn kf_trace_csv(r: &SimResult) -> String {
    let mut s = String::from(
        "epoch,cycle,z_dramfull,z_icnt_push,z_icnt_shader,x_prior,p_prior,k_dramfull,k_icnt_push,k_icnt_shader,x_post,p_post,predicted,signal\n",
    );
    for k in &r.kf_trace {
        let floats = [
            k.z[0],
            k.z[1],
            k.z[2],
            k.x_prior,
            k.p_prior,
            k.gain[0],
            k.gain[1],
            k.gain[2],
            k.x_post,
            k.p_post,
            k.predicted,
        ];
        write!(s, "{},{}", k.epoch, k.cycle).unwrap();
        for f in floats {
            write!(s, ",{}", fmt_f64(f)).unwrap();
        }
        writeln!(s, ",{}", k.signal.as_u8()).unwrap();
    }
    s
}

pub fn controller_trace_csv(r: &SimResult) -> String {
    let mut s = String::from("cycle,kf_signal,applied_signal,changed,reason\n");
    for d in &r.controller_trace {
        writeln!(
            s,
            "{},{},{},{},{}",
            d.cycle,
            d.kf_signal.as_u8(),
            d.applied.as_u8(),
            u8::from(d.changed),
            d.reason.as_str()
        )
        .unwrap();
    }
    s
}

pub fn summary_txt(r: &SimResult) -> String {
    let mut s = String::new();
    writeln!(s, "mode = {}", r.mode.name()).unwrap();
    writeln!(s, "seed = {}", r.seed).unwrap();
    writeln!(s, "max_cycles = {}", r.max_cycles).unwrap();
    writeln!(s, "cycles_run = {}", r.cycles_run).unwrap();
    writeln!(s, "reconfigurations = {}", r.reconfigurations).unwrap();
    for (name, c) in [("cpu", &r.cpu), ("gpu", &r.gpu)] {
        writeln!(s, "{name}_packets_injected = {}", c.packets_injected).unwrap();
        writeln!(s, "{name}_packets_delivered = {}", c.packets_delivered).unwrap();
        writeln!(
            s,
            "{name}_transactions_completed = {}",
            c.transactions_completed
        )
        .unwrap();
        writeln!(s, "{name}_latency_samples = {}", c.latency_samples).unwrap();
        writeln!(s, "{name}_mean_latency = {}", fmt_f64(c.mean_latency)).unwrap();
        writeln!(s, "{name}_min_latency = {}", c.min_latency).unwrap();
        writeln!(s, "{name}_max_latency = {}", c.max_latency).unwrap();
        writeln!(s, "{name}_throughput = {}", fmt_f64(c.throughput)).unwrap();
    }
    s
}

/// One-line human summary.
pub fn summary_line(r: &SimResult) -> String {
    let class = |c: &ClassStats| {
        format!(
            "latency {} throughput {} delivered {}",
            fmt_f64(c.mean_latency),
            fmt_f64(c.throughput),
            c.packets_delivered
        )
    };
    format!(
        "{}: cpu {}; gpu {}; reconfigurations {}",
        r.mode.name(),
        class(&r.cpu),
        class(&r.gpu),
        r.reconfigurations
    )
}

pub fn comparison_csv(c: &Comparison) -> String {
    let mut s = String::from("label,mode");
    for class in ["cpu", "gpu"] {
        write!(
            s,
            ",{class}_mean_latency,{class}_throughput,{class}_delivered"
        )
        .unwrap();
    }
    s.push_str(",reconfigurations\n");
    for (label, r) in &c.rows {
        write!(s, "{label},{}", r.mode.name()).unwrap();
        for cs in [&r.cpu, &r.gpu] {
            write!(
                s,
                ",{},{},{}",
                fmt_f64(cs.mean_latency),
                fmt_f64(cs.throughput),
                cs.packets_delivered
            )
            .unwrap();
        }
        writeln!(s, ",{}", r.reconfigurations).unwrap();
    }
    s
}
