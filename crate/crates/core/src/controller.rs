//! Epoch-boundary reconfiguration policy.
//!
//! Turns the filter's binary signal into the signal actually applied to the
//! network, honouring a warmup window, a minimum hold time between changes
//! and a forced return to the even split after a long GPU-favouring stretch.

use serde::{Deserialize, Serialize};

use crate::error::AllocError;
use crate::kalman::Signal;
use crate::router::{ArbMode, ArbPattern, VcPartition};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyParams {
    pub warmup_cycles: u64,
    pub hold_min_cycles: u64,
    pub revert_after_cycles: u64,
    pub epoch_len_cycles: u64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            warmup_cycles: 10_000,
            hold_min_cycles: 5_000,
            revert_after_cycles: 10_000,
            epoch_len_cycles: 1_000,
        }
    }
}

impl PolicyParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.warmup_cycles == 0
            || self.hold_min_cycles == 0
            || self.revert_after_cycles == 0
            || self.epoch_len_cycles == 0
        {
            return Err("controller cycle parameters must all be positive".into());
        }
        if self.epoch_len_cycles > self.hold_min_cycles {
            return Err("epoch length must not exceed the minimum hold time".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct PolicyState {
    pub active: Signal,
    pub last_change_cycle: Option<u64>,
    pub favor_since: Option<u64>,
    pub warmup_done: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecisionReason {
    /// Inside the warmup window.
    Warmup,
    /// Applied signal already matches the request.
    Steady,
    /// Switched to the filter's signal.
    Follow,
    /// Change wanted but the hold window has not elapsed.
    Hold,
    /// Forced back to the even split after a long GPU-favouring stretch.
    Revert,
}

impl DecisionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DecisionReason::Warmup => "warmup",
            DecisionReason::Steady => "steady",
            DecisionReason::Follow => "follow",
            DecisionReason::Hold => "hold",
            DecisionReason::Revert => "revert",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub state: PolicyState,
    pub applied: Signal,
    pub changed: bool,
    pub reason: DecisionReason,
}

/// Pure decision function, called at each epoch boundary `cycle`.
pub fn epoch_decide(
    params: &PolicyParams,
    state: &PolicyState,
    kf_signal: Signal,
    cycle: u64,
) -> Decision {
    let mut next = *state;
    if cycle < params.warmup_cycles {
        next.active = Signal::Balanced;
        next.favor_since = None;
        return Decision {
            state: next,
            applied: Signal::Balanced,
            changed: false,
            reason: DecisionReason::Warmup,
        };
    }
    next.warmup_done = true;

    let overdue = state.active == Signal::FavorGpu
        && state
            .favor_since
            .is_some_and(|since| cycle - since > params.revert_after_cycles);
    let (wanted, want_reason) = if overdue {
        (Signal::Balanced, DecisionReason::Revert)
    } else {
        (kf_signal, DecisionReason::Follow)
    };

    if wanted == state.active {
        return Decision {
            state: next,
            applied: state.active,
            changed: false,
            reason: DecisionReason::Steady,
        };
    }
    let held = state
        .last_change_cycle
        .is_some_and(|last| cycle - last < params.hold_min_cycles);
    if held {
        return Decision {
            state: next,
            applied: state.active,
            changed: false,
            reason: DecisionReason::Hold,
        };
    }
    next.active = wanted;
    next.last_change_cycle = Some(cycle);
    next.favor_since = (wanted == Signal::FavorGpu).then_some(cycle);
    Decision {
        state: next,
        applied: wanted,
        changed: true,
        reason: want_reason,
    }
}

/// VC split for a signal: the even split gives GPU the low half, the
/// GPU-favouring split gives it the lowest ⌈3V/4⌉ VCs.
pub fn vc_partition_for(signal: Signal, num_vcs: usize) -> Result<VcPartition, AllocError> {
    if num_vcs < 2 {
        return Err(AllocError::TooFewVcs(num_vcs));
    }
    let gpu = match signal {
        Signal::Balanced => num_vcs / 2,
        Signal::FavorGpu => (3 * num_vcs).div_ceil(4).min(num_vcs - 1),
    };
    VcPartition::split(gpu, num_vcs)
}

/// Round-robin for the even split, two GPU grants then one CPU grant when
/// favouring the GPU.
pub fn arb_mode_for(signal: Signal) -> ArbMode {
    match signal {
        Signal::Balanced => ArbMode::RoundRobin,
        Signal::FavorGpu => ArbMode::Pattern(ArbPattern::gpu_gpu_cpu()),
    }
}

/// Stateful wrapper that keeps the policy state between epochs.
#[derive(Clone, Debug)]
pub struct Controller {
    params: PolicyParams,
    state: PolicyState,
    pin: Option<Signal>,
}

impl Controller {
    pub fn new(params: PolicyParams, pin: Option<Signal>) -> Self {
        Self {
            params,
            state: PolicyState::default(),
            pin,
        }
    }

    pub fn state(&self) -> &PolicyState {
        &self.state
    }

    /// With a pinned signal the filter's output is replaced by the pin.
    pub fn decide(&mut self, kf_signal: Signal, cycle: u64) -> Decision {
        let d = epoch_decide(
            &self.params,
            &self.state,
            self.pin.unwrap_or(kf_signal),
            cycle,
        );
        self.state = d.state;
        d
    }
}
