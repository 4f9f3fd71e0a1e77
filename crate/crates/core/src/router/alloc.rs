//! Virtual-channel and switch allocators.
//!
//! Both are single-iteration separable allocators with iSLIP-style pointer
//! updates: a round-robin pointer moves one past the requester it last served.

use crate::error::AllocError;
use crate::router::flit::TrafficClass;

/// Split of a port's VCs between the two traffic classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VcPartition {
    gpu: u64,
    cpu: u64,
    num_vcs: usize,
}

impl VcPartition {
    pub fn new(gpu_vcs: &[usize], cpu_vcs: &[usize], num_vcs: usize) -> Result<Self, AllocError> {
        if !(2..=64).contains(&num_vcs) {
            return Err(AllocError::TooFewVcs(num_vcs));
        }
        let mask = |vcs: &[usize]| -> Result<u64, AllocError> {
            vcs.iter().try_fold(0u64, |m, &v| {
                if v >= num_vcs {
                    Err(AllocError::Partition(format!(
                        "VC {v} out of range 0..{num_vcs}"
                    )))
                } else {
                    Ok(m | (1 << v))
                }
            })
        };
        let gpu = mask(gpu_vcs)?;
        let cpu = mask(cpu_vcs)?;
        let all = if num_vcs == 64 {
            u64::MAX
        } else {
            (1u64 << num_vcs) - 1
        };
        if gpu & cpu != 0 {
            return Err(AllocError::Partition("GPU and CPU VC sets overlap".into()));
        }
        if gpu | cpu != all {
            return Err(AllocError::Partition(
                "VC sets do not cover every VC".into(),
            ));
        }
        if gpu == 0 || cpu == 0 {
            return Err(AllocError::Partition(
                "each class needs at least one VC".into(),
            ));
        }
        Ok(Self { gpu, cpu, num_vcs })
    }

    /// GPU gets the `gpu_count` lowest-indexed VCs, CPU the rest.
    pub fn split(gpu_count: usize, num_vcs: usize) -> Result<Self, AllocError> {
        let gpu: Vec<usize> = (0..gpu_count.min(num_vcs)).collect();
        let cpu: Vec<usize> = (gpu_count.min(num_vcs)..num_vcs).collect();
        Self::new(&gpu, &cpu, num_vcs)
    }

    pub fn num_vcs(&self) -> usize {
        self.num_vcs
    }

    #[inline]
    pub fn allows(&self, class: TrafficClass, vc: usize) -> bool {
        let m = match class {
            TrafficClass::Gpu => self.gpu,
            TrafficClass::Cpu => self.cpu,
        };
        m >> vc & 1 == 1
    }

    pub fn vcs(&self, class: TrafficClass) -> Vec<usize> {
        (0..self.num_vcs)
            .filter(|&v| self.allows(class, v))
            .collect()
    }

    pub fn gpu_vcs(&self) -> Vec<usize> {
        self.vcs(TrafficClass::Gpu)
    }

    pub fn cpu_vcs(&self) -> Vec<usize> {
        self.vcs(TrafficClass::Cpu)
    }
}

/// `None` partition means every VC is open to both classes.
#[inline]
pub fn vc_allowed(partition: Option<&VcPartition>, class: TrafficClass, vc: usize) -> bool {
    partition.is_none_or(|p| p.allows(class, vc))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatternSlot {
    Gpu,
    Cpu,
    Any,
}

impl PatternSlot {
    fn serves(self, class: TrafficClass) -> bool {
        matches!(
            (self, class),
            (PatternSlot::Any, _)
                | (PatternSlot::Gpu, TrafficClass::Gpu)
                | (PatternSlot::Cpu, TrafficClass::Cpu)
        )
    }
}

/// Cyclic class-priority sequence used by the switch allocator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArbPattern(Vec<PatternSlot>);

impl ArbPattern {
    pub fn new(slots: Vec<PatternSlot>) -> Result<Self, AllocError> {
        if slots.is_empty() {
            return Err(AllocError::Partition("arbitration pattern is empty".into()));
        }
        for class in TrafficClass::ALL {
            if !slots.iter().any(|s| s.serves(class)) {
                return Err(AllocError::Partition(format!(
                    "arbitration pattern never serves {}",
                    class.name()
                )));
            }
        }
        Ok(Self(slots))
    }

    /// Two GPU grants followed by one CPU grant.
    pub fn gpu_gpu_cpu() -> Self {
        Self(vec![PatternSlot::Gpu, PatternSlot::Gpu, PatternSlot::Cpu])
    }

    pub fn slots(&self) -> &[PatternSlot] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ArbMode {
    RoundRobin,
    Pattern(ArbPattern),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VcRequest {
    /// Flattened requester index (`input_port * num_vcs + vc`).
    pub input: usize,
    pub class: TrafficClass,
}

/// Round-robin output-VC allocator. One pointer per output port and class,
/// plus a class-agnostic pointer used when VCs are shared.
#[derive(Clone, Debug)]
pub struct VcAllocator {
    num_inputs: usize,
    class_ptr: Vec<[usize; 2]>,
    shared_ptr: Vec<usize>,
}

impl VcAllocator {
    pub fn new(num_inputs: usize, num_outputs: usize) -> Self {
        Self {
            num_inputs,
            class_ptr: vec![[0; 2]; num_outputs],
            shared_ptr: vec![0; num_outputs],
        }
    }

    /// Grants free output VCs of `out` to requesters. `requests` must be
    /// sorted by `input` and name each requester at most once. Grants are
    /// appended to `grants` as `(input, out_vc)`.
    pub fn allocate(
        &mut self,
        out: usize,
        requests: &[VcRequest],
        free: &[bool],
        partition: Option<&VcPartition>,
        grants: &mut Vec<(usize, usize)>,
    ) {
        debug_assert!(requests.windows(2).all(|w| w[0].input < w[1].input));
        match partition {
            Some(p) => {
                for class in TrafficClass::ALL {
                    let ptr = &mut self.class_ptr[out][class.index()];
                    Self::serve(
                        self.num_inputs,
                        ptr,
                        requests.iter().filter(|r| r.class == class),
                        free.iter()
                            .enumerate()
                            .filter(|&(v, &f)| f && p.allows(class, v))
                            .map(|(v, _)| v),
                        grants,
                    );
                }
            }
            None => {
                let ptr = &mut self.shared_ptr[out];
                Self::serve(
                    self.num_inputs,
                    ptr,
                    requests.iter(),
                    free.iter().enumerate().filter(|&(_, &f)| f).map(|(v, _)| v),
                    grants,
                );
            }
        }
    }

    fn serve<'a>(
        num_inputs: usize,
        ptr: &mut usize,
        requests: impl Iterator<Item = &'a VcRequest> + Clone,
        mut free: impl Iterator<Item = usize>,
        grants: &mut Vec<(usize, usize)>,
    ) {
        let start = *ptr;
        let ordered = requests
            .clone()
            .filter(|r| r.input >= start)
            .chain(requests.filter(|r| r.input < start));
        for req in ordered {
            let Some(vc) = free.next() else { break };
            grants.push((req.input, vc));
            *ptr = (req.input + 1) % num_inputs;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SaRequest {
    pub class: TrafficClass,
    pub out: usize,
}

/// Per-output switch arbiter supporting plain round-robin and class patterns.
#[derive(Clone, Debug)]
pub struct SwitchAllocator {
    num_inputs: usize,
    rr_ptr: Vec<usize>,
    class_ptr: Vec<[usize; 2]>,
    cursor: Vec<usize>,
}

impl SwitchAllocator {
    pub fn new(num_inputs: usize, num_outputs: usize) -> Self {
        Self {
            num_inputs,
            rr_ptr: vec![0; num_outputs],
            class_ptr: vec![[0; 2]; num_outputs],
            cursor: vec![0; num_outputs],
        }
    }

    /// One grant per requested output: `grants[out] = Some(input)`.
    pub fn allocate(
        &mut self,
        requests: &[Option<SaRequest>],
        mode: &ArbMode,
        grants: &mut [Option<usize>],
    ) {
        debug_assert_eq!(requests.len(), self.num_inputs);
        grants.fill(None);
        for out in 0..grants.len() {
            let wants = |i: usize, class: Option<TrafficClass>| {
                requests[i].is_some_and(|r| r.out == out && class.is_none_or(|c| r.class == c))
            };
            if !(0..self.num_inputs).any(|i| wants(i, None)) {
                continue;
            }
            let winner = match mode {
                ArbMode::RoundRobin => {
                    let w = self.pick(self.rr_ptr[out], |i| wants(i, None));
                    self.rr_ptr[out] = (w + 1) % self.num_inputs;
                    w
                }
                ArbMode::Pattern(pattern) => {
                    let slot = pattern.slots()[self.cursor[out] % pattern.len()];
                    self.cursor[out] = (self.cursor[out] + 1) % pattern.len();
                    let preferred = match slot {
                        PatternSlot::Gpu => Some(TrafficClass::Gpu),
                        PatternSlot::Cpu => Some(TrafficClass::Cpu),
                        PatternSlot::Any => None,
                    };
                    let class = match preferred {
                        Some(c) if (0..self.num_inputs).any(|i| wants(i, Some(c))) => Some(c),
                        Some(TrafficClass::Gpu) => Some(TrafficClass::Cpu),
                        Some(TrafficClass::Cpu) => Some(TrafficClass::Gpu),
                        None => None,
                    };
                    match class {
                        Some(c) => {
                            let w =
                                self.pick(self.class_ptr[out][c.index()], |i| wants(i, Some(c)));
                            self.class_ptr[out][c.index()] = (w + 1) % self.num_inputs;
                            w
                        }
                        None => {
                            let w = self.pick(self.rr_ptr[out], |i| wants(i, None));
                            self.rr_ptr[out] = (w + 1) % self.num_inputs;
                            w
                        }
                    }
                }
            };
            grants[out] = Some(winner);
        }
    }

    fn pick(&self, start: usize, wants: impl Fn(usize) -> bool) -> usize {
        (0..self.num_inputs)
            .map(|k| (start + k) % self.num_inputs)
            .find(|&i| wants(i))
            .expect("caller checked for a requester")
    }
}
