use crate::topology::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrafficClass {
    Cpu,
    Gpu,
}

impl TrafficClass {
    pub const ALL: [TrafficClass; 2] = [TrafficClass::Cpu, TrafficClass::Gpu];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TrafficClass::Cpu => "cpu",
            TrafficClass::Gpu => "gpu",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MsgKind {
    Request,
    Reply,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlitKind {
    Head,
    Body,
    Tail,
    HeadTail,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Packet {
    pub id: u64,
    pub class: TrafficClass,
    pub msg: MsgKind,
    pub src: NodeId,
    pub dest: NodeId,
    /// Cycle the packet was created at its source (enters the source queue).
    pub inject_cycle: u64,
    pub len: u16,
}

impl Packet {
    pub fn flit(&self, seq: u16) -> Flit {
        debug_assert!(seq < self.len);
        Flit {
            packet_id: self.id,
            seq,
            len: self.len,
            class: self.class,
            msg: self.msg,
            src: self.src,
            dest: self.dest,
            inject_cycle: self.inject_cycle,
        }
    }
}

/// Flow-control unit. Every flit carries a copy of its packet header fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Flit {
    pub packet_id: u64,
    pub seq: u16,
    pub len: u16,
    pub class: TrafficClass,
    pub msg: MsgKind,
    pub src: NodeId,
    pub dest: NodeId,
    pub inject_cycle: u64,
}

impl Flit {
    pub fn kind(&self) -> FlitKind {
        match (self.seq == 0, self.seq + 1 == self.len) {
            (true, true) => FlitKind::HeadTail,
            (true, false) => FlitKind::Head,
            (false, true) => FlitKind::Tail,
            (false, false) => FlitKind::Body,
        }
    }

    #[inline]
    pub fn is_head(&self) -> bool {
        self.seq == 0
    }

    #[inline]
    pub fn is_tail(&self) -> bool {
        self.seq + 1 == self.len
    }
}
