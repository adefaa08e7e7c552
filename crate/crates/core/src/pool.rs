//! Circular segment pool with liveness tracking.
//!
//! Logical segment addresses may be any integer; the physical slot is
//! `addr mod capacity` (non-negative). Every live segment carries a count of
//! reads still pending, and a store that would overwrite a segment with
//! pending reads fails before any byte is written.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TensorTag {
    Input,
    Output,
    Scratch(u8),
}

/// Tensor and segment index a live slot belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Owner {
    pub tag: TensorTag,
    pub index: u64,
}

impl Owner {
    pub fn input(index: usize) -> Self {
        Self {
            tag: TensorTag::Input,
            index: index as u64,
        }
    }

    pub fn output(index: usize) -> Self {
        Self {
            tag: TensorTag::Output,
            index: index as u64,
        }
    }

    pub fn scratch(slot: u8, index: usize) -> Self {
        Self {
            tag: TensorTag::Scratch(slot),
            index: index as u64,
        }
    }
}

impl fmt::Display for Owner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tag {
            TensorTag::Input => write!(f, "in#{}", self.index),
            TensorTag::Output => write!(f, "out#{}", self.index),
            TensorTag::Scratch(s) => write!(f, "ws{s}#{}", self.index),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PoolError {
    #[error("pool needs at least one segment: {mem_cap_bytes} B with {segment_bytes} B segments")]
    InvalidConfig {
        mem_cap_bytes: usize,
        segment_bytes: usize,
    },
    #[error("clobber: store of {incoming} at addr {addr} (slot {phys}) over {resident} with {pending} pending reads")]
    Clobber {
        addr: i64,
        phys: usize,
        resident: Owner,
        incoming: Owner,
        pending: u32,
    },
    #[error("use after free: load at addr {addr} (slot {phys}) of a segment that is not live")]
    UseAfterFree { addr: i64, phys: usize },
    #[error("out of memory: store at addr {addr} (slot {phys}) with all {capacity} segments live")]
    OutOfMemory {
        addr: i64,
        phys: usize,
        capacity: usize,
    },
    #[error("premature free at addr {addr} (slot {phys}): {pending} reads pending")]
    PrematureFree {
        addr: i64,
        phys: usize,
        pending: u32,
    },
    #[error("free at addr {addr} (slot {phys}) of a segment that is not live")]
    DoubleFree { addr: i64, phys: usize },
    #[error("payload of {got} bytes, segment is {expected}")]
    PayloadSize { expected: usize, got: usize },
}

impl PoolError {
    pub fn is_fault(&self) -> bool {
        !matches!(
            self,
            PoolError::InvalidConfig { .. } | PoolError::PayloadSize { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolConfig {
    pub mem_cap_bytes: usize,
    pub segment_bytes: usize,
}

impl PoolConfig {
    pub fn new(mem_cap_bytes: usize, segment_bytes: usize) -> Result<Self, PoolError> {
        let cfg = Self {
            mem_cap_bytes,
            segment_bytes,
        };
        if segment_bytes == 0 || cfg.capacity_segments() == 0 {
            return Err(PoolError::InvalidConfig {
                mem_cap_bytes,
                segment_bytes,
            });
        }
        Ok(cfg)
    }

    /// Pool sized to exactly `segments` segments.
    pub fn with_segments(segments: usize, segment_bytes: usize) -> Result<Self, PoolError> {
        Self::new(segments * segment_bytes, segment_bytes)
    }

    pub fn capacity_segments(&self) -> usize {
        self.mem_cap_bytes
            .checked_div(self.segment_bytes)
            .unwrap_or(0)
    }

    pub fn unusable_bytes(&self) -> usize {
        self.mem_cap_bytes - self.capacity_segments() * self.segment_bytes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SegmentStatus {
    #[default]
    Empty,
    Live,
    Freed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SegmentState {
    pub status: SegmentStatus,
    pub owner: Option<Owner>,
    pub pending_reads: u32,
    /// Logical address the slot was last stored through.
    pub addr: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PoolMetrics {
    pub live_segments: usize,
    pub peak_live_segments: usize,
    /// Largest distance between the lowest and highest live logical address,
    /// plus one.
    pub peak_span_segments: usize,
    pub total_loads: u64,
    pub total_stores: u64,
    pub total_frees: u64,
    /// Accesses whose logical address lies outside `0..capacity`.
    pub modulo_wraps: u64,
    pub unusable_bytes: usize,
}

#[derive(Debug, Clone)]
pub struct Pool {
    config: PoolConfig,
    slots: Vec<SegmentState>,
    data: Vec<u8>,
    accounting: bool,
    metrics: PoolMetrics,
    live_addrs: BTreeMap<i64, u32>,
    trace: Option<Vec<String>>,
}

impl Pool {
    pub fn new(config: PoolConfig) -> Self {
        let cap = config.capacity_segments();
        Self {
            config,
            slots: vec![SegmentState::default(); cap],
            data: vec![0; cap * config.segment_bytes],
            accounting: true,
            metrics: PoolMetrics {
                unusable_bytes: config.unusable_bytes(),
                ..PoolMetrics::default()
            },
            live_addrs: BTreeMap::new(),
            trace: None,
        }
    }

    /// Disable pending-read bookkeeping: loads leave counts untouched and
    /// frees do not check them.
    pub fn without_accounting(mut self) -> Self {
        self.accounting = false;
        self
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn config(&self) -> PoolConfig {
        self.config
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn segment_bytes(&self) -> usize {
        self.config.segment_bytes
    }

    pub fn metrics(&self) -> PoolMetrics {
        self.metrics
    }

    pub fn trace_lines(&self) -> &[String] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn take_trace(&mut self) -> Vec<String> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn resolve(&self, addr: i64) -> usize {
        addr.rem_euclid(self.slots.len() as i64) as usize
    }

    pub fn state(&self, addr: i64) -> SegmentState {
        self.slots[self.resolve(addr)]
    }

    fn note_wrap(&mut self, addr: i64) {
        if addr < 0 || addr >= self.slots.len() as i64 {
            self.metrics.modulo_wraps += 1;
        }
    }

    fn log(&mut self, op: &str, addr: i64, phys: usize, owner: Option<Owner>) {
        if let Some(t) = self.trace.as_mut() {
            match owner {
                Some(o) => t.push(format!("{op} {addr} {phys} {o}")),
                None => t.push(format!("{op} {addr} {phys} -")),
            }
        }
    }

    fn mark_live(&mut self, addr: i64) {
        *self.live_addrs.entry(addr).or_insert(0) += 1;
        self.metrics.live_segments += 1;
        let m = &mut self.metrics;
        m.peak_live_segments = m.peak_live_segments.max(m.live_segments);
        if let (Some((&lo, _)), Some((&hi, _))) = (
            self.live_addrs.first_key_value(),
            self.live_addrs.last_key_value(),
        ) {
            m.peak_span_segments = m.peak_span_segments.max((hi - lo + 1) as usize);
        }
    }

    fn mark_dead(&mut self, addr: i64) {
        if let Some(n) = self.live_addrs.get_mut(&addr) {
            *n -= 1;
            if *n == 0 {
                self.live_addrs.remove(&addr);
            }
        }
        self.metrics.live_segments -= 1;
    }

    /// Store one segment and schedule `reads` pending reads on it.
    pub fn store(
        &mut self,
        addr: i64,
        payload: &[u8],
        owner: Owner,
        reads: u32,
    ) -> Result<(), PoolError> {
        let seg = self.config.segment_bytes;
        if payload.len() != seg {
            return Err(PoolError::PayloadSize {
                expected: seg,
                got: payload.len(),
            });
        }
        let phys = self.resolve(addr);
        let slot = self.slots[phys];
        if slot.status == SegmentStatus::Live {
            let resident = slot.owner.expect("live slot has an owner");
            if slot.pending_reads == 0 && self.metrics.live_segments == self.slots.len() {
                return Err(PoolError::OutOfMemory {
                    addr,
                    phys,
                    capacity: self.slots.len(),
                });
            }
            return Err(PoolError::Clobber {
                addr,
                phys,
                resident,
                incoming: owner,
                pending: slot.pending_reads,
            });
        }
        self.data[phys * seg..(phys + 1) * seg].copy_from_slice(payload);
        self.slots[phys] = SegmentState {
            status: SegmentStatus::Live,
            owner: Some(owner),
            pending_reads: reads,
            addr,
        };
        self.metrics.total_stores += 1;
        self.note_wrap(addr);
        self.mark_live(addr);
        self.log("STORE", addr, phys, Some(owner));
        Ok(())
    }

    /// Overwrite the pending-read count of a live segment.
    pub fn schedule_reads(&mut self, addr: i64, reads: u32) -> Result<(), PoolError> {
        let phys = self.resolve(addr);
        match self.slots[phys].status {
            SegmentStatus::Live => {
                self.slots[phys].pending_reads = reads;
                Ok(())
            }
            _ => Err(PoolError::UseAfterFree { addr, phys }),
        }
    }

    /// Copy a live segment into `out` and consume one pending read.
    pub fn load_into(&mut self, addr: i64, out: &mut [u8]) -> Result<(), PoolError> {
        let seg = self.config.segment_bytes;
        if out.len() != seg {
            return Err(PoolError::PayloadSize {
                expected: seg,
                got: out.len(),
            });
        }
        let phys = self.resolve(addr);
        let slot = &mut self.slots[phys];
        if slot.status != SegmentStatus::Live {
            return Err(PoolError::UseAfterFree { addr, phys });
        }
        if self.accounting {
            slot.pending_reads = slot.pending_reads.saturating_sub(1);
        }
        let owner = slot.owner;
        out.copy_from_slice(&self.data[phys * seg..(phys + 1) * seg]);
        self.metrics.total_loads += 1;
        self.note_wrap(addr);
        self.log("LOAD", addr, phys, owner);
        Ok(())
    }

    pub fn load(&mut self, addr: i64) -> Result<Vec<u8>, PoolError> {
        let mut out = vec![0; self.config.segment_bytes];
        self.load_into(addr, &mut out)?;
        Ok(out)
    }

    pub fn free(&mut self, addr: i64) -> Result<(), PoolError> {
        let phys = self.resolve(addr);
        let slot = self.slots[phys];
        if slot.status != SegmentStatus::Live {
            return Err(PoolError::DoubleFree { addr, phys });
        }
        if self.accounting && slot.pending_reads > 0 {
            return Err(PoolError::PrematureFree {
                addr,
                phys,
                pending: slot.pending_reads,
            });
        }
        self.slots[phys].status = SegmentStatus::Freed;
        self.slots[phys].pending_reads = 0;
        self.metrics.total_frees += 1;
        self.mark_dead(slot.addr);
        self.log("FREE", addr, phys, slot.owner);
        Ok(())
    }

    /// Load and free once the last pending read is consumed.
    pub fn consume_into(&mut self, addr: i64, out: &mut [u8]) -> Result<(), PoolError> {
        self.load_into(addr, out)?;
        if self.accounting && self.slots[self.resolve(addr)].pending_reads == 0 {
            self.free(addr)?;
        }
        Ok(())
    }

    /// Contents of a live segment without touching counters or the trace.
    pub fn peek(&self, addr: i64) -> Option<&[u8]> {
        let phys = self.resolve(addr);
        let seg = self.config.segment_bytes;
        (self.slots[phys].status == SegmentStatus::Live)
            .then(|| &self.data[phys * seg..(phys + 1) * seg])
    }
}
