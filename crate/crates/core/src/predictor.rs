//! PC-signature read-level predictor: a small request sampler feeding a
//! prediction history table.
//!
//! The sampler watches requests from four representative warps and behaves
//! like a 4-set, 8-way LRU cache over partial line addresses. Sampler events
//! train per-signature saturating counters in the history table; the
//! arbitration logic reads the table to classify the read-level of a PC.

use crate::trace::{Op, TraceRecord};

/// Warp ids observed by the sampler, one per sampler set.
pub const SAMPLED_WARPS: [u32; 4] = [0, 12, 24, 36];

pub const SAMPLER_SETS: usize = 4;
pub const SAMPLER_WAYS: usize = 8;

/// History-table entries; indexed by the 9-bit PC signature by default.
pub const HISTORY_ENTRIES: usize = 512;

/// Counter ceiling of the 4-bit history counters.
pub const COUNTER_MAX: u8 = 15;
/// Counters above this classify as WORO.
pub const UNUSED_THRESHOLD: u8 = 14;
/// Counters at or below this classify as WORM/WM depending on status.
pub const LOWER_THRESHOLD: u8 = 1;
/// Initial counter value of every history entry.
pub const COUNTER_INIT: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Woro,
    Worm,
    Wm,
    Neutral,
}

/// One sampler way: valid/used bits, 3-bit LRU rank, 15-bit partial line
/// address and 9-bit PC signature.
#[derive(Debug, Clone, Copy)]
struct SamplerEntry {
    valid: bool,
    used: bool,
    rank: u8,
    tag: u16,
    signature: u16,
}

impl SamplerEntry {
    fn empty(rank: u8) -> Self {
        SamplerEntry { valid: false, used: false, rank, tag: 0, signature: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    R,
    W,
}

#[derive(Debug, Clone, Copy)]
struct HistoryEntry {
    status: Status,
    counter: u8,
}

#[derive(Debug)]
pub struct ReadLevelPredictor {
    sampler: [[SamplerEntry; SAMPLER_WAYS]; SAMPLER_SETS],
    history: Vec<HistoryEntry>,
    sig_mask: u32,
    unused_threshold: u8,
    lower_threshold: u8,
}

impl Default for ReadLevelPredictor {
    fn default() -> Self {
        Self::new(HISTORY_ENTRIES, UNUSED_THRESHOLD, LOWER_THRESHOLD)
    }
}

impl ReadLevelPredictor {
    pub fn new(history_entries: usize, unused_threshold: u8, lower_threshold: u8) -> Self {
        assert!(history_entries.is_power_of_two(), "history table size must be a power of two");
        let mut sampler = [[SamplerEntry::empty(0); SAMPLER_WAYS]; SAMPLER_SETS];
        for set in &mut sampler {
            for (w, entry) in set.iter_mut().enumerate() {
                entry.rank = w as u8;
            }
        }
        ReadLevelPredictor {
            sampler,
            history: vec![HistoryEntry { status: Status::R, counter: COUNTER_INIT }; history_entries],
            sig_mask: history_entries as u32 - 1,
            unused_threshold,
            lower_threshold,
        }
    }

    /// 9-bit signature from word-aligned PC bits (or wider when the table is
    /// configured larger).
    pub fn signature(&self, pc: u32) -> u16 {
        ((pc >> 2) & self.sig_mask) as u16
    }

    /// Sampler tag: line-address bits, 15 bits wide.
    fn sampler_tag(addr: u32) -> u16 {
        ((addr >> 7) & 0x7FFF) as u16
    }

    /// Feed one memory reference. Requests from non-sampled warps leave all
    /// state untouched.
    pub fn observe(&mut self, record: &TraceRecord) {
        let Some(set) = SAMPLED_WARPS.iter().position(|w| *w == record.warp_id) else {
            return;
        };
        let tag = Self::sampler_tag(record.addr);
        let sig = self.signature(record.pc);
        let ways = &mut self.sampler[set];
        if let Some(way) = ways.iter().position(|e| e.valid && e.tag == tag) {
            // Hit: train the history entry of the signature that brought the
            // line in, then adopt the incoming signature.
            let stored_sig = ways[way].signature as usize;
            let entry = &mut self.history[stored_sig];
            entry.counter = entry.counter.saturating_sub(1);
            entry.status = if record.op == Op::Write { Status::W } else { Status::R };
            ways[way].used = true;
            ways[way].signature = sig;
            Self::touch(ways, way);
            return;
        }
        // Miss: insert, preferring invalid ways; an evicted entry that was
        // never reused bumps its signature's counter toward WORO.
        let way = ways
            .iter()
            .position(|e| !e.valid)
            .unwrap_or_else(|| ways.iter().position(|e| e.rank == SAMPLER_WAYS as u8 - 1).unwrap());
        if ways[way].valid && !ways[way].used {
            let victim_sig = ways[way].signature as usize;
            let entry = &mut self.history[victim_sig];
            entry.counter = (entry.counter + 1).min(COUNTER_MAX);
        }
        ways[way] = SamplerEntry { valid: true, used: false, rank: ways[way].rank, tag, signature: sig };
        Self::touch(ways, way);
    }

    fn touch(ways: &mut [SamplerEntry; SAMPLER_WAYS], way: usize) {
        let old = ways[way].rank;
        for e in ways.iter_mut() {
            if e.rank < old {
                e.rank += 1;
            }
        }
        ways[way].rank = 0;
    }

    /// Read-level of a PC. Pure read; only [`observe`] mutates.
    pub fn classify(&self, pc: u32) -> Classification {
        self.classify_sig(self.signature(pc))
    }

    /// Classify directly by stored signature (used for eviction decisions).
    pub fn classify_sig(&self, sig: u16) -> Classification {
        let entry = &self.history[sig as usize & self.sig_mask as usize];
        if entry.counter > self.unused_threshold {
            Classification::Woro
        } else if entry.counter <= self.lower_threshold {
            match entry.status {
                Status::R => Classification::Worm,
                Status::W => Classification::Wm,
            }
        } else {
            Classification::Neutral
        }
    }

    /// History table dump rows: (signature, counter, status).
    pub fn dump(&self) -> Vec<(u16, u8, char)> {
        self.history
            .iter()
            .enumerate()
            .map(|(sig, e)| (sig as u16, e.counter, if e.status == Status::W { 'W' } else { 'R' }))
            .collect()
    }

    pub fn dump_csv(&self) -> String {
        let mut out = String::from("signature,counter,status\n");
        for (sig, counter, status) in self.dump() {
            out.push_str(&format!("{sig},{counter},{status}\n"));
        }
        out
    }

    #[cfg(test)]
    fn counter_of(&self, pc: u32) -> u8 {
        self.history[self.signature(pc) as usize].counter
    }
}
