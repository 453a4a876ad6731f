//! Fixed-latency model of the L2 cache and DRAM behind the interconnect.
//!
//! Requests complete after the L2 round trip, plus a DRAM penalty on an L2
//! miss. The optional L2 content model is a set-associative LRU directory
//! over line addresses; its set count is derived from total capacity, so it
//! is not restricted to powers of two. Writebacks install into L2 and
//! complete silently.

use crate::geometry::LINE_BYTES;

pub const DEFAULT_L2_ROUND_TRIP: u64 = 60;
pub const DEFAULT_DRAM_EXTRA: u64 = 160;
/// Table value "786KB" interpreted as bytes of a 12-bank L2 (768 KiB).
pub const DEFAULT_L2_CAPACITY_BYTES: u64 = 786_432;
pub const DEFAULT_L2_WAYS: u32 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamConfig {
    pub l2_enabled: bool,
    pub l2_capacity_bytes: u64,
    pub l2_ways: u32,
    pub l2_round_trip_cycles: u64,
    pub dram_extra_cycles: u64,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        DownstreamConfig {
            l2_enabled: true,
            l2_capacity_bytes: DEFAULT_L2_CAPACITY_BYTES,
            l2_ways: DEFAULT_L2_WAYS,
            l2_round_trip_cycles: DEFAULT_L2_ROUND_TRIP,
            dram_extra_cycles: DEFAULT_DRAM_EXTRA,
        }
    }
}

#[derive(Debug)]
struct L2Model {
    sets: Vec<Vec<(u32, u64)>>,
    ways: usize,
    stamp: u64,
}

impl L2Model {
    fn new(capacity_bytes: u64, ways: u32) -> Self {
        let lines = (capacity_bytes / u64::from(LINE_BYTES)).max(u64::from(ways));
        let sets = (lines / u64::from(ways)).max(1) as usize;
        L2Model { sets: vec![Vec::new(); sets], ways: ways as usize, stamp: 0 }
    }

    fn set_of(&self, line: u32) -> usize {
        line as usize % self.sets.len()
    }

    fn lookup_touch(&mut self, line: u32) -> bool {
        self.stamp += 1;
        let stamp = self.stamp;
        let set = self.set_of(line);
        if let Some(entry) = self.sets[set].iter_mut().find(|(l, _)| *l == line) {
            entry.1 = stamp;
            true
        } else {
            false
        }
    }

    fn fill(&mut self, line: u32) {
        self.stamp += 1;
        let stamp = self.stamp;
        let set = self.set_of(line);
        if let Some(entry) = self.sets[set].iter_mut().find(|(l, _)| *l == line) {
            entry.1 = stamp;
            return;
        }
        if self.sets[set].len() == self.ways {
            let victim = self.sets[set]
                .iter()
                .enumerate()
                .min_by_key(|(_, (_, s))| *s)
                .map(|(i, _)| i)
                .unwrap();
            self.sets[set].swap_remove(victim);
        }
        self.sets[set].push((line, stamp));
    }
}

#[derive(Debug)]
pub struct Downstream {
    config: DownstreamConfig,
    l2: Option<L2Model>,
    requests: u64,
    l2_hits: u64,
}

impl Downstream {
    pub fn new(config: DownstreamConfig) -> Self {
        let l2 = config
            .l2_enabled
            .then(|| L2Model::new(config.l2_capacity_bytes, config.l2_ways));
        Downstream { config, l2, requests: 0, l2_hits: 0 }
    }

    /// Issue one off-chip request at `issue_cycle`; returns the cycle the
    /// response arrives. Writebacks install into L2 and wake nobody.
    pub fn request(&mut self, line_addr: u32, is_writeback: bool, issue_cycle: u64) -> u64 {
        self.requests += 1;
        let base = issue_cycle + self.config.l2_round_trip_cycles;
        match &mut self.l2 {
            None => {
                if is_writeback {
                    base
                } else {
                    base + self.config.dram_extra_cycles
                }
            }
            Some(l2) => {
                if is_writeback {
                    l2.fill(line_addr);
                    base
                } else if l2.lookup_touch(line_addr) {
                    self.l2_hits += 1;
                    base
                } else {
                    l2.fill(line_addr);
                    base + self.config.dram_extra_cycles
                }
            }
        }
    }

    /// Total off-chip traffic, demand plus writeback.
    pub fn offchip_requests(&self) -> u64 {
        self.requests
    }

    pub fn l2_hits(&self) -> u64 {
        self.l2_hits
    }
}
