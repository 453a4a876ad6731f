//! Set-associative cache bank with true-LRU or FIFO replacement.
//!
//! The SRAM bank uses LRU; the set-associative STT-MRAM mode reuses the same
//! structure with FIFO replacement (hits do not reorder the set). All
//! addresses handled here are 128-byte line addresses.

use crate::geometry::CacheGeometry;
use crate::trace::Op;

/// One tag-array entry. `rank` orders the ways of a set: 0 is the most
/// recently filled/touched way, `ways - 1` the replacement victim. Ranks
/// within a set are always a permutation of `0..ways`.
#[derive(Debug, Clone, Copy)]
pub struct CacheLine {
    pub tag: u32,
    pub valid: bool,
    pub dirty: bool,
    /// 9-bit PC signature of the request that filled the line, kept for
    /// eviction-time read-level classification.
    pub fill_sig: u16,
    rank: u32,
}

impl CacheLine {
    fn empty(rank: u32) -> Self {
        CacheLine { tag: 0, valid: false, dirty: false, fill_sig: 0, rank }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Replacement {
    Lru,
    Fifo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup {
    Hit(usize),
    Miss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessOutcome {
    pub hit: bool,
    pub dirty_set: bool,
    pub latency_cycles: u64,
}

/// A line pushed out of the bank, with its full line address reconstructed
/// from (tag, set).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvictedLine {
    pub line_addr: u32,
    pub dirty: bool,
    pub fill_sig: u16,
}

#[derive(Debug)]
pub struct SetAssocBank {
    geom: CacheGeometry,
    policy: Replacement,
    sets: Vec<Vec<CacheLine>>,
}

impl SetAssocBank {
    pub fn new(geom: CacheGeometry, policy: Replacement) -> Self {
        let ways = geom.ways as usize;
        let sets = (0..geom.sets)
            .map(|_| (0..ways).map(|w| CacheLine::empty(w as u32)).collect())
            .collect();
        SetAssocBank { geom, policy, sets }
    }

    pub fn geometry(&self) -> &CacheGeometry {
        &self.geom
    }

    fn split(&self, line_addr: u32) -> (u32, usize) {
        let set = (line_addr & (self.geom.sets - 1)) as usize;
        let tag = line_addr >> self.geom.index_bits();
        (tag, set)
    }

    fn line_addr_of(&self, tag: u32, set: usize) -> u32 {
        (tag << self.geom.index_bits()) | set as u32
    }

    /// Probe without touching replacement state.
    pub fn lookup(&self, line_addr: u32) -> Lookup {
        let (tag, set) = self.split(line_addr);
        for (way, line) in self.sets[set].iter().enumerate() {
            if line.valid && line.tag == tag {
                return Lookup::Hit(way);
            }
        }
        Lookup::Miss
    }

    pub fn resident(&self, line_addr: u32) -> bool {
        matches!(self.lookup(line_addr), Lookup::Hit(_))
    }

    /// Probe and, on a hit, update replacement state and the dirty bit.
    /// Misses do not allocate; fills are driven by the controller.
    pub fn access(&mut self, line_addr: u32, op: Op) -> AccessOutcome {
        let (tag, set) = self.split(line_addr);
        let hit_way = self.sets[set]
            .iter()
            .position(|line| line.valid && line.tag == tag);
        match hit_way {
            Some(way) => {
                if self.policy == Replacement::Lru {
                    self.touch(set, way);
                }
                let mut dirty_set = false;
                if op == Op::Write {
                    dirty_set = !self.sets[set][way].dirty;
                    self.sets[set][way].dirty = true;
                }
                AccessOutcome { hit: true, dirty_set, latency_cycles: 1 }
            }
            None => AccessOutcome { hit: false, dirty_set: false, latency_cycles: 1 },
        }
    }

    /// Insert a line as most-recent, returning the victim if the set was
    /// full. Invalid ways are reused before any eviction.
    pub fn fill(&mut self, line_addr: u32, fill_sig: u16, dirty: bool) -> Option<EvictedLine> {
        let (tag, set) = self.split(line_addr);
        debug_assert!(
            !self.sets[set].iter().any(|l| l.valid && l.tag == tag),
            "fill of already-resident line {line_addr:#x}"
        );
        let way = self.sets[set]
            .iter()
            .position(|l| !l.valid)
            .unwrap_or_else(|| self.victim_way(set));
        let evicted = if self.sets[set][way].valid {
            let old = self.sets[set][way];
            Some(EvictedLine {
                line_addr: self.line_addr_of(old.tag, set),
                dirty: old.dirty,
                fill_sig: old.fill_sig,
            })
        } else {
            None
        };
        let rank = self.sets[set][way].rank;
        self.sets[set][way] = CacheLine { tag, valid: true, dirty, fill_sig, rank };
        self.touch(set, way);
        evicted
    }

    /// The way that [`fill`] would replace if every way is valid.
    pub fn peek_victim(&self, line_addr: u32) -> Option<&CacheLine> {
        let (_, set) = self.split(line_addr);
        if self.sets[set].iter().any(|l| !l.valid) {
            return None;
        }
        let way = self.victim_way(set);
        Some(&self.sets[set][way])
    }

    pub fn invalidate(&mut self, line_addr: u32) -> bool {
        let (tag, set) = self.split(line_addr);
        for line in &mut self.sets[set] {
            if line.valid && line.tag == tag {
                line.valid = false;
                line.dirty = false;
                return true;
            }
        }
        false
    }

    /// (dirty, fill_sig) of a resident line.
    pub fn line_meta(&self, line_addr: u32) -> Option<(bool, u16)> {
        let (tag, set) = self.split(line_addr);
        self.sets[set]
            .iter()
            .find(|l| l.valid && l.tag == tag)
            .map(|l| (l.dirty, l.fill_sig))
    }

    pub fn set_dirty(&mut self, line_addr: u32) -> bool {
        let (tag, set) = self.split(line_addr);
        for line in &mut self.sets[set] {
            if line.valid && line.tag == tag {
                line.dirty = true;
                return true;
            }
        }
        false
    }

    /// Iterate all valid line addresses, for invariant checks.
    pub fn valid_lines(&self) -> impl Iterator<Item = u32> + '_ {
        self.sets.iter().enumerate().flat_map(move |(set, ways)| {
            ways.iter()
                .filter(|l| l.valid)
                .map(move |l| self.line_addr_of(l.tag, set))
        })
    }

    fn victim_way(&self, set: usize) -> usize {
        let max_rank = self.geom.ways - 1;
        self.sets[set]
            .iter()
            .position(|l| l.rank == max_rank)
            .expect("rank permutation must contain ways-1")
    }

    /// Promote `way` to rank 0, shifting younger ranks up by one.
    fn touch(&mut self, set: usize, way: usize) {
        let old_rank = self.sets[set][way].rank;
        for line in &mut self.sets[set] {
            if line.rank < old_rank {
                line.rank += 1;
            }
        }
        self.sets[set][way].rank = 0;
    }
}
