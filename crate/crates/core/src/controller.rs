//! The arbitration controller: one decision tree over SRAM, STT-MRAM,
//! predictor, swap buffer, tag queue and MSHR.
//!
//! Per request: probe SRAM (terminating any STT search on a hit), then
//! consult the STT side. Reads hit in STT are served there unless the
//! predictor says the line is write-multiple, in which case the line
//! migrates to SRAM; writes to STT-resident lines always migrate, draining
//! the tag queue first. Misses allocate or merge an MSHR entry whose
//! destination bits route the eventual fill. SRAM victims go to the swap
//! buffer with an `F` entry in the tag queue, except predicted
//! write-once-read-once victims which fall straight through to L2.
//!
//! A line is valid in at most one of SRAM, STT-MRAM or the swap buffer at
//! any instant; [`Controller::check_single_copy`] verifies exactly that.

use std::collections::{HashMap, HashSet, VecDeque};

use crate::config::SimConfig;
use crate::geometry::{FeatureFlags, PresetName};
use crate::metrics::{FillOutcome, RawCounters, StallCause};
use crate::predictor::{Classification, ReadLevelPredictor};
use crate::sram_bank::{EvictedLine, Replacement, SetAssocBank};
use crate::stt_bank::{
    CompletionEvent, EnqueueResult, SearchOutcome, SttBank, TagEntry,
};
use crate::trace::{Op, TraceRecord};

pub type RequestId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServedBy {
    Sram,
    Stt,
    Downstream,
}

/// A request completing at cycle `at`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Retirement {
    pub id: RequestId,
    pub at: u64,
    pub served_by: ServedBy,
}

/// Off-chip traffic the controller wants issued.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownstreamRequest {
    /// Demand fill; completion comes back through `complete_fill`.
    Fill { line_addr: u32, issue_at: u64 },
    /// Eviction or bypassed write; nobody waits for it.
    Writeback { line_addr: u32, issue_at: u64 },
    /// Bypassed read served straight from downstream.
    BypassRead { line_addr: u32, waiter: RequestId, issue_at: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandleOutcome {
    Accepted,
    Blocked(StallCause),
}

/// Per-record scratch owned by the engine while a record is being issued or
/// retried; keeps one-shot bookkeeping across retries.
#[derive(Debug, Default, Clone, Copy)]
pub struct IssueScratch {
    observed: bool,
    stt_probed: bool,
    flush_counted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dest {
    Sram,
    Stt,
}

#[derive(Debug)]
struct MshrEntry {
    destination: Dest,
    waiters: Vec<RequestId>,
    write_count: u64,
    fill_sig: u16,
    predicted: Option<Classification>,
    issue_index: u64,
}

#[derive(Debug, Clone, Copy)]
struct SwapEntry {
    line_addr: u32,
    dirty: bool,
    fill_sig: u16,
}

#[derive(Debug)]
struct SwapBuffer {
    slots: Vec<Option<SwapEntry>>,
}

impl SwapBuffer {
    fn new(slots: usize) -> Self {
        SwapBuffer { slots: vec![None; slots] }
    }

    fn free_slot(&self) -> Option<usize> {
        self.slots.iter().position(|s| s.is_none())
    }

    fn put(&mut self, entry: SwapEntry) -> usize {
        let slot = self.free_slot().expect("swap buffer full");
        self.slots[slot] = Some(entry);
        slot
    }

    fn free(&mut self, slot: usize) {
        debug_assert!(self.slots[slot].is_some(), "freeing empty swap slot {slot}");
        self.slots[slot] = None;
    }

    fn occupied(&self) -> impl Iterator<Item = (usize, &SwapEntry)> {
        self.slots.iter().enumerate().filter_map(|(i, s)| s.as_ref().map(|e| (i, e)))
    }

    fn holds_line(&self, line_addr: u32) -> bool {
        self.slots.iter().flatten().any(|e| e.line_addr == line_addr)
    }
}

/// A fill delivered from downstream, waiting to be applied to its bank.
#[derive(Debug)]
struct PendingFill {
    line_addr: u32,
    dest: Dest,
    fill_sig: u16,
    dirty: bool,
    waiters: Vec<RequestId>,
    predicted: Option<Classification>,
    issue_index: u64,
    writes_at_fill: u64,
}

/// A queued read that found its line evicted by the time it was serviced;
/// it re-enters the miss path.
#[derive(Debug)]
struct DeferredMiss {
    waiter: RequestId,
    line_addr: u32,
    op: Op,
    pc: u32,
    issue_index: u64,
}

/// Metadata for requests parked in the tag queue.
#[derive(Debug, Clone, Copy)]
struct QueuedMeta {
    op: Op,
    pc: u32,
    issue_index: u64,
}

/// Scoring state of one on-chip residency. Migrations between banks keep
/// the residency alive; it ends when the line leaves the L1D entirely.
#[derive(Debug, Clone, Copy)]
struct Residency {
    predicted: Option<Classification>,
    writes: u64,
    issue_index: u64,
}

#[derive(Debug, Default)]
pub struct Outbox {
    pub retirements: Vec<Retirement>,
    pub downstream: Vec<DownstreamRequest>,
}

enum VictimPlan {
    DropOrWriteback,
    SwapToStt,
    DirectSttWrite,
}

pub struct Controller {
    features: FeatureFlags,
    preset: PresetName,
    sram: Option<SetAssocBank>,
    pub stt: Option<SttBank>,
    predictor: Option<ReadLevelPredictor>,
    swap: SwapBuffer,
    mshr: HashMap<u32, MshrEntry>,
    mshr_capacity: usize,
    /// Lines with a pending `F` entry: on their way into STT-MRAM.
    inflight_to_stt: HashSet<u32>,
    pending_fills: VecDeque<PendingFill>,
    deferred_misses: VecDeque<DeferredMiss>,
    queued_meta: HashMap<RequestId, QueuedMeta>,
    residencies: HashMap<u32, Residency>,
    fill_log: Vec<FillOutcome>,
    track_residency: bool,
    port_blocked_until: u64,
    sram_write_cyc: u64,
    stt_read_cyc: u64,
    stt_write_cyc: u64,
    pub counters: RawCounters,
    pub outbox: Outbox,
}

impl Controller {
    pub fn new(config: &SimConfig) -> Self {
        let preset = &config.preset;
        let sram = preset
            .sram_geom
            .map(|geom| SetAssocBank::new(geom, Replacement::Lru));
        let stt = preset.stt_geom.map(|geom| {
            if preset.features.approx_fa {
                SttBank::new_approx_fa(
                    geom.lines() as usize,
                    config.cbf_counters,
                    config.cbf_hashes,
                    config.seed,
                    preset.timing.stt_read_cyc,
                    preset.timing.stt_write_cyc,
                )
            } else {
                SttBank::new_set_assoc(
                    geom,
                    preset.features.tag_queue,
                    preset.timing.stt_read_cyc,
                    preset.timing.stt_write_cyc,
                )
            }
        });
        // The deadwrite-bypass preset needs read-level classification too,
        // even though it never routes fills by prediction.
        let wants_predictor = preset.features.predictor || preset.features.deadwrite_bypass;
        let predictor = wants_predictor.then(|| {
            ReadLevelPredictor::new(
                config.predictor.history_entries,
                config.predictor.unused_threshold,
                config.predictor.lower_threshold,
            )
        });
        let swap_slots = if preset.features.swap_buffer { config.swap_slots } else { 0 };
        Controller {
            features: preset.features,
            preset: preset.name,
            sram,
            stt,
            track_residency: wants_predictor,
            predictor,
            swap: SwapBuffer::new(swap_slots),
            mshr: HashMap::new(),
            mshr_capacity: config.mshr_capacity,
            inflight_to_stt: HashSet::new(),
            pending_fills: VecDeque::new(),
            deferred_misses: VecDeque::new(),
            queued_meta: HashMap::new(),
            residencies: HashMap::new(),
            fill_log: Vec::new(),
            port_blocked_until: 0,
            sram_write_cyc: preset.timing.sram_write_cyc,
            stt_read_cyc: preset.timing.stt_read_cyc,
            stt_write_cyc: preset.timing.stt_write_cyc,
            counters: RawCounters::default(),
            outbox: Outbox::default(),
        }
    }

    pub fn preset(&self) -> PresetName {
        self.preset
    }

    fn classify(&self, pc: u32) -> Option<Classification> {
        self.predictor.as_ref().map(|p| p.classify(pc))
    }

    fn signature(&self, pc: u32) -> u16 {
        self.predictor
            .as_ref()
            .map(|p| p.signature(pc))
            .unwrap_or(((pc >> 2) & 0x1FF) as u16)
    }

    fn retire(&mut self, id: RequestId, at: u64, served_by: ServedBy) {
        self.outbox.retirements.push(Retirement { id, at, served_by });
    }

    fn residency_start(
        &mut self,
        line_addr: u32,
        predicted: Option<Classification>,
        writes_at_fill: u64,
        issue_index: u64,
    ) {
        if !self.track_residency {
            return;
        }
        let prev = self.residencies.insert(
            line_addr,
            Residency { predicted, writes: writes_at_fill, issue_index },
        );
        debug_assert!(prev.is_none(), "residency already open for line {line_addr:#x}");
    }

    fn residency_write(&mut self, line_addr: u32) {
        if let Some(res) = self.residencies.get_mut(&line_addr) {
            res.writes += 1;
        }
    }

    fn residency_end(&mut self, line_addr: u32) {
        if !self.track_residency {
            return;
        }
        if let Some(res) = self.residencies.remove(&line_addr) {
            if let Some(predicted) = res.predicted {
                self.fill_log.push(FillOutcome {
                    predicted,
                    writes_in_residency: res.writes,
                    issue_index: res.issue_index,
                });
            }
        }
    }

    /// Main decision tree for one record. Returns `Blocked` on a structural
    /// hazard; the engine retries the same record next cycle.
    pub fn handle(
        &mut self,
        record: &TraceRecord,
        id: RequestId,
        issue_index: u64,
        now: u64,
        scratch: &mut IssueScratch,
    ) -> HandleOutcome {
        if now < self.port_blocked_until {
            return HandleOutcome::Blocked(StallCause::SttWrite);
        }
        let line = record.line_addr();
        if !scratch.observed {
            scratch.observed = true;
            self.counters.accesses += 1;
            if let Some(p) = &mut self.predictor {
                p.observe(record);
            }
            if self.sram.is_some() {
                self.counters.sram_reads += 1;
            }
        }

        // SRAM probe; a hit terminates any STT-side search.
        if let Some(sram) = &mut self.sram {
            let outcome = sram.access(line, record.op);
            if outcome.hit {
                if record.op == Op::Write {
                    self.counters.sram_writes += 1;
                    self.residency_write(line);
                }
                self.counters.sram_hits += 1;
                self.retire(id, now + 1, ServedBy::Sram);
                return HandleOutcome::Accepted;
            }
        }

        let Some(stt) = &mut self.stt else {
            return self.miss_path(record, id, issue_index, now, 0);
        };
        if !scratch.stt_probed {
            scratch.stt_probed = true;
            self.counters.stt_reads += 1;
        }

        // Lines migrating into STT are reachable once their F entry lands;
        // reads queue up behind it, writes wait for it.
        if self.inflight_to_stt.contains(&line) {
            if record.op == Op::Read {
                return match stt.enqueue(TagEntry::Read { line_addr: line, waiter: id }) {
                    EnqueueResult::Accepted => {
                        self.queued_meta
                            .insert(id, QueuedMeta { op: record.op, pc: record.pc, issue_index });
                        HandleOutcome::Accepted
                    }
                    EnqueueResult::QueueFull => HandleOutcome::Blocked(StallCause::TagQueueFull),
                };
            }
            return HandleOutcome::Blocked(StallCause::SttWrite);
        }

        if stt.is_approx() {
            self.handle_approx(record, id, issue_index, now, scratch)
        } else {
            self.handle_set_assoc(record, id, issue_index, now, scratch)
        }
    }

    fn handle_approx(
        &mut self,
        record: &TraceRecord,
        id: RequestId,
        issue_index: u64,
        now: u64,
        scratch: &mut IssueScratch,
    ) -> HandleOutcome {
        let line = record.line_addr();
        let treat_as_write = record.op == Op::Write
            || (self.features.predictor && self.classify(record.pc) == Some(Classification::Wm));
        let stt = self.stt.as_mut().unwrap();
        let idle = stt.queue_empty() && !stt.busy(now);

        if treat_as_write {
            let stt = self.stt.as_mut().unwrap();
            let mut stats = std::mem::take(&mut stt.stats);
            let definitely_absent = match &mut stt.storage {
                crate::stt_bank::SttStorage::ApproxFa(fa) => fa.quick_negative(line, &mut stats),
                _ => unreachable!(),
            };
            stt.stats = stats;
            if definitely_absent {
                return self.miss_path(record, id, issue_index, now, 1);
            }
            if !idle {
                // Possibly resident: the write forces the queue to drain.
                if !scratch.flush_counted && !stt.queue_empty() {
                    self.counters.tag_queue_flushes += 1;
                    scratch.flush_counted = true;
                }
                return HandleOutcome::Blocked(StallCause::SttWrite);
            }
            let result = self.approx_search(line);
            return match result.outcome {
                SearchOutcome::Hit(_) => {
                    self.migrate_to_sram(record, id, issue_index, now, result.search_cycles)
                }
                SearchOutcome::Miss => {
                    self.miss_path(record, id, issue_index, now, result.search_cycles)
                }
            };
        }

        // Read path.
        if idle {
            let result = self.approx_search(line);
            match result.outcome {
                SearchOutcome::Hit(_) => {
                    let serve_at = now + 1 + result.search_cycles + self.stt_read_cyc;
                    self.counters.stt_hits += 1;
                    self.counters.stt_reads += 1;
                    let stt = self.stt.as_mut().unwrap();
                    stt.occupy_until(serve_at);
                    self.retire(id, serve_at, ServedBy::Stt);
                    HandleOutcome::Accepted
                }
                SearchOutcome::Miss => {
                    let stt = self.stt.as_mut().unwrap();
                    stt.occupy_until(now + 1 + result.search_cycles);
                    self.miss_path(record, id, issue_index, now, result.search_cycles)
                }
            }
        } else {
            let stt = self.stt.as_mut().unwrap();
            let mut stats = std::mem::take(&mut stt.stats);
            let definitely_absent = match &mut stt.storage {
                crate::stt_bank::SttStorage::ApproxFa(fa) => fa.quick_negative(line, &mut stats),
                _ => unreachable!(),
            };
            stt.stats = stats;
            if definitely_absent {
                return self.miss_path(record, id, issue_index, now, 1);
            }
            match stt.enqueue(TagEntry::Read { line_addr: line, waiter: id }) {
                EnqueueResult::Accepted => {
                    self.queued_meta
                        .insert(id, QueuedMeta { op: record.op, pc: record.pc, issue_index });
                    HandleOutcome::Accepted
                }
                EnqueueResult::QueueFull => HandleOutcome::Blocked(StallCause::TagQueueFull),
            }
        }
    }

    fn handle_set_assoc(
        &mut self,
        record: &TraceRecord,
        id: RequestId,
        issue_index: u64,
        now: u64,
        scratch: &mut IssueScratch,
    ) -> HandleOutcome {
        let line = record.line_addr();
        let stt = self.stt.as_ref().unwrap();
        let resident = stt.resident(line);
        if !resident {
            return self.miss_path(record, id, issue_index, now, 0);
        }
        let treat_as_write = record.op == Op::Write
            || (self.features.predictor && self.classify(record.pc) == Some(Classification::Wm));

        if !treat_as_write {
            // Read hit; the bank itself must be free to stream the data.
            let stt = self.stt.as_mut().unwrap();
            if stt.has_queue() {
                if stt.queue_empty() && !stt.busy(now) {
                    let serve_at = now + 1 + self.stt_read_cyc;
                    self.counters.stt_hits += 1;
                    self.counters.stt_reads += 1;
                    self.retire(id, serve_at, ServedBy::Stt);
                    return HandleOutcome::Accepted;
                }
                return match stt.enqueue(TagEntry::Read { line_addr: line, waiter: id }) {
                    EnqueueResult::Accepted => {
                        self.queued_meta
                            .insert(id, QueuedMeta { op: record.op, pc: record.pc, issue_index });
                        HandleOutcome::Accepted
                    }
                    EnqueueResult::QueueFull => HandleOutcome::Blocked(StallCause::TagQueueFull),
                };
            }
            if stt.busy(now) {
                return HandleOutcome::Blocked(StallCause::SttWrite);
            }
            let serve_at = now + 1 + self.stt_read_cyc;
            self.counters.stt_hits += 1;
            self.counters.stt_reads += 1;
            self.retire(id, serve_at, ServedBy::Stt);
            return HandleOutcome::Accepted;
        }

        // Write (or predicted write-multiple) hit on STT.
        if self.sram.is_none() {
            // Pure-NVM cache writes in place and stalls for the write.
            let stt = self.stt.as_mut().unwrap();
            if stt.busy(now) {
                return HandleOutcome::Blocked(StallCause::SttWrite);
            }
            let done = now + 1 + self.stt_write_cyc;
            stt.set_dirty(line);
            stt.occupy_until(done);
            self.port_blocked_until = self.port_blocked_until.max(done);
            self.counters.stt_hits += 1;
            self.counters.stt_writes += 1;
            self.residency_write(line);
            self.retire(id, done, ServedBy::Stt);
            return HandleOutcome::Accepted;
        }
        let stt = self.stt.as_mut().unwrap();
        if !stt.queue_empty() || stt.busy(now) {
            if !scratch.flush_counted && !stt.queue_empty() {
                self.counters.tag_queue_flushes += 1;
                scratch.flush_counted = true;
            }
            return HandleOutcome::Blocked(StallCause::SttWrite);
        }
        self.migrate_to_sram(record, id, issue_index, now, 1)
    }

    fn approx_search(&mut self, line: u32) -> crate::stt_bank::SearchResult {
        let stt = self.stt.as_mut().unwrap();
        let mut stats = std::mem::take(&mut stt.stats);
        let result = match &mut stt.storage {
            crate::stt_bank::SttStorage::ApproxFa(fa) => fa.search(line, &mut stats),
            _ => unreachable!("approx search on set-associative bank"),
        };
        stt.stats = stats;
        result
    }

    /// Step 3b: invalidate in STT, fill into SRAM, serve from SRAM. Caller
    /// guarantees the tag queue is drained and the bank idle, which also
    /// means the swap buffer is empty.
    fn migrate_to_sram(
        &mut self,
        record: &TraceRecord,
        id: RequestId,
        issue_index: u64,
        now: u64,
        search_cycles: u64,
    ) -> HandleOutcome {
        let line = record.line_addr();
        let stt = self.stt.as_mut().unwrap();
        let (was_dirty, fill_sig) = stt.line_meta(line).expect("migration source must be resident");
        let invalidated = stt.invalidate(line);
        debug_assert!(invalidated);
        self.counters.stt_hits += 1;
        self.counters.stt_reads += 1;
        self.counters.migrations_stt_to_sram += 1;
        let dirty = was_dirty || record.op == Op::Write;
        if let Err(cause) = self.place_into_sram(line, fill_sig, dirty, now) {
            // Unreachable by construction; keep the failure visible.
            debug_assert!(false, "migration fill blocked: {cause:?}");
            return HandleOutcome::Blocked(cause);
        }
        self.counters.sram_writes += 1;
        if record.op == Op::Write {
            self.residency_write(line);
        }
        let serve_at = now + 1 + search_cycles + self.stt_read_cyc + self.sram_write_cyc;
        self.retire(id, serve_at, ServedBy::Sram);
        HandleOutcome::Accepted
    }

    fn victim_plan(&self, fill_sig: u16) -> VictimPlan {
        if self.features.predictor {
            if let Some(p) = &self.predictor {
                if p.classify_sig(fill_sig) == Classification::Woro {
                    return VictimPlan::DropOrWriteback;
                }
            }
        }
        if self.stt.is_none() {
            return VictimPlan::DropOrWriteback;
        }
        if self.features.swap_buffer {
            VictimPlan::SwapToStt
        } else {
            VictimPlan::DirectSttWrite
        }
    }

    /// Fill a line into SRAM, routing any victim per the decision tree.
    /// Fails without mutating anything when the victim path lacks room.
    fn place_into_sram(
        &mut self,
        line_addr: u32,
        fill_sig: u16,
        dirty: bool,
        now: u64,
    ) -> Result<(), StallCause> {
        let sram = self.sram.as_ref().expect("SRAM fill without an SRAM bank");
        if let Some(victim) = sram.peek_victim(line_addr) {
            match self.victim_plan(victim.fill_sig) {
                VictimPlan::DropOrWriteback => {}
                VictimPlan::SwapToStt => {
                    if self.swap.free_slot().is_none() {
                        return Err(StallCause::SwapFull);
                    }
                    if self.stt.as_ref().unwrap().queue_full() {
                        return Err(StallCause::TagQueueFull);
                    }
                }
                VictimPlan::DirectSttWrite => {
                    if self.stt.as_ref().unwrap().busy(now) {
                        return Err(StallCause::SttWrite);
                    }
                }
            }
        }
        let evicted = self.sram.as_mut().unwrap().fill(line_addr, fill_sig, dirty);
        if let Some(victim) = evicted {
            self.route_sram_victim(victim, now);
        }
        Ok(())
    }

    fn route_sram_victim(&mut self, victim: EvictedLine, now: u64) {
        match self.victim_plan(victim.fill_sig) {
            VictimPlan::DropOrWriteback => {
                self.residency_end(victim.line_addr);
                if victim.dirty {
                    self.writeback(victim.line_addr, now);
                }
            }
            VictimPlan::SwapToStt => {
                let slot = self.swap.put(SwapEntry {
                    line_addr: victim.line_addr,
                    dirty: victim.dirty,
                    fill_sig: victim.fill_sig,
                });
                let accepted = self.stt.as_mut().unwrap().enqueue(TagEntry::Fill {
                    line_addr: victim.line_addr,
                    fill_sig: victim.fill_sig,
                    dirty: victim.dirty,
                    swap_slot: Some(slot),
                });
                debug_assert_eq!(accepted, EnqueueResult::Accepted, "queue room was pre-checked");
                self.inflight_to_stt.insert(victim.line_addr);
                self.counters.migrations_sram_to_stt += 1;
            }
            VictimPlan::DirectSttWrite => {
                let stt = self.stt.as_mut().unwrap();
                let evicted = stt.insert(victim.line_addr, victim.fill_sig, victim.dirty);
                let done = now + self.stt_write_cyc;
                stt.occupy_until(done);
                self.port_blocked_until = self.port_blocked_until.max(done);
                self.counters.stt_writes += 1;
                self.counters.migrations_sram_to_stt += 1;
                if let Some(second) = evicted {
                    self.residency_end(second.line_addr);
                    if second.dirty {
                        self.writeback(second.line_addr, now);
                    }
                }
            }
        }
    }

    fn writeback(&mut self, line_addr: u32, at: u64) {
        self.counters.writebacks += 1;
        self.outbox
            .downstream
            .push(DownstreamRequest::Writeback { line_addr, issue_at: at });
    }

    fn fill_destination(&self, predicted: Option<Classification>) -> Dest {
        if self.sram.is_none() {
            return Dest::Stt;
        }
        if self.features.predictor && predicted == Some(Classification::Worm) {
            return Dest::Stt;
        }
        Dest::Sram
    }

    /// Step 4: both banks missed.
    fn miss_path(
        &mut self,
        record: &TraceRecord,
        id: RequestId,
        issue_index: u64,
        now: u64,
        search_cycles: u64,
    ) -> HandleOutcome {
        let line = record.line_addr();
        let predicted = self.classify(record.pc);

        if self.features.deadwrite_bypass && predicted == Some(Classification::Woro) {
            self.counters.misses += 1;
            self.counters.bypasses += 1;
            let issue_at = now + 1 + search_cycles;
            match record.op {
                Op::Read => self.outbox.downstream.push(DownstreamRequest::BypassRead {
                    line_addr: line,
                    waiter: id,
                    issue_at,
                }),
                Op::Write => {
                    self.outbox
                        .downstream
                        .push(DownstreamRequest::Writeback { line_addr: line, issue_at });
                    self.retire(id, now + 1, ServedBy::Downstream);
                }
            }
            return HandleOutcome::Accepted;
        }

        if let Some(entry) = self.mshr.get_mut(&line) {
            entry.waiters.push(id);
            if record.op == Op::Write {
                entry.write_count += 1;
            }
            self.counters.misses += 1;
            self.counters.mshr_merges += 1;
            return HandleOutcome::Accepted;
        }
        if self.mshr.len() >= self.mshr_capacity {
            return HandleOutcome::Blocked(StallCause::MshrFull);
        }
        let destination = self.fill_destination(predicted);
        self.mshr.insert(
            line,
            MshrEntry {
                destination,
                waiters: vec![id],
                write_count: u64::from(record.op == Op::Write),
                fill_sig: self.signature(record.pc),
                predicted,
                issue_index,
            },
        );
        self.counters.misses += 1;
        self.counters.mshr_allocations += 1;
        self.outbox.downstream.push(DownstreamRequest::Fill {
            line_addr: line,
            issue_at: now + 1 + search_cycles,
        });
        HandleOutcome::Accepted
    }

    /// Downstream fill response: retire the MSHR entry and stage the fill
    /// for its destination bank.
    pub fn complete_fill(&mut self, line_addr: u32, _at: u64) {
        let Some(entry) = self.mshr.remove(&line_addr) else {
            debug_assert!(false, "orphan fill for line {line_addr:#x}");
            return;
        };
        self.pending_fills.push_back(PendingFill {
            line_addr,
            dest: entry.destination,
            fill_sig: entry.fill_sig,
            dirty: entry.write_count > 0,
            waiters: entry.waiters,
            predicted: entry.predicted,
            issue_index: entry.issue_index,
            writes_at_fill: entry.write_count.max(1),
        });
    }

    /// Apply staged fills and re-issued misses in FIFO order. Returns the
    /// blocking cause if the head cannot make progress this cycle.
    pub fn process_pending(&mut self, now: u64) -> Option<StallCause> {
        while let Some(head) = self.pending_fills.front() {
            let (line, dest, fill_sig, dirty) =
                (head.line_addr, head.dest, head.fill_sig, head.dirty);
            let waiters_done_at;
            match dest {
                Dest::Sram => {
                    if let Err(cause) = self.place_into_sram(line, fill_sig, dirty, now) {
                        return Some(cause);
                    }
                    self.counters.sram_writes += 1;
                    waiters_done_at = now + self.sram_write_cyc;
                }
                Dest::Stt => {
                    let stt = self.stt.as_mut().expect("STT fill without an STT bank");
                    if stt.has_queue() {
                        if stt.queue_full() {
                            return Some(StallCause::TagQueueFull);
                        }
                        let accepted = stt.enqueue(TagEntry::Fill {
                            line_addr: line,
                            fill_sig,
                            dirty,
                            swap_slot: None,
                        });
                        debug_assert_eq!(accepted, EnqueueResult::Accepted);
                        self.inflight_to_stt.insert(line);
                    } else {
                        if stt.busy(now) {
                            return Some(StallCause::SttWrite);
                        }
                        let evicted = stt.insert(line, fill_sig, dirty);
                        let done = now + self.stt_write_cyc;
                        stt.occupy_until(done);
                        self.port_blocked_until = self.port_blocked_until.max(done);
                        self.counters.stt_writes += 1;
                        if let Some(victim) = evicted {
                            self.residency_end(victim.line_addr);
                            if victim.dirty {
                                self.writeback(victim.line_addr, now);
                            }
                        }
                    }
                    waiters_done_at = now + self.stt_write_cyc;
                }
            }
            let fill = self.pending_fills.pop_front().unwrap();
            self.residency_start(line, fill.predicted, fill.writes_at_fill, fill.issue_index);
            for w in fill.waiters {
                self.retire(w, waiters_done_at, ServedBy::Downstream);
            }
        }
        while let Some(head) = self.deferred_misses.front() {
            let line = head.line_addr;
            if self.mshr.len() >= self.mshr_capacity && !self.mshr.contains_key(&line) {
                return Some(StallCause::MshrFull);
            }
            let miss = self.deferred_misses.pop_front().unwrap();
            let record = TraceRecord {
                cycle: 0,
                warp_id: 0,
                pc: miss.pc,
                addr: miss.line_addr << crate::geometry::OFFSET_BITS,
                op: miss.op,
            };
            let outcome = self.reissue_miss(&record, miss.waiter, miss.issue_index, now);
            debug_assert_eq!(outcome, HandleOutcome::Accepted);
        }
        None
    }

    /// Miss path for queued reads whose line slipped out while waiting:
    /// same routing as a fresh miss, minus the bypass check (only queued
    /// presets defer, and they never bypass).
    fn reissue_miss(
        &mut self,
        record: &TraceRecord,
        id: RequestId,
        issue_index: u64,
        now: u64,
    ) -> HandleOutcome {
        let line = record.line_addr();
        if let Some(entry) = self.mshr.get_mut(&line) {
            entry.waiters.push(id);
            if record.op == Op::Write {
                entry.write_count += 1;
            }
            self.counters.mshr_merges += 1;
            self.counters.misses += 1;
            return HandleOutcome::Accepted;
        }
        let predicted = self.classify(record.pc);
        let destination = self.fill_destination(predicted);
        self.mshr.insert(
            line,
            MshrEntry {
                destination,
                waiters: vec![id],
                write_count: u64::from(record.op == Op::Write),
                fill_sig: self.signature(record.pc),
                predicted,
                issue_index,
            },
        );
        self.counters.misses += 1;
        self.counters.mshr_allocations += 1;
        self.outbox
            .downstream
            .push(DownstreamRequest::Fill { line_addr: line, issue_at: now });
        HandleOutcome::Accepted
    }

    /// Advance queued STT work one cycle and absorb its completions.
    pub fn tick_stt(&mut self, now: u64) {
        let Some(stt) = &mut self.stt else {
            return;
        };
        let events = stt.tick(now);
        self.apply_stt_events(events);
    }

    fn apply_stt_events(&mut self, events: Vec<CompletionEvent>) {
        for event in events {
            match event {
                CompletionEvent::FillDone { line_addr, swap_slot, evicted, at } => {
                    if let Some(slot) = swap_slot {
                        self.swap.free(slot);
                    }
                    self.inflight_to_stt.remove(&line_addr);
                    self.counters.stt_writes += 1;
                    if let Some(victim) = evicted {
                        self.residency_end(victim.line_addr);
                        if victim.dirty {
                            self.writeback(victim.line_addr, at);
                        }
                    }
                }
                CompletionEvent::ReadDone { waiter, line_addr, hit, at, .. } => {
                    let meta = self
                        .queued_meta
                        .remove(&waiter)
                        .expect("queued read without metadata");
                    if hit {
                        self.counters.stt_hits += 1;
                        self.counters.stt_reads += 1;
                        self.retire(waiter, at, ServedBy::Stt);
                    } else {
                        // The line fell out of the FIFO while queued.
                        self.deferred_misses.push_back(DeferredMiss {
                            waiter,
                            line_addr,
                            op: meta.op,
                            pc: meta.pc,
                            issue_index: meta.issue_index,
                        });
                    }
                }
                CompletionEvent::WriteDone { waiter, line_addr, hit, at } => {
                    let meta = self
                        .queued_meta
                        .remove(&waiter)
                        .expect("queued write without metadata");
                    if hit {
                        self.counters.stt_hits += 1;
                        self.counters.stt_writes += 1;
                        self.residency_write(line_addr);
                        self.retire(waiter, at, ServedBy::Stt);
                    } else {
                        self.deferred_misses.push_back(DeferredMiss {
                            waiter,
                            line_addr,
                            op: meta.op,
                            pc: meta.pc,
                            issue_index: meta.issue_index,
                        });
                    }
                }
            }
        }
    }

    pub fn quiescent(&self) -> bool {
        self.pending_fills.is_empty()
            && self.deferred_misses.is_empty()
            && self.mshr.is_empty()
            && self.stt.as_ref().map_or(true, |s| s.queue_empty())
    }

    /// True iff no line address is valid in more than one of SRAM, STT-MRAM
    /// and the swap buffer.
    pub fn check_single_copy(&self) -> bool {
        let mut seen = HashSet::new();
        if let Some(sram) = &self.sram {
            for line in sram.valid_lines() {
                if !seen.insert(line) {
                    return false;
                }
            }
        }
        if let Some(stt) = &self.stt {
            for line in stt.valid_lines() {
                if !seen.insert(line) {
                    return false;
                }
            }
        }
        for (_, entry) in self.swap.occupied() {
            if !seen.insert(entry.line_addr) {
                return false;
            }
        }
        true
    }

    /// Swap/tag-queue pairing: occupied slots and pending F entries match
    /// one to one.
    pub fn check_swap_pairing(&self) -> bool {
        let mut occupied: Vec<usize> = self.swap.occupied().map(|(i, _)| i).collect();
        occupied.sort_unstable();
        let mut referenced = match &self.stt {
            Some(stt) => stt.pending_fill_swap_slots(),
            None => Vec::new(),
        };
        referenced.sort_unstable();
        occupied == referenced
    }

    pub fn swap_holds(&self, line_addr: u32) -> bool {
        self.swap.holds_line(line_addr)
    }

    /// Fold bank statistics into the final counters and close remaining
    /// residencies.
    pub fn finalize(&mut self) {
        let lines: Vec<u32> = self.residencies.keys().copied().collect();
        for line in lines {
            self.residency_end(line);
        }
        if let Some(stt) = &self.stt {
            let stats = stt.stats;
            self.counters.searches = stats.searches;
            self.counters.search_cycles_total = stats.search_cycles_total;
            self.counters.cbf_tests = stats.cbf_tests;
            self.counters.cbf_positives = stats.cbf_positives;
            self.counters.cbf_false_positives = stats.cbf_false_positives;
            self.counters.stalls.tag_search =
                stats.search_cycles_total.saturating_sub(stats.searches);
        }
    }

    pub fn fill_log(&self) -> &[FillOutcome] {
        &self.fill_log
    }

    pub fn predictor_dump_csv(&self) -> Option<String> {
        self.predictor.as_ref().map(|p| p.dump_csv())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use crate::geometry::PresetName;

    fn controller(name: PresetName) -> Controller {
        Controller::new(&SimConfig::for_preset(name))
    }

    fn read(pc: u32, line: u32) -> TraceRecord {
        TraceRecord { cycle: 0, warp_id: 1, pc, addr: line << 7, op: Op::Read }
    }

    fn write(pc: u32, line: u32) -> TraceRecord {
        TraceRecord { cycle: 0, warp_id: 1, pc, addr: line << 7, op: Op::Write }
    }

    /// Drive a record to acceptance, ticking cycles as needed.
    fn drive(ctl: &mut Controller, record: &TraceRecord, id: RequestId, mut now: u64) -> u64 {
        let mut scratch = IssueScratch::default();
        loop {
            ctl.tick_stt(now);
            ctl.process_pending(now);
            match ctl.handle(record, id, id, now, &mut scratch) {
                HandleOutcome::Accepted => return now,
                HandleOutcome::Blocked(_) => now += 1,
            }
        }
    }

    /// Apply downstream fills instantly for controller-level tests.
    fn flush_downstream(ctl: &mut Controller, now: u64) {
        let requests = std::mem::take(&mut ctl.outbox.downstream);
        for req in requests {
            if let DownstreamRequest::Fill { line_addr, .. } = req {
                ctl.complete_fill(line_addr, now);
            }
        }
        ctl.process_pending(now);
    }

    #[test]
    fn sram_hit_serves_in_one_cycle_without_stt_activity() {
        let mut ctl = controller(PresetName::DyFuse);
        ctl.handle(&read(0x400, 5), 0, 0, 0, &mut IssueScratch::default());
        flush_downstream(&mut ctl, 100);
        // Line 5 now lives in SRAM (neutral prediction routes to SRAM).
        let searches_before = ctl.stt.as_ref().unwrap().stats.searches;
        ctl.outbox.retirements.clear();
        let out = ctl.handle(&read(0x400, 5), 1, 1, 200, &mut IssueScratch::default());
        assert_eq!(out, HandleOutcome::Accepted);
        let r = ctl.outbox.retirements.last().unwrap();
        assert_eq!((r.at, r.served_by), (201, ServedBy::Sram));
        assert_eq!(ctl.stt.as_ref().unwrap().stats.searches, searches_before, "SRAM hit must not search STT");
        assert_eq!(ctl.counters.sram_hits, 1);
    }

    #[test]
    fn write_hit_on_stt_migrates_without_flush_when_queue_empty() {
        let mut ctl = controller(PresetName::FaFuse);
        // Park a line in STT directly (as if it arrived via eviction).
        ctl.stt.as_mut().unwrap().insert(9, 3, false);
        let out = ctl.handle(&write(0x800, 9), 0, 0, 10, &mut IssueScratch::default());
        assert_eq!(out, HandleOutcome::Accepted);
        assert_eq!(ctl.counters.tag_queue_flushes, 0, "empty queue is not a flush");
        assert_eq!(ctl.counters.migrations_stt_to_sram, 1);
        assert!(!ctl.stt.as_ref().unwrap().resident(9));
        assert!(ctl.sram.as_ref().unwrap().resident(9));
        assert!(ctl.sram.as_ref().unwrap().line_meta(9).unwrap().0, "write makes the migrated line dirty");
        assert!(ctl.check_single_copy());
    }

    #[test]
    fn worm_predicted_miss_routes_fill_to_stt() {
        let mut cfg = SimConfig::for_preset(PresetName::DyFuse);
        cfg.verify_single_copy = true;
        let mut ctl = Controller::new(&cfg);
        // Train signature of pc 0x400 toward WORM: insert then read-hit in
        // the sampler from a sampled warp (warp 0).
        let pc = 0x400;
        let train_w = TraceRecord { cycle: 0, warp_id: 0, pc, addr: 77 << 7, op: Op::Write };
        let train_r = TraceRecord { cycle: 0, warp_id: 0, pc, addr: 77 << 7, op: Op::Read };
        let mut scratch = IssueScratch::default();
        ctl.handle(&train_w, 100, 0, 0, &mut scratch);
        flush_downstream(&mut ctl, 1);
        for i in 0..8 {
            let mut s = IssueScratch::default();
            ctl.handle(&train_r, 101 + i, 0, 2 + i, &mut s);
        }
        assert_eq!(ctl.classify(pc), Some(Classification::Worm));

        // A cold miss by the same pc must carry destination STT.
        let out = ctl.handle(&read(pc, 500), 0, 9, 50, &mut IssueScratch::default());
        assert_eq!(out, HandleOutcome::Accepted);
        assert_eq!(ctl.mshr[&500].destination, Dest::Stt);
        ctl.complete_fill(500, 100);
        ctl.process_pending(100);
        // The fill lands through the tag queue.
        assert!(ctl.inflight_to_stt.contains(&500));
        for now in 100..=106 {
            ctl.tick_stt(now);
        }
        assert!(ctl.stt.as_ref().unwrap().resident(500));
        assert!(ctl.check_single_copy());
    }

    #[test]
    fn mshr_merges_complete_together() {
        let mut ctl = controller(PresetName::L1Sram);
        ctl.handle(&read(0x10, 42), 0, 0, 0, &mut IssueScratch::default());
        ctl.handle(&read(0x14, 42), 1, 1, 1, &mut IssueScratch::default());
        ctl.handle(&read(0x18, 42), 2, 2, 2, &mut IssueScratch::default());
        assert_eq!(ctl.counters.mshr_allocations, 1);
        assert_eq!(ctl.counters.mshr_merges, 2);
        let fills = ctl
            .outbox
            .downstream
            .iter()
            .filter(|r| matches!(r, DownstreamRequest::Fill { .. }))
            .count();
        assert_eq!(fills, 1, "merged misses issue exactly one downstream request");
        ctl.outbox.retirements.clear();
        ctl.complete_fill(42, 300);
        ctl.process_pending(300);
        let ats: Vec<u64> = ctl.outbox.retirements.iter().map(|r| r.at).collect();
        assert_eq!(ats, vec![301, 301, 301]);
    }

    #[test]
    #[cfg(debug_assertions)]
    #[should_panic(expected = "orphan fill")]
    fn orphan_fill_asserts() {
        let mut ctl = controller(PresetName::L1Sram);
        ctl.complete_fill(1234, 0);
    }

    #[test]
    fn single_copy_detector_sees_corruption() {
        let mut ctl = controller(PresetName::Hybrid);
        assert!(ctl.check_single_copy());
        ctl.sram.as_mut().unwrap().fill(6, 0, false);
        ctl.stt.as_mut().unwrap().insert(6, 0, false);
        assert!(!ctl.check_single_copy());
    }

    #[test]
    fn swap_pairing_invariant_holds_through_eviction() {
        let mut ctl = controller(PresetName::BaseFuse);
        // Fill one SRAM set (64 sets x 2 ways) and overflow it.
        let lines = [0u32, 64, 128];
        for (i, line) in lines.iter().enumerate() {
            let rec = read(0x40, *line);
            let at = drive(&mut ctl, &rec, i as u64, i as u64 * 10);
            flush_downstream(&mut ctl, at + 1);
            assert!(ctl.check_swap_pairing());
        }
        // Two fills fit; the third evicts line 0 into the swap buffer.
        assert!(ctl.swap_holds(0));
        assert!(ctl.check_single_copy());
        assert_eq!(ctl.counters.migrations_sram_to_stt, 1);
        // Draining the queue lands it in STT and frees the slot.
        let mut now = 40;
        while !ctl.stt.as_ref().unwrap().queue_empty() {
            ctl.tick_stt(now);
            now += 1;
        }
        assert!(!ctl.swap_holds(0));
        assert!(ctl.stt.as_ref().unwrap().resident(0));
        assert!(ctl.check_swap_pairing());
        assert!(ctl.check_single_copy());
    }

    #[test]
    fn hybrid_eviction_blocks_the_port_for_the_write() {
        let mut ctl = controller(PresetName::Hybrid);
        let lines = [0u32, 64, 128];
        let mut now = 0;
        for (i, line) in lines.iter().enumerate() {
            let rec = read(0x40, *line);
            now = drive(&mut ctl, &rec, i as u64, now) + 1;
            flush_downstream(&mut ctl, now);
            now += 1;
        }
        // The third fill evicted into STT directly: port blocked 5 cycles.
        assert_eq!(ctl.counters.migrations_sram_to_stt, 1);
        assert!(ctl.port_blocked_until > 0);
        let blocked_at = ctl.port_blocked_until - 1;
        let out = ctl.handle(&read(0x44, 999), 50, 3, blocked_at, &mut IssueScratch::default());
        assert_eq!(out, HandleOutcome::Blocked(StallCause::SttWrite));
    }

    #[test]
    fn base_fuse_sram_hit_unaffected_by_busy_stt() {
        let mut ctl = controller(PresetName::BaseFuse);
        // Put a line in SRAM.
        drive(&mut ctl, &read(0x40, 7), 0, 0);
        flush_downstream(&mut ctl, 5);
        // Make the STT bank busy with a direct occupation.
        ctl.stt.as_mut().unwrap().occupy_until(1000);
        ctl.outbox.retirements.clear();
        let out = ctl.handle(&read(0x40, 7), 1, 1, 20, &mut IssueScratch::default());
        assert_eq!(out, HandleOutcome::Accepted);
        assert_eq!(ctl.outbox.retirements[0].at, 21, "SRAM hit latency stays 1");
    }

    #[test]
    fn by_nvm_bypasses_woro_predicted_lines() {
        // Lowering the WORO threshold below the initial counter value makes
        // every untrained signature classify WORO, exercising the bypass
        // route directly; training toward WORO is covered in predictor
        // tests.
        let mut cfg = SimConfig::for_preset(PresetName::ByNvm);
        cfg.predictor.unused_threshold = 7;
        let mut ctl = Controller::new(&cfg);
        let pc = 0x500;
        assert_eq!(ctl.classify(pc), Some(Classification::Woro));

        let out = ctl.handle(&read(pc, 0x4000), 900, 50, 5000, &mut IssueScratch::default());
        assert_eq!(out, HandleOutcome::Accepted);
        assert_eq!(ctl.counters.bypasses, 1);
        assert!(matches!(
            ctl.outbox.downstream.last(),
            Some(DownstreamRequest::BypassRead { line_addr: 0x4000, .. })
        ));
        assert!(!ctl.mshr.contains_key(&0x4000), "bypass allocates no MSHR entry");

        // Bypassed writes go downstream as write traffic and retire at once.
        ctl.outbox.retirements.clear();
        let out = ctl.handle(&write(pc, 0x4001), 901, 51, 6000, &mut IssueScratch::default());
        assert_eq!(out, HandleOutcome::Accepted);
        assert_eq!(ctl.counters.bypasses, 2);
        assert_eq!(ctl.outbox.retirements[0].at, 6001);
        assert!(matches!(
            ctl.outbox.downstream.last(),
            Some(DownstreamRequest::Writeback { line_addr: 0x4001, .. })
        ));
    }
}
