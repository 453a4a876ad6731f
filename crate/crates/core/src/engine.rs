//! Cycle loop tying trace issue, the controller, the banks and the
//! downstream model together.
//!
//! Latency accounting per request: one probe cycle, plus tag-search cycles
//! on the STT side (approximate mode only), plus the downstream round trip
//! and the destination bank's fill cycles on a miss. Requests issue in
//! order, one per cycle by default, and retry while structurally blocked;
//! every blocked cycle is charged to a stall cause. IPC is not modeled; the
//! performance proxies are AMAT and total cycles.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::config::SimConfig;
use crate::controller::{
    Controller, DownstreamRequest, HandleOutcome, IssueScratch, ServedBy,
};
use crate::downstream::Downstream;
use crate::metrics::{score_predictions, SimReport};
use crate::trace::TraceRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequestLogEntry {
    pub id: u64,
    pub issue_cycle: u64,
    pub completion_cycle: u64,
    pub served_by: ServedBy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    FillArrives { line_addr: u32 },
    Retire { id: u64, served_by: u8 },
}

const SERVED_SRAM: u8 = 0;
const SERVED_STT: u8 = 1;
const SERVED_DOWNSTREAM: u8 = 2;

fn served_code(s: ServedBy) -> u8 {
    match s {
        ServedBy::Sram => SERVED_SRAM,
        ServedBy::Stt => SERVED_STT,
        ServedBy::Downstream => SERVED_DOWNSTREAM,
    }
}

fn served_from(code: u8) -> ServedBy {
    match code {
        SERVED_SRAM => ServedBy::Sram,
        SERVED_STT => ServedBy::Stt,
        _ => ServedBy::Downstream,
    }
}

/// Everything a run can produce beyond the report itself.
#[derive(Debug)]
pub struct RunOutput {
    pub report: SimReport,
    pub request_log: Option<Vec<RequestLogEntry>>,
    pub predictor_csv: Option<String>,
}

pub fn run(records: &[TraceRecord], config: &SimConfig) -> SimReport {
    run_full(records, config).report
}

pub fn run_with_log(
    records: &[TraceRecord],
    config: &SimConfig,
) -> (SimReport, Option<Vec<RequestLogEntry>>) {
    let out = run_full(records, config);
    (out.report, out.request_log)
}

pub fn run_full(records: &[TraceRecord], config: &SimConfig) -> RunOutput {
    let mut controller = Controller::new(config);
    let mut downstream = Downstream::new(config.downstream.clone());
    let mut heap: BinaryHeap<Reverse<(u64, u64, Event)>> = BinaryHeap::new();
    let mut seq: u64 = 0;
    let mut issue_cycle: Vec<u64> = vec![u64::MAX; records.len()];
    let mut log = config.log_requests.then(Vec::new);

    let mut cursor = 0usize;
    let mut stalled: Option<IssueScratch> = None;
    let mut outstanding: u64 = 0;
    let mut max_completion: u64 = 0;
    let mut now: u64 = 0;

    // Everything the controller produced this step goes to the event heap
    // or straight into the downstream model.
    macro_rules! drain_outbox {
        () => {
            for r in controller.outbox.retirements.drain(..) {
                heap.push(Reverse((r.at, seq, Event::Retire { id: r.id, served_by: served_code(r.served_by) })));
                seq += 1;
            }
            for d in controller.outbox.downstream.drain(..) {
                match d {
                    DownstreamRequest::Fill { line_addr, issue_at } => {
                        let done = downstream.request(line_addr, false, issue_at);
                        heap.push(Reverse((done, seq, Event::FillArrives { line_addr })));
                        seq += 1;
                    }
                    DownstreamRequest::Writeback { line_addr, issue_at } => {
                        downstream.request(line_addr, true, issue_at);
                    }
                    DownstreamRequest::BypassRead { line_addr, waiter, issue_at } => {
                        let done = downstream.request(line_addr, false, issue_at);
                        heap.push(Reverse((done, seq, Event::Retire { id: waiter, served_by: SERVED_DOWNSTREAM })));
                        seq += 1;
                    }
                }
            }
        };
    }

    loop {
        controller.tick_stt(now);
        drain_outbox!();

        while let Some(Reverse((at, _, event))) = heap.peek().copied() {
            if at > now {
                break;
            }
            heap.pop();
            match event {
                Event::FillArrives { line_addr } => controller.complete_fill(line_addr, at),
                Event::Retire { id, served_by } => {
                    let issued = issue_cycle[id as usize];
                    debug_assert_ne!(issued, u64::MAX, "retired request never issued");
                    controller.counters.latency_cycles_total += at - issued;
                    controller.counters.completed += 1;
                    outstanding -= 1;
                    max_completion = max_completion.max(at);
                    if let Some(log) = log.as_mut() {
                        log.push(RequestLogEntry {
                            id,
                            issue_cycle: issued,
                            completion_cycle: at,
                            served_by: served_from(served_by),
                        });
                    }
                }
            }
        }

        let blocked = controller.process_pending(now);
        drain_outbox!();

        if let Some(cause) = blocked {
            // Backpressure from a blocked fill also stalls issue.
            if cursor < records.len() {
                controller.counters.stalls.bump(cause);
            }
        } else {
            for _ in 0..config.issue_width.max(1) {
                if cursor >= records.len() {
                    break;
                }
                let mut scratch = stalled.take().unwrap_or_default();
                if issue_cycle[cursor] == u64::MAX {
                    issue_cycle[cursor] = now;
                }
                let record = &records[cursor];
                match controller.handle(record, cursor as u64, cursor as u64, now, &mut scratch) {
                    HandleOutcome::Accepted => {
                        outstanding += 1;
                        cursor += 1;
                        drain_outbox!();
                    }
                    HandleOutcome::Blocked(cause) => {
                        controller.counters.stalls.bump(cause);
                        stalled = Some(scratch);
                        break;
                    }
                }
            }
        }

        if config.verify_single_copy {
            assert!(controller.check_single_copy(), "single-copy violated at cycle {now}");
            assert!(controller.check_swap_pairing(), "swap/tag-queue pairing violated at cycle {now}");
        }

        let stt_idle = controller
            .stt
            .as_ref()
            .map_or(true, |s| s.queue_empty());
        if cursor >= records.len()
            && outstanding == 0
            && heap.is_empty()
            && stt_idle
            && controller.quiescent()
        {
            break;
        }
        now += 1;
        assert!(
            now < 1_000_000_000,
            "engine wedged: cycle {now}, {outstanding} outstanding, cursor {cursor}/{}",
            records.len()
        );
    }

    controller.finalize();
    let counters = &controller.counters;
    debug_assert_eq!(counters.completed, counters.accesses, "every access must complete");
    debug_assert_eq!(
        counters.sram_hits + counters.stt_hits + counters.misses,
        counters.accesses,
        "hit/miss conservation"
    );
    debug_assert_eq!(
        counters.misses,
        counters.mshr_allocations + counters.mshr_merges + counters.bypasses,
        "miss routing conservation"
    );

    let warmup = records.len() as u64 / 10;
    let tallies = score_predictions(controller.fill_log(), warmup);
    let report = SimReport::build(
        config.preset.name.as_str(),
        config.seed,
        counters,
        tallies,
        downstream.offchip_requests(),
        max_completion,
        &config.preset.timing,
    );
    RunOutput { report, request_log: log, predictor_csv: controller.predictor_dump_csv() }
}
