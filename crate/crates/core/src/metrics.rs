//! Statistics aggregation, energy accounting, predictor scoring and report
//! serialization.

use serde::{Deserialize, Serialize};

use crate::geometry::TimingEnergyParams;
use crate::predictor::Classification;

/// Stall cycles bucketed by what blocked issue.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StallBreakdown {
    /// Issue blocked behind a busy STT-MRAM write or a forced queue drain.
    pub stt_write: u64,
    /// Extra serialized polling cycles beyond the first tag-search cycle.
    pub tag_search: u64,
    pub tag_queue_full: u64,
    pub swap_full: u64,
    pub mshr_full: u64,
}

impl StallBreakdown {
    pub fn total(&self) -> u64 {
        self.stt_write + self.tag_search + self.tag_queue_full + self.swap_full + self.mshr_full
    }
}

/// Reasons issue can be blocked for a cycle; mirrors [`StallBreakdown`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StallCause {
    SttWrite,
    TagQueueFull,
    SwapFull,
    MshrFull,
}

impl StallBreakdown {
    pub fn bump(&mut self, cause: StallCause) {
        match cause {
            StallCause::SttWrite => self.stt_write += 1,
            StallCause::TagQueueFull => self.tag_queue_full += 1,
            StallCause::SwapFull => self.swap_full += 1,
            StallCause::MshrFull => self.mshr_full += 1,
        }
    }
}

/// Raw event tallies accumulated while a simulation runs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawCounters {
    pub accesses: u64,
    pub sram_hits: u64,
    pub stt_hits: u64,
    pub misses: u64,
    pub mshr_allocations: u64,
    pub mshr_merges: u64,
    pub bypasses: u64,
    pub stalls: StallBreakdown,
    pub tag_queue_flushes: u64,
    pub searches: u64,
    pub search_cycles_total: u64,
    pub cbf_tests: u64,
    pub cbf_positives: u64,
    pub cbf_false_positives: u64,
    pub migrations_sram_to_stt: u64,
    pub migrations_stt_to_sram: u64,
    pub writebacks: u64,
    pub sram_reads: u64,
    pub sram_writes: u64,
    pub stt_reads: u64,
    pub stt_writes: u64,
    pub latency_cycles_total: u64,
    pub completed: u64,
}

/// Outcome of one cache residency for predictor scoring: the classification
/// logged when the fill was requested and the number of writes the line saw
/// before leaving the cache (the fill itself counts as the first write).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FillOutcome {
    pub predicted: Classification,
    pub writes_in_residency: u64,
    /// Index of the record that triggered the fill, for warm-up filtering.
    pub issue_index: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorTallies {
    pub true_predictions: u64,
    pub false_predictions: u64,
    pub neutral_predictions: u64,
}

impl PredictorTallies {
    /// Accuracy over classified predictions; neutral ones are tallied apart.
    pub fn accuracy(&self) -> f64 {
        let classified = self.true_predictions + self.false_predictions;
        if classified == 0 {
            0.0
        } else {
            self.true_predictions as f64 / classified as f64
        }
    }
}

/// Score fill predictions: WM is right when the line saw multiple writes
/// before eviction, WORM/WORO when it saw exactly the one fill write.
/// Predictions from the first `warmup_records` issued records are skipped.
pub fn score_predictions(log: &[FillOutcome], warmup_records: u64) -> PredictorTallies {
    let mut tallies = PredictorTallies::default();
    for outcome in log {
        if outcome.issue_index < warmup_records {
            continue;
        }
        match outcome.predicted {
            Classification::Neutral => tallies.neutral_predictions += 1,
            Classification::Wm => {
                if outcome.writes_in_residency >= 2 {
                    tallies.true_predictions += 1;
                } else {
                    tallies.false_predictions += 1;
                }
            }
            Classification::Worm | Classification::Woro => {
                if outcome.writes_in_residency == 1 {
                    tallies.true_predictions += 1;
                } else {
                    tallies.false_predictions += 1;
                }
            }
        }
    }
    tallies
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub sram_dynamic_nj: f64,
    pub stt_dynamic_nj: f64,
    pub leakage_nj: f64,
    pub total_nj: f64,
}

/// Per-access dynamic energy plus leakage over the run time.
pub fn energy(counters: &RawCounters, params: &TimingEnergyParams, total_cycles: u64) -> EnergyBreakdown {
    let sram_dynamic_nj = counters.sram_reads as f64 * params.sram_read_nj
        + counters.sram_writes as f64 * params.sram_write_nj;
    let stt_dynamic_nj = counters.stt_reads as f64 * params.stt_read_nj
        + counters.stt_writes as f64 * params.stt_write_nj;
    let seconds = total_cycles as f64 / params.clock_hz;
    let leakage_nj = (params.sram_leak_mw + params.stt_leak_mw) * 1.0e-3 * seconds * 1.0e9;
    EnergyBreakdown {
        sram_dynamic_nj,
        stt_dynamic_nj,
        leakage_nj,
        total_nj: sram_dynamic_nj + stt_dynamic_nj + leakage_nj,
    }
}

/// Everything one simulation run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub preset: String,
    pub seed: u64,
    pub accesses: u64,
    pub sram_hits: u64,
    pub stt_hits: u64,
    pub misses: u64,
    pub miss_rate: f64,
    pub stall_cycles: StallBreakdown,
    pub stall_cycles_total: u64,
    pub tag_queue_flushes: u64,
    pub flush_fraction: f64,
    pub cbf_tests: u64,
    pub cbf_false_positives: u64,
    pub cbf_fp_rate: f64,
    pub searches: u64,
    pub mean_search_cycles: f64,
    pub predictor: PredictorTallies,
    pub predictor_accuracy: f64,
    pub migrations_sram_to_stt: u64,
    pub migrations_stt_to_sram: u64,
    pub mshr_allocations: u64,
    pub mshr_merges: u64,
    pub bypasses: u64,
    pub writebacks: u64,
    pub offchip_requests: u64,
    pub amat_cycles: f64,
    pub total_cycles: u64,
    pub energy_nj: EnergyBreakdown,
}

impl SimReport {
    pub fn build(
        preset: &str,
        seed: u64,
        counters: &RawCounters,
        tallies: PredictorTallies,
        offchip_requests: u64,
        total_cycles: u64,
        params: &TimingEnergyParams,
    ) -> SimReport {
        let div = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        SimReport {
            preset: preset.to_string(),
            seed,
            accesses: counters.accesses,
            sram_hits: counters.sram_hits,
            stt_hits: counters.stt_hits,
            misses: counters.misses,
            miss_rate: div(counters.misses, counters.accesses),
            stall_cycles: counters.stalls,
            stall_cycles_total: counters.stalls.total(),
            tag_queue_flushes: counters.tag_queue_flushes,
            flush_fraction: div(counters.tag_queue_flushes, counters.accesses),
            cbf_tests: counters.cbf_tests,
            cbf_false_positives: counters.cbf_false_positives,
            cbf_fp_rate: div(counters.cbf_false_positives, counters.cbf_tests),
            searches: counters.searches,
            mean_search_cycles: if counters.searches == 0 {
                0.0
            } else {
                counters.search_cycles_total as f64 / counters.searches as f64
            },
            predictor: tallies,
            predictor_accuracy: tallies.accuracy(),
            migrations_sram_to_stt: counters.migrations_sram_to_stt,
            migrations_stt_to_sram: counters.migrations_stt_to_sram,
            mshr_allocations: counters.mshr_allocations,
            mshr_merges: counters.mshr_merges,
            bypasses: counters.bypasses,
            writebacks: counters.writebacks,
            offchip_requests,
            amat_cycles: div(counters.latency_cycles_total, counters.accesses),
            total_cycles,
            energy_nj: energy(counters, params, total_cycles),
        }
    }

    pub const CSV_HEADER: &'static str = "preset,seed,accesses,sram_hits,stt_hits,misses,miss_rate,\
stall_stt_write,stall_tag_search,stall_tag_queue_full,stall_swap_full,stall_mshr_full,stall_total,\
tag_queue_flushes,flush_fraction,cbf_tests,cbf_false_positives,cbf_fp_rate,searches,mean_search_cycles,\
pred_true,pred_false,pred_neutral,pred_accuracy,migr_sram_to_stt,migr_stt_to_sram,\
mshr_allocations,mshr_merges,bypasses,writebacks,offchip_requests,amat_cycles,total_cycles,\
energy_sram_nj,energy_stt_nj,energy_leakage_nj,energy_total_nj";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.preset,
            self.seed,
            self.accesses,
            self.sram_hits,
            self.stt_hits,
            self.misses,
            self.miss_rate,
            self.stall_cycles.stt_write,
            self.stall_cycles.tag_search,
            self.stall_cycles.tag_queue_full,
            self.stall_cycles.swap_full,
            self.stall_cycles.mshr_full,
            self.stall_cycles_total,
            self.tag_queue_flushes,
            self.flush_fraction,
            self.cbf_tests,
            self.cbf_false_positives,
            self.cbf_fp_rate,
            self.searches,
            self.mean_search_cycles,
            self.predictor.true_predictions,
            self.predictor.false_predictions,
            self.predictor.neutral_predictions,
            self.predictor_accuracy,
            self.migrations_sram_to_stt,
            self.migrations_stt_to_sram,
            self.mshr_allocations,
            self.mshr_merges,
            self.bypasses,
            self.writebacks,
            self.offchip_requests,
            self.amat_cycles,
            self.total_cycles,
            self.energy_nj.sram_dynamic_nj,
            self.energy_nj.stt_dynamic_nj,
            self.energy_nj.leakage_nj,
            self.energy_nj.total_nj,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown format `{other}` (expected csv or json)")),
        }
    }
}

/// Serialize one or more reports with a stable field order.
pub fn serialize(reports: &[SimReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_string_pretty(reports).expect("report serialization");
            out.push('\n');
            out
        }
        ReportFormat::Csv => {
            let mut out = String::from(SimReport::CSV_HEADER);
            out.push('\n');
            for report in reports {
                out.push_str(&report.csv_row());
                out.push('\n');
            }
            out
        }
    }
}
