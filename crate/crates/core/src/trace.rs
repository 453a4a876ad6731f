//! Memory-reference traces: parsing, synthetic generation and read-level
//! ground-truth labeling.

use std::collections::HashMap;
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry;

/// Warps per SM; warp ids in a trace are expected to stay below this.
pub const WARPS_PER_SM: u32 = 48;

/// Writes-per-line threshold factor separating read-intensive from
/// write-multiple lines: `reads >= factor * writes` with at least two writes.
pub const READ_INTENSIVE_FACTOR: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Read,
    Write,
}

/// One memory reference. `cycle` is an issue-order hint; the engine issues
/// records in file order on its own clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub cycle: u64,
    pub warp_id: u32,
    pub pc: u32,
    pub addr: u32,
    pub op: Op,
}

impl TraceRecord {
    pub fn line_addr(&self) -> u32 {
        geometry::line_addr(self.addr)
    }
}

/// Read-level class of one 128-byte line over a whole trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReadLevelLabel {
    /// Multiple writes, few reads.
    Wm,
    /// At least two writes but read-dominated.
    ReadIntensive,
    /// Written once, read at least once.
    Worm,
    /// Touched exactly once.
    Woro,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("malformed trace line {0}")]
    MalformedLine(usize),
    #[error("invalid mix: {0}")]
    InvalidMix(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parse a text trace: one `cycle,warp_id,pc_hex,addr_hex,R|W` record per
/// line, `#` comments and blank lines skipped.
pub fn parse_trace<R: BufRead>(stream: R) -> Result<Vec<TraceRecord>, TraceError> {
    let mut records = Vec::new();
    for (idx, line) in stream.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        records.push(parse_record(body).ok_or(TraceError::MalformedLine(line_no))?);
    }
    Ok(records)
}

fn parse_record(body: &str) -> Option<TraceRecord> {
    let mut fields = body.split(',');
    let cycle = fields.next()?.trim().parse::<u64>().ok()?;
    let warp_id = fields.next()?.trim().parse::<u32>().ok()?;
    let pc = parse_hex(fields.next()?.trim())?;
    let addr = parse_hex(fields.next()?.trim())?;
    let op = match fields.next()?.trim() {
        "R" => Op::Read,
        "W" => Op::Write,
        _ => return None,
    };
    if fields.next().is_some() {
        return None;
    }
    Some(TraceRecord { cycle, warp_id, pc, addr, op })
}

fn parse_hex(s: &str) -> Option<u32> {
    let digits = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).unwrap_or(s);
    u32::from_str_radix(digits, 16).ok()
}

/// Render records in the text format accepted by [`parse_trace`].
pub fn format_trace(records: &[TraceRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 24);
    for r in records {
        let op = match r.op {
            Op::Read => 'R',
            Op::Write => 'W',
        };
        out.push_str(&format!("{},{},0x{:x},0x{:x},{}\n", r.cycle, r.warp_id, r.pc, r.addr, op));
    }
    out
}

/// Ground-truth read-level label per line address.
///
/// A pure function of each line's own access subsequence: one write and no
/// reads is WORO, one write with reads is WORM, repeated writes are
/// read-intensive when reads dominate by [`READ_INTENSIVE_FACTOR`] and WM
/// otherwise. Lines that are only ever read are treated as if their fill
/// write happened before the trace started.
pub fn label_trace(records: &[TraceRecord]) -> HashMap<u32, ReadLevelLabel> {
    label_trace_with_factor(records, READ_INTENSIVE_FACTOR)
}

pub fn label_trace_with_factor(
    records: &[TraceRecord],
    factor: u64,
) -> HashMap<u32, ReadLevelLabel> {
    let mut counts: HashMap<u32, (u64, u64)> = HashMap::new();
    for r in records {
        let entry = counts.entry(r.line_addr()).or_insert((0, 0));
        match r.op {
            Op::Write => entry.0 += 1,
            Op::Read => entry.1 += 1,
        }
    }
    counts
        .into_iter()
        .map(|(line, (writes, reads))| {
            let label = match (writes, reads) {
                (0, 1) | (1, 0) => ReadLevelLabel::Woro,
                (0, _) | (1, _) => ReadLevelLabel::Worm,
                (w, r) if r >= w * factor => ReadLevelLabel::ReadIntensive,
                _ => ReadLevelLabel::Wm,
            };
            (line, label)
        })
        .collect()
}

/// Fraction of labeled lines in each class: (wm, read_intensive, worm, woro).
pub fn label_fractions(labels: &HashMap<u32, ReadLevelLabel>) -> (f64, f64, f64, f64) {
    if labels.is_empty() {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let mut n = [0u64; 4];
    for label in labels.values() {
        let i = match label {
            ReadLevelLabel::Wm => 0,
            ReadLevelLabel::ReadIntensive => 1,
            ReadLevelLabel::Worm => 2,
            ReadLevelLabel::Woro => 3,
        };
        n[i] += 1;
    }
    let total = labels.len() as f64;
    (n[0] as f64 / total, n[1] as f64 / total, n[2] as f64 / total, n[3] as f64 / total)
}

/// Recipe for a synthetic trace with a controlled read-level mix.
///
/// Every line in the pool belongs to exactly one class and is touched by a
/// single PC drawn from that class's PC group, so PC-indexed predictors see
/// stationary per-PC behavior. `window` bounds how many lines are interleaved
/// concurrently, which sets the active working-set size.
#[derive(Debug, Clone, PartialEq)]
pub struct MixSpec {
    pub wm: f64,
    pub read_intensive: f64,
    pub worm: f64,
    pub woro: f64,
    /// Number of distinct 128-byte lines.
    pub pool: usize,
    /// Target reference count; active lines finish after it is reached.
    pub refs: usize,
    /// Concurrently active lines while emitting.
    pub window: usize,
    /// PCs assigned to each class.
    pub pcs_per_class: usize,
}

impl Default for MixSpec {
    fn default() -> Self {
        MixSpec {
            wm: 0.05,
            read_intensive: 0.05,
            worm: 0.80,
            woro: 0.10,
            pool: 2000,
            refs: 20_000,
            window: 256,
            pcs_per_class: 4,
        }
    }
}

impl MixSpec {
    pub fn validate(&self) -> Result<(), TraceError> {
        let fracs = [self.wm, self.read_intensive, self.worm, self.woro];
        if fracs.iter().any(|f| *f < 0.0) {
            return Err(TraceError::InvalidMix("negative fraction".into()));
        }
        let sum: f64 = fracs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(TraceError::InvalidMix(format!("fractions sum to {sum}, expected 1")));
        }
        if self.pool == 0 || self.refs == 0 {
            return Err(TraceError::InvalidMix("pool and refs must be positive".into()));
        }
        if self.window == 0 || self.pcs_per_class == 0 {
            return Err(TraceError::InvalidMix("window and pcs_per_class must be positive".into()));
        }
        Ok(())
    }

    /// Parse `key=value` pairs separated by commas or newlines, e.g.
    /// `wm=0.2,worm=0.8,pool=1000,refs=10000`.
    pub fn parse(text: &str) -> Result<MixSpec, TraceError> {
        let mut spec = MixSpec { wm: 0.0, read_intensive: 0.0, worm: 0.0, woro: 0.0, ..MixSpec::default() };
        for item in text.split(|c| c == ',' || c == '\n' || c == ';') {
            let item = item.trim();
            if item.is_empty() || item.starts_with('#') {
                continue;
            }
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| TraceError::InvalidMix(format!("expected key=value, got `{item}`")))?;
            let key = key.trim();
            let value = value.trim();
            let bad = |_| TraceError::InvalidMix(format!("bad value for {key}: `{value}`"));
            match key {
                "wm" => spec.wm = value.parse().map_err(bad)?,
                "read_intensive" | "ri" => spec.read_intensive = value.parse().map_err(bad)?,
                "worm" => spec.worm = value.parse().map_err(bad)?,
                "woro" => spec.woro = value.parse().map_err(bad)?,
                "pool" => spec.pool = value.parse().map_err(bad)?,
                "refs" => spec.refs = value.parse().map_err(bad)?,
                "window" => spec.window = value.parse().map_err(bad)?,
                "pcs_per_class" => spec.pcs_per_class = value.parse().map_err(bad)?,
                _ => return Err(TraceError::InvalidMix(format!("unknown mix key `{key}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

const CLASSES: [ReadLevelLabel; 4] = [
    ReadLevelLabel::Wm,
    ReadLevelLabel::ReadIntensive,
    ReadLevelLabel::Worm,
    ReadLevelLabel::Woro,
];

/// Per-line script: leading writes (emitted back to back so that write
/// bursts land within one cache residency) followed by interleaved reads.
#[derive(Debug, Clone)]
struct LineScript {
    line: u32,
    pc: u32,
    burst_writes: u32,
    reads: u32,
    trailing_writes: u32,
}

/// Deterministically generate a trace matching `spec` for a fixed seed.
pub fn generate_synthetic(spec: &MixSpec, seed: u64) -> Result<Vec<TraceRecord>, TraceError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ca1_ab1e);

    // Exact per-class line counts by largest remainder.
    let fracs = [spec.wm, spec.read_intensive, spec.worm, spec.woro];
    let mut counts = [0usize; 4];
    let mut rema: Vec<(f64, usize)> = Vec::new();
    let mut assigned = 0;
    for (i, f) in fracs.iter().enumerate() {
        let exact = f * spec.pool as f64;
        counts[i] = exact.floor() as usize;
        assigned += counts[i];
        rema.push((exact - exact.floor(), i));
    }
    rema.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for (_, i) in rema.iter().cycle().take(spec.pool - assigned) {
        counts[*i] += 1;
    }

    // Scrambled distinct line addresses; odd multiplier keeps the map a
    // bijection over the 25-bit line-address space.
    let mut lines: Vec<u32> = (0..spec.pool as u32)
        .map(|i| (i.wrapping_mul(2_654_435_761)) & 0x01FF_FFFF)
        .collect();
    lines.shuffle(&mut rng);

    let avg_ops = (spec.refs as f64 / spec.pool as f64).max(2.0);
    let mut scripts: Vec<LineScript> = Vec::with_capacity(spec.pool);
    let mut cursor = 0;
    for (class_idx, &count) in counts.iter().enumerate() {
        let class = CLASSES[class_idx];
        for _ in 0..count {
            let line = lines[cursor];
            cursor += 1;
            let pc_slot = rng.gen_range(0..spec.pcs_per_class) as u32;
            let pc = 0x1000 + (class_idx as u32 * spec.pcs_per_class as u32 + pc_slot) * 4;
            let script = match class {
                ReadLevelLabel::Woro => LineScript { line, pc, burst_writes: 1, reads: 0, trailing_writes: 0 },
                ReadLevelLabel::Worm => {
                    let reads = ((avg_ops - 1.0).round() as i64 + rng.gen_range(-1..=2)).max(1) as u32;
                    LineScript { line, pc, burst_writes: 1, reads, trailing_writes: 0 }
                }
                ReadLevelLabel::Wm => {
                    // reads stay below factor * writes by construction
                    let writes = rng.gen_range(2..=4);
                    let reads = rng.gen_range(0..=writes);
                    LineScript { line, pc, burst_writes: writes, reads, trailing_writes: 0 }
                }
                ReadLevelLabel::ReadIntensive => {
                    let writes = 2;
                    let reads = READ_INTENSIVE_FACTOR as u32 * writes + rng.gen_range(0..=4);
                    LineScript { line, pc, burst_writes: writes, reads, trailing_writes: 0 }
                }
            };
            scripts.push(script);
        }
    }
    scripts.shuffle(&mut rng);

    // Interleave scripts through a bounded window of active lines: one write
    // burst when a line becomes active, then single reads/writes in random
    // order across the window.
    #[derive(Debug)]
    struct Active {
        script: LineScript,
        burst_done: bool,
        reads_left: u32,
        writes_left: u32,
    }

    let mut records: Vec<TraceRecord> = Vec::with_capacity(spec.refs + spec.window * 8);
    let mut queue = scripts.into_iter();
    let mut active: Vec<Active> = Vec::with_capacity(spec.window);
    let mut stop_refills = false;
    loop {
        if !stop_refills {
            while active.len() < spec.window {
                match queue.next() {
                    Some(script) => active.push(Active {
                        reads_left: script.reads,
                        writes_left: script.trailing_writes,
                        script,
                        burst_done: false,
                    }),
                    None => break,
                }
            }
        }
        if active.is_empty() {
            break;
        }
        let slot = rng.gen_range(0..active.len());
        let a = &mut active[slot];
        let addr = a.script.line << geometry::OFFSET_BITS;
        let pc = a.script.pc;
        let mut emit = |op: Op, records: &mut Vec<TraceRecord>, rng: &mut ChaCha8Rng| {
            records.push(TraceRecord {
                cycle: records.len() as u64,
                warp_id: rng.gen_range(0..WARPS_PER_SM),
                pc,
                addr,
                op,
            });
        };
        if !a.burst_done {
            for _ in 0..a.script.burst_writes {
                emit(Op::Write, &mut records, &mut rng);
            }
            a.burst_done = true;
        } else if a.reads_left > 0 && (a.writes_left == 0 || rng.gen_bool(0.7)) {
            emit(Op::Read, &mut records, &mut rng);
            a.reads_left -= 1;
        } else if a.writes_left > 0 {
            emit(Op::Write, &mut records, &mut rng);
            a.writes_left -= 1;
        }
        if a.burst_done && a.reads_left == 0 && a.writes_left == 0 {
            active.swap_remove(slot);
        }
        if records.len() >= spec.refs {
            stop_refills = true;
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn rec(s: &str) -> TraceRecord {
        parse_trace(Cursor::new(s)).unwrap()[0]
    }

    #[test]
    fn parse_read_record() {
        assert_eq!(
            rec("0,0,0x400,0x1000,R"),
            TraceRecord { cycle: 0, warp_id: 0, pc: 0x400, addr: 0x1000, op: Op::Read }
        );
    }

    #[test]
    fn parse_write_record() {
        assert_eq!(
            rec("5,3,0x404,0x2080,W"),
            TraceRecord { cycle: 5, warp_id: 3, pc: 0x404, addr: 0x2080, op: Op::Write }
        );
    }

    #[test]
    fn parse_reports_bad_line_number() {
        let err = parse_trace(Cursor::new("0,0,0x400,GARBAGE,R")).unwrap_err();
        assert!(matches!(err, TraceError::MalformedLine(1)));
        let err = parse_trace(Cursor::new("# header\n0,0,0x400,0x0,R\n1,0,0x400,0x0,X")).unwrap_err();
        assert!(matches!(err, TraceError::MalformedLine(3)));
    }

    #[test]
    fn parse_rejects_wrong_field_count() {
        assert!(parse_trace(Cursor::new("0,0,0x400,R")).is_err());
        assert!(parse_trace(Cursor::new("0,0,0x400,0x0,R,extra")).is_err());
    }

    #[test]
    fn parse_skips_comments_and_blanks() {
        let got = parse_trace(Cursor::new("# hi\n\n0,0,0x400,0x1000,R\n")).unwrap();
        assert_eq!(got.len(), 1);
    }

    #[test]
    fn format_round_trips() {
        let spec = MixSpec { pool: 50, refs: 400, ..MixSpec::default() };
        let records = generate_synthetic(&spec, 3).unwrap();
        let parsed = parse_trace(Cursor::new(format_trace(&records))).unwrap();
        assert_eq!(records, parsed);
    }

    fn w(line: u32) -> TraceRecord {
        TraceRecord { cycle: 0, warp_id: 0, pc: 0, addr: line << 7, op: Op::Write }
    }
    fn r(line: u32) -> TraceRecord {
        TraceRecord { cycle: 0, warp_id: 0, pc: 0, addr: line << 7, op: Op::Read }
    }

    #[test]
    fn label_single_write_is_woro() {
        let labels = label_trace(&[w(1)]);
        assert_eq!(labels[&1], ReadLevelLabel::Woro);
    }

    #[test]
    fn label_write_then_reads_is_worm() {
        let labels = label_trace(&[w(1), r(1), r(1)]);
        assert_eq!(labels[&1], ReadLevelLabel::Worm);
    }

    #[test]
    fn label_two_writes_eight_reads_is_read_intensive() {
        let mut records = vec![w(1)];
        records.extend(std::iter::repeat(r(1)).take(8));
        records.push(w(1));
        let labels = label_trace(&records);
        assert_eq!(labels[&1], ReadLevelLabel::ReadIntensive);
    }

    #[test]
    fn label_repeated_writes_is_wm() {
        let labels = label_trace(&[w(1), r(1), w(1)]);
        assert_eq!(labels[&1], ReadLevelLabel::Wm);
    }

    #[test]
    fn labels_ignore_other_lines() {
        // Permuting accesses to other lines never changes a line's label.
        let base = vec![w(1), r(1), w(2), w(2), r(3)];
        let shuffled = vec![w(2), w(1), r(3), w(2), r(1)];
        let a = label_trace(&base);
        let b = label_trace(&shuffled);
        assert_eq!(a, b);
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = MixSpec { pool: 300, refs: 3000, ..MixSpec::default() };
        let a = generate_synthetic(&spec, 42).unwrap();
        let b = generate_synthetic(&spec, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&spec, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generator_rejects_bad_mixes() {
        let mut spec = MixSpec::default();
        spec.wm = 0.5;
        assert!(matches!(generate_synthetic(&spec, 0), Err(TraceError::InvalidMix(_))));
        let mut spec = MixSpec::default();
        spec.woro = -0.1;
        spec.worm = 0.9;
        assert!(matches!(generate_synthetic(&spec, 0), Err(TraceError::InvalidMix(_))));
    }

    #[test]
    fn degenerate_worm_mix_writes_once_then_reads() {
        let spec = MixSpec {
            wm: 0.0,
            read_intensive: 0.0,
            worm: 1.0,
            woro: 0.0,
            pool: 100,
            refs: 1000,
            ..MixSpec::default()
        };
        let records = generate_synthetic(&spec, 9).unwrap();
        let labels = label_trace(&records);
        assert_eq!(labels.len(), 100);
        assert!(labels.values().all(|l| *l == ReadLevelLabel::Worm));
    }

    #[test]
    fn half_wm_half_worm_mix_labels_match() {
        let spec = MixSpec {
            wm: 0.5,
            read_intensive: 0.0,
            worm: 0.5,
            woro: 0.0,
            pool: 200,
            refs: 5000,
            ..MixSpec::default()
        };
        let records = generate_synthetic(&spec, 7).unwrap();
        let (wm, _, worm, _) = label_fractions(&label_trace(&records));
        assert!((wm - 0.5).abs() <= 0.02, "wm fraction {wm}");
        assert!((worm - 0.5).abs() <= 0.02, "worm fraction {worm}");
    }

    #[test]
    fn paper_mix_produces_worm_dominance() {
        let spec = MixSpec {
            wm: 0.07,
            read_intensive: 0.05,
            worm: 0.80,
            woro: 0.08,
            pool: 2000,
            refs: 20_000,
            ..MixSpec::default()
        };
        let records = generate_synthetic(&spec, 11).unwrap();
        let (_, _, worm, _) = label_fractions(&label_trace(&records));
        assert!((worm - 0.80).abs() <= 0.02, "worm fraction {worm}");
    }

    #[test]
    fn label_fractions_converge_for_large_pools() {
        let spec = MixSpec {
            wm: 0.1,
            read_intensive: 0.1,
            worm: 0.6,
            woro: 0.2,
            pool: 10_000,
            refs: 60_000,
            ..MixSpec::default()
        };
        let records = generate_synthetic(&spec, 5).unwrap();
        let (wm, ri, worm, woro) = label_fractions(&label_trace(&records));
        assert!((wm - 0.1).abs() <= 0.01);
        assert!((ri - 0.1).abs() <= 0.01);
        assert!((worm - 0.6).abs() <= 0.01);
        assert!((woro - 0.2).abs() <= 0.01);
    }
}
