//! Run configuration: a preset plus tunable knobs, overridable through
//! dotted `key=value` pairs from the CLI or a config file.

use crate::downstream::DownstreamConfig;
use crate::geometry::{self, CacheGeometry, ConfigPreset, PresetName, SramRatio};
use crate::predictor::{LOWER_THRESHOLD, UNUSED_THRESHOLD};

pub const DEFAULT_MSHR_CAPACITY: usize = 32;
pub const DEFAULT_SWAP_SLOTS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown override key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: `{value}`")]
    BadValue { key: String, value: String },
    #[error(transparent)]
    UnknownPreset(#[from] geometry::UnknownPreset),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    pub history_entries: usize,
    pub unused_threshold: u8,
    pub lower_threshold: u8,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            history_entries: crate::predictor::HISTORY_ENTRIES,
            unused_threshold: UNUSED_THRESHOLD,
            lower_threshold: LOWER_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub preset: ConfigPreset,
    pub downstream: DownstreamConfig,
    pub predictor: PredictorConfig,
    pub mshr_capacity: usize,
    pub swap_slots: usize,
    pub cbf_counters: usize,
    pub cbf_hashes: usize,
    pub issue_width: u32,
    pub seed: u64,
    /// Keep a per-request latency log (memory proportional to the trace).
    pub log_requests: bool,
    /// Check the single-copy invariant after every simulated cycle.
    pub verify_single_copy: bool,
}

impl SimConfig {
    pub fn for_preset(name: PresetName) -> Self {
        SimConfig {
            preset: geometry::preset(name),
            downstream: DownstreamConfig::default(),
            predictor: PredictorConfig::default(),
            mshr_capacity: DEFAULT_MSHR_CAPACITY,
            swap_slots: DEFAULT_SWAP_SLOTS,
            cbf_counters: crate::cbf::DEFAULT_COUNTERS,
            cbf_hashes: crate::cbf::DEFAULT_HASHES,
            issue_width: 1,
            seed: 0,
            log_requests: false,
            verify_single_copy: false,
        }
    }

    /// Apply one dotted override such as `downstream.l2_round_trip_cycles=30`
    /// or `geometry.sram_ratio=1/2`.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue { key: key.to_string(), value: value.to_string() };
        macro_rules! parse {
            ($ty:ty) => {
                value.parse::<$ty>().map_err(|_| bad())?
            };
        }
        match key {
            "downstream.l2_enabled" => self.downstream.l2_enabled = parse!(bool),
            "downstream.l2_round_trip_cycles" => self.downstream.l2_round_trip_cycles = parse!(u64),
            "downstream.dram_extra_cycles" => self.downstream.dram_extra_cycles = parse!(u64),
            "downstream.l2_capacity_bytes" => self.downstream.l2_capacity_bytes = parse!(u64),
            "downstream.l2_ways" => self.downstream.l2_ways = parse!(u32),
            "mshr.capacity" => self.mshr_capacity = parse!(usize),
            "swap.slots" => self.swap_slots = parse!(usize),
            "engine.issue_width" => self.issue_width = parse!(u32),
            "engine.log_requests" => self.log_requests = parse!(bool),
            "engine.verify_single_copy" => self.verify_single_copy = parse!(bool),
            "stt.cbf_counters" => {
                let v = parse!(usize);
                if !v.is_power_of_two() || v < 2 {
                    return Err(bad());
                }
                self.cbf_counters = v;
            }
            "stt.cbf_hashes" => {
                let v = parse!(usize);
                if v == 0 || v > 8 {
                    return Err(bad());
                }
                self.cbf_hashes = v;
            }
            "stt.slots" => {
                let v = parse!(u32);
                if v == 0 || v % 4 != 0 {
                    return Err(bad());
                }
                self.preset.stt_geom = Some(CacheGeometry::new(1, v));
            }
            "stt.sets" | "stt.ways" => {
                let v = parse!(u32);
                let cur = self.preset.stt_geom.ok_or_else(|| {
                    ConfigError::Invalid(format!("{} has no STT bank", self.preset.name))
                })?;
                let geom = if key == "stt.sets" {
                    CacheGeometry::new(v, cur.ways)
                } else {
                    CacheGeometry::new(cur.sets, v)
                };
                self.preset.stt_geom = Some(geom);
            }
            "sram.sets" | "sram.ways" => {
                let v = parse!(u32);
                let cur = self.preset.sram_geom.ok_or_else(|| {
                    ConfigError::Invalid(format!("{} has no SRAM bank", self.preset.name))
                })?;
                let geom = if key == "sram.sets" {
                    CacheGeometry::new(v, cur.ways)
                } else {
                    CacheGeometry::new(cur.sets, v)
                };
                self.preset.sram_geom = Some(geom);
            }
            "geometry.sram_ratio" => {
                let ratio: SramRatio = value.parse().map_err(|_| bad())?;
                let (sram, stt) = geometry::ratio_geometries(ratio).map_err(ConfigError::Invalid)?;
                self.preset.sram_geom = Some(sram);
                self.preset.stt_geom = Some(stt);
            }
            "predictor.history_entries" => {
                let v = parse!(usize);
                if !v.is_power_of_two() {
                    return Err(bad());
                }
                self.predictor.history_entries = v;
            }
            "predictor.unused_threshold" => self.predictor.unused_threshold = parse!(u8),
            "predictor.lower_threshold" => self.predictor.lower_threshold = parse!(u8),
            "timing.clock_hz" => self.preset.timing.clock_hz = parse!(f64),
            "timing.stt_write_cyc" => self.preset.timing.stt_write_cyc = parse!(u64),
            "timing.stt_read_cyc" => self.preset.timing.stt_read_cyc = parse!(u64),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Apply `key=value` pairs, one per item.
    pub fn apply_overrides<'a, I: IntoIterator<Item = &'a str>>(&mut self, items: I) -> Result<(), ConfigError> {
        for item in items {
            let item = item.trim();
            if item.is_empty() || item.starts_with('#') {
                continue;
            }
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| ConfigError::Invalid(format!("expected key=value, got `{item}`")))?;
            self.apply_override(key.trim(), value.trim())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply() {
        let mut cfg = SimConfig::for_preset(PresetName::DyFuse);
        cfg.apply_overrides([
            "downstream.l2_round_trip_cycles=30",
            "mshr.capacity=8",
            "stt.cbf_counters=32",
        ])
        .unwrap();
        assert_eq!(cfg.downstream.l2_round_trip_cycles, 30);
        assert_eq!(cfg.mshr_capacity, 8);
        assert_eq!(cfg.cbf_counters, 32);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = SimConfig::for_preset(PresetName::DyFuse);
        assert!(matches!(
            cfg.apply_override("bogus.key", "1"),
            Err(ConfigError::UnknownKey(_))
        ));
    }

    #[test]
    fn bad_value_rejected() {
        let mut cfg = SimConfig::for_preset(PresetName::DyFuse);
        assert!(cfg.apply_override("mshr.capacity", "lots").is_err());
        assert!(cfg.apply_override("stt.cbf_counters", "100").is_err());
    }

    #[test]
    fn ratio_override_resizes_both_banks() {
        let mut cfg = SimConfig::for_preset(PresetName::DyFuse);
        cfg.apply_override("geometry.sram_ratio", "1/4").unwrap();
        assert_eq!(cfg.preset.sram_geom.unwrap().capacity_bytes(), 8 * 1024);
        assert_eq!(cfg.preset.stt_geom.unwrap().lines(), 768);
    }

    #[test]
    fn sram_override_on_bankless_preset_fails() {
        let mut cfg = SimConfig::for_preset(PresetName::ByNvm);
        assert!(cfg.apply_override("sram.sets", "32").is_err());
    }
}
