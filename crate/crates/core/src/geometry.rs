//! Address decomposition and the named L1D cache-configuration presets.

use std::fmt;
use std::str::FromStr;

/// Cache line size in bytes. A warp access touches up to one full line.
pub const LINE_BYTES: u32 = 128;
/// Number of byte-offset bits within a line.
pub const OFFSET_BITS: u32 = 7;
/// Area budget shared by all presets, expressed in SRAM bytes.
pub const AREA_BUDGET_SRAM_BYTES: u64 = 32 * 1024;
/// STT-MRAM packs roughly four times the capacity of SRAM per unit area.
pub const STT_DENSITY_RATIO: u64 = 4;

/// Geometry of one cache bank: `sets x ways` lines of [`LINE_BYTES`] each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheGeometry {
    pub sets: u32,
    pub ways: u32,
}

impl CacheGeometry {
    pub fn new(sets: u32, ways: u32) -> Self {
        assert!(sets > 0 && sets.is_power_of_two(), "sets must be a power of two");
        assert!(ways > 0, "ways must be positive");
        CacheGeometry { sets, ways }
    }

    pub fn lines(&self) -> u32 {
        self.sets * self.ways
    }

    pub fn capacity_bytes(&self) -> u64 {
        u64::from(self.lines()) * u64::from(LINE_BYTES)
    }

    pub fn index_bits(&self) -> u32 {
        self.sets.trailing_zeros()
    }

    pub fn tag_bits(&self) -> u32 {
        32 - self.index_bits() - OFFSET_BITS
    }
}

impl fmt::Display for CacheGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{} ({} B)", self.sets, self.ways, self.capacity_bytes())
    }
}

/// Split a 32-bit byte address into (tag, set index, line offset).
pub fn decompose(addr: u32, geom: &CacheGeometry) -> (u32, u32, u32) {
    let offset = addr & (LINE_BYTES - 1);
    let set = (addr >> OFFSET_BITS) & (geom.sets - 1);
    let tag = addr >> (OFFSET_BITS + geom.index_bits());
    (tag, set, offset)
}

/// Inverse of [`decompose`].
pub fn recompose(tag: u32, set: u32, offset: u32, geom: &CacheGeometry) -> u32 {
    (tag << (OFFSET_BITS + geom.index_bits())) | (set << OFFSET_BITS) | offset
}

/// Byte address to 128-byte line address.
pub fn line_addr(addr: u32) -> u32 {
    addr >> OFFSET_BITS
}

/// The seven built-in L1D configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PresetName {
    L1Sram,
    FaSram,
    ByNvm,
    Hybrid,
    BaseFuse,
    FaFuse,
    DyFuse,
}

impl PresetName {
    pub const ALL: [PresetName; 7] = [
        PresetName::L1Sram,
        PresetName::FaSram,
        PresetName::ByNvm,
        PresetName::Hybrid,
        PresetName::BaseFuse,
        PresetName::FaFuse,
        PresetName::DyFuse,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PresetName::L1Sram => "L1-SRAM",
            PresetName::FaSram => "FA-SRAM",
            PresetName::ByNvm => "By-NVM",
            PresetName::Hybrid => "Hybrid",
            PresetName::BaseFuse => "Base-FUSE",
            PresetName::FaFuse => "FA-FUSE",
            PresetName::DyFuse => "Dy-FUSE",
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown preset `{0}`")]
pub struct UnknownPreset(pub String);

impl FromStr for PresetName {
    type Err = UnknownPreset;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        for name in PresetName::ALL {
            if s.eq_ignore_ascii_case(name.as_str()) {
                return Ok(name);
            }
        }
        Err(UnknownPreset(s.to_string()))
    }
}

/// Which optional cache mechanisms a preset enables.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FeatureFlags {
    pub swap_buffer: bool,
    pub tag_queue: bool,
    pub approx_fa: bool,
    pub predictor: bool,
    pub deadwrite_bypass: bool,
}

/// Per-preset latency, energy and leakage constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingEnergyParams {
    pub sram_read_cyc: u64,
    pub sram_write_cyc: u64,
    pub stt_read_cyc: u64,
    pub stt_write_cyc: u64,
    pub sram_read_nj: f64,
    pub sram_write_nj: f64,
    pub stt_read_nj: f64,
    pub stt_write_nj: f64,
    pub sram_leak_mw: f64,
    pub stt_leak_mw: f64,
    pub clock_hz: f64,
}

impl TimingEnergyParams {
    fn base() -> Self {
        TimingEnergyParams {
            sram_read_cyc: 1,
            sram_write_cyc: 1,
            stt_read_cyc: 1,
            stt_write_cyc: 5,
            sram_read_nj: 0.0,
            sram_write_nj: 0.0,
            stt_read_nj: 0.0,
            stt_write_nj: 0.0,
            sram_leak_mw: 0.0,
            stt_leak_mw: 0.0,
            clock_hz: 700.0e6,
        }
    }
}

/// A complete L1D configuration: bank geometries, feature set and constants.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigPreset {
    pub name: PresetName,
    pub sram_geom: Option<CacheGeometry>,
    pub stt_geom: Option<CacheGeometry>,
    pub features: FeatureFlags,
    pub timing: TimingEnergyParams,
}

impl ConfigPreset {
    pub fn sram_capacity_bytes(&self) -> u64 {
        self.sram_geom.map_or(0, |g| g.capacity_bytes())
    }

    pub fn stt_capacity_bytes(&self) -> u64 {
        self.stt_geom.map_or(0, |g| g.capacity_bytes())
    }

    /// Chip area consumed, normalized to SRAM bytes.
    pub fn area_sram_equiv_bytes(&self) -> u64 {
        self.sram_capacity_bytes() + self.stt_capacity_bytes() / STT_DENSITY_RATIO
    }
}

/// Build one of the seven named configurations.
pub fn preset(name: PresetName) -> ConfigPreset {
    let mut t = TimingEnergyParams::base();
    match name {
        PresetName::L1Sram | PresetName::FaSram => {
            t.sram_read_nj = 0.15;
            t.sram_write_nj = 0.12;
            t.sram_leak_mw = 58.0;
            let geom = if name == PresetName::L1Sram {
                CacheGeometry::new(64, 4)
            } else {
                // Idealized fully-associative reference: one set, parallel
                // tag match in a single cycle.
                CacheGeometry::new(1, 256)
            };
            ConfigPreset {
                name,
                sram_geom: Some(geom),
                stt_geom: None,
                features: FeatureFlags::default(),
                timing: t,
            }
        }
        PresetName::ByNvm => {
            t.stt_read_nj = 1.2;
            t.stt_write_nj = 2.9;
            t.stt_leak_mw = 2.8;
            ConfigPreset {
                name,
                sram_geom: None,
                stt_geom: Some(CacheGeometry::new(256, 4)),
                features: FeatureFlags { deadwrite_bypass: true, ..FeatureFlags::default() },
                timing: t,
            }
        }
        PresetName::Hybrid | PresetName::BaseFuse | PresetName::FaFuse | PresetName::DyFuse => {
            t.sram_read_nj = 0.09;
            t.sram_write_nj = 0.07;
            t.stt_read_nj = 0.26;
            t.stt_write_nj = 2.4;
            t.sram_leak_mw = 36.0;
            t.stt_leak_mw = match name {
                PresetName::Hybrid | PresetName::BaseFuse => 2.6,
                _ => 2.4,
            };
            let approx = matches!(name, PresetName::FaFuse | PresetName::DyFuse);
            let stt_geom = if approx {
                CacheGeometry::new(1, 512)
            } else {
                CacheGeometry::new(256, 2)
            };
            let features = FeatureFlags {
                swap_buffer: name != PresetName::Hybrid,
                tag_queue: name != PresetName::Hybrid,
                approx_fa: approx,
                predictor: name == PresetName::DyFuse,
                deadwrite_bypass: false,
            };
            ConfigPreset {
                name,
                sram_geom: Some(CacheGeometry::new(64, 2)),
                stt_geom: Some(stt_geom),
                features,
                timing: t,
            }
        }
    }
}

/// SRAM share of the area budget used by the ratio sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SramRatio {
    pub num: u32,
    pub den: u32,
}

impl SramRatio {
    /// The sweep points evaluated when searching for the best split.
    pub const SWEEP: [SramRatio; 5] = [
        SramRatio { num: 1, den: 16 },
        SramRatio { num: 1, den: 8 },
        SramRatio { num: 1, den: 4 },
        SramRatio { num: 1, den: 2 },
        SramRatio { num: 3, den: 4 },
    ];

    pub fn label(&self) -> String {
        format!("{}/{}", self.num, self.den)
    }
}

impl FromStr for SramRatio {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (num, den) = s
            .split_once('/')
            .ok_or_else(|| format!("ratio `{s}` must look like 1/2"))?;
        let num: u32 = num.trim().parse().map_err(|_| format!("bad ratio numerator in `{s}`"))?;
        let den: u32 = den.trim().parse().map_err(|_| format!("bad ratio denominator in `{s}`"))?;
        if num == 0 || den == 0 || num >= den {
            return Err(format!("ratio `{s}` must be a proper fraction"));
        }
        Ok(SramRatio { num, den })
    }
}

/// Bank geometries for an SRAM:STT area split within the fixed budget.
///
/// The SRAM bank keeps two ways where possible; the STT bank stays fully
/// associative with its slot count scaled by the remaining area at 4x
/// density. Both banks must come out with a whole number of lines.
pub fn ratio_geometries(ratio: SramRatio) -> Result<(CacheGeometry, CacheGeometry), String> {
    let budget = AREA_BUDGET_SRAM_BYTES;
    let sram_bytes = budget * u64::from(ratio.num) / u64::from(ratio.den);
    let stt_bytes = (budget - sram_bytes) * STT_DENSITY_RATIO;
    let sram_lines = (sram_bytes / u64::from(LINE_BYTES)) as u32;
    let stt_lines = (stt_bytes / u64::from(LINE_BYTES)) as u32;
    if sram_lines < 2 || stt_lines < 4 || stt_lines % 4 != 0 {
        return Err(format!("ratio {} does not yield usable bank sizes", ratio.label()));
    }
    // Largest power-of-two set count that keeps at least two ways.
    let sets = prev_pow2(sram_lines / 2);
    if sram_lines % sets != 0 {
        return Err(format!("ratio {} does not divide into power-of-two sets", ratio.label()));
    }
    let sram = CacheGeometry::new(sets, sram_lines / sets);
    let stt = CacheGeometry::new(1, stt_lines);
    Ok((sram, stt))
}

fn prev_pow2(x: u32) -> u32 {
    assert!(x > 0);
    1 << (31 - x.leading_zeros())
}
