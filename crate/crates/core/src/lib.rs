//! Trace-driven, cycle-accounting simulator for a heterogeneous GPU L1D cache
//! that fuses a small SRAM bank with a dense STT-MRAM bank.
//!
//! The simulator models the FUSE cache organization: an SRAM bank with LRU
//! replacement, an STT-MRAM bank that is either set-associative or
//! approximately fully-associative (counting-bloom-filter-guided serialized
//! tag search), a PC-signature read-level predictor, an arbitration
//! controller with swap buffer / tag queue / MSHR, and a fixed-latency
//! L2+DRAM model behind it. Seven named cache configurations are built in and
//! can be compared or swept from the CLI or the Python bindings.
//!
//! The main entry points are [`engine::run`] for a single simulation and the
//! helpers in [`runner`] for preset comparisons and parameter sweeps.

pub mod cbf;
pub mod config;
pub mod controller;
pub mod downstream;
pub mod engine;
pub mod geometry;
pub mod metrics;
pub mod predictor;
pub mod runner;
pub mod sram_bank;
pub mod stt_bank;
pub mod trace;
