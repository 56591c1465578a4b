//! Scheduling toolkit for region-based video content enhancement.
//!
//! The crate models the analytics-oriented enhancement pipeline stage by
//! stage: per-macroblock importance scoring ([`importance`]), temporal
//! frame selection from feature-change series ([`temporal`]), region-aware
//! packing of important macroblocks into fixed-size inference bins
//! ([`pack`]), profile-driven resource/batch planning for the pipeline
//! components ([`plan`]), and a discrete-event simulator that plays
//! multi-stream workloads through a planned pipeline ([`sim`]).
//!
//! Everything is deterministic: all randomness flows from caller-supplied
//! seeds, iteration orders are fixed, and reports serialize stably, so any
//! result can be reproduced from its inputs and seed alone.

pub mod grid;
pub mod importance;
pub mod pack;
pub mod plan;
pub mod sim;
pub mod temporal;

/// Schema version stamped on every JSON document this crate writes.
pub const SCHEMA_VERSION: u32 = 1;

/// Seed used when neither `--seed` nor `REGIONPACK_SEED` is given.
pub const DEFAULT_SEED: u64 = 0x5eed_0001;
