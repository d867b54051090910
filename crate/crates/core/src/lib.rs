//! Flash translation layer simulator and analytical write-amplification toolkit.
//!
//! The analytical side ([`model`], [`alloc`], [`grid`]) predicts the write
//! amplification of a uniformly updated flash device and splits spare space
//! between groups of pages with different update frequencies. The simulator
//! side ([`device`], [`ftl`], [`manager`], [`workload`], [`sim`]) replays a
//! logical write stream against a page-mapped device under one of three block
//! managers and measures what actually happens. [`config`], [`presets`] and
//! [`experiment`] describe runs in plain text and turn them into CSV files.

// Validation uses `!(x > 0.0)` style checks on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alloc;
pub mod config;
pub mod detector;
pub mod device;
pub mod error;
pub mod experiment;
pub mod ftl;
pub mod grid;
pub mod lambert;
pub mod manager;
pub mod model;
pub mod par;
pub mod presets;
pub mod sim;
pub mod workload;

pub use error::{Error, Result};
