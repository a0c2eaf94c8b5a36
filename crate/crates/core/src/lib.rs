//! Outcome-aware clustering of patient trajectories.
//!
//! A variational sequence autoencoder embeds each patient's windowed
//! history; a linear risk head trained with the Cox partial likelihood and a
//! Student-t cluster layer trained by self-training share that embedding.
//! Weighting reconstruction against outcome loss selects whether clusters
//! follow input structure, outcome risk, or both.
//!
//! The crate also ships the synthetic benchmark with known partitions, the
//! record-to-tensor pipeline, the comparison baselines and the survival
//! evaluation suite. See `examples/` for one runnable program per capability.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod baselines;
pub mod ehr;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod synthetic;
pub mod trainer;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};

/// Follow-up time with an event indicator (`false` = censored).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalOutcome {
    pub time: f64,
    pub event: bool,
}

impl SurvivalOutcome {
    pub fn new(time: f64, event: bool) -> Self {
        Self { time, event }
    }
}
