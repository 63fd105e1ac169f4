//! Large-deviations rate functions, simulation, and persistence
//! classification for reinforced Galton–Watson processes.
//!
//! In a reinforced Galton–Watson tree with memory parameter `q`, every
//! individual either repeats the offspring count of a uniformly chosen
//! forebear (probability `q`) or samples afresh from the reproduction law `ν`.
//! The crate provides
//!
//! * [`measures`]: finite-support laws, relative entropy, pairings;
//! * [`rate`]: `Λ_q`, its gradient and Legendre transform `Λ_q^*`;
//! * [`control`]: the discretized control problem, an independent route to `Λ_q^*`;
//! * [`simulate`]: trees, urns, many-to-one estimators and exact enumeration;
//! * [`classify`]: evanescence / persistence verdicts;
//! * [`survival`]: the Lambert-W survival criterion.
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod control;
pub mod error;
pub mod measures;
pub mod rate;
pub mod simulate;
pub mod survival;

pub use error::{Error, Result};
pub use measures::{EmpiricalMeasure, ExtReal, LogWeights, OffspringLaw, ProbVector};
