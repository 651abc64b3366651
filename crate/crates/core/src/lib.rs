//! Law-invariant optimal stopping of one-dimensional diffusions with
//! randomized threshold rules.
//!
//! The crate is organized bottom-up: [`measures`] holds the distribution type,
//! [`scale`] maps a diffusion to natural scale, [`embedding`] builds
//! randomized threshold rules with a prescribed exit law, [`objectives`]
//! evaluates preference functionals, [`optimize`] searches over rules and
//! [`simulate`] checks everything by Monte Carlo.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod embedding;
pub mod error;
pub mod io;
pub mod measures;
pub mod numeric;
pub mod objectives;
pub mod optimize;
pub mod scale;
pub mod simulate;

pub use embedding::{
    approximate_by_atoms, attainable, hall_embed, hall_embed_with_diagnostics, rule_pushforward, sample_rule,
    threshold_law, RandomizedRule, ThresholdPair,
};
pub use error::{Error, Result};
pub use measures::{wasserstein1, Distribution, Measure};
pub use scale::{build_scale, CaseTag, DiffusionSpec, Direction, ScaleMap};
