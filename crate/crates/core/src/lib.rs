//! Simulation workbench for click-inferred relevance in fair ranking.
//!
//! The pipeline: synthesize (or load) a single-query ranking dataset,
//! simulate position-biased clicks, train a neural scorer with an
//! inverse-propensity-weighted listwise loss, then measure ranking utility
//! and exposure fairness under true and predicted relevance. The
//! [`desiderata`] module audits whether predicted relevance behaves like a
//! usable fairness target, and [`interventions`] re-ranks the top of a list
//! toward relevance-proportional group targets.

pub mod clickmodel;
pub mod datagen;
pub mod dataio;
pub mod desiderata;
pub mod interventions;
pub mod metrics;
pub mod ranker;
pub mod stats;

mod fmt;

pub use fmt::format_sig;

/// Binary group label carried by every item.
pub type Group = u8;

/// Number of protected groups handled throughout the crate.
pub const N_GROUPS: usize = 2;
