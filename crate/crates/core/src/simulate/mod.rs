//! Forward simulation and exact small-size oracles.
//!
//! Every random quantity is a function of an [`RngStream`], so runs are
//! reproducible regardless of how work is spread over threads.

pub mod rng;
pub mod spine;
pub mod tree;
pub mod urn;

pub use rng::{CounterRng, RngStream};
pub use spine::{replacement_matrix, simulate_spine_urn, ReplacementReport, SpineUrnState};
pub use tree::{
    rgw_campaign, simulate_rgw, simulate_two_type, CampaignSummary, GenerationReport, Histogram,
    LineageState, MeanEstimate, TwoTypeReport, TwoTypeRun, DEFAULT_POP_CAP,
};
pub use urn::{
    enumerate_expected_counts, exact_conditional_mean, exact_empirical_law,
    gibbs_conditional_estimate, many_to_one_estimate, simulate_urn, GibbsEstimate,
};
