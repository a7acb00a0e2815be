#![cfg_attr(not(feature = "std"), no_std)]

//! Simulation engine for multi-state health-economic decision models.
//!
//! Three interchangeable model families turn sampled parameters into state
//! occupancy probabilities over time and discounted expected values (QALYs,
//! costs) per probabilistic-sensitivity-analysis sample:
//!
//! - [`cohort`]: a discrete-time Markov cohort evolving by
//!   `x_{c+1}^T = x_c^T P_c` over per-cycle transition probability matrices;
//! - [`indiv`]: continuous-time individual trajectories simulated by
//!   competing latent transition times, under a time-in-state or model-time
//!   clock;
//! - [`psm`]: an N-state partitioned survival model reading state
//!   membership off N−1 survival curves.
//!
//! Around them, [`params`] builds the sampled parameter machinery
//! (multivariate-normal coefficient draws, method-of-moments beta and gamma
//! moments, transition probability arrays, matrix exponentials of intensity
//! matrices), [`statevals`] resolves per-state utility and cost values for
//! any (sample, strategy, patient, state, time) query, and [`cea`] reduces
//! expected values to decision measures: ICER tables, net monetary benefit,
//! acceptability curves and frontiers, and the expected value of perfect
//! information.
//!
//! All randomness flows through counter-derived streams ([`rng`]), so a
//! fixed seed reproduces results bit for bit regardless of how work is
//! scheduled across threads. The crate needs only `core` and `alloc`; the
//! default `std` feature merely builds it against the standard library.

extern crate alloc;

pub mod cea;
pub mod cohort;
pub mod context;
pub mod error;
pub mod indiv;
pub mod linalg;
pub mod math;
pub mod output;
pub mod params;
pub mod psm;
pub mod rng;
pub mod statevals;
pub mod survival;

pub use cea::{cea, cea_pw, icer_summary, summarize_ce, CeOutput, CeaPairwiseResult, CeaResult};
pub use cohort::{integrate_statevals, sim_stateprobs_cohort, CohortSettings, IntegrationMethod};
pub use context::{
    expand, ExpandDim, InputData, ModelContext, PatientTable, StateTable, StrategyTable,
    TransitionMatrix,
};
pub use error::Error;
pub use indiv::{
    sim_disease, sim_stateprobs_indiv, sim_values_indiv, Clock, DiseaseProgress, TransitionModel,
};
pub use output::{ProbAxis, StateProbs, ValueTotals};
pub use params::{expmat, mom_beta, mom_gamma, SurvivalParams, TransProbArray};
pub use psm::{sim_survival, stateprobs_from_survival, SurvivalCurves};
pub use rng::Streams;
pub use statevals::{stateval_draw, MeanValueParams, StateValTable};
pub use survival::{Distribution, Family};

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
