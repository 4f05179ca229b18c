//! Cache allocation of MDS-coded content across small-cell helper stations
//! for users that move between helpers according to a Markov chain.
//!
//! The main entry points are [`aca::aca_allocate`] (per-helper greedy
//! knapsack), [`oca::oca_allocate`] (exact branch-and-bound), the uncoded
//! baseline [`aca::hua_allocate`], and the evaluators in [`allocation`].

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod aca;
pub mod allocation;
pub mod auxchain;
pub mod error;
pub mod instance;
pub mod lp;
pub mod model;
pub mod oca;
pub mod synth;
pub mod verify;
pub mod walks;

pub use allocation::{Allocation, AllocationArtifact, DownloadSchedule, EvalMethod, EvalReport};
pub use error::{Error, Result};
pub use instance::Instance;
pub use model::{Catalog, HelperSet, MobilityModel, ModelArtifact, RequestModel, TraceLog, TraceRecord};
pub use walks::{ContactValueTable, Walk, DEFAULT_ENUMERATION_CAP};
