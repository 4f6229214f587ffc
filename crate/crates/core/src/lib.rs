//! Treatment-effect process diagnostics and nph2ph approximations for
//! two-arm survival trials.
//!
//! Pipeline: [`dataset`] ingests records, [`timescale`] maps informative
//! failures onto `j/k`, [`score`] fits partial likelihoods, [`process`]
//! builds the effect process and its bands, [`transform`] fits piecewise and
//! Legendre approximations of `β(t)`, [`predict`] reports R², concordance and
//! conditional survival, and [`simlab`] supplies simulation and Monte Carlo
//! oracles. [`analysis`] strings them together.

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod predict;
pub mod process;
pub mod rng;
pub mod score;
pub mod simlab;
pub mod timescale;
pub mod transform;

pub use dataset::{parse_csv, SurvivalRecord, TrialData};
pub use error::{Error, Result};
pub use exec::Exec;
pub use timescale::TimeScale;
pub use transform::BetaFunction;
