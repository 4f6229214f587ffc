//! The nph2ph transform: approximations of a time-varying `β(t)` that turn
//! the observed non-proportional hazards into a proportional-hazards form.

mod beta;
pub mod changepoint;
pub mod legendre;

use serde::Serialize;

pub use beta::BetaFunction;
pub use changepoint::{
    euler_slopes, find_changepoint, fit_piecewise, multi_changepoint, piecewise_path,
    zp_covariate, ChangepointFit, EulerSlopes, MultiChangepointFit, ScanOptions,
};
pub use legendre::{
    beta_from_legendre, fit_legendre, legendre_derivatives, legendre_eval, LegendreFit,
    LegendreModel,
};

use crate::error::{Error, Result};

/// A named shape `b(t)` on the unit scale; its scale is fitted separately.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub name: String,
    pub shape: BetaFunction,
}

/// A finite, nonempty class of candidate shapes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateSet {
    candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn new(candidates: Vec<Candidate>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::InvalidArgument("candidate set is empty".into()));
        }
        Ok(Self { candidates })
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// The constant shape plus single-changepoint shapes at
    /// `τ ∈ {0.2, …, 0.8}` with post-change multipliers
    /// `{-1, -0.5, 0, 0.25, 0.5, 2, 4}`: 50 shapes.
    pub fn piecewise_class() -> Self {
        let mut candidates = vec![Candidate {
            name: "constant".into(),
            shape: BetaFunction::constant(1.0),
        }];
        for i in 2..=8 {
            let tau = i as f64 / 10.0;
            for ratio in [-1.0, -0.5, 0.0, 0.25, 0.5, 2.0, 4.0] {
                candidates.push(Candidate {
                    name: format!("tau{tau:.1}_r{ratio}"),
                    shape: BetaFunction::single_change(1.0, tau, ratio),
                });
            }
        }
        Self { candidates }
    }
}
