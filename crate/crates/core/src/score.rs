//! Risk-set probabilities, conditional moments of the group label and
//! partial-likelihood fits.
//!
//! With a binary covariate a risk set is summarised by its per-arm counts, so
//! every quantity here is evaluated from the `(n0, n1)` pairs stored on the
//! time-scale grid. Tied failures share one risk set (Breslow).

use serde::{Deserialize, Serialize};

use crate::dataset::{risk_set, TrialData};
use crate::error::{Error, Result};
use crate::timescale::{GridFailure, TimeScale};
use crate::transform::BetaFunction;

/// Iterates stop once `|U| <` this.
pub const SCORE_TOLERANCE: f64 = 1e-8;
/// Magnitude at which a monotone likelihood is capped.
pub const BETA_CAP: f64 = 10.0;
pub const MAX_ITERATIONS: usize = 50;
/// Default minimum number of failures on each side of a split.
pub const DEFAULT_MIN_SEG: usize = 5;

/// Moments of the group label under the risk-set probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskMoments {
    pub e: f64,
    pub v: f64,
    /// Group of the failing subject.
    pub observed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialLikFit {
    pub beta_hat: f64,
    pub se: f64,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Probability that the failure comes from group 1 when the covariate
/// contribution is `x = β·w`.
#[inline]
pub(crate) fn group1_probability(at_risk: [usize; 2], x: f64) -> f64 {
    let (n0, n1) = (at_risk[0] as f64, at_risk[1] as f64);
    if n1 == 0.0 {
        return 0.0;
    }
    if x >= 0.0 {
        n1 / (n1 + n0 * (-x).exp())
    } else {
        let w = x.exp();
        n1 * w / (n1 * w + n0)
    }
}

/// `log(n0 + n1 e^x)` without overflow.
#[inline]
fn log_denominator(at_risk: [usize; 2], x: f64) -> f64 {
    let (n0, n1) = (at_risk[0] as f64, at_risk[1] as f64);
    if n1 == 0.0 {
        n0.ln()
    } else if n0 == 0.0 {
        n1.ln() + x
    } else if x > 0.0 {
        x + (n0 * (-x).exp() + n1).ln()
    } else {
        (n0 + n1 * x.exp()).ln()
    }
}

fn grid_index(ts: &TimeScale, t: f64) -> Result<usize> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "grid time must lie in (0, 1], got {t}"
        )));
    }
    Ok(ts.index_of_unit(t))
}

/// Risk-set probabilities `π_i(β(t), t)` as `(record index, weight)` pairs.
pub fn pi_weights(
    data: &TrialData,
    ts: &TimeScale,
    beta: &BetaFunction,
    t: f64,
) -> Result<Vec<(usize, f64)>> {
    let j = grid_index(ts, t)?;
    let failure = &ts.grid()[j - 1];
    let members = risk_set(data, failure.time);
    if members.is_empty() {
        return Err(Error::EmptyRiskSet(t));
    }
    let b = beta.eval(t);
    let log_den = log_denominator(failure.at_risk, b);
    let recs = data.records();
    Ok(members
        .into_iter()
        .map(|i| (i, (b * recs[i].group as f64 - log_den).exp()))
        .collect())
}

/// Conditional mean and variance of the group label at grid time `t`.
pub fn moments(ts: &TimeScale, beta: &BetaFunction, t: f64) -> Result<RiskMoments> {
    let j = grid_index(ts, t)?;
    let failure = &ts.grid()[j - 1];
    Ok(moments_at(failure, beta.eval(t)))
}

pub(crate) fn moments_at(failure: &GridFailure, beta: f64) -> RiskMoments {
    let e = group1_probability(failure.at_risk, beta);
    RiskMoments {
        e,
        v: e * (1.0 - e),
        observed: failure.group as f64,
    }
}

/// Log partial likelihood, score and information of `β` for failures whose
/// covariate is `w_j · Z`.
fn evaluate(failures: &[GridFailure], weights: &[f64], beta: f64) -> (f64, f64, f64) {
    let mut ll = 0.0;
    let mut u = 0.0;
    let mut info = 0.0;
    for (f, &w) in failures.iter().zip(weights) {
        let x = beta * w;
        let z = f.group as f64;
        ll += x * z - log_denominator(f.at_risk, x);
        let e = group1_probability(f.at_risk, x);
        u += w * (z - e);
        info += w * w * e * (1.0 - e);
    }
    (ll, u, info)
}

/// Newton–Raphson with step halving, started at 0.
pub(crate) fn newton(failures: &[GridFailure], weights: &[f64]) -> PartialLikFit {
    let mut beta = 0.0;
    let (mut ll, mut u, mut info) = evaluate(failures, weights, beta);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        if u.abs() < SCORE_TOLERANCE {
            converged = true;
            break;
        }
        if info <= 0.0 || !info.is_finite() {
            // flat or saturated likelihood: push to the cap
            beta = BETA_CAP.copysign(u);
            (ll, u, info) = evaluate(failures, weights, beta);
            iterations += 1;
            if u * beta > 0.0 || u == 0.0 {
                break;
            }
            continue;
        }
        iterations += 1;
        let mut step = u / info;
        let mut cand = (beta + step).clamp(-BETA_CAP, BETA_CAP);
        let mut next = evaluate(failures, weights, cand);
        let mut halvings = 0;
        while next.0 < ll - 1e-12 && halvings < 40 {
            step *= 0.5;
            cand = (beta + step).clamp(-BETA_CAP, BETA_CAP);
            next = evaluate(failures, weights, cand);
            halvings += 1;
        }
        beta = cand;
        (ll, u, info) = next;
        if beta.abs() == BETA_CAP && u * beta > 0.0 {
            // still increasing at the cap: monotone likelihood
            break;
        }
    }
    if !converged && u.abs() < SCORE_TOLERANCE {
        converged = true;
    }
    let se = if info > 0.0 {
        info.sqrt().recip()
    } else {
        f64::INFINITY
    };
    PartialLikFit {
        beta_hat: beta,
        se,
        loglik: ll,
        iterations,
        converged,
    }
}

/// Proportional-hazards fit of a constant log hazard ratio.
pub fn fit_constant(ts: &TimeScale) -> PartialLikFit {
    let weights = vec![1.0; ts.k()];
    newton(ts.grid(), &weights)
}

/// Fits `β0` in `β(t) = β0 · b(t)`, i.e. a PH model with covariate `Z·b(t)`.
pub fn fit_scaled_shape(ts: &TimeScale, shape: impl Fn(f64) -> f64) -> Result<PartialLikFit> {
    let weights: Vec<f64> = (1..=ts.k()).map(|j| shape(ts.unit(j))).collect();
    if weights.iter().all(|w| *w == 0.0) {
        return Err(Error::DegenerateShape);
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Numeric("shape is not finite on the grid".into()));
    }
    Ok(newton(ts.grid(), &weights))
}

/// Split log likelihood with separate constant coefficients on each side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitFit {
    pub s: f64,
    /// Failures with unit time `<= s`.
    pub before: usize,
    pub loglik: f64,
    pub beta_before: f64,
    pub beta_after: f64,
}

/// `L(s)`: failures at unit times `<= s` get `β1`, later ones `β2`, each
/// fitted by partial likelihood on its own segment.
pub fn loglik_split(ts: &TimeScale, s: f64, min_seg: usize) -> Result<SplitFit> {
    let k = ts.k();
    let before = (1..=k).take_while(|&j| ts.unit(j) <= s).count();
    let after = k - before;
    let lo = min_seg as f64 / k as f64;
    let in_range = s >= lo - 1e-12 && s <= 1.0 - lo + 1e-12;
    if !in_range || before < min_seg || after < min_seg {
        return Err(Error::SegmentTooSmall {
            before,
            after,
            min_seg,
        });
    }
    Ok(split_at(ts, before))
}

/// Split after the first `before` grid failures; no size checks.
pub(crate) fn split_at(ts: &TimeScale, before: usize) -> SplitFit {
    let grid = ts.grid();
    let ones = vec![1.0; grid.len()];
    let first = newton(&grid[..before], &ones[..before]);
    let second = newton(&grid[before..], &ones[before..]);
    SplitFit {
        s: ts.unit(before),
        before,
        loglik: first.loglik + second.loglik,
        beta_before: first.beta_hat,
        beta_after: second.beta_hat,
    }
}
