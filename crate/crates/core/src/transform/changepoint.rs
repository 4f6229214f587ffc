//! Piecewise proportional-hazards approximations: changepoint scan, chord
//! ("Euler") slopes of the effect process and the rescaled covariate.
//!
//! Segment convention: a grid failure at unit time `t <= τ` belongs to the
//! first segment. The scan likelihood, the chord slopes (which run through
//! `U*(τ)`) and the fitted `β̂(t)` all use it.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::predict::r2;
use crate::process::{effect_path, EffectPath};
use crate::score::{
    fit_constant, fit_scaled_shape, newton, split_at, PartialLikFit, SplitFit, DEFAULT_MIN_SEG,
};
use crate::timescale::TimeScale;

use super::BetaFunction;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanOptions {
    pub min_seg: usize,
    pub exec: Exec,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            min_seg: DEFAULT_MIN_SEG,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangepointFit {
    pub tau: f64,
    pub tau_original: f64,
    pub slope_before: f64,
    pub slope_after: f64,
    /// `slope_after / slope_before`.
    pub ratio: f64,
    pub beta0: f64,
    pub r2: f64,
    /// `L(τ) - L_constant`.
    pub loglik_gain: f64,
    pub split: SplitFit,
    pub beta: BetaFunction,
    pub fit: PartialLikFit,
}

/// Chord slopes of the process on `[0, τ]` and `[τ, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EulerSlopes {
    pub before: f64,
    pub after: f64,
    /// `None` when `before == 0`.
    pub ratio: Option<f64>,
}

pub fn euler_slopes(path: &EffectPath, tau: f64) -> Result<EulerSlopes> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "changepoint must lie in (0, 1), got {tau}"
        )));
    }
    let at_tau = path.value_at(tau);
    let before = at_tau / tau;
    let after = (path.end() - at_tau) / (1.0 - tau);
    let ratio = (before != 0.0).then(|| after / before);
    Ok(EulerSlopes {
        before,
        after,
        ratio,
    })
}

/// Piecewise-linear interpolation of the process through `0`, `τ` and `1`,
/// evaluated on the grid.
pub fn piecewise_path(path: &EffectPath, tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "changepoint must lie in (0, 1), got {tau}"
        )));
    }
    let at_tau = path.value_at(tau);
    let end = path.end();
    Ok((0..=path.k())
        .map(|j| piecewise_value(path.time(j), tau, at_tau, end))
        .collect())
}

pub(crate) fn piecewise_value(t: f64, tau: f64, at_tau: f64, end: f64) -> f64 {
    if t < tau {
        t * at_tau / tau
    } else {
        ((t - tau) * end + at_tau * (1.0 - t)) / (1.0 - tau)
    }
}

/// Time-dependent covariate of the equivalent PH model: `z` up to `τ`,
/// `ratio · z` after.
pub fn zp_covariate(z: f64, tau: f64, ratio: f64, t: f64) -> f64 {
    if t <= tau {
        z
    } else {
        ratio * z
    }
}

/// Scale of `β(t) = β0 (I{t<=τ} + ratio I{t>τ})` by partial likelihood.
pub fn fit_piecewise(ts: &TimeScale, tau: f64, ratio: f64) -> Result<(BetaFunction, PartialLikFit)> {
    let fit = fit_scaled_shape(ts, |t| zp_covariate(1.0, tau, ratio, t))?;
    Ok((BetaFunction::single_change(fit.beta_hat, tau, ratio), fit))
}

fn check_scan_size(k: usize, min_seg: usize, segments: usize) -> Result<()> {
    if min_seg == 0 || k < segments * min_seg {
        return Err(Error::SegmentTooSmall {
            before: k / segments,
            after: k - k / segments,
            min_seg,
        });
    }
    Ok(())
}

/// Scans every admissible grid point for the split maximising `L(s)`.
pub fn scan_splits(ts: &TimeScale, opts: &ScanOptions) -> Result<Vec<SplitFit>> {
    let k = ts.k();
    let m = opts.min_seg;
    check_scan_size(k, m, 2)?;
    let first = m;
    let count = k - 2 * m + 1;
    Ok(opts.exec.map(count, |i| split_at(ts, first + i)))
}

fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

/// Single-changepoint nph2ph approximation.
pub fn find_changepoint(ts: &TimeScale, opts: &ScanOptions) -> Result<ChangepointFit> {
    let splits = scan_splits(ts, opts)?;
    let best = splits[argmax_first(splits.iter().map(|s| s.loglik))];
    let path = effect_path(ts, &BetaFunction::zero())?;
    changepoint_from_split(ts, &path, best)
}

fn changepoint_from_split(ts: &TimeScale, path: &EffectPath, split: SplitFit) -> Result<ChangepointFit> {
    let tau = split.s;
    let slopes = euler_slopes(path, tau)?;
    let ratio = slopes.ratio.ok_or(Error::UndefinedRatio)?;
    let (beta, fit) = fit_piecewise(ts, tau, ratio)?;
    let r2 = r2(ts, &beta)?;
    let constant = fit_constant(ts);
    Ok(ChangepointFit {
        tau,
        tau_original: ts.from_unit(tau),
        slope_before: slopes.before,
        slope_after: slopes.after,
        ratio,
        beta0: fit.beta_hat,
        r2,
        loglik_gain: split.loglik - constant.loglik,
        split,
        beta,
        fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiChangepointFit {
    pub changepoints: Vec<ChangepointFit>,
    pub beta: BetaFunction,
    pub fit: PartialLikFit,
    pub r2: f64,
    /// Maximised segmented log likelihood.
    pub loglik: f64,
    pub loglik_gain: f64,
}

/// One or two changepoints; two are found by exhaustive search over ordered
/// grid pairs of the three-segment likelihood.
pub fn multi_changepoint(ts: &TimeScale, count: usize, opts: &ScanOptions) -> Result<MultiChangepointFit> {
    match count {
        1 => {
            let cp = find_changepoint(ts, opts)?;
            Ok(MultiChangepointFit {
                beta: cp.beta.clone(),
                fit: cp.fit,
                r2: cp.r2,
                loglik: cp.split.loglik,
                loglik_gain: cp.loglik_gain,
                changepoints: vec![cp],
            })
        }
        2 => two_changepoints(ts, opts),
        _ => Err(Error::InvalidArgument(format!(
            "changepoint count must be 1 or 2, got {count}"
        ))),
    }
}

fn two_changepoints(ts: &TimeScale, opts: &ScanOptions) -> Result<MultiChangepointFit> {
    let k = ts.k();
    let m = opts.min_seg;
    check_scan_size(k, m, 3)?;
    let grid = ts.grid();
    let ones = vec![1.0; k];
    let segment = |a: usize, b: usize| newton(&grid[a..b], &ones[a..b]).loglik;
    // first cut a in [m, k - 2m], second cut b in [a + m, k - m]
    let firsts: Vec<usize> = (m..=k - 2 * m).collect();
    let head: Vec<f64> = opts.exec.map_slice(&firsts, |&a| segment(0, a));
    let tail: Vec<f64> = opts.exec.map(k + 1, |b| {
        if b >= 2 * m && b <= k - m {
            segment(b, k)
        } else {
            f64::NEG_INFINITY
        }
    });
    let rows: Vec<(f64, usize)> = opts.exec.map(firsts.len(), |i| {
        let a = firsts[i];
        let mut best = (f64::NEG_INFINITY, a + m);
        for b in a + m..=k - m {
            let total = head[i] + segment(a, b) + tail[b];
            if total > best.0 {
                best = (total, b);
            }
        }
        best
    });
    let best_row = argmax_first(rows.iter().map(|r| r.0));
    let (loglik, b) = rows[best_row];
    let a = firsts[best_row];
    let (tau1, tau2) = (ts.unit(a), ts.unit(b));

    let path = effect_path(ts, &BetaFunction::zero())?;
    let (u1, u2, u_end) = (path.value_at(tau1), path.value_at(tau2), path.end());
    let s1 = u1 / tau1;
    let s2 = (u2 - u1) / (tau2 - tau1);
    let s3 = (u_end - u2) / (1.0 - tau2);
    if s1 == 0.0 {
        return Err(Error::UndefinedRatio);
    }
    let multipliers = vec![1.0, s2 / s1, s3 / s1];
    let shape = BetaFunction::Piecewise {
        beta0: 1.0,
        taus: vec![tau1, tau2],
        multipliers: multipliers.clone(),
    };
    let fit = fit_scaled_shape(ts, |t| shape.eval(t))?;
    let beta = shape.scaled(fit.beta_hat);
    let r2 = r2(ts, &beta)?;
    let constant = fit_constant(ts);
    let gain = loglik - constant.loglik;
    let split1 = split_at(ts, a);
    let split2 = split_at(ts, b);
    let local = |tau: f64, before: f64, after: f64, split: SplitFit| ChangepointFit {
        tau,
        tau_original: ts.from_unit(tau),
        slope_before: before,
        slope_after: after,
        ratio: after / before,
        beta0: fit.beta_hat,
        r2,
        loglik_gain: gain,
        split,
        beta: beta.clone(),
        fit,
    };
    Ok(MultiChangepointFit {
        changepoints: vec![local(tau1, s1, s2, split1), local(tau2, s2, s3, split2)],
        beta,
        fit,
        r2,
        loglik,
        loglik_gain: gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_from(values: Vec<f64>) -> EffectPath {
        let k = values.len() - 1;
        EffectPath {
            values,
            beta_values: vec![0.0; k],
        }
    }

    #[test]
    fn chord_arithmetic() {
        // U(0.5) = -2, U(1) = -2
        let p = path_from(vec![0.0, -1.0, -2.0, -2.5, -2.0]);
        let s = euler_slopes(&p, 0.5).unwrap();
        assert_eq!(s.before, -4.0);
        assert_eq!(s.after, 0.0);
        assert_eq!(s.ratio, Some(0.0));
        let lin = path_from(vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(euler_slopes(&lin, 0.25).unwrap().ratio, Some(1.0));
        let flat = path_from(vec![0.0, 0.0, 0.0, 1.0, 2.0]);
        assert_eq!(euler_slopes(&flat, 0.5).unwrap().ratio, None);
    }

    #[test]
    fn piecewise_path_interpolates() {
        let p = path_from(vec![0.0, 0.4, -0.3, -1.2, 0.7, 0.2, -0.9]);
        let tau = 3.0 / 6.0;
        let up = piecewise_path(&p, tau).unwrap();
        assert_eq!(up[0], 0.0);
        assert_eq!(up[3], p.values[3]);
        assert_eq!(up[6], p.values[6]);
        let at = p.value_at(tau);
        let left = piecewise_value(tau - 1e-13, tau, at, p.end());
        let right = piecewise_value(tau, tau, at, p.end());
        assert!((left - right).abs() < 1e-12);
    }

    #[test]
    fn zp_rescaling() {
        assert_eq!(zp_covariate(1.0, 0.46, -0.024, 0.2), 1.0);
        assert_eq!(zp_covariate(1.0, 0.46, -0.024, 0.8), -0.024);
        assert_eq!(zp_covariate(0.0, 0.46, -0.024, 0.8), 0.0);
        for t in [0.1, 0.5, 0.9] {
            assert_eq!(zp_covariate(1.0, 0.3, 1.0, t), 1.0);
        }
    }
}
