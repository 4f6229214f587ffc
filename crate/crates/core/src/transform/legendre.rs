//! Legendre-polynomial approximation of the effect process.
//!
//! The polynomials are generated by the three-term recurrence starting from
//! `P0 = 1`, `P1(t) = t`, used directly on `[0, 1]`. They are not orthogonal
//! there, which least squares does not need; the design columns are scaled
//! before solving.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::predict::r2;
use crate::process::EffectPath;
use crate::score::{fit_scaled_shape, PartialLikFit};
use crate::timescale::TimeScale;

use super::BetaFunction;

pub const MAX_ORDER: usize = 8;
pub const DEFAULT_ORDER: usize = 4;
pub const DEFAULT_D2MAX: f64 = 64.0;
/// Points used to check the curvature bound.
pub const CURVATURE_GRID: usize = 1024;

/// `P_n(t)` by the recurrence `(n+1)P_{n+1} = (2n+1) t P_n - n P_{n-1}`.
pub fn legendre_eval(n: usize, t: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, t);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * t * cur - kf * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Values, first and second derivatives of `P_0..=P_m` at `t`.
pub fn legendre_derivatives(m: usize, t: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut p = vec![0.0; m + 1];
    let mut d1 = vec![0.0; m + 1];
    let mut d2 = vec![0.0; m + 1];
    p[0] = 1.0;
    if m >= 1 {
        p[1] = t;
        d1[1] = 1.0;
    }
    for n in 1..m {
        let nf = n as f64;
        let a = 2.0 * nf + 1.0;
        let b = nf + 1.0;
        p[n + 1] = (a * t * p[n] - nf * p[n - 1]) / b;
        d1[n + 1] = (a * (p[n] + t * d1[n]) - nf * d1[n - 1]) / b;
        d2[n + 1] = (a * (2.0 * d1[n] + t * d2[n]) - nf * d2[n - 1]) / b;
    }
    (p, d1, d2)
}

/// Least-squares fit of `Σ c_k (P_k(t) - P_k(0))` to the effect process.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LegendreFit {
    pub order: usize,
    /// `c_1..=c_m`; entries above `retained_order` are 0.
    pub coefficients: Vec<f64>,
    pub d2max: f64,
    /// Highest order with a nonzero coefficient after enforcing `d2max`.
    pub retained_order: usize,
    /// Scale applied to the least-squares `c_{retained_order}` (1 = none).
    pub shrink: f64,
    pub rss: f64,
}

fn curvature_of(coefficients: &[f64]) -> f64 {
    (0..CURVATURE_GRID)
        .map(|i| {
            let t = i as f64 / (CURVATURE_GRID - 1) as f64;
            let (_, _, d2) = legendre_derivatives(coefficients.len(), t);
            coefficients
                .iter()
                .zip(&d2[1..])
                .map(|(c, d)| c * d)
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max)
}

impl LegendreFit {
    pub fn path_value(&self, t: f64) -> f64 {
        let (p, _, _) = legendre_derivatives(self.order, t);
        let (p0, _, _) = legendre_derivatives(self.order, 0.0);
        self.coefficients
            .iter()
            .enumerate()
            .map(|(i, c)| c * (p[i + 1] - p0[i + 1]))
            .sum()
    }

    pub fn second_derivative(&self, t: f64) -> f64 {
        let (_, _, d2) = legendre_derivatives(self.order, t);
        self.coefficients
            .iter()
            .zip(&d2[1..])
            .map(|(c, d)| c * d)
            .sum()
    }

    /// Largest `|f''|` on the checking grid.
    pub fn max_curvature(&self) -> f64 {
        curvature_of(&self.coefficients)
    }

    /// Shape `b(t) = Σ c_k dP_k/dt` implied by the fitted path.
    pub fn shape(&self) -> BetaFunction {
        BetaFunction::PolynomialDerivative {
            coefficients: self.coefficients.clone(),
        }
    }
}

/// Design columns `P_k(t_j) - P_k(0)` with their norms.
struct Design {
    x: DMatrix<f64>,
    scaled: DMatrix<f64>,
    norms: Vec<f64>,
    y: DVector<f64>,
}

impl Design {
    fn new(path: &EffectPath, order: usize) -> Self {
        let rows = path.k() + 1;
        let (p0, _, _) = legendre_derivatives(order, 0.0);
        let mut x = DMatrix::<f64>::zeros(rows, order);
        for j in 0..rows {
            let (p, _, _) = legendre_derivatives(order, path.time(j));
            for i in 0..order {
                x[(j, i)] = p[i + 1] - p0[i + 1];
            }
        }
        let norms: Vec<f64> = (0..order).map(|i| x.column(i).norm()).collect();
        let mut scaled = x.clone();
        for (i, n) in norms.iter().enumerate() {
            if *n > 0.0 {
                scaled.column_mut(i).scale_mut(n.recip());
            }
        }
        Self {
            x,
            scaled,
            norms,
            y: DVector::from_column_slice(&path.values),
        }
    }

    /// Least squares on the first `free` columns, with column `fixed.0`
    /// held at `fixed.1`. Returns all `m` coefficients.
    fn solve(&self, free: usize, fixed: Option<(usize, f64)>) -> Result<Vec<f64>> {
        let m = self.norms.len();
        let mut coefficients = vec![0.0; m];
        let mut y = self.y.clone();
        if let Some((j, v)) = fixed {
            y -= self.x.column(j) * v;
            coefficients[j] = v;
        }
        if free == 0 {
            return Ok(coefficients);
        }
        let svd = self.scaled.columns(0, free).into_owned().svd(true, true);
        let sol = svd
            .solve(&y, 1e-12)
            .map_err(|e| Error::Numeric(format!("Legendre least squares: {e}")))?;
        for i in 0..free {
            coefficients[i] = if self.norms[i] > 0.0 {
                sol[i] / self.norms[i]
            } else {
                0.0
            };
        }
        Ok(coefficients)
    }
}

/// Least-squares path fit. If the curvature bound fails, the highest order
/// coefficient is scaled towards 0 (lower orders refitted) by bisection on
/// the largest admissible scale; if dropping it is not enough, the next
/// order is treated the same way. Order 1 has no curvature, so this ends.
pub fn fit_legendre(path: &EffectPath, order: usize, d2max: f64) -> Result<LegendreFit> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::InvalidArgument(format!(
            "Legendre order must lie in 1..={MAX_ORDER}, got {order}"
        )));
    }
    if order >= path.k() {
        return Err(Error::InvalidArgument(format!(
            "Legendre order {order} needs more than {} grid failures",
            path.k()
        )));
    }
    if !(d2max > 0.0) {
        return Err(Error::InvalidArgument("d2max must be positive".into()));
    }
    let design = Design::new(path, order);
    let mut coefficients = design.solve(order, None)?;
    let mut retained_order = order;
    let mut shrink = 1.0;
    if curvature_of(&coefficients) > d2max {
        let mut top = coefficients.clone();
        for j in (2..=order).rev() {
            let lower = design.solve(j - 1, None)?;
            if curvature_of(&lower) > d2max {
                top = lower;
                continue;
            }
            let full = top[j - 1];
            let (mut lo, mut hi) = (0.0, 1.0);
            let mut best = lower;
            for _ in 0..50 {
                let mid = 0.5 * (lo + hi);
                let cand = design.solve(j - 1, Some((j - 1, mid * full)))?;
                if curvature_of(&cand) <= d2max {
                    lo = mid;
                    best = cand;
                } else {
                    hi = mid;
                }
            }
            coefficients = best;
            retained_order = if lo > 0.0 { j } else { j - 1 };
            shrink = lo;
            break;
        }
    }
    let mut fit = LegendreFit {
        order,
        coefficients,
        d2max,
        retained_order,
        shrink,
        rss: 0.0,
    };
    fit.rss = (0..=path.k())
        .map(|j| {
            let r = path.values[j] - fit.path_value(path.time(j));
            r * r
        })
        .sum();
    Ok(fit)
}

/// `β̂(t)` implied by a Legendre path fit, rescaled by partial likelihood.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LegendreModel {
    pub path_fit: LegendreFit,
    /// Coefficients of `β̂(t) = Σ c_k dP_k/dt` on the likelihood scale.
    pub coefficients: Vec<f64>,
    pub beta: BetaFunction,
    /// Fit of the scale on the max-normalized shape.
    pub fit: PartialLikFit,
    pub norm: f64,
    pub r2: f64,
}

pub fn beta_from_legendre(fit: &LegendreFit, ts: &TimeScale) -> Result<LegendreModel> {
    let shape = fit.shape();
    let norm = (1..=ts.k())
        .map(|j| shape.eval(ts.unit(j)).abs())
        .fold(0.0, f64::max);
    if norm == 0.0 {
        return Err(Error::DegenerateShape);
    }
    let normalized = shape.scaled(norm.recip());
    let ph = fit_scaled_shape(ts, |t| normalized.eval(t))?;
    let beta = normalized.scaled(ph.beta_hat);
    let coefficients = match &beta {
        BetaFunction::PolynomialDerivative { coefficients } => coefficients.clone(),
        _ => unreachable!("scaling keeps the variant"),
    };
    let r2 = r2(ts, &beta)?;
    Ok(LegendreModel {
        path_fit: fit.clone(),
        coefficients,
        beta,
        fit: ph,
        norm,
        r2,
    })
}
