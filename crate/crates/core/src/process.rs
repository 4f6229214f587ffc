//! The treatment-effect process, its bridged and standardized forms, and the
//! tail approximations behind the confidence bands.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::moments_at;
use crate::timescale::TimeScale;
use crate::transform::BetaFunction;

pub const DEFAULT_EPS: (f64, f64) = (0.05, 0.95);
pub const KOLMOGOROV_TERMS: usize = 10;
const BISECTION_TOL: f64 = 1e-10;

/// Standardized cumulative sum of `(Z - E)/sqrt(V)` over the grid failures.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectPath {
    /// `U*(j/k)` for `j = 0..=k`; the first entry is 0.
    pub values: Vec<f64>,
    /// Coefficient used at each grid failure.
    pub beta_values: Vec<f64>,
}

impl EffectPath {
    pub fn k(&self) -> usize {
        self.values.len() - 1
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 / self.k() as f64
    }

    pub fn end(&self) -> f64 {
        self.values[self.k()]
    }

    /// Linear interpolation between grid points.
    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.k() as f64;
        let x = (t.clamp(0.0, 1.0)) * k;
        let j = (x.floor() as usize).min(self.k());
        if j == self.k() {
            return self.values[j];
        }
        let frac = x - j as f64;
        if frac == 0.0 {
            return self.values[j];
        }
        self.values[j] + frac * (self.values[j + 1] - self.values[j])
    }
}

/// Effect process under `β(t)` given on the unit scale.
pub fn effect_path(ts: &TimeScale, beta: &BetaFunction) -> Result<EffectPath> {
    let betas: Vec<f64> = (1..=ts.k()).map(|j| beta.eval(ts.unit(j))).collect();
    effect_path_from_values(ts, betas)
}

/// Effect process under a coefficient given on the original time scale.
pub fn effect_path_original(ts: &TimeScale, beta: impl Fn(f64) -> f64) -> Result<EffectPath> {
    let betas: Vec<f64> = ts.grid().iter().map(|g| beta(g.time)).collect();
    effect_path_from_values(ts, betas)
}

fn effect_path_from_values(ts: &TimeScale, beta_values: Vec<f64>) -> Result<EffectPath> {
    let k = ts.k();
    let scale = (k as f64).sqrt().recip();
    let mut values = Vec::with_capacity(k + 1);
    values.push(0.0);
    let mut acc = 0.0;
    for (j, (failure, &b)) in ts.grid().iter().zip(&beta_values).enumerate() {
        let m = moments_at(failure, b);
        if m.v <= 0.0 {
            return Err(Error::ZeroVariance(j + 1));
        }
        acc += (m.observed - m.e) / m.v.sqrt();
        values.push(acc * scale);
    }
    Ok(EffectPath {
        values,
        beta_values,
    })
}

/// Tied-down process `U0(t) = U*(t) - t U*(1)` with sup statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BridgePath {
    pub values: Vec<f64>,
    /// `U0(t)/sqrt(t(1-t))` at grid points inside `[eps1, eps2]`, else `None`.
    pub standardized: Vec<Option<f64>>,
    pub sup_raw: f64,
    pub sup_std: f64,
    pub eps1: f64,
    pub eps2: f64,
}

impl BridgePath {
    pub fn k(&self) -> usize {
        self.values.len() - 1
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 / self.k() as f64
    }
}

fn check_eps(eps1: f64, eps2: f64) -> Result<()> {
    if eps1 > 0.0 && eps1 < eps2 && eps2 < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidEpsilon(eps1, eps2))
    }
}

pub fn bridge(path: &EffectPath, eps1: f64, eps2: f64) -> Result<BridgePath> {
    check_eps(eps1, eps2)?;
    let end = path.end();
    let k = path.k();
    let values: Vec<f64> = (0..=k)
        .map(|j| {
            if j == 0 || j == k {
                0.0
            } else {
                path.values[j] - path.time(j) * end
            }
        })
        .collect();
    let standardized: Vec<Option<f64>> = values
        .iter()
        .enumerate()
        .map(|(j, v)| {
            let t = path.time(j);
            (t >= eps1 && t <= eps2).then(|| v / (t * (1.0 - t)).sqrt())
        })
        .collect();
    let sup_raw = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sup_std = standardized
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(BridgePath {
        values,
        standardized,
        sup_raw,
        sup_std,
        eps1,
        eps2,
    })
}

/// `P{sup |B| >= a}` for a Brownian bridge: `2 Σ (-1)^{k+1} exp(-2k²a²)`.
pub fn kolmogorov_exceed(a: f64, terms: usize) -> f64 {
    if a <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=terms {
        let k = k as f64;
        let term = (-2.0 * k * k * a * a).exp();
        sum += if k as usize % 2 == 1 { term } else { -term };
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn normal_density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Two-sided exceedance probability of the standardized bridge on
/// `(eps1, eps2)` (Miller–Siegmund). Returns 1 for `a <= 1`, outside the
/// regime of the approximation.
pub fn ms_exceed(a: f64, eps1: f64, eps2: f64) -> Result<f64> {
    check_eps(eps1, eps2)?;
    if a <= 1.0 {
        return Ok(1.0);
    }
    let phi = normal_density(a);
    let log_ratio = (eps2 * (1.0 - eps1) / (eps1 * (1.0 - eps2))).ln();
    let p = 4.0 * phi / a + phi * (a - 1.0 / a) * log_ratio;
    Ok(p.clamp(0.0, 1.0))
}

/// Bisection for the root of a decreasing `f` on `[lo, hi]`.
fn bisect_decreasing(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if f(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A symmetric confidence band for the bridge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub level: f64,
    pub standardized: bool,
    pub threshold: f64,
    pub eps1: f64,
    pub eps2: f64,
}

impl BandSpec {
    /// Half-width at `t`; `None` where a standardized band is undefined.
    pub fn half_width(&self, t: f64) -> Option<f64> {
        if !self.standardized {
            Some(self.threshold)
        } else if t >= self.eps1 && t <= self.eps2 {
            Some(self.threshold * (t * (1.0 - t)).sqrt())
        } else {
            None
        }
    }

    pub fn label(&self) -> String {
        let kind = if self.standardized { "std" } else { "raw" };
        format!("{}_{kind}", self.level)
    }
}

/// Band whose threshold makes the tail probability equal `1 - level`.
pub fn band(level: f64, standardized: bool, eps1: f64, eps2: f64) -> Result<BandSpec> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "band level must lie in (0, 1), got {level}"
        )));
    }
    check_eps(eps1, eps2)?;
    let target = 1.0 - level;
    let threshold = if standardized {
        // the approximation rises just above a = 1; bisect on its
        // decreasing branch
        let lo = (0..=400)
            .map(|i| 1.0 + i as f64 * 0.01)
            .max_by(|a, b| {
                let fa = raw_ms(*a, eps1, eps2);
                let fb = raw_ms(*b, eps1, eps2);
                fa.total_cmp(&fb)
            })
            .unwrap_or(1.0);
        bisect_decreasing(|a| raw_ms(a, eps1, eps2), target, lo, 40.0)
    } else {
        bisect_decreasing(|a| kolmogorov_exceed(a, KOLMOGOROV_TERMS), target, 0.0, 10.0)
    };
    Ok(BandSpec {
        level,
        standardized,
        threshold,
        eps1,
        eps2,
    })
}

fn raw_ms(a: f64, eps1: f64, eps2: f64) -> f64 {
    let phi = normal_density(a);
    let log_ratio = (eps2 * (1.0 - eps1) / (eps1 * (1.0 - eps2))).ln();
    4.0 * phi / a + phi * (a - 1.0 / a) * log_ratio
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandCheck {
    pub band: BandSpec,
    pub exceeded: bool,
    /// Unit time of the first grid point outside the band.
    pub first_exceedance: Option<f64>,
    /// Tail probability of the observed sup statistic.
    pub tail_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub sup_raw: f64,
    pub sup_std: f64,
    pub checks: Vec<BandCheck>,
}

impl Diagnostic {
    pub fn exceeded(&self, level: f64, standardized: bool) -> Option<bool> {
        self.checks
            .iter()
            .find(|c| c.band.level == level && c.band.standardized == standardized)
            .map(|c| c.exceeded)
    }
}

/// Compares the bridge of `path` with each band.
pub fn fit_diagnostic(path: &EffectPath, bands: &[BandSpec], eps: (f64, f64)) -> Result<Diagnostic> {
    let br = bridge(path, eps.0, eps.1)?;
    let mut checks = Vec::with_capacity(bands.len());
    for b in bands {
        let mut first = None;
        for j in 0..=br.k() {
            let t = br.time(j);
            if let Some(hw) = b.half_width(t) {
                if br.values[j].abs() > hw {
                    first = Some(t);
                    break;
                }
            }
        }
        let tail_probability = if b.standardized {
            let sup = band_sup_std(&br, b.eps1, b.eps2);
            ms_exceed(sup, b.eps1, b.eps2)?
        } else {
            kolmogorov_exceed(br.sup_raw, KOLMOGOROV_TERMS)
        };
        checks.push(BandCheck {
            band: b.clone(),
            exceeded: first.is_some(),
            first_exceedance: first,
            tail_probability,
        });
    }
    Ok(Diagnostic {
        sup_raw: br.sup_raw,
        sup_std: br.sup_std,
        checks,
    })
}

fn band_sup_std(br: &BridgePath, eps1: f64, eps2: f64) -> f64 {
    if eps1 == br.eps1 && eps2 == br.eps2 {
        return br.sup_std;
    }
    (0..=br.k())
        .filter(|&j| br.time(j) >= eps1 && br.time(j) <= eps2)
        .map(|j| {
            let t = br.time(j);
            (br.values[j] / (t * (1.0 - t)).sqrt()).abs()
        })
        .fold(0.0, f64::max)
}

/// `t, u_star, u_bridge, u_bridge_std, <band>_lo, <band>_hi, …` rows.
pub fn path_tsv(path: &EffectPath, bands: &[BandSpec], eps: (f64, f64)) -> Result<String> {
    let br = bridge(path, eps.0, eps.1)?;
    let mut out = String::from("t\tu_star\tu_bridge\tu_bridge_std");
    for b in bands {
        let _ = write!(out, "\tband_{0}_lo\tband_{0}_hi", b.label());
    }
    out.push('\n');
    for j in 0..=path.k() {
        let t = path.time(j);
        let _ = write!(out, "{t}\t{}\t{}\t", path.values[j], br.values[j]);
        match br.standardized[j] {
            Some(v) => {
                let _ = write!(out, "{v}");
            }
            None => out.push_str("NA"),
        }
        for b in bands {
            match b.half_width(t) {
                Some(hw) => {
                    let _ = write!(out, "\t{}\t{hw}", -hw);
                }
                None => out.push_str("\tNA\tNA"),
            }
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{SurvivalRecord, TrialData};

    fn path_from(values: Vec<f64>) -> EffectPath {
        let k = values.len() - 1;
        EffectPath {
            values,
            beta_values: vec![0.0; k],
        }
    }

    #[test]
    fn single_failure_hand_value() {
        let d = TrialData::new(vec![
            SurvivalRecord {
                time: 1.0,
                event: true,
                group: 1,
            },
            SurvivalRecord {
                time: 2.0,
                event: false,
                group: 0,
            },
        ])
        .unwrap();
        let ts = TimeScale::build(&d).unwrap();
        let p = effect_path(&ts, &BetaFunction::zero()).unwrap();
        assert_eq!(p.values, vec![0.0, 1.0]);
    }

    #[test]
    fn bridge_endpoints_and_linear_paths() {
        let p = path_from(vec![0.0, 0.3, -0.7, 1.1, 0.4]);
        let b = bridge(&p, 0.05, 0.95).unwrap();
        assert_eq!(b.values[0], 0.0);
        assert_eq!(b.values[4], 0.0);
        let lin = path_from((0..=8).map(|j| 2.0 * j as f64 / 8.0).collect());
        let b = bridge(&lin, 0.05, 0.95).unwrap();
        assert!(b.values.iter().all(|v| v.abs() < 1e-15));
        assert_eq!(
            bridge(&p, 0.5, 0.4).unwrap_err(),
            Error::InvalidEpsilon(0.5, 0.4)
        );
    }

    #[test]
    fn interpolation() {
        let p = path_from(vec![0.0, 1.0, 3.0]);
        assert_eq!(p.value_at(0.25), 0.5);
        assert_eq!(p.value_at(0.75), 2.0);
        assert_eq!(p.value_at(1.0), 3.0);
    }

    #[test]
    fn kolmogorov_values() {
        assert_eq!(kolmogorov_exceed(0.0, 10), 1.0);
        // leading term only matters here: 2 exp(-18)
        let p3 = kolmogorov_exceed(3.0, 10);
        assert!((p3 - 2.0 * (-18.0f64).exp()).abs() < 1e-20);
        assert!((p3 - 3.05e-8).abs() < 1e-10);
        let a = (20.0f64.ln() / 2.0).sqrt();
        assert!((kolmogorov_exceed(a, 10) - 0.1).abs() < 5e-4);
    }

    #[test]
    fn kolmogorov_two_term_error_bound() {
        for i in 0..200 {
            let a = 0.5 + i as f64 * 0.02;
            let diff = (kolmogorov_exceed(a, 2) - kolmogorov_exceed(a, 10)).abs();
            assert!(diff <= 2.0 * (-8.0 * a * a).exp());
        }
    }

    #[test]
    fn ms_properties() {
        let a = ms_exceed(2.5, 0.05, 0.95).unwrap();
        let b = ms_exceed(2.5, 1.0 - 0.95, 1.0 - 0.05).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(ms_exceed(40.0, 0.05, 0.95).unwrap() < 1e-100);
        assert!(ms_exceed(2.0, 0.95, 0.05).is_err());
    }

    #[test]
    fn band_thresholds() {
        let b90 = band(0.90, false, 0.05, 0.95).unwrap();
        assert!((b90.threshold - 1.2239).abs() < 1e-3);
        let b999 = band(0.999, false, 0.05, 0.95).unwrap();
        assert!((b999.threshold - 1.9495).abs() < 1e-3);
        assert!((kolmogorov_exceed(b90.threshold, 10) - 0.1).abs() < 1e-9);
        let s = band(0.90, true, 0.05, 0.95).unwrap();
        assert!((ms_exceed(s.threshold, 0.05, 0.95).unwrap() - 0.1).abs() < 1e-9);
        for t in [0.05, 0.95] {
            assert_eq!(s.half_width(t), Some(s.threshold * (t * (1.0 - t)).sqrt()));
        }
        assert_eq!(s.half_width(0.01), None);
    }

    #[test]
    fn zero_bridge_never_exceeds() {
        let p = path_from(vec![0.0; 21]);
        let bands = [
            band(0.9, false, 0.05, 0.95).unwrap(),
            band(0.9, true, 0.05, 0.95).unwrap(),
        ];
        let d = fit_diagnostic(&p, &bands, DEFAULT_EPS).unwrap();
        assert!(d.checks.iter().all(|c| !c.exceeded));
        assert_eq!(d.checks[0].tail_probability, 1.0);
    }

    #[test]
    fn tsv_is_rectangular() {
        let p = path_from(vec![0.0, 0.5, -0.2, 0.1, 0.0]);
        let bands = [band(0.9, true, 0.3, 0.7).unwrap()];
        let tsv = path_tsv(&p, &bands, (0.3, 0.7)).unwrap();
        let widths: Vec<usize> = tsv.lines().map(|l| l.split('\t').count()).collect();
        assert!(widths.iter().all(|&w| w == 6));
    }
}
