//! Predictive strength (explained variation, concordance, relative risk) and
//! model-based conditional survival curves.

use serde::Serialize;

use crate::dataset::{kaplan_meier, CurveKind, StepCurve, SurvivalRecord, TrialData};
use crate::error::{Error, Result};
use crate::score::group1_probability;
use crate::timescale::TimeScale;
use crate::transform::BetaFunction;

/// Explained variation: one minus the ratio of squared residuals
/// `Σ (Z - E_β(Z|t))²` under `β(t)` to those under `β = 0`, over the grid
/// failures. Unclamped; may be negative for a poor model.
pub fn r2(ts: &TimeScale, beta: &BetaFunction) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (j, f) in ts.grid().iter().enumerate() {
        let z = f.group as f64;
        let e = group1_probability(f.at_risk, beta.eval(ts.unit(j + 1)));
        let e0 = group1_probability(f.at_risk, 0.0);
        num += (z - e) * (z - e);
        den += (z - e0) * (z - e0);
    }
    if den <= 0.0 {
        return Err(Error::NoInformativeFailures);
    }
    Ok(1.0 - num / den)
}

/// Reporting form of R²: clamped at zero.
pub fn r2_reported(raw: f64) -> f64 {
    raw.max(0.0)
}

/// `P(T_A > T_B)` when `A` has log hazard ratio `beta` relative to `B`
/// under proportional hazards: `1 / (1 + e^β)`.
pub fn kappa_ph(beta: f64) -> f64 {
    if beta >= 0.0 {
        let w = (-beta).exp();
        w / (1.0 + w)
    } else {
        1.0 / (1.0 + beta.exp())
    }
}

/// `P(T_A > T_B)` for `T_B` unit exponential and `T_A` with log hazard ratio
/// `log_hr[s]` on segment `s` of the time axis cut at `breaks`.
///
/// Each segment `[a, b)` contributes `S_A(a) e^{-a} (1 - e^{-(1+h)(b-a)})/(1+h)`.
pub fn kappa_piecewise_multi(breaks: &[f64], log_hr: &[f64]) -> Result<f64> {
    if log_hr.len() != breaks.len() + 1 {
        return Err(Error::InvalidArgument(
            "need one log hazard ratio per segment".into(),
        ));
    }
    if breaks.iter().any(|b| !(*b > 0.0)) || breaks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "breaks must be positive and increasing".into(),
        ));
    }
    let mut kappa = 0.0;
    let mut start = 0.0;
    // log of S_A(start) e^{-start}
    let mut log_mass = 0.0f64;
    for (s, &b) in log_hr.iter().enumerate() {
        let h = b.exp();
        let rate = 1.0 + h;
        match breaks.get(s) {
            Some(&end) => {
                let len = end - start;
                kappa += log_mass.exp() * (-(-rate * len).exp_m1()) / rate;
                log_mass -= rate * len;
                start = end;
            }
            None => kappa += log_mass.exp() / rate,
        }
    }
    Ok(kappa)
}

/// Single-changepoint concordance with the change at `tau_e` on the
/// unit-exponential time scale of the reference arm.
pub fn kappa_piecewise(tau_e: f64, beta1: f64, beta2: f64) -> Result<f64> {
    kappa_piecewise_multi(&[tau_e], &[beta1, beta2])
}

/// Relative risk `κ / (1 - κ)`.
pub fn psi(kappa: f64) -> Result<f64> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "concordance must lie in (0, 1), got {kappa}"
        )));
    }
    Ok(kappa / (1.0 - kappa))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictSummary {
    pub r2: f64,
    pub kappa: f64,
    pub psi: f64,
    pub model: BetaFunction,
}

/// Model-based cumulative hazards and survival curves per arm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalCurves {
    pub hazard: [StepCurve; 2],
    pub survival: [StepCurve; 2],
}

/// `Λ(t; G) = Σ_{X_i <= t} δ_i e^{β(X_i) G} / Σ_j Y_j(X_i) e^{β(X_i) Z_j}`
/// with `β` given on the original time scale.
pub fn conditional_survival_with(
    data: &TrialData,
    beta_at: impl Fn(f64) -> f64,
) -> ConditionalCurves {
    let recs = data.records();
    let mut at_risk = [data.group_count(0), data.group_count(1)];
    let mut times = Vec::new();
    let mut cum = [Vec::new(), Vec::new()];
    let mut total = [0.0f64; 2];
    let mut i = 0;
    while i < recs.len() {
        let t = recs[i].time;
        let mut j = i;
        let mut d = 0usize;
        while j < recs.len() && recs[j].time == t {
            d += recs[j].event as usize;
            j += 1;
        }
        if d > 0 {
            let b = beta_at(t);
            for g in 0..2 {
                // e^{βG} / (n_G e^{βG} + n_other e^{β(1-G)}), divided through
                let other = 1 - g;
                let den = at_risk[g] as f64
                    + at_risk[other] as f64 * (b * (other as f64 - g as f64)).exp();
                total[g] += d as f64 / den;
                cum[g].push(total[g]);
            }
            times.push(t);
        }
        for r in &recs[i..j] {
            at_risk[r.group as usize] -= 1;
        }
        i = j;
    }
    let [c0, c1] = cum;
    let hazard = [
        StepCurve {
            kind: CurveKind::CumulativeHazard,
            times: times.clone(),
            values: c0,
        },
        StepCurve {
            kind: CurveKind::CumulativeHazard,
            times,
            values: c1,
        },
    ];
    let survival = [hazard[0].to_survival(), hazard[1].to_survival()];
    ConditionalCurves { hazard, survival }
}

/// Conditional curves under a fitted `β̂(t)` on the unit scale.
pub fn conditional_survival(
    data: &TrialData,
    ts: &TimeScale,
    beta: &BetaFunction,
) -> ConditionalCurves {
    conditional_survival_with(data, |t| beta.eval(ts.to_unit(t)))
}

/// Subjects still under observation after `t0`, clock restarted at `t0`.
pub fn landmark_data(data: &TrialData, t0: f64) -> Result<TrialData> {
    let records: Vec<SurvivalRecord> = data
        .records()
        .iter()
        .filter(|r| r.time > t0)
        .map(|r| SurvivalRecord {
            time: r.time - t0,
            ..*r
        })
        .collect();
    for g in 0..2u8 {
        if !records.iter().any(|r| r.group == g) {
            return Err(Error::EmptyStratum);
        }
    }
    TrialData::new(records)
}

/// Per-arm Kaplan–Meier curves conditional on survival past `t0`.
pub fn landmark(data: &TrialData, t0: f64) -> Result<[StepCurve; 2]> {
    let sub = landmark_data(data, t0)?;
    Ok([kaplan_meier(&sub, Some(0))?, kaplan_meier(&sub, Some(1))?])
}
