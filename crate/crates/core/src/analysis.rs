//! End-to-end re-analysis of one trial: PH fit, bridge diagnostics, nph2ph
//! approximations, predictive strength and plot series.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataset::{kaplan_meier, validate, StepCurve, TrialData, ValidationFlag};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::predict::{
    conditional_survival, kappa_piecewise_multi, kappa_ph, landmark, landmark_data, psi, r2,
    r2_reported, ConditionalCurves,
};
use crate::process::{band, bridge, effect_path, fit_diagnostic, BandSpec, EffectPath, DEFAULT_EPS};
use crate::score::{fit_constant, PartialLikFit};
use crate::simlab::{mc_kappa, HazardEffect, McResult};
use crate::timescale::TimeScale;
use crate::transform::{
    beta_from_legendre, fit_legendre, multi_changepoint, BetaFunction, LegendreModel,
    MultiChangepointFit, ScanOptions,
};
use crate::transform::legendre::{DEFAULT_D2MAX, DEFAULT_ORDER};

pub const TOOL_NAME: &str = "nph2ph";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Landmark {
    Auto,
    At(f64),
    Off,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    /// 0, 1 or 2.
    pub changepoints: usize,
    /// 0 skips the Legendre fit.
    pub legendre_order: usize,
    pub d2max: f64,
    pub bands: Vec<f64>,
    pub eps: (f64, f64),
    pub landmark: Landmark,
    pub seed: u64,
    pub kappa_pairs: usize,
    pub scan: ScanOptions,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            changepoints: 1,
            legendre_order: DEFAULT_ORDER,
            d2max: DEFAULT_D2MAX,
            bands: vec![0.90, 0.999],
            eps: DEFAULT_EPS,
            landmark: Landmark::Auto,
            seed: 1,
            kappa_pairs: 200_000,
            scan: ScanOptions::default(),
        }
    }
}

impl AnalysisOptions {
    fn exec(&self) -> Exec {
        self.scan.exec
    }
}

/// Why a field or section is null.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    NotRequested,
    NonFinite,
    MonotoneLikelihood,
    TooFewFailures,
    UndefinedRatio,
    DegenerateShape,
    EmptyStratum,
    KappaBoundary,
    NoChangepoint,
    NumericFailure,
}

impl Reason {
    fn of(err: &Error) -> Self {
        match err {
            Error::SegmentTooSmall { .. } => Reason::TooFewFailures,
            Error::InvalidArgument(_) => Reason::TooFewFailures,
            Error::UndefinedRatio => Reason::UndefinedRatio,
            Error::DegenerateShape => Reason::DegenerateShape,
            Error::EmptyStratum => Reason::EmptyStratum,
            _ => Reason::NumericFailure,
        }
    }
}

/// Null-reason bookkeeping keyed by JSON path.
#[derive(Debug, Default)]
struct Nulls(BTreeMap<String, Reason>);

impl Nulls {
    fn num(&mut self, path: &str, v: f64) -> Option<f64> {
        if v.is_finite() {
            Some(v)
        } else {
            self.0.insert(path.into(), Reason::NonFinite);
            None
        }
    }

    fn mark(&mut self, path: &str, reason: Reason) {
        self.0.insert(path.into(), reason);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputSummary {
    /// SHA-256 of the canonical CSV rendering of the sorted records.
    pub digest: String,
    pub n: usize,
    pub events: usize,
    pub group_counts: [usize; 2],
    pub group_events: [usize; 2],
    pub k: usize,
    pub excluded_failures: usize,
    pub flags: Vec<ValidationFlag>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaReport {
    pub formula: Option<f64>,
    pub monte_carlo: McResult,
    pub psi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhReport {
    pub beta_hat: Option<f64>,
    pub se: Option<f64>,
    pub hazard_ratio: Option<f64>,
    pub ci95: Option<[f64; 2]>,
    pub converged: bool,
    pub iterations: usize,
    pub r2: f64,
    pub r2_raw: f64,
    pub kappa: KappaReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandReport {
    pub level: f64,
    pub kind: String,
    pub threshold: f64,
    pub exceeded: bool,
    pub first_exceedance: Option<f64>,
    pub tail_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub eps: [f64; 2],
    pub sup_raw: f64,
    pub sup_std: f64,
    pub bands: Vec<BandReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangepointEntry {
    pub tau: f64,
    pub tau_original: f64,
    /// Reference-arm cumulative hazard at the changepoint.
    pub tau_exponential: f64,
    pub slope_before: f64,
    pub slope_after: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangepointReport {
    pub count: usize,
    pub changepoints: Vec<ChangepointEntry>,
    pub beta0: Option<f64>,
    pub segment_log_hr: Vec<f64>,
    pub beta: BetaFunction,
    pub formula: String,
    pub loglik_gain: f64,
    pub r2: f64,
    pub r2_raw: f64,
    pub kappa: KappaReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LegendreReport {
    pub order: usize,
    pub d2max: f64,
    pub retained_order: usize,
    pub shrink: f64,
    pub path_coefficients: Vec<f64>,
    pub beta_coefficients: Vec<f64>,
    pub beta: BetaFunction,
    pub r2: f64,
    pub r2_raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LandmarkReport {
    pub time: f64,
    pub n: [usize; 2],
    pub log_hr: Option<f64>,
    pub se: Option<f64>,
}

/// The machine-readable analysis artifact.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportDocument {
    pub tool: ToolInfo,
    pub seed: u64,
    /// `complete`, or `partial` when a requested stage failed numerically.
    pub status: String,
    pub input: InputSummary,
    pub ph: PhReport,
    pub diagnostics: DiagnosticsReport,
    pub changepoint: Option<ChangepointReport>,
    pub legendre: Option<LegendreReport>,
    pub landmark: Option<LandmarkReport>,
    pub curves: Vec<String>,
    /// JSON path of every null value, with its reason code.
    pub nulls: BTreeMap<String, Reason>,
}

/// A rectangular numeric table; `None` cells print as `NA`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotSeries {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl PlotSeries {
    pub fn file_name(&self) -> String {
        format!("{}.tsv", self.name)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = self.columns.join("\t");
        out.push('\n');
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate() {
                if i > 0 {
                    out.push('\t');
                }
                match cell {
                    Some(v) => {
                        let _ = write!(out, "{v}");
                    }
                    None => out.push_str("NA"),
                }
            }
            out.push('\n');
        }
        out
    }

    fn step_curves(name: &str, labels: &[&str], curves: &[&StepCurve]) -> Self {
        let mut times: Vec<f64> = curves.iter().flat_map(|c| c.times.iter().copied()).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        times.insert(0, 0.0);
        let rows = times
            .iter()
            .map(|&t| {
                let mut row = vec![Some(t)];
                row.extend(curves.iter().map(|c| Some(c.eval(t))));
                row
            })
            .collect();
        let mut columns = vec!["t".to_string()];
        columns.extend(labels.iter().map(|s| s.to_string()));
        Self {
            name: name.into(),
            columns,
            rows,
        }
    }
}

/// Report plus the plot series it references.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub report: ReportDocument,
    pub series: Vec<PlotSeries>,
}

pub fn digest(data: &TrialData) -> String {
    let hash = Sha256::digest(data.to_csv().as_bytes());
    hash.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Runs the pipeline. Fails only when no time scale can be built; later
/// stage failures become null sections with reason codes.
pub fn analyze(data: &TrialData, opts: &AnalysisOptions) -> Result<Analysis> {
    if opts.changepoints > 2 {
        return Err(Error::InvalidArgument("at most two changepoints".into()));
    }
    let ts = TimeScale::build(data)?;
    let bands = opts
        .bands
        .iter()
        .flat_map(|&l| [band(l, false, opts.eps.0, opts.eps.1), band(l, true, opts.eps.0, opts.eps.1)])
        .collect::<Result<Vec<BandSpec>>>()?;
    let mut nulls = Nulls::default();
    let mut partial = false;

    let input = InputSummary {
        digest: digest(data),
        n: data.n(),
        events: data.events(),
        group_counts: [data.group_count(0), data.group_count(1)],
        group_events: [data.group_events(0), data.group_events(1)],
        k: ts.k(),
        excluded_failures: ts.excluded().len(),
        flags: validate(data).flags,
    };

    let ph_fit = fit_constant(&ts);
    let ph_beta = BetaFunction::constant(ph_fit.beta_hat);
    let ph = ph_report(&ts, &ph_fit, opts, &mut nulls)?;

    let null_path = effect_path(&ts, &BetaFunction::zero())?;
    let diagnostics = {
        let d = fit_diagnostic(&null_path, &bands, opts.eps)?;
        DiagnosticsReport {
            eps: [opts.eps.0, opts.eps.1],
            sup_raw: d.sup_raw,
            sup_std: d.sup_std,
            bands: d
                .checks
                .iter()
                .map(|c| BandReport {
                    level: c.band.level,
                    kind: if c.band.standardized { "standardized" } else { "raw" }.into(),
                    threshold: c.band.threshold,
                    exceeded: c.exceeded,
                    first_exceedance: c.first_exceedance,
                    tail_probability: c.tail_probability,
                })
                .collect(),
        }
    };

    let mut cp_model: Option<MultiChangepointFit> = None;
    let changepoint = if opts.changepoints == 0 {
        nulls.mark("changepoint", Reason::NotRequested);
        None
    } else {
        match multi_changepoint(&ts, opts.changepoints, &opts.scan) {
            Ok(fit) => {
                let report = changepoint_report(data, &ts, &fit, opts, &mut nulls)?;
                cp_model = Some(fit);
                Some(report)
            }
            Err(e) => {
                partial |= matches!(e, Error::Numeric(_) | Error::ZeroVariance(_));
                nulls.mark("changepoint", Reason::of(&e));
                None
            }
        }
    };

    let mut legendre_model: Option<LegendreModel> = None;
    let legendre = if opts.legendre_order == 0 {
        nulls.mark("legendre", Reason::NotRequested);
        None
    } else {
        let fitted = fit_legendre(&null_path, opts.legendre_order, opts.d2max)
            .and_then(|f| beta_from_legendre(&f, &ts));
        match fitted {
            Ok(m) => {
                let report = LegendreReport {
                    order: m.path_fit.order,
                    d2max: m.path_fit.d2max,
                    retained_order: m.path_fit.retained_order,
                    shrink: m.path_fit.shrink,
                    path_coefficients: m.path_fit.coefficients.clone(),
                    beta_coefficients: m.coefficients.clone(),
                    beta: m.beta.clone(),
                    r2: r2_reported(m.r2),
                    r2_raw: m.r2,
                };
                legendre_model = Some(m);
                Some(report)
            }
            Err(e) => {
                partial |= matches!(e, Error::Numeric(_) | Error::ZeroVariance(_));
                nulls.mark("legendre", Reason::of(&e));
                None
            }
        }
    };

    let landmark_time = match opts.landmark {
        Landmark::Off => {
            nulls.mark("landmark", Reason::NotRequested);
            None
        }
        Landmark::At(t) => Some(t),
        Landmark::Auto => match &cp_model {
            Some(m) => Some(m.changepoints[0].tau_original),
            None => {
                nulls.mark("landmark", Reason::NoChangepoint);
                None
            }
        },
    };
    let mut landmark_curves = None;
    let landmark_report = match landmark_time {
        None => None,
        Some(t0) => match landmark(data, t0) {
            Ok(curves) => {
                let sub = landmark_data(data, t0)?;
                let (log_hr, se) = match TimeScale::build(&sub) {
                    Ok(lts) => {
                        let f = fit_constant(&lts);
                        (
                            nulls.num("landmark.log_hr", f.beta_hat),
                            nulls.num("landmark.se", f.se),
                        )
                    }
                    Err(_) => {
                        nulls.mark("landmark.log_hr", Reason::TooFewFailures);
                        nulls.mark("landmark.se", Reason::TooFewFailures);
                        (None, None)
                    }
                };
                landmark_curves = Some(curves);
                Some(LandmarkReport {
                    time: t0,
                    n: [sub.group_count(0), sub.group_count(1)],
                    log_hr,
                    se,
                })
            }
            Err(e) => {
                nulls.mark("landmark", Reason::of(&e));
                None
            }
        },
    };

    let mut series = Vec::new();
    let km = [kaplan_meier(data, Some(0))?, kaplan_meier(data, Some(1))?];
    series.push(PlotSeries::step_curves(
        "kaplan_meier",
        &["group0", "group1"],
        &[&km[0], &km[1]],
    ));
    series.push(effect_series(&null_path, &bands, opts.eps)?);
    series.push(beta_series(
        &ts,
        &ph_beta,
        cp_model.as_ref().map(|m| &m.beta),
        legendre_model.as_ref().map(|m| &m.beta),
    ));
    let cond_ph = conditional_survival(data, &ts, &ph_beta);
    let cond_cp = cp_model.as_ref().map(|m| conditional_survival(data, &ts, &m.beta));
    series.push(conditional_series(&cond_ph, cond_cp.as_ref()));
    if let Some(curves) = &landmark_curves {
        series.push(PlotSeries::step_curves(
            "landmark",
            &["group0", "group1"],
            &[&curves[0], &curves[1]],
        ));
    }

    let report = ReportDocument {
        tool: ToolInfo {
            name: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
        },
        seed: opts.seed,
        status: if partial { "partial" } else { "complete" }.into(),
        input,
        ph,
        diagnostics,
        changepoint,
        legendre,
        landmark: landmark_report,
        curves: series.iter().map(PlotSeries::file_name).collect(),
        nulls: nulls.0,
    };
    Ok(Analysis { report, series })
}

fn kappa_report(
    breaks: &[f64],
    log_hr: &[f64],
    opts: &AnalysisOptions,
    path: &str,
    nulls: &mut Nulls,
) -> Result<KappaReport> {
    let formula = if breaks.is_empty() {
        Some(kappa_ph(log_hr[0]))
    } else {
        match kappa_piecewise_multi(breaks, log_hr) {
            Ok(k) => Some(k),
            Err(_) => {
                nulls.mark(&format!("{path}.formula"), Reason::NumericFailure);
                None
            }
        }
    };
    let effect = HazardEffect {
        breaks: breaks.to_vec(),
        log_hr: log_hr.to_vec(),
    };
    let pairs = opts.kappa_pairs.max(1);
    let monte_carlo = mc_kappa(&effect, pairs, opts.seed, opts.exec())?;
    let psi = match formula.map(psi) {
        Some(Ok(p)) => nulls.num(&format!("{path}.psi"), p),
        _ => {
            nulls.mark(&format!("{path}.psi"), Reason::KappaBoundary);
            None
        }
    };
    Ok(KappaReport {
        formula,
        monte_carlo,
        psi,
    })
}

fn ph_report(
    ts: &TimeScale,
    fit: &PartialLikFit,
    opts: &AnalysisOptions,
    nulls: &mut Nulls,
) -> Result<PhReport> {
    let raw = r2(ts, &BetaFunction::constant(fit.beta_hat))?;
    let (beta_hat, se, hr, ci) = if fit.converged && fit.se.is_finite() {
        let b = fit.beta_hat;
        let lo = (b - 1.96 * fit.se).exp();
        let hi = (b + 1.96 * fit.se).exp();
        (
            nulls.num("ph.beta_hat", b),
            nulls.num("ph.se", fit.se),
            nulls.num("ph.hazard_ratio", b.exp()),
            (lo.is_finite() && hi.is_finite()).then_some([lo, hi]),
        )
    } else {
        for f in ["ph.beta_hat", "ph.se", "ph.hazard_ratio", "ph.ci95"] {
            nulls.mark(f, Reason::MonotoneLikelihood);
        }
        (None, None, None, None)
    };
    if ci.is_none() && beta_hat.is_some() {
        nulls.mark("ph.ci95", Reason::NonFinite);
    }
    let kappa = kappa_report(&[], &[fit.beta_hat], opts, "ph.kappa", nulls)?;
    Ok(PhReport {
        beta_hat,
        se,
        hazard_ratio: hr,
        ci95: ci,
        converged: fit.converged,
        iterations: fit.iterations,
        r2: r2_reported(raw),
        r2_raw: raw,
        kappa,
    })
}

/// Reference-arm cumulative hazard at original time `t` under `β̂(t)`.
pub fn tau_exponential(curves: &ConditionalCurves, t: f64) -> f64 {
    curves.hazard[0].eval(t)
}

fn changepoint_report(
    data: &TrialData,
    ts: &TimeScale,
    fit: &MultiChangepointFit,
    opts: &AnalysisOptions,
    nulls: &mut Nulls,
) -> Result<ChangepointReport> {
    let curves = conditional_survival(data, ts, &fit.beta);
    let changepoints: Vec<ChangepointEntry> = fit
        .changepoints
        .iter()
        .map(|c| ChangepointEntry {
            tau: c.tau,
            tau_original: c.tau_original,
            tau_exponential: tau_exponential(&curves, c.tau_original),
            slope_before: c.slope_before,
            slope_after: c.slope_after,
            ratio: c.ratio,
        })
        .collect();
    let (beta0, segment_log_hr) = match &fit.beta {
        BetaFunction::Piecewise {
            beta0, multipliers, ..
        } => (*beta0, multipliers.iter().map(|m| beta0 * m).collect::<Vec<_>>()),
        other => (other.eval(0.5), vec![other.eval(0.5)]),
    };
    let breaks: Vec<f64> = changepoints.iter().map(|c| c.tau_exponential).collect();
    let kappa = kappa_report(&breaks, &segment_log_hr, opts, "changepoint.kappa", nulls)?;
    let beta0 = if fit.fit.converged {
        nulls.num("changepoint.beta0", beta0)
    } else {
        nulls.mark("changepoint.beta0", Reason::MonotoneLikelihood);
        None
    };
    Ok(ChangepointReport {
        count: changepoints.len(),
        changepoints,
        beta0,
        segment_log_hr,
        formula: fit.beta.to_string(),
        beta: fit.beta.clone(),
        loglik_gain: fit.loglik_gain,
        r2: r2_reported(fit.r2),
        r2_raw: fit.r2,
        kappa,
    })
}

fn effect_series(path: &EffectPath, bands: &[BandSpec], eps: (f64, f64)) -> Result<PlotSeries> {
    let br = bridge(path, eps.0, eps.1)?;
    let mut columns: Vec<String> = ["t", "u_star", "u_bridge", "u_bridge_std"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for b in bands {
        columns.push(format!("band_{}_lo", b.label()));
        columns.push(format!("band_{}_hi", b.label()));
    }
    let rows = (0..=path.k())
        .map(|j| {
            let t = path.time(j);
            let mut row = vec![Some(t), Some(path.values[j]), Some(br.values[j]), br.standardized[j]];
            for b in bands {
                let hw = b.half_width(t);
                row.push(hw.map(|h| -h));
                row.push(hw);
            }
            row
        })
        .collect();
    Ok(PlotSeries {
        name: "effect_process".into(),
        columns,
        rows,
    })
}

fn beta_series(
    ts: &TimeScale,
    ph: &BetaFunction,
    cp: Option<&BetaFunction>,
    legendre: Option<&BetaFunction>,
) -> PlotSeries {
    let rows = (1..=ts.k())
        .map(|j| {
            let u = ts.unit(j);
            vec![
                Some(u),
                Some(ts.grid()[j - 1].time),
                Some(ph.eval(u)),
                cp.map(|b| b.eval(u)),
                legendre.map(|b| b.eval(u)),
            ]
        })
        .collect();
    PlotSeries {
        name: "beta".into(),
        columns: ["t", "t_original", "ph", "changepoint", "legendre"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        rows,
    }
}

fn conditional_series(ph: &ConditionalCurves, cp: Option<&ConditionalCurves>) -> PlotSeries {
    let mut labels = vec!["ph_group0", "ph_group1"];
    let mut curves = vec![&ph.survival[0], &ph.survival[1]];
    if let Some(c) = cp {
        labels.extend(["changepoint_group0", "changepoint_group1"]);
        curves.extend([&c.survival[0], &c.survival[1]]);
    }
    PlotSeries::step_curves("conditional_survival", &labels, &curves)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simlab::{gen_nph, standin};

    fn quick() -> AnalysisOptions {
        AnalysisOptions {
            kappa_pairs: 20_000,
            ..Default::default()
        }
    }

    #[test]
    fn long_standin_report() {
        let data = gen_nph(&standin::long()).unwrap();
        let a = analyze(&data, &quick()).unwrap();
        let r = &a.report;
        assert_eq!(r.status, "complete");
        let cp = r.changepoint.as_ref().unwrap();
        assert!(cp.r2 > r.ph.r2);
        assert!(r.landmark.is_some());
        assert_eq!(r.curves.len(), a.series.len());
        for s in &a.series {
            assert!(s.rows.iter().all(|row| row.len() == s.columns.len()), "{}", s.name);
        }
    }

    #[test]
    fn ph_only_gating() {
        let data = gen_nph(&standin::eggermont()).unwrap();
        let opts = AnalysisOptions {
            changepoints: 0,
            legendre_order: 0,
            ..quick()
        };
        let r = analyze(&data, &opts).unwrap().report;
        assert!(r.changepoint.is_none() && r.legendre.is_none() && r.landmark.is_none());
        assert_eq!(r.nulls["changepoint"], Reason::NotRequested);
        assert_eq!(r.nulls["landmark"], Reason::NoChangepoint);
    }

    #[test]
    fn digest_ignores_input_order() {
        let data = gen_nph(&standin::andre()).unwrap();
        let mut recs = data.records().to_vec();
        recs.reverse();
        let shuffled = TrialData::new(recs).unwrap();
        // the tie order of reversed ties may differ; the stand-in has none
        assert_eq!(digest(&data), digest(&shuffled));
    }
}
