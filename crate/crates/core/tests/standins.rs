//! Qualitative reproduction on data simulated from the fitted trial models.

use nph2ph::predict::{landmark_data, r2};
use nph2ph::process::{bridge, effect_path};
use nph2ph::score::fit_constant;
use nph2ph::simlab::{gen_nph, gen_nph_with, standin, SimSpec};
use nph2ph::transform::legendre::{DEFAULT_D2MAX, DEFAULT_ORDER};
use nph2ph::transform::{
    beta_from_legendre, find_changepoint, fit_legendre, multi_changepoint, ChangepointFit,
    ScanOptions,
};
use nph2ph::{BetaFunction, Exec, TimeScale, TrialData};

fn scan() -> ScanOptions {
    ScanOptions {
        min_seg: 5,
        exec: Exec::Sequential,
    }
}

fn fitted(spec: &SimSpec) -> (TrialData, TimeScale, ChangepointFit) {
    let data = gen_nph(spec).unwrap();
    let ts = TimeScale::build(&data).unwrap();
    let cp = find_changepoint(&ts, &scan()).unwrap();
    (data, ts, cp)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 0 {
        0.5 * (xs[m - 1] + xs[m])
    } else {
        xs[m]
    }
}

/// Per-replicate hazard ratios before and after the fitted changepoint.
fn segment_hazard_ratios(spec: &SimSpec, reps: usize) -> (f64, f64) {
    let fits = Exec::Parallel.map(reps, |r| {
        let data = gen_nph_with(&spec.with_seed(5000 + r as u64), Exec::Sequential).unwrap();
        let ts = TimeScale::build(&data).unwrap();
        let cp = find_changepoint(&ts, &scan()).unwrap();
        (cp.beta.eval(0.0).exp(), cp.beta.eval(1.0).exp())
    });
    (
        median(fits.iter().map(|f| f.0).collect()),
        median(fits.iter().map(|f| f.1).collect()),
    )
}

#[test]
fn long_changepoint_and_time_mapping() {
    let (_, ts, cp) = fitted(&standin::long());
    assert!((cp.tau - 0.46).abs() <= 0.08, "tau {}", cp.tau);
    // the transformed changepoint sits near the generating 8.5 months
    assert!((ts.from_unit(0.46) - 8.5).abs() < 1.5, "{}", ts.from_unit(0.46));
    assert!(cp.ratio.abs() < 0.25, "ratio {}", cp.ratio);
    let ph = r2(&ts, &BetaFunction::constant(fit_constant(&ts).beta_hat)).unwrap();
    assert!(cp.r2 >= 1.5 * ph, "{} vs {ph}", cp.r2);
}

#[test]
fn long_bridge_flags_the_deviation() {
    let (_, ts, _) = fitted(&standin::long());
    let b = bridge(&effect_path(&ts, &BetaFunction::zero()).unwrap(), 0.05, 0.95).unwrap();
    assert!(b.sup_std > 3.0, "{}", b.sup_std);
}

#[test]
fn andre_changepoint() {
    let (_, _, cp) = fitted(&standin::andre());
    assert!((cp.tau - 0.55).abs() <= 0.08, "tau {}", cp.tau);
}

#[test]
fn long_segment_hazard_ratios() {
    let (before, after) = segment_hazard_ratios(&standin::long(), 60);
    assert!((before - 0.125).abs() < 0.05, "{before}");
    assert!((after - 1.05).abs() < 0.25, "{after}");
}

#[test]
fn jonker_segment_hazard_ratios() {
    let (before, after) = segment_hazard_ratios(&standin::jonker(), 60);
    assert!((before - 0.91).abs() < 0.15, "{before}");
    assert!((after - 0.63).abs() < 0.15, "{after}");
}

#[test]
fn second_changepoint_gives_a_modest_gain() {
    let (_, ts, one) = fitted(&standin::long());
    let single = multi_changepoint(&ts, 1, &scan()).unwrap();
    assert_eq!(single.changepoints[0].tau, one.tau);
    assert!((single.r2 - one.r2).abs() < 1e-12);
    let two = multi_changepoint(&ts, 2, &scan()).unwrap();
    assert!(two.loglik >= single.loglik - 1e-9);
    assert!(two.r2 > one.r2 - 0.01 && two.r2 < one.r2 + 0.1, "{} vs {}", two.r2, one.r2);
}

#[test]
fn legendre_improves_on_ph_with_the_expected_sign_pattern() {
    let (_, ts, _) = fitted(&standin::long());
    let path = effect_path(&ts, &BetaFunction::zero()).unwrap();
    let fit = fit_legendre(&path, DEFAULT_ORDER, DEFAULT_D2MAX).unwrap();
    let model = beta_from_legendre(&fit, &ts).unwrap();
    let ph = r2(&ts, &BetaFunction::constant(fit_constant(&ts).beta_hat)).unwrap();
    assert!(model.r2 > ph, "{} vs {ph}", model.r2);
    let early = model.beta.eval(0.1);
    let late = model.beta.eval(0.9);
    assert!(early < 0.0 && early.abs() > 3.0 * late.abs(), "{early} {late}");
}

#[test]
fn long_landmark_shows_no_remaining_effect() {
    let base = standin::long();
    let logs = Exec::Parallel.map(40, |r| {
        let data = gen_nph_with(&base.with_seed(7000 + r as u64), Exec::Sequential).unwrap();
        let ts = TimeScale::build(&data).unwrap();
        let cp = find_changepoint(&ts, &scan()).unwrap();
        let sub = landmark_data(&data, cp.tau_original).unwrap();
        fit_constant(&TimeScale::build(&sub).unwrap()).beta_hat
    });
    let m = median(logs);
    assert!(m.abs() <= 0.15, "{m}");
}

#[test]
fn eggermont_is_compatible_with_ph() {
    let data = gen_nph(&standin::eggermont()).unwrap();
    let ts = TimeScale::build(&data).unwrap();
    let fit = fit_constant(&ts);
    assert!((fit.beta_hat - 0.71f64.ln()).abs() < 3.0 * fit.se, "{}", fit.beta_hat);
}
