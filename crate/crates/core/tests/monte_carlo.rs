use std::path::PathBuf;

use nph2ph::predict::{kappa_piecewise, r2};
use nph2ph::process::{band, effect_path, fit_diagnostic};
use nph2ph::score::{fit_constant, fit_scaled_shape};
use nph2ph::simlab::{
    gen_nph_with, mc_bridge_exceed, mc_bridge_null, mc_kappa, standin, Censoring, HazardEffect, SimSpec,
};
use nph2ph::transform::{find_changepoint, ScanOptions};
use nph2ph::{BetaFunction, Exec, TimeScale};

fn spec(n: usize, beta: BetaFunction, seed: u64) -> SimSpec {
    SimSpec {
        n: [n, n],
        baseline_hazard: 1.0,
        beta,
        censoring: Censoring::Uniform { max: 3.0 },
        seed,
    }
}

fn scan() -> ScanOptions {
    ScanOptions {
        min_seg: 5,
        exec: Exec::Sequential,
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

/// Compares against a checked-in snapshot; `NPH2PH_BLESS=1` rewrites it.
fn snapshot(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name);
    if std::env::var_os("NPH2PH_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap();
    assert_eq!(actual, expected, "{} changed", path.display());
}

#[test]
fn exchangeable_arms_give_a_null_estimate() {
    let data = gen_nph_with(&spec(500, BetaFunction::zero(), 21), Exec::Parallel).unwrap();
    let fit = fit_constant(&TimeScale::build(&data).unwrap());
    assert!(fit.beta_hat.abs() < 3.0 * fit.se, "{} se {}", fit.beta_hat, fit.se);
}

#[test]
fn scaled_shape_recovers_the_generating_scale() {
    let t0 = 0.7;
    let data = gen_nph_with(
        &spec(1000, BetaFunction::single_change(-1.0, t0, -0.5), 22),
        Exec::Parallel,
    )
    .unwrap();
    let ts = TimeScale::build(&data).unwrap();
    let u0 = ts.to_unit(t0);
    let shape = BetaFunction::single_change(1.0, u0, -0.5);
    let fit = fit_scaled_shape(&ts, |u| shape.eval(u)).unwrap();
    assert!((fit.beta_hat + 1.0).abs() < 3.0 * fit.se, "{} se {}", fit.beta_hat, fit.se);
}

fn null_gains(n: usize, reps: usize) -> Vec<(f64, usize)> {
    Exec::Parallel.map(reps, |r| {
        let s = spec(n, BetaFunction::constant(-0.5), 900 + r as u64);
        let data = gen_nph_with(&s, Exec::Sequential).unwrap();
        let ts = TimeScale::build(&data).unwrap();
        (find_changepoint(&ts, &scan()).unwrap().loglik_gain, ts.k())
    })
}

#[test]
fn scan_gain_is_small_under_ph() {
    let gains: Vec<f64> = null_gains(50, 200).into_iter().map(|g| g.0).collect();
    assert!(gains.iter().all(|g| *g >= -1e-9));
    let m = median(gains);
    assert!(m < 2.0, "median gain {m}");
}

#[test]
fn null_scan_gain_follows_the_bridge_reference() {
    // 2 * gain behaves like the squared standardized bridge maximized over
    // the scanned grid points
    let gains = null_gains(300, 400);
    let k = median(gains.iter().map(|g| g.1 as f64).collect()) as usize;
    let m = median(gains.into_iter().map(|g| g.0).collect());
    let eps = 5.0 / k as f64;
    let reference =
        mc_bridge_exceed((2.0 * m).sqrt(), eps, 1.0 - eps, 20_000, k, 26, Exec::Parallel).unwrap();
    let p = reference.grid.estimate;
    assert!((p - 0.5).abs() < 0.1, "exceedance at the median gain {p}");
}

#[test]
fn scan_finds_a_true_split() {
    let data = gen_nph_with(
        &spec(800, BetaFunction::single_change(-1.5, 0.6, 0.0), 23),
        Exec::Parallel,
    )
    .unwrap();
    let ts = TimeScale::build(&data).unwrap();
    let cp = find_changepoint(&ts, &scan()).unwrap();
    let truth = ts.to_unit(0.6);
    assert!((cp.tau - truth).abs() < 0.1, "{} vs {truth}", cp.tau);
}

#[test]
fn null_process_variance_and_band_calibration() {
    let s = SimSpec {
        censoring: Censoring::None,
        ..spec(250, BetaFunction::zero(), 24)
    };
    let cal = mc_bridge_null(&s, &[0.90], 2000, Exec::Parallel).unwrap();
    assert!((0.9..=1.1).contains(&cal.var_end), "{}", cal.var_end);
    let rate = cal.levels[0].rate.estimate;
    assert!((rate - 0.10).abs() <= 0.02, "{rate}");
}

#[test]
fn long_like_data_break_the_strict_band() {
    let bands = [band(0.999, false, 0.05, 0.95).unwrap()];
    let base = standin::long();
    let hits = Exec::Parallel.map(100, |r| {
        let data = gen_nph_with(&base.with_seed(3000 + r as u64), Exec::Sequential).unwrap();
        let ts = TimeScale::build(&data).unwrap();
        let path = effect_path(&ts, &BetaFunction::zero()).unwrap();
        fit_diagnostic(&path, &bands, (0.05, 0.95)).unwrap().checks[0].exceeded
    });
    let count = hits.iter().filter(|h| **h).count();
    assert!(count > 90, "{count}");
}

#[test]
fn strong_separation_gives_high_r2() {
    let s = SimSpec {
        censoring: Censoring::None,
        ..spec(300, BetaFunction::constant(-5.0), 25)
    };
    let data = gen_nph_with(&s, Exec::Parallel).unwrap();
    let ts = TimeScale::build(&data).unwrap();
    let fit = fit_constant(&ts);
    let value = r2(&ts, &BetaFunction::constant(fit.beta_hat)).unwrap();
    assert!(value > 0.5, "{value}");
}

#[test]
fn piecewise_kappa_reference_run() {
    let effect = HazardEffect {
        breaks: vec![0.5],
        log_hr: vec![-2.0, 0.0],
    };
    let mc = mc_kappa(&effect, 1_000_000, 2024, Exec::Parallel).unwrap();
    let formula = kappa_piecewise(0.5, -2.0, 0.0).unwrap();
    assert!((mc.estimate - formula).abs() < 0.01);
    let table = format!(
        "tau_e\tbeta1\tbeta2\tpairs\tseed\testimate\tse\n0.5\t-2\t0\t{}\t{}\t{}\t{}\n",
        mc.replicates, mc.seed, mc.estimate, mc.se
    );
    snapshot("kappa_piecewise.tsv", &table);
}

#[test]
fn bridge_calibration_reference_run() {
    let s = SimSpec {
        censoring: Censoring::Uniform { max: 4.965 },
        ..spec(200, BetaFunction::zero(), 42)
    };
    let cal = mc_bridge_null(&s, &[0.90, 0.99, 0.999], 1000, Exec::Parallel).unwrap();
    snapshot("bridge_null.tsv", &cal.to_tsv());
}
