//! Synthetic stand-ins for four published trial re-analyses, drawn from the
//! fitted models reported for them. Times are in months.

use crate::transform::BetaFunction;

use super::{Censoring, SimSpec};

fn two_level(before: f64, change: f64, after: f64) -> BetaFunction {
    BetaFunction::single_change(before, change, after / before)
}

/// Strong early benefit that vanishes after 8.5 months.
pub fn long() -> SimSpec {
    SimSpec {
        n: [435, 435],
        baseline_hazard: 0.07,
        beta: two_level(-2.08, 8.5, 0.05),
        censoring: Censoring::Uniform { max: 30.0 },
        seed: 20_170_101,
    }
}

/// Early harm followed by a late benefit (crossing hazards).
pub fn andre() -> SimSpec {
    SimSpec {
        n: [153, 154],
        baseline_hazard: 0.1,
        beta: two_level(0.41, 4.2, -1.80),
        censoring: Censoring::Uniform { max: 60.0 },
        seed: 20_200_202,
    }
}

/// Delayed effect: near-null before 1.92 months.
pub fn jonker() -> SimSpec {
    SimSpec {
        n: [287, 285],
        baseline_hazard: 0.3,
        beta: two_level(-0.089, 1.92, -0.466),
        censoring: Censoring::Uniform { max: 12.0 },
        seed: 20_180_303,
    }
}

/// Proportional hazards with hazard ratio 0.71.
pub fn eggermont() -> SimSpec {
    SimSpec {
        n: [476, 475],
        baseline_hazard: 0.0103,
        beta: BetaFunction::constant(0.71f64.ln()),
        censoring: Censoring::Uniform { max: 130.0 },
        seed: 20_160_404,
    }
}

/// All stand-ins by file stem.
pub fn all() -> [(&'static str, SimSpec); 4] {
    [
        ("long", long()),
        ("andre", andre()),
        ("jonker", jonker()),
        ("eggermont", eggermont()),
    ]
}
