//! Simulation of two-arm trials under piecewise-exponential hazards, and
//! brute-force Monte Carlo oracles for the closed-form results.

mod oracle;
pub mod standin;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::dataset::{SurvivalRecord, TrialData};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::{substream, Purpose};
use crate::transform::BetaFunction;

pub use oracle::{
    brute_r2_argmax, l2_argmin, mc_bridge_exceed, mc_bridge_null, mc_kappa, BridgeCalibration,
    BridgeExceedance, LevelRate, McResult, R2Row, R2Table,
};

/// Independent right censoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Censoring {
    #[default]
    None,
    Uniform {
        max: f64,
    },
    Exponential {
        rate: f64,
    },
}

impl Censoring {
    fn draw(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            Censoring::None => f64::INFINITY,
            Censoring::Uniform { max } => max * rng.random::<f64>(),
            Censoring::Exponential { rate } => Distribution::<f64>::sample(&Exp1, rng) / rate,
        }
    }
}

/// A piecewise-constant log hazard ratio of group 1 versus group 0 on the
/// original time axis: `log_hr[s]` on `(breaks[s-1], breaks[s]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HazardEffect {
    pub breaks: Vec<f64>,
    pub log_hr: Vec<f64>,
}

impl HazardEffect {
    pub fn constant(beta: f64) -> Self {
        Self {
            breaks: vec![],
            log_hr: vec![beta],
        }
    }

    pub fn from_beta(beta: &BetaFunction) -> Result<Self> {
        let effect = match beta {
            BetaFunction::Constant { beta0 } => Self::constant(*beta0),
            BetaFunction::Piecewise {
                beta0,
                taus,
                multipliers,
            } => Self {
                breaks: taus.clone(),
                log_hr: multipliers.iter().map(|m| beta0 * m).collect(),
            },
            BetaFunction::PolynomialDerivative { .. } => {
                return Err(Error::InvalidArgument(
                    "simulation needs a constant or piecewise effect".into(),
                ))
            }
        };
        effect.check()?;
        Ok(effect)
    }

    fn check(&self) -> Result<()> {
        if self.log_hr.len() != self.breaks.len() + 1 {
            return Err(Error::InvalidArgument(
                "need one log hazard ratio per segment".into(),
            ));
        }
        if self.breaks.iter().any(|b| !(*b > 0.0 && b.is_finite()))
            || self.breaks.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidArgument(
                "changepoints must be positive and increasing".into(),
            ));
        }
        if self.log_hr.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("log hazard ratio not finite".into()));
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> f64 {
        self.log_hr[self.breaks.partition_point(|&b| b < t)]
    }

    /// Inverts `H(t) = Σ rate_s |segment ∩ [0,t]|` with `rate_s = λ e^{log_hr[s] z}`.
    pub fn invert(&self, baseline: f64, z: f64, target: f64) -> f64 {
        let mut start = 0.0;
        let mut remaining = target;
        for (s, b) in self.log_hr.iter().enumerate() {
            let rate = baseline * (b * z).exp();
            match self.breaks.get(s) {
                Some(&end) => {
                    let mass = rate * (end - start);
                    if remaining <= mass {
                        return start + remaining / rate;
                    }
                    remaining -= mass;
                    start = end;
                }
                None => return start + remaining / rate,
            }
        }
        unreachable!("last segment is unbounded")
    }

    /// Survival at `t` of a subject with covariate `z`.
    pub fn survival(&self, baseline: f64, z: f64, t: f64) -> f64 {
        let mut start = 0.0;
        let mut h = 0.0;
        for (s, b) in self.log_hr.iter().enumerate() {
            let end = self.breaks.get(s).copied().unwrap_or(f64::INFINITY).min(t);
            if end > start {
                h += baseline * (b * z).exp() * (end - start);
            }
            if end >= t {
                break;
            }
            start = end;
        }
        (-h).exp()
    }
}

fn default_baseline() -> f64 {
    1.0
}

/// A simulated trial: arm sizes, constant baseline hazard, effect on the
/// original time axis, censoring and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    /// Subjects in group 0 and group 1.
    pub n: [usize; 2],
    #[serde(default = "default_baseline")]
    pub baseline_hazard: f64,
    pub beta: BetaFunction,
    #[serde(default)]
    pub censoring: Censoring,
    pub seed: u64,
}

impl SimSpec {
    pub fn validate(&self) -> Result<HazardEffect> {
        if self.n[0] + self.n[1] < 2 {
            return Err(Error::InvalidArgument("need at least two subjects".into()));
        }
        if !(self.baseline_hazard > 0.0 && self.baseline_hazard.is_finite()) {
            return Err(Error::InvalidArgument("baseline hazard must be positive".into()));
        }
        match self.censoring {
            Censoring::Uniform { max } if !(max > 0.0) => {
                return Err(Error::InvalidArgument("censoring bound must be positive".into()))
            }
            Censoring::Exponential { rate } if !(rate > 0.0) => {
                return Err(Error::InvalidArgument("censoring rate must be positive".into()))
            }
            _ => {}
        }
        HazardEffect::from_beta(&self.beta)
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Draws a trial by inverse transform; subject `i` uses its own substream.
pub fn gen_nph(spec: &SimSpec) -> Result<TrialData> {
    gen_nph_with(spec, Exec::Sequential)
}

pub fn gen_nph_with(spec: &SimSpec, exec: Exec) -> Result<TrialData> {
    let effect = spec.validate()?;
    let n0 = spec.n[0];
    let records = exec.map(n0 + spec.n[1], |i| {
        let group = u8::from(i >= n0);
        let mut rng = substream(spec.seed, Purpose::Trial, i as u64);
        let e: f64 = Exp1.sample(&mut rng);
        let t = effect.invert(spec.baseline_hazard, group as f64, e);
        let c = spec.censoring.draw(&mut rng);
        let (time, event) = if t <= c { (t, true) } else { (c, false) };
        SurvivalRecord {
            time: time.max(f64::MIN_POSITIVE),
            event,
            group,
        }
    });
    TrialData::new(records)
}
