use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{pairwise_sum, Exec};
use crate::predict::r2;
use crate::process::{band, bridge, effect_path};
use crate::rng::{child_seed, substream, Purpose};
use crate::score::fit_scaled_shape;
use crate::timescale::TimeScale;
use crate::transform::{BetaFunction, CandidateSet};

use super::{gen_nph, HazardEffect, SimSpec};

const KAPPA_BLOCK: usize = 8192;

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McResult {
    pub estimate: f64,
    pub se: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl McResult {
    fn from_values(values: &[f64], seed: u64) -> Self {
        let n = values.len();
        let mean = pairwise_sum(values) / n as f64;
        let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = if n > 1 {
            pairwise_sum(&sq) / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            estimate: mean,
            se: (var / n as f64).sqrt(),
            replicates: n,
            seed,
        }
    }

    fn from_count(hits: usize, n: usize, seed: u64) -> Self {
        let p = hits as f64 / n as f64;
        let var = if n > 1 {
            p * (1.0 - p) * n as f64 / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            estimate: p,
            se: (var / n as f64).sqrt(),
            replicates: n,
            seed,
        }
    }
}

/// `P(T_A > T_B)` by simulation: `T_B` unit exponential, `T_A` with hazard
/// `e^{β(t)}` on the same time axis.
pub fn mc_kappa(effect: &HazardEffect, pairs: usize, seed: u64, exec: Exec) -> Result<McResult> {
    effect.check()?;
    if pairs == 0 {
        return Err(Error::InvalidArgument("need at least one pair".into()));
    }
    let blocks = pairs.div_ceil(KAPPA_BLOCK);
    let counts = exec.map(blocks, |b| {
        let mut rng = substream(seed, Purpose::KappaPairs, b as u64);
        let len = KAPPA_BLOCK.min(pairs - b * KAPPA_BLOCK);
        let mut hits = 0usize;
        for _ in 0..len {
            let tb: f64 = Exp1.sample(&mut rng);
            let ea: f64 = Exp1.sample(&mut rng);
            let ta = effect.invert(1.0, 1.0, ea);
            hits += usize::from(ta > tb);
        }
        hits
    });
    Ok(McResult::from_count(counts.iter().sum(), pairs, seed))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelRate {
    pub level: f64,
    pub threshold: f64,
    pub rate: McResult,
}

/// Band exceedance rates of the raw bridge over simulated null trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BridgeCalibration {
    pub levels: Vec<LevelRate>,
    /// Sample variance of `U*(1)`.
    pub var_end: f64,
    pub mean_k: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl BridgeCalibration {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("level\tthreshold\trate\tse\treplicates\n");
        for l in &self.levels {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                l.level, l.threshold, l.rate.estimate, l.rate.se, l.rate.replicates
            ));
        }
        out.push_str(&format!("var_end\t\t{}\t\t{}\n", self.var_end, self.replicates));
        out
    }
}

/// Simulates `replicates` trials from `spec` (seeds derived per replicate),
/// builds the effect process at `β = 0` and records raw-band exceedances.
pub fn mc_bridge_null(
    spec: &SimSpec,
    levels: &[f64],
    replicates: usize,
    exec: Exec,
) -> Result<BridgeCalibration> {
    if replicates < 2 {
        return Err(Error::InvalidArgument("need at least two replicates".into()));
    }
    let bands = levels
        .iter()
        .map(|&l| band(l, false, 0.05, 0.95))
        .collect::<Result<Vec<_>>>()?;
    let runs = exec.map(replicates, |r| -> Result<(f64, f64, usize)> {
        let data = gen_nph(&spec.with_seed(child_seed(spec.seed, r as u64)))?;
        let ts = TimeScale::build(&data)?;
        let path = effect_path(&ts, &BetaFunction::zero())?;
        let br = bridge(&path, 0.05, 0.95)?;
        Ok((br.sup_raw, path.end(), ts.k()))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let levels = bands
        .iter()
        .map(|b| {
            let hits = runs.iter().filter(|r| r.0 > b.threshold).count();
            LevelRate {
                level: b.level,
                threshold: b.threshold,
                rate: McResult::from_count(hits, replicates, spec.seed),
            }
        })
        .collect();
    let ends: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let end = McResult::from_values(&ends, spec.seed);
    let ks: Vec<f64> = runs.iter().map(|r| r.2 as f64).collect();
    Ok(BridgeCalibration {
        levels,
        var_end: end.se * end.se * replicates as f64,
        mean_k: pairwise_sum(&ks) / replicates as f64,
        replicates,
        seed: spec.seed,
    })
}

/// Exceedance of the standardized Brownian bridge over `[eps1, eps2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BridgeExceedance {
    /// Fraction of discretized paths exceeding at a grid point.
    pub grid: McResult,
    /// Adds the probability that the continuous path crosses between grid
    /// points given its values there.
    pub continuous: McResult,
}

/// Brownian bridges on a uniform grid of `steps` intervals.
pub fn mc_bridge_exceed(
    a: f64,
    eps1: f64,
    eps2: f64,
    replicates: usize,
    steps: usize,
    seed: u64,
    exec: Exec,
) -> Result<BridgeExceedance> {
    if !(eps1 > 0.0 && eps1 < eps2 && eps2 < 1.0) {
        return Err(Error::InvalidEpsilon(eps1, eps2));
    }
    if steps < 2 || replicates < 2 {
        return Err(Error::InvalidArgument("need at least two steps and replicates".into()));
    }
    let dt = 1.0 / steps as f64;
    let sd = dt.sqrt();
    let runs = exec.map(replicates, |r| {
        let mut rng = substream(seed, Purpose::BridgePaths, r as u64);
        let mut w = vec![0.0; steps + 1];
        for j in 1..=steps {
            let z: f64 = StandardNormal.sample(&mut rng);
            w[j] = w[j - 1] + sd * z;
        }
        let end = w[steps];
        let b: Vec<f64> = (0..=steps).map(|j| w[j] - j as f64 * dt * end).collect();
        let inside = |j: usize| {
            let t = j as f64 * dt;
            t >= eps1 - 1e-12 && t <= eps2 + 1e-12
        };
        let bound = |j: usize| {
            let t = j as f64 * dt;
            a * (t * (1.0 - t)).sqrt()
        };
        let hit = (0..=steps).any(|j| inside(j) && b[j].abs() > bound(j));
        if hit {
            return (1.0, 1.0);
        }
        let mut stay = 1.0;
        for j in 0..steps {
            if !(inside(j) && inside(j + 1)) {
                continue;
            }
            let (c0, c1) = (bound(j), bound(j + 1));
            let up = (-2.0 * (c0 - b[j]) * (c1 - b[j + 1]) / dt).exp();
            let down = (-2.0 * (c0 + b[j]) * (c1 + b[j + 1]) / dt).exp();
            stay *= (1.0 - up) * (1.0 - down);
        }
        (0.0, 1.0 - stay)
    });
    let grid: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let cont: Vec<f64> = runs.iter().map(|r| r.1).collect();
    Ok(BridgeExceedance {
        grid: McResult::from_values(&grid, seed),
        continuous: McResult::from_values(&cont, seed),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct R2Row {
    pub name: String,
    /// Fitted scale; `None` if the shape vanishes on the grid.
    pub scale: Option<f64>,
    pub r2: Option<f64>,
}

/// R² of every candidate with its scale refitted by partial likelihood.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct R2Table {
    pub rows: Vec<R2Row>,
    /// Index of the largest R²; exact ties go to the smallest name.
    pub best: usize,
}

impl R2Table {
    pub fn best_row(&self) -> &R2Row {
        &self.rows[self.best]
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("name\tscale\tr2\n");
        let na = |v: Option<f64>| v.map_or("NA".to_string(), |x| x.to_string());
        for r in &self.rows {
            out.push_str(&format!("{}\t{}\t{}\n", r.name, na(r.scale), na(r.r2)));
        }
        out
    }
}

pub fn brute_r2_argmax(ts: &TimeScale, candidates: &CandidateSet, exec: Exec) -> Result<R2Table> {
    let rows = exec.map_slice(candidates.candidates(), |c| -> Result<R2Row> {
        match fit_scaled_shape(ts, |t| c.shape.eval(t)) {
            Ok(fit) => Ok(R2Row {
                name: c.name.clone(),
                scale: Some(fit.beta_hat),
                r2: Some(r2(ts, &c.shape.scaled(fit.beta_hat))?),
            }),
            Err(Error::DegenerateShape) => Ok(R2Row {
                name: c.name.clone(),
                scale: None,
                r2: None,
            }),
            Err(e) => Err(e),
        }
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let best = argbest(&rows, |r| r.r2, true).ok_or(Error::DegenerateShape)?;
    Ok(R2Table { rows, best })
}

fn argbest(rows: &[R2Row], key: impl Fn(&R2Row) -> Option<f64>, max: bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in rows.iter().enumerate() {
        let Some(v) = key(r) else { continue };
        let better = match best {
            None => true,
            Some((j, b)) => {
                let strictly = if max { v > b } else { v < b };
                strictly || (v == b && r.name < rows[j].name)
            }
        };
        if better {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Candidate closest to a known `β(t)` in mean squared distance over the
/// grid, each shape at its least-squares scale. `truth` acts on original time.
pub fn l2_argmin(
    ts: &TimeScale,
    candidates: &CandidateSet,
    truth: impl Fn(f64) -> f64,
) -> Result<usize> {
    let target: Vec<f64> = ts.grid().iter().map(|f| truth(f.time)).collect();
    let rows: Vec<R2Row> = candidates
        .candidates()
        .iter()
        .map(|c| {
            let b: Vec<f64> = (1..=ts.k()).map(|j| c.shape.eval(ts.unit(j))).collect();
            let bb: f64 = b.iter().map(|x| x * x).sum();
            let dist = (bb > 0.0).then(|| {
                let scale = b.iter().zip(&target).map(|(x, y)| x * y).sum::<f64>() / bb;
                b.iter()
                    .zip(&target)
                    .map(|(x, y)| (scale * x - y).powi(2))
                    .sum::<f64>()
                    / ts.k() as f64
            });
            R2Row {
                name: c.name.clone(),
                scale: None,
                r2: dist,
            }
        })
        .collect();
    argbest(&rows, |r| r.r2, false).ok_or(Error::DegenerateShape)
}
