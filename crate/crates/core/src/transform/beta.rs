use std::fmt;

use serde::{Deserialize, Serialize};

use super::legendre::legendre_derivatives;

/// A log hazard ratio `β(t)` on the unit (transformed) time scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaFunction {
    Constant {
        beta0: f64,
    },
    /// `β0 · r_s` on segment `s`; segment 0 is `t <= τ1` and carries `r0 = 1`.
    Piecewise {
        beta0: f64,
        taus: Vec<f64>,
        multipliers: Vec<f64>,
    },
    /// `Σ c_k · dP_k/dt` over Legendre derivatives, `k = 1..=m`.
    PolynomialDerivative {
        coefficients: Vec<f64>,
    },
}

impl BetaFunction {
    pub fn constant(beta0: f64) -> Self {
        BetaFunction::Constant { beta0 }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// Single changepoint: `β0` up to `τ`, `β0 · ratio` after.
    pub fn single_change(beta0: f64, tau: f64, ratio: f64) -> Self {
        BetaFunction::Piecewise {
            beta0,
            taus: vec![tau],
            multipliers: vec![1.0, ratio],
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            BetaFunction::Constant { beta0 } => *beta0,
            BetaFunction::Piecewise {
                beta0,
                taus,
                multipliers,
            } => {
                let seg = taus.partition_point(|&tau| tau < t);
                beta0 * multipliers[seg]
            }
            BetaFunction::PolynomialDerivative { coefficients } => {
                let (_, d1, _) = legendre_derivatives(coefficients.len(), t);
                coefficients
                    .iter()
                    .zip(&d1[1..])
                    .map(|(c, d)| c * d)
                    .sum()
            }
        }
    }

    /// Same shape with every value negated.
    pub fn negated(&self) -> Self {
        match self {
            BetaFunction::Constant { beta0 } => Self::constant(-beta0),
            BetaFunction::Piecewise {
                beta0,
                taus,
                multipliers,
            } => BetaFunction::Piecewise {
                beta0: -beta0,
                taus: taus.clone(),
                multipliers: multipliers.clone(),
            },
            BetaFunction::PolynomialDerivative { coefficients } => {
                BetaFunction::PolynomialDerivative {
                    coefficients: coefficients.iter().map(|c| -c).collect(),
                }
            }
        }
    }

    /// Same shape multiplied by `scale`.
    pub fn scaled(&self, scale: f64) -> Self {
        match self {
            BetaFunction::Constant { beta0 } => Self::constant(beta0 * scale),
            BetaFunction::Piecewise {
                beta0,
                taus,
                multipliers,
            } => BetaFunction::Piecewise {
                beta0: beta0 * scale,
                taus: taus.clone(),
                multipliers: multipliers.clone(),
            },
            BetaFunction::PolynomialDerivative { coefficients } => {
                BetaFunction::PolynomialDerivative {
                    coefficients: coefficients.iter().map(|c| c * scale).collect(),
                }
            }
        }
    }
}

impl fmt::Display for BetaFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BetaFunction::Constant { beta0 } => write!(f, "{beta0:.4}"),
            BetaFunction::Piecewise {
                beta0,
                taus,
                multipliers,
            } => {
                write!(f, "{beta0:.4} x (I{{t<={:.4}}}", taus[0])?;
                for (s, r) in multipliers.iter().enumerate().skip(1) {
                    let sign = if *r < 0.0 { '-' } else { '+' };
                    match taus.get(s) {
                        Some(next) => write!(
                            f,
                            " {sign} {:.4} x I{{{:.4}<t<={:.4}}}",
                            r.abs(),
                            taus[s - 1],
                            next
                        )?,
                        None => write!(f, " {sign} {:.4} x I{{t>{:.4}}}", r.abs(), taus[s - 1])?,
                    }
                }
                write!(f, ")")
            }
            BetaFunction::PolynomialDerivative { coefficients } => {
                for (i, c) in coefficients.iter().enumerate() {
                    if i == 0 {
                        write!(f, "{c:.4} dP1(t)")?;
                    } else {
                        let sign = if *c < 0.0 { '-' } else { '+' };
                        write!(f, " {sign} {:.4} dP{}(t)", c.abs(), i + 1)?;
                    }
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_segments() {
        let b = BetaFunction::single_change(-2.0, 0.5, 0.25);
        assert_eq!(b.eval(0.1), -2.0);
        assert_eq!(b.eval(0.5), -2.0);
        assert_eq!(b.eval(0.51), -0.5);
        let two = BetaFunction::Piecewise {
            beta0: 1.0,
            taus: vec![0.3, 0.6],
            multipliers: vec![1.0, 2.0, -1.0],
        };
        assert_eq!(two.eval(0.2), 1.0);
        assert_eq!(two.eval(0.5), 2.0);
        assert_eq!(two.eval(0.9), -1.0);
        assert_eq!(two.negated().eval(0.9), 1.0);
    }

    #[test]
    fn polynomial_derivative_of_p1_is_constant() {
        let b = BetaFunction::PolynomialDerivative {
            coefficients: vec![1.5],
        };
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(b.eval(t), 1.5);
        }
        // dP2/dt = 3t
        let b2 = BetaFunction::PolynomialDerivative {
            coefficients: vec![0.0, 2.0],
        };
        assert!((b2.eval(0.5) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn display_forms() {
        let b = BetaFunction::single_change(-2.08, 0.46, -0.024);
        assert_eq!(b.to_string(), "-2.0800 x (I{t<=0.4600} - 0.0240 x I{t>0.4600})");
    }
}
