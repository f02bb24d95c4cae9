//! Barrier curves the population front is compared against.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Critical coefficient of the `s^{1/3}` correction to linear front speed.
pub fn cstar() -> f64 {
    3f64.powf(4.0 / 3.0) * std::f64::consts::PI.powf(2.0 / 3.0) / 2f64.powf(7.0 / 6.0)
}

/// Coefficient of the logarithmic correction to the BBM median.
pub fn median_log_coeff() -> f64 {
    3.0 / 2f64.powf(1.5)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurveError {
    #[error("curve parameter `{name}` must be finite, got {value}")]
    NonFinite { name: &'static str, value: f64 },
    #[error("curve parameter `{name}` must be non-negative, got {value}")]
    Negative { name: &'static str, value: f64 },
}

/// A barrier curve `s -> f(s)` on `[0, t]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurveSpec {
    /// `sqrt(2) s - c s^{1/3}`.
    G { c: f64 },
    /// `sqrt(2) s - c (s + beta t)^{1/3}`.
    B { c: f64, beta: f64, t: f64 },
    /// `g_{c*}` plus a vanishing correction, shifted so the curve starts at -1.
    GStar,
    /// `base(s) - c`.
    Shifted { base: Box<CurveSpec>, c: f64 },
    /// `sqrt(2) s - (3 / 2^{3/2}) log s`, the BBM median location.
    Median,
}

impl CurveSpec {
    pub fn shifted(self, c: f64) -> Self {
        CurveSpec::Shifted {
            base: Box::new(self),
            c,
        }
    }

    pub fn validate(&self) -> Result<(), CurveError> {
        fn finite(name: &'static str, value: f64) -> Result<(), CurveError> {
            if value.is_finite() {
                Ok(())
            } else {
                Err(CurveError::NonFinite { name, value })
            }
        }
        fn non_negative(name: &'static str, value: f64) -> Result<(), CurveError> {
            finite(name, value)?;
            if value < 0.0 {
                Err(CurveError::Negative { name, value })
            } else {
                Ok(())
            }
        }
        match self {
            CurveSpec::G { c } => non_negative("c", *c),
            CurveSpec::B { c, beta, t } => {
                non_negative("c", *c)?;
                non_negative("beta", *beta)?;
                non_negative("t", *t)
            }
            CurveSpec::GStar | CurveSpec::Median => Ok(()),
            CurveSpec::Shifted { base, c } => {
                finite("c", *c)?;
                base.validate()
            }
        }
    }

    /// Value of the curve at time `s >= 0`.
    pub fn eval(&self, s: f64) -> f64 {
        let r2 = std::f64::consts::SQRT_2;
        match self {
            CurveSpec::G { c } => r2 * s - c * s.cbrt(),
            CurveSpec::B { c, beta, t } => r2 * s - c * (s + beta * t).cbrt(),
            CurveSpec::GStar => {
                let cs = cstar();
                let l = (s + std::f64::consts::E).ln();
                r2 * s - cs * s.cbrt() + cs * s.cbrt() / (l * l) - 1.0
            }
            CurveSpec::Shifted { base, c } => base.eval(s) - c,
            // The log term is singular at the origin; the curve is pinned to 0 there.
            CurveSpec::Median => {
                if s > 0.0 {
                    r2 * s - median_log_coeff() * s.ln()
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn eval_curve(spec: &CurveSpec, s: f64) -> f64 {
    spec.eval(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants() {
        assert!((cstar() - 4.134_216_917_542_665).abs() < 1e-12);
        assert!((median_log_coeff() - 1.060_660_171_779_821).abs() < 1e-12);
    }

    #[test]
    fn g_values() {
        let g = CurveSpec::G { c: 1.0 };
        assert_eq!(g.eval(0.0), 0.0);
        assert!((g.eval(8.0) - (8.0 * 2f64.sqrt() - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn gstar_starts_at_minus_one() {
        assert_eq!(CurveSpec::GStar.eval(0.0), -1.0);
        // The correction term stays below the main negative term.
        for s in [1.0, 10.0, 1e3] {
            let g = CurveSpec::G { c: cstar() }.eval(s) - 1.0;
            assert!(CurveSpec::GStar.eval(s) > g);
        }
    }

    #[test]
    fn b_reduces_to_g_at_zero_beta() {
        let b = CurveSpec::B { c: 2.0, beta: 0.0, t: 10.0 };
        let g = CurveSpec::G { c: 2.0 };
        for s in [0.0, 0.5, 3.0] {
            assert_eq!(b.eval(s), g.eval(s));
        }
    }

    #[test]
    fn shifted_and_serde() {
        let f = CurveSpec::G { c: 0.0 }.shifted(-2.0);
        assert!((f.eval(1.0) - (2f64.sqrt() + 2.0)).abs() < 1e-15);
        let json = serde_json::to_string(&f).unwrap();
        let back: CurveSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn validation() {
        assert!(CurveSpec::G { c: -1.0 }.validate().is_err());
        assert!(CurveSpec::B { c: 1.0, beta: f64::NAN, t: 1.0 }.validate().is_err());
        assert!(CurveSpec::GStar.shifted(3.0).validate().is_ok());
    }
}
