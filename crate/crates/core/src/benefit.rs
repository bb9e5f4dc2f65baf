//! Concave usage-benefit curves for owners (self use) and renters.
//!
//! Every variant satisfies `value(0) = 0` and is concave on its domain.
//! Quadratic, linear and tabulated curves live on `[0, 1]`. The entropy
//! curve `(u + u ln(alpha/n) - u ln u) / beta` is the benefit whose optimal
//! usage reproduces an exponential aggregate demand `alpha * exp(-beta p)`
//! over `n` identical renters; it is evaluated on `[0, inf)` so that the
//! exponential shape survives aggregation even when `alpha / n > 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which one-sided derivative to take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// A one-sided derivative, possibly capped at the market's derivative bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Derivative {
    pub value: f64,
    /// The true derivative is unbounded and `value` is the configured cap.
    pub capped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum BenefitFunction {
    /// `-a u^2 + b u`
    Quadratic { a: f64, b: f64 },
    /// `alpha u`
    Linear { alpha: f64 },
    /// `(u + u ln(alpha / n) - u ln u) / beta`
    Entropy { alpha: f64, beta: f64, n: f64 },
    /// Piecewise-linear interpolation of `(u, value)` breakpoints covering `[0, 1]`.
    Tabulated { points: Vec<(f64, f64)> },
}

const CONCAVITY_SLACK: f64 = 1e-9;

impl BenefitFunction {
    pub fn quadratic(a: f64, b: f64) -> Result<Self> {
        Self::Quadratic { a, b }.validated()
    }

    pub fn linear(alpha: f64) -> Result<Self> {
        Self::Linear { alpha }.validated()
    }

    pub fn entropy(alpha: f64, beta: f64, n: f64) -> Result<Self> {
        Self::Entropy { alpha, beta, n }.validated()
    }

    pub fn tabulated(points: Vec<(f64, f64)>) -> Result<Self> {
        Self::Tabulated { points }.validated()
    }

    /// Checks parameter ranges and, for tables, ordering and concavity.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidBenefit(msg));
        match *self {
            Self::Quadratic { a, b } => {
                if !(a.is_finite() && a > 0.0) {
                    return bad(format!("quadratic curvature must be positive, got a={a}"));
                }
                if !(b.is_finite() && b >= 0.0) {
                    return bad(format!("quadratic slope must be nonnegative, got b={b}"));
                }
            }
            Self::Linear { alpha } => {
                if !(alpha.is_finite() && alpha >= 0.0) {
                    return bad(format!("linear slope must be nonnegative, got alpha={alpha}"));
                }
            }
            Self::Entropy { alpha, beta, n } => {
                if !(alpha.is_finite() && alpha > 0.0) {
                    return bad(format!("entropy scale must be positive, got alpha={alpha}"));
                }
                if !(beta.is_finite() && beta > 0.0) {
                    return bad(format!("entropy rate must be positive, got beta={beta}"));
                }
                if !(n.is_finite() && n > 0.0) {
                    return bad(format!("entropy population must be positive, got n={n}"));
                }
            }
            Self::Tabulated { ref points } => {
                if points.len() < 2 {
                    return bad("table needs at least two breakpoints".into());
                }
                if points.iter().any(|&(u, v)| !u.is_finite() || !v.is_finite()) {
                    return bad("table breakpoints must be finite".into());
                }
                if points[0] != (0.0, 0.0) {
                    return bad("table must start at (0, 0)".into());
                }
                if points[points.len() - 1].0 != 1.0 {
                    return bad("table must end at usage 1".into());
                }
                let mut prev_slope = f64::INFINITY;
                for w in points.windows(2) {
                    let (u0, v0) = w[0];
                    let (u1, v1) = w[1];
                    if u1 <= u0 {
                        return bad(format!("breakpoints must be strictly increasing ({u0} then {u1})"));
                    }
                    let slope = (v1 - v0) / (u1 - u0);
                    if slope > prev_slope + CONCAVITY_SLACK {
                        return bad(format!("table is not concave at u={u0}"));
                    }
                    prev_slope = slope;
                }
            }
        }
        Ok(())
    }

    fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    /// Largest usage level on which the curve is defined.
    pub fn usage_cap(&self) -> f64 {
        match self {
            Self::Entropy { .. } => f64::INFINITY,
            _ => 1.0,
        }
    }

    /// `true` unless the curve has kinks (tables with more than one slope).
    pub fn is_differentiable(&self) -> bool {
        match self {
            Self::Tabulated { points } => {
                let mut slopes = points.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0));
                let first = slopes.next().unwrap_or(0.0);
                slopes.all(|s| (s - first).abs() <= CONCAVITY_SLACK)
            }
            _ => true,
        }
    }

    /// Benefit at usage `u`.
    pub fn value(&self, u: f64) -> Result<f64> {
        if !(u >= 0.0 && u <= self.usage_cap()) {
            return Err(Error::Domain(format!("usage {u} outside [0, {}]", self.usage_cap())));
        }
        Ok(self.value_unchecked(u))
    }

    pub(crate) fn value_unchecked(&self, u: f64) -> f64 {
        match *self {
            Self::Quadratic { a, b } => -a * u * u + b * u,
            Self::Linear { alpha } => alpha * u,
            Self::Entropy { alpha, beta, n } => {
                if u <= 0.0 {
                    0.0
                } else {
                    (u + u * (alpha / n).ln() - u * u.ln()) / beta
                }
            }
            Self::Tabulated { ref points } => {
                let j = segment_right(points, u);
                let (u0, v0) = points[j];
                let (u1, v1) = points[j + 1];
                v0 + (v1 - v0) * (u - u0) / (u1 - u0)
            }
        }
    }

    /// Raw one-sided slope without domain checks; `+inf` for the entropy
    /// curve at zero.
    pub(crate) fn slope(&self, u: f64, side: Side) -> f64 {
        match *self {
            Self::Quadratic { a, b } => b - 2.0 * a * u,
            Self::Linear { alpha } => alpha,
            Self::Entropy { alpha, beta, n } => {
                if u <= 0.0 {
                    f64::INFINITY
                } else {
                    (alpha / (n * u)).ln() / beta
                }
            }
            Self::Tabulated { ref points } => {
                let j = match side {
                    Side::Right => segment_right(points, u),
                    Side::Left => segment_left(points, u),
                };
                let (u0, v0) = points[j];
                let (u1, v1) = points[j + 1];
                (v1 - v0) / (u1 - u0)
            }
        }
    }

    /// One-sided derivative at `u`. An unbounded right derivative at zero is
    /// reported as `bound` with `capped = true`.
    pub fn deriv(&self, u: f64, side: Side, bound: f64) -> Result<Derivative> {
        let cap = self.usage_cap();
        let ok = match side {
            Side::Left => u > 0.0 && u <= cap,
            Side::Right => u >= 0.0 && u < cap,
        };
        if !ok {
            return Err(Error::Domain(format!("{side:?} derivative undefined at usage {u}")));
        }
        let raw = self.slope(u, side);
        Ok(if raw > bound && !raw.is_finite() {
            Derivative {
                value: bound,
                capped: true,
            }
        } else {
            Derivative {
                value: raw,
                capped: false,
            }
        })
    }

    /// Right derivative at zero (`+inf` for the entropy curve).
    pub fn slope_at_zero(&self) -> f64 {
        self.slope(0.0, Side::Right)
    }

    /// Left derivative at usage one.
    pub fn slope_at_one(&self) -> f64 {
        self.slope(1.0, Side::Left)
    }

    /// Maximizer of `value(u) - price * u` over the curve's domain. Ties are
    /// broken toward the smaller usage.
    pub fn optimal_usage(&self, price: f64) -> f64 {
        match *self {
            Self::Quadratic { a, b } => ((b - price) / (2.0 * a)).clamp(0.0, 1.0),
            Self::Linear { alpha } => {
                if alpha > price {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Entropy { alpha, beta, n } => (alpha / n) * (-beta * price).exp(),
            Self::Tabulated { ref points } => {
                for w in points.windows(2) {
                    let slope = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
                    if slope <= price {
                        return w[0].0;
                    }
                }
                points[points.len() - 1].0
            }
        }
    }

    /// Optimal usage restricted to `[0, 1]`, as used for owners' self use.
    pub(crate) fn optimal_usage_unit(&self, price: f64) -> f64 {
        self.optimal_usage(price).min(1.0)
    }
}

/// Index of the segment `[u_j, u_{j+1})` containing `u` (last segment for `u = 1`).
fn segment_right(points: &[(f64, f64)], u: f64) -> usize {
    let last = points.len() - 2;
    match points.iter().position(|&(b, _)| b > u) {
        Some(0) => 0,
        Some(k) => (k - 1).min(last),
        None => last,
    }
}

/// Index of the segment `(u_j, u_{j+1}]` containing `u` (first segment for `u = 0`).
fn segment_left(points: &[(f64, f64)], u: f64) -> usize {
    match points.iter().position(|&(b, _)| b >= u) {
        Some(0) | None => 0,
        Some(k) => k - 1,
    }
    .min(points.len() - 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DIDI_ALPHA: f64 = 19190.0;
    const DIDI_BETA: f64 = 0.0832;
    const DIDI_N: f64 = 1919.0;

    #[test]
    fn quadratic_value_matches_reference_owner() {
        let f = BenefitFunction::quadratic(1.0, 4.0).unwrap();
        assert!((f.value(0.7).unwrap() - 2.31).abs() < 1e-12);
    }

    #[test]
    fn every_variant_is_zero_at_zero() {
        let fs = [
            BenefitFunction::quadratic(0.5, 0.7).unwrap(),
            BenefitFunction::linear(3.0).unwrap(),
            BenefitFunction::entropy(DIDI_ALPHA, DIDI_BETA, DIDI_N).unwrap(),
            BenefitFunction::tabulated(vec![(0.0, 0.0), (0.5, 1.0), (1.0, 1.2)]).unwrap(),
        ];
        for f in &fs {
            assert_eq!(f.value(0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn entropy_value_direct_formula() {
        let f = BenefitFunction::entropy(DIDI_ALPHA, DIDI_BETA, DIDI_N).unwrap();
        // 40-digit evaluation of 0.5 * (1 + ln 10 - ln 0.5) / 0.0832
        let expected = 24.012_814_143_954_27;
        assert!((f.value(0.5).unwrap() - expected).abs() < 1e-11);
    }

    #[test]
    fn value_rejects_out_of_domain() {
        let f = BenefitFunction::quadratic(1.0, 4.0).unwrap();
        assert!(matches!(f.value(1.5), Err(Error::Domain(_))));
        assert!(matches!(f.value(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn derivative_examples() {
        let f = BenefitFunction::quadratic(1.0, 3.0).unwrap();
        let d = f.deriv(0.2, Side::Right, 10.0).unwrap();
        assert!((d.value - 2.6).abs() < 1e-12);
        let g = BenefitFunction::linear(5.0).unwrap();
        for u in [0.0, 0.3, 0.99] {
            assert_eq!(g.deriv(u, Side::Right, 10.0).unwrap().value, 5.0);
        }
        for u in [0.01, 0.3, 1.0] {
            assert_eq!(g.deriv(u, Side::Left, 10.0).unwrap().value, 5.0);
        }
    }

    #[test]
    fn derivative_endpoint_errors() {
        let f = BenefitFunction::quadratic(1.0, 3.0).unwrap();
        assert!(f.deriv(0.0, Side::Left, 10.0).is_err());
        assert!(f.deriv(1.0, Side::Right, 10.0).is_err());
    }

    #[test]
    fn entropy_derivative_matches_finite_difference() {
        let f = BenefitFunction::entropy(DIDI_ALPHA, DIDI_BETA, DIDI_N).unwrap();
        let h = 1e-7;
        for u in [0.05, 0.3, 0.8, 2.5] {
            let fd = (f.value(u + h).unwrap() - f.value(u - h).unwrap()) / (2.0 * h);
            let d = f.deriv(u, Side::Right, 1e6).unwrap().value;
            assert!((fd - d).abs() < 1e-5, "u={u}: fd={fd} d={d}");
        }
        let at_zero = f.deriv(0.0, Side::Right, 200.0).unwrap();
        assert!(at_zero.capped);
        assert_eq!(at_zero.value, 200.0);
    }

    #[test]
    fn tabulated_rejects_convex_and_unordered() {
        assert!(BenefitFunction::tabulated(vec![(0.0, 0.0), (0.5, 0.1), (1.0, 1.0)]).is_err());
        assert!(BenefitFunction::tabulated(vec![(0.0, 0.0), (0.5, 1.0), (0.5, 1.1), (1.0, 1.2)]).is_err());
        assert!(BenefitFunction::tabulated(vec![(0.1, 0.0), (1.0, 1.0)]).is_err());
    }

    #[test]
    fn tabulated_one_sided_slopes_at_breakpoint() {
        let f = BenefitFunction::tabulated(vec![(0.0, 0.0), (0.5, 1.0), (1.0, 1.2)]).unwrap();
        assert!((f.deriv(0.5, Side::Left, 10.0).unwrap().value - 2.0).abs() < 1e-12);
        assert!((f.deriv(0.5, Side::Right, 10.0).unwrap().value - 0.4).abs() < 1e-12);
        assert!((f.value(0.75).unwrap() - 1.1).abs() < 1e-12);
        assert!(!f.is_differentiable());
    }

    #[test]
    fn optimal_usage_examples() {
        let g = BenefitFunction::quadratic(1.0, 3.0).unwrap();
        assert!((g.optimal_usage(2.6) - 0.2).abs() < 1e-12);
        assert_eq!(g.optimal_usage(3.0), 0.0);
        let lin = BenefitFunction::linear(2.0).unwrap();
        assert_eq!(lin.optimal_usage(2.0), 0.0);
        assert_eq!(lin.optimal_usage(1.999), 1.0);
        let tab = BenefitFunction::tabulated(vec![(0.0, 0.0), (0.5, 1.0), (1.0, 1.2)]).unwrap();
        assert_eq!(tab.optimal_usage(0.4), 0.5);
        assert_eq!(tab.optimal_usage(0.3), 1.0);
        assert_eq!(tab.optimal_usage(2.0), 0.0);
    }
}
