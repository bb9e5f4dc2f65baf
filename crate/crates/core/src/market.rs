//! Market scenarios and the profitability / no-monopoly checks.

use serde::{Deserialize, Serialize};

use crate::agents::aggregate_demand;
use crate::benefit::BenefitFunction;
use crate::error::{Error, Result};
use crate::settings::Settings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Owner {
    pub benefit: BenefitFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Renter {
    pub benefit: BenefitFunction,
}

impl Owner {
    pub fn new(benefit: BenefitFunction) -> Self {
        Self { benefit }
    }
}

impl Renter {
    pub fn new(benefit: BenefitFunction) -> Self {
        Self { benefit }
    }
}

/// An owner's split of the unit resource between self use `x` and sharing `s`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OwnerAction {
    pub x: f64,
    pub s: f64,
}

impl OwnerAction {
    pub fn new(x: f64, s: f64) -> Self {
        Self { x, s }
    }

    pub fn is_feasible(&self) -> bool {
        self.x >= 0.0 && self.s >= 0.0 && self.x + self.s <= 1.0 + 1e-12
    }
}

/// Immutable scenario: both populations, the per-unit usage cost and the
/// bound on marginal benefits at zero usage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Market {
    owners: Vec<Owner>,
    renters: Vec<Renter>,
    cost: f64,
    deriv_bound: f64,
    #[serde(default)]
    settings: Settings,
}

impl Market {
    pub fn new(owners: Vec<Owner>, renters: Vec<Renter>, cost: f64, deriv_bound: f64) -> Result<Self> {
        if owners.len() < 2 {
            return Err(Error::InvalidMarket(format!(
                "at least two owners are required, got {}",
                owners.len()
            )));
        }
        if !(cost.is_finite() && cost >= 0.0) {
            return Err(Error::InvalidMarket(format!("cost must be nonnegative, got {cost}")));
        }
        if !(deriv_bound.is_finite() && deriv_bound > 0.0) {
            return Err(Error::InvalidMarket(format!(
                "derivative bound must be positive, got {deriv_bound}"
            )));
        }
        let benefits = owners
            .iter()
            .map(|o| &o.benefit)
            .chain(renters.iter().map(|r| &r.benefit));
        for f in benefits {
            f.validate()?;
            let d0 = f.slope_at_zero();
            if d0.is_finite() && d0 > deriv_bound + 1e-12 {
                return Err(Error::InvalidMarket(format!(
                    "marginal benefit {d0} at zero exceeds derivative bound {deriv_bound}"
                )));
            }
        }
        Ok(Self {
            owners,
            renters,
            cost,
            deriv_bound,
            settings: Settings::default(),
        })
    }

    pub fn with_settings(mut self, settings: Settings) -> Self {
        self.settings = settings;
        self
    }

    pub fn owners(&self) -> &[Owner] {
        &self.owners
    }

    pub fn renters(&self) -> &[Renter] {
        &self.renters
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn deriv_bound(&self) -> f64 {
        self.deriv_bound
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    pub fn n_owners(&self) -> usize {
        self.owners.len()
    }

    pub fn n_renters(&self) -> usize {
        self.renters.len()
    }

    /// Copy of the market with a different usage cost.
    pub fn with_cost(&self, cost: f64) -> Result<Self> {
        Ok(Self::new(self.owners.clone(), self.renters.clone(), cost, self.deriv_bound)?.with_settings(self.settings))
    }

    /// Highest price any search needs to look at. Demand vanishes beyond it
    /// unless some renter has an unbounded marginal benefit at zero.
    pub fn price_ceiling(&self) -> f64 {
        self.deriv_bound
    }

    /// Some agent has an unbounded marginal benefit at zero usage.
    pub fn has_unbounded_marginals(&self) -> bool {
        self.owners
            .iter()
            .map(|o| &o.benefit)
            .chain(self.renters.iter().map(|r| &r.benefit))
            .any(|f| !f.slope_at_zero().is_finite())
    }

    /// Some owner benefit has kinks, so equilibria may not be unique.
    pub fn has_nondifferentiable_owners(&self) -> bool {
        self.owners.iter().any(|o| !o.benefit.is_differentiable())
    }
}

/// Outcome of the profitability and no-monopoly checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_owners_ok: bool,
    /// Some grid price makes `p * D(p) >= c` (with positive volume).
    pub profitable: bool,
    pub profitable_witness: Option<f64>,
    pub profitable_witness_volume: f64,
    /// `sup { p : D(p) >= 1 }`, when demand ever reaches one unit.
    pub p_one: Option<f64>,
    /// Owners whose left marginal benefit at full self use is below `p_one`.
    pub owners_below_p_one: Vec<bool>,
    /// Every owner is below `p_one`.
    pub no_monopoly_strict: bool,
    /// At least two owners are below `p_one`; this is what gates analyses.
    pub no_monopoly: bool,
}

impl ValidationReport {
    pub fn passes(&self) -> bool {
        self.n_owners_ok && self.profitable && self.no_monopoly
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.n_owners_ok {
            out.push("at least two owners are required".to_string());
        }
        if !self.profitable {
            out.push(format!(
                "market is not profitable: max p*D(p) on the search grid is {}",
                self.profitable_witness_volume
            ));
        }
        if !self.no_monopoly {
            out.push(match self.p_one {
                None => "no owner monopoly check failed: demand never reaches one unit".to_string(),
                Some(p) => format!(
                    "no owner monopoly check failed: fewer than two owners have marginal self-use benefit below p_o={p}"
                ),
            });
        }
        out
    }
}

const VALIDATION_GRID: usize = 1000;

pub fn validate_market(m: &Market) -> ValidationReport {
    let ceiling = m.price_ceiling();
    let mut best = (0.0, 0.0);
    for k in 0..=VALIDATION_GRID {
        let p = ceiling * k as f64 / VALIDATION_GRID as f64;
        let v = p * aggregate_demand(m, p);
        if v > best.1 {
            best = (p, v);
        }
    }
    let profitable = best.1 > 0.0 && best.1 >= m.cost();

    let p_one = demand_level_price(m, 1.0);
    let owners_below_p_one: Vec<bool> = m
        .owners()
        .iter()
        .map(|o| p_one.is_some_and(|p| o.benefit.slope_at_one() < p))
        .collect();
    let below = owners_below_p_one.iter().filter(|&&b| b).count();

    ValidationReport {
        n_owners_ok: m.n_owners() >= 2,
        profitable,
        profitable_witness: profitable.then_some(best.0),
        profitable_witness_volume: best.1,
        p_one,
        no_monopoly_strict: below == m.n_owners(),
        no_monopoly: below >= 2,
        owners_below_p_one,
    }
}

/// Validates and converts a failing report into an error.
pub fn require_valid(m: &Market) -> Result<ValidationReport> {
    let report = validate_market(m);
    if report.passes() {
        Ok(report)
    } else {
        Err(Error::AssumptionViolated(report.failures().join("; ")))
    }
}

/// `sup { p in [0, ceiling] : D(p) >= level }`, by bisection on the
/// nonincreasing demand curve.
fn demand_level_price(m: &Market, level: f64) -> Option<f64> {
    if aggregate_demand(m, 0.0) < level {
        return None;
    }
    let mut lo = 0.0;
    let mut hi = m.price_ceiling();
    if aggregate_demand(m, hi) >= level {
        return Some(hi);
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if aggregate_demand(m, mid) >= level {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * hi.max(1.0) {
            break;
        }
    }
    Some(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{linear_tight_market, quadratic_reference_market};

    #[test]
    fn quadratic_reference_passes_both_checks() {
        let r = validate_market(&quadratic_reference_market());
        assert!(r.passes(), "{:?}", r.failures());
        assert!(r.no_monopoly_strict);
        let p_one = r.p_one.unwrap();
        assert!((p_one - 224.0 / 75.0).abs() < 1e-9);
    }

    #[test]
    fn unprofitable_cost_fails() {
        // max p * (225 - 75 p) = 168.75
        let m = quadratic_reference_market().with_cost(200.0).unwrap();
        let r = validate_market(&m);
        assert!(!r.profitable);
        assert!(!r.passes());
        assert!(require_valid(&m).is_err());
    }

    #[test]
    fn linear_tight_linear_market_passes() {
        let m = linear_tight_market(0.01, 0.01);
        let r = validate_market(&m);
        assert!(r.profitable);
        assert!((m.cost() - 0.01).abs() < 1e-15);
        // the top owner (value 5) sits above p_o = 4.01
        assert!(!r.no_monopoly_strict);
        assert!(r.no_monopoly);
        assert!(r.passes());
    }

    #[test]
    fn rejects_single_owner_and_bad_bound() {
        let f = BenefitFunction::quadratic(1.0, 1.0).unwrap();
        assert!(Market::new(vec![Owner::new(f.clone())], vec![], 0.0, 2.0).is_err());
        let owners = vec![Owner::new(f.clone()), Owner::new(f.clone())];
        assert!(Market::new(owners.clone(), vec![], 0.0, 0.5).is_err());
        assert!(Market::new(owners, vec![], -1.0, 2.0).is_err());
    }
}
