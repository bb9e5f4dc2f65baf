//! Renter demand, the owner's reduced problem and its first-order residual.

use serde::{Deserialize, Serialize};

use crate::benefit::{BenefitFunction, Side};
use crate::error::{Error, Result};
use crate::market::{Market, OwnerAction};

/// How a sharing subsidy `epsilon` turns into a per-unit owner bonus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsidyModel {
    /// Owners receive `epsilon` per shared unit; the platform pays `epsilon * S`.
    #[default]
    PerUnit,
    /// Owners receive `p * epsilon` per shared unit; the platform pays `p * epsilon * S`.
    PerUnitPrice,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Subsidy {
    pub epsilon: f64,
    pub model: SubsidyModel,
}

impl Subsidy {
    pub const NONE: Subsidy = Subsidy {
        epsilon: 0.0,
        model: SubsidyModel::PerUnit,
    };

    pub fn new(epsilon: f64, model: SubsidyModel) -> Self {
        Self { epsilon, model }
    }

    pub fn per_unit(epsilon: f64) -> Self {
        Self::new(epsilon, SubsidyModel::PerUnit)
    }

    /// Bonus an owner earns per shared unit at `price`.
    pub fn bonus(&self, price: f64) -> f64 {
        match self.model {
            SubsidyModel::PerUnit => self.epsilon,
            SubsidyModel::PerUnitPrice => price * self.epsilon,
        }
    }

    /// Platform outlay for total shared supply `supply`.
    pub fn platform_cost(&self, price: f64, supply: f64) -> f64 {
        self.bonus(price) * supply
    }
}

/// Usage a renter buys at `price`.
pub fn renter_demand(g: &BenefitFunction, price: f64) -> f64 {
    g.optimal_usage(price)
}

/// Total renter demand `D(p)`.
pub fn aggregate_demand(m: &Market, price: f64) -> f64 {
    m.renters().iter().map(|r| renter_demand(&r.benefit, price)).sum()
}

/// Everything an owner needs to know about the rest of the market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OwnerEnvironment {
    pub price: f64,
    pub cost: f64,
    /// Per-unit sharing bonus (already converted from the subsidy model).
    pub bonus: f64,
    pub demand: f64,
    pub others_supply: f64,
}

impl OwnerEnvironment {
    pub fn new(price: f64, cost: f64, bonus: f64, demand: f64, others_supply: f64) -> Self {
        Self {
            price,
            cost,
            bonus,
            demand,
            others_supply,
        }
    }

    /// Fraction of shared capacity that gets rented when this owner shares `s`.
    pub fn fill_rate(&self, s: f64) -> f64 {
        let total = self.others_supply + s;
        if self.demand <= 0.0 {
            0.0
        } else if total <= self.demand {
            1.0
        } else {
            self.demand / total
        }
    }

    /// Rental income `p * min(D / S, 1) * s`.
    pub fn rental_income(&self, s: f64) -> f64 {
        self.price * self.fill_rate(s) * s
    }

    fn income_slope_right(&self, s: f64) -> f64 {
        self.income_slope_right_band(s, 0.0)
    }

    /// Right slope of rental income; totals within `band` (relative) of the
    /// demand are treated as sitting on the kink.
    fn income_slope_right_band(&self, s: f64, band: f64) -> f64 {
        let total = self.others_supply + s;
        if self.demand <= 0.0 {
            0.0
        } else if total < self.demand * (1.0 - band) {
            self.price
        } else {
            self.price * self.demand * self.others_supply / (total * total)
        }
    }

    fn income_slope_left_band(&self, s: f64, band: f64) -> f64 {
        let total = self.others_supply + s;
        if self.demand <= 0.0 {
            0.0
        } else if total <= self.demand * (1.0 + band) {
            self.price
        } else {
            self.price * self.demand * self.others_supply / (total * total)
        }
    }
}

/// `f(x) + p * min(D/S, 1) * s + bonus * s - c * (x + s)`.
pub fn owner_utility(f: &BenefitFunction, env: &OwnerEnvironment, x: f64, s: f64) -> Result<f64> {
    check_action(x, s)?;
    Ok(utility_unchecked(f, env, x, s))
}

pub(crate) fn utility_unchecked(f: &BenefitFunction, env: &OwnerEnvironment, x: f64, s: f64) -> f64 {
    f.value_unchecked(x) + env.rental_income(s) + (env.bonus - env.cost) * s - env.cost * x
}

fn check_action(x: f64, s: f64) -> Result<()> {
    if x >= 0.0 && s >= 0.0 && x + s <= 1.0 + 1e-12 {
        Ok(())
    } else {
        Err(Error::Domain(format!("infeasible owner action x={x}, s={s}")))
    }
}

/// Optimal owner action given the environment, using `steps` bisection halvings.
///
/// For a fixed share `s` the best self use is `min(x_hat, 1 - s)` where
/// `x_hat` maximizes `f(x) - c x` on `[0, 1]`. The resulting reduced objective
/// in `s` is concave, so its right derivative is nonincreasing and the optimum
/// is the smallest `s` at which that derivative stops being positive.
pub fn owner_best_response_with(f: &BenefitFunction, env: &OwnerEnvironment, steps: usize) -> OwnerAction {
    let x_hat = f.optimal_usage_unit(env.cost);
    let slope = |s: f64| reduced_slope_right(f, env, x_hat, s);
    let s = if slope(0.0) <= 0.0 {
        0.0
    } else {
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..steps {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if slope(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    OwnerAction::new(x_hat.min(1.0 - s), s)
}

pub fn owner_best_response(f: &BenefitFunction, env: &OwnerEnvironment) -> OwnerAction {
    owner_best_response_with(f, env, 64)
}

fn reduced_slope_right(f: &BenefitFunction, env: &OwnerEnvironment, x_hat: f64, s: f64) -> f64 {
    let self_use = if 1.0 - s > x_hat {
        0.0
    } else {
        -(f.slope(1.0 - s, Side::Left) - env.cost)
    };
    self_use + env.income_slope_right(s) + env.bonus - env.cost
}

/// Relative distance from full utilization inside which the residual
/// treats supply as exactly meeting demand.
const KINK_BAND: f64 = 1e-7;

/// Largest utility gain rate along any feasible direction at `(x, s)`.
///
/// Directions are the four coordinate moves plus the two transfers between
/// self use and sharing that keep `x + s` fixed. Zero means the first-order
/// conditions hold. An unbounded marginal benefit at `x = 0` yields `+inf`.
pub fn gradient_residual(f: &BenefitFunction, env: &OwnerEnvironment, x: f64, s: f64) -> Result<f64> {
    check_action(x, s)?;
    let slack = x + s < 1.0 - 1e-12;
    let b = env.bonus;
    let c = env.cost;
    let mut worst = 0.0_f64;
    let mut push = |v: f64| worst = worst.max(v);

    let fr = (x < 1.0).then(|| f.slope(x, Side::Right));
    let fl = (x > 0.0).then(|| f.slope(x, Side::Left));
    let qr = env.income_slope_right_band(s, KINK_BAND);
    let ql = (s > 0.0).then(|| env.income_slope_left_band(s, KINK_BAND));

    if slack {
        if let Some(fr) = fr {
            push(fr - c);
        }
        push(qr + b - c);
    }
    if let Some(fl) = fl {
        push(c - fl);
        push(qr + b - fl);
    }
    if let Some(ql) = ql {
        push(c - ql - b);
        if let Some(fr) = fr {
            push(fr - ql - b);
        }
    }
    Ok(worst)
}
