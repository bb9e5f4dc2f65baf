//! Independent reference solvers used to cross-check the main pipeline.
//!
//! [`linear_market_solve`] handles all-linear markets under price-taking
//! owners by enumerating every (renters served, owners sharing) pattern in
//! exact rational arithmetic. [`brute_force_equilibrium`] runs sequential
//! best responses over a uniform action grid.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::agents::{aggregate_demand, renter_demand, OwnerEnvironment, Subsidy};
use crate::equilibrium::{max_residual, EquilibriumState};
use crate::error::{Error, Result};
use crate::market::{Market, OwnerAction};

type Q = BigRational;

fn q(v: f64) -> Result<Q> {
    Q::from_float(v).ok_or_else(|| Error::Domain(format!("value {v} is not finite")))
}

fn f(v: &Q) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// Price interval `(lo, hi)` with independent open/closed ends.
#[derive(Debug, Clone, PartialEq)]
struct Interval {
    lo: Q,
    lo_closed: bool,
    hi: Option<Q>,
    hi_closed: bool,
}

impl Interval {
    fn intersect(&self, other: &Interval) -> Option<Interval> {
        let (lo, lo_closed) = match self.lo.cmp(&other.lo) {
            std::cmp::Ordering::Greater => (self.lo.clone(), self.lo_closed),
            std::cmp::Ordering::Less => (other.lo.clone(), other.lo_closed),
            std::cmp::Ordering::Equal => (self.lo.clone(), self.lo_closed && other.lo_closed),
        };
        let (hi, hi_closed) = match (&self.hi, &other.hi) {
            (None, None) => (None, false),
            (Some(a), None) => (Some(a.clone()), self.hi_closed),
            (None, Some(b)) => (Some(b.clone()), other.hi_closed),
            (Some(a), Some(b)) => match a.cmp(b) {
                std::cmp::Ordering::Less => (Some(a.clone()), self.hi_closed),
                std::cmp::Ordering::Greater => (Some(b.clone()), other.hi_closed),
                std::cmp::Ordering::Equal => (Some(a.clone()), self.hi_closed && other.hi_closed),
            },
        };
        let nonempty = match &hi {
            None => true,
            Some(h) => lo < *h || (lo == *h && lo_closed && hi_closed),
        };
        nonempty.then_some(Interval {
            lo,
            lo_closed,
            hi,
            hi_closed,
        })
    }
}

/// One consistent price-taking outcome of an all-linear market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConfiguration {
    /// Number of renters buying (the highest-valued ones).
    pub renters_served: usize,
    /// Number of owners sharing (the lowest-valued ones).
    pub owners_sharing: usize,
    pub price_lo: f64,
    pub price_lo_closed: bool,
    /// `None` when the interval is unbounded above.
    pub price_hi: Option<f64>,
    pub price_hi_closed: bool,
    pub welfare: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMarketSolution {
    pub owner_values: Vec<f64>,
    pub renter_values: Vec<f64>,
    pub cost: f64,
    pub configurations: Vec<LinearConfiguration>,
    /// Welfare-maximizing configuration and its price interval.
    pub sw_interval: (f64, f64),
    pub p_sw: f64,
    pub welfare_sw: f64,
    /// Revenue-maximizing configuration: the reported price is the top of
    /// its interval when attained, its midpoint otherwise.
    pub p_r: f64,
    pub p_r_sup: f64,
    pub revenue_r: f64,
    pub welfare_r: f64,
    pub demand_sw: usize,
    pub supply_sw: usize,
    pub demand_r: usize,
    pub supply_r: usize,
    pub gap: f64,
    pub bound_general: f64,
    pub bound_special: f64,
    pub bound_interpretable: f64,
}

struct Candidate {
    d: usize,
    s: usize,
    interval: Interval,
    welfare: Q,
}

/// Exact solution of an all-linear market with price-taking participants.
///
/// A renter buys iff its value exceeds `p`. An owner shares its whole unit
/// iff the income per shared unit `p * min(d / s, 1)` exceeds both its own
/// value and the usage cost.
pub fn linear_market_solve(owner_values: &[f64], renter_values: &[f64], cost: f64) -> Result<LinearMarketSolution> {
    let mut all: Vec<f64> = owner_values.iter().chain(renter_values).copied().collect();
    if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Domain("private values must be positive".into()));
    }
    all.sort_by(f64::total_cmp);
    if all.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::DuplicateValues(format!("{all:?}")));
    }
    if owner_values.is_empty() {
        return Err(Error::Domain("at least one owner is required".into()));
    }
    let c = q(cost)?;
    let mut owners: Vec<Q> = owner_values.iter().map(|&v| q(v)).collect::<Result<_>>()?;
    owners.sort();
    let mut renters: Vec<Q> = renter_values.iter().map(|&v| q(v)).collect::<Result<_>>()?;
    renters.sort_by(|a, b| b.cmp(a));
    let (n_o, n_r) = (owners.len(), renters.len());

    let mut candidates = Vec::new();
    for d in 0..=n_r {
        // renters with value > p buy: p in [value_{d+1}, value_d)
        let renter_iv = Interval {
            lo: if d < n_r { renters[d].clone() } else { Q::zero() },
            lo_closed: true,
            hi: if d > 0 { Some(renters[d - 1].clone()) } else { None },
            hi_closed: false,
        };
        for s in 0..=n_o {
            // income per shared unit is p * k
            let k = if d == 0 {
                Q::zero()
            } else if s == 0 {
                Q::one()
            } else {
                Q::new(BigInt::from(d.min(s)), BigInt::from(s))
            };
            let owner_iv = if k.is_zero() {
                if s > 0 {
                    continue;
                }
                Interval {
                    lo: Q::zero(),
                    lo_closed: true,
                    hi: None,
                    hi_closed: false,
                }
            } else {
                let lower = (s > 0).then(|| owners[s - 1].clone().max(c.clone()) / &k);
                let upper = (s < n_o).then(|| owners[s].clone().max(c.clone()) / &k);
                Interval {
                    lo: lower.clone().unwrap_or_else(Q::zero),
                    lo_closed: lower.is_none(),
                    hi: upper,
                    hi_closed: true,
                }
            };
            if let Some(interval) = renter_iv.intersect(&owner_iv) {
                let keep: Q = owners[s..]
                    .iter()
                    .map(|a| (a - &c).max(Q::zero()))
                    .fold(Q::zero(), |acc, v| acc + v);
                let share_cost = &c * BigInt::from(s);
                let served = if d == 0 {
                    Q::zero()
                } else {
                    Q::new(BigInt::from(d.min(s)), BigInt::from(d))
                };
                let bought: Q = renters[..d].iter().fold(Q::zero(), |acc, v| acc + v);
                let welfare = keep - share_cost + served * bought;
                candidates.push(Candidate {
                    d,
                    s,
                    interval,
                    welfare,
                });
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::Numeric("no consistent price-taking configuration".into()));
    }

    let sw = candidates
        .iter()
        .max_by(|a, b| a.welfare.cmp(&b.welfare).then(b.interval.lo.cmp(&a.interval.lo)))
        .expect("nonempty");
    let revenue_sup = |cand: &Candidate| -> Option<Q> {
        let vol = BigInt::from(cand.d.min(cand.s));
        cand.interval.hi.as_ref().map(|h| h * vol)
    };
    let r = candidates
        .iter()
        .filter(|cand| cand.d.min(cand.s) > 0)
        .max_by(|a, b| {
            revenue_sup(a)
                .cmp(&revenue_sup(b))
                .then(b.interval.lo.cmp(&a.interval.lo))
        })
        .unwrap_or(sw);
    let r_hi = r.interval.hi.clone().unwrap_or_else(|| r.interval.lo.clone());
    let p_r = if r.interval.hi_closed {
        r_hi.clone()
    } else {
        (&r.interval.lo + &r_hi) / Q::from_integer(BigInt::from(2))
    };

    let (d_sw, s_sw) = (Q::from_integer(sw.d.into()), Q::from_integer(sw.s.into()));
    let (d_r, s_r) = (Q::from_integer(r.d.into()), Q::from_integer(r.s.into()));
    let fill_r = if r.d == 0 {
        Q::zero()
    } else if r.s <= r.d {
        Q::one()
    } else {
        &d_r / &s_r
    };
    let lost = &p_r * (&d_sw - &d_r);
    // owners sharing in both outcomes form a prefix, so growth is s_r - s_sw when positive
    let grown = if r.s >= sw.s { &s_r - &s_sw } else { Q::zero() };
    let special = if r.s > 0 {
        &p_r * (&d_sw - &d_r * &s_sw / &s_r)
    } else {
        &p_r * &d_sw
    };

    let configurations = candidates
        .iter()
        .map(|cand| LinearConfiguration {
            renters_served: cand.d,
            owners_sharing: cand.s,
            price_lo: f(&cand.interval.lo),
            price_lo_closed: cand.interval.lo_closed,
            price_hi: cand.interval.hi.as_ref().map(f),
            price_hi_closed: cand.interval.hi_closed,
            welfare: f(&cand.welfare),
        })
        .collect();

    Ok(LinearMarketSolution {
        owner_values: owner_values.to_vec(),
        renter_values: renter_values.to_vec(),
        cost,
        configurations,
        sw_interval: (f(&sw.interval.lo), sw.interval.hi.as_ref().map_or(f64::INFINITY, f)),
        p_sw: f(&sw.interval.lo),
        welfare_sw: f(&sw.welfare),
        p_r: f(&p_r),
        p_r_sup: f(&r_hi),
        revenue_r: f(&(&p_r * Q::from_integer(r.d.min(r.s).into()))),
        welfare_r: f(&r.welfare),
        demand_sw: sw.d,
        supply_sw: sw.s,
        demand_r: r.d,
        supply_r: r.s,
        gap: f(&(&sw.welfare - &r.welfare)),
        bound_general: f(&(&lost + &p_r * &fill_r * &grown)),
        bound_special: f(&special),
        bound_interpretable: f(&(&lost + &p_r * &fill_r * (&s_r - &s_sw))),
    })
}

const ORACLE_ROUNDS: usize = 10_000;
const ORACLE_IMPROVEMENT: f64 = 1e-6;

/// Sequential grid best responses from zero sharing.
///
/// Each owner in turn moves to the grid point `(j h, k h)`, `j + k < grid_n`,
/// with the highest utility given everyone else, if that beats its current
/// point by more than `1e-6`. Ties go to the smaller share, then the smaller
/// self use.
pub fn brute_force_equilibrium(m: &Market, price: f64, subsidy: Subsidy, grid_n: usize) -> Result<EquilibriumState> {
    if !(price.is_finite() && price >= 0.0) {
        return Err(Error::Domain(format!("price must be nonnegative, got {price}")));
    }
    if grid_n < 2 {
        return Err(Error::Domain("grid needs at least two points".into()));
    }
    let n = grid_n;
    let h = 1.0 / (n - 1) as f64;
    let c = m.cost();
    let demand = aggregate_demand(m, price);
    let bonus = subsidy.bonus(price);

    let self_values: Vec<Vec<f64>> = m
        .owners()
        .iter()
        .map(|o| {
            (0..n)
                .map(|j| o.benefit.value_unchecked(j as f64 * h) - c * j as f64 * h)
                .collect()
        })
        .collect();
    // running maximum over x-indices 0..=t and the first index attaining it
    let prefix: Vec<Vec<(f64, usize)>> = self_values
        .iter()
        .map(|vals| {
            let mut best = (f64::NEG_INFINITY, 0);
            vals.iter()
                .enumerate()
                .map(|(j, &v)| {
                    if v > best.0 {
                        best = (v, j);
                    }
                    best
                })
                .collect()
        })
        .collect();

    let mut idx: Vec<(usize, usize)> = vec![(0, 0); m.n_owners()];
    let mut total_k: usize = 0;
    let mut rounds = 0;
    loop {
        if rounds >= ORACLE_ROUNDS {
            return Err(Error::OracleNonConvergence(rounds));
        }
        rounds += 1;
        let mut moved = false;
        for i in 0..m.n_owners() {
            let (j0, k0) = idx[i];
            let others = (total_k - k0) as f64 * h;
            let env = OwnerEnvironment::new(price, c, bonus, demand, others);
            let share = |k: usize| {
                let s = k as f64 * h;
                env.rental_income(s) + (bonus - c) * s
            };
            let current = self_values[i][j0] + share(k0);
            let mut best = (f64::NEG_INFINITY, 0, 0);
            for k in 0..n {
                let (v, j) = prefix[i][n - 1 - k];
                let u = v + share(k);
                if u > best.0 {
                    best = (u, j, k);
                }
            }
            if best.0 > current + ORACLE_IMPROVEMENT {
                total_k = total_k - k0 + best.2;
                idx[i] = (best.1, best.2);
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }

    let actions: Vec<OwnerAction> = idx
        .iter()
        .map(|&(j, k)| OwnerAction::new(j as f64 * h, k as f64 * h))
        .collect();
    let total_supply = total_k as f64 * h;
    let fill = if demand <= 0.0 {
        0.0
    } else if total_supply <= demand {
        1.0
    } else {
        demand / total_supply
    };
    let mut state = EquilibriumState {
        price,
        subsidy,
        actions,
        renter_usages: m.renters().iter().map(|r| renter_demand(&r.benefit, price)).collect(),
        total_supply,
        total_demand: demand,
        effective_price: price * fill,
        iterations: rounds,
        converged: true,
        max_residual: 0.0,
        verify_improvement: None,
        nonunique_possible: m.has_nondifferentiable_owners(),
    };
    state.max_residual = max_residual(m, &state);
    Ok(state)
}
