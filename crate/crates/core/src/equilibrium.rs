//! Fixed points of the owners' sharing game at a posted price.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{
    aggregate_demand, gradient_residual, owner_best_response_with, renter_demand, OwnerEnvironment, Subsidy,
};
use crate::benefit::{BenefitFunction, Side};
use crate::error::{Error, Result};
use crate::market::{Market, OwnerAction};
use crate::pricing::{welfare_at_state, PriceAnalysis};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumState {
    pub price: f64,
    pub subsidy: Subsidy,
    pub actions: Vec<OwnerAction>,
    pub renter_usages: Vec<f64>,
    pub total_supply: f64,
    pub total_demand: f64,
    /// `p * min(D / S, 1)`, the income per shared unit before any bonus.
    pub effective_price: f64,
    pub iterations: usize,
    pub converged: bool,
    pub max_residual: f64,
    /// Largest unilateral grid improvement, when verification ran.
    pub verify_improvement: Option<f64>,
    /// Some owner benefit has kinks; the reported equilibrium may not be unique.
    pub nonunique_possible: bool,
}

impl EquilibriumState {
    /// Fraction of shared capacity that is rented.
    pub fn fill_rate(&self) -> f64 {
        fill_rate(self.total_demand, self.total_supply)
    }

    /// Transaction volume `p * min(D, S)`.
    pub fn revenue(&self) -> f64 {
        self.price * self.total_demand.min(self.total_supply)
    }

    pub fn environment_for(&self, owner: usize, cost: f64) -> OwnerEnvironment {
        OwnerEnvironment::new(
            self.price,
            cost,
            self.subsidy.bonus(self.price),
            self.total_demand,
            (self.total_supply - self.actions[owner].s).max(0.0),
        )
    }
}

fn fill_rate(demand: f64, supply: f64) -> f64 {
    if demand <= 0.0 {
        0.0
    } else if supply <= demand {
        1.0
    } else {
        demand / supply
    }
}

/// Market-state label at a given price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// Supply falls short of demand.
    BelowClearing,
    Clearing,
    /// Supply exceeds demand and some owners still share.
    Oversupplied,
    /// Nobody shares.
    Shutdown,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Regime::BelowClearing => "below_clearing",
            Regime::Clearing => "clearing",
            Regime::Oversupplied => "oversupplied",
            Regime::Shutdown => "shutdown",
        };
        f.write_str(s)
    }
}

const SHUTDOWN_SUPPLY: f64 = 1e-6;

/// Label derived from the solved supply and demand alone.
pub fn regime_of_state(m: &Market, state: &EquilibriumState) -> Regime {
    let tol = m.settings().tolerances.clearing(state.total_demand);
    let (s, d) = (state.total_supply, state.total_demand);
    if s <= SHUTDOWN_SUPPLY {
        // unserved demand that would pay for itself counts as a shortage
        if d > tol && state.price * d >= m.cost() {
            Regime::BelowClearing
        } else {
            Regime::Shutdown
        }
    } else if (s - d).abs() <= tol {
        Regime::Clearing
    } else if s < d {
        Regime::BelowClearing
    } else {
        Regime::Oversupplied
    }
}

/// Label a price by its position relative to `p_c` and `p_upper`, then check
/// it against the solved state.
pub fn classify_regime(m: &Market, state: &EquilibriumState, analysis: &PriceAnalysis) -> Result<Regime> {
    let tol = m.settings().tolerances.price;
    let p = state.price;
    let by_price = if p < analysis.p_c - tol {
        Regime::BelowClearing
    } else if p <= analysis.p_c + tol {
        Regime::Clearing
    } else if p <= analysis.p_upper + tol {
        Regime::Oversupplied
    } else {
        Regime::Shutdown
    };
    let by_state = regime_of_state(m, state);
    let ok = match by_price {
        Regime::BelowClearing => matches!(by_state, Regime::BelowClearing | Regime::Shutdown),
        Regime::Clearing => matches!(by_state, Regime::Clearing),
        Regime::Oversupplied => !matches!(by_state, Regime::BelowClearing),
        Regime::Shutdown => state.total_supply <= SHUTDOWN_SUPPLY,
    };
    if ok {
        Ok(by_price)
    } else {
        Err(Error::InconsistentRegime {
            price: p,
            by_price: by_price.to_string(),
            by_state: by_state.to_string(),
        })
    }
}

/// Solve the owners' game at `price` from zero initial sharing.
pub fn solve_equilibrium(m: &Market, price: f64, subsidy: Subsidy) -> Result<EquilibriumState> {
    if !(price.is_finite() && price >= 0.0) {
        return Err(Error::Domain(format!("price must be nonnegative, got {price}")));
    }
    if !(subsidy.epsilon.is_finite() && subsidy.epsilon >= 0.0) {
        return Err(Error::Domain(format!(
            "subsidy must be nonnegative, got {}",
            subsidy.epsilon
        )));
    }
    Solver::new(m, price, subsidy).run()
}

struct Solver<'a> {
    m: &'a Market,
    price: f64,
    subsidy: Subsidy,
    demand: f64,
    bonus: f64,
    /// Owners with equal benefit functions share a class id.
    class_of: Vec<usize>,
}

impl<'a> Solver<'a> {
    fn new(m: &'a Market, price: f64, subsidy: Subsidy) -> Self {
        let mut reps: Vec<&BenefitFunction> = Vec::new();
        let class_of = m
            .owners()
            .iter()
            .map(|o| match reps.iter().position(|r| **r == o.benefit) {
                Some(k) => k,
                None => {
                    reps.push(&o.benefit);
                    reps.len() - 1
                }
            })
            .collect();
        Self {
            m,
            price,
            subsidy,
            demand: aggregate_demand(m, price),
            bonus: subsidy.bonus(price),
            class_of,
        }
    }

    fn env(&self, others: f64) -> OwnerEnvironment {
        OwnerEnvironment::new(self.price, self.m.cost(), self.bonus, self.demand, others.max(0.0))
    }

    fn respond(&self, i: usize, others: f64) -> OwnerAction {
        owner_best_response_with(
            &self.m.owners()[i].benefit,
            &self.env(others),
            self.m.settings().solver.response_steps,
        )
    }

    fn responses(&self, actions: &[OwnerAction], total: f64) -> Vec<OwnerAction> {
        let mut memo: HashMap<(usize, u64), OwnerAction> = HashMap::new();
        actions
            .iter()
            .enumerate()
            .map(|(i, a)| {
                *memo
                    .entry((self.class_of[i], a.s.to_bits()))
                    .or_insert_with(|| self.respond(i, total - a.s))
            })
            .collect()
    }

    fn run(&self) -> Result<EquilibriumState> {
        let settings = *self.m.settings();
        let tol = settings.tolerances.action;
        let cap = settings.solver.max_iterations;
        if !self.m.has_nondifferentiable_owners() {
            if let Some(start) = self.aggregate_start() {
                let br = self.responses(&start, supply(&start));
                if max_change(&start, &br) < tol {
                    return self.accept(br, 0);
                }
                debug!("p={}: aggregate start rejected, iterating from zero", self.price);
            }
        }
        let mut actions: Vec<OwnerAction> = self
            .m
            .owners()
            .iter()
            .map(|o| OwnerAction::new(o.benefit.optimal_usage_unit(self.m.cost()), 0.0))
            .collect();

        let mut lambda = settings.solver.damping;
        let mut best = (f64::INFINITY, actions.clone());
        let mut since_best = 0usize;
        let mut seen: HashMap<u64, usize> = HashMap::new();
        let mut iterations = 0usize;
        let mut converged = false;
        let mut last_change = f64::INFINITY;

        while iterations < cap {
            let total = supply(&actions);
            let br = self.responses(&actions, total);
            let change = max_change(&actions, &br);
            last_change = change;
            if change < tol {
                actions = br;
                converged = true;
                break;
            }
            if change < best.0 {
                best = (change, actions.clone());
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= settings.solver.stall_window && lambda > settings.solver.damping_floor {
                    lambda = (lambda * 0.5).max(settings.solver.damping_floor);
                    since_best = 0;
                    debug!("p={}: damping reduced to {lambda}", self.price);
                }
            }
            let cycled = seen.insert(state_hash(&actions), iterations).is_some();
            if cycled || iterations >= cap / 2 {
                debug!(
                    "p={}: switching to sequential updates after {iterations} iterations (cycle: {cycled})",
                    self.price
                );
                break;
            }
            for (a, r) in actions.iter_mut().zip(&br) {
                a.x = (1.0 - lambda) * a.x + lambda * r.x;
                a.s = (1.0 - lambda) * a.s + lambda * r.s;
            }
            iterations += 1;
        }

        if !converged {
            let mut total = supply(&actions);
            while iterations < cap {
                let mut change = 0.0_f64;
                for (i, a) in actions.iter_mut().enumerate() {
                    let r = self.respond(i, total - a.s);
                    change = change.max((r.x - a.x).abs()).max((r.s - a.s).abs());
                    total += r.s - a.s;
                    *a = r;
                }
                iterations += 1;
                last_change = change;
                if change < best.0 {
                    best = (change, actions.clone());
                }
                if change < tol {
                    converged = true;
                    break;
                }
                total = supply(&actions);
            }
        }

        if !converged {
            warn!("p={}: no equilibrium after {iterations} iterations", self.price);
            let state = self.finish(best.1, iterations, false, false);
            return Err(Error::NonConvergence {
                iterations,
                last_change,
                best: Box::new(state),
            });
        }
        self.accept(actions, iterations)
    }

    /// Final verification of a converged profile.
    fn accept(&self, actions: Vec<OwnerAction>, iterations: usize) -> Result<EquilibriumState> {
        let settings = self.m.settings();
        let mut state = self.finish(actions, iterations, true, settings.solver.verify);
        if let Some(v) = state.verify_improvement {
            if v > settings.tolerances.verify {
                warn!("p={}: grid verification found improvement {v}", self.price);
                state.converged = false;
                return Err(Error::NonConvergence {
                    iterations,
                    last_change: 0.0,
                    best: Box::new(state),
                });
            }
        }
        Ok(state)
    }

    /// Every owner reacts to the others only through total supply, so an
    /// equilibrium is a total `S` at which the owners' self-consistent shares
    /// add up to `S`. The largest such total is located by bisection.
    fn aggregate_start(&self) -> Option<Vec<OwnerAction>> {
        let n = self.m.n_owners();
        let excess = |total: f64| self.consistent_shares(total).iter().map(|a| a.s).sum::<f64>() - total;
        let (mut lo, mut hi) = (0.0_f64, n as f64);
        if excess(hi) >= 0.0 {
            lo = hi;
        }
        while hi - lo > 1e-15 * hi.max(1.0) {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if excess(mid) >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let shares = self.consistent_shares(lo);
        shares
            .iter()
            .all(|a| a.x.is_finite() && a.s.is_finite())
            .then_some(shares)
    }

    /// For each owner, the share it would choose if the market total
    /// (including its own share) were `total`.
    fn consistent_shares(&self, total: f64) -> Vec<OwnerAction> {
        let mut memo: HashMap<usize, OwnerAction> = HashMap::new();
        (0..self.m.n_owners())
            .map(|i| {
                *memo
                    .entry(self.class_of[i])
                    .or_insert_with(|| self.consistent_share(i, total))
            })
            .collect()
    }

    fn consistent_share(&self, i: usize, total: f64) -> OwnerAction {
        let f = &self.m.owners()[i].benefit;
        let c = self.m.cost();
        let x_hat = f.optimal_usage_unit(c);
        let (p, d) = (self.price, self.demand);
        let slope = |s: f64| {
            let self_use = if 1.0 - s > x_hat {
                0.0
            } else {
                -(f.slope(1.0 - s, Side::Left) - c)
            };
            let income = if d <= 0.0 {
                0.0
            } else if total < d {
                p
            } else {
                p * d * (total - s) / (total * total)
            };
            self_use + income + self.bonus - c
        };
        let top = total.min(1.0);
        let s = if top <= 0.0 || slope(0.0) <= 0.0 {
            0.0
        } else {
            let (mut lo, mut hi) = (0.0_f64, top);
            for _ in 0..self.m.settings().solver.response_steps {
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

    fn finish(&self, actions: Vec<OwnerAction>, iterations: usize, converged: bool, verify: bool) -> EquilibriumState {
        let total_supply = supply(&actions);
        let renter_usages: Vec<f64> = self
            .m
            .renters()
            .iter()
            .map(|r| renter_demand(&r.benefit, self.price))
            .collect();
        let mut state = EquilibriumState {
            price: self.price,
            subsidy: self.subsidy,
            actions,
            renter_usages,
            total_supply,
            total_demand: self.demand,
            effective_price: self.price * fill_rate(self.demand, total_supply),
            iterations,
            converged,
            max_residual: 0.0,
            verify_improvement: None,
            nonunique_possible: self.m.has_nondifferentiable_owners(),
        };
        state.max_residual = max_residual(self.m, &state);
        if verify {
            let n = self.m.settings().tolerances.verify_grid;
            state.verify_improvement = Some(verify_equilibrium(self.m, &state, n));
        }
        state
    }
}

fn supply(actions: &[OwnerAction]) -> f64 {
    actions.iter().map(|a| a.s).sum()
}

fn max_change(a: &[OwnerAction], b: &[OwnerAction]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u.x - v.x).abs().max((u.s - v.s).abs()))
        .fold(0.0, f64::max)
}

fn state_hash(actions: &[OwnerAction]) -> u64 {
    let mut h = DefaultHasher::new();
    for a in actions {
        ((a.x * 1e12).round() as i64).hash(&mut h);
        ((a.s * 1e12).round() as i64).hash(&mut h);
    }
    h.finish()
}

/// Largest first-order residual across owners.
pub fn max_residual(m: &Market, state: &EquilibriumState) -> f64 {
    state
        .actions
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let env = state.environment_for(i, m.cost());
            gradient_residual(&m.owners()[i].benefit, &env, a.x, a.s).unwrap_or(f64::INFINITY)
        })
        .fold(0.0, f64::max)
}

/// Largest utility gain any single agent can get by moving to a point of a
/// uniform grid with `grid_n` points per axis.
///
/// For owners the best self use on each sharing row is a running maximum of
/// `f(x) - c x` over the row's feasible prefix, so no shape assumption on `f`
/// is needed.
pub fn verify_equilibrium(m: &Market, state: &EquilibriumState, grid_n: usize) -> f64 {
    let n = grid_n.max(2);
    let h = 1.0 / (n - 1) as f64;
    let c = m.cost();
    let owners = state.actions.iter().enumerate().map(|(i, a)| {
        let f = &m.owners()[i].benefit;
        let env = state.environment_for(i, c);
        let current = f.value_unchecked(a.x) - c * a.x + share_value(&env, a.s);
        let self_vals: Vec<f64> = (0..n)
            .map(|j| f.value_unchecked(j as f64 * h) - c * j as f64 * h)
            .collect();
        let mut prefix_best = Vec::with_capacity(n);
        let mut acc = f64::NEG_INFINITY;
        for v in &self_vals {
            acc = acc.max(*v);
            prefix_best.push(acc);
        }
        let best = (0..n)
            .map(|k| prefix_best[n - 1 - k] + share_value(&env, k as f64 * h))
            .fold(f64::NEG_INFINITY, f64::max);
        best - current
    });
    let renters = m.renters().iter().zip(&state.renter_usages).map(|(r, &y)| {
        let g = &r.benefit;
        let p = state.price;
        let current = g.value_unchecked(y) - p * y;
        let top = y.max(1.0).min(g.usage_cap());
        let best = (0..n)
            .map(|j| {
                let u = top * j as f64 / (n - 1) as f64;
                g.value_unchecked(u) - p * u
            })
            .fold(f64::NEG_INFINITY, f64::max);
        best - current
    });
    owners.chain(renters).fold(0.0, f64::max)
}

/// Owner part of [`verify_equilibrium`] computed by scanning every grid pair;
/// used to test the fast path.
pub fn verify_equilibrium_exhaustive(m: &Market, state: &EquilibriumState, grid_n: usize) -> f64 {
    let n = grid_n.max(2);
    let h = 1.0 / (n - 1) as f64;
    let c = m.cost();
    let mut worst = 0.0_f64;
    for (i, a) in state.actions.iter().enumerate() {
        let f = &m.owners()[i].benefit;
        let env = state.environment_for(i, c);
        let u = |x: f64, s: f64| f.value_unchecked(x) - c * x + share_value(&env, s);
        let current = u(a.x, a.s);
        for j in 0..n {
            for k in 0..n - j {
                worst = worst.max(u(j as f64 * h, k as f64 * h) - current);
            }
        }
    }
    worst
}

fn share_value(env: &OwnerEnvironment, s: f64) -> f64 {
    env.rental_income(s) + (env.bonus - env.cost) * s
}

/// One row of a price sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub price: f64,
    pub supply: f64,
    pub demand: f64,
    pub revenue: f64,
    pub welfare: f64,
    pub regime: Option<Regime>,
    pub converged: bool,
    pub iterations: usize,
    pub max_residual: f64,
    pub error: Option<String>,
}

impl SweepRow {
    fn from_state(m: &Market, state: &EquilibriumState) -> Self {
        Self {
            price: state.price,
            supply: state.total_supply,
            demand: state.total_demand,
            revenue: state.revenue(),
            welfare: welfare_at_state(m, state),
            regime: Some(regime_of_state(m, state)),
            converged: state.converged,
            iterations: state.iterations,
            max_residual: state.max_residual,
            error: None,
        }
    }

    fn from_error(m: &Market, price: f64, e: &Error) -> Self {
        let mut row = match e {
            Error::NonConvergence { best, .. } => Self::from_state(m, best),
            _ => Self {
                price,
                supply: f64::NAN,
                demand: f64::NAN,
                revenue: f64::NAN,
                welfare: f64::NAN,
                regime: None,
                converged: false,
                iterations: 0,
                max_residual: f64::NAN,
                error: None,
            },
        };
        row.converged = false;
        row.error = Some(e.to_string());
        row
    }
}

/// Solve every price of `grid` (in parallel) and return rows in grid order.
pub fn sweep(m: &Market, grid: &[f64], subsidy: Subsidy) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Domain("price grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain("price grid must be ascending".into()));
    }
    Ok(grid
        .par_iter()
        .map(|&p| match solve_equilibrium(m, p, subsidy) {
            Ok(state) => SweepRow::from_state(m, &state),
            Err(e) => SweepRow::from_error(m, p, &e),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::quadratic_reference_market;

    #[test]
    fn quadratic_reference_clearing_equilibrium() {
        let m = quadratic_reference_market();
        let st = solve_equilibrium(&m, 2.6, Subsidy::NONE).unwrap();
        assert!(st.converged);
        for a in &st.actions {
            assert!((a.x - 0.7).abs() < 1e-6 && (a.s - 0.3).abs() < 1e-6, "{a:?}");
        }
        assert!((st.total_supply - 30.0).abs() < 1e-4);
        assert!((st.total_demand - 30.0).abs() < 1e-9);
        assert!(
            st.max_residual < 1e-6,
            "{} {} {:?}",
            st.max_residual,
            st.total_supply,
            st.actions[0]
        );
    }

    #[test]
    fn quadratic_reference_shutdown_above_three() {
        let m = quadratic_reference_market();
        let st = solve_equilibrium(&m, 3.2, Subsidy::NONE).unwrap();
        assert_eq!(st.total_supply, 0.0);
        assert_eq!(regime_of_state(&m, &st), Regime::Shutdown);
        assert!(verify_equilibrium(&m, &st, 201) <= 1e-9);
    }

    #[test]
    fn quadratic_reference_below_clearing_at_two() {
        let m = quadratic_reference_market();
        let st = solve_equilibrium(&m, 2.0, Subsidy::NONE).unwrap();
        assert!(st.total_supply < 1e-9);
        assert!((st.total_demand - 75.0).abs() < 1e-9);
        assert_eq!(regime_of_state(&m, &st), Regime::BelowClearing);
    }

    #[test]
    fn forced_deviation_is_detected() {
        let m = quadratic_reference_market();
        let mut st = solve_equilibrium(&m, 2.6, Subsidy::NONE).unwrap();
        st.total_supply -= st.actions[0].s;
        st.actions[0] = OwnerAction::new(0.7, 0.0);
        assert!(verify_equilibrium(&m, &st, 201) > 1e-3);
    }

    #[test]
    fn sweep_keeps_grid_order() {
        let m = quadratic_reference_market();
        let grid: Vec<f64> = (0..=20).map(|k| 2.0 + 0.1 * k as f64).collect();
        let rows = sweep(&m, &grid, Subsidy::NONE).unwrap();
        assert_eq!(rows.len(), grid.len());
        for (r, p) in rows.iter().zip(&grid) {
            assert_eq!(r.price, *p);
            assert!(r.converged, "{r:?}");
        }
        assert!(sweep(&m, &[2.0, 1.0], Subsidy::NONE).is_err());
    }
}
