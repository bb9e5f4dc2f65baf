//! Sharing subsidies: regime structure, the small-subsidy supply bound, net
//! revenue and the optimal subsidy level.

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::agents::{Subsidy, SubsidyModel};
use crate::benefit::Side;
use crate::equilibrium::{solve_equilibrium, EquilibriumState};
use crate::error::{Error, Result};
use crate::market::{require_valid, Market};
use crate::pricing::{find_p_c_below, find_p_potential_below, find_p_upper, solve_or_best};
use crate::search::{bisect_first_true, golden_max};

const FULL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsidyRegime {
    /// Some owner keeps idle capacity.
    Small,
    /// Every owner uses its whole unit but not all of it is shared.
    Medium,
    /// Every owner shares its whole unit.
    Large,
}

/// Structural label of a solved (possibly subsidized) state.
pub fn classify_subsidy_regime(state: &EquilibriumState) -> SubsidyRegime {
    if state.actions.iter().all(|a| a.s >= 1.0 - FULL) {
        SubsidyRegime::Large
    } else if state.actions.iter().all(|a| a.x + a.s >= 1.0 - FULL) {
        SubsidyRegime::Medium
    } else {
        SubsidyRegime::Small
    }
}

/// Per-owner threshold inequalities evaluated against a subsidized state and
/// the unsubsidized state at the same price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecord {
    /// Subsidy expressed as a fraction of the price.
    pub relative_epsilon: f64,
    pub small_thresholds: Vec<f64>,
    pub large_thresholds: Vec<f64>,
    /// Regime implied by the thresholds, when they agree across owners.
    pub implied: Option<SubsidyRegime>,
    pub structural: SubsidyRegime,
    pub agrees: bool,
}

pub fn subsidy_thresholds(m: &Market, base: &EquilibriumState, state: &EquilibriumState) -> ThresholdRecord {
    let p = state.price;
    let eps = relative_epsilon(state);
    let s0 = base.total_supply;
    let d = base.total_demand;
    let small: Vec<f64> = base
        .actions
        .iter()
        .map(|a| {
            if s0 > 0.0 {
                (d / s0) * (1.0 - a.s / s0)
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let large: Vec<f64> = m
        .owners()
        .iter()
        .zip(&state.actions)
        .map(|(o, a)| {
            let others = (state.total_supply - a.s).max(0.0);
            let q = if others + 1.0 <= state.total_demand {
                p
            } else {
                p * state.total_demand * others / ((others + 1.0) * (others + 1.0))
            };
            (o.benefit.slope(0.0, Side::Right) - q) / p
        })
        .collect();
    let implied = if small.iter().all(|&t| eps <= t) {
        Some(SubsidyRegime::Small)
    } else if large.iter().all(|&t| eps >= t) {
        Some(SubsidyRegime::Large)
    } else if small.iter().all(|&t| eps > t) && large.iter().all(|&t| eps < t) {
        Some(SubsidyRegime::Medium)
    } else {
        None
    };
    let structural = classify_subsidy_regime(state);
    ThresholdRecord {
        relative_epsilon: eps,
        small_thresholds: small,
        large_thresholds: large,
        agrees: implied.is_none_or(|r| r == structural),
        implied,
        structural,
    }
}

fn relative_epsilon(state: &EquilibriumState) -> f64 {
    if state.price > 0.0 {
        state.subsidy.bonus(state.price) / state.price
    } else {
        0.0
    }
}

/// Small-subsidy supply bound evaluated for every owner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplyBound {
    /// `None` where the owner's denominator is not positive.
    pub per_owner: Vec<Option<f64>>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl SupplyBound {
    pub fn applicable(&self) -> bool {
        self.min.is_some()
    }
}

/// `F(eps) = (D + sqrt(M^2 + 4 D s_i eps)) / (2 [(D/S)(1 - s_i/S) - eps])`
/// with `M = D (1 - 2 s_i / S)`, built from the unsubsidized state `base`.
/// `relative_epsilon` is the bonus divided by the price.
pub fn supply_bound_f(base: &EquilibriumState, relative_epsilon: f64) -> SupplyBound {
    let d = base.total_demand;
    let s0 = base.total_supply;
    let per_owner: Vec<Option<f64>> = base
        .actions
        .iter()
        .map(|a| {
            if s0 <= 0.0 {
                return None;
            }
            let r = a.s / s0;
            let denom = (d / s0) * (1.0 - r) - relative_epsilon;
            if denom <= 0.0 {
                return None;
            }
            let m = d * (1.0 - 2.0 * r);
            Some((d + (m * m + 4.0 * d * a.s * relative_epsilon).sqrt()) / (2.0 * denom))
        })
        .collect();
    let values = per_owner.iter().flatten().copied();
    let min = values.clone().reduce(f64::min);
    let max = values.reduce(f64::max);
    SupplyBound { per_owner, min, max }
}

/// Platform net revenue: transaction volume minus the subsidy outlay.
pub fn net_revenue(state: &EquilibriumState) -> f64 {
    state.revenue() - state.subsidy.platform_cost(state.price, state.total_supply)
}

/// Net revenue of the same state under both cost readings of `epsilon`.
pub fn net_revenue_both(state: &EquilibriumState) -> (f64, f64) {
    let eps = state.subsidy.epsilon;
    let vol = state.revenue();
    (
        vol - eps * state.total_supply,
        vol - state.price * eps * state.total_supply,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsidyOutcome {
    pub epsilon: f64,
    pub price: f64,
    pub model: SubsidyModel,
    pub regime: SubsidyRegime,
    pub supply: f64,
    pub demand: f64,
    pub net_revenue: f64,
    pub net_revenue_per_unit: f64,
    pub net_revenue_per_unit_price: f64,
    pub f_bound: Option<f64>,
    pub thresholds: ThresholdRecord,
    pub state: EquilibriumState,
}

/// Solve at `(price, epsilon)` and collect the subsidy diagnostics.
pub fn evaluate_subsidy(m: &Market, price: f64, subsidy: Subsidy) -> Result<SubsidyOutcome> {
    let base = solve_equilibrium(m, price, Subsidy::NONE)?;
    let state = solve_equilibrium(m, price, subsidy)?;
    Ok(outcome_from(m, &base, state))
}

fn outcome_from(m: &Market, base: &EquilibriumState, state: EquilibriumState) -> SubsidyOutcome {
    let thresholds = subsidy_thresholds(m, base, &state);
    let (per_unit, per_unit_price) = net_revenue_both(&state);
    SubsidyOutcome {
        epsilon: state.subsidy.epsilon,
        price: state.price,
        model: state.subsidy.model,
        regime: thresholds.structural,
        supply: state.total_supply,
        demand: state.total_demand,
        net_revenue: net_revenue(&state),
        net_revenue_per_unit: per_unit,
        net_revenue_per_unit_price: per_unit_price,
        f_bound: supply_bound_f(base, relative_epsilon(&state)).min,
        thresholds,
        state,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsidyOptimum {
    pub eps_star: f64,
    pub p_star: f64,
    pub v_eps: f64,
    pub v_0: f64,
    pub p_0: f64,
    pub improved: bool,
    pub model: SubsidyModel,
    pub p_potential: f64,
    pub outcome: SubsidyOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsidySearch {
    pub eps_max: f64,
    pub coarse_step: f64,
    pub tol: f64,
}

impl Default for SubsidySearch {
    fn default() -> Self {
        Self {
            eps_max: 2.0,
            coarse_step: 0.05,
            tol: 1e-4,
        }
    }
}

/// Best uniform subsidy when the platform always prices at
/// `max(p_potential, p_c(eps))`.
pub fn optimize_subsidy(m: &Market, model: SubsidyModel, search: SubsidySearch) -> Result<SubsidyOptimum> {
    require_valid(m)?;
    if !(search.eps_max > 0.0 && search.coarse_step > 0.0 && search.tol > 0.0) {
        return Err(Error::Domain("subsidy search bounds must be positive".into()));
    }
    let upper = find_p_upper(m)?.price;
    let p_potential = find_p_potential_below(m, upper);
    let clearing = |eps: f64| find_p_c_below(m, Subsidy::new(eps, model), upper);
    let p_c0 = clearing(0.0)?;
    let p_0 = p_potential.max(p_c0);
    let v_0 = solve_or_best(m, p_0, Subsidy::NONE)?.revenue();

    let value = |eps: f64| -> Result<(f64, f64)> {
        let p = p_potential.max(clearing(eps)?);
        let st = solve_or_best(m, p, Subsidy::new(eps, model))?;
        Ok((p, net_revenue(&st)))
    };

    let (eps_star, p_star, v_eps) = if p_potential >= p_c0 {
        (0.0, p_0, v_0)
    } else {
        let n = (search.eps_max / search.coarse_step).round().max(1.0) as usize;
        let grid: Vec<f64> = (0..=n).map(|k| search.eps_max * k as f64 / n as f64).collect();
        let coarse: Vec<(f64, f64, f64)> = grid
            .par_iter()
            .map(|&e| value(e).map(|(p, v)| (e, p, v)))
            .collect::<Result<_>>()?;
        let k = (0..coarse.len())
            .max_by(|&i, &j| coarse[i].2.total_cmp(&coarse[j].2))
            .unwrap_or(0);
        let lo = coarse[k.saturating_sub(1)].0;
        let hi = coarse[(k + 1).min(coarse.len() - 1)].0;

        // the clearing price crosses p_potential at most once; refine each side separately
        let mut pieces = vec![(lo, hi)];
        let below = |e: f64| clearing(e).map_or(true, |p| p <= p_potential);
        if !below(lo) && below(hi) {
            let cross = bisect_first_true(below, lo, hi, search.tol * 1e-2);
            debug!("clearing price meets p_potential at eps={cross}");
            pieces = vec![(lo, cross), (cross, hi)];
        }
        let mut best = coarse[k];
        for (a, b) in pieces {
            let (e, v) = golden_max(|e| value(e).map_or(f64::NEG_INFINITY, |r| r.1), a, b, search.tol, 200);
            if v > best.2 {
                best = (e, value(e)?.0, v);
            }
        }
        if best.2 > v_0 {
            best
        } else {
            (0.0, p_0, v_0)
        }
    };

    let base = solve_or_best(m, p_star, Subsidy::NONE)?;
    let state = solve_or_best(m, p_star, Subsidy::new(eps_star, model))?;
    let outcome = outcome_from(m, &base, state);
    Ok(SubsidyOptimum {
        eps_star,
        p_star,
        v_eps,
        v_0,
        p_0,
        improved: v_eps > v_0,
        model,
        p_potential,
        outcome,
    })
}
