//! Structural prices, revenue and welfare objectives, and welfare-gap bounds.

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::agents::{aggregate_demand, Subsidy};
use crate::equilibrium::{solve_equilibrium, EquilibriumState};
use crate::error::{Error, Result};
use crate::market::{require_valid, Market};
use crate::search::{bisect_first_true, bisect_last_true, golden_max, linspace};

const UPPER_SCAN_POINTS: usize = 1000;
const POTENTIAL_GRID: usize = 1000;
const WELFARE_SWEEP: usize = 50;
const GOLDEN_ITERS: usize = 200;
/// Relative slack on `S >= D` inside the clearing-price bisection.
const CLEARING_SLACK: f64 = 1e-6;

/// Platform transaction volume `p * min(D, S)` at the equilibrium for `p`.
pub fn revenue(m: &Market, p: f64) -> Result<f64> {
    Ok(solve_equilibrium(m, p, Subsidy::NONE)?.revenue())
}

/// Aggregate welfare at the equilibrium for `p`.
pub fn welfare(m: &Market, p: f64) -> Result<f64> {
    Ok(welfare_at_state(m, &solve_equilibrium(m, p, Subsidy::NONE)?))
}

/// Payments cancel between the two sides, leaving benefits minus usage
/// costs. Under a shortage every renter is served the same fraction `S / D`
/// of its request.
pub fn welfare_at_state(m: &Market, st: &EquilibriumState) -> f64 {
    let c = m.cost();
    let owners: f64 = m
        .owners()
        .iter()
        .zip(&st.actions)
        .map(|(o, a)| o.benefit.value_unchecked(a.x) - c * (a.x + a.s))
        .sum();
    let served = if st.total_demand > st.total_supply && st.total_demand > 0.0 {
        st.total_supply / st.total_demand
    } else {
        1.0
    };
    let renters: f64 = m
        .renters()
        .iter()
        .zip(&st.renter_usages)
        .map(|(r, &y)| r.benefit.value_unchecked(y * served))
        .sum();
    owners + renters
}

/// Highest price at which sharing can still pay, with a flag set when the
/// search was cut off at the configured derivative bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpperPrice {
    pub price: f64,
    pub capped: bool,
}

/// Largest root of `p * D(p) = c`; for zero cost, the price at which demand
/// vanishes.
pub fn find_p_upper(m: &Market) -> Result<UpperPrice> {
    let c = m.cost();
    let pays = |p: f64| {
        let d = aggregate_demand(m, p);
        if c > 0.0 {
            p * d >= c
        } else {
            d > 0.0
        }
    };
    let mut top = m.price_ceiling();
    if pays(top) {
        if c == 0.0 {
            info!("demand is positive at every price; p_upper capped at {top}");
            return Ok(UpperPrice {
                price: top,
                capped: true,
            });
        }
        let mut doublings = 0;
        while pays(top) {
            top *= 2.0;
            doublings += 1;
            if doublings > 60 {
                return Err(Error::NoRoot("p*D(p) stays above cost for every price".into()));
            }
        }
    }
    let tol = 1e-12 * top.max(1.0);
    let grid = linspace(0.0, top, UPPER_SCAN_POINTS);
    for w in grid.windows(2).rev() {
        if pays(w[0]) {
            let price = bisect_last_true(pays, w[0], w[1], tol);
            return Ok(UpperPrice { price, capped: false });
        }
    }
    Err(Error::NoRoot(format!("p*D(p) never reaches cost {c}")))
}

/// Lowest price at which equilibrium supply covers demand.
pub fn find_p_c(m: &Market, subsidy: Subsidy) -> Result<f64> {
    let upper = find_p_upper(m)?.price;
    find_p_c_below(m, subsidy, upper)
}

pub(crate) fn find_p_c_below(m: &Market, subsidy: Subsidy, upper: f64) -> Result<f64> {
    let tol = m.settings().tolerances.price;
    let covers = |p: f64| -> Result<bool> {
        let st = solve_or_best(m, p, subsidy)?;
        Ok(st.total_supply >= st.total_demand - CLEARING_SLACK * st.total_demand.max(1.0))
    };
    if covers(0.0)? {
        return Ok(0.0);
    }
    let mut hi = upper;
    if !covers(hi)? {
        // fall back to a scan for the first covering price
        let grid = linspace(0.0, upper, 200);
        match grid
            .iter()
            .find_map(|&p| covers(p).map(|ok| ok.then_some(p)).transpose())
        {
            Some(p) => hi = p?,
            None => return Err(Error::NoClearing { p_upper: upper }),
        }
    }
    let mut err = None;
    let p_c = bisect_first_true(
        |p| match covers(p) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                true
            }
        },
        0.0,
        hi,
        tol,
    );
    if let Some(e) = err {
        return Err(e);
    }
    let st = solve_or_best(m, p_c, subsidy)?;
    let gap = (st.total_supply - st.total_demand).abs();
    if gap > m.settings().tolerances.clearing(st.total_demand) {
        warn!(
            "at p_c={p_c} supply {} and demand {} differ by {gap}",
            st.total_supply, st.total_demand
        );
    }
    Ok(p_c)
}

/// Nonconvergent solves still carry their best iterate; searches use it and
/// only give up on other errors.
pub(crate) fn solve_or_best(m: &Market, p: f64, subsidy: Subsidy) -> Result<EquilibriumState> {
    match solve_equilibrium(m, p, subsidy) {
        Ok(st) => Ok(st),
        Err(Error::NonConvergence { best, iterations, .. }) => {
            warn!("p={p}: using best iterate after {iterations} iterations");
            Ok(*best)
        }
        Err(e) => Err(e),
    }
}

/// Maximizer of `p * D(p)` on `[0, p_upper]`.
pub fn find_p_potential(m: &Market) -> Result<f64> {
    let upper = find_p_upper(m)?.price;
    Ok(find_p_potential_below(m, upper))
}

pub(crate) fn find_p_potential_below(m: &Market, upper: f64) -> f64 {
    let volume = |p: f64| p * aggregate_demand(m, p);
    let grid = linspace(0.0, upper, POTENTIAL_GRID);
    let (k, _) = grid
        .iter()
        .enumerate()
        .map(|(k, &p)| (k, volume(p)))
        .fold(
            (0, f64::NEG_INFINITY),
            |acc, (k, v)| if v > acc.1 { (k, v) } else { acc },
        );
    let a = grid[k.saturating_sub(1)];
    let b = grid[(k + 1).min(grid.len() - 1)];
    golden_max(volume, a, b, 1e-12 * upper.max(1.0), GOLDEN_ITERS).0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevenueBranch {
    /// Demand-side optimum is reachable: `p_r = p_potential`.
    Potential,
    /// Demand-side optimum lies below clearing: `p_r = p_c`.
    Clearing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceAnalysis {
    pub p_c: f64,
    pub p_upper: f64,
    pub p_upper_capped: bool,
    pub p_potential: f64,
    pub p_r: f64,
    pub p_sw: f64,
    pub branch: RevenueBranch,
    pub revenue_r: f64,
    pub welfare_sw: f64,
    pub welfare_r: f64,
    /// Best price found by direct search over `[p_c, p_upper]`.
    pub p_r_searched: f64,
    pub revenue_searched: f64,
}

/// Every structural price plus the revenue and welfare optima.
pub fn analyze_prices(m: &Market) -> Result<PriceAnalysis> {
    require_valid(m)?;
    let upper = find_p_upper(m)?;
    let p_c = find_p_c_below(m, Subsidy::NONE, upper.price)?;
    let p_potential = find_p_potential_below(m, upper.price);
    let (p_r, branch) = if p_potential >= p_c {
        (p_potential, RevenueBranch::Potential)
    } else {
        (p_c, RevenueBranch::Clearing)
    };
    let revenue_r = solve_or_best(m, p_r, Subsidy::NONE)?.revenue();

    let tol = m.settings().tolerances.price;
    let (p_r_searched, revenue_searched) = golden_max(
        |p| solve_or_best(m, p, Subsidy::NONE).map_or(f64::NEG_INFINITY, |s| s.revenue()),
        p_c,
        upper.price,
        tol,
        GOLDEN_ITERS,
    );
    let slack = 1e-6 * revenue_r.abs().max(1.0);
    if revenue_searched > revenue_r + slack && (p_r_searched - p_r).abs() > tol {
        return Err(Error::CrossCheckMismatch {
            what: "revenue-optimal price".into(),
            analytic: p_r,
            searched: p_r_searched,
        });
    }

    let sw_state = solve_or_best(m, p_c, Subsidy::NONE)?;
    let welfare_sw = welfare_at_state(m, &sw_state);
    check_welfare_peak(m, upper.price, welfare_sw)?;
    let welfare_r = welfare_at_state(m, &solve_or_best(m, p_r, Subsidy::NONE)?);

    Ok(PriceAnalysis {
        p_c,
        p_upper: upper.price,
        p_upper_capped: upper.capped,
        p_potential,
        p_r,
        p_sw: p_c,
        branch,
        revenue_r,
        welfare_sw,
        welfare_r,
        p_r_searched,
        revenue_searched,
    })
}

/// Revenue-optimal price and its revenue.
pub fn optimize_revenue(m: &Market) -> Result<(f64, f64)> {
    let a = analyze_prices(m)?;
    Ok((a.p_r, a.revenue_r))
}

/// Welfare-optimal price (the lowest clearing price) and its welfare.
pub fn optimize_welfare(m: &Market) -> Result<(f64, f64)> {
    require_valid(m)?;
    let upper = find_p_upper(m)?.price;
    let p_c = find_p_c_below(m, Subsidy::NONE, upper)?;
    let w = welfare_at_state(m, &solve_or_best(m, p_c, Subsidy::NONE)?);
    check_welfare_peak(m, upper, w)?;
    Ok((p_c, w))
}

fn check_welfare_peak(m: &Market, upper: f64, w_c: f64) -> Result<()> {
    let w_at = |p: f64| solve_or_best(m, p, Subsidy::NONE).map_or(f64::NEG_INFINITY, |s| welfare_at_state(m, &s));
    let grid = linspace(0.0, upper, WELFARE_SWEEP);
    let values: Vec<f64> = grid.iter().map(|&p| w_at(p)).collect();
    let k = (0..values.len())
        .max_by(|&i, &j| values[i].total_cmp(&values[j]))
        .unwrap_or(0);
    let a = grid[k.saturating_sub(1)];
    let b = grid[(k + 1).min(grid.len() - 1)];
    let (p_best, w_best) = golden_max(w_at, a, b, 1e-6 * upper.max(1.0), GOLDEN_ITERS);
    let (p_best, w_best) = if values[k] > w_best {
        (grid[k], values[k])
    } else {
        (p_best, w_best)
    };
    if w_best > w_c + 1e-4 * w_c.abs().max(1e-12) {
        return Err(Error::CrossCheckMismatch {
            what: "welfare at the lowest clearing price vs welfare sweep".into(),
            analytic: w_c,
            searched: w_best,
        })
        .inspect_err(|_| warn!("welfare {w_best} at p={p_best} exceeds clearing welfare {w_c}"));
    }
    Ok(())
}

/// Welfare lost by pricing for revenue instead of welfare, with three upper
/// bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapBound {
    pub p_sw: f64,
    pub p_r: f64,
    pub actual_gap: f64,
    /// Bound using only the owners whose supply grows.
    pub bound_general: f64,
    /// Bound that holds when no owner's supply shrinks.
    pub bound_special: f64,
    pub special_valid: bool,
    /// Bound written as lost renter volume plus excess supply.
    pub bound_interpretable: f64,
}

pub fn welfare_gap_bounds(m: &Market, p_sw: f64, p_r: f64) -> Result<GapBound> {
    let sw = solve_or_best(m, p_sw, Subsidy::NONE)?;
    let r = solve_or_best(m, p_r, Subsidy::NONE)?;
    Ok(gap_bounds_from_states(m, &sw, &r))
}

pub fn gap_bounds_from_states(m: &Market, sw: &EquilibriumState, r: &EquilibriumState) -> GapBound {
    let tol = m.settings().tolerances.action.max(1e-9);
    let p = r.price;
    let fill = r.fill_rate();
    let grown: f64 = r
        .actions
        .iter()
        .zip(&sw.actions)
        .filter(|(a, b)| a.s >= b.s)
        .map(|(a, b)| a.s - b.s)
        .sum();
    let lost_volume = p * (sw.total_demand - r.total_demand);
    let special_valid = r.actions.iter().zip(&sw.actions).all(|(a, b)| a.s >= b.s - tol);
    let special = if r.total_supply > 0.0 {
        p * (sw.total_demand - r.total_demand * sw.total_supply / r.total_supply)
    } else {
        p * sw.total_demand
    };
    GapBound {
        p_sw: sw.price,
        p_r: p,
        actual_gap: welfare_at_state(m, sw) - welfare_at_state(m, r),
        bound_general: lost_volume + p * fill * grown,
        bound_special: special,
        special_valid,
        bound_interpretable: lost_volume + p * fill * (r.total_supply - sw.total_supply),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{linear_tight_market, quadratic_reference_market};

    #[test]
    fn quadratic_reference_structural_prices() {
        let m = quadratic_reference_market();
        let up = find_p_upper(&m).unwrap();
        assert!((up.price - 3.0).abs() < 1e-9 && !up.capped);
        assert!((find_p_potential(&m).unwrap() - 1.5).abs() < 1e-6);
        assert!((find_p_c(&m, Subsidy::NONE).unwrap() - 2.6).abs() < 1e-5);
    }

    #[test]
    fn quadratic_reference_revenue_and_welfare() {
        let m = quadratic_reference_market();
        assert!((revenue(&m, 2.6).unwrap() - 78.0).abs() < 1e-3);
        assert_eq!(revenue(&m, 3.0).unwrap(), 0.0);
        // 100 * (4*0.7 - 0.49) + 150 * (3*0.2 - 0.04)
        assert!((welfare(&m, 2.6).unwrap() - 315.0).abs() < 1e-3);
    }

    #[test]
    fn unprofitable_cost_has_no_root() {
        let m = quadratic_reference_market().with_cost(200.0).unwrap();
        assert!(matches!(find_p_upper(&m), Err(Error::NoRoot(_))));
    }

    #[test]
    fn linear_tight_clearing_and_welfare() {
        let m = linear_tight_market(0.01, 0.01);
        let p_c = find_p_c(&m, Subsidy::NONE).unwrap();
        assert!((p_c - 1.5).abs() < 1e-5, "{p_c}");
        assert!((welfare(&m, 1.75).unwrap() - 10.98).abs() < 1e-9);
    }

    #[test]
    fn identical_prices_have_zero_gap() {
        let m = quadratic_reference_market();
        let g = welfare_gap_bounds(&m, 2.6, 2.6).unwrap();
        assert!(g.actual_gap.abs() < 1e-12);
        assert!(g.bound_general.abs() < 1e-9 && g.bound_interpretable.abs() < 1e-9);
    }
}
