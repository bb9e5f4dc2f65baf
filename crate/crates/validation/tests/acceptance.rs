//! Acceptance criteria, one test per criterion.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use sharemkt_core::agents::aggregate_demand;
use sharemkt_core::calibration::{
    build_renters_from_fit, fit_exponential_demand, DemandFit, FitOptions, TransactionRecord,
};
use sharemkt_core::equilibrium::{solve_equilibrium, verify_equilibrium, EquilibriumState};
use sharemkt_core::fixtures::{
    didi_market, linear_tight_market, quadratic_reference_market, random_small_market, SMALL_MARKET_BOUND,
};
use sharemkt_core::oracle::{brute_force_equilibrium, linear_market_solve};
use sharemkt_core::pricing::{
    analyze_prices, find_p_c, find_p_potential, find_p_upper, optimize_revenue, welfare_gap_bounds, GapBound,
    PriceAnalysis, RevenueBranch,
};
use sharemkt_core::scenario::random_quadratic_market;
use sharemkt_core::subsidy::{classify_subsidy_regime, optimize_subsidy, supply_bound_f, SubsidyRegime, SubsidySearch};
use sharemkt_core::{Market, Subsidy, SubsidyModel};
use sharemkt_validation::{serial, Check};

const PRICE_TOL: f64 = 1e-6;

#[test]
fn criterion_1_quadratic_reference_regression() {
    let _g = serial();
    let mut c = Check::new();
    let start = Instant::now();
    let m = quadratic_reference_market();
    let p_c = find_p_c(&m, Subsidy::NONE).unwrap();
    c.near("p_c", p_c, 2.6, 1e-3);
    let st = solve_equilibrium(&m, p_c, Subsidy::NONE).unwrap();
    c.near("S", st.total_supply, 30.0, 0.05);
    c.near("D", st.total_demand, 30.0, 0.05);
    c.near("R", st.revenue(), 78.0, 0.1);
    c.near("p_potential", find_p_potential(&m).unwrap(), 1.5, 1e-3);
    let (p_r, _) = optimize_revenue(&m).unwrap();
    c.near("p_r", p_r, 2.6, 1e-3);
    let a = analyze_prices(&m).unwrap();
    c.expect(
        a.branch == RevenueBranch::Clearing,
        format!("revenue branch {:?}", a.branch),
    );
    c.within("runtime", start.elapsed(), Duration::from_secs(5));
    c.finish(1, "quadratic reference equilibrium");
}

#[test]
fn criterion_2_quadratic_reference_subsidy() {
    let _g = serial();
    let mut c = Check::new();
    let start = Instant::now();
    let m = quadratic_reference_market();
    let opt = optimize_subsidy(&m, SubsidyModel::PerUnit, SubsidySearch::default()).unwrap();
    c.near("eps*", opt.eps_star, 3.0 / 7.0, 0.005);
    c.near("p*", opt.p_star, 17.0 / 7.0, 0.005);
    c.near("V_eps", opt.v_eps, 600.0 / 7.0, 0.2);
    c.expect(opt.v_eps > opt.v_0, format!("V_eps {} <= V_0 {}", opt.v_eps, opt.v_0));
    c.near("V_0", opt.v_0, 78.0, 0.1);
    c.near("S_eps", opt.outcome.supply, 300.0 / 7.0, 0.2);
    let volume = opt.outcome.state.revenue();
    c.near("volume", volume, 5100.0 / 49.0, 0.5);
    for (name, got, printed) in [
        ("V", opt.v_eps, 85.0),
        ("S", opt.outcome.supply, 42.75),
        ("pD", volume, 103.9),
    ] {
        c.expect(
            (got / printed - 1.0).abs() <= 0.01,
            format!("{name}={got} differs from printed {printed} by more than 1%"),
        );
    }
    c.within("runtime", start.elapsed(), Duration::from_secs(30));
    c.finish(2, "quadratic reference subsidy optimum");
}

#[test]
fn criterion_3_linear_tightness() {
    let _g = serial();
    let mut c = Check::new();
    let sol = linear_market_solve(&[5.0, 2.0, 1.0], &[4.01, 1.5, 0.5], 0.01).unwrap();
    c.near("oracle gap", sol.gap, 2.0, 1e-12);
    c.near("oracle bound", sol.bound_special, 2.0025, 1e-12);
    c.near("oracle p_r", sol.p_r, 4.005, 1e-12);

    let m = linear_tight_market(0.01, 0.01);
    let a = analyze_prices(&m).unwrap();
    let g = welfare_gap_bounds(&m, a.p_sw, a.p_r).unwrap();
    c.note(format!("pipeline p_sw={:.6} p_r={:.6}", a.p_sw, a.p_r));
    c.expect(
        (g.actual_gap - sol.gap).abs() <= 1e-6,
        format!("pipeline gap {} vs oracle {}", g.actual_gap, sol.gap),
    );
    c.expect(
        (g.bound_special - sol.bound_special).abs() <= 1e-6,
        format!("pipeline bound {} vs oracle {}", g.bound_special, sol.bound_special),
    );
    c.finish(3, "linear market tightness");
}

#[test]
fn criterion_4_didi_round_trip() {
    let _g = serial();
    let mut c = Check::new();
    let (alpha, beta, n_r) = (19190.0, 0.0832, 1919);
    let fit = DemandFit {
        alpha,
        beta,
        r2: 1.0,
        p_offset: 0.0,
        n_rows_used: 0,
        n_rows_dropped: 0,
    };
    let renters = build_renters_from_fit(&fit, n_r).unwrap();
    let owners = didi_market(100, 100.0).owners().to_vec();
    let m = Market::new(owners, renters, 0.0, 100.0).unwrap();
    let worst = (0..=60)
        .map(|k| {
            let p = 10.0 + 0.5 * k as f64;
            (aggregate_demand(&m, p) / (alpha * (-beta * p).exp()) - 1.0).abs()
        })
        .fold(0.0, f64::max);
    c.note(format!("demand rel err {worst:.2e}"));
    c.expect(worst <= 1e-6, format!("demand relative error {worst}"));
    c.near("p_potential", find_p_potential(&m).unwrap(), 12.02, 0.05);

    let records: Vec<TransactionRecord> = (0..=40)
        .map(|k| {
            let price = 5.0 + k as f64;
            TransactionRecord {
                price,
                count: alpha * (-beta * price).exp(),
            }
        })
        .collect();
    let got = fit_exponential_demand(&records, FitOptions::default()).unwrap();
    let (ea, eb) = ((got.alpha / alpha - 1.0).abs(), (got.beta / beta - 1.0).abs());
    c.note(format!("fit rel err alpha {ea:.1e} beta {eb:.1e}"));
    c.expect(ea <= 1e-9 && eb <= 1e-9, format!("fit ({}, {})", got.alpha, got.beta));
    c.expect((got.r2 - 1.0).abs() <= 1e-12, format!("r2 {}", got.r2));
    c.finish(4, "Didi round trip");
}

#[test]
fn criterion_5_didi_congestion_alignment() {
    let _g = serial();
    let mut c = Check::new();
    let start = Instant::now();
    for n in (100..=1100).step_by(200) {
        let a = analyze_prices(&didi_market(n, 100.0)).unwrap();
        c.note(format!("N_O={n}: p_r={:.4}", a.p_r));
        c.expect(
            (a.p_r - a.p_sw).abs() <= PRICE_TOL,
            format!("N_O={n}: p_r={} p_sw={}", a.p_r, a.p_sw),
        );
    }
    c.within("runtime", start.elapsed(), Duration::from_secs(300));
    c.finish(5, "Didi p_r = p_sw");
}

const RANDOM_MARKETS: u64 = 50;

struct Analyzed {
    market: Market,
    analysis: PriceAnalysis,
}

/// Footnote-range quadratic markets shared by criteria 6 and 7.
fn analyzed_markets() -> &'static [Analyzed] {
    static CACHE: OnceLock<Vec<Analyzed>> = OnceLock::new();
    CACHE.get_or_init(|| {
        (0..RANDOM_MARKETS)
            .map(|seed| {
                let market = random_quadratic_market(100, 300, 0.1, seed).unwrap();
                let analysis = analyze_prices(&market).unwrap();
                Analyzed { market, analysis }
            })
            .collect()
    })
}

#[test]
fn criterion_6_regime_structure() {
    let _g = serial();
    let mut c = Check::new();
    let mut worst_verify = 0.0_f64;
    let mut solved = 0;
    let (mut above, mut worst_above) = (0, 0.0_f64);
    for (seed, item) in analyzed_markets().iter().enumerate() {
        let m = &item.market;
        let a = &item.analysis;
        let tol = m.settings().tolerances;
        let mut grid: Vec<f64> = (0..=40).map(|k| m.price_ceiling() * k as f64 / 40.0).collect();
        grid.extend([
            a.p_c * (1.0 - 1e-3),
            a.p_c * (1.0 + 1e-3),
            a.p_upper * (1.0 - 1e-3),
            a.p_upper * (1.0 + 1e-3),
        ]);
        grid.sort_by(f64::total_cmp);
        let mut prev: Option<f64> = None;
        for &p in &grid {
            let st = solve_equilibrium(m, p, Subsidy::NONE).unwrap();
            solved += 1;
            let v = verify_equilibrium(m, &st, 201);
            worst_verify = worst_verify.max(v);
            c.expect(v <= tol.verify, format!("seed {seed} p={p}: verify gain {v}"));
            let (s, d) = (st.total_supply, st.total_demand);
            let slack = tol.clearing(d);
            if p < a.p_c - PRICE_TOL {
                c.expect(s < d + slack, format!("seed {seed} p={p}: S={s} >= D={d} below p_c"));
                if let Some(prev) = prev {
                    c.expect(
                        s >= prev - 1e-9 * s.max(1.0),
                        format!("seed {seed} p={p}: S fell from {prev} to {s}"),
                    );
                }
                prev = Some(s);
            } else if p > a.p_c + PRICE_TOL && p <= a.p_upper {
                c.expect(
                    s >= d - slack,
                    format!("seed {seed} p={p}: S={s} < D={d} in oversupply"),
                );
            } else if p > a.p_upper + PRICE_TOL {
                above += 1;
                worst_above = worst_above.max(s);
                c.expect(s <= 1e-6, format!("seed {seed} p={p}: S={s} above p_upper"));
            }
        }
    }
    c.note(format!(
        "{RANDOM_MARKETS} markets, {solved} equilibria, worst verify {worst_verify:.1e}"
    ));
    c.note(format!(
        "{above} prices above p_upper, largest S there {worst_above:.3}"
    ));
    c.finish(6, "regime structure over price");
}

#[test]
fn criterion_7_revenue_vs_welfare() {
    let _g = serial();
    let mut c = Check::new();
    let mut worst_ratio = 0.0_f64;
    for (seed, item) in analyzed_markets().iter().enumerate() {
        let m = &item.market;
        let a = &item.analysis;
        c.expect(
            a.p_r >= a.p_sw - PRICE_TOL,
            format!("seed {seed}: p_r={} < p_sw={}", a.p_r, a.p_sw),
        );
        let sw = solve_equilibrium(m, a.p_sw, Subsidy::NONE).unwrap();
        let r = solve_equilibrium(m, a.p_r, Subsidy::NONE).unwrap();
        let qos = |st: &EquilibriumState| st.total_demand / st.total_supply;
        c.expect(
            qos(&sw) >= qos(&r) - 1e-6,
            format!("seed {seed}: QoS D/S at p_sw {} < at p_r {}", qos(&sw), qos(&r)),
        );
        let GapBound {
            actual_gap,
            bound_general,
            bound_interpretable,
            ..
        } = welfare_gap_bounds(m, a.p_sw, a.p_r).unwrap();
        let tol = 1e-6 * bound_general.abs().max(1.0);
        c.expect(actual_gap >= -tol, format!("seed {seed}: gap {actual_gap} < 0"));
        c.expect(
            actual_gap <= bound_general + tol,
            format!("seed {seed}: gap {actual_gap} > general bound {bound_general}"),
        );
        c.expect(
            bound_general <= bound_interpretable + tol,
            format!("seed {seed}: general bound {bound_general} > interpretable bound {bound_interpretable}"),
        );
        if bound_general > 0.0 {
            worst_ratio = worst_ratio.max(actual_gap / bound_general);
        }
    }
    c.note(format!("max gap/bound {worst_ratio:.3}"));
    c.finish(7, "revenue vs welfare orderings and gap bounds");
}

#[test]
fn criterion_8_subsidy_structure() {
    let _g = serial();
    let mut c = Check::new();
    let mut counts = [0usize; 3];
    let mut min_f_checked = 0;
    for seed in 0..20u64 {
        let m = random_quadratic_market(100, 300, 0.1, 500 + seed).unwrap();
        let p_c = find_p_c(&m, Subsidy::NONE).unwrap();
        let p_u = find_p_upper(&m).unwrap().price;
        let p = p_c + 0.9 * (p_u - p_c);
        let base = solve_equilibrium(&m, p, Subsidy::NONE).unwrap();
        let s0 = base.total_supply;
        if base.actions.iter().all(|a| a.s <= 0.5 * s0) {
            let f0 = supply_bound_f(&base, 0.0);
            for f in f0.per_owner.iter().flatten() {
                c.expect(
                    (f - s0).abs() <= 1e-9 * s0.max(1.0),
                    format!("seed {seed}: F(0)={f} vs S0={s0}"),
                );
            }
        }
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=20 {
            let eps = 0.05 * k as f64;
            let st = solve_equilibrium(&m, p, Subsidy::per_unit(eps)).unwrap();
            let s = st.total_supply;
            c.expect(
                s >= prev - 1e-9 * s.max(1.0),
                format!("seed {seed} eps={eps}: S fell from {prev} to {s}"),
            );
            prev = s;
            let regime = classify_subsidy_regime(&st);
            counts[regime as usize] += 1;
            match regime {
                SubsidyRegime::Small => {
                    let bound = supply_bound_f(&base, st.subsidy.bonus(p) / p);
                    match bound.min {
                        Some(f) => {
                            min_f_checked += 1;
                            c.expect(
                                s <= f * (1.0 + 1e-9),
                                format!("seed {seed} eps={eps}: Small regime S={s} > min-F={f}"),
                            );
                        }
                        None => c.note(format!("seed {seed} eps={eps}: F not applicable")),
                    }
                }
                SubsidyRegime::Large => c.expect(
                    (s - m.n_owners() as f64).abs() <= 1e-6,
                    format!("seed {seed} eps={eps}: Large regime S={s}"),
                ),
                SubsidyRegime::Medium => {}
            }
        }
    }
    c.note(format!(
        "regimes small/medium/large = {}/{}/{}, min-F checks {min_f_checked}",
        counts[0], counts[1], counts[2]
    ));
    c.finish(8, "subsidized supply structure");
}

#[test]
fn criterion_9_oracle_agreement() {
    let _g = serial();
    let mut c = Check::new();
    let start = Instant::now();
    const GRID: usize = 501;
    let cell = 1.0 / (GRID - 1) as f64;
    let (mut agree, mut kink, mut cycles, mut other) = (0, 0, 0, 0);
    for seed in 0..30u64 {
        let m = random_small_market(seed);
        for k in 1..=5 {
            let p = SMALL_MARKET_BOUND * k as f64 / 6.0;
            let solved = solve_equilibrium(&m, p, Subsidy::NONE).unwrap();
            match brute_force_equilibrium(&m, p, Subsidy::NONE, GRID) {
                Ok(oracle) => {
                    let diff = solved
                        .actions
                        .iter()
                        .zip(&oracle.actions)
                        .map(|(a, b)| (a.x - b.x).abs().max((a.s - b.s).abs()))
                        .fold(0.0, f64::max);
                    if diff <= 2.0 * cell + 1e-12 {
                        agree += 1;
                        continue;
                    }
                    let at_kink =
                        (solved.total_supply - solved.total_demand).abs() <= 1e-6 * solved.total_demand.max(1.0);
                    if at_kink {
                        kink += 1;
                    } else {
                        other += 1;
                    }
                    c.expect(
                        false,
                        format!(
                            "seed {seed} p={p:.3}: actions differ by {:.1} cells (S solver {:.4}, oracle {:.4}, D {:.4})",
                            diff / cell,
                            solved.total_supply,
                            oracle.total_supply,
                            solved.total_demand
                        ),
                    );
                }
                Err(e) => {
                    cycles += 1;
                    c.expect(false, format!("seed {seed} p={p:.3}: oracle failed: {e}"));
                }
            }
        }
    }
    c.note(format!(
        "agree {agree}/150, clearing-kink splits {kink}, oracle cycles {cycles}, other {other}"
    ));
    c.within("runtime", start.elapsed(), Duration::from_secs(600));
    c.finish(9, "solver vs grid oracle");
}
