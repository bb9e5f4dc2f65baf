//! Small reference markets with known closed-form behavior.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::benefit::BenefitFunction;
use crate::market::{Market, Owner, Renter};

/// 100 owners with `f(x) = 4x - x^2` and 150 renters with `g(y) = 3y - y^2`,
/// zero usage cost. Demand is `225 - 75p` on `[1, 3]`.
pub fn quadratic_reference_market() -> Market {
    let f = BenefitFunction::quadratic(1.0, 4.0).expect("valid quadratic");
    let g = BenefitFunction::quadratic(1.0, 3.0).expect("valid quadratic");
    Market::new(vec![Owner::new(f); 100], vec![Renter::new(g); 150], 0.0, 4.0).expect("valid market")
}

/// Three linear owners (values 5, 2, 1) and three linear renters
/// (values `4 + delta`, 1.5, 0.5).
pub fn linear_tight_market(delta: f64, cost: f64) -> Market {
    let owners = [5.0, 2.0, 1.0]
        .into_iter()
        .map(|a| Owner::new(BenefitFunction::linear(a).expect("valid linear")))
        .collect();
    let renters = [4.0 + delta, 1.5, 0.5]
        .into_iter()
        .map(|a| Renter::new(BenefitFunction::linear(a).expect("valid linear")))
        .collect();
    Market::new(owners, renters, cost, 5.0).expect("valid market")
}

/// Entropy market shaped like the ride-hailing calibration: renters share
/// `alpha / n_renters` of the fitted demand, owners use the same curve.
pub fn didi_market(n_owners: usize, deriv_bound: f64) -> Market {
    let (alpha, beta, n) = (19190.0, 0.0832, 1919.0);
    let h = BenefitFunction::entropy(alpha, beta, n).expect("valid entropy");
    Market::new(
        vec![Owner::new(h.clone()); n_owners],
        vec![Renter::new(h); 1919],
        0.0,
        deriv_bound,
    )
    .expect("valid market")
}

/// Derivative bound of the markets built by [`random_small_market`].
pub const SMALL_MARKET_BOUND: f64 = 2.0;

/// Concave piecewise-linear curve through `(0,0)` with `segments` pieces and
/// slopes drawn below `top`.
pub fn random_table(rng: &mut ChaCha8Rng, segments: usize, top: f64) -> BenefitFunction {
    let mut slopes: Vec<f64> = (0..segments).map(|_| rng.gen_range(0.05..top)).collect();
    slopes.sort_by(|a, b| b.total_cmp(a));
    let mut cuts: Vec<f64> = (1..segments).map(|_| rng.gen_range(0.1..0.9)).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 0.02);
    let mut points = vec![(0.0, 0.0)];
    let mut knots = cuts.clone();
    knots.push(1.0);
    for (k, &u) in knots.iter().enumerate() {
        let (u0, v0) = *points.last().expect("starts at origin");
        points.push((u, v0 + slopes[k] * (u - u0)));
    }
    BenefitFunction::tabulated(points).expect("concave table")
}

fn random_benefit(rng: &mut ChaCha8Rng, allow_tables: bool) -> BenefitFunction {
    let kinds = if allow_tables { 3 } else { 2 };
    match rng.gen_range(0..kinds) {
        0 => BenefitFunction::quadratic(rng.gen_range(0.2..1.0), rng.gen_range(0.3..1.9)).expect("valid benefit"),
        1 => {
            let level: f64 = rng.gen_range(1.5..3.0);
            let beta = rng.gen_range(1.0..3.0);
            BenefitFunction::entropy(level, beta, 1.0).expect("valid benefit")
        }
        _ => random_table(rng, 3, 1.9),
    }
}

/// Two to five owners and three to eight renters of mixed curve families.
pub fn random_small_market(seed: u64) -> Market {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n_o = rng.gen_range(2..=5);
        let n_r = rng.gen_range(3..=8);
        let owners = (0..n_o).map(|_| Owner::new(random_benefit(&mut rng, true))).collect();
        let renters = (0..n_r).map(|_| Renter::new(random_benefit(&mut rng, false))).collect();
        let cost = rng.gen_range(0.0..0.1);
        if let Ok(m) = Market::new(owners, renters, cost, SMALL_MARKET_BOUND) {
            return m;
        }
    }
}
