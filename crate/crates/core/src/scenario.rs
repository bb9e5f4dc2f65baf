//! Scenario files: explicit agents or seeded population generators.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::benefit::BenefitFunction;
use crate::error::{Error, Result};
use crate::market::{Market, Owner, Renter};
use crate::settings::Settings;

/// One entry of the `owners` or `renters` list. Every numeric parameter is
/// either fixed (`a`) or drawn uniformly from a range (`a_range`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<(f64, f64)>>,
}

impl AgentSpec {
    fn is_random(&self) -> bool {
        self.a_range.is_some()
            || self.b_range.is_some()
            || self.alpha_range.is_some()
            || self.beta_range.is_some()
            || self.n_range.is_some()
    }

    fn expand(&self, fallback_seed: u64) -> Result<(Vec<BenefitFunction>, Option<u64>)> {
        let count = self.count.unwrap_or(1);
        let seed = self.is_random().then(|| self.seed.unwrap_or(fallback_seed));
        let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
        let mut draw = |name: &str, fixed: Option<f64>, range: Option<[f64; 2]>| -> Result<f64> {
            match (fixed, range) {
                (Some(v), None) => Ok(v),
                (None, Some([lo, hi])) if lo < hi => Ok(rng.gen_range(lo..hi)),
                (None, Some([lo, hi])) if lo == hi => Ok(lo),
                (None, Some(r)) => Err(Error::Scenario(format!("{name}_range {r:?} is empty"))),
                (Some(_), Some(_)) => Err(Error::Scenario(format!("both {name} and {name}_range given"))),
                (None, None) => Err(Error::Scenario(format!(
                    "{} agent needs `{name}` or `{name}_range`",
                    self.variant
                ))),
            }
        };
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let f = match self.variant.to_ascii_lowercase().as_str() {
                "quadratic" => {
                    let a = draw("a", self.a, self.a_range)?;
                    let b = draw("b", self.b, self.b_range)?;
                    BenefitFunction::quadratic(a, b)?
                }
                "linear" => BenefitFunction::linear(draw("alpha", self.alpha, self.alpha_range)?)?,
                "entropy" => {
                    let alpha = draw("alpha", self.alpha, self.alpha_range)?;
                    let beta = draw("beta", self.beta, self.beta_range)?;
                    let n = draw("n", self.n, self.n_range)?;
                    BenefitFunction::entropy(alpha, beta, n)?
                }
                "tabulated" => {
                    let pts = self
                        .points
                        .clone()
                        .ok_or_else(|| Error::Scenario("tabulated agent needs `points`".into()))?;
                    BenefitFunction::tabulated(pts)?
                }
                other => return Err(Error::Scenario(format!("unknown variant `{other}`"))),
            };
            out.push(f);
        }
        Ok((out, seed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub cost: f64,
    /// Defaults to the largest finite marginal benefit at zero usage.
    #[serde(default)]
    pub deriv_bound: Option<f64>,
    /// Base seed for generator blocks without their own seed.
    #[serde(default)]
    pub seed: Option<u64>,
    pub owners: Vec<AgentSpec>,
    #[serde(default)]
    pub renters: Vec<AgentSpec>,
    #[serde(default)]
    pub settings: Settings,
}

/// A built market plus the seeds that produced its populations.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub market: Market,
    pub base_seed: u64,
    /// Seed of every generator block, owners first, in file order.
    pub block_seeds: Vec<u64>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))
    }

    /// Reads JSON or TOML, chosen by extension (JSON when unknown).
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml(&text),
            _ => Self::from_json(&text),
        }
    }

    /// Build the market. `seed_override` replaces the file's base seed.
    pub fn build(&self, seed_override: Option<u64>) -> Result<Scenario> {
        let base_seed = seed_override.or(self.seed).unwrap_or(0);
        let mut block_seeds = Vec::new();
        let mut expand = |specs: &[AgentSpec], offset: u64| -> Result<Vec<BenefitFunction>> {
            let mut all = Vec::new();
            for (k, spec) in specs.iter().enumerate() {
                let fallback = base_seed.wrapping_add(offset).wrapping_add(k as u64);
                let (fs, seed) = spec.expand(fallback)?;
                block_seeds.extend(seed);
                all.extend(fs);
            }
            Ok(all)
        };
        let owners = expand(&self.owners, 0)?;
        let renters = expand(&self.renters, 1 << 32)?;
        let bound = match self.deriv_bound {
            Some(b) => b,
            None => owners
                .iter()
                .chain(&renters)
                .map(|f| f.slope_at_zero())
                .filter(|d| d.is_finite())
                .fold(0.0, f64::max)
                .max(1e-9),
        };
        let market = Market::new(
            owners.into_iter().map(Owner::new).collect(),
            renters.into_iter().map(Renter::new).collect(),
            self.cost,
            bound,
        )?
        .with_settings(self.settings);
        Ok(Scenario {
            market,
            base_seed,
            block_seeds,
        })
    }
}

/// Quadratic population with curvature in `(0.1, 1.2)` and slope in `(0, 1)`.
pub fn random_quadratic_market(n_owners: usize, n_renters: usize, cost: f64, seed: u64) -> Result<Market> {
    let block = |count, seed| AgentSpec {
        variant: "quadratic".into(),
        count: Some(count),
        seed: Some(seed),
        a_range: Some([0.1, 1.2]),
        b_range: Some([0.0, 1.0]),
        ..AgentSpec::default()
    };
    let cfg = ScenarioConfig {
        cost,
        deriv_bound: Some(1.0),
        seed: Some(seed),
        owners: vec![block(n_owners, seed)],
        renters: vec![block(n_renters, seed ^ 0x9e37_79b9_7f4a_7c15)],
        settings: Settings::default(),
    };
    Ok(cfg.build(None)?.market)
}

#[cfg(test)]
mod tests {
    use super::*;

    const QUADRATIC_REFERENCE: &str = r#"{
        "cost": 0.0,
        "deriv_bound": 4.0,
        "owners": [{"variant": "quadratic", "a": 1, "b": 4, "count": 100}],
        "renters": [{"variant": "quadratic", "a": 1, "b": 3, "count": 150}]
    }"#;

    #[test]
    fn explicit_json_builds_quadratic_reference() {
        let s = ScenarioConfig::from_json(QUADRATIC_REFERENCE)
            .unwrap()
            .build(None)
            .unwrap();
        assert_eq!(s.market, crate::fixtures::quadratic_reference_market());
        assert!(s.block_seeds.is_empty());
    }

    #[test]
    fn toml_generator_is_reproducible() {
        let text = r#"
            cost = 0.1
            [[owners]]
            variant = "quadratic"
            count = 20
            a_range = [0.1, 1.2]
            b_range = [0.0, 1.0]
            seed = 42
            [[renters]]
            variant = "linear"
            alpha_range = [0.2, 0.9]
            count = 5
        "#;
        let cfg = ScenarioConfig::from_toml(text).unwrap();
        let a = cfg.build(Some(7)).unwrap();
        let b = cfg.build(Some(7)).unwrap();
        assert_eq!(a.market, b.market);
        assert_eq!(a.block_seeds[0], 42);
        let c = cfg.build(Some(8)).unwrap();
        assert_eq!(a.market.owners(), c.market.owners());
        assert_ne!(a.market.renters(), c.market.renters());
        for o in a.market.owners() {
            match o.benefit {
                BenefitFunction::Quadratic { a, b } => {
                    assert!((0.1..1.2).contains(&a) && (0.0..1.0).contains(&b));
                }
                _ => panic!("wrong variant"),
            }
        }
    }

    #[test]
    fn missing_parameter_and_unknown_variant_fail() {
        let bad = r#"{"cost":0,"owners":[{"variant":"quadratic","a":1,"count":2}]}"#;
        assert!(ScenarioConfig::from_json(bad).unwrap().build(None).is_err());
        let bad = r#"{"cost":0,"owners":[{"variant":"cubic","count":2}]}"#;
        assert!(ScenarioConfig::from_json(bad).unwrap().build(None).is_err());
    }

    #[test]
    fn random_market_respects_ranges() {
        let m = random_quadratic_market(10, 30, 0.1, 3).unwrap();
        assert_eq!((m.n_owners(), m.n_renters()), (10, 30));
        assert_eq!(m, random_quadratic_market(10, 30, 0.1, 3).unwrap());
    }
}
