use std::path::PathBuf;

use sharemkt_core::fixtures::{linear_tight_market, quadratic_reference_market};
use sharemkt_core::market::validate_market;
use sharemkt_core::pricing::analyze_prices;
use sharemkt_core::scenario::ScenarioConfig;

fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

#[test]
fn every_bundled_scenario_builds_and_validates() {
    let mut seen = 0;
    for entry in std::fs::read_dir(scenarios_dir()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ScenarioConfig::from_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let built = cfg.build(None).unwrap();
        let report = validate_market(&built.market);
        assert!(report.passes(), "{}: {:?}", path.display(), report.failures());
        seen += 1;
    }
    assert!(seen >= 5);
}

#[test]
fn json_files_match_fixtures() {
    let load = |name: &str| {
        ScenarioConfig::from_path(&scenarios_dir().join(name))
            .unwrap()
            .build(None)
            .unwrap()
            .market
    };
    assert_eq!(load("quadratic_reference.json"), quadratic_reference_market());
    assert_eq!(load("linear_tight.json"), linear_tight_market(0.01, 0.01));
}

#[test]
fn seeded_generator_is_reproducible_and_overridable() {
    let cfg = ScenarioConfig::from_path(&scenarios_dir().join("random_quadratic.toml")).unwrap();
    let a = cfg.build(None).unwrap();
    let b = cfg.build(None).unwrap();
    let c = cfg.build(Some(7)).unwrap();
    assert_eq!(a.market, b.market);
    assert_eq!(a.block_seeds, b.block_seeds);
    assert_ne!(a.market, c.market);
    assert_eq!(c.base_seed, 7);
}

#[test]
fn random_scenario_prices_are_ordered() {
    let cfg = ScenarioConfig::from_path(&scenarios_dir().join("random_quadratic.toml")).unwrap();
    let m = cfg.build(None).unwrap().market;
    let a = analyze_prices(&m).unwrap();
    assert!(a.p_c <= a.p_upper);
    assert!(a.p_r >= a.p_sw - 1e-6);
    assert!(a.welfare_sw >= a.welfare_r - 1e-9);
}
