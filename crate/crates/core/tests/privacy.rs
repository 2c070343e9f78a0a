//! The audit stays silent on conforming runs and catches deliberate leaks.

use consentry::netsim::{run, SimReport, Termination, Violation};
use consentry::process::ProcessId;
use consentry::scenario::ScenarioConfig;
use serde_json::{json, Value};

fn scenario(v: Value) -> ScenarioConfig {
    let c = ScenarioConfig::from_value(v).unwrap();
    c.validate().unwrap();
    c
}

fn conforming() -> Vec<Value> {
    vec![
        json!({"protocol": "avg-trusted", "topology": {"family": "random-connected", "n": 9},
               "inputs": {"generator": "uniform"}, "schedule": "async", "max_latency": 3}),
        json!({"protocol": "avg-untrusted", "topology": {"family": "ring", "n": 6},
               "inputs": {"generator": "uniform"}}),
        json!({"protocol": "outlier", "c": 2, "topology": {"family": "star", "n": 6},
               "inputs": [1, 2, 3, 2, 1, 90]}),
        json!({"protocol": "outlier", "c": 2, "variance_route": "encrypted",
               "topology": {"family": "ring", "n": 6}, "inputs": [1, 2, 3, 2, 1, 90]}),
        json!({"protocol": "election", "topology": {"family": "tree", "n": 7},
               "inputs": {"generator": "ballots"}, "seed": 3}),
    ]
}

fn keyholder_ids(r: &SimReport) -> Vec<ProcessId> {
    r.keyholders.iter().map(|k| k.id).collect()
}

#[test]
fn conforming_runs_are_clean() {
    for cfg in conforming() {
        let r = run(&scenario(cfg.clone())).unwrap();
        assert_eq!(r.termination, Termination::Decided, "{cfg}");
        assert!(
            r.privacy_violations.is_empty(),
            "{cfg}: {:?}",
            r.privacy_violations
        );
        for k in &r.keyholders {
            assert_eq!(k.decryptions_denied, 0);
        }
    }
}

#[test]
fn only_the_keyholder_decrypts_in_elections() {
    let r = run(&scenario(conforming().pop().unwrap())).unwrap();
    assert_eq!(keyholder_ids(&r), vec![ProcessId(r.n)]);
    let k = &r.keyholders[0];
    assert_eq!(
        k.decryptions_granted,
        r.election.as_ref().unwrap().complete_received as u64
    );
}

fn with_mutation(mut cfg: Value, mutation: Value) -> SimReport {
    cfg["mutation"] = mutation;
    run(&scenario(cfg)).unwrap()
}

#[test]
fn plaintext_leak_is_caught() {
    for cfg in conforming().into_iter().take(4) {
        let r = with_mutation(cfg.clone(), json!({"leak_plaintext": true}));
        assert!(
            r.privacy_violations
                .iter()
                .any(|v| matches!(v, Violation::PlaintextLeak { .. })),
            "{cfg}"
        );
        assert!(!r.passed());
    }
}

#[test]
fn decrypting_before_prepare_is_caught() {
    let r = with_mutation(conforming().remove(0), json!({"premature_decrypt": true}));
    assert!(r
        .privacy_violations
        .iter()
        .any(|v| matches!(v, Violation::UnsafeDecryption { observer, .. } if observer.0 == r.n)));
}

#[test]
fn premature_decrypt_is_rejected_outside_the_trusted_variant() {
    let mut cfg = conforming().remove(1);
    cfg["mutation"] = json!({"premature_decrypt": true});
    assert!(ScenarioConfig::from_value(cfg).is_err());
}
