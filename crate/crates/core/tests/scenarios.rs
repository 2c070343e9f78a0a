use consentry::netsim::{run, Decision, Termination};
use consentry::process::ProcessId;
use consentry::scenario::ScenarioConfig;

fn cfg(text: &str) -> ScenarioConfig {
    let c = ScenarioConfig::from_json(text).unwrap();
    c.validate().unwrap();
    c
}

fn averages(r: &consentry::netsim::SimReport) -> Vec<f64> {
    r.decided_values
        .iter()
        .map(|d| d.as_ref().and_then(Decision::as_average).expect("decided"))
        .collect()
}

#[test]
fn ring4_trusted_average() {
    let r = run(&cfg(
        r#"{"protocol":"avg-trusted","topology":{"family":"ring","n":4},"inputs":[1,2,3,4]}"#,
    ))
    .unwrap();
    assert_eq!(r.termination, Termination::Decided, "{r:#?}");
    for v in averages(&r) {
        assert!((v - 2.5).abs() < 1e-9);
    }
    assert!(
        r.privacy_violations.is_empty(),
        "{:?}",
        r.privacy_violations
    );
    assert!(r.rounds_max().unwrap() <= 2);
    assert!(r.passed());
}

#[test]
fn path_untrusted_leaves() {
    let r = run(&cfg(
        r#"{"protocol":"avg-untrusted","topology":{"family":"path","n":5},"inputs":[1,2,3,4,10],
            "initiators":[0,4]}"#,
    ))
    .unwrap();
    assert_eq!(r.termination, Termination::Decided, "{r:#?}");
    for v in averages(&r) {
        assert!((v - 4.0).abs() < 1e-9);
    }
    assert!(
        r.privacy_violations.is_empty(),
        "{:?}",
        r.privacy_violations
    );
}

#[test]
fn star_center_is_not_viable() {
    let r = run(&cfg(
        r#"{"protocol":"avg-untrusted","topology":{"family":"star","n":5},"inputs":[1,2,3,4,10],
            "initiators":[0],"faults":{"expect_termination":false}}"#,
    ))
    .unwrap();
    assert_eq!(r.termination, Termination::NonViable);
    assert!(!r.instances[0].viable);
    assert!(r.passed());
}

#[test]
fn outlier_decrypt_route() {
    let r = run(&cfg(
        r#"{"protocol":"outlier","c":1,"topology":{"family":"ring","n":4},"inputs":[1,2,3,100]}"#,
    ))
    .unwrap();
    assert_eq!(r.termination, Termination::Decided, "{r:#?}");
    for v in averages(&r) {
        assert!((v - 2.0).abs() < 1e-9, "{v}");
    }
    assert!(
        r.privacy_violations.is_empty(),
        "{:?}",
        r.privacy_violations
    );
}

#[test]
fn outlier_encrypted_route() {
    let r = run(&cfg(
        r#"{"protocol":"outlier","c":1,"variance_route":"encrypted",
            "topology":{"family":"ring","n":4},"inputs":[1,2,3,100]}"#,
    ))
    .unwrap();
    assert_eq!(r.termination, Termination::Decided, "{r:#?}");
    for v in averages(&r) {
        assert!((v - 2.0).abs() < 1e-9, "{v}");
    }
    assert!(
        r.privacy_violations.is_empty(),
        "{:?}",
        r.privacy_violations
    );
}

#[test]
fn election_five() {
    let r = run(&cfg(
        r#"{"protocol":"election","topology":{"family":"ring","n":5},
            "inputs":[{"primary":0,"secondary":2},{"primary":0,"secondary":1},
                      {"primary":1,"secondary":0},{"primary":2,"secondary":0},
                      {"primary":2,"secondary":1}]}"#,
    ))
    .unwrap();
    assert_eq!(r.termination, Termination::Decided, "{r:#?}");
    for d in &r.decided_values {
        assert_eq!(d.as_ref().unwrap().as_leader(), Some(ProcessId(0)));
    }
    assert!(
        r.privacy_violations.is_empty(),
        "{:?}",
        r.privacy_violations
    );
}
