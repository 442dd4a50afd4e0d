//! Config parsing: defaults, overrides, pointers and the schema.

use std::collections::BTreeSet;

use serde_json::Value;
use smps::experiments::Regime;
use smps_cli::{parse_config, parse_config_with, Overrides, RUN_CONFIG_SCHEMA};

const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/ti_gaussian.json");
const SNAPSHOT: &str = include_str!("golden/ti_gaussian.materialized.json");

fn gaussian(kind: &str, extra: &str) -> String {
    format!(r#"{{"spec":{{"phys_dim":2,"bond_dim":2,"ensemble":{{"kind":"{kind}","marginal":{{"type":"gaussian"}}}}}}{extra}}}"#)
}

#[test]
fn golden_config_materializes_to_snapshot() {
    let cfg = parse_config(GOLDEN).unwrap();
    let got = serde_json::to_value(&cfg).unwrap();
    let want: Value = serde_json::from_str(SNAPSHOT).unwrap();
    assert_eq!(got, want);
    let sigma = got["spec"]["ensemble"]["marginal"]["sigma"].as_f64().unwrap();
    assert_eq!(sigma, 1.0 / 2f64.sqrt());
    assert_eq!(cfg.thermo.tol, 1e-10);
    assert_eq!(cfg.samples, 1000);
}

#[test]
fn materialized_config_is_a_fixed_point() {
    let cfg = parse_config(GOLDEN).unwrap();
    let again = parse_config(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(cfg.hash(), again.hash());
}

#[test]
fn non_stochastic_row_names_the_row() {
    let src = r#"{"spec":{"phys_dim":2,"bond_dim":2,"ensemble":{"kind":"markov_modulated",
        "transition":[[0.5,0.5],[0.3,0.6]],"stationary":[0.5,0.5],
        "branches":[{"type":"gaussian"},{"type":"gaussian"}]}}}"#;
    let err = parse_config(src).unwrap_err();
    assert_eq!(err.pointer, "/spec/ensemble/transition/1");
    assert!(err.message.contains("row 1"), "{}", err.message);
}

#[test]
fn unknown_fields_are_rejected_with_a_pointer() {
    let err = parse_config(&gaussian("iid", r#","samples":10,"sampels":3"#)).unwrap_err();
    assert_eq!(err.pointer, "/sampels");
    let src = r#"{"spec":{"phys_dim":2,"bond_dim":2,"ensemble":{"kind":"iid","marginal":{"type":"gaussian","sigma":1,"mu":0}}}}"#;
    let err = parse_config(src).unwrap_err();
    assert!(err.pointer.starts_with("/spec/ensemble"), "{}", err.pointer);
}

#[test]
fn invalid_values_point_at_the_field() {
    let cases = [
        (r#","samples":0"#, "/samples"),
        (r#","separations":[3,2]"#, "/separations/1"),
        (r#","epsilon":1.5"#, "/epsilon"),
        (r#","window":2"#, "/window"),
    ];
    for (extra, pointer) in cases {
        let err = parse_config(&gaussian("iid", extra)).unwrap_err();
        assert_eq!(err.pointer, pointer, "{extra}");
    }
    let err = parse_config(&gaussian("iid", r#","observables":{"m":{"type":"diag","values":[1,2,3]}}"#)).unwrap_err();
    assert!(err.pointer.starts_with("/observables"), "{}", err.pointer);
}

#[test]
fn overrides_take_precedence() {
    let o = Overrides {
        seed: Some(7),
        samples: Some(33),
        separation_min: Some(4),
        separation_max: Some(6),
        regime: Some(Regime::Window),
        epsilon: Some(0.2),
        window: Some(5),
        ..Overrides::default()
    };
    let cfg = parse_config_with(&gaussian("iid", r#","seed":1"#), &o).unwrap();
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.samples, 33);
    assert_eq!(cfg.separations, vec![4, 5, 6]);
    assert_eq!(cfg.regime(), Regime::Window);
    assert_eq!(cfg.epsilon, 0.2);
    assert_eq!(cfg.window, 5);
}

#[test]
fn default_regime_follows_the_ensemble() {
    assert_eq!(parse_config(&gaussian("ti", "")).unwrap().regime(), Regime::Ti);
    assert_eq!(parse_config(&gaussian("iid", "")).unwrap().regime(), Regime::Iid);
}

#[test]
fn schema_lists_exactly_the_config_fields() {
    let schema: Value = serde_json::from_str(RUN_CONFIG_SCHEMA).unwrap();
    let props: BTreeSet<String> = schema["properties"].as_object().unwrap().keys().cloned().collect();
    let mut cfg = serde_json::to_value(parse_config(GOLDEN).unwrap()).unwrap();
    cfg["workers"] = Value::from(1);
    let fields: BTreeSet<String> = cfg.as_object().unwrap().keys().cloned().collect();
    assert_eq!(props, fields);
    assert_eq!(schema["additionalProperties"], Value::Bool(false));
}
