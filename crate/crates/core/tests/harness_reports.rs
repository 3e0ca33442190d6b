use malliavin_core::builtin;
use malliavin_core::exact::{int, rat};
use malliavin_core::harness::{
    convergence_study, dyson_term_profile, golden_cases, rows_to_csv, run_experiment, run_golden, to_json,
    ConvergenceConfig, ExperimentConfig, GammaReport, ProfileReport, CSV_COLUMNS, REPORT_SCHEMA,
};
use malliavin_core::{Error, PathPrefix};
use serde_json::{json, Value};

fn configs_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn assert_valid(report: &str) {
    let schema: Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let instance: Value = serde_json::from_str(report).unwrap();
    let errors: Vec<String> = validator.iter_errors(&instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}\n{report}");
}

fn experiment(value: Value) -> ExperimentConfig {
    ExperimentConfig::from_json(&value.to_string()).unwrap()
}

#[test]
fn shipped_configs_produce_valid_reports() {
    let mut seen = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        let report = if path.file_name().unwrap().to_string_lossy().starts_with("convergence") {
            to_json(&ConvergenceConfig::from_json(&text).unwrap().run().unwrap())
        } else {
            to_json(&run_experiment(&ExperimentConfig::from_json(&text).unwrap(), true).unwrap())
        };
        assert_valid(&report);
        seen += 1;
    }
    assert!(seen >= 5);
}

#[test]
fn every_report_kind_validates() {
    for method in [
        json!({"functional": "monomial(3)", "method": "bte", "t": "1/4", "L": 3, "M": 3, "delta": "1/4", "increments": [0.2, -0.4, 1.0]}),
        json!({"functional": "example2", "method": "dyson", "t": "1/2", "path": {"kind": "linear", "slope": 1.0}, "K": 6, "tol": 1e-9}),
        json!({"functional": "expW", "method": "mc", "t": "0", "mc": {"n": 1000, "seed": 3}}),
        json!({"functional": "monomial(4)", "method": "moment-oracle", "t": "1/3", "path": {"kind": "seeded-random", "seed": 9}}),
    ] {
        assert_valid(&to_json(&run_experiment(&experiment(method), false).unwrap()));
    }
    let golden = run_golden(&golden_cases(), true).unwrap();
    assert_valid(&to_json(&golden));

    let f = builtin::exp_terminal(&int(1)).unwrap();
    let deltas: Vec<_> = (2..=5).map(|k| rat(1, 1 << k)).collect();
    assert_valid(&to_json(&convergence_study(&f, &[0, 1], &deltas, 500, 1).unwrap()));

    let ex1 = builtin::example1(&int(2), &int(1)).unwrap();
    let rows = dyson_term_profile(&ex1, &int(0), &PathPrefix::origin(int(1)), 8).unwrap();
    assert_valid(&to_json(&ProfileReport::new(json!({"K": 8}), rows)));

    assert_valid(&to_json(&GammaReport::new(6, Some(&rat(1, 4)))));
    assert_valid(&to_json(&GammaReport::new(6, None)));
}

#[test]
fn schema_rejects_foreign_documents() {
    let schema: Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    assert!(!validator.is_valid(&json!({"kind": "experiment", "rows": []})));
    assert!(!validator.is_valid(&json!({"kind": "gamma", "rows": [], "extra": 1})));
    assert!(!validator.is_valid(&json!({"kind": "unknown"})));
}

#[test]
fn csv_header_is_the_documented_column_set() {
    let report = run_experiment(
        &experiment(json!({"functional": "example2", "method": "dyson", "t": "1/4", "K": 8})),
        false,
    )
    .unwrap();
    let csv = rows_to_csv(&report.rows).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, CSV_COLUMNS.join(","));
    assert_eq!(csv.lines().count(), 1 + report.rows.len());
}

#[test]
fn reports_are_reproducible() {
    let cfg = experiment(json!({
        "label": "repeat",
        "functional": "example1",
        "tau": "2",
        "method": "mc",
        "t": "1/2",
        "path": {"kind": "seeded-random", "seed": 4},
        "mc": {"n": 5000, "seed": 12, "antithetic": true}
    }));
    let a = to_json(&run_experiment(&cfg, false).unwrap());
    let b = to_json(&run_experiment(&cfg, false).unwrap());
    assert_eq!(a, b);
    let echoed: Value = serde_json::from_str(&a).unwrap();
    assert_eq!(echoed["rows"][0]["params"]["mc"]["seed"], json!(12));
    let round = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
    assert_eq!(to_json(&run_experiment(&round, false).unwrap()), a);
}

#[test]
fn golden_cases_meet_their_tolerances_except_the_boundary_case() {
    let report = run_golden(&golden_cases(), false).unwrap();
    for outcome in &report.outcomes {
        let expected = outcome.name != "example1-dyson-t0";
        assert_eq!(outcome.passed, expected, "{}: {:?}", outcome.name, outcome.measure);
    }
    assert!(!report.passed);
}

#[test]
fn configuration_errors_name_the_field() {
    let bad = [
        (
            json!({"functional": "monomial(2)", "method": "bte", "t": "0", "L": 2, "M": 3, "delta": "1/4"}),
            "delta",
        ),
        (
            json!({"functional": "example2", "method": "dyson", "t": "0", "M": 4}),
            "M",
        ),
        (json!({"functional": "nope", "method": "dyson", "t": "0"}), "functional"),
        (json!({"functional": "example2", "method": "mc", "t": "2"}), "t"),
    ];
    for (value, field) in bad {
        let err = ExperimentConfig::from_json(&value.to_string())
            .and_then(|c| run_experiment(&c, false))
            .unwrap_err();
        match err {
            Error::Config { field: f, .. } => assert_eq!(f, field, "{value}"),
            other => panic!("{value}: expected a config error on `{field}`, got {other}"),
        }
    }
}
