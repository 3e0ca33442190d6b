use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, FunctionalSpec, McSpec, Method, PathSpec};
use super::report::ReportRow;
use super::run_experiment;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Tolerance {
    /// `|value - ref| / |ref| <= bound`.
    Relative { bound: f64 },
    /// `|value - ref| <= count · std_error`.
    StdErrors { count: f64 },
    /// Bit-for-bit equality.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldenCase {
    pub name: String,
    pub config: ExperimentConfig,
    pub tolerance: Tolerance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldenOutcome {
    pub name: String,
    pub tolerance: Tolerance,
    /// The quantity compared with the tolerance: relative error, standard errors, or absolute error.
    pub measure: f64,
    pub passed: bool,
    pub row: ReportRow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldenReport {
    pub kind: String,
    pub passed: bool,
    pub outcomes: Vec<GoldenOutcome>,
}

fn case(name: &str, config: ExperimentConfig, tolerance: Tolerance) -> GoldenCase {
    GoldenCase {
        name: name.into(),
        config: ExperimentConfig {
            label: Some(name.into()),
            ..config
        },
        tolerance,
    }
}

fn base(functional: &str, method: Method, t: &str) -> ExperimentConfig {
    ExperimentConfig {
        functional: Some(FunctionalSpec::Builtin(functional.into())),
        method: Some(method),
        t: Some(t.into()),
        horizon: Some("1".into()),
        path: Some(PathSpec::Zero { steps: None }),
        ..Default::default()
    }
}

/// The worked examples with their closed-form references and tolerances.
pub fn golden_cases() -> Vec<GoldenCase> {
    let dyson12 = |functional: &str, t: &str, path: PathSpec| ExperimentConfig {
        path: Some(path),
        dyson_order: Some(12),
        ..base(functional, Method::Dyson, t)
    };
    vec![
        case(
            "example1-dyson-t0",
            ExperimentConfig {
                tau: Some("2".into()),
                ..dyson12("example1", "0", PathSpec::Zero { steps: None })
            },
            Tolerance::Relative { bound: 1e-6 },
        ),
        case(
            "example1-dyson-t-half",
            ExperimentConfig {
                tau: Some("2".into()),
                ..dyson12(
                    "example1",
                    "1/2",
                    PathSpec::Linear {
                        slope: None,
                        end: Some(0.3),
                        steps: None,
                    },
                )
            },
            Tolerance::Relative { bound: 1e-5 },
        ),
        case(
            "example2-dyson-zero",
            dyson12("example2", "1/4", PathSpec::Zero { steps: None }),
            Tolerance::Relative { bound: 1e-9 },
        ),
        case(
            "example2-dyson-linear",
            dyson12(
                "example2",
                "1/2",
                PathSpec::Linear {
                    slope: Some(1.0),
                    end: None,
                    steps: None,
                },
            ),
            Tolerance::Relative { bound: 1e-9 },
        ),
        case(
            "monomial2-bte",
            ExperimentConfig {
                order: Some(2),
                steps: Some(4),
                ..base("monomial(2)", Method::Bte, "0")
            },
            Tolerance::Exact,
        ),
        case(
            "monomial4-bte-random-path",
            ExperimentConfig {
                order: Some(4),
                steps: Some(2),
                increments: Some(vec![0.7, -1.3]),
                path: Some(PathSpec::SeededRandom { seed: 5, steps: None }),
                ..base("monomial(4)", Method::Bte, "1/2")
            },
            Tolerance::Relative { bound: 1e-12 },
        ),
        case(
            "example2-mc",
            ExperimentConfig {
                mc: Some(McSpec {
                    n: 100_000,
                    seed: 20_240_601,
                    grid_steps: 16,
                    antithetic: false,
                }),
                ..base("example2", Method::Mc, "0")
            },
            Tolerance::StdErrors { count: 3.0 },
        ),
    ]
}

fn judge(case: &GoldenCase) -> Result<GoldenOutcome> {
    let report = run_experiment(&case.config, false)?;
    let row = report.rows.into_iter().next().expect("one row per experiment");
    let reference = row
        .reference
        .ok_or_else(|| Error::Usage(format!("golden case {} has no reference value", case.name)))?;
    let diff = (row.value - reference).abs();
    let (measure, passed) = match case.tolerance {
        Tolerance::Relative { bound } => {
            let rel = diff / reference.abs();
            (rel, rel <= bound)
        }
        Tolerance::StdErrors { count } => {
            let se = row.std_error.unwrap_or(f64::INFINITY);
            let m = diff / se;
            (m, m <= count)
        }
        Tolerance::Exact => (diff, row.value == reference),
    };
    Ok(GoldenOutcome {
        name: case.name.clone(),
        tolerance: case.tolerance,
        measure,
        passed,
        row,
    })
}

/// Runs each case, optionally in parallel; outcomes keep the case order either way.
pub fn run_golden(cases: &[GoldenCase], parallel: bool) -> Result<GoldenReport> {
    let outcomes: Vec<GoldenOutcome> = if parallel {
        cases.par_iter().map(judge).collect::<Result<_>>()?
    } else {
        cases.iter().map(judge).collect::<Result<_>>()?
    };
    Ok(GoldenReport {
        kind: "golden".into(),
        passed: outcomes.iter().all(|o| o.passed),
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cases_resolve() {
        for c in golden_cases() {
            c.config.resolve().unwrap_or_else(|e| panic!("{}: {e}", c.name));
        }
    }

    #[test]
    fn exact_case_passes() {
        let cases: Vec<_> = golden_cases()
            .into_iter()
            .filter(|c| c.name.starts_with("monomial"))
            .collect();
        let rep = run_golden(&cases, true).unwrap();
        assert!(rep.passed, "{rep:?}");
    }
}
