//! Experiment configs, report rows and the study drivers behind the CLI.

mod config;
mod convergence;
mod golden;
mod report;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{
    ExperimentConfig, FunctionalSpec, McSpec, Method, MethodParams, PathSpec, ResolvedExperiment, DEFAULT_DYSON_ORDER,
    DEFAULT_PATH_STEPS,
};
pub use convergence::{
    convergence_study, plot_data, ConvergenceConfig, ConvergenceFit, ConvergenceReport, ConvergenceRow,
};
pub use golden::{golden_cases, run_golden, GoldenCase, GoldenOutcome, GoldenReport, Tolerance};
pub use report::{
    relative_error, resolve_output, rows_to_csv, sibling, table_to_csv, to_json, write_atomic, ReportRow, CSV_COLUMNS,
    OUT_DIR_ENV,
};

use crate::bte::{backward_sweep, gamma_coefficient, BteConfig};
use crate::builtin::{self, Builtin};
use crate::dyson::dyson_evaluate;
use crate::error::{Error, Result};
use crate::exact::{self, Rational};
use crate::functional::WienerFunctional;
use crate::kernel::PathPrefix;
use crate::oracle::{gaussian_moment_expectation, mc_conditional_expectation};

/// JSON schema for every report this module writes.
pub const REPORT_SCHEMA: &str = include_str!("../../../../schemas/report.schema.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: String,
    pub rows: Vec<ReportRow>,
    /// Method-specific detail: the Dyson partial sums, the MC estimate, the BTE setup.
    pub diagnostics: serde_json::Value,
}

/// Prefixes a downstream error with the method that raised it.
fn in_method(method: Method, e: Error) -> Error {
    let tag = |m: String| format!("{}: {m}", method.name());
    match e {
        Error::Domain(m) => Error::Domain(tag(m)),
        Error::Usage(m) => Error::Usage(tag(m)),
        Error::NumericOverflow(m) => Error::NumericOverflow(tag(m)),
        Error::Resource { stage, terms, cap } => Error::Resource {
            stage: tag(stage),
            terms,
            cap,
        },
        Error::Unsupported(m) => Error::Unsupported(tag(m)),
        Error::Analysis(m) => Error::Analysis(tag(m)),
        Error::Parse(m) => Error::Parse(tag(m)),
        Error::Io(m) => Error::Io(tag(m)),
        e @ Error::Config { .. } => e,
    }
}

/// The closed form for the two worked examples, otherwise the moment oracle when it applies.
fn reference_value(r: &ResolvedExperiment) -> Option<(f64, &'static str)> {
    match (r.builtin, &r.tau) {
        (Some(Builtin::Example1), Some(tau)) => Some((
            builtin::example1_conditional(tau, &r.t, r.path.end_value()),
            "closed-form",
        )),
        (Some(Builtin::Example2), _) => Some((builtin::example2_conditional(&r.horizon, &r.path), "closed-form")),
        _ if r.method == Method::MomentOracle => None,
        _ => gaussian_moment_expectation(&r.functional, &r.t, r.path.end_value())
            .ok()
            .map(|v| (v, "moment-oracle")),
    }
}

fn default_label(cfg: &ExperimentConfig, method: Method) -> String {
    let name = match &cfg.functional {
        Some(FunctionalSpec::Builtin(n)) => n.clone(),
        _ => "functional".to_string(),
    };
    format!("{name}-{}", method.name())
}

/// Runs one config. Wall time is recorded only when `timing` is set, so that
/// untimed reports are reproducible byte for byte.
pub fn run_experiment(cfg: &ExperimentConfig, timing: bool) -> Result<ExperimentReport> {
    let r = cfg.resolve()?;
    let start = Instant::now();
    let tagged = |e| in_method(r.method, e);
    let (value, std_error, diagnostics) = match &r.method_params {
        MethodParams::Bte {
            order,
            steps,
            delta,
            increments,
        } => {
            let mut bc = BteConfig::frozen(*steps, delta.clone(), *order);
            if let Some(inc) = increments {
                bc = bc.with_increments(inc.clone());
            }
            let v = backward_sweep(&r.functional, &bc, &r.path).map_err(tagged)?;
            let diag = serde_json::json!({
                "steps": steps,
                "delta": exact::format_rational(delta),
                "order": order,
                "path_choice": if increments.is_some() { "increments" } else { "frozen" },
            });
            (v, None, diag)
        }
        MethodParams::Dyson { order, tol } => {
            let rep = dyson_evaluate(&r.functional, &r.t, &r.path, *order, *tol).map_err(tagged)?;
            (
                rep.value(),
                None,
                serde_json::to_value(&rep).expect("dyson report serializes"),
            )
        }
        MethodParams::Mc(mc) => {
            let est = mc_conditional_expectation(&r.functional, &r.path, mc).map_err(tagged)?;
            (
                est.mean,
                Some(est.std_error),
                serde_json::to_value(&est).expect("estimate serializes"),
            )
        }
        MethodParams::MomentOracle => {
            let v = gaussian_moment_expectation(&r.functional, &r.t, r.path.end_value()).map_err(tagged)?;
            (v, None, serde_json::Value::Null)
        }
    };
    let elapsed = start.elapsed().as_secs_f64() * 1e3;

    let label = cfg.label.clone().unwrap_or_else(|| default_label(cfg, r.method));
    let params = serde_json::to_value(cfg).expect("config serializes");
    let mut row = ReportRow::new(label, r.method.name(), params, value);
    if let Some((reference, kind)) = reference_value(&r) {
        row = row.with_reference(reference, kind);
    }
    row.std_error = std_error;
    if timing {
        row.wall_time_ms = Some(elapsed);
    }
    Ok(ExperimentReport {
        kind: "experiment".into(),
        rows: vec![row],
        diagnostics,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub k: usize,
    pub term: f64,
    pub partial_sum: f64,
    /// `|term_k| / |term_{k-1}|`, absent when the previous term vanishes.
    pub ratio: Option<f64>,
    pub sign: i8,
}

fn sign_of(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Per-order Dyson terms, partial sums and successive ratios for orders `0..=K`.
pub fn dyson_term_profile(
    f: &WienerFunctional,
    t: &Rational,
    path: &PathPrefix,
    max_order: usize,
) -> Result<Vec<ProfileRow>> {
    let rep = dyson_evaluate(f, t, path, max_order, None)?;
    Ok(rep
        .term_values
        .iter()
        .zip(&rep.partial_sums)
        .enumerate()
        .map(|(k, (&term, &partial_sum))| {
            let ratio = (k > 0 && rep.term_values[k - 1] != 0.0).then(|| term.abs() / rep.term_values[k - 1].abs());
            ProfileRow {
                k,
                term,
                partial_sum,
                ratio,
                sign: sign_of(term),
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub kind: String,
    pub params: serde_json::Value,
    pub rows: Vec<ProfileRow>,
}

impl ProfileReport {
    pub fn new(params: serde_json::Value, rows: Vec<ProfileRow>) -> Self {
        ProfileReport {
            kind: "dyson-profile".into(),
            params,
            rows,
        }
    }
}

pub fn profile_to_csv(rows: &[ProfileRow]) -> Result<String> {
    let records: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.k.to_string(),
                r.term.to_string(),
                r.partial_sum.to_string(),
                r.ratio.map(|x| x.to_string()).unwrap_or_default(),
                r.sign.to_string(),
            ]
        })
        .collect();
    table_to_csv(&["k", "term", "partial_sum", "ratio", "sign"], &records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaRow {
    pub order: usize,
    pub polynomial: String,
    /// `Γ_l(δ, 0)` as `coefficient · δ^delta_power`.
    pub frozen_coefficient: String,
    pub frozen_delta_power: u32,
    /// `Γ_l(δ, 0)` at the requested step, when one was given.
    pub frozen_value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaReport {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<String>,
    pub rows: Vec<GammaRow>,
}

impl GammaReport {
    pub fn new(max_order: usize, delta: Option<&Rational>) -> Self {
        GammaReport {
            kind: "gamma".into(),
            delta: delta.map(exact::format_rational),
            rows: gamma_table(max_order, delta),
        }
    }
}

/// The γ polynomials for orders `0..=max_order`.
pub fn gamma_table(max_order: usize, delta: Option<&Rational>) -> Vec<GammaRow> {
    (0..=max_order)
        .map(|l| {
            let g = gamma_coefficient(l);
            let power = (l / 2) as u32;
            let coefficient = g.coefficient(power, 0);
            GammaRow {
                order: l,
                polynomial: g.to_string(),
                frozen_coefficient: exact::format_rational(&coefficient),
                frozen_delta_power: power,
                frozen_value: delta.map(|d| exact::to_f64(&g.evaluate_exact(d, &exact::int(0)))),
            }
        })
        .collect()
}
