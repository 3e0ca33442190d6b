use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use malliavin_core::exact::parse_rational;
use malliavin_core::harness::{
    self, dyson_term_profile, golden_cases, plot_data, profile_to_csv, resolve_output, rows_to_csv, run_experiment,
    run_golden, sibling, to_json, write_atomic, ConvergenceConfig, ExperimentConfig, FunctionalSpec, GammaReport,
    McSpec, Method, PathSpec, ProfileReport,
};
use malliavin_core::{Error, Result, WienerFunctional};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_GOLDEN: u8 = 4;

/// Conditional expectations of smooth Brownian functionals.
#[derive(Parser)]
#[command(name = "malliavin", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the γ polynomials and their frozen values.
    Gamma(Common),
    /// Backward Taylor expansion sweep.
    Bte(Common),
    /// Dyson series for the conditional expectation.
    Dyson {
        #[command(flatten)]
        common: Common,
        /// Also write the per-order term profile.
        #[arg(long)]
        profile: bool,
    },
    /// Monte Carlo reference.
    Mc(Common),
    /// Exact Gaussian-moment reference.
    Oracle(Common),
    /// One-step mean-square error against the step size, with fitted slopes.
    Convergence(Common),
    /// Run every worked example against its tolerance.
    Golden {
        #[command(flatten)]
        common: Common,
        /// Run the cases concurrently.
        #[arg(long)]
        parallel: bool,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in name (example1, example2, monomial(n), expW) or a functional JSON file.
    #[arg(long)]
    functional: Option<String>,
    #[arg(long = "t")]
    t: Option<String>,
    #[arg(long = "T")]
    horizon: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    /// Truncation order; a comma-separated list for `convergence`, the highest order for `gamma`.
    #[arg(long = "L")]
    order: Option<String>,
    #[arg(long = "M")]
    steps: Option<usize>,
    /// Step size; a comma-separated list for `convergence`.
    #[arg(long)]
    delta: Option<String>,
    #[arg(long = "K")]
    dyson_order: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Monte Carlo samples, or draws for `convergence`.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// zero | linear[:end] | seeded-random:<seed> | inline:<t>=<w>,...
    #[arg(long)]
    path: Option<String>,
    /// Report path; CSV and plot files are written next to it.
    #[arg(long)]
    out: Option<String>,
    /// Record wall time in the report rows.
    #[arg(long)]
    timing: bool,
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))
}

fn functional_spec(text: &str) -> Result<FunctionalSpec> {
    if text.ends_with(".json") {
        let f = WienerFunctional::from_text(&read_file(Path::new(text))?)
            .map_err(|e| Error::config("functional", e.to_string()))?;
        Ok(FunctionalSpec::Dsl(Box::new(f)))
    } else {
        Ok(FunctionalSpec::Builtin(text.to_string()))
    }
}

fn parse_order(text: &str) -> Result<usize> {
    text.trim()
        .parse()
        .map_err(|_| Error::config("L", format!("`{text}` is not a non-negative integer")))
}

fn experiment_config(c: &Common, method: Method) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::from_json(&read_file(p)?)?,
        None => ExperimentConfig::default(),
    };
    cfg.method = Some(method);
    if let Some(f) = &c.functional {
        cfg.functional = Some(functional_spec(f)?);
    }
    if c.t.is_some() {
        cfg.t = c.t.clone();
    }
    if c.horizon.is_some() {
        cfg.horizon = c.horizon.clone();
    }
    if c.tau.is_some() {
        cfg.tau = c.tau.clone();
    }
    if let Some(l) = &c.order {
        cfg.order = Some(parse_order(l)?);
    }
    if c.steps.is_some() {
        cfg.steps = c.steps;
    }
    if c.delta.is_some() {
        cfg.delta = c.delta.clone();
    }
    if c.dyson_order.is_some() {
        cfg.dyson_order = c.dyson_order;
    }
    if c.tol.is_some() {
        cfg.tol = c.tol;
    }
    if c.n.is_some() || c.seed.is_some() {
        let mut mc = cfg.mc.clone().unwrap_or(McSpec {
            n: 0,
            seed: 0,
            grid_steps: 16,
            antithetic: false,
        });
        if let Some(n) = c.n {
            mc.n = n;
        }
        if let Some(s) = c.seed {
            mc.seed = s;
        }
        cfg.mc = Some(mc);
    }
    if let Some(p) = &c.path {
        cfg.path = Some(PathSpec::parse_flag(p)?);
    }
    if c.out.is_some() {
        cfg.output = c.out.clone();
    }
    Ok(cfg)
}

/// Writes the JSON report (and its CSV sibling) or prints the JSON when no output is configured.
fn emit(json: &str, csv: Option<&str>, requested: Option<&str>, default_name: &str) -> Result<Option<PathBuf>> {
    match resolve_output(requested, default_name) {
        Some(path) => {
            write_atomic(&path, json.as_bytes())?;
            if let Some(csv) = csv {
                write_atomic(&sibling(&path, None, "csv"), csv.as_bytes())?;
            }
            println!("wrote {}", path.display());
            Ok(Some(path))
        }
        None => {
            print!("{json}");
            Ok(None)
        }
    }
}

fn run_method(c: &Common, method: Method, profile: bool) -> Result<()> {
    let cfg = experiment_config(c, method)?;
    let report = run_experiment(&cfg, c.timing)?;
    let row = &report.rows[0];
    eprintln!(
        "{}: value = {}{}",
        row.label,
        row.value,
        match (row.reference, row.rel_error) {
            (Some(r), Some(e)) => format!(", reference = {r}, rel error = {e:e}"),
            _ => String::new(),
        }
    );
    let default_name = format!("{}.json", row.label);
    let written = emit(
        &to_json(&report),
        Some(&rows_to_csv(&report.rows)?),
        cfg.output.as_deref(),
        &default_name,
    )?;
    if profile {
        let r = cfg.resolve()?;
        let k = match r.method_params {
            harness::MethodParams::Dyson { order, .. } => order,
            _ => unreachable!("profile is only offered for dyson"),
        };
        let rows = dyson_term_profile(&r.functional, &r.t, &r.path, k)?;
        let csv = profile_to_csv(&rows)?;
        let prof = ProfileReport::new(serde_json::to_value(&cfg).expect("config serializes"), rows);
        match written {
            Some(path) => {
                let p = sibling(&path, Some("profile"), "json");
                write_atomic(&p, to_json(&prof).as_bytes())?;
                write_atomic(&sibling(&path, Some("profile"), "csv"), csv.as_bytes())?;
                println!("wrote {}", p.display());
            }
            None => print!("{}", to_json(&prof)),
        }
    }
    Ok(())
}

fn run_gamma(c: &Common) -> Result<()> {
    let max_order = c.order.as_deref().map(parse_order).transpose()?.unwrap_or(6);
    let delta = c
        .delta
        .as_deref()
        .map(|d| parse_rational(d).map_err(|e| Error::config("delta", e.to_string())))
        .transpose()?;
    let report = GammaReport::new(max_order, delta.as_ref());
    for r in &report.rows {
        let frozen = match (r.frozen_coefficient.as_str(), r.frozen_delta_power) {
            ("0", _) => "0".to_string(),
            (c, 0) => c.to_string(),
            (c, 1) => format!("{c} δ"),
            (c, p) => format!("{c} δ^{p}"),
        };
        eprintln!("Γ_{} = {}    frozen: {frozen}", r.order, r.polynomial);
    }
    emit(&to_json(&report), None, c.out.as_deref(), "gamma.json")?;
    Ok(())
}

fn run_convergence(c: &Common) -> Result<()> {
    let mut cfg = match &c.config {
        Some(p) => ConvergenceConfig::from_json(&read_file(p)?)?,
        None => ConvergenceConfig {
            functional: FunctionalSpec::Builtin("expW".into()),
            horizon: "1".into(),
            orders: vec![1, 2, 3],
            deltas: (3..=7).map(|k| format!("1/{}", 1u32 << k)).collect(),
            draws: 10_000,
            seed: 1,
            output: None,
        },
    };
    if let Some(f) = &c.functional {
        cfg.functional = functional_spec(f)?;
    }
    if let Some(h) = &c.horizon {
        cfg.horizon = h.clone();
    }
    if let Some(l) = &c.order {
        cfg.orders = l.split(',').map(parse_order).collect::<Result<_>>()?;
    }
    if let Some(d) = &c.delta {
        cfg.deltas = d.split(',').map(|s| s.trim().to_string()).collect();
    }
    if let Some(n) = c.n {
        cfg.draws = n;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if c.out.is_some() {
        cfg.output = c.out.clone();
    }
    let report = cfg.run()?;
    for fit in &report.fits {
        match fit.slope {
            Some(s) => eprintln!(
                "L = {}: slope {s:.3} (expected {}), R² = {:.4}",
                fit.order,
                fit.expected_slope,
                fit.r_squared.unwrap_or(f64::NAN)
            ),
            None => eprintln!("L = {}: exact (mean-square error at machine precision)", fit.order),
        }
    }
    if let Some(path) = emit(
        &to_json(&report),
        Some(&report.to_csv()?),
        cfg.output.as_deref(),
        "convergence.json",
    )? {
        for fit in &report.fits {
            let p = sibling(&path, Some(&format!("L{}", fit.order)), "dat");
            write_atomic(&p, plot_data(&report, fit.order)?.as_bytes())?;
        }
    }
    Ok(())
}

/// Returns whether every case met its tolerance.
fn run_golden_cmd(c: &Common, parallel: bool) -> Result<bool> {
    let report = run_golden(&golden_cases(), parallel)?;
    for o in &report.outcomes {
        eprintln!(
            "{} {}: value = {}, reference = {}, measure = {:e}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.row.value,
            o.row.reference.unwrap_or(f64::NAN),
            o.measure
        );
    }
    let rows: Vec<_> = report.outcomes.iter().map(|o| o.row.clone()).collect();
    emit(
        &to_json(&report),
        Some(&rows_to_csv(&rows)?),
        c.out.as_deref(),
        "golden.json",
    )?;
    Ok(report.passed)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Parse(_) | Error::Usage(_) => EXIT_CONFIG,
        Error::Io(_) => 1,
        _ => EXIT_NUMERIC,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gamma(c) => run_gamma(c).map(|_| true),
        Command::Bte(c) => run_method(c, Method::Bte, false).map(|_| true),
        Command::Dyson { common, profile } => run_method(common, Method::Dyson, *profile).map(|_| true),
        Command::Mc(c) => run_method(c, Method::Mc, false).map(|_| true),
        Command::Oracle(c) => run_method(c, Method::MomentOracle, false).map(|_| true),
        Command::Convergence(c) => run_convergence(c).map(|_| true),
        Command::Golden { common, parallel } => run_golden_cmd(common, *parallel),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_GOLDEN),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
