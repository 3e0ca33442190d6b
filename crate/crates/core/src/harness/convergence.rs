use std::collections::BTreeMap;

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use super::config::FunctionalSpec;
use crate::bte::gamma_evaluate;
use crate::builtin::parse_builtin;
use crate::error::{Error, Result};
use crate::exact::{self, parse_rational, Rational};
use crate::functional::{CompiledFunctional, WienerFunctional};
use crate::kernel::StieltjesWeights;
use crate::oracle::{gaussian_moment_expectation, NormalStream};

/// MSE values below `(EXACT_RMS · max(1, |ref|))²` count as zero.
const EXACT_RMS: f64 = 1e-12;
const MIN_FIT_POINTS: usize = 4;

/// A convergence study as written in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub functional: FunctionalSpec,
    #[serde(rename = "T", default = "one")]
    pub horizon: String,
    pub orders: Vec<usize>,
    pub deltas: Vec<String>,
    pub draws: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

fn one() -> String {
    "1".into()
}

impl ConvergenceConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn run(&self) -> Result<ConvergenceReport> {
        let horizon = parse_rational(&self.horizon).map_err(|e| Error::config("T", e.to_string()))?;
        let f = match &self.functional {
            FunctionalSpec::Builtin(name) => parse_builtin(name)?
                .build(&horizon, None)
                .map_err(|e| Error::config("functional", e.to_string()))?,
            FunctionalSpec::Dsl(f) => (**f).clone(),
        };
        let deltas = self
            .deltas
            .iter()
            .map(|d| parse_rational(d).map_err(|e| Error::config("deltas", e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        if self.orders.is_empty() {
            return Err(Error::config("orders", "need at least one order"));
        }
        if self.draws == 0 {
            return Err(Error::config("draws", "need at least one draw"));
        }
        convergence_study(&f, &self.orders, &deltas, self.draws, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub order: usize,
    pub delta: String,
    pub mse: f64,
    pub reference: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceFit {
    pub order: usize,
    pub expected_slope: f64,
    /// Least-squares slope of log MSE against log Δ; absent when the scheme is exact.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
    pub exact: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub kind: String,
    pub draws: usize,
    pub seed: u64,
    pub rows: Vec<ConvergenceRow>,
    pub fits: Vec<ConvergenceFit>,
}

/// Derivatives `D^l_T F`, compiled, with the Stieltjes weights of their basis on one grid.
struct Ladder {
    compiled: Vec<CompiledFunctional>,
    derivatives: Vec<WienerFunctional>,
}

impl Ladder {
    fn new(f: &WienerFunctional, max_order: usize) -> Result<Self> {
        let horizon = f.horizon().clone();
        let mut derivatives = vec![f.clone()];
        for _ in 0..max_order {
            let next = derivatives.last().expect("non-empty").malliavin_at_time(1, &horizon)?;
            derivatives.push(next);
        }
        let compiled = derivatives
            .iter()
            .map(|d| d.compile(&BTreeMap::new()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Ladder { compiled, derivatives })
    }

    fn weights(&self, times: &[Rational]) -> Result<Vec<Vec<StieltjesWeights>>> {
        self.derivatives
            .iter()
            .map(|d| {
                d.basis()
                    .iter()
                    .map(|z| StieltjesWeights::new(z.kernel(), times))
                    .collect()
            })
            .collect()
    }
}

/// Least squares `y = a + b x`: `(slope, intercept, R²)`.
fn fit_line(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (slope, intercept, r2)
}

/// One-step mean-square error of the order-`L` expansion over `[T - Δ, T]`.
///
/// The prefix is the zero path up to `T - Δ`; each draw takes `ΔW ~ N(0, Δ)`
/// (draw `i` uses normal `i` of the seeded stream for every Δ) and compares
/// `Σ_{l<=L} Γ_l(Δ, ΔW) · D^l_T F` on the extended path against the moment oracle.
pub fn convergence_study(
    f: &WienerFunctional,
    orders: &[usize],
    deltas: &[Rational],
    draws: usize,
    seed: u64,
) -> Result<ConvergenceReport> {
    let horizon = f.horizon().clone();
    for d in deltas {
        if d <= &Rational::zero() || d >= &exact::int(1) || d > &horizon {
            return Err(Error::Domain(format!(
                "step {d} must lie in (0, 1) and not exceed T = {horizon}"
            )));
        }
    }
    let max_order = orders.iter().copied().max().unwrap_or(0);
    let ladder = Ladder::new(f, max_order)?;
    let stream = NormalStream::new(seed);

    let mut rows = Vec::new();
    let mut mse_by_order: BTreeMap<usize, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for delta in deltas {
        let t = &horizon - delta;
        let reference = gaussian_moment_expectation(f, &t, 0.0)?;
        let times: Vec<Rational> = if t.is_zero() {
            vec![t.clone(), horizon.clone()]
        } else {
            vec![Rational::zero(), t.clone(), horizon.clone()]
        };
        let weights = ladder.weights(&times)?;
        let d = exact::to_f64(delta);
        let sd = d.sqrt();
        let mut sums = vec![0.0; orders.len()];
        let mut values = vec![0.0; times.len()];
        let mut derivative_values = vec![0.0; max_order + 1];
        for i in 0..draws as u64 {
            let x = sd * stream.normal(i, 0);
            *values.last_mut().expect("grid ends at T") = x;
            for (l, (c, w)) in ladder.compiled.iter().zip(&weights).enumerate() {
                let z: Vec<f64> = w.iter().map(|w| w.apply(&values, 0.0)).collect();
                derivative_values[l] = c.value(&z);
            }
            let mut partial = 0.0;
            let mut by_order = vec![0.0; max_order + 1];
            for (l, dv) in derivative_values.iter().enumerate() {
                partial += gamma_evaluate(l, d, x) * dv;
                by_order[l] = partial;
            }
            for (s, &order) in sums.iter_mut().zip(orders) {
                *s += (reference - by_order[order]).powi(2);
            }
        }
        for (s, &order) in sums.iter().zip(orders) {
            let mse = s / draws as f64;
            rows.push(ConvergenceRow {
                order,
                delta: exact::format_rational(delta),
                mse,
                reference,
            });
            mse_by_order.entry(order).or_default().push((d, mse, reference));
        }
    }

    let mut fits = Vec::new();
    for &order in orders {
        let points = &mse_by_order[&order];
        let exact_scheme = points
            .iter()
            .all(|&(_, mse, r)| mse <= (EXACT_RMS * r.abs().max(1.0)).powi(2));
        if exact_scheme {
            fits.push(ConvergenceFit {
                order,
                expected_slope: (order + 1) as f64,
                slope: None,
                intercept: None,
                r_squared: None,
                exact: true,
            });
            continue;
        }
        let logs: Vec<(f64, f64)> = points
            .iter()
            .filter(|&&(_, mse, _)| mse.is_finite() && mse > 0.0)
            .map(|&(d, mse, _)| (d.ln(), mse.ln()))
            .collect();
        if logs.len() < MIN_FIT_POINTS {
            return Err(Error::Analysis(format!(
                "order {order}: {} finite positive MSE points, need {MIN_FIT_POINTS}",
                logs.len()
            )));
        }
        let (slope, intercept, r2) = fit_line(&logs);
        fits.push(ConvergenceFit {
            order,
            expected_slope: (order + 1) as f64,
            slope: Some(slope),
            intercept: Some(intercept),
            r_squared: Some(r2),
            exact: false,
        });
    }
    Ok(ConvergenceReport {
        kind: "convergence".into(),
        draws,
        seed,
        rows,
        fits,
    })
}

/// Two whitespace-separated columns `log Δ  log MSE` for one order.
pub fn plot_data(report: &ConvergenceReport, order: usize) -> Result<String> {
    let mut out = String::from("# log_delta log_mse\n");
    for r in report.rows.iter().filter(|r| r.order == order) {
        let d = exact::to_f64(&parse_rational(&r.delta)?);
        out.push_str(&format!("{} {}\n", d.ln(), r.mse.ln()));
    }
    Ok(out)
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> Result<String> {
        let records: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.order.to_string(),
                    r.delta.clone(),
                    r.mse.to_string(),
                    r.reference.to_string(),
                ]
            })
            .collect();
        super::report::table_to_csv(&["order", "delta", "mse", "reference"], &records)
    }
}
