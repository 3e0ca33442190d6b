//! Conditional expectations from the time-ordered exponential
//!
//! ```text
//! E[F | F_t] = Σ_k (1/2)^k ∫_{t <= s_1 <= ... <= s_k <= T} D²_{s_1}···D²_{s_k} F(ω^t) ds
//! ```
//!
//! Each order is built symbolically, the Gaussian integrals are frozen along the
//! prefix, and the time-ordered integral over the simplex is done exactly on the
//! product-form time coefficients, innermost variable first.

use std::collections::BTreeMap;

use num_traits::One;
use serde::Serialize;

use crate::bte::DEFAULT_TERM_CAP;
use crate::error::{Error, Result};
use crate::exact::Rational;
use crate::functional::WienerFunctional;
use crate::kernel::{PathPrefix, PiecewisePolynomial};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    ReachedK,
    ToleranceMet,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DysonReport {
    pub truncation_order: usize,
    pub term_values: Vec<f64>,
    pub partial_sums: Vec<f64>,
    pub stop_reason: StopReason,
    pub tolerance_used: Option<f64>,
}

impl DysonReport {
    pub fn value(&self) -> f64 {
        *self
            .partial_sums
            .last()
            .expect("a report holds at least the frozen value")
    }
}

/// `∫_{t <= s_k <= ... <= s_1 <= T} φ_1(s_1)···φ_k(s_k) ds`, where `factors[0]`
/// belongs to the largest time.
pub fn simplex_integral(factors: &[PiecewisePolynomial], t: &Rational) -> Result<Rational> {
    let Some(first) = factors.first() else {
        return Ok(Rational::one());
    };
    let mut inner = PiecewisePolynomial::one(first.horizon())?;
    for phi in factors {
        inner = phi.multiply(&inner)?.tail_integral();
    }
    inner.value_at(t)
}

/// Successive orders `G_k = D²G_{k-1}` of the series for one functional.
///
/// The variable added at order `j` is named `u{j}`; since it is applied `j`-th,
/// it carries the `j`-th largest time in the ordered integral.
pub struct DysonSeries {
    current: WienerFunctional,
    order: usize,
    term_cap: usize,
}

impl DysonSeries {
    pub fn new(f: &WienerFunctional) -> Result<Self> {
        if !f.is_scalar() {
            return Err(Error::Usage(format!(
                "Dyson series needs a functional without free variables, got {:?}",
                f.free_vars()
            )));
        }
        Ok(DysonSeries {
            current: f.clone(),
            order: 0,
            term_cap: DEFAULT_TERM_CAP,
        })
    }

    pub fn with_term_cap(mut self, cap: usize) -> Self {
        self.term_cap = cap;
        self
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn current(&self) -> &WienerFunctional {
        &self.current
    }

    pub fn advance(&mut self) -> Result<()> {
        let var = format!("u{}", self.order + 1);
        let next = self.current.malliavin_derivative_power(&var, 2)?;
        if next.term_count() > self.term_cap {
            return Err(Error::Resource {
                stage: format!("Dyson order {}", self.order + 1),
                terms: next.term_count(),
                cap: self.term_cap,
            });
        }
        self.current = next;
        self.order += 1;
        Ok(())
    }

    /// Value of the current order's term along the prefix.
    pub fn term_value(&self, path: &PathPrefix) -> Result<f64> {
        if self.order == 0 {
            return self.current.freeze_evaluate(path, &BTreeMap::new());
        }
        let t = path.end_time();
        let z = self.current.frozen_integrals_exact(path)?;
        let mut simplex: BTreeMap<&[PiecewisePolynomial], Rational> = BTreeMap::new();
        let mut weights = Vec::with_capacity(self.current.term_count());
        for term in self.current.terms() {
            let volume = match simplex.get(term.time_factors.as_slice()) {
                Some(v) => v.clone(),
                None => {
                    let v = simplex_integral(&term.time_factors, t)?;
                    simplex.insert(&term.time_factors, v.clone());
                    v
                }
            };
            weights.push(&term.coefficient * volume);
        }
        let value = self.current.weighted_exact_sum(&weights, &z)? * 0.5f64.powi(self.order as i32);
        if !value.is_finite() {
            return Err(Error::NumericOverflow(format!(
                "Dyson term of order {} is {value}",
                self.order
            )));
        }
        Ok(value)
    }
}

fn check_time(t: &Rational, path: &PathPrefix) -> Result<()> {
    if t != path.end_time() {
        return Err(Error::Usage(format!(
            "path ends at {} but the expectation is requested at {t}",
            path.end_time()
        )));
    }
    Ok(())
}

/// The order-`k` term of the series on its own.
pub fn dyson_term(f: &WienerFunctional, t: &Rational, path: &PathPrefix, k: usize) -> Result<f64> {
    check_time(t, path)?;
    let mut series = DysonSeries::new(f)?;
    for _ in 0..k {
        series.advance()?;
        if series.current().is_zero() {
            return Ok(0.0);
        }
    }
    series.term_value(path)
}

/// Accumulates orders `0..=K`. With a tolerance, stops once two consecutive
/// terms fall below `tol · max(1, |partial sum|)`.
pub fn dyson_evaluate(
    f: &WienerFunctional,
    t: &Rational,
    path: &PathPrefix,
    max_order: usize,
    tol: Option<f64>,
) -> Result<DysonReport> {
    dyson_evaluate_capped(f, t, path, max_order, tol, DEFAULT_TERM_CAP)
}

pub fn dyson_evaluate_capped(
    f: &WienerFunctional,
    t: &Rational,
    path: &PathPrefix,
    max_order: usize,
    tol: Option<f64>,
    term_cap: usize,
) -> Result<DysonReport> {
    check_time(t, path)?;
    if let Some(tol) = tol {
        if !(tol >= 0.0) {
            return Err(Error::Domain(format!("tolerance {tol} must be non-negative")));
        }
    }
    let mut series = DysonSeries::new(f)?.with_term_cap(term_cap);
    let mut term_values = Vec::with_capacity(max_order + 1);
    let mut partial_sums = Vec::with_capacity(max_order + 1);
    let mut stop_reason = StopReason::ReachedK;
    let mut sum = 0.0;
    for k in 0..=max_order {
        if k > 0 {
            series.advance()?;
        }
        let term = if series.current().is_zero() {
            0.0
        } else {
            series.term_value(path)?
        };
        sum += term;
        term_values.push(term);
        partial_sums.push(sum);
        if let Some(tol) = tol {
            let small = |x: f64| x.abs() < tol * sum.abs().max(1.0);
            if k >= 1 && small(term) && small(term_values[k - 1]) {
                if k < max_order {
                    stop_reason = StopReason::ToleranceMet;
                }
                break;
            }
        }
    }
    Ok(DysonReport {
        truncation_order: max_order,
        term_values,
        partial_sums,
        stop_reason,
        tolerance_used: tol,
    })
}

/// The path-dependent PDE solution `v(t, x_t)` for `X = W`, read off the series.
pub fn ppde_evaluate(g: &WienerFunctional, t: &Rational, path: &PathPrefix, max_order: usize) -> Result<f64> {
    Ok(dyson_evaluate(g, t, path, max_order, None)?.value())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VerticalCheck {
    pub finite_difference: f64,
    pub malliavin: f64,
}

impl VerticalCheck {
    /// `|finite_difference - malliavin| / max(1, |malliavin|)`.
    pub fn discrepancy(&self) -> f64 {
        (self.finite_difference - self.malliavin).abs() / self.malliavin.abs().max(1.0)
    }
}

/// Compares the `l`-th vertical derivative of the PDE solution (central finite
/// differences over endpoint bumps `±h`) with the series for `D_t^l G`.
pub fn vertical_derivative_check(
    g: &WienerFunctional,
    t: &Rational,
    path: &PathPrefix,
    order: usize,
    h: f64,
    max_order: usize,
) -> Result<VerticalCheck> {
    if !(1..=2).contains(&order) {
        return Err(Error::Domain(format!(
            "vertical derivative order {order} must be 1 or 2"
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Domain(format!("bump size {h} must be positive")));
    }
    let base = path.endpoint_jump();
    let bumped = |shift: f64| {
        let p = path.clone().with_endpoint_jump(base + shift);
        ppde_evaluate(g, t, &p, max_order)
    };
    let up = bumped(h)?;
    let down = bumped(-h)?;
    let finite_difference = if order == 1 {
        (up - down) / (2.0 * h)
    } else {
        (up - 2.0 * ppde_evaluate(g, t, path, max_order)? + down) / (h * h)
    };
    let derivative = g.malliavin_at_time(order, t)?;
    let malliavin = ppde_evaluate(&derivative, t, path, max_order)?;
    Ok(VerticalCheck {
        finite_difference,
        malliavin,
    })
}
