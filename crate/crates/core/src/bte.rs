//! Discrete backward Taylor expansion of conditional expectations.
//!
//! Over one step of length `Δ` ending at `τ`, with path increment `ΔW` over that
//! step,
//!
//! ```text
//! E[F | F_{τ-Δ}] ≈ Σ_{l=0}^{L} Γ_l(Δ, ΔW) · D_τ^l F
//! ```
//!
//! where the coefficients `Γ_l` are universal polynomials in `(Δ, ΔW)`. The
//! approximation is exact when `D_τ^l F = 0` for `l > L`, whatever increment is
//! used. Applying the step from the horizon back to `t` gives the multi-step
//! sweep.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};
use crate::exact::{self, Rational};
use crate::functional::WienerFunctional;
use crate::kernel::PathPrefix;

pub const DEFAULT_TERM_CAP: usize = 1_000_000;

/// `Γ_l(δ, x)` as an exact bivariate polynomial, keyed by `(power of δ, power of x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaPolynomial {
    order: usize,
    coefficients: BTreeMap<(u32, u32), Rational>,
    float_terms: Vec<(i32, i32, f64)>,
}

impl GammaPolynomial {
    fn new(order: usize, coefficients: BTreeMap<(u32, u32), Rational>) -> Self {
        let coefficients: BTreeMap<_, _> = coefficients.into_iter().filter(|(_, c)| !c.is_zero()).collect();
        let float_terms = coefficients
            .iter()
            .map(|(&(dp, xp), c)| (dp as i32, xp as i32, exact::to_f64(c)))
            .collect();
        GammaPolynomial {
            order,
            coefficients,
            float_terms,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Coefficient of `δ^delta_power · x^x_power`.
    pub fn coefficient(&self, delta_power: u32, x_power: u32) -> Rational {
        self.coefficients
            .get(&(delta_power, x_power))
            .cloned()
            .unwrap_or_else(Rational::zero)
    }

    pub fn coefficients(&self) -> &BTreeMap<(u32, u32), Rational> {
        &self.coefficients
    }

    pub fn degree_in_x(&self) -> u32 {
        self.coefficients.keys().map(|&(_, xp)| xp).max().unwrap_or(0)
    }

    pub fn evaluate_exact(&self, delta: &Rational, x: &Rational) -> Rational {
        self.coefficients
            .iter()
            .map(|(&(dp, xp), c)| c * exact::pow(delta, dp as usize) * exact::pow(x, xp as usize))
            .sum()
    }

    pub fn evaluate(&self, delta: f64, x: f64) -> f64 {
        self.float_terms
            .iter()
            .map(|&(dp, xp, c)| c * delta.powi(dp) * x.powi(xp))
            .sum()
    }
}

impl fmt::Display for GammaPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.coefficients.is_empty() {
            return write!(f, "0");
        }
        // highest x power first, then highest delta power
        let mut ordered: Vec<_> = self.coefficients.iter().collect();
        ordered.sort_by_key(|(&(dp, xp), _)| std::cmp::Reverse((xp, dp)));
        let mut first = true;
        for (&(dp, xp), c) in ordered {
            let (sign, mag) = if c.is_negative() { ("-", -c) } else { ("+", c.clone()) };
            if first {
                if sign == "-" {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            first = false;
            let mut factors = Vec::new();
            if !mag.is_one() || (dp == 0 && xp == 0) {
                factors.push(mag.to_string());
            }
            match dp {
                0 => {}
                1 => factors.push("d".into()),
                p => factors.push(format!("d^{p}")),
            }
            match xp {
                0 => {}
                1 => factors.push("x".into()),
                p => factors.push(format!("x^{p}")),
            }
            write!(f, "{}", factors.join("*"))?;
        }
        Ok(())
    }
}

static GAMMA_CACHE: RwLock<Vec<Arc<GammaPolynomial>>> = RwLock::new(Vec::new());

fn next_gamma(lower: &[Arc<GammaPolynomial>]) -> GammaPolynomial {
    let order = lower.len();
    let mut coeffs: BTreeMap<(u32, u32), Rational> = BTreeMap::new();
    if order == 0 {
        coeffs.insert((0, 0), Rational::one());
        return GammaPolynomial::new(0, coeffs);
    }
    if order.is_multiple_of(2) {
        let half = order / 2;
        let c = exact::pow(&exact::rat(1, 2), half) / exact::factorial(half);
        coeffs.insert((half as u32, 0), c);
    }
    for (l, g) in lower.iter().enumerate() {
        let shift = (order - l) as u32;
        let denom = exact::factorial(order - l);
        for (&(dp, xp), c) in &g.coefficients {
            *coeffs.entry((dp, xp + shift)).or_insert_with(Rational::zero) -= c / &denom;
        }
    }
    GammaPolynomial::new(order, coeffs)
}

/// `Γ_l`, computed by the recursion
/// `Γ_L = 1{L even} (δ/2)^{L/2} / (L/2)! - Σ_{l<L} Γ_l x^{L-l} / (L-l)!` and cached.
pub fn gamma_coefficient(order: usize) -> Arc<GammaPolynomial> {
    {
        let cache = GAMMA_CACHE.read().unwrap_or_else(|e| e.into_inner());
        if let Some(g) = cache.get(order) {
            return Arc::clone(g);
        }
    }
    let mut cache = GAMMA_CACHE.write().unwrap_or_else(|e| e.into_inner());
    while cache.len() <= order {
        let g = next_gamma(&cache);
        cache.push(Arc::new(g));
    }
    Arc::clone(&cache[order])
}

pub fn gamma_evaluate(order: usize, delta: f64, increment: f64) -> f64 {
    gamma_coefficient(order).evaluate(delta, increment)
}

/// How the backward path moves over each step.
#[derive(Clone, Debug, PartialEq)]
pub enum ChosenPath {
    /// `ΔW = 0` on every step: the certainty-equivalent path.
    Frozen,
    /// One increment per step, earliest step first.
    Increments(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BteConfig {
    pub steps: usize,
    pub step: Rational,
    pub order: usize,
    pub path: ChosenPath,
    pub term_cap: usize,
}

impl BteConfig {
    pub fn frozen(steps: usize, step: Rational, order: usize) -> Self {
        BteConfig {
            steps,
            step,
            order,
            path: ChosenPath::Frozen,
            term_cap: DEFAULT_TERM_CAP,
        }
    }

    pub fn with_increments(mut self, increments: Vec<f64>) -> Self {
        self.path = ChosenPath::Increments(increments);
        self
    }

    pub fn with_term_cap(mut self, cap: usize) -> Self {
        self.term_cap = cap;
        self
    }

    /// Checks `M·Δ = T - t` exactly.
    pub fn validate(&self, t: &Rational, horizon: &Rational) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("M", "need at least one step"));
        }
        if self.step <= Rational::zero() {
            return Err(Error::config("delta", "step size must be positive"));
        }
        let span = exact::int(self.steps as i64) * &self.step;
        if span != horizon - t {
            return Err(Error::config(
                "delta",
                format!(
                    "M·Δ = {} · {} = {span} does not equal T - t = {}",
                    self.steps,
                    self.step,
                    horizon - t
                ),
            ));
        }
        if let ChosenPath::Increments(inc) = &self.path {
            if inc.len() != self.steps {
                return Err(Error::config(
                    "path",
                    format!("{} increments for {} steps", inc.len(), self.steps),
                ));
            }
            if inc.iter().any(|x| !x.is_finite()) {
                return Err(Error::config("path", "increments must be finite"));
            }
        }
        Ok(())
    }

    fn increment(&self, step_index: usize) -> f64 {
        match &self.path {
            ChosenPath::Frozen => 0.0,
            ChosenPath::Increments(inc) => inc[step_index],
        }
    }
}

/// One backward step: `Σ_{l<=L} Γ_l(Δ, ΔW) · D^l_{step_end} F`.
pub fn bte_step(
    f: &WienerFunctional,
    step_end: &Rational,
    step: &Rational,
    increment: f64,
    order: usize,
) -> Result<WienerFunctional> {
    let mut acc = WienerFunctional::constant(f.horizon().clone(), Rational::zero());
    let x = exact::from_f64(increment)?;
    let mut derivative = f.clone();
    for l in 0..=order {
        if l > 0 {
            derivative = derivative.malliavin_at_time(1, step_end)?;
        }
        if derivative.is_zero() {
            break;
        }
        let g = gamma_coefficient(l).evaluate_exact(step, &x);
        if !g.is_zero() {
            acc = acc.sum(&derivative.scale(&g))?;
        }
    }
    Ok(acc)
}

/// The symbolic functional left after sweeping from the horizon back to `t`.
pub fn backward_functional(f: &WienerFunctional, cfg: &BteConfig, t: &Rational) -> Result<WienerFunctional> {
    if !f.is_scalar() {
        return Err(Error::Usage(format!(
            "backward sweep needs a functional without free variables, got {:?}",
            f.free_vars()
        )));
    }
    cfg.validate(t, f.horizon())?;
    let mut g = f.clone();
    for k in (1..=cfg.steps).rev() {
        let step_end = t + exact::int(k as i64) * &cfg.step;
        g = bte_step(&g, &step_end, &cfg.step, cfg.increment(k - 1), cfg.order)?;
        if g.term_count() > cfg.term_cap {
            return Err(Error::Resource {
                stage: format!("backward step {k} (ending at {step_end})"),
                terms: g.term_count(),
                cap: cfg.term_cap,
            });
        }
    }
    Ok(g)
}

/// Approximates `E[F | F_t]` on the given prefix by `M` backward steps.
///
/// With the frozen path choice the final functional is evaluated on `ω^t`;
/// otherwise on the prefix extended by the chosen increments.
pub fn backward_sweep(f: &WienerFunctional, cfg: &BteConfig, path: &PathPrefix) -> Result<f64> {
    let t = path.end_time().clone();
    let g = backward_functional(f, cfg, &t)?;
    match &cfg.path {
        ChosenPath::Frozen => g.freeze_evaluate(path, &BTreeMap::new()),
        ChosenPath::Increments(inc) => {
            let times: Vec<Rational> = (1..=cfg.steps).map(|k| &t + exact::int(k as i64) * &cfg.step).collect();
            let extended = path.extended(&times, inc)?;
            g.evaluate_full_path(&extended)
        }
    }
}

/// `Δ^{L+1} / (L+1)! · M / (1 - Δ)`: the mean-square truncation bound, valid for `Δ < 1`.
pub fn truncation_bound(bound: f64, delta: f64, order: usize) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("the bound needs 0 < Δ < 1, got {delta}")));
    }
    if !(bound >= 0.0) {
        return Err(Error::Domain(format!("derivative bound {bound} must be non-negative")));
    }
    let fact = exact::to_f64(&exact::factorial(order + 1));
    Ok(delta.powi(order as i32 + 1) / fact * bound / (1.0 - delta))
}
