//! Reference functionals built in code, with their known conditional expectations.

use num_traits::Zero;

use crate::error::{Error, Result};
use crate::exact::{self, Rational};
use crate::functional::{GaussianIntegral, QuadraticForm, WienerFunctional};
use crate::kernel::{PathPrefix, PiecewisePolynomial};

/// `(τ - T)^{-1/2} exp(-W(T)² / (2(τ - T)))`, the heat kernel at `τ` seen from `T < τ`.
pub fn example1(tau: &Rational, horizon: &Rational) -> Result<WienerFunctional> {
    if tau <= horizon {
        return Err(Error::Domain(format!("need tau > T, got tau = {tau}, T = {horizon}")));
    }
    let gap = tau - horizon;
    let a = -(Rational::from_integer(1.into()) / (exact::int(2) * &gap));
    let f = WienerFunctional::exp_quadratic(
        vec![GaussianIntegral::terminal(horizon)?],
        QuadraticForm::univariate(a, Rational::zero(), Rational::zero()),
    )?;
    let norm = match exact::sqrt_exact(&gap) {
        Some(root) => root.recip(),
        None => exact::from_f64(1.0 / exact::to_f64(&gap).sqrt())?,
    };
    Ok(f.scale(&norm))
}

/// `exp(-∫_0^T W(s) ds) = exp(-∫_0^T (T - u) dW(u))`.
pub fn example2(horizon: &Rational) -> Result<WienerFunctional> {
    WienerFunctional::exp_quadratic(
        vec![GaussianIntegral::new(PiecewisePolynomial::time_to_horizon(horizon)?)],
        QuadraticForm::univariate(Rational::zero(), exact::int(-1), Rational::zero()),
    )
}

/// `W(T)^n`.
pub fn monomial(n: u32, horizon: &Rational) -> Result<WienerFunctional> {
    WienerFunctional::terminal_value(horizon)?.power(n)
}

/// `exp(W(T))`.
pub fn exp_terminal(horizon: &Rational) -> Result<WienerFunctional> {
    WienerFunctional::exp_quadratic(
        vec![GaussianIntegral::terminal(horizon)?],
        QuadraticForm::univariate(Rational::zero(), exact::int(1), Rational::zero()),
    )
}

/// `E[example1 | F_t] = (τ - t)^{-1/2} exp(-W(t)² / (2(τ - t)))`.
pub fn example1_conditional(tau: &Rational, t: &Rational, w: f64) -> f64 {
    let gap = exact::to_f64(&(tau - t));
    (-w * w / (2.0 * gap)).exp() / gap.sqrt()
}

/// `E[example2 | F_t] = exp(-∫_0^t W ds) · exp(-W(t)(T - t) + (T - t)³/6)`.
pub fn example2_conditional(horizon: &Rational, path: &PathPrefix) -> f64 {
    let rest = exact::to_f64(&(horizon - path.end_time()));
    (-path.time_integral() - path.end_value() * rest + rest.powi(3) / 6.0).exp()
}

/// Names accepted by [`parse_builtin`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Builtin {
    Example1,
    Example2,
    Monomial(u32),
    ExpW,
}

impl Builtin {
    pub fn build(self, horizon: &Rational, tau: Option<&Rational>) -> Result<WienerFunctional> {
        match self {
            Builtin::Example1 => {
                let tau = tau.ok_or_else(|| Error::config("tau", "example1 needs tau > T"))?;
                example1(tau, horizon)
            }
            Builtin::Example2 => example2(horizon),
            Builtin::Monomial(n) => monomial(n, horizon),
            Builtin::ExpW => exp_terminal(horizon),
        }
    }

    pub fn name(self) -> String {
        match self {
            Builtin::Example1 => "example1".into(),
            Builtin::Example2 => "example2".into(),
            Builtin::Monomial(n) => format!("monomial({n})"),
            Builtin::ExpW => "expW".into(),
        }
    }
}

pub fn parse_builtin(name: &str) -> Result<Builtin> {
    let name = name.trim();
    match name {
        "example1" => return Ok(Builtin::Example1),
        "example2" => return Ok(Builtin::Example2),
        "expW" => return Ok(Builtin::ExpW),
        _ => {}
    }
    if let Some(arg) = name.strip_prefix("monomial(").and_then(|r| r.strip_suffix(')')) {
        let n = arg
            .trim()
            .parse()
            .map_err(|_| Error::config("functional", format!("bad monomial degree `{arg}`")))?;
        return Ok(Builtin::Monomial(n));
    }
    Err(Error::config(
        "functional",
        format!("unknown built-in `{name}` (expected example1, example2, monomial(n) or expW)"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_names() {
        assert_eq!(parse_builtin("example1").unwrap(), Builtin::Example1);
        assert_eq!(parse_builtin("monomial(4)").unwrap(), Builtin::Monomial(4));
        assert_eq!(parse_builtin("expW").unwrap(), Builtin::ExpW);
        assert!(parse_builtin("monomial(x)").is_err());
        assert!(parse_builtin("max").is_err());
        for b in [
            Builtin::Example1,
            Builtin::Monomial(3),
            Builtin::ExpW,
            Builtin::Example2,
        ] {
            assert_eq!(parse_builtin(&b.name()).unwrap(), b);
        }
    }

    #[test]
    fn example1_requires_tau_beyond_horizon() {
        assert!(example1(&exact::int(1), &exact::int(1)).is_err());
        assert!(Builtin::Example1.build(&exact::int(1), None).is_err());
    }
}
