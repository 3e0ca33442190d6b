//! Smooth Wiener functionals in closed symbolic form.
//!
//! A [`WienerFunctional`] is a finite sum of terms
//!
//! ```text
//! c · φ_1(s_1)···φ_m(s_m) · Z_1^{e_1}···Z_k^{e_k} · exp(Q(Z))
//! ```
//!
//! where each `Z_i = ∫_0^T f_i(u) dW(u)` is a Gaussian integral with a
//! piecewise-polynomial kernel, `s_1..s_m` are free time variables introduced by
//! Malliavin differentiation, and `Q` is a quadratic form with exact rational
//! coefficients. The family is closed under `D_s`, since `D_s Z_i = f_i(s)`.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{self, format_rational, parse_rational, Rational};
use crate::kernel::{PathPrefix, PiecewisePolynomial, StieltjesWeights};

/// `Z = ∫_0^T kernel(u) dW(u)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GaussianIntegral {
    kernel: PiecewisePolynomial,
}

impl GaussianIntegral {
    pub fn new(kernel: PiecewisePolynomial) -> Self {
        GaussianIntegral { kernel }
    }

    /// `W(T)` itself.
    pub fn terminal(horizon: &Rational) -> Result<Self> {
        Ok(Self::new(PiecewisePolynomial::one(horizon)?))
    }

    pub fn kernel(&self) -> &PiecewisePolynomial {
        &self.kernel
    }
}

/// `Q(Z) = Σ_ij a_ij Z_i Z_j + Σ_i b_i Z_i + c` with symmetric `a`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "QuadraticRepr", into = "QuadraticRepr")]
pub struct QuadraticForm {
    quadratic: Vec<Vec<Rational>>,
    linear: Vec<Rational>,
    constant: Rational,
}

#[derive(Serialize, Deserialize)]
struct QuadraticRepr {
    quadratic: Vec<Vec<String>>,
    linear: Vec<String>,
    constant: String,
}

impl From<QuadraticForm> for QuadraticRepr {
    fn from(q: QuadraticForm) -> Self {
        QuadraticRepr {
            quadratic: q
                .quadratic
                .iter()
                .map(|row| row.iter().map(format_rational).collect())
                .collect(),
            linear: q.linear.iter().map(format_rational).collect(),
            constant: format_rational(&q.constant),
        }
    }
}

impl TryFrom<QuadraticRepr> for QuadraticForm {
    type Error = Error;

    fn try_from(r: QuadraticRepr) -> Result<Self> {
        let parse_row = |row: &Vec<String>| row.iter().map(|s| parse_rational(s)).collect::<Result<Vec<_>>>();
        QuadraticForm::new(
            r.quadratic.iter().map(parse_row).collect::<Result<_>>()?,
            parse_row(&r.linear)?,
            parse_rational(&r.constant)?,
        )
    }
}

impl QuadraticForm {
    pub fn new(quadratic: Vec<Vec<Rational>>, linear: Vec<Rational>, constant: Rational) -> Result<Self> {
        let k = linear.len();
        if quadratic.len() != k || quadratic.iter().any(|row| row.len() != k) {
            return Err(Error::Domain(format!(
                "quadratic part must be {k}x{k} to match the linear part"
            )));
        }
        for i in 0..k {
            for j in 0..i {
                if quadratic[i][j] != quadratic[j][i] {
                    return Err(Error::Domain(format!("quadratic part is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(QuadraticForm {
            quadratic,
            linear,
            constant,
        })
    }

    pub fn zero(dim: usize) -> Self {
        QuadraticForm {
            quadratic: vec![vec![Rational::zero(); dim]; dim],
            linear: vec![Rational::zero(); dim],
            constant: Rational::zero(),
        }
    }

    /// `a·Z² + b·Z + c` in a single variable.
    pub fn univariate(a: Rational, b: Rational, c: Rational) -> Self {
        QuadraticForm {
            quadratic: vec![vec![a]],
            linear: vec![b],
            constant: c,
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn quadratic(&self) -> &[Vec<Rational>] {
        &self.quadratic
    }

    pub fn linear(&self) -> &[Rational] {
        &self.linear
    }

    pub fn constant(&self) -> &Rational {
        &self.constant
    }

    pub fn is_zero(&self) -> bool {
        self.constant.is_zero() && self.is_homogeneous_zero()
    }

    fn is_homogeneous_zero(&self) -> bool {
        self.linear.iter().all(Zero::is_zero) && self.is_affine()
    }

    /// No quadratic part.
    pub fn is_affine(&self) -> bool {
        self.quadratic.iter().flatten().all(Zero::is_zero)
    }

    fn involves(&self, i: usize) -> bool {
        !self.linear[i].is_zero() || self.quadratic[i].iter().any(|a| !a.is_zero())
    }

    fn add(&self, other: &Self) -> Self {
        let k = self.dim();
        QuadraticForm {
            quadratic: (0..k)
                .map(|i| (0..k).map(|j| &self.quadratic[i][j] + &other.quadratic[i][j]).collect())
                .collect(),
            linear: (0..k).map(|i| &self.linear[i] + &other.linear[i]).collect(),
            constant: &self.constant + &other.constant,
        }
    }

    /// Re-indexes into a basis of size `dim`, old index `i` landing on `map[i]`.
    fn embed(&self, map: &[usize], dim: usize) -> Self {
        let mut out = QuadraticForm::zero(dim);
        for (i, &mi) in map.iter().enumerate() {
            out.linear[mi] += &self.linear[i];
            for (j, &mj) in map.iter().enumerate() {
                out.quadratic[mi][mj] += &self.quadratic[i][j];
            }
        }
        out.constant = self.constant.clone();
        out
    }

    pub fn value_exact(&self, z: &[Rational]) -> Rational {
        let mut q = self.constant.clone();
        for i in 0..self.dim() {
            if !self.linear[i].is_zero() {
                q += &self.linear[i] * &z[i];
            }
            for j in 0..self.dim() {
                if !self.quadratic[i][j].is_zero() {
                    q += &self.quadratic[i][j] * &z[i] * &z[j];
                }
            }
        }
        q
    }

    pub fn compile(&self) -> CompiledQuadratic {
        let k = self.dim();
        CompiledQuadratic {
            dim: k,
            quadratic: self.quadratic.iter().flatten().map(exact::to_f64).collect(),
            linear: self.linear.iter().map(exact::to_f64).collect(),
            constant: exact::to_f64(&self.constant),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompiledQuadratic {
    dim: usize,
    quadratic: Vec<f64>,
    linear: Vec<f64>,
    constant: f64,
}

impl CompiledQuadratic {
    pub fn value(&self, z: &[f64]) -> f64 {
        let mut q = self.constant;
        for i in 0..self.dim {
            q += self.linear[i] * z[i];
            let row = &self.quadratic[i * self.dim..(i + 1) * self.dim];
            q += z[i] * row.iter().zip(z).map(|(a, zj)| a * zj).sum::<f64>();
        }
        q
    }
}

/// One summand of a [`WienerFunctional`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    #[serde(with = "exact::serde_str")]
    pub coefficient: Rational,
    /// One univariate factor per free variable, aligned with the functional's `free_vars`.
    pub time_factors: Vec<PiecewisePolynomial>,
    pub exponents: Vec<u32>,
    pub exp_arg: QuadraticForm,
}

type TermKey = (Vec<u32>, QuadraticForm, Vec<PiecewisePolynomial>);

/// Direction of a single Malliavin differentiation.
enum Direction<'a> {
    /// Symbolic in the free variable at this index.
    Var(usize),
    /// At a fixed time; the basis kernels already evaluated there.
    Fixed(&'a [Rational]),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WienerFunctional {
    #[serde(with = "exact::serde_str")]
    horizon: Rational,
    basis: Vec<GaussianIntegral>,
    free_vars: Vec<String>,
    terms: Vec<Term>,
}

#[derive(Deserialize)]
struct FunctionalRepr {
    #[serde(with = "exact::serde_str")]
    horizon: Rational,
    basis: Vec<GaussianIntegral>,
    #[serde(default)]
    free_vars: Vec<String>,
    terms: Vec<Term>,
}

impl<'de> Deserialize<'de> for WienerFunctional {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = FunctionalRepr::deserialize(d)?;
        WienerFunctional::from_parts(r.horizon, r.basis, r.free_vars, r.terms).map_err(serde::de::Error::custom)
    }
}

/// The closure constructors of the functional family.
#[derive(Clone, Debug)]
pub enum Constructor {
    Constant {
        horizon: Rational,
        value: Rational,
    },
    Linear(GaussianIntegral),
    Power(WienerFunctional, u32),
    ExpQuadratic {
        basis: Vec<GaussianIntegral>,
        form: QuadraticForm,
    },
    Product(WienerFunctional, WienerFunctional),
    Sum(WienerFunctional, WienerFunctional),
    Scale(WienerFunctional, Rational),
}

pub fn wf_build(c: Constructor) -> Result<WienerFunctional> {
    match c {
        Constructor::Constant { horizon, value } => Ok(WienerFunctional::constant(horizon, value)),
        Constructor::Linear(z) => Ok(WienerFunctional::linear(z)),
        Constructor::Power(f, n) => f.power(n),
        Constructor::ExpQuadratic { basis, form } => WienerFunctional::exp_quadratic(basis, form),
        Constructor::Product(f, g) => f.product(&g),
        Constructor::Sum(f, g) => f.sum(&g),
        Constructor::Scale(f, c) => Ok(f.scale(&c)),
    }
}

impl WienerFunctional {
    /// Assembles and validates a functional, then brings it to canonical form.
    pub fn from_parts(
        horizon: Rational,
        basis: Vec<GaussianIntegral>,
        free_vars: Vec<String>,
        terms: Vec<Term>,
    ) -> Result<Self> {
        if horizon <= Rational::zero() {
            return Err(Error::Domain(format!("horizon {horizon} must be positive")));
        }
        if let Some(z) = basis.iter().find(|z| z.kernel.horizon() != &horizon) {
            return Err(Error::Domain(format!(
                "kernel horizon {} differs from functional horizon {horizon}",
                z.kernel.horizon()
            )));
        }
        let distinct: BTreeSet<&String> = free_vars.iter().collect();
        if distinct.len() != free_vars.len() {
            return Err(Error::Domain("free variable names must be distinct".into()));
        }
        for (n, term) in terms.iter().enumerate() {
            if term.exponents.len() != basis.len() || term.exp_arg.dim() != basis.len() {
                return Err(Error::Domain(format!(
                    "term {n} does not match the basis size {}",
                    basis.len()
                )));
            }
            if term.time_factors.len() != free_vars.len() {
                return Err(Error::Domain(format!(
                    "term {n} has {} time factors for {} free variables",
                    term.time_factors.len(),
                    free_vars.len()
                )));
            }
            if term.time_factors.iter().any(|f| f.horizon() != &horizon) {
                return Err(Error::Domain(format!("term {n} has a time factor on another horizon")));
            }
        }
        let mut f = WienerFunctional {
            horizon,
            basis,
            free_vars,
            terms,
        };
        f.canonicalize();
        Ok(f)
    }

    pub fn constant(horizon: Rational, value: Rational) -> Self {
        let term = Term {
            coefficient: value,
            time_factors: Vec::new(),
            exponents: Vec::new(),
            exp_arg: QuadraticForm::zero(0),
        };
        let mut f = WienerFunctional {
            horizon,
            basis: Vec::new(),
            free_vars: Vec::new(),
            terms: vec![term],
        };
        f.canonicalize();
        f
    }

    pub fn linear(z: GaussianIntegral) -> Self {
        let horizon = z.kernel.horizon().clone();
        let mut f = WienerFunctional {
            horizon,
            basis: vec![z],
            free_vars: Vec::new(),
            terms: vec![Term {
                coefficient: Rational::one(),
                time_factors: Vec::new(),
                exponents: vec![1],
                exp_arg: QuadraticForm::zero(1),
            }],
        };
        f.canonicalize();
        f
    }

    /// `W(T)`.
    pub fn terminal_value(horizon: &Rational) -> Result<Self> {
        Ok(Self::linear(GaussianIntegral::terminal(horizon)?))
    }

    pub fn exp_quadratic(basis: Vec<GaussianIntegral>, form: QuadraticForm) -> Result<Self> {
        let horizon = basis
            .first()
            .map(|z| z.kernel.horizon().clone())
            .ok_or_else(|| Error::Domain("exp_quadratic needs at least one Gaussian integral".into()))?;
        if form.dim() != basis.len() {
            return Err(Error::Domain(format!(
                "quadratic form of dimension {} over a basis of {}",
                form.dim(),
                basis.len()
            )));
        }
        let k = basis.len();
        Self::from_parts(
            horizon,
            basis,
            Vec::new(),
            vec![Term {
                coefficient: Rational::one(),
                time_factors: Vec::new(),
                exponents: vec![0; k],
                exp_arg: form,
            }],
        )
    }

    pub fn horizon(&self) -> &Rational {
        &self.horizon
    }

    pub fn basis(&self) -> &[GaussianIntegral] {
        &self.basis
    }

    pub fn free_vars(&self) -> &[String] {
        &self.free_vars
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    /// No free time variables left.
    pub fn is_scalar(&self) -> bool {
        self.free_vars.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Merges like terms, drops vanishing ones and unused basis elements.
    fn canonicalize(&mut self) {
        let mut merged: BTreeMap<TermKey, Rational> = BTreeMap::new();
        for term in self.terms.drain(..) {
            if term.coefficient.is_zero() || term.time_factors.iter().any(PiecewisePolynomial::is_zero) {
                continue;
            }
            *merged
                .entry((term.exponents, term.exp_arg, term.time_factors))
                .or_insert_with(Rational::zero) += term.coefficient;
        }
        self.terms = merged
            .into_iter()
            .filter(|(_, c)| !c.is_zero())
            .map(|((exponents, exp_arg, time_factors), coefficient)| Term {
                coefficient,
                time_factors,
                exponents,
                exp_arg,
            })
            .collect();

        let used: Vec<usize> = (0..self.basis.len())
            .filter(|&i| self.terms.iter().any(|t| t.exponents[i] > 0 || t.exp_arg.involves(i)))
            .collect();
        if used.len() != self.basis.len() {
            self.basis = used.iter().map(|&i| self.basis[i].clone()).collect();
            for t in &mut self.terms {
                t.exponents = used.iter().map(|&i| t.exponents[i]).collect();
                t.exp_arg = QuadraticForm {
                    quadratic: used
                        .iter()
                        .map(|&i| used.iter().map(|&j| t.exp_arg.quadratic[i][j].clone()).collect())
                        .collect(),
                    linear: used.iter().map(|&i| t.exp_arg.linear[i].clone()).collect(),
                    constant: t.exp_arg.constant.clone(),
                };
            }
        }
    }

    fn check_horizon(&self, other: &Self) -> Result<()> {
        if self.horizon != other.horizon {
            return Err(Error::Domain(format!(
                "mixing horizons {} and {}",
                self.horizon, other.horizon
            )));
        }
        Ok(())
    }

    /// Re-expresses both operands over a shared basis and variable list.
    fn aligned(&self, other: &Self) -> Result<(Vec<GaussianIntegral>, Vec<String>, Vec<Term>, Vec<Term>)> {
        self.check_horizon(other)?;
        let mut basis = self.basis.clone();
        let other_map: Vec<usize> = other
            .basis
            .iter()
            .map(|z| match basis.iter().position(|b| b == z) {
                Some(i) => i,
                None => {
                    basis.push(z.clone());
                    basis.len() - 1
                }
            })
            .collect();
        let self_map: Vec<usize> = (0..self.basis.len()).collect();

        let mut vars = self.free_vars.clone();
        for v in &other.free_vars {
            if !vars.contains(v) {
                vars.push(v.clone());
            }
        }
        let one = PiecewisePolynomial::one(&self.horizon)?;
        let lift = |f: &Self, map: &[usize]| -> Vec<Term> {
            f.terms
                .iter()
                .map(|t| {
                    let mut exponents = vec![0; basis.len()];
                    for (i, &mi) in map.iter().enumerate() {
                        exponents[mi] = t.exponents[i];
                    }
                    let time_factors = vars
                        .iter()
                        .map(|v| match f.free_vars.iter().position(|w| w == v) {
                            Some(p) => t.time_factors[p].clone(),
                            None => one.clone(),
                        })
                        .collect();
                    Term {
                        coefficient: t.coefficient.clone(),
                        time_factors,
                        exponents,
                        exp_arg: t.exp_arg.embed(map, basis.len()),
                    }
                })
                .collect()
        };
        let lhs = lift(self, &self_map);
        let rhs = lift(other, &other_map);
        Ok((basis, vars, lhs, rhs))
    }

    pub fn sum(&self, other: &Self) -> Result<Self> {
        let (basis, vars, mut lhs, rhs) = self.aligned(other)?;
        lhs.extend(rhs);
        Self::from_parts(self.horizon.clone(), basis, vars, lhs)
    }

    pub fn product(&self, other: &Self) -> Result<Self> {
        let (basis, vars, lhs, rhs) = self.aligned(other)?;
        let mut terms = Vec::with_capacity(lhs.len() * rhs.len());
        for a in &lhs {
            for b in &rhs {
                let time_factors = a
                    .time_factors
                    .iter()
                    .zip(&b.time_factors)
                    .map(|(x, y)| x.multiply(y))
                    .collect::<Result<Vec<_>>>()?;
                terms.push(Term {
                    coefficient: &a.coefficient * &b.coefficient,
                    time_factors,
                    exponents: a.exponents.iter().zip(&b.exponents).map(|(x, y)| x + y).collect(),
                    exp_arg: a.exp_arg.add(&b.exp_arg),
                });
            }
        }
        Self::from_parts(self.horizon.clone(), basis, vars, terms)
    }

    pub fn scale(&self, c: &Rational) -> Self {
        let mut f = self.clone();
        for t in &mut f.terms {
            t.coefficient *= c;
        }
        f.canonicalize();
        f
    }

    /// Scales by the exact binary value of a finite float.
    pub fn scale_f64(&self, c: f64) -> Result<Self> {
        Ok(self.scale(&exact::from_f64(c)?))
    }

    pub fn power(&self, n: u32) -> Result<Self> {
        let mut acc = Self::constant(self.horizon.clone(), Rational::one());
        for _ in 0..n {
            acc = acc.product(self)?;
        }
        Ok(acc)
    }

    fn with_var(&self, var: &str) -> Result<(Self, usize)> {
        if self.free_vars.iter().any(|v| v == var) {
            return Err(Error::Usage(format!("time variable `{var}` is already free")));
        }
        let one = PiecewisePolynomial::one(&self.horizon)?;
        let mut f = self.clone();
        f.free_vars.push(var.to_string());
        for t in &mut f.terms {
            t.time_factors.push(one.clone());
        }
        let idx = f.free_vars.len() - 1;
        Ok((f, idx))
    }

    fn differentiate(&self, dir: Direction<'_>) -> Result<Self> {
        let mut out: Vec<Term> = Vec::new();
        let mut emit = |base: &Term, i: usize, factor: Rational, exponents: Vec<u32>| -> Result<()> {
            let mut term = Term {
                coefficient: &base.coefficient * factor,
                time_factors: base.time_factors.clone(),
                exponents,
                exp_arg: base.exp_arg.clone(),
            };
            match dir {
                Direction::Var(v) => {
                    term.time_factors[v] = term.time_factors[v].multiply(&self.basis[i].kernel)?;
                }
                Direction::Fixed(values) => term.coefficient *= &values[i],
            }
            out.push(term);
            Ok(())
        };

        for term in &self.terms {
            // monomial part: D Z_i^e = e Z_i^{e-1} f_i
            for (i, &e) in term.exponents.iter().enumerate() {
                if e > 0 {
                    let mut exps = term.exponents.clone();
                    exps[i] -= 1;
                    emit(term, i, exact::int(i64::from(e)), exps)?;
                }
            }
            // exponential part: D e^Q = Σ_i (2 Σ_j a_ij Z_j + b_i) f_i e^Q
            if !term.exp_arg.is_homogeneous_zero() {
                for i in 0..self.basis.len() {
                    for (j, a) in term.exp_arg.quadratic[i].iter().enumerate() {
                        if !a.is_zero() {
                            let mut exps = term.exponents.clone();
                            exps[j] += 1;
                            emit(term, i, a * exact::int(2), exps)?;
                        }
                    }
                    let b = &term.exp_arg.linear[i];
                    if !b.is_zero() {
                        emit(term, i, b.clone(), term.exponents.clone())?;
                    }
                }
            }
        }
        Self::from_parts(self.horizon.clone(), self.basis.clone(), self.free_vars.clone(), out)
    }

    /// `D_s F` for a fresh time variable `s`; the result has `s` as its last free variable.
    pub fn malliavin_derivative(&self, var: &str) -> Result<Self> {
        let (f, idx) = self.with_var(var)?;
        f.differentiate(Direction::Var(idx))
    }

    /// `D_s^order F` at a single fresh variable `s`.
    pub fn malliavin_derivative_power(&self, var: &str, order: usize) -> Result<Self> {
        let (mut f, idx) = self.with_var(var)?;
        for _ in 0..order {
            f = f.differentiate(Direction::Var(idx))?;
        }
        Ok(f)
    }

    fn check_time(&self, time: &Rational) -> Result<()> {
        if time < &Rational::zero() || time > &self.horizon {
            return Err(Error::Domain(format!("time {time} lies outside [0, {}]", self.horizon)));
        }
        Ok(())
    }

    /// Replaces the free variable `var` by a fixed time.
    pub fn substitute(&self, var: &str, time: &Rational) -> Result<Self> {
        self.check_time(time)?;
        let idx = self
            .free_vars
            .iter()
            .position(|v| v == var)
            .ok_or_else(|| Error::Usage(format!("`{var}` is not a free variable")))?;
        let mut f = self.clone();
        f.free_vars.remove(idx);
        for t in &mut f.terms {
            let factor = t.time_factors.remove(idx);
            t.coefficient *= factor.value_at(time)?;
        }
        f.canonicalize();
        Ok(f)
    }

    /// `D_τ^l F` at a fixed time `τ`; introduces no free variables.
    ///
    /// Equivalent to differentiating `l` times in a fresh variable and
    /// substituting `τ`, but evaluates the kernels up front.
    pub fn malliavin_at_time(&self, order: usize, time: &Rational) -> Result<Self> {
        self.check_time(time)?;
        let values = self
            .basis
            .iter()
            .map(|z| z.kernel.value_at(time))
            .collect::<Result<Vec<_>>>()?;
        let mut f = self.clone();
        for _ in 0..order {
            if f.is_zero() {
                break;
            }
            // canonicalization may prune the basis, so re-read the values
            let vals: Vec<Rational> = f
                .basis
                .iter()
                .map(|z| values[self.basis.iter().position(|b| b == z).unwrap()].clone())
                .collect();
            f = f.differentiate(Direction::Fixed(&vals))?;
        }
        Ok(f)
    }

    /// `z_i = ∫_0^t f_i dW` along the prefix: the basis frozen at the prefix end.
    pub fn frozen_integrals(&self, path: &PathPrefix) -> Result<Vec<f64>> {
        if path.horizon() != &self.horizon {
            return Err(Error::Domain(format!(
                "path horizon {} differs from functional horizon {}",
                path.horizon(),
                self.horizon
            )));
        }
        self.basis
            .iter()
            .map(|z| {
                let w = StieltjesWeights::new(&z.kernel, path.times())?;
                Ok(w.apply(path.values(), path.endpoint_jump()))
            })
            .collect()
    }

    /// Exact `z_i` along the prefix, the samples taken at their binary values.
    pub fn frozen_integrals_exact(&self, path: &PathPrefix) -> Result<Vec<Rational>> {
        if path.horizon() != &self.horizon {
            return Err(Error::Domain(format!(
                "path horizon {} differs from functional horizon {}",
                path.horizon(),
                self.horizon
            )));
        }
        if !path.endpoint_jump().is_finite() {
            return Err(Error::Domain(format!(
                "endpoint jump {} is not finite",
                path.endpoint_jump()
            )));
        }
        let (values, jump) = path.exact_values();
        self.basis
            .iter()
            .map(|z| Ok(StieltjesWeights::new(&z.kernel, path.times())?.apply_exact(&values, &jump)))
            .collect()
    }

    /// Term coefficients with the bound time variables folded in.
    fn bound_coefficients(&self, bindings: &BTreeMap<String, Rational>) -> Result<Vec<Rational>> {
        for name in bindings.keys() {
            if !self.free_vars.contains(name) {
                return Err(Error::Usage(format!("binding for unknown variable `{name}`")));
            }
        }
        let times = self
            .free_vars
            .iter()
            .map(|v| {
                bindings
                    .get(v)
                    .ok_or_else(|| Error::Usage(format!("free variable `{v}` is unbound")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.terms
            .iter()
            .map(|t| {
                let mut c = t.coefficient.clone();
                for (factor, time) in t.time_factors.iter().zip(&times) {
                    c *= factor.value_at(time)?;
                }
                Ok(c)
            })
            .collect()
    }

    /// `Σ_n weights[n] · ∏ z^e · exp(Q(z))` over the terms. Polynomial parts that
    /// share an exponent are summed exactly and rounded once.
    pub fn weighted_exact_sum(&self, weights: &[Rational], z: &[Rational]) -> Result<f64> {
        let max_exp: Vec<u32> = (0..self.basis.len())
            .map(|i| self.terms.iter().map(|t| t.exponents[i]).max().unwrap_or(0))
            .collect();
        let powers: Vec<Vec<Rational>> = z
            .iter()
            .zip(&max_exp)
            .map(|(zi, &m)| {
                let mut p = vec![Rational::one()];
                for e in 1..=m as usize {
                    let next = &p[e - 1] * zi;
                    p.push(next);
                }
                p
            })
            .collect();
        let mut groups: BTreeMap<&QuadraticForm, Rational> = BTreeMap::new();
        for (term, w) in self.terms.iter().zip(weights) {
            if w.is_zero() {
                continue;
            }
            let mut mono = w.clone();
            for (i, &e) in term.exponents.iter().enumerate() {
                if e > 0 {
                    mono *= &powers[i][e as usize];
                }
            }
            *groups.entry(&term.exp_arg).or_insert_with(Rational::zero) += mono;
        }
        let mut total = 0.0;
        for (q, poly) in groups {
            if poly.is_zero() {
                continue;
            }
            let p = exact::to_f64(&poly);
            if q.is_zero() {
                total += p;
                continue;
            }
            let arg = exact::to_f64(&q.value_exact(z));
            let e = arg.exp();
            if !e.is_finite() {
                return Err(Error::NumericOverflow(format!("exponent {arg} overflows")));
            }
            total += p * e;
        }
        if !total.is_finite() {
            return Err(Error::NumericOverflow(format!(
                "functional value {total} is not finite"
            )));
        }
        Ok(total)
    }

    /// Folds bound time variables into the coefficients, producing a fast evaluator.
    pub fn compile(&self, bindings: &BTreeMap<String, Rational>) -> Result<CompiledFunctional> {
        let coefficients = self.bound_coefficients(bindings)?;
        let terms = self
            .terms
            .iter()
            .zip(&coefficients)
            .map(|(t, c)| {
                Ok(CompiledTerm {
                    coefficient: exact::to_f64(c),
                    powers: t
                        .exponents
                        .iter()
                        .enumerate()
                        .filter(|(_, e)| **e > 0)
                        .map(|(i, e)| (i, *e as i32))
                        .collect(),
                    exp_arg: (!t.exp_arg.is_zero()).then(|| t.exp_arg.compile()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CompiledFunctional {
            dim: self.basis.len(),
            terms,
        })
    }

    /// `F(ω^t)`: the functional on the path frozen at the prefix end, with the
    /// free time variables bound to times in `[t, T]`.
    pub fn freeze_evaluate(&self, path: &PathPrefix, bindings: &BTreeMap<String, Rational>) -> Result<f64> {
        for (name, time) in bindings {
            if time < path.end_time() || time > &self.horizon {
                return Err(Error::Domain(format!(
                    "binding {name} = {time} lies outside [{}, {}]",
                    path.end_time(),
                    self.horizon
                )));
            }
        }
        let coefficients = self.bound_coefficients(bindings)?;
        let z = self.frozen_integrals_exact(path)?;
        self.weighted_exact_sum(&coefficients, &z)
    }

    /// `F(ω)` on a path sampled all the way to the horizon.
    pub fn evaluate_full_path(&self, path: &PathPrefix) -> Result<f64> {
        if !path.reaches_horizon() {
            return Err(Error::Usage(format!(
                "path ends at {} before the horizon {}",
                path.end_time(),
                self.horizon
            )));
        }
        if !self.is_scalar() {
            return Err(Error::Usage(format!(
                "functional still has free variables {:?}",
                self.free_vars
            )));
        }
        self.freeze_evaluate(path, &BTreeMap::new())
    }

    /// Human-readable JSON form; [`WienerFunctional::from_text`] restores it bit-exactly.
    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("functional serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[derive(Clone, Debug)]
struct CompiledTerm {
    coefficient: f64,
    powers: Vec<(usize, i32)>,
    exp_arg: Option<CompiledQuadratic>,
}

/// A scalar functional reduced to floating-point evaluation of `z ↦ F`.
#[derive(Clone, Debug)]
pub struct CompiledFunctional {
    dim: usize,
    terms: Vec<CompiledTerm>,
}

impl CompiledFunctional {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// May return a non-finite value.
    pub fn value(&self, z: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let mono: f64 = t.powers.iter().map(|&(i, e)| z[i].powi(e)).product();
                match &t.exp_arg {
                    Some(q) => t.coefficient * mono * q.value(z).exp(),
                    None => t.coefficient * mono,
                }
            })
            .sum()
    }

    pub fn value_checked(&self, z: &[f64]) -> Result<f64> {
        for t in &self.terms {
            if let Some(q) = &t.exp_arg {
                let arg = q.value(z);
                if !arg.is_finite() || arg > f64::MAX.ln() {
                    return Err(Error::NumericOverflow(format!("exponent {arg} overflows")));
                }
            }
        }
        let v = self.value(z);
        if !v.is_finite() {
            return Err(Error::NumericOverflow(format!("functional value {v} is not finite")));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::exact::{int, rat};

    fn t1() -> Rational {
        int(1)
    }

    fn w_t() -> WienerFunctional {
        WienerFunctional::terminal_value(&t1()).unwrap()
    }

    fn no_bindings() -> BTreeMap<String, Rational> {
        BTreeMap::new()
    }

    #[test]
    fn build_examples() {
        let w = w_t();
        assert_eq!(w.basis().len(), 1);
        assert_eq!(w.terms()[0].exponents, vec![1]);

        let sq = w.power(2).unwrap();
        assert_eq!(sq.term_count(), 1);
        assert_eq!(sq.terms()[0].exponents, vec![2]);
        assert!(sq.terms()[0].exp_arg.is_zero());

        let ex1 = builtin::example1(&int(2), &t1()).unwrap();
        assert_eq!(ex1.term_count(), 1);
        assert_eq!(ex1.terms()[0].exp_arg.quadratic()[0][0], rat(-1, 2));
        assert_eq!(ex1.terms()[0].coefficient, int(1));
    }

    #[test]
    fn mixing_horizons_is_an_error() {
        let a = WienerFunctional::terminal_value(&int(1)).unwrap();
        let b = WienerFunctional::terminal_value(&int(2)).unwrap();
        assert!(matches!(a.sum(&b), Err(Error::Domain(_))));
        assert!(matches!(wf_build(Constructor::Product(a, b)), Err(Error::Domain(_))));
    }

    #[test]
    fn products_with_distinct_exponentials_stay_in_family() {
        let ex2 = builtin::example2(&t1()).unwrap();
        let ew = builtin::exp_terminal(&t1()).unwrap();
        let s = ex2.sum(&ew).unwrap();
        assert_eq!(s.term_count(), 2);
        let p = s.product(&w_t()).unwrap();
        assert_eq!(p.term_count(), 2);
    }

    #[test]
    fn like_terms_merge() {
        let w = w_t();
        let two = w.sum(&w).unwrap();
        assert_eq!(two.term_count(), 1);
        assert_eq!(two.terms()[0].coefficient, int(2));
        let zero = w.sum(&w.scale(&int(-1))).unwrap();
        assert!(zero.is_zero());
    }

    #[test]
    fn derivative_of_half_square() {
        let half_sq = w_t().power(2).unwrap().scale(&rat(1, 2));
        let d = half_sq.malliavin_derivative("s").unwrap();
        assert_eq!(d.free_vars(), &["s".to_string()]);
        assert_eq!(d.term_count(), 1);
        let term = &d.terms()[0];
        assert_eq!(term.coefficient, int(1));
        assert_eq!(term.exponents, vec![1]);
        assert_eq!(term.time_factors[0], PiecewisePolynomial::one(&t1()).unwrap());

        // along ω^t: 1[s <= T] W(t)
        let path = PathPrefix::sampled(&rat(1, 2), 4, t1(), |u| 0.6 * u).unwrap();
        let mut b = BTreeMap::new();
        b.insert("s".to_string(), t1());
        assert!((d.freeze_evaluate(&path, &b).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn second_derivative_of_example2() {
        let f = builtin::example2(&t1()).unwrap();
        let d2 = f.malliavin_derivative_power("s", 2).unwrap();
        assert_eq!(d2.term_count(), 1);
        let decay = PiecewisePolynomial::time_to_horizon(&t1()).unwrap();
        assert_eq!(d2.terms()[0].time_factors[0], decay.multiply(&decay).unwrap());
        assert_eq!(d2.terms()[0].exp_arg, f.terms()[0].exp_arg);
        assert_eq!(d2.terms()[0].coefficient, int(1));
    }

    #[test]
    fn derivative_of_constant_vanishes() {
        let c = WienerFunctional::constant(t1(), rat(7, 2));
        assert!(c.malliavin_derivative("s").unwrap().is_zero());
    }

    #[test]
    fn derivative_needs_fresh_variable() {
        let d = w_t().malliavin_derivative("s").unwrap();
        assert!(matches!(d.malliavin_derivative("s"), Err(Error::Usage(_))));
    }

    #[test]
    fn malliavin_at_time_examples() {
        let cube = w_t().power(3).unwrap();
        let d2 = cube.malliavin_at_time(2, &t1()).unwrap();
        assert_eq!(d2.term_count(), 1);
        assert_eq!(d2.terms()[0].coefficient, int(6));
        assert_eq!(d2.terms()[0].exponents, vec![1]);
        assert!(cube.malliavin_at_time(4, &t1()).unwrap().is_zero());

        let d1 = w_t().power(2).unwrap().malliavin_at_time(1, &t1()).unwrap();
        assert_eq!(d1.terms()[0].coefficient, int(2));
        assert_eq!(d1.terms()[0].exponents, vec![1]);
    }

    #[test]
    fn fixed_time_route_matches_symbolic_route() {
        let f = builtin::example2(&t1())
            .unwrap()
            .product(&w_t().power(2).unwrap())
            .unwrap();
        let tau = rat(3, 8);
        let direct = f.malliavin_at_time(3, &tau).unwrap();
        let symbolic = f
            .malliavin_derivative_power("s", 3)
            .unwrap()
            .substitute("s", &tau)
            .unwrap();
        let path = PathPrefix::sampled(&int(1), 16, t1(), |u| (3.0 * u).sin()).unwrap();
        let a = direct.evaluate_full_path(&path).unwrap();
        let b = symbolic.evaluate_full_path(&path).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn freeze_examples() {
        let ex2 = builtin::example2(&t1()).unwrap();
        let zero = PathPrefix::sampled(&rat(1, 2), 8, t1(), |_| 0.0).unwrap();
        assert_eq!(ex2.freeze_evaluate(&zero, &no_bindings()).unwrap(), 1.0);

        let lin = PathPrefix::sampled(&rat(1, 2), 8, t1(), |u| u).unwrap();
        let v = ex2.freeze_evaluate(&lin, &no_bindings()).unwrap();
        assert!((v - (-0.375f64).exp()).abs() < 1e-15);

        let ex1 = builtin::example1(&int(2), &t1()).unwrap();
        let origin = PathPrefix::origin(t1());
        assert_eq!(ex1.freeze_evaluate(&origin, &no_bindings()).unwrap(), 1.0);
    }

    #[test]
    fn freeze_errors() {
        let d = w_t().malliavin_derivative("s").unwrap();
        let origin = PathPrefix::origin(t1());
        assert!(matches!(
            d.freeze_evaluate(&origin, &no_bindings()),
            Err(Error::Usage(_))
        ));

        let big = builtin::exp_terminal(&t1()).unwrap().scale(&int(1));
        let huge = PathPrefix::new(vec![int(0), t1()], vec![0.0, 1000.0], t1()).unwrap();
        assert!(matches!(
            big.freeze_evaluate(&huge, &no_bindings()),
            Err(Error::NumericOverflow(_))
        ));
    }

    #[test]
    fn full_path_examples() {
        let full = PathPrefix::sampled(&t1(), 10, t1(), |u| 0.7 * u).unwrap();
        assert!((w_t().evaluate_full_path(&full).unwrap() - 0.7).abs() < 1e-15);
        assert!((w_t().power(2).unwrap().evaluate_full_path(&full).unwrap() - 0.49).abs() < 1e-15);

        let lin = PathPrefix::sampled(&t1(), 10, t1(), |u| u).unwrap();
        let ex2 = builtin::example2(&t1()).unwrap();
        assert!((ex2.evaluate_full_path(&lin).unwrap() - (-0.5f64).exp()).abs() < 1e-15);

        let short = PathPrefix::sampled(&rat(1, 2), 4, t1(), |u| u).unwrap();
        assert!(matches!(w_t().evaluate_full_path(&short), Err(Error::Usage(_))));
    }

    #[test]
    fn text_round_trip() {
        let f = builtin::example1(&rat(5, 2), &t1())
            .unwrap()
            .sum(&builtin::example2(&t1()).unwrap().scale(&rat(1, 10)))
            .unwrap()
            .malliavin_derivative("s1")
            .unwrap();
        let text = f.to_text();
        let back = WienerFunctional::from_text(&text).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn text_rejects_invalid() {
        let mut v: serde_json::Value = serde_json::from_str(&w_t().to_text()).unwrap();
        v["terms"][0]["exponents"] = serde_json::json!([1, 2]);
        assert!(WienerFunctional::from_text(&v.to_string()).is_err());
    }
}
