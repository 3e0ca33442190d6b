//! Piecewise-polynomial time kernels with exact rational coefficients, and
//! pathwise integration of those kernels against sampled Brownian paths.

use std::cmp::Ordering;

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{self, format_rational, parse_rational, Rational};

/// Dense univariate polynomial, `coeffs[k]` multiplies `u^k`. Trailing zeros trimmed.
type Poly = Vec<Rational>;

fn trim(mut p: Poly) -> Poly {
    while p.last().is_some_and(Zero::is_zero) {
        p.pop();
    }
    p
}

fn poly_eval(p: &[Rational], u: &Rational) -> Rational {
    p.iter().rev().fold(Rational::zero(), |acc, c| acc * u + c)
}

fn poly_eval_f64(p: &[Rational], u: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * u + exact::to_f64(c))
}

fn poly_add(a: &[Rational], b: &[Rational]) -> Poly {
    let n = a.len().max(b.len());
    let out = (0..n)
        .map(|k| match (a.get(k), b.get(k)) {
            (Some(x), Some(y)) => x + y,
            (Some(x), None) | (None, Some(x)) => x.clone(),
            (None, None) => unreachable!(),
        })
        .collect();
    trim(out)
}

fn poly_mul(a: &[Rational], b: &[Rational]) -> Poly {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![Rational::zero(); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        if x.is_zero() {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    trim(out)
}

fn poly_scale(a: &[Rational], c: &Rational) -> Poly {
    trim(a.iter().map(|x| x * c).collect())
}

fn poly_antiderivative(p: &[Rational]) -> Poly {
    let mut out = Vec::with_capacity(p.len() + 1);
    out.push(Rational::zero());
    for (k, c) in p.iter().enumerate() {
        out.push(c / exact::int(k as i64 + 1));
    }
    trim(out)
}

fn poly_derivative(p: &[Rational]) -> Poly {
    trim(
        p.iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| c * exact::int(k as i64))
            .collect(),
    )
}

fn poly_integral(p: &[Rational], lo: &Rational, hi: &Rational) -> Rational {
    let anti = poly_antiderivative(p);
    poly_eval(&anti, hi) - poly_eval(&anti, lo)
}

/// A univariate piecewise polynomial on `[0, T]` with exact rational coefficients.
///
/// Segment `i` covers `(b_i, b_{i+1}]` (and the first one also contains 0), so
/// a value requested at an interior breakpoint comes from the left segment.
/// Coefficients are in the global time variable, not a segment-local offset.
/// The representation is canonical: adjacent equal segments are merged and
/// trailing zero coefficients dropped, so structural equality is functional
/// equality.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "PiecewiseRepr", into = "PiecewiseRepr")]
pub struct PiecewisePolynomial {
    breakpoints: Vec<Rational>,
    segments: Vec<Poly>,
}

#[derive(Serialize, Deserialize)]
struct PiecewiseRepr {
    breakpoints: Vec<String>,
    segments: Vec<Vec<String>>,
}

impl From<PiecewisePolynomial> for PiecewiseRepr {
    fn from(p: PiecewisePolynomial) -> Self {
        PiecewiseRepr {
            breakpoints: p.breakpoints.iter().map(format_rational).collect(),
            segments: p
                .segments
                .iter()
                .map(|s| s.iter().map(format_rational).collect())
                .collect(),
        }
    }
}

impl TryFrom<PiecewiseRepr> for PiecewisePolynomial {
    type Error = Error;

    fn try_from(r: PiecewiseRepr) -> Result<Self> {
        let breakpoints = r
            .breakpoints
            .iter()
            .map(|s| parse_rational(s))
            .collect::<Result<Vec<_>>>()?;
        let segments = r
            .segments
            .iter()
            .map(|seg| seg.iter().map(|s| parse_rational(s)).collect())
            .collect::<Result<Vec<_>>>()?;
        PiecewisePolynomial::from_segments(breakpoints, segments)
    }
}

impl PiecewisePolynomial {
    pub fn from_segments(breakpoints: Vec<Rational>, segments: Vec<Vec<Rational>>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::Domain("need at least two breakpoints".into()));
        }
        if !breakpoints[0].is_zero() {
            return Err(Error::Domain("first breakpoint must be 0".into()));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("breakpoints must be strictly increasing".into()));
        }
        if segments.len() != breakpoints.len() - 1 {
            return Err(Error::Domain(format!(
                "{} breakpoints need {} segments, got {}",
                breakpoints.len(),
                breakpoints.len() - 1,
                segments.len()
            )));
        }
        Ok(Self::canonical(breakpoints, segments))
    }

    fn canonical(breakpoints: Vec<Rational>, segments: Vec<Poly>) -> Self {
        let mut bps = vec![breakpoints[0].clone()];
        let mut segs: Vec<Poly> = Vec::with_capacity(segments.len());
        for (seg, end) in segments.into_iter().zip(breakpoints.into_iter().skip(1)) {
            let seg = trim(seg);
            if segs.last() == Some(&seg) {
                *bps.last_mut().unwrap() = end;
            } else {
                segs.push(seg);
                bps.push(end);
            }
        }
        PiecewisePolynomial {
            breakpoints: bps,
            segments: segs,
        }
    }

    /// A single polynomial on the whole horizon.
    pub fn polynomial(horizon: &Rational, coeffs: Vec<Rational>) -> Result<Self> {
        Self::from_segments(vec![Rational::zero(), horizon.clone()], vec![coeffs])
    }

    pub fn constant(horizon: &Rational, c: Rational) -> Result<Self> {
        Self::polynomial(horizon, vec![c])
    }

    pub fn one(horizon: &Rational) -> Result<Self> {
        Self::constant(horizon, Rational::one())
    }

    pub fn zero(horizon: &Rational) -> Result<Self> {
        Self::polynomial(horizon, Vec::new())
    }

    /// `T - u`, the kernel turning `∫_0^T W(s) ds` into a stochastic integral.
    pub fn time_to_horizon(horizon: &Rational) -> Result<Self> {
        Self::polynomial(horizon, vec![horizon.clone(), -Rational::one()])
    }

    /// `1[u <= s]`, the kernel of `W(s)` viewed on the horizon `[0, T]`.
    pub fn indicator_until(horizon: &Rational, s: &Rational) -> Result<Self> {
        if s.is_zero() {
            return Self::zero(horizon);
        }
        if s > horizon || s < &Rational::zero() {
            return Err(Error::Domain(format!("{s} lies outside [0, {horizon}]")));
        }
        if s == horizon {
            return Self::one(horizon);
        }
        Self::from_segments(
            vec![Rational::zero(), s.clone(), horizon.clone()],
            vec![vec![Rational::one()], Vec::new()],
        )
    }

    pub fn horizon(&self) -> &Rational {
        self.breakpoints.last().unwrap()
    }

    pub fn breakpoints(&self) -> &[Rational] {
        &self.breakpoints
    }

    pub fn segments(&self) -> &[Vec<Rational>] {
        &self.segments
    }

    pub fn is_zero(&self) -> bool {
        self.segments.iter().all(Vec::is_empty)
    }

    /// Highest polynomial degree across segments (0 for the zero kernel).
    pub fn degree(&self) -> usize {
        self.segments
            .iter()
            .map(|s| s.len().saturating_sub(1))
            .max()
            .unwrap_or(0)
    }

    fn check_time(&self, u: &Rational) -> Result<()> {
        if u < &Rational::zero() || u > self.horizon() {
            return Err(Error::Domain(format!("time {u} lies outside [0, {}]", self.horizon())));
        }
        Ok(())
    }

    fn segment_index(&self, u: &Rational) -> usize {
        let j = self.breakpoints.partition_point(|b| b < u);
        j.max(1) - 1
    }

    /// Exact value at `u`, using the left segment at interior breakpoints.
    pub fn value_at(&self, u: &Rational) -> Result<Rational> {
        self.check_time(u)?;
        Ok(poly_eval(&self.segments[self.segment_index(u)], u))
    }

    pub fn value_at_f64(&self, u: f64) -> Result<f64> {
        let horizon = exact::to_f64(self.horizon());
        if !(0.0..=horizon).contains(&u) {
            return Err(Error::Domain(format!("time {u} lies outside [0, {horizon}]")));
        }
        let j = self.breakpoints.partition_point(|b| exact::to_f64(b) < u).max(1) - 1;
        Ok(poly_eval_f64(&self.segments[j], u))
    }

    /// Exact `∫_a^b f(u) du` for `0 <= a <= b <= T`.
    pub fn integrate(&self, a: &Rational, b: &Rational) -> Result<Rational> {
        self.check_time(a)?;
        self.check_time(b)?;
        if a > b {
            return Err(Error::Domain(format!("reversed bounds [{a}, {b}]")));
        }
        let mut total = Rational::zero();
        for (i, seg) in self.segments.iter().enumerate() {
            let lo = a.max(&self.breakpoints[i]);
            let hi = b.min(&self.breakpoints[i + 1]);
            if lo < hi && !seg.is_empty() {
                total += poly_integral(seg, lo, hi);
            }
        }
        Ok(total)
    }

    /// The piecewise polynomial `u -> ∫_u^T f(s) ds`, which is continuous.
    pub fn tail_integral(&self) -> PiecewisePolynomial {
        let n = self.segments.len();
        let mut out = vec![Vec::new(); n];
        let mut beyond = Rational::zero();
        for i in (0..n).rev() {
            let anti = poly_antiderivative(&self.segments[i]);
            let end = &self.breakpoints[i + 1];
            // g(u) = A(b_{i+1}) - A(u) + ∫_{b_{i+1}}^T f
            let constant = poly_eval(&anti, end) + &beyond;
            let mut seg: Poly = anti.iter().map(|c| -c).collect();
            if seg.is_empty() {
                seg.push(Rational::zero());
            }
            seg[0] += &constant;
            beyond += poly_integral(&self.segments[i], &self.breakpoints[i], end);
            out[i] = trim(seg);
        }
        Self::canonical(self.breakpoints.clone(), out)
    }

    pub fn derivative(&self) -> PiecewisePolynomial {
        Self::canonical(
            self.breakpoints.clone(),
            self.segments.iter().map(|s| poly_derivative(s)).collect(),
        )
    }

    /// Jumps `f(b+) - f(b-)` at interior breakpoints; continuous points are skipped.
    pub fn jumps(&self) -> Vec<(Rational, Rational)> {
        (1..self.segments.len())
            .filter_map(|i| {
                let b = &self.breakpoints[i];
                let jump = poly_eval(&self.segments[i], b) - poly_eval(&self.segments[i - 1], b);
                (!jump.is_zero()).then(|| (b.clone(), jump))
            })
            .collect()
    }

    fn check_horizon(&self, other: &Self) -> Result<()> {
        if self.horizon() != other.horizon() {
            return Err(Error::Domain(format!(
                "mismatched horizons {} and {}",
                self.horizon(),
                other.horizon()
            )));
        }
        Ok(())
    }

    /// Both operands re-expressed on the union of their breakpoints.
    fn refine_pair<'a>(&'a self, other: &'a Self) -> (Vec<Rational>, Vec<(&'a Poly, &'a Poly)>) {
        let mut merged: Vec<Rational> = Vec::with_capacity(self.breakpoints.len() + other.breakpoints.len());
        let (mut i, mut j) = (0, 0);
        while i < self.breakpoints.len() || j < other.breakpoints.len() {
            let next = match (self.breakpoints.get(i), other.breakpoints.get(j)) {
                (Some(a), Some(b)) => match a.cmp(b) {
                    Ordering::Less => {
                        i += 1;
                        a
                    }
                    Ordering::Greater => {
                        j += 1;
                        b
                    }
                    Ordering::Equal => {
                        i += 1;
                        j += 1;
                        a
                    }
                },
                (Some(a), None) => {
                    i += 1;
                    a
                }
                (None, Some(b)) => {
                    j += 1;
                    b
                }
                (None, None) => unreachable!(),
            };
            merged.push(next.clone());
        }
        let pairs = merged
            .windows(2)
            .map(|w| {
                // any interior point of the cell identifies the covering segments
                let mid = (&w[0] + &w[1]) / exact::int(2);
                (
                    &self.segments[self.segment_index(&mid)],
                    &other.segments[other.segment_index(&mid)],
                )
            })
            .collect();
        (merged, pairs)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_horizon(other)?;
        let (bps, pairs) = self.refine_pair(other);
        let segs = pairs.into_iter().map(|(a, b)| poly_add(a, b)).collect();
        Ok(Self::canonical(bps, segs))
    }

    pub fn multiply(&self, other: &Self) -> Result<Self> {
        self.check_horizon(other)?;
        let (bps, pairs) = self.refine_pair(other);
        let segs = pairs.into_iter().map(|(a, b)| poly_mul(a, b)).collect();
        Ok(Self::canonical(bps, segs))
    }

    pub fn scale(&self, c: &Rational) -> Self {
        Self::canonical(
            self.breakpoints.clone(),
            self.segments.iter().map(|s| poly_scale(s, c)).collect(),
        )
    }
}

/// Arithmetic selector mirroring the kernel operations.
#[derive(Clone, Debug)]
pub enum KernelOp<'a> {
    Add(&'a PiecewisePolynomial),
    Multiply(&'a PiecewisePolynomial),
    Scale(&'a Rational),
}

pub fn pp_arith(f: &PiecewisePolynomial, op: KernelOp<'_>) -> Result<PiecewisePolynomial> {
    match op {
        KernelOp::Add(g) => f.add(g),
        KernelOp::Multiply(g) => f.multiply(g),
        KernelOp::Scale(c) => Ok(f.scale(c)),
    }
}

/// Brownian path samples on a grid `0 = u_0 < ... < u_n = t`, for a horizon `T >= t`.
///
/// Between grid points the path is read as the linear interpolant. An optional
/// endpoint jump shifts the value at `t` alone, giving the càdlàg vertical bump
/// `x(u) + h·1[u = t]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PathRepr", into = "PathRepr")]
pub struct PathPrefix {
    times: Vec<Rational>,
    values: Vec<f64>,
    horizon: Rational,
    endpoint_jump: f64,
}

#[derive(Serialize, Deserialize)]
struct PathRepr {
    times: Vec<String>,
    values: Vec<f64>,
    horizon: String,
    #[serde(default, skip_serializing_if = "is_zero_f64")]
    endpoint_jump: f64,
}

fn is_zero_f64(x: &f64) -> bool {
    *x == 0.0
}

impl From<PathPrefix> for PathRepr {
    fn from(p: PathPrefix) -> Self {
        PathRepr {
            times: p.times.iter().map(format_rational).collect(),
            values: p.values,
            horizon: format_rational(&p.horizon),
            endpoint_jump: p.endpoint_jump,
        }
    }
}

impl TryFrom<PathRepr> for PathPrefix {
    type Error = Error;

    fn try_from(r: PathRepr) -> Result<Self> {
        let times = r.times.iter().map(|s| parse_rational(s)).collect::<Result<Vec<_>>>()?;
        let path = PathPrefix::new(times, r.values, parse_rational(&r.horizon)?)?;
        Ok(path.with_endpoint_jump(r.endpoint_jump))
    }
}

impl PathPrefix {
    pub fn new(times: Vec<Rational>, values: Vec<f64>, horizon: Rational) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::Domain(format!(
                "path needs matching nonempty times and values ({} vs {})",
                times.len(),
                values.len()
            )));
        }
        if !times[0].is_zero() {
            return Err(Error::Domain("path grid must start at 0".into()));
        }
        if values[0] != 0.0 {
            return Err(Error::Domain("Brownian paths start at W(0) = 0".into()));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("path grid must be strictly increasing".into()));
        }
        if times.last().unwrap() > &horizon {
            return Err(Error::Domain(format!(
                "path reaches {} beyond the horizon {horizon}",
                times.last().unwrap()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("path value {v} is not finite")));
        }
        Ok(PathPrefix {
            times,
            values,
            horizon,
            endpoint_jump: 0.0,
        })
    }

    /// The trivial prefix at `t = 0`.
    pub fn origin(horizon: Rational) -> Self {
        PathPrefix {
            times: vec![Rational::zero()],
            values: vec![0.0],
            horizon,
            endpoint_jump: 0.0,
        }
    }

    /// Uniform grid with `steps` cells on `[0, t]`, values from `f(u)`.
    pub fn sampled(t: &Rational, steps: usize, horizon: Rational, f: impl Fn(f64) -> f64) -> Result<Self> {
        if t.is_zero() {
            return Ok(Self::origin(horizon));
        }
        let steps = steps.max(1);
        let times: Vec<Rational> = (0..=steps).map(|k| t * exact::rat(k as i64, steps as i64)).collect();
        let values = times
            .iter()
            .enumerate()
            .map(|(k, u)| if k == 0 { 0.0 } else { f(exact::to_f64(u)) })
            .collect();
        Self::new(times, values, horizon)
    }

    /// Builds `W(u_k) = Σ_{j<=k} increments[j]` on the given grid.
    pub fn from_increments(times: Vec<Rational>, increments: &[f64], horizon: Rational) -> Result<Self> {
        if increments.len() + 1 != times.len() {
            return Err(Error::Domain(format!(
                "{} grid points need {} increments, got {}",
                times.len(),
                times.len().saturating_sub(1),
                increments.len()
            )));
        }
        let mut values = Vec::with_capacity(times.len());
        values.push(0.0);
        let mut w = 0.0;
        for dw in increments {
            w += dw;
            values.push(w);
        }
        Self::new(times, values, horizon)
    }

    /// Appends grid points after `t`, each reached by the given increment.
    pub fn extended(&self, times: &[Rational], increments: &[f64]) -> Result<Self> {
        if times.len() != increments.len() {
            return Err(Error::Domain("extension times and increments differ in length".into()));
        }
        if self.endpoint_jump != 0.0 && !times.is_empty() {
            return Err(Error::Usage("cannot extend a path carrying an endpoint jump".into()));
        }
        let mut all_times = self.times.clone();
        let mut values = self.values.clone();
        let mut w = *values.last().unwrap();
        for (u, dw) in times.iter().zip(increments) {
            w += dw;
            all_times.push(u.clone());
            values.push(w);
        }
        Self::new(all_times, values, self.horizon.clone())
    }

    pub fn with_endpoint_jump(mut self, h: f64) -> Self {
        self.endpoint_jump = h;
        self
    }

    pub fn times(&self) -> &[Rational] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sample values and endpoint jump as exact rationals.
    pub fn exact_values(&self) -> (Vec<Rational>, Rational) {
        let exact = |v: f64| Rational::from_float(v).unwrap_or_else(Rational::zero);
        (
            self.values.iter().map(|&v| exact(v)).collect(),
            exact(self.endpoint_jump),
        )
    }

    pub fn horizon(&self) -> &Rational {
        &self.horizon
    }

    pub fn end_time(&self) -> &Rational {
        self.times.last().unwrap()
    }

    /// `W(t)`, including any endpoint jump.
    pub fn end_value(&self) -> f64 {
        self.values.last().unwrap() + self.endpoint_jump
    }

    pub fn endpoint_jump(&self) -> f64 {
        self.endpoint_jump
    }

    pub fn reaches_horizon(&self) -> bool {
        self.end_time() == &self.horizon
    }

    /// Exact `∫_0^t W(u) du` of the linear interpolant (endpoint jump ignored).
    pub fn time_integral(&self) -> f64 {
        self.times
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(t, v)| exact::to_f64(&(&t[1] - &t[0])) * 0.5 * (v[0] + v[1]))
            .sum()
    }
}

/// Linear functional `W ↦ ∫_0^t f dW` on a fixed grid, as weights on the grid values.
///
/// The integral is taken in integration-by-parts form
/// `f(t)W(t) - ∫_0^t W(u) f'(u) du - Σ_{b<t} W(b)·jump_f(b)`, which is exact for
/// the piecewise-linear interpolant of the samples. Weights are kept as exact
/// rationals alongside their rounded values.
#[derive(Clone, Debug, PartialEq)]
pub struct StieltjesWeights {
    pub grid_weights: Vec<f64>,
    /// `f(t)`: the weight on the endpoint jump.
    pub endpoint_weight: f64,
    pub exact_grid_weights: Vec<Rational>,
    pub exact_endpoint_weight: Rational,
}

impl StieltjesWeights {
    pub fn new(f: &PiecewisePolynomial, times: &[Rational]) -> Result<Self> {
        let t = times.last().ok_or_else(|| Error::Domain("empty grid".into()))?;
        let n = times.len();
        let mut weights = vec![Rational::zero(); n];
        let f_end = f.value_at(t)?;
        weights[n - 1] += &f_end;

        let df = f.derivative();
        for (i, cell) in times.windows(2).enumerate() {
            let (u0, u1) = (&cell[0], &cell[1]);
            let width = u1 - u0;
            for (s, seg) in df.segments.iter().enumerate() {
                if seg.is_empty() {
                    continue;
                }
                let lo = u0.max(&df.breakpoints[s]);
                let hi = u1.min(&df.breakpoints[s + 1]);
                if lo >= hi {
                    continue;
                }
                // W(u) = W_i (u1 - u)/width + W_{i+1} (u - u0)/width on the cell
                let left = poly_mul(seg, &[u1.clone(), -Rational::one()]);
                let right = poly_mul(seg, &[-u0.clone(), Rational::one()]);
                weights[i] -= poly_integral(&left, lo, hi) / &width;
                weights[i + 1] -= poly_integral(&right, lo, hi) / &width;
            }
        }

        for (b, jump) in f.jumps() {
            if &b >= t {
                continue;
            }
            let i = times.partition_point(|u| u <= &b) - 1;
            let (u0, u1) = (&times[i], &times[i + 1]);
            let width = u1 - u0;
            weights[i] -= &jump * (u1 - &b) / &width;
            weights[i + 1] -= &jump * (&b - u0) / &width;
        }

        Ok(StieltjesWeights {
            grid_weights: weights.iter().map(exact::to_f64).collect(),
            endpoint_weight: exact::to_f64(&f_end),
            exact_grid_weights: weights,
            exact_endpoint_weight: f_end,
        })
    }

    /// The integral in exact arithmetic, the samples taken at their binary values.
    pub fn apply_exact(&self, values: &[Rational], endpoint_jump: &Rational) -> Rational {
        let mut z: Rational = self
            .exact_grid_weights
            .iter()
            .zip(values)
            .filter(|(w, _)| !w.is_zero())
            .map(|(w, v)| w * v)
            .sum();
        if !endpoint_jump.is_zero() {
            z += &self.exact_endpoint_weight * endpoint_jump;
        }
        z
    }

    pub fn apply(&self, values: &[f64], endpoint_jump: f64) -> f64 {
        let mut z: f64 = self.grid_weights.iter().zip(values).map(|(w, v)| w * v).sum();
        if endpoint_jump != 0.0 {
            z += self.endpoint_weight * endpoint_jump;
        }
        z
    }
}

/// `∫_0^t f dW` along the sampled prefix.
pub fn stieltjes_along_prefix(f: &PiecewisePolynomial, path: &PathPrefix) -> Result<f64> {
    if f.horizon() != path.horizon() {
        return Err(Error::Domain(format!(
            "kernel horizon {} differs from path horizon {}",
            f.horizon(),
            path.horizon()
        )));
    }
    let weights = StieltjesWeights::new(f, &path.times)?;
    Ok(weights.apply(&path.values, path.endpoint_jump))
}
