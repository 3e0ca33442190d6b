//! Ground truth: seeded Monte Carlo conditional expectations and exact Gaussian moments.

use num_traits::Zero;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{self, Rational};
use crate::functional::WienerFunctional;
use crate::kernel::{PathPrefix, PiecewisePolynomial, StieltjesWeights};

/// Standard normal draws keyed by `(seed, sample, time index)`.
///
/// Each sample owns a ChaCha20 stream; time index `k` always reads words
/// `4k..4k+4` of it, so a draw does not depend on how samples are split across
/// threads or on how many other draws were taken.
#[derive(Clone, Debug)]
pub struct NormalStream {
    base: ChaCha20Rng,
}

const WORDS_PER_DRAW: u128 = 4;

fn box_muller(a: u64, b: u64) -> f64 {
    // u1 in (0, 1], u2 in [0, 1)
    let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        NormalStream {
            base: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn normal(&self, sample: u64, time_index: u64) -> f64 {
        let mut rng = self.base.clone();
        rng.set_stream(sample);
        rng.set_word_pos(u128::from(time_index) * WORDS_PER_DRAW);
        box_muller(rng.next_u64(), rng.next_u64())
    }

    /// The draws for time indices `0..count` of one sample, in order.
    pub fn fill(&self, sample: u64, out: &mut [f64]) {
        let mut rng = self.base.clone();
        rng.set_stream(sample);
        rng.set_word_pos(0);
        for x in out {
            *x = box_muller(rng.next_u64(), rng.next_u64());
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
    /// Steps of the continuation grid from `t` to `T`.
    pub grid_steps: usize,
    #[serde(default)]
    pub antithetic: bool,
}

impl McConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        McConfig {
            samples,
            seed,
            grid_steps: 16,
            antithetic: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::config("n", "need at least two samples"));
        }
        if self.antithetic && self.samples < 4 {
            return Err(Error::config("n", "antithetic sampling needs at least two pairs"));
        }
        if self.grid_steps == 0 {
            return Err(Error::config("grid_steps", "need at least one continuation step"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Path evaluations that entered the estimate.
    pub samples_used: usize,
    /// Evaluations that came out non-finite; excluded from the mean and flagged here.
    pub non_finite: usize,
}

impl McEstimate {
    pub fn is_flagged(&self) -> bool {
        self.non_finite > 0
    }
}

/// Running mean and variance, fixed summation order.
#[derive(Default)]
struct Welford {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn std_error(&self) -> f64 {
        if self.count < 2 {
            return f64::INFINITY;
        }
        (self.m2 / (self.count - 1) as f64).sqrt() / (self.count as f64).sqrt()
    }
}

/// `E[F | F_t]` by simulating Brownian continuations of the prefix.
pub fn mc_conditional_expectation(f: &WienerFunctional, path: &PathPrefix, cfg: &McConfig) -> Result<McEstimate> {
    cfg.validate()?;
    if !f.is_scalar() {
        return Err(Error::Usage(format!(
            "Monte Carlo needs a functional without free variables, got {:?}",
            f.free_vars()
        )));
    }
    if path.horizon() != f.horizon() {
        return Err(Error::Domain("path and functional horizons differ".into()));
    }
    if path.endpoint_jump() != 0.0 {
        return Err(Error::Usage("cannot continue a path carrying an endpoint jump".into()));
    }
    let t = path.end_time().clone();
    let horizon = f.horizon().clone();
    let steps = if t == horizon { 0 } else { cfg.grid_steps };
    let ext_times: Vec<Rational> = (1..=steps)
        .map(|k| &t + (&horizon - &t) * exact::rat(k as i64, steps as i64))
        .collect();
    let mut full_times = path.times().to_vec();
    full_times.extend(ext_times.iter().cloned());
    let prefix_len = path.times().len();

    let compiled = f.compile(&Default::default())?;
    // z_i = (fixed prefix part) + Σ_j w_ij W(u_j) over the continuation
    let weights = f
        .basis()
        .iter()
        .map(|z| StieltjesWeights::new(z.kernel(), &full_times))
        .collect::<Result<Vec<_>>>()?;
    let prefix_part: Vec<f64> = weights
        .iter()
        .map(|w| {
            w.grid_weights[..prefix_len]
                .iter()
                .zip(path.values())
                .map(|(a, v)| a * v)
                .sum()
        })
        .collect();
    let ext_weights: Vec<&[f64]> = weights.iter().map(|w| &w.grid_weights[prefix_len..]).collect();
    let dt_sqrt = if steps == 0 {
        0.0
    } else {
        (exact::to_f64(&(&horizon - &t)) / steps as f64).sqrt()
    };
    let start = path.end_value();
    let stream = NormalStream::new(cfg.seed);

    let evaluate = |normals: &[f64], sign: f64| -> f64 {
        let mut w = start;
        let mut z = prefix_part.clone();
        for (j, n) in normals.iter().enumerate() {
            w += sign * dt_sqrt * n;
            for (zi, wts) in z.iter_mut().zip(&ext_weights) {
                *zi += wts[j] * w;
            }
        }
        compiled.value(&z)
    };

    let draws = if cfg.antithetic { cfg.samples / 2 } else { cfg.samples };
    let outcomes: Vec<(f64, usize)> = (0..draws as u64)
        .into_par_iter()
        .map_init(
            || vec![0.0; steps],
            |normals, i| {
                stream.fill(i, normals);
                if cfg.antithetic {
                    let a = evaluate(normals, 1.0);
                    let b = evaluate(normals, -1.0);
                    let bad = usize::from(!a.is_finite()) + usize::from(!b.is_finite());
                    (0.5 * (a + b), bad)
                } else {
                    let a = evaluate(normals, 1.0);
                    (a, usize::from(!a.is_finite()))
                }
            },
        )
        .collect();

    let mut acc = Welford::default();
    let mut non_finite = 0;
    for (value, bad) in outcomes {
        if bad == 0 {
            acc.push(value);
        } else {
            non_finite += bad;
        }
    }
    if acc.count < 2 {
        return Err(Error::NumericOverflow(format!(
            "only {} finite Monte Carlo outcomes ({non_finite} non-finite)",
            acc.count
        )));
    }
    let per_outcome = if cfg.antithetic { 2 } else { 1 };
    Ok(McEstimate {
        mean: acc.mean,
        std_error: acc.std_error(),
        samples_used: acc.count * per_outcome,
        non_finite,
    })
}

/// `E[(m + σN)^n]` for standard normal `N`.
fn shifted_moment(n: u32, m: f64, sigma: f64) -> f64 {
    let mut total = 0.0;
    let mut binom = 1.0; // C(n, k)
    let mut double_fact = 1.0; // (k-1)!! for even k
    for k in 0..=n {
        if k > 0 {
            binom = binom * f64::from(n - k + 1) / f64::from(k);
        }
        if k % 2 == 0 {
            if k >= 2 {
                double_fact *= f64::from(k - 1);
            }
            total += binom * m.powi((n - k) as i32) * sigma.powi(k as i32) * double_fact;
        }
    }
    total
}

pub const MAX_MOMENT_DEGREE: u32 = 12;

/// Exact `E[F | F_t]` given `W(t) = w`, for `F = Σ c · W(T)^n · exp(b·W(T) + c0)`
/// with `n <= 12`.
pub fn gaussian_moment_expectation(f: &WienerFunctional, t: &Rational, w: f64) -> Result<f64> {
    let horizon = f.horizon();
    if t < &Rational::zero() || t > horizon {
        return Err(Error::Domain(format!("time {t} lies outside [0, {horizon}]")));
    }
    if !f.is_scalar() {
        return Err(Error::Unsupported("functional has free time variables".into()));
    }
    match f.basis() {
        [] => {}
        [z] if *z.kernel() == PiecewisePolynomial::one(horizon)? => {}
        _ => {
            return Err(Error::Unsupported(
                "only functionals of W(T) alone have a moment oracle".into(),
            ))
        }
    }
    let variance = exact::to_f64(&(horizon - t));
    let sigma = variance.sqrt();
    let mut total = 0.0;
    for term in f.terms() {
        if !term.exp_arg.is_affine() {
            return Err(Error::Unsupported("exponent is quadratic in W(T)".into()));
        }
        let n = term.exponents.first().copied().unwrap_or(0);
        if n > MAX_MOMENT_DEGREE {
            return Err(Error::Unsupported(format!(
                "degree {n} exceeds the supported {MAX_MOMENT_DEGREE}"
            )));
        }
        let b = term.exp_arg.linear().first().map(exact::to_f64).unwrap_or(0.0);
        let c0 = exact::to_f64(term.exp_arg.constant());
        // E[X^n e^{bX}] = e^{bw + b²σ²/2} E[(w + bσ² + σN)^n] for X ~ N(w, σ²)
        let shift = (b * w + 0.5 * b * b * variance + c0).exp();
        total += exact::to_f64(&term.coefficient) * shift * shifted_moment(n, w + b * variance, sigma);
    }
    if !total.is_finite() {
        return Err(Error::NumericOverflow(format!("moment value {total} is not finite")));
    }
    Ok(total)
}
