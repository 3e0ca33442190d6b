use malliavin_core::bte::{backward_sweep, bte_step, gamma_coefficient, gamma_evaluate, BteConfig};
use malliavin_core::builtin;
use malliavin_core::exact::{factorial, int, pow, rat};
use malliavin_core::oracle::{gaussian_moment_expectation, NormalStream};
use malliavin_core::{GaussianIntegral, PathPrefix, PiecewisePolynomial, Rational, WienerFunctional};
use proptest::prelude::*;

fn one() -> Rational {
    int(1)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

#[test]
fn frozen_gamma_values_up_to_twelve() {
    for d in [rat(1, 2), rat(1, 7), rat(3, 5), int(2)] {
        for l in 0..=12usize {
            let value = gamma_coefficient(l).evaluate_exact(&d, &int(0));
            let expected = if l % 2 == 0 {
                pow(&(&d / int(2)), l / 2) / factorial(l / 2)
            } else {
                int(0)
            };
            assert_eq!(value, expected, "l = {l}, delta = {d}");
        }
    }
}

#[test]
fn gamma_degree_in_x_is_the_order() {
    assert_eq!(gamma_coefficient(0).coefficient(0, 0), int(1));
    for l in 0..=12usize {
        let g = gamma_coefficient(l);
        assert_eq!(g.degree_in_x() as usize, l);
        assert_eq!(g.coefficient(0, l as u32), pow(&int(-1), l) / factorial(l));
    }
}

#[test]
fn low_order_polynomials() {
    let g3 = gamma_coefficient(3);
    assert_eq!(g3.coefficient(0, 3), rat(-1, 6));
    assert_eq!(g3.coefficient(1, 1), rat(-1, 2));
    assert_eq!(g3.coefficients().len(), 2);
    let g4 = gamma_coefficient(4);
    assert_eq!(g4.coefficient(0, 4), rat(1, 24));
    assert_eq!(g4.coefficient(1, 2), rat(1, 4));
    assert_eq!(g4.coefficient(2, 0), rat(1, 8));
    assert_eq!(g4.coefficients().len(), 3);
    assert_eq!(gamma_evaluate(2, 1.0 / 8.0, 0.0), 1.0 / 16.0);
    assert_eq!(gamma_evaluate(1, 0.25, 0.1), -0.1);
}

proptest! {
    #[test]
    fn gamma_parity(l in 0usize..=10, delta in 0.001f64..2.0, x in -3.0f64..3.0) {
        let plus = gamma_evaluate(l, delta, x);
        let minus = gamma_evaluate(l, delta, -x);
        let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
        prop_assert!((minus - sign * plus).abs() <= 1e-14 * plus.abs().max(1.0));
    }
}

#[test]
fn step_on_the_terminal_value_recovers_the_start() {
    let w = WienerFunctional::terminal_value(&one()).unwrap();
    for dw in [0.25, -1.5, 3.0] {
        let g = bte_step(&w, &one(), &rat(1, 3), dw, 1).unwrap();
        let path = PathPrefix::new(vec![int(0), rat(2, 3), one()], vec![0.0, 0.5, 0.5 + dw], one()).unwrap();
        let v = g.freeze_evaluate(&path, &Default::default()).unwrap();
        assert!((v - 0.5).abs() <= 1e-15, "{v}");
    }
}

#[test]
fn one_step_cube() {
    let f = builtin::monomial(3, &one()).unwrap();
    let t = rat(3, 8);
    let w = 0.7;
    let prefix = PathPrefix::new(vec![int(0), t.clone()], vec![0.0, w], one()).unwrap();
    for dw in [0.0, 0.4, -2.5] {
        let cfg = BteConfig::frozen(1, &one() - &t, 3).with_increments(vec![dw]);
        let v = backward_sweep(&f, &cfg, &prefix).unwrap();
        let expected = w * w * w + 3.0 * 0.625 * w;
        assert!(rel(v, expected) <= 1e-14, "{v} vs {expected}");
    }
}

/// Functionals of the path on the step grid with `D^{L+1} F = 0`, so every
/// chosen path gives the same answer.
#[test]
fn path_choice_invariance_at_full_order() {
    let w_half = WienerFunctional::linear(GaussianIntegral::new(
        PiecewisePolynomial::indicator_until(&one(), &rat(1, 2)).unwrap(),
    ));
    let cases = [
        (builtin::monomial(3, &one()).unwrap(), 3),
        (builtin::monomial(4, &one()).unwrap(), 4),
        (w_half.product(&builtin::monomial(2, &one()).unwrap()).unwrap(), 3),
    ];
    let t = rat(1, 4);
    let prefix = PathPrefix::sampled(&t, 4, one(), |u| 0.8 * u - 0.3).unwrap();
    let stream = NormalStream::new(99);
    let steps = 3;
    let step = (&one() - &t) / int(steps as i64);
    for (f, order) in &cases {
        let frozen = backward_sweep(f, &BteConfig::frozen(steps, step.clone(), *order), &prefix).unwrap();
        for draw in 0..20u64 {
            let increments: Vec<f64> = (0..steps as u64).map(|k| stream.normal(draw, k)).collect();
            let cfg = BteConfig::frozen(steps, step.clone(), *order).with_increments(increments);
            let v = backward_sweep(f, &cfg, &prefix).unwrap();
            assert!(rel(v, frozen) <= 1e-10, "case {}: {v} vs {frozen}", f.term_count());
        }
    }
}

#[test]
fn multi_step_sweeps() {
    let square = builtin::monomial(2, &one()).unwrap();
    let v = backward_sweep(&square, &BteConfig::frozen(4, rat(1, 4), 2), &PathPrefix::origin(one())).unwrap();
    assert_eq!(v, 1.0);

    let c = WienerFunctional::constant(one(), rat(-7, 3));
    let cfg = BteConfig::frozen(5, rat(1, 5), 3).with_increments(vec![0.3, -0.1, 2.0, 0.0, 1.0]);
    let v = backward_sweep(&c, &cfg, &PathPrefix::origin(one())).unwrap();
    assert!((v + 7.0 / 3.0).abs() <= 1e-15);

    let e = builtin::exp_terminal(&one()).unwrap();
    // frozen second order multiplies by 1 + Δ/2 per step; e^{1/2} is 1.5% away
    let v = backward_sweep(&e, &BteConfig::frozen(8, rat(1, 8), 2), &PathPrefix::origin(one())).unwrap();
    assert!(rel(v, (17.0f64 / 16.0).powi(8)) <= 1e-14, "{v}");
    assert!(rel(v, 0.5f64.exp()) <= 2e-2);
}

#[test]
fn exactness_matches_the_moment_oracle() {
    let stream = NormalStream::new(3);
    for i in 0..10u64 {
        let t = rat(1 + i as i64, 12);
        let w = stream.normal(i, 0);
        let prefix = PathPrefix::new(vec![int(0), t.clone()], vec![0.0, w], one()).unwrap();
        for n in 0..=5u32 {
            let f = builtin::monomial(n, &one()).unwrap();
            let cfg =
                BteConfig::frozen(1, &one() - &t, n as usize + 1).with_increments(vec![stream.normal(i, 1 + n as u64)]);
            let v = backward_sweep(&f, &cfg, &prefix).unwrap();
            let reference = gaussian_moment_expectation(&f, &t, w).unwrap();
            assert!(rel(v, reference) <= 1e-12, "n = {n}: {v} vs {reference}");
        }
    }
}
