//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use malliavin_core::bte::{backward_sweep, gamma_coefficient, BteConfig};
use malliavin_core::builtin;
use malliavin_core::dyson::{dyson_evaluate, dyson_term, vertical_derivative_check};
use malliavin_core::exact::{self, factorial, int, pow, rat, Rational};
use malliavin_core::harness::{convergence_study, golden_cases, run_golden, to_json};
use malliavin_core::oracle::{gaussian_moment_expectation, mc_conditional_expectation, McConfig, NormalStream};
use malliavin_core::{PathPrefix, WienerFunctional};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn rel(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / reference.abs()
}

fn linear_prefix(t: &Rational, end: f64) -> PathPrefix {
    let tf = exact::to_f64(t);
    PathPrefix::sampled(t, 16, int(1), |u| if tf > 0.0 { end * u / tf } else { 0.0 }).unwrap()
}

fn example1_golden() -> Outcome {
    let f = builtin::example1(&int(2), &int(1)).unwrap();
    let at_origin = dyson_evaluate(&f, &int(0), &PathPrefix::origin(int(1)), 12, None).unwrap();
    let e0 = rel(at_origin.value(), 1.0 / 2f64.sqrt());

    let half = rat(1, 2);
    let path = linear_prefix(&half, 0.3);
    let midway = dyson_evaluate(&f, &half, &path, 12, None).unwrap();
    let expected = (-0.09f64 / 3.0).exp() / 1.5f64.sqrt();
    let e1 = rel(midway.value(), expected);
    outcome(
        e0 <= 1e-6 && e1 <= 1e-5,
        format!("t=0: rel err {e0:.3e} (bound 1e-6); t=1/2, W=0.3: rel err {e1:.3e} (bound 1e-5)"),
    )
}

fn example2_golden() -> Outcome {
    let horizon = int(1);
    let f = builtin::example2(&horizon).unwrap();
    let mut worst_term: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    let paths = [
        (rat(1, 4), PathPrefix::sampled(&rat(1, 4), 8, int(1), |_| 0.0).unwrap()),
        (rat(1, 2), linear_prefix(&rat(1, 2), 0.5)),
        (int(0), PathPrefix::origin(int(1))),
    ];
    for (t, path) in &paths {
        let frozen = f.freeze_evaluate(path, &BTreeMap::new()).unwrap();
        let c = exact::to_f64(&pow(&(&horizon - t), 3)) / 6.0;
        for k in 0..=5 {
            let expected = frozen * c.powi(k as i32) / exact::to_f64(&factorial(k));
            let term = dyson_term(&f, t, path, k).unwrap();
            worst_term = worst_term.max(rel(term, expected));
        }
        let sum = dyson_evaluate(&f, t, path, 12, None).unwrap().value();
        worst_sum = worst_sum.max(rel(sum, builtin::example2_conditional(&horizon, path)));
    }
    outcome(
        worst_term <= 1e-12 && worst_sum <= 1e-9,
        format!("max term rel err {worst_term:.3e} (bound 1e-12); max K=12 rel err {worst_sum:.3e} (bound 1e-9)"),
    )
}

fn gamma_values() -> Outcome {
    let g1 = gamma_coefficient(1);
    let g2 = gamma_coefficient(2);
    let g1_ok = g1.coefficients().len() == 1 && g1.coefficient(0, 1) == int(-1);
    let g2_ok = g2.coefficients().len() == 2 && g2.coefficient(0, 2) == rat(1, 2) && g2.coefficient(1, 0) == rat(1, 2);
    let frozen = |l: usize, d: &Rational| gamma_coefficient(l).evaluate_exact(d, &int(0));
    let mut frozen_ok = true;
    for d in [rat(1, 3), rat(1, 8), rat(7, 5)] {
        frozen_ok &= frozen(2, &d) == &d / int(2);
        frozen_ok &= frozen(4, &d) == &d * &d / int(8);
        for l in [1, 3, 5, 7, 9] {
            frozen_ok &= frozen(l, &d) == int(0);
        }
    }
    outcome(
        g1_ok && g2_ok && frozen_ok,
        format!("Γ1 = {}, Γ2 = {}, frozen values exact: {frozen_ok}", g1, g2),
    )
}

fn one_step_exactness() -> Outcome {
    let stream = NormalStream::new(404);
    let mut worst: f64 = 0.0;
    for i in 0..50u64 {
        let t = rat(1 + (i as i64 * 37) % 60, 64);
        let w = stream.normal(i, 0);
        let x = 2.0 * stream.normal(i, 1);
        let prefix = PathPrefix::new(vec![int(0), t.clone()], vec![0.0, w], int(1)).unwrap();
        for n in 0..=6u32 {
            let f = builtin::monomial(n, &int(1)).unwrap();
            let cfg = BteConfig::frozen(1, &int(1) - &t, n as usize).with_increments(vec![x]);
            let v = backward_sweep(&f, &cfg, &prefix).unwrap();
            let reference = gaussian_moment_expectation(&f, &t, w).unwrap();
            worst = worst.max((v - reference).abs() / reference.abs().max(1.0));
        }
    }
    outcome(
        worst <= 1e-12,
        format!("50 triples, n = 0..6: max rel err {worst:.3e} (bound 1e-12)"),
    )
}

fn rate() -> Outcome {
    let start = Instant::now();
    let f = builtin::exp_terminal(&int(1)).unwrap();
    let deltas: Vec<Rational> = (3..=7).map(|k| rat(1, 1 << k)).collect();
    let rep = convergence_study(&f, &[1, 2, 3], &deltas, 10_000, 2024).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut ok = secs <= 60.0;
    let mut parts = Vec::new();
    for fit in &rep.fits {
        let slope = fit.slope.unwrap_or(f64::NAN);
        ok &= (slope - fit.expected_slope).abs() <= 0.5;
        parts.push(format!(
            "L={} slope {slope:.3} (target {})",
            fit.order, fit.expected_slope
        ));
    }
    outcome(ok, format!("{}; {secs:.2} s", parts.join(", ")))
}

fn oracle_cross_check() -> Outcome {
    let horizon = int(1);
    let cases: Vec<(&str, WienerFunctional)> = vec![
        ("W(T)^2", builtin::monomial(2, &horizon).unwrap()),
        ("W(T)^3", builtin::monomial(3, &horizon).unwrap()),
        ("exp(W(T))", builtin::exp_terminal(&horizon).unwrap()),
        ("example1", builtin::example1(&int(2), &horizon).unwrap()),
        ("example2", builtin::example2(&horizon).unwrap()),
    ];
    let picker = NormalStream::new(77);
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for case in 0..5u64 {
        let t = rat(4 + (case as i64 * 3) % 10, 16);
        let tf = exact::to_f64(&t);
        let steps = 8;
        let increments: Vec<f64> = (0..steps)
            .map(|k| (tf / steps as f64).sqrt() * picker.normal(case, k as u64))
            .collect();
        let times = (0..=steps).map(|k| &t * rat(k as i64, steps as i64)).collect();
        let path = PathPrefix::from_increments(times, &increments, horizon.clone()).unwrap();
        let w = path.end_value();
        for (name, f) in &cases {
            let mc = mc_conditional_expectation(f, &path, &McConfig::new(100_000, 9000 + case)).unwrap();
            let oracle = match *name {
                "example1" => builtin::example1_conditional(&int(2), &t, w),
                "example2" => builtin::example2_conditional(&horizon, &path),
                _ => gaussian_moment_expectation(f, &t, w).unwrap(),
            };
            let series = dyson_evaluate(f, &t, &path, 12, None).unwrap().value();
            for reference in [oracle, series] {
                worst = worst.max((mc.mean - reference).abs() / mc.std_error);
                checks += 1;
            }
        }
    }
    outcome(
        worst <= 3.0,
        format!("{checks} comparisons: max |mc - ref| / s.e. = {worst:.3} (bound 3)"),
    )
}

fn vertical_derivatives() -> Outcome {
    let t = rat(1, 2);
    let path = linear_prefix(&t, 0.4);
    let fs = [
        ("W(T)^2", builtin::monomial(2, &int(1)).unwrap()),
        ("example2", builtin::example2(&int(1)).unwrap()),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, g) in &fs {
        let d1 = vertical_derivative_check(g, &t, &path, 1, 1e-4, 12)
            .unwrap()
            .discrepancy();
        let d2 = vertical_derivative_check(g, &t, &path, 2, 1e-3, 12)
            .unwrap()
            .discrepancy();
        ok &= d1 <= 1e-4 && d2 <= 1e-3;
        parts.push(format!("{name}: l=1 {d1:.2e}, l=2 {d2:.2e}"));
    }
    outcome(ok, format!("{} (bounds 1e-4, 1e-3)", parts.join("; ")))
}

fn determinism() -> Outcome {
    let cases = golden_cases();
    let first = to_json(&run_golden(&cases, false).unwrap());
    let second = to_json(&run_golden(&cases, false).unwrap());
    let parallel = to_json(&run_golden(&cases, true).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for name in ["a.json", "b.json"] {
        let p = dir.path().join(name);
        malliavin_core::harness::write_atomic(&p, to_json(&run_golden(&cases, false).unwrap()).as_bytes()).unwrap();
        files.push(std::fs::read(p).unwrap());
    }
    let ok = first == second && first == parallel && files[0] == files[1] && files[0] == first.as_bytes();
    outcome(
        ok,
        format!(
            "{} golden cases, {} report bytes, sequential/parallel/file copies identical: {ok}",
            cases.len(),
            first.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 example 1 golden", example1_golden),
        ("2 example 2 golden", example2_golden),
        ("3 gamma coefficients", gamma_values),
        ("4 one-step exactness", one_step_exactness),
        ("5 mean-square rate", rate),
        ("6 oracle cross-check", oracle_cross_check),
        ("7 vertical derivatives", vertical_derivatives),
        ("8 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let o = run();
        if !o.passed {
            failed += 1;
        }
        println!(
            "criterion {name}: {} ({})",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
