use malliavin_core::exact::{from_f64, int, rat};
use malliavin_core::kernel::{pp_arith, stieltjes_along_prefix, KernelOp, StieltjesWeights};
use malliavin_core::{PathPrefix, PiecewisePolynomial, Rational};
use proptest::prelude::*;

fn small_rational() -> impl Strategy<Value = Rational> {
    (-20i64..=20, 1i64..=6).prop_map(|(p, q)| rat(p, q))
}

/// Kernels on `[0, 1]` with up to three segments of degree up to two.
fn kernel() -> impl Strategy<Value = PiecewisePolynomial> {
    (1usize..=3)
        .prop_flat_map(|n| {
            (
                proptest::collection::btree_set(1i64..16, n - 1),
                proptest::collection::vec(proptest::collection::vec(small_rational(), 0..=3), n),
            )
        })
        .prop_map(|(cuts, segments)| {
            let mut breakpoints = vec![int(0)];
            breakpoints.extend(cuts.into_iter().map(|c| rat(c, 16)));
            breakpoints.push(int(1));
            PiecewisePolynomial::from_segments(breakpoints, segments).unwrap()
        })
}

/// A sorted triple in `[0, 1]` on the 1/48 grid.
fn bounds() -> impl Strategy<Value = (Rational, Rational, Rational)> {
    proptest::collection::vec(0i64..=48, 3).prop_map(|mut v| {
        v.sort();
        (rat(v[0], 48), rat(v[1], 48), rat(v[2], 48))
    })
}

/// Paths on a shared grid over `[0, 3/4]` with small dyadic values, so midpoint
/// interpolation is exact in f64.
fn dyadic_paths(count: usize) -> impl Strategy<Value = Vec<PathPrefix>> {
    (1usize..=6)
        .prop_flat_map(move |n| proptest::collection::vec(proptest::collection::vec(-64i32..=64, n), count))
        .prop_map(|raws| {
            raws.into_iter()
                .map(|raw| {
                    let n = raw.len();
                    let times = (0..=n).map(|k| rat(3 * k as i64, 4 * n as i64)).collect();
                    let mut values = vec![0.0];
                    values.extend(raw.iter().map(|&v| v as f64 / 8.0));
                    PathPrefix::new(times, values, int(1)).unwrap()
                })
                .collect()
        })
}

fn dyadic_path() -> impl Strategy<Value = PathPrefix> {
    dyadic_paths(1).prop_map(|mut v| v.pop().unwrap())
}

fn sample_points() -> Vec<Rational> {
    (0..=96).map(|k| rat(k, 96)).collect()
}

fn exact_integral(f: &PiecewisePolynomial, path: &PathPrefix) -> Rational {
    let w = StieltjesWeights::new(f, path.times()).unwrap();
    let (values, jump) = path.exact_values();
    w.apply_exact(&values, &jump)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn integrate_is_additive(f in kernel(), (a, b, c) in bounds()) {
        let split = f.integrate(&a, &b).unwrap() + f.integrate(&b, &c).unwrap();
        prop_assert_eq!(split, f.integrate(&a, &c).unwrap());
    }

    #[test]
    fn arithmetic_commutes_and_associates(f in kernel(), g in kernel(), h in kernel()) {
        let fg = pp_arith(&f, KernelOp::Add(&g)).unwrap();
        let gf = pp_arith(&g, KernelOp::Add(&f)).unwrap();
        let f_gh = pp_arith(&f, KernelOp::Add(&pp_arith(&g, KernelOp::Add(&h)).unwrap())).unwrap();
        let fg_h = pp_arith(&fg, KernelOp::Add(&h)).unwrap();
        let fm = pp_arith(&f, KernelOp::Multiply(&g)).unwrap();
        let mf = pp_arith(&g, KernelOp::Multiply(&f)).unwrap();
        let f_m_gh = pp_arith(&f, KernelOp::Multiply(&pp_arith(&g, KernelOp::Multiply(&h)).unwrap())).unwrap();
        let fg_m_h = pp_arith(&fm, KernelOp::Multiply(&h)).unwrap();
        for u in sample_points() {
            let at = |k: &PiecewisePolynomial| k.value_at(&u).unwrap();
            prop_assert_eq!(at(&fg), at(&gf));
            prop_assert_eq!(at(&f_gh), at(&fg_h));
            prop_assert_eq!(at(&fm), at(&mf));
            prop_assert_eq!(at(&f_m_gh), at(&fg_m_h));
            prop_assert_eq!(at(&fg), at(&f) + at(&g));
            prop_assert_eq!(at(&fm), at(&f) * at(&g));
        }
    }

    #[test]
    fn stieltjes_is_linear_in_the_kernel(f in kernel(), g in kernel(), c in small_rational(), path in dyadic_path()) {
        let combo = pp_arith(&f, KernelOp::Add(&pp_arith(&g, KernelOp::Scale(&c)).unwrap())).unwrap();
        prop_assert_eq!(
            exact_integral(&combo, &path),
            exact_integral(&f, &path) + &c * exact_integral(&g, &path)
        );
    }

    #[test]
    fn stieltjes_is_linear_in_the_path(f in kernel(), pq in dyadic_paths(2), c in -4i32..=4) {
        let (p, q) = (&pq[0], &pq[1]);
        let values: Vec<f64> = p.values().iter().zip(q.values()).map(|(a, b)| a + c as f64 * b).collect();
        let combo = PathPrefix::new(p.times().to_vec(), values, int(1)).unwrap();
        prop_assert_eq!(
            exact_integral(&f, &combo),
            exact_integral(&f, p) + int(c as i64) * exact_integral(&f, q)
        );
    }

    #[test]
    fn refining_the_grid_is_exact(f in kernel(), path in dyadic_path()) {
        let mut times = Vec::new();
        let mut values = Vec::new();
        for k in 0..path.times().len() {
            if k > 0 {
                times.push((&path.times()[k - 1] + &path.times()[k]) / int(2));
                values.push((path.values()[k - 1] + path.values()[k]) / 2.0);
            }
            times.push(path.times()[k].clone());
            values.push(path.values()[k]);
        }
        let fine = PathPrefix::new(times, values, int(1)).unwrap();
        prop_assert_eq!(exact_integral(&f, &fine), exact_integral(&f, &path));
        let coarse = stieltjes_along_prefix(&f, &path).unwrap();
        let refined = stieltjes_along_prefix(&f, &fine).unwrap();
        prop_assert!((coarse - refined).abs() <= 1e-12 * coarse.abs().max(1.0));
    }
}

#[test]
fn indicator_kernel_reads_the_path() {
    let path = PathPrefix::new(vec![int(0), rat(1, 4), rat(1, 2)], vec![0.0, 0.75, -0.5], int(1)).unwrap();
    let k = PiecewisePolynomial::indicator_until(&int(1), &rat(1, 4)).unwrap();
    assert_eq!(exact_integral(&k, &path), from_f64(0.75).unwrap());
    let between = PiecewisePolynomial::indicator_until(&int(1), &rat(3, 8)).unwrap();
    assert_eq!(exact_integral(&between, &path), rat(1, 8));
}
