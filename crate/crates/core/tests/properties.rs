use concurrent_nmf::baselines::{lee_seung_step, oscillation_instance, MuVariant};
use concurrent_nmf::matrix::matmul;
use concurrent_nmf::mwu::{default_c, mwu_step, mwu_step_parallel, SimplexState};
use concurrent_nmf::objective::{
    evaluate, gradient, hessian_quadratic_form, hessian_vector_product, special_direction,
};
use concurrent_nmf::stationarity::{
    balance_columns, check_fosp_nmf, check_fosp_snmf, check_sosp_snmf, rescale_to_simplex,
};
use concurrent_nmf::{solve, Classification, DenseMatrix, FactorPair, MwuConfig, Tolerances};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = DenseMatrix> {
    proptest::collection::vec(lo..=hi, rows * cols)
        .prop_map(move |data| DenseMatrix::new(rows, cols, data).unwrap())
}

/// `(V, p)` with `n, m <= 6`, `r <= 3` and entries in `(0, 1]`.
fn problem() -> impl Strategy<Value = (DenseMatrix, FactorPair)> {
    (1usize..=6, 1usize..=6, 1usize..=3).prop_flat_map(|(n, m, r)| {
        (
            matrix(n, m, 1e-3, 1.0),
            matrix(n, r, 1e-3, 1.0),
            matrix(r, m, 1e-3, 1.0),
        )
            .prop_map(|(v, w, h)| (v, FactorPair::new(w, h).unwrap()))
    })
}

fn direction_like(p: &FactorPair, seed: u64) -> FactorPair {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    FactorPair::from_flat(p.n(), p.r(), p.m(), &flat, true).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matmul_is_associative(a in matrix(8, 8, 0.0, 1.0), b in matrix(8, 8, 0.0, 1.0), c in matrix(8, 8, 0.0, 1.0)) {
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        for (x, y) in left.as_slice().iter().zip(right.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0));
        }
        prop_assert_eq!(matmul(&a, &b).unwrap(), matmul(&a, &b).unwrap());
    }

    #[test]
    fn csv_round_trip(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DenseMatrix::from_fn(rows, cols, |_, _| {
            let mag: f64 = rng.random_range(-300.0..300.0);
            rng.random_range(-1.0..1.0) * 10f64.powf(mag)
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        m.write_csv(&path).unwrap();
        let back = DenseMatrix::read_csv(&path).unwrap();
        prop_assert_eq!(back.shape(), m.shape());
        for (x, y) in back.as_slice().iter().zip(m.as_slice()) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn gradient_matches_central_differences((v, p) in problem()) {
        let g = gradient(&v, &p).unwrap().to_flat();
        let x = p.to_flat();
        let (n, r, m) = (p.n(), p.r(), p.m());
        let f = |flat: &[f64]| evaluate(&v, &FactorPair::from_flat(n, r, m, flat, false).unwrap()).unwrap();
        let h = 1e-5;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            let err = (g[i] - fd).abs();
            prop_assert!(err <= 1e-8 || err <= 1e-5 * g[i].abs().max(fd.abs()), "entry {i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn hessian_form_matches_second_differences((v, p) in problem(), seed in any::<u64>()) {
        let d = direction_like(&p, seed);
        let q = hessian_quadratic_form(&v, &p, &d).unwrap();
        let t = 1e-4;
        let f0 = evaluate(&v, &p).unwrap();
        let fd = (evaluate(&v, &p.axpy(t, &d).unwrap()).unwrap()
            + evaluate(&v, &p.axpy(-t, &d).unwrap()).unwrap()
            - 2.0 * f0)
            / (t * t);
        // Cancellation in the numerator limits absolute accuracy to about eps * F / t^2.
        let noise = 1e-7 * f0.max(1.0);
        prop_assert!((q - fd).abs() <= 1e-4 * q.abs().max(fd.abs()) + noise, "{q} vs {fd}");
    }

    #[test]
    fn special_direction_identity((v, p) in problem()) {
        let g = gradient(&v, &p).unwrap();
        for k in 0..p.r() {
            let hd = hessian_vector_product(&v, &p, &special_direction(&p, k).unwrap()).unwrap();
            for i in 0..p.n() {
                for kk in 0..p.r() {
                    let want = if kk == k { -g.w[(i, k)] } else { 0.0 };
                    prop_assert!((hd.w[(i, kk)] - want).abs() <= 1e-10);
                }
            }
            for kk in 0..p.r() {
                for j in 0..p.m() {
                    let want = if kk == k { g.h[(k, j)] } else { 0.0 };
                    prop_assert!((hd.h[(kk, j)] - want).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn diagonal_rescaling_leaves_objective_unchanged((v, p) in problem(), scales in proptest::collection::vec(0.5f64..2.0, 3)) {
        let mut q = p.clone();
        for (k, &d) in scales.iter().enumerate().take(p.r()) {
            for i in 0..p.n() {
                q.w[(i, k)] *= d;
            }
            for j in 0..p.m() {
                q.h[(k, j)] /= d;
            }
        }
        let a = evaluate(&v, &p).unwrap();
        let b = evaluate(&v, &q).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(b).max(f64::MIN_POSITIVE) + 1e-15 * v.frobenius_norm_sq());
    }

    #[test]
    fn scaled_problem_identity((v, p) in problem(), c in 0.5f64..50.0) {
        let direct = evaluate(&v, &p.scaled(c)).unwrap();
        let via_scaled = c.powi(4) * evaluate(&v.scaled(1.0 / (c * c)), &p).unwrap();
        prop_assert!((direct - via_scaled).abs() <= 1e-9 * direct.max(via_scaled).max(1e-6 * v.frobenius_norm_sq()));
    }

    #[test]
    fn mwu_step_stays_on_simplex_and_descends(v in matrix(4, 3, 0.0, 1.0), seed in any::<u64>()) {
        let c = default_c(&v, 2).unwrap();
        let vs = v.scaled(1.0 / (c * c));
        let s = SimplexState::random(4, 2, 3, seed);
        let cfg = MwuConfig { seed, max_iters: 200, keep_iterates: true, ..MwuConfig::default() };
        let trace = solve(&v, 2, &cfg).unwrap();
        for it in &trace.iterates {
            prop_assert!((it.mass() - 1.0).abs() <= 1e-10);
            prop_assert!(it.min_entry() >= -1e-10);
        }
        for w in trace.records.windows(2) {
            prop_assert!(w[1].objective <= w[0].objective * (1.0 + 1e-12));
        }
        // Parallel application is bitwise identical for any pool size.
        let seq = mwu_step(&vs, &s, trace.epsilon_initial).unwrap();
        for threads in [2, 3, 4] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let par = pool.install(|| mwu_step_parallel(&vs, &s, trace.epsilon_initial)).unwrap();
            prop_assert_eq!(&par, &seq);
        }
    }

    #[test]
    fn exact_factorizations_are_mwu_fixed_points_and_fosp(
        w in matrix(3, 2, 0.0, 1.0),
        h in matrix(2, 4, 0.0, 1.0),
        mask in proptest::collection::vec(any::<bool>(), 14),
    ) {
        // Zero out some entries to put the point on the boundary.
        let mut p = FactorPair::new(w, h).unwrap();
        for (x, &keep) in p.w.as_mut_slice().iter_mut().chain(p.h.as_mut_slice()).zip(&mask) {
            if !keep { *x = 0.0; }
        }
        let v = p.product();
        prop_assume!(v.frobenius_norm() > 1e-3);
        // Columns whose W and H parts are zero on only one side contribute nothing; drop them.
        for k in 0..2 {
            let a: f64 = (0..3).map(|i| p.w[(i, k)]).sum();
            let b: f64 = (0..4).map(|j| p.h[(k, j)]).sum();
            if a == 0.0 || b == 0.0 {
                for i in 0..3 { p.w[(i, k)] = 0.0; }
                for j in 0..4 { p.h[(k, j)] = 0.0; }
            }
        }
        let c = default_c(&v, 2).unwrap();
        let q = rescale_to_simplex(&p, c).unwrap();
        let s = SimplexState::from_pair(&q.scaled(1.0 / c));
        let next = mwu_step(&v.scaled(1.0 / (c * c)), &s, 0.1).unwrap();
        prop_assume!(next.max_change(&s) <= 1e-14);
        let tol = Tolerances::default();
        let report = check_fosp_snmf(&v, &s.scaled(c).pair(), c, &tol).unwrap();
        prop_assert!(report.classification.is_fosp(), "{:?}", report);
    }

    #[test]
    fn rescaler_preserves_product_and_mass(w in matrix(4, 3, 1e-3, 1.0), h in matrix(3, 5, 1e-3, 1.0)) {
        let p = FactorPair::new(w, h).unwrap();
        let v = p.product();
        let c = default_c(&v, 3).unwrap();
        let q = rescale_to_simplex(&p, c).unwrap();
        let wh = v.frobenius_norm();
        prop_assert!(q.product().sub(&v).unwrap().frobenius_norm() <= 1e-10 * (1.0 + wh));
        prop_assert!((q.mass() - c).abs() <= 1e-9);
        let b = balance_columns(&p).unwrap();
        let bound = 2.0 * 20f64.powf(0.25) * wh.sqrt();
        for k in 0..3 {
            let col: f64 = (0..4).map(|i| b.w[(i, k)]).sum::<f64>() + (0..5).map(|j| b.h[(k, j)]).sum::<f64>();
            prop_assert!(col <= bound + 1e-9);
        }
    }

    #[test]
    fn loosening_grad_tol_keeps_fosp((v, p) in problem(), factor in 1.0f64..1e4) {
        let tol = Tolerances { grad_tol: 1e-2, ..Tolerances::default() };
        let tight = check_fosp_nmf(&v, &p, &tol).unwrap();
        let loose = check_fosp_nmf(&v, &p, &Tolerances { grad_tol: tol.grad_tol * factor, ..tol }).unwrap();
        prop_assert!(!tight.classification.is_fosp() || loose.classification.is_fosp());
    }

    #[test]
    fn lee_seung_keeps_positivity((v, p) in problem()) {
        for variant in [MuVariant::Alternating, MuVariant::Concurrent] {
            let mut q = p.clone();
            for _ in 0..20 {
                q = lee_seung_step(&v, &q, variant, 1e-12).unwrap().pair;
                prop_assert!(q.min_entry() > 0.0);
            }
        }
    }
}

#[test]
fn alternating_lee_seung_is_monotone_on_random_positive_instances() {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let (n, m, r) = (
            rng.random_range(2..=6),
            rng.random_range(2..=6),
            rng.random_range(1..=3),
        );
        let mut draw =
            |rows, cols| DenseMatrix::from_fn(rows, cols, |_, _| 1.0 - rng.random::<f64>());
        let v = draw(n, m);
        let mut p = FactorPair::new(draw(n, r), draw(r, m)).unwrap();
        let mut prev = evaluate(&v, &p).unwrap();
        for _ in 0..200 {
            p = lee_seung_step(&v, &p, MuVariant::Alternating, 1e-12)
                .unwrap()
                .pair;
            let f = evaluate(&v, &p).unwrap();
            assert!(f <= prev + 1e-12 * prev.max(1.0), "{f} > {prev}");
            prev = f;
        }
    }
}

#[test]
fn concurrent_lee_seung_revisits_ten_in_every_window() {
    let (v, init) = oscillation_instance();
    let mut p = init;
    let mut values = Vec::new();
    for _ in 0..60 {
        p = lee_seung_step(&v, &p, MuVariant::Concurrent, 1e-12)
            .unwrap()
            .pair;
        values.push(evaluate(&v, &p).unwrap());
    }
    for window in values[1..].windows(3) {
        assert!(window.iter().any(|&f| (f - 10.0).abs() <= 1e-9));
    }
}

#[test]
fn snmf_candidates_from_the_solver_are_nmf_stationary() {
    let shapes = [(3, 3, 1, true), (4, 5, 1, false), (2, 2, 2, true)];
    let mut candidates = 0;
    for (n, m, r, exact) in shapes {
        let kind = if exact {
            concurrent_nmf::harness::InstanceKind::RandomRankR
        } else {
            concurrent_nmf::harness::InstanceKind::RandomDense
        };
        let v = concurrent_nmf::harness::generate_instance(&kind, n, m, r, 21).unwrap();
        let tol = Tolerances::scaled_for(&v);
        for seed in 0..20 {
            let cfg = MwuConfig {
                seed,
                ..MwuConfig::default()
            };
            let trace = solve(&v, r, &cfg).unwrap();
            let p = trace.factors();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let snmf = check_sosp_snmf(&v, &p, trace.c_constant, &tol, 500, &mut rng).unwrap();
            if snmf.classification == Classification::SospCandidate {
                candidates += 1;
                assert!(check_fosp_nmf(&v, &p, &tol)
                    .unwrap()
                    .classification
                    .is_fosp());
                assert!(
                    snmf.multiplier_c.unwrap().abs() <= 1e-6,
                    "{:?}",
                    snmf.multiplier_c
                );
            }
        }
    }
    assert!(candidates > 0);
}
