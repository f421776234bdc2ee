mod common;

use common::*;
use linsa::ensembles::Sampler;
use linsa::linalg::{unvec_rows, vec_rows};
use linsa::mc::{fit_power_law, geometric_checkpoints};
use linsa::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn matrix(max_dim: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max_dim, 1..=max_dim).prop_flat_map(|(n, m)| {
        prop::collection::vec(-10.0..10.0f64, n * m).prop_map(move |d| DMatrix::from_row_slice(n, m, &d))
    })
}

fn square(max_dim: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max_dim).prop_flat_map(|n| {
        prop::collection::vec(-2.0..2.0f64, n * n).prop_map(move |d| DMatrix::from_row_slice(n, n, &d))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn vec_unvec_round_trip(x in matrix(7)) {
        let (n, m) = x.shape();
        let y = vec_rows(&x);
        prop_assert_eq!(y[(n - 1) * m + (m - 1)], x[(n - 1, m - 1)]);
        prop_assert_eq!(unvec_rows(&y, n, m), x);
    }

    #[test]
    fn lift_reproduces_matrix_map(seed in any::<u64>(), n in 1usize..6, m in 1usize..6) {
        let mut r = rng(seed);
        let p = gaussian_matrix(&mut r, n, n);
        let c = gaussian_matrix(&mut r, m, m);
        let u = gaussian_matrix(&mut r, n, m);
        let x = gaussian_matrix(&mut r, n, m);
        let sys = lift(&p, &c, &u).unwrap();
        let lifted = sys.unvec_state(&(&sys.q * sys.vec_state(&x) + &sys.v));
        let direct = &p * &x * c.transpose() + &u;
        prop_assert!((lifted - direct).amax() <= 1e-12 * (1.0 + x.amax()));
    }

    #[test]
    fn step_is_convex_combination(p in square(5), a in 0.0..1.0f64, seed in any::<u64>()) {
        let n = p.nrows();
        let mut r = rng(seed);
        let x = gaussian_vector(&mut r, n);
        let u = gaussian_vector(&mut r, n);
        let out = step(&x, a, &p, &u).unwrap();
        let want = &x * (1.0 - a) + (&p * &x + &u) * a;
        prop_assert!((out - want).amax() <= 1e-12);
    }

    #[test]
    fn mirrored_spectrum_mirrors_the_verdict(p in square(5), seed in any::<u64>()) {
        let n = p.nrows();
        let u = gaussian_vector(&mut rng(seed), n);
        let mirrored = DMatrix::identity(n, n) * 2.0 - &p;
        let a = classify(&p, &u, GainSign::NonNegative, 1e-8).unwrap();
        let b = classify(&mirrored, &u, GainSign::NonPositive, 1e-8).unwrap();
        prop_assert_eq!(a.regime, b.regime);
        prop_assert_eq!(a.applicable_result, b.applicable_result);
    }

    #[test]
    fn projector_is_an_idempotent_invariant_map(seed in any::<u64>(), r in 1usize..=3, extra in 0usize..=3) {
        let n = (r + extra).max(2);
        let p = semisimple_unit_matrix(&mut rng(seed), n, r);
        let tol = default_tol(&p);
        let s = analyze(&p, tol).unwrap();
        prop_assert_eq!(s.alg_mult_one, r);
        let pi = projector_one(&s).unwrap();
        prop_assert!((&pi * &pi - &pi).amax() <= 10.0 * tol);
        prop_assert!((&p * &pi - &pi).amax() <= 10.0 * tol);
        prop_assert!((&pi * &p - &pi).amax() <= 10.0 * tol);
        prop_assert_eq!(pi.rank(1e-6), r);
    }

    #[test]
    fn strict_limit_solves_fixed_point_equation(seed in any::<u64>(), n in 1usize..6) {
        let mut r = rng(seed);
        let d = block_diagonal(&stable_blocks(&mut r, n, -1.0, 0.7));
        let (h, h_inv) = similarity(&mut r, n);
        let p = &h_inv * d * &h;
        let u = gaussian_vector(&mut r, n);
        let z = expected_limit(&p, &u, &DVector::zeros(n), GainSign::NonNegative, 1e-8).unwrap();
        prop_assert!((&p * &z + &u - &z).amax() <= 1e-10 * (1.0 + z.amax()));
    }

    #[test]
    fn draws_depend_only_on_seed_trial_and_step(seed in any::<u64>(), trial in 0u64..1000, s in 0u64..1_000_000) {
        let e = MatrixEnsemble::new(
            DMatrix::identity(3, 3),
            DVector::zeros(3),
            NoiseKind::IidEntrywise { sigma_p: 1.0, sigma_u: 1.0 },
            seed,
        ).unwrap();
        let x = DVector::zeros(3);
        // interleave other draws in between
        let first = e.draw(s, trial, &x);
        let _ = e.draw(s + 1, trial, &x);
        let _ = e.draw(s, trial + 1, &x);
        prop_assert_eq!(first, e.draw(s, trial, &x));
    }

    #[test]
    fn power_law_fit_recovers_exponent(k in -3.0..1.0f64, c in 0.01..100.0f64, lo in 1u64..100) {
        let pts: Vec<(f64, f64)> = (0..12).map(|i| {
            let s = (lo * (1 << i)) as f64;
            (s, c * s.powf(k))
        }).collect();
        let f = fit_power_law(&pts).unwrap();
        prop_assert!((f.exponent - k).abs() <= 1e-9);
    }

    #[test]
    fn checkpoints_are_strictly_increasing(max in 1u64..10_000_000, per in 1u32..8) {
        let c = geometric_checkpoints(max, per);
        prop_assert_eq!(c.last().copied(), Some(max));
        prop_assert!(c.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(c[0] >= 1);
    }

    #[test]
    fn partition_accepts_exactly_the_covers(n in 1usize..8, cut in 0usize..8) {
        let cut = cut.min(n);
        let groups: Vec<Vec<usize>> = [(0..cut).collect::<Vec<_>>(), (cut..n).collect()]
            .into_iter()
            .filter(|g: &Vec<usize>| !g.is_empty())
            .collect();
        prop_assert!(Partition::new(groups.clone(), n).is_ok());
        prop_assert!(Partition::new(groups.clone(), n + 1).is_err());
        let mut overlapping = groups;
        overlapping[0].push(0);
        prop_assert!(Partition::new(overlapping, n).is_err());
    }
}
