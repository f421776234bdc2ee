//! End-to-end acceptance criteria. Each test prints one `criterion N ... PASS|FAIL`
//! line (run with `--nocapture` to see them) and fails if the criterion does.

mod common;

use std::time::Instant;

use common::*;
use linsa::analysis::{fj_residual, Regime};
use linsa::linalg::{unvec_rows, vec_rows};
use linsa::mc::{cauchy_gap, doubling_pairs, estimate, fit_rate, geometric_checkpoints, observe_behaviour, ObservedBehaviour};
use linsa::reference_systems::{group_consensus_matrix, signed_consensus_matrix};
use linsa::*;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

fn report(id: &str, pass: bool, detail: String) {
    println!("criterion {id} ... {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} failed: {detail}");
}

fn v(data: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(data)
}

/// Greedy matching of computed eigenvalues to expected ones; largest distance.
fn match_spectrum(got: &[Complex64], want: &[Complex64]) -> f64 {
    let mut used = vec![false; got.len()];
    let mut worst = 0.0_f64;
    for w in want {
        let (k, d) = got
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, g)| (k, (g - w).norm()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .expect("same length");
        used[k] = true;
        worst = worst.max(d);
    }
    worst
}

#[test]
fn criterion_1_eigenvalue_goldens() {
    let c = |re, im| Complex64::new(re, im);
    let start = Instant::now();
    let s24 = analyze(&signed_consensus_matrix(), 1e-8).unwrap();
    let s25 = analyze(&group_consensus_matrix(), 1e-8).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let e24 = match_spectrum(
        &s24.eigenvalues,
        &[c(1.0, 0.0), c(0.5708, 0.0), c(-0.2346, 0.0), c(0.4319, 0.3270), c(0.4319, -0.3270)],
    );
    let e25 = match_spectrum(
        &s25.eigenvalues,
        &[c(1.0, 0.0), c(0.6, 0.0), c(-0.1, 0.728), c(-0.1, -0.728)],
    );
    let w = v(&[1.0, 1.0, 2.0, 2.0]);
    let fixed = (group_consensus_matrix() * &w - &w).amax();
    report(
        "1",
        e24 <= 5e-4 && e25 <= 5e-4 && fixed <= 1e-12 && elapsed < 1.0,
        format!("spectrum errors {e24:.2e} and {e25:.2e}, fixed-vector residual {fixed:.1e}, {elapsed:.3}s"),
    )
}

#[test]
fn criterion_2_consensus_and_group_consensus_at_desk_scale() {
    let noise = NoiseKind::IidEntrywise {
        sigma_p: 0.1,
        sigma_u: 0.1,
    };
    let steps = 100_000;
    let trials = 100;

    let x0 = v(&[1.0, 2.0, 3.0, 4.0, 5.0]);
    let spread = x0.max() - x0.min();
    let sc = Scenario {
        x0,
        schedule: GainSchedule::Harmonic,
        ensemble: MatrixEnsemble::new(signed_consensus_matrix(), DVector::zeros(5), noise, 1).unwrap(),
        steps,
        reference: Reference::Tail,
        partition: Some(Partition::consensus(5)),
    };
    let st = estimate(&sc, &[steps], trials, Execution::Parallel).unwrap();
    let gap_a = st.pairwise_gap.as_ref().unwrap().last().unwrap().mean;
    let ok_a = gap_a < 0.05 * spread;

    let x0 = v(&[1.0, 2.0, 3.0, 4.0]);
    let spread_b = x0.max() - x0.min();
    let sc = Scenario {
        x0,
        schedule: GainSchedule::Harmonic,
        ensemble: MatrixEnsemble::new(group_consensus_matrix(), DVector::zeros(4), noise, 2).unwrap(),
        steps,
        reference: Reference::Tail,
        partition: Some(Partition::new(vec![vec![0, 1], vec![2, 3]], 4).unwrap()),
    };
    let st = estimate(&sc, &[steps], trials, Execution::Parallel).unwrap();
    let gap_b = st.pairwise_gap.as_ref().unwrap().last().unwrap().mean;
    let groups = st.group_means.as_ref().unwrap().last().unwrap();
    let separation = (groups[0].mean - groups[1].mean).abs();
    let ok_b = gap_b < 0.05 * spread_b && separation > 10.0 * gap_b;

    report(
        "2",
        ok_a && ok_b,
        format!(
            "consensus gap {gap_a:.3e} vs {:.3}; group gap {gap_b:.3e} vs {:.3}, group means {:.4} / {:.4}",
            0.05 * spread,
            0.05 * spread_b,
            groups[0].mean,
            groups[1].mean
        ),
    )
}

#[test]
fn criterion_3_rate_exponents() {
    let window = (1_000, 100_000);
    let trials = 200;
    let x0 = v(&[1.0, 2.0, 3.0, 4.0, 5.0]);
    let cps = geometric_checkpoints(window.1, 4);

    // Strict regime: MSE to the known limit 0.
    let strict = Scenario {
        x0: x0.clone(),
        schedule: GainSchedule::power_law(GainSign::NonNegative, 2.0, 1.0, 1.0).unwrap(),
        ensemble: MatrixEnsemble::new(
            signed_consensus_matrix() * 0.5,
            DVector::zeros(5),
            NoiseKind::IidEntrywise {
                sigma_p: 0.1,
                sigma_u: 0.1,
            },
            3,
        )
        .unwrap(),
        steps: window.1,
        reference: Reference::Fixed(DVector::zeros(5)),
        partition: None,
    };
    let fit_strict = fit_rate(&estimate(&strict, &cps, trials, Execution::Parallel).unwrap(), window).unwrap();

    // Critical regime: the limit is random, so each trial is compared with its
    // own state at a horizon 20x past the fit window.
    let critical = Scenario {
        x0,
        schedule: GainSchedule::power_law(GainSign::NonNegative, 1.0, 1.0, 0.75).unwrap(),
        ensemble: MatrixEnsemble::new(
            signed_consensus_matrix(),
            DVector::zeros(5),
            NoiseKind::IidEntrywise {
                sigma_p: 0.0,
                sigma_u: 0.1,
            },
            4,
        )
        .unwrap(),
        steps: 2_000_000,
        reference: Reference::Tail,
        partition: None,
    };
    let fit_critical = fit_rate(&estimate(&critical, &cps, trials, Execution::Parallel).unwrap(), window).unwrap();

    let ok = (-1.3..=-0.7).contains(&fit_strict.exponent) && (-0.7..=-0.3).contains(&fit_critical.exponent);
    report(
        "3",
        ok,
        format!(
            "strict slope {:.3} +- {:.3} (want [-1.3, -0.7]), critical slope {:.3} +- {:.3} (want [-0.7, -0.3])",
            fit_strict.exponent, fit_strict.stderr, fit_critical.exponent, fit_critical.stderr
        ),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Category {
    Strict,
    Unstable,
    Critical,
    ComplexUnit,
    Defective,
    InputOnUnitMode,
    Dense,
}

struct CorpusSystem {
    p: DMatrix<f64>,
    u: DVector<f64>,
}

/// `P = H^-1 D H`, `u = H^-1 w` with `D` block-diagonal. Unit blocks come first.
fn corpus_system(rng: &mut rand_chacha::ChaCha8Rng, category: Category) -> CorpusSystem {
    let n: usize = rng.random_range(2..=6);
    let (mut blocks, w_unit): (Vec<Block>, Vec<f64>) = match category {
        Category::Strict => (vec![], vec![]),
        Category::Unstable => {
            let b = if n >= 3 && rng.random_bool(0.5) {
                Block::Pair(rng.random_range(1.2..2.0), rng.random_range(0.1..1.0))
            } else {
                Block::Real(rng.random_range(1.2..2.0))
            };
            let k = b.size();
            (vec![b], vec![rng.random_range(-1.0..1.0); k])
        }
        Category::Critical => {
            let r = rng.random_range(1..=2);
            (vec![Block::Real(1.0); r], vec![0.0; r])
        }
        Category::ComplexUnit => (
            vec![Block::Pair(1.0, rng.random_range(0.3..1.0))],
            vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        ),
        Category::Defective => (vec![Block::Jordan(1.0)], vec![0.0, 0.0]),
        Category::InputOnUnitMode => {
            let c = rng.random_range(0.5..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (vec![Block::Real(1.0)], vec![c])
        }
        Category::Dense => {
            // Random dense matrix kept at least 0.2 away from the critical line.
            loop {
                let scale = rng.random_range(0.3..1.2);
                let shift = rng.random_range(-0.5..1.5);
                let p = gaussian_matrix(rng, n, n) * (scale / (n as f64).sqrt()) + DMatrix::identity(n, n) * shift;
                let s = analyze(&p, default_tol(&p)).unwrap();
                if (s.rho_max_re - 1.0).abs() > 0.2 {
                    let u = gaussian_vector(rng, n);
                    return CorpusSystem { p, u };
                }
            }
        }
    };
    let used: usize = blocks.iter().map(|b| b.size()).sum();
    blocks.extend(stable_blocks(rng, n - used, -1.5, 0.8));
    let (h, h_inv) = similarity(rng, n);
    let p = &h_inv * block_diagonal(&blocks) * &h;
    let mut w = gaussian_vector(rng, n);
    for (k, val) in w_unit.iter().enumerate() {
        w[k] = *val;
    }
    CorpusSystem {
        p,
        u: h_inv * w,
    }
}

#[test]
fn criterion_4_classifier_agrees_with_simulation() {
    let mut rng = rng(4);
    let plan = [
        (Category::Strict, 20),
        (Category::Unstable, 20),
        (Category::Critical, 20),
        (Category::ComplexUnit, 10),
        (Category::Defective, 10),
        (Category::InputOnUnitMode, 10),
        (Category::Dense, 10),
    ];
    let steps = 1 << 14;
    let (s_list, s2_list) = doubling_pairs(steps, 4);
    let mut contradictions = Vec::new();
    let mut mislabelled = 0;
    let mut counts = [0usize; 2];
    let mut scenario_id = 0u64;
    for (category, count) in plan {
        for _ in 0..count {
            let sys = corpus_system(&mut rng, category);
            let n = sys.p.nrows();
            let x0 = gaussian_vector(&mut rng, n);
            for sign in [GainSign::NonNegative, GainSign::NonPositive] {
                scenario_id += 1;
                let p = match sign {
                    GainSign::NonNegative => sys.p.clone(),
                    GainSign::NonPositive => DMatrix::identity(n, n) * 2.0 - &sys.p,
                };
                let verdict = classify(&p, &sys.u, sign, default_tol(&p)).unwrap();
                let expect_converge = matches!(category, Category::Strict | Category::Critical)
                    || (category == Category::Dense && verdict.regime == Regime::ConvergesDeterministic);
                if verdict.converges() != expect_converge {
                    mislabelled += 1;
                }
                let sc = Scenario {
                    x0: x0.clone(),
                    schedule: GainSchedule::power_law(sign, 2.0, 2.0, 1.0).unwrap(),
                    ensemble: MatrixEnsemble::new(
                        p,
                        sys.u.clone(),
                        NoiseKind::IidEntrywise {
                            sigma_p: 0.05,
                            sigma_u: 0.05,
                        },
                        1000 + scenario_id,
                    )
                    .unwrap(),
                    steps,
                    reference: Reference::Tail,
                    partition: None,
                };
                let gaps = cauchy_gap(&sc, &s_list, &s2_list, 32, Execution::Parallel).unwrap();
                let observed = observe_behaviour(&gaps, x0.norm_squared());
                counts[usize::from(verdict.converges())] += 1;
                let agrees = (observed == ObservedBehaviour::Converging) == verdict.converges();
                if !agrees {
                    let first = gaps.gaps.first().unwrap().gap.mean;
                    let last = gaps.gaps.last().unwrap().gap.mean;
                    contradictions.push(format!(
                        "#{scenario_id} {category:?} {sign:?} {} observed {observed:?} gaps {first:.3e} -> {last:.3e}, witness {:?}",
                        verdict.applicable_result.label(),
                        verdict.witness
                    ));
                }
            }
        }
    }
    for c in &contradictions {
        println!("  contradiction: {c}");
    }
    report(
        "4",
        contradictions.is_empty() && mislabelled == 0,
        format!(
            "{} scenarios ({} convergent, {} divergent), {} contradictions, {mislabelled} verdicts differ from construction",
            counts[0] + counts[1],
            counts[1],
            counts[0],
            contradictions.len()
        ),
    )
}

#[test]
fn criterion_5_critical_limit_expectation() {
    let p = group_consensus_matrix();
    let x0 = v(&[1.0, 0.0, 0.0, 0.0]);
    let summary = analyze(&p, 1e-8).unwrap();
    let target = projector_one(&summary).unwrap() * &x0;
    let steps = 100_000;
    let sc = Scenario {
        x0,
        schedule: GainSchedule::power_law(GainSign::NonNegative, 2.0, 2.0, 1.0).unwrap(),
        ensemble: MatrixEnsemble::new(
            p,
            DVector::zeros(4),
            NoiseKind::IidEntrywise {
                sigma_p: 0.05,
                sigma_u: 0.0,
            },
            5,
        )
        .unwrap(),
        steps,
        reference: Reference::Tail,
        partition: None,
    };
    let st = estimate(&sc, &[steps], 400, Execution::Parallel).unwrap();
    let mean = st.state_mean.last().unwrap();
    let se = st.state_stderr.last().unwrap();
    let z: Vec<f64> = (0..4).map(|i| (mean[i] - target[i]).abs() / se[i]).collect();
    report(
        "5",
        z.iter().all(|&z| z <= 4.0),
        format!(
            "mean {:?} vs {:?}, |z| {:?}",
            mean.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>(),
            target.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>(),
            z.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>()
        ),
    )
}

#[test]
fn criterion_6_spanning_tree_iff_simple_unit_eigenvalue() {
    let mut rng = rng(6);
    let mut disagreements = 0;
    let mut with_tree = 0;
    for _ in 0..500 {
        let n = rng.random_range(2..=6);
        let density = rng.random_range(0.1..0.7);
        let p = random_row_stochastic(&mut rng, n, density);
        let tree = spanning_tree(&p, 1e-8).unwrap().is_some();
        let simple = analyze(&p, 1e-8).unwrap().alg_mult_one == 1;
        with_tree += usize::from(tree);
        if tree != simple {
            disagreements += 1;
        }
    }
    report(
        "6",
        disagreements == 0,
        format!("500 matrices, {with_tree} with a spanning tree, {disagreements} disagreements"),
    )
}

#[test]
fn criterion_7_stochastic_friedkin_johnsen() {
    let mut rng = rng(7);
    let lambda = DMatrix::from_diagonal(&v(&[0.3, 0.5, 0.7, 0.6]));
    let p = random_row_stochastic(&mut rng, 4, 0.8);
    let c = random_row_stochastic(&mut rng, 3, 0.8);
    let x0 = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
    let fixed = fj_fixed_point(&lambda, &p, &c, &x0).unwrap();
    let residual = fj_residual(&lambda, &p, &c, &x0, &fixed);

    let noise = FjNoise {
        sigma_lambda: 0.05,
        sigma_p: 0.05,
        sigma_c: 0.05,
    };
    let scenario = fj_scenario(&lambda, &p, &c, &x0, noise, 7).unwrap();
    let steps = 100_000;
    let sc = Scenario {
        x0: vec_rows(&x0),
        schedule: GainSchedule::Harmonic,
        ensemble: LiftedEnsemble::new(scenario.ensemble),
        steps,
        reference: Reference::Fixed(vec_rows(&scenario.fixed_point)),
        partition: None,
    };
    let st = estimate(&sc, &[steps], 100, Execution::Parallel).unwrap();
    let mse = st.mse.last().unwrap().mean;
    report(
        "7",
        mse < 1e-2 && residual < 1e-12,
        format!("final mse {mse:.3e}, fixed-point residual {residual:.1e}"),
    )
}

#[test]
fn criterion_8_property_suites() {
    let mut rng = rng(8);

    let mut lift_err = 0.0_f64;
    for _ in 0..500 {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=6);
        let p = gaussian_matrix(&mut rng, n, n);
        let c = gaussian_matrix(&mut rng, m, m);
        let u = gaussian_matrix(&mut rng, n, m);
        let x = gaussian_matrix(&mut rng, n, m);
        let sys = lift(&p, &c, &u).unwrap();
        lift_err = lift_err.max((unvec_rows(&vec_rows(&x), n, m) - &x).amax());
        let lifted = unvec_rows(&(&sys.q * vec_rows(&x) + &sys.v), n, m);
        let direct = &p * &x * c.transpose() + &u;
        lift_err = lift_err.max((lifted - direct).amax() / (1.0 + x.amax()));
    }

    let mut worst_idempotence = 0.0_f64;
    let mut idempotent = true;
    for _ in 0..1000 {
        let r = rng.random_range(1..=3);
        let n = rng.random_range(r.max(2)..=6);
        let p = semisimple_unit_matrix(&mut rng, n, r);
        let tol = default_tol(&p);
        let pi = projector_one(&analyze(&p, tol).unwrap()).unwrap();
        let e = (&pi * &pi - &pi).amax();
        worst_idempotence = worst_idempotence.max(e / tol);
        idempotent &= e <= 10.0 * tol;
    }

    let steps = 10_000;
    let a: Vec<f64> = (1..=steps).map(|s| 1.0 / (s as f64 + 1.0)).collect();
    let b: Vec<f64> = a.iter().map(|x| x * x).collect();
    let y = *deterministic_recursion_oracle(1.0, &a, &b, steps).unwrap().last().unwrap();

    let sc = Scenario {
        x0: v(&[1.0, 2.0, 3.0, 4.0, 5.0]),
        schedule: GainSchedule::Harmonic,
        ensemble: MatrixEnsemble::new(
            signed_consensus_matrix(),
            DVector::zeros(5),
            NoiseKind::IidEntrywise {
                sigma_p: 0.1,
                sigma_u: 0.1,
            },
            8,
        )
        .unwrap(),
        steps: 2_000,
        reference: Reference::Tail,
        partition: Some(Partition::consensus(5)),
    };
    let cps = geometric_checkpoints(2_000, 2);
    let runs: Vec<String> = [Execution::Parallel, Execution::Sequential, Execution::Parallel]
        .into_iter()
        .map(|exec| serde_json::to_string(&estimate(&sc, &cps, 8, exec).unwrap()).unwrap())
        .collect();
    let deterministic = runs.windows(2).all(|w| w[0].as_bytes() == w[1].as_bytes());

    report(
        "8",
        lift_err <= 1e-12 && idempotent && y <= 1e-2 && deterministic,
        format!(
            "lift error {lift_err:.1e}, worst idempotence {worst_idempotence:.2} tol, recursion y = {y:.3e}, seeded runs identical: {deterministic}"
        ),
    )
}
