//! Randomized structural properties. Each test pins down an invariant that
//! must hold for *every* admissible input, not just the bundled models:
//! parser associativity, permutation invariance of the irreducibility
//! verdict, bracketing of lattice samples by the reported coefficient
//! bounds, exact grid geometry, initial-condition shape, positivity of
//! principal eigenpairs, the minimizing structure of the critical speed,
//! trajectory bookkeeping, and order preservation of the cooperative
//! surrogate dynamics.

use std::collections::BTreeMap;

use proptest::prelude::*;

use kpp_spectra::cauchy::{comparison_harness, simulate, InitialCondition};
use kpp_spectra::exprlang::check_periodicity;
use kpp_spectra::floquet::principal_eigenvalue;
use kpp_spectra::grid::{BoundaryKind, Grid, Reaction};
use kpp_spectra::model::{is_irreducible, validate_assumptions, ExprField, ModelSpec};
use kpp_spectra::oracle;
use kpp_spectra::speeds::{critical_speed, fg_speed, lambda_max, lambda_prime, speed_at_decay};

fn scalar_model(d: f64, q: f64, r: f64) -> ModelSpec {
    let text = format!(
        r#"{{"N":1,"n":1,"T":1,"L":[1],"A":["{d:?}"],"q":["{q:?}"],"Lmat":[["{r:?}"]],"Cmat":[["1"]]}}"#
    );
    ModelSpec::from_json_str(&text).unwrap()
}

fn eval1(src: &str) -> f64 {
    let f = ExprField::parse(src, 1, &BTreeMap::new()).unwrap();
    let mut scratch = Vec::new();
    f.compiled
        .eval_with(0.0, &[0.0], 1.0, &[1.0], &mut scratch)
        .unwrap()
}

// -- exprlang ---------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    // `/` and `^` chain right-to-left; unary minus binds below `^`. Compare
    // against the explicitly parenthesized forms so the property is about
    // the parse tree, not about how any single operator rounds.
    #[test]
    fn division_and_power_associate_right(
        a in 0.5f64..4.0, b in 0.5f64..4.0, c in 0.5f64..4.0,
    ) {
        let chained = eval1(&format!("{a:?} / {b:?} / {c:?}"));
        let grouped = eval1(&format!("{a:?} / ({b:?} / {c:?})"));
        prop_assert_eq!(chained, grouped);

        let chained = eval1(&format!("{a:?} ^ {b:?} ^ {c:?}"));
        let grouped = eval1(&format!("{a:?} ^ ({b:?} ^ {c:?})"));
        prop_assert_eq!(chained, grouped);

        let negated = eval1(&format!("-{a:?} ^ {b:?}"));
        let grouped = eval1(&format!("-({a:?} ^ {b:?})"));
        prop_assert_eq!(negated, grouped);
    }

    // Any trigonometric polynomial in 2π·k·x1/L1 and 2π·k·t/T passes the
    // periodicity check, for every box geometry.
    #[test]
    fn trig_polynomials_are_periodic(
        c0 in -2.0f64..2.0, c1 in -2.0f64..2.0, c2 in -2.0f64..2.0,
        k1 in 1usize..4, k2 in 1usize..4,
        period_t in 0.5f64..2.0, l1 in 0.5f64..2.0,
    ) {
        let src = format!(
            "{c0:?} + {c1:?}*cos(2*pi*{k1}*x1/L1) + {c2:?}*sin(2*pi*{k2}*t/T)"
        );
        let f = ExprField::parse(&src, 1, &BTreeMap::new()).unwrap();
        let check = check_periodicity(&f.compiled, period_t, &[l1], 32).unwrap();
        prop_assert!(
            check.ok,
            "worst deviation {:.3e} at {:?}",
            check.worst_deviation,
            check.worst_point
        );
    }
}

// -- model ------------------------------------------------------------------

/// A random square matrix with nonnegative off-diagonal sparsity, plus a
/// random relabeling of its indices.
fn matrix_and_permutation() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
    (2usize..=4).prop_flat_map(|n| {
        let rows =
            prop::collection::vec(prop::collection::vec((0.05f64..1.0, any::<bool>()), n), n)
                .prop_map(|rows| {
                    rows.into_iter()
                        .map(|row| {
                            row.into_iter()
                                .map(|(v, keep)| if keep { v } else { 0.0 })
                                .collect::<Vec<f64>>()
                        })
                        .collect::<Vec<Vec<f64>>>()
                });
        let perm = Just((0..n).collect::<Vec<usize>>()).prop_shuffle();
        (rows, perm)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    // Renaming the components must not change whether the coupling graph is
    // strongly connected.
    #[test]
    fn irreducibility_survives_relabeling((m, perm) in matrix_and_permutation()) {
        let n = m.len();
        let permuted: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| m[perm[i]][perm[j]]).collect())
            .collect();
        prop_assert_eq!(is_irreducible(&m), is_irreducible(&permuted));
    }
}

fn trig_entry(a: f64, b: f64, c: f64, k: usize) -> String {
    format!("{a:?} + {b:?}*cos(2*pi*{k}*x1/L1) + {c:?}*sin(2*pi*t/T)")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // The entrywise lattice min/max reported by the assumption check must
    // bracket the coefficient values at every point of its own sampling
    // lattice, and the whole report must be reproducible bit for bit.
    #[test]
    fn sampled_bounds_bracket_the_lattice(
        coeffs in prop::collection::vec((-1.0f64..1.5, -0.8f64..0.8, -0.8f64..0.8, 1usize..3), 8),
    ) {
        let e = |i: usize| trig_entry(coeffs[i].0, coeffs[i].1, coeffs[i].2, coeffs[i].3);
        let text = format!(
            r#"{{"N":2,"n":1,"T":1,"L":[1],"A":["1","1"],"q":["0","0"],
                "Lmat":[["{}","{}"],["{}","{}"]],
                "Cmat":[["{}","{}"],["{}","{}"]]}}"#,
            e(0), e(1), e(2), e(3), e(4), e(5), e(6), e(7)
        );
        let spec = ModelSpec::from_json_str(&text).unwrap();
        let s = 8usize;
        let rep = validate_assumptions(&spec, s).unwrap();
        let rep2 = validate_assumptions(&spec, s).unwrap();
        prop_assert_eq!(&rep.lmat_lower, &rep2.lmat_lower);
        prop_assert_eq!(&rep.lmat_upper, &rep2.lmat_upper);
        prop_assert_eq!(&rep.cmat_lower, &rep2.cmat_lower);
        prop_assert_eq!(&rep.cmat_upper, &rep2.cmat_upper);
        prop_assert_eq!(rep.k_absorbing, rep2.k_absorbing);

        let mut scratch = Vec::new();
        for kt in 0..s {
            let t = spec.period_t * kt as f64 / s as f64;
            for kx in 0..s {
                let x = [spec.periods_l[0] * kx as f64 / s as f64];
                for i in 0..2 {
                    for j in 0..2 {
                        let v = spec.lmat[i][j]
                            .compiled
                            .eval_with(t, &x, spec.period_t, &spec.periods_l, &mut scratch)
                            .unwrap();
                        prop_assert!(
                            rep.lmat_lower[i][j] <= v && v <= rep.lmat_upper[i][j],
                            "Lmat[{i}][{j}] = {v} outside [{}, {}] at t = {t}, x = {}",
                            rep.lmat_lower[i][j], rep.lmat_upper[i][j], x[0]
                        );
                        let w = spec.cmat[i][j]
                            .compiled
                            .eval_with(t, &x, spec.period_t, &spec.periods_l, &mut scratch)
                            .unwrap();
                        prop_assert!(
                            rep.cmat_lower[i][j] <= w && w <= rep.cmat_upper[i][j],
                            "Cmat[{i}][{j}] = {w} outside [{}, {}] at t = {t}, x = {}",
                            rep.cmat_lower[i][j], rep.cmat_upper[i][j], x[0]
                        );
                    }
                }
            }
        }
    }
}

// -- grid -------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    // A periodic cell carries the period lengths exactly (no accumulated
    // h·m rounding) and strictly positive spacings.
    #[test]
    fn periodic_cells_carry_exact_period_lengths(l1 in 0.25f64..4.0, cells in 3usize..48) {
        let text = format!(
            r#"{{"N":1,"n":1,"T":1,"L":[{l1:?}],"A":["1"],"q":["0"],"Lmat":[["1"]],"Cmat":[["1"]]}}"#
        );
        let spec = ModelSpec::from_json_str(&text).unwrap();
        let grid = Grid::periodic_cell(&spec, &[cells]).unwrap();
        prop_assert_eq!(grid.lens[0], spec.periods_l[0]);
        prop_assert_eq!(grid.lens[0], l1);
        prop_assert_eq!(grid.m[0], cells);
        prop_assert!(grid.h[0] > 0.0);
    }

    // Compact bumps are nonnegative, capped by their height, and vanish
    // outside the stated ball.
    #[test]
    fn compact_bumps_vanish_outside_their_ball(
        center in -3.0f64..3.0, radius in 0.5f64..3.0, height in 0.1f64..5.0,
    ) {
        let spec = scalar_model(1.0, 0.0, 1.0);
        let grid = Grid::truncated_box(1, 10.0, 79).unwrap();
        let ini = InitialCondition::Compact { center: vec![center], radius, height };
        let u = ini.realize(&spec, &grid).unwrap();
        prop_assert!(u.nonneg);
        let mut x = [0.0];
        for j in 0..grid.cell_count() {
            grid.cell_coords(j, &mut x);
            let v = u.comp(0)[j];
            prop_assert!(v.is_finite() && (0.0..=height).contains(&v));
            if (x[0] - center).abs() >= radius {
                prop_assert_eq!(v, 0.0);
            }
        }
    }

    // Exponential data equals the capped profile min(e^{z·x}/C, max(1, e^B/C)):
    // in particular it dominates e^{z·x}/C wherever z·x ≤ B and never
    // exceeds the cap.
    #[test]
    fn exponential_data_matches_its_capped_profile(
        z in -2.0f64..2.0, c_big in 0.5f64..4.0, b in 0.0f64..3.0,
    ) {
        let spec = scalar_model(1.0, 0.0, 1.0);
        let grid = Grid::truncated_box(1, 10.0, 79).unwrap();
        let ini = InitialCondition::Exponential { z: vec![z], c_big, b };
        let u = ini.realize(&spec, &grid).unwrap();
        let cap = (b.exp() / c_big).max(1.0);
        let mut x = [0.0];
        for j in 0..grid.cell_count() {
            grid.cell_coords(j, &mut x);
            let v = u.comp(0)[j];
            let zx = z * x[0];
            prop_assert_eq!(v, (zx.exp() / c_big).min(cap));
            if zx <= b {
                prop_assert!(v >= zx.exp() / c_big);
            }
            prop_assert!(v <= cap);
        }
    }
}

// -- floquet ----------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    // On a periodic cell the computed eigenpair must be strictly positive
    // with residual within the requested tolerance, and for constant
    // coefficients the eigenvalue must match the matrix oracle.
    #[test]
    fn principal_eigenpairs_are_positive_and_match_the_constant_oracle(
        d1 in 0.5f64..2.0, d2 in 0.5f64..2.0,
        q1 in -1.0f64..1.0, q2 in -1.0f64..1.0,
        l11 in -1.0f64..1.0, l22 in -1.0f64..1.0,
        l12 in 0.05f64..1.0, l21 in 0.05f64..1.0,
        z in -1.2f64..1.2,
    ) {
        let text = format!(
            r#"{{"N":2,"n":1,"T":1,"L":[1],"A":["{d1:?}","{d2:?}"],"q":["{q1:?}","{q2:?}"],
                "Lmat":[["{l11:?}","{l12:?}"],["{l21:?}","{l22:?}"]],
                "Cmat":[["1","1"],["1","1"]]}}"#
        );
        let spec = ModelSpec::from_json_str(&text).unwrap();
        let grid = Grid::periodic_cell(&spec, &[8]).unwrap();
        let out = principal_eigenvalue(&spec, &grid, &[z], 1e-10, 500, BoundaryKind::Periodic)
            .unwrap();
        prop_assert!(out.lambda.is_finite());
        prop_assert!(out.eigenfunction.min() > 0.0, "eigenfunction not strictly positive");
        prop_assert!(out.residual <= 1e-10);

        let want = oracle::lambda_constant(
            &[vec![l11, l12], vec![l21, l22]],
            &[vec![vec![d1]], vec![vec![d2]]],
            &[vec![q1], vec![q2]],
            &[z],
        );
        prop_assert!(
            (out.lambda - want).abs() <= 2e-3,
            "lambda = {}, matrix oracle = {}", out.lambda, want
        );
    }
}

// -- speeds -----------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    // The critical speed is the minimum of the decay-rate family: every
    // probed c^μ sits above it, the minimizer is positive, the directional
    // formula can only tighten it, and for constants it matches q + 2√(dr).
    #[test]
    fn critical_speed_minimizes_the_decay_family(
        d in 0.5f64..2.0, r in 0.2f64..1.5, q in -0.5f64..0.5,
        mu_probe in prop::collection::vec(0.1f64..3.0, 3),
    ) {
        let spec = scalar_model(d, q, r);
        let (c, mu) = critical_speed(&spec, &[1.0], 1e-6, 8).unwrap();
        prop_assert!(mu > 0.0);
        let want = q + 2.0 * (d * r).sqrt();
        prop_assert!((c - want).abs() <= 5e-3, "c = {c}, closed form = {want}");
        for m in mu_probe {
            let cm = speed_at_decay(&spec, &[1.0], m, 8).unwrap();
            prop_assert!(cm >= c - 1e-6, "c^mu = {cm} at mu = {m} undercuts c* = {c}");
        }
        let fg = fg_speed(&spec, &[1.0], 8, 8).unwrap();
        prop_assert!(fg.fg_speed <= c + 1e-9);
    }

    // Maximizing over shifts can only improve on the zero-shift value, and
    // for scalar constants the maximum is q²/(4d) − r.
    #[test]
    fn the_maximized_eigenvalue_dominates_its_zero_shift_value(
        d in 0.5f64..2.0, q in -1.0f64..1.0, r in -0.5f64..1.0,
    ) {
        let spec = scalar_model(d, q, r);
        let lp = lambda_prime(&spec, 8).unwrap();
        let (l1, z_at) = lambda_max(&spec, 1e-4, 8).unwrap();
        prop_assert!(l1 >= lp);
        prop_assert_eq!(z_at.len(), 1);
        let want = q * q / (4.0 * d) - r;
        prop_assert!((l1 - want).abs() <= 5e-3, "lambda1 = {l1}, closed form = {want}");
    }
}

// -- cauchy -----------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    // A trajectory starts at its initial data at t = 0, keeps strictly
    // increasing snapshot times, and never leaves the nonnegative cone.
    #[test]
    fn trajectories_start_at_the_data_and_stay_nonnegative(
        d in 0.5f64..1.5, r in -1.0f64..1.0,
        center in -2.0f64..2.0, radius in 0.5f64..2.0, height in 0.2f64..2.0,
        t_end in 0.6f64..1.5,
    ) {
        let spec = scalar_model(d, 0.0, r);
        let grid = Grid::truncated_box(1, 5.0, 39).unwrap();
        let ini = InitialCondition::Compact { center: vec![center], radius, height };
        let u0 = ini.realize(&spec, &grid).unwrap();
        let traj = simulate(&spec, &grid, &ini, t_end, t_end / 3.0, Reaction::Kpp).unwrap();
        prop_assert_eq!(traj.times[0], 0.0);
        prop_assert_eq!(&traj.snapshots[0].data, &u0.data);
        for w in traj.times.windows(2) {
            prop_assert!(w[0] < w[1]);
        }
        for snap in &traj.snapshots {
            prop_assert!(snap.is_finite());
            prop_assert!(snap.min() >= 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    // The cooperative surrogates keep randomly ordered pairs ordered for
    // every seed and parameter choice, not just the pinned acceptance seed.
    #[test]
    fn cooperative_surrogates_preserve_ordering(
        d in 0.5f64..2.0, q in -1.0f64..1.0, r in -0.5f64..1.0,
        dp in 0.5f64..2.0, p in 0.5f64..1.5, dq in 0.5f64..2.0,
        seed in any::<u64>(),
    ) {
        let spec = scalar_model(d, q, r);
        for reaction in [
            Reaction::CoopPower { d: dp, p },
            Reaction::CoopQuadratic { dprime: dq },
        ] {
            let rep = comparison_harness(&spec, reaction, 3, seed, 0.5).unwrap();
            prop_assert!(
                rep.max_violation <= 1e-10,
                "ordering violated by {:.3e}", rep.max_violation
            );
        }
    }
}
