use proptest::prelude::*;
use serde_json::json;

use sobolev_lab::capacity::{
    analytic_ring_capacity, ring_condenser, solve_capacity, Condenser, CondenserSpec, PlateSpec,
    SolverConfig,
};
use sobolev_lab::config::ExperimentConfig;
use sobolev_lab::distortion::{
    adjugate_lr_norm, global_k_pq, global_ki_qs, kappa, lebesgue_norm, pointwise_kp, ExponentPair,
};
use sobolev_lab::linalg::{adjugate, determinant, operator_norm, singular_extremes, Matrix};
use sobolev_lab::mapping::{
    differential_sample, sample_grid, Domain, Mapping, MappingSpec, Scheme,
};
use sobolev_lab::verify::{
    energy_bounds_check, family_members, operator_norm_lower_bound, FamilySpec, Settings, Verdict,
    VerdictKind, TAU,
};
use sobolev_lab::Execution;

fn matrix(n: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, n * n)
        .prop_map(move |v| Matrix::from_row_slice(n, n, &v))
        .prop_filter("well conditioned", |a| {
            let (hi, lo) = singular_extremes(a);
            lo > 1e-3 * hi && lo > 1e-6
        })
}

fn any_matrix() -> impl Strategy<Value = Matrix> {
    prop_oneof![matrix(2), matrix(3)]
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn rows(a: &Matrix) -> MappingSpec {
    MappingSpec::Linear {
        matrix: (0..a.nrows())
            .map(|i| a.row(i).iter().cloned().collect())
            .collect(),
    }
}

proptest! {
    #[test]
    fn adjugate_norm_is_det_over_min_stretch(a in any_matrix()) {
        let (_, lo) = singular_extremes(&a);
        let lhs = operator_norm(&adjugate(&a));
        prop_assert!(rel(lhs, determinant(&a).abs() / lo) < 1e-10);
    }

    #[test]
    fn singular_value_sandwich(a in any_matrix()) {
        let s = sobolev_lab::mapping::DifferentialSample::from_jacobian(vec![0.0; a.nrows()], a.clone());
        let n = a.nrows() as i32;
        prop_assert!(s.op_norm >= s.min_stretch && s.min_stretch >= 0.0);
        prop_assert!(s.min_stretch.powi(n) <= s.det.abs() * (1.0 + 1e-12));
        prop_assert!(s.det.abs() <= s.op_norm.powi(n) * (1.0 + 1e-12));
    }

    #[test]
    fn chain_rule_for_composed_maps(
        a in matrix(2),
        power in 0.3f64..3.0,
        r in 1.0f64..2.0,
        t in 0.0f64..std::f64::consts::TAU,
    ) {
        let f = MappingSpec::RadialPower { a: power };
        let g = rows(&a);
        let x = [r * t.cos(), r * t.sin()];
        let fm = Mapping::new(&f).unwrap();
        let gm = Mapping::new(&g).unwrap();
        let composed = Mapping::new(&MappingSpec::composed(f, g)).unwrap();
        let lhs = composed.jacobian(&x, Scheme::Analytic).unwrap();
        let fx = fm.evaluate(&x).unwrap();
        let rhs = gm.jacobian(&fx, Scheme::Analytic).unwrap() * fm.jacobian(&x, Scheme::Analytic).unwrap();
        let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!((lhs - rhs).iter().all(|d| d.abs() <= 1e-12 * scale));
    }

    #[test]
    fn central_differences_are_second_order(
        power in 0.3f64..3.0,
        r in 1.0f64..2.0,
        t in 0.0f64..std::f64::consts::TAU,
    ) {
        let m = Mapping::new(&MappingSpec::RadialPower { a: power }).unwrap();
        let x = [r * t.cos(), r * t.sin()];
        let exact = m.jacobian(&x, Scheme::Analytic).unwrap();
        let err = |h: f64| {
            let fd = m.jacobian(&x, Scheme::CentralFd { h: Some(h) }).unwrap();
            (fd - &exact).iter().fold(0.0f64, |e, v| e.max(v.abs()))
        };
        let (coarse, fine) = (err(2e-2), err(1e-2));
        prop_assert!(coarse >= 3.5 * fine, "{coarse} vs {fine}");
    }

    #[test]
    fn dilatation_scaling_law(a in any_matrix(), lambda in 0.1f64..10.0, p in 1.0f64..8.0) {
        let n = a.nrows() as f64;
        let s = |m: Matrix| sobolev_lab::mapping::DifferentialSample::from_jacobian(vec![0.0; a.nrows()], m);
        let base = pointwise_kp(&s(a.clone()), p).unwrap();
        let scaled = pointwise_kp(&s(a.clone() * lambda), p).unwrap();
        prop_assert!(rel(scaled, lambda.powf(1.0 - n / p) * base) < 1e-10);
    }

    #[test]
    fn constant_norms_on_unit_volume(c in 0.0f64..100.0, k in 1.0f64..20.0, cells in 1usize..50) {
        let w = vec![1.0 / cells as f64; cells];
        let v = vec![c; cells];
        prop_assert!((lebesgue_norm(&v, &w, k) - c).abs() <= 1e-10 * c.max(1.0));
        prop_assert_eq!(lebesgue_norm(&v, &w, f64::INFINITY), c);
    }

    #[test]
    fn kappa_conventions(q in 1.0f64..10.0, extra in 0.0f64..10.0) {
        let p = q + extra;
        let pair = ExponentPair::new(p, q).unwrap();
        if extra == 0.0 {
            prop_assert_eq!(pair.kappa(), f64::INFINITY);
        } else {
            prop_assert!(rel(1.0 / pair.kappa(), 1.0 / q - 1.0 / p) < 1e-12);
        }
        prop_assert_eq!(kappa(f64::INFINITY, q), q);
    }

    #[test]
    fn inner_distortion_matches_adjugate_norm(power in 0.3f64..3.0, q in 1.2f64..6.0) {
        let m = Mapping::new(&MappingSpec::RadialPower { a: power }).unwrap();
        let d = Domain::annulus(vec![0.0, 0.0], 1.0, 2.0, 16);
        let s = sample_grid(&m, &d, Scheme::Analytic, Execution::default()).unwrap();
        let a = global_ki_qs(&s, q, 1.0).unwrap();
        let b = adjugate_lr_norm(&s, q / (q - 1.0)).unwrap();
        prop_assert!(rel(a, b) < 1e-8, "{a} vs {b}");
    }

    #[test]
    fn verdict_pass_rule(lhs in -10.0f64..10.0, rhs in -10.0f64..10.0, tol in 0.0f64..0.5) {
        let v = Verdict::inequality("x", lhs, rhs, tol);
        prop_assert_eq!(v.passed, lhs <= rhs * (1.0 + tol));
        let v = Verdict::identity("x", lhs, rhs, tol);
        let scale = lhs.abs().max(rhs.abs());
        let res = if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale };
        prop_assert_eq!(v.passed, res <= tol);
    }

    #[test]
    fn misspelled_keys_never_parse(key in 0usize..6, suffix in "[a-z_]{1,3}") {
        let mut v = json!({
            "command": "verify",
            "map": {"family": "linear", "matrix": [[2, 0], [0, 1]]},
            "domain": {"kind": "box", "lo": [0, 0], "hi": [1, 1], "grid": 8},
            "image_domain": {"kind": "box", "lo": [0, 0], "hi": [2, 1], "grid": 8},
            "exponents": {"p": 2, "q": 2, "s": 1},
            "solver": {"max_iter": 10}
        });
        prop_assert!(ExperimentConfig::from_json(&v.to_string()).is_ok());
        let obj = v.as_object_mut().unwrap();
        let (parent, child): (&str, Option<&str>) = [
            ("command", None),
            ("map", Some("family")),
            ("domain", Some("grid")),
            ("exponents", Some("q")),
            ("solver", Some("max_iter")),
            ("image_domain", None),
        ][key];
        match child {
            None => {
                let val = obj.remove(parent).unwrap();
                obj.insert(format!("{parent}{suffix}"), val);
            }
            Some(c) => {
                let inner = obj.get_mut(parent).unwrap().as_object_mut().unwrap();
                let val = inner.remove(c).unwrap();
                inner.insert(format!("{c}{suffix}"), val);
            }
        }
        prop_assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn identity_map_verdicts(q in 1.5f64..4.0, frac in 0.0f64..1.0) {
        let s = 1.0 + frac * (q - 1.0);
        let d = Domain::rect(vec![0.0, 0.0], vec![1.0, 2.0], 12);
        let id = Mapping::new(&MappingSpec::Identity).unwrap();
        let fam = family_members(&FamilySpec::default_family(), &d).unwrap();
        let settings = Settings::default();
        let mut verdicts = energy_bounds_check(&id, &d, &d, q, s, &fam, Scheme::Analytic, &settings).unwrap();
        verdicts.push(operator_norm_lower_bound(&id, &d, &d, q, q, &fam, Scheme::Analytic, &settings).unwrap());
        for v in &verdicts {
            match v.kind {
                VerdictKind::Inequality => prop_assert!(v.lhs <= v.rhs * (1.0 + 1e-12), "{v:?}"),
                VerdictKind::Identity => prop_assert!(v.slack < 1e-10, "{v:?}"),
            }
        }
    }

    #[test]
    fn similarities_attain_the_bound(scale in 0.3f64..3.0, turns in 0usize..4, p in 1.2f64..5.0) {
        let (c, s) = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][turns];
        let a = Matrix::from_row_slice(2, 2, &[scale * c, -scale * s, scale * s, scale * c]);
        check_tightness(&a, p)?;
    }

    #[test]
    fn diagonal_maps_attain_the_bound(d1 in 0.2f64..5.0, d2 in 0.2f64..5.0, d3 in 0.2f64..5.0, p in 1.2f64..5.0) {
        check_tightness(&Matrix::from_row_slice(2, 2, &[d1, 0.0, 0.0, d2]), p)?;
        check_tightness(&Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![d1, d2, d3])), p)?;
    }
}

/// The coordinate family realizes `K_{p,p}` for diagonal maps and for
/// similarities whose image of the unit cube is again a box.
fn check_tightness(a: &Matrix, p: f64) -> Result<(), TestCaseError> {
    let n = a.nrows();
    let d = Domain::unit_box(n, 6);
    let m = Mapping::new(&rows(a)).unwrap();
    let fam = family_members(&[FamilySpec::Coordinate { count: None }], &d).unwrap();
    let image = image_box(a);
    let v = operator_norm_lower_bound(
        &m,
        &d,
        &image,
        p,
        p,
        &fam,
        Scheme::Analytic,
        &Settings::default(),
    )
    .unwrap();
    let s = sample_grid(&m, &d, Scheme::Analytic, Execution::default()).unwrap();
    let k = global_k_pq(&s, ExponentPair::new(p, p).unwrap()).unwrap();
    prop_assert!(v.lhs >= 0.999 * k, "M = {} K = {k}", v.lhs);
    Ok(())
}

/// Bounding box of the image of the unit cube.
fn image_box(a: &Matrix) -> Domain {
    let n = a.nrows();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for corner in 0..(1 << n) {
        let x = nalgebra::DVector::from_fn(n, |k, _| ((corner >> k) & 1) as f64);
        let y = a * x;
        for k in 0..n {
            lo[k] = lo[k].min(y[k]);
            hi[k] = hi[k].max(y[k]);
        }
    }
    Domain::rect(lo, hi, 6)
}

fn ring_with_ball(radius: f64, grid: usize) -> Condenser {
    let d = Domain::annulus(vec![0.0, 0.0], 1.0, 3.0, grid);
    Condenser::from_spec(
        &CondenserSpec {
            p: 2.0,
            f0: PlateSpec::OuterRing {},
            f1: PlateSpec::Ball {
                center: vec![0.0, 0.0],
                radius,
            },
        },
        &d,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn enlarging_a_plate_never_decreases_capacity(r1 in 1.05f64..2.4, grow in 0.05f64..0.5) {
        let cfg = SolverConfig::default();
        let small = solve_capacity(&ring_with_ball(r1, 24), &cfg).unwrap();
        let large = solve_capacity(&ring_with_ball(r1 + grow, 24), &cfg).unwrap();
        prop_assert!(large.value >= small.value, "{} < {}", large.value, small.value);
        prop_assert!(small.max_principle_ok && large.max_principle_ok);
    }

    #[test]
    fn minimizer_respects_plates_and_bounds(p in 1.2f64..6.0, outer in 1.5f64..4.0) {
        let c = ring_condenser(2, p, 1.0, outer, 20).unwrap();
        let r = solve_capacity(&c, &SolverConfig::default()).unwrap();
        prop_assert!(r.minimizer_min >= -1e-9 && r.minimizer_max <= 1.0 + 1e-9);
        for (i, &v) in r.minimizer.values.iter().enumerate() {
            if v.is_nan() {
                continue;
            }
            let x = r.minimizer.grid.node_position(i);
            let rho = x.iter().map(|t| t * t).sum::<f64>().sqrt();
            if rho < 1.0 - 1e-9 {
                prop_assert_eq!(v, 1.0);
            }
            if rho > outer + 1e-9 {
                prop_assert_eq!(v, 0.0);
            }
        }
    }
}

#[test]
fn ring_capacity_improves_under_refinement() {
    let cfg = SolverConfig::default();
    for (p, n) in [(1.5, 32), (2.0, 32), (3.0, 32)] {
        let exact = analytic_ring_capacity(2, p, 1.0, 2.0).unwrap();
        let coarse = solve_capacity(&ring_condenser(2, p, 1.0, 2.0, n).unwrap(), &cfg)
            .unwrap()
            .value;
        let fine = solve_capacity(&ring_condenser(2, p, 1.0, 2.0, 2 * n).unwrap(), &cfg)
            .unwrap()
            .value;
        assert!(
            (fine - coarse).abs() < (coarse - exact).abs(),
            "p={p}: {coarse} {fine} {exact}"
        );
    }
}

#[test]
fn inner_distortion_converges_at_second_order() {
    // K^I_{∞,2} of |x|x on annulus(1,2) is (2·3π)^{1/2}; below N = 64 the
    // boundary errors of the two circles nearly cancel and the error is erratic
    let exact = (6.0 * std::f64::consts::PI).sqrt();
    let m = Mapping::new(&MappingSpec::RadialPower { a: 2.0 }).unwrap();
    let err = |n| {
        let d = Domain::annulus(vec![0.0, 0.0], 1.0, 2.0, n);
        let s = sample_grid(&m, &d, Scheme::Analytic, Execution::default()).unwrap();
        (global_ki_qs(&s, f64::INFINITY, 2.0).unwrap() - exact).abs()
    };
    let e: Vec<f64> = [64, 128, 256].into_iter().map(err).collect();
    assert!(e[0] >= 3.5 * e[1] && e[1] >= 3.5 * e[2], "{e:?}");
}

#[test]
fn inequality_margins_hold_under_refinement() {
    let cases = [
        (MappingSpec::RadialPower { a: 2.0 }, 1.0, 2.0, 4.0),
        (MappingSpec::RadialPower { a: 0.5 }, 1.0, 4.0, 2.0),
    ];
    for (spec, r, big_r, image_r) in cases {
        let m = Mapping::new(&spec).unwrap();
        let margins = |n| -> Vec<f64> {
            let d = Domain::annulus(vec![0.0, 0.0], r, big_r, n);
            let img = Domain::annulus(vec![0.0, 0.0], 1.0, image_r, n);
            let fam = family_members(&FamilySpec::default_family(), &img).unwrap();
            let s = Settings::default();
            let mut v =
                energy_bounds_check(&m, &d, &img, 3.0, 2.0, &fam, Scheme::Analytic, &s).unwrap();
            v.push(
                operator_norm_lower_bound(&m, &d, &img, 4.0, 3.0, &fam, Scheme::Analytic, &s)
                    .unwrap(),
            );
            v.iter()
                .map(|v| (v.rhs * (1.0 + TAU) - v.lhs) / v.rhs)
                .collect()
        };
        let (coarse, fine) = (margins(16), margins(32));
        for (c, f) in coarse.iter().zip(&fine) {
            if *c >= 0.0 {
                assert!(*f >= TAU / 2.0, "{spec:?}: margin {c} at N then {f} at 2N");
            }
        }
    }
}

#[test]
fn differential_sample_examples() {
    let m = Mapping::new(&MappingSpec::diagonal(&[3.0, 2.0, 1.0])).unwrap();
    let s = differential_sample(&m, &[0.1, 0.2, 0.3], Scheme::Analytic).unwrap();
    assert!(
        (s.det - 6.0).abs() < 1e-14
            && (s.min_stretch - 1.0).abs() < 1e-14
            && (s.adj_norm - 6.0).abs() < 1e-13
    );
}
