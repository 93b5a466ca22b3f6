use std::f64::consts::{E, PI};

use super::*;
use crate::capacity::{analytic_ring_capacity, ring_condenser, Plate, PlateSpec, Side};
use crate::mapping::MappingSpec;

fn diag21() -> Mapping {
    Mapping::new(&MappingSpec::diagonal(&[2.0, 1.0])).unwrap()
}

fn square(n: usize) -> Domain {
    Domain::unit_box(2, n)
}

fn image_rect(n: usize) -> Domain {
    Domain::rect(vec![0.0, 0.0], vec![2.0, 1.0], n)
}

/// Composite Simpson rule for `∫_a^b f`.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let m = 4000;
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for k in 1..m {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
    }
    s * h / 3.0
}

fn seq() -> Settings {
    Settings {
        exec: Execution::Sequential,
        ..Settings::default()
    }
}

#[test]
fn transfer_identity_for_identity_map() {
    let d = Domain::rect(vec![0.0, 0.0], vec![2.0, 1.0], 8);
    let v = transfer_identity_residual(
        &Mapping::Identity,
        &d,
        &d,
        3.0,
        2.0,
        Scheme::Analytic,
        &seq(),
    )
    .unwrap();
    let expected = 2f64.powf(1.0 / 6.0);
    assert!((v.lhs - expected).abs() < 1e-12 && (v.rhs - expected).abs() < 1e-12);
    assert!(v.passed && v.slack < 1e-12);
}

#[test]
fn transfer_identity_for_diagonal_map() {
    let v = transfer_identity_residual(
        &diag21(),
        &square(16),
        &image_rect(16),
        2.0,
        1.0,
        Scheme::Analytic,
        &seq(),
    )
    .unwrap();
    assert!((v.lhs - 2.0).abs() < 1e-12, "{}", v.lhs);
    assert!(v.slack < 1e-8 && v.passed && v.tolerance_used == 1e-6);
}

#[test]
fn transfer_identity_for_radial_power() {
    let m = Mapping::RadialPower(2.0);
    let src = Domain::annulus(vec![0.0, 0.0], 1.0, 2.0, 128);
    let img = Domain::annulus(vec![0.0, 0.0], 1.0, 4.0, 128);
    let v =
        transfer_identity_residual(&m, &src, &img, f64::INFINITY, 2.0, Scheme::Analytic, &seq())
            .unwrap();
    // |Dφ⁻¹(y)|² = 1/|y| for the inverse map y ↦ |y|^{-1/2} y
    let oracle = simpson(|r| 2.0 * PI * r / r, 1.0, 4.0).sqrt();
    assert!(
        (v.rhs - oracle).abs() < 1e-3 * oracle,
        "{} vs {oracle}",
        v.rhs
    );
    assert!(
        (v.lhs - oracle).abs() < 1e-3 * oracle,
        "{} vs {oracle}",
        v.lhs
    );
    assert!(v.passed);
}

#[test]
fn transfer_identity_rejects_missing_inverse() {
    let gf =
        crate::mapping::GridField::from_fn(vec![0.0, 0.0], vec![1.0, 1.0], vec![5, 5], 1, |x| {
            x.to_vec()
        })
        .unwrap();
    let m = Mapping::GridField(std::sync::Arc::new(gf));
    let d = square(8);
    assert!(transfer_identity_residual(
        &m,
        &d,
        &d,
        2.0,
        1.0,
        Scheme::CentralFd { h: None },
        &seq()
    )
    .is_err());
}

#[test]
fn change_of_variables_examples() {
    let d = square(8);
    let one = Integrand::Constant { value: 1.0 };
    let v = change_of_variables_residual(
        &Mapping::Identity,
        &d,
        &d,
        &one,
        &Subset::Whole,
        Scheme::Analytic,
        &seq(),
    )
    .unwrap();
    assert!((v.lhs - 1.0).abs() < 1e-14 && (v.rhs - 1.0).abs() < 1e-14);
    let v = change_of_variables_residual(
        &diag21(),
        &d,
        &image_rect(8),
        &one,
        &Subset::Whole,
        Scheme::Analytic,
        &seq(),
    )
    .unwrap();
    assert!(
        (v.lhs - 2.0).abs() < 1e-13 && (v.rhs - 2.0).abs() < 1e-13,
        "{v:?}"
    );

    let m = Mapping::RadialPower(2.0);
    let src = Domain::annulus(vec![0.0, 0.0], 1.0, 2.0, 64);
    let img = Domain::annulus(vec![0.0, 0.0], 1.0, 4.0, 64);
    let f = Integrand::Radius { center: None };
    let v =
        change_of_variables_residual(&m, &src, &img, &f, &Subset::Whole, Scheme::Analytic, &seq())
            .unwrap();
    let oracle = simpson(|r| 2.0 * PI * r * r, 1.0, 4.0);
    assert!((oracle - 42.0 * PI).abs() < 1e-9);
    assert!(
        (v.lhs - oracle).abs() < 0.01 * oracle && (v.rhs - oracle).abs() < 0.01 * oracle,
        "{v:?}"
    );
    assert!(v.passed);
}

#[test]
fn change_of_variables_on_cell_subset() {
    let d = square(16);
    let cells: Vec<Vec<usize>> = (0..8)
        .flat_map(|i| (0..16).map(move |j| vec![i, j]))
        .collect();
    let one = Integrand::Constant { value: 1.0 };
    let v = change_of_variables_residual(
        &diag21(),
        &d,
        &image_rect(16),
        &one,
        &Subset::Cells { cells },
        Scheme::Analytic,
        &seq(),
    )
    .unwrap();
    assert!(
        (v.lhs - 1.0).abs() < 1e-13 && (v.rhs - 1.0).abs() < 1e-13,
        "{v:?}"
    );
}

#[test]
fn negative_integrand_rejected() {
    let d = square(8);
    let f = Integrand::Constant { value: -1.0 };
    let e = change_of_variables_residual(
        &Mapping::Identity,
        &d,
        &d,
        &f,
        &Subset::Whole,
        Scheme::Analytic,
        &seq(),
    )
    .unwrap_err();
    assert!(e.to_string().contains("non-negative"));
}

#[test]
fn capacity_estimate_for_identity_on_ring() {
    let c = ring_condenser(2, 2.0, 1.0, E, 48).unwrap();
    let img = c.domain.clone();
    let v = capacity_distortion_check(
        &Mapping::Identity,
        &c,
        &img,
        CapacityForm::Inner { q: 2.5, s: 2.0 },
        &SolverConfig::default(),
        Scheme::Analytic,
        &seq(),
    )
    .unwrap();
    let cp2 = analytic_ring_capacity(2, 2.0, 1.0, E).unwrap();
    let cp25 = analytic_ring_capacity(2, 2.5, 1.0, E).unwrap();
    let area = PI * (E * E - 1.0);
    assert!((v.lhs - cp2.sqrt()).abs() < 0.01 * cp2.sqrt(), "{}", v.lhs);
    let rhs = area.powf(0.1) * cp25.powf(0.4);
    assert!((v.rhs - rhs).abs() < 0.01 * rhs, "{} vs {rhs}", v.rhs);
    assert!(v.passed && !v.vacuous);
}

#[test]
fn capacity_estimate_for_stretched_slab() {
    let d = square(16);
    let half = |offset, side| PlateSpec::HalfSpace {
        axis: 0,
        offset,
        side,
    };
    let c = Condenser {
        f0: Plate::from_spec(&half(0.0, Side::Below), &d, "F0").unwrap(),
        f1: Plate::from_spec(&half(1.0, Side::Above), &d, "F1").unwrap(),
        domain: d,
        p: 2.0,
    };
    let v = capacity_distortion_check(
        &diag21(),
        &c,
        &image_rect(16),
        CapacityForm::Inner { q: 2.0, s: 1.5 },
        &SolverConfig::default(),
        Scheme::Analytic,
        &seq(),
    )
    .unwrap();
    // slab capacity = width · separation^{1−p}
    let lhs = (2f64.powf(-0.5)).powf(1.0 / 1.5);
    let rhs = 2f64.powf(2.0 / 3.0);
    assert!(
        (v.lhs - lhs).abs() < 1e-5 && (v.rhs - rhs).abs() < 1e-5,
        "{v:?}"
    );
    assert!(v.passed);

    let v = capacity_distortion_check(
        &diag21(),
        &c,
        &image_rect(16),
        CapacityForm::SameExponent { p: 2.0 },
        &SolverConfig::default(),
        Scheme::Analytic,
        &seq(),
    )
    .unwrap();
    // 1 ≤ √2 · (1/2)^{1/2}: equality
    assert!(
        (v.lhs - 1.0).abs() < 1e-5 && (v.rhs - 1.0).abs() < 1e-5,
        "{v:?}"
    );
    assert!(v.passed);
}

#[test]
fn energy_bounds_are_tight_for_identity() {
    let d = Domain::rect(vec![0.0, 0.0], vec![1.5, 1.0], 12);
    let fam = FamilySpec::Coordinate { count: None }.members(&d).unwrap();
    let vs = energy_bounds_check(
        &Mapping::Identity,
        &d,
        &d,
        2.0,
        2.0,
        &fam,
        Scheme::Analytic,
        &seq(),
    )
    .unwrap();
    assert_eq!(vs.len(), 4);
    for v in vs {
        assert!(v.passed && !v.vacuous);
        assert!(
            (v.lhs - 1.5f64.sqrt()).abs() < 1e-12 && relative_residual(v.lhs, v.rhs) < 1e-10,
            "{v:?}"
        );
    }
}

#[test]
fn energy_bounds_for_diagonal_map() {
    let fam = vec![TestFunction::Coordinate { axis: 0 }];
    let vs = energy_bounds_check(
        &diag21(),
        &square(8),
        &image_rect(8),
        2.0,
        1.0,
        &fam,
        Scheme::Analytic,
        &seq(),
    )
    .unwrap();
    let (lower, upper) = (&vs[0], &vs[1]);
    assert!((lower.lhs - 1.0).abs() < 1e-12 && (lower.rhs - 2.0).abs() < 1e-12);
    assert!((upper.lhs - 2.0).abs() < 1e-12 && (upper.rhs - 2.0).abs() < 1e-12);
    assert!(lower.passed && upper.passed);
}

#[test]
fn energy_bounds_require_image_to_cover() {
    let fam = vec![TestFunction::Coordinate { axis: 0 }];
    let e = energy_bounds_check(
        &diag21(),
        &square(8),
        &square(8),
        2.0,
        1.0,
        &fam,
        Scheme::Analytic,
        &seq(),
    )
    .unwrap_err();
    assert!(e.to_string().contains("image_domain"));
}

#[test]
fn coordinate_function_is_extremal_for_diagonal_map() {
    let fam = FamilySpec::Coordinate { count: None }
        .members(&image_rect(8))
        .unwrap();
    let v = operator_norm_lower_bound(
        &diag21(),
        &square(8),
        &image_rect(8),
        2.0,
        2.0,
        &fam,
        Scheme::Analytic,
        &seq(),
    )
    .unwrap();
    assert!((v.lhs - 2f64.sqrt()).abs() < 1e-12 && (v.rhs - 2f64.sqrt()).abs() < 1e-12);
    assert!(v.passed);
    let ratios = v.metadata["ratios"].as_object().unwrap();
    assert!((ratios["y2"].as_f64().unwrap() - 1.0 / 2f64.sqrt()).abs() < 1e-12);
}

#[test]
fn infinite_right_side_is_vacuous() {
    let v = Verdict::inequality("x", 1.0, f64::INFINITY, 0.05);
    assert!(v.passed && v.vacuous);
    let v = Verdict::inequality("x", 1.06, 1.0, 0.05);
    assert!(!v.passed && !v.vacuous);
    let v = Verdict::identity("x", 1.0, 1.0 + 1e-7, 1e-6);
    assert!(v.passed);
}

#[test]
fn tolerance_override_applies_everywhere() {
    let s = Settings {
        tol_override: Some(1e-15),
        ..Settings::default()
    };
    assert_eq!(s.inequality_tol(), 1e-15);
    assert_eq!(s.identity_tol(Some(8)), 1e-15);
    assert_eq!(Settings::default().identity_tol(Some(256)), 1e-3);
    assert_eq!(Settings::default().identity_tol(Some(64)), 10.0 / 4096.0);
}
