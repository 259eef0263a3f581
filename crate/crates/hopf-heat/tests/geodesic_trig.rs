use hopf_heat::geodesic_trig::*;
use proptest::prelude::*;
use std::f64::consts::PI;

#[test]
fn solvers_agree_on_bump() {
    let s = Surface::GaussianBump { amplitude: 0.3, width: 0.8 };
    let spec = TriangleSpec { t: 0.4, theta: 1.7, l: 0.3, u: UnitTangent::new(-0.2, 0.1, 0.5) };
    let a = solve_sas_ode(&s, &spec).unwrap();
    let b = solve_sas_shooting(&s, &spec).unwrap();
    assert!((a.b - b.b).abs() < 1e-8 && (a.alpha - b.alpha).abs() < 1e-8 && (a.gamma - b.gamma).abs() < 1e-8);
}

#[test]
fn invalid_specs_rejected() {
    let u = UnitTangent::new(0.0, 0.0, 0.0);
    let s = Surface::UnitSphere;
    assert!(solve_sas(&s, &TriangleSpec { t: 0.0, theta: 1.0, l: 0.3, u }).is_err());
    assert!(solve_sas(&s, &TriangleSpec { t: 0.3, theta: 0.0, l: 0.3, u }).is_err());
    assert!(solve_sas(&s, &TriangleSpec { t: 2.0, theta: 1.0, l: 0.3, u }).is_err());
}

#[test]
fn sphere_distance_matches_chordal_formula() {
    // stereographic points (x, y) ↦ unit vectors; distance = angle between them
    let to3 = |(x, y): (f64, f64)| {
        let d = 1.0 + x * x + y * y;
        [2.0 * x / d, 2.0 * y / d, (1.0 - x * x - y * y) / d]
    };
    let (p, q) = ((0.1, 0.2), (-0.3, 0.05));
    let (a, b) = (to3(p), to3(q));
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let d = distance(&Surface::UnitSphere, p, q).unwrap();
    assert!((d - dot.acos()).abs() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn plane_sas_is_law_of_cosines(t in 0.05f64..1.0, l in 0.05f64..1.0, theta in 0.1f64..(PI - 0.1)) {
        let spec = TriangleSpec { t, theta, l, u: UnitTangent::new(0.3, -0.1, 1.0) };
        let sol = solve_sas_ode(&Surface::Plane, &spec).unwrap();
        let b = (t * t + l * l - 2.0 * t * l * theta.cos()).sqrt();
        prop_assert!((sol.b - b).abs() < 1e-10);
        prop_assert!((sol.alpha + sol.gamma + theta - PI).abs() < 1e-10);
    }

    #[test]
    fn propagator_is_unimodular(x in -0.5f64..0.5, y in -0.5f64..0.5, a in 0.0f64..6.0, t in 0.0f64..0.8) {
        let s = Surface::GaussianBump { amplitude: 0.3, width: 0.8 };
        let h = jacobi_propagator(&s, &UnitTangent::new(x, y, a), t).unwrap();
        prop_assert!((h.determinant() - 1.0).abs() < 1e-9);
    }
}
