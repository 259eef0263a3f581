use hopf_heat::witten_laplacian::*;
use proptest::prelude::*;

fn torus(name: &str) -> TorusField {
    match VectorFieldSpec::preset(name).unwrap().1 {
        VectorFieldSpec::Torus(f) => f,
        _ => unreachable!(),
    }
}

#[test]
fn perturbed_fields_keep_indices() {
    for (name, chi) in [("torus_sin_perturbed", 0), ("sphere_height_perturbed", 2)] {
        let (m, f) = VectorFieldSpec::preset(name).unwrap();
        let z = find_zeros(&m, &f, &ZeroSearch::default()).unwrap();
        assert_eq!(euler_via_indices(&z), chi, "{name}");
    }
}

#[test]
fn every_preset_resolves() {
    for name in PRESET_NAMES {
        let (m, f) = VectorFieldSpec::preset(name).unwrap();
        f.check_on(&m).unwrap();
    }
    assert!(VectorFieldSpec::preset("nope").is_err());
}

#[test]
fn dimension_cap_enforced() {
    assert!(DiscreteComplex::new(&torus("torus_sin"), 64).is_err());
}

#[test]
fn hodge_kernel_is_betti_sum() {
    let cx = DiscreteComplex::new(&torus("torus_sin"), 8).unwrap();
    let hs = HeatSemigroup::new(&cx.box_t(0.0)).unwrap();
    assert_eq!(hs.kernel_dimension(1e-9), 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn discrete_mckean_singer_any_time(tau in 0.01f64..2.0, t in 0.0f64..5.0) {
        let cx = DiscreteComplex::new(&torus("circle_sin"), 16).unwrap();
        prop_assert!(discrete_mckean_singer(&cx, tau, t).unwrap().abs() < 1e-9);
    }
}
