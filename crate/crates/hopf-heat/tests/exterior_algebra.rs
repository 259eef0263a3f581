use hopf_heat::exterior_algebra::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

#[test]
fn clifford_squares_and_anticommutators_n5() {
    let n = 5;
    let id = ExteriorOperator::<i64>::identity(n).unwrap();
    for j in 1..=n {
        let p = e_plus_exact(n, j).unwrap();
        let m = e_minus_exact(n, j).unwrap();
        assert_eq!(p.compose(&p), id);
        assert_eq!(m.compose(&m).matrix(), &(id.matrix() * -1));
        for k in 1..=n {
            let mk = e_minus_exact(n, k).unwrap();
            assert!(p.anticommutator(&mk).matrix().iter().all(|&x| x == 0));
        }
    }
}

#[test]
fn exact_and_float_agree() {
    for j in 1..=3 {
        assert_eq!(creation_exact(3, j).unwrap().to_f64(), creation(3, j).unwrap());
        assert_eq!(annihilation_exact(3, j).unwrap().to_f64(), annihilation(3, j).unwrap());
    }
}

#[test]
fn rejects_bad_indices() {
    assert!(creation(2, 0).is_err());
    assert!(creation(2, 3).is_err());
    assert!(Basis::new(MAX_DIM + 1).is_err());
}

#[test]
fn one_dimensional_exponential() {
    let op = bilinear_e_plus_e_minus(&DMatrix::from_element(1, 1, 0.3)).unwrap();
    let e = exp_operator(&op).unwrap();
    let diag = [e.matrix()[(0, 0)], e.matrix()[(1, 1)]];
    assert!((diag[0] - 0.3f64.exp()).abs() < 1e-14);
    assert!((diag[1] - (-0.3f64).exp()).abs() < 1e-14);
    assert!((supertrace_exp(&op).unwrap() - 2.0 * 0.3f64.sinh()).abs() < 1e-15);
}

proptest! {
    #[test]
    fn supertrace_of_commutator_vanishes(entries in proptest::collection::vec(-1.0f64..1.0, 32)) {
        // str is a supertrace: str(ab) = str(ba) for even a, b
        let a = bilinear_e_plus_e_minus(&DMatrix::from_column_slice(2, 2, &entries[..4])).unwrap();
        let b = bilinear_e_plus_e_minus(&DMatrix::from_column_slice(2, 2, &entries[4..8])).unwrap();
        let d = supertrace(&a.compose(&b)) - supertrace(&b.compose(&a));
        prop_assert!(d.abs() < 1e-12);
    }

    #[test]
    fn expm1_matches_exp_minus_identity(entries in proptest::collection::vec(-0.5f64..0.5, 16)) {
        let x = DMatrix::from_column_slice(4, 4, &entries);
        let f = expm1_matrix(&x).unwrap();
        let e = expm_matrix(&x).unwrap() - DMatrix::identity(4, 4);
        prop_assert!((f - e).amax() < 1e-14);
    }
}
