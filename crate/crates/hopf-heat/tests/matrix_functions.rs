use hopf_heat::matrix_functions::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

#[test]
fn series_and_closed_forms_join_continuously() {
    for f in SpectralFunctionId::ALL {
        let t = SERIES_THRESHOLD;
        let (a, b) = (f.eval_series(t), f.eval_closed(t));
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{f:?}: {a} vs {b}");
    }
}

#[test]
fn nilpotent_intertwining() {
    let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    for f in SpectralFunctionId::ALL {
        assert!(intertwine_check(&b, f, 0.7, 1.3).unwrap() < 1e-12);
    }
}

#[test]
fn indefinite_matrix_rejected() {
    let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    assert!(sqrt_psd(&m).is_err());
}

proptest! {
    #[test]
    fn sqrt_squares_back(entries in proptest::collection::vec(-2.0f64..2.0, 9)) {
        let b = DMatrix::from_column_slice(3, 3, &entries);
        let m = &b * b.transpose();
        let r = sqrt_psd(&m).unwrap();
        prop_assert!((&r * &r - &m).amax() < 1e-10 * (1.0 + m.amax()));
    }

    #[test]
    fn intertwining_random(entries in proptest::collection::vec(-1.0f64..1.0, 9), tau in 0.05f64..1.0) {
        let b = DMatrix::from_column_slice(3, 3, &entries);
        for f in SpectralFunctionId::ALL {
            prop_assert!(intertwine_check(&b, f, tau, 1.0).unwrap() < 1e-9);
        }
    }
}
