use hopf_heat::mehler_kernel::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[test]
fn scalar_pde_order_two() {
    // [∂_τ − ∂²_y + b²y²]ℳ at (τ,y,x,b) = (0.5, 0.3, 0.1, 2.0)
    let res = |h: f64| {
        let m = |t: f64, y: f64| scalar_mehler(t, y, 0.1, 2.0).unwrap();
        let (t, y) = (0.5, 0.3);
        let dt = (m(t + h, y) - m(t - h, y)) / (2.0 * h);
        let dyy = (m(t, y + h) - 2.0 * m(t, y) + m(t, y - h)) / (h * h);
        (dt - dyy + 4.0 * y * y * m(t, y)).abs()
    };
    let ratio = res(1e-2) / res(5e-3);
    assert!((ratio - 4.0).abs() < 1.0, "ratio {ratio}");
}

#[test]
fn pde_residual_rejects_large_step() {
    let v = DVector::from_vec(vec![0.1]);
    assert!(pde_residual(0.1, &v, &v, &DMatrix::identity(1, 1), 0.2).is_err());
}

#[test]
fn frame_rotation_invariance() {
    let v = DVector::from_vec(vec![0.3, -0.2]);
    let a = DMatrix::from_row_slice(2, 2, &[0.8, 0.1, -0.4, 1.2]);
    let frame = FrameData::new(v, a).unwrap();
    let (c, s) = (0.7f64.cos(), 0.7f64.sin());
    let r = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
    let p = KernelParams::new(0.1, 2.0).unwrap();
    let a0 = supertrace_phi0_point(&p, &frame).unwrap();
    let a1 = supertrace_phi0_point(&p, &frame.rotated(&r)).unwrap();
    assert!((a0 - a1).abs() < 1e-10 * a0.abs().max(1.0));
}

proptest! {
    #[test]
    fn majorants_hold(tau in 0.01f64..2.0, e in proptest::collection::vec(-2.0f64..2.0, 8)) {
        let y = DVector::from_column_slice(&e[..2]);
        let a = DVector::from_column_slice(&e[2..4]);
        let b = DMatrix::from_column_slice(2, 2, &e[4..8]);
        prop_assert!(majorant_check(tau, &y, &a, &b).unwrap().holds());
    }

    #[test]
    fn three_routes_agree(tau in 0.05f64..1.0, e in proptest::collection::vec(-1.0f64..1.0, 15)) {
        let y = DVector::from_column_slice(&e[..3]);
        let x = DVector::from_column_slice(&e[3..6]);
        let b = DMatrix::from_column_slice(3, 3, &e[6..15]);
        prop_assert!(phi0_forms(tau, &y, &x, &b).unwrap().max_relative_deviation() < 1e-10);
    }
}
