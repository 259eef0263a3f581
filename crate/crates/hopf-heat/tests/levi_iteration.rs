use hopf_heat::levi_iteration::*;
use hopf_heat::witten_laplacian::{TorusField, VectorFieldSpec};

fn torus(name: &str) -> TorusField {
    match VectorFieldSpec::preset(name).unwrap().1 {
        VectorFieldSpec::Torus(f) => f,
        _ => unreachable!(),
    }
}

#[test]
fn theta_series_is_periodic_and_normalised() {
    let tau = 0.3;
    assert!((circle_heat_kernel(tau, 0.4) - circle_heat_kernel(tau, 0.4 + 2.0 * std::f64::consts::PI)).abs() < 1e-14);
    let n = 256;
    let h = 2.0 * std::f64::consts::PI / n as f64;
    let mass: f64 = (0..n).map(|k| circle_heat_kernel(tau, k as f64 * h) * h).sum();
    assert!((mass - 1.0).abs() < 1e-12);
}

#[test]
fn factorial_fit_recovers_exact_sequence() {
    let (a, b, tau): (f64, f64, f64) = (0.8, 0.3, 0.25);
    let mut norms = Vec::new();
    let mut f = 1.0;
    for m in 0..6 {
        if m > 0 {
            f *= m as f64;
        }
        norms.push(a * (b * tau).powi(m) / f);
    }
    let fit = fit_factorial(&norms, tau, 5).unwrap();
    assert!((fit.a - a).abs() < 1e-10 && (fit.b - b).abs() < 1e-10);
    assert!(fit.relative_residual < 1e-10);
}

#[test]
fn torus_smoke_run() {
    let out = run_levi(&torus("torus_sin"), &LeviConfig::torus_smoke(1.0)).unwrap();
    assert!(out.report.supertrace_sum.abs() < 1e-6);
    assert!(out.report.norms.len() >= 3);
}

#[test]
fn lemma_ratio_below_closed_form() {
    let s = ConvolutionSettings::default();
    for nu in [0.1, 0.5, 0.9] {
        let r = convolution_ratio(&s, 0.5, nu * 0.5, &[0.2, 0.1]).unwrap();
        assert!(r <= convolution_closed_form(&s, 0.5, nu * 0.5, &[0.2, 0.1]) * (1.0 + 1e-9));
    }
}

#[test]
fn defect_envelope_fits_at_either_endpoint() {
    let ctx = LeviContext::new(&torus("circle_sin"), &LeviConfig { grid: 16, ..LeviConfig::circle_default(1.0) }).unwrap();
    for at in [DecayPoint::Source, DecayPoint::Target] {
        let fit = defect_bound_fit(&ctx, &[0.1, 0.3, 0.6], at).unwrap();
        assert!(fit.c0.is_finite() && fit.c0 > 0.0, "{at:?}: {fit:?}");
        assert!(fit.c1.is_finite() && fit.c1 > 0.0, "{at:?}: {fit:?}");
    }
}
