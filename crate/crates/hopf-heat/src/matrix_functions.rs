//! Even spectral functions of symmetric positive-semidefinite matrices.
//!
//! The Mehler kernels need `f(Θ)` for `Θ = √(4τ²BBᵀ)` and `Θ# = √(4τ²BᵀB)` and a
//! handful of even functions `f`. Every such `f` is a smooth function of `θ²`, so
//! the removable singularities at `θ = 0` are handled by even Taylor series below
//! [`SERIES_THRESHOLD`]; above it, algebraically stable closed forms are used (e.g.
//! `(coshθ−1)/(θ sinhθ) = tanh(θ/2)/θ`), so the two branches agree to round-off
//! at the crossover.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Eigenvalues below this threshold are evaluated by Taylor series.
pub const SERIES_THRESHOLD: f64 = 1e-3;
/// Negative eigenvalues of magnitude up to this (relative) tolerance are clamped to zero.
pub const PSD_TOLERANCE: f64 = 1e-12;

/// The closed set of even spectral functions used by the kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralFunctionId {
    /// `θ / sinh θ`
    ThetaOverSinh,
    /// `cosh θ`
    Cosh,
    /// `(cosh θ − 1)/(θ sinh θ) = tanh(θ/2)/θ`
    CoshMinusOneOverThetaSinh,
    /// `θ cosh θ / sinh θ = θ coth θ`
    ThetaCoth,
    /// `θ (cosh θ + 1)/sinh θ = θ coth(θ/2)`
    ThetaCoshPlusOneOverSinh,
    /// `θ (cosh θ − 1)/sinh θ = θ tanh(θ/2)`
    ThetaCoshMinusOneOverSinh,
    /// `sinh θ /(θ cosh θ) = tanh θ / θ`
    TanhOverTheta,
    /// `√(θ / sinh θ)`; its determinant over a matrix is `√det(Θ/sinh Θ)`.
    SqrtThetaOverSinh,
}

impl SpectralFunctionId {
    /// Every function in the enumeration.
    pub const ALL: [SpectralFunctionId; 8] = [
        Self::ThetaOverSinh,
        Self::Cosh,
        Self::CoshMinusOneOverThetaSinh,
        Self::ThetaCoth,
        Self::ThetaCoshPlusOneOverSinh,
        Self::ThetaCoshMinusOneOverSinh,
        Self::TanhOverTheta,
        Self::SqrtThetaOverSinh,
    ];

    /// Scalar evaluation at `θ ≥ 0` (series below the threshold).
    pub fn eval(self, theta: f64) -> f64 {
        let t = theta.abs();
        if t < SERIES_THRESHOLD {
            self.eval_series(t)
        } else {
            self.eval_closed(t)
        }
    }

    /// Closed-form branch (stable rewrites, no cancellation).
    pub fn eval_closed(self, t: f64) -> f64 {
        match self {
            Self::ThetaOverSinh => {
                if t > 700.0 {
                    // θ/sinhθ = 2θ e^{−θ}/(1 − e^{−2θ})
                    2.0 * t * (-t).exp()
                } else {
                    t / t.sinh()
                }
            }
            Self::Cosh => t.cosh(),
            Self::CoshMinusOneOverThetaSinh => (0.5 * t).tanh() / t,
            Self::ThetaCoth => t / t.tanh(),
            Self::ThetaCoshPlusOneOverSinh => t / (0.5 * t).tanh(),
            Self::ThetaCoshMinusOneOverSinh => t * (0.5 * t).tanh(),
            Self::TanhOverTheta => t.tanh() / t,
            Self::SqrtThetaOverSinh => Self::ThetaOverSinh.eval_closed(t).sqrt(),
        }
    }

    /// Even Taylor series in `θ²` (five terms).
    pub fn eval_series(self, t: f64) -> f64 {
        let x = t * t;
        let poly = |c: &[f64]| c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci);
        match self {
            Self::ThetaOverSinh => {
                poly(&[1.0, -1.0 / 6.0, 7.0 / 360.0, -31.0 / 15120.0, 127.0 / 604800.0])
            }
            Self::Cosh => poly(&[1.0, 0.5, 1.0 / 24.0, 1.0 / 720.0, 1.0 / 40320.0]),
            Self::CoshMinusOneOverThetaSinh => {
                poly(&[0.5, -1.0 / 24.0, 1.0 / 240.0, -17.0 / 40320.0, 31.0 / 725760.0])
            }
            Self::ThetaCoth => poly(&[1.0, 1.0 / 3.0, -1.0 / 45.0, 2.0 / 945.0, -1.0 / 4725.0]),
            Self::ThetaCoshPlusOneOverSinh => {
                poly(&[2.0, 1.0 / 6.0, -1.0 / 360.0, 1.0 / 15120.0, -1.0 / 604800.0])
            }
            Self::ThetaCoshMinusOneOverSinh => {
                poly(&[0.0, 0.5, -1.0 / 24.0, 1.0 / 240.0, -17.0 / 40320.0])
            }
            Self::TanhOverTheta => {
                poly(&[1.0, -1.0 / 3.0, 2.0 / 15.0, -17.0 / 315.0, 62.0 / 2835.0])
            }
            Self::SqrtThetaOverSinh => Self::ThetaOverSinh.eval_series(t).sqrt(),
        }
    }
}

/// `ln(θ / sinh θ)` for `θ ≥ 0`, stable for all magnitudes.
pub fn ln_theta_over_sinh(theta: f64) -> f64 {
    let t = theta.abs();
    if t < SERIES_THRESHOLD {
        SpectralFunctionId::ThetaOverSinh.eval_series(t).ln()
    } else {
        // sinh θ = e^θ (1 − e^{−2θ})/2
        t.ln() - t - (-(-2.0 * t).exp()).ln_1p() + std::f64::consts::LN_2
    }
}

/// Eigendecomposition of a symmetric PSD matrix, with eigenvalues clamped at 0.
#[derive(Debug, Clone)]
pub struct PsdSpectrum {
    /// Nonnegative eigenvalues.
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors (columns).
    pub vectors: DMatrix<f64>,
}

impl PsdSpectrum {
    /// Decomposes a symmetric PSD matrix.
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        check_symmetric(m)?;
        let scale = m.amax().max(1.0);
        let eig = m.clone().symmetric_eigen();
        let mut values = eig.eigenvalues;
        for v in values.iter_mut() {
            if *v < -PSD_TOLERANCE * scale {
                return Err(Error::NotPsd(format!("eigenvalue {v:e} below tolerance")));
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(Self { values, vectors: eig.eigenvectors })
    }

    /// Spectrum of `Θ = √(c² B Bᵀ)` (`c ≥ 0`), from one decomposition of `BBᵀ`.
    pub fn theta(b: &DMatrix<f64>, c: f64) -> Result<Self> {
        let bbt = b * b.transpose();
        let mut s = Self::new(&bbt)?;
        for v in s.values.iter_mut() {
            *v = c.abs() * v.sqrt();
        }
        Ok(s)
    }

    /// Spectrum of `Θ# = √(c² Bᵀ B)`.
    pub fn theta_sharp(b: &DMatrix<f64>, c: f64) -> Result<Self> {
        Self::theta(&b.transpose(), c)
    }

    /// Reassembles `V diag(g(λ)) Vᵀ`.
    pub fn map(&self, g: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&self.values.map(g));
        &self.vectors * d * self.vectors.transpose()
    }

    /// `f(Θ)` for an enumerated spectral function.
    pub fn apply(&self, f: SpectralFunctionId) -> DMatrix<f64> {
        self.map(|t| f.eval(t))
    }

    /// `ln √det(Θ / sinh Θ)`.
    pub fn ln_sqrt_det_theta_over_sinh(&self) -> f64 {
        0.5 * self.values.iter().map(|&t| ln_theta_over_sinh(t)).sum::<f64>()
    }

    /// The matrix itself, `V diag(λ) Vᵀ`.
    pub fn matrix(&self) -> DMatrix<f64> {
        self.map(|t| t)
    }
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(invalid("matrix must be square"));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(invalid("matrix has non-finite entries"));
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > PSD_TOLERANCE * scale {
        return Err(Error::NotPsd(format!("asymmetry {asym:e} exceeds tolerance")));
    }
    Ok(())
}

/// Principal square root of a symmetric PSD matrix.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(PsdSpectrum::new(m)?.map(f64::sqrt))
}

/// `f(Θ)` for a PSD matrix `Θ` by eigendecomposition.
pub fn apply_spectral(f: SpectralFunctionId, theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(PsdSpectrum::new(theta)?.apply(f))
}

/// `√det(Θ / sinh Θ)` for a PSD matrix `Θ`.
pub fn sqrt_det_theta_over_sinh(theta: &DMatrix<f64>) -> Result<f64> {
    Ok(PsdSpectrum::new(theta)?.ln_sqrt_det_theta_over_sinh().exp())
}

/// `‖f(Θ) B − B f(Θ#)‖_∞` with `Θ = 2τt√(BBᵀ)`, `Θ# = 2τt√(BᵀB)`.
///
/// The identity `g(BBᵀ)B = B g(BᵀB)` holds for every even `g`; this measures
/// how well it survives the floating-point evaluation.
pub fn intertwine_check(b: &DMatrix<f64>, f: SpectralFunctionId, tau: f64, t: f64) -> Result<f64> {
    let c = 2.0 * tau * t;
    let th = PsdSpectrum::theta(b, c)?;
    let ths = PsdSpectrum::theta_sharp(b, c)?;
    let lhs = th.apply(f) * b;
    let rhs = b * ths.apply(f);
    Ok((lhs - rhs).amax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use SpectralFunctionId as F;

    #[test]
    fn sqrt_examples() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert!((sqrt_psd(&i).unwrap() - &i).amax() < 1e-15);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let s = sqrt_psd(&d).unwrap();
        assert!((s - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))).amax() < 1e-14);
    }

    #[test]
    fn sqrt_rejects_indefinite_and_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-6]);
        assert!(matches!(sqrt_psd(&m), Err(Error::NotPsd(_))));
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(sqrt_psd(&a).is_err());
        let tiny = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-14]);
        assert!(sqrt_psd(&tiny).is_ok());
    }

    #[test]
    fn limits_at_zero() {
        let z = DMatrix::<f64>::zeros(2, 2);
        assert!((apply_spectral(F::ThetaOverSinh, &z).unwrap() - DMatrix::identity(2, 2)).amax() < 1e-16);
        let half = apply_spectral(F::CoshMinusOneOverThetaSinh, &z).unwrap();
        assert!((half - DMatrix::identity(2, 2) * 0.5).amax() < 1e-16);
        assert_eq!(sqrt_det_theta_over_sinh(&z).unwrap(), 1.0);
    }

    #[test]
    fn series_closed_agree_at_crossover() {
        for f in F::ALL {
            let a = f.eval_series(SERIES_THRESHOLD);
            let b = f.eval_closed(SERIES_THRESHOLD);
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-3), "{f:?}: {a} vs {b}");
        }
    }

    #[test]
    fn ln_theta_over_sinh_large() {
        let t: f64 = 20.0;
        assert!((ln_theta_over_sinh(t) - (t / t.sinh()).ln()).abs() < 1e-13);
        assert!(ln_theta_over_sinh(1e4).is_finite());
    }

    #[test]
    fn intertwine_nilpotent() {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        for f in F::ALL {
            assert!(intertwine_check(&b, f, 0.3, 1.5).unwrap() < 1e-14);
        }
    }
}
