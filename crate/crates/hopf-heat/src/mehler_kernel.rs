//! Scalar and matrix Mehler kernels and the cut-off parametrix.
//!
//! Conventions: row vectors `Y`, `a` are stored as column [`DVector`]s; for a
//! frame `(v, A)` with `A_ij = ∂_j v_i`, the kernel matrix is `B = Aᵀ`, and
//! `Θ = √(4τ²BBᵀ)`, `Θ# = √(4τ²BᵀB)`. All exponents are accumulated in log
//! space and exponentiated once.
//!
//! The matrix Mehler kernel is
//!
//! ```text
//! Φ(τ,Y,a,B) = (4πτ)^{-n/2} √det(Θ/sinhΘ)
//!              · exp{ −(1/4τ) Y Θcoth Θ Yᵀ − 2τ Y D(Θ) B aᵀ − 2τ a D(Θ#) aᵀ },
//! D(θ) = (coshθ − 1)/(θ sinhθ),
//! ```
//!
//! the heat kernel of `∂_τ − Δ_Y + |a + YB|²` concentrated at `Y = 0`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exterior_algebra::{self, ExteriorOperator};
use crate::matrix_functions::{PsdSpectrum, SpectralFunctionId as F};

/// Heat-kernel time and deformation strength; `s = τ t` is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    tau: f64,
    t: f64,
}

impl KernelParams {
    /// Validates `τ > 0`, `t ≥ 0`.
    pub fn new(tau: f64, t: f64) -> Result<Self> {
        check_tau(tau)?;
        if !(t >= 0.0 && t.is_finite()) {
            return Err(invalid(format!("deformation strength t must be finite and ≥ 0, got {t}")));
        }
        Ok(Self { tau, t })
    }

    /// Parameters on the semiclassical path: fixed `s`, time `τ`, `t = s/τ`.
    pub fn from_s(s: f64, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        Self::new(tau, s / tau)
    }

    /// Heat time `τ`.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Deformation strength `t`.
    pub fn t(&self) -> f64 {
        self.t
    }

    /// `s = τ t`.
    pub fn s(&self) -> f64 {
        self.tau * self.t
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid(format!("heat time τ must be positive and finite, got {tau}")));
    }
    Ok(())
}

/// Vector-field data at a point in an orthonormal frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameData {
    /// Components `v_i`.
    pub v: DVector<f64>,
    /// Covariant derivative `A_ij = v_ij` (row `i`: component, column `j`: direction).
    pub a: DMatrix<f64>,
}

impl FrameData {
    /// Validates shapes and finiteness.
    pub fn new(v: DVector<f64>, a: DMatrix<f64>) -> Result<Self> {
        let n = v.len();
        if n == 0 || a.nrows() != n || a.ncols() != n {
            return Err(invalid("frame data must have v ∈ ℝⁿ and A ∈ ℝⁿˣⁿ"));
        }
        if !v.iter().chain(a.iter()).all(|x| x.is_finite()) {
            return Err(invalid("frame data must be finite"));
        }
        Ok(Self { v, a })
    }

    /// Dimension.
    pub fn n(&self) -> usize {
        self.v.len()
    }

    /// Kernel matrix `B = Aᵀ`.
    pub fn b(&self) -> DMatrix<f64> {
        self.a.transpose()
    }

    /// Frame change by an orthogonal `R`: `v → Rv`, `A → RARᵀ`.
    pub fn rotated(&self, r: &DMatrix<f64>) -> Self {
        Self { v: r * &self.v, a: r * &self.a * r.transpose() }
    }

    /// `|v|²`.
    pub fn v_norm_sq(&self) -> f64 {
        self.v.norm_squared()
    }
}

/// Euclidean heat kernel `Q(α,ρ) = (4πα)^{-n/2} exp(−ρ²/4α)`.
pub fn gaussian_q(alpha: f64, rho: f64, n: usize) -> f64 {
    (-(n as f64) / 2.0 * (4.0 * PI * alpha).ln() - rho * rho / (4.0 * alpha)).exp()
}

/// The 1-D Mehler kernel `ℳ(τ,y,x,b)` (heat kernel of `−∂²_y + b²y²`), `θ = 2bτ`.
pub fn scalar_mehler(tau: f64, y: f64, x: f64, b: f64) -> Result<f64> {
    check_tau(tau)?;
    let th = 2.0 * b.abs() * tau;
    let ln = -0.5 * (4.0 * PI * tau).ln() + 0.5 * crate::matrix_functions::ln_theta_over_sinh(th)
        - (F::ThetaCoth.eval(th) * (x * x + y * y) - 2.0 * F::ThetaOverSinh.eval(th) * x * y)
            / (4.0 * tau);
    Ok(ln.exp())
}

/// Precomputed `τ`- and `B`-dependent parts of `Φ(τ, ·, a, B)`.
#[derive(Debug, Clone)]
pub struct PhiKernel {
    n: usize,
    tau: f64,
    ln_prefactor: f64,
    /// `Θ coth Θ`
    c: DMatrix<f64>,
    /// `D(Θ) B aᵀ`
    dba: DVector<f64>,
    /// `a D(Θ#) aᵀ`
    a_dsharp_a: f64,
    a: DVector<f64>,
    b: DMatrix<f64>,
}

impl PhiKernel {
    /// Prepares `Φ(τ, ·, a, B)`.
    pub fn new(tau: f64, a: &DVector<f64>, b: &DMatrix<f64>) -> Result<Self> {
        check_tau(tau)?;
        let n = a.len();
        if b.nrows() != n || b.ncols() != n {
            return Err(invalid("B must be n×n with n = dim a"));
        }
        let th = PsdSpectrum::theta(b, 2.0 * tau)?;
        let ths = PsdSpectrum::theta_sharp(b, 2.0 * tau)?;
        let ln_prefactor =
            -(n as f64) / 2.0 * (4.0 * PI * tau).ln() + th.ln_sqrt_det_theta_over_sinh();
        let c = th.apply(F::ThetaCoth);
        let dba = th.apply(F::CoshMinusOneOverThetaSinh) * (b * a);
        let a_dsharp_a = a.dot(&(ths.apply(F::CoshMinusOneOverThetaSinh) * a));
        Ok(Self { n, tau, ln_prefactor, c, dba, a_dsharp_a, a: a.clone(), b: b.clone() })
    }

    /// Dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    /// `ln[(4πτ)^{-n/2} √det(Θ/sinhΘ)]`.
    pub fn ln_prefactor(&self) -> f64 {
        self.ln_prefactor
    }

    /// `Θ coth Θ`.
    pub fn theta_coth(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// `ln Φ(τ,Y,a,B)`.
    pub fn ln_phi(&self, y: &DVector<f64>) -> f64 {
        self.ln_prefactor
            - y.dot(&(&self.c * y)) / (4.0 * self.tau)
            - 2.0 * self.tau * y.dot(&self.dba)
            - 2.0 * self.tau * self.a_dsharp_a
    }

    /// `Φ(τ,Y,a,B)`.
    pub fn phi(&self, y: &DVector<f64>) -> f64 {
        self.ln_phi(y).exp()
    }

    /// `∇_Y ln Φ = −Θcoth Θ Y/(2τ) − 2τ D(Θ) B a`.
    pub fn grad_ln_phi(&self, y: &DVector<f64>) -> DVector<f64> {
        -(&self.c * y) / (2.0 * self.tau) - &self.dba * (2.0 * self.tau)
    }

    /// `Δ_Y Φ / Φ = |∇ ln Φ|² − tr(Θ coth Θ)/(2τ)`.
    pub fn laplacian_over_phi(&self, y: &DVector<f64>) -> f64 {
        self.grad_ln_phi(y).norm_squared() - self.c.trace() / (2.0 * self.tau)
    }

    /// The harmonic potential `|a + YB|²`.
    pub fn potential(&self, y: &DVector<f64>) -> f64 {
        (&self.a + self.b.transpose() * y).norm_squared()
    }
}

/// Matrix Mehler kernel `Φ(τ,Y,a,B)`.
pub fn phi(tau: f64, y: &DVector<f64>, a: &DVector<f64>, b: &DMatrix<f64>) -> Result<f64> {
    check_len(y, a.len())?;
    Ok(PhiKernel::new(tau, a, b)?.phi(y))
}

/// `ln Φ(τ,Y,a,B)`.
pub fn ln_phi(tau: f64, y: &DVector<f64>, a: &DVector<f64>, b: &DMatrix<f64>) -> Result<f64> {
    check_len(y, a.len())?;
    Ok(PhiKernel::new(tau, a, b)?.ln_phi(y))
}

/// Relative finite-difference residual `[∂_τ − Σ∂²_{y_i} + |a + YB|²]Φ / Φ`
/// with central differences of step `h` in `τ` and every `y_i`.
pub fn pde_residual(tau: f64, y: &DVector<f64>, a: &DVector<f64>, b: &DMatrix<f64>, h: f64) -> Result<f64> {
    check_len(y, a.len())?;
    if !(h > 0.0 && h < tau) {
        return Err(invalid(format!("step h = {h} must lie in (0, τ)")));
    }
    let k = PhiKernel::new(tau, a, b)?;
    let centre = k.phi(y);
    let d_tau = (phi(tau + h, y, a, b)? - phi(tau - h, y, a, b)?) / (2.0 * h);
    let mut lap = 0.0;
    for i in 0..y.len() {
        let mut yp = y.clone();
        yp[i] += h;
        let mut ym = y.clone();
        ym[i] -= h;
        lap += (k.phi(&yp) - 2.0 * centre + k.phi(&ym)) / (h * h);
    }
    Ok((d_tau - lap + k.potential(y) * centre).abs() / centre)
}

fn check_len(y: &DVector<f64>, n: usize) -> Result<()> {
    if y.len() != n {
        return Err(invalid(format!("vector has length {}, expected {n}", y.len())));
    }
    Ok(())
}

/// The three evaluations of `Φ₀(τ,Y,X,B) = Φ(τ, Y−X, XB, B)` in log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phi0Forms {
    /// Bilinear (Mehler) form.
    pub ln_bilinear: f64,
    /// Sum/difference form.
    pub ln_split: f64,
    /// Definition unrolled through `Φ`.
    pub ln_direct: f64,
}

impl Phi0Forms {
    /// Largest relative disagreement between the three values.
    pub fn max_relative_deviation(&self) -> f64 {
        let v = [self.ln_bilinear, self.ln_split, self.ln_direct];
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..i {
                // relative difference of the exponentials
                worst = worst.max((v[i] - v[j]).exp_m1().abs());
            }
        }
        worst
    }
}

/// Evaluates `Φ₀` by all three routes.
pub fn phi0_forms(tau: f64, y: &DVector<f64>, x: &DVector<f64>, b: &DMatrix<f64>) -> Result<Phi0Forms> {
    let n = b.nrows();
    check_len(y, n)?;
    check_len(x, n)?;
    check_tau(tau)?;
    let th = PsdSpectrum::theta(b, 2.0 * tau)?;
    let ln_pre = -(n as f64) / 2.0 * (4.0 * PI * tau).ln() + th.ln_sqrt_det_theta_over_sinh();
    let c = th.apply(F::ThetaCoth);
    let s = th.apply(F::ThetaOverSinh);
    let cm = th.apply(F::ThetaCoshMinusOneOverSinh);
    let cp = th.apply(F::ThetaCoshPlusOneOverSinh);
    let ln_bilinear = ln_pre - y.dot(&(&c * y)) / (4.0 * tau) - x.dot(&(&c * x)) / (4.0 * tau)
        + y.dot(&(&s * x)) / (2.0 * tau);
    let sum = y + x;
    let diff = y - x;
    let ln_split =
        ln_pre - sum.dot(&(&cm * &sum)) / (8.0 * tau) - diff.dot(&(&cp * &diff)) / (8.0 * tau);
    // X B as a row vector is Bᵀ X as a column.
    let a = b.transpose() * x;
    let ln_direct = ln_phi(tau, &diff, &a, b)?;
    Ok(Phi0Forms { ln_bilinear, ln_split, ln_direct })
}

/// `Φ₀(τ,Y,X,B)`, cross-checked between the closed forms.
///
/// Returns [`Error::Consistency`] if the routes disagree by more than `1e-8`
/// relative.
pub fn phi0(tau: f64, y: &DVector<f64>, x: &DVector<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let f = phi0_forms(tau, y, x, b)?;
    let dev = f.max_relative_deviation();
    if !(dev <= 1e-8) {
        return Err(Error::Consistency(format!("Φ₀ closed forms disagree by {dev:e}")));
    }
    Ok(f.ln_bilinear.exp())
}

/// `Φ` together with the two Gaussian majorants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MajorantBounds {
    /// `Φ(τ,Y,a,B)`.
    pub lhs: f64,
    /// Majorant `pre · exp{−(1/8τ) Y Θ(coshΘ+1)/sinhΘ Yᵀ}` (independent of `a`).
    pub rhs_i: f64,
    /// Majorant `pre · exp{−τ a sinhΘ#/(Θ# coshΘ#) aᵀ}` (independent of `Y`).
    pub rhs_ii: f64,
}

impl MajorantBounds {
    /// `lhs ≤ min(rhs_i, rhs_ii)·(1 + 1e-12)`.
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs_i.min(self.rhs_ii) * (1.0 + 1e-12)
    }
}

/// Evaluates `Φ` and its two majorants.
///
/// The `a`-majorant is evaluated with `Θ#`: completing the square in `Y`
/// leaves `a (D(Θ#) − D(Θ#)Θ#²(Θ#cothΘ#)⁻¹D(Θ#)) aᵀ·2τ = τ a tanh(Θ#)/Θ# aᵀ`,
/// which is where the intertwining `g(BBᵀ)B = Bg(BᵀB)` moves every factor onto
/// `Θ#`.
pub fn majorant_check(tau: f64, y: &DVector<f64>, a: &DVector<f64>, b: &DMatrix<f64>) -> Result<MajorantBounds> {
    check_len(y, a.len())?;
    let k = PhiKernel::new(tau, a, b)?;
    let th = PsdSpectrum::theta(b, 2.0 * tau)?;
    let ths = PsdSpectrum::theta_sharp(b, 2.0 * tau)?;
    let cp = th.apply(F::ThetaCoshPlusOneOverSinh);
    let tanh_over = ths.apply(F::TanhOverTheta);
    let pre = k.ln_prefactor();
    Ok(MajorantBounds {
        lhs: k.phi(y),
        rhs_i: (pre - y.dot(&(&cp * y)) / (8.0 * tau)).exp(),
        rhs_ii: (pre - tau * a.dot(&(&tanh_over * a))).exp(),
    })
}

/// `Σ_{j,k} v_jk E⁺_j E⁻_k` for the frame's derivative matrix.
pub fn deformation_operator(frame: &FrameData) -> Result<ExteriorOperator> {
    exterior_algebra::bilinear_e_plus_e_minus(&frame.a)
}

/// The pointwise semiclassical operator `φ₀(τ,t,p)`.
///
/// `(4πτ)^{-n/2} √det(θ/sinhθ) exp{−2τt² v D(θ) vᵀ} · exp(τt Σ v_ij E⁺_i E⁻_j)`
/// with `θ = 2τt √(AAᵀ)`.
pub fn phi0_point(params: &KernelParams, frame: &FrameData) -> Result<ExteriorOperator> {
    let (scalar, m) = phi0_point_parts(params, frame)?;
    Ok(exterior_algebra::exp_operator(&m)?.scale(scalar))
}

/// Scalar prefactor and exponent operator `τtM` of `φ₀`.
pub fn phi0_point_parts(params: &KernelParams, frame: &FrameData) -> Result<(f64, ExteriorOperator)> {
    let n = frame.n();
    let (tau, t) = (params.tau(), params.t());
    let aat = &frame.a * frame.a.transpose();
    let th = PsdSpectrum::new(&aat)?;
    let th = PsdSpectrum {
        values: th.values.map(|l| 2.0 * tau * t * l.sqrt()),
        vectors: th.vectors,
    };
    let d = th.apply(F::CoshMinusOneOverThetaSinh);
    let ln = -(n as f64) / 2.0 * (4.0 * PI * tau).ln() + th.ln_sqrt_det_theta_over_sinh()
        - 2.0 * tau * t * t * frame.v.dot(&(d * &frame.v));
    let m = deformation_operator(frame)?.scale(tau * t);
    Ok((ln.exp(), m))
}

/// `str φ₀(τ,t,p)`, with the operator exponential's supertrace taken without
/// cancellation.
pub fn supertrace_phi0_point(params: &KernelParams, frame: &FrameData) -> Result<f64> {
    let (scalar, m) = phi0_point_parts(params, frame)?;
    Ok(scalar * exterior_algebra::supertrace_exp(&m)?)
}

/// Frobenius norm `|ψ| = √tr(ψψ*)`.
pub fn operator_norm(op: &ExteriorOperator) -> f64 {
    op.frobenius_norm()
}

/// Radial profile of the cut-off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CutoffProfile {
    /// `C^∞` transition `e^{−1/x}/(e^{−1/x} + e^{−1/(1−x)})`.
    #[default]
    Smooth,
    /// Quintic smoothstep `6x⁵ − 15x⁴ + 10x³` (`C²`).
    Quintic,
}

impl CutoffProfile {
    /// `(S, S', S'')` of the transition `S: [0,1] → [0,1]`.
    pub fn step(self, x: f64) -> (f64, f64, f64) {
        if x <= 0.0 {
            return (0.0, 0.0, 0.0);
        }
        if x >= 1.0 {
            return (1.0, 0.0, 0.0);
        }
        match self {
            Self::Quintic => (
                x * x * x * (10.0 + x * (-15.0 + 6.0 * x)),
                30.0 * x * x * (1.0 - x) * (1.0 - x),
                60.0 * x * (1.0 - x) * (1.0 - 2.0 * x),
            ),
            Self::Smooth => {
                // f(x) = e^{−1/x}, f' = f/x², f'' = f(1/x⁴ − 2/x³)
                let e = |u: f64| (-1.0 / u).exp();
                let (y, a) = (1.0 - x, e(x));
                let b = e(y);
                let (a1, b1) = (a / (x * x), -b / (y * y));
                let (a2, b2) = (
                    a * (1.0 / x.powi(4) - 2.0 / x.powi(3)),
                    b * (1.0 / y.powi(4) - 2.0 / y.powi(3)),
                );
                let s = a + b;
                let num = a1 * b - a * b1;
                let num1 = a2 * b - a * b2;
                (a / s, num / (s * s), num1 / (s * s) - 2.0 * num * (a1 + b1) / (s * s * s))
            }
        }
    }
}

/// Radial cut-off `φ(ρ)`: `≡ 1` for `ρ ≤ r₁`, `≡ 0` for `ρ ≥ r₂`, smooth in `ρ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    /// Inner radius `r₁`.
    pub r1: f64,
    /// Outer radius `r₂`.
    pub r2: f64,
    /// Chart (injectivity) bound; `r₂` must stay below it.
    pub injectivity: f64,
    /// Transition profile.
    #[serde(default)]
    pub profile: CutoffProfile,
}

/// Value, gradient and Laplacian of the cut-off at a point `Y ∈ ℝⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CutoffJet {
    /// `φ(Y)`.
    pub value: f64,
    /// `∇φ(Y)`.
    pub gradient: DVector<f64>,
    /// `Δφ(Y)`.
    pub laplacian: f64,
}

impl CutoffSpec {
    /// Validates `0 < r₁ < r₂ < injectivity`.
    pub fn new(r1: f64, r2: f64, injectivity: f64, profile: CutoffProfile) -> Result<Self> {
        if !(0.0 < r1 && r1 < r2 && r2 < injectivity && injectivity.is_finite()) {
            return Err(invalid(format!(
                "cut-off radii must satisfy 0 < r1 < r2 < injectivity, got {r1}, {r2}, {injectivity}"
            )));
        }
        Ok(Self { r1, r2, injectivity, profile })
    }

    /// Default radii `r₁ = 0.3·inj`, `r₂ = 0.6·inj`.
    pub fn default_for(injectivity: f64) -> Self {
        Self { r1: 0.3 * injectivity, r2: 0.6 * injectivity, injectivity, profile: CutoffProfile::Smooth }
    }

    /// `(g, g', g'')` as functions of `u = ρ²`.
    pub fn profile_in_rho_sq(&self, u: f64) -> (f64, f64, f64) {
        let span = self.r2 * self.r2 - self.r1 * self.r1;
        let x = (u - self.r1 * self.r1) / span;
        let (s, s1, s2) = self.profile.step(x);
        (1.0 - s, -s1 / span, -s2 / (span * span))
    }

    /// `φ(ρ)`.
    pub fn value(&self, rho: f64) -> f64 {
        self.profile_in_rho_sq(rho * rho).0
    }

    /// Value, gradient and Laplacian at `Y`.
    pub fn jet(&self, y: &DVector<f64>) -> CutoffJet {
        let u = y.norm_squared();
        let (g, g1, g2) = self.profile_in_rho_sq(u);
        CutoffJet {
            value: g,
            gradient: y * (2.0 * g1),
            laplacian: 4.0 * g2 * u + 2.0 * (y.len() as f64) * g1,
        }
    }
}

/// Source-point data of the parametrix `H(τ, ·, p, t)` on a flat chart.
#[derive(Debug, Clone)]
pub struct ParametrixSource {
    /// `Φ(τ, ·, t v(p), t B(p))`.
    pub phi: PhiKernel,
    /// `U = exp(τ t M(p))`, `M = Σ v_jk E⁺_j E⁻_k`.
    pub u: DMatrix<f64>,
    /// `M(p)`.
    pub m: DMatrix<f64>,
}

impl ParametrixSource {
    /// Precomputes the `p`-dependent pieces.
    pub fn new(params: &KernelParams, frame: &FrameData) -> Result<Self> {
        let t = params.t();
        let phi = PhiKernel::new(params.tau(), &(&frame.v * t), &(frame.b() * t))?;
        let m = deformation_operator(frame)?.into_matrix();
        let u = exterior_algebra::expm_matrix(&(&m * (params.tau() * t)))?;
        Ok(Self { phi, u, m })
    }
}

/// The parametrix `H(τ,q,p,t) = Φ(τ,Y,t v(p),t B(p)) · exp(τtM(p)) · φ(|Y|)`.
///
/// `Y` are normal coordinates of `q` centred at `p`.
pub fn parametrix(
    params: &KernelParams,
    frame: &FrameData,
    y: &DVector<f64>,
    cutoff: &CutoffSpec,
) -> Result<ExteriorOperator> {
    check_len(y, frame.n())?;
    let rho = y.norm();
    if !(rho < cutoff.injectivity) {
        return Err(Error::Chart(format!("|Y| = {rho} outside the chart of radius {}", cutoff.injectivity)));
    }
    if rho >= cutoff.r2 {
        return ExteriorOperator::zeros(frame.n());
    }
    let src = ParametrixSource::new(params, frame)?;
    let w = src.phi.phi(y) * cutoff.value(rho);
    ExteriorOperator::from_matrix(frame.n(), src.u * w)
}

/// Result of fitting `|H| ≤ c₀ Q(c₁τ,ρ) exp(−τt²|v(p)|²/c₁)` over samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianBoundFit {
    /// Fitted multiplicative constant.
    pub c0: f64,
    /// Fitted width constant.
    pub c1: f64,
}

/// One sample of a Gaussian-envelope fit: `(value, τ, ρ, τt²|v|², n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeSample {
    /// Quantity to be bounded (≥ 0).
    pub value: f64,
    /// Heat time.
    pub tau: f64,
    /// Distance `ρ(q,p)`.
    pub rho: f64,
    /// `τ t² |v(p)|²`.
    pub decay: f64,
    /// Dimension.
    pub n: usize,
}

/// Fits `(c₀, c₁)` with `value ≤ c₀ Q(c₁τ,ρ) e^{−decay/c₁}`.
///
/// `c₁` is scanned over a geometric grid in `[1, 64]`; for each, `c₀` is the
/// smallest constant that bounds every sample, and the `c₁` minimising `c₀` is
/// returned. The lemmas only assert existence, so the fit is reported rather
/// than compared with a target.
pub fn fit_gaussian_envelope(samples: &[EnvelopeSample]) -> GaussianBoundFit {
    let mut best = GaussianBoundFit { c0: f64::INFINITY, c1: 1.0 };
    for k in 0..=48 {
        let c1 = 2f64.powf(k as f64 / 8.0);
        let mut c0: f64 = 0.0;
        for s in samples {
            if s.value <= 0.0 {
                continue;
            }
            let ln_env = -(s.n as f64) / 2.0 * (4.0 * PI * c1 * s.tau).ln()
                - s.rho * s.rho / (4.0 * c1 * s.tau)
                - s.decay / c1;
            c0 = c0.max((s.value.ln() - ln_env).exp());
        }
        if c0 < best.c0 {
            best = GaussianBoundFit { c0, c1 };
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn mehler_b0_is_gaussian() {
        let (tau, y, x) = (0.3, 0.7, -0.2);
        let g = (4.0 * PI * tau).powf(-0.5) * (-(x - y) * (x - y) / (4.0 * tau)).exp();
        assert!((scalar_mehler(tau, y, x, 0.0).unwrap() - g).abs() < 1e-15);
        assert!(scalar_mehler(0.0, y, x, 1.0).is_err());
    }

    #[test]
    fn phi_n1_matches_scalar_chain() {
        let (tau, y, a, b) = (0.4, 0.3, 0.8, 1.3);
        let direct = phi(tau, &v(&[y]), &v(&[a]), &DMatrix::from_element(1, 1, b)).unwrap();
        let chain = scalar_mehler(tau, y + a / b, a / b, b).unwrap();
        assert!((direct / chain - 1.0).abs() < 1e-12);
    }

    #[test]
    fn phi0_special_cases() {
        let b = DMatrix::from_row_slice(2, 2, &[0.3, -1.0, 0.4, 0.7]);
        let x = v(&[0.2, -0.1]);
        let f = phi0_forms(0.5, &x, &x, &b).unwrap();
        assert!(f.max_relative_deviation() < 1e-12);
        let zero = v(&[0.0, 0.0]);
        let y = v(&[0.5, 0.1]);
        let p0 = phi0(0.5, &y, &zero, &b).unwrap();
        let p = phi(0.5, &y, &zero, &b).unwrap();
        assert!((p0 / p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn majorant_trivial_cases() {
        let b = DMatrix::from_row_slice(2, 2, &[0.3, -1.0, 0.4, 0.7]);
        let zero = v(&[0.0, 0.0]);
        let r = majorant_check(0.5, &zero, &v(&[1.0, 2.0]), &b).unwrap();
        let pre = PhiKernel::new(0.5, &zero, &b).unwrap().ln_prefactor().exp();
        assert!((r.rhs_i / pre - 1.0).abs() < 1e-14);
        assert!(r.holds());
        let r2 = majorant_check(0.5, &v(&[1.0, 0.3]), &zero, &b).unwrap();
        assert!((r2.rhs_ii / pre - 1.0).abs() < 1e-14);
        assert!(r2.holds());
    }

    #[test]
    fn phi0_point_zero_field() {
        let frame = FrameData::new(v(&[0.0, 0.0]), DMatrix::zeros(2, 2)).unwrap();
        let p = KernelParams::new(0.2, 3.0).unwrap();
        let op = phi0_point(&p, &frame).unwrap();
        let expect = DMatrix::<f64>::identity(4, 4) * (4.0 * PI * 0.2).powi(-1);
        assert!((op.matrix() - expect).amax() < 1e-14);
    }

    #[test]
    fn operator_norm_examples() {
        assert!((operator_norm(&ExteriorOperator::identity(2).unwrap()) - 2.0).abs() < 1e-15);
        let e = exterior_algebra::e_plus(1, 1).unwrap();
        assert!((operator_norm(&e) - 2f64.sqrt()).abs() < 1e-15);
        assert!((operator_norm(&e.scale(-3.0)) - 3.0 * 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn cutoff_support_and_derivatives() {
        for profile in [CutoffProfile::Smooth, CutoffProfile::Quintic] {
            let c = CutoffSpec::new(0.5, 1.0, 2.0, profile).unwrap();
            assert_eq!(c.value(0.3), 1.0);
            assert_eq!(c.value(1.2), 0.0);
            // finite-difference check of the jet in 2-D
            let y = v(&[0.55, 0.4]);
            let j = c.jet(&y);
            let h = 1e-4;
            let f = |dx: f64, dy: f64| c.jet(&v(&[y[0] + dx, y[1] + dy])).value;
            let gx = (f(h, 0.0) - f(-h, 0.0)) / (2.0 * h);
            let lap = (f(h, 0.0) + f(-h, 0.0) + f(0.0, h) + f(0.0, -h) - 4.0 * f(0.0, 0.0)) / (h * h);
            assert!((gx - j.gradient[0]).abs() < 1e-6, "{profile:?}");
            assert!((lap - j.laplacian).abs() < 1e-4, "{profile:?} {lap} {}", j.laplacian);
        }
        assert!(CutoffSpec::new(1.0, 0.5, 2.0, CutoffProfile::Smooth).is_err());
    }

    #[test]
    fn parametrix_support_and_diagonal() {
        let frame = FrameData::new(v(&[0.3, -0.2]), DMatrix::from_row_slice(2, 2, &[1.0, 0.2, -0.4, 0.8])).unwrap();
        let p = KernelParams::new(0.1, 2.0).unwrap();
        let c = CutoffSpec::default_for(PI);
        let far = parametrix(&p, &frame, &v(&[2.0, 0.0]), &c).unwrap();
        assert_eq!(far.max_abs(), 0.0);
        assert!(parametrix(&p, &frame, &v(&[4.0, 0.0]), &c).is_err());
        let diag = parametrix(&p, &frame, &v(&[0.0, 0.0]), &c).unwrap();
        let p0 = phi0_point(&p, &frame).unwrap();
        assert!((diag.matrix() - p0.matrix()).amax() <= 1e-10 * p0.max_abs());
    }
}
