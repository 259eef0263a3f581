//! Geodesic trigonometry on oriented surfaces.
//!
//! Surfaces are given in a single chart with a conformal metric `e^{2f}|dx|²`
//! (plane: `f = 0`; unit sphere: stereographic, `f = ln 2 − ln(1 + r²)`;
//! a Gaussian bump `f = a·exp(−r²/2w²)` of variable curvature). A unit tangent
//! vector is a base point with the Euclidean chart angle `φ` of its direction;
//! conformality makes chart angles equal metric angles.
//!
//! * `ξ^t` — geodesic flow; `η^s` — rotation of the direction by `s`.
//! * Jacobi propagator `H(t,u)`: `X' = [[0, −k(p(s))], [1, 0]] X`, `X(0) = I`,
//!   `p(s) = P(ξ^{−s}u)`.
//! * SAS solving: given sides `t = |AB|`, `l = |BC|` and the angle `θ` at `B`,
//!   the third side `b` and the angles `α` (at `A`) and `γ` (at `C`) follow
//!   from the ODE system in `l`
//!   `b' = cos γ, γ' = −(H₁₁/H₂₁) sin γ, α' = sin γ / H₂₁` with `H = H(b, u_A)`,
//!   started from the degenerate triangle `(b, γ, α) = (t, π − θ, 0)`.
//!   A shooting solver provides an independent oracle.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::witten_laplacian::wrap_angle;

/// A surface with conformal chart metric `e^{2f}|dx|²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Surface {
    /// Euclidean plane (`k ≡ 0`).
    Plane,
    /// Unit sphere in stereographic coordinates (`k ≡ 1`).
    UnitSphere,
    /// `f = amplitude · exp(−r²/(2 width²))`.
    GaussianBump {
        /// Amplitude `a`.
        amplitude: f64,
        /// Width `w`.
        width: f64,
    },
}

/// `(f, f_x, f_y, Δf)` at a chart point.
#[derive(Debug, Clone, Copy)]
struct Conformal {
    f: f64,
    fx: f64,
    fy: f64,
    lap: f64,
}

/// Chart points farther than this from the origin are treated as a chart exit.
pub const CHART_RADIUS: f64 = 50.0;

impl Surface {
    fn conformal(&self, x: f64, y: f64) -> Conformal {
        match *self {
            Self::Plane => Conformal { f: 0.0, fx: 0.0, fy: 0.0, lap: 0.0 },
            Self::UnitSphere => {
                let r2 = x * x + y * y;
                let d = 1.0 + r2;
                Conformal { f: 2f64.ln() - d.ln(), fx: -2.0 * x / d, fy: -2.0 * y / d, lap: -4.0 / (d * d) }
            }
            Self::GaussianBump { amplitude, width } => {
                let w2 = width * width;
                let r2 = x * x + y * y;
                let e = amplitude * (-r2 / (2.0 * w2)).exp();
                Conformal { f: e, fx: -x / w2 * e, fy: -y / w2 * e, lap: e * (r2 / (w2 * w2) - 2.0 / w2) }
            }
        }
    }

    /// Gaussian curvature `k = −e^{−2f} Δf`.
    pub fn curvature(&self, x: f64, y: f64) -> f64 {
        let c = self.conformal(x, y);
        -(-2.0 * c.f).exp() * c.lap
    }

    /// Conformal factor `e^{f}` (metric length of a unit chart vector).
    pub fn scale(&self, x: f64, y: f64) -> f64 {
        self.conformal(x, y).f.exp()
    }

    /// Injectivity bound used for smallness hypotheses.
    pub fn injectivity(&self) -> f64 {
        match self {
            Self::Plane => f64::INFINITY,
            Self::UnitSphere => PI,
            Self::GaussianBump { .. } => PI,
        }
    }

    /// Default smallness bound for triangle sides: `0.3·inj` (1 for the plane).
    pub fn triangle_epsilon(&self) -> f64 {
        match self {
            Self::Plane => 1.0,
            _ => 0.3 * self.injectivity(),
        }
    }

    fn check(&self) -> Result<()> {
        if let Self::GaussianBump { amplitude, width } = self {
            if !(amplitude.is_finite() && *width > 0.0 && width.is_finite()) {
                return Err(invalid("bump needs finite amplitude and positive width"));
            }
        }
        Ok(())
    }
}

/// A unit tangent vector: base point and chart angle of the direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitTangent {
    /// Chart `x`.
    pub x: f64,
    /// Chart `y`.
    pub y: f64,
    /// Chart angle of the direction.
    pub angle: f64,
}

impl UnitTangent {
    /// New unit tangent.
    pub fn new(x: f64, y: f64, angle: f64) -> Self {
        Self { x, y, angle }
    }

    /// Chart components of the direction (metric norm 1).
    pub fn direction(&self, surface: &Surface) -> (f64, f64) {
        let s = 1.0 / surface.scale(self.x, self.y);
        (s * self.angle.cos(), s * self.angle.sin())
    }

    /// Metric norm of the direction.
    pub fn metric_norm(&self, surface: &Surface) -> f64 {
        let (dx, dy) = self.direction(surface);
        surface.scale(self.x, self.y) * (dx * dx + dy * dy).sqrt()
    }

    /// Base point.
    pub fn base(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

/// Adaptive Dormand–Prince 5(4) settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeSettings {
    /// Absolute (and relative) error tolerance per step.
    pub tol: f64,
    /// Step cap.
    pub max_steps: usize,
}

impl Default for OdeSettings {
    fn default() -> Self {
        Self { tol: 1e-12, max_steps: 200_000 }
    }
}

/// Integrates `y' = f(s, y)` from `s = 0` to `s = end` (`end ≥ 0`).
pub fn dopri<const N: usize>(
    mut f: impl FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
    y0: [f64; N],
    end: f64,
    settings: &OdeSettings,
) -> Result<[f64; N]> {
    const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] =
        [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];
    if !(end >= 0.0 && end.is_finite()) {
        return Err(invalid(format!("integration length must be finite and ≥ 0, got {end}")));
    }
    let mut y = y0;
    if end == 0.0 {
        return Ok(y);
    }
    let mut s = 0.0;
    let mut h = (end / 16.0).min(0.05);
    let mut steps = 0;
    while s < end {
        if steps >= settings.max_steps {
            return Err(Error::NonConvergence("ODE step cap reached".into()));
        }
        steps += 1;
        let last = s + h >= end;
        if last {
            h = end - s;
        }
        let mut k = [[0.0; N]; 7];
        k[0] = f(s, &y)?;
        for st in 1..7 {
            let mut yt = y;
            for (i, yi) in yt.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(st) {
                    acc += A[st][j] * kj[i];
                }
                *yi += h * acc;
            }
            k[st] = f(s + C[st] * h, &yt)?;
        }
        let mut y5 = y;
        let mut err: f64 = 0.0;
        for i in 0..N {
            let (mut d5, mut d4) = (0.0, 0.0);
            for st in 0..7 {
                d5 += B5[st] * k[st][i];
                d4 += B4[st] * k[st][i];
            }
            y5[i] += h * d5;
            let sc = settings.tol * (1.0 + y[i].abs().max(y5[i].abs()));
            err = err.max((h * (d5 - d4)).abs() / sc);
        }
        if !err.is_finite() {
            return Err(Error::NonConvergence("ODE solution is not finite".into()));
        }
        if err <= 1.0 {
            s = if last { end } else { s + h };
            y = y5;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h < 1e-14 * end.max(1.0) {
            return Err(Error::NonConvergence("ODE step size underflow".into()));
        }
    }
    Ok(y)
}

fn geodesic_rhs(surface: &Surface, x: f64, y: f64, phi: f64) -> Result<[f64; 3]> {
    if !(x * x + y * y < CHART_RADIUS * CHART_RADIUS) {
        return Err(Error::Chart(format!("geodesic left the chart at ({x}, {y})")));
    }
    let c = surface.conformal(x, y);
    let e = (-c.f).exp();
    let (cs, sn) = (phi.cos(), phi.sin());
    Ok([e * cs, e * sn, e * (c.fy * cs - c.fx * sn)])
}

/// `η^s u`: rotation of the direction by `s` (counter-clockwise).
pub fn rotation_flow(u: &UnitTangent, s: f64) -> UnitTangent {
    UnitTangent { angle: u.angle + s, ..*u }
}

/// `ξ^t u` (negative `t` flows backwards).
pub fn geodesic_flow(surface: &Surface, u: &UnitTangent, t: f64) -> Result<UnitTangent> {
    geodesic_flow_with(surface, u, t, &OdeSettings::default())
}

/// `ξ^t u` with explicit integrator settings.
pub fn geodesic_flow_with(surface: &Surface, u: &UnitTangent, t: f64, settings: &OdeSettings) -> Result<UnitTangent> {
    surface.check()?;
    if t < 0.0 {
        let r = geodesic_flow_with(surface, &rotation_flow(u, PI), -t, settings)?;
        return Ok(rotation_flow(&r, PI));
    }
    let out = dopri(|_, s: &[f64; 3]| geodesic_rhs(surface, s[0], s[1], s[2]), [u.x, u.y, u.angle], t, settings)?;
    Ok(UnitTangent::new(out[0], out[1], out[2]))
}

/// Jacobi propagator `H(t,u)` (integrated jointly with the backward geodesic).
pub fn jacobi_propagator(surface: &Surface, u: &UnitTangent, t: f64) -> Result<Matrix2<f64>> {
    surface.check()?;
    if t < 0.0 {
        return Err(invalid("Jacobi propagator needs t ≥ 0"));
    }
    let start = rotation_flow(u, PI);
    let out = dopri(
        |_, s: &[f64; 7]| {
            let g = geodesic_rhs(surface, s[0], s[1], s[2])?;
            let k = surface.curvature(s[0], s[1]);
            // X' = [[0, −k], [1, 0]] X, X = [[s3, s4], [s5, s6]]
            Ok([g[0], g[1], g[2], -k * s[5], -k * s[6], s[3], s[4]])
        },
        [start.x, start.y, start.angle, 1.0, 0.0, 0.0, 1.0],
        t,
        &OdeSettings::default(),
    )?;
    Ok(Matrix2::new(out[3], out[4], out[5], out[6]))
}

/// Walks `ξ^σ v`, `σ ∈ [0, len]`, and returns the endpoint together with
/// `H(len, ξ^{len} v)` (the propagator read backwards along the same arc).
fn walk_with_propagator(surface: &Surface, v: &UnitTangent, len: f64, settings: &OdeSettings) -> Result<(UnitTangent, Matrix2<f64>)> {
    // Ψ' = −K Ψ along the forward arc; H(len, end) = Ψ(len)⁻¹ (det Ψ = 1).
    let out = dopri(
        |_, s: &[f64; 7]| {
            let g = geodesic_rhs(surface, s[0], s[1], s[2])?;
            let k = surface.curvature(s[0], s[1]);
            Ok([g[0], g[1], g[2], k * s[5], k * s[6], -s[3], -s[4]])
        },
        [v.x, v.y, v.angle, 1.0, 0.0, 0.0, 1.0],
        len,
        settings,
    )?;
    let psi = Matrix2::new(out[3], out[4], out[5], out[6]);
    let inv = Matrix2::new(psi[(1, 1)], -psi[(0, 1)], -psi[(1, 0)], psi[(0, 0)]) / psi.determinant();
    Ok((UnitTangent::new(out[0], out[1], out[2]), inv))
}

/// SAS data: sides `t = |AB|`, `l = |BC|`, angle `θ` at `B = P(u)`.
///
/// `u` points from `B` away from `A` (so `A = P(ξ^{−t}u)`), and
/// `C = P(ξ^l η^{π−θ} u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangleSpec {
    /// Side `|AB|`.
    pub t: f64,
    /// Angle at `B`.
    pub theta: f64,
    /// Side `|BC|`.
    pub l: f64,
    /// Frame at `B`.
    pub u: UnitTangent,
}

/// Solved triangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TriangleSolution {
    /// Side `|CA|`.
    pub b: f64,
    /// Angle at `A`.
    pub alpha: f64,
    /// Angle at `C`.
    pub gamma: f64,
}

fn check_spec(surface: &Surface, spec: &TriangleSpec, eps: f64) -> Result<()> {
    surface.check()?;
    if !(spec.t > 0.0 && spec.l > 0.0 && spec.t <= eps && spec.l <= eps) {
        return Err(invalid(format!("sides must lie in (0, {eps}], got t = {}, l = {}", spec.t, spec.l)));
    }
    if !(spec.theta > 0.0 && spec.theta <= PI) {
        return Err(invalid(format!("angle θ must lie in (0, π], got {}", spec.theta)));
    }
    Ok(())
}

/// `u_C = ξ^l η^{π−θ} u`, `u_A = ξ^b η^{π−γ} u_C` and `H(b, u_A)` for a state.
fn a_side(surface: &Surface, uc: &UnitTangent, b: f64, gamma: f64, settings: &OdeSettings) -> Result<(UnitTangent, Matrix2<f64>)> {
    walk_with_propagator(surface, &rotation_flow(uc, PI - gamma), b, settings)
}

/// Primary SAS solver: integrates the ODE system in `l`.
pub fn solve_sas_ode(surface: &Surface, spec: &TriangleSpec) -> Result<TriangleSolution> {
    check_spec(surface, spec, surface.triangle_epsilon())?;
    let settings = OdeSettings::default();
    let uc0 = rotation_flow(&spec.u, PI - spec.theta);
    let out = dopri(
        |_, s: &[f64; 6]| {
            let g = geodesic_rhs(surface, s[0], s[1], s[2])?;
            let (b, gamma) = (s[3], s[4]);
            let (_, h) = a_side(surface, &UnitTangent::new(s[0], s[1], s[2]), b, gamma, &settings)?;
            let (h11, h21) = (h[(0, 0)], h[(1, 0)]);
            if !(h21 > 0.0) {
                return Err(Error::NonConvergence("conjugate point reached (H₂₁ ≤ 0)".into()));
            }
            Ok([g[0], g[1], g[2], gamma.cos(), -h11 / h21 * gamma.sin(), gamma.sin() / h21])
        },
        [uc0.x, uc0.y, uc0.angle, spec.t, PI - spec.theta, 0.0],
        spec.l,
        &settings,
    )?;
    let sol = TriangleSolution { b: out[3], alpha: out[5], gamma: out[4] };
    if !(sol.b > 0.0) {
        return Err(Error::NonConvergence(format!("degenerate solution b = {}", sol.b)));
    }
    Ok(sol)
}

/// Geodesic between two chart points found by shooting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeodesicArc {
    /// Initial unit tangent at the start point.
    pub start: UnitTangent,
    /// Length.
    pub length: f64,
    /// Unit tangent on arrival.
    pub end: UnitTangent,
}

/// Shooting tolerance on the chart endpoint.
pub const SHOOTING_TOL: f64 = 1e-12;

/// Solves the geodesic boundary-value problem from `p` to `q` by Newton
/// shooting on the initial angle and the length.
pub fn shoot(surface: &Surface, p: (f64, f64), q: (f64, f64)) -> Result<GeodesicArc> {
    surface.check()?;
    let (dx, dy) = (q.0 - p.0, q.1 - p.1);
    let dist = (dx * dx + dy * dy).sqrt();
    if dist == 0.0 {
        let start = UnitTangent::new(p.0, p.1, 0.0);
        return Ok(GeodesicArc { start, length: 0.0, end: start });
    }
    let mid = surface.scale(0.5 * (p.0 + q.0), 0.5 * (p.1 + q.1));
    let (mut psi, mut len) = (dy.atan2(dx), mid * dist);
    let settings = OdeSettings::default();
    let endpoint = |psi: f64, len: f64| geodesic_flow_with(surface, &UnitTangent::new(p.0, p.1, psi), len, &settings);
    for _ in 0..60 {
        let e = endpoint(psi, len)?;
        let (rx, ry) = (e.x - q.0, e.y - q.1);
        if (rx * rx + ry * ry).sqrt() < SHOOTING_TOL * (1.0 + dist) {
            return Ok(GeodesicArc { start: UnitTangent::new(p.0, p.1, psi), length: len, end: e });
        }
        let hpsi = 1e-7;
        let ep = endpoint(psi + hpsi, len)?;
        let em = endpoint(psi - hpsi, len)?;
        let (jx_psi, jy_psi) = ((ep.x - em.x) / (2.0 * hpsi), (ep.y - em.y) / (2.0 * hpsi));
        let (vx, vy) = e.direction(surface);
        let det = jx_psi * vy - jy_psi * vx;
        if det.abs() < 1e-300 {
            return Err(Error::NonConvergence("singular shooting Jacobian".into()));
        }
        let dpsi = (rx * vy - ry * vx) / det;
        let dlen = (jx_psi * ry - jy_psi * rx) / det;
        // damped update keeping the length positive
        let mut step = 1.0;
        while len - step * dlen <= 0.0 {
            step *= 0.5;
        }
        psi -= step * dpsi;
        len -= step * dlen;
    }
    Err(Error::NonConvergence("geodesic shooting did not converge".into()))
}

/// Geodesic distance (shooting).
pub fn distance(surface: &Surface, p: (f64, f64), q: (f64, f64)) -> Result<f64> {
    Ok(shoot(surface, p, q)?.length)
}

/// Secondary SAS solver: constructs `A` and `C` directly and shoots `A → C`.
pub fn solve_sas_shooting(surface: &Surface, spec: &TriangleSpec) -> Result<TriangleSolution> {
    check_spec(surface, spec, surface.triangle_epsilon())?;
    let ua_back = geodesic_flow(surface, &spec.u, -spec.t)?; // at A, pointing towards B
    let uc = geodesic_flow(surface, &rotation_flow(&spec.u, PI - spec.theta), spec.l)?;
    let arc = shoot(surface, ua_back.base(), uc.base())?;
    let alpha = wrap_angle(arc.start.angle - ua_back.angle).abs();
    // at C: towards B is uc reversed, towards A is the arrival direction reversed
    let gamma = wrap_angle(arc.end.angle - uc.angle).abs();
    Ok(TriangleSolution { b: arc.length, alpha, gamma })
}

/// Largest allowed disagreement between the two SAS solvers.
pub const SAS_AGREEMENT: f64 = 1e-5;

/// SAS solve with the shooting cross-check.
pub fn solve_sas(surface: &Surface, spec: &TriangleSpec) -> Result<TriangleSolution> {
    let a = solve_sas_ode(surface, spec)?;
    let b = solve_sas_shooting(surface, spec)?;
    let d = (a.b - b.b).abs().max((a.alpha - b.alpha).abs()).max((a.gamma - b.gamma).abs());
    if d > SAS_AGREEMENT {
        return Err(Error::Consistency(format!("SAS solvers disagree by {d:e}: {a:?} vs {b:?}")));
    }
    Ok(a)
}

/// The rotation matrix `[θ]`.
pub fn angle_matrix(a: f64) -> Matrix3<f64> {
    Matrix3::new(-a.cos(), -a.sin(), 0.0, a.sin(), -a.cos(), 0.0, 0.0, 0.0, 1.0)
}

/// `diag(1, H)`.
pub fn side_matrix(h: &Matrix2<f64>) -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, 0.0, 0.0, h[(0, 0)], h[(0, 1)], 0.0, h[(1, 0)], h[(1, 1)])
}

/// The three side matrices `[AB], [BC], [CA]` of a solved triangle.
pub fn side_matrices(surface: &Surface, spec: &TriangleSpec, sol: &TriangleSolution) -> Result<[Matrix3<f64>; 3]> {
    let settings = OdeSettings::default();
    let ab = jacobi_propagator(surface, &spec.u, spec.t)?;
    let (uc, bc) = walk_with_propagator(surface, &rotation_flow(&spec.u, PI - spec.theta), spec.l, &settings)?;
    let (_, ca) = a_side(surface, &uc, sol.b, sol.gamma, &settings)?;
    Ok([side_matrix(&ab), side_matrix(&bc), side_matrix(&ca)])
}

/// Which SAS identity to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SasIdentity {
    /// Derivatives along the frame fields `X₁, X₂, X₃` of the unit tangent bundle.
    FrameDerivatives,
    /// Derivatives in the triangle parameters `t, θ, l`.
    ParameterDerivatives,
}

/// Frame fields: `X₁` geodesic, `X₃` fibre rotation, `X₂ = [X₃, X₁]`, whose
/// flow is `η^{−π/2} ξ^s η^{π/2}` (parallel transport of `u` along the
/// geodesic in the rotated direction).
pub fn frame_flow(surface: &Surface, u: &UnitTangent, field: usize, s: f64) -> Result<UnitTangent> {
    match field {
        1 => geodesic_flow(surface, u, s),
        2 => {
            let r = geodesic_flow(surface, &rotation_flow(u, PI / 2.0), s)?;
            Ok(rotation_flow(&r, -PI / 2.0))
        }
        3 => Ok(rotation_flow(u, s)),
        _ => Err(invalid("frame field index must be 1, 2 or 3")),
    }
}

/// Residual (max entry) of the SAS identity, with central differences of
/// step `h` of the primary solver.
pub fn sas_identity_check(surface: &Surface, spec: &TriangleSpec, which: SasIdentity, h: f64) -> Result<f64> {
    let sol = solve_sas_ode(surface, spec)?;
    let [ab, bc, ca] = side_matrices(surface, spec, &sol)?;
    let ra = angle_matrix(sol.alpha);
    let rg = angle_matrix(sol.gamma);
    // rows: derivative directions; columns of interest: (b, α, γ)
    let mut d = [[0.0; 3]; 3];
    for (row, dr) in d.iter_mut().enumerate() {
        let (p, m) = match which {
            SasIdentity::ParameterDerivatives => {
                let mut sp = *spec;
                let mut sm = *spec;
                match row {
                    0 => {
                        sp.t += h;
                        sm.t -= h;
                    }
                    1 => {
                        sp.theta += h;
                        sm.theta -= h;
                    }
                    _ => {
                        sp.l += h;
                        sm.l -= h;
                    }
                }
                (sp, sm)
            }
            SasIdentity::FrameDerivatives => (
                TriangleSpec { u: frame_flow(surface, &spec.u, row + 1, h)?, ..*spec },
                TriangleSpec { u: frame_flow(surface, &spec.u, row + 1, -h)?, ..*spec },
            ),
        };
        let (sp, sm) = (solve_sas_ode(surface, &p)?, solve_sas_ode(surface, &m)?);
        *dr = [(sp.b - sm.b) / (2.0 * h), (sp.alpha - sm.alpha) / (2.0 * h), (sp.gamma - sm.gamma) / (2.0 * h)];
    }
    let mut ma = Matrix3::zeros();
    let mut mb = Matrix3::zeros();
    let mut mg = Matrix3::zeros();
    for r in 0..3 {
        mb[(r, 0)] = d[r][0];
        ma[(r, 2)] = d[r][1];
        mg[(r, 2)] = d[r][2];
    }
    let lhs = ma * ab - mb * ra * ab + mg * ca * ra * ab;
    let tail = rg * ca * ra * ab;
    let rhs = match which {
        SasIdentity::FrameDerivatives => angle_matrix(spec.theta) * bc * tail - Matrix3::identity(),
        SasIdentity::ParameterDerivatives => {
            let mut e12 = Matrix3::zeros();
            e12[(1, 2)] = -1.0;
            let mut e20 = Matrix3::zeros();
            e20[(2, 0)] = 1.0;
            let mut e00 = Matrix3::zeros();
            e00[(0, 0)] = 1.0;
            e12 * bc * tail + e20 * tail + e00
        }
    };
    Ok((lhs - rhs).amax())
}

/// `(b²)_ll`: closed form and finite-difference cross-check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecondDerivative {
    /// `2cos²γ + 2b(H₁₁/H₂₁) sin²γ` with `H = H(b, u_A)`.
    pub closed_form: f64,
    /// Central second difference of `b²` in `l`.
    pub finite_difference: f64,
    /// `closed_form ≥ 1`.
    pub bound_holds: bool,
}

/// Closed form of `(b²)_ll` only.
pub fn b_squared_ll(surface: &Surface, spec: &TriangleSpec) -> Result<f64> {
    let sol = solve_sas_ode(surface, spec)?;
    let settings = OdeSettings::default();
    let uc = geodesic_flow(surface, &rotation_flow(&spec.u, PI - spec.theta), spec.l)?;
    let (_, h) = a_side(surface, &uc, sol.b, sol.gamma, &settings)?;
    let (c, s) = (sol.gamma.cos(), sol.gamma.sin());
    Ok(2.0 * c * c + 2.0 * sol.b * h[(0, 0)] / h[(1, 0)] * s * s)
}

/// Second-derivative check with finite-difference step `h` in `l`.
pub fn second_derivative_check(surface: &Surface, spec: &TriangleSpec, h: f64) -> Result<SecondDerivative> {
    let closed_form = b_squared_ll(surface, spec)?;
    let b2 = |l: f64| -> Result<f64> { Ok(solve_sas_ode(surface, &TriangleSpec { l, ..*spec })?.b.powi(2)) };
    let finite_difference = (b2(spec.l + h)? - 2.0 * b2(spec.l)? + b2(spec.l - h)?) / (h * h);
    Ok(SecondDerivative { closed_form, finite_difference, bound_holds: closed_form >= 1.0 })
}

/// `|b_l − cos γ|` with `b_l` from the fourth-order five-point stencil of step `h`.
pub fn b_l_residual(surface: &Surface, spec: &TriangleSpec, h: f64) -> Result<f64> {
    let sol = solve_sas_ode(surface, spec)?;
    let b = |dl: f64| -> Result<f64> { Ok(solve_sas_ode(surface, &TriangleSpec { l: spec.l + dl, ..*spec })?.b) };
    let d = (8.0 * (b(h)? - b(-h)?) - (b(2.0 * h)? - b(-2.0 * h)?)) / (12.0 * h);
    Ok((d - sol.gamma.cos()).abs())
}

/// Result of the distance comparison inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    /// `μρ(z,A)² + λρ(z,B)² − λμρ(A,B)²`.
    pub lhs: f64,
    /// `¼ρ(o,z)²`.
    pub rhs: f64,
    /// `ρ(o,z)²`.
    pub rho_oz_sq: f64,
    /// `lhs ≥ rhs − 1e-12`.
    pub holds: bool,
}

/// The comparison inequality at `(A, B, z, λ)`, `o` the point of `AB` with
/// `ρ(A,o) = λρ(A,B)`, `μ = 1 − λ`.
pub fn comparison_check(surface: &Surface, a: (f64, f64), b: (f64, f64), z: (f64, f64), lambda: f64) -> Result<Comparison> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(invalid("λ must lie in [0, 1]"));
    }
    let mu = 1.0 - lambda;
    let ab = shoot(surface, a, b)?;
    let o = if ab.length == 0.0 { a } else { geodesic_flow(surface, &ab.start, lambda * ab.length)?.base() };
    let za = distance(surface, z, a)?;
    let zb = distance(surface, z, b)?;
    let oz = distance(surface, o, z)?;
    let lhs = mu * za * za + lambda * zb * zb - lambda * mu * ab.length * ab.length;
    let rhs = 0.25 * oz * oz;
    Ok(Comparison { lhs, rhs, rho_oz_sq: oz * oz, holds: lhs >= rhs - 1e-12 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(t: f64, theta: f64, l: f64) -> TriangleSpec {
        TriangleSpec { t, theta, l, u: UnitTangent::new(0.05, -0.02, 0.3) }
    }

    #[test]
    fn plane_flow_is_straight() {
        let u = UnitTangent::new(1.0, 2.0, 0.4);
        let v = geodesic_flow(&Surface::Plane, &u, 3.0).unwrap();
        assert!((v.x - 1.0 - 3.0 * 0.4f64.cos()).abs() < 1e-12);
        assert!((v.y - 2.0 - 3.0 * 0.4f64.sin()).abs() < 1e-12);
        assert!((v.angle - 0.4).abs() < 1e-12);
    }

    #[test]
    fn sphere_curvature_is_one() {
        let s = Surface::UnitSphere;
        for (x, y) in [(0.0, 0.0), (0.3, -0.7), (2.0, 1.0)] {
            assert!((s.curvature(x, y) - 1.0).abs() < 1e-10);
        }
        assert_eq!(Surface::Plane.curvature(1.0, 1.0), 0.0);
    }

    #[test]
    fn great_circle_closes() {
        let s = Surface::UnitSphere;
        let u = UnitTangent::new(0.2, 0.1, 1.0);
        let v = geodesic_flow(&s, &u, 2.0 * PI).unwrap();
        assert!((v.x - u.x).abs() < 1e-8 && (v.y - u.y).abs() < 1e-8);
        assert!(wrap_angle(v.angle - u.angle).abs() < 1e-8);
        assert!((v.metric_norm(&s) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flow_law_and_rotation() {
        let s = Surface::GaussianBump { amplitude: 0.3, width: 0.8 };
        let u = UnitTangent::new(0.1, 0.2, -0.5);
        let a = geodesic_flow(&s, &geodesic_flow(&s, &u, 0.3).unwrap(), 0.4).unwrap();
        let b = geodesic_flow(&s, &u, 0.7).unwrap();
        assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9 && (a.angle - b.angle).abs() < 1e-9);
        let back = geodesic_flow(&s, &b, -0.7).unwrap();
        assert!((back.x - u.x).abs() < 1e-9 && (back.y - u.y).abs() < 1e-9);
        let r = rotation_flow(&u, 2.0 * PI);
        assert!(wrap_angle(r.angle - u.angle).abs() < 1e-15);
    }

    #[test]
    fn propagator_closed_forms() {
        let u = UnitTangent::new(0.1, -0.3, 2.0);
        let hp = jacobi_propagator(&Surface::Plane, &u, 0.7).unwrap();
        assert!((hp - Matrix2::new(1.0, 0.0, 0.7, 1.0)).amax() < 1e-12);
        let hs = jacobi_propagator(&Surface::UnitSphere, &u, 0.7).unwrap();
        let (c, s) = (0.7f64.cos(), 0.7f64.sin());
        assert!((hs - Matrix2::new(c, -s, s, c)).amax() < 1e-10);
        let hb = jacobi_propagator(&Surface::GaussianBump { amplitude: 0.3, width: 0.8 }, &u, 0.7).unwrap();
        assert!((hb.determinant() - 1.0).abs() < 1e-9);
        // the single-pass propagator agrees with the direct one
        let s = Surface::GaussianBump { amplitude: 0.3, width: 0.8 };
        let v = UnitTangent::new(0.2, 0.1, 0.9);
        let (end, h) = walk_with_propagator(&s, &v, 0.6, &OdeSettings::default()).unwrap();
        let direct = jacobi_propagator(&s, &end, 0.6).unwrap();
        assert!((h - direct).amax() < 1e-9);
    }

    #[test]
    fn plane_law_of_cosines() {
        let sp = spec(0.4, 1.1, 0.7);
        let sol = solve_sas(&Surface::Plane, &sp).unwrap();
        let b2 = 0.4f64.powi(2) + 0.7f64.powi(2) - 2.0 * 0.4 * 0.7 * 1.1f64.cos();
        assert!((sol.b - b2.sqrt()).abs() < 1e-10);
        assert!((sol.alpha + sol.gamma + 1.1 - PI).abs() < 1e-10);
    }

    #[test]
    fn sphere_law_of_cosines() {
        let sp = spec(0.5, 2.0, 0.8);
        let sol = solve_sas(&Surface::UnitSphere, &sp).unwrap();
        let cb = 0.5f64.cos() * 0.8f64.cos() + 0.5f64.sin() * 0.8f64.sin() * 2.0f64.cos();
        assert!((sol.b - cb.acos()).abs() < 1e-8);
    }

    #[test]
    fn collinear_limit() {
        let sol = solve_sas_ode(&Surface::UnitSphere, &spec(0.3, PI, 0.4)).unwrap();
        assert!((sol.b - 0.7).abs() < 1e-10 && sol.gamma.abs() < 1e-12);
    }

    #[test]
    fn identity_residuals() {
        let sp = spec(0.3, 1.2, 0.25);
        for s in [Surface::Plane, Surface::UnitSphere] {
            assert!(sas_identity_check(&s, &sp, SasIdentity::ParameterDerivatives, 1e-4).unwrap() < 1e-6);
            assert!(sas_identity_check(&s, &sp, SasIdentity::FrameDerivatives, 1e-4).unwrap() < 1e-6);
        }
        let bump = Surface::GaussianBump { amplitude: 0.3, width: 0.8 };
        assert!(sas_identity_check(&bump, &sp, SasIdentity::ParameterDerivatives, 1e-4).unwrap() < 1e-4);
        assert!(sas_identity_check(&bump, &sp, SasIdentity::FrameDerivatives, 1e-4).unwrap() < 1e-4);
    }

    #[test]
    fn second_derivative_plane_is_two() {
        let r = second_derivative_check(&Surface::Plane, &spec(0.3, 0.9, 0.2), 1e-3).unwrap();
        assert!((r.closed_form - 2.0).abs() < 1e-10);
        assert!((r.finite_difference - 2.0).abs() < 1e-5);
        let r = second_derivative_check(&Surface::UnitSphere, &spec(0.05, 0.9, 0.05), 1e-3).unwrap();
        assert!(r.bound_holds);
        assert!((r.closed_form - r.finite_difference).abs() < 1e-4);
    }

    #[test]
    fn comparison_examples() {
        let p = Surface::Plane;
        let c = comparison_check(&p, (0.0, 0.0), (0.3, 0.1), (0.1, 0.2), 0.4).unwrap();
        assert!((c.lhs - c.rho_oz_sq).abs() < 1e-10 && c.holds);
        let c = comparison_check(&Surface::UnitSphere, (0.0, 0.0), (0.1, 0.05), (0.02, 0.1), 0.0).unwrap();
        assert!(c.holds);
        assert!(comparison_check(&p, (0.0, 0.0), (1.0, 0.0), (0.0, 1.0), 1.5).is_err());
    }
}
