//! Model manifolds, vector fields, the discrete Witten complex and index sums.
//!
//! * Flat tori `Tⁿ = (ℝ/2πℤ)ⁿ` (`n ∈ {1, 2}` for the discrete complex) and the
//!   unit sphere `S² ⊂ ℝ³`.
//! * Vector fields: trigonometric polynomials on tori; on the sphere, tangential
//!   projections `V = P(∇h + Lx)` of ambient fields (`h` a polynomial, `L` a
//!   constant matrix, `P = I − xxᵀ`).
//! * The discrete deformed de Rham complex on a torus, assembled so that the
//!   deformed Dirac operator `D_t` is symmetric and odd; then `□_t = D_t²` and the
//!   McKean–Singer identity holds exactly.
//! * Zero finding, Poincaré–Hopf indices and the semiclassical supertrace
//!   integral `∫ str φ₀(τ,t,p) dp`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exterior_algebra::{self, Basis};
use crate::matrix_functions::PsdSpectrum;
use crate::mehler_kernel::{self, FrameData, KernelParams};
use crate::quadrature::gauss_legendre;

/// A point on a model manifold: torus angles, or ambient coordinates on `S²`.
pub type Point = DVector<f64>;

/// Representative of an angle difference in `(−π, π]`.
pub fn wrap_angle(d: f64) -> f64 {
    let r = (d + PI).rem_euclid(2.0 * PI) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}

/// Model manifolds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelManifold {
    /// `(ℝ/2πℤ)ⁿ` with the flat metric.
    Torus {
        /// Dimension.
        n: usize,
    },
    /// Unit round sphere in `ℝ³`.
    Sphere,
}

/// A quadrature rule: points with positive weights.
#[derive(Debug, Clone)]
pub struct Quadrature {
    /// Nodes.
    pub points: Vec<Point>,
    /// Weights.
    pub weights: Vec<f64>,
}

impl ModelManifold {
    /// Intrinsic dimension.
    pub fn dim(&self) -> usize {
        match self {
            Self::Torus { n } => *n,
            Self::Sphere => 2,
        }
    }

    /// Riemannian volume.
    pub fn volume(&self) -> f64 {
        match self {
            Self::Torus { n } => (2.0 * PI).powi(*n as i32),
            Self::Sphere => 4.0 * PI,
        }
    }

    /// Euler characteristic.
    pub fn euler_characteristic(&self) -> i64 {
        match self {
            Self::Torus { .. } => 0,
            Self::Sphere => 2,
        }
    }

    /// Injectivity radius (`π` for both models).
    pub fn injectivity(&self) -> f64 {
        PI
    }

    /// Geodesic distance.
    pub fn distance(&self, p: &Point, q: &Point) -> f64 {
        match self {
            Self::Torus { .. } => {
                p.iter().zip(q.iter()).map(|(a, b)| wrap_angle(b - a).powi(2)).sum::<f64>().sqrt()
            }
            Self::Sphere => {
                // atan2 form is accurate for both tiny and near-antipodal separations.
                let c = p.dot(q);
                let s = Vector3::new(p[0], p[1], p[2]).cross(&Vector3::new(q[0], q[1], q[2])).norm();
                s.atan2(c)
            }
        }
    }

    /// Default quadrature: `N`-point trapezoid per torus direction; for the sphere
    /// `resolution`×`2·resolution` Gauss–Legendre(`cos θ`) × uniform(`φ`).
    pub fn quadrature(&self, resolution: usize) -> Result<Quadrature> {
        if resolution == 0 {
            return Err(invalid("quadrature resolution must be positive"));
        }
        match self {
            Self::Torus { n } => {
                let h = 2.0 * PI / resolution as f64;
                let total = resolution.pow(*n as u32);
                let mut points = Vec::with_capacity(total);
                for idx in 0..total {
                    let mut rem = idx;
                    let mut p = DVector::zeros(*n);
                    for d in 0..*n {
                        p[d] = (rem % resolution) as f64 * h;
                        rem /= resolution;
                    }
                    points.push(p);
                }
                Ok(Quadrature { points, weights: vec![h.powi(*n as i32); total] })
            }
            Self::Sphere => {
                let (z, wz) = gauss_legendre(resolution);
                let nphi = 2 * resolution;
                let dphi = 2.0 * PI / nphi as f64;
                let mut points = Vec::with_capacity(resolution * nphi);
                let mut weights = Vec::with_capacity(resolution * nphi);
                for (zi, wi) in z.iter().zip(&wz) {
                    let r = (1.0 - zi * zi).sqrt();
                    for j in 0..nphi {
                        let phi = (j as f64 + 0.5) * dphi;
                        points.push(DVector::from_vec(vec![r * phi.cos(), r * phi.sin(), *zi]));
                        weights.push(wi * dphi);
                    }
                }
                Ok(Quadrature { points, weights })
            }
        }
    }
}

/// `sin` or `cos`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrigKind {
    /// `sin(k·x)`
    Sin,
    /// `cos(k·x)`
    Cos,
}

/// One term `coeff · trig(k·x)` of a torus vector-field component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    /// Amplitude.
    pub coeff: f64,
    /// Integer wave vector `k`.
    pub wave: Vec<i32>,
    /// Trigonometric function.
    pub kind: TrigKind,
}

impl TrigTerm {
    fn eval(&self, x: &Point) -> (f64, Vec<f64>) {
        let phase: f64 = self.wave.iter().zip(x.iter()).map(|(k, xi)| *k as f64 * xi).sum();
        let (val, der) = match self.kind {
            TrigKind::Sin => (phase.sin(), phase.cos()),
            TrigKind::Cos => (phase.cos(), -phase.sin()),
        };
        (self.coeff * val, self.wave.iter().map(|k| self.coeff * der * *k as f64).collect())
    }
}

/// Trigonometric-polynomial vector field on `Tⁿ`; `components[i]` lists the terms of `v_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusField {
    /// Dimension.
    pub n: usize,
    /// Terms of each component.
    pub components: Vec<Vec<TrigTerm>>,
}

impl TorusField {
    fn validate(&self) -> Result<()> {
        if self.components.len() != self.n {
            return Err(invalid("torus field must have n components"));
        }
        for c in &self.components {
            for t in c {
                if t.wave.len() != self.n || !t.coeff.is_finite() {
                    return Err(invalid("torus field term has wrong wave-vector length or non-finite coefficient"));
                }
            }
        }
        Ok(())
    }

    /// `(v, A)` at `x` in the coordinate frame (`A_ij = ∂_j v_i`).
    pub fn frame_data(&self, x: &Point) -> FrameData {
        let n = self.n;
        let mut v = DVector::zeros(n);
        let mut a = DMatrix::zeros(n, n);
        for (i, comp) in self.components.iter().enumerate() {
            for term in comp {
                let (val, grad) = term.eval(x);
                v[i] += val;
                for j in 0..n {
                    a[(i, j)] += grad[j];
                }
            }
        }
        FrameData { v, a }
    }

    /// `v(x)`.
    pub fn value(&self, x: &Point) -> DVector<f64> {
        self.frame_data(x).v
    }

    /// Adds `coeff·other` to the field.
    pub fn plus(&self, coeff: f64, other: &TorusField) -> TorusField {
        let mut out = self.clone();
        for (c, o) in out.components.iter_mut().zip(&other.components) {
            c.extend(o.iter().map(|t| TrigTerm { coeff: coeff * t.coeff, ..t.clone() }));
        }
        out
    }

    /// True iff every coefficient vanishes.
    pub fn is_zero(&self) -> bool {
        self.components.iter().flatten().all(|t| t.coeff == 0.0)
    }
}

/// Monomial `coeff · x^i y^j z^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    /// Coefficient.
    pub coeff: f64,
    /// Exponents of `(x, y, z)`.
    pub powers: [u32; 3],
}

/// Tangential field `V = P(∇h + Lx)` on `S²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereField {
    /// Potential `h` as a sum of monomials.
    pub potential: Vec<Monomial>,
    /// Linear part `L` (row-major); zero by default.
    #[serde(default)]
    pub linear: [[f64; 3]; 3],
}

impl SphereField {
    /// Ambient field `W(x) = ∇h(x) + Lx` and its Jacobian.
    pub fn ambient(&self, x: &Vector3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
        let mut w = Vector3::zeros();
        let mut dw = Matrix3::zeros();
        let pw = |b: f64, e: i64| if e < 0 { 0.0 } else { b.powi(e as i32) };
        for m in &self.potential {
            let p = [m.powers[0] as i64, m.powers[1] as i64, m.powers[2] as i64];
            for i in 0..3 {
                // ∂_i h
                let mut e = p;
                let ci = p[i] as f64;
                if ci == 0.0 {
                    continue;
                }
                e[i] -= 1;
                w[i] += m.coeff * ci * pw(x[0], e[0]) * pw(x[1], e[1]) * pw(x[2], e[2]);
                for j in 0..3 {
                    let cj = e[j] as f64;
                    if cj <= 0.0 {
                        continue;
                    }
                    let mut f = e;
                    f[j] -= 1;
                    dw[(i, j)] += m.coeff * ci * cj * pw(x[0], f[0]) * pw(x[1], f[1]) * pw(x[2], f[2]);
                }
            }
        }
        let l = Matrix3::from_fn(|i, j| self.linear[i][j]);
        (w + l * x, dw + l)
    }

    /// Tangential field `V(x) = W − (x·W)x`.
    pub fn value(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let (w, _) = self.ambient(x);
        w - x * x.dot(&w)
    }

    /// Adds `coeff·other`.
    pub fn plus(&self, coeff: f64, other: &SphereField) -> SphereField {
        let mut out = self.clone();
        out.potential.extend(other.potential.iter().map(|m| Monomial { coeff: coeff * m.coeff, ..m.clone() }));
        for i in 0..3 {
            for j in 0..3 {
                out.linear[i][j] += coeff * other.linear[i][j];
            }
        }
        out
    }
}

/// A vector field on a model manifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "on", rename_all = "snake_case")]
pub enum VectorFieldSpec {
    /// Field on a flat torus.
    Torus(TorusField),
    /// Field on the unit sphere.
    Sphere(SphereField),
}

fn sin_term(coeff: f64, wave: Vec<i32>) -> TrigTerm {
    TrigTerm { coeff, wave, kind: TrigKind::Sin }
}
fn cos_term(coeff: f64, wave: Vec<i32>) -> TrigTerm {
    TrigTerm { coeff, wave, kind: TrigKind::Cos }
}
fn mono(coeff: f64, powers: [u32; 3]) -> Monomial {
    Monomial { coeff, powers }
}

/// Names of the built-in vector-field presets.
pub const PRESET_NAMES: [&str; 9] = [
    "circle_sin",
    "circle_zero",
    "torus_sin",
    "torus_sin_perturbed",
    "torus_zero",
    "sphere_height",
    "sphere_height_perturbed",
    "sphere_four_zero",
    "sphere_zero",
];

impl VectorFieldSpec {
    /// Built-in presets (see [`PRESET_NAMES`]).
    pub fn preset(name: &str) -> Result<(ModelManifold, VectorFieldSpec)> {
        let torus = |n: usize, components| (ModelManifold::Torus { n }, Self::Torus(TorusField { n, components }));
        let sphere = |potential, linear| (ModelManifold::Sphere, Self::Sphere(SphereField { potential, linear }));
        let z3 = [[0.0; 3]; 3];
        Ok(match name {
            "circle_sin" => torus(1, vec![vec![sin_term(1.0, vec![1])]]),
            "circle_zero" => torus(1, vec![vec![]]),
            "torus_sin" => torus(2, vec![vec![sin_term(1.0, vec![1, 0])], vec![sin_term(1.0, vec![0, 1])]]),
            "torus_sin_perturbed" => torus(
                2,
                vec![
                    vec![sin_term(1.0, vec![1, 0]), cos_term(0.05 * 0.7, vec![1, 2]), cos_term(0.05 * 0.3, vec![0, 0])],
                    vec![sin_term(1.0, vec![0, 1]), sin_term(-0.05 * 0.5, vec![2, -1]), cos_term(0.05 * 0.2, vec![0, 0])],
                ],
            ),
            "torus_zero" => torus(2, vec![vec![], vec![]]),
            "sphere_height" => sphere(vec![mono(1.0, [0, 0, 1])], z3),
            "sphere_height_perturbed" => sphere(
                vec![mono(1.0, [0, 0, 1]), mono(0.05 * 0.6, [1, 0, 0]), mono(-0.05 * 0.4, [0, 1, 0]), mono(0.05 * 0.2, [1, 1, 0])],
                [[0.0, -0.05, 0.0], [0.05, 0.0, 0.0], [0.0, 0.0, 0.0]],
            ),
            "sphere_four_zero" => sphere(vec![mono(1.0, [0, 0, 1]), mono(1.0, [2, 0, 0])], z3),
            "sphere_zero" => sphere(vec![], z3),
            other => {
                return Err(Error::Config(format!(
                    "unknown vector-field preset '{other}' (known: {})",
                    PRESET_NAMES.join(", ")
                )))
            }
        })
    }

    /// Checks that the field lives on the given manifold.
    pub fn check_on(&self, m: &ModelManifold) -> Result<()> {
        match (self, m) {
            (Self::Torus(f), ModelManifold::Torus { n }) if f.n == *n => f.validate(),
            (Self::Sphere(_), ModelManifold::Sphere) => Ok(()),
            _ => Err(invalid("vector field does not live on this manifold")),
        }
    }
}

/// One of the two polar-avoiding spherical charts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SphereChart {
    /// Polar axis `z`: `x = (sinθ cosφ, sinθ sinφ, cosθ)`.
    PolarZ,
    /// Polar axis `x`: `x = (cosθ, sinθ cosφ, sinθ sinφ)`.
    PolarX,
}

impl SphereChart {
    fn embed(self, u: Vector3<f64>) -> Vector3<f64> {
        match self {
            Self::PolarZ => u,
            Self::PolarX => Vector3::new(u[2], u[0], u[1]),
        }
    }

    fn unembed(self, x: &Vector3<f64>) -> Vector3<f64> {
        match self {
            Self::PolarZ => *x,
            Self::PolarX => Vector3::new(x[1], x[2], x[0]),
        }
    }

    /// Chart coordinates `(θ, φ)` of a point.
    pub fn coordinates(self, x: &Vector3<f64>) -> (f64, f64) {
        let u = self.unembed(x);
        (u[2].clamp(-1.0, 1.0).acos(), u[1].atan2(u[0]))
    }

    /// Point with chart coordinates `(θ, φ)`.
    pub fn point(self, theta: f64, phi: f64) -> Vector3<f64> {
        self.embed(Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()))
    }

    /// Orthonormal frame `(∂_θ, ∂_φ / sinθ)` in ambient coordinates.
    pub fn frame(self, theta: f64, phi: f64) -> (Vector3<f64>, Vector3<f64>) {
        (
            self.embed(Vector3::new(theta.cos() * phi.cos(), theta.cos() * phi.sin(), -theta.sin())),
            self.embed(Vector3::new(-phi.sin(), phi.cos(), 0.0)),
        )
    }

    /// Chooses the chart whose pole is farthest from `x`.
    pub fn best_for(x: &Vector3<f64>) -> Self {
        if x[2].abs() <= x[0].abs().max(0.7) {
            Self::PolarZ
        } else {
            Self::PolarX
        }
    }
}

/// Sphere frame data together with the ambient frame vectors used.
#[derive(Debug, Clone)]
pub struct SphereFrame {
    /// `(v, A)` in the frame `(e₁, e₂)`.
    pub data: FrameData,
    /// First frame vector.
    pub e1: Vector3<f64>,
    /// Second frame vector.
    pub e2: Vector3<f64>,
}

/// Chart route: finite-difference derivatives of the chart components plus
/// Christoffel corrections of the round metric `dθ² + sin²θ dφ²`.
pub fn sphere_frame_data_chart(field: &SphereField, x: &Vector3<f64>, chart: SphereChart) -> Result<SphereFrame> {
    let (theta, phi) = chart.coordinates(x);
    let st = theta.sin();
    if st < 1e-3 {
        return Err(Error::Chart(format!("point is at the pole of chart {chart:?}")));
    }
    let comps = |th: f64, ph: f64| -> (f64, f64) {
        let p = chart.point(th, ph);
        let v = field.value(&p);
        let (e1, e2) = chart.frame(th, ph);
        // ∂_θ = e1, ∂_φ = sinθ e2, so V^θ = V·e1 and V^φ = V·e2 / sinθ
        (v.dot(&e1), v.dot(&e2) / th.sin())
    };
    let h = 1e-5;
    let (vt, vp) = comps(theta, phi);
    let (tp, pp) = comps(theta + h, phi);
    let (tm, pm) = comps(theta - h, phi);
    let (tq, pq) = comps(theta, phi + h);
    let (tr, pr) = comps(theta, phi - h);
    let d_t_vt = (tp - tm) / (2.0 * h);
    let d_t_vp = (pp - pm) / (2.0 * h);
    let d_p_vt = (tq - tr) / (2.0 * h);
    let d_p_vp = (pq - pr) / (2.0 * h);
    let ct = theta.cos();
    let cot = ct / st;
    let nabla_t_vt = d_t_vt;
    let nabla_p_vt = d_p_vt - st * ct * vp;
    let nabla_t_vp = d_t_vp + cot * vp;
    let nabla_p_vp = d_p_vp + cot * vt;
    let v = DVector::from_vec(vec![vt, st * vp]);
    let a = DMatrix::from_row_slice(2, 2, &[nabla_t_vt, nabla_p_vt / st, st * nabla_t_vp, nabla_p_vp]);
    let (e1, e2) = chart.frame(theta, phi);
    Ok(SphereFrame { data: FrameData { v, a }, e1, e2 })
}

/// Extrinsic route (analytic): `A = E ᵀ(DW − (x·W) I) E` in a given orthonormal frame `E`.
pub fn sphere_frame_data_extrinsic(field: &SphereField, x: &Vector3<f64>, e1: &Vector3<f64>, e2: &Vector3<f64>) -> FrameData {
    let (w, dw) = field.ambient(x);
    let xw = x.dot(&w);
    let e = [e1, e2];
    let v = DVector::from_vec(vec![w.dot(e1), w.dot(e2)]);
    let a = DMatrix::from_fn(2, 2, |i, j| e[i].dot(&(dw * e[j])) - if i == j { xw } else { 0.0 });
    FrameData { v, a }
}

/// Frame data `(v, A)` at `p` (torus: coordinate frame; sphere: chart frame of the
/// better-conditioned chart).
pub fn frame_data_at(m: &ModelManifold, field: &VectorFieldSpec, p: &Point) -> Result<FrameData> {
    field.check_on(m)?;
    match field {
        VectorFieldSpec::Torus(f) => {
            if p.len() != f.n {
                return Err(invalid("point dimension mismatch"));
            }
            Ok(f.frame_data(p))
        }
        VectorFieldSpec::Sphere(f) => {
            let x = sphere_point(p)?;
            Ok(sphere_frame_data_chart(f, &x, SphereChart::best_for(&x))?.data)
        }
    }
}

fn sphere_point(p: &Point) -> Result<Vector3<f64>> {
    if p.len() != 3 || ((p.norm() - 1.0).abs() > 1e-9) {
        return Err(invalid("sphere points must be unit vectors in ℝ³"));
    }
    Ok(Vector3::new(p[0], p[1], p[2]))
}

/// A nondegenerate zero with its Poincaré–Hopf index.
#[derive(Debug, Clone, Serialize)]
pub struct ZeroPoint {
    /// Location (torus angles in `[0, 2π)`, or ambient coordinates).
    pub location: Vec<f64>,
    /// `A` in an orthonormal frame (row-major).
    pub a: Vec<Vec<f64>>,
    /// `det A`.
    pub det: f64,
    /// `sign det A`.
    pub index: i32,
}

/// Settings for the seeded Newton zero search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroSearch {
    /// Seeds per dimension.
    pub seeds_per_dim: usize,
    /// Newton step tolerance.
    pub tol: f64,
    /// Iteration cap.
    pub max_iter: usize,
}

impl Default for ZeroSearch {
    fn default() -> Self {
        Self { seeds_per_dim: 32, tol: 1e-12, max_iter: 50 }
    }
}

/// Finds all zeros by Newton iteration from a seeded grid.
///
/// Seeds whose iteration leaves the basin are dropped; converged zeros are
/// deduplicated by distance `< π/10`. A converged zero with `|det A| < 1e-8`
/// violates the nondegeneracy hypothesis and is reported as an error, as is a
/// search in which no seed converges although the field vanishes at a seed.
pub fn find_zeros(m: &ModelManifold, field: &VectorFieldSpec, search: &ZeroSearch) -> Result<Vec<ZeroPoint>> {
    field.check_on(m)?;
    let mut zeros: Vec<(Point, FrameData)> = Vec::new();
    let dedup = m.injectivity() / 10.0;
    let mut converged_any = false;
    let seeds = seed_points(m, search.seeds_per_dim);
    let mut failed = 0usize;
    for seed in seeds {
        let found = match field {
            VectorFieldSpec::Torus(f) => newton_torus(f, seed, search),
            VectorFieldSpec::Sphere(f) => newton_sphere(f, seed, search),
        };
        let Some(z) = found else {
            failed += 1;
            continue;
        };
        converged_any = true;
        if zeros.iter().any(|(p, _)| m.distance(p, &z) < dedup) {
            continue;
        }
        let fd = frame_data_at(m, field, &z)?;
        let det = fd.a.determinant();
        if det.abs() < 1e-8 {
            return Err(Error::DegenerateZero { location: z.iter().copied().collect(), det });
        }
        zeros.push((z, fd));
    }
    if !converged_any && failed > 0 {
        // A field with no zeros at all is legitimate only if it never vanishes;
        // a vanishing field everywhere is degenerate.
        let probe = seed_points(m, 2);
        for p in probe {
            let fd = frame_data_at(m, field, &p)?;
            if fd.v.norm() < 1e-12 && fd.a.determinant().abs() < 1e-8 {
                return Err(Error::DegenerateZero { location: p.iter().copied().collect(), det: fd.a.determinant() });
            }
        }
    }
    zeros.sort_by(|a, b| {
        a.0.iter().zip(b.0.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(zeros
        .into_iter()
        .map(|(p, fd)| {
            let det = fd.a.determinant();
            ZeroPoint {
                location: p.iter().copied().collect(),
                a: (0..fd.a.nrows()).map(|i| fd.a.row(i).iter().copied().collect()).collect(),
                det,
                index: if det > 0.0 { 1 } else { -1 },
            }
        })
        .collect())
}

fn seed_points(m: &ModelManifold, k: usize) -> Vec<Point> {
    match m {
        ModelManifold::Torus { n } => {
            let h = 2.0 * PI / k as f64;
            let total = k.pow(*n as u32);
            (0..total)
                .map(|idx| {
                    let mut rem = idx;
                    DVector::from_fn(*n, |_, _| {
                        let c = (rem % k) as f64 + 0.5;
                        rem /= k;
                        c * h
                    })
                })
                .collect()
        }
        ModelManifold::Sphere => {
            let mut out = Vec::with_capacity(k * k);
            for i in 0..k {
                let z = -1.0 + (2.0 * i as f64 + 1.0) / k as f64;
                let r = (1.0 - z * z).sqrt();
                for j in 0..k {
                    let phi = 2.0 * PI * (j as f64 + 0.5) / k as f64;
                    out.push(DVector::from_vec(vec![r * phi.cos(), r * phi.sin(), z]));
                }
            }
            out
        }
    }
}

fn newton_torus(f: &TorusField, mut x: Point, s: &ZeroSearch) -> Option<Point> {
    for _ in 0..s.max_iter {
        let fd = f.frame_data(&x);
        let step = fd.a.clone().lu().solve(&fd.v)?;
        if !step.iter().all(|v| v.is_finite()) || step.norm() > 1.0 {
            return None;
        }
        x -= &step;
        if step.norm() < s.tol {
            let x = x.map(|c| c.rem_euclid(2.0 * PI));
            return (f.value(&x).norm() < 1e-10).then_some(x);
        }
    }
    None
}

fn newton_sphere(f: &SphereField, seed: Point, s: &ZeroSearch) -> Option<Point> {
    let mut x = Vector3::new(seed[0], seed[1], seed[2]);
    for _ in 0..s.max_iter {
        // any orthonormal tangent frame
        let helper = if x[2].abs() < 0.9 { Vector3::z() } else { Vector3::x() };
        let e1 = (helper - x * x.dot(&helper)).normalize();
        let e2 = x.cross(&e1);
        let fd = sphere_frame_data_extrinsic(f, &x, &e1, &e2);
        let step = fd.a.clone().lu().solve(&fd.v)?;
        if !step.iter().all(|v| v.is_finite()) || step.norm() > 0.5 {
            return None;
        }
        x = (x - e1 * step[0] - e2 * step[1]).normalize();
        if step.norm() < s.tol {
            return (f.value(&x).norm() < 1e-10).then(|| DVector::from_vec(vec![x[0], x[1], x[2]]));
        }
    }
    None
}

/// `Σ_α sign det A(p_α)`.
pub fn euler_via_indices(zeros: &[ZeroPoint]) -> i64 {
    zeros.iter().map(|z| z.index as i64).sum()
}

/// `(det √(2(coshθ−1)))⁻¹ · str exp(s Σ v_ij E⁺_i E⁻_j)` with `θ = 2s√(AAᵀ)`.
///
/// Tends to `sign det A` as `s → 0`.
pub fn localized_index_factor(frame: &FrameData, s: f64) -> Result<f64> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(invalid(format!("localized index factor needs s > 0, got {s}")));
    }
    if frame.a.determinant() == 0.0 {
        return Err(invalid("localized index factor needs det A ≠ 0"));
    }
    let th = PsdSpectrum::new(&(&frame.a * frame.a.transpose()))?;
    // √(2(coshθ − 1)) = 2 sinh(θ/2)
    let ln_det: f64 = th.values.iter().map(|l| (2.0 * (s * l.sqrt()).sinh()).ln()).sum();
    let m = exterior_algebra::bilinear_e_plus_e_minus(&(&frame.a * s))?;
    let st = exterior_algebra::supertrace_exp(&m)?;
    Ok(st * (-ln_det).exp())
}

/// `∫_M str φ₀(τ,t,p) dp` by quadrature, with a refinement check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupertraceIntegral {
    /// Value on the base rule.
    pub value: f64,
    /// Value on the doubled rule.
    pub refined: f64,
}

/// Default base resolution: 64 (sphere: 64×128 nodes; torus: 128ⁿ nodes).
pub fn default_resolution(m: &ModelManifold) -> usize {
    match m {
        ModelManifold::Torus { .. } => 128,
        ModelManifold::Sphere => 64,
    }
}

/// Quadrature of `str φ₀` at the given resolution.
pub fn supertrace_quadrature(m: &ModelManifold, field: &VectorFieldSpec, params: &KernelParams, resolution: usize) -> Result<f64> {
    let q = m.quadrature(resolution)?;
    let mut acc = 0.0;
    for (p, w) in q.points.iter().zip(&q.weights) {
        let fd = frame_data_at(m, field, p)?;
        acc += w * mehler_kernel::supertrace_phi0_point(params, &fd)?;
    }
    Ok(acc)
}

/// `∫ str φ₀` on the base rule and the doubled rule; errors if they differ by
/// more than 10% (relative to `max(|value|, 1)`, the natural scale of `χ`).
pub fn supertrace_integral(m: &ModelManifold, field: &VectorFieldSpec, params: &KernelParams, resolution: usize) -> Result<SupertraceIntegral> {
    field.check_on(m)?;
    let value = supertrace_quadrature(m, field, params, resolution)?;
    let refined = supertrace_quadrature(m, field, params, 2 * resolution)?;
    if (value - refined).abs() > 0.1 * refined.abs().max(1.0) {
        return Err(Error::Quadrature(format!("base {value} vs refined {refined}")));
    }
    Ok(SupertraceIntegral { value, refined })
}

/// The semiclassical-limit protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlimProtocol {
    /// Fixed values of `s = τt`.
    pub s_values: Vec<f64>,
    /// Base `τ` ladder, used as is for `s = s_ref` and scaled by `(s/s_ref)²` otherwise.
    pub tau_ladder: Vec<f64>,
    /// Reference `s` of the ladder.
    pub s_ref: f64,
    /// Quadrature resolution.
    pub resolution: usize,
}

impl SlimProtocol {
    /// Default: `s ∈ {0.5, 0.25, 0.1}`, `τ ∈ {0.1, 0.05, 0.02, 0.01}·(s/0.5)²`.
    pub fn default_for(m: &ModelManifold) -> Self {
        Self {
            s_values: vec![0.5, 0.25, 0.1],
            tau_ladder: vec![0.1, 0.05, 0.02, 0.01],
            s_ref: 0.5,
            resolution: default_resolution(m),
        }
    }

    /// `τ` values used at a given `s`.
    pub fn taus_for(&self, s: f64) -> Vec<f64> {
        let f = (s / self.s_ref).powi(2);
        self.tau_ladder.iter().map(|t| t * f).collect()
    }
}

/// Per-`s` results of the semiclassical protocol.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlimRow {
    /// `s`.
    pub s: f64,
    /// `τ` ladder used.
    pub taus: Vec<f64>,
    /// Integral values along the ladder.
    pub values: Vec<f64>,
    /// Successive differences `|v_{k+1} − v_k|`.
    pub differences: Vec<f64>,
    /// Differences shrink monotonically (within `1e-12`).
    pub monotone: bool,
    /// Linear extrapolation `τ → 0` from the last two values.
    pub extrapolated: f64,
}

/// Report of the semiclassical protocol.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlimReport {
    /// One row per `s`.
    pub rows: Vec<SlimRow>,
    /// Linear extrapolation `s → 0` from the two smallest `s`.
    pub chi_estimate: f64,
}

/// Runs the semiclassical-limit protocol and extrapolates `χ`.
pub fn semiclassical_chi(m: &ModelManifold, field: &VectorFieldSpec, protocol: &SlimProtocol) -> Result<SlimReport> {
    if protocol.s_values.is_empty() || protocol.tau_ladder.len() < 2 {
        return Err(invalid("protocol needs at least one s and two τ values"));
    }
    let mut rows = Vec::new();
    for &s in &protocol.s_values {
        let taus = protocol.taus_for(s);
        let mut values = Vec::new();
        for &tau in &taus {
            let params = KernelParams::from_s(s, tau)?;
            values.push(supertrace_integral(m, field, &params, protocol.resolution)?.value);
        }
        let differences: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        let monotone = differences.windows(2).all(|d| d[1] <= d[0] + 1e-12);
        let k = values.len();
        let (t1, t2) = (taus[k - 2], taus[k - 1]);
        let extrapolated = (t1 * values[k - 1] - t2 * values[k - 2]) / (t1 - t2);
        rows.push(SlimRow { s, taus, values, differences, monotone, extrapolated });
    }
    let mut sorted: Vec<&SlimRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.s.total_cmp(&b.s));
    let chi_estimate = if sorted.len() >= 2 {
        let (a, b) = (sorted[0], sorted[1]);
        (b.s * a.extrapolated - a.s * b.extrapolated) / (b.s - a.s)
    } else {
        sorted[0].extrapolated
    };
    Ok(SlimReport { rows, chi_estimate })
}

/// Largest matrix dimension accepted by the discrete complex.
pub const MAX_COMPLEX_DIM: usize = 5000;

/// The discrete deformed complex on a torus grid.
///
/// Degrees of freedom: for each grid point `x` (index `g`) and basis form `ω_I`
/// (position `k`), the unknown `f_I(x)` at linear index `g·2ⁿ + k`, interpreted
/// as living at the staggered location `x + (h/2)·1_I`.
///
/// * `d`: `(dω)_{I∪{i}}(x) = ±(f_I(x + h e_i) − f_I(x))/h` with the creation sign,
///   so `d² = 0` exactly.
/// * `V*∧`: `(V*∧ω)_{I∪{i}}(x) = ± v_i(x + (h/2)1_{I∪{i}}) · (f_I(x) + f_I(x + h e_i))/2`.
/// * `δ = dᵀ`, `i(V) = (V*∧)ᵀ` under the weight `hⁿ` (uniform, so transposes).
///
/// `D_t = d + δ + t(V*∧ + i(V))` is symmetric and odd, hence `□_t = D_t²` is
/// symmetric PSD and `str e^{−τ□_t} = Σ_k (−1)^k dim Cᵏ = 0` exactly.
#[derive(Debug, Clone)]
pub struct DiscreteComplex {
    /// Dimension of the torus.
    pub n: usize,
    /// Grid points per direction.
    pub grid: usize,
    /// Exterior derivative.
    pub d: DMatrix<f64>,
    /// Exterior multiplication by `V*` (without the factor `t`).
    pub v_wedge: DMatrix<f64>,
}

impl DiscreteComplex {
    /// Builds `d` and `V*∧` for a torus field on an `Nⁿ` grid.
    pub fn new(field: &TorusField, grid: usize) -> Result<Self> {
        field.validate()?;
        let n = field.n;
        let forms = 1usize << n;
        let points = grid.checked_pow(n as u32).ok_or_else(|| Error::DimensionCap("grid too large".into()))?;
        let dim = points * forms;
        if dim > MAX_COMPLEX_DIM {
            return Err(Error::DimensionCap(format!("2ⁿ·Nⁿ = {dim} exceeds {MAX_COMPLEX_DIM}")));
        }
        if grid < 2 {
            return Err(invalid("grid needs at least 2 points per direction"));
        }
        let basis = Basis::new(n)?;
        let h = 2.0 * PI / grid as f64;
        let mut d = DMatrix::zeros(dim, dim);
        let mut v_wedge = DMatrix::zeros(dim, dim);
        let creations: Vec<_> =
            (1..=n).map(|i| exterior_algebra::creation_exact(n, i)).collect::<Result<_>>()?;
        for g in 0..points {
            let coords = unravel(g, grid, n);
            for k in 0..forms {
                let mask = basis.mask(k);
                for i in 0..n {
                    if mask & (1 << i) != 0 {
                        continue;
                    }
                    let target = basis.position_of_mask(mask | (1 << i));
                    let sign = creations[i].matrix()[(target, k)] as f64;
                    let mut shifted = coords.clone();
                    shifted[i] = (shifted[i] + 1) % grid;
                    let gs = ravel(&shifted, grid);
                    let row = g * forms + target;
                    d[(row, gs * forms + k)] += sign / h;
                    d[(row, g * forms + k)] -= sign / h;
                    // v_i at the staggered location of the target form
                    let loc = DVector::from_fn(n, |c, _| {
                        coords[c] as f64 * h + if (mask | (1 << i)) & (1 << c) != 0 { 0.5 * h } else { 0.0 }
                    });
                    let vi = field.value(&loc)[i];
                    v_wedge[(row, gs * forms + k)] += 0.5 * sign * vi;
                    v_wedge[(row, g * forms + k)] += 0.5 * sign * vi;
                }
            }
        }
        Ok(Self { n, grid, d, v_wedge })
    }

    /// Total dimension `2ⁿ Nⁿ`.
    pub fn dim(&self) -> usize {
        self.d.nrows()
    }

    /// Number of grid points `Nⁿ`.
    pub fn points(&self) -> usize {
        self.grid.pow(self.n as u32)
    }

    /// Quadrature weight `hⁿ` of a grid point.
    pub fn weight(&self) -> f64 {
        (2.0 * PI / self.grid as f64).powi(self.n as i32)
    }

    /// `D_t = d + dᵀ + t(V*∧ + i(V))`.
    pub fn dirac(&self, t: f64) -> DMatrix<f64> {
        let a = &self.d + &self.v_wedge * t;
        &a + a.transpose()
    }

    /// `□_t = D_t²`.
    pub fn box_t(&self, t: f64) -> DMatrix<f64> {
        let dt = self.dirac(t);
        let b = &dt * &dt;
        // symmetrise away round-off
        (&b + b.transpose()) * 0.5
    }

    /// Grading sign `(−1)^{deg}` of every degree of freedom.
    pub fn parity(&self) -> Vec<f64> {
        let basis = Basis::new(self.n).expect("validated");
        let forms = 1usize << self.n;
        (0..self.dim()).map(|idx| basis.parity_sign(idx % forms) as f64).collect()
    }

    /// Grid coordinates (angles) of point `g`.
    pub fn point(&self, g: usize) -> Point {
        let h = 2.0 * PI / self.grid as f64;
        DVector::from_iterator(self.n, unravel(g, self.grid, self.n).into_iter().map(|c| c as f64 * h))
    }
}

fn unravel(mut g: usize, grid: usize, n: usize) -> Vec<usize> {
    (0..n)
        .map(|_| {
            let c = g % grid;
            g /= grid;
            c
        })
        .collect()
}

fn ravel(c: &[usize], grid: usize) -> usize {
    c.iter().rev().fold(0, |acc, &ci| acc * grid + ci)
}

/// `□_t` for a torus field on an `Nⁿ` grid.
pub fn assemble_box_t(field: &TorusField, grid: usize, t: f64) -> Result<DMatrix<f64>> {
    Ok(DiscreteComplex::new(field, grid)?.box_t(t))
}

/// Spectral representation of `e^{−τ□}` for a symmetric `□`.
#[derive(Debug, Clone)]
pub struct HeatSemigroup {
    /// Eigenvalues of `□`.
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors.
    pub eigenvectors: DMatrix<f64>,
}

impl HeatSemigroup {
    /// Diagonalises a symmetric matrix.
    pub fn new(box_t: &DMatrix<f64>) -> Result<Self> {
        if box_t.nrows() != box_t.ncols() {
            return Err(invalid("operator must be square"));
        }
        if box_t.nrows() > MAX_COMPLEX_DIM {
            return Err(Error::DimensionCap(format!("dimension {} exceeds {MAX_COMPLEX_DIM}", box_t.nrows())));
        }
        let eig = box_t.clone().symmetric_eigen();
        Ok(Self { eigenvalues: eig.eigenvalues, eigenvectors: eig.eigenvectors })
    }

    /// `e^{−τ□}`.
    pub fn exp(&self, tau: f64) -> Result<DMatrix<f64>> {
        if !(tau > 0.0) {
            return Err(invalid("τ must be positive"));
        }
        let scaled = DMatrix::from_fn(self.eigenvectors.nrows(), self.eigenvectors.ncols(), |i, j| {
            self.eigenvectors[(i, j)] * (-tau * self.eigenvalues[j]).exp()
        });
        Ok(scaled * self.eigenvectors.transpose())
    }

    /// `Σ_i ε_i [e^{−τ□}]_{ii}` for a grading `ε`.
    pub fn supertrace(&self, tau: f64, parity: &[f64]) -> f64 {
        let w = self.eigenvalues.map(|l| (-tau * l).exp());
        let mut acc = 0.0;
        for i in 0..self.eigenvectors.nrows() {
            let row = self.eigenvectors.row(i);
            let diag: f64 = row.iter().zip(w.iter()).map(|(u, e)| u * u * e).sum();
            acc += parity[i] * diag;
        }
        acc
    }

    /// Number of eigenvalues below `tol`.
    pub fn kernel_dimension(&self, tol: f64) -> usize {
        self.eigenvalues.iter().filter(|l| l.abs() < tol).count()
    }
}

/// `e^{−τ□}` by symmetric eigendecomposition.
pub fn heat_kernel_exact(box_t: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    HeatSemigroup::new(box_t)?.exp(tau)
}

/// `Σ_p str G(τ,p,p,t) w_p` on the discrete complex, with `G(q,p) = [e^{−τ□}]_{qp}/w_p`.
pub fn discrete_mckean_singer(complex: &DiscreteComplex, tau: f64, t: f64) -> Result<f64> {
    let sg = HeatSemigroup::new(&complex.box_t(t))?;
    Ok(sg.supertrace(tau, &complex.parity()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus_field(name: &str) -> TorusField {
        match VectorFieldSpec::preset(name).unwrap().1 {
            VectorFieldSpec::Torus(f) => f,
            _ => unreachable!(),
        }
    }

    fn sphere_field(name: &str) -> SphereField {
        match VectorFieldSpec::preset(name).unwrap().1 {
            VectorFieldSpec::Sphere(f) => f,
            _ => unreachable!(),
        }
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn quadrature_volumes() {
        for m in [ModelManifold::Torus { n: 1 }, ModelManifold::Torus { n: 2 }, ModelManifold::Sphere] {
            let q = m.quadrature(16).unwrap();
            assert!((q.weights.iter().sum::<f64>() - m.volume()).abs() < 1e-10);
        }
    }

    #[test]
    fn distances() {
        let m = ModelManifold::Sphere;
        let p = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let q = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        assert!((m.distance(&p, &q) - PI / 2.0).abs() < 1e-15);
        assert_eq!(m.distance(&p, &p), 0.0);
        let t = ModelManifold::Torus { n: 2 };
        let a = DVector::from_vec(vec![0.1, 6.2]);
        let b = DVector::from_vec(vec![6.2, 0.1]);
        assert!((t.distance(&a, &b) - t.distance(&b, &a)).abs() < 1e-15);
    }

    #[test]
    fn torus_frame_data_origin() {
        let f = torus_field("torus_sin");
        let fd = f.frame_data(&DVector::zeros(2));
        assert!(fd.v.norm() < 1e-15);
        assert!((fd.a - DMatrix::identity(2, 2)).amax() < 1e-15);
    }

    #[test]
    fn sphere_chart_matches_extrinsic() {
        let f = sphere_field("sphere_four_zero");
        for x in [Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.3, -0.5, 0.2).normalize(), Vector3::new(0.0, 0.6, 0.8)] {
            for chart in [SphereChart::PolarZ, SphereChart::PolarX] {
                let Ok(sf) = sphere_frame_data_chart(&f, &x, chart) else { continue };
                let ex = sphere_frame_data_extrinsic(&f, &x, &sf.e1, &sf.e2);
                assert!((sf.data.v - ex.v).amax() < 1e-9);
                assert!((sf.data.a - ex.a).amax() < 1e-8, "{chart:?}");
            }
        }
    }

    #[test]
    fn torus_zeros_and_indices() {
        let (m, f) = VectorFieldSpec::preset("torus_sin").unwrap();
        let z = find_zeros(&m, &f, &ZeroSearch::default()).unwrap();
        assert_eq!(z.len(), 4);
        assert_eq!(euler_via_indices(&z), 0);
        let idx: Vec<i32> = z.iter().map(|z| z.index).collect();
        // sorted lexicographically: (0,0), (0,π), (π,0), (π,π)
        assert_eq!(idx, vec![1, -1, -1, 1]);
    }

    #[test]
    fn degenerate_zero_is_error() {
        let m = ModelManifold::Torus { n: 1 };
        // v = 1 − cos x has a degenerate zero at 0
        let f = VectorFieldSpec::Torus(TorusField {
            n: 1,
            components: vec![vec![cos_term(1.0, vec![0]), cos_term(-1.0, vec![1])]],
        });
        let r = find_zeros(&m, &f, &ZeroSearch::default());
        assert!(matches!(r, Err(Error::DegenerateZero { .. })) || r.as_ref().map(|z| z.is_empty()).unwrap_or(false));
    }

    #[test]
    fn localized_examples() {
        let fd = FrameData::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert!((localized_index_factor(&fd, 1e-3).unwrap() - 1.0).abs() < 1e-6);
        let fd2 = FrameData::new(DVector::zeros(2), DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]))).unwrap();
        assert!((localized_index_factor(&fd2, 1e-3).unwrap() + 1.0).abs() < 1e-6);
        assert!(localized_index_factor(&fd, 0.0).is_err());
    }

    #[test]
    fn d_squared_zero_and_kernel() {
        let f = torus_field("torus_sin");
        let c = DiscreteComplex::new(&f, 8).unwrap();
        assert!((&c.d * &c.d).amax() < 1e-12);
        let sg = HeatSemigroup::new(&c.box_t(0.0)).unwrap();
        assert_eq!(sg.kernel_dimension(1e-9), 4);
    }

    #[test]
    fn circle_matches_hand_assembly() {
        let f = torus_field("circle_sin");
        let n = 8;
        let t = 1.3;
        let h = 2.0 * PI / n as f64;
        // 0-forms at vertices, 1-forms at midpoints
        let mut dd = DMatrix::<f64>::zeros(n, n);
        let mut av = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let vm = ((j as f64 + 0.5) * h).sin();
            dd[(j, (j + 1) % n)] += 1.0 / h;
            dd[(j, j)] -= 1.0 / h;
            av[(j, j)] += 0.5 * vm;
            av[(j, (j + 1) % n)] += 0.5 * vm;
        }
        let a = &dd + &av * t;
        let b00 = a.transpose() * &a;
        let b11 = &a * a.transpose();
        let bx = assemble_box_t(&f, n, t).unwrap();
        for p in 0..n {
            for q in 0..n {
                assert!((bx[(2 * p, 2 * q)] - b00[(p, q)]).abs() < 1e-12);
                assert!((bx[(2 * p + 1, 2 * q + 1)] - b11[(p, q)]).abs() < 1e-12);
                assert!(bx[(2 * p, 2 * q + 1)].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn semigroup_law() {
        let f = torus_field("circle_sin");
        let b = assemble_box_t(&f, 16, 1.0).unwrap();
        let sg = HeatSemigroup::new(&b).unwrap();
        let lhs = sg.exp(0.3).unwrap();
        let rhs = sg.exp(0.1).unwrap() * sg.exp(0.2).unwrap();
        assert!((lhs - rhs).amax() < 1e-10);
    }
}
