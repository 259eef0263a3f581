//! Levi iteration for the fundamental solution on flat tori.
//!
//! Starting from the cut-off parametrix
//! `H(τ,q,p,t) = Φ(τ, Y, t v(p), t A(p)ᵀ) · exp(τtM(p)) · φ(|Y|)` with `Y = q − p`
//! (componentwise in `(−π, π]`), the defect `K₀ = (∂_τ + □_t)H` is computed in
//! closed form and the Volterra series
//!
//! ```text
//! K_{m+1}(τ) = ∫₀^τ dν ∫ K₀(τ−ν, q, z) K_m(ν, z, p) dz,   K = Σ_{m≥0} (−1)^{m+1} K_m,
//! G = H + ∫₀^τ dν ∫ H(τ−ν, q, z) K(ν, z, p) dz
//! ```
//!
//! is evaluated on a uniform time grid `ν_k = kτ/P` and a uniform spatial grid.
//!
//! Discretisation:
//! * time: product integration. On each subinterval the smooth factor
//!   `K_m(ν_i − σ)` is replaced by its cubic Lagrange interpolant through
//!   neighbouring grid times; the singular factor `K₀(σ)` (or `H(σ)`) is
//!   integrated against the Lagrange basis by Gauss–Legendre panels, graded
//!   geometrically towards `σ = 0` on the first subinterval.
//! * space: for each `(σ, q)` the kernel row is sampled on a sub-grid aligned
//!   with `q` that resolves the Gaussian width `√σ`, and transferred to the
//!   coarse nodes by periodic trigonometric interpolation of the right factor.
//!
//! Translation-invariant problems (`V ≡ 0`) use circulant storage, which makes
//! fine coarse grids affordable.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exterior_algebra::{Basis, ExteriorOperator};
use crate::mehler_kernel::{
    self, CutoffSpec, EnvelopeSample, FrameData, GaussianBoundFit, KernelParams, ParametrixSource,
};
use crate::quadrature::gauss_legendre_on;
use crate::witten_laplacian::{wrap_angle, DiscreteComplex, HeatSemigroup, TorusField};

/// A fine-grid node: its index together with sparse cardinal weights onto the coarse grid.
type FineNode = (usize, Vec<(usize, f64)>);

/// Storage of spatial kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StorageMode {
    /// Circulant when the field vanishes identically, dense otherwise.
    #[default]
    Auto,
    /// Dense block matrices.
    Dense,
    /// Circulant block sequences (requires `V ≡ 0`).
    Circulant,
}

/// Discretisation and iteration settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeviConfig {
    /// Grid points per direction.
    pub grid: usize,
    /// Deformation strength `t`.
    pub t: f64,
    /// Final heat time `τ`.
    pub tau: f64,
    /// Number of time steps `P`.
    pub steps: usize,
    /// Largest number of Levi terms `M`.
    pub max_terms: usize,
    /// Stop once `‖K_M‖ < tail_tolerance · ‖K₀‖`.
    pub tail_tolerance: f64,
    /// Terms always computed for the decay fit (`m < fit_terms`), even past truncation.
    pub fit_terms: usize,
    /// Cut-off of the parametrix.
    pub cutoff: CutoffSpec,
    /// Gauss–Legendre order per time panel.
    pub gauss_order: usize,
    /// Levels of geometric grading towards `σ = 0`.
    pub grading_levels: usize,
    /// Sub-grid density: refinement `r = ⌈resolution·h/√σ⌉`.
    pub resolution: f64,
    /// Upper bound on the refinement `r`.
    pub max_refinement: usize,
    /// Spatial window `min(r₂, window·√σ)` of each kernel row.
    pub window: f64,
    /// Spatial storage.
    #[serde(default)]
    pub storage: StorageMode,
}

impl LeviConfig {
    /// Settings for the circle testbed (`N = 64`, `τ = 0.25`, `P = 32`).
    pub fn circle_default(t: f64) -> Self {
        Self {
            grid: 64,
            t,
            tau: 0.25,
            steps: 32,
            max_terms: 10,
            tail_tolerance: 1e-8,
            fit_terms: 6,
            cutoff: CutoffSpec::default_for(PI),
            gauss_order: 8,
            grading_levels: 14,
            resolution: 4.0,
            max_refinement: 1 << 20,
            window: 12.0,
            storage: StorageMode::Auto,
        }
    }

    /// Smoke-test settings on `T²` (`N = 16`).
    pub fn torus_smoke(t: f64) -> Self {
        Self {
            grid: 16,
            t,
            tau: 0.1,
            steps: 3,
            max_terms: 3,
            tail_tolerance: 1e-8,
            fit_terms: 3,
            cutoff: CutoffSpec::default_for(PI),
            gauss_order: 4,
            grading_levels: 6,
            resolution: 4.0,
            max_refinement: 2,
            window: 12.0,
            storage: StorageMode::Auto,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !(n == 1 || n == 2) {
            return Err(invalid("Levi iteration is implemented for n ∈ {1, 2}"));
        }
        if self.grid < 4 {
            return Err(invalid("grid needs at least 4 points"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite() && self.t.is_finite() && self.t >= 0.0) {
            return Err(invalid("need τ > 0 and finite t ≥ 0"));
        }
        if self.steps == 0 || self.max_terms == 0 || self.gauss_order == 0 || self.max_refinement == 0 {
            return Err(invalid("steps, max_terms, gauss_order and max_refinement must be positive"));
        }
        if !(self.resolution > 0.0 && self.window > 0.0 && self.tail_tolerance > 0.0) {
            return Err(invalid("resolution, window and tail_tolerance must be positive"));
        }
        CutoffSpec::new(self.cutoff.r1, self.cutoff.r2, self.cutoff.injectivity, self.cutoff.profile)?;
        if self.cutoff.injectivity > PI {
            return Err(invalid("cut-off chart radius exceeds the torus injectivity radius π"));
        }
        let dim = self.grid.pow(n as u32) << n;
        if dim > crate::witten_laplacian::MAX_COMPLEX_DIM {
            return Err(Error::DimensionCap(format!("kernel dimension {dim} too large")));
        }
        Ok(())
    }
}

/// Which kernel a row or block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// The parametrix `H`.
    Parametrix,
    /// The defect `K₀ = (∂_τ + □_t)H`.
    Defect,
}

/// A spatial kernel on the grid: dense blocks or a circulant block sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum GridOperator {
    /// Dense `(Nⁿ2ⁿ)²` matrix in the layout `point·2ⁿ + form`.
    Dense(DMatrix<f64>),
    /// Translation-invariant kernel: `column` holds the blocks `K(g, 0)`
    /// stacked vertically (`Nⁿ2ⁿ × 2ⁿ`).
    Circulant {
        /// Dimension.
        n: usize,
        /// Points per direction.
        grid: usize,
        /// First block column.
        column: DMatrix<f64>,
    },
}

impl GridOperator {
    fn forms(&self) -> usize {
        match self {
            Self::Dense(_) => unreachable!("forms of dense operators come from the context"),
            Self::Circulant { n, .. } => 1 << n,
        }
    }

    /// Zero operator with the same storage.
    pub fn zeros_like(&self) -> Self {
        match self {
            Self::Dense(m) => Self::Dense(DMatrix::zeros(m.nrows(), m.ncols())),
            Self::Circulant { n, grid, column } => {
                Self::Circulant { n: *n, grid: *grid, column: DMatrix::zeros(column.nrows(), column.ncols()) }
            }
        }
    }

    /// `self += c · other`.
    pub fn axpy(&mut self, c: f64, other: &Self) {
        match (self, other) {
            (Self::Dense(a), Self::Dense(b)) => *a += b * c,
            (Self::Circulant { column: a, .. }, Self::Circulant { column: b, .. }) => *a += b * c,
            _ => panic!("mixed kernel storage"),
        }
    }

    /// Composition `(self ∘ other)(q,p) = Σ_z self(q,z) other(z,p)` (weights are
    /// already part of the left factor).
    pub fn compose(&self, other: &Self) -> Self {
        match (self, other) {
            (Self::Dense(a), Self::Dense(b)) => Self::Dense(a * b),
            (Self::Circulant { n, grid, column: a }, Self::Circulant { column: b, .. }) => {
                let f = 1usize << n;
                let pts = grid.pow(*n as u32);
                let mut out = DMatrix::zeros(pts * f, f);
                for d in 0..pts {
                    let ad = a.rows(d * f, f);
                    for e in 0..pts {
                        // (q − p) = d + e  ⇒ term a[d] b[e] lands at d + e
                        let target = add_index(d, e, *grid, *n);
                        let be = b.rows(e * f, f);
                        let mut blk = out.rows_mut(target * f, f);
                        blk.gemm(1.0, &ad, &be, 1.0);
                    }
                }
                Self::Circulant { n: *n, grid: *grid, column: out }
            }
            _ => panic!("mixed kernel storage"),
        }
    }

    /// Largest entry in absolute value.
    pub fn max_abs(&self) -> f64 {
        match self {
            Self::Dense(m) => m.amax(),
            Self::Circulant { column, .. } => column.amax(),
        }
    }

    /// Block `(q, p)` as a `2ⁿ × 2ⁿ` matrix.
    pub fn block(&self, q: usize, p: usize, forms: usize) -> DMatrix<f64> {
        match self {
            Self::Dense(m) => m.view((q * forms, p * forms), (forms, forms)).into_owned(),
            Self::Circulant { n, grid, column } => {
                let f = self.forms();
                let d = sub_index(q, p, *grid, *n);
                column.rows(d * f, f).into_owned()
            }
        }
    }

    /// Dense form of the operator.
    pub fn to_dense(&self, forms: usize) -> DMatrix<f64> {
        match self {
            Self::Dense(m) => m.clone(),
            Self::Circulant { n, grid, .. } => {
                let pts = grid.pow(*n as u32);
                let mut out = DMatrix::zeros(pts * forms, pts * forms);
                for q in 0..pts {
                    for p in 0..pts {
                        out.view_mut((q * forms, p * forms), (forms, forms)).copy_from(&self.block(q, p, forms));
                    }
                }
                out
            }
        }
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

fn add_index(a: usize, b: usize, grid: usize, n: usize) -> usize {
    let (ca, cb) = (unravel(a, grid, n), unravel(b, grid, n));
    let c: Vec<usize> = ca.iter().zip(&cb).map(|(x, y)| (x + y) % grid).collect();
    ravel(&c, grid)
}

fn sub_index(a: usize, b: usize, grid: usize, n: usize) -> usize {
    let (ca, cb) = (unravel(a, grid, n), unravel(b, grid, n));
    let c: Vec<usize> = ca.iter().zip(&cb).map(|(x, y)| (x + grid - y) % grid).collect();
    ravel(&c, grid)
}

/// Periodic trigonometric cardinal function of an `N`-point grid on `[0, 2π)`.
pub fn periodic_cardinal(x: f64, grid: usize) -> f64 {
    let x = wrap_angle(x);
    if x.abs() < 1e-14 {
        return 1.0;
    }
    let nf = grid as f64;
    if grid.is_multiple_of(2) {
        (nf * x / 2.0).sin() / (nf * (x / 2.0).tan())
    } else {
        (nf * x / 2.0).sin() / (nf * (x / 2.0).sin())
    }
}

/// A kernel on the time grid `ν_k = kτ/P`, `k = 1..=P` (the value at `ν = 0` is zero).
#[derive(Debug, Clone)]
pub struct KernelGrid {
    /// Times `ν_1 < … < ν_P`.
    pub times: Vec<f64>,
    /// Spatial kernels at those times.
    pub slices: Vec<GridOperator>,
}

impl KernelGrid {
    /// `sup` of all stored entries.
    pub fn sup_norm(&self) -> f64 {
        self.slices.iter().map(GridOperator::max_abs).fold(0.0, f64::max)
    }

    /// `self += c · other`.
    pub fn axpy(&mut self, c: f64, other: &KernelGrid) -> Result<()> {
        if self.times != other.times {
            return Err(invalid("kernel grids have different time nodes"));
        }
        for (a, b) in self.slices.iter_mut().zip(&other.slices) {
            a.axpy(c, b);
        }
        Ok(())
    }

    /// Zero kernel with the same layout.
    pub fn zeros_like(&self) -> Self {
        Self { times: self.times.clone(), slices: self.slices.iter().map(GridOperator::zeros_like).collect() }
    }
}

/// The parametrix data on a torus: field, grid, cut-off and coarse frame data.
#[derive(Debug, Clone)]
pub struct LeviContext {
    field: TorusField,
    cfg: LeviConfig,
    n: usize,
    forms: usize,
    h: f64,
    circulant: bool,
    /// `(t²|v(q)|², M(q))` at coarse nodes.
    target: Vec<(f64, DMatrix<f64>)>,
}

impl LeviContext {
    /// Validates the configuration and precomputes coarse-node data.
    pub fn new(field: &TorusField, cfg: &LeviConfig) -> Result<Self> {
        let n = field.n;
        cfg.validate(n)?;
        let circulant = match cfg.storage {
            StorageMode::Auto => field.is_zero(),
            StorageMode::Dense => false,
            StorageMode::Circulant => {
                if !field.is_zero() {
                    return Err(invalid("circulant storage requires V ≡ 0"));
                }
                true
            }
        };
        let h = 2.0 * PI / cfg.grid as f64;
        let pts = cfg.grid.pow(n as u32);
        let mut target = Vec::with_capacity(pts);
        for g in 0..pts {
            let x = node(g, cfg.grid, n, h);
            let fd = field.frame_data(&x);
            let m = mehler_kernel::deformation_operator(&fd)?.into_matrix();
            target.push((cfg.t * cfg.t * fd.v_norm_sq(), m));
        }
        Ok(Self { field: field.clone(), cfg: cfg.clone(), n, forms: 1 << n, h, circulant, target })
    }

    /// Dimension of the torus.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of forms `2ⁿ`.
    pub fn forms(&self) -> usize {
        self.forms
    }

    /// Coarse grid points `Nⁿ`.
    pub fn points(&self) -> usize {
        self.cfg.grid.pow(self.n as u32)
    }

    /// Settings.
    pub fn config(&self) -> &LeviConfig {
        &self.cfg
    }

    /// Whether kernels are stored as circulants.
    pub fn is_circulant(&self) -> bool {
        self.circulant
    }

    /// Coarse node `g`.
    pub fn node(&self, g: usize) -> DVector<f64> {
        node(g, self.cfg.grid, self.n, self.h)
    }

    fn source(&self, sigma: f64, z: &DVector<f64>) -> Result<ParametrixSource> {
        let params = KernelParams::new(sigma, self.cfg.t)?;
        ParametrixSource::new(&params, &self.field.frame_data(z))
    }

    /// Block of `H` or `K₀` at `(σ, q, z)` given the source data at `z`.
    fn block(
        &self,
        kind: KernelKind,
        src: &ParametrixSource,
        target: (f64, &DMatrix<f64>),
        y: &DVector<f64>,
    ) -> DMatrix<f64> {
        let cut = &self.cfg.cutoff;
        if y.norm() >= cut.r2 {
            return DMatrix::zeros(self.forms, self.forms);
        }
        let jet = cut.jet(y);
        let phi = src.phi.phi(y);
        match kind {
            KernelKind::Parametrix => &src.u * (phi * jet.value),
            KernelKind::Defect => {
                let (v2q, mq) = target;
                let grad = src.phi.grad_ln_phi(y);
                let scal = phi * jet.value * (v2q - src.phi.potential(y))
                    - 2.0 * phi * grad.dot(&jet.gradient)
                    - phi * jet.laplacian;
                let dm = (&src.m - mq) * (self.cfg.t * phi * jet.value);
                (DMatrix::identity(self.forms, self.forms) * scal + dm) * &src.u
            }
        }
    }

    /// `H(σ, q, p)` or `K₀(σ, q, p)` at arbitrary points.
    pub fn kernel_at(&self, kind: KernelKind, sigma: f64, q: &DVector<f64>, p: &DVector<f64>) -> Result<ExteriorOperator> {
        if q.len() != self.n || p.len() != self.n {
            return Err(invalid("point dimension mismatch"));
        }
        let y = DVector::from_fn(self.n, |i, _| wrap_angle(q[i] - p[i]));
        if y.norm() >= self.cfg.cutoff.injectivity {
            return Err(Error::Chart("q outside the normal chart at p".into()));
        }
        let src = self.source(sigma, p)?;
        let fq = self.field.frame_data(q);
        let mq = mehler_kernel::deformation_operator(&fq)?.into_matrix();
        let v2q = self.cfg.t * self.cfg.t * fq.v_norm_sq();
        ExteriorOperator::from_matrix(self.n, self.block(kind, &src, (v2q, &mq), &y))
    }

    /// Kernel sampled at coarse nodes (no quadrature weight).
    pub fn grid_kernel(&self, kind: KernelKind, sigma: f64) -> Result<GridOperator> {
        let pts = self.points();
        let f = self.forms;
        let sources: Vec<ParametrixSource> = if self.circulant {
            vec![self.source(sigma, &self.node(0))?]
        } else {
            (0..pts).map(|p| self.source(sigma, &self.node(p))).collect::<Result<_>>()?
        };
        let y_of = |q: usize, p: usize| {
            let (a, b) = (self.node(q), self.node(p));
            DVector::from_fn(self.n, |i, _| wrap_angle(a[i] - b[i]))
        };
        if self.circulant {
            let mut column = DMatrix::zeros(pts * f, f);
            for q in 0..pts {
                let (v2, m) = &self.target[q];
                let blk = self.block(kind, &sources[0], (*v2, m), &y_of(q, 0));
                column.rows_mut(q * f, f).copy_from(&blk);
            }
            return Ok(GridOperator::Circulant { n: self.n, grid: self.cfg.grid, column });
        }
        let mut m = DMatrix::zeros(pts * f, pts * f);
        for q in 0..pts {
            let (v2, mq) = &self.target[q];
            for (p, src) in sources.iter().enumerate() {
                let blk = self.block(kind, src, (*v2, mq), &y_of(q, p));
                m.view_mut((q * f, p * f), (f, f)).copy_from(&blk);
            }
        }
        Ok(GridOperator::Dense(m))
    }

    /// Quadrature row `z ↦ ∫ kernel(σ, q, ζ) I_z(ζ) dζ` over coarse nodes `z`,
    /// where `I_z` is the trigonometric cardinal function of node `z`.
    ///
    /// Returns a `2ⁿ × Nⁿ2ⁿ` block row.
    fn row(
        &self,
        kind: KernelKind,
        sigma: f64,
        q: usize,
        cache: &mut HashMap<Vec<usize>, ParametrixSource>,
        cardinals: &mut HashMap<(usize, usize), Vec<(usize, f64)>>,
    ) -> Result<DMatrix<f64>> {
        let (n, f, grid, h) = (self.n, self.forms, self.cfg.grid, self.h);
        let r = refinement(&self.cfg, h, sigma);
        let hf = h / r as f64;
        let half = (self.cfg.cutoff.r2.min(self.cfg.window * sigma.sqrt()) / hf).floor() as i64;
        let fine_n = (grid * r) as i64;
        let qc = unravel(q, grid, n);
        let (v2q, mq) = &self.target[q];
        let width = (2 * half + 1) as usize;
        let weight = hf.powi(n as i32);
        let pts = self.points();
        let mut out = DMatrix::zeros(f, pts * f);
        // per-dimension fine indices and their cardinal weights
        let mut per_dim: Vec<Vec<FineNode>> = Vec::with_capacity(n);
        for qd in &qc {
            let mut v = Vec::with_capacity(width);
            for k in -half..=half {
                let gfine = (*qd as i64 * r as i64 + k).rem_euclid(fine_n) as usize;
                let (base, residue) = (gfine / r, gfine % r);
                let card = cardinals
                    .entry((r, residue))
                    .or_insert_with(|| cardinal_weights(residue, r, grid, h))
                    .iter()
                    .map(|(j, w)| ((base + j) % grid, *w))
                    .collect();
                v.push((gfine, card));
            }
            per_dim.push(v);
        }
        let block_at = |idx: &[usize], cache: &mut HashMap<Vec<usize>, ParametrixSource>| -> Result<DMatrix<f64>> {
            let key: Vec<usize> = idx.iter().enumerate().map(|(d, &i)| per_dim[d][i].0).collect();
            let z = DVector::from_fn(n, |d, _| key[d] as f64 * hf);
            let y = DVector::from_fn(n, |d, _| -((idx[d] as i64 - half) as f64) * hf);
            if !cache.contains_key(&key) {
                let src = self.source(sigma, &z)?;
                cache.insert(key.clone(), src);
            }
            Ok(self.block(kind, &cache[&key], (*v2q, mq), &y) * weight)
        };
        match n {
            1 => {
                for i in 0..width {
                    let b = block_at(&[i], cache)?;
                    if b.amax() == 0.0 {
                        continue;
                    }
                    for (c, w) in &per_dim[0][i].1 {
                        let mut dst = out.columns_mut(c * f, f);
                        dst += &b * *w;
                    }
                }
            }
            2 => {
                for i in 0..width {
                    // stage 1: contract the second direction
                    let mut stage = DMatrix::zeros(f, grid * f);
                    let mut any = false;
                    for j in 0..width {
                        let b = block_at(&[i, j], cache)?;
                        if b.amax() == 0.0 {
                            continue;
                        }
                        any = true;
                        for (c2, w) in &per_dim[1][j].1 {
                            let mut dst = stage.columns_mut(c2 * f, f);
                            dst += &b * *w;
                        }
                    }
                    if !any {
                        continue;
                    }
                    // stage 2: the first direction
                    for (c1, w1) in &per_dim[0][i].1 {
                        for c2 in 0..grid {
                            let g = ravel(&[*c1, c2], grid);
                            let mut dst = out.columns_mut(g * f, f);
                            dst += stage.columns(c2 * f, f) * *w1;
                        }
                    }
                }
            }
            _ => unreachable!("validated"),
        }
        Ok(out)
    }

    /// Spatial quadrature operator `W(σ)` with blocks `W(q, z)`.
    pub fn quadrature_operator(&self, kind: KernelKind, sigma: f64) -> Result<GridOperator> {
        let mut cache = HashMap::new();
        let mut cardinals = HashMap::new();
        let f = self.forms;
        if self.circulant {
            let row = self.row(kind, sigma, 0, &mut cache, &mut cardinals)?;
            let pts = self.points();
            let mut column = DMatrix::zeros(pts * f, f);
            for z in 0..pts {
                // W(0, z) = w[−z]
                let d = sub_index(0, z, self.cfg.grid, self.n);
                column.rows_mut(d * f, f).copy_from(&row.columns(z * f, f));
            }
            return Ok(GridOperator::Circulant { n: self.n, grid: self.cfg.grid, column });
        }
        let pts = self.points();
        let mut m = DMatrix::zeros(pts * f, pts * f);
        for q in 0..pts {
            let row = self.row(kind, sigma, q, &mut cache, &mut cardinals)?;
            m.rows_mut(q * f, f).copy_from(&row);
        }
        Ok(GridOperator::Dense(m))
    }

    /// `K₀` on the time grid.
    pub fn k0_grid(&self) -> Result<KernelGrid> {
        let times = time_nodes(&self.cfg);
        let slices = times.iter().map(|&nu| self.grid_kernel(KernelKind::Defect, nu)).collect::<Result<_>>()?;
        Ok(KernelGrid { times, slices })
    }
}

fn node(g: usize, grid: usize, n: usize, h: f64) -> DVector<f64> {
    DVector::from_iterator(n, unravel(g, grid, n).into_iter().map(|c| c as f64 * h))
}

fn refinement(cfg: &LeviConfig, h: f64, sigma: f64) -> usize {
    let r = (cfg.resolution * h / sigma.sqrt()).ceil();
    (r.max(1.0) as usize).min(cfg.max_refinement)
}

fn cardinal_weights(residue: usize, r: usize, grid: usize, h: f64) -> Vec<(usize, f64)> {
    if residue == 0 {
        return vec![(0, 1.0)];
    }
    let x = residue as f64 * h / r as f64;
    (0..grid).map(|j| (j, periodic_cardinal(x - j as f64 * h, grid))).collect()
}

/// Time nodes `ν_k = kτ/P`, `k = 1..=P`.
pub fn time_nodes(cfg: &LeviConfig) -> Vec<f64> {
    let dt = cfg.tau / cfg.steps as f64;
    (1..=cfg.steps).map(|k| k as f64 * dt).collect()
}

/// Interpolation stencil (node offsets relative to the subinterval index).
fn stencil(i: usize, j: usize) -> &'static [i64] {
    match i {
        1 => &[0, 1],
        2 => {
            if j == 0 {
                &[0, 1, 2]
            } else {
                &[-1, 0, 1]
            }
        }
        _ => {
            if j == 0 {
                &[0, 1, 2, 3]
            } else if j == i - 1 {
                &[-2, -1, 0, 1]
            } else {
                &[-1, 0, 1, 2]
            }
        }
    }
}

fn lagrange(offsets: &[i64], o: usize, x: f64) -> f64 {
    let xo = offsets[o] as f64;
    offsets
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != o)
        .map(|(_, &ok)| (x - ok as f64) / (xo - ok as f64))
        .product()
}

/// Panels of subinterval `j` (graded towards 0 for `j = 0`).
fn panels(cfg: &LeviConfig, j: usize) -> Vec<(f64, f64)> {
    let dt = cfg.tau / cfg.steps as f64;
    if j > 0 {
        return vec![(j as f64 * dt, (j + 1) as f64 * dt)];
    }
    let mut edges = vec![0.0];
    for l in (0..=cfg.grading_levels).rev() {
        edges.push(dt * 0.5f64.powi(l as i32));
    }
    edges.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Product-integration weights `W[i][k]` with `∫₀^{ν_i} F(σ) g(ν_i − σ) dσ ≈ Σ_k W[i][k] g(ν_k)`.
#[derive(Debug, Clone)]
pub struct ConvolutionWeights {
    /// `weights[i-1][k-1]`, `1 ≤ k ≤ i ≤ P`; `None` marks an identically zero weight.
    pub weights: Vec<Vec<Option<GridOperator>>>,
}

/// Builds the product-integration weights of `kind` for output times `rows`.
pub fn convolution_weights(ctx: &LeviContext, kind: KernelKind, rows: &[usize]) -> Result<ConvolutionWeights> {
    let cfg = &ctx.cfg;
    let p = cfg.steps;
    let dt = cfg.tau / p as f64;
    // needed (j, stencil) pairs
    let mut needed: HashMap<usize, Vec<&'static [i64]>> = HashMap::new();
    for &i in rows {
        for j in 0..i {
            let s = stencil(i, j);
            let e = needed.entry(j).or_default();
            if !e.contains(&s) {
                e.push(s);
            }
        }
    }
    let mut moments: HashMap<(usize, &'static [i64]), Vec<GridOperator>> = HashMap::new();
    let mut js: Vec<usize> = needed.keys().copied().collect();
    js.sort_unstable();
    for j in js {
        let stencils = &needed[&j];
        let mut acc: Vec<Vec<Option<GridOperator>>> = stencils.iter().map(|s| vec![None; s.len()]).collect();
        for (a, b) in panels(cfg, j) {
            let (xs, ws) = gauss_legendre_on(cfg.gauss_order, a, b);
            for (sigma, w) in xs.iter().zip(&ws) {
                let op = ctx.quadrature_operator(kind, *sigma)?;
                let x = sigma / dt - j as f64;
                for (si, s) in stencils.iter().enumerate() {
                    for o in 0..s.len() {
                        let c = w * lagrange(s, o, x);
                        match &mut acc[si][o] {
                            Some(m) => m.axpy(c, &op),
                            slot @ None => {
                                let mut m = op.zeros_like();
                                m.axpy(c, &op);
                                *slot = Some(m);
                            }
                        }
                    }
                }
            }
        }
        for (s, ms) in stencils.iter().zip(acc) {
            moments.insert((j, *s), ms.into_iter().map(|m| m.expect("filled")).collect());
        }
    }
    let mut weights: Vec<Vec<Option<GridOperator>>> = (1..=p).map(|i| vec![None; i]).collect();
    for &i in rows {
        for j in 0..i {
            let s = stencil(i, j);
            let ms = &moments[&(j, s)];
            for (o, m) in s.iter().zip(ms) {
                let k = i as i64 - j as i64 - o;
                debug_assert!((0..=i as i64).contains(&k));
                if k <= 0 {
                    continue; // the kernels vanish at ν = 0
                }
                let slot = &mut weights[i - 1][k as usize - 1];
                match slot {
                    Some(w) => w.axpy(1.0, m),
                    None => *slot = Some(m.clone()),
                }
            }
        }
    }
    Ok(ConvolutionWeights { weights })
}

/// `K_{m+1}(ν_i) = Σ_k W[i][k] K_m(ν_k)` for all grid times.
pub fn spacetime_convolve(weights: &ConvolutionWeights, km: &KernelGrid) -> Result<KernelGrid> {
    if weights.weights.len() != km.times.len() {
        return Err(invalid("convolution weights and kernel grid have different time grids"));
    }
    let mut out = km.zeros_like();
    for (i, row) in weights.weights.iter().enumerate() {
        for (k, w) in row.iter().enumerate() {
            if let Some(w) = w {
                let term = w.compose(&km.slices[k]);
                out.slices[i].axpy(1.0, &term);
            }
        }
    }
    Ok(out)
}

/// Alternating partial sum `Σ_{m<M} (−1)^{m+1} K_m`.
pub fn levi_sum(terms: &[KernelGrid], truncation: usize) -> Result<KernelGrid> {
    if truncation == 0 || truncation > terms.len() {
        return Err(invalid(format!("truncation must lie in 1..={}", terms.len())));
    }
    let mut sum = terms[0].zeros_like();
    for (m, k) in terms.iter().take(truncation).enumerate() {
        sum.axpy(if m % 2 == 0 { -1.0 } else { 1.0 }, k)?;
    }
    Ok(sum)
}

/// `G(τ) = H(τ) + Σ_k W_H[P][k] K(ν_k)`.
pub fn reconstruct_g(ctx: &LeviContext, h_weights: &ConvolutionWeights, k: &KernelGrid) -> Result<GridOperator> {
    let p = ctx.cfg.steps;
    let mut g = ctx.grid_kernel(KernelKind::Parametrix, ctx.cfg.tau)?;
    let row = h_weights.weights.get(p - 1).ok_or_else(|| invalid("missing final-time weights"))?;
    for (kk, w) in row.iter().enumerate() {
        if let Some(w) = w {
            g.axpy(1.0, &w.compose(&k.slices[kk]));
        }
    }
    Ok(g)
}

/// Least-squares fit `‖K_m‖ ≈ a (bτ)^m / m!` in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FactorialFit {
    /// Prefactor `a`.
    pub a: f64,
    /// Rate `b`.
    pub b: f64,
    /// `max_m |fit_m / ‖K_m‖ − 1|` over the fitted range.
    pub relative_residual: f64,
    /// Number of terms fitted.
    pub terms: usize,
}

/// Fits the factorial shape to `norms[0..=m_max]` (nonzero norms only).
pub fn fit_factorial(norms: &[f64], tau: f64, m_max: usize) -> Result<FactorialFit> {
    let pts: Vec<(f64, f64)> = norms
        .iter()
        .enumerate()
        .take(m_max + 1)
        .filter(|(_, v)| **v > 0.0)
        .map(|(m, v)| (m as f64, v.ln() + ln_factorial(m)))
        .collect();
    if pts.len() < 2 {
        return Err(invalid("need at least two nonzero norms to fit"));
    }
    let k = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / k, sy / k);
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let relative_residual = pts
        .iter()
        .map(|(x, y)| ((intercept + slope * x) - y).exp() - 1.0)
        .map(f64::abs)
        .fold(0.0, f64::max);
    Ok(FactorialFit { a: intercept.exp(), b: slope.exp() / tau, relative_residual, terms: pts.len() })
}

fn ln_factorial(m: usize) -> f64 {
    (2..=m).map(|k| (k as f64).ln()).sum()
}

/// Summary of a Levi run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationReport {
    /// `sup ‖K_m‖` over the space-time grid (at least `fit_terms` terms).
    pub norms: Vec<f64>,
    /// Factorial fit over `m ≤ 5`.
    pub fit: Option<FactorialFit>,
    /// Truncation index `M` (number of terms summed).
    pub truncation: usize,
    /// `‖K_{M−1}‖ / ‖K₀‖` (last term kept).
    pub tail_ratio: f64,
    /// Tail bound `a (bτ)^M / M!` from the fit.
    pub tail_estimate: Option<f64>,
    /// Whether every term decreased.
    pub monotone: bool,
    /// `Σ_p str G(τ,p,p)·w_p` (zero for tori).
    pub supertrace_sum: f64,
}

/// Output of a Levi run.
#[derive(Debug, Clone)]
pub struct LeviOutcome {
    /// Report.
    pub report: IterationReport,
    /// Reconstructed `G(τ)` on the coarse grid.
    pub g: GridOperator,
    /// Context used.
    pub context: LeviContext,
}

impl LeviOutcome {
    /// `G(τ)` restricted to form `k` as a dense `Nⁿ × Nⁿ` matrix.
    pub fn degree_block(&self, form: usize) -> DMatrix<f64> {
        let f = self.context.forms;
        let pts = self.context.points();
        DMatrix::from_fn(pts, pts, |q, p| self.g.block(q, p, f)[(form, form)])
    }
}

/// Runs the full iteration and reconstruction.
pub fn run_levi(field: &TorusField, cfg: &LeviConfig) -> Result<LeviOutcome> {
    let ctx = LeviContext::new(field, cfg)?;
    let rows: Vec<usize> = (1..=cfg.steps).collect();
    let wk = convolution_weights(&ctx, KernelKind::Defect, &rows)?;
    let wh = convolution_weights(&ctx, KernelKind::Parametrix, &[cfg.steps])?;
    let k0 = ctx.k0_grid()?;
    let k0_norm = k0.sup_norm();
    let mut norms = vec![k0_norm];
    let mut terms = vec![k0];
    let mut truncation = None;
    while terms.len() < cfg.max_terms.max(cfg.fit_terms) {
        let last = terms.last().expect("nonempty");
        let small = k0_norm == 0.0 || last.sup_norm() < cfg.tail_tolerance * k0_norm;
        if truncation.is_none() && (small || terms.len() == cfg.max_terms) {
            truncation = Some(terms.len());
        }
        if truncation.is_some() && terms.len() >= cfg.fit_terms {
            break;
        }
        if k0_norm == 0.0 {
            break;
        }
        let next = spacetime_convolve(&wk, last)?;
        let nn = next.sup_norm();
        if !nn.is_finite() {
            return Err(Error::NonConvergence("Levi term is not finite".into()));
        }
        norms.push(nn);
        terms.push(next);
    }
    let truncation = truncation.unwrap_or(terms.len()).min(terms.len());
    let monotone = norms.windows(2).all(|w| w[1] <= w[0]);
    if norms.len() >= 3 && norms[norms.len() - 1] > norms[1] {
        return Err(Error::NonConvergence(format!("Levi terms do not decay: {norms:?}")));
    }
    let fit = fit_factorial(&norms, cfg.tau, 5).ok();
    let tail_estimate = fit.map(|f| f.a * (f.b * cfg.tau).powi(truncation as i32) / ln_factorial(truncation).exp());
    let ksum = levi_sum(&terms, truncation)?;
    let g = reconstruct_g(&ctx, &wh, &ksum)?;
    let basis = Basis::new(ctx.n)?;
    let w = ctx.h.powi(ctx.n as i32);
    let mut supertrace_sum = 0.0;
    for p in 0..ctx.points() {
        let b = g.block(p, p, ctx.forms);
        for k in 0..ctx.forms {
            supertrace_sum += basis.parity_sign(k) as f64 * b[(k, k)] * w;
        }
    }
    let tail_ratio = if k0_norm > 0.0 { norms[truncation - 1] / k0_norm } else { 0.0 };
    let report = IterationReport { norms, fit, truncation, tail_ratio, tail_estimate, monotone, supertrace_sum };
    Ok(LeviOutcome { report, g, context: ctx })
}

/// Circle heat kernel `(4πτ)^{−1/2} Σ_k exp(−(x + 2πk)²/4τ)`.
pub fn circle_heat_kernel(tau: f64, x: f64) -> f64 {
    let x = wrap_angle(x);
    let mut acc = 0.0;
    for k in -20i32..=20 {
        let d = x + 2.0 * PI * k as f64;
        acc += (-d * d / (4.0 * tau)).exp();
    }
    acc / (4.0 * PI * tau).sqrt()
}

/// Reference `G(τ)` on the circle from refined discrete complexes.
///
/// The discrete kernel of the grid with `rN` points converges at second order
/// with `0`-forms at vertices and `1`-forms at midpoints. Each refinement is
/// sampled at the coarse vertices (`1`-forms averaged over the two adjacent
/// midpoints in each argument), and the two refinements are combined by
/// Richardson extrapolation `(4G_{2r} − G_r)/3`.
pub fn circle_reference(field: &TorusField, grid: usize, t: f64, tau: f64, r: usize) -> Result<[DMatrix<f64>; 2]> {
    if field.n != 1 {
        return Err(invalid("the refined reference is implemented on the circle"));
    }
    let a = circle_reference_single(field, grid, t, tau, r)?;
    let b = circle_reference_single(field, grid, t, tau, 2 * r)?;
    Ok([(&b[0] * 4.0 - &a[0]) / 3.0, (&b[1] * 4.0 - &a[1]) / 3.0])
}

fn circle_reference_single(field: &TorusField, grid: usize, t: f64, tau: f64, r: usize) -> Result<[DMatrix<f64>; 2]> {
    let nf = grid * r;
    let cx = DiscreteComplex::new(field, nf)?;
    let e = HeatSemigroup::new(&cx.box_t(t))?.exp(tau)?;
    let w = cx.weight();
    let g0 = DMatrix::from_fn(grid, grid, |q, p| e[(2 * q * r, 2 * p * r)] / w);
    let g1 = DMatrix::from_fn(grid, grid, |q, p| {
        let (qa, qb) = (q * r, (q * r + nf - 1) % nf);
        let (pa, pb) = (p * r, (p * r + nf - 1) % nf);
        0.25 * (e[(2 * qa + 1, 2 * pa + 1)] + e[(2 * qb + 1, 2 * pa + 1)] + e[(2 * qa + 1, 2 * pb + 1)] + e[(2 * qb + 1, 2 * pb + 1)])
            / w
    });
    Ok([g0, g1])
}

/// Which endpoint of the kernel the field-decay factor `exp(−νt²|v|²/c₁)` is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayPoint {
    /// Source point `p`.
    Source,
    /// Target point `q`.
    Target,
}

/// Samples of `|K₀|/(√ν t + 1)` for the Gaussian-envelope fit of the defect.
pub fn defect_envelope_samples(ctx: &LeviContext, times: &[f64], at: DecayPoint) -> Result<Vec<EnvelopeSample>> {
    let mut out = Vec::new();
    let t = ctx.cfg.t;
    for &nu in times {
        let k = ctx.grid_kernel(KernelKind::Defect, nu)?;
        for q in 0..ctx.points() {
            for p in 0..ctx.points() {
                let blk = k.block(q, p, ctx.forms);
                let (xq, xp) = (ctx.node(q), ctx.node(p));
                let rho = xq.iter().zip(xp.iter()).map(|(a, b)| wrap_angle(a - b).powi(2)).sum::<f64>().sqrt();
                let vp = match at {
                    DecayPoint::Source => ctx.field.frame_data(&xp).v_norm_sq(),
                    DecayPoint::Target => ctx.field.frame_data(&xq).v_norm_sq(),
                };
                out.push(EnvelopeSample {
                    value: blk.norm() / (nu.sqrt() * t + 1.0),
                    tau: nu,
                    rho,
                    decay: nu * t * t * vp,
                    n: ctx.n,
                });
            }
        }
    }
    Ok(out)
}

/// Fits `|K₀(ν,q,p)| ≤ c₀(√ν t + 1) Q(c₁ν,q,p) exp(−νt²|v(x)|²/c₁)` over a sweep, with `x`
/// the endpoint selected by `at`.
pub fn defect_bound_fit(ctx: &LeviContext, times: &[f64], at: DecayPoint) -> Result<GaussianBoundFit> {
    Ok(mehler_kernel::fit_gaussian_envelope(&defect_envelope_samples(ctx, times, at)?))
}

/// Settings of the numerical check of the two-Gaussian convolution lemma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvolutionSettings {
    /// Width constant of the first factor.
    pub c1: f64,
    /// Width constant of the second factor (`c₁ < c₂`).
    pub c2: f64,
    /// Radius `ε` of the integration ball.
    pub epsilon: f64,
    /// Dimension.
    pub n: usize,
    /// Random samples in addition to the fixed sweep.
    pub samples: usize,
    /// Radial quadrature nodes in the ball (angular nodes: twice as many).
    pub radial_nodes: usize,
    /// Largest `τ` sampled.
    pub tau_max: f64,
    /// Smallest `τ` sampled.
    pub tau_min: f64,
}

impl Default for ConvolutionSettings {
    fn default() -> Self {
        Self { c1: 1.0, c2: 2.0, epsilon: 0.3, n: 2, samples: 2000, radial_nodes: 48, tau_max: 1.0, tau_min: 0.01 }
    }
}

/// Result of the numerical lemma check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvolutionReport {
    /// `max` of the sampled ratios (the fitted constant `c`).
    pub constant: f64,
    /// Largest ratio of sampled value to the whole-space closed form (≤ 1).
    pub max_fraction_of_closed_form: f64,
    /// Number of samples evaluated.
    pub samples: usize,
}

fn q_gauss(alpha: f64, rho2: f64, n: usize) -> f64 {
    (4.0 * PI * alpha).powf(-(n as f64) / 2.0) * (-rho2 / (4.0 * alpha)).exp()
}

/// `∫_{|z−q|<ε} Q(c₁(τ−ν),q,z) Q(c₂ν,z,p) dz / Q(c₂τ,q,p)` in flat `ℝⁿ` (`n ∈ {1,2}`),
/// with `q = 0`, by Gauss–Legendre (radius) × trapezoid (angle) quadrature.
pub fn convolution_ratio(s: &ConvolutionSettings, tau: f64, nu: f64, p: &[f64]) -> Result<f64> {
    if !(0.0 < nu && nu < tau) {
        return Err(invalid("need 0 < ν < τ"));
    }
    let (a, b) = (s.c1 * (tau - nu), s.c2 * nu);
    let p2: f64 = p.iter().map(|x| x * x).sum();
    let integral = match s.n {
        1 => {
            let (xs, ws) = gauss_legendre_on(2 * s.radial_nodes, -s.epsilon, s.epsilon);
            xs.iter().zip(&ws).map(|(x, w)| w * q_gauss(a, x * x, 1) * q_gauss(b, (x - p[0]).powi(2), 1)).sum::<f64>()
        }
        2 => {
            // Split the radius at the peak of the first factor's mass for accuracy.
            let (rs, wr) = gauss_legendre_on(s.radial_nodes, 0.0, s.epsilon);
            let nt = 2 * s.radial_nodes;
            let mut acc = 0.0;
            for (r, w) in rs.iter().zip(&wr) {
                let mut ring = 0.0;
                for k in 0..nt {
                    let th = 2.0 * PI * k as f64 / nt as f64;
                    let (x, y) = (r * th.cos(), r * th.sin());
                    ring += q_gauss(b, (x - p[0]).powi(2) + (y - p[1]).powi(2), 2);
                }
                acc += w * r * q_gauss(a, r * r, 2) * ring * 2.0 * PI / nt as f64;
            }
            acc
        }
        _ => return Err(invalid("lemma check implemented for n ∈ {1, 2}")),
    };
    Ok(integral / q_gauss(s.c2 * tau, p2, s.n))
}

/// Whole-space value of the ratio: `Q(c₁(τ−ν)+c₂ν, q,p) / Q(c₂τ, q,p)`.
pub fn convolution_closed_form(s: &ConvolutionSettings, tau: f64, nu: f64, p: &[f64]) -> f64 {
    let p2: f64 = p.iter().map(|x| x * x).sum();
    q_gauss(s.c1 * (tau - nu) + s.c2 * nu, p2, s.n) / q_gauss(s.c2 * tau, p2, s.n)
}

/// Samples the lemma ratio over a fixed sweep (`ν/τ ∈ {0.1,…,0.9}`, `τ` log-spaced,
/// `|p| ∈ {0, ε/2, ε, 2ε, 4ε}`) plus `samples` random configurations.
pub fn convolution_check(s: &ConvolutionSettings, seed: u64) -> Result<ConvolutionReport> {
    use rand::Rng;
    if !(0.0 < s.c1 && s.c1 < s.c2 && s.epsilon > 0.0 && s.tau_min > 0.0 && s.tau_min < s.tau_max) {
        return Err(invalid("need 0 < c1 < c2, ε > 0 and 0 < τ_min < τ_max"));
    }
    let mut configs: Vec<(f64, f64, Vec<f64>)> = Vec::new();
    let dir = |len: f64| -> Vec<f64> {
        let mut v = vec![0.0; s.n];
        v[0] = len;
        v
    };
    for it in 0..6 {
        let tau = s.tau_min * (s.tau_max / s.tau_min).powf(it as f64 / 5.0);
        for k in 1..=9 {
            for &d in &[0.0, 0.5, 1.0, 2.0, 4.0] {
                configs.push((tau, tau * k as f64 / 10.0, dir(d * s.epsilon)));
            }
        }
    }
    let mut rng = crate::rng::stream(seed, 0xA);
    for _ in 0..s.samples {
        let tau = s.tau_min * (s.tau_max / s.tau_min).powf(rng.gen::<f64>());
        let frac = 0.1 + 0.8 * rng.gen::<f64>();
        let p: Vec<f64> = (0..s.n).map(|_| rng.gen_range(-4.0..4.0) * s.epsilon).collect();
        configs.push((tau, frac * tau, p));
    }
    let mut constant: f64 = 0.0;
    let mut frac_max: f64 = 0.0;
    for (tau, nu, p) in &configs {
        let r = convolution_ratio(s, *tau, *nu, p)?;
        if !r.is_finite() {
            return Err(Error::NonConvergence("lemma ratio is not finite".into()));
        }
        constant = constant.max(r);
        frac_max = frac_max.max(r / convolution_closed_form(s, *tau, *nu, p));
    }
    Ok(ConvolutionReport { constant, max_fraction_of_closed_form: frac_max, samples: configs.len() })
}

/// Frame data helper for callers constructing sources at arbitrary points.
pub fn frame_at(field: &TorusField, x: &DVector<f64>) -> FrameData {
    field.frame_data(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::witten_laplacian::{TrigKind, TrigTerm};

    fn circle_sin() -> TorusField {
        TorusField { n: 1, components: vec![vec![TrigTerm { coeff: 1.0, wave: vec![1], kind: TrigKind::Sin }]] }
    }

    #[test]
    fn cardinal_is_interpolating() {
        for grid in [8usize, 9] {
            let h = 2.0 * PI / grid as f64;
            for j in 0..grid {
                let v = periodic_cardinal(j as f64 * h, grid);
                assert!((v - if j == 0 { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
            // reproduces a low-order trigonometric polynomial
            let x = 0.37;
            let s: f64 = (0..grid).map(|j| periodic_cardinal(x - j as f64 * h, grid) * (j as f64 * h).cos()).sum();
            assert!((s - x.cos()).abs() < 1e-13);
        }
    }

    #[test]
    fn lagrange_partition_of_unity() {
        for s in [&[0i64, 1][..], &[0, 1, 2], &[-1, 0, 1, 2], &[-2, -1, 0, 1]] {
            let x = 0.3;
            let sum: f64 = (0..s.len()).map(|o| lagrange(s, o, x)).sum();
            assert!((sum - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn defect_vanishes_inside_cutoff_for_zero_field() {
        let f = TorusField { n: 1, components: vec![vec![]] };
        let ctx = LeviContext::new(&f, &LeviConfig { grid: 16, ..LeviConfig::circle_default(0.0) }).unwrap();
        let q = DVector::from_vec(vec![0.2]);
        let p = DVector::from_vec(vec![0.0]);
        let k = ctx.kernel_at(KernelKind::Defect, 0.1, &q, &p).unwrap();
        assert!(k.max_abs() < 1e-14);
        // in the transition annulus the defect is nonzero
        let q = DVector::from_vec(vec![1.3]);
        assert!(ctx.kernel_at(KernelKind::Defect, 0.1, &q, &p).unwrap().max_abs() > 1e-6);
        // beyond r₂ it vanishes again
        let q = DVector::from_vec(vec![2.0]);
        assert_eq!(ctx.kernel_at(KernelKind::Defect, 0.1, &q, &p).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn defect_matches_finite_differences() {
        let f = circle_sin();
        let ctx = LeviContext::new(&f, &LeviConfig { grid: 16, ..LeviConfig::circle_default(1.3) }).unwrap();
        let (nu, p) = (0.2, DVector::from_vec(vec![0.4]));
        let h = 1e-4;
        let hp = |s: f64, x: f64| ctx.kernel_at(KernelKind::Parametrix, s, &DVector::from_vec(vec![x]), &p).unwrap();
        for x in [0.5, 1.2, 1.6] {
            let dt = (&hp(nu + h, x) - &hp(nu - h, x)).scale(0.5 / h);
            let lap = (&(&hp(nu, x + h) + &hp(nu, x - h)) - &hp(nu, x).scale(2.0)).scale(1.0 / (h * h));
            let fd = f.frame_data(&DVector::from_vec(vec![x]));
            let t = 1.3;
            let m = crate::mehler_kernel::deformation_operator(&fd).unwrap();
            let h0 = hp(nu, x);
            let pot = h0.scale(t * t * fd.v_norm_sq());
            let box_h = &(&(-&lap) - &m.compose(&h0).scale(t)) + &pot;
            let residual = &dt + &box_h;
            let k0 = ctx.kernel_at(KernelKind::Defect, nu, &DVector::from_vec(vec![x]), &p).unwrap();
            assert!((&residual - &k0).max_abs() < 1e-5 * (1.0 + k0.max_abs()), "x={x}");
        }
    }

    #[test]
    fn circulant_compose_matches_dense() {
        let f = TorusField { n: 1, components: vec![vec![]] };
        let ctx = LeviContext::new(&f, &LeviConfig { grid: 8, ..LeviConfig::circle_default(0.0) }).unwrap();
        let a = ctx.grid_kernel(KernelKind::Parametrix, 0.3).unwrap();
        let b = ctx.grid_kernel(KernelKind::Parametrix, 0.2).unwrap();
        let dense = a.to_dense(2) * b.to_dense(2);
        assert!((a.compose(&b).to_dense(2) - dense).amax() < 1e-12);
    }

    #[test]
    fn levi_sum_first_term() {
        let ctx = LeviContext::new(&circle_sin(), &LeviConfig { grid: 8, steps: 2, ..LeviConfig::circle_default(1.0) }).unwrap();
        let k0 = ctx.k0_grid().unwrap();
        let s = levi_sum(std::slice::from_ref(&k0), 1).unwrap();
        let mut diff = s.clone();
        diff.axpy(1.0, &k0).unwrap();
        assert_eq!(diff.sup_norm(), 0.0);
        assert!(levi_sum(&[k0], 0).is_err());
    }

    #[test]
    fn factorial_fit_exact() {
        let norms: Vec<f64> = (0..6).map(|m| 2.0 * (3.0f64 * 0.25).powi(m) / ln_factorial(m as usize).exp()).collect();
        let fit = fit_factorial(&norms, 0.25, 5).unwrap();
        assert!((fit.a - 2.0).abs() < 1e-12 && (fit.b - 3.0).abs() < 1e-12);
        assert!(fit.relative_residual < 1e-12);
    }

    #[test]
    fn lemma_ratio_symmetry_and_bound() {
        let s = ConvolutionSettings::default();
        let swapped = ConvolutionSettings { c1: s.c2, c2: s.c1, ..s };
        let p = [0.0, 0.0];
        let a = convolution_ratio(&s, 0.2, 0.1, &p).unwrap() * q_gauss(s.c2 * 0.2, 0.0, 2);
        let b = convolution_ratio(&swapped, 0.2, 0.1, &p).unwrap() * q_gauss(swapped.c2 * 0.2, 0.0, 2);
        assert!((a / b - 1.0).abs() < 1e-10);
        let p = [0.4, -0.1];
        assert!(convolution_ratio(&s, 0.3, 0.1, &p).unwrap() <= convolution_closed_form(&s, 0.3, 0.1, &p) * (1.0 + 1e-10));
    }
}
