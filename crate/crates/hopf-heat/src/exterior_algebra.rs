//! Operator calculus on the exterior algebra `Λ*(ℝⁿ)`.
//!
//! # Basis convention
//!
//! The `2ⁿ` basis forms `ω_I = ω_{i₁}∧…∧ω_{i_k}` (`i₁ < … < i_k`) are ordered by
//! degree first and lexicographically on the index list within a degree, e.g. for
//! `n = 2`: `1, ω₁, ω₂, ω₁∧ω₂`. Indices are 1-based as in the usual notation.
//!
//! Creation by `ω_j` appends `ω_j` and sorts it into increasing position, i.e.
//! `ω_I ∧ ω_j = (−1)^{#{i ∈ I : i > j}} ω_{I∪{j}}` (zero when `j ∈ I`). With this
//! convention `ω₁ ↦ +ω₁∧ω₂` under creation by `ω₂`. Any consistent choice gives
//! the same anticommutation relations and supertraces.
//! Annihilation (interior product by the dual vector) is the transpose of
//! creation, and `E±_j = creation ± annihilation`.
//!
//! Algebraic identities can be checked exactly using `i64` operators; the
//! exponential and everything downstream work in `f64`.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{ClosedAddAssign, ClosedMulAssign, DMatrix, Scalar};
use num_traits::{One, Zero};

use crate::error::{invalid, Error, Result};

/// Largest supported dimension (`2⁸ = 256`-dimensional representation).
pub const MAX_DIM: usize = 8;

/// A basis form `ω_I`, stored as a sorted list of 1-based indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BasisForm {
    n: usize,
    indices: Vec<usize>,
}

impl BasisForm {
    /// Creates `ω_I`; the indices must be strictly increasing and lie in `1..=n`.
    pub fn new(n: usize, indices: Vec<usize>) -> Result<Self> {
        check_dim(n)?;
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("basis form indices must be strictly increasing"));
        }
        if indices.iter().any(|&i| i == 0 || i > n) {
            return Err(invalid(format!("basis form index out of range 1..={n}")));
        }
        Ok(Self { n, indices })
    }

    /// Ambient dimension `n`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// The sorted index set.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Degree `|I|`.
    pub fn degree(&self) -> usize {
        self.indices.len()
    }

    /// Bit mask with bit `i−1` set for every `i ∈ I`.
    pub fn mask(&self) -> u32 {
        self.indices.iter().fold(0, |m, &i| m | (1 << (i - 1)))
    }

    /// Position of this form in the basis ordering.
    pub fn position(&self) -> usize {
        Basis::new(self.n)
            .expect("dimension already validated")
            .position_of_mask(self.mask())
    }
}

/// The ordered basis of `Λ*(ℝⁿ)`.
#[derive(Debug, Clone)]
pub struct Basis {
    n: usize,
    masks: Vec<u32>,
    position: Vec<usize>,
}

impl Basis {
    /// Builds the degree-graded lexicographic basis for dimension `n`.
    pub fn new(n: usize) -> Result<Self> {
        check_dim(n)?;
        let mut masks: Vec<u32> = (0..(1u32 << n)).collect();
        masks.sort_by_key(|&m| (m.count_ones(), index_list(m)));
        let mut position = vec![0; masks.len()];
        for (k, &m) in masks.iter().enumerate() {
            position[m as usize] = k;
        }
        Ok(Self { n, masks, position })
    }

    /// Dimension `n` of the underlying vector space.
    pub fn n(&self) -> usize {
        self.n
    }

    /// `2ⁿ`.
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    /// Always false: the basis contains at least the constant form.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Mask of the `k`-th basis form.
    pub fn mask(&self, k: usize) -> u32 {
        self.masks[k]
    }

    /// Degree of the `k`-th basis form.
    pub fn degree(&self, k: usize) -> usize {
        self.masks[k].count_ones() as usize
    }

    /// Position of the form with the given mask.
    pub fn position_of_mask(&self, mask: u32) -> usize {
        self.position[mask as usize]
    }

    /// The `k`-th basis form.
    pub fn form(&self, k: usize) -> BasisForm {
        BasisForm { n: self.n, indices: index_list(self.masks[k]) }
    }

    /// `(−1)^{degree}` of the `k`-th basis form.
    pub fn parity_sign(&self, k: usize) -> i64 {
        if self.degree(k).is_multiple_of(2) {
            1
        } else {
            -1
        }
    }
}

fn index_list(mask: u32) -> Vec<usize> {
    (0..32).filter(|b| mask & (1 << b) != 0).map(|b| b + 1).collect()
}

fn check_dim(n: usize) -> Result<()> {
    if n == 0 {
        return Err(invalid("exterior algebra dimension must be positive"));
    }
    if n > MAX_DIM {
        return Err(Error::DimensionCap(format!("n = {n} exceeds the cap {MAX_DIM}")));
    }
    Ok(())
}

fn check_index(n: usize, j: usize) -> Result<()> {
    check_dim(n)?;
    if j == 0 || j > n {
        return Err(invalid(format!("generator index {j} out of range 1..={n}")));
    }
    Ok(())
}

/// A linear map on `Λ*(ℝⁿ)` written in the ordered basis.
///
/// `T = i64` gives exact arithmetic for the algebraic identities; `T = f64` is
/// used for everything analytic.
#[derive(Debug, Clone, PartialEq)]
pub struct ExteriorOperator<T: Scalar = f64> {
    n: usize,
    matrix: DMatrix<T>,
}

impl<T: Scalar + Zero + One> ExteriorOperator<T> {
    /// Wraps a `2ⁿ × 2ⁿ` matrix.
    pub fn from_matrix(n: usize, matrix: DMatrix<T>) -> Result<Self> {
        check_dim(n)?;
        let d = 1usize << n;
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(invalid(format!(
                "operator matrix must be {d}x{d}, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { n, matrix })
    }

    /// The zero operator.
    pub fn zeros(n: usize) -> Result<Self> {
        check_dim(n)?;
        let d = 1usize << n;
        Ok(Self { n, matrix: DMatrix::zeros(d, d) })
    }

    /// The identity operator.
    pub fn identity(n: usize) -> Result<Self> {
        check_dim(n)?;
        let d = 1usize << n;
        Ok(Self { n, matrix: DMatrix::identity(d, d) })
    }

    /// Dimension `n`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Size `2ⁿ` of the representation.
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Matrix in the ordered basis.
    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    /// Consumes the operator, returning its matrix.
    pub fn into_matrix(self) -> DMatrix<T> {
        self.matrix
    }

    /// Transpose (the adjoint in the orthonormal basis).
    pub fn transpose(&self) -> Self {
        Self { n: self.n, matrix: self.matrix.transpose() }
    }

    /// True iff the `(row, col)` entry connects forms of different parity.
    pub fn is_odd_entry(row_degree: usize, col_degree: usize) -> bool {
        (row_degree + col_degree) % 2 == 1
    }
}

impl<T> ExteriorOperator<T>
where
    T: Scalar + Copy + Zero + One + ClosedAddAssign + ClosedMulAssign + Sub<Output = T>,
{
    /// Supertrace: trace over even-degree forms minus trace over odd-degree forms.
    pub fn supertrace(&self) -> T {
        let basis = Basis::new(self.n).expect("validated dimension");
        let mut even = T::zero();
        let mut odd = T::zero();
        for k in 0..self.dim() {
            if basis.degree(k).is_multiple_of(2) {
                even += self.matrix[(k, k)];
            } else {
                odd += self.matrix[(k, k)];
            }
        }
        even - odd
    }

    /// Operator product `self ∘ rhs`.
    pub fn compose(&self, rhs: &Self) -> Self {
        assert_eq!(self.n, rhs.n, "operators act on different exterior algebras");
        Self { n: self.n, matrix: &self.matrix * &rhs.matrix }
    }

    /// Anticommutator `self∘rhs + rhs∘self`.
    pub fn anticommutator(&self, rhs: &Self) -> Self {
        let a = self.compose(rhs);
        let b = rhs.compose(self);
        Self { n: self.n, matrix: a.matrix + b.matrix }
    }
}

impl ExteriorOperator<i64> {
    /// Converts exact integer operators to floating point.
    pub fn to_f64(&self) -> ExteriorOperator<f64> {
        ExteriorOperator { n: self.n, matrix: self.matrix.map(|x| x as f64) }
    }
}

impl ExteriorOperator<f64> {
    /// Multiplies by a scalar.
    pub fn scale(&self, c: f64) -> Self {
        Self { n: self.n, matrix: &self.matrix * c }
    }

    /// Frobenius norm `√tr(ψψ*)`.
    pub fn frobenius_norm(&self) -> f64 {
        self.matrix.norm()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.matrix.amax()
    }
}

impl<T: Scalar + ClosedAddAssign + Copy + Zero> Add for &ExteriorOperator<T> {
    type Output = ExteriorOperator<T>;
    fn add(self, rhs: Self) -> ExteriorOperator<T> {
        assert_eq!(self.n, rhs.n);
        ExteriorOperator { n: self.n, matrix: &self.matrix + &rhs.matrix }
    }
}

impl<T> Sub for &ExteriorOperator<T>
where
    T: Scalar + Copy + Zero + nalgebra::ClosedSubAssign,
{
    type Output = ExteriorOperator<T>;
    fn sub(self, rhs: Self) -> ExteriorOperator<T> {
        assert_eq!(self.n, rhs.n);
        ExteriorOperator { n: self.n, matrix: &self.matrix - &rhs.matrix }
    }
}

impl<T> Mul for &ExteriorOperator<T>
where
    T: Scalar + Copy + Zero + One + ClosedAddAssign + ClosedMulAssign,
{
    type Output = ExteriorOperator<T>;
    fn mul(self, rhs: Self) -> ExteriorOperator<T> {
        assert_eq!(self.n, rhs.n);
        ExteriorOperator { n: self.n, matrix: &self.matrix * &rhs.matrix }
    }
}

impl<T: Scalar + Copy + Neg<Output = T>> Neg for &ExteriorOperator<T> {
    type Output = ExteriorOperator<T>;
    fn neg(self) -> ExteriorOperator<T> {
        ExteriorOperator { n: self.n, matrix: self.matrix.map(|x| -x) }
    }
}

/// Sign of `ω_I ∧ ω_j` relative to `ω_{I∪{j}}`.
fn creation_sign(mask: u32, j: usize) -> i64 {
    let above = mask >> j;
    if above.count_ones().is_multiple_of(2) {
        1
    } else {
        -1
    }
}

/// Exact creation operator by `ω_j` (1-based `j`).
pub fn creation_exact(n: usize, j: usize) -> Result<ExteriorOperator<i64>> {
    check_index(n, j)?;
    let basis = Basis::new(n)?;
    let d = basis.len();
    let bit = 1u32 << (j - 1);
    let mut m = DMatrix::<i64>::zeros(d, d);
    for col in 0..d {
        let mask = basis.mask(col);
        if mask & bit == 0 {
            let row = basis.position_of_mask(mask | bit);
            m[(row, col)] = creation_sign(mask, j);
        }
    }
    Ok(ExteriorOperator { n, matrix: m })
}

/// Exact annihilation operator `i(E_j)`, the transpose of creation.
pub fn annihilation_exact(n: usize, j: usize) -> Result<ExteriorOperator<i64>> {
    Ok(creation_exact(n, j)?.transpose())
}

/// Exact `E⁺_j = ω_j∧ + i(E_j)`.
pub fn e_plus_exact(n: usize, j: usize) -> Result<ExteriorOperator<i64>> {
    Ok(&creation_exact(n, j)? + &annihilation_exact(n, j)?)
}

/// Exact `E⁻_j = ω_j∧ − i(E_j)`.
pub fn e_minus_exact(n: usize, j: usize) -> Result<ExteriorOperator<i64>> {
    Ok(&creation_exact(n, j)? - &annihilation_exact(n, j)?)
}

/// Creation operator by `ω_j` in floating point.
pub fn creation(n: usize, j: usize) -> Result<ExteriorOperator> {
    Ok(creation_exact(n, j)?.to_f64())
}

/// Annihilation operator `i(E_j)` in floating point.
pub fn annihilation(n: usize, j: usize) -> Result<ExteriorOperator> {
    Ok(annihilation_exact(n, j)?.to_f64())
}

/// `E⁺_j` in floating point.
pub fn e_plus(n: usize, j: usize) -> Result<ExteriorOperator> {
    Ok(e_plus_exact(n, j)?.to_f64())
}

/// `E⁻_j` in floating point.
pub fn e_minus(n: usize, j: usize) -> Result<ExteriorOperator> {
    Ok(e_minus_exact(n, j)?.to_f64())
}

/// Supertrace of an operator (free-function form).
pub fn supertrace(op: &ExteriorOperator) -> f64 {
    op.supertrace()
}

/// `Σ_{j,k} v_jk E⁺_j E⁻_k` for an `n × n` coefficient matrix (row `j`, column `k`).
pub fn bilinear_e_plus_e_minus(v: &DMatrix<f64>) -> Result<ExteriorOperator> {
    let n = v.nrows();
    if v.ncols() != n {
        return Err(invalid("coefficient matrix must be square"));
    }
    let plus: Vec<_> = (1..=n).map(|j| e_plus(n, j)).collect::<Result<_>>()?;
    let minus: Vec<_> = (1..=n).map(|k| e_minus(n, k)).collect::<Result<_>>()?;
    let d = 1usize << n;
    let mut acc = DMatrix::<f64>::zeros(d, d);
    for j in 0..n {
        for k in 0..n {
            if v[(j, k)] != 0.0 {
                acc += (plus[j].matrix() * minus[k].matrix()) * v[(j, k)];
            }
        }
    }
    ExteriorOperator::from_matrix(n, acc)
}

/// Largest 1-norm for which the exponential is attempted; beyond it the result
/// would overflow `f64` for some inputs and an error is returned instead.
pub const EXP_NORM_LIMIT: f64 = 700.0;

/// Computes `exp(X) − I` by scaling and squaring of a Taylor series.
///
/// Working with `F = exp(X) − I` avoids the cancellation that plagues
/// `exp(X) − I` for small `X` (the supertrace of `exp(sM)` is `O(sⁿ)` while its
/// entries are `O(1)`), and is accurate to a few ulps of `‖exp X‖` for
/// `‖X‖₁ ≤ 10`.
pub fn expm1_matrix(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Overflow("non-finite entry in exponent".into()));
    }
    let norm = one_norm(x);
    if norm > EXP_NORM_LIMIT {
        return Err(Error::Overflow(format!(
            "exponent 1-norm {norm:e} exceeds {EXP_NORM_LIMIT}"
        )));
    }
    let d = x.nrows();
    let mut squarings = 0u32;
    let mut scaled_norm = norm;
    while scaled_norm > 0.5 {
        scaled_norm *= 0.5;
        squarings += 1;
    }
    let y = x * 0.5f64.powi(squarings as i32);
    // Taylor series of e^Y − I.
    let mut term = y.clone();
    let mut f = y.clone();
    for k in 2..=40 {
        term = (&term * &y) / (k as f64);
        f += &term;
        if one_norm(&term) <= 1e-18 * one_norm(&f).max(f64::MIN_POSITIVE) {
            break;
        }
    }
    // e^{2Y} − I = (e^Y − I)² + 2(e^Y − I).
    for _ in 0..squarings {
        f = &f * &f + &f * 2.0;
    }
    if !f.iter().all(|v| v.is_finite()) {
        return Err(Error::Overflow("matrix exponential overflowed".into()));
    }
    debug_assert_eq!(f.nrows(), d);
    Ok(f)
}

/// Matrix exponential of a square matrix (see [`expm1_matrix`]).
pub fn expm_matrix(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut f = expm1_matrix(x)?;
    for i in 0..f.nrows() {
        f[(i, i)] += 1.0;
    }
    Ok(f)
}

/// Operator exponential `exp(op)`.
pub fn exp_operator(op: &ExteriorOperator) -> Result<ExteriorOperator> {
    ExteriorOperator::from_matrix(op.n(), expm_matrix(op.matrix())?)
}

/// `str exp(op)`, computed as `str I + str(exp(op) − I)` without cancellation.
///
/// `str I = 0`, so the result is exactly the supertrace of the expm1 part.
pub fn supertrace_exp(op: &ExteriorOperator) -> Result<f64> {
    let f = ExteriorOperator::from_matrix(op.n(), expm1_matrix(op.matrix())?)?;
    Ok(f.supertrace())
}

fn one_norm(x: &DMatrix<f64>) -> f64 {
    x.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_order_n2() {
        let b = Basis::new(2).unwrap();
        let forms: Vec<_> = (0..4).map(|k| b.form(k).indices().to_vec()).collect();
        assert_eq!(forms, vec![vec![], vec![1], vec![2], vec![1, 2]]);
        let b3 = Basis::new(3).unwrap();
        let f3: Vec<_> = (0..8).map(|k| b3.form(k).indices().to_vec()).collect();
        assert_eq!(f3[4..7].to_vec(), vec![vec![1, 2], vec![1, 3], vec![2, 3]]);
    }

    #[test]
    fn creation_n1() {
        let c = creation_exact(1, 1).unwrap();
        assert_eq!(c.matrix(), &DMatrix::from_row_slice(2, 2, &[0, 0, 1, 0]));
        let a = annihilation_exact(1, 1).unwrap();
        assert_eq!(a.matrix(), &DMatrix::from_row_slice(2, 2, &[0, 1, 0, 0]));
    }

    #[test]
    fn creation_n2_on_omega1() {
        let c = creation_exact(2, 2).unwrap();
        // ω₁ (position 1) ↦ +ω₁∧ω₂ (position 3)
        assert_eq!(c.matrix()[(3, 1)], 1);
        // ω₂ ↦ ω₂∧ω₁ = −ω₁∧ω₂
        let c1 = creation_exact(2, 1).unwrap();
        assert_eq!(c1.matrix()[(3, 2)], -1);
    }

    #[test]
    fn e_pm_n1() {
        assert_eq!(e_plus_exact(1, 1).unwrap().matrix(), &DMatrix::from_row_slice(2, 2, &[0, 1, 1, 0]));
        assert_eq!(
            e_minus_exact(1, 1).unwrap().matrix(),
            &DMatrix::from_row_slice(2, 2, &[0, -1, 1, 0])
        );
    }

    #[test]
    fn creation_nilpotent() {
        for n in 1..=5 {
            for j in 1..=n {
                let c = creation_exact(n, j).unwrap();
                assert!(c.compose(&c).matrix().iter().all(|&x| x == 0));
            }
        }
    }

    #[test]
    fn supertrace_examples() {
        assert_eq!(ExteriorOperator::<i64>::identity(2).unwrap().supertrace(), 0);
        let p = e_plus_exact(1, 1).unwrap();
        let m = e_minus_exact(1, 1).unwrap();
        assert_eq!(p.compose(&m).supertrace(), 2);
        let p1 = e_plus_exact(2, 1).unwrap();
        let m2 = e_minus_exact(2, 2).unwrap();
        assert_eq!(p1.compose(&m2).supertrace(), 0);
    }

    #[test]
    fn index_errors() {
        assert!(creation(2, 0).is_err());
        assert!(creation(2, 3).is_err());
        assert!(matches!(creation(9, 1), Err(Error::DimensionCap(_))));
    }

    #[test]
    fn exp_n1_diagonal() {
        let s = 0.37;
        let v = DMatrix::from_element(1, 1, 1.7);
        let m = bilinear_e_plus_e_minus(&(v * s)).unwrap();
        let e = exp_operator(&m).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[(s * 1.7f64).exp(), 0.0, 0.0, (-s * 1.7f64).exp()]);
        assert!((e.matrix() - expect).amax() < 1e-14);
    }

    #[test]
    fn exp_zero_is_identity() {
        let z = ExteriorOperator::zeros(3).unwrap();
        let e = exp_operator(&z).unwrap();
        assert_eq!(e.matrix(), &DMatrix::identity(8, 8));
    }

    #[test]
    fn exp_overflow_is_error() {
        let x = DMatrix::from_element(2, 2, 1e6);
        assert!(matches!(expm_matrix(&x), Err(Error::Overflow(_))));
        let y = DMatrix::from_element(2, 2, f64::NAN);
        assert!(expm_matrix(&y).is_err());
    }

    #[test]
    fn exp_matches_eigen_oracle_symmetric() {
        // Symmetric matrix: exp via eigendecomposition is an independent oracle.
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, -0.5, 2.0, -3.0, 0.7, -0.5, 0.7, 2.5]);
        let e = expm_matrix(&a).unwrap();
        let eig = a.clone().symmetric_eigen();
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::exp));
        let oracle = &eig.eigenvectors * d * eig.eigenvectors.transpose();
        assert!(((&e - &oracle).amax() / oracle.amax()) < 1e-12);
    }
}
