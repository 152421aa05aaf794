//! Complex dense linear algebra used by the precoder constructions.
//!
//! Conventions:
//! - `vec` stacks columns (column-major), so `vec(X Z Y) = (Yᵀ ⊗ X) vec(Z)`.
//! - Eigen/singular pairs are returned in descending order; ties keep the
//!   original index order.
//! - Returned eigen/singular vectors are phase-normalised: the first entry of
//!   largest modulus is made real and nonnegative.
//! - Positive definiteness is tested relative to the largest eigenvalue with
//!   [`PD_RELATIVE_THRESHOLD`]; below it the kernels fail instead of
//!   regularising.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::{CMatrix, CVector, Error, Real, Result, C};

/// Minimum eigenvalue, relative to the largest, for a matrix to count as PD.
pub const PD_RELATIVE_THRESHOLD: f64 = 1e-12;

/// Relative Frobenius deviation tolerated by Hermitian-only kernels in `f64`.
/// Scalars with a coarser epsilon get `1000·ε` instead.
pub const HERMITIAN_TOLERANCE: f64 = 1e-8;

fn hermitian_tolerance<T: Real>() -> T {
    T::lit(HERMITIAN_TOLERANCE).max(T::default_epsilon() * T::lit(1e3))
}

#[inline]
pub fn c<T: Real>(re: f64, im: f64) -> C<T> {
    C::new(T::lit(re), T::lit(im))
}

/// Builds a real-valued complex matrix from row-major data.
pub fn real_matrix<T: Real>(rows: usize, cols: usize, row_major: &[f64]) -> CMatrix<T> {
    assert_eq!(row_major.len(), rows * cols);
    CMatrix::from_fn(rows, cols, |i, j| c(row_major[i * cols + j], 0.0))
}

pub fn identity<T: Real>(n: usize) -> CMatrix<T> {
    CMatrix::identity(n, n)
}

pub fn diag_real<T: Real>(values: &[T]) -> CMatrix<T> {
    let mut m = CMatrix::zeros(values.len(), values.len());
    for (i, v) in values.iter().enumerate() {
        m[(i, i)] = C::new(*v, T::zero());
    }
    m
}

pub fn frobenius<T: Real>(m: &CMatrix<T>) -> T {
    m.iter()
        .fold(T::zero(), |acc, z| acc + z.norm_sqr())
        .sqrt()
}

pub fn frobenius_sq<T: Real>(m: &CMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr())
}

pub fn trace<T: Real>(m: &CMatrix<T>) -> C<T> {
    m.diagonal().iter().fold(C::new(T::zero(), T::zero()), |acc, z| acc + z)
}

pub fn ensure_finite<T: Real>(m: &CMatrix<T>) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// Relative Frobenius deviation of `m` from Hermitian symmetry.
pub fn hermitian_deviation<T: Real>(m: &CMatrix<T>) -> T {
    let scale = frobenius(m).max(T::one());
    frobenius(&(m - m.adjoint())) / scale
}

fn require_square<T: Real>(m: &CMatrix<T>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn require_hermitian<T: Real>(m: &CMatrix<T>) -> Result<CMatrix<T>> {
    require_square(m, "Hermitian operand")?;
    ensure_finite(m)?;
    let dev = hermitian_deviation(m);
    if dev > hermitian_tolerance::<T>() {
        return Err(Error::NotHermitian { deviation: dev.as_f64() });
    }
    Ok((m + m.adjoint()).scale(T::lit(0.5)))
}

/// Column-major vectorisation.
pub fn vec<T: Real>(m: &CMatrix<T>) -> CVector<T> {
    CVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec<T: Real>(v: &CVector<T>, rows: usize, cols: usize) -> Result<CMatrix<T>> {
    if v.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "cannot reshape length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(CMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// Kronecker product: block `(i, j)` of the result is `a[(i, j)] · b`.
pub fn kron<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> CMatrix<T> {
    a.kronecker(b)
}

/// Which subspace of `X` the projector annihilates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectorSide {
    /// `Q = I − Xᴴ(XXᴴ)⁻¹X`, so `X·Q = 0` (X is r×N).
    RowSpace,
    /// `Q = I − X(XᴴX)⁻¹Xᴴ`, so `Q·X = 0` (X is N×r).
    ColumnSpace,
}

/// Orthogonal projector onto the complement of the row or column space of `x`.
///
/// An `x` with no constraints (zero rows for `RowSpace`, zero columns for
/// `ColumnSpace`) gives the identity.
pub fn null_projector<T: Real>(x: &CMatrix<T>, side: ProjectorSide) -> Result<CMatrix<T>> {
    ensure_finite(x)?;
    // Work with the tall form X̂ (N×r) so both sides share one code path.
    let tall = match side {
        ProjectorSide::RowSpace => x.adjoint(),
        ProjectorSide::ColumnSpace => x.clone(),
    };
    let n = tall.nrows();
    if tall.ncols() == 0 {
        return Ok(identity(n));
    }
    if tall.ncols() > n {
        return Err(Error::Singular(format!(
            "{} constraints exceed ambient dimension {n}",
            tall.ncols()
        )));
    }
    // Orthonormal basis from the SVD rather than X(XᴴX)⁻¹Xᴴ, which squares
    // the condition number.
    let r = tall.ncols();
    let svd = tall.svd(true, false);
    let sv = &svd.singular_values;
    let (max, min) = (sv.max(), sv.min());
    if !(max > T::zero()) || min * min <= T::lit(PD_RELATIVE_THRESHOLD) * max * max {
        return Err(Error::Singular("rank-deficient constraint set".into()));
    }
    let u = svd.u.expect("requested left singular vectors").columns(0, r).into_owned();
    let q = identity::<T>(n) - &u * u.adjoint();
    Ok((&q + q.adjoint()).scale(T::lit(0.5)))
}

/// Hermitian eigendecomposition with descending eigenvalues.
#[derive(Clone, Debug)]
pub struct HermitianEvd<T: Real> {
    pub basis: CMatrix<T>,
    pub eigenvalues: Vec<T>,
}

impl<T: Real> HermitianEvd<T> {
    /// First `k` eigenvectors (the dominant rank basis).
    pub fn rank_basis(&self, k: usize) -> CMatrix<T> {
        self.basis.columns(0, k).into_owned()
    }

    pub fn reconstruct(&self) -> CMatrix<T> {
        &self.basis * diag_real(&self.eigenvalues) * self.basis.adjoint()
    }
}

/// Makes the first entry of largest modulus real and nonnegative.
pub fn normalize_phase<T: Real>(v: &mut CVector<T>) {
    let mut best = 0;
    let mut best_mod = T::zero();
    for (i, z) in v.iter().enumerate() {
        let m = z.norm_sqr();
        if m > best_mod {
            best = i;
            best_mod = m;
        }
    }
    if best_mod > T::zero() {
        let z = v[best];
        let phase = z.conj() / C::new(z.norm_sqr().sqrt(), T::zero());
        for x in v.iter_mut() {
            *x *= phase;
        }
    }
}

pub fn hermitian_evd<T: Real>(a: &CMatrix<T>) -> Result<HermitianEvd<T>> {
    let sym = require_hermitian(a)?;
    let n = sym.nrows();
    let eig: SymmetricEigen<C<T>, Dyn> = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps index order on ties
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut basis = CMatrix::zeros(n, n);
    let mut eigenvalues = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col: CVector<T> = eig.eigenvectors.column(src).into_owned();
        normalize_phase(&mut col);
        basis.set_column(dst, &col);
        eigenvalues.push(eig.eigenvalues[src]);
    }
    Ok(HermitianEvd { basis, eigenvalues })
}

fn require_pd<T: Real>(evd: &HermitianEvd<T>, what: &str) -> Result<()> {
    let max = evd.eigenvalues.first().copied().unwrap_or_else(T::zero);
    let min = evd.eigenvalues.last().copied().unwrap_or_else(T::zero);
    if max <= T::zero() || min <= T::lit(PD_RELATIVE_THRESHOLD) * max {
        return Err(Error::NotPositiveDefinite(format!(
            "{what}: eigenvalue range [{:e}, {:e}]",
            min.as_f64(),
            max.as_f64()
        )));
    }
    Ok(())
}

fn spectral_map<T: Real>(evd: &HermitianEvd<T>, f: impl Fn(T) -> T) -> CMatrix<T> {
    let mapped: Vec<T> = evd.eigenvalues.iter().map(|&l| f(l)).collect();
    let m = &evd.basis * diag_real(&mapped) * evd.basis.adjoint();
    (&m + m.adjoint()).scale(T::lit(0.5))
}

/// Inverse of a Hermitian positive definite matrix via its EVD.
pub fn inv_psd<T: Real>(a: &CMatrix<T>) -> Result<CMatrix<T>> {
    let evd = hermitian_evd(a)?;
    require_pd(&evd, "inverse")?;
    Ok(spectral_map(&evd, |l| T::one() / l))
}

/// Hermitian `B = A^(-1/2)` for Hermitian positive definite `A`.
pub fn inv_sqrt_psd<T: Real>(a: &CMatrix<T>) -> Result<CMatrix<T>> {
    let evd = hermitian_evd(a)?;
    require_pd(&evd, "inverse square root")?;
    Ok(spectral_map(&evd, |l| T::one() / l.sqrt()))
}

/// Unit-norm `u` maximising `‖A u‖₂`, together with the largest singular value.
pub fn dominant_right_singular_vector<T: Real>(a: &CMatrix<T>) -> Result<(CVector<T>, T)> {
    ensure_finite(a)?;
    if a.is_empty() || frobenius(a) == T::zero() {
        return Err(Error::ZeroMatrix);
    }
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut best = 0;
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > svd.singular_values[best] {
            best = i;
        }
    }
    let mut u: CVector<T> = v_t.row(best).adjoint();
    let nrm = u.norm();
    u.unscale_mut(nrm);
    normalize_phase(&mut u);
    Ok((u, svd.singular_values[best]))
}

/// Generalised Rayleigh quotient `(dᴴ A d) / (dᴴ B d)`.
pub fn rayleigh_quotient<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>, d: &CVector<T>) -> T {
    let num = (d.adjoint() * a * d)[(0, 0)].re;
    let den = (d.adjoint() * b * d)[(0, 0)].re;
    num / den
}

#[derive(Clone, Debug)]
pub struct GeneralizedEigenpair<T: Real> {
    /// Unit 2-norm maximiser of the quotient.
    pub vector: CVector<T>,
    /// Maximal quotient value.
    pub value: T,
}

/// Dominant eigenvector of `B⁻¹A` for Hermitian PSD `A` and Hermitian PD `B`.
///
/// Solved through the Cholesky whitening `B = LLᴴ`: the dominant eigenvector
/// `y` of `L⁻¹AL⁻ᴴ` maps back to `d = L⁻ᴴy`.
pub fn dominant_generalized_eigenvector<T: Real>(
    a: &CMatrix<T>,
    b: &CMatrix<T>,
) -> Result<GeneralizedEigenpair<T>> {
    let a = require_hermitian(a)?;
    let b = require_hermitian(b)?;
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "pencil operands {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    require_pd(&hermitian_evd(&b)?, "generalized eigenproblem metric")?;
    let chol = Cholesky::new(b.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorisation failed".into()))?;
    let l = chol.l();
    let l_inv_a = l
        .solve_lower_triangular(&a)
        .ok_or_else(|| Error::Singular("Cholesky factor".into()))?;
    let whitened = l
        .solve_lower_triangular(&l_inv_a.adjoint())
        .ok_or_else(|| Error::Singular("Cholesky factor".into()))?;
    let whitened = (&whitened + whitened.adjoint()).scale(T::lit(0.5));
    let evd = hermitian_evd(&whitened)?;
    let y: CVector<T> = evd.basis.column(0).into_owned();
    let mut d = l
        .adjoint()
        .solve_upper_triangular(&y)
        .ok_or_else(|| Error::Singular("Cholesky factor".into()))?;
    let nrm = d.norm();
    d.unscale_mut(nrm);
    normalize_phase(&mut d);
    let value = rayleigh_quotient(&a, &b, &d);
    Ok(GeneralizedEigenpair { vector: d, value })
}

/// `log₂ det(A)` for Hermitian positive definite `A`.
pub fn log2_det_hpd<T: Real>(a: &CMatrix<T>) -> Result<T> {
    let sym = require_hermitian(a)?;
    let chol = Cholesky::new(sym)
        .ok_or_else(|| Error::NotPositiveDefinite("log-determinant operand".into()))?;
    let l = chol.l();
    let ln_det = l
        .diagonal()
        .iter()
        .fold(T::zero(), |acc, z| acc + z.re.ln())
        * T::lit(2.0);
    Ok(ln_det / T::lit(std::f64::consts::LN_2))
}

/// Singular values of a general complex matrix, descending.
pub fn singular_values<T: Real>(a: &CMatrix<T>) -> Vec<T> {
    let mut s: Vec<T> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    s
}

/// 2-norm condition number; infinite for singular input.
pub fn condition_number<T: Real>(a: &CMatrix<T>) -> T {
    let s = singular_values(a);
    match (s.first(), s.last()) {
        (Some(&max), Some(&min)) if min > T::zero() => max / min,
        _ => T::max_value().unwrap_or_else(|| T::lit(f64::MAX)),
    }
}

/// General inverse via LU.
pub fn inverse<T: Real>(a: &CMatrix<T>) -> Result<CMatrix<T>> {
    require_square(a, "inverse operand")?;
    a.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("LU inverse".into()))
}

/// Column-stacks `blocks` horizontally.
pub fn hstack<T: Real>(blocks: &[CMatrix<T>]) -> Result<CMatrix<T>> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    if blocks.iter().any(|b| b.nrows() != rows) {
        return Err(Error::DimensionMismatch("hstack row counts differ".into()));
    }
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((0, at), (rows, b.ncols())).copy_from(b);
        at += b.ncols();
    }
    Ok(out)
}

/// Stacks `blocks` vertically.
pub fn vstack<T: Real>(blocks: &[CMatrix<T>]) -> Result<CMatrix<T>> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    if blocks.iter().any(|b| b.ncols() != cols) {
        return Err(Error::DimensionMismatch("vstack column counts differ".into()));
    }
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, 0), (b.nrows(), cols)).copy_from(b);
        at += b.nrows();
    }
    Ok(out)
}

/// Real vector of eigenvalues as an nalgebra vector (used by tests/diagnostics).
pub fn to_dvector<T: Real>(values: &[T]) -> DVector<T> {
    DVector::from_column_slice(values)
}

/// Real matrix view of the absolute values, handy for debugging output.
pub fn abs_matrix<T: Real>(m: &CMatrix<T>) -> DMatrix<T> {
    m.map(|z| z.norm_sqr().sqrt())
}
