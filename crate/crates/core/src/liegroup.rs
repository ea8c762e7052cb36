//! Matrix Lie-group primitives for SO(n) and so(n).
//!
//! Rotations are stored as dense `n x n` matrices; `n` is small (2-4 in all
//! scenarios here, at most 16 supported comfortably).

use std::ops::Mul;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tol;

/// An element of SO(n).
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation(DMatrix<f64>);

/// An element of so(n), stored exactly antisymmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewMatrix(DMatrix<f64>);

impl Rotation {
    pub fn identity(n: usize) -> Self {
        Rotation(DMatrix::identity(n, n))
    }

    /// Wraps `m` after checking `m^T m = I` and `det m = 1` to [`tol::INVARIANT`].
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::dim(format!("rotation must be square, got {}x{}", m.nrows(), m.ncols())));
        }
        let r = Rotation(m);
        let ortho = r.orthogonality_residual();
        if ortho > tol::INVARIANT {
            return Err(Error::domain(format!("matrix is not orthogonal (residual {ortho:.3e})")));
        }
        let det = r.0.determinant();
        if (det - 1.0).abs() > tol::INVARIANT {
            return Err(Error::domain(format!("determinant {det} is not +1")));
        }
        Ok(r)
    }

    /// Wraps `m` without validation. Callers guarantee it is a rotation.
    pub fn from_matrix_unchecked(m: DMatrix<f64>) -> Self {
        Rotation(m)
    }

    /// Builds a rotation from row-major entries.
    pub fn from_rows(n: usize, rows: &[f64]) -> Result<Self> {
        if rows.len() != n * n {
            return Err(Error::dim(format!("expected {} entries, got {}", n * n, rows.len())));
        }
        Self::from_matrix(DMatrix::from_row_slice(n, n, rows))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    /// `Q exp(X)`, the geodesic step along the left-trivialized direction `X`.
    pub fn step(&self, x: &SkewMatrix) -> Rotation {
        Rotation(&self.0 * exp_skew(x).0)
    }

    /// Frobenius norm of `Q^T Q - I`.
    pub fn orthogonality_residual(&self) -> f64 {
        let n = self.dim();
        (self.0.transpose() * &self.0 - DMatrix::<f64>::identity(n, n)).norm()
    }

    /// Frobenius distance to another rotation (chordal metric).
    pub fn chordal_distance(&self, other: &Rotation) -> f64 {
        (&self.0 - &other.0).norm()
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;

    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(&self.0 * &rhs.0)
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl SkewMatrix {
    pub fn zeros(n: usize) -> Self {
        SkewMatrix(DMatrix::zeros(n, n))
    }

    /// Accepts a matrix that is antisymmetric to [`tol::CONSTRUCTION`] and
    /// stores its exact skew part.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        let sk = skew_part(&m)?;
        let sym = (&m + m.transpose()).norm() * 0.5;
        if sym > tol::CONSTRUCTION * m.norm().max(1.0) {
            return Err(Error::domain(format!("matrix is not skew-symmetric (symmetric part {sym:.3e})")));
        }
        Ok(sk)
    }

    /// The matrix `[w]_x` with `[w]_x v = w x v`.
    pub fn hat3(w: [f64; 3]) -> Self {
        let [a, b, c] = w;
        SkewMatrix(DMatrix::from_row_slice(3, 3, &[0.0, -c, b, c, 0.0, -a, -b, a, 0.0]))
    }

    /// Linear combination `sum_a coeffs[a] * basis[a]`.
    pub fn from_coefficients(basis: &[SkewMatrix], coeffs: &[f64]) -> Result<Self> {
        if basis.len() != coeffs.len() || basis.is_empty() {
            return Err(Error::dim("coefficient count must match a non-empty basis"));
        }
        let n = basis[0].dim();
        let mut acc = DMatrix::zeros(n, n);
        for (b, &c) in basis.iter().zip(coeffs) {
            acc += &b.0 * c;
        }
        Ok(SkewMatrix(acc))
    }

    /// Coefficients in an orthonormal basis under `<A, B> = tr(A^T B)`.
    pub fn coefficients(&self, basis: &[SkewMatrix]) -> Vec<f64> {
        basis.iter().map(|b| b.0.dot(&self.0)).collect()
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn scale(&self, s: f64) -> SkewMatrix {
        SkewMatrix(&self.0 * s)
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn add(&self, other: &SkewMatrix) -> SkewMatrix {
        SkewMatrix(&self.0 + &other.0)
    }

    pub(crate) fn add_scaled_assign(&mut self, other: &SkewMatrix, s: f64) {
        self.0 += &other.0 * s;
    }

    pub(crate) fn from_raw_antisymmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SkewMatrix((m - t) * 0.5)
    }
}

/// `sk(M) = (M - M^T) / 2`.
pub fn skew_part(m: &DMatrix<f64>) -> Result<SkewMatrix> {
    if !m.is_square() {
        return Err(Error::dim(format!("skew part of a non-square {}x{} matrix", m.nrows(), m.ncols())));
    }
    Ok(SkewMatrix::from_raw_antisymmetrized(m.clone()))
}

/// Matrix exponential of a skew matrix.
///
/// Closed forms for n = 2 and n = 3; scaling and squaring with a Taylor
/// kernel otherwise.
pub fn exp_skew(x: &SkewMatrix) -> Rotation {
    let m = &x.0;
    match x.dim() {
        0 => Rotation(DMatrix::zeros(0, 0)),
        1 => Rotation(DMatrix::identity(1, 1)),
        2 => {
            let a = m[(0, 1)];
            let (s, c) = a.sin_cos();
            Rotation(DMatrix::from_row_slice(2, 2, &[c, s, -s, c]))
        }
        3 => {
            let w = [m[(2, 1)], m[(0, 2)], m[(1, 0)]];
            let theta2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
            let theta = theta2.sqrt();
            let (a, b) = if theta < 1e-4 {
                // Taylor coefficients of sin(t)/t and (1 - cos t)/t^2.
                (
                    1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
                    0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
                )
            } else {
                (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
            };
            let m2 = m * m;
            Rotation(DMatrix::identity(3, 3) + m * a + m2 * b)
        }
        n => Rotation(expm_scaled_taylor(m, n)),
    }
}

fn expm_scaled_taylor(m: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let norm1 = (0..n).map(|j| m.column(j).abs().sum()).fold(0.0, f64::max);
    let squarings = if norm1 > 0.25 { (norm1 / 0.25).log2().ceil() as i32 } else { 0 };
    let scaled = m / 2f64.powi(squarings);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut acc = term.clone();
    for j in 1..=30 {
        term = &term * &scaled / j as f64;
        acc += &term;
        if term.norm() < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        acc = &acc * &acc;
    }
    acc
}

/// Nearest rotation in Frobenius norm (special orthogonal Procrustes).
///
/// Fails when `m` is numerically rank deficient, where the minimizer is not
/// unique.
pub fn project_to_rotation(m: &DMatrix<f64>) -> Result<Rotation> {
    if !m.is_square() {
        return Err(Error::dim(format!("cannot project a {}x{} matrix onto SO(n)", m.nrows(), m.ncols())));
    }
    let (q, degenerate) = project_to_rotation_flagged(m);
    if degenerate {
        return Err(Error::Singular("matrix is rank deficient; nearest rotation is not unique".into()));
    }
    Ok(q)
}

/// Projection that always returns a rotation and reports whether the input
/// was rank deficient.
pub(crate) fn project_to_rotation_flagged(m: &DMatrix<f64>) -> (Rotation, bool) {
    let n = m.nrows();
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd requested U");
    let v_t = svd.v_t.expect("svd requested V^T");
    let sv = &svd.singular_values;
    let smax = sv.max();
    let (imin, smin) = sv.argmin();
    let degenerate = smax == 0.0 || smin <= tol::RANK_RELATIVE * smax;
    let det = (&u * &v_t).determinant();
    let mut d = DVector::from_element(n, 1.0);
    if det < 0.0 {
        d[imin] = -1.0;
    }
    let q = &u * DMatrix::from_diagonal(&d) * &v_t;
    (Rotation(q), degenerate)
}

/// Orthonormal basis `(E_ab - E_ba)/sqrt(2)`, `a < b` in lexicographic order.
pub fn so_basis(n: usize) -> Result<Vec<SkewMatrix>> {
    if n < 2 {
        return Err(Error::domain(format!("so(n) basis needs n >= 2, got {n}")));
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut basis = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        for b in (a + 1)..n {
            let mut m = DMatrix::zeros(n, n);
            m[(a, b)] = s;
            m[(b, a)] = -s;
            basis.push(SkewMatrix(m));
        }
    }
    Ok(basis)
}

/// Right-hand rotation by `theta` about the unit axis `y` (Rodrigues).
pub fn rotation_about_axis(y: &[f64; 3], theta: f64) -> Result<Rotation> {
    let norm = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
    if (norm - 1.0).abs() > tol::CONSTRUCTION {
        return Err(Error::domain(format!("rotation axis must be a unit vector (norm {norm})")));
    }
    let k = SkewMatrix::hat3(*y);
    let (s, c) = theta.sin_cos();
    let k2 = &k.0 * &k.0;
    Ok(Rotation(DMatrix::identity(3, 3) + &k.0 * s + k2 * (1.0 - c)))
}

/// Haar-distributed rotation drawn from `rng`.
pub fn sample_rotation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Rotation {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    Rotation(q)
}

/// Haar-distributed rotation, deterministic in `seed`.
pub fn random_rotation(n: usize, seed: u64) -> Result<Rotation> {
    if n < 2 {
        return Err(Error::domain(format!("random rotation needs n >= 2, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_rotation(n, &mut rng))
}

/// Random skew matrix with i.i.d. standard normal coefficients in the
/// orthonormal basis.
pub fn sample_skew<R: Rng + ?Sized>(n: usize, rng: &mut R) -> SkewMatrix {
    let mut m = DMatrix::zeros(n, n);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for a in 0..n {
        for b in (a + 1)..n {
            let c: f64 = rng.sample(StandardNormal);
            m[(a, b)] = c * s;
            m[(b, a)] = -c * s;
        }
    }
    SkewMatrix(m)
}

/// Rotation `R` with `||R - I||_F = magnitude` about a uniformly random axis
/// (n = 3 only).
pub fn sample_rotation_at_distance<R: Rng + ?Sized>(magnitude: f64, rng: &mut R) -> Result<Rotation> {
    let max = 2.0 * std::f64::consts::SQRT_2;
    if !(0.0..=max).contains(&magnitude) {
        return Err(Error::domain(format!("chordal distance {magnitude} outside [0, 2 sqrt 2]")));
    }
    // ||R(phi) - I||_F = 2 sqrt(2) |sin(phi / 2)|
    let phi = 2.0 * (magnitude / max).asin();
    let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let axis = [v[0] / norm, v[1] / norm, v[2] / norm];
    rotation_about_axis(&axis, phi)
}
