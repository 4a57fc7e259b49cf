//! Dense linear-algebra helpers shared by the estimation modules.
//!
//! `vecs` stacks the upper triangle of a symmetric matrix column by column:
//! for `p = 3` the order is `(m00, m01, m11, m02, m12, m22)`.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Relative asymmetry tolerated by [`SymMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Relative residual `‖Sx − b‖ / ‖b‖` guaranteed by [`solve_pd`].
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-10;

/// A square matrix whose entries are exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Accepts `m` if its relative asymmetry is at most [`SYMMETRY_TOL`], then
    /// averages the two triangles so the stored entries are exactly symmetric.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(m, SYMMETRY_TOL)
    }

    pub fn with_tolerance(m: DMatrix<f64>, tol: f64) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let asym = relative_asymmetry(&m);
        if !(asym <= tol) {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        Ok(Self::symmetrize(m))
    }

    /// Builds `(m + mᵀ)/2` without any tolerance check.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn identity(p: usize) -> Self {
        SymMatrix(DMatrix::identity(p, p))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }
}

fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax();
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..j {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Half-vectorization of a symmetric `p×p` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct VecsVector {
    p: usize,
    data: DVector<f64>,
}

impl VecsVector {
    pub fn new(data: DVector<f64>) -> Result<Self> {
        let p = triangular_root(data.len()).ok_or(Error::NotTriangular(data.len()))?;
        Ok(VecsVector { p, data })
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(v))
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn data(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn into_data(self) -> DVector<f64> {
        self.data
    }
}

/// `p(p+1)/2`.
pub fn vecs_len(p: usize) -> usize {
    p * (p + 1) / 2
}

/// Position of entry `(i, j)` (either triangle) in the `vecs` ordering.
pub fn vecs_index(i: usize, j: usize) -> usize {
    let (r, c) = if i <= j { (i, j) } else { (j, i) };
    c * (c + 1) / 2 + r
}

fn triangular_root(len: usize) -> Option<usize> {
    let mut p = 0usize;
    while vecs_len(p) < len {
        p += 1;
    }
    (vecs_len(p) == len && p > 0).then_some(p)
}

pub fn vecs(m: &SymMatrix) -> VecsVector {
    let p = m.dim();
    let mut data = DVector::zeros(vecs_len(p));
    let mut k = 0;
    for j in 0..p {
        for i in 0..=j {
            data[k] = m.get(i, j);
            k += 1;
        }
    }
    VecsVector { p, data }
}

/// `vecs` of an arbitrary square matrix, reading only its upper triangle.
pub fn vecs_upper(m: &DMatrix<f64>) -> DVector<f64> {
    let p = m.nrows();
    let mut data = DVector::zeros(vecs_len(p));
    let mut k = 0;
    for j in 0..p {
        for i in 0..=j {
            data[k] = m[(i, j)];
            k += 1;
        }
    }
    data
}

pub fn unvecs(v: &VecsVector) -> SymMatrix {
    let p = v.p;
    let mut m = DMatrix::zeros(p, p);
    let mut k = 0;
    for j in 0..p {
        for i in 0..=j {
            m[(i, j)] = v.data[k];
            m[(j, i)] = v.data[k];
            k += 1;
        }
    }
    SymMatrix(m)
}

/// Duplication matrix `D` with `vec(M) = D · vecs(M)` for the `vecs` order above.
pub fn duplication_matrix(p: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(p * p, vecs_len(p));
    for j in 0..p {
        for i in 0..p {
            d[(j * p + i, vecs_index(i, j))] = 1.0;
        }
    }
    d
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Kronecker product of two vectors, `x ⊗ y`.
pub fn kron_vec(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().flat_map(|&a| y.iter().map(move |&b| a * b)).collect()
}

/// Smallest and largest eigenvalues of a symmetric matrix.
pub fn eigen_bounds(s: &SymMatrix) -> (f64, f64) {
    let eig = s.as_matrix().clone().symmetric_eigen();
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    (lo, hi)
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
///
/// Fails with [`Error::IllConditioned`] carrying the smallest pivot seen.
pub fn cholesky(s: &SymMatrix) -> Result<DMatrix<f64>> {
    cholesky_raw(s.as_matrix())
}

pub(crate) fn cholesky_raw(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = a.nrows();
    let mut l = DMatrix::zeros(p, p);
    let scale = (0..p).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let floor = scale * f64::EPSILON * p as f64;
    for j in 0..p {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > floor) {
            return Err(Error::IllConditioned { min_pivot: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..p {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

fn forward_back(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let p = l.nrows();
    let mut y = b.clone();
    for i in 0..p {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in (i + 1)..p {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Solves `S x = b` for positive definite `S` via Cholesky.
pub fn solve_pd(s: &SymMatrix, b: &DVector<f64>) -> Result<DVector<f64>> {
    if b.len() != s.dim() {
        return Err(Error::DimensionMismatch(format!("rhs length {} for a {}x{} system", b.len(), s.dim(), s.dim())));
    }
    let l = cholesky(s)?;
    Ok(forward_back(&l, b))
}

/// Solves `S X = B` column by column.
pub fn solve_pd_matrix(s: &SymMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.nrows() != s.dim() {
        return Err(Error::DimensionMismatch(format!(
            "rhs has {} rows for a {}x{} system",
            b.nrows(),
            s.dim(),
            s.dim()
        )));
    }
    let l = cholesky(s)?;
    let mut out = DMatrix::zeros(b.nrows(), b.ncols());
    for c in 0..b.ncols() {
        let x = forward_back(&l, &b.column(c).into_owned());
        out.set_column(c, &x);
    }
    Ok(out)
}

pub fn inverse_pd(s: &SymMatrix) -> Result<SymMatrix> {
    let inv = solve_pd_matrix(s, &DMatrix::identity(s.dim(), s.dim()))?;
    Ok(SymMatrix::symmetrize(inv))
}

/// `log |S|` for positive definite `S`.
pub fn log_det_pd(s: &SymMatrix) -> Result<f64> {
    let l = cholesky(s)?;
    Ok(2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
}
