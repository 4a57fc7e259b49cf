//! Recursive structural equation models without latent variables,
//!
//! ```text
//! Y = B Y + Γ X + ε,   Cov(X) = Φ,   Cov(ε) = Ψ (diagonal),
//! ```
//!
//! with `B` strictly lower triangular. The implied covariance of
//! `Z = (Yᵀ, Xᵀ)ᵀ` is
//!
//! ```text
//! Σ_yy = A⁻¹(ΓΦΓᵀ + Ψ)A⁻ᵀ,  Σ_yx = A⁻¹ΓΦ,  Σ_xx = Φ,   A = I − B.
//! ```
//!
//! `Φ` is parameterised by its lower Cholesky factor `L` (`Φ = LLᵀ`).

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::el::ElSolution;
use crate::numkit::{vecs, vecs_len, SymMatrix};
use crate::{Error, Result};

/// Where a free parameter lives in the model matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    /// `B[i, j]`, `i > j`.
    B(usize, usize),
    /// `Γ[i, j]`.
    Gamma(usize, usize),
    /// `Ψ[i, i]`.
    Psi(usize),
    /// Cholesky factor entry `L[i, j]` of `Φ`, `i ≥ j`.
    PhiChol(usize, usize),
}

impl Target {
    /// Entries that must stay positive (variances and Cholesky diagonals).
    pub fn is_positive(&self) -> bool {
        matches!(self, Target::Psi(_)) || matches!(self, Target::PhiChol(i, j) if i == j)
    }

    pub fn is_coefficient(&self) -> bool {
        matches!(self, Target::B(..) | Target::Gamma(..))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreeParam {
    pub label: String,
    pub target: Target,
}

/// Model matrices `(B, Γ, Ψ diagonal, L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMatrices {
    pub b: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub psi: DVector<f64>,
    pub phi_chol: DMatrix<f64>,
}

impl ModelMatrices {
    pub fn zeros(d: usize, c: usize) -> Self {
        ModelMatrices {
            b: DMatrix::zeros(d, d),
            gamma: DMatrix::zeros(d, c),
            psi: DVector::zeros(d),
            phi_chol: DMatrix::zeros(c, c),
        }
    }

    pub fn phi(&self) -> DMatrix<f64> {
        &self.phi_chol * self.phi_chol.transpose()
    }

    fn get(&self, t: Target) -> f64 {
        match t {
            Target::B(i, j) => self.b[(i, j)],
            Target::Gamma(i, j) => self.gamma[(i, j)],
            Target::Psi(i) => self.psi[i],
            Target::PhiChol(i, j) => self.phi_chol[(i, j)],
        }
    }

    fn set(&mut self, t: Target, v: f64) {
        match t {
            Target::B(i, j) => self.b[(i, j)] = v,
            Target::Gamma(i, j) => self.gamma[(i, j)] = v,
            Target::Psi(i) => self.psi[i] = v,
            Target::PhiChol(i, j) => self.phi_chol[(i, j)] = v,
        }
    }
}

/// Model topology: which entries are free (and in which order they are
/// packed into `θ`) plus the values of the fixed entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SemSpec {
    d: usize,
    c: usize,
    fixed: ModelMatrices,
    free: Vec<FreeParam>,
}

impl SemSpec {
    /// `fixed` supplies every entry not listed in `free`.
    pub fn new(d: usize, c: usize, fixed: ModelMatrices, free: Vec<FreeParam>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidInput("need at least one endogenous variable".into()));
        }
        let shape_ok = fixed.b.shape() == (d, d)
            && fixed.gamma.shape() == (d, c)
            && fixed.psi.len() == d
            && fixed.phi_chol.shape() == (c, c);
        if !shape_ok {
            return Err(Error::DimensionMismatch("fixed matrices do not match (d, c)".into()));
        }
        for i in 0..d {
            for j in i..d {
                if fixed.b[(i, j)] != 0.0 {
                    return Err(Error::InvalidInput("B must be strictly lower triangular".into()));
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        for fp in &free {
            let ok = match fp.target {
                Target::B(i, j) => i < d && j < i,
                Target::Gamma(i, j) => i < d && j < c,
                Target::Psi(i) => i < d,
                Target::PhiChol(i, j) => i < c && j <= i,
            };
            if !ok {
                return Err(Error::InvalidInput(format!("parameter {} has an invalid position", fp.label)));
            }
            if !seen.insert(fp.target) {
                return Err(Error::InvalidInput(format!("parameter {} is listed twice", fp.label)));
            }
        }
        if free.len() > vecs_len(d + c) {
            return Err(Error::InvalidInput(format!(
                "{} free parameters exceed the {} distinct covariances",
                free.len(),
                vecs_len(d + c)
            )));
        }
        Ok(SemSpec { d, c, fixed, free })
    }

    /// The two-equation model
    ///
    /// ```text
    /// y1 = λ1 x2 + ε1
    /// y2 = β y1 + λ3 x1 + λ2 x2 + ε2
    /// ```
    ///
    /// with `θ = (β, λ1, λ2, λ3, ψ1, ψ2, L11, L21, L22)`. With `fix_beta`
    /// the coefficient `β` is held at 1 and dropped from `θ`.
    pub fn two_equation(fix_beta: bool) -> Self {
        let mut fixed = ModelMatrices::zeros(2, 2);
        let mut free = Vec::new();
        let mut push = |label: &str, target| free.push(FreeParam { label: label.into(), target });
        if fix_beta {
            fixed.b[(1, 0)] = 1.0;
        } else {
            push("beta", Target::B(1, 0));
        }
        push("lambda1", Target::Gamma(0, 1));
        push("lambda2", Target::Gamma(1, 1));
        push("lambda3", Target::Gamma(1, 0));
        push("psi1", Target::Psi(0));
        push("psi2", Target::Psi(1));
        push("phi_l11", Target::PhiChol(0, 0));
        push("phi_l21", Target::PhiChol(1, 0));
        push("phi_l22", Target::PhiChol(1, 1));
        SemSpec::new(2, 2, fixed, free).expect("valid built-in model")
    }

    /// Same model with the free parameters listed in a different order.
    pub fn with_order(&self, order: &[usize]) -> Result<Self> {
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.q()).collect::<Vec<_>>() {
            return Err(Error::InvalidInput("order must be a permutation of the parameters".into()));
        }
        let free = order.iter().map(|&k| self.free[k].clone()).collect();
        SemSpec::new(self.d, self.c, self.fixed.clone(), free)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn p(&self) -> usize {
        self.d + self.c
    }

    pub fn q(&self) -> usize {
        self.free.len()
    }

    pub fn free(&self) -> &[FreeParam] {
        &self.free
    }

    pub fn fixed(&self) -> &ModelMatrices {
        &self.fixed
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.free.iter().position(|f| f.label == label)
    }

    pub fn labels(&self) -> Vec<&str> {
        self.free.iter().map(|f| f.label.as_str()).collect()
    }

    pub fn unpack(&self, params: &SemParams) -> ModelMatrices {
        let mut mats = self.fixed.clone();
        for (fp, &v) in self.free.iter().zip(params.theta.iter()) {
            mats.set(fp.target, v);
        }
        mats
    }

    /// Reads the free entries out of full model matrices.
    pub fn pack(&self, mats: &ModelMatrices) -> SemParams {
        SemParams { theta: DVector::from_iterator(self.q(), self.free.iter().map(|fp| mats.get(fp.target))) }
    }
}

/// Parameter vector `θ` in the order of [`SemSpec::free`].
#[derive(Debug, Clone, PartialEq)]
pub struct SemParams {
    pub theta: DVector<f64>,
}

impl SemParams {
    pub fn new(spec: &SemSpec, theta: DVector<f64>) -> Result<Self> {
        if theta.len() != spec.q() {
            return Err(Error::DimensionMismatch(format!("theta has {} entries, model has {}", theta.len(), spec.q())));
        }
        Ok(SemParams { theta })
    }

    pub fn get(&self, spec: &SemSpec, label: &str) -> Option<f64> {
        spec.index_of(label).map(|k| self.theta[k])
    }

    /// Variances strictly positive and `Φ` positive definite.
    pub fn is_interior(&self, spec: &SemSpec) -> bool {
        let m = spec.unpack(self);
        m.psi.iter().all(|&v| v > 0.0) && (0..spec.c()).all(|i| m.phi_chol[(i, i)] != 0.0)
    }
}

fn a_inverse(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = b.nrows();
    let a = DMatrix::identity(d, d) - b;
    a.try_inverse().ok_or(Error::SingularA)
}

pub fn structured_sigma(spec: &SemSpec, params: &SemParams) -> Result<SymMatrix> {
    structured_sigma_of(spec, &spec.unpack(params))
}

pub fn structured_sigma_of(spec: &SemSpec, mats: &ModelMatrices) -> Result<SymMatrix> {
    let (d, c) = (spec.d(), spec.c());
    let ainv = a_inverse(&mats.b)?;
    let phi = mats.phi();
    let gphi = &mats.gamma * &phi;
    let inner = &gphi * mats.gamma.transpose() + DMatrix::from_diagonal(&mats.psi);
    let syy = &ainv * inner * ainv.transpose();
    let syx = &ainv * gphi;
    let mut sigma = DMatrix::zeros(d + c, d + c);
    sigma.view_mut((0, 0), (d, d)).copy_from(&syy);
    sigma.view_mut((0, d), (d, c)).copy_from(&syx);
    sigma.view_mut((d, 0), (c, d)).copy_from(&syx.transpose());
    sigma.view_mut((d, d), (c, c)).copy_from(&phi);
    Ok(SymMatrix::symmetrize(sigma))
}

/// Relative singular-value threshold used for the rank of `Δ(θ)`.
pub const RANK_TOL: f64 = 1e-8;

/// `∂ vecs Σ(θ) / ∂θᵀ` by central differences with step `1e-6·max(1, |θ_k|)`.
pub fn jacobian_delta(spec: &SemSpec, params: &SemParams) -> Result<DMatrix<f64>> {
    let delta = jacobian_unchecked(spec, params)?;
    let q = spec.q();
    let rank = numerical_rank(&delta);
    if rank < q {
        return Err(Error::NotLocallyIdentified { rank, q });
    }
    Ok(delta)
}

pub(crate) fn jacobian_unchecked(spec: &SemSpec, params: &SemParams) -> Result<DMatrix<f64>> {
    let q = spec.q();
    let mut delta = DMatrix::zeros(vecs_len(spec.p()), q);
    for k in 0..q {
        let h = 1e-6 * params.theta[k].abs().max(1.0);
        let mut up = params.clone();
        up.theta[k] += h;
        let mut down = params.clone();
        down.theta[k] -= h;
        let col = (vecs(&structured_sigma(spec, &up)?).into_data() - vecs(&structured_sigma(spec, &down)?).into_data())
            / (2.0 * h);
        delta.set_column(k, &col);
    }
    Ok(delta)
}

/// Closed-form `∂ vecs Σ(θ) / ∂θᵀ`, accurate to rounding; used by the
/// optimizer where the difference quotient's `ε/h` error would dominate.
pub fn jacobian_analytic(spec: &SemSpec, params: &SemParams) -> Result<DMatrix<f64>> {
    let (d, c) = (spec.d(), spec.c());
    let mats = spec.unpack(params);
    let ainv = a_inverse(&mats.b)?;
    let phi = mats.phi();
    let sigma = structured_sigma_of(spec, &mats)?.into_matrix();
    let syy = sigma.view((0, 0), (d, d)).into_owned();
    let syx = sigma.view((0, d), (d, c)).into_owned();
    let mut delta = DMatrix::zeros(vecs_len(d + c), spec.q());
    for (k, fp) in spec.free().iter().enumerate() {
        let (dyy, dyx, dxx) = match fp.target {
            Target::B(i, j) => {
                let mut e = DMatrix::zeros(d, d);
                e[(i, j)] = 1.0;
                let t = &ainv * e;
                let dyy = &t * &syy;
                (&dyy + dyy.transpose(), &t * &syx, DMatrix::zeros(c, c))
            }
            Target::Gamma(i, j) => {
                let mut e = DMatrix::zeros(d, c);
                e[(i, j)] = 1.0;
                let t = &ainv * e * &phi;
                let dyy = &t * mats.gamma.transpose() * ainv.transpose();
                (&dyy + dyy.transpose(), t, DMatrix::zeros(c, c))
            }
            Target::Psi(i) => {
                let col = ainv.column(i);
                (col * col.transpose(), DMatrix::zeros(d, c), DMatrix::zeros(c, c))
            }
            Target::PhiChol(i, j) => {
                let mut e = DMatrix::zeros(c, c);
                e[(i, j)] = 1.0;
                let t = e * mats.phi_chol.transpose();
                let dphi = &t + t.transpose();
                let ag = &ainv * &mats.gamma;
                (&ag * &dphi * ag.transpose(), &ag * &dphi, dphi)
            }
        };
        let mut full = DMatrix::zeros(d + c, d + c);
        full.view_mut((0, 0), (d, d)).copy_from(&dyy);
        full.view_mut((0, d), (d, c)).copy_from(&dyx);
        full.view_mut((d, 0), (c, d)).copy_from(&dyx.transpose());
        full.view_mut((d, d), (c, c)).copy_from(&dxx);
        delta.set_column(k, &crate::numkit::vecs_upper(&full));
    }
    Ok(delta)
}

pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.singular_values();
    let top = sv.max();
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * top).count()
}

/// `n` observations of `Z = (Y, X)`, one row each.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    z: DMatrix<f64>,
    d: usize,
}

impl DataMatrix {
    pub fn new(z: DMatrix<f64>, d: usize) -> Result<Self> {
        let p = z.ncols();
        if d > p {
            return Err(Error::DimensionMismatch(format!("d = {d} exceeds {p} columns")));
        }
        if z.nrows() <= p {
            return Err(Error::InvalidInput(format!("need n > p, got n = {}, p = {p}", z.nrows())));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("data must be finite".into()));
        }
        Ok(DataMatrix { z, d })
    }

    pub fn from_blocks(y: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<Self> {
        if y.nrows() != x.nrows() {
            return Err(Error::DimensionMismatch("Y and X row counts differ".into()));
        }
        let mut z = DMatrix::zeros(y.nrows(), y.ncols() + x.ncols());
        z.view_mut((0, 0), y.shape()).copy_from(y);
        z.view_mut((0, y.ncols()), x.shape()).copy_from(x);
        DataMatrix::new(z, y.ncols())
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn c(&self) -> usize {
        self.p() - self.d
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn y(&self) -> DMatrix<f64> {
        self.z.columns(0, self.d).into_owned()
    }

    pub fn x(&self) -> DMatrix<f64> {
        self.z.columns(self.d, self.c()).into_owned()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.z.row_mean().transpose()
    }

    fn centered(&self) -> DMatrix<f64> {
        centered_rows(&self.z)
    }

    pub fn header(&self) -> Vec<String> {
        (1..=self.d).map(|i| format!("y{i}")).chain((1..=self.c()).map(|i| format!("x{i}"))).collect()
    }

    /// CSV with header `y1..yd,x1..xc`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.header())?;
        for row in self.z.row_iter() {
            wr.write_record(row.iter().map(|v| format!("{v:?}")))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let d = header.iter().take_while(|h| h.starts_with('y')).count();
        let expected: Vec<String> =
            (1..=d).map(|i| format!("y{i}")).chain((1..=header.len() - d).map(|i| format!("x{i}"))).collect();
        if header != expected {
            return Err(Error::InvalidInput(format!("expected header {expected:?}, found {header:?}")));
        }
        let mut values = Vec::new();
        let mut n = 0;
        for rec in rd.records() {
            let rec = rec?;
            for field in rec.iter() {
                let v: f64 =
                    field.trim().parse().map_err(|_| Error::InvalidInput(format!("not a number: {field:?}")))?;
                values.push(v);
            }
            n += 1;
        }
        DataMatrix::new(DMatrix::from_row_slice(n, header.len(), &values), d)
    }

    pub fn read_csv_path(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// `n⁻¹ Σ (Z_j − Z̄)(Z_j − Z̄)ᵀ`.
pub fn sample_cov(data: &DataMatrix) -> SymMatrix {
    cov_rows(data.z())
}

/// Divisor-`n` covariance of the rows of `z`.
pub fn cov_rows(z: &DMatrix<f64>) -> SymMatrix {
    // same arithmetic as uniform EL weights, so ζ = 0 reproduces it bit for bit
    let n = z.nrows();
    weighted_cov_rows(z, &DVector::from_element(n, 1.0 / n as f64)).expect("weights match rows")
}

/// `Σ_j π_j (Z_j − Z̄)(Z_j − Z̄)ᵀ` with EL weights `π_j`, centred at the
/// unweighted mean `Z̄`.
pub fn el_weighted_cov(data: &DataMatrix, sol: &ElSolution) -> Result<SymMatrix> {
    weighted_cov_rows(data.z(), &sol.weights)
}

pub fn weighted_cov_rows(z: &DMatrix<f64>, weights: &DVector<f64>) -> Result<SymMatrix> {
    if weights.len() != z.nrows() {
        return Err(Error::DimensionMismatch(format!("{} weights for {} observations", weights.len(), z.nrows())));
    }
    let c = centered_rows(z);
    let mut scaled = c.clone();
    for (j, mut row) in scaled.row_iter_mut().enumerate() {
        row *= weights[j];
    }
    Ok(SymMatrix::symmetrize(c.transpose() * scaled))
}

fn centered_rows(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = z.row_mean();
    let mut c = z.clone();
    for mut row in c.row_iter_mut() {
        row -= &mean;
    }
    c
}

/// `ε̂_j = (I − B)(Y_j − Ȳ) − Γ(X_j − X̄)`, one row per observation.
pub fn residuals(spec: &SemSpec, params: &SemParams, data: &DataMatrix) -> Result<DMatrix<f64>> {
    if data.d() != spec.d() || data.c() != spec.c() {
        return Err(Error::DimensionMismatch("data columns do not match the model".into()));
    }
    let mats = spec.unpack(params);
    let centered = data.centered();
    let d = spec.d();
    let yc = centered.columns(0, d);
    let xc = centered.columns(d, spec.c());
    let a = DMatrix::identity(d, d) - &mats.b;
    Ok(yc * a.transpose() - xc * mats.gamma.transpose())
}
