//! Side-information constraint builders.
//!
//! Two kinds are supported:
//!
//! - **independence** of the structural error and the covariates, encoded as
//!   `Φ_m(F_n(ε̂)) ⊗ Φ_m(G_n(X))` with the cosine basis
//!   `Φ_m(t) = √2 (cos πt, …, cos mπt)` and empirical distribution functions
//!   of the estimated error combination `ε̂ = aᵀ(residual)` and of `X`;
//! - **known marginal medians** of the covariates,
//!   `(1[X_k ≤ m₀ₖ] − 1/2)_k`.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::el::ConstraintMatrix;
use crate::numkit::kron_vec;
use crate::{Error, Result};

/// `√2 (cos πt, cos 2πt, …, cos mπt)` for `t ∈ [0, 1]`.
pub fn trig_basis(t: f64, m: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("trig basis argument {t} outside [0, 1]")));
    }
    Ok(trig_basis_unchecked(t, m))
}

fn trig_basis_unchecked(t: f64, m: usize) -> Vec<f64> {
    (1..=m).map(|k| SQRT_2 * (k as f64 * PI * t).cos()).collect()
}

/// Empirical distribution function of a scalar sample, `#{x_i ≤ t} / (n + 1)`.
///
/// The `n + 1` denominator keeps every transformed sample point strictly
/// inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarEdf {
    sorted: Vec<f64>,
}

impl ScalarEdf {
    pub fn new(sample: &[f64]) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::InvalidInput("empty sample".into()));
        }
        if sample.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidInput("sample contains NaN".into()));
        }
        let mut sorted = sample.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(ScalarEdf { sorted })
    }

    pub fn n(&self) -> usize {
        self.sorted.len()
    }

    pub fn count_le(&self, t: f64) -> usize {
        self.sorted.partition_point(|&x| x <= t)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.count_le(t) as f64 / (self.n() + 1) as f64
    }
}

/// Multivariate empirical distribution function, `n⁻¹ #{X_i ≤ x}` with the
/// componentwise order.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiEdf {
    sample: DMatrix<f64>,
}

impl MultiEdf {
    pub fn new(sample: DMatrix<f64>) -> Result<Self> {
        if sample.ncols() == 0 || sample.nrows() == 0 {
            return Err(Error::InvalidInput("multivariate EDF needs n >= 1 and d >= 1".into()));
        }
        Ok(MultiEdf { sample })
    }

    pub fn n(&self) -> usize {
        self.sample.nrows()
    }

    pub fn count_le(&self, x: &[f64]) -> usize {
        (0..self.sample.nrows()).filter(|&i| x.iter().enumerate().all(|(k, &xk)| self.sample[(i, k)] <= xk)).count()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.count_le(x) as f64 / self.n() as f64
    }

    /// `G_n` evaluated at each sample row.
    pub fn eval_at_sample(&self) -> Vec<f64> {
        let x: Vec<Vec<f64>> = (0..self.n()).map(|i| self.sample.row(i).iter().copied().collect()).collect();
        x.iter().map(|r| self.eval(r)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideInfoKind {
    Independence,
    Medians,
}

/// Which side information to use and its tuning constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideInfoSpec {
    pub kind: SideInfoKind,
    /// Cosine basis size (independence kind).
    #[serde(default = "default_m")]
    pub m: usize,
    /// Direction `a` for the error combination `aᵀε̂` (independence kind).
    #[serde(default = "default_direction")]
    pub a: Vec<f64>,
    /// Known marginal medians, one per covariate (medians kind). When absent,
    /// the simulation harness fills in the generator's analytic medians.
    #[serde(default)]
    pub medians: Option<Vec<f64>>,
}

fn default_m() -> usize {
    1
}

fn default_direction() -> Vec<f64> {
    vec![std::f64::consts::FRAC_1_SQRT_2; 2]
}

impl SideInfoSpec {
    pub fn independence(m: usize) -> Self {
        SideInfoSpec { kind: SideInfoKind::Independence, m, a: default_direction(), medians: None }
    }

    pub fn medians(medians: Vec<f64>) -> Self {
        SideInfoSpec { kind: SideInfoKind::Medians, m: default_m(), a: default_direction(), medians: Some(medians) }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SideInfoKind::Independence => {
                if self.m == 0 {
                    return Err(Error::InvalidInput("basis size m must be at least 1".into()));
                }
                let norm: f64 = self.a.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(norm > 0.0) || !norm.is_finite() {
                    return Err(Error::InvalidInput("direction a must be finite and nonzero".into()));
                }
            }
            SideInfoKind::Medians => {
                let Some(med) = &self.medians else {
                    return Err(Error::InvalidInput("medians side information needs known medians".into()));
                };
                if med.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput("medians must be finite".into()));
                }
            }
        }
        Ok(())
    }

    /// Output dimension of the constraint for `c` covariates.
    pub fn dim(&self, c: usize) -> usize {
        match self.kind {
            SideInfoKind::Independence => self.m * self.m,
            SideInfoKind::Medians => c,
        }
    }
}

/// How the residual distribution function is estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum ResidualEdf {
    /// Rank-based EDF with the `n + 1` denominator.
    Empirical,
    /// Gaussian-kernel smoothed EDF with the given bandwidth; only used to
    /// differentiate the constraint in the model parameters.
    Smoothed(f64),
}

/// `ε̂_j = aᵀ(residual row j)`.
fn project_residuals(residuals: &DMatrix<f64>, a: &[f64]) -> Result<Vec<f64>> {
    if residuals.ncols() != a.len() {
        return Err(Error::DimensionMismatch(format!(
            "direction a has length {}, residuals have {} columns",
            a.len(),
            residuals.ncols()
        )));
    }
    Ok((0..residuals.nrows()).map(|j| a.iter().enumerate().map(|(k, ak)| ak * residuals[(j, k)]).sum()).collect())
}

pub(crate) fn independence_rows(
    residuals: &DMatrix<f64>,
    x_edf: &[f64],
    spec: &SideInfoSpec,
    edf: ResidualEdf,
) -> Result<DMatrix<f64>> {
    let n = residuals.nrows();
    let m = spec.m;
    let eps = project_residuals(residuals, &spec.a)?;
    let f_eps: Vec<f64> = match edf {
        ResidualEdf::Empirical => {
            let table = ScalarEdf::new(&eps)?;
            eps.iter().map(|&e| table.eval(e)).collect()
        }
        ResidualEdf::Smoothed(h) => {
            eps.iter().map(|&e| eps.iter().map(|&ei| normal_cdf((e - ei) / h)).sum::<f64>() / (n + 1) as f64).collect()
        }
    };
    let mut out = DMatrix::zeros(n, m * m);
    for j in 0..n {
        let row = kron_vec(&trig_basis_unchecked(f_eps[j], m), &trig_basis_unchecked(x_edf[j], m));
        for (k, v) in row.into_iter().enumerate() {
            out[(j, k)] = v;
        }
    }
    Ok(out)
}

/// Row `j` is `Φ_m(F_n(aᵀε̂_j)) ⊗ Φ_m(G_n(X_j))`.
pub fn independence_constraints(
    residuals: &DMatrix<f64>,
    x: &DMatrix<f64>,
    spec: &SideInfoSpec,
) -> Result<ConstraintMatrix> {
    if spec.kind != SideInfoKind::Independence {
        return Err(Error::InvalidInput("expected independence side information".into()));
    }
    spec.validate()?;
    let n = residuals.nrows();
    if x.nrows() != n {
        return Err(Error::DimensionMismatch(format!("{} residual rows vs {} covariate rows", n, x.nrows())));
    }
    if spec.m * spec.m + 1 >= n {
        return Err(Error::InvalidInput(format!(
            "m^2 = {} must be smaller than n - 1 = {}",
            spec.m * spec.m,
            n.saturating_sub(1)
        )));
    }
    let g = MultiEdf::new(x.clone())?.eval_at_sample();
    ConstraintMatrix::new(independence_rows(residuals, &g, spec, ResidualEdf::Empirical)?)
}

/// Row `j` has entries `1[X_kj ≤ m₀ₖ] − 1/2`.
pub fn median_constraints(x: &DMatrix<f64>, spec: &SideInfoSpec) -> Result<ConstraintMatrix> {
    if spec.kind != SideInfoKind::Medians {
        return Err(Error::InvalidInput("expected medians side information".into()));
    }
    spec.validate()?;
    let med = spec.medians.as_ref().expect("validated");
    if med.len() != x.ncols() {
        return Err(Error::DimensionMismatch(format!("{} medians for {} covariates", med.len(), x.ncols())));
    }
    let rows = DMatrix::from_fn(x.nrows(), x.ncols(), |j, k| if x[(j, k)] <= med[k] { 0.5 } else { -0.5 });
    ConstraintMatrix::new(rows)
}

/// Standard normal distribution function.
pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}
