//! Asymptotic covariances of the plain and EL-weighted MDF estimators.
//!
//! With `w(z) = vecs((z − μ₀)(z − μ₀)ᵀ − Σ₀)` and the influence function
//! `Ψ(z) = (Δ₀ᵀH₀Δ₀)⁻¹Δ₀ᵀH₀ w(z)`, the plain estimator has
//!
//! ```text
//! V₀ = (Δ₀ᵀH₀Δ₀)⁻¹ Δ₀ᵀH₀ Var(w) H₀Δ₀ (Δ₀ᵀH₀Δ₀)⁻¹
//! ```
//!
//! and the EL-weighted estimator replaces `Var(w)` by
//! `D = Var(w) − c Var(v)⁻¹ cᵀ`, where `v(z) = g(z) + E(ġ)Ψ(z)` and
//! `c = E(w vᵀ)`.
//!
//! `H₀` is `½ Dᵀ(Σ₀⁻¹ ⊗ Σ₀⁻¹)D` with `D` the duplication matrix, so that the
//! Hessian of `F_ML(·, σ₀)` at `σ₀` equals `2H₀` in `vecs` coordinates.

use nalgebra::{DMatrix, DVector};

use crate::constraints::{independence_rows, MultiEdf, ResidualEdf, SideInfoKind, SideInfoSpec};
use crate::fit::side_constraints;
use crate::numkit::{duplication_matrix, inverse_pd, kron, vecs_len, vecs_upper, SymMatrix, VecsVector};
use crate::sem::{jacobian_delta, numerical_rank, residuals, structured_sigma, DataMatrix, SemParams, SemSpec};
use crate::{Error, Result};

/// Population moments entering the sandwich formulas.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticInputs {
    pub mu0: DVector<f64>,
    pub sigma0: SymMatrix,
    /// `∂σ/∂θᵀ` at `θ₀`, `p(p+1)/2 × q`.
    pub delta0: DMatrix<f64>,
    pub h0: DMatrix<f64>,
    pub var_w: SymMatrix,
    /// `E(w vᵀ)`, `p(p+1)/2 × m`; absent without side information.
    pub c_matrix: Option<DMatrix<f64>>,
    pub var_v: Option<SymMatrix>,
}

impl AsymptoticInputs {
    /// Inputs for a given `Σ₀`, `Δ₀` and `Var(w)`; `H₀` is derived from `Σ₀`.
    pub fn new(mu0: DVector<f64>, sigma0: SymMatrix, delta0: DMatrix<f64>, var_w: SymMatrix) -> Result<Self> {
        let p = sigma0.dim();
        let k = vecs_len(p);
        if mu0.len() != p || delta0.nrows() != k || var_w.dim() != k {
            return Err(Error::DimensionMismatch(format!("inputs inconsistent with p = {p}")));
        }
        let h0 = h0_matrix(&sigma0)?;
        Ok(AsymptoticInputs { mu0, sigma0, delta0, h0, var_w, c_matrix: None, var_v: None })
    }

    pub fn with_side(mut self, c_matrix: DMatrix<f64>, var_v: SymMatrix) -> Result<Self> {
        if c_matrix.nrows() != self.var_w.dim() || c_matrix.ncols() != var_v.dim() {
            return Err(Error::DimensionMismatch("c must be p(p+1)/2 x m with m = dim Var(v)".into()));
        }
        self.c_matrix = Some(c_matrix);
        self.var_v = Some(var_v);
        Ok(self)
    }

    pub fn q(&self) -> usize {
        self.delta0.ncols()
    }
}

pub fn w_fn(z: &DVector<f64>, mu0: &DVector<f64>, sigma0: &SymMatrix) -> VecsVector {
    let e = z - mu0;
    VecsVector::new(vecs_upper(&(&e * e.transpose() - sigma0.as_matrix()))).expect("square input")
}

pub fn h0_matrix(sigma0: &SymMatrix) -> Result<DMatrix<f64>> {
    let inv = inverse_pd(sigma0)?.into_matrix();
    let dup = duplication_matrix(sigma0.dim());
    let h = dup.transpose() * kron(&inv, &inv) * &dup * 0.5;
    Ok(SymMatrix::symmetrize(h).into_matrix())
}

/// `(Δ₀ᵀH₀Δ₀)⁻¹Δ₀ᵀH₀`, mapping `w(z)` to `Ψ(z)`.
pub fn influence_map(inputs: &AsymptoticInputs) -> Result<DMatrix<f64>> {
    let q = inputs.q();
    let rank = numerical_rank(&inputs.delta0);
    if rank < q {
        return Err(Error::NotLocallyIdentified { rank, q });
    }
    let hd = &inputs.h0 * &inputs.delta0;
    let info = SymMatrix::symmetrize(inputs.delta0.transpose() * &hd);
    Ok(inverse_pd(&info)?.into_matrix() * hd.transpose())
}

pub fn psi_fn(inputs: &AsymptoticInputs, z: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(influence_map(inputs)? * w_fn(z, &inputs.mu0, &inputs.sigma0).into_data())
}

fn sandwich(map: &DMatrix<f64>, meat: &SymMatrix) -> SymMatrix {
    SymMatrix::symmetrize(map * meat.as_matrix() * map.transpose())
}

pub fn v0_matrix(inputs: &AsymptoticInputs) -> Result<SymMatrix> {
    Ok(sandwich(&influence_map(inputs)?, &inputs.var_w))
}

/// `v(z) = g(z) + E(ġ) Ψ(z)`.
pub fn v_fn(g: &DVector<f64>, e_gdot: &DMatrix<f64>, psi: &DVector<f64>) -> DVector<f64> {
    g + e_gdot * psi
}

/// `Var(w) − c Var(v)⁻¹ cᵀ`; equals `Var(w)` without side information.
pub fn d_matrix(inputs: &AsymptoticInputs) -> Result<SymMatrix> {
    match (&inputs.c_matrix, &inputs.var_v) {
        (Some(c), Some(var_v)) => {
            let inv = inverse_pd(var_v)?.into_matrix();
            Ok(SymMatrix::symmetrize(inputs.var_w.as_matrix() - c * inv * c.transpose()))
        }
        _ => Ok(inputs.var_w.clone()),
    }
}

pub fn v_matrix(inputs: &AsymptoticInputs) -> Result<SymMatrix> {
    Ok(sandwich(&influence_map(inputs)?, &d_matrix(inputs)?))
}

/// `Var(ψ)` and `Var(ψ) − E(ψ̃uᵀ)E(uuᵀ)⁻¹E(uψ̃ᵀ)` from sample moments, with
/// `ψ̃` the centred `ψ`.
pub fn projection_variance(psi_vals: &DMatrix<f64>, u_vals: &DMatrix<f64>) -> Result<(SymMatrix, SymMatrix)> {
    let n = psi_vals.nrows();
    if u_vals.nrows() != n || n == 0 {
        return Err(Error::DimensionMismatch(format!("{} ψ rows vs {} u rows", n, u_vals.nrows())));
    }
    let psi_c = center(psi_vals);
    let nf = n as f64;
    let full = SymMatrix::symmetrize(psi_c.transpose() * &psi_c / nf);
    let cross = psi_c.transpose() * u_vals / nf;
    let w = SymMatrix::symmetrize(u_vals.transpose() * u_vals / nf);
    let reduction = &cross * inverse_pd(&w)?.into_matrix() * cross.transpose();
    let reduced = SymMatrix::symmetrize(full.as_matrix() - reduction);
    Ok((full, reduced))
}

fn center(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = m.row_mean();
    let mut c = m.clone();
    for mut row in c.row_iter_mut() {
        row -= &mean;
    }
    c
}

fn cov(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    center(a).transpose() * center(b) / a.nrows() as f64
}

/// Step used to differentiate the mean constraint in `θ`.
pub const GDOT_STEP: f64 = 1e-5;

/// `E(ġ)`, `m × q`: derivative in `θ` of the sample mean of the constraint.
///
/// Median constraints do not involve `θ`. For the independence kind the
/// residual EDF is replaced by a Gaussian-kernel smoothed version so the mean
/// is differentiable; the bandwidth is `1.06 σ̂ n^{-1/5}` at `theta`.
pub fn expected_gdot(
    data: &DataMatrix,
    spec: &SemSpec,
    theta: &SemParams,
    side: &SideInfoSpec,
) -> Result<DMatrix<f64>> {
    let q = spec.q();
    let m = side.dim(spec.c());
    match side.kind {
        SideInfoKind::Medians => Ok(DMatrix::zeros(m, q)),
        SideInfoKind::Independence => {
            side.validate()?;
            let x_edf = MultiEdf::new(data.x())?.eval_at_sample();
            let n = data.n();
            let eps = residuals(spec, theta, data)? * DVector::from_column_slice(&side.a);
            let sd = (eps.norm_squared() / n as f64 - eps.mean().powi(2)).max(0.0).sqrt();
            if !(sd > 0.0) {
                return Err(Error::InvalidInput("residual combination has zero spread".into()));
            }
            let bandwidth = 1.06 * sd * (n as f64).powf(-0.2);
            let mean_at = |t: &SemParams| -> Result<DVector<f64>> {
                let rows =
                    independence_rows(&residuals(spec, t, data)?, &x_edf, side, ResidualEdf::Smoothed(bandwidth))?;
                Ok(rows.row_mean().transpose())
            };
            let mut out = DMatrix::zeros(m, q);
            for k in 0..q {
                let h = GDOT_STEP * theta.theta[k].abs().max(1.0);
                let mut up = theta.clone();
                up.theta[k] += h;
                let mut down = theta.clone();
                down.theta[k] -= h;
                out.set_column(k, &((mean_at(&up)? - mean_at(&down)?) / (2.0 * h)));
            }
            Ok(out)
        }
    }
}

/// Plug-in estimates at `theta`: `μ₀ = Z̄`, `Σ₀ = Σ(θ)`, and sample
/// covariances of `w(Z_j)` and, with side information, of `v(Z_j)`.
pub fn estimate_inputs(
    data: &DataMatrix,
    spec: &SemSpec,
    theta: &SemParams,
    side: Option<&SideInfoSpec>,
) -> Result<AsymptoticInputs> {
    let sigma0 = structured_sigma(spec, theta)?;
    let delta0 = jacobian_delta(spec, theta)?;
    let mu0 = data.mean();
    let n = data.n();
    let k = vecs_len(spec.p());
    let mut w = DMatrix::zeros(n, k);
    for j in 0..n {
        let z = data.z().row(j).transpose();
        w.set_row(j, &w_fn(&z, &mu0, &sigma0).into_data().transpose());
    }
    let var_w = SymMatrix::symmetrize(cov(&w, &w));
    let inputs = AsymptoticInputs::new(mu0, sigma0, delta0, var_w)?;
    let Some(side) = side else {
        return Ok(inputs);
    };
    let g = side_constraints(data, spec, theta, side)?;
    let e_gdot = expected_gdot(data, spec, theta, side)?;
    let psi = &w * influence_map(&inputs)?.transpose();
    let v = g.rows() + psi * e_gdot.transpose();
    let c = cov(&w, &v);
    let var_v = SymMatrix::symmetrize(cov(&v, &v));
    inputs.with_side(c, var_v)
}

/// Plug-in `V₀` at `theta`.
pub fn plain_avar(data: &DataMatrix, spec: &SemSpec, theta: &SemParams) -> Result<DMatrix<f64>> {
    Ok(v0_matrix(&estimate_inputs(data, spec, theta, None)?)?.into_matrix())
}

/// Plug-in `V` at `theta` for the EL-weighted estimator.
pub fn el_avar(data: &DataMatrix, spec: &SemSpec, theta: &SemParams, side: &SideInfoSpec) -> Result<DMatrix<f64>> {
    Ok(v_matrix(&estimate_inputs(data, spec, theta, Some(side))?)?.into_matrix())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::f_ml;
    use crate::numkit::{unvecs, vecs};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pd(rng: &mut ChaCha8Rng, p: usize) -> SymMatrix {
        let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        SymMatrix::symmetrize(&a * a.transpose() + DMatrix::identity(p, p) * 0.3)
    }

    fn quad(h: &DMatrix<f64>, e: &DVector<f64>) -> f64 {
        (e.transpose() * h * e)[(0, 0)]
    }

    #[test]
    fn w_fn_examples() {
        let sigma = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let mu = DVector::from_column_slice(&[1.0, -1.0]);
        let w = w_fn(&mu, &mu, &sigma);
        assert_eq!(w.data().as_slice(), &[-2.0, -0.5, -1.0]);
        let z = DVector::from_column_slice(&[2.0, 3.0]);
        let w = w_fn(&z, &DVector::zeros(2), &SymMatrix::symmetrize(DMatrix::zeros(2, 2)));
        assert_eq!(w.data().as_slice(), &[4.0, 6.0, 9.0]);
    }

    #[test]
    fn h0_identity_is_half_frobenius() {
        let h = h0_matrix(&SymMatrix::identity(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let e = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
            let em = unvecs(&VecsVector::new(e.clone()).unwrap());
            assert!((quad(&h, &e) - 0.5 * em.as_matrix().norm_squared()).abs() < 1e-13);
        }
    }

    #[test]
    fn h0_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_pd(&mut rng, 3);
        let h1 = h0_matrix(&s).unwrap();
        let h2 = h0_matrix(&SymMatrix::symmetrize(s.as_matrix() * 2.0)).unwrap();
        assert!((h1 / 4.0 - h2).amax() < 1e-12);
    }

    #[test]
    fn h0_is_second_order_term_of_f_ml() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sigma = random_pd(&mut rng, 3);
        let h = h0_matrix(&sigma).unwrap();
        let dir = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let mut errs = Vec::new();
        for t in [1e-1, 1e-2, 1e-3] {
            let e = &dir * t;
            let s = SymMatrix::symmetrize(sigma.as_matrix() + unvecs(&VecsVector::new(e.clone()).unwrap()).as_matrix());
            errs.push((f_ml(&s, &sigma).unwrap() - quad(&h, &e)).abs());
        }
        // O(t³)
        assert!(errs[1] < errs[0] / 500.0 && errs[2] < errs[1] / 500.0, "{errs:?}");
    }

    #[test]
    fn v0_normal_theory_simplifies() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sigma = random_pd(&mut rng, 3);
        let delta = DMatrix::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0));
        let h = h0_matrix(&sigma).unwrap();
        let var_w = SymMatrix::symmetrize(h.clone().try_inverse().unwrap());
        let inputs = AsymptoticInputs::new(DVector::zeros(3), sigma, delta.clone(), var_w).unwrap();
        let v0 = v0_matrix(&inputs).unwrap();
        let expected = (delta.transpose() * h * &delta).try_inverse().unwrap();
        assert!((v0.as_matrix() - expected).amax() < 1e-9);
    }

    #[test]
    fn v0_square_delta_collapses() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // p = 1: one vecs coordinate
        let sigma = SymMatrix::from_diagonal(&[2.0]);
        let delta = DMatrix::from_element(1, 1, 3.0);
        let var_w = SymMatrix::from_diagonal(&[rng.random_range(1.0..2.0)]);
        let inputs = AsymptoticInputs::new(DVector::zeros(1), sigma, delta, var_w.clone()).unwrap();
        assert!((v0_matrix(&inputs).unwrap().get(0, 0) - var_w.get(0, 0) / 9.0).abs() < 1e-15);
    }

    #[test]
    fn d_matrix_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sigma = SymMatrix::identity(2);
        let delta = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let var_w = SymMatrix::from_diagonal(&[3.0, 2.0, 5.0]);
        let base = AsymptoticInputs::new(DVector::zeros(2), sigma, delta, var_w.clone()).unwrap();
        assert_eq!(d_matrix(&base).unwrap(), var_w);
        let zero_c = base.clone().with_side(DMatrix::zeros(3, 2), SymMatrix::identity(2)).unwrap();
        assert_eq!(d_matrix(&zero_c).unwrap(), var_w);
        assert!((v_matrix(&zero_c).unwrap().into_matrix() - v0_matrix(&base).unwrap().into_matrix()).amax() < 1e-14);

        let c = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let hand = base.with_side(c, SymMatrix::identity(2)).unwrap();
        assert_eq!(d_matrix(&hand).unwrap(), SymMatrix::from_diagonal(&[2.0, 1.0, 5.0]));
    }

    #[test]
    fn projection_variance_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 500;
        let u = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let (full, reduced) = projection_variance(&u, &u).unwrap();
        assert!(reduced.as_matrix().amax() < 0.01 * full.as_matrix().amax());

        // ψ built orthogonal to both (centred) columns of u
        let u = center(&u);
        let raw = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
        let proj = &u * (u.transpose() * &u).try_inverse().unwrap() * u.transpose() * &raw;
        let psi = &raw - proj;
        let (full, reduced) = projection_variance(&psi, &u).unwrap();
        assert!((full.get(0, 0) - reduced.get(0, 0)).abs() < 1e-6 * full.get(0, 0));
    }

    #[test]
    fn projection_reduction_matches_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 200;
        let u = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let psi = DMatrix::from_fn(n, 2, |i, k| u[(i, k)] * 2.0 + rng.random_range(-1.0..1.0) + 0.5);
        let (full, reduced) = projection_variance(&psi, &u).unwrap();
        let psi_c = center(&psi);
        let beta = (u.transpose() * &u).try_inverse().unwrap() * u.transpose() * &psi_c;
        let fitted = &u * beta;
        let explained = fitted.transpose() * &fitted / n as f64;
        assert!(((full.as_matrix() - reduced.as_matrix()) - explained).amax() < 1e-10);
    }

    #[test]
    fn v_not_larger_than_v0_on_random_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = 100;
            let w = DMatrix::from_fn(n, 6, |_, _| rng.random_range(-1.0..1.0));
            let v = DMatrix::from_fn(n, 2, |i, k| w[(i, k)] + rng.random_range(-1.0..1.0));
            let sigma = random_pd(&mut rng, 3);
            let delta = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
            let var_w = SymMatrix::symmetrize(cov(&w, &w));
            let inputs = AsymptoticInputs::new(DVector::zeros(3), sigma, delta, var_w)
                .unwrap()
                .with_side(cov(&w, &v), SymMatrix::symmetrize(cov(&v, &v)))
                .unwrap();
            let gap = SymMatrix::symmetrize(
                v0_matrix(&inputs).unwrap().into_matrix() - v_matrix(&inputs).unwrap().into_matrix(),
            );
            assert!(crate::numkit::eigen_bounds(&gap).0 >= -1e-10);
            let dgap = SymMatrix::symmetrize(inputs.var_w.as_matrix() - d_matrix(&inputs).unwrap().as_matrix());
            assert!(crate::numkit::eigen_bounds(&dgap).0 >= -1e-10);
        }
    }

    #[test]
    fn w_vecs_consistency() {
        let z = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        let s = SymMatrix::identity(3);
        let w = w_fn(&z, &DVector::zeros(3), &s);
        let m = SymMatrix::symmetrize(&z * z.transpose() - DMatrix::identity(3, 3));
        assert_eq!(w, vecs(&m));
    }
}
