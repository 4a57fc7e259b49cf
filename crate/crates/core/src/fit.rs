//! Discrepancy functions and minimum-discrepancy (MDF) fitting.
//!
//! The optimizer is BFGS on an internal parameterisation where variances and
//! Cholesky diagonals are log-transformed. Gradients chain the Jacobian of
//! `vecs Σ(θ)` with the closed-form derivative of the discrepancy in `Σ`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asymptotics;
use crate::constraints::{independence_constraints, median_constraints, SideInfoKind, SideInfoSpec};
use crate::el::{solve_dual, ConstraintMatrix, ElSolution, SolverOptions};
use crate::numkit::{cholesky, inverse_pd, solve_pd_matrix, vecs_upper, SymMatrix};
use crate::sem::{
    el_weighted_cov, jacobian_analytic, jacobian_delta, residuals, sample_cov, structured_sigma, DataMatrix, SemParams,
    SemSpec, Target,
};
use crate::{Error, Result};

/// Weight matrix for the GLS discrepancy.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlsWeight {
    /// The matrix being fitted (`𝕊_n`, or `Ŝ_n` for the EL refit).
    #[default]
    SampleCov,
    Identity,
    Given(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiscrepancyKind {
    #[default]
    Ml,
    Gls {
        #[serde(default)]
        weight: GlsWeight,
    },
}

/// `log|Σ| − log|S| + tr(SΣ⁻¹) − p`.
pub fn f_ml(s: &SymMatrix, sigma: &SymMatrix) -> Result<f64> {
    check_dims(s, sigma)?;
    cholesky(s)?;
    Ok(ml_value(s, sigma)?.0)
}

/// `tr((S − Σ)W⁻¹(S − Σ)W⁻¹)`.
pub fn f_gls(s: &SymMatrix, sigma: &SymMatrix, w: &SymMatrix) -> Result<f64> {
    check_dims(s, sigma)?;
    check_dims(s, w)?;
    Ok(gls_value(s, &inverse_pd(w)?.into_matrix(), sigma).0)
}

fn check_dims(a: &SymMatrix, b: &SymMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!("{}x{} vs {}x{}", a.dim(), a.dim(), b.dim(), b.dim())));
    }
    Ok(())
}

/// Value and `∂F/∂Σ = Σ⁻¹(Σ − S)Σ⁻¹`.
///
/// With `Σ = LLᵀ` and `N = L⁻¹(S − Σ)L⁻ᵀ`, `F = Σᵢ νᵢ − log(1 + νᵢ)` over the
/// eigenvalues of `N`; this keeps the rounding error proportional to the
/// misfit rather than to `log|Σ|` and `tr(SΣ⁻¹)`.
fn ml_value(s: &SymMatrix, sigma: &SymMatrix) -> Result<(f64, DMatrix<f64>)> {
    let l = cholesky(sigma)?;
    let e = s.as_matrix() - sigma.as_matrix();
    let x = l.solve_lower_triangular(&e).expect("nonzero Cholesky pivots");
    let n = SymMatrix::symmetrize(l.solve_lower_triangular(&x.transpose()).expect("nonzero Cholesky pivots"));
    let nu = n.as_matrix().clone().symmetric_eigenvalues();
    if nu.iter().any(|&v| !(v > -1.0)) {
        return Err(Error::IllConditioned { min_pivot: nu.min() + 1.0 });
    }
    let value: f64 = nu.iter().map(|&v| v - v.ln_1p()).sum();
    let lt = l.transpose();
    let y = lt.solve_upper_triangular(n.as_matrix()).expect("nonzero Cholesky pivots");
    let grad = -lt.solve_upper_triangular(&y.transpose()).expect("nonzero Cholesky pivots");
    Ok((value.max(0.0), grad))
}

/// Value and `∂F/∂Σ = 2V(Σ − S)V` with `V = W⁻¹`.
fn gls_value(s: &SymMatrix, w_inv: &DMatrix<f64>, sigma: &SymMatrix) -> (f64, DMatrix<f64>) {
    let e = s.as_matrix() - sigma.as_matrix();
    let ev = &e * w_inv;
    let value = (&ev * &ev).trace();
    let grad = -2.0 * w_inv * &ev;
    (value.max(0.0), grad)
}

enum Prepared {
    Ml,
    Gls { w_inv: DMatrix<f64> },
}

impl Prepared {
    fn new(target: &SymMatrix, kind: &DiscrepancyKind) -> Result<Self> {
        Ok(match kind {
            DiscrepancyKind::Ml => {
                cholesky(target)?;
                Prepared::Ml
            }
            DiscrepancyKind::Gls { weight } => {
                let w = match weight {
                    GlsWeight::SampleCov => target.clone(),
                    GlsWeight::Identity => SymMatrix::identity(target.dim()),
                    GlsWeight::Given(rows) => {
                        let p = target.dim();
                        if rows.len() != p || rows.iter().any(|r| r.len() != p) {
                            return Err(Error::DimensionMismatch(format!("GLS weight must be {p}x{p}")));
                        }
                        SymMatrix::new(DMatrix::from_fn(p, p, |i, j| rows[i][j]))?
                    }
                };
                Prepared::Gls { w_inv: inverse_pd(&w)?.into_matrix() }
            }
        })
    }

    fn eval(&self, target: &SymMatrix, sigma: &SymMatrix) -> Result<(f64, DMatrix<f64>)> {
        match self {
            Prepared::Ml => ml_value(target, sigma),
            Prepared::Gls { w_inv } => Ok(gls_value(target, w_inv, sigma)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
    pub max_restarts: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { grad_tol: 1e-8, max_iter: 500, max_restarts: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta_hat: SemParams,
    pub discrepancy_value: f64,
    /// Euclidean norm of the gradient at `theta_hat` in the optimizer's
    /// coordinates (log scale for variances and Cholesky diagonals).
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restarts: usize,
    /// Discrepancy after every accepted step, starting with the initial value.
    pub trace: Vec<f64>,
    /// Estimated asymptotic covariance of `√n(θ̂ − θ₀)`, when it could be formed.
    pub avar: Option<DMatrix<f64>>,
    /// Plain estimate the EL refit started from.
    pub stage1: Option<SemParams>,
    pub el: Option<ElSolution>,
    pub skipped_reason: Option<String>,
}

impl FitResult {
    pub fn is_skipped(&self) -> bool {
        self.skipped_reason.is_some()
    }

    /// Human-readable summary.
    pub fn render_text(&self, spec: &SemSpec, n: Option<usize>) -> String {
        let mut out = String::new();
        if let Some(reason) = &self.skipped_reason {
            out.push_str(&format!("skipped: {reason}\n"));
        }
        out.push_str(&format!(
            "discrepancy {:.6e}, gradient norm {:.2e}, {} iterations, {} restarts, converged: {}\n",
            self.discrepancy_value, self.gradient_norm, self.iterations, self.restarts, self.converged
        ));
        out.push_str(&format!("{:<10} {:>12} {:>12}\n", "param", "estimate", "std.err"));
        for (k, label) in spec.labels().iter().enumerate() {
            let se = match (&self.avar, n) {
                (Some(v), Some(n)) if v[(k, k)] >= 0.0 => format!("{:12.6}", (v[(k, k)] / n as f64).sqrt()),
                _ => format!("{:>12}", "NA"),
            };
            out.push_str(&format!("{:<10} {:12.6} {}\n", label, self.theta_hat.theta[k], se));
        }
        if let Some(el) = &self.el {
            out.push_str(&format!(
                "EL: log-likelihood ratio {:.6}, |zeta| {:.4e}, {} Newton steps\n",
                el.log_el_ratio(),
                el.zeta.norm(),
                el.iterations
            ));
        }
        out
    }
}

/// Internal coordinates: log of positive entries, identity otherwise.
struct Transform {
    log: Vec<bool>,
}

impl Transform {
    fn new(spec: &SemSpec) -> Self {
        Transform { log: spec.free().iter().map(|f| f.target.is_positive()).collect() }
    }

    fn to_eta(&self, theta: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(theta.len(), theta.iter().zip(&self.log).map(|(&t, &l)| if l { t.ln() } else { t }))
    }

    fn to_theta(&self, eta: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(eta.len(), eta.iter().zip(&self.log).map(|(&e, &l)| if l { e.exp() } else { e }))
    }
}

struct Objective<'a> {
    spec: &'a SemSpec,
    target: &'a SymMatrix,
    prepared: Prepared,
    transform: Transform,
}

#[derive(Clone)]
struct Point {
    eta: DVector<f64>,
    f: f64,
    grad_eta: DVector<f64>,
    grad_norm: f64,
}

impl Objective<'_> {
    fn params(&self, eta: &DVector<f64>) -> SemParams {
        SemParams { theta: self.transform.to_theta(eta) }
    }

    fn value(&self, eta: &DVector<f64>) -> Option<f64> {
        let sigma = structured_sigma(self.spec, &self.params(eta)).ok()?;
        self.prepared.eval(self.target, &sigma).ok().map(|(f, _)| f).filter(|f| f.is_finite())
    }

    fn point(&self, eta: DVector<f64>) -> Option<Point> {
        let params = self.params(&eta);
        let sigma = structured_sigma(self.spec, &params).ok()?;
        let (f, dsigma) = self.prepared.eval(self.target, &sigma).ok()?;
        if !f.is_finite() {
            return None;
        }
        let delta = jacobian_analytic(self.spec, &params).ok()?;
        let grad_theta = delta.transpose() * vecs_gradient(&dsigma);
        let grad_eta = DVector::from_iterator(
            eta.len(),
            grad_theta
                .iter()
                .zip(&self.transform.log)
                .zip(params.theta.iter())
                .map(|((&g, &l), &t)| if l { g * t } else { g }),
        );
        let grad_norm = grad_eta.norm();
        Some(Point { eta, f, grad_eta, grad_norm })
    }
}

/// Gradient in `vecs` coordinates of a function of a symmetric matrix whose
/// matrix derivative is `g`; off-diagonal coordinates appear twice in `Σ`.
fn vecs_gradient(g: &DMatrix<f64>) -> DVector<f64> {
    let p = g.nrows();
    let sym = DMatrix::from_fn(p, p, |i, j| if i == j { g[(i, i)] } else { g[(i, j)] + g[(j, i)] });
    vecs_upper(&sym)
}

enum RunEnd {
    Converged,
    LineSearchFailed,
    Budget,
}

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const MAX_STEP: f64 = 5.0;

fn bfgs_run(obj: &Objective, start: Point, budget: usize, tol: f64, trace: &mut Vec<f64>) -> (Point, usize, RunEnd) {
    let q = start.eta.len();
    let mut x = start;
    let mut h = DMatrix::<f64>::identity(q, q);
    let mut first_update = true;
    for it in 0..budget {
        if x.grad_norm <= tol {
            return (x, it, RunEnd::Converged);
        }
        let mut d = -(&h * &x.grad_eta);
        let mut slope = x.grad_eta.dot(&d);
        if !(slope < 0.0) {
            h = DMatrix::identity(q, q);
            d = -x.grad_eta.clone();
            slope = x.grad_eta.dot(&d);
        }
        let norm = d.norm();
        if norm > MAX_STEP {
            d *= MAX_STEP / norm;
            slope *= MAX_STEP / norm;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &x.eta + &d * t;
            if let Some(f) = obj.value(&cand) {
                // near the minimum `c·t·slope` falls below one ulp of f, so an
                // equal value must not pass as sufficient decrease
                if f < x.f && f <= x.f + ARMIJO_C * t * slope {
                    accepted = obj.point(cand);
                } else if f <= x.f {
                    // within rounding of the minimum the decrease test is noise;
                    // accept steps that still shrink the gradient
                    accepted = obj.point(cand).filter(|p| p.grad_norm < x.grad_norm);
                }
                if accepted.is_some() {
                    break;
                }
            }
            t *= 0.5;
        }
        let Some(next) = accepted else {
            return (x, it, RunEnd::LineSearchFailed);
        };
        let s = &next.eta - &x.eta;
        let y = &next.grad_eta - &x.grad_eta;
        let sy = s.dot(&y);
        if sy > 1e-14 * s.norm() * y.norm() {
            if first_update {
                h = DMatrix::identity(q, q) * (sy / y.dot(&y));
                first_update = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        trace.push(next.f);
        x = next;
    }
    let end = if x.grad_norm <= tol { RunEnd::Converged } else { RunEnd::Budget };
    (x, budget, end)
}

/// Newton steps on the analytic gradient with a central-difference Hessian.
/// Used once BFGS stalls: at that point f is flat to rounding in the stiff
/// directions and can no longer steer a line search, but the gradient can.
fn newton_polish(obj: &Objective, start: Point, budget: usize, tol: f64) -> (Point, usize) {
    let q = start.eta.len();
    let mut x = start;
    for it in 0..budget {
        if x.grad_norm <= tol {
            return (x, it);
        }
        let mut hess = DMatrix::zeros(q, q);
        for k in 0..q {
            let h = 1e-5 * (1.0 + x.eta[k].abs());
            let mut plus = x.eta.clone();
            plus[k] += h;
            let mut minus = x.eta.clone();
            minus[k] -= h;
            let (Some(a), Some(b)) = (obj.point(plus), obj.point(minus)) else {
                return (x, it);
            };
            hess.set_column(k, &((a.grad_eta - b.grad_eta) / (2.0 * h)));
        }
        let hess = (&hess + hess.transpose()) * 0.5;
        let Some(chol) = hess.cholesky() else {
            return (x, it);
        };
        let step = chol.solve(&x.grad_eta);
        let slack = 1e-12 * (1.0 + x.f.abs());
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..10 {
            if let Some(p) = obj.point(&x.eta - &step * t) {
                if p.grad_norm < x.grad_norm && p.f <= x.f + slack {
                    accepted = Some(p);
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some(p) => x = p,
            None => return (x, it),
        }
    }
    (x, budget)
}

/// Minimises the discrepancy between `target` and `Σ(θ)` starting at `init`.
pub fn fit_mdf(target: &SymMatrix, spec: &SemSpec, kind: &DiscrepancyKind, init: &SemParams) -> Result<FitResult> {
    fit_mdf_with(target, spec, kind, init, &FitOptions::default())
}

pub fn fit_mdf_with(
    target: &SymMatrix,
    spec: &SemSpec,
    kind: &DiscrepancyKind,
    init: &SemParams,
    opts: &FitOptions,
) -> Result<FitResult> {
    if target.dim() != spec.p() {
        return Err(Error::DimensionMismatch(format!("target is {0}x{0}, model has p = {1}", target.dim(), spec.p())));
    }
    if init.theta.len() != spec.q() {
        return Err(Error::DimensionMismatch("initial parameters do not match the model".into()));
    }
    let transform = Transform::new(spec);
    if init.theta.iter().zip(&transform.log).any(|(&t, &l)| l && !(t > 0.0)) {
        return Err(Error::InvalidInput("initial variances and Cholesky diagonals must be positive".into()));
    }
    let obj = Objective { spec, target, prepared: Prepared::new(target, kind)?, transform };
    let eta0 = obj.transform.to_eta(&init.theta);
    let start =
        obj.point(eta0).ok_or_else(|| Error::InvalidInput("discrepancy undefined at the initial parameters".into()))?;

    let mut trace = vec![start.f];
    let mut best = start.clone();
    let mut current = start;
    let mut iterations = 0;
    let mut restarts = 0;
    loop {
        let (mut end_point, used, mut end) =
            bfgs_run(&obj, current, opts.max_iter - iterations, opts.grad_tol, &mut trace);
        iterations += used;
        if !matches!(end, RunEnd::Converged) {
            let (polished, steps) = newton_polish(&obj, end_point, opts.max_iter - iterations, opts.grad_tol);
            iterations += steps;
            trace.extend(std::iter::repeat_n(polished.f, steps));
            if polished.grad_norm <= opts.grad_tol {
                end = RunEnd::Converged;
            }
            end_point = polished;
        }
        if end_point.f < best.f || (end_point.f == best.f && end_point.grad_norm < best.grad_norm) {
            best = end_point.clone();
        }
        match end {
            RunEnd::Converged | RunEnd::Budget => break,
            RunEnd::LineSearchFailed => {
                if restarts == opts.max_restarts || iterations >= opts.max_iter {
                    break;
                }
                restarts += 1;
                let mut rng = ChaCha8Rng::seed_from_u64(restarts as u64);
                let scale = 1e-3 * restarts as f64;
                let eta = best.eta.map(|e| e + scale * (1.0 + e.abs()) * rng.random_range(-1.0..1.0));
                current = match obj.point(eta) {
                    Some(p) => p,
                    None => best.clone(),
                };
            }
        }
    }

    if best.grad_norm > opts.grad_tol {
        return Err(Error::MaxIterations { iterations, gradient_norm: best.grad_norm });
    }
    let theta_hat = obj.params(&best.eta);
    jacobian_delta(spec, &theta_hat)?;
    Ok(FitResult {
        theta_hat,
        discrepancy_value: best.f,
        gradient_norm: best.grad_norm,
        iterations,
        converged: true,
        restarts,
        trace,
        avar: None,
        stage1: None,
        el: None,
        skipped_reason: None,
    })
}

/// Equation-by-equation least squares on `target`: each endogenous variable
/// is regressed on its free predictors, `Ψ` from the residual variances and
/// `Φ` from the Cholesky factor of the covariate block.
pub fn initial_params(spec: &SemSpec, target: &SymMatrix) -> Result<SemParams> {
    let (d, c) = (spec.d(), spec.c());
    let p = spec.p();
    if target.dim() != p {
        return Err(Error::DimensionMismatch("target does not match the model".into()));
    }
    let s = target.as_matrix();
    let mut mats = spec.fixed().clone();
    for i in 0..d {
        let mut response = DVector::zeros(p);
        response[i] = 1.0;
        let mut predictors = Vec::new();
        let mut targets = Vec::new();
        for j in 0..i {
            if spec.free().iter().any(|f| f.target == Target::B(i, j)) {
                predictors.push(j);
                targets.push(Target::B(i, j));
            } else {
                response[j] -= mats.b[(i, j)];
            }
        }
        for k in 0..c {
            if spec.free().iter().any(|f| f.target == Target::Gamma(i, k)) {
                predictors.push(d + k);
                targets.push(Target::Gamma(i, k));
            } else {
                response[d + k] -= mats.gamma[(i, k)];
            }
        }
        let s_r = s * &response;
        let var_r = response.dot(&s_r);
        let mut resid_var = var_r;
        if !predictors.is_empty() {
            let np = predictors.len();
            let spp = SymMatrix::symmetrize(DMatrix::from_fn(np, np, |a, b| s[(predictors[a], predictors[b])]));
            let spr = DMatrix::from_fn(np, 1, |a, _| s_r[predictors[a]]);
            let coef = solve_pd_matrix(&spp, &spr)?;
            for (a, t) in targets.iter().enumerate() {
                match *t {
                    Target::B(i, j) => mats.b[(i, j)] = coef[a],
                    Target::Gamma(i, k) => mats.gamma[(i, k)] = coef[a],
                    _ => unreachable!(),
                }
            }
            resid_var -= (spr.transpose() * &coef)[(0, 0)];
        }
        if spec.free().iter().any(|f| f.target == Target::Psi(i)) {
            mats.psi[i] = resid_var.max(1e-3 * s[(i, i)]).max(f64::MIN_POSITIVE);
        }
    }
    if c > 0 {
        let sxx = SymMatrix::symmetrize(s.view((d, d), (c, c)).into_owned());
        let l = cholesky(&sxx)?;
        for f in spec.free() {
            if let Target::PhiChol(i, j) = f.target {
                mats.phi_chol[(i, j)] = l[(i, j)];
            }
        }
    }
    Ok(spec.pack(&mats))
}

/// Plain MDF fit to the sample covariance.
pub fn fit_plain(data: &DataMatrix, spec: &SemSpec, kind: &DiscrepancyKind) -> Result<FitResult> {
    check_data(data, spec)?;
    let s = sample_cov(data);
    let init = initial_params(spec, &s)?;
    let mut fit = fit_mdf(&s, spec, kind, &init)?;
    fit.avar = asymptotics::plain_avar(data, spec, &fit.theta_hat).ok();
    Ok(fit)
}

fn check_data(data: &DataMatrix, spec: &SemSpec) -> Result<()> {
    if data.d() != spec.d() || data.c() != spec.c() {
        return Err(Error::DimensionMismatch(format!(
            "data has (d, c) = ({}, {}), model has ({}, {})",
            data.d(),
            data.c(),
            spec.d(),
            spec.c()
        )));
    }
    Ok(())
}

/// Constraint rows for `side` with residuals taken at `theta`.
pub fn side_constraints(
    data: &DataMatrix,
    spec: &SemSpec,
    theta: &SemParams,
    side: &SideInfoSpec,
) -> Result<ConstraintMatrix> {
    match side.kind {
        SideInfoKind::Independence => independence_constraints(&residuals(spec, theta, data)?, &data.x(), side),
        SideInfoKind::Medians => median_constraints(&data.x(), side),
    }
}

/// Two-stage EL-weighted fit. A sample whose constraint hull misses the
/// origin yields a result marked skipped that carries the stage-1 estimate.
pub fn fit_el(data: &DataMatrix, spec: &SemSpec, kind: &DiscrepancyKind, side: &SideInfoSpec) -> Result<FitResult> {
    let stage1 = fit_plain(data, spec, kind)?;
    fit_el_from(data, spec, kind, side, stage1)
}

/// Stages two to six of [`fit_el`], given a stage-1 fit.
pub fn fit_el_from(
    data: &DataMatrix,
    spec: &SemSpec,
    kind: &DiscrepancyKind,
    side: &SideInfoSpec,
    stage1: FitResult,
) -> Result<FitResult> {
    let u = side_constraints(data, spec, &stage1.theta_hat, side)?;
    let sol = match solve_dual(&u, &SolverOptions::default()) {
        Ok(sol) => sol,
        Err(Error::NotInHull) => {
            let mut skipped = stage1.clone();
            skipped.stage1 = Some(stage1.theta_hat);
            skipped.skipped_reason = Some("not_in_hull".into());
            return Ok(skipped);
        }
        Err(e) => return Err(e),
    };
    let mut fit = fit_el_weighted(data, spec, kind, &stage1, sol)?;
    fit.avar = asymptotics::el_avar(data, spec, &fit.theta_hat, side).ok();
    Ok(fit)
}

/// Refit on the EL-weighted covariance for a given dual solution.
pub fn fit_el_weighted(
    data: &DataMatrix,
    spec: &SemSpec,
    kind: &DiscrepancyKind,
    stage1: &FitResult,
    sol: ElSolution,
) -> Result<FitResult> {
    let s_hat = el_weighted_cov(data, &sol)?;
    let mut fit = fit_mdf(&s_hat, spec, kind, &stage1.theta_hat)?;
    fit.stage1 = Some(stage1.theta_hat.clone());
    fit.el = Some(sol);
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{vecs, vecs_len};
    use crate::sem::{FreeParam, ModelMatrices};

    fn diag(v: &[f64]) -> SymMatrix {
        SymMatrix::from_diagonal(v)
    }

    fn random_pd(rng: &mut ChaCha8Rng, p: usize) -> SymMatrix {
        let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        SymMatrix::symmetrize(&a * a.transpose() + DMatrix::identity(p, p) * 0.2)
    }

    fn truth(spec: &SemSpec) -> SemParams {
        let mut m = ModelMatrices::zeros(2, 2);
        m.b[(1, 0)] = 1.0;
        m.gamma[(0, 1)] = 1.0;
        m.gamma[(1, 1)] = -1.0;
        m.gamma[(1, 0)] = 0.5;
        m.psi = DVector::from_element(2, 1.4);
        m.phi_chol = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        spec.pack(&m)
    }

    #[test]
    fn ml_examples() {
        let s = diag(&[2.0, 1.0]);
        assert!((f_ml(&s, &SymMatrix::identity(2)).unwrap() - (1.0 - 2f64.ln())).abs() < 1e-14);
        assert_eq!(f_ml(&s, &s).unwrap(), 0.0);
        assert!(matches!(f_ml(&s, &diag(&[1.0, -1.0])), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn ml_matches_determinant_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let s = random_pd(&mut rng, 4);
            let sigma = random_pd(&mut rng, 4);
            let inv = sigma.as_matrix().clone().try_inverse().unwrap();
            let direct = sigma.as_matrix().determinant().ln() - s.as_matrix().determinant().ln()
                + (s.as_matrix() * inv).trace()
                - 4.0;
            assert!((f_ml(&s, &sigma).unwrap() - direct).abs() < 1e-10 * direct.max(1.0));
        }
    }

    #[test]
    fn ml_congruence_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let s = random_pd(&mut rng, 4);
            let sigma = random_pd(&mut rng, 4);
            let t = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0)) + DMatrix::identity(4, 4) * 2.0;
            let congr = |m: &SymMatrix| SymMatrix::symmetrize(&t * m.as_matrix() * t.transpose());
            let a = f_ml(&s, &sigma).unwrap();
            let b = f_ml(&congr(&s), &congr(&sigma)).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn gls_examples() {
        let s = diag(&[2.0, 1.0]);
        let id = SymMatrix::identity(2);
        assert!((f_gls(&s, &id, &id).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(f_gls(&s, &s, &id).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_pd(&mut rng, 3);
        let b = random_pd(&mut rng, 3);
        let frob = (a.as_matrix() - b.as_matrix()).norm_squared();
        assert!((f_gls(&a, &b, &SymMatrix::identity(3)).unwrap() - frob).abs() < 1e-12);
        assert!(matches!(f_gls(&a, &b, &diag(&[1.0, 0.0, 1.0])), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn discrepancy_axioms() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let s = random_pd(&mut rng, 3);
            let sigma = random_pd(&mut rng, 3);
            let ml = f_ml(&s, &sigma).unwrap();
            let gls = f_gls(&s, &sigma, &s).unwrap();
            assert!(ml >= 0.0 && gls >= 0.0);
            let gap = (s.as_matrix() - sigma.as_matrix()).norm();
            if ml < 1e-12 || gls < 1e-12 {
                assert!(gap < 1e-5);
            }
        }
    }

    #[test]
    fn matrix_gradients_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_pd(&mut rng, 3);
        let sigma = random_pd(&mut rng, 3);
        let w = random_pd(&mut rng, 3);
        let w_inv = inverse_pd(&w).unwrap().into_matrix();
        let (_, g_ml) = ml_value(&s, &sigma).unwrap();
        let (_, g_gls) = gls_value(&s, &w_inv, &sigma);
        let analytic_ml = vecs_gradient(&g_ml);
        let analytic_gls = vecs_gradient(&g_gls);
        let base = vecs(&sigma).into_data();
        for k in 0..vecs_len(3) {
            let h = 1e-6;
            let shifted = |sign: f64| {
                let mut v = base.clone();
                v[k] += sign * h;
                crate::numkit::unvecs(&crate::numkit::VecsVector::new(v).unwrap())
            };
            let fd_ml = (f_ml(&s, &shifted(1.0)).unwrap() - f_ml(&s, &shifted(-1.0)).unwrap()) / (2.0 * h);
            let fd_gls = (f_gls(&s, &shifted(1.0), &w).unwrap() - f_gls(&s, &shifted(-1.0), &w).unwrap()) / (2.0 * h);
            assert!((fd_ml - analytic_ml[k]).abs() < 1e-6);
            assert!((fd_gls - analytic_gls[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn noiseless_recovery_both_discrepancies() {
        let spec = SemSpec::two_equation(false);
        let theta = truth(&spec);
        let target = structured_sigma(&spec, &theta).unwrap();
        let mut init = theta.clone();
        for (k, v) in init.theta.iter_mut().enumerate() {
            *v *= 1.0 + 0.2 * if k % 2 == 0 { 1.0 } else { -1.0 };
        }
        for kind in [DiscrepancyKind::Ml, DiscrepancyKind::Gls { weight: GlsWeight::SampleCov }] {
            let fit = fit_mdf(&target, &spec, &kind, &init).unwrap();
            assert!((&fit.theta_hat.theta - &theta.theta).amax() < 1e-4, "{kind:?}");
            assert!(fit.discrepancy_value <= 1e-10);
            assert!(fit.gradient_norm <= 1e-8);
            assert!(fit.trace.windows(2).all(|w| w[1] <= w[0]) || fit.restarts > 0);
            assert!(fit.discrepancy_value <= fit.trace[0]);
        }
    }

    #[test]
    fn least_squares_init_is_exact_on_model_covariance() {
        let spec = SemSpec::two_equation(false);
        let theta = truth(&spec);
        let init = initial_params(&spec, &structured_sigma(&spec, &theta).unwrap()).unwrap();
        assert!((init.theta - theta.theta).amax() < 1e-10);
    }

    #[test]
    fn saturated_model_fits_exactly() {
        let mut free = Vec::new();
        for i in 0..2 {
            for j in 0..2 {
                free.push(FreeParam { label: format!("g{i}{j}"), target: Target::Gamma(i, j) });
            }
        }
        free.push(FreeParam { label: "b10".into(), target: Target::B(1, 0) });
        free.push(FreeParam { label: "psi1".into(), target: Target::Psi(0) });
        free.push(FreeParam { label: "psi2".into(), target: Target::Psi(1) });
        for (i, j) in [(0, 0), (1, 0), (1, 1)] {
            free.push(FreeParam { label: format!("l{i}{j}"), target: Target::PhiChol(i, j) });
        }
        let spec = SemSpec::new(2, 2, ModelMatrices::zeros(2, 2), free).unwrap();
        assert_eq!(spec.q(), vecs_len(4));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let target = random_pd(&mut rng, 4);
        let init = initial_params(&spec, &target).unwrap();
        for kind in [DiscrepancyKind::Ml, DiscrepancyKind::Gls { weight: GlsWeight::Identity }] {
            let fit = fit_mdf(&target, &spec, &kind, &init).unwrap();
            let fitted = structured_sigma(&spec, &fit.theta_hat).unwrap();
            assert!((fitted.as_matrix() - target.as_matrix()).amax() < 1e-8);
            assert!(fit.discrepancy_value < 1e-12);
        }
    }

    #[test]
    fn packing_order_does_not_matter() {
        let spec = SemSpec::two_equation(false);
        let theta = truth(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let noise = random_pd(&mut rng, 4).into_matrix() * 0.1;
        let target = SymMatrix::symmetrize(structured_sigma(&spec, &theta).unwrap().into_matrix() + noise);
        let order: Vec<usize> = vec![8, 3, 5, 0, 7, 1, 6, 2, 4];
        let other = spec.with_order(&order).unwrap();
        let a = fit_mdf(&target, &spec, &DiscrepancyKind::Ml, &initial_params(&spec, &target).unwrap()).unwrap();
        let b = fit_mdf(&target, &other, &DiscrepancyKind::Ml, &initial_params(&other, &target).unwrap()).unwrap();
        for (k, &src) in order.iter().enumerate() {
            assert!((b.theta_hat.theta[k] - a.theta_hat.theta[src]).abs() < 1e-6);
        }
    }

    #[test]
    fn given_weight_validated() {
        let spec = SemSpec::two_equation(false);
        let target = structured_sigma(&spec, &truth(&spec)).unwrap();
        let init = truth(&spec);
        let bad = DiscrepancyKind::Gls { weight: GlsWeight::Given(vec![vec![1.0; 3]; 3]) };
        assert!(matches!(fit_mdf(&target, &spec, &bad, &init), Err(Error::DimensionMismatch(_))));
        let id: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let given = DiscrepancyKind::Gls { weight: GlsWeight::Given(id) };
        assert!(fit_mdf(&target, &spec, &given, &init).unwrap().discrepancy_value < 1e-12);
    }

    #[test]
    fn discrepancy_kind_serde() {
        let ml: DiscrepancyKind = serde_json::from_str(r#"{"variant":"ml"}"#).unwrap();
        assert_eq!(ml, DiscrepancyKind::Ml);
        let gls: DiscrepancyKind = serde_json::from_str(r#"{"variant":"gls"}"#).unwrap();
        assert_eq!(gls, DiscrepancyKind::Gls { weight: GlsWeight::SampleCov });
        let gls: DiscrepancyKind = serde_json::from_str(r#"{"variant":"gls","weight":"identity"}"#).unwrap();
        assert_eq!(gls, DiscrepancyKind::Gls { weight: GlsWeight::Identity });
        assert!(serde_json::from_str::<DiscrepancyKind>(r#"{"variant":"gls","weight":"identity","x":1}"#).is_err());
    }
}
