//! Empirical-likelihood weights for a set of moment constraints.
//!
//! Given rows `u_1, …, u_n ∈ R^m`, the EL weights maximise `Σ log π_j` subject
//! to `Σ π_j = 1` and `Σ π_j u_j = 0`. The maximiser is
//! `π_j = 1 / (n (1 + ζᵀu_j))` where `ζ` minimises the convex dual
//! `f(ζ) = −Σ log(1 + ζᵀu_j)`. [`solve_dual`] runs damped Newton on `f`
//! starting from `ζ = 0`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numkit::{cholesky_raw, eigen_bounds, SymMatrix};
use crate::{Error, Result};

/// Relative eigenvalue floor below which `n⁻¹ Σ u_j u_jᵀ` counts as singular.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Rows `u(Z_j)` of an `n × m` constraint evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMatrix {
    rows: DMatrix<f64>,
}

impl ConstraintMatrix {
    pub fn new(rows: DMatrix<f64>) -> Result<Self> {
        let (n, m) = rows.shape();
        if m == 0 {
            return Err(Error::InvalidInput("constraint dimension must be at least 1".into()));
        }
        if n < m + 1 {
            return Err(Error::InvalidInput(format!("need n >= m + 1 constraint rows, got n = {n}, m = {m}")));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("constraint rows must be finite".into()));
        }
        Ok(ConstraintMatrix { rows })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::DimensionMismatch("ragged constraint rows".into()));
        }
        Self::new(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn m(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn row(&self, j: usize) -> DVector<f64> {
        self.rows.row(j).transpose()
    }

    /// `n⁻¹ Σ u_j u_jᵀ`.
    pub fn second_moment(&self) -> SymMatrix {
        SymMatrix::symmetrize(self.rows.transpose() * &self.rows / self.n() as f64)
    }

    pub fn column_means(&self) -> DVector<f64> {
        self.rows.row_mean().transpose()
    }
}

/// Quantities entering the existence and size bounds for `ζ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElDiagnostics {
    /// `‖ū‖`.
    pub x_bar_norm: f64,
    /// `max_j ‖u_j‖`.
    pub x_star: f64,
    /// Smallest eigenvalue of `n⁻¹ Σ u_j u_jᵀ`.
    pub lambda_n: f64,
    /// Largest eigenvalue of `n⁻¹ Σ u_j u_jᵀ`.
    pub big_lambda_n: f64,
    /// `λ > 5 ‖ū‖ x*`, which guarantees a unique solution.
    pub owen_condition: bool,
    /// `‖ū‖ / (λ − ‖ū‖ x*)`, infinite when the denominator is not positive.
    pub zeta_bound: f64,
}

pub fn diagnostics(u: &ConstraintMatrix) -> ElDiagnostics {
    let x_bar_norm = u.column_means().norm();
    let x_star = (0..u.n()).map(|j| u.rows.row(j).norm()).fold(0.0, f64::max);
    let (lambda_n, big_lambda_n) = eigen_bounds(&u.second_moment());
    let gap = lambda_n - x_bar_norm * x_star;
    ElDiagnostics {
        x_bar_norm,
        x_star,
        lambda_n,
        big_lambda_n,
        owen_condition: lambda_n > 5.0 * x_bar_norm * x_star,
        zeta_bound: if gap > 0.0 { x_bar_norm / gap } else { f64::INFINITY },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop once `‖∇f‖ ≤ tol_stat · n`.
    pub tol_stat: f64,
    pub max_iter: usize,
    /// Every `1 + ζᵀu_j` must stay at or above this floor during line search.
    pub feasibility_floor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol_stat: 1e-10, max_iter: 100, feasibility_floor: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElSolution {
    pub zeta: DVector<f64>,
    pub weights: DVector<f64>,
    /// `Σ log π_j`.
    pub log_el: f64,
    pub diagnostics: ElDiagnostics,
    pub converged: bool,
    pub iterations: usize,
    /// `‖Σ_j u_j / (1 + ζᵀu_j)‖` at the returned `ζ`.
    pub stationarity: f64,
}

impl ElSolution {
    /// The uniform solution `ζ = 0`, `π_j = 1/n`.
    pub fn uniform(u: &ConstraintMatrix) -> Self {
        let n = u.n();
        ElSolution {
            zeta: DVector::zeros(u.m()),
            weights: DVector::from_element(n, 1.0 / n as f64),
            log_el: -(n as f64) * (n as f64).ln(),
            diagnostics: diagnostics(u),
            converged: true,
            iterations: 0,
            stationarity: (u.column_means() * n as f64).norm(),
        }
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    /// `Σ log(n π_j)`; zero exactly when `ζ = 0`, negative otherwise.
    pub fn log_el_ratio(&self) -> f64 {
        self.log_el + self.n() as f64 * (self.n() as f64).ln()
    }
}

struct DualState {
    f: f64,
    grad: DVector<f64>,
    denom: DVector<f64>,
}

fn dual_state(u: &DMatrix<f64>, zeta: &DVector<f64>, floor: f64) -> Option<DualState> {
    let denom = DVector::from_iterator(u.nrows(), (0..u.nrows()).map(|j| 1.0 + u.row(j).dot(&zeta.transpose())));
    if denom.iter().any(|&t| !(t >= floor)) {
        return None;
    }
    let f = -denom.iter().map(|t| t.ln()).sum::<f64>();
    let mut grad = DVector::zeros(u.ncols());
    for j in 0..u.nrows() {
        grad -= u.row(j).transpose() / denom[j];
    }
    Some(DualState { f, grad, denom })
}

fn dual_hessian(u: &DMatrix<f64>, denom: &DVector<f64>) -> DMatrix<f64> {
    let scaled = DMatrix::from_fn(u.nrows(), u.ncols(), |j, k| u[(j, k)] / denom[j]);
    scaled.transpose() * scaled
}

fn newton_direction(u: &DMatrix<f64>, st: &DualState) -> Option<DVector<f64>> {
    let h = dual_hessian(u, &st.denom);
    let l = cholesky_raw(&h).ok()?;
    let mut d = -st.grad.clone();
    let p = d.len();
    for i in 0..p {
        let mut s = d[i];
        for k in 0..i {
            s -= l[(i, k)] * d[k];
        }
        d[i] = s / l[(i, i)];
    }
    for i in (0..p).rev() {
        let mut s = d[i];
        for k in (i + 1)..p {
            s -= l[(k, i)] * d[k];
        }
        d[i] = s / l[(i, i)];
    }
    Some(d)
}

/// Any coordinate whose entries all share one strict sign rules out a solution.
fn sign_obstruction(u: &DMatrix<f64>) -> bool {
    (0..u.ncols()).any(|k| {
        let col = u.column(k);
        col.iter().all(|&v| v > 0.0) || col.iter().all(|&v| v < 0.0)
    })
}

/// Solves `Σ u_j / (1 + ζᵀu_j) = 0` by damped Newton on the convex dual.
pub fn solve_dual(u: &ConstraintMatrix, opts: &SolverOptions) -> Result<ElSolution> {
    let diag = diagnostics(u);
    if !(diag.big_lambda_n > 0.0) || diag.lambda_n <= DEGENERACY_TOL * diag.big_lambda_n {
        return Err(Error::DegenerateConstraints { lambda_min: diag.lambda_n });
    }
    let rows = &u.rows;
    if sign_obstruction(rows) {
        return Err(Error::NotInHull);
    }
    let n = u.n() as f64;
    let tol = opts.tol_stat * n;
    let divergence = 1e10 / diag.x_star.max(f64::MIN_POSITIVE);

    let mut zeta = DVector::zeros(u.m());
    let mut st = dual_state(rows, &zeta, opts.feasibility_floor).expect("zeta = 0 is always feasible");
    let mut iterations = 0;
    let mut converged = st.grad.norm() <= tol;

    while !converged {
        if iterations >= opts.max_iter {
            return Err(Error::MaxIterations { iterations, gradient_norm: st.grad.norm() });
        }
        iterations += 1;
        let dir = newton_direction(rows, &st).ok_or(Error::NotInHull)?;
        let slope = st.grad.dot(&dir);
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-20 {
            let cand = &zeta + &dir * step;
            if let Some(next) = dual_state(rows, &cand, opts.feasibility_floor) {
                let armijo = next.f <= st.f + 1e-4 * step * slope;
                let gradient_drop = step == 1.0 && next.grad.norm() < st.grad.norm();
                if armijo || gradient_drop {
                    accepted = Some((cand, next));
                    break;
                }
            }
            step *= 0.5;
        }
        let (cand, next) = accepted.ok_or(Error::NotInHull)?;
        zeta = cand;
        st = next;
        if zeta.norm() > divergence {
            return Err(Error::NotInHull);
        }
        converged = st.grad.norm() <= tol;
    }

    // A few extra full Newton steps drive the stationarity residual to
    // rounding level so that the weights sum to one to machine precision.
    for _ in 0..3 {
        let Some(dir) = newton_direction(rows, &st) else { break };
        let cand = &zeta + dir;
        match dual_state(rows, &cand, opts.feasibility_floor) {
            Some(next) if next.grad.norm() < st.grad.norm() => {
                zeta = cand;
                st = next;
            }
            _ => break,
        }
    }

    let weights = st.denom.map(|t| 1.0 / (n * t));
    let log_el = weights.iter().map(|w| w.ln()).sum();
    Ok(ElSolution { zeta, weights, log_el, diagnostics: diag, converged, iterations, stationarity: st.grad.norm() })
}

/// `Σ_j π_j v_j` for an `n × r` matrix of values.
pub fn weighted_mean(sol: &ElSolution, values: &DMatrix<f64>) -> Result<DVector<f64>> {
    if values.nrows() != sol.n() {
        return Err(Error::DimensionMismatch(format!("values have {} rows, weights have {}", values.nrows(), sol.n())));
    }
    Ok(values.transpose() * &sol.weights)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl BoundCheck {
    fn le(lhs: f64, rhs: f64) -> Self {
        // relative slack for rounding in lhs
        BoundCheck { lhs, rhs, holds: lhs <= rhs * (1.0 + 1e-9) + 1e-15 }
    }

    fn lt(lhs: f64, rhs: f64) -> Self {
        BoundCheck { lhs, rhs, holds: lhs < rhs }
    }
}

/// Outcome of checking the multiplier against the size bounds that hold
/// whenever `λ > 5‖ū‖x*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub owen_condition: bool,
    /// `‖ζ‖ ≤ ‖ū‖ / (λ − ‖ū‖x*)`.
    pub zeta_norm: BoundCheck,
    /// `‖ζ‖ x* < 1/4`.
    pub zeta_times_x_star: BoundCheck,
    /// `ζᵀ𝕊ζ ≤ Λ‖ū‖² / (λ − ‖ū‖x*)²`.
    pub quadratic_form: BoundCheck,
    /// `‖ζ − 𝕊⁻¹ū‖² ≤ 2(1/λ + Λ/(9λ²)) ‖ζ‖⁴ x⁽⁴⁾`.
    pub linearization: BoundCheck,
    /// Lower witness for `sup_{‖v‖=1} n⁻¹ Σ (vᵀu_j)⁴`.
    pub x4: f64,
}

impl BoundReport {
    pub fn all_hold(&self) -> bool {
        self.zeta_norm.holds && self.zeta_times_x_star.holds && self.quadratic_form.holds && self.linearization.holds
    }

    /// A bound failing while the existence condition holds points at a solver bug.
    pub fn violated(&self) -> bool {
        self.owen_condition && !self.all_hold()
    }
}

fn quartic_moment(u: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    let proj = u * v;
    proj.iter().map(|t| t.powi(4)).sum::<f64>() / u.nrows() as f64
}

/// Maximises `n⁻¹ Σ (vᵀu_j)⁴` over unit `v` from many starts. The objective
/// is convex, so the normalised-gradient iteration is monotone from each start.
fn fourth_moment_sup(u: &DMatrix<f64>, extra: &[DVector<f64>]) -> f64 {
    let m = u.ncols();
    let s = u.transpose() * u;
    let eig = s.symmetric_eigen();
    let mut starts: Vec<DVector<f64>> = (0..m).map(|k| eig.eigenvectors.column(k).into_owned()).collect();
    starts.extend(extra.iter().filter(|v| v.norm() > 0.0).map(|v| v.normalize()));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_4a11);
    for _ in 0..64 {
        let v = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        if v.norm() > 0.0 {
            starts.push(v.normalize());
        }
    }
    let mut best = 0.0f64;
    for mut v in starts {
        let mut val = quartic_moment(u, &v);
        for _ in 0..50 {
            let proj = u * &v;
            let g = u.transpose() * proj.map(|t| t.powi(3));
            if g.norm() == 0.0 {
                break;
            }
            let next = g.normalize();
            let nv = quartic_moment(u, &next);
            if nv <= val {
                break;
            }
            v = next;
            val = nv;
        }
        best = best.max(val);
    }
    best
}

pub fn verify_lemma_bounds(sol: &ElSolution, u: &ConstraintMatrix) -> BoundReport {
    let d = diagnostics(u);
    let rows = &u.rows;
    let zn = sol.zeta.norm();
    let gap = d.lambda_n - d.x_bar_norm * d.x_star;
    let s = u.second_moment();
    let quad = (sol.zeta.transpose() * s.as_matrix() * &sol.zeta)[(0, 0)];
    let x_bar = u.column_means();

    let zeta_rhs = if gap > 0.0 { d.x_bar_norm / gap } else { f64::INFINITY };
    let quad_rhs = if gap > 0.0 { d.big_lambda_n * d.x_bar_norm.powi(2) / gap.powi(2) } else { f64::INFINITY };

    let x4 = fourth_moment_sup(rows, &[sol.zeta.clone(), x_bar.clone()]);
    let lin_lhs = match crate::numkit::solve_pd(&s, &x_bar) {
        Ok(sx) => (&sol.zeta - sx).norm_squared(),
        Err(_) => f64::INFINITY,
    };
    let lam = d.lambda_n;
    let lin_rhs = if lam > 0.0 {
        2.0 * (1.0 / lam + d.big_lambda_n / (9.0 * lam * lam)) * zn.powi(4) * x4
    } else {
        f64::INFINITY
    };

    BoundReport {
        owen_condition: d.owen_condition,
        zeta_norm: BoundCheck::le(zn, zeta_rhs),
        zeta_times_x_star: BoundCheck::lt(zn * d.x_star, 0.25),
        quadratic_form: BoundCheck::le(quad, quad_rhs),
        // tiny absolute slack: at ζ ≈ 0 both sides are at rounding level
        linearization: BoundCheck { lhs: lin_lhs, rhs: lin_rhs, holds: lin_lhs <= lin_rhs * (1.0 + 1e-9) + 1e-24 },
        x4,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn cm(rows: &[&[f64]]) -> ConstraintMatrix {
        ConstraintMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn centered_normal(rng: &mut ChaCha8Rng, n: usize, m: usize) -> ConstraintMatrix {
        let mut rows = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mean = rows.row_mean();
        for j in 0..n {
            let r = rows.row(j) - &mean;
            rows.set_row(j, &r);
        }
        ConstraintMatrix::new(rows).unwrap()
    }

    #[test]
    fn constraint_matrix_shape_checks() {
        assert!(ConstraintMatrix::new(DMatrix::zeros(2, 2)).is_err());
        assert!(ConstraintMatrix::new(DMatrix::from_element(3, 1, f64::NAN)).is_err());
        assert!(ConstraintMatrix::new(DMatrix::zeros(3, 2)).is_ok());
    }

    #[test]
    fn diagnostics_symmetric_two_point() {
        let d = diagnostics(&cm(&[&[-1.0], &[1.0]]));
        assert_eq!(d.x_bar_norm, 0.0);
        assert_eq!(d.x_star, 1.0);
        assert!((d.lambda_n - 1.0).abs() < 1e-15 && (d.big_lambda_n - 1.0).abs() < 1e-15);
        assert!(d.owen_condition);
        assert_eq!(d.zeta_bound, 0.0);
    }

    #[test]
    fn diagnostics_degenerate_rows() {
        let d = diagnostics(&cm(&[&[0.0], &[0.0]]));
        assert_eq!(d.lambda_n, 0.0);
        assert!(!d.owen_condition);
        assert!(d.zeta_bound.is_infinite());
    }

    #[test]
    fn diagnostics_standard_normal_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut owen = 0;
        for _ in 0..50 {
            let rows = DMatrix::from_fn(200, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
            let d = diagnostics(&ConstraintMatrix::new(rows).unwrap());
            assert!((d.lambda_n - 1.0).abs() < 0.3);
            owen += d.owen_condition as usize;
        }
        // fails when |x̄| > 1/(5 x*) ≈ 0.07, i.e. |N(0,1)| > ~1 after scaling: about 30% of draws
        assert!(owen >= 25, "owen condition held in {owen}/50");
    }

    #[test]
    fn solve_symmetric_two_point() {
        let sol = solve_dual(&cm(&[&[-1.0], &[1.0]]), &SolverOptions::default()).unwrap();
        assert_eq!(sol.zeta[0], 0.0);
        assert_eq!(sol.weights.as_slice(), &[0.5, 0.5]);
        assert_eq!(sol.iterations, 0);
        assert!(sol.log_el_ratio().abs() < 1e-15);
    }

    #[test]
    fn solve_asymmetric_two_point() {
        // −0.5/(1 − 0.5ζ) + 1/(1 + ζ) = 0  ⇒  ζ = 0.5
        let u = cm(&[&[-0.5], &[1.0]]);
        let sol = solve_dual(&u, &SolverOptions::default()).unwrap();
        assert!((sol.zeta[0] - 0.5).abs() < 1e-12);
        assert!((sol.weights[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((sol.weights[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((sol.log_el - ((2.0f64 / 3.0).ln() + (1.0f64 / 3.0).ln())).abs() < 1e-12);
    }

    #[test]
    fn two_point_bounds() {
        // ū = 0.25, x* = 1, λ = Λ = 0.625: the existence condition fails here,
        // and so does ‖ζ‖x* < 1/4 (ζ = 0.5); the remaining bounds still hold.
        let u = cm(&[&[-0.5], &[1.0]]);
        let sol = solve_dual(&u, &SolverOptions::default()).unwrap();
        let r = verify_lemma_bounds(&sol, &u);
        assert!(!r.owen_condition);
        assert!(r.zeta_norm.holds && (r.zeta_norm.rhs - 0.25 / 0.375).abs() < 1e-12);
        assert!(r.quadratic_form.holds);
        assert!(r.linearization.holds);
        assert!((r.x4 - 0.53125).abs() < 1e-12);
        assert!(!r.zeta_times_x_star.holds);
        assert!(!r.violated());
    }

    #[test]
    fn zero_multiplier_bounds_hold() {
        let u = cm(&[&[-1.0, 0.5], &[1.0, -0.5], &[0.0, 1.0], &[0.0, -1.0]]);
        let sol = solve_dual(&u, &SolverOptions::default()).unwrap();
        assert!(sol.zeta.norm() < 1e-14);
        assert!(verify_lemma_bounds(&sol, &u).all_hold());
    }

    #[test]
    fn outside_hull_is_error() {
        let u = cm(&[&[1.0], &[2.0], &[0.5]]);
        assert_eq!(solve_dual(&u, &SolverOptions::default()), Err(Error::NotInHull));
        // hull excludes zero without any single-sign column
        let u = cm(&[&[1.0, -0.5], &[-0.5, 1.0], &[1.0, 1.0], &[2.0, 0.5]]);
        assert!(matches!(solve_dual(&u, &SolverOptions::default()), Err(Error::NotInHull)));
    }

    #[test]
    fn degenerate_is_error() {
        let u = cm(&[&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]]);
        assert!(matches!(solve_dual(&u, &SolverOptions::default()), Err(Error::DegenerateConstraints { .. })));
        let u = cm(&[&[1.0, 2.0], &[-1.0, -2.0], &[0.5, 1.0]]);
        assert!(matches!(solve_dual(&u, &SolverOptions::default()), Err(Error::DegenerateConstraints { .. })));
    }

    #[test]
    fn max_iterations_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows = DMatrix::from_fn(50, 2, |_, _| rng.sample::<f64, _>(StandardNormal) + 0.3);
        let u = ConstraintMatrix::new(rows).unwrap();
        let opts = SolverOptions { max_iter: 1, ..Default::default() };
        assert!(matches!(solve_dual(&u, &opts), Err(Error::MaxIterations { iterations: 1, .. })));
    }

    #[test]
    fn random_instances_satisfy_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..100 {
            let m = 1 + i % 4;
            let mut rows = DMatrix::from_fn(100, m, |_, _| rng.sample::<f64, _>(StandardNormal));
            // shift off-center so ζ ≠ 0
            for v in rows.iter_mut() {
                *v += 0.05;
            }
            let u = ConstraintMatrix::new(rows).unwrap();
            let sol = solve_dual(&u, &SolverOptions::default()).unwrap();
            assert!(sol.converged);
            assert!(sol.weights.iter().all(|&w| w > 0.0));
            assert!((sol.weights.sum() - 1.0).abs() < 1e-12);
            assert!(sol.stationarity <= 1e-10 * 100.0);
            let wm = weighted_mean(&sol, u.rows()).unwrap();
            assert!(wm.norm() < 1e-10);
            assert!(sol.log_el_ratio() < 0.0);
            let report = verify_lemma_bounds(&sol, &u);
            assert!(!report.violated(), "bounds violated: {report:?}");
        }
    }

    #[test]
    fn centered_rows_give_zero_multiplier() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = centered_normal(&mut rng, 60, 3);
        let sol = solve_dual(&u, &SolverOptions::default()).unwrap();
        assert!(sol.zeta.norm() < 1e-12);
        assert!(sol.log_el_ratio().abs() < 1e-12);
    }

    #[test]
    fn weighted_mean_uniform_is_sample_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = centered_normal(&mut rng, 30, 2);
        let sol = solve_dual(&u, &SolverOptions::default()).unwrap();
        let values = DMatrix::from_fn(30, 3, |i, j| (i * (j + 1)) as f64);
        let wm = weighted_mean(&sol, &values).unwrap();
        let plain = values.row_mean().transpose();
        assert!((wm - plain).amax() < 1e-10);
        assert!(weighted_mean(&sol, &DMatrix::zeros(29, 1)).is_err());
    }
}
