#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Random instance whose rows satisfy `Σ π*_j u_j = 0` for a known positive
/// `π*`, so the origin lies in the interior of the hull. Also returns `π*`.
pub fn feasible_instance<R: Rng>(rng: &mut R, n: usize, m: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut u = DMatrix::from_fn(n, m, |_, k| match k % 3 {
        0 => rng.random_range(-1.0..1.0),
        1 => -rng.random::<f64>().ln() - 1.0,
        _ => {
            let a: f64 = rng.random_range(-1.0..1.0);
            a * a * a * 2.0
        }
    });
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let pi = DVector::from_iterator(n, raw.into_iter().map(|w| w / total));
    let center = u.transpose() * &pi;
    for j in 0..n {
        for k in 0..m {
            u[(j, k)] -= center[k];
        }
    }
    (u, pi)
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &bi)| {
            let mut r = row.clone();
            r.push(bi);
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, piv);
        for i in (col + 1)..n {
            let f = m[i][col] / m[col][col];
            for k in col..=n {
                m[i][k] -= f * m[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|k| m[i][k] * x[k]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    x
}

/// Maximizes `Σ log π_j` over `{π > 0, Σπ_j = 1, Σπ_j u_j = 0}` by projected
/// gradient ascent on the affine constraint set, starting from a feasible
/// interior point. Returns the maximum.
pub fn primal_log_el(u: &DMatrix<f64>, start: &DVector<f64>, iterations: usize) -> f64 {
    let (n, m) = u.shape();
    // constraint rows: 1ᵀ and the columns of u
    let a: Vec<Vec<f64>> =
        std::iter::once(vec![1.0; n]).chain((0..m).map(|k| u.column(k).iter().copied().collect())).collect();
    let r = a.len();
    let gram: Vec<Vec<f64>> =
        (0..r).map(|i| (0..r).map(|k| (0..n).map(|j| a[i][j] * a[k][j]).sum()).collect()).collect();
    let project = |g: &[f64]| -> Vec<f64> {
        let rhs: Vec<f64> = a.iter().map(|row| row.iter().zip(g).map(|(x, y)| x * y).sum()).collect();
        let coef = gauss_solve(&gram, &rhs);
        (0..n).map(|j| g[j] - (0..r).map(|i| coef[i] * a[i][j]).sum::<f64>()).collect()
    };
    let objective = |p: &[f64]| p.iter().map(|x| x.ln()).sum::<f64>();

    let mut pi: Vec<f64> = start.iter().copied().collect();
    let mut f = objective(&pi);
    let mut step = 1e-3;
    for _ in 0..iterations {
        let grad: Vec<f64> = pi.iter().map(|x| 1.0 / x).collect();
        let d = project(&grad);
        let dd: f64 = d.iter().map(|x| x * x).sum();
        if dd.sqrt() < 1e-13 {
            break;
        }
        step *= 2.0;
        loop {
            let cand: Vec<f64> = pi.iter().zip(&d).map(|(p, di)| p + step * di).collect();
            if cand.iter().all(|&x| x > 0.0) {
                let fc = objective(&cand);
                if fc >= f + 1e-4 * step * dd {
                    pi = cand;
                    f = fc;
                    break;
                }
            }
            step *= 0.5;
            if step < 1e-300 {
                return f;
            }
        }
    }
    f
}

/// Unbiased sample variance.
pub fn sample_var(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().min()
}
