//! Restarted GMRES for matrix-free fixed-point problems, and a dense LU wrapper.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Result of a GMRES run.
#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Euclidean norm of `b − A x` at each inner step, relative to `‖b‖`.
    pub history: Vec<f64>,
    pub converged: bool,
}

/// Solves `A x = b` with restarted GMRES(m). `apply(v, out)` writes `A v` into `out`.
pub fn gmres<F>(mut apply: F, b: &[f64], x0: &[f64], tol: f64, restart: usize, max_iter: usize) -> GmresOutcome
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = b.len();
    let mut x = x0.to_vec();
    let bnorm = norm(b).max(f64::MIN_POSITIVE);
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut ax = vec![0.0; n];
    let m = restart.max(1).min(n.max(1));

    while iterations < max_iter {
        apply(&x, &mut ax);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        if beta / bnorm <= tol {
            history.push(beta / bnorm);
            return GmresOutcome { x, iterations, history, converged: true };
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut hess = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            let mut w = vec![0.0; n];
            apply(&basis[k], &mut w);
            iterations += 1;
            for (i, v) in basis.iter().enumerate() {
                let h = dot(&w, v);
                hess[i][k] = h;
                axpy(-h, v, &mut w);
            }
            // second Gram-Schmidt pass for stability
            for (i, v) in basis.iter().enumerate() {
                let h = dot(&w, v);
                hess[i][k] += h;
                axpy(-h, v, &mut w);
            }
            let wn = norm(&w);
            hess[k + 1][k] = wn;
            for i in 0..k {
                let t = cs[i] * hess[i][k] + sn[i] * hess[i + 1][k];
                hess[i + 1][k] = -sn[i] * hess[i][k] + cs[i] * hess[i + 1][k];
                hess[i][k] = t;
            }
            let den = hess[k][k].hypot(hess[k + 1][k]);
            if den == 0.0 {
                k_used = k;
                break;
            }
            cs[k] = hess[k][k] / den;
            sn[k] = hess[k + 1][k] / den;
            hess[k][k] = den;
            hess[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            let rel = g[k + 1].abs() / bnorm;
            history.push(rel);
            if rel <= tol || wn <= 1e-300 || iterations >= max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= hess[i][j] * y[j];
            }
            y[i] = s / hess[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            axpy(*yj, &basis[j], &mut x);
        }
        if k_used == 0 {
            break;
        }
    }
    apply(&x, &mut ax);
    let rel = b.iter().zip(&ax).map(|(bi, ai)| (bi - ai).powi(2)).sum::<f64>().sqrt() / bnorm;
    history.push(rel);
    GmresOutcome { x, iterations, history, converged: rel <= tol }
}

/// Dense LU solve of `A x = b` with `A` given row-major.
pub fn dense_solve(n: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Vec<f64>> {
    let mat = DMatrix::from_row_slice(n, n, &a);
    let lu = mat.lu();
    let x = lu
        .solve(&DVector::from_vec(b))
        .ok_or_else(|| Error::Singular(format!("dense LU of a {n}x{n} system")))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(format!("non-finite solution of a {n}x{n} system")));
    }
    Ok(x.as_slice().to_vec())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
