//! Multinomial logit: linear-in-features utility with fixed coefficients.
//! Small enough to fit by Newton's method, which gives the rest of the
//! workspace a fast exact baseline.

use crate::data::ChoiceDataset;
use crate::error::{Error, Result};
use crate::models::logit_link_inplace;

/// Total negative log likelihood and its gradient for coefficient vector
/// `beta` (one weight per feature, shared across alternatives).
pub fn mnl_nll(beta: &[f64], ds: &ChoiceDataset) -> Result<(f64, Vec<f64>)> {
    let k = ds.n_features();
    if beta.len() != k {
        return Err(Error::Shape(format!(
            "expected {k} coefficients for {k} features, got {}",
            beta.len()
        )));
    }
    let j = ds.alternatives();
    let mut nll = 0.0;
    let mut grad = vec![0.0; k];
    let mut v = vec![0.0; j];
    for i in 0..ds.n_individuals() {
        for t in 0..ds.tasks_per_individual() {
            let x = ds.task_features(i, t);
            for (jj, vj) in v.iter_mut().enumerate() {
                *vj = dot(beta, &x[jj * k..(jj + 1) * k]);
            }
            logit_link_inplace(&mut v);
            let c = ds.chosen(i, t);
            nll -= v[c].ln();
            for jj in 0..j {
                let w = v[jj] - if jj == c { 1.0 } else { 0.0 };
                for (gk, xk) in grad.iter_mut().zip(&x[jj * k..(jj + 1) * k]) {
                    *gk += w * xk;
                }
            }
        }
    }
    Ok((nll, grad))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fit by damped Newton iterations on the exact Hessian. The MNL NLL is
/// convex, so this converges in a handful of steps and serves as a
/// reference fit independent of the gradient-descent path.
pub fn mnl_fit_newton(ds: &ChoiceDataset, max_iter: usize, tol: f64) -> Result<Vec<f64>> {
    let k = ds.n_features();
    let j = ds.alternatives();
    let mut beta = vec![0.0; k];
    let mut v = vec![0.0; j];
    for _ in 0..max_iter {
        let mut grad = vec![0.0; k];
        let mut hess = vec![0.0; k * k];
        for i in 0..ds.n_individuals() {
            for t in 0..ds.tasks_per_individual() {
                let x = ds.task_features(i, t);
                for (jj, vj) in v.iter_mut().enumerate() {
                    *vj = dot(&beta, &x[jj * k..(jj + 1) * k]);
                }
                logit_link_inplace(&mut v);
                let c = ds.chosen(i, t);
                // mean feature vector under the model
                let mut xbar = vec![0.0; k];
                for jj in 0..j {
                    for (m, xk) in xbar.iter_mut().zip(&x[jj * k..(jj + 1) * k]) {
                        *m += v[jj] * xk;
                    }
                }
                for kk in 0..k {
                    grad[kk] += xbar[kk] - x[c * k + kk];
                }
                // Fisher information: sum_j p_j x_j x_j' - xbar xbar'
                for jj in 0..j {
                    let xj = &x[jj * k..(jj + 1) * k];
                    for a in 0..k {
                        for b in 0..k {
                            hess[a * k + b] += v[jj] * xj[a] * xj[b];
                        }
                    }
                }
                for a in 0..k {
                    for b in 0..k {
                        hess[a * k + b] -= xbar[a] * xbar[b];
                    }
                }
            }
        }
        let step = solve_linear(&mut hess, &mut grad, k)?;
        let mut sq = 0.0;
        for (bk, sk) in beta.iter_mut().zip(&step) {
            *bk -= sk;
            sq += sk * sk;
        }
        if sq.sqrt() < tol {
            return Ok(beta);
        }
    }
    Ok(beta)
}

/// Gaussian elimination with partial pivoting; consumes its inputs.
fn solve_linear(a: &mut [f64], b: &mut [f64], n: usize) -> Result<Vec<f64>> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r1, &r2| {
                a[r1 * n + col].abs().partial_cmp(&a[r2 * n + col].abs()).expect("finite")
            })
            .expect("nonempty");
        if a[pivot * n + col].abs() < 1e-12 {
            return Err(Error::NonFinite { what: "singular Hessian in Newton solve", step: col as u64 });
        }
        if pivot != col {
            for cc in 0..n {
                a.swap(col * n + cc, pivot * n + cc);
            }
            b.swap(col, pivot);
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for cc in col..n {
                a[row * n + cc] -= f * a[col * n + cc];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for cc in row + 1..n {
            s -= a[row * n + cc] * x[cc];
        }
        x[row] = s / a[row * n + row];
    }
    Ok(x)
}
