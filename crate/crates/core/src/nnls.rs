//! Non-negative least squares by the Lawson–Hanson active-set method.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution {
    pub x: Vec<f64>,
    /// `||A x - b||_2`.
    pub residual_norm: f64,
    /// Worst KKT violation of the gradient `A^T (b - A x)`, relative to
    /// `||b|| * max_j ||A_j||`.
    pub kkt_residual: f64,
    /// True when `A` is numerically rank deficient; subproblems then fall
    /// back to the pseudo-inverse.
    pub rank_deficient: bool,
    pub iterations: usize,
}

/// Solve `min ||A x - b||` subject to `x >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<NnlsSolution> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(Error::invalid(
            "b",
            format!("length {} does not match {m} rows", b.len()),
        ));
    }
    if n == 0 || m == 0 {
        return Err(Error::InsufficientData {
            needed: 1,
            got: 0,
            context: "nnls system".into(),
        });
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("design", "contains non-finite values"));
    }

    let svd = a.clone().svd(false, false);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    let rank_deficient = m < n || s_max == 0.0 || s_min <= 1e-10 * s_max;

    let tol = 10.0 * f64::EPSILON * a.abs().column_sum().max() * (m.max(n) as f64);
    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let mut w = a.tr_mul(&(b - a * &x));
    let max_iter = 30 * n;
    let mut iterations = 0;

    while iterations < max_iter {
        let candidate = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;

        loop {
            iterations += 1;
            let z = solve_passive(a, b, &passive)?;
            if (0..n).filter(|&i| passive[i]).all(|i| z[i] > 0.0) {
                x = z;
                break;
            }
            // Step from x toward z until the first passive coordinate hits zero.
            let alpha = (0..n)
                .filter(|&i| passive[i] && z[i] <= 0.0)
                .map(|i| x[i] / (x[i] - z[i]))
                .fold(f64::INFINITY, f64::min);
            x += (z - &x) * alpha;
            for i in 0..n {
                if passive[i] && x[i] <= tol {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
            if iterations >= max_iter {
                break;
            }
        }
        w = a.tr_mul(&(b - a * &x));
    }

    let r = b - a * &x;
    let grad = a.tr_mul(&r);
    let col_norm = (0..n).map(|j| a.column(j).norm()).fold(0.0, f64::max);
    let scale = b.norm() * col_norm;
    let violation = (0..n)
        .map(|j| if x[j] > 0.0 { grad[j].abs() } else { grad[j].max(0.0) })
        .fold(0.0, f64::max);
    let kkt_residual = if scale > 0.0 { violation / scale } else { violation };

    Ok(NnlsSolution {
        x: x.iter().copied().collect(),
        residual_norm: r.norm(),
        kkt_residual,
        rank_deficient,
        iterations,
    })
}

/// Least squares on the passive columns, zero elsewhere.
fn solve_passive(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[bool]) -> Result<DVector<f64>> {
    let cols: Vec<usize> = (0..passive.len()).filter(|&j| passive[j]).collect();
    let sub = a.select_columns(&cols);
    let svd = sub.svd(true, true);
    let eps = svd.singular_values.max() * (a.nrows().max(cols.len()) as f64) * f64::EPSILON;
    let sol = svd
        .solve(b, eps)
        .map_err(|e| Error::invalid("design", format!("least-squares subproblem failed: {e}")))?;
    let mut z = DVector::zeros(passive.len());
    for (k, &j) in cols.iter().enumerate() {
        z[j] = sol[k];
    }
    Ok(z)
}
