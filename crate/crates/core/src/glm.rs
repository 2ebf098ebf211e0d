//! Poisson log-linear models fitted by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const GRADIENT_TOL: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone)]
pub struct PoissonFit {
    pub coefficients: Vec<f64>,
    pub fitted: Vec<f64>,
    pub deviance: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Poisson deviance with the `y ln(y/mu) = 0` convention at `y = 0`.
pub fn poisson_deviance(counts: &[f64], fitted: &[f64]) -> f64 {
    let d: f64 = counts
        .iter()
        .zip(fitted)
        .map(|(&y, &mu)| {
            let term = if y > 0.0 { y * (y / mu).ln() } else { 0.0 };
            term - (y - mu)
        })
        .sum();
    (2.0 * d).max(0.0)
}

/// Fits `ln mu = X b + offset`. `design` is row-major with one row per count.
///
/// Converges when `max |X'(y - mu)| <= 1e-10` or when the Newton step has
/// stopped moving the coefficients. A singular weighted normal matrix is an
/// error; running out of iterations returns the last iterate flagged
/// `converged = false`.
pub fn fit_poisson_loglinear(design: &[Vec<f64>], offset: &[f64], counts: &[f64]) -> Result<PoissonFit> {
    let rows = design.len();
    if rows == 0 || offset.len() != rows || counts.len() != rows {
        return Err(Error::Argument("design, offset and counts must have equal, non-zero length".into()));
    }
    let cols = design[0].len();
    if cols == 0 || design.iter().any(|r| r.len() != cols) {
        return Err(Error::Argument("design rows must share a non-zero width".into()));
    }
    if counts.iter().any(|&y| !(y >= 0.0) || !y.is_finite()) {
        return Err(Error::Argument("counts must be finite and non-negative".into()));
    }
    let x = DMatrix::from_fn(rows, cols, |i, j| design[i][j]);
    let y = DVector::from_column_slice(counts);
    let off = DVector::from_column_slice(offset);

    // Start from the saturated-ish linear predictor ln(y + 0.5).
    let mut eta = y.map(|v| (v + 0.5).ln());
    let mut beta = weighted_solve(&x, &eta.map(f64::exp), &(&eta - &off))?;
    let mut mu = (&x * &beta + &off).map(f64::exp);
    let mut dev = poisson_deviance(counts, mu.as_slice());

    for iter in 1..=MAX_ITERATIONS {
        let gradient = x.transpose() * (&y - &mu);
        if gradient.amax() <= GRADIENT_TOL {
            return Ok(finish(beta, mu, dev, true, iter - 1));
        }
        eta = &x * &beta + &off;
        let z = DVector::from_fn(rows, |i, _| eta[i] - off[i] + (y[i] - mu[i]) / mu[i]);
        let proposal = weighted_solve(&x, &mu, &z)?;

        // Step halving guards against deviance increases.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let candidate = &beta + (&proposal - &beta) * step;
            let cand_mu = (&x * &candidate + &off).map(f64::exp);
            if cand_mu.iter().all(|m| m.is_finite()) {
                let cand_dev = poisson_deviance(counts, cand_mu.as_slice());
                if cand_dev <= dev * (1.0 + 1e-12) + 1e-12 {
                    accepted = Some((candidate, cand_mu, cand_dev));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((next, next_mu, next_dev)) = accepted else {
            return Ok(finish(beta, mu, dev, false, iter));
        };
        let moved = (&next - &beta).amax();
        beta = next;
        mu = next_mu;
        dev = next_dev;
        if moved <= 1e-13 * (1.0 + beta.amax()) {
            return Ok(finish(beta, mu, dev, true, iter));
        }
    }
    let gradient = x.transpose() * (&y - &mu);
    let converged = gradient.amax() <= GRADIENT_TOL;
    Ok(finish(beta, mu, dev, converged, MAX_ITERATIONS))
}

fn finish(beta: DVector<f64>, mu: DVector<f64>, deviance: f64, converged: bool, iterations: usize) -> PoissonFit {
    PoissonFit {
        coefficients: beta.iter().copied().collect(),
        fitted: mu.iter().copied().collect(),
        deviance,
        converged,
        iterations,
    }
}

fn weighted_solve(x: &DMatrix<f64>, w: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    let mut xtw = x.transpose();
    for (j, mut col) in xtw.column_iter_mut().enumerate() {
        col *= w[j];
    }
    let normal = &xtw * x;
    let rhs = &xtw * z;
    normal
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Estimator("design is rank deficient for these weights".into()))
}
