//! Small dense linear-algebra helpers shared across the crate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

pub type Mat = DMatrix<f64>;

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITERS: usize = 10_000;
const POWER_START_SEED: u64 = 0x005E_ED0F_D1A6;

/// Largest absolute deviation between `m` and its transpose.
pub fn asymmetry(m: &Mat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn ensure_square(m: &Mat, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub fn ensure_symmetric(m: &Mat, tol: f64) -> Result<()> {
    ensure_square(m, "matrix")?;
    let dev = asymmetry(m);
    if dev > tol {
        return Err(Error::NotSymmetric(dev));
    }
    Ok(())
}

/// Spectral (induced 2-) norm.
///
/// Power iteration on `MᵀM` with a Rayleigh-quotient estimate; stops when
/// the relative change drops below 1e-12 and falls back to a full symmetric
/// eigensolve of `MᵀM` if that does not happen within 10 000 iterations.
pub fn operator_norm(m: &Mat) -> f64 {
    if m.is_empty() || m.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    let gram = m.transpose() * m;
    let mut start = rng::seeded(POWER_START_SEED);
    let mut v = DVector::from_fn(gram.nrows(), |_, _| start.random::<f64>() + 0.5);
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let w = &gram * &v;
        let rayleigh = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (rayleigh - estimate).abs() <= POWER_TOL * rayleigh.abs() {
            return rayleigh.max(0.0).sqrt();
        }
        estimate = rayleigh;
    }
    let eig = SymmetricEigen::new(gram);
    eig.eigenvalues.iter().cloned().fold(0.0, f64::max).sqrt()
}

/// Spectral norm of a symmetric matrix: its spectral radius.
pub fn symmetric_norm(m: &Mat) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(m: &Mat) -> Result<Mat> {
    m.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::InvalidArgument("matrix is not positive definite".into()))
}

/// Least-squares fit of `y ≈ a·x + c·x²`, returning `(a, c)`.
pub fn fit_linear_quadratic(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let (p1, p2) = (xi, xi * xi);
        s11 += p1 * p1;
        s12 += p1 * p2;
        s22 += p2 * p2;
        b1 += p1 * yi;
        b2 += p2 * yi;
    }
    let det = s11 * s22 - s12 * s12;
    if det.abs() < f64::MIN_POSITIVE {
        let a = if s11 > 0.0 { b1 / s11 } else { 0.0 };
        return (a, 0.0);
    }
    ((b1 * s22 - b2 * s12) / det, (s11 * b2 - s12 * b1) / det)
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in lx.iter().zip(&ly) {
        num += (a - mx) * (b - my);
        den += (a - mx) * (a - mx);
    }
    num / den
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Writes a dense matrix as row-major CSV with full `f64` round-trip precision.
pub fn matrix_to_csv(m: &Mat) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:?}", m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<Mat> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Malformed(format!("bad CSV entry `{c}`: {e}")))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Malformed("ragged CSV rows".into()));
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operator_norm_of_diagonal() {
        let m = Mat::from_diagonal(&DVector::from_vec(vec![0.5, -3.0, 2.0]));
        assert!((operator_norm(&m) - 3.0).abs() < 1e-10);
        assert_eq!(operator_norm(&Mat::zeros(3, 3)), 0.0);
    }

    #[test]
    fn operator_norm_matches_singular_values() {
        let mut r = rng::seeded(3);
        let m = Mat::from_fn(5, 4, |_, _| r.random::<f64>() - 0.5);
        let svd = m.clone().svd(false, false);
        let top = svd.singular_values.max();
        assert!((operator_norm(&m) - top).abs() < 1e-9 * top);
    }

    #[test]
    fn quadratic_fit_recovers_coefficients() {
        let x = [1e-3, 2e-3, 5e-3, 1e-2];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 30.0 * v * v).collect();
        let (a, c) = fit_linear_quadratic(&x, &y);
        assert!((a - 2.0).abs() < 1e-9);
        assert!((c - 30.0).abs() < 1e-6);
    }

    #[test]
    fn loglog_slope_of_power_law() {
        let x = [1e-4, 1e-3, 1e-2];
        let y: Vec<f64> = x.iter().map(|v| 4.0 * v * v).collect();
        assert!((loglog_slope(&x, &y) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = Mat::from_row_slice(2, 2, &[0.1, -2.5e-17, 1.0 / 3.0, 7.0]);
        assert_eq!(matrix_from_csv(&matrix_to_csv(&m)).unwrap(), m);
    }
}
