//! Eigendecomposition of symmetric shift operators, the graph Fourier
//! transform, polynomial frequency responses and eigenvector misalignment.

use nalgebra::{DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::graph::Gso;
use crate::linalg::{self, Mat};

const SYMMETRY_TOL: f64 = 1e-12;
const DEGENERACY_GAP: f64 = 1e-8;
const SIGN_TIE_TOL: f64 = 1e-12;
/// Grid used when the integral-Lipschitz interval comes from a spectrum.
pub const LIPSCHITZ_GRID: usize = 1024;

/// Orthonormal eigenbasis with eigenvalues sorted in descending order.
///
/// Each eigenvector is sign-fixed so that its largest-magnitude entry is
/// positive (lowest index wins a tie). Eigenvectors sharing an eigenvalue
/// (gap below 1e-8) are ordered by their first significant entry, and the
/// system is flagged as degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Mat,
    pub degenerate: bool,
}

impl EigenSystem {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    /// `V·diag(f(λ))·Vᵀ`.
    pub fn spectral_map(&self, f: impl Fn(f64) -> f64) -> Mat {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (k, &l) in self.eigenvalues.iter().enumerate() {
            let fl = f(l);
            scaled.column_mut(k).scale_mut(fl);
        }
        scaled * v.transpose()
    }

    /// Eigenvalues on the first line, then the eigenvector matrix.
    pub fn to_csv(&self) -> String {
        let head: Vec<String> = self.eigenvalues.iter().map(|v| format!("{v:?}")).collect();
        format!("{}\n{}", head.join(","), linalg::matrix_to_csv(&self.eigenvectors))
    }
}

fn canonical_sign(v: &mut DVector<f64>) {
    let peak = v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if let Some(i) = v.iter().position(|x| x.abs() >= peak - SIGN_TIE_TOL) {
        if v[i] < 0.0 {
            v.neg_mut();
        }
    }
}

fn first_significant(v: &DVector<f64>) -> (usize, f64) {
    v.iter()
        .enumerate()
        .find(|(_, x)| x.abs() > DEGENERACY_GAP)
        .map(|(i, &x)| (i, x))
        .unwrap_or((v.len(), 0.0))
}

pub fn eigendecompose(s: &Gso) -> Result<EigenSystem> {
    eigendecompose_matrix(s.matrix())
}

pub fn eigendecompose_matrix(m: &Mat) -> Result<EigenSystem> {
    linalg::ensure_symmetric(m, SYMMETRY_TOL)?;
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 0).ok_or(Error::ConvergenceFailure)?;
    let mut pairs: Vec<(f64, DVector<f64>)> = (0..n)
        .map(|k| {
            let mut v = eig.eigenvectors.column(k).clone_owned();
            canonical_sign(&mut v);
            (eig.eigenvalues[k], v)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut degenerate = false;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && pairs[end - 1].0 - pairs[end].0 < DEGENERACY_GAP {
            end += 1;
        }
        if end - start > 1 {
            degenerate = true;
            pairs[start..end].sort_by(|a, b| {
                let (ia, xa) = first_significant(&a.1);
                let (ib, xb) = first_significant(&b.1);
                ia.cmp(&ib).then(xb.total_cmp(&xa))
            });
        }
        start = end;
    }

    let eigenvalues = pairs.iter().map(|p| p.0).collect();
    let eigenvectors = Mat::from_fn(n, n, |i, k| pairs[k].1[i]);
    Ok(EigenSystem {
        eigenvalues,
        eigenvectors,
        degenerate,
    })
}

/// `Vᵀx` for a signal with any number of feature columns.
pub fn gft(es: &EigenSystem, x: &Mat) -> Result<Mat> {
    if x.nrows() != es.n() {
        return Err(Error::DimensionMismatch(format!(
            "signal has {} rows, eigenbasis has {}",
            x.nrows(),
            es.n()
        )));
    }
    Ok(es.eigenvectors.transpose() * x)
}

pub fn inverse_gft(es: &EigenSystem, xhat: &Mat) -> Result<Mat> {
    if xhat.nrows() != es.n() {
        return Err(Error::DimensionMismatch(format!(
            "spectrum has {} rows, eigenbasis has {}",
            xhat.nrows(),
            es.n()
        )));
    }
    Ok(&es.eigenvectors * xhat)
}

/// Scalar polynomial response `a(λ) = Σ_k a_k λ^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyResponse {
    pub taps: Vec<f64>,
}

impl FrequencyResponse {
    pub fn new(taps: Vec<f64>) -> Self {
        Self { taps }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::new(self.taps.iter().map(|a| a * c).collect())
    }

    pub fn derivative(&self) -> Self {
        let taps = self
            .taps
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, a)| k as f64 * a)
            .collect();
        Self::new(taps)
    }

    /// Dense `Σ_k a_k S^k`, by Horner's scheme on matrices.
    pub fn matrix(&self, s: &Mat) -> Mat {
        let n = s.nrows();
        let mut acc = Mat::zeros(n, n);
        for &a in self.taps.iter().rev() {
            acc = s * acc;
            for i in 0..n {
                acc[(i, i)] += a;
            }
        }
        acc
    }
}

pub fn evaluate_response(fr: &FrequencyResponse, lambda: f64) -> f64 {
    fr.taps.iter().rev().fold(0.0, |acc, &a| acc * lambda + a)
}

/// Largest `|λ·a′(λ)|` over a uniform grid on `[lambda_min, lambda_max]`.
pub fn integral_lipschitz_constant(fr: &FrequencyResponse, lambda_min: f64, lambda_max: f64, grid: usize) -> Result<f64> {
    if !(lambda_min < lambda_max) || grid < 2 {
        return Err(Error::InvalidArgument(format!(
            "need lambda_min < lambda_max and grid >= 2, got [{lambda_min}, {lambda_max}] with {grid}"
        )));
    }
    let d = fr.derivative();
    let step = (lambda_max - lambda_min) / (grid - 1) as f64;
    Ok((0..grid)
        .map(|i| {
            let l = if i + 1 == grid { lambda_max } else { lambda_min + step * i as f64 };
            (l * evaluate_response(&d, l)).abs()
        })
        .fold(0.0, f64::max))
}

/// `max_n |a(λ_n)|`, the operator norm of the filter on this graph.
pub fn filter_norm(fr: &FrequencyResponse, es: &EigenSystem) -> f64 {
    es.eigenvalues
        .iter()
        .map(|&l| evaluate_response(fr, l).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MisalignmentReport {
    pub delta: f64,
    pub u_minus_v_norm: f64,
    /// Either eigensystem has a repeated eigenvalue, so `delta` depends on
    /// the within-cluster basis choice.
    pub degenerate: bool,
}

/// `δ = (‖U − V‖ + 1)² − 1` with `V` the eigenbasis of the shift operator
/// and `U` that of the error matrix.
pub fn misalignment_delta(s_eig: &EigenSystem, e_eig: &EigenSystem) -> Result<MisalignmentReport> {
    if s_eig.n() != e_eig.n() {
        return Err(Error::DimensionMismatch(format!(
            "eigensystems of size {} and {}",
            s_eig.n(),
            e_eig.n()
        )));
    }
    let diff = linalg::operator_norm(&(&e_eig.eigenvectors - &s_eig.eigenvectors));
    Ok(MisalignmentReport {
        delta: (diff + 1.0).powi(2) - 1.0,
        u_minus_v_norm: diff,
        degenerate: s_eig.degenerate || e_eig.degenerate,
    })
}

/// `‖A(S) − A(S̃)‖` with the identity permutation.
pub fn filter_distance(fr: &FrequencyResponse, s: &Gso, s_tilde: &Gso) -> Result<f64> {
    if s.n() != s_tilde.n() {
        return Err(Error::DimensionMismatch(format!(
            "shift operators of size {} and {}",
            s.n(),
            s_tilde.n()
        )));
    }
    let d = fr.matrix(s.matrix()) - fr.matrix(s_tilde.matrix());
    Ok(linalg::operator_norm(&d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_gso, sample_perturbation, sbm, GsoKind};
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn random_symmetric(n: usize, seed: u64) -> Mat {
        let mut r = seeded(seed);
        let g = Mat::from_fn(n, n, |_, _| r.random::<f64>() - 0.5);
        let mut m = &g + g.transpose();
        for j in 0..n {
            for i in (j + 1)..n {
                m[(j, i)] = m[(i, j)];
            }
        }
        m
    }

    #[test]
    fn identity_eigenvalues() {
        let es = eigendecompose_matrix(&Mat::identity(3, 3)).unwrap();
        assert_eq!(es.eigenvalues, vec![1.0, 1.0, 1.0]);
        assert!(es.degenerate);
    }

    #[test]
    fn swap_matrix_eigensystem() {
        let es = eigendecompose_matrix(&Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert!((es.eigenvalues[0] - 1.0).abs() < 1e-14);
        assert!((es.eigenvalues[1] + 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v = &es.eigenvectors;
        assert!((v[(0, 0)] - h).abs() < 1e-14 && (v[(1, 0)] - h).abs() < 1e-14);
        // tie in magnitude: lowest index carries the positive sign
        assert!((v[(0, 1)] - h).abs() < 1e-14 && (v[(1, 1)] + h).abs() < 1e-14);
        assert!(!es.degenerate);
    }

    #[test]
    fn reconstruction_and_orthogonality() {
        let m = random_symmetric(8, 3);
        let es = eigendecompose_matrix(&m).unwrap();
        let rec = es.spectral_map(|l| l);
        assert!((rec - &m).amax() <= 1e-9);
        let gram = es.eigenvectors.transpose() * &es.eigenvectors;
        assert!(linalg::operator_norm(&(gram - Mat::identity(8, 8))) < 1e-9);
        for k in 0..8 {
            let v = es.eigenvectors.column(k);
            assert!((&m * v - v * es.eigenvalues[k]).amax() < 1e-8);
        }
        assert!(es.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn asymmetric_input_rejected() {
        let m = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.0]);
        assert!(matches!(eigendecompose_matrix(&m), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn gft_of_eigenvector_is_basis_vector() {
        let es = eigendecompose_matrix(&random_symmetric(6, 4)).unwrap();
        let v2 = es.eigenvectors.columns(2, 1).clone_owned();
        let hat = gft(&es, &v2).unwrap();
        for i in 0..6 {
            let want = if i == 2 { 1.0 } else { 0.0 };
            assert!((hat[(i, 0)] - want).abs() < 1e-12);
        }
        let x = Mat::from_fn(6, 1, |i, _| i as f64 - 2.0);
        let back = inverse_gft(&es, &gft(&es, &x).unwrap()).unwrap();
        assert!((back - x).amax() < 1e-10);
    }

    #[test]
    fn gft_diagonalizes_filters() {
        let m = random_symmetric(7, 5);
        let es = eigendecompose_matrix(&m).unwrap();
        let fr = FrequencyResponse::new(vec![0.3, -0.7, 0.2, 0.05]);
        let x = Mat::from_fn(7, 1, |i, _| (i as f64).sin());
        let lhs = gft(&es, &(fr.matrix(&m) * &x)).unwrap();
        let mut rhs = gft(&es, &x).unwrap();
        for (k, &l) in es.eigenvalues.iter().enumerate() {
            rhs[(k, 0)] *= evaluate_response(&fr, l);
        }
        assert!((lhs - rhs).norm() <= 1e-9);
    }

    #[test]
    fn response_examples() {
        assert_eq!(evaluate_response(&FrequencyResponse::new(vec![1.0]), 7.5), 1.0);
        assert_eq!(evaluate_response(&FrequencyResponse::new(vec![0.0, 1.0]), 2.0), 2.0);
        let taps = [1.0, 2.0, 3.0];
        let direct: f64 = taps.iter().enumerate().map(|(k, a)| a * 0.5f64.powi(k as i32)).sum();
        assert_eq!(evaluate_response(&FrequencyResponse::new(taps.to_vec()), 0.5), direct);
        assert_eq!(direct, 2.75);
    }

    #[test]
    fn lipschitz_examples() {
        let c = integral_lipschitz_constant(&FrequencyResponse::new(vec![3.0]), -1.0, 1.0, 16).unwrap();
        assert_eq!(c, 0.0);
        let c = integral_lipschitz_constant(&FrequencyResponse::new(vec![0.0, 1.0]), 0.0, 2.0, 1024).unwrap();
        assert_eq!(c, 2.0);
        let c = integral_lipschitz_constant(&FrequencyResponse::new(vec![0.0, 0.0, 1.0]), -1.0, 1.0, 1024).unwrap();
        assert_eq!(c, 2.0);
        assert!(integral_lipschitz_constant(&FrequencyResponse::new(vec![1.0]), 1.0, 1.0, 8).is_err());
    }

    #[test]
    fn filter_norm_examples() {
        let s = Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let es = eigendecompose_matrix(&s).unwrap();
        assert_eq!(filter_norm(&FrequencyResponse::new(vec![1.0]), &es), 1.0);
        assert!((filter_norm(&FrequencyResponse::new(vec![0.0, 1.0]), &es) - 1.0).abs() < 1e-14);
        let m = random_symmetric(6, 9);
        let es = eigendecompose_matrix(&m).unwrap();
        let fr = FrequencyResponse::new(vec![0.1, 0.4, -0.3]);
        let dense = linalg::operator_norm(&fr.matrix(&m));
        assert!((filter_norm(&fr, &es) - dense).abs() < 1e-9);
    }

    #[test]
    fn delta_examples() {
        let g = sbm(10, 2, 0.8, 0.2, &mut seeded(2)).unwrap();
        let s = build_gso(&g, GsoKind::NormalizedAdjacency).unwrap();
        let se = eigendecompose(&s).unwrap();
        let report = misalignment_delta(&se, &se).unwrap();
        assert_eq!(report.delta, 0.0);
        let scaled = eigendecompose_matrix(&(s.matrix() * 0.01)).unwrap();
        assert!(misalignment_delta(&se, &scaled).unwrap().delta < 1e-9);
        let e = sample_perturbation(10, 0.1, &mut seeded(3)).unwrap();
        let ee = eigendecompose_matrix(&e.error).unwrap();
        let r = misalignment_delta(&se, &ee).unwrap();
        assert!(r.delta >= 0.0);
        assert_eq!(r.delta, (r.u_minus_v_norm + 1.0).powi(2) - 1.0);
        let small = eigendecompose_matrix(&Mat::identity(3, 3)).unwrap();
        assert!(misalignment_delta(&se, &small).is_err());
    }

    #[test]
    fn filter_distance_examples() {
        let g = sbm(8, 2, 0.8, 0.2, &mut seeded(4)).unwrap();
        let s = build_gso(&g, GsoKind::NormalizedAdjacency).unwrap();
        let fr = FrequencyResponse::new(vec![0.2, 0.5, 0.1]);
        assert_eq!(filter_distance(&fr, &s, &s).unwrap(), 0.0);
        let other = Gso::custom(Mat::from_fn(8, 8, |i, j| (i * j) as f64 / 64.0)).unwrap();
        let constant = FrequencyResponse::new(vec![0.7]);
        assert_eq!(filter_distance(&constant, &s, &other).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn lipschitz_constant_ignores_tap_sign(taps in proptest::collection::vec(-2.0f64..2.0, 1..6)) {
            let fr = FrequencyResponse::new(taps);
            let a = integral_lipschitz_constant(&fr, -1.5, 1.5, 64).unwrap();
            let b = integral_lipschitz_constant(&fr.scaled(-1.0), -1.5, 1.5, 64).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn filter_norm_matches_dense_norm(seed in 0u64..1000, n in 2usize..12) {
            let m = random_symmetric(n, seed);
            let es = eigendecompose_matrix(&m).unwrap();
            let mut r = seeded(seed + 1);
            let fr = FrequencyResponse::new((0..4).map(|_| r.random::<f64>() - 0.5).collect());
            let dense = linalg::operator_norm(&fr.matrix(&m));
            prop_assert!((filter_norm(&fr, &es) - dense).abs() < 1e-9 * dense.max(1.0));
        }
    }
}
