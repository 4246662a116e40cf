//! Multi-feature LSI graph convolutions and their gated forms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::graph_shift;
use crate::linalg::Mat;

/// `K` tap matrices of shape `F_in × F_out`; tap `k` multiplies `S^k X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank<P = Mat> {
    pub taps: Vec<P>,
}

impl<P> FilterBank<P> {
    pub fn order(&self) -> usize {
        self.taps.len()
    }

    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> FilterBank<Q> {
        FilterBank {
            taps: self.taps.iter().map(f).collect(),
        }
    }

    pub fn for_each(&self, f: &mut impl FnMut(&P)) {
        self.taps.iter().for_each(f);
    }

    pub fn for_each_mut(&mut self, f: &mut impl FnMut(&mut P)) {
        self.taps.iter_mut().for_each(f);
    }
}

impl FilterBank<Mat> {
    pub fn new(taps: Vec<Mat>) -> Result<Self> {
        let first = taps
            .first()
            .ok_or_else(|| Error::InvalidSpec("filter bank needs at least one tap".into()))?;
        let shape = first.shape();
        if taps.iter().any(|t| t.shape() != shape) {
            return Err(Error::InvalidSpec("filter taps differ in shape".into()));
        }
        Ok(Self { taps })
    }

    /// Single-feature bank from scalar taps.
    pub fn scalar(taps: &[f64]) -> Result<Self> {
        Self::new(taps.iter().map(|&a| Mat::from_element(1, 1, a)).collect())
    }

    pub fn zeros(f_in: usize, f_out: usize, k: usize) -> Self {
        Self {
            taps: vec![Mat::zeros(f_in, f_out); k],
        }
    }

    pub fn f_in(&self) -> usize {
        self.taps.first().map_or(0, Mat::nrows)
    }

    pub fn f_out(&self) -> usize {
        self.taps.first().map_or(0, Mat::ncols)
    }

    pub fn parameter_count(&self) -> usize {
        self.taps.iter().map(Mat::len).sum()
    }

    /// Scalar taps of a `1 × 1` bank.
    pub fn scalar_taps(&self) -> Option<Vec<f64>> {
        (self.f_in() == 1 && self.f_out() == 1).then(|| self.taps.iter().map(|t| t[(0, 0)]).collect())
    }
}

fn check_input(bank: &FilterBank, s: &Mat, x: &Mat) -> Result<()> {
    if x.ncols() != bank.f_in() {
        return Err(Error::DimensionMismatch(format!(
            "signal has {} features, filter expects {}",
            x.ncols(),
            bank.f_in()
        )));
    }
    if s.nrows() != x.nrows() || s.ncols() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "shift operator is {}x{}, signal has {} nodes",
            s.nrows(),
            s.ncols(),
            x.nrows()
        )));
    }
    Ok(())
}

/// `Σ_k S^k X A_k`, shifting the signal once per tap.
pub fn lsigf(bank: &FilterBank, s: &Mat, x: &Mat) -> Result<Mat> {
    check_input(bank, s, x)?;
    let mut shifted = x.clone();
    let mut out = Mat::zeros(x.nrows(), bank.f_out());
    for (k, tap) in bank.taps.iter().enumerate() {
        if k > 0 {
            shifted = graph_shift(s, &shifted)?;
        }
        out += &shifted * tap;
    }
    Ok(out)
}

fn check_gate(v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::GateOutOfRange(v));
    }
    Ok(())
}

/// `diag(q)·lsigf(bank, S, X)`.
pub fn node_gated_lsigf(bank: &FilterBank, s: &Mat, x: &Mat, q: &[f64]) -> Result<Mat> {
    if q.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} node gates for {} nodes",
            q.len(),
            x.nrows()
        )));
    }
    for &v in q {
        check_gate(v)?;
    }
    let mut out = lsigf(bank, s, x)?;
    for (i, &qi) in q.iter().enumerate() {
        out.row_mut(i).scale_mut(qi);
    }
    Ok(out)
}

/// `lsigf(bank, S ⊙ Q, X)`; the `k = 0` tap is never gated.
pub fn edge_gated_lsigf(bank: &FilterBank, s: &Mat, x: &Mat, q: &Mat) -> Result<Mat> {
    if q.shape() != s.shape() {
        return Err(Error::DimensionMismatch(format!(
            "edge gates are {}x{}, shift operator is {}x{}",
            q.nrows(),
            q.ncols(),
            s.nrows(),
            s.ncols()
        )));
    }
    for &v in q.iter() {
        check_gate(v)?;
    }
    lsigf(bank, &s.component_mul(q), x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_gso, permute_matrix, sbm, Graph, GsoKind, Permutation};
    use crate::rng::seeded;
    use crate::spectral::{eigendecompose_matrix, evaluate_response, FrequencyResponse};
    use proptest::prelude::*;
    use rand::Rng as _;

    fn random_mat(r: usize, c: usize, seed: u64) -> Mat {
        let mut g = seeded(seed);
        Mat::from_fn(r, c, |_, _| g.random::<f64>() - 0.5)
    }

    fn random_bank(f_in: usize, f_out: usize, k: usize, seed: u64) -> FilterBank {
        FilterBank::new((0..k).map(|i| random_mat(f_in, f_out, seed * 31 + i as u64)).collect()).unwrap()
    }

    fn path_adjacency(n: usize) -> Mat {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1, 1.0)).collect();
        build_gso(&Graph::undirected(n, &edges).unwrap(), GsoKind::Adjacency)
            .unwrap()
            .into_matrix()
    }

    fn sbm_gso(n: usize, seed: u64) -> Mat {
        let g = sbm(n, 2, 0.8, 0.2, &mut seeded(seed)).unwrap();
        build_gso(&g, GsoKind::NormalizedAdjacency).unwrap().into_matrix()
    }

    #[test]
    fn identity_tap_passes_signal() {
        let x = random_mat(5, 3, 1);
        let bank = FilterBank::new(vec![Mat::identity(3, 3)]).unwrap();
        assert_eq!(lsigf(&bank, &sbm_gso(5, 1), &x).unwrap(), x);
    }

    #[test]
    fn single_feature_matches_spectral_evaluation() {
        let s = sbm_gso(9, 2);
        let es = eigendecompose_matrix(&s).unwrap();
        let taps = [0.4, -0.3, 0.2, 0.1];
        let x = random_mat(9, 1, 3);
        let fr = FrequencyResponse::new(taps.to_vec());
        let spectral = es.spectral_map(|l| evaluate_response(&fr, l)) * &x;
        let out = lsigf(&FilterBank::scalar(&taps).unwrap(), &s, &x).unwrap();
        assert!((out - spectral).amax() < 1e-9);
    }

    #[test]
    fn one_shift_on_path_moves_mass() {
        let s = path_adjacency(4);
        let x = Mat::from_column_slice(4, 1, &[1.0, 0.0, 0.0, 0.0]);
        let out = lsigf(&FilterBank::scalar(&[0.0, 1.0]).unwrap(), &s, &x).unwrap();
        assert_eq!(out, Mat::from_column_slice(4, 1, &[0.0, 1.0, 0.0, 0.0]));
    }

    #[test]
    fn node_gate_examples() {
        let s = sbm_gso(6, 4);
        let x = random_mat(6, 2, 5);
        let bank = random_bank(2, 3, 3, 6);
        let plain = lsigf(&bank, &s, &x).unwrap();
        assert_eq!(node_gated_lsigf(&bank, &s, &x, &[1.0; 6]).unwrap(), plain);
        assert_eq!(node_gated_lsigf(&bank, &s, &x, &[0.0; 6]).unwrap(), Mat::zeros(6, 3));
        let q = [0.1, 0.9, 0.5, 0.3, 0.7, 0.2];
        let gated = node_gated_lsigf(&bank, &s, &x, &q).unwrap();
        for i in 0..6 {
            for f in 0..3 {
                assert_eq!(gated[(i, f)], q[i] * plain[(i, f)]);
            }
        }
        assert!(matches!(
            node_gated_lsigf(&bank, &s, &x, &[1.5; 6]),
            Err(Error::GateOutOfRange(_))
        ));
    }

    #[test]
    fn edge_gate_examples() {
        let s = sbm_gso(6, 7);
        let x = random_mat(6, 2, 8);
        let bank = random_bank(2, 2, 3, 9);
        let ones = Mat::from_element(6, 6, 1.0);
        assert_eq!(edge_gated_lsigf(&bank, &s, &x, &ones).unwrap(), lsigf(&bank, &s, &x).unwrap());
        let zero = edge_gated_lsigf(&bank, &s, &x, &Mat::zeros(6, 6)).unwrap();
        assert!((zero - &x * &bank.taps[0]).amax() < 1e-15);

        let s = path_adjacency(3);
        let mut q = Mat::from_element(3, 3, 1.0);
        q[(1, 2)] = 0.0;
        q[(2, 1)] = 0.0;
        let cut = Graph::undirected(3, &[(0, 1, 1.0)]).unwrap();
        let s_cut = build_gso(&cut, GsoKind::Adjacency).unwrap().into_matrix();
        let x = random_mat(3, 2, 10);
        let a = edge_gated_lsigf(&bank, &s, &x, &q).unwrap();
        let b = lsigf(&bank, &s_cut, &x).unwrap();
        assert!((a - b).amax() < 1e-15);
    }

    #[test]
    fn dimension_errors() {
        let bank = random_bank(2, 1, 2, 1);
        assert!(matches!(
            lsigf(&bank, &Mat::identity(3, 3), &Mat::zeros(3, 1)),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(FilterBank::new(vec![]).is_err());
        assert!(FilterBank::new(vec![Mat::zeros(1, 2), Mat::zeros(2, 1)]).is_err());
    }

    proptest! {
        #[test]
        fn lsigf_is_permutation_equivariant(seed in 0u64..500) {
            let n = 7;
            let s = sbm_gso(n, seed);
            let x = random_mat(n, 2, seed + 1);
            let bank = random_bank(2, 3, 4, seed + 2);
            let p = Permutation::random(n, &mut seeded(seed + 3));
            let lhs = lsigf(&bank, &permute_matrix(&s, &p).unwrap(), &p.apply_rows(&x).unwrap()).unwrap();
            let rhs = p.apply_rows(&lsigf(&bank, &s, &x).unwrap()).unwrap();
            prop_assert!((lhs - rhs).amax() < 1e-10);
        }

        #[test]
        fn lsigf_is_linear(seed in 0u64..500, alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
            let s = sbm_gso(6, seed);
            let bank = random_bank(2, 2, 3, seed);
            let x = random_mat(6, 2, seed + 10);
            let y = random_mat(6, 2, seed + 11);
            let lhs = lsigf(&bank, &s, &(&x * alpha + &y * beta)).unwrap();
            let rhs = lsigf(&bank, &s, &x).unwrap() * alpha + lsigf(&bank, &s, &y).unwrap() * beta;
            prop_assert!((lhs - rhs).amax() < 1e-10);
        }

        #[test]
        fn symmetric_edge_gates_keep_symmetry(seed in 0u64..500) {
            let s = sbm_gso(6, seed);
            let mut g = seeded(seed);
            let mut q = Mat::from_fn(6, 6, |_, _| g.random::<f64>());
            q = (&q + q.transpose()) * 0.5;
            let gated = s.component_mul(&q);
            prop_assert!(crate::linalg::asymmetry(&gated) < 1e-15);
        }

        #[test]
        fn node_gating_commutes_with_feature_mixing(seed in 0u64..500) {
            let s = sbm_gso(5, seed);
            let bank = random_bank(2, 3, 2, seed);
            let x = random_mat(5, 2, seed + 1);
            let m = random_mat(3, 2, seed + 2);
            let mut g = seeded(seed + 3);
            let q: Vec<f64> = (0..5).map(|_| g.random::<f64>()).collect();
            let mixed_bank = FilterBank::new(bank.taps.iter().map(|t| t * &m).collect()).unwrap();
            let lhs = node_gated_lsigf(&bank, &s, &x, &q).unwrap() * &m;
            let rhs = node_gated_lsigf(&mixed_bank, &s, &x, &q).unwrap();
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }
    }
}
