//! Graphs, graph shift operators, node permutations and relative
//! perturbations.
//!
//! Shift operators follow the in-neighbour convention: entry `(i, j)` of a
//! GSO may be nonzero only when `i == j` or the edge `j → i` exists, so that
//! `(S x)_i` aggregates over the in-neighbourhood of node `i`.

use std::collections::BTreeMap;

use nalgebra::SymmetricEigen;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::rng::Rng;

/// Weighted graph on nodes `0..n`, without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    directed: bool,
    edges: BTreeMap<(usize, usize), f64>,
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    n: usize,
    directed: bool,
    edges: Vec<(usize, usize, f64)>,
}

impl Graph {
    pub fn empty(n: usize, directed: bool) -> Self {
        Self {
            n,
            directed,
            edges: BTreeMap::new(),
        }
    }

    /// Undirected graph; each `(i, j, w)` is stored in both directions.
    pub fn undirected(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut g = Self::empty(n, false);
        for &(i, j, w) in edges {
            g.add_edge(i, j, w)?;
        }
        Ok(g)
    }

    pub fn directed(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut g = Self::empty(n, true);
        for &(i, j, w) in edges {
            g.add_edge(i, j, w)?;
        }
        Ok(g)
    }

    /// Inserts (or overwrites) the edge `i → j`, and `j → i` when undirected.
    pub fn add_edge(&mut self, i: usize, j: usize, w: f64) -> Result<()> {
        if i >= self.n || j >= self.n {
            return Err(Error::InvalidArgument(format!(
                "edge ({i}, {j}) out of range for {} nodes",
                self.n
            )));
        }
        if i == j {
            return Err(Error::InvalidArgument(format!("self-loop at node {i}")));
        }
        self.edges.insert((i, j), w);
        if !self.directed {
            self.edges.insert((j, i), w);
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// Edges as `(source, target, weight)` in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.edges.iter().map(|(&(i, j), &w)| (i, j, w))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.edges.get(&(i, j)).copied()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains_key(&(i, j))
    }

    /// Out-neighbours of `i` in ascending order.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.edges
            .range((i, 0)..(i + 1, 0))
            .map(|(&(_, j), _)| j)
            .collect()
    }

    /// Adjacency in GSO orientation: `A[i][j] = w(j → i)`.
    pub fn adjacency(&self) -> Mat {
        let mut a = Mat::zeros(self.n, self.n);
        for (&(i, j), &w) in &self.edges {
            a[(j, i)] = w;
        }
        a
    }

    /// Weighted in-degree of every node (row sums of [`Graph::adjacency`]).
    pub fn degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for (&(_, j), &w) in &self.edges {
            d[j] += w;
        }
        d
    }

    /// Drops nodes with no incident edge; returns the new graph and the
    /// original index of every kept node.
    pub fn remove_isolated(&self) -> (Graph, Vec<usize>) {
        let mut touched = vec![false; self.n];
        for &(i, j) in self.edges.keys() {
            touched[i] = true;
            touched[j] = true;
        }
        let kept: Vec<usize> = (0..self.n).filter(|&i| touched[i]).collect();
        let mut remap = vec![usize::MAX; self.n];
        for (new, &old) in kept.iter().enumerate() {
            remap[old] = new;
        }
        let edges = self
            .edges
            .iter()
            .map(|(&(i, j), &w)| ((remap[i], remap[j]), w))
            .collect();
        (
            Graph {
                n: kept.len(),
                directed: self.directed,
                edges,
            },
            kept,
        )
    }

    /// Hop distances from `source` following edge directions.
    pub fn bfs_distances(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        let mut queue = std::collections::VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for v in self.neighbors(u) {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = GraphJson {
            n: self.n,
            directed: self.directed,
            edges: self.edges().collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GraphJson = serde_json::from_str(text)?;
        let mut g = Graph::empty(doc.n, true);
        for &(i, j, w) in &doc.edges {
            g.add_edge(i, j, w)?;
        }
        if !doc.directed {
            for (&(i, j), &w) in &g.edges {
                if g.edges.get(&(j, i)) != Some(&w) {
                    return Err(Error::Malformed(format!(
                        "undirected graph lists ({i}, {j}) without its reverse"
                    )));
                }
            }
        }
        g.directed = doc.directed;
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GsoKind {
    Adjacency,
    /// Adjacency divided by its spectral norm.
    NormalizedAdjacency,
    Laplacian,
    NormalizedLaplacian,
    /// Row-normalized adjacency `D⁻¹A`.
    RandomWalk,
    Custom,
}

/// Graph shift operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Gso {
    matrix: Mat,
    kind: GsoKind,
}

impl Gso {
    pub fn custom(matrix: Mat) -> Result<Self> {
        linalg::ensure_square(&matrix, "GSO")?;
        Ok(Self {
            matrix,
            kind: GsoKind::Custom,
        })
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    pub fn into_matrix(self) -> Mat {
        self.matrix
    }

    pub fn kind(&self) -> GsoKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn to_csv(&self) -> String {
        linalg::matrix_to_csv(&self.matrix)
    }
}

pub fn build_gso(g: &Graph, kind: GsoKind) -> Result<Gso> {
    if g.n() == 0 {
        return Err(Error::InvalidArgument("graph has no nodes".into()));
    }
    let a = g.adjacency();
    let n = g.n();
    let degree_checked = || -> Result<Vec<f64>> {
        let d = g.degrees();
        match d.iter().position(|&v| v <= 0.0) {
            Some(i) => Err(Error::IsolatedNode(i)),
            None => Ok(d),
        }
    };
    let matrix = match kind {
        GsoKind::Adjacency | GsoKind::Custom => a,
        GsoKind::NormalizedAdjacency => {
            let norm = linalg::operator_norm(&a);
            if norm > 0.0 {
                a / norm
            } else {
                a
            }
        }
        GsoKind::Laplacian => {
            let d = g.degrees();
            let mut l = -a;
            for (i, di) in d.iter().enumerate() {
                l[(i, i)] += di;
            }
            l
        }
        GsoKind::NormalizedLaplacian => {
            let d = degree_checked()?;
            let inv_sqrt: Vec<f64> = d.iter().map(|v| 1.0 / v.sqrt()).collect();
            Mat::from_fn(n, n, |i, j| {
                let off = -a[(i, j)] * inv_sqrt[i] * inv_sqrt[j];
                if i == j {
                    1.0 + off
                } else {
                    off
                }
            })
        }
        GsoKind::RandomWalk => {
            let d = degree_checked()?;
            Mat::from_fn(n, n, |i, j| a[(i, j)] / d[i])
        }
    };
    Ok(Gso { matrix, kind })
}

/// `S·x`, row by row with a left-to-right sum over `j = 0..n`:
/// `out[i][f] = Σ_j S[i][j]·x[j][f]`.
pub fn graph_shift(s: &Mat, x: &Mat) -> Result<Mat> {
    if s.ncols() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "GSO is {}x{} but signal has {} rows",
            s.nrows(),
            s.ncols(),
            x.nrows()
        )));
    }
    let (n, f) = (s.nrows(), x.ncols());
    let mut out = Mat::zeros(n, f);
    for c in 0..f {
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..s.ncols() {
                acc += s[(i, j)] * x[(j, c)];
            }
            out[(i, c)] = acc;
        }
    }
    Ok(out)
}

/// Node relabeling `i ↦ perm[i]`; as a matrix `P[i][perm[i]] = 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    perm: Vec<usize>,
}

impl Permutation {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || seen[p] {
                return Err(Error::InvalidArgument(format!(
                    "{perm:?} is not a bijection"
                )));
            }
            seen[p] = true;
        }
        Ok(Self { perm })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            perm: (0..n).collect(),
        }
    }

    pub fn random(n: usize, rng: &mut Rng) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        Self { perm }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn image(&self, i: usize) -> usize {
        self.perm[i]
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.perm.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            inv[p] = i;
        }
        Self { perm: inv }
    }

    pub fn matrix(&self) -> Mat {
        let n = self.perm.len();
        let mut p = Mat::zeros(n, n);
        for (i, &pi) in self.perm.iter().enumerate() {
            p[(i, pi)] = 1.0;
        }
        p
    }

    /// `Pᵀx`: row `i` of `x` moves to row `perm[i]`.
    pub fn apply_rows(&self, x: &Mat) -> Result<Mat> {
        if x.nrows() != self.perm.len() {
            return Err(Error::DimensionMismatch(format!(
                "permutation of length {} applied to {} rows",
                self.perm.len(),
                x.nrows()
            )));
        }
        let mut out = Mat::zeros(x.nrows(), x.ncols());
        for (i, &pi) in self.perm.iter().enumerate() {
            out.set_row(pi, &x.row(i));
        }
        Ok(out)
    }
}

/// `PᵀSP`, computed by index remapping: `out[p(i)][p(j)] = S[i][j]`.
pub fn permute_graph(s: &Gso, p: &Permutation) -> Result<Gso> {
    Ok(Gso {
        matrix: permute_matrix(s.matrix(), p)?,
        kind: s.kind(),
    })
}

pub fn permute_matrix(s: &Mat, p: &Permutation) -> Result<Mat> {
    let n = s.nrows();
    if p.len() != n || s.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "permutation of length {} applied to a {}x{} matrix",
            p.len(),
            n,
            s.ncols()
        )));
    }
    let mut out = Mat::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            out[(p.image(i), p.image(j))] = s[(i, j)];
        }
    }
    Ok(out)
}

fn check_probability(name: &'static str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) || value.is_nan() {
        return Err(Error::InvalidProbability { name, value });
    }
    Ok(())
}

/// Community of every node: contiguous balanced blocks, with the remainder
/// going to the lowest-index communities.
pub fn sbm_partition(n: usize, communities: usize) -> Vec<usize> {
    let base = n / communities;
    let extra = n % communities;
    let mut labels = Vec::with_capacity(n);
    for c in 0..communities {
        let size = base + usize::from(c < extra);
        labels.extend(std::iter::repeat_n(c, size));
    }
    labels
}

/// Undirected, unweighted stochastic block model. Pairs `i < j` are visited
/// in lexicographic order, one uniform draw each.
pub fn sbm(n: usize, communities: usize, p_intra: f64, p_inter: f64, rng: &mut Rng) -> Result<Graph> {
    check_probability("p_intra", p_intra)?;
    check_probability("p_inter", p_inter)?;
    if communities == 0 || communities > n {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} nodes into {communities} communities"
        )));
    }
    let labels = sbm_partition(n, communities);
    let mut g = Graph::empty(n, false);
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { p_intra } else { p_inter };
            if rng.random::<f64>() < p {
                g.add_edge(i, j, 1.0)?;
            }
        }
    }
    Ok(g)
}

/// Unbiased sample covariance of the columns of `samples` (rows are draws).
pub fn sample_covariance(samples: &Mat) -> Result<Mat> {
    let m = samples.nrows();
    if m < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, have {m}")));
    }
    let mean = samples.row_mean();
    let mut centered = samples.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    Ok(centered.transpose() * &centered / (m as f64 - 1.0))
}

/// Each node keeps its `k` largest-magnitude off-diagonal covariances
/// (ties to the lower index); the directed selections are merged by union
/// with weight `|cov|`.
pub fn knn_covariance_graph(samples: &Mat, k: usize) -> Result<Graph> {
    let n = samples.ncols();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!("need 1 <= k < {n}, got {k}")));
    }
    let cov = sample_covariance(samples)?;
    if cov.iter().all(|v| *v == 0.0) {
        return Err(Error::DegenerateSamples);
    }
    let mut g = Graph::empty(n, false);
    for i in 0..n {
        let mut candidates: Vec<(usize, f64)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (j, cov[(i, j)].abs()))
            .filter(|&(_, w)| w > 0.0)
            .collect();
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for &(j, w) in candidates.iter().take(k) {
            g.add_edge(i, j, w)?;
        }
    }
    Ok(g)
}

/// Draws `m` rows from `N(mean, cov)`.
pub fn sample_gaussian(mean: &[f64], cov: &Mat, m: usize, rng: &mut Rng) -> Result<Mat> {
    let l = linalg::cholesky(cov)?;
    let n = mean.len();
    let mut out = Mat::zeros(m, n);
    for r in 0..m {
        let z = nalgebra::DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &l * z;
        for c in 0..n {
            out[(r, c)] = mean[c] + x[c];
        }
    }
    Ok(out)
}

/// Symmetric relative error matrix `E` with its norm budget.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativePerturbation {
    pub error: Mat,
    pub epsilon: f64,
}

const SYMMETRY_TOL: f64 = 1e-12;

/// `S̃ = S + E·S + S·Eᵀ` (relative perturbation with `P = I`).
pub fn apply_relative_perturbation(s: &Gso, e: &RelativePerturbation) -> Result<Gso> {
    let n = s.n();
    if e.error.nrows() != n || e.error.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "error matrix is {}x{}, GSO is {n}x{n}",
            e.error.nrows(),
            e.error.ncols()
        )));
    }
    let dev = linalg::asymmetry(&e.error);
    if dev > SYMMETRY_TOL {
        return Err(Error::AsymmetricError(dev));
    }
    let es = &e.error * s.matrix();
    let se = s.matrix() * e.error.transpose();
    Ok(Gso {
        matrix: s.matrix() + es + se,
        kind: GsoKind::Custom,
    })
}

/// Random symmetric `E` rescaled so that `‖E‖ = epsilon`.
///
/// The direction depends only on the RNG state, so sweeping `epsilon` with
/// identically seeded generators scales one fixed direction.
pub fn sample_perturbation(n: usize, epsilon: f64, rng: &mut Rng) -> Result<RelativePerturbation> {
    if epsilon < 0.0 || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let g = Mat::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut e = (&g + g.transpose()) * 0.5;
    if epsilon == 0.0 {
        return Ok(RelativePerturbation {
            error: Mat::zeros(n, n),
            epsilon,
        });
    }
    let radius = SymmetricEigen::new(e.clone())
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    e *= epsilon / radius;
    // exact symmetry after scaling
    for j in 0..n {
        for i in (j + 1)..n {
            e[(j, i)] = e[(i, j)];
        }
    }
    Ok(RelativePerturbation { error: e, epsilon })
}
