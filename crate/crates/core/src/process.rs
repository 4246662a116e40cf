//! Synthetic graph processes and the datasets built from them.
//!
//! Noise follows `w_t = u_t·1 + v_t` with `u_t ~ N(0, ξ²)` shared by all
//! nodes at a step and `v_t ~ N(0, η²·I)` drawn per node.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{sbm, Graph};
use crate::linalg::{self, Mat};
use crate::rng::{self, Rng};
use crate::spectral::eigendecompose_matrix;

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// One target signal per input step.
    Signals(Vec<Mat>),
    /// One class per node, predicted from the final step.
    NodeLabels(Vec<usize>),
    /// One class per sequence, predicted from the final step.
    GraphLabel(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub inputs: Vec<Mat>,
    pub targets: Targets,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphProcessDataset {
    pub n: usize,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Variance of the component shared by all nodes.
    pub xi2: f64,
    /// Variance of the per-node component.
    pub eta2: f64,
}

impl NoiseSpec {
    pub fn new(xi2: f64, eta2: f64) -> Result<Self> {
        if xi2 < 0.0 || eta2 < 0.0 || !xi2.is_finite() || !eta2.is_finite() {
            return Err(Error::InvalidArgument(format!("noise variances must be >= 0, got {xi2} and {eta2}")));
        }
        Ok(Self { xi2, eta2 })
    }

    pub fn none() -> Self {
        Self { xi2: 0.0, eta2: 0.0 }
    }

    /// One draw of `w_t` for `n` nodes. The shared term is drawn first.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Mat {
        let u: f64 = rng.sample::<f64, _>(StandardNormal) * self.xi2.sqrt();
        let sd = self.eta2.sqrt();
        Mat::from_fn(n, 1, |_, _| u + sd * rng.sample::<f64, _>(StandardNormal))
    }
}

pub fn standard_normal_signal(n: usize, rng: &mut Rng) -> Mat {
    Mat::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn check_len(t_len: usize) -> Result<()> {
    if t_len == 0 {
        return Err(Error::InvalidArgument("sequence length must be positive".into()));
    }
    Ok(())
}

/// `x_t = S x_{t−1} + w_t` for `t = 1 .. T−1`, starting from `x0`.
pub fn noisy_diffusion(s: &Mat, x0: &Mat, t_len: usize, noise: NoiseSpec, rng: &mut Rng) -> Result<Vec<Mat>> {
    check_len(t_len)?;
    if s.ncols() != x0.nrows() || s.nrows() != x0.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "operator {:?} and initial signal {:?}",
            s.shape(),
            x0.shape()
        )));
    }
    let mut seq = Vec::with_capacity(t_len);
    seq.push(x0.clone());
    for t in 1..t_len {
        let w = noise.sample(x0.nrows(), rng);
        seq.push(s * &seq[t - 1] + w);
    }
    Ok(seq)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    Ok(())
}

/// `x_t = α x_{t−1} + w_t` at every node.
pub fn ar1_process(alpha: f64, x0: &Mat, t_len: usize, noise: NoiseSpec, rng: &mut Rng) -> Result<Vec<Mat>> {
    check_alpha(alpha)?;
    check_len(t_len)?;
    let mut seq = Vec::with_capacity(t_len);
    seq.push(x0.clone());
    for t in 1..t_len {
        let w = noise.sample(x0.nrows(), rng);
        seq.push(&seq[t - 1] * alpha + w);
    }
    Ok(seq)
}

/// `S^α = V·sign(Λ)|Λ|^α·Vᵀ`; `S` itself when `α = 1`.
pub fn fractional_power(s: &Mat, alpha: f64) -> Result<Mat> {
    check_alpha(alpha)?;
    linalg::ensure_symmetric(s, 1e-12)?;
    if alpha == 1.0 {
        return Ok(s.clone());
    }
    let es = eigendecompose_matrix(s)?;
    let mut m = es.spectral_map(|l| l.signum() * l.abs().powf(alpha));
    // exact symmetry
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    Ok(m)
}

pub fn fractional_diffusion(s: &Mat, alpha: f64, x0: &Mat, t_len: usize, noise: NoiseSpec, rng: &mut Rng) -> Result<Vec<Mat>> {
    let op = fractional_power(s, alpha)?;
    noisy_diffusion(&op, x0, t_len, noise, rng)
}

/// Inputs `x_0 .. x_{L−k−1}` paired with targets `x_k .. x_{L−1}`.
pub fn kstep_pair(seq: &[Mat], k: usize) -> Result<Sample> {
    if k == 0 {
        return Err(Error::InvalidArgument("prediction horizon k must be at least 1".into()));
    }
    if seq.len() <= k {
        return Err(Error::SequenceTooShort {
            needed: k,
            available: seq.len(),
        });
    }
    let len = seq.len() - k;
    Ok(Sample {
        inputs: seq[..len].to_vec(),
        targets: Targets::Signals(seq[k..].to_vec()),
    })
}

/// Builds `sizes.total()` sequences, sequence `i` from a generator seeded
/// with `seed ⊕ i`, and splits them in order into train, val and test.
pub fn kstep_dataset(
    generator: impl Fn(&mut Rng) -> Result<Vec<Mat>>,
    k: usize,
    sizes: SplitSizes,
    seed: u64,
) -> Result<GraphProcessDataset> {
    let mut samples = Vec::with_capacity(sizes.total());
    for i in 0..sizes.total() {
        let mut r = rng::seeded(rng::derive_seed(seed, i as u64));
        samples.push(kstep_pair(&generator(&mut r)?, k)?);
    }
    split(samples, sizes)
}

fn split(mut samples: Vec<Sample>, sizes: SplitSizes) -> Result<GraphProcessDataset> {
    let n = samples
        .first()
        .and_then(|s| s.inputs.first())
        .map_or(0, Mat::nrows);
    let test = samples.split_off(sizes.train + sizes.val);
    let val = samples.split_off(sizes.train);
    Ok(GraphProcessDataset {
        n,
        train: samples,
        val,
        test,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SirState {
    Susceptible,
    Infected,
    Recovered,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirParams {
    pub p_seed: f64,
    pub p_inf: f64,
    pub recovery_days: usize,
    /// Last simulated day; days `0 ..= horizon` are recorded.
    pub horizon: usize,
}

impl SirParams {
    fn validate(&self) -> Result<()> {
        for (name, v) in [("p_seed", self.p_seed), ("p_inf", self.p_inf)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidProbability { name, value: v });
            }
        }
        if self.recovery_days == 0 {
            return Err(Error::InvalidArgument("recovery_days must be positive".into()));
        }
        Ok(())
    }
}

/// Daily node states of one epidemic.
#[derive(Debug, Clone, PartialEq)]
pub struct SirRun {
    pub states: Vec<Vec<SirState>>,
    /// Day on which each node became infected.
    pub infected_on: Vec<Option<usize>>,
}

impl SirRun {
    pub fn counts(&self, day: usize) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for s in &self.states[day] {
            match s {
                SirState::Susceptible => c.0 += 1,
                SirState::Infected => c.1 += 1,
                SirState::Recovered => c.2 += 1,
            }
        }
        c
    }
}

/// Day-0 seeding with one Bernoulli(`p_seed`) draw per node, in node order.
pub fn sir_simulate(g: &Graph, params: &SirParams, rng: &mut Rng) -> Result<SirRun> {
    params.validate()?;
    let initial: Vec<usize> = (0..g.n()).filter(|_| rng.random::<f64>() < params.p_seed).collect();
    sir_simulate_from(g, &initial, params, rng)
}

/// A node infected on day `s` is infected on days `s .. s + recovery_days`
/// and recovered afterwards. Each day, infected nodes in ascending order
/// draw once for every still-susceptible out-neighbour, also in ascending
/// order; successes become infected the next day.
pub fn sir_simulate_from(g: &Graph, initial: &[usize], params: &SirParams, rng: &mut Rng) -> Result<SirRun> {
    params.validate()?;
    let n = g.n();
    let neighbors: Vec<Vec<usize>> = (0..n).map(|i| g.neighbors(i)).collect();
    let mut infected_on = vec![None; n];
    for &i in initial {
        if i >= n {
            return Err(Error::InvalidArgument(format!("seed node {i} out of range")));
        }
        infected_on[i] = Some(0);
    }
    let state_on = |inf: &[Option<usize>], day: usize| -> Vec<SirState> {
        inf.iter()
            .map(|d| match d {
                None => SirState::Susceptible,
                Some(s) if day < s + params.recovery_days => SirState::Infected,
                Some(_) => SirState::Recovered,
            })
            .collect()
    };
    let mut states = vec![state_on(&infected_on, 0)];
    for day in 0..params.horizon {
        let today = &states[day];
        for i in 0..n {
            if today[i] != SirState::Infected {
                continue;
            }
            for &j in &neighbors[i] {
                if infected_on[j].is_none() && rng.random::<f64>() < params.p_inf {
                    infected_on[j] = Some(day + 1);
                }
            }
        }
        states.push(state_on(&infected_on, day + 1));
    }
    Ok(SirRun { states, infected_on })
}

/// One-hot `S/I/R` encoding, `n × 3`.
pub fn one_hot_states(states: &[SirState]) -> Mat {
    Mat::from_fn(states.len(), 3, |i, c| {
        let k = match states[i] {
            SirState::Susceptible => 0,
            SirState::Infected => 1,
            SirState::Recovered => 2,
        };
        f64::from(u8::from(k == c))
    })
}

/// Observed days `0 .. window` as inputs, node labels "infected on day
/// `window − 1 + k_ahead`" as targets.
pub fn sir_sample(run: &SirRun, window: usize, k_ahead: usize) -> Result<Sample> {
    let needed = window + k_ahead;
    if window == 0 || run.states.len() < needed {
        return Err(Error::SequenceTooShort {
            needed,
            available: run.states.len(),
        });
    }
    let inputs = run.states[..window].iter().map(|s| one_hot_states(s)).collect();
    let labels = run.states[window - 1 + k_ahead]
        .iter()
        .map(|s| usize::from(*s == SirState::Infected))
        .collect();
    Ok(Sample {
        inputs,
        targets: Targets::NodeLabels(labels),
    })
}

pub fn sir_dataset(g: &Graph, params: &SirParams, window: usize, k_ahead: usize, sizes: SplitSizes, seed: u64) -> Result<GraphProcessDataset> {
    if params.horizon + 1 < window + k_ahead {
        return Err(Error::SequenceTooShort {
            needed: window + k_ahead,
            available: params.horizon + 1,
        });
    }
    let mut samples = Vec::with_capacity(sizes.total());
    for i in 0..sizes.total() {
        let mut r = rng::seeded(rng::derive_seed(seed, i as u64));
        let run = sir_simulate(g, params, &mut r)?;
        samples.push(sir_sample(&run, window, k_ahead)?);
    }
    split(samples, sizes)
}

/// Friendship-network stand-in: SBM(134, 5, 0.4, 0.02) without isolated nodes.
pub fn sir_standin_graph(rng: &mut Rng) -> Result<Graph> {
    let g = sbm(134, 5, 0.4, 0.02, rng)?;
    Ok(g.remove_isolated().0)
}

/// Equicorrelated Gaussian covariance with `Σ_ii = var` and `Σ_ij = cov`.
pub fn equicorrelated_covariance(n: usize, var: f64, cov: f64) -> Mat {
    Mat::from_fn(n, n, |i, j| if i == j { var } else { cov })
}

fn write_tensor(path: &Path, dims: &[usize], data: &[f64]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&(dims.len() as u64).to_le_bytes())?;
    for &d in dims {
        f.write_all(&(d as u64).to_le_bytes())?;
    }
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    f.write_all(&bytes)?;
    Ok(())
}

/// Reads a tensor written by [`export_dataset`]: a little-endian `u64`
/// rank, the `u64` dimensions, then the `f64` payload in row-major order.
pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let bytes = fs::read(path)?;
    let word = |i: usize| -> Result<u64> {
        bytes
            .get(8 * i..8 * i + 8)
            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
            .ok_or_else(|| Error::Malformed(format!("{} is truncated", path.display())))
    };
    let rank = word(0)? as usize;
    let dims: Vec<usize> = (0..rank).map(|i| word(1 + i).map(|d| d as usize)).collect::<Result<_>>()?;
    let count: usize = dims.iter().product();
    let start = 8 * (1 + rank);
    if bytes.len() != start + 8 * count {
        return Err(Error::Malformed(format!("{} has the wrong payload size", path.display())));
    }
    let data = bytes[start..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((dims, data))
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    n: usize,
    target_kind: String,
    splits: Vec<(String, usize)>,
}

fn split_tensors(samples: &[Sample]) -> Result<((Vec<usize>, Vec<f64>), (Vec<usize>, Vec<f64>))> {
    let count = samples.len();
    let (steps, n, f) = samples
        .first()
        .map(|s| (s.inputs.len(), s.inputs[0].nrows(), s.inputs[0].ncols()))
        .unwrap_or((0, 0, 0));
    let mut x = Vec::with_capacity(count * steps * n * f);
    let mut y = Vec::new();
    let mut y_dims = vec![count];
    for s in samples {
        if s.inputs.len() != steps {
            return Err(Error::ShapeMismatch("sequences differ in length".into()));
        }
        for m in &s.inputs {
            for i in 0..n {
                for c in 0..f {
                    x.push(m[(i, c)]);
                }
            }
        }
        match &s.targets {
            Targets::Signals(seq) => {
                let fy = seq[0].ncols();
                y_dims = vec![count, seq.len(), n, fy];
                for m in seq {
                    for i in 0..n {
                        for c in 0..fy {
                            y.push(m[(i, c)]);
                        }
                    }
                }
            }
            Targets::NodeLabels(l) => {
                y_dims = vec![count, l.len()];
                y.extend(l.iter().map(|&v| v as f64));
            }
            Targets::GraphLabel(l) => y.push(*l as f64),
        }
    }
    Ok(((vec![count, steps, n, f], x), (y_dims, y)))
}

fn target_kind(ds: &GraphProcessDataset) -> &'static str {
    match ds.train.iter().chain(&ds.val).chain(&ds.test).next().map(|s| &s.targets) {
        Some(Targets::NodeLabels(_)) => "node_labels",
        Some(Targets::GraphLabel(_)) => "graph_label",
        _ => "signals",
    }
}

/// Writes `manifest.json` plus `<split>_inputs.bin` / `<split>_targets.bin`.
pub fn export_dataset(ds: &GraphProcessDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let parts = [("train", &ds.train), ("val", &ds.val), ("test", &ds.test)];
    for (name, samples) in parts {
        let ((xd, x), (yd, y)) = split_tensors(samples)?;
        write_tensor(&dir.join(format!("{name}_inputs.bin")), &xd, &x)?;
        write_tensor(&dir.join(format!("{name}_targets.bin")), &yd, &y)?;
    }
    let manifest = DatasetManifest {
        n: ds.n,
        target_kind: target_kind(ds).into(),
        splits: parts.iter().map(|(n, s)| (n.to_string(), s.len())).collect(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn import_dataset(dir: &Path) -> Result<GraphProcessDataset> {
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut parts = Vec::new();
    for (name, count) in &manifest.splits {
        let (xd, x) = read_tensor(&dir.join(format!("{name}_inputs.bin")))?;
        let (yd, y) = read_tensor(&dir.join(format!("{name}_targets.bin")))?;
        if xd.len() != 4 || xd[0] != *count || yd.first() != Some(count) {
            return Err(Error::Malformed(format!("split {name} does not match the manifest")));
        }
        let (steps, n, f) = (xd[1], xd[2], xd[3]);
        let mut samples = Vec::with_capacity(*count);
        for s in 0..*count {
            let inputs = (0..steps)
                .map(|t| {
                    let base = ((s * steps + t) * n) * f;
                    Mat::from_row_slice(n, f, &x[base..base + n * f])
                })
                .collect();
            let targets = match manifest.target_kind.as_str() {
                "signals" => {
                    let (ty, fy) = (yd[1], yd[3]);
                    Targets::Signals(
                        (0..ty)
                            .map(|t| {
                                let base = ((s * ty + t) * n) * fy;
                                Mat::from_row_slice(n, fy, &y[base..base + n * fy])
                            })
                            .collect(),
                    )
                }
                "node_labels" => Targets::NodeLabels(y[s * yd[1]..(s + 1) * yd[1]].iter().map(|&v| v as usize).collect()),
                "graph_label" => Targets::GraphLabel(y[s] as usize),
                other => return Err(Error::Malformed(format!("unknown target kind {other}"))),
            };
            samples.push(Sample { inputs, targets });
        }
        parts.push(samples);
    }
    let mut it = parts.into_iter();
    Ok(GraphProcessDataset {
        n: manifest.n,
        train: it.next().unwrap_or_default(),
        val: it.next().unwrap_or_default(),
        test: it.next().unwrap_or_default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_gso, permute_matrix, GsoKind, Permutation};
    use crate::rng::seeded;

    fn sbm_gso(n: usize, seed: u64) -> Mat {
        let g = sbm(n, 2, 0.8, 0.2, &mut seeded(seed)).unwrap();
        build_gso(&g, GsoKind::NormalizedAdjacency).unwrap().into_matrix()
    }

    fn path(n: usize) -> Graph {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1, 1.0)).collect();
        Graph::undirected(n, &edges).unwrap()
    }

    #[test]
    fn noiseless_diffusion_is_matrix_power() {
        let s = sbm_gso(6, 1);
        let x0 = standard_normal_signal(6, &mut seeded(2));
        let seq = noisy_diffusion(&s, &x0, 5, NoiseSpec::none(), &mut seeded(3)).unwrap();
        let mut want = x0.clone();
        for x in &seq {
            assert!((x - &want).amax() < 1e-14);
            want = &s * want;
        }
    }

    #[test]
    fn zero_operator_gives_pure_noise() {
        let noise = NoiseSpec::new(0.01, 0.02).unwrap();
        let seq = noisy_diffusion(&Mat::zeros(4, 4), &Mat::zeros(4, 1), 3, noise, &mut seeded(1)).unwrap();
        let mut r = seeded(1);
        for x in &seq[1..] {
            assert_eq!(x, &noise.sample(4, &mut r));
        }
    }

    #[test]
    fn noise_covariance_structure() {
        let noise = NoiseSpec::new(0.01, 0.02).unwrap();
        let mut r = seeded(9);
        let draws = 10_000;
        let (mut var0, mut cov01) = (0.0, 0.0);
        for _ in 0..draws {
            let w = noise.sample(5, &mut r);
            var0 += w[0] * w[0];
            cov01 += w[0] * w[1];
        }
        var0 /= draws as f64;
        cov01 /= draws as f64;
        assert!((var0 - 0.03).abs() < 0.003, "{var0}");
        assert!((cov01 - 0.01).abs() < 0.0015, "{cov01}");
    }

    #[test]
    fn ar1_examples() {
        let x0 = Mat::from_column_slice(3, 1, &[1.0, -2.0, 0.5]);
        let seq = ar1_process(1.0, &x0, 4, NoiseSpec::none(), &mut seeded(1)).unwrap();
        assert!(seq.iter().all(|x| x == &x0));
        let seq = ar1_process(1e-12, &x0, 3, NoiseSpec::none(), &mut seeded(1)).unwrap();
        assert!(seq[1].amax() < 1e-11);
        assert!(matches!(ar1_process(0.0, &x0, 3, NoiseSpec::none(), &mut seeded(1)), Err(Error::InvalidAlpha(_))));
        assert!(matches!(ar1_process(1.5, &x0, 3, NoiseSpec::none(), &mut seeded(1)), Err(Error::InvalidAlpha(_))));
    }

    #[test]
    fn ar1_stationary_variance() {
        let noise = NoiseSpec::new(0.01, 0.01).unwrap();
        let seq = ar1_process(0.5, &Mat::zeros(4, 1), 40_000, noise, &mut seeded(4)).unwrap();
        let tail = &seq[100..];
        let var = tail.iter().map(|x| x[0] * x[0]).sum::<f64>() / tail.len() as f64;
        let want = 0.02 / (1.0 - 0.25);
        assert!((var - want).abs() < 0.1 * want, "{var} vs {want}");
    }

    #[test]
    fn fractional_examples() {
        let s = sbm_gso(6, 5);
        let x0 = standard_normal_signal(6, &mut seeded(1));
        let noise = NoiseSpec::new(0.01, 0.01).unwrap();
        let a = fractional_diffusion(&s, 1.0, &x0, 5, noise, &mut seeded(2)).unwrap();
        let b = noisy_diffusion(&s, &x0, 5, noise, &mut seeded(2)).unwrap();
        assert_eq!(a, b);
        let id = fractional_power(&Mat::identity(4, 4), 0.3).unwrap();
        assert!((id - Mat::identity(4, 4)).amax() < 1e-14);
        let psd = &s * &s;
        let half = fractional_power(&psd, 0.5).unwrap();
        assert!((&half * &half - &psd).amax() < 1e-8);
        assert_eq!(linalg::asymmetry(&fractional_power(&s, 0.2).unwrap()), 0.0);
        let asym = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(fractional_power(&asym, 0.5), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn noiseless_diffusion_commutes_with_permutation() {
        let s = sbm_gso(7, 6);
        let x0 = standard_normal_signal(7, &mut seeded(2));
        let p = Permutation::random(7, &mut seeded(3));
        let a = noisy_diffusion(&permute_matrix(&s, &p).unwrap(), &p.apply_rows(&x0).unwrap(), 4, NoiseSpec::none(), &mut seeded(0)).unwrap();
        let b = noisy_diffusion(&s, &x0, 4, NoiseSpec::none(), &mut seeded(0)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - p.apply_rows(y).unwrap()).amax() < 1e-14);
        }
    }

    #[test]
    fn kstep_examples() {
        let seq: Vec<Mat> = (0..60).map(|t| Mat::from_element(3, 1, t as f64)).collect();
        assert!(matches!(kstep_pair(&seq, 0), Err(Error::InvalidArgument(_))));
        let s = kstep_pair(&seq, 5).unwrap();
        assert_eq!(s.inputs.len(), 55);
        let Targets::Signals(t) = &s.targets else { panic!() };
        assert_eq!(t.len(), 55);
        assert_eq!(t[0][(0, 0)], 5.0);
        let constant = vec![Mat::from_element(3, 1, 2.0); 8];
        let s = kstep_pair(&constant, 3).unwrap();
        assert_eq!(Targets::Signals(s.inputs.clone()), s.targets);
        assert!(matches!(kstep_pair(&seq[..5], 5), Err(Error::SequenceTooShort { .. })));
    }

    #[test]
    fn kstep_dataset_is_reproducible_and_split() {
        let s = sbm_gso(5, 1);
        let generator = |r: &mut Rng| {
            let x0 = standard_normal_signal(5, r);
            noisy_diffusion(&s, &x0, 10, NoiseSpec::new(0.01, 0.01).unwrap(), r)
        };
        let sizes = SplitSizes { train: 7, val: 2, test: 3 };
        let a = kstep_dataset(generator, 2, sizes, 11).unwrap();
        let b = kstep_dataset(generator, 2, sizes, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (7, 2, 3));
        assert_ne!(a.train[0], a.train[1]);
    }

    fn sir(p_seed: f64, p_inf: f64, horizon: usize) -> SirParams {
        SirParams {
            p_seed,
            p_inf,
            recovery_days: 4,
            horizon,
        }
    }

    #[test]
    fn sir_without_transmission_never_grows() {
        let g = sbm(30, 2, 0.5, 0.1, &mut seeded(1)).unwrap();
        let run = sir_simulate(&g, &sir(0.2, 0.0, 20), &mut seeded(2)).unwrap();
        let seeded_nodes = run.infected_on.iter().filter(|d| d.is_some()).count();
        assert!(run.infected_on.iter().all(|d| d.is_none_or(|v| v == 0)));
        for day in 0..=20 {
            let (_, i, r) = run.counts(day);
            assert_eq!(i + r, seeded_nodes);
        }
    }

    #[test]
    fn deterministic_wave_on_path() {
        let g = path(12);
        let run = sir_simulate_from(&g, &[0], &sir(0.0, 1.0, 14), &mut seeded(0)).unwrap();
        for (node, day) in run.infected_on.iter().enumerate() {
            assert_eq!(*day, Some(node));
        }
        for day in 0..=14 {
            for node in 0..12 {
                let want = if day < node {
                    SirState::Susceptible
                } else if day <= node + 3 {
                    SirState::Infected
                } else {
                    SirState::Recovered
                };
                assert_eq!(run.states[day][node], want, "day {day} node {node}");
            }
        }
    }

    #[test]
    fn sir_seed_mean() {
        let g = Graph::empty(134, false);
        let total: usize = (0..1000)
            .map(|s| {
                let run = sir_simulate(&g, &sir(0.05, 0.3, 0), &mut seeded(s)).unwrap();
                run.counts(0).1
            })
            .sum();
        let mean = total as f64 / 1000.0;
        assert!((mean - 6.7).abs() < 0.67, "{mean}");
    }

    #[test]
    fn sir_rejects_bad_probability() {
        assert!(matches!(
            sir_simulate(&path(3), &sir(1.2, 0.3, 5), &mut seeded(0)),
            Err(Error::InvalidProbability { name: "p_seed", .. })
        ));
    }

    #[test]
    fn recovered_snapshot_has_no_positive_labels() {
        let g = path(4);
        let run = sir_simulate_from(&g, &[0, 1, 2, 3], &sir(0.0, 1.0, 20), &mut seeded(0)).unwrap();
        let s = sir_sample(&run, 6, 8).unwrap();
        assert_eq!(s.targets, Targets::NodeLabels(vec![0; 4]));
        assert_eq!(s.inputs.len(), 6);
        assert_eq!(s.inputs[5].row(0).iter().cloned().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn sir_dataset_sizes_and_horizon() {
        let g = sir_standin_graph(&mut seeded(1)).unwrap();
        let sizes = SplitSizes { train: 1000, val: 120, test: 200 };
        let ds = sir_dataset(&g, &sir(0.05, 0.3, 20), 5, 8, sizes, 3).unwrap();
        assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (1000, 120, 200));
        assert_eq!(ds.n, g.n());
        assert!(matches!(
            sir_dataset(&g, &sir(0.05, 0.3, 10), 5, 8, sizes, 3),
            Err(Error::SequenceTooShort { .. })
        ));
    }

    #[test]
    fn dataset_export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = sbm_gso(4, 2);
        let generator = |r: &mut Rng| {
            let x0 = standard_normal_signal(4, r);
            noisy_diffusion(&s, &x0, 6, NoiseSpec::new(0.01, 0.01).unwrap(), r)
        };
        let ds = kstep_dataset(generator, 2, SplitSizes { train: 3, val: 1, test: 2 }, 5).unwrap();
        export_dataset(&ds, dir.path()).unwrap();
        assert_eq!(import_dataset(dir.path()).unwrap(), ds);

        let g = path(5);
        let ds = sir_dataset(&g, &sir(0.3, 0.5, 12), 3, 8, SplitSizes { train: 2, val: 1, test: 1 }, 1).unwrap();
        let sub = dir.path().join("sir");
        export_dataset(&ds, &sub).unwrap();
        assert_eq!(import_dataset(&sub).unwrap(), ds);
        let (dims, _) = read_tensor(&sub.join("train_inputs.bin")).unwrap();
        assert_eq!(dims, vec![2, 3, 5, 3]);
    }
}
