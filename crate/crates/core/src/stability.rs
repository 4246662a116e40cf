//! Empirical stability measurements under relative graph perturbations.
//!
//! Every sweep fixes `P = I`: the perturbed operator is built as
//! `S̃ = S + ES + SE` from a sampled direction, so no permutation search
//! is needed. Each trial draws one unit direction `E₀` and reuses it at
//! every `ε` (with `E = εE₀`), which makes the measured discrepancy a
//! smooth function of `ε` per trial.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::FilterBank;
use crate::graph::{apply_relative_perturbation, permute_matrix, sample_perturbation, Gso, Permutation, RelativePerturbation};
use crate::linalg::{self, Mat};
use crate::model::{grnn_forward, node_gates, time_gates, edge_gates, Activation, GateReadout, GatedGrnn, GatingKind, Readout};
use crate::rng::{self, Rng};
use crate::spectral::{
    eigendecompose, eigendecompose_matrix, filter_norm, integral_lipschitz_constant, misalignment_delta, EigenSystem, FrequencyResponse,
    LIPSCHITZ_GRID,
};

/// Slack for floating-point comparisons against bounds.
const BOUND_SLACK: f64 = 1e-12;
/// Tolerance on `‖A‖ ≤ 1` when checking normalized filter height.
const HEIGHT_TOL: f64 = 1e-9;
/// Perturbation size used when probing graph sensitivity of gate models.
pub const GATE_PROBE_EPS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct EquivarianceReport {
    /// `‖y_t(PᵀSP, Pᵀx) − Pᵀy_t(S, x)‖` per step.
    pub per_step: Vec<f64>,
    pub max_deviation: f64,
    pub passed: bool,
}

/// Runs the model on `(S, x)` and on the relabeled `(PᵀSP, Pᵀx)` and
/// compares outputs after undoing the relabeling. Time-gate readouts are
/// relabeled along with the graph.
pub fn check_equivariance(model: &GatedGrnn, s: &Mat, x_seq: &[Mat], p: &Permutation, tol: f64) -> Result<EquivarianceReport> {
    let sp = permute_matrix(s, p)?;
    let xp: Vec<Mat> = x_seq.iter().map(|x| p.apply_rows(x)).collect::<Result<_>>()?;
    let permuted = model.with_permuted_time_readout(p)?;
    let base = grnn_forward(model, s, x_seq, None)?;
    let moved = grnn_forward(&permuted, &sp, &xp, None)?;
    let per_step = base
        .outputs
        .iter()
        .zip(&moved.outputs)
        .map(|(y, yp)| {
            let want = match model.spec.readout {
                Readout::Node => p.apply_rows(y)?,
                Readout::GraphMean => y.clone(),
            };
            Ok((yp - want).norm())
        })
        .collect::<Result<Vec<f64>>>()?;
    let max_deviation = per_step.iter().copied().fold(0.0, f64::max);
    Ok(EquivarianceReport {
        per_step,
        max_deviation,
        passed: max_deviation <= tol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepKind {
    FilterLemma,
    Ungated,
    Gated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub eps: f64,
    /// Step index; 0 for filter sweeps.
    pub t: usize,
    pub trial: usize,
    pub measured: f64,
    pub bound: f64,
    pub c: f64,
    pub delta: f64,
    pub q: f64,
    pub phi1: f64,
    pub phi2: f64,
}

/// Outcome of checking `‖z_i‖ ≤ Σ_{j<i} ‖B‖^j ‖A‖ ‖x‖` on every step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StateBoundCheck {
    pub checks: usize,
    pub violations: usize,
    /// Largest `‖z_i‖ / bound` seen.
    pub worst_ratio: f64,
}

impl StateBoundCheck {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }

    fn record(&mut self, norm: f64, bound: f64) {
        self.checks += 1;
        if norm > bound + BOUND_SLACK {
            self.violations += 1;
        }
        if bound > 0.0 {
            self.worst_ratio = self.worst_ratio.max(norm / bound);
        } else if norm > 0.0 {
            self.worst_ratio = f64::INFINITY;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub kind: SweepKind,
    pub n: usize,
    pub epsilon_grid: Vec<f64>,
    pub horizon: usize,
    pub trials: usize,
    pub rows: Vec<StabilityRow>,
    pub state_bound: Option<StateBoundCheck>,
}

/// Result of the `measured ≤ bound + max(c, 0)·ε²` check, where `c` is the
/// quadratic coefficient of a per-series least-squares fit
/// `measured ≈ aε + cε²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualCheck {
    pub passed: bool,
    pub cells: usize,
    pub failures: usize,
    /// Largest `measured − bound − max(c,0)ε²` over all cells.
    pub worst_excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub kind: SweepKind,
    pub n: usize,
    pub epsilon_grid: Vec<f64>,
    pub horizon: usize,
    pub trials: usize,
    pub max_measured_over_bound: f64,
    pub direct_check: bool,
    pub residual_check: ResidualCheck,
    pub small_eps_loglog_slope: Option<f64>,
    pub state_bound_holds: Option<bool>,
    pub note: String,
}

impl StabilityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps,t,trial,measured,bound,C,delta,Q,phi1,phi2\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:e},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                r.eps, r.t, r.trial, r.measured, r.bound, r.c, r.delta, r.q, r.phi1, r.phi2
            ));
        }
        out
    }

    /// `measured ≤ bound` at every cell.
    pub fn direct_check(&self) -> bool {
        self.rows.iter().all(|r| r.measured <= r.bound + BOUND_SLACK)
    }

    pub fn max_measured_over_bound(&self) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.eps > 0.0 && r.bound > 0.0)
            .map(|r| r.measured / r.bound)
            .fold(0.0, f64::max)
    }

    fn steps(&self) -> Vec<usize> {
        let mut ts: Vec<usize> = self.rows.iter().map(|r| r.t).collect();
        ts.sort_unstable();
        ts.dedup();
        ts
    }

    pub fn residual_check(&self) -> ResidualCheck {
        let mut cells = 0;
        let mut failures = 0;
        let mut worst = f64::NEG_INFINITY;
        for t in self.steps() {
            for trial in 0..self.trials {
                let series: Vec<&StabilityRow> = self.rows.iter().filter(|r| r.t == t && r.trial == trial).collect();
                let (xs, ys): (Vec<f64>, Vec<f64>) = series.iter().filter(|r| r.eps > 0.0).map(|r| (r.eps, r.measured)).unzip();
                let c = if xs.len() >= 2 { linalg::fit_linear_quadratic(&xs, &ys).1.max(0.0) } else { 0.0 };
                for r in series {
                    cells += 1;
                    let excess = r.measured - r.bound - c * r.eps * r.eps;
                    worst = worst.max(excess);
                    if excess > BOUND_SLACK * r.bound.max(1.0) {
                        failures += 1;
                    }
                }
            }
        }
        ResidualCheck {
            passed: failures == 0,
            cells,
            failures,
            worst_excess: worst,
        }
    }

    /// Trial-averaged measurement at step `t` for each listed `ε`.
    pub fn mean_measured(&self, t: usize, eps: &[f64]) -> Vec<f64> {
        eps.iter()
            .map(|&e| {
                let vals: Vec<f64> = self.rows.iter().filter(|r| r.t == t && r.eps == e).map(|r| r.measured).collect();
                vals.iter().sum::<f64>() / vals.len().max(1) as f64
            })
            .collect()
    }

    /// Log-log slope of the trial-averaged measurement at step `t` over the
    /// listed `ε` values.
    pub fn loglog_slope(&self, t: usize, eps: &[f64]) -> f64 {
        linalg::loglog_slope(eps, &self.mean_measured(t, eps))
    }

    /// Slope over the three smallest positive grid values, at the last step.
    pub fn small_eps_slope(&self) -> Option<f64> {
        let mut eps: Vec<f64> = self.epsilon_grid.iter().copied().filter(|&e| e > 0.0).collect();
        eps.sort_by(f64::total_cmp);
        eps.truncate(3);
        let t = *self.steps().last()?;
        (eps.len() >= 2).then(|| self.loglog_slope(t, &eps))
    }

    pub fn summary(&self) -> StabilitySummary {
        let note = match self.kind {
            SweepKind::Gated => "gate constants are sampled lower bounds; satisfying the bound is evidence, not proof",
            _ => "P = I; the bound is first order and checked with a fitted quadratic residual",
        };
        StabilitySummary {
            kind: self.kind,
            n: self.n,
            epsilon_grid: self.epsilon_grid.clone(),
            horizon: self.horizon,
            trials: self.trials,
            max_measured_over_bound: self.max_measured_over_bound(),
            direct_check: self.direct_check(),
            residual_check: self.residual_check(),
            small_eps_loglog_slope: self.small_eps_slope(),
            state_bound_holds: self.state_bound.map(|s| s.holds()),
            note: note.into(),
        }
    }

    /// Writes `stability.csv` and `summary.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("stability.csv"), self.to_csv())?;
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&self.summary())?)?;
        Ok(())
    }
}

fn check_grid(eps_grid: &[f64], trials: usize) -> Result<()> {
    if eps_grid.is_empty() || trials == 0 {
        return Err(Error::InvalidArgument("need a non-empty epsilon grid and at least one trial".into()));
    }
    if let Some(e) = eps_grid.iter().find(|e| !(**e >= 0.0) || !e.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be finite and >= 0, got {e}")));
    }
    Ok(())
}

/// One trial's perturbation direction with `‖E₀‖ = 1`, and its `δ`.
struct Direction {
    unit: Mat,
    delta: f64,
}

fn direction(s_eig: &EigenSystem, n: usize, rng: &mut Rng) -> Result<Direction> {
    let unit = sample_perturbation(n, 1.0, rng)?.error;
    let delta = misalignment_delta(s_eig, &eigendecompose_matrix(&unit)?)?.delta;
    Ok(Direction { unit, delta })
}

fn perturbed(s: &Gso, dir: &Direction, eps: f64) -> Result<Gso> {
    apply_relative_perturbation(
        s,
        &RelativePerturbation {
            error: &dir.unit * eps,
            epsilon: eps,
        },
    )
}

/// Occupied spectral interval of `S ∪ S̃`, widened if it collapses to a point.
fn spectral_interval(a: &EigenSystem, b: &EigenSystem) -> (f64, f64) {
    let lo = a.min_eigenvalue().min(b.min_eigenvalue());
    let hi = a.max_eigenvalue().max(b.max_eigenvalue());
    if hi - lo < 1e-12 {
        (lo - 1e-6, hi + 1e-6)
    } else {
        (lo, hi)
    }
}

fn lipschitz_max(filters: &[FrequencyResponse], interval: (f64, f64)) -> Result<f64> {
    filters.iter().try_fold(0.0f64, |acc, fr| {
        Ok(acc.max(integral_lipschitz_constant(fr, interval.0, interval.1, LIPSCHITZ_GRID)?))
    })
}

/// Divides the taps so that `max_λ |a(λ)| = 1` on `S`; zero filters are left alone.
pub fn normalize_response(fr: &FrequencyResponse, s_eig: &EigenSystem) -> FrequencyResponse {
    let h = filter_norm(fr, s_eig);
    if h > 0.0 {
        fr.scaled(1.0 / h)
    } else {
        fr.clone()
    }
}

/// Filter sweep: `‖A(S) − A(S̃)‖` against `2C(1 + δ√N)ε`.
pub fn lemma_filter_sweep(fr: &FrequencyResponse, s: &Gso, eps_grid: &[f64], trials: usize, rng: &mut Rng) -> Result<StabilityReport> {
    check_grid(eps_grid, trials)?;
    let n = s.n();
    let s_eig = eigendecompose(s)?;
    let a_s = fr.matrix(s.matrix());
    let base = rng.random::<u64>();
    let sqrt_n = (n as f64).sqrt();
    let mut rows = Vec::with_capacity(eps_grid.len() * trials);
    for trial in 0..trials {
        let dir = direction(&s_eig, n, &mut rng::seeded(rng::derive_seed(base, trial as u64)))?;
        for &eps in eps_grid {
            let st = perturbed(s, &dir, eps)?;
            let st_eig = eigendecompose(&st)?;
            let c = lipschitz_max(std::slice::from_ref(fr), spectral_interval(&s_eig, &st_eig))?;
            let measured = linalg::operator_norm(&(&a_s - fr.matrix(st.matrix())));
            rows.push(StabilityRow {
                eps,
                t: 0,
                trial,
                measured,
                bound: 2.0 * c * (1.0 + dir.delta * sqrt_n) * eps,
                c,
                delta: dir.delta,
                q: 0.0,
                phi1: 0.0,
                phi2: 0.0,
            });
        }
    }
    Ok(StabilityReport {
        kind: SweepKind::FilterLemma,
        n,
        epsilon_grid: eps_grid.to_vec(),
        horizon: 0,
        trials,
        rows,
        state_bound: None,
    })
}

/// `C(1+√Nδ)(t²+3t)ε`.
pub fn theorem1_bound(c: f64, delta: f64, n: usize, t: usize, eps: f64) -> f64 {
    let t = t as f64;
    c * (1.0 + (n as f64).sqrt() * delta) * (t * t + 3.0 * t) * eps
}

/// `C(1+δ√N)(3t+t²)ε + Q(φ2 + φ1C(1+δ√N))t³ε + Qφ1C(1+δ√N)t⁴ε`.
pub fn theorem2_bound(c: f64, delta: f64, n: usize, t: usize, eps: f64, g: &GateConstants) -> f64 {
    let t = t as f64;
    let cd = c * (1.0 + delta * (n as f64).sqrt());
    cd * (3.0 * t + t * t) * eps + g.q * (g.phi2 + g.phi1 * cd) * t.powi(3) * eps + g.q * g.phi1 * cd * t.powi(4) * eps
}

fn response(bank: &FilterBank, what: &str) -> Result<FrequencyResponse> {
    bank.scalar_taps()
        .map(FrequencyResponse::new)
        .ok_or_else(|| Error::AssumptionViolated(format!("{what}: stability sweeps need single-feature filters")))
}

fn normalized_lipschitz(a: Activation) -> bool {
    matches!(a, Activation::Identity | Activation::Tanh | Activation::Relu)
}

/// Every scalar graph filter of the model, in canonical order, with a label.
fn model_filters(model: &GatedGrnn) -> Vec<(&FilterBank, String)> {
    let mut out = vec![(&model.core.input, "A".to_string()), (&model.core.state, "B".to_string())];
    for (i, l) in model.output.layers.iter().enumerate() {
        out.push((&l.bank, format!("output layer {i}")));
    }
    if let Some(g) = &model.gates {
        for (gate, name) in [(&g.input, "input gate"), (&g.forget, "forget gate")] {
            out.push((&gate.grnn.input, format!("{name} input filter")));
            out.push((&gate.grnn.state, format!("{name} state filter")));
            if let GateReadout::Node { bank } = &gate.readout {
                out.push((bank, format!("{name} readout")));
            }
        }
    }
    out
}

fn model_filters_mut(model: &mut GatedGrnn) -> Vec<&mut FilterBank> {
    let mut out = vec![&mut model.core.input, &mut model.core.state];
    for l in &mut model.output.layers {
        out.push(&mut l.bank);
    }
    if let Some(g) = &mut model.gates {
        for gate in [&mut g.input, &mut g.forget] {
            out.push(&mut gate.grnn.input);
            out.push(&mut gate.grnn.state);
            if let GateReadout::Node { bank } = &mut gate.readout {
                out.push(bank);
            }
        }
    }
    out
}

/// Rescales every graph filter of a single-feature model to unit height on `S`.
pub fn normalize_filters(model: &mut GatedGrnn, s: &Gso) -> Result<()> {
    let s_eig = eigendecompose(s)?;
    for bank in model_filters_mut(model) {
        let fr = response(bank, "filter normalization")?;
        let h = filter_norm(&fr, &s_eig);
        if h > 0.0 {
            for tap in &mut bank.taps {
                *tap /= h;
            }
        }
    }
    Ok(())
}

fn check_assumptions(model: &GatedGrnn, s_eig: &EigenSystem, gated: bool) -> Result<Vec<FrequencyResponse>> {
    let spec = &model.spec;
    if !gated && spec.gating != GatingKind::None {
        return Err(Error::AssumptionViolated("the ungated sweep needs a model without gates".into()));
    }
    if spec.input_features != 1 || spec.state_features != 1 || spec.output_features() != 1 {
        return Err(Error::AssumptionViolated("single-feature model required (F = H = 1)".into()));
    }
    if spec.readout != Readout::Node {
        return Err(Error::AssumptionViolated("node-level outputs required".into()));
    }
    if !normalized_lipschitz(model.core.sigma) || model.output.layers.iter().any(|l| !normalized_lipschitz(l.activation)) {
        return Err(Error::AssumptionViolated("AS2: nonlinearities must be normalized Lipschitz with σ(0) = 0".into()));
    }
    let mut frs = Vec::new();
    for (bank, name) in model_filters(model) {
        let fr = response(bank, &name)?;
        let h = filter_norm(&fr, s_eig);
        if h > 1.0 + HEIGHT_TOL {
            return Err(Error::AssumptionViolated(format!("AS1: filter {name} has height {h} > 1")));
        }
        frs.push(fr);
    }
    Ok(frs)
}

/// Unit-norm input sequence (AS4).
fn unit_inputs(n: usize, t_len: usize, rng: &mut Rng) -> Vec<Mat> {
    (0..t_len)
        .map(|_| {
            let x = Mat::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = x.norm();
            x / norm
        })
        .collect()
}

fn dense(bank: &FilterBank, s: &Mat) -> Result<Mat> {
    Ok(response(bank, "state bound")?.matrix(s))
}

/// `‖z_i‖ ≤ Σ_{j<i} ‖B‖^j ‖A‖ ‖x‖`, with norms measured on the graph used.
fn check_states(check: &mut StateBoundCheck, model: &GatedGrnn, s: &Mat, x_seq: &[Mat], states: &[Mat]) -> Result<()> {
    if model.spec.gating == GatingKind::Edge {
        return Ok(());
    }
    let a = linalg::operator_norm(&dense(&model.core.input, s)?);
    let b = linalg::operator_norm(&dense(&model.core.state, s)?);
    let x = x_seq.iter().map(Mat::norm).fold(0.0, f64::max);
    let mut bound = 0.0;
    let mut b_pow = 1.0;
    for z in states {
        bound += b_pow * a * x;
        b_pow *= b;
        check.record(z.norm(), bound);
    }
    Ok(())
}

struct RecurrentSweep<'a> {
    model: &'a GatedGrnn,
    s: &'a Gso,
    eps_grid: &'a [f64],
    t_len: usize,
    trials: usize,
    gates: Option<GateConstants>,
}

impl RecurrentSweep<'_> {
    fn run(&self, rng: &mut Rng) -> Result<StabilityReport> {
        check_grid(self.eps_grid, self.trials)?;
        if self.t_len == 0 {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        let n = self.s.n();
        let s_eig = eigendecompose(self.s)?;
        let frs = check_assumptions(self.model, &s_eig, self.gates.is_some())?;
        let g = self.gates.unwrap_or_default();
        let base = rng.random::<u64>();
        let mut rows = Vec::with_capacity(self.eps_grid.len() * self.trials * self.t_len);
        let mut states = StateBoundCheck::default();
        for trial in 0..self.trials {
            let mut r = rng::seeded(rng::derive_seed(base, trial as u64));
            let dir = direction(&s_eig, n, &mut r)?;
            let x_seq = unit_inputs(n, self.t_len, &mut r);
            let clean = grnn_forward(self.model, self.s.matrix(), &x_seq, None)?;
            check_states(&mut states, self.model, self.s.matrix(), &x_seq, &clean.states)?;
            for &eps in self.eps_grid {
                let st = perturbed(self.s, &dir, eps)?;
                let st_eig = eigendecompose(&st)?;
                let c = lipschitz_max(&frs, spectral_interval(&s_eig, &st_eig))?;
                let noisy = grnn_forward(self.model, st.matrix(), &x_seq, None)?;
                check_states(&mut states, self.model, st.matrix(), &x_seq, &noisy.states)?;
                for (i, (y, yt)) in clean.outputs.iter().zip(&noisy.outputs).enumerate() {
                    let t = i + 1;
                    let bound = match self.gates {
                        Some(ref g) => theorem2_bound(c, dir.delta, n, t, eps, g),
                        None => theorem1_bound(c, dir.delta, n, t, eps),
                    };
                    rows.push(StabilityRow {
                        eps,
                        t,
                        trial,
                        measured: (y - yt).norm(),
                        bound,
                        c,
                        delta: dir.delta,
                        q: g.q,
                        phi1: g.phi1,
                        phi2: g.phi2,
                    });
                }
            }
        }
        Ok(StabilityReport {
            kind: if self.gates.is_some() { SweepKind::Gated } else { SweepKind::Ungated },
            n,
            epsilon_grid: self.eps_grid.to_vec(),
            horizon: self.t_len,
            trials: self.trials,
            rows,
            state_bound: Some(states),
        })
    }
}

/// Ungated GRNN sweep against `C(1+√Nδ)(t²+3t)ε`, with unit-norm inputs,
/// `z₀ = 0`, and the hidden-state norm bound checked on every pass.
pub fn theorem1_sweep(model: &GatedGrnn, s: &Gso, eps_grid: &[f64], t_len: usize, trials: usize, rng: &mut Rng) -> Result<StabilityReport> {
    RecurrentSweep {
        model,
        s,
        eps_grid,
        t_len,
        trials,
        gates: None,
    }
    .run(rng)
}

/// Gated GRNN sweep against the three-term bound with the given gate
/// constants. An ungated model with `Q = 0` reduces to the ungated bound.
pub fn theorem2_sweep(
    model: &GatedGrnn,
    s: &Gso,
    eps_grid: &[f64],
    t_len: usize,
    trials: usize,
    rng: &mut Rng,
    constants: GateConstants,
) -> Result<StabilityReport> {
    RecurrentSweep {
        model,
        s,
        eps_grid,
        t_len,
        trials,
        gates: Some(constants),
    }
    .run(rng)
}

/// Sampled lower bounds on the gate Lipschitz constants.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GateConstants {
    pub q: f64,
    pub phi1: f64,
    pub phi2: f64,
}

/// Explicit probes for [`estimate_gate_constants_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct GateProbes {
    /// Gate parameters `θ` (gate values): `1 × 1`, `n × 1` or `n × n`.
    pub params: Vec<Mat>,
    /// Gate states `ẑ`, `n × H`.
    pub states: Vec<Mat>,
    /// Perturbed operators and their `ε`.
    pub graphs: Vec<(Mat, f64)>,
}

/// Norm of a gate parameter: absolute value, vector 2-norm, or operator norm.
fn theta_norm(m: &Mat) -> f64 {
    if m.ncols() == 1 {
        m.norm()
    } else {
        linalg::operator_norm(m)
    }
}

/// `Φ_S(ẑ)`: the gate values produced from a gate state.
fn gate_values(readout: &GateReadout, s: &Mat, z: &Mat) -> Result<Mat> {
    match readout {
        GateReadout::Time { weights } => Ok(Mat::from_element(1, 1, time_gates(weights, z)?)),
        GateReadout::Node { bank } => Ok(Mat::from_vec(z.nrows(), 1, node_gates(bank, s, z)?)),
        GateReadout::Edge { projection, attention } => edge_gates(projection, attention, z),
    }
}

/// `‖𝒬_θ1 − 𝒬_θ2‖`, where `𝒬_θ` acts on the output of `filter`.
fn operator_gap(readout: &GateReadout, filter: &FilterBank, s: &Mat, t1: &Mat, t2: &Mat) -> Result<f64> {
    match readout {
        GateReadout::Time { .. } => Ok((t1[0] - t2[0]).abs() * linalg::operator_norm(&dense(filter, s)?)),
        GateReadout::Node { .. } => {
            let a = dense(filter, s)?;
            let d = Mat::from_diagonal(&(t1 - t2).column(0).into_owned());
            Ok(linalg::operator_norm(&(d * a)))
        }
        GateReadout::Edge { .. } => {
            let a1 = dense(filter, &s.component_mul(t1))?;
            let a2 = dense(filter, &s.component_mul(t2))?;
            Ok(linalg::operator_norm(&(a1 - a2)))
        }
    }
}

fn distinct_pairs(k: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..k).flat_map(move |i| ((i + 1)..k).map(move |j| (i, j)))
}

/// Estimates `Q`, `φ1` and `φ2` from explicit probes as maxima of sampled
/// ratios over both gates. `Q` compares gate operators applied after the
/// input (input gate) and state (forget gate) filters.
pub fn estimate_gate_constants_with(model: &GatedGrnn, s: &Mat, probes: &GateProbes) -> Result<GateConstants> {
    let gates = model
        .gates
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("model has no gates".into()))?;
    if probes.params.len() < 2 || probes.states.len() < 2 {
        return Err(Error::DegenerateProbes(format!(
            "need at least 2 parameter and state probes, got {} and {}",
            probes.params.len(),
            probes.states.len()
        )));
    }
    let mut out = GateConstants::default();
    for (i, j) in distinct_pairs(probes.params.len()) {
        let d = theta_norm(&(&probes.params[i] - &probes.params[j]));
        if d == 0.0 {
            return Err(Error::DegenerateProbes(format!("parameter probes {i} and {j} coincide")));
        }
        for (gate, filter) in [(&gates.input, &model.core.input), (&gates.forget, &model.core.state)] {
            let gap = operator_gap(&gate.readout, filter, s, &probes.params[i], &probes.params[j])?;
            out.q = out.q.max(gap / d);
        }
    }
    for (i, j) in distinct_pairs(probes.states.len()) {
        let d = (&probes.states[i] - &probes.states[j]).norm();
        if d == 0.0 {
            return Err(Error::DegenerateProbes(format!("state probes {i} and {j} coincide")));
        }
        for gate in [&gates.input, &gates.forget] {
            let a = gate_values(&gate.readout, s, &probes.states[i])?;
            let b = gate_values(&gate.readout, s, &probes.states[j])?;
            out.phi1 = out.phi1.max(theta_norm(&(a - b)) / d);
        }
    }
    for (st, eps) in &probes.graphs {
        if *eps <= 0.0 {
            return Err(Error::DegenerateProbes("graph probes need epsilon > 0".into()));
        }
        for z in &probes.states {
            let zn = z.norm();
            if zn == 0.0 {
                continue;
            }
            for gate in [&gates.input, &gates.forget] {
                let a = gate_values(&gate.readout, s, z)?;
                let b = gate_values(&gate.readout, st, z)?;
                out.phi2 = out.phi2.max(theta_norm(&(a - b)) / (eps * zn));
            }
        }
    }
    Ok(out)
}

/// Samples `probes` gate parameters uniformly in `[0,1]`, `probes` standard
/// normal gate states, and `probes` perturbed graphs at [`GATE_PROBE_EPS`].
pub fn estimate_gate_constants(model: &GatedGrnn, s: &Gso, probes: usize, rng: &mut Rng) -> Result<GateConstants> {
    if probes < 2 {
        return Err(Error::DegenerateProbes(format!("need at least 2 probes, got {probes}")));
    }
    let n = s.n();
    let theta_shape = match model.gates.as_ref().map(|g| &g.input.readout) {
        Some(GateReadout::Time { .. }) => (1, 1),
        Some(GateReadout::Node { .. }) => (n, 1),
        Some(GateReadout::Edge { .. }) => (n, n),
        None => return Err(Error::InvalidArgument("model has no gates".into())),
    };
    let h = model.spec.gate_width();
    let params = (0..probes).map(|_| Mat::from_fn(theta_shape.0, theta_shape.1, |_, _| rng.random::<f64>())).collect();
    let states = (0..probes)
        .map(|_| Mat::from_fn(n, h, |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let graphs = (0..probes)
        .map(|_| {
            let e = sample_perturbation(n, GATE_PROBE_EPS, rng)?;
            Ok((apply_relative_perturbation(s, &e)?.into_matrix(), GATE_PROBE_EPS))
        })
        .collect::<Result<_>>()?;
    estimate_gate_constants_with(model, s.matrix(), &GateProbes { params, states, graphs })
}
