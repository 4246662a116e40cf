//! GRNN cells, output maps, gate sub-networks and the gated architectures,
//! plus the dense-RNN and GNN baselines.
//!
//! Every model is generic over its parameter type so that the same layout
//! describes both stored weights (`Mat`) and their handles on a [`Tape`]
//! (`Var`). The canonical parameter order, used for flat vectors and
//! checkpoints, is the field order of the structs: core input taps, core
//! state taps, output layers, then the input gate and the forget gate (each
//! as sub-GRNN input taps, state taps, readout).

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{lsigf, FilterBank};
use crate::graph::Permutation;
use crate::linalg::Mat;
use crate::rng::Rng;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Relu => x.max(0.0),
        }
    }

    pub fn apply_mat(self, m: &Mat) -> Mat {
        m.map(|v| self.apply(v))
    }

    pub fn record(self, tape: &Tape, v: Var) -> Var {
        match self {
            Activation::Identity => v,
            Activation::Tanh => tape.tanh(v),
            Activation::Sigmoid => tape.sigmoid(v),
            Activation::Relu => tape.relu(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GatingKind {
    None,
    Time,
    Node,
    Edge,
}

/// How node outputs are turned into the model output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Readout {
    /// One output row per node.
    Node,
    /// Node outputs averaged into one row per graph.
    GraphMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub features: usize,
    pub order: usize,
    pub activation: Activation,
}

fn default_gate_sigma() -> Activation {
    Activation::Tanh
}

fn default_readout() -> Readout {
    Readout::Node
}

/// Architecture hyperparameters of a (possibly gated) GRNN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrnnSpec {
    pub input_features: usize,
    pub state_features: usize,
    pub input_order: usize,
    pub state_order: usize,
    pub sigma: Activation,
    /// Output GNN layers applied to the hidden state; empty means `y_t = z_t`.
    pub output: Vec<LayerSpec>,
    #[serde(default = "default_readout")]
    pub readout: Readout,
    pub gating: GatingKind,
    /// Hidden width of both gate sub-GRNNs; defaults to `state_features`.
    #[serde(default)]
    pub gate_state_features: Option<usize>,
    /// Filter order of the gate sub-GRNNs; defaults to `state_order`.
    #[serde(default)]
    pub gate_order: Option<usize>,
    /// Order of the node-gate readout convolution; defaults to `state_order`.
    #[serde(default)]
    pub gate_readout_order: Option<usize>,
    /// Intermediate width of the edge-gate projection; defaults to the gate width.
    #[serde(default)]
    pub gate_intermediate: Option<usize>,
    #[serde(default = "default_gate_sigma")]
    pub gate_sigma: Activation,
    /// Node count; required by time gating, whose readout indexes nodes.
    #[serde(default)]
    pub num_nodes: Option<usize>,
}

impl GrnnSpec {
    /// Ungated GRNN with a single `K = 1` linear output layer.
    pub fn basic(f_in: usize, f_state: usize, k: usize, f_out: usize) -> Self {
        Self {
            input_features: f_in,
            state_features: f_state,
            input_order: k,
            state_order: k,
            sigma: Activation::Tanh,
            output: vec![LayerSpec {
                features: f_out,
                order: 1,
                activation: Activation::Identity,
            }],
            readout: Readout::Node,
            gating: GatingKind::None,
            gate_state_features: None,
            gate_order: None,
            gate_readout_order: None,
            gate_intermediate: None,
            gate_sigma: Activation::Tanh,
            num_nodes: None,
        }
    }

    pub fn with_gating(mut self, gating: GatingKind, num_nodes: Option<usize>) -> Self {
        self.gating = gating;
        self.num_nodes = num_nodes;
        self
    }

    pub fn gate_width(&self) -> usize {
        self.gate_state_features.unwrap_or(self.state_features)
    }

    pub fn gate_k(&self) -> usize {
        self.gate_order.unwrap_or(self.state_order)
    }

    pub fn output_features(&self) -> usize {
        self.output.last().map_or(self.state_features, |l| l.features)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_features", self.input_features),
            ("state_features", self.state_features),
            ("input_order", self.input_order),
            ("state_order", self.state_order),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidSpec(format!("{name} must be positive")));
            }
        }
        for (i, l) in self.output.iter().enumerate() {
            if l.features == 0 || l.order == 0 {
                return Err(Error::InvalidSpec(format!(
                    "output layer {i} needs positive features and order"
                )));
            }
        }
        if self.gating != GatingKind::None {
            let gate = [
                ("gate_state_features", self.gate_state_features),
                ("gate_order", self.gate_order),
                ("gate_readout_order", self.gate_readout_order),
                ("gate_intermediate", self.gate_intermediate),
            ];
            for (name, v) in gate {
                if v == Some(0) {
                    return Err(Error::InvalidSpec(format!("{name} must be positive")));
                }
            }
        }
        if self.gating == GatingKind::Time && self.num_nodes.unwrap_or(0) == 0 {
            return Err(Error::InvalidSpec("num_nodes is required for time gating".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrnnCore<P = Mat> {
    pub input: FilterBank<P>,
    pub state: FilterBank<P>,
    pub sigma: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputLayer<P = Mat> {
    pub bank: FilterBank<P>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputMap<P = Mat> {
    pub layers: Vec<OutputLayer<P>>,
    pub readout: Readout,
}

/// Maps a gate state to gate values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GateReadout<P = Mat> {
    /// `n × H` weights; the gate is `sigmoid(⟨weights, Z⟩)`, i.e. the
    /// inner product with the column-major vectorization of the state.
    Time { weights: P },
    /// Graph convolution `H → 1` followed by a per-node sigmoid.
    Node { bank: FilterBank<P> },
    /// `H × H′` projection and `2H′ × 1` attention vector.
    Edge { projection: P, attention: P },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate<P = Mat> {
    pub grnn: GrnnCore<P>,
    pub readout: GateReadout<P>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gates<P = Mat> {
    pub input: Gate<P>,
    pub forget: Gate<P>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatedGrnn<P = Mat> {
    pub spec: GrnnSpec,
    pub core: GrnnCore<P>,
    pub output: OutputMap<P>,
    pub gates: Option<Gates<P>>,
}

impl<P> GrnnCore<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> GrnnCore<Q> {
        GrnnCore {
            input: self.input.map(f),
            state: self.state.map(f),
            sigma: self.sigma,
        }
    }

    pub fn for_each_mut(&mut self, f: &mut impl FnMut(&mut P)) {
        self.input.for_each_mut(f);
        self.state.for_each_mut(f);
    }
}

impl<P> OutputMap<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> OutputMap<Q> {
        OutputMap {
            layers: self
                .layers
                .iter()
                .map(|l| OutputLayer {
                    bank: l.bank.map(f),
                    activation: l.activation,
                })
                .collect(),
            readout: self.readout,
        }
    }

    pub fn for_each_mut(&mut self, f: &mut impl FnMut(&mut P)) {
        for l in &mut self.layers {
            l.bank.for_each_mut(f);
        }
    }
}

impl<P> Gate<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Gate<Q> {
        let grnn = self.grnn.map(f);
        let readout = match &self.readout {
            GateReadout::Time { weights } => GateReadout::Time { weights: f(weights) },
            GateReadout::Node { bank } => GateReadout::Node { bank: bank.map(f) },
            GateReadout::Edge { projection, attention } => {
                let projection = f(projection);
                GateReadout::Edge {
                    projection,
                    attention: f(attention),
                }
            }
        };
        Gate { grnn, readout }
    }

    pub fn for_each_mut(&mut self, f: &mut impl FnMut(&mut P)) {
        self.grnn.for_each_mut(f);
        match &mut self.readout {
            GateReadout::Time { weights } => f(weights),
            GateReadout::Node { bank } => bank.for_each_mut(f),
            GateReadout::Edge { projection, attention } => {
                f(projection);
                f(attention);
            }
        }
    }
}

impl<P> GatedGrnn<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> GatedGrnn<Q> {
        let core = self.core.map(f);
        let output = self.output.map(f);
        let gates = self.gates.as_ref().map(|g| {
            let input = g.input.map(f);
            Gates {
                input,
                forget: g.forget.map(f),
            }
        });
        GatedGrnn {
            spec: self.spec.clone(),
            core,
            output,
            gates,
        }
    }

    pub fn for_each_mut(&mut self, f: &mut impl FnMut(&mut P)) {
        self.core.for_each_mut(f);
        self.output.for_each_mut(f);
        if let Some(g) = &mut self.gates {
            g.input.for_each_mut(f);
            g.forget.for_each_mut(f);
        }
    }
}

/// Flat access to a model's parameters in canonical order.
pub trait Parameterized {
    fn visit(&self, f: &mut dyn FnMut(&Mat));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Mat));

    fn parameter_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        self.visit(&mut |m| shapes.push(m.shape()));
        shapes
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |m| out.extend_from_slice(m.as_slice()));
        out
    }

    fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total = count_parameters(&*self);
        if flat.len() != total {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {total} parameters",
                flat.len()
            )));
        }
        let mut offset = 0;
        self.visit_mut(&mut |m| {
            let len = m.len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        });
        Ok(())
    }
}

pub fn count_parameters<M: Parameterized + ?Sized>(model: &M) -> usize {
    let mut total = 0;
    model.visit(&mut |m| total += m.len());
    total
}

impl Parameterized for GatedGrnn {
    fn visit(&self, f: &mut dyn FnMut(&Mat)) {
        self.map(&mut |m| f(m));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Mat)) {
        self.for_each_mut(&mut |m| f(m));
    }
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

fn init_bank(f_in: usize, f_out: usize, k: usize, rng: &mut Rng) -> FilterBank {
    let bound = 1.0 / ((f_in * k) as f64).sqrt();
    FilterBank {
        taps: (0..k).map(|_| uniform(f_in, f_out, bound, rng)).collect(),
    }
}

fn init_core(f_in: usize, f_state: usize, k_in: usize, k_state: usize, sigma: Activation, rng: &mut Rng) -> GrnnCore {
    let input = init_bank(f_in, f_state, k_in, rng);
    let state = init_bank(f_state, f_state, k_state, rng);
    GrnnCore { input, state, sigma }
}

fn init_layers(f_in: usize, layers: &[LayerSpec], rng: &mut Rng) -> Vec<OutputLayer> {
    let mut f = f_in;
    layers
        .iter()
        .map(|l| {
            let bank = init_bank(f, l.features, l.order, rng);
            f = l.features;
            OutputLayer {
                bank,
                activation: l.activation,
            }
        })
        .collect()
}

fn init_gate(spec: &GrnnSpec, rng: &mut Rng) -> Gate {
    let h = spec.gate_width();
    let k = spec.gate_k();
    let grnn = init_core(spec.input_features, h, k, k, spec.gate_sigma, rng);
    let readout = match spec.gating {
        GatingKind::Time => {
            let n = spec.num_nodes.unwrap_or(0);
            GateReadout::Time {
                weights: uniform(n, h, 1.0 / ((n * h) as f64).sqrt(), rng),
            }
        }
        GatingKind::Node => GateReadout::Node {
            bank: init_bank(h, 1, spec.gate_readout_order.unwrap_or(spec.state_order), rng),
        },
        GatingKind::Edge | GatingKind::None => {
            let hp = spec.gate_intermediate.unwrap_or(h);
            let projection = uniform(h, hp, 1.0 / (h as f64).sqrt(), rng);
            let attention = uniform(2 * hp, 1, 1.0 / ((2 * hp) as f64).sqrt(), rng);
            GateReadout::Edge { projection, attention }
        }
    };
    Gate { grnn, readout }
}

/// Draws every parameter i.i.d. uniform on `±1/√(fan_in·K)`, in canonical order.
pub fn init_model(spec: &GrnnSpec, rng: &mut Rng) -> Result<GatedGrnn> {
    spec.validate()?;
    let core = init_core(
        spec.input_features,
        spec.state_features,
        spec.input_order,
        spec.state_order,
        spec.sigma,
        rng,
    );
    let output = OutputMap {
        layers: init_layers(spec.state_features, &spec.output, rng),
        readout: spec.readout,
    };
    let gates = (spec.gating != GatingKind::None).then(|| {
        let input = init_gate(spec, rng);
        Gates {
            input,
            forget: init_gate(spec, rng),
        }
    });
    Ok(GatedGrnn {
        spec: spec.clone(),
        core,
        output,
        gates,
    })
}

/// `z_t = σ(A_S(x_t) + B_S(z_{t−1}))`.
pub fn grnn_step(core: &GrnnCore, s: &Mat, x_t: &Mat, z_prev: &Mat) -> Result<Mat> {
    let a = lsigf(&core.input, s, x_t)?;
    let b = lsigf(&core.state, s, z_prev)?;
    Ok(core.sigma.apply_mat(&(a + b)))
}

/// Applies the output layers to a single state.
pub fn output_map(out: &OutputMap, s: &Mat, z: &Mat) -> Result<Mat> {
    let mut h = z.clone();
    for l in &out.layers {
        h = l.activation.apply_mat(&lsigf(&l.bank, s, &h)?);
    }
    Ok(match out.readout {
        Readout::Node => h,
        Readout::GraphMean => Mat::from_row_slice(1, h.ncols(), h.row_mean().as_slice()),
    })
}

fn sigmoid(x: f64) -> f64 {
    Activation::Sigmoid.apply(x)
}

/// `sigmoid(ĉᵀ vec(Z))` with column-major `vec`; `weights` has the shape of `Z`.
pub fn time_gates(weights: &Mat, gate_state: &Mat) -> Result<f64> {
    if weights.shape() != gate_state.shape() {
        return Err(Error::DimensionMismatch(format!(
            "time gate weights are {:?}, gate state is {:?}",
            weights.shape(),
            gate_state.shape()
        )));
    }
    Ok(sigmoid(weights.dot(gate_state)))
}

/// Per-node `sigmoid(Ĉ_S(Z))`.
pub fn node_gates(bank: &FilterBank, s: &Mat, gate_state: &Mat) -> Result<Vec<f64>> {
    if bank.f_out() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "node gate readout must map to 1 feature, maps to {}",
            bank.f_out()
        )));
    }
    Ok(lsigf(bank, s, gate_state)?.iter().map(|&v| sigmoid(v)).collect())
}

/// `Q[i][j] = sigmoid(cᵀ [Z_i C ‖ Z_j C])` for every ordered node pair.
pub fn edge_gates(projection: &Mat, attention: &Mat, gate_state: &Mat) -> Result<Mat> {
    let hp = projection.ncols();
    if gate_state.ncols() != projection.nrows() || attention.shape() != (2 * hp, 1) {
        return Err(Error::DimensionMismatch(format!(
            "gate state {:?}, projection {:?}, attention {:?}",
            gate_state.shape(),
            projection.shape(),
            attention.shape()
        )));
    }
    let p = gate_state * projection;
    let u = &p * attention.rows(0, hp);
    let v = &p * attention.rows(hp, hp);
    let n = gate_state.nrows();
    Ok(Mat::from_fn(n, n, |i, j| sigmoid(u[i] + v[j])))
}

/// Replaces learned gate values, for ablations and invariance checks.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum GateOverride {
    #[default]
    Learned,
    Constant(f64),
}

/// Handles produced while recording a forward pass.
#[derive(Debug, Clone, Default)]
pub struct Recorded {
    pub outputs: Vec<Var>,
    pub states: Vec<Var>,
    pub input_gates: Vec<Var>,
    pub forget_gates: Vec<Var>,
}

pub fn record_lsigf(tape: &Tape, bank: &FilterBank<Var>, op: Var, x: Var, n: usize) -> Result<Var> {
    let mut out = tape.matmul(x, bank.taps[0])?;
    let mut cur = x;
    for tap in &bank.taps[1..] {
        cur = tape.shift(op, cur, n)?;
        let term = tape.matmul(cur, *tap)?;
        out = tape.add(out, term)?;
    }
    Ok(out)
}

fn record_core(tape: &Tape, core: &GrnnCore<Var>, s: Var, n: usize, x: Var, z: Var) -> Result<Var> {
    let a = record_lsigf(tape, &core.input, s, x, n)?;
    let b = record_lsigf(tape, &core.state, s, z, n)?;
    Ok(core.sigma.record(tape, tape.add(a, b)?))
}

pub fn record_output(tape: &Tape, out: &OutputMap<Var>, s: Var, n: usize, z: Var) -> Result<Var> {
    let mut h = z;
    for l in &out.layers {
        h = l.activation.record(tape, record_lsigf(tape, &l.bank, s, h, n)?);
    }
    match out.readout {
        Readout::Node => Ok(h),
        Readout::GraphMean => tape.block_mean_rows(h, n),
    }
}

/// Gate values for one step: `B × 1` (time), `(B·n) × 1` (node) or
/// `(B·n) × n` (edge).
fn record_gate(tape: &Tape, gate: &Gate<Var>, s: Var, n: usize, zhat: Var, ov: GateOverride) -> Result<Var> {
    let rows = tape.with_value(zhat, |m| m.nrows());
    let batch = rows / n;
    if let GateOverride::Constant(v) = ov {
        let shape = match gate.readout {
            GateReadout::Time { .. } => (batch, 1),
            GateReadout::Node { .. } => (rows, 1),
            GateReadout::Edge { .. } => (rows, n),
        };
        return Ok(tape.constant(Mat::from_element(shape.0, shape.1, v)));
    }
    let pre = match &gate.readout {
        GateReadout::Time { weights } => tape.block_dot(*weights, zhat, n)?,
        GateReadout::Node { bank } => record_lsigf(tape, bank, s, zhat, n)?,
        GateReadout::Edge { projection, attention } => {
            let hp = tape.with_value(*projection, |m| m.ncols());
            let p = tape.matmul(zhat, *projection)?;
            let c1 = tape.rows(*attention, 0, hp)?;
            let c2 = tape.rows(*attention, hp, hp)?;
            let u = tape.matmul(p, c1)?;
            let v = tape.matmul(p, c2)?;
            tape.block_outer_sum(u, v, n)?
        }
    };
    Ok(tape.sigmoid(pre))
}

/// Records a full forward pass over a batch of stacked `(B·n) × F` inputs.
pub fn record_forward(
    tape: &Tape,
    model: &GatedGrnn<Var>,
    s: Var,
    n: usize,
    inputs: &[Var],
    z0: Option<Var>,
    ov: GateOverride,
) -> Result<Recorded> {
    let first = *inputs
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty input sequence".into()))?;
    let rows = tape.with_value(first, |m| m.nrows());
    let f_state = model.spec.state_features;
    let mut z = match z0 {
        Some(z) => z,
        None => tape.constant(Mat::zeros(rows, f_state)),
    };
    let gh = model.spec.gate_width();
    let mut gate_states = model.gates.as_ref().map(|_| {
        (
            tape.constant(Mat::zeros(rows, gh)),
            tape.constant(Mat::zeros(rows, gh)),
        )
    });
    let mut rec = Recorded::default();
    for &x in inputs {
        let next = match (&model.gates, gate_states.as_mut()) {
            (Some(g), Some((zi, zf))) => {
                *zi = record_core(tape, &g.input.grnn, s, n, x, *zi)?;
                *zf = record_core(tape, &g.forget.grnn, s, n, x, *zf)?;
                let qi = record_gate(tape, &g.input, s, n, *zi, ov)?;
                let qf = record_gate(tape, &g.forget, s, n, *zf, ov)?;
                rec.input_gates.push(qi);
                rec.forget_gates.push(qf);
                let pre = match g.input.readout {
                    GateReadout::Edge { .. } => {
                        let si = tape.block_hadamard(s, qi, n)?;
                        let sf = tape.block_hadamard(s, qf, n)?;
                        let a = record_lsigf(tape, &model.core.input, si, x, n)?;
                        let b = record_lsigf(tape, &model.core.state, sf, z, n)?;
                        tape.add(a, b)?
                    }
                    _ => {
                        let a = record_lsigf(tape, &model.core.input, s, x, n)?;
                        let b = record_lsigf(tape, &model.core.state, s, z, n)?;
                        let a = tape.row_group_scale(qi, a)?;
                        let b = tape.row_group_scale(qf, b)?;
                        tape.add(a, b)?
                    }
                };
                model.core.sigma.record(tape, pre)
            }
            _ => record_core(tape, &model.core, s, n, x, z)?,
        };
        z = next;
        rec.states.push(z);
        rec.outputs.push(record_output(tape, &model.output, s, n, z)?);
    }
    Ok(rec)
}

/// Gate values recorded at every step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GateTraces {
    pub input: Vec<Mat>,
    pub forget: Vec<Mat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    pub outputs: Vec<Mat>,
    pub states: Vec<Mat>,
    pub gates: GateTraces,
}

fn check_sequence(model: &GatedGrnn, s: &Mat, x_seq: &[Mat]) -> Result<usize> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::DimensionMismatch("shift operator must be square".into()));
    }
    for x in x_seq {
        if x.shape() != (n, model.spec.input_features) {
            return Err(Error::DimensionMismatch(format!(
                "input step is {:?}, expected ({n}, {})",
                x.shape(),
                model.spec.input_features
            )));
        }
    }
    if let Some(GateReadout::Time { weights }) = model.gates.as_ref().map(|g| &g.input.readout) {
        if weights.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "time gates were built for {} nodes, graph has {n}",
                weights.nrows()
            )));
        }
    }
    Ok(n)
}

/// Runs a single sequence; `z0` defaults to zero.
pub fn grnn_forward(model: &GatedGrnn, s: &Mat, x_seq: &[Mat], z0: Option<&Mat>) -> Result<ForwardResult> {
    grnn_forward_with(model, s, x_seq, z0, GateOverride::Learned)
}

pub fn grnn_forward_with(
    model: &GatedGrnn,
    s: &Mat,
    x_seq: &[Mat],
    z0: Option<&Mat>,
    ov: GateOverride,
) -> Result<ForwardResult> {
    let n = check_sequence(model, s, x_seq)?;
    if let Some(z0) = z0 {
        if z0.shape() != (n, model.spec.state_features) {
            return Err(Error::DimensionMismatch(format!("initial state is {:?}", z0.shape())));
        }
    }
    let tape = Tape::new();
    let vars = model.map(&mut |m| tape.constant(m.clone()));
    let sv = tape.constant(s.clone());
    let xs: Vec<Var> = x_seq.iter().map(|x| tape.constant(x.clone())).collect();
    let z0v = z0.map(|z| tape.constant(z.clone()));
    let rec = record_forward(&tape, &vars, sv, n, &xs, z0v, ov)?;
    let values = |vs: &[Var]| vs.iter().map(|&v| tape.value(v)).collect::<Vec<_>>();
    Ok(ForwardResult {
        outputs: values(&rec.outputs),
        states: values(&rec.states),
        gates: GateTraces {
            input: values(&rec.input_gates),
            forget: values(&rec.forget_gates),
        },
    })
}

impl GatedGrnn {
    /// Copy whose time-gate readouts are relabeled by `p`, so that the gated
    /// model on `PᵀSP` matches the original on `S`.
    pub fn with_permuted_time_readout(&self, p: &Permutation) -> Result<Self> {
        let mut out = self.clone();
        if let Some(g) = &mut out.gates {
            for gate in [&mut g.input, &mut g.forget] {
                if let GateReadout::Time { weights } = &mut gate.readout {
                    *weights = p.apply_rows(weights)?;
                }
            }
        }
        Ok(out)
    }
}

/// Models that map a batch of input sequences to per-step predictions.
pub trait SequenceModel: Parameterized {
    /// Records predictions for inputs stacked as `(B·n) × F_in` per step.
    /// Parameters are registered as tape leaves (differentiable when
    /// `trainable`) and pushed onto `leaves` in canonical order.
    fn record(&self, tape: &Tape, leaves: &mut Vec<Var>, trainable: bool, s: Var, n: usize, inputs: &[Var]) -> Result<Vec<Var>>;
}

fn leaf(tape: &Tape, leaves: &mut Vec<Var>, trainable: bool, m: &Mat) -> Var {
    let v = if trainable {
        tape.param(m.clone())
    } else {
        tape.constant(m.clone())
    };
    leaves.push(v);
    v
}

impl SequenceModel for GatedGrnn {
    fn record(&self, tape: &Tape, leaves: &mut Vec<Var>, trainable: bool, s: Var, n: usize, inputs: &[Var]) -> Result<Vec<Var>> {
        let vars = self.map(&mut |m| leaf(tape, leaves, trainable, m));
        Ok(record_forward(tape, &vars, s, n, inputs, None, GateOverride::Learned)?.outputs)
    }
}

/// Graph-agnostic RNN on the flattened node signal, in row-vector form:
/// `z_t = σ(x_t A + z_{t−1} B)`, `y_t = z_t C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseRnn<P = Mat> {
    pub input: P,
    pub state: P,
    pub output: P,
    pub sigma: Activation,
}

impl DenseRnn {
    /// Single-feature signals on `n` nodes with `hidden` state units.
    pub fn init(n: usize, hidden: usize, sigma: Activation, rng: &mut Rng) -> Result<Self> {
        if n == 0 || hidden == 0 {
            return Err(Error::InvalidSpec("dense RNN needs positive sizes".into()));
        }
        let input = uniform(n, hidden, 1.0 / (n as f64).sqrt(), rng);
        let state = uniform(hidden, hidden, 1.0 / (hidden as f64).sqrt(), rng);
        let output = uniform(hidden, n, 1.0 / (hidden as f64).sqrt(), rng);
        Ok(Self {
            input,
            state,
            output,
            sigma,
        })
    }
}

impl Parameterized for DenseRnn {
    fn visit(&self, f: &mut dyn FnMut(&Mat)) {
        f(&self.input);
        f(&self.state);
        f(&self.output);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Mat)) {
        f(&mut self.input);
        f(&mut self.state);
        f(&mut self.output);
    }
}

/// One step on a single `n`-vector; returns the new state as a row.
pub fn rnn_baseline_step(rnn: &DenseRnn, x_t: &Mat, z_prev: &Mat) -> Result<Mat> {
    let x = if x_t.ncols() == 1 { x_t.transpose() } else { x_t.clone() };
    if x.ncols() != rnn.input.nrows() || z_prev.ncols() != rnn.state.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "input {:?} / state {:?} for a dense RNN over {} nodes",
            x_t.shape(),
            z_prev.shape(),
            rnn.input.nrows()
        )));
    }
    Ok(rnn.sigma.apply_mat(&(x * &rnn.input + z_prev * &rnn.state)))
}

impl SequenceModel for DenseRnn {
    fn record(&self, tape: &Tape, leaves: &mut Vec<Var>, trainable: bool, _s: Var, n: usize, inputs: &[Var]) -> Result<Vec<Var>> {
        let a = leaf(tape, leaves, trainable, &self.input);
        let b = leaf(tape, leaves, trainable, &self.state);
        let c = leaf(tape, leaves, trainable, &self.output);
        let first = *inputs
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty input sequence".into()))?;
        let (rows, f) = tape.with_value(first, |m| m.shape());
        if f != 1 {
            return Err(Error::InvalidSpec("dense RNN baseline takes single-feature signals".into()));
        }
        let batch = rows / n;
        let mut z = tape.constant(Mat::zeros(batch, self.state.nrows()));
        let mut outs = Vec::with_capacity(inputs.len());
        for &x in inputs {
            // (B·n) × 1 → B × n
            let xr = tape.transpose(tape.reshape(x, n, batch)?);
            let pre = tape.add(tape.matmul(xr, a)?, tape.matmul(z, b)?)?;
            z = self.sigma.record(tape, pre);
            let y = tape.matmul(z, c)?;
            outs.push(tape.reshape(tape.transpose(y), rows, 1)?);
        }
        Ok(outs)
    }
}

/// Stack of graph convolution layers applied to each snapshot independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gnn<P = Mat> {
    pub layers: Vec<OutputLayer<P>>,
}

impl Gnn {
    pub fn init(f_in: usize, layers: &[LayerSpec], rng: &mut Rng) -> Result<Self> {
        if layers.iter().any(|l| l.features == 0 || l.order == 0) || f_in == 0 {
            return Err(Error::InvalidSpec("GNN layers need positive features and order".into()));
        }
        Ok(Self {
            layers: init_layers(f_in, layers, rng),
        })
    }

    fn as_output(&self) -> OutputMap {
        OutputMap {
            layers: self.layers.clone(),
            readout: Readout::Node,
        }
    }
}

impl Parameterized for Gnn {
    fn visit(&self, f: &mut dyn FnMut(&Mat)) {
        for l in &self.layers {
            l.bank.for_each(&mut |m| f(m));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Mat)) {
        for l in &mut self.layers {
            l.bank.for_each_mut(&mut |m| f(m));
        }
    }
}

pub fn gnn_baseline_forward(gnn: &Gnn, s: &Mat, x: &Mat) -> Result<Mat> {
    output_map(&gnn.as_output(), s, x)
}

impl SequenceModel for Gnn {
    fn record(&self, tape: &Tape, leaves: &mut Vec<Var>, trainable: bool, s: Var, n: usize, inputs: &[Var]) -> Result<Vec<Var>> {
        let out = self.as_output().map(&mut |m| leaf(tape, leaves, trainable, m));
        inputs.iter().map(|&x| record_output(tape, &out, s, n, x)).collect()
    }
}

/// Predicts every target step with the current input.
pub fn copy_last_forward(x_seq: &[Mat]) -> Vec<Mat> {
    x_seq.to_vec()
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    format: String,
    spec: GrnnSpec,
    seed: Option<u64>,
    parameter_count: usize,
    /// Shapes of the parameter blocks in canonical order; each block is
    /// stored column-major.
    layout: Vec<(usize, usize)>,
    blob: String,
}

const CHECKPOINT_FORMAT: &str = "grnn-checkpoint-v1";
const BLOB_NAME: &str = "params.bin";

/// Writes `manifest.json` and a little-endian `f64` blob into `dir`.
pub fn save_checkpoint(model: &GatedGrnn, seed: Option<u64>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        spec: model.spec.clone(),
        seed,
        parameter_count: count_parameters(model),
        layout: model.parameter_shapes(),
        blob: BLOB_NAME.into(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    let bytes: Vec<u8> = model.flat_params().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(dir.join(BLOB_NAME), bytes)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<GatedGrnn> {
    let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Malformed(format!("unknown checkpoint format {}", manifest.format)));
    }
    let mut model = init_model(&manifest.spec, &mut crate::rng::seeded(0))?;
    if model.parameter_shapes() != manifest.layout {
        return Err(Error::Malformed("checkpoint layout does not match its spec".into()));
    }
    let bytes = fs::read(dir.join(&manifest.blob))?;
    if bytes.len() != 8 * manifest.parameter_count {
        return Err(Error::Malformed(format!(
            "blob holds {} bytes, expected {}",
            bytes.len(),
            8 * manifest.parameter_count
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    model.set_flat_params(&flat)?;
    Ok(model)
}
