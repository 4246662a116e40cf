//! Experiment execution and run-directory layout.
//!
//! A run directory holds `config.json` (the resolved config), `metrics.csv`
//! (`architecture,metric,value`), `losses.csv` for training experiments,
//! GRNN checkpoints under `checkpoints/<architecture>/`, and stability or
//! equivariance reports where relevant.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use grnn::graph::{build_gso, knn_covariance_graph, sample_gaussian, sbm, Graph, Gso, Permutation};
use grnn::model::{
    copy_last_forward, count_parameters, init_model, load_checkpoint, save_checkpoint, Activation, DenseRnn, GatedGrnn, GatingKind, Gnn, GrnnSpec, LayerSpec,
    SequenceModel,
};
use grnn::process::{
    ar1_process, equicorrelated_covariance, export_dataset, fractional_diffusion, kstep_dataset, kstep_pair, noisy_diffusion, sir_dataset,
    standard_normal_signal, GraphProcessDataset, NoiseSpec, SirParams, SplitSizes,
};
use grnn::rng::{derive_seed, seeded, stream_seed};
use grnn::spectral::{eigendecompose, FrequencyResponse};
use grnn::stability::{
    check_equivariance, estimate_gate_constants, lemma_filter_sweep, normalize_filters, normalize_response, theorem1_sweep, theorem2_sweep,
    StabilityReport,
};
use grnn::train::{evaluate, metrics_from_predictions, train, LossKind, Metrics, TrainConfig, TrainReport};
use grnn::Mat;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{Baseline, ExperimentKind, ResolvedConfig};
use crate::error::{CliError, Result};

const GRAPH_STREAM: u64 = 0;
const DATA_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3;
const SWEEP_STREAM: u64 = 4;
const PROBE_STREAM: u64 = 5;
const SIGNAL_STREAM: u64 = 6;

pub const EQUIVARIANCE_TOL: f64 = 1e-9;
/// Optimizer step whose loss is reported as `loss_step_200`.
pub const EARLY_LOSS_STEP: usize = 200;

/// One line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub architecture: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub metrics: Vec<MetricRow>,
}

impl RunOutcome {
    pub fn metric(&self, architecture: &str, metric: &str) -> Option<f64> {
        find_metric(&self.metrics, architecture, metric)
    }
}

pub fn find_metric(rows: &[MetricRow], architecture: &str, metric: &str) -> Option<f64> {
    rows.iter()
        .find(|r| r.architecture == architecture && r.metric == metric)
        .map(|r| r.value)
}

pub fn architecture_name(kind: GatingKind) -> &'static str {
    match kind {
        GatingKind::None => "grnn",
        GatingKind::Time => "t-grnn",
        GatingKind::Node => "n-grnn",
        GatingKind::Edge => "e-grnn",
    }
}

fn baseline_name(b: Baseline) -> &'static str {
    match b {
        Baseline::Gnn => "gnn",
        Baseline::Rnn => "rnn",
        Baseline::CopyLast => "copy-last",
    }
}

fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("architecture,metric,value\n");
    for r in rows {
        // `{:?}` prints the shortest representation that round-trips
        out.push_str(&format!("{},{},{:?}\n", r.architecture, r.metric, r.value));
    }
    out
}

pub fn read_metrics(run_dir: &Path) -> Result<Vec<MetricRow>> {
    let path = run_dir.join("metrics.csv");
    let text = fs::read_to_string(&path).map_err(|e| CliError::RunDir(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        let [architecture, metric, value] = parts[..] else {
            return Err(CliError::RunDir(format!("{}:{}: expected 3 columns", path.display(), i + 1)));
        };
        let value = value
            .parse()
            .map_err(|_| CliError::RunDir(format!("{}:{}: bad value {value:?}", path.display(), i + 1)))?;
        rows.push(MetricRow {
            architecture: architecture.into(),
            metric: metric.into(),
            value,
        });
    }
    Ok(rows)
}

/// Per-architecture training losses from `losses.csv`, in step order.
pub fn read_losses(run_dir: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let path = run_dir.join("losses.csv");
    let text = fs::read_to_string(&path).map_err(|e| CliError::RunDir(format!("{}: {e}", path.display())))?;
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for line in text.lines().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        let (Some(arch), Some(loss)) = (parts.first(), parts.get(3)) else {
            return Err(CliError::RunDir(format!("{}: malformed line {line:?}", path.display())));
        };
        let loss = loss
            .parse()
            .map_err(|_| CliError::RunDir(format!("{}: bad loss {loss:?}", path.display())))?;
        out.entry(arch.to_string()).or_default().push(loss);
    }
    Ok(out)
}

pub fn read_config(run_dir: &Path) -> Result<ResolvedConfig> {
    let path = run_dir.join("config.json");
    let text = fs::read_to_string(&path).map_err(|e| CliError::RunDir(format!("{}: {e}", path.display())))?;
    ResolvedConfig::parse(&text)
}

/// Graph, shift operator and dataset of a training experiment.
pub struct Prepared {
    pub graph: Graph,
    pub gso: Gso,
    pub data: GraphProcessDataset,
}

fn sizes(cfg: &ResolvedConfig) -> SplitSizes {
    SplitSizes {
        train: cfg.process.train,
        val: cfg.process.val,
        test: cfg.process.test,
    }
}

fn sbm_from(cfg: &ResolvedConfig, index: u64) -> Result<Graph> {
    let g = &cfg.graph;
    Ok(sbm(g.nodes, g.communities, g.p_intra, g.p_inter, &mut seeded(stream_seed(cfg.seed, GRAPH_STREAM, index)))?)
}

/// Regenerates the data of a training experiment from its config alone.
pub fn prepare(cfg: &ResolvedConfig) -> Result<Prepared> {
    let p = &cfg.process;
    let data_seed = stream_seed(cfg.seed, DATA_STREAM, 0);
    let noise = NoiseSpec::new(p.xi2, p.eta2)?;
    let len = p.sequence_length;
    match cfg.experiment {
        ExperimentKind::KStepDiffusion | ExperimentKind::Ar1TimeGating | ExperimentKind::FractionalNodeGating => {
            let graph = sbm_from(cfg, 0)?;
            let gso = build_gso(&graph, cfg.graph.gso)?;
            let s = gso.matrix();
            let n = graph.n();
            let data = match cfg.experiment {
                ExperimentKind::KStepDiffusion => kstep_dataset(
                    |r| noisy_diffusion(s, &standard_normal_signal(n, r), len, noise, r),
                    p.k,
                    sizes(cfg),
                    data_seed,
                )?,
                ExperimentKind::Ar1TimeGating => {
                    let alpha = p.alpha.unwrap_or(1.0);
                    kstep_dataset(|r| ar1_process(alpha, &standard_normal_signal(n, r), len, noise, r), p.k, sizes(cfg), data_seed)?
                }
                _ => {
                    let alpha = p.alpha.unwrap_or(1.0);
                    kstep_dataset(
                        |r| fractional_diffusion(s, alpha, &standard_normal_signal(n, r), len, noise, r),
                        p.k,
                        sizes(cfg),
                        data_seed,
                    )?
                }
            };
            Ok(Prepared { graph, gso, data })
        }
        ExperimentKind::CovarianceEdgeGating => prepare_covariance(cfg, noise, data_seed),
        ExperimentKind::SirEpidemic => {
            let (graph, _) = sbm_from(cfg, 0)?.remove_isolated();
            let gso = build_gso(&graph, cfg.graph.gso)?;
            let window = p.window.unwrap_or(1);
            let params = SirParams {
                p_seed: p.p_seed.unwrap_or(0.0),
                p_inf: p.p_inf.unwrap_or(0.0),
                recovery_days: p.recovery_days.unwrap_or(1),
                horizon: window + p.k - 1,
            };
            let data = sir_dataset(&graph, &params, window, p.k, sizes(cfg), data_seed)?;
            Ok(Prepared { graph, gso, data })
        }
        other => Err(CliError::Config {
            field: "experiment".into(),
            message: format!("{other:?} has no dataset"),
        }),
    }
}

/// Initial signals are draws from `N(1, Σ)` with `Σ_ii = 3`, `Σ_ij = 1`; the
/// graph keeps each node's strongest covariances among the training draws.
fn prepare_covariance(cfg: &ResolvedConfig, noise: NoiseSpec, data_seed: u64) -> Result<Prepared> {
    let p = &cfg.process;
    let n = cfg.graph.nodes;
    let total = sizes(cfg).total();
    let cov = equicorrelated_covariance(n, 3.0, 1.0);
    let x0 = sample_gaussian(&vec![1.0; n], &cov, total, &mut seeded(stream_seed(cfg.seed, GRAPH_STREAM, 0)))?;
    let train_rows = x0.rows(0, p.train).into_owned();
    let graph = knn_covariance_graph(&train_rows, cfg.graph.knn.unwrap_or(1))?;
    let gso = build_gso(&graph, cfg.graph.gso)?;
    let mut samples = Vec::with_capacity(total);
    for i in 0..total {
        let mut r = seeded(derive_seed(data_seed, i as u64));
        let start = Mat::from_iterator(n, 1, x0.row(i).iter().copied());
        let seq = noisy_diffusion(gso.matrix(), &start, p.sequence_length, noise, &mut r)?;
        samples.push(kstep_pair(&seq, p.k)?);
    }
    let test = samples.split_off(p.train + p.val);
    let val = samples.split_off(p.train);
    Ok(Prepared {
        graph,
        gso,
        data: GraphProcessDataset {
            n,
            train: samples,
            val,
            test,
        },
    })
}

pub fn grnn_spec(cfg: &ResolvedConfig, kind: GatingKind, n: usize) -> GrnnSpec {
    let m = &cfg.model;
    let mut spec = GrnnSpec::basic(m.input_features, m.state_features, m.order, m.output_features).with_gating(kind, Some(n));
    spec.gate_state_features = m.gate_state_features;
    spec
}

/// The two-layer GNN of the k-step comparison: 8 features then 1, ten taps each.
pub fn gnn_baseline_layers() -> [LayerSpec; 2] {
    [
        LayerSpec {
            features: 8,
            order: 10,
            activation: Activation::Relu,
        },
        LayerSpec {
            features: 1,
            order: 10,
            activation: Activation::Identity,
        },
    ]
}

/// Hidden width whose dense RNN parameter count `2nh + h²` is closest to `target`.
pub fn matched_rnn_hidden(n: usize, target: usize) -> usize {
    let count = |h: usize| 2 * n * h + h * h;
    (1..=target.max(1))
        .min_by_key(|&h| (count(h) as i64 - target as i64).unsigned_abs())
        .unwrap_or(1)
}

fn train_config(cfg: &ResolvedConfig, index: u64) -> TrainConfig {
    let classify = cfg.experiment == ExperimentKind::SirEpidemic;
    TrainConfig {
        lr: cfg.training.lr,
        epochs: cfg.training.epochs,
        batch_size: cfg.training.batch_size,
        loss: if classify { LossKind::WeightedCrossEntropy } else { LossKind::L1 },
        seed: stream_seed(cfg.seed, SHUFFLE_STREAM, index),
        clip_norm: cfg.training.clip_norm,
        select_on_validation: classify,
    }
}

fn metric_rows(arch: &str, m: &Metrics) -> Vec<MetricRow> {
    let fields = [
        ("rrmse", m.rrmse),
        ("accuracy", m.accuracy),
        ("f1", m.f1),
        ("precision", m.precision),
        ("recall", m.recall),
    ];
    fields
        .into_iter()
        .filter_map(|(name, v)| {
            v.map(|value| MetricRow {
                architecture: arch.into(),
                metric: name.into(),
                value,
            })
        })
        .collect()
}

struct Trained {
    arch: String,
    parameters: usize,
    report: TrainReport,
    test: Metrics,
}

fn fit<M: SequenceModel>(arch: &str, model: &mut M, s: &Mat, data: &GraphProcessDataset, tc: &TrainConfig) -> Result<Trained> {
    let report = train(model, s, data, tc)?;
    let test = evaluate(model, s, &data.test)?;
    Ok(Trained {
        arch: arch.into(),
        parameters: count_parameters(model),
        report,
        test,
    })
}

fn run_training(cfg: &ResolvedConfig, dir: &Path) -> Result<Vec<MetricRow>> {
    let prepared = prepare(cfg)?;
    let s = prepared.gso.matrix();
    let data = &prepared.data;
    let n = prepared.graph.n();
    let mut results = Vec::new();
    let mut grnn_params = None;
    for (i, &kind) in cfg.model.variants.iter().enumerate() {
        let arch = architecture_name(kind);
        let spec = grnn_spec(cfg, kind, n);
        let mut model = init_model(&spec, &mut seeded(stream_seed(cfg.seed, INIT_STREAM, i as u64)))?;
        let trained = fit(arch, &mut model, s, data, &train_config(cfg, i as u64))?;
        if kind == GatingKind::None {
            grnn_params = Some(trained.parameters);
        }
        save_checkpoint(&model, Some(cfg.seed), &dir.join("checkpoints").join(arch))?;
        results.push(trained);
    }
    let mut rows = Vec::new();
    for (j, &b) in cfg.model.baselines.iter().enumerate() {
        let index = (cfg.model.variants.len() + j) as u64;
        let mut r = seeded(stream_seed(cfg.seed, INIT_STREAM, index));
        let tc = train_config(cfg, index);
        match b {
            Baseline::Gnn => {
                let mut gnn = Gnn::init(cfg.model.input_features, &gnn_baseline_layers(), &mut r)?;
                results.push(fit("gnn", &mut gnn, s, data, &tc)?);
            }
            Baseline::Rnn => {
                let target = match grnn_params {
                    Some(p) => p,
                    None => count_parameters(&init_model(&grnn_spec(cfg, GatingKind::None, n), &mut seeded(0))?),
                };
                let h = cfg.model.rnn_hidden.unwrap_or_else(|| matched_rnn_hidden(n, target));
                let mut rnn = DenseRnn::init(n, h, Activation::Tanh, &mut r)?;
                results.push(fit("rnn", &mut rnn, s, data, &tc)?);
            }
            Baseline::CopyLast => {
                let preds: Vec<Vec<Mat>> = data.test.iter().map(|x| copy_last_forward(&x.inputs)).collect();
                rows.extend(metric_rows(baseline_name(b), &metrics_from_predictions(&preds, &data.test)?));
                rows.push(MetricRow {
                    architecture: baseline_name(b).into(),
                    metric: "parameters".into(),
                    value: 0.0,
                });
            }
        }
    }
    let mut losses = String::from("architecture,step,epoch,loss\n");
    let mut trained_rows = Vec::new();
    for t in &results {
        for l in &t.report.losses {
            losses.push_str(&format!("{},{},{},{:?}\n", t.arch, l.step, l.epoch, l.loss));
        }
        trained_rows.extend(metric_rows(&t.arch, &t.test));
        let mut extra = vec![("parameters", t.parameters as f64)];
        if let Some(l) = t.report.losses.get(EARLY_LOSS_STEP - 1) {
            extra.push(("loss_step_200", l.loss));
        }
        if let Some(l) = t.report.losses.last() {
            extra.push(("final_train_loss", l.loss));
        }
        if let Some(e) = t.report.selected_epoch {
            extra.push(("selected_epoch", e as f64));
        }
        trained_rows.extend(extra.into_iter().map(|(m, value)| MetricRow {
            architecture: t.arch.clone(),
            metric: m.into(),
            value,
        }));
    }
    trained_rows.extend(rows);
    fs::write(dir.join("losses.csv"), losses)?;
    Ok(trained_rows)
}

fn scalar_spec(order: usize, kind: GatingKind, n: usize) -> GrnnSpec {
    let mut spec = GrnnSpec::basic(1, 1, order, 1).with_gating(kind, Some(n));
    spec.output = vec![LayerSpec {
        features: 1,
        order,
        activation: Activation::Identity,
    }];
    spec
}

fn stability_rows(arch: &str, rep: &StabilityReport) -> Vec<MetricRow> {
    let s = rep.summary();
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let mut fields = vec![
        ("max_measured_over_bound", s.max_measured_over_bound),
        ("direct_check", flag(s.direct_check)),
        ("residual_check", flag(s.residual_check.passed)),
        ("residual_worst_excess", s.residual_check.worst_excess),
    ];
    if let Some(slope) = s.small_eps_loglog_slope {
        fields.push(("small_eps_loglog_slope", slope));
    }
    if let Some(h) = s.state_bound_holds {
        fields.push(("state_bound_holds", flag(h)));
    }
    fields
        .into_iter()
        .map(|(m, value)| MetricRow {
            architecture: arch.into(),
            metric: m.into(),
            value,
        })
        .collect()
}

/// Runs the stability sweep of `cfg` and returns the report.
pub fn stability_report(cfg: &ResolvedConfig) -> Result<StabilityReport> {
    let st = &cfg.stability;
    let graph = sbm_from(cfg, 0)?;
    let gso = build_gso(&graph, cfg.graph.gso)?;
    let n = graph.n();
    let mut init = seeded(stream_seed(cfg.seed, INIT_STREAM, 0));
    let mut sweep = seeded(stream_seed(cfg.seed, SWEEP_STREAM, 0));
    let report = match cfg.experiment {
        ExperimentKind::StabilityLemma => {
            let taps: Vec<f64> = (0..st.order).map(|_| init.random::<f64>() * 2.0 - 1.0).collect();
            let fr = normalize_response(&FrequencyResponse::new(taps), &eigendecompose(&gso)?);
            lemma_filter_sweep(&fr, &gso, &st.eps_grid, st.trials, &mut sweep)?
        }
        ExperimentKind::StabilityThm1 => {
            let mut model = init_model(&scalar_spec(st.order, GatingKind::None, n), &mut init)?;
            normalize_filters(&mut model, &gso)?;
            theorem1_sweep(&model, &gso, &st.eps_grid, st.horizon, st.trials, &mut sweep)?
        }
        ExperimentKind::StabilityThm2 => {
            let kind = cfg.model.variants.first().copied().unwrap_or(GatingKind::Node);
            let mut model = init_model(&scalar_spec(st.order, kind, n), &mut init)?;
            normalize_filters(&mut model, &gso)?;
            let constants = estimate_gate_constants(&model, &gso, st.probes, &mut seeded(stream_seed(cfg.seed, PROBE_STREAM, 0)))?;
            theorem2_sweep(&model, &gso, &st.eps_grid, st.horizon, st.trials, &mut sweep, constants)?
        }
        other => {
            return Err(CliError::Config {
                field: "experiment".into(),
                message: format!("{other:?} is not a stability sweep"),
            })
        }
    };
    Ok(report)
}

fn run_stability(cfg: &ResolvedConfig, dir: &Path) -> Result<Vec<MetricRow>> {
    let report = stability_report(cfg)?;
    report.write(dir)?;
    let arch = match cfg.experiment {
        ExperimentKind::StabilityLemma => "filter",
        ExperimentKind::StabilityThm1 => "grnn",
        _ => architecture_name(cfg.model.variants.first().copied().unwrap_or(GatingKind::Node)),
    };
    let mut rows = stability_rows(arch, &report);
    if let Some(r) = report.rows.first() {
        for (m, value) in [("q", r.q), ("phi1", r.phi1), ("phi2", r.phi2)] {
            if cfg.experiment == ExperimentKind::StabilityThm2 {
                rows.push(MetricRow {
                    architecture: arch.into(),
                    metric: m.into(),
                    value,
                });
            }
        }
    }
    Ok(rows)
}

/// Per-trial maximum deviation for every gating variant.
pub fn equivariance_deviations(cfg: &ResolvedConfig) -> Result<Vec<(GatingKind, Vec<f64>)>> {
    let st = &cfg.stability;
    let mut out = Vec::new();
    for (v, &kind) in cfg.model.variants.iter().enumerate() {
        let mut devs = Vec::with_capacity(st.trials);
        for trial in 0..st.trials {
            let index = (v * st.trials + trial) as u64;
            let graph = sbm_from(cfg, index)?;
            let gso = build_gso(&graph, cfg.graph.gso)?;
            let n = graph.n();
            let model = init_model(&grnn_spec(cfg, kind, n), &mut seeded(stream_seed(cfg.seed, INIT_STREAM, index)))?;
            let mut r = seeded(stream_seed(cfg.seed, SIGNAL_STREAM, index));
            let x: Vec<Mat> = (0..st.horizon)
                .map(|_| Mat::from_fn(n, cfg.model.input_features, |_, _| r.sample::<f64, _>(StandardNormal)))
                .collect();
            let p = Permutation::random(n, &mut r);
            devs.push(check_equivariance(&model, gso.matrix(), &x, &p, EQUIVARIANCE_TOL)?.max_deviation);
        }
        out.push((kind, devs));
    }
    Ok(out)
}

fn run_equivariance(cfg: &ResolvedConfig, dir: &Path) -> Result<Vec<MetricRow>> {
    let results = equivariance_deviations(cfg)?;
    let mut csv = String::from("architecture,trial,max_deviation\n");
    let mut rows = Vec::new();
    for (kind, devs) in &results {
        let arch = architecture_name(*kind);
        for (t, d) in devs.iter().enumerate() {
            csv.push_str(&format!("{arch},{t},{d:?}\n"));
        }
        let worst = devs.iter().copied().fold(0.0, f64::max);
        rows.push(MetricRow {
            architecture: arch.into(),
            metric: "max_deviation".into(),
            value: worst,
        });
        rows.push(MetricRow {
            architecture: arch.into(),
            metric: "passed".into(),
            value: if worst <= EQUIVARIANCE_TOL { 1.0 } else { 0.0 },
        });
    }
    fs::write(dir.join("equivariance.csv"), csv)?;
    Ok(rows)
}

/// Executes the experiment and writes its run directory.
pub fn run(cfg: &ResolvedConfig, dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), cfg.to_json()?)?;
    let metrics = if cfg.experiment.is_training() {
        run_training(cfg, dir)?
    } else if cfg.experiment.is_stability() {
        run_stability(cfg, dir)?
    } else {
        run_equivariance(cfg, dir)?
    };
    fs::write(dir.join("metrics.csv"), metrics_csv(&metrics))?;
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        metrics,
    })
}

/// Re-runs the experiment recorded in `run_dir` into `out`.
pub fn replay(run_dir: &Path, out: &Path) -> Result<RunOutcome> {
    let cfg = read_config(run_dir)?;
    run(&cfg, out)
}

/// Byte-level comparison of the metric files two run directories share.
pub fn metrics_identical(a: &Path, b: &Path) -> Result<bool> {
    for name in ["metrics.csv", "losses.csv", "stability.csv", "equivariance.csv"] {
        let (pa, pb) = (a.join(name), b.join(name));
        match (pa.exists(), pb.exists()) {
            (false, false) => continue,
            (true, true) => {
                if fs::read(&pa)? != fs::read(&pb)? {
                    return Ok(false);
                }
            }
            _ => return Ok(false),
        }
    }
    Ok(true)
}

/// Writes the graph, its shift operator and the dataset of a training experiment.
pub fn generate(cfg: &ResolvedConfig, dir: &Path) -> Result<GraphProcessDataset> {
    cfg.validate()?;
    let prepared = prepare(cfg)?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), cfg.to_json()?)?;
    fs::write(dir.join("graph.json"), prepared.graph.to_json()?)?;
    fs::write(dir.join("gso.csv"), prepared.gso.to_csv())?;
    export_dataset(&prepared.data, &dir.join("data"))?;
    Ok(prepared.data)
}

/// Test metrics of every GRNN checkpoint in a run directory, recomputed on
/// regenerated data and written to `eval_metrics.csv`.
pub fn eval_run(run_dir: &Path) -> Result<Vec<MetricRow>> {
    let cfg = read_config(run_dir)?;
    let prepared = prepare(&cfg)?;
    let mut rows = Vec::new();
    for &kind in &cfg.model.variants {
        let arch = architecture_name(kind);
        let model: GatedGrnn = load_checkpoint(&run_dir.join("checkpoints").join(arch))?;
        rows.extend(metric_rows(arch, &evaluate(&model, prepared.gso.matrix(), &prepared.data.test)?));
    }
    fs::write(run_dir.join("eval_metrics.csv"), metrics_csv(&rows))?;
    Ok(rows)
}
