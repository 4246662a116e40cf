//! Experiment configuration: JSON on disk, resolved against per-experiment
//! defaults before anything runs.

use std::path::PathBuf;

use grnn::graph::GsoKind;
use grnn::model::GatingKind;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    KStepDiffusion,
    Ar1TimeGating,
    FractionalNodeGating,
    CovarianceEdgeGating,
    SirEpidemic,
    StabilityLemma,
    StabilityThm1,
    StabilityThm2,
    Equivariance,
}

impl ExperimentKind {
    pub fn is_training(self) -> bool {
        matches!(
            self,
            Self::KStepDiffusion | Self::Ar1TimeGating | Self::FractionalNodeGating | Self::CovarianceEdgeGating | Self::SirEpidemic
        )
    }

    pub fn is_stability(self) -> bool {
        matches!(self, Self::StabilityLemma | Self::StabilityThm1 | Self::StabilityThm2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Baseline {
    Gnn,
    Rnn,
    CopyLast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub nodes: usize,
    pub communities: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    pub gso: GsoKind,
    /// Neighbours kept per node in covariance graphs.
    #[serde(default)]
    pub knn: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessConfig {
    /// Simulated steps per sequence (diffusion-type processes).
    pub sequence_length: usize,
    /// Prediction horizon.
    pub k: usize,
    pub xi2: f64,
    pub eta2: f64,
    #[serde(default)]
    pub alpha: Option<f64>,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    #[serde(default)]
    pub p_seed: Option<f64>,
    #[serde(default)]
    pub p_inf: Option<f64>,
    #[serde(default)]
    pub recovery_days: Option<usize>,
    /// Observed days per SIR sample.
    #[serde(default)]
    pub window: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Must match the features produced by the process.
    pub input_features: usize,
    pub state_features: usize,
    pub order: usize,
    /// Must match the target features (1 for regression, classes for SIR).
    pub output_features: usize,
    pub variants: Vec<GatingKind>,
    #[serde(default)]
    pub baselines: Vec<Baseline>,
    /// Hidden width of the dense RNN; parameter-matched to the ungated GRNN when absent.
    #[serde(default)]
    pub rnn_hidden: Option<usize>,
    #[serde(default)]
    pub gate_state_features: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    pub eps_grid: Vec<f64>,
    pub trials: usize,
    /// Sequence length for recurrent sweeps.
    pub horizon: usize,
    /// Filter order for the lemma sweep and the scalar models.
    pub order: usize,
    pub probes: usize,
}

/// Config as written by users; omitted sections take experiment defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    #[serde(default)]
    pub graph: Option<GraphConfig>,
    #[serde(default)]
    pub process: Option<ProcessConfig>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub training: Option<TrainingConfig>,
    #[serde(default)]
    pub stability: Option<StabilityConfig>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Fully specified config, as stored in a run directory's `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub paper_scale: bool,
    pub graph: GraphConfig,
    pub process: ProcessConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub stability: StabilityConfig,
}

fn sbm_graph(nodes: usize, communities: usize, p_intra: f64, p_inter: f64) -> GraphConfig {
    GraphConfig {
        nodes,
        communities,
        p_intra,
        p_inter,
        gso: GsoKind::NormalizedAdjacency,
        knn: None,
    }
}

fn default_graph(kind: ExperimentKind, paper: bool) -> GraphConfig {
    use ExperimentKind::*;
    match kind {
        KStepDiffusion if paper => sbm_graph(80, 5, 0.8, 0.2),
        KStepDiffusion | Ar1TimeGating | StabilityLemma | StabilityThm1 | Equivariance => sbm_graph(20, 2, 0.8, 0.2),
        FractionalNodeGating => sbm_graph(20, 2, 0.1, 0.8),
        CovarianceEdgeGating => GraphConfig {
            knn: Some(if paper { 19 } else { 10 }),
            ..sbm_graph(20, 1, 0.0, 0.0)
        },
        SirEpidemic => sbm_graph(134, 5, 0.4, 0.02),
        StabilityThm2 => sbm_graph(15, 2, 0.8, 0.2),
    }
}

fn default_process(kind: ExperimentKind, paper: bool) -> ProcessConfig {
    use ExperimentKind::*;
    let (train, val, test) = if paper { (10_000, 2_400, 200) } else { (1_000, 240, 200) };
    let base = ProcessConfig {
        sequence_length: 20,
        k: 5,
        xi2: 0.01,
        eta2: 0.01,
        alpha: None,
        train,
        val,
        test,
        p_seed: None,
        p_inf: None,
        recovery_days: None,
        window: None,
    };
    match kind {
        Ar1TimeGating => ProcessConfig {
            sequence_length: 30,
            k: 10,
            alpha: Some(0.5),
            ..base
        },
        FractionalNodeGating => ProcessConfig {
            sequence_length: 30,
            k: 10,
            alpha: Some(0.2),
            ..base
        },
        CovarianceEdgeGating => ProcessConfig {
            sequence_length: 20,
            k: 5,
            ..base
        },
        SirEpidemic => ProcessConfig {
            sequence_length: 0,
            k: 8,
            train: 1000,
            val: 120,
            test: 200,
            p_seed: Some(0.05),
            p_inf: Some(0.3),
            recovery_days: Some(4),
            window: Some(8),
            ..base
        },
        _ => base,
    }
}

fn default_model(kind: ExperimentKind) -> ModelConfig {
    use ExperimentKind::*;
    let base = ModelConfig {
        input_features: 1,
        state_features: 10,
        order: 4,
        output_features: 1,
        variants: vec![GatingKind::None],
        baselines: Vec::new(),
        rnn_hidden: None,
        gate_state_features: None,
    };
    match kind {
        KStepDiffusion => ModelConfig {
            state_features: 5,
            order: 5,
            baselines: vec![Baseline::Gnn, Baseline::Rnn, Baseline::CopyLast],
            ..base
        },
        Ar1TimeGating => ModelConfig {
            variants: vec![GatingKind::None, GatingKind::Time],
            ..base
        },
        FractionalNodeGating => ModelConfig {
            variants: vec![GatingKind::None, GatingKind::Node],
            ..base
        },
        CovarianceEdgeGating => ModelConfig {
            variants: vec![GatingKind::None, GatingKind::Edge],
            ..base
        },
        SirEpidemic => ModelConfig {
            input_features: 3,
            state_features: 12,
            order: 5,
            output_features: 2,
            variants: vec![GatingKind::None, GatingKind::Time, GatingKind::Node, GatingKind::Edge],
            ..base
        },
        Equivariance => ModelConfig {
            state_features: 4,
            order: 3,
            variants: vec![GatingKind::None, GatingKind::Node, GatingKind::Edge, GatingKind::Time],
            ..base
        },
        StabilityLemma | StabilityThm1 | StabilityThm2 => ModelConfig {
            state_features: 1,
            order: 4,
            variants: vec![if kind == StabilityThm2 { GatingKind::Node } else { GatingKind::None }],
            ..base
        },
    }
}

fn default_training(kind: ExperimentKind, paper: bool) -> TrainingConfig {
    TrainingConfig {
        lr: if kind == ExperimentKind::SirEpidemic { 5e-4 } else { 1e-3 },
        epochs: 10,
        batch_size: if paper { 100 } else { 10 },
        clip_norm: None,
    }
}

fn default_stability(kind: ExperimentKind) -> StabilityConfig {
    use ExperimentKind::*;
    match kind {
        StabilityThm2 => StabilityConfig {
            eps_grid: vec![1e-4, 3e-4, 1e-3],
            trials: 10,
            horizon: 8,
            order: 3,
            probes: 20,
        },
        Equivariance => StabilityConfig {
            eps_grid: Vec::new(),
            trials: 20,
            horizon: 10,
            order: 3,
            probes: 0,
        },
        _ => StabilityConfig {
            eps_grid: vec![1e-4, 3e-4, 1e-3, 3e-3, 1e-2],
            trials: 10,
            horizon: 10,
            order: 4,
            probes: 20,
        },
    }
}

fn bad(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

fn check_probability(field: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(bad(field, format!("{p} is not a probability")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<document>".into());
            CliError::Config { field, message: msg }
        })
    }

    pub fn resolve(&self, paper_scale: bool) -> Result<ResolvedConfig> {
        let kind = self.experiment;
        let resolved = ResolvedConfig {
            experiment: kind,
            seed: self.seed,
            paper_scale,
            graph: self.graph.clone().unwrap_or_else(|| default_graph(kind, paper_scale)),
            process: self.process.clone().unwrap_or_else(|| default_process(kind, paper_scale)),
            model: self.model.clone().unwrap_or_else(|| default_model(kind)),
            training: self.training.clone().unwrap_or_else(|| default_training(kind, paper_scale)),
            stability: self.stability.clone().unwrap_or_else(|| default_stability(kind)),
        };
        resolved.validate()?;
        Ok(resolved)
    }

    /// Default config for an experiment.
    pub fn preset(kind: ExperimentKind, seed: u64) -> Self {
        Self {
            experiment: kind,
            seed,
            graph: None,
            process: None,
            model: None,
            training: None,
            stability: None,
            out: None,
        }
    }
}

impl ResolvedConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| bad("config.json", e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        use ExperimentKind::*;
        let kind = self.experiment;
        let g = &self.graph;
        if g.nodes < 2 {
            return Err(bad("graph.nodes", "need at least 2 nodes"));
        }
        if g.communities == 0 || g.communities > g.nodes {
            return Err(bad("graph.communities", format!("must be in 1..={}", g.nodes)));
        }
        check_probability("graph.p_intra", g.p_intra)?;
        check_probability("graph.p_inter", g.p_inter)?;
        if kind == CovarianceEdgeGating {
            match g.knn {
                Some(k) if k >= 1 && k < g.nodes => {}
                _ => return Err(bad("graph.knn", format!("covariance graphs need 1 <= knn < {}", g.nodes))),
            }
        }
        if kind.is_training() {
            self.validate_training()?;
        }
        if kind.is_stability() || kind == Equivariance {
            self.validate_stability()?;
        }
        Ok(())
    }

    fn validate_training(&self) -> Result<()> {
        use ExperimentKind::*;
        let kind = self.experiment;
        let p = &self.process;
        let m = &self.model;
        let t = &self.training;
        if p.train == 0 {
            return Err(bad("process.train", "need at least one training sequence"));
        }
        if p.test == 0 {
            return Err(bad("process.test", "need at least one test sequence"));
        }
        if p.k == 0 {
            return Err(bad("process.k", "prediction horizon must be at least 1"));
        }
        if p.xi2 < 0.0 || !p.xi2.is_finite() {
            return Err(bad("process.xi2", "variance must be >= 0"));
        }
        if p.eta2 < 0.0 || !p.eta2.is_finite() {
            return Err(bad("process.eta2", "variance must be >= 0"));
        }
        let (want_in, want_out) = if kind == SirEpidemic {
            let window = p.window.ok_or_else(|| bad("process.window", "required for SIR"))?;
            if window == 0 {
                return Err(bad("process.window", "must be positive"));
            }
            check_probability("process.p_seed", p.p_seed.ok_or_else(|| bad("process.p_seed", "required for SIR"))?)?;
            check_probability("process.p_inf", p.p_inf.ok_or_else(|| bad("process.p_inf", "required for SIR"))?)?;
            if p.recovery_days.unwrap_or(0) == 0 {
                return Err(bad("process.recovery_days", "must be positive"));
            }
            (3, 2)
        } else {
            if p.sequence_length <= p.k {
                return Err(bad("process.sequence_length", format!("must exceed k = {}", p.k)));
            }
            (1, 1)
        };
        if matches!(kind, Ar1TimeGating | FractionalNodeGating) {
            match p.alpha {
                Some(a) if a > 0.0 && a <= 1.0 => {}
                other => return Err(bad("process.alpha", format!("need 0 < alpha <= 1, got {other:?}"))),
            }
        }
        if m.input_features != want_in {
            return Err(bad("model.input_features", format!("the process produces {want_in} input features, got {}", m.input_features)));
        }
        if m.output_features != want_out {
            return Err(bad("model.output_features", format!("targets have {want_out} features, got {}", m.output_features)));
        }
        if m.state_features == 0 {
            return Err(bad("model.state_features", "must be positive"));
        }
        if m.gate_state_features == Some(0) {
            return Err(bad("model.gate_state_features", "must be positive"));
        }
        if m.order == 0 {
            return Err(bad("model.order", "filters need at least one tap"));
        }
        if m.variants.is_empty() && m.baselines.is_empty() {
            return Err(bad("model.variants", "nothing to train"));
        }
        if kind == SirEpidemic && !m.baselines.is_empty() {
            return Err(bad("model.baselines", "baselines are defined for signal regression only"));
        }
        if m.rnn_hidden == Some(0) {
            return Err(bad("model.rnn_hidden", "must be positive"));
        }
        if !(t.lr >= 0.0) || !t.lr.is_finite() {
            return Err(bad("training.lr", "learning rate must be finite and >= 0"));
        }
        if t.epochs == 0 {
            return Err(bad("training.epochs", "must be positive"));
        }
        if t.batch_size == 0 {
            return Err(bad("training.batch_size", "must be positive"));
        }
        if let Some(c) = t.clip_norm {
            if !(c > 0.0) {
                return Err(bad("training.clip_norm", "must be positive"));
            }
        }
        Ok(())
    }

    fn validate_stability(&self) -> Result<()> {
        let s = &self.stability;
        if s.trials == 0 {
            return Err(bad("stability.trials", "must be positive"));
        }
        if s.order == 0 {
            return Err(bad("stability.order", "filters need at least one tap"));
        }
        if self.experiment == ExperimentKind::Equivariance {
            if s.horizon == 0 {
                return Err(bad("stability.horizon", "must be positive"));
            }
            if self.model.variants.is_empty() {
                return Err(bad("model.variants", "nothing to check"));
            }
            return Ok(());
        }
        if s.eps_grid.is_empty() || s.eps_grid.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
            return Err(bad("stability.eps_grid", "need non-negative finite values"));
        }
        if self.experiment != ExperimentKind::StabilityLemma && s.horizon == 0 {
            return Err(bad("stability.horizon", "must be positive"));
        }
        if self.experiment == ExperimentKind::StabilityThm2 && s.probes < 2 {
            return Err(bad("stability.probes", "need at least 2 probes"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(e: CliError) -> String {
        match e {
            CliError::Config { field, .. } => field,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn every_preset_resolves() {
        for kind in [
            ExperimentKind::KStepDiffusion,
            ExperimentKind::Ar1TimeGating,
            ExperimentKind::FractionalNodeGating,
            ExperimentKind::CovarianceEdgeGating,
            ExperimentKind::SirEpidemic,
            ExperimentKind::StabilityLemma,
            ExperimentKind::StabilityThm1,
            ExperimentKind::StabilityThm2,
            ExperimentKind::Equivariance,
        ] {
            for paper in [false, true] {
                let r = ExperimentConfig::preset(kind, 1).resolve(paper).unwrap();
                let back = ResolvedConfig::parse(&r.to_json().unwrap()).unwrap();
                assert_eq!(back, r);
            }
        }
    }

    #[test]
    fn feature_chaining_names_the_field() {
        let mut c = ExperimentConfig::preset(ExperimentKind::KStepDiffusion, 1);
        let mut m = default_model(ExperimentKind::KStepDiffusion);
        m.input_features = 3;
        c.model = Some(m);
        assert_eq!(field_of(c.resolve(false).unwrap_err()), "model.input_features");

        let mut c = ExperimentConfig::preset(ExperimentKind::SirEpidemic, 1);
        let mut m = default_model(ExperimentKind::SirEpidemic);
        m.output_features = 1;
        c.model = Some(m);
        assert_eq!(field_of(c.resolve(false).unwrap_err()), "model.output_features");
    }

    #[test]
    fn missing_seed_is_reported() {
        let err = ExperimentConfig::parse(r#"{"experiment": "Equivariance"}"#).unwrap_err();
        assert_eq!(field_of(err), "seed");
        let err = ExperimentConfig::parse(r#"{"experiment": "Equivariance", "seed": 1, "sed": 2}"#).unwrap_err();
        assert_eq!(field_of(err), "sed");
    }

    #[test]
    fn range_checks() {
        let mut c = ExperimentConfig::preset(ExperimentKind::Ar1TimeGating, 1);
        let mut p = default_process(ExperimentKind::Ar1TimeGating, false);
        p.alpha = Some(1.5);
        c.process = Some(p);
        assert_eq!(field_of(c.resolve(false).unwrap_err()), "process.alpha");

        let mut c = ExperimentConfig::preset(ExperimentKind::KStepDiffusion, 1);
        let mut p = default_process(ExperimentKind::KStepDiffusion, false);
        p.sequence_length = 5;
        c.process = Some(p);
        assert_eq!(field_of(c.resolve(false).unwrap_err()), "process.sequence_length");

        let mut c = ExperimentConfig::preset(ExperimentKind::StabilityThm2, 1);
        let mut s = default_stability(ExperimentKind::StabilityThm2);
        s.probes = 1;
        c.stability = Some(s);
        assert_eq!(field_of(c.resolve(false).unwrap_err()), "stability.probes");
    }
}
