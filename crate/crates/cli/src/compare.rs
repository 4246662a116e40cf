//! Relative metric deltas between architectures or between runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};
use crate::run::{read_config, read_metrics, MetricRow};

/// Architecture every other one is measured against within a single run.
pub const BASE_ARCHITECTURE: &str = "grnn";

/// Compared metrics and whether lower values are better.
const COMPARED: [(&str, bool); 5] = [("rrmse", true), ("accuracy", false), ("f1", false), ("precision", false), ("recall", false)];

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub run: String,
    pub architecture: String,
    pub metric: String,
    pub base: f64,
    pub variant: f64,
    pub improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Comparison {
    pub base_run: String,
    pub rows: Vec<ComparisonRow>,
}

/// `(base − variant)/base` for error metrics; the sign is flipped for
/// scores so a positive value always means the variant is better.
pub fn improvement(base: f64, variant: f64, lower_is_better: bool) -> f64 {
    if base == variant {
        return 0.0;
    }
    let d = (base - variant) / base;
    if lower_is_better {
        d
    } else {
        -d
    }
}

fn compared(metric: &str) -> Option<bool> {
    COMPARED.iter().find(|(m, _)| *m == metric).map(|(_, lower)| *lower)
}

fn run_label(dir: &Path) -> String {
    dir.file_name()
        .map_or_else(|| dir.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn within_run(dir: &Path, rows: &[MetricRow]) -> Result<Comparison> {
    let label = run_label(dir);
    let mut out = Comparison {
        base_run: label.clone(),
        rows: Vec::new(),
    };
    let bases: Vec<&MetricRow> = rows
        .iter()
        .filter(|r| r.architecture == BASE_ARCHITECTURE && compared(&r.metric).is_some())
        .collect();
    if bases.is_empty() {
        return Err(CliError::IncompatibleRuns(format!("{label} has no `{BASE_ARCHITECTURE}` metrics to compare against")));
    }
    for b in bases {
        let lower = compared(&b.metric).unwrap_or(true);
        for v in rows.iter().filter(|r| r.metric == b.metric && r.architecture != BASE_ARCHITECTURE) {
            out.rows.push(ComparisonRow {
                run: label.clone(),
                architecture: v.architecture.clone(),
                metric: v.metric.clone(),
                base: b.value,
                variant: v.value,
                improvement: improvement(b.value, v.value, lower),
            });
        }
    }
    Ok(out)
}

fn keys(rows: &[MetricRow]) -> Vec<(String, String)> {
    let mut k: Vec<(String, String)> = rows
        .iter()
        .filter(|r| compared(&r.metric).is_some())
        .map(|r| (r.architecture.clone(), r.metric.clone()))
        .collect();
    k.sort();
    k
}

/// One run: every architecture against the ungated GRNN of that run.
/// Several runs: every run against the first, architecture by architecture.
pub fn compare(run_dirs: &[PathBuf]) -> Result<Comparison> {
    let Some(first) = run_dirs.first() else {
        return Err(CliError::IncompatibleRuns("no run directories given".into()));
    };
    let base_rows = read_metrics(first)?;
    if run_dirs.len() == 1 {
        return within_run(first, &base_rows);
    }
    let base_cfg = read_config(first)?;
    let base_keys = keys(&base_rows);
    if base_keys.is_empty() {
        return Err(CliError::IncompatibleRuns(format!("{} has no comparable metrics", first.display())));
    }
    let mut out = Comparison {
        base_run: run_label(first),
        rows: Vec::new(),
    };
    for dir in &run_dirs[1..] {
        let cfg = read_config(dir)?;
        if cfg.experiment != base_cfg.experiment {
            return Err(CliError::IncompatibleRuns(format!(
                "{} runs {:?} but {} runs {:?}",
                first.display(),
                base_cfg.experiment,
                dir.display(),
                cfg.experiment
            )));
        }
        let rows = read_metrics(dir)?;
        if keys(&rows) != base_keys {
            return Err(CliError::IncompatibleRuns(format!(
                "{} and {} report different architectures or metrics",
                first.display(),
                dir.display()
            )));
        }
        let label = run_label(dir);
        for b in base_rows.iter().filter(|r| compared(&r.metric).is_some()) {
            let v = rows
                .iter()
                .find(|r| r.architecture == b.architecture && r.metric == b.metric)
                .map_or(f64::NAN, |r| r.value);
            out.rows.push(ComparisonRow {
                run: label.clone(),
                architecture: b.architecture.clone(),
                metric: b.metric.clone(),
                base: b.value,
                variant: v,
                improvement: improvement(b.value, v, compared(&b.metric).unwrap_or(true)),
            });
        }
    }
    Ok(out)
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("run,architecture,metric,base,variant,improvement\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{:?},{:?},{:?}", r.run, r.architecture, r.metric, r.base, r.variant, r.improvement);
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("base: {}\n", self.base_run);
        let _ = writeln!(out, "{:<24} {:<12} {:<10} {:>12} {:>12} {:>12}", "run", "architecture", "metric", "base", "variant", "improvement");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<24} {:<12} {:<10} {:>12.6} {:>12.6} {:>11.2}%",
                r.run,
                r.architecture,
                r.metric,
                r.base,
                r.variant,
                100.0 * r.improvement
            );
        }
        out
    }

    pub fn get(&self, architecture: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.architecture == architecture && r.metric == metric)
            .map(|r| r.improvement)
    }
}
