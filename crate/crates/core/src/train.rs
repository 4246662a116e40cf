//! Optimizer, losses, metrics and the mini-batch training loop.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::SequenceModel;
use crate::process::{GraphProcessDataset, Sample, Targets};
use crate::rng;
use crate::tape::{Tape, Var};

/// ADAM with bias-corrected moments over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer holds {} moments, got {} params and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Mean absolute deviation.
pub fn l1_loss(pred: &Mat, target: &Mat) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    if pred.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok((pred - target).abs().sum() / pred.len() as f64)
}

/// Mean over rows of `−w[y]·log softmax(row)[y]`.
pub fn weighted_cross_entropy(logits: &Mat, labels: &[usize], class_weights: &[f64]) -> Result<f64> {
    let tape = Tape::new();
    let v = tape.constant(logits.clone());
    let l = tape.weighted_cross_entropy(v, labels, class_weights)?;
    Ok(tape.scalar(l))
}

/// Weights inversely proportional to class counts, scaled to mean 1 over
/// the classes that occur. Absent classes get weight 0.
pub fn class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    let present: Vec<f64> = counts.iter().filter(|&&c| c > 0).map(|&c| 1.0 / c as f64).collect();
    if present.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    Ok(counts
        .iter()
        .map(|&c| if c > 0 { 1.0 / c as f64 / mean } else { 0.0 })
        .collect())
}

/// Mean over items of `‖pred − target‖ / ‖target‖`.
pub fn rrmse(preds: &[Mat], targets: &[Mat]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        if p.shape() != t.shape() {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", p.shape(), t.shape())));
        }
        let norm = t.norm();
        if norm == 0.0 {
            return Err(Error::ZeroTarget);
        }
        total += (p - t).norm() / norm;
    }
    Ok(total / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rrmse: Option<f64>,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 of the positive class `1`; `0/0` counts as 0.
pub fn binary_f1(pred: &[usize], truth: &[usize]) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    let (mut tp, mut fp, mut fne, mut correct) = (0, 0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        if p > 1 || t > 1 {
            return Err(Error::InvalidArgument(format!("labels must be 0 or 1, got {p} and {t}")));
        }
        match (p, t) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fne += 1,
            _ => {}
        }
        correct += usize::from(p == t);
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fne);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Metrics {
        accuracy: Some(ratio(correct, pred.len())),
        f1: Some(f1),
        precision: Some(precision),
        recall: Some(recall),
        ..Metrics::default()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    L1,
    /// Mean squared error, averaged over steps like `L1`.
    Mse,
    WeightedCrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub seed: u64,
    /// Rescale the gradient to this global norm when it is larger.
    #[serde(default)]
    pub clip_norm: Option<f64>,
    /// Keep the parameters of the epoch with the best validation metric.
    #[serde(default)]
    pub select_on_validation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<StepLoss>,
    /// Validation metric after each epoch (rRMSE or F1), when a validation
    /// split exists.
    pub validation: Vec<f64>,
    pub selected_epoch: Option<usize>,
}

impl TrainReport {
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("step,epoch,loss\n");
        for l in &self.losses {
            out.push_str(&format!("{},{},{:?}\n", l.step, l.epoch, l.loss));
        }
        out
    }
}

/// Stacks step `t` of every sequence into `(B·n) × F` matrices.
pub fn stack_inputs(samples: &[&Sample]) -> Result<Vec<Mat>> {
    let first = samples.first().ok_or(Error::EmptyBatch)?;
    let steps = first.inputs.len();
    let (n, f) = first.inputs.first().map(Mat::shape).ok_or(Error::EmptyBatch)?;
    if samples.iter().any(|s| s.inputs.len() != steps) {
        return Err(Error::ShapeMismatch("sequences in a batch differ in length".into()));
    }
    (0..steps)
        .map(|t| {
            let mut m = Mat::zeros(samples.len() * n, f);
            for (b, s) in samples.iter().enumerate() {
                if s.inputs[t].shape() != (n, f) {
                    return Err(Error::ShapeMismatch(format!("step {t} has shape {:?}", s.inputs[t].shape())));
                }
                m.rows_mut(b * n, n).copy_from(&s.inputs[t]);
            }
            Ok(m)
        })
        .collect()
}

fn stack_signals(samples: &[&Sample], t: usize) -> Result<Mat> {
    let rows: Vec<&Mat> = samples
        .iter()
        .map(|s| match &s.targets {
            Targets::Signals(seq) => seq
                .get(t)
                .ok_or_else(|| Error::ShapeMismatch(format!("target sequence shorter than {}", t + 1))),
            _ => Err(Error::InvalidArgument("expected signal targets".into())),
        })
        .collect::<Result<_>>()?;
    let (n, f) = rows[0].shape();
    let mut m = Mat::zeros(rows.len() * n, f);
    for (b, r) in rows.iter().enumerate() {
        m.rows_mut(b * n, n).copy_from(r);
    }
    Ok(m)
}

fn stacked_labels(samples: &[&Sample]) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for s in samples {
        match &s.targets {
            Targets::NodeLabels(l) => out.extend_from_slice(l),
            Targets::GraphLabel(l) => out.push(*l),
            Targets::Signals(_) => return Err(Error::InvalidArgument("expected label targets".into())),
        }
    }
    Ok(out)
}

fn record_batch<M: SequenceModel>(
    model: &M,
    tape: &Tape,
    leaves: &mut Vec<Var>,
    trainable: bool,
    s: &Mat,
    samples: &[&Sample],
) -> Result<Vec<Var>> {
    let inputs: Vec<Var> = stack_inputs(samples)?.into_iter().map(|m| tape.constant(m)).collect();
    let sv = tape.constant(s.clone());
    model.record(tape, leaves, trainable, sv, s.nrows(), &inputs)
}

/// Records the batch loss.
pub fn record_loss(tape: &Tape, outputs: &[Var], samples: &[&Sample], loss: LossKind, weights: &[f64]) -> Result<Var> {
    match loss {
        LossKind::L1 => {
            let terms: Vec<Var> = outputs
                .iter()
                .enumerate()
                .map(|(t, &y)| tape.mean_abs_diff(y, &stack_signals(samples, t)?))
                .collect::<Result<_>>()?;
            Ok(tape.scale(tape.sum(&terms)?, 1.0 / terms.len() as f64))
        }
        LossKind::Mse => {
            let terms: Vec<Var> = outputs
                .iter()
                .enumerate()
                .map(|(t, &y)| {
                    let target = stack_signals(samples, t)?;
                    let count = target.len() as f64;
                    let diff = tape.sub(y, tape.constant(target))?;
                    Ok(tape.scale(tape.sum_squares(diff), 1.0 / count))
                })
                .collect::<Result<_>>()?;
            Ok(tape.scale(tape.sum(&terms)?, 1.0 / terms.len() as f64))
        }
        LossKind::WeightedCrossEntropy => {
            let last = *outputs.last().ok_or(Error::EmptyBatch)?;
            tape.weighted_cross_entropy(last, &stacked_labels(samples)?, weights)
        }
    }
}

/// Loss and flat gradient of `model` on one batch.
pub fn loss_and_gradient<M: SequenceModel>(
    model: &M,
    s: &Mat,
    samples: &[&Sample],
    loss: LossKind,
    weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::new();
    let mut leaves = Vec::new();
    let outputs = record_batch(model, &tape, &mut leaves, true, s, samples)?;
    let l = record_loss(&tape, &outputs, samples, loss, weights)?;
    let grads = tape.backward(l)?;
    let mut flat = Vec::new();
    for v in leaves {
        match grads.get(v) {
            Some(g) => flat.extend_from_slice(g.as_slice()),
            None => tape.with_value(v, |m| flat.extend(std::iter::repeat_n(0.0, m.len()))),
        }
    }
    Ok((tape.scalar(l), flat))
}

const EVAL_BATCH: usize = 64;

/// Per-step predictions for every sample, without gradients.
pub fn predict<M: SequenceModel>(model: &M, s: &Mat, samples: &[Sample]) -> Result<Vec<Vec<Mat>>> {
    let n = s.nrows();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let tape = Tape::new();
        let mut leaves = Vec::new();
        let ys = record_batch(model, &tape, &mut leaves, false, s, &refs)?;
        let values: Vec<Mat> = ys.iter().map(|&y| tape.value(y)).collect();
        for b in 0..chunk.len() {
            out.push(
                values
                    .iter()
                    .map(|v| {
                        let block = v.nrows() / chunk.len();
                        debug_assert!(block == n || block == 1);
                        v.rows(b * block, block).clone_owned()
                    })
                    .collect(),
            );
        }
    }
    Ok(out)
}

fn argmax_rows(m: &Mat) -> Vec<usize> {
    (0..m.nrows())
        .map(|r| {
            let row = m.row(r);
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// rRMSE for signal targets; accuracy, precision, recall and F1 for labels.
pub fn evaluate<M: SequenceModel>(model: &M, s: &Mat, samples: &[Sample]) -> Result<Metrics> {
    let preds = predict(model, s, samples)?;
    metrics_from_predictions(&preds, samples)
}

pub fn metrics_from_predictions(preds: &[Vec<Mat>], samples: &[Sample]) -> Result<Metrics> {
    let first = samples.first().ok_or(Error::EmptyBatch)?;
    match &first.targets {
        Targets::Signals(_) => {
            let mut p = Vec::new();
            let mut t = Vec::new();
            for (pred, sample) in preds.iter().zip(samples) {
                let Targets::Signals(tgt) = &sample.targets else {
                    return Err(Error::InvalidArgument("mixed target kinds".into()));
                };
                p.extend(pred.iter().cloned());
                t.extend(tgt.iter().cloned());
            }
            Ok(Metrics {
                rrmse: Some(rrmse(&p, &t)?),
                ..Metrics::default()
            })
        }
        Targets::NodeLabels(_) | Targets::GraphLabel(_) => {
            let mut predicted = Vec::new();
            for pred in preds {
                predicted.extend(argmax_rows(pred.last().ok_or(Error::EmptyBatch)?));
            }
            let refs: Vec<&Sample> = samples.iter().collect();
            binary_f1(&predicted, &stacked_labels(&refs)?)
        }
    }
}

/// Label counts over the training split, for class weighting.
pub fn label_counts(samples: &[Sample], classes: usize) -> Result<Vec<usize>> {
    let refs: Vec<&Sample> = samples.iter().collect();
    let mut counts = vec![0; classes];
    for l in stacked_labels(&refs)? {
        if l >= classes {
            return Err(Error::InvalidArgument(format!("label {l} with {classes} classes")));
        }
        counts[l] += 1;
    }
    Ok(counts)
}

fn validation_score(m: &Metrics) -> f64 {
    // larger is better
    match (m.rrmse, m.f1) {
        (Some(r), _) => -r,
        (None, Some(f)) => f,
        _ => f64::NEG_INFINITY,
    }
}

fn clip(grads: &mut [f64], max_norm: f64) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let c = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= c);
    }
}

/// Mini-batch BPTT over full sequences with ADAM.
///
/// The training split is reshuffled every epoch from a generator seeded
/// with `cfg.seed`; the loss is recorded after every step.
pub fn train<M: SequenceModel>(model: &mut M, s: &Mat, data: &GraphProcessDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    if data.train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let weights = match cfg.loss {
        LossKind::L1 | LossKind::Mse => Vec::new(),
        LossKind::WeightedCrossEntropy => {
            let classes = predict(model, s, &data.train[..1])?[0]
                .last()
                .map(Mat::ncols)
                .ok_or(Error::EmptyBatch)?;
            class_weights(&label_counts(&data.train, classes)?)?
        }
    };
    let mut rng = rng::seeded(cfg.seed);
    let mut params = model.flat_params();
    let mut adam = Adam::new(cfg.lr, params.len());
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut report = TrainReport::default();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let (loss, mut grads) = loss_and_gradient(model, s, &batch, cfg.loss, &weights)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { step, loss });
            }
            if let Some(c) = cfg.clip_norm {
                clip(&mut grads, c);
            }
            adam.step(&mut params, &grads)?;
            model.set_flat_params(&params)?;
            report.losses.push(StepLoss { step, epoch, loss });
            step += 1;
        }
        if !data.val.is_empty() {
            let m = evaluate(model, s, &data.val)?;
            let score = validation_score(&m);
            report.validation.push(m.rrmse.or(m.f1).unwrap_or(f64::NAN));
            if cfg.select_on_validation && best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, params.clone()));
                report.selected_epoch = Some(epoch);
            }
        }
    }
    if let Some((_, p)) = best {
        model.set_flat_params(&p)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub parameters: usize,
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_relative_error: f64,
    pub worst_index: usize,
}

/// Compares the tape gradient of the batch loss with central differences
/// on every parameter. The numeric derivative Richardson-extrapolates the
/// central quotients at `h` and `h/2`, which is fourth-order accurate.
pub fn gradient_check<M: SequenceModel + Clone>(
    model: &M,
    s: &Mat,
    samples: &[&Sample],
    loss: LossKind,
    weights: &[f64],
    h: f64,
) -> Result<GradientCheck> {
    let (_, analytic) = loss_and_gradient(model, s, samples, loss, weights)?;
    let base = model.flat_params();
    let mut probe = model.clone();
    let mut worst = (0.0f64, 0usize);
    let mut at = |i: usize, v: f64| -> Result<f64> {
        let mut p = base.clone();
        p[i] = v;
        probe.set_flat_params(&p)?;
        Ok(loss_and_gradient(&probe, s, samples, loss, weights)?.0)
    };
    for i in 0..base.len() {
        let wide = (at(i, base[i] + h)? - at(i, base[i] - h)?) / (2.0 * h);
        let narrow = (at(i, base[i] + h / 2.0)? - at(i, base[i] - h / 2.0)?) / h;
        let numeric = (4.0 * narrow - wide) / 3.0;
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-8);
        if err > worst.0 {
            worst = (err, i);
        }
    }
    Ok(GradientCheck {
        parameters: base.len(),
        max_relative_error: worst.0,
        worst_index: worst.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::FilterBank;
    use crate::model::{Activation, Gnn, OutputLayer, Parameterized};
    use crate::rng::seeded;
    use rand::Rng as _;

    #[test]
    fn adam_examples() {
        let mut a = Adam::new(0.1, 2);
        let mut p = vec![1.0, -2.0];
        a.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(a.m, vec![0.0, 0.0]);

        let mut a = Adam::new(0.01, 1);
        let mut p = vec![0.0];
        a.step(&mut p, &[0.3]).unwrap();
        let expected = -0.01 * 0.3 / (0.3 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);

        let mut a = Adam::new(0.01, 1);
        let mut p = vec![0.0];
        for _ in 0..500 {
            let before = p[0];
            a.step(&mut p, &[-4.0]).unwrap();
            assert!((p[0] - before - 0.01).abs() < 1e-6);
        }
        assert!(matches!(a.step(&mut p, &[1.0, 2.0]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn adam_is_sign_symmetric() {
        let g = [0.3, -1.2, 0.0, 5.0];
        let mut a = Adam::new(0.05, 4);
        let mut b = Adam::new(0.05, 4);
        let mut pa = vec![0.1, 0.2, 0.3, 0.4];
        let mut pb: Vec<f64> = pa.iter().map(|v| -v).collect();
        for _ in 0..10 {
            a.step(&mut pa, &g).unwrap();
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            b.step(&mut pb, &neg).unwrap();
        }
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn loss_examples() {
        let m = Mat::from_fn(3, 2, |i, j| (i * j) as f64);
        assert_eq!(l1_loss(&m, &m).unwrap(), 0.0);
        let ce = weighted_cross_entropy(&Mat::zeros(3, 2), &[0, 1, 1], &[1.0, 1.0]).unwrap();
        assert!((ce - 2f64.ln()).abs() < 1e-15);
        let w = class_weights(&[90, 10]).unwrap();
        assert!((w[0] / w[1] - 10.0 / 90.0).abs() < 1e-15);
        assert!(((w[0] + w[1]) / 2.0 - 1.0).abs() < 1e-15);
        assert!(matches!(l1_loss(&Mat::zeros(0, 0), &Mat::zeros(0, 0)), Err(Error::EmptyBatch)));
    }

    #[test]
    fn rrmse_examples() {
        let t = vec![Mat::from_fn(4, 1, |i, _| i as f64 + 1.0)];
        assert_eq!(rrmse(&t, &t).unwrap(), 0.0);
        assert_eq!(rrmse(&[Mat::zeros(4, 1)], &t).unwrap(), 1.0);
        assert!((rrmse(&[&t[0] * 1.1], &t).unwrap() - 0.1).abs() < 1e-12);
        assert!(matches!(rrmse(&[Mat::zeros(4, 1)], &[Mat::zeros(4, 1)]), Err(Error::ZeroTarget)));
    }

    #[test]
    fn f1_examples() {
        let truth = [1, 0, 1, 1, 0];
        let m = binary_f1(&truth, &truth).unwrap();
        assert_eq!((m.f1, m.precision, m.recall), (Some(1.0), Some(1.0), Some(1.0)));
        let m = binary_f1(&[0; 5], &truth).unwrap();
        assert_eq!((m.recall, m.f1), (Some(0.0), Some(0.0)));
        // TP = 8, FP = 2, FN = 2
        let pred: Vec<usize> = [vec![1; 8], vec![1; 2], vec![0; 2]].concat();
        let truth: Vec<usize> = [vec![1; 8], vec![0; 2], vec![1; 2]].concat();
        let m = binary_f1(&pred, &truth).unwrap();
        assert!((m.precision.unwrap() - 0.8).abs() < 1e-15);
        assert!((m.recall.unwrap() - 0.8).abs() < 1e-15);
        assert!((m.f1.unwrap() - 0.8).abs() < 1e-12);
    }

    fn scalar_gnn(a: f64) -> Gnn {
        Gnn {
            layers: vec![OutputLayer {
                bank: FilterBank::scalar(&[a]).unwrap(),
                activation: Activation::Identity,
            }],
        }
    }

    fn linear_dataset(n_samples: usize, seed: u64) -> GraphProcessDataset {
        let mut r = seeded(seed);
        let make = |r: &mut crate::rng::Rng| {
            let inputs: Vec<Mat> = (0..3).map(|_| Mat::from_fn(4, 1, |_, _| r.random::<f64>() + 0.5)).collect();
            let targets = inputs.iter().map(|x| x * 2.0).collect();
            Sample {
                inputs,
                targets: Targets::Signals(targets),
            }
        };
        GraphProcessDataset {
            n: 4,
            train: (0..n_samples).map(|_| make(&mut r)).collect(),
            val: (0..4).map(|_| make(&mut r)).collect(),
            test: Vec::new(),
        }
    }

    fn cfg(lr: f64, epochs: usize) -> TrainConfig {
        TrainConfig {
            lr,
            epochs,
            batch_size: 4,
            loss: LossKind::Mse,
            seed: 3,
            clip_norm: None,
            select_on_validation: false,
        }
    }

    #[test]
    fn learns_a_slope() {
        let data = linear_dataset(40, 1);
        let mut m = scalar_gnn(0.1);
        let s = Mat::identity(4, 4);
        let report = train(&mut m, &s, &data, &cfg(0.01, 200)).unwrap();
        assert!(report.losses.len() <= 2000);
        assert!((m.flat_params()[0] - 2.0).abs() < 1e-3, "{:?}", m.flat_params());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = linear_dataset(8, 2);
        let mut m = scalar_gnn(0.7);
        train(&mut m, &Mat::identity(4, 4), &data, &cfg(0.0, 2)).unwrap();
        assert_eq!(m.flat_params(), vec![0.7]);
    }

    #[test]
    fn training_is_deterministic() {
        let data = linear_dataset(12, 3);
        let s = Mat::identity(4, 4);
        let mut a = scalar_gnn(0.2);
        let mut b = scalar_gnn(0.2);
        let ra = train(&mut a, &s, &data, &cfg(0.01, 3)).unwrap();
        let rb = train(&mut b, &s, &data, &cfg(0.01, 3)).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn divergence_is_reported() {
        let mut data = linear_dataset(4, 4);
        if let Targets::Signals(t) = &mut data.train[0].targets {
            t[0][(0, 0)] = f64::NAN;
        }
        let mut m = scalar_gnn(0.2);
        let err = train(&mut m, &Mat::identity(4, 4), &data, &cfg(0.01, 1)).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn empty_dataset_rejected() {
        let data = GraphProcessDataset {
            n: 4,
            train: vec![],
            val: vec![],
            test: vec![],
        };
        assert!(matches!(
            train(&mut scalar_gnn(0.0), &Mat::identity(4, 4), &data, &cfg(0.01, 1)),
            Err(Error::EmptyBatch)
        ));
    }
}
