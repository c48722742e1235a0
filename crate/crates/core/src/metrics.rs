//! Regression loss and the sentiment-style evaluation metrics.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Mean absolute error between `pred` (`[B]`) and fixed targets.
pub fn l1_loss(g: &mut Graph, pred: Var, targets: &[f64]) -> Result<Var> {
    if g.shape(pred) != [targets.len()] {
        return Err(Error::dim("l1_loss", g.shape(pred), &[targets.len()]));
    }
    let y = g.input(Tensor::vector(targets.to_vec()));
    let diff = g.sub(pred, y)?;
    let abs = g.abs(diff);
    g.mean(abs, 0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub mae: f64,
    /// Pearson correlation; `None` when either side has zero variance or
    /// fewer than two samples exist.
    pub corr: Option<f64>,
    /// Sign agreement over samples with a nonzero label.
    pub acc2: f64,
    /// Agreement after rounding and clamping both sides to `-3..=3`.
    pub acc7: f64,
    /// Macro F1 over the positive and negative classes (nonzero labels).
    pub f1: f64,
}

pub fn metrics(pred: &[f64], y: &[f64]) -> Result<Metrics> {
    if pred.len() != y.len() {
        return Err(Error::Input(format!(
            "metrics: {} predictions for {} labels",
            pred.len(),
            y.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Input("metrics of an empty set".into()));
    }
    let n = pred.len() as f64;
    let mae = pred.iter().zip(y).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let acc7 = pred
        .iter()
        .zip(y)
        .filter(|(p, t)| seven_class(**p) == seven_class(**t))
        .count() as f64
        / n;

    // (true positive, false positive, false negative, true negative)
    let (mut tp, mut fp, mut fneg, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(y) {
        if t == 0.0 {
            continue;
        }
        match (p > 0.0, t > 0.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => tn += 1,
        }
    }
    let counted = tp + fp + fneg + tn;
    let acc2 = if counted == 0 { 0.0 } else { (tp + tn) as f64 / counted as f64 };
    let f1 = 0.5 * (binary_f1(tp, fp, fneg) + binary_f1(tn, fneg, fp));

    Ok(Metrics {
        mae,
        corr: pearson(pred, y),
        acc2,
        acc7,
        f1,
    })
}

fn seven_class(v: f64) -> i64 {
    v.round().clamp(-3.0, 3.0) as i64
}

fn binary_f1(tp: usize, fp: usize, fneg: usize) -> f64 {
    let denom = 2 * tp + fp + fneg;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va.sqrt() * vb.sqrt()))
}
