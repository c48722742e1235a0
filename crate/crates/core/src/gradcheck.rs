//! Central finite-difference verification of every parameter gradient.

use crate::data::ModalityBatch;
use crate::error::Result;
use crate::graph::Graph;
use crate::metrics::l1_loss;
use crate::model::FusionModel;

/// Denominator floor of [`relative_error`]. Gradients that vanish
/// analytically (e.g. key biases under softmax shift invariance) are then
/// compared on an absolute scale instead of amplifying round-off.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Default central-difference step, near the cube root of machine epsilon
/// where truncation and round-off error balance for an O(1) loss.
pub const DEFAULT_STEP: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// Scalar parameter entries compared.
    pub checked: usize,
    /// Entry with the largest relative error.
    pub worst: Option<GradCheckEntry>,
    /// Largest relative error per parameter.
    pub per_param: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn worst_error(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.rel_error)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.worst_error() < tolerance
    }
}

fn loss_value(model: &impl FusionModel, batch: &ModalityBatch) -> Result<f64> {
    let mut g = Graph::new();
    let pred = model.forward(&mut g, batch)?;
    let loss = l1_loss(&mut g, pred, batch.labels())?;
    Ok(g.value(loss).item().expect("scalar loss"))
}

/// Compares the tape gradient of the L1 loss on `batch` against
/// `(L(p + ε) − L(p − ε)) / 2ε` for every scalar parameter. Parameter
/// values are restored afterwards; gradients are left holding the
/// analytic result.
pub fn gradcheck<M: FusionModel>(model: &mut M, batch: &ModalityBatch, eps: f64) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let pred = model.forward(&mut g, batch)?;
    let loss = l1_loss(&mut g, pred, batch.labels())?;
    model.params_mut().zero_grad();
    g.backward(loss, model.params_mut())?;
    drop(g);

    let mut report = GradCheckReport::default();
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        let (name, numel) = {
            let p = model.params().get(id);
            (p.name.clone(), p.value.numel())
        };
        let mut param_worst = 0.0f64;
        for i in 0..numel {
            let original = model.params().get(id).value.data()[i];
            model.params_mut().get_mut(id).value.data_mut()[i] = original + eps;
            let plus = loss_value(model, batch)?;
            model.params_mut().get_mut(id).value.data_mut()[i] = original - eps;
            let minus = loss_value(model, batch)?;
            model.params_mut().get_mut(id).value.data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = model.params().get(id).grad.data()[i];
            let rel_error = relative_error(analytic, numeric);
            report.checked += 1;
            param_worst = param_worst.max(rel_error);
            if report.worst.as_ref().is_none_or(|w| rel_error > w.rel_error) {
                report.worst = Some(GradCheckEntry {
                    name: name.clone(),
                    index: i,
                    analytic,
                    numeric,
                    rel_error,
                });
            }
        }
        report.per_param.push((name, param_worst));
    }
    Ok(report)
}
