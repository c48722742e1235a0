//! Least-squares linear probes on frozen embeddings.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A linear classifier `sign(w·x + b)` fitted by least squares to ±1
/// targets.
#[derive(Clone, Debug)]
pub struct LinearProbe {
    weights: DVector<f64>,
}

fn design(x: &Tensor) -> Result<DMatrix<f64>> {
    if x.rank() != 2 {
        return Err(Error::Shape {
            shape: x.shape().to_vec(),
            reason: "probe expects [samples, features]".into(),
        });
    }
    let (n, d) = (x.shape()[0], x.shape()[1]);
    Ok(DMatrix::from_fn(n, d + 1, |r, c| if c == d { 1.0 } else { x.data()[r * d + c] }))
}

impl LinearProbe {
    /// Fits on the samples whose label is nonzero; the class is the label's
    /// sign.
    pub fn fit(x: &Tensor, labels: &[f64]) -> Result<Self> {
        let a = design(x)?;
        if a.nrows() != labels.len() {
            return Err(Error::dim("linear_probe", x.shape(), &[labels.len()]));
        }
        let keep: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 0.0).collect();
        let a = a.select_rows(&keep);
        let y = DVector::from_iterator(keep.len(), keep.iter().map(|&i| labels[i].signum()));
        let weights = a
            .svd(true, true)
            .solve(&y, 1e-10)
            .map_err(|e| Error::Contract(format!("probe solve failed: {e}")))?;
        Ok(LinearProbe { weights })
    }

    pub fn decision(&self, x: &Tensor) -> Result<Vec<f64>> {
        let a = design(x)?;
        if a.ncols() != self.weights.len() {
            return Err(Error::dim("linear_probe", x.shape(), &[self.weights.len() - 1]));
        }
        Ok((a * &self.weights).iter().copied().collect())
    }

    /// Fraction of nonzero-label samples whose sign the probe recovers.
    pub fn accuracy(&self, x: &Tensor, labels: &[f64]) -> Result<f64> {
        let scores = self.decision(x)?;
        let (mut hit, mut total) = (0usize, 0usize);
        for (s, &y) in scores.iter().zip(labels) {
            if y == 0.0 {
                continue;
            }
            total += 1;
            if (s > &0.0) == (y > 0.0) {
                hit += 1;
            }
        }
        Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
    }
}
