//! Multimodal batches and the synthetic fusion tasks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::model::ModalitySpec;
use crate::tensor::Tensor;

/// Features of one modality for a batch: `batch × seq_len × dim`, flat.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityData {
    pub spec: ModalitySpec,
    pub data: Vec<f64>,
}

/// Per-modality feature sequences plus one label per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityBatch {
    modalities: Vec<ModalityData>,
    labels: Vec<f64>,
}

impl ModalityBatch {
    pub fn new(modalities: Vec<ModalityData>, labels: Vec<f64>) -> Result<Self> {
        let b = labels.len();
        if let Some(bad) = labels.iter().find(|y| !y.is_finite()) {
            return Err(Error::Input(format!("non-finite label {bad}")));
        }
        for m in &modalities {
            if m.data.len() != b * m.spec.seq_len * m.spec.dim {
                return Err(Error::Input(format!(
                    "modality `{}` holds {} values, expected {} samples of {}×{}",
                    m.spec.name,
                    m.data.len(),
                    b,
                    m.spec.seq_len,
                    m.spec.dim
                )));
            }
        }
        Ok(ModalityBatch { modalities, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn modalities(&self) -> &[ModalityData] {
        &self.modalities
    }

    pub fn modality(&self, name: &str) -> Option<&ModalityData> {
        self.modalities.iter().find(|m| m.spec.name == name)
    }

    /// Features of `name` as a `[B, T, d]` tensor, checked against `spec`.
    pub fn tensor(&self, spec: &ModalitySpec) -> Result<Tensor> {
        let m = self
            .modality(&spec.name)
            .ok_or_else(|| Error::Input(format!("batch is missing modality `{}`", spec.name)))?;
        if m.spec != *spec {
            return Err(Error::dim(
                "modality input",
                &[m.spec.seq_len, m.spec.dim],
                &[spec.seq_len, spec.dim],
            ));
        }
        if self.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        Tensor::new(vec![self.len(), spec.seq_len, spec.dim], m.data.clone())
    }

    /// The samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> ModalityBatch {
        let modalities = self
            .modalities
            .iter()
            .map(|m| {
                let stride = m.spec.seq_len * m.spec.dim;
                let mut data = Vec::with_capacity(indices.len() * stride);
                for &i in indices {
                    data.extend_from_slice(&m.data[i * stride..(i + 1) * stride]);
                }
                ModalityData {
                    spec: m.spec.clone(),
                    data,
                }
            })
            .collect();
        ModalityBatch {
            modalities,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Contiguous chunks of at most `size` samples.
    pub fn chunks(&self, size: usize) -> impl Iterator<Item = ModalityBatch> + '_ {
        let n = self.len();
        (0..n).step_by(size.max(1)).map(move |start| {
            let idx: Vec<usize> = (start..(start + size).min(n)).collect();
            self.select(&idx)
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskMode {
    /// `y = 3·sign(∏ c_i)`: no single modality carries label information.
    Parity,
    /// `y = clamp(Σ c_i, -3, 3)`.
    Sum,
}

impl std::str::FromStr for TaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parity" => Ok(TaskMode::Parity),
            "sum" => Ok(TaskMode::Sum),
            other => Err(Error::Config(format!("unknown task mode `{other}` (parity|sum)"))),
        }
    }
}

impl std::fmt::Display for TaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskMode::Parity => "parity",
            TaskMode::Sum => "sum",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTaskSpec {
    pub modalities: Vec<ModalitySpec>,
    pub noise_std: f64,
    pub mode: TaskMode,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
}

/// Latents are drawn from `[-1, -GAP] ∪ [GAP, 1]`.
pub const LATENT_GAP: f64 = 0.2;

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::Config("synthetic task needs at least one modality".into()));
        }
        if self.mode == TaskMode::Parity && self.modalities.len() < 2 {
            return Err(Error::Config("parity mode needs at least two modalities".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("invalid noise_std {}", self.noise_std)));
        }
        if self.modalities.iter().any(|m| m.seq_len == 0 || m.dim == 0) {
            return Err(Error::Config("modalities need positive length and width".into()));
        }
        Ok(())
    }
}

/// One split, with the latents each sample was generated from.
#[derive(Clone, Debug)]
pub struct Split {
    pub batch: ModalityBatch,
    /// `latents[s][i]` is `c_i` of sample `s`.
    pub latents: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub train: Split,
    pub val: Split,
    pub test: Split,
    /// The fixed unit direction `u_i` of each modality.
    pub directions: Vec<Vec<f64>>,
}

impl SyntheticData {
    pub fn split(&self, name: &str) -> Option<&Split> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

pub fn label(mode: TaskMode, latents: &[f64]) -> f64 {
    match mode {
        TaskMode::Parity => 3.0 * latents.iter().product::<f64>().signum(),
        TaskMode::Sum => latents.iter().sum::<f64>().clamp(-3.0, 3.0),
    }
}

/// Draws the three splits. Each sample embeds `c_i` as
/// `X_i[t] = c_i·u_i + ε` at every time step.
pub fn generate_synthetic(spec: &SyntheticTaskSpec, seed: u64) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let directions: Vec<Vec<f64>> = spec
        .modalities
        .iter()
        .map(|m| unit_direction(m.dim, &mut rng))
        .collect();
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut draw = |size: usize| -> Result<Split> {
        let mut data: Vec<Vec<f64>> = spec
            .modalities
            .iter()
            .map(|m| Vec::with_capacity(size * m.seq_len * m.dim))
            .collect();
        let mut latents = Vec::with_capacity(size);
        let mut labels = Vec::with_capacity(size);
        for _ in 0..size {
            let c: Vec<f64> = spec
                .modalities
                .iter()
                .map(|_| {
                    let magnitude = rng.random_range(LATENT_GAP..=1.0);
                    if rng.random::<bool>() { magnitude } else { -magnitude }
                })
                .collect();
            for (i, m) in spec.modalities.iter().enumerate() {
                for _ in 0..m.seq_len {
                    for &u in &directions[i] {
                        let eps = if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                        data[i].push(c[i] * u + eps);
                    }
                }
            }
            labels.push(label(spec.mode, &c));
            latents.push(c);
        }
        let modalities = spec
            .modalities
            .iter()
            .zip(data)
            .map(|(m, data)| ModalityData { spec: m.clone(), data })
            .collect();
        Ok(Split {
            batch: ModalityBatch::new(modalities, labels)?,
            latents,
        })
    };
    let train = draw(spec.train_size)?;
    let val = draw(spec.val_size)?;
    let test = draw(spec.test_size)?;
    Ok(SyntheticData { train, val, test, directions })
}

/// Random unit vector, oriented so its first nonzero component is positive.
fn unit_direction<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        let sign = v.iter().find(|x| **x != 0.0).map_or(1.0, |x| x.signum());
        v.iter_mut().for_each(|x| *x *= sign / norm);
        return v;
    }
}
