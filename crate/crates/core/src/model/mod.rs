//! Fusion models: the recurrent gated pipeline and the pairwise baseline.

mod config;
mod grf;
mod pairwise;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use config::{parse_order, GrfConfig, ModalitySpec};
pub use grf::{
    FusionBlock, FusionStep, FusionTrace, GatedFusionUnit, GfuOutput, GrfForward, GrfModel, LayerAttention,
};
pub use pairwise::{PairStack, PairwiseModel};

use crate::data::ModalityBatch;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{project_modality, Linear};
use crate::param::ParamStore;

/// A trainable regression model over multimodal batches.
pub trait FusionModel {
    fn config(&self) -> &GrfConfig;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Records the forward pass on `g`; returns predictions of shape `[B]`.
    fn forward(&self, g: &mut Graph, batch: &ModalityBatch) -> Result<Var>;

    /// Inference without gradients.
    fn predict(&self, batch: &ModalityBatch) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, batch)?;
        Ok(g.value(out).data().to_vec())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Grf,
    Pairwise,
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grf" => Ok(Arch::Grf),
            "pairwise" => Ok(Arch::Pairwise),
            other => Err(Error::Config(format!("unknown model `{other}` (grf|pairwise)"))),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arch::Grf => "grf",
            Arch::Pairwise => "pairwise",
        })
    }
}

/// Either architecture behind one type.
#[derive(Clone, Debug)]
pub enum Model {
    Grf(GrfModel),
    Pairwise(PairwiseModel),
}

impl Model {
    pub fn new(arch: Arch, config: GrfConfig, seed: u64) -> Result<Self> {
        Ok(match arch {
            Arch::Grf => Model::Grf(GrfModel::new(config, seed)?),
            Arch::Pairwise => Model::Pairwise(PairwiseModel::new(config, seed)?),
        })
    }

    pub fn arch(&self) -> Arch {
        match self {
            Model::Grf(_) => Arch::Grf,
            Model::Pairwise(_) => Arch::Pairwise,
        }
    }

    fn inner(&self) -> &dyn FusionModel {
        match self {
            Model::Grf(m) => m,
            Model::Pairwise(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn FusionModel {
        match self {
            Model::Grf(m) => m,
            Model::Pairwise(m) => m,
        }
    }
}

impl FusionModel for Model {
    fn config(&self) -> &GrfConfig {
        self.inner().config()
    }

    fn params(&self) -> &ParamStore {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self.inner_mut().params_mut()
    }

    fn forward(&self, g: &mut Graph, batch: &ModalityBatch) -> Result<Var> {
        self.inner().forward(g, batch)
    }
}

/// Exact parameter count, grouped by the first segment of each name
/// (`proj`, `fusion`, `pair`, `head`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub components: BTreeMap<String, usize>,
}

impl ParamCount {
    pub fn component(&self, name: &str) -> usize {
        self.components.get(name).copied().unwrap_or(0)
    }
}

pub fn count_parameters(model: &impl FusionModel) -> ParamCount {
    let mut components = BTreeMap::new();
    for p in model.params().iter() {
        let group = p.name.split('.').next().unwrap_or_default().to_string();
        *components.entry(group).or_insert(0) += p.value.numel();
    }
    ParamCount {
        total: components.values().sum(),
        components,
    }
}

/// Projects every modality; the result follows fusion order.
pub(crate) fn project_all(
    g: &mut Graph,
    store: &ParamStore,
    config: &GrfConfig,
    projections: &[Linear],
    batch: &ModalityBatch,
) -> Result<Vec<Var>> {
    config
        .ordered()?
        .into_iter()
        .map(|spec| {
            let idx = config
                .modalities
                .iter()
                .position(|m| m.name == spec.name)
                .expect("ordered modality is declared");
            let x = g.input(batch.tensor(spec)?);
            project_modality(g, store, x, &projections[idx])
        })
        .collect()
}
