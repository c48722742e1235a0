//! Pairwise cross-modal attention baseline.
//!
//! Every ordered pair `(i, j)`, `i ≠ j`, owns a dedicated stack of
//! cross-attention layers in which modality `i` queries modality `j`. The
//! `n(n-1)` pooled outputs are concatenated and regressed by a widened
//! head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::ModalityBatch;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::{project_all, FusionModel, GrfConfig};
use crate::nn::{pool, CrossAttnLayer, Linear, PredictionHead};
use crate::param::ParamStore;

#[derive(Clone, Debug)]
pub struct PairStack {
    /// Position in fusion order of the querying modality.
    pub target: usize,
    /// Position in fusion order of the attended modality.
    pub source: usize,
    pub layers: Vec<CrossAttnLayer>,
}

#[derive(Clone, Debug)]
pub struct PairwiseModel {
    config: GrfConfig,
    params: ParamStore,
    pub projections: Vec<Linear>,
    pub stacks: Vec<PairStack>,
    pub head: PredictionHead,
}

impl PairwiseModel {
    pub fn new(config: GrfConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let n = config.n_modalities();
        if n < 2 {
            return Err(Error::Config("the pairwise baseline needs at least two modalities".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let projections = config
            .modalities
            .iter()
            .map(|m| Linear::new(&mut params, &format!("proj.{}", m.name), m.dim, config.d_model, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let order = config.fusion_order.clone();
        let mut stacks = Vec::with_capacity(n * (n - 1));
        for (target, t_name) in order.iter().enumerate() {
            for (source, s_name) in order.iter().enumerate() {
                if target == source {
                    continue;
                }
                let layers = (1..=config.layers)
                    .map(|l| {
                        CrossAttnLayer::new(
                            &mut params,
                            &format!("pair.{t_name}_{s_name}.layer{l}"),
                            config.d_model,
                            config.heads,
                            config.d_ff,
                            config.dropout,
                            &mut rng,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                stacks.push(PairStack { target, source, layers });
            }
        }
        let head = PredictionHead::new(
            &mut params,
            "head",
            n * (n - 1) * config.d_model,
            config.d_model / 2,
            &mut rng,
        )?;
        Ok(PairwiseModel {
            config,
            params,
            projections,
            stacks,
            head,
        })
    }
}

impl FusionModel for PairwiseModel {
    fn config(&self) -> &GrfConfig {
        &self.config
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn forward(&self, g: &mut Graph, batch: &ModalityBatch) -> Result<Var> {
        let projected = project_all(g, &self.params, &self.config, &self.projections, batch)?;
        let mut pooled = Vec::with_capacity(self.stacks.len());
        for stack in &self.stacks {
            let source = projected[stack.source];
            let mut x = projected[stack.target];
            for layer in &stack.layers {
                x = layer.forward(g, &self.params, x, source)?.output;
            }
            pooled.push(pool(g, x)?);
        }
        let joint = g.concat(&pooled)?;
        self.head.forward(g, &self.params, joint)
    }
}
