//! The gated recurrent fusion pipeline.
//!
//! ```text
//! h_1 = pool(M_1)
//! h_k = F(h_{k-1}, M_k)           k = 2..n
//! y   = head(h_n)
//! ```
//!
//! `F` is one shared [`FusionBlock`]: a stack of paired cross-attention
//! layers in which the length-1 context stream and the modality stream
//! query each other, followed by a [`GatedFusionUnit`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::ModalityBatch;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::{project_all, FusionModel, GrfConfig};
use crate::nn::{pool, CrossAttnLayer, Linear, PredictionHead};
use crate::param::ParamStore;
use crate::tensor::Tensor;

/// GRU-style gate blending the old context with a candidate state:
///
/// ```text
/// z  = σ(W_z [s'; m'] + b_z)
/// h~ = tanh(W_h [s'; m'] + b_h)
/// h  = (1 - z) ⊙ s' + z ⊙ h~
/// ```
#[derive(Clone, Debug)]
pub struct GatedFusionUnit {
    pub update: Linear,
    pub candidate: Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct GfuOutput {
    pub state: Var,
    pub gate: Var,
    pub candidate: Var,
}

impl GatedFusionUnit {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d_model: usize, rng: &mut R) -> Result<Self> {
        Ok(GatedFusionUnit {
            update: Linear::new(store, &format!("{name}.z"), 2 * d_model, d_model, rng)?,
            candidate: Linear::new(store, &format!("{name}.h"), 2 * d_model, d_model, rng)?,
        })
    }

    pub fn param_count(d_model: usize) -> usize {
        2 * Linear::param_count(2 * d_model, d_model)
    }

    /// `s_prime`, `m_prime`: `[B, d_model]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, s_prime: Var, m_prime: Var) -> Result<GfuOutput> {
        let d = self.update.d_out;
        let (ss, sm) = (g.shape(s_prime).to_vec(), g.shape(m_prime).to_vec());
        if ss.len() != 2 || ss != sm || ss[1] != d {
            return Err(Error::dim("gated_fusion_unit", &ss, &sm));
        }
        let joint = g.concat(&[s_prime, m_prime])?;
        let z = self.update.forward(g, store, joint)?;
        let gate = g.sigmoid(z);
        let c = self.candidate.forward(g, store, joint)?;
        let candidate = g.tanh(c);
        let keep = g.affine(gate, -1.0, 1.0);
        let kept = g.mul(keep, s_prime)?;
        let written = g.mul(gate, candidate)?;
        let state = g.add(kept, written)?;
        Ok(GfuOutput { state, gate, candidate })
    }
}

/// Attention weights of one symmetric layer.
#[derive(Clone, Debug)]
pub struct LayerAttention {
    /// Context querying the modality: `[B, H, 1, T]`.
    pub context_to_modality: Tensor,
    /// Modality querying the context: `[B, H, T, 1]`.
    pub modality_to_context: Tensor,
}

/// Output of one application of the fusion block.
#[derive(Clone, Debug)]
pub struct FusionStep {
    pub state: Var,
    pub s_prime: Var,
    pub m_prime: Var,
    pub gate: Var,
    pub attention: Option<Vec<LayerAttention>>,
}

/// The cross-modal fusion block, shared by every recurrent step.
#[derive(Clone, Debug)]
pub struct FusionBlock {
    /// `layers[l] = (context queries modality, modality queries context)`.
    /// With tied directions both entries hold the same parameters.
    pub layers: Vec<(CrossAttnLayer, CrossAttnLayer)>,
    pub gfu: GatedFusionUnit,
}

impl FusionBlock {
    pub fn new<R: Rng>(store: &mut ParamStore, config: &GrfConfig, rng: &mut R) -> Result<Self> {
        let mut layers = Vec::with_capacity(config.layers);
        let (d, h, ff, p) = (config.d_model, config.heads, config.d_ff, config.dropout);
        for l in 1..=config.layers {
            if config.tie_directions {
                let shared = CrossAttnLayer::new(store, &format!("fusion.layer{l}.tied"), d, h, ff, p, rng)?;
                layers.push((shared.clone(), shared));
            } else {
                let ctx = CrossAttnLayer::new(store, &format!("fusion.layer{l}.ctx"), d, h, ff, p, rng)?;
                let modal = CrossAttnLayer::new(store, &format!("fusion.layer{l}.mod"), d, h, ff, p, rng)?;
                layers.push((ctx, modal));
            }
        }
        let gfu = GatedFusionUnit::new(store, "fusion.gfu", d, rng)?;
        Ok(FusionBlock { layers, gfu })
    }

    /// `h_prev: [B, d]`, `modality: [B, T, d]` -> `h_k: [B, d]`.
    ///
    /// Both streams of layer `l` read the layer `l-1` value of the other
    /// stream.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        h_prev: Var,
        modality: Var,
        inspect: bool,
    ) -> Result<FusionStep> {
        let (sh, sm) = (g.shape(h_prev).to_vec(), g.shape(modality).to_vec());
        if sh.len() != 2 || sm.len() != 3 || sh[0] != sm[0] || sh[1] != sm[2] {
            return Err(Error::dim("fusion_block", &sh, &sm));
        }
        let (batch, d) = (sh[0], sh[1]);
        let mut context = g.reshape(h_prev, &[batch, 1, d])?;
        let mut stream = modality;
        let mut attention = inspect.then(Vec::new);
        for (ctx_layer, mod_layer) in &self.layers {
            let next_context = ctx_layer.forward(g, store, context, stream)?;
            let next_stream = mod_layer.forward(g, store, stream, context)?;
            if let Some(stats) = attention.as_mut() {
                stats.push(LayerAttention {
                    context_to_modality: g.value(next_context.weights).clone(),
                    modality_to_context: g.value(next_stream.weights).clone(),
                });
            }
            context = next_context.output;
            stream = next_stream.output;
        }
        let s_prime = g.reshape(context, &[batch, d])?;
        let m_prime = pool(g, stream)?;
        let gfu = self.gfu.forward(g, store, s_prime, m_prime)?;
        Ok(FusionStep {
            state: gfu.state,
            s_prime,
            m_prime,
            gate: gfu.gate,
            attention,
        })
    }
}

/// Graph handles produced by [`GrfModel::forward_detailed`].
#[derive(Clone, Debug)]
pub struct GrfForward {
    /// `[B]`.
    pub prediction: Var,
    /// `h_1 .. h_n`, each `[B, d_model]`.
    pub trace: Vec<Var>,
    /// One entry per fusion step `k = 2..n`.
    pub steps: Vec<FusionStep>,
}

/// Context vectors after each fusion stage, one `[B, d_model]` tensor per
/// modality in fusion order.
#[derive(Clone, Debug)]
pub struct FusionTrace {
    pub stages: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct GrfModel {
    config: GrfConfig,
    params: ParamStore,
    /// Projection per modality, in declaration order.
    pub projections: Vec<Linear>,
    pub block: FusionBlock,
    pub head: PredictionHead,
}

impl GrfModel {
    pub fn new(config: GrfConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let projections = config
            .modalities
            .iter()
            .map(|m| Linear::new(&mut params, &format!("proj.{}", m.name), m.dim, config.d_model, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let block = FusionBlock::new(&mut params, &config, &mut rng)?;
        let head = PredictionHead::new(&mut params, "head", config.d_model, config.d_model / 2, &mut rng)?;
        Ok(GrfModel {
            config,
            params,
            projections,
            block,
            head,
        })
    }

    /// Changes the fusion order; parameters are keyed by modality name and
    /// stay untouched.
    pub fn set_order(&mut self, order: &str) -> Result<()> {
        self.config.set_order(order)
    }

    pub fn forward_detailed(&self, g: &mut Graph, batch: &ModalityBatch, inspect: bool) -> Result<GrfForward> {
        let projected = project_all(g, &self.params, &self.config, &self.projections, batch)?;
        let mut h = pool(g, projected[0])?;
        let mut trace = vec![h];
        let mut steps = Vec::with_capacity(projected.len() - 1);
        for &modality in &projected[1..] {
            let step = self.block.forward(g, &self.params, h, modality, inspect)?;
            h = step.state;
            trace.push(h);
            steps.push(step);
        }
        let prediction = self.head.forward(g, &self.params, h)?;
        Ok(GrfForward { prediction, trace, steps })
    }

    /// Runs inference and returns predictions with the stage-wise trace.
    pub fn trace(&self, batch: &ModalityBatch) -> Result<(Vec<f64>, FusionTrace)> {
        let mut g = Graph::new();
        let out = self.forward_detailed(&mut g, batch, false)?;
        let stages = out.trace.iter().map(|&v| g.value(v).clone()).collect();
        Ok((g.value(out.prediction).data().to_vec(), FusionTrace { stages }))
    }
}

impl FusionModel for GrfModel {
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
        Ok(self.forward_detailed(g, batch, false)?.prediction)
    }
}
