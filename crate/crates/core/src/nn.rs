//! Layers shared by the recurrent fusion model and the pairwise baseline.
//!
//! Every layer is a plain struct of [`ParamId`]s. Forward passes read the
//! parameter values from a [`ParamStore`] onto a [`Graph`], so the same
//! layer can be evaluated any number of times on one tape.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Sinusoidal table: `PE[t, 2j] = sin(t / 10000^(2j/d))`,
/// `PE[t, 2j+1] = cos(t / 10000^(2j/d))`.
pub fn positional_encoding(len: usize, d_model: usize) -> Result<Tensor> {
    if len == 0 {
        return Err(Error::Config("positional encoding needs length >= 1".into()));
    }
    if d_model == 0 || d_model % 2 != 0 {
        return Err(Error::Config(format!(
            "positional encoding needs an even width, got {d_model}"
        )));
    }
    let mut data = Vec::with_capacity(len * d_model);
    for t in 0..len {
        for j in 0..d_model / 2 {
            let angle = t as f64 / 10000f64.powf((2 * j) as f64 / d_model as f64);
            data.push(angle.sin());
            data.push(angle.cos());
        }
    }
    Tensor::new(vec![len, d_model], data)
}

/// Affine map `x · W + b` over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add_glorot(format!("{name}.weight"), d_in, d_out, rng)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[d_out]))?;
        Ok(Linear { weight, bias, d_in, d_out })
    }

    pub fn param_count(d_in: usize, d_out: usize) -> usize {
        d_in * d_out + d_out
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, w)?;
        g.add(xw, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[d], 1.0))?;
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[d]))?;
        Ok(LayerNorm { gamma, beta })
    }

    pub fn param_count(d: usize) -> usize {
        2 * d
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
    }
}

/// `M = X·W + b + PE(T, d_model)` for a batch `X` of shape `[B, T, d_in]`.
pub fn project_modality(g: &mut Graph, store: &ParamStore, x: Var, layer: &Linear) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 || shape[2] != layer.d_in {
        return Err(Error::dim("project_modality", &shape, &[layer.d_in, layer.d_out]));
    }
    let projected = layer.forward(g, store, x)?;
    let pe = g.input(positional_encoding(shape[1], layer.d_out)?);
    g.add(projected, pe)
}

/// Mean over the time axis: `[B, T, d] -> [B, d]`.
pub fn pool(g: &mut Graph, x: Var) -> Result<Var> {
    let shape = g.shape(x);
    if shape.len() != 3 {
        return Err(Error::Shape {
            shape: shape.to_vec(),
            reason: "pool expects [batch, time, width]".into(),
        });
    }
    g.mean(x, 1)
}

/// Multi-head scaled dot-product attention with input and output
/// projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

/// Result of one attention evaluation.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    pub output: Var,
    /// Attention weights, `[B, H, Tq, Tk]`.
    pub weights: Var,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::Config(format!(
                "d_model {d_model} is not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(store, &format!("{name}.q"), d_model, d_model, rng)?,
            key: Linear::new(store, &format!("{name}.k"), d_model, d_model, rng)?,
            value: Linear::new(store, &format!("{name}.v"), d_model, d_model, rng)?,
            output: Linear::new(store, &format!("{name}.o"), d_model, d_model, rng)?,
            heads,
        })
    }

    pub fn param_count(d_model: usize) -> usize {
        4 * Linear::param_count(d_model, d_model)
    }

    /// `q: [B, Tq, d]`, `kv: [B, Tk, d]` -> `[B, Tq, d]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, q: Var, kv: Var) -> Result<Attended> {
        self.forward_kv(g, store, q, kv, kv)
    }

    pub fn forward_kv(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q: Var,
        k: Var,
        v: Var,
    ) -> Result<Attended> {
        let (sq, sk, sv) = (g.shape(q).to_vec(), g.shape(k).to_vec(), g.shape(v).to_vec());
        let d = self.query.d_in;
        if sq.len() != 3 || sq[2] != d {
            return Err(Error::dim("attention query", &sq, &[d]));
        }
        if sk.len() != 3 || sv.len() != 3 || sk[2] != d || sv[2] != d {
            return Err(Error::dim("attention key/value width", &sk, &sv));
        }
        if sk[1] != sv[1] || sk[0] != sv[0] || sk[0] != sq[0] {
            return Err(Error::dim("attention key/value length", &sk, &sv));
        }
        let (batch, tq, tk, h) = (sq[0], sq[1], sk[1], self.heads);
        let dh = d / h;

        let qp = self.query.forward(g, store, q)?;
        let kp = self.key.forward(g, store, k)?;
        let vp = self.value.forward(g, store, v)?;

        let qh = g.reshape(qp, &[batch, tq, h, dh])?;
        let qh = g.permute(qh, &[0, 2, 1, 3])?;
        let kh = g.reshape(kp, &[batch, tk, h, dh])?;
        let kt = g.permute(kh, &[0, 2, 3, 1])?;
        let vh = g.reshape(vp, &[batch, tk, h, dh])?;
        let vh = g.permute(vh, &[0, 2, 1, 3])?;

        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let weights = g.softmax(scores, 3)?;
        let mixed = g.matmul(weights, vh)?;
        let mixed = g.permute(mixed, &[0, 2, 1, 3])?;
        let merged = g.reshape(mixed, &[batch, tq, d])?;
        let output = self.output.forward(g, store, merged)?;
        Ok(Attended { output, weights })
    }
}

/// Decoder-style cross-attention layer (post-norm):
/// `x = LN(q + CrossAttn(q, ctx, ctx))`, `out = LN(x + FFN(x))`.
#[derive(Clone, Debug)]
pub struct CrossAttnLayer {
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: LayerNorm,
    pub dropout: f64,
}

impl CrossAttnLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        d_ff: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(CrossAttnLayer {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d_model, heads, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.ln1"), d_model)?,
            ff1: Linear::new(store, &format!("{name}.ff1"), d_model, d_ff, rng)?,
            ff2: Linear::new(store, &format!("{name}.ff2"), d_ff, d_model, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.ln2"), d_model)?,
            dropout,
        })
    }

    pub fn param_count(d_model: usize, d_ff: usize) -> usize {
        MultiHeadAttention::param_count(d_model)
            + Linear::param_count(d_model, d_ff)
            + Linear::param_count(d_ff, d_model)
            + 2 * LayerNorm::param_count(d_model)
    }

    /// Output has the shape of `query`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, query: Var, context: Var) -> Result<Attended> {
        let (sq, sc) = (g.shape(query).to_vec(), g.shape(context).to_vec());
        if sq.len() != 3 || sc.len() != 3 || sq[2] != sc[2] || sq[0] != sc[0] {
            return Err(Error::dim("cross_attn_layer", &sq, &sc));
        }
        let attended = self.attn.forward(g, store, query, context)?;
        let a = g.dropout(attended.output, self.dropout);
        let x = g.add(query, a)?;
        let x = self.norm1.forward(g, store, x)?;

        let f = self.ff1.forward(g, store, x)?;
        let f = g.relu(f);
        let f = self.ff2.forward(g, store, f)?;
        let f = g.dropout(f, self.dropout);
        let y = g.add(x, f)?;
        let output = self.norm2.forward(g, store, y)?;
        Ok(Attended {
            output,
            weights: attended.weights,
        })
    }
}

/// Two-layer regression head `d_in -> hidden -> 1` with tanh.
#[derive(Clone, Debug)]
pub struct PredictionHead {
    pub hidden: Linear,
    pub out: Linear,
}

impl PredictionHead {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(PredictionHead {
            hidden: Linear::new(store, &format!("{name}.hidden"), d_in, hidden, rng)?,
            out: Linear::new(store, &format!("{name}.out"), hidden, 1, rng)?,
        })
    }

    pub fn param_count(d_in: usize, hidden: usize) -> usize {
        Linear::param_count(d_in, hidden) + Linear::param_count(hidden, 1)
    }

    /// `[B, d_in] -> [B]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, h: Var) -> Result<Var> {
        let shape = g.shape(h).to_vec();
        if shape.len() != 2 || shape[1] != self.hidden.d_in {
            return Err(Error::dim("prediction_head", &shape, &[self.hidden.d_in]));
        }
        let z = self.hidden.forward(g, store, h)?;
        let z = g.tanh(z);
        let y = self.out.forward(g, store, z)?;
        g.reshape(y, &[shape[0]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pe_first_rows() {
        let pe = positional_encoding(2, 6).unwrap();
        assert_eq!(&pe.data()[..6], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!((pe.data()[6] - 1f64.sin()).abs() < 1e-15);
        assert!((pe.data()[6] - 0.84147).abs() < 1e-5);
    }

    #[test]
    fn pe_rejects_odd_width() {
        assert!(matches!(positional_encoding(3, 5), Err(Error::Config(_))));
    }

    #[test]
    fn pe_is_deterministic() {
        let a = positional_encoding(7, 10).unwrap();
        let b = positional_encoding(7, 10).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn attention_rejects_bad_heads() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(MultiHeadAttention::new(&mut store, "a", 6, 4, &mut rng).is_err());
    }

    #[test]
    fn kv_length_mismatch_is_dimension_error() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mha = MultiHeadAttention::new(&mut store, "a", 4, 2, &mut rng).unwrap();
        let mut g = Graph::new();
        let q = g.input(Tensor::zeros(&[1, 2, 4]));
        let k = g.input(Tensor::zeros(&[1, 3, 4]));
        let v = g.input(Tensor::zeros(&[1, 2, 4]));
        assert!(matches!(
            mha.forward_kv(&mut g, &store, q, k, v),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn project_checks_input_width() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::new(&mut store, "p", 3, 4, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 2, 5]));
        assert!(matches!(
            project_modality(&mut g, &store, x, &lin),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn layer_param_counts_match_store() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        CrossAttnLayer::new(&mut store, "l", 8, 2, 32, 0.1, &mut rng).unwrap();
        assert_eq!(store.numel(), CrossAttnLayer::param_count(8, 32));
        let before = store.numel();
        PredictionHead::new(&mut store, "h", 8, 4, &mut rng).unwrap();
        assert_eq!(store.numel() - before, PredictionHead::param_count(8, 4));
    }
}
