//! Closed-form parameter and multiply-accumulate counts.
//!
//! FLOPs here are multiply-accumulates of matrix products only, for one
//! forward pass at batch size 1. Softmax, layer norm and elementwise work
//! are excluded. Every term below mirrors one `matmul` the models issue,
//! so the formulas are checked exactly against the tape's MAC counter.
//!
//! Cross-attention layer with `Tq` queries over `Tk` keys, width `d`,
//! feed-forward width `f`:
//!
//! ```text
//! Q projection        Tq·d·d
//! K, V projections    2·Tk·d·d
//! scores, mixing      2·Tq·Tk·d      (summed over heads)
//! output projection   Tq·d·d
//! feed-forward        2·Tq·d·f
//! ```
//!
//! Recurrent model, per fusion step with modality length `T`: the context
//! stream has one query over `T` keys and the modality stream has `T`
//! queries over a single key, so
//!
//! ```text
//! step = L·[(2d² + 2Td² + 2Td + 2df) + (2Td² + 2d² + 2Td + 2Tdf)] + 4d²
//! ```
//!
//! which is linear in `T`: the quadratic `T²·d` score term never appears
//! because one side of every attention is a singleton. Summed over the
//! `n − 1` steps the fusion cost is `(n − 1)·step`.
//!
//! Pairwise baseline: each of the `n(n − 1)` ordered pairs runs `L` layers
//! with `Tq = T_i`, `Tk = T_j`, giving `4Td² + 2T²d + 2Tdf` per layer for
//! equal lengths, and its head consumes `n(n − 1)·d` features.

use crate::model::{Arch, GatedFusionUnit, GrfConfig};
use crate::nn::{CrossAttnLayer, Linear, PredictionHead};

fn head_hidden(config: &GrfConfig) -> usize {
    config.d_model / 2
}

fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1)
}

/// Parameters of all modality projections.
pub fn projection_params(config: &GrfConfig) -> usize {
    config
        .modalities
        .iter()
        .map(|m| Linear::param_count(m.dim, config.d_model))
        .sum()
}

/// Parameters of the shared recurrent fusion block; independent of `n`.
pub fn fusion_block_params(config: &GrfConfig) -> usize {
    let layer = CrossAttnLayer::param_count(config.d_model, config.d_ff);
    let per_layer = if config.tie_directions { layer } else { 2 * layer };
    config.layers * per_layer + GatedFusionUnit::param_count(config.d_model)
}

pub fn closed_form_params(arch: Arch, config: &GrfConfig) -> usize {
    let d = config.d_model;
    let n = config.n_modalities();
    match arch {
        Arch::Grf => {
            projection_params(config)
                + fusion_block_params(config)
                + PredictionHead::param_count(d, head_hidden(config))
        }
        Arch::Pairwise => {
            projection_params(config)
                + pair_count(n) * config.layers * CrossAttnLayer::param_count(d, config.d_ff)
                + PredictionHead::param_count(pair_count(n) * d, head_hidden(config))
        }
    }
}

/// MACs of one cross-attention layer with `tq` queries over `tk` keys.
pub fn cross_attn_layer_macs(tq: usize, tk: usize, d: usize, d_ff: usize) -> u64 {
    let (tq, tk, d, f) = (tq as u64, tk as u64, d as u64, d_ff as u64);
    tq * d * d + 2 * tk * d * d + 2 * tq * tk * d + tq * d * d + 2 * tq * d * f
}

fn head_macs(d_in: usize, hidden: usize) -> u64 {
    (d_in * hidden + hidden) as u64
}

/// MACs of one recurrent fusion step against a modality of length `t`.
pub fn fusion_step_macs(config: &GrfConfig, t: usize) -> u64 {
    let (d, f) = (config.d_model, config.d_ff);
    let per_layer = cross_attn_layer_macs(1, t, d, f) + cross_attn_layer_macs(t, 1, d, f);
    let gfu = 2 * (2 * d * d) as u64;
    config.layers as u64 * per_layer + gfu
}

pub fn projection_macs(config: &GrfConfig) -> u64 {
    config
        .modalities
        .iter()
        .map(|m| (m.seq_len * m.dim * config.d_model) as u64)
        .sum()
}

/// MACs of the fusion stage alone (no projections, no head).
pub fn fusion_macs(arch: Arch, config: &GrfConfig) -> u64 {
    let (d, f, l) = (config.d_model, config.d_ff, config.layers as u64);
    let ordered: Vec<_> = config
        .fusion_order
        .iter()
        .filter_map(|name| config.modality(name))
        .collect();
    match arch {
        Arch::Grf => ordered.iter().skip(1).map(|m| fusion_step_macs(config, m.seq_len)).sum(),
        Arch::Pairwise => {
            let mut total = 0;
            for (i, target) in ordered.iter().enumerate() {
                for (j, source) in ordered.iter().enumerate() {
                    if i != j {
                        total += l * cross_attn_layer_macs(target.seq_len, source.seq_len, d, f);
                    }
                }
            }
            total
        }
    }
}

pub fn closed_form_flops(arch: Arch, config: &GrfConfig) -> u64 {
    let d = config.d_model;
    let n = config.n_modalities();
    let head = match arch {
        Arch::Grf => head_macs(d, head_hidden(config)),
        Arch::Pairwise => head_macs(pair_count(n) * d, head_hidden(config)),
    };
    projection_macs(config) + fusion_macs(arch, config) + head
}
