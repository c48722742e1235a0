use std::collections::HashSet;

use crate::error::{Error, Result};

/// One input stream: `seq_len` steps of `dim` features.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModalitySpec {
    pub name: String,
    pub seq_len: usize,
    pub dim: usize,
}

impl ModalitySpec {
    pub fn new(name: impl Into<String>, seq_len: usize, dim: usize) -> Self {
        ModalitySpec {
            name: name.into(),
            seq_len,
            dim,
        }
    }
}

/// Architecture hyperparameters shared by the recurrent model and the
/// pairwise baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct GrfConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub modalities: Vec<ModalitySpec>,
    /// Names of `modalities`, in the order they enter the fusion loop.
    pub fusion_order: Vec<String>,
    /// Share one cross-attention layer between both directions.
    pub tie_directions: bool,
}

impl GrfConfig {
    /// Defaults: 2 layers, 4 heads, `d_ff = 4·d_model`, dropout 0.1, fusion
    /// in declaration order.
    pub fn new(modalities: Vec<ModalitySpec>, d_model: usize) -> Self {
        let fusion_order = modalities.iter().map(|m| m.name.clone()).collect();
        GrfConfig {
            d_model,
            layers: 2,
            heads: 4,
            d_ff: 4 * d_model,
            dropout: 0.1,
            modalities,
            fusion_order,
            tie_directions: false,
        }
    }

    /// Text/audio/vision feature widths of the MOSI benchmark (300/74/35)
    /// with `d_model` 64 for the aligned variant and 128 for the unaligned.
    pub fn mosi(aligned: bool, seq_len: usize) -> Self {
        let modalities = vec![
            ModalitySpec::new("T", seq_len, 300),
            ModalitySpec::new("A", seq_len, 74),
            ModalitySpec::new("V", seq_len, 35),
        ];
        GrfConfig::new(modalities, if aligned { 64 } else { 128 })
    }

    pub fn n_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn modality(&self, name: &str) -> Option<&ModalitySpec> {
        self.modalities.iter().find(|m| m.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return cfg(format!("d_model must be even and positive, got {}", self.d_model));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return cfg(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            ));
        }
        if self.layers == 0 {
            return cfg("at least one fusion layer is required".into());
        }
        if self.d_ff == 0 {
            return cfg("d_ff must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return cfg(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.modalities.is_empty() {
            return cfg("at least one modality is required".into());
        }
        let mut names = HashSet::new();
        for m in &self.modalities {
            if m.name.is_empty() || m.name.contains([',', '.', ':']) {
                return cfg(format!("invalid modality name `{}`", m.name));
            }
            if !names.insert(m.name.as_str()) {
                return cfg(format!("duplicate modality `{}`", m.name));
            }
            if m.seq_len == 0 || m.dim == 0 {
                return cfg(format!("modality `{}` needs positive length and width", m.name));
            }
        }
        check_permutation(&self.fusion_order, &self.modality_names())?;
        Ok(())
    }

    pub fn modality_names(&self) -> Vec<String> {
        self.modalities.iter().map(|m| m.name.clone()).collect()
    }

    /// Modalities in fusion order.
    pub fn ordered(&self) -> Result<Vec<&ModalitySpec>> {
        self.fusion_order
            .iter()
            .map(|n| {
                self.modality(n)
                    .ok_or_else(|| Error::Config(format!("unknown modality `{n}` in fusion order")))
            })
            .collect()
    }

    /// Sets the fusion order from a comma-separated list such as `A,V,T`.
    pub fn set_order(&mut self, order: &str) -> Result<()> {
        self.fusion_order = parse_order(order, &self.modality_names())?;
        Ok(())
    }
}

/// Parses `A,V,T` and checks that it is a permutation of `names`.
pub fn parse_order(order: &str, names: &[String]) -> Result<Vec<String>> {
    let parsed: Vec<String> = order.split(',').map(|s| s.trim().to_string()).collect();
    check_permutation(&parsed, names)?;
    Ok(parsed)
}

fn check_permutation(order: &[String], names: &[String]) -> Result<()> {
    let mut sorted_order = order.to_vec();
    let mut sorted_names = names.to_vec();
    sorted_order.sort();
    sorted_names.sort();
    if sorted_order != sorted_names {
        return Err(Error::Config(format!(
            "fusion order `{}` is not a permutation of the modalities {{{}}}",
            order.join(","),
            names.join(",")
        )));
    }
    Ok(())
}
