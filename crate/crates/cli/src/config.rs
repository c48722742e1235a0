//! Flat `key = value` run configuration.
//!
//! Keys are dotted (`model.d_model`, `train.lr_max`, ...). Blank lines and
//! lines starting with `#` are ignored. Every run writes the resolved
//! configuration back in the same format, so an output directory can be
//! replayed with `--config <out>/config.txt`.

use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use grf_core::gradcheck::DEFAULT_STEP;
use grf_core::model::parse_order;
use grf_core::sweep::SweepConfig;
use grf_core::{Arch, GrfConfig, ModalitySpec, SyntheticTaskSpec, TaskMode, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSettings {
    pub arch: Arch,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub tie_directions: bool,
    /// Modalities the model consumes; empty means all data modalities.
    pub modalities: Vec<String>,
    /// Fusion order; empty means the order of `modalities`.
    pub order: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckSettings {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub seq_len: usize,
    pub batch: usize,
    pub eps: f64,
    pub tolerance: f64,
}

/// Largest width the finite-difference check accepts.
pub const GRADCHECK_MAX_WIDTH: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSettings,
    pub data: SyntheticTaskSpec,
    pub train: TrainConfig,
    pub bench: SweepConfig,
    pub gradcheck: GradcheckSettings,
    pub out: PathBuf,
    /// Defaults to `<out>/checkpoint.txt`; echoed empty when unset.
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: ModelSettings {
                arch: Arch::Grf,
                d_model: 16,
                layers: 2,
                heads: 4,
                d_ff: 64,
                dropout: 0.1,
                tie_directions: false,
                modalities: Vec::new(),
                order: Vec::new(),
            },
            data: SyntheticTaskSpec {
                modalities: vec![
                    ModalitySpec::new("T", 4, 8),
                    ModalitySpec::new("A", 4, 6),
                    ModalitySpec::new("V", 4, 4),
                ],
                noise_std: 0.1,
                mode: TaskMode::Parity,
                train_size: 2000,
                val_size: 500,
                test_size: 500,
            },
            train: TrainConfig::default(),
            bench: SweepConfig::default(),
            gradcheck: GradcheckSettings {
                d_model: 8,
                layers: 1,
                heads: 2,
                seq_len: 3,
                batch: 2,
                eps: DEFAULT_STEP,
                tolerance: 1e-4,
            },
            out: PathBuf::from("out"),
            checkpoint: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| format!("invalid value `{value}` for `{key}`: {e}"))
}

fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn parse_modalities(value: &str) -> Result<Vec<ModalitySpec>, String> {
    list(value)
        .iter()
        .map(|item| {
            let parts: Vec<&str> = item.split(':').collect();
            match parts.as_slice() {
                [name, t, d] => Ok(ModalitySpec::new(
                    *name,
                    parse("data.modalities", t)?,
                    parse("data.modalities", d)?,
                )),
                _ => Err(format!("modality `{item}` is not NAME:SEQ_LEN:DIM")),
            }
        })
        .collect()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "paths.out" => self.out = PathBuf::from(v),
            "paths.checkpoint" => self.checkpoint = (!v.is_empty()).then(|| PathBuf::from(v)),

            "model.arch" => self.model.arch = parse(key, v)?,
            "model.d_model" => self.model.d_model = parse(key, v)?,
            "model.layers" => self.model.layers = parse(key, v)?,
            "model.heads" => self.model.heads = parse(key, v)?,
            "model.d_ff" => self.model.d_ff = parse(key, v)?,
            "model.dropout" => self.model.dropout = parse(key, v)?,
            "model.tie_directions" => self.model.tie_directions = parse(key, v)?,
            "model.modalities" => self.model.modalities = list(v),
            "model.order" => self.model.order = list(v),

            "data.modalities" => self.data.modalities = parse_modalities(v)?,
            "data.mode" => self.data.mode = parse(key, v)?,
            "data.noise_std" => self.data.noise_std = parse(key, v)?,
            "data.train_size" => self.data.train_size = parse(key, v)?,
            "data.val_size" => self.data.val_size = parse(key, v)?,
            "data.test_size" => self.data.test_size = parse(key, v)?,

            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.patience" => self.train.patience = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.weight_decay" => self.train.weight_decay = parse(key, v)?,
            "train.clip_norm" => self.train.clip_norm = parse(key, v)?,
            "train.lr_max" => self.train.lr_max = parse(key, v)?,
            "train.lr_min" => self.train.lr_min = parse(key, v)?,
            "train.beta1" => self.train.beta1 = parse(key, v)?,
            "train.beta2" => self.train.beta2 = parse(key, v)?,
            "train.eps" => self.train.eps = parse(key, v)?,

            "bench.n_min" => self.bench.n_min = parse(key, v)?,
            "bench.n_max" => self.bench.n_max = parse(key, v)?,
            "bench.seq_len" => self.bench.seq_len = parse(key, v)?,
            "bench.input_dim" => self.bench.input_dim = parse(key, v)?,
            "bench.d_model" => self.bench.d_model = parse(key, v)?,
            "bench.layers" => self.bench.layers = parse(key, v)?,
            "bench.heads" => self.bench.heads = parse(key, v)?,
            "bench.d_ff" => self.bench.d_ff = parse(key, v)?,
            "bench.reps" => self.bench.reps = parse(key, v)?,
            "bench.warmups" => self.bench.warmups = parse(key, v)?,

            "gradcheck.d_model" => self.gradcheck.d_model = parse(key, v)?,
            "gradcheck.layers" => self.gradcheck.layers = parse(key, v)?,
            "gradcheck.heads" => self.gradcheck.heads = parse(key, v)?,
            "gradcheck.seq_len" => self.gradcheck.seq_len = parse(key, v)?,
            "gradcheck.batch" => self.gradcheck.batch = parse(key, v)?,
            "gradcheck.eps" => self.gradcheck.eps = parse(key, v)?,
            "gradcheck.tolerance" => self.gradcheck.tolerance = parse(key, v)?,

            _ => return Err(format!("unknown configuration key `{key}`")),
        }
        Ok(())
    }

    /// Applies a `key = value` document on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(format!("line {}: duplicate key `{key}`", i + 1));
            }
            self.set(key, value).map_err(|e| format!("line {}: {e}", i + 1))?;
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let d = &self.data;
        let t = &self.train;
        let b = &self.bench;
        let g = &self.gradcheck;
        let modalities: Vec<String> = d
            .modalities
            .iter()
            .map(|s| format!("{}:{}:{}", s.name, s.seq_len, s.dim))
            .collect();
        vec![
            ("seed", self.seed.to_string()),
            ("paths.out", self.out.display().to_string()),
            (
                "paths.checkpoint",
                self.checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
            ("model.arch", m.arch.to_string()),
            ("model.d_model", m.d_model.to_string()),
            ("model.layers", m.layers.to_string()),
            ("model.heads", m.heads.to_string()),
            ("model.d_ff", m.d_ff.to_string()),
            ("model.dropout", m.dropout.to_string()),
            ("model.tie_directions", m.tie_directions.to_string()),
            ("model.modalities", self.model_modalities().join(",")),
            ("model.order", self.fusion_order().join(",")),
            ("data.modalities", modalities.join(",")),
            ("data.mode", d.mode.to_string()),
            ("data.noise_std", d.noise_std.to_string()),
            ("data.train_size", d.train_size.to_string()),
            ("data.val_size", d.val_size.to_string()),
            ("data.test_size", d.test_size.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.patience", t.patience.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.weight_decay", t.weight_decay.to_string()),
            ("train.clip_norm", t.clip_norm.to_string()),
            ("train.lr_max", t.lr_max.to_string()),
            ("train.lr_min", t.lr_min.to_string()),
            ("train.beta1", t.beta1.to_string()),
            ("train.beta2", t.beta2.to_string()),
            ("train.eps", t.eps.to_string()),
            ("bench.n_min", b.n_min.to_string()),
            ("bench.n_max", b.n_max.to_string()),
            ("bench.seq_len", b.seq_len.to_string()),
            ("bench.input_dim", b.input_dim.to_string()),
            ("bench.d_model", b.d_model.to_string()),
            ("bench.layers", b.layers.to_string()),
            ("bench.heads", b.heads.to_string()),
            ("bench.d_ff", b.d_ff.to_string()),
            ("bench.reps", b.reps.to_string()),
            ("bench.warmups", b.warmups.to_string()),
            ("gradcheck.d_model", g.d_model.to_string()),
            ("gradcheck.layers", g.layers.to_string()),
            ("gradcheck.heads", g.heads.to_string()),
            ("gradcheck.seq_len", g.seq_len.to_string()),
            ("gradcheck.batch", g.batch.to_string()),
            ("gradcheck.eps", g.eps.to_string()),
            ("gradcheck.tolerance", g.tolerance.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join("checkpoint.txt"))
    }

    pub fn model_modalities(&self) -> Vec<String> {
        if self.model.modalities.is_empty() {
            self.data.modalities.iter().map(|m| m.name.clone()).collect()
        } else {
            self.model.modalities.clone()
        }
    }

    pub fn fusion_order(&self) -> Vec<String> {
        if self.model.order.is_empty() {
            self.model_modalities()
        } else {
            self.model.order.clone()
        }
    }

    /// Model configuration over `specs`, which must cover the model's
    /// modalities.
    fn build_model_config(&self, specs: &[ModalitySpec], d_model: usize) -> Result<GrfConfig, String> {
        let names = self.model_modalities();
        let mut chosen = Vec::with_capacity(names.len());
        for name in &names {
            let spec = specs
                .iter()
                .find(|s| &s.name == name)
                .ok_or_else(|| format!("model modality `{name}` is not declared in data.modalities"))?;
            chosen.push(spec.clone());
        }
        let mut config = GrfConfig::new(chosen, d_model);
        config.layers = self.model.layers;
        config.heads = self.model.heads;
        config.d_ff = self.model.d_ff;
        config.dropout = self.model.dropout;
        config.tie_directions = self.model.tie_directions;
        config.fusion_order = parse_order(&self.fusion_order().join(","), &names).map_err(|e| e.to_string())?;
        config.validate().map_err(|e| e.to_string())?;
        Ok(config)
    }

    pub fn model_config(&self) -> Result<GrfConfig, String> {
        self.build_model_config(&self.data.modalities, self.model.d_model)
    }

    /// The shrunken configuration used by `gradcheck`.
    pub fn gradcheck_config(&self) -> Result<(GrfConfig, SyntheticTaskSpec), String> {
        let g = &self.gradcheck;
        if g.d_model > GRADCHECK_MAX_WIDTH {
            return Err(format!(
                "gradcheck.d_model = {} exceeds the tiny-config limit of {GRADCHECK_MAX_WIDTH}",
                g.d_model
            ));
        }
        if g.batch == 0 || g.seq_len == 0 {
            return Err("gradcheck.batch and gradcheck.seq_len must be positive".into());
        }
        let specs: Vec<ModalitySpec> = self
            .data
            .modalities
            .iter()
            .map(|m| ModalitySpec::new(m.name.clone(), g.seq_len, m.dim))
            .collect();
        let mut config = self.build_model_config(&specs, g.d_model)?;
        config.layers = g.layers;
        config.heads = g.heads;
        config.d_ff = 2 * g.d_model;
        config.dropout = 0.0;
        config.validate().map_err(|e| e.to_string())?;
        let task = SyntheticTaskSpec {
            modalities: specs,
            train_size: g.batch,
            val_size: 0,
            test_size: 0,
            ..self.data.clone()
        };
        Ok((config, task))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            seed: self.seed,
            ..self.bench.clone()
        }
    }
}
