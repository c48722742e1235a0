//! Gated recurrent multimodal fusion.
//!
//! Modalities are fused one at a time into a running context vector by a
//! single shared block of symmetric cross-attention layers and a gated
//! fusion unit, so fusion cost grows linearly with the number of
//! modalities. A pairwise cross-attention baseline, a synthetic training
//! harness, closed-form cost models and a scaling sweep accompany it.
//!
//! Everything runs on a small define-by-run autodiff engine ([`graph`])
//! over dense `f64` tensors ([`tensor`]).

pub mod cost;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod param;
pub mod probe;
pub mod sweep;
pub mod tensor;
pub mod train;

pub use data::{ModalityBatch, SyntheticTaskSpec, TaskMode};
pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use model::{count_parameters, Arch, FusionModel, GrfConfig, GrfModel, ModalitySpec, Model, PairwiseModel};
pub use param::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
pub use train::{train_loop, TrainConfig, TrainReport};
