//! Fixtures shared by the criterion benchmarks.

use grf_core::data::{generate_synthetic, SyntheticTaskSpec, TaskMode};
use grf_core::sweep::SweepConfig;
use grf_core::{Arch, ModalityBatch, Model, Result};

/// A model with `n` modalities at the sweep's default sizes, plus one
/// matching single-sample batch.
pub fn fixture(arch: Arch, n: usize) -> Result<(Model, ModalityBatch)> {
    let sweep = SweepConfig::default();
    let config = sweep.model_config(n);
    let task = SyntheticTaskSpec {
        modalities: config.modalities.clone(),
        noise_std: 0.1,
        mode: TaskMode::Sum,
        train_size: 1,
        val_size: 0,
        test_size: 0,
    };
    let batch = generate_synthetic(&task, 0)?.train.batch;
    Ok((Model::new(arch, config, 0)?, batch))
}
