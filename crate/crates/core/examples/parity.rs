//! Trains the recurrent model on the three-modality parity task and prints
//! per-epoch validation metrics.
//!
//! cargo run --release -p grf-core --example parity -- [d_model] [lr] [noise] [seed]

use std::time::Instant;

use grf_core::data::generate_synthetic;
use grf_core::model::{GrfConfig, GrfModel, ModalitySpec};
use grf_core::train::{evaluate, train_loop, TrainConfig};
use grf_core::{SyntheticTaskSpec, TaskMode};

fn main() -> grf_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let d_model = arg(0, 16.0) as usize;
    let lr = arg(1, 3e-3);
    let noise = arg(2, 0.1);
    let seed = arg(3, 0.0) as u64;

    let modalities = vec![
        ModalitySpec::new("T", 4, 8),
        ModalitySpec::new("A", 4, 6),
        ModalitySpec::new("V", 4, 4),
    ];
    let task = SyntheticTaskSpec {
        modalities: modalities.clone(),
        noise_std: noise,
        mode: TaskMode::Parity,
        train_size: 2000,
        val_size: 500,
        test_size: 500,
    };
    let data = generate_synthetic(&task, seed)?;
    let mut config = GrfConfig::new(modalities, d_model);
    config.layers = 1;
    config.heads = 2;
    config.dropout = 0.0;
    let mut model = GrfModel::new(config, seed)?;
    let train = TrainConfig { lr_max: lr, seed, ..TrainConfig::default() };
    let start = Instant::now();
    let report = train_loop(&mut model, &data.train.batch, &data.val.batch, &train)?;
    for r in &report.epochs {
        println!("{:>3} loss={:.4} val_mae={:.4} acc2={:.3} lr={:.2e}", r.epoch, r.train_loss, r.val_mae, r.val_acc2, r.lr);
    }
    let test = evaluate(&model, &data.test.batch)?;
    println!(
        "best epoch {} stop {} test acc2 {:.3} mae {:.3} in {:.1}s",
        report.best_epoch,
        report.stop_epoch,
        test.acc2,
        test.mae,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
