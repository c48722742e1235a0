//! Command-line front end: `train`, `gradcheck`, `bench` and `embed`.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage error, 3 I/O error.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use grf_core::data::{generate_synthetic, ModalityBatch};
use grf_core::gradcheck::gradcheck;
use grf_core::metrics::Metrics;
use grf_core::probe::LinearProbe;
use grf_core::sweep::{emit_report, run_sweep};
use grf_core::train::{evaluate, train_loop};
use grf_core::{Arch, FusionModel, GrfModel, Model, Tensor};

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "grf", version, about = "Recurrent multimodal fusion: training, checks and scaling sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Architecture: grf or pairwise.
    #[arg(long)]
    model: Option<Arch>,
    /// Fusion order as a comma-separated list of modality names.
    #[arg(long)]
    order: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on the synthetic task and write the report, checkpoint and test metrics.
    Train(Common),
    /// Compare every parameter gradient with central finite differences.
    Gradcheck(Common),
    /// Sweep the number of modalities for both architectures.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_max: Option<usize>,
    },
    /// Export the context vector after every fusion stage, plus linear-probe accuracies.
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// train, val or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
}

#[derive(Debug)]
enum Failure {
    Check(String),
    Usage(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Check(_) => EXIT_CHECK,
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Io(_) => EXIT_IO,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Check(m) | Failure::Usage(m) | Failure::Io(m) => m,
        }
    }
}

impl From<grf_core::Error> for Failure {
    fn from(e: grf_core::Error) -> Self {
        use grf_core::Error as E;
        match e {
            E::Io(_) | E::Csv(_) | E::Checkpoint(_) => Failure::Io(e.to_string()),
            E::Config(_) | E::Input(_) => Failure::Usage(e.to_string()),
            _ => Failure::Check(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Train(common) => resolve(&common, |_| Ok(())).and_then(|c| cmd_train(&c)),
        Command::Gradcheck(common) => resolve(&common, |_| Ok(())).and_then(|c| cmd_gradcheck(&c)),
        Command::Bench { common, n_max } => resolve(&common, |c| {
            if let Some(n) = n_max {
                c.bench.n_max = n;
            }
            Ok(())
        })
        .and_then(|c| cmd_bench(&c)),
        Command::Embed { common, checkpoint, split } => resolve(&common, |c| {
            if let Some(path) = checkpoint {
                c.checkpoint = Some(path);
            }
            Ok(())
        })
        .and_then(|c| cmd_embed(&c, &split)),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

/// Defaults, then the config file, then `--set`, then dedicated flags.
fn resolve(common: &Common, extra: impl FnOnce(&mut RunConfig) -> Outcome<()>) -> Outcome<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        config
            .apply_text(&text)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    }
    for item in &common.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{item}`")))?;
        config.set(key.trim(), value).map_err(Failure::Usage)?;
    }
    if let Some(arch) = common.model {
        config.model.arch = arch;
    }
    if let Some(order) = &common.order {
        config.set("model.order", order).map_err(Failure::Usage)?;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out = out.clone();
    }
    extra(&mut config)?;
    Ok(config)
}

fn prepare_out(config: &RunConfig) -> Outcome<()> {
    fs::create_dir_all(&config.out).map_err(|e| Failure::Io(format!("{}: {e}", config.out.display())))?;
    write_file(&config.out.join("config.txt"), config.to_text().as_bytes())
}

fn write_file(path: &Path, contents: &[u8]) -> Outcome<()> {
    fs::write(path, contents).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn metrics_row(split: &str, m: &Metrics) -> Vec<String> {
    vec![
        split.to_string(),
        m.mae.to_string(),
        m.corr.map(|c| c.to_string()).unwrap_or_default(),
        m.acc2.to_string(),
        m.acc7.to_string(),
        m.f1.to_string(),
    ]
}

fn cmd_train(config: &RunConfig) -> Outcome<i32> {
    let model_config = config.model_config().map_err(Failure::Usage)?;
    config.train_config().validate()?;
    config.data.validate()?;
    prepare_out(config)?;
    let data = generate_synthetic(&config.data, config.seed)?;
    let mut model = Model::new(config.model.arch, model_config, config.seed)?;
    let report = train_loop(&mut model, &data.train.batch, &data.val.batch, &config.train_config())?;

    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    write_file(&config.out.join("report.csv"), &buf)?;
    let checkpoint = config.checkpoint_path();
    if let Some(parent) = checkpoint.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    model.params().save(&checkpoint)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["split", "mae", "corr", "acc2", "acc7", "f1"])?;
    let mut test = None;
    for (name, split) in [("val", &data.val), ("test", &data.test)] {
        if split.batch.is_empty() {
            eprintln!("warning: {name} split is empty; no metrics written for it");
            continue;
        }
        let m = evaluate(&model, &split.batch)?;
        w.write_record(metrics_row(name, &m))?;
        if name == "test" {
            test = Some(m);
        }
    }
    write_file(&config.out.join("metrics.csv"), &w.into_inner().map_err(|e| Failure::Io(e.to_string()))?)?;

    println!(
        "{} trained for {} epochs (best epoch {}, val MAE {:.4}{})",
        config.model.arch,
        report.stop_epoch,
        report.best_epoch,
        report.best_val_mae,
        if report.early_stopped { ", early stop" } else { "" }
    );
    if let Some(m) = test {
        println!("test: MAE {:.4} Acc2 {:.4} Acc7 {:.4} F1 {:.4}", m.mae, m.acc2, m.acc7, m.f1);
    }
    println!("outputs in {}", config.out.display());
    Ok(EXIT_OK)
}

fn cmd_gradcheck(config: &RunConfig) -> Outcome<i32> {
    let (model_config, task) = config.gradcheck_config().map_err(Failure::Usage)?;
    prepare_out(config)?;
    let batch = generate_synthetic(&task, config.seed)?.train.batch;
    let mut model = Model::new(config.model.arch, model_config, config.seed)?;
    let report = gradcheck(&mut model, &batch, config.gradcheck.eps)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["parameter", "max_rel_error"])?;
    for (name, err) in &report.per_param {
        w.write_record([name.clone(), err.to_string()])?;
    }
    write_file(&config.out.join("gradcheck.csv"), &w.into_inner().map_err(|e| Failure::Io(e.to_string()))?)?;

    let Some(worst) = &report.worst else {
        eprintln!("warning: model has no parameters; gradient check passes vacuously");
        return Ok(EXIT_OK);
    };
    println!(
        "checked {} scalars in {} parameters; worst relative error {:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e})",
        report.checked,
        report.per_param.len(),
        worst.rel_error,
        worst.name,
        worst.index,
        worst.analytic,
        worst.numeric
    );
    if report.passed(config.gradcheck.tolerance) {
        Ok(EXIT_OK)
    } else {
        Err(Failure::Check(format!(
            "gradient check failed: `{}` has relative error {:.3e} >= {:.1e}",
            worst.name, worst.rel_error, config.gradcheck.tolerance
        )))
    }
}

fn cmd_bench(config: &RunConfig) -> Outcome<i32> {
    let sweep = config.sweep_config();
    sweep.validate()?;
    prepare_out(config)?;
    let result = run_sweep(&sweep)?;
    let mut buf = Vec::new();
    emit_report(&result.records, &mut buf)?;
    write_file(&config.out.join("bench.csv"), &buf)?;
    let summary = result.summary();
    write_file(&config.out.join("bench_summary.txt"), summary.as_bytes())?;
    print!("{summary}");
    if let Some((arch, n, closed, counted)) = result.mac_mismatches.first() {
        return Err(Failure::Check(format!(
            "{arch} n={n}: closed-form MACs {closed} differ from instrumented {counted}"
        )));
    }
    Ok(EXIT_OK)
}

/// Stage-wise context vectors of `batch`, one `[len, d]` tensor per stage.
fn stage_embeddings(model: &GrfModel, batch: &ModalityBatch) -> Outcome<Vec<Tensor>> {
    let n = model.config().n_modalities();
    let d = model.config().d_model;
    let mut stages = vec![Vec::with_capacity(batch.len() * d); n];
    for chunk in batch.chunks(256) {
        let (_, trace) = model.trace(&chunk)?;
        for (acc, t) in stages.iter_mut().zip(&trace.stages) {
            acc.extend_from_slice(t.data());
        }
    }
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    stages
        .into_iter()
        .map(|data| Tensor::new(vec![batch.len(), d], data).map_err(Failure::from))
        .collect()
}

fn cmd_embed(config: &RunConfig, split_name: &str) -> Outcome<i32> {
    if config.model.arch != Arch::Grf {
        return Err(Failure::Usage("embed exports the recurrent fusion stages; use --model grf".into()));
    }
    let model_config = config.model_config().map_err(Failure::Usage)?;
    config.data.validate()?;
    let mut model = GrfModel::new(model_config, config.seed)?;
    let checkpoint = config.checkpoint_path();
    if !checkpoint.exists() {
        return Err(Failure::Io(format!("checkpoint {} does not exist", checkpoint.display())));
    }
    model.params_mut().load(&checkpoint)?;
    let data = generate_synthetic(&config.data, config.seed)?;
    let split = data
        .split(split_name)
        .ok_or_else(|| Failure::Usage(format!("unknown split `{split_name}`; expected train, val or test")))?;
    prepare_out(config)?;

    let order = model.config().fusion_order.clone();
    let d = model.config().d_model;
    let stages = stage_embeddings(&model, &split.batch)?;
    if split.batch.is_empty() {
        eprintln!("warning: split `{split_name}` is empty; writing header-only files");
    }
    let mut header = vec!["sample_id".to_string(), "label".to_string()];
    header.extend((0..d).map(|j| format!("h{j}")));
    for k in 0..order.len() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&header)?;
        if let Some(stage) = stages.get(k) {
            for (s, row) in stage.data().chunks(d).enumerate() {
                let mut record = vec![s.to_string(), split.batch.labels()[s].to_string()];
                record.extend(row.iter().map(|v| v.to_string()));
                w.write_record(&record)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Failure::Io(e.to_string()))?;
        write_file(&config.out.join(format!("stage_{}.csv", k + 1)), &bytes)?;
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["stage", "modality", "train_accuracy", "accuracy"])?;
    let fit_stages = stage_embeddings(&model, &data.train.batch)?;
    if !stages.is_empty() && !fit_stages.is_empty() {
        for (k, (fit, eval)) in fit_stages.iter().zip(&stages).enumerate() {
            let probe = LinearProbe::fit(fit, data.train.batch.labels())?;
            let train_acc = probe.accuracy(fit, data.train.batch.labels())?;
            let acc = probe.accuracy(eval, split.batch.labels())?;
            println!("stage {} ({}): probe accuracy {:.4} (train {:.4})", k + 1, order[k], acc, train_acc);
            w.write_record([(k + 1).to_string(), order[k].clone(), train_acc.to_string(), acc.to_string()])?;
        }
    }
    write_file(&config.out.join("probe.csv"), &w.into_inner().map_err(|e| Failure::Io(e.to_string()))?)?;
    println!("wrote {} stage files to {}", order.len(), config.out.display());
    Ok(EXIT_OK)
}
