use std::fs;
use std::path::Path;

use grf_cli::{run, EXIT_CHECK, EXIT_IO, EXIT_OK, EXIT_USAGE};
use grf_core::graph::fault::{inject, Fault};
use grf_core::sweep::read_report;
use grf_core::train::TrainReport;

/// Small enough to train in well under a second.
const QUICK: &[&str] = &[
    "--set", "data.train_size=48",
    "--set", "data.val_size=16",
    "--set", "data.test_size=16",
    "--set", "train.epochs=3",
    "--set", "train.patience=3",
    "--set", "model.d_model=8",
    "--set", "model.d_ff=16",
];

fn grf(cmd: &str, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec!["grf".to_string(), cmd.to_string(), "--out".into(), out.display().to_string()];
    args.extend(extra.iter().map(|s| s.to_string()));
    run(args)
}

fn quick(extra: &[&str]) -> Vec<String> {
    QUICK.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn gradcheck_passes_for_both_architectures() {
    let dir = tempfile::tempdir().unwrap();
    for arch in ["grf", "pairwise"] {
        let out = dir.path().join(arch);
        assert_eq!(grf("gradcheck", &out, &["--model", arch]), EXIT_OK);
        let csv = read(&out.join("gradcheck.csv"));
        assert!(csv.starts_with("parameter,max_rel_error\n"));
        assert!(csv.contains("head.out.bias"));
        assert!(read(&out.join("config.txt")).contains(&format!("model.arch = {arch}")));
    }
}

#[test]
fn corrupted_backward_rules_fail_gradcheck() {
    let dir = tempfile::tempdir().unwrap();
    for fault in [Fault::Tanh, Fault::Sigmoid, Fault::Softmax] {
        inject(Some(fault));
        let code = grf("gradcheck", &dir.path().join(format!("{fault:?}")), &[]);
        inject(None);
        assert_eq!(code, EXIT_CHECK, "{fault:?}");
    }
    assert_eq!(grf("gradcheck", &dir.path().join("clean"), &[]), EXIT_OK);
}

#[test]
fn gradcheck_refuses_large_models() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(grf("gradcheck", dir.path(), &["--set", "gradcheck.d_model=32"]), EXIT_USAGE);
}

#[test]
fn train_writes_outputs_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = quick(&["--seed", "4"]);
    assert_eq!(grf("train", &a, &refs(&args)), EXIT_OK);
    assert_eq!(grf("train", &b, &refs(&args)), EXIT_OK);
    for file in ["report.csv", "checkpoint.txt", "metrics.csv"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let report = TrainReport::read_csv(read(&a.join("report.csv")).as_bytes()).unwrap();
    assert_eq!(report.len(), 3);
    let metrics = read(&a.join("metrics.csv"));
    assert!(metrics.starts_with("split,mae,corr,acc2,acc7,f1\nval,"));
    assert!(metrics.contains("\ntest,"));

    let c = dir.path().join("c");
    let other = quick(&["--seed", "5"]);
    assert_eq!(grf("train", &c, &refs(&other)), EXIT_OK);
    assert_ne!(fs::read(a.join("checkpoint.txt")).unwrap(), fs::read(c.join("checkpoint.txt")).unwrap());
}

#[test]
fn resolved_config_replays_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let args = quick(&["--order", "V,T,A", "--model", "pairwise", "--set", "train.lr_max=0.002"]);
    assert_eq!(grf("train", &first, &refs(&args)), EXIT_OK);
    let echo = first.join("config.txt");
    assert!(read(&echo).contains("model.order = V,T,A"));

    let second = dir.path().join("second");
    let replay = ["--config".to_string(), echo.display().to_string()];
    assert_eq!(grf("train", &second, &refs(&replay)), EXIT_OK);
    for file in ["report.csv", "checkpoint.txt", "metrics.csv"] {
        assert_eq!(fs::read(first.join(file)).unwrap(), fs::read(second.join(file)).unwrap(), "{file}");
    }
    let strip = |p: &Path| read(p).lines().filter(|l| !l.starts_with("paths.")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(&echo), strip(&second.join("config.txt")));
}

#[test]
fn orders_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let ok = quick(&["--order", "A,V,T", "--set", "train.epochs=1", "--set", "train.patience=1"]);
    assert_eq!(grf("train", &dir.path().join("avt"), &refs(&ok)), EXIT_OK);
    assert!(read(&dir.path().join("avt/config.txt")).contains("model.order = A,V,T"));

    for bad in [["--order", "A,A,V"], ["--order", "A,V"], ["--set", "model.width=3"], ["--set", "seed"]] {
        assert_eq!(grf("train", &dir.path().join("bad"), &bad), EXIT_USAGE, "{bad:?}");
    }
    assert_eq!(run(["grf", "frobnicate"]), EXIT_USAGE);
    assert_eq!(run(["grf", "train", "--seed", "x"]), EXIT_USAGE);
    assert_eq!(run(["grf", "--help"]), EXIT_OK);

    let missing = dir.path().join("nope.txt").display().to_string();
    assert_eq!(grf("train", &dir.path().join("io"), &["--config", &missing]), EXIT_IO);
    let bad_file = dir.path().join("bad.txt");
    fs::write(&bad_file, "seed = 1\nmodel.colour = red\n").unwrap();
    let bad_file = bad_file.display().to_string();
    assert_eq!(grf("train", &dir.path().join("io"), &["--config", &bad_file]), EXIT_USAGE);
}

fn tiny_bench(extra: &[&str]) -> Vec<String> {
    [
        "--set", "bench.seq_len=3",
        "--set", "bench.input_dim=4",
        "--set", "bench.d_model=8",
        "--set", "bench.d_ff=16",
        "--set", "bench.heads=2",
        "--set", "bench.layers=1",
    ]
    .iter()
    .chain(extra)
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn bench_rows_follow_the_range() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    assert_eq!(grf("bench", &full, &refs(&tiny_bench(&[]))), EXIT_OK);
    let records = read_report(read(&full.join("bench.csv")).as_bytes()).unwrap();
    assert_eq!(records.len(), 18);
    assert!(read(&full.join("bench_summary.txt")).contains("quadratic"));

    let four = dir.path().join("four");
    assert_eq!(grf("bench", &four, &refs(&tiny_bench(&["--n-max", "4"]))), EXIT_OK);
    let text = read(&four.join("bench.csv"));
    assert!(text.starts_with("model,n,params,flops,wall_ms,alloc_bytes\n"));
    let records = read_report(text.as_bytes()).unwrap();
    assert_eq!(records.len(), 6);
    assert_eq!(records.iter().filter(|r| r.model == grf_core::Arch::Pairwise).count(), 3);

    assert_eq!(grf("bench", &four, &refs(&tiny_bench(&["--n-max", "1"]))), EXIT_USAGE);
}

#[test]
fn embed_writes_one_file_per_stage() {
    let dir = tempfile::tempdir().unwrap();
    let trained = dir.path().join("trained");
    let args = quick(&["--seed", "2"]);
    assert_eq!(grf("train", &trained, &refs(&args)), EXIT_OK);
    let replay = trained.join("config.txt").display().to_string();
    let ckpt = trained.join("checkpoint.txt").display().to_string();

    let emb = dir.path().join("emb");
    assert_eq!(grf("embed", &emb, &["--config", &replay, "--checkpoint", &ckpt, "--split", "val"]), EXIT_OK);
    for k in 1..=3 {
        let text = read(&emb.join(format!("stage_{k}.csv")));
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert_eq!(header.split(',').count(), 2 + 8);
        assert!(header.starts_with("sample_id,label,h0,"));
        assert_eq!(lines.count(), 16);
    }
    assert!(!emb.join("stage_4.csv").exists());
    let probe = read(&emb.join("probe.csv"));
    assert!(probe.starts_with("stage,modality,train_accuracy,accuracy\n1,T,"));
    assert_eq!(probe.lines().count(), 4);

    let again = dir.path().join("emb2");
    assert_eq!(grf("embed", &again, &["--config", &replay, "--checkpoint", &ckpt, "--split", "val"]), EXIT_OK);
    for file in ["stage_1.csv", "stage_3.csv", "probe.csv"] {
        assert_eq!(fs::read(emb.join(file)).unwrap(), fs::read(again.join(file)).unwrap());
    }

    let empty = dir.path().join("empty");
    assert_eq!(grf("embed", &empty, &["--config", &replay, "--checkpoint", &ckpt, "--set", "data.test_size=0"]), EXIT_OK);
    for k in 1..=3 {
        assert_eq!(read(&empty.join(format!("stage_{k}.csv"))).lines().count(), 1);
    }
    assert_eq!(read(&empty.join("probe.csv")).lines().count(), 1);
}

#[test]
fn embed_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let trained = dir.path().join("trained");
    assert_eq!(grf("train", &trained, &refs(&quick(&[]))), EXIT_OK);
    let replay = trained.join("config.txt").display().to_string();
    let ckpt = trained.join("checkpoint.txt").display().to_string();
    let out = dir.path().join("e");

    assert_eq!(grf("embed", &out, &["--config", &replay, "--checkpoint", &ckpt, "--set", "model.d_model=12"]), EXIT_IO);
    assert_eq!(grf("embed", &out, &["--config", &replay, "--checkpoint", &ckpt, "--split", "holdout"]), EXIT_USAGE);
    assert_eq!(grf("embed", &out, &["--config", &replay, "--checkpoint", &ckpt, "--model", "pairwise"]), EXIT_USAGE);
    let missing = dir.path().join("missing.txt").display().to_string();
    assert_eq!(grf("embed", &out, &["--config", &replay, "--checkpoint", &missing]), EXIT_IO);
}
