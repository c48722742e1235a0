//! Scaling sweep over the number of modalities for both architectures.

use std::io::{Read, Write};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::closed_form_flops;
use crate::data::{generate_synthetic, SyntheticTaskSpec, TaskMode};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{count_parameters, Arch, FusionModel, GrfConfig, ModalitySpec, Model};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub seq_len: usize,
    pub input_dim: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub reps: usize,
    pub warmups: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            n_min: 2,
            n_max: 10,
            seq_len: 32,
            input_dim: 32,
            d_model: 64,
            layers: 2,
            heads: 4,
            d_ff: 256,
            reps: 5,
            warmups: 2,
            seed: 0,
        }
    }
}

impl SweepConfig {
    /// Model configuration with `n` identical modalities `M1..Mn`.
    pub fn model_config(&self, n: usize) -> GrfConfig {
        let modalities = (1..=n)
            .map(|i| ModalitySpec::new(format!("M{i}"), self.seq_len, self.input_dim))
            .collect();
        let mut config = GrfConfig::new(modalities, self.d_model);
        config.layers = self.layers;
        config.heads = self.heads;
        config.d_ff = self.d_ff;
        config.dropout = 0.0;
        config
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_min < 2 || self.n_max < self.n_min {
            return Err(Error::Config(format!(
                "sweep range {}..={} must satisfy 2 <= n_min <= n_max",
                self.n_min, self.n_max
            )));
        }
        if self.reps < 5 {
            return Err(Error::Config("at least 5 timed repetitions are required".into()));
        }
        self.model_config(self.n_min).validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub model: Arch,
    pub n: usize,
    pub params: usize,
    /// Closed-form multiply-accumulates of one forward pass at batch 1.
    pub flops: u64,
    /// Median wall time of the timed repetitions.
    pub wall_ms: f64,
    /// Buffer bytes held by the forward tape at its high-water mark.
    pub alloc_bytes: usize,
}

/// Least-squares polynomial fit `coeffs[0] + coeffs[1]·n + coeffs[2]·n²`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyFit {
    pub coeffs: Vec<f64>,
    pub r2: f64,
}

pub fn fit_polynomial(xs: &[f64], ys: &[f64], degree: usize) -> Result<PolyFit> {
    if xs.len() != ys.len() || xs.len() <= degree {
        return Err(Error::Input(format!(
            "degree-{degree} fit needs more than {degree} points, got {}",
            xs.len()
        )));
    }
    // Centering n keeps the normal equations well conditioned; the
    // coefficients are mapped back to the raw basis afterwards.
    let center = xs.iter().sum::<f64>() / xs.len() as f64;
    let a = DMatrix::from_fn(xs.len(), degree + 1, |r, c| (xs[r] - center).powi(c as i32));
    let y = DVector::from_column_slice(ys);
    let centered = a
        .clone()
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::Contract(format!("fit failed: {e}")))?;
    let mut coeffs = vec![0.0; degree + 1];
    for (k, &ck) in centered.iter().enumerate() {
        // ck·(n − center)^k expanded binomially.
        for j in 0..=k {
            let binom = (0..j).fold(1.0, |acc, i| acc * (k - i) as f64 / (i + 1) as f64);
            coeffs[j] += ck * binom * (-center).powi((k - j) as i32);
        }
    }
    let fitted = &a * &centered;
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = ys.iter().zip(fitted.iter()).map(|(v, f)| (v - f).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(PolyFit { coeffs, r2 })
}

/// Second differences `v(n+1) − 2v(n) + v(n−1)` of an integer series.
pub fn second_differences(values: &[i128]) -> Vec<i128> {
    values.windows(3).map(|w| w[2] - 2 * w[1] + w[0]).collect()
}

/// Growth diagnostics of one (architecture, metric) series.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesFit {
    pub model: Arch,
    pub metric: &'static str,
    pub linear: PolyFit,
    pub quadratic: PolyFit,
    /// Common value of all second differences if they are equal (exact
    /// integer series only). Twice the exact `n²` coefficient.
    pub constant_second_difference: Option<i128>,
}

impl SeriesFit {
    /// Exact `n²` coefficient when the series is an integer quadratic.
    pub fn exact_quadratic_coefficient(&self) -> Option<f64> {
        self.constant_second_difference.map(|d| d as f64 / 2.0)
    }
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub records: Vec<BenchRecord>,
    pub fits: Vec<SeriesFit>,
    /// `(model, n, closed form, instrumented)` for every MAC disagreement.
    pub mac_mismatches: Vec<(Arch, usize, u64, u64)>,
    pub warnings: Vec<String>,
}

impl SweepResult {
    pub fn series(&self, model: Arch) -> impl Iterator<Item = &BenchRecord> {
        self.records.iter().filter(move |r| r.model == model)
    }

    pub fn fit(&self, model: Arch, metric: &str) -> Option<&SeriesFit> {
        self.fits.iter().find(|f| f.model == model && f.metric == metric)
    }

    /// `wall_ms` at the largest `n` over `wall_ms` at the smallest.
    pub fn wall_ratio(&self, model: Arch) -> Option<f64> {
        let rs: Vec<&BenchRecord> = self.series(model).collect();
        Some(rs.last()?.wall_ms / rs.first()?.wall_ms)
    }

    /// Whether median times never drop by more than `slack` (relative)
    /// from one `n` to the next.
    pub fn timing_monotone(&self, model: Arch, slack: f64) -> bool {
        let times: Vec<f64> = self.series(model).map(|r| r.wall_ms).collect();
        times.windows(2).all(|w| w[1] >= w[0] * (1.0 - slack))
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for f in &self.fits {
            let q = &f.quadratic.coeffs;
            out.push_str(&format!(
                "{:<8} {:<7} linear R²={:.6}  quadratic: a={:.4e} b={:.4e} c={:.4e} R²={:.6}",
                f.model.to_string(),
                f.metric,
                f.linear.r2,
                q[0],
                q[1],
                q[2],
                f.quadratic.r2
            ));
            if let Some(c) = f.exact_quadratic_coefficient() {
                out.push_str(&format!("  exact n² coefficient={c}"));
            }
            out.push('\n');
        }
        for arch in [Arch::Grf, Arch::Pairwise] {
            if let Some(r) = self.wall_ratio(arch) {
                out.push_str(&format!("{arch} wall-time ratio (n_max / n_min) = {r:.3}\n"));
            }
        }
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let mid = values.len() / 2;
    if values.len() % 2 == 0 {
        0.5 * (values[mid - 1] + values[mid])
    } else {
        values[mid]
    }
}

/// Benchmarks one model; returns the record and the tape's MAC count.
pub fn bench_model(arch: Arch, n: usize, config: &SweepConfig) -> Result<(BenchRecord, u64, Option<String>)> {
    let model_config = config.model_config(n);
    let model = Model::new(arch, model_config.clone(), config.seed)?;
    let task = SyntheticTaskSpec {
        modalities: model_config.modalities.clone(),
        noise_std: 0.1,
        mode: TaskMode::Sum,
        train_size: 1,
        val_size: 0,
        test_size: 0,
    };
    let batch = generate_synthetic(&task, config.seed)?.train.batch;

    for _ in 0..config.warmups {
        let mut g = Graph::new();
        model.forward(&mut g, &batch)?;
    }
    let mut times = Vec::with_capacity(config.reps);
    let mut macs = 0;
    let mut bytes = 0;
    for _ in 0..config.reps {
        let start = Instant::now();
        let mut g = Graph::new();
        model.forward(&mut g, &batch)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        macs = g.macs();
        bytes = g.peak_bytes();
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let std = (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / times.len() as f64).sqrt();
    let wall_ms = median(&mut times);
    let warning = (std > 0.2 * wall_ms).then(|| {
        format!("{arch} n={n}: timing std {std:.3} ms exceeds 20% of median {wall_ms:.3} ms")
    });
    let record = BenchRecord {
        model: arch,
        n,
        params: count_parameters(&model).total,
        flops: closed_form_flops(arch, &model_config),
        wall_ms,
        alloc_bytes: bytes,
    };
    Ok((record, macs, warning))
}

/// Runs both architectures for every `n` in range, sequentially on the
/// calling thread.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let mut records = Vec::new();
    let mut mac_mismatches = Vec::new();
    let mut warnings = Vec::new();
    for arch in [Arch::Grf, Arch::Pairwise] {
        for n in config.n_min..=config.n_max {
            let (record, macs, warning) = bench_model(arch, n, config)?;
            if macs != record.flops {
                mac_mismatches.push((arch, n, record.flops, macs));
            }
            warnings.extend(warning);
            records.push(record);
        }
    }
    let fits = fit_records(&records)?;
    Ok(SweepResult {
        records,
        fits,
        mac_mismatches,
        warnings,
    })
}

/// Linear and quadratic fits of params, flops and wall time per
/// architecture.
pub fn fit_records(records: &[BenchRecord]) -> Result<Vec<SeriesFit>> {
    let mut fits = Vec::new();
    for arch in [Arch::Grf, Arch::Pairwise] {
        let rs: Vec<&BenchRecord> = records.iter().filter(|r| r.model == arch).collect();
        if rs.len() < 3 {
            continue;
        }
        let xs: Vec<f64> = rs.iter().map(|r| r.n as f64).collect();
        let series: [(&'static str, Vec<f64>, Option<Vec<i128>>); 3] = [
            (
                "params",
                rs.iter().map(|r| r.params as f64).collect(),
                Some(rs.iter().map(|r| r.params as i128).collect()),
            ),
            (
                "flops",
                rs.iter().map(|r| r.flops as f64).collect(),
                Some(rs.iter().map(|r| r.flops as i128).collect()),
            ),
            ("wall_ms", rs.iter().map(|r| r.wall_ms).collect(), None),
        ];
        for (metric, ys, exact) in series {
            let constant_second_difference = exact.and_then(|v| {
                let d = second_differences(&v);
                d.windows(2).all(|w| w[0] == w[1]).then(|| d[0])
            });
            fits.push(SeriesFit {
                model: arch,
                metric,
                linear: fit_polynomial(&xs, &ys, 1)?,
                quadratic: fit_polynomial(&xs, &ys, 2)?,
                constant_second_difference,
            });
        }
    }
    Ok(fits)
}

/// CSV with header `model,n,params,flops,wall_ms,alloc_bytes`.
pub fn emit_report<W: Write>(records: &[BenchRecord], out: W) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Input("cannot emit a report for an empty sweep".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report<R: Read>(input: R) -> Result<Vec<BenchRecord>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|rec| rec.map_err(Error::from)).collect()
}
