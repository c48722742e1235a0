//! Plain nested-`Vec` re-implementation of every layer, written directly
//! from the equations and sharing no code with the tape. One sample at a
//! time.

use grf_core::{GrfConfig, ParamStore};

pub type Mat = Vec<Vec<f64>>;

pub fn weight(store: &ParamStore, name: &str) -> Mat {
    let p = store.by_name(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let (r, c) = (p.value.shape()[0], p.value.shape()[1]);
    (0..r).map(|i| p.value.data()[i * c..(i + 1) * c].to_vec()).collect()
}

pub fn vector(store: &ParamStore, name: &str) -> Vec<f64> {
    store.by_name(name).unwrap_or_else(|| panic!("no parameter {name}")).value.data().to_vec()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (m, k, n) = (a.len(), b.len(), b[0].len());
    let mut c = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i][p] * b[p][j];
            }
            c[i][j] = s;
        }
    }
    c
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

pub fn linear(x: &Mat, store: &ParamStore, prefix: &str) -> Mat {
    let w = weight(store, &format!("{prefix}.weight"));
    let b = vector(store, &format!("{prefix}.bias"));
    matmul(x, &w)
        .into_iter()
        .map(|row| row.iter().zip(&b).map(|(v, bb)| v + bb).collect())
        .collect()
}

pub fn layer_norm(x: &Mat, store: &ParamStore, prefix: &str) -> Mat {
    let g = vector(store, &format!("{prefix}.gamma"));
    let b = vector(store, &format!("{prefix}.beta"));
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = (var + 1e-5).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / sd * g[j] + b[j])
                .collect()
        })
        .collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn positional_encoding(t_len: usize, d: usize) -> Mat {
    (0..t_len)
        .map(|t| {
            (0..d)
                .map(|c| {
                    let i = (c / 2) as f64;
                    let angle = t as f64 / 10000f64.powf(2.0 * i / d as f64);
                    if c % 2 == 0 { angle.sin() } else { angle.cos() }
                })
                .collect()
        })
        .collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

/// Returns the output and the per-head attention weights `[H][Tq][Tk]`.
pub fn attention(q: &Mat, kv: &Mat, store: &ParamStore, prefix: &str, heads: usize) -> (Mat, Vec<Mat>) {
    let qp = linear(q, store, &format!("{prefix}.q"));
    let kp = linear(kv, store, &format!("{prefix}.k"));
    let vp = linear(kv, store, &format!("{prefix}.v"));
    let d = qp[0].len();
    let dh = d / heads;
    let mut merged = vec![vec![0.0; d]; q.len()];
    let mut all = Vec::new();
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let qh: Mat = qp.iter().map(|r| r[cols.clone()].to_vec()).collect();
        let kh: Mat = kp.iter().map(|r| r[cols.clone()].to_vec()).collect();
        let vh: Mat = vp.iter().map(|r| r[cols.clone()].to_vec()).collect();
        let scores = matmul(&qh, &transpose(&kh));
        let weights: Mat = scores
            .iter()
            .map(|row| softmax(&row.iter().map(|s| s / (dh as f64).sqrt()).collect::<Vec<_>>()))
            .collect();
        let out = matmul(&weights, &vh);
        for (i, row) in out.iter().enumerate() {
            merged[i][h * dh..(h + 1) * dh].copy_from_slice(row);
        }
        all.push(weights);
    }
    (linear(&merged, store, &format!("{prefix}.o")), all)
}

pub fn cross_attn_layer(q: &Mat, ctx: &Mat, store: &ParamStore, prefix: &str, heads: usize) -> Mat {
    let (a, _) = attention(q, ctx, store, &format!("{prefix}.attn"), heads);
    let x = layer_norm(&add(q, &a), store, &format!("{prefix}.ln1"));
    let hidden: Mat = linear(&x, store, &format!("{prefix}.ff1"))
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    let f = linear(&hidden, store, &format!("{prefix}.ff2"));
    layer_norm(&add(&x, &f), store, &format!("{prefix}.ln2"))
}

pub fn pool(m: &Mat) -> Vec<f64> {
    let t = m.len() as f64;
    (0..m[0].len()).map(|j| m.iter().map(|r| r[j]).sum::<f64>() / t).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn gfu(s: &[f64], m: &[f64], store: &ParamStore, prefix: &str) -> Vec<f64> {
    let joint: Mat = vec![s.iter().chain(m).copied().collect()];
    let z: Vec<f64> = linear(&joint, store, &format!("{prefix}.z"))[0].iter().map(|&v| sigmoid(v)).collect();
    let cand: Vec<f64> = linear(&joint, store, &format!("{prefix}.h"))[0].iter().map(|v| v.tanh()).collect();
    (0..s.len()).map(|j| (1.0 - z[j]) * s[j] + z[j] * cand[j]).collect()
}

fn direction_prefix(config: &GrfConfig, l: usize, dir: &str) -> String {
    if config.tie_directions {
        format!("fusion.layer{l}.tied")
    } else {
        format!("fusion.layer{l}.{dir}")
    }
}

/// One fusion block application with both streams reading the previous
/// layer's values of the other stream.
pub fn fusion_block(h_prev: &[f64], modality: &Mat, store: &ParamStore, config: &GrfConfig) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut ctx: Mat = vec![h_prev.to_vec()];
    let mut stream = modality.clone();
    for l in 1..=config.layers {
        let new_ctx = cross_attn_layer(&ctx, &stream, store, &direction_prefix(config, l, "ctx"), config.heads);
        let new_stream = cross_attn_layer(&stream, &ctx, store, &direction_prefix(config, l, "mod"), config.heads);
        ctx = new_ctx;
        stream = new_stream;
    }
    let s_prime = ctx[0].clone();
    let m_prime = pool(&stream);
    (gfu(&s_prime, &m_prime, store, "fusion.gfu"), s_prime, m_prime)
}

pub fn project(x: &Mat, store: &ParamStore, name: &str) -> Mat {
    let p = linear(x, store, &format!("proj.{name}"));
    add(&p, &positional_encoding(x.len(), p[0].len()))
}

pub fn head(h: &[f64], store: &ParamStore) -> f64 {
    let hidden: Mat = linear(&[h.to_vec()].to_vec(), store, "head.hidden")
        .into_iter()
        .map(|r| r.into_iter().map(f64::tanh).collect())
        .collect();
    linear(&hidden, store, "head.out")[0][0]
}

/// `inputs[name]` is the `T × d` feature matrix of one sample.
pub fn grf_forward(store: &ParamStore, config: &GrfConfig, inputs: &[(String, Mat)]) -> (f64, Vec<Vec<f64>>) {
    let get = |name: &str| &inputs.iter().find(|(n, _)| n == name).unwrap().1;
    let order = &config.fusion_order;
    let mut h = pool(&project(get(&order[0]), store, &order[0]));
    let mut trace = vec![h.clone()];
    for name in &order[1..] {
        let m = project(get(name), store, name);
        h = fusion_block(&h, &m, store, config).0;
        trace.push(h.clone());
    }
    (head(&h, store), trace)
}

pub fn pairwise_forward(store: &ParamStore, config: &GrfConfig, inputs: &[(String, Mat)]) -> f64 {
    let get = |name: &str| &inputs.iter().find(|(n, _)| n == name).unwrap().1;
    let order = &config.fusion_order;
    let projected: Vec<Mat> = order.iter().map(|n| project(get(n), store, n)).collect();
    let mut features = Vec::new();
    for (i, ti) in order.iter().enumerate() {
        for (j, sj) in order.iter().enumerate() {
            if i == j {
                continue;
            }
            let mut x = projected[i].clone();
            for l in 1..=config.layers {
                x = cross_attn_layer(&x, &projected[j], store, &format!("pair.{ti}_{sj}.layer{l}"), config.heads);
            }
            features.extend(pool(&x));
        }
    }
    head(&features, store)
}

/// Splits sample `s` of a batch into per-modality matrices.
pub fn sample_inputs(batch: &grf_core::ModalityBatch, s: usize) -> Vec<(String, Mat)> {
    batch
        .modalities()
        .iter()
        .map(|m| {
            let (t, d) = (m.spec.seq_len, m.spec.dim);
            let base = s * t * d;
            let rows = (0..t).map(|r| m.data[base + r * d..base + (r + 1) * d].to_vec()).collect();
            (m.spec.name.clone(), rows)
        })
        .collect()
}
