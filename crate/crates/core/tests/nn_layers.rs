mod common;

use common::reference::{self, Mat};
use common::{fd_check, random_tensor, rng};
use grf_core::model::GrfConfig;
use grf_core::nn::{
    pool, positional_encoding, project_modality, CrossAttnLayer, Linear, MultiHeadAttention, PredictionHead,
};
use grf_core::{Graph, ParamStore, Tensor};
use proptest::prelude::*;

fn to_mat(t: &Tensor) -> Mat {
    let c = *t.shape().last().unwrap();
    t.data().chunks(c).map(|r| r.to_vec()).collect()
}

fn set(store: &mut ParamStore, name: &str, value: f64) {
    let id = store.id(name).unwrap();
    store.get_mut(id).value.data_mut().iter_mut().for_each(|v| *v = value);
}

fn randomize(store: &mut ParamStore, seed: u64) {
    let mut r = rng(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let shape = store.get(id).value.shape().to_vec();
        store.get_mut(id).value = random_tensor(&mut r, &shape, 0.8);
    }
}

#[test]
fn pe_table_matches_formula() {
    let pe = positional_encoding(4, 8).unwrap();
    let oracle = reference::positional_encoding(4, 8);
    for (a, b) in pe.data().iter().zip(oracle.concat()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((pe.data()[8] - 0.84147).abs() < 1e-5);
}

#[test]
fn projection_of_zero_input_is_pe_row() {
    let mut store = ParamStore::new();
    let mut r = rng(0);
    let lin = Linear::new(&mut store, "proj.T", 5, 6, &mut r).unwrap();
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[1, 1, 5]));
    let m = project_modality(&mut g, &store, x, &lin).unwrap();
    assert_eq!(g.value(m).data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
}

#[test]
fn mosi_text_projects_to_aligned_width() {
    let config = GrfConfig::mosi(true, 3);
    let mut store = ParamStore::new();
    let mut r = rng(0);
    let text = config.modality("T").unwrap();
    let lin = Linear::new(&mut store, "proj.T", text.dim, config.d_model, &mut r).unwrap();
    let mut g = Graph::new();
    let x = g.input(random_tensor(&mut r, &[2, 3, 300], 1.0));
    let m = project_modality(&mut g, &store, x, &lin).unwrap();
    assert_eq!(g.shape(m), &[2, 3, 64]);
}

#[test]
fn projection_matches_matmul_then_pe() {
    let mut store = ParamStore::new();
    let mut r = rng(1);
    let lin = Linear::new(&mut store, "proj.A", 3, 4, &mut r).unwrap();
    randomize(&mut store, 2);
    let x = random_tensor(&mut r, &[1, 5, 3], 1.0);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let m = project_modality(&mut g, &store, xv, &lin).unwrap();
    let oracle = reference::project(&to_mat(&x), &store, "A");
    for (a, b) in g.value(m).data().iter().zip(oracle.concat()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn singleton_key_attention_ignores_query() {
    let mut store = ParamStore::new();
    let mut r = rng(3);
    let mha = MultiHeadAttention::new(&mut store, "a", 8, 2, &mut r).unwrap();
    randomize(&mut store, 4);
    let kv = random_tensor(&mut r, &[1, 1, 8], 1.0);
    let expected = reference::linear(&reference::linear(&to_mat(&kv), &store, "a.v"), &store, "a.o");
    for seed in 0..3 {
        let q = random_tensor(&mut rng(100 + seed), &[1, 3, 8], 2.0);
        let mut g = Graph::new();
        let (qv, kvv) = (g.input(q), g.input(kv.clone()));
        let out = mha.forward(&mut g, &store, qv, kvv).unwrap();
        assert!(g.value(out.weights).data().iter().all(|&w| w == 1.0));
        for row in g.value(out.output).data().chunks(8) {
            for (a, b) in row.iter().zip(&expected[0]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn identical_keys_average_values() {
    let mut store = ParamStore::new();
    let mut r = rng(5);
    let mha = MultiHeadAttention::new(&mut store, "a", 4, 2, &mut r).unwrap();
    randomize(&mut store, 6);
    let key_row = random_tensor(&mut r, &[4], 1.0);
    let k = Tensor::new(vec![1, 3, 4], key_row.data().repeat(3)).unwrap();
    let v = random_tensor(&mut r, &[1, 3, 4], 1.0);
    let q = random_tensor(&mut r, &[1, 2, 4], 1.0);
    let mut g = Graph::new();
    let (qv, kv, vv) = (g.input(q), g.input(k), g.input(v.clone()));
    let out = mha.forward_kv(&mut g, &store, qv, kv, vv).unwrap();
    assert!(g.value(out.weights).data().iter().all(|&w| (w - 1.0 / 3.0).abs() < 1e-15));
    let vp = reference::linear(&to_mat(&v), &store, "a.v");
    let mean: Mat = vec![reference::pool(&vp)];
    let expected = reference::linear(&mean, &store, "a.o");
    for row in g.value(out.output).data().chunks(4) {
        for (a, b) in row.iter().zip(&expected[0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn single_head_attention_matches_formula() {
    let mut store = ParamStore::new();
    let mut r = rng(7);
    let mha = MultiHeadAttention::new(&mut store, "a", 4, 1, &mut r).unwrap();
    randomize(&mut store, 8);
    let q = random_tensor(&mut r, &[1, 2, 4], 1.0);
    let kv = random_tensor(&mut r, &[1, 3, 4], 1.0);
    let mut g = Graph::new();
    let (qv, kvv) = (g.input(q.clone()), g.input(kv.clone()));
    let out = mha.forward(&mut g, &store, qv, kvv).unwrap();
    let (expected, weights) = reference::attention(&to_mat(&q), &to_mat(&kv), &store, "a", 1);
    for (a, b) in g.value(out.output).data().iter().zip(expected.concat()) {
        assert!((a - b).abs() < 1e-10);
    }
    for (a, b) in g.value(out.weights).data().iter().zip(weights.concat().concat()) {
        assert!((a - b).abs() < 1e-10);
    }
}

fn layer(seed: u64) -> (ParamStore, CrossAttnLayer) {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let l = CrossAttnLayer::new(&mut store, "x", 8, 2, 16, 0.1, &mut r).unwrap();
    (store, l)
}

#[test]
fn cross_attn_residual_passthrough() {
    let (mut store, l) = layer(9);
    set(&mut store, "x.attn.o.weight", 0.0);
    set(&mut store, "x.ff2.weight", 0.0);
    let q = random_tensor(&mut rng(10), &[1, 3, 8], 1.5);
    let ctx = random_tensor(&mut rng(11), &[1, 4, 8], 1.5);
    let mut g = Graph::new();
    let (qv, cv) = (g.input(q.clone()), g.input(ctx));
    let out = l.forward(&mut g, &store, qv, cv).unwrap().output;
    assert_eq!(g.shape(out), &[1, 3, 8]);
    let once = reference::layer_norm(&to_mat(&q), &store, "x.ln1");
    let twice = reference::layer_norm(&once, &store, "x.ln2");
    for (a, b) in g.value(out).data().iter().zip(twice.concat()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn cross_attn_length_one_query() {
    let (store, l) = layer(12);
    let mut g = Graph::new();
    let q = g.input(random_tensor(&mut rng(1), &[2, 1, 8], 1.0));
    let c = g.input(random_tensor(&mut rng(2), &[2, 5, 8], 1.0));
    let out = l.forward(&mut g, &store, q, c).unwrap();
    assert_eq!(g.shape(out.output), &[2, 1, 8]);
    assert_eq!(g.shape(out.weights), &[2, 2, 1, 5]);
}

#[test]
fn cross_attn_matches_sublayer_oracle() {
    let (mut store, l) = layer(13);
    randomize(&mut store, 14);
    let q = random_tensor(&mut rng(15), &[1, 3, 8], 1.0);
    let ctx = random_tensor(&mut rng(16), &[1, 2, 8], 1.0);
    let mut g = Graph::new();
    let (qv, cv) = (g.input(q.clone()), g.input(ctx.clone()));
    let out = l.forward(&mut g, &store, qv, cv).unwrap().output;
    let expected = reference::cross_attn_layer(&to_mat(&q), &to_mat(&ctx), &store, "x", 2);
    for (a, b) in g.value(out).data().iter().zip(expected.concat()) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn cross_attn_input_gradients() {
    let (mut store, l) = layer(17);
    randomize(&mut store, 18);
    let q = random_tensor(&mut rng(19), &[1, 2, 8], 1.0);
    let ctx = random_tensor(&mut rng(20), &[1, 3, 8], 1.0);
    let err = fd_check(&[q, ctx], 1e-6, 21, |g, v| l.forward(g, &store, v[0], v[1]).unwrap().output);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn pool_cases() {
    let mut g = Graph::new();
    let c = g.input(Tensor::new(vec![1, 3, 2], [0.5, -1.0].repeat(3)).unwrap());
    let p = pool(&mut g, c).unwrap();
    assert_eq!(g.value(p).data(), &[0.5, -1.0]);

    let single = g.input(Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap());
    let p = pool(&mut g, single).unwrap();
    assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0]);

    let x = random_tensor(&mut rng(22), &[1, 3, 4], 1.0);
    let xv = g.input(x.clone());
    let p = pool(&mut g, xv).unwrap();
    for (a, b) in g.value(p).data().iter().zip(reference::pool(&to_mat(&x))) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn head_cases() {
    let mut store = ParamStore::new();
    let mut r = rng(23);
    let head = PredictionHead::new(&mut store, "head", 6, 3, &mut r).unwrap();
    let h = random_tensor(&mut r, &[2, 6], 1.0);

    let mut zero = store.clone();
    for name in ["head.hidden.weight", "head.hidden.bias", "head.out.weight", "head.out.bias"] {
        set(&mut zero, name, 0.0);
    }
    let mut g = Graph::new();
    let hv = g.input(h.clone());
    let y = head.forward(&mut g, &zero, hv).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0]);

    set(&mut zero, "head.out.bias", 0.75);
    let y = head.forward(&mut g, &zero, hv).unwrap();
    assert_eq!(g.value(y).data(), &[0.75, 0.75]);

    randomize(&mut store, 24);
    let y = head.forward(&mut g, &store, hv).unwrap();
    for (s, row) in to_mat(&h).iter().enumerate() {
        assert!((g.value(y).data()[s] - reference::head(row, &store)).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn attention_output_length_follows_query(tq in 1usize..6, tk in 1usize..9, seed in any::<u64>()) {
        let mut store = ParamStore::new();
        let mut r = rng(seed);
        let mha = MultiHeadAttention::new(&mut store, "a", 4, 2, &mut r).unwrap();
        let mut g = Graph::new();
        let q = g.input(random_tensor(&mut r, &[1, tq, 4], 1.0));
        let kv = g.input(random_tensor(&mut r, &[1, tk, 4], 1.0));
        let out = mha.forward(&mut g, &store, q, kv).unwrap();
        prop_assert_eq!(g.shape(out.output), &[1, tq, 4]);
    }
}
