#![allow(dead_code)]

pub mod reference;

use grf_core::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Tensor-level relative error `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞)`.
pub fn tensor_rel_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let diff = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .data()
        .iter()
        .chain(numeric.data())
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Builds `f(inputs)` on a fresh tape, reduced to a scalar by a fixed
/// random weighting, and compares tape gradients of every input with
/// central finite differences. Returns the worst tensor-level error.
pub fn fd_check<F>(inputs: &[Tensor], eps: f64, seed: u64, f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut r = rng(seed);
    let probe_shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).shape().to_vec()
    };
    let weights = random_tensor(&mut r, &probe_shape, 1.0);
    let scalar = |g: &mut Graph, vars: &[Var]| -> Var {
        let out = f(g, vars);
        let w = g.input(weights.clone());
        let weighted = g.mul(out, w).unwrap();
        g.sum(weighted)
    };
    let eval = |ts: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.input(t.clone())).collect();
        let l = scalar(&mut g, &vars);
        g.value(l).item().unwrap()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = scalar(&mut g, &vars);
    let grads = g.gradients(loss).unwrap();

    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape()));
        let mut numeric = vec![0.0; input.numel()];
        for i in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += eps;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= eps;
            numeric[i] = (eval(&plus) - eval(&minus)) / (2.0 * eps);
        }
        let numeric = Tensor::new(input.shape().to_vec(), numeric).unwrap();
        worst = worst.max(tensor_rel_error(&analytic, &numeric));
    }
    worst
}
