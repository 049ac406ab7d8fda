//! Central finite-difference oracles for the analytic gradients.
//!
//! Every check builds a randomized instance with 10-unit layers, perturbs each
//! parameter by ±h and compares against the analytic gradient. The reported
//! error is `|g − ĝ| / max(|g|, |ĝ|, FLOOR)`.

#![allow(dead_code)]

use hat_core::hat::{gate, gate_derivative, sparsity_regularizer, RegScheme, UnitVectors};
use hat_core::nn::{init_weights, softmax_xent_batch, BackwardScope, InitScheme, ModelSpec, Network, UnitGates};
use hat_core::rng::{stream, Rng, Stream};
use hat_core::Tensor;

pub const STEP: f64 = 1e-5;
pub const FLOOR: f64 = 1e-7;
const UNITS: usize = 10;
const BATCH: usize = 6;

#[derive(Debug, Clone, Copy)]
pub struct Check {
    pub max_rel: f64,
    pub compared: usize,
}

impl Check {
    fn new() -> Self {
        Check { max_rel: 0.0, compared: 0 }
    }

    fn add(&mut self, analytic: f64, numeric: f64) {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
        self.max_rel = self.max_rel.max(rel);
        self.compared += 1;
    }

    pub fn merge(self, other: Check) -> Check {
        Check {
            max_rel: self.max_rel.max(other.max_rel),
            compared: self.compared + other.compared,
        }
    }
}

fn gaussian(shape: &[usize], std: f64, rng: &mut Rng) -> Vec<f64> {
    init_weights(shape, InitScheme::Gaussian { mean: 0.0, std }, rng).unwrap().into_data()
}

fn uniform(n: usize, rng: &mut Rng) -> Vec<f64> {
    init_weights(&[n], InitScheme::Uniform { low: 0.0, high: 1.0 }, rng).unwrap().into_data()
}

fn labels(n: usize, classes: usize, rng: &mut Rng) -> Vec<usize> {
    uniform(n, rng).iter().map(|u| ((u * classes as f64) as usize).min(classes - 1)).collect()
}

fn central(f: &mut dyn FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + STEP) - f(x - STEP)) / (2.0 * STEP)
}

fn instance(seed: u64) -> (Network, Tensor, Vec<usize>) {
    let mut rng = stream(seed, Stream::Init, 99);
    let mut net = Network::new(UNITS, &ModelSpec::new(vec![UNITS, UNITS]), &[UNITS], &mut rng).unwrap();
    // non-zero biases so every bias gradient is exercised
    for layer in net.body_mut() {
        let b = gaussian(&[layer.outputs()], 0.1, &mut rng);
        layer.bias.data_mut().copy_from_slice(&b);
    }
    let x = Tensor::from_vec(&[BATCH, UNITS], gaussian(&[BATCH, UNITS], 1.0, &mut rng)).unwrap();
    let y = labels(BATCH, UNITS, &mut rng);
    (net, x, y)
}

/// Softmax cross-entropy with respect to the logits.
pub fn check_loss(seed: u64) -> Check {
    let mut rng = stream(seed, Stream::Init, 98);
    let logits = Tensor::from_vec(&[BATCH, UNITS], gaussian(&[BATCH, UNITS], 1.0, &mut rng)).unwrap();
    let y = labels(BATCH, UNITS, &mut rng);
    let (_, grad) = softmax_xent_batch(&logits, &y).unwrap();
    let mut check = Check::new();
    for i in 0..logits.len() {
        let mut f = |v: f64| {
            let mut l = logits.clone();
            l.data_mut()[i] = v;
            softmax_xent_batch(&l, &y).unwrap().0
        };
        check.add(grad.data()[i], central(&mut f, logits.data()[i]));
    }
    check
}

/// Weights and biases of every dense layer, ungated.
pub fn check_dense(seed: u64) -> Check {
    let (net, x, y) = instance(seed);
    let mut rng = stream(seed, Stream::Dropout, 0);
    let (logits, tape) = net.forward_train(&x, 0, None, &mut rng).unwrap();
    let (_, dlogits) = softmax_xent_batch(&logits, &y).unwrap();
    let grads = net.backward(&tape, None, &dlogits, BackwardScope::Full).unwrap();
    let loss = |n: &Network| softmax_xent_batch(&n.logits(&x, 0, None).unwrap(), &y).unwrap().0;

    let mut check = Check::new();
    let body_layers = net.body().len();
    for l in 0..=body_layers {
        let (dw, db) = if l < body_layers { &grads.body[l] } else { &grads.head };
        for (which, g) in [(0, dw), (1, db)] {
            for i in 0..g.len() {
                let mut f = |v: f64| {
                    let mut n = net.clone();
                    let layer = if l < body_layers { &mut n.body_mut()[l] } else { n.head_mut(0).unwrap() };
                    let p = if which == 0 { &mut layer.weight } else { &mut layer.bias };
                    p.data_mut()[i] = v;
                    loss(&n)
                };
                let layer = if l < body_layers { &net.body()[l] } else { &net.heads()[0] };
                let p = if which == 0 { &layer.weight } else { &layer.bias };
                check.add(g.data()[i], central(&mut f, p.data()[i]));
            }
        }
    }
    check
}

fn gated_objective(
    net: &Network,
    x: &Tensor,
    y: &[usize],
    emb: &UnitVectors,
    prev: &UnitVectors,
    s: f64,
    c: f64,
    scheme: RegScheme,
) -> f64 {
    let att = emb.map(|e| gate(e, s).unwrap());
    let gates = UnitGates { input: att.input.as_deref(), layers: &att.layers };
    let xent = softmax_xent_batch(&net.logits(x, 0, Some(gates)).unwrap(), y).unwrap().0;
    xent + c * sparsity_regularizer(&att, prev, scheme).unwrap().0
}

/// Task embeddings, through the gates into the loss and the regularizer,
/// before any compensation. Input attention is included.
pub fn check_attention(seed: u64) -> Check {
    let (net, x, y) = instance(seed);
    let mut rng = stream(seed, Stream::Embedding, 0);
    let s = 0.5 + 2.5 * uniform(1, &mut rng)[0];
    let c = 0.75;
    let scheme = RegScheme::WeightedL1;
    let emb = UnitVectors {
        input: Some(gaussian(&[UNITS], 1.0, &mut rng)),
        layers: vec![gaussian(&[UNITS], 1.0, &mut rng), gaussian(&[UNITS], 1.0, &mut rng)],
    };
    let prev = emb.map(|v| uniform(v.len(), &mut rng));

    let att = emb.map(|e| gate(e, s).unwrap());
    let gates = UnitGates { input: att.input.as_deref(), layers: &att.layers };
    let (logits, tape) = net.forward_train(&x, 0, Some(gates), &mut rng).unwrap();
    let (_, dlogits) = softmax_xent_batch(&logits, &y).unwrap();
    let g = net.backward(&tape, Some(gates), &dlogits, BackwardScope::Full).unwrap().gates.unwrap();
    let (_, dr) = sparsity_regularizer(&att, &prev, scheme).unwrap();
    let da = UnitVectors { input: g.input, layers: g.layers }.zip_with(&dr, |a, b| a + c * b).unwrap();

    let mut check = Check::new();
    let vectors: Vec<&Vec<f64>> = emb.iter().collect();
    let grads: Vec<&Vec<f64>> = da.iter().collect();
    for (k, e) in vectors.iter().enumerate() {
        let slope = gate_derivative(e, s).unwrap();
        for i in 0..e.len() {
            let mut f = |v: f64| {
                let mut moved = emb.clone();
                moved.iter_mut().nth(k).unwrap()[i] = v;
                gated_objective(&net, &x, &y, &moved, &prev, s, c, scheme)
            };
            check.add(grads[k][i] * slope[i], central(&mut f, e[i]));
        }
    }
    check
}

/// Regularizer gradient with respect to the attention values.
pub fn check_regularizer(seed: u64, scheme: RegScheme) -> Check {
    let mut rng = stream(seed, Stream::Embedding, 1);
    let a = UnitVectors {
        input: Some(uniform(UNITS, &mut rng)),
        layers: vec![uniform(UNITS, &mut rng), uniform(UNITS, &mut rng)],
    };
    let mut prev = a.map(|v| uniform(v.len(), &mut rng));
    // a few units fully claimed by the past
    prev.layers[0][0] = 1.0;
    prev.layers[1][3] = 1.0;
    let (_, grad) = sparsity_regularizer(&a, &prev, scheme).unwrap();
    let mut check = Check::new();
    let grads: Vec<&Vec<f64>> = grad.iter().collect();
    for (k, v) in a.iter().enumerate() {
        for i in 0..v.len() {
            let mut f = |val: f64| {
                let mut moved = a.clone();
                moved.iter_mut().nth(k).unwrap()[i] = val;
                sparsity_regularizer(&moved, &prev, scheme).unwrap().0
            };
            check.add(grads[k][i], central(&mut f, v[i]));
        }
    }
    check
}

/// Largest relative violation of `q′·s·σ(x)σ(−x) = q·s_max·σ(e)σ(−e)` with
/// `x = clamp(s·e)` over the grid of `e` and `s` for one `s_max`.
pub fn compensation_identity(s_max: f64) -> f64 {
    use hat_core::hat::{compensate_embedding_gradient, logistic, SCALE_CLAMP};
    let es = [-6.0, -2.0, 0.0, 2.0, 6.0];
    let ss = [1.0 / s_max, 1.0, 200.0, s_max];
    let q = 0.37;
    let mut worst = 0.0f64;
    for &e in &es {
        for &s in &ss {
            let qc = compensate_embedding_gradient(&[q], &[e], s, s_max).unwrap()[0];
            let x = (s * e).clamp(-SCALE_CLAMP, SCALE_CLAMP);
            let lhs = qc * s * logistic(x) * logistic(-x);
            let rhs = q * s_max * logistic(e) * logistic(-e);
            worst = worst.max((lhs - rhs).abs() / rhs.abs());
        }
    }
    worst
}
