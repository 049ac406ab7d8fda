//! Multi-head MLP: a shared ReLU body and one linear output head per task.
//!
//! Hidden activations can be multiplied by per-unit gates after the ReLU
//! (`h′ = a ⊙ h`), and the raw input can optionally be gated the same way.
//! The backward pass returns the gate gradients `Σ_batch ∂L/∂h′ ⊙ h` so the
//! caller can chain them through whatever produced the gates.

use serde::{Deserialize, Serialize};

use super::init::{init_weights, InitScheme};
use super::layer::{affine, dense_backward_with, dense_forward, DenseCache, DenseLayer};
use crate::error::{arg_err, dim_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Body architecture: hidden widths and their dropout rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    /// One rate per hidden layer; empty means no dropout.
    #[serde(default)]
    pub dropout: Vec<f64>,
}

impl ModelSpec {
    pub fn new(hidden: Vec<usize>) -> Self {
        Self {
            hidden,
            dropout: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(arg_err!("hidden sizes must be non-empty and positive: {:?}", self.hidden));
        }
        if !self.dropout.is_empty() && self.dropout.len() != self.hidden.len() {
            return Err(arg_err!(
                "{} dropout rates for {} hidden layers",
                self.dropout.len(),
                self.hidden.len()
            ));
        }
        if let Some(r) = self.dropout.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(arg_err!("dropout rate {r} outside [0, 1)"));
        }
        Ok(())
    }

    fn dropout_for(&self, layer: usize) -> f64 {
        self.dropout.get(layer).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_dim: usize,
    body: Vec<DenseLayer>,
    heads: Vec<DenseLayer>,
}

/// Per-unit multiplicative gates for a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct UnitGates<'a> {
    pub input: Option<&'a [f64]>,
    pub layers: &'a [Vec<f64>],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardScope {
    Full,
    /// Only the head gradients; the body is treated as frozen.
    HeadOnly,
}

/// Everything the backward pass needs from one training forward pass.
#[derive(Debug)]
pub struct Tape {
    raw_input: Tensor,
    gated: bool,
    input_gated: bool,
    body: Vec<(DenseCache, Tensor)>,
    head: usize,
    head_cache: DenseCache,
}

#[derive(Debug, Clone)]
pub struct GateGrads {
    pub input: Option<Vec<f64>>,
    pub layers: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct NetGrads {
    /// `(dW, db)` per body layer; empty for [`BackwardScope::HeadOnly`].
    pub body: Vec<(Tensor, Tensor)>,
    pub head: (Tensor, Tensor),
    pub gates: Option<GateGrads>,
}

impl Network {
    /// Xavier-uniform weights, zero biases.
    pub fn new(input_dim: usize, spec: &ModelSpec, head_sizes: &[usize], rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        if input_dim == 0 {
            return Err(arg_err!("input dimension must be positive"));
        }
        if head_sizes.is_empty() || head_sizes.contains(&0) {
            return Err(arg_err!("head sizes must be non-empty and positive: {head_sizes:?}"));
        }
        let mut body = Vec::with_capacity(spec.hidden.len());
        let mut fan_in = input_dim;
        for (l, &width) in spec.hidden.iter().enumerate() {
            let w = init_weights(&[width, fan_in], InitScheme::XavierUniform, rng)?;
            body.push(DenseLayer::new(w, Tensor::zeros(&[width]), spec.dropout_for(l))?);
            fan_in = width;
        }
        let heads = head_sizes
            .iter()
            .map(|&k| {
                let w = init_weights(&[k, fan_in], InitScheme::XavierUniform, rng)?;
                DenseLayer::new(w, Tensor::zeros(&[k]), 0.0)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { input_dim, body, heads })
    }

    pub fn from_parts(input_dim: usize, body: Vec<DenseLayer>, heads: Vec<DenseLayer>) -> Result<Self> {
        let mut fan_in = input_dim;
        for (l, layer) in body.iter().enumerate() {
            if layer.inputs() != fan_in {
                return Err(dim_err!("body layer {l} expects {} inputs, chain gives {fan_in}", layer.inputs()));
            }
            fan_in = layer.outputs();
        }
        for (t, head) in heads.iter().enumerate() {
            if head.inputs() != fan_in {
                return Err(dim_err!("head {t} expects {} inputs, body gives {fan_in}", head.inputs()));
            }
        }
        Ok(Self { input_dim, body, heads })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn body(&self) -> &[DenseLayer] {
        &self.body
    }

    pub fn body_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.body
    }

    pub fn heads(&self) -> &[DenseLayer] {
        &self.heads
    }

    pub fn head_mut(&mut self, t: usize) -> Result<&mut DenseLayer> {
        let n = self.heads.len();
        self.heads
            .get_mut(t)
            .ok_or_else(|| arg_err!("no head {t} (network has {n})"))
    }

    /// Hidden widths `N_1..N_{L−1}`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        self.body.iter().map(|l| l.outputs()).collect()
    }

    /// Total number of body weights (biases excluded).
    pub fn body_weight_count(&self) -> usize {
        self.body.iter().map(|l| l.weight.len()).sum()
    }

    fn check_head(&self, head: usize) -> Result<()> {
        if head >= self.heads.len() {
            return Err(arg_err!("unknown task head {head} (network has {})", self.heads.len()));
        }
        Ok(())
    }

    fn check_gates(&self, gates: &UnitGates<'_>) -> Result<()> {
        if gates.layers.len() != self.body.len() {
            return Err(dim_err!("{} gate vectors for {} body layers", gates.layers.len(), self.body.len()));
        }
        for (l, (g, layer)) in gates.layers.iter().zip(&self.body).enumerate() {
            if g.len() != layer.outputs() {
                return Err(dim_err!("gate {l} has {} entries, layer has {} units", g.len(), layer.outputs()));
            }
        }
        if let Some(g) = gates.input {
            if g.len() != self.input_dim {
                return Err(dim_err!("input gate has {} entries, input has {}", g.len(), self.input_dim));
            }
        }
        Ok(())
    }

    /// Eval-mode logits for `head`.
    pub fn logits(&self, x: &Tensor, head: usize, gates: Option<UnitGates<'_>>) -> Result<Tensor> {
        self.check_head(head)?;
        if let Some(g) = &gates {
            self.check_gates(g)?;
        }
        let mut h = match gates.and_then(|g| g.input) {
            Some(a) => x.mul_row_broadcast(a)?,
            None => x.clone(),
        };
        for (l, layer) in self.body.iter().enumerate() {
            let mut z = affine(layer, &h)?;
            relu_in_place(&mut z);
            h = match &gates {
                Some(g) => z.mul_row_broadcast(&g.layers[l])?,
                None => z,
            };
        }
        affine(&self.heads[head], &h)
    }

    /// Training forward pass; dropout draws come from `rng`.
    pub fn forward_train(
        &self,
        x: &Tensor,
        head: usize,
        gates: Option<UnitGates<'_>>,
        rng: &mut Rng,
    ) -> Result<(Tensor, Tape)> {
        self.check_head(head)?;
        if let Some(g) = &gates {
            self.check_gates(g)?;
        }
        let input_gate = gates.and_then(|g| g.input);
        let mut h = match input_gate {
            Some(a) => x.mul_row_broadcast(a)?,
            None => x.clone(),
        };
        let mut body = Vec::with_capacity(self.body.len());
        for (l, layer) in self.body.iter().enumerate() {
            let (mut z, cache) = dense_forward(layer, &h, true, rng)?;
            relu_in_place(&mut z);
            h = match &gates {
                Some(g) => z.mul_row_broadcast(&g.layers[l])?,
                None => z.clone(),
            };
            body.push((cache, z));
        }
        let (logits, head_cache) = dense_forward(&self.heads[head], &h, true, rng)?;
        Ok((
            logits,
            Tape {
                raw_input: x.clone(),
                gated: gates.is_some(),
                input_gated: input_gate.is_some(),
                body,
                head,
                head_cache,
            },
        ))
    }

    /// Backward pass for a tape produced by [`Network::forward_train`] with
    /// the same `gates`.
    pub fn backward(
        &self,
        tape: &Tape,
        gates: Option<UnitGates<'_>>,
        dlogits: &Tensor,
        scope: BackwardScope,
    ) -> Result<NetGrads> {
        if gates.is_some() != tape.gated || gates.and_then(|g| g.input).is_some() != tape.input_gated {
            return Err(Error::State("gates differ from the ones used in the forward pass".into()));
        }
        if tape.body.len() != self.body.len() {
            return Err(Error::State("tape does not belong to this network".into()));
        }
        let head = &self.heads[tape.head];
        let full = scope == BackwardScope::Full;
        let hg = dense_backward_with(head, &tape.head_cache, dlogits, full)?;
        let head_grads = (hg.dw, hg.db);
        if !full {
            return Ok(NetGrads {
                body: Vec::new(),
                head: head_grads,
                gates: None,
            });
        }

        let mut d = hg.dx.expect("requested input gradient");
        let mut body_grads = Vec::with_capacity(self.body.len());
        let mut gate_grads = vec![Vec::new(); self.body.len()];
        for l in (0..self.body.len()).rev() {
            let (cache, h) = &tape.body[l];
            if let Some(g) = &gates {
                gate_grads[l] = column_dot(&d, h);
                d = d.mul_row_broadcast(&g.layers[l])?;
            }
            for (dv, hv) in d.data_mut().iter_mut().zip(h.data()) {
                if *hv <= 0.0 {
                    *dv = 0.0;
                }
            }
            let want_dx = l > 0 || tape.input_gated;
            let lg = dense_backward_with(&self.body[l], cache, &d, want_dx)?;
            body_grads.push((lg.dw, lg.db));
            if let Some(dx) = lg.dx {
                d = dx;
            }
        }
        body_grads.reverse();

        let gates_out = gates.map(|_| GateGrads {
            input: tape.input_gated.then(|| column_dot(&d, &tape.raw_input)),
            layers: gate_grads,
        });
        Ok(NetGrads {
            body: body_grads,
            head: head_grads,
            gates: gates_out,
        })
    }
}

fn relu_in_place(t: &mut Tensor) {
    for v in t.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// `Σ_n a[n, j]·b[n, j]` per column.
fn column_dot(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let c = a.cols();
    let mut out = vec![0.0; c];
    for (ra, rb) in a.data().chunks_exact(c).zip(b.data().chunks_exact(c)) {
        for ((o, x), y) in out.iter_mut().zip(ra).zip(rb) {
            *o += x * y;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::loss::softmax_xent_batch;
    use crate::rng::{stream, Stream};

    fn small_net(seed: u64) -> Network {
        let spec = ModelSpec::new(vec![6, 5]);
        Network::new(4, &spec, &[3, 2], &mut stream(seed, Stream::Init, 0)).unwrap()
    }

    #[test]
    fn eval_forward_is_pure() {
        let net = small_net(1);
        let x = Tensor::from_vec(&[2, 4], vec![0.1, 0.2, -0.3, 0.4, 1.0, -1.0, 0.5, 0.0]).unwrap();
        let a = net.logits(&x, 0, None).unwrap();
        let b = net.logits(&x, 0, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn train_forward_without_dropout_matches_eval() {
        let net = small_net(2);
        let gates = vec![vec![0.5; 6], vec![0.9; 5]];
        let g = UnitGates { input: None, layers: &gates };
        let x = Tensor::from_vec(&[1, 4], vec![0.3, -0.7, 0.2, 0.9]).unwrap();
        let eval = net.logits(&x, 1, Some(g)).unwrap();
        let (train, _) = net.forward_train(&x, 1, Some(g), &mut stream(0, Stream::Dropout, 0)).unwrap();
        assert_eq!(eval, train);
    }

    #[test]
    fn unknown_head_is_rejected() {
        let net = small_net(3);
        let x = Tensor::zeros(&[1, 4]);
        assert!(matches!(net.logits(&x, 2, None), Err(Error::Argument(_))));
    }

    #[test]
    fn head_only_backward_skips_body() {
        let net = small_net(4);
        let x = Tensor::from_vec(&[2, 4], vec![0.1, 0.2, 0.3, 0.4, -0.1, 0.0, 0.5, 0.2]).unwrap();
        let (logits, tape) = net.forward_train(&x, 0, None, &mut stream(0, Stream::Dropout, 0)).unwrap();
        let (_, d) = softmax_xent_batch(&logits, &[0, 2]).unwrap();
        let g = net.backward(&tape, None, &d, BackwardScope::HeadOnly).unwrap();
        assert!(g.body.is_empty());
        assert_eq!(g.head.0.shape(), &[3, 5]);
    }

    #[test]
    fn mismatched_gates_are_state_error() {
        let net = small_net(5);
        let x = Tensor::zeros(&[1, 4]);
        let (logits, tape) = net.forward_train(&x, 0, None, &mut stream(0, Stream::Dropout, 0)).unwrap();
        let gates = vec![vec![1.0; 6], vec![1.0; 5]];
        let g = UnitGates { input: None, layers: &gates };
        let err = net.backward(&tape, Some(g), &logits, BackwardScope::Full).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::new(vec![]).validate().is_err());
        assert!(ModelSpec { hidden: vec![3], dropout: vec![0.2, 0.5] }.validate().is_err());
        assert!(ModelSpec { hidden: vec![3], dropout: vec![1.0] }.validate().is_err());
        assert!(ModelSpec { hidden: vec![3, 4], dropout: vec![0.2, 0.5] }.validate().is_ok());
    }
}
