//! Feed-forward encoder with three linear heads and the treatment log-effect
//! vector, plus hand-written backpropagation and an Adam optimizer.
//!
//! Layout: `x -> [tanh(W x + b)]* -> repr`, then `f = F repr + bf` (Z-gate
//! logits, K), `g = G repr + bg` (phenogroup-gate logits, M) and
//! `h = H repr + bh` (per-cluster log hazard ratios, K). With no hidden layers
//! the representation is the input itself.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{CmheError, Result};
use crate::rng::{substream, Stream};

/// Dense affine layer with row-major `outputs x inputs` weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn random<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| dist.sample(rng)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    /// Accumulates parameter gradients for upstream `dy` at input `x` into
    /// `grad`, and adds `W^T dy` into `dx`.
    fn backprop(&self, x: &[f64], dy: &[f64], grad: &mut Dense, dx: &mut [f64]) {
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = o * self.inputs;
            for (i, &xi) in x.iter().enumerate() {
                grad.weights[row + i] += g * xi;
                dx[i] += g * self.weights[row + i];
            }
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// All trainable parameters. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmheParams {
    pub encoder: Vec<Dense>,
    pub head_f: Dense,
    pub head_g: Dense,
    pub head_h: Dense,
    /// Treatment log hazard ratio per phenogroup.
    pub omega: Vec<f64>,
}

/// Output of one forward pass; also the shape of upstream gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub repr: Vec<f64>,
    pub f_logits: Vec<f64>,
    pub g_logits: Vec<f64>,
    pub h_values: Vec<f64>,
}

impl ForwardOutput {
    pub fn zeros(repr_dim: usize, k: usize, m: usize) -> Self {
        Self {
            repr: vec![0.0; repr_dim],
            f_logits: vec![0.0; k],
            g_logits: vec![0.0; m],
            h_values: vec![0.0; k],
        }
    }
}

impl CmheParams {
    /// Fan-in scaled uniform weights, zero biases and zero treatment effects.
    pub fn init(d: usize, hidden: &[usize], k: usize, m: usize, seed: u64) -> Result<Self> {
        if d == 0 || k == 0 || m == 0 || hidden.contains(&0) {
            return Err(CmheError::invalid(format!(
                "dimensions must be positive (d={d}, hidden={hidden:?}, K={k}, M={m})"
            )));
        }
        let mut rng = substream(seed, Stream::Init);
        let mut encoder = Vec::with_capacity(hidden.len());
        let mut width = d;
        for &h in hidden {
            encoder.push(Dense::random(width, h, &mut rng));
            width = h;
        }
        Ok(Self {
            encoder,
            head_f: Dense::random(width, k, &mut rng),
            head_g: Dense::random(width, m, &mut rng),
            head_h: Dense::random(width, k, &mut rng),
            omega: vec![0.0; m],
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
            head_f: Dense::zeros(self.head_f.inputs, self.head_f.outputs),
            head_g: Dense::zeros(self.head_g.inputs, self.head_g.outputs),
            head_h: Dense::zeros(self.head_h.inputs, self.head_h.outputs),
            omega: vec![0.0; self.omega.len()],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.first().map_or(self.head_f.inputs, |l| l.inputs)
    }

    pub fn repr_dim(&self) -> usize {
        self.head_f.inputs
    }

    pub fn k(&self) -> usize {
        self.head_f.outputs
    }

    pub fn m(&self) -> usize {
        self.omega.len()
    }

    pub fn param_count(&self) -> usize {
        self.encoder.iter().map(Dense::param_count).sum::<usize>()
            + self.head_f.param_count()
            + self.head_g.param_count()
            + self.head_h.param_count()
            + self.omega.len()
    }

    /// Checks that layer shapes chain and all values are finite.
    pub fn validate(&self) -> Result<()> {
        let mut width = self.input_dim();
        for (i, l) in self.encoder.iter().enumerate() {
            if l.inputs != width || l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(CmheError::shape(format!("encoder layer {i} is inconsistent")));
            }
            width = l.outputs;
        }
        for (name, head) in [("head_f", &self.head_f), ("head_g", &self.head_g), ("head_h", &self.head_h)] {
            if head.inputs != width
                || head.weights.len() != head.inputs * head.outputs
                || head.bias.len() != head.outputs
            {
                return Err(CmheError::shape(format!("{name} is inconsistent with the encoder")));
            }
        }
        if self.head_h.outputs != self.head_f.outputs || self.head_g.outputs != self.omega.len() {
            return Err(CmheError::shape("head widths disagree with K or M"));
        }
        for (name, block) in self.blocks() {
            if block.iter().any(|v| !v.is_finite()) {
                return Err(CmheError::NonFinite { block: name });
            }
        }
        Ok(())
    }

    /// Named parameter blocks in a fixed order.
    pub fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (i, l) in self.encoder.iter().enumerate() {
            out.push((format!("encoder.{i}.weights"), &l.weights));
            out.push((format!("encoder.{i}.bias"), &l.bias));
        }
        for (name, head) in [("head_f", &self.head_f), ("head_g", &self.head_g), ("head_h", &self.head_h)] {
            out.push((format!("{name}.weights"), &head.weights));
            out.push((format!("{name}.bias"), &head.bias));
        }
        out.push(("omega".into(), &self.omega));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.encoder {
            out.push(&mut l.weights);
            out.push(&mut l.bias);
        }
        for head in [&mut self.head_f, &mut self.head_g, &mut self.head_h] {
            out.push(&mut head.weights);
            out.push(&mut head.bias);
        }
        out.push(&mut self.omega);
        out
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardOutput> {
        if x.len() != self.input_dim() {
            return Err(CmheError::shape(format!(
                "input has dimension {}, expected {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut a = x.to_vec();
        for l in &self.encoder {
            a = l.apply(&a);
            a.iter_mut().for_each(|v| *v = v.tanh());
        }
        Ok(ForwardOutput {
            f_logits: self.head_f.apply(&a),
            g_logits: self.head_g.apply(&a),
            h_values: self.head_h.apply(&a),
            repr: a,
        })
    }

    /// Exact gradient of `sum_i <upstream_i, forward(x_i)>` with respect to the
    /// encoder and head parameters. The returned `omega` block is zero: the
    /// treatment effects do not enter the forward pass and their gradient is
    /// supplied by the objective.
    pub fn backward<X: AsRef<[f64]>>(&self, xs: &[X], upstream: &[ForwardOutput]) -> Result<CmheParams> {
        if xs.len() != upstream.len() {
            return Err(CmheError::shape(format!(
                "{} inputs but {} upstream gradients",
                xs.len(),
                upstream.len()
            )));
        }
        let (k, m, r) = (self.k(), self.m(), self.repr_dim());
        let mut grad = self.zeros_like();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.encoder.len() + 1);
        for (x, up) in xs.iter().zip(upstream) {
            let x = x.as_ref();
            if x.len() != self.input_dim() {
                return Err(CmheError::shape("input dimension mismatch in backward"));
            }
            if up.f_logits.len() != k || up.h_values.len() != k || up.g_logits.len() != m || up.repr.len() != r {
                return Err(CmheError::shape("upstream gradient does not match output shape"));
            }
            acts.clear();
            acts.push(x.to_vec());
            for l in &self.encoder {
                let mut a = l.apply(acts.last().expect("non-empty"));
                a.iter_mut().for_each(|v| *v = v.tanh());
                acts.push(a);
            }
            let repr = acts.last().expect("non-empty");
            let mut d_act = up.repr.clone();
            self.head_f.backprop(repr, &up.f_logits, &mut grad.head_f, &mut d_act);
            self.head_g.backprop(repr, &up.g_logits, &mut grad.head_g, &mut d_act);
            self.head_h.backprop(repr, &up.h_values, &mut grad.head_h, &mut d_act);
            for (li, layer) in self.encoder.iter().enumerate().rev() {
                let out = &acts[li + 1];
                let dz: Vec<f64> = d_act.iter().zip(out).map(|(g, a)| g * (1.0 - a * a)).collect();
                let mut d_in = vec![0.0; layer.inputs];
                layer.backprop(&acts[li], &dz, &mut grad.encoder[li], &mut d_in);
                d_act = d_in;
            }
        }
        Ok(grad)
    }
}

/// Numerically stable log of the normalized exponential.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Adam state over a list of parameter blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(block_sizes: &[usize], learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: block_sizes.iter().map(|&s| vec![0.0; s]).collect(),
            second_moment: block_sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    pub fn for_params(params: &CmheParams, learning_rate: f64) -> Self {
        let sizes: Vec<usize> = params.blocks().iter().map(|(_, b)| b.len()).collect();
        Self::new(&sizes, learning_rate)
    }

    /// One bias-corrected descent step. Gradients are checked for finiteness
    /// before anything is modified.
    pub fn step_blocks(&mut self, params: &mut [&mut [f64]], grads: &[(String, &[f64])]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(CmheError::shape("optimizer block count mismatch"));
        }
        for ((p, (name, g)), m) in params.iter().zip(grads).zip(&self.first_moment) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(CmheError::shape(format!("block `{name}` has mismatched length")));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(CmheError::NonFinite { block: name.clone() });
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (bi, (p, (_, g))) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first_moment[bi];
            let v = &mut self.second_moment[bi];
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Descent step on `params` using the gradient of the loss to be minimized.
pub fn adam_step(params: &mut CmheParams, grads: &CmheParams, state: &mut OptimizerState) -> Result<()> {
    let grad_blocks = grads.blocks();
    let mut blocks = params.blocks_mut();
    state.step_blocks(&mut blocks, &grad_blocks)
}
