//! Fully connected network with ReLU hidden layers and hand-written
//! backpropagation.
//!
//! Parameters live in one flat vector, layer by layer: the row-major weight
//! matrix (`out x in`) followed by the bias. Optimizers, soft updates,
//! checkpoints and finite-difference checks all work on that vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Tanh,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    output: OutputActivation,
    params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward_tape`]; `acts[0]` is the input
/// and `acts[l + 1]` the post-activation output of layer `l`.
#[derive(Clone, Debug)]
pub struct Tape {
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("tape holds the input at least")
    }
}

#[derive(Clone, Copy)]
struct LayerView {
    w: usize,
    b: usize,
    n_in: usize,
    n_out: usize,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Uniform `±1/sqrt(fan_in)` initialisation; the output layer uses
    /// `±final_scale` instead when given.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        output: OutputActivation,
        final_scale: Option<f64>,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut net = Self::zeros(sizes, output);
        let layers = net.layers();
        let last = layers.len() - 1;
        for (i, l) in layers.into_iter().enumerate() {
            let bound = match final_scale {
                Some(s) if i == last => s,
                _ => 1.0 / (l.n_in as f64).sqrt(),
            };
            for p in &mut net.params[l.w..l.b + l.n_out] {
                *p = rng.gen_range(-bound..=bound);
            }
        }
        net
    }

    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Self {
        Self { sizes: sizes.to_vec(), output, params: vec![0.0; param_count(sizes)] }
    }

    pub fn from_params(sizes: &[usize], output: OutputActivation, params: Vec<f64>) -> Result<Self> {
        let expected = param_count(sizes);
        if sizes.len() < 2 || params.len() != expected {
            return Err(Error::ShapeMismatch { expected, found: params.len() });
        }
        Ok(Self { sizes: sizes.to_vec(), output, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layers(&self) -> Vec<LayerView> {
        let mut off = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let v = LayerView { w: off, b: off + w[0] * w[1], n_in: w[0], n_out: w[1] };
                off += w[0] * w[1] + w[1];
                v
            })
            .collect()
    }

    fn affine(&self, l: LayerView, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let w = &self.params[l.w..l.b];
        let b = &self.params[l.b..l.b + l.n_out];
        for (row, bias) in w.chunks_exact(l.n_in).zip(b) {
            out.push(bias + dot(row, x));
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_tape(x).acts.pop().unwrap()
    }

    pub fn forward_tape(&self, x: &[f64]) -> Tape {
        assert_eq!(x.len(), self.input_dim(), "input width");
        let layers = self.layers();
        let last = layers.len() - 1;
        let mut acts = Vec::with_capacity(layers.len() + 1);
        acts.push(x.to_vec());
        for (i, l) in layers.into_iter().enumerate() {
            let mut y = Vec::with_capacity(l.n_out);
            self.affine(l, &acts[i], &mut y);
            if i < last {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            } else if self.output == OutputActivation::Tanh {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(y);
        }
        Tape { acts }
    }

    /// Accumulates `dL/dparams` into `grads` for the upstream gradient
    /// `grad_out = dL/doutput` and returns `dL/dinput`.
    pub fn backward(&self, tape: &Tape, grad_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        self.backprop(tape, grad_out, Some(grads))
    }

    /// `dL/dinput` only; parameter gradients are not formed.
    pub fn input_gradient(&self, tape: &Tape, grad_out: &[f64]) -> Vec<f64> {
        self.backprop(tape, grad_out, None)
    }

    fn backprop(&self, tape: &Tape, grad_out: &[f64], mut grads: Option<&mut [f64]>) -> Vec<f64> {
        let layers = self.layers();
        let out = tape.output();
        let mut delta: Vec<f64> = match self.output {
            OutputActivation::Tanh => grad_out.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect(),
            OutputActivation::Identity => grad_out.to_vec(),
        };
        for (i, l) in layers.iter().enumerate().rev() {
            let x = &tape.acts[i];
            if let Some(g) = grads.as_deref_mut() {
                let (gw, gb) = g[l.w..l.b + l.n_out].split_at_mut(l.b - l.w);
                for ((row, d), bias) in gw.chunks_exact_mut(l.n_in).zip(&delta).zip(gb.iter_mut()) {
                    *bias += d;
                    if *d != 0.0 {
                        row.iter_mut().zip(x).for_each(|(r, xi)| *r += d * xi);
                    }
                }
            }
            let w = &self.params[l.w..l.b];
            let mut dx = vec![0.0; l.n_in];
            for (row, d) in w.chunks_exact(l.n_in).zip(&delta) {
                if *d != 0.0 {
                    dx.iter_mut().zip(row).for_each(|(a, r)| *a += d * r);
                }
            }
            if i > 0 {
                // ReLU derivative from the stored post-activation
                dx.iter_mut().zip(x).for_each(|(g, a)| {
                    if *a <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            delta = dx;
        }
        delta
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.sizes == other.sizes
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// `target <- (1 - tau) * target + tau * online`.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if !target.same_shape(online) {
        return Err(Error::ShapeMismatch { expected: target.num_params(), found: online.num_params() });
    }
    for (t, o) in target.params.iter_mut().zip(&online.params) {
        *t = (1.0 - tau) * *t + tau * o;
    }
    Ok(())
}

/// Adam with the usual bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, n: usize) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}
