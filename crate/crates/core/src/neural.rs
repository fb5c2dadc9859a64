//! Small fully connected networks with hand-written backpropagation, an Adam
//! optimizer, and a central-difference gradient checker.
//!
//! Parameters live in one flat vector. Each layer stores its weights row-major
//! (`outputs x inputs`) followed by its biases.

use std::io::{BufRead, BufReader, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite gradient in layer {layer} (parameter {param})")]
    NonFiniteGradient { layer: usize, param: usize },
    #[error("operation requires a softmax head")]
    NotSoftmax,
    #[error("action {action} out of range for {n} outputs")]
    BadAction { action: usize, n: usize },
    #[error("log-probability of action {0} is not finite")]
    ZeroProbability(usize),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative given the pre-activation `z` and output `y`.
    #[inline]
    fn deriv(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }
}

/// Transformation applied after the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Identity,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerSpec {
    fn n_params(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<LayerSpec>,
    offsets: Vec<usize>,
    head: Head,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    pub acts: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pub pre: Vec<Vec<f64>>,
    /// Network output after the head.
    pub output: Vec<f64>,
}

impl Trace {
    /// Output of the last layer, before the head.
    pub fn logits(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

impl Mlp {
    pub fn new(layers: Vec<LayerSpec>, head: Head) -> Self {
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for l in &layers {
            offsets.push(total);
            total += l.n_params();
        }
        Mlp {
            layers,
            offsets,
            head,
            params: vec![0.0; total],
        }
    }

    /// Chain of layers with sizes `sizes[0] -> sizes[1] -> ...`, `hidden`
    /// activation on all but the last layer.
    pub fn dense(sizes: &[usize], hidden: Activation, output: Activation, head: Head) -> Self {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| LayerSpec {
                inputs: sizes[i],
                outputs: sizes[i + 1],
                activation: if i + 1 == n { output } else { hidden },
            })
            .collect();
        Self::new(layers, head)
    }

    /// Softmax policy `linear -> relu(hidden) -> linear -> tanh -> softmax`;
    /// `tanh_logits = false` drops the tanh.
    pub fn policy(obs_dim: usize, n_actions: usize, hidden: usize, tanh_logits: bool) -> Self {
        let out = if tanh_logits {
            Activation::Tanh
        } else {
            Activation::Linear
        };
        Self::dense(&[obs_dim, hidden, n_actions], Activation::Relu, out, Head::Softmax)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    /// Parameter range `(start, end)` of layer `i`.
    pub fn layer_range(&self, i: usize) -> (usize, usize) {
        (self.offsets[i], self.offsets[i] + self.layers[i].n_params())
    }

    /// Layer owning flat parameter `p`.
    pub fn layer_of_param(&self, p: usize) -> usize {
        self.offsets.partition_point(|&o| o <= p) - 1
    }

    /// Draw every parameter i.i.d. uniform in `[-bound, bound]`. Each layer
    /// uses its own stream derived from `seed`, drawing biases before
    /// weights, so a layer's values do not depend on the other layers' shapes.
    pub fn init_uniform(&mut self, bound: f64, seed: u64) {
        for i in 0..self.layers.len() {
            self.init_layer_uniform(i, bound, seed);
        }
    }

    /// Redraw layer `i` alone, with the same stream `init_uniform` uses.
    pub fn init_layer_uniform(&mut self, i: usize, bound: f64, seed: u64) {
        let l = self.layers[i];
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64)));
        let start = self.offsets[i];
        let nw = l.inputs * l.outputs;
        for p in &mut self.params[start + nw..start + l.n_params()] {
            *p = rng.random_range(-bound..=bound);
        }
        for p in &mut self.params[start..start + nw] {
            *p = rng.random_range(-bound..=bound);
        }
    }

    /// Set the weights (not the biases) of layer `i` to zero.
    pub fn zero_weights(&mut self, i: usize) {
        let start = self.offsets[i];
        let n = self.layers[i].inputs * self.layers[i].outputs;
        self.params[start..start + n].iter_mut().for_each(|p| *p = 0.0);
    }

    /// `self <- tau * src + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, src: &Mlp, tau: f64) {
        for (t, s) in self.params.iter_mut().zip(&src.params) {
            *t = tau * s + (1.0 - tau) * *t;
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NeuralError> {
        if x.len() != self.input_dim() {
            return Err(NeuralError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NeuralError> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        for (l, &off) in self.layers.iter().zip(&self.offsets) {
            cur = self.layer_forward(l, off, &cur, None);
        }
        Ok(match self.head {
            Head::Identity => cur,
            Head::Softmax => softmax(&cur),
        })
    }

    fn layer_forward(&self, l: &LayerSpec, off: usize, x: &[f64], pre: Option<&mut Vec<f64>>) -> Vec<f64> {
        let w = &self.params[off..off + l.inputs * l.outputs];
        let b = &self.params[off + l.inputs * l.outputs..off + l.n_params()];
        let z: Vec<f64> = (0..l.outputs)
            .map(|o| {
                let row = &w[o * l.inputs..(o + 1) * l.inputs];
                b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        let y = z.iter().map(|&v| l.activation.apply(v)).collect();
        if let Some(pre) = pre {
            *pre = z;
        }
        y
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace, NeuralError> {
        self.check_input(x)?;
        let mut acts = vec![x.to_vec()];
        let mut pres = Vec::with_capacity(self.layers.len());
        for (l, &off) in self.layers.iter().zip(&self.offsets) {
            let mut pre = Vec::new();
            let y = self.layer_forward(l, off, acts.last().unwrap(), Some(&mut pre));
            pres.push(pre);
            acts.push(y);
        }
        let output = match self.head {
            Head::Identity => acts.last().unwrap().clone(),
            Head::Softmax => softmax(acts.last().unwrap()),
        };
        Ok(Trace {
            acts,
            pre: pres,
            output,
        })
    }

    /// Backpropagate `upstream = dJ/d(last layer output)` (before the head).
    /// Adds `scale * dJ/dparams` into `grads` and returns `dJ/dinput`.
    pub fn backward_into(&self, trace: &Trace, upstream: &[f64], scale: f64, grads: &mut [f64]) -> Vec<f64> {
        let mut delta = upstream.to_vec();
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            let off = self.offsets[i];
            let x = &trace.acts[i];
            let y = &trace.acts[i + 1];
            let dz: Vec<f64> = (0..l.outputs)
                .map(|o| delta[o] * l.activation.deriv(trace.pre[i][o], y[o]))
                .collect();
            let nw = l.inputs * l.outputs;
            for o in 0..l.outputs {
                let g = scale * dz[o];
                if g != 0.0 {
                    let row = &mut grads[off + o * l.inputs..off + (o + 1) * l.inputs];
                    for (r, xv) in row.iter_mut().zip(x) {
                        *r += g * xv;
                    }
                }
                grads[off + nw + o] += g;
            }
            let w = &self.params[off..off + nw];
            let mut prev = vec![0.0; l.inputs];
            for o in 0..l.outputs {
                if dz[o] != 0.0 {
                    let row = &w[o * l.inputs..(o + 1) * l.inputs];
                    for (p, wv) in prev.iter_mut().zip(row) {
                        *p += dz[o] * wv;
                    }
                }
            }
            delta = prev;
        }
        delta
    }

    /// `(dJ/dparams, dJ/dinput)` for `upstream` on the last layer output.
    pub fn backward(&self, trace: &Trace, upstream: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut g = vec![0.0; self.n_params()];
        let gi = self.backward_into(trace, upstream, 1.0, &mut g);
        (g, gi)
    }

    /// Probabilities of a softmax head.
    pub fn probs(&self, x: &[f64]) -> Result<Vec<f64>, NeuralError> {
        if self.head != Head::Softmax {
            return Err(NeuralError::NotSoftmax);
        }
        self.forward(x)
    }

    /// Most probable action, lowest index on ties.
    pub fn mode(&self, x: &[f64]) -> Result<usize, NeuralError> {
        let p = self.probs(x)?;
        let mut best = 0;
        for (i, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Sample an action by inverse CDF on one uniform draw.
    pub fn sample<R: Rng>(&self, x: &[f64], rng: &mut R) -> Result<usize, NeuralError> {
        let p = self.probs(x)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, v) in p.iter().enumerate() {
            acc += v;
            if u < acc {
                return Ok(i);
            }
        }
        Ok(p.len() - 1)
    }

    /// `log pi(a | x)` and its gradient with respect to all parameters.
    pub fn logprob_and_grad(&self, x: &[f64], a: usize) -> Result<(f64, Vec<f64>), NeuralError> {
        let mut g = vec![0.0; self.n_params()];
        let lp = self.logprob_grad_into(x, a, 1.0, &mut g)?;
        Ok((lp, g))
    }

    /// Adds `scale * grad log pi(a | x)` into `grads`; returns `log pi(a | x)`.
    pub fn logprob_grad_into(&self, x: &[f64], a: usize, scale: f64, grads: &mut [f64]) -> Result<f64, NeuralError> {
        if self.head != Head::Softmax {
            return Err(NeuralError::NotSoftmax);
        }
        let n = self.output_dim();
        if a >= n {
            return Err(NeuralError::BadAction { action: a, n });
        }
        let trace = self.forward_trace(x)?;
        let lp = log_softmax(trace.logits());
        if !lp[a].is_finite() {
            return Err(NeuralError::ZeroProbability(a));
        }
        // d log p_a / d z_k = [k == a] - p_k
        let up: Vec<f64> = (0..n)
            .map(|k| f64::from(u8::from(k == a)) - trace.output[k])
            .collect();
        self.backward_into(&trace, &up, scale, grads);
        Ok(lp[a])
    }

    /// Scalar output of a single-output identity-head network and its
    /// parameter gradient and input gradient.
    pub fn scalar_and_grads(&self, x: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), NeuralError> {
        let trace = self.forward_trace(x)?;
        let (g, gi) = self.backward(&trace, &[1.0]);
        Ok((trace.output[0], g, gi))
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<(), NeuralError> {
        let mut header = String::from("shape");
        for l in &self.layers {
            header.push_str(&format!(",{}x{}:{}", l.inputs, l.outputs, l.activation.name()));
        }
        header.push_str(match self.head {
            Head::Identity => ",identity",
            Head::Softmax => ",softmax",
        });
        writeln!(w, "{header}")?;
        for p in &self.params {
            writeln!(w, "{p}")?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: R) -> Result<Self, NeuralError> {
        let bad = |m: String| NeuralError::Checkpoint(m);
        let mut lines = BufReader::new(r).lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))??;
        let mut fields = header.trim().split(',');
        if fields.next() != Some("shape") {
            return Err(bad("missing shape header".into()));
        }
        let fields: Vec<&str> = fields.collect();
        let (head, layer_fields) = fields
            .split_last()
            .ok_or_else(|| bad("no layers".into()))?;
        let head = match *head {
            "identity" => Head::Identity,
            "softmax" => Head::Softmax,
            other => return Err(bad(format!("unknown head {other:?}"))),
        };
        let mut layers = Vec::new();
        for f in layer_fields {
            let (dims, act) = f.split_once(':').ok_or_else(|| bad(format!("layer {f:?}")))?;
            let (i, o) = dims.split_once('x').ok_or_else(|| bad(format!("layer {f:?}")))?;
            layers.push(LayerSpec {
                inputs: i.parse().map_err(|_| bad(format!("layer {f:?}")))?,
                outputs: o.parse().map_err(|_| bad(format!("layer {f:?}")))?,
                activation: Activation::parse(act).ok_or_else(|| bad(format!("activation {act:?}")))?,
            });
        }
        if layers.is_empty() {
            return Err(bad("no layers".into()));
        }
        let mut net = Mlp::new(layers, head);
        let mut params = Vec::with_capacity(net.n_params());
        for line in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            params.push(t.parse::<f64>().map_err(|_| bad(format!("parameter {t:?}")))?);
        }
        if params.len() != net.n_params() {
            return Err(bad(format!("expected {} parameters, found {}", net.n_params(), params.len())));
        }
        net.params = params;
        Ok(net)
    }
}

/// Per-row second moments for the weights of one layer: the squared gradient
/// of a whole row is summed before entering the moving average. With a
/// zero-initialized input layer this makes the update commute with any
/// orthogonal transformation of the inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowShared {
    pub layer: usize,
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    row_shared: Option<RowShared>,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            row_shared: None,
        }
    }

    pub fn with_row_shared(mut self, rs: RowShared) -> Self {
        self.row_shared = Some(rs);
        self
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam descent step on `net` along `grads`. Pass the
    /// negated gradient to ascend.
    pub fn step(&mut self, net: &mut Mlp, grads: &[f64]) -> Result<(), NeuralError> {
        if grads.len() != net.n_params() {
            return Err(NeuralError::DimensionMismatch {
                expected: net.n_params(),
                got: grads.len(),
            });
        }
        if let Some(p) = grads.iter().position(|g| !g.is_finite()) {
            return Err(NeuralError::NonFiniteGradient {
                layer: net.layer_of_param(p),
                param: p,
            });
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        for (m, g) in self.m.iter_mut().zip(grads) {
            *m = b1 * *m + (1.0 - b1) * g;
        }
        let shared = self.row_shared.map(|rs| {
            let (start, _) = net.layer_range(rs.layer);
            let l = net.layers()[rs.layer];
            (start, l.inputs, l.outputs)
        });
        let mut in_shared = vec![false; grads.len()];
        if let Some((start, cols, rows)) = shared {
            for r in 0..rows {
                let range = start + r * cols..start + (r + 1) * cols;
                let sq: f64 = grads[range.clone()].iter().map(|g| g * g).sum();
                for i in range {
                    self.v[i] = b2 * self.v[i] + (1.0 - b2) * sq;
                    in_shared[i] = true;
                }
            }
        }
        for i in 0..grads.len() {
            if !in_shared[i] {
                self.v[i] = b2 * self.v[i] + (1.0 - b2) * grads[i] * grads[i];
            }
        }
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (i, p) in net.params.iter_mut().enumerate() {
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Largest relative discrepancy between analytic and central-difference
/// gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReport {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compare `analytic` against central differences of `f` at `params` with
/// step `h`.
pub fn check_gradient<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    params: &[f64],
    analytic: &[f64],
    h: f64,
    floor: f64,
) -> GradientReport {
    let mut x = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(&x);
        x[i] = orig - h;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(rel_error(analytic[i], numeric, floor));
    }
    GradientReport {
        max_rel_error: worst,
        checked: x.len(),
    }
}
