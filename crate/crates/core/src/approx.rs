//! Small feed-forward networks with hand-written backpropagation.
//!
//! A [`Mlp`] stores all weights in one flat vector. Layer `l` maps
//! `in_l -> out_l` and occupies `out_l * in_l` row-major weights followed by
//! `out_l` biases. Hidden layers use the configured activation; the output
//! layer is linear. A network with no hidden layers is a linear model, which
//! with one-hot inputs gives exact tabular parameterizations.
//!
//! [`SoftmaxPolicy`] and [`ValueFunction`] are heads over the same network.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn default_init_scale() -> f64 {
    0.1
}

fn default_activation() -> Activation {
    Activation::Tanh
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub init_seed: u64,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

impl MlpSpec {
    /// Two tanh hidden layers of width 32, init scale 0.1.
    pub fn standard(input_dim: usize, output_dim: usize, init_seed: u64) -> Self {
        MlpSpec {
            input_dim,
            hidden: vec![32, 32],
            output_dim,
            activation: Activation::Tanh,
            init_seed,
            init_scale: 0.1,
        }
    }

    /// Linear model (no hidden layers).
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        MlpSpec {
            input_dim,
            hidden: Vec::new(),
            output_dim,
            activation: Activation::Tanh,
            init_seed: 0,
            init_scale: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("mlp.input_dim", "must be at least 1"));
        }
        if self.output_dim == 0 {
            return Err(Error::config("mlp.output_dim", "must be at least 1"));
        }
        if let Some(i) = self.hidden.iter().position(|&w| w == 0) {
            return Err(Error::config(format!("mlp.hidden[{i}]"), "width must be at least 1"));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::config("mlp.init_scale", "must be a positive finite number"));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.output_dim);
        w
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|p| p[1] * p[0] + p[1]).sum()
    }
}

/// Layer activations recorded during a forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    /// `acts[0]` is the input; `acts[l]` is the input of layer `l`.
    acts: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<f64>,
}

impl Mlp {
    /// Parameters drawn uniformly from `[-init_scale, init_scale]` with the
    /// spec's seed.
    pub fn new(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = seed::rng(spec.init_seed);
        let s = spec.init_scale;
        let params = (0..spec.param_count())
            .map(|_| rng.random_range(-s..=s))
            .collect();
        Ok(Mlp { spec, params })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let params = vec![0.0; spec.param_count()];
        Ok(Mlp { spec, params })
    }

    pub fn from_params(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        check_len("mlp.params", spec.param_count(), params.len())?;
        check_finite("mlp.params", &params)?;
        Ok(Mlp { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        check_len("mlp.params", self.params.len(), params.len())?;
        self.params = params;
        Ok(())
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Number of parameters in the last layer (weights then biases).
    pub fn output_layer_len(&self) -> usize {
        let fan_in = self.spec.hidden.last().copied().unwrap_or(self.spec.input_dim);
        (fan_in + 1) * self.spec.output_dim
    }

    pub fn zero_output_layer(&mut self) {
        let n = self.params.len() - self.output_layer_len();
        self.params[n..].iter_mut().for_each(|p| *p = 0.0);
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        check_len("network input", self.spec.input_dim, x.len())?;
        check_finite("network input", x)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.output)
    }

    pub fn trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let widths = self.spec.widths();
        let n_layers = widths.len() - 1;
        let mut acts = Vec::with_capacity(n_layers);
        let mut cur = x.to_vec();
        let mut offset = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let w = &self.params[offset..offset + fan_out * fan_in];
            let b = &self.params[offset + fan_out * fan_in..offset + fan_out * fan_in + fan_out];
            offset += fan_out * fan_in + fan_out;
            let mut next: Vec<f64> = w
                .chunks_exact(fan_in)
                .zip(b)
                .map(|(row, bias)| bias + row.iter().zip(&cur).map(|(a, c)| a * c).sum::<f64>())
                .collect();
            if l + 1 < n_layers {
                let act = self.spec.activation;
                next.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            acts.push(std::mem::replace(&mut cur, next));
        }
        Ok(Trace { acts, output: cur })
    }

    /// Vector-Jacobian product: adds `grad_out^T d(output)/d(params)` into
    /// `grad` and returns `grad_out^T d(output)/d(input)`.
    pub fn backward_accumulate(&self, trace: &Trace, grad_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.params.len());
        let widths = self.spec.widths();
        let n_layers = widths.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += widths[l + 1] * widths[l] + widths[l + 1];
        }
        let mut delta = grad_out.to_vec();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let input = &trace.acts[l];
            let w_off = offsets[l];
            let b_off = w_off + fan_out * fan_in;
            let mut delta_in = vec![0.0; fan_in];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = w_off + o * fan_in;
                let g_row = &mut grad[row..row + fan_in];
                for (gi, xi) in g_row.iter_mut().zip(input) {
                    *gi += d * xi;
                }
                grad[b_off + o] += d;
                let w_row = &self.params[row..row + fan_in];
                for (di, wi) in delta_in.iter_mut().zip(w_row) {
                    *di += wi * d;
                }
            }
            if l > 0 {
                let act = self.spec.activation;
                for (di, yi) in delta_in.iter_mut().zip(input) {
                    *di *= act.derivative_from_output(*yi);
                }
            }
            delta = delta_in;
        }
        delta
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|source| Error::Json {
            context: format!("encoding checkpoint {}", path.display()),
            source,
        })?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: Mlp = serde_json::from_str(&text).map_err(|source| Error::Json {
            context: format!("decoding checkpoint {}", path.display()),
            source,
        })?;
        Mlp::from_params(raw.spec, raw.params)
    }
}

/// `params - lr * grad`.
pub fn sgd_step(params: &[f64], grad: &[f64], lr: f64) -> Result<Vec<f64>> {
    let mut out = params.to_vec();
    sgd_step_in_place(&mut out, grad, lr)?;
    Ok(out)
}

pub fn sgd_step_in_place(params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::config("lr", format!("learning rate must be positive, got {lr}")));
    }
    check_len("gradient", params.len(), grad.len())?;
    check_finite("gradient", grad)?;
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= lr * g;
    }
    Ok(())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Anything that assigns action probabilities to a state.
pub trait StochasticPolicy {
    fn n_actions(&self) -> usize;
    fn action_probs(&self, state: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug)]
pub struct UniformPolicy {
    pub n_actions: usize,
}

impl StochasticPolicy for UniformPolicy {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn action_probs(&self, _state: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![1.0 / self.n_actions as f64; self.n_actions])
    }
}

/// Draw an action index from a probability vector.
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Softmax policy over a discrete action set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SoftmaxPolicy {
    net: Mlp,
}

impl SoftmaxPolicy {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        Ok(SoftmaxPolicy { net: Mlp::new(spec)? })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        Ok(SoftmaxPolicy {
            net: Mlp::zeros(spec)?,
        })
    }

    pub fn from_network(net: Mlp) -> Self {
        SoftmaxPolicy { net }
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        self.net.set_params(params)
    }

    pub fn logits(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(state)
    }

    pub fn probs(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(state)?))
    }

    pub fn log_probs(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.logits(state)?))
    }

    fn check_action(&self, action: usize) -> Result<()> {
        let n = self.net.spec().output_dim;
        if action < n {
            Ok(())
        } else {
            Err(Error::Index {
                what: "action",
                index: action,
                len: n,
            })
        }
    }

    /// `grad += coef * d log pi(action | state) / d params`; returns
    /// `pi(.|state)` as computed on the way.
    pub fn accumulate_grad_log_prob(
        &self,
        state: &[f64],
        action: usize,
        coef: f64,
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        self.check_action(action)?;
        let trace = self.net.trace(state)?;
        let probs = softmax(trace.output());
        // d log softmax_a / d logits = e_a - pi
        let grad_logits: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(j, p)| coef * (if j == action { 1.0 } else { 0.0 } - p))
            .collect();
        self.net.backward_accumulate(&trace, &grad_logits, grad);
        Ok(probs)
    }

    pub fn grad_log_prob(&self, state: &[f64], action: usize) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.params().len()];
        self.accumulate_grad_log_prob(state, action, 1.0, &mut grad)?;
        Ok(grad)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.net.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(SoftmaxPolicy {
            net: Mlp::load(path)?,
        })
    }
}

impl StochasticPolicy for SoftmaxPolicy {
    fn n_actions(&self) -> usize {
        self.net.spec().output_dim
    }

    fn action_probs(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.probs(state)
    }
}

/// Scalar state-value head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueFunction {
    net: Mlp,
}

impl ValueFunction {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        check_len("value head output_dim", 1, spec.output_dim)?;
        Ok(ValueFunction { net: Mlp::new(spec)? })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        check_len("value head output_dim", 1, spec.output_dim)?;
        Ok(ValueFunction {
            net: Mlp::zeros(spec)?,
        })
    }

    pub fn from_network(net: Mlp) -> Result<Self> {
        check_len("value head output_dim", 1, net.spec().output_dim)?;
        Ok(ValueFunction { net })
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        self.net.set_params(params)
    }

    pub fn value(&self, state: &[f64]) -> Result<f64> {
        Ok(self.net.forward(state)?[0])
    }

    /// `grad += coef * dV/dparams`; returns `V(state)`.
    pub fn accumulate_grad(&self, state: &[f64], coef: f64, grad: &mut [f64]) -> Result<f64> {
        let trace = self.net.trace(state)?;
        let v = trace.output()[0];
        self.net.backward_accumulate(&trace, &[coef], grad);
        Ok(v)
    }

    pub fn value_and_grad(&self, state: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.params().len()];
        let v = self.accumulate_grad(state, 1.0, &mut grad)?;
        check_finite("value gradient", &grad)?;
        Ok((v, grad))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.net.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let net = Mlp::load(path)?;
        check_len("value head output_dim", 1, net.spec().output_dim)?;
        Ok(ValueFunction { net })
    }
}
