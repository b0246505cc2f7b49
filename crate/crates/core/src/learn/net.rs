//! Fully connected policy/value network with a shared tanh trunk, a softmax
//! policy head and a scalar value head. Gradients are computed by a
//! hand-written backward pass over this fixed architecture.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Sparse input vector. Cleanup observations are one-hot grids, so only the
/// active entries are stored.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Features {
    pub dim: usize,
    pub index: Vec<u32>,
    pub value: Vec<f64>,
}

impl Features {
    pub fn from_dense(x: &[f64]) -> Self {
        let mut f = Features {
            dim: x.len(),
            ..Default::default()
        };
        for (i, &v) in x.iter().enumerate() {
            if v != 0.0 {
                f.index.push(i as u32);
                f.value.push(v);
            }
        }
        f
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for (&i, &v) in self.index.iter().zip(&self.value) {
            x[i as usize] += v;
        }
        x
    }

    pub fn nnz(&self) -> usize {
        self.index.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    /// Offset of the row-major `fan_in x fan_out` weights; biases follow.
    offset: usize,
}

impl Layer {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    fn bias(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }

    fn end(&self) -> usize {
        self.offset + (self.fan_in + 1) * self.fan_out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyValueNet {
    input_dim: usize,
    n_actions: usize,
    hidden: Vec<Layer>,
    policy: Layer,
    value: Layer,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardCache {
    /// Post-activation output of every hidden layer.
    pub hidden: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub value: f64,
}

impl PolicyValueNet {
    /// Builds a network with Xavier-scaled Gaussian weights, zero biases, a
    /// policy head scaled by `0.01` and a unit-scale value head.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], n_actions: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(input_dim, hidden, n_actions);
        let layers: Vec<(Layer, f64)> = net
            .hidden
            .iter()
            .map(|l| (*l, 1.0))
            .chain([(net.policy, 0.01), (net.value, 1.0)])
            .collect();
        for (layer, gain) in layers {
            let std = gain * (2.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for w in &mut net.params[layer.weights()] {
                *w = rng.sample::<f64, _>(StandardNormal) * std;
            }
        }
        net
    }

    pub fn zeros(input_dim: usize, hidden: &[usize], n_actions: usize) -> Self {
        let mut offset = 0;
        let mut layer = |fan_in: usize, fan_out: usize| {
            let l = Layer {
                fan_in,
                fan_out,
                offset,
            };
            offset = l.end();
            l
        };
        let mut prev = input_dim;
        let mut hidden_layers = Vec::with_capacity(hidden.len());
        for &h in hidden {
            hidden_layers.push(layer(prev, h));
            prev = h;
        }
        let policy = layer(prev, n_actions);
        let value = layer(prev, 1);
        let n_params = value.end();
        PolicyValueNet {
            input_dim,
            n_actions,
            hidden: hidden_layers,
            policy,
            value,
            params: vec![0.0; n_params],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.hidden.iter().map(|l| l.fan_out).collect()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Indices of the parameters that only feed the policy head.
    pub fn policy_head_params(&self) -> std::ops::Range<usize> {
        self.policy.offset..self.policy.end()
    }

    pub fn value_head_params(&self) -> std::ops::Range<usize> {
        self.value.offset..self.value.end()
    }

    pub fn zero_policy_head(&mut self) {
        let range = self.policy_head_params();
        self.params[range].fill(0.0);
    }

    fn check_input(&self, x: &Features) -> Result<()> {
        if x.dim != self.input_dim {
            return Err(Error::ShapeMismatch {
                got: x.dim,
                expected: self.input_dim,
            });
        }
        if let Some(&i) = x.index.iter().find(|&&i| i as usize >= self.input_dim) {
            return Err(Error::ShapeMismatch {
                got: i as usize + 1,
                expected: self.input_dim,
            });
        }
        Ok(())
    }

    /// Action distribution and value estimate.
    pub fn forward(&self, x: &Features) -> Result<(Vec<f64>, f64)> {
        let cache = self.forward_cached(x)?;
        Ok((cache.probs, cache.value))
    }

    pub fn forward_dense(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.forward(&Features::from_dense(x))
    }

    pub fn forward_cached(&self, x: &Features) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut cache = ForwardCache::default();
        self.forward_into(x, &mut cache);
        Ok(cache)
    }

    pub(crate) fn forward_into(&self, x: &Features, cache: &mut ForwardCache) {
        cache.hidden.resize(self.hidden.len(), Vec::new());
        for (li, layer) in self.hidden.iter().enumerate() {
            let (done, rest) = cache.hidden.split_at_mut(li);
            let out = &mut rest[0];
            out.clear();
            out.extend_from_slice(&self.params[layer.bias()]);
            let w = &self.params[layer.weights()];
            if li == 0 {
                for (&i, &v) in x.index.iter().zip(&x.value) {
                    let row = &w[i as usize * layer.fan_out..(i as usize + 1) * layer.fan_out];
                    axpy(v, row, out);
                }
            } else {
                dense_affine(&done[li - 1], w, layer.fan_out, out);
            }
            for z in out.iter_mut() {
                *z = z.tanh();
            }
        }

        cache.logits.clear();
        cache.logits.extend_from_slice(&self.params[self.policy.bias()]);
        let mut value = [self.params[self.value.bias()][0]];
        match cache.hidden.last() {
            Some(h) => {
                dense_affine(
                    h,
                    &self.params[self.policy.weights()],
                    self.n_actions,
                    &mut cache.logits,
                );
                dense_affine(h, &self.params[self.value.weights()], 1, &mut value);
            }
            None => {
                let w = &self.params[self.policy.weights()];
                let wv = &self.params[self.value.weights()];
                for (&i, &v) in x.index.iter().zip(&x.value) {
                    let i = i as usize;
                    axpy(v, &w[i * self.n_actions..(i + 1) * self.n_actions], &mut cache.logits);
                    value[0] += v * wv[i];
                }
            }
        }
        cache.value = value[0];

        let max = cache.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + cache.logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        cache.log_probs.clear();
        cache.log_probs.extend(cache.logits.iter().map(|z| z - log_z));
        cache.probs.clear();
        cache.probs.extend(cache.log_probs.iter().map(|lp| lp.exp()));
    }

    /// Accumulates `d loss / d params` into `grad`, given the loss gradient
    /// with respect to the logits and to the value output.
    pub fn backward(&self, x: &Features, cache: &ForwardCache, d_logits: &[f64], d_value: f64, grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let n_hidden = self.hidden.len();

        for (k, &d) in d_logits.iter().enumerate() {
            grad[self.policy.bias().start + k] += d;
        }
        grad[self.value.bias().start] += d_value;

        let Some(last) = cache.hidden.last() else {
            let wp = self.policy.weights().start;
            let wv = self.value.weights().start;
            for (&i, &v) in x.index.iter().zip(&x.value) {
                let i = i as usize;
                axpy(
                    v,
                    d_logits,
                    &mut grad[wp + i * self.n_actions..wp + (i + 1) * self.n_actions],
                );
                grad[wv + i] += v * d_value;
            }
            return;
        };

        // heads
        let wp = self.policy.weights().start;
        let wv = self.value.weights().start;
        let width = last.len();
        let mut delta = vec![0.0; width];
        {
            let w = &self.params[self.policy.weights()];
            let w_val = &self.params[self.value.weights()];
            for j in 0..width {
                let a = last[j];
                let g = &mut grad[wp + j * self.n_actions..wp + (j + 1) * self.n_actions];
                axpy(a, d_logits, g);
                grad[wv + j] += a * d_value;
                let row = &w[j * self.n_actions..(j + 1) * self.n_actions];
                delta[j] = dot(row, d_logits) + w_val[j] * d_value;
            }
        }

        for li in (0..n_hidden).rev() {
            let layer = self.hidden[li];
            let out = &cache.hidden[li];
            for (d, &a) in delta.iter_mut().zip(out) {
                *d *= 1.0 - a * a;
            }
            let b = layer.bias().start;
            for (g, &d) in grad[b..b + layer.fan_out].iter_mut().zip(&delta) {
                *g += d;
            }
            let w0 = layer.weights().start;
            if li == 0 {
                for (&i, &v) in x.index.iter().zip(&x.value) {
                    let i = i as usize;
                    axpy(
                        v,
                        &delta,
                        &mut grad[w0 + i * layer.fan_out..w0 + (i + 1) * layer.fan_out],
                    );
                }
            } else {
                let input = &cache.hidden[li - 1];
                let w = &self.params[layer.weights()];
                let mut prev = vec![0.0; layer.fan_in];
                for (i, &a) in input.iter().enumerate() {
                    axpy(
                        a,
                        &delta,
                        &mut grad[w0 + i * layer.fan_out..w0 + (i + 1) * layer.fan_out],
                    );
                    prev[i] = dot(&w[i * layer.fan_out..(i + 1) * layer.fan_out], &delta);
                }
                delta = prev;
            }
        }
    }

    /// Text checkpoint: a version header, the architecture, then one
    /// parameter per line in shortest round-trip form.
    pub fn to_checkpoint(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{CHECKPOINT_HEADER}");
        let hidden: Vec<String> = self.hidden_sizes().iter().map(|h| h.to_string()).collect();
        let _ = writeln!(s, "input {}", self.input_dim);
        let _ = writeln!(s, "hidden {}", hidden.join(" "));
        let _ = writeln!(s, "actions {}", self.n_actions);
        let _ = writeln!(s, "params {}", self.params.len());
        for p in &self.params {
            let _ = writeln!(s, "{p:?}");
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some(CHECKPOINT_HEADER) {
            return Err(bad("missing or unsupported version header"));
        }
        let mut field = |name: &str| -> Result<Vec<usize>> {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            let rest = line
                .strip_prefix(name)
                .ok_or_else(|| Error::Checkpoint(format!("expected {name:?}, found {line:?}")))?;
            rest.split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::Checkpoint(format!("bad number {t:?}"))))
                .collect()
        };
        let input = *field("input")?.first().ok_or_else(|| bad("input size"))?;
        let hidden = field("hidden")?;
        let actions = *field("actions")?.first().ok_or_else(|| bad("action count"))?;
        let count = *field("params")?.first().ok_or_else(|| bad("parameter count"))?;
        let mut net = Self::zeros(input, &hidden, actions);
        if net.params.len() != count {
            return Err(bad("parameter count does not match the architecture"));
        }
        for (i, p) in net.params.iter_mut().enumerate() {
            let line = lines
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {i}")))?;
            *p = line
                .trim()
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad parameter {line:?}")))?;
        }
        Ok(net)
    }
}

pub const CHECKPOINT_HEADER: &str = "teams-policy-value-net v1";

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += input^T W` for row-major `W` of shape `input.len() x fan_out`.
#[inline]
fn dense_affine(input: &[f64], w: &[f64], fan_out: usize, out: &mut [f64]) {
    for (i, &a) in input.iter().enumerate() {
        axpy(a, &w[i * fan_out..(i + 1) * fan_out], out);
    }
}
