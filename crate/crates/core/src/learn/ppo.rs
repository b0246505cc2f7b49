//! Clipped-surrogate policy optimisation for [`PolicyValueNet`].

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use super::net::{Features, ForwardCache, PolicyValueNet};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PpoConfig {
    pub clip: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub discount: f64,
    pub learning_rate: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            epochs: 4,
            minibatch_size: 250,
            discount: 0.99,
            learning_rate: 1e-3,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: Some(0.5),
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.clip >= 0.0 && self.clip.is_finite()) {
            return bad(format!("ppo clip must be >= 0, got {}", self.clip));
        }
        if self.epochs == 0 || self.minibatch_size == 0 {
            return bad("ppo epochs and minibatch size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return bad(format!("ppo discount must lie in [0, 1], got {}", self.discount));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "ppo learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        Ok(())
    }
}

/// One environment step as seen by a learner.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutStep {
    pub observation: Features,
    pub action: usize,
    pub team_reward: f64,
    pub done: bool,
}

/// Steps collected under the current policy, in time order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Rollout {
    pub steps: Vec<RolloutStep>,
    /// Value estimate of the state after the last step when the rollout was
    /// cut before the episode ended.
    pub bootstrap_value: Option<f64>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn push(&mut self, step: RolloutStep) {
        self.steps.push(step);
    }
}

/// Discounted return-to-go, reset at episode boundaries.
pub fn discounted_returns(rollout: &Rollout, discount: f64) -> Vec<f64> {
    let mut out = vec![0.0; rollout.len()];
    let mut acc = rollout.bootstrap_value.unwrap_or(0.0);
    for (i, s) in rollout.steps.iter().enumerate().rev() {
        if s.done {
            acc = 0.0;
        }
        acc = s.team_reward + discount * acc;
        out[i] = acc;
    }
    out
}

/// A rollout with the quantities the surrogate loss treats as constants.
#[derive(Clone, Debug, Default)]
pub struct PpoBatch {
    pub observations: Vec<Features>,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PpoBatch {
    /// Evaluates the current network on the rollout and computes returns and
    /// advantages (return minus value baseline).
    pub fn prepare(net: &PolicyValueNet, rollout: &Rollout, cfg: &PpoConfig) -> Result<Self> {
        if rollout.is_empty() {
            return Err(Error::EmptyRollout);
        }
        let returns = discounted_returns(rollout, cfg.discount);
        let mut batch = PpoBatch {
            returns,
            ..Default::default()
        };
        let mut cache = ForwardCache::default();
        for (i, s) in rollout.steps.iter().enumerate() {
            if s.action >= net.n_actions() {
                return Err(Error::ShapeMismatch {
                    got: s.action,
                    expected: net.n_actions(),
                });
            }
            if !s.team_reward.is_finite() {
                return Err(Error::NonFinite(format!("reward at step {i}")));
            }
            if s.observation.dim != net.input_dim() {
                return Err(Error::ShapeMismatch {
                    got: s.observation.dim,
                    expected: net.input_dim(),
                });
            }
            net.forward_into(&s.observation, &mut cache);
            batch.old_log_probs.push(cache.log_probs[s.action]);
            batch.advantages.push(batch.returns[i] - cache.value);
            batch.actions.push(s.action);
            batch.observations.push(s.observation.clone());
        }
        if cfg.normalize_advantages && batch.len() > 1 {
            let n = batch.len() as f64;
            let mean = batch.advantages.iter().sum::<f64>() / n;
            let var = batch.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if std > 1e-12 {
                for a in &mut batch.advantages {
                    *a = (*a - mean) / (std + 1e-8);
                }
            }
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Which loss terms to include; all on for training, selectively off for
/// tests that isolate one term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub surrogate: bool,
    pub value: bool,
    pub entropy: bool,
}

impl LossTerms {
    pub const ALL: LossTerms = LossTerms {
        surrogate: true,
        value: true,
        entropy: true,
    };
    pub const SURROGATE: LossTerms = LossTerms {
        surrogate: true,
        value: false,
        entropy: false,
    };
    pub const VALUE: LossTerms = LossTerms {
        surrogate: false,
        value: true,
        entropy: false,
    };
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub surrogate: f64,
    pub value: f64,
    pub entropy: f64,
    /// Fraction of samples whose ratio lies outside the clip range.
    pub clip_fraction: f64,
    pub max_ratio_deviation: f64,
}

/// Mean loss over `indices` of the batch,
/// `-min(r A, clip(r) A) + value_coef * (V - R)^2 / 2 - entropy_coef * H`,
/// and optionally its gradient (accumulated into `grad`, which is zeroed
/// first).
pub fn loss_and_grad(
    net: &PolicyValueNet,
    batch: &PpoBatch,
    indices: &[usize],
    cfg: &PpoConfig,
    terms: LossTerms,
    mut grad: Option<&mut [f64]>,
) -> LossParts {
    if let Some(g) = grad.as_deref_mut() {
        g.fill(0.0);
    }
    let n = indices.len() as f64;
    let mut parts = LossParts::default();
    let mut cache = ForwardCache::default();
    let mut d_logits = vec![0.0; net.n_actions()];
    let (lo, hi) = (1.0 - cfg.clip, 1.0 + cfg.clip);
    let mut clipped = 0usize;

    for &i in indices {
        let x = &batch.observations[i];
        net.forward_into(x, &mut cache);
        let a = batch.actions[i];
        let adv = batch.advantages[i];
        let ratio = (cache.log_probs[a] - batch.old_log_probs[i]).exp();
        parts.max_ratio_deviation = parts.max_ratio_deviation.max((ratio - 1.0).abs());
        if ratio < lo || ratio > hi {
            clipped += 1;
        }
        let unclipped = ratio * adv;
        let clipped_obj = ratio.clamp(lo, hi) * adv;
        // the unclipped branch carries the gradient whenever it is the min
        let through_ratio = unclipped <= clipped_obj;
        let surrogate = unclipped.min(clipped_obj);

        let entropy: f64 = -cache
            .probs
            .iter()
            .zip(&cache.log_probs)
            .map(|(p, lp)| p * lp)
            .sum::<f64>();
        let value_err = cache.value - batch.returns[i];

        if terms.surrogate {
            parts.surrogate -= surrogate / n;
        }
        if terms.value {
            parts.value += cfg.value_coef * 0.5 * value_err * value_err / n;
        }
        if terms.entropy {
            parts.entropy -= cfg.entropy_coef * entropy / n;
        }

        if let Some(g) = grad.as_deref_mut() {
            d_logits.fill(0.0);
            if terms.surrogate && through_ratio && adv != 0.0 {
                // d(-r A)/dz_k = -A r (1[k = a] - p_k)
                let scale = -adv * ratio / n;
                for (k, d) in d_logits.iter_mut().enumerate() {
                    let onehot = if k == a { 1.0 } else { 0.0 };
                    *d += scale * (onehot - cache.probs[k]);
                }
            }
            if terms.entropy && cfg.entropy_coef != 0.0 {
                // dH/dz_k = -p_k (log p_k + H)
                let scale = cfg.entropy_coef / n;
                for (k, d) in d_logits.iter_mut().enumerate() {
                    *d += scale * cache.probs[k] * (cache.log_probs[k] + entropy);
                }
            }
            let d_value = if terms.value {
                cfg.value_coef * value_err / n
            } else {
                0.0
            };
            net.backward(x, &cache, &d_logits, d_value, g);
        }
    }
    parts.total = parts.surrogate + parts.value + parts.entropy;
    parts.clip_fraction = clipped as f64 / n.max(1.0);
    parts
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// Descends along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    /// Largest `|ratio - 1|` over the first minibatch, evaluated before any
    /// parameter moved.
    pub first_ratio_deviation: f64,
    pub minibatches: usize,
}

/// Runs `cfg.epochs` passes of shuffled minibatch descent on the clipped
/// surrogate loss. Aborts without touching the network if a gradient turns
/// non-finite.
pub fn ppo_update(
    net: &mut PolicyValueNet,
    opt: &mut Adam,
    rollout: &Rollout,
    cfg: &PpoConfig,
    rng: &mut dyn RngCore,
) -> Result<UpdateStats> {
    cfg.validate()?;
    let batch = PpoBatch::prepare(net, rollout, cfg)?;
    ppo_update_batch(net, opt, &batch, cfg, LossTerms::ALL, rng)
}

pub fn ppo_update_batch(
    net: &mut PolicyValueNet,
    opt: &mut Adam,
    batch: &PpoBatch,
    cfg: &PpoConfig,
    terms: LossTerms,
    rng: &mut dyn RngCore,
) -> Result<UpdateStats> {
    if batch.is_empty() {
        return Err(Error::EmptyRollout);
    }
    let backup = net.params().to_vec();
    let mut grad = vec![0.0; net.n_params()];
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut stats = UpdateStats::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for (mb, chunk) in order.chunks(cfg.minibatch_size).enumerate() {
            let parts = loss_and_grad(net, batch, chunk, cfg, terms, Some(&mut grad));
            if epoch == 0 && mb == 0 {
                stats.first_ratio_deviation = parts.max_ratio_deviation;
            }
            if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
                net.params_mut().copy_from_slice(&backup);
                return Err(Error::NonFinite(format!(
                    "gradient of parameter {k} in epoch {epoch}, minibatch {mb} (loss {:.4e}, value loss {:.4e}, entropy {:.4e})",
                    parts.total, parts.value, parts.entropy
                )));
            }
            if let Some(max_norm) = cfg.max_grad_norm {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > max_norm {
                    let s = max_norm / norm;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
            }
            opt.step(net.params_mut(), &grad);
            stats.policy_loss += parts.surrogate;
            stats.value_loss += parts.value;
            stats.entropy += parts.entropy;
            stats.clip_fraction += parts.clip_fraction;
            stats.minibatches += 1;
        }
    }
    let k = stats.minibatches.max(1) as f64;
    stats.policy_loss /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    stats.clip_fraction /= k;
    Ok(stats)
}

/// Samples an action index from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// A network, its optimiser and the rollout collected since the last update.
#[derive(Clone, Debug)]
pub struct PpoLearner {
    pub net: PolicyValueNet,
    pub opt: Adam,
    pub cfg: PpoConfig,
    pub rollout: Rollout,
    cache: ForwardCache,
}

impl PpoLearner {
    pub fn new(net: PolicyValueNet, cfg: PpoConfig) -> Self {
        let opt = Adam::new(net.n_params(), cfg.learning_rate);
        PpoLearner {
            net,
            opt,
            cfg,
            rollout: Rollout::default(),
            cache: ForwardCache::default(),
        }
    }

    /// Samples an action for `obs` from the current policy.
    pub fn act(&mut self, obs: &Features, rng: &mut dyn RngCore) -> usize {
        self.net.forward_into(obs, &mut self.cache);
        sample_categorical(&self.cache.probs, rng)
    }

    pub fn record(&mut self, observation: Features, action: usize, team_reward: f64, done: bool) {
        self.rollout.push(RolloutStep {
            observation,
            action,
            team_reward,
            done,
        });
    }

    /// Updates on the stored rollout and clears it.
    pub fn update(&mut self, rng: &mut dyn RngCore) -> Result<UpdateStats> {
        let rollout = std::mem::take(&mut self.rollout);
        ppo_update(&mut self.net, &mut self.opt, &rollout, &self.cfg, rng)
    }
}
