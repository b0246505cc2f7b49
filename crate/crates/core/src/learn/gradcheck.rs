//! Central-difference verification of the analytic PPO gradients.

use super::net::PolicyValueNet;
use super::ppo::{loss_and_grad, LossTerms, PpoBatch, PpoConfig};

/// Denominator floor for the relative error, so that parameters whose
/// gradient is numerically zero are judged on absolute error instead.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub worst_param: usize,
}

/// Compares the analytic gradient of the full loss over the whole batch with
/// `(f(theta + h e_k) - f(theta - h e_k)) / 2h` for every parameter `k`.
pub fn finite_difference_check(net: &PolicyValueNet, batch: &PpoBatch, cfg: &PpoConfig, h: f64) -> GradCheck {
    finite_difference_check_terms(net, batch, cfg, LossTerms::ALL, h)
}

pub fn finite_difference_check_terms(
    net: &PolicyValueNet,
    batch: &PpoBatch,
    cfg: &PpoConfig,
    terms: LossTerms,
    h: f64,
) -> GradCheck {
    assert!(h > 0.0, "step size must be positive");
    let all: Vec<usize> = (0..batch.len()).collect();
    let mut analytic = vec![0.0; net.n_params()];
    loss_and_grad(net, batch, &all, cfg, terms, Some(&mut analytic));

    let mut probe = net.clone();
    let mut out = GradCheck {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        worst_param: 0,
    };
    for k in 0..net.n_params() {
        let theta = net.params()[k];
        probe.params_mut()[k] = theta + h;
        let up = loss_and_grad(&probe, batch, &all, cfg, terms, None).total;
        probe.params_mut()[k] = theta - h;
        let down = loss_and_grad(&probe, batch, &all, cfg, terms, None).total;
        probe.params_mut()[k] = theta;

        let numeric = (up - down) / (2.0 * h);
        let abs = (numeric - analytic[k]).abs();
        let rel = abs / numeric.abs().max(analytic[k].abs()).max(RELATIVE_FLOOR);
        out.max_absolute_error = out.max_absolute_error.max(abs);
        if rel > out.max_relative_error {
            out.max_relative_error = rel;
            out.worst_param = k;
        }
    }
    out
}
