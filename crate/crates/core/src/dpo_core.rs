//! DPO logit gap, per-pair loss and its analytical gradient against a frozen
//! reference policy.
//!
//! For a pair `(plus, minus)` the logit is
//! `omega = beta * [(log pi(plus) - log pi(minus)) - (log ref(plus) - log ref(minus))]`,
//! the loss is `-log sigmoid(omega)` and its gradient follows from the score
//! identity: `-beta * sigmoid(-omega) * (score(plus) - score(minus))`.
//! Returned gradients are never clipped here.

use serde::{Deserialize, Serialize};

use crate::env_policy::{self, FeatureTable, PolicyParams, Trajectory};
use crate::error::{Error, Result};
use crate::linalg;
use crate::par::Exec;
use crate::preference_data::{ClientDataset, PreferencePair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoConfig {
    pub beta: f64,
    pub ref_theta: PolicyParams,
    /// Constant added to every pair loss; carries no gradient.
    pub loss_offset: f64,
}

impl DpoConfig {
    /// Reference policy at zero (uniform) and no offset.
    pub fn new(beta: f64, dim: usize) -> Result<Self> {
        let cfg = Self {
            beta,
            ref_theta: PolicyParams::zeros(dim),
            loss_offset: 0.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config("beta must be positive".into()));
        }
        if !self.ref_theta.is_finite() || !self.loss_offset.is_finite() {
            return Err(Error::Config("reference parameters and loss offset must be finite".into()));
        }
        Ok(())
    }
}

/// Numerically stable `log sigmoid(x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_ratio(feats: &FeatureTable, theta: &[f64], plus: &Trajectory, minus: &Trajectory) -> f64 {
    env_policy::trajectory_log_prob(feats, theta, plus) - env_policy::trajectory_log_prob(feats, theta, minus)
}

/// `omega = beta * (Delta_theta - Delta_ref)`.
pub fn logit_gap(feats: &FeatureTable, theta: &PolicyParams, cfg: &DpoConfig, pair: &PreferencePair) -> f64 {
    let policy = log_ratio(feats, theta.as_slice(), &pair.plus, &pair.minus);
    let reference = log_ratio(feats, cfg.ref_theta.as_slice(), &pair.plus, &pair.minus);
    cfg.beta * (policy - reference)
}

/// `-log sigmoid(omega) + loss_offset`.
pub fn pair_loss(feats: &FeatureTable, theta: &PolicyParams, cfg: &DpoConfig, pair: &PreferencePair) -> f64 {
    -log_sigmoid(logit_gap(feats, theta, cfg, pair)) + cfg.loss_offset
}

/// Loss and gradient of one pair, sharing the forward pass.
pub(crate) fn pair_loss_and_gradient(
    feats: &FeatureTable,
    theta: &[f64],
    cfg: &DpoConfig,
    pair: &PreferencePair,
) -> (f64, Vec<f64>) {
    let (lp_plus, mut grad) = env_policy::trajectory_log_prob_and_score(feats, theta, &pair.plus);
    let (lp_minus, score_minus) = env_policy::trajectory_log_prob_and_score(feats, theta, &pair.minus);
    let reference = log_ratio(feats, cfg.ref_theta.as_slice(), &pair.plus, &pair.minus);
    let omega = cfg.beta * ((lp_plus - lp_minus) - reference);
    linalg::axpy(-1.0, &score_minus, &mut grad);
    linalg::scale(-cfg.beta * sigmoid(-omega), &mut grad);
    (-log_sigmoid(omega) + cfg.loss_offset, grad)
}

/// Gradient of [`pair_loss`]: `-beta * sigmoid(-omega) * (score(plus) - score(minus))`.
pub fn pair_gradient(feats: &FeatureTable, theta: &PolicyParams, cfg: &DpoConfig, pair: &PreferencePair) -> Vec<f64> {
    pair_loss_and_gradient(feats, theta.as_slice(), cfg, pair).1
}

/// Mean of [`pair_gradient`] over the batch.
pub fn batch_gradient(
    feats: &FeatureTable,
    theta: &PolicyParams,
    cfg: &DpoConfig,
    batch: &[&PreferencePair],
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::arg("batch must be nonempty"));
    }
    let mut acc = vec![0.0; theta.dim()];
    for pair in batch {
        let (_, g) = pair_loss_and_gradient(feats, theta.as_slice(), cfg, pair);
        linalg::axpy(1.0, &g, &mut acc);
    }
    linalg::scale(1.0 / batch.len() as f64, &mut acc);
    Ok(acc)
}

/// Mean loss and mean gradient over all pairs of a dataset.
pub fn dataset_loss_and_gradient(
    feats: &FeatureTable,
    theta: &[f64],
    cfg: &DpoConfig,
    ds: &ClientDataset,
) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; theta.len()];
    for pair in &ds.pairs {
        let (l, g) = pair_loss_and_gradient(feats, theta, cfg, pair);
        loss += l;
        linalg::axpy(1.0, &g, &mut grad);
    }
    let n = ds.pairs.len().max(1) as f64;
    linalg::scale(1.0 / n, &mut grad);
    (loss / n, grad)
}

pub fn dataset_loss(feats: &FeatureTable, theta: &[f64], cfg: &DpoConfig, ds: &ClientDataset) -> f64 {
    let n = ds.pairs.len().max(1) as f64;
    ds.pairs
        .iter()
        .map(|p| -log_sigmoid(cfg.beta * (log_ratio(feats, theta, &p.plus, &p.minus) - log_ratio(feats, cfg.ref_theta.as_slice(), &p.plus, &p.minus))) + cfg.loss_offset)
        .sum::<f64>()
        / n
}

/// Per-client `(loss, gradient)` over full datasets, computed concurrently
/// and returned in client order.
pub fn per_client_loss_and_gradient(
    feats: &FeatureTable,
    theta: &[f64],
    cfg: &DpoConfig,
    clients: &[ClientDataset],
    exec: Exec,
) -> Vec<(f64, Vec<f64>)> {
    exec.map(clients, |ds| dataset_loss_and_gradient(feats, theta, cfg, ds))
}
