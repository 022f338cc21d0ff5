//! The per-client gradient seam shared by the federated and decentralized
//! loops. The DPO federation is the default implementation; the lower-bound
//! construction plugs in a quadratic one.

use serde::{Deserialize, Serialize};

use crate::dpo_core::{self, DpoConfig};
use crate::env_policy::{FeatureTable, PolicyParams};
use crate::error::{Error, Result};
use crate::linalg;
use crate::par::Exec;
use crate::preference_data::{self, ClientDataset};
use crate::rng::StreamRng;

/// Stochastic per-client gradients plus the exact global objective.
pub trait GradientOracle: Sync {
    fn num_clients(&self) -> usize;

    fn dim(&self) -> usize;

    /// Number of local samples held by `client`; drives data-size weighting.
    fn client_size(&self, client: usize) -> usize;

    /// Unbiased estimate of `client`'s local gradient at `theta`.
    fn minibatch_gradient(&self, client: usize, theta: &[f64], batch_size: usize, rng: &mut StreamRng) -> Result<Vec<f64>>;

    /// Exact local loss and gradient of `client`.
    fn client_loss_and_gradient(&self, client: usize, theta: &[f64]) -> (f64, Vec<f64>);

    /// Aggregation weights `n_i / sum_m n_m`.
    fn data_weights(&self) -> Vec<f64> {
        let sizes: Vec<f64> = (0..self.num_clients()).map(|i| self.client_size(i) as f64).collect();
        let total: f64 = sizes.iter().sum();
        sizes.into_iter().map(|s| s / total).collect()
    }

    /// Data-size weighted global loss and gradient.
    fn global_loss_and_gradient(&self, theta: &[f64], exec: Exec) -> (f64, Vec<f64>) {
        let parts = exec.map_range(self.num_clients(), |i| self.client_loss_and_gradient(i, theta));
        let weights = self.data_weights();
        let mut loss = 0.0;
        let mut grad = vec![0.0; theta.len()];
        for ((l, g), w) in parts.iter().zip(&weights) {
            loss += w * l;
            linalg::axpy(*w, g, &mut grad);
        }
        (loss, grad)
    }
}

/// How minibatch streams are keyed across clients within a round.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKeying {
    /// Each client draws from its own `(round, client)` stream.
    #[default]
    PerClient,
    /// Every client reuses the round's stream, so identical datasets yield
    /// identical minibatches.
    Shared,
}

/// Clients holding DPO preference data against a common reference.
#[derive(Debug, Clone)]
pub struct DpoFederation<'a> {
    pub feats: &'a FeatureTable,
    pub clients: &'a [ClientDataset],
    pub dpo: &'a DpoConfig,
}

impl<'a> DpoFederation<'a> {
    pub fn new(feats: &'a FeatureTable, clients: &'a [ClientDataset], dpo: &'a DpoConfig) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::arg("federation needs at least one client"));
        }
        if clients.iter().any(ClientDataset::is_empty) {
            return Err(Error::arg("every client needs at least one pair"));
        }
        if dpo.ref_theta.dim() != feats.dim() {
            return Err(Error::arg("reference parameters differ from feature_dim"));
        }
        Ok(Self { feats, clients, dpo })
    }
}

impl GradientOracle for DpoFederation<'_> {
    fn num_clients(&self) -> usize {
        self.clients.len()
    }

    fn dim(&self) -> usize {
        self.feats.dim()
    }

    fn client_size(&self, client: usize) -> usize {
        self.clients[client].len()
    }

    fn minibatch_gradient(&self, client: usize, theta: &[f64], batch_size: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
        let batch = preference_data::sample_minibatch(&self.clients[client], batch_size, rng)?;
        // cheap: PolicyParams is a thin Vec wrapper
        dpo_core::batch_gradient(self.feats, &PolicyParams::from(theta.to_vec()), self.dpo, &batch)
    }

    fn client_loss_and_gradient(&self, client: usize, theta: &[f64]) -> (f64, Vec<f64>) {
        dpo_core::dataset_loss_and_gradient(self.feats, theta, self.dpo, &self.clients[client])
    }
}

/// Rescales `g` to norm `max_norm` when it is longer; identity otherwise.
pub fn clip(g: &mut [f64], max_norm: Option<f64>) {
    if let Some(c) = max_norm {
        let n = linalg::norm(g);
        if n > c {
            linalg::scale(c / n, g);
        }
    }
}

/// Serde form of an optional clip norm: a number, or `false` when off.
/// Formats without a null (TOML) then keep the disabled state.
pub(crate) mod optional_clip {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Norm(f64),
        Flag(bool),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(c) => Repr::Norm(*c),
            None => Repr::Flag(false),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Norm(c) => Ok(Some(c)),
            Repr::Flag(false) => Ok(None),
            Repr::Flag(true) => Err(serde::de::Error::custom("clip_norm takes a number or false")),
        }
    }
}
