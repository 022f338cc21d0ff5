//! Bradley–Terry labelled trajectory pairs, heterogeneous client datasets and
//! minibatch sampling.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env_policy::{sample_trajectory, FeatureTable, MdpSpec, PolicyParams, Trajectory};
use crate::error::{Error, Result};
use crate::linalg;
use crate::par::Exec;
use crate::rng::{RngStream, StreamRng};

/// A labelled comparison: `plus` is preferred over `minus`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub plus: Trajectory,
    pub minus: Trajectory,
}

/// One client's local preference data and the latent reward weights that
/// labelled it.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub pairs: Vec<PreferencePair>,
    pub reward_weights: Vec<f64>,
}

impl ClientDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Controls how far each client's reward weights stray from the shared ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityConfig {
    pub base_weights: Vec<f64>,
    pub perturbation_scale: f64,
    pub pairs_per_client: usize,
}

impl HeterogeneityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.perturbation_scale >= 0.0 && self.perturbation_scale.is_finite()) {
            return Err(Error::Config("perturbation_scale must be nonnegative".into()));
        }
        if self.pairs_per_client == 0 {
            return Err(Error::Config("pairs_per_client must be at least 1".into()));
        }
        Ok(())
    }
}

/// Latent utility `sum_h w · phi(s_h, u_h)`.
pub fn trajectory_return(feats: &FeatureTable, weights: &[f64], traj: &Trajectory) -> f64 {
    traj.steps()
        .iter()
        .map(|&(s, a)| linalg::dot(weights, feats.phi(s, a)))
        .sum()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Uniformly random unit vector.
pub(crate) fn unit_direction(dim: usize, rng: &mut StreamRng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = linalg::norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Generates `cfg.pairs_per_client` pairs for one client. Both trajectories
/// of a pair are rolled out under `behavior`; the first is labelled
/// preferred with probability `sigmoid(return_a - return_b)` under this
/// client's reward weights `base + scale * delta_i`.
///
/// `stream` is the federation's data stream; the client draws from its own
/// child keyed by `client_id`.
pub fn generate_client_dataset(
    spec: &MdpSpec,
    feats: &FeatureTable,
    behavior: &PolicyParams,
    cfg: &HeterogeneityConfig,
    client_id: usize,
    stream: RngStream,
) -> Result<ClientDataset> {
    cfg.validate()?;
    if cfg.base_weights.len() != feats.dim() {
        return Err(Error::arg("base_weights length differs from feature_dim"));
    }
    let mut rng = stream.substream(client_id as u64).rng();
    let delta = unit_direction(feats.dim(), &mut rng);
    let mut reward_weights = cfg.base_weights.clone();
    linalg::axpy(cfg.perturbation_scale, &delta, &mut reward_weights);

    let pairs = (0..cfg.pairs_per_client)
        .map(|_| {
            let a = sample_trajectory(spec, feats, behavior, &mut rng);
            let b = sample_trajectory(spec, feats, behavior, &mut rng);
            let gap = trajectory_return(feats, &reward_weights, &a) - trajectory_return(feats, &reward_weights, &b);
            if rng.random::<f64>() < sigmoid(gap) {
                PreferencePair { plus: a, minus: b }
            } else {
                PreferencePair { plus: b, minus: a }
            }
        })
        .collect();
    Ok(ClientDataset {
        client_id,
        pairs,
        reward_weights,
    })
}

/// Datasets for clients `0..num_clients`, generated concurrently on disjoint
/// streams.
pub fn generate_federation(
    spec: &MdpSpec,
    feats: &FeatureTable,
    behavior: &PolicyParams,
    cfg: &HeterogeneityConfig,
    num_clients: usize,
    stream: RngStream,
    exec: Exec,
) -> Result<Vec<ClientDataset>> {
    exec.map_range(num_clients, |i| generate_client_dataset(spec, feats, behavior, cfg, i, stream))
        .into_iter()
        .collect()
}

/// `b` pairs drawn uniformly with replacement.
pub fn sample_minibatch<'a>(
    ds: &'a ClientDataset,
    batch_size: usize,
    rng: &mut StreamRng,
) -> Result<Vec<&'a PreferencePair>> {
    if batch_size == 0 {
        return Err(Error::arg("batch size must be at least 1"));
    }
    if ds.pairs.is_empty() {
        return Err(Error::arg("cannot sample from an empty dataset"));
    }
    Ok((0..batch_size)
        .map(|_| &ds.pairs[rng.random_range(0..ds.pairs.len())])
        .collect())
}

/// Writes one JSON object per line: `{"plus": [[s,a],...], "minus": [[s,a],...]}`.
pub fn write_pairs_jsonl<W: Write>(pairs: &[PreferencePair], mut out: W) -> Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}

/// Reads pairs written by [`write_pairs_jsonl`], validating each trajectory
/// against `spec`.
pub fn read_pairs_jsonl<R: BufRead>(spec: &MdpSpec, input: R) -> Result<Vec<PreferencePair>> {
    let mut pairs = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: PreferencePair = serde_json::from_str(&line)?;
        pairs.push(PreferencePair {
            plus: Trajectory::new(spec, raw.plus.steps().to_vec())?,
            minus: Trajectory::new(spec, raw.minus.steps().to_vec())?,
        });
    }
    Ok(pairs)
}
