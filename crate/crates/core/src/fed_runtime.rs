//! Server-coordinated training: client sampling, local DPO steps, weighted
//! aggregation, and bounded-staleness starts.

use std::collections::VecDeque;
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::metrics::RoundMetrics;
use crate::oracle::{clip, GradientOracle, StreamKeying};
use crate::par::Exec;
use crate::rng::{RngStream, StreamRng};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    #[default]
    DataSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedConfig {
    pub num_clients: usize,
    pub participation: usize,
    pub local_steps: usize,
    pub rounds: usize,
    pub step_size: f64,
    pub batch_size: usize,
    #[serde(with = "crate::oracle::optional_clip")]
    pub clip_norm: Option<f64>,
    pub q_max: usize,
    pub weighting: Weighting,
    pub minibatch_streams: StreamKeying,
    pub record_timing: bool,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            num_clients: 5,
            participation: 5,
            local_steps: 3,
            rounds: 80,
            step_size: 1e-4,
            batch_size: 4,
            clip_norm: Some(1.0),
            q_max: 0,
            weighting: Weighting::DataSize,
            minibatch_streams: StreamKeying::PerClient,
            record_timing: false,
            exec: Exec::default(),
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_clients == 0 {
            return fail("num_clients must be at least 1");
        }
        if self.participation == 0 {
            return fail("participation must be at least 1");
        }
        if self.participation > self.num_clients {
            return fail("participation exceeds client count");
        }
        if self.local_steps == 0 {
            return fail("local_steps must be at least 1");
        }
        if self.rounds == 0 {
            return fail("rounds must be at least 1");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return fail("step_size must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return fail("clip_norm must be positive");
            }
        }
        Ok(())
    }
}

/// Global model with the last `q_max + 1` versions, newest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    history: VecDeque<Vec<f64>>,
    capacity: usize,
    round: usize,
}

impl ServerState {
    pub fn new(theta: Vec<f64>, q_max: usize) -> Self {
        let mut history = VecDeque::with_capacity(q_max + 1);
        history.push_front(theta);
        Self {
            history,
            capacity: q_max + 1,
            round: 0,
        }
    }

    pub fn theta(&self) -> &[f64] {
        &self.history[0]
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// `theta^{r-k}`; requires `k <= min(round, q_max)`.
    pub fn lagged(&self, k: usize) -> Result<&[f64]> {
        self.history
            .get(k)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::arg(format!("lag {k} not retained at round {}", self.round)))
    }

    fn advance(&mut self, theta: Vec<f64>) {
        if self.history.len() == self.capacity {
            self.history.pop_back();
        }
        self.history.push_front(theta);
        self.round += 1;
    }
}

/// `||theta^r - theta^{r-k}||`.
pub fn measure_drift(server: &ServerState, k: usize) -> Result<f64> {
    Ok(linalg::dist_sq(server.theta(), server.lagged(k)?).sqrt())
}

/// `s` distinct indices drawn uniformly from `0..n`, sorted.
pub fn select_clients(n: usize, s: usize, rng: &mut StreamRng) -> Result<Vec<usize>> {
    if s == 0 || s > n {
        return Err(Error::arg(format!("cannot select {s} of {n} clients")));
    }
    let mut picked = index::sample(rng, n, s).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// `E` steps of `theta <- theta - eta * clip(g)` on one client.
pub fn local_update<O: GradientOracle + ?Sized>(
    oracle: &O,
    client: usize,
    start: &[f64],
    cfg: &FedConfig,
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    let mut theta = start.to_vec();
    for _ in 0..cfg.local_steps {
        let mut g = oracle.minibatch_gradient(client, &theta, cfg.batch_size, rng)?;
        clip(&mut g, cfg.clip_norm);
        linalg::axpy(-cfg.step_size, &g, &mut theta);
    }
    Ok(theta)
}

/// Weighted average of client models. `sizes` holds each update's sample
/// count and is ignored under uniform weighting.
pub fn aggregate(updates: &[Vec<f64>], sizes: &[usize], weighting: Weighting) -> Result<Vec<f64>> {
    if updates.is_empty() {
        return Err(Error::arg("nothing to aggregate"));
    }
    let weights: Vec<f64> = match weighting {
        Weighting::Uniform => vec![1.0 / updates.len() as f64; updates.len()],
        Weighting::DataSize => {
            if sizes.len() != updates.len() {
                return Err(Error::arg("one size per update required"));
            }
            let total: usize = sizes.iter().sum();
            if total == 0 {
                return Err(Error::arg("data-size weights need a positive total"));
            }
            sizes.iter().map(|&n| n as f64 / total as f64).collect()
        }
    };
    Ok(linalg::weighted_sum(updates, &weights))
}

/// Largest step size admitted by the convergence guarantee,
/// `min(1 / (8 L E), S / (16 L N E))`. Reported, never enforced.
pub fn step_size_ceiling(smoothness: f64, local_steps: usize, participation: usize, num_clients: usize) -> f64 {
    let le = smoothness * local_steps as f64;
    (1.0 / (8.0 * le)).min(participation as f64 / (16.0 * le * num_clients as f64))
}

/// Streams consumed in round `r`.
struct RoundStreams(RngStream);

impl RoundStreams {
    fn new(root: RngStream, round: usize) -> Self {
        Self(root.substream(round as u64))
    }

    fn selection(&self) -> StreamRng {
        self.0.named("select").rng()
    }

    fn staleness(&self, client: usize) -> StreamRng {
        self.0.named("staleness").substream(client as u64).rng()
    }

    fn minibatch(&self, client: usize, keying: StreamKeying) -> StreamRng {
        let base = self.0.named("minibatch");
        match keying {
            StreamKeying::PerClient => base.substream(client as u64).rng(),
            StreamKeying::Shared => base.rng(),
        }
    }
}

/// Record of one finished run.
#[derive(Debug, Clone)]
pub struct FedRun {
    pub metrics: Vec<RoundMetrics>,
    pub server: ServerState,
    /// Staleness drawn per round for each selected client, `(client, q)`.
    pub staleness: Vec<Vec<(usize, usize)>>,
    /// After each round `r + 1`, `||theta^{r+1} - theta^{r+1-k}||` for
    /// `k = 1..=min(r + 1, q_max)`.
    pub drift: Vec<Vec<f64>>,
}

/// Advances the server by one round; returns the `(client, q)` draws.
pub fn fed_round<O: GradientOracle + ?Sized>(
    oracle: &O,
    cfg: &FedConfig,
    server: &mut ServerState,
    stream: RngStream,
) -> Result<Vec<(usize, usize)>> {
    let r = server.round();
    let streams = RoundStreams::new(stream, r);
    let selected = select_clients(cfg.num_clients, cfg.participation, &mut streams.selection())?;
    let lag_cap = r.min(cfg.q_max);
    let draws: Vec<(usize, usize)> = selected
        .iter()
        .map(|&i| {
            let q = if lag_cap == 0 { 0 } else { streams.staleness(i).random_range(0..=lag_cap) };
            (i, q)
        })
        .collect();
    let starts: Vec<(usize, &[f64])> = draws
        .iter()
        .map(|&(i, q)| server.lagged(q).map(|t| (i, t)))
        .collect::<Result<_>>()?;
    let updates: Vec<Vec<f64>> = cfg
        .exec
        .map(&starts, |&(i, start)| {
            let mut rng = streams.minibatch(i, cfg.minibatch_streams);
            local_update(oracle, i, start, cfg, &mut rng)
        })
        .into_iter()
        .collect::<Result<_>>()?;
    // stale rounds aggregate uniformly over the sampled clients
    let weighting = if cfg.q_max > 0 { Weighting::Uniform } else { cfg.weighting };
    let sizes: Vec<usize> = selected.iter().map(|&i| oracle.client_size(i)).collect();
    let next = aggregate(&updates, &sizes, weighting)?;
    if next.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericDomain(format!("non-finite server model after round {r}")));
    }
    server.advance(next);
    Ok(draws)
}

pub(crate) fn global_metrics<O: GradientOracle + ?Sized>(oracle: &O, theta: &[f64], round: usize, exec: Exec) -> RoundMetrics {
    let (loss, grad) = oracle.global_loss_and_gradient(theta, exec);
    RoundMetrics {
        round,
        grad_norm_sq: linalg::norm_sq(&grad),
        loss,
        consensus_error: None,
        elapsed_ms: 0,
    }
}

/// Runs `cfg.rounds` rounds from `theta0`. Metrics for round `r` describe
/// `theta^r` before aggregation. Every random draw is keyed by round and
/// client, so the result does not depend on execution order.
pub fn run_feddpo<O: GradientOracle + ?Sized>(
    oracle: &O,
    cfg: &FedConfig,
    theta0: Vec<f64>,
    stream: RngStream,
) -> Result<FedRun> {
    run_feddpo_observed(oracle, cfg, theta0, stream, |_| Ok(()))
}

/// [`run_feddpo`] that hands each round's metrics to `on_round` as soon as
/// the round completes; an error from `on_round` aborts the run.
pub fn run_feddpo_observed<O, F>(oracle: &O, cfg: &FedConfig, theta0: Vec<f64>, stream: RngStream, mut on_round: F) -> Result<FedRun>
where
    O: GradientOracle + ?Sized,
    F: FnMut(&RoundMetrics) -> Result<()>,
{
    cfg.validate()?;
    if oracle.num_clients() != cfg.num_clients {
        return Err(Error::Config(format!(
            "config has {} clients, data has {}",
            cfg.num_clients,
            oracle.num_clients()
        )));
    }
    if theta0.len() != oracle.dim() {
        return Err(Error::arg("initial parameters differ from feature_dim"));
    }
    let mut server = ServerState::new(theta0, cfg.q_max);
    let mut metrics = Vec::with_capacity(cfg.rounds);
    let mut staleness = Vec::with_capacity(cfg.rounds);
    let mut drift = Vec::with_capacity(cfg.rounds);
    for r in 0..cfg.rounds {
        let t0 = Instant::now();
        let mut m = global_metrics(oracle, server.theta(), r, cfg.exec);
        staleness.push(fed_round(oracle, cfg, &mut server, stream)?);
        let kmax = server.round().min(cfg.q_max);
        drift.push((1..=kmax).map(|k| measure_drift(&server, k)).collect::<Result<_>>()?);
        if cfg.record_timing {
            m.elapsed_ms = t0.elapsed().as_millis() as u64;
        }
        on_round(&m)?;
        metrics.push(m);
    }
    Ok(FedRun {
        metrics,
        server,
        staleness,
        drift,
    })
}
