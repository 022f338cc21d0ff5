//! Serverless training: each node takes a minibatch DPO gradient at its own
//! parameters, mixes with its neighbours, then applies the gradient.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::metrics::RoundMetrics;
use crate::oracle::{clip, GradientOracle, StreamKeying};
use crate::par::Exec;
use crate::rng::RngStream;
use crate::topology::{self, MixingMatrix, TopologyKind, WeightScheme};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecConfig {
    pub num_nodes: usize,
    pub topology: TopologyKind,
    /// `None` picks uniform weights on regular graphs, Metropolis otherwise.
    pub scheme: Option<WeightScheme>,
    pub rounds: usize,
    pub step_size: f64,
    pub batch_size: usize,
    pub local_steps: usize,
    #[serde(with = "crate::oracle::optional_clip")]
    pub clip_norm: Option<f64>,
    pub minibatch_streams: StreamKeying,
    pub record_timing: bool,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for DecConfig {
    fn default() -> Self {
        Self {
            num_nodes: 5,
            topology: TopologyKind::Ring,
            scheme: None,
            rounds: 80,
            step_size: 1e-4,
            batch_size: 4,
            local_steps: 5,
            clip_norm: Some(1.0),
            minibatch_streams: StreamKeying::PerClient,
            record_timing: false,
            exec: Exec::default(),
        }
    }
}

impl DecConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_nodes == 0 {
            return fail("num_nodes must be at least 1");
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
        if self.local_steps == 0 {
            return fail("local_steps must be at least 1");
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return fail("clip_norm must be positive");
            }
        }
        Ok(())
    }

    pub fn scheme(&self) -> WeightScheme {
        self.scheme.unwrap_or_else(|| self.topology.default_scheme())
    }

    /// Mixing matrix for `n` nodes. A single node mixes with itself only.
    pub fn mixing_matrix(&self, n: usize) -> Result<MixingMatrix> {
        if n == 1 {
            return MixingMatrix::from_weights(vec![vec![1.0]]);
        }
        topology::build_mixing(&topology::build_graph(self.topology, n)?, self.scheme())
    }
}

/// Per-node parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStates {
    pub thetas: Vec<Vec<f64>>,
    pub round: usize,
}

impl NodeStates {
    /// Every node starts at `theta0`.
    pub fn replicated(theta0: &[f64], n: usize) -> Self {
        Self {
            thetas: vec![theta0.to_vec(); n],
            round: 0,
        }
    }

    pub fn average(&self) -> Vec<f64> {
        linalg::mean_of(&self.thetas)
    }
}

/// `theta_i <- sum_j w_ij theta_j`.
pub fn mix(states: &NodeStates, m: &MixingMatrix) -> Result<NodeStates> {
    if states.thetas.len() != m.n() {
        return Err(Error::arg(format!("{} nodes but a {}-node mixing matrix", states.thetas.len(), m.n())));
    }
    Ok(NodeStates {
        thetas: m.apply(&states.thetas),
        round: states.round,
    })
}

/// `(1/N) sum_i ||theta_i - mean||^2`.
pub fn consensus_error(states: &NodeStates) -> f64 {
    let avg = states.average();
    states.thetas.iter().map(|t| linalg::dist_sq(t, &avg)).sum::<f64>() / states.thetas.len() as f64
}

/// Gradients applied in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundUpdate {
    /// Per node, the sum of all (clipped) gradients applied this round.
    pub applied: Vec<Vec<f64>>,
    /// Per node, the gradient applied after mixing.
    pub mixed_step: Vec<Vec<f64>>,
}

/// One communication round: `local_steps - 1` plain local steps, then a
/// gradient at the current local parameters, a mix, and the step.
pub fn dec_round<O: GradientOracle + ?Sized>(
    oracle: &O,
    cfg: &DecConfig,
    m: &MixingMatrix,
    states: &mut NodeStates,
    stream: RngStream,
) -> Result<RoundUpdate> {
    let n = states.thetas.len();
    let round_stream = stream.substream(states.round as u64).named("minibatch");
    let local: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = cfg
        .exec
        .map_range(n, |i| {
            let mut rng = match cfg.minibatch_streams {
                StreamKeying::PerClient => round_stream.substream(i as u64).rng(),
                StreamKeying::Shared => round_stream.rng(),
            };
            let mut theta = states.thetas[i].clone();
            let mut applied = vec![0.0; theta.len()];
            for _ in 1..cfg.local_steps {
                let mut g = oracle.minibatch_gradient(i, &theta, cfg.batch_size, &mut rng)?;
                clip(&mut g, cfg.clip_norm);
                linalg::axpy(-cfg.step_size, &g, &mut theta);
                linalg::axpy(1.0, &g, &mut applied);
            }
            let mut g = oracle.minibatch_gradient(i, &theta, cfg.batch_size, &mut rng)?;
            clip(&mut g, cfg.clip_norm);
            linalg::axpy(1.0, &g, &mut applied);
            Ok((theta, g, applied))
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let mut pre = Vec::with_capacity(n);
    let mut steps = Vec::with_capacity(n);
    let mut applied = Vec::with_capacity(n);
    for (t, g, a) in local {
        pre.push(t);
        steps.push(g);
        applied.push(a);
    }
    let mut mixed = m.apply(&pre);
    for (theta, g) in mixed.iter_mut().zip(&steps) {
        linalg::axpy(-cfg.step_size, g, theta);
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericDomain(format!("non-finite node model after round {}", states.round)));
        }
    }
    states.thetas = mixed;
    states.round += 1;
    Ok(RoundUpdate {
        applied,
        mixed_step: steps,
    })
}

#[derive(Debug, Clone)]
pub struct DecRun {
    pub metrics: Vec<RoundMetrics>,
    pub states: NodeStates,
}

/// Runs `cfg.rounds` rounds with every node starting at `theta0`. Round `r`
/// metrics describe the network average and consensus error of
/// `theta^r`.
pub fn run_decdpo<O: GradientOracle + ?Sized>(
    oracle: &O,
    cfg: &DecConfig,
    m: &MixingMatrix,
    theta0: &[f64],
    stream: RngStream,
) -> Result<DecRun> {
    run_decdpo_observed(oracle, cfg, m, theta0, stream, |_| Ok(()))
}

/// [`run_decdpo`] that hands each round's metrics to `on_round` as soon as
/// the round completes.
pub fn run_decdpo_observed<O, F>(
    oracle: &O,
    cfg: &DecConfig,
    m: &MixingMatrix,
    theta0: &[f64],
    stream: RngStream,
    mut on_round: F,
) -> Result<DecRun>
where
    O: GradientOracle + ?Sized,
    F: FnMut(&RoundMetrics) -> Result<()>,
{
    cfg.validate()?;
    if oracle.num_clients() != m.n() {
        return Err(Error::Config(format!("{} clients but {} nodes", oracle.num_clients(), m.n())));
    }
    if theta0.len() != oracle.dim() {
        return Err(Error::arg("initial parameters differ from feature_dim"));
    }
    let mut states = NodeStates::replicated(theta0, m.n());
    let mut metrics = Vec::with_capacity(cfg.rounds);
    for r in 0..cfg.rounds {
        let t0 = Instant::now();
        let mut row = crate::fed_runtime::global_metrics(oracle, &states.average(), r, cfg.exec);
        row.consensus_error = Some(consensus_error(&states));
        dec_round(oracle, cfg, m, &mut states, stream)?;
        if cfg.record_timing {
            row.elapsed_ms = t0.elapsed().as_millis() as u64;
        }
        on_round(&row)?;
        metrics.push(row);
    }
    Ok(DecRun { metrics, states })
}
