//! Two groups of clients with opposing quadratic objectives, run through the
//! federated loop to exhibit how partial participation and local steps
//! inflate the stationary gap.
//!
//! Group A holds `L(theta) = 0.5 ||theta - (alpha, 0)||^2`, group B the
//! mirror image, so the global optimum is the origin and the gradient
//! diversity at zero equals `alpha^2`.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fed_runtime::{self, FedConfig, Weighting};
use crate::bench_suite::GAP_TAIL;
use crate::linalg;
use crate::metrics;
use crate::oracle::{GradientOracle, StreamKeying};
use crate::par::Exec;
use crate::rng::{RngStream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Group {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticInstance {
    n_clients: usize,
    alpha: f64,
    noise_std: f64,
}

impl QuadraticInstance {
    pub fn new(n_clients: usize, alpha: f64, noise_std: f64) -> Result<Self> {
        if n_clients == 0 || n_clients % 2 != 0 {
            return Err(Error::arg("client count must be positive and even"));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::arg("alpha must be positive"));
        }
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::arg("noise_std must be nonnegative"));
        }
        Ok(Self {
            n_clients,
            alpha,
            noise_std,
        })
    }

    pub fn n_clients(&self) -> usize {
        self.n_clients
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// Clients `0..N/2` form group A.
    pub fn group_of(&self, client: usize) -> Group {
        if client < self.n_clients / 2 {
            Group::A
        } else {
            Group::B
        }
    }

    pub fn optimum(&self, group: Group) -> [f64; 2] {
        match group {
            Group::A => [self.alpha, 0.0],
            Group::B => [-self.alpha, 0.0],
        }
    }
}

/// `(theta - z_group)` plus independent Gaussian noise per coordinate.
pub fn quad_gradient(inst: &QuadraticInstance, group: Group, theta: &[f64], rng: &mut StreamRng) -> Vec<f64> {
    let z = inst.optimum(group);
    let mut g = linalg::sub(theta, &z);
    if inst.noise_std > 0.0 {
        let noise = Normal::new(0.0, inst.noise_std).expect("validated std");
        for gi in &mut g {
            *gi += noise.sample(rng);
        }
    }
    g
}

impl GradientOracle for QuadraticInstance {
    fn num_clients(&self) -> usize {
        self.n_clients
    }

    fn dim(&self) -> usize {
        2
    }

    fn client_size(&self, _client: usize) -> usize {
        1
    }

    fn minibatch_gradient(&self, client: usize, theta: &[f64], _batch_size: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
        Ok(quad_gradient(self, self.group_of(client), theta, rng))
    }

    fn client_loss_and_gradient(&self, client: usize, theta: &[f64]) -> (f64, Vec<f64>) {
        let g = linalg::sub(theta, &self.optimum(self.group_of(client)));
        (0.5 * linalg::norm_sq(&g), g)
    }
}

/// How the step size depends on the number of local steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum EtaRule {
    /// `eta = base / E`.
    InverseE(f64),
    Fixed(f64),
}

impl EtaRule {
    pub fn step_size(self, local_steps: usize) -> f64 {
        match self {
            EtaRule::InverseE(base) => base / local_steps as f64,
            EtaRule::Fixed(eta) => eta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundCell {
    pub local_steps: usize,
    pub participation: usize,
    pub alpha: f64,
    pub noise_std: f64,
    pub seed: u64,
    pub step_size: f64,
    /// Mean `||grad L(theta^r)||^2` over the last rounds of the run.
    pub final_gap: f64,
}

/// Runs every `(E, S, seed)` cell from the origin with uniform aggregation
/// and no clipping. A cell's gap is the mean over the last
/// [`GAP_TAIL`] rounds, the same window the sweeps use.
#[allow(clippy::too_many_arguments)]
pub fn run_lowerbound_sweep(
    inst: &QuadraticInstance,
    e_grid: &[usize],
    s_grid: &[usize],
    eta: EtaRule,
    rounds: usize,
    seeds: &[u64],
    exec: Exec,
) -> Result<Vec<LowerBoundCell>> {
    if e_grid.is_empty() || s_grid.is_empty() || seeds.is_empty() {
        return Err(Error::arg("lower-bound grids must be nonempty"));
    }
    let cells: Vec<(usize, usize, u64)> = e_grid
        .iter()
        .flat_map(|&e| s_grid.iter().flat_map(move |&s| seeds.iter().map(move |&seed| (e, s, seed))))
        .collect();
    exec.map(&cells, |&(e, s, seed)| {
        let cfg = FedConfig {
            num_clients: inst.n_clients,
            participation: s,
            local_steps: e,
            rounds,
            step_size: eta.step_size(e),
            batch_size: 1,
            clip_norm: None,
            q_max: 0,
            weighting: Weighting::Uniform,
            minibatch_streams: StreamKeying::PerClient,
            record_timing: false,
            exec: Exec::Sequential,
        };
        let run = fed_runtime::run_feddpo(inst, &cfg, vec![0.0, 0.0], RngStream::new(seed))?;
        Ok(LowerBoundCell {
            local_steps: e,
            participation: s,
            alpha: inst.alpha,
            noise_std: inst.noise_std,
            seed,
            step_size: cfg.step_size,
            final_gap: metrics::stationary_gap(&run.metrics, GAP_TAIL.min(rounds))?,
        })
    })
    .into_iter()
    .collect()
}

pub const CSV_HEADER: &str = "E,S,alpha,noise_std,seed,final_gap";

pub fn cells_to_csv(cells: &[LowerBoundCell]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for c in cells {
        s.push_str(&format!(
            "{},{},{:e},{:e},{},{:e}\n",
            c.local_steps, c.participation, c.alpha, c.noise_std, c.seed, c.final_gap
        ));
    }
    s
}
