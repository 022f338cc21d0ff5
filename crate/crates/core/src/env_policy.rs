//! Tabular episodic MDP, log-linear softmax policy, trajectory sampling and
//! score functions.
//!
//! The policy is `pi(u|s) ∝ exp(theta · phi(s, u))`. Its per-step score is
//! `phi(s, u) - E_{u' ~ pi(.|s)} phi(s, u')` and a trajectory score is the sum
//! of step scores over the horizon.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{RngStream, StreamRng};

const SUM_TOL: f64 = 1e-12;

/// Sizes and dynamics of a finite-horizon tabular MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpSpec {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    feature_dim: usize,
    /// Row-major `[state][action][next_state]`.
    transition: Vec<f64>,
    initial_dist: Vec<f64>,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::invariant(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOL {
        return Err(Error::invariant(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

impl MdpSpec {
    /// Validates and builds a spec. `transition[s][a]` is the next-state
    /// distribution after taking `a` in `s`.
    pub fn new(
        horizon: usize,
        feature_dim: usize,
        transition: Vec<Vec<Vec<f64>>>,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        let num_states = transition.len();
        if num_states == 0 {
            return Err(Error::invariant("num_states must be positive"));
        }
        let num_actions = transition[0].len();
        if num_actions == 0 {
            return Err(Error::invariant("num_actions must be positive"));
        }
        if horizon == 0 {
            return Err(Error::invariant("horizon must be at least 1"));
        }
        if feature_dim == 0 {
            return Err(Error::invariant("feature_dim must be positive"));
        }
        if initial_dist.len() != num_states {
            return Err(Error::invariant("initial_dist length differs from num_states"));
        }
        check_distribution(&initial_dist, "initial_dist")?;
        let mut flat = Vec::with_capacity(num_states * num_actions * num_states);
        for (s, rows) in transition.iter().enumerate() {
            if rows.len() != num_actions {
                return Err(Error::invariant(format!("state {s} has {} action rows", rows.len())));
            }
            for (a, row) in rows.iter().enumerate() {
                if row.len() != num_states {
                    return Err(Error::invariant(format!("transition row ({s},{a}) has wrong length")));
                }
                check_distribution(row, &format!("transition row ({s},{a})"))?;
                flat.extend_from_slice(row);
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            feature_dim,
            transition: flat,
            initial_dist,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn transition_row(&self, state: usize, action: usize) -> &[f64] {
        let start = (state * self.num_actions + action) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    fn transition_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.num_states)
            .map(|s| (0..self.num_actions).map(|a| self.transition_row(s, a).to_vec()).collect())
            .collect()
    }
}

/// Feature vectors `phi(s, u)` for every state-action pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    num_states: usize,
    num_actions: usize,
    dim: usize,
    /// Row-major `[state][action][feature]`.
    phi: Vec<f64>,
    phi_bound: f64,
}

impl FeatureTable {
    /// Builds a table from nested `[state][action][feature]` arrays and
    /// records the largest feature norm as `phi_bound`.
    pub fn new(phi: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let num_states = phi.len();
        let num_actions = phi.first().map_or(0, Vec::len);
        let dim = phi.first().and_then(|r| r.first()).map_or(0, Vec::len);
        if num_states == 0 || num_actions == 0 || dim == 0 {
            return Err(Error::invariant("feature table must be non-empty"));
        }
        let mut flat = Vec::with_capacity(num_states * num_actions * dim);
        for rows in &phi {
            if rows.len() != num_actions {
                return Err(Error::invariant("ragged feature table"));
            }
            for f in rows {
                if f.len() != dim {
                    return Err(Error::invariant("ragged feature vector"));
                }
                if f.iter().any(|x| !x.is_finite()) {
                    return Err(Error::invariant("non-finite feature entry"));
                }
                flat.extend_from_slice(f);
            }
        }
        let mut table = Self {
            num_states,
            num_actions,
            dim,
            phi: flat,
            phi_bound: 0.0,
        };
        table.phi_bound = table.max_norm();
        Ok(table)
    }

    fn max_norm(&self) -> f64 {
        self.phi.chunks(self.dim).map(linalg::norm).fold(0.0, f64::max)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn phi_bound(&self) -> f64 {
        self.phi_bound
    }

    pub fn phi(&self, state: usize, action: usize) -> &[f64] {
        let start = (state * self.num_actions + action) * self.dim;
        &self.phi[start..start + self.dim]
    }

    fn nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.num_states)
            .map(|s| (0..self.num_actions).map(|a| self.phi(s, a).to_vec()).collect())
            .collect()
    }
}

/// Softmax policy parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolicyParams {
    theta: Vec<f64>,
}

impl PolicyParams {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericDomain("policy parameters must be finite".into()));
        }
        Ok(Self { theta })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { theta: vec![0.0; dim] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.theta
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|x| x.is_finite())
    }
}

impl From<Vec<f64>> for PolicyParams {
    fn from(theta: Vec<f64>) -> Self {
        Self { theta }
    }
}

/// Fixed-horizon sequence of `(state, action)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trajectory {
    steps: Vec<(usize, usize)>,
}

impl Trajectory {
    /// Checks the length and index ranges against `spec`.
    pub fn new(spec: &MdpSpec, steps: Vec<(usize, usize)>) -> Result<Self> {
        if steps.len() != spec.horizon {
            return Err(Error::invariant(format!(
                "trajectory has {} steps, horizon is {}",
                steps.len(),
                spec.horizon
            )));
        }
        if steps.iter().any(|&(s, a)| s >= spec.num_states || a >= spec.num_actions) {
            return Err(Error::invariant("trajectory index out of range"));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[(usize, usize)] {
        &self.steps
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }
}

/// Sizes and feature scale of a randomly generated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstanceConfig {
    pub num_states: usize,
    pub num_actions: usize,
    pub feature_dim: usize,
    pub horizon: usize,
    pub phi_bound: f64,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self {
            num_states: 5,
            num_actions: 4,
            feature_dim: 8,
            horizon: 5,
            phi_bound: 1.0,
        }
    }
}

impl InstanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_states == 0 || self.num_actions == 0 || self.feature_dim == 0 {
            return Err(Error::Config("instance sizes must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(self.phi_bound > 0.0 && self.phi_bound.is_finite()) {
            return Err(Error::Config("phi_bound must be positive".into()));
        }
        Ok(())
    }
}

/// An MDP together with its feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub spec: MdpSpec,
    pub feats: FeatureTable,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceDoc {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    feature_dim: usize,
    transition: Vec<Vec<Vec<f64>>>,
    initial_dist: Vec<f64>,
    phi: Vec<Vec<Vec<f64>>>,
}

fn dirichlet_ones(n: usize, rng: &mut StreamRng) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    let mut p: Vec<f64> = draws.iter().map(|x| x / total).collect();
    // absorb rounding so the row sums to one to the last ulp
    let drift = 1.0 - p.iter().sum::<f64>();
    let imax = (0..n).max_by(|&i, &j| p[i].total_cmp(&p[j])).unwrap_or(0);
    p[imax] += drift;
    p
}

impl Instance {
    pub fn new(spec: MdpSpec, feats: FeatureTable) -> Result<Self> {
        if feats.num_states != spec.num_states || feats.num_actions != spec.num_actions {
            return Err(Error::invariant("feature table shape differs from the MDP"));
        }
        if feats.dim != spec.feature_dim {
            return Err(Error::invariant("feature_dim differs from the feature table"));
        }
        Ok(Self { spec, feats })
    }

    /// Random instance: Dirichlet(1) transition rows and initial
    /// distribution, features uniform on `[-1, 1]^d` rescaled so the largest
    /// feature norm equals `phi_bound`.
    pub fn random(cfg: &InstanceConfig, stream: RngStream) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream.rng();
        let (ns, na, d) = (cfg.num_states, cfg.num_actions, cfg.feature_dim);
        let transition: Vec<Vec<Vec<f64>>> = (0..ns)
            .map(|_| (0..na).map(|_| dirichlet_ones(ns, &mut rng)).collect())
            .collect();
        let initial = dirichlet_ones(ns, &mut rng);
        let mut phi: Vec<Vec<Vec<f64>>> = (0..ns)
            .map(|_| {
                (0..na)
                    .map(|_| (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect())
                    .collect()
            })
            .collect();
        let max_norm = phi
            .iter()
            .flatten()
            .map(|f: &Vec<f64>| linalg::norm(f))
            .fold(0.0, f64::max);
        if max_norm > 0.0 {
            let k = cfg.phi_bound / max_norm;
            phi.iter_mut().flatten().flatten().for_each(|x| *x *= k);
        }
        let spec = MdpSpec::new(cfg.horizon, d, transition, initial)?;
        Instance::new(spec, FeatureTable::new(phi)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = InstanceDoc {
            num_states: self.spec.num_states,
            num_actions: self.spec.num_actions,
            horizon: self.spec.horizon,
            feature_dim: self.spec.feature_dim,
            transition: self.spec.transition_nested(),
            initial_dist: self.spec.initial_dist.clone(),
            phi: self.feats.nested(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: InstanceDoc = serde_json::from_str(text)?;
        if doc.transition.len() != doc.num_states
            || doc.transition.first().map_or(0, Vec::len) != doc.num_actions
        {
            return Err(Error::invariant("transition shape disagrees with num_states/num_actions"));
        }
        let spec = MdpSpec::new(doc.horizon, doc.feature_dim, doc.transition, doc.initial_dist)?;
        Instance::new(spec, FeatureTable::new(doc.phi)?)
    }
}

fn check_state(spec: &MdpSpec, state: usize) -> Result<()> {
    if state >= spec.num_states {
        return Err(Error::arg(format!("state {state} out of range 0..{}", spec.num_states)));
    }
    Ok(())
}

/// Log-probabilities of every action in `state`, computed with max-logit
/// subtraction.
pub(crate) fn log_action_probs(feats: &FeatureTable, theta: &[f64], state: usize) -> Vec<f64> {
    let logits: Vec<f64> = (0..feats.num_actions)
        .map(|a| linalg::dot(theta, feats.phi(state, a)))
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// `pi_theta(. | state)`.
pub fn action_probs(
    spec: &MdpSpec,
    feats: &FeatureTable,
    theta: &PolicyParams,
    state: usize,
) -> Result<Vec<f64>> {
    check_state(spec, state)?;
    let logp = log_action_probs(feats, theta.as_slice(), state);
    if logp.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericDomain(format!("non-finite logits in state {state}")));
    }
    Ok(logp.into_iter().map(f64::exp).collect())
}

/// `log pi_theta(action | state)`.
pub fn log_prob(feats: &FeatureTable, theta: &[f64], state: usize, action: usize) -> f64 {
    log_action_probs(feats, theta, state)[action]
}

/// `log pi_theta(tau) = sum_h log pi_theta(u_h | s_h)`; transition terms are
/// omitted because they do not depend on `theta`.
pub fn trajectory_log_prob(feats: &FeatureTable, theta: &[f64], traj: &Trajectory) -> f64 {
    traj.steps.iter().map(|&(s, a)| log_prob(feats, theta, s, a)).sum()
}

fn sample_categorical(p: &[f64], rng: &mut StreamRng) -> usize {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if x < acc {
            return i;
        }
    }
    // rounding left x above the total; fall back to the last supported index
    p.iter().rposition(|&pi| pi > 0.0).unwrap_or(p.len() - 1)
}

/// Rolls out one episode: `s_1 ~ initial_dist`, `u_h ~ pi_theta(.|s_h)`,
/// `s_{h+1} ~ transition(s_h, u_h)`.
pub fn sample_trajectory(
    spec: &MdpSpec,
    feats: &FeatureTable,
    theta: &PolicyParams,
    rng: &mut StreamRng,
) -> Trajectory {
    let mut steps = Vec::with_capacity(spec.horizon);
    let mut state = sample_categorical(&spec.initial_dist, rng);
    for h in 0..spec.horizon {
        let probs: Vec<f64> = log_action_probs(feats, theta.as_slice(), state)
            .into_iter()
            .map(f64::exp)
            .collect();
        let action = sample_categorical(&probs, rng);
        steps.push((state, action));
        if h + 1 < spec.horizon {
            state = sample_categorical(spec.transition_row(state, action), rng);
        }
    }
    Trajectory { steps }
}

fn add_step_score(feats: &FeatureTable, theta: &[f64], state: usize, action: usize, out: &mut [f64]) {
    let logp = log_action_probs(feats, theta, state);
    linalg::axpy(1.0, feats.phi(state, action), out);
    for (a, lp) in logp.iter().enumerate() {
        linalg::axpy(-lp.exp(), feats.phi(state, a), out);
    }
}

/// `grad log pi_theta(action | state) = phi(s,u) - E_{u'~pi} phi(s,u')`.
pub fn step_score(feats: &FeatureTable, theta: &PolicyParams, state: usize, action: usize) -> Vec<f64> {
    let mut out = vec![0.0; feats.dim];
    add_step_score(feats, theta.as_slice(), state, action, &mut out);
    out
}

/// Sum of step scores along the trajectory.
pub fn trajectory_score(feats: &FeatureTable, theta: &PolicyParams, traj: &Trajectory) -> Vec<f64> {
    let mut out = vec![0.0; feats.dim];
    accumulate_trajectory_score(feats, theta.as_slice(), traj, &mut out);
    out
}

pub(crate) fn accumulate_trajectory_score(feats: &FeatureTable, theta: &[f64], traj: &Trajectory, out: &mut [f64]) {
    for &(s, a) in &traj.steps {
        add_step_score(feats, theta, s, a, out);
    }
}

/// Log-probability and score of a trajectory in one pass.
pub(crate) fn trajectory_log_prob_and_score(
    feats: &FeatureTable,
    theta: &[f64],
    traj: &Trajectory,
) -> (f64, Vec<f64>) {
    let mut score = vec![0.0; feats.dim];
    let mut logp_total = 0.0;
    for &(s, a) in &traj.steps {
        let logp = log_action_probs(feats, theta, s);
        logp_total += logp[a];
        linalg::axpy(1.0, feats.phi(s, a), &mut score);
        for (u, lp) in logp.iter().enumerate() {
            linalg::axpy(-lp.exp(), feats.phi(s, u), &mut score);
        }
    }
    (logp_total, score)
}
