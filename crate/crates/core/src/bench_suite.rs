//! Experiment orchestration along the ablation axes: participation, local
//! steps, staleness and topology. A sweep generates its scenario once;
//! `(value, seed)` cells then share it read-only and run concurrently.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dec_runtime::{self, DecConfig};
use crate::dpo_core::DpoConfig;
use crate::env_policy::{Instance, InstanceConfig, PolicyParams};
use crate::error::{Error, Result};
use crate::fed_runtime::{self, FedConfig};
use crate::linalg;
use crate::metrics::{self, RoundMetrics};
use crate::oracle::DpoFederation;
use crate::par::Exec;
use crate::preference_data::{self, ClientDataset, HeterogeneityConfig};
use crate::rng::RngStream;
use crate::topology::TopologyKind;

/// Rounds averaged into a final stationary gap.
pub const GAP_TAIL: usize = 10;
/// Rounds averaged into a steady-state consensus error.
pub const CONSENSUS_TAIL: usize = 20;

/// Preference-data generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Shared reward weights; a random unit vector when absent.
    pub base_weights: Option<Vec<f64>>,
    pub perturbation_scale: f64,
    pub pairs_per_client: usize,
    /// Roots the instance, reward and preference-data streams. Training
    /// randomness comes from the master seed instead, so seeds vary the
    /// optimization on a fixed dataset.
    pub behavior_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            base_weights: None,
            perturbation_scale: 1.0,
            pairs_per_client: 120,
            behavior_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpoSettings {
    pub beta: f64,
    pub loss_offset: f64,
}

impl Default for DpoSettings {
    fn default() -> Self {
        Self {
            beta: 0.2,
            loss_offset: 0.0,
        }
    }
}

/// Everything needed to rebuild the synthetic problem.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub instance: InstanceConfig,
    pub data: DataConfig,
    pub dpo: DpoSettings,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.instance.validate()?;
        if let Some(w) = &self.data.base_weights {
            if w.len() != self.instance.feature_dim {
                return Err(Error::Config("base_weights length differs from feature_dim".into()));
            }
        }
        if !(self.data.perturbation_scale >= 0.0 && self.data.perturbation_scale.is_finite()) {
            return Err(Error::Config("perturbation_scale must be nonnegative".into()));
        }
        if self.data.pairs_per_client == 0 {
            return Err(Error::Config("pairs_per_client must be at least 1".into()));
        }
        if !(self.dpo.beta > 0.0 && self.dpo.beta.is_finite()) {
            return Err(Error::Config("beta must be positive".into()));
        }
        if !self.dpo.loss_offset.is_finite() {
            return Err(Error::Config("loss_offset must be finite".into()));
        }
        Ok(())
    }

    /// Stream roots of the data-generation stages.
    pub fn stream_roots(&self) -> BTreeMap<String, u64> {
        let root = RngStream::new(self.data.behavior_seed);
        ["instance", "reward", "data"]
            .into_iter()
            .map(|k| (k.to_string(), root.named(k).seed()))
            .collect()
    }
}

/// A generated problem: instance, client datasets and DPO settings. Data is
/// generated under the uniform behavior policy, which is also the reference
/// and the starting point of training.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub instance: Instance,
    pub clients: Vec<ClientDataset>,
    pub dpo: DpoConfig,
    pub heterogeneity: HeterogeneityConfig,
}

impl Scenario {
    pub fn build(cfg: &ScenarioConfig, num_clients: usize, exec: Exec) -> Result<Self> {
        cfg.validate()?;
        let root = RngStream::new(cfg.data.behavior_seed);
        let instance = Instance::random(&cfg.instance, root.named("instance"))?;
        let d = cfg.instance.feature_dim;
        let base_weights = match &cfg.data.base_weights {
            Some(w) => w.clone(),
            None => preference_data::unit_direction(d, &mut root.named("reward").rng()),
        };
        let heterogeneity = HeterogeneityConfig {
            base_weights,
            perturbation_scale: cfg.data.perturbation_scale,
            pairs_per_client: cfg.data.pairs_per_client,
        };
        let behavior = PolicyParams::zeros(d);
        let clients = preference_data::generate_federation(
            &instance.spec,
            &instance.feats,
            &behavior,
            &heterogeneity,
            num_clients,
            root.named("data"),
            exec,
        )?;
        let dpo = DpoConfig {
            beta: cfg.dpo.beta,
            ref_theta: behavior,
            loss_offset: cfg.dpo.loss_offset,
        };
        dpo.validate()?;
        Ok(Self {
            instance,
            clients,
            dpo,
            heterogeneity,
        })
    }

    pub fn oracle(&self) -> Result<DpoFederation<'_>> {
        DpoFederation::new(&self.instance.feats, &self.clients, &self.dpo)
    }

    pub fn theta0(&self) -> Vec<f64> {
        self.dpo.ref_theta.as_slice().to_vec()
    }

    pub fn run_fed(&self, cfg: &FedConfig, seed: u64) -> Result<fed_runtime::FedRun> {
        fed_runtime::run_feddpo(&self.oracle()?, cfg, self.theta0(), RngStream::new(seed).named("train"))
    }

    pub fn run_dec(&self, cfg: &DecConfig, seed: u64) -> Result<dec_runtime::DecRun> {
        let m = cfg.mixing_matrix(self.clients.len())?;
        dec_runtime::run_decdpo(&self.oracle()?, cfg, &m, &self.theta0(), RngStream::new(seed).named("train"))
    }
}

pub use metrics::stationary_gap;

/// Least-squares fit diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    /// `"linear"` (`y = a x + c`) or `"proportional"` (`y = a x`).
    pub kind: String,
    /// Regressor, e.g. `"1/S"`.
    pub x: String,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub value: f64,
    pub seeds: Vec<u64>,
    /// Final stationary gap per seed.
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    /// Axis-specific per-seed columns, e.g. `consensus_floor` or `rho`.
    pub extra: BTreeMap<String, Vec<f64>>,
}

impl SweepCell {
    pub fn extra_median(&self, key: &str) -> Option<f64> {
        self.extra.get(key).map(|v| linalg::median(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: String,
    pub grid: Vec<f64>,
    pub cells: Vec<SweepCell>,
    pub fit: Option<Fit>,
    /// Whether cell medians move in the direction the theory predicts.
    pub monotone: Option<bool>,
}

impl SweepResult {
    /// `axis_value,seed,final_gap` plus one column per extra key.
    pub fn to_csv(&self) -> String {
        let keys: Vec<&String> = self.cells.first().map(|c| c.extra.keys().collect()).unwrap_or_default();
        let mut s = String::from("axis_value,seed,final_gap");
        for k in &keys {
            s.push(',');
            s.push_str(k);
        }
        s.push('\n');
        for c in &self.cells {
            for (j, seed) in c.seeds.iter().enumerate() {
                s.push_str(&format!("{},{},{:e}", c.value, seed, c.per_seed[j]));
                for k in &keys {
                    s.push_str(&format!(",{:e}", c.extra[*k][j]));
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn medians(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.median).collect()
    }

    /// Writes `<axis>_<timestamp>.csv` and `<axis>_<timestamp>.json` into
    /// `dir`; returns both paths.
    pub fn write(&self, dir: &Path, timestamp: &str) -> Result<(PathBuf, PathBuf)> {
        let csv = dir.join(format!("{}_{timestamp}.csv", self.axis));
        let json = dir.join(format!("{}_{timestamp}.json", self.axis));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        std::fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        Ok((csv, json))
    }
}

/// Per-seed outcome of one cell.
struct CellRun {
    gap: f64,
    extra: Vec<(String, f64)>,
}

fn run_grid<F>(axis: &str, grid: &[f64], seeds: &[u64], exec: Exec, run: F) -> Result<SweepResult>
where
    F: Fn(f64, u64) -> Result<CellRun> + Sync + Send,
{
    if grid.is_empty() {
        return Err(Error::arg("sweep grid must be nonempty"));
    }
    if seeds.len() < 3 {
        return Err(Error::arg("sweeps need at least three seeds per cell"));
    }
    let jobs: Vec<(f64, u64)> = grid.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    let outcomes: Vec<CellRun> = exec.map(&jobs, |&(v, s)| run(v, s)).into_iter().collect::<Result<_>>()?;
    let mut outcomes = outcomes.into_iter();
    let cells = grid
        .iter()
        .map(|&value| {
            let runs: Vec<CellRun> = outcomes.by_ref().take(seeds.len()).collect();
            let per_seed: Vec<f64> = runs.iter().map(|r| r.gap).collect();
            let mut extra: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for r in &runs {
                for (k, v) in &r.extra {
                    extra.entry(k.clone()).or_default().push(*v);
                }
            }
            SweepCell {
                value,
                seeds: seeds.to_vec(),
                mean: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
                median: linalg::median(&per_seed),
                per_seed,
                extra,
            }
        })
        .collect();
    Ok(SweepResult {
        axis: axis.to_string(),
        grid: grid.to_vec(),
        cells,
        fit: None,
        monotone: None,
    })
}

fn gap_of(metrics: &[RoundMetrics]) -> Result<f64> {
    stationary_gap(metrics, GAP_TAIL.min(metrics.len()))
}

/// Whether `values` never increases (`decreasing`) or never decreases.
pub fn is_monotone(values: &[f64], decreasing: bool) -> bool {
    values.windows(2).all(|w| if decreasing { w[1] <= w[0] } else { w[1] >= w[0] })
}

fn scenario_for(cfg: &ScenarioConfig, num_clients: usize) -> Result<Scenario> {
    Scenario::build(cfg, num_clients, Exec::Sequential)
}

/// Final gap against participation `S`, fitted as `gap = a / S + c` over
/// cell means.
pub fn sweep_participation(
    scenario: &ScenarioConfig,
    base: &FedConfig,
    grid: &[usize],
    seeds: &[u64],
    exec: Exec,
) -> Result<SweepResult> {
    if grid.iter().any(|&s| s == 0 || s > base.num_clients) {
        return Err(Error::arg("participation grid must lie in 1..=num_clients"));
    }
    let sc = scenario_for(scenario, base.num_clients)?;
    let values: Vec<f64> = grid.iter().map(|&s| s as f64).collect();
    let mut res = run_grid("participation", &values, seeds, exec, |v, seed| {
        let cfg = FedConfig {
            participation: v as usize,
            exec: Exec::Sequential,
            ..base.clone()
        };
        let run = sc.run_fed(&cfg, seed)?;
        Ok(CellRun {
            gap: gap_of(&run.metrics)?,
            extra: vec![],
        })
    })?;
    let x: Vec<f64> = grid.iter().map(|&s| 1.0 / s as f64).collect();
    let y: Vec<f64> = res.cells.iter().map(|c| c.mean).collect();
    if x.len() >= 2 {
        let (slope, intercept, r2) = linalg::linear_fit(&x, &y);
        res.fit = Some(Fit {
            kind: "linear".into(),
            x: "1/S".into(),
            slope,
            intercept,
            r2,
        });
    }
    Ok(res)
}

/// Final gap against local steps `E`; monotone when medians do not
/// increase with `E`.
pub fn sweep_local_steps(
    scenario: &ScenarioConfig,
    base: &FedConfig,
    grid: &[usize],
    seeds: &[u64],
    exec: Exec,
) -> Result<SweepResult> {
    if grid.contains(&0) {
        return Err(Error::arg("local steps must be at least 1"));
    }
    let sc = scenario_for(scenario, base.num_clients)?;
    let values: Vec<f64> = grid.iter().map(|&e| e as f64).collect();
    let mut res = run_grid("local_steps", &values, seeds, exec, |v, seed| {
        let cfg = FedConfig {
            local_steps: v as usize,
            exec: Exec::Sequential,
            ..base.clone()
        };
        let run = sc.run_fed(&cfg, seed)?;
        Ok(CellRun {
            gap: gap_of(&run.metrics)?,
            extra: vec![],
        })
    })?;
    res.monotone = Some(is_monotone(&res.medians(), true));
    Ok(res)
}

/// Final gap against the staleness bound `q_max`; monotone when medians do
/// not decrease with `q_max`. Cells record the run-averaged `drift(k) / k`
/// for `k = 1..=q_max` as `drift_per_lag_k`.
pub fn sweep_staleness(
    scenario: &ScenarioConfig,
    base: &FedConfig,
    grid: &[usize],
    seeds: &[u64],
    exec: Exec,
) -> Result<SweepResult> {
    let sc = scenario_for(scenario, base.num_clients)?;
    let values: Vec<f64> = grid.iter().map(|&q| q as f64).collect();
    let qmax_all = grid.iter().copied().max().unwrap_or(0);
    let mut res = run_grid("staleness", &values, seeds, exec, |v, seed| {
        let q = v as usize;
        let cfg = FedConfig {
            q_max: q,
            exec: Exec::Sequential,
            ..base.clone()
        };
        let run = sc.run_fed(&cfg, seed)?;
        // columns must align across cells, so every lag of the largest bound
        // gets one; lags beyond this cell's bound are recorded as zero
        let extra = (1..=qmax_all)
            .map(|k| {
                let samples: Vec<f64> = run.drift.iter().filter_map(|d| d.get(k - 1)).map(|x| x / k as f64).collect();
                let mean = if samples.is_empty() {
                    0.0
                } else {
                    samples.iter().sum::<f64>() / samples.len() as f64
                };
                (format!("drift_per_lag_{k}"), mean)
            })
            .collect();
        Ok(CellRun {
            gap: gap_of(&run.metrics)?,
            extra,
        })
    })?;
    res.monotone = Some(is_monotone(&res.medians(), false));
    Ok(res)
}

/// Steady-state consensus error per topology, fitted proportionally against
/// `1 / (1 - rho^2)` over the topologies in `fit_over`. The grid value of a
/// cell is its index in `kinds`; the `rho` column names the matrix.
pub fn sweep_topology(
    scenario: &ScenarioConfig,
    base: &DecConfig,
    num_clients: usize,
    kinds: &[TopologyKind],
    fit_over: &[TopologyKind],
    seeds: &[u64],
    exec: Exec,
) -> Result<SweepResult> {
    if kinds.len() > 64 {
        return Err(Error::arg("too many topologies"));
    }
    let sc = scenario_for(scenario, num_clients)?;
    let values: Vec<f64> = (0..kinds.len()).map(|i| i as f64).collect();
    let mut res = run_grid("topology", &values, seeds, exec, |v, seed| {
        let cfg = DecConfig {
            topology: kinds[v as usize],
            exec: Exec::Sequential,
            ..base.clone()
        };
        let rho = cfg.mixing_matrix(num_clients)?.rho();
        let run = sc.run_dec(&cfg, seed)?;
        let tail = CONSENSUS_TAIL.min(run.metrics.len());
        let floor = run.metrics[run.metrics.len() - tail..]
            .iter()
            .filter_map(|m| m.consensus_error)
            .sum::<f64>()
            / tail as f64;
        Ok(CellRun {
            gap: gap_of(&run.metrics)?,
            extra: vec![("consensus_floor".into(), floor), ("rho".into(), rho)],
        })
    })?;
    let (x, y): (Vec<f64>, Vec<f64>) = kinds
        .iter()
        .zip(&res.cells)
        .filter(|(k, _)| fit_over.contains(k))
        .map(|(_, c)| {
            let rho = c.extra_median("rho").unwrap_or(0.0);
            (1.0 / (1.0 - rho * rho), c.extra_median("consensus_floor").unwrap_or(0.0))
        })
        .unzip();
    if !x.is_empty() {
        let (slope, r2) = linalg::proportional_fit(&x, &y);
        res.fit = Some(Fit {
            kind: "proportional".into(),
            x: "1/(1-rho^2)".into(),
            slope,
            intercept: 0.0,
            r2,
        });
    }
    Ok(res)
}

/// Topology names for the cells of a [`sweep_topology`] result.
pub fn topology_labels(kinds: &[TopologyKind]) -> Vec<&'static str> {
    kinds.iter().map(|k| k.name()).collect()
}
