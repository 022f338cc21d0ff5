//! Run configuration, dispatch to the simulator modules, and the artifacts
//! written for each run: metrics CSV, summary JSON and a manifest that is
//! enough to replay the run.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bench_suite::{self, DataConfig, DpoSettings, Scenario, ScenarioConfig, SweepResult, GAP_TAIL};
use crate::dec_runtime::{self, DecConfig};
use crate::env_policy::{InstanceConfig, PolicyParams};
use crate::error::{Error, Result};
use crate::fed_runtime::{self, FedConfig};
use crate::lowerbound::{self, EtaRule, QuadraticInstance};
use crate::metrics::{self, MetricsWriter, RoundMetrics};
use crate::par::Exec;
use crate::rng::RngStream;
use crate::theory_constants::{self, ConstantReport, GradcheckReport};
use crate::topology::TopologyKind;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ERROR_FILE: &str = "error.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepAxis {
    Participation,
    LocalSteps,
    Staleness,
    Topology,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 4] = [
        SweepAxis::Participation,
        SweepAxis::LocalSteps,
        SweepAxis::Staleness,
        SweepAxis::Topology,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Participation => "participation",
            SweepAxis::LocalSteps => "local_steps",
            SweepAxis::Staleness => "staleness",
            SweepAxis::Topology => "topology",
        }
    }
}

/// What a run does.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Mode {
    #[default]
    Fed,
    Dec,
    LowerBound,
    CheckConstants,
    Gradcheck,
    Sweep(SweepAxis),
}

impl Mode {
    pub fn all() -> Vec<Mode> {
        let mut v = vec![Mode::Fed, Mode::Dec, Mode::LowerBound, Mode::CheckConstants, Mode::Gradcheck];
        v.extend(SweepAxis::ALL.map(Mode::Sweep));
        v
    }

    fn uses_scenario(self) -> bool {
        !matches!(self, Mode::LowerBound | Mode::Gradcheck)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Fed => f.write_str("fed"),
            Mode::Dec => f.write_str("dec"),
            Mode::LowerBound => f.write_str("lowerbound"),
            Mode::CheckConstants => f.write_str("check-constants"),
            Mode::Gradcheck => f.write_str("gradcheck"),
            Mode::Sweep(a) => write!(f, "sweep:{}", a.name()),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::all()
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

impl TryFrom<String> for Mode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Mode> for String {
    fn from(m: Mode) -> Self {
        m.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsConfig {
    /// Trajectories per Monte Carlo estimate.
    pub num_samples: usize,
    /// Report upper confidence values instead of point estimates.
    pub inflate: bool,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        Self {
            num_samples: 4000,
            inflate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub pairs_per_instance: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            pairs_per_instance: 10,
            step: 1e-5,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LowerBoundConfig {
    pub n_clients: usize,
    pub alpha: f64,
    pub noise_std: f64,
    pub e_grid: Vec<usize>,
    pub s_grid: Vec<usize>,
    pub eta: EtaRule,
    pub rounds: usize,
    pub seeds: Vec<u64>,
}

impl Default for LowerBoundConfig {
    fn default() -> Self {
        Self {
            n_clients: 8,
            alpha: 1.0,
            noise_std: 0.1,
            e_grid: vec![1, 2, 4],
            s_grid: vec![1, 2, 4, 8],
            eta: EtaRule::InverseE(0.5),
            rounds: 60,
            seeds: vec![42, 43, 44, 45, 46],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub participation: Vec<usize>,
    pub local_steps: Vec<usize>,
    pub staleness: Vec<usize>,
    pub topologies: Vec<TopologyKind>,
    /// Topologies entering the consensus-floor fit.
    pub fit_topologies: Vec<TopologyKind>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            participation: vec![1, 3, 5],
            local_steps: vec![1, 3, 6],
            staleness: vec![0, 2, 5],
            topologies: TopologyKind::ALL.to_vec(),
            fit_topologies: vec![TopologyKind::Complete, TopologyKind::Ring, TopologyKind::Path],
        }
    }
}

/// A complete run description. Every section has defaults, so an empty
/// document is a valid federated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Seeds the training streams of single runs.
    pub master_seed: u64,
    /// Seeds of the sweep cells.
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub instance: InstanceConfig,
    pub data: DataConfig,
    pub dpo: DpoSettings,
    pub fed: FedConfig,
    pub dec: DecConfig,
    pub constants: ConstantsConfig,
    pub gradcheck: GradcheckConfig,
    pub lowerbound: LowerBoundConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Fed,
            master_seed: 42,
            seeds: vec![42, 43, 44],
            output_dir: PathBuf::from("out"),
            instance: InstanceConfig::default(),
            data: DataConfig::default(),
            dpo: DpoSettings::default(),
            fed: FedConfig::default(),
            dec: DecConfig::default(),
            constants: ConstantsConfig::default(),
            gradcheck: GradcheckConfig::default(),
            lowerbound: LowerBoundConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

// TOML integers are signed 64-bit
const MAX_SEED: u64 = i64::MAX as u64;

impl RunConfig {
    pub fn scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            instance: self.instance.clone(),
            data: self.data.clone(),
            dpo: self.dpo.clone(),
        }
    }

    /// Checks the sections the mode reads.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let seeds_ok = |s: &[u64]| s.iter().all(|&x| x <= MAX_SEED);
        if self.master_seed > MAX_SEED || !seeds_ok(&self.seeds) || !seeds_ok(&self.lowerbound.seeds) || self.data.behavior_seed > MAX_SEED {
            return fail(format!("seeds must not exceed {MAX_SEED}"));
        }
        if self.mode.uses_scenario() {
            self.scenario().validate()?;
            if self.constants.num_samples < 2 {
                return fail("constants.num_samples must be at least 2".into());
            }
        }
        match self.mode {
            Mode::Fed | Mode::CheckConstants => self.fed.validate()?,
            Mode::Dec => self.dec.validate()?,
            Mode::Gradcheck => {
                let g = &self.gradcheck;
                if g.instances == 0 || g.pairs_per_instance == 0 {
                    return fail("gradcheck needs at least one instance and pair".into());
                }
                if !(g.step > 0.0 && g.step.is_finite() && g.tolerance > 0.0 && g.tolerance.is_finite()) {
                    return fail("gradcheck step and tolerance must be positive".into());
                }
            }
            Mode::LowerBound => {
                let lb = &self.lowerbound;
                QuadraticInstance::new(lb.n_clients, lb.alpha, lb.noise_std).map_err(|e| Error::Config(e.to_string()))?;
                if lb.e_grid.is_empty() || lb.e_grid.contains(&0) {
                    return fail("lowerbound.e_grid must hold positive values".into());
                }
                if lb.s_grid.is_empty() || lb.s_grid.iter().any(|&s| s == 0 || s > lb.n_clients) {
                    return fail("participation exceeds client count in lowerbound.s_grid".into());
                }
                if lb.rounds == 0 || lb.seeds.is_empty() {
                    return fail("lowerbound needs rounds and seeds".into());
                }
                let (EtaRule::InverseE(eta) | EtaRule::Fixed(eta)) = lb.eta;
                if !(eta > 0.0 && eta.is_finite()) {
                    return fail("lowerbound.eta must be positive".into());
                }
            }
            Mode::Sweep(axis) => {
                if self.seeds.len() < 3 {
                    return fail("sweeps need at least 3 seeds".into());
                }
                match axis {
                    SweepAxis::Participation => {
                        self.fed.validate()?;
                        if self.sweep.participation.is_empty() {
                            return fail("sweep.participation is empty".into());
                        }
                        if self.sweep.participation.iter().any(|&s| s == 0 || s > self.fed.num_clients) {
                            return fail("participation exceeds client count in sweep.participation".into());
                        }
                    }
                    SweepAxis::LocalSteps => {
                        self.fed.validate()?;
                        if self.sweep.local_steps.is_empty() || self.sweep.local_steps.contains(&0) {
                            return fail("sweep.local_steps must hold positive values".into());
                        }
                    }
                    SweepAxis::Staleness => {
                        self.fed.validate()?;
                        if self.sweep.staleness.is_empty() {
                            return fail("sweep.staleness is empty".into());
                        }
                    }
                    SweepAxis::Topology => {
                        self.dec.validate()?;
                        if self.sweep.topologies.is_empty() {
                            return fail("sweep.topologies is empty".into());
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Parses and validates a TOML run document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub constants: Option<ConstantReport>,
    pub code_version: String,
    /// Seeds of the named random streams, by stage.
    pub stream_roots: BTreeMap<String, u64>,
    pub started_at: String,
    pub finished_at: String,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Config(format!("manifest {}: {e}", path.display())))?;
        m.config.validate()?;
        Ok(m)
    }
}

pub fn code_version() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

/// Files produced by a successful run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: RunManifest,
    pub summary: serde_json::Value,
    pub artifacts: Vec<PathBuf>,
    /// False when a check mode ran to completion but its check failed.
    pub passed: bool,
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Json(_) => 2,
        Error::Io { .. } => 4,
        _ => 3,
    }
}

/// Exit status for a check that completed but failed.
pub const CHECK_FAILED_EXIT: i32 = 3;

pub fn error_json(err: &Error) -> serde_json::Value {
    let kind = match err {
        Error::Argument(_) => "argument",
        Error::NumericDomain(_) => "numeric_domain",
        Error::Invariant(_) => "invariant",
        Error::DegenerateTopology(_) => "degenerate_topology",
        Error::Config(_) => "config",
        Error::Io { .. } => "io",
        Error::Json(_) => "json",
    };
    json!({ "error": kind, "message": err.to_string(), "exit_code": exit_code(err) })
}

/// Writes `error.json` into `dir`, creating it if needed; failures are
/// ignored because the error is already being reported.
pub fn write_error(dir: &Path, err: &Error) {
    if fs::create_dir_all(dir).is_ok() {
        let _ = fs::write(dir.join(ERROR_FILE), format!("{:#}\n", error_json(err)));
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn prepare_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write_probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn open_metrics(dir: &Path) -> Result<(PathBuf, MetricsWriter<BufWriter<File>>)> {
    let path = dir.join(METRICS_FILE);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let w = MetricsWriter::new(BufWriter::new(file), path.display().to_string())?;
    Ok((path, w))
}

fn train_stream(cfg: &RunConfig) -> RngStream {
    RngStream::new(cfg.master_seed).named("train")
}

fn constants_stream(cfg: &RunConfig) -> RngStream {
    RngStream::new(cfg.master_seed).named("constants")
}

fn stream_roots(cfg: &RunConfig) -> BTreeMap<String, u64> {
    let mut roots = BTreeMap::new();
    if cfg.mode.uses_scenario() {
        roots.extend(cfg.scenario().stream_roots());
        roots.insert("constants".into(), constants_stream(cfg).seed());
    }
    match cfg.mode {
        Mode::Fed | Mode::Dec => {
            roots.insert("train".into(), train_stream(cfg).seed());
        }
        Mode::Sweep(_) => {
            for &s in &cfg.seeds {
                roots.insert(format!("train_seed_{s}"), RngStream::new(s).named("train").seed());
            }
        }
        Mode::LowerBound => {
            for &s in &cfg.lowerbound.seeds {
                roots.insert(format!("seed_{s}"), RngStream::new(s).seed());
            }
        }
        Mode::Gradcheck => {
            roots.insert("gradcheck".into(), RngStream::new(cfg.master_seed).named("gradcheck").seed());
        }
        Mode::CheckConstants => {}
    }
    roots
}

fn constants_for(cfg: &RunConfig, sc: &Scenario, exec: Exec) -> Result<ConstantReport> {
    let theta = PolicyParams::from(sc.theta0());
    theory_constants::estimate_constants(
        &sc.instance.spec,
        &sc.instance.feats,
        &sc.clients,
        &sc.dpo,
        &theta,
        cfg.constants.num_samples,
        constants_stream(cfg),
        cfg.constants.inflate,
        exec,
    )
}

fn run_summary(metrics: &[RoundMetrics]) -> Result<serde_json::Value> {
    let last = metrics.last().ok_or_else(|| Error::arg("run produced no metrics"))?;
    Ok(json!({
        "rounds": metrics.len(),
        "final_grad_norm_sq": last.grad_norm_sq,
        "final_loss": last.loss,
        "stationary_gap": metrics::stationary_gap(metrics, GAP_TAIL.min(metrics.len()))?,
        "gap_window": GAP_TAIL.min(metrics.len()),
    }))
}

fn sweep_summary(res: &SweepResult, labels: Option<Vec<&str>>) -> serde_json::Value {
    let keys: Vec<&String> = res.cells.first().map(|c| c.extra.keys().collect()).unwrap_or_default();
    let extra: BTreeMap<&String, Vec<Option<f64>>> = keys
        .into_iter()
        .map(|k| (k, res.cells.iter().map(|c| c.extra_median(k)).collect()))
        .collect();
    json!({
        "extra_medians": extra,
        "axis": res.axis,
        "grid": res.grid,
        "labels": labels,
        "medians": res.medians(),
        "means": res.cells.iter().map(|c| c.mean).collect::<Vec<_>>(),
        "fit": res.fit,
        "monotone": res.monotone,
    })
}

/// Runs `cfg` and writes its artifacts into `cfg.output_dir`. The output
/// directory is created and probed for writability before any compute.
pub fn execute(cfg: &RunConfig, exec: Exec) -> Result<Outcome> {
    cfg.validate()?;
    let dir = cfg.output_dir.as_path();
    prepare_output_dir(dir)?;
    let started_at = now();
    let mut artifacts = Vec::new();
    let mut constants = None;
    let mut passed = true;

    let summary = match cfg.mode {
        Mode::Fed => {
            let fed = FedConfig { exec, ..cfg.fed.clone() };
            let sc = Scenario::build(&cfg.scenario(), fed.num_clients, exec)?;
            let report = constants_for(cfg, &sc, exec)?;
            let (path, mut w) = open_metrics(dir)?;
            artifacts.push(path);
            let run = fed_runtime::run_feddpo_observed(&sc.oracle()?, &fed, sc.theta0(), train_stream(cfg), |m| w.write(m))?;
            let mut s = run_summary(&run.metrics)?;
            s["step_size_ceiling"] = json!(fed_runtime::step_size_ceiling(report.smoothness_l, fed.local_steps, fed.participation, fed.num_clients));
            s["final_theta"] = json!(run.server.theta());
            constants = Some(report);
            s
        }
        Mode::Dec => {
            let dec = DecConfig { exec, ..cfg.dec.clone() };
            let sc = Scenario::build(&cfg.scenario(), dec.num_nodes, exec)?;
            let report = constants_for(cfg, &sc, exec)?;
            let m = dec.mixing_matrix(dec.num_nodes)?;
            let (path, mut w) = open_metrics(dir)?;
            artifacts.push(path);
            let run = dec_runtime::run_decdpo_observed(&sc.oracle()?, &dec, &m, &sc.theta0(), train_stream(cfg), |r| w.write(r))?;
            let mut s = run_summary(&run.metrics)?;
            s["rho"] = json!(m.rho());
            s["final_consensus_error"] = json!(dec_runtime::consensus_error(&run.states));
            s["final_average_theta"] = json!(run.states.average());
            constants = Some(report);
            s
        }
        Mode::CheckConstants => {
            let sc = Scenario::build(&cfg.scenario(), cfg.fed.num_clients, exec)?;
            let report = constants_for(cfg, &sc, exec)?;
            let path = dir.join("constants.json");
            write_json(&path, &report)?;
            artifacts.push(path);
            let s = json!({ "constants": report, "consistent": report.is_consistent() });
            passed = report.is_consistent();
            constants = Some(report);
            s
        }
        Mode::Gradcheck => {
            let g = &cfg.gradcheck;
            let report: GradcheckReport = theory_constants::gradcheck_suite(
                g.instances,
                g.pairs_per_instance,
                g.step,
                g.tolerance,
                RngStream::new(cfg.master_seed).named("gradcheck"),
                exec,
            )?;
            let path = dir.join("gradcheck.json");
            write_json(&path, &report)?;
            artifacts.push(path);
            passed = report.pass;
            serde_json::to_value(&report)?
        }
        Mode::LowerBound => {
            let lb = &cfg.lowerbound;
            let inst = QuadraticInstance::new(lb.n_clients, lb.alpha, lb.noise_std)?;
            let cells = lowerbound::run_lowerbound_sweep(&inst, &lb.e_grid, &lb.s_grid, lb.eta, lb.rounds, &lb.seeds, exec)?;
            let path = dir.join("lowerbound.csv");
            write_text(&path, &lowerbound::cells_to_csv(&cells))?;
            artifacts.push(path);
            let mut medians = Vec::new();
            for &e in &lb.e_grid {
                for &s in &lb.s_grid {
                    let gaps: Vec<f64> = cells.iter().filter(|c| c.local_steps == e && c.participation == s).map(|c| c.final_gap).collect();
                    medians.push(json!({ "E": e, "S": s, "median_gap": crate::linalg::median(&gaps) }));
                }
            }
            json!({ "cells": cells.len(), "medians": medians })
        }
        Mode::Sweep(axis) => {
            let sc_cfg = cfg.scenario();
            let fed = FedConfig { exec: Exec::Sequential, ..cfg.fed.clone() };
            let (res, labels, n) = match axis {
                SweepAxis::Participation => (
                    bench_suite::sweep_participation(&sc_cfg, &fed, &cfg.sweep.participation, &cfg.seeds, exec)?,
                    None,
                    fed.num_clients,
                ),
                SweepAxis::LocalSteps => (
                    bench_suite::sweep_local_steps(&sc_cfg, &fed, &cfg.sweep.local_steps, &cfg.seeds, exec)?,
                    None,
                    fed.num_clients,
                ),
                SweepAxis::Staleness => (
                    bench_suite::sweep_staleness(&sc_cfg, &fed, &cfg.sweep.staleness, &cfg.seeds, exec)?,
                    None,
                    fed.num_clients,
                ),
                SweepAxis::Topology => (
                    bench_suite::sweep_topology(
                        &sc_cfg,
                        &cfg.dec,
                        cfg.dec.num_nodes,
                        &cfg.sweep.topologies,
                        &cfg.sweep.fit_topologies,
                        &cfg.seeds,
                        exec,
                    )?,
                    Some(bench_suite::topology_labels(&cfg.sweep.topologies)),
                    cfg.dec.num_nodes,
                ),
            };
            let sc = Scenario::build(&sc_cfg, n, exec)?;
            constants = Some(constants_for(cfg, &sc, exec)?);
            let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string();
            let (csv, js) = res.write(dir, &stamp)?;
            artifacts.push(csv);
            artifacts.push(js);
            sweep_summary(&res, labels)
        }
    };

    let mut summary = summary;
    summary["mode"] = json!(cfg.mode.to_string());
    summary["passed"] = json!(passed);
    let summary_path = dir.join(SUMMARY_FILE);
    write_json(&summary_path, &summary)?;
    artifacts.push(summary_path);

    let manifest = RunManifest {
        config: cfg.clone(),
        constants,
        code_version: code_version(),
        stream_roots: stream_roots(cfg),
        started_at,
        finished_at: now(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    write_json(&manifest_path, &manifest)?;
    artifacts.push(manifest_path);

    Ok(Outcome {
        manifest,
        summary,
        artifacts,
        passed,
    })
}

/// Re-executes the run a manifest describes, optionally into another
/// directory.
pub fn replay(manifest: &RunManifest, output_dir: Option<&Path>, exec: Exec) -> Result<Outcome> {
    let mut cfg = manifest.config.clone();
    if let Some(d) = output_dir {
        cfg.output_dir = d.to_path_buf();
    }
    execute(&cfg, exec)
}
