//! Monte Carlo estimates of the constants that drive the convergence bounds,
//! their closed-form combinations, and the numerical differentiation oracles
//! used to check analytical gradients and curvature.
//!
//! * `zeta_phi_sq`: per-step score second moment, `max_h E ||nu(h)||^2`.
//! * `varsigma`, `c0`: geometric decay of lag-k score correlations.
//! * `c_mix = 1 + 2 c0 varsigma / (1 - varsigma)`.
//! * `L = (beta^2 c_mix + 2 beta) zeta_phi_sq H`.
//! * `zeta_g_sq = 4 beta^2 c_mix zeta_phi_sq H`.

use serde::{Deserialize, Serialize};

use crate::dpo_core::{self, DpoConfig};
use crate::env_policy::{self, FeatureTable, MdpSpec, PolicyParams};
use crate::error::{Error, Result};
use crate::linalg;
use crate::par::Exec;
use crate::preference_data::ClientDataset;
use crate::rng::RngStream;

/// Largest dimension accepted by [`numerical_hessian_norm`].
pub const HESSIAN_MAX_DIM: usize = 64;
/// Upper clip applied to fitted decay rates.
pub const VARSIGMA_MAX: f64 = 1.0 - 1e-6;

/// Central-difference gradient.
pub fn finite_diff_gradient<F>(f: F, theta: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            x[i] = theta[i] + step;
            let up = f(&x);
            x[i] = theta[i] - step;
            let down = f(&x);
            x[i] = theta[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Symmetrized central-difference Hessian, row-major `d x d`.
pub fn numerical_hessian<F>(f: F, theta: &[f64], step: f64, exec: Exec) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let d = theta.len();
    if !(step > 0.0) {
        return Err(Error::arg("Hessian step must be positive"));
    }
    if d > HESSIAN_MAX_DIM {
        return Err(Error::arg(format!("dimension {d} exceeds the dense Hessian guard {HESSIAN_MAX_DIM}")));
    }
    let f0 = f(theta);
    let cells: Vec<(usize, usize)> = (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect();
    let entries = exec.map(&cells, |&(i, j)| {
        let eval = |di: f64, dj: f64| {
            let mut x = theta.to_vec();
            x[i] += di;
            x[j] += dj;
            f(&x)
        };
        if i == j {
            (eval(step, 0.0) - 2.0 * f0 + eval(-step, 0.0)) / (step * step)
        } else {
            (eval(step, step) - eval(step, -step) - eval(-step, step) + eval(-step, -step)) / (4.0 * step * step)
        }
    });
    let mut h = vec![0.0; d * d];
    for (&(i, j), v) in cells.iter().zip(entries) {
        h[i * d + j] = v;
        h[j * d + i] = v;
    }
    // symmetrize explicitly; a no-op for the construction above
    for i in 0..d {
        for j in (i + 1)..d {
            let m = 0.5 * (h[i * d + j] + h[j * d + i]);
            h[i * d + j] = m;
            h[j * d + i] = m;
        }
    }
    Ok(h)
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d).map(|i| linalg::dot(&m[i * d..(i + 1) * d], v)).collect()
}

/// Spectral norm of a symmetric matrix by power iteration on its square,
/// stopped when the estimate changes by less than `tol` (relative).
pub fn symmetric_spectral_norm(m: &[f64], d: usize, tol: f64) -> f64 {
    assert_eq!(m.len(), d * d);
    if d == 0 {
        return 0.0;
    }
    let mut v: Vec<f64> = (0..d).map(|k| 1.0 + 0.1 * k as f64).collect();
    let n0 = linalg::norm(&v);
    linalg::scale(1.0 / n0, &mut v);
    let mut estimate = 0.0;
    for _ in 0..200_000 {
        let w = mat_vec(m, &mat_vec(m, &v));
        let wn = linalg::norm(&w);
        if wn == 0.0 || !wn.is_finite() {
            return 0.0;
        }
        let next = wn.sqrt();
        v = w.into_iter().map(|x| x / wn).collect();
        if (next - estimate).abs() <= tol * next {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Spectral norm of the symmetrized central-difference Hessian of `f` at
/// `theta`.
pub fn numerical_hessian_norm<F>(f: F, theta: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let h = numerical_hessian(f, theta, step, Exec::default())?;
    Ok(symmetric_spectral_norm(&h, theta.len(), 1e-8))
}

/// `1 + 2 c0 varsigma / (1 - varsigma)`.
pub fn mixing_factor(c0: f64, varsigma: f64) -> f64 {
    1.0 + 2.0 * c0 * varsigma / (1.0 - varsigma)
}

/// `L = (beta^2 c_mix + 2 beta) zeta_phi_sq H`.
pub fn smoothness_constant(beta: f64, c_mix: f64, zeta_phi_sq: f64, horizon: usize) -> f64 {
    (beta * beta * c_mix + 2.0 * beta) * zeta_phi_sq * horizon as f64
}

/// `zeta_g^2 = 4 beta^2 c_mix zeta_phi_sq H`.
pub fn variance_bound(beta: f64, c_mix: f64, zeta_phi_sq: f64, horizon: usize) -> f64 {
    4.0 * beta * beta * c_mix * zeta_phi_sq * horizon as f64
}

/// Per-sample, per-step scores: `samples[n][h]` is a `d`-vector.
fn sample_step_scores(
    spec: &MdpSpec,
    feats: &FeatureTable,
    theta: &PolicyParams,
    behavior: &PolicyParams,
    num_samples: usize,
    stream: RngStream,
    exec: Exec,
) -> Vec<Vec<Vec<f64>>> {
    exec.map_range(num_samples, |n| {
        let mut rng = stream.substream(n as u64).rng();
        let tr = env_policy::sample_trajectory(spec, feats, behavior, &mut rng);
        tr.steps()
            .iter()
            .map(|&(s, a)| env_policy::step_score(feats, theta, s, a))
            .collect()
    })
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Outcome of [`estimate_zeta_phi_sq`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaPhiEstimate {
    /// `max_h` of the Monte Carlo mean of `||nu(h)||^2`.
    pub estimate: f64,
    /// `max_h` of mean plus three standard errors.
    pub upper: f64,
    /// `max_{s,u} ||step_score(s,u)||^2`, a deterministic ceiling.
    pub pointwise: f64,
    pub num_samples: usize,
}

/// Pointwise bound `max_{s,u} ||phi(s,u) - E_pi phi(s,.)||^2`.
pub fn pointwise_score_bound(spec: &MdpSpec, feats: &FeatureTable, theta: &PolicyParams) -> f64 {
    (0..spec.num_states())
        .flat_map(|s| (0..spec.num_actions()).map(move |a| (s, a)))
        .map(|(s, a)| linalg::norm_sq(&env_policy::step_score(feats, theta, s, a)))
        .fold(0.0, f64::max)
}

fn zeta_from_scores(samples: &[Vec<Vec<f64>>], horizon: usize) -> (f64, f64) {
    let mut best = (0.0f64, 0.0f64);
    for h in 0..horizon {
        let sq: Vec<f64> = samples.iter().map(|s| linalg::norm_sq(&s[h])).collect();
        let (m, se) = mean_and_stderr(&sq);
        best.0 = best.0.max(m);
        best.1 = best.1.max(m + 3.0 * se);
    }
    best
}

/// Monte Carlo estimate of the per-step score second moment under on-policy
/// sampling.
pub fn estimate_zeta_phi_sq(
    spec: &MdpSpec,
    feats: &FeatureTable,
    theta: &PolicyParams,
    num_samples: usize,
    stream: RngStream,
    exec: Exec,
) -> Result<ZetaPhiEstimate> {
    if num_samples == 0 {
        return Err(Error::arg("num_samples must be at least 1"));
    }
    let samples = sample_step_scores(spec, feats, theta, theta, num_samples, stream, exec);
    let (estimate, upper) = zeta_from_scores(&samples, spec.horizon());
    Ok(ZetaPhiEstimate {
        estimate,
        upper,
        pointwise: pointwise_score_bound(spec, feats, theta),
        num_samples,
    })
}

/// Outcome of [`estimate_mixing`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingEstimate {
    pub varsigma: f64,
    pub c0: f64,
    /// No lag exceeded the noise floor; `(varsigma, c0) = (0, 1)`.
    pub degenerate: bool,
    /// Lag-k correlations for `k = 1..H-1`.
    pub lag_correlations: Vec<f64>,
    pub lag_stderr: Vec<f64>,
    pub noise_floor: f64,
    /// Per-step second moment used to normalize `c0`.
    pub zeta_phi_sq: f64,
    pub num_samples: usize,
}

impl MixingEstimate {
    /// `c_mix` with the independent-steps fallback applied.
    pub fn c_mix(&self) -> f64 {
        mixing_factor(self.c0, self.varsigma)
    }

    fn degenerate(lags: Vec<f64>, se: Vec<f64>, floor: f64, zeta: f64, n: usize) -> Self {
        Self {
            varsigma: 0.0,
            c0: 1.0,
            degenerate: true,
            lag_correlations: lags,
            lag_stderr: se,
            noise_floor: floor,
            zeta_phi_sq: zeta,
            num_samples: n,
        }
    }
}

/// Fits `log|c_k| ≈ log(c0 zeta) + k log varsigma` over the given lags.
fn fit_decay(points: &[(usize, f64)], zeta: f64) -> (f64, f64) {
    match points {
        [] => (0.0, 1.0),
        [(k, c)] => {
            let vs = (c / zeta).powf(1.0 / *k as f64).clamp(0.0, VARSIGMA_MAX);
            (vs, 1.0)
        }
        _ => {
            let xs: Vec<f64> = points.iter().map(|(k, _)| *k as f64).collect();
            let ys: Vec<f64> = points.iter().map(|(_, c)| c.ln()).collect();
            let (slope, intercept, _) = linalg::linear_fit(&xs, &ys);
            let vs = slope.exp().clamp(0.0, VARSIGMA_MAX);
            let c0 = (intercept.exp() / zeta).max(1.0);
            (vs, c0)
        }
    }
}

/// Estimates the trajectory mixing rate from lag-k score correlations.
///
/// Trajectories are rolled out under `behavior` and scored under `theta`.
/// Correlations are centered at the per-step mean score, which is zero in
/// expectation when `behavior == theta`. Lags whose magnitude is below
/// `3 / sqrt(n) * zeta_phi_sq` are treated as noise. With `inflate`, each
/// lag enters the fit at its three-standard-error upper bound.
pub fn estimate_mixing_under(
    spec: &MdpSpec,
    feats: &FeatureTable,
    theta: &PolicyParams,
    behavior: &PolicyParams,
    num_samples: usize,
    stream: RngStream,
    inflate: bool,
    exec: Exec,
) -> Result<MixingEstimate> {
    let horizon = spec.horizon();
    if horizon < 2 {
        return Err(Error::arg("mixing estimation needs horizon >= 2"));
    }
    if num_samples < 2 {
        return Err(Error::arg("mixing estimation needs at least 2 samples"));
    }
    let samples = sample_step_scores(spec, feats, theta, behavior, num_samples, stream, exec);
    let d = feats.dim();
    let n = num_samples as f64;
    let means: Vec<Vec<f64>> = (0..horizon)
        .map(|h| {
            let mut m = vec![0.0; d];
            for s in &samples {
                linalg::axpy(1.0 / n, &s[h], &mut m);
            }
            m
        })
        .collect();
    let (zeta, _) = zeta_from_scores(&samples, horizon);
    let floor = 3.0 / n.sqrt() * zeta;

    let mut lags = Vec::with_capacity(horizon - 1);
    let mut errs = Vec::with_capacity(horizon - 1);
    for k in 1..horizon {
        let per_sample: Vec<f64> = samples
            .iter()
            .map(|s| {
                let pairs = horizon - k;
                (0..pairs)
                    .map(|h| {
                        let a = linalg::sub(&s[h], &means[h]);
                        let b = linalg::sub(&s[h + k], &means[h + k]);
                        linalg::dot(&a, &b)
                    })
                    .sum::<f64>()
                    / pairs as f64
            })
            .collect();
        let (m, se) = mean_and_stderr(&per_sample);
        lags.push(m);
        errs.push(se);
    }

    let points: Vec<(usize, f64)> = lags
        .iter()
        .zip(&errs)
        .enumerate()
        .filter(|(_, (c, _))| c.abs() > floor)
        .map(|(i, (c, se))| (i + 1, if inflate { c.abs() + 3.0 * se } else { c.abs() }))
        .collect();
    if points.is_empty() || zeta <= 0.0 {
        return Ok(MixingEstimate::degenerate(lags, errs, floor, zeta, num_samples));
    }
    let (mut varsigma, c0) = fit_decay(&points, zeta);
    // a decay rate indistinguishable from zero is the independent-steps regime
    if varsigma <= 3.0 / n.sqrt() {
        varsigma = 0.0;
    }
    Ok(MixingEstimate {
        varsigma,
        c0,
        degenerate: false,
        lag_correlations: lags,
        lag_stderr: errs,
        noise_floor: floor,
        zeta_phi_sq: zeta,
        num_samples,
    })
}

/// On-policy [`estimate_mixing_under`] without inflation.
pub fn estimate_mixing(
    spec: &MdpSpec,
    feats: &FeatureTable,
    theta: &PolicyParams,
    num_samples: usize,
    stream: RngStream,
    exec: Exec,
) -> Result<MixingEstimate> {
    estimate_mixing_under(spec, feats, theta, theta, num_samples, stream, false, exec)
}

/// Aggregation weights `n_i / sum_m n_m`.
pub fn data_size_weights(clients: &[ClientDataset]) -> Vec<f64> {
    let total: usize = clients.iter().map(ClientDataset::len).sum();
    clients.iter().map(|c| c.len() as f64 / total as f64).collect()
}

/// Gradient diversity `(1/N) sum_i ||grad L - grad L_i||^2` with the
/// global gradient weighted by data size.
pub fn estimate_kappa_sq(
    clients: &[ClientDataset],
    feats: &FeatureTable,
    theta: &PolicyParams,
    cfg: &DpoConfig,
    exec: Exec,
) -> Result<f64> {
    if clients.len() < 2 {
        return Err(Error::arg("gradient diversity needs at least two clients"));
    }
    let grads: Vec<Vec<f64>> = dpo_core::per_client_loss_and_gradient(feats, theta.as_slice(), cfg, clients, exec)
        .into_iter()
        .map(|(_, g)| g)
        .collect();
    Ok(kappa_sq_from_gradients(&grads, &data_size_weights(clients)))
}

/// `(1/N) sum_i ||sum_j w_j g_j - g_i||^2`.
pub fn kappa_sq_from_gradients(grads: &[Vec<f64>], weights: &[f64]) -> f64 {
    let global = linalg::weighted_sum(grads, weights);
    grads.iter().map(|g| linalg::dist_sq(&global, g)).sum::<f64>() / grads.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizes {
    pub zeta_phi: usize,
    pub mixing: usize,
    pub kappa_clients: usize,
}

/// Estimated constants and their closed-form combinations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantReport {
    pub beta: f64,
    pub horizon: usize,
    pub zeta_phi_sq: f64,
    /// Deterministic `max_{s,u} ||step_score||^2` reported alongside.
    pub zeta_phi_sq_pointwise: f64,
    pub varsigma: f64,
    pub c0: f64,
    pub degenerate_mixing_fit: bool,
    pub c_mix: f64,
    pub smoothness_l: f64,
    pub zeta_g_sq: f64,
    pub kappa_sq: f64,
    /// Whether the Monte Carlo inputs are three-standard-error upper bounds.
    pub inflated: bool,
    pub sample_sizes: SampleSizes,
}

impl ConstantReport {
    /// Combines raw estimates; `c_mix`, `smoothness_l` and `zeta_g_sq` are
    /// computed from the formulas and nothing else.
    #[allow(clippy::too_many_arguments)]
    pub fn from_estimates(
        beta: f64,
        horizon: usize,
        zeta_phi_sq: f64,
        zeta_phi_sq_pointwise: f64,
        mixing: &MixingEstimate,
        kappa_sq: f64,
        inflated: bool,
        sample_sizes: SampleSizes,
    ) -> Self {
        let c_mix = mixing_factor(mixing.c0, mixing.varsigma);
        Self {
            beta,
            horizon,
            zeta_phi_sq,
            zeta_phi_sq_pointwise,
            varsigma: mixing.varsigma,
            c0: mixing.c0,
            degenerate_mixing_fit: mixing.degenerate,
            c_mix,
            smoothness_l: smoothness_constant(beta, c_mix, zeta_phi_sq, horizon),
            zeta_g_sq: variance_bound(beta, c_mix, zeta_phi_sq, horizon),
            kappa_sq,
            inflated,
            sample_sizes,
        }
    }

    /// Whether the derived fields equal their defining formulas bit for bit.
    pub fn is_consistent(&self) -> bool {
        let c_mix = mixing_factor(self.c0, self.varsigma);
        c_mix == self.c_mix
            && smoothness_constant(self.beta, c_mix, self.zeta_phi_sq, self.horizon) == self.smoothness_l
            && variance_bound(self.beta, c_mix, self.zeta_phi_sq, self.horizon) == self.zeta_g_sq
    }
}

/// Estimates every constant at `theta` for a federation. Scores are sampled
/// on-policy; with `inflate` the Monte Carlo quantities are replaced by
/// their three-standard-error upper bounds.
#[allow(clippy::too_many_arguments)]
pub fn estimate_constants(
    spec: &MdpSpec,
    feats: &FeatureTable,
    clients: &[ClientDataset],
    dpo: &DpoConfig,
    theta: &PolicyParams,
    num_samples: usize,
    stream: RngStream,
    inflate: bool,
    exec: Exec,
) -> Result<ConstantReport> {
    let zeta = estimate_zeta_phi_sq(spec, feats, theta, num_samples, stream.named("zeta_phi"), exec)?;
    let mixing = if spec.horizon() >= 2 {
        estimate_mixing_under(spec, feats, theta, theta, num_samples, stream.named("mixing"), inflate, exec)?
    } else {
        MixingEstimate::degenerate(vec![], vec![], 0.0, zeta.estimate, num_samples)
    };
    let kappa = if clients.len() >= 2 {
        estimate_kappa_sq(clients, feats, theta, dpo, exec)?
    } else {
        0.0
    };
    Ok(ConstantReport::from_estimates(
        dpo.beta,
        spec.horizon(),
        if inflate { zeta.upper } else { zeta.estimate },
        zeta.pointwise,
        &mixing,
        kappa,
        inflate,
        SampleSizes {
            zeta_phi: num_samples,
            mixing: num_samples,
            kappa_clients: clients.len(),
        },
    ))
}

/// Pairs whose analytic and finite-difference gradients both fall below
/// this norm agree; a vanishing score difference leaves only rounding
/// noise in the difference quotient.
pub const GRADCHECK_ZERO_NORM: f64 = 1e-8;

/// Outcome of [`gradcheck_suite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub instances: usize,
    pub pairs_checked: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Largest `||analytic - fd|| / max(||analytic||, ||fd||)` seen.
    pub max_rel_error: f64,
    pub pass: bool,
}

/// Compares the analytical pair gradient with central differences of the
/// pair loss on `num_instances` random instances with at most 5 states,
/// 5 actions, 8 features and horizon 6. Pairs with identical trajectories
/// are skipped since both sides vanish.
pub fn gradcheck_suite(num_instances: usize, pairs_per_instance: usize, step: f64, tolerance: f64, stream: RngStream, exec: Exec) -> Result<GradcheckReport> {
    use crate::env_policy::{Instance, InstanceConfig};
    use crate::preference_data::{self, HeterogeneityConfig};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    if num_instances == 0 || pairs_per_instance == 0 {
        return Err(Error::arg("gradcheck needs at least one instance and pair"));
    }
    let per_instance = exec.map_range(num_instances, |k| -> Result<(usize, f64)> {
        let s = stream.substream(k as u64);
        let mut rng = s.named("sizes").rng();
        let cfg = InstanceConfig {
            num_states: rng.random_range(1..=5),
            num_actions: rng.random_range(2..=5),
            feature_dim: rng.random_range(1..=8),
            horizon: rng.random_range(1..=6),
            phi_bound: 1.0,
        };
        let inst = Instance::random(&cfg, s.named("instance"))?;
        let d = cfg.feature_dim;
        let mut draw = |scale: f64| -> Vec<f64> { (0..d).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); scale * z }).collect::<Vec<f64>>() };
        let theta = PolicyParams::from(draw(0.7));
        let ref_theta = PolicyParams::from(draw(0.3));
        let base_weights = draw(1.0);
        let beta = rng.random_range(0.05..1.0);
        let het = HeterogeneityConfig {
            base_weights,
            perturbation_scale: 0.0,
            pairs_per_client: pairs_per_instance,
        };
        let ds = preference_data::generate_client_dataset(&inst.spec, &inst.feats, &ref_theta, &het, 0, s.named("data"))?;
        let dpo = DpoConfig {
            beta,
            ref_theta,
            loss_offset: 0.0,
        };
        let mut worst = 0.0f64;
        let mut checked = 0;
        for pair in ds.pairs.iter().filter(|p| p.plus != p.minus) {
            let analytic = dpo_core::pair_gradient(&inst.feats, &theta, &dpo, pair);
            let fd = finite_diff_gradient(
                |t: &[f64]| dpo_core::pair_loss(&inst.feats, &PolicyParams::from(t.to_vec()), &dpo, pair),
                theta.as_slice(),
                step,
            );
            let scale = linalg::norm(&analytic).max(linalg::norm(&fd));
            if scale >= GRADCHECK_ZERO_NORM {
                worst = worst.max(linalg::norm(&linalg::sub(&analytic, &fd)) / scale);
            }
            checked += 1;
        }
        Ok((checked, worst))
    });
    let mut pairs_checked = 0;
    let mut max_rel_error = 0.0f64;
    for r in per_instance {
        let (c, w) = r?;
        pairs_checked += c;
        max_rel_error = max_rel_error.max(w);
    }
    Ok(GradcheckReport {
        instances: num_instances,
        pairs_checked,
        step,
        tolerance,
        max_rel_error,
        pass: pairs_checked > 0 && max_rel_error < tolerance,
    })
}
