//! Ensemble uncertainty quantification: member diversification, independent
//! training, and the posterior Gaussian summary of the inertia estimate.
//!
//! Members differ in network initialization, label-noise level, labeled
//! fraction, and the (t, P) subdomain they train on. Each member contributes
//! one scalar inertia estimate (the grid mean of its inertia network); the
//! ensemble mean and population variance define the posterior Gaussian, and
//! the confidence interval is the two-sided normal band at the stated level.

use crate::dataset::{corrupt_with_noise, partition, Dataset, DatasetError, Trajectory};
use crate::dynamics::BusSystem;
use crate::pinn::{angle_mare, eval_grid, train, PinnError, PinnModel, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Label-noise levels cycled across members (radians).
pub const NOISE_PALETTE: [f64; 4] = [0.0, 0.005, 0.01, 0.02];

/// Labeled-collocation fraction band sampled per member.
pub const LABELED_FRACTION_RANGE: (f64, f64) = (0.25, 0.50);

/// Subrange endpoints move by at most this share of the base range width.
const SUBRANGE_JITTER: f64 = 0.10;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("ensemble needs at least one member")]
    NoMembers,
    #[error("member {index} failed: {source}")]
    MemberFailed {
        index: usize,
        #[source]
        source: PinnError,
    },
    #[error("all members diverged; nothing to aggregate")]
    AllMembersDiverged,
    #[error("ensemble aggregation needs exactly one unknown inertia (system has {0})")]
    UnknownCount(usize),
    #[error("no estimates to aggregate")]
    EmptyEstimates,
    #[error("confidence level must lie strictly inside (0, 1), got {0}")]
    BadLevel(f64),
    #[error("variance must be nonnegative, got {0}")]
    NegativeVariance(f64),
    #[error("member {index}: restricted dataset is empty")]
    EmptyRestriction { index: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Per-member diversity settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberConfig {
    pub index: usize,
    /// Network-initialization seed.
    pub init_seed: u64,
    /// Label-noise seed.
    pub noise_seed: u64,
    /// Partition-sampling seed.
    pub partition_seed: u64,
    /// Label-noise standard deviation (radians).
    pub noise_sigma: f64,
    /// Share of collocation points also labeled, in [0.25, 0.50].
    pub labeled_fraction: f64,
    /// Power subdomain this member trains on (within the system range).
    pub p_subrange: (f64, f64),
    /// Time subdomain this member trains on (within the system span).
    pub t_subrange: (f64, f64),
    /// Training hyperparameters (seed drives batch sampling).
    pub train: TrainConfig,
}

/// Aggregation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOptions {
    /// Collocation points per member (clamped to the member's grid).
    pub n_collocation: usize,
    /// Two-sided coverage of the reported interval.
    pub confidence_level: f64,
    /// Shared evaluation grid (t-points, P-points) for the scalar estimate.
    pub eval_grid: (usize, usize),
    /// Drop diverged members instead of failing the whole ensemble.
    pub skip_divergent: bool,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions {
            n_collocation: 9000,
            confidence_level: 0.95,
            eval_grid: (21, 21),
            skip_divergent: false,
        }
    }
}

/// Per-member results embedded in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberReport {
    pub index: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub labeled_fraction: f64,
    pub p_subrange: (f64, f64),
    pub t_subrange: (f64, f64),
    pub angle_mare: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub level: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Aggregated posterior summary of the unknown inertia.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub system: String,
    pub n: usize,
    pub estimates: Vec<f64>,
    pub mu: f64,
    pub sigma2: f64,
    pub sigma: f64,
    pub ci: ConfidenceInterval,
    pub members: Vec<MemberReport>,
}

impl EnsembleReport {
    pub fn save_json(&self, path: &Path) -> Result<(), EnsembleError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self, EnsembleError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Recompute mu, sigma², and the interval from the stored estimates and
    /// compare with the stored values (exact equality).
    pub fn is_self_consistent(&self) -> bool {
        match posterior_stats(&self.estimates) {
            Ok((mu, sigma2)) => {
                let ci_ok = matches!(
                    confidence_interval(mu, sigma2, self.ci.level),
                    Ok((lo, hi)) if lo == self.ci.lo && hi == self.ci.hi
                );
                mu == self.mu && sigma2 == self.sigma2 && self.sigma == sigma2.sqrt() && ci_ok
            }
            Err(_) => false,
        }
    }
}

/// Derive `n` diversified member configurations from one master seed.
///
/// Members receive distinct seeds, noise levels cycled through the palette,
/// labeled fractions uniform in [0.25, 0.50], and subranges whose endpoints
/// are jittered by up to ±10% of the range width, clamped to the base
/// domain. The time subrange keeps its lower end at 0 so initial-condition
/// samples survive.
pub fn derive_member_configs(
    n: usize,
    system: &BusSystem,
    base: &TrainConfig,
    noise_palette: &[f64],
    master_seed: u64,
) -> Result<Vec<MemberConfig>, EnsembleError> {
    if n == 0 {
        return Err(EnsembleError::NoMembers);
    }
    let palette = if noise_palette.is_empty() {
        &NOISE_PALETTE[..]
    } else {
        noise_palette
    };
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let (p_lo, p_hi) = system.p_range;
    let p_width = p_hi - p_lo;
    let t_hi = system.t_span.1;

    let mut configs = Vec::with_capacity(n);
    for index in 0..n {
        let init_seed: u64 = rng.random();
        let noise_seed: u64 = rng.random();
        let partition_seed: u64 = rng.random();
        let train_seed: u64 = rng.random();
        let labeled_fraction =
            rng.random_range(LABELED_FRACTION_RANGE.0..=LABELED_FRACTION_RANGE.1);
        let jitter = SUBRANGE_JITTER * p_width;
        let lo = (p_lo + rng.random_range(-1.0..=1.0) * jitter).clamp(p_lo, p_hi);
        let hi = (p_hi + rng.random_range(-1.0..=1.0) * jitter).clamp(p_lo, p_hi);
        let t_cut = (t_hi + rng.random_range(-1.0..=1.0) * SUBRANGE_JITTER * t_hi).clamp(0.0, t_hi);

        let mut train = *base;
        train.seed = train_seed;
        configs.push(MemberConfig {
            index,
            init_seed,
            noise_seed,
            partition_seed,
            noise_sigma: palette[index % palette.len()],
            labeled_fraction,
            p_subrange: (lo, hi),
            t_subrange: (0.0, t_cut),
            train,
        });
    }
    Ok(configs)
}

/// Member view of the dataset: trajectories within the power subrange,
/// samples within the time subrange. Initial-condition rows always survive.
fn restrict_dataset(dataset: &Dataset, p_sub: (f64, f64), t_sub: (f64, f64)) -> Dataset {
    let trajectories: Vec<Trajectory> = dataset
        .trajectories
        .iter()
        .filter(|traj| traj.p_input >= p_sub.0 && traj.p_input <= p_sub.1)
        .map(|traj| {
            let keep: Vec<usize> = traj
                .times
                .iter()
                .enumerate()
                .filter(|&(i, &t)| i == 0 || (t >= t_sub.0 && t <= t_sub.1))
                .map(|(i, _)| i)
                .collect();
            Trajectory {
                p_input: traj.p_input,
                times: keep.iter().map(|&i| traj.times[i]).collect(),
                angles: keep.iter().map(|&i| traj.angles[i].clone()).collect(),
            }
        })
        .collect();
    Dataset {
        system_id: dataset.system_id.clone(),
        n_gen: dataset.n_gen,
        trajectories,
        noise: dataset.noise,
        provenance: dataset.provenance,
    }
}

/// Outcome of one member's pipeline.
pub struct TrainedMember {
    pub model: PinnModel,
    pub estimate: f64,
    pub report: MemberReport,
}

fn run_member(
    system: &BusSystem,
    dataset: &Dataset,
    cfg: &MemberConfig,
    opts: &EnsembleOptions,
    grid: &[(f64, f64)],
) -> Result<TrainedMember, EnsembleError> {
    let fail = |source: PinnError| EnsembleError::MemberFailed {
        index: cfg.index,
        source,
    };

    let noisy = corrupt_with_noise(dataset, cfg.noise_sigma, cfg.noise_seed)?;
    let restricted = restrict_dataset(&noisy, cfg.p_subrange, cfg.t_subrange);
    if restricted.n_samples() == 0 {
        return Err(EnsembleError::EmptyRestriction { index: cfg.index });
    }
    let n_col = opts.n_collocation.min(restricted.n_samples());
    let part = partition(&restricted, n_col, cfg.labeled_fraction, cfg.partition_seed)?;

    let model = PinnModel::new(system.clone(), cfg.init_seed).map_err(fail)?;
    let (trained, history) = train(&model, &part, &cfg.train).map_err(fail)?;

    let estimate = trained.inertia_estimate(grid).map_err(fail)?[0];
    let mare = angle_mare(&trained, &dataset.trajectories).map_err(fail)?;
    let final_loss = history.last().map(|l| l.total).unwrap_or(f64::NAN);

    Ok(TrainedMember {
        model: trained,
        estimate,
        report: MemberReport {
            index: cfg.index,
            seed: cfg.init_seed,
            noise_sigma: cfg.noise_sigma,
            labeled_fraction: cfg.labeled_fraction,
            p_subrange: cfg.p_subrange,
            t_subrange: cfg.t_subrange,
            angle_mare: mare,
            final_loss,
        },
    })
}

/// Train every member on its own noisy, restricted partition of the clean
/// dataset and aggregate the scalar estimates into the posterior report.
///
/// `jobs > 1` trains members concurrently; results are identical for any
/// jobs value because each member's randomness is derived solely from its
/// own seeds and aggregation runs in index order.
pub fn train_ensemble(
    system: &BusSystem,
    dataset: &Dataset,
    configs: &[MemberConfig],
    opts: &EnsembleOptions,
    jobs: usize,
) -> Result<(Vec<PinnModel>, EnsembleReport), EnsembleError> {
    if configs.is_empty() {
        return Err(EnsembleError::NoMembers);
    }
    if system.n_unknown_inertia() != 1 {
        return Err(EnsembleError::UnknownCount(system.n_unknown_inertia()));
    }
    let grid = eval_grid(system, opts.eval_grid.0, opts.eval_grid.1);

    let run = |cfg: &MemberConfig| run_member(system, dataset, cfg, opts, &grid);
    let results: Vec<Result<TrainedMember, EnsembleError>> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .expect("thread pool");
        pool.install(|| configs.par_iter().map(run).collect())
    } else {
        configs.iter().map(run).collect()
    };

    let mut members = Vec::with_capacity(configs.len());
    for result in results {
        match result {
            Ok(m) => members.push(m),
            Err(EnsembleError::MemberFailed { index, source })
                if opts.skip_divergent && matches!(source, PinnError::Diverged { .. }) =>
            {
                log::warn!("member {index} diverged and was skipped: {source}");
            }
            Err(e) => return Err(e),
        }
    }
    if members.is_empty() {
        return Err(EnsembleError::AllMembersDiverged);
    }

    let estimates: Vec<f64> = members.iter().map(|m| m.estimate).collect();
    let (mu, sigma2) = posterior_stats(&estimates)?;
    let (lo, hi) = confidence_interval(mu, sigma2, opts.confidence_level)?;

    let report = EnsembleReport {
        system: dataset.system_id.clone(),
        n: members.len(),
        estimates,
        mu,
        sigma2,
        sigma: sigma2.sqrt(),
        ci: ConfidenceInterval {
            level: opts.confidence_level,
            lo,
            hi,
        },
        members: members.iter().map(|m| m.report.clone()).collect(),
    };
    Ok((members.into_iter().map(|m| m.model).collect(), report))
}

/// Ensemble mean and population variance of the estimates.
///
/// Computed by the shifted two-pass formula, which equals the printed
/// mean-of-squares-minus-μ² form exactly in exact arithmetic and never goes
/// negative in floating point.
pub fn posterior_stats(estimates: &[f64]) -> Result<(f64, f64), EnsembleError> {
    if estimates.is_empty() {
        return Err(EnsembleError::EmptyEstimates);
    }
    let n = estimates.len() as f64;
    let mu = estimates.iter().sum::<f64>() / n;
    let sigma2 = estimates.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    Ok((mu, sigma2))
}

/// Pointwise posterior over the evaluation grid: the same mean/variance
/// formulas applied to the members' inertia predictions at each (t, P).
pub fn pointwise_posterior(
    models: &[PinnModel],
    grid: &[(f64, f64)],
) -> Result<Vec<(f64, f64, f64, f64)>, EnsembleError> {
    let mut out = Vec::with_capacity(grid.len());
    for &(t, p) in grid {
        let estimates: Vec<f64> = models
            .iter()
            .enumerate()
            .map(|(index, m)| {
                m.inertia_estimate(&[(t, p)])
                    .map(|e| e[0])
                    .map_err(|source| EnsembleError::MemberFailed { index, source })
            })
            .collect::<Result<_, _>>()?;
        let (mu, sigma2) = posterior_stats(&estimates)?;
        out.push((t, p, mu, sigma2));
    }
    Ok(out)
}

/// Two-sided normal confidence interval [μ − zσ, μ + zσ] at the given
/// coverage level.
pub fn confidence_interval(
    mu: f64,
    sigma2: f64,
    level: f64,
) -> Result<(f64, f64), EnsembleError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(EnsembleError::BadLevel(level));
    }
    if !(sigma2 >= 0.0) {
        return Err(EnsembleError::NegativeVariance(sigma2));
    }
    let z = normal_quantile(0.5 * (1.0 + level));
    let half = z * sigma2.sqrt();
    Ok((mu - half, mu + half))
}

/// Standard-normal quantile Φ⁻¹(p) by Acklam's rational approximation
/// (absolute error below 1e-8 over (0, 1)).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile domain is (0, 1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |p: f64| -> f64 {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    if p < P_LOW {
        tail(p)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail(1.0 - p)
    }
}
