//! Sweep runners behind the `absorb` CLI. Every runner is deterministic in
//! its root seed apart from the wallclock column.

mod config;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

pub use config::{ExperimentConfig, Scenario};

use crate::bounds::{
    check_early_stop_tv, check_forward_kl, check_lower_bound_divergence, check_score_envelope, check_sum_bound,
    check_time_derivative, compute_gamma, default_manifest, is_mask_free, log_grid, BoundReport, CheckKind,
};
use crate::divergence::{empirical_from_indices, epsilon_score, kl, tv, write_metrics, MetricsRecord, Orientation};
use crate::error::{Error, Result};
use crate::forward::marginal;
use crate::reverse::{
    constant_with_steps, exact_law, geometric_with_steps, tau_leaping_run, uniformization_run, InitDist, SamplerKind,
    Schedule, TabulatedScore, UniformizationConfig, UniformizationPlan,
};
use crate::score::{ClipMode, ClippedScore, ExactScore, PerturbedScore, ScoreFn};
use crate::state_space::{ModelSpec, TokenId};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG for trial `trial` of sweep cell `cell`: the key mixes the root seed
/// and the cell counter, the ChaCha stream is the trial index.
pub fn trial_rng(root: u64, cell: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(root ^ splitmix64(cell)));
    rng.set_stream(trial);
    rng
}

/// Runs `f` on a pool of `jobs` threads, or the global pool when `None`.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn build_spec(cfg: &ExperimentConfig, source: &crate::state_space::Q0Source, dims: usize) -> Result<Arc<ModelSpec>> {
    Ok(Arc::new(ModelSpec::from_source(
        cfg.vocab,
        dims,
        cfg.mask.map(TokenId),
        source,
    )?))
}

/// Exact `KL(q_T ‖ p_init)` and TV for every (source, d, T). The sampler
/// column is `forward`; N, steps and δ are 0.
pub fn run_forward_convergence(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    let mut rows = Vec::new();
    for source in cfg.sources() {
        for &dims in &cfg.d {
            let spec = build_spec(cfg, &source, dims)?;
            for &horizon in &cfg.horizons {
                let clock = Instant::now();
                let q = marginal(&spec, horizon)?;
                let p = InitDist::for_horizon(horizon)?.dense(&spec);
                rows.push(MetricsRecord {
                    spec_hash: spec.fingerprint(),
                    sampler: "forward".into(),
                    vocab: cfg.vocab,
                    d: dims,
                    horizon,
                    delta: 0.0,
                    steps_n: 0,
                    seed: cfg.seed,
                    kl: kl(&q, &p)?,
                    tv: tv(&q, &p)?,
                    score_entropy_sum: 0.0,
                    steps: 0.0,
                    wallclock_s: clock.elapsed().as_secs_f64(),
                });
            }
        }
    }
    Ok(rows)
}

/// Geometric steps when δ > 0, constant steps when δ = 0.
pub fn sweep_schedule(horizon: f64, delta: f64, steps: usize) -> Result<Schedule> {
    if delta > 0.0 {
        geometric_with_steps(horizon, delta, steps)
    } else {
        constant_with_steps(horizon, delta, steps)
    }
}

fn estimator(spec: &Arc<ModelSpec>, eta: f64, seed: u64) -> Result<Arc<dyn ScoreFn>> {
    let exact: Arc<dyn ScoreFn> = Arc::new(ExactScore::analytic(spec.clone()));
    if eta == 0.0 {
        Ok(exact)
    } else {
        Ok(Arc::new(PerturbedScore::new(exact, eta, seed)?))
    }
}

struct Cell<'a> {
    cfg: &'a ExperimentConfig,
    spec: &'a ModelSpec,
    schedule: &'a Schedule,
    score_entropy_sum: f64,
}

impl Cell<'_> {
    fn row(&self, sampler: String, kl: f64, tv: f64, steps: f64, clock: Instant) -> MetricsRecord {
        MetricsRecord {
            spec_hash: self.spec.fingerprint(),
            sampler,
            vocab: self.cfg.vocab,
            d: self.spec.dims(),
            horizon: self.schedule.horizon(),
            delta: self.schedule.delta(),
            steps_n: self.schedule.steps(),
            seed: self.cfg.seed,
            kl,
            tv,
            score_entropy_sum: self.score_entropy_sum,
            steps,
            wallclock_s: clock.elapsed().as_secs_f64(),
        }
    }
}

fn tag(kind: &str, mode: &str, schedule: &Schedule, eta: f64) -> String {
    format!("{kind}:{mode}:{}:eta={eta}", schedule.rule().name())
}

/// τ-leaping over (source, d, T, δ, η, N). Emits a `tau:exact:*` row from
/// the exact kernel law when `exact_law` is set and a `tau:mc:*` row from
/// `trials` trajectories.
pub fn run_tau_sweep(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    let mut rows = Vec::new();
    let mut cell_id = 0u64;
    for source in cfg.sources() {
        for &dims in &cfg.d {
            let spec = build_spec(cfg, &source, dims)?;
            for &horizon in &cfg.horizons {
                let init = InitDist::for_horizon(horizon)?;
                for &delta in &cfg.delta {
                    let target = marginal(&spec, delta)?;
                    for &eta in &cfg.eta {
                        let score = estimator(&spec, eta, cfg.seed)?;
                        for &n in &cfg.steps {
                            cell_id += 1;
                            let schedule = sweep_schedule(horizon, delta, n)?;
                            let cell = Cell {
                                cfg,
                                spec: &spec,
                                schedule: &schedule,
                                score_entropy_sum: epsilon_score(score.as_ref(), &schedule, Orientation::IntoCurrent)?,
                            };
                            if cfg.exact_law {
                                let clock = Instant::now();
                                let law = exact_law(score.as_ref(), &schedule, &init, SamplerKind::TauLeaping)?;
                                rows.push(cell.row(
                                    tag("tau", "exact", &schedule, eta),
                                    kl(&target, &law)?,
                                    tv(&target, &law)?,
                                    schedule.steps() as f64,
                                    clock,
                                ));
                            }
                            let clock = Instant::now();
                            let table = TabulatedScore::for_schedule(score.as_ref(), &schedule)?;
                            let samples = with_jobs(cfg.jobs, || {
                                (0..cfg.trials as u64)
                                    .into_par_iter()
                                    .map(|i| {
                                        let mut rng = trial_rng(cfg.seed, cell_id, i);
                                        let x = tau_leaping_run(&table, &schedule, &init, &mut rng)?;
                                        spec.encode(&x)
                                    })
                                    .collect::<Result<Vec<usize>>>()
                            })??;
                            let (k, t) = empirical_metrics(&spec, &target, &samples)?;
                            rows.push(cell.row(tag("tau", "mc", &schedule, eta), k, t, schedule.steps() as f64, clock));
                        }
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// Smoothed KL (α = 1/M) and raw TV of the empirical law against `target`.
fn empirical_metrics(
    spec: &ModelSpec,
    target: &crate::state_space::DenseDist,
    samples: &[usize],
) -> Result<(f64, f64)> {
    let m = samples.len() as f64;
    let smooth = empirical_from_indices(spec.num_states(), samples, 1.0 / m)?;
    let raw = empirical_from_indices(spec.num_states(), samples, 0.0)?;
    Ok((kl(target, &smooth)?, tv(target, &raw)?))
}

/// Clipped estimator for uniformization: `κ/t` with early stopping,
/// `κ max(1/γ, 1/t)` without.
pub fn clipped_estimator(
    spec: &Arc<ModelSpec>,
    eta: f64,
    seed: u64,
    kappa: f64,
    delta: f64,
) -> Result<Arc<dyn ScoreFn>> {
    let mode = if delta > 0.0 {
        ClipMode::EarlyStop
    } else {
        ClipMode::NoEarlyStop {
            gamma: compute_gamma(spec),
        }
    };
    Ok(Arc::new(ClippedScore::new(estimator(spec, eta, seed)?, kappa, mode)?))
}

/// Uniformization over (source, d, T, δ, η, N). The `unif:exact:*` row
/// reports the expected event count `Σ λ_k Δ_k` in `steps`; the `unif:mc:*`
/// row reports the mean realized count.
pub fn run_uniformization_sweep(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    let ucfg = UniformizationConfig::new(cfg.lambda_mode, cfg.kappa_lambda)?;
    let mut rows = Vec::new();
    let mut cell_id = 0u64;
    for source in cfg.sources() {
        for &dims in &cfg.d {
            let spec = build_spec(cfg, &source, dims)?;
            for &horizon in &cfg.horizons {
                let init = InitDist::for_horizon(horizon)?;
                for &delta in &cfg.delta {
                    let target = marginal(&spec, delta)?;
                    for &eta in &cfg.eta {
                        let score = clipped_estimator(&spec, eta, cfg.seed, cfg.kappa_clip, delta)?;
                        for &n in &cfg.steps {
                            cell_id += 1;
                            let schedule = sweep_schedule(horizon, delta, n)?;
                            let plan = UniformizationPlan::new(score.as_ref(), &schedule, &ucfg)?;
                            let cell = Cell {
                                cfg,
                                spec: &spec,
                                schedule: &schedule,
                                score_entropy_sum: epsilon_score(score.as_ref(), &schedule, Orientation::IntoCurrent)?,
                            };
                            if cfg.exact_law {
                                let clock = Instant::now();
                                let law = exact_law(score.as_ref(), &schedule, &init, SamplerKind::Uniformization)?;
                                rows.push(cell.row(
                                    tag("unif", "exact", &schedule, eta),
                                    kl(&target, &law)?,
                                    tv(&target, &law)?,
                                    plan.expected_events(),
                                    clock,
                                ));
                            }
                            let clock = Instant::now();
                            let runs = with_jobs(cfg.jobs, || {
                                (0..cfg.trials as u64)
                                    .into_par_iter()
                                    .map(|i| {
                                        let mut rng = trial_rng(cfg.seed, cell_id, i);
                                        let (x, events) =
                                            uniformization_run(score.as_ref(), &schedule, &plan, &init, &mut rng)?;
                                        Ok((spec.encode(&x)?, events))
                                    })
                                    .collect::<Result<Vec<(usize, u64)>>>()
                            })??;
                            let samples: Vec<usize> = runs.iter().map(|r| r.0).collect();
                            let mean_events = runs.iter().map(|r| r.1 as f64).sum::<f64>() / runs.len() as f64;
                            let (k, t) = empirical_metrics(&spec, &target, &samples)?;
                            rows.push(cell.row(tag("unif", "mc", &schedule, eta), k, t, mean_events, clock));
                        }
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// Bound reports for one manifest entry.
#[derive(Debug, Clone, Serialize)]
pub struct ManifestReports {
    pub label: String,
    pub reports: Vec<BoundReport>,
}

/// Every bound check over the manifest (the built-in one when the config
/// has none). `T` in the config is the forward-KL grid.
pub fn run_bounds(cfg: &ExperimentConfig) -> Result<Vec<ManifestReports>> {
    let manifest = cfg.manifest.clone().unwrap_or_else(default_manifest);
    let times = log_grid(1e-3, 20.0, 25);
    let deltas = log_grid(1e-3, 0.5, 10);
    let near_zero = log_grid(1e-3, 1.0, 10);
    let horizons = if cfg.horizons.is_empty() {
        (4..=12).map(f64::from).collect()
    } else {
        cfg.horizons.clone()
    };
    with_jobs(cfg.jobs, || {
        manifest
            .par_iter()
            .map(|entry| {
                let spec = Arc::new(ModelSpec::from_config(&entry.spec)?);
                let exact = ExactScore::analytic(spec.clone());
                let mut reports = vec![check_forward_kl(&spec, &horizons)?];
                reports.extend(check_score_envelope(&exact, &times)?);
                reports.push(check_sum_bound(&exact, &times)?);
                reports.push(check_time_derivative(&exact, &times, 1e-4)?);
                reports.push(check_early_stop_tv(&spec, &deltas)?);
                if is_mask_free(&spec) {
                    reports.push(check_lower_bound_divergence(&exact, &near_zero)?);
                }
                Ok(ManifestReports {
                    label: entry.label.clone(),
                    reports,
                })
            })
            .collect()
    })?
}

/// True when every exact-constant check passed.
pub fn exact_checks_pass(all: &[ManifestReports]) -> bool {
    all.iter()
        .flat_map(|m| &m.reports)
        .filter(|r| r.kind == CheckKind::Exact)
        .all(|r| r.pass)
}

/// What a scenario run wrote.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioOutput {
    pub scenario: Scenario,
    pub file: PathBuf,
    pub rows: usize,
    /// False when an exact-constant bound check failed.
    pub ok: bool,
}

/// Runs one scenario and writes its CSV (or JSON report) into `out_dir`.
pub fn run_scenario(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ScenarioOutput> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let file = out_dir.join(match cfg.scenario {
        Scenario::Bounds => "bounds.json".to_string(),
        s => format!("{}.csv", s.name()),
    });
    let (rows, ok) = match cfg.scenario {
        Scenario::Forward => write_rows(&file, run_forward_convergence(cfg)?)?,
        Scenario::Tau => write_rows(&file, run_tau_sweep(cfg)?)?,
        Scenario::Unif => write_rows(&file, run_uniformization_sweep(cfg)?)?,
        Scenario::Bounds => {
            let reports = run_bounds(cfg)?;
            std::fs::write(&file, serde_json::to_string_pretty(&reports)?)?;
            (
                reports.iter().map(|m| m.reports.len()).sum(),
                exact_checks_pass(&reports),
            )
        }
    };
    Ok(ScenarioOutput {
        scenario: cfg.scenario,
        file,
        rows,
        ok,
    })
}

fn write_rows(path: &Path, rows: Vec<MetricsRecord>) -> Result<(usize, bool)> {
    write_metrics(path, &rows)?;
    Ok((rows.len(), true))
}

/// `git describe`-style version string, falling back to the crate version.
pub fn version_string() -> String {
    let pkg = format!("v{}", env!("CARGO_PKG_VERSION"));
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| format!("{pkg}-g{}", s.trim()))
        .unwrap_or(pkg)
}

#[derive(Serialize)]
struct RunManifest<'a> {
    version: String,
    configs: &'a [ExperimentConfig],
    outputs: &'a [ScenarioOutput],
}

/// Writes `manifest.json` echoing the configs and listing the outputs.
pub fn write_run_manifest(out_dir: &Path, configs: &[ExperimentConfig], outputs: &[ScenarioOutput]) -> Result<PathBuf> {
    let path = out_dir.join("manifest.json");
    let manifest = RunManifest {
        version: version_string(),
        configs,
        outputs,
    };
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}
