use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::init::InitDist;
use super::schedule::Schedule;
use super::tau::rates_or_frozen;
use crate::bounds::compute_gamma;
use crate::error::{Error, Result};
use crate::score::ScoreFn;
use crate::state_space::StateVec;

/// How the per-interval intensity `λ_k` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaMode {
    /// `κ_λ d / (T - t_{k+1})`, or with `δ = 0`
    /// `κ_λ d min((S - 1)/γ, 1/(T - t_{k+1}))`.
    Analytic,
    /// `κ_λ` times the largest total unmasking rate over all states, taken
    /// at both interval endpoints and the midpoint.
    ExactSup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformizationConfig {
    pub mode: LambdaMode,
    pub kappa_lambda: f64,
}

impl Default for UniformizationConfig {
    fn default() -> Self {
        UniformizationConfig {
            mode: LambdaMode::Analytic,
            kappa_lambda: 1.0,
        }
    }
}

impl UniformizationConfig {
    pub fn new(mode: LambdaMode, kappa_lambda: f64) -> Result<Self> {
        if !(kappa_lambda.is_finite() && kappa_lambda >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "kappa_lambda must be >= 1, got {kappa_lambda}"
            )));
        }
        Ok(UniformizationConfig { mode, kappa_lambda })
    }
}

/// Dominating intensity for reverse interval `k`.
pub fn lambda_for_interval(
    score: &dyn ScoreFn,
    schedule: &Schedule,
    k: usize,
    cfg: &UniformizationConfig,
) -> Result<f64> {
    let spec = score.spec();
    let (a, b) = schedule.interval(k);
    match cfg.mode {
        LambdaMode::Analytic => {
            let d = spec.dims() as f64;
            let t_end = schedule.forward_time(b);
            let inv_t = if t_end > 0.0 { 1.0 / t_end } else { f64::INFINITY };
            let per_dim = if schedule.delta() > 0.0 {
                inv_t
            } else {
                let gamma = compute_gamma(spec);
                let cap = if gamma > 0.0 {
                    (spec.vocab() - 1) as f64 / gamma
                } else {
                    f64::INFINITY
                };
                cap.min(inv_t)
            };
            if !per_dim.is_finite() {
                return Err(Error::InvalidArgument(
                    "analytic intensity is unbounded: delta = 0 needs a data distribution with gamma > 0".into(),
                ));
            }
            Ok(cfg.kappa_lambda * d * per_dim)
        }
        LambdaMode::ExactSup => {
            let mut sup: f64 = 0.0;
            for tau in [a, 0.5 * (a + b), b] {
                let table = score.table(schedule.forward_time(tau), k)?;
                for x in 0..spec.num_states() {
                    if let Some(rates) = table.unmask_scores(spec, x) {
                        sup = sup.max(rates.iter().map(|r| r.score).sum());
                    }
                }
            }
            Ok(cfg.kappa_lambda * sup)
        }
    }
}

/// Intensities for every interval of a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformizationPlan {
    lambdas: Vec<f64>,
    widths: Vec<f64>,
}

impl UniformizationPlan {
    pub fn new(score: &dyn ScoreFn, schedule: &Schedule, cfg: &UniformizationConfig) -> Result<Self> {
        let lambdas = (0..schedule.steps())
            .map(|k| lambda_for_interval(score, schedule, k, cfg))
            .collect::<Result<Vec<_>>>()?;
        let widths = (0..schedule.steps())
            .map(|k| {
                let (a, b) = schedule.interval(k);
                b - a
            })
            .collect();
        Ok(UniformizationPlan { lambdas, widths })
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// `Σ_k λ_k Δ_k`, the expected number of clock events.
    pub fn expected_events(&self) -> f64 {
        self.lambdas.iter().zip(&self.widths).map(|(l, w)| l * w).sum()
    }
}

/// Relative slack before a total rate counts as exceeding `λ_k`.
const OVERFLOW_SLACK: f64 = 1e-9;

/// One uniformization trajectory. Returns the final state and the total
/// number of clock events `Σ_k M_k`.
pub fn uniformization_run<R: Rng + ?Sized>(
    score: &dyn ScoreFn,
    schedule: &Schedule,
    plan: &UniformizationPlan,
    init: &InitDist,
    rng: &mut R,
) -> Result<(StateVec, u64)> {
    let spec = score.spec();
    let mut x = spec.encode(&init.sample(spec, rng))?;
    let mut events = 0u64;
    let mut times = Vec::new();
    for k in 0..schedule.steps() {
        let (a, b) = schedule.interval(k);
        let lambda = plan.lambdas[k];
        let mean = lambda * (b - a);
        if mean <= 0.0 {
            continue;
        }
        let count = Poisson::new(mean)
            .map_err(|e| Error::InvalidArgument(format!("poisson mean {mean}: {e}")))?
            .sample(rng) as u64;
        events += count;
        times.clear();
        times.extend((0..count).map(|_| a + (b - a) * rng.random::<f64>()));
        times.sort_by(f64::total_cmp);
        for &tau in &times {
            if spec.mask_count_at(x) == 0 {
                // nothing left to unmask; remaining events are holds
                break;
            }
            let t = schedule.forward_time(tau);
            let Some(rates) = rates_or_frozen(score, t, k, x)? else {
                continue;
            };
            let total: f64 = rates.iter().map(|r| r.score).sum();
            if total > lambda * (1.0 + OVERFLOW_SLACK) {
                return Err(Error::IntensityTooSmall { lambda, total, t });
            }
            let mut u = rng.random::<f64>() * lambda;
            for r in &rates {
                if u < r.score {
                    x = r.target;
                    break;
                }
                u -= r.score;
            }
        }
    }
    Ok((spec.decode(x)?, events))
}
