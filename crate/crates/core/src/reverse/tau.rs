use rand::Rng;

use super::init::InitDist;
use super::schedule::Schedule;
use crate::error::{Error, Result};
use crate::score::{unmask_targets, ScoreFn, ScoreTable, TransitionPair, UnmaskScore};
use crate::state_space::{ModelSpec, StateVec};

/// Score tables precomputed at the left endpoint of every schedule step.
///
/// τ-leaping only queries `ŝ_{T - t_k}` during step `k`, so a run with many
/// trajectories can share one table per step. Queries are answered by step
/// index; the time argument is ignored.
pub struct TabulatedScore {
    spec: ModelSpec,
    label: String,
    tables: Vec<ScoreTable>,
}

impl TabulatedScore {
    pub fn for_schedule(base: &dyn ScoreFn, schedule: &Schedule) -> Result<Self> {
        let tables = (0..schedule.steps())
            .map(|k| base.table(schedule.forward_time(schedule.grid()[k]), k))
            .collect::<Result<Vec<_>>>()?;
        Ok(TabulatedScore {
            spec: base.spec().clone(),
            label: base.describe(),
            tables,
        })
    }

    pub fn steps(&self) -> usize {
        self.tables.len()
    }
}

impl ScoreFn for TabulatedScore {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn describe(&self) -> String {
        format!("tabulated({})", self.label)
    }

    fn score(&self, t: f64, step: usize, pair: &TransitionPair) -> Result<f64> {
        let x = self.spec.encode(pair.x())?;
        let v = self.lookup(step)?.get(x, pair.dim(), pair.token().index());
        if v.is_nan() {
            return Err(Error::ZeroMass { state: x, t });
        }
        Ok(v)
    }

    fn unmask_scores(&self, t: f64, step: usize, x: usize) -> Result<Vec<UnmaskScore>> {
        self.lookup(step)?
            .unmask_scores(&self.spec, x)
            .ok_or(Error::ZeroMass { state: x, t })
    }

    fn table(&self, _t: f64, step: usize) -> Result<ScoreTable> {
        self.lookup(step).cloned()
    }
}

impl TabulatedScore {
    fn lookup(&self, step: usize) -> Result<&ScoreTable> {
        self.tables.get(step).ok_or(Error::IndexOutOfRange {
            index: step,
            len: self.tables.len(),
        })
    }
}

/// Rates out of `x`, or `None` when `x` has zero mass under the oracle.
/// Such a state has no defined reverse rates and is held in place.
pub(crate) fn rates_or_frozen(score: &dyn ScoreFn, t: f64, step: usize, x: usize) -> Result<Option<Vec<UnmaskScore>>> {
    match score.unmask_scores(t, step, x) {
        Ok(s) => Ok(Some(s)),
        Err(Error::ZeroMass { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// One τ-leaping trajectory from a fresh draw of `init`.
///
/// During step `k` every masked dimension `i` and non-mask target `b` fire
/// independently with Poisson mean `Q(y, x) ŝ_{T - t_k}(y, x) Δ_k` where
/// `Q(y, x) = 1` on unmasking pairs. Only whether a count is positive
/// matters: several fired targets in one dimension resolve to a uniform
/// choice among them.
pub fn tau_leaping_run<R: Rng + ?Sized>(
    score: &dyn ScoreFn,
    schedule: &Schedule,
    init: &InitDist,
    rng: &mut R,
) -> Result<StateVec> {
    let spec = score.spec();
    let mut x = spec.encode(&init.sample(spec, rng))?;
    let mut fired: Vec<usize> = Vec::with_capacity(spec.vocab());
    for k in 0..schedule.steps() {
        let (a, b) = schedule.interval(k);
        let dt = b - a;
        let Some(rates) = rates_or_frozen(score, schedule.forward_time(a), k, x)? else {
            continue;
        };
        let start = x;
        let mut i = 0;
        while i < rates.len() {
            let dim = rates[i].dim;
            fired.clear();
            while i < rates.len() && rates[i].dim == dim {
                let r = rates[i];
                let p_fire = -(-r.score * dt).exp_m1();
                if p_fire > 0.0 && rng.random::<f64>() < p_fire {
                    fired.push(r.token);
                }
                i += 1;
            }
            if !fired.is_empty() {
                let token = fired[rng.random_range(0..fired.len())];
                x = spec.replace_token(x, dim, token);
            }
        }
        debug_assert!(spec.mask_count_at(x) <= spec.mask_count_at(start));
    }
    spec.decode(x)
}

/// Landing probabilities in one dimension for one τ-leaping step.
///
/// `fire[b]` is the probability that target `b` fires (0 for the mask). The
/// result gives, for every token, the chance the dimension ends there; the
/// mask entry is the chance nothing fires. Enumerates the fired subsets.
pub fn tau_dim_outcome(fire: &[f64], mask: usize) -> Vec<f64> {
    let targets: Vec<usize> = (0..fire.len()).filter(|&b| b != mask && fire[b] > 0.0).collect();
    let mut out = vec![0.0; fire.len()];
    let n = targets.len();
    assert!(n < 32, "too many targets to enumerate");
    for subset in 0u32..(1u32 << n) {
        let mut p = 1.0;
        for (bit, &b) in targets.iter().enumerate() {
            p *= if subset >> bit & 1 == 1 { fire[b] } else { 1.0 - fire[b] };
        }
        if p == 0.0 {
            continue;
        }
        let size = subset.count_ones();
        if size == 0 {
            out[mask] += p;
            continue;
        }
        let share = p / size as f64;
        for (bit, &b) in targets.iter().enumerate() {
            if subset >> bit & 1 == 1 {
                out[b] += share;
            }
        }
    }
    out
}

/// Push `mass` through one exact τ-leaping step using `table` and step
/// length `dt`.
pub(crate) fn tau_step_exact(spec: &ModelSpec, table: &ScoreTable, dt: f64, mass: &[f64]) -> Vec<f64> {
    let vocab = spec.vocab();
    let mask = spec.mask().index();
    let mut next = vec![0.0; mass.len()];
    let mut fire = vec![0.0; vocab];
    for (x, &px) in mass.iter().enumerate() {
        if px == 0.0 {
            continue;
        }
        let targets = unmask_targets(spec, x);
        if targets.is_empty() || targets.iter().any(|&(j, b, _)| table.get(x, j, b).is_nan()) {
            next[x] += px;
            continue;
        }
        let dims: Vec<(usize, Vec<f64>)> = (0..spec.dims())
            .filter(|&j| spec.token_at(x, j) == mask)
            .map(|j| {
                for (b, f) in fire.iter_mut().enumerate() {
                    *f = if b == mask {
                        0.0
                    } else {
                        -(-table.get(x, j, b) * dt).exp_m1()
                    };
                }
                (j, tau_dim_outcome(&fire, mask))
            })
            .collect();
        spread(spec, &dims, 0, x, px, &mut next);
    }
    next
}

fn spread(spec: &ModelSpec, dims: &[(usize, Vec<f64>)], pos: usize, x: usize, p: f64, out: &mut [f64]) {
    if pos == dims.len() {
        out[x] += p;
        return;
    }
    let (j, probs) = &dims[pos];
    for (a, &pa) in probs.iter().enumerate() {
        if pa > 0.0 {
            spread(spec, dims, pos + 1, spec.replace_token(x, *j, a), p * pa, out);
        }
    }
}
