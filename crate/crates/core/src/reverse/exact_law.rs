use super::init::InitDist;
use super::schedule::Schedule;
use super::tau::tau_step_exact;
use crate::error::{Error, Result};
use crate::score::{ScoreFn, ScoreTable};
use crate::state_space::{DenseDist, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    TauLeaping,
    Uniformization,
}

/// Largest integration step in reverse time.
pub const MAX_RK_STEP: f64 = 1e-3;
/// Tolerance on negative mass and on total-mass drift per step.
pub const MASS_DRIFT_TOL: f64 = 1e-9;

/// Exact law of the sampler output at reverse time `T - δ`.
///
/// For uniformization this is the law of the reverse chain with rates
/// `ŝ_{T - τ}`, obtained by integrating its forward equation with classical
/// RK4. For τ-leaping it composes the exact one-step kernels.
pub fn exact_law(score: &dyn ScoreFn, schedule: &Schedule, init: &InitDist, kind: SamplerKind) -> Result<DenseDist> {
    let spec = score.spec();
    let mut p = init.dense(spec).into_vec();
    match kind {
        SamplerKind::TauLeaping => {
            for k in 0..schedule.steps() {
                let (a, b) = schedule.interval(k);
                let table = score.table(schedule.forward_time(a), k)?;
                p = tau_step_exact(spec, &table, b - a, &p);
                renormalize(&mut p)?;
            }
        }
        SamplerKind::Uniformization => {
            for k in 0..schedule.steps() {
                let (a, b) = schedule.interval(k);
                let width = b - a;
                let remaining = schedule.forward_time(b);
                let mut h_max = MAX_RK_STEP;
                if remaining > 0.0 {
                    h_max = h_max.min(0.05 * remaining);
                }
                let n = (width / h_max).ceil().max(1.0) as usize;
                let h = width / n as f64;
                let mut start_table = score.table(schedule.forward_time(a), k)?;
                for i in 0..n {
                    let tau = a + i as f64 * h;
                    let end_tau = if i + 1 == n { b } else { tau + h };
                    let mid_table = score.table(schedule.forward_time(tau + 0.5 * h), k)?;
                    let end_table = score.table(schedule.forward_time(end_tau), k)?;
                    p = rk4_step(spec, &p, h, &start_table, &mid_table, &end_table);
                    renormalize(&mut p)?;
                    start_table = end_table;
                }
            }
        }
    }
    DenseDist::new(p)
}

/// `dp/dτ` for the reverse chain with rates read from `table`.
fn generator_apply(spec: &ModelSpec, table: &ScoreTable, p: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (x, &px) in p.iter().enumerate() {
        if px == 0.0 {
            continue;
        }
        let Some(rates) = table.unmask_scores(spec, x) else {
            continue;
        };
        for r in rates {
            let flow = px * r.score;
            out[x] -= flow;
            out[r.target] += flow;
        }
    }
}

fn rk4_step(spec: &ModelSpec, p: &[f64], h: f64, t0: &ScoreTable, tm: &ScoreTable, t1: &ScoreTable) -> Vec<f64> {
    let n = p.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    generator_apply(spec, t0, p, &mut k1);
    for i in 0..n {
        tmp[i] = p[i] + 0.5 * h * k1[i];
    }
    generator_apply(spec, tm, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = p[i] + 0.5 * h * k2[i];
    }
    generator_apply(spec, tm, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = p[i] + h * k3[i];
    }
    generator_apply(spec, t1, &tmp, &mut k4);
    (0..n)
        .map(|i| p[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

fn renormalize(p: &mut [f64]) -> Result<()> {
    let mut total = 0.0;
    for v in p.iter_mut() {
        if *v < 0.0 {
            if *v < -MASS_DRIFT_TOL {
                return Err(Error::IntegratorUnstable(format!("negative mass {v}")));
            }
            *v = 0.0;
        }
        total += *v;
    }
    if (total - 1.0).abs() > MASS_DRIFT_TOL {
        return Err(Error::IntegratorUnstable(format!("total mass drifted to {total}")));
    }
    p.iter_mut().for_each(|v| *v /= total);
    Ok(())
}
