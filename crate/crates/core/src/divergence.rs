//! Divergences between dense laws, the score-entropy functional and the
//! fixed-schema metrics CSV.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward;
use crate::reverse::Schedule;
use crate::score::{unmask_targets, ScoreFn};
use crate::state_space::{DenseDist, ModelSpec, StateVec};

fn check_len(p: &DenseDist, q: &DenseDist) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    Ok(())
}

/// `KL(p ‖ q) = Σ p log(p/q)` with `0 log 0 = 0`.
pub fn kl(p: &DenseDist, q: &DenseDist) -> Result<f64> {
    check_len(p, q)?;
    let mut total = 0.0;
    for (x, (&a, &b)) in p.mass().iter().zip(q.mass()).enumerate() {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return Err(Error::SupportViolation { state: x });
        }
        let r = a / b;
        // ln_1p keeps precision when a ≈ b; far from 1 it would round to ln(0)
        let log_ratio = if (r - 1.0).abs() < 0.5 {
            ((a - b) / b).ln_1p()
        } else {
            r.ln()
        };
        total += a * log_ratio;
    }
    // rounding can leave a tiny negative when p ≈ q
    Ok(if total < 0.0 && total > -1e-15 { 0.0 } else { total })
}

pub fn tv(p: &DenseDist, q: &DenseDist) -> Result<f64> {
    check_len(p, q)?;
    let s: f64 = p.mass().iter().zip(q.mass()).map(|(a, b)| (a - b).abs()).sum();
    Ok((0.5 * s).min(1.0))
}

/// `G(x; y) = x log(x/y) - x`.
pub fn bregman_gap(x: f64, y: f64) -> Result<f64> {
    if !(x > 0.0 && y > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bregman_gap needs positive arguments, got ({x}, {y})"
        )));
    }
    Ok(x * (x / y).ln() - x)
}

/// Which forward rate weights the score-entropy sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// Weight `Q(y, x)`: sum over unmasking moves `x -> y`.
    #[default]
    IntoCurrent,
    /// Weight `Q(x, y)`: sum over masking moves `x -> y`, with
    /// `ŝ(y, x) = 1 / ŝ(x, y)`.
    OutOfCurrent,
}

/// `ŝ - s - s log(ŝ/s)` with the limits at `s = 0` and `ŝ = 0`.
fn entropy_term(s: f64, shat: f64) -> f64 {
    if s == 0.0 {
        shat
    } else if shat == 0.0 {
        f64::INFINITY
    } else {
        shat - s - s * (shat / s).ln()
    }
}

/// Score entropy `E_{x~q_t} Σ_y Q(·,·) [ŝ(y,x) - s(y,x) - s(y,x) log(ŝ/s)]`
/// by exact enumeration. `step` is passed through to the estimator.
pub fn score_entropy(shat: &dyn ScoreFn, t: f64, step: usize, orientation: Orientation) -> Result<f64> {
    if t.is_nan() || t <= 0.0 {
        return Err(Error::NegativeTime(t));
    }
    let spec = shat.spec();
    let q = forward::marginal(spec, t)?;
    let est = shat.table(t, step)?;
    let mut total = 0.0;
    match orientation {
        Orientation::IntoCurrent => {
            for x in 0..spec.num_states() {
                let qx = q.get(x);
                if qx == 0.0 {
                    continue;
                }
                let mut inner = 0.0;
                for (j, b, y) in unmask_targets(spec, x) {
                    inner += entropy_term(q.get(y) / qx, est.get(x, j, b));
                }
                total += qx * inner;
            }
        }
        Orientation::OutOfCurrent => {
            let mask = spec.mask().index();
            for x in 0..spec.num_states() {
                let qx = q.get(x);
                if qx == 0.0 {
                    continue;
                }
                let mut inner = 0.0;
                for j in 0..spec.dims() {
                    let b = spec.token_at(x, j);
                    if b == mask {
                        continue;
                    }
                    let y = spec.replace_token(x, j, mask);
                    // y -> x is an unmasking move, so ŝ(x, y) is tabulated at y
                    let forward_hat = est.get(y, j, b);
                    let shat_yx = 1.0 / forward_hat;
                    inner += entropy_term(q.get(y) / qx, shat_yx);
                }
                total += qx * inner;
            }
        }
    }
    Ok(total)
}

/// `Σ_k Δ_k L_SE(ŝ_{T - t_k})` over a schedule.
pub fn epsilon_score(shat: &dyn ScoreFn, schedule: &Schedule, orientation: Orientation) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..schedule.steps() {
        let (a, b) = schedule.interval(k);
        total += (b - a) * score_entropy(shat, schedule.forward_time(a), k, orientation)?;
    }
    Ok(total)
}

/// `(count(x) + α) / (M + α S^d)`.
pub fn empirical_dist(spec: &ModelSpec, samples: &[StateVec], alpha: f64) -> Result<DenseDist> {
    let indices = samples.iter().map(|s| spec.encode(s)).collect::<Result<Vec<_>>>()?;
    empirical_from_indices(spec.num_states(), &indices, alpha)
}

pub fn empirical_from_indices(num_states: usize, samples: &[usize], alpha: f64) -> Result<DenseDist> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument(
            "empirical_dist needs at least one sample".into(),
        ));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "smoothing must be finite and >= 0, got {alpha}"
        )));
    }
    let mut counts = vec![alpha; num_states];
    for &x in samples {
        if x >= num_states {
            return Err(Error::IndexOutOfRange {
                index: x,
                len: num_states,
            });
        }
        counts[x] += 1.0;
    }
    DenseDist::normalized(counts)
}

/// One row of a metrics CSV. Column order is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub spec_hash: String,
    pub sampler: String,
    #[serde(rename = "S")]
    pub vocab: usize,
    pub d: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub delta: f64,
    #[serde(rename = "N")]
    pub steps_n: usize,
    pub seed: u64,
    pub kl: f64,
    pub tv: f64,
    pub score_entropy_sum: f64,
    pub steps: f64,
    pub wallclock_s: f64,
}

pub const METRICS_COLUMNS: [&str; 13] = [
    "spec_hash",
    "sampler",
    "S",
    "d",
    "T",
    "delta",
    "N",
    "seed",
    "kl",
    "tv",
    "score_entropy_sum",
    "steps",
    "wallclock_s",
];

pub fn write_metrics(path: &Path, rows: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(METRICS_COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().ne(METRICS_COLUMNS) {
        return Err(Error::Config(format!("unexpected metrics header: {headers:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_examples() {
        let p = DenseDist::new(vec![1.0, 0.0]).unwrap();
        let q = DenseDist::uniform(2);
        assert!((kl(&p, &q).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(kl(&q, &q).unwrap(), 0.0);
        assert!(matches!(kl(&q, &p), Err(Error::SupportViolation { state: 1 })));
        assert!(kl(&p, &DenseDist::uniform(3)).is_err());
    }

    #[test]
    fn kl_keeps_negligible_entries_finite() {
        // an entry of p far below q must not turn the log ratio into -inf
        let p = DenseDist::new(vec![1e-34, 1.0 - 1e-34]).unwrap();
        let q = DenseDist::new(vec![0.5, 0.5]).unwrap();
        let expect = 2f64.ln();
        assert!((kl(&p, &q).unwrap() - expect).abs() < 1e-15);
        let p = DenseDist::new(vec![2e-34, 0.25, 0.75 - 2e-34]).unwrap();
        let q = DenseDist::new(vec![0.0045, 0.5, 0.4955]).unwrap();
        let direct: f64 = p.mass().iter().zip(q.mass()).map(|(a, b)| a * (a / b).ln()).sum();
        assert!((kl(&p, &q).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn tv_examples() {
        let a = DenseDist::point(3, 0).unwrap();
        let b = DenseDist::point(3, 2).unwrap();
        assert_eq!(tv(&a, &b).unwrap(), 1.0);
        assert_eq!(tv(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn bregman_examples() {
        assert_eq!(bregman_gap(3.0, 3.0).unwrap(), -3.0);
        assert!((bregman_gap(2.0, 1.0).unwrap() - (2.0 * 2f64.ln() - 2.0)).abs() < 1e-15);
        assert!(bregman_gap(0.0, 1.0).is_err());
        assert!(bregman_gap(1.0, -1.0).is_err());
    }

    #[test]
    fn empirical_examples() {
        let p = empirical_from_indices(4, &[2], 0.0).unwrap();
        assert_eq!(p.mass(), &[0.0, 0.0, 1.0, 0.0]);
        let p = empirical_from_indices(4, &[2, 2, 0], 1e12).unwrap();
        for &v in p.mass() {
            assert!((v - 0.25).abs() < 1e-9);
        }
        assert!(empirical_from_indices(4, &[], 0.0).is_err());
    }

    #[test]
    fn metrics_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let row = MetricsRecord {
            spec_hash: "abcd".into(),
            sampler: "tau:exact".into(),
            vocab: 3,
            d: 2,
            horizon: 10.0,
            delta: 1e-3,
            steps_n: 64,
            seed: 7,
            kl: 1e-4,
            tv: 1e-3,
            score_entropy_sum: 0.0,
            steps: 64.0,
            wallclock_s: 0.5,
        };
        write_metrics(&path, std::slice::from_ref(&row)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_COLUMNS.join(","));
        assert_eq!(read_metrics(&path).unwrap(), vec![row]);

        write_metrics(&path, &[]).unwrap();
        assert!(read_metrics(&path).unwrap().is_empty());
    }
}
