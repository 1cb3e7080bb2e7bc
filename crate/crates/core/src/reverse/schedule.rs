use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step rule for a reverse-time grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "c", rename_all = "lowercase")]
pub enum StepRule {
    /// `t_{k+1} - t_k = c min(1, T - t_k)`, final step clamped onto `T - δ`.
    Geometric(f64),
    /// `N = ceil((T - δ) / c)` equal steps.
    Constant(f64),
}

impl StepRule {
    pub fn name(&self) -> &'static str {
        match self {
            StepRule::Geometric(_) => "geometric",
            StepRule::Constant(_) => "constant",
        }
    }
}

/// Reverse-time grid `0 = t_0 < ... < t_N = T - δ`. Reverse time `τ`
/// corresponds to forward time `T - τ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedule {
    horizon: f64,
    delta: f64,
    rule: StepRule,
    grid: Vec<f64>,
}

/// Relative slack when deciding that a step has reached `T - δ`.
const LANDING_SLACK: f64 = 1e-12;

pub fn make_schedule(horizon: f64, delta: f64, rule: StepRule) -> Result<Schedule> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidSchedule(format!("horizon must be > 0, got {horizon}")));
    }
    if !(delta >= 0.0 && delta < horizon) {
        return Err(Error::InvalidSchedule(format!(
            "need 0 <= delta < T, got delta={delta}, T={horizon}"
        )));
    }
    let end = horizon - delta;
    let grid = match rule {
        StepRule::Constant(c) => {
            check_c(c)?;
            let n = ((end / c) * (1.0 - LANDING_SLACK)).ceil().max(1.0) as usize;
            let mut g: Vec<f64> = (0..n).map(|k| end * k as f64 / n as f64).collect();
            g.push(end);
            g
        }
        StepRule::Geometric(c) => {
            check_c(c)?;
            if delta == 0.0 {
                return Err(Error::InvalidSchedule(
                    "the geometric rule never reaches T when delta = 0".into(),
                ));
            }
            let mut g = vec![0.0];
            let mut t = 0.0f64;
            loop {
                let next = t + c * (horizon - t).min(1.0);
                if next >= end - LANDING_SLACK * horizon {
                    g.push(end);
                    break;
                }
                g.push(next);
                t = next;
            }
            g
        }
    };
    Ok(Schedule {
        horizon,
        delta,
        rule,
        grid,
    })
}

fn check_c(c: f64) -> Result<()> {
    if c.is_finite() && c > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidSchedule(format!("step constant must be > 0, got {c}")))
    }
}

/// Geometric schedule whose step count is the largest attainable value not
/// above `steps`, found by bisection on `c`.
pub fn geometric_with_steps(horizon: f64, delta: f64, steps: usize) -> Result<Schedule> {
    if steps == 0 {
        return Err(Error::InvalidSchedule("need at least one step".into()));
    }
    // c = 1 gives the fewest steps the rule allows.
    let coarsest = make_schedule(horizon, delta, StepRule::Geometric(1.0))?;
    if coarsest.steps() > steps {
        return Err(Error::InvalidSchedule(format!(
            "the geometric rule needs at least {} steps here, asked for {steps}",
            coarsest.steps()
        )));
    }
    if coarsest.steps() == steps {
        return Ok(coarsest);
    }
    let (mut lo, mut hi) = (1e-9f64, 1.0f64);
    let mut best = coarsest;
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        let s = make_schedule(horizon, delta, StepRule::Geometric(mid))?;
        if s.steps() > steps {
            lo = mid;
        } else {
            if s.steps() >= best.steps() {
                best = s.clone();
            }
            if s.steps() == steps {
                break;
            }
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-12 {
            break;
        }
    }
    Ok(best)
}

/// Constant-rule schedule with exactly `steps` equal steps.
pub fn constant_with_steps(horizon: f64, delta: f64, steps: usize) -> Result<Schedule> {
    if steps == 0 {
        return Err(Error::InvalidSchedule("need at least one step".into()));
    }
    make_schedule(horizon, delta, StepRule::Constant((horizon - delta) / steps as f64))
}

impl Schedule {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn rule(&self) -> StepRule {
        self.rule
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Number of intervals `N`.
    pub fn steps(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn interval(&self, k: usize) -> (f64, f64) {
        (self.grid[k], self.grid[k + 1])
    }

    /// Forward time at reverse time `tau`.
    pub fn forward_time(&self, tau: f64) -> f64 {
        (self.horizon - tau).max(0.0)
    }
}
