//! Reverse-time samplers for the absorbing chain.
//!
//! Reverse time `τ` runs over `[0, T - δ]` and corresponds to forward time
//! `T - τ`. The reverse chain only unmasks: out of `x` its rate to
//! `y = x` with `x^j` replaced by `b` is `ŝ_{T-τ}(y, x)`.

mod exact_law;
mod init;
mod schedule;
mod tau;
mod uniformization;

pub use exact_law::{exact_law, SamplerKind, MASS_DRIFT_TOL, MAX_RK_STEP};
pub use init::InitDist;
pub use schedule::{constant_with_steps, geometric_with_steps, make_schedule, Schedule, StepRule};
pub use tau::{tau_dim_outcome, tau_leaping_run, TabulatedScore};
pub use uniformization::{
    lambda_for_interval, uniformization_run, LambdaMode, UniformizationConfig, UniformizationPlan,
};
