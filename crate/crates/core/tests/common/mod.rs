#![allow(dead_code)]

use std::sync::Arc;

use absorb_core::score::{ScoreFn, TransitionPair};
use absorb_core::state_space::{ModelSpec, Q0Source, TokenId};
use absorb_core::Result;

pub fn spec(src: &str, vocab: usize, dims: usize) -> Arc<ModelSpec> {
    Arc::new(ModelSpec::from_source(vocab, dims, None, &Q0Source::parse(src).unwrap()).unwrap())
}

pub fn spec_masked(src: &str, vocab: usize, dims: usize, mask: u32) -> Arc<ModelSpec> {
    Arc::new(ModelSpec::from_source(vocab, dims, Some(TokenId(mask)), &Q0Source::parse(src).unwrap()).unwrap())
}

/// Returns zero on every pair.
pub struct ZeroScore(pub Arc<ModelSpec>);

impl ScoreFn for ZeroScore {
    fn spec(&self) -> &ModelSpec {
        &self.0
    }
    fn describe(&self) -> String {
        "zero".into()
    }
    fn score(&self, _t: f64, _step: usize, _pair: &TransitionPair) -> Result<f64> {
        Ok(0.0)
    }
}

/// Multiplies a base score by a constant.
pub struct ScaledScore(pub Arc<dyn ScoreFn>, pub f64);

impl ScoreFn for ScaledScore {
    fn spec(&self) -> &ModelSpec {
        self.0.spec()
    }
    fn describe(&self) -> String {
        format!("scaled({})", self.1)
    }
    fn score(&self, t: f64, step: usize, pair: &TransitionPair) -> Result<f64> {
        Ok(self.1 * self.0.score(t, step, pair)?)
    }
}

/// Relative closeness with an absolute floor of 1.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
