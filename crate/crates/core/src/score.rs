//! Exact and emulated scores `s_t(y, x) = q_t(y) / q_t(x)` on unmasking
//! transitions.
//!
//! Under the absorbing rate, `Q(y, x) > 0` exactly when `x` and `y` differ in
//! one dimension `j` with `x^j = mask` and `y^j != mask`. Those are the only
//! pairs the reverse samplers query, so every [`ScoreFn`] is defined on them
//! alone.
//!
//! Two exact routes are provided and cross-checked in the tests:
//!
//! * [`score_ratio`] divides entries of the dense marginal `q_t`.
//! * [`score_analytic`] sums over the data points compatible with `x`
//!   (only the masked coordinates are free) and evaluates the closed form
//!   `e^{-t} W_j(y^j) / (Σ_{a≠mask} W_j(a)(1 - e^{-t}) + W_j(mask))`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forward::{self, check_time};
use crate::state_space::{ModelSpec, StateVec, TokenId};

/// Floor on the forward time used by clipped estimators in `1/t`.
pub const T_FLOOR: f64 = 1e-12;

/// An unmasking transition `x -> y` in dimension `dim`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionPair {
    x: StateVec,
    y: StateVec,
    dim: usize,
}

impl TransitionPair {
    pub fn new(spec: &ModelSpec, x: StateVec, y: StateVec) -> Result<Self> {
        spec.validate_state(&x)?;
        spec.validate_state(&y)?;
        let differing: Vec<usize> = (0..spec.dims()).filter(|&i| x.get(i) != y.get(i)).collect();
        let [dim] = differing[..] else {
            return Err(Error::InvalidPair(format!(
                "states differ in {} dimensions, expected exactly one",
                differing.len()
            )));
        };
        if x.get(dim) != spec.mask() {
            return Err(Error::InvalidPair(format!("x is not masked at dimension {dim}")));
        }
        if y.get(dim) == spec.mask() {
            return Err(Error::InvalidPair(format!("y is masked at dimension {dim}")));
        }
        Ok(TransitionPair { x, y, dim })
    }

    /// The pair obtained by unmasking dimension `dim` of `x` to `token`.
    pub fn unmask(spec: &ModelSpec, x: &StateVec, dim: usize, token: TokenId) -> Result<Self> {
        if dim >= spec.dims() {
            return Err(Error::InvalidPair(format!("dimension {dim} out of range")));
        }
        Self::new(spec, x.clone(), x.with(dim, token))
    }

    pub fn x(&self) -> &StateVec {
        &self.x
    }

    pub fn y(&self) -> &StateVec {
        &self.y
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `y^j`, the revealed token.
    pub fn token(&self) -> TokenId {
        self.y.get(self.dim)
    }
}

/// Every unmasking pair out of state index `x`, as `(dim, token, y_index)`.
pub fn unmask_targets(spec: &ModelSpec, x: usize) -> Vec<(usize, usize, usize)> {
    let mask = spec.mask().index();
    let mut out = Vec::new();
    for j in 0..spec.dims() {
        if spec.token_at(x, j) != mask {
            continue;
        }
        for b in spec.unmasked_tokens() {
            out.push((j, b, spec.replace_token(x, j, b)));
        }
    }
    out
}

/// Bayes weights `W_j(a)` for every masked dimension `j` of `x`.
///
/// `W_j(a) = Σ q0(x0) Π_{i≠j} P_t(x0^i -> x^i)` over data points `x0` that
/// agree with `x` on its unmasked coordinates and have `x0^j = a`. Then
/// `q_t(x) = Σ_a W_j(a) P_t(a -> mask)` for any masked `j`, and
/// `q_t(x with x^j = b) = W_j(b) e^{-t}`.
#[derive(Debug, Clone)]
struct BayesWeights {
    /// `(dim, W_dim(·))` for each masked dimension.
    per_dim: Vec<(usize, Vec<f64>)>,
    keep: f64,
    masked: f64,
    mask: usize,
}

impl BayesWeights {
    fn compute(spec: &ModelSpec, x: usize, t: f64) -> Result<Self> {
        let kernel = forward::token_kernel(spec, t)?;
        let (keep, masked) = (kernel.keep(), kernel.masked());
        let mask = spec.mask().index();
        let vocab = spec.vocab();
        let masked_dims: Vec<usize> = (0..spec.dims()).filter(|&i| spec.token_at(x, i) == mask).collect();
        let m = masked_dims.len();
        let unmasked_factor = keep.powi((spec.dims() - m) as i32);
        let mut per_dim: Vec<(usize, Vec<f64>)> = masked_dims.iter().map(|&j| (j, vec![0.0; vocab])).collect();

        // Odometer over the free (masked) coordinates of x0.
        let mut digits = vec![0usize; m];
        let mut x0 = x - masked_dims.iter().map(|&j| mask * spec.stride(j)).sum::<usize>();
        let factor = |a: usize| if a == mask { 1.0 } else { masked };
        loop {
            let w = spec.q0().get(x0) * unmasked_factor;
            if w != 0.0 {
                for (k, (_, weights)) in per_dim.iter_mut().enumerate() {
                    let others: f64 = digits
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| i != k)
                        .map(|(_, &a)| factor(a))
                        .product();
                    weights[digits[k]] += w * others;
                }
            }
            // advance
            let mut pos = 0;
            loop {
                if pos == m {
                    return Ok(BayesWeights {
                        per_dim,
                        keep,
                        masked,
                        mask,
                    });
                }
                let dim = masked_dims[pos];
                let stride = spec.stride(dim);
                x0 -= digits[pos] * stride;
                digits[pos] += 1;
                if digits[pos] < vocab {
                    x0 += digits[pos] * stride;
                    break;
                }
                digits[pos] = 0;
                pos += 1;
            }
        }
    }

    fn weights(&self, dim: usize) -> Option<&[f64]> {
        self.per_dim.iter().find(|(j, _)| *j == dim).map(|(_, w)| w.as_slice())
    }

    /// `q_t(x)` evaluated through dimension `dim`'s weights.
    fn denominator(&self, w: &[f64]) -> f64 {
        w.iter()
            .enumerate()
            .map(|(a, &wa)| if a == self.mask { wa } else { wa * self.masked })
            .sum()
    }

    fn score(&self, w: &[f64], token: usize, denom: f64) -> f64 {
        self.keep * w[token] / denom
    }
}

/// Posterior `q_{0|t}(x0^j = · | x_t = x)` over `[S]` for a masked dimension.
pub fn posterior_token(spec: &ModelSpec, dim: usize, x: &StateVec, t: f64) -> Result<Vec<f64>> {
    let xi = spec.encode(x)?;
    if dim >= spec.dims() || x.get(dim) != spec.mask() {
        return Err(Error::InvalidPair(format!("x is not masked at dimension {dim}")));
    }
    let bw = BayesWeights::compute(spec, xi, t)?;
    let w = bw.weights(dim).expect("masked dimension has weights");
    let denom = bw.denominator(w);
    if denom <= 0.0 {
        return Err(Error::ZeroMass { state: xi, t });
    }
    Ok(w.iter()
        .enumerate()
        .map(|(a, &wa)| {
            let lik = if a == bw.mask { 1.0 } else { bw.masked };
            wa * lik / denom
        })
        .collect())
}

/// Exact score as a ratio of two entries of the dense marginal `q_t`.
pub fn score_ratio(spec: &ModelSpec, t: f64, pair: &TransitionPair) -> Result<f64> {
    check_time(t)?;
    let q = forward::marginal(spec, t)?;
    let x = spec.encode(pair.x())?;
    let y = spec.encode(pair.y())?;
    let qx = q.get(x);
    if qx <= 0.0 {
        return Err(Error::ZeroMass { state: x, t });
    }
    Ok(q.get(y) / qx)
}

/// Exact score from the closed form in terms of the data posterior.
pub fn score_analytic(spec: &ModelSpec, t: f64, pair: &TransitionPair) -> Result<f64> {
    check_time(t)?;
    let x = spec.encode(pair.x())?;
    let bw = BayesWeights::compute(spec, x, t)?;
    let w = bw.weights(pair.dim()).expect("pair dimension is masked");
    let denom = bw.denominator(w);
    if denom <= 0.0 {
        return Err(Error::ZeroMass { state: x, t });
    }
    Ok(bw.score(w, pair.token().index(), denom))
}

/// A single unmasking rate out of a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnmaskScore {
    pub dim: usize,
    pub token: usize,
    /// Index of the target state `y`.
    pub target: usize,
    pub score: f64,
}

/// Scores for every state at one time. Entries for pairs that are not
/// unmasking transitions are 0; entries out of zero-mass states are NaN.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    dims: usize,
    vocab: usize,
    data: Vec<f64>,
}

impl ScoreTable {
    pub fn zeros(spec: &ModelSpec) -> Self {
        ScoreTable {
            dims: spec.dims(),
            vocab: spec.vocab(),
            data: vec![0.0; spec.num_states() * spec.dims() * spec.vocab()],
        }
    }

    #[inline]
    fn offset(&self, x: usize, dim: usize, token: usize) -> usize {
        (x * self.dims + dim) * self.vocab + token
    }

    #[inline]
    pub fn get(&self, x: usize, dim: usize, token: usize) -> f64 {
        self.data[self.offset(x, dim, token)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, dim: usize, token: usize, value: f64) {
        let o = self.offset(x, dim, token);
        self.data[o] = value;
    }

    pub fn map_in_place(&mut self, spec: &ModelSpec, mut f: impl FnMut(usize, usize, usize, f64) -> f64) {
        for x in 0..spec.num_states() {
            for (dim, token, _) in unmask_targets(spec, x) {
                let o = self.offset(x, dim, token);
                self.data[o] = f(x, dim, token, self.data[o]);
            }
        }
    }

    /// Rates out of `x`; `None` when `x` has zero mass.
    pub fn unmask_scores(&self, spec: &ModelSpec, x: usize) -> Option<Vec<UnmaskScore>> {
        let mut out = Vec::new();
        for (dim, token, target) in unmask_targets(spec, x) {
            let score = self.get(x, dim, token);
            if score.is_nan() {
                return None;
            }
            out.push(UnmaskScore {
                dim,
                token,
                target,
                score,
            });
        }
        Some(out)
    }
}

/// A (possibly estimated) score on unmasking transitions.
///
/// `t` is forward time. `step` is the index of the discretization interval
/// the query belongs to; estimators that emulate a fixed trained network use
/// it to keep their error fixed per (pair, step).
pub trait ScoreFn: Send + Sync {
    fn spec(&self) -> &ModelSpec;

    fn describe(&self) -> String;

    fn score(&self, t: f64, step: usize, pair: &TransitionPair) -> Result<f64>;

    /// All unmasking scores out of the state with index `x`.
    fn unmask_scores(&self, t: f64, step: usize, x: usize) -> Result<Vec<UnmaskScore>> {
        let spec = self.spec();
        let xs = spec.decode(x)?;
        unmask_targets(spec, x)
            .into_iter()
            .map(|(dim, token, target)| {
                let pair = TransitionPair::unmask(spec, &xs, dim, TokenId(token as u32))?;
                Ok(UnmaskScore {
                    dim,
                    token,
                    target,
                    score: self.score(t, step, &pair)?,
                })
            })
            .collect()
    }

    /// Scores for every state at time `t`.
    fn table(&self, t: f64, step: usize) -> Result<ScoreTable> {
        let spec = self.spec();
        let mut table = ScoreTable::zeros(spec);
        for x in 0..spec.num_states() {
            if spec.mask_count_at(x) == 0 {
                continue;
            }
            match self.unmask_scores(t, step, x) {
                Ok(scores) => {
                    for s in scores {
                        table.set(x, s.dim, s.token, s.score);
                    }
                }
                Err(Error::ZeroMass { .. }) => {
                    for (dim, token, _) in unmask_targets(spec, x) {
                        table.set(x, dim, token, f64::NAN);
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Ok(table)
    }
}

/// Which exact route an [`ExactScore`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExactRoute {
    Ratio,
    Analytic,
}

/// The true score of the spec's data distribution.
#[derive(Debug, Clone)]
pub struct ExactScore {
    spec: Arc<ModelSpec>,
    route: ExactRoute,
}

impl ExactScore {
    pub fn new(spec: Arc<ModelSpec>, route: ExactRoute) -> Self {
        ExactScore { spec, route }
    }

    pub fn ratio(spec: Arc<ModelSpec>) -> Self {
        Self::new(spec, ExactRoute::Ratio)
    }

    pub fn analytic(spec: Arc<ModelSpec>) -> Self {
        Self::new(spec, ExactRoute::Analytic)
    }

    pub fn route(&self) -> ExactRoute {
        self.route
    }
}

impl ScoreFn for ExactScore {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn describe(&self) -> String {
        match self.route {
            ExactRoute::Ratio => "exact-ratio".into(),
            ExactRoute::Analytic => "exact-analytic".into(),
        }
    }

    fn score(&self, t: f64, _step: usize, pair: &TransitionPair) -> Result<f64> {
        match self.route {
            ExactRoute::Ratio => score_ratio(&self.spec, t, pair),
            ExactRoute::Analytic => score_analytic(&self.spec, t, pair),
        }
    }

    fn unmask_scores(&self, t: f64, _step: usize, x: usize) -> Result<Vec<UnmaskScore>> {
        let spec = &*self.spec;
        if x >= spec.num_states() {
            return Err(Error::IndexOutOfRange {
                index: x,
                len: spec.num_states(),
            });
        }
        match self.route {
            ExactRoute::Ratio => {
                let q = forward::marginal(spec, t)?;
                let qx = q.get(x);
                let targets = unmask_targets(spec, x);
                if qx <= 0.0 && !targets.is_empty() {
                    return Err(Error::ZeroMass { state: x, t });
                }
                Ok(targets
                    .into_iter()
                    .map(|(dim, token, target)| UnmaskScore {
                        dim,
                        token,
                        target,
                        score: q.get(target) / qx,
                    })
                    .collect())
            }
            ExactRoute::Analytic => {
                let bw = BayesWeights::compute(spec, x, t)?;
                let mut out = Vec::new();
                for (dim, w) in &bw.per_dim {
                    let denom = bw.denominator(w);
                    if denom <= 0.0 {
                        return Err(Error::ZeroMass { state: x, t });
                    }
                    for b in spec.unmasked_tokens() {
                        out.push(UnmaskScore {
                            dim: *dim,
                            token: b,
                            target: spec.replace_token(x, *dim, b),
                            score: bw.score(w, b, denom),
                        });
                    }
                }
                Ok(out)
            }
        }
    }

    fn table(&self, t: f64, step: usize) -> Result<ScoreTable> {
        let spec = &*self.spec;
        if self.route == ExactRoute::Analytic {
            let mut table = ScoreTable::zeros(spec);
            for x in 0..spec.num_states() {
                if spec.mask_count_at(x) == 0 {
                    continue;
                }
                match self.unmask_scores(t, step, x) {
                    Ok(scores) => scores.iter().for_each(|s| table.set(x, s.dim, s.token, s.score)),
                    Err(Error::ZeroMass { .. }) => {
                        for (dim, token, _) in unmask_targets(spec, x) {
                            table.set(x, dim, token, f64::NAN);
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
            return Ok(table);
        }
        let q = forward::marginal(spec, t)?;
        let mut table = ScoreTable::zeros(spec);
        for x in 0..spec.num_states() {
            let qx = q.get(x);
            for (dim, token, target) in unmask_targets(spec, x) {
                let v = if qx > 0.0 { q.get(target) / qx } else { f64::NAN };
                table.set(x, dim, token, v);
            }
        }
        Ok(table)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Multiplicative log-error `exp(u)` with `u ~ U[-eta, eta]` drawn once per
/// (transition, step) from a seeded hash, so `|log(ŝ / s)| <= eta`.
#[derive(Clone)]
pub struct PerturbedScore {
    base: Arc<dyn ScoreFn>,
    eta: f64,
    seed: u64,
}

impl PerturbedScore {
    pub fn new(base: Arc<dyn ScoreFn>, eta: f64, seed: u64) -> Result<Self> {
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(Error::InvalidArgument(format!("eta must be >= 0, got {eta}")));
        }
        Ok(PerturbedScore { base, eta, seed })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// The log-error applied to transition `(x, dim, token)` during `step`.
    pub fn log_error(&self, x: usize, dim: usize, token: usize, step: usize) -> f64 {
        if self.eta == 0.0 {
            return 0.0;
        }
        let mut h = splitmix64(self.seed);
        for v in [x as u64, dim as u64, token as u64, step as u64] {
            h = splitmix64(h ^ v);
        }
        let unit = (h >> 11) as f64 / (1u64 << 53) as f64;
        self.eta * (2.0 * unit - 1.0)
    }
}

impl ScoreFn for PerturbedScore {
    fn spec(&self) -> &ModelSpec {
        self.base.spec()
    }

    fn describe(&self) -> String {
        format!("perturbed({}, eta={})", self.base.describe(), self.eta)
    }

    fn score(&self, t: f64, step: usize, pair: &TransitionPair) -> Result<f64> {
        let spec = self.spec();
        let x = spec.encode(pair.x())?;
        let s = self.base.score(t, step, pair)?;
        Ok(s * self.log_error(x, pair.dim(), pair.token().index(), step).exp())
    }

    fn unmask_scores(&self, t: f64, step: usize, x: usize) -> Result<Vec<UnmaskScore>> {
        let mut out = self.base.unmask_scores(t, step, x)?;
        for s in &mut out {
            s.score *= self.log_error(x, s.dim, s.token, step).exp();
        }
        Ok(out)
    }

    fn table(&self, t: f64, step: usize) -> Result<ScoreTable> {
        let mut table = self.base.table(t, step)?;
        table.map_in_place(self.spec(), |x, dim, token, v| {
            v * self.log_error(x, dim, token, step).exp()
        });
        Ok(table)
    }
}

/// Cap applied by [`ClippedScore`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClipMode {
    /// `ŝ_t <= κ / t`.
    EarlyStop,
    /// `ŝ_t <= κ max(1/γ, 1/t)`.
    NoEarlyStop { gamma: f64 },
}

/// Caps a base estimator at `κ/t` (or `κ max(1/γ, 1/t)`).
#[derive(Clone)]
pub struct ClippedScore {
    base: Arc<dyn ScoreFn>,
    kappa: f64,
    mode: ClipMode,
}

impl ClippedScore {
    pub fn new(base: Arc<dyn ScoreFn>, kappa: f64, mode: ClipMode) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::InvalidArgument(format!("kappa must be > 0, got {kappa}")));
        }
        Ok(ClippedScore { base, kappa, mode })
    }

    pub fn cap(&self, t: f64) -> f64 {
        let inv_t = 1.0 / t.max(T_FLOOR);
        match self.mode {
            ClipMode::EarlyStop => self.kappa * inv_t,
            ClipMode::NoEarlyStop { gamma } => {
                let inv_gamma = if gamma > 0.0 { 1.0 / gamma } else { f64::INFINITY };
                self.kappa * inv_gamma.max(inv_t)
            }
        }
    }

    fn clip(&self, t: f64, v: f64) -> f64 {
        if v.is_nan() {
            v
        } else {
            v.min(self.cap(t))
        }
    }
}

impl ScoreFn for ClippedScore {
    fn spec(&self) -> &ModelSpec {
        self.base.spec()
    }

    fn describe(&self) -> String {
        format!("clipped({}, kappa={})", self.base.describe(), self.kappa)
    }

    fn score(&self, t: f64, step: usize, pair: &TransitionPair) -> Result<f64> {
        Ok(self.clip(t, self.base.score(t, step, pair)?))
    }

    fn unmask_scores(&self, t: f64, step: usize, x: usize) -> Result<Vec<UnmaskScore>> {
        let mut out = self.base.unmask_scores(t, step, x)?;
        for s in &mut out {
            s.score = self.clip(t, s.score);
        }
        Ok(out)
    }

    fn table(&self, t: f64, step: usize) -> Result<ScoreTable> {
        let mut table = self.base.table(t, step)?;
        table.map_in_place(self.spec(), |_, _, _, v| self.clip(t, v));
        Ok(table)
    }
}

/// Every unmasking pair of the spec, as `(x_index, pair)`.
pub fn all_pairs(spec: &ModelSpec) -> Vec<(usize, TransitionPair)> {
    let mut out = Vec::new();
    for x in 0..spec.num_states() {
        let xs = spec.decode(x).expect("index in range");
        for (dim, token, _) in unmask_targets(spec, x) {
            let pair = TransitionPair::unmask(spec, &xs, dim, TokenId(token as u32)).expect("valid pair");
            out.push((x, pair));
        }
    }
    out
}
