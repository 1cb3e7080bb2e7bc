//! States over `[S]^d`, dense distributions, and the model specification.
//!
//! States are indexed in mixed radix with dimension 0 least significant:
//! `index = Σ_i x^i · S^i`. Every dense object in the crate (marginals,
//! sampler laws, score tables) uses this layout.

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Default cap on `S^d`.
pub const DEFAULT_STATE_CAP: usize = 10_000_000;

/// Tolerance on the total mass of a [`DenseDist`].
pub const MASS_TOLERANCE: f64 = 1e-12;

/// A vocabulary token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A point of `[S]^d`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StateVec {
    tokens: Vec<TokenId>,
}

impl StateVec {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        StateVec { tokens }
    }

    pub fn from_indices(tokens: &[usize]) -> Self {
        StateVec {
            tokens: tokens.iter().map(|&t| TokenId(t as u32)).collect(),
        }
    }

    /// The all-`token` state of length `d`.
    pub fn filled(token: TokenId, d: usize) -> Self {
        StateVec { tokens: vec![token; d] }
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, dim: usize) -> TokenId {
        self.tokens[dim]
    }

    pub fn set(&mut self, dim: usize, token: TokenId) {
        self.tokens[dim] = token;
    }

    /// Copy of `self` with dimension `dim` replaced by `token`.
    pub fn with(&self, dim: usize, token: TokenId) -> Self {
        let mut out = self.clone();
        out.tokens[dim] = token;
        out
    }
}

/// A probability vector over all `S^d` states.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct DenseDist {
    mass: Vec<f64>,
}

impl DenseDist {
    /// Validates nonnegativity and unit total mass (within [`MASS_TOLERANCE`]).
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::InvalidDistribution("empty mass vector".into()));
        }
        if let Some((i, &m)) = mass.iter().enumerate().find(|(_, m)| !m.is_finite() || **m < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "entry {i} is {m}, expected a finite nonnegative value"
            )));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "total mass {total} differs from 1 by more than {MASS_TOLERANCE:e}"
            )));
        }
        Ok(DenseDist { mass })
    }

    /// Scales a nonnegative weight vector to unit mass.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidDistribution("weights sum to zero".into()));
        }
        Ok(DenseDist {
            mass: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    /// Wraps a vector produced by an exact computation. Mass conservation is
    /// the caller's invariant; it is only checked in debug builds.
    pub(crate) fn from_vec_unchecked(mass: Vec<f64>) -> Self {
        debug_assert!(
            (mass.iter().sum::<f64>() - 1.0).abs() < 1e-8,
            "mass drifted: {}",
            mass.iter().sum::<f64>()
        );
        DenseDist { mass }
    }

    pub fn point(len: usize, index: usize) -> Result<Self> {
        if index >= len {
            return Err(Error::IndexOutOfRange { index, len });
        }
        let mut mass = vec![0.0; len];
        mass[index] = 1.0;
        Ok(DenseDist { mass })
    }

    pub fn uniform(len: usize) -> Self {
        DenseDist {
            mass: vec![1.0 / len as f64; len],
        }
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.mass[index]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.mass
    }
}

/// Vocabulary, dimension, mask token and data distribution `q0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    vocab: usize,
    dims: usize,
    mask: TokenId,
    q0: DenseDist,
    strides: Vec<usize>,
    num_states: usize,
}

impl ModelSpec {
    pub fn new(vocab: usize, dims: usize, mask: TokenId, q0: DenseDist) -> Result<Self> {
        Self::with_cap(vocab, dims, mask, q0, DEFAULT_STATE_CAP)
    }

    pub fn with_cap(vocab: usize, dims: usize, mask: TokenId, q0: DenseDist, cap: usize) -> Result<Self> {
        let num_states = checked_num_states(vocab, dims, cap)?;
        if mask.index() >= vocab {
            return Err(Error::TokenOutOfRange {
                token: mask.index(),
                vocab,
            });
        }
        if q0.len() != num_states {
            return Err(Error::LengthMismatch(q0.len(), num_states));
        }
        let strides = (0..dims).map(|i| vocab.pow(i as u32)).collect();
        Ok(ModelSpec {
            vocab,
            dims,
            mask,
            q0,
            strides,
            num_states,
        })
    }

    /// Builds the spec from a `q0` source, with the mask defaulting to `S - 1`.
    pub fn from_source(vocab: usize, dims: usize, mask: Option<TokenId>, source: &Q0Source) -> Result<Self> {
        let mask = mask.unwrap_or(TokenId(vocab.saturating_sub(1) as u32));
        checked_num_states(vocab, dims, DEFAULT_STATE_CAP)?;
        let q0 = source.build(vocab, dims, mask)?;
        ModelSpec::new(vocab, dims, mask, q0)
    }

    pub fn from_config(cfg: &SpecConfig) -> Result<Self> {
        Self::from_source(cfg.vocab, cfg.dims, cfg.mask.map(TokenId), &cfg.q0)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: SpecConfig = serde_json::from_str(&text)?;
        Self::from_config(&cfg)
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn mask(&self) -> TokenId {
        self.mask
    }

    pub fn q0(&self) -> &DenseDist {
        &self.q0
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    /// `S^dim`, the index increment of dimension `dim`.
    #[inline]
    pub fn stride(&self, dim: usize) -> usize {
        self.strides[dim]
    }

    /// Token of dimension `dim` in the state with the given index.
    #[inline]
    pub fn token_at(&self, index: usize, dim: usize) -> usize {
        (index / self.strides[dim]) % self.vocab
    }

    /// Index of the state obtained by setting dimension `dim` to `token`.
    #[inline]
    pub fn replace_token(&self, index: usize, dim: usize, token: usize) -> usize {
        let current = self.token_at(index, dim);
        index - current * self.strides[dim] + token * self.strides[dim]
    }

    pub fn encode(&self, state: &StateVec) -> Result<usize> {
        self.validate_state(state)?;
        Ok(state
            .tokens()
            .iter()
            .zip(&self.strides)
            .map(|(t, s)| t.index() * s)
            .sum())
    }

    pub fn decode(&self, index: usize) -> Result<StateVec> {
        if index >= self.num_states {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.num_states,
            });
        }
        Ok(StateVec::from_indices(
            &(0..self.dims).map(|i| self.token_at(index, i)).collect::<Vec<_>>(),
        ))
    }

    pub fn validate_state(&self, state: &StateVec) -> Result<()> {
        if state.len() != self.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims,
                got: state.len(),
            });
        }
        if let Some(t) = state.tokens().iter().find(|t| t.index() >= self.vocab) {
            return Err(Error::TokenOutOfRange {
                token: t.index(),
                vocab: self.vocab,
            });
        }
        Ok(())
    }

    /// Number of masked dimensions `m(x)`.
    pub fn mask_count(&self, state: &StateVec) -> usize {
        state.tokens().iter().filter(|&&t| t == self.mask).count()
    }

    /// `m(x)` for a state given by index.
    pub fn mask_count_at(&self, index: usize) -> usize {
        (0..self.dims)
            .filter(|&i| self.token_at(index, i) == self.mask.index())
            .count()
    }

    pub fn all_masked(&self) -> StateVec {
        StateVec::filled(self.mask, self.dims)
    }

    /// Index of the all-mask state.
    pub fn all_masked_index(&self) -> usize {
        self.strides.iter().map(|s| s * self.mask.index()).sum()
    }

    /// Non-mask tokens in increasing order.
    pub fn unmasked_tokens(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.vocab).filter(move |&a| a != self.mask.index())
    }

    /// Short stable fingerprint of `(S, d, mask, q0)`.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.vocab as u64).to_le_bytes());
        h.update((self.dims as u64).to_le_bytes());
        h.update(u64::from(self.mask.0).to_le_bytes());
        for m in self.q0.mass() {
            h.update(m.to_bits().to_le_bytes());
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn checked_num_states(vocab: usize, dims: usize, cap: usize) -> Result<usize> {
    if vocab < 2 {
        return Err(Error::VocabTooSmall(vocab));
    }
    if dims == 0 {
        return Err(Error::ZeroDimension);
    }
    let exceeded = Error::CapExceeded { vocab, dims, cap };
    let mut n: usize = 1;
    for _ in 0..dims {
        n = n.checked_mul(vocab).ok_or(exceeded.clone())?;
        if n > cap {
            return Err(exceeded);
        }
    }
    Ok(n)
}

/// How `q0` is generated from a config entry.
///
/// String forms: `uniform`, `uniform-nonmask`, `point:<index>`,
/// `dirichlet:<seed>,<alpha>`, `product:<p_0>,...,<p_{S-1}>` (same
/// per-dimension marginal in every dimension) and `gamma:<g>` (product
/// distribution whose mask weight is `g` times that of every other token).
/// A JSON array is taken as the explicit mass vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Q0Source {
    Uniform,
    UniformNonMask,
    Point(usize),
    Dirichlet { seed: u64, alpha: f64 },
    Product(Vec<f64>),
    Gamma(f64),
    Explicit(Vec<f64>),
}

impl Q0Source {
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let bad = || Error::Config(format!("unrecognised q0 source `{text}`"));
        let floats = |s: &str| -> Result<Vec<f64>> {
            s.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
                .collect()
        };
        match text.split_once(':') {
            None => match text {
                "uniform" => Ok(Q0Source::Uniform),
                "uniform-nonmask" => Ok(Q0Source::UniformNonMask),
                _ => Err(bad()),
            },
            Some(("point", rest)) => Ok(Q0Source::Point(rest.trim().parse().map_err(|_| bad())?)),
            Some(("dirichlet", rest)) => {
                let (seed, alpha) = rest.split_once(',').ok_or_else(bad)?;
                Ok(Q0Source::Dirichlet {
                    seed: seed.trim().parse().map_err(|_| bad())?,
                    alpha: alpha.trim().parse().map_err(|_| bad())?,
                })
            }
            Some(("product", rest)) => Ok(Q0Source::Product(floats(rest)?)),
            Some(("gamma", rest)) => Ok(Q0Source::Gamma(rest.trim().parse().map_err(|_| bad())?)),
            Some(_) => Err(bad()),
        }
    }

    pub fn build(&self, vocab: usize, dims: usize, mask: TokenId) -> Result<DenseDist> {
        let n = checked_num_states(vocab, dims, DEFAULT_STATE_CAP)?;
        match self {
            Q0Source::Uniform => Ok(DenseDist::uniform(n)),
            Q0Source::UniformNonMask => {
                let w = (0..n)
                    .map(|i| {
                        let masked = (0..dims).any(|k| (i / vocab.pow(k as u32)) % vocab == mask.index());
                        if masked {
                            0.0
                        } else {
                            1.0
                        }
                    })
                    .collect();
                DenseDist::normalized(w)
            }
            Q0Source::Point(i) => DenseDist::point(n, *i),
            Q0Source::Dirichlet { seed, alpha } => {
                let gamma =
                    Gamma::new(*alpha, 1.0).map_err(|e| Error::Config(format!("dirichlet alpha {alpha}: {e}")))?;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let w: Vec<f64> = (0..n).map(|_| gamma.sample(&mut rng)).collect();
                DenseDist::normalized(w)
            }
            Q0Source::Product(marginal) => {
                if marginal.len() != vocab {
                    return Err(Error::Config(format!(
                        "product marginal has {} entries, expected {vocab}",
                        marginal.len()
                    )));
                }
                let marginal = DenseDist::normalized(marginal.clone())?;
                Ok(product_dist(marginal.mass(), vocab, dims))
            }
            Q0Source::Gamma(g) => {
                if !(g.is_finite() && *g >= 0.0) {
                    return Err(Error::Config(format!("gamma preset {g} must be >= 0")));
                }
                let mut w = vec![1.0; vocab];
                w[mask.index()] = *g;
                let marginal = DenseDist::normalized(w)?;
                Ok(product_dist(marginal.mass(), vocab, dims))
            }
            Q0Source::Explicit(mass) => DenseDist::new(mass.clone()),
        }
    }
}

/// Product of `dims` copies of a per-token marginal.
pub fn product_dist(marginal: &[f64], vocab: usize, dims: usize) -> DenseDist {
    let n = vocab.pow(dims as u32);
    let mass = (0..n)
        .map(|i| {
            let mut rest = i;
            let mut p = 1.0;
            for _ in 0..dims {
                p *= marginal[rest % vocab];
                rest /= vocab;
            }
            p
        })
        .collect();
    DenseDist::from_vec_unchecked(mass)
}

impl Serialize for Q0Source {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        match self {
            Q0Source::Uniform => ser.serialize_str("uniform"),
            Q0Source::UniformNonMask => ser.serialize_str("uniform-nonmask"),
            Q0Source::Point(i) => ser.serialize_str(&format!("point:{i}")),
            Q0Source::Dirichlet { seed, alpha } => ser.serialize_str(&format!("dirichlet:{seed},{alpha}")),
            Q0Source::Product(m) => ser.serialize_str(&format!("product:{}", join(m))),
            Q0Source::Gamma(g) => ser.serialize_str(&format!("gamma:{g}")),
            Q0Source::Explicit(m) => m.serialize(ser),
        }
    }
}

impl<'de> Deserialize<'de> for Q0Source {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Mass(Vec<f64>),
        }
        match Raw::deserialize(de)? {
            Raw::Text(s) => Q0Source::parse(&s).map_err(serde::de::Error::custom),
            Raw::Mass(m) => Ok(Q0Source::Explicit(m)),
        }
    }
}

/// On-disk form of a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecConfig {
    #[serde(rename = "S")]
    pub vocab: usize,
    #[serde(rename = "d")]
    pub dims: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<u32>,
    pub q0: Q0Source,
}

impl SpecConfig {
    pub fn new(vocab: usize, dims: usize, mask: Option<u32>, q0: Q0Source) -> Self {
        SpecConfig { vocab, dims, mask, q0 }
    }
}
