//! Closed-form absorbing forward process.
//!
//! Every non-mask token jumps to the mask at unit rate and the mask is
//! absorbing, so the per-token kernel over `[0, t]` keeps a token with
//! probability `e^{-t}` and masks it otherwise. Dimensions evolve
//! independently; marginals are obtained by applying the token kernel along
//! one axis at a time, never by materializing the `S^d × S^d` kernel.

use rand::Rng;

use crate::error::{Error, Result};
use crate::state_space::{DenseDist, ModelSpec, StateVec, TokenId};

/// The per-token absorbing generator `1 e_mask^T - I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbsorbingRate {
    vocab: usize,
    mask: TokenId,
}

impl AbsorbingRate {
    pub fn new(spec: &ModelSpec) -> Self {
        AbsorbingRate {
            vocab: spec.vocab(),
            mask: spec.mask(),
        }
    }

    /// Token-level rate `Q^tok(a, b)`.
    pub fn token_rate(&self, a: usize, b: usize) -> f64 {
        let m = self.mask.index();
        if a == m {
            0.0
        } else if a == b {
            -1.0
        } else if b == m {
            1.0
        } else {
            0.0
        }
    }

    /// Full-space rate `Q(x, y)` between state indices: nonzero only when
    /// `x` and `y` differ in at most one dimension.
    pub fn rate(&self, spec: &ModelSpec, x: usize, y: usize) -> f64 {
        if x == y {
            let unmasked = spec.dims() - spec.mask_count_at(x);
            return -(unmasked as f64);
        }
        let mut differing = (0..spec.dims()).filter(|&i| spec.token_at(x, i) != spec.token_at(y, i));
        match (differing.next(), differing.next()) {
            (Some(j), None) => self.token_rate(spec.token_at(x, j), spec.token_at(y, j)),
            _ => 0.0,
        }
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }
}

/// Per-token transition probabilities over an elapsed time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenKernel {
    t: f64,
    keep: f64,
    masked: f64,
    mask: usize,
}

impl TokenKernel {
    pub fn time(&self) -> f64 {
        self.t
    }

    /// `e^{-t}`, the probability that a non-mask token survives.
    pub fn keep(&self) -> f64 {
        self.keep
    }

    /// `1 - e^{-t}`.
    pub fn masked(&self) -> f64 {
        self.masked
    }

    /// `P(a -> b)`.
    #[inline]
    pub fn prob(&self, a: usize, b: usize) -> f64 {
        if a == self.mask {
            if b == self.mask {
                1.0
            } else {
                0.0
            }
        } else if b == a {
            self.keep
        } else if b == self.mask {
            self.masked
        } else {
            0.0
        }
    }

    pub fn row(&self, a: usize, vocab: usize) -> Vec<f64> {
        (0..vocab).map(|b| self.prob(a, b)).collect()
    }
}

pub fn token_kernel(spec: &ModelSpec, t: f64) -> Result<TokenKernel> {
    check_time(t)?;
    Ok(TokenKernel {
        t,
        keep: (-t).exp(),
        // expm1 keeps 1 - e^{-t} accurate for small t
        masked: -(-t).exp_m1(),
        mask: spec.mask().index(),
    })
}

pub(crate) fn check_time(t: f64) -> Result<()> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    Ok(())
}

/// Law of `x_t` given `x_0`.
pub fn forward_conditional(spec: &ModelSpec, x0: &StateVec, t: f64) -> Result<DenseDist> {
    let start = spec.encode(x0)?;
    let mut mass = vec![0.0; spec.num_states()];
    mass[start] = 1.0;
    apply_kernel(spec, &mut mass, t)?;
    Ok(DenseDist::from_vec_unchecked(mass))
}

/// Marginal `q_t = q_0 P_t`.
pub fn marginal(spec: &ModelSpec, t: f64) -> Result<DenseDist> {
    let mut mass = spec.q0().mass().to_vec();
    apply_kernel(spec, &mut mass, t)?;
    Ok(DenseDist::from_vec_unchecked(mass))
}

/// Pushes `mass` forward by `t` in place, one axis at a time.
///
/// For axis `j`, every state with a non-mask token at `j` keeps `e^{-t}` of
/// its mass and sends the rest to the state with the mask at `j`.
pub fn apply_kernel(spec: &ModelSpec, mass: &mut [f64], t: f64) -> Result<()> {
    if mass.len() != spec.num_states() {
        return Err(Error::LengthMismatch(mass.len(), spec.num_states()));
    }
    let kernel = token_kernel(spec, t)?;
    let mask = spec.mask().index();
    for j in 0..spec.dims() {
        let stride = spec.stride(j);
        for base in 0..spec.num_states() {
            if spec.token_at(base, j) != mask {
                continue;
            }
            let mut moved = 0.0;
            for a in spec.unmasked_tokens() {
                let idx = base - mask * stride + a * stride;
                let m = mass[idx];
                if m != 0.0 {
                    moved += m * kernel.masked();
                    mass[idx] = m * kernel.keep();
                }
            }
            mass[base] += moved;
        }
    }
    Ok(())
}

/// Draws `x_t` given `x_0`, independently per dimension.
pub fn sample_forward<R: Rng + ?Sized>(spec: &ModelSpec, x0: &StateVec, t: f64, rng: &mut R) -> Result<StateVec> {
    spec.validate_state(x0)?;
    let kernel = token_kernel(spec, t)?;
    let mut out = x0.clone();
    for i in 0..spec.dims() {
        if out.get(i) != spec.mask() && rng.random::<f64>() >= kernel.keep() {
            out.set(i, spec.mask());
        }
    }
    Ok(out)
}
