use rand::Rng;

use crate::error::{Error, Result};
use crate::state_space::{product_dist, DenseDist, ModelSpec, StateVec, TokenId};

/// Product initialization: each dimension is mask with probability `1 - eps`
/// and each non-mask token with probability `eps / (S - 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitDist {
    eps: f64,
    /// `1 - eps`, kept separately so `e^{-T}` horizons get it via `expm1`.
    mask_mass: f64,
}

impl InitDist {
    pub fn new(eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::InvalidArgument(format!("eps must lie in [0, 1), got {eps}")));
        }
        Ok(InitDist {
            eps,
            mask_mass: 1.0 - eps,
        })
    }

    /// `eps = e^{-T}`.
    pub fn for_horizon(horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidArgument(format!("horizon must be > 0, got {horizon}")));
        }
        Ok(InitDist {
            eps: (-horizon).exp(),
            mask_mass: -(-horizon).exp_m1(),
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Per-dimension marginal over `[S]`.
    pub fn token_marginal(&self, spec: &ModelSpec) -> Vec<f64> {
        let other = self.eps / (spec.vocab() - 1) as f64;
        let mut p = vec![other; spec.vocab()];
        p[spec.mask().index()] = self.mask_mass;
        p
    }

    pub fn dense(&self, spec: &ModelSpec) -> DenseDist {
        product_dist(&self.token_marginal(spec), spec.vocab(), spec.dims())
    }

    pub fn sample<R: Rng + ?Sized>(&self, spec: &ModelSpec, rng: &mut R) -> StateVec {
        let others = (spec.vocab() - 1) as u32;
        let tokens = (0..spec.dims())
            .map(|_| {
                if self.eps == 0.0 || rng.random::<f64>() >= self.eps {
                    spec.mask()
                } else {
                    let k = rng.random_range(0..others);
                    // non-mask tokens in increasing order, skipping the mask
                    TokenId(if k >= spec.mask().0 { k + 1 } else { k })
                }
            })
            .collect();
        StateVec::new(tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state_space::Q0Source;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(vocab: usize, dims: usize, mask: Option<u32>) -> ModelSpec {
        ModelSpec::from_source(vocab, dims, mask.map(TokenId), &Q0Source::Uniform).unwrap()
    }

    #[test]
    fn zero_eps_is_all_mask() {
        let s = spec(4, 3, None);
        let init = InitDist::new(0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(init.sample(&s, &mut rng), s.all_masked());
        }
        assert_eq!(init.dense(&s).get(s.all_masked_index()), 1.0);
    }

    #[test]
    fn all_mask_mass_is_product() {
        let s = spec(3, 4, None);
        let init = InitDist::for_horizon(2.0).unwrap();
        let p = init.dense(&s);
        let expect = (1.0 - (-2.0f64).exp()).powi(4);
        assert!((p.get(s.all_masked_index()) - expect).abs() < 1e-14);
        assert!((p.mass().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_non_mask_frequency() {
        let s = spec(4, 2, Some(1));
        let init = InitDist::new(0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let x = init.sample(&s, &mut rng);
            counts[x.get(0).index()] += 1;
        }
        let non_mask = (n - counts[1]) as f64 / n as f64;
        let sigma = (0.2f64 * 0.8 / n as f64).sqrt();
        assert!((non_mask - 0.2).abs() < 3.0 * sigma, "{non_mask}");
        // the other three tokens share eps evenly
        for a in [0, 2, 3] {
            let f = counts[a] as f64 / n as f64;
            let p = 0.2 / 3.0;
            assert!((f - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt());
        }
    }

    #[test]
    fn rejects_bad_eps() {
        assert!(InitDist::new(1.0).is_err());
        assert!(InitDist::new(-0.1).is_err());
        assert!(InitDist::for_horizon(0.0).is_err());
    }
}
