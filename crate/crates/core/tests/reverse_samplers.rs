mod common;

use std::sync::Arc;

use absorb_core::bounds::compute_gamma;
use absorb_core::divergence::{empirical_from_indices, kl};
use absorb_core::forward::marginal;
use absorb_core::reverse::{
    constant_with_steps, exact_law, geometric_with_steps, lambda_for_interval, make_schedule, tau_dim_outcome,
    tau_leaping_run, uniformization_run, InitDist, LambdaMode, SamplerKind, StepRule, TabulatedScore,
    UniformizationConfig, UniformizationPlan,
};
use absorb_core::score::{ClipMode, ClippedScore, ExactScore, PerturbedScore, ScoreFn};
use absorb_core::Error;
use common::{spec, ScaledScore, ZeroScore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Landing probability of each target via the count of other fired targets:
/// `P(land b) = p_b E[1 / (1 + K_b)]`, with `K_b` Poisson-binomial.
fn landing_by_count(fire: &[f64], mask: usize) -> Vec<f64> {
    let mut out = vec![0.0; fire.len()];
    for b in 0..fire.len() {
        if b == mask {
            continue;
        }
        let mut dist = vec![1.0];
        for (a, &p) in fire.iter().enumerate() {
            if a == b || a == mask {
                continue;
            }
            let mut next = vec![0.0; dist.len() + 1];
            for (k, &v) in dist.iter().enumerate() {
                next[k] += v * (1.0 - p);
                next[k + 1] += v * p;
            }
            dist = next;
        }
        let e: f64 = dist.iter().enumerate().map(|(k, v)| v / (k + 1) as f64).sum();
        out[b] = fire[b] * e;
    }
    out[mask] = fire
        .iter()
        .enumerate()
        .filter(|&(a, _)| a != mask)
        .map(|(_, p)| 1.0 - p)
        .product();
    out
}

#[test]
fn dimension_outcome_matches_count_formula() {
    let cases: [&[f64]; 4] = [
        &[0.3, 0.0],
        &[0.3, 0.6, 0.0],
        &[0.0, 0.9, 0.2, 0.5, 0.05],
        &[1.0, 1.0, 0.0, 1.0],
    ];
    for fire in cases {
        let mask = fire.iter().position(|&p| p == 0.0).unwrap();
        let a = tau_dim_outcome(fire, mask);
        let b = landing_by_count(fire, mask);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14, "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn zero_score_keeps_the_init_sample() {
    let s = spec("dirichlet:1,1", 3, 3);
    let zero = ZeroScore(s.clone());
    let schedule = make_schedule(5.0, 0.01, StepRule::Geometric(0.2)).unwrap();
    let init = InitDist::new(0.4).unwrap();
    for seed in 0..50 {
        let mut a = ChaCha8Rng::seed_from_u64(seed);
        let mut b = a.clone();
        let expect = init.sample(&s, &mut a);
        assert_eq!(tau_leaping_run(&zero, &schedule, &init, &mut b).unwrap(), expect);
    }
    let p0 = init.dense(&s);
    for kind in [SamplerKind::TauLeaping, SamplerKind::Uniformization] {
        let short = make_schedule(1.0, 0.5, StepRule::Constant(0.1)).unwrap();
        let p = exact_law(&zero, &short, &init, kind).unwrap();
        for (x, y) in p.mass().iter().zip(p0.mass()) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}

#[test]
fn uniformization_with_zero_intensity_returns_init() {
    let s = spec("uniform", 2, 2);
    let zero = ZeroScore(s.clone());
    let schedule = make_schedule(2.0, 0.1, StepRule::Geometric(0.5)).unwrap();
    let cfg = UniformizationConfig::new(LambdaMode::ExactSup, 1.0).unwrap();
    let plan = UniformizationPlan::new(&zero, &schedule, &cfg).unwrap();
    assert_eq!(plan.expected_events(), 0.0);
    let init = InitDist::new(0.3).unwrap();
    let mut a = ChaCha8Rng::seed_from_u64(3);
    let mut b = a.clone();
    let expect = init.sample(&s, &mut a);
    let (x, events) = uniformization_run(&zero, &schedule, &plan, &init, &mut b).unwrap();
    assert_eq!((x, events), (expect, 0));
}

#[test]
fn unmasked_tokens_never_change() {
    let s = spec("dirichlet:5,1", 3, 3);
    let exact: Arc<dyn ScoreFn> = Arc::new(ExactScore::analytic(s.clone()));
    let schedule = make_schedule(4.0, 1e-2, StepRule::Geometric(0.3)).unwrap();
    let init = InitDist::new(0.5).unwrap();
    let cfg = UniformizationConfig::default();
    let plan = UniformizationPlan::new(exact.as_ref(), &schedule, &cfg).unwrap();
    for seed in 0..200 {
        let mut a = ChaCha8Rng::seed_from_u64(seed);
        let start = init.sample(&s, &mut a);
        let mut b = ChaCha8Rng::seed_from_u64(seed);
        let tau = tau_leaping_run(exact.as_ref(), &schedule, &init, &mut b).unwrap();
        let mut c = ChaCha8Rng::seed_from_u64(seed);
        let (unif, _) = uniformization_run(exact.as_ref(), &schedule, &plan, &init, &mut c).unwrap();
        for out in [&tau, &unif] {
            for j in 0..3 {
                if start.get(j) != s.mask() {
                    assert_eq!(out.get(j), start.get(j));
                }
            }
            assert!(s.mask_count(out) <= s.mask_count(&start));
        }
    }
}

#[test]
fn exact_tau_kernel_matches_histogram() {
    let s = spec("dirichlet:2,1", 3, 2);
    let exact: Arc<dyn ScoreFn> = Arc::new(ExactScore::analytic(s.clone()));
    let schedule = make_schedule(3.0, 0.05, StepRule::Geometric(0.4)).unwrap();
    let init = InitDist::for_horizon(3.0).unwrap();
    let law = exact_law(exact.as_ref(), &schedule, &init, SamplerKind::TauLeaping).unwrap();
    let table = TabulatedScore::for_schedule(exact.as_ref(), &schedule).unwrap();
    let n = 100_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut counts = vec![0usize; s.num_states()];
    for _ in 0..n {
        let x = tau_leaping_run(&table, &schedule, &init, &mut rng).unwrap();
        counts[s.encode(&x).unwrap()] += 1;
    }
    for (x, &c) in counts.iter().enumerate() {
        let p = law.get(x);
        let sigma = (p * (1.0 - p) / n as f64).sqrt().max(1e-9);
        let f = c as f64 / n as f64;
        assert!((f - p).abs() <= 4.0 * sigma + 1e-9, "state {x}: {f} vs {p}");
    }
}

#[test]
fn tau_leaping_approaches_target_in_one_dimension() {
    let s = spec("point:0", 2, 1);
    let exact: Arc<dyn ScoreFn> = Arc::new(ExactScore::ratio(s.clone()));
    let (horizon, delta) = (6.0, 1e-3);
    let init = InitDist::for_horizon(horizon).unwrap();
    let target = marginal(&s, delta).unwrap();
    let mut last = f64::INFINITY;
    for n in [16, 64, 256] {
        let schedule = geometric_with_steps(horizon, delta, n).unwrap();
        let law = exact_law(exact.as_ref(), &schedule, &init, SamplerKind::TauLeaping).unwrap();
        let k = kl(&target, &law).unwrap();
        assert!(k < last);
        last = k;
    }
    assert!(last < 1e-2);

    // Monte Carlo agrees with the exact law
    let schedule = geometric_with_steps(horizon, delta, 256).unwrap();
    let table = TabulatedScore::for_schedule(exact.as_ref(), &schedule).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples: Vec<usize> = (0..20_000)
        .map(|_| {
            s.encode(&tau_leaping_run(&table, &schedule, &init, &mut rng).unwrap())
                .unwrap()
        })
        .collect();
    let emp = empirical_from_indices(2, &samples, 1.0 / samples.len() as f64).unwrap();
    assert!(kl(&target, &emp).unwrap() < 5e-3);
}

#[test]
fn uniformization_exact_law_reaches_target() {
    for (src, vocab, dims) in [("dirichlet:8,1", 2, 2), ("dirichlet:9,1", 3, 2), ("point:0", 3, 1)] {
        let s = spec(src, vocab, dims);
        let exact: Arc<dyn ScoreFn> = Arc::new(ExactScore::analytic(s.clone()));
        let (horizon, delta) = (10.0, 1e-3);
        let schedule = make_schedule(horizon, delta, StepRule::Geometric(0.2)).unwrap();
        let init = InitDist::for_horizon(horizon).unwrap();
        let law = exact_law(exact.as_ref(), &schedule, &init, SamplerKind::Uniformization).unwrap();
        let k = kl(&marginal(&s, delta).unwrap(), &law).unwrap();
        assert!(k < 1e-3, "{src}: {k}");
        assert!(k < 2.0 * dims as f64 * (-horizon).exp(), "{src}: {k}");
    }
}

#[test]
fn event_count_is_poisson() {
    let s = spec("dirichlet:4,1", 2, 2);
    let exact: Arc<dyn ScoreFn> = Arc::new(ExactScore::analytic(s.clone()));
    let clipped = ClippedScore::new(exact, 1.0, ClipMode::EarlyStop).unwrap();
    let schedule = make_schedule(8.0, 1e-3, StepRule::Geometric(0.25)).unwrap();
    let cfg = UniformizationConfig::default();
    let plan = UniformizationPlan::new(&clipped, &schedule, &cfg).unwrap();
    let init = InitDist::for_horizon(8.0).unwrap();
    let runs = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let counts: Vec<f64> = (0..runs)
        .map(|_| {
            uniformization_run(&clipped, &schedule, &plan, &init, &mut rng)
                .unwrap()
                .1 as f64
        })
        .collect();
    let mean = counts.iter().sum::<f64>() / runs as f64;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
    let mu = plan.expected_events();
    assert!((mean - mu).abs() < 3.0 * (mu / runs as f64).sqrt(), "{mean} vs {mu}");
    // the sample variance of a Poisson count has variance about mu/n + 2mu^2/n
    let var_sd = ((mu + 2.0 * mu * mu) / runs as f64).sqrt();
    assert!((var - mu).abs() < 3.0 * var_sd, "{var} vs {mu}");
}

#[test]
fn exact_sup_is_below_analytic() {
    for seed in 0..6u64 {
        let s = spec(&format!("dirichlet:{seed},1"), 2 + (seed % 3) as usize, 2);
        let exact: Arc<dyn ScoreFn> = Arc::new(ExactScore::analytic(s.clone()));
        for delta in [1e-3, 0.0] {
            let schedule = if delta > 0.0 {
                make_schedule(6.0, delta, StepRule::Geometric(0.3)).unwrap()
            } else {
                make_schedule(6.0, 0.0, StepRule::Constant(0.3)).unwrap()
            };
            let sup = UniformizationConfig::new(LambdaMode::ExactSup, 1.0).unwrap();
            let ana = UniformizationConfig::new(LambdaMode::Analytic, 1.0).unwrap();
            for k in 0..schedule.steps() {
                let a = lambda_for_interval(exact.as_ref(), &schedule, k, &ana);
                if delta == 0.0 && compute_gamma(&s) == 0.0 {
                    // unbounded near forward time zero
                    if k + 1 == schedule.steps() {
                        assert!(a.is_err());
                    }
                    continue;
                }
                let a = a.unwrap();
                let e = lambda_for_interval(exact.as_ref(), &schedule, k, &sup).unwrap();
                assert!(e <= a * (1.0 + 1e-12), "seed {seed} k {k}: {e} > {a}");
            }
        }
    }
}

fn total_rate(s: &absorb_core::state_space::ModelSpec, table: &absorb_core::score::ScoreTable, x: usize) -> f64 {
    table.unmask_scores(s, x).unwrap().iter().map(|r| r.score).sum()
}

#[test]
fn all_mask_state_carries_the_largest_rate_for_product_data() {
    for src in ["product:0.5,0.3,0.2", "product:0.1,0.1,0.8", "uniform", "gamma:0.3"] {
        let s = spec(src, 3, 3);
        let exact = ExactScore::analytic(s.clone());
        for &t in &[0.1, 1.0, 4.0] {
            let table = exact.table(t, 0).unwrap();
            let top = total_rate(&s, &table, s.all_masked_index());
            for x in 0..s.num_states() {
                assert!(total_rate(&s, &table, x) <= top * (1.0 + 1e-12));
            }
        }
    }
}

#[test]
fn correlated_data_can_beat_the_all_mask_rate() {
    // Half the data is (0, 0), half is fully masked. Seeing one revealed
    // token proves the other dimension was a real token too.
    let mut mass = vec![0.0; 9];
    mass[0] = 0.5;
    mass[8] = 0.5;
    let s = absorb_core::state_space::ModelSpec::new(
        3,
        2,
        absorb_core::state_space::TokenId(2),
        absorb_core::state_space::DenseDist::new(mass).unwrap(),
    )
    .unwrap();
    let exact = ExactScore::analytic(Arc::new(s.clone()));
    let table = exact.table(1.0, 0).unwrap();
    let all_mask = total_rate(&s, &table, s.all_masked_index());
    let best = (0..s.num_states())
        .filter_map(|x| table.unmask_scores(&s, x))
        .map(|r| r.iter().map(|r| r.score).sum::<f64>())
        .fold(0.0, f64::max);
    assert!(best > all_mask * 1.05, "{best} vs {all_mask}");
}

#[test]
fn analytic_lambda_shrinks_like_inverse_time() {
    let s = spec("uniform", 3, 2);
    let exact = ExactScore::analytic(s.clone());
    let schedule = constant_with_steps(100.0, 1.0, 99).unwrap();
    let cfg = UniformizationConfig::default();
    let l0 = lambda_for_interval(&exact, &schedule, 0, &cfg).unwrap();
    let l1 = lambda_for_interval(&exact, &schedule, 49, &cfg).unwrap();
    // forward times at interval ends are 99 and 50
    assert!((l0 - 2.0 / 99.0).abs() < 1e-12);
    assert!((l1 - 2.0 / 50.0).abs() < 1e-12);
}

#[test]
fn too_small_intensity_is_fatal() {
    let s = spec("uniform", 3, 2);
    let exact: Arc<dyn ScoreFn> = Arc::new(ExactScore::analytic(s.clone()));
    let inflated = ScaledScore(exact, 5.0);
    let schedule = make_schedule(3.0, 0.01, StepRule::Geometric(0.3)).unwrap();
    let plan = UniformizationPlan::new(&inflated, &schedule, &UniformizationConfig::default()).unwrap();
    let init = InitDist::new(0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut saw = false;
    for _ in 0..50 {
        match uniformization_run(&inflated, &schedule, &plan, &init, &mut rng) {
            Err(Error::IntensityTooSmall { .. }) => {
                saw = true;
                break;
            }
            Err(e) => panic!("{e}"),
            Ok(_) => {}
        }
    }
    assert!(saw);
}

#[test]
fn perturbed_scores_stay_fixed_within_a_step() {
    let s = spec("dirichlet:3,1", 3, 2);
    let exact: Arc<dyn ScoreFn> = Arc::new(ExactScore::analytic(s.clone()));
    let noisy = PerturbedScore::new(exact, 0.2, 17).unwrap();
    let schedule = make_schedule(4.0, 0.01, StepRule::Geometric(0.3)).unwrap();
    let table = TabulatedScore::for_schedule(&noisy, &schedule).unwrap();
    for k in 0..schedule.steps() {
        let t = schedule.forward_time(schedule.grid()[k]);
        let direct = noisy.table(t, k).unwrap();
        let stored = table.table(t, k).unwrap();
        for x in 0..s.num_states() {
            assert_eq!(direct.unmask_scores(&s, x), stored.unmask_scores(&s, x));
        }
    }
}
