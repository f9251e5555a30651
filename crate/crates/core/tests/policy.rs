use pegrad_core::nets::{standard_normal, Activation, Bind, MlpSpec, SquashedGaussianPolicy};
use pegrad_core::rng::seeded;
use pegrad_core::{Graph, Tensor};
use proptest::prelude::*;

fn policy(obs_dim: usize, act_dim: usize, low: f64, high: f64, seed: u64) -> SquashedGaussianPolicy {
    let spec = MlpSpec::new(obs_dim, &[16, 16], act_dim, Activation::Tanh).unwrap();
    SquashedGaussianPolicy::new(spec, &vec![low; act_dim], &vec![high; act_dim], &mut seeded(seed)).unwrap()
}

fn log_density(p: &SquashedGaussianPolicy, obs: &[f64], raw: &[f64]) -> Vec<f64> {
    let n = raw.len();
    let mut g = Graph::new();
    let o = g.constant(Tensor::new(vec![n, obs.len()], obs.repeat(n)).unwrap());
    let lp = p
        .log_prob_raw(&mut g, o, &Tensor::new(vec![n, 1], raw.to_vec()).unwrap(), Bind::Frozen)
        .unwrap();
    g.value(lp).data().to_vec()
}

/// Midpoint rule over the action interval with 10^4 points: the squashed
/// density integrates to one.
#[test]
fn squashed_density_integrates_to_one() {
    let (low, high) = (-2.0, 2.0);
    for (seed, obs) in [(1u64, [0.3, -0.7, 1.1]), (2, [-1.0, 0.0, 0.5]), (3, [2.0, 2.0, -2.0])] {
        let p = policy(3, 1, low, high, seed);
        let n = 10_000;
        let h = (high - low) / n as f64;
        let raw: Vec<f64> = (0..n)
            .map(|i| {
                let a = low + (i as f64 + 0.5) * h;
                (a / 2.0).atanh()
            })
            .collect();
        let total: f64 = log_density(&p, &obs, &raw).iter().map(|l| l.exp() * h).sum();
        assert!((total - 1.0).abs() <= 1e-3, "seed {seed}: integral {total}");
    }
}

#[test]
fn sampled_log_prob_matches_density_of_the_raw_sample() {
    let p = policy(4, 2, -1.0, 1.0, 9);
    let mut rng = seeded(10);
    let obs = standard_normal(32, 4, &mut rng);
    let s = p.sample(&obs, &mut rng).unwrap();
    let mut g = Graph::new();
    let o = g.constant(obs.clone());
    let lp = p.log_prob_raw(&mut g, o, &s.raw, Bind::Frozen).unwrap();
    for (a, b) in s.log_prob.iter().zip(g.value(lp).data()) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
    let again = p.squash_raw(&s.raw).unwrap();
    assert_eq!(again, s.action);
}

proptest! {
    #[test]
    fn actions_stay_strictly_inside_bounds(
        seed in 0u64..1000,
        low in -5.0f64..0.0,
        width in 0.1f64..10.0,
        scale in prop_oneof![Just(1.0), Just(100.0), Just(1e6)],
    ) {
        let high = low + width;
        let p = policy(3, 2, low, high, seed);
        let mut rng = seeded(seed + 1);
        let obs = Tensor::new(vec![8, 3], standard_normal(8, 3, &mut rng).data().iter().map(|x| x * scale).collect()).unwrap();
        let sample = p.sample(&obs, &mut rng).unwrap();
        let mean = p.mean_action(&obs).unwrap();
        for a in sample.action.data().iter().chain(mean.data()) {
            prop_assert!(*a > low && *a < high, "{} outside ({}, {})", a, low, high);
        }
        prop_assert!(sample.log_prob.iter().all(|l| !l.is_nan()));
    }
}
