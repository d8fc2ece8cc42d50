use std::time::Instant;

use gsp_core::{Emotion, ExperimentConfig, SliderGrid};
use gsp_sim::oracle::{agent_chain_kernel, median_chain_kernel, median_distribution, stationary};
use gsp_sim::{
    gibbs_kernel, gibbs_oracle_stationary, lattice_target, simulate, total_variation, AgentPolicy, EmotionTarget,
    TargetSet, Timing,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid8() -> SliderGrid {
    SliderGrid::new(-0.24, 0.38, 8).unwrap()
}

fn correlated() -> EmotionTarget {
    // sd 0.15 and 0.1, correlation 0.7
    let (s0, s1, rho) = (0.15, 0.1, 0.7);
    EmotionTarget {
        emotion: Emotion::Anger,
        mu: vec![0.05, 0.12],
        sigma: 0.1,
        covariance: Some(vec![vec![s0 * s0, rho * s0 * s1], vec![rho * s0 * s1, s1 * s1]]),
    }
}

#[test]
fn oracle_recovers_correlated_target() {
    let t = Instant::now();
    let pi = gibbs_oracle_stationary(&correlated(), &grid8()).unwrap();
    let target = lattice_target(&correlated(), &grid8()).unwrap();
    let tv = total_variation(&pi, &target);
    assert!(tv < 1e-10, "tv {tv:e}");
    assert!(t.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn independent_dimensions_factorize() {
    let g = grid8();
    let t = EmotionTarget::isotropic(Emotion::Sadness, vec![-0.1, 0.2], 0.12);
    let pi = gibbs_oracle_stationary(&t, &g).unwrap();
    let c = t.compile(&g).unwrap();
    let m0 = c.slice_probs(&[0.0, 0.0], 0, &g);
    let m1 = c.slice_probs(&[0.0, 0.0], 1, &g);
    for (s, p) in pi.iter().enumerate() {
        assert!((p - m0[s % 8] * m1[s / 8]).abs() < 1e-10);
    }
}

#[test]
fn single_sampler_chain_is_the_gibbs_kernel() {
    let g = grid8();
    let a = gibbs_kernel(&correlated(), &g).unwrap();
    let b = agent_chain_kernel(&correlated(), &g, &AgentPolicy::sampler(1.0)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn median_of_maximizers_is_the_maximizer() {
    let g = grid8();
    let one = agent_chain_kernel(&correlated(), &g, &AgentPolicy::maximizer()).unwrap();
    let five = median_chain_kernel(&correlated(), &g, &AgentPolicy::maximizer(), 5).unwrap();
    assert_eq!(one, five);
}

#[test]
fn median_distribution_matches_monte_carlo() {
    use rand::Rng;
    let q = [0.1, 0.3, 0.2, 0.4];
    let exact = median_distribution(&q, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 200_000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        let mut draws: Vec<usize> = (0..5)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                q.iter().position(|p| {
                    acc += p;
                    u < acc
                }).unwrap_or(3)
            })
            .collect();
        draws.sort_unstable();
        counts[draws[2]] += 1;
    }
    for (c, e) in counts.iter().zip(&exact) {
        assert!((*c as f64 / n as f64 - e).abs() < 0.005);
    }
}

#[test]
fn median_of_five_samplers_concentrates() {
    // Not a Gibbs sampler any more: the stationary law is sharper than the
    // target, which is why median-of-5 chains behave as mode seekers.
    let g = grid8();
    let target = lattice_target(&correlated(), &g).unwrap();
    let pi = stationary(&median_chain_kernel(&correlated(), &g, &AgentPolicy::sampler(1.0), 5).unwrap());
    let entropy = |p: &[f64]| -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>();
    assert!(entropy(&pi) < entropy(&target));
}

#[test]
fn simulated_single_response_chain_samples_the_target() {
    let g = grid8();
    let config = ExperimentConfig {
        dimensions: 2,
        grid: gsp_core::config::GridConfig {
            lo: -0.24,
            hi: 0.38,
            n: 8,
        },
        emotions: vec![Emotion::Anger],
        sentences: vec!["One.".into()],
        n_chains: 1,
        n_iterations: 40_000,
        participants_per_iteration: 1,
        duration_hours: 10_000.0,
        ..ExperimentConfig::default()
    };
    let targets = TargetSet {
        targets: vec![correlated()],
    };
    let (exp, _) = simulate(config, &targets, &AgentPolicy::sampler(1.0), &Timing::default(), 5, None).unwrap();
    let chain = &exp.state().chains[0];
    assert_eq!(chain.iteration, 40_000);
    let mut hist = vec![0.0; 64];
    let scans: Vec<_> = chain.history.iter().filter(|h| h.iteration % 2 == 0 && h.iteration > 0).collect();
    for h in &scans {
        hist[h.point.index(0) + 8 * h.point.index(1)] += 1.0 / scans.len() as f64;
    }
    let tv = total_variation(&hist, &lattice_target(&correlated(), &g).unwrap());
    assert!(tv < 0.03, "tv {tv}");
}
