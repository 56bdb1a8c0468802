mod common;

use agelab::exploration::{age_action_probabilities, zeta_adv};
use agelab::neural::TrainSample;
use agelab::rng::SplitMix64;
use agelab::tabular::{
    expected_td_error, expected_td_error_nominal_form, noisy_action_mdp, optimal_action_sets, policy_evaluation,
    value_iteration, SamplingProfile, ToyMdp,
};
use common::*;

#[test]
fn parameter_and_input_gradients_match_differences() {
    let mut rng = SplitMix64::new(11);
    for _ in 0..100 {
        let net = random_network(&mut rng);
        let batch = random_batch(&net, &mut rng);
        let samples: Vec<TrainSample> = (0..batch.obs.len())
            .map(|i| TrainSample {
                observation: &batch.obs[i],
                action: batch.actions[i],
                target: batch.targets[i],
                weight: batch.weights[i],
            })
            .collect();
        let out = net.loss_and_gradients(&samples).unwrap();
        assert!((out.loss - batch_loss_ref(&net, &batch)).abs() < 1e-12);
        let numeric = parameter_gradient_fd(&net, &batch, 1e-5);
        for (a, n) in out.gradients.iter().zip(&numeric) {
            assert!(relative_error(a, *n) < 1e-4, "parameter gradient {a} vs {n}");
        }
        let target = rng.below(net.output_dim());
        let analytic = net.input_gradient(&batch.obs[0], target).unwrap();
        for (a, n) in analytic.iter().zip(input_gradient_fd(&net, &batch.obs[0], target, 1e-5)) {
            assert!(relative_error(*a, n) < 1e-4, "input gradient {a} vs {n}");
        }
    }
}

#[test]
fn forward_matches_reference() {
    let mut rng = SplitMix64::new(12);
    for _ in 0..50 {
        let net = random_network(&mut rng);
        let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.uniform(-2.0, 2.0)).collect();
        for (a, b) in net.forward(&x).unwrap().iter().zip(forward_ref(&net, &x)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

fn random_profile(n: usize, rng: &mut SplitMix64) -> SamplingProfile {
    let raw: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
    let z: f64 = raw.iter().sum();
    let p_s: Vec<f64> = raw.iter().map(|r| r / z).collect();
    let p_attack = p_s.iter().map(|p| p * rng.next_f64()).collect();
    SamplingProfile::new(p_s, p_attack).unwrap()
}

#[test]
fn expected_td_error_matches_reference() {
    let mut rng = SplitMix64::new(13);
    let mdps = [ToyMdp::chain(5, 0.9).unwrap(), ToyMdp::gridworld(0.95).unwrap()];
    for i in 0..1000 {
        let mdp = &mdps[i % 2];
        let n = mdp.n_states();
        let v: Vec<f64> = (0..n).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let prof = random_profile(n, &mut rng);
        let (s, a) = (rng.below(n), rng.below(mdp.n_actions()));
        let (nom, att) = (rng.below(n), rng.below(n));
        let lib = expected_td_error(&prof, mdp, &v, s, a, nom, att).unwrap();
        let alt = expected_td_error_nominal_form(&prof, mdp, &v, s, a, nom, att).unwrap();
        let oracle = td_error_ref(mdp, &v, prof.p_s[s], prof.p_attack_given_s[s], s, a, nom, att);
        assert!((lib - oracle).abs() <= 1e-12, "{lib} vs {oracle}");
        assert!((alt - oracle).abs() <= 1e-12);
    }
}

#[test]
fn no_attack_is_the_plain_td_error() {
    let mdp = ToyMdp::gridworld(0.9).unwrap();
    let n = mdp.n_states();
    let mut rng = SplitMix64::new(14);
    for _ in 0..200 {
        let v: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (s, a, next) = (rng.below(n), rng.below(4), rng.below(n));
        let mut p_s = vec![0.0; n];
        p_s[s] = 1.0;
        let prof = SamplingProfile::new(p_s, vec![0.0; n]).unwrap();
        let lib = expected_td_error(&prof, &mdp, &v, s, a, next, rng.below(n)).unwrap();
        assert_eq!(lib, mdp.reward(s, a, next) + 0.9 * v[next] - v[s]);
    }
}

#[test]
fn age_matches_enumeration() {
    let mut rng = SplitMix64::new(15);
    for k in [2, 3, 5] {
        for _ in 0..200 {
            let q: Vec<f64> = (0..k).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let (eps, t) = (rng.next_f64(), rng.uniform(0.1, 2.0));
            let lib = age_action_probabilities(&q, eps, t).unwrap();
            for (a, b) in lib.iter().zip(age_brute_force(&q, eps, t)) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in zeta_adv(&q, t).unwrap().probabilities.iter().zip(zeta_ref(&q, t)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn value_iteration_matches_exhaustive_policy_search() {
    for mdp in [ToyMdp::chain(5, 0.9).unwrap(), ToyMdp::chain(4, 0.5).unwrap()] {
        let brute = optimal_values_brute_force(&mdp);
        let vi = value_iteration(&mdp, 1e-13);
        for (a, b) in vi.values.iter().zip(&brute) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn policy_evaluation_matches_dense_solve() {
    let mdp = ToyMdp::gridworld(0.95).unwrap();
    let mut rng = SplitMix64::new(16);
    for _ in 0..20 {
        let policy: Vec<usize> = (0..mdp.n_states()).map(|_| rng.below(4)).collect();
        for (a, b) in policy_evaluation(&mdp, &policy).iter().zip(policy_value_ref(&mdp, &policy)) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn redirected_actions_keep_the_optimum_below_one_half() {
    for mdp in [ToyMdp::chain(5, 0.9).unwrap(), ToyMdp::gridworld(0.9).unwrap()] {
        let clean = optimal_action_sets(&mdp);
        for p in [0.1, 0.3, 0.45] {
            let noisy = optimal_action_sets(&noisy_action_mdp(&mdp, p).unwrap());
            for s in mdp.non_terminal_states() {
                assert!(noisy[s].iter().all(|a| clean[s].contains(a)), "{} p={p} s={s}", mdp.name());
            }
        }
        let flipped = optimal_action_sets(&noisy_action_mdp(&mdp, 0.7).unwrap());
        assert!(mdp.non_terminal_states().any(|s| flipped[s].iter().all(|a| !clean[s].contains(a))));
    }
}
