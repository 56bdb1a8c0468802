use agelab::attacks::{craft, AttackMode, AttackSpec};
use agelab::exploration::{argmax, argmin, zeta_adv, ExplorationSchedule};
use agelab::harness::checkpoint::{decode, encode};
use agelab::harness::plot::moving_average;
use agelab::neural::{Activation, QNetwork};
use agelab::replay::{Experience, ReplayBuffer, SumTree};
use agelab::resilience::{EpisodeTally, RegretLog, MAX_RETURN};
use agelab::rng::SplitMix64;
use proptest::prelude::*;

fn experience(tag: f64, perturbed: bool) -> Experience {
    Experience {
        state: vec![tag],
        action: 0,
        reward: 0.0,
        next_state: vec![tag],
        terminal: false,
        perturbed,
    }
}

proptest! {
    #[test]
    fn sum_tree_root_is_leaf_sum(values in prop::collection::vec(0.0f64..10.0, 1..64), cap in 1usize..80) {
        let mut tree = SumTree::new(cap);
        let mut leaves = vec![0.0; cap];
        for (i, v) in values.iter().enumerate() {
            let slot = i % cap;
            tree.set(slot, *v);
            leaves[slot] = *v;
        }
        let sum: f64 = leaves.iter().sum();
        prop_assert!((tree.total() - sum).abs() <= 1e-9 * sum.max(1.0));
    }

    #[test]
    fn sum_tree_find_lands_inside_the_leaf_interval(values in prop::collection::vec(0.01f64..5.0, 1..40), u in 0.0f64..1.0) {
        let mut tree = SumTree::new(values.len());
        for (i, v) in values.iter().enumerate() {
            tree.set(i, *v);
        }
        let mass = u * tree.total();
        let i = tree.find(mass);
        let before: f64 = values[..i].iter().sum();
        prop_assert!(before <= mass + 1e-9);
        prop_assert!(mass <= before + values[i] + 1e-9);
    }

    #[test]
    fn replay_keeps_the_newest_items_in_fifo_order(cap in 1usize..30, pushes in 0usize..100) {
        let mut buf = ReplayBuffer::uniform(cap);
        for k in 0..pushes {
            buf.push(experience(k as f64, k % 3 == 0));
        }
        prop_assert_eq!(buf.len(), pushes.min(cap));
        let mut tags: Vec<f64> = buf.iter().map(|e| e.state[0]).collect();
        tags.sort_by(f64::total_cmp);
        let expected: Vec<f64> = (pushes.saturating_sub(cap)..pushes).map(|k| k as f64).collect();
        prop_assert_eq!(tags, expected);
        let perturbed = buf.iter().filter(|e| e.perturbed).count() as f64;
        if !buf.is_empty() {
            prop_assert!((buf.composition().1 - perturbed / buf.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn pre_attack_items_vanish_after_one_capacity(cap in 1usize..40, before in 0usize..60, after in 0usize..80) {
        let mut buf = ReplayBuffer::prioritized(cap, 0.6);
        for k in 0..before {
            buf.push(experience(k as f64, false));
        }
        let start = buf.total_pushes();
        for k in 0..after {
            buf.push(experience(k as f64, true));
        }
        let remaining = buf.count_pushed_before(start);
        prop_assert_eq!(remaining, before.min(cap).min(cap.saturating_sub(after)));
    }

    #[test]
    fn zeta_properties(q in prop::collection::vec(-5.0f64..5.0, 2..6), t in 0.05f64..3.0, shift in -50.0f64..50.0) {
        let z = zeta_adv(&q, t).unwrap().probabilities;
        prop_assert!((z.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(z.iter().all(|&p| p > 0.0));
        prop_assert_eq!(argmax(&z), argmin(&q));
        let shifted: Vec<f64> = q.iter().map(|v| v + shift).collect();
        let zs = zeta_adv(&shifted, t).unwrap().probabilities;
        for (a, b) in z.iter().zip(&zs) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn cold_zeta_concentrates_on_the_worst_action(q in prop::collection::vec(-5.0f64..5.0, 2..6)) {
        let worst = argmin(&q);
        let gap = q.iter().enumerate().filter(|(i, _)| *i != worst).map(|(_, v)| v - q[worst]).fold(f64::INFINITY, f64::min);
        prop_assume!(gap > 1e-2);
        let z = zeta_adv(&q, gap / 50.0).unwrap().probabilities;
        prop_assert!(z[worst] > 1.0 - 1e-15 * q.len() as f64 - (q.len() as f64) * (-50.0f64).exp());
    }

    #[test]
    fn epsilon_schedule_is_monotone_and_bounded(a in 0u64..200_000, b in 0u64..200_000) {
        let s = ExplorationSchedule::default();
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(s.epsilon_at(lo) >= s.epsilon_at(hi));
        prop_assert!((0.02..=1.0).contains(&s.epsilon_at(a)));
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), relu in any::<bool>(), h in 1usize..10) {
        let act = if relu { Activation::Relu } else { Activation::Tanh };
        let mut rng = SplitMix64::new(seed);
        let net = QNetwork::new(&[4, h, h, 2], act, &mut rng);
        let back = decode(&encode(&net)).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..4).map(|_| rng.uniform(-3.0, 3.0)).collect();
            prop_assert_eq!(net.forward(&x).unwrap(), back.forward(&x).unwrap());
        }
    }

    #[test]
    fn crafted_observations_stay_in_the_ball(seed in any::<u64>(), radius in 0.01f64..1.0) {
        let mut rng = SplitMix64::new(seed);
        let net = QNetwork::new(&[4, 8, 2], Activation::Tanh, &mut rng);
        let obs: Vec<f64> = (0..4).map(|_| rng.uniform(-0.5, 0.5)).collect();
        let spec = AttackSpec { p_attack: 1.0, mode: AttackMode::Targeted, max_linf_radius: radius, oracle_fallback: false, ..AttackSpec::default() };
        let out = craft(&spec, &net, &obs).unwrap();
        for (a, b) in out.perturbed_observation.iter().zip(&obs) {
            prop_assert!((a - b).abs() <= radius + 1e-12);
        }
    }

    #[test]
    fn moving_average_stays_within_range(v in prop::collection::vec(-100.0f64..100.0, 1..300), w in 1usize..120) {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for m in moving_average(&v, w) {
            prop_assert!(m >= lo - 1e-9 && m <= hi + 1e-9);
        }
    }

    #[test]
    fn regret_is_the_shortfall_from_the_maximum(rewards in prop::collection::vec(1.0f64..500.0, 1..150)) {
        let tallies: Vec<EpisodeTally> = rewards.iter().enumerate().map(|(i, &r)| EpisodeTally {
            victim_reward: r.floor(),
            perturbations: (i % 7) as u32,
            adversary_return: 0.0,
            end_step: i as u64,
        }).collect();
        let log = RegretLog::from_tallies(&tallies);
        for (row, t) in log.rows.iter().zip(&tallies) {
            prop_assert_eq!(row.regret, MAX_RETURN - t.victim_reward);
            prop_assert!(row.ma100_regret >= 0.0 && row.ma100_regret <= MAX_RETURN);
        }
    }
}
