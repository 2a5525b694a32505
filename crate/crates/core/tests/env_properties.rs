use awac_core::env::{
    feasible_actions, reset, step, AllocationAction, EnvConfig, TerminationReason, STEP_REWARD,
};
use awac_core::hpm::HpmParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn all_vectors(n: usize, max: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for head in 0..=max {
        for mut tail in all_vectors(n - 1, max) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

#[test]
fn feasible_set_matches_brute_force() {
    for (n, total, min, max) in [(2, 6, 1, None), (3, 9, 1, None), (3, 7, 2, Some(3)), (4, 8, 0, Some(4))] {
        let cfg = EnvConfig {
            n_operators: n,
            total_views: total,
            min_views: min,
            max_views: max,
            ..EnvConfig::default()
        };
        let upper = cfg.max_views();
        let brute: Vec<Vec<usize>> = all_vectors(n, total)
            .into_iter()
            .filter(|v| v.iter().sum::<usize>() == total && v.iter().all(|&x| x >= min && x <= upper))
            .collect();
        let got: Vec<Vec<usize>> = feasible_actions(&cfg).into_iter().map(|a| a.views).collect();
        assert_eq!(got, brute, "n={n} total={total}");
    }
}

#[test]
fn fuzzed_episodes_respect_reward_and_termination_rules() {
    let hpm = HpmParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let episodes = 10_000;
    for ep in 0..episodes {
        let cfg = EnvConfig {
            noise_sigma: if ep % 2 == 0 { 0.0 } else { 0.05 },
            ..EnvConfig::default()
        };
        let feasible = feasible_actions(&cfg);
        let (mut state, _) = reset(&cfg, &hpm, ep as u64).unwrap();
        let mut ret = 0.0;
        loop {
            // Mostly feasible moves, plus arbitrary vectors that are usually infeasible.
            let action = if rng.random::<f64>() < 0.8 {
                feasible[rng.random_range(0..feasible.len())].clone()
            } else {
                AllocationAction::new((0..cfg.n_operators).map(|_| rng.random_range(0..=cfg.total_views)).collect())
            };
            let legal = action.is_feasible(&cfg);
            let before = state.clone();
            let r = step(&mut state, &action, &cfg, &hpm, &mut rng).unwrap();
            assert!(r.reward == 0.0 || r.reward == STEP_REWARD);
            ret += r.reward;
            assert!(ret <= 3.0 * STEP_REWARD + 1e-12);
            assert_eq!(state.views().views.iter().sum::<usize>(), cfg.total_views);
            if !legal {
                assert!(r.terminated);
                assert_eq!(r.reward, 0.0);
                assert_eq!(r.info.termination, Some(TerminationReason::InfeasibleAction));
                assert_eq!(state.operators, before.operators);
            } else if r.info.team_perf_after < r.info.team_perf_before {
                assert!(r.terminated);
                assert_eq!(r.reward, 0.0);
                assert_eq!(r.info.termination, Some(TerminationReason::PerformanceDecrease));
            } else {
                assert_eq!(r.reward, STEP_REWARD);
            }
            if r.terminated {
                break;
            }
            assert!(state.set_index < cfg.sets_per_mission);
        }
        assert!(state.set_index <= cfg.sets_per_mission);
    }
}

#[test]
fn terminated_state_rejects_further_steps() {
    let cfg = EnvConfig::default();
    let hpm = HpmParams::default();
    let (mut state, _) = reset(&cfg, &hpm, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    step(&mut state, &AllocationAction::new(vec![6, 0]), &cfg, &hpm, &mut rng).unwrap();
    assert!(step(&mut state, &AllocationAction::new(vec![3, 3]), &cfg, &hpm, &mut rng).is_err());
}
