use effq_core::chain::{
    build_extended_chain, epsilon_kappa, lemma2_bound, soft_vs_hard_gap_row, transition_row, ExtendedState,
};
use effq_core::dynamics::{run, softmax_response, verify_epoch_identity, RunConfig};
use effq_core::game::{random_game, JointAction, JointSpace, QTable, RandomGameParams, StochasticGame};
use effq_core::schedule::{accumulated_sums, epoch_weights, weight_monotonicity_check, Schedule};
use effq_core::solver::{bellman_operator, greedy_profile, solve_q_star};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_game() -> impl Strategy<Value = StochasticGame> {
    (1usize..=3, prop::collection::vec(1usize..=3, 1..=3), 0.0f64..0.95, any::<u64>()).prop_map(
        |(states, actions, gamma, seed)| {
            let mut p = RandomGameParams::uniform(actions.len(), states, 1, seed);
            p.actions_per_agent = actions;
            p.gamma = gamma;
            p.reward_range = (-1.0, 2.0);
            random_game(&p).unwrap()
        },
    )
}

fn random_q(game: &StochasticGame, rng: &mut ChaCha8Rng, scale: f64) -> QTable {
    let data = (0..game.num_states() * game.num_joint_actions())
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    QTable::from_flat(game.num_states(), game.num_joint_actions(), data).unwrap()
}

proptest! {
    #[test]
    fn joint_index_is_a_bijection(sizes in prop::collection::vec(1usize..=16, 1..=4)
        .prop_filter("|A| <= 256", |s| s.iter().product::<usize>() <= 256))
    {
        let space = JointSpace::new(&sizes).unwrap();
        let mut seen = vec![false; space.len()];
        for (idx, slot) in seen.iter_mut().enumerate() {
            let a = JointAction(idx);
            let coords = space.decode(a);
            prop_assert!(coords.iter().zip(&sizes).all(|(c, k)| c < k));
            prop_assert_eq!(space.encode(&coords), Some(a));
            prop_assert!(!*slot);
            *slot = true;
        }
    }

    #[test]
    fn random_games_are_valid_and_irreducible(game in small_game()) {
        prop_assert!(game.validate().is_valid());
        prop_assert!(game.is_irreducible());
    }

    #[test]
    fn json_round_trip_is_identity(game in small_game()) {
        prop_assert_eq!(StochasticGame::from_json(&game.to_json()).unwrap(), game);
    }

    #[test]
    fn fixed_point_residual_within_twice_tol(game in small_game(), tol in 1e-12f64..1e-6) {
        let res = solve_q_star(&game, tol, 1_000_000).unwrap();
        prop_assert!(res.final_residual <= tol);
        prop_assert!(bellman_operator(&game, &res.q_star).sup_dist(&res.q_star) <= 2.0 * tol);
    }

    #[test]
    fn greedy_invariant_under_row_shift(
        rows in prop::collection::vec(prop::collection::vec(-16i32..16, 6), 1..4),
        shifts in prop::collection::vec(-64i32..64, 4),
    ) {
        // Multiples of 1/8 keep the shift exact, so ties survive it.
        let q = QTable::from_rows(&rows.iter().map(|r| r.iter().map(|&x| x as f64 / 8.0).collect()).collect::<Vec<_>>()).unwrap();
        let shifted = QTable::from_rows(
            &rows.iter().zip(&shifts).map(|(r, &c)| r.iter().map(|&x| x as f64 / 8.0 + c as f64).collect()).collect::<Vec<_>>(),
        ).unwrap();
        prop_assert_eq!(greedy_profile(&q), greedy_profile(&shifted));
    }

    #[test]
    fn value_iteration_monotone_with_nonnegative_rewards(seed in any::<u64>(), gamma in 0.0f64..0.95) {
        let mut p = RandomGameParams::uniform(2, 3, 2, seed);
        p.gamma = gamma;
        let game = random_game(&p).unwrap();
        let mut q = QTable::zeros_like(&game);
        for _ in 0..50 {
            let next = bellman_operator(&game, &q);
            prop_assert!(next.as_slice().iter().zip(q.as_slice()).all(|(a, b)| a >= b));
            q = next;
        }
    }

    #[test]
    fn softmax_is_a_positive_distribution(z in prop::collection::vec(-5.0f64..5.0, 1..10), tau in 0.05f64..5.0) {
        let p = softmax_response(&z, tau);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn soft_gap_sign_and_size(row in prop::collection::vec(-10.0f64..10.0, 1..12), tau in 1e-3f64..10.0) {
        let g = soft_vs_hard_gap_row(&row, tau);
        prop_assert!(g.e_d <= 0.0);
        prop_assert!(-g.e_d <= g.bound);
    }

    #[test]
    fn mismatch_bound_is_monotone(eps in 0.05f64..1.0, lambda in 0.5f64..1.0, kappa in 1usize..5, m in 0u64..50) {
        let now = lemma2_bound(eps, lambda, kappa, m).raw;
        let later = lemma2_bound(eps, lambda, kappa, m + 1).raw;
        prop_assert!(later <= now + 1e-15);
        // Second term shrinks as lambda moves towards 1.
        let drift = |l: f64| lemma2_bound(eps, l, kappa, m).raw - (1.0 - (eps * l).powi(kappa as i32)).powf(m as f64);
        let closer = lambda + (1.0 - lambda) / 2.0;
        prop_assert!(drift(closer) <= drift(lambda) * (1.0 + 1e-12) + 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn bellman_is_a_gamma_contraction(game in small_game(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q1 = random_q(&game, &mut rng, 10.0);
        let q2 = random_q(&game, &mut rng, 10.0);
        let lhs = bellman_operator(&game, &q1).sup_dist(&bellman_operator(&game, &q2));
        let rhs = q1.sup_dist(&q2);
        prop_assert!(lhs <= (game.gamma() + 1e-12) * rhs, "{lhs} vs {rhs}");
    }
}

fn schedule_strategy() -> impl Strategy<Value = Schedule> {
    prop_oneof![
        (1.0f64..50.0).prop_map(|c| Schedule::harmonic(c).unwrap()),
        (0.0f64..0.5).prop_map(|b| Schedule::constant(b).unwrap()),
        prop::collection::vec(0.0f64..1.0, 2000).prop_map(|mut v| {
            v.sort_by(|a, b| b.total_cmp(a));
            Schedule::table(v).unwrap()
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn epoch_weight_algebra(schedule in schedule_strategy(), k in 0u64..15, length in 1usize..130) {
        let w = epoch_weights(&schedule, k, length).unwrap();
        prop_assert!((w.aggregate - w.aggregate_closed_form()).abs() <= 1e-12);
        let first = w.betas[0];
        let last = *w.betas.last().unwrap();
        let slack = 1e-12 * w.aggregate.abs().max(1.0);
        prop_assert!(last <= w.aggregate + slack);
        prop_assert!(w.aggregate <= length as f64 * first + slack);
    }

    #[test]
    fn harmonic_weights_non_decreasing_in_recency(c in 1.0f64..100.0, k in 0u64..1000, length in 1usize..200) {
        let w = epoch_weights(&Schedule::harmonic(c).unwrap(), k, length).unwrap();
        prop_assert!(weight_monotonicity_check(&w));
    }
}

#[test]
fn harmonic_accumulated_sums_diverge_with_bounded_squares() {
    let s = Schedule::harmonic(1.0).unwrap();
    let mut last = 0.0;
    for epochs in [10u64, 100, 1000, 10_000] {
        let acc = accumulated_sums(&s, 4, epochs).unwrap();
        assert!(acc.sum_aggregate > last + 1.0);
        assert!(acc.sum_aggregate_sq <= acc.square_envelope);
        // T^2 sum beta^2 <= T^2 pi^2 / 6.
        assert!(acc.square_envelope <= 16.0 * std::f64::consts::PI.powi(2) / 6.0);
        last = acc.sum_aggregate;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn runs_are_bounded_frictional_and_satisfy_the_epoch_identity(
        game in small_game(),
        c in 1.0f64..5.0,
        tau in 0.05f64..1.0,
        seed in any::<u64>(),
        length in prop::sample::select(vec![1usize, 4, 16]),
    ) {
        let schedule = Schedule::harmonic(c).unwrap();
        let mut cfg = RunConfig::new(schedule.clone(), tau, 400, seed);
        cfg.record_epochs = Some(length);
        let (_, traj) = run(&game, &cfg, None).unwrap();
        let log = traj.epochs.as_ref().unwrap();
        let bound = game.q_bound() + 1e-9;
        for q in &log.snapshots {
            prop_assert!(q.sup_norm() <= bound);
        }
        let mut prev: Option<&Vec<JointAction>> = None;
        for p in &log.profiles {
            if let Some(before) = prev {
                let changed = before.iter().zip(p).filter(|(a, b)| a != b).count();
                prop_assert!(changed <= 1);
            }
            prev = Some(p);
        }
        let q_star = solve_q_star(&game, 1e-12, 1_000_000).unwrap().q_star;
        for k in 0..log.complete_epochs() {
            let (snaps, profs) = log.epoch(k).unwrap();
            let r = verify_epoch_identity(&game, snaps, profs, &schedule, length, &q_star, k as u64).unwrap();
            prop_assert!(r <= 1e-9, "epoch {k}: {r}");
        }
        let (_, again) = run(&game, &cfg, None).unwrap();
        prop_assert_eq!(again, traj);
    }

    #[test]
    fn chains_are_stochastic_feasible_and_above_epsilon(game in small_game(), seed in any::<u64>(), tau in 0.1f64..2.0) {
        prop_assume!(game.num_states() as u32 * (game.num_joint_actions() as f64).log2().ceil() as u32 <= 14);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_q(&game, &mut rng, game.q_bound());
        let chain = build_extended_chain(&game, &q, tau).unwrap();
        let (eps, _) = epsilon_kappa(&game, q.sup_norm(), tau).unwrap();
        let space = chain.space;
        let joint = game.joint_space();
        for i in 0..chain.size() {
            prop_assert!((chain.matrix.row_sum(i) - 1.0).abs() <= 1e-12);
            let from = space.decode(i);
            let (cols, vals) = chain.matrix.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                prop_assert!(v >= eps * (1.0 - 1e-12));
                let to = space.decode(c);
                for s in 0..game.num_states() {
                    if s != from.state {
                        prop_assert_eq!(from.profiles[s], to.profiles[s]);
                    }
                }
                let a = joint.decode(from.profiles[from.state]);
                let b = joint.decode(to.profiles[from.state]);
                prop_assert!(a.iter().zip(&b).filter(|(x, y)| x != y).count() <= 1);
            }
        }
        let w = ExtendedState { state: 0, profiles: vec![JointAction(0); game.num_states()] };
        let row = transition_row(&game, &q, tau, &w);
        prop_assert!((row.iter().map(|e| e.prob).sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}
