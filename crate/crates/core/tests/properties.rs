//! Invariants checked on generated inputs.

use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use attune_core::autodiff::{Activation, Mlp, Optimizer, Tape};
use attune_core::baselines::{BayesConfig, BayesOpt};
use attune_core::domain::{Action, Dims, HiddenInfo, InteractionTuple, ReplayBuffer, Signal, State};
use attune_core::env::HighwayPolicy;
use attune_core::env::{EnvKind, Episode};
use attune_core::harness::{aggregate, grid_cells, mann_whitney_less, moving_average, run_grid, ExperimentConfig, Pairing};
use attune_core::human::HumanStructure;
use attune_core::learning::NetSizes;
use attune_core::session::{Algorithm, Session, SessionConfig};

fn unit() -> impl Strategy<Value = f64> {
    -1.0f64..1.0
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(unit(), rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

/// `sum(tanh(x W + b) ⊙ sigmoid(x W + b))` and its gradient in `W`.
fn probe(x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> (f64, Array2<f64>) {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.param(w.clone());
    let bv = tape.param(b.clone());
    let z = tape.matmul(xv, wv).unwrap();
    let z = tape.add_row(z, bv).unwrap();
    let t = tape.tanh(z);
    let s = tape.sigmoid(z);
    let m = tape.mul(t, s).unwrap();
    let out = tape.sum(m);
    tape.backward(out).unwrap();
    (tape.scalar(out), tape.grad(wv).unwrap().clone())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tape_gradients_match_central_differences(x in matrix(3, 4), w in matrix(4, 2), b in matrix(1, 2)) {
        let (_, g) = probe(&x, &w, &b);
        let h = 1e-6;
        for i in 0..4 {
            for j in 0..2 {
                let (mut up, mut down) = (w.clone(), w.clone());
                up[[i, j]] += h;
                down[[i, j]] -= h;
                let fd = (probe(&x, &up, &b).0 - probe(&x, &down, &b).0) / (2.0 * h);
                prop_assert!((fd - g[[i, j]]).abs() <= 1e-4 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn tape_is_bit_deterministic(x in matrix(2, 4), w in matrix(4, 2), b in matrix(1, 2)) {
        let (v1, g1) = probe(&x, &w, &b);
        let (v2, g2) = probe(&x, &w, &b);
        prop_assert_eq!(v1.to_bits(), v2.to_bits());
        prop_assert_eq!(g1, g2);
    }

    #[test]
    fn adam_leaves_parameters_alone_without_gradient(seed in any::<u64>(), steps in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::new("probe", &[3, 4, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let before = net.flat_params();
        let mut opt = Optimizer::adam(1e-3).unwrap();
        for _ in 0..steps {
            net.zero_grad();
            opt.step(&mut net).unwrap();
        }
        prop_assert_eq!(net.flat_params(), before);
    }

    #[test]
    fn buffer_keeps_the_newest_tuples_in_order(capacity in 1usize..20, pushes in 0usize..60) {
        let dims = Dims { state: 1, action: 1, signal: 1, theta: 1 };
        let mut buf = ReplayBuffer::new(capacity, dims).unwrap();
        for i in 0..pushes {
            buf.push(InteractionTuple {
                s: State(vec![i as f64]),
                a: Action(vec![0.0]),
                x: Signal(vec![0.0]),
                theta: HiddenInfo(vec![0.0]),
                interaction: i,
                t: 0,
            })
            .unwrap();
            prop_assert!(buf.len() <= capacity);
        }
        let kept: Vec<usize> = buf.iter().map(|t| t.interaction).collect();
        let want: Vec<usize> = (pushes.saturating_sub(capacity)..pushes).collect();
        prop_assert_eq!(kept, want);
    }

    #[test]
    fn treasure_oracle_reaches_every_treasure(n in 2usize..6, seed in any::<u64>()) {
        let env = EnvKind::Treasure { n }.build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s0, theta) = env.reset(&mut rng);
        let mut ep = Episode::new(s0, theta.clone());
        for _ in 0..env.horizon() {
            let s = ep.current_state().clone();
            let a = env.optimal_action(&s, &theta).unwrap();
            prop_assert!(a.0.iter().all(|v| v.abs() <= env.action_bound()));
            let next = env.step(&s, &a, &theta).unwrap().next;
            ep.actions.push(a);
            ep.states.push(next);
        }
        prop_assert!(env.metric(&ep).unwrap() < 1e-18);
    }

    #[test]
    fn transitions_are_pure(seed in any::<u64>(), a in -5.0f64..5.0, highway in any::<bool>()) {
        let kind = if highway { EnvKind::Highway } else { EnvKind::Treasure { n: 2 } };
        let env = kind.build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, theta) = env.reset(&mut rng);
        let action = Action(vec![a; env.dims().action]);
        let first = env.step(&s, &action, &theta).unwrap();
        let second = env.step(&s, &action, &theta).unwrap();
        prop_assert_eq!(first.next, second.next);
    }

    #[test]
    fn highway_robot_depends_only_on_style_and_previous_lane(prev in 0u8..2, i in 0usize..4) {
        let p = HighwayPolicy::ALL[i];
        let lane = p.robot_lane(prev);
        prop_assert!(lane <= 1);
        prop_assert_eq!(lane, p.robot_lane(prev));
        let negated = HighwayPolicy::from_code(-p.theta()).unwrap();
        prop_assert!(HighwayPolicy::ALL.contains(&negated));
    }

    #[test]
    fn bayes_stays_in_the_box_and_best_only_improves(
        seed in any::<u64>(),
        rewards in prop::collection::vec(-50.0f64..0.0, 1..14),
    ) {
        let mut opt = BayesOpt::new(3, BayesConfig { restarts: 3, local_steps: 6, ..BayesConfig::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best = f64::NEG_INFINITY;
        for r in rewards {
            let p = opt.propose(&mut rng);
            prop_assert!(p.iter().all(|v| v.abs() <= 1.0));
            opt.observe(&p, r).unwrap();
            let now = opt.best().unwrap().1;
            prop_assert!(now >= best);
            best = now;
        }
    }

    #[test]
    fn rotation_never_pairs_an_algorithm_with_its_own_structure(seed in any::<u64>(), i in 0usize..6) {
        let alg = Algorithm::ALL[i];
        let s = Pairing::Rotate.structure_for(alg, seed).unwrap();
        prop_assert!(s.is_some());
        prop_assert_ne!(s, alg.structure());
        for structure in HumanStructure::ALL {
            let fixed = Pairing::Fixed(structure).structure_for(alg, seed);
            prop_assert_eq!(fixed.is_err(), Some(structure) == alg.structure());
        }
    }

    #[test]
    fn rank_sum_p_is_a_probability(
        a in prop::collection::vec(-10.0f64..10.0, 3..9),
        b in prop::collection::vec(-10.0f64..10.0, 3..9),
    ) {
        let (_, p) = mann_whitney_less(&a, &b).unwrap();
        let (_, q) = mann_whitney_less(&b, &a).unwrap();
        prop_assert!(p > 0.0 && p <= 1.0);
        // P(U <= u) + P(U >= u) = 1 + P(U = u)
        prop_assert!(p + q >= 1.0 - 1e-9);
    }

    #[test]
    fn moving_average_of_a_constant_is_that_constant(c in -5.0f64..5.0, n in 1usize..40, w in 1usize..10) {
        for v in moving_average(&vec![c; n], w) {
            prop_assert!((v - c).abs() < 1e-12);
        }
    }

    #[test]
    fn applied_actions_keep_the_state_in_bounds(
        seed in 0u64..1000,
        actions in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 2), 10),
    ) {
        let cfg = SessionConfig {
            env: EnvKind::Treasure { n: 2 },
            algorithm: Algorithm::Bayes,
            ..SessionConfig::default()
        };
        let mut s = Session::new(cfg, seed).unwrap();
        s.begin().unwrap();
        for a in actions {
            let r = s.step(&Action(a.clone())).unwrap();
            prop_assert_eq!(r.clamped, a.iter().any(|v| v.abs() > 2.0));
            prop_assert!(r.state.0.iter().all(|v| v.abs() <= 10.0));
            prop_assert_eq!(r.theta.is_some(), r.done);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn seed_execution_order_does_not_change_records(seeds in prop::collection::btree_set(0u64..100, 2..4), rot in 0usize..4) {
        let mut cfg = ExperimentConfig {
            env: EnvKind::Treasure { n: 2 },
            algorithms: vec![Algorithm::OursC, Algorithm::Bayes],
            seeds: seeds.into_iter().collect(),
            interactions: 3,
            last_window: 2,
            ..ExperimentConfig::default()
        };
        cfg.learner.sizes = NetSizes { policy: vec![6], human_model: vec![6], decoder: vec![6] };
        cfg.learner.minibatch_steps = 2;
        cfg.human.pretrain_episodes = 4;
        let cells = grid_cells(&cfg);
        let mut shuffled = cells.clone();
        shuffled.rotate_left(rot % cells.len());
        shuffled.reverse();
        let strip = |mut r: attune_core::harness::RunRecord| { r.wall_clock_secs = 0.0; r };
        let mut a: Vec<_> = run_grid(&cfg, &cells, 1, &|_| Ok(())).unwrap().into_iter().map(strip).collect();
        let mut b: Vec<_> = run_grid(&cfg, &shuffled, 2, &|_| Ok(())).unwrap().into_iter().map(strip).collect();
        a.sort_by_key(|r| (r.algorithm, r.seed));
        b.sort_by_key(|r| (r.algorithm, r.seed));
        prop_assert_eq!(&a, &b);
        let s1 = aggregate(&a, cfg.last_window, cfg.smoothing_window).unwrap();
        let s2 = aggregate(&b, cfg.last_window, cfg.smoothing_window).unwrap();
        prop_assert_eq!(s1, s2);
    }
}
