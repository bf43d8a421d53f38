mod common;

use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uav_ddqn::dynamics::{self, Action, ActionSet, UavState};
use uav_ddqn::env::EnvConfig;
use uav_ddqn::missions::{compute_fov, MissionState};
use uav_ddqn::observation::{build_layers, center_map, compress_global, observe, ObsParams, Observation, Tensor3, CH_POSITION};
use uav_ddqn::qnet::checkpoint::{read_checkpoint, write_checkpoint};
use uav_ddqn::qnet::{run_recurrent, CoreKind, NetConfig, NetShape, QNetwork, ACTIONS};
use uav_ddqn::radio::has_los;
use uav_ddqn::trainer::{
    greedy_action, loss_and_gradient, run_training, select_action, soft_update, softmax_probabilities, Optimizer,
    OptimizerKind, Policy, ReplayBuffer, TrainerConfig, Transition,
};
use uav_ddqn::world::{load_map, save_map, Coord, ScenarioSpec};

const SHAPE: NetShape = NetShape {
    local_side: 5,
    global_side: 3,
    channels: 5,
};

fn small(core: CoreKind, attention: bool) -> NetConfig {
    NetConfig {
        core,
        attention,
        conv_layers: 2,
        kernel: 3,
        filters: 3,
        units: 4,
        hidden: 8,
        hidden_layers: 2,
    }
}

fn random_obs(rng: &mut ChaCha8Rng) -> Observation<f64> {
    let mut fill = |side: usize| {
        let mut t = Tensor3::zeros(side, side, 5);
        t.data.iter_mut().for_each(|v| *v = common::uniform(rng));
        t
    };
    Observation {
        local: fill(5),
        global: fill(3),
        battery_frac: 0.5,
    }
}

fn legal_set(bits: u8) -> ActionSet {
    // never empty: hover is always legal in the environment
    ActionSet::from_bits(bits | 1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn map_text_round_trip(size in 4usize..20, seed in any::<u64>()) {
        let map = common::random_map(size, seed);
        let text = save_map(&map);
        prop_assert_eq!(load_map(&text).unwrap(), map);
    }

    #[test]
    fn dynamics_respect_the_map(size in 4usize..14, seed in any::<u64>(), battery in 1u32..50, a in 0usize..6, cell in any::<prop::sample::Index>()) {
        let map = common::random_map(size, seed);
        let free: Vec<Coord> = map.coords().filter(|c| !map.cell(*c).no_occupy()).collect();
        let pos = free[cell.index(free.len())];
        let state = UavState::new(pos, battery);
        let action = Action::ALL[a];
        let legal = dynamics::legal_actions(&state, &map);
        prop_assert!(legal.contains(Action::Hover));
        prop_assert_eq!(legal.contains(Action::Land), map.cell(pos).is_landing());
        match dynamics::step(&state, action, &map) {
            Ok((next, flags)) => {
                prop_assert_eq!(next.battery, battery - 1);
                prop_assert!(map.contains(next.position));
                prop_assert!(!map.cell(next.position).no_occupy());
                prop_assert_eq!(flags.landed, action == Action::Land);
                prop_assert_eq!(next.operational, !flags.landed);
                prop_assert_eq!(flags.crashed, battery == 1 && !flags.landed);
                let (dx, dy) = action.delta();
                if flags.blocked {
                    prop_assert_eq!(next.position, pos);
                } else {
                    prop_assert_eq!(next.position, pos.offset(dx, dy));
                }
            }
            Err(_) => prop_assert!(!legal.contains(action)),
        }
    }

    #[test]
    fn los_and_fov_match_the_oracle(size in 4usize..12, seed in any::<u64>()) {
        let map = common::random_map(size, seed);
        let mut oracle = common::RayOracle::default();
        for a in map.coords() {
            for b in map.coords() {
                if a != b {
                    prop_assert_eq!(has_los(a, b, &map), oracle.los(&map, a, b));
                    prop_assert_eq!(has_los(a, b, &map), has_los(b, a, &map));
                }
            }
            let fov = compute_fov(a, &map).covered;
            prop_assert!(fov.contains(&a));
            prop_assert_eq!(fov, oracle.fov(&map, a));
        }
    }

    #[test]
    fn centered_uav_channel_sits_in_the_middle(size in 4usize..16, seed in any::<u64>(), cell in any::<prop::sample::Index>()) {
        let map = common::random_map(size, seed);
        let uav = map.coord(cell.index(size * size));
        let mission = MissionState::cpp_from_cells(&map, &[]);
        let centered: Tensor3<f64> = center_map(&build_layers(&map, &mission, uav, 1.0), uav);
        let mid = size - 1;
        prop_assert_eq!(centered.at(mid, mid, CH_POSITION), 1.0);
        prop_assert_eq!(centered.data.iter().skip(CH_POSITION).step_by(5).filter(|&&v| v == 1.0).count(), 1);
        // scale 1 compression is the identity
        prop_assert_eq!(compress_global(&centered, 1), centered.clone());
        let obs: Observation<f64> = observe(&map, &mission, &UavState::new(uav, 3), 6, &ObsParams { local_size: 3, global_scale: 2 }, 1.0);
        prop_assert_eq!(obs.local.at(1, 1, CH_POSITION), 1.0);
        prop_assert_eq!(obs.battery_frac, 0.5);
    }

    #[test]
    fn attention_weights_form_a_distribution(seed in any::<u64>(), core in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = QNetwork::<f64>::init(small(CoreKind::ALL[core], true), SHAPE, &mut rng).unwrap();
        let (_, cache) = net.forward_cached(&random_obs(&mut rng)).unwrap();
        let w = cache.pooling_weights().unwrap();
        prop_assert_eq!(w.len(), SHAPE.tokens());
        prop_assert!(w.iter().all(|&a| a > 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn masked_policies_never_pick_illegal_actions(bits in any::<u8>(), q in prop::array::uniform6(-5.0f64..5.0), seed in any::<u64>()) {
        let legal = legal_set(bits);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(legal.contains_index(greedy_action(&q, legal)));
        let p = softmax_probabilities(&q, legal, 0.5);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (k, &pk) in p.iter().enumerate() {
            if !legal.contains_index(k) {
                prop_assert_eq!(pk, 0.0);
            }
        }
        for policy in [Policy::Greedy, Policy::Softmax { temperature: 0.1 }, Policy::EpsilonGreedy { epsilon: 0.5 }] {
            for _ in 0..50 {
                prop_assert!(legal.contains_index(select_action(&q, legal, policy, &mut rng)));
            }
        }
    }

    #[test]
    fn soft_update_contracts(seed in any::<u64>(), eta in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let main = QNetwork::<f64>::init(small(CoreKind::Gru, true), SHAPE, &mut rng).unwrap().params;
        let mut target = QNetwork::<f64>::init(small(CoreKind::Gru, true), SHAPE, &mut rng).unwrap().params;
        let dist = |a: &uav_ddqn::qnet::Params<f64>, b: &uav_ddqn::qnet::Params<f64>| {
            a.values().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        };
        let before = dist(&target, &main);
        soft_update(&mut target, &main, eta).unwrap();
        let after = dist(&target, &main);
        prop_assert!((after - (1.0 - eta) * before).abs() <= 1e-9 * before.max(1.0));
    }

    #[test]
    fn recurrent_outputs_stay_bounded(seed in any::<u64>(), core in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = QNetwork::<f64>::init(small(CoreKind::ALL[core], false), SHAPE, &mut rng).unwrap();
        let len = 1000;
        let tokens: Vec<f64> = (0..len * net.token_width()).map(|_| rng.random_range(-50.0..50.0)).collect();
        let out = run_recurrent(&net, &tokens, len).unwrap();
        prop_assert_eq!(out.len(), len * net.sequence_width());
        prop_assert!(out.iter().all(|h| h.is_finite() && h.abs() <= 1.0));
    }
}

#[test]
fn replay_buffer_is_fifo() {
    let obs = Arc::new(random_obs(&mut ChaCha8Rng::seed_from_u64(0)));
    let mut buf = ReplayBuffer::new(10);
    for k in 0..25 {
        buf.push(Transition {
            obs: obs.clone(),
            action: k % 6,
            reward: k as f64,
            next_obs: obs.clone(),
            terminal: false,
            next_legal: ActionSet::FULL,
        });
    }
    assert_eq!(buf.len(), 10);
    let rewards: Vec<f64> = buf.iter().map(|t| t.reward).collect();
    assert_eq!(rewards, (15..25).map(f64::from).collect::<Vec<_>>());
}

#[test]
fn replay_sampling_is_uniform() {
    let obs = Arc::new(random_obs(&mut ChaCha8Rng::seed_from_u64(0)));
    let mut buf = ReplayBuffer::new(100);
    for _ in 0..100 {
        buf.push(Transition {
            obs: obs.clone(),
            action: 0,
            reward: 0.0,
            next_obs: obs.clone(),
            terminal: true,
            next_legal: ActionSet::FULL,
        });
    }
    let mut counts = [0u32; 100];
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    for _ in 0..1000 {
        for i in buf.sample_indices(100, &mut rng) {
            counts[i] += 1;
        }
    }
    let expected = 1000.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99 degrees of freedom, p = 0.001 critical value
    assert!(chi2 < 148.2, "chi-square {chi2}");
}

#[test]
fn masking_holds_over_a_million_selections() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut illegal = 0;
    for k in 0..1_000_000u32 {
        let legal = legal_set(rng.random());
        let q: [f64; ACTIONS] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
        let policy = match k % 3 {
            0 => Policy::Greedy,
            1 => Policy::Softmax { temperature: 0.2 },
            _ => Policy::EpsilonGreedy { epsilon: 0.3 },
        };
        if !legal.contains_index(select_action(&q, legal, policy, &mut rng)) {
            illegal += 1;
        }
    }
    assert_eq!(illegal, 0);
}

#[test]
fn softmax_with_tied_values_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 100_000;
    let mut counts = [0u32; ACTIONS];
    for _ in 0..n {
        counts[select_action(&[0.7; ACTIONS], ActionSet::FULL, Policy::Softmax { temperature: 0.1 }, &mut rng)] += 1;
    }
    let p = 1.0 / ACTIONS as f64;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
    }
}

fn table_net(q: [f64; ACTIONS]) -> QNetwork<f64> {
    let cfg = NetConfig {
        core: CoreKind::None,
        attention: false,
        conv_layers: 1,
        kernel: 1,
        filters: 1,
        units: 1,
        hidden: 1,
        hidden_layers: 0,
    };
    let mut net = QNetwork::<f64>::zeros(cfg, SHAPE).unwrap();
    let bias = net.params.tensors.iter_mut().find(|t| t.name == "q.bias").unwrap();
    bias.data.copy_from_slice(&q);
    net
}

#[test]
fn loss_vanishes_when_q_equals_the_target() {
    let obs = Arc::new(random_obs(&mut ChaCha8Rng::seed_from_u64(2)));
    let net = table_net([1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
    let t = Transition {
        obs: obs.clone(),
        action: 0,
        reward: 0.0,
        next_obs: obs,
        terminal: false,
        next_legal: ActionSet::FULL,
    };
    // Y = 0 + 0.5 * 2 = 1 = Q(s, 0)
    let mut grads = net.params.zeros_like();
    let loss = loss_and_gradient(&[&t], &net, &net, 0.5, &mut grads).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.values().all(|&g| g == 0.0));
}

#[test]
fn sgd_on_one_transition_reduces_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let obs = Arc::new(random_obs(&mut rng));
    let mut net = QNetwork::<f64>::init(small(CoreKind::Lstm, true), SHAPE, &mut rng).unwrap();
    let frozen = net.clone();
    let t = Transition {
        obs: obs.clone(),
        action: 3,
        reward: 2.0,
        next_obs: obs,
        terminal: true,
        next_legal: ActionSet::FULL,
    };
    let mut opt = Optimizer::new(OptimizerKind::Sgd, 1e-2, None);
    let mut grads = net.params.zeros_like();
    let mut last = f64::INFINITY;
    for _ in 0..30 {
        let loss = loss_and_gradient(&[&t], &net, &frozen, 0.95, &mut grads).unwrap();
        assert!(loss < last, "loss went up: {last} -> {loss}");
        last = loss;
        opt.apply(&mut net.params, &mut grads);
    }
}

#[test]
fn training_is_deterministic() {
    let map = uav_ddqn::world::EnvironmentMap::open(6, &[Coord::new(0, 0)]).unwrap();
    let env = EnvConfig {
        obs: ObsParams {
            local_size: 5,
            global_scale: 3,
        },
        ..EnvConfig::new(
            map,
            ScenarioSpec {
                movement_budget: [10, 20],
                cpp_target_count: Some(6),
                ..Default::default()
            },
        )
    };
    let cfg = TrainerConfig {
        batch_size: 8,
        total_steps: 300,
        log_interval: 100,
        log_eval_episodes: 2,
        ..Default::default()
    };
    let a = run_training::<f64>(&env, small(CoreKind::BiGru, true), &cfg, 5, |_| {}).unwrap();
    let b = run_training::<f64>(&env, small(CoreKind::BiGru, true), &cfg, 5, |_| {}).unwrap();
    assert_eq!(a.net.params, b.net.params);
    assert_eq!(a.log, b.log);
    let c = run_training::<f64>(&env, small(CoreKind::BiGru, true), &cfg, 6, |_| {}).unwrap();
    assert_ne!(a.net.params, c.net.params);
}

#[test]
fn tied_bidirectional_core_is_symmetric_on_palindromes() {
    for core in [CoreKind::BiLstm, CoreKind::BiGru] {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = QNetwork::<f64>::init(small(core, true), SHAPE, &mut rng).unwrap();
        // copy every forward-direction tensor onto its backward twin
        let fwd: Vec<(String, Vec<f64>)> = net
            .params
            .tensors
            .iter()
            .filter(|t| t.name.contains(".fwd."))
            .map(|t| (t.name.replace(".fwd.", ".bwd."), t.data.clone()))
            .collect();
        assert!(!fwd.is_empty());
        for (name, data) in fwd {
            net.params.tensors.iter_mut().find(|t| t.name == name).unwrap().data = data;
        }
        let w = net.token_width();
        let len = 7;
        let half: Vec<Vec<f64>> = (0..4).map(|_| (0..w).map(|_| common::uniform(&mut rng)).collect()).collect();
        let tokens: Vec<f64> = (0..len).flat_map(|t| half[t.min(len - 1 - t)].clone()).collect();
        let out = run_recurrent(&net, &tokens, len).unwrap();
        let n = net.config().units;
        for t in 0..len {
            let f = &out[t * 2 * n..t * 2 * n + n];
            let b = &out[(len - 1 - t) * 2 * n + n..(len - 1 - t) * 2 * n + 2 * n];
            for (x, y) in f.iter().zip(b) {
                assert!((x - y).abs() < 1e-12, "{core}: position {t}");
            }
        }
    }
}

#[test]
fn recurrence_is_order_sensitive_and_none_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let none = QNetwork::<f64>::init(small(CoreKind::None, true), SHAPE, &mut rng).unwrap();
    let lstm = QNetwork::<f64>::init(small(CoreKind::Lstm, true), SHAPE, &mut rng).unwrap();
    let w = lstm.token_width();
    let tokens: Vec<f64> = (0..5 * w).map(|_| common::uniform(&mut rng)).collect();
    assert_eq!(run_recurrent(&none, &tokens, 5).unwrap(), tokens);
    let mut swapped = tokens.clone();
    swapped[..w].copy_from_slice(&tokens[w..2 * w]);
    swapped[w..2 * w].copy_from_slice(&tokens[..w]);
    let a = run_recurrent(&lstm, &tokens, 5).unwrap();
    let b = run_recurrent(&lstm, &swapped, 5).unwrap();
    let n = lstm.config().units;
    assert_ne!(a[4 * n..], b[4 * n..]);
}

#[test]
fn checkpoint_bytes_are_stable() {
    for core in CoreKind::ALL {
        let net = QNetwork::<f64>::init(small(core, core != CoreKind::Gru), SHAPE, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut first = Vec::new();
        write_checkpoint(&mut first, &net, 42, serde_json::json!({"note": "x"})).unwrap();
        let (header, back) = read_checkpoint::<f64, _>(&mut first.as_slice()).unwrap();
        assert_eq!(header.seed, 42);
        assert_eq!(back.params, net.params);
        let mut second = Vec::new();
        write_checkpoint(&mut second, &back, 42, header.meta).unwrap();
        assert_eq!(first, second);
    }
}
