//! Built-in oracle suites run by `selfcheck`: line of sight and camera
//! footprint against dense segment sampling, map centering against the
//! index formula, network gradients against central differences, and the
//! double-Q target on hand-built networks.

use std::sync::Arc;

use rand::Rng;

use crate::dynamics::ActionSet;
use crate::missions::{compute_fov, MissionState, FOV_RADIUS};
use crate::observation::{build_layers, center_map, Observation, Tensor3, CHANNELS, PAD};
use crate::qnet::{CoreKind, NetConfig, NetShape, QNetwork, ACTIONS};
use crate::radio::has_los;
use crate::rng::{rng_from_seed, stream, Purpose};
use crate::trainer::{ddqn_target, soft_update, Transition};
use crate::world::{generate_map, Cell, Coord, EnvironmentMap, MapGenSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub fn run_all() -> Vec<CheckResult> {
    vec![line_of_sight(20), centering(50), gradients(), double_q()]
}

/// Cells other than the endpoints that the center-to-center segment passes
/// through, by sampling it densely with exact integer arithmetic.
pub fn sampled_cells(a: Coord, b: Coord) -> Vec<Coord> {
    let (dx, dy) = ((b.x - a.x) as i64, (b.y - a.y) as i64);
    let n = 4 * (dx.abs() + 1) * (dy.abs() + 1);
    let mut out = Vec::new();
    for i in 0..n {
        // t = (2i+1)/(2n); coordinate·2n = (2a+1)·n + d·(2i+1)
        let xs = (2 * a.x as i64 + 1) * n + dx * (2 * i + 1);
        let ys = (2 * a.y as i64 + 1) * n + dy * (2 * i + 1);
        if xs % (2 * n) == 0 || ys % (2 * n) == 0 {
            continue;
        }
        let c = Coord::new(xs.div_euclid(2 * n) as i32, ys.div_euclid(2 * n) as i32);
        if c != a && c != b && out.last() != Some(&c) {
            out.push(c);
        }
    }
    out
}

fn random_map(seed: u64) -> EnvironmentMap {
    generate_map(&MapGenSpec {
        size: 16,
        nfz_zones: 3,
        tall_buildings: 6,
        small_buildings: 6,
        seed,
        ..Default::default()
    })
    .expect("generated map")
}

pub fn line_of_sight(maps: u64) -> CheckResult {
    let mut mismatches = 0u64;
    let mut checked = 0u64;
    for m in 0..maps {
        let map = random_map(0x5E1F_0000 + m);
        let coords: Vec<Coord> = map.coords().collect();
        let mut rng = stream(m, Purpose::Eval, 0);
        for _ in 0..300 {
            let a = coords[rng.random_range(0..coords.len())];
            let b = coords[rng.random_range(0..coords.len())];
            let oracle = a == b || sampled_cells(a, b).iter().all(|&c| !map.cell(c).blocks_radio());
            checked += 1;
            mismatches += (oracle != has_los(a, b, &map)) as u64;
        }
        for &u in &coords {
            let mut want = Vec::new();
            for dy in -FOV_RADIUS..=FOV_RADIUS {
                for dx in -FOV_RADIUS..=FOV_RADIUS {
                    let c = u.offset(dx, dy);
                    if map.contains(c) && sampled_cells(u, c).iter().all(|&k| map.cell(k) != Cell::TallBuilding) {
                        want.push(c);
                    }
                }
            }
            want.sort_unstable();
            checked += 1;
            mismatches += (want != compute_fov(u, &map).covered) as u64;
        }
    }
    CheckResult {
        name: "line of sight and field of view",
        passed: mismatches == 0,
        detail: format!("{mismatches} mismatches in {checked} checks"),
    }
}

pub fn centering(cases: u64) -> CheckResult {
    let mut mismatches = 0;
    for k in 0..cases {
        let map = random_map(0xCE_0000 + k);
        let g = map.size() as i64;
        let mut rng = stream(k, Purpose::Eval, 1);
        let u = Coord::new(rng.random_range(0..g as i32), rng.random_range(0..g as i32));
        let mission = MissionState::cpp_from_cells(&map, &[Coord::new(3, 3)]);
        let layers: Tensor3<f64> = build_layers(&map, &mission, u, 1.0);
        let centered = center_map(&layers, u);
        for i in 0..2 * g - 1 {
            for j in 0..2 * g - 1 {
                let (x, y) = (i - (g - 1) + u.x as i64, j - (g - 1) + u.y as i64);
                let want: Vec<f64> = if (0..g).contains(&x) && (0..g).contains(&y) {
                    layers.pixel(x as usize, y as usize).to_vec()
                } else {
                    PAD.to_vec()
                };
                if centered.pixel(i as usize, j as usize) != &want[..] {
                    mismatches += 1;
                }
            }
        }
    }
    CheckResult {
        name: "map centering",
        passed: mismatches == 0,
        detail: format!("{mismatches} mismatched pixels over {cases} maps"),
    }
}

fn tiny_shape() -> NetShape {
    NetShape {
        local_side: 5,
        global_side: 3,
        channels: CHANNELS,
    }
}

fn random_obs(shape: &NetShape, rng: &mut impl Rng) -> Observation<f64> {
    let mut fill = |side: usize| {
        let mut t = Tensor3::zeros(side, side, shape.channels);
        t.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        t
    };
    Observation {
        local: fill(shape.local_side),
        global: fill(shape.global_side),
        battery_frac: 0.5,
    }
}

/// Largest relative error between analytic and central-difference gradients.
pub fn gradient_error(core: CoreKind, attention: bool, seed: u64) -> f64 {
    let cfg = NetConfig {
        core,
        attention,
        conv_layers: 2,
        kernel: 3,
        filters: 2,
        units: 3,
        hidden: 4,
        hidden_layers: 2,
    };
    let shape = tiny_shape();
    let mut rng = rng_from_seed(seed);
    let mut net = QNetwork::<f64>::init(cfg, shape, &mut rng).expect("valid config");
    for v in net.params.values_mut() {
        *v += rng.random_range(-0.05..0.05);
    }
    let obs = random_obs(&shape, &mut rng);
    let d_q: [f64; ACTIONS] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let (grads, _) = net.gradient(&obs, &d_q).expect("shapes match");
    let f = |n: &QNetwork<f64>| -> f64 { n.forward(&obs).unwrap().iter().zip(&d_q).map(|(a, b)| a * b).sum() };
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for ti in 0..net.params.tensors.len() {
        for k in 0..net.params.tensors[ti].data.len() {
            let orig = net.params.tensors[ti].data[k];
            net.params.tensors[ti].data[k] = orig + eps;
            let up = f(&net);
            net.params.tensors[ti].data[k] = orig - eps;
            let down = f(&net);
            net.params.tensors[ti].data[k] = orig;
            let fd = (up - down) / (2.0 * eps);
            let an = grads.tensors[ti].data[k];
            let diff = (fd - an).abs();
            if diff > 1e-9 {
                worst = worst.max(diff / fd.abs().max(an.abs()));
            }
        }
    }
    worst
}

pub fn gradients() -> CheckResult {
    let mut worst: f64 = 0.0;
    for core in CoreKind::ALL {
        for attention in [false, true] {
            worst = worst.max(gradient_error(core, attention, 7));
        }
    }
    CheckResult {
        name: "network gradients",
        passed: worst < 1e-4,
        detail: format!("worst relative error {worst:.3e}"),
    }
}

/// Network whose output is the constant `q` for every input.
pub fn constant_network(q: [f64; ACTIONS]) -> QNetwork<f64> {
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
    let mut net = QNetwork::<f64>::zeros(cfg, tiny_shape()).expect("valid config");
    let bias = net.params.tensors.iter_mut().find(|t| t.name == "q.bias").expect("output bias");
    bias.data.copy_from_slice(&q);
    net
}

pub fn double_q() -> CheckResult {
    let obs = Arc::new(random_obs(&tiny_shape(), &mut rng_from_seed(1)));
    let t = Transition {
        obs: obs.clone(),
        action: 0,
        reward: 1.0,
        next_obs: obs,
        terminal: false,
        next_legal: ActionSet::FULL,
    };
    // main prefers action 2, target prefers action 4
    let main = constant_network([0.0, 0.0, 3.0, 0.0, 1.0, 0.0]);
    let target = constant_network([0.0, 0.0, 2.0, 0.0, 9.0, 0.0]);
    let y = ddqn_target(&[&t], &main, &target, 0.9).expect("shapes match")[0];
    let terminal = Transition {
        terminal: true,
        reward: -5.0,
        ..t.clone()
    };
    let y_term = ddqn_target(&[&terminal], &main, &target, 0.9).expect("shapes match")[0];

    let mut tgt = target.params.clone();
    soft_update(&mut tgt, &main.params, 1.0).expect("same layout");
    let full = tgt == main.params;
    let mut tgt = target.params.clone();
    soft_update(&mut tgt, &main.params, 0.0).expect("same layout");
    let none = tgt == target.params;

    let passed = y == 1.0 + 0.9 * 2.0 && y_term == -5.0 && full && none;
    CheckResult {
        name: "double-Q target and soft update",
        passed,
        detail: format!("Y = {y}, terminal Y = {y_term}, eta=1 copies: {full}, eta=0 keeps: {none}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_cells_examples() {
        assert!(sampled_cells(Coord::new(0, 0), Coord::new(1, 0)).is_empty());
        assert_eq!(
            sampled_cells(Coord::new(0, 0), Coord::new(3, 3)),
            vec![Coord::new(1, 1), Coord::new(2, 2)]
        );
    }

    #[test]
    fn all_checks_pass() {
        for r in [line_of_sight(3), centering(5), gradients(), double_q()] {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
