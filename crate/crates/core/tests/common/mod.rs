//! Independent oracles shared by the integration tests.
//!
//! Nothing here calls the library's geometry or centering code; the oracles
//! are written from the definitions so that the suites compare two
//! independent implementations.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uav_ddqn::world::{Cell, Coord, EnvironmentMap};

/// Random map with every cell kind and at least one landing cell, drawn with
/// the test's own generator (independent of `generate_map`).
pub fn random_map(size: usize, seed: u64) -> EnvironmentMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_0ac1e);
    let mut cells = vec![Cell::Free; size * size];
    for c in cells.iter_mut() {
        let r: f64 = rng.random();
        *c = match r {
            r if r < 0.12 => Cell::TallBuilding,
            r if r < 0.22 => Cell::SmallBuilding,
            r if r < 0.30 => Cell::NoFly,
            r if r < 0.34 => Cell::Landing,
            _ => Cell::Free,
        };
    }
    let k = rng.random_range(0..size * size);
    cells[k] = Cell::Landing;
    EnvironmentMap::new(size, 10.0, 25.0, cells).expect("oracle map is valid")
}

/// Cells crossed with positive length by the segment between the centers of
/// `(0,0)` and `(dx,dy)`, endpoints excluded, as offsets from the start cell.
///
/// Samples sit at `t = i/n` with odd `n = 2|dx||dy| + 2|dx| + 2|dy| + 1`. In
/// units of `1/(2n)` the x coordinate is `n + 2 i dx`, which is odd, so no
/// sample ever lies on a grid line. Breakpoints of the segment are at least
/// `1/(2|dx||dy|)` apart in `t` (or `1/(2|dx|)` on an axis), which exceeds the
/// sample spacing `1/n`, so every cell crossed with positive length is hit.
pub fn sampled_offsets(dx: i64, dy: i64) -> Vec<(i64, i64)> {
    let n = 2 * dx.abs() * dy.abs() + 2 * dx.abs() + 2 * dy.abs() + 1;
    let mut seen = BTreeSet::new();
    for i in 0..=n {
        let px = n + 2 * i * dx;
        let py = n + 2 * i * dy;
        let cell = (px.div_euclid(2 * n), py.div_euclid(2 * n));
        if cell != (0, 0) && cell != (dx, dy) {
            seen.insert(cell);
        }
    }
    seen.into_iter().collect()
}

/// Memoizes [`sampled_offsets`]; the crossed set only depends on the offset.
#[derive(Default)]
pub struct RayOracle {
    cache: HashMap<(i64, i64), Vec<(i64, i64)>>,
}

impl RayOracle {
    pub fn clear(&mut self, map: &EnvironmentMap, a: Coord, b: Coord, blocks: impl Fn(Cell) -> bool) -> bool {
        let key = ((b.x - a.x) as i64, (b.y - a.y) as i64);
        let cells = self.cache.entry(key).or_insert_with(|| sampled_offsets(key.0, key.1));
        cells.iter().all(|&(ox, oy)| {
            let c = Coord::new(a.x + ox as i32, a.y + oy as i32);
            !blocks(map.cell(c))
        })
    }

    /// Line of sight for radio: tall or small buildings block.
    pub fn los(&mut self, map: &EnvironmentMap, a: Coord, b: Coord) -> bool {
        self.clear(map, a, b, |c| matches!(c, Cell::TallBuilding | Cell::SmallBuilding))
    }

    /// Camera footprint: clipped 5×5 window, only tall buildings occlude.
    pub fn fov(&mut self, map: &EnvironmentMap, u: Coord) -> Vec<Coord> {
        let g = map.size() as i32;
        let mut out = Vec::new();
        for dy in -2..=2 {
            for dx in -2..=2 {
                let c = Coord::new(u.x + dx, u.y + dy);
                if c.x >= 0 && c.y >= 0 && c.x < g && c.y < g && self.clear(map, u, c, |k| k == Cell::TallBuilding) {
                    out.push(c);
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Padding of the five observation channels outside the map:
/// landing, no-occupy, radio-blocking, target, position.
pub const PAD: [f64; 5] = [0.0, 1.0, 1.0, 0.0, 0.0];

/// Centered `(2G-1)²×5` array from the direct index formula, as nested vectors
/// `[i][j][channel]`, given the uncentered stack `layers[x][y][channel]`.
pub fn centered_oracle(layers: &[Vec<[f64; 5]>], uav: (usize, usize)) -> Vec<Vec<[f64; 5]>> {
    let g = layers.len() as i64;
    let side = (2 * g - 1) as usize;
    let mut out = vec![vec![PAD; side]; side];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, px) in row.iter_mut().enumerate() {
            let x = i as i64 - (g - 1) + uav.0 as i64;
            let y = j as i64 - (g - 1) + uav.1 as i64;
            if (0..g).contains(&x) && (0..g).contains(&y) {
                *px = layers[x as usize][y as usize];
            }
        }
    }
    out
}

/// Small random float in `[-1, 1)` with a fixed generator; used to fill tables.
pub fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-1.0..1.0)
}
