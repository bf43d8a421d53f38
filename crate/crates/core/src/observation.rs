//! Agent-centered map stacks and the battery scalar fed to the Q-network.
//!
//! Layer channels, in order: landing, no-occupy, radio-blocking, target,
//! UAV one-hot. Array index `(i, j)` maps to cell `(x, y)`. Only the target
//! layer of a mission is read here, never its device list.

use serde::{Deserialize, Serialize};

use crate::dynamics::UavState;
use crate::missions::MissionState;
use crate::scalar::Scalar;
use crate::world::{Coord, EnvironmentMap};

pub const CHANNELS: usize = 5;
pub const CH_LANDING: usize = 0;
pub const CH_NO_OCCUPY: usize = 1;
pub const CH_RADIO_BLOCK: usize = 2;
pub const CH_TARGET: usize = 3;
pub const CH_POSITION: usize = 4;

/// Value read for cells outside the world: unflyable, radio-blocking, empty.
pub const PAD: [f64; CHANNELS] = [0.0, 1.0, 1.0, 0.0, 0.0];

/// Dense `rows × cols × channels` array, channels innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3<T> {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor3<T> {
    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        Self {
            rows,
            cols,
            channels,
            data: vec![T::zero(); rows * cols * channels],
        }
    }

    pub fn filled_with_pad(rows: usize, cols: usize) -> Self {
        let mut t = Self::zeros(rows, cols, CHANNELS);
        for px in t.data.chunks_exact_mut(CHANNELS) {
            for (v, &p) in px.iter_mut().zip(PAD.iter()) {
                *v = T::of(p);
            }
        }
        t
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, c: usize) -> usize {
        (i * self.cols + j) * self.channels + c
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, c: usize) -> T {
        self.data[self.idx(i, j, c)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, c: usize, v: T) {
        let k = self.idx(i, j, c);
        self.data[k] = v;
    }

    pub fn pixel(&self, i: usize, j: usize) -> &[T] {
        let k = self.idx(i, j, 0);
        &self.data[k..k + self.channels]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.channels)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObsParams {
    /// Side of the uncompressed local crop; odd.
    pub local_size: usize,
    /// Average-pooling factor of the global view.
    pub global_scale: usize,
}

impl Default for ObsParams {
    fn default() -> Self {
        Self {
            local_size: 17,
            global_scale: 5,
        }
    }
}

impl ObsParams {
    pub fn validate(&self, grid: usize) -> Result<(), String> {
        if self.local_size % 2 == 0 {
            return Err(format!("local_size must be odd, got {}", self.local_size));
        }
        if self.local_size > 2 * grid - 1 {
            return Err(format!(
                "local_size {} exceeds the centered map side {}",
                self.local_size,
                2 * grid - 1
            ));
        }
        if self.global_scale == 0 {
            return Err("global_scale must be positive".into());
        }
        Ok(())
    }

    /// Side of the pooled global view for grid size `grid`.
    pub fn global_side(&self, grid: usize) -> usize {
        (2 * grid - 1).div_ceil(self.global_scale)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation<T> {
    pub local: Tensor3<T>,
    pub global: Tensor3<T>,
    /// Remaining battery over the initial budget.
    pub battery_frac: T,
}

/// G×G×5 layer stack of the current state. Target values are divided by `target_scale`.
pub fn build_layers<T: Scalar>(map: &EnvironmentMap, mission: &MissionState, uav: Coord, target_scale: f64) -> Tensor3<T> {
    let g = map.size();
    let mut t = Tensor3::zeros(g, g, CHANNELS);
    let inv = 1.0 / target_scale;
    for c in map.coords() {
        let cell = map.cell(c);
        let (i, j) = (c.x as usize, c.y as usize);
        let flag = |b: bool| if b { T::one() } else { T::zero() };
        t.set(i, j, CH_LANDING, flag(cell.is_landing()));
        t.set(i, j, CH_NO_OCCUPY, flag(cell.no_occupy()));
        t.set(i, j, CH_RADIO_BLOCK, flag(cell.blocks_radio()));
        t.set(i, j, CH_TARGET, T::of(mission.target(c) * inv));
        t.set(i, j, CH_POSITION, flag(c == uav));
    }
    t
}

/// Re-indexes `layers` so the UAV cell sits at `(G-1, G-1)` of a `(2G-1)²` array.
pub fn center_map<T: Scalar>(layers: &Tensor3<T>, uav: Coord) -> Tensor3<T> {
    let g = layers.rows;
    let side = 2 * g - 1;
    let mut out = Tensor3::filled_with_pad(side, side);
    let (ux, uy) = (uav.x as usize, uav.y as usize);
    // out(i, j) = in(i - (g-1) + ux, j - (g-1) + uy)
    for x in 0..g {
        let i = x + g - 1 - ux;
        for y in 0..g {
            let j = y + g - 1 - uy;
            let src = layers.idx(x, y, 0);
            let dst = out.idx(i, j, 0);
            out.data[dst..dst + layers.channels].copy_from_slice(&layers.data[src..src + layers.channels]);
        }
    }
    out
}

/// Pads with [`PAD`] to a multiple of `scale`, then averages `scale×scale` blocks.
pub fn compress_global<T: Scalar>(centered: &Tensor3<T>, scale: usize) -> Tensor3<T> {
    assert!(scale >= 1, "global scale must be positive");
    let side = centered.rows;
    let out_side = side.div_ceil(scale);
    let ch = centered.channels;
    let mut out = Tensor3::zeros(out_side, out_side, ch);
    let norm = T::one() / T::of((scale * scale) as f64);
    for oi in 0..out_side {
        for oj in 0..out_side {
            for di in 0..scale {
                for dj in 0..scale {
                    let (i, j) = (oi * scale + di, oj * scale + dj);
                    for c in 0..ch {
                        let v = if i < side && j < side {
                            centered.at(i, j, c)
                        } else {
                            T::of(PAD[c])
                        };
                        let k = out.idx(oi, oj, c);
                        out.data[k] += v;
                    }
                }
            }
        }
    }
    for v in &mut out.data {
        *v *= norm;
    }
    out
}

/// The `size×size` window around the center of a centered stack.
pub fn crop_local<T: Scalar>(centered: &Tensor3<T>, size: usize) -> Tensor3<T> {
    assert!(size % 2 == 1 && size <= centered.rows, "local crop must be odd and fit the centered map");
    let center = centered.rows / 2;
    let start = center - size / 2;
    let ch = centered.channels;
    let mut out = Tensor3::zeros(size, size, ch);
    for i in 0..size {
        for j in 0..size {
            let src = centered.idx(start + i, start + j, 0);
            let dst = out.idx(i, j, 0);
            out.data[dst..dst + ch].copy_from_slice(&centered.data[src..src + ch]);
        }
    }
    out
}

pub fn observe<T: Scalar>(
    map: &EnvironmentMap,
    mission: &MissionState,
    uav: &UavState,
    initial_budget: u32,
    params: &ObsParams,
    target_scale: f64,
) -> Observation<T> {
    let layers = build_layers(map, mission, uav.position, target_scale);
    let centered = center_map(&layers, uav.position);
    Observation {
        local: crop_local(&centered, params.local_size),
        global: compress_global(&centered, params.global_scale),
        battery_frac: T::of(uav.battery as f64 / initial_budget.max(1) as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::load_map;

    fn sample_map() -> EnvironmentMap {
        load_map("GRID 5 10 25\n..T..\n.N...\n...S.\n.....\nL....\n").unwrap()
    }

    #[test]
    fn center_places_uav_in_middle() {
        let map = sample_map();
        let mission = MissionState::cpp_from_cells(&map, &[Coord::new(4, 4)]);
        for c in map.coords() {
            let layers: Tensor3<f64> = build_layers(&map, &mission, c, 1.0);
            let centered = center_map(&layers, c);
            assert_eq!(centered.rows, 9);
            assert_eq!(centered.at(4, 4, CH_POSITION), 1.0);
            let ones = (0..81).filter(|k| centered.data[k * CHANNELS + CH_POSITION] == 1.0).count();
            assert_eq!(ones, 1);
        }
    }

    #[test]
    fn center_of_odd_map_is_symmetric_padding() {
        let map = sample_map();
        let mission = MissionState::cpp_from_cells(&map, &[]);
        let layers: Tensor3<f64> = build_layers(&map, &mission, Coord::new(2, 2), 1.0);
        let centered = center_map(&layers, Coord::new(2, 2));
        for i in 0..9 {
            for j in 0..9 {
                let inside = (2..7).contains(&i) && (2..7).contains(&j);
                if !inside {
                    assert_eq!(centered.pixel(i, j), &PAD[..]);
                } else {
                    assert_eq!(centered.pixel(i, j), layers.pixel(i - 2, j - 2));
                }
            }
        }
    }

    #[test]
    fn global_pooling_examples() {
        let map = sample_map();
        let mission = MissionState::cpp_from_cells(&map, &[Coord::new(1, 1)]);
        let layers: Tensor3<f64> = build_layers(&map, &mission, Coord::new(0, 0), 1.0);
        let centered = center_map(&layers, Coord::new(0, 0));
        assert_eq!(compress_global(&centered, 1), centered);

        let mut constant = Tensor3::<f64>::zeros(9, 9, CHANNELS);
        for px in constant.data.chunks_exact_mut(CHANNELS) {
            px.copy_from_slice(&PAD);
        }
        let pooled = compress_global(&constant, 4);
        assert_eq!(pooled.rows, 3);
        for px in pooled.data.chunks_exact(CHANNELS) {
            assert_eq!(px, &PAD[..]);
        }

        let p = ObsParams {
            local_size: 17,
            global_scale: 5,
        };
        assert_eq!(p.global_side(32), 13);
    }

    #[test]
    fn local_crop_examples() {
        let map = sample_map();
        let mission = MissionState::cpp_from_cells(&map, &[]);
        let layers: Tensor3<f64> = build_layers(&map, &mission, Coord::new(3, 1), 1.0);
        let centered = center_map(&layers, Coord::new(3, 1));
        assert_eq!(crop_local(&centered, 9), centered);
        let one = crop_local(&centered, 1);
        assert_eq!(one.pixel(0, 0), layers.pixel(3, 1));
    }

    #[test]
    fn observe_battery_fraction() {
        let map = sample_map();
        let mission = MissionState::cpp_from_cells(&map, &[]);
        let params = ObsParams {
            local_size: 5,
            global_scale: 3,
        };
        let mut uav = UavState::new(Coord::new(0, 0), 20);
        let full: Observation<f64> = observe(&map, &mission, &uav, 20, &params, 1.0);
        assert_eq!(full.battery_frac, 1.0);
        assert_eq!(full, observe(&map, &mission, &uav, 20, &params, 1.0));
        uav.battery = 13;
        let later: Observation<f64> = observe(&map, &mission, &uav, 20, &params, 1.0);
        assert_eq!(later.battery_frac, (20.0 - 7.0) / 20.0);
        assert_eq!(later.local.shape(), (5, 5, 5));
        assert_eq!(later.global.shape(), (3, 3, 5));
    }

    #[test]
    fn validate_rules() {
        let p = ObsParams {
            local_size: 4,
            global_scale: 2,
        };
        assert!(p.validate(8).is_err());
        let p = ObsParams {
            local_size: 17,
            global_scale: 2,
        };
        assert!(p.validate(6).is_err());
        assert!(p.validate(9).is_ok());
    }
}
