//! Air-to-ground channel: grid line of sight, SNR and rate, TDMA scheduling.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::UavState;
use crate::scalar::Scalar;
use crate::world::{Cell, Coord, EnvironmentMap};

/// Cells strictly between `a` and `b` whose interior is crossed by the
/// segment joining the two cell centers.
///
/// Crossing order is decided in exact integer arithmetic. When the segment
/// passes exactly through a lattice corner it steps diagonally: the two side
/// cells share only that point with the segment and are not visited.
pub fn ray_cells(a: Coord, b: Coord) -> RayCells {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    RayCells {
        origin: a,
        sx: dx.signum(),
        sy: dy.signum(),
        nx: dx.unsigned_abs() as i64,
        ny: dy.unsigned_abs() as i64,
        ix: 0,
        iy: 0,
    }
}

#[derive(Clone, Debug)]
pub struct RayCells {
    origin: Coord,
    sx: i32,
    sy: i32,
    nx: i64,
    ny: i64,
    ix: i64,
    iy: i64,
}

impl Iterator for RayCells {
    type Item = Coord;

    fn next(&mut self) -> Option<Coord> {
        let (nx, ny) = (self.nx, self.ny);
        if self.ix == nx && self.iy == ny {
            return None;
        }
        if self.ix == nx {
            self.iy += 1;
        } else if self.iy == ny {
            self.ix += 1;
        } else {
            // next x boundary at t = (2ix+1)/(2nx), next y boundary at (2iy+1)/(2ny)
            let tx = (2 * self.ix + 1) * ny;
            let ty = (2 * self.iy + 1) * nx;
            match tx.cmp(&ty) {
                std::cmp::Ordering::Less => self.ix += 1,
                std::cmp::Ordering::Greater => self.iy += 1,
                std::cmp::Ordering::Equal => {
                    self.ix += 1;
                    self.iy += 1;
                }
            }
        }
        if self.ix == nx && self.iy == ny {
            return None;
        }
        Some(self.origin.offset(self.sx * self.ix as i32, self.sy * self.iy as i32))
    }
}

/// True when no cell strictly between `a` and `b` satisfies `blocks`.
pub fn ray_clear(map: &EnvironmentMap, a: Coord, b: Coord, blocks: impl Fn(Cell) -> bool) -> bool {
    ray_cells(a, b).all(|c| !blocks(map.cell(c)))
}

pub fn has_los(uav_cell: Coord, device_cell: Coord, map: &EnvironmentMap) -> bool {
    ray_clear(map, uav_cell, device_cell, Cell::blocks_radio)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    /// Transmit power over receiver noise, dB.
    pub tx_power_over_noise_db: f64,
    pub pathloss_exp_los: f64,
    pub pathloss_exp_nlos: f64,
    pub shadow_sigma_los_db: f64,
    pub shadow_sigma_nlos_db: f64,
    /// Communication slots per mission slot.
    pub comm_slots_per_mission_slot: u32,
    pub comm_slot_seconds: f64,
    /// Mean of the per-mission-slot Poisson data arrivals per device; 0 disables arrivals.
    pub poisson_rate: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            tx_power_over_noise_db: 60.0,
            pathloss_exp_los: 2.3,
            pathloss_exp_nlos: 3.0,
            shadow_sigma_los_db: 2.0,
            shadow_sigma_nlos_db: 5.0,
            comm_slots_per_mission_slot: 4,
            comm_slot_seconds: 0.5,
            poisson_rate: 0.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), RadioError> {
        let bad = |m: &str| Err(RadioError::InvalidParams(m.into()));
        if !(self.pathloss_exp_los > 0.0 && self.pathloss_exp_nlos > 0.0) {
            return bad("path loss exponents must be positive");
        }
        if self.pathloss_exp_nlos < self.pathloss_exp_los {
            return bad("NLoS path loss exponent must not be below the LoS exponent");
        }
        if !(self.shadow_sigma_los_db >= 0.0 && self.shadow_sigma_nlos_db >= 0.0) {
            return bad("shadowing deviations must be nonnegative");
        }
        if self.comm_slots_per_mission_slot == 0 {
            return bad("at least one communication slot per mission slot is required");
        }
        if !(self.comm_slot_seconds > 0.0) {
            return bad("communication slot length must be positive");
        }
        if !(self.poisson_rate >= 0.0 && self.poisson_rate.is_finite()) {
            return bad("Poisson rate must be nonnegative");
        }
        if !self.tx_power_over_noise_db.is_finite() {
            return bad("transmit power must be finite");
        }
        Ok(())
    }

    pub fn without_shadowing(mut self) -> Self {
        self.shadow_sigma_los_db = 0.0;
        self.shadow_sigma_nlos_db = 0.0;
        self
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RadioError {
    #[error("UAV and device are co-located")]
    ZeroDistance,
    #[error("the UAV is not operational")]
    Inactive,
    #[error("invalid channel parameters: {0}")]
    InvalidParams(String),
}

/// Linear SNR for a link; positions in meters.
pub fn snr<T: Scalar>(uav: [T; 3], device: [T; 3], los: bool, shadow_db: T, params: &ChannelParams) -> Result<T, RadioError> {
    let d2: T = (0..3).map(|i| (uav[i] - device[i]) * (uav[i] - device[i])).sum();
    if d2 <= T::zero() {
        return Err(RadioError::ZeroDistance);
    }
    let exponent = T::of(if los {
        params.pathloss_exp_los
    } else {
        params.pathloss_exp_nlos
    });
    let ten = T::of(10.0);
    let power = ten.powf(T::of(params.tx_power_over_noise_db) / ten);
    let d = d2.sqrt();
    Ok(power * d.powf(-exponent) * ten.powf(shadow_db / ten))
}

/// Data units per second per unit bandwidth.
pub fn achievable_rate<T: Scalar>(snr: T) -> T {
    (T::one() + snr).log2()
}

/// A device cannot send more than it holds in one slot.
pub fn effective_rate<T: Scalar>(rate: T, remaining: T, slot_seconds: T) -> T {
    rate.min(remaining / slot_seconds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    pub position: Coord,
    pub remaining_data: f64,
    pub collected_data: f64,
    pub initial_data: f64,
    /// Data added by arrivals after the start.
    pub generated_data: f64,
}

impl DeviceState {
    pub fn new(position: Coord, data: f64) -> Self {
        Self {
            position,
            remaining_data: data,
            collected_data: 0.0,
            initial_data: data,
            generated_data: 0.0,
        }
    }
}

/// Center of a cell at the given altitude, meters.
pub fn cell_center_m(map: &EnvironmentMap, c: Coord, altitude: f64) -> [f64; 3] {
    let s = map.cell_size_m();
    [(c.x as f64 + 0.5) * s, (c.y as f64 + 0.5) * s, altitude]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Collection {
    /// Data collected per device over the mission slot.
    pub amounts: Vec<f64>,
    /// Sum of scheduled effective rates over the communication slots.
    pub throughput: f64,
    /// Scheduled device per communication slot.
    pub schedule: Vec<Option<usize>>,
}

impl Collection {
    pub fn total(&self) -> f64 {
        self.amounts.iter().sum()
    }
}

/// Runs the communication slots of one mission slot.
///
/// Each slot draws fresh shadowing for every device, then serves the single
/// device with the highest effective rate among those still holding data
/// (ties to the lowest index). `devices` is not modified; the returned
/// amounts never exceed each device's remaining data.
pub fn schedule_and_collect<R: Rng + ?Sized>(
    uav: &UavState,
    devices: &[DeviceState],
    map: &EnvironmentMap,
    params: &ChannelParams,
    rng: &mut R,
) -> Result<Collection, RadioError> {
    if !uav.operational {
        return Err(RadioError::Inactive);
    }
    let slot = params.comm_slot_seconds;
    let uav_pos = cell_center_m(map, uav.position, map.uav_height_m());
    let links: Vec<(bool, [f64; 3])> = devices
        .iter()
        .map(|d| (has_los(uav.position, d.position, map), cell_center_m(map, d.position, 0.0)))
        .collect();
    let mut remaining: Vec<f64> = devices.iter().map(|d| d.remaining_data).collect();
    let mut amounts = vec![0.0; devices.len()];
    let mut throughput = 0.0;
    let mut schedule = Vec::with_capacity(params.comm_slots_per_mission_slot as usize);

    for _ in 0..params.comm_slots_per_mission_slot {
        let mut best: Option<(usize, f64)> = None;
        for (k, &(los, dev_pos)) in links.iter().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            let sigma = if los {
                params.shadow_sigma_los_db
            } else {
                params.shadow_sigma_nlos_db
            };
            if remaining[k] <= 0.0 {
                continue;
            }
            let s = snr(uav_pos, dev_pos, los, sigma * z, params)?;
            let eff = effective_rate(achievable_rate(s), remaining[k], slot);
            if best.is_none_or(|(_, b)| eff > b) {
                best = Some((k, eff));
            }
        }
        match best {
            Some((k, eff)) => {
                let amount = (slot * eff).min(remaining[k]);
                remaining[k] -= amount;
                amounts[k] += amount;
                throughput += eff;
                schedule.push(Some(k));
            }
            None => schedule.push(None),
        }
    }
    Ok(Collection {
        amounts,
        throughput,
        schedule,
    })
}

/// Poisson data arrivals for one mission slot, one draw per device.
pub fn draw_arrivals<R: Rng + ?Sized>(device_count: usize, params: &ChannelParams, rng: &mut R) -> Vec<f64> {
    if params.poisson_rate <= 0.0 {
        return vec![0.0; device_count];
    }
    let dist = Poisson::new(params.poisson_rate).expect("validated Poisson rate");
    (0..device_count).map(|_| dist.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::world::load_map;

    fn row_map() -> EnvironmentMap {
        load_map("GRID 6 10 25\n......\n......\n......\n.L.T..\n......\n......\n").unwrap()
    }

    #[test]
    fn ray_visits_expected_cells() {
        let cells: Vec<_> = ray_cells(Coord::new(0, 0), Coord::new(3, 0)).collect();
        assert_eq!(cells, vec![Coord::new(1, 0), Coord::new(2, 0)]);
        assert_eq!(ray_cells(Coord::new(0, 0), Coord::new(1, 0)).count(), 0);
        assert_eq!(ray_cells(Coord::new(2, 2), Coord::new(2, 2)).count(), 0);
        // exact diagonal passes only through corners between diagonal cells
        let diag: Vec<_> = ray_cells(Coord::new(0, 0), Coord::new(3, 3)).collect();
        assert_eq!(diag, vec![Coord::new(1, 1), Coord::new(2, 2)]);
        let knight: Vec<_> = ray_cells(Coord::new(0, 0), Coord::new(2, 1)).collect();
        assert_eq!(knight, vec![Coord::new(1, 0), Coord::new(1, 1)]);
    }

    #[test]
    fn los_examples() {
        let map = row_map();
        assert!(has_los(Coord::new(1, 2), Coord::new(2, 2), &map));
        assert!(!has_los(Coord::new(1, 2), Coord::new(5, 2), &map));
        assert!(has_los(Coord::new(1, 0), Coord::new(5, 0), &map));
    }

    #[test]
    fn snr_examples() {
        let p = ChannelParams::default();
        let s = snr([0.0, 0.0, 0.0], [100.0, 0.0, 0.0], true, 0.0, &p).unwrap();
        assert!((s - 10f64.powf(1.4)).abs() < 1e-9);
        assert!((s - 25.119).abs() < 1e-3);
        let overhead = snr([0.0f64, 0.0, 25.0], [0.0, 0.0, 0.0], true, 0.0, &p).unwrap();
        assert!((overhead - 609.169).abs() < 1e-3, "{overhead}");
        let faded = snr([0.0, 0.0, 25.0], [0.0, 0.0, 0.0], true, -1000.0, &p).unwrap();
        assert!(faded < 1e-90);
        assert_eq!(snr([1.0, 1.0, 0.0], [1.0, 1.0, 0.0], true, 0.0, &p), Err(RadioError::ZeroDistance));
        let nlos = snr([0.0, 0.0, 25.0], [100.0, 0.0, 0.0], false, 0.0, &p).unwrap();
        let los = snr([0.0, 0.0, 25.0], [100.0, 0.0, 0.0], true, 0.0, &p).unwrap();
        assert!(nlos < los);
        let single = snr([0.0f32, 0.0, 0.0], [100.0, 0.0, 0.0], true, 0.0, &p).unwrap();
        assert!((single - 25.119).abs() < 1e-2);
    }

    #[test]
    fn rate_examples() {
        assert_eq!(achievable_rate(0.0), 0.0);
        assert_eq!(achievable_rate(1.0), 1.0);
        assert!((achievable_rate(10f64.powf(1.4)) - 4.707).abs() < 1e-3);
        assert_eq!(effective_rate(4.0, 0.0, 0.5), 0.0);
        assert_eq!(effective_rate(4.0, 1e9, 0.5), 4.0);
        assert_eq!(effective_rate(4.0, 1.0, 0.5), 2.0);
    }

    #[test]
    fn empty_devices_are_never_scheduled() {
        let map = row_map();
        let uav = UavState::new(Coord::new(1, 2), 10);
        let p = ChannelParams::default();
        let mut rng = rng_from_seed(1);
        let empty = vec![DeviceState::new(Coord::new(4, 4), 0.0), DeviceState::new(Coord::new(0, 0), 0.0)];
        let c = schedule_and_collect(&uav, &empty, &map, &p, &mut rng).unwrap();
        assert_eq!(c.throughput, 0.0);
        assert!(c.schedule.iter().all(Option::is_none));

        let devs = vec![DeviceState::new(Coord::new(4, 4), 5.0), DeviceState::new(Coord::new(1, 2), 0.0)];
        let c = schedule_and_collect(&uav, &devs, &map, &p, &mut rng).unwrap();
        assert!(c.schedule.iter().all(|s| *s != Some(1)));
        assert_eq!(c.schedule[0], Some(0));
        assert_eq!(c.amounts[1], 0.0);
    }

    #[test]
    fn closed_form_single_device() {
        let map = row_map();
        let uav = UavState::new(Coord::new(1, 2), 10);
        let p = ChannelParams::default().without_shadowing();
        let dev = DeviceState::new(Coord::new(2, 2), 1e6);
        let d = (10.0f64 * 10.0 + 25.0 * 25.0).sqrt();
        let rate = (1.0 + 1e6 * d.powf(-2.3)).log2();
        let c = schedule_and_collect(&uav, &[dev], &map, &p, &mut rng_from_seed(0)).unwrap();
        assert!((c.throughput - 4.0 * rate).abs() < 1e-12);
        assert!((c.amounts[0] - 4.0 * 0.5 * rate).abs() < 1e-12);
    }

    #[test]
    fn draining_device_is_clamped() {
        let map = row_map();
        let uav = UavState::new(Coord::new(1, 2), 10);
        let p = ChannelParams::default();
        let dev = DeviceState::new(Coord::new(1, 2), 0.3);
        let c = schedule_and_collect(&uav, &[dev], &map, &p, &mut rng_from_seed(2)).unwrap();
        assert!((c.amounts[0] - 0.3).abs() < 1e-15);
        assert!(c.amounts[0] <= 0.3);
    }

    #[test]
    fn inactive_uav_is_rejected() {
        let map = row_map();
        let mut uav = UavState::new(Coord::new(1, 2), 10);
        uav.operational = false;
        let r = schedule_and_collect(&uav, &[], &map, &ChannelParams::default(), &mut rng_from_seed(0));
        assert_eq!(r, Err(RadioError::Inactive));
    }

    #[test]
    fn arrivals_off_by_default() {
        let p = ChannelParams::default();
        assert_eq!(draw_arrivals(3, &p, &mut rng_from_seed(0)), vec![0.0; 3]);
        let on = ChannelParams { poisson_rate: 2.0, ..p };
        let a = draw_arrivals(1000, &on, &mut rng_from_seed(0));
        let mean = a.iter().sum::<f64>() / 1000.0;
        assert!((mean - 2.0).abs() < 0.2);
    }
}
