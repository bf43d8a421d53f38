//! Static environment grid, the map text format, and randomized scenario generation.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::missions::{MissionKind, MissionState};
use crate::radio::DeviceState;
use crate::rng::{self, Purpose, SimRng};

/// Integer cell coordinates: `x` grows east, `y` grows north.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Coord {
    pub x: i32,
    pub y: i32,
}

impl Coord {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }
}

/// Role of one cell. A cell carries exactly one role, so the single-role
/// invariant and "landing is never inside an NFZ" hold by construction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Cell {
    #[default]
    Free,
    Landing,
    NoFly,
    /// Blocks flight and radio.
    TallBuilding,
    /// Occupiable, blocks radio.
    SmallBuilding,
}

impl Cell {
    pub fn is_landing(self) -> bool {
        self == Cell::Landing
    }

    pub fn is_nfz(self) -> bool {
        self == Cell::NoFly
    }

    /// The UAV may never occupy this cell.
    pub fn no_occupy(self) -> bool {
        matches!(self, Cell::NoFly | Cell::TallBuilding)
    }

    pub fn blocks_radio(self) -> bool {
        matches!(self, Cell::TallBuilding | Cell::SmallBuilding)
    }

    /// Occludes the down-looking camera; low buildings do not.
    pub fn blocks_view(self) -> bool {
        self == Cell::TallBuilding
    }

    pub fn is_building(self) -> bool {
        self.blocks_radio()
    }

    pub fn symbol(self) -> char {
        match self {
            Cell::Free => '.',
            Cell::Landing => 'L',
            Cell::NoFly => 'N',
            Cell::TallBuilding => 'T',
            Cell::SmallBuilding => 'S',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        Some(match c {
            '.' => Cell::Free,
            'L' => Cell::Landing,
            'N' => Cell::NoFly,
            'T' => Cell::TallBuilding,
            'S' => Cell::SmallBuilding,
            _ => return None,
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid map: {0}")]
    Invariant(String),
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> MapError {
    MapError::Parse {
        line,
        column,
        message: message.into(),
    }
}

/// Square G×G world. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentMap {
    size: usize,
    cell_size_m: f64,
    uav_height_m: f64,
    cells: Vec<Cell>,
}

impl EnvironmentMap {
    pub const MIN_SIZE: usize = 4;

    /// Builds a map from cells indexed `y * size + x`.
    pub fn new(size: usize, cell_size_m: f64, uav_height_m: f64, cells: Vec<Cell>) -> Result<Self, MapError> {
        if size < Self::MIN_SIZE {
            return Err(MapError::Invariant(format!(
                "grid size {size} is below the minimum of {}",
                Self::MIN_SIZE
            )));
        }
        if cells.len() != size * size {
            return Err(MapError::Invariant(format!(
                "expected {} cells, got {}",
                size * size,
                cells.len()
            )));
        }
        if !(cell_size_m.is_finite() && cell_size_m > 0.0) {
            return Err(MapError::Invariant(format!("cell size must be positive, got {cell_size_m}")));
        }
        if !(uav_height_m.is_finite() && uav_height_m > 0.0) {
            return Err(MapError::Invariant(format!("UAV height must be positive, got {uav_height_m}")));
        }
        if !cells.iter().any(|c| c.is_landing()) {
            return Err(MapError::Invariant("map has no landing cell".into()));
        }
        Ok(Self {
            size,
            cell_size_m,
            uav_height_m,
            cells,
        })
    }

    /// All-free map with the given landing cells.
    pub fn open(size: usize, landing: &[Coord]) -> Result<Self, MapError> {
        let mut cells = vec![Cell::Free; size * size];
        for c in landing {
            if c.x < 0 || c.y < 0 || c.x as usize >= size || c.y as usize >= size {
                return Err(MapError::Invariant(format!("landing cell ({}, {}) is off-grid", c.x, c.y)));
            }
            cells[c.y as usize * size + c.x as usize] = Cell::Landing;
        }
        Self::new(size, 10.0, 25.0, cells)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn cell_size_m(&self) -> f64 {
        self.cell_size_m
    }

    pub fn uav_height_m(&self) -> f64 {
        self.uav_height_m
    }

    pub fn contains(&self, c: Coord) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.size && (c.y as usize) < self.size
    }

    pub fn index(&self, c: Coord) -> usize {
        debug_assert!(self.contains(c));
        c.y as usize * self.size + c.x as usize
    }

    pub fn coord(&self, index: usize) -> Coord {
        Coord::new((index % self.size) as i32, (index / self.size) as i32)
    }

    /// Panics when `c` is off-grid.
    pub fn cell(&self, c: Coord) -> Cell {
        assert!(self.contains(c), "cell ({}, {}) is off-grid", c.x, c.y);
        self.cells[self.index(c)]
    }

    pub fn get(&self, c: Coord) -> Option<Cell> {
        self.contains(c).then(|| self.cells[self.index(c)])
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        (0..self.cells.len()).map(|i| self.coord(i))
    }

    pub fn landing_cells(&self) -> Vec<Coord> {
        self.coords().filter(|&c| self.cell(c).is_landing()).collect()
    }

    pub fn with_cell(&self, c: Coord, cell: Cell) -> Result<Self, MapError> {
        let mut cells = self.cells.clone();
        cells[self.index(c)] = cell;
        Self::new(self.size, self.cell_size_m, self.uav_height_m, cells)
    }
}

/// Parses the map text format: a `GRID <G> <cell_size_m> <height_m>` header
/// followed by G rows of G cell symbols, northernmost row first.
pub fn load_map(text: &str) -> Result<EnvironmentMap, MapError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, 1, "empty map file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "GRID" {
        return Err(parse_err(1, 1, "expected header `GRID <G> <cell_size_m> <height_m>`"));
    }
    let size: usize = fields[1]
        .parse()
        .map_err(|_| parse_err(1, header.find(fields[1]).unwrap_or(0) + 1, "grid size is not a positive integer"))?;
    let cell_size: f64 = fields[2]
        .parse()
        .map_err(|_| parse_err(1, 1, format!("cell size `{}` is not a number", fields[2])))?;
    let height: f64 = fields[3]
        .parse()
        .map_err(|_| parse_err(1, 1, format!("height `{}` is not a number", fields[3])))?;
    if size < EnvironmentMap::MIN_SIZE {
        return Err(MapError::Invariant(format!(
            "grid size {size} is below the minimum of {}",
            EnvironmentMap::MIN_SIZE
        )));
    }

    let mut cells = vec![Cell::Free; size * size];
    let mut rows = 0;
    for (lineno, line) in lines {
        if rows == size {
            if line.trim().is_empty() {
                continue;
            }
            return Err(parse_err(lineno + 1, 1, format!("more than {size} map rows")));
        }
        let y = size - 1 - rows;
        let mut n = 0;
        for (col, ch) in line.chars().enumerate() {
            if n == size {
                return Err(parse_err(lineno + 1, col + 1, format!("row longer than {size} cells")));
            }
            let cell = Cell::from_symbol(ch)
                .ok_or_else(|| parse_err(lineno + 1, col + 1, format!("unexpected character {ch:?}")))?;
            cells[y * size + col] = cell;
            n += 1;
        }
        if n != size {
            return Err(parse_err(lineno + 1, n + 1, format!("row has {n} cells, expected {size}")));
        }
        rows += 1;
    }
    if rows != size {
        return Err(parse_err(rows + 2, 1, format!("expected {size} map rows, found {rows}")));
    }
    EnvironmentMap::new(size, cell_size, height, cells)
}

pub fn save_map(map: &EnvironmentMap) -> String {
    let g = map.size();
    let mut out = String::with_capacity((g + 1) * (g + 1) + 32);
    let _ = writeln!(out, "GRID {} {} {}", g, map.cell_size_m(), map.uav_height_m());
    for row in 0..g {
        let y = g - 1 - row;
        for x in 0..g {
            out.push(map.cell(Coord::new(x as i32, y as i32)).symbol());
        }
        out.push('\n');
    }
    out
}

/// Parameters for random scenario generation on a fixed map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSpec {
    pub mission: MissionKind,
    /// Inclusive range of the initial movement budget (action steps).
    pub movement_budget: [u32; 2],
    /// Inclusive range of the number of layered target shapes (CPP).
    pub cpp_zone_count: [u32; 2],
    /// When set, CPP targets are exactly this many distinct random cells
    /// instead of layered shapes.
    pub cpp_target_count: Option<usize>,
    pub device_count: usize,
    /// Inclusive range of initial device data, data units.
    pub device_data: [f64; 2],
    pub rng_seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            mission: MissionKind::Cpp,
            movement_budget: [50, 150],
            cpp_zone_count: [3, 8],
            cpp_target_count: None,
            device_count: 10,
            device_data: [5.0, 20.0],
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario spec: {0}")]
    Invalid(String),
    #[error("infeasible scenario: {0}")]
    Infeasible(String),
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.movement_budget[0] > self.movement_budget[1] || self.movement_budget[0] == 0 {
            return bad(format!("movement budget range {:?} is empty or zero", self.movement_budget));
        }
        if self.cpp_zone_count[0] > self.cpp_zone_count[1] || self.cpp_zone_count[1] == 0 {
            return bad(format!("zone count range {:?} is empty", self.cpp_zone_count));
        }
        if self.cpp_target_count == Some(0) {
            return bad("cpp_target_count must be positive".into());
        }
        let [lo, hi] = self.device_data;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return bad(format!("device data range {:?} must be positive and nonempty", self.device_data));
        }
        if self.mission == MissionKind::Dh && self.device_count == 0 {
            return bad("data harvesting needs at least one device".into());
        }
        Ok(())
    }
}

/// One layered target shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Rect { x0: i32, y0: i32, w: i32, h: i32 },
    Disk { cx: i32, cy: i32, diameter: i32 },
}

impl Shape {
    pub fn contains(&self, c: Coord) -> bool {
        match *self {
            Shape::Rect { x0, y0, w, h } => c.x >= x0 && c.x < x0 + w && c.y >= y0 && c.y < y0 + h,
            Shape::Disk { cx, cy, diameter } => {
                // discrete disk: cell centers within diameter/2 of the center cell's center
                let (dx, dy) = (2 * (c.x - cx), 2 * (c.y - cy));
                dx * dx + dy * dy <= diameter * diameter
            }
        }
    }
}

/// Largest shape extent used for map size `g`: ⌈g/4⌉, never below 2.
pub fn max_shape_size(g: usize) -> i32 {
    (g.div_ceil(4)).max(2) as i32
}

/// Draws the layered CPP shapes for a scenario.
pub fn draw_cpp_shapes(map: &EnvironmentMap, spec: &ScenarioSpec, rng: &mut SimRng) -> Vec<Shape> {
    let g = map.size() as i32;
    let smax = max_shape_size(map.size());
    let count = rng.random_range(spec.cpp_zone_count[0]..=spec.cpp_zone_count[1]);
    (0..count)
        .map(|_| {
            if rng.random_bool(0.5) {
                let w = rng.random_range(2..=smax);
                let h = rng.random_range(2..=smax);
                let x0 = rng.random_range(0..=(g - w));
                let y0 = rng.random_range(0..=(g - h));
                Shape::Rect { x0, y0, w, h }
            } else {
                let diameter = rng.random_range(2..=smax);
                let cx = rng.random_range(0..g);
                let cy = rng.random_range(0..g);
                Shape::Disk { cx, cy, diameter }
            }
        })
        .collect()
}

fn cpp_eligible(cell: Cell) -> bool {
    // obstacles are never targets; landing and NFZ cells may be
    cell != Cell::TallBuilding
}

fn dh_eligible(cell: Cell) -> bool {
    !(cell.is_building() || cell.is_landing())
}

const MAX_SHAPE_ATTEMPTS: usize = 64;

/// Draws the mission targets for `spec` on `map`. A pure function of
/// `(map, spec)`: the seed lives in the spec.
pub fn generate_scenario(map: &EnvironmentMap, spec: &ScenarioSpec) -> Result<MissionState, ScenarioError> {
    spec.validate()?;
    let mut rng = rng::stream(spec.rng_seed, Purpose::Scenario, 0);
    let g = map.size();
    match spec.mission {
        MissionKind::Cpp => {
            let eligible: Vec<usize> = (0..g * g).filter(|&i| cpp_eligible(map.cells()[i])).collect();
            let mut layer = vec![0.0; g * g];
            if let Some(n) = spec.cpp_target_count {
                if n > eligible.len() {
                    return Err(ScenarioError::Infeasible(format!(
                        "{n} target cells requested but only {} cells are coverable",
                        eligible.len()
                    )));
                }
                for i in rand::seq::index::sample(&mut rng, eligible.len(), n) {
                    layer[eligible[i]] = 1.0;
                }
            } else {
                let mut attempts = 0;
                while layer.iter().all(|&v| v == 0.0) {
                    if attempts == MAX_SHAPE_ATTEMPTS {
                        return Err(ScenarioError::Infeasible("no coverable target cells were drawn".into()));
                    }
                    attempts += 1;
                    let shapes = draw_cpp_shapes(map, spec, &mut rng);
                    for &i in &eligible {
                        let c = map.coord(i);
                        if shapes.iter().any(|s| s.contains(c)) {
                            layer[i] = 1.0;
                        }
                    }
                }
            }
            Ok(MissionState::cpp(g, layer))
        }
        MissionKind::Dh => {
            let free: Vec<usize> = (0..g * g).filter(|&i| dh_eligible(map.cells()[i])).collect();
            if spec.device_count > free.len() {
                return Err(ScenarioError::Infeasible(format!(
                    "{} devices requested but only {} free cells",
                    spec.device_count,
                    free.len()
                )));
            }
            let [lo, hi] = spec.device_data;
            let mut picks: Vec<usize> = rand::seq::index::sample(&mut rng, free.len(), spec.device_count)
                .into_iter()
                .map(|i| free[i])
                .collect();
            picks.sort_unstable();
            let devices = picks
                .into_iter()
                .map(|i| {
                    let data = if lo == hi { lo } else { rng.random_range(lo..=hi) };
                    DeviceState::new(map.coord(i), data)
                })
                .collect();
            Ok(MissionState::dh(g, devices))
        }
    }
}

/// Parameters for `gen-map`: random rectangular layouts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapGenSpec {
    pub size: usize,
    pub cell_size_m: f64,
    pub height_m: f64,
    pub landing_zones: usize,
    pub nfz_zones: usize,
    pub tall_buildings: usize,
    pub small_buildings: usize,
    /// Largest rectangle side, cells.
    pub max_block: usize,
    pub seed: u64,
}

impl Default for MapGenSpec {
    fn default() -> Self {
        Self {
            size: 16,
            cell_size_m: 10.0,
            height_m: 25.0,
            landing_zones: 1,
            nfz_zones: 2,
            tall_buildings: 4,
            small_buildings: 4,
            max_block: 4,
            seed: 0,
        }
    }
}

/// Random map of rectangles. Landing zones are placed first and never overwritten.
pub fn generate_map(spec: &MapGenSpec) -> Result<EnvironmentMap, MapError> {
    let g = spec.size;
    if g < EnvironmentMap::MIN_SIZE {
        return Err(MapError::Invariant(format!("grid size {g} is below the minimum")));
    }
    if spec.landing_zones == 0 {
        return Err(MapError::Invariant("at least one landing zone is required".into()));
    }
    let mut rng = rng::stream(spec.seed, Purpose::Scenario, u64::MAX >> 8);
    let mut cells = vec![Cell::Free; g * g];
    let max_block = spec.max_block.clamp(1, g);
    let place = |cells: &mut Vec<Cell>, cell: Cell, max: usize, rng: &mut SimRng| {
        let w = rng.random_range(1..=max);
        let h = rng.random_range(1..=max);
        let x0 = rng.random_range(0..=g - w);
        let y0 = rng.random_range(0..=g - h);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                let slot = &mut cells[y * g + x];
                if *slot != Cell::Landing {
                    *slot = cell;
                }
            }
        }
    };
    for _ in 0..spec.landing_zones {
        place(&mut cells, Cell::Landing, 2.min(g), &mut rng);
    }
    for _ in 0..spec.nfz_zones {
        place(&mut cells, Cell::NoFly, max_block, &mut rng);
    }
    for _ in 0..spec.tall_buildings {
        place(&mut cells, Cell::TallBuilding, max_block, &mut rng);
    }
    for _ in 0..spec.small_buildings {
        place(&mut cells, Cell::SmallBuilding, max_block, &mut rng);
    }
    EnvironmentMap::new(g, spec.cell_size_m, spec.height_m, cells)
}
