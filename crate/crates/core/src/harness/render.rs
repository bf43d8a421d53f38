//! Binary PPM rendering of a map, the remaining targets and a UAV path.

use thiserror::Error;

use crate::missions::{MissionKind, MissionState};
use crate::world::{Cell, Coord, EnvironmentMap};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("trajectory is empty")]
    EmptyTrace,
    #[error("scale must be at least 1")]
    Scale,
    #[error("trace cell ({0}, {1}) lies outside the map")]
    OffMap(i32, i32),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Rgb = [u8; 3];

pub const FREE: Rgb = [255, 255, 255];
pub const LANDING: Rgb = [0, 0, 255];
pub const NFZ: Rgb = [255, 0, 0];
pub const TALL: Rgb = [64, 64, 64];
pub const SMALL: Rgb = [160, 160, 160];
pub const PATH: Rgb = [0, 0, 0];
pub const DEVICE_FULL: Rgb = [255, 165, 0];
pub const DEVICE_EMPTY: Rgb = [128, 0, 128];

/// Target cell colour: green with intensity proportional to the remaining amount.
pub fn target_color(value: f64, scale: f64) -> Rgb {
    let v = (value / scale).clamp(0.0, 1.0);
    [0, (255.0 * v).round() as u8, 0]
}

pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl Image {
    fn new(width: usize, height: usize, fill: Rgb) -> Self {
        Self {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    fn put(&mut self, px: i64, py: i64, c: Rgb) {
        if px >= 0 && py >= 0 && (px as usize) < self.width && (py as usize) < self.height {
            self.pixels[py as usize * self.width + px as usize] = c;
        }
    }

    fn fill_rect(&mut self, x0: i64, y0: i64, w: i64, h: i64, c: Rgb) {
        for py in y0..y0 + h {
            for px in x0..x0 + w {
                self.put(px, py, c);
            }
        }
    }

    pub fn get(&self, px: usize, py: usize) -> Rgb {
        self.pixels[py * self.width + px]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }
}

/// Renders `mission`'s target layer and the visited cells `trace` over `map`,
/// `scale` pixels per cell, north up.
pub fn render_trajectory(
    map: &EnvironmentMap,
    mission: &MissionState,
    trace: &[Coord],
    target_scale: f64,
    scale: usize,
) -> Result<Image, RenderError> {
    if trace.is_empty() {
        return Err(RenderError::EmptyTrace);
    }
    if scale == 0 {
        return Err(RenderError::Scale);
    }
    if let Some(c) = trace.iter().find(|&&c| !map.contains(c)) {
        return Err(RenderError::OffMap(c.x, c.y));
    }
    let g = map.size();
    let k = scale as i64;
    let mut img = Image::new(g * scale, g * scale, FREE);
    let origin = |c: Coord| (c.x as i64 * k, (g as i64 - 1 - c.y as i64) * k);

    for c in map.coords() {
        let color = match map.cell(c) {
            Cell::Landing => LANDING,
            Cell::NoFly => NFZ,
            Cell::TallBuilding => TALL,
            Cell::SmallBuilding => SMALL,
            Cell::Free if mission.kind() == MissionKind::Cpp && mission.target(c) > 0.0 => {
                target_color(mission.target(c), target_scale)
            }
            Cell::Free => FREE,
        };
        let (x0, y0) = origin(c);
        img.fill_rect(x0, y0, k, k, color);
    }
    for d in mission.devices() {
        let (x0, y0) = origin(d.position);
        let color = if d.remaining_data > 0.0 { DEVICE_FULL } else { DEVICE_EMPTY };
        let side = (k / 2).max(1);
        img.fill_rect(x0 + (k - side) / 2, y0 + (k - side) / 2, side, side, color);
    }

    let center = |c: Coord| {
        let (x0, y0) = origin(c);
        (x0 + k / 2, y0 + k / 2)
    };
    for w in trace.windows(2) {
        let (a, b) = (center(w[0]), center(w[1]));
        draw_line(&mut img, a, b, PATH);
    }
    let mark = (k / 4).max(1);
    for &c in trace {
        let (cx, cy) = center(c);
        img.fill_rect(cx - mark / 2, cy - mark / 2, mark, mark, PATH);
    }
    Ok(img)
}

fn draw_line(img: &mut Image, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = ((x1 - x0).signum(), (y1 - y0).signum());
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        img.put(x, y, c);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}
