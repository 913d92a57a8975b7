//! Rasterizers for the ground-level view and the basemap tile.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand_distr::{Distribution, Normal};

use super::{derive_latents, hour_angle, CameraSpec, SceneLatents};
use crate::math::{clamp01, lerp, smoothstep};
use crate::rng::{rng_from, unit_hash};
use crate::types::{ImageRole, ImageTensor, Timestamp};

type Rgb = [f64; 3];

fn mix(a: Rgb, b: Rgb, t: f64) -> Rgb {
    [lerp(a[0], b[0], t), lerp(a[1], b[1], t), lerp(a[2], b[2], t)]
}

fn scale(a: Rgb, s: f64) -> Rgb {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn add(a: Rgb, b: Rgb) -> Rgb {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Building {
    pub x0: usize,
    pub x1: usize,
    pub y_top: usize,
    pub y_bottom: usize,
}

/// Time-invariant structure of a camera's ground view.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundLayout {
    pub size: usize,
    pub horizon: usize,
    pub buildings: Vec<Building>,
    /// Window pixels as (row, col), in building order.
    pub windows: Vec<(usize, usize)>,
    /// Rows `[start, end)` covered by the water band, if the site is coastal.
    pub water_rows: Option<(usize, usize)>,
}

impl GroundLayout {
    pub fn is_window(&self, y: usize, x: usize) -> bool {
        self.windows.contains(&(y, x))
    }

    fn building_at(&self, y: usize, x: usize) -> bool {
        self.buildings
            .iter()
            .any(|b| (b.x0..b.x1).contains(&x) && (b.y_top..=b.y_bottom).contains(&y))
    }
}

pub fn ground_layout(cam: &CameraSpec, size: usize) -> GroundLayout {
    let s = cam.scene_seed;
    let sf = size as f64;
    let horizon = ((sf * (0.42 + 0.08 * (unit_hash(&[s, 1]) - 0.5))).round() as usize).clamp(2, size - 2);
    let n_buildings = (cam.urbanness * 5.0).round() as usize;
    let mut buildings = Vec::with_capacity(n_buildings);
    let mut windows = Vec::new();
    for k in 0..n_buildings as u64 {
        let w = ((sf * (0.08 + 0.08 * unit_hash(&[s, 2, k]))).round() as usize).max(3).min(size);
        let x0 = (unit_hash(&[s, 3, k]) * (size - w) as f64).floor() as usize;
        let h = ((sf * (0.12 + 0.2 * unit_hash(&[s, 4, k]))).round() as usize).max(3);
        let y_top = horizon.saturating_sub(h).max(1);
        let y_bottom = (horizon + (sf * 0.06).round() as usize).min(size - 1);
        let b = Building {
            x0,
            x1: x0 + w,
            y_top,
            y_bottom,
        };
        for y in b.y_top..horizon {
            for x in b.x0..b.x1 {
                if (y - b.y_top) % 2 == 1 && (x - b.x0) % 2 == 1 && x + 1 < b.x1 && !windows.contains(&(y, x)) {
                    windows.push((y, x));
                }
            }
        }
        buildings.push(b);
    }
    let water_rows = cam
        .coastal
        .then(|| (horizon, (horizon + ((sf * 0.07).round() as usize).max(1)).min(size)));
    GroundLayout {
        size,
        horizon,
        buildings,
        windows,
        water_rows,
    }
}

/// Bilinear value noise on a coarse lattice, in [0, 1].
fn value_noise(seed: u64, u: f64, v: f64, cells: f64) -> f64 {
    let x = u * cells;
    let y = v * cells;
    let (xi, yi) = (x.floor(), y.floor());
    let (fx, fy) = (smoothstep(x - xi, 0.0, 1.0), smoothstep(y - yi, 0.0, 1.0));
    let at = |i: f64, j: f64| unit_hash(&[seed, 0xC10D, i as u64, j as u64]);
    let top = lerp(at(xi, yi), at(xi + 1.0, yi), fx);
    let bottom = lerp(at(xi, yi + 1.0), at(xi + 1.0, yi + 1.0), fx);
    lerp(top, bottom, fy)
}

const NIGHT_SKY: Rgb = [0.02, 0.03, 0.08];
const DAY_SKY_TOP: Rgb = [0.40, 0.60, 0.92];
const DAY_SKY_HORIZON: Rgb = [0.72, 0.82, 0.95];
const TWILIGHT: Rgb = [0.92, 0.45, 0.18];
const SUN: Rgb = [1.0, 0.95, 0.80];
const DRY_GROUND: Rgb = [0.50, 0.42, 0.28];
const GREEN_GROUND: Rgb = [0.16, 0.48, 0.14];
const SNOW: Rgb = [0.93, 0.95, 0.98];
const WATER: Rgb = [0.12, 0.28, 0.50];
const FACADE: Rgb = [0.46, 0.46, 0.49];
const WINDOW_LIT: Rgb = [1.0, 0.85, 0.45];

/// Render the ground-level view of `cam` at time `t`.
pub fn render_ground(cam: &CameraSpec, t: Timestamp, sample_seed: u64, size: usize) -> ImageTensor {
    let latents = derive_latents(cam, t, sample_seed);
    render_ground_with(cam, t, &latents, sample_seed, size)
}

/// Render from already-derived latents.
pub fn render_ground_with(
    cam: &CameraSpec,
    t: Timestamp,
    lat: &SceneLatents,
    sample_seed: u64,
    size: usize,
) -> ImageTensor {
    let layout = ground_layout(cam, size);
    let sf = size as f64;
    let hv = layout.horizon as f64 / sf;
    let illum = 0.06 + 0.94 * lat.daylight * (1.0 - 0.35 * lat.cloudiness);

    // Cameras in the northern hemisphere face south (east on the left).
    let facing = if cam.location.lat() >= 0.0 { 1.0 } else { -1.0 };
    let ha = hour_angle(cam.location, t);
    let sun_u = (0.5 + facing * ha / 120.0 * 0.5).clamp(0.02, 0.98);
    let sun_v = hv * (1.0 - 0.9 * clamp01(lat.sun_elevation / 70.0));
    let sun_strength = smoothstep(lat.sun_elevation, -2.0, 4.0) * (1.0 - 0.7 * lat.cloudiness);
    let twilight = clamp01(1.0 - lat.sun_elevation.abs() / 8.0);
    let fog = clamp01((lat.cloudiness - 0.45) / 0.4) * 0.5;

    let mut noise_rng = rng_from(&[sample_seed, 0x5E45]);
    let sensor = Normal::new(0.0, 0.015).expect("valid sigma");

    ImageTensor::from_fn(size, size, ImageRole::Ground, |y, x| {
        let u = (x as f64 + 0.5) / sf;
        let v = (y as f64 + 0.5) / sf;
        let mut c = if y < layout.horizon {
            let up = clamp01(1.0 - v / hv);
            let day = mix(DAY_SKY_HORIZON, DAY_SKY_TOP, up);
            let day = scale(day, 0.6 + 0.4 * lat.daylight);
            let mut sky = mix(NIGHT_SKY, day, lat.daylight);
            sky = add(sky, scale(TWILIGHT, 0.6 * twilight * (1.0 - up)));
            let d2 = (u - sun_u).powi(2) + (v - sun_v).powi(2);
            sky = add(sky, scale(SUN, 0.8 * sun_strength * (-d2 / (2.0 * 0.08 * 0.08)).exp()));
            let cn = value_noise(sample_seed, u, v, 4.0);
            let cover = smoothstep(cn, 1.0 - lat.cloudiness, 1.0 - lat.cloudiness + 0.3);
            let cloud = [0.75 * (0.12 + 0.88 * lat.daylight); 3];
            mix(sky, cloud, 0.8 * cover)
        } else {
            let tex = (unit_hash(&[cam.scene_seed, 0x7E, y as u64, x as u64]) - 0.5) * 0.16;
            let base = mix(DRY_GROUND, GREEN_GROUND, lat.greenness);
            let base = add(base, [tex * (1.0 - 0.8 * lat.snow_cover); 3]);
            let g = mix(base, SNOW, lat.snow_cover);
            match layout.water_rows {
                Some((a, b)) if (a..b).contains(&y) => add(WATER, [tex * 0.3; 3]),
                _ => g,
            }
        };
        if y >= layout.horizon {
            c = scale(c, illum);
        } else if layout.building_at(y, x) {
            c = scale(FACADE, illum);
        }
        if layout.building_at(y, x) && y >= layout.horizon {
            c = scale(FACADE, 0.8 * illum);
        }
        if let Some(w) = layout.windows.iter().position(|&p| p == (y, x)) {
            let lit = unit_hash(&[cam.scene_seed, sample_seed, 0x717, w as u64]) < lat.lights;
            c = if lit { WINDOW_LIT } else { scale(FACADE, 0.45 * illum + 0.03) };
        }
        c = mix(c, [0.12 + 0.55 * illum; 3], fog);
        let mut px = [0.0; 3];
        for (k, out) in px.iter_mut().enumerate() {
            *out = 2.0 * clamp01(c[k] + sensor.sample(&mut noise_rng)) - 1.0;
        }
        px
    })
}

/// Time-invariant masks of the basemap tile.
#[derive(Debug, Clone, PartialEq)]
pub struct SatelliteLayout {
    pub size: usize,
    pub road: Vec<bool>,
    pub water: Vec<bool>,
    pub roof: Vec<bool>,
}

pub fn satellite_layout(cam: &CameraSpec, size: usize) -> SatelliteLayout {
    let s = cam.scene_seed;
    let n = size * size;
    let mut road = vec![false; n];
    let mut water = vec![false; n];
    let mut roof = vec![false; n];
    if cam.coastal {
        let side = (unit_hash(&[s, 0x5A7, 1]) * 4.0) as usize;
        let band = ((size as f64) * 0.25).round() as usize;
        for y in 0..size {
            for x in 0..size {
                let inside = match side {
                    0 => y < band,
                    1 => y >= size - band,
                    2 => x < band,
                    _ => x >= size - band,
                };
                water[y * size + x] = inside;
            }
        }
    }
    if cam.urbanness > 0.0 {
        let count = 1 + (cam.urbanness * 3.99) as usize;
        let width = 1 + usize::from(cam.urbanness > 0.6);
        let spacing = size as f64 / count as f64;
        for axis in 0..2u64 {
            for k in 0..count {
                let jitter = 0.3 * (unit_hash(&[s, 0x20AD, axis, k as u64]) - 0.5);
                let p = (((k as f64 + 0.5 + jitter) * spacing) as usize).min(size - width);
                for off in 0..width {
                    for q in 0..size {
                        let (y, x) = if axis == 0 { (p + off, q) } else { (q, p + off) };
                        if !water[y * size + x] {
                            road[y * size + x] = true;
                        }
                    }
                }
            }
        }
        for y in 0..size {
            for x in 0..size {
                let i = y * size + x;
                if !road[i] && !water[i] {
                    roof[i] = unit_hash(&[s, 0x200F, (y / 2) as u64, (x / 2) as u64]) < 0.55 * cam.urbanness;
                }
            }
        }
    }
    SatelliteLayout { size, road, water, roof }
}

/// Render the basemap tile for a camera site. Depends only on the site.
pub fn render_satellite(cam: &CameraSpec, size: usize) -> ImageTensor {
    const TAN: Rgb = [0.62, 0.56, 0.42];
    const GREEN: Rgb = [0.20, 0.42, 0.18];
    const ROAD: Rgb = [0.35, 0.35, 0.37];
    const ROOF_A: Rgb = [0.55, 0.35, 0.30];
    const ROOF_B: Rgb = [0.70, 0.70, 0.72];
    const SEA: Rgb = [0.15, 0.30, 0.55];
    let layout = satellite_layout(cam, size);
    let s = cam.scene_seed;
    ImageTensor::from_fn(size, size, ImageRole::Satellite, |y, x| {
        let i = y * size + x;
        let c = if layout.water[i] {
            add(SEA, [0.04 * (unit_hash(&[s, 0x5EA, y as u64, x as u64]) - 0.5); 3])
        } else if layout.road[i] {
            ROAD
        } else if layout.roof[i] {
            if unit_hash(&[s, 0x2001, (y / 2) as u64, (x / 2) as u64]) < 0.5 {
                ROOF_A
            } else {
                ROOF_B
            }
        } else {
            let n = unit_hash(&[s, 0x1A4D, (y / 2) as u64, (x / 2) as u64]);
            let veg = clamp01(cam.vegetation_fraction * (0.7 + 0.6 * (n - 0.5)));
            add(mix(TAN, GREEN, veg), [0.05 * (unit_hash(&[s, 0x7E7, y as u64, x as u64]) - 0.5); 3])
        };
        [2.0 * clamp01(c[0]) - 1.0, 2.0 * clamp01(c[1]) - 1.0, 2.0 * clamp01(c[2]) - 1.0]
    })
}
