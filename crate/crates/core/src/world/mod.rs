//! Deterministic procedural geo-temporal world.
//!
//! Scenes are driven by a handful of latents (sun elevation, daylight, season,
//! temperature, snow, greenness, cloudiness, window lights) whose relation to
//! location and time is known exactly. Surface properties (urbanness,
//! vegetation, coast) are smooth fields over the globe, so a tile can be
//! re-rendered for any perturbed location.

mod attributes;
mod dataset;
mod render;

pub use attributes::{is_noise_slot, oracle_attributes, NOISE_ATTRIBUTES};
pub use dataset::{generate_dataset, DatasetParams, GeneratedDataset, SampleMeta};
pub use render::{
    ground_layout, render_ground, render_ground_with, render_satellite, satellite_layout, Building,
    GroundLayout, SatelliteLayout,
};

use alloc::string::String;

#[allow(unused_imports)]
use num_traits::Float;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::math::{clamp01, smoothstep};
use crate::rng::{derive_seed, rng_from};
use crate::types::{GeoLocation, Timestamp};

/// Sun elevation (degrees) below which the scene counts as fully dark.
pub const DAYLIGHT_FLOOR_DEG: f64 = -6.0;
/// Sun elevation (degrees) at which illumination saturates.
pub const DAYLIGHT_CEIL_DEG: f64 = 50.0;

/// Day of year of the 15th of each month (non-leap year).
const MID_MONTH_DAY: [f64; 12] = [
    15.0, 46.0, 74.0, 105.0, 135.0, 166.0, 196.0, 227.0, 258.0, 288.0, 319.0, 349.0,
];

/// A static outdoor camera together with the surface properties of its site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub camera_id: String,
    pub location: GeoLocation,
    pub scene_seed: u64,
    pub urbanness: f64,
    pub vegetation_fraction: f64,
    pub coastal: bool,
}

/// Per-observation scene state. Pure in (camera, timestamp, sample seed).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneLatents {
    pub sun_elevation: f64,
    pub daylight: f64,
    /// 1 at the local summer peak, 0 at the winter trough.
    pub season_phase: f64,
    /// Positive while the season warms (spring), negative while it cools.
    pub season_trend: f64,
    pub temperature_proxy: f64,
    pub snow_cover: f64,
    pub greenness: f64,
    pub cloudiness: f64,
    /// Fraction of building windows lit.
    pub lights: f64,
    /// Local solar hour in [0, 24).
    pub local_hour: f64,
    /// Seed for the attribute slots that carry no scene information.
    pub noise_seed: u64,
}

/// The world: a seed from which every surface field is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct World {
    pub seed: u64,
}

impl World {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Smooth field in [0, 1] built from a few planar waves on (lat, lon).
    /// Longitude frequencies are integers, so fields are continuous across
    /// the antimeridian.
    fn field(&self, channel: u64, l: GeoLocation) -> f64 {
        let phi = l.lat().to_radians();
        let lam = l.lon().to_radians();
        let mut acc = 0.0;
        let mut norm = 0.0;
        for k in 0..4u64 {
            let mut r = rng_from(&[self.seed, 0xF1E1D, channel, k]);
            use rand::Rng;
            let fl: f64 = r.random_range(1.5..5.0);
            let fo: i32 = r.random_range(2..=6);
            let phase: f64 = r.random_range(0.0..core::f64::consts::TAU);
            let amp = 1.0 / (k as f64 + 1.0);
            acc += amp * (fl * phi + fo as f64 * lam + phase).sin();
            norm += amp;
        }
        0.5 + 0.5 * acc / norm
    }

    pub fn urbanness(&self, l: GeoLocation) -> f64 {
        smoothstep(self.field(1, l), 0.35, 0.8)
    }

    pub fn vegetation(&self, l: GeoLocation) -> f64 {
        0.15 + 0.8 * self.field(2, l)
    }

    pub fn coastal(&self, l: GeoLocation) -> bool {
        self.field(3, l) > 0.68
    }

    /// Camera site at an arbitrary location. The scene seed is a function of
    /// the location (quantized to 1e-6 degrees), so the same location always
    /// yields the same site.
    pub fn camera_at(&self, camera_id: impl Into<String>, location: GeoLocation) -> CameraSpec {
        let q = |v: f64| (v * 1e6).round() as i64 as u64;
        CameraSpec {
            camera_id: camera_id.into(),
            location,
            scene_seed: derive_seed(&[self.seed, 0x5CE7E, q(location.lat()), q(location.lon())]),
            urbanness: self.urbanness(location),
            vegetation_fraction: self.vegetation(location),
            coastal: self.coastal(location),
        }
    }
}

impl crate::tamper::TileSource for World {
    fn tile(&self, location: GeoLocation, size: usize) -> crate::types::ImageTensor {
        render::render_satellite(&self.camera_at("", location), size)
    }
}

/// Solar declination (degrees) on the 15th of `month`.
pub fn declination(month: u32) -> f64 {
    let d = MID_MONTH_DAY[month as usize - 1];
    -23.44 * (core::f64::consts::TAU * (d + 10.0) / 365.0).cos()
}

/// Local solar hour for a UTC hour at a longitude.
pub fn local_solar_hour(utc_hour: f64, lon: f64) -> f64 {
    crate::math::rem_euclid(utc_hour + lon / 15.0, 24.0)
}

/// Sun elevation in degrees from spherical solar geometry.
pub fn sun_elevation(l: GeoLocation, t: Timestamp) -> f64 {
    let delta = declination(t.month()).to_radians();
    let hour_local = t.hour() as f64 + l.lon() / 15.0;
    let h = (15.0 * (hour_local - 12.0)).to_radians();
    let phi = l.lat().to_radians();
    let s = phi.sin() * delta.sin() + phi.cos() * delta.cos() * h.cos();
    s.clamp(-1.0, 1.0).asin().to_degrees()
}

/// Hour angle in degrees, wrapped into [-180, 180). Negative in the morning.
pub fn hour_angle(l: GeoLocation, t: Timestamp) -> f64 {
    let lh = local_solar_hour(t.hour() as f64, l.lon());
    15.0 * (lh - 12.0)
}

/// Illumination ramp from the sun's elevation.
pub fn daylight_from_elevation(elevation: f64) -> f64 {
    smoothstep(elevation, DAYLIGHT_FLOOR_DEG, DAYLIGHT_CEIL_DEG)
}

/// Phase angle (radians) of the local seasonal cycle; 0 at the summer peak.
fn season_angle(lat: f64, month: u32) -> f64 {
    let peak = if lat >= 0.0 { 7.0 } else { 1.0 };
    core::f64::consts::TAU * (month as f64 - peak) / 12.0
}

pub fn season_phase(lat: f64, month: u32) -> f64 {
    0.5 + 0.5 * season_angle(lat, month).cos()
}

/// Deterministic, noise-free part of the temperature proxy.
pub fn mean_temperature(lat: f64, season: f64, daylight: f64) -> f64 {
    0.8 * season - lat.abs() / 90.0 + 0.35 + 0.08 * daylight
}

/// Snow appears once the temperature proxy drops below zero.
pub fn snow_from_temperature(temperature: f64) -> f64 {
    clamp01(-temperature / 0.15)
}

pub fn derive_latents(cam: &CameraSpec, t: Timestamp, sample_seed: u64) -> SceneLatents {
    let lat = cam.location.lat();
    let sun_elevation = sun_elevation(cam.location, t);
    let daylight = daylight_from_elevation(sun_elevation);
    let angle = season_angle(lat, t.month());
    let season_phase = 0.5 + 0.5 * angle.cos();
    let season_trend = -angle.sin();

    let mut rng = rng_from(&[sample_seed, 0x1A7E]);
    let temp_noise = Normal::new(0.0, 0.05).expect("valid sigma").sample(&mut rng);
    let temperature_proxy = mean_temperature(lat, season_phase, daylight) + temp_noise;
    let snow_cover = snow_from_temperature(temperature_proxy);
    let greenness = clamp01(cam.vegetation_fraction * (0.2 + 0.8 * season_phase) * (1.0 - snow_cover));
    use rand::Rng;
    let cloud_noise: f64 = rng.random_range(-0.2..0.2);
    let cloudiness = clamp01(0.12 + 0.3 * (1.0 - season_phase) + cloud_noise);

    let local_hour = local_solar_hour(t.hour() as f64, cam.location.lon());
    let lights = if daylight < 0.2 {
        let evening = if local_hour >= 12.0 { 0.9 } else { 0.35 };
        cam.urbanness * evening
    } else {
        0.0
    };

    SceneLatents {
        sun_elevation,
        daylight,
        season_phase,
        season_trend,
        temperature_proxy,
        snow_cover,
        greenness,
        cloudiness,
        lights,
        local_hour,
        noise_seed: derive_seed(&[sample_seed, 0xA77]),
    }
}
