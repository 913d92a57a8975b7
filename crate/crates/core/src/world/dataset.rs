#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{derive_latents, oracle_attributes, render, CameraSpec, SceneLatents, World};
use crate::rng::{derive_seed, rng_from};
use crate::types::{GeoLocation, Sample, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetParams {
    pub n_cameras: usize,
    pub samples_per_camera: usize,
    pub seed: u64,
    pub image_size: usize,
}

/// Provenance of a generated sample, kept alongside the plain sample list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub camera_index: usize,
    pub sample_seed: u64,
    pub latents: SceneLatents,
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub params: DatasetParams,
    pub world: World,
    pub cameras: Vec<CameraSpec>,
    pub samples: Vec<Sample>,
    pub meta: Vec<SampleMeta>,
}

/// Probability that a capture falls in the 10h-20h local window.
const DAYTIME_SHARE: f64 = 0.75;

fn camera_location(seed: u64, index: usize) -> GeoLocation {
    let mut r = rng_from(&[seed, 0xCA7, index as u64]);
    let magnitude: f64 = r.random_range(5.0..62.0);
    let lat = if index % 2 == 0 { magnitude } else { -magnitude };
    let lon: f64 = r.random_range(-180.0..180.0);
    GeoLocation::new(lat, lon).expect("generated location is valid")
}

/// Local hour concentrated on 10h-20h, converted to a UTC timestamp.
fn draw_timestamp(rng: &mut impl Rng, lon: f64) -> Timestamp {
    let local: i32 = if rng.random_bool(DAYTIME_SHARE) {
        rng.random_range(10..=20)
    } else {
        rng.random_range(0..=23)
    };
    let month = rng.random_range(1..=12u32);
    let offset = (lon / 15.0).round() as i32;
    let utc = (local - offset).rem_euclid(24) as u32;
    Timestamp::new(month, utc).expect("valid timestamp")
}

impl GeneratedDataset {
    pub fn generate(params: DatasetParams) -> Self {
        assert!(params.n_cameras > 0 && params.samples_per_camera > 0, "counts must be positive");
        let world = World::new(params.seed);
        let cameras: Vec<CameraSpec> = (0..params.n_cameras)
            .map(|c| world.camera_at(format!("cam-{c:03}"), camera_location(params.seed, c)))
            .collect();
        let mut samples = Vec::with_capacity(params.n_cameras * params.samples_per_camera);
        let mut meta = Vec::with_capacity(samples.capacity());
        for (ci, cam) in cameras.iter().enumerate() {
            let satellite = Arc::new(render::render_satellite(cam, params.image_size));
            for si in 0..params.samples_per_camera {
                let sample_seed = derive_seed(&[params.seed, ci as u64, si as u64]);
                let mut r = rng_from(&[sample_seed, 0x7135]);
                let timestamp = draw_timestamp(&mut r, cam.location.lon());
                let latents = derive_latents(cam, timestamp, sample_seed);
                let ground = render::render_ground_with(cam, timestamp, &latents, sample_seed, params.image_size);
                samples.push(Sample {
                    id: format!("{}-{si:04}", cam.camera_id),
                    camera_id: cam.camera_id.clone(),
                    ground,
                    satellite: Arc::clone(&satellite),
                    location: cam.location,
                    timestamp,
                    attributes: oracle_attributes(&latents),
                });
                meta.push(SampleMeta {
                    camera_index: ci,
                    sample_seed,
                    latents,
                });
            }
        }
        Self {
            params,
            world,
            cameras,
            samples,
            meta,
        }
    }

    /// Camera spec of a sample.
    pub fn camera_of(&self, sample: usize) -> &CameraSpec {
        &self.cameras[self.meta[sample].camera_index]
    }
}

/// Generate `n_cameras * samples_per_camera` samples.
pub fn generate_dataset(n_cameras: usize, samples_per_camera: usize, seed: u64, image_size: usize) -> Vec<Sample> {
    GeneratedDataset::generate(DatasetParams {
        n_cameras,
        samples_per_camera,
        seed,
        image_size,
    })
    .samples
}
