use alloc::vec::Vec;

use super::SceneLatents;
use crate::math::{clamp01, smoothstep};
use crate::rng::unit_hash;
use crate::types::{attribute_index, TransientAttributes, ATTRIBUTE_COUNT, ATTRIBUTE_NAMES};

/// Slots with no grounding in the scene latents; filled with seeded noise.
pub const NOISE_ATTRIBUTES: [&str; 8] = [
    "busy",
    "beautiful",
    "boring",
    "mysterious",
    "stressful",
    "sentimental",
    "calm",
    "soothing",
];

/// Ground-truth transient attributes for a scene.
pub fn oracle_attributes(l: &SceneLatents) -> TransientAttributes {
    let d = l.daylight;
    let c = l.cloudiness;
    let s = l.season_phase;
    let sn = l.snow_cover;
    let g = l.greenness;
    let temp = l.temperature_proxy;
    let mid_season = 1.0 - (2.0 * s - 1.0).abs();
    let bright = clamp01(d * (1.0 - 0.4 * c) + 0.3 * sn * d);
    let colorful = clamp01(d * (0.3 + 0.7 * g));

    let mut values = Vec::with_capacity(ATTRIBUTE_COUNT);
    for (slot, name) in ATTRIBUTE_NAMES.iter().enumerate() {
        let v = match *name {
            "dirty" => 0.6 * (1.0 - g) * (1.0 - sn),
            "daylight" => d,
            "night" => 1.0 - d,
            "sunrise/sunset" => 1.0 - (l.sun_elevation - 2.0).abs() / 8.0,
            "dawn/dusk" => 1.0 - (l.sun_elevation + 3.0).abs() / 6.0,
            "sunny" => d * (1.0 - c),
            "clouds" => c,
            "fog" => (c - 0.35) / 0.4,
            "storm" => (c - 0.5) / 0.3 * (1.0 - 0.5 * d),
            "snow" => sn,
            "warm" => 1.5 * temp,
            "cold" => 0.6 - 1.5 * temp,
            "flowers" => 1.5 * g * l.season_trend.max(0.0),
            "spring" => 0.5 * (1.0 + l.season_trend) * mid_season,
            "summer" => s,
            "autumn" => 0.5 * (1.0 - l.season_trend) * mid_season,
            "winter" => 1.0 - s,
            "glowing" => l.lights,
            "colorful" => colorful,
            "dull" => 1.0 - colorful,
            "rugged" => 0.3 + 0.4 * (1.0 - g),
            "midday" => smoothstep(l.sun_elevation, 25.0, 60.0),
            "dark" => 1.0 - bright,
            "bright" => bright,
            "dry" => 1.0 - g - 0.5 * sn,
            "moist" => 0.6 * c + 0.4 * sn,
            "windy" => 0.8 * c + 0.2 * (1.0 - s),
            "rain" => (c - 0.45) / 0.35 * (1.0 - sn),
            "ice" => 1.5 * sn * (1.0 - s),
            "lush" => g,
            "gloomy" => c * (1.0 - 0.5 * d) + 0.3 * (1.0 - d),
            "hot" => 2.5 * (temp - 0.45),
            _ => unit_hash(&[l.noise_seed, slot as u64]),
        };
        values.push(clamp01(v));
    }
    TransientAttributes::new(values).expect("oracle attributes are in range")
}

/// Whether a slot is one of the uninformative noise attributes.
pub fn is_noise_slot(slot: usize) -> bool {
    NOISE_ATTRIBUTES
        .iter()
        .any(|n| attribute_index(n) == Some(slot))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_daylight_maps_directly() {
        let l = SceneLatents {
            daylight: 1.0,
            sun_elevation: 60.0,
            ..Default::default()
        };
        let a = oracle_attributes(&l);
        assert_eq!(a.get("daylight"), Some(1.0));
        assert_eq!(a.get("night"), Some(0.0));
    }

    #[test]
    fn snow_maps_directly() {
        let l = SceneLatents {
            snow_cover: 0.8,
            ..Default::default()
        };
        assert_eq!(oracle_attributes(&l).get("snow"), Some(0.8));
    }

    #[test]
    fn zero_latents_keep_every_slot_in_range() {
        let a = oracle_attributes(&SceneLatents::default());
        assert_eq!(a.values().len(), 40);
        for name in NOISE_ATTRIBUTES {
            let v = a.get(name).unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
        assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn noise_slots_vary_with_seed_only() {
        let mut l = SceneLatents::default();
        let slot = attribute_index("sentimental").unwrap();
        assert!(is_noise_slot(slot));
        assert!(!is_noise_slot(attribute_index("daylight").unwrap()));
        let a = oracle_attributes(&l).values()[slot];
        l.daylight = 0.7;
        assert_eq!(oracle_attributes(&l).values()[slot], a);
        l.noise_seed = 12345;
        assert_ne!(oracle_attributes(&l).values()[slot], a);
    }
}
