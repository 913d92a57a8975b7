//! Canonical data types and the input encodings fed to the network.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

/// Number of transient attributes carried by every sample.
pub const ATTRIBUTE_COUNT: usize = 40;

/// Stand-in names for the transient attribute slots, in slot order.
pub const ATTRIBUTE_NAMES: [&str; ATTRIBUTE_COUNT] = [
    "dirty",
    "daylight",
    "night",
    "sunrise/sunset",
    "dawn/dusk",
    "sunny",
    "clouds",
    "fog",
    "storm",
    "snow",
    "warm",
    "cold",
    "busy",
    "beautiful",
    "flowers",
    "spring",
    "summer",
    "autumn",
    "winter",
    "glowing",
    "colorful",
    "dull",
    "rugged",
    "midday",
    "dark",
    "bright",
    "dry",
    "moist",
    "windy",
    "rain",
    "ice",
    "lush",
    "boring",
    "mysterious",
    "gloomy",
    "stressful",
    "sentimental",
    "calm",
    "soothing",
    "hot",
];

/// Slot index of a named attribute.
pub fn attribute_index(name: &str) -> Option<usize> {
    ATTRIBUTE_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ValidationError {
    #[error("month {0} outside 1..=12")]
    Month(i64),
    #[error("hour {0} outside 0..=23")]
    Hour(i64),
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} is not finite")]
    Longitude(f64),
    #[error("expected {expected} transient attributes, got {got}")]
    AttributeArity { expected: usize, got: usize },
    #[error("attribute {index} = {value} outside [0, 1]")]
    AttributeRange { index: usize, value: f64 },
    #[error("image buffer has {got} bytes, expected {expected}")]
    ImageSize { expected: usize, got: usize },
    #[error("jitter magnitude {0} is negative")]
    NegativeJitter(f64),
}

/// Capture time at month/hour granularity (UTC).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Timestamp {
    month: u8,
    hour: u8,
}

const MONTH_ABBR: [&str; 12] = [
    "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
];

impl Timestamp {
    /// Number of distinct (month, hour) pairs.
    pub const GRID: usize = 12 * 24;

    pub fn new(month: u32, hour: u32) -> Result<Self, ValidationError> {
        if !(1..=12).contains(&month) {
            return Err(ValidationError::Month(month as i64));
        }
        if hour > 23 {
            return Err(ValidationError::Hour(hour as i64));
        }
        Ok(Self {
            month: month as u8,
            hour: hour as u8,
        })
    }

    pub fn month(self) -> u32 {
        self.month as u32
    }

    pub fn hour(self) -> u32 {
        self.hour as u32
    }

    /// Row-major position in the 12×24 grid: `(month-1)*24 + hour`.
    pub fn index(self) -> usize {
        (self.month as usize - 1) * 24 + self.hour as usize
    }

    pub fn from_index(index: usize) -> Self {
        assert!(index < Self::GRID, "timestamp index {index} out of range");
        Self {
            month: (index / 24 + 1) as u8,
            hour: (index % 24) as u8,
        }
    }

    /// All 288 timestamps in grid order.
    pub fn all() -> impl Iterator<Item = Timestamp> {
        (0..Self::GRID).map(Self::from_index)
    }

    /// Shift by whole months and hours with calendar wraparound on both axes.
    /// Hour overflow does not carry into the month.
    pub fn shifted(self, months: i32, hours: i32) -> Self {
        let m = (self.month as i32 - 1 + months).rem_euclid(12) + 1;
        let h = (self.hour as i32 + hours).rem_euclid(24);
        Self {
            month: m as u8,
            hour: h as u8,
        }
    }

    /// Cyclic hour distance in 0..=12.
    pub fn hour_distance(self, other: Timestamp) -> u32 {
        let d = (self.hour as i32 - other.hour as i32).rem_euclid(24) as u32;
        d.min(24 - d)
    }

    /// Cyclic month distance in 0..=6.
    pub fn month_distance(self, other: Timestamp) -> u32 {
        let d = (self.month as i32 - other.month as i32).rem_euclid(12) as u32;
        d.min(12 - d)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (h12, suffix) = match self.hour {
            0 => (12, "AM"),
            1..=11 => (self.hour, "AM"),
            12 => (12, "PM"),
            h => (h - 12, "PM"),
        };
        write!(f, "({}, {}{})", MONTH_ABBR[self.month as usize - 1], h12, suffix)
    }
}

/// Month and hour each mapped linearly onto [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledTimestamp {
    pub m: f64,
    pub h: f64,
}

impl ScaledTimestamp {
    /// Inverse of [`scale_timestamp`]; exact on the 12×24 grid.
    pub fn unscale(self) -> Result<Timestamp, ValidationError> {
        let month = ((self.m + 1.0) * 11.0 / 2.0).round() as i64 + 1;
        let hour = ((self.h + 1.0) * 23.0 / 2.0).round() as i64;
        if !(1..=12).contains(&month) {
            return Err(ValidationError::Month(month));
        }
        if !(0..=23).contains(&hour) {
            return Err(ValidationError::Hour(hour));
        }
        Timestamp::new(month as u32, hour as u32)
    }
}

/// January 0h maps to (-1, -1) and December 23h to (1, 1).
pub fn scale_timestamp(t: Timestamp) -> ScaledTimestamp {
    ScaledTimestamp {
        m: 2.0 * (t.month as f64 - 1.0) / 11.0 - 1.0,
        h: 2.0 * t.hour as f64 / 23.0 - 1.0,
    }
}

/// Latitude/longitude in degrees. Longitude is kept in (-180, 180].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoLocation {
    lat: f64,
    lon: f64,
}

/// Wrap a longitude into (-180, 180].
pub fn wrap_longitude(lon: f64) -> f64 {
    let mut l = crate::math::rem_euclid(lon + 180.0, 360.0) - 180.0;
    if l <= -180.0 {
        l += 360.0;
    }
    l
}

impl GeoLocation {
    pub fn new(lat: f64, lon: f64) -> Result<Self, ValidationError> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(ValidationError::Latitude(lat));
        }
        if !lon.is_finite() {
            return Err(ValidationError::Longitude(lon));
        }
        Ok(Self {
            lat,
            lon: wrap_longitude(lon),
        })
    }

    pub fn lat(self) -> f64 {
        self.lat
    }

    pub fn lon(self) -> f64 {
        self.lon
    }
}

/// Earth-centered earth-fixed position on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcefLocation {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EcefLocation {
    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

/// Spherical Earth, zero altitude: coordinates divided by the Earth radius.
pub fn geo_to_ecef(l: GeoLocation) -> EcefLocation {
    let phi = l.lat.to_radians();
    let lambda = l.lon.to_radians();
    EcefLocation {
        x: phi.cos() * lambda.cos(),
        y: phi.cos() * lambda.sin(),
        z: phi.sin(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    Lat,
    Lon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Add `±delta` degrees to one coordinate. Latitude is clamped to [-90, 90],
/// longitude wraps into (-180, 180].
pub fn jitter_location(
    l: GeoLocation,
    delta: f64,
    axis: Axis,
    sign: Sign,
) -> Result<GeoLocation, ValidationError> {
    // written this way so NaN is rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(delta >= 0.0) {
        return Err(ValidationError::NegativeJitter(delta));
    }
    let d = delta * sign.factor();
    Ok(match axis {
        Axis::Lat => GeoLocation {
            lat: (l.lat + d).clamp(-90.0, 90.0),
            lon: l.lon,
        },
        Axis::Lon => GeoLocation {
            lat: l.lat,
            lon: wrap_longitude(l.lon + d),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ImageRole {
    Ground,
    Satellite,
}

/// Square-or-rectangular RGB image. Pixels are stored as 8-bit codes `p` and
/// exposed as reals `2p/255 - 1` in [-1, 1], so PNG storage is lossless.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    role: ImageRole,
    data: Vec<u8>,
}

impl fmt::Debug for ImageTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageTensor")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("role", &self.role)
            .finish_non_exhaustive()
    }
}

/// Real value of an 8-bit code.
#[inline]
pub fn code_to_real(p: u8) -> f64 {
    2.0 * p as f64 / 255.0 - 1.0
}

/// Nearest 8-bit code for a real in [-1, 1] (values outside are clamped).
#[inline]
pub fn real_to_code(v: f64) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round()) as u8
}

impl ImageTensor {
    /// From interleaved RGB bytes, row-major (`height * width * 3`).
    pub fn from_rgb8(
        height: usize,
        width: usize,
        role: ImageRole,
        data: Vec<u8>,
    ) -> Result<Self, ValidationError> {
        if data.len() != height * width * 3 {
            return Err(ValidationError::ImageSize {
                expected: height * width * 3,
                got: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            role,
            data,
        })
    }

    /// Quantize a real-valued RGB field onto 8-bit codes.
    pub fn from_fn(
        height: usize,
        width: usize,
        role: ImageRole,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for v in f(y, x) {
                    data.push(real_to_code(v));
                }
            }
        }
        Self {
            height,
            width,
            role,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn role(&self) -> ImageRole {
        self.role
    }

    pub fn rgb8(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        code_to_real(self.data[(y * self.width + x) * 3 + c])
    }

    /// Append the pixels in channel-major (CHW) order as reals.
    pub fn extend_chw(&self, out: &mut Vec<f64>) {
        let plane = self.height * self.width;
        out.reserve(plane * 3);
        for c in 0..3 {
            out.extend(self.data[c..].iter().step_by(3).take(plane).map(|&p| code_to_real(p)));
        }
    }

    pub fn to_chw(&self) -> Vec<f64> {
        let mut v = Vec::new();
        self.extend_chw(&mut v);
        v
    }

    /// Mean of (R+G+B)/3 over the whole image, in [-1, 1].
    pub fn mean_luminance(&self) -> f64 {
        let s: f64 = self.data.iter().map(|&p| code_to_real(p)).sum();
        s / self.data.len() as f64
    }
}

/// Fixed-length vector of scene descriptors in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TransientAttributes {
    values: Vec<f64>,
}

impl TryFrom<Vec<f64>> for TransientAttributes {
    type Error = ValidationError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<TransientAttributes> for Vec<f64> {
    fn from(a: TransientAttributes) -> Self {
        a.values
    }
}

impl TransientAttributes {
    pub fn new(values: Vec<f64>) -> Result<Self, ValidationError> {
        if values.len() != ATTRIBUTE_COUNT {
            return Err(ValidationError::AttributeArity {
                expected: ATTRIBUTE_COUNT,
                got: values.len(),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(ValidationError::AttributeRange { index, value });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        attribute_index(name).map(|i| self.values[i])
    }
}

/// One observation: ground photo, basemap tile, location, true time and the
/// oracle transient attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub camera_id: String,
    pub ground: ImageTensor,
    /// Shared between all samples of a camera; never depends on the timestamp.
    pub satellite: Arc<ImageTensor>,
    pub location: GeoLocation,
    pub timestamp: Timestamp,
    pub attributes: TransientAttributes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Consistent = 0,
    Inconsistent = 1,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Consistent => 0.0,
            Label::Inconsistent => 1.0,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

/// A sample (by index into its sample list) paired with an alleged timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationTuple {
    pub sample: usize,
    pub alleged: Timestamp,
    pub label: Label,
}

impl VerificationTuple {
    pub fn consistent(sample: usize, samples: &[Sample]) -> Self {
        Self {
            sample,
            alleged: samples[sample].timestamp,
            label: Label::Consistent,
        }
    }

    /// Tuple identifier used by score files and tamper exports.
    pub fn id(&self, samples: &[Sample]) -> String {
        alloc::format!("{}:{}", samples[self.sample].id, self.label.as_u8())
    }
}

/// Softmax output of the consistency branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyPrediction {
    pub p: [f64; 2],
}

impl ConsistencyPrediction {
    /// Numerically stable two-way softmax.
    pub fn from_logits(z0: f64, z1: f64) -> Self {
        let m = z0.max(z1);
        let e0 = (z0 - m).exp();
        let e1 = (z1 - m).exp();
        let s = e0 + e1;
        Self { p: [e0 / s, e1 / s] }
    }

    pub fn p_consistent(self) -> f64 {
        self.p[0]
    }

    pub fn p_inconsistent(self) -> f64 {
        self.p[1]
    }

    pub fn confidence(self) -> f64 {
        self.p[0].max(self.p[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ts(m: u32, h: u32) -> Timestamp {
        Timestamp::new(m, h).unwrap()
    }

    #[test]
    fn timestamp_endpoints_scale_exactly() {
        assert_eq!(scale_timestamp(ts(1, 0)), ScaledTimestamp { m: -1.0, h: -1.0 });
        assert_eq!(scale_timestamp(ts(12, 23)), ScaledTimestamp { m: 1.0, h: 1.0 });
        let mid = scale_timestamp(ts(7, 12));
        assert!((mid.m - (2.0 * 6.0 / 11.0 - 1.0)).abs() < 1e-15);
        assert!((mid.h - (2.0 * 12.0 / 23.0 - 1.0)).abs() < 1e-15);
        assert!((mid.m - 0.090_909_090_9).abs() < 1e-9);
        assert!((mid.h - 0.043_478_260_8).abs() < 1e-9);
    }

    #[test]
    fn timestamp_validation() {
        assert_eq!(Timestamp::new(0, 3), Err(ValidationError::Month(0)));
        assert_eq!(Timestamp::new(13, 3), Err(ValidationError::Month(13)));
        assert_eq!(Timestamp::new(3, 24), Err(ValidationError::Hour(24)));
    }

    #[test]
    fn scaling_is_invertible_on_grid() {
        let mut seen = alloc::collections::BTreeSet::new();
        for t in Timestamp::all() {
            let s = scale_timestamp(t);
            assert!(seen.insert((s.m.to_bits(), s.h.to_bits())));
            assert_eq!(s.unscale().unwrap(), t);
        }
        assert_eq!(seen.len(), 288);
    }

    #[test]
    fn display_uses_12h_clock() {
        assert_eq!(alloc::format!("{}", ts(12, 11)), "(Dec, 11AM)");
        assert_eq!(alloc::format!("{}", ts(1, 13)), "(Jan, 1PM)");
        assert_eq!(alloc::format!("{}", ts(6, 0)), "(Jun, 12AM)");
    }

    #[test]
    fn ecef_closed_forms() {
        let e = geo_to_ecef(GeoLocation::new(0.0, 0.0).unwrap());
        assert!((e.x - 1.0).abs() < 1e-15 && e.y.abs() < 1e-15 && e.z.abs() < 1e-15);
        for lon in [-170.0, 0.0, 33.0, 180.0] {
            let p = geo_to_ecef(GeoLocation::new(90.0, lon).unwrap());
            assert!(p.x.abs() < 1e-15 && p.y.abs() < 1e-15 && (p.z - 1.0).abs() < 1e-15);
        }
        let q = geo_to_ecef(GeoLocation::new(45.0, 45.0).unwrap());
        assert!((q.x - 0.5).abs() < 1e-12);
        assert!((q.y - 0.5).abs() < 1e-12);
        assert!((q.z - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn jitter_examples() {
        let l = GeoLocation::new(10.0, 20.0).unwrap();
        let j = jitter_location(l, 5.0, Axis::Lon, Sign::Plus).unwrap();
        assert_eq!((j.lat(), j.lon()), (10.0, 25.0));

        let polar = GeoLocation::new(89.0, 0.0).unwrap();
        let j = jitter_location(polar, 5.0, Axis::Lat, Sign::Plus).unwrap();
        assert_eq!((j.lat(), j.lon()), (90.0, 0.0));

        let dateline = GeoLocation::new(0.0, 179.0).unwrap();
        let j = jitter_location(dateline, 15.0, Axis::Lon, Sign::Plus).unwrap();
        assert_eq!(j.lat(), 0.0);
        assert!((j.lon() - (179.0 + 15.0 - 360.0)).abs() < 1e-12);

        assert!(jitter_location(l, -1.0, Axis::Lat, Sign::Plus).is_err());
    }

    #[test]
    fn longitude_wraps_into_half_open_range() {
        assert_eq!(wrap_longitude(180.0), 180.0);
        assert_eq!(wrap_longitude(-180.0), 180.0);
        assert_eq!(wrap_longitude(190.0), -170.0);
        assert_eq!(wrap_longitude(-540.0), 180.0);
    }

    #[test]
    fn attributes_enforce_arity_and_range() {
        assert!(matches!(
            TransientAttributes::new(alloc::vec![0.5; 39]),
            Err(ValidationError::AttributeArity { got: 39, .. })
        ));
        let mut v = alloc::vec![0.5; 40];
        v[3] = 1.5;
        assert!(matches!(
            TransientAttributes::new(v),
            Err(ValidationError::AttributeRange { index: 3, .. })
        ));
        let a = TransientAttributes::new(alloc::vec![0.25; 40]).unwrap();
        assert_eq!(a.get("daylight"), Some(0.25));
        assert_eq!(a.get("nonexistent"), None);
    }

    #[test]
    fn softmax_pair_sums_to_one() {
        for (a, b) in [(0.0, 0.0), (800.0, -800.0), (-3.0, 2.5)] {
            let p = ConsistencyPrediction::from_logits(a, b);
            assert!((p.p[0] + p.p[1] - 1.0).abs() < 1e-12);
            assert!(p.p[0] >= 0.0 && p.p[1] >= 0.0);
        }
    }

    #[test]
    fn shifting_wraps_both_axes() {
        assert_eq!(ts(12, 23).shifted(2, 2), ts(2, 1));
        assert_eq!(ts(1, 0).shifted(-1, -1), ts(12, 23));
        assert_eq!(ts(3, 5).hour_distance(ts(3, 22)), 7);
        assert_eq!(ts(1, 5).month_distance(ts(11, 5)), 2);
    }

    #[test]
    fn image_codes_round_trip() {
        for p in 0..=255u8 {
            assert_eq!(real_to_code(code_to_real(p)), p);
        }
        let img = ImageTensor::from_fn(2, 3, ImageRole::Ground, |y, x| {
            [y as f64 * 0.5 - 0.5, x as f64 * 0.25, -1.0]
        });
        let chw = img.to_chw();
        assert_eq!(chw.len(), 18);
        assert_eq!(chw[0], img.get(0, 0, 0));
        assert_eq!(chw[6 + 4], img.get(1, 1, 1));
        assert_eq!(chw[17], -1.0);
    }

    proptest! {
        #[test]
        fn ecef_has_unit_norm(lat in -90.0f64..=90.0, lon in -180.0f64..=180.0) {
            let e = geo_to_ecef(GeoLocation::new(lat, lon).unwrap());
            prop_assert!((e.norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn jitter_then_unjitter_is_identity(
            lat in -80.0f64..80.0,
            lon in -160.0f64..160.0,
            delta in 0.0f64..10.0,
            lat_axis in any::<bool>(),
            plus in any::<bool>(),
        ) {
            let l = GeoLocation::new(lat, lon).unwrap();
            let axis = if lat_axis { Axis::Lat } else { Axis::Lon };
            let (s, back) = if plus { (Sign::Plus, Sign::Minus) } else { (Sign::Minus, Sign::Plus) };
            let j = jitter_location(l, delta, axis, s).unwrap();
            let r = jitter_location(j, delta, axis, back).unwrap();
            prop_assert!((r.lat() - lat).abs() < 1e-9);
            prop_assert!((r.lon() - lon).abs() < 1e-9);
        }
    }
}
