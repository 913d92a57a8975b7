//! Content-aware verification of temporal image metadata.
//!
//! The crate judges whether an alleged capture time (month, hour) is consistent
//! with a ground-level photo, its geographic location and a time-invariant
//! basemap tile. It contains the multi-modal network with its transient
//! attribute branches, the training protocols, the tampering protocols used for
//! training and sensitivity studies, evaluation metrics, explanation tools and a
//! deterministic synthetic geo-temporal world used to exercise all of it.
//!
//! The crate is `no_std` + `alloc`. The default `std` feature only enables
//! runtime CPU feature detection in the matrix kernels and `std` math.
#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_op_in_unsafe_fn)]

extern crate alloc;

pub mod eval;
mod math;
pub mod explain;
pub mod model;
pub mod nn;
pub mod rng;
pub mod split;
pub mod studies;
pub mod tamper;
pub mod train;
pub mod types;
pub mod world;

pub use model::{Model, ModelConfig, ModelError, Modality, ModalitySet};
pub use types::{
    geo_to_ecef, jitter_location, scale_timestamp, Axis, ConsistencyPrediction, EcefLocation,
    GeoLocation, ImageRole, ImageTensor, Label, Sample, ScaledTimestamp, Sign, Timestamp,
    TransientAttributes, ValidationError, VerificationTuple, ATTRIBUTE_COUNT, ATTRIBUTE_NAMES,
};
