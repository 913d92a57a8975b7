//! JSON-Lines dataset manifests with PNG images stored next to them.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! <dir>/manifest.jsonl        one record per line
//! <dir>/ground/<id>.png       ground-level image of each record
//! <dir>/satellite/<cam>.png   one tile per camera (per record if they differ)
//! ```
//!
//! Paths inside the manifest are relative to the manifest's directory.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chronocheck_core::types::{
    GeoLocation, ImageRole, ImageTensor, Sample, Timestamp, TransientAttributes, ATTRIBUTE_COUNT,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub camera_id: String,
    pub lat: f64,
    pub lon: f64,
    pub month: u32,
    pub hour: u32,
    pub ground_path: String,
    pub satellite_path: String,
    pub attributes: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("record {id}: expected {ATTRIBUTE_COUNT} attributes, found {found}")]
    Arity { id: String, found: usize },
    #[error("record {id}: {message}")]
    Invalid { id: String, message: String },
    #[error("record {id}: duplicate id")]
    DuplicateId { id: String },
    #[error("record {id}: image {path}: {message}")]
    Image { id: String, path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ManifestError + '_ {
    move |source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// File-name-safe form of an id.
fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

pub fn write_png(path: &Path, img: &ImageTensor) -> Result<(), String> {
    image::save_buffer_with_format(
        path,
        img.rgb8(),
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| e.to_string())
}

pub fn read_png(path: &Path, role: ImageRole) -> Result<ImageTensor, String> {
    let img = image::open(path).map_err(|e| e.to_string())?.into_rgb8();
    let (w, h) = img.dimensions();
    ImageTensor::from_rgb8(h as usize, w as usize, role, img.into_raw()).map_err(|e| e.to_string())
}

/// Write `samples` and their images under `dir`; returns the manifest path.
pub fn write_manifest(samples: &[Sample], dir: &Path) -> Result<PathBuf, ManifestError> {
    let mut seen = HashSet::new();
    for s in samples {
        if !seen.insert(s.id.as_str()) {
            return Err(ManifestError::DuplicateId { id: s.id.clone() });
        }
    }
    for sub in ["ground", "satellite"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(io_err(&p))?;
    }

    // Assign file names, sharing one satellite file per camera when possible.
    let mut ground_names = HashSet::new();
    let mut camera_tiles: HashMap<&str, (String, &ImageTensor)> = HashMap::new();
    let mut jobs: Vec<(PathBuf, &ImageTensor, &str)> = Vec::new();
    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let mut stem = file_stem(&s.id);
        if !ground_names.insert(stem.clone()) {
            stem = format!("{stem}-{i}");
            ground_names.insert(stem.clone());
        }
        let ground_path = format!("ground/{stem}.png");
        jobs.push((dir.join(&ground_path), &s.ground, &s.id));

        let satellite_path = match camera_tiles.get(s.camera_id.as_str()) {
            Some((path, tile)) if **tile == *s.satellite => path.clone(),
            Some(_) => {
                let path = format!("satellite/{stem}.png");
                jobs.push((dir.join(&path), &s.satellite, &s.id));
                path
            }
            None => {
                let path = format!("satellite/camera-{}.png", file_stem(&s.camera_id));
                jobs.push((dir.join(&path), &s.satellite, &s.id));
                camera_tiles.insert(&s.camera_id, (path.clone(), &s.satellite));
                path
            }
        };
        records.push(ManifestRecord {
            id: s.id.clone(),
            camera_id: s.camera_id.clone(),
            lat: s.location.lat(),
            lon: s.location.lon(),
            month: s.timestamp.month(),
            hour: s.timestamp.hour(),
            ground_path,
            satellite_path,
            attributes: s.attributes.values().to_vec(),
        });
    }
    jobs.par_iter().try_for_each(|(path, img, id)| {
        write_png(path, img).map_err(|message| ManifestError::Image {
            id: id.to_string(),
            path: path.clone(),
            message,
        })
    })?;

    let path = dir.join(MANIFEST_FILE);
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(file);
    for r in &records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(w, "{line}").map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}

/// Parse manifest lines without touching the images. Blank lines are skipped.
pub fn read_records(path: &Path) -> Result<Vec<ManifestRecord>, ManifestError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ManifestRecord = serde_json::from_str(&line).map_err(|e| ManifestError::Malformed {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        if r.attributes.len() != ATTRIBUTE_COUNT {
            return Err(ManifestError::Arity {
                id: r.id,
                found: r.attributes.len(),
            });
        }
        if !ids.insert(r.id.clone()) {
            return Err(ManifestError::DuplicateId { id: r.id });
        }
        out.push(r);
    }
    Ok(out)
}

/// Load a manifest and all referenced images.
pub fn read_manifest(path: &Path) -> Result<Vec<Sample>, ManifestError> {
    let records = read_records(path)?;
    let base = path.parent().unwrap_or(Path::new("."));

    let mut tile_paths: Vec<&str> = records.iter().map(|r| r.satellite_path.as_str()).collect();
    tile_paths.sort_unstable();
    tile_paths.dedup();
    let owner = |p: &str| records.iter().find(|r| r.satellite_path == p).map(|r| r.id.clone()).unwrap_or_default();
    let load = |id: String, rel: &str, role| {
        let full = base.join(rel);
        read_png(&full, role).map_err(|message| ManifestError::Image { id, path: full, message })
    };
    let tiles: HashMap<&str, Arc<ImageTensor>> = tile_paths
        .par_iter()
        .map(|&p| Ok((p, Arc::new(load(owner(p), p, ImageRole::Satellite)?))))
        .collect::<Result<_, ManifestError>>()?;

    records
        .par_iter()
        .map(|r| {
            let invalid = |e: chronocheck_core::types::ValidationError| ManifestError::Invalid {
                id: r.id.clone(),
                message: e.to_string(),
            };
            Ok(Sample {
                id: r.id.clone(),
                camera_id: r.camera_id.clone(),
                ground: load(r.id.clone(), &r.ground_path, ImageRole::Ground)?,
                satellite: Arc::clone(&tiles[r.satellite_path.as_str()]),
                location: GeoLocation::new(r.lat, r.lon).map_err(invalid)?,
                timestamp: Timestamp::new(r.month, r.hour).map_err(invalid)?,
                attributes: TransientAttributes::new(r.attributes.clone()).map_err(invalid)?,
            })
        })
        .collect()
}
