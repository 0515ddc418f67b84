use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{MdmdError, Result};
use crate::schema::SchemaSet;

use super::Sample;

/// First line of a manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub schema: String,
    pub landmark_count: usize,
}

/// One face. `image` is relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub image: String,
    pub bbox: [f64; 4],
    pub landmarks: Vec<[f64; 2]>,
    pub id: String,
}

/// A validated manifest. Images are decoded on demand by [`Dataset::load`].
#[derive(Clone, Debug)]
pub struct Dataset {
    pub header: ManifestHeader,
    pub records: Vec<Record>,
    pub dataset_id: usize,
    root: PathBuf,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn image_path(&self, index: usize) -> PathBuf {
        self.root.join(&self.records[index].image)
    }

    pub fn load(&self, index: usize) -> Result<Sample> {
        let rec = &self.records[index];
        let path = self.image_path(index);
        let image = load_rgb(&path)?;
        Ok(Sample {
            image,
            bbox: rec.bbox,
            landmarks: rec.landmarks.clone(),
            dataset_id: self.dataset_id,
            face_id: rec.id.clone(),
        })
    }

    /// Samples in manifest order.
    pub fn iter(&self) -> impl Iterator<Item = Result<Sample>> + '_ {
        (0..self.len()).map(|i| self.load(i))
    }
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    if !path.exists() {
        return Err(MdmdError::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path).map_err(|e| MdmdError::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(img.into_rgb8())
}

/// Reads and validates a manifest against `schemas`.
pub fn read_dataset(path: &Path, schemas: &SchemaSet) -> Result<Dataset> {
    if !path.exists() {
        return Err(MdmdError::MissingFile(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| MdmdError::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let parse_err = |line: usize, e: serde_json::Error| MdmdError::Parse(format!("{}:{}: {e}", path.display(), line + 1));

    let header: ManifestHeader = loop {
        match lines.next() {
            Some((n, line)) => {
                let line = line.map_err(|e| MdmdError::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| parse_err(n, e))?;
            }
            None => return Err(MdmdError::Parse(format!("{}: missing header line", path.display()))),
        }
    };
    let dataset_id = schemas.id_of(&header.schema)?;
    let schema = schemas.get(dataset_id)?;
    if header.landmark_count != schema.landmark_count {
        return Err(MdmdError::LandmarkCount {
            face_id: "<header>".into(),
            expected: schema.landmark_count,
            found: header.landmark_count,
        });
    }

    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut records = Vec::new();
    for (n, line) in lines {
        let line = line.map_err(|e| MdmdError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse_err(n, e))?;
        if rec.landmarks.len() != schema.landmark_count {
            return Err(MdmdError::LandmarkCount {
                face_id: rec.id,
                expected: schema.landmark_count,
                found: rec.landmarks.len(),
            });
        }
        if !(rec.bbox[2] > 0.0 && rec.bbox[3] > 0.0) {
            return Err(MdmdError::Config(format!("face `{}`: bbox must have positive size", rec.id)));
        }
        let image = root.join(&rec.image);
        if !image.exists() {
            return Err(MdmdError::MissingFile(image));
        }
        records.push(rec);
    }
    Ok(Dataset {
        header,
        records,
        dataset_id,
        root,
    })
}

/// Writes a header line followed by one JSON record per line.
pub fn write_manifest(path: &Path, header: &ManifestHeader, records: &[Record]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{}", serde_json::to_string(header).expect("header serializes")).unwrap();
    for r in records {
        writeln!(out, "{}", serde_json::to_string(r).expect("record serializes")).unwrap();
    }
    let mut f = File::create(path).map_err(|e| MdmdError::io(path, e))?;
    f.write_all(&out).map_err(|e| MdmdError::io(path, e))
}
