use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::shapes::RawShapeSpec;
use super::ShapeSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub id: u32,
    pub spec: ShapeSpec,
}

/// Shape specs keyed by unique id, stored as JSON:
/// `{"shapes": [{"id": 0, "kind": "sphere", "params": [0.4]}, ...]}`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub shapes: Vec<DatasetEntry>,
}

#[derive(Serialize, Deserialize)]
struct RawDataset {
    shapes: Vec<RawEntry>,
}

#[derive(Serialize, Deserialize)]
struct RawEntry {
    id: u32,
    #[serde(flatten)]
    spec: RawShapeSpec,
}

impl Dataset {
    pub fn new(shapes: Vec<DatasetEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &shapes {
            if !seen.insert(e.id) {
                return Err(Error::InvalidSpec(format!("duplicate shape id {}", e.id)));
            }
            e.spec.validate()?;
        }
        Ok(Dataset { shapes })
    }

    pub fn get(&self, id: u32) -> Option<&ShapeSpec> {
        self.shapes.iter().find(|e| e.id == id).map(|e| &e.spec)
    }

    pub fn from_json_str(text: &str) -> std::result::Result<Self, DatasetParseError> {
        let raw: RawDataset = serde_json::from_str(text).map_err(DatasetParseError::Json)?;
        let shapes = raw
            .shapes
            .into_iter()
            .map(|e| {
                Ok(DatasetEntry {
                    id: e.id,
                    spec: ShapeSpec::try_from(e.spec)?,
                })
            })
            .collect::<Result<Vec<_>>>()
            .map_err(DatasetParseError::Spec)?;
        Dataset::new(shapes).map_err(DatasetParseError::Spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            DatasetParseError::Json(source) => Error::Config {
                path: path.to_path_buf(),
                source,
            },
            DatasetParseError::Spec(e) => e,
        })
    }

    pub fn to_json_string(&self) -> String {
        let raw = RawDataset {
            shapes: self
                .shapes
                .iter()
                .map(|e| RawEntry {
                    id: e.id,
                    spec: e.spec.clone().into(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("dataset serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug)]
pub enum DatasetParseError {
    Json(serde_json::Error),
    Spec(Error),
}

/// Twelve procedural shapes: four spheres, four boxes and four ellipsoids.
pub fn toy_dataset() -> Dataset {
    let mut specs: Vec<ShapeSpec> = [0.3, 0.4, 0.5, 0.6].map(ShapeSpec::sphere).to_vec();
    specs.extend(
        [
            [0.35, 0.25, 0.2],
            [0.3, 0.3, 0.3],
            [0.45, 0.2, 0.25],
            [0.25, 0.4, 0.3],
        ]
        .map(ShapeSpec::cuboid),
    );
    specs.extend(
        [
            [0.55, 0.35, 0.3],
            [0.4, 0.5, 0.3],
            [0.3, 0.3, 0.55],
            [0.6, 0.4, 0.25],
        ]
        .map(ShapeSpec::ellipsoid),
    );
    Dataset::new(
        specs
            .into_iter()
            .enumerate()
            .map(|(i, spec)| DatasetEntry { id: i as u32, spec })
            .collect(),
    )
    .expect("toy dataset is valid")
}

/// Origin-centred spheres with the given radii, ids in order.
pub fn sphere_family(radii: &[f64]) -> Result<Dataset> {
    Dataset::new(
        radii
            .iter()
            .enumerate()
            .map(|(i, &r)| DatasetEntry {
                id: i as u32,
                spec: ShapeSpec::sphere(r),
            })
            .collect(),
    )
}
