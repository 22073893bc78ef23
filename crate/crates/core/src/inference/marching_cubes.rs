use std::collections::HashMap;

use rayon::prelude::*;

use super::tables::TRIANGLE_TABLE;
use crate::error::{Error, Result};
use crate::geometry::{Mesh, Point3};

/// Cube corner offsets, bottom face counter-clockwise then top face.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Each cube edge as (lower corner, axis).
const EDGES: [(usize, usize); 12] = [
    (0, 0),
    (1, 1),
    (3, 0),
    (0, 1),
    (4, 0),
    (5, 1),
    (7, 0),
    (4, 1),
    (0, 2),
    (1, 2),
    (2, 2),
    (3, 2),
];

/// Scalar samples on a regular lattice over an axis-aligned cube. Values
/// are stored x-fastest: index `x + n * (y + n * z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub resolution: usize,
    pub min: f64,
    pub max: f64,
    pub values: Vec<f64>,
}

impl GridField {
    pub const DEFAULT_BOUND: f64 = 1.0;

    pub fn new(resolution: usize, min: f64, max: f64, values: Vec<f64>) -> Result<Self> {
        check_lattice(resolution, min, max)?;
        if values.len() != resolution.pow(3) {
            return Err(Error::mismatch(
                "grid values",
                resolution.pow(3),
                values.len(),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite field value at grid index {i}"
            )));
        }
        Ok(GridField {
            resolution,
            min,
            max,
            values,
        })
    }

    /// Evaluates `eval` over the `[-1, 1]^3` lattice in batches of `chunk`
    /// points. Batches run in parallel and are reassembled in order.
    pub fn sample<F>(resolution: usize, chunk: usize, eval: F) -> Result<Self>
    where
        F: Fn(&[Point3]) -> Result<Vec<f64>> + Sync,
    {
        let (min, max) = (-Self::DEFAULT_BOUND, Self::DEFAULT_BOUND);
        check_lattice(resolution, min, max)?;
        if chunk == 0 {
            return Err(Error::InvalidArgument(
                "grid chunk size must be positive".into(),
            ));
        }
        let total = resolution.pow(3);
        let starts: Vec<usize> = (0..total).step_by(chunk).collect();
        let parts = starts
            .par_iter()
            .map(|&start| {
                let end = (start + chunk).min(total);
                let points: Vec<Point3> = (start..end)
                    .map(|i| lattice_point(resolution, min, max, i))
                    .collect();
                let vals = eval(&points)?;
                if vals.len() != points.len() {
                    return Err(Error::mismatch("grid batch", points.len(), vals.len()));
                }
                Ok(vals)
            })
            .collect::<Result<Vec<_>>>()?;
        GridField::new(resolution, min, max, parts.concat())
    }

    /// Samples a closed-form field, e.g. an analytic SDF.
    pub fn from_fn(resolution: usize, f: impl Fn(Point3) -> f64 + Sync) -> Result<Self> {
        Self::sample(resolution, 4096, |pts| {
            Ok(pts.iter().map(|p| f(*p)).collect())
        })
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.resolution - 1) as f64
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.resolution * (y + self.resolution * z)
    }

    pub fn point(&self, x: usize, y: usize, z: usize) -> Point3 {
        lattice_point(self.resolution, self.min, self.max, self.index(x, y, z))
    }

    pub fn value(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[self.index(x, y, z)]
    }
}

fn check_lattice(resolution: usize, min: f64, max: f64) -> Result<()> {
    if resolution < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid resolution must be >= 2, got {resolution}"
        )));
    }
    if resolution > 2048 {
        return Err(Error::InvalidArgument(format!(
            "grid resolution {resolution} is too large"
        )));
    }
    if !(min.is_finite() && max.is_finite() && min < max) {
        return Err(Error::InvalidArgument(format!(
            "bad grid bounds [{min}, {max}]"
        )));
    }
    Ok(())
}

fn lattice_coord(resolution: usize, min: f64, max: f64, i: usize) -> f64 {
    if i == resolution - 1 {
        max
    } else {
        min + (max - min) * i as f64 / (resolution - 1) as f64
    }
}

fn lattice_point(resolution: usize, min: f64, max: f64, index: usize) -> Point3 {
    let x = index % resolution;
    let y = (index / resolution) % resolution;
    let z = index / (resolution * resolution);
    Point3::new(
        lattice_coord(resolution, min, max, x),
        lattice_coord(resolution, min, max, y),
        lattice_coord(resolution, min, max, z),
    )
}

/// Extracts the `iso` level set with linear edge interpolation. Vertices
/// on shared lattice edges are emitted once; triangles face towards larger
/// field values. No crossing gives an empty mesh.
pub fn marching_cubes(field: &GridField, iso: f64) -> Mesh {
    let n = field.resolution;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();

    for z in 0..n - 1 {
        for y in 0..n - 1 {
            for x in 0..n - 1 {
                let mut corner_index = [0usize; 8];
                let mut config = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    let idx = field.index(x + off[0], y + off[1], z + off[2]);
                    corner_index[c] = idx;
                    if field.values[idx] < iso {
                        config |= 1 << c;
                    }
                }
                if config == 0 || config == 255 {
                    continue;
                }
                let row = &TRIANGLE_TABLE[config];
                for tri in row.chunks_exact(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    let mut ids = [0u32; 3];
                    for (slot, &e) in ids.iter_mut().zip(tri) {
                        let (corner, axis) = EDGES[e as usize];
                        let a = corner_index[corner];
                        *slot = *edge_vertex.entry((a, axis)).or_insert_with(|| {
                            let stride = [1, n, n * n][axis];
                            let b = a + stride;
                            let pa = lattice_point(n, field.min, field.max, a);
                            let pb = lattice_point(n, field.min, field.max, b);
                            let (va, vb) = (field.values[a], field.values[b]);
                            let t = ((iso - va) / (vb - va)).clamp(0.0, 1.0);
                            vertices.push(pa.lerp(pb, t));
                            (vertices.len() - 1) as u32
                        });
                    }
                    triangles.push([ids[0], ids[2], ids[1]]);
                }
            }
        }
    }
    Mesh::new(vertices, triangles).expect("marching cubes indices are in range")
}
