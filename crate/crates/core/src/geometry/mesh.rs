use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use super::Point3;
use crate::error::{Error, Result};

/// Radius of the farthest vertex after normalization (3% margin inside the unit sphere).
pub const NORMALIZED_RADIUS: f64 = 1.0 / 1.03;

/// Indexed triangle mesh.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(t) = triangles
            .iter()
            .find(|t| t.iter().any(|&i| i as usize >= n))
        {
            return Err(Error::InvalidArgument(format!(
                "triangle {t:?} indexes past {n} vertices"
            )));
        }
        Ok(Mesh {
            vertices,
            triangles,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: [u32; 3]) -> [Point3; 3] {
        t.map(|i| self.vertices[i as usize])
    }

    pub fn triangle_area(&self, t: [u32; 3]) -> f64 {
        let [a, b, c] = self.triangle(t);
        0.5 * (b - a).cross(c - a).norm()
    }

    pub fn surface_area(&self) -> f64 {
        self.triangles.iter().map(|&t| self.triangle_area(t)).sum()
    }

    /// Signed enclosed volume; positive for outward-facing triangles.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|&t| {
                let [a, b, c] = self.triangle(t);
                a.dot(b.cross(c)) / 6.0
            })
            .sum()
    }

    pub fn flip_orientation(&mut self) {
        for t in &mut self.triangles {
            t.swap(1, 2);
        }
    }

    /// True when every undirected edge borders exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        if self.triangles.is_empty() {
            return false;
        }
        let mut counts: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        counts.values().all(|&c| c == 2)
    }

    /// Merges bit-identical vertices, drops triangles that collapse or have
    /// zero area, and discards unreferenced vertices.
    pub fn cleanup(&mut self, min_area: f64) {
        let mut remap = Vec::with_capacity(self.vertices.len());
        let mut seen: HashMap<[u64; 3], u32> = HashMap::new();
        let mut merged = Vec::new();
        for v in &self.vertices {
            let key = [v.x.to_bits(), v.y.to_bits(), v.z.to_bits()];
            let id = *seen.entry(key).or_insert_with(|| {
                merged.push(*v);
                (merged.len() - 1) as u32
            });
            remap.push(id);
        }
        let mut tris: Vec<[u32; 3]> = self
            .triangles
            .iter()
            .map(|t| t.map(|i| remap[i as usize]))
            .filter(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2])
            .collect();
        let tmp = Mesh {
            vertices: merged,
            triangles: Vec::new(),
        };
        tris.retain(|&t| tmp.triangle_area(t) > min_area);

        let mut used = vec![u32::MAX; tmp.vertices.len()];
        let mut vertices = Vec::new();
        for t in &mut tris {
            for i in t.iter_mut() {
                if used[*i as usize] == u32::MAX {
                    used[*i as usize] = vertices.len() as u32;
                    vertices.push(tmp.vertices[*i as usize]);
                }
                *i = used[*i as usize];
            }
        }
        self.vertices = vertices;
        self.triangles = tris;
    }

    /// Area-weighted uniform samples on the triangle surface.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Point3>> {
        if self.is_empty() {
            return Err(Error::Empty("mesh has no triangles to sample"));
        }
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut acc = 0.0;
        for &t in &self.triangles {
            acc += self.triangle_area(t);
            cumulative.push(acc);
        }
        if acc <= 0.0 {
            return Err(Error::Empty("mesh has zero surface area"));
        }
        let out = (0..n)
            .map(|_| {
                let r = rng.random::<f64>() * acc;
                let idx = cumulative
                    .partition_point(|&c| c <= r)
                    .min(cumulative.len() - 1);
                let [a, b, c] = self.triangle(self.triangles[idx]);
                let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                a + (b - a) * u + (c - a) * v
            })
            .collect();
        Ok(out)
    }

    pub fn to_obj_string(&self) -> String {
        let mut s = String::with_capacity(self.vertices.len() * 40 + self.triangles.len() * 24);
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }

    pub fn write_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_obj_string()).map_err(|e| Error::io(path, e))
    }

    pub fn read_obj(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_obj(&text).map_err(|msg| Error::format(path, msg))
    }

    pub fn parse_obj(text: &str) -> std::result::Result<Self, String> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it
                        .take(3)
                        .map(str::parse)
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| format!("line {}: {e}", lineno + 1))?;
                    if c.len() != 3 {
                        return Err(format!("line {}: vertex needs 3 coordinates", lineno + 1));
                    }
                    vertices.push(Point3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let n = vertices.len() as i64;
                    let idx: Vec<u32> = it
                        .map(|tok| {
                            let first = tok.split('/').next().unwrap_or("");
                            let i: i64 = first
                                .parse()
                                .map_err(|e| format!("line {}: {e}", lineno + 1))?;
                            let zero_based = if i < 0 { n + i } else { i - 1 };
                            if zero_based < 0 || zero_based >= n {
                                return Err(format!("line {}: index {i} out of range", lineno + 1));
                            }
                            Ok(zero_based as u32)
                        })
                        .collect::<std::result::Result<_, String>>()?;
                    if idx.len() < 3 {
                        return Err(format!("line {}: face needs 3 indices", lineno + 1));
                    }
                    for k in 1..idx.len() - 1 {
                        triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        Ok(Mesh {
            vertices,
            triangles,
        })
    }

    /// Reads an ASCII PLY file (vertex x/y/z and face index lists).
    pub fn read_ply(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_ply(&text).map_err(|msg| Error::format(path, msg))
    }

    pub fn parse_ply(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("ply") {
            return Err("missing ply magic".into());
        }
        let mut n_vertices = 0usize;
        let mut n_faces = 0usize;
        let mut vertex_props: Vec<String> = Vec::new();
        let mut current = "";
        let mut ascii = false;
        for line in lines.by_ref() {
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.as_slice() {
                ["format", "ascii", ..] => ascii = true,
                ["format", other, ..] => return Err(format!("unsupported ply format {other}")),
                ["element", "vertex", n] => {
                    current = "vertex";
                    n_vertices = n.parse().map_err(|_| "bad vertex count")?;
                }
                ["element", "face", n] => {
                    current = "face";
                    n_faces = n.parse().map_err(|_| "bad face count")?;
                }
                ["element", ..] => current = "other",
                ["property", "list", ..] => {}
                ["property", _, name] if current == "vertex" => vertex_props.push(name.to_string()),
                ["end_header"] => break,
                _ => {}
            }
        }
        if !ascii {
            return Err("missing format line".into());
        }
        let pos = |name: &str| {
            vertex_props
                .iter()
                .position(|p| p == name)
                .ok_or_else(|| format!("vertex property {name} missing"))
        };
        let (ix, iy, iz) = (pos("x")?, pos("y")?, pos("z")?);
        let mut vertices = Vec::with_capacity(n_vertices);
        for _ in 0..n_vertices {
            let line = lines.next().ok_or("truncated vertex list")?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| format!("bad vertex line: {e}"))?;
            if vals.len() < vertex_props.len() {
                return Err("short vertex line".into());
            }
            vertices.push(Point3::new(vals[ix], vals[iy], vals[iz]));
        }
        let mut triangles = Vec::with_capacity(n_faces);
        for _ in 0..n_faces {
            let line = lines.next().ok_or("truncated face list")?;
            let vals: Vec<u32> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| format!("bad face line: {e}"))?;
            let (&count, idx) = vals.split_first().ok_or("empty face line")?;
            if idx.len() != count as usize || count < 3 {
                return Err("face index count mismatch".into());
            }
            if idx.iter().any(|&i| i as usize >= n_vertices) {
                return Err("face index out of range".into());
            }
            for k in 1..idx.len() - 1 {
                triangles.push([idx[0], idx[k], idx[k + 1]]);
            }
        }
        Ok(Mesh {
            vertices,
            triangles,
        })
    }
}

/// Centres the mesh on its bounding-box midpoint and scales it so the
/// farthest vertex sits at [`NORMALIZED_RADIUS`].
///
/// Returns the normalized mesh with `scale` and `offset` such that
/// `normalized = (original - offset) * scale`.
pub fn normalize_mesh(mesh: &Mesh) -> Result<(Mesh, f64, Point3)> {
    if mesh.vertices.is_empty() {
        return Err(Error::Empty("cannot normalize a mesh without vertices"));
    }
    let mut lo = mesh.vertices[0];
    let mut hi = mesh.vertices[0];
    for v in &mesh.vertices {
        lo = Point3::new(lo.x.min(v.x), lo.y.min(v.y), lo.z.min(v.z));
        hi = Point3::new(hi.x.max(v.x), hi.y.max(v.y), hi.z.max(v.z));
    }
    let offset = (lo + hi) * 0.5;
    let max_norm = mesh
        .vertices
        .iter()
        .map(|v| (*v - offset).norm())
        .fold(0.0, f64::max);
    if !(max_norm > 0.0 && max_norm.is_finite()) {
        return Err(Error::InvalidArgument(
            "mesh has no spatial extent to normalize".into(),
        ));
    }
    let scale = NORMALIZED_RADIUS / max_norm;
    let vertices = mesh
        .vertices
        .iter()
        .map(|v| (*v - offset) * scale)
        .collect();
    Ok((
        Mesh {
            vertices,
            triangles: mesh.triangles.clone(),
        },
        scale,
        offset,
    ))
}
