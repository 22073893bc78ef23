use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Point3;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Sphere,
    Box,
    Ellipsoid,
    Capsule,
    Union,
}

impl ShapeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Box => "box",
            ShapeKind::Ellipsoid => "ellipsoid",
            ShapeKind::Capsule => "capsule",
            ShapeKind::Union => "union",
        }
    }

    fn param_count(self) -> usize {
        match self {
            ShapeKind::Sphere => 1,
            ShapeKind::Box | ShapeKind::Ellipsoid => 3,
            ShapeKind::Capsule => 2,
            ShapeKind::Union => 0,
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sphere" => ShapeKind::Sphere,
            "box" => ShapeKind::Box,
            "ellipsoid" => ShapeKind::Ellipsoid,
            "capsule" => ShapeKind::Capsule,
            "union" | "union_of_primitives" => ShapeKind::Union,
            other => return Err(Error::InvalidSpec(format!("unknown shape kind {other:?}"))),
        })
    }
}

/// An analytic solid with a rigid placement.
///
/// Parameter layout per kind:
/// - `sphere`: `[radius]`
/// - `box`: `[half_x, half_y, half_z]`
/// - `ellipsoid`: `[radius_x, radius_y, radius_z]`
/// - `capsule`: `[half_length, radius]`, axis along local y
/// - `union`: no parameters; `members` holds the primitives
///
/// `rotation` is an XYZ Euler triple in radians, applied before `translation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawShapeSpec", into = "RawShapeSpec")]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub params: Vec<f64>,
    pub rotation: [f64; 3],
    pub translation: Point3,
    pub members: Vec<ShapeSpec>,
}

/// Serialized form; `kind` stays a string so unknown kinds surface as spec errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct RawShapeSpec {
    kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    params: Vec<f64>,
    #[serde(default)]
    rotation: [f64; 3],
    #[serde(default)]
    translation: Point3,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    members: Vec<RawShapeSpec>,
}

impl TryFrom<RawShapeSpec> for ShapeSpec {
    type Error = Error;

    fn try_from(raw: RawShapeSpec) -> Result<Self> {
        let spec = ShapeSpec {
            kind: raw.kind.parse()?,
            params: raw.params,
            rotation: raw.rotation,
            translation: raw.translation,
            members: raw
                .members
                .into_iter()
                .map(ShapeSpec::try_from)
                .collect::<Result<_>>()?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<ShapeSpec> for RawShapeSpec {
    fn from(spec: ShapeSpec) -> Self {
        RawShapeSpec {
            kind: spec.kind.as_str().to_string(),
            params: spec.params,
            rotation: spec.rotation,
            translation: spec.translation,
            members: spec.members.into_iter().map(Into::into).collect(),
        }
    }
}

impl ShapeSpec {
    fn primitive(kind: ShapeKind, params: Vec<f64>) -> Self {
        ShapeSpec {
            kind,
            params,
            rotation: [0.0; 3],
            translation: Point3::ORIGIN,
            members: Vec::new(),
        }
    }

    pub fn sphere(radius: f64) -> Self {
        Self::primitive(ShapeKind::Sphere, vec![radius])
    }

    pub fn cuboid(half_extents: [f64; 3]) -> Self {
        Self::primitive(ShapeKind::Box, half_extents.to_vec())
    }

    pub fn ellipsoid(radii: [f64; 3]) -> Self {
        Self::primitive(ShapeKind::Ellipsoid, radii.to_vec())
    }

    pub fn capsule(half_length: f64, radius: f64) -> Self {
        Self::primitive(ShapeKind::Capsule, vec![half_length, radius])
    }

    pub fn union(members: Vec<ShapeSpec>) -> Self {
        ShapeSpec {
            members,
            ..Self::primitive(ShapeKind::Union, Vec::new())
        }
    }

    pub fn translated(mut self, t: Point3) -> Self {
        self.translation = t;
        self
    }

    pub fn rotated(mut self, euler_xyz: [f64; 3]) -> Self {
        self.rotation = euler_xyz;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.kind.param_count();
        if self.params.len() != expected {
            return Err(Error::InvalidSpec(format!(
                "{} takes {expected} parameters, got {}",
                self.kind,
                self.params.len()
            )));
        }
        if let Some(bad) = self.params.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidSpec(format!(
                "{} size parameters must be positive, got {bad}",
                self.kind
            )));
        }
        if !(self.translation.is_finite() && self.rotation.iter().all(|r| r.is_finite())) {
            return Err(Error::InvalidSpec("non-finite placement".into()));
        }
        match self.kind {
            ShapeKind::Union => {
                if self.members.is_empty() {
                    return Err(Error::InvalidSpec("union without members".into()));
                }
                self.members.iter().try_for_each(ShapeSpec::validate)?;
            }
            _ if !self.members.is_empty() => {
                return Err(Error::InvalidSpec(format!(
                    "{} cannot have members",
                    self.kind
                )));
            }
            _ => {}
        }
        let r = self.bounding_radius();
        if r > 1.0 {
            return Err(Error::InvalidSpec(format!(
                "shape extends to radius {r:.4}, outside the unit sphere"
            )));
        }
        Ok(())
    }

    /// Radius of an origin-centred ball containing the solid.
    pub fn bounding_radius(&self) -> f64 {
        let local = match self.kind {
            ShapeKind::Sphere => self.params[0],
            ShapeKind::Box => Point3::new(self.params[0], self.params[1], self.params[2]).norm(),
            ShapeKind::Ellipsoid => self.params.iter().copied().fold(0.0, f64::max),
            ShapeKind::Capsule => self.params[0] + self.params[1],
            ShapeKind::Union => self
                .members
                .iter()
                .map(ShapeSpec::bounding_radius)
                .fold(0.0, f64::max),
        };
        local + self.translation.norm()
    }

    fn rotation_matrix(&self) -> [[f64; 3]; 3] {
        let [ax, ay, az] = self.rotation;
        let (sx, cx) = ax.sin_cos();
        let (sy, cy) = ay.sin_cos();
        let (sz, cz) = az.sin_cos();
        // Rz * Ry * Rx
        [
            [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
            [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
            [-sy, cy * sx, cy * cx],
        ]
    }

    fn to_local(&self, p: Point3) -> Point3 {
        let d = p - self.translation;
        if self.rotation == [0.0; 3] {
            return d;
        }
        let r = self.rotation_matrix();
        Point3::new(
            r[0][0] * d.x + r[1][0] * d.y + r[2][0] * d.z,
            r[0][1] * d.x + r[1][1] * d.y + r[2][1] * d.z,
            r[0][2] * d.x + r[1][2] * d.y + r[2][2] * d.z,
        )
    }

    fn to_world(&self, q: Point3) -> Point3 {
        if self.rotation == [0.0; 3] {
            return q + self.translation;
        }
        let r = self.rotation_matrix();
        Point3::new(
            r[0][0] * q.x + r[0][1] * q.y + r[0][2] * q.z,
            r[1][0] * q.x + r[1][1] * q.y + r[1][2] * q.z,
            r[2][0] * q.x + r[2][1] * q.y + r[2][2] * q.z,
        ) + self.translation
    }

    /// Signed distance without validation. Callers must validate first.
    pub fn sdf(&self, p: Point3) -> f64 {
        let q = self.to_local(p);
        match self.kind {
            ShapeKind::Sphere => q.norm() - self.params[0],
            ShapeKind::Box => {
                let d = q.abs() - Point3::new(self.params[0], self.params[1], self.params[2]);
                d.map(|v| v.max(0.0)).norm() + d.max_elem().min(0.0)
            }
            ShapeKind::Ellipsoid => {
                ellipsoid_sdf([self.params[0], self.params[1], self.params[2]], q)
            }
            ShapeKind::Capsule => {
                let h = self.params[0];
                (q - Point3::new(0.0, q.y.clamp(-h, h), 0.0)).norm() - self.params[1]
            }
            ShapeKind::Union => self
                .members
                .iter()
                .map(|m| m.sdf(q))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Surface area; for unions the sum over members (overlaps counted twice).
    pub fn surface_area(&self) -> f64 {
        let p = &self.params;
        match self.kind {
            ShapeKind::Sphere => 4.0 * PI * p[0] * p[0],
            ShapeKind::Box => 8.0 * (p[0] * p[1] + p[1] * p[2] + p[0] * p[2]),
            ShapeKind::Ellipsoid => {
                // Knud Thomsen's approximation, within about 1%.
                let k = 1.6075;
                let (a, b, c) = (p[0].powf(k), p[1].powf(k), p[2].powf(k));
                4.0 * PI * ((a * b + a * c + b * c) / 3.0).powf(1.0 / k)
            }
            ShapeKind::Capsule => 4.0 * PI * p[1] * (p[0] + p[1]),
            ShapeKind::Union => self.members.iter().map(ShapeSpec::surface_area).sum(),
        }
    }

    /// Draws one point on the zero level set, area-uniform for primitives.
    pub fn sample_surface_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Point3 {
        let local = match self.kind {
            ShapeKind::Sphere => unit_direction(rng) * self.params[0],
            ShapeKind::Box => sample_box_surface(&self.params, rng),
            ShapeKind::Ellipsoid => sample_ellipsoid_surface(&self.params, rng),
            ShapeKind::Capsule => {
                let (h, r) = (self.params[0], self.params[1]);
                let side = 4.0 * PI * r * h;
                let caps = 4.0 * PI * r * r;
                if rng.random::<f64>() * (side + caps) < side {
                    let theta = rng.random::<f64>() * 2.0 * PI;
                    let y = rng.random_range(-h..=h);
                    Point3::new(r * theta.cos(), y, r * theta.sin())
                } else {
                    let d = unit_direction(rng) * r;
                    d + Point3::new(0.0, if d.y >= 0.0 { h } else { -h }, 0.0)
                }
            }
            ShapeKind::Union => loop {
                let total = self.surface_area();
                let mut pick = rng.random::<f64>() * total;
                let mut chosen = self.members.len() - 1;
                for (i, m) in self.members.iter().enumerate() {
                    let a = m.surface_area();
                    if pick < a {
                        chosen = i;
                        break;
                    }
                    pick -= a;
                }
                let q = self.members[chosen].sample_surface_point(rng);
                let buried = self
                    .members
                    .iter()
                    .enumerate()
                    .any(|(i, m)| i != chosen && m.sdf(q) < -1e-9);
                if !buried {
                    break q;
                }
            },
        };
        self.to_world(local)
    }
}

/// Validated signed distance of `spec` at `p` (negative inside).
pub fn analytic_sdf(spec: &ShapeSpec, p: Point3) -> Result<f64> {
    spec.validate()?;
    Ok(spec.sdf(p))
}

fn unit_direction<R: Rng + ?Sized>(rng: &mut R) -> Point3 {
    loop {
        let v = Point3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v * (1.0 / n);
        }
    }
}

fn sample_box_surface<R: Rng + ?Sized>(h: &[f64], rng: &mut R) -> Point3 {
    // Face pairs normal to x, y, z.
    let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
    let mut pick = rng.random::<f64>() * areas.iter().sum::<f64>();
    let mut axis = 2;
    for (i, a) in areas.iter().enumerate() {
        if pick < *a {
            axis = i;
            break;
        }
        pick -= a;
    }
    let mut c = [0.0; 3];
    for (i, ci) in c.iter_mut().enumerate() {
        *ci = if i == axis {
            if rng.random::<bool>() {
                h[i]
            } else {
                -h[i]
            }
        } else {
            rng.random_range(-h[i]..=h[i])
        };
    }
    Point3::from(c)
}

fn sample_ellipsoid_surface<R: Rng + ?Sized>(r: &[f64], rng: &mut R) -> Point3 {
    let (a, b, c) = (r[0], r[1], r[2]);
    let g_max = (b * c).max(a * c).max(a * b);
    loop {
        let u = unit_direction(rng);
        let g = ((b * c * u.x).powi(2) + (a * c * u.y).powi(2) + (a * b * u.z).powi(2)).sqrt();
        if rng.random::<f64>() * g_max <= g {
            return Point3::new(a * u.x, b * u.y, c * u.z);
        }
    }
}

fn robust_length(v: &[f64]) -> f64 {
    let m = v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if m == 0.0 {
        return 0.0;
    }
    m * v.iter().map(|x| (x / m).powi(2)).sum::<f64>().sqrt()
}

fn bisect_root(s0: f64, s1: f64, g: impl Fn(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (s0, s1);
    let mut s = lo;
    for _ in 0..2100 {
        s = 0.5 * (lo + hi);
        if s == lo || s == hi {
            break;
        }
        let v = g(s);
        if v > 0.0 {
            lo = s;
        } else if v < 0.0 {
            hi = s;
        } else {
            break;
        }
    }
    s
}

/// Distance from `(y0, y1)` (first quadrant) to the ellipse with semi-axes `e0 >= e1`.
fn ellipse_distance(e0: f64, e1: f64, y0: f64, y1: f64) -> f64 {
    if y1 > 0.0 {
        if y0 > 0.0 {
            let z0 = y0 / e0;
            let z1 = y1 / e1;
            let g = z0 * z0 + z1 * z1 - 1.0;
            if g == 0.0 {
                return 0.0;
            }
            let r0 = (e0 / e1).powi(2);
            let n0 = r0 * z0;
            let s0 = z1 - 1.0;
            let s1 = if g < 0.0 {
                0.0
            } else {
                robust_length(&[n0, z1]) - 1.0
            };
            let s = bisect_root(s0, s1, |s| {
                (n0 / (s + r0)).powi(2) + (z1 / (s + 1.0)).powi(2) - 1.0
            });
            let x0 = r0 * y0 / (s + r0);
            let x1 = y1 / (s + 1.0);
            ((x0 - y0).powi(2) + (x1 - y1).powi(2)).sqrt()
        } else {
            (y1 - e1).abs()
        }
    } else {
        let numer0 = e0 * y0;
        let denom0 = e0 * e0 - e1 * e1;
        if numer0 < denom0 {
            let xde0 = numer0 / denom0;
            let x0 = e0 * xde0;
            let x1 = e1 * (1.0 - xde0 * xde0).max(0.0).sqrt();
            ((x0 - y0).powi(2) + x1 * x1).sqrt()
        } else {
            (y0 - e0).abs()
        }
    }
}

/// Distance from `y` (first octant) to the ellipsoid with semi-axes `e0 >= e1 >= e2`.
fn ellipsoid_distance(e: [f64; 3], y: [f64; 3]) -> f64 {
    let [e0, e1, e2] = e;
    let [y0, y1, y2] = y;
    if y2 > 0.0 {
        if y1 > 0.0 {
            if y0 > 0.0 {
                let z = [y0 / e0, y1 / e1, y2 / e2];
                let g = z[0] * z[0] + z[1] * z[1] + z[2] * z[2] - 1.0;
                if g == 0.0 {
                    return 0.0;
                }
                let r0 = (e0 / e2).powi(2);
                let r1 = (e1 / e2).powi(2);
                let n0 = r0 * z[0];
                let n1 = r1 * z[1];
                let s0 = z[2] - 1.0;
                let s1 = if g < 0.0 {
                    0.0
                } else {
                    robust_length(&[n0, n1, z[2]]) - 1.0
                };
                let s = bisect_root(s0, s1, |s| {
                    (n0 / (s + r0)).powi(2) + (n1 / (s + r1)).powi(2) + (z[2] / (s + 1.0)).powi(2)
                        - 1.0
                });
                let x = [r0 * y0 / (s + r0), r1 * y1 / (s + r1), y2 / (s + 1.0)];
                ((x[0] - y0).powi(2) + (x[1] - y1).powi(2) + (x[2] - y2).powi(2)).sqrt()
            } else {
                ellipse_distance(e1, e2, y1, y2)
            }
        } else if y0 > 0.0 {
            ellipse_distance(e0, e2, y0, y2)
        } else {
            (y2 - e2).abs()
        }
    } else {
        let denom0 = e0 * e0 - e2 * e2;
        let denom1 = e1 * e1 - e2 * e2;
        let numer0 = e0 * y0;
        let numer1 = e1 * y1;
        if numer0 < denom0 && numer1 < denom1 {
            let xde0 = numer0 / denom0;
            let xde1 = numer1 / denom1;
            let discr = 1.0 - xde0 * xde0 - xde1 * xde1;
            if discr > 0.0 {
                let x0 = e0 * xde0;
                let x1 = e1 * xde1;
                let x2 = e2 * discr.sqrt();
                return ((x0 - y0).powi(2) + (x1 - y1).powi(2) + x2 * x2).sqrt();
            }
        }
        ellipse_distance(e0, e1, y0, y1)
    }
}

fn ellipsoid_sdf(radii: [f64; 3], q: Point3) -> f64 {
    // Sort axes descending and carry the coordinates along.
    let mut axes = [
        (radii[0], q.x.abs()),
        (radii[1], q.y.abs()),
        (radii[2], q.z.abs()),
    ];
    axes.sort_by(|a, b| b.0.total_cmp(&a.0));
    let e = [axes[0].0, axes[1].0, axes[2].0];
    let y = [axes[0].1, axes[1].1, axes[2].1];
    let d = ellipsoid_distance(e, y);
    let inside =
        (q.x / radii[0]).powi(2) + (q.y / radii[1]).powi(2) + (q.z / radii[2]).powi(2) < 1.0;
    if inside {
        -d
    } else {
        d
    }
}
