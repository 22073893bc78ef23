//! Reconstruction and correspondence metrics, and their reports.

mod assignment;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use assignment::min_cost_assignment;

use crate::error::{Error, Result};
use crate::geometry::{KdTree, Mesh, Point3, ShapeSpec};
use crate::inference::CanonicalPool;
use crate::model::{LatentCode, Model};

/// Chamfer values are reported multiplied by this.
pub const CHAMFER_REPORT_SCALE: f64 = 1e3;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    /// Where the points came from, e.g. `"gt:3"` or `"recon:3"`.
    pub tag: String,
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(tag: impl Into<String>, points: Vec<Point3>) -> Self {
        PointCloud {
            tag: tag.into(),
            points,
        }
    }

    pub fn from_mesh(tag: impl Into<String>, mesh: &Mesh, n: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(PointCloud::new(tag, mesh.sample_surface(n, &mut rng)?))
    }

    pub fn from_shape(
        tag: impl Into<String>,
        spec: &ShapeSpec,
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(PointCloud::new(
            tag,
            (0..n)
                .map(|_| spec.sample_surface_point(&mut rng))
                .collect(),
        ))
    }
}

fn directed_mean_sq(from: &[Point3], to: &KdTree) -> f64 {
    let d: Vec<f64> = from
        .par_iter()
        .map(|p| to.nearest(*p).expect("nonempty").1)
        .collect();
    d.iter().sum::<f64>() / from.len() as f64
}

/// Sum of the two directed mean squared nearest-neighbour distances.
pub fn chamfer(a: &[Point3], b: &[Point3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("chamfer point cloud"));
    }
    let ta = KdTree::new(a);
    let tb = KdTree::new(b);
    Ok(directed_mean_sq(a, &tb) + directed_mean_sq(b, &ta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmdOptions {
    pub subsample: usize,
    pub seed: u64,
}

impl Default for EmdOptions {
    fn default() -> Self {
        EmdOptions {
            subsample: 500,
            seed: 0,
        }
    }
}

fn subsample(points: &[Point3], k: usize, seed: u64) -> Vec<Point3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_indices(&mut rng, points.len(), k)
        .into_iter()
        .map(|i| points[i])
        .collect()
}

/// Mean matched distance of the optimal one-to-one assignment between
/// equal-size seeded subsamples of both clouds.
pub fn emd_approx(a: &[Point3], b: &[Point3], opts: &EmdOptions) -> Result<f64> {
    let k = opts.subsample;
    if k == 0 {
        return Err(Error::InvalidArgument(
            "EMD subsample must be positive".into(),
        ));
    }
    if a.len() < k || b.len() < k {
        return Err(Error::InvalidArgument(format!(
            "EMD needs {k} points per cloud, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let sa = subsample(a, k, opts.seed);
    let sb = subsample(b, k, opts.seed);
    let cost: Vec<f64> = sa
        .iter()
        .flat_map(|p| sb.iter().map(move |q| p.distance(*q)))
        .collect();
    let (_, total) = min_cost_assignment(&cost, k);
    Ok(total / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub label: u32,
    pub point: Point3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub shape_id: u32,
    pub keypoints: Vec<Keypoint>,
}

impl KeypointSet {
    pub fn new(shape_id: u32, keypoints: Vec<Keypoint>) -> Result<Self> {
        let set = KeypointSet {
            shape_id,
            keypoints,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for k in &self.keypoints {
            if !seen.insert(k.label) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate keypoint label {} on shape {}",
                    k.label, self.shape_id
                )));
            }
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<Point3> {
        self.keypoints.iter().map(|k| k.point).collect()
    }
}

/// Moves each keypoint of a source shape onto the target surface pool by
/// canonical-space correspondence.
pub fn keypoint_transfer(
    model: &Model,
    source: &KeypointSet,
    source_code: &LatentCode,
    target_code: &LatentCode,
    pool: &[Point3],
) -> Result<KeypointSet> {
    source.validate()?;
    let canonical = CanonicalPool::new(model, target_code, pool)?;
    let matches = canonical.correspond(model, &source.points(), source_code)?;
    let keypoints = source
        .keypoints
        .iter()
        .zip(matches)
        .map(|(k, m)| Keypoint {
            label: k.label,
            point: m.target,
        })
        .collect();
    Ok(KeypointSet {
        shape_id: target_code.shape_id,
        keypoints,
    })
}

/// Fraction of labels whose predicted point lies within `threshold` of
/// the ground truth.
pub fn pck(predicted: &KeypointSet, truth: &KeypointSet, threshold: f64) -> Result<f64> {
    predicted.validate()?;
    truth.validate()?;
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bad PCK threshold {threshold}"
        )));
    }
    if truth.keypoints.is_empty() {
        return Err(Error::Empty("ground-truth keypoints"));
    }
    let pred: HashMap<u32, Point3> = predicted
        .keypoints
        .iter()
        .map(|k| (k.label, k.point))
        .collect();
    if pred.len() != truth.keypoints.len() {
        return Err(Error::mismatch(
            "keypoint labels",
            truth.keypoints.len(),
            pred.len(),
        ));
    }
    let mut hits = 0usize;
    for k in &truth.keypoints {
        let p = pred.get(&k.label).ok_or_else(|| {
            Error::InvalidArgument(format!("label {} missing from prediction", k.label))
        })?;
        if p.distance(k.point) <= threshold {
            hits += 1;
        }
    }
    Ok(hits as f64 / truth.keypoints.len() as f64)
}

/// Mean distance between predicted and true corresponding points.
pub fn correspondence_error(pairs: &[(Point3, Point3)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("correspondence pairs"));
    }
    Ok(pairs.iter().map(|(p, q)| p.distance(*q)).sum::<f64>() / pairs.len() as f64)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Median, averaging the middle pair for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-shape metric table. Non-finite entries (e.g. an empty
/// reconstruction) are kept in the CSV and left out of the summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub metrics: Vec<String>,
    pub rows: Vec<(u32, Vec<f64>)>,
}

impl Report {
    pub fn new(metrics: &[&str]) -> Self {
        Report {
            metrics: metrics.iter().map(|m| m.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, shape_id: u32, values: Vec<f64>) -> Result<()> {
        if values.len() != self.metrics.len() {
            return Err(Error::mismatch(
                "report row",
                self.metrics.len(),
                values.len(),
            ));
        }
        self.rows.push((shape_id, values));
        Ok(())
    }

    pub fn column(&self, metric: usize) -> Vec<f64> {
        self.rows
            .iter()
            .map(|(_, v)| v[metric])
            .filter(|v| v.is_finite())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("shape_id,{}\n", self.metrics.join(","));
        for (id, values) in &self.rows {
            let cells: Vec<String> = values.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&format!("{id},{}\n", cells.join(",")));
        }
        out
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let shapes: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|(id, values)| {
                let mut row = serde_json::Map::new();
                row.insert("shape_id".into(), json!(id));
                for (m, v) in self.metrics.iter().zip(values) {
                    row.insert(
                        m.clone(),
                        if v.is_finite() {
                            json!(v)
                        } else {
                            serde_json::Value::Null
                        },
                    );
                }
                serde_json::Value::Object(row)
            })
            .collect();
        let mut summary = BTreeMap::new();
        for (i, m) in self.metrics.iter().enumerate() {
            let col = self.column(i);
            let stat = |v: f64| {
                if col.is_empty() {
                    serde_json::Value::Null
                } else {
                    json!(v)
                }
            };
            summary.insert(
                m.clone(),
                json!({
                    "count": col.len(),
                    "mean": stat(mean(&col)),
                    "median": stat(median(&col)),
                }),
            );
        }
        json!({ "shapes": shapes, "summary": summary })
    }

    pub fn write(&self, csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<()> {
        let (csv_path, json_path) = (csv_path.as_ref(), json_path.as_ref());
        fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))?;
        let text = serde_json::to_string_pretty(&self.summary_json()).expect("report serializes");
        fs::write(json_path, text + "\n").map_err(|e| Error::io(json_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cloud(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect()
    }

    fn brute_chamfer(a: &[Point3], b: &[Point3]) -> f64 {
        let directed = |x: &[Point3], y: &[Point3]| {
            let d: Vec<f64> = x
                .iter()
                .map(|p| {
                    y.iter()
                        .map(|q| p.distance_squared(*q))
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            d.iter().sum::<f64>() / x.len() as f64
        };
        directed(a, b) + directed(b, a)
    }

    #[test]
    fn chamfer_hand_case_and_brute_force() {
        let a = [Point3::ORIGIN];
        let b = [Point3::new(0.1, 0.0, 0.0)];
        assert!((chamfer(&a, &b).unwrap() - 0.02).abs() < 1e-15);
        for seed in 0..5 {
            let a = cloud(100, seed);
            let b = cloud(100 + seed as usize * 50, seed + 100);
            assert_eq!(chamfer(&a, &b).unwrap(), brute_chamfer(&a, &b));
            assert_eq!(chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
            assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        }
        assert!(chamfer(&[], &b).is_err());
    }

    #[test]
    fn emd_hand_cases_and_invariance() {
        let a = [Point3::ORIGIN, Point3::new(1.0, 0.0, 0.0)];
        let b = [Point3::new(0.1, 0.0, 0.0), Point3::new(0.9, 0.0, 0.0)];
        let opts = EmdOptions {
            subsample: 2,
            seed: 3,
        };
        assert_eq!(emd_approx(&a, &a, &opts).unwrap(), 0.0);
        assert!((emd_approx(&a, &b, &opts).unwrap() - 0.1).abs() < 1e-12);
        assert!(emd_approx(
            &a,
            &b,
            &EmdOptions {
                subsample: 3,
                seed: 0
            }
        )
        .is_err());

        let x = cloud(80, 1);
        let y = cloud(90, 2);
        let opts = EmdOptions {
            subsample: 60,
            seed: 9,
        };
        let base = emd_approx(&x, &y, &opts).unwrap();
        assert_eq!(emd_approx(&x, &x, &opts).unwrap(), 0.0);
        let (s, c) = (0.7f64.sin(), 0.7f64.cos());
        let t = Point3::new(0.3, -2.0, 5.0);
        let rigid = |p: &Point3| Point3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z) + t;
        let xr: Vec<Point3> = x.iter().map(rigid).collect();
        let yr: Vec<Point3> = y.iter().map(rigid).collect();
        assert!((emd_approx(&xr, &yr, &opts).unwrap() - base).abs() < 1e-9);
    }

    fn kps(id: u32, pts: &[(u32, Point3)]) -> KeypointSet {
        KeypointSet::new(
            id,
            pts.iter()
                .map(|&(label, point)| Keypoint { label, point })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn pck_cases() {
        let p = |x: f64| Point3::new(x, 0.0, 0.0);
        let gt = kps(0, &[(0, p(0.0)), (1, p(1.0)), (2, p(2.0)), (3, p(3.0))]);
        assert_eq!(pck(&gt, &gt, 1e-6).unwrap(), 1.0);
        let pred = kps(0, &[(3, p(3.5)), (0, p(0.005)), (1, p(1.5)), (2, p(2.5))]);
        assert_eq!(pck(&pred, &gt, 0.01).unwrap(), 0.25);
        assert!(pck(&pred, &gt, 0.02).unwrap() >= pck(&pred, &gt, 0.01).unwrap());
        assert!(pck(&kps(0, &[(0, p(0.0))]), &gt, 0.1).is_err());
        let relabeled = kps(0, &[(0, p(0.0)), (1, p(1.0)), (2, p(2.0)), (9, p(3.0))]);
        assert!(pck(&relabeled, &gt, 0.1).is_err());
        assert!(KeypointSet::new(
            0,
            vec![
                Keypoint {
                    label: 1,
                    point: p(0.0)
                };
                2
            ]
        )
        .is_err());
    }

    #[test]
    fn correspondence_error_is_the_mean_distance() {
        let p = |x: f64| Point3::new(x, 0.0, 0.0);
        assert_eq!(correspondence_error(&[(p(0.0), p(0.2))]).unwrap(), 0.2);
        assert_eq!(correspondence_error(&[(p(1.0), p(1.0)); 3]).unwrap(), 0.0);
        let a = cloud(30, 4);
        let b = cloud(30, 5);
        let pairs: Vec<_> = a.iter().copied().zip(b.iter().copied()).collect();
        let direct = a.iter().zip(&b).map(|(x, y)| x.distance(*y)).sum::<f64>() / 30.0;
        assert_eq!(correspondence_error(&pairs).unwrap(), direct);
        assert!(correspondence_error(&[]).is_err());
    }

    #[test]
    fn keypoint_transfer_rules() {
        use crate::model::ModelConfig;
        let config = ModelConfig {
            latent_dim: 3,
            hidden: 6,
            steps: 2,
            template_widths: vec![8],
            softplus_beta: 10.0,
            head_init_scale: 0.5,
        };
        let model = Model::new(config, 1).unwrap();
        let c = LatentCode::new(0, vec![0.2, -0.1, 0.3]);
        let pool = cloud(40, 6);
        let source = kps(0, &[(5, pool[3]), (7, pool[20])]);
        let same = keypoint_transfer(&model, &source, &c, &c, &pool).unwrap();
        assert_eq!(same, source);

        let mut identity = model.clone();
        identity.zero_warp_head();
        let other = LatentCode::new(1, vec![1.0, 1.0, 1.0]);
        let q = kps(0, &[(1, Point3::new(0.1, 0.2, 0.3))]);
        let moved = keypoint_transfer(&identity, &q, &c, &other, &pool).unwrap();
        let (idx, _) = crate::geometry::nearest_brute_force(&pool, q.keypoints[0].point).unwrap();
        assert_eq!(moved.shape_id, 1);
        assert_eq!(
            moved.keypoints[0],
            Keypoint {
                label: 1,
                point: pool[idx]
            }
        );
    }

    #[test]
    fn report_csv_and_summary() {
        let mut r = Report::new(&["chamfer_x1e3", "emd"]);
        r.push(0, vec![1.0, 0.5]).unwrap();
        r.push(3, vec![3.0, f64::NAN]).unwrap();
        r.push(4, vec![8.0, 0.7]).unwrap();
        assert!(r.push(5, vec![1.0]).is_err());
        assert_eq!(
            r.to_csv().lines().next().unwrap(),
            "shape_id,chamfer_x1e3,emd"
        );
        assert_eq!(r.to_csv().lines().nth(2).unwrap(), "3,3e0,NaN");
        let j = r.summary_json();
        assert_eq!(j["summary"]["chamfer_x1e3"]["mean"], 4.0);
        assert_eq!(j["summary"]["chamfer_x1e3"]["median"], 3.0);
        assert_eq!(j["summary"]["emd"]["count"], 2);
        assert!((j["summary"]["emd"]["median"].as_f64().unwrap() - 0.6).abs() < 1e-15);
        assert!(j["shapes"][1]["emd"].is_null());
    }
}
