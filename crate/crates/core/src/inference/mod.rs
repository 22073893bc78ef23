//! Using a trained model: latent inference, mesh extraction, interpolation
//! and canonical-space correspondence.

mod marching_cubes;
mod tables;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use marching_cubes::{marching_cubes, GridField};

use crate::error::{Error, Result};
use crate::geometry::{KdTree, Mesh, Point3, SampleSet, DEFAULT_TRUNCATION};
use crate::losses::Schedule;
use crate::model::{LatentCode, Model};
use crate::nn::AdamConfig;
use crate::training::{code_gradient, CodeAdam};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractOptions {
    /// Lattice samples per axis over `[-1, 1]^3`.
    pub resolution: usize,
    /// Points per evaluation batch.
    pub chunk: usize,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            resolution: 128,
            chunk: 4096,
        }
    }
}

/// `T(p(steps))` sampled on the extraction lattice.
pub fn sdf_field(
    model: &Model,
    code: &LatentCode,
    steps: usize,
    opts: &ExtractOptions,
) -> Result<GridField> {
    if steps > model.steps() {
        return Err(Error::InvalidArgument(format!(
            "steps {steps} outside 0..={}",
            model.steps()
        )));
    }
    if code.dim() != model.latent_dim() {
        return Err(Error::mismatch(
            "latent code",
            model.latent_dim(),
            code.dim(),
        ));
    }
    GridField::sample(opts.resolution, opts.chunk, |pts| {
        model.forward_sdf_batch(pts, code, steps)
    })
}

/// Zero level set of `F(., c)`. An empty mesh means the field never
/// crosses zero inside the bounds.
pub fn extract_mesh(model: &Model, code: &LatentCode, opts: &ExtractOptions) -> Result<Mesh> {
    extract_mesh_at_steps(model, code, model.steps(), opts)
}

/// Zero level set after only `steps` warping steps.
pub fn extract_mesh_at_steps(
    model: &Model,
    code: &LatentCode,
    steps: usize,
    opts: &ExtractOptions,
) -> Result<Mesh> {
    Ok(marching_cubes(&sdf_field(model, code, steps, opts)?, 0.0))
}

/// Zero level set of the template alone.
pub fn extract_template_mesh(model: &Model, opts: &ExtractOptions) -> Result<Mesh> {
    let field = GridField::sample(opts.resolution, opts.chunk, |pts| {
        Ok(model.template_sdf_batch(pts))
    })?;
    Ok(marching_cubes(&field, 0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferOptions {
    pub iterations: usize,
    pub lr: f64,
    pub init_std: f64,
    /// SDF samples drawn per iteration; all samples are used when the set
    /// is smaller.
    pub points_per_iteration: usize,
    /// Clamp distance of the L1 loss.
    pub delta: f64,
    /// Code prior scale.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions {
            iterations: 800,
            lr: 5e-3,
            init_std: 0.01,
            points_per_iteration: 1024,
            delta: DEFAULT_TRUNCATION,
            sigma: 100.0,
            seed: 0,
        }
    }
}

impl InferOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && self.init_std.is_finite()
            && self.init_std >= 0.0
            && self.points_per_iteration > 0
            && self.delta > 0.0
            && self.sigma > 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "bad inference options {self:?}"
            )));
        }
        Ok(())
    }
}

/// Fits a code to an unseen shape with the network frozen.
pub fn infer_latent(model: &Model, samples: &SampleSet, opts: &InferOptions) -> Result<LatentCode> {
    opts.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("inference samples"));
    }
    let dim = model.latent_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut values = vec![0.0; dim];
    if opts.init_std > 0.0 {
        let normal = Normal::new(0.0, opts.init_std).expect("positive std");
        values.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
    }
    // Gradients are taken on a private copy so the caller's network is
    // never written to.
    let mut frozen = model.clone();
    let schedule = Schedule::final_l1(model.steps(), opts.delta);
    let config = AdamConfig {
        lr: opts.lr,
        ..AdamConfig::default()
    };
    let mut adam = CodeAdam::new(dim);
    let use_all = samples.len() <= opts.points_per_iteration;
    for _ in 0..opts.iterations {
        let (points, gt): (Vec<Point3>, Vec<f64>) = if use_all {
            samples.samples.iter().map(|s| (s.point, s.sdf)).unzip()
        } else {
            (0..opts.points_per_iteration)
                .map(|_| {
                    let s = samples.samples[rng.random_range(0..samples.len())];
                    (s.point, s.sdf)
                })
                .unzip()
        };
        let (loss, grad) =
            code_gradient(&mut frozen, &values, &points, &gt, &schedule, opts.sigma)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                iteration: adam.step,
                detail: "latent inference loss".into(),
            });
        }
        adam.apply(&config, &mut values, &grad);
    }
    Ok(LatentCode::new(samples.shape_id, values))
}

/// `(1 - t) c1 + t c2`, keeping the id of `c1`.
pub fn interpolate_codes(c1: &LatentCode, c2: &LatentCode, t: f64) -> Result<LatentCode> {
    if c1.dim() != c2.dim() {
        return Err(Error::mismatch("interpolated codes", c1.dim(), c2.dim()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "interpolation t = {t} outside [0, 1]"
        )));
    }
    let values = c1
        .values
        .iter()
        .zip(&c2.values)
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect();
    Ok(LatentCode::new(c1.shape_id, values))
}

/// `W(p, c)`, the position of `p` in template space.
pub fn canonical_position(model: &Model, p: Point3, code: &LatentCode) -> Result<Point3> {
    Ok(model.canonical_positions(&[p], code)?[0])
}

/// Canonical positions for many points, in parallel batches.
pub fn canonical_positions(
    model: &Model,
    points: &[Point3],
    code: &LatentCode,
    chunk: usize,
) -> Result<Vec<Point3>> {
    let parts = points
        .par_chunks(chunk.max(1))
        .map(|part| model.canonical_positions(part, code))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.concat())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceQuery {
    pub source: Point3,
    pub source_code: LatentCode,
    pub target_code: LatentCode,
    /// Candidate points on the target surface.
    pub pool: Vec<Point3>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correspondence {
    pub source: Point3,
    pub target: Point3,
    pub pool_index: usize,
    pub canonical_distance: f64,
}

/// A target surface pool warped once into template space, for repeated
/// queries.
#[derive(Debug, Clone)]
pub struct CanonicalPool {
    pub points: Vec<Point3>,
    tree: KdTree,
}

impl CanonicalPool {
    pub fn new(model: &Model, target_code: &LatentCode, pool: &[Point3]) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::Empty("correspondence pool"));
        }
        let canonical = canonical_positions(model, pool, target_code, 4096)?;
        Ok(CanonicalPool {
            points: pool.to_vec(),
            tree: KdTree::new(&canonical),
        })
    }

    pub fn canonical_points(&self) -> &[Point3] {
        self.tree.points()
    }

    /// Pool entry nearest to a template-space position.
    pub fn nearest_canonical(&self, canonical: Point3) -> (usize, f64) {
        let (i, d2) = self.tree.nearest(canonical).expect("pool is nonempty");
        (i, d2.sqrt())
    }

    pub fn correspond(
        &self,
        model: &Model,
        sources: &[Point3],
        source_code: &LatentCode,
    ) -> Result<Vec<Correspondence>> {
        let canonical = canonical_positions(model, sources, source_code, 4096)?;
        Ok(sources
            .iter()
            .zip(canonical)
            .map(|(&source, c)| {
                let (pool_index, canonical_distance) = self.nearest_canonical(c);
                Correspondence {
                    source,
                    target: self.points[pool_index],
                    pool_index,
                    canonical_distance,
                }
            })
            .collect())
    }
}

/// Pool point whose canonical position is closest to that of the source;
/// ties go to the lowest pool index.
pub fn correspond(model: &Model, query: &CorrespondenceQuery) -> Result<Correspondence> {
    let pool = CanonicalPool::new(model, &query.target_code, &query.pool)?;
    Ok(pool.correspond(model, &[query.source], &query.source_code)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_sdf, SamplingOptions, ShapeSpec};
    use crate::model::ModelConfig;
    use crate::nn::Parameterized;

    fn small_config() -> ModelConfig {
        ModelConfig {
            latent_dim: 4,
            hidden: 8,
            steps: 4,
            template_widths: vec![16, 16],
            softplus_beta: 10.0,
            head_init_scale: 0.5,
        }
    }

    fn code(id: u32, v: f64) -> LatentCode {
        LatentCode::new(id, vec![v, -v, 0.5 * v, 0.1])
    }

    fn param_bits(model: &Model) -> Vec<u64> {
        model
            .param_blocks()
            .iter()
            .flat_map(|b| b.values.iter().map(|v| v.to_bits()))
            .collect()
    }

    #[test]
    fn identity_warp_makes_template_and_instance_meshes_equal() {
        let mut model = Model::new(small_config(), 3).unwrap();
        model.zero_warp_head();
        // Shift the template output so that it has a surface inside the box.
        let last = model.template.layers.len() - 1;
        let opts = ExtractOptions {
            resolution: 12,
            chunk: 100,
        };
        let probe = GridField::sample(12, 4096, |pts| Ok(model.template_sdf_batch(pts))).unwrap();
        let (lo, hi) = probe
            .values
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
        model.template.layers[last].bias.values[0] -= 0.5 * (lo + hi);
        let template = extract_template_mesh(&model, &opts).unwrap();
        assert!(!template.is_empty());
        for c in [code(0, 0.3), code(1, -2.0)] {
            assert_eq!(extract_mesh(&model, &c, &opts).unwrap(), template);
            assert_eq!(
                extract_mesh_at_steps(&model, &c, 2, &opts).unwrap(),
                template
            );
        }
        assert!(extract_mesh_at_steps(&model, &code(0, 0.1), 5, &opts).is_err());
        assert!(extract_mesh(&model, &LatentCode::zeros(0, 3), &opts).is_err());
    }

    #[test]
    fn chunking_does_not_change_the_field() {
        let model = Model::new(small_config(), 4).unwrap();
        let c = code(0, 0.7);
        let a = sdf_field(
            &model,
            &c,
            4,
            &ExtractOptions {
                resolution: 9,
                chunk: 7,
            },
        )
        .unwrap();
        let b = sdf_field(
            &model,
            &c,
            4,
            &ExtractOptions {
                resolution: 9,
                chunk: 729,
            },
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a.values[100],
            model.forward_sdf(a.point(1, 2, 1), &c, 4).unwrap()
        );
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let a = code(0, 1.0);
        let b = code(1, -3.0);
        assert_eq!(interpolate_codes(&a, &b, 0.0).unwrap().values, a.values);
        assert_eq!(interpolate_codes(&a, &b, 1.0).unwrap().values, b.values);
        let neg = LatentCode::new(2, a.values.iter().map(|v| -v).collect());
        assert!(interpolate_codes(&a, &neg, 0.5)
            .unwrap()
            .values
            .iter()
            .all(|v| *v == 0.0));
        assert!(interpolate_codes(&a, &LatentCode::zeros(0, 3), 0.5).is_err());
        assert!(interpolate_codes(&a, &b, 1.5).is_err());
    }

    #[test]
    fn correspondence_rules() {
        let model = Model::new(small_config(), 5).unwrap();
        let c = code(0, 0.4);
        let pool: Vec<Point3> = (0..50)
            .map(|i| {
                Point3::new(
                    (i as f64 * 0.37).sin(),
                    (i as f64 * 0.71).cos(),
                    i as f64 / 50.0 - 0.5,
                )
            })
            .collect();
        // Same shape, source taken from the pool: zero canonical distance.
        let query = CorrespondenceQuery {
            source: pool[17],
            source_code: c.clone(),
            target_code: c.clone(),
            pool: pool.clone(),
        };
        let m = correspond(&model, &query).unwrap();
        assert_eq!(
            (m.pool_index, m.target, m.canonical_distance),
            (17, pool[17], 0.0)
        );

        // Identity warp reduces to Euclidean nearest neighbour, lowest index on ties.
        let mut identity = model.clone();
        identity.zero_warp_head();
        let mut dup = pool.clone();
        dup.push(pool[3]);
        dup.insert(0, pool[3]);
        let q = pool[3] + Point3::new(1e-3, 0.0, 0.0);
        let m = correspond(
            &identity,
            &CorrespondenceQuery {
                source: q,
                source_code: code(1, 2.0),
                target_code: c.clone(),
                pool: dup,
            },
        )
        .unwrap();
        assert_eq!(m.pool_index, 0);
        assert!((m.canonical_distance - 1e-3).abs() < 1e-12);

        // Matches an exhaustive search over the pool.
        let other = code(2, -0.8);
        let pool_canon = model.canonical_positions(&pool, &c).unwrap();
        let cp = CanonicalPool::new(&model, &c, &pool).unwrap();
        let sources: Vec<Point3> = pool.iter().map(|p| *p * 0.9).collect();
        for (s, m) in sources
            .iter()
            .zip(cp.correspond(&model, &sources, &other).unwrap())
        {
            let w = canonical_position(&model, *s, &other).unwrap();
            let best = crate::geometry::nearest_brute_force(&pool_canon, w).unwrap();
            assert_eq!(m.pool_index, best.0);
        }
        assert!(CanonicalPool::new(&model, &c, &[]).is_err());
    }

    #[test]
    fn latent_inference_leaves_network_untouched_and_fits() {
        let mut model = Model::new(small_config(), 6).unwrap();
        let set = sample_sdf(
            0,
            &ShapeSpec::sphere(0.5),
            &SamplingOptions {
                n_surface: 200,
                n_uniform: 50,
                ..SamplingOptions::default()
            },
            1,
        )
        .unwrap();
        let before = param_bits(&model);
        let zero = InferOptions {
            iterations: 0,
            ..InferOptions::default()
        };
        let init = infer_latent(&model, &set, &zero).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let normal = Normal::new(0.0, 0.01).unwrap();
        let expect: Vec<f64> = (0..4).map(|_| normal.sample(&mut rng)).collect();
        assert_eq!(init.values, expect);

        let opts = InferOptions {
            iterations: 60,
            lr: 0.05,
            points_per_iteration: 100,
            ..InferOptions::default()
        };
        let fitted = infer_latent(&model, &set, &opts).unwrap();
        assert_eq!(param_bits(&model), before);
        assert_eq!(fitted, infer_latent(&model, &set, &opts).unwrap());

        let mut loss = |c: &LatentCode| {
            let pts: Vec<Point3> = set.samples.iter().map(|s| s.point).collect();
            let gt: Vec<f64> = set.samples.iter().map(|s| s.sdf).collect();
            code_gradient(
                &mut model,
                &c.values,
                &pts,
                &gt,
                &Schedule::final_l1(4, 0.1),
                100.0,
            )
            .unwrap()
            .0
        };
        assert!(loss(&fitted) < loss(&init));

        let empty = SampleSet {
            shape_id: 0,
            samples: Vec::new(),
            n_surface: 0,
            n_uniform: 0,
        };
        assert!(matches!(
            infer_latent(&model, &empty, &opts),
            Err(Error::Empty(_))
        ));
    }
}
