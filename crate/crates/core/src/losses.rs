//! Training objectives. The scalar operations here return plain sums; the
//! training loop divides by the mini-batch sizes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{clamp_tsdf, Point3, SdfSample, DEFAULT_TRUNCATION};
use crate::model::{points_to_matrix, LatentCode, Model, TemplateNet, WarpTrajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumParams {
    pub epsilon: f64,
    pub lambda: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    DEFAULT_TRUNCATION
}

impl CurriculumParams {
    pub fn new(epsilon: f64, lambda: f64, delta: f64) -> Self {
        CurriculumParams {
            epsilon,
            lambda,
            delta,
        }
    }

    /// Plain clamped L1.
    pub fn l1(delta: f64) -> Self {
        CurriculumParams::new(0.0, 0.0, delta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && (0.0..1.0).contains(&self.lambda) && self.delta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "curriculum parameters need epsilon >= 0, 0 <= lambda < 1, delta > 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn curriculum_weight(f: f64, s: f64, p: &CurriculumParams) -> f64 {
    1.0 + p.lambda * sgn(s) * sgn(s - f)
}

/// `w * max(|clamp(f) - clamp(s)| - epsilon, 0)` with
/// `w = 1 + lambda * sgn(s) * sgn(s - f)`.
pub fn curriculum_loss(f: f64, s: f64, p: &CurriculumParams) -> f64 {
    let diff = (clamp_tsdf(f, p.delta) - clamp_tsdf(s, p.delta)).abs();
    curriculum_weight(f, s, p) * (diff - p.epsilon).max(0.0)
}

/// Derivative of [`curriculum_loss`] with respect to `f`.
pub fn curriculum_grad(f: f64, s: f64, p: &CurriculumParams) -> f64 {
    if f.abs() >= p.delta {
        return 0.0;
    }
    let diff = f - clamp_tsdf(s, p.delta);
    if diff.abs() <= p.epsilon {
        return 0.0;
    }
    curriculum_weight(f, s, p) * sgn(diff)
}

/// Supervised warp steps and their curriculum parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub levels: Vec<ScheduleLevel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleLevel {
    pub step: usize,
    #[serde(flatten)]
    pub params: CurriculumParams,
}

impl Default for Schedule {
    /// Coarse-to-fine supervision at every other step of an 8-step warp.
    fn default() -> Self {
        let d = DEFAULT_TRUNCATION;
        Schedule {
            levels: vec![
                ScheduleLevel {
                    step: 2,
                    params: CurriculumParams::new(0.025, 0.0, d),
                },
                ScheduleLevel {
                    step: 4,
                    params: CurriculumParams::new(0.01, 0.1, d),
                },
                ScheduleLevel {
                    step: 6,
                    params: CurriculumParams::new(0.0025, 0.2, d),
                },
                ScheduleLevel {
                    step: 8,
                    params: CurriculumParams::new(0.0, 0.5, d),
                },
            ],
        }
    }
}

impl Schedule {
    /// Plain clamped L1 on the final output only.
    pub fn final_l1(steps: usize, delta: f64) -> Self {
        Schedule {
            levels: vec![ScheduleLevel {
                step: steps,
                params: CurriculumParams::l1(delta),
            }],
        }
    }

    pub fn steps(&self) -> impl Iterator<Item = usize> + '_ {
        self.levels.iter().map(|l| l.step)
    }

    pub fn max_step(&self) -> usize {
        self.steps().max().unwrap_or(0)
    }

    pub fn get(&self, step: usize) -> Option<&CurriculumParams> {
        self.levels
            .iter()
            .find(|l| l.step == step)
            .map(|l| &l.params)
    }

    pub fn validate(&self, model_steps: usize) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::InvalidArgument("schedule has no levels".into()));
        }
        for (i, l) in self.levels.iter().enumerate() {
            l.params.validate()?;
            if l.step == 0 || l.step > model_steps {
                return Err(Error::InvalidArgument(format!(
                    "schedule step {} outside 1..={model_steps}",
                    l.step
                )));
            }
            if self.levels[..i].iter().any(|o| o.step == l.step) {
                return Err(Error::InvalidArgument(format!(
                    "schedule step {} repeated",
                    l.step
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegWeights {
    pub lambda_pw: f64,
    pub lambda_pp: f64,
    pub epsilon_pp: f64,
    pub huber_delta: f64,
    pub sigma: f64,
}

impl Default for RegWeights {
    fn default() -> Self {
        RegWeights {
            lambda_pw: 5e-4,
            lambda_pp: 1e-3,
            epsilon_pp: 0.5,
            huber_delta: 0.25,
            sigma: 100.0,
        }
    }
}

impl RegWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.lambda_pw, self.lambda_pp, self.epsilon_pp]
            .iter()
            .all(|v| *v >= 0.0 && v.is_finite())
            && self.huber_delta > 0.0
            && self.sigma > 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "invalid regularizer weights {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn huber(x: f64, delta: f64) -> f64 {
    if x <= delta {
        x * x / (2.0 * delta)
    } else {
        x - delta / 2.0
    }
}

/// Gradient of `huber(|v|)` with respect to the vector `v`.
pub fn huber_grad(v: Point3, delta: f64) -> Point3 {
    let x = v.norm();
    if x <= delta {
        v * (1.0 / delta)
    } else {
        v * (1.0 / x)
    }
}

/// `Σ_s Σ_i curriculum_loss(T(p_i(s)), gt_i)` over the scheduled steps.
pub fn progressive_recon_loss(
    template: &TemplateNet,
    trajectories: &[WarpTrajectory],
    gt: &[f64],
    schedule: &Schedule,
) -> Result<f64> {
    Ok(recon_levels(template, trajectories, gt, schedule)?
        .iter()
        .sum())
}

/// Per-level sums of [`progressive_recon_loss`], in schedule order.
pub fn recon_levels(
    template: &TemplateNet,
    trajectories: &[WarpTrajectory],
    gt: &[f64],
    schedule: &Schedule,
) -> Result<Vec<f64>> {
    if trajectories.len() != gt.len() {
        return Err(Error::mismatch(
            "ground-truth values",
            trajectories.len(),
            gt.len(),
        ));
    }
    schedule
        .levels
        .iter()
        .map(|level| {
            let points = trajectories
                .iter()
                .map(|t| {
                    t.positions.get(level.step).copied().ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "trajectory has {} steps, schedule needs step {}",
                            t.steps(),
                            level.step
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if points.is_empty() {
                return Ok(0.0);
            }
            let pred = template.forward(&points_to_matrix(&points))?;
            Ok(pred
                .as_slice()
                .iter()
                .zip(gt)
                .map(|(f, s)| curriculum_loss(*f, *s, &level.params))
                .sum())
        })
        .collect()
}

/// `Σ huber(|p(S) - p(0)|)`.
pub fn pointwise_reg(trajectories: &[WarpTrajectory], huber_delta: f64) -> f64 {
    trajectories
        .iter()
        .map(|t| huber(t.shift().norm(), huber_delta))
        .sum()
}

/// `Σ_pairs max(|Δp_i - Δp_j| / |p_i - p_j| - epsilon, 0)`; pairs of
/// coincident points contribute nothing.
pub fn pointpair_reg(
    points: &[Point3],
    shifts: &[Point3],
    pairs: &[(usize, usize)],
    epsilon: f64,
) -> f64 {
    pairs
        .iter()
        .map(|&(i, j)| {
            let dist = points[i].distance(points[j]);
            if dist == 0.0 {
                return 0.0;
            }
            ((shifts[i] - shifts[j]).norm() / dist - epsilon).max(0.0)
        })
        .sum()
}

/// Gradients of one [`pointpair_reg`] term with respect to `Δp_i` (the
/// gradient for `Δp_j` is its negation). `None` when the hinge is inactive.
pub fn pointpair_grad(
    p_i: Point3,
    p_j: Point3,
    d_i: Point3,
    d_j: Point3,
    epsilon: f64,
) -> Option<Point3> {
    let dist = p_i.distance(p_j);
    if dist == 0.0 {
        return None;
    }
    let diff = d_i - d_j;
    let n = diff.norm();
    if n == 0.0 || n / dist - epsilon <= 0.0 {
        return None;
    }
    Some(diff * (1.0 / (n * dist)))
}

/// Pairs every index with its image under a random cyclic permutation, so
/// each point appears once as the first member and no point is its own pair.
pub fn derangement_pairs<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    if n < 2 {
        return Vec::new();
    }
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..i);
        perm.swap(i, j);
    }
    perm.into_iter().enumerate().collect()
}

/// `(1/σ²) Σ_k |c_k|²`.
pub fn code_reg<'a>(codes: impl IntoIterator<Item = &'a [f64]>, sigma: f64) -> f64 {
    let sq: f64 = codes
        .into_iter()
        .flat_map(|c| c.iter().map(|v| v * v))
        .sum();
    sq / (sigma * sigma)
}

/// `Σ |T(p_i) - s_i|`.
pub fn template_supervision_loss(template: &TemplateNet, samples: &[SdfSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("template supervision samples"));
    }
    let points: Vec<Point3> = samples.iter().map(|s| s.point).collect();
    let pred = template.forward(&points_to_matrix(&points))?;
    Ok(pred
        .as_slice()
        .iter()
        .zip(samples)
        .map(|(f, s)| (f - s.sdf).abs())
        .sum())
}

/// A point on shape `shape_k` annotated as corresponding to a point on
/// shape `shape_l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrespondencePair {
    pub shape_k: u32,
    pub p: Point3,
    pub shape_l: u32,
    pub q: Point3,
}

pub(crate) fn find_code(codes: &[LatentCode], id: u32) -> Result<&LatentCode> {
    codes
        .iter()
        .find(|c| c.shape_id == id)
        .ok_or(Error::UnknownShape(id as u64))
}

/// `Σ |W(p, c_k) - W(q, c_l)|²`.
pub fn correspondence_loss(
    model: &Model,
    pairs: &[CorrespondencePair],
    codes: &[LatentCode],
) -> Result<f64> {
    let mut total = 0.0;
    for pair in pairs {
        let a = model.warp(pair.p, find_code(codes, pair.shape_k)?)?.end();
        let b = model.warp(pair.q, find_code(codes, pair.shape_l)?)?.end();
        total += a.distance_squared(b);
    }
    Ok(total)
}

/// Weighted loss terms of one training step; the terms sum to `total`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossBreakdown {
    /// `(step, value)` per schedule level.
    pub recon: Vec<(usize, f64)>,
    pub pointwise: f64,
    pub pointpair: f64,
    pub code_reg: f64,
    pub template: Option<f64>,
    pub correspondence: Option<f64>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn terms_sum(&self) -> f64 {
        self.recon.iter().map(|r| r.1).sum::<f64>()
            + self.pointwise
            + self.pointpair
            + self.code_reg
            + self.template.unwrap_or(0.0)
            + self.correspondence.unwrap_or(0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.terms_sum().is_finite() && self.total.is_finite()
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["iteration".to_string()];
        cols.extend(self.recon.iter().map(|(s, _)| format!("l_rec_s{s}")));
        cols.extend(["l_pw", "l_pp", "code_reg"].map(String::from));
        if self.template.is_some() {
            cols.push("l_temp".into());
        }
        if self.correspondence.is_some() {
            cols.push("l_corr".into());
        }
        cols.push("total".into());
        cols.join(",")
    }

    pub fn csv_row(&self, iteration: u64) -> String {
        let mut vals: Vec<f64> = self.recon.iter().map(|r| r.1).collect();
        vals.extend([self.pointwise, self.pointpair, self.code_reg]);
        vals.extend(self.template);
        vals.extend(self.correspondence);
        vals.push(self.total);
        let mut row = iteration.to_string();
        for v in vals {
            row.push(',');
            row.push_str(&format!("{v:e}"));
        }
        row
    }
}

/// One shape's share of a mini-batch.
#[derive(Debug, Clone)]
pub struct ShapeBatch<'a> {
    pub code: &'a [f64],
    pub trajectories: Vec<WarpTrajectory>,
    pub gt: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
}

/// Reconstruction and regularization objective for a mini-batch.
///
/// Each per-sample term is averaged over the shape's samples (point-pair
/// term over its pairs), then all terms are averaged over shapes. The code
/// prior is likewise the per-shape mean of `|c|² / σ²`.
pub fn total_loss(
    template: &TemplateNet,
    batch: &[ShapeBatch<'_>],
    weights: &RegWeights,
    schedule: &Schedule,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Empty("loss batch"));
    }
    let k = batch.len() as f64;
    let mut out = LossBreakdown {
        recon: schedule.levels.iter().map(|l| (l.step, 0.0)).collect(),
        ..Default::default()
    };
    for shape in batch {
        let n = shape.trajectories.len();
        if n == 0 {
            return Err(Error::Empty("shape samples"));
        }
        let n = n as f64;
        let levels = recon_levels(template, &shape.trajectories, &shape.gt, schedule)?;
        for (acc, v) in out.recon.iter_mut().zip(levels) {
            acc.1 += v / n / k;
        }
        out.pointwise +=
            weights.lambda_pw * pointwise_reg(&shape.trajectories, weights.huber_delta) / n / k;
        if !shape.pairs.is_empty() {
            let points: Vec<Point3> = shape.trajectories.iter().map(|t| t.start()).collect();
            let shifts: Vec<Point3> = shape.trajectories.iter().map(|t| t.shift()).collect();
            let pp = pointpair_reg(&points, &shifts, &shape.pairs, weights.epsilon_pp);
            out.pointpair += weights.lambda_pp * pp / shape.pairs.len() as f64 / k;
        }
        out.code_reg += code_reg([shape.code], weights.sigma) / k;
    }
    out.total = out.terms_sum();
    Ok(out)
}
