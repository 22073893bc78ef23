//! Auto-decoder training: network weights and per-shape latent codes are
//! optimized jointly.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::geometry::{sample_sdf, Point3, SampleSet, SamplingOptions, SdfSample, ShapeSpec};
use crate::losses::{
    code_reg, curriculum_grad, curriculum_loss, derangement_pairs, huber, huber_grad,
    pointpair_grad, CorrespondencePair, LossBreakdown, RegWeights, Schedule,
};
use crate::model::{points_to_matrix, LatentCode, Model, ModelConfig};
use crate::nn::{Adam, AdamConfig, Matrix, Parameterized};

/// One latent code per training shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTable {
    pub codes: Vec<LatentCode>,
    pub init_std: f64,
}

impl LatentTable {
    /// Codes with i.i.d. `N(0, std²)` entries, one per id.
    pub fn init(ids: &[u32], dim: usize, std: f64, seed: u64) -> Result<Self> {
        if ids.is_empty() || dim == 0 {
            return Err(Error::InvalidArgument(
                "latent table needs shapes and a positive dimension".into(),
            ));
        }
        if !(std >= 0.0 && std.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "latent std {std} must be non-negative"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let codes = ids
            .iter()
            .map(|&id| {
                let values = (0..dim)
                    .map(|_| {
                        if std == 0.0 {
                            0.0
                        } else {
                            std * normal.sample(&mut rng)
                        }
                    })
                    .collect();
                LatentCode::new(id, values)
            })
            .collect();
        LatentTable::from_codes(codes, std)
    }

    pub fn from_codes(codes: Vec<LatentCode>, init_std: f64) -> Result<Self> {
        for (i, c) in codes.iter().enumerate() {
            if c.dim() != codes[0].dim() {
                return Err(Error::mismatch("latent dimension", codes[0].dim(), c.dim()));
            }
            if codes[..i].iter().any(|o| o.shape_id == c.shape_id) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate latent id {}",
                    c.shape_id
                )));
            }
        }
        Ok(LatentTable { codes, init_std })
    }

    pub fn dim(&self) -> usize {
        self.codes.first().map_or(0, |c| c.dim())
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.codes.iter().position(|c| c.shape_id == id)
    }

    pub fn get(&self, id: u32) -> Result<&LatentCode> {
        self.index_of(id)
            .map(|i| &self.codes[i])
            .ok_or(Error::UnknownShape(id as u64))
    }

    pub fn ids(&self) -> Vec<u32> {
        self.codes.iter().map(|c| c.shape_id).collect()
    }
}

/// Shapes `0..k`.
pub fn init_latents(k: usize, dim: usize, std: f64, seed: u64) -> Result<LatentTable> {
    let ids: Vec<u32> = (0..k as u32).collect();
    LatentTable::init(&ids, dim, std, seed)
}

/// Adam moments for one latent code, advanced only when that code is in a
/// batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeAdam {
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl CodeAdam {
    pub(crate) fn new(dim: usize) -> Self {
        CodeAdam {
            step: 0,
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
        }
    }

    pub(crate) fn apply(&mut self, config: &AdamConfig, values: &mut [f64], grads: &[f64]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - config.beta1.powi(t);
        let c2 = 1.0 - config.beta2.powi(t);
        for i in 0..values.len() {
            let g = grads[i];
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            *m = config.beta1 * *m + (1.0 - config.beta1) * g;
            *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
            values[i] -= config.lr * (*m / c1) / ((*v / c2).sqrt() + config.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub net: Adam,
    pub code_config: AdamConfig,
    /// Parallel to the latent table.
    pub codes: Vec<CodeAdam>,
}

impl OptimizerState {
    pub fn new(model: &Model, latents: &LatentTable, lr_net: f64, lr_code: f64) -> Self {
        OptimizerState {
            net: Adam::new(AdamConfig::with_lr(lr_net), &model.param_blocks()),
            code_config: AdamConfig::with_lr(lr_code),
            codes: latents
                .codes
                .iter()
                .map(|c| CodeAdam::new(c.dim()))
                .collect(),
        }
    }
}

/// Extra supervision pinning the template to a given shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSupervision {
    pub shape: ShapeSpec,
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default = "default_template_samples")]
    pub samples: SamplingOptions,
    #[serde(default = "default_points")]
    pub points_per_batch: usize,
}

/// Annotated correspondences pulled together in canonical space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSupervision {
    pub pairs: Vec<CorrespondencePair>,
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default = "default_points")]
    pub pairs_per_batch: usize,
}

fn one() -> f64 {
    1.0
}

fn default_points() -> usize {
    512
}

fn default_template_samples() -> SamplingOptions {
    SamplingOptions {
        n_surface: 4000,
        n_uniform: 1000,
        ..Default::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: u64,
    pub shapes_per_batch: usize,
    pub points_per_shape: usize,
    pub lr_net: f64,
    pub lr_code: f64,
    pub latent_std: f64,
    pub schedule: Schedule,
    pub reg: RegWeights,
    pub seed: u64,
    /// Write a checkpoint every this many iterations; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub template_supervision: Option<TemplateSupervision>,
    pub correspondence: Option<CorrespondenceSupervision>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            shapes_per_batch: 8,
            points_per_shape: 512,
            lr_net: 5e-4,
            lr_code: 1e-3,
            latent_std: 0.01,
            schedule: Schedule::default(),
            reg: RegWeights::default(),
            seed: 0,
            checkpoint_every: 0,
            log_every: 100,
            template_supervision: None,
            correspondence: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if self.shapes_per_batch == 0 || self.points_per_shape == 0 {
            return Err(Error::InvalidArgument(
                "batch sizes must be positive".into(),
            ));
        }
        if !(self.lr_net >= 0.0 && self.lr_code >= 0.0) {
            return Err(Error::InvalidArgument(
                "learning rates must be non-negative".into(),
            ));
        }
        self.schedule.validate(model.steps)?;
        self.reg.validate()?;
        if let Some(t) = &self.template_supervision {
            t.shape.validate()?;
            if t.points_per_batch == 0 || !(t.weight >= 0.0) {
                return Err(Error::InvalidArgument(
                    "invalid template supervision".into(),
                ));
            }
        }
        if let Some(c) = &self.correspondence {
            if c.pairs.is_empty() || c.pairs_per_batch == 0 || !(c.weight >= 0.0) {
                return Err(Error::InvalidArgument(
                    "invalid correspondence supervision".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Config {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Point indices drawn for one shape in one iteration.
struct ShapeDraw {
    table_index: usize,
    points: Vec<Point3>,
    gt: Vec<f64>,
    pairs: Vec<(usize, usize)>,
}

struct ShapeResult {
    model_grads: Vec<Vec<f64>>,
    code_grad: Vec<f64>,
    recon: Vec<f64>,
    pointwise: f64,
    pointpair: f64,
    code_reg: f64,
}

/// Network, latent table and optimizer state of a training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub latents: LatentTable,
    pub optimizer: OptimizerState,
    pub iteration: u64,
    pub config: TrainConfig,
    template_samples: Option<Vec<SdfSample>>,
}

impl Trainer {
    pub fn new(model_config: ModelConfig, config: TrainConfig, shape_ids: &[u32]) -> Result<Self> {
        config.validate(&model_config)?;
        let model = Model::new(model_config, config.seed)?;
        let latents = LatentTable::init(
            shape_ids,
            model.latent_dim(),
            config.latent_std,
            config.seed ^ 0x5eed_1a7e,
        )?;
        let optimizer = OptimizerState::new(&model, &latents, config.lr_net, config.lr_code);
        Trainer::assemble(model, latents, optimizer, 0, config)
    }

    /// Continues a run from a checkpoint that carries optimizer state.
    pub fn resume(checkpoint: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate(&checkpoint.model.config)?;
        let optimizer = checkpoint
            .optimizer
            .ok_or_else(|| Error::CheckpointMismatch("checkpoint has no optimizer state".into()))?;
        if optimizer.codes.len() != checkpoint.latents.len() {
            return Err(Error::CheckpointMismatch(
                "optimizer state does not match latent table".into(),
            ));
        }
        Trainer::assemble(
            checkpoint.model,
            checkpoint.latents,
            optimizer,
            checkpoint.iteration,
            config,
        )
    }

    fn assemble(
        model: Model,
        latents: LatentTable,
        optimizer: OptimizerState,
        iteration: u64,
        config: TrainConfig,
    ) -> Result<Self> {
        let template_samples = match &config.template_supervision {
            Some(t) => {
                Some(sample_sdf(u32::MAX, &t.shape, &t.samples, config.seed ^ 0x7e3f)?.samples)
            }
            None => None,
        };
        if let Some(c) = &config.correspondence {
            for p in &c.pairs {
                latents.get(p.shape_k)?;
                latents.get(p.shape_l)?;
            }
        }
        Ok(Trainer {
            model,
            latents,
            optimizer,
            iteration,
            config,
            template_samples,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            latents: self.latents.clone(),
            iteration: self.iteration,
            config_echo: serde_json::to_string(&self.config).expect("config serializes"),
            optimizer: Some(self.optimizer.clone()),
        }
    }

    /// Random generator for one iteration, independent of how the run got
    /// there.
    fn iteration_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.iteration + 1);
        rng
    }

    fn draw(&self, sets: &[&SampleSet], rng: &mut ChaCha8Rng) -> Vec<ShapeDraw> {
        let k = sets.len();
        let m = self.config.shapes_per_batch.min(k);
        let mut chosen = sample_indices(rng, k, m).into_vec();
        chosen.sort_unstable();
        chosen
            .into_iter()
            .map(|table_index| {
                let set = sets[table_index];
                let n = self.config.points_per_shape;
                let (points, gt) = (0..n)
                    .map(|_| {
                        let s = set.samples[rng.random_range(0..set.samples.len())];
                        (s.point, s.sdf)
                    })
                    .unzip();
                let pairs = if self.config.reg.lambda_pp > 0.0 {
                    derangement_pairs(n, rng)
                } else {
                    Vec::new()
                };
                ShapeDraw {
                    table_index,
                    points,
                    gt,
                    pairs,
                }
            })
            .collect()
    }

    /// One optimizer step on a mini-batch drawn from `sets`, which must hold
    /// one sample set per latent code.
    pub fn step(&mut self, sets: &[SampleSet]) -> Result<LossBreakdown> {
        let ordered = self.order_sets(sets)?;
        let mut rng = self.iteration_rng();
        let draws = self.draw(&ordered, &mut rng);
        let k = draws.len() as f64;

        let results: Vec<ShapeResult> = draws
            .par_iter()
            .map(|d| self.shape_gradients(d, k))
            .collect::<Result<_>>()?;

        let schedule = &self.config.schedule;
        let mut breakdown = LossBreakdown {
            recon: schedule.levels.iter().map(|l| (l.step, 0.0)).collect(),
            ..Default::default()
        };
        let mut code_grads: Vec<Option<Vec<f64>>> = vec![None; self.latents.len()];
        {
            let mut blocks = self.model.param_blocks_mut();
            for (d, r) in draws.iter().zip(&results) {
                for (b, g) in blocks.iter_mut().zip(&r.model_grads) {
                    for (a, v) in b.grads.iter_mut().zip(g) {
                        *a += v;
                    }
                }
                for (acc, v) in breakdown.recon.iter_mut().zip(&r.recon) {
                    acc.1 += v;
                }
                breakdown.pointwise += r.pointwise;
                breakdown.pointpair += r.pointpair;
                breakdown.code_reg += r.code_reg;
                add_code_grad(&mut code_grads, d.table_index, &r.code_grad);
            }
        }
        if self.template_samples.is_some() {
            breakdown.template = Some(self.template_supervision_step(&mut rng)?);
        }
        if self.config.correspondence.is_some() {
            breakdown.correspondence = Some(self.correspondence_step(&mut rng, &mut code_grads)?);
        }
        breakdown.total = breakdown.terms_sum();
        if !breakdown.is_finite() {
            self.model.zero_grads();
            return Err(Error::NonFinite {
                iteration: self.iteration,
                detail: format!("{breakdown:?}"),
            });
        }

        let mut blocks = self.model.param_blocks_mut();
        self.optimizer.net.step(&mut blocks)?;
        for (i, g) in code_grads.into_iter().enumerate() {
            if let Some(g) = g {
                let config = self.optimizer.code_config;
                self.optimizer.codes[i].apply(&config, &mut self.latents.codes[i].values, &g);
            }
        }
        self.iteration += 1;
        Ok(breakdown)
    }

    fn order_sets<'a>(&self, sets: &'a [SampleSet]) -> Result<Vec<&'a SampleSet>> {
        self.latents
            .codes
            .iter()
            .map(|c| {
                let set = sets
                    .iter()
                    .find(|s| s.shape_id == c.shape_id)
                    .ok_or(Error::UnknownShape(c.shape_id as u64))?;
                if set.is_empty() {
                    return Err(Error::Empty("shape samples"));
                }
                Ok(set)
            })
            .collect()
    }

    /// Loss terms and gradients of one shape's share of the batch, each
    /// already divided by the per-shape sample count and the shape count.
    fn shape_gradients(&self, d: &ShapeDraw, k: f64) -> Result<ShapeResult> {
        let mut model = self.model.clone();
        model.zero_grads();
        let code = &self.latents.codes[d.table_index].values;
        let reg = &self.config.reg;
        let schedule = &self.config.schedule;
        let n = d.points.len();
        let scale = 1.0 / (n as f64 * k);
        let steps = model.steps();

        let fwd = model
            .warp
            .forward(code, &points_to_matrix(&d.points), steps)?;

        let level_inputs: Vec<&Matrix> = schedule
            .levels
            .iter()
            .map(|l| &fwd.positions[l.step])
            .collect();
        let stacked = Matrix::vstack(&level_inputs)?;
        let (pred, cache) = model.template.forward_cached(&stacked)?;
        let mut d_pred = Matrix::zeros(pred.rows(), 1);
        let mut recon = Vec::with_capacity(schedule.levels.len());
        for (li, level) in schedule.levels.iter().enumerate() {
            let mut sum = 0.0;
            for i in 0..n {
                let f = pred.get(li * n + i, 0);
                sum += curriculum_loss(f, d.gt[i], &level.params);
                d_pred.set(
                    li * n + i,
                    0,
                    scale * curriculum_grad(f, d.gt[i], &level.params),
                );
            }
            recon.push(sum * scale);
        }
        let d_stacked = model.template.backward(&cache, &d_pred, true)?;

        let mut d_positions = vec![Matrix::zeros(n, 3); steps + 1];
        for (li, level) in schedule.levels.iter().enumerate() {
            d_positions[level.step].add_assign(&d_stacked.slice_rows(li * n, n));
        }

        let start = |i: usize| fwd.position(0, i);
        let shift = |i: usize| fwd.position(steps, i) - start(i);
        let mut pointwise = 0.0;
        if reg.lambda_pw > 0.0 {
            let w = reg.lambda_pw * scale;
            let dp = &mut d_positions[steps];
            for i in 0..n {
                let s = shift(i);
                pointwise += huber(s.norm(), reg.huber_delta);
                let g = huber_grad(s, reg.huber_delta) * w;
                add_row(dp, i, g);
            }
            pointwise *= w;
        }

        let mut pointpair = 0.0;
        if reg.lambda_pp > 0.0 && !d.pairs.is_empty() {
            let w = reg.lambda_pp / (d.pairs.len() as f64 * k);
            let dp = &mut d_positions[steps];
            for &(i, j) in &d.pairs {
                let (pi, pj) = (start(i), start(j));
                let dist = pi.distance(pj);
                if dist == 0.0 {
                    continue;
                }
                let (si, sj) = (shift(i), shift(j));
                pointpair += ((si - sj).norm() / dist - reg.epsilon_pp).max(0.0);
                if let Some(g) = pointpair_grad(pi, pj, si, sj, reg.epsilon_pp) {
                    add_row(dp, i, g * w);
                    add_row(dp, j, -(g * w));
                }
            }
            pointpair *= w;
        }

        let (mut code_grad, _) = model.warp.backward(code, &fwd, d_positions, true)?;
        let prior = 1.0 / (reg.sigma * reg.sigma * k);
        for (g, c) in code_grad.iter_mut().zip(code) {
            *g += 2.0 * prior * c;
        }
        Ok(ShapeResult {
            model_grads: model
                .param_blocks()
                .iter()
                .map(|b| b.grads.clone())
                .collect(),
            code_grad,
            recon,
            pointwise,
            pointpair,
            code_reg: code_reg([&code[..]], reg.sigma) / k,
        })
    }

    /// Mean `|T(p) - s|` over a random subset of the template samples,
    /// weighted; accumulates template gradients.
    fn template_supervision_step(&mut self, rng: &mut ChaCha8Rng) -> Result<f64> {
        let cfg = self
            .config
            .template_supervision
            .as_ref()
            .expect("checked by caller");
        let samples = self
            .template_samples
            .as_ref()
            .expect("generated with config");
        let n = cfg.points_per_batch;
        let picked: Vec<SdfSample> = (0..n)
            .map(|_| samples[rng.random_range(0..samples.len())])
            .collect();
        let points: Vec<Point3> = picked.iter().map(|s| s.point).collect();
        let (pred, cache) = self
            .model
            .template
            .forward_cached(&points_to_matrix(&points))?;
        let w = cfg.weight / n as f64;
        let mut loss = 0.0;
        let mut d_pred = Matrix::zeros(n, 1);
        for (i, s) in picked.iter().enumerate() {
            let r = pred.get(i, 0) - s.sdf;
            loss += r.abs();
            d_pred.set(i, 0, w * r.signum() * (r != 0.0) as u8 as f64);
        }
        self.model.template.backward(&cache, &d_pred, true)?;
        Ok(loss * w)
    }

    /// Mean squared canonical-space distance over a random subset of the
    /// annotated pairs, weighted; accumulates warp and code gradients.
    fn correspondence_step(
        &mut self,
        rng: &mut ChaCha8Rng,
        code_grads: &mut [Option<Vec<f64>>],
    ) -> Result<f64> {
        let cfg = self
            .config
            .correspondence
            .as_ref()
            .expect("checked by caller");
        let m = cfg.pairs_per_batch;
        let picked: Vec<CorrespondencePair> = (0..m)
            .map(|_| cfg.pairs[rng.random_range(0..cfg.pairs.len())])
            .collect();
        let w = cfg.weight / m as f64;
        let steps = self.model.steps();
        let mut loss = 0.0;
        for pair in &picked {
            let ia = self
                .latents
                .index_of(pair.shape_k)
                .ok_or(Error::UnknownShape(pair.shape_k as u64))?;
            let ib = self
                .latents
                .index_of(pair.shape_l)
                .ok_or(Error::UnknownShape(pair.shape_l as u64))?;
            let ca = self.latents.codes[ia].values.clone();
            let cb = self.latents.codes[ib].values.clone();
            let fa = self
                .model
                .warp
                .forward(&ca, &points_to_matrix(&[pair.p]), steps)?;
            let fb = self
                .model
                .warp
                .forward(&cb, &points_to_matrix(&[pair.q]), steps)?;
            let diff = fa.position(steps, 0) - fb.position(steps, 0);
            loss += diff.norm_squared();
            let g = diff * (2.0 * w);
            for (fwd, code, idx, g) in [(&fa, &ca, ia, g), (&fb, &cb, ib, -g)] {
                let mut d_positions = vec![Matrix::zeros(1, 3); steps + 1];
                add_row(&mut d_positions[steps], 0, g);
                let (dc, _) = self.model.warp.backward(code, fwd, d_positions, true)?;
                add_code_grad(code_grads, idx, &dc);
            }
        }
        Ok(loss * w)
    }
}

fn add_row(m: &mut Matrix, row: usize, g: Point3) {
    let r = m.row_mut(row);
    r[0] += g.x;
    r[1] += g.y;
    r[2] += g.z;
}

fn add_code_grad(code_grads: &mut [Option<Vec<f64>>], idx: usize, g: &[f64]) {
    match &mut code_grads[idx] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, v)| *a += v),
        slot => *slot = Some(g.to_vec()),
    }
}

/// Where [`train`] writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    pub checkpoint: Option<PathBuf>,
    pub loss_csv: Option<PathBuf>,
    /// Print a progress line every `log_every` iterations.
    pub verbose: bool,
}

/// Runs `trainer` up to `config.iterations`, writing the loss CSV, periodic
/// checkpoints (`<checkpoint>.<iteration>`) and the final checkpoint.
pub fn train_with(
    trainer: &mut Trainer,
    sets: &[SampleSet],
    out: &TrainOutputs,
) -> Result<Vec<LossBreakdown>> {
    let mut csv = match &out.loss_csv {
        Some(p) => {
            let resume = trainer.iteration > 0 && p.exists();
            let file = fs::OpenOptions::new()
                .create(true)
                .append(resume)
                .write(true)
                .truncate(!resume)
                .open(p)
                .map_err(|e| Error::io(p, e))?;
            Some((p.clone(), std::io::BufWriter::new(file), resume))
        }
        None => None,
    };
    let mut history = Vec::new();
    while trainer.iteration < trainer.config.iterations {
        let it = trainer.iteration;
        let b = match trainer.step(sets) {
            Ok(b) => b,
            Err(e @ Error::NonFinite { .. }) => {
                if let Some(ck) = &out.checkpoint {
                    let dump = ck.with_extension("nan.ditc");
                    trainer.checkpoint().save(&dump)?;
                    eprintln!(
                        "non-finite loss at iteration {it}; state dumped to {}",
                        dump.display()
                    );
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        if let Some((path, w, header_done)) = &mut csv {
            if !*header_done {
                writeln!(w, "{}", b.csv_header()).map_err(|e| Error::io(&*path, e))?;
                *header_done = true;
            }
            writeln!(w, "{}", b.csv_row(it)).map_err(|e| Error::io(&*path, e))?;
        }
        let log_every = trainer.config.log_every;
        if out.verbose
            && log_every > 0
            && (it % log_every == 0 || it + 1 == trainer.config.iterations)
        {
            let levels: Vec<String> = b
                .recon
                .iter()
                .map(|(s, v)| format!("rec{s}={v:.5}"))
                .collect();
            println!(
                "iter {it} total={:.6} {} pw={:.3e} pp={:.3e} code={:.3e}",
                b.total,
                levels.join(" "),
                b.pointwise,
                b.pointpair,
                b.code_reg
            );
        }
        let every = trainer.config.checkpoint_every;
        if let Some(ck) = &out.checkpoint {
            if every > 0
                && trainer.iteration % every == 0
                && trainer.iteration < trainer.config.iterations
            {
                let name = format!(
                    "{}.{}",
                    ck.file_name()
                        .and_then(|n| n.to_str())
                        .unwrap_or("checkpoint"),
                    trainer.iteration
                );
                trainer.checkpoint().save(ck.with_file_name(name))?;
            }
        }
        history.push(b);
    }
    if let Some((path, mut w, _)) = csv {
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    if let Some(ck) = &out.checkpoint {
        trainer.checkpoint().save(ck)?;
    }
    Ok(history)
}

/// Trains a fresh model on `sets` (one latent code per set).
pub fn train(
    model_config: ModelConfig,
    config: TrainConfig,
    sets: &[SampleSet],
    out: &TrainOutputs,
) -> Result<Trainer> {
    if sets.is_empty() {
        return Err(Error::Empty("training sample sets"));
    }
    let ids: Vec<u32> = sets.iter().map(|s| s.shape_id).collect();
    let mut trainer = Trainer::new(model_config, config, &ids)?;
    train_with(&mut trainer, sets, out)?;
    Ok(trainer)
}

/// Frozen-network helper: gradient of the averaged reconstruction loss
/// with respect to one code. Used by latent inference.
pub(crate) fn code_gradient(
    model: &mut Model,
    code: &[f64],
    points: &[Point3],
    gt: &[f64],
    schedule: &Schedule,
    sigma: f64,
) -> Result<(f64, Vec<f64>)> {
    let n = points.len();
    let steps = model.steps();
    let fwd = model.warp.forward(code, &points_to_matrix(points), steps)?;
    let level_inputs: Vec<&Matrix> = schedule
        .levels
        .iter()
        .map(|l| &fwd.positions[l.step])
        .collect();
    let stacked = Matrix::vstack(&level_inputs)?;
    let (pred, cache) = model.template.forward_cached(&stacked)?;
    let mut d_pred = Matrix::zeros(pred.rows(), 1);
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    for (li, level) in schedule.levels.iter().enumerate() {
        for i in 0..n {
            let f = pred.get(li * n + i, 0);
            loss += scale * curriculum_loss(f, gt[i], &level.params);
            d_pred.set(
                li * n + i,
                0,
                scale * curriculum_grad(f, gt[i], &level.params),
            );
        }
    }
    let d_stacked = model.template.backward(&cache, &d_pred, false)?;
    let mut d_positions = vec![Matrix::zeros(n, 3); steps + 1];
    for (li, level) in schedule.levels.iter().enumerate() {
        d_positions[level.step].add_assign(&d_stacked.slice_rows(li * n, n));
    }
    let (mut g, _) = model.warp.backward(code, &fwd, d_positions, false)?;
    let prior = 1.0 / (sigma * sigma);
    for (gi, c) in g.iter_mut().zip(code) {
        *gi += 2.0 * prior * c;
    }
    loss += code_reg([code], sigma);
    Ok((loss, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::toy_dataset;
    use crate::losses::{total_loss, ShapeBatch};

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            latent_dim: 4,
            hidden: 8,
            steps: 8,
            template_widths: vec![16, 16],
            softplus_beta: 10.0,
            head_init_scale: 0.01,
        }
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            iterations: 5,
            shapes_per_batch: 3,
            points_per_shape: 32,
            reg: RegWeights {
                lambda_pw: 0.1,
                lambda_pp: 0.1,
                epsilon_pp: 0.0,
                ..Default::default()
            },
            latent_std: 0.1,
            seed: 3,
            ..Default::default()
        }
    }

    fn toy_sets(n: usize) -> Vec<SampleSet> {
        let opts = SamplingOptions {
            n_surface: 200,
            n_uniform: 50,
            ..Default::default()
        };
        toy_dataset()
            .shapes
            .iter()
            .take(n)
            .map(|e| sample_sdf(e.id, &e.spec, &opts, e.id as u64).unwrap())
            .collect()
    }

    #[test]
    fn latent_init_statistics() {
        let t = init_latents(40, 256, 0.01, 1).unwrap();
        let vals: Vec<f64> = t.codes.iter().flat_map(|c| c.values.clone()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        assert!((std - 0.01).abs() < 0.0015, "{std}");
        assert_eq!(t, init_latents(40, 256, 0.01, 1).unwrap());
        let z = init_latents(3, 4, 0.0, 1).unwrap();
        assert!(z.codes.iter().all(|c| c.values.iter().all(|v| *v == 0.0)));
        assert!(init_latents(0, 4, 0.1, 1).is_err());
    }

    #[test]
    fn step_loss_matches_reference_total_loss() {
        let sets = toy_sets(4);
        let mut trainer = Trainer::new(tiny_model(), tiny_config(), &[0, 1, 2, 3]).unwrap();
        let before = trainer.clone();
        let b = trainer.step(&sets).unwrap();

        let ordered = before.order_sets(&sets).unwrap();
        let draws = before.draw(&ordered, &mut before.iteration_rng());
        let batch: Vec<ShapeBatch> = draws
            .iter()
            .map(|d| {
                let code = &before.latents.codes[d.table_index];
                ShapeBatch {
                    code: &code.values,
                    trajectories: d
                        .points
                        .iter()
                        .map(|p| before.model.warp(*p, code).unwrap())
                        .collect(),
                    gt: d.gt.clone(),
                    pairs: d.pairs.clone(),
                }
            })
            .collect();
        let reference = total_loss(
            &before.model.template,
            &batch,
            &before.config.reg,
            &before.config.schedule,
        )
        .unwrap();
        assert!(
            (reference.total - b.total).abs() < 1e-12,
            "{} vs {}",
            reference.total,
            b.total
        );
        for (a, r) in b.recon.iter().zip(&reference.recon) {
            assert!((a.1 - r.1).abs() < 1e-12);
        }
        assert!((b.pointpair - reference.pointpair).abs() < 1e-12);
        assert!((b.pointwise - reference.pointwise).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences_of_reference_loss() {
        let sets = toy_sets(2);
        let mut config = tiny_config();
        config.points_per_shape = 6;
        config.shapes_per_batch = 2;
        // Pure L1 keeps the loss smooth away from the sample values.
        config.schedule = Schedule::final_l1(8, 1.0);
        config.reg.epsilon_pp = 0.0;
        let mut model_cfg = tiny_model();
        model_cfg.head_init_scale = 1.0;
        let trainer = Trainer::new(model_cfg, config, &[0, 1]).unwrap();
        let ordered = trainer.order_sets(&sets).unwrap();
        let draws = trainer.draw(&ordered, &mut trainer.iteration_rng());

        let reference = |model: &Model, latents: &LatentTable| {
            let batch: Vec<ShapeBatch> = draws
                .iter()
                .map(|d| {
                    let code = &latents.codes[d.table_index];
                    ShapeBatch {
                        code: &code.values,
                        trajectories: d
                            .points
                            .iter()
                            .map(|p| model.warp(*p, code).unwrap())
                            .collect(),
                        gt: d.gt.clone(),
                        pairs: d.pairs.clone(),
                    }
                })
                .collect();
            total_loss(
                &model.template,
                &batch,
                &trainer.config.reg,
                &trainer.config.schedule,
            )
            .unwrap()
            .total
        };
        let k = draws.len() as f64;
        let results: Vec<ShapeResult> = draws
            .iter()
            .map(|d| trainer.shape_gradients(d, k).unwrap())
            .collect();
        let h = 1e-6;
        let blocks = trainer.model.param_blocks();
        for (bi, block) in blocks.iter().enumerate() {
            for idx in (0..block.len()).step_by(7) {
                let analytic: f64 = results.iter().map(|r| r.model_grads[bi][idx]).sum();
                let mut plus = trainer.model.clone();
                plus.param_blocks_mut()[bi].values[idx] += h;
                let mut minus = trainer.model.clone();
                minus.param_blocks_mut()[bi].values[idx] -= h;
                let fd = (reference(&plus, &trainer.latents) - reference(&minus, &trainer.latents))
                    / (2.0 * h);
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-4, "{} [{idx}]: {analytic} vs {fd}", block.name);
            }
        }
        for (d, r) in draws.iter().zip(&results) {
            for j in 0..4 {
                let mut plus = trainer.latents.clone();
                plus.codes[d.table_index].values[j] += h;
                let mut minus = trainer.latents.clone();
                minus.codes[d.table_index].values[j] -= h;
                let fd = (reference(&trainer.model, &plus) - reference(&trainer.model, &minus))
                    / (2.0 * h);
                let rel =
                    (r.code_grad[j] - fd).abs() / r.code_grad[j].abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-4, "code {j}: {} vs {fd}", r.code_grad[j]);
            }
        }
    }

    #[test]
    fn absent_codes_are_untouched_and_runs_are_deterministic() {
        let sets = toy_sets(6);
        let ids: Vec<u32> = (0..6).collect();
        let mut a = Trainer::new(tiny_model(), tiny_config(), &ids).unwrap();
        let mut b = Trainer::new(tiny_model(), tiny_config(), &ids).unwrap();
        for _ in 0..3 {
            let before = a.latents.clone();
            let ordered = a.order_sets(&sets).unwrap();
            let chosen: Vec<usize> = a
                .draw(&ordered, &mut a.iteration_rng())
                .iter()
                .map(|d| d.table_index)
                .collect();
            let la = a.step(&sets).unwrap();
            let lb = b.step(&sets).unwrap();
            assert_eq!(la, lb);
            for i in 0..6 {
                if chosen.contains(&i) {
                    assert_ne!(a.latents.codes[i], before.codes[i]);
                } else {
                    assert_eq!(a.latents.codes[i], before.codes[i]);
                }
            }
        }
        assert_eq!(a.checkpoint().encode(), b.checkpoint().encode());
    }

    #[test]
    fn zero_learning_rates_freeze_everything() {
        let sets = toy_sets(3);
        let mut config = tiny_config();
        config.lr_net = 0.0;
        config.lr_code = 0.0;
        let mut t = Trainer::new(tiny_model(), config, &[0, 1, 2]).unwrap();
        let (model, latents) = (t.model.clone(), t.latents.clone());
        t.step(&sets).unwrap();
        assert_eq!(t.latents, latents);
        for (a, b) in t.model.param_blocks().iter().zip(model.param_blocks()) {
            assert_eq!(a.values, b.values);
        }
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let sets = toy_sets(3);
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config();
        config.iterations = 6;
        let full = train(
            tiny_model(),
            config.clone(),
            &sets,
            &TrainOutputs::default(),
        )
        .unwrap();

        let mut half_cfg = config.clone();
        half_cfg.iterations = 3;
        let ck_path = dir.path().join("half.ditc");
        train(
            tiny_model(),
            half_cfg,
            &sets,
            &TrainOutputs {
                checkpoint: Some(ck_path.clone()),
                ..Default::default()
            },
        )
        .unwrap();
        let mut resumed = Trainer::resume(Checkpoint::load(&ck_path).unwrap(), config).unwrap();
        train_with(&mut resumed, &sets, &TrainOutputs::default()).unwrap();
        assert_eq!(resumed.checkpoint().encode(), full.checkpoint().encode());
    }

    #[test]
    fn csv_has_extension_columns_when_enabled() {
        let sets = toy_sets(2);
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config();
        config.iterations = 2;
        config.template_supervision = Some(TemplateSupervision {
            shape: ShapeSpec::sphere(0.4),
            weight: 1.0,
            samples: SamplingOptions {
                n_surface: 50,
                n_uniform: 50,
                ..Default::default()
            },
            points_per_batch: 16,
        });
        config.correspondence = Some(CorrespondenceSupervision {
            pairs: vec![CorrespondencePair {
                shape_k: 0,
                p: Point3::new(0.3, 0.0, 0.0),
                shape_l: 1,
                q: Point3::new(0.4, 0.0, 0.0),
            }],
            weight: 1.0,
            pairs_per_batch: 2,
        });
        let csv = dir.path().join("loss.csv");
        train(
            tiny_model(),
            config,
            &sets,
            &TrainOutputs {
                loss_csv: Some(csv.clone()),
                ..Default::default()
            },
        )
        .unwrap();
        let text = fs::read_to_string(csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iteration,l_rec_s2,l_rec_s4,l_rec_s6,l_rec_s8,l_pw,l_pp,code_reg,l_temp,l_corr,total"
        );
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn missing_sample_set_is_an_error() {
        let sets = toy_sets(2);
        let mut t = Trainer::new(tiny_model(), tiny_config(), &[0, 1, 5]).unwrap();
        assert!(matches!(t.step(&sets), Err(Error::UnknownShape(5))));
    }
}
