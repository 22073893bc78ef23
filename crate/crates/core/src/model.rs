//! The template network `T: R^3 -> R`, the recurrent spatial warp
//! `W(p, c)`, and their composition `F(p, c) = T(W(p, c))`.
//!
//! Warping runs an LSTM cell for `steps` iterations. Each iteration feeds
//! `[c ⊕ p_prev]` to the cell, maps the hidden state through a linear head to
//! `(alpha, beta)`, and updates `p = p_prev + alpha ⊙ p_prev + beta`. The
//! recurrent state starts at zero and the first position is the query point.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::nn::{Linear, LstmCache, LstmCell, Matrix, ParamBlock, Parameterized, Softplus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub steps: usize,
    pub template_widths: Vec<usize>,
    pub softplus_beta: f64,
    /// Multiplier on the warp head's initial weights.
    pub head_init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 256,
            hidden: 256,
            steps: 8,
            template_widths: vec![256; 4],
            softplus_beta: 100.0,
            head_init_scale: 0.01,
        }
    }
}

impl ModelConfig {
    /// Small network used for the toy datasets.
    pub fn desk_scale() -> Self {
        ModelConfig {
            latent_dim: 16,
            hidden: 64,
            steps: 8,
            template_widths: vec![64; 4],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden == 0 || self.steps == 0 {
            return Err(Error::InvalidArgument(
                "latent_dim, hidden and steps must be positive".into(),
            ));
        }
        if self.template_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument(
                "template widths must be positive".into(),
            ));
        }
        if !(self.softplus_beta > 0.0 && self.softplus_beta.is_finite()) {
            return Err(Error::InvalidArgument(
                "softplus_beta must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-shape condition vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub shape_id: u32,
    pub values: Vec<f64>,
}

impl LatentCode {
    pub fn new(shape_id: u32, values: Vec<f64>) -> Self {
        LatentCode { shape_id, values }
    }

    pub fn zeros(shape_id: u32, dim: usize) -> Self {
        LatentCode::new(shape_id, vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Positions `p(0) ..= p(steps)` of one query point and the per-step
/// `(alpha, beta)` that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpTrajectory {
    pub positions: Vec<Point3>,
    pub alphas: Vec<Point3>,
    pub betas: Vec<Point3>,
}

impl WarpTrajectory {
    pub fn steps(&self) -> usize {
        self.positions.len() - 1
    }

    pub fn start(&self) -> Point3 {
        self.positions[0]
    }

    pub fn end(&self) -> Point3 {
        *self.positions.last().expect("trajectory has a start")
    }

    /// Total displacement `p(S) - p(0)`.
    pub fn shift(&self) -> Point3 {
        self.end() - self.start()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarpNet {
    pub lstm: LstmCell,
    pub head: Linear,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateNet {
    pub layers: Vec<Linear>,
    pub activation: Softplus,
}

/// Batched warp forward state kept for the backward pass.
#[derive(Debug, Clone)]
pub struct WarpForward {
    /// `positions[i]` is `B x 3`, for `i` in `0..=steps`.
    pub positions: Vec<Matrix>,
    /// Head outputs `[alpha | beta]`, `B x 6`, for steps `1..=steps`.
    pub head_out: Vec<Matrix>,
    hidden: Vec<Matrix>,
    lstm: Vec<LstmCache>,
}

impl WarpForward {
    pub fn batch(&self) -> usize {
        self.positions[0].rows()
    }

    pub fn steps(&self) -> usize {
        self.positions.len() - 1
    }

    pub fn position(&self, step: usize, row: usize) -> Point3 {
        let r = self.positions[step].row(row);
        Point3::new(r[0], r[1], r[2])
    }

    pub fn trajectory(&self, row: usize) -> WarpTrajectory {
        let steps = self.steps();
        let split = |i: usize, off: usize| {
            let r = self.head_out[i].row(row);
            Point3::new(r[off], r[off + 1], r[off + 2])
        };
        WarpTrajectory {
            positions: (0..=steps).map(|s| self.position(s, row)).collect(),
            alphas: (0..steps).map(|i| split(i, 0)).collect(),
            betas: (0..steps).map(|i| split(i, 3)).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TemplateCache {
    /// Layer inputs; `inputs[0]` is the query batch.
    inputs: Vec<Matrix>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Matrix>,
}

impl TemplateNet {
    pub fn new(widths: &[usize], beta: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut dims = vec![3];
        dims.extend_from_slice(widths);
        dims.push(1);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("template.l{i}"), w[0], w[1], rng))
            .collect();
        TemplateNet {
            layers,
            activation: Softplus { beta },
        }
    }

    /// SDF values for a `B x 3` batch, as a `B x 1` matrix.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(&h)?;
            h = if i < last {
                self.activation.apply(&pre)
            } else {
                pre
            };
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, TemplateCache)> {
        let mut inputs = vec![x.clone()];
        let mut pre_acts = Vec::with_capacity(self.layers.len() - 1);
        let last = self.layers.len() - 1;
        let mut out = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(inputs.last().expect("nonempty"))?;
            if i < last {
                inputs.push(self.activation.apply(&pre));
                pre_acts.push(pre);
            } else {
                out = Some(pre);
            }
        }
        Ok((
            out.expect("at least one layer"),
            TemplateCache {
                inputs,
                pre: pre_acts,
            },
        ))
    }

    /// Returns `dL/dx` for the cached batch.
    pub fn backward(
        &mut self,
        cache: &TemplateCache,
        d_out: &Matrix,
        accumulate: bool,
    ) -> Result<Matrix> {
        let mut grad = d_out.clone();
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                grad = self.activation.backward(&cache.pre[i], &grad);
            }
            grad = if accumulate {
                self.layers[i].backward(&cache.inputs[i], &grad)?
            } else {
                self.layers[i].input_grad(&grad)?
            };
        }
        Ok(grad)
    }
}

impl WarpNet {
    pub fn new(
        latent_dim: usize,
        hidden: usize,
        steps: usize,
        head_scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let lstm = LstmCell::new("warp.lstm", latent_dim + 3, hidden, rng);
        let mut head = Linear::new("warp.head", hidden, 6, rng);
        head.weight.values.iter_mut().for_each(|w| *w *= head_scale);
        head.bias.values.iter_mut().for_each(|b| *b = 0.0);
        WarpNet { lstm, head, steps }
    }

    pub fn latent_dim(&self) -> usize {
        self.lstm.input_dim() - 3
    }

    fn check_inputs(&self, code: &[f64], points: &Matrix, steps: usize) -> Result<()> {
        if code.len() != self.latent_dim() {
            return Err(Error::mismatch(
                "latent code",
                self.latent_dim(),
                code.len(),
            ));
        }
        if steps > self.steps {
            return Err(Error::InvalidArgument(format!(
                "requested {steps} warp steps, model has {}",
                self.steps
            )));
        }
        points.check_shape("warp input", points.rows(), 3)
    }

    pub fn forward(&self, code: &[f64], points: &Matrix, steps: usize) -> Result<WarpForward> {
        self.check_inputs(code, points, steps)?;
        let batch = points.rows();
        let hidden = self.lstm.hidden();
        let mut positions = vec![points.clone()];
        let mut head_out = Vec::with_capacity(steps);
        let mut hiddens = Vec::with_capacity(steps);
        let mut caches = Vec::with_capacity(steps);
        let mut h = Matrix::zeros(batch, hidden);
        let mut c = Matrix::zeros(batch, hidden);
        for _ in 0..steps {
            let prev = positions.last().expect("nonempty");
            let (h_next, c_next, cache) = self.lstm.forward(code, prev, &h, &c)?;
            let out = self.head.forward(&h_next)?;
            let mut next = prev.clone();
            apply_head(&mut next, &out);
            positions.push(next);
            head_out.push(out);
            hiddens.push(h_next.clone());
            caches.push(cache);
            h = h_next;
            c = c_next;
        }
        Ok(WarpForward {
            positions,
            head_out,
            hidden: hiddens,
            lstm: caches,
        })
    }

    /// Final positions `p(steps)` only, without backward caches.
    pub fn forward_end(&self, code: &[f64], points: &Matrix, steps: usize) -> Result<Matrix> {
        self.check_inputs(code, points, steps)?;
        let batch = points.rows();
        let hidden = self.lstm.hidden();
        let mut pos = points.clone();
        let mut h = Matrix::zeros(batch, hidden);
        let mut c = Matrix::zeros(batch, hidden);
        for _ in 0..steps {
            let (h_next, c_next) = self.lstm.forward_state(code, &pos, &h, &c)?;
            let out = self.head.forward(&h_next)?;
            apply_head(&mut pos, &out);
            h = h_next;
            c = c_next;
        }
        Ok(pos)
    }

    /// Backpropagates position gradients through the recurrence.
    ///
    /// `d_positions[i]` is `dL/dp(i)` from outside the warp (zeros where a
    /// position is unused). Returns `(dL/dc, dL/dp(0))`.
    pub fn backward(
        &mut self,
        code: &[f64],
        fwd: &WarpForward,
        mut d_positions: Vec<Matrix>,
        accumulate: bool,
    ) -> Result<(Vec<f64>, Matrix)> {
        let steps = fwd.steps();
        if d_positions.len() != steps + 1 {
            return Err(Error::mismatch(
                "warp position gradients",
                steps + 1,
                d_positions.len(),
            ));
        }
        let batch = fwd.batch();
        let hidden = self.lstm.hidden();
        let mut d_code = vec![0.0; code.len()];
        let mut dh_next = Matrix::zeros(batch, hidden);
        let mut dc_next = Matrix::zeros(batch, hidden);
        for i in (1..=steps).rev() {
            let g = std::mem::replace(&mut d_positions[i], Matrix::zeros(0, 3));
            g.check_shape("warp position gradient", batch, 3)?;
            let prev = &fwd.positions[i - 1];
            let out = &fwd.head_out[i - 1];
            let mut d_out = Matrix::zeros(batch, 6);
            let mut d_prev = Matrix::zeros(batch, 3);
            for r in 0..batch {
                let (gr, pr, or) = (g.row(r), prev.row(r), out.row(r));
                let dor = d_out.row_mut(r);
                for k in 0..3 {
                    dor[k] = gr[k] * pr[k];
                    dor[3 + k] = gr[k];
                }
                let dpr = d_prev.row_mut(r);
                for k in 0..3 {
                    dpr[k] = gr[k] * (1.0 + or[k]);
                }
            }
            let mut dh = if accumulate {
                self.head.backward(&fwd.hidden[i - 1], &d_out)?
            } else {
                self.head.input_grad(&d_out)?
            };
            dh.add_assign(&dh_next);
            let lg = self
                .lstm
                .backward(code, &fwd.lstm[i - 1], &dh, &dc_next, accumulate)?;
            for (d, v) in d_code.iter_mut().zip(&lg.d_shared) {
                *d += v;
            }
            d_prev.add_assign(&lg.d_rows);
            d_positions[i - 1].check_shape("warp position gradient", batch, 3)?;
            d_positions[i - 1].add_assign(&d_prev);
            dh_next = lg.dh_prev;
            dc_next = lg.dc_prev;
        }
        let d_points = std::mem::replace(&mut d_positions[0], Matrix::zeros(0, 3));
        Ok((d_code, d_points))
    }
}

/// `p += alpha * p + beta` per row, with `[alpha | beta]` from the head.
fn apply_head(pos: &mut Matrix, out: &Matrix) {
    for r in 0..pos.rows() {
        let o = out.row(r);
        let p = pos.row_mut(r);
        for k in 0..3 {
            p[k] += o[k] * p[k] + o[3 + k];
        }
    }
}

impl Parameterized for WarpNet {
    fn param_blocks(&self) -> Vec<&ParamBlock> {
        let mut v = self.lstm.param_blocks();
        v.extend(self.head.param_blocks());
        v
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut ParamBlock> {
        let mut v = self.lstm.param_blocks_mut();
        v.extend(self.head.param_blocks_mut());
        v
    }
}

impl Parameterized for TemplateNet {
    fn param_blocks(&self) -> Vec<&ParamBlock> {
        self.layers.iter().flat_map(|l| l.param_blocks()).collect()
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut ParamBlock> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.param_blocks_mut())
            .collect()
    }
}

/// Template network composed with the conditional warp.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub warp: WarpNet,
    pub template: TemplateNet,
}

pub(crate) fn points_to_matrix(points: &[Point3]) -> Matrix {
    let data = points.iter().flat_map(|p| p.to_array()).collect();
    Matrix::from_vec(points.len(), 3, data).expect("3 columns per point")
}

pub(crate) fn matrix_to_points(m: &Matrix) -> Vec<Point3> {
    (0..m.rows())
        .map(|r| {
            let row = m.row(r);
            Point3::new(row[0], row[1], row[2])
        })
        .collect()
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let warp = WarpNet::new(
            config.latent_dim,
            config.hidden,
            config.steps,
            config.head_init_scale,
            &mut rng,
        );
        let template = TemplateNet::new(&config.template_widths, config.softplus_beta, &mut rng);
        Ok(Model {
            config,
            warp,
            template,
        })
    }

    pub fn steps(&self) -> usize {
        self.config.steps
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Zeroes the warp head so every step is the identity update.
    pub fn zero_warp_head(&mut self) {
        for b in self.warp.head.param_blocks_mut() {
            b.values.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn check_code(&self, code: &LatentCode) -> Result<()> {
        if code.dim() != self.latent_dim() {
            return Err(Error::mismatch(
                "latent code",
                self.latent_dim(),
                code.dim(),
            ));
        }
        Ok(())
    }

    pub fn warp(&self, p: Point3, code: &LatentCode) -> Result<WarpTrajectory> {
        self.check_code(code)?;
        let fwd = self
            .warp
            .forward(&code.values, &points_to_matrix(&[p]), self.steps())?;
        Ok(fwd.trajectory(0))
    }

    pub fn warp_batch(
        &self,
        points: &[Point3],
        code: &LatentCode,
        steps: usize,
    ) -> Result<WarpForward> {
        self.check_code(code)?;
        self.warp
            .forward(&code.values, &points_to_matrix(points), steps)
    }

    /// Canonical positions `W(p, c)` for a batch.
    pub fn canonical_positions(&self, points: &[Point3], code: &LatentCode) -> Result<Vec<Point3>> {
        self.check_code(code)?;
        let end = self
            .warp
            .forward_end(&code.values, &points_to_matrix(points), self.steps())?;
        Ok(matrix_to_points(&end))
    }

    pub fn template_sdf(&self, p: Point3) -> f64 {
        self.template
            .forward(&points_to_matrix(&[p]))
            .expect("template input is 3-wide")
            .get(0, 0)
    }

    pub fn template_sdf_batch(&self, points: &[Point3]) -> Vec<f64> {
        self.template
            .forward(&points_to_matrix(points))
            .expect("template input is 3-wide")
            .into_vec()
    }

    /// `T(p(steps))`: zero steps gives the template alone, `S` the full model.
    pub fn forward_sdf(&self, p: Point3, code: &LatentCode, steps: usize) -> Result<f64> {
        Ok(self.forward_sdf_batch(&[p], code, steps)?[0])
    }

    pub fn forward_sdf_batch(
        &self,
        points: &[Point3],
        code: &LatentCode,
        steps: usize,
    ) -> Result<Vec<f64>> {
        if steps > self.steps() {
            return Err(Error::InvalidArgument(format!(
                "steps {steps} outside 0..={}",
                self.steps()
            )));
        }
        if points.is_empty() {
            return Ok(Vec::new());
        }
        self.check_code(code)?;
        let end = self
            .warp
            .forward_end(&code.values, &points_to_matrix(points), steps)?;
        Ok(self.template.forward(&end)?.into_vec())
    }
}

impl Parameterized for Model {
    fn param_blocks(&self) -> Vec<&ParamBlock> {
        let mut v = self.warp.param_blocks();
        v.extend(self.template.param_blocks());
        v
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut ParamBlock> {
        let mut v = self.warp.param_blocks_mut();
        v.extend(self.template.param_blocks_mut());
        v
    }
}
