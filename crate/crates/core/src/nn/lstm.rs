use rand::Rng;

use super::fastmath;
use super::matrix::{gemm, Matrix, View};
use super::param::{ParamBlock, Parameterized};
use crate::error::{Error, Result};

/// Standard LSTM cell (no peepholes), gate order `i, f, g, o`.
///
/// The input of each row is `[shared ⊕ row]`: a vector common to the whole
/// batch followed by per-row features. `w_input` is `4H x input_dim`,
/// `w_hidden` is `4H x H`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub w_input: ParamBlock,
    pub w_hidden: ParamBlock,
    pub bias: ParamBlock,
}

/// Values saved by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    rows: Matrix,
    h_prev: Matrix,
    c_prev: Matrix,
    /// Activated gates, `B x 4H`.
    gates: Matrix,
    tanh_c: Matrix,
}

#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub d_shared: Vec<f64>,
    pub d_rows: Matrix,
    pub dh_prev: Matrix,
    pub dc_prev: Matrix,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(name: &str, input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let w_input = ParamBlock::uniform(
            format!("{name}.w_input"),
            vec![4 * hidden, input_dim],
            1.0 / (input_dim as f64).sqrt(),
            rng,
        );
        let w_hidden = ParamBlock::uniform(
            format!("{name}.w_hidden"),
            vec![4 * hidden, hidden],
            1.0 / (hidden as f64).sqrt(),
            rng,
        );
        let mut bias = ParamBlock::uniform(
            format!("{name}.bias"),
            vec![4 * hidden],
            1.0 / (hidden as f64).sqrt(),
            rng,
        );
        bias.values[hidden..2 * hidden]
            .iter_mut()
            .for_each(|b| *b = 1.0);
        LstmCell {
            w_input,
            w_hidden,
            bias,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.shape[1]
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.shape[1]
    }

    fn check(&self, shared: &[f64], rows: &Matrix, h: &Matrix, c: &Matrix) -> Result<()> {
        let hidden = self.hidden();
        if shared.len() + rows.cols() != self.input_dim() {
            return Err(Error::mismatch(
                "lstm input",
                self.input_dim(),
                shared.len() + rows.cols(),
            ));
        }
        h.check_shape("lstm hidden state", rows.rows(), hidden)?;
        c.check_shape("lstm cell state", rows.rows(), hidden)
    }

    /// Gate bias plus the contribution of the shared input.
    fn effective_bias(&self, shared: &[f64]) -> Vec<f64> {
        let mut b = self.bias.values.clone();
        if !shared.is_empty() {
            let w = View::dense(&self.w_input.values, 4 * self.hidden(), self.input_dim());
            gemm(
                1.0,
                w.cols_range(0, shared.len()),
                View::dense(shared, shared.len(), 1),
                1.0,
                &mut b,
            );
        }
        b
    }

    pub fn forward(
        &self,
        shared: &[f64],
        rows: &Matrix,
        h_prev: &Matrix,
        c_prev: &Matrix,
    ) -> Result<(Matrix, Matrix, LstmCache)> {
        let (h, c, gates, tanh_c) = self.step(shared, rows, h_prev, c_prev)?;
        let cache = LstmCache {
            rows: rows.clone(),
            h_prev: h_prev.clone(),
            c_prev: c_prev.clone(),
            gates,
            tanh_c,
        };
        Ok((h, c, cache))
    }

    /// Same as [`LstmCell::forward`] without keeping anything for backward.
    pub fn forward_state(
        &self,
        shared: &[f64],
        rows: &Matrix,
        h_prev: &Matrix,
        c_prev: &Matrix,
    ) -> Result<(Matrix, Matrix)> {
        let (h, c, _, _) = self.step(shared, rows, h_prev, c_prev)?;
        Ok((h, c))
    }

    fn step(
        &self,
        shared: &[f64],
        rows: &Matrix,
        h_prev: &Matrix,
        c_prev: &Matrix,
    ) -> Result<(Matrix, Matrix, Matrix, Matrix)> {
        self.check(shared, rows, h_prev, c_prev)?;
        let hidden = self.hidden();
        let batch = rows.rows();
        let bias = self.effective_bias(shared);
        let mut gates = Matrix::zeros(batch, 4 * hidden);
        for r in 0..batch {
            gates.row_mut(r).copy_from_slice(&bias);
        }
        let w = View::dense(&self.w_input.values, 4 * hidden, self.input_dim());
        if rows.cols() > 0 {
            gemm(
                1.0,
                View::of(rows),
                w.cols_range(shared.len(), rows.cols()).t(),
                1.0,
                gates.as_mut_slice(),
            );
        }
        gemm(
            1.0,
            View::of(h_prev),
            View::dense(&self.w_hidden.values, 4 * hidden, hidden).t(),
            1.0,
            gates.as_mut_slice(),
        );

        let mut h = Matrix::zeros(batch, hidden);
        let mut c = Matrix::zeros(batch, hidden);
        let mut tanh_c = Matrix::zeros(batch, hidden);
        for r in 0..batch {
            let g = gates.row_mut(r);
            fastmath::sigmoid_slice(&mut g[..2 * hidden]);
            fastmath::tanh_slice(&mut g[2 * hidden..3 * hidden]);
            fastmath::sigmoid_slice(&mut g[3 * hidden..]);
            let g = gates.row(r);
            let cp = c_prev.row(r);
            let cr = c.row_mut(r);
            for k in 0..hidden {
                cr[k] = g[hidden + k] * cp[k] + g[k] * g[2 * hidden + k];
            }
            let tr = tanh_c.row_mut(r);
            tr.copy_from_slice(c.row(r));
            fastmath::tanh_slice(tr);
            let tr = tanh_c.row(r);
            let hr = h.row_mut(r);
            for k in 0..hidden {
                hr[k] = g[3 * hidden + k] * tr[k];
            }
        }
        Ok((h, c, gates, tanh_c))
    }

    /// Exact vector-Jacobian product. Parameter gradients are accumulated
    /// only when `accumulate` is set.
    pub fn backward(
        &mut self,
        shared: &[f64],
        cache: &LstmCache,
        dh: &Matrix,
        dc: &Matrix,
        accumulate: bool,
    ) -> Result<LstmGrads> {
        let hidden = self.hidden();
        let batch = cache.rows.rows();
        dh.check_shape("lstm backward dh", batch, hidden)?;
        dc.check_shape("lstm backward dc", batch, hidden)?;

        let mut d_pre = Matrix::zeros(batch, 4 * hidden);
        let mut dc_prev = Matrix::zeros(batch, hidden);
        for r in 0..batch {
            let g = cache.gates.row(r);
            let tc = cache.tanh_c.row(r);
            let cp = cache.c_prev.row(r);
            let (dhr, dcr) = (dh.row(r), dc.row(r));
            let dcp = dc_prev.row_mut(r);
            let dp = d_pre.row_mut(r);
            for k in 0..hidden {
                let (i, f, gg, o) = (g[k], g[hidden + k], g[2 * hidden + k], g[3 * hidden + k]);
                let d_o = dhr[k] * tc[k];
                let d_c = dcr[k] + dhr[k] * o * (1.0 - tc[k] * tc[k]);
                dp[k] = d_c * gg * i * (1.0 - i);
                dp[hidden + k] = d_c * cp[k] * f * (1.0 - f);
                dp[2 * hidden + k] = d_c * i * (1.0 - gg * gg);
                dp[3 * hidden + k] = d_o * o * (1.0 - o);
                dcp[k] = d_c * f;
            }
        }

        let in_dim = self.input_dim();
        let n_shared = shared.len();
        let n_rows = cache.rows.cols();
        let pre_sum = d_pre.column_sums();

        let w_view = View::dense(&self.w_input.values, 4 * hidden, in_dim);
        let mut d_shared = vec![0.0; n_shared];
        if n_shared > 0 {
            gemm(
                1.0,
                w_view.cols_range(0, n_shared).t(),
                View::dense(&pre_sum, 4 * hidden, 1),
                0.0,
                &mut d_shared,
            );
        }
        let mut d_rows = Matrix::zeros(batch, n_rows);
        if n_rows > 0 {
            gemm(
                1.0,
                View::of(&d_pre),
                w_view.cols_range(n_shared, n_rows),
                0.0,
                d_rows.as_mut_slice(),
            );
        }
        let mut dh_prev = Matrix::zeros(batch, hidden);
        gemm(
            1.0,
            View::of(&d_pre),
            View::dense(&self.w_hidden.values, 4 * hidden, hidden),
            0.0,
            dh_prev.as_mut_slice(),
        );

        if accumulate {
            for (g, s) in self.bias.grads.iter_mut().zip(&pre_sum) {
                *g += s;
            }
            // dW_shared = pre_sum ⊗ shared ; dW_rows = d_pre^T rows
            for (gate, s) in pre_sum.iter().enumerate() {
                let row = &mut self.w_input.grads[gate * in_dim..gate * in_dim + n_shared];
                for (g, x) in row.iter_mut().zip(shared) {
                    *g += s * x;
                }
            }
            if n_rows > 0 {
                // Output rows are strided by `in_dim`; accumulate through a dense scratch.
                let mut scratch = vec![0.0; 4 * hidden * n_rows];
                gemm(
                    1.0,
                    View::of(&d_pre).t(),
                    View::of(&cache.rows),
                    0.0,
                    &mut scratch,
                );
                for gate in 0..4 * hidden {
                    let dst = &mut self.w_input.grads
                        [gate * in_dim + n_shared..gate * in_dim + n_shared + n_rows];
                    for (g, s) in dst
                        .iter_mut()
                        .zip(&scratch[gate * n_rows..(gate + 1) * n_rows])
                    {
                        *g += s;
                    }
                }
            }
            gemm(
                1.0,
                View::of(&d_pre).t(),
                View::of(&cache.h_prev),
                1.0,
                &mut self.w_hidden.grads,
            );
        }

        Ok(LstmGrads {
            d_shared,
            d_rows,
            dh_prev,
            dc_prev,
        })
    }
}

impl Parameterized for LstmCell {
    fn param_blocks(&self) -> Vec<&ParamBlock> {
        vec![&self.w_input, &self.w_hidden, &self.bias]
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut ParamBlock> {
        vec![&mut self.w_input, &mut self.w_hidden, &mut self.bias]
    }
}
