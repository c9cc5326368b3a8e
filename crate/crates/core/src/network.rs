//! Shared recurrent encoder with three heads.
//!
//! A single LSTM layer reads the `w` waves of a subject and its last hidden
//! state is projected by a ReLU layer into the feature vector `q`. Three
//! consumers share `q`: the sigmoid classification head (`p`), the linear
//! anomaly-score head (`score`) and the one-class loss, which acts on `q`
//! directly. Gradients from all three flow back into the same LSTM and
//! projection weights.
//!
//! Everything operates on batches; a single sample is a batch of one.

use serde::{Deserialize, Serialize};

use crate::diffcore::{dropout_apply, gemm, sigmoid, Matrix, Mode, Rng, Trans};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub waves: usize,
    pub lstm_units: usize,
    pub feature_dim: usize,
    pub dropout_rate: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_dim: 762,
            waves: 5,
            lstm_units: 200,
            feature_dim: 20,
            dropout_rate: 0.5,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.waves == 0 || self.lstm_units == 0 || self.feature_dim == 0 {
            return Err(Error::Config(format!("network dimensions must be positive: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// LSTM gate, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input,
    Forget,
    Cell,
    Output,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Cell, Gate::Output];

    fn name(self) -> &'static str {
        match self {
            Gate::Input => "input",
            Gate::Forget => "forget",
            Gate::Cell => "cell",
            Gate::Output => "output",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    /// `L × D`
    pub w_input: Matrix,
    /// `L × L`
    pub w_recurrent: Matrix,
    /// `1 × L`
    pub bias: Matrix,
}

/// All learnable weights. The LSTM gates together with `w_s`/`b_s` form the
/// trunk shared by the three tasks; `w_e`/`b_e` belong to the classifier and
/// `w_a`/`b_a` to the anomaly-score head.
///
/// The same type doubles as a gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub gates: [GateParams; 4],
    /// `M × L`
    pub w_s: Matrix,
    /// `1 × M`
    pub b_s: Matrix,
    /// `1 × M`
    pub w_e: Matrix,
    /// `1 × 1`
    pub b_e: Matrix,
    /// `1 × M`
    pub w_a: Matrix,
    /// `1 × 1`
    pub b_a: Matrix,
}

pub type Gradients = NetworkParams;

fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = Matrix::zeros(rows, cols);
    for v in m.as_mut_slice() {
        *v = rng.uniform_range(-limit, limit);
    }
    m
}

impl NetworkParams {
    pub fn zeros(cfg: &NetworkConfig) -> Self {
        let (d, l, m) = (cfg.input_dim, cfg.lstm_units, cfg.feature_dim);
        let gate = || GateParams {
            w_input: Matrix::zeros(l, d),
            w_recurrent: Matrix::zeros(l, l),
            bias: Matrix::zeros(1, l),
        };
        NetworkParams {
            gates: [gate(), gate(), gate(), gate()],
            w_s: Matrix::zeros(m, l),
            b_s: Matrix::zeros(1, m),
            w_e: Matrix::zeros(1, m),
            b_e: Matrix::zeros(1, 1),
            w_a: Matrix::zeros(1, m),
            b_a: Matrix::zeros(1, 1),
        }
    }

    /// Glorot-uniform weights, zero biases, forget-gate bias 1.
    pub fn init(cfg: &NetworkConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let (d, l, m) = (cfg.input_dim, cfg.lstm_units, cfg.feature_dim);
        let mut p = NetworkParams::zeros(cfg);
        for (gate, kind) in p.gates.iter_mut().zip(Gate::ALL) {
            gate.w_input = glorot(l, d, rng);
            gate.w_recurrent = glorot(l, l, rng);
            if kind == Gate::Forget {
                gate.bias.fill(1.0);
            }
        }
        p.w_s = glorot(m, l, rng);
        p.w_e = glorot(1, m, rng);
        p.w_a = glorot(1, m, rng);
        Ok(p)
    }

    pub fn gate(&self, g: Gate) -> &GateParams {
        &self.gates[g as usize]
    }

    pub fn input_dim(&self) -> usize {
        self.gates[0].w_input.cols()
    }

    pub fn lstm_units(&self) -> usize {
        self.gates[0].w_input.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.w_s.rows()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, m| m.fill(0.0));
        z
    }

    /// Tensor names in storage order; checkpoints serialize in this order.
    pub fn names() -> Vec<String> {
        let mut names = Vec::with_capacity(16);
        for g in Gate::ALL {
            for part in ["w_input", "w_recurrent", "bias"] {
                names.push(format!("lstm.{}.{}", g.name(), part));
            }
        }
        for n in ["fc.w_s", "fc.b_s", "cls.w_e", "cls.b_e", "anomaly.w_a", "anomaly.b_a"] {
            names.push(n.to_string());
        }
        names
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = Vec::with_capacity(18);
        for g in &self.gates {
            out.extend([&g.w_input, &g.w_recurrent, &g.bias]);
        }
        out.extend([&self.w_s, &self.b_s, &self.w_e, &self.b_e, &self.w_a, &self.b_a]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::with_capacity(18);
        for g in &mut self.gates {
            out.push(&mut g.w_input);
            out.push(&mut g.w_recurrent);
            out.push(&mut g.bias);
        }
        out.push(&mut self.w_s);
        out.push(&mut self.b_s);
        out.push(&mut self.w_e);
        out.push(&mut self.b_e);
        out.push(&mut self.w_a);
        out.push(&mut self.b_a);
        out
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(usize, &mut Matrix)) {
        for (i, t) in self.tensors_mut().into_iter().enumerate() {
            f(i, t);
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn same_shapes(&self, other: &NetworkParams) -> bool {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .all(|(a, b)| a.same_shape(b))
    }

    /// Global L2 norm across every tensor.
    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.as_slice())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Network outputs for a batch of `B` subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    /// `B × M` feature vectors (after dropout in train mode).
    pub q: Matrix,
    /// Classification probabilities.
    pub p: Vec<f64>,
    /// Raw anomaly scores.
    pub score: Vec<f64>,
}

#[derive(Debug, Clone)]
struct WaveCache {
    x: Matrix,
    i: Matrix,
    f: Matrix,
    g: Matrix,
    o: Matrix,
    c: Matrix,
    tanh_c: Matrix,
    h: Matrix,
}

/// Activations cached by [`forward_batch`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    mode: Mode,
    batch: usize,
    waves: Vec<WaveCache>,
    mask_h: Matrix,
    h_dropped: Matrix,
    q_raw: Matrix,
    mask_q: Matrix,
    q: Matrix,
    p: Vec<f64>,
}

impl ForwardTrace {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn num_waves(&self) -> usize {
        self.waves.len()
    }

    /// Hidden state after wave `t` (0-based), `B × L`.
    pub fn hidden(&self, t: usize) -> &Matrix {
        &self.waves[t].h
    }

    pub fn cell(&self, t: usize) -> &Matrix {
        &self.waves[t].c
    }
}

fn gate_preactivation(x: &Matrix, h_prev: Option<&Matrix>, gate: &GateParams) -> Result<Matrix> {
    let mut z = Matrix::zeros(x.rows(), gate.w_input.rows());
    gemm(1.0, x, Trans::No, &gate.w_input, Trans::Yes, 0.0, &mut z)?;
    if let Some(h) = h_prev {
        gemm(1.0, h, Trans::No, &gate.w_recurrent, Trans::Yes, 1.0, &mut z)?;
    }
    z.add_row_assign(&gate.bias)?;
    Ok(z)
}

/// Runs the network over a batch of `w × D` subject matrices.
pub fn forward_batch(
    params: &NetworkParams,
    dropout_rate: f64,
    samples: &[&Matrix],
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Outputs, ForwardTrace)> {
    let batch = samples.len();
    if batch == 0 {
        return Err(Error::Batch("forward on empty batch".into()));
    }
    let d = params.input_dim();
    let w = samples[0].rows();
    for s in samples {
        if s.rows() != w || s.cols() != d {
            return Err(Error::shape("forward", s.shape_str(), format!("{w}x{d}")));
        }
    }

    let mut waves: Vec<WaveCache> = Vec::with_capacity(w);
    for t in 0..w {
        let mut x = Matrix::zeros(batch, d);
        for (b, s) in samples.iter().enumerate() {
            x.row_mut(b).copy_from_slice(s.row(t));
        }
        let h_prev = waves.last().map(|c| &c.h);
        let c_prev = waves.last().map(|c| &c.c);

        let i = gate_preactivation(&x, h_prev, params.gate(Gate::Input))?.map(sigmoid);
        let f = gate_preactivation(&x, h_prev, params.gate(Gate::Forget))?.map(sigmoid);
        let g = gate_preactivation(&x, h_prev, params.gate(Gate::Cell))?.map(f64::tanh);
        let o = gate_preactivation(&x, h_prev, params.gate(Gate::Output))?.map(sigmoid);

        let mut c = i.hadamard(&g)?;
        if let Some(c_prev) = c_prev {
            c.add_assign(&f.hadamard(c_prev)?)?;
        }
        let tanh_c = c.map(f64::tanh);
        let h = o.hadamard(&tanh_c)?;
        waves.push(WaveCache {
            x,
            i,
            f,
            g,
            o,
            c,
            tanh_c,
            h,
        });
    }

    let h_last = &waves[w - 1].h;
    let (h_dropped, mask_h) = dropout_apply(h_last, dropout_rate, rng, mode)?;
    let mut q_raw = Matrix::zeros(batch, params.feature_dim());
    gemm(1.0, &h_dropped, Trans::No, &params.w_s, Trans::Yes, 0.0, &mut q_raw)?;
    q_raw.add_row_assign(&params.b_s)?;
    let q_raw = q_raw.map(|v| v.max(0.0));
    let (q, mask_q) = dropout_apply(&q_raw, dropout_rate, rng, mode)?;

    let mut p = Vec::with_capacity(batch);
    let mut score = Vec::with_capacity(batch);
    let (b_e, b_a) = (params.b_e.as_slice()[0], params.b_a.as_slice()[0]);
    for b in 0..batch {
        let qb = q.row(b);
        let ze: f64 = qb.iter().zip(params.w_e.as_slice()).map(|(a, w)| a * w).sum::<f64>() + b_e;
        let za: f64 = qb.iter().zip(params.w_a.as_slice()).map(|(a, w)| a * w).sum::<f64>() + b_a;
        p.push(sigmoid(ze));
        score.push(za);
    }

    let trace = ForwardTrace {
        mode,
        batch,
        waves,
        mask_h,
        h_dropped,
        q_raw,
        mask_q,
        q: q.clone(),
        p: p.clone(),
    };
    Ok((Outputs { q, p, score }, trace))
}

/// Single-subject convenience wrapper around [`forward_batch`].
pub fn forward(
    params: &NetworkParams,
    dropout_rate: f64,
    x: &Matrix,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Outputs, ForwardTrace)> {
    forward_batch(params, dropout_rate, &[x], mode, rng)
}

/// Backpropagation through both heads, the feature layer and the LSTM.
///
/// `d_p`, `d_score` and `d_q` are the loss gradients with respect to the
/// batch outputs. Returned gradients are summed over the batch.
pub fn backward(
    trace: &ForwardTrace,
    d_p: &[f64],
    d_score: &[f64],
    d_q: &Matrix,
    params: &NetworkParams,
) -> Result<Gradients> {
    let batch = trace.batch;
    let m = params.feature_dim();
    let l = params.lstm_units();
    if d_p.len() != batch || d_score.len() != batch || d_q.shape() != (batch, m) {
        return Err(Error::Consistency(format!(
            "upstream gradients ({}, {}, {}) do not match batch {batch} / feature dim {m}",
            d_p.len(),
            d_score.len(),
            d_q.shape_str()
        )));
    }
    if trace.q.cols() != m
        || trace.h_dropped.cols() != l
        || trace.waves.first().map(|c| c.x.cols()) != Some(params.input_dim())
    {
        return Err(Error::Consistency("trace was produced with different parameter shapes".into()));
    }

    let mut grads = params.zeros_like();

    // Heads.
    let mut dq = d_q.clone();
    let w_e = params.w_e.as_slice();
    let w_a = params.w_a.as_slice();
    let mut db_e = 0.0;
    let mut db_a = 0.0;
    for b in 0..batch {
        let p = trace.p[b];
        let dz_e = d_p[b] * p * (1.0 - p);
        let dz_a = d_score[b];
        db_e += dz_e;
        db_a += dz_a;
        let qb = trace.q.row(b);
        for k in 0..m {
            grads.w_e.as_mut_slice()[k] += dz_e * qb[k];
            grads.w_a.as_mut_slice()[k] += dz_a * qb[k];
        }
        let row = dq.row_mut(b);
        for k in 0..m {
            row[k] += dz_e * w_e[k] + dz_a * w_a[k];
        }
    }
    grads.b_e.as_mut_slice()[0] = db_e;
    grads.b_a.as_mut_slice()[0] = db_a;

    // Feature layer: q = drop(relu(W_s drop(h) + b_s)).
    let dz_s = dq.hadamard(&trace.mask_q)?.zip_map(&trace.q_raw, |g, q| if q > 0.0 { g } else { 0.0 })?;
    gemm(1.0, &dz_s, Trans::Yes, &trace.h_dropped, Trans::No, 0.0, &mut grads.w_s)?;
    grads.b_s = dz_s.sum_rows();
    let mut dh = Matrix::zeros(batch, l);
    gemm(1.0, &dz_s, Trans::No, &params.w_s, Trans::No, 0.0, &mut dh)?;
    let mut dh = dh.hadamard(&trace.mask_h)?;

    // Backpropagation through time.
    let mut dc = Matrix::zeros(batch, l);
    for t in (0..trace.waves.len()).rev() {
        let cache = &trace.waves[t];
        let prev = if t > 0 { Some(&trace.waves[t - 1]) } else { None };

        let mut dz_i = Matrix::zeros(batch, l);
        let mut dz_f = Matrix::zeros(batch, l);
        let mut dz_g = Matrix::zeros(batch, l);
        let mut dz_o = Matrix::zeros(batch, l);
        for idx in 0..batch * l {
            let dh_v = dh.as_slice()[idx];
            let i = cache.i.as_slice()[idx];
            let f = cache.f.as_slice()[idx];
            let g = cache.g.as_slice()[idx];
            let o = cache.o.as_slice()[idx];
            let tc = cache.tanh_c.as_slice()[idx];
            let c_prev = prev.map_or(0.0, |p| p.c.as_slice()[idx]);

            let d_o = dh_v * tc;
            let dc_v = dc.as_slice()[idx] + dh_v * o * (1.0 - tc * tc);
            dz_i.as_mut_slice()[idx] = dc_v * g * i * (1.0 - i);
            dz_f.as_mut_slice()[idx] = dc_v * c_prev * f * (1.0 - f);
            dz_g.as_mut_slice()[idx] = dc_v * i * (1.0 - g * g);
            dz_o.as_mut_slice()[idx] = d_o * o * (1.0 - o);
            dc.as_mut_slice()[idx] = dc_v * f;
        }

        let mut dh_prev = Matrix::zeros(batch, l);
        for (k, dz) in [&dz_i, &dz_f, &dz_g, &dz_o].into_iter().enumerate() {
            let gp = &mut grads.gates[k];
            gemm(1.0, dz, Trans::Yes, &cache.x, Trans::No, 1.0, &mut gp.w_input)?;
            gp.bias.add_assign(&dz.sum_rows())?;
            if let Some(prev) = prev {
                gemm(1.0, dz, Trans::Yes, &prev.h, Trans::No, 1.0, &mut gp.w_recurrent)?;
                gemm(1.0, dz, Trans::No, &params.gates[k].w_recurrent, Trans::No, 1.0, &mut dh_prev)?;
            }
        }
        dh = dh_prev;
    }

    Ok(grads)
}
