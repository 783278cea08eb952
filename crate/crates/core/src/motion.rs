//! Recurrent motion model.
//!
//! A small GRU reads `[v_prev, v, a]` for one object (in its parent's frame)
//! and a softmax head splits the proposed change of acceleration between two
//! primitives: `-a` (keep moving in a straight line) and `-omega^2 v` (keep
//! turning at the observed angular velocity). Gradients are derived by hand
//! and flow only through the mode-weight path; the measured vectors are
//! constants.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::TransformVec;

pub const INPUT_SIZE: usize = 6;
pub const NUM_MODES: usize = 2;
pub const CHECKPOINT_MAGIC: &[u8] = b"FMLGRU1\n";

/// Velocities shorter than this carry no direction for [`estimate_omega`].
pub const OMEGA_EPS: f64 = 1e-6;

const GATES: usize = 3;
const UPDATE: usize = 0;
const RESET: usize = 1;
const CANDIDATE: usize = 2;

/// Number of scalar parameters for hidden size `h`.
pub const fn param_count(h: usize) -> usize {
    GATES * (INPUT_SIZE * h + h * h + h) + NUM_MODES * h + NUM_MODES
}

/// GRU and softmax-head parameters in checkpoint order: for each gate
/// (update, reset, candidate) input weights `H x 6`, recurrent weights
/// `H x H`, bias `H`; then head weights `2 x H` and head bias `2`. All
/// matrices row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    hidden: usize,
    values: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Layout {
    h: usize,
}

impl Layout {
    fn gate(self, g: usize) -> usize {
        g * (INPUT_SIZE * self.h + self.h * self.h + self.h)
    }
    fn w_in(self, g: usize) -> usize {
        self.gate(g)
    }
    fn w_rec(self, g: usize) -> usize {
        self.gate(g) + INPUT_SIZE * self.h
    }
    fn bias(self, g: usize) -> usize {
        self.gate(g) + INPUT_SIZE * self.h + self.h * self.h
    }
    fn head_w(self) -> usize {
        self.gate(GATES)
    }
    fn head_b(self) -> usize {
        self.head_w() + NUM_MODES * self.h
    }
}

impl GruParams {
    pub fn zeros(hidden: usize) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("hidden size must be positive".into()));
        }
        Ok(Self {
            hidden,
            values: vec![0.0; param_count(hidden)],
        })
    }

    /// Uniform initialization in `[-1/sqrt(H), 1/sqrt(H)]`.
    pub fn init(hidden: usize, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(hidden)?;
        let k = 1.0 / (hidden as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut p.values {
            *v = rng.gen_range(-k..=k);
        }
        Ok(p)
    }

    pub fn from_values(hidden: usize, values: Vec<f64>) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("hidden size must be positive".into()));
        }
        if values.len() != param_count(hidden) {
            return Err(Error::Dimension {
                what: "parameter vector",
                expected: param_count(hidden),
                actual: values.len(),
            });
        }
        Ok(Self { hidden, values })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn layout(&self) -> Layout {
        Layout { h: self.hidden }
    }

    /// Sets the head so that the softmax logits are `(l1, l2)` for any hidden
    /// state.
    pub fn set_mode_bias(&mut self, l1: f64, l2: f64) {
        let l = self.layout();
        let hw = l.head_w();
        self.values[hw..hw + NUM_MODES * self.hidden].fill(0.0);
        let hb = l.head_b();
        self.values[hb] = l1;
        self.values[hb + 1] = l2;
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(32 + 8 * self.values.len());
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(format!("{} {} {}\n", self.hidden, INPUT_SIZE, NUM_MODES).as_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let corrupt = || Error::CorruptHeader {
            path: path.to_path_buf(),
        };
        let rest = bytes.strip_prefix(CHECKPOINT_MAGIC).ok_or_else(corrupt)?;
        let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(corrupt)?;
        let line = std::str::from_utf8(&rest[..nl]).map_err(|_| corrupt())?;
        let dims: Vec<usize> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| corrupt())?;
        let [hidden, input, modes] = dims[..] else {
            return Err(corrupt());
        };
        if hidden == 0 || input != INPUT_SIZE || modes != NUM_MODES {
            return Err(corrupt());
        }
        let payload = &rest[nl + 1..];
        let expected = 8 * param_count(hidden) as u64;
        if payload.len() as u64 != expected {
            return Err(Error::TruncatedFile {
                path: path.to_path_buf(),
                expected,
                actual: payload.len() as u64,
            });
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Self::from_values(hidden, values)
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Intermediate values of one GRU step, kept for backpropagation.
#[derive(Debug, Clone)]
struct StepCache {
    x: [f64; INPUT_SIZE],
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    h: Vec<f64>,
}

fn gate_preact(p: &GruParams, g: usize, x: &[f64; INPUT_SIZE], h: &[f64], out: &mut [f64]) {
    let l = p.layout();
    let hs = p.hidden;
    let v = &p.values;
    for i in 0..hs {
        let wi = &v[l.w_in(g) + i * INPUT_SIZE..l.w_in(g) + (i + 1) * INPUT_SIZE];
        let ui = &v[l.w_rec(g) + i * hs..l.w_rec(g) + (i + 1) * hs];
        let mut acc = v[l.bias(g) + i];
        acc += wi.iter().zip(x).map(|(w, xv)| w * xv).sum::<f64>();
        acc += ui.iter().zip(h).map(|(u, hv)| u * hv).sum::<f64>();
        out[i] = acc;
    }
}

fn gru_forward(p: &GruParams, x: [f64; INPUT_SIZE], h_prev: &[f64]) -> StepCache {
    let hs = p.hidden;
    let mut z = vec![0.0; hs];
    let mut r = vec![0.0; hs];
    let mut n = vec![0.0; hs];
    gate_preact(p, UPDATE, &x, h_prev, &mut z);
    gate_preact(p, RESET, &x, h_prev, &mut r);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));
    r.iter_mut().for_each(|v| *v = sigmoid(*v));
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    gate_preact(p, CANDIDATE, &x, &rh, &mut n);
    n.iter_mut().for_each(|v| *v = v.tanh());
    let h = (0..hs).map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * n[i]).collect();
    StepCache {
        x,
        h_prev: h_prev.to_vec(),
        z,
        r,
        n,
        h,
    }
}

/// Accumulates parameter gradients of one GRU step into `grad` and returns the
/// gradient with respect to the previous hidden state.
fn gru_backward(p: &GruParams, c: &StepCache, dh: &[f64], grad: &mut [f64]) -> Vec<f64> {
    let l = p.layout();
    let hs = p.hidden;
    let v = &p.values;
    let mut dh_prev: Vec<f64> = (0..hs).map(|i| dh[i] * (1.0 - c.z[i])).collect();

    let dn_pre: Vec<f64> = (0..hs).map(|i| dh[i] * c.z[i] * (1.0 - c.n[i] * c.n[i])).collect();
    let dz_pre: Vec<f64> = (0..hs)
        .map(|i| dh[i] * (c.n[i] - c.h_prev[i]) * c.z[i] * (1.0 - c.z[i]))
        .collect();
    let rh: Vec<f64> = (0..hs).map(|i| c.r[i] * c.h_prev[i]).collect();

    // candidate gate; its recurrent input is r * h_prev
    let mut d_rh = vec![0.0; hs];
    accumulate_gate(l, CANDIDATE, hs, &c.x, &rh, &dn_pre, grad);
    for i in 0..hs {
        let row = &v[l.w_rec(CANDIDATE) + i * hs..l.w_rec(CANDIDATE) + (i + 1) * hs];
        for (j, u) in row.iter().enumerate() {
            d_rh[j] += u * dn_pre[i];
        }
    }
    let dr_pre: Vec<f64> = (0..hs)
        .map(|j| d_rh[j] * c.h_prev[j] * c.r[j] * (1.0 - c.r[j]))
        .collect();
    for j in 0..hs {
        dh_prev[j] += d_rh[j] * c.r[j];
    }

    for (g, dpre) in [(UPDATE, &dz_pre), (RESET, &dr_pre)] {
        accumulate_gate(l, g, hs, &c.x, &c.h_prev, dpre, grad);
        for i in 0..hs {
            let row = &v[l.w_rec(g) + i * hs..l.w_rec(g) + (i + 1) * hs];
            for (j, u) in row.iter().enumerate() {
                dh_prev[j] += u * dpre[i];
            }
        }
    }
    dh_prev
}

fn accumulate_gate(
    l: Layout,
    g: usize,
    hs: usize,
    x: &[f64; INPUT_SIZE],
    h_in: &[f64],
    dpre: &[f64],
    grad: &mut [f64],
) {
    for i in 0..hs {
        let d = dpre[i];
        if d == 0.0 {
            continue;
        }
        let wi = l.w_in(g) + i * INPUT_SIZE;
        for k in 0..INPUT_SIZE {
            grad[wi + k] += d * x[k];
        }
        let ui = l.w_rec(g) + i * hs;
        for j in 0..hs {
            grad[ui + j] += d * h_in[j];
        }
        grad[l.bias(g) + i] += d;
    }
}

fn check_hidden(p: &GruParams, hidden: &[f64]) -> Result<()> {
    if hidden.len() != p.hidden {
        return Err(Error::Dimension {
            what: "hidden state",
            expected: p.hidden,
            actual: hidden.len(),
        });
    }
    Ok(())
}

/// One GRU update `h' = (1 - z) h + z tanh(W_h x + U_h (r h) + b_h)`.
pub fn gru_step(params: &GruParams, input: &[f64], hidden: &[f64]) -> Result<Vec<f64>> {
    check_hidden(params, hidden)?;
    let x: [f64; INPUT_SIZE] = input.try_into().map_err(|_| Error::Dimension {
        what: "GRU input",
        expected: INPUT_SIZE,
        actual: input.len(),
    })?;
    Ok(gru_forward(params, x, hidden).h)
}

/// Softmax weights of the linear (`c1`) and circular (`c2`) primitives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeWeights {
    pub c1: f64,
    pub c2: f64,
}

fn head_logits(p: &GruParams, hidden: &[f64]) -> [f64; NUM_MODES] {
    let l = p.layout();
    let hs = p.hidden;
    let mut out = [0.0; NUM_MODES];
    for (m, o) in out.iter_mut().enumerate() {
        let row = &p.values[l.head_w() + m * hs..l.head_w() + (m + 1) * hs];
        *o = p.values[l.head_b() + m] + row.iter().zip(hidden).map(|(w, h)| w * h).sum::<f64>();
    }
    out
}

fn softmax2(l: [f64; 2]) -> ModeWeights {
    let m = l[0].max(l[1]);
    let e1 = (l[0] - m).exp();
    let e2 = (l[1] - m).exp();
    let s = e1 + e2;
    ModeWeights { c1: e1 / s, c2: e2 / s }
}

pub fn mode_weights(params: &GruParams, hidden: &[f64]) -> Result<ModeWeights> {
    check_hidden(params, hidden)?;
    Ok(softmax2(head_logits(params, hidden)))
}

/// Signed angle from `v_prev` to `v`; zero when either is too short to have a
/// direction.
pub fn estimate_omega(v_prev: TransformVec, v: TransformVec) -> f64 {
    if v_prev.norm() < OMEGA_EPS || v.norm() < OMEGA_EPS {
        return 0.0;
    }
    v_prev.cross(v).atan2(v_prev.dot(v))
}

/// `c1 (-a) + c2 (-omega^2 v)`.
pub fn residual_delta_a(c: ModeWeights, v: TransformVec, a: TransformVec, omega: f64) -> TransformVec {
    c.c1 * (-a) + c.c2 * (-(omega * omega) * v)
}

/// Recurrent state of one object's motion.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionState {
    pub v_prev: TransformVec,
    pub v: TransformVec,
    pub a: TransformVec,
    pub hidden: Vec<f64>,
}

impl MotionState {
    pub fn new(v_prev: TransformVec, v: TransformVec, a: TransformVec, hidden_size: usize) -> Self {
        Self {
            v_prev,
            v,
            a,
            hidden: vec![0.0; hidden_size],
        }
    }

    fn input(&self) -> [f64; INPUT_SIZE] {
        model_input(self.v_prev, self.v, self.a)
    }
}

fn model_input(v_prev: TransformVec, v: TransformVec, a: TransformVec) -> [f64; INPUT_SIZE] {
    [v_prev.x, v_prev.y, v.x, v.y, a.x, a.y]
}

/// Output of one motion-model step.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub v_next: TransformVec,
    pub weights: ModeWeights,
    pub state: MotionState,
}

/// Advances the hidden state by one observation without predicting; used to
/// warm the model up on an observed track.
pub fn observe(params: &GruParams, state: &MotionState) -> Result<Vec<f64>> {
    check_hidden(params, &state.hidden)?;
    Ok(gru_forward(params, state.input(), &state.hidden).h)
}

pub fn predict_next(params: &GruParams, state: &MotionState) -> Result<Prediction> {
    check_hidden(params, &state.hidden)?;
    let omega = estimate_omega(state.v_prev, state.v);
    let h = gru_forward(params, state.input(), &state.hidden).h;
    let weights = softmax2(head_logits(params, &h));
    let v_next = state.v + state.a + residual_delta_a(weights, state.v, state.a, omega);
    Ok(Prediction {
        v_next,
        weights,
        state: MotionState {
            v_prev: state.v,
            v: v_next,
            a: v_next - state.v,
            hidden: h,
        },
    })
}

/// Minimum number of velocities in a training track.
pub const MIN_TRACK_LEN: usize = 4;

/// Teacher-forced pass over one track of velocities, returning the sum of
/// squared errors, the number of predictions, and (optionally) accumulating
/// `d(sum)/d(params)` into `grad`.
fn track_pass(p: &GruParams, track: &[TransformVec], grad: Option<&mut [f64]>) -> (f64, usize) {
    let hs = p.hidden;
    let mut h = vec![0.0; hs];
    let mut caches = Vec::with_capacity(track.len());
    let mut outputs = Vec::with_capacity(track.len());
    let mut sse = 0.0;
    for t in 1..track.len() - 1 {
        let (v_prev, v, target) = (track[t - 1], track[t], track[t + 1]);
        let a = v - v_prev;
        let omega = estimate_omega(v_prev, v);
        let cache = gru_forward(p, model_input(v_prev, v, a), &h);
        let c = softmax2(head_logits(p, &cache.h));
        let pred = v + a + residual_delta_a(c, v, a, omega);
        let err = pred - target;
        sse += err.dot(err);
        h = cache.h.clone();
        caches.push(cache);
        outputs.push((c, err, -a, -(omega * omega) * v));
    }
    let count = caches.len();
    let Some(grad) = grad else {
        return (sse, count);
    };

    let l = p.layout();
    let mut dh_next = vec![0.0; hs];
    for (cache, (c, err, d1, d2)) in caches.iter().zip(&outputs).rev() {
        let g = 2.0 * *err;
        let dc = [g.dot(*d1), g.dot(*d2)];
        let cs = [c.c1, c.c2];
        let mean = cs[0] * dc[0] + cs[1] * dc[1];
        let dl = [cs[0] * (dc[0] - mean), cs[1] * (dc[1] - mean)];
        let mut dh = dh_next;
        for m in 0..NUM_MODES {
            let w0 = l.head_w() + m * hs;
            for j in 0..hs {
                grad[w0 + j] += dl[m] * cache.h[j];
                dh[j] += dl[m] * p.values[w0 + j];
            }
            grad[l.head_b() + m] += dl[m];
        }
        dh_next = gru_backward(p, cache, &dh, grad);
    }
    (sse, count)
}

fn check_tracks(tracks: &[Vec<TransformVec>]) -> Result<()> {
    if tracks.is_empty() {
        return Err(Error::EmptyDataset("no training tracks".into()));
    }
    if let Some(t) = tracks.iter().find(|t| t.len() < MIN_TRACK_LEN) {
        return Err(Error::Config(format!(
            "tracks need at least {MIN_TRACK_LEN} velocities, got {}",
            t.len()
        )));
    }
    Ok(())
}

/// Mean squared next-velocity error over every prediction in `tracks`.
pub fn batch_loss(params: &GruParams, tracks: &[Vec<TransformVec>]) -> Result<f64> {
    check_tracks(tracks)?;
    let (sse, count) = tracks
        .iter()
        .map(|t| track_pass(params, t, None))
        .fold((0.0, 0), |(s, c), (s2, c2)| (s + s2, c + c2));
    Ok(sse / count as f64)
}

/// Summed squared error and its gradient, without the `1/count` factor.
/// Per-track work runs in parallel and is reduced in track order.
pub fn batch_gradient_sum(params: &GruParams, tracks: &[Vec<TransformVec>]) -> Result<(f64, usize, Vec<f64>)> {
    check_tracks(tracks)?;
    let parts: Vec<(f64, usize, Vec<f64>)> = tracks
        .par_iter()
        .map(|t| {
            let mut g = vec![0.0; params.len()];
            let (s, c) = track_pass(params, t, Some(&mut g));
            (s, c, g)
        })
        .collect();
    let mut grad = vec![0.0; params.len()];
    let (mut sse, mut count) = (0.0, 0);
    for (s, c, g) in parts {
        sse += s;
        count += c;
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    Ok((sse, count, grad))
}

/// Mean loss and its gradient.
pub fn batch_gradient(params: &GruParams, tracks: &[Vec<TransformVec>]) -> Result<(f64, Vec<f64>)> {
    let (sse, count, mut grad) = batch_gradient_sum(params, tracks)?;
    let scale = 1.0 / count as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((sse * scale, grad))
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            learning_rate: 0.01,
            batch_size: 32,
            epochs: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: GruParams,
    /// Mean loss of every batch, before its update.
    pub losses: Vec<f64>,
}

/// Trains with Adam on shuffled mini-batches of whole tracks.
pub fn train(params: GruParams, tracks: &[Vec<TransformVec>], config: &TrainConfig) -> Result<TrainOutcome> {
    check_tracks(tracks)?;
    if config.batch_size == 0 || config.epochs == 0 || config.learning_rate.is_nan() || config.learning_rate <= 0.0 {
        return Err(Error::Config(
            "batch size, epochs and learning rate must be positive".into(),
        ));
    }
    let mut params = params;
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..tracks.len()).collect();
    let mut losses = Vec::new();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let subset: Vec<Vec<TransformVec>> = idx.iter().map(|&i| tracks[i].clone()).collect();
            let (loss, grad) = batch_gradient(&params, &subset)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            losses.push(loss);
            adam.update(params.values_mut(), &grad);
        }
    }
    Ok(TrainOutcome { params, losses })
}

/// Fresh parameters from `config.seed`, then [`train`].
pub fn train_from_scratch(tracks: &[Vec<TransformVec>], config: &TrainConfig) -> Result<TrainOutcome> {
    train(GruParams::init(config.hidden, config.seed)?, tracks, config)
}

/// Mode weights the model emits at every teacher-forced step of `track`.
pub fn mode_weights_along(params: &GruParams, track: &[TransformVec]) -> Vec<ModeWeights> {
    let mut h = vec![0.0; params.hidden];
    let mut out = Vec::new();
    for t in 1..track.len().saturating_sub(1) {
        let a = track[t] - track[t - 1];
        h = gru_forward(params, model_input(track[t - 1], track[t], a), &h).h;
        out.push(softmax2(head_logits(params, &h)));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Step of the central differences in [`grad_check`].
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error in [`grad_check`].
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Compares analytic gradients of the mean loss against central finite
/// differences on `samples` parameters drawn with `seed`. The error of each
/// parameter is `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
pub fn grad_check(params: &GruParams, tracks: &[Vec<TransformVec>], samples: usize, seed: u64) -> Result<GradCheck> {
    let (_, analytic) = batch_gradient(params, tracks)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..params.len()).collect();
    idx.shuffle(&mut rng);
    idx.truncate(samples.min(params.len()));
    let mut probe = params.clone();
    let mut max_rel = 0.0f64;
    for &i in &idx {
        let orig = probe.values[i];
        probe.values[i] = orig + FD_STEP;
        let up = batch_loss(&probe, tracks)?;
        probe.values[i] = orig - FD_STEP;
        let down = batch_loss(&probe, tracks)?;
        probe.values[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let denom = analytic[i].abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        max_rel = max_rel.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(GradCheck {
        max_rel_error: max_rel,
        checked: idx.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn v(x: f64, y: f64) -> TransformVec {
        TransformVec::new(x, y)
    }

    #[test]
    fn parameter_count_for_64() {
        assert_eq!(param_count(64), 13_762);
        assert_eq!(GruParams::zeros(64).unwrap().len(), 13_762);
    }

    #[test]
    fn zero_params_halve_hidden() {
        let p = GruParams::zeros(4).unwrap();
        let x = [0.3, -1.0, 2.0, 0.5, 0.0, 1.0];
        assert_eq!(gru_step(&p, &x, &[0.0; 4]).unwrap(), vec![0.0; 4]);
        let h = gru_step(&p, &x, &[1.0, -2.0, 0.5, 4.0]).unwrap();
        assert_eq!(h, vec![0.5, -1.0, 0.25, 2.0]);
    }

    #[test]
    fn gru_step_dimension_errors() {
        let p = GruParams::zeros(4).unwrap();
        assert!(gru_step(&p, &[0.0; 5], &[0.0; 4]).is_err());
        assert!(gru_step(&p, &[0.0; 6], &[0.0; 3]).is_err());
    }

    #[test]
    fn gru_jacobian_matches_finite_differences() {
        // d h'/d h along a random direction, against central differences.
        let p = GruParams::init(8, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let h: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dir: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();

        // vector-Jacobian product w^T J dir via backward pass
        let cache = gru_forward(&p, x, &h);
        let mut scratch = vec![0.0; p.len()];
        let vjp = gru_backward(&p, &cache, &w, &mut scratch);
        let analytic: f64 = vjp.iter().zip(&dir).map(|(a, b)| a * b).sum();

        let eps = 1e-6;
        let shifted = |s: f64| {
            let hs: Vec<f64> = h.iter().zip(&dir).map(|(a, d)| a + s * d).collect();
            let out = gru_step(&p, &x, &hs).unwrap();
            out.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let numeric = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
        assert!(((analytic - numeric) / numeric.abs().max(1e-12)).abs() < 1e-4);
    }

    #[test]
    fn mode_weight_examples() {
        let p = GruParams::zeros(3).unwrap();
        let c = mode_weights(&p, &[0.4, -0.2, 9.0]).unwrap();
        assert_eq!((c.c1, c.c2), (0.5, 0.5));
        let mut p = p;
        p.set_mode_bias(3f64.ln(), 0.0);
        let c = mode_weights(&p, &[0.0; 3]).unwrap();
        assert!((c.c1 - 0.75).abs() < 1e-15 && (c.c2 - 0.25).abs() < 1e-15);
        p.set_mode_bias(800.0, -800.0);
        let c = mode_weights(&p, &[1.0; 3]).unwrap();
        assert!(c.c1 == 1.0 && c.c2 >= 0.0 && (c.c1 + c.c2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn omega_examples() {
        assert!((estimate_omega(v(1.0, 0.0), v(0.0, 1.0)) - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(estimate_omega(v(1.0, 0.0), v(1.0, 0.0)), 0.0);
        assert_eq!(estimate_omega(v(0.0, 0.0), v(1.0, 0.0)), 0.0);
        assert!((estimate_omega(v(1.0, 0.0), v(0.0, -1.0)) + FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn residual_examples() {
        let lin = ModeWeights { c1: 1.0, c2: 0.0 };
        let cir = ModeWeights { c1: 0.0, c2: 1.0 };
        let half = ModeWeights { c1: 0.5, c2: 0.5 };
        let d = residual_delta_a(lin, v(5.0, 5.0), v(0.3, -0.1), 0.7);
        assert!(d.max_abs_diff(v(-0.3, 0.1)) < 1e-15);
        let d = residual_delta_a(cir, v(2.0, 0.0), v(9.0, 9.0), 0.1);
        assert!(d.max_abs_diff(v(-0.02, 0.0)) < 1e-15);
        let d = residual_delta_a(half, v(1.0, 0.0), v(0.2, 0.0), 0.2);
        assert!(d.max_abs_diff(v(-0.12, 0.0)) < 1e-15);
    }

    fn forced(hidden: usize, linear: bool) -> GruParams {
        let mut p = GruParams::init(hidden, 3).unwrap();
        if linear {
            p.set_mode_bias(1e3, -1e3);
        } else {
            p.set_mode_bias(-1e3, 1e3);
        }
        p
    }

    #[test]
    fn linear_mode_keeps_velocity() {
        let p = forced(8, true);
        let mut state = MotionState::new(v(0.5, 1.0), v(1.0, 2.0), v(0.5, 1.0), 8);
        for _ in 0..5 {
            let out = predict_next(&p, &state).unwrap();
            assert_eq!(out.v_next, v(1.0, 2.0));
            state = out.state;
        }
        assert_eq!(state.a, TransformVec::ZERO);

        let still = MotionState::new(v(1.0, 0.0), v(1.0, 0.0), TransformVec::ZERO, 8);
        let out = predict_next(&p, &still).unwrap();
        assert_eq!(out.v_next, v(1.0, 0.0));
        assert_eq!(out.state.a, TransformVec::ZERO);
    }

    #[test]
    fn circular_mode_tracks_orbit() {
        // Radius 10 px, 0.15 rad/step: compare integrated positions with the
        // closed-form circle.
        let (r, w) = (10.0, 0.15);
        let pos = |t: f64| v(r * (w * t).cos(), r * (w * t).sin());
        let p = forced(8, false);
        let v0 = pos(1.0) - pos(0.0);
        let v1 = pos(2.0) - pos(1.0);
        let mut state = MotionState::new(v0, v1, v1 - v0, 8);
        let mut p_cur = pos(2.0);
        for k in 1..=10 {
            let out = predict_next(&p, &state).unwrap();
            p_cur += out.v_next;
            let truth = pos(2.0 + k as f64);
            assert!((p_cur - truth).norm() < 1.0, "step {k}: {:?} vs {truth:?}", p_cur);
            assert!((p_cur.norm() - r).abs() < 1.0);
            state = out.state;
        }
    }

    fn circle_track(r: f64, w: f64, phase: f64, len: usize) -> Vec<TransformVec> {
        (0..len)
            .map(|t| {
                let a0 = phase + w * t as f64;
                let a1 = a0 + w;
                v(r * (a1.cos() - a0.cos()), r * (a1.sin() - a0.sin()))
            })
            .collect()
    }

    fn jitter_track(base: TransformVec, len: usize, rng: &mut ChaCha8Rng) -> Vec<TransformVec> {
        (0..len)
            .map(|_| base + v(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)))
            .collect()
    }

    fn small_batch() -> Vec<Vec<TransformVec>> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        vec![
            circle_track(9.0, 0.3, 0.4, 7),
            jitter_track(v(0.5, -0.3), 6, &mut rng),
            circle_track(12.0, -0.2, 2.0, 8),
        ]
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = GruParams::init(6, 2).unwrap();
        let report = grad_check(&p, &small_batch(), 400, 9).unwrap();
        assert_eq!(report.checked, param_count(6));
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn head_bias_gradient_of_zero_model() {
        let p = GruParams::zeros(5).unwrap();
        let batch = small_batch();
        let (_, grad) = batch_gradient(&p, &batch).unwrap();
        let hb = p.layout().head_b();
        for m in 0..2 {
            let mut q = p.clone();
            q.values[hb + m] += FD_STEP;
            let up = batch_loss(&q, &batch).unwrap();
            q.values[hb + m] -= 2.0 * FD_STEP;
            let down = batch_loss(&q, &batch).unwrap();
            let numeric = (up - down) / (2.0 * FD_STEP);
            assert!((grad[hb + m] - numeric).abs() < 1e-6, "{} vs {numeric}", grad[hb + m]);
        }
        // zero params: only the head bias and head weights see a gradient
        // through a zero hidden state; recurrent weights do not move.
        assert!(grad[..hb].iter().all(|g| *g == 0.0 || g.is_finite()));
    }

    #[test]
    fn duplicated_batch_doubles_summed_gradient() {
        let p = GruParams::init(4, 8).unwrap();
        let single = vec![circle_track(10.0, 0.25, 0.0, 6)];
        let doubled = vec![single[0].clone(), single[0].clone()];
        let (s1, c1, g1) = batch_gradient_sum(&p, &single).unwrap();
        let (s2, c2, g2) = batch_gradient_sum(&p, &doubled).unwrap();
        assert_eq!(c2, 2 * c1);
        assert_eq!(s2, 2.0 * s1);
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(2.0 * a, *b);
        }
        let (_, m1) = batch_gradient(&p, &single).unwrap();
        let (_, m2) = batch_gradient(&p, &doubled).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn short_and_empty_tracks_are_rejected() {
        let p = GruParams::zeros(2).unwrap();
        assert!(matches!(batch_loss(&p, &[]), Err(Error::EmptyDataset(_))));
        assert!(batch_loss(&p, &[vec![TransformVec::ZERO; 3]]).is_err());
        assert!(train(p, &[], &TrainConfig::default()).is_err());
    }

    fn training_set(circular: bool, count: usize, seed: u64) -> Vec<Vec<TransformVec>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                if circular {
                    let w = rng.gen_range(0.1..0.4) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    circle_track(rng.gen_range(8.0..16.0), w, rng.gen_range(0.0..2.0 * PI), 12)
                } else {
                    let base = v(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    jitter_track(base, 12, &mut rng)
                }
            })
            .collect()
    }

    fn mean_weights(p: &GruParams, tracks: &[Vec<TransformVec>]) -> ModeWeights {
        let all: Vec<ModeWeights> = tracks.iter().flat_map(|t| mode_weights_along(p, t)).collect();
        let n = all.len() as f64;
        ModeWeights {
            c1: all.iter().map(|c| c.c1).sum::<f64>() / n,
            c2: all.iter().map(|c| c.c2).sum::<f64>() / n,
        }
    }

    #[test]
    fn learns_linear_mode_on_straight_tracks() {
        let config = TrainConfig {
            hidden: 16,
            epochs: 3,
            ..TrainConfig::default()
        };
        let out = train_from_scratch(&training_set(false, 320, 1), &config).unwrap();
        let c = mean_weights(&out.params, &training_set(false, 40, 2));
        assert!(c.c1 > 0.9, "{c:?}");
    }

    #[test]
    fn learns_circular_mode_on_orbits() {
        let config = TrainConfig {
            hidden: 16,
            epochs: 3,
            ..TrainConfig::default()
        };
        let out = train_from_scratch(&training_set(true, 320, 3), &config).unwrap();
        let c = mean_weights(&out.params, &training_set(true, 40, 4));
        assert!(c.c2 > 0.9, "{c:?}");
    }

    #[test]
    fn training_is_bit_reproducible() {
        let tracks = training_set(true, 64, 7);
        let config = TrainConfig {
            hidden: 8,
            seed: 42,
            ..TrainConfig::default()
        };
        let a = train_from_scratch(&tracks, &config).unwrap();
        let b = train_from_scratch(&tracks, &config).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn small_steps_do_not_increase_loss() {
        let tracks = small_batch();
        let mut p = GruParams::init(8, 4).unwrap();
        let mut adam = Adam::new(p.len(), 1e-3);
        let mut prev = batch_loss(&p, &tracks).unwrap();
        for _ in 0..10 {
            let (_, g) = batch_gradient(&p, &tracks).unwrap();
            adam.update(p.values_mut(), &g);
            let cur = batch_loss(&p, &tracks).unwrap();
            assert!(cur <= prev + 1e-12, "{cur} > {prev}");
            prev = cur;
        }
    }

    #[test]
    fn checkpoint_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let p = GruParams::init(5, 1).unwrap();
        p.save(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"FMLGRU1\n5 6 2\n"));
        assert_eq!(bytes.len(), 14 + 8 * param_count(5));
        assert_eq!(GruParams::load(&path).unwrap(), p);

        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(GruParams::load(&path), Err(Error::TruncatedFile { .. })));
        fs::write(&path, b"NOTGRU1\n5 6 2\n").unwrap();
        assert!(matches!(GruParams::load(&path), Err(Error::CorruptHeader { .. })));
        assert!(matches!(
            GruParams::load(dir.path().join("absent")),
            Err(Error::MissingFile { .. })
        ));
    }
}
