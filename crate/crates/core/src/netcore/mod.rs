//! A single-layer LSTM feeding a two-sublayer dense head.
//!
//! The LSTM reads the `H` price differences of a [`MarketState`] one scalar
//! per step, starting from zero hidden and cell state. Its final hidden
//! vector is concatenated with the previous-action scalar and passed through
//! `tanh(W1 u + b1)` and a linear output layer. Gradients are computed by
//! hand (dense backprop plus backpropagation through time), so the whole
//! network stays small enough to check against finite differences.

#![allow(clippy::needless_range_loop)]

mod checkpoint;
pub mod gradcheck;

use std::ops::Index;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{Action, MarketState};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};

/// Number of LSTM gates. Stacked gate arrays use the order
/// input, forget, output, candidate.
pub const NUM_GATES: usize = 4;
const GATE_INPUT: usize = 0;
const GATE_FORGET: usize = 1;
const GATE_OUTPUT: usize = 2;
const GATE_CANDIDATE: usize = 3;

/// Number of Q-network outputs, one per [`Action`].
pub const Q_OUTPUTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    /// Flattened state dimension, `H + 1`.
    pub input_size: usize,
    pub lstm_hidden: usize,
    pub fc_hidden: usize,
    pub output_size: usize,
}

impl NetDims {
    /// Q-network shape for a window of `horizon` diffs.
    pub fn new(horizon: usize, lstm_hidden: usize, fc_hidden: usize) -> Self {
        Self {
            input_size: horizon + 1,
            lstm_hidden,
            fc_hidden,
            output_size: Q_OUTPUTS,
        }
    }

    pub fn with_outputs(self, output_size: usize) -> Self {
        Self { output_size, ..self }
    }

    pub fn horizon(&self) -> usize {
        self.input_size.saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size < 2 || self.lstm_hidden == 0 || self.fc_hidden == 0 || self.output_size == 0 {
            return Err(Error::Config(format!(
                "invalid network dims {self:?}: need input_size >= 2 and all widths >= 1"
            )));
        }
        Ok(())
    }

    pub fn validate_q(&self) -> Result<()> {
        self.validate()?;
        if self.output_size != Q_OUTPUTS {
            return Err(Error::Config(format!(
                "a Q network needs {Q_OUTPUTS} outputs, dims have {}",
                self.output_size
            )));
        }
        Ok(())
    }

    /// Lengths of the seven parameter arrays, in [`NetworkParams::arrays`] order.
    pub fn array_lens(&self) -> [usize; 7] {
        let (h, f, o) = (self.lstm_hidden, self.fc_hidden, self.output_size);
        [
            NUM_GATES * h,
            NUM_GATES * h * h,
            NUM_GATES * h,
            f * (h + 1),
            f,
            o * f,
            o,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.array_lens().iter().sum()
    }
}

impl Default for NetDims {
    fn default() -> Self {
        NetDims::new(32, 32, 16)
    }
}

pub const ARRAY_NAMES: [&str; 7] = [
    "lstm_w_input",
    "lstm_w_recurrent",
    "lstm_bias",
    "fc1_weight",
    "fc1_bias",
    "fc2_weight",
    "fc2_bias",
];

/// Raw parameter storage. Matrices are row-major; LSTM rows are stacked by gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Tensors {
    /// `[4H]`, weight on the scalar per-step input.
    lstm_w_input: Vec<f64>,
    /// `[4H, H]`
    lstm_w_recurrent: Vec<f64>,
    /// `[4H]`
    lstm_bias: Vec<f64>,
    /// `[F, H + 1]`, last column takes the previous action.
    fc1_weight: Vec<f64>,
    /// `[F]`
    fc1_bias: Vec<f64>,
    /// `[O, F]`
    fc2_weight: Vec<f64>,
    /// `[O]`
    fc2_bias: Vec<f64>,
}

impl Tensors {
    fn zeros(dims: &NetDims) -> Self {
        let [a, b, c, d, e, f, g] = dims.array_lens();
        Self {
            lstm_w_input: vec![0.0; a],
            lstm_w_recurrent: vec![0.0; b],
            lstm_bias: vec![0.0; c],
            fc1_weight: vec![0.0; d],
            fc1_bias: vec![0.0; e],
            fc2_weight: vec![0.0; f],
            fc2_bias: vec![0.0; g],
        }
    }

    fn arrays(&self) -> [&[f64]; 7] {
        [
            &self.lstm_w_input,
            &self.lstm_w_recurrent,
            &self.lstm_bias,
            &self.fc1_weight,
            &self.fc1_bias,
            &self.fc2_weight,
            &self.fc2_bias,
        ]
    }

    fn arrays_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [
            &mut self.lstm_w_input,
            &mut self.lstm_w_recurrent,
            &mut self.lstm_bias,
            &mut self.fc1_weight,
            &mut self.fc1_bias,
            &mut self.fc2_weight,
            &mut self.fc2_bias,
        ]
    }

    fn conforms_to(&self, dims: &NetDims) -> bool {
        self.arrays()
            .iter()
            .zip(dims.array_lens())
            .all(|(a, n)| a.len() == n)
    }

    fn flat(&self) -> Vec<f64> {
        self.arrays().concat()
    }

    fn from_flat(dims: &NetDims, flat: &[f64]) -> Result<Self> {
        if flat.len() != dims.num_params() {
            return Err(Error::Config(format!(
                "expected {} parameters for {dims:?}, got {}",
                dims.num_params(),
                flat.len()
            )));
        }
        let mut t = Tensors::zeros(dims);
        let mut offset = 0;
        for arr in t.arrays_mut() {
            let n = arr.len();
            arr.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(t)
    }

    fn all_finite(&self) -> bool {
        self.arrays().iter().all(|a| a.iter().all(|x| x.is_finite()))
    }
}

/// All weights of one network. Immutable through the public API except for
/// explicit in-place SGD steps; `Clone` gives an independent copy.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    dims: NetDims,
    t: Tensors,
}

impl NetworkParams {
    /// Every parameter set to zero.
    pub fn zeros(dims: NetDims) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            t: Tensors::zeros(&dims),
            dims,
        })
    }

    pub fn from_flat(dims: NetDims, flat: &[f64]) -> Result<Self> {
        dims.validate()?;
        if let Some(bad) = flat.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {bad}")));
        }
        Ok(Self {
            t: Tensors::from_flat(&dims, flat)?,
            dims,
        })
    }

    pub fn dims(&self) -> &NetDims {
        &self.dims
    }

    pub fn num_params(&self) -> usize {
        self.dims.num_params()
    }

    /// Parameters concatenated in [`ARRAY_NAMES`] order.
    pub fn flat(&self) -> Vec<f64> {
        self.t.flat()
    }

    pub fn arrays(&self) -> [(&'static str, &[f64]); 7] {
        let a = self.t.arrays();
        std::array::from_fn(|i| (ARRAY_NAMES[i], a[i]))
    }

    pub fn forget_gate_bias(&self) -> &[f64] {
        let h = self.dims.lstm_hidden;
        &self.t.lstm_bias[GATE_FORGET * h..(GATE_FORGET + 1) * h]
    }

    pub fn is_finite(&self) -> bool {
        self.t.all_finite()
    }

    pub(crate) fn from_tensors(dims: NetDims, t: Tensors) -> Result<Self> {
        dims.validate()?;
        if !t.conforms_to(&dims) {
            return Err(Error::Config("parameter arrays do not match dims".into()));
        }
        if !t.all_finite() {
            return Err(Error::NonFinite("parameter array entry".into()));
        }
        Ok(Self { dims, t })
    }
}

/// Gradients congruent with a [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    dims: NetDims,
    t: Tensors,
}

impl GradientSet {
    pub fn zeros(dims: NetDims) -> Self {
        Self {
            t: Tensors::zeros(&dims),
            dims,
        }
    }

    pub fn from_flat(dims: NetDims, flat: &[f64]) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            t: Tensors::from_flat(&dims, flat)?,
            dims,
        })
    }

    pub fn dims(&self) -> &NetDims {
        &self.dims
    }

    pub fn flat(&self) -> Vec<f64> {
        self.t.flat()
    }

    pub fn is_finite(&self) -> bool {
        self.t.all_finite()
    }

    pub fn max_abs(&self) -> f64 {
        self.t
            .arrays()
            .iter()
            .flat_map(|a| a.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn clear(&mut self) {
        for a in self.t.arrays_mut() {
            a.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Config("gradient shapes differ".into()));
        }
        for (a, b) in self.t.arrays_mut().into_iter().zip(other.t.arrays()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }
}

/// One Q value per action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QValues {
    pub q_short: f64,
    pub q_flat: f64,
    pub q_long: f64,
}

impl QValues {
    pub fn new(q_short: f64, q_flat: f64, q_long: f64) -> Self {
        Self { q_short, q_flat, q_long }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.q_short, self.q_flat, self.q_long]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|q| q.is_finite())
    }
}

impl Index<Action> for QValues {
    type Output = f64;

    fn index(&self, a: Action) -> &f64 {
        match a {
            Action::Short => &self.q_short,
            Action::Flat => &self.q_flat,
            Action::Long => &self.q_long,
        }
    }
}

/// Random weights, uniform in `±1/sqrt(fan_in)`, zero biases except the
/// forget gate, which starts at 1. Deterministic in `seed`.
pub fn init_params(dims: NetDims, seed: u64) -> Result<NetworkParams> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tensors::zeros(&dims);
    let h = dims.lstm_hidden;

    let mut fill = |a: &mut [f64], fan_in: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        a.iter_mut().for_each(|x| *x = rng.gen_range(-bound..bound));
    };
    fill(&mut t.lstm_w_input, h + 1);
    fill(&mut t.lstm_w_recurrent, h + 1);
    fill(&mut t.fc1_weight, h + 1);
    fill(&mut t.fc2_weight, dims.fc_hidden);
    t.lstm_bias[GATE_FORGET * h..(GATE_FORGET + 1) * h].fill(1.0);

    Ok(NetworkParams { dims, t })
}

/// Value copy; the result shares nothing with `src`.
pub fn copy_params(src: &NetworkParams) -> NetworkParams {
    src.clone()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations recorded by a forward pass, enough to run the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<f64>,
    /// `[steps, 4H]` post-activation gate values.
    gates: Vec<f64>,
    /// `[steps + 1, H]`, row 0 is the zero initial state.
    cells: Vec<f64>,
    hiddens: Vec<f64>,
    /// `[H + 1]` dense input: final hidden state and previous action.
    head_input: Vec<f64>,
    /// `[F]`
    head_hidden: Vec<f64>,
    outputs: Vec<f64>,
}

impl Tape {
    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    /// Accumulates `d(outputs · dout)/d(params)` into `grads`.
    pub fn backward(&self, params: &NetworkParams, dout: &[f64], grads: &mut GradientSet) -> Result<()> {
        let d = &params.dims;
        if grads.dims != *d {
            return Err(Error::Config("gradient set shape differs from params".into()));
        }
        if dout.len() != d.output_size {
            return Err(Error::Config(format!(
                "output gradient has {} entries, network has {} outputs",
                dout.len(),
                d.output_size
            )));
        }
        let (h, f, o) = (d.lstm_hidden, d.fc_hidden, d.output_size);
        let p = &params.t;
        let g = &mut grads.t;

        // Output layer.
        let mut d_hidden = vec![0.0; f];
        for k in 0..o {
            let dk = dout[k];
            g.fc2_bias[k] += dk;
            let row = &p.fc2_weight[k * f..(k + 1) * f];
            let grow = &mut g.fc2_weight[k * f..(k + 1) * f];
            for j in 0..f {
                grow[j] += dk * self.head_hidden[j];
                d_hidden[j] += dk * row[j];
            }
        }

        // tanh sublayer.
        let u = h + 1;
        let mut d_head_in = vec![0.0; u];
        for j in 0..f {
            let a = self.head_hidden[j];
            let dz = d_hidden[j] * (1.0 - a * a);
            g.fc1_bias[j] += dz;
            let row = &p.fc1_weight[j * u..(j + 1) * u];
            let grow = &mut g.fc1_weight[j * u..(j + 1) * u];
            for k in 0..u {
                grow[k] += dz * self.head_input[k];
                d_head_in[k] += dz * row[k];
            }
        }

        // Backpropagation through time.
        let steps = self.inputs.len();
        let mut dh: Vec<f64> = d_head_in[..h].to_vec();
        let mut dc = vec![0.0; h];
        let mut dz = vec![0.0; NUM_GATES * h];
        let mut dh_prev = vec![0.0; h];
        for s in (0..steps).rev() {
            let gate = &self.gates[s * NUM_GATES * h..(s + 1) * NUM_GATES * h];
            let c_prev = &self.cells[s * h..(s + 1) * h];
            let c_cur = &self.cells[(s + 1) * h..(s + 2) * h];
            for j in 0..h {
                let i_g = gate[GATE_INPUT * h + j];
                let f_g = gate[GATE_FORGET * h + j];
                let o_g = gate[GATE_OUTPUT * h + j];
                let c_g = gate[GATE_CANDIDATE * h + j];
                let tc = c_cur[j].tanh();
                let d_o = dh[j] * tc;
                let d_c = dc[j] + dh[j] * o_g * (1.0 - tc * tc);
                dz[GATE_INPUT * h + j] = d_c * c_g * i_g * (1.0 - i_g);
                dz[GATE_FORGET * h + j] = d_c * c_prev[j] * f_g * (1.0 - f_g);
                dz[GATE_OUTPUT * h + j] = d_o * o_g * (1.0 - o_g);
                dz[GATE_CANDIDATE * h + j] = d_c * i_g * (1.0 - c_g * c_g);
                dc[j] = d_c * f_g;
            }
            let x = self.inputs[s];
            let h_prev = &self.hiddens[s * h..(s + 1) * h];
            dh_prev.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..NUM_GATES * h {
                let dr = dz[r];
                g.lstm_w_input[r] += dr * x;
                g.lstm_bias[r] += dr;
                let row = &p.lstm_w_recurrent[r * h..(r + 1) * h];
                let grow = &mut g.lstm_w_recurrent[r * h..(r + 1) * h];
                for j in 0..h {
                    grow[j] += dr * h_prev[j];
                    dh_prev[j] += dr * row[j];
                }
            }
            std::mem::swap(&mut dh, &mut dh_prev);
        }
        Ok(())
    }
}

/// Forward pass over raw inputs, keeping the activations for [`Tape::backward`].
pub fn forward_tape(params: &NetworkParams, diffs: &[f64], prev_action: f64) -> Result<Tape> {
    let d = &params.dims;
    if diffs.len() + 1 != d.input_size {
        return Err(Error::Config(format!(
            "state has {} diffs, network expects {}",
            diffs.len(),
            d.horizon()
        )));
    }
    let (h, f, o) = (d.lstm_hidden, d.fc_hidden, d.output_size);
    let p = &params.t;
    let steps = diffs.len();

    let mut gates = vec![0.0; steps * NUM_GATES * h];
    let mut cells = vec![0.0; (steps + 1) * h];
    let mut hiddens = vec![0.0; (steps + 1) * h];
    for s in 0..steps {
        let x = diffs[s];
        let (done, rest) = hiddens.split_at_mut((s + 1) * h);
        let h_prev = &done[s * h..];
        let h_next = &mut rest[..h];
        let gate = &mut gates[s * NUM_GATES * h..(s + 1) * NUM_GATES * h];
        for r in 0..NUM_GATES * h {
            let row = &p.lstm_w_recurrent[r * h..(r + 1) * h];
            let mut z = p.lstm_bias[r] + p.lstm_w_input[r] * x;
            for j in 0..h {
                z += row[j] * h_prev[j];
            }
            gate[r] = if r >= GATE_CANDIDATE * h { z.tanh() } else { sigmoid(z) };
        }
        let (c_done, c_rest) = cells.split_at_mut((s + 1) * h);
        let c_prev = &c_done[s * h..];
        let c_next = &mut c_rest[..h];
        for j in 0..h {
            c_next[j] = gate[GATE_FORGET * h + j] * c_prev[j]
                + gate[GATE_INPUT * h + j] * gate[GATE_CANDIDATE * h + j];
            h_next[j] = gate[GATE_OUTPUT * h + j] * c_next[j].tanh();
        }
    }

    let u = h + 1;
    let mut head_input = hiddens[steps * h..].to_vec();
    head_input.push(prev_action);
    let head_hidden: Vec<f64> = (0..f)
        .map(|j| {
            let row = &p.fc1_weight[j * u..(j + 1) * u];
            let z = p.fc1_bias[j] + row.iter().zip(&head_input).map(|(w, x)| w * x).sum::<f64>();
            z.tanh()
        })
        .collect();
    let outputs: Vec<f64> = (0..o)
        .map(|k| {
            let row = &p.fc2_weight[k * f..(k + 1) * f];
            p.fc2_bias[k] + row.iter().zip(&head_hidden).map(|(w, a)| w * a).sum::<f64>()
        })
        .collect();

    Ok(Tape {
        inputs: diffs.to_vec(),
        gates,
        cells,
        hiddens,
        head_input,
        head_hidden,
        outputs,
    })
}

/// Raw network outputs for a state.
pub fn forward_outputs(params: &NetworkParams, state: &MarketState) -> Result<Vec<f64>> {
    Ok(forward_tape(params, &state.diffs, state.prev_action.as_f64())?.outputs)
}

/// Q values for a state. Pure in `(params, state)`.
pub fn forward(params: &NetworkParams, state: &MarketState) -> Result<QValues> {
    params.dims.validate_q()?;
    let out = forward_outputs(params, state)?;
    Ok(QValues::new(out[0], out[1], out[2]))
}

/// Adds the gradient of `(Q(state)[action] - target)^2` to `grads` and
/// returns the loss. `target` is treated as a constant.
pub fn accumulate_q_loss(
    params: &NetworkParams,
    state: &MarketState,
    action: Action,
    target: f64,
    grads: &mut GradientSet,
) -> Result<f64> {
    if !target.is_finite() {
        return Err(Error::NonFinite(format!("TD target {target}")));
    }
    params.dims.validate_q()?;
    let tape = forward_tape(params, &state.diffs, state.prev_action.as_f64())?;
    let err = tape.outputs[action.index()] - target;
    let mut dout = [0.0; Q_OUTPUTS];
    dout[action.index()] = 2.0 * err;
    tape.backward(params, &dout, grads)?;
    Ok(err * err)
}

/// Squared error of one Q value against a fixed target, with its gradient.
pub fn loss_and_gradient(
    params: &NetworkParams,
    state: &MarketState,
    action: Action,
    target: f64,
) -> Result<(f64, GradientSet)> {
    let mut grads = GradientSet::zeros(params.dims);
    let loss = accumulate_q_loss(params, state, action, target, &mut grads)?;
    Ok((loss, grads))
}

/// Plain SGD: `params - lr * grads / batch`, returned as a new value.
pub fn apply_gradients(params: &NetworkParams, grads: &GradientSet, batch: usize, lr: f64) -> Result<NetworkParams> {
    let mut next = params.clone();
    apply_gradients_in_place(&mut next, grads, batch, lr)?;
    Ok(next)
}

pub fn apply_gradients_in_place(
    params: &mut NetworkParams,
    grads: &GradientSet,
    batch: usize,
    lr: f64,
) -> Result<()> {
    if params.dims != grads.dims {
        return Err(Error::Config(format!(
            "gradient dims {:?} do not match params {:?}",
            grads.dims, params.dims
        )));
    }
    if batch == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient entry".into()));
    }
    let scale = lr / batch as f64;
    for (w, g) in params.t.arrays_mut().into_iter().zip(grads.t.arrays()) {
        w.iter_mut().zip(g).for_each(|(w, g)| *w -= scale * g);
    }
    if !params.t.all_finite() {
        return Err(Error::NonFinite("parameters diverged after SGD step".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_dims() -> NetDims {
        NetDims::new(4, 3, 2)
    }

    fn state(diffs: &[f64], prev: Action) -> MarketState {
        MarketState {
            diffs: diffs.to_vec(),
            prev_action: prev,
        }
    }

    /// Independent forward pass: per-gate matrices, explicit concatenation,
    /// no shared buffers with the production implementation.
    fn reference_forward(p: &NetworkParams, diffs: &[f64], prev: f64) -> Vec<f64> {
        let d = p.dims();
        let h = d.lstm_hidden;
        let [(_, wx), (_, wh), (_, b), (_, w1), (_, b1), (_, w2), (_, b2)] = p.arrays();
        let gate_pre = |g: usize, j: usize, x: f64, hp: &[f64]| -> f64 {
            let r = g * h + j;
            let mut z = b[r] + wx[r] * x;
            for k in 0..h {
                z += wh[r * h + k] * hp[k];
            }
            z
        };
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        for &x in diffs {
            let mut nh = vec![0.0; h];
            let mut nc = vec![0.0; h];
            for j in 0..h {
                let i = sig(gate_pre(0, j, x, &hs));
                let f = sig(gate_pre(1, j, x, &hs));
                let o = sig(gate_pre(2, j, x, &hs));
                let g = gate_pre(3, j, x, &hs).tanh();
                nc[j] = f * cs[j] + i * g;
                nh[j] = o * nc[j].tanh();
            }
            hs = nh;
            cs = nc;
        }
        let mut u = hs;
        u.push(prev);
        let a: Vec<f64> = (0..d.fc_hidden)
            .map(|j| (b1[j] + (0..=h).map(|k| w1[j * (h + 1) + k] * u[k]).sum::<f64>()).tanh())
            .collect();
        (0..d.output_size)
            .map(|k| b2[k] + (0..d.fc_hidden).map(|j| w2[k * d.fc_hidden + j] * a[j]).sum::<f64>())
            .collect()
    }

    #[test]
    fn init_is_deterministic_in_seed() {
        let dims = small_dims();
        let a = init_params(dims, 7).unwrap();
        let b = init_params(dims, 7).unwrap();
        let c = init_params(dims, 8).unwrap();
        assert_eq!(a.flat(), b.flat());
        assert_ne!(a.flat(), c.flat());
    }

    #[test]
    fn forget_bias_starts_at_one() {
        for dims in [small_dims(), NetDims::default(), NetDims::new(1, 1, 1)] {
            let p = init_params(dims, 3).unwrap();
            assert_eq!(p.forget_gate_bias().len(), dims.lstm_hidden);
            assert!(p.forget_gate_bias().iter().all(|&b| b == 1.0));
            let h = dims.lstm_hidden;
            let bias = p.arrays()[2].1;
            assert!(bias[..h].iter().chain(&bias[2 * h..]).all(|&b| b == 0.0));
        }
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let dims = NetDims::new(8, 6, 5);
        let p = init_params(dims, 1).unwrap();
        let lstm_bound = 1.0 / 7f64.sqrt();
        assert!(p.arrays()[1].1.iter().all(|w| w.abs() <= lstm_bound));
        let out_bound = 1.0 / 5f64.sqrt();
        assert!(p.arrays()[5].1.iter().all(|w| w.abs() <= out_bound));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = NetworkParams::zeros(small_dims()).unwrap();
        let q = forward(&p, &state(&[0.3, -1.0, 2.0, 0.1], Action::Long)).unwrap();
        assert_eq!(q, QValues::new(0.0, 0.0, 0.0));
    }

    #[test]
    fn forward_is_pure() {
        let p = init_params(small_dims(), 5).unwrap();
        let before = p.clone();
        let s = state(&[0.3, -1.0, 2.0, 0.1], Action::Short);
        let a = forward(&p, &s).unwrap();
        let b = forward(&p, &s).unwrap();
        assert_eq!(a, b);
        assert_eq!(p, before);
    }

    #[test]
    fn forward_matches_reference_recurrence() {
        for seed in 0..20 {
            let dims = NetDims::new(1 + seed as usize % 7, 1 + seed as usize % 5, 1 + seed as usize % 4);
            let p = init_params(dims, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let diffs: Vec<f64> = (0..dims.horizon()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let prev = Action::ALL[seed as usize % 3];
            let q = forward(&p, &state(&diffs, prev)).unwrap().to_array();
            let r = reference_forward(&p, &diffs, prev.as_f64());
            for k in 0..3 {
                assert!((q[k] - r[k]).abs() < 1e-10, "seed {seed}: {q:?} vs {r:?}");
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let p = init_params(small_dims(), 0).unwrap();
        assert!(matches!(
            forward(&p, &state(&[1.0, 2.0], Action::Flat)),
            Err(Error::Config(_))
        ));
        let four = init_params(small_dims().with_outputs(4), 0).unwrap();
        assert!(forward(&four, &state(&[0.0; 4], Action::Flat)).is_err());
        assert!(NetDims::new(0, 3, 3).validate().is_err());
        assert!(NetDims::new(3, 0, 3).validate().is_err());
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradient() {
        let p = init_params(small_dims(), 9).unwrap();
        let s = state(&[0.5, 0.1, -0.2, 0.3], Action::Flat);
        let q = forward(&p, &s).unwrap();
        let (loss, g) = loss_and_gradient(&p, &s, Action::Long, q.q_long).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.max_abs(), 0.0);
        let stepped = apply_gradients(&p, &g, 1, 0.1).unwrap();
        assert_eq!(stepped, p);
    }

    #[test]
    fn loss_is_quadratic_in_error() {
        let p = init_params(small_dims(), 2).unwrap();
        let s = state(&[0.5, 0.1, -0.2, 0.3], Action::Long);
        let q = forward(&p, &s).unwrap().q_short;
        let (l1, _) = loss_and_gradient(&p, &s, Action::Short, q + 0.7).unwrap();
        let (l2, _) = loss_and_gradient(&p, &s, Action::Short, q + 1.4).unwrap();
        assert!((l2 - 4.0 * l1).abs() < 1e-12);
        assert!((l1 - 0.49).abs() < 1e-12);
    }

    #[test]
    fn non_finite_target_rejected() {
        let p = init_params(small_dims(), 2).unwrap();
        let s = state(&[0.0; 4], Action::Flat);
        assert!(matches!(
            loss_and_gradient(&p, &s, Action::Flat, f64::NAN),
            Err(Error::NonFinite(_))
        ));
        assert!(loss_and_gradient(&p, &s, Action::Flat, f64::INFINITY).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let eps = 1e-5;
        for seed in 0..5u64 {
            let dims = NetDims::new(3 + seed as usize, 2 + seed as usize % 3, 3);
            let p = init_params(dims, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
            let diffs: Vec<f64> = (0..dims.horizon()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s = state(&diffs, Action::ALL[seed as usize % 3]);
            let a = Action::ALL[(seed as usize + 1) % 3];
            let target = rng.gen_range(-1.0..1.0);
            let (_, g) = loss_and_gradient(&p, &s, a, target).unwrap();
            let flat = p.flat();
            for (i, analytic) in g.flat().into_iter().enumerate() {
                let mut plus = flat.clone();
                plus[i] += eps;
                let mut minus = flat.clone();
                minus[i] -= eps;
                let lp = loss_and_gradient(&NetworkParams::from_flat(dims, &plus).unwrap(), &s, a, target).unwrap().0;
                let lm = loss_and_gradient(&NetworkParams::from_flat(dims, &minus).unwrap(), &s, a, target).unwrap().0;
                let numeric = (lp - lm) / (2.0 * eps);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(rel < 1e-4, "seed {seed} param {i}: {analytic} vs {numeric}");
            }
        }
    }

    #[test]
    fn sgd_identities() {
        let p = init_params(small_dims(), 4).unwrap();
        let zero = GradientSet::zeros(*p.dims());
        assert_eq!(apply_gradients(&p, &zero, 8, 0.5).unwrap(), p);

        let as_grads = GradientSet::from_flat(*p.dims(), &p.flat()).unwrap();
        let z = apply_gradients(&p, &as_grads, 1, 1.0).unwrap();
        assert!(z.flat().iter().all(|&w| w == 0.0));

        let halved = apply_gradients(&p, &as_grads, 2, 1.0).unwrap();
        for (a, b) in halved.flat().iter().zip(p.flat()) {
            assert!((a - 0.5 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_rejects_bad_arguments() {
        let p = init_params(small_dims(), 4).unwrap();
        let g = GradientSet::zeros(*p.dims());
        assert!(apply_gradients(&p, &g, 1, 0.0).is_err());
        assert!(apply_gradients(&p, &g, 0, 0.1).is_err());
        let other = GradientSet::zeros(NetDims::new(4, 3, 3));
        assert!(matches!(apply_gradients(&p, &other, 1, 0.1), Err(Error::Config(_))));
    }

    #[test]
    fn sgd_descends_scalar_quadratic() {
        // 1x1x1 net with everything zero except the output bias: Q = b, so
        // the loss (b - y)^2 has derivative 2(b - y) and one step moves b toward y.
        let dims = NetDims::new(1, 1, 1);
        let mut flat = vec![0.0; dims.num_params()];
        let n = dims.num_params();
        flat[n - 3] = 2.0;
        let p = NetworkParams::from_flat(dims, &flat).unwrap();
        let s = state(&[0.0], Action::Flat);
        let (l0, g) = loss_and_gradient(&p, &s, Action::Short, 0.5).unwrap();
        assert_eq!(g.flat().last().copied(), Some(0.0));
        assert_eq!(g.flat()[n - 3], 3.0);
        let p1 = apply_gradients(&p, &g, 1, 0.1).unwrap();
        let (l1, _) = loss_and_gradient(&p1, &s, Action::Short, 0.5).unwrap();
        assert!(l1 < l0);
        assert!((l0 - 2.25).abs() < 1e-12);
        // b: 2 - 0.1 * 3 = 1.7, loss (1.2)^2
        assert!((l1 - 1.44).abs() < 1e-12);
    }

    #[test]
    fn copies_are_independent() {
        let src = init_params(small_dims(), 6).unwrap();
        let copy = copy_params(&src);
        let s = state(&[0.2, -0.1, 0.4, 0.0], Action::Long);
        assert_eq!(forward(&copy, &s).unwrap(), forward(&src, &s).unwrap());

        let g = GradientSet::from_flat(*src.dims(), &vec![1.0; src.num_params()]).unwrap();
        let mut perturbed = src.clone();
        apply_gradients_in_place(&mut perturbed, &g, 1, 0.01).unwrap();
        assert_ne!(perturbed, copy);
        assert_eq!(copy, src);
        assert_eq!(copy_params(&copy_params(&src)), src);
    }
}
