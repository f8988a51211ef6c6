//! Policy architectures (linear, feed-forward, LSTM+FC), their flat weight
//! encoding and inference.
//!
//! All three architectures share one flat parameter vector layout so that the
//! learner can perturb and update them uniformly:
//!
//! * Linear: `act_dim x in_width` row-major matrix, no bias.
//! * FNN: for every layer, a `fan_out x fan_in` row-major matrix followed by
//!   the `fan_out` bias entries. Hidden layers use `tanh`.
//! * LSTM: one cell with four gate blocks in the order input, forget,
//!   candidate, output. Each block is a `hidden x (obs_dim + hidden)` matrix
//!   acting on `[x; h]` followed by its bias. The FC stack follows, laid out
//!   as in the FNN case.
//!
//! Network outputs are mapped onto the shedding range with
//! `a = 0.1 * (tanh(z) - 1)`; linear outputs are clipped instead.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ParsError, Result};

/// Lower bound of every action component (shed 20% of the initial load).
pub const ACTION_MIN: f64 = -0.2;
/// Upper bound of every action component (no shedding).
pub const ACTION_MAX: f64 = 0.0;

const INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Linear,
    Fnn,
    Lstm,
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PolicyKind::Linear => write!(f, "linear"),
            PolicyKind::Fnn => write!(f, "fnn"),
            PolicyKind::Lstm => write!(f, "lstm"),
        }
    }
}

/// Network topology descriptor.
///
/// `hidden_sizes` holds the FNN hidden layers, or `[lstm_hidden, fc...]` for
/// the LSTM kind. `history_stack` is the number of past observations stacked
/// in front of the current one (Linear/FNN only).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyArchitecture {
    pub kind: PolicyKind,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub history_stack: usize,
    pub hidden_sizes: Vec<usize>,
}

impl PolicyArchitecture {
    pub fn linear(obs_dim: usize, act_dim: usize, history_stack: usize) -> Self {
        Self {
            kind: PolicyKind::Linear,
            obs_dim,
            act_dim,
            history_stack,
            hidden_sizes: Vec::new(),
        }
    }

    pub fn fnn(obs_dim: usize, act_dim: usize, history_stack: usize, hidden: &[usize]) -> Self {
        Self {
            kind: PolicyKind::Fnn,
            obs_dim,
            act_dim,
            history_stack,
            hidden_sizes: hidden.to_vec(),
        }
    }

    /// `hidden[0]` is the LSTM hidden size, the rest are FC layers.
    pub fn lstm(obs_dim: usize, act_dim: usize, hidden: &[usize]) -> Self {
        Self {
            kind: PolicyKind::Lstm,
            obs_dim,
            act_dim,
            history_stack: 0,
            hidden_sizes: hidden.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ParsError::InvalidArchitecture(msg));
        if self.obs_dim == 0 {
            return bad("obs_dim must be positive".into());
        }
        if self.act_dim == 0 {
            return bad("act_dim must be positive".into());
        }
        if self.hidden_sizes.contains(&0) {
            return bad(format!(
                "hidden sizes must be positive, got {:?}",
                self.hidden_sizes
            ));
        }
        match self.kind {
            PolicyKind::Linear if !self.hidden_sizes.is_empty() => {
                bad("linear policies have no hidden layers".into())
            }
            PolicyKind::Lstm if self.history_stack != 0 => bad(format!(
                "LSTM policies forbid observation stacking (history_stack = {})",
                self.history_stack
            )),
            PolicyKind::Lstm if self.hidden_sizes.is_empty() => {
                bad("LSTM policies need at least the LSTM hidden size".into())
            }
            _ => Ok(()),
        }
    }

    /// Width of the vector fed to the network on each step.
    pub fn input_width(&self) -> usize {
        match self.kind {
            PolicyKind::Linear | PolicyKind::Fnn => self.obs_dim * (self.history_stack + 1),
            PolicyKind::Lstm => self.obs_dim,
        }
    }

    pub fn lstm_hidden(&self) -> Option<usize> {
        match self.kind {
            PolicyKind::Lstm => self.hidden_sizes.first().copied(),
            _ => None,
        }
    }

    /// `(fan_in, fan_out)` of the dense layers, in evaluation order. For
    /// LSTM this is the FC stack after the cell.
    fn dense_shapes(&self) -> Vec<(usize, usize)> {
        let (first_in, hidden): (usize, &[usize]) = match self.kind {
            PolicyKind::Linear => return vec![(self.input_width(), self.act_dim)],
            PolicyKind::Fnn => (self.input_width(), &self.hidden_sizes),
            PolicyKind::Lstm => (self.hidden_sizes[0], &self.hidden_sizes[1..]),
        };
        let mut shapes = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = first_in;
        for &h in hidden.iter().chain(std::iter::once(&self.act_dim)) {
            shapes.push((fan_in, h));
            fan_in = h;
        }
        shapes
    }

    fn has_bias(&self) -> bool {
        self.kind != PolicyKind::Linear
    }

    /// Number of entries in the flat weight vector.
    pub fn param_count(&self) -> Result<usize> {
        self.validate()?;
        let bias = usize::from(self.has_bias());
        let dense: usize = self
            .dense_shapes()
            .iter()
            .map(|&(fan_in, fan_out)| fan_in * fan_out + bias * fan_out)
            .sum();
        let cell = match self.lstm_hidden() {
            Some(h) => 4 * ((self.obs_dim + h) * h + h),
            None => 0,
        };
        Ok(cell + dense)
    }
}

/// Free-function form of [`PolicyArchitecture::param_count`].
pub fn param_count(arch: &PolicyArchitecture) -> Result<usize> {
    arch.param_count()
}

/// The flat parameter vector the learner perturbs and updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Wraps `values`, checking the length against `arch` and finiteness.
    pub fn new(arch: &PolicyArchitecture, values: Vec<f64>) -> Result<Self> {
        let expected = arch.param_count()?;
        if values.len() != expected {
            return Err(ParsError::Shape {
                what: "weight vector",
                expected,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ParsError::NonFinite("weight vector"));
        }
        Ok(Self(values))
    }

    /// Wraps values without checking them against an architecture.
    pub fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Recurrent state carried across the steps of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmHiddenState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmHiddenState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Initial weights: zeros for linear policies, N(0, 0.01^2) otherwise.
pub fn init_weights(arch: &PolicyArchitecture, seed: u64) -> Result<WeightVector> {
    let n = arch.param_count()?;
    if arch.kind == PolicyKind::Linear {
        return Ok(WeightVector::zeros(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    Ok(WeightVector(
        (0..n).map(|_| normal.sample(&mut rng)).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Returns `theta + nu * delta` or `theta - nu * delta`.
pub fn perturb(
    weights: &WeightVector,
    direction: &[f64],
    nu: f64,
    sign: Sign,
) -> Result<WeightVector> {
    if direction.len() != weights.len() {
        return Err(ParsError::Shape {
            what: "perturbation direction",
            expected: weights.len(),
            actual: direction.len(),
        });
    }
    let values = weights
        .0
        .iter()
        .zip(direction)
        .map(|(&w, &d)| match sign {
            Sign::Plus => w + nu * d,
            Sign::Minus => w - nu * d,
        })
        .collect();
    Ok(WeightVector(values))
}

/// A fully connected layer viewed as owned matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    /// `fan_out x fan_in`, row-major.
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub input_size: usize,
    pub hidden_size: usize,
    /// Input, forget, candidate and output gates; each acts on `[x; h]`.
    pub gates: [DenseLayer; 4],
}

/// Structured view of a flat weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLayers {
    pub lstm: Option<LstmCell>,
    pub dense: Vec<DenseLayer>,
}

impl PolicyLayers {
    pub fn flatten(&self) -> WeightVector {
        let mut out = Vec::new();
        let mut push = |layer: &DenseLayer| {
            out.extend_from_slice(&layer.weights);
            if let Some(b) = &layer.bias {
                out.extend_from_slice(b);
            }
        };
        if let Some(cell) = &self.lstm {
            cell.gates.iter().for_each(&mut push);
        }
        self.dense.iter().for_each(&mut push);
        WeightVector(out)
    }
}

/// Splits the flat vector into layers following the documented layout.
pub fn reshape(arch: &PolicyArchitecture, weights: &WeightVector) -> Result<PolicyLayers> {
    check_len(arch, weights)?;
    let mut cursor = Cursor::new(weights.as_slice());
    let mut take_layer = |fan_in: usize, fan_out: usize, bias: bool| DenseLayer {
        fan_in,
        fan_out,
        weights: cursor.take(fan_in * fan_out).to_vec(),
        bias: bias.then(|| cursor.take(fan_out).to_vec()),
    };
    let lstm = arch.lstm_hidden().map(|h| {
        let width = arch.obs_dim + h;
        LstmCell {
            input_size: arch.obs_dim,
            hidden_size: h,
            gates: std::array::from_fn(|_| take_layer(width, h, true)),
        }
    });
    let dense = arch
        .dense_shapes()
        .into_iter()
        .map(|(i, o)| take_layer(i, o, arch.has_bias()))
        .collect();
    Ok(PolicyLayers { lstm, dense })
}

fn check_len(arch: &PolicyArchitecture, weights: &WeightVector) -> Result<()> {
    let expected = arch.param_count()?;
    if weights.len() != expected {
        return Err(ParsError::Shape {
            what: "weight vector",
            expected,
            actual: weights.len(),
        });
    }
    Ok(())
}

struct Cursor<'a> {
    data: &'a [f64],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [f64]) -> Self {
        Self { data, pos: 0 }
    }

    fn take(&mut self, n: usize) -> &'a [f64] {
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        s
    }
}

/// `out = W x (+ b)` with `W` row-major `fan_out x fan_in`.
fn affine(w: &[f64], b: Option<&[f64]>, x: &[f64], fan_out: usize) -> Vec<f64> {
    let fan_in = x.len();
    (0..fan_out)
        .map(|o| {
            let row = &w[o * fan_in..(o + 1) * fan_in];
            let dot: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            dot + b.map_or(0.0, |b| b[o])
        })
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Maps a network pre-activation onto `[-0.2, 0]`.
fn squash(z: f64) -> f64 {
    0.1 * (z.tanh() - 1.0)
}

/// One inference step.
///
/// `hidden` must be present exactly when `arch.kind` is LSTM; the updated
/// recurrent state is returned alongside the action.
pub fn forward(
    weights: &WeightVector,
    arch: &PolicyArchitecture,
    input: &[f64],
    hidden: Option<&LstmHiddenState>,
) -> Result<(Vec<f64>, Option<LstmHiddenState>)> {
    check_len(arch, weights)?;
    if input.len() != arch.input_width() {
        return Err(ParsError::Shape {
            what: "policy input",
            expected: arch.input_width(),
            actual: input.len(),
        });
    }
    if input.iter().any(|v| !v.is_finite()) {
        return Err(ParsError::NonFinite("policy input"));
    }
    let mut cursor = Cursor::new(weights.as_slice());

    let (mut x, hidden_out) = match (arch.lstm_hidden(), hidden) {
        (Some(h), Some(state)) => {
            if state.h.len() != h || state.c.len() != h {
                return Err(ParsError::Shape {
                    what: "LSTM hidden state",
                    expected: h,
                    actual: state.h.len().max(state.c.len()),
                });
            }
            let next = lstm_step(&mut cursor, input, state, h);
            (next.h.clone(), Some(next))
        }
        (None, None) => (input.to_vec(), None),
        (Some(_), None) => {
            return Err(ParsError::InvalidArgument(
                "LSTM policy requires a hidden state".into(),
            ))
        }
        (None, Some(_)) => {
            return Err(ParsError::InvalidArgument(format!(
                "{} policy takes no hidden state",
                arch.kind
            )))
        }
    };

    let shapes = arch.dense_shapes();
    let last = shapes.len() - 1;
    for (idx, &(fan_in, fan_out)) in shapes.iter().enumerate() {
        let w = cursor.take(fan_in * fan_out);
        let b = arch.has_bias().then(|| cursor.take(fan_out));
        let mut z = affine(w, b, &x, fan_out);
        if idx == last {
            match arch.kind {
                PolicyKind::Linear => z
                    .iter_mut()
                    .for_each(|v| *v = v.clamp(ACTION_MIN, ACTION_MAX)),
                _ => z.iter_mut().for_each(|v| *v = squash(*v)),
            }
        } else {
            z.iter_mut().for_each(|v| *v = v.tanh());
        }
        x = z;
    }
    Ok((x, hidden_out))
}

fn lstm_step(
    cursor: &mut Cursor<'_>,
    input: &[f64],
    state: &LstmHiddenState,
    h: usize,
) -> LstmHiddenState {
    let mut xh = Vec::with_capacity(input.len() + h);
    xh.extend_from_slice(input);
    xh.extend_from_slice(&state.h);
    let width = xh.len();
    let mut gate = || {
        let w = cursor.take(width * h);
        let b = cursor.take(h);
        affine(w, Some(b), &xh, h)
    };
    let i = gate();
    let f = gate();
    let g = gate();
    let o = gate();
    let mut next = LstmHiddenState::zeros(h);
    for k in 0..h {
        let c = sigmoid(f[k]) * state.c[k] + sigmoid(i[k]) * g[k].tanh();
        next.c[k] = c;
        next.h[k] = sigmoid(o[k]) * c.tanh();
    }
    next
}

/// Keeps the last `history_stack + 1` normalized observations and yields
/// them concatenated, oldest first. Before enough frames have been seen the
/// first frame is repeated.
#[derive(Debug, Clone)]
pub struct FrameStack {
    depth: usize,
    frames: VecDeque<Vec<f64>>,
}

impl FrameStack {
    pub fn new(history_stack: usize) -> Self {
        Self {
            depth: history_stack + 1,
            frames: VecDeque::with_capacity(history_stack + 1),
        }
    }

    pub fn push(&mut self, frame: Vec<f64>) -> Vec<f64> {
        if self.frames.is_empty() {
            for _ in 1..self.depth {
                self.frames.push_back(frame.clone());
            }
        } else if self.frames.len() == self.depth {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
        self.frames.iter().flatten().copied().collect()
    }
}

/// Per-episode policy executor: owns the recurrent state or frame stack so
/// callers only supply the normalized per-step observation.
#[derive(Debug, Clone)]
pub struct EpisodePolicy<'a> {
    arch: &'a PolicyArchitecture,
    weights: &'a WeightVector,
    hidden: Option<LstmHiddenState>,
    stack: Option<FrameStack>,
}

impl<'a> EpisodePolicy<'a> {
    pub fn new(arch: &'a PolicyArchitecture, weights: &'a WeightVector) -> Result<Self> {
        check_len(arch, weights)?;
        let (hidden, stack) = match arch.lstm_hidden() {
            Some(h) => (Some(LstmHiddenState::zeros(h)), None),
            None => (None, Some(FrameStack::new(arch.history_stack))),
        };
        Ok(Self {
            arch,
            weights,
            hidden,
            stack,
        })
    }

    pub fn act(&mut self, normalized_obs: Vec<f64>) -> Result<Vec<f64>> {
        if normalized_obs.len() != self.arch.obs_dim {
            return Err(ParsError::Shape {
                what: "observation",
                expected: self.arch.obs_dim,
                actual: normalized_obs.len(),
            });
        }
        let input = match &mut self.stack {
            Some(stack) => stack.push(normalized_obs),
            None => normalized_obs,
        };
        let (action, hidden) = forward(self.weights, self.arch, &input, self.hidden.as_ref())?;
        self.hidden = hidden;
        Ok(action)
    }

    pub fn hidden(&self) -> Option<&LstmHiddenState> {
        self.hidden.as_ref()
    }
}
