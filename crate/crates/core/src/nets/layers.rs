//! Building blocks shared by every network.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::diffcore::{DiffError, ParamId, ParamStore, Tape, Var};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

pub(crate) fn uniform(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

pub(crate) fn normal(rng: &mut impl Rng, n: usize, sd: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, sd).expect("positive sd");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// `x W + b` over the last axis; weights uniform in `±1/sqrt(fan_in)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub input: usize,
    pub output: usize,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, bias: bool, rng: &mut impl Rng) -> Result<Self, DiffError> {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = store.add(format!("{name}/weight"), vec![input, output], uniform(rng, input * output, bound), true)?;
        let bias = if bias {
            Some(store.add(format!("{name}/bias"), vec![output], uniform(rng, output, bound), true)?)
        } else {
            None
        };
        Ok(Self { input, output, weight, bias })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, DiffError> {
        let w = tape.param(store, self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_bcast(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Result<Self, DiffError> {
        Ok(Self {
            gamma: store.add(format!("{name}/gamma"), vec![width], vec![1.0; width], true)?,
            beta: store.add(format!("{name}/beta"), vec![width], vec![0.0; width], true)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, DiffError> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b)
    }
}

/// Per-column normalisation over every row of the batch, with running
/// statistics kept as non-trainable buffers.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub width: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Result<Self, DiffError> {
        Ok(Self {
            width,
            gamma: store.add(format!("{name}/gamma"), vec![width], vec![1.0; width], true)?,
            beta: store.add(format!("{name}/beta"), vec![width], vec![0.0; width], true)?,
            running_mean: store.add(format!("{name}/running_mean"), vec![width], vec![0.0; width], false)?,
            running_var: store.add(format!("{name}/running_var"), vec![width], vec![1.0; width], false)?,
        })
    }

    /// In training mode the running buffers are updated through the tape's
    /// buffer queue, applied by the optimiser loop.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, train: bool) -> Result<Var, DiffError> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        let (rm, rv) = (store.values(self.running_mean), store.values(self.running_var));
        let (y, stats) = tape.batch_norm(x, g, b, (rm, rv), train)?;
        if let Some((mean, var)) = stats {
            let m = BATCH_NORM_MOMENTUM;
            let blend = |old: &[f64], new: &[f64]| old.iter().zip(new).map(|(o, n)| (1.0 - m) * o + m * n).collect();
            let new_mean = blend(rm, &mean);
            let new_var = blend(rv, &var);
            tape.queue_buffer_update(self.running_mean, new_mean);
            tape.queue_buffer_update(self.running_var, new_var);
        }
        Ok(y)
    }
}

/// Scaled dot-product self-attention over `[batch, len, width]`.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub width: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut impl Rng) -> Result<Self, DiffError> {
        if heads == 0 || width % heads != 0 {
            return Err(DiffError::Invalid(format!("width {width} is not divisible into {heads} heads")));
        }
        Ok(Self {
            heads,
            width,
            query: Linear::new(store, &format!("{name}/query"), width, width, true, rng)?,
            key: Linear::new(store, &format!("{name}/key"), width, width, true, rng)?,
            value: Linear::new(store, &format!("{name}/value"), width, width, true, rng)?,
            out: Linear::new(store, &format!("{name}/out"), width, width, true, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, DiffError> {
        let q = self.query.forward(tape, store, x)?;
        let k = self.key.forward(tape, store, x)?;
        let v = self.value.forward(tape, store, x)?;
        let head_width = self.width / self.heads;
        let scale = 1.0 / (head_width as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.narrow(q, 2, h * head_width, head_width)?;
            let kh = tape.narrow(k, 2, h * head_width, head_width)?;
            let vh = tape.narrow(v, 2, h * head_width, head_width)?;
            let kt = tape.transpose_last2(kh)?;
            let scores = tape.bmm(qh, kt)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax(scores, 2)?;
            outs.push(tape.bmm(attn, vh)?);
        }
        let joined = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, 2)? };
        self.out.forward(tape, store, joined)
    }
}

/// Pre-norm encoder layer: `x + attn(ln(x))`, then `x + ff(ln(x))`.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attn_norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ff_norm: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, ff_width: usize, rng: &mut impl Rng) -> Result<Self, DiffError> {
        Ok(Self {
            attn_norm: LayerNorm::new(store, &format!("{name}/attn_norm"), width)?,
            attn: MultiHeadAttention::new(store, &format!("{name}/attn"), width, heads, rng)?,
            ff_norm: LayerNorm::new(store, &format!("{name}/ff_norm"), width)?,
            ff_in: Linear::new(store, &format!("{name}/ff_in"), width, ff_width, true, rng)?,
            ff_out: Linear::new(store, &format!("{name}/ff_out"), ff_width, width, true, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, DiffError> {
        let n = self.attn_norm.forward(tape, store, x)?;
        let a = self.attn.forward(tape, store, n)?;
        let x = tape.add(x, a)?;
        let n = self.ff_norm.forward(tape, store, x)?;
        let h = self.ff_in.forward(tape, store, n)?;
        let h = tape.relu(h);
        let f = self.ff_out.forward(tape, store, h)?;
        tape.add(x, f)
    }
}

/// Stack of encoder layers with a closing layer norm, over `[batch, len, width]`.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub layers: Vec<EncoderLayer>,
    pub norm: LayerNorm,
}

impl TransformerEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        layers: usize,
        ff_width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, DiffError> {
        let layers = (0..layers)
            .map(|i| EncoderLayer::new(store, &format!("{name}/layer{i}"), width, heads, ff_width, rng))
            .collect::<Result<_, _>>()?;
        Ok(Self { layers, norm: LayerNorm::new(store, &format!("{name}/norm"), width)? })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Result<Var, DiffError> {
        for layer in &self.layers {
            x = layer.forward(tape, store, x)?;
        }
        self.norm.forward(tape, store, x)
    }
}

/// Causal 1-D convolution, same width in and out.
#[derive(Debug, Clone)]
pub struct CausalConv {
    pub kernel: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl CausalConv {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, kernel: usize, rng: &mut impl Rng) -> Result<Self, DiffError> {
        let bound = 1.0 / ((kernel * width) as f64).sqrt();
        Ok(Self {
            kernel,
            weight: store.add(format!("{name}/weight"), vec![kernel, width, width], uniform(rng, kernel * width * width, bound), true)?,
            bias: store.add(format!("{name}/bias"), vec![width], uniform(rng, width, bound), true)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, DiffError> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv1d(x, w, b, 1, self.kernel - 1)
    }
}

/// Encoder and decoder stacks of causal convolutions applied in sequence,
/// leaky-relu between consecutive units. Length and width are preserved.
#[derive(Debug, Clone)]
pub struct Tcn {
    pub units: Vec<CausalConv>,
}

pub const TCN_UNITS_PER_STACK: usize = 2;

impl Tcn {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, kernel: usize, rng: &mut impl Rng) -> Result<Self, DiffError> {
        if kernel == 0 {
            return Err(DiffError::Invalid("tcn kernel must be positive".into()));
        }
        let mut units = Vec::new();
        for stack in ["encoder", "decoder"] {
            for i in 0..TCN_UNITS_PER_STACK {
                units.push(CausalConv::new(store, &format!("{name}/{stack}/unit{i}"), width, kernel, rng)?);
            }
        }
        Ok(Self { units })
    }

    /// Positions that can influence a given output, itself included.
    pub fn receptive_field(&self) -> usize {
        self.units.iter().map(|u| u.kernel - 1).sum::<usize>() + 1
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Result<Var, DiffError> {
        for (i, unit) in self.units.iter().enumerate() {
            if i > 0 {
                x = tape.leaky_relu(x, LEAKY_SLOPE);
            }
            x = unit.forward(tape, store, x)?;
        }
        Ok(x)
    }
}

/// One LSTM layer over `[batch, len, input]`, returning every hidden state.
#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub hidden: usize,
    pub input_weight: ParamId,
    pub hidden_weight: ParamId,
    pub bias: ParamId,
}

impl LstmLayer {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self, DiffError> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let g = 4 * hidden;
        Ok(Self {
            hidden,
            input_weight: store.add(format!("{name}/input_weight"), vec![input, g], uniform(rng, input * g, bound), true)?,
            hidden_weight: store.add(format!("{name}/hidden_weight"), vec![hidden, g], uniform(rng, hidden * g, bound), true)?,
            bias: store.add(format!("{name}/bias"), vec![g], uniform(rng, g, bound), true)?,
        })
    }

    /// Gate order: input, forget, cell, output.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, DiffError> {
        let s = tape.shape(x).to_vec();
        if s.len() != 3 {
            return Err(DiffError::ShapeMismatch { op: "lstm", left: s, right: vec![0, 0, 0] });
        }
        let (batch, len) = (s[0], s[1]);
        let h_size = self.hidden;
        let wi = tape.param(store, self.input_weight);
        let wh = tape.param(store, self.hidden_weight);
        let b = tape.param(store, self.bias);
        let projected = tape.matmul(x, wi)?;
        let projected = tape.add_bcast(projected, b)?;
        let mut h = tape.constant(vec![batch, h_size], vec![0.0; batch * h_size])?;
        let mut c = tape.constant(vec![batch, h_size], vec![0.0; batch * h_size])?;
        let mut outputs = Vec::with_capacity(len);
        for t in 0..len {
            let xt = tape.narrow(projected, 1, t, 1)?;
            let xt = tape.reshape(xt, vec![batch, 4 * h_size])?;
            let rec = tape.matmul(h, wh)?;
            let gates = tape.add(xt, rec)?;
            let i = tape.narrow(gates, 1, 0, h_size)?;
            let f = tape.narrow(gates, 1, h_size, h_size)?;
            let g = tape.narrow(gates, 1, 2 * h_size, h_size)?;
            let o = tape.narrow(gates, 1, 3 * h_size, h_size)?;
            let (i, f, g, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(g), tape.sigmoid(o));
            let keep = tape.mul(f, c)?;
            let write = tape.mul(i, g)?;
            c = tape.add(keep, write)?;
            let ct = tape.tanh(c);
            h = tape.mul(o, ct)?;
            outputs.push(tape.reshape(h, vec![batch, 1, h_size])?);
        }
        tape.concat(&outputs, 1)
    }
}

#[derive(Debug, Clone)]
pub struct Lstm {
    pub layers: Vec<LstmLayer>,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, layers: usize, rng: &mut impl Rng) -> Result<Self, DiffError> {
        let layers = (0..layers)
            .map(|i| LstmLayer::new(store, &format!("{name}/layer{i}"), if i == 0 { input } else { hidden }, hidden, rng))
            .collect::<Result<_, _>>()?;
        Ok(Self { layers })
    }

    /// All hidden states of the top layer, `[batch, len, hidden]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Result<Var, DiffError> {
        for layer in &self.layers {
            x = layer.forward(tape, store, x)?;
        }
        Ok(x)
    }

    /// Top-layer hidden state at the last position, `[batch, hidden]`.
    pub fn last(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, DiffError> {
        let all = self.forward(tape, store, x)?;
        let s = tape.shape(all).to_vec();
        let last = tape.narrow(all, 1, s[1] - 1, 1)?;
        tape.reshape(last, vec![s[0], s[2]])
    }
}
