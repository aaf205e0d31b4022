//! Stacked bidirectional LSTM sentence encoder with shortcut or residual
//! connections and a row-max-pool readout.
//!
//! Layer inputs depend on the connection mode:
//!   none          x_t^i = h_t^{i-1}
//!   word_shortcut x_t^i = [w_t, h_t^{i-1}]
//!   full_shortcut x_t^i = [w_t, h_t^{i-1}, ..., h_t^1]
//!   residual      x_t^i = [w_t, sum_j h_t^j]
//! Layer 1 always consumes the word embedding alone.

use crate::error::{Error, Result};
use crate::params::{glorot_uniform, Binding, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectionMode {
    None,
    WordShortcut,
    FullShortcut,
    Residual,
}

impl std::fmt::Display for ConnectionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ConnectionMode::None => "none",
            ConnectionMode::WordShortcut => "word_shortcut",
            ConnectionMode::FullShortcut => "full_shortcut",
            ConnectionMode::Residual => "residual",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ConnectionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ConnectionMode::None),
            "word_shortcut" => Ok(ConnectionMode::WordShortcut),
            "full_shortcut" => Ok(ConnectionMode::FullShortcut),
            "residual" => Ok(ConnectionMode::Residual),
            other => Err(Error::Config(format!("unknown connection mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub mode: ConnectionMode,
    /// Per-direction hidden sizes d_1..d_m; layer i outputs 2*d_i.
    pub layer_dims: Vec<usize>,
    pub embed_dim: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.is_empty() {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if self.layer_dims.contains(&0) || self.embed_dim == 0 {
            return Err(Error::Config("encoder dimensions must be >= 1".into()));
        }
        if self.mode == ConnectionMode::Residual
            && self.layer_dims.iter().any(|&d| d != self.layer_dims[0])
        {
            return Err(Error::Config(format!(
                "residual mode requires equal layer dims, got {:?}",
                self.layer_dims
            )));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len()
    }

    /// Input width of layer `i` (0-based) under this connection mode.
    pub fn layer_input_dim(&self, i: usize) -> usize {
        if i == 0 {
            return self.embed_dim;
        }
        match self.mode {
            ConnectionMode::None => 2 * self.layer_dims[i - 1],
            ConnectionMode::WordShortcut => self.embed_dim + 2 * self.layer_dims[i - 1],
            ConnectionMode::FullShortcut => {
                self.embed_dim + self.layer_dims[..i].iter().map(|&d| 2 * d).sum::<usize>()
            }
            ConnectionMode::Residual => self.embed_dim + 2 * self.layer_dims[0],
        }
    }

    /// Sentence-vector width: 2 * d_m.
    pub fn output_dim(&self) -> usize {
        2 * self.layer_dims[self.layer_dims.len() - 1]
    }
}

/// One direction of one biLSTM layer. Gate order in the stacked weight
/// matrices is (input, forget, cell, output).
#[derive(Debug, Clone)]
pub struct LstmDirectionParams {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub struct BiLstmLayer {
    pub fwd: LstmDirectionParams,
    pub bwd: LstmDirectionParams,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub layers: Vec<BiLstmLayer>,
}

fn init_direction<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    name: &str,
    in_dim: usize,
    hidden: usize,
    rng: &mut R,
) -> LstmDirectionParams {
    let w_x = store.add(
        &format!("{name}.w_x"),
        vec![4 * hidden, in_dim],
        glorot_uniform(4 * hidden, in_dim, rng),
        true,
    );
    let w_h = store.add(
        &format!("{name}.w_h"),
        vec![4 * hidden, hidden],
        glorot_uniform(4 * hidden, hidden, rng),
        true,
    );
    // forget-gate slice starts at 1.0, everything else at 0
    let mut bias = vec![T::zero(); 4 * hidden];
    for v in bias[hidden..2 * hidden].iter_mut() {
        *v = T::one();
    }
    let b = store.add(&format!("{name}.b"), vec![4 * hidden], bias, true);
    LstmDirectionParams { w_x, w_h, b, in_dim, hidden }
}

impl EncoderParams {
    pub fn init<T: Scalar, R: Rng>(
        config: &EncoderConfig,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.num_layers());
        for (i, &hidden) in config.layer_dims.iter().enumerate() {
            let in_dim = config.layer_input_dim(i);
            let fwd = init_direction(store, &format!("encoder.layer{i}.fwd"), in_dim, hidden, rng);
            let bwd = init_direction(store, &format!("encoder.layer{i}.bwd"), in_dim, hidden, rng);
            layers.push(BiLstmLayer { fwd, bwd, hidden });
        }
        Ok(EncoderParams { layers })
    }
}

/// One LSTM cell update: gates from W_x x + W_h h + b, then
/// c = f.c_prev + i.g and h = o.tanh(c).
pub fn lstm_cell_step<T: Scalar>(
    graph: &mut Graph<T>,
    binding: &Binding,
    p: &LstmDirectionParams,
    x_t: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let h = p.hidden;
    let wx = graph.matvec(binding.var(p.w_x), x_t)?;
    let wh = graph.matvec(binding.var(p.w_h), h_prev)?;
    let pre = graph.add(wx, wh)?;
    let gates = graph.add(pre, binding.var(p.b))?;
    let i_gate = graph.slice(gates, 0, h)?;
    let f_gate = graph.slice(gates, h, h)?;
    let g_pre = graph.slice(gates, 2 * h, h)?;
    let o_gate = graph.slice(gates, 3 * h, h)?;
    let i = graph.sigmoid(i_gate);
    let f = graph.sigmoid(f_gate);
    let g = graph.tanh_act(g_pre);
    let o = graph.sigmoid(o_gate);
    let fc = graph.hadamard(f, c_prev)?;
    let ig = graph.hadamard(i, g)?;
    let c = graph.add(fc, ig)?;
    let tc = graph.tanh_act(c);
    let h_out = graph.hadamard(o, tc)?;
    Ok((h_out, c))
}

/// Run one biLSTM layer over `inputs` (length n). The forward direction
/// runs t = 0..valid_len and the backward direction t = valid_len-1..0,
/// both from zero initial states; outputs at t >= valid_len are zero
/// vectors so upper layers see consistent widths and padding stays inert.
pub fn run_bilstm_layer<T: Scalar>(
    graph: &mut Graph<T>,
    binding: &Binding,
    layer: &BiLstmLayer,
    inputs: &[Var],
    valid_len: usize,
) -> Result<Vec<Var>> {
    if valid_len == 0 {
        return Err(Error::EmptySequence("biLSTM layer over zero valid time steps"));
    }
    if valid_len > inputs.len() {
        return Err(Error::Dimension {
            op: "run_bilstm_layer",
            detail: format!("valid_len {valid_len} exceeds {} inputs", inputs.len()),
        });
    }
    let h = layer.hidden;
    let n = inputs.len();

    let mut fwd_states = Vec::with_capacity(valid_len);
    let mut h_prev = graph.zeros(vec![h]);
    let mut c_prev = graph.zeros(vec![h]);
    for &x in inputs.iter().take(valid_len) {
        let (hs, cs) = lstm_cell_step(graph, binding, &layer.fwd, x, h_prev, c_prev)?;
        fwd_states.push(hs);
        h_prev = hs;
        c_prev = cs;
    }

    let mut bwd_states = vec![Var(0); valid_len];
    let mut h_prev = graph.zeros(vec![h]);
    let mut c_prev = graph.zeros(vec![h]);
    for t in (0..valid_len).rev() {
        let (hs, cs) = lstm_cell_step(graph, binding, &layer.bwd, inputs[t], h_prev, c_prev)?;
        bwd_states[t] = hs;
        h_prev = hs;
        c_prev = cs;
    }

    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        if t < valid_len {
            out.push(graph.concat(&[fwd_states[t], bwd_states[t]], 0)?);
        } else {
            out.push(graph.zeros(vec![2 * h]));
        }
    }
    Ok(out)
}

/// Input to layer `i` (0-based) at one time step, per the connection mode.
/// `prev_outputs` holds h_t^1..h_t^{i} for the already-run layers.
pub fn compose_layer_input<T: Scalar>(
    graph: &mut Graph<T>,
    mode: ConnectionMode,
    i: usize,
    w_t: Var,
    prev_outputs: &[Var],
) -> Result<Var> {
    if prev_outputs.len() != i {
        return Err(Error::Dimension {
            op: "compose_layer_input",
            detail: format!("layer {i} expects {i} previous outputs, got {}", prev_outputs.len()),
        });
    }
    if i == 0 {
        return Ok(w_t);
    }
    match mode {
        ConnectionMode::None => Ok(prev_outputs[i - 1]),
        ConnectionMode::WordShortcut => graph.concat(&[w_t, prev_outputs[i - 1]], 0),
        ConnectionMode::FullShortcut => {
            let mut parts = vec![w_t];
            parts.extend(prev_outputs.iter().rev().copied());
            graph.concat(&parts, 0)
        }
        ConnectionMode::Residual => {
            let mut sum = prev_outputs[0];
            for &p in &prev_outputs[1..] {
                if graph.shape(p) != graph.shape(sum) {
                    return Err(Error::Config(format!(
                        "residual mode requires equal layer output dims, got {:?} vs {:?}",
                        graph.shape(sum),
                        graph.shape(p)
                    )));
                }
                sum = graph.add(sum, p)?;
            }
            graph.concat(&[w_t, sum], 0)
        }
    }
}

/// Encode one sentence: run all layers, stack the last layer's outputs as
/// columns and row-max-pool over the valid steps. Returns a vector of
/// length 2*d_m.
pub fn encode<T: Scalar>(
    graph: &mut Graph<T>,
    binding: &Binding,
    params: &EncoderParams,
    config: &EncoderConfig,
    embedded: &[Var],
    valid_len: usize,
) -> Result<Var> {
    if valid_len == 0 {
        return Err(Error::EmptySequence("cannot encode an empty sentence"));
    }
    let n = embedded.len();
    let mut layer_outputs: Vec<Vec<Var>> = Vec::with_capacity(params.layers.len());
    for (i, layer) in params.layers.iter().enumerate() {
        let mut inputs = Vec::with_capacity(n);
        for t in 0..n {
            let prev: Vec<Var> = layer_outputs.iter().map(|o| o[t]).collect();
            inputs.push(compose_layer_input(graph, config.mode, i, embedded[t], &prev)?);
        }
        layer_outputs.push(run_bilstm_layer(graph, binding, layer, &inputs, valid_len)?);
    }
    let last = layer_outputs.last().unwrap();
    let h_matrix = graph.stack_cols(last)?;
    let (v, _) = graph.row_max(h_matrix, valid_len)?;
    Ok(v)
}

/// Parameters of one LSTM direction: 4*((in + h)*h + h).
pub fn lstm_direction_params(in_dim: usize, hidden: usize) -> u64 {
    4 * (((in_dim + hidden) * hidden + hidden) as u64)
}

/// Total parameter count under the documented formula: per layer, two
/// directions of 4*((in+h)*h + h); plus MLP affine weights and biases;
/// plus the embedding matrix when `embed_vocab` is given.
pub fn param_count(
    config: &EncoderConfig,
    mlp: &crate::classifier::MlpConfig,
    embed_vocab: Option<usize>,
) -> u64 {
    let mut total = 0u64;
    for (i, &h) in config.layer_dims.iter().enumerate() {
        total += 2 * lstm_direction_params(config.layer_input_dim(i), h);
    }
    let matching_dim = 4 * config.output_dim();
    total += mlp.param_count(matching_dim);
    if let Some(vocab) = embed_vocab {
        total += (vocab * config.embed_dim) as u64;
    }
    total
}
