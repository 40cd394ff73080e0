use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
}

impl Activation {
    fn apply(self, g: &mut Graph<'_>, x: Var) -> Var {
        match self {
            Activation::Linear => x,
            Activation::Relu => g.relu(x),
        }
    }
}

/// Fully connected layer over the last axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add(format!("{name}.w"), Tensor::glorot_uniform(&[in_dim, out_dim], in_dim, out_dim, rng))?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[out_dim]))?;
        Ok(Self { w, b, in_dim, out_dim, activation })
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        let y = g.matmul(x, w)?;
        let y = g.add_bias(y, b)?;
        Ok(self.activation.apply(g, y))
    }
}

/// Valid-padding 1-D cross-correlation along time.
///
/// The kernel is stored as `[k * C, F]`, row `j * C + c` weighting input
/// channel `c` at offset `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
    pub in_channels: usize,
    pub filters: usize,
    pub activation: Activation,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        kernel: usize,
        in_channels: usize,
        filters: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel == 0 {
            return Err(Error::invalid("kernel size must be positive"));
        }
        let shape = [kernel * in_channels, filters];
        let w = store.add(format!("{name}.w"), Tensor::glorot_uniform(&shape, kernel * in_channels, kernel * filters, rng))?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[filters]))?;
        Ok(Self { w, b, kernel, in_channels, filters, activation })
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }

    pub fn output_len(&self, t: usize) -> Option<usize> {
        t.checked_sub(self.kernel).map(|v| v + 1)
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.in_channels {
            return Err(Error::shape(format!("conv1d expects [B, T, {}], got {s:?}", self.in_channels)));
        }
        if s[1] < self.kernel {
            return Err(Error::shape(format!("sequence of {} steps is shorter than kernel {}", s[1], self.kernel)));
        }
        let cols = g.unfold(x, self.kernel)?;
        let (w, b) = (g.param(self.w), g.param(self.b));
        let y = g.matmul(cols, w)?;
        let y = g.add_bias(y, b)?;
        Ok(self.activation.apply(g, y))
    }
}

/// LSTM with gates packed as `[i, f, g, o]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let h4 = 4 * hidden;
        let wx = store.add(format!("{name}.wx"), Tensor::glorot_uniform(&[input, h4], input, h4, rng))?;
        let wh = store.add(format!("{name}.wh"), Tensor::glorot_uniform(&[hidden, h4], hidden, h4, rng))?;
        let mut bias = Tensor::zeros(&[h4]);
        bias.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        let b = store.add(format!("{name}.b"), bias)?;
        Ok(Self { wx, wh, b, input, hidden })
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.wx, self.wh, self.b]
    }

    /// Hidden states indexed by time. With `reverse` the recurrence runs from
    /// the last step to the first, and entry `t` is the state after reading
    /// steps `T-1..=t`.
    pub fn states(&self, g: &mut Graph<'_>, x: Var, reverse: bool) -> Result<Vec<Var>> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.input {
            return Err(Error::shape(format!("lstm expects [B, T, {}], got {s:?}", self.input)));
        }
        let (wx, wh, b) = (g.param(self.wx), g.param(self.wh), g.param(self.b));
        let proj = g.matmul(x, wx)?;
        let proj = g.add_bias(proj, b)?;
        let n = s[1];
        let hd = self.hidden;
        let mut out = vec![None; n];
        let mut state: Option<(Var, Var)> = None;
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for t in order {
            let mut gates = g.time_step(proj, t)?;
            if let Some((h, _)) = state {
                let rec = g.matmul(h, wh)?;
                gates = g.add(gates, rec)?;
            }
            let i = g.slice_last(gates, 0, hd)?;
            let i = g.sigmoid(i);
            let f = g.slice_last(gates, hd, hd)?;
            let f = g.sigmoid(f);
            let cand = g.slice_last(gates, 2 * hd, hd)?;
            let cand = g.tanh(cand);
            let o = g.slice_last(gates, 3 * hd, hd)?;
            let o = g.sigmoid(o);
            let ic = g.mul(i, cand)?;
            let c = match state {
                Some((_, c_prev)) => {
                    let fc = g.mul(f, c_prev)?;
                    g.add(fc, ic)?
                }
                None => ic,
            };
            let tc = g.tanh(c);
            let h = g.mul(o, tc)?;
            out[t] = Some(h);
            state = Some((h, c));
        }
        Ok(out.into_iter().map(|h| h.expect("every step visited")).collect())
    }

    /// `[B, T, C] -> [B, T, H]`.
    pub fn sequence(&self, g: &mut Graph<'_>, x: Var, reverse: bool) -> Result<Var> {
        let hs = self.states(g, x, reverse)?;
        g.stack_time(&hs)
    }

    /// Final hidden state of a forward pass, `[B, H]`.
    pub fn last(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        Ok(*self.states(g, x, false)?.last().ok_or_else(|| Error::shape("empty sequence"))?)
    }
}

/// Forward and backward LSTMs, outputs concatenated per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    /// `output` is the concatenated width; each direction gets half.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut R) -> Result<Self> {
        if !output.is_multiple_of(2) || output == 0 {
            return Err(Error::invalid(format!("bidirectional width {output} must be even")));
        }
        Ok(Self {
            forward: Lstm::new(store, &format!("{name}.fwd"), input, output / 2, rng)?,
            backward: Lstm::new(store, &format!("{name}.bwd"), input, output / 2, rng)?,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.forward.params();
        p.extend(self.backward.params());
        p
    }

    pub fn output_dim(&self) -> usize {
        self.forward.hidden + self.backward.hidden
    }

    pub fn apply(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let f = self.forward.sequence(g, x, false)?;
        let b = self.backward.sequence(g, x, true)?;
        g.concat_last(&[f, b])
    }
}

/// Scaled dot-product self-attention with `heads` heads and an output
/// projection. Returns `A`; adding the residual is up to the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub q: Dense,
    pub k: Dense,
    pub v: Dense,
    pub out: Dense,
    pub dim: usize,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::invalid(format!("attention width {dim} is not divisible by {heads} heads")));
        }
        let mk = |store: &mut ParamStore, part: &str, rng: &mut R| {
            Dense::new(store, &format!("{name}.{part}"), dim, dim, Activation::Linear, rng)
        };
        let q = mk(store, "q", rng)?;
        let k = mk(store, "k", rng)?;
        let v = mk(store, "v", rng)?;
        let out = mk(store, "o", rng)?;
        Ok(Self { q, k, v, out, dim, heads })
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.q, &self.k, &self.v, &self.out].iter().flat_map(|d| d.params()).collect()
    }

    pub fn forward(&self, g: &mut Graph<'_>, s: Var) -> Result<Var> {
        let shape = g.shape(s).to_vec();
        if shape.len() != 3 || shape[2] != self.dim {
            return Err(Error::shape(format!("attention expects [B, T, {}], got {shape:?}", self.dim)));
        }
        let q = self.q.forward(g, s)?;
        let k = self.k.forward(g, s)?;
        let v = self.v.forward(g, s)?;
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_last(q, h * dh, dh)?;
            let kh = g.slice_last(k, h * dh, dh)?;
            let vh = g.slice_last(v, h * dh, dh)?;
            let scores = g.batch_matmul(qh, kh, true)?;
            let scores = g.scale(scores, scale);
            let weights = g.softmax_last(scores);
            heads.push(g.batch_matmul(weights, vh, false)?);
        }
        let cat = g.concat_last(&heads)?;
        self.out.forward(g, cat)
    }
}

/// Inverted-dropout mask: kept entries hold `1 / (1 - rate)`, dropped ones 0.
pub fn dropout_mask<R: Rng + ?Sized>(shape: &[usize], rate: f64, rng: &mut R) -> Result<Tensor> {
    check_rate(rate)?;
    if rate == 0.0 {
        return Ok(Tensor::filled(shape, 1.0));
    }
    let keep = 1.0 - rate;
    let n = shape.iter().product();
    let data = (0..n).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
    Tensor::new(shape.to_vec(), data)
}

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Applies dropout when an RNG is supplied; identity otherwise.
pub fn dropout<R: Rng + ?Sized>(g: &mut Graph<'_>, x: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
    check_rate(rate)?;
    match rng {
        Some(rng) if rate > 0.0 => {
            let mask = dropout_mask(g.shape(x), rate, rng)?;
            g.mul_const(x, mask)
        }
        _ => Ok(x),
    }
}
