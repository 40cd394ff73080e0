//! Stage-2 hybrid network: multi-scale convolutions in parallel with a
//! BiLSTM + self-attention pathway, fused by a small dense head.

mod train;

pub use train::{fit, TrainConfig, TrainReport, WindowSet};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::gradcheck::{check_gradients, GradCheckReport};
use crate::autodiff::{
    dropout, Activation, BiLstm, Conv1d, Dense, Graph, Lstm, MultiHeadAttention, ParamId, ParamStore, Tensor, Var,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Weeks per input window.
    pub window: usize,
    /// Per-week features before any embedding columns.
    pub input_dim: usize,
    pub conv_kernels: Vec<usize>,
    pub conv_filters: [usize; 2],
    /// Concatenated width of both BiLSTM directions.
    pub bilstm_width: usize,
    pub attention_heads: usize,
    pub head_lstm: usize,
    pub fusion_units: [usize; 2],
    /// Dropout on the flattened convolution features and after dense layers.
    pub dropout_dense: f64,
    /// Dropout after the head LSTM.
    pub dropout_lstm: f64,
    /// State embedding width; `None` for a single-state network.
    pub embedding_dim: Option<usize>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            window: 16,
            input_dim: 24,
            conv_kernels: vec![2, 4, 8],
            conv_filters: [128, 64],
            bilstm_width: 64,
            attention_heads: 4,
            head_lstm: 32,
            fusion_units: [64, 32],
            dropout_dense: 0.2,
            dropout_lstm: 0.3,
            embedding_dim: None,
        }
    }
}

impl NetConfig {
    /// Columns seen by the convolution and recurrent pathways.
    pub fn sequence_dim(&self) -> usize {
        self.input_dim + self.embedding_dim.unwrap_or(0)
    }

    /// Length of the flattened convolution features.
    pub fn cnn_dim(&self) -> usize {
        self.conv_kernels
            .iter()
            .map(|&k| self.window.saturating_sub(2 * (k - 1)) * self.conv_filters[1])
            .sum()
    }

    pub fn fusion_dim(&self) -> usize {
        self.cnn_dim() + self.head_lstm + self.embedding_dim.unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        crate::autodiff::check_rate(self.dropout_dense)?;
        crate::autodiff::check_rate(self.dropout_lstm)?;
        if self.conv_kernels.is_empty() || self.conv_kernels.iter().any(|&k| k == 0 || 2 * (k - 1) >= self.window) {
            return Err(Error::invalid(format!(
                "kernels {:?} leave no output over a {}-week window",
                self.conv_kernels, self.window
            )));
        }
        if self.input_dim == 0 || self.head_lstm == 0 || self.fusion_units.contains(&0) {
            return Err(Error::invalid("network widths must be positive"));
        }
        if self.bilstm_width == 0 || !self.bilstm_width.is_multiple_of(2) {
            return Err(Error::invalid("BiLSTM width must be even"));
        }
        Ok(())
    }
}

/// Named parameter groups used by freeze plans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Conv,
    Bilstm,
    Attention,
    HeadLstm,
    Fusion,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layout {
    convs: Vec<(Conv1d, Conv1d)>,
    bilstm: BiLstm,
    attention: MultiHeadAttention,
    head: Lstm,
    fuse1: Dense,
    fuse2: Dense,
    skip: Dense,
    out: Dense,
    embedding: Option<ParamId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridNet {
    config: NetConfig,
    layout: Layout,
    store: ParamStore,
    states: Vec<String>,
}

/// Which layers stay fixed during fine-tuning, and the rate for the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreezePlan {
    pub frozen: Vec<ParamGroup>,
    pub learning_rate: f64,
}

impl Default for FreezePlan {
    fn default() -> Self {
        Self { frozen: vec![ParamGroup::Conv, ParamGroup::Bilstm], learning_rate: 1e-4 }
    }
}

impl HybridNet {
    /// A freshly initialized network. `states` names the embedding rows and
    /// must be non-empty exactly when the config has an embedding.
    pub fn new(config: NetConfig, states: &[String], seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.sequence_dim();
        let [f1, f2] = config.conv_filters;
        let mut convs = Vec::new();
        for &k in &config.conv_kernels {
            let c1 = Conv1d::new(&mut store, &format!("conv{k}.1"), k, d, f1, Activation::Relu, &mut rng)?;
            let c2 = Conv1d::new(&mut store, &format!("conv{k}.2"), k, f1, f2, Activation::Relu, &mut rng)?;
            convs.push((c1, c2));
        }
        let bilstm = BiLstm::new(&mut store, "bilstm", d, config.bilstm_width, &mut rng)?;
        let attention = MultiHeadAttention::new(&mut store, "attention", config.bilstm_width, config.attention_heads, &mut rng)?;
        let head = Lstm::new(&mut store, "head_lstm", config.bilstm_width, config.head_lstm, &mut rng)?;
        let [u1, u2] = config.fusion_units;
        let fuse1 = Dense::new(&mut store, "fusion.1", config.fusion_dim(), u1, Activation::Relu, &mut rng)?;
        let fuse2 = Dense::new(&mut store, "fusion.2", u1, u2, Activation::Relu, &mut rng)?;
        let skip = Dense::new(&mut store, "fusion.skip", u1, u2, Activation::Linear, &mut rng)?;
        let out = Dense::new(&mut store, "output", u2, 1, Activation::Linear, &mut rng)?;
        let embedding = match config.embedding_dim {
            Some(de) => {
                if states.is_empty() {
                    return Err(Error::invalid("an embedding network needs at least one state"));
                }
                let n = states.len() * de;
                let data = (0..n).map(|_| rng.gen_range(-0.05..0.05)).collect();
                Some(store.add("state_embedding", Tensor::new(vec![states.len(), de], data)?)?)
            }
            None => None,
        };
        let mut unique = states.to_vec();
        unique.sort();
        unique.dedup();
        if unique.len() != states.len() {
            return Err(Error::invalid("duplicate state ids"));
        }
        let layout = Layout { convs, bilstm, attention, head, fuse1, fuse2, skip, out, embedding };
        Ok(Self { config, layout, store, states: states.to_vec() })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn has_embedding(&self) -> bool {
        self.layout.embedding.is_some()
    }

    pub fn embedding(&self) -> Option<&Tensor> {
        self.layout.embedding.map(|id| self.store.get(id))
    }

    pub fn state_index(&self, state: &str) -> Result<usize> {
        self.states.iter().position(|s| s == state).ok_or_else(|| Error::UnknownState(state.to_string()))
    }

    /// Appends an embedding row for `state`, initialized to the mean of the
    /// existing rows. Returns its index; a known state keeps its row.
    pub fn add_state(&mut self, state: &str) -> Result<usize> {
        if let Ok(i) = self.state_index(state) {
            return Ok(i);
        }
        let id = self.layout.embedding.ok_or_else(|| Error::invalid("network has no state embedding"))?;
        let old = self.store.get(id);
        let (s, de) = (old.shape()[0], old.shape()[1]);
        let mut data = old.data().to_vec();
        for j in 0..de {
            data.push((0..s).map(|r| old.data()[r * de + j]).sum::<f64>() / s as f64);
        }
        self.store.resize(id, Tensor::new(vec![s + 1, de], data)?)?;
        self.states.push(state.to_string());
        Ok(s)
    }

    pub fn group_params(&self, group: ParamGroup) -> Vec<ParamId> {
        let l = &self.layout;
        match group {
            ParamGroup::Conv => l.convs.iter().flat_map(|(a, b)| a.params().into_iter().chain(b.params())).collect(),
            ParamGroup::Bilstm => l.bilstm.params(),
            ParamGroup::Attention => l.attention.params(),
            ParamGroup::HeadLstm => l.head.params(),
            ParamGroup::Fusion => [&l.fuse1, &l.fuse2, &l.skip, &l.out].iter().flat_map(|d| d.params()).collect(),
            ParamGroup::Embedding => l.embedding.into_iter().collect(),
        }
    }

    pub fn group_sizes(&self) -> BTreeMap<ParamGroup, usize> {
        use ParamGroup::*;
        [Conv, Bilstm, Attention, HeadLstm, Fusion, Embedding]
            .into_iter()
            .map(|g| (g, self.group_params(g).iter().map(|id| self.store.get(*id).len()).sum()))
            .collect()
    }

    /// Trainable mask per parameter. The embedding is never frozen.
    pub fn trainable_mask(&self, plan: &FreezePlan) -> Result<Vec<bool>> {
        let mut mask = vec![true; self.store.len()];
        for &g in &plan.frozen {
            if g == ParamGroup::Embedding {
                continue;
            }
            for id in self.group_params(g) {
                mask[id.index()] = false;
            }
        }
        if !mask.iter().any(|m| *m) {
            return Err(Error::invalid("freeze plan leaves no trainable parameters"));
        }
        Ok(mask)
    }

    fn state_rows(&self, batch: usize, states: Option<&[usize]>) -> Result<Option<Vec<usize>>> {
        match (self.layout.embedding, states) {
            (None, _) => Ok(None),
            (Some(_), None) => Err(Error::invalid("embedding network needs a state per window")),
            (Some(_), Some(s)) => {
                if s.len() != batch {
                    return Err(Error::shape(format!("{} state ids for a batch of {batch}", s.len())));
                }
                if let Some(bad) = s.iter().find(|&&i| i >= self.states.len()) {
                    return Err(Error::UnknownState(format!("embedding row {bad}")));
                }
                Ok(Some(s.to_vec()))
            }
        }
    }

    /// Records the forward pass for a `[B, window, input_dim]` batch and
    /// returns the `[B, 1]` output. Dropout is active iff `rng` is given.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_>,
        x: Var,
        states: Option<&[usize]>,
        mut rng: Option<&mut R>,
    ) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let c = &self.config;
        if shape.len() != 3 || shape[1] != c.window || shape[2] != c.input_dim {
            return Err(Error::shape(format!(
                "network expects [B, {}, {}], got {shape:?}",
                c.window, c.input_dim
            )));
        }
        let b = shape[0];
        let l = &self.layout;
        let rows = self.state_rows(b, states)?;
        let (seq, emb) = match (l.embedding, rows) {
            (Some(id), Some(rows)) => {
                let table = g.param(id);
                let e = g.gather(table, &rows)?;
                let rep = g.repeat_time(e, c.window)?;
                (g.concat_last(&[x, rep])?, Some(e))
            }
            _ => (x, None),
        };

        let mut flat = Vec::with_capacity(l.convs.len());
        for (c1, c2) in &l.convs {
            let u = c1.forward(g, seq)?;
            let u = c2.forward(g, u)?;
            let s = g.shape(u).to_vec();
            flat.push(g.reshape(u, &[b, s[1] * s[2]])?);
        }
        let h_cnn = g.concat_last(&flat)?;
        let h_cnn = dropout(g, h_cnn, c.dropout_dense, rng.as_deref_mut())?;

        let s = l.bilstm.apply(g, seq)?;
        let a = l.attention.forward(g, s)?;
        let s2 = g.add(s, a)?;
        let h_rnn = l.head.last(g, s2)?;
        let h_rnn = dropout(g, h_rnn, c.dropout_lstm, rng.as_deref_mut())?;

        let mut parts = vec![h_cnn, h_rnn];
        parts.extend(emb);
        let z = g.concat_last(&parts)?;
        let d1 = l.fuse1.forward(g, z)?;
        let d1 = dropout(g, d1, c.dropout_dense, rng.as_deref_mut())?;
        let d2 = l.fuse2.forward(g, d1)?;
        let proj = l.skip.forward(g, d1)?;
        let d2 = g.add(d2, proj)?;
        let d2 = dropout(g, d2, c.dropout_dense, rng.as_deref_mut())?;
        l.out.forward(g, d2)
    }

    /// Deterministic predictions with dropout disabled.
    pub fn predict(&self, x: &Tensor, states: Option<&[usize]>) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let xv = g.constant(x.clone());
        let y = self.forward::<ChaCha8Rng>(&mut g, xv, states, None)?;
        let out = g.value(y).data().to_vec();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("network produced a non-finite output".into()));
        }
        Ok(out)
    }

    /// One stochastic pass per batch row with fresh dropout masks.
    pub fn predict_stochastic<R: Rng + ?Sized>(&self, x: &Tensor, states: Option<&[usize]>, rng: &mut R) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, xv, states, Some(rng))?;
        let out = g.value(y).data().to_vec();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("network produced a non-finite output".into()));
        }
        Ok(out)
    }

    /// Mean squared error of a batch and its parameter gradients.
    pub fn loss_and_grads<R: Rng + ?Sized>(
        &self,
        x: &Tensor,
        y: &[f64],
        states: Option<&[usize]>,
        rng: Option<&mut R>,
    ) -> Result<(f64, Vec<Option<Tensor>>)> {
        let mut g = Graph::new(&self.store);
        let xv = g.constant(x.clone());
        let pred = self.forward(&mut g, xv, states, rng)?;
        let loss = g.mse(pred, Tensor::new(vec![y.len()], y.to_vec())?)?;
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Numeric(format!("training loss is {value}")));
        }
        Ok((value, g.backward(loss)?.into_params()))
    }

    /// Finite-difference check of the batch loss gradient over every
    /// parameter tensor (at most `max_coords` entries each). Dropout masks,
    /// if any, are regenerated from `dropout_seed` on every evaluation.
    pub fn gradient_check<R: Rng + ?Sized>(
        &mut self,
        x: &Tensor,
        y: &[f64],
        states: Option<&[usize]>,
        dropout_seed: Option<u64>,
        max_coords: usize,
        rng: &mut R,
    ) -> Result<GradCheckReport> {
        let mut store = std::mem::take(&mut self.store);
        let ids: Vec<ParamId> = store.ids().collect();
        let this = &*self;
        let result = check_gradients(&mut store, &ids, max_coords, 1e-5, rng, |g| {
            let xv = g.constant(x.clone());
            let mut drop = dropout_seed.map(ChaCha8Rng::seed_from_u64);
            let p = this.forward(g, xv, states, drop.as_mut())?;
            g.mse(p, Tensor::new(vec![y.len()], y.to_vec())?)
        });
        self.store = store;
        result
    }

    /// Copies tensors from `store` by name, checking names and shapes match.
    pub fn load_params(&mut self, store: &ParamStore) -> Result<()> {
        if store.len() != self.store.len() {
            return Err(Error::invalid(format!(
                "checkpoint has {} tensors, network has {}",
                store.len(),
                self.store.len()
            )));
        }
        for (id, name, t) in store.iter() {
            if self.store.name(id) != name {
                return Err(Error::invalid(format!("checkpoint tensor `{name}` where `{}` expected", self.store.name(id))));
            }
            self.store.set(id, t.clone())?;
        }
        Ok(())
    }

    /// Rebuilds a network from its config, state list and saved tensors.
    pub fn from_parts(config: NetConfig, states: &[String], store: &ParamStore) -> Result<Self> {
        let mut net = Self::new(config, states, 0)?;
        net.load_params(store)?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests;
