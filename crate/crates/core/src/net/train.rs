use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HybridNet;
use crate::autodiff::{clip_global_norm, Adam, CosineSchedule, Tensor};
use crate::error::{Error, Result};
use crate::features::FeatureWindow;

/// Stacked training windows with their scaled targets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowSet {
    pub window: usize,
    pub dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    states: Vec<Option<usize>>,
    /// Window end index per sample, for inspection.
    pub ends: Vec<usize>,
}

impl WindowSet {
    pub fn new(window: usize, dim: usize) -> Self {
        Self { window, dim, ..Default::default() }
    }

    pub fn push(&mut self, w: &FeatureWindow, target: f64, state: Option<usize>) -> Result<()> {
        if w.rows != self.window || w.dim != self.dim {
            return Err(Error::shape(format!(
                "window is {}x{}, set holds {}x{}",
                w.rows, w.dim, self.window, self.dim
            )));
        }
        self.x.extend_from_slice(&w.values);
        self.y.push(target);
        self.states.push(state);
        self.ends.push(w.end_index);
        Ok(())
    }

    pub fn extend(&mut self, other: &WindowSet) -> Result<()> {
        if other.window != self.window || other.dim != self.dim {
            return Err(Error::shape("cannot merge window sets of different shapes"));
        }
        self.x.extend_from_slice(&other.x);
        self.y.extend_from_slice(&other.y);
        self.states.extend_from_slice(&other.states);
        self.ends.extend_from_slice(&other.ends);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    pub fn subset(&self, idx: &[usize]) -> WindowSet {
        let stride = self.window * self.dim;
        let mut out = WindowSet::new(self.window, self.dim);
        for &i in idx {
            out.x.extend_from_slice(&self.x[i * stride..(i + 1) * stride]);
            out.y.push(self.y[i]);
            out.states.push(self.states[i]);
            out.ends.push(self.ends[i]);
        }
        out
    }

    /// Inputs, targets and embedding rows for the given samples.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<f64>, Option<Vec<usize>>)> {
        let stride = self.window * self.dim;
        let mut x = Vec::with_capacity(idx.len() * stride);
        for &i in idx {
            x.extend_from_slice(&self.x[i * stride..(i + 1) * stride]);
        }
        let y = idx.iter().map(|&i| self.y[i]).collect();
        let states: Option<Vec<usize>> = idx.iter().map(|&i| self.states[i]).collect();
        let all_none = idx.iter().all(|&i| self.states[i].is_none());
        if states.is_none() && !all_none {
            return Err(Error::invalid("batch mixes windows with and without a state"));
        }
        Ok((Tensor::new(vec![idx.len(), self.window, self.dim], x)?, y, states))
    }

    /// Dropout-free predictions for every sample.
    pub fn predict(&self, net: &HybridNet) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len());
        let idx: Vec<usize> = (0..self.len()).collect();
        for chunk in idx.chunks(64) {
            let (x, _, s) = self.batch(chunk)?;
            out.extend(net.predict(&x, s.as_deref())?);
        }
        Ok(out)
    }

    pub fn mse(&self, net: &HybridNet) -> Result<f64> {
        let p = self.predict(net)?;
        Ok(p.iter().zip(&self.y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / self.len().max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Cosine floor as a fraction of the base rate.
    pub lr_floor_frac: f64,
    pub clip_norm: f64,
    pub patience: usize,
    /// Evaluate dropout-free training MSE after every epoch.
    pub track_train_mse: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            batch_size: 16,
            learning_rate: 6e-4,
            lr_floor_frac: 0.01,
            clip_norm: 1.0,
            patience: 10,
            track_train_mse: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean minibatch loss per epoch (dropout active).
    pub batch_loss: Vec<f64>,
    /// Dropout-free training MSE per epoch, when tracked.
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    /// Epoch (0-based) whose weights were kept.
    pub best_epoch: Option<usize>,
    pub early_stopped: bool,
}

/// Minibatch Adam with cosine-annealed rate, global-norm clipping and early
/// stopping on `val` (best weights restored). Only parameters flagged in
/// `trainable` are updated.
pub fn fit(
    net: &mut HybridNet,
    train: &WindowSet,
    val: Option<&WindowSet>,
    cfg: &TrainConfig,
    trainable: Option<&[bool]>,
) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::invalid("no training windows"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let all = vec![true; net.params().len()];
    let mask = trainable.unwrap_or(&all).to_vec();
    if mask.len() != net.params().len() {
        return Err(Error::shape("trainable mask does not match the network"));
    }
    let schedule = CosineSchedule { base: cfg.learning_rate, floor_frac: cfg.lr_floor_frac, horizon: cfg.max_epochs };
    let mut adam = Adam::new(net.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport::default();
    let mut best: Option<(f64, crate::autodiff::ParamStore)> = None;
    let mut since_best = 0;
    let val = val.filter(|v| !v.is_empty());

    for epoch in 0..cfg.max_epochs {
        let lr = schedule.lr(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y, s) = train.batch(chunk)?;
            let (loss, mut grads) = net.loss_and_grads(&x, &y, s.as_deref(), Some(&mut rng))?;
            clip_global_norm(&mut grads, cfg.clip_norm)?;
            adam.update(net.params_mut(), &grads, &mask, lr)?;
            total += loss * chunk.len() as f64;
        }
        report.batch_loss.push(total / train.len() as f64);
        if cfg.track_train_mse {
            report.train_mse.push(train.mse(net)?);
        }
        if let Some(v) = val {
            let m = v.mse(net)?;
            report.val_mse.push(m);
            if best.as_ref().is_none_or(|(b, _)| m < *b) {
                best = Some((m, net.params().clone()));
                report.best_epoch = Some(epoch);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    report.early_stopped = true;
                    break;
                }
            }
        }
    }
    if let Some((_, store)) = best {
        net.load_params(&store)?;
    } else if cfg.max_epochs > 0 {
        report.best_epoch = Some(report.batch_loss.len() - 1);
    }
    Ok(report)
}
