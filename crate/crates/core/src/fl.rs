//! Desk-scale federated learning on synthetic data.
//!
//! Clients hold two-feature Gaussian blobs with skewed label mixes and train
//! a shared logistic regression by mini-batch SGD. Edge servers average
//! their participants' models weighted by loss-based importance; the cloud
//! averages edge models weighted by how many samples each server's
//! participants contributed. The task is deliberately small: its role is to
//! exercise the aggregation math next to the scheduling simulation, not to
//! reproduce full-scale training.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;

/// Flat model parameters: one weight per feature plus a trailing bias.
pub type ModelVec = Vec<f64>;

/// One client's private samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalDataset {
    pub owner: usize,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl LocalDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn score(w: &[f64], x: &[f64]) -> f64 {
    debug_assert_eq!(w.len(), x.len() + 1);
    let mut z = w[x.len()];
    for (wi, xi) in w.iter().zip(x) {
        z += wi * xi;
    }
    z
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logistic loss of one sample, computed in a form stable for large scores.
pub fn sample_loss(w: &[f64], x: &[f64], y: u8) -> f64 {
    let z = score(w, x);
    let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
    softplus - y as f64 * z
}

/// Mini-batch SGD from `start`, sampling each batch without replacement.
pub fn local_sgd(
    start: &ModelVec,
    data: &LocalDataset,
    eta: f64,
    batch: usize,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> ModelVec {
    assert!(!data.is_empty(), "client dataset is empty");
    let mut w = start.clone();
    if eta == 0.0 || steps == 0 {
        return w;
    }
    let m = batch.min(data.len());
    let dim = w.len();
    for _ in 0..steps {
        let mut grad = vec![0.0; dim];
        for idx in rand::seq::index::sample(rng, data.len(), m) {
            let x = &data.features[idx];
            let err = sigmoid(score(&w, x)) - data.labels[idx] as f64;
            for (g, xi) in grad.iter_mut().zip(x) {
                *g += err * xi;
            }
            grad[dim - 1] += err;
        }
        for (wi, g) in w.iter_mut().zip(&grad) {
            *wi -= eta * g / m as f64;
        }
    }
    w
}

/// Loss-magnitude weight of one client's update: dataset size times the root
/// mean of squared per-sample losses.
pub fn importance_weight(w: &ModelVec, data: &LocalDataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let mean_sq = data
        .features
        .iter()
        .zip(&data.labels)
        .map(|(x, &y)| sample_loss(w, x, y).powi(2))
        .sum::<f64>()
        / data.len() as f64;
    data.len() as f64 * mean_sq.sqrt()
}

fn weighted_average(models: &[ModelVec], weights: &[f64]) -> ModelVec {
    assert_eq!(models.len(), weights.len());
    assert!(!models.is_empty());
    let dim = models[0].len();
    let total: f64 = weights.iter().sum();
    let mut out = vec![0.0; dim];
    for (model, &weight) in models.iter().zip(weights) {
        assert_eq!(model.len(), dim);
        for (o, &v) in out.iter_mut().zip(model) {
            *o += weight * v;
        }
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    out
}

/// Importance-weighted average of participant models. All-zero weights fall
/// back to an unweighted mean.
pub fn edge_aggregate(models: &[ModelVec], weights: &[f64]) -> ModelVec {
    assert!(weights.iter().all(|&u| u >= 0.0), "negative weight");
    if weights.iter().sum::<f64>() <= 0.0 {
        log::warn!("all importance weights zero; falling back to unweighted mean");
        return weighted_average(models, &vec![1.0; models.len()]);
    }
    weighted_average(models, weights)
}

/// Sample-count-weighted average of edge models; servers that contributed no
/// samples are excluded.
pub fn cloud_aggregate(models: &[ModelVec], sample_counts: &[f64]) -> ModelVec {
    assert!(sample_counts.iter().all(|&c| c >= 0.0), "negative count");
    if sample_counts.iter().sum::<f64>() <= 0.0 {
        log::warn!("no participating samples this cloud round; keeping unweighted mean");
        return weighted_average(models, &vec![1.0; models.len()]);
    }
    weighted_average(models, sample_counts)
}

/// Size-weighted mean loss over all clients' data.
pub fn global_loss(w: &ModelVec, datasets: &[LocalDataset]) -> f64 {
    let total: usize = datasets.iter().map(|d| d.len()).sum();
    let sum: f64 = datasets
        .iter()
        .flat_map(|d| d.features.iter().zip(&d.labels))
        .map(|(x, &y)| sample_loss(w, x, y))
        .sum();
    sum / total as f64
}

/// Fraction of all samples classified correctly at threshold 1/2.
pub fn accuracy(w: &ModelVec, datasets: &[LocalDataset]) -> f64 {
    let total: usize = datasets.iter().map(|d| d.len()).sum();
    let correct: usize = datasets
        .iter()
        .flat_map(|d| d.features.iter().zip(&d.labels))
        .filter(|(x, &y)| (score(w, x) > 0.0) == (y == 1))
        .count();
    correct as f64 / total as f64
}

/// Two Gaussian blobs around (-2, 0) and (2, 0) with standard deviation 1/2,
/// split across clients with alternating label skew (30% / 70% positives).
pub fn make_datasets(
    n_clients: usize,
    samples_per_client: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<LocalDataset> {
    let noise = Normal::new(0.0, 0.5).expect("valid std");
    (0..n_clients)
        .map(|owner| {
            let positive_frac = if owner % 2 == 0 { 0.3 } else { 0.7 };
            let n_pos = (positive_frac * samples_per_client as f64).round() as usize;
            let mut features = Vec::with_capacity(samples_per_client);
            let mut labels = Vec::with_capacity(samples_per_client);
            for i in 0..samples_per_client {
                let label = u8::from(i < n_pos);
                let center = if label == 1 { 2.0 } else { -2.0 };
                features.push(vec![center + noise.sample(rng), noise.sample(rng)]);
                labels.push(label);
            }
            LocalDataset {
                owner,
                features,
                labels,
            }
        })
        .collect()
}

/// Running state of one hierarchical training task.
#[derive(Debug, Clone)]
pub struct FlState {
    pub datasets: Vec<LocalDataset>,
    pub edge_models: Vec<ModelVec>,
    pub global_model: ModelVec,
    /// Samples contributed per server since the last cloud aggregation.
    counts: Vec<f64>,
}

impl FlState {
    pub fn new(cfg: &SystemConfig, rng: &mut ChaCha8Rng) -> FlState {
        let datasets = make_datasets(cfg.clients, cfg.fl_samples_per_client, rng);
        let dim = 3;
        FlState {
            datasets,
            edge_models: vec![vec![0.0; dim]; cfg.edge_servers],
            global_model: vec![0.0; dim],
            counts: vec![0.0; cfg.edge_servers],
        }
    }

    /// Starts a fresh training task on the same datasets: all models return
    /// to zero and pending sample counts clear.
    pub fn reset(&mut self) {
        for m in self.edge_models.iter_mut() {
            m.iter_mut().for_each(|v| *v = 0.0);
        }
        self.global_model.iter_mut().for_each(|v| *v = 0.0);
        self.counts.iter_mut().for_each(|c| *c = 0.0);
    }

    /// One edge round: every participant trains from its server's current
    /// model; each server with participants aggregates by importance weight,
    /// computed against the pre-training edge model.
    pub fn edge_round(
        &mut self,
        assignment: &[Option<usize>],
        cfg: &SystemConfig,
        rng: &mut ChaCha8Rng,
    ) {
        for k in 0..self.edge_models.len() {
            let members: Vec<usize> = (0..assignment.len())
                .filter(|&n| assignment[n] == Some(k))
                .collect();
            if members.is_empty() {
                continue;
            }
            let base = self.edge_models[k].clone();
            let mut models = Vec::with_capacity(members.len());
            let mut weights = Vec::with_capacity(members.len());
            for &n in &members {
                let data = &self.datasets[n];
                weights.push(importance_weight(&base, data));
                models.push(local_sgd(
                    &base,
                    data,
                    cfg.fl_learning_rate,
                    cfg.batch_size,
                    cfg.local_iters,
                    rng,
                ));
                self.counts[k] += data.len() as f64;
            }
            self.edge_models[k] = edge_aggregate(&models, &weights);
        }
    }

    /// Cloud aggregation: merge edge models, reset them to the new global
    /// model, and report (global loss, accuracy).
    pub fn cloud_round(&mut self) -> (f64, f64) {
        self.global_model = cloud_aggregate(&self.edge_models, &self.counts);
        for m in self.edge_models.iter_mut() {
            *m = self.global_model.clone();
        }
        self.counts.iter_mut().for_each(|c| *c = 0.0);
        (
            global_loss(&self.global_model, &self.datasets),
            accuracy(&self.global_model, &self.datasets),
        )
    }
}
