use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::round_to_f32;
use super::{cross_entropy, Classifier, PointClassifier};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::optim::Adam;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub rng_seed: u64,
    /// Random anisotropic per-axis scaling applied to each training sample.
    pub augment_scale: Option<(f64, f64)>,
    /// Standard deviation of per-coordinate Gaussian jitter during training.
    pub jitter_sigma: f64,
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 1e-3,
            batch_size: 32,
            rng_seed: 0,
            augment_scale: Some((2.0 / 3.0, 1.5)),
            jitter_sigma: 0.01,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Clean test accuracy in percent.
    pub test_accuracy: f64,
    pub train_accuracy: f64,
    pub epoch_losses: Vec<f64>,
}

/// Percentage of clouds whose argmax prediction equals their label.
pub fn accuracy<M: PointClassifier + ?Sized>(model: &M, clouds: &[PointCloud]) -> Result<f64> {
    if clouds.is_empty() {
        return Err(Error::EmptySplit("accuracy set"));
    }
    let correct: Vec<bool> = clouds
        .par_iter()
        .map(|c| {
            let label = c
                .label
                .ok_or_else(|| Error::Config("cloud without label".into()))?;
            Ok(model.forward(c.points())?.argmax() == label)
        })
        .collect::<Result<_>>()?;
    Ok(100.0 * correct.iter().filter(|&&b| b).count() as f64 / clouds.len() as f64)
}

/// Mini-batch Adam on softmax cross-entropy. Per-sample gradients are
/// computed in parallel and summed in a fixed order, so the result depends
/// only on the seed. Weights are rounded to `f32` precision at the end so a
/// saved checkpoint reproduces the model exactly.
pub fn train(
    model: &mut Classifier,
    train_set: &[PointCloud],
    test_set: &[PointCloud],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if test_set.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let jitter = (cfg.jitter_sigma > 0.0)
        .then(|| Normal::new(0.0, cfg.jitter_sigma))
        .transpose()
        .map_err(|e| Error::Config(e.to_string()))?;

    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::derive_stream(cfg.rng_seed, &[epoch as u64]));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let current: &Classifier = model;
            let results: Vec<(f64, Classifier)> = batch
                .par_iter()
                .map(|&i| {
                    let cloud = &train_set[i];
                    let label = cloud
                        .label
                        .ok_or_else(|| Error::Config("training cloud without label".into()))?;
                    let mut r = rng::derive_stream(cfg.rng_seed, &[epoch as u64, i as u64, 1]);
                    let mut pts = cloud.points().to_owned();
                    if let Some((lo, hi)) = cfg.augment_scale {
                        let s: [f64; 3] = std::array::from_fn(|_| r.random_range(lo..=hi));
                        for mut row in pts.rows_mut() {
                            for (v, f) in row.iter_mut().zip(s) {
                                *v *= f;
                            }
                        }
                    }
                    if let Some(j) = &jitter {
                        pts.mapv_inplace(|v| v + j.sample(&mut r));
                    }
                    let (logits, cache) = current.forward_cached(pts.view())?;
                    let (loss, dlogits) = cross_entropy(&logits, label)?;
                    let mut g = current.zeros_like();
                    current.backward(&cache, &dlogits, Some(&mut g));
                    Ok((loss, g))
                })
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut total = model.zeros_like();
            for (loss, g) in &results {
                epoch_loss += loss;
                for (t, s) in total.params_mut().into_iter().zip(g.params()) {
                    for (a, b) in t.iter_mut().zip(s) {
                        *a += b * scale;
                    }
                }
            }
            let grads = total.params();
            adam.step(&mut model.params_mut(), &grads);
        }
        epoch_losses.push(epoch_loss / train_set.len() as f64);
    }
    for p in model.params_mut() {
        round_to_f32(p);
    }
    let report = TrainReport {
        test_accuracy: accuracy(model, test_set)?,
        train_accuracy: accuracy(model, train_set)?,
        epoch_losses,
    };
    if let Some(path) = &cfg.checkpoint {
        super::save_classifier(path, model)?;
    }
    Ok(report)
}
