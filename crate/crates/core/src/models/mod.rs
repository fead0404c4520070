//! Differentiable point-cloud classifiers, the reconstruction autoencoder,
//! training and checkpoints.
//!
//! Every model exposes a vector-Jacobian product with respect to its input
//! points; attacks are built on that alone. Gradients at ReLU kinks, max-pool
//! ties and kNN-graph switches are the one-sided subgradient of the branch
//! taken in the forward pass.

mod autoencoder;
mod chamfer;
mod checkpoint;
mod classifier;
pub(crate) mod layers;
mod train;

pub use autoencoder::{autoencode, train_autoencoder, AeTrainConfig, Autoencoder, AutoencoderSpec};
pub use chamfer::{chamfer, chamfer_with_grad};
pub use checkpoint::{
    load_autoencoder, load_checkpoint, load_classifier, save_autoencoder, save_classifier,
    Checkpoint, CHECKPOINT_VERSION,
};
pub use classifier::{Architecture, Classifier, ClassifierSpec};
pub use train::{accuracy, train, TrainConfig, TrainReport};

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pre-softmax class scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logits(pub Array1<f64>);

impl Logits {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest score, first on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.0.iter().enumerate() {
            if *v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// A classifier that can pull a logit-space gradient back to its input.
pub trait PointClassifier: Send + Sync {
    fn num_classes(&self) -> usize;

    fn forward(&self, points: ArrayView2<f64>) -> Result<Logits>;

    /// Runs the model, asks `dloss` for the gradient with respect to the
    /// logits, and returns the logits together with that gradient pulled
    /// back to the `N x 3` input.
    fn vjp(
        &self,
        points: ArrayView2<f64>,
        dloss: &mut dyn FnMut(&Logits) -> Array1<f64>,
    ) -> Result<(Logits, Array2<f64>)>;
}

/// Value and input gradient of `loss(forward(points))`. `loss` returns its
/// value and its gradient with respect to the logits.
pub fn input_gradient<M, F>(
    model: &M,
    loss: F,
    points: ArrayView2<f64>,
) -> Result<(f64, Array2<f64>)>
where
    M: PointClassifier + ?Sized,
    F: Fn(&Logits) -> (f64, Array1<f64>),
{
    let mut value = f64::NAN;
    let (_, grad) = model.vjp(points, &mut |logits| {
        let (v, g) = loss(logits);
        value = v;
        g
    })?;
    Ok((value, grad))
}

/// Softmax cross-entropy of `label` and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Logits, label: usize) -> Result<(f64, Array1<f64>)> {
    if label >= logits.len() {
        return Err(Error::Config(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.0.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let exp = logits.0.mapv(|v| (v - max).exp());
    let total = exp.sum();
    let loss = total.ln() + max - logits.0[label];
    let mut grad = exp / total;
    grad[label] -= 1.0;
    Ok((loss, grad))
}
