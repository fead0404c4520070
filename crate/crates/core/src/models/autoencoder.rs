use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chamfer::chamfer_with_grad;
use super::layers::{
    max_pool, max_pool_backward, relu_backward, relu_inplace, round_to_f32, Dense,
};
use crate::error::{Error, Result};
use crate::geometry::{check_points, PointCloud};
use crate::optim::Adam;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderSpec {
    pub latent_dim: usize,
    /// Number of points the decoder emits; inputs must have the same count.
    pub decoder_points: usize,
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
}

impl AutoencoderSpec {
    pub fn new(decoder_points: usize) -> Self {
        Self {
            latent_dim: 128,
            decoder_points,
            encoder_widths: vec![64, 128],
            decoder_widths: vec![256, 256],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.decoder_points == 0 {
            return Err(Error::Config(
                "latent_dim and decoder_points must be positive".into(),
            ));
        }
        if self.encoder_widths.contains(&0) || self.decoder_widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Pointwise encoder with max pooling into a latent code, and an MLP decoder
/// emitting `decoder_points x 3` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub spec: AutoencoderSpec,
    pub(crate) encoder: Vec<Dense>,
    pub(crate) decoder: Vec<Dense>,
}

pub(crate) struct AeCache {
    enc_inputs: Vec<Array2<f64>>,
    enc_pre: Vec<Array2<f64>>,
    pool_arg: Vec<usize>,
    dec_inputs: Vec<Array1<f64>>,
    dec_pre: Vec<Array1<f64>>,
}

impl Autoencoder {
    pub fn new<R: Rng + ?Sized>(spec: AutoencoderSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut inputs = 3;
        let mut encoder = Vec::new();
        for &w in spec
            .encoder_widths
            .iter()
            .chain(std::iter::once(&spec.latent_dim))
        {
            encoder.push(Dense::new(inputs, w, rng));
            inputs = w;
        }
        let mut decoder = Vec::new();
        let out = spec.decoder_points * 3;
        for &w in spec.decoder_widths.iter().chain(std::iter::once(&out)) {
            decoder.push(Dense::new(inputs, w, rng));
            inputs = w;
        }
        Ok(Self {
            spec,
            encoder,
            decoder,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for p in z.params_mut() {
            p.fill(0.0);
        }
        z
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|d| d.params())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(|d| d.params_mut())
            .collect()
    }

    pub fn tensor_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (part, layers) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for (l, d) in layers.iter().enumerate() {
                out.push((format!("{part}.{l}.w"), d.w.shape().to_vec()));
                out.push((format!("{part}.{l}.b"), d.b.shape().to_vec()));
            }
        }
        out
    }

    pub(crate) fn forward_cached(&self, points: ArrayView2<f64>) -> Result<(Array2<f64>, AeCache)> {
        check_points(points)?;
        if points.nrows() != self.spec.decoder_points {
            return Err(Error::Shape(format!(
                "autoencoder expects {} points, got {}",
                self.spec.decoder_points,
                points.nrows()
            )));
        }
        let mut enc_inputs = Vec::new();
        let mut enc_pre = Vec::new();
        let mut h = points.to_owned();
        for d in &self.encoder {
            let z = d.forward(h.view());
            let mut a = z.clone();
            relu_inplace(&mut a);
            enc_inputs.push(std::mem::replace(&mut h, a));
            enc_pre.push(z);
        }
        let (mut v, pool_arg) = max_pool(h.view());
        let mut dec_inputs = Vec::new();
        let mut dec_pre = Vec::new();
        let last = self.decoder.len() - 1;
        for (l, d) in self.decoder.iter().enumerate() {
            let z = d.forward_vec(v.view());
            dec_inputs.push(v);
            v = z.clone();
            if l < last {
                relu_inplace(&mut v);
            }
            dec_pre.push(z);
        }
        let recon = v
            .into_shape_with_order((self.spec.decoder_points, 3))
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok((
            recon,
            AeCache {
                enc_inputs,
                enc_pre,
                pool_arg,
                dec_inputs,
                dec_pre,
            },
        ))
    }

    pub(crate) fn backward(
        &self,
        cache: &AeCache,
        drecon: ArrayView2<f64>,
        mut grads: Option<&mut Autoencoder>,
    ) -> Array2<f64> {
        let mut dv: Array1<f64> = drecon.iter().copied().collect();
        let last = self.decoder.len() - 1;
        for l in (0..self.decoder.len()).rev() {
            if l < last {
                relu_backward(&mut dv, &cache.dec_pre[l]);
            }
            let g = grads.as_deref_mut().map(|g| &mut g.decoder[l]);
            dv = self.decoder[l].backward_vec(cache.dec_inputs[l].view(), dv.view(), g);
        }
        let rows = cache.enc_inputs[0].nrows();
        let mut dh = max_pool_backward(rows, &cache.pool_arg, dv.view());
        for l in (0..self.encoder.len()).rev() {
            relu_backward(&mut dh, &cache.enc_pre[l]);
            let g = grads.as_deref_mut().map(|g| &mut g.encoder[l]);
            dh = self.encoder[l].backward(cache.enc_inputs[l].view(), dh.view(), g);
        }
        dh
    }

    pub fn forward(&self, points: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.forward_cached(points).map(|(r, _)| r)
    }

    /// Reconstruction plus `drecon(reconstruction)` pulled back to the input.
    pub fn vjp(
        &self,
        points: ArrayView2<f64>,
        drecon: &mut dyn FnMut(&Array2<f64>) -> Result<Array2<f64>>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let (recon, cache) = self.forward_cached(points)?;
        let d = drecon(&recon)?;
        let dx = self.backward(&cache, d.view(), None);
        Ok((recon, dx))
    }
}

/// The reconstruction `X'_encoder` used by the AdvPC loss.
pub fn autoencode(ae: &Autoencoder, cloud: &PointCloud) -> Result<PointCloud> {
    let recon = ae.forward(cloud.points())?;
    cloud.with_points(recon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub rng_seed: u64,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            batch_size: 16,
            rng_seed: 0,
        }
    }
}

/// Minimizes the mean chamfer distance between inputs and reconstructions.
/// Returns the mean training chamfer per epoch. Weights are rounded to
/// `f32` precision at the end.
pub fn train_autoencoder(
    ae: &mut Autoencoder,
    clouds: &[PointCloud],
    cfg: &AeTrainConfig,
) -> Result<Vec<f64>> {
    if clouds.is_empty() {
        return Err(Error::EmptySplit("autoencoder training set"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..clouds.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::derive_stream(cfg.rng_seed, &[epoch as u64]));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let model: &Autoencoder = ae;
            let results: Vec<(f64, Autoencoder)> = batch
                .par_iter()
                .map(|&i| {
                    let x = clouds[i].points();
                    let (recon, cache) = model.forward_cached(x)?;
                    let (loss, grecon, _) = chamfer_with_grad(recon.view(), x);
                    let mut g = model.zeros_like();
                    model.backward(&cache, grecon.view(), Some(&mut g));
                    Ok((loss, g))
                })
                .collect::<Result<_>>()?;
            let mut total = ae.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            for (loss, g) in &results {
                epoch_loss += loss;
                for (t, s) in total.params_mut().into_iter().zip(g.params()) {
                    for (a, b) in t.iter_mut().zip(s) {
                        *a += b * scale;
                    }
                }
            }
            let grads = total.params();
            adam.step(&mut ae.params_mut(), &grads);
        }
        history.push(epoch_loss / clouds.len() as f64);
    }
    for p in ae.params_mut() {
        round_to_f32(p);
    }
    Ok(history)
}
