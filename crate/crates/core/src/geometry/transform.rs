use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Identity,
    Scale,
    Shear,
}

/// One sampled transform. Scale factors `(a, b, c)` act per axis; shear
/// coefficients `(d, e, f, g)` fill the off-diagonal entries of
///
/// ```text
/// | 1 0 d |
/// | e 1 f |
/// | g 0 1 |
/// ```
///
/// applied to row vectors, `X_t = X M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub kind: TransformKind,
    pub scale: [f64; 3],
    pub shear: [f64; 4],
}

impl TransformParams {
    pub const IDENTITY: TransformParams = TransformParams {
        kind: TransformKind::Identity,
        scale: [1.0; 3],
        shear: [0.0; 4],
    };

    pub fn identity() -> Self {
        Self::IDENTITY
    }

    pub fn scale(a: f64, b: f64, c: f64) -> Self {
        Self {
            kind: TransformKind::Scale,
            scale: [a, b, c],
            shear: [0.0; 4],
        }
    }

    pub fn shear(d: f64, e: f64, f: f64, g: f64) -> Self {
        Self {
            kind: TransformKind::Shear,
            scale: [1.0; 3],
            shear: [d, e, f, g],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.kind == TransformKind::Identity
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale.iter().chain(&self.shear).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if let Some(&z) = self.scale.iter().find(|v| **v == 0.0) {
            return Err(Error::SingularScale(z));
        }
        Ok(())
    }

    /// The 3x3 matrix `M` with `X_t = X M`.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        match self.kind {
            TransformKind::Identity => [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            TransformKind::Scale => {
                let [a, b, c] = self.scale;
                [[a, 0.0, 0.0], [0.0, b, 0.0], [0.0, 0.0, c]]
            }
            TransformKind::Shear => {
                let [d, e, f, g] = self.shear;
                [[1.0, 0.0, d], [e, 1.0, f], [g, 0.0, 1.0]]
            }
        }
    }

    /// `X M`. The identity returns an exact copy.
    pub fn apply(&self, points: ArrayView2<f64>) -> Array2<f64> {
        if self.is_identity() {
            return points.to_owned();
        }
        right_multiply(points, &self.matrix())
    }

    /// Pulls a gradient with respect to `X M` back to `X`: `G M^T`.
    pub fn pullback(&self, grad: ArrayView2<f64>) -> Array2<f64> {
        if self.is_identity() {
            return grad.to_owned();
        }
        let m = self.matrix();
        let mut mt = [[0.0; 3]; 3];
        for (i, row) in m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                mt[j][i] = *v;
            }
        }
        right_multiply(grad, &mt)
    }
}

fn right_multiply(points: ArrayView2<f64>, m: &[[f64; 3]; 3]) -> Array2<f64> {
    let mut out = Array2::zeros(points.raw_dim());
    for (src, mut dst) in points.rows().into_iter().zip(out.rows_mut()) {
        for j in 0..3 {
            dst[j] = src[0] * m[0][j] + src[1] * m[1][j] + src[2] * m[2][j];
        }
    }
    out
}

/// Probability schedule and intensity ranges of the scale/shear operator.
///
/// A transform is applied with probability `p_a`; given that, it is a scale
/// with probability `p_s` and a shear otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformPolicy {
    pub p_a: f64,
    pub p_s: f64,
    pub scale_range: (f64, f64),
    /// Magnitude range; each coefficient also gets an independent random sign.
    pub shear_range: (f64, f64),
    pub rng_seed: u64,
}

impl Default for TransformPolicy {
    fn default() -> Self {
        Self {
            p_a: 0.7,
            p_s: 0.7,
            scale_range: (0.5, 1.5),
            shear_range: (0.0, 0.15),
            rng_seed: 0,
        }
    }
}

impl TransformPolicy {
    pub fn new(p_a: f64, p_s: f64) -> Self {
        Self {
            p_a,
            p_s,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_a", self.p_a), ("p_s", self.p_s)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name}={p} outside [0, 1]")));
            }
        }
        let (slo, shi) = self.scale_range;
        if !(slo > 0.0 && slo <= shi && shi.is_finite()) {
            return Err(Error::Config(format!(
                "scale range [{slo}, {shi}] must satisfy 0 < lo <= hi"
            )));
        }
        let (hlo, hhi) = self.shear_range;
        if !(hlo >= 0.0 && hlo <= hhi && hhi.is_finite()) {
            return Err(Error::Config(format!(
                "shear range [{hlo}, {hhi}] must satisfy 0 <= lo <= hi"
            )));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Draws one transform: scale with probability `p_a * p_s`, shear with
/// probability `p_a * (1 - p_s)`, identity otherwise.
pub fn sample_transform<R: Rng + ?Sized>(policy: &TransformPolicy, rng: &mut R) -> TransformParams {
    if rng.random::<f64>() >= policy.p_a {
        return TransformParams::identity();
    }
    if rng.random::<f64>() < policy.p_s {
        let a = uniform(rng, policy.scale_range);
        let b = uniform(rng, policy.scale_range);
        let c = uniform(rng, policy.scale_range);
        TransformParams::scale(a, b, c)
    } else {
        let mut coef = [0.0; 4];
        for v in &mut coef {
            let magnitude = uniform(rng, policy.shear_range);
            *v = if rng.random::<bool>() {
                magnitude
            } else {
                -magnitude
            };
        }
        TransformParams::shear(coef[0], coef[1], coef[2], coef[3])
    }
}

pub fn apply_transform(params: &TransformParams, cloud: &PointCloud) -> Result<PointCloud> {
    params.validate()?;
    cloud.with_points(params.apply(cloud.points()))
}

pub fn scale_transform(cloud: &PointCloud, a: f64, b: f64, c: f64) -> Result<PointCloud> {
    apply_transform(&TransformParams::scale(a, b, c), cloud)
}

pub fn shear_transform(cloud: &PointCloud, d: f64, e: f64, f: f64, g: f64) -> Result<PointCloud> {
    apply_transform(&TransformParams::shear(d, e, f, g), cloud)
}
