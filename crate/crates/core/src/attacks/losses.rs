use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::AttackConfig;
use crate::error::{Error, Result};
use crate::geometry::TransformParams;
use crate::models::{Autoencoder, Logits, PointClassifier};
use crate::neighbors::knn_with_sq_dists;
use crate::spectral::SpectralBasis;

/// Ground-truth class and, for targeted attacks, the class to reach.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Goal {
    pub label: usize,
    pub target: Option<usize>,
}

impl Goal {
    pub fn untargeted(label: usize) -> Self {
        Self {
            label,
            target: None,
        }
    }

    pub fn targeted(label: usize, target: usize) -> Self {
        Self {
            label,
            target: Some(target),
        }
    }

    /// Untargeted: any class but the label wins. Targeted: the target wins.
    pub fn reached(&self, logits: &Logits) -> bool {
        let pred = logits.argmax();
        match self.target {
            Some(t) => pred == t,
            None => pred != self.label,
        }
    }
}

/// A loss value, its named terms and its gradient with respect to `X'`.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub total: f64,
    pub terms: Vec<(&'static str, f64)>,
    pub grad: Array2<f64>,
    /// Logits of the untransformed `X'` when the loss evaluated them anyway.
    pub plain_logits: Option<Logits>,
}

fn best_other(z: &Array1<f64>, excluded: usize) -> usize {
    let mut best = usize::MAX;
    for (i, v) in z.iter().enumerate() {
        if i != excluded && (best == usize::MAX || *v > z[best]) {
            best = i;
        }
    }
    best
}

/// CW margin. Untargeted: `max(Z_gt - max_{y != gt} Z_y + kappa, 0)`;
/// targeted: `max(max_{y != t} Z_y - Z_t + kappa, 0)`.
pub fn margin_loss(
    logits: &Logits,
    y_gt: usize,
    kappa: f64,
    targeted: bool,
    y_target: Option<usize>,
) -> Result<f64> {
    margin_loss_grad(logits, y_gt, kappa, targeted, y_target).map(|(v, _)| v)
}

/// Margin value and a subgradient with respect to the logits. Ties in the
/// inner max resolve to the lowest index; at the clamp the zero subgradient
/// is returned.
pub fn margin_loss_grad(
    logits: &Logits,
    y_gt: usize,
    kappa: f64,
    targeted: bool,
    y_target: Option<usize>,
) -> Result<(f64, Array1<f64>)> {
    let z = &logits.0;
    let c = z.len();
    if c < 2 {
        return Err(Error::Shape(format!(
            "margin loss needs at least 2 classes, got {c}"
        )));
    }
    if y_gt >= c {
        return Err(Error::Config(format!(
            "label {y_gt} out of range for {c} classes"
        )));
    }
    let mut grad = Array1::zeros(c);
    let value = if targeted {
        let t = y_target.ok_or_else(|| Error::Config("targeted attack without target".into()))?;
        if t >= c || t == y_gt {
            return Err(Error::Config(format!(
                "target {t} must be a class other than the label {y_gt}"
            )));
        }
        let other = best_other(z, t);
        let v = z[other] - z[t] + kappa;
        if v > 0.0 {
            grad[other] += 1.0;
            grad[t] -= 1.0;
        }
        v
    } else {
        let other = best_other(z, y_gt);
        let v = z[y_gt] - z[other] + kappa;
        if v > 0.0 {
            grad[y_gt] += 1.0;
            grad[other] -= 1.0;
        }
        v
    };
    // `f64::max` would swallow a NaN margin.
    Ok((
        if value.is_nan() {
            value
        } else {
            value.max(0.0)
        },
        grad,
    ))
}

/// Mean squared distance from every point to its `k` nearest neighbours.
pub fn knn_distances(points: ArrayView2<f64>, k: usize) -> Result<Array1<f64>> {
    Ok(knn_with_distances(points, k)?.1)
}

fn knn_with_distances(points: ArrayView2<f64>, k: usize) -> Result<(Array2<usize>, Array1<f64>)> {
    let n = points.nrows();
    if n <= k {
        return Err(Error::TooFewPoints { k, n });
    }
    let (nn, sq) = knn_with_sq_dists(points, k, false)?;
    let d = sq.map_axis(Axis(1), |row| row.iter().sum::<f64>() / k as f64);
    Ok((nn, d))
}

/// kNN smoothness penalty `(1/N) sum_p w_p d_p` where `w_p = 1` iff `d_p`
/// exceeds `mean(d) + alpha * std(d)`. Returns the value, its gradient (with
/// the weights and neighbour sets held fixed) and the weights.
pub fn knn_smoothness(
    points: ArrayView2<f64>,
    k: usize,
    alpha: f64,
) -> Result<(f64, Array2<f64>, Vec<bool>)> {
    let (nn, d) = knn_with_distances(points, k)?;
    let n = points.nrows();
    let mean = d.sum() / n as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let threshold = mean + alpha * var.sqrt();
    let weights: Vec<bool> = d.iter().map(|&v| v > threshold).collect();

    let mut value = 0.0;
    let mut grad = Array2::zeros(points.raw_dim());
    let scale = 2.0 / (k as f64 * n as f64);
    for p in (0..n).filter(|&p| weights[p]) {
        value += d[p];
        for &q in nn.row(p) {
            for c in 0..3 {
                let diff = scale * (points[[p, c]] - points[[q, c]]);
                grad[[p, c]] += diff;
                grad[[q, c]] -= diff;
            }
        }
    }
    Ok((value / n as f64, grad, weights))
}

/// Margin of `model(transform(points))` and its gradient with respect to the
/// untransformed points.
fn margin_term(
    model: &dyn PointClassifier,
    points: ArrayView2<f64>,
    transform: &TransformParams,
    goal: Goal,
    cfg: &AttackConfig,
) -> Result<(f64, Array2<f64>, Logits)> {
    let moved = transform.apply(points);
    let mut value = 0.0;
    let mut failure = None;
    let (logits, grad) = model.vjp(moved.view(), &mut |logits| match margin_loss_grad(
        logits,
        goal.label,
        cfg.kappa,
        cfg.targeted,
        goal.target,
    ) {
        Ok((v, g)) => {
            value = v;
            g
        }
        Err(e) => {
            failure = Some(e);
            Array1::zeros(logits.len())
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((value, transform.pullback(grad.view()), logits))
}

fn plain(transform: &TransformParams, logits: Logits) -> Option<Logits> {
    transform.is_identity().then_some(logits)
}

/// `c * margin(T(X')) + |X' - X|^2`.
#[allow(clippy::too_many_arguments)]
pub fn loss_3d_adv(
    x_adv: ArrayView2<f64>,
    x: ArrayView2<f64>,
    model: &dyn PointClassifier,
    goal: Goal,
    cfg: &AttackConfig,
    transform: &TransformParams,
    c: f64,
) -> Result<LossValue> {
    if x_adv.shape() != x.shape() {
        return Err(Error::Shape(
            "adversarial and clean clouds differ in shape".into(),
        ));
    }
    let (adv, gadv, logits) = margin_term(model, x_adv, transform, goal, cfg)?;
    let delta = &x_adv - &x;
    let dist = delta.iter().map(|v| v * v).sum::<f64>();
    let grad = gadv * c + delta * 2.0;
    Ok(LossValue {
        total: c * adv + dist,
        terms: vec![("adv", adv), ("dist", dist)],
        grad,
        plain_logits: plain(transform, logits),
    })
}

/// `c * margin(Y) + knn_smoothness(Y)` with `Y = T(X')`.
pub fn loss_knn(
    x_adv: ArrayView2<f64>,
    model: &dyn PointClassifier,
    goal: Goal,
    cfg: &AttackConfig,
    transform: &TransformParams,
    c: f64,
) -> Result<LossValue> {
    let moved = transform.apply(x_adv);
    let (smooth, gsmooth, _) = knn_smoothness(moved.view(), cfg.knn_k, cfg.knn_threshold_alpha)?;
    let (adv, gadv, logits) =
        margin_term(model, moved.view(), &TransformParams::IDENTITY, goal, cfg)?;
    let grad_moved = gadv * c + gsmooth;
    Ok(LossValue {
        total: c * adv + smooth,
        terms: vec![("adv", adv), ("knn", smooth)],
        grad: transform.pullback(grad_moved.view()),
        plain_logits: plain(transform, logits),
    })
}

/// `c * ((1 - gamma) * margin(T(X')) + gamma * margin(AE(X')))`.
pub fn loss_advpc(
    x_adv: ArrayView2<f64>,
    model: &dyn PointClassifier,
    ae: &Autoencoder,
    goal: Goal,
    cfg: &AttackConfig,
    transform: &TransformParams,
    c: f64,
) -> Result<LossValue> {
    let (direct, gdirect, logits) = margin_term(model, x_adv, transform, goal, cfg)?;
    let mut encoder = 0.0;
    let (_, genc) = ae.vjp(x_adv, &mut |recon| {
        let (v, g, _) = margin_term(model, recon.view(), &TransformParams::IDENTITY, goal, cfg)?;
        encoder = v;
        Ok(g)
    })?;
    let g = cfg.gamma;
    Ok(LossValue {
        total: c * ((1.0 - g) * direct + g * encoder),
        terms: vec![("direct", direct), ("encoder", encoder)],
        grad: gdirect * (c * (1.0 - g)) + genc * (c * g),
        plain_logits: plain(transform, logits),
    })
}

/// `c * ((1 - gamma) * margin(T(X')) + gamma * margin(X'_lfc))`, the
/// low-frequency part taken in a basis fixed from the clean cloud.
pub fn loss_aof(
    x_adv: ArrayView2<f64>,
    model: &dyn PointClassifier,
    basis: &SpectralBasis,
    goal: Goal,
    cfg: &AttackConfig,
    transform: &TransformParams,
    c: f64,
) -> Result<LossValue> {
    let k = cfg.retained_frequencies(x_adv.nrows());
    let lfc = basis.project(x_adv, k)?;
    let (direct, gdirect, logits) = margin_term(model, x_adv, transform, goal, cfg)?;
    let (low, glfc, _) = margin_term(model, lfc.view(), &TransformParams::IDENTITY, goal, cfg)?;
    // The projector is symmetric, so it is its own adjoint.
    let glow = basis.project(glfc.view(), k)?;
    let g = cfg.gamma;
    Ok(LossValue {
        total: c * ((1.0 - g) * direct + g * low),
        terms: vec![("direct", direct), ("lfc", low)],
        grad: gdirect * (c * (1.0 - g)) + glow * (c * g),
        plain_logits: plain(transform, logits),
    })
}
