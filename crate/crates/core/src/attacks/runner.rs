use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::losses::{loss_3d_adv, loss_advpc, loss_aof, loss_knn, Goal, LossValue};
use super::{AttackConfig, AttackKind};
use crate::error::{Error, Result};
use crate::geometry::{sample_transform, PointCloud, TransformParams};
use crate::models::{Autoencoder, PointClassifier};
use crate::optim::Adam;
use crate::rng;
use crate::spectral::SpectralBasis;

const C_INIT: f64 = 10.0;
const C_RANGE: (f64, f64) = (0.1, 100.0);

/// Auxiliary models some attacks need. `basis` is built from the clean cloud
/// when absent.
#[derive(Default, Clone, Copy)]
pub struct AttackResources<'a> {
    pub autoencoder: Option<&'a Autoencoder>,
    pub basis: Option<&'a SpectralBasis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub adversarial: PointCloud,
    pub perturbation: Array2<f64>,
    /// Whether the untransformed adversarial reaches the goal on the
    /// attacked model.
    pub success: bool,
    pub final_loss_terms: BTreeMap<String, f64>,
    pub iterations_used: usize,
    pub linf_norm: f64,
    pub l2_norm: f64,
    /// Total loss of every iteration, across all binary-search steps.
    pub loss_trace: Vec<f64>,
    pub target: Option<usize>,
    /// Adversarial weight of the returned iterate.
    pub c: f64,
}

struct Candidate {
    delta: Array2<f64>,
    loss: f64,
    terms: Vec<(&'static str, f64)>,
}

enum Aux<'a> {
    None,
    Ae(&'a Autoencoder),
    Basis(SpectralBasis),
    BasisRef(&'a SpectralBasis),
}

fn goal_for(cloud: &PointCloud, cfg: &AttackConfig, classes: usize) -> Result<Goal> {
    let label = cloud
        .label
        .ok_or_else(|| Error::Config("attacked cloud has no label".into()))?;
    if label >= classes {
        return Err(Error::Config(format!(
            "label {label} out of range for {classes} classes"
        )));
    }
    if !cfg.targeted {
        return Ok(Goal::untargeted(label));
    }
    let target = match cfg.target_class {
        Some(t) => t,
        None if classes < 2 => {
            return Err(Error::Config(
                "targeted attack needs at least 2 classes".into(),
            ))
        }
        None => {
            // Uniform over the other classes, fixed by the seed.
            let mut r = rng::derive_stream(cfg.rng_seed, &[rng::hash_tag("target")]);
            let t = r.random_range(0..classes - 1);
            if t >= label {
                t + 1
            } else {
                t
            }
        }
    };
    if target >= classes || target == label {
        return Err(Error::Config(format!(
            "target {target} must be a class other than the label {label}"
        )));
    }
    Ok(Goal::targeted(label, target))
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    kind: AttackKind,
    x_adv: ArrayView2<f64>,
    x: ArrayView2<f64>,
    model: &dyn PointClassifier,
    aux: &Aux,
    goal: Goal,
    cfg: &AttackConfig,
    transform: &TransformParams,
    c: f64,
) -> Result<LossValue> {
    match (kind, aux) {
        (AttackKind::ThreeDAdv, _) => loss_3d_adv(x_adv, x, model, goal, cfg, transform, c),
        (AttackKind::Knn, _) => loss_knn(x_adv, model, goal, cfg, transform, c),
        (AttackKind::AdvPc, Aux::Ae(ae)) => loss_advpc(x_adv, model, ae, goal, cfg, transform, c),
        (AttackKind::Aof, Aux::Basis(b)) => loss_aof(x_adv, model, b, goal, cfg, transform, c),
        (AttackKind::Aof, Aux::BasisRef(b)) => loss_aof(x_adv, model, b, goal, cfg, transform, c),
        _ => Err(Error::Config(format!(
            "missing resources for {}",
            kind.name()
        ))),
    }
}

/// Runs one attack on one labelled cloud.
///
/// Each inner run starts from `delta = 0` and takes `iterations` Adam steps
/// on `delta`, clamping it to `[-epsilon, epsilon]` after every step. With
/// the scale/shear policy enabled a fresh transform is drawn per iteration.
/// An iterate succeeds when the untransformed `X + delta` reaches the goal;
/// the run returns its lowest-loss successful iterate, or the last one.
///
/// With binary search, `c` starts at 10 and is bisected inside `[0.1, 100]`
/// (shrinking on success, growing on failure); the successful result with
/// the smallest perturbation across steps is returned.
pub fn run_attack(
    model: &dyn PointClassifier,
    cloud: &PointCloud,
    cfg: &AttackConfig,
    resources: &AttackResources,
) -> Result<AttackResult> {
    cfg.validate()?;
    let goal = goal_for(cloud, cfg, model.num_classes())?;
    let aux = match cfg.kind {
        AttackKind::AdvPc => Aux::Ae(
            resources
                .autoencoder
                .ok_or_else(|| Error::Config("advpc needs an autoencoder".into()))?,
        ),
        AttackKind::Aof => match resources.basis {
            Some(b) => Aux::BasisRef(b),
            None => Aux::Basis(SpectralBasis::from_cloud(cloud, cfg.k_graph)?),
        },
        _ => Aux::None,
    };
    let x = cloud.points();
    let n = x.nrows();
    let mut stream = rng::derive_stream(cfg.rng_seed, &[rng::hash_tag("attack")]);

    let outer = cfg.binary_search_steps.max(1);
    let (mut lower, mut upper) = C_RANGE;
    let mut c = if cfg.binary_search_steps == 0 {
        1.0
    } else {
        C_INIT
    };
    let mut trace = Vec::with_capacity(outer * cfg.iterations);
    let mut best: Option<(Candidate, f64, f64)> = None;
    let mut fallback: Option<(Candidate, f64)> = None;

    for _ in 0..outer {
        let mut delta = Array2::<f64>::zeros((n, 3));
        let mut adam = Adam::new(cfg.lr);
        let mut best_in_step: Option<Candidate> = None;
        for _ in 0..cfg.iterations {
            let x_adv = &x + &delta;
            let transform = if cfg.ss_enabled {
                sample_transform(&cfg.policy, &mut stream)
            } else {
                TransformParams::IDENTITY
            };
            let loss = evaluate(
                cfg.kind,
                x_adv.view(),
                x,
                model,
                &aux,
                goal,
                cfg,
                &transform,
                c,
            )?;
            trace.push(loss.total);
            if !loss.total.is_finite() || loss.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    iteration: trace.len() - 1,
                    trace,
                });
            }
            let logits = match loss.plain_logits {
                Some(l) => l,
                None => model.forward(x_adv.view())?,
            };
            let reached = goal.reached(&logits);
            if reached && best_in_step.as_ref().is_none_or(|b| loss.total < b.loss) {
                best_in_step = Some(Candidate {
                    delta: delta.clone(),
                    loss: loss.total,
                    terms: loss.terms,
                });
            }
            let grads = [loss.grad.as_slice().expect("standard layout")];
            adam.step(
                &mut [delta.as_slice_mut().expect("standard layout")],
                &grads,
            );
            let eps = cfg.epsilon;
            delta.mapv_inplace(|d| d.clamp(-eps, eps));
        }

        // The final iterate is judged without a transform.
        let final_points = &x + &delta;
        let loss = evaluate(
            cfg.kind,
            final_points.view(),
            x,
            model,
            &aux,
            goal,
            cfg,
            &TransformParams::IDENTITY,
            c,
        )?;
        let reached = match &loss.plain_logits {
            Some(l) => goal.reached(l),
            None => goal.reached(&model.forward(final_points.view())?),
        };
        let last = Candidate {
            delta: delta.clone(),
            loss: loss.total,
            terms: loss.terms,
        };
        if reached && best_in_step.as_ref().is_none_or(|b| last.loss < b.loss) {
            best_in_step = Some(last);
        } else if !reached {
            fallback = Some((last, c));
        }

        match best_in_step {
            Some(cand) => {
                let dist = cand.delta.iter().map(|v| v * v).sum::<f64>();
                if best.as_ref().is_none_or(|(_, d, _)| dist < *d) {
                    best = Some((cand, dist, c));
                }
                upper = upper.min(c);
            }
            None => lower = lower.max(c),
        }
        c = 0.5 * (lower + upper);
    }

    let (cand, c_used) = match (best, fallback) {
        (Some((cand, _, c)), _) => (cand, c),
        (None, Some(f)) => f,
        (None, None) => unreachable!("at least one iteration runs"),
    };
    let points = &x + &cand.delta;
    let success = goal.reached(&model.forward(points.view())?);
    let perturbation = cand.delta;
    let linf_norm = perturbation.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let l2_norm = perturbation.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(AttackResult {
        adversarial: cloud.with_points(points)?,
        perturbation,
        success,
        final_loss_terms: cand
            .terms
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .chain([("total".to_string(), cand.loss)])
            .collect(),
        iterations_used: trace.len(),
        linf_norm,
        l2_norm,
        loss_trace: trace,
        target: goal.target,
        c: c_used,
    })
}
