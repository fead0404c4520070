//! Transferability metrics, robustness curves, the experiment matrix and
//! report output.

mod matrix;
mod report;

pub use matrix::{
    run_matrix, run_sweep, select_subset, MatrixAttack, MatrixConfig, MatrixInputs, NamedModel,
    SweepParam,
};
pub use report::{
    emit_report, sweep_svg, ReportEntry, ReportFormat, SweepInfo, TransferReport, REPORT_SCHEMA,
};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, TransformParams};
use crate::models::{cross_entropy, PointClassifier};
use crate::rng;

/// A clean cloud, its adversarial counterpart and the attack goal.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvPair {
    pub clean: PointCloud,
    pub adversarial: PointCloud,
    pub label: usize,
    pub target: Option<usize>,
}

/// Outcome counts behind a transferability value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransCounts {
    /// Samples whose clean cloud the transfer model classifies correctly.
    pub correct: usize,
    /// Of those, samples whose adversarial it misclassifies.
    pub flipped: usize,
    pub total: usize,
}

impl TransCounts {
    pub fn trans(&self) -> Result<f64> {
        if self.correct == 0 {
            return Err(Error::NoCorrectSamples);
        }
        Ok(100.0 * self.flipped as f64 / self.correct as f64)
    }

    pub fn clean_accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.total as f64
        }
    }
}

/// Counts from precomputed predictions.
pub fn trans_counts(
    labels: &[usize],
    clean_pred: &[usize],
    adv_pred: &[usize],
) -> Result<TransCounts> {
    if labels.len() != clean_pred.len() || labels.len() != adv_pred.len() {
        return Err(Error::Shape("prediction lists differ in length".into()));
    }
    if labels.is_empty() {
        return Err(Error::EmptySplit("samples"));
    }
    let mut counts = TransCounts {
        correct: 0,
        flipped: 0,
        total: labels.len(),
    };
    for ((&y, &c), &a) in labels.iter().zip(clean_pred).zip(adv_pred) {
        if c == y {
            counts.correct += 1;
            if a != y {
                counts.flipped += 1;
            }
        }
    }
    Ok(counts)
}

fn predictions(model: &dyn PointClassifier, clouds: &[&PointCloud]) -> Result<Vec<usize>> {
    clouds
        .par_iter()
        .map(|c| Ok(model.forward(c.points())?.argmax()))
        .collect()
}

/// Percentage of correctly classified clean samples whose adversarial the
/// transfer model misclassifies.
pub fn trans_metric(pairs: &[AdvPair], transfer: &dyn PointClassifier) -> Result<f64> {
    let labels: Vec<usize> = pairs.iter().map(|p| p.label).collect();
    let clean = predictions(
        transfer,
        &pairs.iter().map(|p| &p.clean).collect::<Vec<_>>(),
    )?;
    let adv = predictions(
        transfer,
        &pairs.iter().map(|p| &p.adversarial).collect::<Vec<_>>(),
    )?;
    trans_counts(&labels, &clean, &adv)?.trans()
}

/// Percentage of targeted adversarials the model assigns to their target.
/// An empty set scores zero.
pub fn targeted_success_rate(pairs: &[AdvPair], model: &dyn PointClassifier) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let targets = pairs
        .iter()
        .map(|p| {
            p.target
                .ok_or_else(|| Error::Config("pair has no target class".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let preds = predictions(
        model,
        &pairs.iter().map(|p| &p.adversarial).collect::<Vec<_>>(),
    )?;
    let hits = preds.iter().zip(&targets).filter(|(p, t)| p == t).count();
    Ok(100.0 * hits as f64 / pairs.len() as f64)
}

/// Targeted success from precomputed predictions.
pub fn targeted_success_from_predictions(targets: &[usize], adv_pred: &[usize]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let hits = targets.iter().zip(adv_pred).filter(|(t, p)| t == p).count();
    100.0 * hits as f64 / targets.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeformKind {
    Scale,
    Shear,
}

/// Scale ranges of the robustness study; `None` is the undeformed baseline.
pub const SCALE_SWEEP: [Option<(f64, f64)>; 8] = [
    None,
    Some((0.9, 1.1)),
    Some((0.8, 1.25)),
    Some((0.6, 1.428)),
    Some((0.5, 1.5)),
    Some((0.4, 2.5)),
    Some((0.3, 3.33)),
    Some((0.2, 5.0)),
];

/// Shear magnitude ranges of the robustness study.
pub const SHEAR_SWEEP: [Option<(f64, f64)>; 10] = [
    None,
    Some((0.0, 0.1)),
    Some((0.05, 0.15)),
    Some((0.1, 0.2)),
    Some((0.2, 0.3)),
    Some((0.25, 0.35)),
    Some((0.3, 0.4)),
    Some((0.35, 0.45)),
    Some((0.40, 0.50)),
    Some((0.45, 0.55)),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub kind: DeformKind,
    pub range: Option<(f64, f64)>,
    pub accuracy: f64,
    pub mean_loss: f64,
}

/// One random transform of `kind` with factors (scale) or magnitudes with
/// random signs (shear) drawn uniformly from `range`.
pub fn random_deformation<R: Rng + ?Sized>(
    kind: DeformKind,
    range: (f64, f64),
    rng: &mut R,
) -> TransformParams {
    let (lo, hi) = range;
    let mut draw = || {
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    };
    match kind {
        DeformKind::Scale => {
            let s: [f64; 3] = std::array::from_fn(|_| draw());
            TransformParams::scale(s[0], s[1], s[2])
        }
        DeformKind::Shear => {
            let m: [f64; 4] = std::array::from_fn(|_| draw());
            let signs: [f64; 4] =
                std::array::from_fn(|_| if rng.random::<bool>() { 1.0 } else { -1.0 });
            TransformParams::shear(
                m[0] * signs[0],
                m[1] * signs[1],
                m[2] * signs[2],
                m[3] * signs[3],
            )
        }
    }
}

/// Accuracy and mean cross-entropy of `model` with one random deformation per
/// sample for each range of `sweep`.
pub fn accuracy_under_transform(
    model: &dyn PointClassifier,
    clouds: &[PointCloud],
    kind: DeformKind,
    sweep: &[Option<(f64, f64)>],
    seed: u64,
) -> Result<Vec<RobustnessRow>> {
    if clouds.is_empty() {
        return Err(Error::EmptySplit("robustness set"));
    }
    sweep
        .iter()
        .enumerate()
        .map(|(r, &range)| {
            let outcomes = clouds
                .par_iter()
                .enumerate()
                .map(|(i, cloud)| {
                    let label = cloud
                        .label
                        .ok_or_else(|| Error::Config("cloud without label".into()))?;
                    let pts = match range {
                        None => cloud.points().to_owned(),
                        Some(range) => {
                            let mut s = rng::derive_stream(seed, &[r as u64, i as u64]);
                            random_deformation(kind, range, &mut s).apply(cloud.points())
                        }
                    };
                    let logits = model.forward(pts.view())?;
                    let (loss, _) = cross_entropy(&logits, label)?;
                    Ok((logits.argmax() == label, loss))
                })
                .collect::<Result<Vec<_>>>()?;
            let n = outcomes.len() as f64;
            Ok(RobustnessRow {
                kind,
                range,
                accuracy: 100.0 * outcomes.iter().filter(|o| o.0).count() as f64 / n,
                mean_loss: outcomes.iter().map(|o| o.1).sum::<f64>() / n,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_arithmetic() {
        let labels = vec![0; 250];
        let clean: Vec<usize> = (0..250).map(|i| if i < 200 { 0 } else { 1 }).collect();
        let adv: Vec<usize> = (0..250).map(|i| if i < 50 { 1 } else { 0 }).collect();
        let c = trans_counts(&labels, &clean, &adv).unwrap();
        assert_eq!((c.correct, c.flipped), (200, 50));
        assert_eq!(c.trans().unwrap(), 25.0);
    }

    #[test]
    fn nothing_correct_is_an_error() {
        let c = trans_counts(&[0, 0], &[1, 1], &[0, 0]).unwrap();
        assert!(matches!(c.trans(), Err(Error::NoCorrectSamples)));
    }

    #[test]
    fn targeted_from_predictions() {
        assert_eq!(targeted_success_from_predictions(&[1, 2], &[1, 2]), 100.0);
        assert_eq!(targeted_success_from_predictions(&[1, 2], &[0, 0]), 0.0);
        assert_eq!(targeted_success_from_predictions(&[], &[]), 0.0);
    }

    #[test]
    fn deformation_ranges() {
        let mut r = rng::stream(3);
        for _ in 0..100 {
            let t = random_deformation(DeformKind::Scale, (0.5, 1.5), &mut r);
            assert!(t.scale.iter().all(|s| (0.5..=1.5).contains(s)));
            let t = random_deformation(DeformKind::Shear, (0.1, 0.2), &mut r);
            assert!(t.shear.iter().all(|s| (0.1..=0.2).contains(&s.abs())));
        }
    }
}
