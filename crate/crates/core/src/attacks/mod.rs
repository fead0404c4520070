//! CW-style optimization attacks and their scale/shear-augmented variants.
//!
//! Four baselines share one optimization loop and differ only in the loss:
//!
//! | attack  | loss                                                        |
//! |---------|-------------------------------------------------------------|
//! | 3d-adv  | `c * margin(X') + |X' - X|^2`                               |
//! | knn     | `c * margin(X') + knn_smoothness(X')`                       |
//! | advpc   | `c * ((1 - g) * margin(X') + g * margin(AE(X')))`           |
//! | aof     | `c * ((1 - g) * margin(X') + g * margin(lowfreq(X')))`      |
//!
//! The `ss-` variants draw a fresh random scale/shear `T` at every iteration
//! and feed `T(X')` instead of `X'` to the direct margin term (and, for knn,
//! to the smoothness term as well). They never use binary search.

mod losses;
mod runner;

pub use losses::{
    knn_distances, knn_smoothness, loss_3d_adv, loss_advpc, loss_aof, loss_knn, margin_loss,
    margin_loss_grad, Goal, LossValue,
};
pub use runner::{run_attack, AttackResources, AttackResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TransformPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttackKind {
    #[serde(rename = "3d-adv")]
    ThreeDAdv,
    #[serde(rename = "knn")]
    Knn,
    #[serde(rename = "advpc")]
    AdvPc,
    #[serde(rename = "aof")]
    Aof,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [
        AttackKind::ThreeDAdv,
        AttackKind::Knn,
        AttackKind::AdvPc,
        AttackKind::Aof,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::ThreeDAdv => "3d-adv",
            AttackKind::Knn => "knn",
            AttackKind::AdvPc => "advpc",
            AttackKind::Aof => "aof",
        }
    }
}

/// Default l-infinity budget.
pub const DEFAULT_EPSILON: f64 = 0.18;

/// Budgets swept when measuring transferability against the budget.
pub const BUDGET_SWEEP: [f64; 7] = [0.01, 0.04, 0.05, 0.08, 0.10, 0.15, 0.18];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub ss_enabled: bool,
    pub policy: TransformPolicy,
    pub kappa: f64,
    /// Weight of the autoencoder / low-frequency branch (advpc, aof).
    pub gamma: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub lr: f64,
    /// Zero disables the outer search and fixes `c = 1`.
    pub binary_search_steps: usize,
    pub knn_k: usize,
    pub knn_threshold_alpha: f64,
    /// Retained low frequencies for aof; `None` means `round(N / 10)`.
    pub k_lf: Option<usize>,
    /// Neighbours of the spectral graph for aof.
    pub k_graph: usize,
    pub targeted: bool,
    pub target_class: Option<usize>,
    pub rng_seed: u64,
}

impl AttackConfig {
    /// Paper-default hyperparameters for each attack; the `ss` variants drop
    /// binary search and enable the transform policy.
    pub fn preset(kind: AttackKind, ss_enabled: bool) -> Self {
        let (iterations, binary_search_steps, lr, kappa) = match kind {
            AttackKind::ThreeDAdv => (500, 10, 0.01, 0.0),
            AttackKind::Knn => (2500, 0, 0.001, 15.0),
            AttackKind::AdvPc => (200, 2, 0.01, 0.0),
            AttackKind::Aof => (200, 2, 0.01, 0.0),
        };
        let p = if kind == AttackKind::ThreeDAdv {
            0.5
        } else {
            0.7
        };
        Self {
            kind,
            ss_enabled,
            policy: TransformPolicy::new(p, p),
            kappa,
            gamma: 0.25,
            epsilon: DEFAULT_EPSILON,
            iterations,
            lr,
            binary_search_steps: if ss_enabled { 0 } else { binary_search_steps },
            knn_k: 5,
            knn_threshold_alpha: 1.1,
            k_lf: None,
            k_graph: crate::spectral::DEFAULT_GRAPH_K,
            targeted: false,
            target_class: None,
            rng_seed: 0,
        }
    }

    /// Parses names like `knn` or `ss-aof` into their preset.
    pub fn from_name(name: &str) -> Result<Self> {
        let (ss, base) = match name.strip_prefix("ss-") {
            Some(rest) => (true, rest),
            None => (false, name),
        };
        let kind = AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == base)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown attack '{name}' (expected [ss-]3d-adv, [ss-]knn, [ss-]advpc, [ss-]aof)"
                ))
            })?;
        Ok(Self::preset(kind, ss))
    }

    pub fn name(&self) -> String {
        if self.ss_enabled {
            format!("ss-{}", self.kind.name())
        } else {
            self.kind.name().to_string()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.ss_enabled {
            self.policy.validate()?;
            if self.binary_search_steps != 0 {
                return bad("scale/shear attacks do not use binary search".into());
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma={} outside [0, 1]", self.gamma));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon={} must be positive", self.epsilon));
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr={} must be non-negative", self.lr));
        }
        if !self.kappa.is_finite() || self.kappa < 0.0 {
            return bad(format!("kappa={} must be non-negative", self.kappa));
        }
        if self.knn_k == 0 {
            return bad("knn_k must be at least 1".into());
        }
        if self.k_lf == Some(0) {
            return bad("k_lf must be at least 1".into());
        }
        Ok(())
    }

    pub fn retained_frequencies(&self, points: usize) -> usize {
        self.k_lf
            .unwrap_or_else(|| ((points as f64 / 10.0).round() as usize).max(1))
    }
}
