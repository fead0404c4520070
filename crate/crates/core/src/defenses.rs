//! Input-purification defenses applied before classification.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::neighbors::{knn, sq_dist};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefenseKind {
    None,
    Srs,
    Sor,
}

impl DefenseKind {
    pub const ALL: [DefenseKind; 3] = [DefenseKind::None, DefenseKind::Srs, DefenseKind::Sor];

    pub fn name(&self) -> &'static str {
        match self {
            DefenseKind::None => "none",
            DefenseKind::Srs => "srs",
            DefenseKind::Sor => "sor",
        }
    }
}

impl std::str::FromStr for DefenseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DefenseKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!("unknown defense '{s}' (expected none, srs, sor)"))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseConfig {
    pub kind: DefenseKind,
    /// Points removed by SRS; `None` drops half of the cloud.
    pub srs_drop: Option<usize>,
    pub sor_k: usize,
    pub sor_alpha: f64,
    pub rng_seed: u64,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            kind: DefenseKind::None,
            srs_drop: None,
            sor_k: 2,
            sor_alpha: 1.1,
            rng_seed: 0,
        }
    }
}

impl DefenseConfig {
    pub fn new(kind: DefenseKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sor_k == 0 {
            return Err(Error::Config("sor_k must be at least 1".into()));
        }
        if !(self.sor_alpha > 0.0 && self.sor_alpha.is_finite()) {
            return Err(Error::Config(format!(
                "sor_alpha={} must be positive",
                self.sor_alpha
            )));
        }
        Ok(())
    }

    /// Applies the configured defense, drawing any randomness from `rng`.
    pub fn apply<R: Rng + ?Sized>(&self, cloud: &PointCloud, rng: &mut R) -> Result<PointCloud> {
        self.validate()?;
        match self.kind {
            DefenseKind::None => Ok(cloud.clone()),
            DefenseKind::Srs => {
                let drop = self.srs_drop.unwrap_or(cloud.len() / 2);
                defend_srs(cloud, drop, rng)
            }
            DefenseKind::Sor => defend_sor(cloud, self.sor_k, self.sor_alpha),
        }
    }
}

/// Simple random sampling: removes `drop` points chosen uniformly without
/// replacement. Survivors keep their original order.
pub fn defend_srs<R: Rng + ?Sized>(
    cloud: &PointCloud,
    drop: usize,
    rng: &mut R,
) -> Result<PointCloud> {
    let n = cloud.len();
    if drop >= n {
        return Err(Error::Config(format!(
            "cannot drop {drop} of {n} points and keep any"
        )));
    }
    let mut keep = sample(rng, n, n - drop).into_vec();
    keep.sort_unstable();
    cloud.select(&keep)
}

/// Statistical outlier removal: drops every point whose mean distance to its
/// `k` nearest neighbours exceeds `mean + alpha * std` of those distances.
pub fn defend_sor(cloud: &PointCloud, k: usize, alpha: f64) -> Result<PointCloud> {
    let pts = cloud.points();
    let n = pts.nrows();
    let nn = knn(pts, k, false)?;
    let dist: Vec<f64> = (0..n)
        .map(|i| {
            nn.row(i)
                .iter()
                .map(|&j| sq_dist(pts, i, j).sqrt())
                .sum::<f64>()
                / k as f64
        })
        .collect();
    let mean = dist.iter().sum::<f64>() / n as f64;
    let var = dist.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
    let threshold = mean + alpha * var.sqrt();
    let keep: Vec<usize> = (0..n).filter(|&i| dist[i] <= threshold).collect();
    if keep.is_empty() {
        return Err(Error::DegenerateAfterSor);
    }
    cloud.select(&keep)
}
