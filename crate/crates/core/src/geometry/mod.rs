//! Point-cloud container, unit-sphere normalization and the scale/shear
//! transform operator.

mod io;
mod transform;

pub use io::{read_cloud, read_pcb, read_xyzl, write_pcb, write_xyzl, PCB_MAGIC};
pub use transform::{
    apply_transform, sample_transform, scale_transform, shear_transform, TransformKind,
    TransformParams, TransformPolicy,
};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `N x 3` array of coordinates with an optional class label and sample id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Array2<f64>,
    pub label: Option<usize>,
    pub id: Option<String>,
}

impl PointCloud {
    /// Wraps an `N x 3` array. Fails on an empty array, a wrong column count
    /// or any non-finite coordinate.
    pub fn new(points: Array2<f64>) -> Result<Self> {
        check_points(points.view())?;
        Ok(Self {
            points,
            label: None,
            id: None,
        })
    }

    pub fn from_rows(rows: &[[f64; 3]]) -> Result<Self> {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let points = Array2::from_shape_vec((rows.len(), 3), flat)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(points)
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    /// Same metadata, new coordinates.
    pub fn with_points(&self, points: Array2<f64>) -> Result<Self> {
        check_points(points.view())?;
        Ok(Self {
            points,
            label: self.label,
            id: self.id.clone(),
        })
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn into_points(self) -> Array2<f64> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn row(&self, i: usize) -> [f64; 3] {
        let r = self.points.row(i);
        [r[0], r[1], r[2]]
    }

    pub fn centroid(&self) -> Array1<f64> {
        self.points
            .mean_axis(Axis(0))
            .expect("point cloud is never empty")
    }

    pub fn max_norm(&self) -> f64 {
        self.points
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .fold(0.0, f64::max)
    }

    /// Keeps the rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        self.with_points(self.points.select(Axis(0), indices))
    }
}

pub(crate) fn check_points(points: ArrayView2<f64>) -> Result<()> {
    if points.ncols() != 3 {
        return Err(Error::Shape(format!(
            "expected 3 columns, got {}",
            points.ncols()
        )));
    }
    if points.nrows() == 0 {
        return Err(Error::Shape("point cloud has no points".into()));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

/// Centers the cloud on its centroid and scales it so the farthest point has
/// norm 1.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> Result<PointCloud> {
    let centroid = cloud.centroid();
    let centered = &cloud.points - &centroid;
    let radius = centered
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .fold(0.0, f64::max);
    if radius <= f64::EPSILON * (1.0 + centroid.iter().map(|c| c.abs()).sum::<f64>()) {
        return Err(Error::ZeroExtent);
    }
    cloud.with_points(centered / radius)
}
