//! Graph-Laplacian spectral decomposition of a point cloud.
//!
//! The low-frequency component of a cloud is its projection onto the
//! eigenvectors of the kNN-graph Laplacian with the smallest eigenvalues.
//! The basis is built once from the clean cloud and held fixed, so the
//! projection is a constant linear (and self-adjoint) map.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::neighbors::{knn, sq_dist};

pub const DEFAULT_GRAPH_K: usize = 10;

/// Symmetrized kNN adjacency with Gaussian weights
/// `exp(-|p_i - p_j|^2 / sigma^2)`, where `sigma^2` is the mean squared
/// distance from each point to its `k` nearest neighbours.
pub fn build_knn_graph(points: ArrayView2<f64>, k: usize) -> Result<Array2<f64>> {
    let n = points.nrows();
    if k == 0 || k >= n {
        return Err(Error::TooFewPoints { k, n });
    }
    let nn = knn(points, k, false)?;
    let sigma2 = {
        let total: f64 = nn
            .indexed_iter()
            .map(|((i, _), &j)| sq_dist(points, i, j))
            .sum();
        let mean = total / (n * k) as f64;
        if mean > 0.0 {
            mean
        } else {
            1.0
        }
    };
    let mut adj = Array2::zeros((n, n));
    for ((i, _), &j) in nn.indexed_iter() {
        let w = (-sq_dist(points, i, j) / sigma2).exp();
        adj[[i, j]] = w;
        adj[[j, i]] = w;
    }
    Ok(adj)
}

/// Combinatorial Laplacian `L = D - A`.
pub fn graph_laplacian(adjacency: &Array2<f64>) -> Result<Array2<f64>> {
    let n = adjacency.nrows();
    if adjacency.ncols() != n {
        return Err(Error::Shape(format!(
            "adjacency must be square, got {:?}",
            adjacency.shape()
        )));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if adjacency[[i, j]] != adjacency[[j, i]] {
                return Err(Error::Asymmetric(i, j));
            }
        }
    }
    if adjacency.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(Error::Config(
            "adjacency weights must be finite and non-negative".into(),
        ));
    }
    let mut lap = -adjacency.clone();
    for i in 0..n {
        lap[[i, i]] = 0.0;
        let degree: f64 = (0..n).filter(|&j| j != i).map(|j| adjacency[[i, j]]).sum();
        lap[[i, i]] = degree;
    }
    Ok(lap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralBasis {
    /// Nondecreasing.
    pub eigenvalues: Array1<f64>,
    /// Column `i` is the eigenvector of `eigenvalues[i]`.
    pub eigenvectors: Array2<f64>,
    pub k_graph: usize,
    pub source_cloud_id: Option<String>,
}

impl SpectralBasis {
    pub fn from_cloud(cloud: &PointCloud, k_graph: usize) -> Result<Self> {
        let adj = build_knn_graph(cloud.points(), k_graph)?;
        let lap = graph_laplacian(&adj)?;
        let mut basis = Self::from_laplacian(&lap)?;
        basis.k_graph = k_graph;
        basis.source_cloud_id = cloud.id.clone();
        Ok(basis)
    }

    /// Dense symmetric eigendecomposition, sorted by ascending eigenvalue.
    pub fn from_laplacian(lap: &Array2<f64>) -> Result<Self> {
        let n = lap.nrows();
        let m = DMatrix::from_fn(n, n, |i, j| lap[[i, j]]);
        let eig = SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let eigenvectors = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, order[c])]);
        Ok(Self {
            eigenvalues,
            eigenvectors,
            k_graph: 0,
            source_cloud_id: None,
        })
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `U_K U_K^T X` for the first `k` eigenvectors.
    pub fn project(&self, points: ArrayView2<f64>, k: usize) -> Result<Array2<f64>> {
        if points.nrows() != self.len() {
            return Err(Error::Shape(format!(
                "basis built for {} points, cloud has {}",
                self.len(),
                points.nrows()
            )));
        }
        if k == 0 || k > self.len() {
            return Err(Error::Config(format!(
                "retained frequencies {k} outside 1..={}",
                self.len()
            )));
        }
        let u = self.eigenvectors.slice(s![.., ..k]);
        Ok(u.dot(&u.t().dot(&points)))
    }
}

/// Splits a cloud into low- and high-frequency parts, `X = X_lfc + X_hfc`.
pub fn low_freq_project(
    points: ArrayView2<f64>,
    basis: &SpectralBasis,
    k: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let lfc = basis.project(points, k)?;
    let hfc = &points - &lfc;
    Ok((lfc, hfc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn collinear_middle_joins_both_ends() {
        let p = array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let adj = build_knn_graph(p.view(), 1).unwrap();
        assert!(adj[[1, 0]] > 0.0 && adj[[1, 2]] > 0.0);
        assert_eq!(adj[[0, 2]], 0.0);
        assert_eq!(adj, adj.t());
    }

    #[test]
    fn two_node_laplacian() {
        let adj = array![[0.0, 0.3], [0.3, 0.0]];
        assert_eq!(
            graph_laplacian(&adj).unwrap(),
            array![[0.3, -0.3], [-0.3, 0.3]]
        );
    }

    #[test]
    fn asymmetric_rejected() {
        let adj = array![[0.0, 0.3], [0.2, 0.0]];
        assert!(matches!(
            graph_laplacian(&adj),
            Err(Error::Asymmetric(0, 1))
        ));
    }

    #[test]
    fn k_must_be_below_n() {
        let p = array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert!(build_knn_graph(p.view(), 2).is_err());
    }
}
