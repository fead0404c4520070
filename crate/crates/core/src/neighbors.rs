//! Brute-force nearest-neighbour queries shared by the edge-conv model, the
//! kNN attack loss, the spectral graph and the SOR defense.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Squared Euclidean distance between rows `i` and `j`.
#[inline]
pub fn sq_dist(points: ArrayView2<f64>, i: usize, j: usize) -> f64 {
    let a = points.row(i);
    let b = points.row(j);
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared Euclidean distance between row `i` of `a` and row `j` of `b`.
#[inline]
pub fn sq_dist_between(a: ArrayView2<f64>, i: usize, b: ArrayView2<f64>, j: usize) -> f64 {
    a.row(i)
        .iter()
        .zip(b.row(j).iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

pub fn pairwise_sq_dists(points: ArrayView2<f64>) -> Array2<f64> {
    let n = points.nrows();
    let dim = points.ncols();
    let flat = points.as_standard_layout();
    let flat = flat.as_slice().expect("standard layout");
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        let a = &flat[i * dim..(i + 1) * dim];
        for j in (i + 1)..n {
            let b = &flat[j * dim..(j + 1) * dim];
            let v: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Indices of the `k` nearest rows for each row, ordered by distance with
/// ties broken by index. With `include_self` a row is its own first
/// neighbour candidate (distance zero); otherwise it is excluded.
pub fn knn(points: ArrayView2<f64>, k: usize, include_self: bool) -> Result<Array2<usize>> {
    Ok(knn_with_sq_dists(points, k, include_self)?.0)
}

/// Like [`knn`], also returning the squared distance to each neighbour.
pub fn knn_with_sq_dists(
    points: ArrayView2<f64>,
    k: usize,
    include_self: bool,
) -> Result<(Array2<usize>, Array2<f64>)> {
    let n = points.nrows();
    let available = if include_self { n } else { n.saturating_sub(1) };
    if k == 0 || k > available {
        return Err(Error::TooFewPoints { k, n });
    }
    let dim = points.ncols();
    let flat = points.as_standard_layout();
    let flat = flat.as_slice().expect("standard layout");
    let mut idx = Array2::zeros((n, k));
    let mut dst = Array2::zeros((n, k));
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for i in 0..n {
        best.clear();
        let a = &flat[i * dim..(i + 1) * dim];
        let mut consider = |j: usize, d: f64| {
            if (j == i && !include_self) || (best.len() == k && d >= best[k - 1].0) {
                return;
            }
            // Candidates arrive in index order, so an equal distance never
            // displaces an earlier index.
            let pos = best.partition_point(|&(b, _)| b <= d);
            best.insert(pos, (d, j));
            best.truncate(k);
        };
        if dim == 3 {
            for (j, b) in flat.chunks_exact(3).enumerate() {
                let (x, y, z) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
                consider(j, x * x + y * y + z * z);
            }
        } else {
            for (j, b) in flat.chunks_exact(dim).enumerate() {
                consider(j, a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum());
            }
        }
        for (slot, &(d, j)) in best.iter().enumerate() {
            idx[[i, slot]] = j;
            dst[[i, slot]] = d;
        }
    }
    Ok((idx, dst))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn line_neighbours() {
        let p = array![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [3.0, 0.0, 0.0],
            [6.0, 0.0, 0.0]
        ];
        let nn = knn(p.view(), 2, false).unwrap();
        assert_eq!(nn.row(0).to_vec(), vec![1, 2]);
        assert_eq!(nn.row(3).to_vec(), vec![2, 1]);
        let with_self = knn(p.view(), 2, true).unwrap();
        assert_eq!(with_self.row(2).to_vec(), vec![2, 1]);
    }

    #[test]
    fn too_large_k() {
        let p = array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert!(knn(p.view(), 2, false).is_err());
        assert!(knn(p.view(), 2, true).is_ok());
    }
}
