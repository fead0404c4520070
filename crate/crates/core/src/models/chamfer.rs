use ndarray::{Array2, ArrayView2};

use crate::neighbors::sq_dist_between;

/// Symmetric chamfer distance: mean squared nearest-neighbour distance from
/// `a` to `b` plus the same from `b` to `a`.
pub fn chamfer(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    chamfer_with_grad(a, b).0
}

/// Chamfer distance with its gradients with respect to `a` and `b`. The
/// nearest-neighbour assignment is held fixed (first index on ties).
pub fn chamfer_with_grad(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
) -> (f64, Array2<f64>, Array2<f64>) {
    let (na, nb) = (a.nrows(), b.nrows());
    let mut best_for_a = vec![(f64::INFINITY, 0usize); na];
    let mut best_for_b = vec![(f64::INFINITY, 0usize); nb];
    for i in 0..na {
        for j in 0..nb {
            let d = sq_dist_between(a, i, b, j);
            if d < best_for_a[i].0 {
                best_for_a[i] = (d, j);
            }
            if d < best_for_b[j].0 {
                best_for_b[j] = (d, i);
            }
        }
    }
    let forward: f64 = best_for_a.iter().map(|(d, _)| d).sum::<f64>() / na as f64;
    let backward: f64 = best_for_b.iter().map(|(d, _)| d).sum::<f64>() / nb as f64;

    let mut ga = Array2::zeros(a.raw_dim());
    let mut gb = Array2::zeros(b.raw_dim());
    for (i, &(_, j)) in best_for_a.iter().enumerate() {
        for c in 0..3 {
            let diff = 2.0 * (a[[i, c]] - b[[j, c]]) / na as f64;
            ga[[i, c]] += diff;
            gb[[j, c]] -= diff;
        }
    }
    for (j, &(_, i)) in best_for_b.iter().enumerate() {
        for c in 0..3 {
            let diff = 2.0 * (b[[j, c]] - a[[i, c]]) / nb as f64;
            gb[[j, c]] += diff;
            ga[[i, c]] -= diff;
        }
    }
    (forward + backward, ga, gb)
}
