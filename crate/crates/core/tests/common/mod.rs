#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use ssbench::geometry::normalize_unit_sphere;
use ssbench::models::{Architecture, Classifier, ClassifierSpec};
use ssbench::{rng, PointCloud};

/// Uniform points in the unit cube, normalized.
pub fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut r = rng::stream(seed);
    let pts = Array2::from_shape_fn((n, 3), |_| r.random_range(-1.0..1.0));
    normalize_unit_sphere(&PointCloud::new(pts).unwrap()).unwrap()
}

pub fn small_classifier(arch: Architecture, classes: usize, seed: u64) -> Classifier {
    let mut spec = ClassifierSpec::new(arch, classes);
    spec.widths = vec![16, 32];
    spec.head = vec![32];
    spec.knn_k = 5;
    Classifier::new(spec, &mut rng::stream(seed)).unwrap()
}

pub fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Central finite differences of `f` at `x` with step `h`.
pub fn finite_difference(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>, h: f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.raw_dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.raw_dim()) {
        let v = x[idx];
        probe[idx] = v + h;
        let up = f(&probe);
        probe[idx] = v - h;
        let down = f(&probe);
        probe[idx] = v;
        g[idx] = (up - down) / (2.0 * h);
    }
    g
}

/// Max-norm error of `analytic` against `numeric`, relative to the larger
/// of the two max norms.
pub fn relative_error(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    let scale = max_abs(analytic).max(max_abs(numeric));
    if scale == 0.0 {
        return 0.0;
    }
    max_abs(&(analytic - numeric)) / scale
}
