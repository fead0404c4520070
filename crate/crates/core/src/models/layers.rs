use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

/// Affine map `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    /// He-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (6.0 / inputs as f64).sqrt();
        Self {
            w: Array2::from_shape_fn((inputs, outputs), |_| rng.random_range(-bound..bound)),
            b: Array1::zeros(outputs),
        }
    }

    #[cfg(test)]
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: Array2::zeros((inputs, outputs)),
            b: Array1::zeros(outputs),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    pub fn forward_vec(&self, x: ArrayView1<f64>) -> Array1<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Returns `dL/dx`; accumulates parameter gradients into `grad` if given.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        dz: ArrayView2<f64>,
        grad: Option<&mut Dense>,
    ) -> Array2<f64> {
        if let Some(g) = grad {
            g.w += &x.t().dot(&dz);
            g.b += &dz.sum_axis(Axis(0));
        }
        dz.dot(&self.w.t())
    }

    pub fn backward_vec(
        &self,
        x: ArrayView1<f64>,
        dz: ArrayView1<f64>,
        grad: Option<&mut Dense>,
    ) -> Array1<f64> {
        if let Some(g) = grad {
            let outer = x
                .view()
                .insert_axis(Axis(1))
                .dot(&dz.view().insert_axis(Axis(0)));
            g.w += &outer;
            g.b += &dz;
        }
        self.w.dot(&dz)
    }

    pub fn params(&self) -> [&[f64]; 2] {
        [
            self.w.as_slice().expect("standard layout"),
            self.b.as_slice().expect("standard layout"),
        ]
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 2] {
        [
            self.w.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
        ]
    }
}

pub fn relu_inplace<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) {
    a.mapv_inplace(|v| v.max(0.0));
}

/// Zeroes gradient entries whose pre-activation was not positive.
pub fn relu_backward<D: ndarray::Dimension>(
    grad: &mut ndarray::Array<f64, D>,
    pre: &ndarray::Array<f64, D>,
) {
    grad.zip_mut_with(pre, |g, &z| {
        if z <= 0.0 {
            *g = 0.0
        }
    });
}

/// Channel-wise max over rows, with the winning row per channel (first on ties).
pub fn max_pool(h: ArrayView2<f64>) -> (Array1<f64>, Vec<usize>) {
    let channels = h.ncols();
    let mut pooled = Array1::from_elem(channels, f64::NEG_INFINITY);
    let mut arg = vec![0usize; channels];
    for (i, row) in h.rows().into_iter().enumerate() {
        for c in 0..channels {
            if row[c] > pooled[c] {
                pooled[c] = row[c];
                arg[c] = i;
            }
        }
    }
    (pooled, arg)
}

pub fn max_pool_backward(rows: usize, arg: &[usize], dpooled: ArrayView1<f64>) -> Array2<f64> {
    let mut d = Array2::zeros((rows, arg.len()));
    for (c, &i) in arg.iter().enumerate() {
        d[[i, c]] = dpooled[c];
    }
    d
}

/// Rounds every value to the nearest `f32`, so that a float32 checkpoint
/// reproduces the model exactly.
pub fn round_to_f32(values: &mut [f64]) {
    for v in values {
        *v = f64::from(*v as f32);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dense_backward_matches_manual() {
        let layer = Dense {
            w: array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]],
            b: array![0.5, -0.5],
        };
        let x = array![[1.0, 0.0, -1.0]];
        assert_eq!(layer.forward(x.view()), array![[-3.5, -4.5]]);
        let mut g = Dense::zeros(3, 2);
        let dx = layer.backward(x.view(), array![[1.0, 1.0]].view(), Some(&mut g));
        assert_eq!(dx, array![[3.0, 7.0, 11.0]]);
        assert_eq!(g.w, array![[1.0, 1.0], [0.0, 0.0], [-1.0, -1.0]]);
        assert_eq!(g.b, array![1.0, 1.0]);
    }

    #[test]
    fn pool_picks_first_maximum() {
        let h = array![[1.0, 5.0], [3.0, 5.0], [2.0, 0.0]];
        let (p, arg) = max_pool(h.view());
        assert_eq!(p, array![3.0, 5.0]);
        assert_eq!(arg, vec![1, 0]);
    }
}
