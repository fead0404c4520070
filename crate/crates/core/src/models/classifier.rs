use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{max_pool, max_pool_backward, relu_backward, relu_inplace, Dense};
use super::{Logits, PointClassifier};
use crate::error::{Error, Result};
use crate::geometry::check_points;
use crate::neighbors::knn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// Shared per-point MLP followed by a channel-wise max pool.
    PointwiseMaxPool,
    /// Edge convolutions over k-nearest-neighbour graphs, recomputed in
    /// feature space at every edge layer, then a pointwise layer and max pool.
    EdgeConv,
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::PointwiseMaxPool => "pointwise-maxpool",
            Architecture::EdgeConv => "edge-conv",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointwise-maxpool" => Ok(Architecture::PointwiseMaxPool),
            "edge-conv" => Ok(Architecture::EdgeConv),
            other => Err(Error::Config(format!(
                "unknown architecture '{other}' (expected pointwise-maxpool or edge-conv)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub architecture: Architecture,
    /// Per-point feature widths before pooling.
    pub widths: Vec<usize>,
    /// Hidden widths of the classification head after pooling.
    pub head: Vec<usize>,
    pub num_classes: usize,
    /// Neighbourhood size of the edge-conv graphs (the point itself included).
    pub knn_k: usize,
}

impl ClassifierSpec {
    pub fn new(architecture: Architecture, num_classes: usize) -> Self {
        Self {
            architecture,
            widths: vec![64, 128, 256],
            head: vec![128],
            num_classes,
            knn_k: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.widths.is_empty() || self.widths.contains(&0) || self.head.contains(&0) {
            return Err(Error::Config(
                "layer widths must be nonempty and positive".into(),
            ));
        }
        if self.architecture == Architecture::EdgeConv && self.knn_k == 0 {
            return Err(Error::Config("knn_k must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of leading feature layers that are edge convolutions.
    fn edge_layers(&self) -> usize {
        match self.architecture {
            Architecture::PointwiseMaxPool => 0,
            Architecture::EdgeConv => (self.widths.len() - 1).max(1),
        }
    }
}

/// `z_i = h_i W_c + max_{j in N(i)} h_j W_n + b`, then ReLU. This is the
/// edge function `theta (h_j - h_i) + phi h_i` reparametrized with
/// `W_n = theta`, `W_c = phi - theta`; the max over neighbours commutes
/// with the monotone activation.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct EdgeLayer {
    pub center: Dense,
    pub neighbor: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum FeatureLayer {
    Pointwise(Dense),
    Edge(EdgeLayer),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub spec: ClassifierSpec,
    pub(crate) features: Vec<FeatureLayer>,
    pub(crate) head: Vec<Dense>,
}

struct LayerCache {
    input: Array2<f64>,
    pre: Array2<f64>,
    /// Edge layers: winning neighbour row for each (point, channel).
    winner: Option<Array2<usize>>,
}

pub(crate) struct ForwardCache {
    layers: Vec<LayerCache>,
    points: usize,
    pool_arg: Vec<usize>,
    head_inputs: Vec<Array1<f64>>,
    head_pre: Vec<Array1<f64>>,
}

impl Classifier {
    pub fn new<R: Rng + ?Sized>(spec: ClassifierSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let edge = spec.edge_layers();
        let mut features = Vec::with_capacity(spec.widths.len());
        let mut inputs = 3;
        for (l, &w) in spec.widths.iter().enumerate() {
            features.push(if l < edge {
                let center = Dense::new(2 * inputs, w, rng);
                // Split a 2c-input edge MLP into its center and neighbour halves.
                let neighbor = center.w.slice(ndarray::s![inputs.., ..]).to_owned();
                let center = Dense {
                    w: center.w.slice(ndarray::s![..inputs, ..]).to_owned(),
                    b: center.b,
                };
                FeatureLayer::Edge(EdgeLayer { center, neighbor })
            } else {
                FeatureLayer::Pointwise(Dense::new(inputs, w, rng))
            });
            inputs = w;
        }
        let mut head = Vec::with_capacity(spec.head.len() + 1);
        for &w in spec.head.iter().chain(std::iter::once(&spec.num_classes)) {
            head.push(Dense::new(inputs, w, rng));
            inputs = w;
        }
        Ok(Self {
            spec,
            features,
            head,
        })
    }

    /// Same architecture with every parameter zero; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for p in z.params_mut() {
            p.fill(0.0);
        }
        z
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.features {
            match layer {
                FeatureLayer::Pointwise(d) => out.extend(d.params()),
                FeatureLayer::Edge(e) => {
                    out.extend(e.center.params());
                    out.push(e.neighbor.as_slice().expect("standard layout"));
                }
            }
        }
        for d in &self.head {
            out.extend(d.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.features {
            match layer {
                FeatureLayer::Pointwise(d) => out.extend(d.params_mut()),
                FeatureLayer::Edge(e) => {
                    out.extend(e.center.params_mut());
                    out.push(e.neighbor.as_slice_mut().expect("standard layout"));
                }
            }
        }
        for d in &mut self.head {
            out.extend(d.params_mut());
        }
        out
    }

    /// Tensor names and shapes in `params()` order.
    pub fn tensor_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (l, layer) in self.features.iter().enumerate() {
            match layer {
                FeatureLayer::Pointwise(d) => {
                    out.push((format!("features.{l}.w"), d.w.shape().to_vec()));
                    out.push((format!("features.{l}.b"), d.b.shape().to_vec()));
                }
                FeatureLayer::Edge(e) => {
                    out.push((
                        format!("features.{l}.center.w"),
                        e.center.w.shape().to_vec(),
                    ));
                    out.push((
                        format!("features.{l}.center.b"),
                        e.center.b.shape().to_vec(),
                    ));
                    out.push((
                        format!("features.{l}.neighbor.w"),
                        e.neighbor.shape().to_vec(),
                    ));
                }
            }
        }
        for (l, d) in self.head.iter().enumerate() {
            out.push((format!("head.{l}.w"), d.w.shape().to_vec()));
            out.push((format!("head.{l}.b"), d.b.shape().to_vec()));
        }
        out
    }

    pub(crate) fn forward_cached(&self, points: ArrayView2<f64>) -> Result<(Logits, ForwardCache)> {
        check_points(points)?;
        let n = points.nrows();
        if self.spec.architecture == Architecture::EdgeConv && n < self.spec.knn_k {
            return Err(Error::TooFewPoints {
                k: self.spec.knn_k,
                n,
            });
        }
        let mut layers = Vec::with_capacity(self.features.len());
        let mut h = points.to_owned();
        for layer in &self.features {
            let (pre, winner) = match layer {
                FeatureLayer::Pointwise(d) => (d.forward(h.view()), None),
                FeatureLayer::Edge(e) => {
                    let graph = knn(h.view(), self.spec.knn_k, true)?;
                    let a = e.center.forward(h.view());
                    let b = h.dot(&e.neighbor);
                    let channels = a.ncols();
                    let mut pre = a;
                    let mut winner = Array2::zeros((n, channels));
                    for i in 0..n {
                        let nbrs = graph.row(i);
                        for c in 0..channels {
                            let mut best = nbrs[0];
                            let mut best_v = b[[best, c]];
                            for &j in nbrs.iter().skip(1) {
                                if b[[j, c]] > best_v {
                                    best_v = b[[j, c]];
                                    best = j;
                                }
                            }
                            pre[[i, c]] += best_v;
                            winner[[i, c]] = best;
                        }
                    }
                    (pre, Some(winner))
                }
            };
            let mut out = pre.clone();
            relu_inplace(&mut out);
            layers.push(LayerCache {
                input: std::mem::replace(&mut h, out),
                pre,
                winner,
            });
        }
        let (pooled, pool_arg) = max_pool(h.view());
        let mut head_inputs = Vec::with_capacity(self.head.len());
        let mut head_pre = Vec::with_capacity(self.head.len());
        let mut v = pooled;
        let last = self.head.len() - 1;
        for (l, d) in self.head.iter().enumerate() {
            let z = d.forward_vec(v.view());
            head_inputs.push(v);
            v = z.clone();
            if l < last {
                relu_inplace(&mut v);
            }
            head_pre.push(z);
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok((
            Logits(v),
            ForwardCache {
                layers,
                points: n,
                pool_arg,
                head_inputs,
                head_pre,
            },
        ))
    }

    /// Back-propagates `dlogits`; returns the input gradient and, if `grads`
    /// is given, accumulates parameter gradients into it.
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache,
        dlogits: &Array1<f64>,
        mut grads: Option<&mut Classifier>,
    ) -> Array2<f64> {
        let last = self.head.len() - 1;
        let mut dv = dlogits.clone();
        for l in (0..self.head.len()).rev() {
            if l < last {
                relu_backward(&mut dv, &cache.head_pre[l]);
            }
            let g = grads.as_deref_mut().map(|g| &mut g.head[l]);
            dv = self.head[l].backward_vec(cache.head_inputs[l].view(), dv.view(), g);
        }
        let mut dh = max_pool_backward(cache.points, &cache.pool_arg, dv.view());
        for l in (0..self.features.len()).rev() {
            let lc = &cache.layers[l];
            relu_backward(&mut dh, &lc.pre);
            let glayer = grads.as_deref_mut().map(|g| &mut g.features[l]);
            dh = match (&self.features[l], glayer) {
                (FeatureLayer::Pointwise(d), g) => {
                    let g = g.map(|g| match g {
                        FeatureLayer::Pointwise(gd) => gd,
                        FeatureLayer::Edge(_) => unreachable!("gradient buffer mirrors model"),
                    });
                    d.backward(lc.input.view(), dh.view(), g)
                }
                (FeatureLayer::Edge(e), g) => {
                    let winner = lc.winner.as_ref().expect("edge layer caches winners");
                    let mut db = Array2::<f64>::zeros(dh.raw_dim());
                    for ((i, c), &j) in winner.indexed_iter() {
                        db[[j, c]] += dh[[i, c]];
                    }
                    let g = g.map(|g| match g {
                        FeatureLayer::Edge(ge) => ge,
                        FeatureLayer::Pointwise(_) => unreachable!("gradient buffer mirrors model"),
                    });
                    let mut dx = match g {
                        Some(ge) => {
                            ge.neighbor += &lc.input.t().dot(&db);
                            e.center
                                .backward(lc.input.view(), dh.view(), Some(&mut ge.center))
                        }
                        None => e.center.backward(lc.input.view(), dh.view(), None),
                    };
                    dx += &db.dot(&e.neighbor.t());
                    dx
                }
            };
        }
        dh
    }

    pub fn predict(&self, points: ArrayView2<f64>) -> Result<usize> {
        Ok(self.forward(points)?.argmax())
    }
}

impl PointClassifier for Classifier {
    fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn forward(&self, points: ArrayView2<f64>) -> Result<Logits> {
        self.forward_cached(points).map(|(l, _)| l)
    }

    fn vjp(
        &self,
        points: ArrayView2<f64>,
        dloss: &mut dyn FnMut(&Logits) -> Array1<f64>,
    ) -> Result<(Logits, Array2<f64>)> {
        let (logits, cache) = self.forward_cached(points)?;
        let d = dloss(&logits);
        let dx = self.backward(&cache, &d, None);
        Ok((logits, dx))
    }
}
