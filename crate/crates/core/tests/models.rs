mod common;

use std::sync::OnceLock;

use common::{finite_difference, random_cloud, relative_error, small_classifier};
use ndarray::{Array1, Array2, ArrayView2};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use ssbench::dataset::{generate_synthetic, Dataset, DatasetSpec};
use ssbench::models::{
    accuracy, autoencode, chamfer, chamfer_with_grad, cross_entropy, input_gradient,
    load_autoencoder, load_classifier, save_autoencoder, save_classifier, train, train_autoencoder,
    AeTrainConfig, Architecture, Autoencoder, AutoencoderSpec, Classifier, ClassifierSpec, Logits,
    PointClassifier, TrainConfig,
};
use ssbench::{rng, Error, PointCloud};

const ARCHS: [Architecture; 2] = [Architecture::PointwiseMaxPool, Architecture::EdgeConv];

/// Finite-difference step. Larger steps straddle the ReLU, max-pool and
/// neighbour-selection kinks of these piecewise-smooth models.
const FD_STEP: f64 = 1e-6;

fn dataset() -> &'static Dataset {
    static DS: OnceLock<Dataset> = OnceLock::new();
    DS.get_or_init(|| generate_synthetic(&DatasetSpec::default()).unwrap())
}

fn trained_pointwise() -> &'static (Classifier, f64, f64) {
    static M: OnceLock<(Classifier, f64, f64)> = OnceLock::new();
    M.get_or_init(|| {
        let ds = dataset();
        let mut spec = ClassifierSpec::new(Architecture::PointwiseMaxPool, 8);
        spec.widths = vec![32, 64, 128];
        spec.head = vec![64];
        let mut model = Classifier::new(spec, &mut rng::stream(1)).unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &ds.train, &ds.test, &cfg).unwrap();
        (model, report.test_accuracy, report.train_accuracy)
    })
}

/// Logits are the sum over points of `x W`.
struct Linear {
    weights: Array2<f64>,
}

impl PointClassifier for Linear {
    fn num_classes(&self) -> usize {
        self.weights.ncols()
    }

    fn forward(&self, points: ArrayView2<f64>) -> ssbench::Result<Logits> {
        Ok(Logits(points.dot(&self.weights).sum_axis(ndarray::Axis(0))))
    }

    fn vjp(
        &self,
        points: ArrayView2<f64>,
        dloss: &mut dyn FnMut(&Logits) -> Array1<f64>,
    ) -> ssbench::Result<(Logits, Array2<f64>)> {
        let logits = self.forward(points)?;
        let d = dloss(&logits);
        let row = self.weights.dot(&d);
        let grad = Array2::from_shape_fn(points.raw_dim(), |(_, c)| row[c]);
        Ok((logits, grad))
    }
}

#[test]
fn shuffled_points_give_same_logits() {
    for arch in ARCHS {
        for seed in 0..5 {
            let model = small_classifier(arch, 8, seed);
            let cloud = random_cloud(64, 100 + seed);
            let mut order: Vec<usize> = (0..64).collect();
            order.shuffle(&mut rng::stream(seed));
            let shuffled = cloud.select(&order).unwrap();
            let a = model.forward(cloud.points()).unwrap();
            let b = model.forward(shuffled.points()).unwrap();
            let diff = (&a.0 - &b.0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff < 1e-5, "{arch:?} seed {seed}: {diff}");
        }
    }
}

#[test]
fn nan_cloud_is_rejected() {
    let model = small_classifier(Architecture::PointwiseMaxPool, 4, 0);
    let nan = Array2::from_elem((16, 3), f64::NAN);
    let err = model.forward(nan.view()).unwrap_err();
    assert!(err.to_string().contains("non-finite input"));
}

#[test]
fn edge_conv_needs_more_points_than_neighbours() {
    let model = small_classifier(Architecture::EdgeConv, 4, 0);
    let cloud = random_cloud(4, 1);
    assert!(matches!(
        model.forward(cloud.points()),
        Err(Error::TooFewPoints { .. })
    ));
}

#[test]
fn constant_loss_has_zero_gradient() {
    for arch in ARCHS {
        let model = small_classifier(arch, 4, 2);
        let cloud = random_cloud(32, 3);
        let (_, g) = input_gradient(
            &model,
            |l: &Logits| (7.0, Array1::zeros(l.len())),
            cloud.points(),
        )
        .unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn linear_model_gradient_is_its_weight_map() {
    let mut r = rng::stream(5);
    let weights = Array2::from_shape_fn((3, 4), |_| rand::Rng::random_range(&mut r, -1.0..1.0));
    let model = Linear {
        weights: weights.clone(),
    };
    let cloud = random_cloud(10, 6);
    let (value, g) = input_gradient(
        &model,
        |l: &Logits| (l.0.sum(), Array1::ones(l.len())),
        cloud.points(),
    )
    .unwrap();
    let expected = weights.sum_axis(ndarray::Axis(1));
    for row in g.rows() {
        assert_eq!(row, expected);
    }
    assert!((value - cloud.points().dot(&weights).sum()).abs() < 1e-12);
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut checked = 0;
    for arch in ARCHS {
        for seed in 0..10 {
            let model = small_classifier(arch, 5, 10 + seed);
            let cloud = random_cloud(24, 200 + seed);
            let label = (seed % 5) as usize;
            let loss = |l: &Logits| cross_entropy(l, label).unwrap();
            let (_, g) = input_gradient(&model, loss, cloud.points()).unwrap();
            let f = |x: &Array2<f64>| {
                cross_entropy(&model.forward(x.view()).unwrap(), label)
                    .unwrap()
                    .0
            };
            let fd = finite_difference(f, &cloud.points().to_owned(), FD_STEP);
            let err = relative_error(&g, &fd);
            assert!(err < 1e-3, "{arch:?} seed {seed}: relative error {err}");
            checked += 1;
        }
    }
    assert_eq!(checked, 20);
}

/// Random initialization is symmetric in the output units, so the expected
/// accuracy of an untrained model is exactly 1/C.
#[test]
fn untrained_model_is_near_chance() {
    let ds = dataset();
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let inits = 20;
    let mut total = 0.0;
    for seed in 0..inits {
        let mut spec = ClassifierSpec::new(Architecture::PointwiseMaxPool, 8);
        spec.widths = vec![32, 64, 128];
        spec.head = vec![64];
        let mut model = Classifier::new(spec, &mut rng::stream(seed)).unwrap();
        total += train(&mut model, &ds.train, &ds.test, &cfg)
            .unwrap()
            .test_accuracy;
    }
    let mean = total / inits as f64;
    assert!((mean - 12.5).abs() <= 5.0, "mean untrained accuracy {mean}");
}

#[test]
fn training_reaches_target_accuracy() {
    let (model, test_acc, train_acc) = trained_pointwise();
    assert!(*test_acc >= 90.0, "test accuracy {test_acc}");
    assert!(*train_acc >= 95.0, "train accuracy {train_acc}");
    assert_eq!(accuracy(model, &dataset().test).unwrap(), *test_acc);
}

#[test]
fn training_rejects_empty_split() {
    let ds = dataset();
    let mut model = small_classifier(Architecture::PointwiseMaxPool, 8, 0);
    let cfg = TrainConfig::default();
    assert!(matches!(
        train(&mut model, &[], &ds.test, &cfg),
        Err(Error::EmptySplit(_))
    ));
    assert!(matches!(
        train(&mut model, &ds.train, &[], &cfg),
        Err(Error::EmptySplit(_))
    ));
}

#[test]
fn checkpoint_reload_reproduces_logits() {
    let dir = tempfile::tempdir().unwrap();
    let (trained, _, _) = trained_pointwise();
    let edge = small_classifier(Architecture::EdgeConv, 8, 9);
    for (i, model) in [trained, &edge].into_iter().enumerate() {
        let path = dir.path().join(format!("m{i}.ckpt"));
        save_classifier(&path, model).unwrap();
        let back = load_classifier(&path).unwrap();
        assert_eq!(back.spec, model.spec);
        for probe in &dataset().test[..10] {
            let a = model.forward(probe.points()).unwrap();
            let b = back.forward(probe.points()).unwrap();
            let diff = (&a.0 - &b.0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if i == 0 {
                assert!(diff < 1e-6, "trained model logits moved by {diff}");
            } else {
                assert!(diff < 1e-4, "untrained model logits moved by {diff}");
            }
        }
    }
}

#[test]
fn untrained_autoencoder_output_is_finite() {
    let ae = Autoencoder::new(AutoencoderSpec::new(64), &mut rng::stream(0)).unwrap();
    let cloud = random_cloud(64, 1);
    let recon = autoencode(&ae, &cloud).unwrap();
    assert_eq!(recon.points().dim(), (64, 3));
    assert!(recon.points().iter().all(|v| v.is_finite()));
    assert!(autoencode(&ae, &random_cloud(32, 1)).is_err());
}

#[test]
fn autoencoder_chamfer_gradient_matches_finite_differences() {
    let mut spec = AutoencoderSpec::new(16);
    spec.latent_dim = 16;
    spec.encoder_widths = vec![16];
    spec.decoder_widths = vec![32];
    for seed in 0..5 {
        let ae = Autoencoder::new(spec.clone(), &mut rng::stream(seed)).unwrap();
        let x = random_cloud(16, 50 + seed).into_points();
        let target = random_cloud(16, 80 + seed).into_points();
        let (_, g) = ae
            .vjp(x.view(), &mut |recon| {
                Ok(chamfer_with_grad(recon.view(), target.view()).1)
            })
            .unwrap();
        let f = |p: &Array2<f64>| chamfer(ae.forward(p.view()).unwrap().view(), target.view());
        let fd = finite_difference(f, &x, FD_STEP);
        let err = relative_error(&g, &fd);
        assert!(err < 1e-3, "seed {seed}: relative error {err}");
    }
}

#[test]
fn trained_autoencoder_reconstructs_training_clouds() {
    let ds = dataset();
    let train_set: Vec<PointCloud> = ds.train.iter().step_by(4).cloned().collect();
    let mut ae = Autoencoder::new(AutoencoderSpec::new(256), &mut rng::stream(0)).unwrap();
    let cfg = AeTrainConfig {
        epochs: 100,
        ..AeTrainConfig::default()
    };
    train_autoencoder(&mut ae, &train_set, &cfg).unwrap();
    let mean: f64 = train_set
        .iter()
        .map(|c| chamfer(c.points(), ae.forward(c.points()).unwrap().view()))
        .sum::<f64>()
        / train_set.len() as f64;
    eprintln!("mean training chamfer after 100 epochs: {mean:.5}");
    assert!(mean <= 0.02, "mean chamfer {mean}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ae.ckpt");
    save_autoencoder(&path, &ae).unwrap();
    let back = load_autoencoder(&path).unwrap();
    let probe = &train_set[0];
    assert_eq!(
        back.forward(probe.points()).unwrap(),
        ae.forward(probe.points()).unwrap()
    );
}

fn brute_chamfer(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let nearest = |p: ndarray::ArrayView1<f64>, set: &Array2<f64>| {
        set.rows()
            .into_iter()
            .map(|q| {
                let d = &p - &q;
                d.dot(&d)
            })
            .fold(f64::INFINITY, f64::min)
    };
    let ab: f64 = a.rows().into_iter().map(|p| nearest(p, b)).sum::<f64>() / a.nrows() as f64;
    let ba: f64 = b.rows().into_iter().map(|p| nearest(p, a)).sum::<f64>() / b.nrows() as f64;
    ab + ba
}

#[test]
fn chamfer_examples() {
    let a = ndarray::array![[0.0, 0.0, 0.0]];
    let b = ndarray::array![[1.0, 0.0, 0.0]];
    assert_eq!(chamfer(a.view(), b.view()), 2.0);
    let x = random_cloud(30, 4).into_points();
    assert_eq!(chamfer(x.view(), x.view()), 0.0);
}

proptest! {
    #[test]
    fn chamfer_matches_brute_force_and_is_symmetric(
        na in 1usize..40,
        nb in 1usize..40,
        seed in any::<u64>(),
    ) {
        let a = random_cloud(na.max(2), seed).into_points();
        let b = random_cloud(nb.max(2), seed ^ 0x55).into_points();
        let fast = chamfer(a.view(), b.view());
        prop_assert_eq!(fast, brute_chamfer(&a, &b));
        prop_assert_eq!(fast, chamfer(b.view(), a.view()));
        prop_assert!(fast > 0.0);
    }
}
