//! Synthetic shape dataset and directory ingestion.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_unit_sphere, read_cloud, write_pcb, write_xyzl, PointCloud};
use crate::rng;

pub const SUPPORTED_SHAPES: [&str; 8] = [
    "sphere", "cube", "cylinder", "cone", "torus", "plane", "pyramid", "helix",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub classes: Vec<String>,
    pub samples_per_class: usize,
    pub points_per_cloud: usize,
    pub noise_sigma: f64,
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub rng_seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            classes: SUPPORTED_SHAPES.iter().map(|s| s.to_string()).collect(),
            samples_per_class: 100,
            points_per_cloud: 256,
            noise_sigma: 0.01,
            train_fraction: 0.7,
            test_fraction: 0.3,
            rng_seed: 0,
        }
    }
}

impl DatasetSpec {
    /// The first `count` supported shapes as classes.
    pub fn with_class_count(count: usize) -> Result<Self> {
        if count == 0 || count > SUPPORTED_SHAPES.len() {
            return Err(Error::Config(format!(
                "class count must be in 1..={}",
                SUPPORTED_SHAPES.len()
            )));
        }
        Ok(Self {
            classes: SUPPORTED_SHAPES[..count]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("at least one class is required".into()));
        }
        for name in &self.classes {
            if !SUPPORTED_SHAPES.contains(&name.as_str()) {
                return Err(Error::UnknownShape {
                    name: name.clone(),
                    supported: SUPPORTED_SHAPES.join(", "),
                });
            }
        }
        if self.samples_per_class == 0 {
            return Err(Error::Config("samples_per_class must be at least 1".into()));
        }
        if self.points_per_cloud < 16 {
            return Err(Error::Config("points_per_cloud must be at least 16".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(
                "noise_sigma must be finite and non-negative".into(),
            ));
        }
        let fr = (self.train_fraction, self.test_fraction);
        if fr.0 < 0.0 || fr.1 < 0.0 || (fr.0 + fr.1 - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "train/test fractions {fr:?} must be non-negative and sum to 1"
            )));
        }
        Ok(())
    }

    pub fn train_count(&self) -> usize {
        ((self.train_fraction * self.samples_per_class as f64).round() as usize)
            .min(self.samples_per_class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub train: Vec<PointCloud>,
    pub test: Vec<PointCloud>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

/// Samples every cloud uniformly from its shape's surface, adds Gaussian
/// jitter and normalizes to the unit sphere. The split is stratified: the
/// first `train_count()` samples of each class go to the training set.
pub fn generate_synthetic(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let n_train = spec.train_count();
    let jobs: Vec<(usize, usize)> = (0..spec.classes.len())
        .flat_map(|c| (0..spec.samples_per_class).map(move |i| (c, i)))
        .collect();
    let clouds: Vec<PointCloud> = jobs
        .par_iter()
        .map(|&(class, index)| {
            let mut r = rng::derive_stream(spec.rng_seed, &[class as u64, index as u64]);
            let shape = spec.classes[class].as_str();
            let mut pts = sample_shape(shape, spec.points_per_cloud, &mut r);
            if spec.noise_sigma > 0.0 {
                let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
                pts.mapv_inplace(|v| v + noise.sample(&mut r));
            }
            let cloud = PointCloud::new(pts)?
                .with_label(class)
                .with_id(format!("{shape}_{index:04}"));
            normalize_unit_sphere(&cloud)
        })
        .collect::<Result<_>>()?;

    let mut train = Vec::new();
    let mut test = Vec::new();
    for ((_, index), cloud) in jobs.iter().zip(clouds) {
        if *index < n_train {
            train.push(cloud);
        } else {
            test.push(cloud);
        }
    }
    Ok(Dataset {
        class_names: spec.classes.clone(),
        train,
        test,
    })
}

fn sample_shape<R: Rng>(shape: &str, n: usize, r: &mut R) -> Array2<f64> {
    let mut pts = Array2::zeros((n, 3));
    let mut put = |i: usize, p: [f64; 3]| {
        pts[[i, 0]] = p[0];
        pts[[i, 1]] = p[1];
        pts[[i, 2]] = p[2];
    };
    match shape {
        "sphere" => {
            // Antipodal pairs keep the centroid at the sphere center, so the
            // normalized points lie exactly on the unit sphere.
            let mut i = 0;
            while i < n {
                let p = unit_vector(r);
                put(i, p);
                if i + 1 < n {
                    put(i + 1, [-p[0], -p[1], -p[2]]);
                }
                i += 2;
            }
        }
        "cube" => {
            let half = [
                r.random_range(0.4..0.6),
                r.random_range(0.4..0.6),
                r.random_range(0.4..0.6),
            ];
            // Face pairs orthogonal to x, y, z.
            let areas = [half[1] * half[2], half[0] * half[2], half[0] * half[1]];
            for i in 0..n {
                let axis = pick(r, &areas);
                let mut p = [0.0; 3];
                for (d, v) in p.iter_mut().enumerate() {
                    *v = r.random_range(-half[d]..half[d]);
                }
                p[axis] = if r.random::<bool>() {
                    half[axis]
                } else {
                    -half[axis]
                };
                put(i, p);
            }
        }
        "cylinder" => {
            let radius = r.random_range(0.35..0.6);
            let height = r.random_range(1.2..2.0);
            let areas = [
                2.0 * PI * radius * height,
                PI * radius * radius,
                PI * radius * radius,
            ];
            for i in 0..n {
                let theta = r.random_range(0.0..2.0 * PI);
                let p = match pick(r, &areas) {
                    0 => [
                        radius * theta.cos(),
                        radius * theta.sin(),
                        r.random_range(0.0..height),
                    ],
                    part => {
                        let rr = radius * r.random::<f64>().sqrt();
                        let z = if part == 1 { 0.0 } else { height };
                        [rr * theta.cos(), rr * theta.sin(), z]
                    }
                };
                put(i, p);
            }
        }
        "cone" => {
            let radius: f64 = r.random_range(0.5..0.8);
            let height = r.random_range(1.0..1.8);
            let slant = (radius * radius + height * height).sqrt();
            let areas = [PI * radius * slant, PI * radius * radius];
            for i in 0..n {
                let theta = r.random_range(0.0..2.0 * PI);
                let p = if pick(r, &areas) == 0 {
                    // Distance from the apex grows like sqrt(u) for uniform area.
                    let t = r.random::<f64>().sqrt();
                    [
                        radius * t * theta.cos(),
                        radius * t * theta.sin(),
                        height * (1.0 - t),
                    ]
                } else {
                    let rr = radius * r.random::<f64>().sqrt();
                    [rr * theta.cos(), rr * theta.sin(), 0.0]
                };
                put(i, p);
            }
        }
        "torus" => {
            let major = 1.0;
            let minor = r.random_range(0.25..0.45);
            let mut i = 0;
            while i < n {
                let u = r.random_range(0.0..2.0 * PI);
                let v = r.random_range(0.0..2.0 * PI);
                // Area element is proportional to (R + r cos v).
                if r.random::<f64>() * (major + minor) > major + minor * v.cos() {
                    continue;
                }
                let w = major + minor * v.cos();
                put(i, [w * u.cos(), w * u.sin(), minor * v.sin()]);
                i += 1;
            }
        }
        "plane" => {
            let a = r.random_range(0.8..1.2);
            let b = r.random_range(0.8..1.2);
            for i in 0..n {
                put(i, [r.random_range(-a..a), r.random_range(-b..b), 0.0]);
            }
        }
        "pyramid" => {
            let half: f64 = r.random_range(0.6..0.9);
            let height = r.random_range(0.8..1.4);
            let apex = [0.0, 0.0, height];
            let corners = [
                [-half, -half, 0.0],
                [half, -half, 0.0],
                [half, half, 0.0],
                [-half, half, 0.0],
            ];
            let side = 0.5 * 2.0 * half * (height * height + half * half).sqrt();
            let areas = [4.0 * half * half, side, side, side, side];
            for i in 0..n {
                let p = match pick(r, &areas) {
                    0 => [
                        r.random_range(-half..half),
                        r.random_range(-half..half),
                        0.0,
                    ],
                    f => triangle_point(r, corners[f - 1], corners[f % 4], apex),
                };
                put(i, p);
            }
        }
        "helix" => {
            let radius = r.random_range(0.6..1.0);
            let turns = r.random_range(2.0..4.0);
            let height = r.random_range(1.5..3.0);
            for i in 0..n {
                let t = r.random::<f64>();
                let a = 2.0 * PI * turns * t;
                put(i, [radius * a.cos(), radius * a.sin(), height * t]);
            }
        }
        other => unreachable!("shape {other} passed validation"),
    }
    pts
}

fn unit_vector<R: Rng>(r: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            r.sample(StandardNormal),
            r.sample(StandardNormal),
            r.sample(StandardNormal),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-9 {
            return [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    }
}

fn pick<R: Rng>(r: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = r.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn triangle_point<R: Rng>(r: &mut R, a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> [f64; 3] {
    let s = r.random::<f64>().sqrt();
    let t = r.random::<f64>();
    let (wa, wb, wc) = (1.0 - s, s * (1.0 - t), s * t);
    [
        wa * a[0] + wb * b[0] + wc * c[0],
        wa * a[1] + wb * b[1] + wc * c[1],
        wa * a[2] + wb * b[2] + wc * c[2],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Xyzl,
    Pcb,
}

/// Writes clouds as `<id>.<ext>` plus `labels.csv`. Clouds without an id
/// are named by position.
pub fn write_dataset(
    dir: &Path,
    clouds: &[PointCloud],
    num_classes: usize,
    format: FileFormat,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let labels_path = dir.join("labels.csv");
    let mut w =
        csv::Writer::from_path(&labels_path).map_err(|e| Error::io(&labels_path, e.into()))?;
    let io_err = |e: csv::Error| Error::io(&labels_path, e.into());
    w.write_record(["filename", "label"]).map_err(io_err)?;
    for (i, cloud) in clouds.iter().enumerate() {
        let stem = cloud.id.clone().unwrap_or_else(|| format!("cloud_{i:05}"));
        let name = match format {
            FileFormat::Xyzl => format!("{stem}.xyzl"),
            FileFormat::Pcb => format!("{stem}.pcb"),
        };
        let path = dir.join(&name);
        match format {
            FileFormat::Xyzl => write_xyzl(&path, cloud, num_classes)?,
            FileFormat::Pcb => write_pcb(&path, cloud)?,
        }
        let label = cloud.label.map(|l| l.to_string()).unwrap_or_default();
        w.write_record([name.as_str(), label.as_str()])
            .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(&labels_path, e))
}

/// Loads every `*.xyzl` / `*.pcb` file in `dir`, sorted by file name, with
/// labels from `labels.csv` (`filename,label`). Clouds are normalized on
/// load and carry their file stem as id.
pub fn load_dataset(dir: &Path) -> Result<Vec<PointCloud>> {
    load_clouds(dir)?
        .iter()
        .map(normalize_unit_sphere)
        .collect()
}

/// Like [`load_dataset`] but keeps the stored coordinates.
pub fn load_clouds(dir: &Path) -> Result<Vec<PointCloud>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<String> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".xyzl") || name.ends_with(".pcb") {
            files.push(name);
        }
    }
    if files.is_empty() {
        return Err(Error::NoPointFiles(dir.to_path_buf()));
    }
    files.sort();

    let labels_path = dir.join("labels.csv");
    if !labels_path.exists() {
        return Err(Error::MissingLabels(dir.to_path_buf()));
    }
    let labels = read_labels(&labels_path)?;

    let mut loaded = Vec::with_capacity(files.len());
    let mut declared_classes = 0usize;
    for name in &files {
        let (cloud, classes) = read_cloud(&dir.join(name))?;
        declared_classes = declared_classes.max(classes.unwrap_or(0));
        loaded.push((name, cloud));
    }

    let mut out = Vec::with_capacity(loaded.len());
    for (name, cloud) in loaded {
        let label = *labels.get(name.as_str()).ok_or_else(|| Error::Parse {
            file: labels_path.display().to_string(),
            location: "labels".into(),
            message: format!("no label for {name}"),
        })?;
        if label < 0 || (declared_classes > 0 && label as usize >= declared_classes) {
            return Err(Error::LabelOutOfRange {
                file: name.clone(),
                label,
                classes: declared_classes,
            });
        }
        let stem = name.rsplit_once('.').map(|(s, _)| s).unwrap_or(name);
        out.push(cloud.with_label(label as usize).with_id(stem));
    }
    Ok(out)
}

fn read_labels(path: &Path) -> Result<BTreeMap<String, i64>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::io(path, e.into()))?
        .clone();
    if headers.len() != 2 || &headers[0] != "filename" || &headers[1] != "label" {
        return Err(Error::Parse {
            file: path.display().to_string(),
            location: "line 1".into(),
            message: "header must be 'filename,label'".into(),
        });
    }
    let mut labels = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse {
            file: path.display().to_string(),
            location: format!("line {line}"),
            message: e.to_string(),
        })?;
        let label: i64 = record[1].trim().parse().map_err(|_| Error::Parse {
            file: path.display().to_string(),
            location: format!("line {line}"),
            message: format!("'{}' is not an integer label", &record[1]),
        })?;
        labels.insert(record[0].trim().to_string(), label);
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(per_class: usize) -> DatasetSpec {
        DatasetSpec {
            samples_per_class: per_class,
            rng_seed: 11,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn counts_and_labels() {
        let ds = generate_synthetic(&small_spec(100)).unwrap();
        assert_eq!(ds.train.len() + ds.test.len(), 800);
        assert_eq!(ds.train.len(), 560);
        for c in ds.train.iter().chain(&ds.test) {
            assert_eq!(c.len(), 256);
            assert!(c.label.unwrap() < 8);
        }
        let mut seen = [0usize; 8];
        for c in ds.train.iter().chain(&ds.test) {
            seen[c.label.unwrap()] += 1;
        }
        assert_eq!(seen, [100; 8]);
    }

    #[test]
    fn noiseless_sphere_is_on_unit_sphere() {
        let spec = DatasetSpec {
            classes: vec!["sphere".into()],
            noise_sigma: 0.0,
            ..small_spec(5)
        };
        let ds = generate_synthetic(&spec).unwrap();
        for c in ds.train.iter().chain(&ds.test) {
            for r in c.points().rows() {
                assert!((r.dot(&r).sqrt() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_synthetic(&small_spec(6)).unwrap();
        let b = generate_synthetic(&small_spec(6)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&DatasetSpec {
            rng_seed: 12,
            ..small_spec(6)
        })
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn splits_are_disjoint_and_exhaustive() {
        let ds = generate_synthetic(&small_spec(10)).unwrap();
        let mut ids: Vec<&str> = ds
            .train
            .iter()
            .chain(&ds.test)
            .map(|c| c.id.as_deref().unwrap())
            .collect();
        let total = ids.len();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), total);
        assert_eq!(total, 80);
    }

    #[test]
    fn every_cloud_is_normalized() {
        let ds = generate_synthetic(&small_spec(3)).unwrap();
        for c in ds.train.iter().chain(&ds.test) {
            assert!(c.centroid().iter().all(|v| v.abs() < 1e-6));
            assert!((c.max_norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn unknown_shape_lists_supported() {
        let spec = DatasetSpec {
            classes: vec!["sphere".into(), "teapot".into()],
            ..small_spec(2)
        };
        let err = generate_synthetic(&spec).unwrap_err().to_string();
        assert!(err.contains("teapot") && err.contains("helix"), "{err}");
    }

    #[test]
    fn empty_directory_has_no_point_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::NoPointFiles(_))
        ));
    }

    #[test]
    fn single_file_dataset() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.xyzl"), "3 2\n0 0 0\n1 0 0\n0 1 0\n").unwrap();
        fs::write(dir.path().join("labels.csv"), "filename,label\na.xyzl,1\n").unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds[0].label, Some(1));
        assert!((ds[0].max_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_labels_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.xyzl"), "2 2\n0 0 0\n1 0 0\n").unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::MissingLabels(_))
        ));
    }

    #[test]
    fn label_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.xyzl"), "2 2\n0 0 0\n1 0 0\n").unwrap();
        fs::write(dir.path().join("labels.csv"), "filename,label\na.xyzl,2\n").unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn non_numeric_coordinate_names_line() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.xyzl"), "2 2\n0 0 0\n1 zero 0\n").unwrap();
        fs::write(dir.path().join("labels.csv"), "filename,label\na.xyzl,0\n").unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn write_then_load_preserves_order_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(&small_spec(2)).unwrap();
        write_dataset(dir.path(), &ds.train, 8, FileFormat::Xyzl).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), ds.train.len());
        let mut expected = ds.train.clone();
        expected.sort_by(|a, b| a.id.cmp(&b.id));
        for (a, b) in back.iter().zip(&expected) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.id, b.id);
            let err = (&a.points() - &b.points())
                .mapv(f64::abs)
                .fold(0.0, |m: f64, v| m.max(*v));
            assert!(err < 1e-12);
        }
    }
}
