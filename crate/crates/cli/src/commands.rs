use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::Serialize;

use ssbench::attacks::{run_attack, AttackConfig, AttackKind, AttackResources};
use ssbench::dataset::{
    generate_synthetic, load_clouds, load_dataset, write_dataset, DatasetSpec, FileFormat,
};
use ssbench::defenses::{DefenseConfig, DefenseKind};
use ssbench::evaluation::{
    emit_report, run_matrix, run_sweep, select_subset, MatrixAttack, MatrixConfig, MatrixInputs,
    NamedModel, ReportFormat, SweepParam, TransferReport,
};
use ssbench::models::{
    load_autoencoder, load_classifier, save_autoencoder, train, train_autoencoder, AeTrainConfig,
    Architecture, Autoencoder, AutoencoderSpec, Classifier, ClassifierSpec, TrainConfig,
};
use ssbench::{rng, PointCloud};

use crate::config::{parse_values, Manifest, RunConfig, MANIFEST_VERSION};

pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

type Outcome<T> = Result<T, Failure>;

trait Classify<T> {
    fn usage(self) -> Outcome<T>;
    fn runtime(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Outcome<T> {
        self.map_err(|e| Failure::Usage(e.into()))
    }

    fn runtime(self) -> Outcome<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn usage_err<T>(msg: String) -> Outcome<T> {
    Err(Failure::Usage(anyhow!(msg)))
}

pub fn run(command: &str, cfg: &RunConfig) -> Outcome<()> {
    if let Some(n) = cfg.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker pool")
            .runtime()?;
    }
    let outputs = match command {
        "gen-data" => gen_data(cfg)?,
        "train" => train_model(cfg)?,
        "attack" => attack(cfg)?,
        "defend" => defend(cfg)?,
        "eval" => eval(cfg)?,
        "sweep" => sweep(cfg)?,
        "report" => report(cfg)?,
        other => return usage_err(format!("unknown command '{other}'")),
    };
    let manifest = Manifest {
        manifest: MANIFEST_VERSION.into(),
        command: command.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        outputs,
    };
    write_json(&cfg.out.join("manifest.json"), &manifest)?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Outcome<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))
            .runtime()?;
    }
    let text = serde_json::to_string_pretty(value).runtime()?;
    fs::write(path, text + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .runtime()
}

fn relative(out: &Path, path: &Path) -> String {
    path.strip_prefix(out).unwrap_or(path).display().to_string()
}

fn require<'a>(value: &'a Option<PathBuf>, key: &str) -> Outcome<&'a PathBuf> {
    value
        .as_ref()
        .ok_or_else(|| Failure::Usage(anyhow!("missing required setting --{key}")))
}

/// `dir/<split>` when it exists, otherwise `dir` itself.
fn split_dir(dir: &Path, split: &str) -> PathBuf {
    let sub = dir.join(split);
    if sub.is_dir() {
        sub
    } else {
        dir.to_path_buf()
    }
}

fn file_format(name: &str) -> Outcome<FileFormat> {
    match name {
        "xyzl" => Ok(FileFormat::Xyzl),
        "pcb" => Ok(FileFormat::Pcb),
        other => usage_err(format!("unknown format '{other}' (expected xyzl or pcb)")),
    }
}

fn num_classes(clouds: &[PointCloud]) -> usize {
    clouds
        .iter()
        .filter_map(|c| c.label)
        .max()
        .map_or(0, |m| m + 1)
}

fn gen_data(cfg: &RunConfig) -> Outcome<Vec<String>> {
    let format = file_format(&cfg.format)?;
    let mut spec = DatasetSpec::with_class_count(cfg.classes).usage()?;
    spec.samples_per_class = cfg.per_class;
    spec.points_per_cloud = cfg.points;
    spec.noise_sigma = cfg.noise;
    spec.train_fraction = cfg.train_fraction;
    spec.test_fraction = 1.0 - cfg.train_fraction;
    spec.rng_seed = cfg.seed;
    spec.validate().usage()?;
    let data = generate_synthetic(&spec).runtime()?;
    let classes = data.num_classes();
    let train_dir = cfg.out.join("train");
    let test_dir = cfg.out.join("test");
    write_dataset(&train_dir, &data.train, classes, format).runtime()?;
    write_dataset(&test_dir, &data.test, classes, format).runtime()?;
    let names_path = cfg.out.join("classes.json");
    write_json(&names_path, &data.class_names)?;
    println!(
        "wrote {} train and {} test clouds to {}",
        data.train.len(),
        data.test.len(),
        cfg.out.display()
    );
    Ok(vec![
        relative(&cfg.out, &train_dir),
        relative(&cfg.out, &test_dir),
        relative(&cfg.out, &names_path),
    ])
}

#[derive(Serialize)]
struct TrainMetrics {
    model: String,
    test_accuracy: Option<f64>,
    train_accuracy: Option<f64>,
    epoch_losses: Vec<f64>,
}

fn train_model(cfg: &RunConfig) -> Outcome<Vec<String>> {
    let data = require(&cfg.data, "data")?;
    let train_set = load_dataset(&split_dir(data, "train")).runtime()?;
    let metrics_path = cfg.out.join("metrics.json");
    if cfg.model == "autoencoder" {
        let n = train_set[0].len();
        let mut spec = AutoencoderSpec::new(n);
        spec.latent_dim = cfg.latent;
        let mut ae = Autoencoder::new(spec, &mut rng::stream(cfg.seed)).usage()?;
        let ae_cfg = AeTrainConfig {
            epochs: cfg.epochs,
            lr: cfg.lr,
            batch_size: cfg.batch_size,
            rng_seed: cfg.seed,
        };
        let losses = train_autoencoder(&mut ae, &train_set, &ae_cfg).runtime()?;
        let path = cfg.out.join("autoencoder.ckpt");
        save_autoencoder(&path, &ae).runtime()?;
        println!(
            "final chamfer {:.5}",
            losses.last().copied().unwrap_or(f64::NAN)
        );
        write_json(
            &metrics_path,
            &TrainMetrics {
                model: cfg.model.clone(),
                test_accuracy: None,
                train_accuracy: None,
                epoch_losses: losses,
            },
        )?;
        return Ok(vec![
            relative(&cfg.out, &path),
            relative(&cfg.out, &metrics_path),
        ]);
    }
    let arch: Architecture = cfg.model.parse().usage()?;
    let test_set = load_dataset(&split_dir(data, "test")).runtime()?;
    let mut spec = ClassifierSpec::new(arch, num_classes(&train_set).max(num_classes(&test_set)));
    if let Some(w) = &cfg.widths {
        spec.widths = w.clone();
    }
    if let Some(h) = &cfg.head {
        spec.head = h.clone();
    }
    spec.knn_k = cfg.knn_k;
    let mut model = Classifier::new(spec, &mut rng::stream(cfg.seed)).usage()?;
    let path = cfg.out.join("model.ckpt");
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        lr: cfg.lr,
        batch_size: cfg.batch_size,
        rng_seed: cfg.seed,
        checkpoint: Some(path.clone()),
        ..TrainConfig::default()
    };
    let report = train(&mut model, &train_set, &test_set, &train_cfg).runtime()?;
    println!("test accuracy {:.2}%", report.test_accuracy);
    write_json(
        &metrics_path,
        &TrainMetrics {
            model: cfg.model.clone(),
            test_accuracy: Some(report.test_accuracy),
            train_accuracy: Some(report.train_accuracy),
            epoch_losses: report.epoch_losses,
        },
    )?;
    Ok(vec![
        relative(&cfg.out, &path),
        relative(&cfg.out, &metrics_path),
    ])
}

/// Preset for `name` with any attack settings of `cfg` applied on top.
fn attack_config(name: &str, cfg: &RunConfig) -> Outcome<AttackConfig> {
    let mut a = AttackConfig::from_name(name).usage()?;
    if let Some(v) = cfg.pa {
        a.policy.p_a = v;
    }
    if let Some(v) = cfg.ps {
        a.policy.p_s = v;
    }
    if let Some(v) = cfg.epsilon {
        a.epsilon = v;
    }
    if let Some(v) = cfg.iterations {
        a.iterations = v;
    }
    if let Some(v) = cfg.attack_lr {
        a.lr = v;
    }
    if let Some(v) = cfg.binary_search_steps {
        if !a.ss_enabled {
            a.binary_search_steps = v;
        }
    }
    if let Some(v) = cfg.kappa {
        a.kappa = v;
    }
    if let Some(v) = cfg.gamma {
        a.gamma = v;
    }
    a.targeted = cfg.targeted;
    a.target_class = cfg.target_class;
    a.validate().usage()?;
    Ok(a)
}

fn defense_config(name: &str, cfg: &RunConfig) -> Outcome<DefenseConfig> {
    let kind: DefenseKind = name.parse().usage()?;
    let d = DefenseConfig {
        kind,
        srs_drop: cfg.srs_drop,
        sor_k: cfg.sor_k,
        sor_alpha: cfg.sor_alpha,
        rng_seed: cfg.seed,
    };
    d.validate().usage()?;
    Ok(d)
}

fn load_ae(cfg: &RunConfig, needed: bool) -> Outcome<Option<Autoencoder>> {
    match (&cfg.autoencoder, needed) {
        (Some(path), _) => Ok(Some(load_autoencoder(path).runtime()?)),
        (None, true) => usage_err("advpc attacks need --autoencoder".into()),
        (None, false) => Ok(None),
    }
}

#[derive(Serialize)]
struct SampleResult {
    id: String,
    label: usize,
    target: Option<usize>,
    success: bool,
    linf_norm: f64,
    l2_norm: f64,
    iterations_used: usize,
    final_loss: std::collections::BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct AttackSummary {
    attack: String,
    config: AttackConfig,
    samples: usize,
    success_rate: f64,
    results: Vec<SampleResult>,
}

fn attack(cfg: &RunConfig) -> Outcome<Vec<String>> {
    let victim_path = require(&cfg.victim, "victim")?;
    let data = require(&cfg.data, "data")?;
    let acfg = attack_config(&cfg.attack, cfg)?;
    let ae = load_ae(cfg, acfg.kind == AttackKind::AdvPc)?;
    let victim = load_classifier(victim_path).runtime()?;
    let test = load_dataset(&split_dir(data, "test")).runtime()?;
    let subset = select_subset(&test, cfg.seed, cfg.samples);
    let resources = AttackResources {
        autoencoder: ae.as_ref(),
        basis: None,
    };
    let results = subset
        .par_iter()
        .map(|cloud| {
            let mut c = acfg.clone();
            let key = rng::hash_tag(cloud.id.as_deref().unwrap_or(""));
            c.rng_seed = rng::derive_seed(cfg.seed, &[key]);
            run_attack(&victim, cloud, &c, &resources)
        })
        .collect::<Result<Vec<_>, _>>()
        .runtime()?;

    let adv_dir = cfg.out.join("adv");
    let advs: Vec<PointCloud> = results.iter().map(|r| r.adversarial.clone()).collect();
    write_dataset(&adv_dir, &advs, victim.spec.num_classes, FileFormat::Pcb).runtime()?;
    let successes = results.iter().filter(|r| r.success).count();
    let summary = AttackSummary {
        attack: acfg.name(),
        config: acfg.clone(),
        samples: results.len(),
        success_rate: 100.0 * successes as f64 / results.len().max(1) as f64,
        results: results
            .iter()
            .map(|r| SampleResult {
                id: r.adversarial.id.clone().unwrap_or_default(),
                label: r.adversarial.label.unwrap_or_default(),
                target: r.target,
                success: r.success,
                linf_norm: r.linf_norm,
                l2_norm: r.l2_norm,
                iterations_used: r.iterations_used,
                final_loss: r.final_loss_terms.clone(),
            })
            .collect(),
    };
    let summary_path = cfg.out.join("attack.json");
    write_json(&summary_path, &summary)?;
    println!(
        "{}: white-box success {:.1}% on {} samples",
        summary.attack, summary.success_rate, summary.samples
    );
    Ok(vec![
        relative(&cfg.out, &adv_dir),
        relative(&cfg.out, &summary_path),
    ])
}

fn defend(cfg: &RunConfig) -> Outcome<Vec<String>> {
    let input = require(&cfg.input, "input")?;
    let dcfg = defense_config(&cfg.defense, cfg)?;
    let clouds = load_clouds(input).runtime()?;
    let defended = clouds
        .par_iter()
        .map(|c| {
            let key = rng::hash_tag(c.id.as_deref().unwrap_or(""));
            dcfg.apply(c, &mut rng::derive_stream(cfg.seed, &[key]))
        })
        .collect::<Result<Vec<_>, _>>()
        .runtime()?;
    let dir = cfg.out.join("defended");
    write_dataset(&dir, &defended, num_classes(&clouds), FileFormat::Xyzl).runtime()?;
    let kept: usize = defended.iter().map(|c| c.len()).sum();
    let total: usize = clouds.iter().map(|c| c.len()).sum();
    println!("{}: kept {kept} of {total} points", dcfg.kind.name());
    Ok(vec![relative(&cfg.out, &dir)])
}

fn model_name(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match path.parent().and_then(|p| p.file_name()) {
        Some(parent) if stem == "model" => parent.to_string_lossy().into_owned(),
        _ => stem,
    }
}

struct Loaded {
    names: Vec<String>,
    models: Vec<Classifier>,
    ae: Option<Autoencoder>,
    test: Vec<PointCloud>,
}

fn load_matrix_inputs(cfg: &RunConfig, needs_ae: bool) -> Outcome<Loaded> {
    if cfg.models.len() < 2 {
        return usage_err("--models needs at least two checkpoints".into());
    }
    let names: Vec<String> = cfg.models.iter().map(|p| model_name(p)).collect();
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return usage_err(format!("two models share the name '{n}'"));
        }
    }
    let data = require(&cfg.data, "data")?;
    let models = cfg
        .models
        .iter()
        .map(|p| load_classifier(p))
        .collect::<Result<Vec<_>, _>>()
        .runtime()?;
    Ok(Loaded {
        names,
        models,
        ae: load_ae(cfg, needs_ae)?,
        test: load_dataset(&split_dir(data, "test")).runtime()?,
    })
}

fn matrix_inputs(loaded: &Loaded) -> MatrixInputs<'_> {
    MatrixInputs {
        models: loaded
            .names
            .iter()
            .zip(&loaded.models)
            .map(|(name, m)| NamedModel {
                name: name.clone(),
                model: m,
            })
            .collect(),
        autoencoder: loaded.ae.as_ref(),
        test: &loaded.test,
    }
}

fn report_formats(cfg: &RunConfig) -> Outcome<Vec<ReportFormat>> {
    cfg.formats
        .iter()
        .map(|f| match f.as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            other => usage_err(format!(
                "unknown report format '{other}' (expected csv, json, svg)"
            )),
        })
        .collect()
}

fn matrix_seeds(cfg: &RunConfig) -> Vec<u64> {
    cfg.seeds
        .iter()
        .map(|&s| rng::derive_seed(cfg.seed, &[s]))
        .collect()
}

fn write_report(cfg: &RunConfig, report: &TransferReport) -> Outcome<Vec<String>> {
    let formats = report_formats(cfg)?;
    let paths = emit_report(report, &cfg.out, &formats).runtime()?;
    for e in report.entries.iter().filter(|e| e.error.is_some()) {
        eprintln!(
            "warning: {} -> {} ({}, {}): {}",
            e.victim,
            e.transfer,
            e.attack,
            e.defense,
            e.error.as_deref().unwrap_or_default()
        );
    }
    Ok(paths.iter().map(|p| relative(&cfg.out, p)).collect())
}

fn eval(cfg: &RunConfig) -> Outcome<Vec<String>> {
    let attacks = cfg
        .attacks
        .iter()
        .map(|name| match name.as_str() {
            "none" => Ok(MatrixAttack::none()),
            name => attack_config(name, cfg).map(MatrixAttack::from_config),
        })
        .collect::<Outcome<Vec<_>>>()?;
    let defenses = cfg
        .defenses
        .iter()
        .map(|d| defense_config(d, cfg))
        .collect::<Outcome<Vec<_>>>()?;
    let needs_ae = attacks.iter().any(|a| {
        a.config
            .as_ref()
            .is_some_and(|c| c.kind == AttackKind::AdvPc)
    });
    let loaded = load_matrix_inputs(cfg, needs_ae)?;
    let matrix = MatrixConfig {
        attacks,
        defenses,
        seeds: matrix_seeds(cfg),
        samples: cfg.samples,
        victims: cfg.victims.clone(),
    };
    let report = run_matrix(&matrix_inputs(&loaded), &matrix).runtime()?;
    for e in &report.entries {
        if let Some(t) = e.trans {
            println!(
                "{:>12} -> {:<12} {:>10} {:>5}  trans {:6.2} +- {:5.2}",
                e.victim,
                e.transfer,
                e.attack,
                e.defense,
                t,
                e.trans_std.unwrap_or(0.0)
            );
        }
    }
    write_report(cfg, &report)
}

fn sweep(cfg: &RunConfig) -> Outcome<Vec<String>> {
    let param: SweepParam = cfg.param.parse().usage()?;
    let values = parse_values(&cfg.values).usage()?;
    let base = attack_config(&cfg.attack, cfg)?;
    for &v in &values {
        param.apply(&mut base.clone(), v).usage()?;
    }
    let defenses = cfg
        .defenses
        .iter()
        .map(|d| defense_config(d, cfg))
        .collect::<Outcome<Vec<_>>>()?;
    let loaded = load_matrix_inputs(cfg, base.kind == AttackKind::AdvPc)?;
    let report = run_sweep(
        &matrix_inputs(&loaded),
        &base,
        param,
        &values,
        &defenses,
        &matrix_seeds(cfg),
        cfg.samples,
        cfg.victims.as_deref(),
    )
    .runtime()?;
    write_report(cfg, &report)
}

fn report(cfg: &RunConfig) -> Outcome<Vec<String>> {
    let path = require(&cfg.report, "report")?;
    if cfg.formats.is_empty() {
        return usage_err("no output formats selected".into());
    }
    let report = TransferReport::read_json(path).runtime()?;
    write_report(cfg, &report)
}
