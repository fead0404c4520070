//! Flat run configuration shared by every sub-command.
//!
//! Values resolve in this order, later sources winning: built-in defaults,
//! the `--config` file (a flat JSON object or a previous `manifest.json`),
//! the `SSBENCH_SEED` environment variable, command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

pub const MANIFEST_VERSION: &str = "manifest-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    /// Global seed; every random stream is derived from it.
    pub seed: u64,
    /// Output directory; nothing is written outside it.
    pub out: PathBuf,
    /// Worker threads; all cores when unset.
    pub workers: Option<usize>,

    /// Number of shape classes for `gen-data`.
    pub classes: usize,
    pub per_class: usize,
    pub points: usize,
    pub noise: f64,
    pub train_fraction: f64,
    /// `xyzl` or `pcb`.
    pub format: String,
    /// Dataset directory as written by `gen-data`.
    pub data: Option<PathBuf>,

    /// `pointwise-maxpool`, `edge-conv` or `autoencoder`.
    pub model: String,
    pub widths: Option<Vec<usize>>,
    pub head: Option<Vec<usize>>,
    pub knn_k: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub latent: usize,

    /// Attack preset name, e.g. `knn` or `ss-knn`.
    pub attack: String,
    pub victim: Option<PathBuf>,
    pub autoencoder: Option<PathBuf>,
    pub pa: Option<f64>,
    pub ps: Option<f64>,
    pub epsilon: Option<f64>,
    pub iterations: Option<usize>,
    pub attack_lr: Option<f64>,
    pub binary_search_steps: Option<usize>,
    pub kappa: Option<f64>,
    pub gamma: Option<f64>,
    pub targeted: bool,
    pub target_class: Option<usize>,
    /// Test samples attacked per seed.
    pub samples: usize,

    /// `none`, `srs` or `sor`.
    pub defense: String,
    pub srs_drop: Option<usize>,
    pub sor_k: usize,
    pub sor_alpha: f64,
    /// Directory of clouds for `defend`.
    pub input: Option<PathBuf>,

    /// Checkpoints compared by `eval` and `sweep`.
    pub models: Vec<PathBuf>,
    /// Names of the models attacked as victims; all models when unset.
    pub victims: Option<Vec<String>>,
    pub attacks: Vec<String>,
    pub defenses: Vec<String>,
    pub seeds: Vec<u64>,

    /// Swept parameter: `pa`, `ps`, `iterations` or `epsilon`.
    pub param: String,
    /// `start:stop:step` (inclusive) or a comma-separated list.
    pub values: String,

    /// Report JSON read by `report`.
    pub report: Option<PathBuf>,
    /// Any of `csv`, `json`, `svg`.
    pub formats: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            workers: None,
            classes: 8,
            per_class: 100,
            points: 256,
            noise: 0.01,
            train_fraction: 0.7,
            format: "xyzl".into(),
            data: None,
            model: "pointwise-maxpool".into(),
            widths: None,
            head: None,
            knn_k: 10,
            epochs: 50,
            lr: 1e-3,
            batch_size: 32,
            latent: 128,
            attack: "ss-knn".into(),
            victim: None,
            autoencoder: None,
            pa: None,
            ps: None,
            epsilon: None,
            iterations: None,
            attack_lr: None,
            binary_search_steps: None,
            kappa: None,
            gamma: None,
            targeted: false,
            target_class: None,
            samples: 200,
            defense: "none".into(),
            srs_drop: None,
            sor_k: 2,
            sor_alpha: 1.1,
            input: None,
            models: Vec::new(),
            victims: None,
            attacks: vec!["knn".into(), "ss-knn".into()],
            defenses: vec!["none".into()],
            seeds: vec![0, 1, 2],
            param: "pa".into(),
            values: "0.1:1.0:0.1".into(),
            report: None,
            formats: vec!["csv".into(), "json".into(), "svg".into()],
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub manifest: String,
    pub command: String,
    pub tool_version: String,
    pub config: RunConfig,
    /// Files written by the run, relative to `config.out`.
    pub outputs: Vec<String>,
}

/// Command-line overrides. Every flag maps to the config key of the same name.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Flat JSON config file or a previous manifest.json.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,

    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub head: Option<Vec<usize>>,
    #[arg(long)]
    pub knn_k: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub latent: Option<usize>,

    #[arg(long)]
    pub attack: Option<String>,
    #[arg(long)]
    pub victim: Option<PathBuf>,
    #[arg(long)]
    pub autoencoder: Option<PathBuf>,
    #[arg(long)]
    pub pa: Option<f64>,
    #[arg(long)]
    pub ps: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub attack_lr: Option<f64>,
    #[arg(long)]
    pub binary_search_steps: Option<usize>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub targeted: Option<bool>,
    #[arg(long)]
    pub target_class: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,

    #[arg(long)]
    pub defense: Option<String>,
    #[arg(long)]
    pub srs_drop: Option<usize>,
    #[arg(long)]
    pub sor_k: Option<usize>,
    #[arg(long)]
    pub sor_alpha: Option<f64>,
    #[arg(long)]
    pub input: Option<PathBuf>,

    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<PathBuf>>,
    #[arg(long, value_delimiter = ',')]
    pub victims: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub attacks: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub defenses: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,

    #[arg(long)]
    pub param: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub values: Option<String>,

    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub formats: Option<Vec<String>>,
}

fn read_file(path: &Path, command: &str) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if value.get("manifest").is_some() {
        let manifest: Manifest = serde_json::from_value(value)
            .with_context(|| format!("invalid manifest {}", path.display()))?;
        if manifest.manifest != MANIFEST_VERSION {
            bail!("unsupported manifest version '{}'", manifest.manifest);
        }
        if manifest.command != command {
            bail!(
                "manifest {} records command '{}', not '{command}'",
                path.display(),
                manifest.command
            );
        }
        return Ok(manifest.config);
    }
    serde_json::from_value(value).with_context(|| format!("invalid config {}", path.display()))
}

macro_rules! override_fields {
    ($cfg:ident, $flags:ident; $($field:ident),* ; $($opt:ident),*) => {
        $(if let Some(v) = $flags.$field.clone() { $cfg.$field = v; })*
        $(if let Some(v) = $flags.$opt.clone() { $cfg.$opt = Some(v); })*
    };
}

/// Resolves defaults, config file, `SSBENCH_SEED` and flags.
pub fn resolve(flags: &Flags, command: &str, env_seed: Option<&str>) -> Result<RunConfig> {
    let mut cfg = match &flags.config {
        Some(path) => read_file(path, command)?,
        None => RunConfig::default(),
    };
    if let Some(s) = env_seed {
        cfg.seed = s
            .trim()
            .parse()
            .with_context(|| format!("SSBENCH_SEED must be an unsigned integer, got '{s}'"))?;
    }
    override_fields!(cfg, flags;
        seed, out, classes, per_class, points, noise, train_fraction, format, model, knn_k,
        epochs, lr, batch_size, latent, attack, targeted, samples, defense, sor_k, sor_alpha,
        models, attacks, defenses, seeds, param, values, formats;
        workers, data, widths, head, victim, autoencoder, pa, ps, epsilon, iterations,
        attack_lr, binary_search_steps, kappa, gamma, target_class, srs_drop, input, report,
        victims
    );
    if cfg.workers == Some(0) {
        bail!("workers must be at least 1");
    }
    Ok(cfg)
}

/// Parses `start:stop:step` (inclusive of `stop`) or `a,b,c`.
pub fn parse_values(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() == 3 {
        let nums = parts
            .iter()
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("invalid range '{spec}'"))?;
        let (start, stop, step) = (nums[0], nums[1], nums[2]);
        if !(step > 0.0) || stop < start {
            bail!("range '{spec}' needs step > 0 and stop >= start");
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        // Rounding keeps 0.1:1.0:0.1 at 0.3 rather than 0.30000000000000004.
        return Ok((0..count)
            .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
            .collect());
    }
    if parts.len() != 1 {
        bail!("invalid value list '{spec}'");
    }
    spec.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("invalid value '{v}'"))
        })
        .collect()
}
