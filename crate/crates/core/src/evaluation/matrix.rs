use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::report::{ReportEntry, SweepInfo, TransferReport, REPORT_SCHEMA};
use super::{targeted_success_from_predictions, trans_counts, AdvPair};
use crate::attacks::{run_attack, AttackConfig, AttackResources};
use crate::defenses::DefenseConfig;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::models::{Autoencoder, PointClassifier};
use crate::rng;

pub struct NamedModel<'a> {
    pub name: String,
    pub model: &'a dyn PointClassifier,
}

pub struct MatrixInputs<'a> {
    pub models: Vec<NamedModel<'a>>,
    pub autoencoder: Option<&'a Autoencoder>,
    pub test: &'a [PointCloud],
}

/// An attack row of the matrix; `config: None` leaves clouds unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixAttack {
    pub name: String,
    pub config: Option<AttackConfig>,
}

impl MatrixAttack {
    pub fn none() -> Self {
        Self {
            name: "none".into(),
            config: None,
        }
    }

    pub fn from_config(config: AttackConfig) -> Self {
        Self {
            name: config.name(),
            config: Some(config),
        }
    }

    /// `none` or any preset name accepted by [`AttackConfig::from_name`].
    pub fn from_name(name: &str) -> Result<Self> {
        if name == "none" {
            Ok(Self::none())
        } else {
            AttackConfig::from_name(name).map(Self::from_config)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixConfig {
    pub attacks: Vec<MatrixAttack>,
    pub defenses: Vec<DefenseConfig>,
    pub seeds: Vec<u64>,
    /// Test samples drawn per seed; the whole split if it is smaller.
    pub samples: usize,
    /// Models attacked as victims, by name; every model when `None`.
    #[serde(default)]
    pub victims: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Pa,
    Ps,
    Iterations,
    Epsilon,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Pa => "pa",
            SweepParam::Ps => "ps",
            SweepParam::Iterations => "iterations",
            SweepParam::Epsilon => "epsilon",
        }
    }

    pub fn apply(&self, cfg: &mut AttackConfig, value: f64) -> Result<()> {
        match self {
            SweepParam::Pa => cfg.policy.p_a = value,
            SweepParam::Ps => cfg.policy.p_s = value,
            SweepParam::Epsilon => cfg.epsilon = value,
            SweepParam::Iterations => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::Config(format!(
                        "iterations must be a positive integer, got {value}"
                    )));
                }
                cfg.iterations = value as usize;
            }
        }
        cfg.validate()
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SweepParam::Pa,
            SweepParam::Ps,
            SweepParam::Iterations,
            SweepParam::Epsilon,
        ]
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown sweep parameter '{s}' (expected pa, ps, iterations, epsilon)"
            ))
        })
    }
}

/// Stable per-sample key: the cloud id, or its coordinates if it has none.
fn sample_key(cloud: &PointCloud) -> u64 {
    match &cloud.id {
        Some(id) => rng::hash_tag(id),
        None => {
            let bits: Vec<u64> = cloud.points().iter().map(|v| v.to_bits()).collect();
            rng::derive_seed(0, &bits)
        }
    }
}

/// Up to `n` clouds chosen by seed. The choice depends on the clouds' ids,
/// not on their order.
pub fn select_subset(clouds: &[PointCloud], seed: u64, n: usize) -> Vec<&PointCloud> {
    let mut keyed: Vec<(u64, u64, &PointCloud)> = clouds
        .iter()
        .map(|c| {
            let key = sample_key(c);
            (rng::derive_seed(seed, &[key]), key, c)
        })
        .collect();
    keyed.sort_by_key(|(rank, key, _)| (*rank, *key));
    keyed.into_iter().take(n).map(|(_, _, c)| c).collect()
}

fn craft(
    victim: &dyn PointClassifier,
    attack: &MatrixAttack,
    cloud: &PointCloud,
    seed: u64,
    resources: &AttackResources,
) -> Result<AdvPair> {
    let label = cloud
        .label
        .ok_or_else(|| Error::Config("test cloud without label".into()))?;
    let Some(base) = &attack.config else {
        return Ok(AdvPair {
            clean: cloud.clone(),
            adversarial: cloud.clone(),
            label,
            target: None,
        });
    };
    let mut cfg = base.clone();
    cfg.rng_seed = rng::derive_seed(seed, &[sample_key(cloud), base.rng_seed]);
    let result = run_attack(victim, cloud, &cfg, resources)?;
    Ok(AdvPair {
        clean: cloud.clone(),
        adversarial: result.adversarial,
        label,
        target: result.target,
    })
}

#[derive(Debug, Clone, Copy)]
struct SeedOutcome {
    trans: f64,
    accuracy: f64,
    targeted: Option<f64>,
    n: usize,
}

type CellKey = (String, String, String, String);

fn defended_predictions(
    pairs: &[AdvPair],
    defense: &DefenseConfig,
    seed: u64,
    models: &[NamedModel],
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let defended = pairs
        .par_iter()
        .map(|p| {
            // Clean and adversarial see the same random draw.
            let s = rng::derive_seed(
                seed,
                &[
                    sample_key(&p.clean),
                    defense.rng_seed,
                    rng::hash_tag("defense"),
                ],
            );
            let clean = defense.apply(&p.clean, &mut rng::stream(s))?;
            let adv = defense.apply(&p.adversarial, &mut rng::stream(s))?;
            Ok((clean, adv))
        })
        .collect::<Result<Vec<_>>>()?;
    models
        .iter()
        .map(|m| {
            defended
                .par_iter()
                .map(|(c, a)| {
                    Ok((
                        m.model.forward(c.points())?.argmax(),
                        m.model.forward(a.points())?.argmax(),
                    ))
                })
                .collect::<Result<Vec<(usize, usize)>>>()
                .map(|v| v.into_iter().unzip())
        })
        .collect()
}

fn digest(value: &impl Serialize) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

/// Crafts adversarials on every victim for every attack and seed, then
/// scores them on every model under every defense. Failures are recorded
/// on the affected cells.
pub fn run_matrix(inputs: &MatrixInputs, cfg: &MatrixConfig) -> Result<TransferReport> {
    if inputs.models.len() < 2 {
        return Err(Error::Config("the matrix needs at least two models".into()));
    }
    if cfg.seeds.is_empty() || cfg.samples == 0 {
        return Err(Error::Config(
            "the matrix needs at least one seed and one sample".into(),
        ));
    }
    if inputs.test.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let resources = AttackResources {
        autoencoder: inputs.autoencoder,
        basis: None,
    };
    let mut cells: BTreeMap<CellKey, Vec<Result<SeedOutcome, String>>> = BTreeMap::new();
    let mut order: Vec<CellKey> = Vec::new();
    if let Some(names) = &cfg.victims {
        if let Some(bad) = names
            .iter()
            .find(|n| !inputs.models.iter().any(|m| &m.name == *n))
        {
            return Err(Error::Config(format!("unknown victim model '{bad}'")));
        }
    }
    let victims = inputs
        .models
        .iter()
        .filter(|m| cfg.victims.as_ref().is_none_or(|v| v.contains(&m.name)));
    for victim in victims {
        for attack in &cfg.attacks {
            for transfer in &inputs.models {
                for defense in &cfg.defenses {
                    let key = (
                        victim.name.clone(),
                        transfer.name.clone(),
                        attack.name.clone(),
                        defense.kind.name().to_string(),
                    );
                    if !cells.contains_key(&key) {
                        order.push(key.clone());
                        cells.insert(key.clone(), Vec::new());
                    }
                }
            }
            // Attacks that draw no random numbers give the same result for a
            // sample under every seed, so they are crafted once.
            let seed_free = attack
                .config
                .as_ref()
                .is_none_or(|c| !c.ss_enabled && !(c.targeted && c.target_class.is_none()));
            let mut crafted: HashMap<u64, AdvPair> = HashMap::new();
            for &seed in &cfg.seeds {
                let subset = select_subset(inputs.test, seed, cfg.samples);
                if !seed_free {
                    crafted.clear();
                }
                let todo: Vec<&PointCloud> = subset
                    .iter()
                    .copied()
                    .filter(|c| !crafted.contains_key(&sample_key(c)))
                    .collect();
                let pairs = todo
                    .par_iter()
                    .map(|c| {
                        Ok((
                            sample_key(c),
                            craft(victim.model, attack, c, seed, &resources)?,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(|fresh| {
                        crafted.extend(fresh);
                        subset
                            .iter()
                            .map(|c| crafted[&sample_key(c)].clone())
                            .collect::<Vec<_>>()
                    });
                for defense in &cfg.defenses {
                    let scored = pairs.as_ref().map_err(|e| e.to_string()).and_then(|p| {
                        defended_predictions(p, defense, seed, &inputs.models)
                            .map_err(|e| e.to_string())
                    });
                    for (t, transfer) in inputs.models.iter().enumerate() {
                        let key = (
                            victim.name.clone(),
                            transfer.name.clone(),
                            attack.name.clone(),
                            defense.kind.name().to_string(),
                        );
                        let outcome = scored.as_ref().map_err(Clone::clone).and_then(|preds| {
                            let p = pairs.as_ref().expect("scored implies crafted");
                            let labels: Vec<usize> = p.iter().map(|x| x.label).collect();
                            let (clean, adv) = &preds[t];
                            let counts =
                                trans_counts(&labels, clean, adv).map_err(|e| e.to_string())?;
                            let targets: Option<Vec<usize>> = p.iter().map(|x| x.target).collect();
                            Ok(SeedOutcome {
                                trans: counts.trans().map_err(|e| e.to_string())?,
                                accuracy: counts.clean_accuracy(),
                                targeted: targets
                                    .map(|t| targeted_success_from_predictions(&t, adv)),
                                n: counts.total,
                            })
                        });
                        cells.get_mut(&key).expect("cell registered").push(outcome);
                    }
                }
            }
        }
    }

    let entries = order
        .into_iter()
        .map(|key| {
            let outcomes = &cells[&key];
            let ok: Vec<SeedOutcome> = outcomes
                .iter()
                .filter_map(|o| o.as_ref().ok().copied())
                .collect();
            let error = outcomes.iter().find_map(|o| o.as_ref().err().cloned());
            let trans: Vec<f64> = ok.iter().map(|o| o.trans).collect();
            let (trans_mean, trans_std) = mean_std(&trans);
            let (acc, acc_std) = mean_std(&ok.iter().map(|o| o.accuracy).collect::<Vec<_>>());
            let targeted: Option<Vec<f64>> = ok.iter().map(|o| o.targeted).collect();
            let (tgt, tgt_std) = match targeted {
                Some(v) => mean_std(&v),
                None => (None, None),
            };
            let (victim, transfer, attack, defense) = key;
            ReportEntry {
                victim,
                transfer,
                attack,
                defense,
                sweep_value: None,
                trans: trans_mean,
                trans_std,
                accuracy: acc,
                accuracy_std: acc_std,
                targeted_success: tgt,
                targeted_success_std: tgt_std,
                n_samples: ok.first().map_or(0, |o| o.n),
                per_seed_trans: trans,
                error,
            }
        })
        .collect();

    let names: Vec<&str> = inputs.models.iter().map(|m| m.name.as_str()).collect();
    Ok(TransferReport {
        schema: REPORT_SCHEMA.into(),
        config_digest: digest(&(cfg, names))?,
        seeds: cfg.seeds.clone(),
        sweep: None,
        entries,
    })
}

/// Runs the matrix once per value of `param`, varying one attack setting.
pub fn run_sweep(
    inputs: &MatrixInputs,
    base: &AttackConfig,
    param: SweepParam,
    values: &[f64],
    defenses: &[DefenseConfig],
    seeds: &[u64],
    samples: usize,
    victims: Option<&[String]>,
) -> Result<TransferReport> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut entries = Vec::new();
    for &v in values {
        let mut cfg = base.clone();
        param.apply(&mut cfg, v)?;
        let matrix = MatrixConfig {
            attacks: vec![MatrixAttack::from_config(cfg)],
            defenses: defenses.to_vec(),
            seeds: seeds.to_vec(),
            samples,
            victims: victims.map(<[String]>::to_vec),
        };
        let report = run_matrix(inputs, &matrix)?;
        entries.extend(report.entries.into_iter().map(|mut e| {
            e.sweep_value = Some(v);
            e
        }));
    }
    let names: Vec<&str> = inputs.models.iter().map(|m| m.name.as_str()).collect();
    Ok(TransferReport {
        schema: REPORT_SCHEMA.into(),
        config_digest: digest(&(
            base, param, values, defenses, seeds, samples, victims, names,
        ))?,
        seeds: seeds.to_vec(),
        sweep: Some(SweepInfo {
            param: param.name().into(),
            values: values.to_vec(),
        }),
        entries,
    })
}
