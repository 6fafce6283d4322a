//! Flat `key = value` experiment configuration.
//!
//! One file may hold world, training and evaluation keys; every key must be
//! in [`KNOWN_KEYS`]. Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::CheckConfig;
use crate::model::Architecture;
use crate::nn::{Activation, OptimizerConfig, OptimizerKind};
use crate::sem::LatentLaw;
use crate::train::TrainConfig;

/// Every accepted key with a one-line description.
pub const KNOWN_KEYS: &[(&str, &str)] = &[
    ("latent_dim", "shared latent dimension d"),
    ("domains", "per-domain obs:noise dims, e.g. 6:0,8:1"),
    ("warp_alpha", "SEM warp strength (>= 0)"),
    ("latent_law", "standard_normal | two_cluster(separation,spread)"),
    ("samples", "marginal samples per domain written by gen-data"),
    ("paired_samples", "rows of the quarantined paired set"),
    ("world_seed", "seed of the SEM maps and data"),
    ("lambda", "weight of the adversarial term"),
    ("batch_size", "rows per step"),
    ("steps", "generator steps per training run"),
    ("disc_steps", "discriminator steps per generator step"),
    ("gen_optimizer", "adam | sgd"),
    ("gen_lr", "generator learning rate"),
    ("gen_beta1", "generator Adam beta1"),
    ("gen_beta2", "generator Adam beta2"),
    ("gen_eps", "generator Adam epsilon"),
    ("disc_optimizer", "adam | sgd"),
    ("disc_lr", "discriminator learning rate"),
    ("disc_beta1", "discriminator Adam beta1"),
    ("disc_beta2", "discriminator Adam beta2"),
    ("disc_eps", "discriminator Adam epsilon"),
    ("encoder_hidden", "comma-separated hidden widths"),
    ("decoder_hidden", "comma-separated hidden widths"),
    ("disc_hidden", "comma-separated hidden widths"),
    ("hidden_activation", "identity | tanh | leaky_relu(slope)"),
    ("adversarial", "saturating | non_saturating"),
    ("epoch_steps", "steps per domain per alternating round"),
    ("bank_size", "codes per alternating bank refresh"),
    ("lr_decay", "fraction of a run over which learning rates decay linearly"),
    ("lr_floor", "learning-rate multiplier at the last step"),
    ("seed", "training seed"),
    ("eval_samples", "rows per compared sample in checks"),
    ("n_permutations", "MMD permutations"),
    ("alpha", "significance level of the checks"),
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |detail: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                detail,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if !KNOWN_KEYS.iter().any(|(known, _)| *known == k) {
                return Err(err(format!("unknown config key `{k}`")));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(err(format!("duplicate config key `{k}`")));
            }
        }
        Ok(ConfigFile { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        ConfigFile::parse(&std::fs::read_to_string(path)?, &path.display().to_string())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> Result<()> {
        if !KNOWN_KEYS.iter().any(|(known, _)| *known == key) {
            return Err(Error::invalid("ConfigFile::set", format!("unknown config key `{key}`")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Format(format!("config `{key}`: cannot parse `{v}`"))),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn parse_widths(key: &str, v: &str) -> Result<Vec<usize>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|w| {
            w.trim()
                .parse()
                .map_err(|_| Error::Format(format!("config `{key}`: bad width `{w}`")))
        })
        .collect()
}

fn widths_text(w: &[usize]) -> String {
    w.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// World description for `gen-data`.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldConfig {
    pub latent_dim: usize,
    /// `(obs_dim, noise_dim)` per domain.
    pub domains: Vec<(usize, usize)>,
    pub warp_alpha: f64,
    pub latent_law: LatentLaw,
    pub samples: usize,
    pub paired_samples: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            latent_dim: 2,
            domains: vec![(6, 0), (8, 1), (6, 0), (10, 2)],
            warp_alpha: 0.5,
            latent_law: LatentLaw::StandardNormal,
            samples: 20_000,
            paired_samples: 2_000,
            seed: 0,
        }
    }
}

pub fn parse_domains(v: &str) -> Result<Vec<(usize, usize)>> {
    v.split(',')
        .map(|item| {
            let bad = || Error::Format(format!("config `domains`: bad entry `{item}` (want obs:noise)"));
            let (n, m) = item.trim().split_once(':').ok_or_else(bad)?;
            Ok((n.trim().parse().map_err(|_| bad())?, m.trim().parse().map_err(|_| bad())?))
        })
        .collect()
}

fn domains_text(d: &[(usize, usize)]) -> String {
    d.iter().map(|(n, m)| format!("{n}:{m}")).collect::<Vec<_>>().join(",")
}

impl WorldConfig {
    pub fn from_config(c: &ConfigFile) -> Result<Self> {
        let def = WorldConfig::default();
        Ok(WorldConfig {
            latent_dim: c.parsed_or("latent_dim", def.latent_dim)?,
            domains: match c.get("domains") {
                Some(v) => parse_domains(v)?,
                None => def.domains,
            },
            warp_alpha: c.parsed_or("warp_alpha", def.warp_alpha)?,
            latent_law: c.parsed_or("latent_law", def.latent_law)?,
            samples: c.parsed_or("samples", def.samples)?,
            paired_samples: c.parsed_or("paired_samples", def.paired_samples)?,
            seed: c.parsed_or("world_seed", def.seed)?,
        })
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        vec![
            ("latent_dim".into(), self.latent_dim.to_string()),
            ("domains".into(), domains_text(&self.domains)),
            ("warp_alpha".into(), self.warp_alpha.to_string()),
            ("latent_law".into(), self.latent_law.to_string()),
            ("samples".into(), self.samples.to_string()),
            ("paired_samples".into(), self.paired_samples.to_string()),
            ("world_seed".into(), self.seed.to_string()),
        ]
    }
}

fn optimizer_from(c: &ConfigFile, prefix: &str, def: OptimizerConfig) -> Result<OptimizerConfig> {
    Ok(OptimizerConfig {
        kind: c.parsed_or::<OptimizerKind>(&format!("{prefix}_optimizer"), def.kind)?,
        learning_rate: c.parsed_or(&format!("{prefix}_lr"), def.learning_rate)?,
        beta1: c.parsed_or(&format!("{prefix}_beta1"), def.beta1)?,
        beta2: c.parsed_or(&format!("{prefix}_beta2"), def.beta2)?,
        eps: c.parsed_or(&format!("{prefix}_eps"), def.eps)?,
    })
}

fn optimizer_entries(prefix: &str, o: &OptimizerConfig, out: &mut Vec<(String, String)>) {
    out.push((format!("{prefix}_optimizer"), o.kind.to_string()));
    out.push((format!("{prefix}_lr"), o.learning_rate.to_string()));
    out.push((format!("{prefix}_beta1"), o.beta1.to_string()));
    out.push((format!("{prefix}_beta2"), o.beta2.to_string()));
    out.push((format!("{prefix}_eps"), o.eps.to_string()));
}

/// Training settings for domain `domain` (0-based). Latent and noise
/// dimensions come from `latent_dim` and the `domains` list.
pub fn train_config(c: &ConfigFile, domain: usize) -> Result<TrainConfig> {
    let def = TrainConfig::default();
    let world = WorldConfig::from_config(c)?;
    let noise_dim = match world.domains.get(domain) {
        Some(&(_, m)) => m,
        None => {
            return Err(Error::invalid(
                "train_config",
                format!("domain {} not listed in `domains` ({} entries)", domain + 1, world.domains.len()),
            ))
        }
    };
    let widths = |key: &str, d: &[usize]| match c.get(key) {
        Some(v) => parse_widths(key, v),
        None => Ok(d.to_vec()),
    };
    let cfg = TrainConfig {
        lambda: c.parsed_or("lambda", def.lambda)?,
        batch_size: c.parsed_or("batch_size", def.batch_size)?,
        steps: c.parsed_or("steps", def.steps)?,
        disc_steps_per_gen_step: c.parsed_or("disc_steps", def.disc_steps_per_gen_step)?,
        gen_optimizer: optimizer_from(c, "gen", def.gen_optimizer)?,
        disc_optimizer: optimizer_from(c, "disc", def.disc_optimizer)?,
        arch: Architecture {
            encoder_hidden: widths("encoder_hidden", &def.arch.encoder_hidden)?,
            decoder_hidden: widths("decoder_hidden", &def.arch.decoder_hidden)?,
            disc_hidden: widths("disc_hidden", &def.arch.disc_hidden)?,
            hidden_activation: c.parsed_or::<Activation>("hidden_activation", def.arch.hidden_activation)?,
        },
        latent_dim: world.latent_dim,
        noise_dim,
        adversarial: c.parsed_or("adversarial", def.adversarial)?,
        epoch_steps: c.get("epoch_steps").map(|_| c.parsed_or("epoch_steps", 0)).transpose()?,
        bank_size: c.get("bank_size").map(|_| c.parsed_or("bank_size", 0)).transpose()?,
        lr_decay: c.parsed_or("lr_decay", def.lr_decay)?,
        lr_floor: c.parsed_or("lr_floor", def.lr_floor)?,
        seed: c.parsed_or("seed", def.seed)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Effective training settings as config entries (checkpoint echo).
pub fn train_config_entries(cfg: &TrainConfig) -> Vec<(String, String)> {
    let mut out = vec![
        ("lambda".to_string(), cfg.lambda.to_string()),
        ("batch_size".into(), cfg.batch_size.to_string()),
        ("steps".into(), cfg.steps.to_string()),
        ("disc_steps".into(), cfg.disc_steps_per_gen_step.to_string()),
    ];
    optimizer_entries("gen", &cfg.gen_optimizer, &mut out);
    optimizer_entries("disc", &cfg.disc_optimizer, &mut out);
    out.push(("encoder_hidden".into(), widths_text(&cfg.arch.encoder_hidden)));
    out.push(("decoder_hidden".into(), widths_text(&cfg.arch.decoder_hidden)));
    out.push(("disc_hidden".into(), widths_text(&cfg.arch.disc_hidden)));
    out.push(("hidden_activation".into(), cfg.arch.hidden_activation.to_string()));
    out.push(("latent_dim".into(), cfg.latent_dim.to_string()));
    out.push(("noise_dim".into(), cfg.noise_dim.to_string()));
    out.push(("adversarial".into(), cfg.adversarial.to_string()));
    if let Some(e) = cfg.epoch_steps {
        out.push(("epoch_steps".into(), e.to_string()));
    }
    if let Some(b) = cfg.bank_size {
        out.push(("bank_size".into(), b.to_string()));
    }
    out.push(("lr_decay".into(), cfg.lr_decay.to_string()));
    out.push(("lr_floor".into(), cfg.lr_floor.to_string()));
    out.push(("seed".into(), cfg.seed.to_string()));
    out
}

pub fn check_config(c: &ConfigFile) -> Result<CheckConfig> {
    let def = CheckConfig::default();
    let cfg = CheckConfig {
        samples: c.parsed_or("eval_samples", def.samples)?,
        n_permutations: c.parsed_or("n_permutations", def.n_permutations)?,
        alpha: c.parsed_or("alpha", def.alpha)?,
    };
    if cfg.samples < 2 || !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::invalid("check_config", "need eval_samples >= 2 and 0 < alpha < 1"));
    }
    Ok(cfg)
}
