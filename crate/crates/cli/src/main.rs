//! `ucae`: generate synthetic worlds, train per-domain autoencoders,
//! translate between domains and evaluate the result.

mod eval;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use ucae::config::{self, ConfigFile, WorldConfig};
use ucae::io::{self, Checkpoint, CheckpointKind, Dataset};
use ucae::model::{translate, DomainModel};
use ucae::sem::{make_sem, sample_coupled, sample_marginals};
use ucae::train::{self, LabeledBatch, LatentSource, TrainConfig};
use ucae::{Error, Rng};

#[derive(Parser, Debug)]
#[command(name = "ucae", version, about = "Uncoupled multi-domain autoencoders")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct Global {
    /// Seed overriding the command's configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a synthetic world and write its checkpoint and datasets.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one domain's autoencoder against the prior or a frozen bank.
    Train {
        /// 1-based domain index.
        #[arg(long)]
        domain: usize,
        #[arg(long)]
        data: PathBuf,
        /// `prior` or the path of a sample-bank checkpoint.
        #[arg(long, default_value = "prior")]
        latent: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training-log CSV (default: the output path with `.log.csv`).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Train without the label column even if the data has one.
        #[arg(long)]
        ignore_labels: bool,
    },
    /// Estimate a shared latent distribution from two domains by alternation.
    LearnLatent {
        #[arg(long)]
        domain_a: usize,
        #[arg(long)]
        data_a: PathBuf,
        #[arg(long)]
        out_a: PathBuf,
        #[arg(long)]
        domain_b: usize,
        #[arg(long)]
        data_b: PathBuf,
        #[arg(long)]
        out_b: PathBuf,
        #[arg(long)]
        rounds: usize,
        #[arg(long)]
        out_bank: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ignore_labels: bool,
    },
    /// Train a new domain against a frozen bank without touching other models.
    AddDomain {
        #[arg(long)]
        domain: usize,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        ignore_labels: bool,
    },
    /// Translate a dataset from the source model's domain to the target's.
    Translate {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        dst: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run consistency, bound, reconstruction and latent checks.
    Eval(eval::EvalArgs),
}

/// Outcome of a successful command.
pub enum Outcome {
    Ok,
    ChecksFailed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::ChecksFailed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            let numeric = e.chain().any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_numeric));
            ExitCode::from(if numeric { 2 } else { 1 })
        }
    }
}

pub fn progress(global: &Global, msg: impl AsRef<str>) {
    if !global.quiet {
        eprintln!("{}", msg.as_ref());
    }
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let g = &cli.global;
    match &cli.command {
        Command::GenData { config, out } => gen_data(g, config, out),
        Command::Train {
            domain,
            data,
            latent,
            config,
            out,
            log,
            ignore_labels,
        } => {
            let latent = if latent == "prior" {
                None
            } else {
                Some(load_bank(Path::new(latent))?)
            };
            train_one(g, *domain, data, latent.as_ref(), config, out, log.as_deref(), *ignore_labels)
        }
        Command::LearnLatent {
            domain_a,
            data_a,
            out_a,
            domain_b,
            data_b,
            out_b,
            rounds,
            out_bank,
            config,
            ignore_labels,
        } => learn_latent(
            g,
            (*domain_a, data_a, out_a),
            (*domain_b, data_b, out_b),
            *rounds,
            out_bank,
            config,
            *ignore_labels,
        ),
        Command::AddDomain {
            domain,
            data,
            bank,
            config,
            out,
            log,
            ignore_labels,
        } => {
            if out.exists() {
                let existing = Checkpoint::load(out).with_context(|| format!("reading {}", out.display()))?;
                if existing.kind != CheckpointKind::DomainModel || existing.meta("domain_id")? != domain_id(*domain) {
                    bail!(
                        "refusing to overwrite {}: it is not a model of {}",
                        out.display(),
                        domain_id(*domain)
                    );
                }
            }
            let bank = load_bank(bank)?;
            if !bank.is_frozen() {
                bail!("bank {} is not frozen", bank.origin());
            }
            train_one(g, *domain, data, Some(&bank), config, out, log.as_deref(), *ignore_labels)
        }
        Command::Translate { src, dst, input, out } => translate_cmd(g, src, dst, input, out),
        Command::Eval(args) => eval::run(g, args),
    }
}

pub fn domain_id(domain: usize) -> String {
    format!("domain_{domain}")
}

/// 1-based domain index of a model id written by this tool.
pub fn domain_index(id: &str) -> anyhow::Result<usize> {
    id.strip_prefix("domain_")
        .and_then(|n| n.parse().ok())
        .filter(|&n: &usize| n >= 1)
        .with_context(|| format!("model id `{id}` does not name a domain"))
}

fn zero_based(domain: usize) -> anyhow::Result<usize> {
    domain.checked_sub(1).context("domains are numbered from 1")
}

pub fn load_config(path: &Path) -> anyhow::Result<ConfigFile> {
    ConfigFile::load(path).with_context(|| format!("reading config {}", path.display()))
}

pub fn load_checkpoint(path: &Path, kind: CheckpointKind) -> anyhow::Result<Checkpoint> {
    let c = Checkpoint::load(path).with_context(|| format!("reading {}", path.display()))?;
    c.expect_kind(kind).with_context(|| format!("{}", path.display()))?;
    Ok(c)
}

pub fn load_model(path: &Path) -> anyhow::Result<DomainModel> {
    let c = load_checkpoint(path, CheckpointKind::DomainModel)?;
    Ok(io::model_from_checkpoint(&c).with_context(|| format!("{}", path.display()))?)
}

pub fn load_bank(path: &Path) -> anyhow::Result<train::SampleBank> {
    let c = load_checkpoint(path, CheckpointKind::SampleBank)?;
    Ok(io::bank_from_checkpoint(&c).with_context(|| format!("{}", path.display()))?)
}

pub fn load_dataset(path: &Path) -> anyhow::Result<Dataset> {
    io::read_csv(path).with_context(|| format!("reading {}", path.display()))
}

fn gen_data(g: &Global, config: &Path, out: &Path) -> anyhow::Result<Outcome> {
    let cfg_file = load_config(config)?;
    let mut world = WorldConfig::from_config(&cfg_file)?;
    if let Some(s) = g.seed {
        world.seed = s;
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let rng = Rng::new(world.seed);
    let spec = make_sem(
        world.latent_dim,
        &world.domains,
        world.warp_alpha,
        world.latent_law,
        &mut rng.split("world"),
    )?;
    let echo: Vec<(String, String)> = world.entries().into_iter().map(|(k, v)| (format!("config.{k}"), v)).collect();
    io::sem_to_checkpoint(&spec, &echo).save(&out.join("world.ckpt"))?;

    let marginals = sample_marginals(&spec, world.samples, &mut rng.split("marginals"))?;
    for (i, (x, labels)) in marginals.into_iter().enumerate() {
        let name = domain_id(i + 1);
        let labels = labels.map(|l| train::one_hot(&l, spec.latent_law.num_classes()));
        let ds = Dataset::new(name.clone(), x, labels)?;
        io::write_csv(&ds, &out.join(format!("{name}.csv")))?;
    }
    let paired = sample_coupled(&spec, world.paired_samples, &mut rng.split("paired"))?;
    let labels = paired
        .labels
        .as_ref()
        .map(|l| train::one_hot(l, spec.latent_law.num_classes()));
    io::write_csv(&Dataset::new("paired", paired.paired_matrix()?, labels)?, &out.join("paired.csv"))?;
    progress(
        g,
        format!(
            "gen-data: {} domains, {} samples each, {} paired rows -> {}",
            spec.num_domains(),
            world.samples,
            world.paired_samples,
            out.display()
        ),
    );
    Ok(Outcome::Ok)
}

fn training_config(g: &Global, cfg_file: &ConfigFile, domain: usize) -> anyhow::Result<TrainConfig> {
    let mut cfg = config::train_config(cfg_file, zero_based(domain)?)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn batch(ds: &Dataset, ignore_labels: bool) -> anyhow::Result<LabeledBatch> {
    let labels = if ignore_labels { None } else { ds.labels.clone() };
    Ok(LabeledBatch::new(ds.x.clone(), labels)?)
}

fn model_meta(cfg: &TrainConfig, command: &str, latent: &str) -> Vec<(String, String)> {
    let mut meta = vec![
        ("command".to_string(), command.to_string()),
        ("latent_source".to_string(), latent.to_string()),
    ];
    meta.extend(config::train_config_entries(cfg).into_iter().map(|(k, v)| (format!("config.{k}"), v)));
    meta
}

fn default_log_path(out: &Path) -> PathBuf {
    out.with_extension("log.csv")
}

#[allow(clippy::too_many_arguments)]
fn train_one(
    g: &Global,
    domain: usize,
    data: &Path,
    bank: Option<&train::SampleBank>,
    config: &Path,
    out: &Path,
    log: Option<&Path>,
    ignore_labels: bool,
) -> anyhow::Result<Outcome> {
    let cfg_file = load_config(config)?;
    let cfg = training_config(g, &cfg_file, domain)?;
    let ds = load_dataset(data)?;
    let data = batch(&ds, ignore_labels)?;
    let rng = Rng::new(cfg.seed);
    let id = domain_id(domain);
    let mut model = train::new_model(&id, &data, &cfg, &mut rng.split(&format!("{id}/init")))?;
    let latent = match bank {
        Some(b) => LatentSource::Bank(b),
        None => LatentSource::Prior,
    };
    let log_rows = train::train_autoencoder(&mut model, &data, &latent, &cfg, &mut rng.split(&format!("{id}/train")))?;
    let (command, source) = match bank {
        Some(b) => ("add-domain", format!("bank:{}", b.origin())),
        None => ("train", "prior".to_string()),
    };
    io::model_to_checkpoint(&model, &model_meta(&cfg, command, &source)).save(out)?;
    io::write_train_log(&log_rows, &log.map(Path::to_path_buf).unwrap_or_else(|| default_log_path(out)))?;
    let (recon, adv, disc) = log_rows.tail_means(100);
    progress(
        g,
        format!(
            "{command} {id}: {} steps, recon {recon:.5}, adv {adv:.4}, disc {disc:.4} -> {}",
            cfg.steps,
            out.display()
        ),
    );
    Ok(Outcome::Ok)
}

fn learn_latent(
    g: &Global,
    a: (usize, &PathBuf, &PathBuf),
    b: (usize, &PathBuf, &PathBuf),
    rounds: usize,
    out_bank: &Path,
    config: &Path,
    ignore_labels: bool,
) -> anyhow::Result<Outcome> {
    if a.0 == b.0 {
        bail!("--domain-a and --domain-b must differ");
    }
    let cfg_file = load_config(config)?;
    let cfg_a = training_config(g, &cfg_file, a.0)?;
    let cfg_b = training_config(g, &cfg_file, b.0)?;
    let data_a = batch(&load_dataset(a.1)?, ignore_labels)?;
    let data_b = batch(&load_dataset(b.1)?, ignore_labels)?;
    let rng = Rng::new(cfg_a.seed);
    let (id_a, id_b) = (domain_id(a.0), domain_id(b.0));
    let mut model_a = train::new_model(&id_a, &data_a, &cfg_a, &mut rng.split("init/a"))?;
    let mut model_b = train::new_model(&id_b, &data_b, &cfg_b, &mut rng.split("init/b"))?;
    let outcome = train::learn_latent_alternating(
        &mut model_a,
        &mut model_b,
        &data_a,
        &data_b,
        &cfg_a,
        rounds,
        cfg_a.bank_size(),
        &mut rng.split("alternate"),
    )?;
    let meta_a = model_meta(&cfg_a, "learn-latent", "alternating");
    let meta_b = model_meta(&cfg_b, "learn-latent", "alternating");
    io::model_to_checkpoint(&model_a, &meta_a).save(a.2)?;
    io::model_to_checkpoint(&model_b, &meta_b).save(b.2)?;
    io::write_train_log(&outcome.log_a, &default_log_path(a.2))?;
    io::write_train_log(&outcome.log_b, &default_log_path(b.2))?;
    let bank_meta = vec![("rounds".to_string(), rounds.to_string())];
    io::bank_to_checkpoint(&outcome.bank, &bank_meta).save(out_bank)?;
    progress(
        g,
        format!(
            "learn-latent {id_a}+{id_b}: {rounds} rounds, bank of {} codes -> {}",
            outcome.bank.len(),
            out_bank.display()
        ),
    );
    Ok(Outcome::Ok)
}

fn translate_cmd(g: &Global, src: &Path, dst: &Path, input: &Path, out: &Path) -> anyhow::Result<Outcome> {
    let src_model = load_model(src)?;
    let dst_model = load_model(dst)?;
    if src_model.latent_dim != dst_model.latent_dim {
        bail!(
            "latent dimensions differ: {} has d={}, {} has d={}",
            src.display(),
            src_model.latent_dim,
            dst.display(),
            dst_model.latent_dim
        );
    }
    let ds = load_dataset(input)?;
    let mut rng = Rng::new(g.seed.unwrap_or(0)).split("translate");
    let y = translate(&src_model, &dst_model, &ds.x, &mut rng)?;
    io::write_csv(&Dataset::new(dst_model.domain_id.clone(), y, ds.labels.clone())?, out)?;
    progress(
        g,
        format!(
            "translate {} -> {}: {} rows -> {}",
            src_model.domain_id,
            dst_model.domain_id,
            ds.x.rows(),
            out.display()
        ),
    );
    Ok(Outcome::Ok)
}
