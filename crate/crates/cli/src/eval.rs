//! The `eval` subcommand.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use ucae::io::{self, CheckpointKind};
use ucae::linalg::{euclidean, gauss_sample};
use ucae::metrics::{self, CheckConfig, ReportRow};
use ucae::model::{translate, Autoencoder, DomainModel};
use ucae::train::SampleBank;
use ucae::{Matrix, Rng};

use crate::{domain_id, domain_index, load_bank, load_checkpoint, load_config, load_dataset, load_model, progress};
use crate::{Global, Outcome};

/// Reconstruction error must stay below this fraction of the data's total
/// variance.
pub const RECON_TOLERANCE: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum CheckName {
    Path,
    Global,
    Bound,
    Recon,
    Latent,
    /// Mean translation error on the quarantined paired set (report only).
    Paired,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Model checkpoints; each model's data is `<data>/domain_<i>.csv`.
    #[arg(long, num_args = 1.., required = true)]
    models: Vec<PathBuf>,
    /// Directory written by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "path,global,bound,recon,latent")]
    checks: Vec<CheckName>,
    #[arg(long)]
    report: PathBuf,
    /// Config with `eval_samples`, `n_permutations`, `alpha`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Frozen bank standing in for the latent prior (default: N(0, I)).
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Translation paths as dash-separated domain lists, e.g. `1-2-3,2-4-1-3`.
    #[arg(long, value_delimiter = ',')]
    paths: Vec<String>,
}

fn parse_path(s: &str) -> anyhow::Result<Vec<usize>> {
    s.split('-')
        .map(|t| t.trim().parse::<usize>().with_context(|| format!("bad path `{s}`")))
        .collect()
}

pub fn run(g: &Global, args: &EvalArgs) -> anyhow::Result<Outcome> {
    let cfg = match &args.config {
        Some(p) => ucae::config::check_config(&load_config(p)?)?,
        None => CheckConfig::default(),
    };
    let mut models: BTreeMap<usize, DomainModel> = BTreeMap::new();
    for p in &args.models {
        let m = load_model(p)?;
        let idx = domain_index(&m.domain_id)?;
        if models.insert(idx, m).is_some() {
            bail!("two models for {}", domain_id(idx));
        }
    }
    let latent_dims: Vec<usize> = models.values().map(|m| m.latent_dim).collect();
    if latent_dims.windows(2).any(|w| w[0] != w[1]) {
        bail!("models disagree on the latent dimension: {latent_dims:?}");
    }
    let mut data: BTreeMap<usize, Matrix> = BTreeMap::new();
    for (&i, m) in &models {
        let ds = load_dataset(&args.data.join(format!("{}.csv", domain_id(i))))?;
        if ds.dim() != m.obs_dim {
            bail!("{}.csv has {} columns, model expects {}", domain_id(i), ds.dim(), m.obs_dim);
        }
        data.insert(i, ds.x);
    }
    let bank: Option<SampleBank> = args.bank.as_deref().map(load_bank).transpose()?;
    let seed = g.seed.unwrap_or(0);
    let root = Rng::new(seed).split("eval");
    let priors: BTreeMap<usize, Matrix> = models
        .iter()
        .map(|(&i, m)| {
            let mut r = root.split(&format!("prior{i}"));
            let n = cfg.samples;
            let z = match &bank {
                Some(b) => b.draw(&mut r, n),
                None => gauss_sample(&mut r, n, m.latent_dim),
            };
            Ok((i, z.hcat(&gauss_sample(&mut r, n, m.noise_dim))?))
        })
        .collect::<anyhow::Result<_>>()?;

    let ids: Vec<usize> = models.keys().copied().collect();
    let refs: Vec<&dyn Autoencoder> = models.values().map(|m| m as &dyn Autoencoder).collect();
    let pos = |i: usize| ids.iter().position(|&x| x == i);
    let mut checks = args.checks.clone();
    checks.sort();
    checks.dedup();
    let mut rows = Vec::new();

    for check in checks {
        match check {
            CheckName::Path => {
                let paths: Vec<Vec<usize>> = if args.paths.is_empty() {
                    if ids.len() < 3 {
                        bail!("path check needs at least three models");
                    }
                    vec![ids[..3].to_vec()]
                } else {
                    args.paths.iter().map(|p| parse_path(p)).collect::<anyhow::Result<_>>()?
                };
                for path in paths {
                    let local: Vec<usize> = path
                        .iter()
                        .map(|&i| pos(i).with_context(|| format!("path uses {} without a model", domain_id(i))))
                        .collect::<anyhow::Result<_>>()?;
                    let tag = path.iter().map(ToString::to_string).collect::<Vec<_>>().join("-");
                    let r = metrics::check_path_consistency(
                        &refs,
                        &local,
                        &data[&path[0]],
                        &mut root.split(&format!("path{tag}")),
                        &cfg,
                    )?;
                    rows.push(ReportRow {
                        check: "path".into(),
                        source: Some(path[0]),
                        target: path.last().copied(),
                        path: Some(path.clone()),
                        statistic: Some(r.statistic),
                        p_value: Some(r.permutation_p),
                        passed: Some(r.passes(cfg.alpha)),
                        ..Default::default()
                    });
                }
            }
            CheckName::Global => {
                let marginals: Vec<Matrix> = ids.iter().map(|i| data[i].clone()).collect();
                let table = metrics::check_global_consistency(&refs, &marginals, &mut root.split("global"), &cfg)?;
                for p in table {
                    rows.push(ReportRow {
                        check: "global".into(),
                        source: Some(ids[p.source_a]),
                        target: Some(ids[p.source_b]),
                        statistic: Some(p.result.statistic),
                        p_value: Some(p.result.permutation_p),
                        passed: Some(p.result.passes(cfg.alpha)),
                        ..Default::default()
                    });
                }
            }
            CheckName::Bound => {
                for &s in &ids {
                    for &t in &ids {
                        if s == t {
                            continue;
                        }
                        let b = metrics::check_transport_bound(
                            &models[&s],
                            &models[&t],
                            &data[&s],
                            &data[&t],
                            &priors[&s],
                            &priors[&t],
                            &mut root.split(&format!("bound{s}-{t}")),
                            &cfg,
                        )?;
                        rows.push(ReportRow {
                            check: "bound".into(),
                            source: Some(s),
                            target: Some(t),
                            passed: Some(b.holds),
                            bound: Some(b),
                            ..Default::default()
                        });
                    }
                }
            }
            CheckName::Recon => {
                for &i in &ids {
                    let r = metrics::check_reconstruction(&models[&i], &data[&i])?;
                    rows.push(ReportRow {
                        check: "recon".into(),
                        source: Some(i),
                        statistic: Some(r.ratio()),
                        passed: Some(r.ratio() < RECON_TOLERANCE),
                        ..Default::default()
                    });
                }
            }
            CheckName::Latent => {
                for &i in &ids {
                    let r = metrics::check_latent_match(
                        &models[&i],
                        &data[&i],
                        &priors[&i],
                        &mut root.split(&format!("latent{i}")),
                        &cfg,
                    )?;
                    rows.push(ReportRow {
                        check: "latent".into(),
                        source: Some(i),
                        statistic: Some(r.statistic),
                        p_value: Some(r.permutation_p),
                        passed: Some(r.passes(cfg.alpha)),
                        ..Default::default()
                    });
                }
            }
            CheckName::Paired => rows.extend(paired_rows(args, &models, &root)?),
        }
    }
    io::write_report(&rows, &args.report)?;
    let failed = rows.iter().filter(|r| r.passed == Some(false)).count();
    progress(
        g,
        format!("eval: {} rows, {failed} failed -> {}", rows.len(), args.report.display()),
    );
    Ok(if failed > 0 { Outcome::ChecksFailed } else { Outcome::Ok })
}

/// Mean `‖translate(x_s) − x_t‖` over the paired rows for every ordered pair.
fn paired_rows(args: &EvalArgs, models: &BTreeMap<usize, DomainModel>, root: &Rng) -> anyhow::Result<Vec<ReportRow>> {
    let world = io::sem_from_checkpoint(&load_checkpoint(&args.data.join("world.ckpt"), CheckpointKind::SemSpec)?)?;
    let paired = load_dataset(&args.data.join("paired.csv"))?;
    let mut offsets = vec![0];
    for g in &world.domains {
        offsets.push(offsets.last().copied().unwrap_or(0) + g.obs_dim);
    }
    if paired.dim() != *offsets.last().unwrap_or(&0) {
        bail!("paired.csv width does not match the world checkpoint");
    }
    let block = |i: usize| -> anyhow::Result<Matrix> {
        if i == 0 || i > world.num_domains() {
            bail!("{} is not in the world", domain_id(i));
        }
        Ok(paired.x.columns(offsets[i - 1], offsets[i]))
    };
    let mut rows = Vec::new();
    for (&s, ms) in models {
        for (&t, mt) in models {
            if s == t {
                continue;
            }
            let y = translate(ms, mt, &block(s)?, &mut root.split(&format!("paired{s}-{t}")))?;
            let truth = block(t)?;
            let err = y.row_iter().zip(truth.row_iter()).map(|(a, b)| euclidean(a, b)).sum::<f64>()
                / truth.rows().max(1) as f64;
            rows.push(ReportRow {
                check: "paired".into(),
                source: Some(s),
                target: Some(t),
                statistic: Some(err),
                ..Default::default()
            });
        }
    }
    Ok(rows)
}
