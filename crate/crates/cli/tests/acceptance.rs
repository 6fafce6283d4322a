//! Acceptance suite. Runs every criterion in order and prints one
//! `criterion N: PASS|FAIL` line each; exits non-zero if any fails.
//! `UCAE_ACCEPTANCE=1,4` restricts the run to the listed criteria.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Output};
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context};
use ucae::io::{self, CheckpointKind};
use ucae::linalg::{euclidean, gauss_sample};
use ucae::metrics::{check_latent_match, check_transport_bound, sinkhorn_divergence, wasserstein1_exact, CheckConfig};
use ucae::model::{translate, translate_path, Architecture, Autoencoder, DomainModel, ShiftedLatent};
use ucae::nn::{architecture, Activation, LayerSpec, Mlp};
use ucae::sem::{make_sem, sample_coupled, LatentLaw, SemSpec};
use ucae::train::{class_ids, recon_loss};
use ucae::{Matrix, Rng};

const W4_DIMS: [(usize, usize); 4] = [(6, 0), (8, 1), (6, 0), (10, 2)];
const W4_PATHS: &str = "1-2-3,2-4-1-3";
/// Alternation rounds for two-domain latent learning on W4; one round is one
/// epoch (79 steps at 20000 rows), so 250 rounds ≈ the 20k-step budget.
const W4_ROUNDS: usize = 250;
const ALPHA: f64 = 0.01;

type Verdict = anyhow::Result<(bool, String)>;

fn main() -> ExitCode {
    let work = tempfile::tempdir().expect("temp dir");
    let mut ctx = Ctx {
        root: work.path().to_path_buf(),
        w4: None,
    };
    let criteria: [(u32, &str, fn(&mut Ctx) -> Verdict); 10] = [
        (1, "gradient correctness", criterion_1),
        (2, "OT oracle equivalence", criterion_2),
        (3, "constructive zero optimum", criterion_3),
        (4, "training convergence", criterion_4),
        (5, "path consistency", criterion_5),
        (6, "global consistency", criterion_6),
        (7, "transport bound", criterion_7),
        (8, "sequential modularity", criterion_8),
        (9, "label conditioning", criterion_9),
        (10, "determinism", criterion_10),
    ];
    let only: Option<Vec<u32>> = std::env::var("UCAE_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    let mut lines = Vec::new();
    for (n, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = match check(&mut ctx) {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e:#}")),
        };
        let line = format!(
            "criterion {n}: {} ({name}; {:.1}s) {detail}",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        println!("{line}");
        lines.push(line);
        failed += usize::from(!ok);
    }
    println!("\nacceptance summary:");
    for l in &lines {
        println!("  {l}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

struct Ctx {
    root: PathBuf,
    /// Directory of the reference W4 pipeline, once run.
    w4: Option<PathBuf>,
}

impl Ctx {
    fn dir(&self, name: &str) -> anyhow::Result<PathBuf> {
        let d = self.root.join(name);
        fs::create_dir_all(&d)?;
        Ok(d)
    }

    fn w4(&mut self) -> anyhow::Result<PathBuf> {
        if let Some(d) = &self.w4 {
            return Ok(d.clone());
        }
        let d = self.dir("w4")?;
        w4_pipeline(&d)?;
        self.w4 = Some(d.clone());
        Ok(d)
    }
}

// ---------------------------------------------------------------------------
// CLI helpers

fn ucae(dir: &Path, args: &[&str]) -> anyhow::Result<Output> {
    Command::new(env!("CARGO_BIN_EXE_ucae"))
        .current_dir(dir)
        .arg("--quiet")
        .args(args)
        .output()
        .context("spawning ucae")
}

fn ucae_ok(dir: &Path, args: &[&str]) -> anyhow::Result<()> {
    let out = ucae(dir, args)?;
    ensure!(
        out.status.success(),
        "`ucae {}` exited with {:?}: {}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr).trim()
    );
    Ok(())
}

/// Runs `eval`; exit 0 (all pass) and 3 (some check failed) both yield a report.
fn ucae_eval(dir: &Path, args: &[&str]) -> anyhow::Result<Vec<Row>> {
    let out = ucae(dir, args)?;
    let code = out.status.code();
    ensure!(
        matches!(code, Some(0) | Some(3)),
        "`ucae {}` exited with {code:?}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr).trim()
    );
    let report = args
        .iter()
        .position(|a| *a == "--report")
        .and_then(|i| args.get(i + 1))
        .context("eval without --report")?;
    let rows = read_report(&dir.join(report))?;
    let failed = rows.iter().any(|r| r.passed == Some(false));
    ensure!(failed == (code == Some(3)), "exit code {code:?} disagrees with the report");
    Ok(rows)
}

#[derive(Debug)]
struct Row {
    check: String,
    source: String,
    target: String,
    path: String,
    statistic: Option<f64>,
    p_value: Option<f64>,
    term_src: Option<f64>,
    passed: Option<bool>,
}

fn read_report(path: &Path) -> anyhow::Result<Vec<Row>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().context("empty report")?.split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).with_context(|| format!("no `{name}` column"));
    let (c_check, c_src, c_dst, c_path) = (col("check")?, col("source")?, col("target")?, col("path")?);
    let (c_stat, c_p, c_term, c_pass) = (col("statistic")?, col("p_value")?, col("term_src")?, col("passed")?);
    let num = |s: &str| -> anyhow::Result<Option<f64>> {
        Ok(if s.is_empty() { None } else { Some(s.parse()?) })
    };
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            ensure!(f.len() == header.len(), "ragged report row `{l}`");
            Ok(Row {
                check: f[c_check].to_string(),
                source: f[c_src].to_string(),
                target: f[c_dst].to_string(),
                path: f[c_path].to_string(),
                statistic: num(f[c_stat])?,
                p_value: num(f[c_p])?,
                term_src: num(f[c_term])?,
                passed: match f[c_pass] {
                    "" => None,
                    "true" => Some(true),
                    "false" => Some(false),
                    other => bail!("bad passed field `{other}`"),
                },
            })
        })
        .collect()
}

fn rows<'a>(all: &'a [Row], check: &str) -> Vec<&'a Row> {
    all.iter().filter(|r| r.check == check).collect()
}

fn min_p(rs: &[&Row]) -> f64 {
    rs.iter().filter_map(|r| r.p_value).fold(f64::INFINITY, f64::min)
}

/// Default world (W4), four domains trained against the prior, full eval.
fn w4_pipeline(dir: &Path) -> anyhow::Result<()> {
    fs::write(dir.join("w4.cfg"), "# reference world W4 with default training\n")?;
    ucae_ok(dir, &["gen-data", "--config", "w4.cfg", "--out", "data"])?;
    for i in 1..=4 {
        let (data, out) = (format!("data/domain_{i}.csv"), format!("m{i}.ckpt"));
        let i = i.to_string();
        ucae_ok(dir, &["train", "--domain", &i, "--data", &data, "--config", "w4.cfg", "--out", &out])?;
    }
    ucae_eval(
        dir,
        &[
            "eval", "--models", "m1.ckpt", "m2.ckpt", "m3.ckpt", "m4.ckpt", "--data", "data", "--paths", W4_PATHS,
            "--report", "report.csv",
        ],
    )?;
    Ok(())
}

fn load_model(path: &Path) -> anyhow::Result<DomainModel> {
    Ok(io::model_from_checkpoint(&io::Checkpoint::load(path)?)?)
}

fn load_world(data: &Path) -> anyhow::Result<SemSpec> {
    let c = io::Checkpoint::load(&data.join("world.ckpt"))?;
    c.expect_kind(CheckpointKind::SemSpec)?;
    Ok(io::sem_from_checkpoint(&c)?)
}

// ---------------------------------------------------------------------------
// 1. Finite differences

const FD_H: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

fn activate(a: Activation, v: f64) -> f64 {
    match a {
        Activation::Identity => v,
        Activation::Tanh => v.tanh(),
        Activation::LeakyRelu(slope) => {
            if v > 0.0 {
                v
            } else {
                slope * v
            }
        }
    }
}

/// Loop-based forward pass of one network on fixed probe rows, with cached
/// activations so a single perturbed unit is re-propagated from its layer on.
struct FdProbe {
    specs: Vec<LayerSpec>,
    ws: Vec<Matrix>,
    bs: Vec<Vec<f64>>,
    /// `pre[l][row]`: pre-activations of layer `l`.
    pre: Vec<Vec<Vec<f64>>>,
    /// `post[l][row]`: input of layer `l` (`post[0]` is the probe input).
    post: Vec<Vec<Vec<f64>>>,
    upstream: Matrix,
}

impl FdProbe {
    fn new(net: &Mlp, x: &Matrix, upstream: Matrix) -> Self {
        let specs = net.specs().to_vec();
        let ws: Vec<Matrix> = (0..specs.len()).map(|l| net.weight(l).clone()).collect();
        let bs: Vec<Vec<f64>> = (0..specs.len()).map(|l| net.bias(l).to_vec()).collect();
        let mut pre = vec![Vec::new(); specs.len()];
        let mut post = vec![Vec::new(); specs.len() + 1];
        for r in 0..x.rows() {
            let mut h = x.row(r).to_vec();
            post[0].push(h.clone());
            for (l, s) in specs.iter().enumerate() {
                let p: Vec<f64> =
                    (0..s.out_dim).map(|o| bs[l][o] + (0..s.in_dim).map(|i| ws[l].get(o, i) * h[i]).sum::<f64>()).collect();
                h = p.iter().map(|&v| activate(s.activation, v)).collect();
                pre[l].push(p);
                post[l + 1].push(h.clone());
            }
        }
        FdProbe { specs, ws, bs, pre, post, upstream }
    }

    /// Closest approach of any LeakyReLU pre-activation to its kink.
    fn kink_margin(&self) -> f64 {
        let mut m = f64::INFINITY;
        for (l, s) in self.specs.iter().enumerate() {
            if matches!(s.activation, Activation::LeakyRelu(_)) {
                m = self.pre[l].iter().flatten().fold(m, |m, v| m.min(v.abs()));
            }
        }
        m
    }

    fn finish(&self, from: usize, mut h: Vec<f64>, row: usize) -> f64 {
        for l in from..self.specs.len() {
            let s = self.specs[l];
            h = (0..s.out_dim)
                .map(|o| {
                    let v = self.bs[l][o] + (0..s.in_dim).map(|i| self.ws[l].get(o, i) * h[i]).sum::<f64>();
                    activate(s.activation, v)
                })
                .collect();
        }
        h.iter().zip(self.upstream.row(row)).map(|(a, b)| a * b).sum()
    }

    /// Loss `Σ out ⊙ upstream` after adding `delta(row)` to pre-activation
    /// `unit` of layer `layer`.
    fn loss_with(&self, layer: usize, unit: usize, delta: impl Fn(usize) -> f64) -> f64 {
        let mut total = 0.0;
        for row in 0..self.upstream.rows() {
            let s = self.specs[layer];
            let mut h = self.post[layer + 1][row].clone();
            let changed = activate(s.activation, self.pre[layer][row][unit] + delta(row));
            let diff = changed - h[unit];
            h[unit] = changed;
            total += if layer + 1 < self.specs.len() {
                let next = self.specs[layer + 1];
                let pre: Vec<f64> =
                    (0..next.out_dim).map(|o| self.pre[layer + 1][row][o] + self.ws[layer + 1].get(o, unit) * diff).collect();
                let h: Vec<f64> = pre.iter().map(|&v| activate(next.activation, v)).collect();
                self.finish(layer + 2, h, row)
            } else {
                h.iter().zip(self.upstream.row(row)).map(|(a, b)| a * b).sum()
            };
        }
        total
    }

    fn loss_at_input(&self, x: &Matrix) -> f64 {
        (0..x.rows()).map(|r| self.finish(0, x.row(r).to_vec(), r)).sum()
    }
}

/// Worst relative error `|fd − analytic| / max(1, |analytic|)` over every
/// parameter and input entry, analytic gradients from the library's backward.
fn worst_fd_error(net: &mut Mlp, x: &Matrix, probe: &FdProbe) -> f64 {
    net.zero_grad();
    net.forward(x).unwrap();
    let dx = net.backward(&probe.upstream).unwrap();
    let grads = net.gradients();
    let rel = |fd: f64, an: f64| (fd - an).abs() / an.abs().max(1.0);
    let mut worst = 0.0f64;
    let mut k = 0;
    for (l, s) in probe.specs.iter().enumerate() {
        for o in 0..s.out_dim {
            for i in 0..s.in_dim {
                let up = probe.loss_with(l, o, |r| FD_H * probe.post[l][r][i]);
                let down = probe.loss_with(l, o, |r| -FD_H * probe.post[l][r][i]);
                worst = worst.max(rel((up - down) / (2.0 * FD_H), grads[k + o * s.in_dim + i]));
            }
        }
        k += s.out_dim * s.in_dim;
        for o in 0..s.out_dim {
            let up = probe.loss_with(l, o, |_| FD_H);
            let down = probe.loss_with(l, o, |_| -FD_H);
            worst = worst.max(rel((up - down) / (2.0 * FD_H), grads[k + o]));
        }
        k += s.out_dim;
    }
    assert_eq!(k, grads.len());
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.set(i, j, x.get(i, j) + FD_H);
            xm.set(i, j, x.get(i, j) - FD_H);
            let fd = (probe.loss_at_input(&xp) - probe.loss_at_input(&xm)) / (2.0 * FD_H);
            worst = worst.max(rel(fd, dx.get(i, j)));
        }
    }
    worst
}

fn criterion_1(_: &mut Ctx) -> Verdict {
    let start = Instant::now();
    let arch = Architecture::default();
    let act = arch.hidden_activation;
    let mut nets = Vec::new();
    for (i, (n, m)) in W4_DIMS.into_iter().enumerate() {
        let code = 2 + m;
        nets.push((format!("encoder{}", i + 1), architecture(n, &arch.encoder_hidden, code, act, Activation::Identity)));
        nets.push((format!("decoder{}", i + 1), architecture(code, &arch.decoder_hidden, n, act, Activation::Identity)));
        nets.push((format!("disc{}", i + 1), architecture(code, &arch.disc_hidden, 1, act, Activation::Identity)));
    }
    nets.push(("disc_labeled".into(), architecture(2 + 2, &arch.disc_hidden, 1, act, Activation::Identity)));
    let mut rng = Rng::new(2024);
    let mut worst = (0.0f64, String::new());
    for (name, specs) in nets {
        let mut net = Mlp::new(&specs, &mut rng.split(&name))?;
        let (x, probe) = loop {
            let x = gauss_sample(&mut rng, 2, net.in_dim());
            let probe = FdProbe::new(&net, &x, gauss_sample(&mut rng, 2, net.out_dim()));
            // a step of FD_H must not cross a LeakyReLU kink
            if probe.kink_margin() > 1e-3 {
                break (x, probe);
            }
        };
        let e = worst_fd_error(&mut net, &x, &probe);
        if e > worst.0 {
            worst = (e, name);
        }
    }
    let elapsed = start.elapsed();
    let ok = worst.0 < FD_TOL && elapsed < Duration::from_secs(10);
    Ok((ok, format!("worst relative error {:.2e} ({}), {elapsed:.2?} (< 10 s)", worst.0, worst.1)))
}

// ---------------------------------------------------------------------------
// 2. Exact W1 vs brute force, Sinkhorn vs exact

fn brute_force_w1(a: &Matrix, b: &Matrix) -> f64 {
    fn perms(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in perms(n - 1) {
            for pos in 0..n {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }
    let n = a.rows();
    perms(n)
        .iter()
        .map(|p| (0..n).map(|i| euclidean(a.row(i), b.row(p[i]))).sum::<f64>() / n as f64)
        .fold(f64::INFINITY, f64::min)
}

/// Orders the pair by raw data so both solvers sum over the same side.
fn ordered(a: Matrix, b: Matrix) -> (Matrix, Matrix) {
    let a_first = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .is_none_or(|o| o.is_lt());
    if a_first {
        (a, b)
    } else {
        (b, a)
    }
}

fn criterion_2(_: &mut Ctx) -> Verdict {
    let start = Instant::now();
    let mut rng = Rng::new(77);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = 1 + rng.below(6);
        let dim = 1 + rng.below(3);
        let (a, b) = if dim == 1 {
            // several 1-D matchings tie at the optimum; dyadic points keep every
            // candidate sum exact so ties cannot round differently
            let mut dyadic = || Matrix::from_fn(n, 1, |_, _| rng.below(129) as f64 / 16.0 - 4.0);
            (dyadic(), dyadic())
        } else {
            ordered(gauss_sample(&mut rng, n, dim), gauss_sample(&mut rng, n, dim))
        };
        let same = wasserstein1_exact(&a, &b)? == brute_force_w1(&a, &b);
        mismatches += usize::from(!same);
    }
    let mut worst_rel = 0.0f64;
    for _ in 0..3 {
        let a = gauss_sample(&mut rng, 64, 1);
        let b = gauss_sample(&mut rng, 64, 1).add_row_vector(&[1.0])?;
        let exact = wasserstein1_exact(&a, &b)?;
        let s = sinkhorn_divergence(&a, &b, 1e-3, 1_000_000)?;
        worst_rel = worst_rel.max((s - exact).abs() / exact);
    }
    let elapsed = start.elapsed();
    let ok = mismatches == 0 && worst_rel <= 0.02 && elapsed < Duration::from_secs(30);
    Ok((
        ok,
        format!("{mismatches}/200 brute-force mismatches, Sinkhorn worst relative gap {worst_rel:.2e}, {elapsed:.2?} (< 30 s)"),
    ))
}

// ---------------------------------------------------------------------------
// 3. Oracle autoencoders

fn w4_world(seed: u64, noiseless: bool) -> anyhow::Result<SemSpec> {
    let dims: Vec<(usize, usize)> = W4_DIMS.iter().map(|&(n, m)| (n, if noiseless { 0 } else { m })).collect();
    Ok(make_sem(2, &dims, 0.5, LatentLaw::StandardNormal, &mut Rng::new(seed))?)
}

fn criterion_3(_: &mut Ctx) -> Verdict {
    let world = w4_world(0, false)?;
    let set = sample_coupled(&world, 2000, &mut Rng::new(1))?;
    let cfg = CheckConfig::default();
    let mut worst_recon = 0.0f64;
    let mut min_latent_p = f64::INFINITY;
    for i in 0..4 {
        let o = world.oracle(i)?;
        worst_recon = worst_recon.max(recon_loss(&o, &set.xs[i])?);
        let prior = gauss_sample(&mut Rng::new(10 + i as u64), cfg.samples, o.code_dim());
        let r = check_latent_match(&o, &set.xs[i], &prior, &mut Rng::new(20 + i as u64), &cfg)?;
        min_latent_p = min_latent_p.min(r.permutation_p);
    }
    let quiet = w4_world(0, true)?;
    let pairs = sample_coupled(&quiet, 2000, &mut Rng::new(2))?;
    let mut worst_translation = 0.0f64;
    for s in 0..4 {
        for t in 0..4 {
            if s != t {
                let y = translate(&quiet.oracle(s)?, &quiet.oracle(t)?, &pairs.xs[s], &mut Rng::new(3))?;
                worst_translation = worst_translation.max(y.max_abs_diff(&pairs.xs[t]));
            }
        }
    }
    let ok = worst_recon < 1e-16 && min_latent_p > ALPHA && worst_translation < 1e-8;
    Ok((
        ok,
        format!(
            "worst recon {worst_recon:.1e} (< 1e-16), min latent p {min_latent_p:.3} (> 0.01), \
             worst noiseless translation error {worst_translation:.1e} (< 1e-8)"
        ),
    ))
}

// ---------------------------------------------------------------------------
// 4-7. Trained W4

fn convergence(report: &[Row]) -> (bool, String) {
    let recon = rows(report, "recon");
    let latent = rows(report, "latent");
    let worst_ratio = recon.iter().filter_map(|r| r.statistic).fold(0.0, f64::max);
    let ok = recon.len() == 4
        && latent.len() == 4
        && recon.iter().chain(&latent).all(|r| r.passed == Some(true));
    (ok, format!("worst recon/variance {worst_ratio:.2e} (< 0.02), min latent p {:.3} (> 0.01)", min_p(&latent)))
}

fn criterion_4(ctx: &mut Ctx) -> Verdict {
    let dir = ctx.w4()?;
    Ok(convergence(&read_report(&dir.join("report.csv"))?))
}

/// Path rows `1-2-3` and `2-4-1-3` of a report.
fn trained_paths(report: &[Row]) -> (bool, String) {
    let path = rows(report, "path");
    let found: Vec<&str> = path.iter().map(|r| r.path.as_str()).collect();
    let ok = found == ["1-2-3", "2-4-1-3"] && path.iter().all(|r| r.passed == Some(true));
    let ps: Vec<String> = path.iter().map(|r| format!("{} p {:.3}", r.path, r.p_value.unwrap_or(f64::NAN))).collect();
    (ok, ps.join(", "))
}

fn criterion_5(ctx: &mut Ctx) -> Verdict {
    let dir = ctx.w4()?;
    let (trained_ok, detail) = trained_paths(&read_report(&dir.join("report.csv"))?);
    let quiet = w4_world(0, true)?;
    let oracles: Vec<_> = (0..4).map(|i| quiet.oracle(i)).collect::<ucae::Result<_>>()?;
    let x = sample_coupled(&quiet, 2000, &mut Rng::new(4))?.xs;
    let mut worst = 0.0f64;
    for (path, src) in [(vec![0, 1, 2], 0), (vec![1, 3, 0, 2], 1)] {
        let chain: Vec<&dyn Autoencoder> = path.iter().map(|&i| &oracles[i] as &dyn Autoencoder).collect();
        let via = translate_path(&chain, &x[src], &mut Rng::new(5))?;
        let direct = translate(chain[0], chain[chain.len() - 1], &x[src], &mut Rng::new(6))?;
        worst = worst.max(via.max_abs_diff(&direct));
    }
    Ok((trained_ok && worst <= 1e-8, format!("{detail}; oracle path vs direct {worst:.1e} (<= 1e-8)")))
}

fn global_verdict(report: &[Row]) -> (bool, String) {
    let global = rows(report, "global");
    let ok = global.len() == 6 && global.iter().all(|r| r.passed == Some(true));
    let ps: Vec<String> = global
        .iter()
        .map(|r| format!("{}v{} {:.3}", r.source, r.target, r.p_value.unwrap_or(f64::NAN)))
        .collect();
    (ok, format!("6 pairs, p: {}", ps.join(" ")))
}

fn criterion_6(ctx: &mut Ctx) -> Verdict {
    let dir = ctx.w4()?;
    Ok(global_verdict(&read_report(&dir.join("report.csv"))?))
}

fn criterion_7(ctx: &mut Ctx) -> Verdict {
    let dir = ctx.w4()?;
    let mut passing = 0;
    let mut failures = Vec::new();
    for seed in 0..20 {
        let s = seed.to_string();
        let report = format!("bound_{seed}.csv");
        let all = ucae_eval(
            &dir,
            &[
                "eval", "--seed", &s, "--checks", "bound", "--models", "m1.ckpt", "m2.ckpt", "m3.ckpt", "m4.ckpt",
                "--data", "data", "--report", &report,
            ],
        )?;
        let bound = rows(&all, "bound");
        ensure!(bound.len() == 12, "seed {seed}: {} bound rows", bound.len());
        if bound.iter().all(|r| r.passed == Some(true)) {
            passing += 1;
        } else {
            failures.push(seed);
        }
    }
    let seed0 = rows(&read_report(&dir.join("bound_0.csv"))?, "bound")
        .iter()
        .map(|r| r.term_src.unwrap_or(f64::NAN))
        .fold(0.0, f64::max);

    // corrupted-encoder probe on the trained 1 -> 2 pair
    let (m1, m2) = (load_model(&dir.join("m1.ckpt"))?, load_model(&dir.join("m2.ckpt"))?);
    let x1 = io::read_csv(&dir.join("data/domain_1.csv"))?.x;
    let x2 = io::read_csv(&dir.join("data/domain_2.csv"))?.x;
    let cfg = CheckConfig::default();
    let p1 = gauss_sample(&mut Rng::new(31), cfg.samples, m1.code_dim());
    let p2 = gauss_sample(&mut Rng::new(32), cfg.samples, m2.code_dim());
    let mut terms = Vec::new();
    for c in [0.0, 0.5, 1.0, 2.0] {
        let shifted = ShiftedLatent { inner: &m1, shift: c };
        terms.push(check_transport_bound(&shifted, &m2, &x1, &x2, &p1, &p2, &mut Rng::new(33), &cfg)?.term_src);
    }
    let monotone = terms.windows(2).all(|w| w[1] > w[0]);
    let ok = passing >= 19 && monotone;
    Ok((
        ok,
        format!(
            "{passing}/20 seeds hold on all 12 pairs (>= 19; failing seeds {failures:?}; seed-0 max term_src {seed0:.3}); \
             shifted term_src at c=0,0.5,1,2: {} (monotone: {monotone})",
            terms.iter().map(|t| format!("{t:.3}")).collect::<Vec<_>>().join(", ")
        ),
    ))
}

// ---------------------------------------------------------------------------
// 8. Sequential modularity

fn snapshot(dir: &Path, names: &[&str]) -> anyhow::Result<BTreeMap<String, Vec<u8>>> {
    names.iter().map(|n| Ok((n.to_string(), fs::read(dir.join(n))?))).collect()
}

fn criterion_8(ctx: &mut Ctx) -> Verdict {
    let w4 = ctx.w4()?;
    let dir = ctx.dir("modular")?;
    fs::write(dir.join("w4.cfg"), "")?;
    let data = w4.join("data");
    let data = data.to_str().context("non-UTF-8 temp path")?;
    let csv = |i: usize| format!("{data}/domain_{i}.csv");
    let rounds = W4_ROUNDS.to_string();
    ucae_ok(
        &dir,
        &[
            "learn-latent", "--domain-a", "1", "--data-a", &csv(1), "--out-a", "m1.ckpt", "--domain-b", "2", "--data-b",
            &csv(2), "--out-b", "m2.ckpt", "--rounds", &rounds, "--out-bank", "bank.ckpt", "--config", "w4.cfg",
        ],
    )?;
    let frozen = ["m1.ckpt", "m2.ckpt", "bank.ckpt"];
    let before = snapshot(&dir, &frozen)?;

    // domains 3 and 4 as concurrent processes
    let spawn = |i: usize| {
        Command::new(env!("CARGO_BIN_EXE_ucae"))
            .current_dir(&dir)
            .args(["--quiet", "add-domain", "--domain", &i.to_string(), "--data", &csv(i)])
            .args(["--bank", "bank.ckpt", "--config", "w4.cfg", "--out", &format!("m{i}.ckpt")])
            .spawn()
    };
    let (mut c3, mut c4) = (spawn(3)?, spawn(4)?);
    let (s3, s4) = (c3.wait()?, c4.wait()?);
    ensure!(s3.success() && s4.success(), "add-domain exit codes {:?} {:?}", s3.code(), s4.code());
    let unchanged = snapshot(&dir, &frozen)? == before;

    let report = ucae_eval(
        &dir,
        &[
            "eval", "--checks", "path,global,recon,latent", "--bank", "bank.ckpt", "--models", "m1.ckpt", "m2.ckpt",
            "m3.ckpt", "m4.ckpt", "--data", data, "--paths", W4_PATHS, "--report", "report.csv",
        ],
    )?;
    let (c4_ok, c4_detail) = convergence(&report);
    let (c5_ok, c5_detail) = trained_paths(&report);
    let (c6_ok, c6_detail) = global_verdict(&report);
    Ok((
        unchanged && c4_ok && c5_ok && c6_ok,
        format!(
            "domains 1-2 byte-identical after adding 3-4: {unchanged}; [4] {c4_ok}: {c4_detail}; \
             [5] {c5_ok}: {c5_detail}; [6] {c6_ok}: {c6_detail}"
        ),
    ))
}

// ---------------------------------------------------------------------------
// 9. Label conditioning

const CLUSTER_ROUNDS: usize = 250;

/// Fraction of paired rows whose translation lands in the true cluster,
/// read off by inverting the target domain's generator; worse direction.
fn cluster_agreement(dir: &Path, prefix: &str) -> anyhow::Result<f64> {
    let world = load_world(&dir.join("data"))?;
    let paired = io::read_csv(&dir.join("data/paired.csv"))?;
    let truth = class_ids(paired.labels.as_ref().context("paired set lacks labels")?);
    let (n1, n2) = (world.domains[0].obs_dim, world.domains[1].obs_dim);
    let blocks = [paired.x.columns(0, n1), paired.x.columns(n1, n1 + n2)];
    let models = [load_model(&dir.join(format!("{prefix}1.ckpt")))?, load_model(&dir.join(format!("{prefix}2.ckpt")))?];
    let mut worst = 1.0f64;
    for (s, t) in [(0, 1), (1, 0)] {
        let y = translate(&models[s], &models[t], &blocks[s], &mut Rng::new(5))?;
        let z = world.oracle(t)?.encode_raw(&y)?;
        let hits = (0..z.rows()).filter(|&r| world.latent_law.classify(z.row(r)) == Some(truth[r])).count();
        worst = worst.min(hits as f64 / z.rows() as f64);
    }
    Ok(worst)
}

fn criterion_9(ctx: &mut Ctx) -> Verdict {
    let mut conditioned = Vec::new();
    let mut unconditioned = Vec::new();
    for seed in 0..5 {
        let dir = ctx.dir(&format!("clusters{seed}"))?;
        fs::write(
            dir.join("c.cfg"),
            format!(
                "latent_law = two_cluster(4,0.5)\ndomains = 6:0,8:1\nsamples = 5000\npaired_samples = 1000\n\
                 world_seed = {seed}\nseed = {seed}\n"
            ),
        )?;
        ucae_ok(&dir, &["gen-data", "--config", "c.cfg", "--out", "data"])?;
        let rounds = CLUSTER_ROUNDS.to_string();
        for (prefix, extra) in [("c", None), ("u", Some("--ignore-labels"))] {
            let (a, b, bank) = (format!("{prefix}1.ckpt"), format!("{prefix}2.ckpt"), format!("{prefix}bank.ckpt"));
            let mut args = vec![
                "learn-latent", "--domain-a", "1", "--data-a", "data/domain_1.csv", "--out-a", &a, "--domain-b", "2",
                "--data-b", "data/domain_2.csv", "--out-b", &b, "--rounds", &rounds, "--out-bank", &bank, "--config",
                "c.cfg",
            ];
            args.extend(extra);
            ucae_ok(&dir, &args)?;
        }
        conditioned.push(cluster_agreement(&dir, "c")?);
        unconditioned.push(cluster_agreement(&dir, "u")?);
    }
    let fmt = |v: &[f64]| v.iter().map(|a| format!("{:.1}%", 100.0 * a)).collect::<Vec<_>>().join(" ");
    let ok = conditioned.iter().all(|&a| a > 0.9);
    Ok((
        ok,
        format!(
            "conditioned agreement per seed: {} (> 90%); unconditioned (no threshold): {}",
            fmt(&conditioned),
            fmt(&unconditioned)
        ),
    ))
}

// ---------------------------------------------------------------------------
// 10. Determinism

fn files(dir: &Path) -> anyhow::Result<BTreeMap<PathBuf, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir)?.to_path_buf(), fs::read(&p)?);
            }
        }
    }
    Ok(out)
}

fn criterion_10(ctx: &mut Ctx) -> Verdict {
    let first = ctx.w4()?;
    let second = ctx.dir("w4_rerun")?;
    w4_pipeline(&second)?;
    let a = files(&first)?;
    let b = files(&second)?;
    // the first directory also holds the criterion 7 bound reports
    let differing: Vec<String> = b
        .iter()
        .filter(|(name, bytes)| a.get(*name) != Some(*bytes))
        .map(|(name, _)| name.display().to_string())
        .collect();
    Ok((
        differing.is_empty() && b.len() >= 14,
        format!("{} files from the rerun compared byte-for-byte, differing: {differing:?}", b.len()),
    ))
}
