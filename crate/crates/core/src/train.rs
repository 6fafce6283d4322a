//! Adversarial latent-matching training of one domain's autoencoder, the
//! two-domain alternating procedure for learning the latent distribution,
//! and sequential addition of new domains against a frozen latent bank.
//!
//! One training step on a batch `x₁…x_N`:
//!
//! 1. encoder/decoder descend `(1/N) Σ ‖x_j − D(E(x_j))‖² + λ·(1/N) Σ log f(E(x_j))`;
//! 2. the discriminator ascends
//!    `(1/N) Σ [log f(E(x_j)) + log(1 − f(z_j, n_j))]` where `(z_j, n_j)` are
//!    drawn from the latent target.
//!
//! `f = sigmoid(logit)` and every log-probability is evaluated in logit space.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{gauss_sample, Matrix, Rng};
use crate::model::{encode_shared, Architecture, Autoencoder, DomainModel};
use crate::nn::{Mlp, Optimizer, OptimizerConfig};

/// How the encoder's adversarial term is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdversarialLoss {
    /// Descend `log f(E(x))`, exactly as in the min-max objective.
    Saturating,
    /// Descend `−log(1 − f(E(x)))`; same fixed point, stronger early gradients.
    NonSaturating,
}

impl FromStr for AdversarialLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "saturating" => Ok(AdversarialLoss::Saturating),
            "non_saturating" => Ok(AdversarialLoss::NonSaturating),
            other => Err(Error::invalid("AdversarialLoss", format!("unknown variant `{other}`"))),
        }
    }
}

impl fmt::Display for AdversarialLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdversarialLoss::Saturating => "saturating",
            AdversarialLoss::NonSaturating => "non_saturating",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub disc_steps_per_gen_step: usize,
    pub gen_optimizer: OptimizerConfig,
    pub disc_optimizer: OptimizerConfig,
    pub arch: Architecture,
    pub latent_dim: usize,
    pub noise_dim: usize,
    pub adversarial: AdversarialLoss,
    /// Alternating procedure: steps per domain per round. `None` means one
    /// pass over the data (`ceil(rows / batch_size)`).
    pub epoch_steps: Option<usize>,
    /// Alternating procedure: codes per refreshed bank. `None` means
    /// `10 · batch_size`.
    pub bank_size: Option<usize>,
    /// Fraction of the run, at its end, over which every learning rate
    /// decays linearly. `0` keeps the rates constant.
    pub lr_decay: f64,
    /// Learning-rate multiplier reached at the last step.
    pub lr_floor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            batch_size: 256,
            steps: 20_000,
            disc_steps_per_gen_step: 1,
            gen_optimizer: OptimizerConfig::adam_adversarial(1e-3),
            disc_optimizer: OptimizerConfig::adam_adversarial(2e-4),
            arch: Architecture::default(),
            latent_dim: 2,
            noise_dim: 0,
            adversarial: AdversarialLoss::Saturating,
            epoch_steps: None,
            bank_size: None,
            lr_decay: 0.5,
            lr_floor: 0.05,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("TrainConfig", format!("lambda {} must be >= 0", self.lambda)));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("TrainConfig", "batch_size must be >= 2"));
        }
        if self.disc_steps_per_gen_step == 0 {
            return Err(Error::invalid("TrainConfig", "disc_steps_per_gen_step must be >= 1"));
        }
        for lr in [self.gen_optimizer.learning_rate, self.disc_optimizer.learning_rate] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::invalid("TrainConfig", format!("learning rate {lr} must be > 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.lr_decay) {
            return Err(Error::invalid("TrainConfig", format!("lr_decay {} must lie in [0, 1]", self.lr_decay)));
        }
        if !(self.lr_floor > 0.0 && self.lr_floor <= 1.0) {
            return Err(Error::invalid("TrainConfig", format!("lr_floor {} must lie in (0, 1]", self.lr_floor)));
        }
        Ok(())
    }

    /// Learning-rate multiplier before step `step` of a run of `horizon` steps.
    pub fn lr_scale(&self, step: usize, horizon: usize) -> f64 {
        let start = ((1.0 - self.lr_decay) * horizon as f64) as usize;
        if self.lr_decay == 0.0 || step < start {
            return 1.0;
        }
        if step >= horizon {
            return self.lr_floor;
        }
        let frac = (step - start) as f64 / (horizon - start) as f64;
        1.0 - (1.0 - self.lr_floor) * frac
    }

    pub fn bank_size(&self) -> usize {
        self.bank_size.unwrap_or(10 * self.batch_size)
    }

    pub fn epoch_steps(&self, rows: usize) -> usize {
        self.epoch_steps.unwrap_or_else(|| rows.div_ceil(self.batch_size))
    }
}

/// Training observations with optional one-hot labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch {
    pub x: Matrix,
    pub labels: Option<Matrix>,
}

impl LabeledBatch {
    pub fn new(x: Matrix, labels: Option<Matrix>) -> Result<Self> {
        if let Some(l) = &labels {
            check_one_hot(l, x.rows(), "LabeledBatch")?;
        }
        Ok(LabeledBatch { x, labels })
    }

    pub fn unlabeled(x: Matrix) -> Self {
        LabeledBatch { x, labels: None }
    }

    pub fn rows(&self) -> usize {
        self.x.rows()
    }

    pub fn label_dim(&self) -> usize {
        self.labels.as_ref().map_or(0, Matrix::cols)
    }

    fn select(&self, idx: &[usize]) -> (Matrix, Option<Matrix>) {
        (self.x.select_rows(idx), self.labels.as_ref().map(|l| l.select_rows(idx)))
    }
}

/// One-hot encoding of class ids.
pub fn one_hot(labels: &[usize], classes: usize) -> Matrix {
    Matrix::from_fn(labels.len(), classes, |r, c| if labels[r] == c { 1.0 } else { 0.0 })
}

/// Index of the hot column of each row.
pub fn class_ids(one_hot: &Matrix) -> Vec<usize> {
    one_hot
        .row_iter()
        .map(|r| r.iter().position(|v| *v == 1.0).unwrap_or(0))
        .collect()
}

fn check_one_hot(l: &Matrix, rows: usize, op: &'static str) -> Result<()> {
    if l.rows() != rows {
        return Err(Error::dims(op, format!("{} label rows for {rows} data rows", l.rows())));
    }
    for (i, r) in l.row_iter().enumerate() {
        let ones = r.iter().filter(|v| **v == 1.0).count();
        let zeros = r.iter().filter(|v| **v == 0.0).count();
        if ones != 1 || ones + zeros != r.len() {
            return Err(Error::invalid(op, format!("label row {i} is not one-hot")));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BankOrigin {
    Prior,
    Encoded(String),
}

impl fmt::Display for BankOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BankOrigin::Prior => f.write_str("prior"),
            BankOrigin::Encoded(id) => write!(f, "encoded:{id}"),
        }
    }
}

impl FromStr for BankOrigin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prior" => Ok(BankOrigin::Prior),
            _ => s
                .strip_prefix("encoded:")
                .map(|id| BankOrigin::Encoded(id.to_string()))
                .ok_or_else(|| Error::Format(format!("unknown bank origin `{s}`"))),
        }
    }
}

/// Empirical latent distribution: a set of `z` rows, optionally labelled.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBank {
    samples: Matrix,
    labels: Option<Matrix>,
    origin: BankOrigin,
    frozen: bool,
}

impl SampleBank {
    pub fn new(samples: Matrix, labels: Option<Matrix>, origin: BankOrigin) -> Result<Self> {
        if samples.rows() == 0 {
            return Err(Error::invalid("SampleBank", "empty bank"));
        }
        samples.ensure_finite("SampleBank")?;
        if let Some(l) = &labels {
            check_one_hot(l, samples.rows(), "SampleBank")?;
        }
        Ok(SampleBank {
            samples,
            labels,
            origin,
            frozen: false,
        })
    }

    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn labels(&self) -> Option<&Matrix> {
        self.labels.as_ref()
    }

    pub fn origin(&self) -> &BankOrigin {
        &self.origin
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows drawn uniformly with replacement.
    pub fn draw(&self, rng: &mut Rng, count: usize) -> Matrix {
        let idx = rng.indices_with_replacement(self.len(), count);
        self.samples.select_rows(&idx)
    }

    /// One row per requested class, drawn uniformly among bank rows of that
    /// class. Falls back to the whole bank for classes the bank lacks.
    fn draw_for_classes(&self, rng: &mut Rng, classes: &[usize]) -> Matrix {
        let Some(labels) = &self.labels else {
            return self.draw(rng, classes.len());
        };
        let ids = class_ids(labels);
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); labels.cols()];
        for (r, c) in ids.iter().enumerate() {
            by_class[*c].push(r);
        }
        let idx: Vec<usize> = classes
            .iter()
            .map(|&c| match by_class.get(c) {
                Some(rows) if !rows.is_empty() => rows[rng.below(rows.len())],
                _ => rng.below(self.len()),
            })
            .collect();
        self.samples.select_rows(&idx)
    }
}

/// Where the `z` part of the discriminator's reference samples comes from.
/// The noise part is always drawn from `N(0, I_m)`.
#[derive(Clone, Copy, Debug)]
pub enum LatentSource<'a> {
    /// `z ~ N(0, I_d)`.
    Prior,
    /// `z` resampled from an empirical bank.
    Bank(&'a SampleBank),
}

impl LatentSource<'_> {
    fn dim_check(&self, d: usize) -> Result<()> {
        if let LatentSource::Bank(b) = self {
            if b.dim() != d {
                return Err(Error::dims(
                    "LatentSource",
                    format!("bank has {}-dim codes, model latent_dim is {d}", b.dim()),
                ));
            }
        }
        Ok(())
    }

    /// `count` reference codes `[z; n]` in `d + m` dimensions.
    pub fn sample_codes(&self, d: usize, m: usize, count: usize, rng: &mut Rng) -> Result<Matrix> {
        self.dim_check(d)?;
        let z = match self {
            LatentSource::Prior => gauss_sample(rng, count, d),
            LatentSource::Bank(b) => b.draw(rng, count),
        };
        z.hcat(&gauss_sample(rng, count, m))
    }
}

/// `[code; label]` row: the discriminator input for a labelled code.
pub fn conditioned_discriminator_input(code: &[f64], label: &[f64], label_dim: usize) -> Result<Vec<f64>> {
    if label_dim == 0 || label.len() != label_dim {
        return Err(Error::dims(
            "conditioned_discriminator_input",
            format!("label of length {} for label_dim {label_dim}", label.len()),
        ));
    }
    let mut v = code.to_vec();
    v.extend_from_slice(label);
    Ok(v)
}

fn with_labels(codes: &Matrix, labels: Option<&Matrix>) -> Result<Matrix> {
    match labels {
        Some(l) => codes.hcat(l),
        None => Ok(codes.clone()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub recon_loss: f64,
    pub gen_adv_loss: f64,
    pub disc_loss: f64,
}

/// Per-step losses: reconstruction, the encoder's adversarial term (without
/// λ) and the discriminator objective (the quantity it ascends).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// Means of (recon, gen_adv, disc) over the last `n` rows.
    pub fn tail_means(&self, n: usize) -> (f64, f64, f64) {
        let tail = &self.rows[self.rows.len().saturating_sub(n)..];
        let k = tail.len().max(1) as f64;
        (
            tail.iter().map(|r| r.recon_loss).sum::<f64>() / k,
            tail.iter().map(|r| r.gen_adv_loss).sum::<f64>() / k,
            tail.iter().map(|r| r.disc_loss).sum::<f64>() / k,
        )
    }
}

fn log_sigmoid(l: f64) -> f64 {
    // log σ(l) = −softplus(−l)
    -softplus(-l)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(l: f64) -> f64 {
    if l >= 0.0 {
        1.0 / (1.0 + (-l).exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    }
}

/// Mean of `‖x − D(E(x))‖²` over rows.
pub fn recon_loss(model: &dyn Autoencoder, x: &Matrix) -> Result<f64> {
    let xr = crate::model::reconstruct(model, x)?;
    let diff = xr.sub(x)?;
    Ok(diff.data().iter().map(|v| v * v).sum::<f64>() / x.rows().max(1) as f64)
}

/// Holds one model plus its three optimizers across steps.
pub struct Trainer<'m> {
    model: &'m mut DomainModel,
    cfg: TrainConfig,
    enc_opt: Optimizer,
    dec_opt: Optimizer,
    disc_opt: Optimizer,
    steps_done: usize,
    horizon: usize,
}

impl<'m> Trainer<'m> {
    pub fn new(model: &'m mut DomainModel, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Trainer {
            enc_opt: Optimizer::new(cfg.gen_optimizer, &model.encoder),
            dec_opt: Optimizer::new(cfg.gen_optimizer, &model.decoder),
            disc_opt: Optimizer::new(cfg.disc_optimizer, &model.discriminator),
            model,
            cfg: cfg.clone(),
            steps_done: 0,
            horizon: cfg.steps,
        })
    }

    /// Total steps the learning-rate schedule spans (default `cfg.steps`).
    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn model(&self) -> &DomainModel {
        self.model
    }

    /// Multiplies every configured learning rate by `scale`.
    pub fn set_lr_scale(&mut self, scale: f64) {
        self.enc_opt.set_learning_rate(self.cfg.gen_optimizer.learning_rate * scale);
        self.dec_opt.set_learning_rate(self.cfg.gen_optimizer.learning_rate * scale);
        self.disc_opt.set_learning_rate(self.cfg.disc_optimizer.learning_rate * scale);
    }

    fn check_inputs(&self, data: &LabeledBatch, latent: &LatentSource<'_>) -> Result<()> {
        if data.rows() == 0 {
            return Err(Error::invalid("train", "empty training data"));
        }
        if data.x.cols() != self.model.obs_dim {
            return Err(Error::dims(
                "train",
                format!("data has {} cols, model obs_dim {}", data.x.cols(), self.model.obs_dim),
            ));
        }
        if data.label_dim() != self.model.label_dim {
            return Err(Error::dims(
                "train",
                format!("data label_dim {} != model label_dim {}", data.label_dim(), self.model.label_dim),
            ));
        }
        latent.dim_check(self.model.latent_dim)
    }

    /// One encoder/decoder update on a fixed batch. Returns (recon, adv).
    pub fn generator_step(&mut self, x: &Matrix, labels: Option<&Matrix>) -> Result<(f64, f64)> {
        let n = x.rows() as f64;
        let m = &mut *self.model;
        let codes = m.encoder.forward(x)?;
        let xr = m.decoder.forward(&codes)?;
        let mut resid = xr.sub(x)?;
        let recon = resid.data().iter().map(|v| v * v).sum::<f64>() / n;
        resid.data_mut().iter_mut().for_each(|v| *v *= 2.0 / n);
        let mut grad_codes = m.decoder.backward(&resid)?;

        let logits = m.discriminator.forward(&with_labels(&codes, labels)?)?;
        let adv = match self.cfg.adversarial {
            AdversarialLoss::Saturating => logits.data().iter().map(|&l| log_sigmoid(l)).sum::<f64>() / n,
            AdversarialLoss::NonSaturating => logits.data().iter().map(|&l| softplus(l)).sum::<f64>() / n,
        };
        let lambda = self.cfg.lambda;
        let dlogits = Matrix::from_fn(logits.rows(), 1, |r, _| {
            let l = logits.get(r, 0);
            let g = match self.cfg.adversarial {
                AdversarialLoss::Saturating => sigmoid(-l),
                AdversarialLoss::NonSaturating => sigmoid(l),
            };
            lambda * g / n
        });
        let dinput = m.discriminator.backward(&dlogits)?;
        m.discriminator.zero_grad();
        let code_dim = codes.cols();
        for r in 0..grad_codes.rows() {
            for (g, a) in grad_codes.row_mut(r).iter_mut().zip(&dinput.row(r)[..code_dim]) {
                *g += a;
            }
        }
        m.encoder.backward(&grad_codes)?;
        self.enc_opt.step(&mut m.encoder);
        self.dec_opt.step(&mut m.decoder);
        Ok((recon, adv))
    }

    /// One discriminator update. Returns the ascended objective
    /// `mean log f(enc) + mean log(1 − f(ref))`.
    pub fn discriminator_step(
        &mut self,
        x: &Matrix,
        labels: Option<&Matrix>,
        reference: &Matrix,
        reference_labels: Option<&Matrix>,
    ) -> Result<f64> {
        let m = &mut *self.model;
        let codes = m.encoder.eval(x)?;
        let n_enc = codes.rows() as f64;
        let n_ref = reference.rows() as f64;

        let l_enc = m.discriminator.forward(&with_labels(&codes, labels)?)?;
        let obj_enc = l_enc.data().iter().map(|&l| log_sigmoid(l)).sum::<f64>() / n_enc;
        // descend −objective: ∂/∂l[−log σ(l)] = σ(l) − 1
        let g_enc = Matrix::from_fn(l_enc.rows(), 1, |r, _| (sigmoid(l_enc.get(r, 0)) - 1.0) / n_enc);
        m.discriminator.backward(&g_enc)?;

        let l_ref = m.discriminator.forward(&with_labels(reference, reference_labels)?)?;
        let obj_ref = l_ref.data().iter().map(|&l| -softplus(l)).sum::<f64>() / n_ref;
        // ∂/∂l[−log(1 − σ(l))] = σ(l)
        let g_ref = Matrix::from_fn(l_ref.rows(), 1, |r, _| sigmoid(l_ref.get(r, 0)) / n_ref);
        m.discriminator.backward(&g_ref)?;
        self.disc_opt.step(&mut m.discriminator);
        Ok(obj_enc + obj_ref)
    }

    /// Reference codes and (for conditioned models) their labels. Labels are
    /// resampled from the training data's empirical label distribution.
    fn reference_batch(
        &self,
        data: &LabeledBatch,
        latent: &LatentSource<'_>,
        rng: &mut Rng,
    ) -> Result<(Matrix, Option<Matrix>)> {
        let (d, mdim, b) = (self.model.latent_dim, self.model.noise_dim, self.cfg.batch_size);
        match &data.labels {
            None => Ok((latent.sample_codes(d, mdim, b, rng)?, None)),
            Some(labels) => {
                let idx = rng.indices_with_replacement(data.rows(), b);
                let ref_labels = labels.select_rows(&idx);
                let classes = class_ids(&ref_labels);
                let z = match latent {
                    LatentSource::Prior => gauss_sample(rng, b, d),
                    LatentSource::Bank(bank) => bank.draw_for_classes(rng, &classes),
                };
                let codes = z.hcat(&gauss_sample(rng, b, mdim))?;
                Ok((codes, Some(ref_labels)))
            }
        }
    }

    /// One full step: generator update then `disc_steps_per_gen_step`
    /// discriminator updates (the first on the same data batch).
    pub fn step(&mut self, data: &LabeledBatch, latent: &LatentSource<'_>, rng: &mut Rng) -> Result<LogRow> {
        let step = self.steps_done;
        let scale = self.cfg.lr_scale(step, self.horizon);
        if scale != 1.0 {
            self.set_lr_scale(scale);
        }
        let idx = rng.indices_with_replacement(data.rows(), self.cfg.batch_size);
        let (x, labels) = data.select(&idx);
        let (reference, ref_labels) = self.reference_batch(data, latent, rng)?;

        let (recon, adv) = self
            .generator_step(&x, labels.as_ref())
            .map_err(|e| diverged(e, step, "generator update"))?;
        let mut disc = self
            .discriminator_step(&x, labels.as_ref(), &reference, ref_labels.as_ref())
            .map_err(|e| diverged(e, step, "discriminator update"))?;
        for _ in 1..self.cfg.disc_steps_per_gen_step {
            let idx = rng.indices_with_replacement(data.rows(), self.cfg.batch_size);
            let (x, labels) = data.select(&idx);
            let (reference, ref_labels) = self.reference_batch(data, latent, rng)?;
            disc = self
                .discriminator_step(&x, labels.as_ref(), &reference, ref_labels.as_ref())
                .map_err(|e| diverged(e, step, "discriminator update"))?;
        }
        if !(recon.is_finite() && adv.is_finite() && disc.is_finite()) {
            return Err(Error::Diverged { step, what: "loss" });
        }
        self.steps_done += 1;
        Ok(LogRow {
            step,
            recon_loss: recon,
            gen_adv_loss: adv,
            disc_loss: disc,
        })
    }

    /// Runs `steps` steps, appending to `log`.
    pub fn run(
        &mut self,
        data: &LabeledBatch,
        latent: &LatentSource<'_>,
        steps: usize,
        rng: &mut Rng,
        log: &mut TrainLog,
    ) -> Result<()> {
        self.check_inputs(data, latent)?;
        for _ in 0..steps {
            log.rows.push(self.step(data, latent, rng)?);
        }
        Ok(())
    }
}

fn diverged(e: Error, step: usize, what: &'static str) -> Error {
    match e {
        Error::NonFinite { .. } => Error::Diverged { step, what },
        other => other,
    }
}

/// Trains one domain's autoencoder against `latent ⊗ N(0, I_m)` for
/// `cfg.steps` steps. Touches no other model.
pub fn train_autoencoder(
    model: &mut DomainModel,
    data: &LabeledBatch,
    latent: &LatentSource<'_>,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainLog> {
    let mut trainer = Trainer::new(model, cfg)?;
    let mut log = TrainLog::default();
    trainer.run(data, latent, cfg.steps, rng, &mut log)?;
    Ok(log)
}

/// Encodes `count` rows of `data` (drawn with replacement) and keeps the
/// shared part as a frozen bank.
pub fn encode_bank(model: &DomainModel, data: &LabeledBatch, count: usize, rng: &mut Rng) -> Result<SampleBank> {
    let idx = rng.indices_with_replacement(data.rows(), count);
    let (x, labels) = data.select(&idx);
    let z = encode_shared(model, &x)?;
    Ok(SampleBank::new(z, labels, BankOrigin::Encoded(model.domain_id.clone()))?.freeze())
}

/// Result of the two-domain alternating latent estimation.
pub struct AlternatingOutcome {
    pub log_a: TrainLog,
    pub log_b: TrainLog,
    pub bank: SampleBank,
}

/// Learns a shared latent distribution from two domains when the prior is
/// unknown.
///
/// Each round refreshes `bank_b` from the current `model_b` and trains
/// `model_a` for one epoch against it, then refreshes `bank_a` from the
/// updated `model_a` and trains `model_b` against that. The returned bank is
/// the frozen union of both final encodings.
#[allow(clippy::too_many_arguments)]
pub fn learn_latent_alternating(
    model_a: &mut DomainModel,
    model_b: &mut DomainModel,
    data_a: &LabeledBatch,
    data_b: &LabeledBatch,
    cfg: &TrainConfig,
    rounds: usize,
    bank_size: usize,
    rng: &mut Rng,
) -> Result<AlternatingOutcome> {
    if rounds == 0 {
        return Err(Error::invalid("learn_latent_alternating", "rounds must be >= 1"));
    }
    if model_a.latent_dim != model_b.latent_dim {
        return Err(Error::dims(
            "learn_latent_alternating",
            format!("latent dims {} vs {}", model_a.latent_dim, model_b.latent_dim),
        ));
    }
    if bank_size == 0 {
        return Err(Error::invalid("learn_latent_alternating", "bank_size must be >= 1"));
    }
    let steps_a = cfg.epoch_steps(data_a.rows());
    let steps_b = cfg.epoch_steps(data_b.rows());
    let mut trainer_a = Trainer::new(model_a, cfg)?.with_horizon(rounds * steps_a);
    let mut trainer_b = Trainer::new(model_b, cfg)?.with_horizon(rounds * steps_b);
    let mut log_a = TrainLog::default();
    let mut log_b = TrainLog::default();
    for round in 0..rounds {
        let bank_b = encode_bank(trainer_b.model(), data_b, bank_size, &mut rng.split(&format!("round{round}/bank_b")))?;
        trainer_a.run(data_a, &LatentSource::Bank(&bank_b), steps_a, &mut rng.split(&format!("round{round}/train_a")), &mut log_a)?;
        let bank_a = encode_bank(trainer_a.model(), data_a, bank_size, &mut rng.split(&format!("round{round}/bank_a")))?;
        trainer_b.run(data_b, &LatentSource::Bank(&bank_a), steps_b, &mut rng.split(&format!("round{round}/train_b")), &mut log_b)?;
    }
    let final_a = encode_bank(trainer_a.model(), data_a, bank_size, &mut rng.split("final/a"))?;
    let final_b = encode_bank(trainer_b.model(), data_b, bank_size, &mut rng.split("final/b"))?;
    let labels = match (final_a.labels(), final_b.labels()) {
        (Some(la), Some(lb)) => Some(la.vcat(lb)?),
        _ => None,
    };
    let origin = BankOrigin::Encoded(format!("{}+{}", trainer_a.model().domain_id, trainer_b.model().domain_id));
    let bank = SampleBank::new(final_a.samples().vcat(final_b.samples())?, labels, origin)?.freeze();
    Ok(AlternatingOutcome { log_a, log_b, bank })
}

/// Trains a new domain against a frozen bank, leaving every other model
/// alone.
pub fn add_domain(
    new_model: &mut DomainModel,
    new_data: &LabeledBatch,
    frozen_bank: &SampleBank,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainLog> {
    if !frozen_bank.is_frozen() {
        return Err(Error::invalid("add_domain", "latent bank must be frozen"));
    }
    train_autoencoder(new_model, new_data, &LatentSource::Bank(frozen_bank), cfg, rng)
}

/// A fresh model sized for `data` and `cfg`.
pub fn new_model(domain_id: &str, data: &LabeledBatch, cfg: &TrainConfig, rng: &mut Rng) -> Result<DomainModel> {
    DomainModel::new(
        domain_id,
        data.x.cols(),
        cfg.latent_dim,
        cfg.noise_dim,
        data.label_dim(),
        &cfg.arch,
        rng,
    )
}

/// Estimate of the per-domain objective `recon + λ·L2` on held samples.
///
/// `L2` is the discriminative divergence `max_f E_enc log f + E_ref log(1 − f)`
/// shifted by `log 4` so that it is zero when the two distributions agree.
/// The max is approximated by training a fresh discriminator for `disc_steps`
/// Adam steps; pass the same `rng` state to compare two models fairly.
pub fn objective_value(
    model: &dyn Autoencoder,
    x: &Matrix,
    reference: &Matrix,
    lambda: f64,
    disc_steps: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let recon = recon_loss(model, x)?;
    let codes = model.encode_raw(x)?;
    let divergence = discriminative_divergence(&codes, reference, disc_steps, rng)?;
    Ok(recon + lambda * divergence)
}

/// `max_f E_a log f + E_b log(1 − f) + log 4`, estimated with a fresh
/// `[64, 64]` discriminator trained on minibatches of the two samples.
pub fn discriminative_divergence(a: &Matrix, b: &Matrix, steps: usize, rng: &mut Rng) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(Error::dims("discriminative_divergence", "sample dims differ"));
    }
    let arch = Architecture::default();
    let mut f = Mlp::with_architecture(
        a.cols(),
        &arch.disc_hidden,
        1,
        arch.hidden_activation,
        crate::nn::Activation::Identity,
        &mut rng.split("disc-init"),
    )?;
    let mut opt = Optimizer::new(OptimizerConfig::adam(1e-3), &f);
    let batch = 256;
    let objective = |f: &Mlp, a: &Matrix, b: &Matrix| -> Result<f64> {
        let la = f.eval(a)?;
        let lb = f.eval(b)?;
        Ok(la.data().iter().map(|&l| log_sigmoid(l)).sum::<f64>() / la.rows() as f64
            + lb.data().iter().map(|&l| -softplus(l)).sum::<f64>() / lb.rows() as f64)
    };
    for _ in 0..steps {
        let xa = a.select_rows(&rng.indices_with_replacement(a.rows(), batch));
        let xb = b.select_rows(&rng.indices_with_replacement(b.rows(), batch));
        let la = f.forward(&xa)?;
        let ga = Matrix::from_fn(batch, 1, |r, _| (sigmoid(la.get(r, 0)) - 1.0) / batch as f64);
        f.backward(&ga)?;
        let lb = f.forward(&xb)?;
        let gb = Matrix::from_fn(batch, 1, |r, _| sigmoid(lb.get(r, 0)) / batch as f64);
        f.backward(&gb)?;
        opt.step(&mut f);
    }
    Ok(objective(&f, a, b)? + 4f64.ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_log_terms() {
        assert!((log_sigmoid(0.0) - 0.5f64.ln()).abs() < 1e-15);
        assert!(log_sigmoid(-800.0).is_finite());
        assert!(softplus(800.0).is_finite());
        assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn conditioned_input_concatenates() {
        let v = conditioned_discriminator_input(&[1.0, 2.0, 3.0], &[0.0, 1.0], 2).unwrap();
        assert_eq!(v, vec![1.0, 2.0, 3.0, 0.0, 1.0]);
        assert!(conditioned_discriminator_input(&[1.0], &[1.0], 2).is_err());
        assert!(conditioned_discriminator_input(&[1.0], &[], 0).is_err());
    }

    #[test]
    fn labeled_batch_requires_one_hot() {
        let x = Matrix::zeros(2, 1);
        let bad = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        assert!(LabeledBatch::new(x.clone(), Some(bad)).is_err());
        assert!(LabeledBatch::new(x, Some(one_hot(&[0, 1], 2))).is_ok());
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.batch_size = 1;
        assert!(c.validate().is_err());
        c.batch_size = 2;
        c.lambda = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn bank_origin_text() {
        for o in [BankOrigin::Prior, BankOrigin::Encoded("d1+d2".into())] {
            assert_eq!(o.to_string().parse::<BankOrigin>().unwrap(), o);
        }
    }
}
