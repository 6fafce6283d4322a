//! Per-domain encoder/decoder/discriminator triples and their composition
//! into translators.
//!
//! An encoder maps an observation to a code `[z; n]` where `z` is the shared
//! latent part (first `latent_dim` columns) and `n` is domain-private noise.
//! Translation keeps `z`, discards `n`, draws fresh target noise and decodes.

use crate::error::{Error, Result};
use crate::linalg::{gauss_sample, Matrix, Rng};
use crate::nn::{lipschitz_upper_bound, Activation, Mlp};

/// Anything that can encode observations to `[z; n]` codes and decode back.
///
/// Implemented by trained [`DomainModel`]s and by the analytic oracle
/// autoencoders of a synthetic world.
pub trait Autoencoder: Sync {
    fn domain_id(&self) -> &str;
    fn obs_dim(&self) -> usize;
    fn latent_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;

    fn code_dim(&self) -> usize {
        self.latent_dim() + self.noise_dim()
    }

    /// batch x obs_dim → batch x (latent_dim + noise_dim)
    fn encode_raw(&self, x: &Matrix) -> Result<Matrix>;

    /// batch x (latent_dim + noise_dim) → batch x obs_dim
    fn decode_raw(&self, codes: &Matrix) -> Result<Matrix>;

    /// A global Lipschitz constant for the decoder.
    fn decoder_lipschitz(&self) -> Result<f64>;
}

/// Hidden-layer layout shared by every domain of an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub hidden_activation: Activation,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            encoder_hidden: vec![128, 128],
            decoder_hidden: vec![128, 128],
            disc_hidden: vec![64, 64],
            hidden_activation: Activation::DEFAULT_HIDDEN,
        }
    }
}

/// Encoder `E: obs → d+m`, decoder `D: d+m → obs` and latent-space
/// discriminator `f: d+m+label → logit` for one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainModel {
    pub domain_id: String,
    pub obs_dim: usize,
    pub latent_dim: usize,
    pub noise_dim: usize,
    pub label_dim: usize,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub discriminator: Mlp,
}

impl DomainModel {
    pub fn new(
        domain_id: impl Into<String>,
        obs_dim: usize,
        latent_dim: usize,
        noise_dim: usize,
        label_dim: usize,
        arch: &Architecture,
        rng: &mut Rng,
    ) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::invalid("DomainModel::new", "latent_dim must be >= 1"));
        }
        let code = latent_dim + noise_dim;
        let act = arch.hidden_activation;
        let encoder = Mlp::with_architecture(obs_dim, &arch.encoder_hidden, code, act, Activation::Identity, &mut rng.split("encoder"))?;
        let decoder = Mlp::with_architecture(code, &arch.decoder_hidden, obs_dim, act, Activation::Identity, &mut rng.split("decoder"))?;
        let discriminator = Mlp::with_architecture(
            code + label_dim,
            &arch.disc_hidden,
            1,
            act,
            Activation::Identity,
            &mut rng.split("discriminator"),
        )?;
        DomainModel::from_parts(domain_id, latent_dim, noise_dim, label_dim, encoder, decoder, discriminator)
    }

    /// Assembles a model from existing networks, checking that they fit.
    pub fn from_parts(
        domain_id: impl Into<String>,
        latent_dim: usize,
        noise_dim: usize,
        label_dim: usize,
        encoder: Mlp,
        decoder: Mlp,
        discriminator: Mlp,
    ) -> Result<Self> {
        let code = latent_dim + noise_dim;
        let obs_dim = encoder.in_dim();
        if encoder.out_dim() != code || decoder.in_dim() != code {
            return Err(Error::dims(
                "DomainModel",
                format!(
                    "encoder out {} / decoder in {} != latent+noise {code}",
                    encoder.out_dim(),
                    decoder.in_dim()
                ),
            ));
        }
        if decoder.out_dim() != obs_dim {
            return Err(Error::dims(
                "DomainModel",
                format!("decoder out {} != encoder in {obs_dim}", decoder.out_dim()),
            ));
        }
        if discriminator.in_dim() != code + label_dim || discriminator.out_dim() != 1 {
            return Err(Error::dims(
                "DomainModel",
                format!(
                    "discriminator {}→{} does not fit code {code} + labels {label_dim} → 1",
                    discriminator.in_dim(),
                    discriminator.out_dim()
                ),
            ));
        }
        Ok(DomainModel {
            domain_id: domain_id.into(),
            obs_dim,
            latent_dim,
            noise_dim,
            label_dim,
            encoder,
            decoder,
            discriminator,
        })
    }
}

impl Autoencoder for DomainModel {
    fn domain_id(&self) -> &str {
        &self.domain_id
    }

    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn encode_raw(&self, x: &Matrix) -> Result<Matrix> {
        self.encoder.eval(x)
    }

    fn decode_raw(&self, codes: &Matrix) -> Result<Matrix> {
        self.decoder.eval(codes)
    }

    fn decoder_lipschitz(&self) -> Result<f64> {
        lipschitz_upper_bound(&self.decoder)
    }
}

/// Wraps an autoencoder and adds a constant shift to the `z` part of every
/// code it produces. Decoding is untouched.
pub struct ShiftedLatent<'a> {
    pub inner: &'a dyn Autoencoder,
    pub shift: f64,
}

impl Autoencoder for ShiftedLatent<'_> {
    fn domain_id(&self) -> &str {
        self.inner.domain_id()
    }

    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    fn noise_dim(&self) -> usize {
        self.inner.noise_dim()
    }

    fn encode_raw(&self, x: &Matrix) -> Result<Matrix> {
        let mut codes = self.inner.encode_raw(x)?;
        let d = self.latent_dim();
        for r in 0..codes.rows() {
            codes.row_mut(r)[..d].iter_mut().for_each(|v| *v += self.shift);
        }
        Ok(codes)
    }

    fn decode_raw(&self, codes: &Matrix) -> Result<Matrix> {
        self.inner.decode_raw(codes)
    }

    fn decoder_lipschitz(&self) -> Result<f64> {
        self.inner.decoder_lipschitz()
    }
}

/// One encoded observation split into its shared and private parts.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub z: Vec<f64>,
    pub n: Vec<f64>,
}

impl LatentCode {
    pub fn concat(&self) -> Vec<f64> {
        let mut v = self.z.clone();
        v.extend_from_slice(&self.n);
        v
    }
}

fn check_obs(model: &dyn Autoencoder, x: &Matrix, op: &'static str) -> Result<()> {
    if x.cols() != model.obs_dim() {
        return Err(Error::dims(
            op,
            format!(
                "input has {} cols, domain `{}` has obs_dim {}",
                x.cols(),
                model.domain_id(),
                model.obs_dim()
            ),
        ));
    }
    Ok(())
}

pub fn encode(model: &dyn Autoencoder, x: &Matrix) -> Result<Vec<LatentCode>> {
    check_obs(model, x, "encode")?;
    let raw = model.encode_raw(x)?;
    let d = model.latent_dim();
    Ok(raw
        .row_iter()
        .map(|r| LatentCode {
            z: r[..d].to_vec(),
            n: r[d..].to_vec(),
        })
        .collect())
}

pub fn decode(model: &dyn Autoencoder, codes: &[LatentCode]) -> Result<Matrix> {
    let (d, m) = (model.latent_dim(), model.noise_dim());
    let mut data = Vec::with_capacity(codes.len() * (d + m));
    for c in codes {
        if c.z.len() != d || c.n.len() != m {
            return Err(Error::dims(
                "decode",
                format!("code ({}, {}) for model ({d}, {m})", c.z.len(), c.n.len()),
            ));
        }
        data.extend_from_slice(&c.z);
        data.extend_from_slice(&c.n);
    }
    model.decode_raw(&Matrix::new(codes.len(), d + m, data)?)
}

/// `π^Z(E(x))`: the shared latent part of the codes.
pub fn encode_shared(model: &dyn Autoencoder, x: &Matrix) -> Result<Matrix> {
    check_obs(model, x, "encode")?;
    Ok(model.encode_raw(x)?.columns(0, model.latent_dim()))
}

/// `D(E(x))`.
pub fn reconstruct(model: &dyn Autoencoder, x: &Matrix) -> Result<Matrix> {
    check_obs(model, x, "reconstruct")?;
    model.decode_raw(&model.encode_raw(x)?)
}

/// `D_dst([π^Z(E_src(x)); n])` with `n ~ N(0, I)` drawn fresh for every row.
pub fn translate(src: &dyn Autoencoder, dst: &dyn Autoencoder, x: &Matrix, rng: &mut Rng) -> Result<Matrix> {
    if src.latent_dim() != dst.latent_dim() {
        return Err(Error::dims(
            "translate",
            format!(
                "latent dims differ: `{}` has {}, `{}` has {}",
                src.domain_id(),
                src.latent_dim(),
                dst.domain_id(),
                dst.latent_dim()
            ),
        ));
    }
    let z = encode_shared(src, x)?;
    let noise = gauss_sample(rng, x.rows(), dst.noise_dim());
    dst.decode_raw(&z.hcat(&noise)?)
}

/// Left fold of [`translate`] along consecutive models, sharing one stream.
pub fn translate_path(models: &[&dyn Autoencoder], x: &Matrix, rng: &mut Rng) -> Result<Matrix> {
    if models.len() < 2 {
        return Err(Error::invalid("translate_path", "path needs at least two models"));
    }
    let mut cur = x.clone();
    for pair in models.windows(2) {
        cur = translate(pair[0], pair[1], &cur, rng)?;
    }
    Ok(cur)
}
