//! Synthetic structural-equation worlds `X_i = f_i(Z, N_i)` with known
//! injective maps and closed-form inverses.
//!
//! Each domain map is `f(z, n) = warp(M·[z; n] + c)` where `M` has orthonormal
//! columns and `warp(u) = u + α·tanh(u)` elementwise with `α ≥ 0`. Both
//! factors are injective, so `f` is, and its inverse is an elementwise
//! monotone root solve followed by `Mᵀ(· − c)`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{gauss_sample, matmul, orthonormal_columns, Matrix, Rng};
use crate::model::Autoencoder;

/// Distribution of the shared latent `Z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LatentLaw {
    /// `Z ~ N(0, I_d)`.
    StandardNormal,
    /// Equal mixture of `N(±separation/2 · e₀, spread² I_d)`; the component
    /// index is the sample's class label.
    TwoCluster { separation: f64, spread: f64 },
}

impl LatentLaw {
    pub fn num_classes(&self) -> usize {
        match self {
            LatentLaw::StandardNormal => 0,
            LatentLaw::TwoCluster { .. } => 2,
        }
    }

    /// `count` draws and, for labelled laws, their class ids.
    pub fn sample(&self, d: usize, count: usize, rng: &mut Rng) -> (Matrix, Option<Vec<usize>>) {
        match *self {
            LatentLaw::StandardNormal => (gauss_sample(rng, count, d), None),
            LatentLaw::TwoCluster { separation, spread } => {
                let mut z = gauss_sample(rng, count, d);
                let mut labels = Vec::with_capacity(count);
                for r in 0..count {
                    let c = usize::from(rng.uniform() < 0.5);
                    let row = z.row_mut(r);
                    row.iter_mut().for_each(|v| *v *= spread);
                    row[0] += if c == 1 { 0.5 * separation } else { -0.5 * separation };
                    labels.push(c);
                }
                (z, Some(labels))
            }
        }
    }

    /// Class of a latent point: which mixture component is closer.
    pub fn classify(&self, z: &[f64]) -> Option<usize> {
        match self {
            LatentLaw::StandardNormal => None,
            LatentLaw::TwoCluster { .. } => Some(usize::from(z[0] > 0.0)),
        }
    }
}

impl fmt::Display for LatentLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatentLaw::StandardNormal => f.write_str("standard_normal"),
            LatentLaw::TwoCluster { separation, spread } => write!(f, "two_cluster({separation},{spread})"),
        }
    }
}

impl FromStr for LatentLaw {
    type Err = Error;

    /// `standard_normal` or `two_cluster(<separation>,<spread>)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "standard_normal" {
            return Ok(LatentLaw::StandardNormal);
        }
        let bad = || Error::Format(format!("unknown latent law `{s}`"));
        let args = s
            .strip_prefix("two_cluster(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(bad)?;
        let (a, b) = args.split_once(',').ok_or_else(bad)?;
        let separation: f64 = a.trim().parse().map_err(|_| bad())?;
        let spread: f64 = b.trim().parse().map_err(|_| bad())?;
        if !(separation.is_finite() && spread > 0.0 && spread.is_finite()) {
            return Err(Error::invalid("LatentLaw", "two_cluster needs finite separation and spread > 0"));
        }
        Ok(LatentLaw::TwoCluster { separation, spread })
    }
}

/// Generative map of one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainGen {
    pub obs_dim: usize,
    pub noise_dim: usize,
    /// obs_dim x (latent_dim + noise_dim), orthonormal columns.
    pub mix: Matrix,
    pub offset: Vec<f64>,
    pub warp_alpha: f64,
}

const BISECTION_MAX_ITERS: usize = 200;

impl DomainGen {
    pub fn new(mix: Matrix, offset: Vec<f64>, noise_dim: usize, warp_alpha: f64) -> Result<Self> {
        let (n, k) = mix.shape();
        if k < noise_dim + 1 {
            return Err(Error::dims("DomainGen", format!("mix has {k} cols, noise_dim {noise_dim}")));
        }
        if n < k {
            return Err(Error::dims(
                "DomainGen",
                format!("obs_dim {n} < latent+noise {k}: map cannot be injective"),
            ));
        }
        if offset.len() != n {
            return Err(Error::dims("DomainGen", format!("offset length {} != obs_dim {n}", offset.len())));
        }
        if !(warp_alpha >= 0.0 && warp_alpha.is_finite()) {
            return Err(Error::invalid("DomainGen", format!("warp_alpha {warp_alpha} must be >= 0")));
        }
        let gram = matmul(&mix.transpose(), &mix)?;
        if gram.max_abs_diff(&Matrix::identity(k)) > 1e-10 {
            return Err(Error::invalid("DomainGen", "mix columns are not orthonormal"));
        }
        Ok(DomainGen {
            obs_dim: n,
            noise_dim,
            mix,
            offset,
            warp_alpha,
        })
    }

    pub fn code_dim(&self) -> usize {
        self.mix.cols()
    }

    pub fn latent_dim(&self) -> usize {
        self.code_dim() - self.noise_dim
    }

    /// `f([z; n])` row by row.
    pub fn generate(&self, codes: &Matrix) -> Result<Matrix> {
        if codes.cols() != self.code_dim() {
            return Err(Error::dims(
                "DomainGen::generate",
                format!("codes have {} cols, map expects {}", codes.cols(), self.code_dim()),
            ));
        }
        let mut u = matmul(codes, &self.mix.transpose())?.add_row_vector(&self.offset)?;
        let a = self.warp_alpha;
        if a != 0.0 {
            u.data_mut().iter_mut().for_each(|v| *v += a * v.tanh());
        }
        u.ensure_finite("DomainGen::generate")?;
        Ok(u)
    }

    /// `f⁻¹(x)`: exact on the image of `f`, a projection elsewhere.
    pub fn invert(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.obs_dim {
            return Err(Error::dims(
                "DomainGen::invert",
                format!("input has {} cols, obs_dim {}", x.cols(), self.obs_dim),
            ));
        }
        let mut u = x.clone();
        if self.warp_alpha != 0.0 {
            for v in u.data_mut() {
                *v = unwarp(*v, self.warp_alpha)?;
            }
        }
        let offset_neg: Vec<f64> = self.offset.iter().map(|v| -v).collect();
        matmul(&u.add_row_vector(&offset_neg)?, &self.mix)
    }
}

/// Solves `u + α·tanh(u) = y` by bisection on `[y − α, y + α]` down to
/// adjacent floats (well below 1e-12).
fn unwarp(y: f64, alpha: f64) -> Result<f64> {
    let g = |u: f64| u + alpha * u.tanh() - y;
    let (mut lo, mut hi) = (y - alpha, y + alpha);
    if g(lo) > 0.0 || g(hi) < 0.0 {
        return Err(Error::NotConverged {
            op: "unwarp",
            iterations: 0,
        });
    }
    for _ in 0..BISECTION_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(if g(hi).abs() < g(lo).abs() { hi } else { lo });
        }
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if hi - lo <= 1e-12 * (1.0 + y.abs()) {
        Ok(0.5 * (lo + hi))
    } else {
        Err(Error::NotConverged {
            op: "unwarp",
            iterations: BISECTION_MAX_ITERS,
        })
    }
}

/// A full synthetic world.
#[derive(Clone, Debug, PartialEq)]
pub struct SemSpec {
    pub latent_dim: usize,
    pub latent_law: LatentLaw,
    pub domains: Vec<DomainGen>,
    pub seed: u64,
}

impl SemSpec {
    pub fn new(latent_dim: usize, latent_law: LatentLaw, domains: Vec<DomainGen>, seed: u64) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::invalid("SemSpec", "latent_dim must be >= 1"));
        }
        if domains.len() < 2 {
            return Err(Error::invalid("SemSpec", "a world needs at least two domains"));
        }
        for (i, g) in domains.iter().enumerate() {
            if g.latent_dim() != latent_dim {
                return Err(Error::dims(
                    "SemSpec",
                    format!("domain {i} maps a {}-dim latent, world has {latent_dim}", g.latent_dim()),
                ));
            }
        }
        Ok(SemSpec {
            latent_dim,
            latent_law,
            domains,
            seed,
        })
    }

    /// Two domains, both the identity on a 1-dim Gaussian latent.
    pub fn identity_world() -> Self {
        let gen = DomainGen::new(Matrix::identity(1), vec![0.0], 0, 0.0).expect("identity map is valid");
        SemSpec::new(1, LatentLaw::StandardNormal, vec![gen.clone(), gen], 0).expect("valid world")
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn oracle(&self, i: usize) -> Result<OracleAutoencoder<'_>> {
        oracle_autoencoder(self, i)
    }
}

/// Builds a world with random orthonormal mixes and offsets.
///
/// `domain_dims` lists `(obs_dim, noise_dim)` per domain.
pub fn make_sem(
    latent_dim: usize,
    domain_dims: &[(usize, usize)],
    warp_alpha: f64,
    latent_law: LatentLaw,
    rng: &mut Rng,
) -> Result<SemSpec> {
    if latent_dim == 0 {
        return Err(Error::invalid("make_sem", "latent_dim must be >= 1"));
    }
    let mut domains = Vec::with_capacity(domain_dims.len());
    for (i, &(n, m)) in domain_dims.iter().enumerate() {
        if n < latent_dim + m {
            return Err(Error::dims(
                "make_sem",
                format!("domain {i}: obs_dim {n} < latent {latent_dim} + noise {m}"),
            ));
        }
        let mut r = rng.split(&format!("domain{i}"));
        let mix = orthonormal_columns(&gauss_sample(&mut r, n, latent_dim + m))?;
        let offset = gauss_sample(&mut r, 1, n).scale(0.5).into_data();
        domains.push(DomainGen::new(mix, offset, m, warp_alpha)?);
    }
    SemSpec::new(latent_dim, latent_law, domains, rng.seed())
}

/// One joint draw: the latent, every domain's noise and every observation.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledSample {
    pub z: Vec<f64>,
    pub noises: Vec<Vec<f64>>,
    pub xs: Vec<Vec<f64>>,
    pub label: Option<usize>,
}

/// A batch of joint draws stored column-block-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledSet {
    pub z: Matrix,
    pub noises: Vec<Matrix>,
    pub xs: Vec<Matrix>,
    pub labels: Option<Vec<usize>>,
}

impl CoupledSet {
    pub fn len(&self) -> usize {
        self.z.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, r: usize) -> CoupledSample {
        CoupledSample {
            z: self.z.row(r).to_vec(),
            noises: self.noises.iter().map(|n| n.row(r).to_vec()).collect(),
            xs: self.xs.iter().map(|x| x.row(r).to_vec()).collect(),
            label: self.labels.as_ref().map(|l| l[r]),
        }
    }

    /// All domains side by side: `[x_1 | x_2 | … | x_k]`.
    pub fn paired_matrix(&self) -> Result<Matrix> {
        let mut out = self.xs[0].clone();
        for x in &self.xs[1..] {
            out = out.hcat(x)?;
        }
        Ok(out)
    }
}

/// Draws `count` joint samples: `z` from the latent law, independent
/// standard-normal noise per domain, `x_i = f_i(z, n_i)`.
pub fn sample_coupled(spec: &SemSpec, count: usize, rng: &mut Rng) -> Result<CoupledSet> {
    let (z, labels) = spec.latent_law.sample(spec.latent_dim, count, &mut rng.split("latent"));
    let mut noises = Vec::with_capacity(spec.num_domains());
    let mut xs = Vec::with_capacity(spec.num_domains());
    for (i, g) in spec.domains.iter().enumerate() {
        let noise = gauss_sample(&mut rng.split(&format!("noise{i}")), count, g.noise_dim);
        xs.push(g.generate(&z.hcat(&noise)?)?);
        noises.push(noise);
    }
    Ok(CoupledSet {
        z,
        noises,
        xs,
        labels,
    })
}

/// Per-domain training sets drawn from independent latent samples, so no
/// row of one domain is paired with a row of another.
pub fn sample_marginals(spec: &SemSpec, count: usize, rng: &mut Rng) -> Result<Vec<(Matrix, Option<Vec<usize>>)>> {
    (0..spec.num_domains())
        .map(|i| {
            let set = sample_coupled(spec, count, &mut rng.split(&format!("marginal{i}")))?;
            let CoupledSet { mut xs, labels, .. } = set;
            Ok((xs.swap_remove(i), labels))
        })
        .collect()
}

/// Analytic encoder/decoder pair for one domain: decode is `f_i`, encode is
/// its inverse.
#[derive(Clone, Debug)]
pub struct OracleAutoencoder<'a> {
    id: String,
    gen: &'a DomainGen,
}

impl OracleAutoencoder<'_> {
    pub fn generator(&self) -> &DomainGen {
        self.gen
    }
}

pub fn oracle_autoencoder(spec: &SemSpec, i: usize) -> Result<OracleAutoencoder<'_>> {
    let gen = spec.domains.get(i).ok_or_else(|| {
        Error::invalid("oracle_autoencoder", format!("no domain {i} in a {}-domain world", spec.num_domains()))
    })?;
    Ok(OracleAutoencoder {
        id: format!("oracle_{}", i + 1),
        gen,
    })
}

impl Autoencoder for OracleAutoencoder<'_> {
    fn domain_id(&self) -> &str {
        &self.id
    }

    fn obs_dim(&self) -> usize {
        self.gen.obs_dim
    }

    fn latent_dim(&self) -> usize {
        self.gen.latent_dim()
    }

    fn noise_dim(&self) -> usize {
        self.gen.noise_dim
    }

    fn encode_raw(&self, x: &Matrix) -> Result<Matrix> {
        self.gen.invert(x)
    }

    fn decode_raw(&self, codes: &Matrix) -> Result<Matrix> {
        self.gen.generate(codes)
    }

    /// Orthonormal mix has spectral norm 1 and the warp has slope ≤ 1 + α.
    fn decoder_lipschitz(&self) -> Result<f64> {
        Ok(1.0 + self.gen.warp_alpha)
    }
}
