//! Distribution distances, two-sample tests and the consistency/bound
//! checkers run on trained (or oracle) autoencoders.

use crate::error::{Error, Result};
use crate::linalg::{euclidean, squared_euclidean, Matrix, Rng};
use crate::model::{encode_shared, reconstruct, translate, translate_path, Autoencoder};
use crate::train::recon_loss;

/// Largest sample count handed to the exact assignment solver.
pub const EXACT_W1_LIMIT: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoSampleResult {
    pub statistic: f64,
    pub permutation_p: f64,
    pub n_permutations: usize,
}

impl TwoSampleResult {
    pub fn passes(&self, alpha: f64) -> bool {
        self.permutation_p > alpha
    }
}

/// Sample sizes and thresholds shared by the checkers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckConfig {
    /// Rows drawn per compared sample.
    pub samples: usize,
    pub n_permutations: usize,
    pub alpha: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            samples: 500,
            n_permutations: 500,
            alpha: 0.01,
        }
    }
}

// ---------------------------------------------------------------------------
// Optimal transport

/// Exact 1-Wasserstein distance between two equal-size empirical measures
/// under the Euclidean ground cost.
pub fn wasserstein1_exact(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.rows() != b.rows() {
        return Err(Error::dims(
            "wasserstein1_exact",
            format!("{} vs {} samples", a.rows(), b.rows()),
        ));
    }
    if a.cols() != b.cols() {
        return Err(Error::dims("wasserstein1_exact", format!("dims {} vs {}", a.cols(), b.cols())));
    }
    let n = a.rows();
    if n > EXACT_W1_LIMIT {
        return Err(Error::invalid(
            "wasserstein1_exact",
            format!("{n} samples exceed the exact-solver budget of {EXACT_W1_LIMIT}; subsample first"),
        ));
    }
    if n == 0 {
        return Err(Error::invalid("wasserstein1_exact", "empty samples"));
    }
    let (a, b) = if canonical_order(a, b) { (a, b) } else { (b, a) };
    let cost = cost_matrix(a, b);
    let assignment = solve_assignment(&cost, n);
    let total: f64 = (0..n).map(|i| cost[i * n + assignment[i]]).sum();
    Ok(total / n as f64)
}

fn cost_matrix(a: &Matrix, b: &Matrix) -> Vec<f64> {
    let mut c = Vec::with_capacity(a.rows() * b.rows());
    for ra in a.row_iter() {
        for rb in b.row_iter() {
            c.push(euclidean(ra, rb));
        }
    }
    c
}

/// Minimum-cost perfect matching on a dense `n x n` cost matrix by
/// successive shortest augmenting paths with dual potentials (O(n³)).
/// Returns the column assigned to each row.
pub fn solve_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    // 1-based arrays; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if col_owner[j] > 0 {
            assignment[col_owner[j] - 1] = j - 1;
        }
    }
    assignment
}

const SINKHORN_TOL: f64 = 1e-6;
const SINKHORN_RELAXATION: f64 = 1.5;

/// Entropic OT value `OT_ε(a, b)` (dual objective, uniform weights) by
/// over-relaxed log-domain Sinkhorn with ε-annealing. Each annealing stage
/// runs until the L1 marginal violations drop below [`SINKHORN_TOL`].
fn entropic_ot(cost: &[f64], n: usize, m: usize, epsilon: f64, max_iter: usize) -> Result<f64> {
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();
    let cmax = cost.iter().cloned().fold(0.0, f64::max);
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut eps = cmax.max(epsilon);
    let mut iters = 0;
    let omega = SINKHORN_RELAXATION;
    loop {
        loop {
            if iters >= max_iter {
                return Err(Error::NotConverged {
                    op: "sinkhorn_divergence",
                    iterations: iters,
                });
            }
            iters += 1;
            // Marginal mass of the current plan falls out of each c-transform:
            // row_i = a_i * exp((f_i - T(g)_i) / eps).
            let mut row_violation = 0.0;
            for i in 0..n {
                let t = -eps * log_sum_exp(cost[i * m..(i + 1) * m].iter().zip(&g).map(|(c, gj)| (gj - c) / eps + log_b));
                row_violation += ((f[i] - t) / eps).exp_m1().abs() / n as f64;
                f[i] = (1.0 - omega) * f[i] + omega * t;
            }
            let mut col_violation = 0.0;
            for j in 0..m {
                let t = -eps * log_sum_exp((0..n).map(|i| (f[i] - cost[i * m + j]) / eps + log_a));
                col_violation += ((g[j] - t) / eps).exp_m1().abs() / m as f64;
                g[j] = (1.0 - omega) * g[j] + omega * t;
            }
            if row_violation <= SINKHORN_TOL && col_violation <= SINKHORN_TOL {
                break;
            }
        }
        if eps <= epsilon {
            break;
        }
        eps = (eps * 0.5).max(epsilon);
    }
    let fa: f64 = f.iter().sum::<f64>() / n as f64;
    let gb: f64 = g.iter().sum::<f64>() / m as f64;
    Ok(fa + gb)
}

/// `OT_ε(a, a)` for uniform weights. The optimal potentials coincide, so the
/// single potential is updated as `f ← ½ (f + T_ε(f))`, which converges far
/// faster than alternating updates on this degenerate problem.
fn entropic_ot_self(cost: &[f64], n: usize, epsilon: f64, max_iter: usize) -> Result<f64> {
    let log_w = -(n as f64).ln();
    let cmax = cost.iter().cloned().fold(0.0, f64::max);
    let mut f = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut eps = cmax.max(epsilon);
    let mut iters = 0;
    loop {
        loop {
            if iters >= max_iter {
                return Err(Error::NotConverged {
                    op: "sinkhorn_divergence",
                    iterations: iters,
                });
            }
            iters += 1;
            for (i, ti) in t.iter_mut().enumerate() {
                *ti = -eps * log_sum_exp(cost[i * n..(i + 1) * n].iter().zip(&f).map(|(c, fj)| (fj - c) / eps + log_w));
            }
            let violation: f64 = f.iter().zip(&t).map(|(fi, ti)| ((fi - ti) / eps).exp_m1().abs()).sum::<f64>() / n as f64;
            for (fi, ti) in f.iter_mut().zip(&t) {
                *fi = 0.5 * (*fi + ti);
            }
            if violation <= SINKHORN_TOL {
                break;
            }
        }
        if eps <= epsilon {
            break;
        }
        eps = (eps * 0.5).max(epsilon);
    }
    Ok(2.0 * f.iter().sum::<f64>() / n as f64)
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Debiased Sinkhorn divergence
/// `S(a, b) = OT_ε(a, b) − ½ OT_ε(a, a) − ½ OT_ε(b, b)`.
pub fn sinkhorn_divergence(a: &Matrix, b: &Matrix, epsilon: f64, max_iter: usize) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("sinkhorn_divergence", "epsilon must be > 0"));
    }
    if a.cols() != b.cols() {
        return Err(Error::dims("sinkhorn_divergence", format!("dims {} vs {}", a.cols(), b.cols())));
    }
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::invalid("sinkhorn_divergence", "empty samples"));
    }
    // OT_ε is symmetric in its arguments; a canonical orientation makes the
    // computed divergence exactly symmetric as well.
    let (a, b) = if canonical_order(a, b) { (a, b) } else { (b, a) };
    let ab = entropic_ot(&cost_matrix(a, b), a.rows(), b.rows(), epsilon, max_iter)?;
    let aa = entropic_ot_self(&cost_matrix(a, a), a.rows(), epsilon, max_iter)?;
    let bb = entropic_ot_self(&cost_matrix(b, b), b.rows(), epsilon, max_iter)?;
    Ok(ab - 0.5 * aa - 0.5 * bb)
}

fn canonical_order(a: &Matrix, b: &Matrix) -> bool {
    let key = |x: &Matrix| (x.rows(), x.cols());
    match key(a).cmp(&key(b)) {
        std::cmp::Ordering::Equal => a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .is_none_or(|o| o.is_lt()),
        o => o.is_lt(),
    }
}

/// W1 by the exact solver up to [`EXACT_W1_LIMIT`] samples, else the
/// Sinkhorn divergence with ε = 1% of the median ground cost.
pub fn wasserstein1(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.rows() == b.rows() && a.rows() <= EXACT_W1_LIMIT {
        return wasserstein1_exact(a, b);
    }
    let mut costs = cost_matrix(a, b);
    let mid = costs.len() / 2;
    let median = *costs.select_nth_unstable_by(mid, f64::total_cmp).1;
    sinkhorn_divergence(a, b, (0.01 * median).max(1e-12), 5000)
}

// ---------------------------------------------------------------------------
// MMD

/// Gaussian-kernel MMD² (unbiased) with a permutation p-value. The
/// bandwidth is the median pairwise distance of the pooled sample.
pub fn mmd_test(a: &Matrix, b: &Matrix, rng: &mut Rng, n_permutations: usize) -> Result<TwoSampleResult> {
    if a.cols() != b.cols() {
        return Err(Error::dims("mmd_test", format!("dims {} vs {}", a.cols(), b.cols())));
    }
    if a.rows() < 2 || b.rows() < 2 {
        return Err(Error::invalid("mmd_test", "each sample needs at least two rows"));
    }
    let pooled = a.vcat(b)?;
    let n = pooled.rows();
    let mut d2 = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let v = squared_euclidean(pooled.row(i), pooled.row(j));
            d2[i * n + j] = v;
            d2[j * n + i] = v;
        }
    }
    let mut dists: Vec<f64> = (0..n)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| d2[i * n + j].sqrt())
        .collect();
    let mid = dists.len() / 2;
    let median = *dists.select_nth_unstable_by(mid, f64::total_cmp).1;
    if !(median > 0.0) {
        return Err(Error::invalid("mmd_test", "degenerate pooled sample (median distance is zero)"));
    }
    let inv = 1.0 / (2.0 * median * median);
    let kernel: Vec<f64> = d2.iter().map(|v| (-v * inv).exp()).collect();

    let na = a.rows();
    let mut membership: Vec<bool> = (0..n).map(|i| i < na).collect();
    let observed = mmd_unbiased(&kernel, n, &membership, na);
    let mut exceed = 0usize;
    for _ in 0..n_permutations {
        rng.shuffle(&mut membership);
        if mmd_unbiased(&kernel, n, &membership, na) >= observed {
            exceed += 1;
        }
    }
    Ok(TwoSampleResult {
        statistic: observed,
        permutation_p: (1 + exceed) as f64 / (n_permutations + 1) as f64,
        n_permutations,
    })
}

fn mmd_unbiased(kernel: &[f64], n: usize, in_a: &[bool], na: usize) -> f64 {
    let nb = n - na;
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let row = &kernel[i * n..i * n + i];
        for (j, k) in row.iter().enumerate() {
            match (in_a[i], in_a[j]) {
                (true, true) => saa += k,
                (false, false) => sbb += k,
                _ => sab += k,
            }
        }
    }
    let (na, nb) = (na as f64, nb as f64);
    2.0 * saa / (na * (na - 1.0)) + 2.0 * sbb / (nb * (nb - 1.0)) - 2.0 * sab / (na * nb)
}

// ---------------------------------------------------------------------------
// Checkers

/// `count` rows sampled without replacement (or all rows, shuffled, when
/// the matrix is smaller).
pub fn subsample(x: &Matrix, count: usize, rng: &mut Rng) -> Matrix {
    let mut idx: Vec<usize> = (0..x.rows()).collect();
    rng.shuffle(&mut idx);
    idx.truncate(count.min(x.rows()));
    x.select_rows(&idx)
}

/// Translates `data` along `path` and directly from its first to its last
/// domain, then compares the two output samples.
pub fn check_path_consistency(
    models: &[&dyn Autoencoder],
    path: &[usize],
    data: &Matrix,
    rng: &mut Rng,
    cfg: &CheckConfig,
) -> Result<TwoSampleResult> {
    if path.len() < 3 {
        return Err(Error::invalid("check_path_consistency", "a path needs at least three domains"));
    }
    if let Some(bad) = path.iter().find(|&&i| i >= models.len()) {
        return Err(Error::invalid(
            "check_path_consistency",
            format!("domain index {bad} out of range for {} models", models.len()),
        ));
    }
    let x = subsample(data, cfg.samples, &mut rng.split("path/data"));
    let chain: Vec<&dyn Autoencoder> = path.iter().map(|&i| models[i]).collect();
    let via = translate_path(&chain, &x, &mut rng.split("path/via"))?;
    let first = models[path[0]];
    let last = models[path[path.len() - 1]];
    let direct = translate(first, last, &x, &mut rng.split("path/direct"))?;
    mmd_test(&via, &direct, &mut rng.split("path/mmd"), cfg.n_permutations)
}

/// One entry of the global-consistency table: `Q^(source_a)` vs `Q^(source_b)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairwiseResult {
    pub source_a: usize,
    pub source_b: usize,
    pub result: TwoSampleResult,
}

/// Joint samples of `Q^(source)`: observed rows of the source domain with
/// every other domain decoded from their shared latent, concatenated in
/// domain order.
pub fn joint_from_source(
    models: &[&dyn Autoencoder],
    marginals: &[Matrix],
    source: usize,
    count: usize,
    rng: &mut Rng,
) -> Result<Matrix> {
    let x = subsample(&marginals[source], count, &mut rng.split("joint/data"));
    let z = encode_shared(models[source], &x)?;
    let mut parts = Vec::with_capacity(models.len());
    for (j, m) in models.iter().enumerate() {
        if j == source {
            parts.push(x.clone());
            continue;
        }
        if m.latent_dim() != z.cols() {
            return Err(Error::dims("global_consistency", "models do not share a latent dim"));
        }
        let noise = crate::linalg::gauss_sample(&mut rng.split(&format!("joint/noise{j}")), x.rows(), m.noise_dim());
        parts.push(m.decode_raw(&z.hcat(&noise)?)?);
    }
    let mut joint = parts[0].clone();
    for p in &parts[1..] {
        joint = joint.hcat(p)?;
    }
    Ok(joint)
}

/// MMD tests between every pair of source-specific joint distributions.
pub fn check_global_consistency(
    models: &[&dyn Autoencoder],
    marginals: &[Matrix],
    rng: &mut Rng,
    cfg: &CheckConfig,
) -> Result<Vec<PairwiseResult>> {
    if models.len() < 2 {
        return Err(Error::invalid("check_global_consistency", "needs at least two models"));
    }
    if marginals.len() != models.len() {
        return Err(Error::dims(
            "check_global_consistency",
            format!("{} marginals for {} models", marginals.len(), models.len()),
        ));
    }
    let joints: Vec<Matrix> = (0..models.len())
        .map(|i| joint_from_source(models, marginals, i, cfg.samples, &mut rng.split(&format!("global/q{i}"))))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for a in 0..joints.len() {
        for b in a + 1..joints.len() {
            let result = mmd_test(
                &joints[a],
                &joints[b],
                &mut rng.split(&format!("global/mmd{a}-{b}")),
                cfg.n_permutations,
            )?;
            out.push(PairwiseResult {
                source_a: a,
                source_b: b,
                result,
            });
        }
    }
    Ok(out)
}

/// Every quantity of the transport-error bound for one ordered pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundReport {
    /// W(translated source, target data)
    pub lhs: f64,
    /// Lipschitz constant of the target decoder.
    pub gamma: f64,
    /// W(source encodings, source latent target)
    pub term_src: f64,
    /// W(target latent target, target encodings)
    pub term_dst: f64,
    /// Mean unsquared reconstruction error on the target domain.
    pub recon: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl BoundReport {
    pub fn new(lhs: f64, gamma: f64, term_src: f64, term_dst: f64, recon: f64) -> Self {
        let rhs = bound_rhs(gamma, term_src, term_dst, recon);
        BoundReport {
            lhs,
            gamma,
            term_src,
            term_dst,
            recon,
            rhs,
            holds: lhs <= rhs,
        }
    }
}

pub fn bound_rhs(gamma: f64, term_src: f64, term_dst: f64, recon: f64) -> f64 {
    gamma * term_src + gamma * term_dst + recon
}

/// Mean of `‖x − D(E(x))‖` (unsquared).
pub fn mean_recon_distance(model: &dyn Autoencoder, x: &Matrix) -> Result<f64> {
    let xr = reconstruct(model, x)?;
    Ok(xr.row_iter().zip(x.row_iter()).map(|(a, b)| euclidean(a, b)).sum::<f64>() / x.rows().max(1) as f64)
}

/// Evaluates the transport-error bound for `src → dst`.
///
/// `prior_src` / `prior_dst` are samples of each model's latent target in
/// `d + m` dimensions. All Wasserstein terms use `cfg.samples` rows (capped
/// at the exact-solver limit).
pub fn check_transport_bound(
    src: &dyn Autoencoder,
    dst: &dyn Autoencoder,
    x_src: &Matrix,
    x_dst: &Matrix,
    prior_src: &Matrix,
    prior_dst: &Matrix,
    rng: &mut Rng,
    cfg: &CheckConfig,
) -> Result<BoundReport> {
    let n = cfg
        .samples
        .min(EXACT_W1_LIMIT)
        .min(x_src.rows())
        .min(x_dst.rows())
        .min(prior_src.rows())
        .min(prior_dst.rows());
    if n == 0 {
        return Err(Error::invalid("check_transport_bound", "no samples"));
    }
    let xs = subsample(x_src, n, &mut rng.split("bound/src"));
    let xd = subsample(x_dst, n, &mut rng.split("bound/dst"));
    let ps = subsample(prior_src, n, &mut rng.split("bound/prior_src"));
    let pd = subsample(prior_dst, n, &mut rng.split("bound/prior_dst"));

    let gamma = dst.decoder_lipschitz()?;
    let translated = translate(src, dst, &xs, &mut rng.split("bound/translate"))?;
    let lhs = wasserstein1_exact(&translated, &xd)?;
    let term_src = wasserstein1_exact(&src.encode_raw(&xs)?, &ps)?;
    let term_dst = wasserstein1_exact(&pd, &dst.encode_raw(&xd)?)?;
    let recon = mean_recon_distance(dst, &xd)?;
    Ok(BoundReport::new(lhs, gamma, term_src, term_dst, recon))
}

/// Reconstruction quality of one domain relative to its data spread.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReconReport {
    /// Mean `‖x − D(E(x))‖²`.
    pub mse: f64,
    /// Sum of per-coordinate variances of the data.
    pub total_variance: f64,
}

impl ReconReport {
    pub fn ratio(&self) -> f64 {
        self.mse / self.total_variance
    }
}

pub fn check_reconstruction(model: &dyn Autoencoder, x: &Matrix) -> Result<ReconReport> {
    Ok(ReconReport {
        mse: recon_loss(model, x)?,
        total_variance: x.total_variance(),
    })
}

/// MMD test of the encoded data against samples of the latent target.
pub fn check_latent_match(
    model: &dyn Autoencoder,
    x: &Matrix,
    prior: &Matrix,
    rng: &mut Rng,
    cfg: &CheckConfig,
) -> Result<TwoSampleResult> {
    let xs = subsample(x, cfg.samples, &mut rng.split("latent/data"));
    let ps = subsample(prior, cfg.samples, &mut rng.split("latent/prior"));
    let codes = model.encode_raw(&xs)?;
    mmd_test(&codes, &ps, &mut rng.split("latent/mmd"), cfg.n_permutations)
}

/// Column names of the evaluation report.
pub const REPORT_HEADER: [&str; 13] = [
    "check", "source", "target", "path", "statistic", "p_value", "lhs", "gamma", "term_src", "term_dst", "recon",
    "rhs", "passed",
];

/// One line of the evaluation report. Domains are 1-based; fields that do
/// not apply to a check stay `None` and are written empty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportRow {
    pub check: String,
    pub source: Option<usize>,
    pub target: Option<usize>,
    pub path: Option<Vec<usize>>,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub bound: Option<BoundReport>,
    /// `None` for informational rows.
    pub passed: Option<bool>,
}

impl ReportRow {
    pub fn fields(&self) -> Vec<String> {
        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let idx = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        let b = self.bound.as_ref();
        vec![
            self.check.clone(),
            idx(self.source),
            idx(self.target),
            self.path
                .as_ref()
                .map(|p| p.iter().map(ToString::to_string).collect::<Vec<_>>().join("-"))
                .unwrap_or_default(),
            num(self.statistic),
            num(self.p_value),
            num(b.map(|b| b.lhs)),
            num(b.map(|b| b.gamma)),
            num(b.map(|b| b.term_src)),
            num(b.map(|b| b.term_dst)),
            num(b.map(|b| b.recon)),
            num(b.map(|b| b.rhs)),
            self.passed.map(|p| p.to_string()).unwrap_or_default(),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gauss_sample;

    #[test]
    fn identical_measures_have_zero_distance() {
        let a = gauss_sample(&mut Rng::new(1), 20, 3);
        let mut idx: Vec<usize> = (0..20).collect();
        Rng::new(2).shuffle(&mut idx);
        assert_eq!(wasserstein1_exact(&a, &a.select_rows(&idx)).unwrap(), 0.0);
    }

    #[test]
    fn two_diracs() {
        let a = Matrix::new(1, 1, vec![0.0]).unwrap();
        let b = Matrix::new(1, 1, vec![3.0]).unwrap();
        assert_eq!(wasserstein1_exact(&a, &b).unwrap(), 3.0);
    }

    #[test]
    fn exact_w1_guards() {
        let a = Matrix::zeros(3, 1);
        assert!(wasserstein1_exact(&a, &Matrix::zeros(4, 1)).is_err());
        let big = Matrix::zeros(EXACT_W1_LIMIT + 1, 1);
        assert!(matches!(
            wasserstein1_exact(&big, &big),
            Err(Error::InvalidArgument { .. })
        ));
    }

    #[test]
    fn sinkhorn_self_divergence_is_zero_and_symmetric() {
        let a = gauss_sample(&mut Rng::new(3), 30, 2);
        let b = gauss_sample(&mut Rng::new(4), 25, 2).scale(1.5);
        assert!(sinkhorn_divergence(&a, &a, 0.05, 200_000).unwrap().abs() < 1e-9);
        let ab = sinkhorn_divergence(&a, &b, 0.05, 200_000).unwrap();
        let ba = sinkhorn_divergence(&b, &a, 0.05, 200_000).unwrap();
        assert!((ab - ba).abs() < 1e-9, "{ab} {ba}");
        assert!(sinkhorn_divergence(&a, &b, 0.0, 10).is_err());
    }

    #[test]
    fn sinkhorn_reports_non_convergence() {
        let a = gauss_sample(&mut Rng::new(3), 30, 2);
        let b = gauss_sample(&mut Rng::new(4), 30, 2);
        assert!(matches!(
            sinkhorn_divergence(&a, &b, 1e-4, 3),
            Err(Error::NotConverged { .. })
        ));
    }

    #[test]
    fn mmd_identical_samples() {
        let a = gauss_sample(&mut Rng::new(5), 40, 2);
        let r = mmd_test(&a, &a, &mut Rng::new(6), 200).unwrap();
        assert!(r.statistic <= 1e-12);
        assert!(r.permutation_p > 0.9);
    }

    #[test]
    fn mmd_rejects_degenerate_pool() {
        let a = Matrix::zeros(5, 2);
        assert!(mmd_test(&a, &a, &mut Rng::new(0), 10).is_err());
    }

    #[test]
    fn mmd_detects_shift() {
        let a = gauss_sample(&mut Rng::new(7), 200, 1);
        let b = gauss_sample(&mut Rng::new(8), 200, 1).add_row_vector(&[5.0]).unwrap();
        let r = mmd_test(&a, &b, &mut Rng::new(9), 1000).unwrap();
        assert!(r.permutation_p <= 0.001, "{}", r.permutation_p);
    }

    #[test]
    fn path_needs_three_domains() {
        let spec = crate::sem::SemSpec::identity_world();
        let o0 = spec.oracle(0).unwrap();
        let o1 = spec.oracle(1).unwrap();
        let models: Vec<&dyn Autoencoder> = vec![&o0, &o1];
        let x = gauss_sample(&mut Rng::new(0), 10, 1);
        assert!(check_path_consistency(&models, &[0, 1], &x, &mut Rng::new(0), &CheckConfig::default()).is_err());
        assert!(check_global_consistency(&models[..1], &[x], &mut Rng::new(0), &CheckConfig::default()).is_err());
    }

    #[test]
    fn bound_rhs_matches_fields() {
        let r = BoundReport::new(0.3, 2.5, 0.1, 0.2, 0.05);
        assert_eq!(r.rhs, bound_rhs(r.gamma, r.term_src, r.term_dst, r.recon));
        assert!(r.holds);
    }
}
