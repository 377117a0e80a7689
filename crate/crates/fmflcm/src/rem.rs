//! The regularized EM loop: E-step responsibilities, penalized M-step,
//! initialization, stopping, and wild-bootstrap confidence bands.

use crate::basis::SplineBasis;
use crate::dataset::FunctionalDataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::params::{MixtureParams, Responsibilities, VARIANCE_FLOOR};
use crate::penalty::{self, PenaltyConfig, PenaltyKind};
use crate::scalar::{fl, Scalar};
use crate::solver::{DesignCache, WorkingProblem};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// How the E-step combines per-time densities: the product form (sum of
/// log densities, consistent with the complete-data likelihood) or the
/// literal sum-of-densities form kept for comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EStepMode {
    Product,
    Sum,
}

/// Stopping rule for the EM loop.
#[derive(Clone, Copy, Debug)]
pub struct StopSpec<F> {
    pub tol: F,
    pub max_iter: usize,
    pub estep: EStepMode,
}

impl<F: Scalar> Default for StopSpec<F> {
    fn default() -> Self {
        StopSpec {
            tol: fl(1e-6),
            max_iter: 200,
            estep: EStepMode::Product,
        }
    }
}

/// Initialization strategies.
#[derive(Clone, Debug)]
pub enum InitStrategy {
    /// Uniform multinomial hard assignments.
    Random,
    /// User-supplied hard labels.
    Labels(Vec<usize>),
    /// Hard labels from a small k-means on per-subject regression
    /// summaries.
    KmeansLite,
}

#[derive(Clone, Debug)]
pub struct InitSpec {
    pub strategy: InitStrategy,
    pub seed: u64,
}

impl InitSpec {
    pub fn random(seed: u64) -> Self {
        InitSpec {
            strategy: InitStrategy::Random,
            seed,
        }
    }

    pub fn labels(labels: Vec<usize>) -> Self {
        InitSpec {
            strategy: InitStrategy::Labels(labels),
            seed: 0,
        }
    }
}

/// Score used to pick lambda along the per-M-step path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathScore {
    Aic,
    Loglik,
}

/// Whether the M-step solves at a single fixed lambda or along a
/// descending warm-started path with per-step selection.
#[derive(Clone, Debug)]
pub enum LambdaRule<F> {
    Fixed,
    Path {
        length: usize,
        floor_frac: F,
        score: PathScore,
    },
}

impl<F: Scalar> LambdaRule<F> {
    pub fn default_path() -> Self {
        LambdaRule::Path {
            length: 30,
            floor_frac: fl(0.01),
            score: PathScore::Aic,
        }
    }
}

/// The hyperparameters a fit ended up with.
#[derive(Clone, Copy, Debug)]
pub struct Chosen<F> {
    pub kind: PenaltyKind,
    pub lambda: F,
    pub rho: F,
    pub r: F,
    pub k: usize,
}

/// Everything a finished fit reports.
#[derive(Clone, Debug)]
pub struct FitResult<F> {
    pub params: MixtureParams<F>,
    pub omega: Responsibilities<F>,
    pub labels: Vec<usize>,
    /// Nonzero (j, k) coefficient blocks.
    pub support: Vec<(usize, usize)>,
    /// Covariates with at least one nonzero block.
    pub selected_covariates: Vec<usize>,
    /// Penalized composite log-likelihood per iteration (restarts after a
    /// cluster re-seed event).
    pub trace: Vec<F>,
    pub loglik: F,
    pub df: F,
    pub aic: F,
    pub bic: F,
    pub chosen: Chosen<F>,
    pub converged: bool,
    pub iterations: usize,
    pub reseeds: usize,
    pub seed: u64,
}

/// Per-(i,s,k) Gaussian log density of the response under each cluster,
/// flattened by stacked observation then cluster.
fn log_densities<F: Scalar>(
    params: &MixtureParams<F>,
    basis: &SplineBasis<F>,
    data: &FunctionalDataset<F>,
) -> Vec<F> {
    let (p, l, k) = (params.p, params.l, params.k);
    let half = fl::<F>(0.5);
    let two_pi = fl::<F>(2.0 * std::f64::consts::PI);
    let mut out = Vec::with_capacity(data.total_observations() * k);
    for subj in &data.subjects {
        for (s, &t) in subj.times.iter().enumerate() {
            let phi = basis.values(t);
            let x_row = subj.x_row(s, p);
            for c in 0..k {
                let mut mean = F::zero();
                for j in 0..p {
                    let b = params.b_block(j, c);
                    if b.iter().any(|&v| v != F::zero()) {
                        mean = mean + x_row[j] * linalg::dot(&phi[..l], b);
                    }
                }
                let r = subj.y[s] - mean;
                let s2 = params.sigma2[c];
                out.push(-half * (two_pi * s2).ln() - r * r / (fl::<F>(2.0) * s2));
            }
        }
    }
    out
}

fn logsumexp<F: Scalar>(xs: &[F]) -> F {
    let mut m = F::neg_infinity();
    for &x in xs {
        if x > m {
            m = x;
        }
    }
    if !m.is_finite() {
        return m;
    }
    let mut acc = F::zero();
    for &x in xs {
        acc = acc + (x - m).exp();
    }
    m + acc.ln()
}

/// Composite log-likelihood: sum over observations of the log mixture
/// density, with log-sum-exp stabilization.
pub fn composite_loglik<F: Scalar>(
    params: &MixtureParams<F>,
    basis: &SplineBasis<F>,
    data: &FunctionalDataset<F>,
) -> Result<F> {
    let k = params.k;
    let ld = log_densities(params, basis, data);
    let log_pi: Vec<F> = params
        .pi
        .iter()
        .map(|&p| if p > F::zero() { p.ln() } else { F::neg_infinity() })
        .collect();
    let mut total = F::zero();
    let mut terms = vec![F::zero(); k];
    for obs in 0..data.total_observations() {
        for c in 0..k {
            terms[c] = log_pi[c] + ld[obs * k + c];
        }
        let v = logsumexp(&terms);
        if !v.is_finite() {
            return Err(Error::Degenerate(
                "non-finite composite log-likelihood".into(),
            ));
        }
        total = total + v;
    }
    Ok(total)
}

/// Observed-data mixture log-likelihood with the subject-level latent
/// structure, aggregating per-time densities the same way as the chosen
/// E-step mode. This is the quantity (minus the penalty) that the REM
/// iteration provably ascends, so it drives the fit trace and stopping
/// rule.
pub fn mixture_loglik<F: Scalar>(
    params: &MixtureParams<F>,
    basis: &SplineBasis<F>,
    data: &FunctionalDataset<F>,
    mode: EStepMode,
) -> Result<F> {
    let k = params.k;
    let ld = log_densities(params, basis, data);
    let log_pi: Vec<F> = params
        .pi
        .iter()
        .map(|&p| if p > F::zero() { p.ln() } else { F::neg_infinity() })
        .collect();
    let mut total = F::zero();
    let mut obs = 0;
    for subj in &data.subjects {
        let s_i = subj.times.len();
        let mut logw = vec![F::zero(); k];
        for c in 0..k {
            let per_time: Vec<F> = (0..s_i).map(|s| ld[(obs + s) * k + c]).collect();
            let agg = match mode {
                EStepMode::Product => per_time.iter().copied().sum(),
                EStepMode::Sum => logsumexp(&per_time),
            };
            logw[c] = log_pi[c] + agg;
        }
        let v = logsumexp(&logw);
        if !v.is_finite() {
            return Err(Error::Degenerate(
                "non-finite mixture log-likelihood".into(),
            ));
        }
        total = total + v;
        obs += s_i;
    }
    Ok(total)
}

/// Posterior cluster weights. The product form multiplies the per-time
/// densities within a subject (sum of log densities); the sum form is the
/// literal sum-of-densities variant.
pub fn e_step_mode<F: Scalar>(
    params: &MixtureParams<F>,
    basis: &SplineBasis<F>,
    data: &FunctionalDataset<F>,
    mode: EStepMode,
) -> Result<Responsibilities<F>> {
    let k = params.k;
    let n = data.n();
    let ld = log_densities(params, basis, data);
    let pi_floor = fl::<F>(1e-12);
    let pi_sum: F = params.pi.iter().map(|&p| p.max(pi_floor)).sum();
    let log_pi: Vec<F> = params
        .pi
        .iter()
        .map(|&p| (p.max(pi_floor) / pi_sum).ln())
        .collect();
    let mut omega = vec![F::zero(); n * k];
    let mut obs = 0;
    for (i, subj) in data.subjects.iter().enumerate() {
        let s_i = subj.times.len();
        let mut logw = vec![F::zero(); k];
        for c in 0..k {
            let per_time: Vec<F> = (0..s_i).map(|s| ld[(obs + s) * k + c]).collect();
            let agg = match mode {
                EStepMode::Product => per_time.iter().copied().sum(),
                EStepMode::Sum => logsumexp(&per_time),
            };
            logw[c] = log_pi[c] + agg;
        }
        let norm = logsumexp(&logw);
        if !norm.is_finite() {
            return Err(Error::Degenerate(format!(
                "subject {} has zero posterior mass in every cluster",
                subj.id
            )));
        }
        for c in 0..k {
            omega[i * k + c] = (logw[c] - norm).exp();
        }
        // Remove round-off drift from the row.
        let row_sum: F = omega[i * k..(i + 1) * k].iter().copied().sum();
        for c in 0..k {
            omega[i * k + c] = omega[i * k + c] / row_sum;
        }
        obs += s_i;
    }
    Responsibilities::new(n, k, omega)
}

/// Product-form E-step (the default).
pub fn e_step<F: Scalar>(
    params: &MixtureParams<F>,
    basis: &SplineBasis<F>,
    data: &FunctionalDataset<F>,
) -> Result<Responsibilities<F>> {
    e_step_mode(params, basis, data, EStepMode::Product)
}

/// Flattens the coefficient tensor into alpha coordinates, block by block.
pub fn params_to_alpha<F: Scalar>(params: &MixtureParams<F>, basis: &SplineBasis<F>) -> Vec<F> {
    let mut alpha = Vec::with_capacity(params.b.len());
    for j in 0..params.p {
        for c in 0..params.k {
            alpha.extend(basis.to_alpha(params.b_block(j, c)));
        }
    }
    alpha
}

/// Outcome of one M-step beyond the parameters themselves.
struct MStepOutcome<F> {
    params: MixtureParams<F>,
    alpha: Vec<F>,
    lambda: F,
    problem: WorkingProblem<F>,
}

const EMPTY_MASS_FRAC: f64 = 1e-6;
const SOLVE_TOL: f64 = 1e-6;
const SOLVE_SWEEPS: usize = 150;

fn cluster_is_empty<F: Scalar>(mass: F, n: usize) -> bool {
    mass < fl::<F>(EMPTY_MASS_FRAC) * F::from_usize(n).unwrap()
}

/// Variance and mixing updates given residuals at the new coefficients.
fn update_pi_sigma<F: Scalar>(
    omega: &Responsibilities<F>,
    data: &FunctionalDataset<F>,
    residuals: &[F],
    prev_sigma2: &[F],
    params: &mut MixtureParams<F>,
) {
    let (n, k) = (omega.n, omega.k);
    let mass = omega.cluster_mass();
    for c in 0..k {
        params.pi[c] = mass[c] / F::from_usize(n).unwrap();
    }
    params.renormalize_pi();
    let mut num = vec![F::zero(); k];
    let mut den = vec![F::zero(); k];
    let mut obs = 0;
    for (i, subj) in data.subjects.iter().enumerate() {
        let s_i = subj.times.len();
        for c in 0..k {
            let w = omega.get(i, c);
            den[c] = den[c] + w * F::from_usize(s_i).unwrap();
            for s in 0..s_i {
                let r = residuals[(obs + s) * k + c];
                num[c] = num[c] + w * r * r;
            }
        }
        obs += s_i;
    }
    let floor = fl::<F>(VARIANCE_FLOOR);
    for c in 0..k {
        params.sigma2[c] = if cluster_is_empty(mass[c], n) {
            prev_sigma2[c]
        } else {
            (num[c] / den[c]).max(floor)
        };
    }
}

/// Effective per-block dimension trace{(G + shrink I)^{-1} G} from the
/// eigenvalues of the block Gram; equals L when shrink = 0.
fn l_eff_from_eigs<F: Scalar>(eigs: &[F], shrink: F) -> F {
    if shrink <= F::zero() {
        return F::from_usize(eigs.len()).unwrap();
    }
    eigs.iter()
        .map(|&e| {
            let e = e.max(F::zero());
            e / (e + shrink)
        })
        .sum()
}

/// Model degrees of freedom at a given alpha: effective dimensions of the
/// nonzero blocks plus the free mixture parameters (K-1 proportions, K
/// variances).
pub fn degrees_of_freedom<F: Scalar>(
    problem: &WorkingProblem<F>,
    config: &PenaltyConfig<F>,
    lambda: F,
    alpha: &[F],
) -> Result<F> {
    let (p, l, k) = (problem.p(), problem.l(), problem.k);
    let mut df = F::zero();
    for j in 0..p {
        for c in 0..k {
            let block = &alpha[(j * k + c) * l..(j * k + c + 1) * l];
            if block.iter().all(|&v| v == F::zero()) {
                continue;
            }
            let g = &problem.group_gram[j * k + c];
            df = df + match config.kind {
                PenaltyKind::Fs => F::from_usize(l).unwrap(),
                PenaltyKind::FsNet | PenaltyKind::FgsNet => {
                    let shrink = fl::<F>(2.0) * config.scale * (F::one() - config.rho) * lambda;
                    if shrink <= F::zero() {
                        F::from_usize(l).unwrap()
                    } else {
                        let eigs = linalg::symmetric_eigenvalues(g);
                        l_eff_from_eigs(&eigs, shrink)
                    }
                }
                PenaltyKind::Rp => {
                    // trace{(G + 2 scale lambda Q)^{-1} G} by column solves.
                    let two_lam = fl::<F>(2.0) * config.scale * lambda;
                    let mut m = g.clone();
                    let mut scale = F::zero();
                    for t in 0..l {
                        scale = scale.max(m[(t, t)].abs());
                    }
                    let ridge = fl::<F>(1e-12) * (F::one() + scale);
                    for r_i in 0..l {
                        for c_i in 0..l {
                            m[(r_i, c_i)] =
                                m[(r_i, c_i)] + two_lam * problem.cache.rp_q[(r_i, c_i)];
                        }
                        m[(r_i, r_i)] = m[(r_i, r_i)] + ridge;
                    }
                    let mut tr = F::zero();
                    for col in 0..l {
                        let gcol: Vec<F> = (0..l).map(|r_i| g[(r_i, col)]).collect();
                        let x = linalg::spd_solve(&m, &gcol)?;
                        tr = tr + x[col];
                    }
                    tr
                }
            };
        }
    }
    df = df + F::from_usize(k - 1).unwrap() + F::from_usize(k).unwrap();
    Ok(df)
}

/// Unpenalized composite log-likelihood evaluated from solver residuals
/// under given (pi, sigma2) — avoids re-evaluating the basis.
fn loglik_from_residuals<F: Scalar>(
    problem: &WorkingProblem<F>,
    residuals: &[F],
    pi: &[F],
    sigma2: &[F],
) -> F {
    let k = problem.k;
    let half = fl::<F>(0.5);
    let two_pi = fl::<F>(2.0 * std::f64::consts::PI);
    let log_pi: Vec<F> = pi
        .iter()
        .map(|&p| if p > F::zero() { p.ln() } else { F::neg_infinity() })
        .collect();
    let log_norm: Vec<F> = sigma2.iter().map(|&s2| -half * (two_pi * s2).ln()).collect();
    let mut total = F::zero();
    let mut terms = vec![F::zero(); k];
    for obs in 0..problem.cache.total_obs {
        for c in 0..k {
            let r = residuals[obs * k + c];
            terms[c] = log_pi[c] + log_norm[c] - r * r / (fl::<F>(2.0) * sigma2[c]);
        }
        total = total + logsumexp(&terms);
    }
    total
}

/// One M-step: beta via the group solver (optionally along a lambda path
/// with per-step selection), then pi, then sigma^2.
fn m_step_inner<F: Scalar>(
    cache: &Arc<DesignCache<F>>,
    basis: &SplineBasis<F>,
    data: &FunctionalDataset<F>,
    omega: &Responsibilities<F>,
    params_prev: &MixtureParams<F>,
    config: &PenaltyConfig<F>,
    rule: &LambdaRule<F>,
    path: &mut Option<Vec<F>>,
) -> Result<MStepOutcome<F>> {
    let problem = WorkingProblem::from_cache(cache.clone(), omega, &params_prev.sigma2)?;
    let alpha_prev = params_to_alpha(params_prev, basis);
    let (l, k) = (basis.l, omega.k);
    let n = omega.n;

    let (alpha, lambda) = match rule {
        LambdaRule::Fixed => {
            let res = problem.solve(config, &alpha_prev, fl(SOLVE_TOL), SOLVE_SWEEPS)?;
            (res.alpha, config.lambda)
        }
        LambdaRule::Path {
            length,
            floor_frac,
            score,
        } => {
            if config.kind == PenaltyKind::Rp {
                return Err(Error::InvalidInput(
                    "lambda path applies to sparsity penalties, not rp".into(),
                ));
            }
            if config.effective_rho() <= F::zero() {
                // No sparsity mechanism: the path degenerates to an
                // essentially unpenalized solve at the floor.
                let cfg = config.with_lambda(fl(f64::EPSILON));
                let res = problem.solve(&cfg, &alpha_prev, fl(SOLVE_TOL), SOLVE_SWEEPS)?;
                (res.alpha, cfg.lambda)
            } else {
                // The path anchor lambda_max depends on the current
                // responsibilities, so it is recomputed every M-step; a
                // grid frozen at the (uninformative) initialization can
                // top out below the relevant sparsity region.
                let lambdas = {
                    let lmax = problem.lambda_max(config)?;
                    let lmin = lmax * *floor_frac;
                    let t = (*length).max(1);
                    let seq: Vec<F> = (0..t)
                        .map(|i| {
                            if t == 1 {
                                lmax
                            } else {
                                let frac =
                                    F::from_usize(i).unwrap() / F::from_usize(t - 1).unwrap();
                                (lmax.ln() + frac * (lmin.ln() - lmax.ln())).exp()
                            }
                        })
                        .collect();
                    *path = Some(seq.clone());
                    seq
                };
                let pi_new: Vec<F> = omega
                    .cluster_mass()
                    .iter()
                    .map(|&m| m / F::from_usize(n).unwrap())
                    .collect();
                let mut warm = vec![F::zero(); problem.alpha_len()];
                let mut best: Option<(F, F, Vec<F>)> = None; // (score, lambda, alpha)
                let mut eig_memo: Vec<Option<Vec<F>>> = vec![None; problem.p() * k];
                for &lam in &lambdas {
                    let cfg = config.with_lambda(lam);
                    let res = problem.solve(&cfg, &warm, fl(SOLVE_TOL), SOLVE_SWEEPS)?;
                    warm = res.alpha.clone();
                    let residuals = problem.residuals(&res.alpha);
                    // Provisional sigma^2 under the candidate beta.
                    let mut sig = params_prev.sigma2.clone();
                    {
                        let mut scratch = params_prev.clone();
                        update_pi_sigma(omega, data, &residuals, &params_prev.sigma2, &mut scratch);
                        sig.copy_from_slice(&scratch.sigma2);
                    }
                    let ll = loglik_from_residuals(&problem, &residuals, &pi_new, &sig);
                    let sc = match score {
                        PathScore::Loglik => -fl::<F>(2.0) * ll,
                        PathScore::Aic => {
                            let mut df = F::from_usize(2 * k - 1).unwrap();
                            let shrink = fl::<F>(2.0)
                                * config.scale
                                * (F::one() - config.effective_rho())
                                * lam;
                            for j in 0..problem.p() {
                                for c in 0..k {
                                    let blk =
                                        &res.alpha[(j * k + c) * l..(j * k + c + 1) * l];
                                    if blk.iter().all(|&v| v == F::zero()) {
                                        continue;
                                    }
                                    df = df
                                        + if shrink <= F::zero() {
                                            F::from_usize(l).unwrap()
                                        } else {
                                            let eigs = eig_memo[j * k + c]
                                                .get_or_insert_with(|| {
                                                    linalg::symmetric_eigenvalues(
                                                        &problem.group_gram[j * k + c],
                                                    )
                                                });
                                            l_eff_from_eigs(eigs, shrink)
                                        };
                                }
                            }
                            -fl::<F>(2.0) * ll + fl::<F>(2.0) * df
                        }
                    };
                    if std::env::var_os("FMFLCM_DEBUG_PATH").is_some() {
                        let nz = (0..problem.p() * k)
                            .filter(|&g| {
                                res.alpha[g * l..(g + 1) * l].iter().any(|&v| v != F::zero())
                            })
                            .count();
                        eprintln!(
                            "path: lam={:?} nz_blocks={} sweeps={} m2ll={:?} score={:?}",
                            lam,
                            nz,
                            res.sweeps,
                            -fl::<F>(2.0) * ll,
                            sc
                        );
                    }
                    // Strict improvement keeps the larger (sparser) lambda
                    // on ties.
                    if best.as_ref().map_or(true, |(b, _, _)| sc < *b) {
                        best = Some((sc, lam, res.alpha));
                    }
                }
                let (_, lam, alpha) = best.unwrap();
                (alpha, lam)
            }
        }
    };

    // Back-transform and update the closed-form blocks.
    let mut params = MixtureParams::zeros(problem.p(), k, l);
    for j in 0..problem.p() {
        for c in 0..k {
            let a = &alpha[(j * k + c) * l..(j * k + c + 1) * l];
            if a.iter().all(|&v| v == F::zero()) {
                continue; // exact zero block stays exactly zero
            }
            let b = basis.to_coefficients(a);
            params.b_block_mut(j, c).copy_from_slice(&b);
        }
    }
    // Empty clusters keep their warm-start coefficients.
    let mass = omega.cluster_mass();
    for c in 0..k {
        if cluster_is_empty(mass[c], n) {
            for j in 0..problem.p() {
                let prev = params_prev.b_block(j, c).to_vec();
                params.b_block_mut(j, c).copy_from_slice(&prev);
            }
        }
    }
    let residuals = problem.residuals(&alpha);
    update_pi_sigma(omega, data, &residuals, &params_prev.sigma2, &mut params);
    Ok(MStepOutcome {
        params,
        alpha,
        lambda,
        problem,
    })
}

/// Public single M-step at the configured lambda.
pub fn m_step<F: Scalar>(
    data: &FunctionalDataset<F>,
    basis: &SplineBasis<F>,
    omega: &Responsibilities<F>,
    params_prev: &MixtureParams<F>,
    config: &PenaltyConfig<F>,
) -> Result<MixtureParams<F>> {
    let cache = Arc::new(DesignCache::new(data, basis));
    let config = &config.with_scale(F::from_usize(data.total_observations()).unwrap());
    let mut path = None;
    Ok(m_step_inner(
        &cache,
        basis,
        data,
        omega,
        params_prev,
        config,
        &LambdaRule::Fixed,
        &mut path,
    )?
    .params)
}

/// Initial hard responsibilities.
pub fn initialize<F: Scalar>(
    data: &FunctionalDataset<F>,
    k: usize,
    strategy: &InitStrategy,
    seed: u64,
) -> Result<Responsibilities<F>> {
    let n = data.n();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!(
            "cluster count {k} invalid for {n} subjects"
        )));
    }
    match strategy {
        InitStrategy::Labels(labels) => {
            if labels.len() != n {
                return Err(Error::Dimension("label vector length".into()));
            }
            let resp = Responsibilities::from_labels(labels, k)?;
            if resp.cluster_mass().iter().any(|&m| m <= F::zero()) {
                return Err(Error::InvalidInput(
                    "supplied labels leave a cluster empty".into(),
                ));
            }
            Ok(resp)
        }
        InitStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..100 {
                let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
                let resp = Responsibilities::from_labels(&labels, k)?;
                if resp.cluster_mass().iter().all(|&m| m > F::zero()) {
                    return Ok(resp);
                }
            }
            Err(Error::Degenerate(
                "random initialization kept producing empty clusters".into(),
            ))
        }
        InitStrategy::KmeansLite => {
            let feats: Vec<[f64; 2]> = data
                .subjects
                .iter()
                .map(|s| {
                    // Per-subject OLS of y on time: (intercept, slope).
                    let m = s.times.len() as f64;
                    let tbar: f64 =
                        s.times.iter().map(|&t| t.to_f64().unwrap()).sum::<f64>() / m;
                    let ybar: f64 = s.y.iter().map(|&y| y.to_f64().unwrap()).sum::<f64>() / m;
                    let mut sxy = 0.0;
                    let mut sxx = 0.0;
                    for (t, y) in s.times.iter().zip(&s.y) {
                        let dt = t.to_f64().unwrap() - tbar;
                        sxy += dt * (y.to_f64().unwrap() - ybar);
                        sxx += dt * dt;
                    }
                    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
                    [ybar, slope]
                })
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..100 {
                let labels = kmeans_lite(&feats, k, &mut rng);
                let resp = Responsibilities::from_labels(&labels, k)?;
                if resp.cluster_mass().iter().all(|&m| m > F::zero()) {
                    return Ok(resp);
                }
            }
            Err(Error::Degenerate(
                "kmeans-lite initialization kept producing empty clusters".into(),
            ))
        }
    }
}

fn kmeans_lite(feats: &[[f64; 2]], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = feats.len();
    let mut centers: Vec<[f64; 2]> = rand::seq::index::sample(rng, n, k.min(n))
        .iter()
        .map(|i| feats[i])
        .collect();
    let mut labels = vec![0usize; n];
    for _ in 0..20 {
        for (i, f) in feats.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, ctr) in centers.iter().enumerate() {
                let d = (f[0] - ctr[0]).powi(2) + (f[1] - ctr[1]).powi(2);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            labels[i] = best;
        }
        for c in 0..centers.len() {
            let members: Vec<&[f64; 2]> = feats
                .iter()
                .zip(&labels)
                .filter(|(_, &z)| z == c)
                .map(|(f, _)| f)
                .collect();
            if members.is_empty() {
                // Re-seed an empty center at a random point.
                centers[c] = feats[rng.gen_range(0..n)];
            } else {
                let m = members.len() as f64;
                centers[c] = [
                    members.iter().map(|f| f[0]).sum::<f64>() / m,
                    members.iter().map(|f| f[1]).sum::<f64>() / m,
                ];
            }
        }
    }
    labels
}

/// Full REM fit with a fixed penalty configuration or a per-M-step
/// lambda path.
pub fn fit<F: Scalar>(
    data: &FunctionalDataset<F>,
    basis: &SplineBasis<F>,
    k: usize,
    config: &PenaltyConfig<F>,
    rule: &LambdaRule<F>,
    init: &InitSpec,
    stop: &StopSpec<F>,
) -> Result<FitResult<F>> {
    config.validate()?;
    if k == 0 {
        return Err(Error::InvalidInput("K must be >= 1".into()));
    }
    // Penalized-likelihood convention: the penalty enters the objective as
    // total_observations * P_lambda, so lambda lives on a per-observation
    // scale regardless of sample size.
    let config = &config.with_scale(F::from_usize(data.total_observations()).unwrap());
    let cache = Arc::new(DesignCache::new(data, basis));
    let n = data.n();
    let mut omega = initialize(data, k, &init.strategy, init.seed)?;

    // Starting parameters: zero coefficients, marginal response variance.
    let mut params = MixtureParams::zeros(data.p, k, basis.l);
    let ybar: F = data
        .subjects
        .iter()
        .flat_map(|s| s.y.iter().copied())
        .sum::<F>()
        / F::from_usize(data.total_observations()).unwrap();
    let var: F = data
        .subjects
        .iter()
        .flat_map(|s| s.y.iter().map(|&y| (y - ybar) * (y - ybar)))
        .sum::<F>()
        / F::from_usize(data.total_observations()).unwrap();
    let s2_init = var.max(fl(VARIANCE_FLOOR));
    for c in 0..k {
        params.sigma2[c] = s2_init;
    }

    let mut path: Option<Vec<F>> = None;
    let mut trace: Vec<F> = Vec::new();
    let mut prev_lp: Option<F> = None;
    let mut converged = false;
    let mut iterations = 0;
    let mut reseeds = 0;
    let mut empties = vec![0usize; k];
    let mut chosen_lambda = config.lambda;
    let mut last_alpha = vec![F::zero(); data.p * k * basis.l];

    for _ in 0..stop.max_iter {
        let out = m_step_inner(&cache, basis, data, &omega, &params, config, rule, &mut path)?;
        params = out.params;
        chosen_lambda = out.lambda;
        last_alpha = out.alpha;
        iterations += 1;

        let cfg_now = config.with_lambda(chosen_lambda);
        let pen = penalty::penalty_value(
            &cfg_now,
            data.p,
            k,
            basis.l,
            &last_alpha,
            Some(&out.problem.cache.rp_q),
        )?;
        let ll = mixture_loglik(&params, basis, data, stop.estep)?;
        let lp = ll - pen;
        trace.push(lp);
        if let Some(prev) = prev_lp {
            if (lp - prev).abs() / (F::one() + lp.abs()) < stop.tol {
                converged = true;
                break;
            }
        }
        prev_lp = Some(lp);

        omega = e_step_mode(&params, basis, data, stop.estep)?;
        // Re-seed effectively empty clusters from the worst-explained
        // subjects.
        let mass = omega.cluster_mass();
        let empty: Vec<usize> = (0..k).filter(|&c| cluster_is_empty(mass[c], n)).collect();
        if !empty.is_empty() {
            let ld = log_densities(&params, basis, data);
            let mut subj_ll: Vec<(F, usize)> = Vec::with_capacity(n);
            let mut obs = 0;
            for (i, subj) in data.subjects.iter().enumerate() {
                let s_i = subj.times.len();
                let mut terms = vec![F::zero(); k];
                let mut agg = F::zero();
                for s in 0..s_i {
                    for c in 0..k {
                        terms[c] = params.pi[c].max(fl(1e-12)).ln() + ld[(obs + s) * k + c];
                    }
                    agg = agg + logsumexp(&terms);
                }
                subj_ll.push((agg, i));
                obs += s_i;
            }
            subj_ll.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let take = (n / (2 * k)).max(1);
            let mut omega_new = omega.omega.clone();
            let mut cursor = 0;
            for &c in &empty {
                empties[c] += 1;
                if empties[c] >= 2 {
                    return Err(Error::Degenerate(format!(
                        "cluster {c} emptied twice; fit is degenerate"
                    )));
                }
                for _ in 0..take {
                    if cursor >= n {
                        break;
                    }
                    let i = subj_ll[cursor].1;
                    for cc in 0..k {
                        omega_new[i * k + cc] = if cc == c { F::one() } else { F::zero() };
                    }
                    cursor += 1;
                }
            }
            omega = Responsibilities::new(n, k, omega_new)?;
            reseeds += 1;
            // The objective is not comparable across a re-seed; restart
            // the recorded trace.
            trace.clear();
            prev_lp = None;
        }
    }

    let omega_final = e_step_mode(&params, basis, data, stop.estep)?;
    let labels = omega_final.hard_labels();
    let mut support = Vec::new();
    let mut selected = Vec::new();
    for j in 0..data.p {
        let mut any = false;
        for c in 0..k {
            if params.b_block(j, c).iter().any(|&v| v != F::zero()) {
                support.push((j, c));
                any = true;
            }
        }
        if any {
            selected.push(j);
        }
    }

    let final_problem = WorkingProblem::from_cache(cache, &omega_final, &params.sigma2)?;
    let cfg_now = config.with_lambda(chosen_lambda);
    let df = degrees_of_freedom(&final_problem, &cfg_now, chosen_lambda, &last_alpha)?;
    let loglik = composite_loglik(&params, basis, data)?;
    let total_obs = F::from_usize(data.total_observations()).unwrap();
    let aic = -fl::<F>(2.0) * loglik + fl::<F>(2.0) * df;
    let bic = -fl::<F>(2.0) * loglik + df * total_obs.ln();

    Ok(FitResult {
        params,
        omega: omega_final,
        labels,
        support,
        selected_covariates: selected,
        trace,
        loglik,
        df,
        aic,
        bic,
        chosen: Chosen {
            kind: config.kind,
            lambda: chosen_lambda,
            rho: config.rho,
            r: config.r,
            k,
        },
        converged,
        iterations,
        reseeds,
        seed: init.seed,
    })
}

/// Convenience: fixed-lambda fit.
pub fn fit_fixed<F: Scalar>(
    data: &FunctionalDataset<F>,
    basis: &SplineBasis<F>,
    k: usize,
    config: &PenaltyConfig<F>,
    init: &InitSpec,
    stop: &StopSpec<F>,
) -> Result<FitResult<F>> {
    fit(data, basis, k, config, &LambdaRule::Fixed, init, stop)
}

/// Best-of-n-starts fit by final penalized objective.
pub fn fit_multi_start<F: Scalar>(
    data: &FunctionalDataset<F>,
    basis: &SplineBasis<F>,
    k: usize,
    config: &PenaltyConfig<F>,
    rule: &LambdaRule<F>,
    seed: u64,
    n_starts: usize,
    stop: &StopSpec<F>,
) -> Result<FitResult<F>> {
    let mut best: Option<FitResult<F>> = None;
    let mut last_err = None;
    for s in 0..n_starts.max(1) {
        let init = InitSpec::random(seed.wrapping_add(s as u64));
        match fit(data, basis, k, config, rule, &init, stop) {
            Ok(f) => {
                let score = f.trace.last().copied().unwrap_or(F::neg_infinity());
                let better = best
                    .as_ref()
                    .map_or(true, |b| score > b.trace.last().copied().unwrap_or(F::neg_infinity()));
                if better {
                    best = Some(f);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(Error::Degenerate("all starts failed".into())))
}

/// The roughness-penalty (RP) baseline: a pure ridge in the D-metric
/// (FS-Net with rho = 0) initialized at known labels, with lambda chosen
/// by a BIC-style score from a single M-step conditional on those labels
/// before the EM runs to convergence at the selected value.
///
/// Rationale: the ridge has no finite lambda_max, so the in-M-step path
/// rule does not apply; tuning against the supervised (label-conditional)
/// problem is the most favorable static treatment for the baseline.
pub fn fit_ridge_baseline<F: Scalar>(
    data: &FunctionalDataset<F>,
    basis: &SplineBasis<F>,
    k: usize,
    labels: &[usize],
    lambda_grid: &[F],
    r: F,
    stop: &StopSpec<F>,
) -> Result<FitResult<F>> {
    if lambda_grid.is_empty() {
        return Err(Error::InvalidInput("empty RP lambda grid".into()));
    }
    let omega = initialize(data, k, &InitStrategy::Labels(labels.to_vec()), 0)?;
    let mut params0 = MixtureParams::zeros(data.p, k, basis.l);
    for c in 0..k {
        params0.sigma2[c] = F::one();
    }
    let total_obs = F::from_usize(data.total_observations()).unwrap();
    let mut best: Option<(F, F)> = None;
    for &lambda in lambda_grid {
        let config = PenaltyConfig::new(PenaltyKind::FsNet, lambda, F::zero(), r);
        let cand = match m_step(data, basis, &omega, &params0, &config) {
            Ok(c) => c,
            Err(_) => continue,
        };
        let ll = composite_loglik(&cand, basis, data)?;
        let problem = WorkingProblem::assemble(data, basis, &omega, &cand.sigma2)?;
        let alpha = params_to_alpha(&cand, basis);
        let config = config.with_scale(total_obs);
        let df = degrees_of_freedom(&problem, &config, lambda, &alpha)?;
        let score = -fl::<F>(2.0) * ll + df * total_obs.ln();
        if best.as_ref().map_or(true, |b| score < b.0) {
            best = Some((score, lambda));
        }
    }
    let (_, lambda) =
        best.ok_or_else(|| Error::Degenerate("all RP lambda values failed".into()))?;
    let config = PenaltyConfig::new(PenaltyKind::FsNet, lambda, F::zero(), r);
    let init = InitSpec::labels(labels.to_vec());
    fit_fixed(data, basis, k, &config, &init, stop)
}

/// The default lambda grid for [`fit_ridge_baseline`].
pub fn ridge_baseline_grid<F: Scalar>() -> Vec<F> {
    vec![
        fl(1e-4),
        fl(1e-3),
        fl(1e-2),
        fl(3e-2),
        fl(1e-1),
        fl(3e-1),
        fl(1.0),
    ]
}

/// Pointwise wild-bootstrap confidence bands for the coefficient curves.
#[derive(Clone, Debug)]
pub struct BootstrapBands<F> {
    pub times: Vec<F>,
    /// Row-major (j, k, grid) lower band.
    pub lower: Vec<F>,
    pub upper: Vec<F>,
    /// The fitted point estimate on the same grid.
    pub estimate: Vec<F>,
    pub p: usize,
    pub k: usize,
    pub replicates_used: usize,
    pub dropped: usize,
    pub level: F,
    /// Which bootstrap variant produced the bands.
    pub method: &'static str,
}

impl<F: Scalar> BootstrapBands<F> {
    pub fn band(&self, j: usize, c: usize) -> (&[F], &[F]) {
        let g = self.times.len();
        let start = (j * self.k + c) * g;
        (
            &self.lower[start..start + g],
            &self.upper[start..start + g],
        )
    }
}

/// Rademacher-multiplier wild bootstrap with the support frozen: residuals
/// are sign-flipped per subject, responses regenerated under the fitted
/// hard labels, and beta refit on the selected covariates only.
pub fn bootstrap_bands<F: Scalar>(
    fit: &FitResult<F>,
    data: &FunctionalDataset<F>,
    basis: &SplineBasis<F>,
    b_reps: usize,
    level: F,
    seed: u64,
) -> Result<BootstrapBands<F>> {
    if !fit.converged {
        return Err(Error::InvalidInput(
            "bootstrap requires a converged fit".into(),
        ));
    }
    if b_reps == 0 || level <= F::zero() || level >= F::one() {
        return Err(Error::InvalidInput("need B >= 1 and level in (0,1)".into()));
    }
    let (p, k, l) = (fit.params.p, fit.params.k, fit.params.l);
    let cache = Arc::new(DesignCache::new(data, basis));
    let alpha_hat = params_to_alpha(&fit.params, basis);

    // Fitted means and residuals under the hard labels.
    let mut means = vec![F::zero(); cache.total_obs];
    let mut resid = vec![F::zero(); cache.total_obs];
    for obs in 0..cache.total_obs {
        let i = cache.subject_of(obs);
        let z = fit.labels[i];
        let mut m = F::zero();
        for j in 0..p {
            let a = &alpha_hat[(j * k + z) * l..(j * k + z + 1) * l];
            if a.iter().any(|&v| v != F::zero()) {
                m = m + linalg::dot(cache.h_block(obs, j), a);
            }
        }
        means[obs] = m;
        resid[obs] = cache.y[obs] - m;
    }

    let omega_hard = Responsibilities::from_labels(&fit.labels, k)?;
    let config = PenaltyConfig {
        kind: fit.chosen.kind,
        lambda: fit.chosen.lambda,
        lambda_per_cluster: None,
        rho: fit.chosen.rho,
        gamma: fl(3.7),
        r: fit.chosen.r,
        scale: F::from_usize(cache.total_obs).unwrap(),
    };
    let support = fit.selected_covariates.clone();

    let grid_len = 101;
    let times: Vec<F> = (0..grid_len)
        .map(|g| F::from_usize(g).unwrap() / F::from_usize(grid_len - 1).unwrap())
        .collect();
    let mut curves: Vec<Vec<F>> = Vec::with_capacity(b_reps); // per replicate, p*K*grid
    let mut dropped = 0usize;

    for b in 0..b_reps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(b as u64).wrapping_mul(0x9E37_79B9).wrapping_add(b as u64));
        // Per-subject Rademacher multipliers.
        let v: Vec<F> = (0..data.n())
            .map(|_| if rng.gen::<bool>() { F::one() } else { -F::one() })
            .collect();
        let y_b: Vec<F> = (0..cache.total_obs)
            .map(|obs| means[obs] + v[cache.subject_of(obs)] * resid[obs])
            .collect();
        let cache_b = Arc::new(cache.with_response(y_b)?);
        let problem = WorkingProblem::from_cache(cache_b, &omega_hard, &fit.params.sigma2)?;
        let res = problem.solve_on(&config, &alpha_hat, &support, fl(1e-6), 2000)?;
        if !res.converged {
            dropped += 1;
            continue;
        }
        let mut curve = vec![F::zero(); p * k * grid_len];
        for j in 0..p {
            for c in 0..k {
                let a = &res.alpha[(j * k + c) * l..(j * k + c + 1) * l];
                if a.iter().all(|&x| x == F::zero()) {
                    continue;
                }
                let bcoef = basis.to_coefficients(a);
                for (g, &t) in times.iter().enumerate() {
                    curve[(j * k + c) * grid_len + g] = basis.eval_coefficient(&bcoef, t);
                }
            }
        }
        curves.push(curve);
    }

    if dropped * 5 > b_reps {
        return Err(Error::Degenerate(format!(
            "{dropped} of {b_reps} bootstrap replicates failed to converge"
        )));
    }
    if curves.is_empty() {
        return Err(Error::Degenerate("no bootstrap replicates survived".into()));
    }

    let m = curves.len();
    let lo_q = (F::one() - level) / fl::<F>(2.0);
    let hi_q = F::one() - lo_q;
    let quantile_index = |q: F| -> usize {
        // Nearest-rank on m values.
        let rank = (q * F::from_usize(m).unwrap()).ceil().to_usize().unwrap_or(1);
        rank.clamp(1, m) - 1
    };
    let (ilo, ihi) = (quantile_index(lo_q), quantile_index(hi_q));
    let mut lower = vec![F::zero(); p * k * grid_len];
    let mut upper = vec![F::zero(); p * k * grid_len];
    let mut scratch = vec![F::zero(); m];
    for idx in 0..p * k * grid_len {
        for (r, c) in curves.iter().enumerate() {
            scratch[r] = c[idx];
        }
        scratch.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lower[idx] = scratch[ilo];
        upper[idx] = scratch[ihi];
    }

    let mut estimate = vec![F::zero(); p * k * grid_len];
    for j in 0..p {
        for c in 0..k {
            let bcoef = fit.params.b_block(j, c);
            if bcoef.iter().all(|&x| x == F::zero()) {
                continue;
            }
            for (g, &t) in times.iter().enumerate() {
                estimate[(j * k + c) * grid_len + g] = basis.eval_coefficient(bcoef, t);
            }
        }
    }

    Ok(BootstrapBands {
        times,
        lower,
        upper,
        estimate,
        p,
        k,
        replicates_used: m,
        dropped,
        level,
        method: "rademacher-wild-support-frozen",
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SubjectRecord;

    fn one_point_dataset(y: f64, x: f64) -> FunctionalDataset<f64> {
        FunctionalDataset::new(
            vec![SubjectRecord {
                id: "a".into(),
                times: vec![0.5],
                y: vec![y],
                x: vec![x],
            }],
            1,
        )
        .unwrap()
    }

    fn tiny_basis() -> SplineBasis<f64> {
        SplineBasis::from_interior_knots(&[0.5], 0.0).unwrap()
    }

    #[test]
    fn loglik_zero_residual_unit_variance() {
        let data = one_point_dataset(0.0, 1.0);
        let basis = tiny_basis();
        let params = MixtureParams::zeros(1, 1, basis.l);
        let ll = composite_loglik(&params, &basis, &data).unwrap();
        assert!((ll - (-0.9189385332046727)).abs() < 1e-12);
    }

    #[test]
    fn loglik_additive_over_subjects() {
        let mut data = one_point_dataset(0.7, 1.0);
        let basis = tiny_basis();
        let params = MixtureParams::zeros(1, 1, basis.l);
        let single = composite_loglik(&params, &basis, &data).unwrap();
        let mut clone = data.subjects[0].clone();
        clone.id = "b".into();
        data.subjects.push(clone);
        let doubled = composite_loglik(&params, &basis, &data).unwrap();
        assert!((doubled - 2.0 * single).abs() < 1e-12);
    }

    #[test]
    fn loglik_degenerate_mixture_equals_single_cluster() {
        let data = one_point_dataset(0.3, 1.0);
        let basis = tiny_basis();
        let mut two = MixtureParams::zeros(1, 2, basis.l);
        two.pi = vec![1.0, 0.0];
        two.sigma2 = vec![1.0, 4.0];
        let one = MixtureParams::zeros(1, 1, basis.l);
        let a = composite_loglik(&two, &basis, &data).unwrap();
        let b = composite_loglik(&one, &basis, &data).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn e_step_single_cluster_is_one() {
        let data = one_point_dataset(1.0, 1.0);
        let basis = tiny_basis();
        let params = MixtureParams::zeros(1, 1, basis.l);
        let omega = e_step(&params, &basis, &data).unwrap();
        assert_eq!(omega.get(0, 0), 1.0);
    }

    #[test]
    fn e_step_identical_clusters_split_evenly() {
        let data = one_point_dataset(0.4, 1.0);
        let basis = tiny_basis();
        let params = MixtureParams::zeros(1, 2, basis.l);
        let omega = e_step(&params, &basis, &data).unwrap();
        assert!((omega.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((omega.get(0, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn e_step_residual_gap_example() {
        // Residuals (0, 2) with unit variances: omega_1 = 1/(1+e^{-2}).
        let basis = tiny_basis();
        let data = one_point_dataset(0.0, 1.0);
        let mut params = MixtureParams::zeros(1, 2, basis.l);
        // Cluster 2 mean = 2 at t = 0.5: constant coefficient function 2
        // (clamped cubic B-splines reproduce constants with equal
        // coefficients).
        for v in params.b_block_mut(0, 1) {
            *v = 2.0;
        }
        let omega = e_step(&params, &basis, &data).unwrap();
        let expect = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((omega.get(0, 0) - expect).abs() < 1e-10);
        assert!((omega.get(0, 1) - (1.0 - expect)).abs() < 1e-10);
    }

    #[test]
    fn sum_mode_single_time_matches_product() {
        // With one observation per subject the two forms coincide.
        let basis = tiny_basis();
        let data = one_point_dataset(0.9, 1.0);
        let mut params = MixtureParams::zeros(1, 2, basis.l);
        for v in params.b_block_mut(0, 1) {
            *v = 1.0;
        }
        let a = e_step_mode(&params, &basis, &data, EStepMode::Product).unwrap();
        let b = e_step_mode(&params, &basis, &data, EStepMode::Sum).unwrap();
        assert!((a.get(0, 0) - b.get(0, 0)).abs() < 1e-12);
    }

    #[test]
    fn pi_update_example() {
        let basis = tiny_basis();
        let data = FunctionalDataset::new(
            vec![
                SubjectRecord {
                    id: "a".into(),
                    times: vec![0.2],
                    y: vec![0.1],
                    x: vec![1.0],
                },
                SubjectRecord {
                    id: "b".into(),
                    times: vec![0.8],
                    y: vec![-0.3],
                    x: vec![1.0],
                },
            ],
            1,
        )
        .unwrap();
        let omega = Responsibilities::new(2, 2, vec![0.3, 0.7, 0.5, 0.5]).unwrap();
        let prev = MixtureParams::zeros(1, 2, basis.l);
        let config = PenaltyConfig::new(PenaltyKind::Fs, 1e6, 1.0, 0.0);
        let params = m_step(&data, &basis, &omega, &prev, &config).unwrap();
        assert!((params.pi[0] - 0.4).abs() < 1e-12);
        assert!((params.pi[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn sigma_update_example() {
        // All-zero covariates keep beta at 0, so residuals equal y:
        // sigma^2 = (1 + 1 + 4 + 0)/4 = 1.5.
        let basis = tiny_basis();
        let data = FunctionalDataset::new(
            vec![SubjectRecord {
                id: "a".into(),
                times: vec![0.1, 0.4, 0.6, 0.9],
                y: vec![1.0, -1.0, 2.0, 0.0],
                x: vec![0.0; 4],
            }],
            1,
        )
        .unwrap();
        let omega = Responsibilities::from_labels(&[0], 1).unwrap();
        let prev = MixtureParams::zeros(1, 1, basis.l);
        let config = PenaltyConfig::new(PenaltyKind::Fs, 0.5, 1.0, 0.0);
        let params = m_step(&data, &basis, &omega, &prev, &config).unwrap();
        assert!((params.sigma2[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn empty_cluster_retains_warm_start() {
        let basis = tiny_basis();
        let data = FunctionalDataset::new(
            vec![
                SubjectRecord {
                    id: "a".into(),
                    times: vec![0.3],
                    y: vec![0.4],
                    x: vec![1.0],
                },
                SubjectRecord {
                    id: "b".into(),
                    times: vec![0.7],
                    y: vec![0.2],
                    x: vec![1.0],
                },
            ],
            1,
        )
        .unwrap();
        let omega = Responsibilities::from_labels(&[0, 0], 2).unwrap();
        let mut prev = MixtureParams::zeros(1, 2, basis.l);
        for v in prev.b_block_mut(0, 1) {
            *v = 3.0;
        }
        prev.sigma2 = vec![1.0, 2.5];
        let config = PenaltyConfig::new(PenaltyKind::Fs, 1e-4, 1.0, 0.0);
        let params = m_step(&data, &basis, &omega, &prev, &config).unwrap();
        assert!((params.pi[0] - 1.0).abs() < 1e-12);
        assert_eq!(params.b_block(0, 1), prev.b_block(0, 1));
        assert_eq!(params.sigma2[1], 2.5);
    }

    fn small_sim(seed: u64, n: usize) -> FunctionalDataset<f64> {
        use rand::prelude::*;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let subjects = (0..n)
            .map(|i| {
                let times: Vec<f64> = (0..5).map(|t| t as f64 / 4.0).collect();
                let shift = if i % 2 == 0 { 1.5 } else { -1.5 };
                let x: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let y: Vec<f64> = times
                    .iter()
                    .enumerate()
                    .map(|(s, &t)| shift * x[s * 2] * (1.0 + t) + 0.1 * rng.gen_range(-1.0..1.0))
                    .collect();
                SubjectRecord {
                    id: format!("s{i}"),
                    times,
                    y,
                    x,
                }
            })
            .collect();
        FunctionalDataset::new(subjects, 2).unwrap()
    }

    #[test]
    fn fit_is_deterministic() {
        let data = small_sim(3, 12);
        let basis = SplineBasis::build(&data.times_union(), 0.01).unwrap();
        let config = PenaltyConfig::new(PenaltyKind::FgsNet, 0.05, 0.5, 0.01);
        let stop = StopSpec {
            max_iter: 15,
            ..StopSpec::default()
        };
        let f1 = fit_fixed(&data, &basis, 2, &config, &InitSpec::random(11), &stop).unwrap();
        let f2 = fit_fixed(&data, &basis, 2, &config, &InitSpec::random(11), &stop).unwrap();
        assert_eq!(f1.labels, f2.labels);
        assert_eq!(f1.params.b, f2.params.b);
        assert_eq!(f1.iterations, f2.iterations);
    }

    #[test]
    fn fit_trace_is_nondecreasing() {
        let data = small_sim(5, 16);
        let basis = SplineBasis::build(&data.times_union(), 0.01).unwrap();
        let config = PenaltyConfig::new(PenaltyKind::FgsNet, 0.05, 0.5, 0.01);
        let stop = StopSpec {
            max_iter: 25,
            ..StopSpec::default()
        };
        let f = fit_fixed(&data, &basis, 2, &config, &InitSpec::random(2), &stop).unwrap();
        for w in f.trace.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-8 * (1.0 + w[0].abs()),
                "trace decreased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn relabeled_init_permutes_fit() {
        let data = small_sim(7, 14);
        let basis = SplineBasis::build(&data.times_union(), 0.01).unwrap();
        let config = PenaltyConfig::new(PenaltyKind::FgsNet, 0.05, 0.5, 0.01);
        let stop = StopSpec {
            max_iter: 20,
            ..StopSpec::default()
        };
        let base = initialize::<f64>(&data, 2, &InitStrategy::Random, 4).unwrap();
        let labels0 = base.hard_labels();
        let swapped: Vec<usize> = labels0.iter().map(|&z| 1 - z).collect();
        let f1 = fit_fixed(&data, &basis, 2, &config, &InitSpec::labels(labels0), &stop).unwrap();
        let f2 = fit_fixed(&data, &basis, 2, &config, &InitSpec::labels(swapped), &stop).unwrap();
        let flipped: Vec<usize> = f2.labels.iter().map(|&z| 1 - z).collect();
        assert_eq!(f1.labels, flipped);
    }

    #[test]
    fn k1_unpenalized_matches_direct_solver() {
        let data = small_sim(9, 10);
        let basis = SplineBasis::build(&data.times_union(), 0.01).unwrap();
        let config = PenaltyConfig::new(PenaltyKind::FgsNet, 0.0, 0.5, 0.01);
        let stop = StopSpec::default();
        let f = fit_fixed(&data, &basis, 1, &config, &InitSpec::random(1), &stop).unwrap();
        // Direct: a single solver call on the same problem.
        let omega = Responsibilities::from_labels(&vec![0; data.n()], 1).unwrap();
        let problem = WorkingProblem::assemble(&data, &basis, &omega, &f.params.sigma2).unwrap();
        let direct = problem
            .solve(&config, &vec![0.0; problem.alpha_len()], 1e-9, 2000)
            .unwrap();
        let fit_alpha = params_to_alpha(&f.params, &basis);
        let denom: f64 = direct.alpha.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: f64 = fit_alpha
            .iter()
            .zip(&direct.alpha)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(diff / denom.max(1e-12) < 1e-4, "relative gap {}", diff / denom);
    }

    #[test]
    fn initialize_is_reproducible_and_covers() {
        let data = small_sim(2, 9);
        let a = initialize::<f64>(&data, 3, &InitStrategy::Random, 42).unwrap();
        let b = initialize::<f64>(&data, 3, &InitStrategy::Random, 42).unwrap();
        assert_eq!(a.omega, b.omega);
        assert!(a.cluster_mass().iter().all(|&m| m > 0.0));
        let km = initialize::<f64>(&data, 2, &InitStrategy::KmeansLite, 7).unwrap();
        assert!(km.cluster_mass().iter().all(|&m| m > 0.0));
        let single = initialize::<f64>(&data, 1, &InitStrategy::Random, 0).unwrap();
        assert!(single.omega.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn bootstrap_single_replicate_and_tight_bands() {
        let data = small_sim(13, 12);
        let basis = SplineBasis::build(&data.times_union(), 0.01).unwrap();
        let config = PenaltyConfig::new(PenaltyKind::FgsNet, 0.02, 0.5, 0.01);
        let stop = StopSpec {
            max_iter: 60,
            ..StopSpec::default()
        };
        let f = fit_fixed(&data, &basis, 2, &config, &InitSpec::random(3), &stop).unwrap();
        assert!(f.converged);
        let bands1 = bootstrap_bands(&f, &data, &basis, 1, 0.1, 5).unwrap();
        // B = 1: lower equals upper (degenerate quantiles).
        assert_eq!(bands1.lower, bands1.upper);
        let bands = bootstrap_bands(&f, &data, &basis, 25, 0.1, 5).unwrap();
        assert_eq!(bands.replicates_used + bands.dropped, 25);
        // Bands bracket: lower <= upper everywhere.
        for (lo, hi) in bands.lower.iter().zip(&bands.upper) {
            assert!(lo <= hi);
        }
    }
}
