//! Block (group) coordinate descent for the penalized weighted least-squares
//! problem of the M-step, in the norm-preserving alpha coordinates.
//!
//! The weighted quadratic loss is block-separable across clusters; FGS-Net
//! couples clusters only through its stacked groups. SCAD-type groups are
//! updated by majorized proximal steps, RP groups by exact ridge solves.

use crate::basis::SplineBasis;
use crate::dataset::FunctionalDataset;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::params::Responsibilities;
use crate::penalty::{self, PenaltyConfig, PenaltyKind};
use crate::scalar::{fl, Scalar};
use std::sync::Arc;

/// Default inner tolerance on the max coefficient change.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Default sweep budget.
pub const DEFAULT_MAX_SWEEPS: usize = 500;
/// Largest stacked dimension p*L for which the per-cluster cross-Gram is
/// materialized; above this, sweeps fall back to residual scans.
const CROSS_GRAM_MAX_DIM: usize = 1024;
/// Iteration cap for the majorize-minimize loop inside one block update.
/// Every MM step descends, so truncation trades block exactness for speed
/// while the outer sweeps retain the descent certificate.
const INNER_ITER_CAP: usize = 100;

/// Design quantities that depend only on (data, basis): transformed
/// covariate blocks, stacked responses, and per-(subject, covariate) Gram
/// contributions. Shared across M-steps of one fit.
#[derive(Debug)]
pub struct DesignCache<F> {
    pub n: usize,
    pub p: usize,
    pub l: usize,
    pub total_obs: usize,
    /// h blocks, row-major by (observation, covariate, l):
    /// h_ij(t_is) = X_ij(t_is) * D^{-T} Psi(t_is).
    h: Vec<F>,
    /// Stacked responses, one per observation.
    pub y: Vec<F>,
    /// Subject index of each stacked observation.
    obs_subject: Vec<usize>,
    /// A_ij = sum_s h_ij h_ij^T per (subject, covariate), index i*p + j.
    a: Vec<Mat<F>>,
    /// Roughness quadratic form in alpha coordinates: D^{-T} R D^{-1}.
    pub rp_q: Mat<F>,
}

impl<F: Scalar> DesignCache<F> {
    pub fn new(data: &FunctionalDataset<F>, basis: &SplineBasis<F>) -> Self {
        let n = data.n();
        let p = data.p;
        let l = basis.l;
        let total_obs = data.total_observations();
        let mut h = vec![F::zero(); total_obs * p * l];
        let mut y = Vec::with_capacity(total_obs);
        let mut obs_subject = Vec::with_capacity(total_obs);
        let d_inv_t = basis.d_inv.transpose();
        let mut a = vec![Mat::zeros(l, l); n * p];

        let mut obs = 0;
        for (i, subj) in data.subjects.iter().enumerate() {
            for (s, &t) in subj.times.iter().enumerate() {
                let u = d_inv_t.matvec(&basis.values(t));
                let x_row = subj.x_row(s, p);
                for j in 0..p {
                    let xj = x_row[j];
                    let hv = &mut h[(obs * p + j) * l..(obs * p + j) * l + l];
                    for (hvl, &ul) in hv.iter_mut().zip(&u) {
                        *hvl = xj * ul;
                    }
                    let aij = &mut a[i * p + j];
                    for r in 0..l {
                        let hr = hv[r];
                        if hr == F::zero() {
                            continue;
                        }
                        for c in 0..l {
                            aij[(r, c)] = aij[(r, c)] + hr * hv[c];
                        }
                    }
                }
                y.push(subj.y[s]);
                obs_subject.push(i);
                obs += 1;
            }
        }

        let rp_q = d_inv_t.matmul(&basis.roughness).matmul(&basis.d_inv);
        DesignCache {
            n,
            p,
            l,
            total_obs,
            h,
            y,
            obs_subject,
            a,
            rp_q,
        }
    }

    /// Same design with a different stacked response (bootstrap refits).
    pub fn with_response(&self, y: Vec<F>) -> Result<Self> {
        if y.len() != self.total_obs {
            return Err(Error::Dimension("replacement response length".into()));
        }
        Ok(DesignCache {
            n: self.n,
            p: self.p,
            l: self.l,
            total_obs: self.total_obs,
            h: self.h.clone(),
            y,
            obs_subject: self.obs_subject.clone(),
            a: self.a.clone(),
            rp_q: self.rp_q.clone(),
        })
    }

    #[inline]
    pub fn h_block(&self, obs: usize, j: usize) -> &[F] {
        &self.h[(obs * self.p + j) * self.l..(obs * self.p + j + 1) * self.l]
    }

    /// Subject index of a stacked observation (subjects appear in dataset
    /// order, observations in time order).
    #[inline]
    pub fn subject_of(&self, obs: usize) -> usize {
        self.obs_subject[obs]
    }
}

/// Per-solve sweep bookkeeping: the residual matrix, or the maintained
/// negative-gradient vector backed by the cross-Gram.
enum SweepState<F> {
    Residual(Vec<F>),
    Gram(Vec<F>),
}

/// Outcome of one solver call.
#[derive(Clone, Debug)]
pub struct SolveResult<F> {
    pub alpha: Vec<F>,
    pub sweeps: usize,
    pub converged: bool,
}

/// One M-step's weighted problem: the shared design plus the current
/// responsibility/variance weights and the per-group curvature cache.
#[derive(Debug)]
pub struct WorkingProblem<F> {
    pub cache: Arc<DesignCache<F>>,
    pub k: usize,
    /// w_ik = omega_ik / sigma_k^2, row-major n x K.
    pub weights: Vec<F>,
    /// Per-(j,k) Gram operator sum_i w_ik A_ij, index j*K + k.
    pub group_gram: Vec<Mat<F>>,
    /// Majorization constant per (j,k): largest eigenvalue of the group Gram.
    pub nu: Vec<F>,
    /// Per-cluster stacked cross-Gram over (covariate, basis) coordinates,
    /// (p*L) x (p*L); lets sweeps maintain the gradient without scanning
    /// observations. Only materialized for moderate p*L.
    cross: Option<Vec<Mat<F>>>,
}

impl<F: Scalar> WorkingProblem<F> {
    pub fn assemble(
        data: &FunctionalDataset<F>,
        basis: &SplineBasis<F>,
        omega: &Responsibilities<F>,
        sigma2: &[F],
    ) -> Result<Self> {
        let cache = Arc::new(DesignCache::new(data, basis));
        Self::from_cache(cache, omega, sigma2)
    }

    pub fn from_cache(
        cache: Arc<DesignCache<F>>,
        omega: &Responsibilities<F>,
        sigma2: &[F],
    ) -> Result<Self> {
        let k = omega.k;
        if omega.n != cache.n {
            return Err(Error::Dimension("responsibilities vs dataset".into()));
        }
        if sigma2.len() != k {
            return Err(Error::Dimension("sigma2 length vs cluster count".into()));
        }
        let mut weights = vec![F::zero(); cache.n * k];
        for i in 0..cache.n {
            for c in 0..k {
                let w = omega.get(i, c) / sigma2[c];
                if w < F::zero() || !w.is_finite() {
                    return Err(Error::NonFinite("observation weights"));
                }
                weights[i * k + c] = w;
            }
        }

        let (p, l) = (cache.p, cache.l);
        let mut group_gram = vec![Mat::zeros(l, l); p * k];
        for i in 0..cache.n {
            for c in 0..k {
                let w = weights[i * k + c];
                if w == F::zero() {
                    continue;
                }
                for j in 0..p {
                    let aij = &cache.a[i * p + j];
                    let g = &mut group_gram[j * k + c];
                    for idx in 0..l * l {
                        g.data[idx] = g.data[idx] + w * aij.data[idx];
                    }
                }
            }
        }
        let nu = group_gram
            .iter()
            .map(|g| {
                let lam = linalg::largest_eigenvalue(g, fl(1e-6), 1000);
                lam * fl::<F>(1.0 + 1e-6)
            })
            .collect();

        let pl = p * l;
        let cross = if pl <= CROSS_GRAM_MAX_DIM {
            let mut mats = vec![Mat::zeros(pl, pl); k];
            // Per-subject accumulation of sum_s h h^T (cluster-independent
            // within a subject), then one weighted add per cluster.
            let mut subj_acc = Mat::zeros(pl, pl);
            let mut obs = 0;
            for i in 0..cache.n {
                for v in subj_acc.data.iter_mut() {
                    *v = F::zero();
                }
                while obs < cache.total_obs && cache.obs_subject[obs] == i {
                    let h = &cache.h[obs * pl..(obs + 1) * pl];
                    for r in 0..pl {
                        let hr = h[r];
                        if hr == F::zero() {
                            continue;
                        }
                        let row = &mut subj_acc.data[r * pl..(r + 1) * pl];
                        for (dst, &hv) in row.iter_mut().zip(h) {
                            *dst = *dst + hr * hv;
                        }
                    }
                    obs += 1;
                }
                for c in 0..k {
                    let w = weights[i * k + c];
                    if w == F::zero() {
                        continue;
                    }
                    let m = &mut mats[c];
                    for (dst, &src) in m.data.iter_mut().zip(&subj_acc.data) {
                        *dst = *dst + w * src;
                    }
                }
            }
            Some(mats)
        } else {
            None
        };

        Ok(WorkingProblem {
            cache,
            k,
            weights,
            group_gram,
            nu,
            cross,
        })
    }

    /// Forces residual-scan sweeps even when the cross-Gram would fit;
    /// used to cross-check the two sweep implementations.
    pub fn disable_cross_gram(&mut self) {
        self.cross = None;
    }

    pub fn p(&self) -> usize {
        self.cache.p
    }

    pub fn l(&self) -> usize {
        self.cache.l
    }

    /// Alpha tensor length: p * K * L.
    pub fn alpha_len(&self) -> usize {
        self.cache.p * self.k * self.cache.l
    }

    #[inline]
    fn alpha_block<'a>(&self, alpha: &'a [F], j: usize, c: usize) -> &'a [F] {
        let l = self.cache.l;
        &alpha[(j * self.k + c) * l..(j * self.k + c + 1) * l]
    }

    /// Residuals r_{obs,k} = y_obs - sum_j h_obs_j^T alpha_jk, row-major by
    /// observation.
    pub fn residuals(&self, alpha: &[F]) -> Vec<F> {
        let (p, l, k) = (self.cache.p, self.cache.l, self.k);
        let mut r = vec![F::zero(); self.cache.total_obs * k];
        for obs in 0..self.cache.total_obs {
            for c in 0..k {
                r[obs * k + c] = self.cache.y[obs];
            }
        }
        for j in 0..p {
            for c in 0..k {
                let a = self.alpha_block(alpha, j, c);
                if a.iter().all(|&x| x == F::zero()) {
                    continue;
                }
                for obs in 0..self.cache.total_obs {
                    let h = &self.cache.h[(obs * p + j) * l..(obs * p + j + 1) * l];
                    r[obs * k + c] = r[obs * k + c] - linalg::dot(h, a);
                }
            }
        }
        r
    }

    /// Weighted half sum of squared residuals (the smooth loss up to
    /// constants independent of alpha).
    pub fn loss(&self, residuals: &[F]) -> F {
        let k = self.k;
        let mut acc = F::zero();
        for obs in 0..self.cache.total_obs {
            let i = self.cache.obs_subject[obs];
            for c in 0..k {
                let r = residuals[obs * k + c];
                acc = acc + self.weights[i * k + c] * r * r;
            }
        }
        acc / fl::<F>(2.0)
    }

    /// Penalized objective: smooth loss plus penalty value.
    pub fn objective(&self, config: &PenaltyConfig<F>, alpha: &[F]) -> Result<F> {
        let r = self.residuals(alpha);
        let pen = penalty::penalty_value(
            config,
            self.cache.p,
            self.k,
            self.cache.l,
            alpha,
            Some(&self.cache.rp_q),
        )?;
        Ok(self.loss(&r) + pen)
    }

    /// Negative smooth gradient accumulation: fills `out` (length L) with
    /// -dLoss/d alpha_jc = sum_obs w h r.
    fn neg_gradient_block(&self, residuals: &[F], j: usize, c: usize, out: &mut [F]) {
        let (p, l, k) = (self.cache.p, self.cache.l, self.k);
        for o in out.iter_mut() {
            *o = F::zero();
        }
        for obs in 0..self.cache.total_obs {
            let i = self.cache.obs_subject[obs];
            let w = self.weights[i * k + c];
            if w == F::zero() {
                continue;
            }
            let wr = w * residuals[obs * k + c];
            if wr == F::zero() {
                continue;
            }
            let h = &self.cache.h[(obs * p + j) * l..(obs * p + j + 1) * l];
            for (ol, &hl) in out.iter_mut().zip(h) {
                *ol = *ol + wr * hl;
            }
        }
    }

    /// Applies a block change to the residual matrix.
    fn apply_block_delta(&self, residuals: &mut [F], j: usize, c: usize, delta: &[F]) {
        let (p, l, k) = (self.cache.p, self.cache.l, self.k);
        for obs in 0..self.cache.total_obs {
            let h = &self.cache.h[(obs * p + j) * l..(obs * p + j + 1) * l];
            residuals[obs * k + c] = residuals[obs * k + c] - linalg::dot(h, delta);
        }
    }

    /// Solves the penalized problem by cyclic group descent with an
    /// active-set strategy: full passes establish the working set, inner
    /// passes iterate it to tolerance.
    pub fn solve(
        &self,
        config: &PenaltyConfig<F>,
        alpha0: &[F],
        tol: F,
        max_sweeps: usize,
    ) -> Result<SolveResult<F>> {
        config.validate()?;
        if alpha0.len() != self.alpha_len() {
            return Err(Error::Dimension("warm start length".into()));
        }
        if alpha0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("solver warm start"));
        }
        let mut alpha = alpha0.to_vec();
        let mut state = self.initial_state(&alpha);
        let mut sweeps = 0;
        let mut converged = false;

        #[cfg(debug_assertions)]
        let mut prev_obj = self.objective(config, &alpha)?;

        let p = self.cache.p;
        let group_is_active = |alpha: &[F], j: usize, this: &Self| -> bool {
            (0..this.k).any(|c| this.alpha_block(alpha, j, c).iter().any(|&x| x != F::zero()))
        };

        while sweeps < max_sweeps {
            // Full pass over every group.
            let full_change = self.sweep(config, &mut alpha, &mut state, None)?;
            sweeps += 1;
            #[cfg(debug_assertions)]
            {
                let obj = self.objective(config, &alpha)?;
                debug_assert!(
                    obj <= prev_obj + fl::<F>(1e-10) * (F::one() + prev_obj.abs()),
                    "objective increased during sweep"
                );
                prev_obj = obj;
            }
            if full_change < tol {
                converged = true;
                break;
            }
            // Iterate the active set until it stabilizes.
            let active: Vec<usize> =
                (0..p).filter(|&j| group_is_active(&alpha, j, self)).collect();
            while sweeps < max_sweeps {
                let change = self.sweep(config, &mut alpha, &mut state, Some(&active))?;
                sweeps += 1;
                if change < tol {
                    break;
                }
            }
        }
        Ok(SolveResult {
            alpha,
            sweeps,
            converged,
        })
    }

    /// Solves while only visiting the listed covariates; groups outside the
    /// list stay at their warm-start values (support-frozen refits).
    pub fn solve_on(
        &self,
        config: &PenaltyConfig<F>,
        alpha0: &[F],
        covariates: &[usize],
        tol: F,
        max_sweeps: usize,
    ) -> Result<SolveResult<F>> {
        config.validate()?;
        if alpha0.len() != self.alpha_len() {
            return Err(Error::Dimension("warm start length".into()));
        }
        let mut alpha = alpha0.to_vec();
        let mut state = self.initial_state(&alpha);
        let mut sweeps = 0;
        let mut converged = false;
        while sweeps < max_sweeps {
            let change = self.sweep(config, &mut alpha, &mut state, Some(covariates))?;
            sweeps += 1;
            if change < tol {
                converged = true;
                break;
            }
        }
        Ok(SolveResult {
            alpha,
            sweeps,
            converged,
        })
    }

    /// Sweep bookkeeping: either the residual matrix (scanned per block)
    /// or the maintained negative-gradient vector (updated via the
    /// cross-Gram).
    fn initial_state(&self, alpha: &[F]) -> SweepState<F> {
        if self.cross.is_some() {
            SweepState::Gram(self.neg_gradient_all(alpha))
        } else {
            SweepState::Residual(self.residuals(alpha))
        }
    }

    /// Negative smooth gradient for every (j, c) block, alpha layout.
    fn neg_gradient_all(&self, alpha: &[F]) -> Vec<F> {
        let (p, l, k) = (self.cache.p, self.cache.l, self.k);
        let residuals = self.residuals(alpha);
        let mut g = vec![F::zero(); p * k * l];
        let mut grad = vec![F::zero(); l];
        for j in 0..p {
            for c in 0..k {
                self.neg_gradient_block(&residuals, j, c, &mut grad);
                g[(j * k + c) * l..(j * k + c + 1) * l].copy_from_slice(&grad);
            }
        }
        g
    }

    /// After block (j_src, c) moved by `delta`, refresh the maintained
    /// gradient of every block in cluster c through the cross-Gram.
    fn gram_gradient_update(&self, g: &mut [F], c: usize, j_src: usize, delta: &[F]) {
        let (p, l, k) = (self.cache.p, self.cache.l, self.k);
        let pl = p * l;
        let cross = &self.cross.as_ref().expect("cross gram present")[c];
        for j2 in 0..p {
            for r in 0..l {
                let base = (j2 * l + r) * pl + j_src * l;
                let row = &cross.data[base..base + l];
                let mut acc = F::zero();
                for t in 0..l {
                    acc = acc + row[t] * delta[t];
                }
                let gi = (j2 * k + c) * l + r;
                g[gi] = g[gi] - acc;
            }
        }
    }

    fn sweep(
        &self,
        config: &PenaltyConfig<F>,
        alpha: &mut [F],
        state: &mut SweepState<F>,
        covariates: Option<&[usize]>,
    ) -> Result<F> {
        match state {
            SweepState::Residual(residuals) => {
                self.sweep_resid(config, alpha, residuals, covariates)
            }
            SweepState::Gram(g) => self.sweep_gram(config, alpha, g, covariates),
        }
    }

    /// One gram-mode pass: identical update order and block subproblems as
    /// the residual-mode sweep, with gradients read from the maintained
    /// vector instead of observation scans.
    fn sweep_gram(
        &self,
        config: &PenaltyConfig<F>,
        alpha: &mut [F],
        g: &mut [F],
        covariates: Option<&[usize]>,
    ) -> Result<F> {
        let (l, k) = (self.cache.l, self.k);
        let tiny = fl::<F>(1e-12);
        let mut max_change = F::zero();
        let all: Vec<usize>;
        let js: &[usize] = match covariates {
            Some(c) => c,
            None => {
                all = (0..self.cache.p).collect();
                &all
            }
        };
        let rho = config.effective_rho();
        let inner_tol = fl::<F>(1e-12);

        for &j in js {
            match config.kind {
                PenaltyKind::FgsNet => {
                    let mut nu = F::zero();
                    for c in 0..k {
                        nu = nu.max(self.nu[j * k + c]);
                    }
                    if nu <= tiny {
                        continue;
                    }
                    let mut a0 = vec![F::zero(); k * l];
                    let mut g0 = vec![F::zero(); k * l];
                    for c in 0..k {
                        let start = (j * k + c) * l;
                        g0[c * l..(c + 1) * l].copy_from_slice(&g[start..start + l]);
                        a0[c * l..(c + 1) * l].copy_from_slice(&alpha[start..start + l]);
                    }
                    let grams: Vec<&Mat<F>> =
                        (0..k).map(|c| &self.group_gram[j * k + c]).collect();
                    let new = block_minimize(
                        &a0,
                        &g0,
                        &grams,
                        nu,
                        config.lambda,
                        rho,
                        config.gamma,
                        config.scale,
                        inner_tol,
                    );
                    for c in 0..k {
                        let start = (j * k + c) * l;
                        let mut delta = vec![F::zero(); l];
                        let mut changed = false;
                        for t in 0..l {
                            let d = new[c * l + t] - alpha[start + t];
                            if d != F::zero() {
                                changed = true;
                            }
                            delta[t] = d;
                            max_change = max_change.max(d.abs());
                        }
                        if changed {
                            alpha[start..start + l].copy_from_slice(&new[c * l..(c + 1) * l]);
                            self.gram_gradient_update(g, c, j, &delta);
                        }
                    }
                }
                PenaltyKind::Fs | PenaltyKind::FsNet => {
                    for c in 0..k {
                        let nu = self.nu[j * k + c];
                        if nu <= tiny {
                            continue;
                        }
                        let start = (j * k + c) * l;
                        let a0 = alpha[start..start + l].to_vec();
                        let g0 = g[start..start + l].to_vec();
                        let new = block_minimize(
                            &a0,
                            &g0,
                            &[&self.group_gram[j * k + c]],
                            nu,
                            config.lambda_k(c),
                            rho,
                            config.gamma,
                            config.scale,
                            inner_tol,
                        );
                        let mut delta = vec![F::zero(); l];
                        let mut changed = false;
                        for t in 0..l {
                            let d = new[t] - alpha[start + t];
                            if d != F::zero() {
                                changed = true;
                            }
                            delta[t] = d;
                            max_change = max_change.max(d.abs());
                        }
                        if changed {
                            alpha[start..start + l].copy_from_slice(&new);
                            self.gram_gradient_update(g, c, j, &delta);
                        }
                    }
                }
                PenaltyKind::Rp => {
                    let two_lam = fl::<F>(2.0) * config.scale * config.lambda;
                    for c in 0..k {
                        let start = (j * k + c) * l;
                        let grad: Vec<F> = g[start..start + l].to_vec();
                        let a_cur = &alpha[start..start + l];
                        let g_mat = &self.group_gram[j * k + c];
                        let mut m = g_mat.clone();
                        let mut scale = F::zero();
                        for t in 0..l {
                            scale = scale.max(m[(t, t)].abs());
                        }
                        let ridge = fl::<F>(1e-12) * (F::one() + scale);
                        for r_i in 0..l {
                            for c_i in 0..l {
                                m[(r_i, c_i)] =
                                    m[(r_i, c_i)] + two_lam * self.cache.rp_q[(r_i, c_i)];
                            }
                            m[(r_i, r_i)] = m[(r_i, r_i)] + ridge;
                        }
                        let q_a = self.cache.rp_q.matvec(a_cur);
                        let rhs: Vec<F> =
                            (0..l).map(|t| grad[t] - two_lam * q_a[t]).collect();
                        let delta = linalg::spd_solve(&m, &rhs)?;
                        let mut changed = false;
                        for t in 0..l {
                            if delta[t] != F::zero() {
                                changed = true;
                            }
                            max_change = max_change.max(delta[t].abs());
                        }
                        if changed {
                            for t in 0..l {
                                alpha[start + t] = alpha[start + t] + delta[t];
                            }
                            self.gram_gradient_update(g, c, j, &delta);
                        }
                    }
                }
            }
        }
        Ok(max_change)
    }

    /// One residual-mode pass over the groups (all of them, or the listed
    /// covariates); returns the max absolute coefficient change.
    fn sweep_resid(
        &self,
        config: &PenaltyConfig<F>,
        alpha: &mut [F],
        residuals: &mut [F],
        covariates: Option<&[usize]>,
    ) -> Result<F> {
        let (l, k) = (self.cache.l, self.k);
        let tiny = fl::<F>(1e-12);
        let mut max_change = F::zero();
        let mut grad = vec![F::zero(); l];
        let all: Vec<usize>;
        let js: &[usize] = match covariates {
            Some(js) => js,
            None => {
                all = (0..self.cache.p).collect();
                &all
            }
        };
        let rho = config.effective_rho();

        // Inner block iterations run on the cached group Gram, no data
        // scan, so they can be tight.
        let inner_tol = fl::<F>(1e-12);

        for &j in js {
            match config.kind {
                PenaltyKind::FgsNet => {
                    // Stacked group over all clusters; majorize by the max
                    // cluster curvature.
                    let mut nu = F::zero();
                    for c in 0..k {
                        nu = nu.max(self.nu[j * k + c]);
                    }
                    if nu <= tiny {
                        continue; // no data weight anywhere for this covariate
                    }
                    let mut a0 = vec![F::zero(); k * l];
                    let mut g0 = vec![F::zero(); k * l];
                    for c in 0..k {
                        self.neg_gradient_block(residuals, j, c, &mut grad);
                        g0[c * l..(c + 1) * l].copy_from_slice(&grad);
                        a0[c * l..(c + 1) * l].copy_from_slice(self.alpha_block(alpha, j, c));
                    }
                    let grams: Vec<&Mat<F>> =
                        (0..k).map(|c| &self.group_gram[j * k + c]).collect();
                    let new = block_minimize(
                        &a0,
                        &g0,
                        &grams,
                        nu,
                        config.lambda,
                        rho,
                        config.gamma,
                        config.scale,
                        inner_tol,
                    );
                    for c in 0..k {
                        let start = (j * k + c) * l;
                        let mut delta = vec![F::zero(); l];
                        let mut changed = false;
                        for t in 0..l {
                            let d = new[c * l + t] - alpha[start + t];
                            if d != F::zero() {
                                changed = true;
                            }
                            delta[t] = d;
                            max_change = max_change.max(d.abs());
                        }
                        if changed {
                            alpha[start..start + l].copy_from_slice(&new[c * l..(c + 1) * l]);
                            self.apply_block_delta(residuals, j, c, &delta);
                        }
                    }
                }
                PenaltyKind::Fs | PenaltyKind::FsNet => {
                    for c in 0..k {
                        let nu = self.nu[j * k + c];
                        if nu <= tiny {
                            continue;
                        }
                        self.neg_gradient_block(residuals, j, c, &mut grad);
                        let start = (j * k + c) * l;
                        let a0 = alpha[start..start + l].to_vec();
                        let new = block_minimize(
                            &a0,
                            &grad,
                            &[&self.group_gram[j * k + c]],
                            nu,
                            config.lambda_k(c),
                            rho,
                            config.gamma,
                            config.scale,
                            inner_tol,
                        );
                        let mut delta = vec![F::zero(); l];
                        let mut changed = false;
                        for t in 0..l {
                            let d = new[t] - alpha[start + t];
                            if d != F::zero() {
                                changed = true;
                            }
                            delta[t] = d;
                            max_change = max_change.max(d.abs());
                        }
                        if changed {
                            alpha[start..start + l].copy_from_slice(&new);
                            self.apply_block_delta(residuals, j, c, &delta);
                        }
                    }
                }
                PenaltyKind::Rp => {
                    // Exact group minimization of the smooth objective:
                    // (G + 2 scale lambda Q) delta = -grad_total.
                    let two_lam = fl::<F>(2.0) * config.scale * config.lambda;
                    for c in 0..k {
                        self.neg_gradient_block(residuals, j, c, &mut grad);
                        let start = (j * k + c) * l;
                        let a_cur = &alpha[start..start + l];
                        let g_mat = &self.group_gram[j * k + c];
                        let mut m = g_mat.clone();
                        let mut scale = F::zero();
                        for t in 0..l {
                            scale = scale.max(m[(t, t)].abs());
                        }
                        let ridge = fl::<F>(1e-12) * (F::one() + scale);
                        for r_i in 0..l {
                            for c_i in 0..l {
                                m[(r_i, c_i)] =
                                    m[(r_i, c_i)] + two_lam * self.cache.rp_q[(r_i, c_i)];
                            }
                            m[(r_i, r_i)] = m[(r_i, r_i)] + ridge;
                        }
                        let q_a = self.cache.rp_q.matvec(a_cur);
                        let rhs: Vec<F> =
                            (0..l).map(|t| grad[t] - two_lam * q_a[t]).collect();
                        let delta = linalg::spd_solve(&m, &rhs)?;
                        let mut changed = false;
                        for t in 0..l {
                            if delta[t] != F::zero() {
                                changed = true;
                            }
                            max_change = max_change.max(delta[t].abs());
                        }
                        if changed {
                            for t in 0..l {
                                alpha[start + t] = alpha[start + t] + delta[t];
                            }
                            self.apply_block_delta(residuals, j, c, &delta);
                        }
                    }
                }
            }
        }
        Ok(max_change)
    }

    /// Stationarity certificate: max over groups of the first-order
    /// residual (0 = exact stationarity).
    pub fn kkt_residual(&self, config: &PenaltyConfig<F>, alpha: &[F]) -> Result<F> {
        if alpha.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kkt input"));
        }
        let residuals = self.residuals(alpha);
        let (l, k) = (self.cache.l, self.k);
        let rho = config.effective_rho();
        let mut worst = F::zero();
        let mut grad = vec![F::zero(); l];
        for j in 0..self.cache.p {
            match config.kind {
                PenaltyKind::FgsNet => {
                    let mut g = vec![F::zero(); k * l];
                    let mut a = vec![F::zero(); k * l];
                    for c in 0..k {
                        self.neg_gradient_block(&residuals, j, c, &mut grad);
                        for t in 0..l {
                            g[c * l + t] = -grad[t];
                            a[c * l + t] = self.alpha_block(alpha, j, c)[t];
                        }
                    }
                    worst = worst.max(self.group_stationarity(
                        &g,
                        &a,
                        config.lambda,
                        rho,
                        config.gamma,
                        config.scale,
                    ));
                }
                PenaltyKind::Fs | PenaltyKind::FsNet => {
                    for c in 0..k {
                        self.neg_gradient_block(&residuals, j, c, &mut grad);
                        let g: Vec<F> = grad.iter().map(|&x| -x).collect();
                        let a = self.alpha_block(alpha, j, c).to_vec();
                        worst = worst.max(self.group_stationarity(
                            &g,
                            &a,
                            config.lambda_k(c),
                            rho,
                            config.gamma,
                            config.scale,
                        ));
                    }
                }
                PenaltyKind::Rp => {
                    let two_lam = fl::<F>(2.0) * config.scale * config.lambda;
                    for c in 0..k {
                        self.neg_gradient_block(&residuals, j, c, &mut grad);
                        let a = self.alpha_block(alpha, j, c);
                        let qa = self.cache.rp_q.matvec(a);
                        let mut sq = F::zero();
                        for t in 0..l {
                            let v = -grad[t] + two_lam * qa[t];
                            sq = sq + v * v;
                        }
                        worst = worst.max(sq.sqrt());
                    }
                }
            }
        }
        Ok(worst)
    }

    /// First-order residual of one SCAD-L2 group.
    fn group_stationarity(&self, g: &[F], a: &[F], lambda: F, rho: F, gamma: F, scale: F) -> F {
        let anorm = linalg::norm2(a);
        if anorm == F::zero() {
            // Zero group is stationary when the gradient norm stays below
            // the activation level scale * rho * lambda.
            (linalg::norm2(g) - scale * rho * lambda).max(F::zero())
        } else {
            let pen_slope = scale
                * (rho * penalty::scad_deriv(anorm, lambda, gamma)
                    + fl::<F>(2.0) * (F::one() - rho) * lambda * anorm);
            let mut sq = F::zero();
            for t in 0..g.len() {
                let v = g[t] + pen_slope * a[t] / anorm;
                sq = sq + v * v;
            }
            sq.sqrt()
        }
    }

    /// Smallest lambda at which the solver returns alpha = 0 from a zero
    /// start: the max group-gradient norm at the origin scaled by the
    /// penalty's activation level.
    pub fn lambda_max(&self, config: &PenaltyConfig<F>) -> Result<F> {
        if self
            .group_gram
            .iter()
            .all(|g| g.data.iter().all(|&x| x == F::zero()))
        {
            return Err(Error::InvalidInput("all-zero design in lambda_max".into()));
        }
        let rho = config.effective_rho();
        let floor = fl::<F>(f64::EPSILON);
        if rho <= F::zero() {
            // No sparsity mechanism; return the floor so a path still exists.
            return Ok(floor);
        }
        let residuals = self.residuals(&vec![F::zero(); self.alpha_len()]);
        let (l, k) = (self.cache.l, self.k);
        let mut grad = vec![F::zero(); l];
        let mut worst = F::zero();
        for j in 0..self.cache.p {
            match config.kind {
                PenaltyKind::FgsNet => {
                    let mut sq = F::zero();
                    for c in 0..k {
                        self.neg_gradient_block(&residuals, j, c, &mut grad);
                        for &gt in &grad {
                            sq = sq + gt * gt;
                        }
                    }
                    worst = worst.max(sq.sqrt());
                }
                _ => {
                    for c in 0..k {
                        self.neg_gradient_block(&residuals, j, c, &mut grad);
                        worst = worst.max(linalg::norm2(&grad));
                    }
                }
            }
        }
        Ok((worst / (rho * config.scale)).max(floor))
    }
}

/// Minimizes the exact one-group objective by inner MM iterations on the
/// cached Gram:
///   sum_c [ (1/2)(a_c-a0_c)^T G_c (a_c-a0_c) - g0_c^T (a_c-a0_c) ]
///   + scale * [ rho * SCAD(||a||) + (1-rho) * lambda * ||a||^2 ],
/// where `g0` is the negative smooth gradient at `a0`. Each step majorizes
/// the quadratic with nu I and applies the group prox (dividing nu by the
/// penalty scale folds the scale into the prox), so the iteration
/// descends; no data scan is needed, which lets block updates run to a
/// tight tolerance.
#[allow(clippy::too_many_arguments)]
fn block_minimize<F: Scalar>(
    a0: &[F],
    g0: &[F],
    grams: &[&Mat<F>],
    nu: F,
    lambda: F,
    rho: F,
    gamma: F,
    scale: F,
    inner_tol: F,
) -> Vec<F> {
    let seg = grams.len();
    let l = a0.len() / seg;
    let mut a = a0.to_vec();
    let mut z = vec![F::zero(); a0.len()];
    for _ in 0..INNER_ITER_CAP {
        for c in 0..seg {
            let gm = grams[c];
            for t in 0..l {
                // G (a - a0) for this segment row.
                let mut gd = F::zero();
                for u in 0..l {
                    gd = gd + gm[(t, u)] * (a[c * l + u] - a0[c * l + u]);
                }
                z[c * l + t] = a[c * l + t] + (g0[c * l + t] - gd) / nu;
            }
        }
        let next = penalty::group_prox(&z, nu / scale, lambda, rho, gamma);
        let mut change = F::zero();
        for t in 0..a.len() {
            change = change.max((next[t] - a[t]).abs());
        }
        a = next;
        if change < inner_tol {
            break;
        }
    }
    a
}
