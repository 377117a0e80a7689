//! SCAD-type penalties (FS, FS-Net, FGS-Net), the roughness-penalty
//! baseline, and the group proximal operator used by the block solver.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::{fl, Scalar};
use serde::{Deserialize, Serialize};

/// Which penalty drives the M-step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyKind {
    /// Functional SCAD: per-(j,k) groups, cluster-variant sparsity.
    Fs,
    /// FS plus an L2 term (elastic-net style).
    FsNet,
    /// Cluster-grouped SCAD-Net: per-j groups stacked over clusters,
    /// cluster-invariant sparsity.
    FgsNet,
    /// Roughness penalty on second derivatives only; no sparsity.
    Rp,
}

impl PenaltyKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fs" => Ok(PenaltyKind::Fs),
            "fs-net" | "fsnet" => Ok(PenaltyKind::FsNet),
            "fgs-net" | "fgsnet" => Ok(PenaltyKind::FgsNet),
            "rp" => Ok(PenaltyKind::Rp),
            other => Err(Error::InvalidInput(format!("unknown penalty kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PenaltyKind::Fs => "fs",
            PenaltyKind::FsNet => "fs-net",
            PenaltyKind::FgsNet => "fgs-net",
            PenaltyKind::Rp => "rp",
        };
        f.write_str(s)
    }
}

/// Penalty configuration for one fit.
///
/// FS and FS-Net admit per-cluster lambdas; when `lambda_per_cluster` is
/// absent, the single `lambda` is shared across clusters.
#[derive(Clone, Debug)]
pub struct PenaltyConfig<F> {
    pub kind: PenaltyKind,
    pub lambda: F,
    pub lambda_per_cluster: Option<Vec<F>>,
    pub rho: F,
    pub gamma: F,
    pub r: F,
    /// Sample-size multiplier on the penalty (penalized-likelihood
    /// convention: objective = loglik - scale * penalty). The EM driver
    /// sets this to the total observation count; 1 means unscaled.
    pub scale: F,
}

impl<F: Scalar> PenaltyConfig<F> {
    pub fn new(kind: PenaltyKind, lambda: F, rho: F, r: F) -> Self {
        PenaltyConfig {
            kind,
            lambda,
            lambda_per_cluster: None,
            rho,
            gamma: fl(3.7),
            r,
            scale: F::one(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma <= fl(2.0) {
            return Err(Error::InvalidInput("gamma must exceed 2".into()));
        }
        if !(self.scale > F::zero()) {
            return Err(Error::InvalidInput("penalty scale must be positive".into()));
        }
        if self.rho < F::zero() || self.rho > F::one() {
            return Err(Error::InvalidInput("rho must lie in [0,1]".into()));
        }
        if self.lambda < F::zero() || self.r < F::zero() {
            return Err(Error::InvalidInput("lambda and r must be nonnegative".into()));
        }
        if let Some(ls) = &self.lambda_per_cluster {
            if ls.iter().any(|&l| l < F::zero()) {
                return Err(Error::InvalidInput("per-cluster lambda must be >= 0".into()));
            }
        }
        Ok(())
    }

    /// Lambda for cluster k (FS/FS-Net); falls back to the shared value.
    pub fn lambda_k(&self, k: usize) -> F {
        match &self.lambda_per_cluster {
            Some(ls) => ls[k],
            None => self.lambda,
        }
    }

    /// Mixing weight on the SCAD part: FS is pure SCAD, RP has none.
    pub fn effective_rho(&self) -> F {
        match self.kind {
            PenaltyKind::Fs => F::one(),
            PenaltyKind::Rp => F::zero(),
            _ => self.rho,
        }
    }

    pub fn with_lambda(&self, lambda: F) -> Self {
        let mut c = self.clone();
        c.lambda = lambda;
        c.lambda_per_cluster = None;
        c
    }

    pub fn with_scale(&self, scale: F) -> Self {
        let mut c = self.clone();
        c.scale = scale;
        c
    }
}

/// The SCAD penalty value at u >= 0.
pub fn scad<F: Scalar>(u: F, lambda: F, gamma: F) -> F {
    debug_assert!(u >= F::zero());
    if u <= lambda {
        lambda * u
    } else if u < gamma * lambda {
        -(u * u - fl::<F>(2.0) * gamma * lambda * u + lambda * lambda)
            / (fl::<F>(2.0) * (gamma - F::one()))
    } else {
        (gamma + F::one()) * lambda * lambda / fl::<F>(2.0)
    }
}

/// Derivative of the SCAD penalty on u >= 0 (one-sided at the kinks).
pub fn scad_deriv<F: Scalar>(u: F, lambda: F, gamma: F) -> F {
    if u <= lambda {
        lambda
    } else if u < gamma * lambda {
        (gamma * lambda - u) / (gamma - F::one())
    } else {
        F::zero()
    }
}

/// Value of the configured penalty on the alpha tensor laid out as
/// `p x K x L` row-major in (j, k, l).
///
/// For the RP kind the quadratic form matrix `rp_q` (roughness expressed in
/// alpha coordinates) must be supplied.
pub fn penalty_value<F: Scalar>(
    config: &PenaltyConfig<F>,
    p: usize,
    k: usize,
    l: usize,
    alpha: &[F],
    rp_q: Option<&Mat<F>>,
) -> Result<F> {
    if alpha.len() != p * k * l {
        return Err(Error::Dimension("alpha tensor shape".into()));
    }
    let block = |j: usize, c: usize| &alpha[(j * k + c) * l..(j * k + c) * l + l];
    let norm = |v: &[F]| v.iter().fold(F::zero(), |acc, &x| acc + x * x).sqrt();
    let mut total = F::zero();
    match config.kind {
        PenaltyKind::Fs => {
            for j in 0..p {
                for c in 0..k {
                    total = total + scad(norm(block(j, c)), config.lambda_k(c), config.gamma);
                }
            }
        }
        PenaltyKind::FsNet => {
            for j in 0..p {
                for c in 0..k {
                    let u = norm(block(j, c));
                    let lam = config.lambda_k(c);
                    total = total
                        + config.rho * scad(u, lam, config.gamma)
                        + (F::one() - config.rho) * lam * u * u;
                }
            }
        }
        PenaltyKind::FgsNet => {
            for j in 0..p {
                let mut sq = F::zero();
                for c in 0..k {
                    for &x in block(j, c) {
                        sq = sq + x * x;
                    }
                }
                let u = sq.sqrt();
                total = total
                    + config.rho * scad(u, config.lambda, config.gamma)
                    + (F::one() - config.rho) * config.lambda * u * u;
            }
        }
        PenaltyKind::Rp => {
            let q = rp_q.ok_or_else(|| {
                Error::InvalidInput("RP penalty needs the roughness quadratic form".into())
            })?;
            for j in 0..p {
                for c in 0..k {
                    let a = block(j, c);
                    let qa = q.matvec(a);
                    total = total + config.lambda * crate::linalg::dot(a, &qa);
                }
            }
        }
    }
    Ok(total * config.scale)
}

/// Scalar subproblem behind the group proximal operator:
/// minimize over s >= 0 of
///   (nu/2) (s - z)^2 + rho * P_SCAD(s; lambda) + (1 - rho) * lambda * s^2.
///
/// The minimizer is found by enumerating the stationary point of each SCAD
/// branch (clamped to the branch interval) together with the branch
/// endpoints; the SCAD middle branch is concave, so candidate enumeration is
/// required rather than a single closed form.
pub fn scalar_prox<F: Scalar>(z: F, nu: F, lambda: F, rho: F, gamma: F) -> F {
    debug_assert!(nu > F::zero());
    debug_assert!(z >= F::zero());
    if lambda == F::zero() {
        return z;
    }
    let two = fl::<F>(2.0);
    let a = nu + two * (F::one() - rho) * lambda;
    let objective = |s: F| {
        nu / two * (s - z) * (s - z)
            + rho * scad(s, lambda, gamma)
            + (F::one() - rho) * lambda * s * s
    };

    let mut candidates = [F::zero(); 6];
    let mut count = 0;
    let mut push = |s: F| {
        if s.is_finite() && s >= F::zero() {
            candidates[count] = s;
            count += 1;
        }
    };
    push(F::zero());
    // Branch [0, lambda]: stationary point of the convexified objective.
    push(((nu * z - rho * lambda) / a).max(F::zero()).min(lambda));
    // Branch (lambda, gamma*lambda): linear SCAD derivative with negative
    // slope; only a valid stationary point when the denominator is positive.
    let mid_den = a - rho / (gamma - F::one());
    if mid_den > F::zero() {
        let s = (nu * z - rho * gamma * lambda / (gamma - F::one())) / mid_den;
        push(s.max(lambda).min(gamma * lambda));
    }
    push(lambda);
    // Plateau branch: SCAD contributes a constant.
    push((nu * z / a).max(gamma * lambda));
    push(gamma * lambda);

    let mut best = F::zero();
    let mut best_val = objective(F::zero());
    for &s in &candidates[1..count] {
        let v = objective(s);
        if v < best_val {
            best_val = v;
            best = s;
        }
    }
    best
}

/// Group proximal operator: minimizer over a of
///   (nu/2) ||a - z||^2 + rho * P_SCAD(||a||; lambda) + (1-rho) * lambda * ||a||^2.
///
/// Direction-preserving; z = 0 maps to 0.
pub fn group_prox<F: Scalar>(z: &[F], nu: F, lambda: F, rho: F, gamma: F) -> Vec<F> {
    let znorm = crate::linalg::norm2(z);
    if znorm == F::zero() {
        return vec![F::zero(); z.len()];
    }
    let s = scalar_prox(znorm, nu, lambda, rho, gamma);
    if s == F::zero() {
        return vec![F::zero(); z.len()];
    }
    let scale = s / znorm;
    z.iter().map(|&x| x * scale).collect()
}

/// Norm threshold below which the prox maps a group exactly to zero.
///
/// At the origin the subgradient condition gives nu * ||z|| <= rho * lambda;
/// with rho = 0 the penalty has no sparsity and the threshold is 0.
pub fn activation_threshold<F: Scalar>(nu: F, lambda: F, rho: F) -> F {
    rho * lambda / nu
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand::Rng as _;
    use rand_chacha::ChaCha8Rng;

    const GAMMA: f64 = 3.7;

    fn scalar_objective(s: f64, z: f64, nu: f64, lambda: f64, rho: f64) -> f64 {
        nu / 2.0 * (s - z).powi(2) + rho * scad(s, lambda, GAMMA) + (1.0 - rho) * lambda * s * s
    }

    /// Dense grid plus golden-section refinement; the oracle route for the
    /// scalar prox problem.
    fn grid_golden_min(z: f64, nu: f64, lambda: f64, rho: f64) -> f64 {
        let hi = z + GAMMA * lambda + 1.0;
        let m = 4000;
        let mut best_i: usize = 0;
        let mut best_v = f64::INFINITY;
        for i in 0..=m {
            let s = hi * i as f64 / m as f64;
            let v = scalar_objective(s, z, nu, lambda, rho);
            if v < best_v {
                best_v = v;
                best_i = i;
            }
        }
        let mut a = hi * best_i.saturating_sub(1) as f64 / m as f64;
        let mut b = hi * (best_i + 1).min(m) as f64 / m as f64;
        let phi = (5.0f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if scalar_objective(c, z, nu, lambda, rho) < scalar_objective(d, z, nu, lambda, rho) {
                b = d;
            } else {
                a = c;
            }
        }
        let mid = 0.5 * (a + b);
        // Zero competes separately: the grid can miss an exact-zero optimum.
        if scalar_objective(0.0, z, nu, lambda, rho) <= scalar_objective(mid, z, nu, lambda, rho) {
            0.0
        } else {
            mid
        }
    }

    #[test]
    fn scad_first_branch() {
        assert_eq!(scad(0.5, 1.0, GAMMA), 0.5);
    }

    #[test]
    fn scad_middle_branch() {
        // -(4 - 14.8 + 1) / 5.4
        let expected = -(4.0 - 14.8 + 1.0) / 5.4;
        assert!((scad(2.0, 1.0, GAMMA) - expected).abs() < 1e-12);
        assert!((expected - 1.814_814_814_8).abs() < 1e-9);
    }

    #[test]
    fn scad_plateau() {
        assert!((scad(5.0, 1.0, GAMMA) - 2.35).abs() < 1e-12);
        assert_eq!(scad(5.0, 1.0, GAMMA), scad(100.0, 1.0, GAMMA));
    }

    #[test]
    fn scad_derivative_matches_finite_differences() {
        let lambda = 0.8;
        let h = 1e-7;
        // Branch-interior points only; the kinks are one-sided.
        for &u in &[0.2, 0.5, 1.5, 2.0, 2.5, 3.5, 5.0] {
            let fd = (scad(u + h, lambda, GAMMA) - scad(u - h, lambda, GAMMA)) / (2.0 * h);
            assert!(
                (scad_deriv(u, lambda, GAMMA) - fd).abs() < 1e-6,
                "u = {u}"
            );
        }
        assert_eq!(scad_deriv(0.0, 1.0, GAMMA), 1.0);
        assert_eq!(scad_deriv(GAMMA * 1.0 + 0.1, 1.0, GAMMA), 0.0);
    }

    #[test]
    fn penalty_value_zero_alpha() {
        for kind in [PenaltyKind::Fs, PenaltyKind::FsNet, PenaltyKind::FgsNet] {
            let config = PenaltyConfig::new(kind, 1.3, 0.5, 0.1);
            let v = penalty_value(&config, 3, 2, 4, &vec![0.0; 24], None).unwrap();
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn fsnet_with_rho_one_equals_fs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let alpha: Vec<f64> = (0..24).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let fs = PenaltyConfig::new(PenaltyKind::Fs, 0.9, 1.0, 0.0);
        let fsnet = PenaltyConfig::new(PenaltyKind::FsNet, 0.9, 1.0, 0.0);
        let a = penalty_value(&fs, 3, 2, 4, &alpha, None).unwrap();
        let b = penalty_value(&fsnet, 3, 2, 4, &alpha, None).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn fgsnet_example_value() {
        // p=1, K=2, ||alpha_1.|| = 2, lambda=1, rho=0.5:
        // 0.5 * scad(2) + 0.5 * 4.
        let config = PenaltyConfig::new(PenaltyKind::FgsNet, 1.0, 0.5, 0.0);
        let l = 3;
        let mut alpha = vec![0.0; 2 * l];
        alpha[0] = 2.0f64 / 2.0f64.sqrt();
        alpha[l] = 2.0f64 / 2.0f64.sqrt();
        let v = penalty_value(&config, 1, 2, l, &alpha, None).unwrap();
        let expected = 0.5 * scad(2.0, 1.0, GAMMA) + 0.5 * 4.0;
        assert!((v - expected).abs() < 1e-12);
        assert!((expected - 2.907_407_407_4).abs() < 1e-9);
    }

    #[test]
    fn fgsnet_depends_only_on_group_norm() {
        // Random rotations within a group leave the value unchanged.
        let config = PenaltyConfig::new(PenaltyKind::FgsNet, 0.7, 0.4, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 6; // K*L for one group
        let alpha: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let base = penalty_value(&config, 1, 2, 3, &alpha, None).unwrap();
        for _ in 0..20 {
            // Givens rotation in a random coordinate pair.
            let i = rng.gen_range(0..d);
            let mut j = rng.gen_range(0..d);
            while j == i {
                j = rng.gen_range(0..d);
            }
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let mut rotated = alpha.clone();
            rotated[i] = theta.cos() * alpha[i] - theta.sin() * alpha[j];
            rotated[j] = theta.sin() * alpha[i] + theta.cos() * alpha[j];
            let v = penalty_value(&config, 1, 2, 3, &rotated, None).unwrap();
            assert!((v - base).abs() < 1e-12);
        }
    }

    #[test]
    fn prox_zero_maps_to_zero() {
        let out = group_prox(&[0.0, 0.0], 1.0, 2.0, 0.8, GAMMA);
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn prox_identity_when_lambda_zero() {
        let z = vec![1.5, -0.3, 0.2];
        let out = group_prox(&z, 2.0, 0.0, 0.5, GAMMA);
        for (a, b) in out.iter().zip(&z) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn prox_plateau_is_unbiased() {
        // rho=1, nu=1, ||z|| = 5 > gamma*lambda: output unshrunk.
        let z = vec![3.0, 4.0];
        let out = group_prox(&z, 1.0, 1.0, 1.0, GAMMA);
        for (a, b) in out.iter().zip(&z) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn prox_matches_grid_oracle() {
        // 1000 random (z, nu, lambda, rho) draws against the grid +
        // golden-section oracle.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..1000 {
            let z = rng.gen_range(0.0..6.0);
            let nu = rng.gen_range(0.2..4.0);
            let lambda = rng.gen_range(0.0..2.0);
            let rho = rng.gen_range(0.0..1.0);
            let got = scalar_prox(z, nu, lambda, rho, GAMMA);
            let want = grid_golden_min(z, nu, lambda, rho);
            let got_obj = scalar_objective(got, z, nu, lambda, rho);
            let want_obj = scalar_objective(want, z, nu, lambda, rho);
            assert!(
                got_obj <= want_obj + 1e-8,
                "trial {trial}: prox {got} (obj {got_obj}) vs oracle {want} (obj {want_obj})"
            );
        }
    }

    #[test]
    fn prox_first_order_optimality() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let z = rng.gen_range(0.0..5.0);
            let nu = rng.gen_range(0.5..3.0);
            let lambda = rng.gen_range(0.01..1.5);
            let rho = rng.gen_range(0.0..1.0);
            let s = scalar_prox(z, nu, lambda, rho, GAMMA);
            if s > 1e-9 {
                // Interior stationarity away from the kinks.
                let near_kink =
                    (s - lambda).abs() < 1e-7 || (s - GAMMA * lambda).abs() < 1e-7;
                if !near_kink {
                    let grad = nu * (s - z)
                        + rho * scad_deriv(s, lambda, GAMMA)
                        + 2.0 * (1.0 - rho) * lambda * s;
                    assert!(grad.abs() < 1e-8, "grad {grad} at s={s}");
                }
            } else {
                // Zero is optimal iff nu*z below the activation threshold
                // (rho > 0), or z itself is ~0.
                assert!(nu * z <= rho * lambda + 1e-8 || z < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn prox_never_inflates(
            z in 0.0f64..8.0,
            nu in 0.1f64..5.0,
            lambda in 0.0f64..3.0,
            rho in 0.0f64..1.0,
        ) {
            let s = scalar_prox(z, nu, lambda, rho, GAMMA);
            prop_assert!(s <= z + 1e-12);
            prop_assert!(s >= 0.0);
        }

        #[test]
        fn scad_monotone_nondecreasing(
            u1 in 0.0f64..10.0,
            du in 0.0f64..5.0,
            lambda in 0.0f64..2.0,
        ) {
            prop_assert!(scad(u1 + du, lambda, GAMMA) >= scad(u1, lambda, GAMMA) - 1e-12);
        }
    }
}
