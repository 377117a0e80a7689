//! Synthetic data generator: Fourier-basis covariate processes with
//! AR-structured loadings, the nine true coefficient functions, multinomial
//! memberships, and Gaussian-process-plus-noise errors calibrated to a
//! target signal-to-noise ratio.

use crate::dataset::{FunctionalDataset, SubjectRecord};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::sync::OnceLock;

/// Scenario parameters for the synthetic benchmark.
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    /// Number of clusters; the coefficient set is defined for 3.
    pub k: usize,
    /// Cross-covariate dependence in [0, 1).
    pub alpha: f64,
    /// Signal-to-noise ratio.
    pub snr: f64,
    /// Equally spaced observation points per subject.
    pub s: usize,
    /// Mixing proportions.
    pub pi: Vec<f64>,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(n: usize, p: usize, alpha: f64, seed: u64) -> Self {
        SimConfig {
            n,
            p,
            k: 3,
            alpha,
            snr: 12.0,
            s: 10,
            pi: vec![1.0 / 3.0; 3],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidInput("n must be >= 1".into()));
        }
        if self.p < 6 {
            return Err(Error::InvalidInput(
                "p must be >= 6 (six active covariates)".into(),
            ));
        }
        if self.k != 3 {
            return Err(Error::InvalidInput(
                "the coefficient set is defined for K = 3".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidInput("alpha must lie in [0, 1)".into()));
        }
        if self.snr <= 0.0 || self.s < 2 {
            return Err(Error::InvalidInput("need snr > 0 and S >= 2".into()));
        }
        if self.pi.len() != self.k
            || self.pi.iter().any(|&w| w <= 0.0)
            || (self.pi.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(Error::InvalidInput("pi must be a positive simplex".into()));
        }
        Ok(())
    }
}

/// The first four nonconstant Fourier basis functions, orthonormal on
/// [0, 1]: sqrt(2) sin(2 pi t), sqrt(2) cos(2 pi t), sqrt(2) sin(4 pi t),
/// sqrt(2) cos(4 pi t). `l` is 1-based.
pub fn fourier_psi(l: usize, t: f64) -> f64 {
    let s2 = std::f64::consts::SQRT_2;
    let tau = std::f64::consts::TAU;
    match l {
        1 => s2 * (tau * t).sin(),
        2 => s2 * (tau * t).cos(),
        3 => s2 * (2.0 * tau * t).sin(),
        4 => s2 * (2.0 * tau * t).cos(),
        _ => panic!("fourier index out of range"),
    }
}

/// Loadings theta, one p-vector per (subject, basis index); the covariates
/// evaluate lazily at any t.
#[derive(Clone, Debug)]
pub struct CovariateDraw {
    pub n: usize,
    pub p: usize,
    /// Row-major (i, l, j), l in 0..4.
    pub theta: Vec<f64>,
}

impl CovariateDraw {
    /// X_ij(t) = sum_l theta_il,j psi_l(t).
    pub fn eval(&self, i: usize, j: usize, t: f64) -> f64 {
        (0..4)
            .map(|l| self.theta[(i * 4 + l) * self.p + j] * fourier_psi(l + 1, t))
            .sum()
    }
}

/// Draws the loadings: theta_il ~ N(0, Sigma_l) i.i.d. over (i, l), with
/// (Sigma_l)_{jk} = l^{-2} alpha^{|j-k|}, sampled through the AR(1)
/// recursion theta_j = alpha theta_{j-1} + sqrt(1-alpha^2) z_j scaled by
/// 1/l.
pub fn generate_covariates(config: &SimConfig, rng: &mut ChaCha8Rng) -> CovariateDraw {
    let (n, p, alpha) = (config.n, config.p, config.alpha);
    let mut theta = vec![0.0; n * 4 * p];
    let innov = (1.0 - alpha * alpha).sqrt();
    for i in 0..n {
        for l in 0..4 {
            let scale = 1.0 / (l as f64 + 1.0);
            let base = (i * 4 + l) * p;
            let mut prev: f64 = rng.sample(StandardNormal);
            theta[base] = scale * prev;
            for j in 1..p {
                let z: f64 = rng.sample(StandardNormal);
                prev = alpha * prev + innov * z;
                theta[base + j] = scale * prev;
            }
        }
    }
    CovariateDraw { n, p, theta }
}

/// The nine raw coefficient displays f*_jk, with j, k 1-based in {1,2,3}.
pub fn f_star(j: usize, k: usize, t: f64) -> f64 {
    use std::f64::consts::PI;
    match (j, k) {
        (1, 1) => (PI * t / 2.0 + 3.0 * PI / 2.0).sin() - t - 0.5,
        (1, 2) => ((std::f64::consts::TAU * t).cos() - 1.0).powi(2),
        (1, 3) => -f_star(1, 1, t) + 1.0,
        (2, 1) => (std::f64::consts::TAU * t).sin() - t + 0.5,
        (2, 2) => (PI * t / 2.0 + PI).sin(),
        (2, 3) => -f_star(2, 1, t) - 0.5,
        (3, 1) => -(PI * t / 2.0 + 3.0 * PI / 2.0).sin() - t - 0.5,
        (3, 2) => -f_star(1, 2, t),
        (3, 3) => f_star(1, 1, t) + t + 0.5,
        _ => panic!("f_star index out of range"),
    }
}

fn simpson(f: impl Fn(f64) -> f64, panels: usize) -> f64 {
    let h = 1.0 / panels as f64;
    let mut acc = f(0.0) + f(1.0);
    for k in 1..panels {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(h * k as f64);
    }
    acc * h / 3.0
}

/// L2 normalization constants ||f*_jk||_2, computed once by fine
/// quadrature.
fn norm_constants() -> &'static [[f64; 3]; 3] {
    static NORMS: OnceLock<[[f64; 3]; 3]> = OnceLock::new();
    NORMS.get_or_init(|| {
        let mut out = [[0.0; 3]; 3];
        for (j, row) in out.iter_mut().enumerate() {
            for (k, cell) in row.iter_mut().enumerate() {
                *cell = simpson(|t| f_star(j + 1, k + 1, t).powi(2), 10_000).sqrt();
            }
        }
        out
    })
}

/// The normalized function f_jk = f*_jk / ||f*_jk||_2, j, k 1-based.
pub fn f_normalized(j: usize, k: usize, t: f64) -> f64 {
    f_star(j, k, t) / norm_constants()[j - 1][k - 1]
}

/// True coefficient beta_jk(t) with 0-based covariate j and cluster k:
/// covariates (0,1) carry f_1k, (2,3) f_2k, (4,5) f_3k, the rest are 0.
pub fn beta_true(j: usize, k: usize, t: f64) -> f64 {
    match j {
        0 | 1 => f_normalized(1, k + 1, t),
        2 | 3 => f_normalized(2, k + 1, t),
        4 | 5 => f_normalized(3, k + 1, t),
        _ => 0.0,
    }
}

/// Evaluates the full p x 3 coefficient table on a grid, row-major
/// (j, k, grid point).
pub fn true_coefficients(p: usize, t_grid: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(p * 3 * t_grid.len());
    for j in 0..p {
        for k in 0..3 {
            for &t in t_grid {
                out.push(beta_true(j, k, t));
            }
        }
    }
    out
}

/// A generated dataset with its ground truth.
#[derive(Clone, Debug)]
pub struct SimData {
    pub data: FunctionalDataset<f64>,
    pub labels: Vec<usize>,
    pub sigma2: Vec<f64>,
    /// Realized mean integrated squared signal (sigma2 = energy / snr).
    pub mean_signal_energy: f64,
    pub covariates: CovariateDraw,
}

/// Covariates active in the truth (0-based).
pub fn true_active_set() -> Vec<usize> {
    (0..6).collect()
}

/// Draws one correlated error vector on the grid: a Gaussian process with
/// covariance sigma2/2 * exp(-|t1-t2|) plus white measurement noise of
/// variance sigma2/2 at each point.
pub fn gp_errors(times: &[f64], sigma2: f64, chol: &Mat<f64>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = times.len();
    let z: Vec<f64> = (0..s).map(|_| rng.sample(StandardNormal)).collect();
    // chol is the upper factor of exp(-|t1-t2|): use R^T z for a draw.
    let mut gp = vec![0.0; s];
    for a in 0..s {
        let mut acc = 0.0;
        for b in 0..=a {
            acc += chol[(b, a)] * z[b];
        }
        gp[a] = acc;
    }
    let gp_scale = (sigma2 / 2.0).sqrt();
    let noise_scale = (sigma2 / 2.0).sqrt();
    (0..s)
        .map(|a| gp_scale * gp[a] + noise_scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Upper Cholesky factor of the exponential correlation matrix on a grid.
pub fn exp_corr_cholesky(times: &[f64]) -> Result<Mat<f64>> {
    let s = times.len();
    let corr = Mat::from_fn(s, s, |a, b| (-(times[a] - times[b]).abs()).exp());
    linalg::cholesky_upper(&corr)
}

/// Generates the full synthetic dataset.
pub fn generate_dataset(config: &SimConfig) -> Result<SimData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let covariates = generate_covariates(config, &mut rng);

    // Memberships.
    let labels: Vec<usize> = (0..config.n)
        .map(|_| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (k, &w) in config.pi.iter().enumerate() {
                acc += w;
                if u < acc {
                    return k;
                }
            }
            config.k - 1
        })
        .collect();

    // Mean integrated squared signal over the realized sample, by
    // Simpson quadrature of the smooth trigonometric integrand.
    let mut energy = 0.0;
    for i in 0..config.n {
        let z = labels[i];
        energy += simpson(
            |t| {
                let s: f64 = (0..6)
                    .map(|j| covariates.eval(i, j, t) * beta_true(j, z, t))
                    .sum();
                s * s
            },
            400,
        );
    }
    energy /= config.n as f64;
    if energy <= 0.0 {
        return Err(Error::Degenerate(
            "zero realized signal energy; sigma2 undefined".into(),
        ));
    }
    let sigma2_val = energy / config.snr;
    let sigma2 = vec![sigma2_val; config.k];

    let times: Vec<f64> = (0..config.s)
        .map(|s| s as f64 / (config.s - 1) as f64)
        .collect();
    let chol = exp_corr_cholesky(&times)?;

    let mut subjects = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let z = labels[i];
        let eps = gp_errors(&times, sigma2[z], &chol, &mut rng);
        let mut x = Vec::with_capacity(config.s * config.p);
        let mut y = Vec::with_capacity(config.s);
        for (s, &t) in times.iter().enumerate() {
            let mut signal = 0.0;
            for j in 0..config.p {
                let xv = covariates.eval(i, j, t);
                x.push(xv);
                signal += xv * beta_true(j, z, t);
            }
            y.push(signal + eps[s]);
        }
        subjects.push(SubjectRecord {
            id: format!("subj{i:05}"),
            times: times.clone(),
            y,
            x,
        });
    }
    let data = FunctionalDataset::new(subjects, config.p)?;
    Ok(SimData {
        data,
        labels,
        sigma2,
        mean_signal_energy: energy,
        covariates,
    })
}
