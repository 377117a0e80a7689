//! Mixture parameters and posterior cluster weights.

use crate::error::{Error, Result};
use crate::scalar::{fl, Scalar};

/// Lower bound kept on every cluster variance.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Mixture parameters: spline coefficient tensor, cluster variances, and
/// mixing proportions.
///
/// `b` stores the `p x K x L` coefficient tensor row-major in (j, k, l),
/// so `b[(j * K + k) * L ..]` is the coefficient vector of covariate j in
/// cluster k.
#[derive(Clone, Debug)]
pub struct MixtureParams<F> {
    pub k: usize,
    pub p: usize,
    pub l: usize,
    pub b: Vec<F>,
    pub sigma2: Vec<F>,
    pub pi: Vec<F>,
}

impl<F: Scalar> MixtureParams<F> {
    pub fn zeros(p: usize, k: usize, l: usize) -> Self {
        MixtureParams {
            k,
            p,
            l,
            b: vec![F::zero(); p * k * l],
            sigma2: vec![F::one(); k],
            pi: vec![F::one() / F::from_usize(k).unwrap(); k],
        }
    }

    #[inline]
    pub fn b_block(&self, j: usize, k: usize) -> &[F] {
        let start = (j * self.k + k) * self.l;
        &self.b[start..start + self.l]
    }

    #[inline]
    pub fn b_block_mut(&mut self, j: usize, k: usize) -> &mut [F] {
        let start = (j * self.k + k) * self.l;
        &mut self.b[start..start + self.l]
    }

    /// Asserts the structural invariants: pi on the simplex and floored
    /// variances.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.pi.len() != self.k || self.sigma2.len() != self.k {
            return Err(Error::Dimension("mixture parameter shapes".into()));
        }
        if self.b.len() != self.p * self.k * self.l {
            return Err(Error::Dimension("coefficient tensor shape".into()));
        }
        let sum: F = self.pi.iter().copied().sum();
        if (sum - F::one()).abs() > fl::<F>(1e-12) {
            return Err(Error::InvalidInput(format!(
                "mixing proportions sum to {sum}, not 1"
            )));
        }
        for &s in &self.sigma2 {
            if s < fl::<F>(VARIANCE_FLOOR) {
                return Err(Error::InvalidInput("variance below floor".into()));
            }
        }
        for &pi in &self.pi {
            if pi < F::zero() {
                return Err(Error::InvalidInput("negative mixing proportion".into()));
            }
        }
        Ok(())
    }

    /// Renormalizes pi exactly onto the simplex (guards accumulated
    /// round-off after updates).
    pub fn renormalize_pi(&mut self) {
        let sum: F = self.pi.iter().copied().sum();
        if sum > F::zero() {
            for pi in &mut self.pi {
                *pi = *pi / sum;
            }
        }
    }
}

/// The n x K matrix of posterior cluster weights; each row sums to 1.
#[derive(Clone, Debug)]
pub struct Responsibilities<F> {
    pub n: usize,
    pub k: usize,
    pub omega: Vec<F>,
}

impl<F: Scalar> Responsibilities<F> {
    pub fn new(n: usize, k: usize, omega: Vec<F>) -> Result<Self> {
        let resp = Responsibilities { n, k, omega };
        resp.validate()?;
        Ok(resp)
    }

    /// Hard assignments: all mass on `labels[i]`.
    pub fn from_labels(labels: &[usize], k: usize) -> Result<Self> {
        let mut omega = vec![F::zero(); labels.len() * k];
        for (i, &z) in labels.iter().enumerate() {
            if z >= k {
                return Err(Error::InvalidInput(format!("label {z} out of range")));
            }
            omega[i * k + z] = F::one();
        }
        Self::new(labels.len(), k, omega)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[F] {
        &self.omega[i * self.k..(i + 1) * self.k]
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> F {
        self.omega[i * self.k + k]
    }

    pub fn validate(&self) -> Result<()> {
        if self.omega.len() != self.n * self.k {
            return Err(Error::Dimension("responsibility matrix shape".into()));
        }
        let tol = fl::<F>(1e-10);
        for i in 0..self.n {
            let sum: F = self.row(i).iter().copied().sum();
            if (sum - F::one()).abs() > tol {
                return Err(Error::InvalidInput(format!(
                    "responsibility row {i} sums to {sum}"
                )));
            }
            for &w in self.row(i) {
                if w < -tol || w > F::one() + tol {
                    return Err(Error::InvalidInput("responsibility outside [0,1]".into()));
                }
            }
        }
        Ok(())
    }

    /// Row argmax labels.
    pub fn hard_labels(&self) -> Vec<usize> {
        (0..self.n)
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for k in 1..self.k {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    /// Column sums (expected cluster sizes).
    pub fn cluster_mass(&self) -> Vec<F> {
        let mut mass = vec![F::zero(); self.k];
        for i in 0..self.n {
            for k in 0..self.k {
                mass[k] = mass[k] + self.get(i, k);
            }
        }
        mass
    }
}
