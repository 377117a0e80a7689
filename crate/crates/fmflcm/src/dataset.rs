//! Per-subject functional observations on a finite time grid.

use crate::error::{Error, Result};
use crate::scalar::{fl, Scalar};

/// One subject's observations: an increasing time grid in [0,1], the
/// response at each time, and the p covariate values at each time.
#[derive(Clone, Debug)]
pub struct SubjectRecord<F> {
    pub id: String,
    pub times: Vec<F>,
    pub y: Vec<F>,
    /// Row-major `times.len() x p` covariate values.
    pub x: Vec<F>,
}

impl<F: Scalar> SubjectRecord<F> {
    /// Covariate row at observation `s`.
    #[inline]
    pub fn x_row(&self, s: usize, p: usize) -> &[F] {
        &self.x[s * p..(s + 1) * p]
    }
}

/// A functional dataset: n subjects sharing covariate dimension p, with
/// times rescaled to [0,1].
#[derive(Clone, Debug)]
pub struct FunctionalDataset<F> {
    pub subjects: Vec<SubjectRecord<F>>,
    pub p: usize,
}

impl<F: Scalar> FunctionalDataset<F> {
    pub fn new(subjects: Vec<SubjectRecord<F>>, p: usize) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::InvalidInput("dataset needs at least one subject".into()));
        }
        if p == 0 {
            return Err(Error::InvalidInput("covariate count p must be >= 1".into()));
        }
        let eps = fl::<F>(1e-12);
        for subj in &subjects {
            let s = subj.times.len();
            if s == 0 {
                return Err(Error::InvalidInput(format!(
                    "subject {} has no observations",
                    subj.id
                )));
            }
            if subj.y.len() != s || subj.x.len() != s * p {
                return Err(Error::Dimension(format!(
                    "subject {}: expected {} responses and {} covariate cells, got {} and {}",
                    subj.id,
                    s,
                    s * p,
                    subj.y.len(),
                    subj.x.len()
                )));
            }
            for w in subj.times.windows(2) {
                if w[1] <= w[0] {
                    return Err(Error::InvalidInput(format!(
                        "subject {}: times must be strictly increasing",
                        subj.id
                    )));
                }
            }
            for &t in &subj.times {
                if t < -eps || t > F::one() + eps {
                    return Err(Error::InvalidInput(format!(
                        "subject {}: time outside [0,1]",
                        subj.id
                    )));
                }
            }
            for &v in subj.y.iter().chain(subj.x.iter()).chain(subj.times.iter()) {
                if !v.is_finite() {
                    return Err(Error::NonFinite("dataset"));
                }
            }
        }
        Ok(FunctionalDataset { subjects, p })
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    /// Total observation count over all subjects.
    pub fn total_observations(&self) -> usize {
        self.subjects.iter().map(|s| s.times.len()).sum()
    }

    /// Sorted union of all observation times.
    pub fn times_union(&self) -> Vec<F> {
        let mut all: Vec<F> = self
            .subjects
            .iter()
            .flat_map(|s| s.times.iter().copied())
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all.dedup_by(|a, b| (*a - *b).abs() <= fl::<F>(1e-12));
        all
    }
}
