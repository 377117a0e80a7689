//! Hyperparameter selection: the lambda path embedded in each M-step,
//! AIC over the (rho, r) grid, and BIC over the number of clusters.

use crate::basis::SplineBasis;
use crate::dataset::FunctionalDataset;
use crate::error::{Error, Result};
use crate::penalty::{PenaltyConfig, PenaltyKind};
use crate::rem::{self, FitResult, InitSpec, LambdaRule, PathScore, StopSpec};
use crate::scalar::{fl, Scalar};
use rayon::prelude::*;

/// Search grids for the tuning procedures.
#[derive(Clone, Debug)]
pub struct TuningGrid<F> {
    /// Lambda path length within each M-step.
    pub lambda_path_length: usize,
    /// Path floor as a fraction of lambda_max.
    pub lambda_floor_frac: F,
    /// Per-M-step lambda selection score.
    pub path_score: PathScore,
    pub rho_grid: Vec<F>,
    pub r_grid: Vec<F>,
    pub k_grid: Vec<usize>,
}

impl<F: Scalar> Default for TuningGrid<F> {
    fn default() -> Self {
        TuningGrid {
            lambda_path_length: 30,
            lambda_floor_frac: fl(0.01),
            path_score: PathScore::Aic,
            rho_grid: vec![fl(0.0), fl(0.25), fl(0.5), fl(0.75), fl(1.0)],
            r_grid: vec![fl(1e-4), fl(1e-2), fl(1.0)],
            k_grid: (1..=5).collect(),
        }
    }
}

impl<F: Scalar> TuningGrid<F> {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_path_length == 0 {
            return Err(Error::InvalidInput("lambda path length must be >= 1".into()));
        }
        if self.lambda_floor_frac <= F::zero() || self.lambda_floor_frac >= F::one() {
            return Err(Error::InvalidInput(
                "lambda floor fraction must lie in (0, 1)".into(),
            ));
        }
        if self.rho_grid.is_empty() || self.r_grid.is_empty() || self.k_grid.is_empty() {
            return Err(Error::InvalidInput("tuning grids must be nonempty".into()));
        }
        if self.rho_grid.iter().any(|&v| v < F::zero() || v > F::one()) {
            return Err(Error::InvalidInput("rho grid values must lie in [0, 1]".into()));
        }
        if self.r_grid.iter().any(|&v| v < F::zero()) {
            return Err(Error::InvalidInput("r grid values must be nonnegative".into()));
        }
        if self.k_grid.iter().any(|&k| k == 0) {
            return Err(Error::InvalidInput("K grid values must be >= 1".into()));
        }
        Ok(())
    }

    pub fn lambda_rule(&self) -> LambdaRule<F> {
        LambdaRule::Path {
            length: self.lambda_path_length,
            floor_frac: self.lambda_floor_frac,
            score: self.path_score,
        }
    }
}

/// Spline basis on the dataset's pooled time grid with roughness weight r.
pub fn basis_for<F: Scalar>(data: &FunctionalDataset<F>, r: F) -> Result<SplineBasis<F>> {
    let mut times: Vec<F> = data
        .subjects
        .iter()
        .flat_map(|s| s.times.iter().copied())
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();
    SplineBasis::build(&times, r)
}

/// Fits with the lambda path active inside each M-step at a fixed
/// (rho, r) cell.
pub fn fit_with_lambda_path<F: Scalar>(
    data: &FunctionalDataset<F>,
    k: usize,
    kind: PenaltyKind,
    rho: F,
    r: F,
    init: &InitSpec,
    stop: &StopSpec<F>,
    grid: &TuningGrid<F>,
) -> Result<FitResult<F>> {
    grid.validate()?;
    if matches!(kind, PenaltyKind::Rp) {
        return Err(Error::InvalidInput(
            "the roughness-only penalty is fit at a fixed lambda, not along a path".into(),
        ));
    }
    let basis = basis_for(data, r)?;
    // The placeholder lambda is replaced by the path machinery.
    let config = PenaltyConfig::new(kind, F::one(), rho, r);
    rem::fit(data, &basis, k, &config, &grid.lambda_rule(), init, stop)
}

/// Re-export of the model degrees of freedom recorded on a finished fit.
pub fn degrees_of_freedom<F: Scalar>(fit: &FitResult<F>) -> F {
    fit.df
}

/// AIC minimization over the (rho, r) grid; cells run in parallel. Ties
/// break toward larger r, then larger rho. Degenerate cells are skipped;
/// if every cell fails, the last error propagates.
pub fn select_rho_r<F: Scalar>(
    data: &FunctionalDataset<F>,
    k: usize,
    kind: PenaltyKind,
    grid: &TuningGrid<F>,
    init: &InitSpec,
    stop: &StopSpec<F>,
) -> Result<(F, F, FitResult<F>)> {
    grid.validate()?;
    let cells: Vec<(F, F)> = grid
        .r_grid
        .iter()
        .flat_map(|&r| grid.rho_grid.iter().map(move |&rho| (rho, r)))
        .collect();
    let fits: Vec<(F, F, Result<FitResult<F>>)> = cells
        .par_iter()
        .map(|&(rho, r)| {
            (
                rho,
                r,
                fit_with_lambda_path(data, k, kind, rho, r, init, stop, grid),
            )
        })
        .collect();
    let mut best: Option<(F, F, FitResult<F>)> = None;
    let mut last_err: Option<Error> = None;
    for (rho, r, outcome) in fits {
        match outcome {
            Err(e) => last_err = Some(e),
            Ok(fit) => {
                let replace = match &best {
                    None => true,
                    Some((brho, br, bfit)) => {
                        fit.aic < bfit.aic
                            || (fit.aic == bfit.aic
                                && (r > *br || (r == *br && rho > *brho)))
                    }
                };
                if replace {
                    best = Some((rho, r, fit));
                }
            }
        }
    }
    best.ok_or_else(|| {
        last_err.unwrap_or_else(|| Error::Degenerate("every tuning cell failed".into()))
    })
}

/// BIC minimization over the K grid; each K is tuned over (rho, r) first.
/// Ties break toward smaller K.
pub fn select_k<F: Scalar>(
    data: &FunctionalDataset<F>,
    kind: PenaltyKind,
    grid: &TuningGrid<F>,
    init: &InitSpec,
    stop: &StopSpec<F>,
) -> Result<(usize, FitResult<F>)> {
    grid.validate()?;
    let mut best: Option<(usize, FitResult<F>)> = None;
    let mut last_err: Option<Error> = None;
    let mut ks = grid.k_grid.clone();
    ks.sort_unstable();
    for k in ks {
        match select_rho_r(data, k, kind, grid, init, stop) {
            Err(e) => last_err = Some(e),
            Ok((_, _, fit)) => {
                let replace = match &best {
                    None => true,
                    // Strict improvement only: ascending order makes ties
                    // resolve toward smaller K.
                    Some((_, bfit)) => fit.bic < bfit.bic,
                };
                if replace {
                    best = Some((k, fit));
                }
            }
        }
    }
    best.ok_or_else(|| {
        last_err.unwrap_or_else(|| Error::Degenerate("every K failed to fit".into()))
    })
}
