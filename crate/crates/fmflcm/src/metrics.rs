//! Evaluation criteria: adjusted Rand index, cluster alignment,
//! correct/incorrect zero counts, standardized coefficient MSE, and
//! relative covariate importance.

use crate::basis::SplineBasis;
use crate::dataset::FunctionalDataset;
use crate::error::{Error, Result};
use crate::params::MixtureParams;
use crate::scalar::{fl, Scalar};

/// Pair-counting adjusted Rand index between two partitions of the same
/// items. Symmetric and invariant to relabeling either argument. Returns
/// 1 when both partitions are trivial and identical (degenerate
/// denominator).
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "ari: label lengths {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n == 0 {
        return Err(Error::InvalidInput("ari: empty labelings".into()));
    }
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![0u64; ka * kb];
    let mut row = vec![0u64; ka];
    let mut col = vec![0u64; kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
        row[x] += 1;
        col[y] += 1;
    }
    let choose2 = |m: u64| (m * m.saturating_sub(1)) as f64 / 2.0;
    let sum_cells: f64 = table.iter().map(|&m| choose2(m)).sum();
    let sum_row: f64 = row.iter().map(|&m| choose2(m)).sum();
    let sum_col: f64 = col.iter().map(|&m| choose2(m)).sum();
    let total = choose2(n as u64);
    let expected = sum_row * sum_col / total;
    let max_index = (sum_row + sum_col) / 2.0;
    if (max_index - expected).abs() < 1e-12 {
        return Ok(1.0);
    }
    Ok((sum_cells - expected) / (max_index - expected))
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for tail in permutations(k - 1) {
        for pos in 0..k {
            let mut perm = tail.clone();
            perm.insert(pos, k - 1);
            out.push(perm);
        }
    }
    out
}

/// The permutation mapping estimated cluster labels to true labels that
/// maximizes agreement on the confusion matrix, by exhaustive search
/// (intended for small K).
pub fn align_clusters(est: &[usize], truth: &[usize], k: usize) -> Result<Vec<usize>> {
    if est.len() != truth.len() {
        return Err(Error::Dimension("align_clusters: length mismatch".into()));
    }
    if k == 0 || k > 8 {
        return Err(Error::InvalidInput(
            "align_clusters supports 1 <= K <= 8".into(),
        ));
    }
    if est.iter().chain(truth).any(|&z| z >= k) {
        return Err(Error::InvalidInput(
            "align_clusters: label outside 0..K".into(),
        ));
    }
    let mut confusion = vec![0u64; k * k];
    for (&e, &t) in est.iter().zip(truth) {
        confusion[e * k + t] += 1;
    }
    let mut best = vec![];
    let mut best_score = 0u64;
    for perm in permutations(k) {
        let score: u64 = (0..k).map(|e| confusion[e * k + perm[e]]).sum();
        if best.is_empty() || score > best_score {
            best_score = score;
            best = perm;
        }
    }
    Ok(best)
}

/// Relabels `labels` through `perm` (perm[old] = new).
pub fn apply_permutation(labels: &[usize], perm: &[usize]) -> Vec<usize> {
    labels.iter().map(|&z| perm[z]).collect()
}

/// Counts of correct zeros (outside the true active set) and incorrect
/// zeros (inside it), over all (covariate, cluster) groups with exactly
/// zero coefficient blocks.
pub fn selection_counts<F: Scalar>(
    params: &MixtureParams<F>,
    active_set: &[usize],
) -> (usize, usize) {
    let mut c = 0;
    let mut ic = 0;
    for j in 0..params.p {
        let active = active_set.contains(&j);
        for k in 0..params.k {
            let zero = params.b_block(j, k).iter().all(|&v| v == F::zero());
            if zero {
                if active {
                    ic += 1;
                } else {
                    c += 1;
                }
            }
        }
    }
    (c, ic)
}

/// Standardized coefficient MSE,
/// sum_jk ||beta_jk - betahat_jk||_2^2 / sum_jk ||beta_jk||_2^2, with L2
/// norms by quadrature on a 1001-point grid. `perm` maps estimated
/// cluster k to the true cluster it represents.
pub fn coef_mse<F: Scalar>(
    params: &MixtureParams<F>,
    basis: &SplineBasis<F>,
    beta_true: impl Fn(usize, usize, F) -> F,
    perm: &[usize],
) -> Result<F> {
    if perm.len() != params.k {
        return Err(Error::Dimension("coef_mse: permutation length".into()));
    }
    let grid = 1001usize;
    let h = F::one() / fl::<F>((grid - 1) as f64);
    let mut num = F::zero();
    let mut den = F::zero();
    for g in 0..grid {
        let t = h * fl::<F>(g as f64);
        // Trapezoid weights on the uniform grid.
        let w = if g == 0 || g == grid - 1 {
            h / fl::<F>(2.0)
        } else {
            h
        };
        for j in 0..params.p {
            for k in 0..params.k {
                let truth = beta_true(j, perm[k], t);
                let est = basis.eval_coefficient(params.b_block(j, k), t);
                num = num + w * (truth - est) * (truth - est);
                den = den + w * truth * truth;
            }
        }
    }
    if den <= F::zero() {
        return Err(Error::Degenerate(
            "coef_mse: all-zero true coefficients".into(),
        ));
    }
    Ok(num / den)
}

/// Relative importance of covariate j: the L2 norm of its coefficient
/// functions across clusters times the root mean squared functional
/// dispersion of X_.j around the pointwise subject mean. Requires a
/// common observation grid.
pub fn relative_importance<F: Scalar>(
    params: &MixtureParams<F>,
    basis: &SplineBasis<F>,
    data: &FunctionalDataset<F>,
    j: usize,
) -> Result<F> {
    if j >= params.p || params.p != data.p {
        return Err(Error::Dimension("relative_importance: covariate index".into()));
    }
    let grid = &data.subjects[0].times;
    let s = grid.len();
    if data
        .subjects
        .iter()
        .any(|subj| subj.times.len() != s || subj.times.iter().zip(grid).any(|(&a, &b)| a != b))
    {
        return Err(Error::InvalidInput(
            "relative_importance requires a common time grid".into(),
        ));
    }
    let n = data.subjects.len();
    let nf = fl::<F>(n as f64);
    // Pointwise mean of X_.j over subjects.
    let mut mean = vec![F::zero(); s];
    for subj in &data.subjects {
        for (t, m) in mean.iter_mut().enumerate() {
            *m = *m + subj.x_row(t, data.p)[j] / nf;
        }
    }
    // Mean squared L2 dispersion, trapezoid rule per subject.
    let mut disp = F::zero();
    for subj in &data.subjects {
        let mut acc = F::zero();
        for t in 0..s.saturating_sub(1) {
            let dt = grid[t + 1] - grid[t];
            let a = subj.x_row(t, data.p)[j] - mean[t];
            let b = subj.x_row(t + 1, data.p)[j] - mean[t + 1];
            acc = acc + dt * (a * a + b * b) / fl::<F>(2.0);
        }
        disp = disp + acc / nf;
    }
    // ||beta_j.||_2 over all clusters by quadrature.
    let grid_q = 1001usize;
    let h = F::one() / fl::<F>((grid_q - 1) as f64);
    let mut beta_norm2 = F::zero();
    for g in 0..grid_q {
        let t = h * fl::<F>(g as f64);
        let w = if g == 0 || g == grid_q - 1 {
            h / fl::<F>(2.0)
        } else {
            h
        };
        for k in 0..params.k {
            let v = basis.eval_coefficient(params.b_block(j, k), t);
            beta_norm2 = beta_norm2 + w * v * v;
        }
    }
    Ok(beta_norm2.sqrt() * disp.sqrt())
}
