//! Cubic B-spline system on [0,1]: basis evaluation, Gram and roughness
//! matrices, and the upper-triangular factor that turns spline coefficients
//! into norm-preserving coordinates.

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::scalar::{fl, Scalar};

/// Spline order for cubic B-splines.
pub const ORDER: usize = 4;

/// Largest number of interior knots kept after quantile thinning.
pub const MAX_INTERIOR_KNOTS: usize = 35;

/// 7-point Gauss-Legendre rule on [-1, 1]; exact through degree 13, which
/// covers the degree-6 piecewise polynomials in the Gram and roughness
/// integrands.
const GL_NODES: [f64; 7] = [
    -0.949_107_912_342_758_5,
    -0.741_531_185_599_394_4,
    -0.405_845_151_377_397_2,
    0.0,
    0.405_845_151_377_397_2,
    0.741_531_185_599_394_4,
    0.949_107_912_342_758_5,
];
const GL_WEIGHTS: [f64; 7] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
    0.381_830_050_505_118_9,
    0.279_705_391_489_276_7,
    0.129_484_966_168_869_7,
];

/// Cubic B-spline basis on [0,1] with clamped boundary knots, plus the
/// matrices needed by the penalized solver.
///
/// `d` is the upper-triangular factor with `d^T d = gram + r * roughness`,
/// so the Euclidean norm of `d * b` equals the smoothness-weighted function
/// norm of the spline with coefficients `b`.
#[derive(Clone, Debug)]
pub struct SplineBasis<F> {
    pub interior_knots: Vec<F>,
    /// Full clamped knot vector (multiplicity 4 at 0 and 1).
    pub knots: Vec<F>,
    /// Basis dimension: interior knots + 4.
    pub l: usize,
    /// Smoothness weight baked into `d`.
    pub r: F,
    pub gram: Mat<F>,
    pub roughness: Mat<F>,
    pub d: Mat<F>,
    pub d_inv: Mat<F>,
}

impl<F: Scalar> SplineBasis<F> {
    /// Builds the basis whose interior knots are the deduplicated union of
    /// observation times (points within 1e-12 of 0 or 1 are dropped), capped
    /// at [`MAX_INTERIOR_KNOTS`] by quantile thinning.
    pub fn build(times_union: &[F], r: F) -> Result<Self> {
        if times_union.is_empty() {
            return Err(Error::InvalidInput("empty time union for knots".into()));
        }
        if r < F::zero() {
            return Err(Error::InvalidInput("smoothness weight r must be >= 0".into()));
        }
        let eps = fl::<F>(1e-12);
        let mut interior: Vec<F> = Vec::new();
        let mut sorted = times_union.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &t in &sorted {
            if t < -eps || t > F::one() + eps {
                return Err(Error::InvalidInput("knot outside [0,1]".into()));
            }
            if t.abs() <= eps || (t - F::one()).abs() <= eps {
                continue;
            }
            if interior.last().map_or(true, |&last| t - last > eps) {
                interior.push(t);
            }
        }
        if interior.len() > MAX_INTERIOR_KNOTS {
            let m = interior.len();
            let mut thinned = Vec::with_capacity(MAX_INTERIOR_KNOTS);
            for q in 0..MAX_INTERIOR_KNOTS {
                let idx = (q * (m - 1)) / (MAX_INTERIOR_KNOTS - 1);
                thinned.push(interior[idx]);
            }
            thinned.dedup_by(|a, b| (*a - *b).abs() <= eps);
            interior = thinned;
        }
        Self::from_interior_knots(&interior, r)
    }

    /// Builds the basis from explicit interior knots in (0,1).
    pub fn from_interior_knots(interior: &[F], r: F) -> Result<Self> {
        let l = interior.len() + ORDER;
        let mut knots = Vec::with_capacity(l + ORDER);
        knots.extend(std::iter::repeat(F::zero()).take(ORDER));
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat(F::one()).take(ORDER));

        let mut basis = SplineBasis {
            interior_knots: interior.to_vec(),
            knots,
            l,
            r,
            gram: Mat::zeros(l, l),
            roughness: Mat::zeros(l, l),
            d: Mat::zeros(l, l),
            d_inv: Mat::zeros(l, l),
        };
        basis.assemble_matrices();

        let mut m = basis.gram.clone();
        for i in 0..l {
            for j in 0..l {
                m[(i, j)] = m[(i, j)] + r * basis.roughness[(i, j)];
            }
        }
        basis.d = linalg::cholesky_upper(&m)?;
        basis.d_inv = linalg::inverse_upper(&basis.d);
        Ok(basis)
    }

    /// Values of all L basis functions at `t`.
    pub fn values(&self, t: F) -> Vec<F> {
        self.values_degree(3, t)
    }

    /// Second derivatives of all L basis functions at `t`.
    pub fn second_derivatives(&self, t: F) -> Vec<F> {
        let u = &self.knots;
        let v1 = self.values_degree(1, t);
        let n2 = u.len() - 3;
        let mut d1_of_2 = vec![F::zero(); n2];
        for i in 0..n2 {
            let mut s = F::zero();
            let den_a = u[i + 2] - u[i];
            if den_a > F::zero() {
                s = s + v1[i] / den_a;
            }
            let den_b = u[i + 3] - u[i + 1];
            if den_b > F::zero() {
                s = s - v1[i + 1] / den_b;
            }
            d1_of_2[i] = fl::<F>(2.0) * s;
        }
        let mut out = vec![F::zero(); self.l];
        for i in 0..self.l {
            let mut s = F::zero();
            let den_a = u[i + 3] - u[i];
            if den_a > F::zero() {
                s = s + d1_of_2[i] / den_a;
            }
            let den_b = u[i + 4] - u[i + 1];
            if den_b > F::zero() {
                s = s - d1_of_2[i + 1] / den_b;
            }
            out[i] = fl::<F>(3.0) * s;
        }
        out
    }

    /// Evaluates the spline with coefficient vector `b` at `t`.
    pub fn eval_coefficient(&self, b: &[F], t: F) -> F {
        assert_eq!(b.len(), self.l, "coefficient length must equal L");
        linalg::dot(b, &self.values(t))
    }

    /// Second derivative of the spline with coefficients `b` at `t`.
    pub fn eval_second_derivative(&self, b: &[F], t: F) -> F {
        assert_eq!(b.len(), self.l);
        linalg::dot(b, &self.second_derivatives(t))
    }

    /// The smoothness-weighted norm ||beta||_r, computed as ||D b||.
    pub fn r_norm(&self, b: &[F]) -> F {
        linalg::norm2(&self.d.matvec(b))
    }

    /// Transforms spline coefficients into the norm-preserving coordinates.
    pub fn to_alpha(&self, b: &[F]) -> Vec<F> {
        self.d.matvec(b)
    }

    /// Back-transforms norm-preserving coordinates into spline coefficients.
    pub fn to_coefficients(&self, alpha: &[F]) -> Vec<F> {
        linalg::solve_upper(&self.d, alpha)
    }

    /// All-degree Cox-de Boor table, bottom-up; returns values of the given
    /// degree for all functions of that degree.
    fn values_degree(&self, degree: usize, t: F) -> Vec<F> {
        let u = &self.knots;
        let nk = u.len();
        // Degree 0: indicator of the half-open span, closed at the right
        // endpoint of the last nonempty span so that t = 1 is covered.
        let mut vals: Vec<F> = vec![F::zero(); nk - 1];
        let last_span = (0..nk - 1)
            .rev()
            .find(|&i| u[i + 1] > u[i])
            .expect("knot vector has a nonempty span");
        for (i, v) in vals.iter_mut().enumerate() {
            let inside = if i == last_span {
                t >= u[i] && t <= u[i + 1]
            } else {
                t >= u[i] && t < u[i + 1]
            };
            if inside {
                *v = F::one();
            }
        }
        for d in 1..=degree {
            let n = nk - 1 - d;
            let mut next = vec![F::zero(); n];
            for (i, nv) in next.iter_mut().enumerate() {
                let mut s = F::zero();
                let den_a = u[i + d] - u[i];
                if den_a > F::zero() {
                    s = s + (t - u[i]) / den_a * vals[i];
                }
                let den_b = u[i + d + 1] - u[i + 1];
                if den_b > F::zero() {
                    s = s + (u[i + d + 1] - t) / den_b * vals[i + 1];
                }
                *nv = s;
            }
            vals = next;
        }
        vals
    }

    /// Gram and roughness matrices by per-span Gauss-Legendre quadrature.
    fn assemble_matrices(&mut self) {
        let mut breakpoints: Vec<F> = vec![F::zero()];
        breakpoints.extend_from_slice(&self.interior_knots);
        breakpoints.push(F::one());
        let half = fl::<F>(0.5);
        for span in breakpoints.windows(2) {
            let (a, b) = (span[0], span[1]);
            if b <= a {
                continue;
            }
            let mid = half * (a + b);
            let scale = half * (b - a);
            for (node, weight) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
                let t = mid + scale * fl::<F>(*node);
                let w = scale * fl::<F>(*weight);
                let vals = self.values(t);
                let ders = self.second_derivatives(t);
                for i in 0..self.l {
                    if vals[i] == F::zero() && ders[i] == F::zero() {
                        continue;
                    }
                    for j in 0..self.l {
                        self.gram[(i, j)] = self.gram[(i, j)] + w * vals[i] * vals[j];
                        self.roughness[(i, j)] =
                            self.roughness[(i, j)] + w * ders[i] * ders[j];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Independent recursive Cox-de Boor evaluation of a single basis
    /// function; oracle route, kept separate from the table evaluator.
    fn naive_bspline(knots: &[f64], i: usize, degree: usize, t: f64) -> f64 {
        if degree == 0 {
            let last_span = (0..knots.len() - 1)
                .rev()
                .find(|&s| knots[s + 1] > knots[s])
                .unwrap();
            let inside = if i == last_span {
                t >= knots[i] && t <= knots[i + 1]
            } else {
                t >= knots[i] && t < knots[i + 1]
            };
            return if inside { 1.0 } else { 0.0 };
        }
        let mut s = 0.0;
        let den_a = knots[i + degree] - knots[i];
        if den_a > 0.0 {
            s += (t - knots[i]) / den_a * naive_bspline(knots, i, degree - 1, t);
        }
        let den_b = knots[i + degree + 1] - knots[i + 1];
        if den_b > 0.0 {
            s += (knots[i + degree + 1] - t) / den_b * naive_bspline(knots, i + 1, degree - 1, t);
        }
        s
    }

    /// Composite Simpson quadrature with an even number of panels.
    pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
        assert!(panels % 2 == 0);
        let h = (b - a) / panels as f64;
        let mut acc = f(a) + f(b);
        for k in 1..panels {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + h * k as f64);
        }
        acc * h / 3.0
    }

    fn sim_grid_basis(r: f64) -> SplineBasis<f64> {
        let times: Vec<f64> = (0..10).map(|s| s as f64 / 9.0).collect();
        SplineBasis::build(&times, r).unwrap()
    }

    /// Simpson applied per knot span: the integrands have derivative kinks
    /// at the knots, so panels must not straddle them.
    fn simpson_spanwise(
        basis: &SplineBasis<f64>,
        f: impl Fn(f64) -> f64,
        panels_per_span: usize,
    ) -> f64 {
        let mut breaks = vec![0.0];
        breaks.extend_from_slice(&basis.interior_knots);
        breaks.push(1.0);
        breaks
            .windows(2)
            .map(|w| simpson(&f, w[0], w[1], panels_per_span))
            .sum()
    }

    #[test]
    fn simulation_grid_dimension() {
        // 10 equally spaced points -> 8 interior knots -> L = 12.
        let basis = sim_grid_basis(0.0);
        assert_eq!(basis.interior_knots.len(), 8);
        assert_eq!(basis.l, 12);
    }

    #[test]
    fn single_interior_knot_dimension() {
        let basis = SplineBasis::from_interior_knots(&[0.5], 0.3).unwrap();
        assert_eq!(basis.l, 5);
    }

    #[test]
    fn zero_r_factor_reproduces_gram() {
        let basis = sim_grid_basis(0.0);
        let dtd = basis.d.transpose().matmul(&basis.d);
        assert!(dtd.max_abs_diff(&basis.gram) < 1e-10);
    }

    #[test]
    fn factor_reproduces_penalized_gram() {
        let basis = sim_grid_basis(0.7);
        let dtd = basis.d.transpose().matmul(&basis.d);
        let m = Mat::from_fn(basis.l, basis.l, |i, j| {
            basis.gram[(i, j)] + 0.7 * basis.roughness[(i, j)]
        });
        let scale: f64 = m.data.iter().map(|x| x.abs()).fold(0.0, f64::max);
        assert!(dtd.max_abs_diff(&m) < 1e-10 * scale.max(1.0));
    }

    #[test]
    fn partition_of_unity() {
        let basis = sim_grid_basis(0.1);
        for k in 0..=1000 {
            let t = k as f64 / 1000.0;
            let sum: f64 = basis.values(t).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "sum {} at t={}", sum, t);
        }
    }

    #[test]
    fn zero_coefficients_evaluate_to_zero() {
        let basis = sim_grid_basis(0.0);
        let b = vec![0.0; basis.l];
        for k in 0..=20 {
            assert_eq!(basis.eval_coefficient(&b, k as f64 / 20.0), 0.0);
        }
    }

    #[test]
    fn eval_matches_naive_recursion() {
        let basis = SplineBasis::from_interior_knots(&[0.2, 0.35, 0.5, 0.9], 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b: Vec<f64> = (0..basis.l).map(|_| rng.gen_range(-2.0..2.0)).collect();
        for k in 0..=200 {
            let t = k as f64 / 200.0;
            let expected: f64 = (0..basis.l)
                .map(|i| b[i] * naive_bspline(&basis.knots, i, 3, t))
                .sum();
            assert!((basis.eval_coefficient(&b, t) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_spline_r_norm_is_abs_value() {
        // All-ones coefficients give the constant 1 by partition of unity;
        // its second derivative vanishes, so ||beta||_r = |c| for every r.
        for &r in &[0.0, 0.1, 2.5] {
            let basis = sim_grid_basis(r);
            let c = -3.25;
            let b = vec![c; basis.l];
            assert!((basis.r_norm(&b) - c.abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn r_norm_zero_for_zero_coefficients() {
        let basis = sim_grid_basis(0.4);
        assert_eq!(basis.r_norm(&vec![0.0; basis.l]), 0.0);
    }

    #[test]
    fn r_norm_matches_quadrature() {
        // Oracle: composite Simpson on 10^4 panels of the integral definition.
        let basis = sim_grid_basis(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b: Vec<f64> = (0..basis.l).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f2 = simpson_spanwise(&basis, |t| basis.eval_coefficient(&b, t).powi(2), 1000);
        let d2 = simpson_spanwise(
            &basis,
            |t| basis.eval_second_derivative(&b, t).powi(2),
            1000,
        );
        let expected = (f2 + 0.1 * d2).sqrt();
        assert!((basis.r_norm(&b) - expected).abs() < 1e-8);
    }

    #[test]
    fn norm_identity_random_draws() {
        // 1000 random (b, r) draws; |  ||Db|| - quadrature norm | within
        // 1e-8 * (1 + ||Db||).
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let rs = [0.0, 1e-4, 1e-2, 0.1, 1.0];
        let bases: Vec<SplineBasis<f64>> = rs.iter().map(|&r| sim_grid_basis(r)).collect();
        for trial in 0..1000 {
            let which = trial % rs.len();
            let basis = &bases[which];
            let r = rs[which];
            let b: Vec<f64> = (0..basis.l).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let f2 = simpson_spanwise(basis, |t| basis.eval_coefficient(&b, t).powi(2), 200);
            let d2 = simpson_spanwise(
                basis,
                |t| basis.eval_second_derivative(&b, t).powi(2),
                200,
            );
            let quad = (f2 + r * d2).sqrt();
            let db = basis.r_norm(&b);
            assert!(
                (db - quad).abs() <= 1e-8 * (1.0 + db),
                "trial {}: {} vs {}",
                trial,
                db,
                quad
            );
        }
    }

    #[test]
    fn d_inverse_consistency() {
        let basis = sim_grid_basis(0.25);
        let prod = basis.d.matmul(&basis.d_inv);
        assert!(prod.max_abs_diff(&Mat::identity(basis.l)) < 1e-10);
        // Round trip b -> alpha -> b.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b: Vec<f64> = (0..basis.l).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let back = basis.to_coefficients(&basis.to_alpha(&b));
        for (u, v) in b.iter().zip(&back) {
            assert!((u - v).abs() < 1e-10);
        }
        assert!((norm2(&basis.to_alpha(&b)) - basis.r_norm(&b)).abs() < 1e-12);
    }

    #[test]
    fn knot_thinning_caps_dimension() {
        let times: Vec<f64> = (0..200).map(|k| (k as f64 + 0.5) / 201.0).collect();
        let basis = SplineBasis::build(&times, 0.0).unwrap();
        assert!(basis.interior_knots.len() <= MAX_INTERIOR_KNOTS);
        assert_eq!(basis.l, basis.interior_knots.len() + 4);
    }

    #[test]
    fn boundary_times_are_not_interior_knots() {
        let basis = SplineBasis::build(&[0.0, 0.5, 1.0], 0.0).unwrap();
        assert_eq!(basis.interior_knots, vec![0.5]);
    }

    #[test]
    fn f32_basis_builds() {
        let times: Vec<f32> = (0..10).map(|s| s as f32 / 9.0).collect();
        let basis = SplineBasis::<f32>::build(&times, 0.01).unwrap();
        assert_eq!(basis.l, 12);
        let sum: f32 = basis.values(0.37).iter().sum();
        assert!((sum - 1.0).abs() < 1e-5);
    }
}
