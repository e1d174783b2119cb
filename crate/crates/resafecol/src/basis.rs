//! Legendre polynomial algebra: monomial coefficients, Legendre-Gauss-Lobatto
//! collocation grids, and evaluation/differentiation of Legendre-series
//! splines.
//!
//! Every state and input channel of the optimal control problem is a
//! truncated Legendre series of degree `M`,
//!
//! ```text
//! x(tau) = sum_k alpha_k * L_k(tau) = alpha^T * L_M * v(tau),   tau in [-1, 1]
//! ```
//!
//! where `L_M` is the matrix of monomial coefficients of the Legendre
//! polynomials (row `k` holds the coefficients of `L_k`) and
//! `v(tau) = [1, tau, tau^2, ...]` is the Vandermonde vector. The monomial
//! representation is retained throughout so that range-enclosure matrices can
//! act directly on the spline coefficients.

use nalgebra::{DMatrix, DVector};
use num::{BigInt, BigRational, One, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Largest supported series degree. The construction itself is exact
/// rational arithmetic, but the monomial (Vandermonde) representation loses
/// conditioning well before this point.
pub const DEGREE_CAP: usize = 30;

/// Monomial coefficients of the Legendre basis up to degree `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct LegendreBasis {
    degree: usize,
    /// Row `k`, column `j`: coefficient of `tau^j` in `L_k(tau)`. Rows have
    /// zero entries above monomial degree `k`.
    coeff_matrix: DMatrix<f64>,
}

fn factorial(n: usize) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, i| acc * BigInt::from(i))
}

fn binomial_big(n: usize, k: usize) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// Monomial coefficients of `L_0 .. L_M` from the Rodrigues formula
/// `L_k = 1/(2^k k!) d^k/dtau^k (tau^2 - 1)^k`, built in exact rational
/// arithmetic and converted to floating point at the end.
pub fn legendre_coefficients(degree: usize) -> Result<LegendreBasis> {
    if degree > DEGREE_CAP {
        return Err(Error::DegreeOverflow {
            degree,
            cap: DEGREE_CAP,
        });
    }
    let n = degree + 1;
    let mut coeff = DMatrix::zeros(n, n);
    for k in 0..n {
        // (tau^2 - 1)^k = sum_j C(k,j) (-1)^(k-j) tau^(2j); the k-th
        // derivative of tau^(2j) is (2j)!/(2j-k)! tau^(2j-k).
        let scale = BigRational::new(BigInt::one(), BigInt::from(2u32).pow(k as u32) * factorial(k));
        for j in 0..=k {
            if 2 * j < k {
                continue;
            }
            let power = 2 * j - k;
            let falling = factorial(2 * j) / factorial(2 * j - k);
            let mut term = BigRational::from(binomial_big(k, j) * falling) * scale.clone();
            if (k - j) % 2 == 1 {
                term = -term;
            }
            coeff[(k, power)] = term.to_f64().expect("rational fits in f64");
        }
    }
    Ok(LegendreBasis {
        degree,
        coeff_matrix: coeff,
    })
}

impl LegendreBasis {
    pub fn new(degree: usize) -> Result<Self> {
        legendre_coefficients(degree)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// The `(M+1) x (M+1)` matrix `L_M`; row `k` holds the monomial
    /// coefficients of `L_k`.
    pub fn coeff_matrix(&self) -> &DMatrix<f64> {
        &self.coeff_matrix
    }

    /// Monomial coefficients of the `order`-th derivative of each basis
    /// polynomial, in the same `(M+1) x (M+1)` shape (top coefficients zero).
    pub fn derivative_coeff_matrix(&self, order: usize) -> DMatrix<f64> {
        let n = self.degree + 1;
        let mut out = DMatrix::zeros(n, n);
        if order > self.degree {
            return out;
        }
        for k in 0..n {
            for j in 0..n - order {
                // d^order/dtau^order tau^(j+order) = (j+order)!/j! tau^j
                let mut fall = 1.0;
                for i in 0..order {
                    fall *= (j + order - i) as f64;
                }
                out[(k, j)] = self.coeff_matrix[(k, j + order)] * fall;
            }
        }
        out
    }

    /// Values `[L_0(tau), ..., L_M(tau)]`.
    pub fn eval(&self, tau: f64) -> DVector<f64> {
        &self.coeff_matrix * monomial_vector(self.degree, tau, 0)
    }

    /// Values of the `order`-th derivative of each basis polynomial at `tau`.
    pub fn eval_deriv(&self, tau: f64, order: usize) -> DVector<f64> {
        &self.coeff_matrix * monomial_vector(self.degree, tau, order)
    }
}

/// The Vandermonde vector `v(tau)` of length `degree + 1`, differentiated
/// `deriv` times: entry `j` is `j!/(j-deriv)! * tau^(j-deriv)`.
pub fn monomial_vector(degree: usize, tau: f64, deriv: usize) -> DVector<f64> {
    let mut v = DVector::zeros(degree + 1);
    for j in deriv..=degree {
        let mut fall = 1.0;
        for i in 0..deriv {
            fall *= (j - i) as f64;
        }
        v[j] = fall * tau.powi((j - deriv) as i32);
    }
    v
}

/// Legendre value and first derivative at `x` by the three-term recurrence.
pub fn legendre_value_deriv(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p_prev = 1.0;
    let mut p = x;
    for k in 1..n {
        let p_next = ((2 * k + 1) as f64 * x * p - k as f64 * p_prev) / (k + 1) as f64;
        p_prev = p;
        p = p_next;
    }
    let dp = if (x.abs() - 1.0).abs() < 1e-14 {
        let boundary = (n * (n + 1)) as f64 / 2.0;
        if x > 0.0 {
            boundary
        } else if n % 2 == 0 {
            -boundary
        } else {
            boundary
        }
    } else {
        n as f64 * (x * p - p_prev) / (x * x - 1.0)
    };
    (p, dp)
}

/// Second derivative from the Legendre differential equation
/// `(1-x^2) P'' - 2x P' + n(n+1) P = 0`.
fn legendre_second_deriv(n: usize, x: f64) -> f64 {
    let (p, dp) = legendre_value_deriv(n, x);
    (2.0 * x * dp - (n * (n + 1)) as f64 * p) / (1.0 - x * x)
}

/// Legendre-Gauss-Lobatto nodes: the interval endpoints plus the roots of
/// the derivative of the degree-`(N-1)` Legendre polynomial, sorted
/// ascending. Interior roots are found by damped Newton iteration from
/// Chebyshev-Lobatto initial guesses.
pub fn lgl_nodes(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "LGL grid needs at least 2 nodes, got {n}"
        )));
    }
    let poly_degree = n - 1;
    let mut nodes = vec![0.0; n];
    nodes[0] = -1.0;
    nodes[n - 1] = 1.0;
    for i in 1..n - 1 {
        let mut x = -(std::f64::consts::PI * i as f64 / poly_degree as f64).cos();
        let mut residual = legendre_value_deriv(poly_degree, x).1;
        for _ in 0..100 {
            let g = residual;
            let dg = legendre_second_deriv(poly_degree, x);
            let mut step = g / dg;
            if step.abs() < 1e-16 {
                break;
            }
            // Damping: halve the step until the residual decreases.
            let mut damping = 0;
            loop {
                let candidate = x - step;
                let g_new = legendre_value_deriv(poly_degree, candidate).1;
                if g_new.abs() <= g.abs() || damping >= 50 {
                    x = candidate;
                    residual = g_new;
                    break;
                }
                step *= 0.5;
                damping += 1;
            }
        }
        if residual.abs() >= 1e-12 {
            return Err(Error::NodeSearchFailed {
                n,
                residual: residual.abs(),
            });
        }
        nodes[i] = x;
    }
    // The grid is symmetric about zero; enforce it exactly.
    let interior = n - 2;
    for i in 1..=interior / 2 {
        let m = (nodes[i] - nodes[n - 1 - i]) / 2.0;
        nodes[i] = m;
        nodes[n - 1 - i] = -m;
    }
    if interior % 2 == 1 {
        nodes[(n - 1) / 2] = 0.0;
    }
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(nodes)
}

/// LGL quadrature weights `w_i = 2 / (N (N-1) [L_{N-1}(tau_i)]^2)`. The rule
/// integrates polynomials up to degree `2N - 3` exactly.
pub fn lgl_weights(n: usize, nodes: &[f64]) -> Vec<f64> {
    debug_assert_eq!(nodes.len(), n);
    let scale = 2.0 / (n * (n - 1)) as f64;
    nodes
        .iter()
        .map(|&x| {
            let (p, _) = legendre_value_deriv(n - 1, x);
            scale / (p * p)
        })
        .collect()
}

/// An LGL collocation grid: nodes and quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl CollocationGrid {
    pub fn new(n: usize) -> Result<Self> {
        let nodes = lgl_nodes(n)?;
        let weights = lgl_weights(n, &nodes);
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Quadrature of sampled values: `sum_i w_i f_i`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(values)
            .map(|(w, f)| w * f)
            .sum()
    }
}

/// Legendre-series coefficients for a multi-channel spline, one column per
/// channel, plus the horizon length used for time scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineCoefficients {
    /// `(M+1) x channels`.
    pub alpha: DMatrix<f64>,
    /// Horizon length in seconds; `tau = 2 t / t_f - 1`.
    pub t_f: f64,
}

impl SplineCoefficients {
    pub fn new(alpha: DMatrix<f64>, t_f: f64) -> Result<Self> {
        if !(t_f > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon length must be positive, got {t_f}"
            )));
        }
        Ok(Self { alpha, t_f })
    }

    pub fn degree(&self) -> usize {
        self.alpha.nrows() - 1
    }

    pub fn channels(&self) -> usize {
        self.alpha.ncols()
    }

    /// Fit coefficients through samples at `M + 1` distinct normalized times.
    /// `samples[(i, c)]` is the value of channel `c` at `taus[i]`.
    pub fn fit(
        basis: &LegendreBasis,
        taus: &[f64],
        samples: &DMatrix<f64>,
        t_f: f64,
    ) -> Result<Self> {
        let n = basis.degree() + 1;
        if taus.len() != n || samples.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "fit needs {} sample rows, got {} times and {} rows",
                n,
                taus.len(),
                samples.nrows()
            )));
        }
        let mut a = DMatrix::zeros(n, n);
        for (i, &tau) in taus.iter().enumerate() {
            a.row_mut(i).copy_from(&basis.eval(tau).transpose());
        }
        let lu = a.lu();
        let alpha = lu
            .solve(samples)
            .ok_or_else(|| Error::InvalidArgument("singular interpolation system".into()))?;
        Self::new(alpha, t_f)
    }
}

/// Evaluate the spline (or its `deriv`-th time derivative) at normalized
/// time `tau`, returning one value per channel:
/// `(2/t_f)^deriv * alpha^T L_M d^deriv v(tau)/dtau^deriv`.
pub fn eval_spline(
    coeffs: &SplineCoefficients,
    basis: &LegendreBasis,
    tau: f64,
    deriv: usize,
) -> Result<DVector<f64>> {
    if !(-1.0..=1.0).contains(&tau) {
        return Err(Error::TauOutOfRange { tau });
    }
    if deriv > basis.degree() {
        return Err(Error::InvalidArgument(format!(
            "derivative order {deriv} exceeds degree {}",
            basis.degree()
        )));
    }
    if coeffs.alpha.nrows() != basis.degree() + 1 {
        return Err(Error::DimensionMismatch(format!(
            "coefficients have {} rows, basis degree {}",
            coeffs.alpha.nrows(),
            basis.degree()
        )));
    }
    let basis_vals = basis.eval_deriv(tau, deriv);
    let scale = (2.0 / coeffs.t_f).powi(deriv as i32);
    Ok(coeffs.alpha.transpose() * basis_vals * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn low_degree_coefficients() {
        let basis = legendre_coefficients(2).unwrap();
        let m = basis.coeff_matrix();
        // L_0 = 1, L_1 = tau, L_2 = (3 tau^2 - 1)/2
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(0, 1)], 0.0);
        assert_eq!(m[(1, 0)], 0.0);
        assert_eq!(m[(1, 1)], 1.0);
        assert_eq!(m[(2, 0)], -0.5);
        assert_eq!(m[(2, 1)], 0.0);
        assert_eq!(m[(2, 2)], 1.5);
    }

    #[test]
    fn rows_zero_above_own_degree() {
        let basis = legendre_coefficients(8).unwrap();
        for k in 0..=8 {
            for j in k + 1..=8 {
                assert_eq!(basis.coeff_matrix()[(k, j)], 0.0);
            }
        }
    }

    #[test]
    fn unit_value_at_one() {
        let basis = legendre_coefficients(12).unwrap();
        for k in 0..=12 {
            let row_sum: f64 = (0..=12).map(|j| basis.coeff_matrix()[(k, j)]).sum();
            assert_abs_diff_eq!(row_sum, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rows_orthogonal_under_quadrature() {
        let degree = 7;
        let basis = legendre_coefficients(degree).unwrap();
        // Quadrature exact through degree 2M needs N with 2N - 3 >= 2M.
        let grid = CollocationGrid::new(degree + 2).unwrap();
        for a in 0..=degree {
            for b in 0..a {
                let integral: f64 = grid
                    .nodes
                    .iter()
                    .zip(&grid.weights)
                    .map(|(&tau, &w)| {
                        let vals = basis.eval(tau);
                        w * vals[a] * vals[b]
                    })
                    .sum();
                assert_abs_diff_eq!(integral, 0.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn degree_cap_enforced() {
        assert!(matches!(
            legendre_coefficients(DEGREE_CAP + 1),
            Err(Error::DegreeOverflow { .. })
        ));
        assert!(legendre_coefficients(DEGREE_CAP).is_ok());
    }

    #[test]
    fn lgl_nodes_small_grids() {
        assert_eq!(lgl_nodes(2).unwrap(), vec![-1.0, 1.0]);
        let n3 = lgl_nodes(3).unwrap();
        assert_eq!(n3, vec![-1.0, 0.0, 1.0]);
        let n4 = lgl_nodes(4).unwrap();
        let root = (0.2f64).sqrt();
        assert_abs_diff_eq!(n4[1], -root, epsilon = 1e-12);
        assert_abs_diff_eq!(n4[2], root, epsilon = 1e-12);
        assert_eq!(n4[0], -1.0);
        assert_eq!(n4[3], 1.0);
    }

    #[test]
    fn lgl_nodes_are_derivative_roots() {
        for n in 3..=20 {
            let nodes = lgl_nodes(n).unwrap();
            assert_eq!(nodes[0], -1.0);
            assert_eq!(nodes[n - 1], 1.0);
            for &x in &nodes[1..n - 1] {
                let (_, dp) = legendre_value_deriv(n - 1, x);
                assert!(dp.abs() < 1e-12, "residual {dp:.3e} at N={n}");
            }
            for w in nodes.windows(2) {
                assert!(w[1] > w[0]);
            }
        }
    }

    #[test]
    fn lgl_weights_small_grids() {
        let cases: [(usize, &[f64]); 3] = [
            (2, &[1.0, 1.0]),
            (3, &[1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0]),
            (4, &[1.0 / 6.0, 5.0 / 6.0, 5.0 / 6.0, 1.0 / 6.0]),
        ];
        for (n, expected) in cases {
            let nodes = lgl_nodes(n).unwrap();
            let weights = lgl_weights(n, &nodes);
            for (w, e) in weights.iter().zip(expected) {
                assert_abs_diff_eq!(*w, *e, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn weights_sum_to_two() {
        for n in 2..=25 {
            let grid = CollocationGrid::new(n).unwrap();
            let total: f64 = grid.weights.iter().sum();
            assert_abs_diff_eq!(total, 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn quadrature_exact_for_low_degree_polynomials() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for n in 2..=12 {
            let grid = CollocationGrid::new(n).unwrap();
            let max_degree = 2 * n - 3;
            for _ in 0..20 {
                let coeffs: Vec<f64> =
                    (0..=max_degree).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let eval = |x: f64| {
                    coeffs
                        .iter()
                        .rev()
                        .fold(0.0, |acc, &c| acc * x + c)
                };
                let exact: f64 = coeffs
                    .iter()
                    .enumerate()
                    .map(|(j, &c)| {
                        if j % 2 == 0 {
                            2.0 * c / (j + 1) as f64
                        } else {
                            0.0
                        }
                    })
                    .sum();
                let quad: f64 = grid
                    .nodes
                    .iter()
                    .zip(&grid.weights)
                    .map(|(&x, &w)| w * eval(x))
                    .sum();
                let scale = coeffs.iter().fold(1.0f64, |m, c| m.max(c.abs()));
                assert!(
                    (quad - exact).abs() < 1e-10 * scale,
                    "N={n}: quad {quad} vs exact {exact}"
                );
            }
        }
    }

    #[test]
    fn eval_linear_spline_first_derivative() {
        // x(tau) = tau is L_1, t_f = 2 so dtau/dt = 1.
        let basis = legendre_coefficients(3).unwrap();
        let mut alpha = DMatrix::zeros(4, 1);
        alpha[(1, 0)] = 1.0;
        let coeffs = SplineCoefficients::new(alpha, 2.0).unwrap();
        for tau in [-1.0, -0.3, 0.5, 1.0] {
            let v = eval_spline(&coeffs, &basis, tau, 1).unwrap();
            assert_abs_diff_eq!(v[0], 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn eval_constant_spline() {
        let basis = legendre_coefficients(4).unwrap();
        let mut alpha = DMatrix::zeros(5, 2);
        alpha[(0, 0)] = 3.25;
        alpha[(0, 1)] = -1.5;
        let coeffs = SplineCoefficients::new(alpha, 1.0).unwrap();
        for tau in [-1.0, 0.0, 0.77] {
            let v = eval_spline(&coeffs, &basis, tau, 0).unwrap();
            assert_abs_diff_eq!(v[0], 3.25, epsilon = 1e-14);
            assert_abs_diff_eq!(v[1], -1.5, epsilon = 1e-14);
        }
    }

    #[test]
    fn eval_quadratic_second_derivative_scaling() {
        // x(tau) = tau^2 = (L_0 + 2 L_2) / 3; with t_f = 4 the second time
        // derivative is (2/4)^2 * 2 = 0.5.
        let basis = legendre_coefficients(2).unwrap();
        let mut alpha = DMatrix::zeros(3, 1);
        alpha[(0, 0)] = 1.0 / 3.0;
        alpha[(2, 0)] = 2.0 / 3.0;
        let coeffs = SplineCoefficients::new(alpha, 4.0).unwrap();
        let v = eval_spline(&coeffs, &basis, 0.3, 2).unwrap();
        assert_abs_diff_eq!(v[0], 0.5, epsilon = 1e-13);
    }

    #[test]
    fn eval_rejects_tau_out_of_range() {
        let basis = legendre_coefficients(2).unwrap();
        let coeffs = SplineCoefficients::new(DMatrix::zeros(3, 1), 1.0).unwrap();
        assert!(matches!(
            eval_spline(&coeffs, &basis, 1.01, 0),
            Err(Error::TauOutOfRange { .. })
        ));
    }

    #[test]
    fn derivative_matches_finite_differences() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let basis = legendre_coefficients(6).unwrap();
        let alpha = DMatrix::from_fn(7, 3, |_, _| rng.gen_range(-1.0..1.0));
        let t_f = 3.0;
        let coeffs = SplineCoefficients::new(alpha, t_f).unwrap();
        let h = 1e-5;
        for tau in [-0.9, -0.25, 0.1, 0.8] {
            let up = eval_spline(&coeffs, &basis, tau + h, 0).unwrap();
            let dn = eval_spline(&coeffs, &basis, tau - h, 0).unwrap();
            // Central difference in tau; convert to a time derivative.
            let fd = (up - dn) / (2.0 * h) * (2.0 / t_f);
            let analytic = eval_spline(&coeffs, &basis, tau, 1).unwrap();
            for c in 0..3 {
                assert_abs_diff_eq!(fd[c], analytic[c], epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn interpolation_round_trip() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for degree in [2usize, 5, 9] {
            let basis = legendre_coefficients(degree).unwrap();
            let taus = lgl_nodes(degree + 1).unwrap();
            let samples = DMatrix::from_fn(degree + 1, 2, |_, _| rng.gen_range(-2.0..2.0));
            let coeffs = SplineCoefficients::fit(&basis, &taus, &samples, 1.0).unwrap();
            for (i, &tau) in taus.iter().enumerate() {
                let v = eval_spline(&coeffs, &basis, tau, 0).unwrap();
                for c in 0..2 {
                    let rel = (v[c] - samples[(i, c)]).abs() / samples[(i, c)].abs().max(1.0);
                    assert!(rel < 1e-9, "degree {degree}: {} vs {}", v[c], samples[(i, c)]);
                }
            }
        }
    }

    #[test]
    fn derivative_coeff_matrix_consistent() {
        let basis = legendre_coefficients(5).unwrap();
        let d1 = basis.derivative_coeff_matrix(1);
        // d/dtau L_2 = 3 tau: row 2 of d1 should be [0, 3, 0, ...].
        assert_abs_diff_eq!(d1[(2, 0)], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(d1[(2, 1)], 3.0, epsilon = 1e-14);
        // Differentiating twice equals the order-2 matrix.
        let d2 = basis.derivative_coeff_matrix(2);
        let tau = 0.37;
        let v2 = &d2 * monomial_vector(5, tau, 0);
        let direct = basis.eval_deriv(tau, 2);
        for k in 0..=5 {
            assert_abs_diff_eq!(v2[k], direct[k], epsilon = 1e-12);
        }
    }
}
