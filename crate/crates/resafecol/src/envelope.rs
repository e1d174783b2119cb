//! Convex-hull range enclosure of Legendre splines.
//!
//! A polynomial written in Bernstein form on `[0, 1]` lies inside the convex
//! hull of its control values, so the minimum and maximum control value
//! bracket its range. Composing three linear maps turns the Legendre-series
//! coefficients `alpha` of a spline directly into those control values on any
//! sub-interval (*region*) `[t_k, t_{k+1}]` of the normalized horizon:
//!
//! ```text
//! P_k = B * (E^{t_k:t_{k+1}})^T * L_M^T * alpha = C_M^k * alpha
//! ```
//!
//! where `L_M` maps series coefficients to monomial coefficients, `E` is the
//! binomial change of interval, and `B` the monomial-to-Bernstein map. The
//! matrices `C_M^k` (and variants for the first and second derivative of the
//! spline) are assembled once, offline; inside the optimizer every range
//! bound is then a fixed linear map of the decision variables.
//!
//! For a nonlinear function `g` of the spline, [`enclose_nonlinear`] enlarges
//! the hull-sampled range of `g` by a second-order term `d^2/2 * max |g''|`
//! so that the true range of `g` over the region is certified to be inside.

use nalgebra::{DMatrix, DVector};

use crate::basis::{lgl_nodes, LegendreBasis, SplineCoefficients};
use crate::error::{Error, Result};

/// Binomial coefficient in floating point; exact for the degrees handled
/// here (the basis degree cap keeps `n` at 30 or below).
pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut num = 1.0;
    let mut den = 1.0;
    for i in 0..k {
        num *= (n - i) as f64;
        den *= (i + 1) as f64;
    }
    num / den
}

/// Map from monomial coefficients on `[0, 1]` to Bernstein control values:
/// entry `(j, k) = C(j, k) / C(M, k)` for `k <= j`, zero otherwise.
pub fn bernstein_matrix(degree: usize) -> DMatrix<f64> {
    let n = degree + 1;
    DMatrix::from_fn(n, n, |j, k| {
        if k <= j {
            binomial(j, k) / binomial(degree, k)
        } else {
            0.0
        }
    })
}

/// Change-of-interval matrix `E` with `v(tau) = E v(tau_star)` for
/// `tau = tau_lo + (tau_hi - tau_lo) * tau_star`, `tau_star in [0, 1]`:
/// entry `(i, j) = C(i, j) (tau_hi - tau_lo)^j tau_lo^(i-j)`.
pub fn time_transform_matrix(tau_lo: f64, tau_hi: f64, degree: usize) -> Result<DMatrix<f64>> {
    let width = tau_hi - tau_lo;
    if !(width > 0.0) {
        return Err(Error::DegenerateRegion {
            lo: tau_lo,
            hi: tau_hi,
        });
    }
    let n = degree + 1;
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if j <= i {
            binomial(i, j) * width.powi(j as i32) * tau_lo.powi((i - j) as i32)
        } else {
            0.0
        }
    }))
}

/// Default region boundaries for `regions` hull regions: the LGL nodes of
/// the grid with `regions + 1` points, so one region per node interval.
/// A single region reduces to the whole-horizon envelope.
pub fn default_region_bounds(regions: usize) -> Result<Vec<f64>> {
    if regions == 0 {
        return Err(Error::InvalidArgument(
            "hull needs at least one region".into(),
        ));
    }
    lgl_nodes(regions + 1)
}

/// Precomputed hull mapping matrices for every region and derivative order
/// 0, 1, 2. Immutable once built; shared freely between solver instances.
#[derive(Debug, Clone)]
pub struct HullMatrixSet {
    degree: usize,
    region_bounds: Vec<f64>,
    /// `maps[region][order]`, each `(M+1) x (M+1)`.
    maps: Vec<[DMatrix<f64>; 3]>,
}

/// Assemble hull matrices for the given basis and region boundaries.
/// Boundaries must be strictly increasing with `t_0 = -1` and `t_K = +1`.
pub fn build_hull_matrices(basis: &LegendreBasis, region_bounds: &[f64]) -> Result<HullMatrixSet> {
    if region_bounds.len() < 2 {
        return Err(Error::InvalidArgument(
            "region bounds need at least two entries".into(),
        ));
    }
    if (region_bounds[0] + 1.0).abs() > 1e-12
        || (region_bounds[region_bounds.len() - 1] - 1.0).abs() > 1e-12
    {
        return Err(Error::InvalidArgument(format!(
            "region bounds must span [-1, 1], got [{}, {}]",
            region_bounds[0],
            region_bounds[region_bounds.len() - 1]
        )));
    }
    for w in region_bounds.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::DegenerateRegion { lo: w[0], hi: w[1] });
        }
    }
    let degree = basis.degree();
    let bern = bernstein_matrix(degree);
    // Coefficient matrices of the spline and its first two derivatives.
    let coeff_mats = [
        basis.coeff_matrix().clone(),
        basis.derivative_coeff_matrix(1),
        basis.derivative_coeff_matrix(2),
    ];
    let mut maps = Vec::with_capacity(region_bounds.len() - 1);
    for w in region_bounds.windows(2) {
        let transform = time_transform_matrix(w[0], w[1], degree)?;
        let build = |order: usize| &bern * transform.transpose() * coeff_mats[order].transpose();
        maps.push([build(0), build(1), build(2)]);
    }
    Ok(HullMatrixSet {
        degree,
        region_bounds: region_bounds.to_vec(),
        maps,
    })
}

impl HullMatrixSet {
    /// Build with the default LGL region boundaries.
    pub fn with_default_regions(basis: &LegendreBasis, regions: usize) -> Result<Self> {
        build_hull_matrices(basis, &default_region_bounds(regions)?)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn regions(&self) -> usize {
        self.maps.len()
    }

    pub fn region_bounds(&self) -> &[f64] {
        &self.region_bounds
    }

    /// Normalized-time span `[t_k, t_{k+1}]` of region `k`.
    pub fn region_span(&self, region: usize) -> (f64, f64) {
        (self.region_bounds[region], self.region_bounds[region + 1])
    }

    /// The mapping matrix `C_M^k` (or its derivative variant) for a region.
    /// The matrix itself is unscaled; time-derivative hull values must be
    /// multiplied by `(2 / t_f)^order`.
    pub fn map(&self, region: usize, order: usize) -> &DMatrix<f64> {
        &self.maps[region][order]
    }

    fn check_access(&self, region: usize, order: usize) -> Result<()> {
        if region >= self.maps.len() {
            return Err(Error::InvalidArgument(format!(
                "region {region} out of range (K = {})",
                self.maps.len()
            )));
        }
        if order > 2 {
            return Err(Error::InvalidArgument(format!(
                "derivative order {order} not precomputed (max 2)"
            )));
        }
        Ok(())
    }

    /// Hull control values of one channel's spline (derivative) on a region,
    /// scaled to time derivatives by `(2/t_f)^order`.
    pub fn hull_values(
        &self,
        coeffs: &SplineCoefficients,
        region: usize,
        channel: usize,
        order: usize,
    ) -> Result<DVector<f64>> {
        self.check_access(region, order)?;
        if coeffs.degree() != self.degree {
            return Err(Error::DimensionMismatch(format!(
                "spline degree {} vs hull degree {}",
                coeffs.degree(),
                self.degree
            )));
        }
        let scale = (2.0 / coeffs.t_f).powi(order as i32);
        Ok(&self.maps[region][order] * coeffs.alpha.column(channel) * scale)
    }

    /// Guaranteed range bracket of the channel's spline (derivative) over
    /// the region: the extreme entries of the regional convex hull.
    pub fn hull_bounds(
        &self,
        coeffs: &SplineCoefficients,
        region: usize,
        channel: usize,
        order: usize,
    ) -> Result<(f64, f64)> {
        let values = self.hull_values(coeffs, region, channel, order)?;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in values.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Ok((lo, hi))
    }
}

/// Largest gap between consecutive entries of the value set, after sorting.
pub fn max_consecutive_gap(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

/// A certified range enclosure of a nonlinear function of the spline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnclosureBound {
    pub lower: f64,
    pub upper: f64,
    /// The second-order enlargement `d^2/2 * hessian_bound` already folded
    /// into `lower` and `upper`.
    pub slack_margin: f64,
}

/// Range enclosure of a scalar function `g` of one or more spline channels
/// over one region.
///
/// `hulls` holds the regional hull values of each input channel of `g`; `g`
/// is evaluated on the Cartesian grid of those values and the result
/// enlarged by `d^2/2 * hessian_bound`, with `d^2` the sum over channels of
/// the squared maximum consecutive gap of the sorted hull. `hessian_bound`
/// must dominate the largest absolute Hessian eigenvalue of `g` on the
/// region (for the ellipsoidal barrier this is `max{2/a^2, 2/b^2}`).
pub fn enclose_nonlinear(
    g: impl Fn(&[f64]) -> f64,
    hulls: &[&[f64]],
    hessian_bound: f64,
) -> Result<EnclosureBound> {
    if hessian_bound < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "hessian bound must be nonnegative, got {hessian_bound}"
        )));
    }
    if hulls.is_empty() || hulls.iter().any(|h| h.is_empty()) {
        return Err(Error::InvalidArgument("empty hull".into()));
    }
    let channels = hulls.len();
    let mut point = vec![0.0; channels];
    let mut index = vec![0usize; channels];
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    loop {
        for (c, &i) in index.iter().enumerate() {
            point[c] = hulls[c][i];
        }
        let value = g(&point);
        min = min.min(value);
        max = max.max(value);
        // Odometer over the grid of hull values.
        let mut c = 0;
        loop {
            index[c] += 1;
            if index[c] < hulls[c].len() {
                break;
            }
            index[c] = 0;
            c += 1;
            if c == channels {
                let d_squared: f64 = hulls
                    .iter()
                    .map(|h| {
                        let gap = max_consecutive_gap(h);
                        gap * gap
                    })
                    .sum();
                let slack_margin = 0.5 * d_squared * hessian_bound;
                return Ok(EnclosureBound {
                    lower: min - slack_margin,
                    upper: max + slack_margin,
                    slack_margin,
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{eval_spline, legendre_coefficients};
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;

    fn random_spline(
        rng: &mut rand_chacha::ChaCha8Rng,
        degree: usize,
        channels: usize,
        t_f: f64,
    ) -> SplineCoefficients {
        let alpha = DMatrix::from_fn(degree + 1, channels, |_, _| rng.gen_range(-1.0..1.0));
        SplineCoefficients::new(alpha, t_f).unwrap()
    }

    #[test]
    fn bernstein_low_degree() {
        let b1 = bernstein_matrix(1);
        assert_eq!(b1, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]));
        let b2 = bernstein_matrix(2);
        assert_eq!(
            b2,
            DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 1.0, 0.5, 0.0, 1.0, 1.0, 1.0])
        );
    }

    #[test]
    fn bernstein_constant_polynomial() {
        let b = bernstein_matrix(4);
        let mut a = DVector::zeros(5);
        a[0] = 2.75;
        let control = &b * a;
        for &v in control.iter() {
            assert_eq!(v, 2.75);
        }
    }

    #[test]
    fn time_transform_identity_on_unit_interval() {
        let e = time_transform_matrix(0.0, 1.0, 3).unwrap();
        assert_eq!(e, DMatrix::identity(4, 4));
    }

    #[test]
    fn time_transform_full_interval_degree_one() {
        let e = time_transform_matrix(-1.0, 1.0, 1).unwrap();
        assert_eq!(e, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 2.0]));
    }

    #[test]
    fn time_transform_endpoint_consistency() {
        use crate::basis::monomial_vector;
        let (lo, hi) = (-0.6, 0.2);
        let degree = 5;
        let e = time_transform_matrix(lo, hi, degree).unwrap();
        let at_zero = &e * monomial_vector(degree, 0.0, 0);
        let at_one = &e * monomial_vector(degree, 1.0, 0);
        let v_lo = monomial_vector(degree, lo, 0);
        let v_hi = monomial_vector(degree, hi, 0);
        for j in 0..=degree {
            assert_abs_diff_eq!(at_zero[j], v_lo[j], epsilon = 1e-13);
            assert_abs_diff_eq!(at_one[j], v_hi[j], epsilon = 1e-13);
        }
    }

    #[test]
    fn time_transform_rejects_degenerate_region() {
        assert!(matches!(
            time_transform_matrix(0.5, 0.5, 2),
            Err(Error::DegenerateRegion { .. })
        ));
        assert!(matches!(
            time_transform_matrix(0.5, 0.2, 2),
            Err(Error::DegenerateRegion { .. })
        ));
    }

    #[test]
    fn default_bounds_single_region_is_whole_interval() {
        assert_eq!(default_region_bounds(1).unwrap(), vec![-1.0, 1.0]);
        let three = default_region_bounds(3).unwrap();
        assert_eq!(three.len(), 4);
        let root = (0.2f64).sqrt();
        assert_abs_diff_eq!(three[1], -root, epsilon = 1e-12);
    }

    #[test]
    fn hull_matrix_composition() {
        let basis = legendre_coefficients(4).unwrap();
        let bounds = default_region_bounds(3).unwrap();
        let set = build_hull_matrices(&basis, &bounds).unwrap();
        let bern = bernstein_matrix(4);
        for k in 0..3 {
            let e = time_transform_matrix(bounds[k], bounds[k + 1], 4).unwrap();
            let expected = &bern * e.transpose() * basis.coeff_matrix().transpose();
            assert_abs_diff_eq!((set.map(k, 0) - expected).norm(), 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn linear_spline_hull_is_tight() {
        // x(tau) = tau over a single region: hull exactly [-1, 1].
        let basis = legendre_coefficients(1).unwrap();
        let set = HullMatrixSet::with_default_regions(&basis, 1).unwrap();
        let mut alpha = DMatrix::zeros(2, 1);
        alpha[(1, 0)] = 1.0;
        let coeffs = SplineCoefficients::new(alpha, 2.0).unwrap();
        let (lo, hi) = set.hull_bounds(&coeffs, 0, 0, 0).unwrap();
        assert_abs_diff_eq!(lo, -1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(hi, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn quadratic_hull_hand_computation() {
        // x(tau) = tau^2 at M = 2 over one region: Bernstein values
        // [1, -1, 1], so the hull is (-1, 1) containing the true range [0, 1].
        let basis = legendre_coefficients(2).unwrap();
        let set = HullMatrixSet::with_default_regions(&basis, 1).unwrap();
        let mut alpha = DMatrix::zeros(3, 1);
        alpha[(0, 0)] = 1.0 / 3.0;
        alpha[(2, 0)] = 2.0 / 3.0;
        let coeffs = SplineCoefficients::new(alpha, 2.0).unwrap();
        let values = set.hull_values(&coeffs, 0, 0, 0).unwrap();
        assert_abs_diff_eq!(values[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(values[1], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(values[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn more_regions_tighten_quadratic_lower_bound() {
        let basis = legendre_coefficients(2).unwrap();
        let mut alpha = DMatrix::zeros(3, 1);
        alpha[(0, 0)] = 1.0 / 3.0;
        alpha[(2, 0)] = 2.0 / 3.0;
        let coeffs = SplineCoefficients::new(alpha, 2.0).unwrap();
        let one = HullMatrixSet::with_default_regions(&basis, 1).unwrap();
        let two = HullMatrixSet::with_default_regions(&basis, 2).unwrap();
        let (lo1, _) = one.hull_bounds(&coeffs, 0, 0, 0).unwrap();
        let lo2 = (0..2)
            .map(|k| two.hull_bounds(&coeffs, k, 0, 0).unwrap().0)
            .fold(f64::INFINITY, f64::min);
        assert!(lo2 > lo1, "expected tightening: {lo2} vs {lo1}");
        assert!(lo2 > -0.5 && lo2 <= 0.0);
    }

    #[test]
    fn constant_spline_hull_entries_equal_constant() {
        let basis = legendre_coefficients(5).unwrap();
        let set = HullMatrixSet::with_default_regions(&basis, 4).unwrap();
        let mut alpha = DMatrix::zeros(6, 1);
        alpha[(0, 0)] = -0.7;
        let coeffs = SplineCoefficients::new(alpha, 1.0).unwrap();
        for k in 0..4 {
            let values = set.hull_values(&coeffs, k, 0, 0).unwrap();
            for &v in values.iter() {
                assert_abs_diff_eq!(v, -0.7, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn containment_of_random_splines() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let degree = rng.gen_range(1..=8);
            let regions = rng.gen_range(1..=6);
            let basis = legendre_coefficients(degree).unwrap();
            let set = HullMatrixSet::with_default_regions(&basis, regions).unwrap();
            let coeffs = random_spline(&mut rng, degree, 1, 2.0);
            for k in 0..regions {
                let (lo, hi) = set.hull_bounds(&coeffs, k, 0, 0).unwrap();
                let (t_lo, t_hi) = set.region_span(k);
                for i in 0..=100 {
                    let tau = t_lo + (t_hi - t_lo) * i as f64 / 100.0;
                    let x = eval_spline(&coeffs, &basis, tau, 0).unwrap()[0];
                    assert!(
                        x >= lo - 1e-9 && x <= hi + 1e-9,
                        "violation at tau={tau}: {x} outside [{lo}, {hi}]"
                    );
                }
            }
        }
    }

    #[test]
    fn derivative_hulls_contain_time_derivatives() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let t_f = 1.75;
        for _ in 0..100 {
            let degree = rng.gen_range(2..=7);
            let regions = rng.gen_range(1..=4);
            let basis = legendre_coefficients(degree).unwrap();
            let set = HullMatrixSet::with_default_regions(&basis, regions).unwrap();
            let coeffs = random_spline(&mut rng, degree, 1, t_f);
            for order in 1..=2 {
                for k in 0..regions {
                    let (lo, hi) = set.hull_bounds(&coeffs, k, 0, order).unwrap();
                    let (t_lo, t_hi) = set.region_span(k);
                    for i in 0..=60 {
                        let tau = t_lo + (t_hi - t_lo) * i as f64 / 60.0;
                        let x = eval_spline(&coeffs, &basis, tau, order).unwrap()[0];
                        assert!(
                            x >= lo - 1e-9 && x <= hi + 1e-9,
                            "order {order} violation: {x} outside [{lo}, {hi}]"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn tightness_on_certified_monotone_regions() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let mut checked = 0;
        for _ in 0..400 {
            let degree = rng.gen_range(2..=6);
            let regions = rng.gen_range(2..=5);
            let basis = legendre_coefficients(degree).unwrap();
            let set = HullMatrixSet::with_default_regions(&basis, regions).unwrap();
            let coeffs = random_spline(&mut rng, degree, 1, 2.0);
            for k in 0..regions {
                let (dlo, dhi) = set.hull_bounds(&coeffs, k, 0, 1).unwrap();
                if dlo <= 1e-9 && dhi >= -1e-9 {
                    continue; // derivative hull sign not certified
                }
                let (lo, hi) = set.hull_bounds(&coeffs, k, 0, 0).unwrap();
                let (t_lo, t_hi) = set.region_span(k);
                let a = eval_spline(&coeffs, &basis, t_lo, 0).unwrap()[0];
                let b = eval_spline(&coeffs, &basis, t_hi, 0).unwrap()[0];
                assert_abs_diff_eq!(lo, a.min(b), epsilon = 1e-9);
                assert_abs_diff_eq!(hi, a.max(b), epsilon = 1e-9);
                checked += 1;
            }
        }
        assert!(checked > 20, "only {checked} monotone regions sampled");
    }

    #[test]
    fn enclosure_quadratic_example() {
        let hull = [-1.0, 0.5, 1.0];
        let bound = enclose_nonlinear(|x| x[0] * x[0], &[&hull], 2.0).unwrap();
        assert_abs_diff_eq!(bound.slack_margin, 2.25, epsilon = 1e-12);
        assert_abs_diff_eq!(bound.upper, 3.25, epsilon = 1e-12);
        assert_abs_diff_eq!(bound.lower, -2.0, epsilon = 1e-12);
    }

    #[test]
    fn enclosure_affine_is_tight() {
        let hull = [-0.4, 0.1, 0.9];
        let bound = enclose_nonlinear(|x| 3.0 * x[0] + 1.0, &[&hull], 0.0).unwrap();
        assert_abs_diff_eq!(bound.lower, 3.0 * -0.4 + 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bound.upper, 3.0 * 0.9 + 1.0, epsilon = 1e-12);
        assert_eq!(bound.slack_margin, 0.0);
    }

    #[test]
    fn enclosure_rejects_negative_hessian_bound() {
        let hull = [0.0, 1.0];
        assert!(enclose_nonlinear(|x| x[0], &[&hull], -1.0).is_err());
    }

    #[test]
    fn enclosure_sound_for_quadratics_on_splines() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let degree = rng.gen_range(2..=6);
            let basis = legendre_coefficients(degree).unwrap();
            let set = HullMatrixSet::with_default_regions(&basis, 2).unwrap();
            let coeffs = random_spline(&mut rng, degree, 1, 2.0);
            let g = |x: &[f64]| 1.7 * x[0] * x[0] - 0.3 * x[0];
            for k in 0..2 {
                let hull = set.hull_values(&coeffs, k, 0, 0).unwrap();
                let bound = enclose_nonlinear(g, &[hull.as_slice()], 2.0 * 1.7).unwrap();
                let (t_lo, t_hi) = set.region_span(k);
                for i in 0..=1000 {
                    let tau = t_lo + (t_hi - t_lo) * i as f64 / 1000.0;
                    let x = eval_spline(&coeffs, &basis, tau, 0).unwrap()[0];
                    let v = g(&[x]);
                    assert!(v >= bound.lower - 1e-9 && v <= bound.upper + 1e-9);
                }
            }
        }
    }

    #[test]
    fn region_refinement_rate() {
        // Mean extrema-approximation error should drop by roughly 4x per
        // region doubling; assert at least 3x for one doubling here.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let degree = 5;
        let basis = legendre_coefficients(degree).unwrap();
        let sets = [
            HullMatrixSet::with_default_regions(&basis, 1).unwrap(),
            HullMatrixSet::with_default_regions(&basis, 2).unwrap(),
        ];
        let mut errors = [0.0f64; 2];
        for _ in 0..300 {
            let coeffs = random_spline(&mut rng, degree, 1, 2.0);
            let mut true_min = f64::INFINITY;
            let mut true_max = f64::NEG_INFINITY;
            for i in 0..=2000 {
                let tau = -1.0 + 2.0 * i as f64 / 2000.0;
                let x = eval_spline(&coeffs, &basis, tau, 0).unwrap()[0];
                true_min = true_min.min(x);
                true_max = true_max.max(x);
            }
            for (err, set) in errors.iter_mut().zip(&sets) {
                let mut est_min = f64::INFINITY;
                let mut est_max = f64::NEG_INFINITY;
                for k in 0..set.regions() {
                    let (lo, hi) = set.hull_bounds(&coeffs, k, 0, 0).unwrap();
                    est_min = est_min.min(lo);
                    est_max = est_max.max(hi);
                }
                *err += (est_max - true_max) + (true_min - est_min);
            }
        }
        assert!(
            errors[0] / errors[1] >= 3.0,
            "refinement ratio {:.2}",
            errors[0] / errors[1]
        );
    }
}
