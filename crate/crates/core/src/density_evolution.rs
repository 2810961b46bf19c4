//! The scalar density-evolution recursion and its fixed points.
//!
//! Message distributions of belief propagation on the tree model collapse,
//! in the large-degree limit, to a one-parameter Gaussian family `N(±v, v)`.
//! Tracking that parameter across iterations gives the recursion
//!
//! ```text
//! v_{t+1} = theta + lambda * h(v_t),      h(v) = E[tanh(v + sqrt(v) Z + phi)]
//! ```
//!
//! whose smallest fixed point (reached from `v_0 = 0`) predicts the error of
//! locally-initialized belief propagation, and whose largest fixed point
//! (reached from `w_1 = theta + lambda`) lower-bounds the error of any
//! estimator. The misclassified fraction at parameter `v` is the Gaussian
//! mixture tail [`predicted_misclassification`].
//!
//! Evaluations for `rho > 1/2` are canonicalized by swapping cluster roles
//! (`rho -> 1 - rho`, `mu <-> nu`, `phi -> -phi`), which leaves the map
//! `theta + lambda h(v, phi)` invariant and keeps `theta >= 0` internally.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::quad::{default_rule, NormalQuadrature};

/// Above this `v` the expectation saturates: `1 - h(v)` is bounded by a
/// Gaussian tail below any representable double.
const SATURATION_V: f64 = 1e3;

/// Hard stopping thresholds for fixed-point iteration.
const SUCCESSIVE_TOL: f64 = 1e-12;
const RESIDUAL_TOL: f64 = 1e-10;
/// Iteration cap for fixed-point searches.
const MAX_FIXED_POINT_ITERATIONS: u64 = 100_000;

/// Standard normal upper-tail probability `Q(x) = P(Z > x)`.
///
/// Evaluated as `erfc(x / sqrt(2)) / 2`, good to full double precision.
pub fn q_function(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    if x == f64::NEG_INFINITY {
        return 1.0;
    }
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// `h(v) = E[tanh(v + sqrt(v) Z + phi)]` for standard normal `Z`.
pub fn h(v: f64, phi: f64) -> Result<f64> {
    h_with_rule(v, phi, default_rule())
}

/// [`h`] evaluated with an explicit quadrature rule.
pub fn h_with_rule(v: f64, phi: f64, rule: &NormalQuadrature) -> Result<f64> {
    if v < 0.0 || v.is_nan() {
        return Err(Error::NegativeV(v));
    }
    if v == 0.0 {
        return Ok(phi.tanh());
    }
    if v > SATURATION_V {
        // tanh saturates; the deficit 1 - h is bounded by a Gaussian tail
        // that underflows to zero for v this large.
        return Ok(1.0 - 2.0 * q_function(v.sqrt() - phi.abs() / v.sqrt()));
    }
    let s = v.sqrt();
    Ok(rule.expect(|z| (v + s * z + phi).tanh()))
}

/// `h'(v) = E[(1 - tanh(u)) (1 - tanh^2(u))]` with `u = v + sqrt(v) Z + phi`.
pub fn h_prime(v: f64, phi: f64) -> Result<f64> {
    h_prime_with_rule(v, phi, default_rule())
}

/// [`h_prime`] evaluated with an explicit quadrature rule.
pub fn h_prime_with_rule(v: f64, phi: f64, rule: &NormalQuadrature) -> Result<f64> {
    if !(v > 0.0) {
        return Err(Error::NonPositiveV(v));
    }
    if v > SATURATION_V {
        return Ok(0.0);
    }
    let s = v.sqrt();
    Ok(rule.expect(|z| {
        let t = (v + s * z + phi).tanh();
        (1.0 - t) * (1.0 - t * t)
    }))
}

/// Analytic `v -> 0+` limit of `h'`, `(1 - tanh(phi)) (1 - tanh^2(phi))`.
pub fn h_prime_at_zero(phi: f64) -> f64 {
    let t = phi.tanh();
    (1.0 - t) * (1.0 - t * t)
}

/// The recursion coefficients `(theta, lambda, phi)` in canonical form.
pub fn recursion_coefficients(params: &ModelParams) -> (f64, f64, f64) {
    let p = params.canonical();
    (p.theta, p.lambda, p.phi)
}

/// One step of the density-evolution map, `theta + lambda * h(v)`.
pub fn de_step(v: f64, params: &ModelParams) -> Result<f64> {
    let (theta, lambda, phi) = recursion_coefficients(params);
    Ok(theta + lambda * h(v, phi)?)
}

/// Which recursion a [`DeTrajectory`] follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrajectoryKind {
    /// `v_t`: starts at `v_0 = 0`; nondecreasing; limit is the smallest
    /// fixed point (locally-initialized belief propagation).
    V,
    /// `w_t`: starts at `w_1 = theta + lambda`; nonincreasing; limit is the
    /// largest fixed point (information-theoretic lower bound).
    W,
    /// `u_t`: starts at `u_1 = (1 - 2 alpha)^2 mu^2 / 4`; symmetric
    /// parameterization only; tracks belief propagation warm-started from an
    /// `alpha`-noisy partition.
    U,
}

impl TrajectoryKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrajectoryKind::V => "v_t",
            TrajectoryKind::W => "w_t",
            TrajectoryKind::U => "u_t",
        }
    }
}

/// A realized trajectory of the recursion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeTrajectory {
    pub kind: TrajectoryKind,
    /// Iteration index of `values[0]` (0 for `v_t`, 1 for `w_t` and `u_t`).
    pub first_t: u32,
    pub values: Vec<f64>,
    /// Whether successive values got closer than the requested tolerance
    /// before `t_max`.
    pub converged: bool,
    /// `|v_T - (theta + lambda h(v_T))|` at the final value.
    pub residual: f64,
}

impl DeTrajectory {
    /// Value at iteration `t`. Beyond the last computed iteration the
    /// trajectory has converged and the final value is returned.
    pub fn value_at(&self, t: u32) -> Option<f64> {
        if t < self.first_t {
            return None;
        }
        let idx = (t - self.first_t) as usize;
        if idx < self.values.len() {
            Some(self.values[idx])
        } else if self.converged {
            self.values.last().copied()
        } else {
            None
        }
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("trajectory is never empty")
    }
}

/// Iterates the recursion from the kind-specific start.
///
/// Stops after `t_max` values or once successive values differ by less than
/// `tol`. `alpha` is required for (and only used by) the `U` kind and must
/// lie in `[0, 1/2)`.
pub fn trajectory(
    params: &ModelParams,
    kind: TrajectoryKind,
    alpha: Option<f64>,
    t_max: u32,
    tol: f64,
) -> Result<DeTrajectory> {
    if t_max < 1 {
        return Err(Error::ZeroIterations);
    }
    if !(tol > 0.0) {
        return Err(Error::NonPositiveTolerance(tol));
    }
    let (theta, lambda, phi) = recursion_coefficients(params);
    let (start, first_t) = match kind {
        TrajectoryKind::V => (0.0, 0),
        TrajectoryKind::W => (theta + lambda, 1),
        TrajectoryKind::U => {
            if !params.is_symmetric() {
                return Err(Error::NotSymmetric);
            }
            let alpha = alpha.ok_or(Error::AlphaOutOfRange(f64::NAN))?;
            if !(0.0..0.5).contains(&alpha) {
                return Err(Error::AlphaOutOfRange(alpha));
            }
            let u1 = (1.0 - 2.0 * alpha).powi(2) * params.mu * params.mu / 4.0;
            (u1, 1)
        }
    };
    let mut values = vec![start];
    let mut converged = false;
    let mut current = start;
    while values.len() < t_max as usize + 1 {
        let next = theta + lambda * h(current, phi)?;
        let delta = (next - current).abs();
        values.push(next);
        current = next;
        if delta < tol {
            converged = true;
            break;
        }
    }
    let residual = (theta + lambda * h(current, phi)? - current).abs();
    Ok(DeTrajectory {
        kind,
        first_t,
        values,
        converged,
        residual,
    })
}

/// The two extreme fixed points of `v = theta + lambda h(v)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FixedPoints {
    /// Limit of the `v_t` trajectory (smallest fixed point).
    pub v_lower: f64,
    /// Limit of the `w_t` trajectory (largest fixed point).
    pub v_upper: f64,
    /// Whether `|v_upper - v_lower| < tol`.
    pub unique: bool,
    pub iterations_lower: u64,
    pub iterations_upper: u64,
    pub residual_lower: f64,
    pub residual_upper: f64,
}

fn iterate_to_fixed_point(
    theta: f64,
    lambda: f64,
    phi: f64,
    start: f64,
    what: &'static str,
) -> Result<(f64, u64, f64)> {
    let mut v = start;
    let mut iterations = 0u64;
    loop {
        let next = theta + lambda * h(v, phi)?;
        iterations += 1;
        let delta = (next - v).abs();
        v = next;
        if delta < SUCCESSIVE_TOL {
            let residual = (theta + lambda * h(v, phi)? - v).abs();
            if residual < RESIDUAL_TOL {
                return Ok((v, iterations, residual));
            }
        }
        if iterations >= MAX_FIXED_POINT_ITERATIONS {
            let residual = (theta + lambda * h(v, phi)? - v).abs();
            return Err(Error::NoConvergence {
                what,
                iterations,
                residual,
            });
        }
    }
}

/// Finds the smallest and largest fixed points by iterating from `0` and
/// from `theta + lambda`.
///
/// Iteration stops once successive differences fall below 1e-12 with a map
/// residual below 1e-10; hitting the iteration cap first is reported as an
/// error carrying the achieved residual. `tol` is the threshold for the
/// `unique` flag.
pub fn fixed_points(params: &ModelParams, tol: f64) -> Result<FixedPoints> {
    if !(tol > 0.0) {
        return Err(Error::NonPositiveTolerance(tol));
    }
    let (theta, lambda, phi) = recursion_coefficients(params);
    let (v_lower, it_lower, res_lower) =
        iterate_to_fixed_point(theta, lambda, phi, 0.0, "lower fixed point")?;
    let (v_upper, it_upper, res_upper) =
        iterate_to_fixed_point(theta, lambda, phi, theta + lambda, "upper fixed point")?;
    Ok(FixedPoints {
        v_lower,
        v_upper,
        unique: (v_upper - v_lower).abs() < tol,
        iterations_lower: it_lower,
        iterations_upper: it_upper,
        residual_lower: res_lower,
        residual_upper: res_upper,
    })
}

/// The predicted misclassified fraction at Gaussian parameter `v`,
/// `rho Q((v + phi)/sqrt(v)) + (1 - rho) Q((v - phi)/sqrt(v))`.
///
/// At `v = 0` the analytic limit `min(rho, 1 - rho)` (the trivial
/// estimator's error) is returned.
pub fn predicted_misclassification(v: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::RhoOutOfRange(rho));
    }
    if v < 0.0 || v.is_nan() {
        return Err(Error::NegativeV(v));
    }
    if v == 0.0 {
        return Ok(rho.min(1.0 - rho));
    }
    let phi = 0.5 * (rho / (1.0 - rho)).ln();
    let s = v.sqrt();
    Ok(rho * q_function((v + phi) / s) + (1.0 - rho) * q_function((v - phi) / s))
}

/// One sampled point of the recursion map.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScanRow {
    pub rho: f64,
    pub mu: f64,
    pub nu: f64,
    pub v: f64,
    pub h: f64,
    pub h_prime: f64,
    /// `theta + lambda h(v)`.
    pub map_value: f64,
}

/// Scan of the recursion map over a `v` grid for one parameter set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapScan {
    pub rho: f64,
    pub mu: f64,
    pub nu: f64,
    pub rows: Vec<ScanRow>,
    /// Consecutive grid intervals on which `theta + lambda h(v) - v`
    /// changes sign; each brackets a fixed point.
    pub brackets: Vec<(f64, f64)>,
}

/// Samples `(v, h, h', theta + lambda h(v))` over `v_grid` and brackets the
/// sign changes of `map(v) - v`.
pub fn scan_fixed_points(params_grid: &[ModelParams], v_grid: &[f64]) -> Result<Vec<MapScan>> {
    let mut scans = Vec::with_capacity(params_grid.len());
    for params in params_grid {
        let (theta, lambda, phi) = recursion_coefficients(params);
        let mut rows = Vec::with_capacity(v_grid.len());
        for &v in v_grid {
            let hv = h(v, phi)?;
            let hp = if v == 0.0 {
                h_prime_at_zero(phi)
            } else {
                h_prime(v, phi)?
            };
            rows.push(ScanRow {
                rho: params.rho,
                mu: params.mu,
                nu: params.nu,
                v,
                h: hv,
                h_prime: hp,
                map_value: theta + lambda * hv,
            });
        }
        let mut brackets = Vec::new();
        for w in rows.windows(2) {
            let f0 = w[0].map_value - w[0].v;
            let f1 = w[1].map_value - w[1].v;
            if f0 == 0.0 || f0.signum() != f1.signum() {
                brackets.push((w[0].v, w[1].v));
            }
        }
        scans.push(MapScan {
            rho: params.rho,
            mu: params.mu,
            nu: params.nu,
            rows,
            brackets,
        });
    }
    Ok(scans)
}

/// Evenly spaced grid helper, `points >= 2`.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2);
    let step = (hi - lo) / (points - 1) as f64;
    (0..points).map(|i| lo + step * i as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::derive_params;
    use crate::quad::{NormalQuadrature, DEFAULT_PANELS};
    use crate::rng::rng_from_seed;
    use rand::Rng as _;
    use rand_distr::{Distribution, StandardNormal};

    fn params(rho: f64, b: f64, mu: f64, nu: f64) -> ModelParams {
        derive_params(1_000_000, rho, b, mu, nu).unwrap()
    }

    /// Independent Gaussian-tail oracle: adaptive Simpson integration of the
    /// standard normal density over [x, 40].
    fn q_oracle(x: f64) -> f64 {
        fn pdf(t: f64) -> f64 {
            (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
        }
        fn simpson(a: f64, b: f64) -> f64 {
            (b - a) / 6.0 * (pdf(a) + 4.0 * pdf(0.5 * (a + b)) + pdf(b))
        }
        fn adaptive(a: f64, b: f64, whole: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let left = simpson(a, m);
            let right = simpson(m, b);
            if depth == 0 || (left + right - whole).abs() < 1e-15 {
                left + right + (left + right - whole) / 15.0
            } else {
                adaptive(a, m, left, depth - 1) + adaptive(m, b, right, depth - 1)
            }
        }
        if x >= 40.0 {
            return 0.0;
        }
        adaptive(x, 40.0, simpson(x, 40.0), 40)
    }

    #[test]
    fn q_matches_trivial_values() {
        assert_eq!(q_function(0.0), 0.5);
        assert_eq!(q_function(f64::INFINITY), 0.0);
        assert_eq!(q_function(f64::NEG_INFINITY), 1.0);
    }

    #[test]
    fn q_matches_integration_oracle() {
        // Tabulated quantile: Q(1.6448536) is 0.05 to 6 decimals.
        assert!((q_function(1.6448536) - 0.05).abs() < 5e-7);
        for x in [-3.0, -1.5, -0.3, 0.2, 0.9175632684, 1.6448536, 2.5, 4.0] {
            let oracle = q_oracle(x);
            let got = q_function(x);
            assert!(
                (got - oracle).abs() <= 1e-12 * oracle.max(1e-300),
                "x = {x}: {got} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn q_matches_high_precision_references() {
        // References from 50-digit evaluation of erfc(x/sqrt(2))/2.
        let cases = [
            (1.0, 0.15865525393145705141),
            (2.0, 0.0227501319481792072),
            (3.0, 0.0013498980316300945267),
            (-1.5, 0.933192798731141934),
            (1.6448536, 0.050000002779657456357),
        ];
        for (x, want) in cases {
            assert!(
                ((q_function(x) - want) / want).abs() < 1e-12,
                "Q({x}) = {} vs {want}",
                q_function(x)
            );
        }
    }

    #[test]
    fn h_at_zero_is_tanh_phi() {
        for phi in [-2.0, -0.5, 0.0, 0.3, 1.7] {
            assert_eq!(h(0.0, phi).unwrap(), phi.tanh());
        }
    }

    #[test]
    fn h_saturates_for_large_v() {
        assert!(h(100.0, 0.0).unwrap() > 1.0 - 1e-6);
        assert_eq!(h(5e3, 0.0).unwrap(), 1.0);
        assert_eq!(h(5e3, -2.0).unwrap(), 1.0);
    }

    #[test]
    fn h_rejects_negative_v() {
        assert!(h(-0.1, 0.0).is_err());
        assert!(h_prime(0.0, 0.0).is_err());
        assert!(h_prime(-1.0, 0.0).is_err());
    }

    #[test]
    fn h_matches_monte_carlo_oracle() {
        // 10^7 standard normal draws pin E[tanh(1 + Z)] to ~3 decimals.
        let mut rng = rng_from_seed(123);
        let n = 10_000_000usize;
        let mut acc = 0.0f64;
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            acc += (1.0 + z).tanh();
        }
        let mc = acc / n as f64;
        let got = h(1.0, 0.0).unwrap();
        // sd of tanh(1+Z) is ~0.55, so the MC mean has se ~1.7e-4.
        assert!((got - mc).abs() < 1e-3, "{got} vs MC {mc}");
    }

    #[test]
    fn h_matches_high_precision_references() {
        // 50-digit quadrature references.
        let phi001 = -2.2975885509;
        let cases = [
            (1.0, 0.0, 0.55040049079332717029),
            (0.5625, 0.0, 0.3807329607587821898),
            (2.0, 0.3, 0.8309590223683872687),
            (0.2025, 0.0, 0.17089838577781054027),
            (5.0, 0.0, 0.96153718863061732256),
            (10.0, -1.0, 0.99371071539120037795),
            (0.088, phi001, -0.9718464290666372689),
            (50.0, 0.0, 0.99999999999759574748),
        ];
        for (v, phi, want) in cases {
            let got = h(v, phi).unwrap();
            assert!(
                (got - want).abs() < 1e-12,
                "h({v}, {phi}) = {got} vs {want}"
            );
        }
    }

    #[test]
    fn h_prime_limit_at_zero_is_one() {
        let hp = h_prime(1e-6, 0.0).unwrap();
        assert!((0.99..=1.001).contains(&hp), "{hp}");
        assert!((h_prime_at_zero(0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn h_prime_is_nonnegative() {
        for &v in &[1e-6, 0.01, 0.3, 1.0, 4.0, 20.0, 300.0] {
            for &phi in &[-2.3, -0.4, 0.0, 0.4, 2.3] {
                assert!(h_prime(v, phi).unwrap() >= -1e-15);
            }
        }
    }

    #[test]
    fn h_prime_matches_central_finite_difference() {
        let eps = 1e-5;
        let fd = (h(2.0 + eps, 0.3).unwrap() - h(2.0 - eps, 0.3).unwrap()) / (2.0 * eps);
        let got = h_prime(2.0, 0.3).unwrap();
        assert!((got - fd).abs() < 1e-6, "{got} vs fd {fd}");
    }

    #[test]
    fn h_prime_matches_high_precision_references() {
        let cases = [
            (1.0, 0.0, 0.31655534540439446838),
            (2.0, 0.3, 0.10708446954348420849),
            (0.5, 0.0, 0.50605545200476796025),
        ];
        for (v, phi, want) in cases {
            let got = h_prime(v, phi).unwrap();
            assert!(
                (got - want).abs() < 1e-12,
                "h'({v}, {phi}) = {got} vs {want}"
            );
        }
    }

    #[test]
    fn quadrature_self_consistency() {
        // Doubling the panel count moves h by less than 1e-10 everywhere.
        let fine = NormalQuadrature::with_panels(2 * DEFAULT_PANELS);
        for &v in &[1e-8, 1e-3, 0.1, 1.0, 2.0, 5.0, 10.0, 25.0, 80.0, 400.0, 999.0] {
            for &phi in &[0.0, -2.2975885509] {
                let a = h(v, phi).unwrap();
                let b = h_with_rule(v, phi, &fine).unwrap();
                assert!((a - b).abs() < 1e-10, "v={v} phi={phi}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn de_step_from_zero_matches_closed_form() {
        for (rho, mu, nu) in [
            (0.5, 3.0, 0.0),
            (0.3, 2.0, 1.0),
            (0.25, 4.0, -0.5),
            (0.7, 1.0, 2.0),
        ] {
            let p = params(rho, 64.0, mu, nu);
            let want = (rho * mu - (1.0 - rho) * nu).powi(2) / 4.0;
            let got = de_step(0.0, &p).unwrap();
            assert!(
                (got - want).abs() < 1e-12,
                "({rho},{mu},{nu}): {got} vs {want}"
            );
        }
    }

    #[test]
    fn de_step_symmetric_zero_is_fixed() {
        let p = params(0.5, 64.0, 3.0, 3.0);
        assert_eq!(de_step(0.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn de_step_matches_monte_carlo_at_w1() {
        // w_2 = theta + lambda E[tanh(w_1 + sqrt(w_1) Z)] via 10^7 draws.
        let p = params(0.5, 16.0, 4.0, 0.0);
        let w1 = p.theta + p.lambda;
        let mut rng = rng_from_seed(77);
        let n = 10_000_000usize;
        let mut acc = 0.0f64;
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            acc += (w1 + w1.sqrt() * z + p.phi).tanh();
        }
        let mc = p.theta + p.lambda * acc / n as f64;
        let got = de_step(w1, &p).unwrap();
        assert!((got - mc).abs() < 1e-3, "{got} vs MC {mc}");
    }

    #[test]
    fn canonicalization_leaves_the_map_invariant() {
        // Swapping cluster roles leaves theta + lambda h(v, phi) unchanged.
        for (rho, mu, nu) in [(0.7, 1.0, 2.5), (0.85, -0.5, 1.5), (0.6, 3.0, 0.0)] {
            let p = params(rho, 100.0, mu, nu);
            let q = p.swapped();
            for &v in &[0.0, 0.2, 1.0, 3.7] {
                let direct = p.theta + p.lambda * h(v, p.phi).unwrap();
                let swapped = q.theta + q.lambda * h(v, q.phi).unwrap();
                assert!(
                    (direct - swapped).abs() < 1e-12,
                    "({rho},{mu},{nu}) at v={v}: {direct} vs {swapped}"
                );
            }
        }
    }

    #[test]
    fn trajectory_v_is_identically_zero_in_subcritical_symmetric_case() {
        let p = params(0.5, 64.0, 1.0, 1.0);
        let traj = trajectory(&p, TrajectoryKind::V, None, 20, 1e-14).unwrap();
        assert!(traj.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn trajectory_w_starts_at_theta_plus_lambda() {
        let p = params(0.35, 49.0, 2.0, 1.0);
        let traj = trajectory(&p, TrajectoryKind::W, None, 5, 1e-12).unwrap();
        let want = (p.rho * p.mu * p.mu + (1.0 - p.rho) * p.nu * p.nu) / 4.0;
        assert!((traj.values[0] - want).abs() < 1e-12);
        assert_eq!(traj.first_t, 1);
    }

    #[test]
    fn trajectories_are_monotone() {
        let mut rng = rng_from_seed(555);
        for _ in 0..20 {
            let rho = rng.gen_range(0.05..0.95);
            let mu = rng.gen_range(-4.0..4.0f64);
            let nu = rng.gen_range(-4.0..4.0f64);
            let p = match derive_params(1_000_000, rho, 64.0, mu, nu) {
                Ok(p) => p,
                Err(_) => continue,
            };
            let v = trajectory(&p, TrajectoryKind::V, None, 60, 1e-13).unwrap();
            for w in v.values.windows(2) {
                assert!(w[1] >= w[0] - 1e-12, "v_t not nondecreasing: {w:?}");
            }
            let w = trajectory(&p, TrajectoryKind::W, None, 60, 1e-13).unwrap();
            for pair in w.values.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-12, "w_t not nonincreasing: {pair:?}");
            }
        }
    }

    #[test]
    fn trajectory_u_requires_symmetry_and_valid_alpha() {
        let p = params(0.5, 64.0, 3.0, 3.0);
        assert!(trajectory(&p, TrajectoryKind::U, Some(0.6), 5, 1e-10).is_err());
        assert!(trajectory(&p, TrajectoryKind::U, Some(0.5), 5, 1e-10).is_err());
        assert!(trajectory(&p, TrajectoryKind::U, None, 5, 1e-10).is_err());
        let asym = params(0.5, 64.0, 3.0, 0.0);
        assert!(trajectory(&asym, TrajectoryKind::U, Some(0.1), 5, 1e-10).is_err());
        // u_1 = (1 - 2 alpha)^2 mu^2 / 4
        let traj = trajectory(&p, TrajectoryKind::U, Some(0.25), 8, 1e-12).unwrap();
        assert!((traj.values[0] - 0.25 * 9.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn fixed_points_unique_in_balanced_asymmetric_cases() {
        // 50-digit iteration references for the balanced cases.
        let cases = [
            (3.0, 0.0, 0.84193594585932819538),
            (4.0, 1.0, 1.681840576511),
            (2.0, -1.0, 0.587013541276),
        ];
        for (mu, nu, want) in cases {
            let p = params(0.5, 100.0, mu, nu);
            let fp = fixed_points(&p, 1e-8).unwrap();
            assert!(fp.unique, "({mu},{nu}) should have a unique fixed point");
            assert!((fp.v_lower - fp.v_upper).abs() < 1e-8);
            assert!(fp.residual_lower < 1e-10);
            assert!(fp.residual_upper < 1e-10);
            assert!(
                (fp.v_lower - want).abs() < 1e-9,
                "({mu},{nu}): {} vs {want}",
                fp.v_lower
            );
        }
    }

    #[test]
    fn fixed_points_split_in_unbalanced_case() {
        let p = params(0.01, 100.0, 50.0, 0.0);
        let fp = fixed_points(&p, 1e-8).unwrap();
        assert!(!fp.unique);
        assert!(fp.v_upper - fp.v_lower > 0.1);
        assert!((fp.v_lower - 0.08797710).abs() < 1e-6);
        assert!((fp.v_upper - 5.67168543).abs() < 1e-6);
    }

    #[test]
    fn fixed_points_at_zero_in_subcritical_symmetric_case() {
        let p = params(0.5, 64.0, 1.0, 1.0);
        let fp = fixed_points(&p, 1e-8).unwrap();
        assert_eq!(fp.v_lower, 0.0);
        assert!(fp.v_upper.abs() < 1e-9);
        assert!(fp.unique);
    }

    #[test]
    fn fixed_points_respect_sandwich_bounds() {
        let mut rng = rng_from_seed(901);
        for _ in 0..25 {
            let rho = rng.gen_range(0.05..0.95);
            let mu = rng.gen_range(-4.0..4.0f64);
            let nu = rng.gen_range(-4.0..4.0f64);
            let p = match derive_params(1_000_000, rho, 64.0, mu, nu) {
                Ok(p) => p,
                Err(_) => continue,
            };
            let fp = fixed_points(&p, 1e-9).unwrap();
            let lo = (rho * mu - (1.0 - rho) * nu).powi(2) / 4.0;
            let hi = (rho * mu * mu + (1.0 - rho) * nu * nu) / 4.0;
            assert!(fp.v_lower >= lo - 1e-9, "{} < {lo}", fp.v_lower);
            assert!(fp.v_lower <= fp.v_upper + 1e-9);
            assert!(fp.v_upper <= hi + 1e-9, "{} > {hi}", fp.v_upper);
        }
    }

    #[test]
    fn predictor_boundary_values() {
        assert_eq!(predicted_misclassification(0.0, 0.3).unwrap(), 0.3);
        assert!((predicted_misclassification(0.0, 0.8).unwrap() - 0.2).abs() < 1e-15);
        // rho = 1/2 collapses to Q(sqrt(v)).
        for &v in &[0.3, 1.0, 2.5] {
            let got = predicted_misclassification(v, 0.5).unwrap();
            assert!((got - q_function(v.sqrt())).abs() < 1e-15);
        }
        assert!(predicted_misclassification(100.0, 0.5).unwrap() < 1e-6);
        assert!(predicted_misclassification(-1.0, 0.5).is_err());
        assert!(predicted_misclassification(1.0, 0.0).is_err());
    }

    #[test]
    fn predictor_is_bounded_and_monotone_for_balanced_rho() {
        let grid = linspace(0.0, 8.0, 81);
        let mut prev = f64::INFINITY;
        for &v in &grid {
            let p = predicted_misclassification(v, 0.5).unwrap();
            assert!((0.0..=0.5 + 1e-15).contains(&p));
            assert!(p <= prev + 1e-15, "not nonincreasing at v={v}");
            prev = p;
        }
        for &v in &grid {
            for &rho in &[0.1, 0.3, 0.7] {
                let p = predicted_misclassification(v, rho).unwrap();
                assert!(p <= rho.min(1.0 - rho) + 1e-12);
            }
        }
    }

    #[test]
    fn scan_shapes_match_the_map_geometry() {
        // Balanced rho: h' nonincreasing across the grid.
        let grid = linspace(0.0, 6.0, 121);
        let scans = scan_fixed_points(&[params(0.5, 100.0, 3.0, 0.0)], &grid).unwrap();
        let hp: Vec<f64> = scans[0].rows.iter().map(|r| r.h_prime).collect();
        for w in hp.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "h' rose on a balanced grid: {w:?}");
        }
        // Strongly unbalanced rho: h' rises somewhere near zero.
        let scans = scan_fixed_points(&[params(0.05, 100.0, 3.0, 0.0)], &grid).unwrap();
        let hp: Vec<f64> = scans[0].rows.iter().map(|r| r.h_prime).collect();
        assert!(
            hp.windows(2).any(|w| w[1] > w[0] + 1e-6),
            "h' should increase for small v when rho = 0.05"
        );
        // Three fixed points in the unbalanced two-signal case.
        let p = params(0.01, 100.0, 40.0, 1.5);
        let grid = linspace(0.0, p.theta + p.lambda, 2001);
        let scans = scan_fixed_points(&[p], &grid).unwrap();
        assert_eq!(scans[0].brackets.len(), 3, "{:?}", scans[0].brackets);
    }

    #[test]
    fn h_concavity_at_zero_phi() {
        // Second differences of h stay below 1e-8 on a phi = 0 grid.
        let grid = linspace(0.01, 6.0, 120);
        for w in grid.windows(3) {
            let (a, b, c) = (
                h(w[0], 0.0).unwrap(),
                h(w[1], 0.0).unwrap(),
                h(w[2], 0.0).unwrap(),
            );
            assert!(a - 2.0 * b + c <= 1e-8, "convex at {w:?}");
        }
    }
}
