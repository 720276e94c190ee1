//! Kac-Rice expression for the variance of the number of real roots.
//!
//! `H_d(theta)` is the two-point Rice density
//! `E(|det Ybar'(s) det Ybar'(t)| | Y(s)=Y(t)=0) p_{s,t}(0,0)`. Under the
//! conditioning the first tangent column of each equation has variance
//! `sigma^2` and cross-correlation `rho`, the other columns unit variance and
//! cross-correlation `D`, so
//! `H_d = sigma^2 (2 pi)^{-m} (1-C^2)^{-m/2} E|det M_s det M_t|`
//! with standardized entries. For `m = 1` the expectation is
//! `(2/pi)(sqrt(1-rho^2) + rho asin rho)`; for `m >= 2` it is estimated by
//! Monte Carlo with common random numbers across angles.
//!
//! Every zero `s` has the antipodal zero `-s`, which contributes a point mass
//! equal to `E N_Y`; with `N_P = N_Y / 2`
//! `Var(N_P) / d^{m/2} = 1 + (kappa_m kappa_{m-1} / 2) d^{(m-1)/2}
//!   int_0^{sqrt(d) pi/2} sin^{m-1}(z/sqrt d) [H_d - H_inf] dz`.

use crate::covariance::{limit_profile, profile, profile_z, Profile};
use crate::error::{invalid, precondition, KssError, Result};
use crate::quadrature::Rule;
use crate::rng::aux_rng;
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};
use std::f64::consts::PI;

/// Volume of the unit sphere `S^m`.
pub fn kappa(m: usize) -> f64 {
    let a = (m as f64 + 1.0) / 2.0;
    2.0 * PI.powf(a) / gamma(a)
}

/// `E|det G|` for an `m x m` matrix of independent standard normals.
pub fn expected_abs_det(m: usize) -> f64 {
    (1..=m)
        .map(|k| {
            let k = k as f64;
            (0.5f64.ln() * -0.5 + ln_gamma((k + 1.0) / 2.0) - ln_gamma(k / 2.0)).exp()
        })
        .product()
}

/// `H_d(1, 0, 0, 0) = (E|det G|)^2 (2 pi)^{-m}`, the value for independent points.
pub fn h_independent(m: usize) -> f64 {
    expected_abs_det(m).powi(2) * (2.0 * PI).powi(-(m as i32))
}

/// `kappa_m kappa_{m-1} / 2`.
pub fn variance_constant(m: usize) -> f64 {
    kappa(m) * kappa(m - 1) / 2.0
}

/// `E|X Y|` for standard normals with correlation `rho`.
pub fn abs_product_moment(rho: f64) -> f64 {
    let r = rho.clamp(-1.0, 1.0);
    (2.0 / PI) * ((1.0 - r * r).max(0.0).sqrt() + r * r.asin())
}

/// Common random numbers for `E|det M_s det M_t|` with `m >= 2`.
#[derive(Debug, Clone)]
pub struct DetSampler {
    pub m: usize,
    pub n: usize,
    draws: Vec<f64>,
}

impl DetSampler {
    pub fn new(m: usize, n: usize, seed: u64) -> Self {
        let mut rng = aux_rng(seed, 0x4b52);
        let draws = (0..n * 2 * m * m).map(|_| StandardNormal.sample(&mut rng)).collect();
        DetSampler { m, n, draws }
    }

    /// Mean and standard error of `|det M_s det M_t|` where entry `(l, k)`
    /// of the two matrices has correlation `rho` for `k = 0` and `dd` otherwise.
    pub fn estimate(&self, rho: f64, dd: f64) -> (f64, f64) {
        let m = self.m;
        let mm = m * m;
        let (cr, sr) = (rho, (1.0 - rho * rho).max(0.0).sqrt());
        let (cd, sd) = (dd, (1.0 - dd * dd).max(0.0).sqrt());
        let mut a = DMatrix::<f64>::zeros(m, m);
        let mut b = DMatrix::<f64>::zeros(m, m);
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for i in 0..self.n {
            let g = &self.draws[i * 2 * mm..(i + 1) * 2 * mm];
            for l in 0..m {
                for k in 0..m {
                    let x = g[l * m + k];
                    let y = g[mm + l * m + k];
                    let (c, s) = if k == 0 { (cr, sr) } else { (cd, sd) };
                    a[(l, k)] = x;
                    b[(l, k)] = c * x + s * y;
                }
            }
            let v = (det(&a) * det(&b)).abs();
            sum += v;
            sum2 += v * v;
        }
        let n = self.n as f64;
        let mean = sum / n;
        let var = (sum2 / n - mean * mean).max(0.0) * n / (n - 1.0);
        (mean, (var / n).sqrt())
    }
}

fn det(a: &DMatrix<f64>) -> f64 {
    match a.nrows() {
        1 => a[(0, 0)],
        2 => a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)],
        3 => {
            a[(0, 0)] * (a[(1, 1)] * a[(2, 2)] - a[(1, 2)] * a[(2, 1)])
                - a[(0, 1)] * (a[(1, 0)] * a[(2, 2)] - a[(1, 2)] * a[(2, 0)])
                + a[(0, 2)] * (a[(1, 0)] * a[(2, 1)] - a[(1, 1)] * a[(2, 0)])
        }
        _ => a.clone().determinant(),
    }
}

/// Value of `H` with its Monte Carlo standard error (zero for `m = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HValue {
    pub value: f64,
    pub se: f64,
}

/// `H` from a covariance profile. `sampler` is required for `m >= 2`.
pub fn h_from_profile(p: &Profile, m: usize, sampler: Option<&DetSampler>) -> Result<HValue> {
    let (s2, rho) = match (p.sigma2, p.rho) {
        (Some(s), Some(r)) => (s, r),
        _ => return Err(invalid("degenerate covariance profile")),
    };
    let dens = (2.0 * PI).powi(-(m as i32)) * p.one_minus_c2.powf(-(m as f64) / 2.0);
    let pref = s2 * dens;
    if m == 1 {
        return Ok(HValue { value: pref * abs_product_moment(rho), se: 0.0 });
    }
    let smp = sampler.ok_or_else(|| invalid("m >= 2 needs a Monte Carlo sampler"))?;
    if smp.m != m {
        return Err(invalid("sampler dimension mismatch"));
    }
    let (mean, se) = smp.estimate(rho, p.dd);
    Ok(HValue { value: pref * mean, se: pref * se })
}

/// `H - H_inf` without cancellation. For `m = 1` the ratio `H / H_inf`
/// is assembled in log space from `1 - sigma^2 = A^2/(1-C^2)`, `C^2` and
/// `sqrt(1-rho^2) + rho asin rho - 1`.
pub fn h_excess_from_profile(p: &Profile, m: usize, sampler: Option<&DetSampler>) -> Result<HValue> {
    let hinf = h_independent(m);
    if m != 1 {
        let h = h_from_profile(p, m, sampler)?;
        return Ok(HValue { value: h.value - hinf, se: h.se });
    }
    let rho = p.rho.ok_or_else(|| invalid("degenerate covariance profile"))?;
    if p.sigma2.is_none() {
        return Err(invalid("degenerate covariance profile"));
    }
    let one_minus_s2 = (p.a * p.a / p.one_minus_c2).min(1.0);
    let r2 = rho * rho;
    let g1 = if rho.abs() < 1e-3 {
        r2 / 2.0 + r2 * r2 / 24.0 + r2 * r2 * r2 / 80.0
    } else {
        (1.0 - r2).max(0.0).sqrt() + rho * rho.clamp(-1.0, 1.0).asin() - 1.0
    };
    let ln_ratio = (-one_minus_s2).ln_1p() - 0.5 * (-p.c * p.c).ln_1p() + g1.ln_1p();
    Ok(HValue { value: hinf * ln_ratio.exp_m1(), se: 0.0 })
}

/// `H_d(theta)`.
pub fn h_function(theta: f64, d: usize, m: usize, sampler: Option<&DetSampler>) -> Result<HValue> {
    h_from_profile(&profile(theta, d)?, m, sampler)
}

/// `H_d` at `z = sqrt(d) theta`.
pub fn h_function_z(z: f64, d: usize, m: usize, sampler: Option<&DetSampler>) -> Result<HValue> {
    h_from_profile(&profile_z(z, d)?, m, sampler)
}

/// Two-point density of the Bargmann-Fock limit at distance `z`.
pub fn h_limit(z: f64, m: usize, sampler: Option<&DetSampler>) -> Result<HValue> {
    h_from_profile(&limit_profile(z), m, sampler)
}

/// `(H_d(theta), H_d(pi - theta))`.
pub fn h_symmetry(theta: f64, d: usize, m: usize, sampler: Option<&DetSampler>) -> Result<(HValue, HValue)> {
    Ok((h_function(theta, d, m, sampler)?, h_function(PI - theta, d, m, sampler)?))
}

/// Smallest `z` at which the integrand is evaluated; `[0, Z0]` is handled
/// by linear extrapolation.
pub const Z0: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceQuadrature {
    pub d: usize,
    pub m: usize,
    pub z_max: f64,
    pub nodes: usize,
    /// `d^{(m-1)/2} int sin^{m-1}(z/sqrt d) [H_d - H_inf] dz`.
    pub integral: f64,
    /// `Var(N_P) / d^{m/2}`.
    pub variance: f64,
    /// Same quantity with twice the nodes.
    pub variance_refined: f64,
    /// Monte Carlo standard error of `variance` (zero for `m = 1`).
    pub mc_se: f64,
}

/// Default upper limit `min(10, sqrt(d) pi / 2)`.
pub fn default_z_max(d: usize) -> f64 {
    10f64.min((d as f64).sqrt() * PI / 2.0)
}

fn integral_with(d: usize, m: usize, z_max: f64, nodes: usize, sampler: Option<&DetSampler>) -> Result<(f64, f64)> {
    let sd = (d as f64).sqrt();
    let weight = |z: f64| sd.powi(m as i32 - 1) * (z / sd).sin().powi(m as i32 - 1);
    let g = |z: f64| -> Result<(f64, f64)> {
        let h = h_excess_from_profile(&profile_z(z, d)?, m, sampler)?;
        let w = weight(z);
        Ok((w * h.value, w * h.se))
    };
    let rule = Rule::new(nodes, Z0, z_max);
    let mut total = 0.0;
    let mut se_sum = 0.0;
    for (&z, &w) in rule.nodes.iter().zip(&rule.weights) {
        let (v, e) = g(z)?;
        total += w * v;
        // Common random numbers make node errors nearly comonotone.
        se_sum += w * e;
    }
    let (g1, _) = g(Z0)?;
    let (g2, _) = g(2.0 * Z0)?;
    let g0 = 2.0 * g1 - g2;
    total += 0.5 * Z0 * (g0 + g1);
    Ok((total, se_sum.abs()))
}

/// `Var(N_P)/d^{m/2}` by Gauss-Legendre quadrature of the Kac-Rice integrand.
/// Fails with [`KssError::QuadratureRefinement`] when doubling the rule moves
/// the result by more than 1%.
pub fn variance_quadrature(
    d: usize,
    m: usize,
    z_max: f64,
    nodes: usize,
    sampler: Option<&DetSampler>,
) -> Result<VarianceQuadrature> {
    if m == 0 || d < 2 {
        return Err(invalid("need m >= 1 and d >= 2"));
    }
    let limit = (d as f64).sqrt() * PI / 2.0;
    if !(z_max > 2.0 * Z0) || z_max > limit * (1.0 + 1e-12) {
        return Err(precondition(format!("z_max = {z_max} must lie in (2e-3, sqrt(d) pi/2 = {limit}]")));
    }
    let konst = variance_constant(m);
    let (i1, se) = integral_with(d, m, z_max, nodes, sampler)?;
    let (i2, _) = integral_with(d, m, z_max, 2 * nodes, sampler)?;
    let v1 = 1.0 + konst * i1;
    let v2 = 1.0 + konst * i2;
    if ((v2 - v1) / v2).abs() > 0.01 {
        return Err(KssError::QuadratureRefinement(format!(
            "d={d} m={m}: {v1} with {nodes} nodes vs {v2} with {} nodes",
            2 * nodes
        )));
    }
    Ok(VarianceQuadrature {
        d,
        m,
        z_max,
        nodes,
        integral: i1,
        variance: v1,
        variance_refined: v2,
        mc_se: konst * se,
    })
}

/// Largest ratio `|H_d - H_inf| / (1 - sigma^2 + |C| + |rho| + |D|)` over a
/// grid of `n` points in `(0, z_max]`: the constant in the domination bound.
pub fn domination_check(d: usize, m: usize, z_max: f64, n: usize, sampler: Option<&DetSampler>) -> Result<f64> {
    let mut worst = 0.0f64;
    for i in 1..=n {
        let z = z_max * i as f64 / n as f64;
        let p = profile_z(z, d)?;
        let h = h_excess_from_profile(&p, m, sampler)?;
        let den = p.a * p.a / p.one_minus_c2 + p.c.abs() + p.rho.unwrap().abs() + p.dd.abs();
        worst = worst.max((h.value.abs() - 3.0 * h.se).max(0.0) / den);
    }
    Ok(worst)
}
