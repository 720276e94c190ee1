//! Wiener chaos expansion of the standardized root count.
//!
//! Per equation `l` the standardized vector at a point is
//! `Z_l = (Y_l, Ybar'_l1, ..., Ybar'_lm)`. Chaos indices `gamma` use the same
//! flattened layout: `gamma[l(1+m)] = alpha_l` and
//! `gamma[l(1+m) + 1 + k] = beta_lk`. The integrand
//! `delta_0(y) |det y'|` expands as `sum c_gamma H_gamma(Z)` with
//! `c_gamma = b_alpha f_beta`.

use crate::covariance::{profile, profile_z, Profile};
use crate::error::{invalid, precondition, KssError, Result};
use crate::kac_rice::{default_z_max, variance_constant};
use crate::kss_model::multi_indices;
use crate::quadrature::Rule;
use crate::rng::aux_rng;
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, gamma_ur};
use std::collections::HashMap;
use std::f64::consts::PI;

/// Largest total chaos order accepted by the Mehler enumeration.
pub const MEHLER_MAX_ORDER: u32 = 16;

/// Probabilists' Hermite polynomial `H_n(x)`.
pub fn hermite(n: u32, x: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, x);
    if n == 0 {
        return h0;
    }
    for k in 1..n {
        let h2 = x * h1 - k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// `H_0(x), ..., H_{out.len()-1}(x)`.
pub fn hermite_all(x: f64, out: &mut [f64]) {
    for n in 0..out.len() {
        out[n] = match n {
            0 => 1.0,
            1 => x,
            _ => x * out[n - 1] - (n - 1) as f64 * out[n - 2],
        };
    }
}

fn factorial(n: u32) -> u128 {
    (1..=n as u128).product()
}

/// `prod_i idx_i!`.
pub fn index_factorial(idx: &[u32]) -> f64 {
    idx.iter().map(|&k| factorial(k) as f64).product()
}

/// Coefficient of `H_alpha` in the expansion of `delta_0` on `R^m`.
pub fn b_coeff(alpha: &[u32]) -> f64 {
    alpha
        .iter()
        .map(|&a| {
            if a % 2 == 1 {
                return 0.0;
            }
            let j = (a / 2) as i32;
            (2.0 * PI).sqrt().recip() * (-0.5f64).powi(j) / factorial(j as u32) as f64
        })
        .product()
}

/// Closed form of `f_n = E[|Z| H_n(Z)] / n!` for a scalar standard normal.
pub fn f_coeff_scalar(n: u32) -> f64 {
    if n % 2 == 1 {
        return 0.0;
    }
    let k = (n / 2) as i32;
    let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
    (2.0 / PI).sqrt() * sign / (2f64.powi(k) * factorial(k as u32) as f64 * (2 * k - 1) as f64)
}

/// `f_beta` with its Monte Carlo standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FCoeff {
    pub beta: Vec<u32>,
    pub value: f64,
    pub se: f64,
}

/// One nonzero term `c_gamma H_gamma` of a chaos component.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaosTerm {
    pub gamma: Vec<u32>,
    pub c: f64,
}

/// Hermite coefficients up to total order `q_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosCoefficients {
    pub m: usize,
    pub q_max: u32,
    pub n_mc: usize,
    pub seed: u64,
    pub b: Vec<(Vec<u32>, f64)>,
    pub f: Vec<FCoeff>,
    /// `E[det(G)^2]` on the same batch (exactly `m!`).
    pub f_norm_sq_mc: f64,
    pub warnings: Vec<String>,
    #[serde(skip)]
    f_index: HashMap<Vec<u32>, usize>,
}

/// Default `q_max`: 8 for `m = 1`, 4 otherwise.
pub fn default_q_max(m: usize) -> u32 {
    if m == 1 {
        8
    } else {
        4
    }
}

fn parity_zero(beta: &[u32], m: usize) -> bool {
    (0..m).any(|l| (0..m).map(|k| beta[l * m + k]).sum::<u32>() % 2 == 1)
        || (0..m).any(|k| (0..m).map(|l| beta[l * m + k]).sum::<u32>() % 2 == 1)
}

impl ChaosCoefficients {
    /// Builds all `b_alpha` and `f_beta` with `|alpha|, |beta| <= q_max`.
    /// For `m = 1` the `f` are exact; otherwise one batch of `n_mc` Gaussian
    /// matrices is shared by every `beta`.
    pub fn new(m: usize, q_max: u32, n_mc: usize, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(invalid("m must be at least 1"));
        }
        if q_max > MEHLER_MAX_ORDER {
            return Err(precondition(format!("q_max {q_max} exceeds {MEHLER_MAX_ORDER}")));
        }
        let b = multi_indices(m, q_max as usize)
            .into_iter()
            .map(|a| {
                let v = b_coeff(&a);
                (a, v)
            })
            .collect();
        let betas = multi_indices(m * m, q_max as usize);
        let mut warnings = Vec::new();
        let (f, f_norm_sq_mc) = if m == 1 {
            let f = betas
                .into_iter()
                .map(|beta| FCoeff { value: f_coeff_scalar(beta[0]), se: 0.0, beta })
                .collect();
            (f, 1.0)
        } else {
            if n_mc < 2 {
                return Err(invalid("n_mc must be at least 2"));
            }
            Self::mc_f(m, q_max, &betas, n_mc, seed)
        };
        let fnorm = (factorial(m as u32) as f64).sqrt();
        for fc in &f {
            if fc.se > 0.01 * fnorm {
                warnings.push(format!("f{:?}: standard error {:.3e} exceeds 1% of ||f||", fc.beta, fc.se));
            }
        }
        let f_index = f.iter().enumerate().map(|(i, c)| (c.beta.clone(), i)).collect();
        Ok(ChaosCoefficients { m, q_max, n_mc, seed, b, f, f_norm_sq_mc, warnings, f_index })
    }

    fn mc_f(m: usize, q_max: u32, betas: &[Vec<u32>], n: usize, seed: u64) -> (Vec<FCoeff>, f64) {
        let mm = m * m;
        let live: Vec<usize> = (0..betas.len()).filter(|&i| !parity_zero(&betas[i], m)).collect();
        let mut sum = vec![0.0; betas.len()];
        let mut sum2 = vec![0.0; betas.len()];
        let mut det2 = 0.0;
        let mut rng = aux_rng(seed, 0xf0);
        let stride = q_max as usize + 1;
        let mut h = vec![0.0; mm * stride];
        let mut g = DMatrix::<f64>::zeros(m, m);
        for _ in 0..n {
            for l in 0..m {
                for k in 0..m {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    g[(l, k)] = x;
                    hermite_all(x, &mut h[(l * m + k) * stride..(l * m + k + 1) * stride]);
                }
            }
            let det = g.determinant();
            det2 += det * det;
            let ad = det.abs();
            for &i in &live {
                let mut v = ad;
                for (e, &p) in betas[i].iter().enumerate() {
                    if p > 0 {
                        v *= h[e * stride + p as usize];
                    }
                }
                sum[i] += v;
                sum2[i] += v * v;
            }
        }
        let nf = n as f64;
        let f = betas
            .iter()
            .enumerate()
            .map(|(i, beta)| {
                let fact = index_factorial(beta);
                let mean = sum[i] / nf;
                let var = ((sum2[i] / nf - mean * mean) * nf / (nf - 1.0)).max(0.0);
                FCoeff { beta: beta.clone(), value: mean / fact, se: (var / nf).sqrt() / fact }
            })
            .collect();
        (f, det2 / nf)
    }

    /// `f_beta`, zero outside the table.
    pub fn f_value(&self, beta: &[u32]) -> f64 {
        match self.f_index.get(beta) {
            Some(&i) => self.f[i].value,
            None if self.f_index.is_empty() => self
                .f
                .iter()
                .find(|c| c.beta == beta)
                .map(|c| c.value)
                .unwrap_or(0.0),
            None => 0.0,
        }
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.f_index = self.f.iter().enumerate().map(|(i, c)| (c.beta.clone(), i)).collect();
    }

    /// Splits a flattened chaos index into `(alpha, beta)`.
    pub fn split(&self, gamma: &[u32]) -> (Vec<u32>, Vec<u32>) {
        let m = self.m;
        let alpha = (0..m).map(|l| gamma[l * (1 + m)]).collect();
        let beta = (0..m).flat_map(|l| (0..m).map(move |k| gamma[l * (1 + m) + 1 + k])).collect();
        (alpha, beta)
    }

    pub fn c_coeff(&self, gamma: &[u32]) -> f64 {
        let (alpha, beta) = self.split(gamma);
        b_coeff(&alpha) * self.f_value(&beta)
    }

    /// Nonzero terms of the chaos of order `q`.
    pub fn terms(&self, q: u32) -> Result<Vec<ChaosTerm>> {
        if q > self.q_max {
            return Err(precondition(format!("q = {q} exceeds q_max = {}", self.q_max)));
        }
        let n = self.m * (1 + self.m);
        Ok(multi_indices(n, q as usize)
            .into_iter()
            .filter(|g| g.iter().sum::<u32>() == q)
            .filter_map(|gamma| {
                let c = self.c_coeff(&gamma);
                (c != 0.0).then_some(ChaosTerm { gamma, c })
            })
            .collect())
    }

    /// `||G_q||^2 = sum_{|gamma| = q} c_gamma^2 gamma!`.
    pub fn g_norm_sq(&self, q: u32) -> Result<f64> {
        Ok(self.terms(q)?.iter().map(|t| t.c * t.c * index_factorial(&t.gamma)).sum())
    }

    /// `sum_{|beta| <= q} f_beta^2 beta!`.
    pub fn f_partial_norm_sq(&self, q: u32) -> f64 {
        self.f
            .iter()
            .filter(|c| c.beta.iter().sum::<u32>() <= q)
            .map(|c| c.value * c.value * index_factorial(&c.beta))
            .sum()
    }
}

/// `E[prod_i H_{gamma_i}(X_i) prod_j H_{gamma'_j}(X'_j)]` for standard
/// vectors `X`, `X'` with cross-covariance `r`, by enumeration of
/// nonnegative integer matrices with row sums `gamma` and column sums
/// `gamma'` supported on the nonzero entries of `r`.
pub fn mehler_expectation(gamma: &[u32], gamma_prime: &[u32], r: &DMatrix<f64>) -> Result<f64> {
    let (n1, n2) = (gamma.len(), gamma_prime.len());
    if r.nrows() != n1 || r.ncols() != n2 {
        return Err(invalid("cross-covariance shape does not match the indices"));
    }
    let q: u32 = gamma.iter().sum();
    if q != gamma_prime.iter().sum::<u32>() {
        return Ok(0.0);
    }
    if q > MEHLER_MAX_ORDER {
        return Err(precondition(format!("order {q} exceeds the Mehler budget {MEHLER_MAX_ORDER}")));
    }
    let outer = gamma.iter().chain(gamma_prime).map(|&k| factorial(k)).product::<u128>() as f64;

    struct Walk<'a> {
        r: &'a DMatrix<f64>,
        row_left: Vec<u32>,
        col_left: Vec<u32>,
        total: f64,
    }
    fn go(w: &mut Walk, cell: usize, weight: f64, denom: u128) {
        let n2 = w.col_left.len();
        if cell == w.row_left.len() * n2 {
            if w.col_left.iter().all(|&c| c == 0) {
                w.total += weight / denom as f64;
            }
            return;
        }
        let (i, j) = (cell / n2, cell % n2);
        if j == n2 - 1 {
            let k = w.row_left[i];
            if k > w.col_left[j] || (k > 0 && w.r[(i, j)] == 0.0) {
                return;
            }
            w.row_left[i] = 0;
            w.col_left[j] -= k;
            go(w, cell + 1, weight * w.r[(i, j)].powi(k as i32), denom * factorial(k));
            w.col_left[j] += k;
            w.row_left[i] = k;
            return;
        }
        let cap = if w.r[(i, j)] == 0.0 { 0 } else { w.row_left[i].min(w.col_left[j]) };
        for k in 0..=cap {
            w.row_left[i] -= k;
            w.col_left[j] -= k;
            go(w, cell + 1, weight * w.r[(i, j)].powi(k as i32), denom * factorial(k));
            w.row_left[i] += k;
            w.col_left[j] += k;
        }
    }
    let mut w = Walk { r, row_left: gamma.to_vec(), col_left: gamma_prime.to_vec(), total: 0.0 };
    go(&mut w, 0, 1.0, 1);
    Ok(outer * w.total)
}

/// Mehler sum for one equation's `(Y, Ybar'_1)` pair with cross-covariance
/// `[[C, A], [-A, B]]`: indices `(a, b)` at `s` and `(a2, b2)` at `t`.
pub fn mehler_block(a: u32, b: u32, a2: u32, b2: u32, p: &Profile) -> f64 {
    if a + b != a2 + b2 {
        return 0.0;
    }
    let outer = (factorial(a) * factorial(b) * factorial(a2) * factorial(b2)) as f64;
    let lo = a.saturating_sub(b2).max(a2.saturating_sub(b));
    let hi = a.min(a2);
    let mut total = 0.0;
    for n11 in lo..=hi {
        let n12 = a - n11;
        let n21 = a2 - n11;
        let n22 = b - n21;
        let den = (factorial(n11) * factorial(n12) * factorial(n21) * factorial(n22)) as f64;
        total += p.c.powi(n11 as i32) * p.a.powi(n12 as i32) * (-p.a).powi(n21 as i32) * p.b.powi(n22 as i32) / den;
    }
    outer * total
}

/// `E[H_gamma(Z(s)) H_gamma'(Z(t))]` through the per-equation factorization.
pub fn mehler_factorized(gamma: &[u32], gamma_prime: &[u32], m: usize, p: &Profile) -> f64 {
    let w = 1 + m;
    let mut out = 1.0;
    for l in 0..m {
        let g = &gamma[l * w..(l + 1) * w];
        let h = &gamma_prime[l * w..(l + 1) * w];
        for k in 2..w {
            if g[k] != h[k] {
                return 0.0;
            }
            out *= factorial(g[k]) as f64 * p.dd.powi(g[k] as i32);
        }
        out *= mehler_block(g[0], g[1], h[0], h[1], p);
        if out == 0.0 {
            return 0.0;
        }
    }
    out
}

/// `H_{q,d} = E[G_q(Z(s)) G_q(Z(t))]` for a covariance profile.
pub fn h_q_profile(terms: &[ChaosTerm], m: usize, p: &Profile) -> f64 {
    let mut total = 0.0;
    for t1 in terms {
        for t2 in terms {
            let v = mehler_factorized(&t1.gamma, &t2.gamma, m, p);
            total += t1.c * t2.c * v;
        }
    }
    total
}

/// `H_{q,d}(theta)`.
pub fn h_qd(theta: f64, d: usize, q: u32, coeffs: &ChaosCoefficients) -> Result<f64> {
    let terms = coeffs.terms(q)?;
    Ok(h_q_profile(&terms, coeffs.m, &profile(theta, d)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosVariance {
    pub q: u32,
    pub d: usize,
    pub m: usize,
    /// `Var(I_{q,d})` in the `N_P / d^{m/4}` standardization.
    pub value: f64,
    pub refined: f64,
}

fn chaos_integral(terms: &[ChaosTerm], d: usize, m: usize, z_max: f64, nodes: usize) -> Result<f64> {
    let sd = (d as f64).sqrt();
    let rule = Rule::new(nodes, 0.0, z_max);
    let mut total = 0.0;
    for (&z, &w) in rule.nodes.iter().zip(&rule.weights) {
        let p = profile_z(z, d)?;
        let weight = sd.powi(m as i32 - 1) * (z / sd).sin().powi(m as i32 - 1);
        total += w * weight * h_q_profile(terms, m, &p);
    }
    Ok(variance_constant(m) * total)
}

/// `(kappa_m kappa_{m-1} / 2) d^{(m-1)/2} int_0^{z_max} sin^{m-1}(z/sqrt d) H_{q,d} dz`.
/// `z_max = None` uses `min(10, sqrt(d) pi/2)`.
pub fn chaos_variance(q: u32, d: usize, coeffs: &ChaosCoefficients, z_max: Option<f64>, nodes: usize) -> Result<ChaosVariance> {
    let m = coeffs.m;
    let z_max = z_max.unwrap_or_else(|| default_z_max(d));
    if z_max <= 0.0 || z_max > (d as f64).sqrt() * PI / 2.0 * (1.0 + 1e-12) {
        return Err(precondition(format!("z_max = {z_max} outside (0, sqrt(d) pi/2]")));
    }
    let terms = coeffs.terms(q)?;
    if terms.is_empty() {
        return Ok(ChaosVariance { q, d, m, value: 0.0, refined: 0.0 });
    }
    let v1 = chaos_integral(&terms, d, m, z_max, nodes)?;
    let v2 = chaos_integral(&terms, d, m, z_max, 2 * nodes)?;
    if (v1 - v2).abs() > 0.01 * v2.abs().max(1e-12) {
        return Err(KssError::QuadratureRefinement(format!("q={q} d={d}: {v1} vs {v2}")));
    }
    Ok(ChaosVariance { q, d, m, value: v1, refined: v2 })
}

/// Outcome of the inequality `||G_q||^2 <= ||f||^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GNormCheck {
    pub q: u32,
    pub g_norm_sq: f64,
    pub f_norm_sq: f64,
    pub f_norm_sq_mc: f64,
    pub holds: bool,
}

pub fn g_norm_bound_check(q: u32, coeffs: &ChaosCoefficients) -> Result<GNormCheck> {
    let g = coeffs.g_norm_sq(q)?;
    let f = factorial(coeffs.m as u32) as f64;
    Ok(GNormCheck { q, g_norm_sq: g, f_norm_sq: f, f_norm_sq_mc: coeffs.f_norm_sq_mc, holds: g <= f })
}

/// `d^{m/3} int_0^{pi/2} sin^{m-1}(theta) |r^{(k)}(cos theta)| / d^k dtheta`
/// for `r(x) = x^d`, so that `r^{(k)}/d^k = ((d)_k / d^k) x^{d-k}`.
pub fn contraction_integral(k: u32, d: usize, m: usize) -> Result<f64> {
    if k > 2 {
        return Err(invalid("k must be 0, 1 or 2"));
    }
    if d <= k as usize || m == 0 {
        return Err(invalid("need d > k and m >= 1"));
    }
    let df = d as f64;
    let sd = df.sqrt();
    let falling: f64 = (0..k).map(|i| (df - i as f64) / df).product();
    let e = df - k as f64;
    let upper = (sd * PI / 2.0).min(40.0);
    let integral = crate::quadrature::composite(64, 16, 0.0, upper, |z| {
        let th = z / sd;
        th.sin().powi(m as i32 - 1) * (e * th.cos().ln()).exp()
    });
    Ok(df.powf(m as f64 / 3.0 - 0.5) * falling * integral)
}

/// `C_m ||f||^2 sum_{q >= Q} r0^{q-1} int_a^inf z^{m-1} (1+z) e^{-alpha z^2} dz`
/// with `C_m = kappa_m kappa_{m-1}/2` and `||f||^2 = m!`.
pub fn arcones_tail_bound(q_start: u32, m: usize, a: f64, r0: f64, alpha: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&r0) {
        return Err(invalid(format!("r0 = {r0} must lie in [0, 1)")));
    }
    if q_start == 0 || m == 0 || alpha <= 0.0 || a < 0.0 {
        return Err(invalid("need Q >= 1, m >= 1, alpha > 0, a >= 0"));
    }
    let moment = |p: f64| {
        let s = (p + 1.0) / 2.0;
        gamma_ur(s, alpha * a * a) * gamma(s) / (2.0 * alpha.powf(s))
    };
    let z_int = moment(m as f64 - 1.0) + moment(m as f64);
    let geom = r0.powi(q_start as i32 - 1) / (1.0 - r0);
    Ok(variance_constant(m) * factorial(m as u32) as f64 * geom * z_int)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{cross_covariance, joint_matrix, psd_factor};
    use crate::kac_rice::{h_function, h_independent, variance_quadrature};
    use proptest::prelude::*;

    #[test]
    fn hermite_values() {
        assert_eq!(hermite(2, 2.0), 3.0);
        assert_eq!(hermite(3, 1.0), -2.0);
        let mut out = [0.0; 7];
        hermite_all(0.7, &mut out);
        for n in 0..7 {
            assert!((out[n] - hermite(n as u32, 0.7)).abs() < 1e-12);
        }
    }

    #[test]
    fn hermite_orthogonality_mc() {
        let n = 1_000_000;
        let mut rng = aux_rng(1, 2);
        let mut sum = [[0.0; 7]; 7];
        let mut sum2 = [[0.0; 7]; 7];
        let mut h = [0.0; 7];
        for _ in 0..n {
            hermite_all(StandardNormal.sample(&mut rng), &mut h);
            for p in 0..7 {
                for q in 0..7 {
                    let v = h[p] * h[q];
                    sum[p][q] += v;
                    sum2[p][q] += v * v;
                }
            }
        }
        let nf = n as f64;
        for p in 0..7 {
            for q in 0..7 {
                let mean = sum[p][q] / nf;
                let se = ((sum2[p][q] / nf - mean * mean) / nf).sqrt();
                let want = if p == q { factorial(p as u32) as f64 } else { 0.0 };
                assert!((mean - want).abs() < 3.0 * se + 1e-12, "p={p} q={q}: {mean} ({se})");
            }
        }
    }

    #[test]
    fn b_values() {
        let s = (2.0 * PI).sqrt();
        assert!((b_coeff(&[0]) - 1.0 / s).abs() < 1e-15);
        assert_eq!(b_coeff(&[1]), 0.0);
        assert!((b_coeff(&[2]) + 1.0 / (2.0 * s)).abs() < 1e-15);
        assert!((b_coeff(&[2, 4]) - b_coeff(&[2]) * b_coeff(&[4])).abs() < 1e-15);
    }

    #[test]
    fn scalar_f_closed_forms() {
        assert!((f_coeff_scalar(0) - 0.797_884_560_802_865_4).abs() < 1e-12);
        assert!((f_coeff_scalar(2) - 0.398_942_280_401_432_7).abs() < 1e-12);
        assert_eq!(f_coeff_scalar(1), 0.0);
        // Oracle: E|Z| H_n(Z) / n! by MC.
        let n = 1_000_000;
        let mut rng = aux_rng(4, 4);
        let mut h = [0.0; 9];
        let mut sum = [0.0; 9];
        let mut sum2 = [0.0; 9];
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            hermite_all(x, &mut h);
            for k in 0..9 {
                let v = x.abs() * h[k];
                sum[k] += v;
                sum2[k] += v * v;
            }
        }
        for k in 0..9u32 {
            let nf = n as f64;
            let mean = sum[k as usize] / nf;
            let se = ((sum2[k as usize] / nf - mean * mean) / nf).sqrt();
            let fact = factorial(k) as f64;
            assert!((mean / fact - f_coeff_scalar(k)).abs() < 4.0 * se / fact, "k={k}");
        }
        // Parseval for |x|: sum f_n^2 n! = E Z^2 = 1.
        let s: f64 = (0..34).map(|n| f_coeff_scalar(n).powi(2) * factorial(n) as f64).sum();
        assert!(s < 1.0 && s > 0.99);
    }

    #[test]
    fn matrix_f_coefficients() {
        let c = ChaosCoefficients::new(2, 4, 200_000, 9).unwrap();
        let f0 = &c.f[c.f_index[&vec![0, 0, 0, 0]]];
        assert!((f0.value - 1.0).abs() < 4.0 * f0.se, "E|det| = {}", f0.value);
        for fc in &c.f {
            if parity_zero(&fc.beta, 2) {
                assert_eq!(fc.value, 0.0);
            }
        }
        // Transposition invariance of |det|: f_beta = f_{beta^T}.
        let a = c.f_value(&[2, 0, 0, 0]);
        let b = c.f_value(&[0, 0, 0, 2]);
        assert!((a - b).abs() < 0.02);
        let mut prev = 0.0;
        for q in 0..=4 {
            let s = c.f_partial_norm_sq(q);
            assert!(s >= prev && s <= 2.0 * 1.02);
            prev = s;
        }
        assert!((c.f_norm_sq_mc - 2.0).abs() < 0.05);
        let round: ChaosCoefficients = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(round.f_value(&[2, 0, 0, 0]), a);
    }

    #[test]
    fn mehler_scalar_cases() {
        let r = DMatrix::from_element(1, 1, 0.3);
        assert!((mehler_expectation(&[1], &[1], &r).unwrap() - 0.3).abs() < 1e-15);
        assert!((mehler_expectation(&[2], &[2], &r).unwrap() - 2.0 * 0.09).abs() < 1e-15);
        assert_eq!(mehler_expectation(&[2], &[1], &r).unwrap(), 0.0);
        assert!(mehler_expectation(&[17], &[17], &r).is_err());
    }

    #[test]
    fn mehler_scalar_mc() {
        let rho = 0.6;
        let n = 1_000_000;
        let mut rng = aux_rng(5, 5);
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            let y = rho * x + (1.0 - rho * rho).sqrt() * e;
            let v = hermite(2, x) * hermite(2, y);
            s += v;
            s2 += v * v;
        }
        let nf = n as f64;
        let mean = s / nf;
        let se = ((s2 / nf - mean * mean) / nf).sqrt();
        assert!((mean - 2.0 * rho * rho).abs() < 3.0 * se);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn factorized_matches_enumeration(
            theta in 0.05f64..3.0, d in 3usize..60, m in 1usize..3,
            g in proptest::collection::vec(0u32..3, 6), h in proptest::collection::vec(0u32..3, 6),
        ) {
            let n = m * (1 + m);
            let g = &g[..n];
            let mut h = h[..n].to_vec();
            let diff = g.iter().sum::<u32>() as i64 - h.iter().sum::<u32>() as i64;
            if diff > 0 { h[0] += diff as u32 } else { h[n - 1] += (-diff) as u32 }
            let r = cross_covariance(theta, d, m).unwrap();
            let p = profile(theta, d).unwrap();
            let a = mehler_expectation(g, &h, &r).unwrap();
            let b = mehler_factorized(g, &h, m, &p);
            prop_assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()), "{} vs {}", a, b);
        }

        #[test]
        fn mehler_swaps_with_transpose(theta in 0.05f64..3.0, d in 3usize..40,
            g in proptest::collection::vec(0u32..3, 2), h in proptest::collection::vec(0u32..3, 2)) {
            let r = cross_covariance(theta, d, 1).unwrap();
            let a = mehler_expectation(&g, &h, &r).unwrap();
            let b = mehler_expectation(&h, &g, &r.transpose()).unwrap();
            prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn odd_chaos_vanishes() {
        let c = ChaosCoefficients::new(1, 8, 0, 0).unwrap();
        for q in [1, 3, 5, 7] {
            assert!(c.terms(q).unwrap().is_empty());
            assert_eq!(h_qd(0.3, 50, q, &c).unwrap(), 0.0);
            assert_eq!(c.g_norm_sq(q).unwrap(), 0.0);
        }
        let c2 = ChaosCoefficients::new(2, 3, 1000, 0).unwrap();
        for q in [1, 3] {
            assert!(c2.terms(q).unwrap().is_empty());
        }
    }

    #[test]
    fn h_q_is_even() {
        let c1 = ChaosCoefficients::new(1, 8, 0, 0).unwrap();
        let c2 = ChaosCoefficients::new(2, 4, 20_000, 3).unwrap();
        for d in [10usize, 11, 40] {
            for i in 1..20 {
                let th = i as f64 * 0.075;
                for q in [2, 4, 6] {
                    let a = h_qd(th, d, q, &c1).unwrap();
                    let b = h_qd(PI - th, d, q, &c1).unwrap();
                    assert!((a - b).abs() < 1e-10, "m=1 q={q} d={d} th={th}");
                }
                for q in [2, 4] {
                    let a = h_qd(th, d, q, &c2).unwrap();
                    let b = h_qd(PI - th, d, q, &c2).unwrap();
                    assert!((a - b).abs() < 1e-10, "m=2 q={q} d={d} th={th}");
                }
            }
        }
    }

    /// Oracle: sample (Z(s), Z(t)) from the joint covariance and average
    /// G_q(Z(s)) G_q(Z(t)).
    #[test]
    fn h_q_matches_sampling_oracle() {
        let c = ChaosCoefficients::new(1, 4, 0, 0).unwrap();
        let (theta, d) = (0.25, 30usize);
        let l = psd_factor(&joint_matrix(theta, d, 1).unwrap());
        let mut rng = aux_rng(8, 8);
        let n = 400_000;
        for q in [2u32, 4] {
            let terms = c.terms(q).unwrap();
            let g = |y: f64, yp: f64| -> f64 {
                terms.iter().map(|t| t.c * hermite(t.gamma[0], y) * hermite(t.gamma[1], yp)).sum()
            };
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let e = nalgebra::DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng));
                let x = &l * e;
                let v = g(x[0], x[2]) * g(x[1], x[3]);
                s += v;
                s2 += v * v;
            }
            let nf = n as f64;
            let mean = s / nf;
            let se = ((s2 / nf - mean * mean) / nf).sqrt();
            let exact = h_qd(theta, d, q, &c).unwrap();
            assert!((mean - exact).abs() < 4.0 * se, "q={q}: {mean} vs {exact} ({se})");
        }
    }

    #[test]
    fn chaos_sum_approaches_two_point_function() {
        let c = ChaosCoefficients::new(1, 8, 0, 0).unwrap();
        let (theta, d) = (0.5, 20usize);
        let partial: f64 = (1..=8).map(|q| h_qd(theta, d, q, &c).unwrap()).sum();
        let target = h_function(theta, d, 1, None).unwrap().value - h_independent(1);
        assert!((partial - target).abs() < 0.02 * target.abs() + 1e-4, "{partial} vs {target}");
        assert!((h_qd(theta, d, 0, &c).unwrap() - h_independent(1)).abs() < 1e-15);
    }

    #[test]
    fn chaos_variances_converge_and_obey_parseval() {
        let c = ChaosCoefficients::new(1, 8, 0, 0).unwrap();
        let v: Vec<f64> = [100usize, 400, 1600]
            .iter()
            .map(|&d| chaos_variance(2, d, &c, None, 128).unwrap().value)
            .collect();
        assert!(((v[2] - v[1]) / v[2]).abs() < 0.05, "{v:?}");
        let total = variance_quadrature(400, 1, default_z_max(400), 128, None).unwrap().variance;
        let mut partial = 0.0;
        for q in 1..=8 {
            let cv = chaos_variance(q, 400, &c, None, 128).unwrap().value;
            assert!(cv >= 0.0);
            partial += cv;
            assert!(partial <= total * 1.02, "Q={q}: {partial} > {total}");
        }
        assert!((chaos_variance(2, 400, &c, None, 128).unwrap().value - 0.2115).abs() < 2e-3);
    }

    #[test]
    fn g_norms_are_bounded() {
        let c = ChaosCoefficients::new(1, 8, 0, 0).unwrap();
        for q in [0, 2, 4, 6] {
            let chk = g_norm_bound_check(q, &c).unwrap();
            assert!(chk.holds && chk.g_norm_sq < 0.5 * chk.f_norm_sq);
        }
        assert!((c.g_norm_sq(2).unwrap() - 1.0 / PI.powi(2)).abs() < 1e-4);
    }

    #[test]
    fn contraction_decreases_and_scales() {
        for m in [1usize, 2] {
            for k in 0..3 {
                let a = contraction_integral(k, 100, m).unwrap();
                let b = contraction_integral(k, 10_000, m).unwrap();
                assert!(b < a, "k={k} m={m}");
                let ds = [1e2, 1e3, 1e4, 1e5];
                let xs: Vec<f64> = ds.iter().map(|d: &f64| d.ln()).collect();
                let ys: Vec<f64> = ds.iter().map(|&d| contraction_integral(k, d as usize, m).unwrap().ln()).collect();
                let slope = crate::stats::ols_slope(&xs, &ys);
                assert!((slope + m as f64 / 6.0).abs() < 0.02, "k={k} m={m} slope={slope}");
            }
        }
    }

    #[test]
    fn contraction_matches_wallis_integral() {
        for d in [10usize, 100, 1000, 10_000] {
            let df = d as f64;
            let wallis = (PI.sqrt() / 2.0)
                * (statrs::function::gamma::ln_gamma((df + 1.0) / 2.0) - statrs::function::gamma::ln_gamma(df / 2.0 + 1.0)).exp();
            let want = df.powf(1.0 / 3.0) * wallis;
            let got = contraction_integral(0, d, 1).unwrap();
            assert!(((got - want) / want).abs() < 1e-8, "d={d}");
        }
    }

    #[test]
    fn arcones_bound_behaviour() {
        let b2 = arcones_tail_bound(2, 1, 1.9, 0.8, 0.2).unwrap();
        let b4 = arcones_tail_bound(4, 1, 1.9, 0.8, 0.2).unwrap();
        assert!(b2.is_finite() && b2 > 0.0 && b4 < b2);
        assert!(arcones_tail_bound(200, 1, 1.9, 0.8, 0.2).unwrap() < 1e-12);
        assert!(arcones_tail_bound(2, 1, 1.9, 1.0, 0.2).is_err());
        // z-integral oracle by quadrature.
        let zi = crate::quadrature::composite(64, 16, 1.9, 60.0, |z| (1.0 + z) * (-0.2 * z * z).exp());
        let want = variance_constant(1) * 0.8 / 0.2 * zi;
        assert!(((b2 - want) / want).abs() < 1e-10);
    }
}
