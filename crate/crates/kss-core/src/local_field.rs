//! The rescaled local field `Y_d(phi^{-1}(u / sqrt d))` around `e_0` and its
//! Bargmann-Fock limit with covariance `exp(-|u - v|^2 / 2)`.

use crate::error::{invalid, KssError, Result};
use crate::kac_rice::h_limit;
use crate::kss_model::HomogeneousSystem;
use crate::partition::cap_chart;
use crate::quadrature::Rule;
use crate::rng::aux_rng;
use crate::stats::Moments;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// `sqrt(1 - a) - 1` without cancellation.
fn sqrt1m_minus1(a: f64) -> f64 {
    -a / (1.0 + (1.0 - a).sqrt())
}

/// Covariance of the local field at finite degree:
/// `<phi^{-1}(u/sqrt d), phi^{-1}(v/sqrt d)>^d`.
pub fn local_covariance(u: &[f64], v: &[f64], d: usize) -> Result<f64> {
    if u.len() != v.len() {
        return Err(invalid("u and v must have the same dimension"));
    }
    let df = d as f64;
    let a: f64 = u.iter().map(|x| x * x).sum::<f64>() / df;
    let b: f64 = v.iter().map(|x| x * x).sum::<f64>() / df;
    if a >= 1.0 || b >= 1.0 {
        return Err(invalid("|u| and |v| must be below sqrt(d)"));
    }
    let (sa, sb) = (sqrt1m_minus1(a), sqrt1m_minus1(b));
    let uv: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>() / df;
    let excess = sa + sb + sa * sb + uv;
    Ok((df * excess.ln_1p()).exp())
}

/// `Gamma(u, v)` with the Hessian of `w -> exp(-|w|^2/2)` at `w = u - v`:
/// `exp(-|w|^2/2) H_2(w_i)` on the diagonal and `exp(-|w|^2/2) w_i w_j` off it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitCovariance {
    pub value: f64,
    pub hessian: Vec<Vec<f64>>,
}

pub fn limit_covariance(u: &[f64], v: &[f64]) -> LimitCovariance {
    let w: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
    let g = (-0.5 * w.iter().map(|x| x * x).sum::<f64>()).exp();
    let m = w.len();
    let hessian = (0..m)
        .map(|i| (0..m).map(|j| g * (w[i] * w[j] - if i == j { 1.0 } else { 0.0 })).collect())
        .collect();
    LimitCovariance { value: g, hessian }
}

/// The rescaled field `Y_d(phi^{-1}(u / sqrt d))` of a homogenized system.
pub fn local_field_value(sys: &HomogeneousSystem, u: &[f64]) -> Result<Vec<f64>> {
    let sd = (sys.d as f64).sqrt();
    let scaled: Vec<f64> = u.iter().map(|x| x / sd).collect();
    Ok(sys.eval(&cap_chart(&scaled)?))
}

/// `sup |cov_d(u, v) - Gamma(u, v)|` over all pairs of grid points.
pub fn covariance_sup_error(grid: &GridSpec, d: usize) -> Result<f64> {
    let pts = grid.points()?;
    let mut sup = 0.0f64;
    for p in &pts {
        for q in &pts {
            sup = sup.max((local_covariance(p, q, d)? - limit_covariance(p, q).value).abs());
        }
    }
    Ok(sup)
}

/// Empirical covariance of sampled limit fields against `Gamma` at every
/// pair `i <= j` of grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledCovarianceCheck {
    pub n_fields: usize,
    pub pairs: usize,
    /// Largest `|empirical - Gamma| / se` over the pairs.
    pub max_z: f64,
    pub max_abs_error: f64,
}

pub fn sampled_covariance_check(grid: &GridSpec, n_fields: usize, seed: u64) -> Result<SampledCovarianceCheck> {
    let pts = grid.points()?;
    let s = sample_limit_field(&pts, 1, n_fields, seed)?;
    let mut out = SampledCovarianceCheck { n_fields, pairs: 0, max_z: 0.0, max_abs_error: 0.0 };
    for i in 0..pts.len() {
        for j in i..pts.len() {
            let mut mom = Moments::new();
            for f in 0..n_fields {
                mom.push(s.value(f, 0, i) * s.value(f, 0, j));
            }
            let err = (mom.mean - limit_covariance(&pts[i], &pts[j]).value).abs();
            out.pairs += 1;
            out.max_abs_error = out.max_abs_error.max(err);
            out.max_z = out.max_z.max(err / mom.std_error());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityReport {
    pub delta: f64,
    pub value: f64,
    pub value_refined: f64,
    /// Log-log slope of `|Gamma''(u) - Gamma''(0)|` between `|u| = 1e-3` and `1e-2`.
    pub slope_near_zero: f64,
}

fn hessian_excess_norm(u: &[f64]) -> f64 {
    let zero = vec![0.0; u.len()];
    let h = limit_covariance(u, &zero).hessian;
    let mut s = 0.0;
    for (i, row) in h.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let e = v + if i == j { 1.0 } else { 0.0 };
            s += e * e;
        }
    }
    s.sqrt()
}

fn sphere_average_integral(m: usize, nodes: usize, f: &dyn Fn(&[f64]) -> f64) -> f64 {
    // Integral over S^{m-1} in hyperspherical angles.
    if m == 1 {
        return f(&[1.0]) + f(&[-1.0]);
    }
    let k = m - 1;
    let rules: Vec<Rule> = (0..k)
        .map(|j| if j + 1 == k { Rule::new(nodes, 0.0, 2.0 * PI) } else { Rule::new(nodes, 0.0, PI) })
        .collect();
    let mut total = 0.0;
    let mut idx = vec![0usize; k];
    loop {
        let th: Vec<f64> = (0..k).map(|j| rules[j].nodes[idx[j]]).collect();
        let mut w = 1.0;
        for j in 0..k {
            w *= rules[j].weights[idx[j]] * th[j].sin().powi((k - 1 - j) as i32);
        }
        total += w * f(&crate::partition::hyperspherical_to_cartesian(&th));
        let mut j = 0;
        loop {
            if j == k {
                return total;
            }
            idx[j] += 1;
            if idx[j] < nodes {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

fn integrability_value(m: usize, delta: f64, nodes: usize) -> f64 {
    let radial = Rule::new(nodes, 0.0, delta);
    radial.integrate(|rho| {
        sphere_average_integral(m, nodes.min(32), &|w: &[f64]| {
            let u: Vec<f64> = w.iter().map(|x| x * rho).collect();
            hessian_excess_norm(&u)
        }) / rho
    })
}

/// `int_{B(0, delta)} |Gamma''(u) - Gamma''(0)|_F / |u|^m du` in polar coordinates.
pub fn integrability_check(m: usize, delta: f64, nodes: usize) -> Result<IntegrabilityReport> {
    if !(delta > 0.0 && delta <= 1.0) || m == 0 {
        return Err(invalid("need m >= 1 and delta in (0, 1]"));
    }
    let value = integrability_value(m, delta, nodes);
    let value_refined = integrability_value(m, delta, 2 * nodes);
    let mut e = vec![0.0; m];
    e[0] = 1e-3;
    let g1 = hessian_excess_norm(&e);
    e[0] = 1e-2;
    let g2 = hessian_excess_norm(&e);
    let slope_near_zero = (g2 / g1).ln() / 10f64.ln();
    Ok(IntegrabilityReport { delta, value, value_refined, slope_near_zero })
}

/// Points of a regular grid on `[-half, half]^m` with `n` points per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub m: usize,
    pub half_width: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn points(&self) -> Result<Vec<Vec<f64>>> {
        if self.n < 2 || self.half_width <= 0.0 || self.m == 0 {
            return Err(invalid("grid needs n >= 2, half_width > 0, m >= 1"));
        }
        let h = 2.0 * self.half_width / (self.n - 1) as f64;
        Ok((0..self.n.pow(self.m as u32))
            .map(|mut code| {
                (0..self.m)
                    .map(|_| {
                        let v = -self.half_width + (code % self.n) as f64 * h;
                        code /= self.n;
                        v
                    })
                    .collect()
            })
            .collect())
    }
}

/// Independent draws of the `m` limit-field coordinates on a point set.
/// `values[(f * coords + l) * points.len() + i]` is draw `f`, coordinate `l`, point `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSamples {
    pub points: Vec<Vec<f64>>,
    pub n_fields: usize,
    pub coords: usize,
    pub values: Vec<f64>,
    pub jitter_applied: bool,
    pub min_gram_eigenvalue: f64,
}

impl FieldSamples {
    pub fn value(&self, field: usize, coord: usize, point: usize) -> f64 {
        self.values[(field * self.coords + coord) * self.points.len() + point]
    }
}

/// Gram matrix of `Gamma` on the points.
pub fn limit_gram(points: &[Vec<f64>]) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |i, j| limit_covariance(&points[i], &points[j]).value)
}

/// Samples through a Cholesky factor of the Gram matrix, retrying once with
/// `1e-10` added to the diagonal.
pub fn sample_limit_field(points: &[Vec<f64>], coords: usize, n_fields: usize, seed: u64) -> Result<FieldSamples> {
    let gram = limit_gram(points);
    let min_gram_eigenvalue = gram.clone().symmetric_eigenvalues().min();
    let (l, jitter_applied) = match Cholesky::new(gram.clone()) {
        Some(c) => (c.l(), false),
        None => {
            let n = gram.nrows();
            let g = gram + DMatrix::identity(n, n) * 1e-10;
            match Cholesky::new(g) {
                Some(c) => (c.l(), true),
                None => return Err(KssError::Numerical("Gram matrix not factorizable after jitter".into())),
            }
        }
    };
    let n = points.len();
    let mut rng = aux_rng(seed, 0x1f);
    let mut values = Vec::with_capacity(n_fields * coords * n);
    for _ in 0..n_fields * coords {
        let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        values.extend((&l * z).iter());
    }
    Ok(FieldSamples { points: points.to_vec(), n_fields, coords, values, jitter_applied, min_gram_eigenvalue })
}

/// Terms of the series `X(u) = exp(-|u|^2/2) sum_k xi_k u^k / sqrt(k!)` per axis.
pub const FOCK_TERMS: usize = 24;

/// Configuration of [`limit_variance_mc`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitCountConfig {
    /// Sign-change grid spacing for `m = 1`.
    pub spacing: f64,
    /// Newton seed spacing for `m = 2`.
    pub seed_spacing: f64,
}

impl Default for LimitCountConfig {
    fn default() -> Self {
        LimitCountConfig { spacing: 0.01, seed_spacing: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitCountReport {
    pub m: usize,
    pub n_fields: usize,
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    /// Standard error of the variance, widened by the refinement disagreement rate.
    pub variance_se: f64,
    /// Fields whose count changed when the grid was halved.
    pub refinement_disagreements: usize,
}

fn scaled_powers(x: f64, out: &mut [f64]) {
    let mut v = 1.0;
    for (k, o) in out.iter_mut().enumerate() {
        if k > 0 {
            v *= x / (k as f64).sqrt();
        }
        *o = v;
    }
}

fn count_sign_changes(xi: &[f64], h: f64, buf: &mut [f64]) -> usize {
    let n = (1.0 / h).round() as usize;
    let mut prev = 0.0;
    let mut count = 0;
    for i in 0..=n {
        let u = -0.5 + i as f64 / n as f64;
        scaled_powers(u, buf);
        let v: f64 = xi.iter().zip(buf.iter()).map(|(a, b)| a * b).sum();
        if i > 0 && (prev < 0.0) != (v < 0.0) {
            count += 1;
        }
        prev = v;
    }
    count
}

struct Field2 {
    xi: [Vec<f64>; 2],
    k: usize,
}

fn scaled_power_derivatives(p: &[f64], out: &mut [f64]) {
    out[0] = 0.0;
    for j in 1..p.len() {
        out[j] = (j as f64).sqrt() * p[j - 1];
    }
}

struct Work {
    pa: Vec<f64>,
    pb: Vec<f64>,
    da: Vec<f64>,
    db: Vec<f64>,
}

impl Field2 {
    fn eval(&self, u: [f64; 2], w: &mut Work) -> ([f64; 2], [[f64; 2]; 2]) {
        let k = self.k;
        scaled_powers(u[0], &mut w.pa);
        scaled_powers(u[1], &mut w.pb);
        scaled_power_derivatives(&w.pa, &mut w.da);
        scaled_power_derivatives(&w.pb, &mut w.db);
        let mut val = [0.0; 2];
        let mut jac = [[0.0; 2]; 2];
        for l in 0..2 {
            for j in 0..k {
                let row = &self.xi[l][j * k..(j + 1) * k];
                let (mut t, mut td) = (0.0, 0.0);
                for q in 0..k {
                    t += row[q] * w.pb[q];
                    td += row[q] * w.db[q];
                }
                val[l] += w.pa[j] * t;
                jac[l][0] += w.da[j] * t;
                jac[l][1] += w.pa[j] * td;
            }
        }
        (val, jac)
    }

    fn count(&self, spacing: f64) -> usize {
        let mut w = Work { pa: vec![0.0; self.k], pb: vec![0.0; self.k], da: vec![0.0; self.k], db: vec![0.0; self.k] };
        let n = (1.2 / spacing).round() as usize;
        let mut roots: Vec<[f64; 2]> = Vec::new();
        for i in 0..=n {
            for j in 0..=n {
                let mut u = [-0.6 + 1.2 * i as f64 / n as f64, -0.6 + 1.2 * j as f64 / n as f64];
                let mut ok = false;
                for _ in 0..40 {
                    let (v, jac) = self.eval(u, &mut w);
                    let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
                    if det == 0.0 {
                        break;
                    }
                    let s0 = (jac[1][1] * v[0] - jac[0][1] * v[1]) / det;
                    let s1 = (jac[0][0] * v[1] - jac[1][0] * v[0]) / det;
                    let step = (s0 * s0 + s1 * s1).sqrt();
                    let cap = 0.5 * spacing;
                    let sc = if step > cap { cap / step } else { 1.0 };
                    u = [u[0] - sc * s0, u[1] - sc * s1];
                    if u[0].abs() > 1.0 || u[1].abs() > 1.0 {
                        break;
                    }
                    if step < 1e-13 {
                        ok = true;
                        break;
                    }
                }
                if ok
                    && u[0].abs() <= 0.5
                    && u[1].abs() <= 0.5
                    && !roots.iter().any(|r| (r[0] - u[0]).hypot(r[1] - u[1]) < 1e-7)
                {
                    roots.push(u);
                }
            }
        }
        roots.len()
    }
}

/// Monte Carlo mean and variance of the number of zeros of the limit field
/// in `[-1/2, 1/2]^m`, `m` in `{1, 2}`, evaluated through the series
/// representation of the Bargmann-Fock field.
pub fn limit_variance_mc(m: usize, n_fields: usize, seed: u64, cfg: LimitCountConfig) -> Result<LimitCountReport> {
    if !(m == 1 || m == 2) {
        return Err(invalid("limit field counting supports m = 1 or 2"));
    }
    if n_fields < 2 {
        return Err(invalid("need at least two fields"));
    }
    let mut rng = aux_rng(seed, 0x1c);
    let mut mom = Moments::new();
    let mut disagreements = 0;
    if m == 1 {
        let mut buf = vec![0.0; FOCK_TERMS];
        let mut xi = vec![0.0; FOCK_TERMS];
        for _ in 0..n_fields {
            xi.iter_mut().for_each(|x| *x = StandardNormal.sample(&mut rng));
            let c = count_sign_changes(&xi, cfg.spacing, &mut buf);
            if count_sign_changes(&xi, cfg.spacing / 2.0, &mut buf) != c {
                disagreements += 1;
            }
            mom.push(c as f64);
        }
    } else {
        let k = 12;
        for _ in 0..n_fields {
            let mut draw = || (0..k * k).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>();
            let f = Field2 { xi: [draw(), draw()], k };
            let c = f.count(cfg.seed_spacing);
            if f.count(cfg.seed_spacing / 2.0) != c {
                disagreements += 1;
            }
            mom.push(c as f64);
        }
    }
    let nf = n_fields as f64;
    let var = mom.variance();
    // Standard error of the sample variance from the fourth central moment.
    let m4 = (mom.excess_kurtosis() + 3.0) * var * var;
    let var_se = ((m4 - var * var * (nf - 3.0) / (nf - 1.0)) / nf).max(0.0).sqrt();
    Ok(LimitCountReport {
        m,
        n_fields,
        mean: mom.mean,
        mean_se: mom.std_error(),
        variance: var,
        variance_se: var_se + disagreements as f64 / nf,
        refinement_disagreements: disagreements,
    })
}

/// Variance of the zero count of the `m = 1` limit field on an interval of
/// length `len`: `len/pi + 2 int_0^len (len - t)(K(t) - 1/pi^2) dt` with `K`
/// the two-point Rice density.
pub fn limit_interval_variance_m1(len: f64, nodes: usize) -> Result<f64> {
    let t0 = 1e-2f64.min(len / 4.0);
    let k = |t: f64| -> Result<f64> { Ok(h_limit(t, 1, None)?.value) };
    let inv = 1.0 / (PI * PI);
    let rule = Rule::new(nodes, t0, len);
    let mut total = 0.0;
    for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
        total += w * (len - t) * (k(t)? - inv);
    }
    // K vanishes linearly at 0.
    total += 0.5 * t0 * (len * (0.0 - inv) + (len - t0) * (k(t0)? - inv));
    Ok(len / PI + 2.0 * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kss_model::sample_system;
    use crate::stats::ols_slope;

    #[test]
    fn local_covariance_basics() {
        assert!((local_covariance(&[0.7], &[0.7], 100).unwrap() - 1.0).abs() < 1e-13);
        assert!(local_covariance(&[11.0], &[0.0], 100).is_err());
        let (u, v) = ([0.3, -0.2], [1.1, 0.4]);
        let g = limit_covariance(&u, &v).value;
        let e3 = (local_covariance(&u, &v, 1_000).unwrap() - g).abs();
        let e4 = (local_covariance(&u, &v, 10_000).unwrap() - g).abs();
        assert!((e3 / e4 - 10.0).abs() < 1.0, "{e3} {e4}");
    }

    #[test]
    fn local_covariance_rate() {
        let grid = GridSpec { m: 2, half_width: 1.0, n: 5 };
        let ds = [100usize, 1_000, 10_000];
        let sup: Vec<f64> = ds.iter().map(|&d| covariance_sup_error(&grid, d).unwrap().ln()).collect();
        let xs: Vec<f64> = ds.iter().map(|&d| (d as f64).ln()).collect();
        let slope = ols_slope(&xs, &sup);
        assert!((slope + 1.0).abs() < 0.15, "slope {slope}");
    }

    #[test]
    fn local_covariance_matches_sampled_systems() {
        let d = 100;
        let n = 100_000;
        let pairs = [([0.0], [0.5]), ([-0.4], [0.9]), ([0.2], [2.0])];
        let mut acc = vec![Moments::new(); pairs.len()];
        for r in 0..n {
            let sys = sample_system(1, d, r as u64).unwrap().homogenize();
            for (k, (u, v)) in pairs.iter().enumerate() {
                let a = local_field_value(&sys, u).unwrap()[0];
                let b = local_field_value(&sys, v).unwrap()[0];
                acc[k].push(a * b);
            }
        }
        for (k, (u, v)) in pairs.iter().enumerate() {
            let want = local_covariance(u, v, d).unwrap();
            assert!((acc[k].mean - want).abs() < 3.0 * acc[k].std_error(), "{k}: {} vs {want}", acc[k].mean);
        }
    }

    #[test]
    fn limit_covariance_structure() {
        let c = limit_covariance(&[0.3, 0.1], &[0.3, 0.1]);
        assert_eq!(c.value, 1.0);
        assert!((c.hessian[0][0] + 1.0).abs() < 1e-15);
        assert!(c.hessian[0][1].abs() < 1e-15);
        // Finite-difference Hessian of Gamma(., 0).
        let u = [0.4, -0.7];
        let h = 1e-4;
        let f = |a: f64, b: f64| limit_covariance(&[a, b], &[0.0, 0.0]).value;
        let an = limit_covariance(&u, &[0.0, 0.0]).hessian;
        let fd00 = (f(u[0] + h, u[1]) - 2.0 * f(u[0], u[1]) + f(u[0] - h, u[1])) / (h * h);
        let fd01 = (f(u[0] + h, u[1] + h) - f(u[0] + h, u[1] - h) - f(u[0] - h, u[1] + h) + f(u[0] - h, u[1] - h)) / (4.0 * h * h);
        assert!((fd00 - an[0][0]).abs() < 1e-6);
        assert!((fd01 - an[0][1]).abs() < 1e-6);
        // Stationarity.
        let s = [0.25, -1.0];
        let a = limit_covariance(&[1.0 + s[0], 2.0 + s[1]], &[-0.5 + s[0], 0.3 + s[1]]).value;
        let b = limit_covariance(&[1.0, 2.0], &[-0.5, 0.3]).value;
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn sampled_check_small_grid() {
        let c = sampled_covariance_check(&GridSpec { m: 2, half_width: 0.5, n: 2 }, 20_000, 3).unwrap();
        assert_eq!(c.pairs, 10);
        assert!(c.max_z < 4.0 && c.max_abs_error < 0.05, "{c:?}");
    }

    #[test]
    fn gram_is_psd() {
        let pts = GridSpec { m: 2, half_width: 1.0, n: 7 }.points().unwrap();
        assert!(limit_gram(&pts).symmetric_eigenvalues().min() >= -1e-10);
    }

    #[test]
    fn integrability() {
        let a = integrability_check(1, 0.5, 32).unwrap();
        assert!(a.value.is_finite() && a.value > 0.0);
        assert!(((a.value - a.value_refined) / a.value_refined).abs() < 1e-3);
        assert!((a.slope_near_zero - 2.0).abs() < 0.01);
        let b = integrability_check(1, 1.0, 32).unwrap();
        assert!(b.value > a.value);
        let c = integrability_check(2, 0.5, 32).unwrap();
        assert!(((c.value - c.value_refined) / c.value_refined).abs() < 1e-3);
        // Closed form for m = 1: 2 int_0^delta (1 - e^{-r^2/2}(1 - r^2)) / r dr.
        let want = 2.0 * crate::quadrature::integrate(64, 0.0, 0.5, |r: f64| (1.0 - (-r * r / 2.0).exp() * (1.0 - r * r)) / r);
        assert!((a.value - want).abs() < 1e-10);
    }

    #[test]
    fn sampled_field_covariance() {
        let pts = GridSpec { m: 1, half_width: 1.0, n: 5 }.points().unwrap();
        let n = 10_000;
        let s = sample_limit_field(&pts, 2, n, 4).unwrap();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let mut mom = Moments::new();
                let mut cross = Moments::new();
                for f in 0..n {
                    mom.push(s.value(f, 0, i) * s.value(f, 0, j));
                    cross.push(s.value(f, 0, i) * s.value(f, 1, j));
                }
                let g = limit_covariance(&pts[i], &pts[j]).value;
                assert!((mom.mean - g).abs() < 3.5 * mom.std_error(), "{i} {j}");
                assert!(cross.mean.abs() < 3.5 * cross.std_error());
            }
        }
    }

    #[test]
    fn series_field_has_limit_covariance() {
        let mut rng = aux_rng(6, 6);
        let mut buf_a = vec![0.0; FOCK_TERMS];
        let mut buf_b = vec![0.0; FOCK_TERMS];
        let (u, v) = (-0.5, 0.3);
        scaled_powers(u, &mut buf_a);
        scaled_powers(v, &mut buf_b);
        let exact: f64 = buf_a.iter().zip(&buf_b).map(|(a, b)| a * b).sum::<f64>() * (-(u * u + v * v) / 2.0).exp();
        assert!((exact - limit_covariance(&[u], &[v]).value).abs() < 1e-14);
        let mut mom = Moments::new();
        for _ in 0..50_000 {
            let xi: Vec<f64> = (0..FOCK_TERMS).map(|_| StandardNormal.sample(&mut rng)).collect();
            let a: f64 = xi.iter().zip(&buf_a).map(|(x, p)| x * p).sum();
            let b: f64 = xi.iter().zip(&buf_b).map(|(x, p)| x * p).sum();
            mom.push(a * b * (-(u * u + v * v) / 2.0).exp());
        }
        assert!((mom.mean - exact).abs() < 3.0 * mom.std_error());
    }

    #[test]
    fn limit_counts_m1() {
        let rep = limit_variance_mc(1, 200_000, 1, LimitCountConfig::default()).unwrap();
        assert!((rep.mean - 1.0 / PI).abs() < 3.0 * rep.mean_se, "{rep:?}");
        let oracle = limit_interval_variance_m1(1.0, 64).unwrap();
        assert!(((rep.variance - oracle) / oracle).abs() < 0.05, "{} vs {oracle}", rep.variance);
        assert!(rep.variance > 0.0 && rep.variance.is_finite());
    }

    #[test]
    fn limit_counts_m2() {
        let rep = limit_variance_mc(2, 600, 2, LimitCountConfig::default()).unwrap();
        let want = 1.0 / (2.0 * PI);
        assert!((rep.mean - want).abs() < 3.0 * rep.mean_se, "{rep:?}");
        assert!(rep.variance > 0.0);
    }

    #[test]
    fn interval_variance_oracle_is_stable() {
        let a = limit_interval_variance_m1(1.0, 64).unwrap();
        let b = limit_interval_variance_m1(1.0, 128).unwrap();
        assert!((a - b).abs() < 1e-6);
        assert!(a > 0.0 && a < 1.0 / PI);
    }
}
