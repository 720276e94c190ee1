//! KSS ensemble: multi-indices, coefficient variances, sampling and
//! evaluation of the affine and homogeneous forms.

use crate::error::{invalid, precondition, Result};
use crate::rng::{equation_stream, next_normal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// All `j` in `N^m` with `|j| <= d`, in lexicographic order.
pub fn multi_indices(m: usize, d: usize) -> Vec<Vec<u32>> {
    fn rec(m: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(m, left - k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(m, d as u32, &mut Vec::with_capacity(m), &mut out);
    out
}

/// Number of affine monomials of degree at most `d` in `m` variables.
pub fn monomial_count(m: usize, d: usize) -> usize {
    let mut c: u128 = 1;
    for i in 1..=m as u128 {
        c = c * (d as u128 + i) / i;
    }
    c as usize
}

fn ln_factorial(n: u32) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

/// `ln( d! / (j_1! ... j_m! (d-|j|)!) )`.
pub fn log_multinomial_variance(j: &[u32], d: usize) -> f64 {
    let s: u32 = j.iter().sum();
    assert!(s as usize <= d, "multi-index exceeds degree");
    ln_factorial(d as u32) - j.iter().map(|&k| ln_factorial(k)).sum::<f64>() - ln_factorial(d as u32 - s)
}

/// Variance `d! / (j_1! ... j_m! (d-|j|)!)` of the coefficient `a_j`.
///
/// Computed exactly in integers while it fits, otherwise from logarithms.
pub fn multinomial_variance(j: &[u32], d: usize) -> f64 {
    let s: u32 = j.iter().sum();
    assert!(s as usize <= d, "multi-index exceeds degree");
    let mut left = d as u128;
    let mut acc: u128 = 1;
    let mut parts: Vec<u32> = j.to_vec();
    parts.push(d as u32 - s);
    for &k in &parts {
        let mut b: u128 = 1;
        for i in 0..k as u128 {
            b = match b.checked_mul(left - i) {
                Some(v) => v / (i + 1),
                None => return log_multinomial_variance(j, d).exp(),
            };
        }
        acc = match acc.checked_mul(b) {
            Some(v) => v,
            None => return log_multinomial_variance(j, d).exp(),
        };
        left -= k as u128;
    }
    acc as f64
}

/// One sampled (or hand-built) affine system of `m` equations of degree `d`.
///
/// `coeffs[l][k]` is the coefficient of the `k`-th multi-index of
/// [`multi_indices`] in equation `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KssSystem {
    pub m: usize,
    pub d: usize,
    pub seed: u64,
    pub coeffs: Vec<Vec<f64>>,
}

fn check_dims(m: usize, d: usize) -> Result<()> {
    if m == 0 {
        return Err(invalid("m must be at least 1"));
    }
    if d == 0 {
        return Err(invalid("d must be at least 1"));
    }
    Ok(())
}

/// Draw a KSS system. Coefficient `a_j` of equation `l` is
/// `sqrt(var_j) * xi` with `xi` the normal keyed by `(seed, l, rank(j))`.
pub fn sample_system(m: usize, d: usize, seed: u64) -> Result<KssSystem> {
    check_dims(m, d)?;
    let idx = multi_indices(m, d);
    let log_sd: Vec<f64> = idx.iter().map(|j| 0.5 * log_multinomial_variance(j, d)).collect();
    let worst = log_sd.iter().cloned().fold(f64::MIN, f64::max);
    if worst > 700.0 {
        return Err(precondition(format!(
            "coefficient standard deviation exp({worst:.1}) is not representable in f64"
        )));
    }
    let sd: Vec<f64> = log_sd.iter().map(|l| l.exp()).collect();
    let coeffs = (0..m)
        .map(|l| {
            let mut rng = equation_stream(seed, l as u64);
            sd.iter().map(|s| s * next_normal(&mut rng)).collect()
        })
        .collect();
    Ok(KssSystem { m, d, seed, coeffs })
}

impl KssSystem {
    pub fn from_coeffs(m: usize, d: usize, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        check_dims(m, d)?;
        let n = monomial_count(m, d);
        if coeffs.len() != m || coeffs.iter().any(|c| c.len() != n) {
            return Err(invalid(format!("expected {m} coefficient arrays of length {n}")));
        }
        Ok(KssSystem { m, d, seed: 0, coeffs })
    }

    /// Evaluate the affine polynomials at `t` in `R^m`.
    pub fn eval_affine(&self, t: &[f64]) -> Vec<f64> {
        assert_eq!(t.len(), self.m);
        let pw = powers(t, self.d);
        let idx = multi_indices(self.m, self.d);
        self.coeffs
            .iter()
            .map(|c| {
                idx.iter()
                    .zip(c)
                    .map(|(j, a)| a * j.iter().enumerate().map(|(i, &e)| pw[i][e as usize]).product::<f64>())
                    .sum()
            })
            .collect()
    }

    pub fn homogenize(&self) -> HomogeneousSystem {
        let exponents = multi_indices(self.m, self.d)
            .into_iter()
            .map(|j| {
                let s: u32 = j.iter().sum();
                let mut e = Vec::with_capacity(self.m + 1);
                e.push(self.d as u32 - s);
                e.extend(j);
                e
            })
            .collect();
        HomogeneousSystem {
            m: self.m,
            d: self.d,
            exponents,
            coeffs: self.coeffs.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("system serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let sys: KssSystem = serde_json::from_str(s).map_err(|e| invalid(e.to_string()))?;
        let seed = sys.seed;
        let mut out = KssSystem::from_coeffs(sys.m, sys.d, sys.coeffs)?;
        out.seed = seed;
        Ok(out)
    }
}

fn powers(x: &[f64], d: usize) -> Vec<Vec<f64>> {
    x.iter()
        .map(|&v| {
            let mut p = Vec::with_capacity(d + 1);
            let mut acc = 1.0;
            for _ in 0..=d {
                p.push(acc);
                acc *= v;
            }
            p
        })
        .collect()
}

/// Homogeneous system `Y: R^{m+1} -> R^m`; monomial `k` is
/// `s_0^{e_0} ... s_m^{e_m}` with `e = exponents[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousSystem {
    pub m: usize,
    pub d: usize,
    pub exponents: Vec<Vec<u32>>,
    pub coeffs: Vec<Vec<f64>>,
}

impl HomogeneousSystem {
    /// Build from explicit terms; every exponent must have total degree `d`.
    pub fn from_terms(m: usize, d: usize, exponents: Vec<Vec<u32>>, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        check_dims(m, d)?;
        if exponents.iter().any(|e| e.len() != m + 1 || e.iter().sum::<u32>() as usize != d) {
            return Err(invalid("exponents must have m+1 entries summing to d"));
        }
        if coeffs.len() != m || coeffs.iter().any(|c| c.len() != exponents.len()) {
            return Err(invalid("coefficient arrays do not match exponent list"));
        }
        Ok(HomogeneousSystem { m, d, exponents, coeffs })
    }

    pub fn eval(&self, s: &[f64]) -> Vec<f64> {
        assert_eq!(s.len(), self.m + 1);
        let pw = powers(s, self.d);
        let mono: Vec<f64> = self
            .exponents
            .iter()
            .map(|e| e.iter().enumerate().map(|(i, &k)| pw[i][k as usize]).product())
            .collect();
        self.coeffs
            .iter()
            .map(|c| c.iter().zip(&mono).map(|(a, v)| a * v).sum())
            .collect()
    }

    /// Euclidean gradients, `grad[l][i] = dY_l / ds_i`.
    pub fn gradient(&self, s: &[f64]) -> Vec<Vec<f64>> {
        let n = self.m + 1;
        let pw = powers(s, self.d);
        let mut out = vec![vec![0.0; n]; self.m];
        for (k, e) in self.exponents.iter().enumerate() {
            for i in 0..n {
                if e[i] == 0 {
                    continue;
                }
                let mut v = e[i] as f64;
                for (r, &er) in e.iter().enumerate() {
                    let p = if r == i { er - 1 } else { er };
                    v *= pw[r][p as usize];
                }
                for l in 0..self.m {
                    out[l][i] += self.coeffs[l][k] * v;
                }
            }
        }
        out
    }

    /// Standardized spherical gradient: `out[l][k] = <grad Y_l(s), T_k> / sqrt(d)`.
    pub fn standardized_gradient(&self, s: &[f64], basis: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let g = self.gradient(s);
        let sd = (self.d as f64).sqrt();
        g.iter()
            .map(|gl| basis.iter().map(|t| dot(gl, t) / sd).collect())
            .collect()
    }

    /// `Z(s)`: for each equation `l`, `Y_l(s)` followed by its `m` standardized
    /// tangent derivatives.
    pub fn z_vector(&self, s: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
        let y = self.eval(s);
        let g = self.standardized_gradient(s, basis);
        let mut z = Vec::with_capacity(self.m * (self.m + 1));
        for l in 0..self.m {
            z.push(y[l]);
            z.extend_from_slice(&g[l]);
        }
        z
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthonormal basis of the tangent space at the unit vector `s`, taken from
/// the Householder reflection sending `e_0` to `-sign(s_0) s`.
pub fn tangent_basis(s: &[f64]) -> Vec<Vec<f64>> {
    let n = s.len();
    let sigma = if s[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut v = s.to_vec();
    v[0] += sigma;
    let vv = dot(&v, &v);
    (1..n)
        .map(|k| (0..n).map(|i| (if i == k { 1.0 } else { 0.0 }) - 2.0 * v[i] * v[k] / vv).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn binom(n: u64, k: u64) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    #[test]
    fn variances_for_m1_are_binomials() {
        for d in [1usize, 5, 20, 40] {
            for j in 0..=d as u32 {
                let v = multinomial_variance(&[j], d);
                let b = binom(d as u64, j as u64);
                assert!((v - b).abs() <= 1e-12 * b, "d={d} j={j}");
            }
        }
    }

    #[test]
    fn small_multinomials_are_exact() {
        assert_eq!(multinomial_variance(&[1, 1], 3), 6.0);
        assert_eq!(multinomial_variance(&[0, 0], 20), 1.0);
        assert_eq!(multinomial_variance(&[3, 5], 20), 7_054_320.0);
        let direct = (1..=20u128).product::<u128>()
            / ((1..=3u128).product::<u128>() * (1..=5u128).product::<u128>() * (1..=12u128).product::<u128>());
        assert_eq!(multinomial_variance(&[3, 5], 20), direct as f64);
    }

    #[test]
    fn index_counts() {
        for (m, d) in [(1, 7), (2, 4), (3, 5)] {
            let idx = multi_indices(m, d);
            assert_eq!(idx.len(), monomial_count(m, d));
            assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }
        assert_eq!(monomial_count(2, 3), 10);
    }

    #[test]
    fn sampling_is_reproducible() {
        let a = sample_system(2, 5, 17).unwrap();
        let b = sample_system(2, 5, 17).unwrap();
        let c = sample_system(2, 5, 18).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.coeffs[0].len(), 21);
    }

    #[test]
    fn json_roundtrip() {
        let a = sample_system(2, 3, 5).unwrap();
        let b = KssSystem::from_json(&a.to_json()).unwrap();
        assert_eq!(a, b);
        assert!(KssSystem::from_json(r#"{"m":1,"d":2,"seed":0,"coeffs":[[1.0]]}"#).is_err());
    }

    #[test]
    fn invalid_parameters() {
        assert!(sample_system(0, 3, 1).is_err());
        assert!(sample_system(1, 0, 1).is_err());
        assert!(sample_system(1, 5000, 1).is_err());
    }

    #[test]
    fn empirical_variance_matches_multinomial() {
        // Coefficient variance over 40000 systems for a few multi-indices.
        let (m, d) = (2, 6);
        let idx = multi_indices(m, d);
        let picks = [0usize, 5, 13, idx.len() - 1];
        let n = 40_000;
        let mut sums = vec![0.0; picks.len()];
        for s in 0..n {
            let sys = sample_system(m, d, s as u64).unwrap();
            for (p, &k) in picks.iter().enumerate() {
                sums[p] += sys.coeffs[1][k].powi(2);
            }
        }
        for (p, &k) in picks.iter().enumerate() {
            let v = multinomial_variance(&idx[k], d);
            let est = sums[p] / n as f64;
            // SE of the second moment of N(0, v) is v*sqrt(2/n).
            assert!((est - v).abs() < 4.0 * v * (2.0 / n as f64).sqrt(), "k={k} est={est} v={v}");
        }
    }

    #[test]
    fn homogenization_restricts_to_affine() {
        let sys = sample_system(2, 4, 3).unwrap();
        let h = sys.homogenize();
        let t = [0.3, -1.7];
        let a = sys.eval_affine(&t);
        let b = h.eval(&[1.0, t[0], t[1]]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12 * (1.0 + x.abs()));
        }
    }

    proptest! {
        #[test]
        fn homogeneity(seed in 0u64..1000, lam in 0.1f64..3.0, a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0) {
            let sys = sample_system(2, 3, seed).unwrap();
            let h = sys.homogenize();
            let s = [a, b, c];
            let ls: Vec<f64> = s.iter().map(|x| lam * x).collect();
            let y = h.eval(&s);
            let yl = h.eval(&ls);
            for (u, v) in y.iter().zip(&yl) {
                prop_assert!((v - lam.powi(3) * u).abs() < 1e-9 * (1.0 + v.abs()));
            }
        }

        #[test]
        fn tangent_basis_is_orthonormal(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0) {
            let n = (a * a + b * b + c * c).sqrt();
            prop_assume!(n > 1e-3);
            let s = [a / n, b / n, c / n];
            let t = tangent_basis(&s);
            for i in 0..2 {
                prop_assert!(dot(&t[i], &s).abs() < 1e-12);
                for j in 0..2 {
                    let e = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((dot(&t[i], &t[j]) - e).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn gradient_matches_finite_differences(seed in 0u64..200, i in 0usize..3) {
            let h = sample_system(2, 4, seed).unwrap().homogenize();
            let s = [0.4, -0.7, 0.2];
            let g = h.gradient(&s);
            let eps = 1e-6;
            let mut sp = s; sp[i] += eps;
            let mut sm = s; sm[i] -= eps;
            let (yp, ym) = (h.eval(&sp), h.eval(&sm));
            for l in 0..2 {
                let fd = (yp[l] - ym[l]) / (2.0 * eps);
                prop_assert!((fd - g[l][i]).abs() < 1e-5 * (1.0 + fd.abs()));
            }
        }
    }
}
