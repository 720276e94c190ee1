//! Covariance structure of `(Y, Ybar')` at two points of the sphere.
//!
//! For points at angle `theta` and `r(x) = x^d`:
//! `A = -sqrt(d) cos^{d-1} sin`, `B = cos^d - (d-1) cos^{d-2} sin^2`,
//! `C = cos^d`, `D = cos^{d-1}`. The conditional quantities
//! `sigma^2 = 1 - A^2/(1-C^2)` and `rho` are evaluated through the exact
//! identities `1 - C^2 = P(Bin(d, sin^2) >= 1)` and
//! `1 - C^2 - A^2 = P(Bin(d, sin^2) >= 2)`, which stay accurate as
//! `theta -> 0`.

use crate::error::{invalid, Result};
use nalgebra::{DMatrix, SymmetricEigen};
use std::f64::consts::PI;

/// Denominator threshold below which `sigma^2` and `rho` are reported as degenerate.
pub const DEGENERACY_EPS: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Profile {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub dd: f64,
    /// `1 - C^2`.
    pub one_minus_c2: f64,
    /// `1 - C^2 - A^2`.
    pub one_minus_c2_a2: f64,
    pub sigma2: Option<f64>,
    pub rho: Option<f64>,
}

impl Profile {
    pub fn is_degenerate(&self) -> bool {
        self.sigma2.is_none() || self.rho.is_none()
    }
}

/// `sum_{k>=2} binom(d,k) x^k (1-x)^{d-k}` for small `d x`.
fn binom_tail2_series(d: f64, x: f64, ln1mx: f64) -> f64 {
    let mut term = 0.5 * d * (d - 1.0) * x * x * ((d - 2.0) * ln1mx).exp();
    let mut sum = 0.0;
    let mut k = 2.0;
    while term > 0.0 && k <= d {
        sum += term;
        if term < 1e-18 * sum {
            break;
        }
        term *= (d - k) / (k + 1.0) * x / (1.0 - x);
        k += 1.0;
    }
    sum
}

/// `sum_{k>=2} binom(d,k) (-x)^k = (1-x)^d - 1 + d x` for small `d x`.
fn binom_alt_series(d: f64, x: f64) -> f64 {
    let mut term = 0.5 * d * (d - 1.0) * x * x;
    let mut sum = 0.0;
    let mut k = 2.0;
    while term != 0.0 && k <= d {
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
        term *= -(d - k) / (k + 1.0) * x;
        k += 1.0;
    }
    sum
}

fn finish(a: f64, b: f64, c: f64, dd: f64, p1: f64, p2: f64, rho_num: f64) -> Profile {
    let sigma2 = if p1 > DEGENERACY_EPS { Some((p2 / p1).clamp(0.0, 1.0)) } else { None };
    let rho = if p2 > DEGENERACY_EPS { Some((rho_num / p2).clamp(-1.0, 1.0)) } else { None };
    Profile { a, b, c, dd, one_minus_c2: p1, one_minus_c2_a2: p2, sigma2, rho }
}

/// Covariance profile at angle `theta` in `[0, pi]` for degree `d`.
pub fn profile(theta: f64, d: usize) -> Result<Profile> {
    if !(0.0..=PI).contains(&theta) || !theta.is_finite() {
        return Err(invalid(format!("theta = {theta} outside [0, pi]")));
    }
    if d == 0 {
        return Err(invalid("d must be at least 1"));
    }
    if theta > PI / 2.0 {
        // (s, t) -> (s, -t') with t' at angle pi - theta.
        let p = profile(PI - theta, d)?;
        let e = if d.is_multiple_of(2) { 1.0 } else { -1.0 };
        return Ok(Profile {
            a: -e * p.a,
            b: e * p.b,
            c: e * p.c,
            dd: -e * p.dd,
            rho: p.rho.map(|r| e * r),
            ..p
        });
    }
    let df = d as f64;
    let (s, co) = theta.sin_cos();
    let x = s * s;
    let ln_c2 = if x < 0.5 { (-x).ln_1p() } else { (co * co).ln() };
    let pow_c2 = |p: f64| if p == 0.0 { 1.0 } else { (p * ln_c2).exp() };
    let c = pow_c2(0.5 * df);
    let dd = pow_c2(0.5 * (df - 1.0));
    let a = -df.sqrt() * dd * s;
    let b = pow_c2(0.5 * df - 1.0) * (co * co - (df - 1.0) * x);
    let p1 = -(df * ln_c2).exp_m1();
    let (p2, alt) = if df * x < 1.0 {
        (binom_tail2_series(df, x, ln_c2), binom_alt_series(df, x))
    } else {
        let e = (df * ln_c2).exp();
        let f = df * x * pow_c2(df - 1.0);
        (1.0 - e - f, (df * ln_c2).exp_m1() + df * x)
    };
    let rho_num = -pow_c2(0.5 * df - 1.0) * alt;
    Ok(finish(a, b, c, dd, p1, p2.max(0.0), rho_num))
}

/// Profile at the rescaled distance `z = sqrt(d) theta`.
pub fn profile_z(z: f64, d: usize) -> Result<Profile> {
    profile(z / (d as f64).sqrt(), d)
}

/// Bargmann-Fock limit of the profile at distance `z` (`d -> infinity`).
pub fn limit_profile(z: f64) -> Profile {
    let y = z * z;
    let g = (-0.5 * y).exp();
    let c = g;
    let a = -z * g;
    let b = (1.0 - y) * g;
    let p1 = -(-y).exp_m1();
    let (p2, alt) = if y < 1.0 {
        // Poisson tails: sum_{k>=2} e^{-y} y^k / k! and sum_{k>=2} (-y)^k / k!.
        let (mut t2, mut ta) = (0.5 * y * y * (-y).exp(), 0.5 * y * y);
        let (mut s2, mut sa) = (0.0f64, 0.0f64);
        let mut k = 2.0;
        while k < 200.0 && (t2 > 1e-18 * s2 || ta.abs() > 1e-18 * sa.abs()) {
            s2 += t2;
            sa += ta;
            t2 *= y / (k + 1.0);
            ta *= -y / (k + 1.0);
            k += 1.0;
        }
        (s2, sa)
    } else {
        (1.0 - (-y).exp() * (1.0 + y), (-y).exp_m1() + y)
    };
    finish(a, b, c, g, p1, p2, -g * alt)
}

/// Size of one equation's block in [`joint_matrix`].
pub fn block_size(m: usize) -> usize {
    2 * (1 + m)
}

/// Covariance of `(Y_l(s), Y_l(t), Ybar'_l(s), Ybar'_l(t))_l`, laid out as
/// consecutive per-equation blocks of size `2(1+m)`. Tangent frames: at `s`
/// the first vector points towards `t`; at `t` it is the continuation of
/// that great circle; the remaining vectors are shared.
pub fn joint_matrix(theta: f64, d: usize, m: usize) -> Result<DMatrix<f64>> {
    if m == 0 {
        return Err(invalid("m must be at least 1"));
    }
    let p = profile(theta, d)?;
    let bs = block_size(m);
    let mut out = DMatrix::zeros(m * bs, m * bs);
    for l in 0..m {
        let o = l * bs;
        let (ys, yt, gs, gt) = (o, o + 1, o + 2, o + 2 + m);
        out[(ys, ys)] = 1.0;
        out[(yt, yt)] = 1.0;
        out[(ys, yt)] = p.c;
        out[(yt, ys)] = p.c;
        for k in 0..m {
            out[(gs + k, gs + k)] = 1.0;
            out[(gt + k, gt + k)] = 1.0;
            let cross = if k == 0 { p.b } else { p.dd };
            out[(gs + k, gt + k)] = cross;
            out[(gt + k, gs + k)] = cross;
        }
        // E[Y(t) Ybar'_1(s)] = -A, E[Y(s) Ybar'_1(t)] = A.
        out[(yt, gs)] = -p.a;
        out[(gs, yt)] = -p.a;
        out[(ys, gt)] = p.a;
        out[(gt, ys)] = p.a;
    }
    Ok(out)
}

/// Conditional covariance of `(Ybar'(s), Ybar'(t))` given `Y(s) = Y(t) = 0`
/// for one equation, as `(B11, B12, B22)`, each `m x m`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionBlocks {
    pub b11: DMatrix<f64>,
    pub b12: DMatrix<f64>,
    pub b22: DMatrix<f64>,
}

/// Closed-form regression blocks `diag(sigma^2, 1, ...)` and
/// `diag(sigma^2 rho, D, ...)`. Errors at degenerate angles.
pub fn regression_blocks(theta: f64, d: usize, m: usize) -> Result<RegressionBlocks> {
    let p = profile(theta, d)?;
    let (s2, rho) = match (p.sigma2, p.rho) {
        (Some(s), Some(r)) => (s, r),
        _ => return Err(invalid(format!("degenerate profile at theta = {theta}"))),
    };
    let mut b11 = DMatrix::identity(m, m);
    b11[(0, 0)] = s2;
    let mut b12 = DMatrix::from_diagonal_element(m, m, p.dd);
    b12[(0, 0)] = s2 * rho;
    Ok(RegressionBlocks { b22: b11.clone(), b11, b12 })
}

/// Schur complement of the `(Y(s), Y(t))` block in one equation's block of
/// [`joint_matrix`]; the direct counterpart of [`regression_blocks`].
pub fn schur_blocks(theta: f64, d: usize, m: usize) -> Result<RegressionBlocks> {
    let j = joint_matrix(theta, d, m)?;
    let k = 2 * m;
    let a11 = j.view((0, 0), (2, 2)).into_owned();
    let a1x = j.view((0, 2), (2, k)).into_owned();
    let axx = j.view((2, 2), (k, k)).into_owned();
    let inv = a11
        .try_inverse()
        .ok_or_else(|| invalid(format!("singular value covariance at theta = {theta}")))?;
    let s = axx - a1x.transpose() * inv * a1x;
    Ok(RegressionBlocks {
        b11: s.view((0, 0), (m, m)).into_owned(),
        b12: s.view((0, m), (m, m)).into_owned(),
        b22: s.view((m, m), (m, m)).into_owned(),
    })
}

/// Cross-covariance `E[Z(s)_i Z(t)_j]` of the `m(1+m)` vectors
/// `Z = (Y_l, Ybar'_{l1}, ..., Ybar'_{lm})_l`, read off [`joint_matrix`].
pub fn cross_covariance(theta: f64, d: usize, m: usize) -> Result<DMatrix<f64>> {
    let j = joint_matrix(theta, d, m)?;
    let bs = block_size(m);
    let n = m * (1 + m);
    let s_index = |l: usize, i: usize| if i == 0 { l * bs } else { l * bs + 1 + i };
    let t_index = |l: usize, i: usize| if i == 0 { l * bs + 1 } else { l * bs + 1 + m + i };
    Ok(DMatrix::from_fn(n, n, |r, c| {
        let (l1, i1) = (r / (1 + m), r % (1 + m));
        let (l2, i2) = (c / (1 + m), c % (1 + m));
        j[(s_index(l1, i1), t_index(l2, i2))]
    }))
}

/// Arcones coefficient: largest absolute row or column sum of the
/// cross-covariance of `Z(s)` and `Z(t)`.
pub fn psi(theta: f64, d: usize, m: usize) -> Result<f64> {
    let x = cross_covariance(theta, d, m)?;
    let rows = (0..x.nrows()).map(|r| x.row(r).iter().map(|v| v.abs()).sum::<f64>());
    let cols = (0..x.ncols()).map(|c| x.column(c).iter().map(|v| v.abs()).sum::<f64>());
    Ok(rows.chain(cols).fold(0.0, f64::max))
}

/// `|C| + |A|`, the row sum of the `Y` components.
pub fn psi_value_rows(theta: f64, d: usize) -> Result<f64> {
    let p = profile(theta, d)?;
    Ok(p.c.abs() + p.a.abs())
}

/// Smallest grid point `a` such that `sup_{z >= a} f(z) < 1`, with that
/// supremum. The supremum runs over `z` up to `sqrt(d) pi / 2`, which covers
/// all angles by the `theta -> pi - theta` symmetry.
pub fn arcones_threshold(d: usize, f: impl Fn(f64) -> f64, grid: usize) -> Option<(f64, f64)> {
    let zmax = (d as f64).sqrt() * PI / 2.0;
    let zs: Vec<f64> = (0..=grid).map(|i| zmax * i as f64 / grid as f64).collect();
    let vals: Vec<f64> = zs.iter().map(|&z| f(z)).collect();
    let mut tail_sup = vec![0.0f64; vals.len() + 1];
    for i in (0..vals.len()).rev() {
        tail_sup[i] = tail_sup[i + 1].max(vals[i]);
    }
    (0..zs.len()).find(|&i| tail_sup[i] < 1.0).map(|i| (zs[i], tail_sup[i]))
}

/// Values of the five inequalities bounding the profile at `z = sqrt(d) theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub abs_a: f64,
    pub bound_a: f64,
    pub abs_b: f64,
    pub bound_b: f64,
    pub abs_c: f64,
    pub abs_d: f64,
    pub bound_cd: f64,
    pub one_minus_sigma2: f64,
    pub bound_sigma: f64,
    pub abs_rho: f64,
    pub bound_rho: f64,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.abs_a <= self.bound_a
            && self.abs_b <= self.bound_b
            && self.abs_c <= self.abs_d * (1.0 + 1e-15)
            && self.abs_d <= self.bound_cd
            && self.one_minus_sigma2 >= -1e-15
            && self.one_minus_sigma2 <= self.bound_sigma
            && self.abs_rho <= self.bound_rho
    }
}

/// Evaluate the Gaussian-decay bounds at `z` with rate `alpha` and
/// multiplicative constant `konst` for the conditional quantities.
pub fn lemma_bounds(z: f64, d: usize, alpha: f64, konst: f64) -> Result<BoundCheck> {
    let p = profile_z(z, d)?;
    let e = (-alpha * z * z).exp();
    Ok(BoundCheck {
        abs_a: p.a.abs(),
        bound_a: z * e,
        abs_b: p.b.abs(),
        bound_b: (1.0 + z * z) * e,
        abs_c: p.c.abs(),
        abs_d: p.dd.abs(),
        bound_cd: e,
        one_minus_sigma2: 1.0 - p.sigma2.unwrap_or(0.0),
        bound_sigma: konst * e * e,
        abs_rho: p.rho.map(f64::abs).unwrap_or(1.0),
        bound_rho: konst * (1.0 + z * z).powi(2) * e * e,
    })
}

/// Factor `L` with `L L^T = S` for a symmetric positive semidefinite `S`
/// (negative eigenvalues from rounding are clipped to zero).
pub fn psd_factor(s: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(s.clone());
    let sq = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sq)
}
