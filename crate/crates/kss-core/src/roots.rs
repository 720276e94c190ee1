//! Real root counting.
//!
//! * `m = 1`: certified scan of `Y(theta) = sum_j a_j cos^{d-j} sin^j` on
//!   a half circle. On every cell a third-order Taylor model, with the
//!   remainder bounded by `||xi|| ||D^3 e(0)||` (rotation covariance of the
//!   standardized basis plus Cauchy-Schwarz), either
//!   proves the cell root-free or proves `Y` monotone on it; otherwise the
//!   cell is bisected. Companion-matrix eigenvalues give an independent count.
//! * `m = 2`: Newton's method on the sphere from a dense seed grid, with
//!   deduplication and an antipodal-parity check.

use crate::error::{invalid, precondition, KssError, Result};
use crate::kss_model::{dot, tangent_basis, HomogeneousSystem, KssSystem};
use nalgebra::DMatrix;
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct ScanConfig {
    /// Grid cells per expected gap `pi / sqrt(d)` between consecutive zeros.
    pub oversample: usize,
    /// Maximum number of bisections of a grid cell.
    pub refine_depth: u32,
    /// Bracket width at which root refinement stops.
    pub root_tol: f64,
    /// Whether to locate the roots (needed for subset counts and residuals).
    pub locate: bool,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig { oversample: 64, refine_depth: 40, root_tol: 1e-12, locate: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RootCount {
    /// Zeros of the homogeneous system on the sphere (twice the affine count).
    pub sphere_count: usize,
    pub affine_count: usize,
    pub certified: bool,
    /// Largest `|Y|` over located roots (0 when roots were not located).
    pub residual_max: f64,
    /// Located zeros on the sphere, as unit vectors.
    pub roots: Vec<Vec<f64>>,
}

/// The restriction of a one-variable form to the unit circle, held in the
/// standardized basis `e_j(theta) = sqrt(binom(d,j)) cos^{d-j} sin^j`.
#[derive(Debug, Clone)]
pub struct CircleForm {
    pub d: usize,
    /// Coefficients `xi_j = a_j / sqrt(binom(d, j))`.
    pub xi: Vec<f64>,
    scaled: Vec<f64>,
    /// `||xi|| * ||D^k e(0)||` for `k = 0..=3`; bounds `sup |Y^{(k)}|`.
    pub norms: [f64; 4],
    xi_norm: f64,
}

/// Apply the derivative in the standardized basis:
/// `(D xi)_i = sqrt((i+1)(d-i)) xi_{i+1} - sqrt(i(d-i+1)) xi_{i-1}`.
pub fn derivative_coefficients(xi: &[f64]) -> Vec<f64> {
    let d = xi.len() - 1;
    (0..=d)
        .map(|i| {
            let up = if i < d { (((i + 1) * (d - i)) as f64).sqrt() * xi[i + 1] } else { 0.0 };
            let down = if i > 0 { ((i * (d - i + 1)) as f64).sqrt() * xi[i - 1] } else { 0.0 };
            up - down
        })
        .collect()
}

fn log_binom(d: usize, j: usize) -> f64 {
    crate::kss_model::log_multinomial_variance(&[j as u32], d)
}

impl CircleForm {
    /// Build from affine coefficients `a_0, ..., a_d` of `P(t) = sum a_j t^j`.
    pub fn new(coeffs: &[f64]) -> Result<Self> {
        if coeffs.len() < 2 {
            return Err(invalid("need degree at least 1"));
        }
        let d = coeffs.len() - 1;
        if d > 2000 {
            return Err(precondition("circle scan supports d <= 2000"));
        }
        let half_ln2d = 0.5 * d as f64 * std::f64::consts::LN_2;
        let mut xi = Vec::with_capacity(d + 1);
        let mut scaled = Vec::with_capacity(d + 1);
        for (j, &a) in coeffs.iter().enumerate() {
            let lb = 0.5 * log_binom(d, j);
            xi.push(a * (-lb).exp());
            scaled.push(a * (-half_ln2d).exp());
        }
        // e(theta) = R(theta) e(0) with R orthogonal and commuting with D, so
        // |Y^(k)(theta)| = |<xi, R(theta) D^k e(0)>| <= ||xi|| ||D^k e(0)||.
        let xi_norm = dot(&xi, &xi).sqrt();
        let mut norms = [0.0; 4];
        let mut cur = vec![0.0; d + 1];
        cur[0] = 1.0;
        for n in norms.iter_mut() {
            *n = xi_norm * dot(&cur, &cur).sqrt();
            cur = derivative_coefficients(&cur);
        }
        Ok(CircleForm { d, xi, scaled, norms, xi_norm })
    }

    pub fn from_system(sys: &KssSystem) -> Result<Self> {
        if sys.m != 1 {
            return Err(invalid("circle scan needs m = 1"));
        }
        Self::new(&sys.coeffs[0])
    }

    /// `Y(theta)`.
    pub fn eval(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        let d = self.d as i32;
        if c.abs() >= s.abs() {
            let t = s / c;
            let mut p = 0.0;
            for &a in self.scaled.iter().rev() {
                p = p * t + a;
            }
            let f = (2.0 / (1.0 + t * t)).powf(0.5 * self.d as f64);
            let sign = if c < 0.0 && d % 2 == 1 { -1.0 } else { 1.0 };
            sign * f * p
        } else {
            let u = c / s;
            let mut q = 0.0;
            for &a in self.scaled.iter() {
                q = q * u + a;
            }
            let f = (2.0 / (1.0 + u * u)).powf(0.5 * self.d as f64);
            let sign = if s < 0.0 && d % 2 == 1 { -1.0 } else { 1.0 };
            sign * f * q
        }
    }

    /// `(Y, Y', Y'')` at `theta`.
    pub fn eval3(&self, theta: f64) -> (f64, f64, f64) {
        let (s, c) = theta.sin_cos();
        let df = self.d as f64;
        let odd = self.d % 2 == 1;
        if c.abs() >= s.abs() {
            let t = s / c;
            let (mut p, mut dp, mut ddp) = (0.0, 0.0, 0.0);
            for &a in self.scaled.iter().rev() {
                ddp = ddp * t + dp;
                dp = dp * t + p;
                p = p * t + a;
            }
            ddp *= 2.0;
            let q = 1.0 + t * t;
            let w = q * dp - df * t * p;
            let w1 = 2.0 * t * dp + q * ddp - df * p - df * t * dp;
            let f = (2.0 / q).powf(0.5 * df) * if c < 0.0 && odd { -1.0 } else { 1.0 };
            (f * p, f * w, f * (q * w1 - df * t * w))
        } else {
            let u = c / s;
            let (mut p, mut dp, mut ddp) = (0.0, 0.0, 0.0);
            for &a in self.scaled.iter() {
                ddp = ddp * u + dp;
                dp = dp * u + p;
                p = p * u + a;
            }
            ddp *= 2.0;
            let q = 1.0 + u * u;
            let v = df * u * p - q * dp;
            let v1 = df * p + df * u * dp - 2.0 * u * dp - q * ddp;
            let f = (2.0 / q).powf(0.5 * df) * if s < 0.0 && odd { -1.0 } else { 1.0 };
            (f * p, f * v, f * (df * u * v - q * v1))
        }
    }

    /// Rounding allowance for the computed `Y^{(k)}`.
    fn slack(&self, k: usize) -> f64 {
        let d = self.d as f64 + 2.0;
        64.0 * d * f64::EPSILON * self.xi_norm * d.powi(k as i32)
    }
}

enum CellVerdict {
    NoRoot,
    Monotone,
    Unknown,
}

fn classify(form: &CircleForm, mid: f64, h: f64) -> (CellVerdict, f64) {
    let (y, y1, y2) = form.eval3(mid);
    let b3 = form.norms[3];
    let (e0, e1, e2) = (form.slack(0), form.slack(1), form.slack(2));
    let no_root = y.abs() - e0 > (y1.abs() + e1) * h + (y2.abs() + e2) * h * h / 2.0 + b3 * h * h * h / 6.0;
    if no_root {
        return (CellVerdict::NoRoot, y);
    }
    let monotone = y1.abs() - e1 > (y2.abs() + e2) * h + b3 * h * h / 2.0;
    if monotone {
        (CellVerdict::Monotone, y)
    } else {
        (CellVerdict::Unknown, y)
    }
}

fn refine_root(form: &CircleForm, mut a: f64, mut b: f64, mut ya: f64, tol: f64) -> f64 {
    let mut x = 0.5 * (a + b);
    for _ in 0..200 {
        if b - a <= tol {
            break;
        }
        let (y, y1, _) = form.eval3(x);
        if y == 0.0 {
            return x;
        }
        if (y > 0.0) == (ya > 0.0) {
            a = x;
            ya = y;
        } else {
            b = x;
        }
        let newton = x - y / y1;
        x = if y1 != 0.0 && newton > a && newton < b { newton } else { 0.5 * (a + b) };
        if (x - a).min(b - x) < 0.25 * tol {
            x = 0.5 * (a + b);
        }
    }
    x
}

struct ScanState<'a> {
    form: &'a CircleForm,
    cfg: &'a ScanConfig,
    certified: bool,
    roots: Vec<f64>,
    count: usize,
}

impl ScanState<'_> {
    fn cell(&mut self, a: f64, b: f64, ya: f64, yb: f64, depth: u32) {
        let h = 0.5 * (b - a);
        let mid = a + h;
        let (verdict, ym) = classify(self.form, mid, h);
        match verdict {
            CellVerdict::NoRoot => {}
            CellVerdict::Monotone => {
                let e0 = self.form.slack(0);
                if ya.abs() <= e0 || yb.abs() <= e0 {
                    self.certified = false;
                }
                if (ya > 0.0) != (yb > 0.0) {
                    self.count += 1;
                    if self.cfg.locate {
                        self.roots.push(refine_root(self.form, a, b, ya, self.cfg.root_tol));
                    }
                }
            }
            CellVerdict::Unknown => {
                if depth >= self.cfg.refine_depth {
                    self.certified = false;
                    for (lo, hi, ylo, yhi) in [(a, mid, ya, ym), (mid, b, ym, yb)] {
                        if (ylo > 0.0) != (yhi > 0.0) {
                            self.count += 1;
                            if self.cfg.locate {
                                self.roots.push(refine_root(self.form, lo, hi, ylo, self.cfg.root_tol));
                            }
                        }
                    }
                } else {
                    self.cell(a, mid, ya, ym, depth + 1);
                    self.cell(mid, b, ym, yb, depth + 1);
                }
            }
        }
    }
}

/// Zeros of the form on a half-open arc of length `pi`, one representative per
/// antipodal pair.
pub fn scan_circle(form: &CircleForm, cfg: &ScanConfig) -> Result<(usize, bool, Vec<f64>)> {
    if cfg.oversample == 0 {
        return Err(invalid("oversample must be positive"));
    }
    if form.xi_norm == 0.0 {
        return Err(precondition("identically zero polynomial"));
    }
    let cells = ((cfg.oversample as f64) * (form.d as f64).sqrt()).ceil() as usize;
    let cells = cells.max(8);
    let h = PI / cells as f64;
    // Start off-grid so that zeros at rational angles never sit on a node.
    let start = h * 0.381_966_011_250_105_1;
    let sign_pi = if form.d.is_multiple_of(2) { 1.0 } else { -1.0 };
    let y_start = form.eval(start);
    let mut st = ScanState { form, cfg, certified: true, roots: Vec::new(), count: 0 };
    let mut ya = y_start;
    for i in 0..cells {
        let a = start + i as f64 * h;
        let (b, yb) = if i + 1 == cells { (start + PI, sign_pi * y_start) } else { (a + h, form.eval(a + h)) };
        st.cell(a, b, ya, yb, 0);
        ya = yb;
    }
    Ok((st.count, st.certified, st.roots))
}

/// Certified count for `m = 1` by the circle scan.
pub fn count_roots_circle(sys: &KssSystem, cfg: &ScanConfig) -> Result<RootCount> {
    let form = CircleForm::from_system(sys)?;
    let (count, certified, thetas) = scan_circle(&form, cfg)?;
    let residual_max = thetas.iter().map(|&t| form.eval(t).abs()).fold(0.0, f64::max);
    let mut roots = Vec::with_capacity(2 * thetas.len());
    for &t in &thetas {
        roots.push(vec![t.cos(), t.sin()]);
    }
    for &t in &thetas {
        roots.push(vec![-t.cos(), -t.sin()]);
    }
    let at_infinity = thetas.iter().filter(|&&t| t.cos().abs() < cfg.root_tol).count();
    Ok(RootCount {
        sphere_count: 2 * count,
        affine_count: count - at_infinity,
        certified,
        residual_max,
        roots,
    })
}

/// Result of the companion-matrix count.
#[derive(Debug, Clone, PartialEq)]
pub struct CompanionCount {
    pub real_count: usize,
    pub warning: Option<String>,
}

/// Parlett-Reinsch balancing by powers of two.
fn balance(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    let radix = 2.0f64;
    let mut converged = false;
    while !converged {
        converged = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / radix;
            while c < g {
                f *= radix;
                c *= radix * radix;
            }
            g = r * radix;
            while c > g {
                f /= radix;
                c /= radix * radix;
            }
            if (c + r) / f < 0.95 * s {
                converged = false;
                for j in 0..n {
                    a[(i, j)] /= f;
                    a[(j, i)] *= f;
                }
            }
        }
    }
}

/// Eigenvalues of the balanced companion matrix of `sum a_j t^j` after
/// dropping exactly zero leading coefficients.
fn companion_eigenvalues(coeffs: &[f64]) -> Vec<nalgebra::Complex<f64>> {
    let mut deg = coeffs.len() - 1;
    while deg > 0 && coeffs[deg] == 0.0 {
        deg -= 1;
    }
    if deg == 0 {
        return Vec::new();
    }
    let lead = coeffs[deg];
    let mut c = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        c[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        c[(i, deg - 1)] = -coeffs[i] / lead;
    }
    balance(&mut c);
    c.complex_eigenvalues().iter().copied().collect()
}

/// Real roots of `P(t) = sum a_j t^j` from eigenvalues of balanced companion
/// matrices; an eigenvalue is real when `|Im| <= 1e-8 (1 + |lambda|)`. Roots
/// inside a split radius near 1 are read from `P`, the others from `t^d P(1/t)`, so a
/// numerically zero leading coefficient (a root near infinity) is kept.
pub fn count_roots_companion_coeffs(coeffs: &[f64]) -> Result<CompanionCount> {
    if coeffs.len() > 513 {
        return Err(precondition("companion count supports d <= 512"));
    }
    let scale = coeffs.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    if scale == 0.0 {
        return Err(precondition("identically zero polynomial"));
    }
    let last = coeffs.len() - 1;
    let warning = match coeffs[last] {
        0.0 => Some("zero leading coefficient; degree reduced".to_string()),
        a if a.abs() <= 1e-14 * scale => Some("numerically zero leading coefficient; large roots taken from the reversed polynomial".to_string()),
        _ => None,
    };
    let is_real = |z: &nalgebra::Complex<f64>| z.im.abs() <= 1e-8 * (1.0 + z.norm());
    let deg = coeffs.iter().rposition(|&a| a != 0.0).unwrap_or(0);
    let coeffs = &coeffs[..=deg];
    let ev = companion_eigenvalues(coeffs);
    let rev: Vec<f64> = coeffs.iter().rev().copied().collect();
    let ev_rev = companion_eigenvalues(&rev);
    // Split radius in [1/2, 2] farthest (in log modulus) from every root.
    let logs: Vec<f64> = ev.iter().map(|z| z.norm().ln()).chain(ev_rev.iter().map(|z| -z.norm().ln())).collect();
    let split = (-16..=16)
        .map(|k| k as f64 * std::f64::consts::LN_2 / 16.0)
        .max_by(|a, b| {
            let gap = |x: f64| logs.iter().map(|l| (l - x).abs()).fold(f64::INFINITY, f64::min);
            gap(*a).total_cmp(&gap(*b))
        })
        .unwrap();
    let inner = ev.iter().filter(|z| is_real(z) && z.norm().ln() <= split).count();
    let outer = ev_rev.iter().filter(|z| is_real(z) && -z.norm().ln() > split).count();
    Ok(CompanionCount { real_count: inner + outer, warning })
}

pub fn count_roots_companion(sys: &KssSystem) -> Result<CompanionCount> {
    if sys.m != 1 {
        return Err(invalid("companion count needs m = 1"));
    }
    count_roots_companion_coeffs(&sys.coeffs[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SphereConfig {
    /// Seed spacing in units of `1/sqrt(d)`.
    pub seed_spacing: f64,
    /// Deduplication radius in units of `1/sqrt(d)`.
    pub dedup_radius: f64,
    pub max_iter: usize,
    /// Residual tolerance relative to the coefficient scale.
    pub newton_tol: f64,
}

impl Default for SphereConfig {
    fn default() -> Self {
        SphereConfig { seed_spacing: 0.25, dedup_radius: 1e-6, max_iter: 60, newton_tol: 1e-11 }
    }
}

/// Near-uniform points on `S^2` (Fibonacci lattice).
pub fn fibonacci_sphere(n: usize) -> Vec<[f64; 3]> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            [z, r * phi.cos(), r * phi.sin()]
        })
        .collect()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

pub fn geodesic(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0).acos()
}

fn newton_sphere(h: &HomogeneousSystem, start: &[f64], cfg: &SphereConfig, tol: f64) -> Option<Vec<f64>> {
    let max_step = 0.5 / (h.d as f64).sqrt();
    let mut p = start.to_vec();
    for _ in 0..cfg.max_iter {
        let y = h.eval(&p);
        let basis = tangent_basis(&p);
        let g = h.gradient(&p);
        let j = DMatrix::from_fn(2, 2, |l, k| dot(&g[l], &basis[k]));
        let rhs = nalgebra::DVector::from_vec(vec![-y[0], -y[1]]);
        let delta = j.lu().solve(&rhs)?;
        let mut step = delta.norm();
        let scale = if step > max_step { max_step / step } else { 1.0 };
        for i in 0..3 {
            p[i] += scale * (delta[0] * basis[0][i] + delta[1] * basis[1][i]);
        }
        normalize(&mut p);
        step *= scale;
        if step < 1e-15 {
            break;
        }
    }
    let y = h.eval(&p);
    if y.iter().all(|v| v.abs() <= tol) {
        Some(p)
    } else {
        None
    }
}

/// Seed-grid halvings tried when the located count is odd or has the wrong parity.
const SPHERE_REFINEMENTS: u32 = 3;

fn locate_sphere(h: &HomogeneousSystem, cfg: &SphereConfig, spacing: f64, tol: f64) -> Vec<Vec<f64>> {
    let n_seeds = (4.0 * PI / (spacing * spacing)).ceil() as usize;
    let radius = cfg.dedup_radius / (h.d as f64).sqrt();
    let mut found: Vec<Vec<f64>> = Vec::new();
    for s in fibonacci_sphere(n_seeds) {
        if let Some(p) = newton_sphere(h, &s, cfg, tol) {
            if !found.iter().any(|q| geodesic(q, &p) < radius) {
                found.push(p);
            }
        }
    }
    found
}

/// Zeros of an `m = 2` homogeneous system on `S^2`.
///
/// The count is certified when the number of antipodal pairs has the parity
/// of `d^2` and does not exceed it. Otherwise the seed grid is refined; an odd
/// count that survives every refinement is a [`KssError::Symmetry`] error.
pub fn count_roots_sphere_homogeneous(h: &HomogeneousSystem, cfg: &SphereConfig) -> Result<RootCount> {
    if h.m != 2 {
        return Err(invalid("sphere locator needs m = 2"));
    }
    if h.d > 16 {
        return Err(precondition("sphere locator supports d <= 16"));
    }
    let sd = (h.d as f64).sqrt();
    let scale = h.coeffs.iter().flatten().fold(0.0f64, |m, a| m.max(a.abs()));
    let tol = cfg.newton_tol * (1.0 + scale);
    let bezout = h.d * h.d;
    let mut spacing = cfg.seed_spacing / sd;
    let mut found = Vec::new();
    let mut certified = false;
    for _ in 0..=SPHERE_REFINEMENTS {
        found = locate_sphere(h, cfg, spacing, tol);
        let pairs = found.len() / 2;
        if found.len() % 2 == 0 && pairs % 2 == bezout % 2 && pairs <= bezout {
            certified = true;
            break;
        }
        spacing /= 2.0;
    }
    if found.len() % 2 == 1 {
        return Err(KssError::Symmetry(format!("odd number of sphere zeros ({})", found.len())));
    }
    let residual_max = found
        .iter()
        .map(|p| h.eval(p).iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .fold(0.0, f64::max);
    // Zeros on the equator s_0 = 0 are zeros at infinity of the affine system.
    let at_infinity = found.iter().filter(|p| p[0].abs() < 1e-12).count();
    Ok(RootCount {
        sphere_count: found.len(),
        affine_count: (found.len() - at_infinity) / 2,
        certified,
        residual_max,
        roots: found,
    })
}

pub fn count_roots_sphere(sys: &KssSystem, cfg: &SphereConfig) -> Result<RootCount> {
    count_roots_sphere_homogeneous(&sys.homogenize(), cfg)
}

/// Count with the default locator for the system's dimension.
pub fn count_roots(sys: &KssSystem) -> Result<RootCount> {
    match sys.m {
        1 => count_roots_circle(sys, &ScanConfig::default()),
        2 => count_roots_sphere(sys, &SphereConfig::default()),
        m => Err(precondition(format!("no root locator for m = {m}"))),
    }
}

/// Region of the sphere for restricted counts.
pub enum Region<'a> {
    /// Geodesic ball of the given radius around a unit vector.
    Cap { center: Vec<f64>, radius: f64 },
    /// Arbitrary membership predicate.
    Custom(&'a dyn Fn(&[f64]) -> bool),
}

impl Region<'_> {
    pub fn contains(&self, p: &[f64]) -> bool {
        match self {
            Region::Cap { center, radius } => geodesic(center, p) <= *radius,
            Region::Custom(f) => f(p),
        }
    }
}

/// Number of located sphere zeros inside `region`.
pub fn count_in_subset(rc: &RootCount, region: &Region) -> usize {
    rc.roots.iter().filter(|p| region.contains(p)).count()
}
