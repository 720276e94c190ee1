//! Hyperspherical coordinates and the two-speed partition of `S^m` into
//! hyperspherical rectangles.
//!
//! With `r = 1/sqrt(d)` and `rbar = r^alpha`, the first angle is cut into
//! `2a` intervals of width `r` around `pi/2`, `a` minimal with
//! `pi/2 - a r <= rbar`. Inside each cell the next angle is cut the same way
//! with width `r / prod sin(center)`, and the last angle covers `[0, 2 pi)`
//! with equal cells of nominal width. Points whose polar angles fall outside
//! the covered bands form the exceptional set.

use crate::error::{invalid, precondition, Result};
use crate::kac_rice::kappa;
use crate::rng::aux_rng;
use rand::RngExt;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, TAU};

/// Point of `S^m` with hyperspherical angles `theta` (`m` entries).
pub fn hyperspherical_to_cartesian(theta: &[f64]) -> Vec<f64> {
    let m = theta.len();
    let mut x = vec![0.0; m + 1];
    let mut s = 1.0;
    for j in 0..m {
        x[j] = s * theta[j].cos();
        s *= theta[j].sin();
    }
    x[m] = s;
    x
}

/// Inverse of [`hyperspherical_to_cartesian`]: polar angles in `[0, pi]`,
/// last angle in `[0, 2 pi)`.
pub fn cartesian_to_hyperspherical(x: &[f64]) -> Vec<f64> {
    let m = x.len() - 1;
    let mut theta = vec![0.0; m];
    // Suffix norms ||x_{j+1..m}||^2.
    let mut suffix = vec![0.0; m + 1];
    for j in (0..=m).rev() {
        suffix[j] = x[j] * x[j] + if j == m { 0.0 } else { suffix[j + 1] };
    }
    for j in 0..m - 1 {
        theta[j] = suffix[j + 1].sqrt().atan2(x[j]);
    }
    let last = x[m].atan2(x[m - 1]);
    theta[m - 1] = if last < 0.0 { last + TAU } else { last };
    theta
}

/// Great-circle distance between unit vectors.
pub fn geodesic_distance(s: &[f64], t: &[f64]) -> f64 {
    let chord = s.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    2.0 * (chord / 2.0).min(1.0).asin()
}

/// Orthonormal tangent frame `T_1, ..., T_m` at `x(theta)`, with `T_k`
/// proportional to the derivative in `theta_k`.
pub fn tangent_frame(theta: &[f64]) -> Vec<Vec<f64>> {
    let m = theta.len();
    (0..m)
        .map(|k| {
            let mut t = vec![0.0; m + 1];
            t[k] = -theta[k].sin();
            let rest = hyperspherical_to_cartesian(&theta[k + 1..]);
            let c = theta[k].cos();
            for (i, v) in rest.iter().enumerate() {
                t[k + 1 + i] = c * v;
            }
            t
        })
        .collect()
}

/// `int_a^b sin^k(t) dt`.
pub fn sin_power_integral(k: u32, a: f64, b: f64) -> f64 {
    match k {
        0 => b - a,
        1 => a.cos() - b.cos(),
        _ => {
            let kf = k as f64;
            let f = |t: f64| -t.sin().powi(k as i32 - 1) * t.cos() / kf;
            f(b) - f(a) + (kf - 1.0) / kf * sin_power_integral(k - 2, a, b)
        }
    }
}

/// Default two-speed exponent `min(0.4, 0.9/m)`.
pub fn default_alpha(m: usize) -> f64 {
    0.4f64.min(0.9 / m as f64)
}

/// Geodesic cap `{s : dist(s, center) < angular_radius}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cap {
    pub center: Vec<f64>,
    pub angular_radius: f64,
}

impl Cap {
    pub fn new(center: Vec<f64>, angular_radius: f64) -> Result<Self> {
        if !(angular_radius > 0.0 && angular_radius < FRAC_PI_2) {
            return Err(invalid(format!("cap radius {angular_radius} outside (0, pi/2)")));
        }
        let n = center.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-9 {
            return Err(invalid("cap center must be a unit vector"));
        }
        Ok(Cap { center, angular_radius })
    }

    pub fn contains(&self, s: &[f64]) -> bool {
        geodesic_distance(&self.center, s) < self.angular_radius
    }
}

/// Chart of the cap around `e_0`: `u -> (sqrt(1 - |u|^2), u)`.
pub fn cap_chart(u: &[f64]) -> Result<Vec<f64>> {
    let n2: f64 = u.iter().map(|v| v * v).sum();
    if n2 >= 1.0 {
        return Err(invalid(format!("|u| = {} outside the unit ball", n2.sqrt())));
    }
    let mut x = Vec::with_capacity(u.len() + 1);
    x.push((1.0 - n2).sqrt());
    x.extend_from_slice(u);
    Ok(x)
}

/// Jacobian `(1 - |u|^2)^{-1/2}` of [`cap_chart`].
pub fn chart_jacobian(u: &[f64]) -> Result<f64> {
    let n2: f64 = u.iter().map(|v| v * v).sum();
    if n2 >= 1.0 {
        return Err(invalid(format!("|u| = {} outside the unit ball", n2.sqrt())));
    }
    Ok((1.0 - n2).sqrt().recip())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsrRectangle {
    pub center_angles: Vec<f64>,
    /// Side lengths in angle space.
    pub radii: Vec<f64>,
    pub index_path: Vec<u32>,
}

impl HsrRectangle {
    /// `x(center + u o radii)` for `u` in `[-1/2, 1/2]^m`.
    pub fn point(&self, u: &[f64]) -> Vec<f64> {
        let th: Vec<f64> = self
            .center_angles
            .iter()
            .zip(&self.radii)
            .zip(u)
            .map(|((c, w), u)| c + u * w)
            .collect();
        hyperspherical_to_cartesian(&th)
    }

    pub fn center(&self) -> Vec<f64> {
        hyperspherical_to_cartesian(&self.center_angles)
    }

    pub fn tangent_basis(&self) -> Vec<Vec<f64>> {
        tangent_frame(&self.center_angles)
    }

    pub fn volume(&self) -> f64 {
        let m = self.center_angles.len();
        (0..m)
            .map(|j| {
                let (c, w) = (self.center_angles[j], self.radii[j]);
                sin_power_integral((m - 1 - j) as u32, c - w / 2.0, c + w / 2.0)
            })
            .product()
    }

    /// Largest distance among corners and edge midpoints.
    pub fn diameter(&self) -> f64 {
        let m = self.center_angles.len();
        let pts: Vec<Vec<f64>> = (0..3usize.pow(m as u32))
            .map(|mut code| {
                let u: Vec<f64> = (0..m)
                    .map(|_| {
                        let v = (code % 3) as f64 * 0.5 - 0.5;
                        code /= 3;
                        v
                    })
                    .collect();
                self.point(&u)
            })
            .collect();
        let mut best = 0.0f64;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                best = best.max(geodesic_distance(&pts[i], &pts[j]));
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Strip {
    lo: f64,
    width: f64,
    n: u32,
    child: usize,
}

/// Sizes of the two speeds after checking `sin(rbar/2) >= rbar/4` and
/// `r <= rbar/2`.
pub fn partition_scales(m: usize, d: usize, alpha: f64) -> Result<(f64, f64)> {
    if m == 0 || m > 4 {
        return Err(invalid("partition supports 1 <= m <= 4"));
    }
    if !(alpha > 0.0 && alpha < 1.0 / m as f64) {
        return Err(invalid(format!("alpha = {alpha} outside (0, 1/m)")));
    }
    if d < 2 {
        return Err(invalid("d must be at least 2"));
    }
    let r = (d as f64).sqrt().recip();
    let rbar = r.powf(alpha);
    if (rbar / 2.0).sin() < rbar / 4.0 {
        return Err(precondition(format!("sin(rbar/2) = {} < rbar/4 = {}", (rbar / 2.0).sin(), rbar / 4.0)));
    }
    if r > rbar / 2.0 {
        return Err(precondition(format!("r = {r} > rbar/2 = {}", rbar / 2.0)));
    }
    Ok((r, rbar))
}

fn strip_layout(last: bool, w: f64, rbar: f64) -> (f64, f64, u32) {
    if last {
        let n = (TAU / w).round().max(1.0);
        (0.0, TAU / n, n as u32)
    } else {
        let a = ((FRAC_PI_2 - rbar) / w).ceil().max(1.0);
        (FRAC_PI_2 - a * w, w, 2 * a as u32)
    }
}

/// Number of rectangles without storing them.
pub fn count_rectangles(m: usize, d: usize, alpha: f64) -> Result<u64> {
    let (r, rbar) = partition_scales(m, d, alpha)?;
    fn walk(j: usize, m: usize, sin_prod: f64, r: f64, rbar: f64) -> Result<u64> {
        let w = r / sin_prod;
        check_width(j, w, rbar, sin_prod)?;
        let (lo, width, n) = strip_layout(j == m - 1, w, rbar);
        if j == m - 1 {
            return Ok(n as u64);
        }
        let mut total = 0;
        for i in 0..n {
            let c = lo + (i as f64 + 0.5) * width;
            total += walk(j + 1, m, sin_prod * c.sin(), r, rbar)?;
        }
        Ok(total)
    }
    walk(0, m, 1.0, r, rbar)
}

fn check_width(j: usize, w: f64, rbar: f64, sin_prod: f64) -> Result<()> {
    if w > rbar / 2.0 {
        return Err(precondition(format!(
            "r_{} = {w} > rbar/2 = {} (product of sines {sin_prod})",
            j + 1,
            rbar / 2.0
        )));
    }
    Ok(())
}

/// The partition, immutable after [`HsrPartition::build`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsrPartition {
    pub m: usize,
    pub d: usize,
    pub alpha: f64,
    pub r: f64,
    pub r_bar: f64,
    levels: Vec<Vec<Strip>>,
    centers: Vec<f64>,
    radii: Vec<f64>,
    paths: Vec<u32>,
}

impl HsrPartition {
    pub fn build(m: usize, d: usize, alpha: f64) -> Result<Self> {
        let (r, rbar) = partition_scales(m, d, alpha)?;
        let mut p = HsrPartition {
            m,
            d,
            alpha,
            r,
            r_bar: rbar,
            levels: vec![Vec::new(); m],
            centers: Vec::new(),
            radii: Vec::new(),
            paths: Vec::new(),
        };
        let mut stack = Vec::with_capacity(m);
        p.grow(0, 1.0, &mut stack)?;
        Ok(p)
    }

    fn grow(&mut self, j: usize, sin_prod: f64, stack: &mut Vec<(f64, f64, u32)>) -> Result<()> {
        let m = self.m;
        let w = self.r / sin_prod;
        check_width(j, w, self.r_bar, sin_prod)?;
        let last = j == m - 1;
        let (lo, width, n) = strip_layout(last, w, self.r_bar);
        let child = if last { self.paths.len() / m } else { self.levels[j + 1].len() };
        self.levels[j].push(Strip { lo, width, n, child });
        if last {
            for i in 0..n {
                for &(c, w, k) in stack.iter() {
                    self.centers.push(c);
                    self.radii.push(w);
                    self.paths.push(k);
                }
                self.centers.push(lo + (i as f64 + 0.5) * width);
                self.radii.push(width);
                self.paths.push(i);
            }
            return Ok(());
        }
        // Children of one strip occupy consecutive slots of the next level
        // because recursion only appends to deeper levels in between.
        for i in 0..n {
            let c = lo + (i as f64 + 0.5) * width;
            stack.push((c, width, i));
            self.grow(j + 1, sin_prod * c.sin(), stack)?;
            stack.pop();
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.paths.len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rectangle(&self, i: usize) -> HsrRectangle {
        let m = self.m;
        HsrRectangle {
            center_angles: self.centers[i * m..(i + 1) * m].to_vec(),
            radii: self.radii[i * m..(i + 1) * m].to_vec(),
            index_path: self.paths[i * m..(i + 1) * m].to_vec(),
        }
    }

    fn center_slice(&self, i: usize) -> &[f64] {
        &self.centers[i * self.m..(i + 1) * self.m]
    }

    fn radii_slice(&self, i: usize) -> &[f64] {
        &self.radii[i * self.m..(i + 1) * self.m]
    }

    /// Rectangle containing the angles (half-open cells), `None` in the exceptional set.
    pub fn locate_angles(&self, theta: &[f64]) -> Option<usize> {
        let mut s = 0usize;
        for j in 0..self.m {
            let strip = self.levels[j][s];
            let i = if j == self.m - 1 {
                let t = theta[j].rem_euclid(TAU) / strip.width;
                (t.floor() as i64).clamp(0, strip.n as i64 - 1) as usize
            } else {
                let t = ((theta[j] - strip.lo) / strip.width).floor();
                if t < 0.0 || t >= strip.n as f64 {
                    return None;
                }
                t as usize
            };
            s = strip.child + i;
        }
        Some(s)
    }

    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        self.locate_angles(&cartesian_to_hyperspherical(x))
    }

    /// Whether the closures of two rectangles meet.
    pub fn are_neighbors(&self, a: usize, b: usize) -> bool {
        let (ca, cb) = (self.center_slice(a), self.center_slice(b));
        let (wa, wb) = (self.radii_slice(a), self.radii_slice(b));
        (0..self.m).all(|k| {
            let mut gap = (ca[k] - cb[k]).abs();
            if k == self.m - 1 {
                gap = gap.rem_euclid(TAU);
                gap = gap.min(TAU - gap);
            }
            gap <= (wa[k] + wb[k]) / 2.0 + 1e-12
        })
    }

    /// Distance between the closures of two rectangles, by a grid search
    /// over both parameter boxes followed by a compass search.
    pub fn rectangle_distance(&self, a: usize, b: usize) -> f64 {
        let m = self.m;
        let ra = self.rectangle(a);
        let rb = self.rectangle(b);
        let f = |z: &[f64]| -> f64 {
            let x = ra.point(&z[..m]);
            let y = rb.point(&z[m..]);
            x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum()
        };
        let dim = 2 * m;
        let levels = 5usize;
        let mut best = vec![0.0; dim];
        let mut best_v = f64::INFINITY;
        let mut z = vec![0.0; dim];
        for mut code in 0..levels.pow(dim as u32) {
            for zi in z.iter_mut() {
                *zi = (code % levels) as f64 / (levels - 1) as f64 - 0.5;
                code /= levels;
            }
            let v = f(&z);
            if v < best_v {
                best_v = v;
                best.copy_from_slice(&z);
            }
        }
        let mut step = 0.125;
        while step > 1e-9 {
            let mut improved = false;
            for k in 0..dim {
                for sgn in [-1.0, 1.0] {
                    let mut t = best.clone();
                    t[k] = (t[k] + sgn * step).clamp(-0.5, 0.5);
                    let v = f(&t);
                    if v < best_v {
                        best_v = v;
                        best = t;
                        improved = true;
                    }
                }
            }
            if !improved {
                step /= 2.0;
            }
        }
        2.0 * (best_v.max(0.0).sqrt() / 2.0).min(1.0).asin()
    }

    /// Analytic volume of the exceptional set: `kappa_m` minus the rectangle volumes.
    pub fn exceptional_volume(&self) -> f64 {
        let m = self.m;
        fn vol(p: &HsrPartition, j: usize, s: usize) -> f64 {
            let strip = p.levels[j][s];
            let k = (p.m - 1 - j) as u32;
            (0..strip.n as usize)
                .map(|i| {
                    let a = strip.lo + i as f64 * strip.width;
                    let piece = sin_power_integral(k, a, a + strip.width);
                    if j == p.m - 1 {
                        piece
                    } else {
                        piece * vol(p, j + 1, strip.child + i)
                    }
                })
                .sum()
        }
        (kappa(m) - vol(self, 0, 0)).max(0.0)
    }

    /// Monte Carlo estimate of the exceptional volume with its standard error.
    pub fn exceptional_volume_mc(&self, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = aux_rng(seed, 0xe0);
        let mut hits = 0usize;
        let mut x = vec![0.0; self.m + 1];
        for _ in 0..n {
            let mut norm = 0.0;
            for v in x.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
                norm += *v * *v;
            }
            let norm = f64::sqrt(norm);
            x.iter_mut().for_each(|v| *v /= norm);
            if self.locate(&x).is_none() {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        let k = kappa(self.m);
        (k * p, k * (p * (1.0 - p) / n as f64).sqrt())
    }

    pub fn max_diameter(&self) -> f64 {
        (0..self.len()).map(|i| self.rectangle(i).diameter()).fold(0.0, f64::max)
    }

    /// Whether two rectangles share all polar-angle cells, i.e. differ only in the last angle.
    pub fn same_strip(&self, a: usize, b: usize) -> bool {
        let m = self.m;
        self.paths[a * m..a * m + m - 1] == self.paths[b * m..b * m + m - 1]
    }
}

/// Outcome of the non-neighbor separation sweep. Distances are reported
/// as `dist * sqrt(d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub pairs_tested: usize,
    pub same_strip_pairs: usize,
    pub violation_count: usize,
    /// Up to 20 offending pairs `(a, b, dist * sqrt(d))`.
    pub violations: Vec<(usize, usize, f64)>,
    pub min_ratio: f64,
    pub min_ratio_same_strip: f64,
    pub min_ratio_cross_strip: f64,
    pub neighbor_pairs_tested: usize,
    pub max_neighbor_distance: f64,
}

/// Samples nearby non-neighbor pairs: from a random rectangle's center, a
/// point at distance `r U(0.5, 3)` in a random tangent direction picks the
/// second rectangle. Neighbors found on the way are checked to be at distance 0.
pub fn neighbor_separation(p: &HsrPartition, n_pairs: usize, seed: u64) -> SeparationReport {
    let mut rng = aux_rng(seed, 0x5e);
    let m = p.m;
    let scale = (p.d as f64).sqrt();
    let mut rep = SeparationReport {
        pairs_tested: 0,
        same_strip_pairs: 0,
        violation_count: 0,
        violations: Vec::new(),
        min_ratio: f64::INFINITY,
        min_ratio_same_strip: f64::INFINITY,
        min_ratio_cross_strip: f64::INFINITY,
        neighbor_pairs_tested: 0,
        max_neighbor_distance: 0.0,
    };
    let mut attempts = 0;
    while rep.pairs_tested < n_pairs && attempts < 100 * n_pairs.max(1) {
        attempts += 1;
        let a = rng.random_range(0..p.len());
        let rect = p.rectangle(a);
        let c = rect.center();
        let t = rect.tangent_basis();
        let dir: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
        let dn = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rho = p.r * rng.random_range(0.5..3.0);
        let x: Vec<f64> = (0..=m)
            .map(|i| c[i] * rho.cos() + rho.sin() * (0..m).map(|k| dir[k] / dn * t[k][i]).sum::<f64>())
            .collect();
        let b = match p.locate(&x) {
            Some(b) if b != a => b,
            _ => continue,
        };
        let dist = p.rectangle_distance(a, b);
        if p.are_neighbors(a, b) {
            if rep.neighbor_pairs_tested < n_pairs {
                rep.neighbor_pairs_tested += 1;
                rep.max_neighbor_distance = rep.max_neighbor_distance.max(dist);
            }
            continue;
        }
        rep.pairs_tested += 1;
        let ratio = dist * scale;
        rep.min_ratio = rep.min_ratio.min(ratio);
        if p.same_strip(a, b) {
            rep.same_strip_pairs += 1;
            rep.min_ratio_same_strip = rep.min_ratio_same_strip.min(ratio);
        } else {
            rep.min_ratio_cross_strip = rep.min_ratio_cross_strip.min(ratio);
        }
        if ratio < 1.0 - 1e-6 {
            rep.violation_count += 1;
            if rep.violations.len() < 20 {
                rep.violations.push((a, b, ratio));
            }
        }
    }
    rep
}

/// Rescaled tangent projection of a rectangle: for `u` on an `n`-point grid
/// per axis, `(1/r) <x(center + u o radii) - x(center), T_k>`. Returns the
/// image points and their symmetric Hausdorff distance to the grid itself.
pub fn project_and_rescale(rect: &HsrRectangle, r: f64, n: usize) -> (Vec<Vec<f64>>, f64) {
    let m = rect.center_angles.len();
    let c = rect.center();
    let t = rect.tangent_basis();
    let total = n.pow(m as u32);
    let mut grid = Vec::with_capacity(total);
    let mut image = Vec::with_capacity(total);
    for mut code in 0..total {
        let u: Vec<f64> = (0..m)
            .map(|_| {
                let v = if n == 1 { 0.0 } else { (code % n) as f64 / (n - 1) as f64 - 0.5 };
                code /= n;
                v
            })
            .collect();
        let x = rect.point(&u);
        let img: Vec<f64> = t
            .iter()
            .map(|tk| tk.iter().zip(x.iter().zip(&c)).map(|(a, (p, q))| a * (p - q)).sum::<f64>() / r)
            .collect();
        grid.push(u);
        image.push(img);
    }
    let h = hausdorff(&image, &grid);
    (image, h)
}

/// Symmetric Hausdorff distance between finite point sets.
pub fn hausdorff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let d = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let one = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        a.iter()
            .map(|p| b.iter().map(|q| d(p, q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    one(a, b).max(one(b, a))
}

/// Largest Hausdorff distance over a sample of `n_rects` rectangles: one
/// per evenly spaced first-angle cell (both extreme cells included), with a
/// random cell in the remaining angles.
pub fn worst_hausdorff(p: &HsrPartition, n_rects: usize, n_grid: usize, seed: u64) -> f64 {
    let mut rng = aux_rng(seed, 0x4a);
    let top = p.levels[0][0];
    let k = n_rects.max(2);
    (0..k)
        .map(|i| {
            let i1 = ((i as f64 / (k - 1) as f64) * (top.n - 1) as f64).round() as usize;
            let mut s = top.child + i1;
            for j in 1..p.m {
                let strip = p.levels[j][s];
                s = strip.child + rng.random_range(0..strip.n as usize);
            }
            project_and_rescale(&p.rectangle(s), p.r, n_grid).1
        })
        .fold(0.0, f64::max)
}
