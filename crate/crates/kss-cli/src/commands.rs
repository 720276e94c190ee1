//! One function per experiment kind. Each returns a serializable payload
//! and writes its plot-ready CSV files into the kind's output directory.

use crate::config::ExperimentConfig;
use anyhow::Result;
use kss_core::chaos::{arcones_tail_bound, chaos_variance, contraction_integral, g_norm_bound_check, ChaosCoefficients, ChaosVariance, GNormCheck};
use kss_core::covariance::{arcones_threshold, lemma_bounds, profile, psi};
use kss_core::experiment::{lattice_spacing, normality_suite, run_monte_carlo, CampaignConfig, NormalityVerdict, ReplicateRecord, SummaryStats};
use kss_core::kac_rice::{default_z_max, domination_check, expected_abs_det, h_function_z, h_limit, variance_quadrature, DetSampler, VarianceQuadrature};
use kss_core::local_field::{
    covariance_sup_error, integrability_check, limit_interval_variance_m1, limit_variance_mc, sampled_covariance_check, GridSpec,
    IntegrabilityReport, LimitCountConfig, LimitCountReport, SampledCovarianceCheck,
};
use kss_core::partition::{count_rectangles, neighbor_separation, worst_hausdorff, HsrPartition};
use kss_core::stats::{ols_slope, Moments};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn sampler(cfg: &ExperimentConfig) -> Option<DetSampler> {
    (cfg.m >= 2).then(|| DetSampler::new(cfg.m, cfg.n_mc, cfg.seed))
}

fn z_max_for(cfg: &ExperimentConfig, d: usize) -> f64 {
    cfg.z_max.unwrap_or_else(|| default_z_max(d))
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatePoint {
    pub d: usize,
    pub m: usize,
    pub replicates: usize,
    pub excluded: usize,
    pub exclusions: Vec<ReplicateRecord>,
    pub expected_mean: f64,
    pub summary: SummaryStats,
    pub standardized_mean: f64,
    pub standardized_mean_se: f64,
    pub quadrature: Option<VarianceQuadrature>,
    pub quadrature_error: Option<String>,
    pub variance_rel_error: Option<f64>,
    /// Where `V_hat` for the normality test came from.
    pub v_hat_source: String,
    pub normality: Option<NormalityVerdict>,
    pub normality_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatePayload {
    pub points: Vec<SimulatePoint>,
}

#[derive(Serialize)]
struct ReplicateRow {
    d: usize,
    replicate: usize,
    seed: u64,
    count: usize,
    sphere_count: usize,
    certified: bool,
    excluded: bool,
    standardized: f64,
}

pub fn simulate(cfg: &ExperimentConfig, dir: &Path) -> Result<SimulatePayload> {
    let mut points = Vec::new();
    let mut rows = Vec::new();
    let det = sampler(cfg);
    for (i, &d) in cfg.d.iter().enumerate() {
        let seed = kss_core::rng::replicate_seed(cfg.seed, 1_000_000 + i as u64);
        let res = run_monte_carlo(&CampaignConfig::new(cfg.m, d, cfg.replicates, seed))?;
        for r in &res.records {
            rows.push(ReplicateRow {
                d,
                replicate: r.replicate,
                seed: r.seed,
                count: r.count,
                sphere_count: r.sphere_count,
                certified: r.certified,
                excluded: r.excluded.is_some(),
                standardized: kss_core::experiment::standardize(r.count, cfg.m, d),
            });
        }
        let (quadrature, quadrature_error) = match variance_quadrature(d, cfg.m, z_max_for(cfg, d), cfg.nodes, det.as_ref()) {
            Ok(q) => (Some(q), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let v_hat = quadrature.as_ref().map(|q| q.variance);
        let variance_rel_error = v_hat.map(|v| (res.summary.variance_over_dm2 - v).abs() / v);
        let (normality, normality_note) = match v_hat {
            Some(v) if res.standardized.len() >= 500 => {
                (Some(normality_suite(&res.standardized, v, Some(lattice_spacing(cfg.m, d)), seed)?), None)
            }
            Some(_) => (None, Some(format!("{} retained replicates, normality suite needs 500", res.standardized.len()))),
            None => (None, Some("no quadrature variance available".into())),
        };
        let sm = Moments::from_slice(&res.standardized);
        points.push(SimulatePoint {
            d,
            m: cfg.m,
            replicates: cfg.replicates,
            excluded: res.excluded,
            exclusions: res.records.iter().filter(|r| r.excluded.is_some()).cloned().collect(),
            expected_mean: (d as f64).powf(cfg.m as f64 / 2.0),
            summary: res.summary.clone(),
            standardized_mean: sm.mean,
            standardized_mean_se: sm.std_error(),
            quadrature,
            quadrature_error,
            variance_rel_error,
            v_hat_source: "variance_quadrature (independent of the sample)".into(),
            normality,
            normality_note,
        });
    }
    write_csv(&dir.join("replicates.csv"), &rows)?;
    Ok(SimulatePayload { points })
}

// ---------------------------------------------------------------- kac-rice

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KacRicePoint {
    pub d: usize,
    pub quadrature: VarianceQuadrature,
    pub domination_constant: f64,
    pub lemma_bounds_hold: usize,
    pub lemma_bounds_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stabilization {
    pub d_a: usize,
    pub d_b: usize,
    pub rel_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KacRicePayload {
    pub m: usize,
    pub points: Vec<KacRicePoint>,
    /// Relative change between the two largest degrees.
    pub stabilization: Option<Stabilization>,
}

#[derive(Serialize)]
struct KacRiceRow {
    d: usize,
    z_max: f64,
    nodes: usize,
    variance: f64,
    variance_refined: f64,
    mc_se: f64,
    domination_constant: f64,
}

#[derive(Serialize)]
struct ProfileRow {
    d: usize,
    z: f64,
    h: f64,
    h_limit: f64,
}

pub fn kac_rice(cfg: &ExperimentConfig, dir: &Path) -> Result<KacRicePayload> {
    let det = sampler(cfg);
    let mut points = Vec::new();
    let mut profile_rows = Vec::new();
    for &d in &cfg.d {
        let z_max = z_max_for(cfg, d);
        let quadrature = variance_quadrature(d, cfg.m, z_max, cfg.nodes, det.as_ref())?;
        let domination_constant = domination_check(d, cfg.m, z_max, 200, det.as_ref())?;
        let total = 200;
        let mut hold = 0;
        for i in 1..=total {
            let z = z_max * i as f64 / total as f64;
            if lemma_bounds(z, d, cfg.alpha, cfg.konst)?.holds() {
                hold += 1;
            }
        }
        for i in 1..=100 {
            let z = z_max * i as f64 / 100.0;
            profile_rows.push(ProfileRow {
                d,
                z,
                h: h_function_z(z, d, cfg.m, det.as_ref())?.value,
                h_limit: h_limit(z, cfg.m, det.as_ref())?.value,
            });
        }
        points.push(KacRicePoint { d, quadrature, domination_constant, lemma_bounds_hold: hold, lemma_bounds_total: total });
    }
    let mut by_d: Vec<&KacRicePoint> = points.iter().collect();
    by_d.sort_by_key(|p| p.d);
    let stabilization = match by_d.as_slice() {
        [.., a, b] => Some(Stabilization {
            d_a: a.d,
            d_b: b.d,
            rel_change: (a.quadrature.variance - b.quadrature.variance).abs() / b.quadrature.variance,
        }),
        _ => None,
    };
    let rows: Vec<KacRiceRow> = points
        .iter()
        .map(|p| KacRiceRow {
            d: p.d,
            z_max: p.quadrature.z_max,
            nodes: p.quadrature.nodes,
            variance: p.quadrature.variance,
            variance_refined: p.quadrature.variance_refined,
            mc_se: p.quadrature.mc_se,
            domination_constant: p.domination_constant,
        })
        .collect();
    write_csv(&dir.join("kac_rice_sweep.csv"), &rows)?;
    write_csv(&dir.join("h_profile.csv"), &profile_rows)?;
    Ok(KacRicePayload { m: cfg.m, points, stabilization })
}

// ---------------------------------------------------------------- chaos

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArconesPair {
    pub a: f64,
    pub r0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosPoint {
    pub d: usize,
    pub variances: Vec<ChaosVariance>,
    pub partial_sums: Vec<f64>,
    pub quadrature_variance: f64,
    pub arcones: Option<ArconesPair>,
    /// Arcones bound on the chaos tail beyond `q_max`.
    pub tail_bound: Option<f64>,
    pub psi_identity_max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionRow {
    pub m: usize,
    pub k: u32,
    pub d: Vec<usize>,
    pub values: Vec<f64>,
    pub slope: f64,
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosPayload {
    pub m: usize,
    pub q_max: u32,
    pub points: Vec<ChaosPoint>,
    pub g_norms: Vec<GNormCheck>,
    pub contraction: Vec<ContractionRow>,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
struct ChaosRow {
    d: usize,
    q: u32,
    variance: f64,
    partial_sum: f64,
}

#[derive(Serialize)]
struct ContractionCsvRow {
    m: usize,
    k: u32,
    d: usize,
    value: f64,
}

pub const CONTRACTION_DEGREES: [usize; 4] = [100, 1_000, 10_000, 100_000];

pub fn chaos(cfg: &ExperimentConfig, dir: &Path) -> Result<ChaosPayload> {
    let coeffs = ChaosCoefficients::new(cfg.m, cfg.q_max, cfg.n_mc, cfg.seed)?;
    let det = sampler(cfg);
    let mut points = Vec::new();
    let mut rows = Vec::new();
    for &d in &cfg.d {
        let sd = (d as f64).sqrt();
        let mut variances = Vec::new();
        let mut partial_sums = Vec::new();
        let mut acc = 0.0;
        for q in 1..=cfg.q_max {
            let v = chaos_variance(q, d, &coeffs, cfg.z_max, cfg.nodes)?;
            acc += v.value;
            rows.push(ChaosRow { d, q, variance: v.value, partial_sum: acc });
            partial_sums.push(acc);
            variances.push(v);
        }
        let quadrature_variance = variance_quadrature(d, cfg.m, z_max_for(cfg, d), cfg.nodes, det.as_ref())?.variance;
        let arcones = arcones_threshold(d, |z| psi(z / sd, d, cfg.m).unwrap_or(f64::INFINITY), 4000).map(|(a, r0)| ArconesPair { a, r0 });
        let tail_bound = match &arcones {
            Some(p) if p.r0 < 1.0 => finite(arcones_tail_bound(cfg.q_max + 1, cfg.m, p.a, p.r0, cfg.alpha)?),
            _ => None,
        };
        let mut dev = 0.0f64;
        for i in 1..=200 {
            let th = PI * i as f64 / 201.0;
            let p = profile(th, d)?;
            dev = dev.max((psi(th, d, cfg.m)? - (p.c.abs() + p.a.abs())).abs());
        }
        points.push(ChaosPoint { d, variances, partial_sums, quadrature_variance, arcones, tail_bound, psi_identity_max_deviation: dev });
    }
    let g_norms = (0..=cfg.q_max).map(|q| g_norm_bound_check(q, &coeffs)).collect::<kss_core::error::Result<Vec<_>>>()?;
    let xs: Vec<f64> = CONTRACTION_DEGREES.iter().map(|&d| (d as f64).ln()).collect();
    let mut contraction = Vec::new();
    let mut crows = Vec::new();
    for k in 0..3u32 {
        let values = CONTRACTION_DEGREES.iter().map(|&d| contraction_integral(k, d, cfg.m)).collect::<kss_core::error::Result<Vec<_>>>()?;
        for (&d, &value) in CONTRACTION_DEGREES.iter().zip(&values) {
            crows.push(ContractionCsvRow { m: cfg.m, k, d, value });
        }
        let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
        contraction.push(ContractionRow {
            m: cfg.m,
            k,
            d: CONTRACTION_DEGREES.to_vec(),
            slope: ols_slope(&xs, &ys),
            monotone: values.windows(2).all(|w| w[1] < w[0]),
            values,
        });
    }
    write_csv(&dir.join("chaos_sweep.csv"), &rows)?;
    write_csv(&dir.join("contraction.csv"), &crows)?;
    Ok(ChaosPayload { m: cfg.m, q_max: cfg.q_max, points, g_norms, contraction, warnings: coeffs.warnings.clone() })
}

// ---------------------------------------------------------------- partition

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPoint {
    pub d: usize,
    pub count: u64,
    pub count_over_d: f64,
    pub max_diameter_sqrt_d: f64,
    pub exceptional_volume: f64,
    pub hausdorff: f64,
}

/// Separation sweep, distances as `dist * sqrt(d)`; a minimum is absent
/// when no pair of that kind was sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub d: usize,
    pub pairs_tested: usize,
    pub same_strip_pairs: usize,
    pub violation_count: usize,
    pub violations: Vec<(usize, usize, f64)>,
    pub min_ratio: Option<f64>,
    pub min_ratio_same_strip: Option<f64>,
    pub min_ratio_cross_strip: Option<f64>,
    pub neighbor_pairs_tested: usize,
    pub max_neighbor_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPayload {
    pub m: usize,
    pub alpha: f64,
    pub points: Vec<PartitionPoint>,
    /// Run on the largest degree.
    pub separation: Separation,
}

pub fn partition(cfg: &ExperimentConfig, dir: &Path) -> Result<PartitionPayload> {
    let mut points = Vec::new();
    let d_sep = *cfg.d.iter().max().expect("validated non-empty");
    let mut separation = None;
    for &d in &cfg.d {
        let p = HsrPartition::build(cfg.m, d, cfg.alpha)?;
        points.push(PartitionPoint {
            d,
            count: count_rectangles(cfg.m, d, cfg.alpha)?,
            count_over_d: p.len() as f64 / d as f64,
            max_diameter_sqrt_d: p.max_diameter() * (d as f64).sqrt(),
            exceptional_volume: p.exceptional_volume(),
            hausdorff: worst_hausdorff(&p, 16, 9, cfg.seed),
        });
        if d == d_sep && separation.is_none() {
            let s = neighbor_separation(&p, cfg.pairs, cfg.seed);
            separation = Some(Separation {
                d,
                pairs_tested: s.pairs_tested,
                same_strip_pairs: s.same_strip_pairs,
                violation_count: s.violation_count,
                violations: s.violations,
                min_ratio: finite(s.min_ratio),
                min_ratio_same_strip: finite(s.min_ratio_same_strip),
                min_ratio_cross_strip: finite(s.min_ratio_cross_strip),
                neighbor_pairs_tested: s.neighbor_pairs_tested,
                max_neighbor_distance: s.max_neighbor_distance,
            });
        }
    }
    write_csv(&dir.join("partition_sweep.csv"), &points)?;
    Ok(PartitionPayload { m: cfg.m, alpha: cfg.alpha, points, separation: separation.expect("largest d is in the list") })
}

// ---------------------------------------------------------------- local-field

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupError {
    pub d: usize,
    pub sup_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFieldPayload {
    pub m: usize,
    pub grid: GridSpec,
    pub sup_errors: Vec<SupError>,
    /// Log-log slope of the sup error against `d` (needs two degrees).
    pub slope: Option<f64>,
    pub sampled_covariance: SampledCovarianceCheck,
    pub limit_counts: LimitCountReport,
    /// `E|det G| / (2 pi)^{m/2}`, the zero density of the limit field.
    pub expected_count: f64,
    /// Two-point Kac-Rice variance of the count on the unit interval (`m = 1`).
    pub variance_oracle: Option<f64>,
    pub integrability: IntegrabilityReport,
}

pub fn local_field(cfg: &ExperimentConfig, dir: &Path) -> Result<LocalFieldPayload> {
    let grid = GridSpec { m: cfg.m, half_width: 1.0, n: if cfg.m == 1 { 9 } else { 5 } };
    let sup_errors = cfg
        .d
        .iter()
        .map(|&d| Ok(SupError { d, sup_error: covariance_sup_error(&grid, d)? }))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = sup_errors.iter().map(|s| (s.d as f64).ln()).collect();
    let ys: Vec<f64> = sup_errors.iter().map(|s| s.sup_error.ln()).collect();
    let slope = (xs.len() >= 2).then(|| ols_slope(&xs, &ys));
    let sampled = sampled_covariance_check(&GridSpec { m: cfg.m, half_width: 0.5, n: 3 }, 50_000, cfg.seed)?;
    let limit_counts = limit_variance_mc(cfg.m, cfg.fields, cfg.seed, LimitCountConfig::default())?;
    let variance_oracle = if cfg.m == 1 { Some(limit_interval_variance_m1(1.0, 64)?) } else { None };
    write_csv(&dir.join("local_field_sweep.csv"), &sup_errors)?;
    Ok(LocalFieldPayload {
        m: cfg.m,
        grid,
        sup_errors,
        slope,
        sampled_covariance: sampled,
        limit_counts,
        expected_count: expected_abs_det(cfg.m) / (2.0 * PI).powf(cfg.m as f64 / 2.0),
        variance_oracle,
        integrability: integrability_check(cfg.m, 0.5, 32)?,
    })
}
