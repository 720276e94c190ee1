//! Report envelopes and the consolidated `report` command.

use crate::commands::{ChaosPayload, KacRicePayload, LocalFieldPayload, PartitionPayload, SimulatePayload};
use crate::config::{ExperimentConfig, Kind, PreconditionError};
use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_clock_seconds: f64,
}

/// Top-level document. `timing` is kept apart so that the numerical part
/// is byte-identical across reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<P> {
    pub schema_version: u32,
    pub kind: Kind,
    pub config: ExperimentConfig,
    pub payload: P,
    pub timing: Timing,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: Option<f64>,
    pub tolerance: String,
    pub status: Status,
    pub detail: String,
}

fn check(name: impl Into<String>, value: f64, tolerance: impl Into<String>, pass: bool, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        value: value.is_finite().then_some(value),
        tolerance: tolerance.into(),
        status: if pass { Status::Pass } else { Status::Fail },
        detail: detail.into(),
    }
}

fn skipped(name: impl Into<String>, tolerance: impl Into<String>, detail: impl Into<String>) -> Check {
    Check { name: name.into(), value: None, tolerance: tolerance.into(), status: Status::Skipped, detail: detail.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sections {
    pub simulate: SimulatePayload,
    pub kac_rice: KacRicePayload,
    pub chaos: ChaosPayload,
    pub partition: PartitionPayload,
    pub local_field: LocalFieldPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullReport {
    pub sources: BTreeMap<String, PathBuf>,
    pub sections: Sections,
    pub checks: Vec<Check>,
    pub passed: usize,
    pub failed: usize,
    pub skipped: usize,
}

fn load<P: DeserializeOwned>(path: &Path) -> Result<Envelope<P>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| PreconditionError(format!("{}: {e}", path.display())).into())
}

/// Reads the five sub-reports under `cfg.out` and evaluates every check.
/// Fails with the full list of missing sub-reports if any is absent.
pub fn full_report(cfg: &ExperimentConfig) -> Result<FullReport> {
    let paths: BTreeMap<String, PathBuf> =
        Kind::SUB_REPORTS.iter().map(|k| (k.name().to_string(), cfg.kind_dir(*k).join("report.json"))).collect();
    let missing: Vec<String> = paths.iter().filter(|(_, p)| !p.is_file()).map(|(_, p)| p.display().to_string()).collect();
    if !missing.is_empty() {
        return Err(PreconditionError(format!("missing sub-reports: {}", missing.join(", "))).into());
    }
    let sections = Sections {
        simulate: load::<SimulatePayload>(&paths["simulate"])?.payload,
        kac_rice: load::<KacRicePayload>(&paths["kac-rice"])?.payload,
        chaos: load::<ChaosPayload>(&paths["chaos"])?.payload,
        partition: load::<PartitionPayload>(&paths["partition"])?.payload,
        local_field: load::<LocalFieldPayload>(&paths["local-field"])?.payload,
    };
    let checks = evaluate(&sections);
    let count = |s: Status| checks.iter().filter(|c| c.status == s).count();
    Ok(FullReport {
        sources: paths,
        passed: count(Status::Pass),
        failed: count(Status::Fail),
        skipped: count(Status::Skipped),
        sections,
        checks,
    })
}

/// Lattice spacing below which the KS test is meaningful (that of m=1, d=1024).
const KS_SPACING_LIMIT: f64 = 0.3536;

pub fn evaluate(s: &Sections) -> Vec<Check> {
    let mut out = Vec::new();
    for p in &s.simulate.points {
        let sm = &p.summary;
        let dev = (sm.mean - p.expected_mean).abs();
        out.push(check(
            format!("mean_law[m={},d={}]", p.m, p.d),
            dev / sm.mean_se,
            "|mean - d^(m/2)| <= 3 SE",
            dev <= 3.0 * sm.mean_se,
            format!("mean {:.4}, expected {}, SE {:.4}", sm.mean, p.expected_mean, sm.mean_se),
        ));
        out.push(check(
            format!("standardized_mean[m={},d={}]", p.m, p.d),
            p.standardized_mean.abs() / p.standardized_mean_se,
            "|mean of N~| <= 3 SE",
            p.standardized_mean.abs() <= 3.0 * p.standardized_mean_se,
            format!("{:.5} +- {:.5}", p.standardized_mean, p.standardized_mean_se),
        ));
        out.push(check(
            format!("exclusions[m={},d={}]", p.m, p.d),
            p.excluded as f64 / p.replicates as f64,
            "<= 1% of replicates",
            p.excluded * 100 <= p.replicates,
            format!("{} of {}", p.excluded, p.replicates),
        ));
        match (p.variance_rel_error, &p.quadrature) {
            (Some(rel), Some(q)) => out.push(check(
                format!("variance_law[m={},d={}]", p.m, p.d),
                rel,
                "relative error < 5%",
                rel < 0.05,
                format!("MC {:.4} vs quadrature {:.4}", sm.variance_over_dm2, q.variance),
            )),
            _ => out.push(skipped(format!("variance_law[m={},d={}]", p.m, p.d), "relative error < 5%", p.quadrature_error.clone().unwrap_or_default())),
        }
        let name = format!("clt[m={},d={}]", p.m, p.d);
        let tol = "KS p > 0.001, |skew z| < 4, |kurt z| < 4";
        match &p.normality {
            Some(v) if v.lattice_spacing.unwrap_or(0.0) <= KS_SPACING_LIMIT => out.push(check(
                name,
                v.ks_pvalue,
                tol,
                v.ks_pvalue > 0.001 && v.skewness_z.abs() < 4.0 && v.kurtosis_z.abs() < 4.0,
                format!("KS D {:.4}, skew z {:.2}, kurt z {:.2}, V_hat {:.4}", v.ks_statistic, v.skewness_z, v.kurtosis_z, v.v_hat),
            )),
            Some(v) => out.push(skipped(name, tol, format!("lattice spacing {:.3} too coarse; KS p {:.4} reported only", v.lattice_spacing.unwrap_or(0.0), v.ks_pvalue))),
            None => out.push(skipped(name, tol, p.normality_note.clone().unwrap_or_default())),
        }
    }

    let kr = &s.kac_rice;
    match &kr.stabilization {
        Some(st) if st.d_b >= 10_000 => out.push(check(
            "variance_stabilization",
            st.rel_change,
            "relative change < 1%",
            st.rel_change < 0.01,
            format!("d={} vs d={}", st.d_a, st.d_b),
        )),
        _ => out.push(skipped("variance_stabilization", "relative change < 1%", "needs two degrees, the largest >= 1e4")),
    }
    for p in &kr.points {
        out.push(check(
            format!("domination[d={}]", p.d),
            p.domination_constant,
            "constant < 10",
            p.domination_constant < 10.0,
            "|H_d - H_inf| against the decaying profile terms",
        ));
        out.push(check(
            format!("profile_bounds[d={}]", p.d),
            p.lemma_bounds_hold as f64 / p.lemma_bounds_total as f64,
            "all grid points",
            p.lemma_bounds_hold == p.lemma_bounds_total,
            format!("{} of {}", p.lemma_bounds_hold, p.lemma_bounds_total),
        ));
    }

    let ch = &s.chaos;
    for p in &ch.points {
        let nondecreasing = p.partial_sums.windows(2).all(|w| w[1] >= w[0]);
        let top = p.partial_sums.last().copied().unwrap_or(0.0);
        out.push(check(
            format!("parseval[d={}]", p.d),
            top / p.quadrature_variance,
            "partial sums nondecreasing and <= 1.02 x quadrature",
            nondecreasing && p.partial_sums.iter().all(|&v| v <= 1.02 * p.quadrature_variance),
            format!("sum to Q={} is {:.4}, quadrature {:.4}", ch.q_max, top, p.quadrature_variance),
        ));
        out.push(check(
            format!("psi_identity[d={}]", p.d),
            p.psi_identity_max_deviation,
            "|psi - (|C|+|A|)| <= 1e-12",
            p.psi_identity_max_deviation <= 1e-12,
            "psi is the matrix row/column maximum",
        ));
        match &p.arcones {
            Some(a) => out.push(check(
                format!("arcones_pair[d={}]", p.d),
                a.r0,
                "a < 2 and r0 < 1",
                a.a < 2.0 && a.r0 < 1.0,
                format!("a = {:.3}, r0 = {:.4}, tail bound beyond Q: {:?}", a.a, a.r0, p.tail_bound),
            )),
            None => out.push(check(format!("arcones_pair[d={}]", p.d), f64::NAN, "a < 2 and r0 < 1", false, "no threshold found")),
        }
    }
    // Chaos variance convergence in d for each q (first of the conditions
    // for the fourth moment theorem).
    if let [.., a, b] = ch.points.as_slice() {
        let worst = a
            .variances
            .iter()
            .zip(&b.variances)
            .filter(|(_, y)| y.value > 1e-12)
            .map(|(x, y)| (x.value - y.value).abs() / y.value)
            .fold(0.0, f64::max);
        out.push(check("chaos_convergence", worst, "relative change < 5% between the two largest d", worst < 0.05, format!("d={} vs d={}", a.d, b.d)));
    }
    let gn = ch.g_norms.iter().all(|g| g.holds);
    out.push(check("chaos_norm_bound", ch.g_norms.len() as f64, "||G_q||^2 <= ||f||^2 for every q", gn, "summability of the chaos variances"));
    for c in &ch.contraction {
        let target = -(c.m as f64) / 6.0;
        out.push(check(
            format!("contraction[m={},k={}]", c.m, c.k),
            c.slope,
            format!("monotone, slope {target:.4} +- 0.05"),
            c.monotone && (c.slope - target).abs() <= 0.05,
            format!("values {:?}", c.values),
        ));
    }
    let tail = ch.points.iter().filter_map(|p| p.tail_bound).fold(f64::NAN, f64::max);
    out.push(check("chaos_tail", tail, "finite Arcones tail bound at every d", ch.points.iter().all(|p| p.tail_bound.is_some()), "uniform control of the chaos tail"));

    let pa = &s.partition;
    let sep = &pa.separation;
    out.push(check(
        format!("separation[d={}]", sep.d),
        sep.violation_count as f64,
        "no non-neighbor pair closer than 1/sqrt(d)",
        sep.violation_count == 0,
        format!("{} of {} pairs, min dist*sqrt(d) {:?}", sep.violation_count, sep.pairs_tested, sep.min_ratio),
    ));
    let cs: Vec<f64> = pa.points.iter().map(|p| p.count_over_d).collect();
    let spread = cs.iter().copied().fold(f64::NEG_INFINITY, f64::max) / cs.iter().copied().fold(f64::INFINITY, f64::min);
    out.push(check("rectangle_count", spread, "count/d stable within a factor 2", spread <= 2.0, format!("count/d {cs:?}")));
    let hs: Vec<f64> = pa.points.iter().map(|p| p.hausdorff).collect();
    let last = pa.points.last().map(|p| (p.d, p.hausdorff));
    let monotone = hs.windows(2).all(|w| w[1] < w[0]);
    match last {
        Some((d, h)) if d >= 10_000 => out.push(check("hausdorff", h, "decreasing in d and < 0.05 at d = 1e4", monotone && h < 0.05, format!("{hs:?}"))),
        _ => out.push(check("hausdorff", hs.last().copied().unwrap_or(f64::NAN), "decreasing in d", monotone, format!("{hs:?}"))),
    }

    let lf = &s.local_field;
    match lf.slope {
        Some(slope) => out.push(check("local_covariance_rate", slope, "slope -1 +- 0.15", (slope + 1.0).abs() <= 0.15, lf.sup_errors.iter().map(|e| format!("d={}: {:.3e}", e.d, e.sup_error)).collect::<Vec<_>>().join(", "))),
        None => out.push(skipped("local_covariance_rate", "slope -1 +- 0.15", "needs two degrees")),
    }
    let sc = &lf.sampled_covariance;
    out.push(check("sampled_covariance", sc.max_z, "max |emp - Gamma| <= 3 SE", sc.max_z <= 3.0, format!("{} pairs, {} fields", sc.pairs, sc.n_fields)));
    let lc = &lf.limit_counts;
    let dev = (lc.mean - lf.expected_count).abs();
    out.push(check(
        format!("limit_mean_count[m={}]", lf.m),
        dev / lc.mean_se,
        "within 3 SE of the Kac-Rice density",
        dev <= 3.0 * lc.mean_se,
        format!("{:.5} vs {:.5}", lc.mean, lf.expected_count),
    ));
    if let Some(v) = lf.variance_oracle {
        let rel = (lc.variance - v).abs() / v;
        out.push(check("limit_count_variance", rel, "relative error < 5%", rel < 0.05, format!("{:.5} vs two-point oracle {v:.5}", lc.variance)));
    }

    out.extend(triangle(s));
    out
}

/// MC variance, quadrature and Parseval partial sum at every degree present in all three sub-reports.
fn triangle(s: &Sections) -> Vec<Check> {
    let mut out = Vec::new();
    for sp in &s.simulate.points {
        let Some(kp) = s.kac_rice.points.iter().find(|p| p.d == sp.d) else { continue };
        let Some(cp) = s.chaos.points.iter().find(|p| p.d == sp.d) else { continue };
        if s.chaos.m != sp.m || s.kac_rice.m != sp.m {
            continue;
        }
        let mc = sp.summary.variance_over_dm2;
        let quad = kp.quadrature.variance;
        let parseval = cp.partial_sums.last().copied().unwrap_or(0.0);
        let d = sp.d;
        out.push(check(format!("triangle_mc_quadrature[d={d}]"), (mc - quad).abs() / quad, "< 5%", (mc - quad).abs() < 0.05 * quad, format!("MC {mc:.4}, quadrature {quad:.4}")));
        out.push(check(
            format!("triangle_parseval_quadrature[d={d}]"),
            parseval / quad,
            "<= 1.02",
            parseval <= 1.02 * quad,
            format!("partial sum {parseval:.4} leaves {:.1}% in chaoses beyond Q", 100.0 * (1.0 - parseval / quad)),
        ));
        out.push(check(
            format!("triangle_parseval_mc[d={d}]"),
            parseval / mc,
            "<= 1.05",
            parseval <= 1.05 * mc,
            format!("partial sum {parseval:.4}, MC {mc:.4}"),
        ));
    }
    out
}

#[derive(Serialize)]
struct CheckRow<'a> {
    name: &'a str,
    status: Status,
    value: Option<f64>,
    tolerance: &'a str,
    detail: &'a str,
}

pub fn write_checks_csv(path: &Path, checks: &[Check]) -> Result<()> {
    let rows: Vec<CheckRow> = checks
        .iter()
        .map(|c| CheckRow { name: &c.name, status: c.status, value: c.value, tolerance: &c.tolerance, detail: &c.detail })
        .collect();
    crate::commands::write_csv(path, &rows)
}
