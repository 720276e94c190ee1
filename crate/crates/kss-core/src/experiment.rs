//! Monte Carlo campaigns over sampled systems and the normality checks
//! applied to the standardized counts `(N - d^{m/2}) / d^{m/4}`.

use crate::error::{invalid, precondition, KssError, Result};
use crate::kss_model::sample_system;
use crate::rng::{aux_rng, replicate_seed};
use crate::roots::{count_roots_circle, count_roots_sphere, ScanConfig, SphereConfig};
use crate::stats::{ks_pvalue, ks_statistic, normal_cdf, Moments};
use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub m: usize,
    pub d: usize,
    pub replicates: usize,
    pub seed: u64,
    /// Circle-scan grid cells per expected zero gap.
    pub oversample: usize,
    pub refine_depth: u32,
}

impl CampaignConfig {
    pub fn new(m: usize, d: usize, replicates: usize, seed: u64) -> Self {
        CampaignConfig { m, d, replicates, seed, oversample: 8, refine_depth: 40 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(invalid("replicates must be at least 1"));
        }
        if self.d == 0 {
            return Err(invalid("d must be at least 1"));
        }
        match self.m {
            1 if self.d > 2000 => Err(precondition("circle scan supports d <= 2000")),
            2 if self.d > 16 => Err(precondition("sphere locator supports d <= 16")),
            1 | 2 => Ok(()),
            m => Err(precondition(format!("no root counter for m = {m}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    /// Number of real affine roots.
    pub count: usize,
    pub sphere_count: usize,
    pub certified: bool,
    /// Why the replicate was left out of the statistics, if it was.
    pub excluded: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    pub mean_se: f64,
    /// 95% normal interval for the mean.
    pub mean_ci: (f64, f64),
    pub variance: f64,
    pub variance_over_dm2: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub config: CampaignConfig,
    pub records: Vec<ReplicateRecord>,
    pub excluded: usize,
    pub summary: SummaryStats,
    /// `(N - d^{m/2}) / d^{m/4}` of the retained replicates, in replicate order.
    pub standardized: Vec<f64>,
}

/// `(N - d^{m/2}) / d^{m/4}`.
pub fn standardize(count: usize, m: usize, d: usize) -> f64 {
    let df = d as f64;
    (count as f64 - df.powf(m as f64 / 2.0)) / df.powf(m as f64 / 4.0)
}

/// Spacing `2 / d^{m/4}` of the lattice carrying the standardized count
/// (the count has the parity of `d^m`).
pub fn lattice_spacing(m: usize, d: usize) -> f64 {
    2.0 / (d as f64).powf(m as f64 / 4.0)
}

fn run_replicate(cfg: &CampaignConfig, r: usize) -> ReplicateRecord {
    let seed = replicate_seed(cfg.seed, r as u64);
    let mut rec = ReplicateRecord { replicate: r, seed, count: 0, sphere_count: 0, certified: false, excluded: None };
    let outcome = sample_system(cfg.m, cfg.d, seed).and_then(|sys| match cfg.m {
        1 => {
            let scan = ScanConfig { oversample: cfg.oversample, refine_depth: cfg.refine_depth, locate: false, ..ScanConfig::default() };
            count_roots_circle(&sys, &scan)
        }
        _ => count_roots_sphere(&sys, &SphereConfig::default()),
    });
    match outcome {
        Ok(rc) => {
            rec.count = rc.affine_count;
            rec.sphere_count = rc.sphere_count;
            rec.certified = rc.certified;
            if !rc.certified {
                rec.excluded = Some("uncertified count".into());
            }
        }
        Err(e) => rec.excluded = Some(e.to_string()),
    }
    rec
}

/// Runs `R` replicates with replicate-indexed seeds. The result does not
/// depend on the number of threads. More than 1% excluded replicates is an error.
pub fn run_monte_carlo(cfg: &CampaignConfig) -> Result<CampaignResult> {
    cfg.validate()?;
    let records: Vec<ReplicateRecord> = (0..cfg.replicates).into_par_iter().map(|r| run_replicate(cfg, r)).collect();
    let excluded = records.iter().filter(|r| r.excluded.is_some()).count();
    if excluded * 100 > cfg.replicates {
        return Err(KssError::Numerical(format!("{excluded} of {} replicates excluded", cfg.replicates)));
    }
    let mut mom = Moments::new();
    let mut standardized = Vec::with_capacity(records.len() - excluded);
    for rec in records.iter().filter(|r| r.excluded.is_none()) {
        mom.push(rec.count as f64);
        standardized.push(standardize(rec.count, cfg.m, cfg.d));
    }
    let se = mom.std_error();
    let var = mom.variance();
    let summary = SummaryStats {
        n: mom.n as usize,
        mean: mom.mean,
        mean_se: se,
        mean_ci: (mom.mean - 1.96 * se, mom.mean + 1.96 * se),
        variance: var,
        variance_over_dm2: var / (cfg.d as f64).powf(cfg.m as f64 / 2.0),
        skewness: mom.skewness(),
        excess_kurtosis: mom.excess_kurtosis(),
    };
    Ok(CampaignResult { config: cfg.clone(), records, excluded, summary, standardized })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityVerdict {
    pub n: usize,
    pub v_hat: f64,
    pub mean: f64,
    pub mean_z: f64,
    pub ks_statistic: f64,
    pub ks_pvalue: f64,
    /// Lattice spacing used for the randomized continuity correction, if any.
    pub lattice_spacing: Option<f64>,
    pub skewness: f64,
    pub skewness_z: f64,
    pub excess_kurtosis: f64,
    pub kurtosis_z: f64,
}

/// CDF of `N(0, v) + U(-s/2, s/2)`.
pub fn smoothed_normal_cdf(x: f64, v: f64, s: f64) -> f64 {
    let sd = v.sqrt();
    // Antiderivative of Phi(y / sd).
    let g = |y: f64| y * normal_cdf(y / sd) + sd * (-(y * y) / (2.0 * v)).exp() / (2.0 * PI).sqrt();
    (g(x + s / 2.0) - g(x - s / 2.0)) / s
}

/// KS test against `N(0, v_hat)` plus moment z-scores. With a lattice
/// spacing `s`, each sample is shifted by an independent `U(-s/2, s/2)` and
/// compared with the correspondingly smoothed normal; moments use the raw sample.
pub fn normality_suite(samples: &[f64], v_hat: f64, lattice: Option<f64>, seed: u64) -> Result<NormalityVerdict> {
    let n = samples.len();
    if n < 500 {
        return Err(precondition(format!("normality suite needs at least 500 samples, got {n}")));
    }
    if !(v_hat > 0.0) {
        return Err(invalid("v_hat must be positive"));
    }
    let mom = Moments::from_slice(samples);
    let nf = n as f64;
    let ks = match lattice {
        Some(s) if s > 0.0 => {
            let mut rng = aux_rng(seed, 0x6b);
            let jittered: Vec<f64> = samples.iter().map(|x| x + s * (rng.random::<f64>() - 0.5)).collect();
            ks_statistic(&jittered, |x| smoothed_normal_cdf(x, v_hat, s))
        }
        _ => ks_statistic(samples, |x| normal_cdf(x / v_hat.sqrt())),
    };
    let skew = mom.skewness();
    let kurt = mom.excess_kurtosis();
    Ok(NormalityVerdict {
        n,
        v_hat,
        mean: mom.mean,
        mean_z: mom.mean / (v_hat / nf).sqrt(),
        ks_statistic: ks,
        ks_pvalue: ks_pvalue(ks, n),
        lattice_spacing: lattice.filter(|s| *s > 0.0),
        skewness: skew,
        skewness_z: skew / (6.0 / nf).sqrt(),
        excess_kurtosis: kurt,
        kurtosis_z: kurt / (24.0 / nf).sqrt(),
    })
}
