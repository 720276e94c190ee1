use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use kss_core::chaos::{default_q_max, MEHLER_MAX_ORDER};
use kss_core::experiment::CampaignConfig;
use kss_core::partition::{count_rectangles, partition_scales};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Simulate,
    KacRice,
    Chaos,
    Partition,
    LocalField,
    Report,
}

impl Kind {
    pub const SUB_REPORTS: [Kind; 5] = [Kind::Simulate, Kind::KacRice, Kind::Chaos, Kind::Partition, Kind::LocalField];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Simulate => "simulate",
            Kind::KacRice => "kac-rice",
            Kind::Chaos => "chaos",
            Kind::Partition => "partition",
            Kind::LocalField => "local-field",
            Kind::Report => "report",
        }
    }
}

/// Largest partition the `partition` command will build.
pub const MAX_RECTANGLES: u64 = 5_000_000;

/// Contents of a `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub m: Option<usize>,
    pub d: Option<Vec<usize>>,
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub params: Params,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub alpha: Option<f64>,
    pub konst: Option<f64>,
    pub q_max: Option<u32>,
    pub nodes: Option<usize>,
    pub z_max: Option<f64>,
    pub n_mc: Option<usize>,
    pub pairs: Option<usize>,
    pub fields: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Values given on the command line; they win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub m: Option<usize>,
    pub d: Option<Vec<usize>>,
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Fully resolved configuration, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub m: usize,
    pub d: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    /// Partition exponent (`partition`) or Gaussian decay rate (`kac-rice`, `chaos`).
    pub alpha: f64,
    pub konst: f64,
    pub q_max: u32,
    pub nodes: usize,
    pub z_max: Option<f64>,
    pub n_mc: usize,
    pub pairs: usize,
    pub fields: usize,
    pub out: PathBuf,
}

/// Input error that maps to exit code 2.
#[derive(Debug)]
pub struct PreconditionError(pub String);

impl std::fmt::Display for PreconditionError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for PreconditionError {}

fn pre(msg: impl Into<String>) -> anyhow::Error {
    PreconditionError(msg.into()).into()
}

impl ExperimentConfig {
    pub fn resolve(kind: Kind, file: FileConfig, cli: Overrides) -> Result<Self> {
        let m = cli.m.or(file.m).unwrap_or(match kind {
            Kind::Partition => 2,
            _ => 1,
        });
        let default_d = match (kind, m) {
            (Kind::Simulate, 1) => vec![100, 400],
            (Kind::Simulate, _) => vec![4],
            (Kind::KacRice, 1) => vec![100, 400, 1600, 10_000, 40_000],
            (Kind::KacRice, _) => vec![100, 400],
            (Kind::Chaos, _) => vec![100, 400, 1600],
            (Kind::Partition, _) | (Kind::LocalField, _) => vec![100, 1_000, 10_000],
            (Kind::Report, _) => vec![],
        };
        let p = file.params;
        let cfg = ExperimentConfig {
            kind,
            m,
            d: cli.d.or(file.d).unwrap_or(default_d),
            replicates: cli.replicates.or(file.replicates).unwrap_or(1000),
            seed: cli.seed.or(file.seed).unwrap_or(1),
            alpha: p.alpha.unwrap_or(0.25),
            konst: p.konst.unwrap_or(10.0),
            q_max: p.q_max.unwrap_or_else(|| default_q_max(m)),
            nodes: p.nodes.unwrap_or(128),
            z_max: p.z_max,
            n_mc: p.n_mc.unwrap_or(if kind == Kind::Chaos { 200_000 } else { 20_000 }),
            pairs: p.pairs.unwrap_or(1000),
            fields: p.fields.unwrap_or(if m == 1 { 100_000 } else { 2_000 }),
            out: cli.out.or(file.out).unwrap_or_else(|| PathBuf::from("kss-out")),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Re-checks every module precondition the run will hit.
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            bail!(pre("replicates must be at least 1"));
        }
        if self.kind == Kind::Report {
            return Ok(());
        }
        if self.d.is_empty() {
            bail!(pre("d list is empty"));
        }
        if self.m == 0 {
            bail!(pre("m must be at least 1"));
        }
        if self.nodes < 2 {
            bail!(pre("nodes must be at least 2"));
        }
        match self.kind {
            Kind::Simulate => {
                if self.replicates < 2 {
                    bail!(pre("simulate needs at least 2 replicates"));
                }
                for &d in &self.d {
                    CampaignConfig::new(self.m, d, self.replicates, self.seed)
                        .validate()
                        .map_err(|e| pre(e.to_string()))?;
                }
            }
            Kind::KacRice | Kind::Chaos => {
                if self.m > 2 {
                    bail!(pre(format!("{} supports m <= 2", self.kind.name())));
                }
                if self.d.iter().any(|&d| d < 2) {
                    bail!(pre("d must be at least 2"));
                }
                if self.alpha <= 0.0 || self.konst <= 0.0 {
                    bail!(pre("alpha and konst must be positive"));
                }
                if let Some(z) = self.z_max {
                    let lim = self.d.iter().map(|&d| (d as f64).sqrt() * std::f64::consts::FRAC_PI_2).fold(f64::INFINITY, f64::min);
                    if !(z > 2e-3 && z <= lim) {
                        bail!(pre(format!("z_max = {z} outside (2e-3, {lim}]")));
                    }
                }
                if self.m >= 2 && self.n_mc < 1000 {
                    bail!(pre("n_mc must be at least 1000 for m >= 2"));
                }
                if self.kind == Kind::Chaos && (self.q_max == 0 || self.q_max > MEHLER_MAX_ORDER) {
                    bail!(pre(format!("q_max must lie in 1..={MEHLER_MAX_ORDER}")));
                }
            }
            Kind::Partition => {
                for &d in &self.d {
                    partition_scales(self.m, d, self.alpha).map_err(|e| pre(e.to_string()))?;
                    let n = count_rectangles(self.m, d, self.alpha).map_err(|e| pre(e.to_string()))?;
                    if n > MAX_RECTANGLES {
                        bail!(pre(format!("d = {d} gives {n} rectangles (limit {MAX_RECTANGLES})")));
                    }
                }
            }
            Kind::LocalField => {
                if self.m > 2 {
                    bail!(pre("local-field supports m <= 2"));
                }
                if self.d.iter().any(|&d| d < 10) {
                    bail!(pre("local-field needs d >= 10"));
                }
                if self.fields < 500 {
                    bail!(pre("fields must be at least 500"));
                }
            }
            Kind::Report => {}
        }
        Ok(())
    }

    pub fn kind_dir(&self, kind: Kind) -> PathBuf {
        self.out.join(kind.name())
    }
}
