//! Experiment configuration (TOML). Every field has a default except the
//! top-level `seed`; unknown keys are rejected.

use std::path::{Path, PathBuf};

use linkgt::engine::{Integrator, YInit, DEFAULT_BLOWUP};
use linkgt::graph::SwitchMode;
use linkgt::nonlinear::{LinkNonlinearity, SectorMode};
use linkgt::svmlab::{OracleMode, PartitionMode};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
    #[error("unknown preset `{0}` (see `preset list`)")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub nonlinearity: NonlinearitySection,
    #[serde(default)]
    pub cost: CostSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub outputs: OutputsSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    #[default]
    Ellipse,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub kind: DataKind,
    pub points: usize,
    pub radius: f64,
    pub gap: f64,
    /// `chi1,chi2,label` file for `kind = "csv"`.
    pub path: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { kind: DataKind::Ellipse, points: 200, radius: 0.6, gap: 0.05, path: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSection {
    pub agents: usize,
    pub mode: PartitionMode,
}

impl Default for PartitionSection {
    fn default() -> Self {
        Self { agents: 5, mode: PartitionMode::Stratified }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Undirected k-hop ring.
    Ring,
    /// Directed circulant receiving from the next `hops` nodes.
    #[default]
    DirectedCirculant,
    /// Weighted edge list from `edges`.
    EdgeList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub topology: Topology,
    pub hops: usize,
    pub total_weight: f64,
    pub switching: SwitchMode,
    pub switch_period: f64,
    pub edges: Option<PathBuf>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            topology: Topology::DirectedCirculant,
            hops: 2,
            total_weight: 0.8,
            switching: SwitchMode::Permute,
            switch_period: 0.001,
            edges: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NonlinearitySection {
    pub x: LinkNonlinearity,
    /// Defaults to the `x` link map.
    pub y: Option<LinkNonlinearity>,
    pub sector_mode: SectorMode,
    /// Radius of the state domain for sector bounds; unbounded if absent.
    pub domain: Option<f64>,
}

impl Default for NonlinearitySection {
    fn default() -> Self {
        Self { x: LinkNonlinearity::Identity, y: None, sector_mode: SectorMode::Linearized, domain: None }
    }
}

impl NonlinearitySection {
    pub fn y_link(&self) -> &LinkNonlinearity {
        self.y.as_ref().unwrap_or(&self.x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    #[default]
    Svm,
    /// Random diagonal quadratics `1/2 (x - b)^T Q (x - b)`.
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSection {
    pub kind: CostKind,
    pub mu: f64,
    pub c: f64,
    pub eps_nu: f64,
    pub oracle: OracleMode,
    pub oracle_tol: f64,
    /// Quadratic only: state dimension.
    pub dim: usize,
    /// Quadratic only: range of the diagonal curvatures.
    pub curvature: [f64; 2],
    /// Quadratic only: centers are drawn from `[-spread, spread]`.
    pub center_spread: f64,
    /// Quadratic only: rotate each curvature matrix by a random
    /// orthogonal matrix (coupled coordinates) instead of keeping it diagonal.
    pub rotate: bool,
}

impl Default for CostSection {
    fn default() -> Self {
        Self {
            kind: CostKind::Svm,
            mu: 2.0,
            c: 1.0,
            eps_nu: 1e-6,
            oracle: OracleMode::Matched,
            oracle_tol: 1e-9,
            dim: 2,
            curvature: [0.5, 3.0],
            center_spread: 3.0,
            rotate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub alpha: f64,
    pub eta: f64,
    pub t_end: f64,
    pub integrator: Integrator,
    pub y_init: YInit,
    pub sample_stride: usize,
    pub x0_range: [f64; 2],
    pub blowup: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            alpha: 6.0,
            eta: 0.001,
            t_end: 150.0,
            integrator: Integrator::Rk4,
            y_init: YInit::Gradient,
            sample_stride: 100,
            x0_range: [0.0, 1.0],
            blowup: DEFAULT_BLOWUP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputsSection {
    pub plots: bool,
    /// Adds a wall-clock timestamp to metadata and plots.
    pub timestamp: bool,
}

impl Default for OutputsSection {
    fn default() -> Self {
        Self { plots: true, timestamp: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Linearized verdicts over constant link-gain regimes.
    #[default]
    Spectral,
    /// Spectral verdicts plus one simulation per cell.
    Runs,
}

/// Log-spaced grid `lo..=hi` with `points` entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaRange {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

/// Sweep axes. Empty axes fall back to the configured single value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub alpha: Vec<f64>,
    /// Appended to `alpha` when present.
    pub alpha_range: Option<AlphaRange>,
    pub rho: Vec<f64>,
    pub khop: Vec<usize>,
    pub eta: Vec<f64>,
    pub mode: SweepMode,
    /// Bisection steps used to refine each frontier.
    pub refine: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            alpha: Vec::new(),
            alpha_range: None,
            rho: Vec::new(),
            khop: Vec::new(),
            eta: Vec::new(),
            mode: SweepMode::Spectral,
            refine: 40,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn n_agents(&self) -> usize {
        self.partition.agents
    }

    /// Collects every violation instead of stopping at the first one.
    pub fn validate(&self, base_dir: Option<&Path>) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        fn positive_into(errs: &mut Vec<String>, name: &str, v: f64) {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be positive and finite (got {v})"));
            }
        }
        macro_rules! positive {
            ($name:expr, $v:expr) => {
                positive_into(&mut errs, $name, $v)
            };
        }
        positive!("solver.alpha", self.solver.alpha);
        positive!("solver.eta", self.solver.eta);
        positive!("solver.t_end", self.solver.t_end);
        positive!("solver.blowup", self.solver.blowup);
        positive!("network.switch_period", self.network.switch_period);
        if self.cost.kind == CostKind::Svm {
            positive!("cost.mu", self.cost.mu);
            positive!("cost.c", self.cost.c);
            positive!("cost.oracle_tol", self.cost.oracle_tol);
            positive!("data.radius", self.data.radius);
        } else {
            positive!("cost.center_spread", self.cost.center_spread);
        }
        for &a in &self.sweep.alpha {
            positive!("sweep.alpha entries", a);
        }
        if let Some(r) = self.sweep.alpha_range {
            if !(r.lo > 0.0 && r.lo < r.hi && r.hi.is_finite() && r.points >= 2) {
                errs.push(format!(
                    "sweep.alpha_range needs 0 < lo < hi and points >= 2 (got lo={}, hi={}, points={})",
                    r.lo, r.hi, r.points
                ));
            }
        }
        for &r in &self.sweep.rho {
            positive!("sweep.rho entries", r);
        }
        for &e in &self.sweep.eta {
            positive!("sweep.eta entries", e);
        }

        if self.solver.sample_stride == 0 {
            errs.push("solver.sample_stride must be at least 1".into());
        }
        let [lo, hi] = self.solver.x0_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            errs.push(format!("solver.x0_range must be an ordered finite pair (got [{lo}, {hi}])"));
        }
        if self.network.switching == SwitchMode::Permute
            && self.solver.eta > self.network.switch_period
        {
            errs.push(format!(
                "solver.eta ({}) exceeds network.switch_period ({}); a step would straddle a switch",
                self.solver.eta, self.network.switch_period
            ));
        }
        let n = self.partition.agents;
        if n < 2 {
            errs.push(format!("partition.agents must be at least 2 (got {n})"));
        }
        let tw = self.network.total_weight;
        if !(tw > 0.0 && tw < 1.0) {
            errs.push(format!("network.total_weight must lie in (0, 1) (got {tw})"));
        }
        match self.network.topology {
            Topology::Ring | Topology::DirectedCirculant => {
                if self.network.hops == 0 || 2 * self.network.hops > n.saturating_sub(1) {
                    errs.push(format!(
                        "network.hops = {} is out of range for a ring of {n} nodes (need 1 <= hops <= {})",
                        self.network.hops,
                        n.saturating_sub(1) / 2
                    ));
                }
            }
            Topology::EdgeList => match &self.network.edges {
                None => errs.push("network.edges is required for topology = \"edge_list\"".into()),
                Some(p) if !resolve(base_dir, p).exists() => {
                    errs.push(format!("network.edges file {} does not exist", p.display()))
                }
                _ => {}
            },
        }
        for &k in &self.sweep.khop {
            if k == 0 || 2 * k > n.saturating_sub(1) {
                errs.push(format!("sweep.khop entry {k} is out of range for a ring of {n} nodes"));
            }
        }
        for (name, g) in [("nonlinearity.x", &self.nonlinearity.x), ("nonlinearity.y", self.nonlinearity.y_link())] {
            if let Err(e) = g.validate() {
                errs.push(format!("{name}: {e}"));
            }
        }
        if let Some(d) = self.nonlinearity.domain {
            if !(d > 0.0) {
                errs.push(format!("nonlinearity.domain must be positive (got {d})"));
            }
        }

        match self.cost.kind {
            CostKind::Svm => {
                if !(self.cost.eps_nu >= 0.0 && self.cost.eps_nu.is_finite()) {
                    errs.push(format!("cost.eps_nu must be non-negative (got {})", self.cost.eps_nu));
                }
                match self.data.kind {
                    DataKind::Ellipse => {
                        if self.data.points < 2 {
                            errs.push(format!("data.points must be at least 2 (got {})", self.data.points));
                        }
                        if self.data.points < n {
                            errs.push(format!(
                                "data.points ({}) is smaller than partition.agents ({n})",
                                self.data.points
                            ));
                        }
                        if !(self.data.gap >= 0.0) {
                            errs.push(format!("data.gap must be non-negative (got {})", self.data.gap));
                        }
                    }
                    DataKind::Csv => match &self.data.path {
                        None => errs.push("data.path is required for kind = \"csv\"".into()),
                        Some(p) if !resolve(base_dir, p).exists() => {
                            errs.push(format!("data.path file {} does not exist", p.display()))
                        }
                        _ => {}
                    },
                }
            }
            CostKind::Quadratic => {
                if self.cost.dim == 0 {
                    errs.push("cost.dim must be at least 1".into());
                }
                let [a, b] = self.cost.curvature;
                if !(a > 0.0 && a <= b && b.is_finite()) {
                    errs.push(format!("cost.curvature must satisfy 0 < lo <= hi (got [{a}, {b}])"));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }
}

/// Paths in a config are relative to the config file's directory.
pub fn resolve(base_dir: Option<&Path>, p: &Path) -> PathBuf {
    match base_dir {
        Some(d) if p.is_relative() => d.join(p),
        _ => p.to_path_buf(),
    }
}

/// A parsed config together with its verbatim source text.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub source_text: String,
    pub source_name: String,
    pub base_dir: Option<PathBuf>,
}

pub fn load_path(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(LoadedConfig {
        config: ExperimentConfig::from_toml(&text)?,
        source_text: text,
        source_name: path.display().to_string(),
        base_dir: path.parent().map(Path::to_path_buf),
    })
}

pub fn load_preset(name: &str) -> Result<LoadedConfig, ConfigError> {
    let p = crate::presets::find(name).ok_or_else(|| ConfigError::UnknownPreset(name.into()))?;
    Ok(LoadedConfig {
        config: ExperimentConfig::from_toml(p.text)?,
        source_text: p.text.to_string(),
        source_name: format!("preset:{}", p.name),
        base_dir: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_mandatory() {
        let err = ExperimentConfig::from_toml("[solver]\nalpha = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
        let cfg = ExperimentConfig::from_toml("seed = 3\n").unwrap();
        assert_eq!(cfg.solver.alpha, 6.0);
        assert!(cfg.validate(None).is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("seed = 1\n[solver]\nalpah = 1.0\n").is_err());
        assert!(ExperimentConfig::from_toml("seed = 1\nextra = 2\n").is_err());
        assert!(ExperimentConfig::from_toml("seed = 1\n[nonlinearity]\nx = { kind = \"log_quantizer\", rho = 1.0, bits = 3 }\n").is_err());
    }

    #[test]
    fn validation_lists_every_violation() {
        let text = "seed = 1\n[solver]\nalpha = -1.0\neta = 0.0\n[partition]\nagents = 1\n";
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        match cfg.validate(None) {
            Err(ConfigError::Invalid(v)) => {
                assert!(v.iter().any(|e| e.contains("solver.alpha")));
                assert!(v.iter().any(|e| e.contains("solver.eta")));
                assert!(v.iter().any(|e| e.contains("partition.agents")));
                assert!(v.len() >= 3);
            }
            other => panic!("expected validation failure, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_through_toml() {
        for p in crate::presets::PRESETS {
            let a = ExperimentConfig::from_toml(p.text).unwrap();
            let b = ExperimentConfig::from_toml(&a.to_toml()).unwrap();
            assert_eq!(a, b, "{}", p.name);
        }
    }

    #[test]
    fn nested_link_maps_parse() {
        let text = r#"
seed = 9
[nonlinearity]
x = { kind = "composite", stages = [{ kind = "log_quantizer", rho = 0.5 }, { kind = "saturation", limit = 3.0 }] }
y = { kind = "identity" }
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert!(matches!(cfg.nonlinearity.x, LinkNonlinearity::Composite { ref stages } if stages.len() == 2));
        assert_eq!(cfg.nonlinearity.y_link(), &LinkNonlinearity::Identity);
    }
}
