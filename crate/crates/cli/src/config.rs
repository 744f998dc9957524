use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use boolnet::harness::{EventSpec, Experiment, ReplicaModel, ReplicaSchedule};
use boolnet::measures::reference_measure;
use boolnet::{BinnedMeasure, Domain, KernelSpec, MarkLaw, Mode, PaperScaling, Partition, PositionLaw, ScalingRegime, Topology};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_replicas")]
    pub replicas: u64,
    #[serde(default)]
    pub mode: Mode,
    /// Not part of the digest: where results land does not change them.
    #[serde(default = "default_out", skip_serializing)]
    pub out: PathBuf,
    pub domain: DomainConfig,
    pub regime: RegimeConfig,
    pub partition: PartitionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ldp: Option<LdpConfig>,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub mean_degree: MeanDegreeConfig,
}

fn default_replicas() -> u64 {
    1000
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub dimension: usize,
    #[serde(default = "one")]
    pub side: f64,
    #[serde(default)]
    pub topology: Topology,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeConfig {
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub position: PositionLaw,
    pub mark: MarkLaw,
    pub kernel: KernelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paper_scaling: Option<PaperScaling>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    /// `vol_d` defaults to the domain volume.
    Corollary {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        vol_d: Option<f64>,
    },
    Constant { value: f64 },
    /// Row-major values over the configured partition.
    Table { values: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub bins: Vec<usize>,
    #[serde(default = "one_bin")]
    pub radius_bins: usize,
}

fn one_bin() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    CellLaw,
    Geometric,
    /// `omega` defaults to the reference measure.
    ConditionalBinomial {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        omega: Option<Vec<f64>>,
    },
    ConditionalSoft {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        omega: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdpConfig {
    pub model: ModelConfig,
    pub event: EventSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ReplicaSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_rate: Option<f64>,
    #[serde(default = "ldp_tolerance")]
    pub tolerance: f64,
}

fn ldp_tolerance() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default = "oracle_tolerance")]
    pub tolerance: f64,
    #[serde(default = "edge_points")]
    pub edge_points: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            tolerance: oracle_tolerance(),
            edge_points: edge_points(),
        }
    }
}

fn oracle_tolerance() -> f64 {
    0.02
}

fn edge_points() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanDegreeConfig {
    #[serde(default = "degree_tolerance")]
    pub tolerance: f64,
}

impl Default for MeanDegreeConfig {
    fn default() -> Self {
        Self {
            tolerance: degree_tolerance(),
        }
    }
}

fn degree_tolerance() -> f64 {
    0.05
}

/// Raw overrides applied to the parsed TOML tree before validation.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub set: Vec<String>,
    pub seed: Option<u64>,
    pub lambda: Option<f64>,
    pub replicas: Option<u64>,
    pub out: Option<PathBuf>,
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

fn set_path(root: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), CliError> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("--set: malformed key path {path:?}")));
    }
    let mut table = root;
    for (depth, key) in keys[..keys.len() - 1].iter().enumerate() {
        let entry = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| {
            CliError::Config(format!("--set {path}: `{}` is not a table", keys[..=depth].join(".")))
        })?;
    }
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &Overrides) -> Result<Self, CliError> {
        let mut tree: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Config(format!("config is not valid TOML: {e}")))?;
        for item in &overrides.set {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects key=value, got {item:?}")))?;
            set_path(&mut tree, key.trim(), parse_value(value.trim()))?;
        }
        if let Some(seed) = overrides.seed {
            let seed = i64::try_from(seed).map_err(|_| CliError::Config("seed: must fit in i64 for TOML".into()))?;
            set_path(&mut tree, "seed", toml::Value::Integer(seed))?;
        }
        if let Some(lambda) = overrides.lambda {
            set_path(&mut tree, "regime.lambda", toml::Value::Float(lambda))?;
        }
        if let Some(r) = overrides.replicas {
            let r = i64::try_from(r).map_err(|_| CliError::Config("replicas: too large".into()))?;
            set_path(&mut tree, "replicas", toml::Value::Integer(r))?;
        }
        if let Some(out) = &overrides.out {
            set_path(&mut tree, "out", toml::Value::String(out.to_string_lossy().into_owned()))?;
        }
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(tree)).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let fail = |key: &str, msg: String| Err(CliError::Config(format!("{key}: {msg}")));
        if self.partition.bins.len() != self.domain.dimension {
            return fail(
                "partition.bins",
                format!("has {} entries but domain.dimension is {}", self.partition.bins.len(), self.domain.dimension),
            );
        }
        if let Some(grid) = &self.regime.lambda_grid {
            if grid.is_empty() || grid.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
                return fail("regime.lambda_grid", "must be a nonempty list of positive numbers".into());
            }
        }
        if self.replicas == 0 {
            return fail("replicas", "must be at least 1".into());
        }
        self.domain()?;
        self.partition()?;
        self.regime()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved config.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn domain(&self) -> Result<Domain, CliError> {
        let d = &self.domain;
        Domain::cube(d.dimension, d.side, d.topology).map_err(|e| CliError::Config(format!("domain: {e}")))
    }

    pub fn partition(&self) -> Result<Arc<Partition>, CliError> {
        let (r_min, r_max) = self.regime.mark.support();
        Partition::uniform(&self.domain()?, &self.partition.bins, r_min, r_max, self.partition.radius_bins)
            .map(Arc::new)
            .map_err(|e| CliError::Config(format!("partition: {e}")))
    }

    pub fn regime(&self) -> Result<ScalingRegime, CliError> {
        self.regime_at(self.regime.lambda)
    }

    pub fn regime_at(&self, lambda: f64) -> Result<ScalingRegime, CliError> {
        let r = &self.regime;
        let kernel = match &r.kernel {
            KernelConfig::Corollary { vol_d } => KernelSpec::Corollary {
                vol_d: vol_d.unwrap_or(self.domain()?.volume()),
            },
            KernelConfig::Constant { value } => KernelSpec::Constant { value: *value },
            KernelConfig::Table { values } => KernelSpec::Table {
                partition: self.partition()?,
                values: values.clone(),
            },
        };
        ScalingRegime::new(lambda, r.position.clone(), r.mark.clone(), kernel, r.paper_scaling)
            .map_err(|e| CliError::Config(format!("regime: {e}")))
    }

    pub fn lambda_grid(&self) -> Vec<f64> {
        self.regime.lambda_grid.clone().unwrap_or_else(|| vec![self.regime.lambda])
    }

    pub fn reference(&self) -> Result<BinnedMeasure, CliError> {
        reference_measure(&self.regime()?, &self.partition()?).map_err(|e| CliError::Config(format!("regime: {e}")))
    }

    pub fn ldp(&self) -> Result<&LdpConfig, CliError> {
        self.ldp
            .as_ref()
            .ok_or_else(|| CliError::Config("ldp: section required by ldp-verify".into()))
    }

    pub fn experiment(&self, model: ReplicaModel) -> Result<Experiment, CliError> {
        Ok(Experiment::new(self.regime()?, self.domain()?, self.partition()?, model))
    }

    pub fn replica_model(&self, model: &ModelConfig) -> Result<ReplicaModel, CliError> {
        let omega = |values: &Option<Vec<f64>>| -> Result<BinnedMeasure, CliError> {
            match values {
                None => self.reference(),
                Some(v) => BinnedMeasure::from_masses(self.partition()?, v.clone())
                    .map_err(|e| CliError::Config(format!("ldp.model.omega: {e}"))),
            }
        };
        Ok(match model {
            ModelConfig::CellLaw => ReplicaModel::CellLaw,
            ModelConfig::Geometric => ReplicaModel::Geometric { mode: self.mode },
            ModelConfig::ConditionalBinomial { omega: v } => ReplicaModel::ConditionalBinomial { omega: omega(v)? },
            ModelConfig::ConditionalSoft { omega: v } => ReplicaModel::ConditionalSoft { omega: omega(v)? },
        })
    }
}
