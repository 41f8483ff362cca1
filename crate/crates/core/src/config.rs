//! Run configuration files and output provenance.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::BaselineKind;
use crate::datasets::{RegimeConfig, SubsampleConfig};
use crate::error::{HedgeError, Result};
use crate::forward::{DiffusionConfig, ScheduleKind};
use crate::incidence::{HeatTerms, IncidenceMatrix};
use crate::rng::keyed_seed;
use crate::sampler::SampleConfig;
use crate::trainer::TrainConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Forward-process settings; unset `rho` and `tau` are derived from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionSection {
    pub horizon: f64,
    pub gamma: f64,
    pub tau: Option<f64>,
    pub rho: Option<f64>,
    pub schedule: ScheduleKind,
    pub quad_points: usize,
    pub heat: HeatTerms,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        let d = DiffusionConfig::for_density(1, 1, 0.5);
        Self {
            horizon: d.horizon,
            gamma: d.gamma,
            tau: None,
            rho: None,
            schedule: d.schedule,
            quad_points: d.quad_points,
            heat: d.heat,
        }
    }
}

impl DiffusionSection {
    pub fn build(&self, data: &[IncidenceMatrix]) -> Result<DiffusionConfig> {
        let base = DiffusionConfig::for_data(data)?;
        let (n, m) = base.shape();
        let rho = self.rho.unwrap_or(base.m0[(0, 0)]);
        if !(0.0..=1.0).contains(&rho) {
            return Err(HedgeError::InvalidConfig(format!("rho = {rho} outside [0, 1]")));
        }
        let cfg = DiffusionConfig {
            horizon: self.horizon,
            gamma: self.gamma,
            tau: self.tau.unwrap_or(self.gamma * rho * (1.0 - rho)),
            schedule: self.schedule,
            quad_points: self.quad_points,
            heat: self.heat,
            ..DiffusionConfig::for_density(n, m, rho)
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub steps: usize,
    pub threshold: f64,
    pub count: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        let d = SampleConfig::default();
        Self {
            steps: d.steps,
            threshold: d.threshold,
            count: 64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    /// Spectral truncation; unset means `min(n, m, 32)`.
    pub truncation: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub kind: BaselineKind,
    pub swaps_per_incidence: usize,
    pub count: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            kind: BaselineKind::ErHg,
            swaps_per_incidence: 10,
            count: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub seeds: usize,
    /// Held-out reference batch size per seed.
    pub test_count: usize,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            seeds: 5,
            test_count: 64,
        }
    }
}

/// A complete run configuration. Every field has a default, so an empty file
/// is valid. Section `seed` keys are replaced by substreams of the root seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub diffusion: DiffusionSection,
    pub train: TrainConfig,
    pub sample: SampleSection,
    pub metrics: MetricsSection,
    pub baseline: BaselineSection,
    pub regime: RegimeConfig,
    pub subsample: SubsampleConfig,
    pub ablate: AblateSection,
}

/// A 64-bit seed for component `name` derived from `root`.
pub fn component_seed(root: u64, name: &str) -> u64 {
    let bytes = keyed_seed(root, &[crate::rng::name_key(name)]);
    u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HedgeError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Sets the root seed and rewrites every section seed from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = component_seed(seed, "train");
        self.regime.seed = component_seed(seed, "regime");
        self.subsample.seed = component_seed(seed, "subsample");
        self
    }

    pub fn resolved(self) -> Self {
        let seed = self.seed;
        self.with_seed(seed)
    }

    pub fn sample_config(&self) -> SampleConfig {
        SampleConfig {
            steps: self.sample.steps,
            seed: component_seed(self.seed, "sample"),
            threshold: self.sample.threshold,
        }
    }

    pub fn baseline_config(&self) -> crate::baselines::BaselineConfig {
        crate::baselines::BaselineConfig {
            kind: self.baseline.kind,
            swaps_per_incidence: self.baseline.swaps_per_incidence,
            seed: component_seed(self.seed, "baseline"),
        }
    }

    /// SHA-256 of the canonical JSON form: keys sorted, seeds resolved.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self.clone().resolved()).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            config_hash: self.hash(),
            seed: self.seed,
            version: VERSION.to_string(),
        }
    }
}

/// Embedded in every output artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}
