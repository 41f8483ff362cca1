//! Heat-operator ablations: the same data, seeds and training budget with
//! one or both sides of the heat term masked.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::component_seed;
use crate::datasets::{synth_regime, RegimeConfig};
use crate::error::{HedgeError, Result};
use crate::forward::DiffusionConfig;
use crate::incidence::HeatTerms;
use crate::metrics::{evaluate_with, MetricReport};
use crate::net::NetArch;
use crate::sampler::{generate, SampleConfig};
use crate::trainer::{train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    OuOnly,
    NodeOnly,
    EdgeOnly,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::OuOnly, Variant::NodeOnly, Variant::EdgeOnly];

    pub fn heat(self) -> HeatTerms {
        match self {
            Variant::Full => HeatTerms::Both,
            Variant::OuOnly => HeatTerms::Off,
            Variant::NodeOnly => HeatTerms::NodeOnly,
            Variant::EdgeOnly => HeatTerms::EdgeOnly,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::OuOnly => "ou_only",
            Variant::NodeOnly => "node_only",
            Variant::EdgeOnly => "edge_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    pub regime: RegimeConfig,
    pub seeds: usize,
    pub root_seed: u64,
    /// Held-out reference batch size per seed.
    pub test_count: usize,
    pub variants: Vec<Variant>,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub generate_count: usize,
    /// Base diffusion settings; `heat` and the data-derived fields are overridden.
    pub gamma: f64,
    pub truncation: Option<usize>,
}

impl AblationConfig {
    pub fn new(regime: RegimeConfig, seeds: usize, root_seed: u64) -> Self {
        Self {
            test_count: regime.count,
            generate_count: regime.count,
            regime,
            seeds,
            root_seed,
            variants: Variant::ALL.to_vec(),
            train: TrainConfig::default(),
            sample: SampleConfig::default(),
            gamma: 12.0,
            truncation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: Variant,
    pub seed_index: usize,
    pub final_loss: f64,
    pub failures: usize,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let k = values.len() as f64;
        let mean = values.iter().sum::<f64>() / k;
        let se = if values.len() < 2 {
            f64::NAN
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
            (var / k).sqrt()
        };
        Self { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub regime: String,
    pub runs: Vec<RunResult>,
    /// variant -> metric -> summary over seeds.
    pub summary: BTreeMap<Variant, BTreeMap<String, MeanSe>>,
}

impl AblationReport {
    pub fn mean(&self, variant: Variant, metric: &str) -> Option<f64> {
        self.summary.get(&variant)?.get(metric).map(|m| m.mean)
    }

    /// Plain-text table, one row per variant and one column per metric.
    pub fn table(&self) -> String {
        let metrics: Vec<&str> = match self.runs.first() {
            Some(r) => r.metrics.named().iter().map(|(k, _)| *k).collect(),
            None => return String::new(),
        };
        let mut out = format!("{:<10}", "variant");
        for m in &metrics {
            out += &format!(" {m:>22}");
        }
        out.push('\n');
        for (variant, row) in &self.summary {
            out += &format!("{:<10}", variant.name());
            for m in &metrics {
                let cell = row.get(*m).map_or("-".to_string(), |v| format!("{:.4} ± {:.4}", v.mean, v.se));
                out += &format!(" {cell:>22}");
            }
            out.push('\n');
        }
        out
    }
}

/// Trains and evaluates every variant on every seed. Within a seed all
/// variants share data, training and sampling streams.
pub fn run_ablation(cfg: &AblationConfig, mut progress: Option<&mut dyn FnMut(&RunResult)>) -> Result<AblationReport> {
    if cfg.seeds == 0 || cfg.variants.is_empty() {
        return Err(HedgeError::InvalidConfig("ablation needs at least one seed and one variant".into()));
    }
    let mut runs = Vec::new();
    for seed_index in 0..cfg.seeds {
        let base = component_seed(cfg.root_seed, &format!("ablate/{seed_index}"));
        let train_data = synth_regime(&RegimeConfig {
            seed: component_seed(base, "train_data"),
            ..cfg.regime.clone()
        })?;
        let test_data = synth_regime(&RegimeConfig {
            seed: component_seed(base, "test_data"),
            count: cfg.test_count,
            ..cfg.regime.clone()
        })?;
        let tc = TrainConfig {
            seed: component_seed(base, "train"),
            ..cfg.train.clone()
        };
        let sc = SampleConfig {
            seed: component_seed(base, "sample"),
            ..cfg.sample.clone()
        };
        for &variant in &cfg.variants {
            let diffusion = DiffusionConfig {
                heat: variant.heat(),
                ..DiffusionConfig::for_data(&train_data)?
            };
            let diffusion = DiffusionConfig {
                tau: cfg.gamma / diffusion.gamma * diffusion.tau,
                gamma: cfg.gamma,
                ..diffusion
            };
            let (net, report) = train(&train_data, &diffusion, NetArch::default(), &tc, None)?;
            let out = generate(&net, &diffusion, &sc, cfg.generate_count)?;
            let gen = out.matrices();
            if gen.is_empty() {
                return Err(HedgeError::Empty(format!("{} generated no samples", variant.name())));
            }
            let result = RunResult {
                variant,
                seed_index,
                final_loss: report.records.last().map_or(f64::NAN, |r| r.loss),
                failures: out.failures.len(),
                metrics: evaluate_with(&test_data, &gen, cfg.truncation)?,
            };
            if let Some(cb) = progress.as_mut() {
                cb(&result);
            }
            runs.push(result);
        }
    }
    let mut summary: BTreeMap<Variant, BTreeMap<String, MeanSe>> = BTreeMap::new();
    for &variant in &cfg.variants {
        let mine: Vec<&RunResult> = runs.iter().filter(|r| r.variant == variant).collect();
        let row = summary.entry(variant).or_default();
        for (k, (name, _)) in mine[0].metrics.named().iter().enumerate() {
            let vals: Vec<f64> = mine.iter().map(|r| r.metrics.named()[k].1).collect();
            row.insert((*name).to_string(), MeanSe::of(&vals));
        }
    }
    Ok(AblationReport {
        regime: cfg.regime.kind.name().to_string(),
        runs,
        summary,
    })
}
