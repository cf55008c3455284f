//! Scenario configuration files.
//!
//! Configs are TOML by default; a `.json` path is parsed as JSON with the
//! same shape. Dataset paths are resolved relative to the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use hefl_core::data::PartitionPlan;
use hefl_core::federated::FlConfig;
use hefl_core::neural::ModelSpec;
use hefl_core::protocol::{HospitalConfig, ScenarioConfig, ScenarioData};

use crate::dataset;

fn default_frac_bits() -> u32 {
    16
}

fn default_grid_step() -> f64 {
    0.1
}

fn default_bm_nodes() -> u16 {
    5
}

fn default_ledger_nodes() -> u16 {
    3
}

fn default_true() -> bool {
    true
}

/// Where the samples come from and how they are split. Counts are per
/// hospital for train/validation and global for test.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Flat CSV: header `shape=CxHxW,classes=N`, then one row per sample of
    /// comma-separated values with the integer label last.
    Csv {
        path: PathBuf,
        #[serde(default = "default_true")]
        shuffle: bool,
        train_per_hospital: usize,
        validation_per_hospital: usize,
        test: usize,
    },
    /// Big-endian IDX image/label file pair.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default = "default_true")]
        shuffle: bool,
        train_per_hospital: usize,
        validation_per_hospital: usize,
        test: usize,
    },
    /// Seeded Gaussian blobs.
    SyntheticBlobs {
        classes: usize,
        features: usize,
        noise: f64,
        train_per_hospital: usize,
        validation_per_hospital: usize,
        test: usize,
    },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HospitalFile {
    pub name: String,
    pub edges: u16,
    #[serde(default = "default_ledger_nodes")]
    pub ledger_nodes: u16,
    #[serde(default = "default_partition")]
    pub partition: PartitionPlan,
    pub fl: FlConfig,
    pub model: ModelSpec,
}

fn default_partition() -> PartitionPlan {
    PartitionPlan::Contiguous
}

/// Benchmark sweep settings; every field has a default so a bare `[bench]`
/// table (or none at all) works.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub node_counts: Vec<u16>,
    pub image_counts: Vec<usize>,
    pub payload_kilobytes: usize,
    pub repetitions: usize,
    pub parties: u16,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            node_counts: vec![5, 10, 15, 20],
            image_counts: vec![50, 100, 150, 200, 250, 300],
            payload_kilobytes: 2048,
            repetitions: 3,
            parties: 3,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub scenario_id: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_frac_bits")]
    pub frac_bits: u32,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    #[serde(default = "default_bm_nodes")]
    pub bm_nodes: u16,
    #[serde(default)]
    pub eval_samples_per_hospital: Option<usize>,
    pub dataset: DatasetConfig,
    pub hospitals: Vec<HospitalFile>,
    #[serde(default)]
    pub bench: Option<BenchConfig>,
}

/// Parses a config file (TOML, or JSON for `.json` paths).
pub fn load_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let config: FileConfig = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("invalid JSON config {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("invalid TOML config {}", path.display()))?
    };
    if config.hospitals.is_empty() {
        bail!("config lists no hospitals");
    }
    Ok(config)
}

/// Builds the runnable scenario: resolves the dataset against the config
/// location, applies the seed override, and splits the data.
pub fn build_scenario(
    file: &FileConfig,
    config_dir: &Path,
    seed_override: Option<u64>,
) -> Result<(ScenarioConfig, ScenarioData)> {
    let seed = seed_override.unwrap_or(file.seed);
    let hospitals: Vec<HospitalConfig> = file
        .hospitals
        .iter()
        .map(|hospital| HospitalConfig {
            name: hospital.name.clone(),
            model: hospital.model.clone(),
            edges: hospital.edges,
            fl: hospital.fl.clone(),
            ledger_nodes: hospital.ledger_nodes,
            partition_plan: hospital.partition.clone(),
        })
        .collect();
    let config = ScenarioConfig {
        scenario_id: file.scenario_id.clone(),
        seed,
        frac_bits: file.frac_bits,
        hospitals,
        grid_step: file.grid_step,
        bm_nodes: file.bm_nodes,
        eval_samples_per_hospital: file.eval_samples_per_hospital,
    };
    let data = dataset::load_scenario_data(&file.dataset, config_dir, file.hospitals.len(), seed)?;
    Ok((config, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_toml_with_defaults() {
        let text = r#"
scenario_id = "t"
seed = 3

[dataset]
kind = "synthetic-blobs"
classes = 3
features = 4
noise = 0.5
train_per_hospital = 40
validation_per_hospital = 10
test = 30

[[hospitals]]
name = "H0"
edges = 2
fl = { rounds = 2, epochs = 1, participants_per_round = 2, learning_rate = 0.2, batch_size = 8 }
model = { input_shape = [4], layers = [ { dense = { inputs = 4, outputs = 3 } }, "softmax" ] }

[[hospitals]]
name = "H1"
edges = 2
ledger_nodes = 5
partition = { label_skewed = { alpha = 0.5 } }
fl = { rounds = 2, epochs = 1, participants_per_round = 1, learning_rate = 0.2, batch_size = 8 }
model = { input_shape = [4], layers = [ { dense = { inputs = 4, outputs = 8 } }, "relu", { dense = { inputs = 8, outputs = 3 } }, "softmax" ] }
"#;
        let config: FileConfig = toml::from_str(text).unwrap();
        assert_eq!(config.frac_bits, 16);
        assert_eq!(config.grid_step, 0.1);
        assert_eq!(config.bm_nodes, 5);
        assert_eq!(config.hospitals[0].ledger_nodes, 3);
        assert_eq!(config.hospitals[1].ledger_nodes, 5);
        assert!(matches!(
            config.hospitals[1].partition,
            PartitionPlan::LabelSkewed { .. }
        ));
        let (scenario, data) = build_scenario(&config, Path::new("."), Some(9)).unwrap();
        assert_eq!(scenario.seed, 9);
        assert_eq!(data.hospitals.len(), 2);
        assert_eq!(data.test.len(), 30);
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = r#"
scenario_id = "t"
bogus = 1
[dataset]
kind = "synthetic-blobs"
classes = 2
features = 2
noise = 0.4
train_per_hospital = 10
validation_per_hospital = 5
test = 10
"#;
        assert!(toml::from_str::<FileConfig>(text).is_err());
    }
}
