//! Command implementations. Each returns the process exit code:
//! 0 success, 1 failed verification, 2 unusable input, 3 phase failure.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use hefl_core::ensemble::{grid_search_weights, WeightGrid};
use hefl_core::ledger::{validate_chain, ChainValidation};
use hefl_core::protocol::{run_scenario, SimError};

use crate::chainio::{self, ChainLoadError};
use crate::config;
use crate::reportio::{self, WallClock};
use crate::{bench, dataset};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_UNUSABLE: i32 = 2;
pub const EXIT_PHASE: i32 = 3;

/// Seed precedence: `HEFL_SEED` over `--seed` over the config file.
pub fn effective_seed(cli_seed: Option<u64>) -> Result<Option<u64>> {
    match std::env::var("HEFL_SEED") {
        Ok(text) => {
            let seed = text
                .parse::<u64>()
                .with_context(|| format!("HEFL_SEED is not a u64: {text:?}"))?;
            Ok(Some(seed))
        }
        Err(_) => Ok(cli_seed),
    }
}

/// `run`: execute a scenario and write the run directory.
pub fn run(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> i32 {
    let seed = match effective_seed(seed) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_UNUSABLE;
        }
    };
    let file = match config::load_config(config_path) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_UNUSABLE;
        }
    };
    let config_dir = config_path.parent().unwrap_or(Path::new("."));
    let (scenario, data) = match config::build_scenario(&file, config_dir, seed) {
        Ok(pair) => pair,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_UNUSABLE;
        }
    };
    let out_dir = out.unwrap_or_else(|| {
        PathBuf::from("runs").join(format!("{}-s{}", scenario.scenario_id, scenario.seed))
    });
    let mut clock = WallClock::default();
    let output = match run_scenario(&scenario, &data, &mut clock) {
        Ok(output) => output,
        Err(SimError::InvalidConfig(message)) => {
            eprintln!("error: invalid scenario: {message}");
            return EXIT_UNUSABLE;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_PHASE;
        }
    };
    if let Err(e) = reportio::write_run_outputs(&out_dir, &output, &clock.timings) {
        eprintln!("error: cannot write run outputs: {e:#}");
        return EXIT_UNUSABLE;
    }
    println!("scenario {} seed {}", output.report.scenario_id, output.report.seed);
    for hospital in &output.report.hospitals {
        println!(
            "hospital {} test_accuracy {:.4} chain_len {}",
            hospital.name, hospital.test_accuracy, hospital.chain_len
        );
    }
    println!(
        "ensemble tuning_accuracy {:.4} test_accuracy {:.4}",
        output.report.ensemble.tuning_accuracy, output.report.ensemble.test_accuracy
    );
    println!("report written to {}", out_dir.display());
    EXIT_OK
}

/// `verify-chain`: validate a chain dump.
pub fn verify_chain(path: &Path) -> i32 {
    match chainio::read_chain(path) {
        Ok(chain) => match validate_chain(&chain) {
            ChainValidation::Valid => {
                println!("valid: {} blocks", chain.len());
                EXIT_OK
            }
            ChainValidation::InvalidAt(height) => {
                println!("invalid at height {height}");
                EXIT_INVALID
            }
        },
        Err(ChainLoadError::CorruptAt { height, reason }) => {
            println!("invalid at height {height} ({reason})");
            EXIT_INVALID
        }
        Err(ChainLoadError::Unreadable(reason)) => {
            eprintln!("error: {reason}");
            EXIT_UNUSABLE
        }
    }
}

/// `tune-weights`: grid search over probability matrices from CSV files.
pub fn tune_weights(
    probs: &[PathBuf],
    labels_path: &Path,
    step: f64,
    out: Option<PathBuf>,
) -> i32 {
    let inner = || -> Result<String> {
        let mut matrices = Vec::new();
        for path in probs {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            matrices.push(reportio::matrix_from_csv(&text)?);
        }
        let labels = reportio::labels_from_csv(
            &std::fs::read_to_string(labels_path)
                .with_context(|| format!("cannot read {}", labels_path.display()))?,
        )?;
        let grid = WeightGrid::from_step(step);
        let (weights, accuracy) = grid_search_weights(&matrices, &labels, &grid)
            .map_err(|e| anyhow::anyhow!("grid search failed: {e}"))?;
        let summary = serde_json::json!({
            "model_ids": matrices.iter().map(|m| m.model_id.clone()).collect::<Vec<_>>(),
            "alpha": weights.alpha,
            "tuning_accuracy": accuracy,
        });
        Ok(serde_json::to_string_pretty(&summary)?)
    };
    match inner() {
        Ok(json) => {
            println!("{json}");
            if let Some(path) = out {
                if let Err(e) = std::fs::write(&path, json) {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    return EXIT_UNUSABLE;
                }
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_UNUSABLE
        }
    }
}

/// `bench`: run the configured sweeps and emit CSV.
pub fn bench_cmd(config_path: &Path, out: Option<PathBuf>) -> i32 {
    let file = match config::load_config(config_path) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_UNUSABLE;
        }
    };
    let bench_config = file.bench.unwrap_or_default();
    match bench::run_benchmarks(&bench_config) {
        Ok(rows) => {
            let csv = bench::rows_to_csv(&rows);
            print!("{csv}");
            if let Some(path) = out {
                if let Err(e) = std::fs::write(&path, &csv) {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    return EXIT_UNUSABLE;
                }
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_UNUSABLE;
        }
    }
}

/// `report`: regenerate tables and plot data from a run directory.
pub fn report_cmd(run_dir: &Path, out: Option<PathBuf>) -> i32 {
    let out_dir = out.unwrap_or_else(|| run_dir.join("tables"));
    match reportio::regenerate_report(run_dir, &out_dir) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_UNUSABLE
        }
    }
}

// Datasets are loaded through `config::build_scenario`; re-exported here so
// the loaders are reachable for standalone use.
pub use dataset::{load_csv, load_idx};
