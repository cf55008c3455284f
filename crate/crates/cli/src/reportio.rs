//! Run-directory layout and report regeneration.
//!
//! A run directory holds `report.json` (deterministic under the seed),
//! `timings.csv` (wall-clock, host-dependent, excluded from determinism
//! checks), the probability matrices and labels as CSV, the FL round metrics,
//! and one chain dump per ledger under `chains/`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};

use hefl_core::ensemble::ProbabilityMatrix;
use hefl_core::protocol::{Phase, PhaseObserver, RunOutput, RunReport};

use crate::chainio;

/// Phase observer that measures wall-clock per phase.
#[derive(Default)]
pub struct WallClock {
    running: Vec<(Phase, Instant)>,
    pub timings: Vec<(Phase, f64)>,
}

impl PhaseObserver for WallClock {
    fn started(&mut self, phase: Phase) {
        self.running.push((phase, Instant::now()));
    }

    fn finished(&mut self, phase: Phase) {
        if let Some(pos) = self.running.iter().rposition(|(p, _)| *p == phase) {
            let (_, started) = self.running.remove(pos);
            self.timings
                .push((phase, started.elapsed().as_secs_f64() * 1e3));
        }
    }
}

/// Serializes a probability matrix to its CSV interchange form.
pub fn matrix_to_csv(matrix: &ProbabilityMatrix) -> String {
    let mut out = String::from("hospital_id,model_id\n");
    out.push_str(&format!("{},{}\n", matrix.hospital_id, matrix.model_id));
    for row in &matrix.rows {
        let fields: Vec<String> = row.iter().map(|p| format!("{p}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Parses the CSV interchange form back into a matrix.
pub fn matrix_from_csv(text: &str) -> Result<ProbabilityMatrix> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().context("empty probability CSV")?;
    if header.trim() != "hospital_id,model_id" {
        bail!("probability CSV must start with 'hospital_id,model_id'");
    }
    let ids = lines.next().context("missing id row")?;
    let (hospital_id, model_id) = ids
        .trim()
        .split_once(',')
        .context("id row must be 'hospital,model'")?;
    let mut rows = Vec::new();
    for line in lines {
        let row = line
            .trim()
            .split(',')
            .map(|f| f.parse::<f64>().context("bad probability"))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(ProbabilityMatrix {
        hospital_id: hospital_id.to_string(),
        model_id: model_id.to_string(),
        rows,
    })
}

/// Writes labels, one per line under a header.
pub fn labels_to_csv(labels: &[usize]) -> String {
    let mut out = String::from("label\n");
    for l in labels {
        out.push_str(&format!("{l}\n"));
    }
    out
}

pub fn labels_from_csv(text: &str) -> Result<Vec<usize>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().context("empty labels CSV")?;
    if header.trim() != "label" {
        bail!("labels CSV must start with 'label'");
    }
    lines
        .map(|l| l.trim().parse::<usize>().context("bad label"))
        .collect()
}

/// Writes every artifact of a finished run into `out_dir`.
pub fn write_run_outputs(
    out_dir: &Path,
    output: &RunOutput,
    timings: &[(Phase, f64)],
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_vec_pretty(&output.report)?,
    )?;

    let mut timings_csv = String::from("phase,wall_ms\n");
    for (phase, ms) in timings {
        timings_csv.push_str(&format!("{},{ms}\n", phase.name()));
    }
    std::fs::write(out_dir.join("timings.csv"), timings_csv)?;

    let mut rounds = String::from(
        "hospital,round,selected,total_samples,train_accuracy,test_accuracy,aggregate_digest\n",
    );
    for hospital in &output.report.hospitals {
        for r in &hospital.rounds {
            let selected: Vec<String> = r.selected.iter().map(|e| format!("E{e}")).collect();
            rounds.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                hospital.name,
                r.round,
                selected.join("+"),
                r.total_samples,
                r.train_accuracy,
                r.test_accuracy,
                r.aggregate_digest,
            ));
        }
    }
    std::fs::write(out_dir.join("fl_rounds.csv"), rounds)?;

    for matrix in &output.matrices {
        std::fs::write(
            out_dir.join(format!("probs_{}.csv", matrix.hospital_id)),
            matrix_to_csv(matrix),
        )?;
    }
    std::fs::write(
        out_dir.join("labels.csv"),
        labels_to_csv(&output.tuning_labels),
    )?;

    let chains_dir = out_dir.join("chains");
    std::fs::create_dir_all(&chains_dir)?;
    for (i, nodes) in output.chains.hospital_chains.iter().enumerate() {
        let name = &output.report.hospitals[i].name;
        chainio::write_chain(&chains_dir.join(format!("{name}.chain")), nodes.replica(0))?;
    }
    chainio::write_chain(&chains_dir.join("bm.chain"), output.chains.bm_chain.replica(0))?;
    Ok(())
}

/// Regenerates summary tables and plot data from a run directory's
/// `report.json`. Returns the files written.
pub fn regenerate_report(run_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let report: RunReport = serde_json::from_slice(
        &std::fs::read(run_dir.join("report.json"))
            .with_context(|| format!("no report.json under {}", run_dir.display()))?,
    )
    .context("report.json does not parse")?;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    // Accuracy table: per-model federated results plus the tuned ensemble.
    let mut accuracy = String::from("setup,model,test_accuracy\n");
    for hospital in &report.hospitals {
        accuracy.push_str(&format!(
            "federated,{},{}\n",
            hospital.gm_id, hospital.test_accuracy
        ));
    }
    accuracy.push_str(&format!(
        "ensemble,{},{}\n",
        report.ensemble.model_ids.join("+"),
        report.ensemble.test_accuracy
    ));
    let path = out_dir.join("accuracy_table.csv");
    std::fs::write(&path, accuracy)?;
    written.push(path);

    // Ensemble weights.
    let mut weights = String::from("model,alpha\n");
    for (id, a) in report
        .ensemble
        .model_ids
        .iter()
        .zip(&report.ensemble.alpha)
    {
        weights.push_str(&format!("{id},{a}\n"));
    }
    let path = out_dir.join("ensemble_weights.csv");
    std::fs::write(&path, weights)?;
    written.push(path);

    // Communication summary.
    let comm = format!(
        "messages,bytes,opened_ring_values,opened_bit_words\n{},{},{},{}\n",
        report.communication.messages,
        report.communication.bytes,
        report.communication.opened_ring_values,
        report.communication.opened_bit_words
    );
    let path = out_dir.join("communication.csv");
    std::fs::write(&path, comm)?;
    written.push(path);

    // Gnuplot-style learning curves: one file per hospital, round vs
    // accuracies.
    for hospital in &report.hospitals {
        let mut dat = String::from("# round train_accuracy test_accuracy\n");
        for r in &hospital.rounds {
            dat.push_str(&format!(
                "{} {} {}\n",
                r.round, r.train_accuracy, r.test_accuracy
            ));
        }
        let path = out_dir.join(format!("fl_curve_{}.dat", hospital.name));
        std::fs::write(&path, dat)?;
        written.push(path);
    }
    Ok(written)
}

/// Writes the per-run files, measuring nothing; helper shared by `run`.
pub fn flush(mut file: std::fs::File, content: &str) -> std::io::Result<()> {
    file.write_all(content.as_bytes())
}
