//! Runtime sweeps: ledger deploy/verify time against node count, and
//! encrypted inference time against image count.
//!
//! Absolute numbers are host-dependent; what the sweeps are for is the shape
//! of the curves (consensus cost grows with the replica count, encrypted
//! inference is linear in the number of images).

use std::time::Instant;

use anyhow::Result;

use hefl_core::bus::{Exchange, MessageBus};
use hefl_core::ledger::{payload_hash, BlockPayload, NodeSet};
use hefl_core::neural::{export_for_mpc, LayerSpec, ModelParams, ModelSpec};
use hefl_core::protocol::{derive_seed, secure_forward};
use hefl_core::ring::FixedPointCodec;
use hefl_core::secure::SecureContext;
use hefl_core::sharing::{Dealer, SessionRandomness};

use crate::config::BenchConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub operation: &'static str,
    pub parameter: &'static str,
    pub value: usize,
    pub runtime_ms: f64,
}

pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("operation,parameter,value,runtime_ms\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.operation, row.parameter, row.value, row.runtime_ms
        ));
    }
    out
}

fn median(mut samples: Vec<f64>) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    samples[samples.len() / 2]
}

fn bench_payload(kilobytes: usize, seed: u64) -> BlockPayload {
    // Deterministic pseudo-random model bytes; content is irrelevant, size
    // drives the hashing cost.
    let mut state = seed | 1;
    let bytes: Vec<u8> = (0..kilobytes * 1024)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state as u8
        })
        .collect();
    BlockPayload::Model {
        model_id: "bench/GM".into(),
        spec_hash: [9u8; 32],
        model_bytes: bytes,
        submitter: "bench".into(),
    }
}

/// Deploy/verify wall time per replica-set size.
pub fn node_sweep(config: &BenchConfig) -> Vec<BenchRow> {
    let payload = bench_payload(config.payload_kilobytes, config.seed);
    let mut rows = Vec::new();
    for &m in &config.node_counts {
        let mut verify_samples = Vec::new();
        let mut deploy_samples = Vec::new();
        for _ in 0..config.repetitions.max(1) {
            // Verify: every node hashes its view and the votes are tallied.
            let started = Instant::now();
            let hashes: Vec<[u8; 32]> = (0..m).map(|_| payload_hash(&payload)).collect();
            let agreeing = hashes.iter().filter(|h| **h == hashes[0]).count();
            assert!(agreeing * 2 > m as usize);
            verify_samples.push(started.elapsed().as_secs_f64() * 1e3);

            // Deploy: ship the payload to every replica and append.
            let started = Instant::now();
            let mut nodes = NodeSet::new(m as usize);
            nodes
                .verify_and_append_model(payload.clone(), 0)
                .expect("bench append");
            deploy_samples.push(started.elapsed().as_secs_f64() * 1e3);
        }
        rows.push(BenchRow {
            operation: "deploy",
            parameter: "nodes",
            value: m as usize,
            runtime_ms: median(deploy_samples),
        });
        rows.push(BenchRow {
            operation: "verify",
            parameter: "nodes",
            value: m as usize,
            runtime_ms: median(verify_samples),
        });
    }
    rows
}

fn bench_model(seed: u64) -> ModelParams {
    let spec = ModelSpec {
        input_shape: vec![1, 8, 8],
        layers: vec![
            LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: 2,
                kernel: 3,
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::AvgPool { window: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense {
                inputs: 18,
                outputs: 10,
            },
            LayerSpec::Softmax,
        ],
    };
    ModelParams::init("bench/GM", spec, seed).expect("bench model")
}

/// Encrypted inference wall time per image count.
pub fn inference_sweep(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    let codec = FixedPointCodec::default();
    let model = bench_model(derive_seed(config.seed, 1));
    let quantized = export_for_mpc(&model, codec)?;
    let h = config.parties.max(2);
    let mut rows = Vec::new();
    for &images in &config.image_counts {
        let inputs: Vec<f64> = (0..images * 64)
            .map(|i| ((i * 37 + 11) % 97) as f64 / 97.0)
            .collect();
        let encoded = codec.encode_all(&inputs)?;
        let started = Instant::now();
        let dealer = Dealer::new(h, derive_seed(config.seed, 2 + images as u64));
        let mut supply = SessionRandomness::on_demand(dealer);
        let mut bus = MessageBus::new();
        let exchange = Exchange::for_parties(&mut bus, h, config.seed);
        let mut ctx = SecureContext::new(codec, &mut supply, exchange);
        let shared = ctx
            .share_plain(&encoded, vec![images, 1, 8, 8], codec.frac_bits())
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        let logits = secure_forward(&mut ctx, &quantized, &shared)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        assert_eq!(logits.shape(), &[images, 10]);
        rows.push(BenchRow {
            operation: "encrypted-inference",
            parameter: "images",
            value: images,
            runtime_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(rows)
}

/// Least-squares linear fit quality of `runtime_ms` against `value`.
pub fn linear_fit_r2(rows: &[BenchRow]) -> f64 {
    let n = rows.len() as f64;
    let xs: Vec<f64> = rows.iter().map(|r| r.value as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.runtime_ms).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let fit = slope * x + intercept;
            (y - fit) * (y - fit)
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    1.0 - ss_res / ss_tot
}

pub fn run_benchmarks(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    let mut rows = node_sweep(config);
    rows.extend(inference_sweep(config)?);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweeps_produce_expected_rows() {
        let config = BenchConfig {
            node_counts: vec![2, 4],
            image_counts: vec![2, 4],
            payload_kilobytes: 8,
            repetitions: 1,
            parties: 2,
            seed: 1,
        };
        let rows = run_benchmarks(&config).unwrap();
        assert_eq!(rows.len(), 6); // deploy+verify per node count, one per image count
        let csv = rows_to_csv(&rows);
        assert!(csv.starts_with("operation,parameter,value,runtime_ms\n"));
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn r2_of_perfect_line_is_one() {
        let rows: Vec<BenchRow> = (1..=5)
            .map(|i| BenchRow {
                operation: "x",
                parameter: "v",
                value: i,
                runtime_ms: 3.0 * i as f64 + 1.0,
            })
            .collect();
        assert!((linear_fit_r2(&rows) - 1.0).abs() < 1e-12);
    }
}
