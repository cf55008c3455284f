//! Federated averaging inside one hospital.
//!
//! Each round the central server picks `k` edge servers at random, sends the
//! current global weights, lets every pick run local SGD epochs on its own
//! partition, and folds the returned models back with sample-count weights.
//! Every local model and every aggregate passes through the hospital's ledger
//! hook before it is used; a rejection aborts the round.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::neural::{
    gradient, sgd_step, LabeledDataset, LayerParams, ModelParams, NeuralError,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FlError {
    #[error("cannot select {k} participants from {edges} edges")]
    KTooLarge { k: usize, edges: usize },
    #[error("model spec digest does not match the edge's architecture")]
    SpecMismatch,
    #[error("aggregation received zero total samples")]
    ZeroSamples,
    #[error("no edges configured")]
    NoEdges,
    #[error("ledger rejected {model_id}: {reason}")]
    LedgerRejection { model_id: String, reason: String },
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Hyperparameters of one hospital's federated loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlConfig {
    pub rounds: u32,
    pub epochs: u32,
    pub participants_per_round: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl FlConfig {
    pub fn validate(&self, edge_count: usize) -> Result<(), FlError> {
        if edge_count == 0 {
            return Err(FlError::NoEdges);
        }
        if self.participants_per_round == 0 || self.participants_per_round > edge_count {
            return Err(FlError::KTooLarge {
                k: self.participants_per_round,
                edges: edge_count,
            });
        }
        assert!(self.rounds >= 1 && self.epochs >= 1, "rounds and epochs must be positive");
        assert!(self.learning_rate > 0.0, "learning rate must be positive");
        assert!(self.batch_size >= 1, "batch size must be positive");
        Ok(())
    }
}

/// One edge server: its data slice and the last local model it produced.
#[derive(Clone, Debug)]
pub struct EdgeServerState {
    pub id: u16,
    pub partition: LabeledDataset,
    pub local_params: Option<ModelParams>,
}

impl EdgeServerState {
    pub fn new(id: u16, partition: LabeledDataset) -> Self {
        EdgeServerState {
            id,
            partition,
            local_params: None,
        }
    }
}

/// What happened in one communication round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub selected: Vec<u16>,
    pub sample_counts: Vec<u64>,
    pub total_samples: u64,
    pub aggregate_digest: [u8; 32],
}

/// Whether a model submitted to the ledger hook is a local update or a round
/// aggregate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelRole {
    Local { edge: u16 },
    Aggregate,
}

/// Uniform sample of `k` distinct edge indices, ascending, deterministic
/// under the rng state.
pub fn select_participants(
    edge_count: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, FlError> {
    if k == 0 || k > edge_count {
        return Err(FlError::KTooLarge { k, edges: edge_count });
    }
    let mut selected: Vec<usize> = rand::seq::index::sample(rng, edge_count, k).into_vec();
    selected.sort_unstable();
    Ok(selected)
}

/// Local training: copies the global weights and runs `epochs` of sequential
/// mini-batch SGD over the partition. Returns the updated model with its
/// sample count set; the global weights are untouched.
pub fn local_train(
    global: &ModelParams,
    partition: &LabeledDataset,
    epochs: u32,
    learning_rate: f64,
    batch_size: usize,
) -> Result<ModelParams, FlError> {
    if global.spec_hash != global.spec.spec_hash() {
        return Err(FlError::SpecMismatch);
    }
    let mut params = global.clone();
    for _ in 0..epochs {
        let mut start = 0;
        while start < partition.len() {
            let end = (start + batch_size).min(partition.len());
            let indices: Vec<usize> = (start..end).collect();
            let batch = partition.subset(&indices);
            let grads = gradient(&params, &batch)?;
            params = sgd_step(&params, &grads, learning_rate);
            start = end;
        }
    }
    params.sample_count = partition.len() as u64;
    Ok(params)
}

/// Sample-count-weighted average of local models: each tensor becomes the
/// convex combination with weights `N_j / N`.
pub fn fedavg_aggregate(models: &[(ModelParams, u64)]) -> Result<ModelParams, FlError> {
    let Some(((first, _), rest)) = models.split_first() else {
        return Err(FlError::ZeroSamples);
    };
    for (m, _) in rest {
        if m.spec_hash != first.spec_hash {
            return Err(FlError::SpecMismatch);
        }
    }
    let total: u64 = models.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(FlError::ZeroSamples);
    }
    let mut out = first.clone();
    for layer in out.layers.iter_mut() {
        match layer {
            LayerParams::Dense { weights, bias } | LayerParams::Conv2d { kernels: weights, bias } => {
                weights.iter_mut().for_each(|w| *w = 0.0);
                bias.iter_mut().for_each(|b| *b = 0.0);
            }
            LayerParams::Stateless => {}
        }
    }
    for (model, samples) in models {
        let weight = *samples as f64 / total as f64;
        for (acc, layer) in out.layers.iter_mut().zip(&model.layers) {
            match (acc, layer) {
                (
                    LayerParams::Dense { weights: aw, bias: ab },
                    LayerParams::Dense { weights, bias },
                )
                | (
                    LayerParams::Conv2d { kernels: aw, bias: ab },
                    LayerParams::Conv2d { kernels: weights, bias },
                ) => {
                    for (a, w) in aw.iter_mut().zip(weights) {
                        *a += weight * w;
                    }
                    for (a, b) in ab.iter_mut().zip(bias) {
                        *a += weight * b;
                    }
                }
                (LayerParams::Stateless, LayerParams::Stateless) => {}
                _ => return Err(FlError::SpecMismatch),
            }
        }
    }
    out.sample_count = total;
    Ok(out)
}

/// Runs the full federated loop for one hospital and returns its global
/// model plus the per-round records.
///
/// `ledger_hook` is called for every local model and every aggregate before
/// it is used; it returns the verified payload digest or a rejection that
/// aborts the run. `on_round` observes each completed round.
pub fn run_hospital_fl(
    config: &FlConfig,
    edges: &mut [EdgeServerState],
    initial: ModelParams,
    ledger_hook: &mut dyn FnMut(&ModelParams, ModelRole) -> Result<[u8; 32], String>,
    mut on_round: impl FnMut(&RoundRecord, &ModelParams),
) -> Result<(ModelParams, Vec<RoundRecord>), FlError> {
    config.validate(edges.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let base_id = initial.model_id.clone();
    let mut global = initial;
    let mut records = Vec::with_capacity(config.rounds as usize);
    for round in 0..config.rounds {
        let selected = select_participants(edges.len(), config.participants_per_round, &mut rng)?;
        let mut locals: Vec<(ModelParams, u64)> = Vec::with_capacity(selected.len());
        for &j in &selected {
            let mut local = local_train(
                &global,
                &edges[j].partition,
                config.epochs,
                config.learning_rate,
                config.batch_size,
            )?;
            local.model_id = format!("{base_id}/t{round}/e{}", edges[j].id);
            ledger_hook(&local, ModelRole::Local { edge: edges[j].id }).map_err(|reason| {
                FlError::LedgerRejection {
                    model_id: local.model_id.clone(),
                    reason,
                }
            })?;
            let samples = local.sample_count;
            edges[j].local_params = Some(local.clone());
            locals.push((local, samples));
        }
        let mut aggregate = fedavg_aggregate(&locals)?;
        aggregate.model_id = format!("{base_id}/t{round}");
        let digest = ledger_hook(&aggregate, ModelRole::Aggregate).map_err(|reason| {
            FlError::LedgerRejection {
                model_id: aggregate.model_id.clone(),
                reason,
            }
        })?;
        let record = RoundRecord {
            round,
            selected: selected.iter().map(|&j| edges[j].id).collect(),
            sample_counts: locals.iter().map(|(_, n)| *n).collect(),
            total_samples: locals.iter().map(|(_, n)| n).sum(),
            aggregate_digest: digest,
        };
        on_round(&record, &aggregate);
        records.push(record);
        global = aggregate;
    }
    Ok((global, records))
}
