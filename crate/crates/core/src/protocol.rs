//! End-to-end scenario orchestration.
//!
//! A scenario wires the whole pipeline together on one deterministic message
//! bus: every hospital runs federated averaging with its private chain
//! verifying each model, then each hospital in turn plays model owner while
//! all hospitals contribute secret-shared validation inputs for encrypted
//! evaluation, the collected probability matrices feed the grid-search weight
//! tuning that the multi-institution chain re-verifies, and the tuned
//! ensemble is scored on the held-out test split. Identical seeds reproduce
//! identical reports and chains byte for byte.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bus::{privacy_violation, ChainTag, Endpoint, Exchange, MessageBus, MsgKind};
use crate::data::{partition, PartitionPlan};
use crate::ensemble::{
    accuracy_score, ensemble_predict, grid_search_weights, EnsembleError, ProbabilityMatrix,
    WeightGrid,
};
use crate::federated::{
    run_hospital_fl, EdgeServerState, FlConfig, FlError, ModelRole, RoundRecord,
};
use crate::ledger::{
    compute_model_hash, hex_digest, payload_hash, validate_chain, BlockPayload, ChainValidation,
    LedgerError, NodeSet,
};
use crate::neural::{
    evaluate, export_for_mpc, forward, import_probabilities, LabeledDataset, LayerSpec,
    ModelParams, ModelSpec, NeuralError, QuantizedModel,
};
use crate::ring::FixedPointCodec;
use crate::secure::{SecureContext, SecureError, SecureTensor};
use crate::sharing::{
    Dealer, RandomnessBudget, SessionId, SessionRandomness, ShareError, ZeroSharer,
};

/// Pipeline phases, in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    FederatedTraining,
    EncryptedEvaluation,
    WeightTuning,
    FinalEvaluation,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::FederatedTraining => "federated-training",
            Phase::EncryptedEvaluation => "encrypted-evaluation",
            Phase::WeightTuning => "weight-tuning",
            Phase::FinalEvaluation => "final-evaluation",
        }
    }
}

/// Hook for wall-clock phase timing; the simulator itself only keeps ticks.
pub trait PhaseObserver {
    fn started(&mut self, phase: Phase);
    fn finished(&mut self, phase: Phase);
}

/// Observer that ignores everything.
pub struct NoopObserver;

impl PhaseObserver for NoopObserver {
    fn started(&mut self, _: Phase) {}
    fn finished(&mut self, _: Phase) {}
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("data owner has an empty evaluation split")]
    EmptyEvalSet,
    #[error("session aborted: {0}")]
    SessionAbort(String),
    #[error("phase {phase} failed: {message}")]
    Phase { phase: &'static str, message: String },
    #[error(transparent)]
    Fl(#[from] FlError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

impl From<SecureError> for SimError {
    fn from(e: SecureError) -> Self {
        SimError::SessionAbort(format!("{e}"))
    }
}

impl From<crate::ring::RingError> for SimError {
    fn from(e: crate::ring::RingError) -> Self {
        SimError::SessionAbort(format!("{e}"))
    }
}

impl From<ShareError> for SimError {
    fn from(e: ShareError) -> Self {
        SimError::SessionAbort(format!("{e}"))
    }
}

fn phase_err(phase: Phase) -> impl Fn(SimError) -> SimError {
    move |e| match e {
        SimError::Phase { .. } => e,
        other => SimError::Phase {
            phase: phase.name(),
            message: format!("{other}"),
        },
    }
}

/// SplitMix64 step, used to derive stream seeds from the scenario seed.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One hospital's static configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HospitalConfig {
    pub name: String,
    pub model: ModelSpec,
    pub edges: u16,
    pub fl: FlConfig,
    pub ledger_nodes: u16,
    pub partition_plan: PartitionPlan,
}

/// Scenario knobs; datasets arrive separately as [`ScenarioData`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario_id: String,
    pub seed: u64,
    pub frac_bits: u32,
    pub hospitals: Vec<HospitalConfig>,
    pub grid_step: f64,
    pub bm_nodes: u16,
    /// Cap on each data owner's contribution to the tuning set; `None` uses
    /// the full validation split.
    pub eval_samples_per_hospital: Option<usize>,
}

/// Per-hospital train/validation material plus the shared held-out test set.
#[derive(Clone, Debug, PartialEq)]
pub struct HospitalData {
    pub train: LabeledDataset,
    pub validation: LabeledDataset,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioData {
    pub hospitals: Vec<HospitalData>,
    pub test: LabeledDataset,
}

fn validate_scenario(config: &ScenarioConfig, data: &ScenarioData) -> Result<(), SimError> {
    if config.hospitals.len() < 2 {
        return Err(SimError::InvalidConfig(
            "cross-evaluation needs at least two hospitals".into(),
        ));
    }
    if config.hospitals.len() != data.hospitals.len() {
        return Err(SimError::InvalidConfig(format!(
            "{} hospital configs but {} hospital datasets",
            config.hospitals.len(),
            data.hospitals.len()
        )));
    }
    if !(config.grid_step > 0.0 && config.grid_step <= 1.0) {
        return Err(SimError::InvalidConfig("grid step must be in (0, 1]".into()));
    }
    if config.bm_nodes == 0 {
        return Err(SimError::InvalidConfig("bm_nodes must be positive".into()));
    }
    let input_len: usize = data.test.input_shape.iter().product();
    let classes = data.test.num_classes;
    for (i, hospital) in config.hospitals.iter().enumerate() {
        let shapes = hospital
            .model
            .validate()
            .map_err(|e| SimError::InvalidConfig(format!("hospital {i} model: {e}")))?;
        let model_input: usize = hospital.model.input_shape.iter().product();
        if model_input != input_len {
            return Err(SimError::InvalidConfig(format!(
                "hospital {i} model consumes {model_input} values but data rows have {input_len}"
            )));
        }
        if shapes[shapes.len() - 1][0] != classes {
            return Err(SimError::InvalidConfig(format!(
                "hospital {i} model emits {} classes but data has {classes}",
                shapes[shapes.len() - 1][0]
            )));
        }
        if hospital.ledger_nodes == 0 {
            return Err(SimError::InvalidConfig("ledger_nodes must be positive".into()));
        }
        hospital
            .fl
            .validate(hospital.edges as usize)
            .map_err(|e| SimError::InvalidConfig(format!("hospital {i} fl: {e}")))?;
        for (split, name) in [
            (&data.hospitals[i].train, "train"),
            (&data.hospitals[i].validation, "validation"),
        ] {
            split
                .validate()
                .map_err(|e| SimError::InvalidConfig(format!("hospital {i} {name} data: {e}")))?;
        }
    }
    data.test
        .validate()
        .map_err(|e| SimError::InvalidConfig(format!("test data: {e}")))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Randomness budgeting
// ---------------------------------------------------------------------------

/// Correlated randomness one encrypted forward pass consumes, computed from
/// the architecture, the batch size and the party count. Sessions are
/// provisioned with exactly this; running past it is a dealer-exhaustion
/// error.
pub fn randomness_budget(
    spec: &ModelSpec,
    batch: usize,
    parties: u16,
) -> Result<RandomnessBudget, NeuralError> {
    let shapes = spec.validate()?;
    let mut budget = RandomnessBudget::default();
    let mut shape = spec.input_shape.clone();
    for (i, layer) in spec.layers.iter().enumerate() {
        match *layer {
            LayerSpec::Dense { inputs, outputs } => {
                budget.beaver_triples += (batch * inputs * outputs) as u64;
                budget.truncation_pairs += (batch * outputs) as u64;
            }
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                ..
            } => {
                let out: usize = shapes[i].iter().product();
                budget.beaver_triples +=
                    (batch * out * in_channels * kernel * kernel) as u64;
                budget.truncation_pairs += (batch * out) as u64;
            }
            LayerSpec::Relu => {
                let n: usize = shape.iter().product::<usize>() * batch;
                budget.binary_triple_words += (n * (parties as usize - 1) * 64) as u64;
                budget.bit_pairs += n as u64;
                budget.beaver_triples += n as u64;
            }
            LayerSpec::AvgPool { .. } => {
                let out: usize = shapes[i].iter().product();
                budget.truncation_pairs += (batch * out) as u64;
            }
            LayerSpec::Flatten | LayerSpec::Softmax => {}
        }
        shape = shapes[i].clone();
    }
    Ok(budget)
}

// ---------------------------------------------------------------------------
// Encrypted evaluation sessions
// ---------------------------------------------------------------------------

/// Secure forward pass of a quantized model over a shared input batch,
/// stopping at the terminal softmax (applied in the clear after decryption).
pub fn secure_forward(
    ctx: &mut SecureContext<'_>,
    model: &QuantizedModel,
    input: &SecureTensor,
) -> Result<SecureTensor, SimError> {
    let shapes = model.spec.validate()?;
    let batch = input.shape()[0];
    let f = model.frac_bits;
    let mut act = input.clone();
    for (i, layer) in model.spec.layers.iter().enumerate() {
        act = match (layer, &model.layers[i]) {
            (LayerSpec::Dense { inputs, outputs }, Some(q)) => {
                let w = ctx.share_plain(&q.weights, vec![*inputs, *outputs], f)?;
                let b = ctx.share_plain(&q.bias, vec![*outputs], f)?;
                let product = ctx.matmul(&act, &w)?;
                ctx.bias_add(&product, &b)?
            }
            (
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                },
                Some(q),
            ) => {
                let w = ctx.share_plain(
                    &q.weights,
                    vec![*out_channels, *in_channels, *kernel, *kernel],
                    f,
                )?;
                let b = ctx.share_plain(&q.bias, vec![*out_channels], f)?;
                let convolved = ctx.conv2d(&act, &w, *stride)?;
                ctx.bias_add(&convolved, &b)?
            }
            (LayerSpec::Relu, _) => ctx.relu(&act)?,
            (LayerSpec::AvgPool { window }, _) => ctx.avgpool(&act, *window)?,
            (LayerSpec::Flatten, _) => {
                act.reshaped(vec![batch, shapes[i].iter().product()])?
            }
            (LayerSpec::Softmax, _) => return Ok(act),
            _ => return Err(SimError::SessionAbort("layer/parameter mismatch".into())),
        };
    }
    Ok(act)
}

struct DoContribution {
    encoded: Vec<crate::ring::RingElement>,
    labels: Vec<usize>,
    samples: usize,
}

/// Data-owner side: quantize the evaluation split (optionally capped) for
/// sharing. The plaintext never leaves this hospital; only shares do.
fn prepare_do_contribution(
    split: &LabeledDataset,
    limit: Option<usize>,
    codec: FixedPointCodec,
) -> Result<DoContribution, SimError> {
    if split.is_empty() {
        return Err(SimError::EmptyEvalSet);
    }
    let take = limit.map_or(split.len(), |l| l.min(split.len()));
    let mut encoded = Vec::with_capacity(take * split.inputs[0].len());
    for row in split.inputs.iter().take(take) {
        for &v in row {
            encoded.push(codec.encode(v)?);
        }
    }
    Ok(DoContribution {
        encoded,
        labels: split.labels.iter().take(take).copied().collect(),
        samples: take,
    })
}

/// Tallies from one encrypted evaluation session.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStats {
    pub opened_ring_values: u64,
    pub opened_bit_words: u64,
}

/// One model owner evaluating its global model on every hospital's shared
/// validation inputs.
///
/// The model owner secret-shares its quantized weights, every data owner
/// secret-shares its quantized inputs (and escrows labels with the model
/// owner), the group runs the secure forward pass, and the model owner
/// reconstructs the logit shares, decodes them and applies softmax. Output
/// rows are ordered by (hospital, sample) index so every session aligns.
pub fn mo_session(
    mo: usize,
    gm: &ModelParams,
    validation_splits: &[&LabeledDataset],
    config: &ScenarioConfig,
    bus: &mut MessageBus,
) -> Result<(ProbabilityMatrix, Vec<usize>, SessionStats), SimError> {
    let h = validation_splits.len() as u16;
    let codec = FixedPointCodec::new(config.frac_bits);
    let quantized = export_for_mpc(gm, codec)?;
    let session_seed = derive_seed(config.seed, 0x2000 + mo as u64);

    // Data owners quantize and cap their splits first so the dealer can be
    // provisioned for the exact batch.
    let mut contributions = Vec::with_capacity(validation_splits.len());
    for split in validation_splits {
        contributions.push(prepare_do_contribution(
            split,
            config.eval_samples_per_hospital,
            codec,
        )?);
    }
    let total: usize = contributions.iter().map(|c| c.samples).sum();
    let classes = gm.spec.num_classes()?;
    if total == 0 {
        return Ok((
            ProbabilityMatrix {
                hospital_id: config.hospitals[mo].name.clone(),
                model_id: gm.model_id.clone(),
                rows: Vec::new(),
            },
            Vec::new(),
            SessionStats::default(),
        ));
    }

    let budget = randomness_budget(&gm.spec, total, h)?;
    let dealer = Dealer::new(h, derive_seed(config.seed, 0x3000 + mo as u64));
    let mut supply = SessionRandomness::budgeted(dealer, budget);
    let per_party_bytes = budget.share_bytes(h) / h as u64;
    for p in 0..h {
        bus.send(
            Endpoint::Dealer,
            Endpoint::Party { hospital: p },
            MsgKind::DealerSetup,
            per_party_bytes,
        );
    }

    let endpoints: Vec<Endpoint> = (0..h).map(|p| Endpoint::Party { hospital: p }).collect();
    let mut exchange = Exchange::with_endpoints(bus, endpoints, session_seed);
    let mut sharer = ZeroSharer::new(h, derive_seed(config.seed, 0x4000 + mo as u64));
    let mut next_session = 1u64;
    let mut mint = move || {
        let id = SessionId(next_session);
        next_session += 1;
        id
    };

    // Model owner distributes weight shares.
    let mut weight_tensors: Vec<Option<(SecureTensor, SecureTensor)>> =
        Vec::with_capacity(quantized.layers.len());
    let mo_party = crate::sharing::PartyId(mo as u16);
    for (layer, spec) in quantized.layers.iter().zip(&quantized.spec.layers) {
        weight_tensors.push(match (layer, spec) {
            (Some(q), LayerSpec::Dense { inputs, outputs }) => {
                let w = sharer.share_value(mo_party, &q.weights, mint());
                let b = sharer.share_value(mo_party, &q.bias, mint());
                exchange.log_share_fanout(
                    Endpoint::Central { hospital: mo as u16 },
                    (q.weights.len() + q.bias.len()) as u64 * 8,
                );
                Some((
                    SecureTensor::from_shares(w, vec![*inputs, *outputs], config.frac_bits),
                    SecureTensor::from_shares(b, vec![*outputs], config.frac_bits),
                ))
            }
            (
                Some(q),
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                },
            ) => {
                let w = sharer.share_value(mo_party, &q.weights, mint());
                let b = sharer.share_value(mo_party, &q.bias, mint());
                exchange.log_share_fanout(
                    Endpoint::Central { hospital: mo as u16 },
                    (q.weights.len() + q.bias.len()) as u64 * 8,
                );
                Some((
                    SecureTensor::from_shares(
                        w,
                        vec![*out_channels, *in_channels, *kernel, *kernel],
                        config.frac_bits,
                    ),
                    SecureTensor::from_shares(b, vec![*out_channels], config.frac_bits),
                ))
            }
            _ => None,
        });
    }

    // Data owners share their inputs; labels go to the model owner only.
    let input_len: usize = gm.spec.input_shape.iter().product();
    let mut input_shares: Vec<Vec<crate::ring::RingElement>> = vec![Vec::new(); h as usize];
    let mut labels = Vec::with_capacity(total);
    for (owner, contribution) in contributions.iter().enumerate() {
        let shares = sharer.share_value(
            crate::sharing::PartyId(owner as u16),
            &contribution.encoded,
            mint(),
        );
        exchange.log_share_fanout(
            Endpoint::Central { hospital: owner as u16 },
            contribution.encoded.len() as u64 * 8,
        );
        for (party, share) in shares.into_iter().enumerate() {
            input_shares[party].extend(share.elems);
        }
        if !contribution.labels.is_empty() {
            exchange.log_message(
                Endpoint::Central {
                    hospital: owner as u16,
                },
                Endpoint::Central {
                    hospital: mo as u16,
                },
                MsgKind::Labels,
                contribution.labels.len() as u64 * 8,
            );
        }
        labels.extend_from_slice(&contribution.labels);
    }

    let mut shape = vec![total];
    shape.extend_from_slice(&gm.spec.input_shape);
    debug_assert_eq!(input_shares[0].len(), total * input_len);

    let mut ctx = SecureContext::new(codec, &mut supply, exchange);
    let inputs = ctx.adopt(input_shares, shape, config.frac_bits);

    // Swap the pre-shared weights into the context-managed walk.
    let logits = secure_forward_with_weights(&mut ctx, &quantized, &inputs, &weight_tensors)?;

    // Parties return logit shares to the model owner, who decrypts and
    // applies softmax in the clear.
    let bytes = (logits.len() * 8) as u64;
    let stats = SessionStats {
        opened_ring_values: ctx.exchange().opened_ring_values(),
        opened_bit_words: ctx.exchange().opened_bit_words(),
    };
    ctx.exchange_mut()
        .log_share_collect(Endpoint::Central { hospital: mo as u16 }, bytes);
    let decoded = logits.reconstruct_f64();
    let rows: Vec<Vec<f64>> = decoded.chunks(classes).map(|c| c.to_vec()).collect();
    let probs = import_probabilities(&rows);

    Ok((
        ProbabilityMatrix {
            hospital_id: config.hospitals[mo].name.clone(),
            model_id: gm.model_id.clone(),
            rows: probs,
        },
        labels,
        stats,
    ))
}

/// Variant of [`secure_forward`] that uses pre-shared weight tensors (the
/// model owner's fan-out) instead of sharing inside the walk.
fn secure_forward_with_weights(
    ctx: &mut SecureContext<'_>,
    model: &QuantizedModel,
    input: &SecureTensor,
    weights: &[Option<(SecureTensor, SecureTensor)>],
) -> Result<SecureTensor, SimError> {
    let shapes = model.spec.validate()?;
    let batch = input.shape()[0];
    let mut act = input.clone();
    for (i, layer) in model.spec.layers.iter().enumerate() {
        act = match (layer, &weights[i]) {
            (LayerSpec::Dense { .. }, Some((w, b))) => {
                let product = ctx.matmul(&act, w)?;
                ctx.bias_add(&product, b)?
            }
            (LayerSpec::Conv2d { stride, .. }, Some((w, b))) => {
                let convolved = ctx.conv2d(&act, w, *stride)?;
                ctx.bias_add(&convolved, b)?
            }
            (LayerSpec::Relu, _) => ctx.relu(&act)?,
            (LayerSpec::AvgPool { window }, _) => ctx.avgpool(&act, *window)?,
            (LayerSpec::Flatten, _) => act.reshaped(vec![batch, shapes[i].iter().product()])?,
            (LayerSpec::Softmax, _) => return Ok(act),
            _ => return Err(SimError::SessionAbort("layer/parameter mismatch".into())),
        };
    }
    Ok(act)
}

// ---------------------------------------------------------------------------
// Ledger interaction with bus logging
// ---------------------------------------------------------------------------

/// Submits a payload to a replica set, logging submission, votes, commits
/// and any dissenter repair on the bus. Returns the payload digest.
fn ledger_append_logged(
    bus: &mut MessageBus,
    chain: ChainTag,
    nodes: &mut NodeSet,
    payload: BlockPayload,
    submitter: Endpoint,
) -> Result<[u8; 32], LedgerError> {
    let m = nodes.node_count() as u16;
    let bytes = crate::ledger::canonical_serialize(&payload).len() as u64;
    for i in 0..m {
        bus.send(
            submitter,
            Endpoint::LedgerNode { chain, index: i },
            MsgKind::LedgerSubmit,
            bytes,
        );
    }
    for s in 0..m {
        for r in 0..m {
            if s != r {
                bus.send(
                    Endpoint::LedgerNode { chain, index: s },
                    Endpoint::LedgerNode { chain, index: r },
                    MsgKind::LedgerHashVote,
                    32,
                );
            }
        }
    }
    let digest = payload_hash(&payload);
    let tick = bus.tick();
    let outcome = nodes.verify_and_append_model(payload, tick)?;
    for i in 0..m {
        bus.send(
            Endpoint::LedgerNode { chain, index: i },
            Endpoint::LedgerNode { chain, index: i },
            MsgKind::LedgerBlockCommit,
            outcome.block.to_bytes().len() as u64,
        );
    }
    for &d in &outcome.dissenters {
        bus.send(
            Endpoint::LedgerNode { chain, index: 0 },
            Endpoint::LedgerNode {
                chain,
                index: d as u16,
            },
            MsgKind::LedgerSync,
            outcome.block.to_bytes().len() as u64,
        );
    }
    Ok(digest)
}

// ---------------------------------------------------------------------------
// Run report
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u32,
    pub selected: Vec<u16>,
    pub total_samples: u64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub aggregate_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HospitalReport {
    pub name: String,
    pub gm_id: String,
    pub rounds: Vec<RoundMetrics>,
    pub test_accuracy: f64,
    pub gm_digest: String,
    pub chain_len: u64,
    pub chain_tip: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub model_ids: Vec<String>,
    pub alpha: Vec<f64>,
    pub tuning_accuracy: f64,
    pub test_accuracy: f64,
    pub bm_chain_len: u64,
    pub bm_chain_tip: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CommReport {
    pub messages: u64,
    pub bytes: u64,
    pub opened_ring_values: u64,
    pub opened_bit_words: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTicks {
    pub phase: Phase,
    pub start_tick: u64,
    pub end_tick: u64,
}

/// Everything a finished scenario reports. Serialization of this struct is
/// deterministic: equal seeds give byte-identical reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario_id: String,
    pub seed: u64,
    pub hospitals: Vec<HospitalReport>,
    pub ensemble: EnsembleReport,
    pub communication: CommReport,
    pub phase_ticks: Vec<PhaseTicks>,
    pub privacy_audit_ok: bool,
}

/// Chains produced by a run, exposed for dumping and verification.
pub struct RunChains {
    pub hospital_chains: Vec<NodeSet>,
    pub bm_chain: NodeSet,
}

/// Output of [`run_scenario`]: the report plus the chains and the raw
/// message log for audits.
pub struct RunOutput {
    pub report: RunReport,
    pub chains: RunChains,
    pub bus: MessageBus,
    /// Probability matrices and tuning labels, for CSV export.
    pub matrices: Vec<ProbabilityMatrix>,
    pub tuning_labels: Vec<usize>,
}

// ---------------------------------------------------------------------------
// The scenario driver
// ---------------------------------------------------------------------------

/// Runs the full pipeline and returns the report, chains and message log.
pub fn run_scenario(
    config: &ScenarioConfig,
    data: &ScenarioData,
    observer: &mut dyn PhaseObserver,
) -> Result<RunOutput, SimError> {
    validate_scenario(config, data)?;
    let codec = FixedPointCodec::new(config.frac_bits);
    let mut bus = MessageBus::new();
    let mut phase_ticks = Vec::new();
    let h = config.hospitals.len();

    // Phase 1: federated training inside every hospital, each model verified
    // on the hospital's private chain before use.
    observer.started(Phase::FederatedTraining);
    let fl_start = bus.tick();
    let mut hospital_chains: Vec<NodeSet> = config
        .hospitals
        .iter()
        .map(|hc| NodeSet::new(hc.ledger_nodes as usize))
        .collect();
    let mut global_models: Vec<ModelParams> = Vec::with_capacity(h);
    let mut hospital_reports: Vec<HospitalReport> = Vec::with_capacity(h);
    for (i, hc) in config.hospitals.iter().enumerate() {
        let parts = partition(
            &data.hospitals[i].train,
            hc.edges as usize,
            &hc.partition_plan,
            derive_seed(config.seed, 0x100 + i as u64),
        );
        let mut edges: Vec<EdgeServerState> = parts
            .into_iter()
            .enumerate()
            .map(|(e, p)| EdgeServerState::new(e as u16, p))
            .collect();
        let mut fl = hc.fl.clone();
        fl.seed = derive_seed(config.seed, 0x200 + i as u64);
        let initial = ModelParams::init(
            format!("{}/GM", hc.name),
            hc.model.clone(),
            derive_seed(config.seed, 0x300 + i as u64),
        )?;

        let chain = &mut hospital_chains[i];
        let bus_ref = &mut bus;
        let hospital_idx = i as u16;
        let submitter_name = hc.name.clone();
        let mut ledger_hook = |model: &ModelParams, role: ModelRole| -> Result<[u8; 32], String> {
            let model_bytes = model
                .canonical_fixed_bytes(codec)
                .map_err(|e| format!("{e}"))?;
            let (submitter, endpoint) = match role {
                ModelRole::Local { edge } => {
                    // Weight exchange between central server and edge stays
                    // inside the hospital.
                    let edge_ep = Endpoint::Edge {
                        hospital: hospital_idx,
                        index: edge,
                    };
                    let central = Endpoint::Central {
                        hospital: hospital_idx,
                    };
                    let bytes = model_bytes.len() as u64;
                    bus_ref.send(central, edge_ep, MsgKind::ModelBroadcast, bytes);
                    bus_ref.send(edge_ep, central, MsgKind::LocalModelUpload, bytes);
                    (format!("{submitter_name}/E{edge}"), edge_ep)
                }
                ModelRole::Aggregate => (
                    format!("{submitter_name}/S"),
                    Endpoint::Central {
                        hospital: hospital_idx,
                    },
                ),
            };
            let payload = BlockPayload::Model {
                model_id: model.model_id.clone(),
                spec_hash: model.spec_hash,
                model_bytes,
                submitter,
            };
            ledger_append_logged(
                bus_ref,
                ChainTag::Hospital(hospital_idx),
                chain,
                payload,
                endpoint,
            )
            .map_err(|e| format!("{e}"))
        };

        let mut rounds: Vec<RoundMetrics> = Vec::new();
        let train_probe = &data.hospitals[i].train;
        let test_probe = &data.test;
        let on_round = |record: &RoundRecord, aggregate: &ModelParams| {
            let train_accuracy = evaluate(aggregate, train_probe).unwrap_or(0.0);
            let test_accuracy = evaluate(aggregate, test_probe).unwrap_or(0.0);
            rounds.push(RoundMetrics {
                round: record.round,
                selected: record.selected.clone(),
                total_samples: record.total_samples,
                train_accuracy,
                test_accuracy,
                aggregate_digest: hex_digest(&record.aggregate_digest),
            });
        };
        let (gm, _records) = run_hospital_fl(&fl, &mut edges, initial, &mut ledger_hook, on_round)
            .map_err(|e| phase_err(Phase::FederatedTraining)(SimError::Fl(e)))?;

        let gm_digest = compute_model_hash(&gm.canonical_fixed_bytes(codec)?, &gm.model_id);
        let chain = &hospital_chains[i];
        debug_assert!(matches!(
            validate_chain(chain.replica(0)),
            ChainValidation::Valid
        ));
        hospital_reports.push(HospitalReport {
            name: hc.name.clone(),
            gm_id: gm.model_id.clone(),
            rounds,
            test_accuracy: evaluate(&gm, &data.test)
                .map_err(|e| phase_err(Phase::FederatedTraining)(SimError::Neural(e)))?,
            gm_digest: hex_digest(&gm_digest),
            chain_len: chain.chain_len() as u64,
            chain_tip: hex_digest(&chain.tip_hash()),
        });
        global_models.push(gm);
    }
    phase_ticks.push(PhaseTicks {
        phase: Phase::FederatedTraining,
        start_tick: fl_start,
        end_tick: bus.tick(),
    });
    observer.finished(Phase::FederatedTraining);

    // Phase 2: all-pairs encrypted evaluation. No session may start before
    // the model owner's global model is on its hospital chain.
    observer.started(Phase::EncryptedEvaluation);
    let eval_start = bus.tick();
    let validation_splits: Vec<&LabeledDataset> =
        data.hospitals.iter().map(|hd| &hd.validation).collect();
    let mut matrices: Vec<ProbabilityMatrix> = Vec::with_capacity(h);
    let mut tuning_labels: Vec<usize> = Vec::new();
    let mut session_stats = SessionStats::default();
    for (i, gm) in global_models.iter().enumerate() {
        let recorded = hospital_chains[i].replica(0).recorded_model_ids();
        if !recorded.contains(&gm.model_id) {
            return Err(phase_err(Phase::EncryptedEvaluation)(SimError::SessionAbort(
                format!("model {} not ledger-verified", gm.model_id),
            )));
        }
        let (matrix, labels, stats) = mo_session(i, gm, &validation_splits, config, &mut bus)
            .map_err(phase_err(Phase::EncryptedEvaluation))?;
        bus.send(
            Endpoint::Central { hospital: i as u16 },
            Endpoint::Cloud,
            MsgKind::ProbabilityMatrix,
            (matrix.rows.len() * matrix.num_classes() * 8) as u64,
        );
        bus.send(
            Endpoint::Central { hospital: i as u16 },
            Endpoint::Cloud,
            MsgKind::Labels,
            labels.len() as u64 * 8,
        );
        session_stats.opened_ring_values += stats.opened_ring_values;
        session_stats.opened_bit_words += stats.opened_bit_words;
        if i == 0 {
            tuning_labels = labels;
        } else {
            debug_assert_eq!(tuning_labels, labels, "evaluation order must align");
        }
        matrices.push(matrix);
    }
    phase_ticks.push(PhaseTicks {
        phase: Phase::EncryptedEvaluation,
        start_tick: eval_start,
        end_tick: bus.tick(),
    });
    observer.finished(Phase::EncryptedEvaluation);

    // Phase 3: grid-search tuning, verified and recorded on the
    // multi-institution chain.
    observer.started(Phase::WeightTuning);
    let tune_start = bus.tick();
    let grid = WeightGrid::from_step(config.grid_step);
    let (alpha, tuning_accuracy) = grid_search_weights(&matrices, &tuning_labels, &grid)
        .map_err(|e| phase_err(Phase::WeightTuning)(SimError::Ensemble(e)))?;
    let model_ids: Vec<String> = global_models.iter().map(|m| m.model_id.clone()).collect();
    let mut known_ids: Vec<String> = Vec::new();
    for chain in &hospital_chains {
        known_ids.extend(chain.replica(0).recorded_model_ids());
    }
    let mut bm_chain = NodeSet::new(config.bm_nodes as usize);
    let m = config.bm_nodes;
    let matrix_bytes: u64 = matrices
        .iter()
        .map(|p| (p.rows.len() * p.num_classes() * 8) as u64)
        .sum();
    for node in 0..m {
        bus.send(
            Endpoint::Cloud,
            Endpoint::LedgerNode {
                chain: ChainTag::Institutions,
                index: node,
            },
            MsgKind::LedgerSubmit,
            matrix_bytes + tuning_labels.len() as u64 * 8,
        );
    }
    for s in 0..m {
        for r in 0..m {
            if s != r {
                bus.send(
                    Endpoint::LedgerNode {
                        chain: ChainTag::Institutions,
                        index: s,
                    },
                    Endpoint::LedgerNode {
                        chain: ChainTag::Institutions,
                        index: r,
                    },
                    MsgKind::LedgerHashVote,
                    32,
                );
            }
        }
    }
    let node_views: Vec<(Vec<ProbabilityMatrix>, Vec<usize>)> = (0..config.bm_nodes)
        .map(|_| (matrices.clone(), tuning_labels.clone()))
        .collect();
    let tick = bus.tick();
    let outcome = bm_chain
        .verify_and_append_weights(
            &alpha,
            tuning_accuracy,
            &model_ids,
            "cloud",
            &node_views,
            &grid,
            &known_ids,
            tick,
        )
        .map_err(|e| phase_err(Phase::WeightTuning)(SimError::Ledger(e)))?;
    for node in 0..m {
        bus.send(
            Endpoint::LedgerNode {
                chain: ChainTag::Institutions,
                index: node,
            },
            Endpoint::LedgerNode {
                chain: ChainTag::Institutions,
                index: node,
            },
            MsgKind::LedgerBlockCommit,
            outcome.block.to_bytes().len() as u64,
        );
    }
    phase_ticks.push(PhaseTicks {
        phase: Phase::WeightTuning,
        start_tick: tune_start,
        end_tick: bus.tick(),
    });
    observer.finished(Phase::WeightTuning);

    // Phase 4: final ensemble evaluation on the held-out test split.
    observer.started(Phase::FinalEvaluation);
    let final_start = bus.tick();
    let test_matrices: Vec<ProbabilityMatrix> = global_models
        .iter()
        .enumerate()
        .map(|(i, gm)| -> Result<ProbabilityMatrix, SimError> {
            let mut rows = Vec::with_capacity(data.test.len());
            for x in &data.test.inputs {
                rows.push(forward(gm, x)?);
            }
            Ok(ProbabilityMatrix {
                hospital_id: config.hospitals[i].name.clone(),
                model_id: gm.model_id.clone(),
                rows,
            })
        })
        .collect::<Result<_, _>>()
        .map_err(phase_err(Phase::FinalEvaluation))?;
    let predicted = ensemble_predict(&test_matrices, &alpha)
        .map_err(|e| phase_err(Phase::FinalEvaluation)(SimError::Ensemble(e)))?;
    let ensemble_test_accuracy = accuracy_score(&predicted, &data.test.labels)
        .map_err(|e| phase_err(Phase::FinalEvaluation)(SimError::Ensemble(e)))?;
    phase_ticks.push(PhaseTicks {
        phase: Phase::FinalEvaluation,
        start_tick: final_start,
        end_tick: bus.tick(),
    });
    observer.finished(Phase::FinalEvaluation);

    let privacy_audit_ok = privacy_violation(bus.records()).is_none();
    debug_assert!(privacy_audit_ok);

    let report = RunReport {
        scenario_id: config.scenario_id.clone(),
        seed: config.seed,
        hospitals: hospital_reports,
        ensemble: EnsembleReport {
            model_ids,
            alpha: alpha.alpha.clone(),
            tuning_accuracy,
            test_accuracy: ensemble_test_accuracy,
            bm_chain_len: bm_chain.chain_len() as u64,
            bm_chain_tip: hex_digest(&bm_chain.tip_hash()),
        },
        communication: CommReport {
            messages: bus.message_count(),
            bytes: bus.bytes_total(),
            opened_ring_values: session_stats.opened_ring_values,
            opened_bit_words: session_stats.opened_bit_words,
        },
        phase_ticks,
        privacy_audit_ok,
    };
    Ok(RunOutput {
        report,
        chains: RunChains {
            hospital_chains,
            bm_chain,
        },
        bus,
        matrices,
        tuning_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_blobs;
    use crate::data::take_splits;
    use crate::neural::forward_fixed_point;

    fn dense_spec(inputs: usize, classes: usize) -> ModelSpec {
        ModelSpec {
            input_shape: vec![inputs],
            layers: vec![
                LayerSpec::Dense {
                    inputs,
                    outputs: classes,
                },
                LayerSpec::Softmax,
            ],
        }
    }

    fn mlp_spec(inputs: usize, hidden: usize, classes: usize) -> ModelSpec {
        ModelSpec {
            input_shape: vec![inputs],
            layers: vec![
                LayerSpec::Dense {
                    inputs,
                    outputs: hidden,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: hidden,
                    outputs: classes,
                },
                LayerSpec::Softmax,
            ],
        }
    }

    fn tiny_scenario(seed: u64) -> (ScenarioConfig, ScenarioData) {
        let blobs = synthetic_blobs(3, 4, 260, 0.6, 77);
        let splits = take_splits(&blobs, &[80, 80, 20, 20, 60]);
        let data = ScenarioData {
            hospitals: vec![
                HospitalData {
                    train: splits[0].clone(),
                    validation: splits[2].clone(),
                },
                HospitalData {
                    train: splits[1].clone(),
                    validation: splits[3].clone(),
                },
            ],
            test: splits[4].clone(),
        };
        let fl = FlConfig {
            rounds: 3,
            epochs: 2,
            participants_per_round: 2,
            learning_rate: 0.3,
            batch_size: 16,
            seed: 0,
        };
        let config = ScenarioConfig {
            scenario_id: "tiny".into(),
            seed,
            frac_bits: 16,
            hospitals: vec![
                HospitalConfig {
                    name: "H0".into(),
                    model: dense_spec(4, 3),
                    edges: 2,
                    fl: fl.clone(),
                    ledger_nodes: 3,
                    partition_plan: PartitionPlan::Contiguous,
                },
                HospitalConfig {
                    name: "H1".into(),
                    model: mlp_spec(4, 8, 3),
                    edges: 2,
                    fl,
                    ledger_nodes: 3,
                    partition_plan: PartitionPlan::Contiguous,
                },
            ],
            grid_step: 0.5,
            bm_nodes: 3,
            eval_samples_per_hospital: None,
        };
        (config, data)
    }

    #[test]
    fn budget_is_exactly_consumed() {
        let spec = mlp_spec(6, 4, 3);
        let params = ModelParams::init("m", spec.clone(), 3).unwrap();
        let codec = FixedPointCodec::default();
        let quantized = export_for_mpc(&params, codec).unwrap();
        let batch = 5usize;
        let budget = randomness_budget(&spec, batch, 3).unwrap();
        let dealer = Dealer::new(3, 9);
        let mut supply = SessionRandomness::budgeted(dealer, budget);
        let mut bus = MessageBus::new();
        let exchange = Exchange::for_parties(&mut bus, 3, 1);
        let mut ctx = SecureContext::new(codec, &mut supply, exchange);
        let x: Vec<f64> = (0..batch * 6).map(|i| (i as f64) * 0.01 - 0.2).collect();
        let encoded = codec.encode_all(&x).unwrap();
        let input = ctx.share_plain(&encoded, vec![batch, 6], 16).unwrap();
        secure_forward(&mut ctx, &quantized, &input).unwrap();
        assert_eq!(supply.remaining(), Some(RandomnessBudget::default()));
    }

    #[test]
    fn mo_session_matches_fixed_point_reference() {
        let (config, data) = tiny_scenario(5);
        let gm = ModelParams::init("H0/GM/t0", dense_spec(4, 3), 11).unwrap();
        let mut bus = MessageBus::new();
        let splits: Vec<&LabeledDataset> =
            data.hospitals.iter().map(|hd| &hd.validation).collect();
        let (matrix, labels, stats) =
            mo_session(0, &gm, &splits, &config, &mut bus).unwrap();
        assert_eq!(matrix.rows.len(), 40);
        assert_eq!(labels.len(), 40);
        assert!(stats.opened_ring_values > 0);
        matrix.validate().unwrap();

        let codec = FixedPointCodec::new(config.frac_bits);
        let quantized = export_for_mpc(&gm, codec).unwrap();
        let mut row = 0usize;
        for split in &splits {
            for x in &split.inputs {
                let xq = codec.encode_all(x).unwrap();
                let logits: Vec<f64> = forward_fixed_point(&quantized, &xq)
                    .unwrap()
                    .iter()
                    .map(|&r| codec.decode(r))
                    .collect();
                let expected = crate::neural::softmax(&logits);
                for (a, b) in matrix.rows[row].iter().zip(&expected) {
                    assert!((a - b).abs() < 1e-3, "row {row}: {a} vs {b}");
                }
                row += 1;
            }
        }
    }

    #[test]
    fn do_contribution_rejects_empty_and_respects_cap() {
        let codec = FixedPointCodec::default();
        let empty = LabeledDataset {
            inputs: vec![],
            labels: vec![],
            input_shape: vec![2],
            num_classes: 2,
        };
        assert!(matches!(
            prepare_do_contribution(&empty, None, codec),
            Err(SimError::EmptyEvalSet)
        ));
        let data = synthetic_blobs(2, 2, 10, 0.4, 1);
        let capped = prepare_do_contribution(&data, Some(4), codec).unwrap();
        assert_eq!(capped.samples, 4);
        assert_eq!(capped.labels.len(), 4);
        assert_eq!(capped.encoded.len(), 8);
    }

    #[test]
    fn scenario_runs_and_reports() {
        let (config, data) = tiny_scenario(5);
        let out = run_scenario(&config, &data, &mut NoopObserver).unwrap();
        let report = &out.report;
        assert!(report.privacy_audit_ok);
        assert_eq!(report.hospitals.len(), 2);
        assert_eq!(report.ensemble.alpha.len(), 2);
        // One-hot candidates are in the grid, so the tuned ensemble cannot be
        // worse than either individual model on the tuning set.
        let tuning_best = report.ensemble.tuning_accuracy;
        for (matrix, _) in out.matrices.iter().zip(&report.hospitals) {
            let own: Vec<usize> = matrix
                .rows
                .iter()
                .map(|r| crate::neural::argmax(r))
                .collect();
            let acc = accuracy_score(&own, &out.tuning_labels).unwrap();
            assert!(tuning_best >= acc);
        }
        // Chains carry every round's models plus the weight record.
        assert_eq!(report.ensemble.bm_chain_len, 1);
        assert!(report.hospitals.iter().all(|hr| hr.chain_len == 9)); // 3 rounds x (2 local + 1 agg)
        for chain in &out.chains.hospital_chains {
            assert!(chain.replicas_consistent());
            assert!(matches!(
                validate_chain(chain.replica(0)),
                ChainValidation::Valid
            ));
        }
        assert!(out.chains.bm_chain.replicas_consistent());
    }

    #[test]
    fn scenario_is_deterministic() {
        let (config, data) = tiny_scenario(9);
        let a = run_scenario(&config, &data, &mut NoopObserver).unwrap();
        let b = run_scenario(&config, &data, &mut NoopObserver).unwrap();
        assert_eq!(a.report, b.report);
        for (x, y) in a
            .chains
            .hospital_chains
            .iter()
            .zip(&b.chains.hospital_chains)
        {
            assert_eq!(x.replica(0).to_bytes(), y.replica(0).to_bytes());
        }
        assert_eq!(
            a.chains.bm_chain.replica(0).to_bytes(),
            b.chains.bm_chain.replica(0).to_bytes()
        );
        assert_eq!(a.bus.records(), b.bus.records());
    }

    #[test]
    fn config_validation_rejects_misfits() {
        let (mut config, data) = tiny_scenario(1);
        config.hospitals.truncate(1);
        assert!(matches!(
            run_scenario(&config, &data, &mut NoopObserver),
            Err(SimError::InvalidConfig(_))
        ));

        let (mut config, data) = tiny_scenario(1);
        config.hospitals[0].model = dense_spec(5, 3);
        assert!(matches!(
            run_scenario(&config, &data, &mut NoopObserver),
            Err(SimError::InvalidConfig(_))
        ));
    }
}
