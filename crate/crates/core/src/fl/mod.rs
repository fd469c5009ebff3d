//! Federated averaging with compressed, privatized uplinks.
//!
//! One round: every client runs a few steps of local SGD, clips the resulting
//! model update, transforms it according to the active scheme (nothing, plain
//! dithered quantization, additive noise, noise then quantization, or the
//! layered codec that makes quantization error and noise one and the same),
//! and ships it. The server rebuilds every update from the per-client shared
//! streams and applies the weighted average. Everything is deterministic in
//! the master seed, whether clients run sequentially or on threads.

pub mod data;
pub mod model;

use crate::coding::{self, CodingError};
use crate::lattice::{LatticeError, LatticeSpec};
use crate::layered_noise::{LayeredNoiseSpec, NoiseError};
use crate::quantizer::{self, QuantizerError, RsuqConfig, DEFAULT_MAX_TRIALS};
use crate::rng::RandomStream;
use crate::stats::mean_ci95;
use data::Dataset;
use model::MlpSpec;
use serde::Serialize;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlError {
    #[error(transparent)]
    Quantizer(#[from] QuantizerError),
    #[error(transparent)]
    Coding(#[from] CodingError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("network needs at least input and output layers with nonzero width, got {0:?}")]
    BadArchitecture(Vec<usize>),
    #[error("total iterations {total} must be a multiple of the local iterations {local}")]
    BadIterationSplit { total: u32, local: u32 },
    #[error("at least one client required")]
    ZeroClients,
    #[error("client {client} received no data")]
    EmptyClientData { client: u32 },
    #[error("model expects {model_dim} inputs / {model_classes} classes, dataset has {data_dim} / {data_classes}")]
    ModelDataMismatch {
        model_dim: usize,
        model_classes: usize,
        data_dim: usize,
        data_classes: usize,
    },
    #[error("learning rate must be finite and positive, got {0}")]
    BadLearningRate(f64),
    #[error("momentum must lie in [0, 1), got {0}")]
    BadMomentum(f64),
    #[error("clip radius must be finite and positive, got {0}")]
    BadClip(f64),
    #[error("noise scale must be finite and positive for scheme {scheme}, got {scale}")]
    BadNoiseScale { scheme: Scheme, scale: f64 },
    #[error("the scalar Laplace mechanism needs block dimension 1, got {0}")]
    LaplaceNeedsScalar(usize),
    #[error("learning-rate decay must lie in (0, 1], got {0}")]
    BadDecay(f64),
    #[error("non-finite loss at round {round} on client {client}")]
    NonFiniteLoss { round: u32, client: u32 },
    #[error("round {round}: expected messages from {expected} clients, got {got}")]
    WrongMessageCount { round: u32, expected: u32, got: u32 },
    #[error("round {round}: no message from client {client}")]
    MissingClient { round: u32, client: u32 },
    #[error("message labeled round {got_round} client {got_client}, expected round {round} client {client}")]
    MisroutedMessage {
        round: u32,
        client: u32,
        got_round: u32,
        got_client: u32,
    },
    #[error("update has {got} coordinates, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

// ---------------------------------------------------------------------------
// schemes and configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Laplace,
}

/// What a client does to its clipped update before transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Send the raw update.
    Fl,
    /// Scalar dithered quantization, no noise.
    FlSdq,
    /// Additive mechanism noise, sent raw.
    FlNoise(NoiseKind),
    /// Additive mechanism noise, then scalar dithered quantization.
    FlNoiseSdq(NoiseKind),
    /// The layered codec: quantization error distributed as the mechanism
    /// noise, nothing added.
    Cepam(NoiseKind),
}

impl Scheme {
    pub const ALL: [Scheme; 8] = [
        Scheme::Fl,
        Scheme::FlSdq,
        Scheme::FlNoise(NoiseKind::Gaussian),
        Scheme::FlNoise(NoiseKind::Laplace),
        Scheme::FlNoiseSdq(NoiseKind::Gaussian),
        Scheme::FlNoiseSdq(NoiseKind::Laplace),
        Scheme::Cepam(NoiseKind::Gaussian),
        Scheme::Cepam(NoiseKind::Laplace),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Fl => "fl",
            Scheme::FlSdq => "fl-sdq",
            Scheme::FlNoise(NoiseKind::Gaussian) => "fl-noise-gaussian",
            Scheme::FlNoise(NoiseKind::Laplace) => "fl-noise-laplace",
            Scheme::FlNoiseSdq(NoiseKind::Gaussian) => "fl-noise-sdq-gaussian",
            Scheme::FlNoiseSdq(NoiseKind::Laplace) => "fl-noise-sdq-laplace",
            Scheme::Cepam(NoiseKind::Gaussian) => "cepam-gaussian",
            Scheme::Cepam(NoiseKind::Laplace) => "cepam-laplace",
        }
    }

    pub fn noise_kind(self) -> Option<NoiseKind> {
        match self {
            Scheme::Fl | Scheme::FlSdq => None,
            Scheme::FlNoise(k) | Scheme::FlNoiseSdq(k) | Scheme::Cepam(k) => Some(k),
        }
    }

    fn quantizes(self) -> bool {
        matches!(
            self,
            Scheme::FlSdq | Scheme::FlNoiseSdq(_) | Scheme::Cepam(_)
        )
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .iter()
            .copied()
            .find(|sch| sch.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Scheme::ALL.iter().map(|s| s.name()).collect();
                format!("unknown scheme '{s}'; expected one of {}", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub scheme: Scheme,
    /// T; the round count is T / local_iters.
    pub total_iters: u32,
    /// Local SGD steps per client per round.
    pub local_iters: u32,
    pub clients: u32,
    pub lr: f64,
    pub momentum: f64,
    /// Update norm bound, applied before any perturbation.
    pub clip: f64,
    /// Sub-vector length for the layered codec.
    pub block_dim: usize,
    pub lattice_scale: f64,
    /// Sigma for Gaussian schemes, b for Laplace ones.
    pub noise_scale: f64,
    pub master_seed: u64,
    /// Shuffle before dealing examples to clients; false sorts by label.
    pub iid: bool,
    /// Run clients on threads. Results are identical either way.
    pub parallel: bool,
    pub plateau_patience: u32,
    pub plateau_epsilon: f64,
    pub lr_decay: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            scheme: Scheme::Fl,
            total_iters: 900,
            local_iters: 15,
            clients: 10,
            lr: 0.01,
            momentum: 0.9,
            clip: 0.5,
            block_dim: 1,
            lattice_scale: 1e-5,
            noise_scale: 0.05,
            master_seed: 1,
            iid: true,
            parallel: false,
            plateau_patience: 10,
            plateau_epsilon: 1e-3,
            lr_decay: 0.5,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), FlError> {
        if self.clients == 0 {
            return Err(FlError::ZeroClients);
        }
        if self.local_iters == 0 || !self.total_iters.is_multiple_of(self.local_iters) {
            return Err(FlError::BadIterationSplit {
                total: self.total_iters,
                local: self.local_iters,
            });
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(FlError::BadLearningRate(self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(FlError::BadMomentum(self.momentum));
        }
        if !(self.clip.is_finite() && self.clip > 0.0) {
            return Err(FlError::BadClip(self.clip));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(FlError::BadDecay(self.lr_decay));
        }
        if self.scheme.noise_kind().is_some()
            && !(self.noise_scale.is_finite() && self.noise_scale > 0.0)
        {
            return Err(FlError::BadNoiseScale {
                scheme: self.scheme,
                scale: self.noise_scale,
            });
        }
        if self.scheme.quantizes() {
            LatticeSpec::new(1, self.lattice_scale)?;
        }
        if self.scheme == Scheme::Cepam(NoiseKind::Laplace) && self.block_dim != 1 {
            return Err(FlError::LaplaceNeedsScalar(self.block_dim));
        }
        if matches!(self.scheme, Scheme::Cepam(_)) && self.block_dim == 0 {
            return Err(FlError::Lattice(LatticeError::ZeroDimension));
        }
        Ok(())
    }

    pub fn rounds(&self) -> u32 {
        self.total_iters / self.local_iters
    }

    /// Quantizer configuration for the layered schemes.
    pub fn rsuq(&self) -> Result<RsuqConfig, FlError> {
        let noise = match self.scheme {
            Scheme::Cepam(NoiseKind::Gaussian) => {
                LayeredNoiseSpec::gaussian(self.noise_scale, self.block_dim)?
            }
            Scheme::Cepam(NoiseKind::Laplace) => {
                if self.block_dim != 1 {
                    return Err(FlError::LaplaceNeedsScalar(self.block_dim));
                }
                LayeredNoiseSpec::laplace(self.noise_scale)?
            }
            other => {
                return Err(FlError::BadNoiseScale {
                    scheme: other,
                    scale: self.noise_scale,
                })
            }
        };
        let lattice = LatticeSpec::new(self.block_dim, self.lattice_scale)?;
        Ok(RsuqConfig::new(lattice, noise, DEFAULT_MAX_TRIALS)?)
    }
}

// ---------------------------------------------------------------------------
// stream derivation
// ---------------------------------------------------------------------------

pub const STREAM_TAG_INIT: u64 = 1;
pub const STREAM_TAG_PARTITION: u64 = 2;
pub const STREAM_TAG_TRAIN: u64 = 3;
pub const STREAM_TAG_SHARED: u64 = 4;
pub const STREAM_TAG_DATA: u64 = 5;

/// The stream a client and the server both derive for one round's encode and
/// decode. Fresh per round, so the decoder never depends on how many draws
/// earlier rounds consumed.
pub fn shared_stream(master_seed: u64, client: u32, round: u32) -> RandomStream {
    RandomStream::new(master_seed)
        .child(STREAM_TAG_SHARED)
        .child(u64::from(client))
        .child(u64::from(round))
}

fn train_stream(master_seed: u64, client: u32) -> RandomStream {
    RandomStream::new(master_seed)
        .child(STREAM_TAG_TRAIN)
        .child(u64::from(client))
}

// ---------------------------------------------------------------------------
// update transforms
// ---------------------------------------------------------------------------

/// Scales the update onto the clip ball: X / max(1, |X| / clip). Updates
/// already inside the ball are untouched, not rescaled by 1.
pub fn clip_update(x: &mut [f64], clip: f64) {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ratio = norm / clip;
    if ratio > 1.0 {
        for v in x.iter_mut() {
            *v /= ratio;
        }
    }
}

/// Splits x into ceil(m / n) blocks of length n, zero-padding the last. The
/// original length is what `unpartition` needs to drop the padding again.
pub fn partition(x: &[f64], n: usize) -> Vec<Vec<f64>> {
    let blocks = x.len().div_ceil(n);
    (0..blocks)
        .map(|b| {
            let start = b * n;
            let end = usize::min(start + n, x.len());
            let mut block = vec![0.0; n];
            block[..end - start].copy_from_slice(&x[start..end]);
            block
        })
        .collect()
}

pub fn unpartition(blocks: &[Vec<f64>], m: usize) -> Vec<f64> {
    let mut out: Vec<f64> = blocks.iter().flatten().copied().collect();
    out.truncate(m);
    out
}

const WIRE_HEADER_BITS: u64 = 8 * coding::HEADER_LEN as u64;

/// One client's uplink for one round.
///
/// Bit accounting: `Coded` is the layered codec's literal byte length. `Raw`
/// charges one f64 per coordinate plus the header. `Lattice` charges a
/// fixed-width integer per coordinate sized by the realized coordinate range,
/// plus the header and the two range bounds the message would need to carry.
#[derive(Debug, Clone, PartialEq)]
pub enum Uplink {
    Coded(Vec<u8>),
    Raw(Vec<f64>),
    Lattice(Vec<i64>),
}

impl Uplink {
    pub fn bits(&self) -> u64 {
        match self {
            Uplink::Coded(bytes) => 8 * bytes.len() as u64,
            Uplink::Raw(values) => WIRE_HEADER_BITS + 64 * values.len() as u64,
            Uplink::Lattice(points) => {
                let lo = points.iter().copied().min().unwrap_or(0);
                let hi = points.iter().copied().max().unwrap_or(0);
                let range = (hi as i128 - lo as i128) as u128 + 1;
                let width = if range <= 1 {
                    0
                } else {
                    128 - (range - 1).leading_zeros()
                };
                WIRE_HEADER_BITS + 128 + u64::from(width) * points.len() as u64
            }
        }
    }
}

fn add_noise(x: &[f64], kind: NoiseKind, scale: f64, stream: &mut RandomStream) -> Vec<f64> {
    match kind {
        NoiseKind::Gaussian => {
            let mut z = vec![0.0; x.len()];
            stream.fill_normal(&mut z);
            x.iter().zip(&z).map(|(xi, zi)| xi + scale * zi).collect()
        }
        NoiseKind::Laplace => x
            .iter()
            .map(|xi| xi + scale * (stream.exponential() - stream.exponential()))
            .collect(),
    }
}

fn sdq_per_coordinate(
    x: &[f64],
    lattice_scale: f64,
    stream: &mut RandomStream,
) -> Result<(Vec<i64>, Vec<f64>), FlError> {
    let lattice = LatticeSpec::new(1, lattice_scale)?;
    let mut points = Vec::with_capacity(x.len());
    let mut recon = Vec::with_capacity(x.len());
    for &xi in x {
        let v = lattice.sample_uniform_cell(stream);
        let point = quantizer::sdq_encode(&[xi], &v, &lattice)?;
        recon.push(quantizer::sdq_decode(&point, &v)[0]);
        points.push(point.coords()[0]);
    }
    Ok((points, recon))
}

/// Applies the scheme's transform to a clipped update. Returns the message
/// and the client's own view of what the server will reconstruct; the two
/// reconstructions agree bit for bit.
///
/// `shared` is the stream the server re-derives (dithers, latents); `private`
/// covers randomness the server must never see (mechanism noise in the
/// additive baselines).
pub fn encode_update(
    x: &[f64],
    round: u32,
    client: u32,
    cfg: &TrainingConfig,
    shared: &mut RandomStream,
    private: &mut RandomStream,
) -> Result<(Uplink, Vec<f64>), FlError> {
    match cfg.scheme {
        Scheme::Fl => Ok((Uplink::Raw(x.to_vec()), x.to_vec())),
        Scheme::FlNoise(kind) => {
            let y = add_noise(x, kind, cfg.noise_scale, private);
            Ok((Uplink::Raw(y.clone()), y))
        }
        Scheme::FlSdq => {
            let (points, recon) = sdq_per_coordinate(x, cfg.lattice_scale, shared)?;
            Ok((Uplink::Lattice(points), recon))
        }
        Scheme::FlNoiseSdq(kind) => {
            let noisy = add_noise(x, kind, cfg.noise_scale, private);
            let (points, recon) = sdq_per_coordinate(&noisy, cfg.lattice_scale, shared)?;
            Ok((Uplink::Lattice(points), recon))
        }
        Scheme::Cepam(_) => {
            let rsuq = cfg.rsuq()?;
            let blocks = partition(x, cfg.block_dim);
            let mut encodes = Vec::with_capacity(blocks.len());
            for block in &blocks {
                encodes.push(quantizer::lrsuq_encode(block, shared, &rsuq)?);
            }
            let bytes = coding::encode_uplink(round, client, &encodes, cfg.clip, &rsuq)?;
            let recon: Vec<Vec<f64>> = encodes.into_iter().map(|e| e.reconstruction).collect();
            Ok((Uplink::Coded(bytes), unpartition(&recon, x.len())))
        }
    }
}

/// Server-side reconstruction of one client's update. `shared` must be the
/// same derivation the encoder used.
pub fn decode_update(
    uplink: &Uplink,
    round: u32,
    client: u32,
    m: usize,
    cfg: &TrainingConfig,
    shared: &mut RandomStream,
) -> Result<Vec<f64>, FlError> {
    match uplink {
        Uplink::Raw(values) => {
            if values.len() != m {
                return Err(FlError::LengthMismatch {
                    expected: m,
                    got: values.len(),
                });
            }
            Ok(values.clone())
        }
        Uplink::Lattice(points) => {
            if points.len() != m {
                return Err(FlError::LengthMismatch {
                    expected: m,
                    got: points.len(),
                });
            }
            let lattice = LatticeSpec::new(1, cfg.lattice_scale)?;
            let mut out = Vec::with_capacity(m);
            for &j in points {
                let v = lattice.sample_uniform_cell(shared);
                let point = lattice.point(vec![j])?;
                out.push(quantizer::sdq_decode(&point, &v)[0]);
            }
            Ok(out)
        }
        Uplink::Coded(bytes) => {
            let rsuq = cfg.rsuq()?;
            let (header, blocks) = coding::decode_uplink(bytes, shared, cfg.clip, &rsuq)?;
            if header.round != round || header.client != client {
                return Err(FlError::MisroutedMessage {
                    round,
                    client,
                    got_round: header.round,
                    got_client: header.client,
                });
            }
            let expected_blocks = m.div_ceil(cfg.block_dim);
            if blocks.len() != expected_blocks {
                return Err(FlError::LengthMismatch {
                    expected: expected_blocks,
                    got: blocks.len(),
                });
            }
            let recon: Vec<Vec<f64>> = blocks.into_iter().map(|b| b.reconstruction).collect();
            Ok(unpartition(&recon, m))
        }
    }
}

// ---------------------------------------------------------------------------
// clients and rounds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: u32,
    /// Aggregation weight p_k, the client's share of the training data.
    pub weight: f64,
    /// Indices into the shared training set.
    pub indices: Vec<usize>,
    /// Private stream: sample picks and mechanism noise. Never replayed.
    pub train_stream: RandomStream,
    /// Momentum buffer; survives across rounds.
    pub velocity: Vec<f64>,
}

impl ClientState {
    pub fn new(
        id: u32,
        weight: f64,
        indices: Vec<usize>,
        master_seed: u64,
        param_count: usize,
    ) -> Self {
        ClientState {
            id,
            weight,
            indices,
            train_stream: train_stream(master_seed, id),
            velocity: vec![0.0; param_count],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientMessage {
    pub client: u32,
    pub weight: f64,
    pub uplink: Uplink,
}

/// Runs the client's local iterations from `w` and returns the raw update
/// X = W_local - w. Each step draws one example uniformly with replacement
/// from the client's share.
pub fn local_sgd(
    model: &MlpSpec,
    train: &Dataset,
    client: &mut ClientState,
    w: &[f64],
    lr: f64,
    round: u32,
    cfg: &TrainingConfig,
) -> Result<Vec<f64>, FlError> {
    if client.indices.is_empty() {
        return Err(FlError::EmptyClientData { client: client.id });
    }
    let mut params = w.to_vec();
    let mut grad = vec![0.0; model.param_count()];
    for _ in 0..cfg.local_iters {
        let pick = client.train_stream.uniform_int(client.indices.len() as u64) as usize;
        let idx = client.indices[pick];
        let loss = model.loss_and_grad(&params, train.image(idx), train.label(idx), &mut grad);
        if !loss.is_finite() {
            return Err(FlError::NonFiniteLoss {
                round,
                client: client.id,
            });
        }
        model::momentum_step(&mut params, &mut client.velocity, &grad, lr, cfg.momentum);
    }
    Ok(params.iter().zip(w).map(|(p, wi)| p - wi).collect())
}

/// Local SGD, clipping, and the scheme transform, producing the round's
/// uplink message.
pub fn client_round(
    model: &MlpSpec,
    train: &Dataset,
    client: &mut ClientState,
    w: &[f64],
    round: u32,
    lr: f64,
    cfg: &TrainingConfig,
) -> Result<ClientMessage, FlError> {
    let mut update = local_sgd(model, train, client, w, lr, round, cfg)?;
    clip_update(&mut update, cfg.clip);
    let mut shared = shared_stream(cfg.master_seed, client.id, round);
    let (uplink, _) = encode_update(
        &update,
        round,
        client.id,
        cfg,
        &mut shared,
        &mut client.train_stream,
    )?;
    Ok(ClientMessage {
        client: client.id,
        weight: client.weight,
        uplink,
    })
}

/// Decodes every client's message and applies the weighted average:
/// w + sum_k p_k X_k. Messages are processed in client-id order regardless of
/// arrival order, so the result does not depend on scheduling.
pub fn server_aggregate(
    w: &[f64],
    messages: &[ClientMessage],
    round: u32,
    cfg: &TrainingConfig,
) -> Result<Vec<f64>, FlError> {
    if messages.len() != cfg.clients as usize {
        return Err(FlError::WrongMessageCount {
            round,
            expected: cfg.clients,
            got: messages.len() as u32,
        });
    }
    let mut by_id: Vec<&ClientMessage> = messages.iter().collect();
    by_id.sort_by_key(|msg| msg.client);
    let mut delta = vec![0.0; w.len()];
    for (expected, msg) in by_id.iter().enumerate() {
        if msg.client != expected as u32 {
            return Err(FlError::MissingClient {
                round,
                client: expected as u32,
            });
        }
        let mut shared = shared_stream(cfg.master_seed, msg.client, round);
        let update = decode_update(&msg.uplink, round, msg.client, w.len(), cfg, &mut shared)?;
        for (d, x) in delta.iter_mut().zip(&update) {
            *d += msg.weight * x;
        }
    }
    Ok(w.iter().zip(&delta).map(|(wi, d)| wi + d).collect())
}

// ---------------------------------------------------------------------------
// schedule, metrics, experiment loop
// ---------------------------------------------------------------------------

/// Step-size controller: halve (more generally, multiply by `decay`) once the
/// best validation accuracy has gone `patience` consecutive rounds without
/// improving by at least `epsilon`.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    lr: f64,
    best: f64,
    stall: u32,
    patience: u32,
    epsilon: f64,
    decay: f64,
}

impl PlateauSchedule {
    pub fn new(lr: f64, patience: u32, epsilon: f64, decay: f64) -> Self {
        PlateauSchedule {
            lr,
            best: f64::NEG_INFINITY,
            stall: 0,
            patience,
            epsilon,
            decay,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn observe(&mut self, val_acc: f64) {
        if val_acc >= self.best + self.epsilon {
            self.best = val_acc;
            self.stall = 0;
        } else {
            self.best = self.best.max(val_acc);
            self.stall += 1;
            if self.stall >= self.patience {
                self.lr *= self.decay;
                self.stall = 0;
            }
        }
    }
}

/// Per-round record. The wall clock is informational and excluded from the
/// deterministic outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RoundMetrics {
    pub round: u32,
    pub val_acc: f64,
    pub test_acc: f64,
    pub uplink_bits: u64,
    pub wall_clock_ms: f64,
}

fn check_model_data(model: &MlpSpec, data: &Dataset) -> Result<(), FlError> {
    if model.input_dim() != data.dim() || model.classes() != data.classes() {
        return Err(FlError::ModelDataMismatch {
            model_dim: model.input_dim(),
            model_classes: model.classes(),
            data_dim: data.dim(),
            data_classes: data.classes(),
        });
    }
    Ok(())
}

/// The full training loop: partition data, run rounds, aggregate, evaluate,
/// adapt the learning rate. Deterministic in (config, master seed), including
/// under `parallel`.
pub fn run_experiment(
    model: &MlpSpec,
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    cfg: &TrainingConfig,
) -> Result<Vec<RoundMetrics>, FlError> {
    cfg.validate()?;
    check_model_data(model, train)?;
    check_model_data(model, val)?;
    check_model_data(model, test)?;

    let master = RandomStream::new(cfg.master_seed);
    let shares = data::partition_indices(
        train,
        cfg.clients as usize,
        cfg.iid,
        &mut master.child(STREAM_TAG_PARTITION),
    );
    let total = train.len() as f64;
    let mut clients: Vec<ClientState> = shares
        .into_iter()
        .enumerate()
        .map(|(k, indices)| {
            let weight = indices.len() as f64 / total;
            ClientState::new(
                k as u32,
                weight,
                indices,
                cfg.master_seed,
                model.param_count(),
            )
        })
        .collect();
    for c in &clients {
        if c.indices.is_empty() {
            return Err(FlError::EmptyClientData { client: c.id });
        }
    }

    let mut params = model.init(&mut master.child(STREAM_TAG_INIT));
    let mut schedule = PlateauSchedule::new(
        cfg.lr,
        cfg.plateau_patience,
        cfg.plateau_epsilon,
        cfg.lr_decay,
    );
    let mut metrics = Vec::with_capacity(cfg.rounds() as usize);

    for round in 0..cfg.rounds() {
        let lr = schedule.lr();
        let start = std::time::Instant::now();

        let messages: Vec<ClientMessage> = if cfg.parallel && clients.len() > 1 {
            let w = &params;
            let results: Vec<Result<ClientMessage, FlError>> = std::thread::scope(|scope| {
                let handles: Vec<_> = clients
                    .iter_mut()
                    .map(|client| {
                        scope.spawn(move || client_round(model, train, client, w, round, lr, cfg))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("client thread panicked"))
                    .collect()
            });
            results.into_iter().collect::<Result<_, _>>()?
        } else {
            clients
                .iter_mut()
                .map(|client| client_round(model, train, client, &params, round, lr, cfg))
                .collect::<Result<_, _>>()?
        };

        params = server_aggregate(&params, &messages, round, cfg)?;
        let uplink_bits = messages.iter().map(|m| m.uplink.bits()).sum();
        let val_acc = model.accuracy(&params, val);
        let test_acc = model.accuracy(&params, test);
        metrics.push(RoundMetrics {
            round,
            val_acc,
            test_acc,
            uplink_bits,
            wall_clock_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        schedule.observe(val_acc);
    }
    Ok(metrics)
}

// ---------------------------------------------------------------------------
// reporting
// ---------------------------------------------------------------------------

/// Plot-ready CSV, one row per round per (scheme, seed) run. Wall clock is
/// deliberately absent so identical runs produce identical bytes.
pub fn metrics_csv(runs: &[(Scheme, u64, Vec<RoundMetrics>)]) -> String {
    let mut out = String::from("round,scheme,seed,val_acc,test_acc,uplink_bits\n");
    for (scheme, seed, rounds) in runs {
        for m in rounds {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                m.round, scheme, seed, m.val_acc, m.test_acc, m.uplink_bits
            ));
        }
    }
    out
}

/// Cross-seed aggregate of one scheme's runs.
#[derive(Debug, Clone, Serialize)]
pub struct SchemeSummary {
    pub scheme: String,
    pub seeds: Vec<u64>,
    pub final_val_acc_mean: f64,
    pub final_val_acc_ci95: f64,
    pub final_test_acc_mean: f64,
    pub final_test_acc_ci95: f64,
    pub mean_total_uplink_bits: f64,
}

pub fn summarize(scheme: Scheme, runs: &[(u64, Vec<RoundMetrics>)]) -> SchemeSummary {
    let finals_val: Vec<f64> = runs
        .iter()
        .map(|(_, r)| r.last().map_or(0.0, |m| m.val_acc))
        .collect();
    let finals_test: Vec<f64> = runs
        .iter()
        .map(|(_, r)| r.last().map_or(0.0, |m| m.test_acc))
        .collect();
    let totals: Vec<f64> = runs
        .iter()
        .map(|(_, r)| r.iter().map(|m| m.uplink_bits as f64).sum())
        .collect();
    let (val_mean, val_ci) = mean_ci95(&finals_val);
    let (test_mean, test_ci) = mean_ci95(&finals_test);
    let (bits_mean, _) = mean_ci95(&totals);
    SchemeSummary {
        scheme: scheme.name().to_string(),
        seeds: runs.iter().map(|(s, _)| *s).collect(),
        final_val_acc_mean: val_mean,
        final_val_acc_ci95: val_ci,
        final_test_acc_mean: test_mean,
        final_test_acc_ci95: test_ci,
        mean_total_uplink_bits: bits_mean,
    }
}
