//! One pretraining step, the epoch loop, and the checkpoint container.
//!
//! Step order: score nodes and draw the feature mask, draw the structure
//! mask, run the feature branch (mask tokens in, encode over all edges,
//! re-mask, decode over all edges), run the structure branch (encode and
//! decode over visible edges only), run the momentum passes with the shadow
//! state from the start of the step, project both branch latents, evaluate
//! the five losses, take one optimizer step over backbone plus sampler, and
//! finally decay the shadow toward the updated parameters.
//!
//! Gradient routing is structural: sampling-loss rewards are detached
//! per-node reconstruction errors, so the encoder and decoder receive
//! exactly zero gradient from the sampling loss, and every momentum output
//! is detached before any loss sees it.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{
    decode_with, encode_with, remask, Activation, Arch, Backbone, BackboneConfig, FEATURE_MASK_TOKEN,
    REMASK_TOKEN,
};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::mat::Mat;
use crate::momentum::EmaShadow;
use crate::objectives::{
    bootstrap_similarity_loss, combine, consistency_loss, feature_reconstruction_loss,
    structure_reconstruction_loss, LossConfig, LossReport,
};
use crate::optim::{Adam, AdamConfig};
use crate::params::BoundParams;
use crate::sampler::{
    sample_feature_mask, sample_structure_arcs, sample_uniform_mask, sampling_loss,
    AdaptiveSampler,
};
use crate::tape::{NodeId, Tape};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Feature mask rate.
    pub p_f: f64,
    /// Structure mask rate.
    pub p_s: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Only "adam" is implemented.
    pub optimizer: String,
    pub seed: u64,
    pub loss_config: LossConfig,
    /// EMA decay of the momentum encoder/decoder.
    pub tau: f64,
    pub backbone_arch: Arch,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub heads: usize,
    pub activation: Activation,
    /// Epoch interval for mid-run checkpoints (0 = final only).
    pub checkpoint_every: usize,
    /// Learned feature masking; turned off it falls back to uniform draws.
    pub adaptive_mask: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            p_f: 0.5,
            p_s: 0.3,
            epochs: 500,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            optimizer: "adam".into(),
            seed: 0,
            loss_config: LossConfig::default(),
            tau: 0.996,
            backbone_arch: Arch::Gat,
            hidden_dim: 32,
            num_layers: 3,
            heads: 4,
            activation: Activation::Elu,
            checkpoint_every: 0,
            adaptive_mask: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("weight_decay must be >= 0".into()));
        }
        if !(self.p_f > 0.0 && self.p_f <= 1.0) {
            return Err(Error::InvalidRate {
                what: "feature mask rate",
                value: self.p_f,
                range: "(0, 1]",
            });
        }
        if !(0.0..1.0).contains(&self.p_s) {
            return Err(Error::InvalidRate {
                what: "structure mask rate",
                value: self.p_s,
                range: "[0, 1)",
            });
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidRate {
                what: "ema decay",
                value: self.tau,
                range: "[0, 1]",
            });
        }
        if self.optimizer != "adam" {
            return Err(Error::InvalidConfig(format!(
                "unknown optimizer {:?} (only \"adam\")",
                self.optimizer
            )));
        }
        self.loss_config.validate()
    }

    pub fn backbone_config(&self, feature_dim: usize) -> BackboneConfig {
        BackboneConfig {
            arch: self.backbone_arch,
            feature_dim,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            heads: self.heads,
            activation: self.activation,
        }
    }
}

/// Hex SHA-256 of the canonical config JSON. Identical configs digest
/// identically; the digest is embedded in checkpoints and run manifests.
pub fn config_digest(cfg: &TrainConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    let hash = Sha256::digest(&bytes);
    let mut out = String::with_capacity(64);
    for b in hash {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Live training state: model, sampler, shadow, optimizer, and RNG stream.
#[derive(Debug, Clone)]
pub struct TrainerState<T> {
    pub cfg: TrainConfig,
    pub feature_dim: usize,
    pub backbone: Backbone<T>,
    pub sampler: AdaptiveSampler<T>,
    pub shadow: EmaShadow<T>,
    pub optimizer: Adam<T>,
    pub epoch: usize,
    pub rng: ChaCha8Rng,
}

/// Tape nodes and sampling outcomes of one assembled step, exposed so audit
/// suites can backpropagate from individual components.
pub struct StepGraph {
    pub backbone_bound: BoundParams,
    pub sampler_bound: Option<BoundParams>,
    pub shadow_bound: BoundParams,
    pub masked_nodes: Vec<usize>,
    pub masked_arcs: BTreeSet<usize>,
    pub visible_edges: Vec<(usize, usize)>,
    pub negatives: Vec<usize>,
    pub rewards: Vec<f64>,
    pub fr: NodeId,
    pub sample: NodeId,
    pub sr: NodeId,
    pub bs: NodeId,
    pub ca: NodeId,
    pub total: NodeId,
}

impl StepGraph {
    pub fn report<T: Scalar>(&self, tape: &Tape<T>) -> LossReport {
        LossReport {
            fr: tape.value(self.fr).item().as_f64(),
            sample: tape.value(self.sample).item().as_f64(),
            sr: tape.value(self.sr).item().as_f64(),
            bs: tape.value(self.bs).item().as_f64(),
            ca: tape.value(self.ca).item().as_f64(),
            total: tape.value(self.total).item().as_f64(),
        }
    }
}

/// One random negative per visible edge, uniform over nodes excluding both
/// endpoints.
fn sample_negatives(
    num_nodes: usize,
    edges: &[(usize, usize)],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(edges.len());
    for &(i, j) in edges {
        let excluded = if i == j { 1 } else { 2 };
        if num_nodes <= excluded {
            return Err(Error::CannotSampleNegative { num_nodes });
        }
        loop {
            let c = rng.random_range(0..num_nodes);
            if c != i && c != j {
                out.push(c);
                break;
            }
        }
    }
    Ok(out)
}

/// Builds the full step computation on `tape`. `track_shadow` binds the
/// shadow parameters as gradient-tracked leaves (for detachment audits)
/// instead of constants; the computed values are identical either way.
#[allow(clippy::too_many_arguments)]
pub fn build_step_graph<T: Scalar>(
    tape: &mut Tape<T>,
    backbone: &Backbone<T>,
    sampler: &mut AdaptiveSampler<T>,
    shadow: &EmaShadow<T>,
    cfg: &TrainConfig,
    graph: &Graph,
    rng: &mut ChaCha8Rng,
    track_shadow: bool,
) -> Result<StepGraph> {
    graph.validate()?;
    if graph.feature_dim() != backbone.cfg.feature_dim {
        return Err(Error::shape(
            "graph feature width",
            backbone.cfg.feature_dim,
            graph.feature_dim(),
        ));
    }
    let bb_cfg = &backbone.cfg;
    let loss_cfg = &cfg.loss_config;
    let edges = graph.edges();

    let backbone_bound = backbone.bind(tape, true);
    let shadow_bound = shadow.params.bind(tape, track_shadow);
    let x = tape.constant(graph.features().cast::<T>());

    // Feature mask: learned scores + without-replacement draw, or the
    // uniform fallback when adaptive masking is ablated.
    let (scores, masked_nodes, sampler_bound) = if cfg.adaptive_mask {
        let bound = sampler.bind(tape, true);
        let p = sampler.score_nodes(tape, &bound, x)?;
        let probs = tape.value(p).to_f64_vec();
        let masked = sample_feature_mask(&probs, cfg.p_f, rng)?;
        (Some(p), masked, Some(bound))
    } else {
        let masked = sample_uniform_mask(graph.num_nodes(), cfg.p_f, rng)?;
        (None, masked, None)
    };

    // Structure mask over whole undirected edges.
    let masked_arcs = sample_structure_arcs(graph, cfg.p_s, rng)?;
    let visible_edges: Vec<(usize, usize)> = edges
        .iter()
        .enumerate()
        .filter(|(i, _)| !masked_arcs.contains(i))
        .map(|(_, &e)| e)
        .collect();

    // Feature branch: mask, encode over the full edge set, re-mask, decode.
    let fmask = backbone_bound.node(FEATURE_MASK_TOKEN);
    let x_masked = tape.replace_rows(x, fmask, &masked_nodes);
    let h1 = encode_with(bb_cfg, &backbone_bound, tape, edges, x_masked)?;
    let h1_re = remask(tape, h1, &masked_nodes, backbone_bound.node(REMASK_TOKEN))?;
    let z1 = decode_with(bb_cfg, &backbone_bound, tape, edges, h1_re)?;

    // Structure branch: raw features over visible edges only.
    let h2 = encode_with(bb_cfg, &backbone_bound, tape, &visible_edges, x)?;
    let z2 = decode_with(bb_cfg, &backbone_bound, tape, &visible_edges, h2)?;

    // Momentum passes with the shadow state from the start of the step.
    // Inputs and outputs are detached: the momentum branch is a target
    // factory, not a gradient path.
    let x_masked_const = tape.detach(x_masked);
    let h1m_raw = encode_with(bb_cfg, &shadow_bound, tape, edges, x_masked_const)?;
    let h1m = tape.detach(h1m_raw);
    let h2m_raw = encode_with(bb_cfg, &shadow_bound, tape, &visible_edges, x)?;
    let h2m = tape.detach(h2m_raw);
    let z1m_raw = decode_with(bb_cfg, &shadow_bound, tape, edges, h1m)?;
    let z1m = tape.detach(z1m_raw);

    // Shared projection on both branch latents.
    let h1p = backbone.project(tape, &backbone_bound, h1)?;
    let h2p = backbone.project(tape, &backbone_bound, h2)?;

    // Objectives.
    let (fr, per_node) = feature_reconstruction_loss(
        tape,
        x,
        z1,
        &masked_nodes,
        loss_cfg.alpha,
        loss_cfg.epsilon,
    )?;
    let rewards = tape.value(per_node).to_f64_vec();

    let sample = match scores {
        Some(p) => sampling_loss(
            tape,
            p,
            &masked_nodes,
            &rewards,
            loss_cfg.mean_reward_baseline,
        )?,
        None => tape.constant(Mat::scalar(T::zero())),
    };

    let negatives = sample_negatives(graph.num_nodes(), &visible_edges, rng)?;
    let sr = structure_reconstruction_loss(tape, z2, &visible_edges, &negatives, loss_cfg.margin)?;
    let bs = bootstrap_similarity_loss(tape, h1p, h2p, h1m, h2m, loss_cfg.epsilon)?;
    let ca = consistency_loss(tape, z1, z1m, &masked_nodes, loss_cfg.beta, loss_cfg.epsilon)?;

    let w = loss_cfg.weights;
    let total = combine(
        tape,
        &[
            ("fr", fr, w.fr),
            ("sample", sample, w.sample),
            ("sr", sr, w.sr),
            ("bs", bs, w.bs),
            ("ca", ca, w.ca),
        ],
    )?;

    Ok(StepGraph {
        backbone_bound,
        sampler_bound,
        shadow_bound,
        masked_nodes,
        masked_arcs,
        visible_edges,
        negatives,
        rewards,
        fr,
        sample,
        sr,
        bs,
        ca,
        total,
    })
}

impl<T: Scalar> TrainerState<T> {
    pub fn new(cfg: TrainConfig, feature_dim: usize) -> Result<Self> {
        cfg.validate()?;
        let bb_cfg = cfg.backbone_config(feature_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let backbone = Backbone::init(bb_cfg, &mut rng)?;
        let sampler = AdaptiveSampler::init(feature_dim, &mut rng)?;
        let shadow = EmaShadow::init(&backbone.codec_params(), cfg.tau)?;
        let optimizer = Adam::new(AdamConfig {
            learning_rate: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        });
        Ok(TrainerState {
            cfg,
            feature_dim,
            backbone,
            sampler,
            shadow,
            optimizer,
            epoch: 0,
            rng,
        })
    }

    /// One optimizer step on one graph.
    pub fn train_step(&mut self, graph: &Graph) -> Result<LossReport> {
        let mut tape = Tape::new();
        let step = build_step_graph(
            &mut tape,
            &self.backbone,
            &mut self.sampler,
            &self.shadow,
            &self.cfg,
            graph,
            &mut self.rng,
            false,
        )?;
        let report = step.report(&tape);
        let grads = tape.backward(step.total);

        // Gradients in binding order: backbone entries then sampler entries.
        let mut grad_mats: Vec<Mat<T>> = step
            .backbone_bound
            .iter()
            .map(|(_, id)| grads.get_or_zeros(id, tape.shape(id)))
            .collect();
        if let Some(sb) = &step.sampler_bound {
            grad_mats.extend(sb.iter().map(|(_, id)| grads.get_or_zeros(id, tape.shape(id))));
        }
        drop(tape);

        // Slot order is backbone then sampler, always; uniform-mask steps
        // feed zero gradients to the sampler slots.
        if step.sampler_bound.is_none() {
            grad_mats.extend(
                self.sampler
                    .params
                    .iter()
                    .map(|(_, p)| Mat::zeros(p.rows(), p.cols())),
            );
        }
        let mut pairs: Vec<(&mut Mat<T>, &Mat<T>)> = Vec::with_capacity(grad_mats.len());
        let mut grad_iter = grad_mats.iter();
        for (_, p) in self.backbone.params.iter_mut() {
            pairs.push((p, grad_iter.next().expect("gradient per parameter")));
        }
        for (_, p) in self.sampler.params.iter_mut() {
            pairs.push((p, grad_iter.next().expect("gradient per parameter")));
        }
        self.optimizer.step(&mut pairs)?;

        self.shadow.update_from(&self.backbone.params)?;
        Ok(report)
    }

    /// One pass over every graph; returns the mean report and advances the
    /// epoch counter.
    pub fn train_epoch(&mut self, graphs: &[Graph]) -> Result<LossReport> {
        if graphs.is_empty() {
            return Err(Error::InsufficientData {
                what: "training graphs",
                got: 0,
                need: 1,
            });
        }
        let mut sum = LossReport {
            fr: 0.0,
            sample: 0.0,
            sr: 0.0,
            bs: 0.0,
            ca: 0.0,
            total: 0.0,
        };
        for g in graphs {
            let r = self.train_step(g)?;
            sum.fr += r.fr;
            sum.sample += r.sample;
            sum.sr += r.sr;
            sum.bs += r.bs;
            sum.ca += r.ca;
            sum.total += r.total;
        }
        let n = graphs.len() as f64;
        sum.fr /= n;
        sum.sample /= n;
        sum.sr /= n;
        sum.bs /= n;
        sum.ca /= n;
        sum.total /= n;
        self.epoch += 1;
        Ok(sum)
    }
}

/// Full pretraining run from a fresh state; returns the final state and the
/// per-epoch loss reports.
pub fn pretrain<T: Scalar>(
    graphs: &[Graph],
    cfg: &TrainConfig,
) -> Result<(TrainerState<T>, Vec<LossReport>)> {
    if graphs.is_empty() {
        return Err(Error::InsufficientData {
            what: "training graphs",
            got: 0,
            need: 1,
        });
    }
    let feature_dim = graphs[0].feature_dim();
    for g in graphs {
        if g.feature_dim() != feature_dim {
            return Err(Error::shape("dataset feature width", feature_dim, g.feature_dim()));
        }
    }
    let mut state = TrainerState::new(cfg.clone(), feature_dim)?;
    let mut reports = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        reports.push(state.train_epoch(graphs)?);
    }
    Ok((state, reports))
}

pub const METRICS_CSV_HEADER: &str = "epoch,fr,sample,sr,bs,ca,total";

pub fn metrics_csv_row(epoch: usize, r: &LossReport) -> String {
    format!(
        "{epoch},{},{},{},{},{},{}",
        r.fr, r.sample, r.sr, r.bs, r.ca, r.total
    )
}

// --- Checkpoint container -------------------------------------------------
//
// Single little-endian binary file:
//   magic "MGPC", version u32,
//   config JSON (u32 length + bytes), sha256 digest of those bytes,
//   feature_dim u32, epoch u64,
//   rng seed [32], rng word position u128, rng stream u64,
//   optimizer step count u64,
//   record count u32, then records: name (u16 length + utf8),
//   rows u32, cols u32, row-major f32 payload.
//
// Records carry live parameters under "live/", sampler parameters under
// "sampler/", shadow parameters under "shadow/", and Adam moments under
// "opt/m/" and "opt/v/" (positional, in optimizer slot order).

const CHECKPOINT_MAGIC: &[u8; 4] = b"MGPC";
const CHECKPOINT_VERSION: u32 = 1;

struct RecordWriter<'a, W: Write> {
    out: &'a mut W,
}

impl<'a, W: Write> RecordWriter<'a, W> {
    fn record(&mut self, name: &str, m: &Mat<f32>) -> Result<()> {
        let bytes = name.as_bytes();
        self.out.write_all(&(bytes.len() as u16).to_le_bytes())?;
        self.out.write_all(bytes)?;
        self.out.write_all(&(m.rows() as u32).to_le_bytes())?;
        self.out.write_all(&(m.cols() as u32).to_le_bytes())?;
        for &v in m.data() {
            self.out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u128<R: Read>(r: &mut R) -> Result<u128> {
    let mut b = [0u8; 16];
    r.read_exact(&mut b)?;
    Ok(u128::from_le_bytes(b))
}

fn read_record<R: Read>(r: &mut R) -> Result<(String, Mat<f32>)> {
    let name_len = read_u16(r)? as usize;
    let mut name_bytes = vec![0u8; name_len];
    r.read_exact(&mut name_bytes)?;
    let name = String::from_utf8(name_bytes)
        .map_err(|_| Error::IncompatibleCheckpoint("record name is not utf-8".into()))?;
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    let mut data = Vec::with_capacity(rows * cols);
    let mut buf = [0u8; 4];
    for _ in 0..rows * cols {
        r.read_exact(&mut buf)?;
        data.push(f32::from_le_bytes(buf));
    }
    Ok((name, Mat::from_vec(rows, cols, data)))
}

impl TrainerState<f32> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut out = BufWriter::new(file);
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;

        let config_json = serde_json::to_vec(&self.cfg).expect("config serializes");
        out.write_all(&(config_json.len() as u32).to_le_bytes())?;
        out.write_all(&config_json)?;
        out.write_all(&Sha256::digest(&config_json))?;

        out.write_all(&(self.feature_dim as u32).to_le_bytes())?;
        out.write_all(&(self.epoch as u64).to_le_bytes())?;
        out.write_all(&self.rng.get_seed())?;
        out.write_all(&self.rng.get_word_pos().to_le_bytes())?;
        out.write_all(&self.rng.get_stream().to_le_bytes())?;
        out.write_all(&self.optimizer.step_count.to_le_bytes())?;

        let record_count = self.backbone.params.len()
            + self.sampler.params.len()
            + self.shadow.params.len()
            + self.optimizer.first_moments.len()
            + self.optimizer.second_moments.len();
        out.write_all(&(record_count as u32).to_le_bytes())?;

        let mut w = RecordWriter { out: &mut out };
        for (name, m) in self.backbone.params.iter() {
            w.record(&format!("live/{name}"), m)?;
        }
        for (name, m) in self.sampler.params.iter() {
            w.record(&format!("sampler/{name}"), m)?;
        }
        for (name, m) in self.shadow.params.iter() {
            w.record(&format!("shadow/{name}"), m)?;
        }
        for (i, m) in self.optimizer.first_moments.iter().enumerate() {
            w.record(&format!("opt/m/{i}"), m)?;
        }
        for (i, m) in self.optimizer.second_moments.iter().enumerate() {
            w.record(&format!("opt/v/{i}"), m)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let mut r = BufReader::new(file);

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::IncompatibleCheckpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::IncompatibleCheckpoint(format!(
                "unsupported version {version}"
            )));
        }
        let config_len = read_u32(&mut r)? as usize;
        let mut config_json = vec![0u8; config_len];
        r.read_exact(&mut config_json)?;
        let mut digest = [0u8; 32];
        r.read_exact(&mut digest)?;
        if Sha256::digest(&config_json).as_slice() != digest {
            return Err(Error::IncompatibleCheckpoint("config digest mismatch".into()));
        }
        let cfg: TrainConfig = serde_json::from_slice(&config_json)
            .map_err(|e| Error::IncompatibleCheckpoint(format!("config parse: {e}")))?;

        let feature_dim = read_u32(&mut r)? as usize;
        let epoch = read_u64(&mut r)? as usize;
        let mut seed = [0u8; 32];
        r.read_exact(&mut seed)?;
        let word_pos = read_u128(&mut r)?;
        let stream = read_u64(&mut r)?;
        let opt_steps = read_u64(&mut r)?;
        let record_count = read_u32(&mut r)? as usize;

        let mut state = TrainerState::<f32>::new(cfg, feature_dim)?;
        state.epoch = epoch;
        state.rng = ChaCha8Rng::from_seed(seed);
        state.rng.set_stream(stream);
        state.rng.set_word_pos(word_pos);
        state.optimizer.step_count = opt_steps;

        let slots = state.backbone.params.len() + state.sampler.params.len();
        let mut first: Vec<Option<Mat<f32>>> = vec![None; slots];
        let mut second: Vec<Option<Mat<f32>>> = vec![None; slots];
        let mut applied = 0usize;

        for _ in 0..record_count {
            let (name, mat) = read_record(&mut r)?;
            let target: Option<&mut Mat<f32>> = if let Some(p) = name.strip_prefix("live/") {
                state.backbone.params.get_mut(p)
            } else if let Some(p) = name.strip_prefix("sampler/") {
                state.sampler.params.get_mut(p)
            } else if let Some(p) = name.strip_prefix("shadow/") {
                state.shadow.params.get_mut(p)
            } else if let Some(idx) = name.strip_prefix("opt/m/") {
                let i: usize = idx
                    .parse()
                    .map_err(|_| Error::IncompatibleCheckpoint(format!("bad record {name}")))?;
                if i >= slots {
                    return Err(Error::IncompatibleCheckpoint(format!(
                        "optimizer slot {i} out of range"
                    )));
                }
                first[i] = Some(mat);
                applied += 1;
                continue;
            } else if let Some(idx) = name.strip_prefix("opt/v/") {
                let i: usize = idx
                    .parse()
                    .map_err(|_| Error::IncompatibleCheckpoint(format!("bad record {name}")))?;
                if i >= slots {
                    return Err(Error::IncompatibleCheckpoint(format!(
                        "optimizer slot {i} out of range"
                    )));
                }
                second[i] = Some(mat);
                applied += 1;
                continue;
            } else {
                None
            };
            match target {
                Some(slot) => {
                    if slot.shape() != mat.shape() {
                        return Err(Error::IncompatibleCheckpoint(format!(
                            "record {name} has shape {:?}, expected {:?}",
                            mat.shape(),
                            slot.shape()
                        )));
                    }
                    *slot = mat;
                    applied += 1;
                }
                None => {
                    return Err(Error::IncompatibleCheckpoint(format!(
                        "unknown record {name}"
                    )));
                }
            }
        }
        if applied != record_count {
            return Err(Error::IncompatibleCheckpoint(
                "record count mismatch".into(),
            ));
        }

        // Moments are present only after the first optimizer step.
        if opt_steps > 0 {
            let collect = |v: Vec<Option<Mat<f32>>>| -> Result<Vec<Mat<f32>>> {
                v.into_iter()
                    .map(|m| {
                        m.ok_or_else(|| {
                            Error::IncompatibleCheckpoint("missing optimizer moment".into())
                        })
                    })
                    .collect()
            };
            state.optimizer.first_moments = collect(first)?;
            state.optimizer.second_moments = collect(second)?;
        }
        Ok(state)
    }
}
