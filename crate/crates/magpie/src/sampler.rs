//! Mask generation: a learned feature-mask sampler, random structure
//! masking, and the score-function (REINFORCE) sampling loss.
//!
//! The sampler scores nodes with a small self-attention block over the raw
//! feature set (no graph structure) followed by a per-node feed-forward
//! scorer and a softmax, giving a categorical distribution `P` over nodes.
//! Masked nodes are drawn without replacement via Gumbel top-k perturbation,
//! which is distributionally identical to sequential renormalized
//! categorical draws. The sampler is trained to seek out nodes that are hard
//! to reconstruct: its loss multiplies each drawn node's log-probability by
//! that node's (detached) reconstruction error.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{mask_count, Graph};
use crate::mat::Mat;
use crate::params::{uniform_fan_in, BoundParams, ParamSet};
use crate::tape::{MapKind, NodeId, Tape};
use crate::Scalar;

const SAMPLER_HEADS: usize = 2;

/// Learned feature-mask distribution over nodes.
#[derive(Debug, Clone)]
pub struct AdaptiveSampler<T> {
    pub feature_dim: usize,
    head_dim: usize,
    pub params: ParamSet<T>,
    /// Probability vector from the most recent scoring pass.
    pub last_scores: Option<Vec<f64>>,
}

impl<T: Scalar> AdaptiveSampler<T> {
    pub fn init(feature_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::InvalidConfig("sampler feature_dim must be >= 1".into()));
        }
        let d = feature_dim;
        let head_dim = (d / SAMPLER_HEADS).max(1);
        let mut params = ParamSet::new();
        for h in 0..SAMPLER_HEADS {
            params.insert(format!("mha.h{h}.wq"), uniform_fan_in(rng, d, d, head_dim));
            params.insert(format!("mha.h{h}.wk"), uniform_fan_in(rng, d, d, head_dim));
            params.insert(format!("mha.h{h}.wv"), uniform_fan_in(rng, d, d, head_dim));
        }
        let concat = SAMPLER_HEADS * head_dim;
        params.insert("mha.wo", uniform_fan_in(rng, concat, concat, d));
        params.insert("ffn.w1", uniform_fan_in(rng, d, d, d));
        params.insert("ffn.b1", Mat::zeros(1, d));
        params.insert("ffn.w2", uniform_fan_in(rng, d, d, 1));
        params.insert("ffn.b2", Mat::zeros(1, 1));
        Ok(AdaptiveSampler {
            feature_dim,
            head_dim,
            params,
            last_scores: None,
        })
    }

    pub fn bind(&self, tape: &mut Tape<T>, tracked: bool) -> BoundParams {
        self.params.bind(tape, tracked)
    }

    /// Probability scores `P` over nodes (`n x 1`, strictly positive, sums
    /// to one). Caches the values in `last_scores`.
    pub fn score_nodes(
        &mut self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        x: NodeId,
    ) -> Result<NodeId> {
        let (n, d) = tape.shape(x);
        if d != self.feature_dim {
            return Err(Error::shape("sampler input width", self.feature_dim, d));
        }
        if n == 0 {
            return Err(Error::InsufficientData {
                what: "nodes to score",
                got: 0,
                need: 1,
            });
        }
        if !tape.value(x).all_finite() {
            return Err(Error::NonFiniteInput("sampler features"));
        }

        // Single attention layer over all node pairs.
        let scale = T::from_f64(1.0 / (self.head_dim as f64).sqrt());
        let mut heads = Vec::with_capacity(SAMPLER_HEADS);
        for h in 0..SAMPLER_HEADS {
            let q = tape.matmul(x, bound.node(&format!("mha.h{h}.wq")));
            let k = tape.matmul(x, bound.node(&format!("mha.h{h}.wk")));
            let v = tape.matmul(x, bound.node(&format!("mha.h{h}.wv")));
            let kt = tape.transpose(k);
            let logits = tape.matmul(q, kt);
            let logits = tape.scale(logits, scale);
            let attn = tape.softmax_rows(logits);
            heads.push(tape.matmul(attn, v));
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)
        };
        let mixed = tape.matmul(merged, bound.node("mha.wo"));

        // Per-node scorer to one logit.
        let f = tape.matmul(mixed, bound.node("ffn.w1"));
        let f = tape.add_row(f, bound.node("ffn.b1"));
        let f = tape.map(f, MapKind::Elu);
        let logit = tape.matmul(f, bound.node("ffn.w2"));
        let logit = tape.add_row(logit, bound.node("ffn.b2"));

        let p = tape.softmax_col(logit);
        self.last_scores = Some(tape.value(p).to_f64_vec());
        Ok(p)
    }
}

fn gumbel(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random::<f64>().max(1e-300);
    -(-u.ln()).ln()
}

/// Draws `floor(n * p_f)` (at least one) distinct nodes without replacement
/// from the categorical distribution `p`, via Gumbel top-k.
pub fn sample_feature_mask(p: &[f64], p_f: f64, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if !(p_f > 0.0 && p_f <= 1.0) {
        return Err(Error::InvalidRate {
            what: "feature mask rate",
            value: p_f,
            range: "(0, 1]",
        });
    }
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::NonFiniteInput("mask distribution"));
    }
    let n = p.len();
    let k = mask_count(n, p_f);
    let mut keyed: Vec<(usize, f64)> = p
        .iter()
        .enumerate()
        .map(|(v, &pv)| {
            let key = if pv > 0.0 {
                pv.ln() + gumbel(rng)
            } else {
                f64::NEG_INFINITY
            };
            (v, key)
        })
        .collect();
    keyed.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut chosen: Vec<usize> = keyed[..k].iter().map(|&(v, _)| v).collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Uniform without-replacement fallback (adaptive masking ablation).
pub fn sample_uniform_mask(n: usize, p_f: f64, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if !(p_f > 0.0 && p_f <= 1.0) {
        return Err(Error::InvalidRate {
            what: "feature mask rate",
            value: p_f,
            range: "(0, 1]",
        });
    }
    let k = mask_count(n, p_f);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + rng.random_range(0..n - i);
        pool.swap(i, j);
    }
    let mut chosen = pool[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Independent Bernoulli(`p_s`) mask over `num_edges` indices.
pub fn sample_structure_mask(
    num_edges: usize,
    p_s: f64,
    rng: &mut ChaCha8Rng,
) -> Result<BTreeSet<usize>> {
    if !(0.0..1.0).contains(&p_s) {
        return Err(Error::InvalidRate {
            what: "structure mask rate",
            value: p_s,
            range: "[0, 1)",
        });
    }
    let mut masked = BTreeSet::new();
    for i in 0..num_edges {
        if rng.random::<f64>() < p_s {
            masked.insert(i);
        }
    }
    Ok(masked)
}

/// Structure mask over a graph's mask units, expanded to arc indices, so
/// both directions of an undirected edge share one decision and self-loops
/// are never masked.
pub fn sample_structure_arcs(
    graph: &Graph,
    p_s: f64,
    rng: &mut ChaCha8Rng,
) -> Result<BTreeSet<usize>> {
    let units = sample_structure_mask(graph.num_mask_units(), p_s, rng)?;
    let mut arcs = BTreeSet::new();
    for unit in units {
        for &a in graph.unit_arcs(unit) {
            arcs.insert(a);
        }
    }
    Ok(arcs)
}

/// Score-function sampling loss: `-sum_{v in masked} ln(P_v) * reward_v`,
/// with rewards treated as constants. Gradients reach only whatever `p` was
/// built from — the sampler — never the encoder or decoder.
pub fn sampling_loss<T: Scalar>(
    tape: &mut Tape<T>,
    p: NodeId,
    masked_nodes: &[usize],
    rewards: &[f64],
    mean_reward_baseline: bool,
) -> Result<NodeId> {
    if masked_nodes.is_empty() {
        return Err(Error::EmptyMaskSet);
    }
    if masked_nodes.len() != rewards.len() {
        return Err(Error::shape(
            "per-node rewards",
            masked_nodes.len(),
            rewards.len(),
        ));
    }
    let pv = tape.value(p);
    for &v in masked_nodes {
        let prob = pv[(v, 0)].as_f64();
        if prob <= 0.0 {
            return Err(Error::NumericalUnderflow {
                node: v,
                log_prob: f64::NEG_INFINITY,
            });
        }
    }
    let baseline = if mean_reward_baseline {
        rewards.iter().sum::<f64>() / rewards.len() as f64
    } else {
        0.0
    };
    let adjusted: Vec<T> = rewards.iter().map(|&r| T::from_f64(r - baseline)).collect();

    let picked = tape.gather_rows(p, masked_nodes);
    let logp = tape.ln(picked);
    let reward_col = tape.constant(Mat::from_vec(adjusted.len(), 1, adjusted));
    let weighted = tape.mul(logp, reward_col);
    let total = tape.sum_all(weighted);
    Ok(tape.scale(total, T::from_f64(-1.0)))
}
