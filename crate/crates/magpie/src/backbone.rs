//! Encoder/decoder pair with learnable mask tokens and a shared projection
//! head.
//!
//! Four interchangeable layer types: attention aggregation (`gat`), sum
//! aggregation (`gin`), degree-normalized convolution (`gcn`), and a
//! feature-only transform (`mlp`). The encoder maps
//! `feature_dim -> hidden_dim` over `num_layers` layers; the decoder is a
//! single layer back to `feature_dim`. Attention uses `heads` heads in
//! hidden layers and one head at the output. Hidden layers are followed by
//! the configured activation; final layers are linear.
//!
//! All aggregating layers operate over the given arc list plus one implicit
//! self-loop per node (only added where the input has none).

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::params::{uniform_fan_in, BoundParams, ParamSet};
use crate::tape::{MapKind, NodeId, Tape};
use crate::Scalar;

pub const FEATURE_MASK_TOKEN: &str = "token.feature_mask";
pub const REMASK_TOKEN: &str = "token.remask";

/// Negative-side slope of the attention logit nonlinearity.
const ATTENTION_LEAK: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Gat,
    Gin,
    Gcn,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Elu,
    Tanh,
}

impl Activation {
    fn map_kind(self) -> MapKind {
        match self {
            Activation::Relu => MapKind::Relu,
            Activation::Elu => MapKind::Elu,
            Activation::Tanh => MapKind::Tanh,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BackboneConfig {
    pub arch: Arch,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    /// Encoder depth; the decoder is always a single layer.
    pub num_layers: usize,
    /// Attention heads in hidden layers (output layers use one head).
    pub heads: usize,
    pub activation: Activation,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidConfig(
                "feature_dim and hidden_dim must be >= 1".into(),
            ));
        }
        if self.num_layers == 0 {
            return Err(Error::InvalidConfig("num_layers must be >= 1".into()));
        }
        if self.heads == 0 {
            return Err(Error::InvalidConfig("heads must be >= 1".into()));
        }
        if self.arch == Arch::Gat && self.num_layers >= 2 && self.hidden_dim % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "hidden_dim {} must be divisible by heads {} for attention layers",
                self.hidden_dim, self.heads
            )));
        }
        Ok(())
    }

    fn encoder_layers(&self) -> Vec<LayerDims> {
        (0..self.num_layers)
            .map(|l| {
                let last = l + 1 == self.num_layers;
                LayerDims {
                    in_dim: if l == 0 { self.feature_dim } else { self.hidden_dim },
                    out_dim: self.hidden_dim,
                    heads: if last { 1 } else { self.heads },
                }
            })
            .collect()
    }

    fn decoder_layers(&self) -> Vec<LayerDims> {
        vec![LayerDims {
            in_dim: self.hidden_dim,
            out_dim: self.feature_dim,
            heads: 1,
        }]
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerDims {
    in_dim: usize,
    out_dim: usize,
    heads: usize,
}

/// Parameterized encoder/decoder with mask tokens and projection head.
#[derive(Debug, Clone)]
pub struct Backbone<T> {
    pub cfg: BackboneConfig,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Backbone<T> {
    pub fn init(cfg: BackboneConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        init_stack(&mut params, &cfg, "enc", &cfg.encoder_layers(), rng);
        init_stack(&mut params, &cfg, "dec", &cfg.decoder_layers(), rng);
        // Tokens start small but nonzero: exactly-zero rows would pin every
        // masked-masked attention logit onto the LeakyReLU kink.
        params.insert(
            FEATURE_MASK_TOKEN,
            uniform_fan_in(rng, cfg.feature_dim, 1, cfg.feature_dim),
        );
        params.insert(
            REMASK_TOKEN,
            uniform_fan_in(rng, cfg.hidden_dim, 1, cfg.hidden_dim),
        );
        let h = cfg.hidden_dim;
        params.insert("proj.w1", uniform_fan_in(rng, h, h, h));
        params.insert("proj.b1", Mat::zeros(1, h));
        params.insert("proj.w2", uniform_fan_in(rng, h, h, h));
        params.insert("proj.b2", Mat::zeros(1, h));
        Ok(Backbone { cfg, params })
    }

    pub fn bind(&self, tape: &mut Tape<T>, tracked: bool) -> BoundParams {
        self.params.bind(tape, tracked)
    }

    /// Encoder and decoder parameters, the subset the momentum shadow tracks.
    pub fn codec_params(&self) -> ParamSet<T> {
        let mut out = self.params.subset("enc.");
        for (name, value) in self.params.subset("dec.").iter() {
            out.insert(name, value.clone());
        }
        out
    }

    pub fn encode(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        edges: &[(usize, usize)],
        x: NodeId,
    ) -> Result<NodeId> {
        encode_with(&self.cfg, bound, tape, edges, x)
    }

    pub fn decode(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        edges: &[(usize, usize)],
        h: NodeId,
    ) -> Result<NodeId> {
        decode_with(&self.cfg, bound, tape, edges, h)
    }

    pub fn project(&self, tape: &mut Tape<T>, bound: &BoundParams, h: NodeId) -> Result<NodeId> {
        project_with(&self.cfg, bound, tape, h)
    }

    /// Plain (value-level) encoder forward on a scratch tape.
    pub fn encode_values(&self, edges: &[(usize, usize)], x: &Mat<T>) -> Result<Mat<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xn = tape.constant(x.clone());
        let h = self.encode(&mut tape, &bound, edges, xn)?;
        Ok(tape.value(h).clone())
    }
}

/// Replaces the rows of `h` at `masked_nodes` with the re-mask token.
/// Gradients reach the token only from the replaced rows.
pub fn remask<T: Scalar>(
    tape: &mut Tape<T>,
    h: NodeId,
    masked_nodes: &[usize],
    token: NodeId,
) -> Result<NodeId> {
    let (tr, tc) = tape.shape(token);
    if tr != 1 || tc != tape.shape(h).1 {
        return Err(Error::shape(
            "remask token",
            format!("1x{}", tape.shape(h).1),
            format!("{tr}x{tc}"),
        ));
    }
    if let Some(&max) = masked_nodes.iter().max() {
        if max >= tape.shape(h).0 {
            return Err(Error::InvalidNodeId {
                id: max,
                num_nodes: tape.shape(h).0,
            });
        }
    }
    Ok(tape.replace_rows(h, token, masked_nodes))
}

/// Encoder forward against an explicit parameter binding (live or shadow).
pub fn encode_with<T: Scalar>(
    cfg: &BackboneConfig,
    bound: &BoundParams,
    tape: &mut Tape<T>,
    edges: &[(usize, usize)],
    x: NodeId,
) -> Result<NodeId> {
    let (n, d) = tape.shape(x);
    if d != cfg.feature_dim {
        return Err(Error::shape("encoder input width", cfg.feature_dim, d));
    }
    check_edges(edges, n)?;
    run_stack(cfg, bound, tape, edges, x, "enc", &cfg.encoder_layers())
}

/// Decoder forward against an explicit parameter binding.
pub fn decode_with<T: Scalar>(
    cfg: &BackboneConfig,
    bound: &BoundParams,
    tape: &mut Tape<T>,
    edges: &[(usize, usize)],
    h: NodeId,
) -> Result<NodeId> {
    let (n, d) = tape.shape(h);
    if d != cfg.hidden_dim {
        return Err(Error::shape("decoder input width", cfg.hidden_dim, d));
    }
    check_edges(edges, n)?;
    run_stack(cfg, bound, tape, edges, h, "dec", &cfg.decoder_layers())
}

/// Two-layer projection head, shared between both branches.
pub fn project_with<T: Scalar>(
    cfg: &BackboneConfig,
    bound: &BoundParams,
    tape: &mut Tape<T>,
    h: NodeId,
) -> Result<NodeId> {
    let (_, d) = tape.shape(h);
    if d != cfg.hidden_dim {
        return Err(Error::shape("projection input width", cfg.hidden_dim, d));
    }
    let p = tape.matmul(h, bound.node("proj.w1"));
    let p = tape.add_row(p, bound.node("proj.b1"));
    let p = tape.map(p, cfg.activation.map_kind());
    let p = tape.matmul(p, bound.node("proj.w2"));
    Ok(tape.add_row(p, bound.node("proj.b2")))
}

fn check_edges(edges: &[(usize, usize)], num_nodes: usize) -> Result<()> {
    for &(src, dst) in edges {
        if src >= num_nodes || dst >= num_nodes {
            return Err(Error::InvalidEdge {
                src,
                dst,
                num_nodes,
            });
        }
    }
    Ok(())
}

fn init_stack<T: Scalar>(
    params: &mut ParamSet<T>,
    cfg: &BackboneConfig,
    prefix: &str,
    layers: &[LayerDims],
    rng: &mut ChaCha8Rng,
) {
    for (l, dims) in layers.iter().enumerate() {
        let base = format!("{prefix}.l{l}");
        match cfg.arch {
            Arch::Gat => {
                let head_dim = dims.out_dim / dims.heads;
                for h in 0..dims.heads {
                    params.insert(
                        format!("{base}.h{h}.w"),
                        uniform_fan_in(rng, dims.in_dim, dims.in_dim, head_dim),
                    );
                    params.insert(
                        format!("{base}.h{h}.a_src"),
                        uniform_fan_in(rng, head_dim, head_dim, 1),
                    );
                    params.insert(
                        format!("{base}.h{h}.a_dst"),
                        uniform_fan_in(rng, head_dim, head_dim, 1),
                    );
                }
                params.insert(format!("{base}.b"), Mat::zeros(1, dims.out_dim));
            }
            Arch::Gin => {
                params.insert(
                    format!("{base}.w1"),
                    uniform_fan_in(rng, dims.in_dim, dims.in_dim, dims.out_dim),
                );
                params.insert(format!("{base}.b1"), Mat::zeros(1, dims.out_dim));
                params.insert(
                    format!("{base}.w2"),
                    uniform_fan_in(rng, dims.out_dim, dims.out_dim, dims.out_dim),
                );
                params.insert(format!("{base}.b2"), Mat::zeros(1, dims.out_dim));
            }
            Arch::Gcn | Arch::Mlp => {
                params.insert(
                    format!("{base}.w"),
                    uniform_fan_in(rng, dims.in_dim, dims.in_dim, dims.out_dim),
                );
                params.insert(format!("{base}.b"), Mat::zeros(1, dims.out_dim));
            }
        }
    }
}

fn run_stack<T: Scalar>(
    cfg: &BackboneConfig,
    bound: &BoundParams,
    tape: &mut Tape<T>,
    edges: &[(usize, usize)],
    input: NodeId,
    prefix: &str,
    layers: &[LayerDims],
) -> Result<NodeId> {
    let n = tape.shape(input).0;
    let aggregation = match cfg.arch {
        Arch::Mlp => None,
        _ => Some(self_augmented(edges, n)),
    };

    let mut x = input;
    for (l, dims) in layers.iter().enumerate() {
        let base = format!("{prefix}.l{l}");
        x = match cfg.arch {
            Arch::Mlp => {
                let w = tape.matmul(x, bound.node(&format!("{base}.w")));
                tape.add_row(w, bound.node(&format!("{base}.b")))
            }
            Arch::Gcn => {
                let arcs = aggregation.as_ref().unwrap();
                let weights = gcn_weights::<T>(arcs, n);
                let xw = tape.matmul(x, bound.node(&format!("{base}.w")));
                let agg = tape.neighbor_sum(xw, arcs, &weights, n);
                tape.add_row(agg, bound.node(&format!("{base}.b")))
            }
            Arch::Gin => {
                let arcs = aggregation.as_ref().unwrap();
                let ones = vec![T::one(); arcs.len()];
                let agg = tape.neighbor_sum(x, arcs, &ones, n);
                let t = tape.matmul(agg, bound.node(&format!("{base}.w1")));
                let t = tape.add_row(t, bound.node(&format!("{base}.b1")));
                let t = tape.map(t, cfg.activation.map_kind());
                let t = tape.matmul(t, bound.node(&format!("{base}.w2")));
                tape.add_row(t, bound.node(&format!("{base}.b2")))
            }
            Arch::Gat => {
                let arcs = aggregation.as_ref().unwrap();
                let dsts: Vec<usize> = arcs.iter().map(|&(_, d)| d).collect();
                let srcs: Vec<usize> = arcs.iter().map(|&(s, _)| s).collect();
                let mut head_outputs = Vec::with_capacity(dims.heads);
                for h in 0..dims.heads {
                    let hb = format!("{base}.h{h}");
                    let xw = tape.matmul(x, bound.node(&format!("{hb}.w")));
                    let u = tape.matmul(xw, bound.node(&format!("{hb}.a_src")));
                    let v = tape.matmul(xw, bound.node(&format!("{hb}.a_dst")));
                    let us = tape.gather_rows(u, &srcs);
                    let vs = tape.gather_rows(v, &dsts);
                    let logits = tape.add(us, vs);
                    let logits = tape.map(logits, MapKind::LeakyRelu(ATTENTION_LEAK));
                    let alpha = tape.edge_softmax(logits, &dsts, n);
                    head_outputs.push(tape.weighted_neighbor_sum(alpha, xw, arcs, n));
                }
                let merged = if head_outputs.len() == 1 {
                    head_outputs[0]
                } else {
                    tape.concat_cols(&head_outputs)
                };
                tape.add_row(merged, bound.node(&format!("{base}.b")))
            }
        };
        if l + 1 < layers.len() {
            x = tape.map(x, cfg.activation.map_kind());
        }
    }
    Ok(x)
}

/// Arc list with one self-loop per node, added only where missing.
fn self_augmented(edges: &[(usize, usize)], num_nodes: usize) -> Vec<(usize, usize)> {
    let mut has_self = vec![false; num_nodes];
    for &(src, dst) in edges {
        if src == dst {
            has_self[src] = true;
        }
    }
    let mut arcs = edges.to_vec();
    for (v, &present) in has_self.iter().enumerate() {
        if !present {
            arcs.push((v, v));
        }
    }
    arcs
}

/// Symmetric degree normalization over the self-augmented arc list.
fn gcn_weights<T: Scalar>(arcs: &[(usize, usize)], num_nodes: usize) -> Vec<T> {
    let mut deg = vec![0usize; num_nodes];
    for &(_, dst) in arcs {
        deg[dst] += 1;
    }
    let inv_sqrt: Vec<f64> = deg
        .iter()
        .map(|&d| 1.0 / (d.max(1) as f64).sqrt())
        .collect();
    arcs.iter()
        .map(|&(src, dst)| T::from_f64(inv_sqrt[src] * inv_sqrt[dst]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn cfg(arch: Arch) -> BackboneConfig {
        BackboneConfig {
            arch,
            feature_dim: 5,
            hidden_dim: 8,
            num_layers: 2,
            heads: 4,
            activation: Activation::Elu,
        }
    }

    fn all_archs() -> [Arch; 4] {
        [Arch::Gat, Arch::Gin, Arch::Gcn, Arch::Mlp]
    }

    fn rand_mat(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        uniform_fan_in(&mut rng, 1, rows, cols)
    }

    #[test]
    fn encode_shape_single_node_no_edges() {
        for arch in all_archs() {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let b: Backbone<f64> = Backbone::init(cfg(arch), &mut rng).unwrap();
            let h = b.encode_values(&[], &Mat::zeros(1, 5)).unwrap();
            assert_eq!(h.shape(), (1, 8), "{arch:?}");
        }
    }

    #[test]
    fn decode_shape_single_node_no_edges() {
        for arch in all_archs() {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let b: Backbone<f64> = Backbone::init(cfg(arch), &mut rng).unwrap();
            let mut tape = Tape::new();
            let bound = b.bind(&mut tape, false);
            let h = tape.constant(Mat::zeros(1, 8));
            let z = b.decode(&mut tape, &bound, &[], h).unwrap();
            assert_eq!(tape.shape(z), (1, 5), "{arch:?}");
        }
    }

    #[test]
    fn encode_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b: Backbone<f64> = Backbone::init(cfg(Arch::Gat), &mut rng).unwrap();
        let edges = [(0, 1), (1, 0), (1, 2), (2, 1)];
        let x = rand_mat(3, 5, 9);
        let h1 = b.encode_values(&edges, &x).unwrap();
        let h2 = b.encode_values(&edges, &x).unwrap();
        assert_eq!(h1, h2);
    }

    #[test]
    fn encoder_input_width_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b: Backbone<f64> = Backbone::init(cfg(Arch::Gin), &mut rng).unwrap();
        let err = b.encode_values(&[], &Mat::zeros(2, 4)).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn identity_mlp_decoder_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut b: Backbone<f64> = Backbone::init(
            BackboneConfig {
                arch: Arch::Mlp,
                feature_dim: 6,
                hidden_dim: 6,
                num_layers: 1,
                heads: 1,
                activation: Activation::Relu,
            },
            &mut rng,
        )
        .unwrap();
        *b.params.get_mut("dec.l0.w").unwrap() = Mat::identity(6);
        let mut tape = Tape::new();
        let bound = b.bind(&mut tape, false);
        let h = tape.constant(rand_mat(4, 6, 11));
        let z = b.decode(&mut tape, &bound, &[], h).unwrap();
        assert_eq!(tape.value(z), tape.value(h));
    }

    #[test]
    fn remask_examples_and_token_gradient() {
        let mut tape: Tape<f64> = Tape::new();
        let h = tape.leaf(rand_mat(3, 2, 21));
        let token = tape.leaf(Mat::from_vec(1, 2, vec![5.0, -5.0]));

        let untouched = remask(&mut tape, h, &[], token).unwrap();
        assert_eq!(tape.value(untouched), tape.value(h));

        let all = remask(&mut tape, h, &[0, 1, 2], token).unwrap();
        for i in 0..3 {
            assert_eq!(tape.value(all).row(i), &[5.0, -5.0]);
        }

        let partial = remask(&mut tape, h, &[0, 2], token).unwrap();
        assert_eq!(tape.value(partial).row(1), tape.value(h).row(1));
        assert_eq!(tape.value(partial).row(0), &[5.0, -5.0]);

        let s = tape.sum_all(partial);
        let grads = tape.backward(s);
        // Two replaced rows, each contributing a gradient of one per entry.
        assert_eq!(grads.get(token).unwrap().data(), &[2.0, 2.0]);
        // Unmasked row of h still gets gradient; masked rows do not.
        assert_eq!(grads.get(h).unwrap().row(1), &[1.0, 1.0]);
        assert_eq!(grads.get(h).unwrap().row(0), &[0.0, 0.0]);
    }

    #[test]
    fn remask_token_width_checked() {
        let mut tape: Tape<f64> = Tape::new();
        let h = tape.leaf(Mat::zeros(2, 3));
        let token = tape.leaf(Mat::zeros(1, 2));
        assert!(matches!(
            remask(&mut tape, h, &[0], token),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn projection_of_zero_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let b: Backbone<f64> = Backbone::init(cfg(Arch::Gat), &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = b.bind(&mut tape, false);
        let h = tape.constant(Mat::zeros(3, 8));
        let p = b.project(&mut tape, &bound, h).unwrap();
        assert!(tape.value(p).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_projection_parameter_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b: Backbone<f64> = Backbone::init(cfg(Arch::Gin), &mut rng).unwrap();
        let proj_names: Vec<&str> = b
            .params
            .iter()
            .filter(|(n, _)| n.starts_with("proj."))
            .map(|(n, _)| n)
            .collect();
        assert_eq!(proj_names, vec!["proj.w1", "proj.b1", "proj.w2", "proj.b2"]);
    }

    #[test]
    fn permutation_equivariance_on_random_graphs() {
        use crate::graph::Graph;
        for arch in all_archs() {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let b: Backbone<f64> = Backbone::init(cfg(arch), &mut rng).unwrap();
            let pairs = vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)];
            let g = Graph::undirected(6, pairs, rand_mat(6, 5, 31)).unwrap();
            let perm = vec![3, 0, 5, 1, 4, 2];
            let pg = g.relabeled(&perm).unwrap();

            let h: Mat<f64> = b
                .encode_values(g.edges(), &g.features().cast())
                .unwrap();
            let hp: Mat<f64> = b
                .encode_values(pg.edges(), &pg.features().cast())
                .unwrap();
            for v in 0..6 {
                for j in 0..8 {
                    let a = h[(v, j)];
                    let bb = hp[(perm[v], j)];
                    assert!(
                        (a - bb).abs() < 1e-9,
                        "{arch:?}: node {v} dim {j}: {a} vs {bb}"
                    );
                }
            }
        }
    }
}
