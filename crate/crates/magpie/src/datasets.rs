//! Dataset loading, writing, conversion, and synthetic generation.
//!
//! Native on-disk format (plain text, canonical and auditable):
//! - `edges.tsv`: one edge per line, `src<TAB>dst`, ascii decimal ids,
//!   strictly sorted by `(src, dst)`; undirected graphs list each edge once
//!   with `src < dst` (self-loops allowed as `v<TAB>v`).
//! - `features.csv`: row `v` holds node `v`'s features, comma-separated
//!   `f32` decimals, no header.
//! - `labels.txt`: one integer class id per line.
//! - `split.txt`: three lines `train:`, `val:`, `test:`, each followed on
//!   the same line by comma-separated ids.
//!
//! Synthetic graphs come from a planted-partition (stochastic block) model.
//! All randomness is drawn from a seeded ChaCha stream as exact dyadic
//! uniforms; feature noise uses an Irwin–Hall(12) sum of uniforms rather
//! than a transcendental transform, so generation is bit-reproducible
//! across platforms.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Split;
use crate::graph::Graph;
use crate::mat::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Files,
    Synthetic,
}

/// Metadata describing where a dataset came from and how it splits.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub name: String,
    pub source: Source,
    pub num_nodes: usize,
    pub num_classes: Option<usize>,
    pub split: Option<Split>,
}

/// How node features are obtained at load time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    /// Read `features.csv`.
    FromFile,
    /// One-hot encode node degree, clamped to `max_degree`
    /// (`feature_dim = max_degree + 1`).
    DegreeOneHot { max_degree: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub directed: bool,
    pub features: FeatureSource,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            directed: false,
            features: FeatureSource::FromFile,
        }
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

fn parse_id(path: &Path, line: usize, token: &str) -> Result<usize> {
    token
        .parse::<usize>()
        .map_err(|_| Error::format(path.display(), line, format!("invalid id {token:?}")))
}

/// Loads a graph in the native format. `labels_path` and `split_path` are
/// optional; features may instead be synthesized from degrees.
pub fn load_graph_files(
    edges_path: &Path,
    features_path: Option<&Path>,
    labels_path: Option<&Path>,
    split_path: Option<&Path>,
    opts: &LoadOptions,
) -> Result<(Graph, DatasetSpec)> {
    // Edges first; the node count comes from features (or max id + 1 for
    // degree features).
    let mut pairs = Vec::new();
    for (i, line) in read_lines(edges_path)?.iter().enumerate() {
        let lineno = i + 1;
        if line.is_empty() {
            return Err(Error::format(edges_path.display(), lineno, "empty line"));
        }
        let mut parts = line.split('\t');
        let src = parse_id(edges_path, lineno, parts.next().unwrap_or(""))?;
        let dst = match parts.next() {
            Some(t) => parse_id(edges_path, lineno, t)?,
            None => {
                return Err(Error::format(
                    edges_path.display(),
                    lineno,
                    "expected src<TAB>dst",
                ))
            }
        };
        if parts.next().is_some() {
            return Err(Error::format(
                edges_path.display(),
                lineno,
                "trailing fields",
            ));
        }
        if !opts.directed && src > dst {
            return Err(Error::format(
                edges_path.display(),
                lineno,
                format!("undirected edge must satisfy src <= dst, got {src} > {dst}"),
            ));
        }
        if let Some(&(ps, pd)) = pairs.last() {
            if (ps, pd) >= (src, dst) {
                return Err(Error::format(
                    edges_path.display(),
                    lineno,
                    "edges must be strictly sorted by (src, dst)",
                ));
            }
        }
        pairs.push((src, dst));
    }

    let features = match (opts.features, features_path) {
        (FeatureSource::FromFile, Some(fp)) => {
            let lines = read_lines(fp)?;
            if lines.is_empty() {
                return Err(Error::format(fp.display(), 1, "no feature rows"));
            }
            let mut rows: Vec<Vec<f64>> = Vec::with_capacity(lines.len());
            let mut width = None;
            for (i, line) in lines.iter().enumerate() {
                let lineno = i + 1;
                let mut row = Vec::new();
                for tok in line.split(',') {
                    let v: f32 = tok.trim().parse().map_err(|_| {
                        Error::format(fp.display(), lineno, format!("invalid number {tok:?}"))
                    })?;
                    row.push(v as f64);
                }
                match width {
                    None => width = Some(row.len()),
                    Some(w) if w != row.len() => {
                        return Err(Error::format(
                            fp.display(),
                            lineno,
                            format!("expected {w} columns, got {}", row.len()),
                        ));
                    }
                    _ => {}
                }
                rows.push(row);
            }
            Mat::from_rows(&rows)
        }
        (FeatureSource::FromFile, None) => {
            return Err(Error::InvalidConfig(
                "feature file required unless degree features are selected".into(),
            ));
        }
        (FeatureSource::DegreeOneHot { max_degree }, _) => {
            let num_nodes = pairs
                .iter()
                .map(|&(s, d)| s.max(d) + 1)
                .max()
                .unwrap_or(0);
            let mut degree = vec![0usize; num_nodes];
            for &(s, d) in &pairs {
                if s == d {
                    degree[s] += 1;
                } else {
                    degree[s] += 1;
                    if !opts.directed {
                        degree[d] += 1;
                    }
                }
            }
            let dim = max_degree + 1;
            let mut m = Mat::zeros(num_nodes, dim);
            for (v, &deg) in degree.iter().enumerate() {
                m[(v, deg.min(max_degree))] = 1.0;
            }
            m
        }
    };

    let num_nodes = features.rows();
    let mut graph = if opts.directed {
        Graph::directed(num_nodes, pairs, features)?
    } else {
        Graph::undirected(num_nodes, pairs, features)?
    };

    let mut num_classes = None;
    if let Some(lp) = labels_path {
        let lines = read_lines(lp)?;
        if lines.len() != num_nodes {
            return Err(Error::format(
                lp.display(),
                lines.len() + 1,
                format!("expected {num_nodes} labels, got {}", lines.len()),
            ));
        }
        let mut labels = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            labels.push(parse_id(lp, i + 1, line.trim())?);
        }
        num_classes = Some(labels.iter().max().map_or(0, |m| m + 1));
        graph = graph.with_labels(labels)?;
    }

    let split = match split_path {
        Some(sp) => Some(load_split(sp, num_nodes)?),
        None => None,
    };

    let name = edges_path
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let spec = DatasetSpec {
        name,
        source: Source::Files,
        num_nodes,
        num_classes,
        split,
    };
    Ok((graph, spec))
}

pub fn load_split(path: &Path, num_nodes: usize) -> Result<Split> {
    let lines = read_lines(path)?;
    if lines.len() != 3 {
        return Err(Error::format(
            path.display(),
            lines.len().max(1),
            "split file must have exactly three lines: train:, val:, test:",
        ));
    }
    let mut parts = Vec::with_capacity(3);
    for (i, (line, prefix)) in lines.iter().zip(["train:", "val:", "test:"]).enumerate() {
        let lineno = i + 1;
        let rest = line.strip_prefix(prefix).ok_or_else(|| {
            Error::format(path.display(), lineno, format!("expected {prefix} prefix"))
        })?;
        let rest = rest.trim();
        let mut ids = Vec::new();
        if !rest.is_empty() {
            for tok in rest.split(',') {
                let id = parse_id(path, lineno, tok.trim())?;
                if id >= num_nodes {
                    return Err(Error::InvalidNodeId {
                        id,
                        num_nodes,
                    });
                }
                ids.push(id);
            }
        }
        parts.push(ids);
    }
    let split = Split {
        train: parts[0].clone(),
        val: parts[1].clone(),
        test: parts[2].clone(),
    };
    split.validate(num_nodes)?;
    Ok(split)
}

/// Writes a graph (and optional split) in canonical native form into `dir`.
/// Loading the result and writing it again is byte-identical.
pub fn write_graph_files(graph: &Graph, split: Option<&Split>, dir: &Path) -> Result<()> {
    graph.validate()?;
    fs::create_dir_all(dir)?;

    let mut edge_list: Vec<(usize, usize)> = if graph.is_undirected() {
        graph.undirected_pairs()
    } else {
        graph.edges().to_vec()
    };
    edge_list.sort_unstable();
    let mut edges_text = String::new();
    for (s, d) in edge_list {
        writeln!(edges_text, "{s}\t{d}").unwrap();
    }
    fs::write(dir.join("edges.tsv"), edges_text)?;

    let mut feat_text = String::new();
    for v in 0..graph.num_nodes() {
        let row: Vec<String> = graph
            .features()
            .row(v)
            .iter()
            .map(|&x| format!("{}", x as f32))
            .collect();
        writeln!(feat_text, "{}", row.join(",")).unwrap();
    }
    fs::write(dir.join("features.csv"), feat_text)?;

    if let Some(labels) = graph.labels() {
        let mut text = String::new();
        for &l in labels {
            writeln!(text, "{l}").unwrap();
        }
        fs::write(dir.join("labels.txt"), text)?;
    }

    if let Some(split) = split {
        fs::write(dir.join("split.txt"), split_text(split))?;
    }
    Ok(())
}

fn split_text(split: &Split) -> String {
    let join = |ids: &[usize]| {
        ids.iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    format!(
        "train: {}\nval: {}\ntest: {}\n",
        join(&split.train),
        join(&split.val),
        join(&split.test)
    )
}

/// Planted-partition generator parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SbmParams {
    pub blocks: usize,
    pub nodes_per_block: usize,
    /// Within-block edge probability.
    pub p_in: f64,
    /// Cross-block edge probability.
    pub p_out: f64,
    pub feature_dim: usize,
    /// Distance of each class mean from the origin along its own axis.
    pub class_mean_separation: f64,
    pub feature_noise_std: f64,
    pub seed: u64,
}

impl SbmParams {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.nodes_per_block == 0 || self.feature_dim == 0 {
            return Err(Error::InvalidConfig(
                "blocks, nodes_per_block, and feature_dim must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.p_out)
            || !(0.0..=1.0).contains(&self.p_in)
            || self.p_out > self.p_in
        {
            return Err(Error::InvalidConfig(
                "edge probabilities must satisfy 0 <= p_out <= p_in <= 1".into(),
            ));
        }
        if self.class_mean_separation < 0.0 || self.feature_noise_std < 0.0 {
            return Err(Error::InvalidConfig(
                "separation and noise must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Standard-normal-ish noise as a sum of 12 exact dyadic uniforms minus 6:
/// zero mean, unit variance, no transcendentals, bit-stable everywhere.
fn irwin_hall(rng: &mut ChaCha8Rng) -> f64 {
    let mut s = 0.0;
    for _ in 0..12 {
        s += rng.random::<f64>();
    }
    s - 6.0
}

/// Generates an undirected block-model graph with block labels. Edge pairs
/// are drawn in lexicographic order, then features node-major, so output is
/// a pure function of the parameters.
pub fn generate_sbm(params: &SbmParams) -> Result<Graph> {
    params.validate()?;
    let n = params.blocks * params.nodes_per_block;
    let block_of = |v: usize| v / params.nodes_per_block;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if block_of(i) == block_of(j) {
                params.p_in
            } else {
                params.p_out
            };
            if rng.random::<f64>() < p {
                pairs.push((i, j));
            }
        }
    }

    let mut features = Mat::zeros(n, params.feature_dim);
    for v in 0..n {
        let class = block_of(v);
        let axis = class % params.feature_dim;
        for d in 0..params.feature_dim {
            let mean = if d == axis {
                params.class_mean_separation
            } else {
                0.0
            };
            features[(v, d)] = mean + params.feature_noise_std * irwin_hall(&mut rng);
        }
    }

    let labels: Vec<usize> = (0..n).map(block_of).collect();
    Graph::undirected(n, pairs, features)?.with_labels(labels)
}

/// Converts the public citation-network distribution (a `*.content` file of
/// `id<TAB>features...<TAB>class` rows plus a `*.cites` file of
/// `cited<TAB>citing` rows) into a native graph.
///
/// Nodes are ordered by ascending numeric paper id; class names map to ids
/// in sorted order. The returned split is Planetoid-style on this ordering:
/// the first 20 nodes of each class form the train set, the next 500
/// remaining nodes the validation set, and the last 1000 the test set.
pub fn convert_citation_network(content_path: &Path, cites_path: &Path) -> Result<(Graph, Split)> {
    let content = read_lines(content_path)?;
    if content.is_empty() {
        return Err(Error::format(content_path.display(), 1, "empty content file"));
    }

    // Paper id -> (features, class name), ordered by numeric id.
    let mut by_id: BTreeMap<u64, (Vec<f64>, String)> = BTreeMap::new();
    let mut width = None;
    for (i, line) in content.iter().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(Error::format(
                content_path.display(),
                lineno,
                "expected id, features, class",
            ));
        }
        let id: u64 = fields[0].parse().map_err(|_| {
            Error::format(
                content_path.display(),
                lineno,
                format!("invalid paper id {:?}", fields[0]),
            )
        })?;
        let class = fields[fields.len() - 1].to_string();
        let feats: Vec<f64> = fields[1..fields.len() - 1]
            .iter()
            .map(|t| {
                t.parse::<f64>().map_err(|_| {
                    Error::format(
                        content_path.display(),
                        lineno,
                        format!("invalid feature {t:?}"),
                    )
                })
            })
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(feats.len()),
            Some(w) if w != feats.len() => {
                return Err(Error::format(
                    content_path.display(),
                    lineno,
                    format!("expected {w} features, got {}", feats.len()),
                ));
            }
            _ => {}
        }
        if by_id.insert(id, (feats, class)).is_some() {
            return Err(Error::format(
                content_path.display(),
                lineno,
                format!("duplicate paper id {id}"),
            ));
        }
    }

    let ids: Vec<u64> = by_id.keys().copied().collect();
    let index_of: BTreeMap<u64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut class_names: Vec<String> = by_id.values().map(|(_, c)| c.clone()).collect();
    class_names.sort();
    class_names.dedup();

    let rows: Vec<Vec<f64>> = by_id.values().map(|(f, _)| f.clone()).collect();
    let labels: Vec<usize> = by_id
        .values()
        .map(|(_, c)| class_names.binary_search(c).unwrap())
        .collect();

    let mut pair_set = std::collections::BTreeSet::new();
    for (i, line) in read_lines(cites_path)?.iter().enumerate() {
        let lineno = i + 1;
        let mut parts = line.split('\t');
        let a: u64 = parts
            .next()
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::format(cites_path.display(), lineno, "invalid cited id"))?;
        let b: u64 = parts
            .next()
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::format(cites_path.display(), lineno, "invalid citing id"))?;
        let (Some(&ia), Some(&ib)) = (index_of.get(&a), index_of.get(&b)) else {
            // Citations into papers outside the content file are dropped.
            continue;
        };
        if ia == ib {
            continue;
        }
        pair_set.insert((ia.min(ib), ia.max(ib)));
    }

    let graph = Graph::undirected(ids.len(), pair_set.into_iter().collect(), Mat::from_rows(&rows))?
        .with_labels(labels.clone())?;

    // Planetoid-style deterministic split on the converted ordering.
    let mut train = Vec::new();
    let mut picked = vec![false; ids.len()];
    for class in 0..class_names.len() {
        let mut taken = 0;
        for (v, &l) in labels.iter().enumerate() {
            if l == class && taken < 20 {
                train.push(v);
                picked[v] = true;
                taken += 1;
            }
        }
    }
    train.sort_unstable();
    let mut val = Vec::new();
    for v in 0..ids.len() {
        if !picked[v] && val.len() < 500 {
            val.push(v);
            picked[v] = true;
        }
    }
    let mut test = Vec::new();
    for v in (0..ids.len()).rev() {
        if !picked[v] && test.len() < 1000 {
            test.push(v);
            picked[v] = true;
        }
    }
    test.reverse();
    Ok((graph, Split { train, val, test }))
}
