//! Dataset resolution for the CLI: the built-in `sbm` fixture or a native
//! on-disk directory.

use std::path::{Path, PathBuf};

use magpie::datasets::{generate_sbm, load_graph_files, FeatureSource, LoadOptions, SbmParams};
use magpie::eval::Split;
use magpie::graph::Graph;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{CliError, CliResult};

/// Frozen synthetic fixture used by `--dataset sbm`.
pub fn sbm_fixture_params() -> SbmParams {
    SbmParams {
        blocks: 3,
        nodes_per_block: 100,
        p_in: 0.10,
        p_out: 0.01,
        feature_dim: 16,
        class_mean_separation: 1.0,
        feature_noise_std: 1.0,
        seed: 42,
    }
}

const SPLIT_SEED: u64 = 7;

/// Deterministic shuffled split used when a dataset ships no split file:
/// 10% train / 10% val / 80% test.
pub fn default_split(num_nodes: usize) -> Split {
    let mut ids: Vec<usize> = (0..num_nodes).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(SPLIT_SEED);
    ids.shuffle(&mut rng);
    let train_end = (num_nodes / 10).max(1);
    let val_end = train_end + (num_nodes / 10).max(1);
    Split {
        train: ids[..train_end].to_vec(),
        val: ids[train_end..val_end.min(num_nodes)].to_vec(),
        test: ids[val_end.min(num_nodes)..].to_vec(),
    }
}

pub struct ResolvedDataset {
    pub name: String,
    pub graph: Graph,
    pub split: Split,
}

/// Resolves `--dataset`: the name `sbm`, or a path to a directory holding
/// `edges.tsv` (+ optional `features.csv`, `labels.txt`, `split.txt`).
pub fn resolve(
    spec: &str,
    directed: bool,
    degree_features: Option<usize>,
) -> CliResult<ResolvedDataset> {
    if spec == "sbm" {
        let graph = generate_sbm(&sbm_fixture_params()).map_err(CliError::usage)?;
        let split = default_split(graph.num_nodes());
        return Ok(ResolvedDataset {
            name: "sbm".into(),
            graph,
            split,
        });
    }

    let dir = PathBuf::from(spec);
    if !dir.is_dir() {
        return Err(CliError::Usage(format!(
            "dataset {spec:?} is neither a built-in name (sbm) nor a directory"
        )));
    }
    let edges = dir.join("edges.tsv");
    if !edges.exists() {
        return Err(CliError::Usage(format!(
            "{} is missing edges.tsv",
            dir.display()
        )));
    }
    let features = dir.join("features.csv");
    let labels = dir.join("labels.txt");
    let split_file = dir.join("split.txt");

    let opts = LoadOptions {
        directed,
        features: match degree_features {
            Some(max_degree) => FeatureSource::DegreeOneHot { max_degree },
            None => FeatureSource::FromFile,
        },
    };
    let (graph, spec_meta) = load_graph_files(
        &edges,
        features.exists().then_some(features.as_path()),
        labels.exists().then_some(labels.as_path()),
        split_file.exists().then_some(split_file.as_path()),
        &opts,
    )
    .map_err(CliError::usage)?;

    let split = spec_meta
        .split
        .unwrap_or_else(|| default_split(graph.num_nodes()));
    Ok(ResolvedDataset {
        name: dataset_name(&dir),
        graph,
        split,
    })
}

fn dataset_name(dir: &Path) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}
