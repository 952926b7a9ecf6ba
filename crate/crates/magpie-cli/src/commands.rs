//! Subcommand implementations.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use magpie::datasets::{convert_citation_network, generate_sbm, write_graph_files, SbmParams};
use magpie::eval::{embed_nodes, linear_probe, ProbeConfig, Protocol, Split};
use magpie::graph::Graph;
use magpie::trainer::{
    config_digest, metrics_csv_row, TrainConfig, TrainerState, METRICS_CSV_HEADER,
};

use crate::dataset::{resolve, ResolvedDataset};
use crate::manifest::{claim_out_dir, now_unix, write_manifest, RunManifest};
use crate::plot::{line_png, project_2d, scatter_png};
use crate::{CliError, CliResult, RunArgs};

fn load_config(path: &Path) -> CliResult<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| {
        CliError::Usage(format!("cannot read config {}: {e}", path.display()))
    })?;
    let cfg: TrainConfig = serde_json::from_str(&text).map_err(|e| {
        CliError::Usage(format!("invalid config {}: {e}", path.display()))
    })?;
    cfg.validate().map_err(CliError::usage)?;
    Ok(cfg)
}

fn effective_config(args: &RunArgs) -> CliResult<TrainConfig> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Atomic checkpoint write (temp + rename).
fn save_checkpoint(state: &TrainerState<f32>, path: &Path) -> CliResult<()> {
    let tmp = path.with_extension("bin.tmp");
    state.save(&tmp).map_err(CliError::runtime)?;
    fs::rename(&tmp, path).map_err(CliError::runtime)?;
    Ok(())
}

fn manifest_for(
    command: &str,
    args: Option<&RunArgs>,
    dataset: Option<&str>,
    out: &Path,
    started: u64,
    digest: Option<String>,
) -> RunManifest {
    RunManifest {
        command: command.into(),
        config_path: args.map(|a| a.config.display().to_string()),
        dataset: dataset.map(|d| d.to_string()),
        out_dir: out.display().to_string(),
        started_at_unix: started,
        finished_at_unix: now_unix(),
        config_digest: digest,
    }
}

pub fn pretrain(args: &RunArgs) -> CliResult<()> {
    let started = now_unix();
    let cfg = effective_config(args)?;
    let data = resolve(&args.dataset, args.directed, args.degree_features)?;
    claim_out_dir(&args.out, args.force)?;

    let mut state: TrainerState<f32> =
        TrainerState::new(cfg.clone(), data.graph.feature_dim()).map_err(CliError::usage)?;

    let metrics_path = args.out.join("metrics.csv");
    let mut metrics = fs::File::create(&metrics_path).map_err(CliError::runtime)?;
    writeln!(metrics, "{METRICS_CSV_HEADER}").map_err(CliError::runtime)?;

    let checkpoint_path = args.out.join("checkpoint.bin");
    let graphs = std::slice::from_ref(&data.graph);
    for epoch in 1..=cfg.epochs {
        let report = state.train_epoch(graphs).map_err(CliError::runtime)?;
        writeln!(metrics, "{}", metrics_csv_row(epoch, &report)).map_err(CliError::runtime)?;
        metrics.flush().map_err(CliError::runtime)?;
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            save_checkpoint(&state, &checkpoint_path)?;
        }
    }
    save_checkpoint(&state, &checkpoint_path)?;

    write_manifest(
        &args.out,
        &manifest_for(
            "pretrain",
            Some(args),
            Some(&data.name),
            &args.out,
            started,
            Some(config_digest(&cfg)),
        ),
    )?;
    println!(
        "pretrained {} epochs on {} -> {}",
        cfg.epochs,
        data.name,
        checkpoint_path.display()
    );
    Ok(())
}

fn probe_checkpoint(
    state: &TrainerState<f32>,
    data: &ResolvedDataset,
    seeds: &[u64],
) -> CliResult<magpie::eval::ProbeResult> {
    if state.feature_dim != data.graph.feature_dim() {
        return Err(CliError::Usage(format!(
            "checkpoint expects feature_dim {}, dataset {} has {}",
            state.feature_dim,
            data.name,
            data.graph.feature_dim()
        )));
    }
    let labels = data
        .graph
        .labels()
        .ok_or_else(|| CliError::usage(magpie::Error::MissingLabels))?;
    let h = embed_nodes(&state.backbone, &data.graph).map_err(CliError::runtime)?;
    linear_probe(
        &h,
        labels,
        &data.split,
        &ProbeConfig::default(),
        seeds,
        Protocol::Transductive,
    )
    .map_err(CliError::runtime)
}

fn write_probe_outputs(
    out: &Path,
    dataset: &str,
    result: &magpie::eval::ProbeResult,
) -> CliResult<()> {
    let mut csv = String::from("dataset,protocol,seed,accuracy\n");
    for (seed, acc) in result.per_seed.iter().enumerate() {
        csv.push_str(&format!("{dataset},transductive,{seed},{acc}\n"));
    }
    fs::write(out.join("probe.csv"), csv).map_err(CliError::runtime)?;
    let summary = serde_json::json!({
        "mean": result.accuracy_mean,
        "std": result.accuracy_std,
    });
    fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(CliError::runtime)?,
    )
    .map_err(CliError::runtime)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn probe(
    checkpoint: &Path,
    dataset: &str,
    out: &Path,
    seeds: u64,
    force: bool,
    directed: bool,
    degree_features: Option<usize>,
) -> CliResult<()> {
    let started = now_unix();
    let state = TrainerState::load(checkpoint).map_err(CliError::usage)?;
    let data = resolve(dataset, directed, degree_features)?;
    claim_out_dir(out, force)?;

    let seed_list: Vec<u64> = (0..seeds.max(1)).collect();
    let result = probe_checkpoint(&state, &data, &seed_list)?;
    write_probe_outputs(out, &data.name, &result)?;

    write_manifest(
        out,
        &manifest_for(
            "probe",
            None,
            Some(&data.name),
            out,
            started,
            Some(config_digest(&state.cfg)),
        ),
    )?;
    println!(
        "probe on {}: {:.2} +/- {:.2} over {} seeds",
        data.name,
        result.accuracy_mean,
        result.accuracy_std,
        seed_list.len()
    );
    Ok(())
}

/// Pretrains and probes once per seed, returning per-seed accuracies.
fn pretrain_probe_accuracies(
    cfg: &TrainConfig,
    graph: &Graph,
    split: &Split,
    runs: u64,
) -> CliResult<Vec<f64>> {
    let labels = graph
        .labels()
        .ok_or_else(|| CliError::usage(magpie::Error::MissingLabels))?;
    let mut accs = Vec::new();
    for i in 0..runs {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = cfg.seed + i;
        let (state, _) = magpie::trainer::pretrain::<f32>(std::slice::from_ref(graph), &run_cfg)
            .map_err(CliError::runtime)?;
        let h = embed_nodes(&state.backbone, graph).map_err(CliError::runtime)?;
        let r = linear_probe(
            &h,
            labels,
            split,
            &ProbeConfig::default(),
            &[run_cfg.seed],
            Protocol::Transductive,
        )
        .map_err(CliError::runtime)?;
        accs.push(r.accuracy_mean);
    }
    Ok(accs)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (values.len() as f64 - 1.0))
            .sqrt()
    } else {
        0.0
    };
    (mean, std)
}

const ABLATION_RUNS: u64 = 5;

pub fn ablate(args: &RunArgs, components: &[String]) -> CliResult<()> {
    let started = now_unix();
    let cfg = effective_config(args)?;
    let mut normalized: Vec<String> = components
        .iter()
        .filter(|c| !c.is_empty())
        .map(|c| c.to_uppercase())
        .collect();
    normalized.dedup();
    for c in &normalized {
        if !["AM", "SR", "BS", "CA"].contains(&c.as_str()) {
            return Err(CliError::Usage(format!(
                "unknown component {c:?}; valid: AM, SR, BS, CA"
            )));
        }
    }
    let data = resolve(&args.dataset, args.directed, args.degree_features)?;
    claim_out_dir(&args.out, args.force)?;

    let mut rows: Vec<(String, f64, f64)> = Vec::new();
    let full = pretrain_probe_accuracies(&cfg, &data.graph, &data.split, ABLATION_RUNS)?;
    let (fm, fs_) = mean_std(&full);
    rows.push(("full".into(), fm, fs_));

    for component in &normalized {
        let mut ablated = cfg.clone();
        match component.as_str() {
            "AM" => {
                ablated.adaptive_mask = false;
                ablated.loss_config.weights.sample = 0.0;
            }
            "SR" => ablated.loss_config.weights.sr = 0.0,
            "BS" => ablated.loss_config.weights.bs = 0.0,
            _ => ablated.loss_config.weights.ca = 0.0,
        }
        let accs = pretrain_probe_accuracies(&ablated, &data.graph, &data.split, ABLATION_RUNS)?;
        let (m, s) = mean_std(&accs);
        rows.push((format!("-{component}"), m, s));
    }

    let mut csv = String::from("variant,accuracy_mean,accuracy_std\n");
    println!("{:<8} {:>10} {:>8}", "variant", "mean", "std");
    for (name, mean, std) in &rows {
        csv.push_str(&format!("{name},{mean},{std}\n"));
        println!("{name:<8} {mean:>10.2} {std:>8.2}");
    }
    fs::write(args.out.join("ablation.csv"), csv).map_err(CliError::runtime)?;

    write_manifest(
        &args.out,
        &manifest_for(
            "ablate",
            Some(args),
            Some(&data.name),
            &args.out,
            started,
            Some(config_digest(&cfg)),
        ),
    )?;
    Ok(())
}

pub fn sweep(args: &RunArgs, param: &str, values: &[f64]) -> CliResult<()> {
    let started = now_unix();
    let cfg = effective_config(args)?;
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    // Every value is validated before any run starts.
    for &v in values {
        let ok = match param {
            "p_f" => v > 0.0 && v <= 1.0,
            "p_s" => (0.0..1.0).contains(&v),
            other => {
                return Err(CliError::Usage(format!(
                    "unknown sweep parameter {other:?}; valid: p_f, p_s"
                )))
            }
        };
        if !ok {
            return Err(CliError::Usage(format!(
                "value {v} is outside the valid range for {param}"
            )));
        }
    }
    let data = resolve(&args.dataset, args.directed, args.degree_features)?;
    claim_out_dir(&args.out, args.force)?;

    let mut means = Vec::new();
    let mut stds = Vec::new();
    for &v in values {
        let mut run_cfg = cfg.clone();
        match param {
            "p_f" => run_cfg.p_f = v,
            _ => run_cfg.p_s = v,
        }
        let accs = pretrain_probe_accuracies(&run_cfg, &data.graph, &data.split, ABLATION_RUNS)?;
        let (m, s) = mean_std(&accs);
        means.push(m);
        stds.push(s);
    }

    let mut csv = format!("{param},accuracy_mean,accuracy_std\n");
    for ((v, m), s) in values.iter().zip(&means).zip(&stds) {
        csv.push_str(&format!("{v},{m},{s}\n"));
    }
    fs::write(args.out.join("sweep.csv"), csv).map_err(CliError::runtime)?;
    line_png(values, &means, &stds, &args.out.join("sweep.png"))?;

    write_manifest(
        &args.out,
        &manifest_for(
            "sweep",
            Some(args),
            Some(&data.name),
            &args.out,
            started,
            Some(config_digest(&cfg)),
        ),
    )?;
    println!(
        "swept {param} over {values:?}: means {:?}",
        means
            .iter()
            .map(|m| (m * 100.0).round() / 100.0)
            .collect::<Vec<_>>()
    );
    Ok(())
}

pub fn plot_embeddings(
    checkpoint: &Path,
    dataset: &str,
    out: &Path,
    force: bool,
    directed: bool,
    degree_features: Option<usize>,
) -> CliResult<()> {
    let started = now_unix();
    let state = TrainerState::load(checkpoint).map_err(CliError::usage)?;
    let data = resolve(dataset, directed, degree_features)?;
    let labels = data
        .graph
        .labels()
        .ok_or_else(|| CliError::usage(magpie::Error::MissingLabels))?
        .to_vec();
    if state.feature_dim != data.graph.feature_dim() {
        return Err(CliError::Usage(format!(
            "checkpoint expects feature_dim {}, dataset has {}",
            state.feature_dim,
            data.graph.feature_dim()
        )));
    }
    claim_out_dir(out, force)?;

    let h = embed_nodes(&state.backbone, &data.graph).map_err(CliError::runtime)?;
    let points = project_2d(&h);

    let mut csv = String::from("node,x,y,class\n");
    for (v, ((x, y), class)) in points.iter().zip(&labels).enumerate() {
        csv.push_str(&format!("{v},{x},{y},{class}\n"));
    }
    fs::write(out.join("coordinates.csv"), csv).map_err(CliError::runtime)?;
    scatter_png(&points, &labels, &out.join("embeddings.png"))?;

    write_manifest(
        out,
        &manifest_for(
            "plot-embeddings",
            None,
            Some(&data.name),
            out,
            started,
            Some(config_digest(&state.cfg)),
        ),
    )?;
    println!(
        "wrote {} and {}",
        out.join("coordinates.csv").display(),
        out.join("embeddings.png").display()
    );
    Ok(())
}

pub fn gen_sbm(out: &Path, params: SbmParams, force: bool) -> CliResult<()> {
    let started = now_unix();
    params.validate().map_err(CliError::usage)?;
    claim_out_dir(out, force)?;
    let graph = generate_sbm(&params).map_err(CliError::runtime)?;
    let split = crate::dataset::default_split(graph.num_nodes());
    write_graph_files(&graph, Some(&split), out).map_err(CliError::runtime)?;
    write_manifest(
        out,
        &manifest_for("gen-sbm", None, Some("sbm"), out, started, None),
    )?;
    println!(
        "generated {} nodes / {} undirected edges into {}",
        graph.num_nodes(),
        graph.num_mask_units(),
        out.display()
    );
    Ok(())
}

pub fn convert_cora(content: &Path, cites: &Path, out: &Path, force: bool) -> CliResult<()> {
    let started = now_unix();
    let (graph, split) = convert_citation_network(content, cites).map_err(CliError::usage)?;
    claim_out_dir(out, force)?;
    write_graph_files(&graph, Some(&split), out).map_err(CliError::runtime)?;
    write_manifest(
        out,
        &manifest_for("convert-cora", None, None, out, started, None),
    )?;
    let classes = graph
        .labels()
        .map(|l| l.iter().max().map_or(0, |m| m + 1))
        .unwrap_or(0);
    println!(
        "converted {} nodes, {} undirected edges, {} classes into {}",
        graph.num_nodes(),
        graph.num_mask_units(),
        classes,
        out.display()
    );
    Ok(())
}
