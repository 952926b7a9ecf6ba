//! Frozen-encoder evaluation: node embeddings, linear probing, pooled graph
//! readouts, and cross-validated max-margin graph classification.
//!
//! Nothing here backpropagates into the pretrained model: embeddings are
//! plain values, the probe and the classifier train their own parameters
//! only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::mat::Mat;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Transductive,
    Inductive,
}

/// Accuracy of repeated probe runs, in percent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub per_seed: Vec<f64>,
    pub protocol: Protocol,
}

/// Disjoint node-id (or graph-id) sets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn validate(&self, num_ids: usize) -> Result<()> {
        let mut seen = vec![false; num_ids];
        for &id in self.train.iter().chain(&self.val).chain(&self.test) {
            if id >= num_ids {
                return Err(Error::InvalidNodeId {
                    id,
                    num_nodes: num_ids,
                });
            }
            if seen[id] {
                return Err(Error::InvalidConfig(format!(
                    "split id {id} appears in more than one part"
                )));
            }
            seen[id] = true;
        }
        Ok(())
    }
}

/// Frozen-encoder node embeddings over the unmasked full graph.
pub fn embed_nodes<T: Scalar>(backbone: &Backbone<T>, graph: &Graph) -> Result<Mat<f64>> {
    graph.validate()?;
    let x: Mat<T> = graph.features().cast();
    let h = backbone.encode_values(graph.edges(), &x)?;
    Ok(h.cast())
}

#[derive(Debug, Clone, Copy)]
pub struct ProbeConfig {
    /// L2 penalty on the classifier weights.
    pub l2: f64,
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            l2: 1e-4,
            steps: 1000,
            learning_rate: 0.1,
        }
    }
}

/// Multinomial logistic classifier state for one probe run.
struct SoftmaxClassifier {
    // weights [d x c], bias [1 x c]
    w: Vec<f64>,
    b: Vec<f64>,
    dims: usize,
    classes: usize,
}

impl SoftmaxClassifier {
    fn init(dims: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut w = Vec::with_capacity(dims * classes);
        let bound = 1.0 / (dims.max(1) as f64).sqrt();
        for _ in 0..dims * classes {
            w.push((2.0 * rng.random::<f64>() - 1.0) * bound);
        }
        SoftmaxClassifier {
            w,
            b: vec![0.0; classes],
            dims,
            classes,
        }
    }

    fn logits(&self, row: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.b);
        for (j, &x) in row.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let wrow = &self.w[j * self.classes..(j + 1) * self.classes];
            for (o, &wv) in out.iter_mut().zip(wrow) {
                *o += x * wv;
            }
        }
    }

    fn predict(&self, row: &[f64]) -> usize {
        let mut logits = vec![0.0; self.classes];
        self.logits(row, &mut logits);
        argmax(&logits)
    }

    /// Full-batch gradient-descent training with cross-entropy + L2.
    fn fit(&mut self, h: &Mat<f64>, labels: &[usize], ids: &[usize], cfg: &ProbeConfig) {
        let n = ids.len() as f64;
        let mut logits = vec![0.0; self.classes];
        for _ in 0..cfg.steps {
            let mut gw = vec![0.0; self.w.len()];
            let mut gb = vec![0.0; self.classes];
            for &i in ids {
                let row = h.row(i);
                self.logits(row, &mut logits);
                softmax_in_place(&mut logits);
                logits[labels[i]] -= 1.0;
                for (j, &x) in row.iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    let grow = &mut gw[j * self.classes..(j + 1) * self.classes];
                    for (g, &p) in grow.iter_mut().zip(&logits) {
                        *g += x * p;
                    }
                }
                for (g, &p) in gb.iter_mut().zip(&logits) {
                    *g += p;
                }
            }
            for (w, g) in self.w.iter_mut().zip(&gw) {
                *w -= cfg.learning_rate * (g / n + cfg.l2 * *w);
            }
            for (b, g) in self.b.iter_mut().zip(&gb) {
                *b -= cfg.learning_rate * (g / n);
            }
        }
        let _ = self.dims;
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (values.len() as f64 - 1.0);
    var.sqrt()
}

/// Trains a linear classifier on frozen embeddings over the train split and
/// reports test accuracy (percent) per seed.
pub fn linear_probe(
    h: &Mat<f64>,
    labels: &[usize],
    split: &Split,
    cfg: &ProbeConfig,
    seeds: &[u64],
    protocol: Protocol,
) -> Result<ProbeResult> {
    if labels.len() != h.rows() {
        return Err(Error::shape("probe labels", h.rows(), labels.len()));
    }
    split.validate(h.rows())?;
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::InsufficientData {
            what: "split nodes",
            got: split.train.len().min(split.test.len()),
            need: 1,
        });
    }
    if seeds.is_empty() {
        return Err(Error::InsufficientData {
            what: "probe seeds",
            got: 0,
            need: 1,
        });
    }
    let first = labels[split.train[0]];
    if split.train.iter().all(|&i| labels[i] == first) {
        return Err(Error::DegenerateSplit { class: first });
    }
    let classes = labels.iter().max().unwrap() + 1;

    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut clf = SoftmaxClassifier::init(h.cols(), classes, &mut rng);
        clf.fit(h, labels, &split.train, cfg);
        let correct = split
            .test
            .iter()
            .filter(|&&i| clf.predict(h.row(i)) == labels[i])
            .count();
        per_seed.push(100.0 * correct as f64 / split.test.len() as f64);
    }
    let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
    let std = sample_std(&per_seed, mean);
    Ok(ProbeResult {
        accuracy_mean: mean,
        accuracy_std: std,
        per_seed,
        protocol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    Sum,
    Mean,
    Max,
}

/// Permutation-invariant pooling of node embeddings into one graph vector.
pub fn graph_readout(h: &Mat<f64>, mode: Readout) -> Result<Vec<f64>> {
    if h.rows() == 0 {
        return Err(Error::InsufficientData {
            what: "nodes to pool",
            got: 0,
            need: 1,
        });
    }
    let mut out = match mode {
        Readout::Max => vec![f64::NEG_INFINITY; h.cols()],
        _ => vec![0.0; h.cols()],
    };
    for i in 0..h.rows() {
        for (o, &x) in out.iter_mut().zip(h.row(i)) {
            match mode {
                Readout::Sum | Readout::Mean => *o += x,
                Readout::Max => *o = o.max(x),
            }
        }
    }
    if mode == Readout::Mean {
        let n = h.rows() as f64;
        for o in &mut out {
            *o /= n;
        }
    }
    Ok(out)
}

/// Accuracy of repeated cross-validation runs, in percent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvAccuracy {
    pub mean: f64,
    pub std: f64,
    pub per_rep: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct SvmConfig {
    pub l2: f64,
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            l2: 1e-3,
            steps: 500,
            learning_rate: 0.1,
        }
    }
}

const CV_FOLDS: usize = 10;

/// 10-fold cross-validated accuracy of a linear max-margin classifier on
/// graph vectors, repeated `reps` times with rotated fold assignments
/// (`fold(i, rep) = (i + rep) mod 10` over input order).
pub fn graph_classify(
    vectors: &[Vec<f64>],
    labels: &[usize],
    reps: usize,
    cfg: &SvmConfig,
) -> Result<CvAccuracy> {
    if vectors.len() != labels.len() {
        return Err(Error::shape("graph labels", vectors.len(), labels.len()));
    }
    if vectors.len() < CV_FOLDS {
        return Err(Error::InsufficientData {
            what: "graphs",
            got: vectors.len(),
            need: CV_FOLDS,
        });
    }
    if reps == 0 {
        return Err(Error::InsufficientData {
            what: "repetitions",
            got: 0,
            need: 1,
        });
    }
    let classes = labels.iter().max().unwrap() + 1;
    let dims = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dims) {
        return Err(Error::shape("graph vector width", dims, "mixed"));
    }

    let mut per_rep = Vec::with_capacity(reps);
    for rep in 0..reps {
        let mut correct = 0usize;
        for fold in 0..CV_FOLDS {
            let test: Vec<usize> = (0..vectors.len())
                .filter(|i| (i + rep) % CV_FOLDS == fold)
                .collect();
            if test.is_empty() {
                continue;
            }
            let train: Vec<usize> = (0..vectors.len())
                .filter(|i| (i + rep) % CV_FOLDS != fold)
                .collect();
            let svm = train_linear_svm(vectors, labels, &train, classes, dims, cfg);
            for &i in &test {
                if svm_predict(&svm, &vectors[i], classes) == labels[i] {
                    correct += 1;
                }
            }
        }
        per_rep.push(100.0 * correct as f64 / vectors.len() as f64);
    }
    let mean = per_rep.iter().sum::<f64>() / per_rep.len() as f64;
    let std = sample_std(&per_rep, mean);
    Ok(CvAccuracy {
        mean,
        std,
        per_rep,
    })
}

/// One-vs-rest linear SVM trained by full-batch subgradient descent on the
/// mean hinge loss plus L2. Deterministic: weights start at zero.
fn train_linear_svm(
    vectors: &[Vec<f64>],
    labels: &[usize],
    train: &[usize],
    classes: usize,
    dims: usize,
    cfg: &SvmConfig,
) -> Vec<Vec<f64>> {
    // One weight row per class, bias appended as the last entry.
    let mut w = vec![vec![0.0; dims + 1]; classes];
    let n = train.len() as f64;
    for step in 0..cfg.steps {
        let lr = cfg.learning_rate / (1.0 + 0.01 * step as f64);
        for (c, wc) in w.iter_mut().enumerate() {
            let mut grad = vec![0.0; dims + 1];
            for &i in train {
                let y = if labels[i] == c { 1.0 } else { -1.0 };
                let score: f64 =
                    wc[..dims].iter().zip(&vectors[i]).map(|(a, b)| a * b).sum::<f64>() + wc[dims];
                if y * score < 1.0 {
                    for (g, &x) in grad.iter_mut().zip(&vectors[i]) {
                        *g -= y * x;
                    }
                    grad[dims] -= y;
                }
            }
            for (k, g) in grad.iter().enumerate() {
                let reg = if k < dims { cfg.l2 * wc[k] } else { 0.0 };
                wc[k] -= lr * (g / n + reg);
            }
        }
    }
    w
}

fn svm_predict(w: &[Vec<f64>], x: &[f64], classes: usize) -> usize {
    let dims = x.len();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (c, wc) in w.iter().enumerate().take(classes) {
        let score: f64 = wc[..dims].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + wc[dims];
        if score > best_score {
            best_score = score;
            best = c;
        }
    }
    best
}
