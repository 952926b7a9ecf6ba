//! Graph data model and masking transforms.
//!
//! Edges are stored as directed arcs. An undirected graph stores each edge
//! as two arcs that share one *mask unit*, so a structure-mask decision
//! always hides or keeps both directions together. Self-loops are allowed
//! but are never assigned a mask unit, so they can never be masked.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::mat::Mat;

#[derive(Debug, Clone)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    /// Mask unit per arc; `None` for self-loops.
    arc_unit: Vec<Option<usize>>,
    /// Arc indices belonging to each mask unit.
    unit_arcs: Vec<Vec<usize>>,
    undirected: bool,
    features: Mat<f64>,
    labels: Option<Vec<usize>>,
}

impl Graph {
    /// Graph with directed arcs; every non-self arc is its own mask unit.
    pub fn directed(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        features: Mat<f64>,
    ) -> Result<Self> {
        let mut arc_unit = Vec::with_capacity(edges.len());
        let mut unit_arcs = Vec::new();
        for (i, &(src, dst)) in edges.iter().enumerate() {
            if src == dst {
                arc_unit.push(None);
            } else {
                arc_unit.push(Some(unit_arcs.len()));
                unit_arcs.push(vec![i]);
            }
        }
        let g = Graph {
            num_nodes,
            edges,
            arc_unit,
            unit_arcs,
            undirected: false,
            features,
            labels: None,
        };
        g.validate()?;
        Ok(g)
    }

    /// Undirected graph: each pair `(u, v)` with `u != v` becomes the arcs
    /// `(u, v)` and `(v, u)` sharing one mask unit; a self pair becomes a
    /// single unmaskable arc.
    pub fn undirected(
        num_nodes: usize,
        pairs: Vec<(usize, usize)>,
        features: Mat<f64>,
    ) -> Result<Self> {
        let mut edges = Vec::with_capacity(pairs.len() * 2);
        let mut arc_unit = Vec::with_capacity(pairs.len() * 2);
        let mut unit_arcs = Vec::new();
        for &(u, v) in &pairs {
            if u == v {
                edges.push((u, u));
                arc_unit.push(None);
            } else {
                let unit = unit_arcs.len();
                unit_arcs.push(vec![edges.len(), edges.len() + 1]);
                edges.push((u, v));
                arc_unit.push(Some(unit));
                edges.push((v, u));
                arc_unit.push(Some(unit));
            }
        }
        let g = Graph {
            num_nodes,
            edges,
            arc_unit,
            unit_arcs,
            undirected: true,
            features,
            labels: None,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.num_nodes {
            return Err(Error::shape("label count", self.num_nodes, labels.len()));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Checks every structural invariant; returns `Ok` on an intact graph.
    pub fn validate(&self) -> Result<()> {
        if self.features.rows() != self.num_nodes {
            return Err(Error::shape(
                "feature rows",
                self.num_nodes,
                self.features.rows(),
            ));
        }
        if self.features.cols() == 0 {
            return Err(Error::shape("feature dim", ">= 1", 0));
        }
        let mut seen = BTreeSet::new();
        for &(src, dst) in &self.edges {
            if src >= self.num_nodes || dst >= self.num_nodes {
                return Err(Error::InvalidEdge {
                    src,
                    dst,
                    num_nodes: self.num_nodes,
                });
            }
            if !seen.insert((src, dst)) {
                return Err(Error::DuplicateEdge { src, dst });
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.num_nodes {
                return Err(Error::shape("label count", self.num_nodes, labels.len()));
            }
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Stored arcs, in storage order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_undirected(&self) -> bool {
        self.undirected
    }

    pub fn features(&self) -> &Mat<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Number of independently maskable structure units (undirected edges
    /// count once; self-loops are excluded).
    pub fn num_mask_units(&self) -> usize {
        self.unit_arcs.len()
    }

    /// Arc indices covered by one mask unit.
    pub fn unit_arcs(&self, unit: usize) -> &[usize] {
        &self.unit_arcs[unit]
    }

    /// Undirected pairs `(u, v)` with `u < v`, one per mask unit, plus
    /// self-loops. Only meaningful for undirected graphs.
    pub fn undirected_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for arcs in &self.unit_arcs {
            let (u, v) = self.edges[arcs[0]];
            out.push((u.min(v), u.max(v)));
        }
        for (i, &(u, v)) in self.edges.iter().enumerate() {
            if self.arc_unit[i].is_none() && u == v {
                out.push((u, v));
            }
        }
        out
    }

    /// Feature matrix with the rows in `plan.masked_nodes` replaced by
    /// `mask_token`. The graph itself is untouched.
    pub fn apply_feature_mask(&self, plan: &MaskPlan, mask_token: &[f64]) -> Result<Mat<f64>> {
        if mask_token.len() != self.feature_dim() {
            return Err(Error::shape(
                "mask token length",
                self.feature_dim(),
                mask_token.len(),
            ));
        }
        let mut out = self.features.clone();
        for &v in &plan.masked_nodes {
            if v >= self.num_nodes {
                return Err(Error::InvalidNodeId {
                    id: v,
                    num_nodes: self.num_nodes,
                });
            }
            out.row_mut(v).copy_from_slice(mask_token);
        }
        Ok(out)
    }

    /// Visible arcs after structure masking, preserving storage order.
    pub fn apply_structure_mask(&self, plan: &MaskPlan) -> Vec<(usize, usize)> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(i, _)| !plan.masked_edges.contains(i))
            .map(|(_, &e)| e)
            .collect()
    }

    /// Consistently relabeled copy: node `v` becomes `perm[v]`. Useful for
    /// permutation-equivariance checks.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.num_nodes {
            return Err(Error::shape("permutation length", self.num_nodes, perm.len()));
        }
        let edges = self
            .edges
            .iter()
            .map(|&(s, d)| (perm[s], perm[d]))
            .collect();
        let mut features = Mat::zeros(self.num_nodes, self.feature_dim());
        for v in 0..self.num_nodes {
            features.row_mut(perm[v]).copy_from_slice(self.features.row(v));
        }
        let labels = self.labels.as_ref().map(|l| {
            let mut out = vec![0usize; l.len()];
            for v in 0..l.len() {
                out[perm[v]] = l[v];
            }
            out
        });
        let g = Graph {
            num_nodes: self.num_nodes,
            edges,
            arc_unit: self.arc_unit.clone(),
            unit_arcs: self.unit_arcs.clone(),
            undirected: self.undirected,
            features,
            labels,
        };
        g.validate()?;
        Ok(g)
    }
}

/// Which nodes and arcs one training step hides.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    masked_nodes: Vec<usize>,
    masked_edges: BTreeSet<usize>,
    pub p_f: f64,
    pub p_s: f64,
}

impl MaskPlan {
    /// Builds a plan against a graph. Node and arc indices are validated;
    /// arc masking is closed over mask units, so masking one direction of an
    /// undirected edge always masks the other.
    pub fn new(
        graph: &Graph,
        masked_nodes: Vec<usize>,
        masked_edges: BTreeSet<usize>,
        p_f: f64,
        p_s: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_f) {
            return Err(Error::InvalidRate {
                what: "feature mask rate",
                value: p_f,
                range: "[0, 1]",
            });
        }
        if !(0.0..=1.0).contains(&p_s) {
            return Err(Error::InvalidRate {
                what: "structure mask rate",
                value: p_s,
                range: "[0, 1]",
            });
        }
        let mut nodes = masked_nodes;
        nodes.sort_unstable();
        nodes.dedup();
        if let Some(&max) = nodes.last() {
            if max >= graph.num_nodes() {
                return Err(Error::InvalidNodeId {
                    id: max,
                    num_nodes: graph.num_nodes(),
                });
            }
        }
        let mut closed = BTreeSet::new();
        for &arc in &masked_edges {
            if arc >= graph.num_edges() {
                return Err(Error::InvalidEdge {
                    src: arc,
                    dst: arc,
                    num_nodes: graph.num_edges(),
                });
            }
            match graph.arc_unit[arc] {
                Some(unit) => {
                    for &a in graph.unit_arcs(unit) {
                        closed.insert(a);
                    }
                }
                // Self-loops are never masked.
                None => {}
            }
        }
        Ok(MaskPlan {
            masked_nodes: nodes,
            masked_edges: closed,
            p_f,
            p_s,
        })
    }

    pub fn empty() -> Self {
        MaskPlan {
            masked_nodes: Vec::new(),
            masked_edges: BTreeSet::new(),
            p_f: 0.0,
            p_s: 0.0,
        }
    }

    /// Sorted masked node ids.
    pub fn masked_nodes(&self) -> &[usize] {
        &self.masked_nodes
    }

    /// Masked arc indices.
    pub fn masked_edges(&self) -> &BTreeSet<usize> {
        &self.masked_edges
    }
}

/// Number of nodes to mask for a given rate: `floor(n * p_f)`, at least 1
/// whenever the rate is positive.
pub fn mask_count(num_nodes: usize, p_f: f64) -> usize {
    if p_f <= 0.0 {
        return 0;
    }
    ((num_nodes as f64 * p_f).floor() as usize).clamp(1, num_nodes)
}
