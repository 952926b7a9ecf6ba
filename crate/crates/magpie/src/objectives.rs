//! Training objectives: feature reconstruction, structure ranking, latent
//! bootstrapping, momentum consistency, and their weighted combination.
//!
//! Conventions follow the written forms exactly: the feature and consistency
//! losses average over masked nodes, the bootstrapping loss averages over
//! all nodes, and the structure ranking loss *sums* over visible edges — no
//! silent renormalization. Similarity in the ranking loss is the raw inner
//! product; everywhere else it is an epsilon-guarded cosine (cosine defined
//! as 0 when either vector norm falls under epsilon, so zero vectors give
//! finite losses).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{MapKind, NodeId, Tape};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub fr: f64,
    pub sample: f64,
    pub sr: f64,
    pub bs: f64,
    pub ca: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            fr: 1.0,
            sample: 1.0,
            sr: 1.0,
            bs: 1.0,
            ca: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Scaling exponent of the feature reconstruction error.
    pub alpha: f64,
    /// Scaling exponent of the consistency error.
    pub beta: f64,
    /// Ranking margin.
    pub margin: f64,
    /// Cosine denominator guard.
    pub epsilon: f64,
    pub weights: LossWeights,
    /// Subtract the mean reward from sampling-loss rewards (off by default).
    pub mean_reward_baseline: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 2.0,
            beta: 1.0,
            margin: 1.0,
            epsilon: 1e-8,
            weights: LossWeights::default(),
            mean_reward_baseline: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 1.0 || self.beta < 1.0 {
            return Err(Error::InvalidConfig(
                "loss scaling factors alpha and beta must be >= 1".into(),
            ));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        let w = self.weights;
        if [w.fr, w.sample, w.sr, w.bs, w.ca]
            .iter()
            .any(|x| !x.is_finite() || *x < 0.0)
        {
            return Err(Error::InvalidConfig(
                "loss weights must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Per-objective scalars from one training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub fr: f64,
    pub sample: f64,
    pub sr: f64,
    pub bs: f64,
    pub ca: f64,
    pub total: f64,
}

/// Row-wise `(1 - cos(a_i, b_i))^gamma`, one value per row.
pub fn scaled_cosine_rows<T: Scalar>(
    tape: &mut Tape<T>,
    a: NodeId,
    b: NodeId,
    gamma: f64,
    epsilon: f64,
) -> Result<NodeId> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::shape(
            "scaled cosine rows",
            format!("{:?}", tape.shape(a)),
            format!("{:?}", tape.shape(b)),
        ));
    }
    if gamma < 1.0 {
        return Err(Error::InvalidConfig("gamma must be >= 1".into()));
    }
    let cos = tape.row_cosine(a, b, T::from_f64(epsilon));
    let neg = tape.scale(cos, T::from_f64(-1.0));
    let shifted = tape.add_scalar(neg, T::one());
    Ok(tape.pow_scalar(shifted, T::from_f64(gamma)))
}

/// `(1 - cos(x, z))^gamma` for a single pair of vectors (`1 x d`).
pub fn scaled_cosine_error<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    z: NodeId,
    gamma: f64,
    epsilon: f64,
) -> Result<NodeId> {
    if tape.shape(x).0 != 1 {
        return Err(Error::shape("scaled cosine vector", "1 row", tape.shape(x).0));
    }
    scaled_cosine_rows(tape, x, z, gamma, epsilon)
}

/// Mean scaled cosine error between original and reconstructed features over
/// the masked nodes. Also returns the per-node error column (`k x 1`), which
/// the sampling loss consumes as detached rewards.
pub fn feature_reconstruction_loss<T: Scalar>(
    tape: &mut Tape<T>,
    features: NodeId,
    reconstruction: NodeId,
    masked_nodes: &[usize],
    alpha: f64,
    epsilon: f64,
) -> Result<(NodeId, NodeId)> {
    if masked_nodes.is_empty() {
        return Err(Error::EmptyMaskSet);
    }
    if tape.shape(features) != tape.shape(reconstruction) {
        return Err(Error::shape(
            "feature reconstruction",
            format!("{:?}", tape.shape(features)),
            format!("{:?}", tape.shape(reconstruction)),
        ));
    }
    let x = tape.gather_rows(features, masked_nodes);
    let z = tape.gather_rows(reconstruction, masked_nodes);
    let per_node = scaled_cosine_rows(tape, x, z, alpha, epsilon)?;
    let loss = tape.mean_all(per_node);
    Ok((loss, per_node))
}

/// Margin ranking loss over visible edges: each edge `(i, j)` with sampled
/// negative `j'` contributes `max(0, margin - <z_i, z_j> + <z_i, z_j'>)`.
/// Summed, not averaged. The subgradient at the hinge kink is 0.
pub fn structure_reconstruction_loss<T: Scalar>(
    tape: &mut Tape<T>,
    z: NodeId,
    visible_edges: &[(usize, usize)],
    negatives: &[usize],
    margin: f64,
) -> Result<NodeId> {
    if visible_edges.len() != negatives.len() {
        return Err(Error::shape(
            "one negative per visible edge",
            visible_edges.len(),
            negatives.len(),
        ));
    }
    if visible_edges.is_empty() {
        return Ok(tape.constant(crate::mat::Mat::scalar(T::zero())));
    }
    let srcs: Vec<usize> = visible_edges.iter().map(|&(s, _)| s).collect();
    let dsts: Vec<usize> = visible_edges.iter().map(|&(_, d)| d).collect();
    let zi = tape.gather_rows(z, &srcs);
    let zj = tape.gather_rows(z, &dsts);
    let zn = tape.gather_rows(z, negatives);
    let pos = tape.row_dot(zi, zj);
    let neg = tape.row_dot(zi, zn);
    let diff = tape.sub(neg, pos);
    let shifted = tape.add_scalar(diff, T::from_f64(margin));
    let hinge = tape.map(shifted, MapKind::Relu);
    Ok(tape.sum_all(hinge))
}

/// Cross-view latent agreement against momentum targets:
/// `-mean_v [cos(h1p_v, h2m_v) + cos(h1m_v, h2p_v)]`.
///
/// `h1m`/`h2m` are expected to be detached momentum outputs; nothing here
/// re-attaches them.
pub fn bootstrap_similarity_loss<T: Scalar>(
    tape: &mut Tape<T>,
    h1_proj: NodeId,
    h2_proj: NodeId,
    h1_momentum: NodeId,
    h2_momentum: NodeId,
    epsilon: f64,
) -> Result<NodeId> {
    let shape = tape.shape(h1_proj);
    for &other in &[h2_proj, h1_momentum, h2_momentum] {
        if tape.shape(other) != shape {
            return Err(Error::shape(
                "bootstrap similarity inputs",
                format!("{shape:?}"),
                format!("{:?}", tape.shape(other)),
            ));
        }
    }
    let eps = T::from_f64(epsilon);
    let c1 = tape.row_cosine(h1_proj, h2_momentum, eps);
    let c2 = tape.row_cosine(h1_momentum, h2_proj, eps);
    let s = tape.add(c1, c2);
    let m = tape.mean_all(s);
    Ok(tape.scale(m, T::from_f64(-1.0)))
}

/// Mean scaled cosine error between live and momentum reconstructions over
/// the masked nodes. The momentum side must be detached by the caller.
pub fn consistency_loss<T: Scalar>(
    tape: &mut Tape<T>,
    reconstruction: NodeId,
    momentum_reconstruction: NodeId,
    masked_nodes: &[usize],
    beta: f64,
    epsilon: f64,
) -> Result<NodeId> {
    if masked_nodes.is_empty() {
        return Err(Error::EmptyMaskSet);
    }
    if tape.shape(reconstruction) != tape.shape(momentum_reconstruction) {
        return Err(Error::shape(
            "consistency reconstruction",
            format!("{:?}", tape.shape(reconstruction)),
            format!("{:?}", tape.shape(momentum_reconstruction)),
        ));
    }
    let z = tape.gather_rows(reconstruction, masked_nodes);
    let zm = tape.gather_rows(momentum_reconstruction, masked_nodes);
    let per_node = scaled_cosine_rows(tape, z, zm, beta, epsilon)?;
    Ok(tape.mean_all(per_node))
}

/// Weighted total over the five component losses. Errors out if any
/// component value is non-finite.
pub fn combine<T: Scalar>(
    tape: &mut Tape<T>,
    components: &[(&'static str, NodeId, f64)],
) -> Result<NodeId> {
    for &(name, node, _) in components {
        let v = tape.value(node).item().as_f64();
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss(format!("{name} = {v}")));
        }
    }
    let mut total = None;
    for &(_, node, weight) in components {
        let scaled = tape.scale(node, T::from_f64(weight));
        total = Some(match total {
            None => scaled,
            Some(t) => tape.add(t, scaled),
        });
    }
    Ok(total.expect("combine requires at least one component"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::Mat;

    fn scalar_of(tape: &Tape<f64>, id: NodeId) -> f64 {
        tape.value(id).item()
    }

    fn rows(tape: &mut Tape<f64>, data: &[&[f64]], tracked: bool) -> NodeId {
        let m = Mat::from_rows(&data.iter().map(|r| r.to_vec()).collect::<Vec<_>>());
        if tracked {
            tape.leaf(m)
        } else {
            tape.constant(m)
        }
    }

    #[test]
    fn scaled_cosine_known_values() {
        let mut tape: Tape<f64> = Tape::new();
        // Identical vectors: zero for any exponent.
        let x = rows(&mut tape, &[&[1.0, 2.0, 3.0]], false);
        for gamma in [1.0, 2.0, 5.0] {
            let e = scaled_cosine_error(&mut tape, x, x, gamma, 1e-8).unwrap();
            assert_eq!(scalar_of(&tape, e), 0.0);
        }
        // Orthogonal and gamma 1: exactly one.
        let a = rows(&mut tape, &[&[1.0, 0.0]], false);
        let b = rows(&mut tape, &[&[0.0, 1.0]], false);
        let e = scaled_cosine_error(&mut tape, a, b, 1.0, 1e-8).unwrap();
        assert!((scalar_of(&tape, e) - 1.0).abs() < 1e-12);
        // (3,4) vs (4,3) with gamma 2: (1 - 24/25)^2 = 0.0016.
        let a = rows(&mut tape, &[&[3.0, 4.0]], false);
        let b = rows(&mut tape, &[&[4.0, 3.0]], false);
        let e = scaled_cosine_error(&mut tape, a, b, 2.0, 1e-8).unwrap();
        assert!((scalar_of(&tape, e) - 0.0016).abs() < 1e-12);
    }

    #[test]
    fn zero_vectors_give_unit_error() {
        let mut tape: Tape<f64> = Tape::new();
        let a = rows(&mut tape, &[&[0.0, 0.0]], false);
        for gamma in [1.0, 2.0, 3.0] {
            let e = scaled_cosine_error(&mut tape, a, a, gamma, 1e-8).unwrap();
            assert_eq!(scalar_of(&tape, e), 1.0);
        }
    }

    #[test]
    fn feature_reconstruction_known_values() {
        let mut tape: Tape<f64> = Tape::new();
        let x = rows(&mut tape, &[&[3.0, 4.0], &[1.0, 0.0], &[5.0, 5.0]], false);

        // Reconstruction equal on masked rows: zero loss.
        let (l, _) = feature_reconstruction_loss(&mut tape, x, x, &[0, 1], 2.0, 1e-8).unwrap();
        assert_eq!(scalar_of(&tape, l), 0.0);

        // Single orthogonal masked node with alpha 3: loss 1.
        let z = rows(&mut tape, &[&[3.0, 4.0], &[0.0, 1.0], &[5.0, 5.0]], false);
        let (l, _) = feature_reconstruction_loss(&mut tape, x, z, &[1], 3.0, 1e-8).unwrap();
        assert!((scalar_of(&tape, l) - 1.0).abs() < 1e-12);

        // Per-node errors 0.0016 and 1 average to 0.5008.
        let z = rows(&mut tape, &[&[4.0, 3.0], &[0.0, 1.0], &[5.0, 5.0]], false);
        let (l, per) = feature_reconstruction_loss(&mut tape, x, z, &[0, 1], 2.0, 1e-8).unwrap();
        assert!((scalar_of(&tape, l) - 0.5008).abs() < 1e-12);
        assert_eq!(tape.value(per).rows(), 2);
        assert!((tape.value(per)[(0, 0)] - 0.0016).abs() < 1e-12);
        assert!((tape.value(per)[(1, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn feature_reconstruction_requires_masked_nodes() {
        let mut tape: Tape<f64> = Tape::new();
        let x = rows(&mut tape, &[&[1.0, 2.0]], false);
        assert!(matches!(
            feature_reconstruction_loss(&mut tape, x, x, &[], 2.0, 1e-8),
            Err(Error::EmptyMaskSet)
        ));
    }

    #[test]
    fn structure_ranking_known_terms() {
        let mut tape: Tape<f64> = Tape::new();
        // Node rows engineered for inner products: z0 = (1, 0).
        // sim(0,1) = 5, sim(0,2) = 2: margin satisfied, term 0.
        let z = rows(&mut tape, &[&[1.0, 0.0], &[5.0, 0.0], &[2.0, 0.0]], false);
        let l = structure_reconstruction_loss(&mut tape, z, &[(0, 1)], &[2], 1.0).unwrap();
        assert_eq!(scalar_of(&tape, l), 0.0);

        // Equal similarities violate the margin by exactly 1.
        let z = rows(&mut tape, &[&[1.0, 0.0], &[2.0, 0.0], &[2.0, 0.0]], false);
        let l = structure_reconstruction_loss(&mut tape, z, &[(0, 1)], &[2], 1.0).unwrap();
        assert!((scalar_of(&tape, l) - 1.0).abs() < 1e-12);

        // sim(i,j) = 0.2, sim(i,j') = 0.5 -> 1.3.
        let z = rows(&mut tape, &[&[1.0, 0.0], &[0.2, 0.0], &[0.5, 0.0]], false);
        let l = structure_reconstruction_loss(&mut tape, z, &[(0, 1)], &[2], 1.0).unwrap();
        assert!((scalar_of(&tape, l) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn structure_ranking_sums_over_edges() {
        let mut tape: Tape<f64> = Tape::new();
        let z = rows(&mut tape, &[&[1.0, 0.0], &[0.2, 0.0], &[0.5, 0.0]], false);
        let l = structure_reconstruction_loss(&mut tape, z, &[(0, 1), (0, 1)], &[2, 2], 1.0)
            .unwrap();
        assert!((scalar_of(&tape, l) - 2.6).abs() < 1e-12);
    }

    #[test]
    fn hinge_kink_has_zero_subgradient() {
        let mut tape: Tape<f64> = Tape::new();
        let z = rows(&mut tape, &[&[1.0, 0.0], &[2.0, 0.0], &[1.0, 0.0]], true);
        // sim(0,1) - sim(0,2) = 1: exactly on the margin, term relu(0).
        let l = structure_reconstruction_loss(&mut tape, z, &[(0, 1)], &[2], 1.0).unwrap();
        assert_eq!(scalar_of(&tape, l), 0.0);
        let grads = tape.backward(l);
        let dz = grads.get_or_zeros(z, (3, 2));
        assert!(dz.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn bootstrap_similarity_known_values() {
        let mut tape: Tape<f64> = Tape::new();
        // Perfect cross alignment of unit rows: -2.
        let u = rows(&mut tape, &[&[1.0, 0.0], &[0.0, 1.0]], false);
        let l = bootstrap_similarity_loss(&mut tape, u, u, u, u, 1e-8).unwrap();
        assert!((scalar_of(&tape, l) + 2.0).abs() < 1e-12);

        // Orthogonal pairs: 0.
        let v = rows(&mut tape, &[&[0.0, 1.0], &[1.0, 0.0]], false);
        let l = bootstrap_similarity_loss(&mut tape, u, u, v, v, 1e-8).unwrap();
        assert_eq!(scalar_of(&tape, l), 0.0);

        // Single node with cosine pair (0.5, -0.25): -(0.5 - 0.25) = -0.25.
        let h1p = rows(&mut tape, &[&[1.0, 0.0]], false);
        let h2m = rows(&mut tape, &[&[0.5, 0.75f64.sqrt()]], false);
        let h1m = rows(&mut tape, &[&[1.0, 0.0]], false);
        let h2p = rows(&mut tape, &[&[-0.25, 0.9375f64.sqrt()]], false);
        let l = bootstrap_similarity_loss(&mut tape, h1p, h2p, h1m, h2m, 1e-8).unwrap();
        assert!((scalar_of(&tape, l) + 0.25).abs() < 1e-12);
    }

    #[test]
    fn consistency_known_values() {
        let mut tape: Tape<f64> = Tape::new();
        let z = rows(&mut tape, &[&[3.0, 4.0], &[1.0, 0.0]], false);
        let l = consistency_loss(&mut tape, z, z, &[0, 1], 2.0, 1e-8).unwrap();
        assert_eq!(scalar_of(&tape, l), 0.0);

        let zm = rows(&mut tape, &[&[3.0, 4.0], &[0.0, 1.0]], false);
        for beta in [1.0, 2.0, 4.0] {
            let l = consistency_loss(&mut tape, z, zm, &[1], beta, 1e-8).unwrap();
            assert!((scalar_of(&tape, l) - 1.0).abs() < 1e-12);
        }

        // cos = 0.96, beta = 2 -> 0.0016.
        let zm = rows(&mut tape, &[&[4.0, 3.0], &[1.0, 0.0]], false);
        let l = consistency_loss(&mut tape, z, zm, &[0], 2.0, 1e-8).unwrap();
        assert!((scalar_of(&tape, l) - 0.0016).abs() < 1e-12);
    }

    #[test]
    fn momentum_inputs_receive_no_gradient() {
        let mut tape: Tape<f64> = Tape::new();
        let live = rows(&mut tape, &[&[1.0, 2.0], &[3.0, 4.0]], true);
        let shadow = rows(&mut tape, &[&[0.5, 0.5], &[0.25, 0.5]], false);
        let l = bootstrap_similarity_loss(&mut tape, live, live, shadow, shadow, 1e-8).unwrap();
        let grads = tape.backward(l);
        assert!(grads.get(shadow).is_none());
        assert!(grads.get(live).is_some());
    }

    #[test]
    fn combine_known_arithmetic() {
        let mut tape: Tape<f64> = Tape::new();
        let vals = [0.5, 0.0, 0.25, -1.0, 0.25];
        let nodes: Vec<NodeId> = vals
            .iter()
            .map(|&v| tape.constant(Mat::scalar(v)))
            .collect();

        // All weights zero.
        let comps: Vec<(&'static str, NodeId, f64)> = ["fr", "sample", "sr", "bs", "ca"]
            .iter()
            .zip(&nodes)
            .map(|(&n, &id)| (n, id, 0.0))
            .collect();
        let t = combine(&mut tape, &comps).unwrap();
        assert_eq!(scalar_of(&tape, t), 0.0);

        // Unit weights on (0.5, 0, 0.25, -1, 0.25) cancel to zero.
        let comps: Vec<(&'static str, NodeId, f64)> = ["fr", "sample", "sr", "bs", "ca"]
            .iter()
            .zip(&nodes)
            .map(|(&n, &id)| (n, id, 1.0))
            .collect();
        let t = combine(&mut tape, &comps).unwrap();
        assert!(scalar_of(&tape, t).abs() < 1e-12);

        // Doubling every weight doubles the total.
        let vals2 = [0.5, 0.125, 0.25, 1.0, 0.25];
        let nodes2: Vec<NodeId> = vals2
            .iter()
            .map(|&v| tape.constant(Mat::scalar(v)))
            .collect();
        let single: Vec<(&'static str, NodeId, f64)> = ["fr", "sample", "sr", "bs", "ca"]
            .iter()
            .zip(&nodes2)
            .map(|(&n, &id)| (n, id, 1.0))
            .collect();
        let double: Vec<(&'static str, NodeId, f64)> = single
            .iter()
            .map(|&(n, id, w)| (n, id, 2.0 * w))
            .collect();
        let t1 = combine(&mut tape, &single).unwrap();
        let t2 = combine(&mut tape, &double).unwrap();
        assert!((2.0 * scalar_of(&tape, t1) - scalar_of(&tape, t2)).abs() < 1e-12);
    }

    #[test]
    fn combine_rejects_non_finite_components() {
        let mut tape: Tape<f64> = Tape::new();
        let bad = tape.constant(Mat::scalar(f64::NAN));
        assert!(matches!(
            combine(&mut tape, &[("fr", bad, 1.0)]),
            Err(Error::NonFiniteLoss(_))
        ));
    }

    #[test]
    fn cosine_losses_are_scale_invariant() {
        let mut tape: Tape<f64> = Tape::new();
        let x = rows(&mut tape, &[&[1.0, 2.0, -0.5]], false);
        let z = rows(&mut tape, &[&[0.3, -1.0, 2.0]], false);
        let base = scaled_cosine_error(&mut tape, x, z, 2.0, 1e-8).unwrap();
        for c in [0.1, 3.0, 250.0] {
            let xs = tape.scale(x, c);
            let e = scaled_cosine_error(&mut tape, xs, z, 2.0, 1e-8).unwrap();
            assert!((scalar_of(&tape, e) - scalar_of(&tape, base)).abs() < 1e-9);
        }
    }

    #[test]
    fn error_strictly_increases_with_angle_and_decreases_with_gamma() {
        let mut tape: Tape<f64> = Tape::new();
        let x = rows(&mut tape, &[&[1.0, 0.0]], false);
        let mut last = -1.0;
        for angle_deg in [10.0, 35.0, 60.0, 85.0, 120.0] {
            let a = (angle_deg as f64).to_radians();
            let z = rows(&mut tape, &[&[a.cos(), a.sin()]], false);
            let e = scaled_cosine_error(&mut tape, x, z, 2.0, 1e-8).unwrap();
            let v = scalar_of(&tape, e);
            assert!(v > last, "not increasing at {angle_deg} deg");
            last = v;
        }

        // With cos in (0, 1) fixed, larger exponents shrink the term.
        let z = rows(&mut tape, &[&[1.0, 1.0]], false);
        let e1 = scaled_cosine_error(&mut tape, x, z, 1.0, 1e-8).unwrap();
        let e2 = scaled_cosine_error(&mut tape, x, z, 2.0, 1e-8).unwrap();
        let e4 = scaled_cosine_error(&mut tape, x, z, 4.0, 1e-8).unwrap();
        assert!(scalar_of(&tape, e1) > scalar_of(&tape, e2));
        assert!(scalar_of(&tape, e2) > scalar_of(&tape, e4));
    }
}
