//! Named, ordered parameter collections.
//!
//! Iteration order is insertion order and is part of the contract: the
//! optimizer keys its moment buffers positionally, the EMA shadow matches by
//! name, and checkpoints serialize entries in order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::tape::{NodeId, Tape};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    entries: Vec<(String, Mat<T>)>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat<T>) {
        let name = name.into();
        assert!(
            self.get(&name).is_none(),
            "duplicate parameter name {name:?}"
        );
        self.entries.push((name, value));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Mat<T>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat<T>> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
    }

    pub fn entry(&self, i: usize) -> (&str, &Mat<T>) {
        let (n, m) = &self.entries[i];
        (n, m)
    }

    pub fn entry_mut(&mut self, i: usize) -> (&str, &mut Mat<T>) {
        let (n, m) = &mut self.entries[i];
        (n, m)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat<T>)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Mat<T>)> {
        self.entries.iter_mut().map(|(n, m)| (n.as_str(), &mut *m))
    }

    /// Entries whose name starts with `prefix`, preserving order.
    pub fn subset(&self, prefix: &str) -> ParamSet<T> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .filter(|(n, _)| n.starts_with(prefix))
                .cloned()
                .collect(),
        }
    }

    /// Same names, same shapes, same order.
    pub fn congruent(&self, other: &ParamSet<T>) -> bool {
        self.len() == other.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((an, am), (bn, bm))| an == bn && am.shape() == bm.shape())
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.len()).sum()
    }

    /// Inserts every entry into a tape, tracked (leaf) or untracked
    /// (constant), and returns the name -> node binding.
    pub fn bind(&self, tape: &mut Tape<T>, tracked: bool) -> BoundParams {
        let mut bound = BoundParams {
            entries: Vec::with_capacity(self.len()),
        };
        for (name, value) in &self.entries {
            let id = if tracked {
                tape.leaf(value.clone())
            } else {
                tape.constant(value.clone())
            };
            bound.entries.push((name.clone(), id));
        }
        bound
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, m)| (n.clone(), m.cast()))
                .collect(),
        }
    }
}

/// Name -> tape-node mapping produced by [`ParamSet::bind`].
pub struct BoundParams {
    entries: Vec<(String, NodeId)>,
}

impl BoundParams {
    /// Node for a bound parameter. Panics on a missing name: bindings and
    /// layer code are built from the same naming scheme.
    pub fn node(&self, name: &str) -> NodeId {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .unwrap_or_else(|| panic!("unbound parameter {name:?}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.entries.iter().map(|(n, id)| (n.as_str(), *id))
    }
}

/// Uniform fan-in-scaled init: entries drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_fan_in<T: Scalar>(
    rng: &mut ChaCha8Rng,
    fan_in: usize,
    rows: usize,
    cols: usize,
) -> Mat<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let u: f64 = rng.random();
        data.push(T::from_f64((2.0 * u - 1.0) * bound));
    }
    Mat::from_vec(rows, cols, data)
}

/// Congruence check that reports a shape error naming the offender.
pub fn require_congruent<T: Scalar>(a: &ParamSet<T>, b: &ParamSet<T>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape("parameter sets", a.len(), b.len()));
    }
    for ((an, am), (bn, bm)) in a.iter().zip(b.iter()) {
        if an != bn {
            return Err(Error::shape("parameter names", an, bn));
        }
        if am.shape() != bm.shape() {
            return Err(Error::shape(
                "parameter shape",
                format!("{an} {:?}", am.shape()),
                format!("{bn} {:?}", bm.shape()),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn subset_keeps_order_and_prefix() {
        let mut p: ParamSet<f64> = ParamSet::new();
        p.insert("enc.w", Mat::zeros(2, 2));
        p.insert("dec.w", Mat::zeros(2, 2));
        p.insert("enc.b", Mat::zeros(1, 2));
        let sub = p.subset("enc.");
        let names: Vec<&str> = sub.iter().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["enc.w", "enc.b"]);
    }

    #[test]
    fn fan_in_init_is_bounded_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m: Mat<f64> = uniform_fan_in(&mut rng, 16, 4, 4);
        assert!(m.data().iter().all(|x| x.abs() <= 0.25));
        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        let m2: Mat<f64> = uniform_fan_in(&mut rng2, 16, 4, 4);
        assert_eq!(m, m2);
    }
}
