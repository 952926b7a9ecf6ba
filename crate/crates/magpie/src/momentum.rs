//! Exponential-moving-average shadow of the encoder/decoder parameters.
//!
//! The shadow tracks `theta* <- tau * theta* + (1 - tau) * theta` after every
//! optimizer step. Shadow parameters are bound to tapes as constants and
//! shadow outputs are detached, so they can never receive gradients and no
//! optimizer state is ever attached to them.

use crate::backbone::{decode_with, encode_with, BackboneConfig};
use crate::error::{Error, Result};
use crate::params::{require_congruent, ParamSet};
use crate::tape::{NodeId, Tape};
use crate::Scalar;

#[derive(Debug, Clone)]
pub struct EmaShadow<T> {
    pub params: ParamSet<T>,
    pub tau: f64,
}

impl<T: Scalar> EmaShadow<T> {
    /// Exact copy of the source parameters.
    pub fn init(source: &ParamSet<T>, tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidRate {
                what: "ema decay",
                value: tau,
                range: "[0, 1]",
            });
        }
        Ok(EmaShadow {
            params: source.clone(),
            tau,
        })
    }

    /// One decay step against a congruent source set.
    pub fn update(&mut self, source: &ParamSet<T>) -> Result<()> {
        require_congruent(&self.params, source)?;
        let tau = T::from_f64(self.tau);
        let one_minus = T::one() - tau;
        for ((_, shadow), (_, live)) in self.params.iter_mut().zip(source.iter()) {
            for (s, &l) in shadow.data_mut().iter_mut().zip(live.data()) {
                *s = tau * *s + one_minus * l;
            }
        }
        Ok(())
    }

    /// Like [`EmaShadow::update`] but looks entries up by name in a larger
    /// live set (the full backbone), updating only the shadowed subset.
    pub fn update_from(&mut self, live: &ParamSet<T>) -> Result<()> {
        let tau = T::from_f64(self.tau);
        let one_minus = T::one() - tau;
        for (name, shadow) in self.params.iter_mut() {
            let source = live
                .get(name)
                .ok_or_else(|| Error::shape("shadow parameter", name, "missing"))?;
            if source.shape() != shadow.shape() {
                return Err(Error::shape(
                    "shadow parameter shape",
                    format!("{:?}", shadow.shape()),
                    format!("{:?}", source.shape()),
                ));
            }
            for (s, &l) in shadow.data_mut().iter_mut().zip(source.data()) {
                *s = tau * *s + one_minus * l;
            }
        }
        Ok(())
    }
}

/// Encoder forward under shadow parameters; the result is detached.
pub fn momentum_encode<T: Scalar>(
    shadow: &EmaShadow<T>,
    cfg: &BackboneConfig,
    tape: &mut Tape<T>,
    edges: &[(usize, usize)],
    x: NodeId,
) -> Result<NodeId> {
    let bound = shadow.params.bind(tape, false);
    let h = encode_with(cfg, &bound, tape, edges, x)?;
    Ok(tape.detach(h))
}

/// Decoder forward under shadow parameters; the result is detached.
pub fn momentum_decode<T: Scalar>(
    shadow: &EmaShadow<T>,
    cfg: &BackboneConfig,
    tape: &mut Tape<T>,
    edges: &[(usize, usize)],
    h: NodeId,
) -> Result<NodeId> {
    let bound = shadow.params.bind(tape, false);
    let z = decode_with(cfg, &bound, tape, edges, h)?;
    Ok(tape.detach(z))
}
