//! Seeded random streams and initial-state samplers.
//!
//! One run seed fans out to independent ChaCha streams, one per consumer, so
//! that drawing more excitation noise never shifts the initial-state batch.

use nalgebra::DVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::{lit, Real};

/// Consumers of randomness within a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    InitialStates = 1,
    Dictionary = 2,
    Excitation = 3,
}

/// Deterministic generator for one consumer of the run seed.
pub fn substream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Source of Monte Carlo initial states `x₀ ~ p₀`.
pub trait InitialStateSampler<T: Real> {
    fn state_dim(&self) -> usize;
    fn sample(&self, rng: &mut dyn RngCore, count: usize) -> Result<Vec<DVector<T>>>;
}

/// Independent uniform draws per coordinate from `[low_i, high_i]`.
///
/// Degenerate intervals (`low_i == high_i`) return the point exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxSampler {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl BoxSampler {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        check_dim("box sampler bounds", low.len(), high.len())?;
        for (l, h) in low.iter().zip(&high) {
            if !(l.is_finite() && h.is_finite()) {
                return Err(Error::NonFinite("box sampler bounds"));
            }
            if l > h {
                return Err(Error::invalid("box sampler", format!("low {l} exceeds high {h}")));
            }
        }
        Ok(Self { low, high })
    }

    /// Point mass at `x`.
    pub fn point(x: &[f64]) -> Self {
        Self {
            low: x.to_vec(),
            high: x.to_vec(),
        }
    }
}

impl<T: Real> InitialStateSampler<T> for BoxSampler {
    fn state_dim(&self) -> usize {
        self.low.len()
    }

    fn sample(&self, rng: &mut dyn RngCore, count: usize) -> Result<Vec<DVector<T>>> {
        if count == 0 {
            return Err(Error::Empty("initial state batch"));
        }
        Ok((0..count)
            .map(|_| {
                DVector::from_iterator(
                    self.low.len(),
                    self.low.iter().zip(&self.high).map(|(&l, &h)| {
                        let x = if l == h { l } else { rng.random_range(l..=h) };
                        lit::<T>(x)
                    }),
                )
            })
            .collect())
    }
}

/// A prescribed batch, returned cyclically.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedBatch<T: Real>(pub Vec<DVector<T>>);

impl<T: Real> InitialStateSampler<T> for FixedBatch<T> {
    fn state_dim(&self) -> usize {
        self.0.first().map_or(0, DVector::len)
    }

    fn sample(&self, _rng: &mut dyn RngCore, count: usize) -> Result<Vec<DVector<T>>> {
        if self.0.is_empty() || count == 0 {
            return Err(Error::Empty("initial state batch"));
        }
        Ok((0..count).map(|i| self.0[i % self.0.len()].clone()).collect())
    }
}
