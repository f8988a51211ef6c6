//! Running observation statistics with a mergeable accumulator.
//!
//! Single samples are folded in with Welford's update; accumulators from
//! independent rollouts are combined with the Chan et al. pairwise formula,
//! so `merge` over any split of a stream gives the same statistics as one
//! pass over the whole stream (up to rounding).

use serde::{Deserialize, Serialize};

use crate::error::{ParsError, Result};

/// Floor applied to every reported standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl Normalizer {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check_dim(&self, len: usize, what: &'static str) -> Result<()> {
        if len != self.dim() {
            return Err(ParsError::Shape {
                what,
                expected: self.dim(),
                actual: len,
            });
        }
        Ok(())
    }

    /// Folds one observation into the statistics.
    pub fn update(&mut self, obs: &[f64]) -> Result<()> {
        self.check_dim(obs.len(), "observation")?;
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(ParsError::NonFinite("observation"));
        }
        self.count += 1;
        let n = self.count as f64;
        for ((mean, m2), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(obs) {
            let delta = x - *mean;
            *mean += delta / n;
            *m2 += delta * (x - *mean);
        }
        Ok(())
    }

    /// Population standard deviation per dimension, floored at [`STD_FLOOR`].
    /// All ones before any sample has been seen.
    pub fn std(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![1.0; self.dim()];
        }
        let n = self.count as f64;
        self.m2
            .iter()
            .map(|m2| (m2 / n).sqrt().max(STD_FLOOR))
            .collect()
    }

    /// `(obs - mean) / std`. With fewer than two samples the statistics carry
    /// no spread information and the observation passes through unchanged.
    pub fn normalize(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(obs.len(), "observation")?;
        if self.count <= 1 {
            return Ok(obs.to_vec());
        }
        let n = self.count as f64;
        Ok(obs
            .iter()
            .zip(&self.mean)
            .zip(&self.m2)
            .map(|((x, mean), m2)| (x - mean) / (m2 / n).sqrt().max(STD_FLOOR))
            .collect())
    }

    /// Combines two accumulators into the statistics of the concatenated
    /// sample streams.
    pub fn merge(&self, other: &Normalizer) -> Result<Normalizer> {
        self.check_dim(other.dim(), "normalizer")?;
        if other.count == 0 {
            return Ok(self.clone());
        }
        if self.count == 0 {
            return Ok(other.clone());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let mut out = Normalizer::new(self.dim());
        out.count = self.count + other.count;
        for k in 0..self.dim() {
            let delta = other.mean[k] - self.mean[k];
            out.mean[k] = (na * self.mean[k] + nb * other.mean[k]) / n;
            out.m2[k] = self.m2[k] + other.m2[k] + delta * delta * na * nb / n;
        }
        Ok(out)
    }

    pub fn merge_in_place(&mut self, other: &Normalizer) -> Result<()> {
        *self = self.merge(other)?;
        Ok(())
    }
}
