//! Ensemble statistics: kurtosis, the kurtosis-driven uncertainty weight,
//! and Bhattacharyya distances between softmax distributions.
//!
//! Two kurtosis flavours are used on purpose. The mixer weight consumes the
//! *raw* fourth standardized moment (always ≥ 1 for a non-degenerate sample,
//! so the weight stays in `(0.5, 1]`), while exploration consumes the *excess*
//! kurtosis, whose sign separates heavy-tailed ensembles from light-tailed ones.

use crate::diffcore::{sigmoid, softmax};
use crate::error::{invalid, Result};

/// Population variance below which an ensemble counts as degenerate.
pub const VAR_EPS: f64 = 1e-12;
/// Lower clamp on the Bhattacharyya coefficient before taking the log.
pub const BC_EPS: f64 = 1e-12;

/// Values predicted by the `N` members of one critic ensemble for a fixed
/// (history, action) pair.
#[derive(Clone, Copy, Debug)]
pub struct EnsembleSample<'a>(&'a [f64]);

impl<'a> EnsembleSample<'a> {
    pub fn new(values: &'a [f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(invalid(format!("ensemble sample needs at least 2 values, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("ensemble sample contains a non-finite value"));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        self.0
    }

    /// Population central moments `(m2, m4)`.
    pub fn central_moments(&self) -> (f64, f64) {
        let n = self.0.len() as f64;
        let mean = self.0.iter().sum::<f64>() / n;
        let (mut m2, mut m4) = (0.0, 0.0);
        for v in self.0 {
            let d2 = (v - mean) * (v - mean);
            m2 += d2;
            m4 += d2 * d2;
        }
        (m2 / n, m4 / n)
    }

    pub fn variance(&self) -> f64 {
        self.central_moments().0
    }
}

/// A discrete probability distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct DistVector(Vec<f64>);

impl DistVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid("distribution entries must be finite and nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("distribution sums to {total}, not 1")));
        }
        Ok(Self(probs))
    }

    /// Softmax of a vector of scores.
    pub fn from_logits(logits: &[f64]) -> Self {
        Self(softmax(logits))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Fourth standardized moment `m4 / m2²`, or 0 when `m2 < var_eps`.
pub fn raw_kurtosis(s: EnsembleSample<'_>, var_eps: f64) -> f64 {
    let (m2, m4) = s.central_moments();
    if m2 < var_eps {
        0.0
    } else {
        m4 / (m2 * m2)
    }
}

/// Raw kurtosis minus 3, or 0 (not −3) for a degenerate ensemble.
pub fn excess_kurtosis(s: EnsembleSample<'_>, var_eps: f64) -> f64 {
    let (m2, m4) = s.central_moments();
    if m2 < var_eps {
        0.0
    } else {
        m4 / (m2 * m2) - 3.0
    }
}

/// `0.5 + sigmoid(-c1 · kappa_raw)`, a value in `(0.5, 1]`.
pub fn uncertainty_weight(kappa_raw: f64, c1: f64) -> Result<f64> {
    if !(kappa_raw >= 0.0) {
        return Err(invalid(format!("raw kurtosis must be nonnegative, got {kappa_raw}")));
    }
    if !(c1 > 0.0) {
        return Err(invalid(format!("C1 must be positive, got {c1}")));
    }
    Ok(0.5 + sigmoid(-c1 * kappa_raw))
}

/// Bhattacharyya coefficient `Σ √(p·q)` clamped to `[BC_EPS, 1]`.
fn coefficient(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum::<f64>().clamp(BC_EPS, 1.0)
}

/// `−ln Σ_a √(p_a q_a)`.
pub fn bhattacharyya(p: &DistVector, q: &DistVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(invalid(format!("distribution lengths differ: {} vs {}", p.len(), q.len())));
    }
    Ok(-coefficient(p.probs(), q.probs()).ln())
}

/// Sum over members of the distance between `softmax(mean_q)` and
/// `softmax(member_q)`.
pub fn bhattacharyya_total(mean_q: &[f64], member_qs: &[Vec<f64>]) -> Result<f64> {
    if member_qs.len() < 2 {
        return Err(invalid(format!("need at least 2 ensemble members, got {}", member_qs.len())));
    }
    let centre = DistVector::from_logits(mean_q);
    member_qs.iter().try_fold(0.0, |acc, q| {
        if q.len() != mean_q.len() {
            return Err(invalid("member action-value vector has the wrong length"));
        }
        Ok(acc + bhattacharyya(&centre, &DistVector::from_logits(q))?)
    })
}

/// Mean over unordered member pairs of the distance between their softmax
/// distributions. Used as an ensemble diversity diagnostic.
pub fn mean_pairwise_bhattacharyya(member_qs: &[Vec<f64>]) -> Result<f64> {
    if member_qs.len() < 2 {
        return Err(invalid("need at least 2 ensemble members"));
    }
    let dists: Vec<DistVector> = member_qs.iter().map(|q| DistVector::from_logits(q)).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for j in 0..dists.len() {
        for l in j + 1..dists.len() {
            total += bhattacharyya(&dists[j], &dists[l])?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}
