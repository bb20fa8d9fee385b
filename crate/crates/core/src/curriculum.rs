//! Loss-threshold curriculum: samples whose squared residual exceeds a
//! threshold `β` are down-weighted to `β / r²`, so layer regions, where the
//! residual is largest, count less in the physical loss.
//!
//! `β` is refreshed every `K` iterations from a fixed subset of collocation
//! points: points whose `‖∇_x r²‖` is below the cutoff `G` are treated as
//! non-layer samples, their squared residuals go into a memory bank, and the
//! bank's maximum becomes the new `β`.

use crate::autodiff::{residual_spatial_gradient, Surrogate};
use crate::error::{Error, Result};
use crate::problems::PdeProblem;
use crate::sampling::Points;

/// Update period used throughout the benchmarks.
pub const DEFAULT_PERIOD: usize = 50;
/// Gradient cutoff for 1D problems.
pub const DEFAULT_CUTOFF_1D: f64 = 10.0;
/// Gradient cutoff for 2D and 3D problems.
pub const DEFAULT_CUTOFF_MULTI_D: f64 = 50.0;

pub fn default_cutoff(dim: usize) -> f64 {
    if dim == 1 {
        DEFAULT_CUTOFF_1D
    } else {
        DEFAULT_CUTOFF_MULTI_D
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumState {
    /// Current threshold; `+∞` until the first update.
    pub beta: f64,
    /// Gradient cutoff `G`.
    pub cutoff: f64,
    /// Update period `K`.
    pub period: usize,
    pub memory_bank: Vec<f64>,
    pub subset_idx: Vec<usize>,
    /// Whether the last update fell back to the subset maximum.
    pub last_update_fell_back: bool,
}

impl CurriculumState {
    pub fn new(cutoff: f64, period: usize, subset_idx: Vec<usize>) -> Result<Self> {
        if !(cutoff > 0.0) {
            return Err(Error::config(format!("gradient cutoff must be positive, got {cutoff}")));
        }
        if period == 0 {
            return Err(Error::config("update period must be at least 1"));
        }
        Ok(Self {
            beta: f64::INFINITY,
            cutoff,
            period,
            memory_bank: Vec::new(),
            subset_idx,
            last_update_fell_back: false,
        })
    }

    pub fn is_due(&self, t: usize) -> bool {
        t % self.period == 0
    }

    /// Recomputes `β` from the subset.
    pub fn update_threshold<S: Surrogate + ?Sized>(
        &mut self,
        field: &S,
        problem: &PdeProblem,
        interior: &Points,
    ) -> Result<()> {
        if self.subset_idx.is_empty() {
            return Err(Error::config("the threshold subset is empty"));
        }
        let mut grads = Vec::with_capacity(self.subset_idx.len());
        let mut losses = Vec::with_capacity(self.subset_idx.len());
        for &i in &self.subset_idx {
            let x = interior.get(i);
            let r = problem.residual(field, x)?;
            grads.push(residual_spatial_gradient(field, problem, x)?.norm);
            losses.push(r * r);
        }
        self.apply_subset_scores(&grads, &losses);
        Ok(())
    }

    /// Threshold update from precomputed per-subset-point gradient norms and
    /// squared residuals.
    pub fn apply_subset_scores(&mut self, grads: &[f64], losses: &[f64]) {
        let update = threshold_from_scores(grads, losses, self.cutoff);
        self.memory_bank = update.bank;
        self.beta = update.beta;
        self.last_update_fell_back = update.fell_back;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdUpdate {
    pub bank: Vec<f64>,
    pub beta: f64,
    pub fell_back: bool,
}

/// Filters subset losses by `grad < cutoff` and takes the maximum. An empty
/// bank falls back to the maximum loss over the whole subset.
pub fn threshold_from_scores(grads: &[f64], losses: &[f64], cutoff: f64) -> ThresholdUpdate {
    assert_eq!(grads.len(), losses.len());
    let bank: Vec<f64> = grads
        .iter()
        .zip(losses)
        .filter(|(g, _)| **g < cutoff)
        .map(|(_, l)| *l)
        .collect();
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if bank.is_empty() {
        ThresholdUpdate {
            beta: max(losses).max(0.0),
            bank,
            fell_back: true,
        }
    } else {
        ThresholdUpdate {
            beta: max(&bank),
            bank,
            fell_back: false,
        }
    }
}

/// Weight of one sample.
///
/// `1` when `r² ≤ β`, else `β / r²`. At `β = 0` this is the limit: `1` for an
/// exact zero residual, `0` otherwise. `β = +∞` gives `1`.
#[inline]
pub fn weight(beta: f64, r2: f64) -> f64 {
    debug_assert!(r2 >= 0.0, "squared residual must be nonnegative");
    if r2 <= beta {
        1.0
    } else if beta == 0.0 {
        0.0
    } else {
        beta / r2
    }
}

pub fn compute_weights(beta: f64, r2: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = r2.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::config(format!("squared residual {bad} is negative")));
    }
    Ok(r2.iter().map(|&v| weight(beta, v)).collect())
}

/// `wᵢ·rᵢ²` for one sample, evaluated as `min(r², β)`.
///
/// Mathematically identical to `weight(β, r²) · r²`, but exact in floating
/// point where the product can be off by one ulp.
#[inline]
pub fn weighted_contribution(beta: f64, r2: f64) -> f64 {
    if r2 <= beta {
        r2
    } else {
        beta
    }
}

/// Residuals of a minibatch with their curriculum weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedBatch {
    pub indices: Vec<usize>,
    pub residuals: Vec<f64>,
    pub weights: Vec<f64>,
    pub beta: f64,
}

impl WeightedBatch {
    pub fn new(indices: Vec<usize>, residuals: Vec<f64>, beta: f64) -> Self {
        let weights = residuals.iter().map(|r| weight(beta, r * r)).collect();
        Self {
            indices,
            residuals,
            weights,
            beta,
        }
    }

    /// Per-sample `wᵢ·rᵢ²`.
    pub fn contributions(&self) -> impl Iterator<Item = f64> + '_ {
        self.residuals
            .iter()
            .map(move |r| weighted_contribution(self.beta, r * r))
    }

    /// The weighted physical loss `Σ wᵢ rᵢ² / Σ wᵢ`.
    pub fn loss(&self) -> WeightedLoss {
        let wsum: f64 = self.weights.iter().sum();
        if wsum > 0.0 {
            WeightedLoss {
                value: self.contributions().sum::<f64>() / wsum,
                normalizer: wsum,
                fell_back: false,
            }
        } else {
            let r2: Vec<f64> = self.residuals.iter().map(|r| r * r).collect();
            weighted_physical_loss(&self.weights, &r2)
        }
    }

    /// Plain mean of `r²` over the batch.
    pub fn unweighted_loss(&self) -> f64 {
        let n = self.residuals.len().max(1) as f64;
        self.residuals.iter().map(|r| r * r).sum::<f64>() / n
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedLoss {
    pub value: f64,
    /// Normalizer actually used: `Σw`, or `N` after the plain-mean fallback.
    pub normalizer: f64,
    /// `Σw` was zero and the plain mean was used instead.
    pub fell_back: bool,
}

/// `Σ wᵢ rᵢ² / Σ wᵢ`, falling back to the plain mean when `Σw = 0`.
pub fn weighted_physical_loss(weights: &[f64], r2: &[f64]) -> WeightedLoss {
    assert_eq!(weights.len(), r2.len());
    let wsum: f64 = weights.iter().sum();
    if wsum > 0.0 {
        let num: f64 = weights.iter().zip(r2).map(|(w, v)| w * v).sum();
        WeightedLoss {
            value: num / wsum,
            normalizer: wsum,
            fell_back: false,
        }
    } else {
        if !weights.is_empty() {
            log::info!("all curriculum weights are zero; using the plain mean for this batch");
        }
        let n = r2.len().max(1) as f64;
        WeightedLoss {
            value: r2.iter().sum::<f64>() / n,
            normalizer: n,
            fell_back: true,
        }
    }
}
