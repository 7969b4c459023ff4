//! Self-adaptive confidence thresholds.
//!
//! A global threshold `tau` tracks the exponential moving average of the batch
//! mean max-confidence. Each class gets a local threshold `sigma[c]`, the
//! global threshold scaled by how many confident predictions that class has
//! received recently relative to the best-learned class.
//!
//! Per-class counts are kept over a sliding window of recent unlabeled
//! batches (one effective epoch by default) rather than the whole pool.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::types::ProbVector;

pub const DEFAULT_EMA_DECAY: f64 = 0.999;

/// Outcome of thresholding one unlabeled sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabelDecision {
    pub label: usize,
    pub confidence: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdState {
    tau: f64,
    lambda: f64,
    classes: usize,
    phi: Vec<u64>,
    phi_norm: Vec<f64>,
    sigma: Vec<f64>,
    t: u64,
    window: usize,
    history: VecDeque<Vec<u64>>,
}

pub fn init_threshold_state(classes: usize, lambda: f64) -> Result<ThresholdState> {
    ThresholdState::new(classes, lambda, 1)
}

impl ThresholdState {
    /// `window` is the number of recent batches whose counts make up `phi`.
    pub fn new(classes: usize, lambda: f64, window: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::config("threshold state needs at least 2 classes"));
        }
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::config(format!("EMA decay {lambda} must lie in (0, 1)")));
        }
        if window == 0 {
            return Err(Error::config("status window must hold at least one batch"));
        }
        Ok(Self {
            tau: 1.0 / classes as f64,
            lambda,
            classes,
            phi: vec![0; classes],
            phi_norm: vec![1.0; classes],
            sigma: vec![0.0; classes],
            t: 0,
            window,
            history: VecDeque::with_capacity(window),
        })
    }

    pub fn with_window(mut self, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::config("status window must hold at least one batch"));
        }
        self.window = window;
        while self.history.len() > window {
            self.evict_oldest();
        }
        Ok(self)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn phi(&self) -> &[u64] {
        &self.phi
    }

    pub fn phi_norm(&self) -> &[f64] {
        &self.phi_norm
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn iteration(&self) -> u64 {
        self.t
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Per-batch counts currently inside the window, oldest first.
    pub fn history(&self) -> impl Iterator<Item = &[u64]> {
        self.history.iter().map(Vec::as_slice)
    }

    /// EMA step on the global threshold; advances the iteration counter.
    pub fn update_global_threshold(&mut self, weak_probs: &[ProbVector]) -> Result<f64> {
        if weak_probs.is_empty() {
            return Err(Error::degenerate("global threshold update on an empty batch"));
        }
        let mean = weak_probs.iter().map(ProbVector::max).sum::<f64>() / weak_probs.len() as f64;
        self.tau = self.lambda * self.tau + (1.0 - self.lambda) * mean;
        self.t += 1;
        Ok(self.tau)
    }

    /// Counts predictions strictly above the current `tau` per argmax class,
    /// pushes them into the window, and returns the windowed totals.
    pub fn update_class_status(&mut self, weak_probs: &[ProbVector]) -> &[u64] {
        let mut counts = vec![0u64; self.classes];
        for p in weak_probs {
            if p.max() > self.tau {
                counts[p.argmax()] += 1;
            }
        }
        if self.history.len() == self.window {
            self.evict_oldest();
        }
        for (total, c) in self.phi.iter_mut().zip(&counts) {
            *total += c;
        }
        self.history.push_back(counts);
        &self.phi
    }

    /// Recomputes the normalized status and local thresholds from the current
    /// `phi` and `tau`.
    pub fn refresh_local_thresholds(&mut self) -> &[f64] {
        self.phi_norm = normalize_status(&self.phi);
        self.sigma = local_thresholds(&self.phi_norm, self.tau);
        &self.sigma
    }

    /// One iteration's threshold work, in training order: count this batch
    /// against the previous `tau`, derive `sigma`, decide pseudo-labels, then
    /// advance `tau`.
    pub fn observe_batch(&mut self, weak_probs: &[ProbVector]) -> Result<Vec<PseudoLabelDecision>> {
        if weak_probs.is_empty() {
            return Err(Error::degenerate("threshold update on an empty batch"));
        }
        self.update_class_status(weak_probs);
        self.refresh_local_thresholds();
        let decisions = decide_pseudo_labels(weak_probs, &self.sigma);
        self.update_global_threshold(weak_probs)?;
        Ok(decisions)
    }

    /// Rebuilds a state from persisted fields.
    pub fn restore(
        classes: usize,
        lambda: f64,
        tau: f64,
        t: u64,
        window: usize,
        history: Vec<Vec<u64>>,
        sigma: Vec<f64>,
    ) -> Result<Self> {
        let mut state = Self::new(classes, lambda, window)?;
        if history.len() > window || history.iter().any(|h| h.len() != classes) {
            return Err(Error::format("threshold history does not match its window"));
        }
        if sigma.len() != classes {
            return Err(Error::format("threshold sigma has the wrong class count"));
        }
        for counts in history {
            for (total, c) in state.phi.iter_mut().zip(&counts) {
                *total += c;
            }
            state.history.push_back(counts);
        }
        state.phi_norm = normalize_status(&state.phi);
        state.tau = tau;
        state.t = t;
        state.sigma = sigma;
        Ok(state)
    }

    fn evict_oldest(&mut self) {
        if let Some(old) = self.history.pop_front() {
            for (total, c) in self.phi.iter_mut().zip(&old) {
                *total -= c;
            }
        }
    }
}

/// `phi[c] / max(phi)`; all ones when no class has any count yet.
pub fn normalize_status(phi: &[u64]) -> Vec<f64> {
    let max = phi.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return vec![1.0; phi.len()];
    }
    phi.iter().map(|&c| c as f64 / max as f64).collect()
}

pub fn local_thresholds(phi_norm: &[f64], tau: f64) -> Vec<f64> {
    phi_norm.iter().map(|&s| s * tau).collect()
}

/// Pseudo-label is the argmax (lowest index on ties); accepted iff its
/// confidence reaches that class's local threshold.
pub fn decide_pseudo_labels(weak_probs: &[ProbVector], sigma: &[f64]) -> Vec<PseudoLabelDecision> {
    weak_probs
        .iter()
        .map(|p| {
            let label = p.argmax();
            let confidence = p.get(label);
            PseudoLabelDecision {
                label,
                confidence,
                accepted: confidence >= sigma[label],
            }
        })
        .collect()
}
