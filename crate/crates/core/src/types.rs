//! Value types shared by every stage of the pipeline.
//!
//! Probabilities are always stored post-softmax. The model backend owns the
//! softmax; everything downstream (losses, thresholds, diagnostics) reads
//! [`ProbVector`]s.

use crate::error::{Error, Result};

/// Tolerance on `sum(p) == 1` accepted by [`ProbVector::new`].
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// Probabilities are clamped to this floor before taking a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// A categorical distribution over `C >= 2` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::contract(format!(
                "probability vector needs at least 2 classes, got {}",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::contract(format!("probability {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::contract(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self(probs))
    }

    /// Numerically stable softmax of a logit vector.
    pub fn softmax(logits: &[f64]) -> Self {
        debug_assert!(logits.len() >= 2);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        Self(probs)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    /// Highest class probability.
    pub fn max(&self) -> f64 {
        self.0[self.argmax()]
    }

    /// Index of the highest probability; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (c, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = c;
            }
        }
        best
    }
}

/// An encoder feature vector of dimension `D >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        if z.len() < 2 {
            return Err(Error::contract(format!(
                "embedding dimension must be at least 2, got {}",
                z.len()
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("embedding contains non-finite entries"));
        }
        Ok(Self(z))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub x: Vec<f64>,
    pub y: usize,
}

impl LabeledExample {
    pub fn new(x: Vec<f64>, y: usize, classes: usize) -> Result<Self> {
        if y >= classes {
            return Err(Error::contract(format!(
                "label {y} out of range for {classes} classes"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("input contains non-finite entries"));
        }
        Ok(Self { x, y })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledExample {
    pub u: Vec<f64>,
}

impl UnlabeledExample {
    pub fn new(u: Vec<f64>) -> Result<Self> {
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("input contains non-finite entries"));
        }
        Ok(Self { u })
    }
}

/// Batch geometry: `labeled` samples per step and `mu` unlabeled per labeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchConfig {
    pub labeled: usize,
    pub mu: usize,
    pub classes: usize,
    pub embed_dim: usize,
}

impl BatchConfig {
    pub fn new(labeled: usize, mu: usize, classes: usize, embed_dim: usize) -> Result<Self> {
        if labeled == 0 {
            return Err(Error::config("labeled batch size must be at least 1"));
        }
        if mu == 0 {
            return Err(Error::config("unlabeled ratio mu must be at least 1"));
        }
        if classes < 2 {
            return Err(Error::config("at least 2 classes are required"));
        }
        Ok(Self {
            labeled,
            mu,
            classes,
            embed_dim,
        })
    }

    pub fn unlabeled(&self) -> usize {
        self.mu * self.labeled
    }
}

/// `-log p[target]` with the probability clamped to [`LOG_CLAMP`].
pub fn cross_entropy(target: usize, p: &ProbVector) -> Result<f64> {
    if target >= p.classes() {
        return Err(Error::contract(format!(
            "target {target} out of range for {} classes",
            p.classes()
        )));
    }
    Ok(-p.get(target).max(LOG_CLAMP).ln())
}

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::contract(format!(
            "embedding dimensions differ ({} vs {})",
            a.dim(),
            b.dim()
        )));
    }
    cosine(a.as_slice(), b.as_slice())
        .ok_or_else(|| Error::degenerate("cosine similarity of a zero-norm embedding"))
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity on raw slices; `None` when either norm is zero.
pub(crate) fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}
