//! Weak and strong stochastic views.
//!
//! Vector inputs: weak adds Gaussian noise, strong adds larger Gaussian noise
//! and zeroes random coordinates. Tiny images: weak flips horizontally and
//! shifts by up to `max_shift` pixels; strong applies the weak pipeline, then
//! per-pixel noise and erases one square patch.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentKind {
    Weak,
    Strong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageShape {
    pub width: usize,
    pub height: usize,
}

impl ImageShape {
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPolicy {
    pub kind: AugmentKind,
    /// Std-dev of additive Gaussian noise (per coordinate / per pixel).
    pub noise_std: f64,
    /// Probability of zeroing each coordinate (vector inputs only).
    pub dropout_prob: f64,
    /// Probability of a horizontal flip (images only).
    pub flip_prob: f64,
    /// Maximum translation in pixels along each axis (images only).
    pub max_shift: usize,
    /// Side of the erased square patch; 0 disables erasing (images only).
    pub erase_size: usize,
    pub image: Option<ImageShape>,
}

impl AugmentPolicy {
    pub fn weak_vector(noise_std: f64) -> Self {
        Self {
            kind: AugmentKind::Weak,
            noise_std,
            dropout_prob: 0.0,
            flip_prob: 0.0,
            max_shift: 0,
            erase_size: 0,
            image: None,
        }
    }

    pub fn strong_vector(noise_std: f64, dropout_prob: f64) -> Self {
        Self {
            kind: AugmentKind::Strong,
            dropout_prob,
            ..Self::weak_vector(noise_std)
        }
    }

    pub fn weak_image(shape: ImageShape, flip_prob: f64, max_shift: usize) -> Self {
        Self {
            kind: AugmentKind::Weak,
            noise_std: 0.0,
            dropout_prob: 0.0,
            flip_prob,
            max_shift,
            erase_size: 0,
            image: Some(shape),
        }
    }

    pub fn strong_image(
        shape: ImageShape,
        flip_prob: f64,
        max_shift: usize,
        noise_std: f64,
        erase_size: usize,
    ) -> Self {
        Self {
            kind: AugmentKind::Strong,
            noise_std,
            erase_size,
            ..Self::weak_image(shape, flip_prob, max_shift)
        }
    }

    fn validate(&self) -> Result<()> {
        let probs = [self.dropout_prob, self.flip_prob];
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config(format!("noise std {} must be >= 0", self.noise_std)));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config("augmentation probabilities must lie in [0, 1]"));
        }
        if let Some(shape) = self.image {
            if shape.width == 0 || shape.height == 0 {
                return Err(Error::config("image shape must be non-empty"));
            }
            if self.erase_size > shape.width.min(shape.height) {
                return Err(Error::config("erase patch larger than the image"));
            }
        }
        Ok(())
    }

    fn magnitudes(&self) -> [f64; 5] {
        [
            self.noise_std,
            self.dropout_prob,
            self.flip_prob,
            self.max_shift as f64,
            self.erase_size as f64,
        ]
    }
}

/// A validated weak/strong policy pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPair {
    weak: AugmentPolicy,
    strong: AugmentPolicy,
}

impl AugmentPair {
    /// Every strong magnitude must be at least the weak one and at least one
    /// strictly larger. The all-zero pair (identity views) is also accepted.
    pub fn new(weak: AugmentPolicy, strong: AugmentPolicy) -> Result<Self> {
        if weak.kind != AugmentKind::Weak || strong.kind != AugmentKind::Strong {
            return Err(Error::config("augment pair needs one weak and one strong policy"));
        }
        weak.validate()?;
        strong.validate()?;
        if weak.image != strong.image {
            return Err(Error::config("weak and strong policies disagree on image shape"));
        }
        let (w, s) = (weak.magnitudes(), strong.magnitudes());
        let identity = w.iter().chain(&s).all(|&m| m == 0.0);
        let dominated = w.iter().zip(&s).all(|(a, b)| b >= a) && w.iter().zip(&s).any(|(a, b)| b > a);
        if !(dominated || identity) {
            return Err(Error::config(
                "strong augmentation must dominate the weak augmentation",
            ));
        }
        Ok(Self { weak, strong })
    }

    pub fn weak(&self) -> &AugmentPolicy {
        &self.weak
    }

    pub fn strong(&self) -> &AugmentPolicy {
        &self.strong
    }
}

pub fn augment_weak<R: Rng + ?Sized>(x: &[f64], policy: &AugmentPolicy, rng: &mut R) -> Vec<f64> {
    debug_assert_eq!(policy.kind, AugmentKind::Weak);
    match policy.image {
        Some(shape) => flip_and_shift(x, shape, policy, rng),
        None => add_noise(x.to_vec(), policy.noise_std, rng),
    }
}

pub fn augment_strong<R: Rng + ?Sized>(x: &[f64], policy: &AugmentPolicy, rng: &mut R) -> Vec<f64> {
    debug_assert_eq!(policy.kind, AugmentKind::Strong);
    match policy.image {
        Some(shape) => {
            let out = flip_and_shift(x, shape, policy, rng);
            let mut out = add_noise(out, policy.noise_std, rng);
            erase_patch(&mut out, shape, policy.erase_size, rng);
            out
        }
        None => {
            let mut out = Vec::with_capacity(x.len());
            for &v in x {
                let mut v = v + gaussian(policy.noise_std, rng);
                if policy.dropout_prob > 0.0 && rng.random::<f64>() < policy.dropout_prob {
                    v = 0.0;
                }
                out.push(v);
            }
            out
        }
    }
}

fn gaussian<R: Rng + ?Sized>(std: f64, rng: &mut R) -> f64 {
    if std == 0.0 {
        return 0.0;
    }
    let z: f64 = StandardNormal.sample(rng);
    std * z
}

fn add_noise<R: Rng + ?Sized>(mut x: Vec<f64>, std: f64, rng: &mut R) -> Vec<f64> {
    if std > 0.0 {
        for v in &mut x {
            *v += gaussian(std, rng);
        }
    }
    x
}

fn flip_and_shift<R: Rng + ?Sized>(
    x: &[f64],
    shape: ImageShape,
    policy: &AugmentPolicy,
    rng: &mut R,
) -> Vec<f64> {
    debug_assert_eq!(x.len(), shape.pixels());
    let flip = policy.flip_prob > 0.0 && rng.random::<f64>() < policy.flip_prob;
    let (dx, dy) = if policy.max_shift > 0 {
        let s = policy.max_shift as i64;
        (rng.random_range(-s..=s), rng.random_range(-s..=s))
    } else {
        (0, 0)
    };
    let (w, h) = (shape.width as i64, shape.height as i64);
    let mut out = vec![0.0; x.len()];
    for row in 0..h {
        for col in 0..w {
            // Output pixel (row, col) reads source (row - dy, col - dx) of the
            // (optionally mirrored) image; out-of-frame reads are zero.
            let src_row = row - dy;
            let mut src_col = col - dx;
            if !(0..h).contains(&src_row) || !(0..w).contains(&src_col) {
                continue;
            }
            if flip {
                src_col = w - 1 - src_col;
            }
            out[(row * w + col) as usize] = x[(src_row * w + src_col) as usize];
        }
    }
    out
}

fn erase_patch<R: Rng + ?Sized>(x: &mut [f64], shape: ImageShape, size: usize, rng: &mut R) {
    if size == 0 {
        return;
    }
    let top = rng.random_range(0..=shape.height - size);
    let left = rng.random_range(0..=shape.width - size);
    for row in top..top + size {
        for col in left..left + size {
            x[row * shape.width + col] = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn l2(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn zero_magnitude_is_identity() {
        let x = vec![0.3, -1.2, 4.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(augment_weak(&x, &AugmentPolicy::weak_vector(0.0), &mut rng), x);
        assert_eq!(augment_strong(&x, &AugmentPolicy::strong_vector(0.0, 0.0), &mut rng), x);
    }

    #[test]
    fn seeded_weak_noise_replays_generator() {
        let policy = AugmentPolicy::weak_vector(0.1);
        let out = augment_weak(&[0.0, 0.0], &policy, &mut ChaCha8Rng::seed_from_u64(42));

        // Replay the same generator by hand.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        assert_eq!(out, vec![0.1 * a, 0.1 * b]);
    }

    #[test]
    fn forced_flip_mirrors_rows() {
        let shape = ImageShape { width: 8, height: 8 };
        let x: Vec<f64> = (0..64).map(f64::from).collect();
        let policy = AugmentPolicy::weak_image(shape, 1.0, 0);
        let out = augment_weak(&x, &policy, &mut ChaCha8Rng::seed_from_u64(0));
        for row in 0..8 {
            for col in 0..8 {
                assert_eq!(out[row * 8 + col], x[row * 8 + 7 - col]);
            }
        }
    }

    #[test]
    fn shift_moves_content_and_zero_fills() {
        let shape = ImageShape { width: 4, height: 4 };
        let mut x = vec![0.0; 16];
        x[5] = 1.0; // (1, 1)
        let policy = AugmentPolicy::weak_image(shape, 0.0, 2);
        for seed in 0..50 {
            let out = augment_weak(&x, &policy, &mut ChaCha8Rng::seed_from_u64(seed));
            let lit: Vec<usize> = (0..16).filter(|&i| out[i] == 1.0).collect();
            assert!(lit.len() <= 1);
            if let Some(&i) = lit.first() {
                let (r, c) = ((i / 4) as i64, (i % 4) as i64);
                assert!((r - 1).abs() <= 2 && (c - 1).abs() <= 2);
            }
        }
    }

    #[test]
    fn strong_is_deterministic_and_shape_preserving() {
        let shape = ImageShape { width: 8, height: 8 };
        let x: Vec<f64> = (0..64).map(|i| (i as f64) / 64.0).collect();
        let policy = AugmentPolicy::strong_image(shape, 0.5, 2, 0.1, 3);
        let a = augment_strong(&x, &policy, &mut ChaCha8Rng::seed_from_u64(9));
        let b = augment_strong(&x, &policy, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);

        let v = AugmentPolicy::strong_vector(0.3, 0.2);
        let a = augment_strong(&[1.0, 2.0, 3.0], &v, &mut ChaCha8Rng::seed_from_u64(3));
        let b = augment_strong(&[1.0, 2.0, 3.0], &v, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
    }

    #[test]
    fn strong_perturbs_more_than_weak_on_average() {
        let x = vec![0.5, -0.25];
        let weak = AugmentPolicy::weak_vector(0.05);
        let strong = AugmentPolicy::strong_vector(0.15, 0.1);
        let (mut dw, mut ds) = (0.0, 0.0);
        for seed in 0..1000 {
            dw += l2(&augment_weak(&x, &weak, &mut ChaCha8Rng::seed_from_u64(seed)), &x);
            ds += l2(&augment_strong(&x, &strong, &mut ChaCha8Rng::seed_from_u64(seed)), &x);
        }
        assert!(ds > dw, "strong {ds} vs weak {dw}");
    }

    #[test]
    fn pair_requires_dominance() {
        let ok = AugmentPair::new(AugmentPolicy::weak_vector(0.05), AugmentPolicy::strong_vector(0.15, 0.1));
        assert!(ok.is_ok());
        let bad = AugmentPair::new(AugmentPolicy::weak_vector(0.2), AugmentPolicy::strong_vector(0.1, 0.5));
        assert!(matches!(bad, Err(Error::Config(_))));
        let swapped = AugmentPair::new(AugmentPolicy::strong_vector(0.2, 0.0), AugmentPolicy::weak_vector(0.1));
        assert!(swapped.is_err());
        let identity = AugmentPair::new(AugmentPolicy::weak_vector(0.0), AugmentPolicy::strong_vector(0.0, 0.0));
        assert!(identity.is_ok());
    }
}
