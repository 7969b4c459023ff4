//! Desk-scale datasets, labeled/unlabeled splitting and batch drawing.
//!
//! Generators return fully labeled datasets; [`split_ssl`] moves all but a
//! fixed number of examples per class into the unlabeled pool. The true
//! labels of the unlabeled pool live in [`HiddenLabels`], which the batch
//! sampler never reads: unlabeled batches carry pool indices and views only.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::augment::{augment_strong, augment_weak, AugmentPair, ImageShape};
use crate::error::{Error, Result};
use crate::types::{BatchConfig, LabeledExample, UnlabeledExample};

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// True labels of the unlabeled pool, for diagnostics only. A label equal to
/// the class count marks an out-of-distribution distractor.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HiddenLabels(Vec<usize>);

impl HiddenLabels {
    pub fn label(&self, pool_index: usize) -> usize {
        self.0[pool_index]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SslDataset {
    pub labeled: Vec<LabeledExample>,
    pub unlabeled: Vec<UnlabeledExample>,
    hidden: HiddenLabels,
    pub classes: usize,
    pub input_dim: usize,
    pub image: Option<ImageShape>,
}

impl SslDataset {
    pub fn fully_labeled(examples: Vec<LabeledExample>, classes: usize, input_dim: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::config("dataset needs at least 2 classes"));
        }
        if let Some(bad) = examples.iter().find(|e| e.y >= classes || e.x.len() != input_dim) {
            return Err(Error::contract(format!(
                "example with label {} and {} features does not fit {classes} classes x {input_dim} dims",
                bad.y,
                bad.x.len()
            )));
        }
        Ok(Self {
            labeled: examples,
            unlabeled: Vec::new(),
            hidden: HiddenLabels::default(),
            classes,
            input_dim,
            image: None,
        })
    }

    pub fn hidden_labels(&self) -> &HiddenLabels {
        &self.hidden
    }

    /// Replaces the hidden labels; used to check that training never reads them.
    pub fn with_hidden_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.unlabeled.len() {
            return Err(Error::contract("hidden label count differs from the unlabeled pool"));
        }
        self.hidden = HiddenLabels(labels);
        Ok(self)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for e in &self.labeled {
            counts[e.y] += 1;
        }
        counts
    }
}

/// Two interleaved half circles, `n / 2` on the outer arc (class 0) and the
/// rest on the inner arc (class 1), with isotropic Gaussian noise.
pub fn make_two_moons(n: usize, noise: f64, seed: u64) -> Result<SslDataset> {
    if n < 4 {
        return Err(Error::config("two moons needs at least 4 points"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_outer = n / 2;
    let n_inner = n - n_outer;
    let mut examples = Vec::with_capacity(n);
    for (count, class) in [(n_outer, 0usize), (n_inner, 1usize)] {
        for i in 0..count {
            let theta = PI * i as f64 / (count - 1).max(1) as f64;
            let (mut x, mut y) = if class == 0 {
                (theta.cos(), theta.sin())
            } else {
                (1.0 - theta.cos(), 0.5 - theta.sin())
            };
            if noise > 0.0 {
                x += noise * gaussian(&mut rng);
                y += noise * gaussian(&mut rng);
            }
            examples.push(LabeledExample { x: vec![x, y], y: class });
        }
    }
    examples.shuffle(&mut rng);
    SslDataset::fully_labeled(examples, 2, 2)
}

/// Gaussian clusters with per-class spread. `spreads` has one entry shared by
/// all classes or one per class. Centers are spaced evenly on a circle of
/// radius 4 in the plane.
pub fn make_blobs(classes: usize, n: usize, spreads: &[f64], seed: u64) -> Result<SslDataset> {
    if classes < 2 {
        return Err(Error::config("blobs need at least 2 classes"));
    }
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            let angle = 2.0 * PI * c as f64 / classes as f64;
            vec![4.0 * angle.cos(), 4.0 * angle.sin()]
        })
        .collect();
    make_blobs_at(&centers, n, spreads, seed)
}

/// Gaussian clusters around explicit centers; `n` points split round-robin.
pub fn make_blobs_at(centers: &[Vec<f64>], n: usize, spreads: &[f64], seed: u64) -> Result<SslDataset> {
    let classes = centers.len();
    if classes < 2 {
        return Err(Error::config("blobs need at least 2 classes"));
    }
    let dim = centers[0].len();
    if dim == 0 || centers.iter().any(|c| c.len() != dim) {
        return Err(Error::config("blob centers must share a positive dimension"));
    }
    if !(spreads.len() == 1 || spreads.len() == classes) || spreads.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::config("spreads must be non-negative, one shared or one per class"));
    }
    if n < 2 * classes {
        return Err(Error::config("need at least two points per class"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let spread = spreads[if spreads.len() == 1 { 0 } else { c }];
        let x = centers[c]
            .iter()
            .map(|&m| m + spread * gaussian(&mut rng))
            .collect();
        examples.push(LabeledExample { x, y: c });
    }
    examples.shuffle(&mut rng);
    SslDataset::fully_labeled(examples, classes, dim)
}

/// Shuffles the labeled examples and moves `count` of them into a held-out
/// evaluation set.
pub fn hold_out(dataset: &SslDataset, count: usize, seed: u64) -> Result<(SslDataset, Vec<LabeledExample>)> {
    if count >= dataset.labeled.len() {
        return Err(Error::config(format!(
            "cannot hold out {count} of {} examples",
            dataset.labeled.len()
        )));
    }
    let mut examples = dataset.labeled.clone();
    examples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = examples.split_off(count);
    let mut out = dataset.clone();
    out.labeled = train;
    Ok((out, examples))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelsPerClass {
    Count(usize),
    All,
}

/// Keeps exactly `labels_per_class` labeled examples per class and moves the
/// rest to the unlabeled pool, retaining their labels as hidden labels.
pub fn split_ssl(dataset: &SslDataset, labels_per_class: LabelsPerClass, seed: u64) -> Result<SslDataset> {
    let mut by_class: Vec<Vec<&LabeledExample>> = vec![Vec::new(); dataset.classes];
    for e in &dataset.labeled {
        by_class[e.y].push(e);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labeled = Vec::new();
    let mut rest = Vec::new();
    for (class, members) in by_class.iter_mut().enumerate() {
        let keep = match labels_per_class {
            LabelsPerClass::All => members.len(),
            LabelsPerClass::Count(k) => {
                if members.len() < k {
                    return Err(Error::config(format!(
                        "class {class} has {} examples, {k} labels requested",
                        members.len()
                    )));
                }
                k
            }
        };
        members.shuffle(&mut rng);
        labeled.extend(members[..keep].iter().map(|e| (*e).clone()));
        rest.extend(members[keep..].iter().map(|e| (*e).clone()));
    }
    rest.shuffle(&mut rng);
    let mut out = dataset.clone();
    out.labeled = labeled;
    out.unlabeled.clear();
    let mut hidden = Vec::with_capacity(rest.len());
    for e in rest {
        out.unlabeled.push(UnlabeledExample { u: e.x });
        hidden.push(e.y);
    }
    out.unlabeled.extend(dataset.unlabeled.iter().cloned());
    hidden.extend_from_slice(dataset.hidden.as_slice());
    out.hidden = HiddenLabels(hidden);
    Ok(out)
}

/// Appends out-of-distribution samples to the unlabeled pool, a `fraction`
/// of its current size, drawn from a Gaussian centred outside the data's
/// bounding box. Their hidden label is the class count.
pub fn with_distractors(dataset: &SslDataset, fraction: f64, seed: u64) -> Result<SslDataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::config("distractor fraction must lie in [0, 1]"));
    }
    let mut out = dataset.clone();
    let count = (dataset.unlabeled.len() as f64 * fraction).round() as usize;
    if count == 0 {
        return Ok(out);
    }
    let dim = dataset.input_dim;
    let mut hi = vec![f64::NEG_INFINITY; dim];
    let mut lo = vec![f64::INFINITY; dim];
    for x in dataset.labeled.iter().map(|e| &e.x).chain(dataset.unlabeled.iter().map(|u| &u.u)) {
        for k in 0..dim {
            hi[k] = hi[k].max(x[k]);
            lo[k] = lo[k].min(x[k]);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hidden = dataset.hidden.0.clone();
    for _ in 0..count {
        let u = (0..dim)
            .map(|k| {
                let span = (hi[k] - lo[k]).max(1e-3);
                hi[k] + 0.5 * span + 0.1 * span * gaussian(&mut rng)
            })
            .collect();
        out.unlabeled.push(UnlabeledExample { u });
        hidden.push(dataset.classes);
    }
    out.hidden = HiddenLabels(hidden);
    Ok(out)
}

/// A labeled batch of weak views.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// Unlabeled pool indices with their weak and strong views. No labels.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledBatch {
    pub indices: Vec<usize>,
    pub weak: Vec<Vec<f64>>,
    pub strong: Vec<Vec<f64>>,
}

/// Draws `B` labeled and `mu * B` unlabeled samples uniformly with
/// replacement and generates their augmented views.
pub fn next_batches<R: Rng + ?Sized>(
    dataset: &SslDataset,
    cfg: &BatchConfig,
    augment: &AugmentPair,
    rng: &mut R,
) -> Result<(LabeledBatch, UnlabeledBatch)> {
    if dataset.unlabeled.is_empty() {
        return Err(Error::degenerate("batch drawing needs non-empty labeled and unlabeled pools"));
    }
    let labeled = next_labeled_batch(dataset, cfg, augment, rng)?;
    let n = cfg.unlabeled();
    let mut unlabeled = UnlabeledBatch {
        indices: Vec::with_capacity(n),
        weak: Vec::with_capacity(n),
        strong: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let idx = rng.random_range(0..dataset.unlabeled.len());
        let u = &dataset.unlabeled[idx].u;
        unlabeled.indices.push(idx);
        unlabeled.weak.push(augment_weak(u, augment.weak(), rng));
        unlabeled.strong.push(augment_strong(u, augment.strong(), rng));
    }
    Ok((labeled, unlabeled))
}

/// Draws only the labeled half of a batch.
pub fn next_labeled_batch<R: Rng + ?Sized>(
    dataset: &SslDataset,
    cfg: &BatchConfig,
    augment: &AugmentPair,
    rng: &mut R,
) -> Result<LabeledBatch> {
    if dataset.labeled.is_empty() {
        return Err(Error::degenerate("batch drawing needs a non-empty labeled pool"));
    }
    let mut labeled = LabeledBatch {
        inputs: Vec::with_capacity(cfg.labeled),
        labels: Vec::with_capacity(cfg.labeled),
    };
    for _ in 0..cfg.labeled {
        let e = &dataset.labeled[rng.random_range(0..dataset.labeled.len())];
        labeled.inputs.push(augment_weak(&e.x, augment.weak(), rng));
        labeled.labels.push(e.y);
    }
    Ok(labeled)
}

const TINY_MAGIC: &[u8; 4] = b"TIMG";
const TINY_VERSION: u16 = 1;

/// Grayscale tiny-image collection.
///
/// File layout, little-endian: magic `TIMG`, `u16` version (1), `u16` class
/// count, `u16` width, `u16` height, `u32` image count, then for each image
/// `width * height` row-major pixel bytes followed by one label byte.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TinyImageSet {
    pub classes: u16,
    pub width: u16,
    pub height: u16,
    pub images: Vec<Vec<u8>>,
    pub labels: Vec<u8>,
}

impl TinyImageSet {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TINY_MAGIC)?;
        w.write_all(&TINY_VERSION.to_le_bytes())?;
        w.write_all(&self.classes.to_le_bytes())?;
        w.write_all(&self.width.to_le_bytes())?;
        w.write_all(&self.height.to_le_bytes())?;
        w.write_all(&(self.images.len() as u32).to_le_bytes())?;
        for (img, &label) in self.images.iter().zip(&self.labels) {
            w.write_all(img)?;
            w.write_all(&[label])?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TINY_MAGIC {
            return Err(Error::format("not a tiny-image file"));
        }
        let mut u16b = [0u8; 2];
        let mut read_u16 = |r: &mut R| -> Result<u16> {
            r.read_exact(&mut u16b)?;
            Ok(u16::from_le_bytes(u16b))
        };
        let version = read_u16(&mut r)?;
        if version != TINY_VERSION {
            return Err(Error::format(format!("unsupported tiny-image version {version}")));
        }
        let classes = read_u16(&mut r)?;
        let width = read_u16(&mut r)?;
        let height = read_u16(&mut r)?;
        let mut u32b = [0u8; 4];
        r.read_exact(&mut u32b)?;
        let count = u32::from_le_bytes(u32b) as usize;
        let pixels = width as usize * height as usize;
        let mut images = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let mut img = vec![0u8; pixels];
            r.read_exact(&mut img)?;
            let mut label = [0u8; 1];
            r.read_exact(&mut label)?;
            if u16::from(label[0]) >= classes {
                return Err(Error::format(format!("label {} out of range", label[0])));
            }
            images.push(img);
            labels.push(label[0]);
        }
        Ok(Self {
            classes,
            width,
            height,
            images,
            labels,
        })
    }

    pub fn shape(&self) -> ImageShape {
        ImageShape {
            width: self.width as usize,
            height: self.height as usize,
        }
    }

    /// Pixels scaled to [0, 1].
    pub fn to_dataset(&self) -> Result<SslDataset> {
        let classes = self.classes as usize;
        let examples = self
            .images
            .iter()
            .zip(&self.labels)
            .map(|(img, &y)| LabeledExample {
                x: img.iter().map(|&p| f64::from(p) / 255.0).collect(),
                y: y as usize,
            })
            .collect();
        let mut ds = SslDataset::fully_labeled(examples, classes, self.shape().pixels())?;
        ds.image = Some(self.shape());
        Ok(ds)
    }
}

/// Synthetic 8x8 glyphs, one stroke pattern per class (up to 10), jittered
/// by up to one pixel and perturbed with pixel noise.
pub fn make_tiny_glyphs(classes: usize, n: usize, noise: f64, seed: u64) -> Result<TinyImageSet> {
    const SIDE: usize = 8;
    if !(2..=10).contains(&classes) {
        return Err(Error::config("tiny glyphs support 2 to 10 classes"));
    }
    let templates: Vec<Vec<(usize, usize)>> = vec![
        (1..7).map(|c| (3, c)).collect(),                          // horizontal bar
        (1..7).map(|r| (r, 3)).collect(),                          // vertical bar
        (1..7).map(|i| (i, i)).collect(),                          // diagonal
        (1..7).map(|i| (i, 7 - i)).collect(),                      // anti-diagonal
        (1..7).flat_map(|i| [(1, i), (6, i), (i, 1), (i, 6)]).collect(), // box
        (1..7).flat_map(|i| [(3, i), (i, 3)]).collect(),           // plus
        (1..7).flat_map(|i| [(i, i), (i, 7 - i)]).collect(),       // cross
        (1..7).flat_map(|i| [(1, i), (5, i)]).collect(),           // two bars
        (1..7).flat_map(|i| [(i, 1), (i, 5)]).collect(),           // two columns
        (2..6).flat_map(|r| (2..6).map(move |c| (r, c))).collect(), // filled square
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        let dr = rng.random_range(-1i64..=1);
        let dc = rng.random_range(-1i64..=1);
        let mut img = vec![0.0f64; SIDE * SIDE];
        for &(r, c) in &templates[class] {
            let (r, c) = (r as i64 + dr, c as i64 + dc);
            if (0..SIDE as i64).contains(&r) && (0..SIDE as i64).contains(&c) {
                img[r as usize * SIDE + c as usize] = 1.0;
            }
        }
        let bytes = img
            .iter()
            .map(|&v| {
                let z = gaussian(&mut rng);
                ((v + noise * z).clamp(0.0, 1.0) * 255.0).round() as u8
            })
            .collect();
        images.push(bytes);
        labels.push(class as u8);
    }
    Ok(TinyImageSet {
        classes: classes as u16,
        width: SIDE as u16,
        height: SIDE as u16,
        images,
        labels,
    })
}
