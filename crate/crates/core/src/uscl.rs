//! Contrastive loss over unreliable (rejected) unlabeled samples.
//!
//! For every rejected sample the weak and strong views are compared against
//! the weak-view embeddings of the rest of the batch. Candidates that are
//! close under both views form the positive set; their mean is the positive
//! prototype. Negatives are sampled uniformly from the remaining candidates.
//! The loss is InfoNCE with the temperature applied to every logit.

use rand::Rng;

use crate::error::{Error, Result};
use crate::satpl::PseudoLabelDecision;
use crate::types::{cosine, dot, l2_norm, Embedding};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_EPS_WEAK: f64 = 0.8;
pub const DEFAULT_EPS_STRONG: f64 = 0.6;
pub const DEFAULT_NEGATIVES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    /// Threshold on the weak-view relation mass.
    pub eps_weak: f64,
    /// Threshold on the strong-view relation mass.
    pub eps_strong: f64,
    pub negatives: usize,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            eps_weak: DEFAULT_EPS_WEAK,
            eps_strong: DEFAULT_EPS_STRONG,
            negatives: DEFAULT_NEGATIVES,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("contrastive temperature must be positive"));
        }
        for eps in [self.eps_weak, self.eps_strong] {
            if !(0.0..1.0).contains(&eps) {
                return Err(Error::config(format!("similarity threshold {eps} must lie in [0, 1)")));
            }
        }
        if self.negatives == 0 {
            return Err(Error::config("negative count must be at least 1"));
        }
        Ok(())
    }
}

/// Softmax over temperature-scaled cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationDistribution {
    gamma: Vec<f64>,
    temperature: f64,
}

impl RelationDistribution {
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }
}

pub fn relation_distribution<'a, I>(
    anchor: &Embedding,
    candidates: I,
    temperature: f64,
) -> Result<RelationDistribution>
where
    I: IntoIterator<Item = &'a Embedding>,
{
    if !(temperature > 0.0) {
        return Err(Error::contract("temperature must be positive"));
    }
    let logits = candidates
        .into_iter()
        .map(|c| {
            cosine(anchor.as_slice(), c.as_slice())
                .map(|s| s / temperature)
                .ok_or_else(|| Error::degenerate("zero-norm embedding in relation distribution"))
        })
        .collect::<Result<Vec<f64>>>()?;
    if logits.is_empty() {
        return Err(Error::degenerate("relation distribution over no candidates"));
    }
    Ok(RelationDistribution {
        gamma: softmax(&logits),
        temperature,
    })
}

/// Candidates whose weak mass exceeds `eps_weak` and strong mass exceeds
/// `eps_strong`. `candidate_ids[j]` names the sample behind `gamma_*[j]`;
/// the anchor itself is never returned.
pub fn select_positive_set(
    anchor: usize,
    candidate_ids: &[usize],
    gamma_weak: &RelationDistribution,
    gamma_strong: &RelationDistribution,
    eps_weak: f64,
    eps_strong: f64,
) -> Vec<usize> {
    debug_assert_eq!(candidate_ids.len(), gamma_weak.len());
    debug_assert_eq!(candidate_ids.len(), gamma_strong.len());
    candidate_ids
        .iter()
        .zip(gamma_weak.gamma.iter().zip(&gamma_strong.gamma))
        .filter(|(&id, (&w, &s))| id != anchor && w > eps_weak && s > eps_strong)
        .map(|(&id, _)| id)
        .collect()
}

/// Element-wise mean; `None` for an empty positive set.
pub fn positive_prototype(members: &[&Embedding]) -> Option<Embedding> {
    let first = members.first()?;
    let mut mean = vec![0.0; first.dim()];
    for m in members {
        for (acc, v) in mean.iter_mut().zip(m.as_slice()) {
            *acc += v;
        }
    }
    let n = members.len() as f64;
    for v in &mut mean {
        *v /= n;
    }
    Embedding::new(mean).ok()
}

/// Uniform sample without replacement from `candidates \ exclusion`,
/// returning `min(count, available)` ids.
pub fn sample_negatives<R: Rng + ?Sized>(
    candidates: &[usize],
    exclusion: &[usize],
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let eligible: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|c| !exclusion.contains(c))
        .collect();
    if eligible.is_empty() {
        return Err(Error::degenerate("no negatives available"));
    }
    if count >= eligible.len() {
        return Ok(eligible);
    }
    Ok(rand::seq::index::sample(rng, eligible.len(), count)
        .into_iter()
        .map(|i| eligible[i])
        .collect())
}

/// One contrastive term: an anchor, its positive set and its negatives, all
/// as indices into the batch's weak-view embeddings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorTerm {
    pub anchor: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatchPlan {
    pub terms: Vec<AnchorTerm>,
    /// Rejected samples that contribute no term (empty positive set, no
    /// negatives, or a degenerate embedding).
    pub skipped: usize,
    /// Normalizer of the loss, the unlabeled batch size.
    pub batch_size: usize,
    pub temperature: f64,
    /// Candidates per anchor.
    pub candidates: usize,
}

impl ContrastiveBatchPlan {
    pub fn empty(batch_size: usize, temperature: f64) -> Self {
        Self {
            terms: Vec::new(),
            skipped: 0,
            batch_size,
            temperature,
            candidates: batch_size.saturating_sub(1),
        }
    }

    pub fn anchors(&self) -> usize {
        self.terms.len()
    }

    pub fn mean_positive_set(&self) -> f64 {
        if self.terms.is_empty() {
            return 0.0;
        }
        self.terms.iter().map(|t| t.positives.len()).sum::<usize>() as f64 / self.terms.len() as f64
    }

    pub fn prototype(&self, term: &AnchorTerm, embeddings: &[Embedding]) -> Option<Embedding> {
        let members: Vec<&Embedding> = term.positives.iter().map(|&j| &embeddings[j]).collect();
        positive_prototype(&members)
    }
}

/// Builds the contrastive plan for one unlabeled batch. Every rejected sample
/// is either an anchor term or counted in `skipped`.
pub fn build_contrastive_plan<R: Rng + ?Sized>(
    weak: &[Embedding],
    strong: &[Embedding],
    decisions: &[PseudoLabelDecision],
    config: &ContrastiveConfig,
    rng: &mut R,
) -> Result<ContrastiveBatchPlan> {
    if weak.len() != strong.len() || weak.len() != decisions.len() {
        return Err(Error::contract("weak, strong and decision batches differ in length"));
    }
    let n = weak.len();
    let mut plan = ContrastiveBatchPlan::empty(n, config.temperature);
    for (i, decision) in decisions.iter().enumerate() {
        if decision.accepted {
            continue;
        }
        match plan_anchor(i, weak, strong, config, rng) {
            Some(term) => plan.terms.push(term),
            None => plan.skipped += 1,
        }
    }
    Ok(plan)
}

fn plan_anchor<R: Rng + ?Sized>(
    anchor: usize,
    weak: &[Embedding],
    strong: &[Embedding],
    config: &ContrastiveConfig,
    rng: &mut R,
) -> Option<AnchorTerm> {
    let ids: Vec<usize> = (0..weak.len()).filter(|&j| j != anchor).collect();
    if ids.is_empty() {
        return None;
    }
    let gamma_w = relation_distribution(&weak[anchor], ids.iter().map(|&j| &weak[j]), config.temperature).ok()?;
    let gamma_s = relation_distribution(&strong[anchor], ids.iter().map(|&j| &weak[j]), config.temperature).ok()?;
    let positives = select_positive_set(anchor, &ids, &gamma_w, &gamma_s, config.eps_weak, config.eps_strong);
    let members: Vec<&Embedding> = positives.iter().map(|&j| &weak[j]).collect();
    let prototype = positive_prototype(&members)?;
    if prototype.norm() == 0.0 {
        return None;
    }
    let negatives = sample_negatives(&ids, &positives, config.negatives, rng).ok()?;
    if negatives.iter().any(|&j| weak[j].norm() == 0.0) {
        return None;
    }
    Some(AnchorTerm {
        anchor,
        positives,
        negatives,
    })
}

/// Mean over the batch of the per-anchor InfoNCE terms. Zero with no anchors.
pub fn unreliable_contrastive_loss(plan: &ContrastiveBatchPlan, embeddings: &[Embedding]) -> Result<f64> {
    let mut total = 0.0;
    for term in &plan.terms {
        total += anchor_term(plan, term, embeddings, None)?;
    }
    Ok(normalize(total, plan))
}

/// Loss value together with its gradient with respect to every embedding in
/// `embeddings` (anchors, prototype members and negatives all receive flow).
pub fn contrastive_loss_and_grad(
    plan: &ContrastiveBatchPlan,
    embeddings: &[Embedding],
) -> Result<(f64, Vec<Vec<f64>>)> {
    let dim = embeddings.first().map_or(0, Embedding::dim);
    let mut grads = vec![vec![0.0; dim]; embeddings.len()];
    let mut total = 0.0;
    for term in &plan.terms {
        total += anchor_term(plan, term, embeddings, Some(&mut grads))?;
    }
    if plan.batch_size > 0 {
        let scale = 1.0 / plan.batch_size as f64;
        for g in grads.iter_mut().flatten() {
            *g *= scale;
        }
    }
    Ok((normalize(total, plan), grads))
}

fn normalize(total: f64, plan: &ContrastiveBatchPlan) -> f64 {
    if plan.terms.is_empty() {
        0.0
    } else {
        total / plan.batch_size as f64
    }
}

/// `-log softmax(logits)[0]` where logit 0 is the positive. When `grads` is
/// given, accumulates the unnormalized gradient of the term into it.
fn anchor_term(
    plan: &ContrastiveBatchPlan,
    term: &AnchorTerm,
    embeddings: &[Embedding],
    grads: Option<&mut Vec<Vec<f64>>>,
) -> Result<f64> {
    if term.positives.is_empty() || term.negatives.is_empty() {
        return Err(Error::contract("anchor term needs positives and negatives"));
    }
    let t = plan.temperature;
    let anchor = embeddings[term.anchor].as_slice();
    let prototype = plan
        .prototype(term, embeddings)
        .ok_or_else(|| Error::contract("empty positive set"))?;
    let others: Vec<&[f64]> = std::iter::once(prototype.as_slice())
        .chain(term.negatives.iter().map(|&j| embeddings[j].as_slice()))
        .collect();
    let sims = others
        .iter()
        .map(|o| cosine(anchor, o).ok_or_else(|| Error::degenerate("zero-norm embedding in contrastive term")))
        .collect::<Result<Vec<f64>>>()?;
    let logits: Vec<f64> = sims.iter().map(|s| s / t).collect();
    let loss = neg_log_softmax_first(&logits);

    if let Some(grads) = grads {
        let weights = softmax(&logits);
        let mut d_anchor = vec![0.0; anchor.len()];
        let mut d_prototype = vec![0.0; anchor.len()];
        for (k, other) in others.iter().enumerate() {
            let d_sim = (weights[k] - if k == 0 { 1.0 } else { 0.0 }) / t;
            let (da, db) = cosine_grad(anchor, other, sims[k]);
            for (acc, v) in d_anchor.iter_mut().zip(&da) {
                *acc += d_sim * v;
            }
            let target = if k == 0 {
                &mut d_prototype
            } else {
                &mut grads[term.negatives[k - 1]]
            };
            for (acc, v) in target.iter_mut().zip(&db) {
                *acc += d_sim * v;
            }
        }
        for (acc, v) in grads[term.anchor].iter_mut().zip(&d_anchor) {
            *acc += v;
        }
        let share = 1.0 / term.positives.len() as f64;
        for &j in &term.positives {
            for (acc, v) in grads[j].iter_mut().zip(&d_prototype) {
                *acc += share * v;
            }
        }
    }
    Ok(loss)
}

/// Partial derivatives of `cos(a, b)` with respect to `a` and `b`.
fn cosine_grad(a: &[f64], b: &[f64], cos: f64) -> (Vec<f64>, Vec<f64>) {
    let (na, nb) = (l2_norm(a), l2_norm(b));
    let inv = 1.0 / (na * nb);
    let da = a
        .iter()
        .zip(b)
        .map(|(x, y)| y * inv - cos * x / (na * na))
        .collect();
    let db = a
        .iter()
        .zip(b)
        .map(|(x, y)| x * inv - cos * y / (nb * nb))
        .collect();
    debug_assert!((dot(a, b) * inv - cos).abs() < 1e-9);
    (da, db)
}

/// `ln(sum(exp(l)))`, pulling the largest term out so tiny tails survive.
/// `-log softmax(logits)[0]`, arranged so a dominant first logit keeps the
/// full relative precision of the small result.
fn neg_log_softmax_first(logits: &[f64]) -> f64 {
    let mut top = 0;
    for (k, &l) in logits.iter().enumerate() {
        if l > logits[top] {
            top = k;
        }
    }
    let max = logits[top];
    let tail: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != top)
        .map(|(_, l)| (l - max).exp())
        .sum();
    (max - logits[0]) + tail.ln_1p()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn dist(gamma: &[f64]) -> RelationDistribution {
        RelationDistribution {
            gamma: gamma.to_vec(),
            temperature: 0.1,
        }
    }

    fn single_term_plan(batch_size: usize) -> ContrastiveBatchPlan {
        ContrastiveBatchPlan {
            terms: vec![AnchorTerm {
                anchor: 0,
                positives: vec![1],
                negatives: vec![2],
            }],
            skipped: 0,
            batch_size,
            temperature: 0.1,
            candidates: 2,
        }
    }

    #[test]
    fn relation_distribution_examples() {
        let a = emb(&[1.0, 0.0]);
        let g = relation_distribution(&a, [&emb(&[0.3, 0.7])], 0.1).unwrap();
        assert_eq!(g.gamma(), &[1.0]);

        let g = relation_distribution(&a, [&emb(&[1.0, 1.0]), &emb(&[1.0, -1.0])], 0.1).unwrap();
        assert!((g.gamma()[0] - 0.5).abs() < 1e-15 && (g.gamma()[1] - 0.5).abs() < 1e-15);

        let g = relation_distribution(&a, [&emb(&[1.0, 0.0]), &emb(&[0.0, 1.0])], 0.1).unwrap();
        let e = (-10.0f64).exp();
        assert!((g.gamma()[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((g.gamma()[1] - e / (1.0 + e)).abs() < 1e-15);
        assert!((g.gamma()[0] - 0.999_954_6).abs() < 1e-7);
    }

    #[test]
    fn relation_distribution_errors() {
        let a = emb(&[1.0, 0.0]);
        assert!(relation_distribution(&a, [&emb(&[0.0, 0.0])], 0.1).is_err());
        assert!(relation_distribution(&a, std::iter::empty(), 0.1).is_err());
        assert!(relation_distribution(&a, [&emb(&[1.0, 0.0])], 0.0).is_err());
    }

    #[test]
    fn relation_sharpens_as_temperature_drops() {
        let a = emb(&[1.0, 0.2]);
        let c = [emb(&[1.0, 0.0]), emb(&[0.5, 0.5]), emb(&[-1.0, 0.3])];
        let soft = relation_distribution(&a, &c, 1.0).unwrap();
        let sharp = relation_distribution(&a, &c, 1e-3).unwrap();
        assert!(sharp.gamma()[0] > soft.gamma()[0]);
        assert!(sharp.gamma()[0] > 1.0 - 1e-12);
    }

    #[test]
    fn positive_set_examples() {
        let picked = select_positive_set(9, &[0, 1], &dist(&[0.9, 0.1]), &dist(&[0.7, 0.3]), 0.8, 0.6);
        assert_eq!(picked, vec![0]);

        let uniform = vec![1.0 / 50.0; 50];
        let ids: Vec<usize> = (0..50).collect();
        assert!(select_positive_set(99, &ids, &dist(&uniform), &dist(&uniform), 0.99, 0.6).is_empty());

        let picked = select_positive_set(9, &[0, 1, 2], &dist(&[0.5, 0.3, 0.2]), &dist(&[0.01, 0.01, 0.98]), 0.25, 0.0);
        assert_eq!(picked, vec![0, 1]);
    }

    #[test]
    fn positive_set_never_contains_anchor() {
        let picked = select_positive_set(1, &[0, 1], &dist(&[0.05, 0.95]), &dist(&[0.05, 0.95]), 0.5, 0.5);
        assert!(picked.is_empty());
    }

    #[test]
    fn prototype_examples() {
        let (a, b, c) = (emb(&[1.0, 0.0]), emb(&[0.0, 1.0]), emb(&[2.0, 2.0]));
        assert_eq!(positive_prototype(&[&a]).unwrap().as_slice(), &[1.0, 0.0]);
        assert_eq!(positive_prototype(&[&a, &b]).unwrap().as_slice(), &[0.5, 0.5]);
        let (d, e) = (emb(&[4.0, 0.0]), emb(&[0.0, 4.0]));
        assert_eq!(positive_prototype(&[&c, &d, &e]).unwrap().as_slice(), &[2.0, 2.0]);
        assert!(positive_prototype(&[]).is_none());
    }

    #[test]
    fn negatives_exhaust_and_exclude() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let got = sample_negatives(&[0, 1, 2, 3], &[1], 10, &mut rng).unwrap();
        assert_eq!(got, vec![0, 2, 3]);
        assert!(sample_negatives(&[0, 1], &[0, 1], 3, &mut rng).is_err());
        let a = sample_negatives(&(0..20).collect::<Vec<_>>(), &[3], 5, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_negatives(&(0..20).collect::<Vec<_>>(), &[3], 5, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert!(!a.contains(&3));
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 5);
    }

    #[test]
    fn loss_examples() {
        // sim(anchor, prototype) = 1, sim(anchor, negative) = -1.
        let e = [emb(&[1.0, 0.0]), emb(&[1.0, 0.0]), emb(&[-1.0, 0.0])];
        let loss = unreliable_contrastive_loss(&single_term_plan(1), &e).unwrap();
        // -log(e^10 / (e^10 + e^-10)) = ln(1 + e^-20)
        let expected = (-20.0f64).exp().ln_1p();
        assert!((loss - expected).abs() <= 1e-15 * expected);
        assert!((loss - 2.061e-9).abs() < 1e-12);

        // Prototype equals the only negative.
        let e = [emb(&[1.0, 0.0]), emb(&[0.6, 0.8]), emb(&[0.6, 0.8])];
        let loss = unreliable_contrastive_loss(&single_term_plan(1), &e).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);

        let empty = ContrastiveBatchPlan::empty(8, 0.1);
        assert_eq!(unreliable_contrastive_loss(&empty, &e).unwrap(), 0.0);
    }

    #[test]
    fn loss_is_scale_invariant_and_monotone() {
        let base = [emb(&[1.0, 0.2]), emb(&[0.7, 0.5]), emb(&[-0.3, 1.0])];
        let plan = single_term_plan(3);
        let l0 = unreliable_contrastive_loss(&plan, &base).unwrap();
        let scaled: Vec<Embedding> = base.iter().map(|e| emb(&e.as_slice().iter().map(|v| v * 7.5).collect::<Vec<_>>())).collect();
        assert!((unreliable_contrastive_loss(&plan, &scaled).unwrap() - l0).abs() < 1e-12);

        // Rotate the positive toward the anchor: loss must drop.
        let closer = [base[0].clone(), emb(&[0.9, 0.3]), base[2].clone()];
        assert!(unreliable_contrastive_loss(&plan, &closer).unwrap() < l0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let raw = vec![
            vec![0.3, -0.2, 0.9],
            vec![0.5, 0.1, 0.4],
            vec![-0.6, 0.8, 0.1],
            vec![0.2, 0.2, -0.7],
            vec![0.9, -0.4, 0.3],
        ];
        let plan = ContrastiveBatchPlan {
            terms: vec![
                AnchorTerm { anchor: 0, positives: vec![1, 4], negatives: vec![2, 3] },
                AnchorTerm { anchor: 2, positives: vec![3], negatives: vec![0, 1, 4] },
            ],
            skipped: 0,
            batch_size: 5,
            temperature: 0.1,
            candidates: 4,
        };
        let eval = |r: &[Vec<f64>]| {
            let e: Vec<Embedding> = r.iter().map(|v| emb(v)).collect();
            unreliable_contrastive_loss(&plan, &e).unwrap()
        };
        let e: Vec<Embedding> = raw.iter().map(|v| emb(v)).collect();
        let (loss, grads) = contrastive_loss_and_grad(&plan, &e).unwrap();
        assert!((loss - eval(&raw)).abs() < 1e-15);
        let h = 1e-6;
        for i in 0..raw.len() {
            for k in 0..3 {
                let mut p = raw.clone();
                p[i][k] += h;
                let mut m = raw.clone();
                m[i][k] -= h;
                let fd = (eval(&p) - eval(&m)) / (2.0 * h);
                assert!((fd - grads[i][k]).abs() < 1e-7, "({i},{k}): fd {fd} vs {}", grads[i][k]);
            }
        }
    }

    #[test]
    fn reduction_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let e: Vec<Embedding> = (0..12)
            .map(|_| emb(&(0..4).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let terms: Vec<AnchorTerm> = (0..6)
            .map(|a| AnchorTerm { anchor: a, positives: vec![a + 6], negatives: vec![(a + 1) % 6, (a + 7) % 12] })
            .collect();
        let mut plan = ContrastiveBatchPlan { terms, skipped: 0, batch_size: 12, temperature: 0.1, candidates: 11 };
        let forward = unreliable_contrastive_loss(&plan, &e).unwrap();
        plan.terms.reverse();
        let backward = unreliable_contrastive_loss(&plan, &e).unwrap();
        assert!((forward - backward).abs() < 1e-9);
    }

    #[test]
    fn plan_partitions_rejected_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let weak: Vec<Embedding> = (0..16)
            .map(|i| emb(&[((i % 4) as f64) - 1.5, 1.0 + (i / 4) as f64 * 0.01]))
            .collect();
        let strong = weak.clone();
        let decisions: Vec<PseudoLabelDecision> = (0..16)
            .map(|i| PseudoLabelDecision { label: 0, confidence: 0.5, accepted: i % 3 == 0 })
            .collect();
        let cfg = ContrastiveConfig { eps_weak: 0.05, eps_strong: 0.05, negatives: 4, ..Default::default() };
        let plan = build_contrastive_plan(&weak, &strong, &decisions, &cfg, &mut rng).unwrap();
        let accepted = decisions.iter().filter(|d| d.accepted).count();
        assert_eq!(accepted + plan.anchors() + plan.skipped, 16);
        for t in &plan.terms {
            assert!(!decisions[t.anchor].accepted);
            assert!(!t.positives.contains(&t.anchor));
            assert!(t.negatives.iter().all(|n| !t.positives.contains(n) && *n != t.anchor));
        }
    }

    #[test]
    fn negative_sampling_is_uniform() {
        let candidates: Vec<usize> = (0..10).collect();
        let exclusion = [2, 7];
        let draws = 10_000;
        let mut counts = [0usize; 10];
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..draws {
            for j in sample_negatives(&candidates, &exclusion, 1, &mut rng).unwrap() {
                counts[j] += 1;
            }
        }
        let p = 1.0 / 8.0;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for (j, &c) in counts.iter().enumerate() {
            if exclusion.contains(&j) {
                assert_eq!(c, 0);
            } else {
                assert!((c as f64 - draws as f64 * p).abs() <= 3.0 * sd, "candidate {j}: {c}");
            }
        }
    }
}
