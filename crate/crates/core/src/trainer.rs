//! The training loop.
//!
//! Each iteration: labeled forward and supervised loss; weak-view forward;
//! class status, local thresholds and pseudo-label decisions; strong-view
//! forward; accepted samples feed the unsupervised loss and rejected samples
//! the contrastive plan; global threshold update; total loss, backward pass,
//! SGD step, parameter-EMA update and one metrics row.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::AugmentPair;
use crate::checkpoint::{Checkpoint, RngState, ThresholdSnapshot};
use crate::config::TrainConfig;
use crate::data::{next_batches, next_labeled_batch, SslDataset};
use crate::error::{Error, LossTerm, Result};
use crate::metrics::{batch_diagnostics, MetricsRow, PseudoLabelStats, TrainReport};
use crate::model::{BatchForward, EmaShadow, Mlp, Sgd, Upstream};
use crate::satpl::{decide_pseudo_labels, PseudoLabelDecision, ThresholdState};
use crate::types::{cross_entropy, BatchConfig, LabeledExample, ProbVector};
use crate::uscl::{build_contrastive_plan, contrastive_loss_and_grad, ContrastiveBatchPlan};

/// Stream offsets that keep the initialization and batch generators apart.
const INIT_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;

/// Contrastive weight at iteration `t`: `lambda_c0` at 0, then
/// `lambda_c0 * exp(-t / total)`.
pub fn contrastive_weight(t: u64, total: u64, lambda_c0: f64) -> f64 {
    if t == 0 {
        lambda_c0
    } else {
        lambda_c0 * (-(t as f64) / total as f64).exp()
    }
}

pub fn total_loss(loss_s: f64, loss_u: f64, loss_c: f64, lambda_u: f64, lambda_c: f64) -> f64 {
    loss_s + lambda_u * loss_u + lambda_c * loss_c
}

/// Learning rate at iteration `t`, optionally with cosine decay.
pub fn learning_rate(base: f64, t: u64, total: u64, cosine: bool) -> f64 {
    if cosine {
        base * (7.0 * PI * t as f64 / (16.0 * total as f64)).cos()
    } else {
        base
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

pub fn confusion_from_predictions(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Evaluation> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::contract("predictions and labels must be non-empty and equally long"));
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p >= classes || y >= classes {
            return Err(Error::contract(format!("class index out of range for {classes} classes")));
        }
        confusion[y][p] += 1;
    }
    let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / labels.len() as f64,
        confusion,
    })
}

/// Top-1 accuracy and confusion counts of `model` on a labeled set.
pub fn evaluate(model: &Mlp, eval_set: &[LabeledExample]) -> Result<Evaluation> {
    let inputs: Vec<Vec<f64>> = eval_set.iter().map(|e| e.x.clone()).collect();
    let fwd = model.forward_batch(&inputs)?;
    let predictions: Vec<usize> = fwd.probs.iter().map(ProbVector::argmax).collect();
    let labels: Vec<usize> = eval_set.iter().map(|e| e.y).collect();
    confusion_from_predictions(&predictions, &labels, model.architecture().classes)
}

/// The per-term values of the composite objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub supervised: f64,
    pub unsupervised: f64,
    pub contrastive: f64,
    pub total: f64,
}

/// A fully specified objective: inputs, pseudo-label decisions and the
/// contrastive plan are fixed, so the loss is a smooth function of the
/// parameters.
#[derive(Debug, Clone)]
pub struct CompositeBatch {
    pub labeled: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub weak: Vec<Vec<f64>>,
    pub strong: Vec<Vec<f64>>,
    pub decisions: Vec<PseudoLabelDecision>,
    pub plan: ContrastiveBatchPlan,
    pub lambda_u: f64,
    pub lambda_c: f64,
}

/// Loss value and parameter gradient of a composite batch.
pub fn composite_loss_and_grad(model: &Mlp, batch: &CompositeBatch) -> Result<(LossParts, Vec<f64>)> {
    let weak_fwd = model.forward_batch(&batch.weak)?;
    objective(model, batch, &weak_fwd, None, 0)
}

pub fn composite_loss(model: &Mlp, batch: &CompositeBatch) -> Result<LossParts> {
    composite_loss_and_grad(model, batch).map(|(parts, _)| parts)
}

fn check(value: f64, term: LossTerm, iteration: u64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { term, iteration })
    }
}

/// Mean cross-entropy over the selected rows and its logit gradient, scaled
/// by `weight / normalizer`. Rows not selected get a zero gradient.
fn masked_cross_entropy(
    probs: &[ProbVector],
    targets: &[usize],
    selected: impl Fn(usize) -> bool,
    normalizer: usize,
    weight: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(probs.len());
    let scale = weight / normalizer as f64;
    for (i, (p, &y)) in probs.iter().zip(targets).enumerate() {
        if !selected(i) {
            grads.push(vec![0.0; p.classes()]);
            continue;
        }
        loss += cross_entropy(y, p)?;
        let mut g: Vec<f64> = p.as_slice().iter().map(|v| v * scale).collect();
        g[y] -= scale;
        grads.push(g);
    }
    Ok((loss / normalizer as f64, grads))
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, v) in acc.iter_mut().zip(g) {
        *a += v;
    }
}

/// `strong_fwd` may carry an already computed strong-view forward pass.
fn objective(
    model: &Mlp,
    batch: &CompositeBatch,
    weak_fwd: &BatchForward,
    strong_fwd: Option<BatchForward>,
    iteration: u64,
) -> Result<(LossParts, Vec<f64>)> {
    let lab_fwd = model.forward_batch(&batch.labeled)?;
    let (loss_s, d_lab) = masked_cross_entropy(&lab_fwd.probs, &batch.labels, |_| true, batch.labels.len(), 1.0)?;
    check(loss_s, LossTerm::Supervised, iteration)?;
    let mut grad = model.backward(
        &lab_fwd,
        &Upstream {
            d_logits: Some(d_lab),
            d_embeddings: None,
        },
    )?;

    let n = batch.decisions.len();
    let mut loss_u = 0.0;
    if n > 0 && batch.decisions.iter().any(|d| d.accepted) {
        let strong_fwd = match strong_fwd {
            Some(f) => f,
            None => model.forward_batch(&batch.strong)?,
        };
        let targets: Vec<usize> = batch.decisions.iter().map(|d| d.label).collect();
        let (l, d_strong) =
            masked_cross_entropy(&strong_fwd.probs, &targets, |i| batch.decisions[i].accepted, n, batch.lambda_u)?;
        loss_u = check(l, LossTerm::Unsupervised, iteration)?;
        if batch.lambda_u != 0.0 {
            let g = model.backward(
                &strong_fwd,
                &Upstream {
                    d_logits: Some(d_strong),
                    d_embeddings: None,
                },
            )?;
            add_into(&mut grad, &g);
        }
    }

    let mut loss_c = 0.0;
    if !batch.plan.terms.is_empty() {
        let (l, d_emb) = contrastive_loss_and_grad(&batch.plan, &weak_fwd.embeddings)?;
        loss_c = check(l, LossTerm::Contrastive, iteration)?;
        if batch.lambda_c != 0.0 {
            let scaled: Vec<Vec<f64>> = d_emb
                .into_iter()
                .map(|row| row.into_iter().map(|v| v * batch.lambda_c).collect())
                .collect();
            let g = model.backward(
                weak_fwd,
                &Upstream {
                    d_logits: None,
                    d_embeddings: Some(scaled),
                },
            )?;
            add_into(&mut grad, &g);
        }
    }

    let total = check(
        total_loss(loss_s, loss_u, loss_c, batch.lambda_u, batch.lambda_c),
        LossTerm::Total,
        iteration,
    )?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            term: LossTerm::Update,
            iteration,
        });
    }
    Ok((
        LossParts {
            supervised: loss_s,
            unsupervised: loss_u,
            contrastive: loss_c,
            total,
        },
        grad,
    ))
}

/// Owns every piece of mutable training state.
pub struct Trainer {
    config: TrainConfig,
    dataset: SslDataset,
    eval_set: Vec<LabeledExample>,
    batch: BatchConfig,
    augment: AugmentPair,
    model: Mlp,
    optimizer: Sgd,
    shadow: EmaShadow,
    thresholds: ThresholdState,
    rng: ChaCha8Rng,
    t: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig, dataset: SslDataset, eval_set: Vec<LabeledExample>) -> Result<Self> {
        config.validate()?;
        if dataset.labeled.is_empty() {
            return Err(Error::config("training needs at least one labeled example"));
        }
        if eval_set.is_empty() {
            return Err(Error::config("evaluation set is empty"));
        }
        let arch = config.architecture(dataset.input_dim, dataset.classes)?;
        let batch = config.batch_config(dataset.classes, arch.embed_dim())?;
        let augment = config.augment_pair(dataset.image)?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        init_rng.set_stream(INIT_STREAM);
        let model = Mlp::init(arch, &mut init_rng);
        let optimizer = Sgd::new(config.optim.lr, config.optim.momentum, model.params().len())?;
        let shadow = EmaShadow::new(config.optim.ema_decay, model.params())?;
        let window = config
            .satpl
            .window
            .unwrap_or_else(|| dataset.unlabeled.len().div_ceil(batch.unlabeled()).max(1));
        let thresholds = ThresholdState::new(dataset.classes, config.satpl.ema_decay, window)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(BATCH_STREAM);
        Ok(Self {
            config,
            dataset,
            eval_set,
            batch,
            augment,
            model,
            optimizer,
            shadow,
            thresholds,
            rng,
            t: 0,
        })
    }

    /// Rebuilds a trainer from a checkpoint taken with the same config and
    /// data.
    pub fn resume(checkpoint: &Checkpoint, dataset: SslDataset, eval_set: Vec<LabeledExample>) -> Result<Self> {
        let config = TrainConfig::from_toml_str(&checkpoint.config)?;
        let mut trainer = Self::new(config, dataset, eval_set)?;
        if &checkpoint.architecture != trainer.model.architecture() {
            return Err(Error::format("checkpoint architecture does not match the configured model"));
        }
        trainer.model = Mlp::from_params(checkpoint.architecture.clone(), checkpoint.params.clone())?;
        trainer.optimizer = trainer.optimizer.with_velocity(checkpoint.velocity.clone())?;
        let mut shadow = EmaShadow::new(checkpoint.shadow_decay, &checkpoint.shadow)?;
        shadow.decay = checkpoint.shadow_decay;
        trainer.shadow = shadow;
        let th = &checkpoint.thresholds;
        trainer.thresholds = ThresholdState::restore(
            th.classes,
            th.lambda,
            th.tau,
            th.t,
            th.window,
            th.history.clone(),
            th.sigma.clone(),
        )?;
        trainer.rng = checkpoint.rng.to_rng();
        trainer.t = checkpoint.iteration;
        Ok(trainer)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            config: self.config.to_toml_string()?,
            architecture: self.model.architecture().clone(),
            params: self.model.params().to_vec(),
            velocity: self.optimizer.velocity().to_vec(),
            shadow_decay: self.shadow.decay,
            shadow: self.shadow.params().to_vec(),
            thresholds: ThresholdSnapshot::of(&self.thresholds),
            rng: RngState::of(&self.rng),
            iteration: self.t,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Mlp {
        &self.model
    }

    pub fn shadow(&self) -> &EmaShadow {
        &self.shadow
    }

    pub fn thresholds(&self) -> &ThresholdState {
        &self.thresholds
    }

    pub fn iteration(&self) -> u64 {
        self.t
    }

    pub fn finished(&self) -> bool {
        self.t >= self.config.iterations
    }

    /// Size of the unlabeled half of each batch; zero when there is no
    /// unlabeled pool.
    pub fn unlabeled_batch(&self) -> usize {
        if self.dataset.unlabeled.is_empty() {
            0
        } else {
            self.batch.unlabeled()
        }
    }

    /// Evaluates the parameter shadow on the held-out set.
    pub fn evaluate_shadow(&self) -> Result<Evaluation> {
        evaluate(&self.shadow.model(self.model.architecture())?, &self.eval_set)
    }

    /// Runs one iteration. On error the trainer is left as it was before the
    /// call, so the caller can checkpoint the last good state.
    pub fn step(&mut self) -> Result<MetricsRow> {
        let thresholds = self.thresholds.clone();
        let rng = self.rng.clone();
        let t = self.t;
        self.step_inner().map_err(|e| {
            self.thresholds = thresholds;
            self.rng = rng;
            match e {
                Error::NonFinite { term, .. } => Error::NonFinite { term, iteration: t },
                other => other,
            }
        })
    }

    fn step_inner(&mut self) -> Result<MetricsRow> {
        let t = self.t;
        let mode = self.config.mode;
        let classes = self.dataset.classes;
        let supervised_only = self.dataset.unlabeled.is_empty();

        let (labeled, unlabeled) = if supervised_only {
            (next_labeled_batch(&self.dataset, &self.batch, &self.augment, &mut self.rng)?, None)
        } else {
            let (l, u) = next_batches(&self.dataset, &self.batch, &self.augment, &mut self.rng)?;
            (l, Some(u))
        };
        let (weak, strong, indices) = match unlabeled {
            Some(u) => (u.weak, u.strong, u.indices),
            None => (Vec::new(), Vec::new(), Vec::new()),
        };
        let weak_fwd = self.model.forward_batch(&weak)?;

        let (tau, sigma, decisions) = if weak.is_empty() {
            let tau = self.thresholds.tau();
            (tau, self.thresholds.sigma().to_vec(), Vec::new())
        } else if mode.adaptive_thresholds() {
            let tau = self.thresholds.tau();
            let decisions = self.thresholds.observe_batch(&weak_fwd.probs)?;
            (tau, self.thresholds.sigma().to_vec(), decisions)
        } else {
            let fixed = self.config.satpl.fixed_threshold;
            let sigma = vec![fixed; classes];
            let decisions = decide_pseudo_labels(&weak_fwd.probs, &sigma);
            (fixed, sigma, decisions)
        };

        let lambda_c = if mode.contrastive() {
            contrastive_weight(t, self.config.iterations, self.config.uscl.lambda_c0)
        } else {
            0.0
        };
        let strong_fwd = if mode.contrastive() && !weak.is_empty() {
            Some(self.model.forward_batch(&strong)?)
        } else {
            None
        };
        let plan = if let Some(strong_fwd) = &strong_fwd {
            build_contrastive_plan(
                &weak_fwd.embeddings,
                &strong_fwd.embeddings,
                &decisions,
                &self.config.contrastive(),
                &mut self.rng,
            )?
        } else {
            let mut plan = ContrastiveBatchPlan::empty(decisions.len(), self.config.uscl.temperature);
            plan.skipped = decisions.iter().filter(|d| !d.accepted).count();
            plan
        };

        let stats = if decisions.is_empty() {
            PseudoLabelStats {
                quantity: 0.0,
                quality: 1.0,
                mask_ratio: 1.0,
                degenerate: true,
                accepted: 0,
                correct: 0,
            }
        } else {
            batch_diagnostics(&self.dataset, &indices, &decisions)?
        };
        let anchors = plan.anchors();
        let anchors_skipped = plan.skipped;
        let mean_positive_set = plan.mean_positive_set();
        let candidates = plan.candidates;

        let batch = CompositeBatch {
            labeled: labeled.inputs,
            labels: labeled.labels,
            weak,
            strong,
            decisions,
            plan,
            lambda_u: self.config.loss.lambda_u,
            lambda_c,
        };
        let (parts, grad) = objective(&self.model, &batch, &weak_fwd, strong_fwd, t)?;

        let lr = learning_rate(self.config.optim.lr, t, self.config.iterations, self.config.optim.cosine_decay);
        self.optimizer.step(self.model.params_mut(), &grad, lr)?;
        self.shadow.update(self.model.params());
        self.t += 1;

        let eval_accuracy = if self.t.is_multiple_of(self.config.eval_interval) || self.t == self.config.iterations {
            Some(self.evaluate_shadow()?.accuracy)
        } else {
            None
        };

        Ok(MetricsRow {
            t,
            loss_s: parts.supervised,
            loss_u: parts.unsupervised,
            loss_c: parts.contrastive,
            lambda_c,
            loss_total: parts.total,
            tau,
            sigma,
            mask_ratio: stats.mask_ratio,
            pl_quantity: stats.quantity,
            pl_quality: stats.quality,
            pl_quality_degenerate: stats.degenerate,
            accepted: stats.accepted,
            anchors,
            anchors_skipped,
            mean_positive_set,
            candidates,
            lr,
            eval_accuracy,
        })
    }

    /// Runs the remaining iterations, handing each row to `sink`, and
    /// evaluates the final shadow.
    pub fn run(&mut self, mut sink: impl FnMut(&MetricsRow) -> Result<()>) -> Result<Evaluation> {
        while !self.finished() {
            let row = self.step()?;
            sink(&row)?;
        }
        self.evaluate_shadow()
    }

    pub fn into_parts(self) -> (Mlp, EmaShadow) {
        (self.model, self.shadow)
    }
}

/// Trains from scratch on `dataset` and collects every metrics row.
pub fn train_on(
    config: &TrainConfig,
    dataset: SslDataset,
    eval_set: Vec<LabeledExample>,
) -> Result<(Mlp, EmaShadow, TrainReport)> {
    let classes = dataset.classes;
    let mut trainer = Trainer::new(config.clone(), dataset, eval_set)?;
    let mut rows = Vec::with_capacity(config.iterations as usize);
    let eval = trainer.run(|row| {
        rows.push(row.clone());
        Ok(())
    })?;
    let (model, shadow) = trainer.into_parts();
    Ok((
        model,
        shadow,
        TrainReport {
            classes,
            rows,
            confusion: eval.confusion,
            final_accuracy: eval.accuracy,
        },
    ))
}

/// Builds the configured dataset and trains on it.
pub fn train(config: &TrainConfig) -> Result<(Mlp, EmaShadow, TrainReport)> {
    let (dataset, eval_set) = config.build_data()?;
    train_on(config, dataset, eval_set)
}
