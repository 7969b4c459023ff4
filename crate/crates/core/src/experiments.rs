//! Run directories and the multi-run harnesses behind the CLI.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::config::{Mode, TrainConfig};
use crate::data::SslDataset;
use crate::error::{Error, Result};
use crate::metrics::{tail_means, write_confusion, MetricsRow, MetricsWriter, RunSummary};
use crate::report::{
    self, RunArtifact, CHECKPOINT_FILE, CONFIG_FILE, CONFUSION_FILE, LAST_GOOD_FILE, METRICS_FILE, SUMMARY_FILE,
    TRAJECTORY_FILE,
};
use crate::trainer::{evaluate, Evaluation, Trainer};
use crate::types::LabeledExample;

/// What a completed run reports back.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub confusion: Vec<Vec<u64>>,
    pub mean_anchors: f64,
}

/// Trains `config` and writes a complete run directory. On a numerical
/// failure the last good state is saved as `last-good.ckpt` before the
/// error is returned.
pub fn run_to_dir(config: &TrainConfig, dir: &Path) -> Result<RunOutcome> {
    let (dataset, eval_set) = config.build_data()?;
    run_on_data(config, dataset, eval_set, dir)
}

pub fn run_on_data(
    config: &TrainConfig,
    dataset: SslDataset,
    eval_set: Vec<LabeledExample>,
    dir: &Path,
) -> Result<RunOutcome> {
    let trainer = Trainer::new(config.clone(), dataset, eval_set)?;
    continue_to_dir(trainer, dir)
}

/// Runs a trainer (fresh or resumed) to completion, writing the run
/// directory. The metrics file holds the iterations run by this call.
pub fn continue_to_dir(mut trainer: Trainer, dir: &Path) -> Result<RunOutcome> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(CONFIG_FILE), trainer.config().to_toml_string()?)?;
    let classes = trainer.model().architecture().classes;
    let writer = MetricsWriter::create(&dir.join(METRICS_FILE), classes)?;
    let mut rows: Vec<MetricsRow> = Vec::with_capacity(trainer.config().iterations as usize);
    let result = trainer.run(|row| {
        rows.push(row.clone());
        writer.send(row.clone())
    });
    writer.finish()?;
    let eval = match result {
        Ok(eval) => eval,
        Err(e @ Error::NonFinite { .. }) => {
            trainer.checkpoint()?.save(&dir.join(LAST_GOOD_FILE))?;
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    trainer.checkpoint()?.save(&dir.join(CHECKPOINT_FILE))?;
    write_confusion(&dir.join(CONFUSION_FILE), &eval.confusion)?;
    std::fs::write(
        dir.join(TRAJECTORY_FILE),
        report::trajectory_csv(&report::trajectory_export(&rows)?),
    )?;
    let (tail_quantity, tail_quality) = tail_means(&rows);
    let summary = RunSummary {
        mode: trainer.config().mode.to_string(),
        seed: trainer.config().seed,
        iterations: trainer.iteration(),
        final_accuracy: eval.accuracy,
        tail_quantity,
        tail_quality,
        final_tau: rows.last().map_or(0.0, |r| r.tau),
    };
    summary.write(&dir.join(SUMMARY_FILE))?;
    let mean_anchors = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.anchors as f64).sum::<f64>() / rows.len() as f64
    };
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        summary,
        confusion: eval.confusion,
        mean_anchors,
    })
}

/// Trains every mode for every seed under `out/<mode>/seed-<n>` and returns
/// the ablation rows.
pub fn ablation(base: &TrainConfig, seeds: &[u64], out: &Path) -> Result<Vec<report::AblationRow>> {
    let mut runs = Vec::new();
    for mode in Mode::ALL {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.mode = mode;
            cfg.seed = seed;
            let dir = out.join(mode.as_str()).join(format!("seed-{seed}"));
            run_to_dir(&cfg, &dir)?;
            runs.push(RunArtifact::load(&dir)?);
        }
    }
    let table = report::ablation_table(&runs)?;
    std::fs::write(out.join("ablation.csv"), report::ablation_csv(&table))?;
    Ok(table)
}

/// One cell of a hyper-parameter sweep, averaged over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub values: Vec<f64>,
    pub runs: usize,
    pub accuracy: f64,
    pub quantity: f64,
    pub quality: f64,
    pub mean_anchors: f64,
}

fn sweep_cell(configs: Vec<TrainConfig>, values: Vec<f64>, dir: &Path) -> Result<SweepRow> {
    let mut row = SweepRow {
        values,
        runs: configs.len(),
        accuracy: 0.0,
        quantity: 0.0,
        quality: 0.0,
        mean_anchors: 0.0,
    };
    for cfg in &configs {
        let outcome = run_to_dir(cfg, &dir.join(format!("seed-{}", cfg.seed)))?;
        row.accuracy += outcome.summary.final_accuracy;
        row.quantity += outcome.summary.tail_quantity;
        row.quality += outcome.summary.tail_quality;
        row.mean_anchors += outcome.mean_anchors;
    }
    let n = configs.len().max(1) as f64;
    row.accuracy /= n;
    row.quantity /= n;
    row.quality /= n;
    row.mean_anchors /= n;
    Ok(row)
}

fn seeded(base: &TrainConfig, seeds: &[u64], edit: impl Fn(&mut TrainConfig)) -> Vec<TrainConfig> {
    seeds
        .iter()
        .map(|&seed| {
            let mut cfg = base.clone();
            cfg.seed = seed;
            edit(&mut cfg);
            cfg
        })
        .collect()
}

/// Grid over the two positive-set thresholds, in the full mode.
pub fn sweep_eps(
    base: &TrainConfig,
    eps_weak: &[f64],
    eps_strong: &[f64],
    seeds: &[u64],
    out: &Path,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &e1 in eps_weak {
        for &e2 in eps_strong {
            let configs = seeded(base, seeds, |cfg| {
                cfg.mode = Mode::Full;
                cfg.uscl.eps_weak = e1;
                cfg.uscl.eps_strong = e2;
            });
            for cfg in &configs {
                cfg.validate()?;
            }
            rows.push(sweep_cell(configs, vec![e1, e2], &out.join(format!("eps-{e1}-{e2}")))?);
        }
    }
    std::fs::write(out.join("sweep-eps.csv"), sweep_csv(&["eps_weak", "eps_strong"], &rows))?;
    Ok(rows)
}

/// Grid over the decay of the global-threshold EMA, in the full mode.
pub fn sweep_ema(base: &TrainConfig, decays: &[f64], seeds: &[u64], out: &Path) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &decay in decays {
        let configs = seeded(base, seeds, |cfg| {
            cfg.mode = Mode::Full;
            cfg.satpl.ema_decay = decay;
        });
        for cfg in &configs {
            cfg.validate()?;
        }
        rows.push(sweep_cell(configs, vec![decay], &out.join(format!("ema-{decay}")))?);
    }
    std::fs::write(out.join("sweep-ema.csv"), sweep_csv(&["ema_decay"], &rows))?;
    Ok(rows)
}

/// CSV with the swept parameters followed by
/// `runs,accuracy_pct,quantity_pct,quality_pct,mean_anchors`.
pub fn sweep_csv(names: &[&str], rows: &[SweepRow]) -> String {
    let mut out = names.join(",");
    out.push_str(",runs,accuracy_pct,quantity_pct,quality_pct,mean_anchors\n");
    for r in rows {
        for v in &r.values {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(
            out,
            "{},{:.2},{:.2},{:.2},{:.3}",
            r.runs,
            100.0 * r.accuracy,
            100.0 * r.quantity,
            100.0 * r.quality,
            r.mean_anchors
        );
    }
    out
}

/// Re-evaluates a checkpoint on the evaluation set its configuration
/// describes. Returns the shadow's and the raw parameters' evaluations.
pub fn replay(checkpoint: &Checkpoint) -> Result<(Evaluation, Evaluation)> {
    let config = TrainConfig::from_toml_str(&checkpoint.config)?;
    let (dataset, eval_set) = config.build_data()?;
    let trainer = Trainer::resume(checkpoint, dataset, eval_set.clone())?;
    let shadow = trainer.evaluate_shadow()?;
    let raw = evaluate(trainer.model(), &eval_set)?;
    Ok((shadow, raw))
}
