//! Post-run tables: threshold trajectories and ablation summaries.
//!
//! A run directory holds `config.toml`, `metrics.csv`, `confusion.csv`,
//! `summary.toml`, `trajectory.csv` and `final.ckpt`. Every table here is a
//! pure function of `config.toml` and `metrics.csv`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{Mode, TrainConfig};
use crate::error::{Error, Result};
use crate::data::LabelsPerClass;
use crate::metrics::{read_metrics, tail_means, validate_metrics, MetricsRow, RunSummary, Violation};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const CHECKPOINT_FILE: &str = "final.ckpt";
pub const LAST_GOOD_FILE: &str = "last-good.ckpt";

/// One row of the threshold trajectory: the global threshold, the mean
/// local threshold and the fraction of unlabeled samples rejected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: u64,
    pub tau: f64,
    pub sigma_mean: f64,
    pub mask_ratio: f64,
}

pub fn trajectory_export(rows: &[MetricsRow]) -> Result<Vec<TrajectoryPoint>> {
    if rows.is_empty() {
        return Err(Error::degenerate("trajectory of an empty run"));
    }
    Ok(rows
        .iter()
        .map(|r| TrajectoryPoint {
            t: r.t,
            tau: r.tau,
            sigma_mean: r.sigma_mean(),
            mask_ratio: r.mask_ratio,
        })
        .collect())
}

/// CSV with columns `t,tau,sigma_mean,mask_ratio`.
pub fn trajectory_csv(points: &[TrajectoryPoint]) -> String {
    let mut out = String::from("t,tau,sigma_mean,mask_ratio\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{}", p.t, p.tau, p.sigma_mean, p.mask_ratio);
    }
    out
}

/// Everything a finished run leaves on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifact {
    pub dir: PathBuf,
    pub config: TrainConfig,
    pub classes: usize,
    pub rows: Vec<MetricsRow>,
}

impl RunArtifact {
    pub fn load(dir: &Path) -> Result<Self> {
        let config = TrainConfig::load(&dir.join(CONFIG_FILE))?;
        let metrics = dir.join(METRICS_FILE);
        if !metrics.exists() {
            return Err(Error::format(format!("{} has no metrics", dir.display())));
        }
        let (classes, rows) = read_metrics(&metrics)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
            classes,
            rows,
        })
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.dir.join(CHECKPOINT_FILE)
    }

    /// Unlabeled samples drawn per iteration; zero for fully labeled runs.
    pub fn unlabeled_batch(&self) -> Result<usize> {
        Ok(match self.config.data.labels_per_class.resolve()? {
            LabelsPerClass::All => 0,
            LabelsPerClass::Count(_) => self.config.batch.labeled * self.config.batch.mu,
        })
    }

    /// Runs the metrics validator over this run's rows.
    pub fn validate(&self) -> Result<Vec<Violation>> {
        Ok(validate_metrics(&self.rows, self.unlabeled_batch()?))
    }

    /// Accuracy logged at the last evaluated iteration.
    pub fn final_accuracy(&self) -> Result<f64> {
        self.rows
            .iter()
            .rev()
            .find_map(|r| r.eval_accuracy)
            .ok_or_else(|| Error::format(format!("{} has no evaluation rows", self.dir.display())))
    }

    pub fn summary(&self) -> Result<RunSummary> {
        let (tail_quantity, tail_quality) = tail_means(&self.rows);
        Ok(RunSummary {
            mode: self.config.mode.to_string(),
            seed: self.config.seed,
            iterations: self.rows.len() as u64,
            final_accuracy: self.final_accuracy()?,
            tail_quantity,
            tail_quality,
            final_tau: self.rows.last().map_or(0.0, |r| r.tau),
        })
    }
}

/// Finds run directories (those holding a metrics file) below `root`, in
/// sorted path order.
pub fn discover_runs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join(METRICS_FILE).is_file() && dir.join(CONFIG_FILE).is_file() {
            found.push(dir.clone());
        }
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Mean final metrics of all runs in one mode, in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub mode: Mode,
    pub runs: usize,
    pub quantity_pct: f64,
    pub quality_pct: f64,
    pub accuracy_pct: f64,
}

/// Rows in the order fixed-threshold, uscl-only, satpl-only, full.
pub fn ablation_table(runs: &[RunArtifact]) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for mode in Mode::ALL {
        let members: Vec<&RunArtifact> = runs.iter().filter(|r| r.config.mode == mode).collect();
        if members.is_empty() {
            continue;
        }
        let mut quantity = 0.0;
        let mut quality = 0.0;
        let mut accuracy = 0.0;
        for run in &members {
            let s = run.summary()?;
            quantity += s.tail_quantity;
            quality += s.tail_quality;
            accuracy += s.final_accuracy;
        }
        let n = members.len() as f64;
        rows.push(AblationRow {
            mode,
            runs: members.len(),
            quantity_pct: 100.0 * quantity / n,
            quality_pct: 100.0 * quality / n,
            accuracy_pct: 100.0 * accuracy / n,
        });
    }
    if rows.len() < 2 {
        return Err(Error::degenerate("an ablation table needs runs in at least two modes"));
    }
    Ok(rows)
}

/// CSV with columns `mode,runs,quantity_pct,quality_pct,accuracy_pct`.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("mode,runs,quantity_pct,quality_pct,accuracy_pct\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.2},{:.2},{:.2}",
            r.mode, r.runs, r.quantity_pct, r.quality_pct, r.accuracy_pct
        );
    }
    out
}

/// Fixed-width text rendering for terminals.
pub fn ablation_text(rows: &[AblationRow]) -> String {
    let mut out = format!(
        "{:<16} {:>5} {:>10} {:>10} {:>10}\n",
        "mode", "runs", "quantity%", "quality%", "accuracy%"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<16} {:>5} {:>10.2} {:>10.2} {:>10.2}",
            r.mode.as_str(),
            r.runs,
            r.quantity_pct,
            r.quality_pct,
            r.accuracy_pct
        );
    }
    out
}
