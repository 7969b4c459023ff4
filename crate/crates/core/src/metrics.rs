//! Per-iteration metrics, pseudo-label diagnostics and run artifacts.
//!
//! Metrics CSV columns, in order:
//!
//! `t, loss_s, loss_u, loss_c, lambda_c, loss_total, tau, sigma_mean,
//! sigma_0 .. sigma_{C-1}, mask_ratio, pl_quantity, pl_quality,
//! pl_quality_degenerate, accepted, anchors, anchors_skipped,
//! mean_positive_set, candidates, lr, eval_accuracy`
//!
//! Reals are written in shortest round-trip form, so a re-read row is
//! bit-identical. `eval_accuracy` is empty on iterations without evaluation.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::sync::mpsc::{sync_channel, SyncSender};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use crate::data::SslDataset;
use crate::error::{Error, Result};
use crate::satpl::PseudoLabelDecision;

const FIXED_HEAD: [&str; 8] = [
    "t",
    "loss_s",
    "loss_u",
    "loss_c",
    "lambda_c",
    "loss_total",
    "tau",
    "sigma_mean",
];
const FIXED_TAIL: [&str; 11] = [
    "mask_ratio",
    "pl_quantity",
    "pl_quality",
    "pl_quality_degenerate",
    "accepted",
    "anchors",
    "anchors_skipped",
    "mean_positive_set",
    "candidates",
    "lr",
    "eval_accuracy",
];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub t: u64,
    pub loss_s: f64,
    pub loss_u: f64,
    pub loss_c: f64,
    pub lambda_c: f64,
    pub loss_total: f64,
    pub tau: f64,
    pub sigma: Vec<f64>,
    pub mask_ratio: f64,
    pub pl_quantity: f64,
    pub pl_quality: f64,
    pub pl_quality_degenerate: bool,
    pub accepted: usize,
    pub anchors: usize,
    pub anchors_skipped: usize,
    pub mean_positive_set: f64,
    pub candidates: usize,
    pub lr: f64,
    pub eval_accuracy: Option<f64>,
}

impl MetricsRow {
    pub fn sigma_mean(&self) -> f64 {
        self.sigma.iter().sum::<f64>() / self.sigma.len() as f64
    }

    fn to_record(&self) -> Vec<String> {
        let mut rec = vec![
            self.t.to_string(),
            self.loss_s.to_string(),
            self.loss_u.to_string(),
            self.loss_c.to_string(),
            self.lambda_c.to_string(),
            self.loss_total.to_string(),
            self.tau.to_string(),
            self.sigma_mean().to_string(),
        ];
        rec.extend(self.sigma.iter().map(f64::to_string));
        rec.extend([
            self.mask_ratio.to_string(),
            self.pl_quantity.to_string(),
            self.pl_quality.to_string(),
            u8::from(self.pl_quality_degenerate).to_string(),
            self.accepted.to_string(),
            self.anchors.to_string(),
            self.anchors_skipped.to_string(),
            self.mean_positive_set.to_string(),
            self.candidates.to_string(),
            self.lr.to_string(),
            self.eval_accuracy.map_or_else(String::new, |a| a.to_string()),
        ]);
        rec
    }

    fn from_record(rec: &csv::StringRecord, classes: usize) -> Result<Self> {
        let expected = FIXED_HEAD.len() + classes + FIXED_TAIL.len();
        if rec.len() != expected {
            return Err(Error::format(format!("metrics row has {} fields, expected {expected}", rec.len())));
        }
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let real = |i: usize| -> Result<f64> {
            field(i)
                .parse()
                .map_err(|_| Error::format(format!("bad number {:?} in metrics column {i}", field(i))))
        };
        let count = |i: usize| -> Result<usize> {
            field(i)
                .parse()
                .map_err(|_| Error::format(format!("bad count {:?} in metrics column {i}", field(i))))
        };
        let tail = FIXED_HEAD.len() + classes;
        Ok(Self {
            t: count(0)? as u64,
            loss_s: real(1)?,
            loss_u: real(2)?,
            loss_c: real(3)?,
            lambda_c: real(4)?,
            loss_total: real(5)?,
            tau: real(6)?,
            sigma: (0..classes).map(|c| real(FIXED_HEAD.len() + c)).collect::<Result<_>>()?,
            mask_ratio: real(tail)?,
            pl_quantity: real(tail + 1)?,
            pl_quality: real(tail + 2)?,
            pl_quality_degenerate: count(tail + 3)? != 0,
            accepted: count(tail + 4)?,
            anchors: count(tail + 5)?,
            anchors_skipped: count(tail + 6)?,
            mean_positive_set: real(tail + 7)?,
            candidates: count(tail + 8)?,
            lr: real(tail + 9)?,
            eval_accuracy: match field(tail + 10) {
                "" => None,
                _ => Some(real(tail + 10)?),
            },
        })
    }
}

pub fn metrics_header(classes: usize) -> Vec<String> {
    FIXED_HEAD
        .iter()
        .map(|s| s.to_string())
        .chain((0..classes).map(|c| format!("sigma_{c}")))
        .chain(FIXED_TAIL.iter().map(|s| s.to_string()))
        .collect()
}

/// Everything a finished run reports.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub classes: usize,
    pub rows: Vec<MetricsRow>,
    /// `confusion[true][predicted]` on the evaluation set, final shadow.
    pub confusion: Vec<Vec<u64>>,
    pub final_accuracy: f64,
}

impl TrainReport {
    /// Mean quantity and quality over the last 10% of rows (at least one).
    pub fn tail_pseudo_label_means(&self) -> (f64, f64) {
        tail_means(&self.rows)
    }
}

pub fn tail_means(rows: &[MetricsRow]) -> (f64, f64) {
    if rows.is_empty() {
        return (0.0, 0.0);
    }
    let k = (rows.len() / 10).max(1);
    let tail = &rows[rows.len() - k..];
    let quantity = tail.iter().map(|r| r.pl_quantity).sum::<f64>() / k as f64;
    let quality = tail.iter().map(|r| r.pl_quality).sum::<f64>() / k as f64;
    (quantity, quality)
}

/// Quantity, quality and mask ratio of one batch's pseudo-labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabelStats {
    pub quantity: f64,
    /// 1.0 by convention when nothing was accepted (`degenerate` is set).
    pub quality: f64,
    pub mask_ratio: f64,
    pub degenerate: bool,
    pub accepted: usize,
    pub correct: usize,
}

pub fn pseudo_label_diagnostics(decisions: &[PseudoLabelDecision], hidden_labels: &[usize]) -> Result<PseudoLabelStats> {
    if decisions.len() != hidden_labels.len() {
        return Err(Error::contract("decisions and hidden labels differ in length"));
    }
    if decisions.is_empty() {
        return Err(Error::degenerate("pseudo-label diagnostics on an empty batch"));
    }
    let accepted = decisions.iter().filter(|d| d.accepted).count();
    let correct = decisions
        .iter()
        .zip(hidden_labels)
        .filter(|(d, &y)| d.accepted && d.label == y)
        .count();
    let quantity = accepted as f64 / decisions.len() as f64;
    let degenerate = accepted == 0;
    Ok(PseudoLabelStats {
        quantity,
        quality: if degenerate { 1.0 } else { correct as f64 / accepted as f64 },
        mask_ratio: 1.0 - quantity,
        degenerate,
        accepted,
        correct,
    })
}

/// Diagnostics for an unlabeled batch identified by pool indices. This is
/// the only place outside the dataset that reads hidden labels.
pub fn batch_diagnostics(dataset: &SslDataset, indices: &[usize], decisions: &[PseudoLabelDecision]) -> Result<PseudoLabelStats> {
    let hidden: Vec<usize> = indices.iter().map(|&i| dataset.hidden_labels().label(i)).collect();
    pseudo_label_diagnostics(decisions, &hidden)
}

fn open_csv(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new().from_writer(BufWriter::new(File::create(path)?)))
}

/// Writes metrics rows on a background thread. Rows land in the file in the
/// order they were sent.
pub struct MetricsWriter {
    sender: Option<SyncSender<MetricsRow>>,
    handle: Option<JoinHandle<Result<()>>>,
}

impl MetricsWriter {
    pub fn create(path: &Path, classes: usize) -> Result<Self> {
        let mut writer = open_csv(path)?;
        writer.write_record(metrics_header(classes))?;
        let (sender, receiver) = sync_channel::<MetricsRow>(1024);
        let handle = std::thread::spawn(move || -> Result<()> {
            for row in receiver {
                writer.write_record(row.to_record())?;
            }
            writer.flush()?;
            Ok(())
        });
        Ok(Self {
            sender: Some(sender),
            handle: Some(handle),
        })
    }

    pub fn send(&self, row: MetricsRow) -> Result<()> {
        match &self.sender {
            Some(s) => s
                .send(row)
                .map_err(|_| Error::Io(std::io::Error::other("metrics writer stopped"))),
            None => Err(Error::contract("metrics writer already finished")),
        }
    }

    /// Flushes all rows and reports any write error.
    pub fn finish(mut self) -> Result<()> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Result<()> {
        self.sender.take();
        match self.handle.take() {
            Some(h) => h
                .join()
                .map_err(|_| Error::Io(std::io::Error::other("metrics writer panicked")))?,
            None => Ok(()),
        }
    }
}

impl Drop for MetricsWriter {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow], classes: usize) -> Result<()> {
    let writer = MetricsWriter::create(path, classes)?;
    for row in rows {
        writer.send(row.clone())?;
    }
    writer.finish()
}

/// Reads a metrics CSV; the class count is inferred from the header.
pub fn read_metrics(path: &Path) -> Result<(usize, Vec<MetricsRow>)> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let classes = header.iter().filter(|h| h.starts_with("sigma_") && *h != "sigma_mean").count();
    let expected = metrics_header(classes);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::format("metrics header does not match the documented layout"));
    }
    let rows = reader
        .records()
        .map(|rec| MetricsRow::from_record(&rec?, classes))
        .collect::<Result<Vec<_>>>()?;
    Ok((classes, rows))
}

pub fn write_confusion(path: &Path, confusion: &[Vec<u64>]) -> Result<()> {
    let mut writer = open_csv(path)?;
    let mut header = vec!["true\\pred".to_string()];
    header.extend((0..confusion.len()).map(|c| c.to_string()));
    writer.write_record(&header)?;
    for (c, row) in confusion.iter().enumerate() {
        let mut rec = vec![c.to_string()];
        rec.extend(row.iter().map(u64::to_string));
        writer.write_record(&rec)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_confusion(path: &Path) -> Result<Vec<Vec<u64>>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.parse().map_err(|_| Error::format(format!("bad confusion count {v:?}"))))
            .collect::<Result<Vec<u64>>>()?;
        out.push(row);
    }
    if out.iter().any(|r| r.len() != out.len()) {
        return Err(Error::format("confusion matrix is not square"));
    }
    Ok(out)
}

/// Run summary, stored as `summary.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub mode: String,
    pub seed: u64,
    pub iterations: u64,
    pub final_accuracy: f64,
    /// Means over the last 10% of iterations.
    pub tail_quantity: f64,
    pub tail_quality: f64,
    pub final_tau: f64,
}

impl RunSummary {
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", path.display())))
    }
}

/// One failed check of the post-run validator.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub t: u64,
    pub message: String,
}

/// Checks a metrics stream: the unlabeled batch is partitioned into accepted
/// samples, contrastive anchors and skipped anchors; the contrastive weight
/// is strictly decreasing (or identically zero); the mask ratio is exactly
/// one minus the quantity; ratios lie in [0, 1]; local thresholds never
/// exceed the global one.
pub fn validate_metrics(rows: &[MetricsRow], unlabeled_batch: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut flag = |t: u64, message: String| out.push(Violation { t, message });
    let weighted = rows.iter().any(|r| r.lambda_c != 0.0);
    for (k, r) in rows.iter().enumerate() {
        let parts = r.accepted + r.anchors + r.anchors_skipped;
        if parts != unlabeled_batch {
            flag(r.t, format!("accepted + anchors + skipped = {parts}, batch is {unlabeled_batch}"));
        }
        if r.mask_ratio != 1.0 - r.pl_quantity {
            flag(r.t, format!("mask ratio {} != 1 - quantity {}", r.mask_ratio, r.pl_quantity));
        }
        let quantity = if unlabeled_batch == 0 {
            0.0
        } else {
            r.accepted as f64 / unlabeled_batch as f64
        };
        if r.pl_quantity != quantity {
            flag(r.t, "quantity disagrees with the accepted count".into());
        }
        for (name, v) in [
            ("mask_ratio", r.mask_ratio),
            ("pl_quantity", r.pl_quantity),
            ("pl_quality", r.pl_quality),
        ] {
            if !(0.0..=1.0).contains(&v) {
                flag(r.t, format!("{name} = {v} outside [0, 1]"));
            }
        }
        if r.pl_quality_degenerate && (r.accepted != 0 || r.pl_quality != 1.0) {
            flag(r.t, "degenerate quality flag on a batch with accepted samples".into());
        }
        if r.sigma.iter().any(|&s| s > r.tau) {
            flag(r.t, "a local threshold exceeds the global threshold".into());
        }
        if k > 0 {
            let prev = &rows[k - 1];
            if r.t != prev.t + 1 {
                flag(r.t, format!("iteration {} follows {}", r.t, prev.t));
            }
            if weighted && r.t >= 1 && r.lambda_c >= prev.lambda_c {
                flag(r.t, format!("lambda_c {} does not decrease from {}", r.lambda_c, prev.lambda_c));
            }
        }
        if !weighted && r.lambda_c != 0.0 {
            flag(r.t, "lambda_c is neither decreasing nor zero".into());
        }
    }
    out
}
