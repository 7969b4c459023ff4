use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ssl_core::checkpoint::Checkpoint;
use ssl_core::config::{Mode, TrainConfig};
use ssl_core::data::make_tiny_glyphs;
use ssl_core::experiments;
use ssl_core::metrics::write_confusion;
use ssl_core::report::{self, RunArtifact, TRAJECTORY_FILE};
use ssl_core::{Error, Result};

/// Semi-supervised training with adaptive pseudo-label thresholds and a
/// contrastive term on rejected samples.
#[derive(Parser)]
#[command(name = "sslctl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override the configured iteration count.
    #[arg(long)]
    iterations: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        if let Some(n) = self.iterations {
            cfg.iterations = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write its run directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Output run directory.
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// fixed-threshold, uscl-only, satpl-only or full.
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Train all four modes over several seeds and print the ablation table.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
        seeds: Vec<u64>,
    },
    /// Grid over the weak and strong positive-set thresholds.
    SweepEps {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.8])]
        eps_weak: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8])]
        eps_strong: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64])]
        seeds: Vec<u64>,
    },
    /// Grid over the global-threshold EMA decay.
    SweepEma {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.9, 0.99, 0.999, 0.9999])]
        decays: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
        seeds: Vec<u64>,
    },
    /// Re-evaluate a checkpoint on its configured evaluation set.
    Replay {
        checkpoint: PathBuf,
        /// Write the shadow model's confusion matrix here.
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Summarize a run directory, or tabulate every run below a directory.
    Report { dir: PathBuf },
    /// Write a synthetic tiny-image file of 8x8 glyphs.
    MakeGlyphs {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn print_sweep(names: &[&str], rows: &[experiments::SweepRow]) {
    print!("{}", experiments::sweep_csv(names, rows));
}

fn report(dir: &Path) -> Result<()> {
    if dir.join(report::METRICS_FILE).is_file() {
        let run = RunArtifact::load(dir)?;
        let trajectory = report::trajectory_export(&run.rows)?;
        std::fs::write(dir.join(TRAJECTORY_FILE), report::trajectory_csv(&trajectory))?;
        let summary = run.summary()?;
        print!("{}", summary.to_toml_string()?);
        let violations = run.validate()?;
        if violations.is_empty() {
            println!("validator: ok ({} rows)", run.rows.len());
        } else {
            for v in &violations {
                println!("validator: t={} {}", v.t, v.message);
            }
            return Err(Error::Format(format!("{} invariant violations", violations.len())));
        }
        return Ok(());
    }
    let runs = report::discover_runs(dir)?
        .iter()
        .map(|d| RunArtifact::load(d))
        .collect::<Result<Vec<_>>>()?;
    let table = report::ablation_table(&runs)?;
    print!("{}", report::ablation_text(&table));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            common,
            out,
            seed,
            mode,
        } => {
            let mut cfg = common.load()?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(mode) = mode {
                cfg.mode = mode;
            }
            let outcome = experiments::run_to_dir(&cfg, &out)?;
            print!("{}", outcome.summary.to_toml_string()?);
        }
        Command::Ablate { common, out, seeds } => {
            let table = experiments::ablation(&common.load()?, &seeds, &out)?;
            print!("{}", report::ablation_text(&table));
        }
        Command::SweepEps {
            common,
            out,
            eps_weak,
            eps_strong,
            seeds,
        } => {
            let rows = experiments::sweep_eps(&common.load()?, &eps_weak, &eps_strong, &seeds, &out)?;
            print_sweep(&["eps_weak", "eps_strong"], &rows);
        }
        Command::SweepEma {
            common,
            out,
            decays,
            seeds,
        } => {
            let rows = experiments::sweep_ema(&common.load()?, &decays, &seeds, &out)?;
            print_sweep(&["ema_decay"], &rows);
        }
        Command::Replay { checkpoint, confusion } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let (shadow, raw) = experiments::replay(&ck)?;
            println!("iteration = {}", ck.iteration);
            println!("shadow_accuracy = {}", shadow.accuracy);
            println!("raw_accuracy = {}", raw.accuracy);
            if let Some(path) = confusion {
                write_confusion(&path, &shadow.confusion)?;
            }
        }
        Command::Report { dir } => report(&dir)?,
        Command::MakeGlyphs {
            out,
            classes,
            n,
            noise,
            seed,
        } => {
            let set = make_tiny_glyphs(classes, n, noise, seed)?;
            set.write_to(std::io::BufWriter::new(std::fs::File::create(&out)?))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_grids_and_modes() {
        let cli = Cli::try_parse_from(["sslctl", "sweep-eps", "-o", "out", "--eps-strong", "0.2,0.4"]).unwrap();
        match cli.command {
            Command::SweepEps { eps_weak, eps_strong, seeds, .. } => {
                assert_eq!(eps_weak, [0.5, 0.8]);
                assert_eq!(eps_strong, [0.2, 0.4]);
                assert_eq!(seeds, [0]);
            }
            _ => panic!("wrong subcommand"),
        }
        let cli = Cli::try_parse_from(["sslctl", "train", "-o", "run", "--mode", "satpl-only", "--iterations", "10"]).unwrap();
        match cli.command {
            Command::Train { mode, common, .. } => {
                assert_eq!(mode, Some(Mode::SatplOnly));
                assert_eq!(common.load().unwrap().iterations, 10);
            }
            _ => panic!("wrong subcommand"),
        }
        assert!(Cli::try_parse_from(["sslctl", "train", "-o", "run", "--mode", "greedy"]).is_err());
        assert!(Cli::try_parse_from(["sslctl", "train"]).is_err());
    }

    #[test]
    fn default_sweeps_cover_the_full_grids() {
        let cli = Cli::try_parse_from(["sslctl", "sweep-ema", "-o", "out"]).unwrap();
        match cli.command {
            Command::SweepEma { decays, seeds, .. } => {
                assert_eq!(decays, [0.9, 0.99, 0.999, 0.9999]);
                assert_eq!(seeds.len(), 5);
            }
            _ => panic!("wrong subcommand"),
        }
        let cli = Cli::try_parse_from(["sslctl", "sweep-eps", "-o", "out"]).unwrap();
        match cli.command {
            Command::SweepEps { eps_strong, .. } => assert_eq!(eps_strong.len(), 8),
            _ => panic!("wrong subcommand"),
        }
    }
}
