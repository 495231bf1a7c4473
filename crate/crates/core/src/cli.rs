//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O or other runtime failure, 2 invalid
//! configuration or arguments, 3 numerical divergence (a state dump is
//! written next to the report).

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{CompareConfig, ExperimentConfig, LossKind};
use crate::data::{load_embeddings, write_embeddings};
use crate::error::Error;
use crate::parallel::map_indexed;
use crate::trainer::{load_dataset, Checkpoint, EmbeddingModel, Experiment, RunReport};
use crate::verify::run_suites;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "proxy-isa", version, about = "Proxy-based metric learning with adaptive pair weighting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one configuration and write report.json and checkpoint.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run every (loss, seed) cell of a comparison and summarize.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Directory for compare.json with the summary and all reports.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in property suites.
    Verify {
        #[arg(long)]
        filter: Option<String>,
    },
    /// Write evaluation embeddings and proxies in the embedding file format.
    DumpEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input features to embed; defaults to the evaluation split of the
        /// checkpoint's dataset.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InfeasibleSeparation { .. } => EXIT_CONFIG,
        Error::NumericalDivergence { .. } => EXIT_DIVERGED,
        _ => EXIT_FAILURE,
    }
}

fn fail(context: &str, err: &Error) -> i32 {
    eprintln!("error: {context}: {err}");
    exit_code(err)
}

pub fn run(cli: Cli) -> i32 {
    match cli.command {
        Command::Train { config, out, resume } => cmd_train(&config, &out, resume.as_deref()),
        Command::Compare { config, out } => cmd_compare(&config, out.as_deref()),
        Command::Verify { filter } => cmd_verify(filter.as_deref()),
        Command::DumpEmbeddings { checkpoint, data, out } => cmd_dump_embeddings(&checkpoint, data.as_deref(), &out),
    }
}

pub fn cmd_train(config_path: &Path, out: &Path, resume: Option<&Path>) -> i32 {
    let config = match ExperimentConfig::load(config_path) {
        Ok(c) => c,
        Err(e @ Error::Io(_)) => return fail(&format!("reading {}", config_path.display()), &e),
        Err(e) => return fail("invalid config", &Error::Config(e.to_string().replace("invalid configuration: ", ""))),
    };
    let dataset = match load_dataset(&config) {
        Ok(d) => d,
        Err(e) => return fail("loading data", &e),
    };
    let experiment = match resume {
        Some(path) => Checkpoint::load(path).and_then(|ckpt| {
            if ckpt.config.seed != config.seed || ckpt.config.loss != config.loss {
                return Err(Error::Config("checkpoint was produced by a different config".into()));
            }
            let mut exp = Experiment::resume(ckpt, dataset)?;
            // allow extending the run
            exp.config.epochs = config.epochs;
            Ok(exp)
        }),
        None => Experiment::new(config, dataset),
    };
    let mut experiment = match experiment {
        Ok(e) => e,
        Err(e) => return fail("setting up run", &e),
    };
    if let Err(e) = std::fs::create_dir_all(out) {
        return fail(&format!("creating {}", out.display()), &e.into());
    }
    match experiment.run() {
        Ok(report) => {
            let report_path = out.join("report.json");
            let written = report
                .to_json()
                .and_then(|json| Ok(std::fs::write(&report_path, json)?))
                .and_then(|_| experiment.checkpoint().save(out.join("checkpoint.json")));
            if let Err(e) = written {
                return fail("writing outputs", &e);
            }
            let last = report.last();
            println!(
                "epoch {}: Recall@1 {:.4}  MAP@R {:.4}  -> {}",
                last.epoch,
                last.recall_at_1,
                last.map_at_r,
                report_path.display()
            );
            EXIT_OK
        }
        Err(err) => {
            if matches!(err, Error::NumericalDivergence { .. }) {
                let dump = out.join("divergence_state.json");
                match experiment.checkpoint().save(&dump) {
                    Ok(()) => eprintln!("state dump written to {}", dump.display()),
                    Err(e) => eprintln!("could not write state dump: {e}"),
                }
            }
            fail("training", &err)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub loss: LossKind,
    pub runs: usize,
    pub recall_at_1_mean: f64,
    pub recall_at_1_std: f64,
    pub map_at_r_mean: f64,
    pub map_at_r_std: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareOutput {
    pub summary: Vec<CompareRow>,
    pub reports: Vec<RunReport>,
}

/// Sample mean and standard deviation; the deviation is 0 for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every `(loss, seed)` cell. Cells with the same seed share data,
/// initialization and sampler streams.
pub fn run_compare(config: &CompareConfig) -> crate::Result<CompareOutput> {
    let cells: Vec<(LossKind, u64)> =
        config.losses.iter().flat_map(|&l| config.seeds.iter().map(move |&s| (l, s))).collect();
    let reports = map_indexed(cells.len(), |i| {
        let (loss, seed) = cells[i];
        let cfg = ExperimentConfig { loss, seed, ..config.base.clone() };
        let dataset = load_dataset(&cfg)?;
        Experiment::new(cfg, dataset)?.run()
    })
    .into_iter()
    .collect::<crate::Result<Vec<RunReport>>>()?;
    let summary = config
        .losses
        .iter()
        .map(|&loss| {
            let rows: Vec<&RunReport> = reports.iter().filter(|r| r.config.loss == loss).collect();
            let r1: Vec<f64> = rows.iter().map(|r| r.last().recall_at_1).collect();
            let map: Vec<f64> = rows.iter().map(|r| r.last().map_at_r).collect();
            let (recall_at_1_mean, recall_at_1_std) = mean_std(&r1);
            let (map_at_r_mean, map_at_r_std) = mean_std(&map);
            CompareRow { loss, runs: rows.len(), recall_at_1_mean, recall_at_1_std, map_at_r_mean, map_at_r_std }
        })
        .collect();
    Ok(CompareOutput { summary, reports })
}

pub fn cmd_compare(config_path: &Path, out: Option<&Path>) -> i32 {
    let config = match CompareConfig::load(config_path) {
        Ok(c) => c,
        Err(e @ Error::Io(_)) => return fail(&format!("reading {}", config_path.display()), &e),
        Err(e) => return fail("invalid config", &e),
    };
    let output = match run_compare(&config) {
        Ok(o) => o,
        Err(e) => return fail("comparison", &e),
    };
    println!("{:<20} {:>4}  {:>17}  {:>17}", "loss", "runs", "Recall@1", "MAP@R");
    for row in &output.summary {
        println!(
            "{:<20} {:>4}  {:.4} ± {:.4}  {:.4} ± {:.4}",
            row.loss.name(),
            row.runs,
            row.recall_at_1_mean,
            row.recall_at_1_std,
            row.map_at_r_mean,
            row.map_at_r_std
        );
    }
    if let Some(dir) = out {
        let written = std::fs::create_dir_all(dir)
            .map_err(Error::from)
            .and_then(|_| Ok(serde_json::to_string_pretty(&output)?))
            .and_then(|json| Ok(std::fs::write(dir.join("compare.json"), json)?));
        if let Err(e) = written {
            return fail("writing compare.json", &e);
        }
    }
    EXIT_OK
}

pub fn cmd_verify(filter: Option<&str>) -> i32 {
    let results = run_suites(filter);
    if results.is_empty() {
        eprintln!("error: no suite named {:?}", filter.unwrap_or_default());
        return EXIT_CONFIG;
    }
    let mut all_ok = true;
    for (name, outcome) in results {
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                all_ok = false;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if all_ok {
        EXIT_OK
    } else {
        EXIT_FAILURE
    }
}

pub fn cmd_dump_embeddings(checkpoint: &Path, data: Option<&Path>, out: &Path) -> i32 {
    let result = (|| -> crate::Result<usize> {
        let ckpt = Checkpoint::load(checkpoint)?;
        let proxies: Vec<(usize, Vec<f64>)> = ckpt
            .state
            .states
            .iter()
            .enumerate()
            .map(|(c, st)| Ok((st.class_id, ckpt.state.proxies.unit(c)?)))
            .collect::<crate::Result<_>>()?;
        let (emb, labels) = match data {
            Some(path) => {
                if matches!(ckpt.state.model, EmbeddingModel::Free { .. }) {
                    return Err(Error::Config("free embeddings cannot embed new data".into()));
                }
                let ds = load_embeddings(path)?;
                (ckpt.state.model.forward(&ds.features, &[])?.unit, ds.labels)
            }
            None => {
                let dataset = load_dataset(&ckpt.config)?;
                Experiment::resume(ckpt, dataset)?.eval_embeddings()?
            }
        };
        write_embeddings(out, &emb, &labels, &proxies)?;
        Ok(labels.len() + proxies.len())
    })();
    match result {
        Ok(rows) => {
            println!("wrote {rows} rows to {}", out.display());
            EXIT_OK
        }
        Err(e) => fail("dump-embeddings", &e),
    }
}
