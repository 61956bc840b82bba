//! goldforge: out-of-scope detection via seed-anchored data augmentation.
//!
//! Batch commands over a run directory: ingest/synth data, fit embeddings,
//! train the supporting intent model, tune detector thresholds, augment the
//! seed set into pseudo-OOS training data, train direct/oracle detectors,
//! and evaluate with threshold-free metrics.

mod artifacts;
mod config;
mod pipeline;
mod stages;

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Parser, Subcommand};
use serde::Serialize;

use goldforge_core::corpus::{ingest, DatasetRole};
use goldforge_core::detectors::DetectorKind;
use goldforge_core::error::{Error, Result};
use goldforge_core::generator::SwapStrategy;

use config::{Method, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "goldforge", version, about = "Out-of-scope detection toolkit")]
struct Cli {
    /// Run configuration file (JSON). Flags below override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Emit machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,

    #[arg(long, global = true)]
    rng_seed: Option<u64>,

    /// Matches per seed (d).
    #[arg(long, global = true)]
    matches: Option<usize>,

    /// Neighbor batch size (m); defaults to d.
    #[arg(long, global = true)]
    batch: Option<usize>,

    /// Swap strategy: random | last.
    #[arg(long, global = true)]
    strategy: Option<String>,

    /// Accept all candidates, skipping elections (ablation).
    #[arg(long, global = true)]
    no_election: bool,

    /// Seed budget as a fraction of INS train size.
    #[arg(long, global = true)]
    seed_fraction: Option<f64>,

    /// Embedding backend: tfidf | glove | external | random.
    #[arg(long, global = true)]
    extractor: Option<String>,

    /// Vector file for the glove/external extractors.
    #[arg(long, global = true)]
    vectors: Option<PathBuf>,

    /// Source dataset path; repeat to concatenate pools into a MIX source.
    #[arg(long = "source", global = true)]
    sources: Vec<PathBuf>,

    /// Comma-separated voter list (e.g. entropy,mahalanobis,dropout).
    #[arg(long, global = true)]
    voters: Option<String>,

    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Comma-separated evaluation methods.
    #[arg(long, global = true)]
    methods: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset file or `<prefix>.{train,dev,test}.jsonl` family.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// target | source | target_unlabeled
        #[arg(long, default_value = "target")]
        role: String,
    },
    /// Generate the synthetic target corpus and companion sources.
    Synth {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Fit the embedding backend.
    FitEmbed {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Train the supporting intent classifier.
    TrainIntent {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Fit in-scope geometry and tune voter thresholds on dev.
    Tune {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Sample seeds, extract matches, generate candidates, hold elections,
    /// and write the aggregated training set.
    Augment {
        #[arg(long)]
        run_dir: PathBuf,
        /// Train any missing upstream artifacts first.
        #[arg(long)]
        train_missing: bool,
    },
    /// Train the direct OOS detector on the augmented set.
    TrainDirect {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Train the oracle upper bound on all true OOS labels.
    TrainOracle {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Score the test split with one method and write its report.
    Evaluate {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        method: String,
        /// Comma-separated d values; retrains the direct model per point.
        #[arg(long)]
        sweep_matches: Option<String>,
        /// Also write per-example score dumps.
        #[arg(long)]
        dump_scores: bool,
    },
    /// Run every stage into a content-addressed run directory.
    Pipeline,
}

fn parse_strategy(s: &str) -> Result<SwapStrategy> {
    match s {
        "random" | "random_user_turn" => Ok(SwapStrategy::RandomUserTurn),
        "last" | "last_user_turn" => Ok(SwapStrategy::LastUserTurn),
        other => Err(Error::InvalidConfig(format!(
            "unknown strategy {other:?} (use random or last)"
        ))),
    }
}

fn parse_list<T: FromStr<Err = Error>>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .map(T::from_str)
        .collect()
}

fn overrides(cli: &Cli) -> Result<Overrides> {
    Ok(Overrides {
        rng_seed: cli.rng_seed,
        matches: cli.matches,
        batch: cli.batch,
        strategy: cli.strategy.as_deref().map(parse_strategy).transpose()?,
        no_election: cli.no_election,
        seed_fraction: cli.seed_fraction,
        extractor: cli.extractor.clone(),
        vectors: cli.vectors.clone(),
        sources: cli.sources.clone(),
        voters: cli
            .voters
            .as_deref()
            .map(parse_list::<DetectorKind>)
            .transpose()?,
        output_dir: cli.output_dir.clone(),
        methods: cli
            .methods
            .as_deref()
            .map(parse_list::<Method>)
            .transpose()?,
    })
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(&overrides(cli)?)?;
    Ok(cfg)
}

fn emit<T: Serialize>(json: bool, value: &T, human: String) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string(value)?);
    } else {
        println!("{human}");
    }
    Ok(())
}

#[derive(Serialize)]
struct IngestSummary {
    role: String,
    train: usize,
    dev: usize,
    test: usize,
    ins_train: usize,
    oos_train: usize,
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest { input, role } => {
            let role = match role.as_str() {
                "target" => DatasetRole::Target,
                "source" => DatasetRole::Source,
                "target_unlabeled" | "unlabeled" => DatasetRole::TargetUnlabeled,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown role {other:?} (use target, source, or target_unlabeled)"
                    )))
                }
            };
            let split = ingest(input, role)?;
            let summary = IngestSummary {
                role: format!("{role:?}"),
                train: split.train.len(),
                dev: split.dev.len(),
                test: split.test.len(),
                ins_train: split.ins_train().len(),
                oos_train: split.oos_train().len(),
            };
            emit(
                cli.json,
                &summary,
                format!(
                    "ok: {} train / {} dev / {} test records ({} INS, {} OOS in train)",
                    summary.train, summary.dev, summary.test, summary.ins_train, summary.oos_train
                ),
            )
        }
        Command::Synth { run_dir } => {
            let cfg = load_config(cli)?;
            let summary = stages::stage_synth(&cfg, run_dir)?;
            emit(
                cli.json,
                &summary,
                format!(
                    "synthesized target ({}/{}/{} records) and {} source utterances under {}",
                    summary.target_train,
                    summary.target_dev,
                    summary.target_test,
                    summary.source_utterances,
                    run_dir.join("data").display()
                ),
            )
        }
        Command::FitEmbed { run_dir } => {
            let cfg = load_config(cli)?;
            ensure_dir(run_dir)?;
            let (extraction, features) = stages::stage_fit_embed(&cfg, run_dir)?;
            emit(
                cli.json,
                &serde_json::json!({
                    "extraction": {"backend": extraction.tag().to_string(), "dim": extraction.dim()},
                    "features": {"backend": features.tag().to_string(), "dim": features.dim()},
                }),
                format!(
                    "fitted {} extraction backend (dim {}) and {} feature backend (dim {})",
                    extraction.tag(),
                    extraction.dim(),
                    features.tag(),
                    features.dim()
                ),
            )
        }
        Command::TrainIntent { run_dir } => {
            let cfg = load_config(cli)?;
            let (model, stats) = stages::stage_train_intent(&cfg, run_dir)?;
            emit(
                cli.json,
                &serde_json::json!({
                    "intents": model.intent_names.len(),
                    "dim": model.dim,
                    "stats": stats,
                }),
                format!(
                    "trained intent model over {} intents (train acc {:.3}, dev acc {})",
                    model.intent_names.len(),
                    stats.train_accuracy,
                    stats
                        .dev_accuracy
                        .map_or("n/a".to_string(), |a| format!("{a:.3}")),
                ),
            )
        }
        Command::Tune { run_dir } => {
            let cfg = load_config(cli)?;
            let ensemble = stages::stage_tune(&cfg, run_dir)?;
            emit(
                cli.json,
                &ensemble,
                format!(
                    "tuned {} voters (quorum {})",
                    ensemble.voters.len(),
                    ensemble.quorum()
                ),
            )
        }
        Command::Augment {
            run_dir,
            train_missing,
        } => {
            let cfg = load_config(cli)?;
            ensure_dir(run_dir)?;
            if !cfg.no_election {
                stages::ensure_artifacts(&cfg, run_dir, *train_missing)?;
            } else if !run_dir.join(artifacts::names::EMBEDDING).exists() {
                if !*train_missing {
                    return Err(Error::MissingArtifact(
                        artifacts::names::EMBEDDING.into(),
                    ));
                }
                stages::stage_fit_embed(&cfg, run_dir)?;
            }
            let summary = stages::stage_augment(&cfg, run_dir)?;
            emit(
                cli.json,
                &summary,
                format!(
                    "augmented: {} seeds -> {} elected ({} after dedupe), {} shortfalls, {} ms",
                    summary.seed_budget,
                    summary.elected_total,
                    summary.pool_after_dedupe,
                    summary.shortfall_count,
                    summary.wall_time_ms
                ),
            )
        }
        Command::TrainDirect { run_dir } => {
            let cfg = load_config(cli)?;
            let (_, stats) = stages::stage_train_direct(&cfg, run_dir)?;
            emit(
                cli.json,
                &stats,
                format!(
                    "trained direct detector ({} epochs, train acc {:.3})",
                    stats.epochs_run, stats.train_accuracy
                ),
            )
        }
        Command::TrainOracle { run_dir } => {
            let cfg = load_config(cli)?;
            let (_, stats) = stages::stage_train_oracle(&cfg, run_dir)?;
            emit(
                cli.json,
                &stats,
                format!(
                    "trained oracle detector ({} epochs, train acc {:.3})",
                    stats.epochs_run, stats.train_accuracy
                ),
            )
        }
        Command::Evaluate {
            run_dir,
            method,
            sweep_matches,
            dump_scores,
        } => {
            let cfg = load_config(cli)?;
            let method: Method = method.parse()?;
            if let Some(list) = sweep_matches {
                if method != Method::Direct {
                    return Err(Error::InvalidConfig(
                        "--sweep-matches applies to --method direct".into(),
                    ));
                }
                let ds: std::result::Result<Vec<usize>, _> = list
                    .split(',')
                    .map(|p| p.trim().parse::<usize>())
                    .collect();
                let ds = ds.map_err(|e| {
                    Error::InvalidConfig(format!("bad --sweep-matches list: {e}"))
                })?;
                let sweep = stages::stage_sweep(&cfg, run_dir, &ds)?;
                let human = sweep
                    .points
                    .iter()
                    .map(|p| format!("d={}: auroc {:.4}", p.matches, p.report.auroc))
                    .collect::<Vec<_>>()
                    .join("\n");
                return emit(cli.json, &sweep, human);
            }
            let report = stages::stage_evaluate(&cfg, run_dir, method, *dump_scores)?;
            emit(
                cli.json,
                &report,
                format!(
                    "{}: auroc {:.4} aupr {:.4} fpr@95 {:.4} fpr@90 {:.4} ({} INS / {} OOS)",
                    method.name(),
                    report.auroc,
                    report.aupr,
                    report.fpr_at_95,
                    report.fpr_at_90,
                    report.n_ins,
                    report.n_oos
                ),
            )
        }
        Command::Pipeline => {
            let cfg = load_config(cli)?;
            let summary = pipeline::run_pipeline(&cfg)?;
            let mut human = format!(
                "run {} complete in {} ms ({} elected pseudo-OOS)",
                summary.run_dir.display(),
                summary.wall_time_ms,
                summary.pool_after_dedupe
            );
            for (method, report) in &summary.reports {
                human.push_str(&format!("\n{method}: auroc {:.4}", report.auroc));
            }
            emit(cli.json, &summary, human)
        }
    }
}

fn ensure_dir(dir: &PathBuf) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        let payload = serde_json::json!({
            "error": {"kind": e.kind(), "message": e.to_string()}
        });
        eprintln!("{payload}");
        std::process::exit(1);
    }
}
