//! One-shot reproduction driver: ingest/synth, fit, train supporting model,
//! tune voters, augment, train direct (and oracle), evaluate — into a
//! content-addressed run directory. Fails fast at the first stage error,
//! preserving completed stage artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use goldforge_core::error::{Error, Result};
use goldforge_core::metrics::EvalReport;
use goldforge_core::persist::save_json;

use crate::artifacts::names;
use crate::config::{Method, RunConfig};
use crate::stages;

#[derive(Debug, Serialize)]
pub struct PipelineSummary {
    pub run_dir: PathBuf,
    pub digest: String,
    pub seed_budget: usize,
    pub elected_total: usize,
    pub pool_after_dedupe: usize,
    pub shortfall_count: usize,
    pub reports: BTreeMap<String, EvalReport>,
    pub wall_time_ms: u128,
}

/// Resolve the content-addressed run directory for a config.
pub fn run_dir_for(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join(&cfg.digest()[..16])
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineSummary> {
    let started = std::time::Instant::now();
    cfg.validate()?;
    let digest = cfg.digest();
    let run_dir = run_dir_for(cfg);
    std::fs::create_dir_all(&run_dir)
        .map_err(|e| Error::io(run_dir.display().to_string(), e))?;
    write_config_snapshot(cfg, &run_dir)?;

    stages::stage_fit_embed(cfg, &run_dir)?;
    stages::stage_train_intent(cfg, &run_dir)?;
    stages::stage_tune(cfg, &run_dir)?;
    let augment = stages::stage_augment(cfg, &run_dir)?;
    stages::stage_train_direct(cfg, &run_dir)?;
    if cfg.methods.contains(&Method::Oracle) {
        stages::stage_train_oracle(cfg, &run_dir)?;
    }

    let mut reports = BTreeMap::new();
    for &method in &cfg.methods {
        let report = stages::stage_evaluate(cfg, &run_dir, method, false)?;
        reports.insert(method.name().to_string(), report);
    }

    Ok(PipelineSummary {
        run_dir,
        digest,
        seed_budget: augment.seed_budget,
        elected_total: augment.elected_total,
        pool_after_dedupe: augment.pool_after_dedupe,
        shortfall_count: augment.shortfall_count,
        reports,
        wall_time_ms: started.elapsed().as_millis(),
    })
}

#[derive(Serialize)]
struct ConfigSnapshot {
    #[serde(flatten)]
    meta: goldforge_core::persist::ArtifactMeta,
    config: RunConfig,
}

/// The persisted config snapshot uses the canonical form (output directory
/// cleared) so run directories stay byte-identical wherever they live.
fn write_config_snapshot(cfg: &RunConfig, run_dir: &Path) -> Result<()> {
    let mut canonical = cfg.clone();
    canonical.output_dir = PathBuf::new();
    save_json(
        &run_dir.join(names::CONFIG),
        &ConfigSnapshot {
            meta: crate::stages::meta(cfg),
            config: canonical,
        },
    )
}
