//! Experiment pipelines driven by a TOML config: synthetic data generation,
//! training, evaluation, the gradient-fit baseline and parameter sweeps.
//!
//! The `pipeline` functions work in memory; the `cmd_*` functions wrap them
//! with the on-disk layout used by the command-line tool.

mod config;
mod pipeline;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{DomainConfig, ExperimentConfig, FiberTruth, SourceConfig, SweepConfig};
pub use pipeline::{
    build_dataset, build_domain, collocation_points, evaluate_model, generate, holdout_source, place_sources,
    run_baseline, run_pipeline, run_training, samples_by_map, training_config, two_region_params, Domain,
    Evaluation, GeneratedData, MetricsRow, PipelineResult,
};

use crate::eikonal::EikonalError;
use crate::io::{
    read_samples, save_poly_data, write_csv, write_fiber_params, write_samples, IoError, PolyData,
    SampleRecord,
};
use crate::trainer::{TrainError, TrainOutcome, TrainedModel};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("io: {0}")]
    Io(String),
    #[error("training diverged at iteration {iteration} ({term} became non-finite)")]
    Diverged {
        iteration: usize,
        term: String,
        last: Box<TrainOutcome>,
    },
    #[error("{0}")]
    Compute(String),
}

impl ExperimentError {
    /// Process exit code: 2 for config and data errors, 3 for divergence, 4
    /// for file errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Data(_) => 2,
            Self::Diverged { .. } => 3,
            Self::Io(_) => 4,
            Self::Compute(_) => 1,
        }
    }
}

impl From<IoError> for ExperimentError {
    fn from(e: IoError) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<EikonalError> for ExperimentError {
    fn from(e: EikonalError) -> Self {
        Self::Compute(format!("eikonal solver: {e}"))
    }
}

impl From<TrainError> for ExperimentError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { iteration, term, last } => Self::Diverged { iteration, term, last },
            TrainError::Config(m) => Self::Config(format!("training: {m}")),
            TrainError::Data(m) => Self::Data(m),
            TrainError::Io(m) => Self::Io(m),
            TrainError::Model(m) => Self::Data(format!("model: {m}")),
            other => Self::Compute(other.to_string()),
        }
    }
}

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const DATASET_MANIFEST: &str = "dataset.json";
pub const MODEL_FILE: &str = "model.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const FIELDS_FILE: &str = "fields.vtk";
pub const TRUTH_FILE: &str = "truth.vtk";
pub const TRUE_FIBERS_FILE: &str = "fibers_true.csv";
pub const BASELINE_METRICS_FILE: &str = "baseline_metrics.csv";
pub const BASELINE_FIELDS_FILE: &str = "baseline_fields.vtk";
pub const SWEEP_METRICS_FILE: &str = "sweep_metrics.csv";

pub fn samples_file(map: usize) -> String {
    format!("samples_m{map}.csv")
}

/// Provenance of a generated data directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub maps: usize,
    pub samples_per_map: Vec<usize>,
    pub sources: Vec<usize>,
    pub holdout_source: usize,
    pub time_unit_ms: f64,
    pub noise_ms: f64,
    pub seed: u64,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Io(format!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), ExperimentError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_resolved(cfg: &ExperimentConfig, dir: &Path) -> Result<(), ExperimentError> {
    write_text(&dir.join(RESOLVED_CONFIG), &cfg.to_toml())
}

/// Ground-truth fields and the full simulated maps on the surface.
fn truth_poly_data(cfg: &ExperimentConfig, domain: &Domain, data: &GeneratedData) -> PolyData {
    let mut pd = PolyData::new(domain.mesh.clone());
    pd.title = format!("{} ground truth", cfg.name);
    if let Some(truth) = &domain.truth {
        let fibers = truth
            .iter()
            .enumerate()
            .map(|(v, p)| crate::conductivity::principal_fiber(p, domain.basis.frame(v)))
            .collect();
        pd = pd
            .with_point_vectors("fiber", fibers)
            .with_point_scalars("a", truth.iter().map(|p| p.a).collect())
            .with_point_scalars("e1", truth.iter().map(|p| p.e1).collect())
            .with_point_scalars("e2", truth.iter().map(|p| p.e2).collect());
    }
    for (m, map) in data.maps.iter().enumerate() {
        pd = pd.with_point_scalars(
            &format!("time_m{m}"),
            map.times.iter().map(|t| t * cfg.time_unit_ms).collect(),
        );
    }
    pd
}

/// Writes samples per map, ground truth and provenance to `out`.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<GeneratedData, ExperimentError> {
    cfg.validate()?;
    let domain = build_domain(cfg)?;
    let data = generate(cfg, &domain)?;
    create_dir(out)?;
    write_resolved(cfg, out)?;
    let mut counts = Vec::with_capacity(cfg.maps);
    for m in 0..cfg.maps {
        let rows: Vec<SampleRecord> = data.samples.iter().filter(|s| s.map_id == m).copied().collect();
        counts.push(rows.len());
        write_samples(&out.join(samples_file(m)), &rows)?;
    }
    if let Some(truth) = &domain.truth {
        write_fiber_params(&out.join(TRUE_FIBERS_FILE), truth)?;
    }
    save_poly_data(&out.join(TRUTH_FILE), &truth_poly_data(cfg, &domain, &data))?;
    let manifest = DatasetManifest {
        name: cfg.name.clone(),
        maps: cfg.maps,
        samples_per_map: counts,
        sources: data.sources.clone(),
        holdout_source: data.holdout,
        time_unit_ms: cfg.time_unit_ms,
        noise_ms: cfg.noise_ms,
        seed: cfg.seed,
    };
    write_text(
        &out.join(DATASET_MANIFEST),
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    log::info!("wrote {} samples of {} maps to {}", data.samples.len(), cfg.maps, out.display());
    Ok(data)
}

/// Samples of a data directory and its manifest, if present.
pub fn read_data_dir(
    cfg: &ExperimentConfig,
    dir: &Path,
) -> Result<(Vec<SampleRecord>, Option<DatasetManifest>), ExperimentError> {
    let manifest_path = dir.join(DATASET_MANIFEST);
    let manifest: Option<DatasetManifest> = if manifest_path.exists() {
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
        Some(serde_json::from_str(&text).map_err(|e| ExperimentError::Data(format!("{}: {e}", manifest_path.display())))?)
    } else {
        None
    };
    if let Some(m) = &manifest {
        if m.maps != cfg.maps {
            return Err(ExperimentError::Config(format!(
                "maps: config asks for {} maps but {} holds {}",
                cfg.maps,
                dir.display(),
                m.maps
            )));
        }
    }
    let mut samples = Vec::new();
    for m in 0..cfg.maps {
        let rows = read_samples(&dir.join(samples_file(m)))?;
        if let Some(bad) = rows.iter().find(|s| s.map_id != m) {
            return Err(ExperimentError::Data(format!(
                "{}: row with map id {} in the file of map {m}",
                samples_file(m),
                bad.map_id
            )));
        }
        samples.extend(rows);
    }
    if manifest.is_some() && samples.len() != cfg.samples_total {
        return Err(ExperimentError::Config(format!(
            "samples_total: config says {} but {} holds {}",
            cfg.samples_total,
            dir.display(),
            samples.len()
        )));
    }
    Ok((samples, manifest))
}

/// Trains on a data directory; writes the model, loss history and the
/// resolved config. After divergence the history up to that point is still
/// written.
pub fn cmd_train(cfg: &ExperimentConfig, data_dir: &Path, out: &Path) -> Result<TrainOutcome, ExperimentError> {
    cfg.validate()?;
    let domain = build_domain(cfg)?;
    let (samples, _) = read_data_dir(cfg, data_dir)?;
    create_dir(out)?;
    write_resolved(cfg, out)?;
    match run_training(cfg, &domain, &samples) {
        Ok(outcome) => {
            outcome.model.save(&out.join(MODEL_FILE))?;
            write_csv(&out.join(HISTORY_FILE), &outcome.history)?;
            Ok(outcome)
        }
        Err(ExperimentError::Diverged { iteration, term, last }) => {
            write_csv(&out.join(HISTORY_FILE), &last.history)?;
            Err(ExperimentError::Diverged { iteration, term, last })
        }
        Err(e) => Err(e),
    }
}

fn fields_poly_data(cfg: &ExperimentConfig, domain: &Domain, eval: &Evaluation) -> PolyData {
    let p = &eval.params;
    let mut pd = PolyData::new(domain.mesh.clone())
        .with_point_vectors("fiber", eval.fibers.clone())
        .with_point_scalars("a", p.iter().map(|x| x.a).collect())
        .with_point_scalars("e1", p.iter().map(|x| x.e1).collect())
        .with_point_scalars("e2", p.iter().map(|x| x.e2).collect());
    pd.title = format!("{} prediction", cfg.name);
    if let Some(e) = &eval.fiber_errors {
        pd = pd.with_point_scalars("fiber_error_deg", e.clone());
    }
    for (m, t) in eval.predicted_maps.iter().enumerate() {
        pd = pd.with_point_scalars(&format!("time_m{m}"), t.clone());
    }
    if let Some(u) = &eval.unseen {
        let ms = |t: &Vec<f64>| t.iter().map(|x| x * cfg.time_unit_ms).collect();
        pd = pd
            .with_point_scalars("unseen_learned", ms(&u.learned.times))
            .with_point_scalars("unseen_true", ms(&u.truth.times));
    }
    pd
}

fn holdout_for(
    cfg: &ExperimentConfig,
    domain: &Domain,
    manifest: &Option<DatasetManifest>,
) -> Result<Option<usize>, ExperimentError> {
    if domain.truth.is_none() {
        return Ok(None);
    }
    match (cfg.holdout_source, manifest) {
        (Some(v), _) => holdout_source(cfg, domain, &[]).map(|_| Some(v)),
        (None, Some(m)) => Ok(Some(m.holdout_source)),
        (None, None) => Ok(None),
    }
}

/// Metrics and predicted fields of a trained model.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    model_path: &Path,
    out: &Path,
) -> Result<Evaluation, ExperimentError> {
    cfg.validate()?;
    let domain = build_domain(cfg)?;
    let (samples, manifest) = read_data_dir(cfg, data_dir)?;
    let model = TrainedModel::load(model_path)?;
    let holdout = holdout_for(cfg, &domain, &manifest)?;
    let eval = evaluate_model(cfg, &domain, &model, &samples, holdout)?;
    create_dir(out)?;
    write_csv(&out.join(METRICS_FILE), &eval.rows)?;
    save_poly_data(&out.join(FIELDS_FILE), &fields_poly_data(cfg, &domain, &eval))?;
    Ok(eval)
}

pub fn cmd_baseline(cfg: &ExperimentConfig, data_dir: &Path, out: &Path) -> Result<Evaluation, ExperimentError> {
    cfg.validate()?;
    let domain = build_domain(cfg)?;
    let (samples, manifest) = read_data_dir(cfg, data_dir)?;
    let holdout = holdout_for(cfg, &domain, &manifest)?;
    let (report, eval) = run_baseline(cfg, &domain, &samples, holdout)?;
    if !report.all_unique() {
        log::warn!(
            "baseline fit is not unique at {} of {} vertices",
            report.vertices.iter().filter(|v| !v.unique).count(),
            report.vertices.len()
        );
    }
    create_dir(out)?;
    write_csv(&out.join(BASELINE_METRICS_FILE), &eval.rows)?;
    save_poly_data(&out.join(BASELINE_FIELDS_FILE), &fields_poly_data(cfg, &domain, &eval))?;
    Ok(eval)
}

/// Directory of one sweep entry.
pub fn sweep_entry_dir(out: &Path, entry: &ExperimentConfig) -> PathBuf {
    out.join(&entry.name)
}

/// Runs every sweep combination (generate, train, evaluate, baseline) in
/// its own directory and collects all metric rows.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<MetricsRow>, ExperimentError> {
    cfg.validate()?;
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| ExperimentError::Config("sweep: section missing".into()))?;
    let mut entries = Vec::new();
    for &w in &sweep.speed_tv_weights {
        for &m in &sweep.map_counts {
            for &s in &sweep.seeds {
                entries.push(cfg.sweep_entry(w, m, s));
            }
        }
    }
    create_dir(out)?;
    write_resolved(cfg, out)?;
    let rows = crate::exec::try_map_range(entries.len(), |i| -> Result<Vec<MetricsRow>, ExperimentError> {
        let entry = &entries[i];
        let dir = sweep_entry_dir(out, entry);
        let data_dir = dir.join("data");
        cmd_generate(entry, &data_dir)?;
        cmd_train(entry, &data_dir, &dir)?;
        let eval = cmd_evaluate(entry, &data_dir, &dir.join(MODEL_FILE), &dir)?;
        let base = cmd_baseline(entry, &data_dir, &dir)?;
        log::info!("finished {}", entry.name);
        Ok(eval.rows.into_iter().chain(base.rows).collect())
    })?;
    let rows: Vec<MetricsRow> = rows.into_iter().flatten().collect();
    write_csv(&out.join(SWEEP_METRICS_FILE), &rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests;
