use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{DomainConfig, ExperimentConfig, FiberTruth, SourceConfig};
use super::ExperimentError;
use crate::basis::{default_source, trivial_planar_basis, vector_heat_basis, TangentBasis};
use crate::conductivity::{principal_fiber, FiberParams};
use crate::eikonal::{geodesic_distance, solve_fim_many, ActivationMap, ConductivityTensorField};
use crate::estimators::{
    add_noise, estimate_vertex_gradients, fiber_angle_error, fit_tensor_from_gradients, map_rmse, summarize,
    validate_unseen_map, FitReport, UnseenMapValidation,
};
use crate::io::{load_mesh, read_fiber_params, SampleRecord};
use crate::mesh::{build_grid_mesh, project_points, sample_uniform_by_area, PointSample, TriMesh};
use crate::sampling::{farthest_point_sample, latin_hypercube_sample};
use crate::trainer::{train, CollocationPoint, Dataset, TrainOutcome, TrainedModel, TrainingConfig};
use crate::Vec3;

/// Surface, frames and (optional) ground truth of an experiment.
#[derive(Debug, Clone)]
pub struct Domain {
    pub mesh: TriMesh,
    pub basis: TangentBasis,
    pub planar: bool,
    /// Ground truth per vertex, in simulator units.
    pub truth: Option<Vec<FiberParams>>,
    /// Shortest edge length (the grid spacing on grids).
    pub spacing: f64,
    /// Vertices outside the band around the two-region interface (all
    /// vertices for other ground truths).
    pub smooth: Vec<bool>,
}

impl Domain {
    pub fn truth_field(&self) -> Option<ConductivityTensorField> {
        self.truth
            .as_ref()
            .map(|p| ConductivityTensorField::from_params(&self.basis, p))
    }

    /// Number of network input coordinates.
    pub fn input_dim(&self) -> usize {
        if self.planar {
            2
        } else {
            3
        }
    }
}

/// Two-region rule: fibers along `v1` where `x + y < 0`, along `v2`
/// elsewhere, with squared speeds 1 and 1/2.
pub fn two_region_params(x: &Vec3) -> FiberParams {
    if x.x + x.y < 0.0 {
        FiberParams { a: 1.0, e1: 1.0, e2: 0.5 }
    } else {
        FiberParams { a: 0.0, e1: 1.0, e2: 0.5 }
    }
}

pub fn build_domain(cfg: &ExperimentConfig) -> Result<Domain, ExperimentError> {
    let mesh = match &cfg.domain {
        DomainConfig::Grid { n, half_width } => {
            build_grid_mesh(*n, *half_width).map_err(|e| ExperimentError::Config(format!("domain: {e}")))?
        }
        DomainConfig::Mesh { path } => load_mesh(path, None)?,
    };
    let planar = mesh.is_planar(1e-8);
    let basis = if planar {
        trivial_planar_basis(&mesh)
    } else {
        let (v, dir) = default_source(&mesh);
        vector_heat_basis(&mesh, v, dir, None)
    }
    .map_err(|e| ExperimentError::Compute(format!("tangent basis: {e}")))?;
    let n = mesh.vertex_count();
    let truth = match &cfg.fibers {
        FiberTruth::TwoRegion => Some(mesh.vertices().iter().map(two_region_params).collect()),
        FiberTruth::Constant { a, e1, e2 } => Some(vec![FiberParams { a: *a, e1: *e1, e2: *e2 }; n]),
        FiberTruth::File { path } => {
            let p = read_fiber_params(path)?;
            if p.len() != n {
                return Err(ExperimentError::Config(format!(
                    "fibers: {} has {} rows for {n} vertices",
                    path.display(),
                    p.len()
                )));
            }
            Some(p)
        }
        FiberTruth::Unknown => None,
    };
    let spacing = (0..mesh.triangle_count())
        .flat_map(|t| mesh.edge_lengths(t))
        .fold(f64::INFINITY, f64::min);
    let band = cfg.smooth_band * spacing;
    let smooth = mesh
        .vertices()
        .iter()
        .map(|x| !matches!(cfg.fibers, FiberTruth::TwoRegion) || (x.x + x.y).abs() / 2f64.sqrt() > band)
        .collect();
    Ok(Domain {
        mesh,
        basis,
        planar,
        truth,
        spacing,
        smooth,
    })
}

/// Independent seeds for the random parts of data generation.
struct Seeds {
    sources: u64,
    samples: u64,
    noise: u64,
}

impl Seeds {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            sources: rng.next_u64(),
            samples: rng.next_u64(),
            noise: rng.next_u64(),
        }
    }
}

fn bounding_box_2d(mesh: &TriMesh) -> ([f64; 2], [f64; 2]) {
    let (lo, hi) = mesh.bounding_box();
    ([lo.x, lo.y], [hi.x, hi.y])
}

/// Snaps points to the nearest distinct vertices (ties to the lowest index).
fn snap_to_vertices(mesh: &TriMesh, points: &[Vec3]) -> Vec<usize> {
    let mut used = vec![false; mesh.vertex_count()];
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        let v = (0..mesh.vertex_count())
            .filter(|&v| !used[v])
            .min_by(|&a, &b| (mesh.vertex(a) - p).norm().total_cmp(&(mesh.vertex(b) - p).norm()).then(a.cmp(&b)))
            .expect("fewer sources than vertices");
        used[v] = true;
        out.push(v);
    }
    out
}

pub fn place_sources(cfg: &ExperimentConfig, domain: &Domain) -> Result<Vec<usize>, ExperimentError> {
    let mesh = &domain.mesh;
    let n = mesh.vertex_count();
    if cfg.sources.count() > n {
        return Err(ExperimentError::Config(format!(
            "sources: {} sources on a mesh with {n} vertices",
            cfg.sources.count()
        )));
    }
    let seed = Seeds::new(cfg.seed).sources;
    let sources = match &cfg.sources {
        SourceConfig::LatinHypercube { count } => {
            let points: Vec<Vec3> = if domain.planar {
                let (lo, hi) = bounding_box_2d(mesh);
                latin_hypercube_sample(*count, lo, hi, seed)
                    .map_err(|e| ExperimentError::Config(format!("sources: {e}")))?
                    .into_iter()
                    .map(|p| Vec3::new(p[0], p[1], 0.0))
                    .collect()
            } else {
                let (lo, hi) = mesh.bounding_box();
                latin_hypercube_sample(*count, lo.into(), hi.into(), seed)
                    .map_err(|e| ExperimentError::Config(format!("sources: {e}")))?
                    .into_iter()
                    .map(Vec3::from)
                    .collect()
            };
            let on_surface: Vec<Vec3> = project_points(mesh, &points).iter().map(|p| p.sample.position).collect();
            snap_to_vertices(mesh, &on_surface)
        }
        SourceConfig::FarthestPoint { count, start } => {
            if *start >= n {
                return Err(ExperimentError::Config(format!("sources.start: vertex {start} out of range")));
            }
            farthest_point_sample(mesh, *count, *start).map_err(|e| ExperimentError::Compute(e.to_string()))?
        }
        SourceConfig::Explicit { vertices } => {
            if let Some(v) = vertices.iter().find(|&&v| v >= n) {
                return Err(ExperimentError::Config(format!("sources.vertices: vertex {v} out of range")));
            }
            vertices.clone()
        }
    };
    Ok(sources)
}

/// Sample locations for every map.
fn sample_locations(cfg: &ExperimentConfig, domain: &Domain, seed: u64) -> Result<Vec<Vec<PointSample>>, ExperimentError> {
    let counts = cfg.samples_per_map();
    let mesh = &domain.mesh;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |n: usize, rng: &mut ChaCha8Rng| -> Result<Vec<PointSample>, ExperimentError> {
        if domain.planar {
            let (lo, hi) = bounding_box_2d(mesh);
            let pts: Vec<Vec3> = latin_hypercube_sample(n, lo, hi, rng.next_u64())
                .map_err(|e| ExperimentError::Config(format!("samples: {e}")))?
                .into_iter()
                .map(|p| Vec3::new(p[0], p[1], 0.0))
                .collect();
            Ok(project_points(mesh, &pts).into_iter().map(|p| p.sample).collect())
        } else {
            Ok(sample_uniform_by_area(mesh, n, rng))
        }
    };
    if cfg.shared_points {
        let all = draw(counts[0], &mut rng)?;
        Ok(counts.iter().map(|&c| all[..c].to_vec()).collect())
    } else {
        counts.iter().map(|&c| draw(c, &mut rng)).collect()
    }
}

/// Simulated maps and the samples drawn from them.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    /// Every placed source; the first `maps` produce training maps.
    pub sources: Vec<usize>,
    /// Noise-free maps of the training sources, in simulator units.
    pub maps: Vec<ActivationMap>,
    /// Samples in ms, with noise when configured.
    pub samples: Vec<SampleRecord>,
    pub holdout: usize,
}

/// Unseen-map source: the configured vertex, else the first source not used
/// for training, else the vertex farthest from the training sources.
pub fn holdout_source(
    cfg: &ExperimentConfig,
    domain: &Domain,
    sources: &[usize],
) -> Result<usize, ExperimentError> {
    if let Some(v) = cfg.holdout_source {
        if v >= domain.mesh.vertex_count() {
            return Err(ExperimentError::Config(format!("holdout_source: vertex {v} out of range")));
        }
        return Ok(v);
    }
    if let Some(&v) = sources.get(cfg.maps) {
        return Ok(v);
    }
    let d = geodesic_distance(&domain.mesh, &sources[..cfg.maps])?;
    Ok((0..d.len())
        .filter(|&v| d[v].is_finite())
        .fold(0, |best, v| if d[v] > d[best] { v } else { best }))
}

pub fn generate(cfg: &ExperimentConfig, domain: &Domain) -> Result<GeneratedData, ExperimentError> {
    let field = domain
        .truth_field()
        .ok_or_else(|| ExperimentError::Config("fibers: generation needs a ground truth".into()))?;
    let seeds = Seeds::new(cfg.seed);
    let sources = place_sources(cfg, domain)?;
    let sets: Vec<Vec<(usize, f64)>> = sources[..cfg.maps].iter().map(|&v| vec![(v, 0.0)]).collect();
    let maps = solve_fim_many(&domain.mesh, &field, &sets)?;
    let locations = sample_locations(cfg, domain, seeds.samples)?;
    let mut samples = Vec::with_capacity(cfg.samples_total);
    for (m, (map, locs)) in maps.iter().zip(&locations).enumerate() {
        for s in locs {
            let t = domain.mesh.interpolate(&map.times, s);
            if !t.is_finite() {
                return Err(ExperimentError::Data(format!("map {m}: sample in a region the source cannot reach")));
            }
            samples.push(SampleRecord {
                map_id: m,
                x: s.position.x,
                y: s.position.y,
                z: s.position.z,
                time_ms: t * cfg.time_unit_ms,
            });
        }
    }
    let samples = add_noise(&samples, cfg.noise_ms, seeds.noise).map_err(|e| ExperimentError::Config(e.to_string()))?;
    let holdout = holdout_source(cfg, domain, &sources)?;
    Ok(GeneratedData {
        sources,
        maps,
        samples,
        holdout,
    })
}

/// Collocation points: every vertex and every triangle barycenter.
pub fn collocation_points(domain: &Domain) -> Vec<CollocationPoint> {
    let mesh = &domain.mesh;
    let vertices = (0..mesh.vertex_count()).map(|v| CollocationPoint {
        position: mesh.vertex(v),
        frame: *domain.basis.frame(v),
    });
    let centers = (0..mesh.triangle_count()).map(|t| {
        let s = PointSample::centroid(mesh, t);
        CollocationPoint {
            position: s.position,
            frame: domain.basis.interpolate(mesh, &s),
        }
    });
    vertices.chain(centers).collect()
}

/// Groups samples by map id; ids must be `0..maps`.
pub fn samples_by_map(samples: &[SampleRecord], maps: usize) -> Result<Vec<Vec<(Vec3, f64)>>, ExperimentError> {
    let mut out = vec![Vec::new(); maps];
    for s in samples {
        let slot = out
            .get_mut(s.map_id)
            .ok_or_else(|| ExperimentError::Data(format!("sample with map id {} but {maps} maps", s.map_id)))?;
        slot.push((Vec3::new(s.x, s.y, s.z), s.time_ms));
    }
    if let Some(m) = out.iter().position(Vec::is_empty) {
        return Err(ExperimentError::Data(format!("map {m} has no samples")));
    }
    Ok(out)
}

pub fn training_config(cfg: &ExperimentConfig) -> TrainingConfig {
    TrainingConfig {
        speed_sq_cap: cfg.data_speed_sq_cap(),
        ..cfg.training.clone()
    }
}

pub fn build_dataset(cfg: &ExperimentConfig, domain: &Domain, samples: &[SampleRecord]) -> Result<Dataset, ExperimentError> {
    let raw = samples_by_map(samples, cfg.maps)?;
    Ok(Dataset::new(domain.input_dim(), raw, collocation_points(domain), cfg.training.time_scale)?)
}

pub fn run_training(
    cfg: &ExperimentConfig,
    domain: &Domain,
    samples: &[SampleRecord],
) -> Result<TrainOutcome, ExperimentError> {
    let dataset = build_dataset(cfg, domain, samples)?;
    log::info!(
        "training {} maps, {} samples, {} collocation points, {} iterations",
        dataset.map_count(),
        samples.len(),
        dataset.collocation.len(),
        cfg.training.iterations
    );
    train(&training_config(cfg), &dataset).map_err(ExperimentError::from)
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub experiment_id: String,
    pub method: String,
    pub maps: usize,
    pub noise_ms: f64,
    pub seed: u64,
    pub speed_tv_weight: f64,
    /// `all` or `smooth` (interface band excluded).
    pub region: String,
    pub vertices: usize,
    pub fiber_error_mean_deg: Option<f64>,
    pub fiber_error_median_deg: Option<f64>,
    pub fiber_error_p25: Option<f64>,
    pub fiber_error_p75: Option<f64>,
    /// Fit of the predicted maps to the samples.
    pub rmse_ms: Option<f64>,
    /// Held-out map simulated under learned vs true tensors.
    pub unseen_rmse_ms: Option<f64>,
    /// Largest sample time.
    pub t_max_ms: f64,
    /// Fraction of vertices where the baseline fit is unique.
    pub unique_fraction: Option<f64>,
}

/// Predicted fields and their metrics.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub rows: Vec<MetricsRow>,
    /// Per-vertex prediction in simulator units.
    pub params: Vec<FiberParams>,
    pub fibers: Vec<Vec3>,
    /// Per-vertex fiber angle error when the truth is known.
    pub fiber_errors: Option<Vec<f64>>,
    pub unseen: Option<UnseenMapValidation>,
    /// Predicted maps at the vertices (ms), one per training map.
    pub predicted_maps: Vec<Vec<f64>>,
}

impl Evaluation {
    pub fn row(&self, region: &str) -> &MetricsRow {
        self.rows.iter().find(|r| r.region == region).expect("region row")
    }
}

fn t_max(samples: &[SampleRecord]) -> f64 {
    samples.iter().map(|s| s.time_ms).fold(0.0, f64::max)
}

/// Metrics of a per-vertex parameter field `params` (simulator units).
fn evaluate_params(
    cfg: &ExperimentConfig,
    domain: &Domain,
    params: Vec<FiberParams>,
    samples: &[SampleRecord],
    holdout: Option<usize>,
    method: &str,
) -> Result<Evaluation, ExperimentError> {
    let mesh = &domain.mesh;
    let fibers: Vec<Vec3> = params
        .iter()
        .enumerate()
        .map(|(v, p)| principal_fiber(p, domain.basis.frame(v)))
        .collect();
    let fiber_errors = match &domain.truth {
        Some(truth) => Some(
            (0..mesh.vertex_count())
                .map(|v| {
                    let f = principal_fiber(&truth[v], domain.basis.frame(v));
                    fiber_angle_error(&f, &fibers[v])
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ExperimentError::Compute(e.to_string()))?,
        ),
        None => None,
    };
    let unseen = match (domain.truth_field(), holdout) {
        (Some(truth), Some(src)) => {
            let learned = ConductivityTensorField::from_params(&domain.basis, &params);
            let mut u = validate_unseen_map(mesh, &learned, &truth, src)
                .map_err(|e| ExperimentError::Compute(format!("unseen map: {e}")))?;
            u.rmse *= cfg.time_unit_ms;
            Some(u)
        }
        _ => None,
    };
    let mut rows = Vec::new();
    for region in ["all", "smooth"] {
        let mask: Vec<bool> = match region {
            "all" => vec![true; mesh.vertex_count()],
            _ => domain.smooth.clone(),
        };
        let stats = match &fiber_errors {
            Some(e) => {
                let vals: Vec<f64> = e.iter().zip(&mask).filter(|(_, m)| **m).map(|(e, _)| *e).collect();
                Some(summarize(&vals).map_err(|e| ExperimentError::Compute(e.to_string()))?)
            }
            None => None,
        };
        rows.push(MetricsRow {
            experiment_id: cfg.name.clone(),
            method: method.into(),
            maps: cfg.maps,
            noise_ms: cfg.noise_ms,
            seed: cfg.training.seed,
            speed_tv_weight: cfg.training.speed_tv_weight,
            region: region.into(),
            vertices: mask.iter().filter(|m| **m).count(),
            fiber_error_mean_deg: stats.map(|s| s.mean),
            fiber_error_median_deg: stats.map(|s| s.median),
            fiber_error_p25: stats.map(|s| s.p25),
            fiber_error_p75: stats.map(|s| s.p75),
            rmse_ms: None,
            unseen_rmse_ms: unseen.as_ref().map(|u| u.rmse),
            t_max_ms: t_max(samples),
            unique_fraction: None,
        });
    }
    Ok(Evaluation {
        rows,
        params,
        fibers,
        fiber_errors,
        unseen,
        predicted_maps: Vec::new(),
    })
}

/// Converts squared speeds from ms units to simulator units.
fn to_simulator_units(cfg: &ExperimentConfig, p: FiberParams) -> FiberParams {
    let s = cfg.time_unit_ms * cfg.time_unit_ms;
    FiberParams {
        a: p.a,
        e1: p.e1 * s,
        e2: p.e2 * s,
    }
}

pub fn evaluate_model(
    cfg: &ExperimentConfig,
    domain: &Domain,
    model: &TrainedModel,
    samples: &[SampleRecord],
    holdout: Option<usize>,
) -> Result<Evaluation, ExperimentError> {
    let mesh = &domain.mesh;
    if model.input_dim != domain.input_dim() {
        return Err(ExperimentError::Data(format!(
            "model takes {}-D input but the domain needs {}-D",
            model.input_dim,
            domain.input_dim()
        )));
    }
    let params = crate::exec::try_map_range(mesh.vertex_count(), |v| model.fiber_params(&mesh.vertex(v)))
        .map_err(|e| ExperimentError::Compute(e.to_string()))?
        .into_iter()
        .map(|p| to_simulator_units(cfg, p))
        .collect();
    let mut eval = evaluate_params(cfg, domain, params, samples, holdout, "network")?;
    let mut predicted = Vec::with_capacity(samples.len());
    let mut observed = Vec::with_capacity(samples.len());
    for s in samples {
        let m = s.map_id;
        if m >= model.map_count() {
            return Err(ExperimentError::Data(format!("sample of map {m} but the model has {} maps", model.map_count())));
        }
        predicted.push(
            model
                .activation_time(m, &Vec3::new(s.x, s.y, s.z))
                .map_err(|e| ExperimentError::Compute(e.to_string()))?,
        );
        observed.push(s.time_ms);
    }
    let rmse = map_rmse(&predicted, &observed).map_err(|e| ExperimentError::Data(e.to_string()))?;
    for r in eval.rows.iter_mut() {
        r.rmse_ms = Some(rmse);
    }
    eval.predicted_maps = (0..model.map_count())
        .map(|m| {
            crate::exec::try_map_range(mesh.vertex_count(), |v| model.activation_time(m, &mesh.vertex(v)))
                .map_err(|e| ExperimentError::Compute(e.to_string()))
        })
        .collect::<Result<_, _>>()?;
    Ok(eval)
}

/// Gradient-fit baseline: per-map gradients from local plane fits, then a
/// per-vertex tensor fit.
pub fn run_baseline(
    cfg: &ExperimentConfig,
    domain: &Domain,
    samples: &[SampleRecord],
    holdout: Option<usize>,
) -> Result<(FitReport, Evaluation), ExperimentError> {
    let grouped = samples_by_map(samples, cfg.maps)?;
    let gradients = grouped
        .iter()
        .map(|m| {
            let (pos, times): (Vec<Vec3>, Vec<f64>) = m.iter().copied().unzip();
            estimate_vertex_gradients(&domain.mesh, &domain.basis, &pos, &times, cfg.baseline_neighbors)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ExperimentError::Data(format!("baseline gradients: {e}")))?;
    let report =
        fit_tensor_from_gradients(&gradients, &domain.basis).map_err(|e| ExperimentError::Compute(e.to_string()))?;
    // Infeasible fits get a small positive floor so the forward solver can
    // still run on them.
    let floor = report
        .vertices
        .iter()
        .map(|v| v.params.e1.max(v.params.e2))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE)
        * 1e-6;
    let params = report
        .params()
        .into_iter()
        .map(|p| {
            to_simulator_units(
                cfg,
                FiberParams {
                    a: p.a,
                    e1: p.e1.max(floor),
                    e2: p.e2.max(floor),
                },
            )
        })
        .collect();
    let mut eval = evaluate_params(cfg, domain, params, samples, holdout, "baseline")?;
    let unique = report.vertices.iter().filter(|v| v.unique).count() as f64 / report.vertices.len() as f64;
    for r in eval.rows.iter_mut() {
        r.unique_fraction = Some(unique);
    }
    Ok((report, eval))
}

/// Everything produced by one generate-train-evaluate run.
#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub data: GeneratedData,
    pub outcome: TrainOutcome,
    pub evaluation: Evaluation,
}

/// Generates data, trains and evaluates in memory.
pub fn run_pipeline(cfg: &ExperimentConfig, domain: &Domain) -> Result<PipelineResult, ExperimentError> {
    cfg.validate()?;
    let data = generate(cfg, domain)?;
    let outcome = run_training(cfg, domain, &data.samples)?;
    let evaluation = evaluate_model(cfg, domain, &outcome.model, &data.samples, Some(data.holdout))?;
    Ok(PipelineResult {
        data,
        outcome,
        evaluation,
    })
}
