use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::trainer::TrainingConfig;

/// Surface the experiment runs on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    /// Regular grid on `[-half_width, half_width]^2` with `n` points per side.
    Grid {
        n: usize,
        #[serde(default = "default_half_width")]
        half_width: f64,
    },
    /// OBJ or VTK surface file.
    Mesh { path: PathBuf },
}

fn default_half_width() -> f64 {
    1.0
}

/// Ground-truth fiber field, in simulator units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FiberTruth {
    /// `D = diag(1, 1/2)` where `x + y < 0` and `diag(1/2, 1)` elsewhere, in
    /// the vertex frames.
    TwoRegion,
    /// The same `(a, e1, e2)` at every vertex.
    Constant { a: f64, e1: f64, e2: f64 },
    /// Per-vertex CSV with columns `vertex,a,e1,e2`.
    File { path: PathBuf },
    /// No ground truth: only fit quantities can be evaluated.
    Unknown,
}

/// How pacing sites are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    /// Latin hypercube points in the bounding box, snapped to distinct
    /// vertices.
    LatinHypercube { count: usize },
    /// Farthest-point sampling in geodesic distance.
    FarthestPoint {
        count: usize,
        #[serde(default)]
        start: usize,
    },
    Explicit { vertices: Vec<usize> },
}

impl SourceConfig {
    pub fn count(&self) -> usize {
        match self {
            Self::LatinHypercube { count } | Self::FarthestPoint { count, .. } => *count,
            Self::Explicit { vertices } => vertices.len(),
        }
    }
}

/// Settings swept by the `sweep` command. Every combination is one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub speed_tv_weights: Vec<f64>,
    pub map_counts: Vec<usize>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub domain: DomainConfig,
    pub fibers: FiberTruth,
    pub sources: SourceConfig,
    /// Maps used for training; they come from the first `maps` sources.
    pub maps: usize,
    /// Sample count split over the maps.
    pub samples_total: usize,
    /// Reuse one set of sample locations for every map instead of drawing
    /// fresh locations per map.
    #[serde(default)]
    pub shared_points: bool,
    /// Standard deviation of the Gaussian noise on sample times, in ms.
    #[serde(default)]
    pub noise_ms: f64,
    /// Milliseconds per simulator time unit.
    #[serde(default = "default_time_unit")]
    pub time_unit_ms: f64,
    /// Seed of source placement, sampling and noise.
    #[serde(default)]
    pub seed: u64,
    /// Vertex used for the unseen-map check. Defaults to the first unused
    /// source, or the vertex farthest from the training sources.
    #[serde(default)]
    pub holdout_source: Option<usize>,
    /// Half-width, in grid spacings, of the band around the two-region
    /// interface left out of the smooth-region statistics.
    #[serde(default = "default_band")]
    pub smooth_band: f64,
    /// Samples per local plane fit in the baseline.
    #[serde(default = "default_neighbors")]
    pub baseline_neighbors: usize,
    /// Network training. `speed_sq_cap` is in simulator units.
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_name() -> String {
    "run".into()
}
fn default_time_unit() -> f64 {
    1.0
}
fn default_band() -> f64 {
    2.0
}
fn default_neighbors() -> usize {
    8
}
fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    /// Planar two-region setup: 35x35 grid, 5 Latin hypercube sources, 245
    /// samples, 3 maps.
    pub fn preset_2d() -> Self {
        Self {
            name: "planar".into(),
            domain: DomainConfig::Grid { n: 35, half_width: 1.0 },
            fibers: FiberTruth::TwoRegion,
            sources: SourceConfig::LatinHypercube { count: 5 },
            maps: 3,
            samples_total: 245,
            shared_points: false,
            noise_ms: 0.0,
            time_unit_ms: 1.0,
            seed: 0,
            holdout_source: None,
            smooth_band: 2.0,
            baseline_neighbors: 8,
            training: TrainingConfig::preset_2d(),
            sweep: None,
            output_dir: default_output(),
        }
    }

    /// Surface setup: constant speeds 0.6 and 0.4 along and across the
    /// fibers, 5 farthest-point sources, 870 samples.
    pub fn preset_3d(mesh: PathBuf) -> Self {
        Self {
            name: "surface".into(),
            domain: DomainConfig::Mesh { path: mesh },
            fibers: FiberTruth::Constant { a: 1.0, e1: 0.36, e2: 0.16 },
            sources: SourceConfig::FarthestPoint { count: 5, start: 0 },
            maps: 5,
            samples_total: 870,
            training: TrainingConfig::preset_3d(),
            ..Self::preset_2d()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ExperimentError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            ExperimentError::Config(m) => ExperimentError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        match &self.domain {
            DomainConfig::Grid { n, half_width } => {
                if *n < 2 {
                    return bad(format!("domain.n: need at least 2 points per side, got {n}"));
                }
                if !(*half_width > 0.0 && half_width.is_finite()) {
                    return bad("domain.half_width: must be positive".into());
                }
            }
            DomainConfig::Mesh { .. } => {}
        }
        if let FiberTruth::Constant { a, e1, e2 } = self.fibers {
            if !(-1.0..=1.0).contains(&a) || !(e1 > 0.0 && e2 > 0.0) {
                return bad("fibers: need a in [-1, 1] and positive squared speeds".into());
            }
        }
        if self.maps == 0 {
            return bad("maps: must be at least 1".into());
        }
        if self.sources.count() < self.maps {
            return bad(format!(
                "sources: {} sources cannot supply {} maps",
                self.sources.count(),
                self.maps
            ));
        }
        if self.samples_total < self.maps {
            return bad(format!(
                "samples_total: {} samples cannot be split over {} maps",
                self.samples_total, self.maps
            ));
        }
        if !(self.noise_ms >= 0.0 && self.noise_ms.is_finite()) {
            return bad("noise_ms: must be finite and nonnegative".into());
        }
        if !(self.time_unit_ms > 0.0 && self.time_unit_ms.is_finite()) {
            return bad("time_unit_ms: must be positive".into());
        }
        if !(self.smooth_band >= 0.0) {
            return bad("smooth_band: must be nonnegative".into());
        }
        if self.baseline_neighbors < 3 {
            return bad("baseline_neighbors: must be at least 3".into());
        }
        self.training
            .validate()
            .map_err(|e| ExperimentError::Config(format!("training: {e}")))?;
        if let Some(s) = &self.sweep {
            if s.speed_tv_weights.is_empty() || s.map_counts.is_empty() || s.seeds.is_empty() {
                return bad("sweep: lists must not be empty".into());
            }
            if s.speed_tv_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
                return bad("sweep.speed_tv_weights: must be finite and nonnegative".into());
            }
            if let Some(m) = s.map_counts.iter().find(|&&m| m == 0 || m > self.sources.count() || m > self.samples_total)
            {
                return bad(format!("sweep.map_counts: {m} maps not possible with this source and sample count"));
            }
        }
        Ok(())
    }

    /// Samples per map: the total split as evenly as possible, earlier maps
    /// taking the remainder.
    pub fn samples_per_map(&self) -> Vec<usize> {
        let (q, r) = (self.samples_total / self.maps, self.samples_total % self.maps);
        (0..self.maps).map(|m| q + usize::from(m < r)).collect()
    }

    /// Squared-speed cap in the units of the sample times (ms).
    pub fn data_speed_sq_cap(&self) -> f64 {
        self.training.speed_sq_cap / (self.time_unit_ms * self.time_unit_ms)
    }

    /// The configuration of one sweep entry. Repeats share sources and
    /// sample points; `seed` only changes the training seed.
    pub fn sweep_entry(&self, speed_tv_weight: f64, maps: usize, seed: u64) -> Self {
        let mut c = self.clone();
        c.sweep = None;
        c.maps = maps;
        c.training.seed = seed;
        c.training.speed_tv_weight = speed_tv_weight;
        c.name = format!("{}_tv{:e}_m{}_s{}", self.name, speed_tv_weight, maps, seed);
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for cfg in [
            ExperimentConfig::preset_2d(),
            ExperimentConfig::preset_3d("atrium.obj".into()),
        ] {
            let back = ExperimentConfig::from_toml_str(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
maps = 2
samples_total = 11
[domain]
kind = "grid"
n = 5
[fibers]
kind = "two_region"
[sources]
kind = "farthest_point"
count = 3
"#,
        )
        .unwrap();
        assert_eq!(cfg.samples_per_map(), vec![6, 5]);
        assert_eq!(cfg.training, TrainingConfig::preset_2d());
        assert_eq!(cfg.time_unit_ms, 1.0);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let base = ExperimentConfig::preset_2d().to_toml();
        for text in [
            format!("{base}\nextra = 1\n"),
            base.replace("samples_total = 245", "samples_total = 2"),
            base.replace("maps = 3", "maps = 6"),
            base.replace("noise_ms = 0.0", "noise_ms = -1.0"),
            base.replace("kind = \"grid\"", "kind = \"grid\"\nsize = 3"),
            base.replace("iterations = 3000", "iterations = 3000\nlearning_rat = 1.0"),
        ] {
            assert!(
                matches!(ExperimentConfig::from_toml_str(&text), Err(ExperimentError::Config(_))),
                "accepted:\n{text}"
            );
        }
    }

    #[test]
    fn split_always_sums_to_total() {
        let mut cfg = ExperimentConfig::preset_2d();
        for total in [5, 7, 245, 246, 1000] {
            for maps in 1..=5 {
                cfg.samples_total = total;
                cfg.maps = maps;
                let split = cfg.samples_per_map();
                assert_eq!(split.len(), maps);
                assert_eq!(split.iter().sum::<usize>(), total);
                assert!(split.iter().max().unwrap() - split.iter().min().unwrap() <= 1);
            }
        }
    }

    #[test]
    fn sweep_lists_must_be_nonempty() {
        let mut cfg = ExperimentConfig::preset_2d();
        cfg.sweep = Some(SweepConfig {
            speed_tv_weights: vec![1e-5],
            map_counts: vec![],
            seeds: vec![0],
        });
        assert!(cfg.validate().is_err());
        cfg.sweep = Some(SweepConfig {
            speed_tv_weights: vec![1e-5],
            map_counts: vec![1, 3],
            seeds: vec![0, 1],
        });
        assert!(cfg.validate().is_ok());
        let e = cfg.sweep_entry(1e-3, 1, 4);
        assert_eq!((e.maps, e.seed, e.training.seed, e.training.speed_tv_weight), (1, 0, 4, 1e-3));
        assert!(e.sweep.is_none());
    }
}
