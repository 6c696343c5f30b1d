use std::path::Path;

use fiberfield::experiment::{DomainConfig, ExperimentConfig};

fn load(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn planar_config_matches_the_preset() {
    assert_eq!(load("planar.toml"), ExperimentConfig::preset_2d());
}

#[test]
fn noise_config_scales_times() {
    let cfg = load("planar_noise.toml");
    assert_eq!((cfg.noise_ms, cfg.time_unit_ms), (1.0, 55.0));
    assert_eq!(cfg.training, ExperimentConfig::preset_2d().training);
}

#[test]
fn sweep_config_covers_every_setting() {
    let sweep = load("sweep.toml").sweep.unwrap();
    assert_eq!(sweep.speed_tv_weights.len() * sweep.map_counts.len() * sweep.seeds.len(), 80);
}

#[test]
fn surface_config_matches_the_preset() {
    let cfg = load("surface.toml");
    assert_eq!(cfg, ExperimentConfig::preset_3d("tube.obj".into()));
    assert!(matches!(cfg.domain, DomainConfig::Mesh { .. }));
}
