//! Command-line front end: mesh generation, synthetic data, training,
//! evaluation, the gradient-fit baseline and parameter sweeps.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fiberfield::experiment::{
    cmd_baseline, cmd_evaluate, cmd_generate, cmd_sweep, cmd_train, DomainConfig, ExperimentConfig,
    ExperimentError, MetricsRow, MODEL_FILE,
};
use fiberfield::io::save_mesh;
use fiberfield::mesh::{build_grid_mesh, open_cylinder};

#[derive(Parser)]
#[command(name = "fiberfield", version, about = "Fiber and conduction-velocity fields from activation maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Writes a synthetic surface mesh (OBJ or VTK, chosen by extension).
    MeshGen(MeshGenArgs),
    /// Simulates activation maps and writes samples and ground truth.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Data directory [default: <output_dir>/<name>/data].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trains the networks on a data directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Data directory [default: <output_dir>/<name>/data].
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run directory [default: <output_dir>/<name>].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Computes metrics and field exports of a trained model.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Model file [default: <out>/model.json].
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fits tensors per vertex from estimated map gradients.
    Baseline {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs every combination of the config's sweep lists.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct MeshGenArgs {
    #[arg(value_enum)]
    shape: Shape,
    /// Output path ending in .obj or .vtk.
    #[arg(long)]
    out: PathBuf,
    /// Grid points per side.
    #[arg(long, default_value_t = 35)]
    n: usize,
    /// Grid spans [-half_width, half_width]^2.
    #[arg(long, default_value_t = 1.0)]
    half_width: f64,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long, default_value_t = 2.0)]
    height: f64,
    /// Cylinder segments around the axis.
    #[arg(long, default_value_t = 48)]
    around: usize,
    /// Cylinder rings along the axis.
    #[arg(long, default_value_t = 16)]
    along: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Grid,
    Cylinder,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Two-region planar grid.
    Planar,
    /// Constant fibers on the mesh given by --mesh.
    Surface,
}

/// Where the experiment config comes from, plus overrides of its fields.
#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config.
    #[arg(long, short, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in config used when no file is given.
    #[arg(long, value_enum, default_value = "planar")]
    preset: Preset,
    #[arg(long)]
    name: Option<String>,
    /// Surface mesh; replaces the configured domain.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Grid points per side; replaces the configured domain.
    #[arg(long, conflicts_with = "mesh")]
    grid_n: Option<usize>,
    #[arg(long)]
    maps: Option<usize>,
    #[arg(long)]
    samples_total: Option<usize>,
    #[arg(long)]
    shared_points: bool,
    #[arg(long)]
    noise_ms: Option<f64>,
    #[arg(long)]
    time_unit_ms: Option<f64>,
    /// Seed of source placement, sampling and noise.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    holdout_source: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Seed of network initialization and batch order.
    #[arg(long)]
    training_seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    eikonal_weight: Option<f64>,
    #[arg(long)]
    speed_tv_weight: Option<f64>,
    #[arg(long)]
    angle_tv_weight: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, ExperimentError> {
        let mut cfg = match (&self.config, self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Preset::Planar) => ExperimentConfig::preset_2d(),
            (None, Preset::Surface) => {
                let mesh = self
                    .mesh
                    .clone()
                    .ok_or_else(|| ExperimentError::Config("the surface preset needs --mesh".into()))?;
                ExperimentConfig::preset_3d(mesh)
            }
        };
        if let Some(v) = &self.name {
            cfg.name = v.clone();
        }
        if let Some(path) = &self.mesh {
            cfg.domain = DomainConfig::Mesh { path: path.clone() };
        }
        if let Some(n) = self.grid_n {
            let half_width = match cfg.domain {
                DomainConfig::Grid { half_width, .. } => half_width,
                DomainConfig::Mesh { .. } => 1.0,
            };
            cfg.domain = DomainConfig::Grid { n, half_width };
        }
        set(&mut cfg.maps, self.maps);
        set(&mut cfg.samples_total, self.samples_total);
        cfg.shared_points |= self.shared_points;
        set(&mut cfg.noise_ms, self.noise_ms);
        set(&mut cfg.time_unit_ms, self.time_unit_ms);
        set(&mut cfg.seed, self.seed);
        if self.holdout_source.is_some() {
            cfg.holdout_source = self.holdout_source;
        }
        set(&mut cfg.output_dir, self.output_dir.clone());
        let t = &mut cfg.training;
        set(&mut t.seed, self.training_seed);
        set(&mut t.iterations, self.iterations);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.learning_rate, self.learning_rate);
        set(&mut t.eikonal_weight, self.eikonal_weight);
        set(&mut t.speed_tv_weight, self.speed_tv_weight);
        set(&mut t.angle_tv_weight, self.angle_tv_weight);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}

fn run_dir(cfg: &ExperimentConfig, out: &Option<PathBuf>) -> PathBuf {
    out.clone().unwrap_or_else(|| cfg.output_dir.join(&cfg.name))
}

fn data_dir(cfg: &ExperimentConfig, data: &Option<PathBuf>) -> PathBuf {
    data.clone().unwrap_or_else(|| cfg.output_dir.join(&cfg.name).join("data"))
}

fn report(rows: &[MetricsRow]) {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    for r in rows {
        println!(
            "{:<10} {:<7} maps={} fiber_mean_deg={} fiber_median_deg={} rmse_ms={} unseen_rmse_ms={}",
            r.method,
            r.region,
            r.maps,
            fmt(r.fiber_error_mean_deg),
            fmt(r.fiber_error_median_deg),
            fmt(r.rmse_ms),
            fmt(r.unseen_rmse_ms)
        );
    }
}

fn mesh_gen(args: &MeshGenArgs) -> Result<(), ExperimentError> {
    let mesh = match args.shape {
        Shape::Grid => build_grid_mesh(args.n, args.half_width),
        Shape::Cylinder => open_cylinder(args.radius, args.height, args.around, args.along),
    }
    .map_err(|e| ExperimentError::Config(e.to_string()))?;
    save_mesh(&args.out, &mesh)?;
    println!(
        "wrote {} vertices and {} triangles to {}",
        mesh.vertex_count(),
        mesh.triangle_count(),
        args.out.display()
    );
    Ok(())
}

fn run(command: Command) -> Result<(), ExperimentError> {
    match command {
        Command::MeshGen(args) => mesh_gen(&args),
        Command::Generate { config, out } => {
            let cfg = config.resolve()?;
            let out = out.unwrap_or_else(|| data_dir(&cfg, &None));
            let data = cmd_generate(&cfg, &out)?;
            println!("wrote {} samples to {}", data.samples.len(), out.display());
            Ok(())
        }
        Command::Train { config, data, out } => {
            let cfg = config.resolve()?;
            let out = run_dir(&cfg, &out);
            let outcome = cmd_train(&cfg, &data_dir(&cfg, &data), &out)?;
            if let Some(last) = outcome.history.last() {
                println!("iteration {} total loss {:.4e}", last.iteration, last.total);
            }
            println!("wrote {}", out.join(MODEL_FILE).display());
            Ok(())
        }
        Command::Evaluate {
            config,
            data,
            model,
            out,
        } => {
            let cfg = config.resolve()?;
            let out = run_dir(&cfg, &out);
            let model = model.unwrap_or_else(|| out.join(MODEL_FILE));
            let eval = cmd_evaluate(&cfg, &data_dir(&cfg, &data), &model, &out)?;
            report(&eval.rows);
            Ok(())
        }
        Command::Baseline { config, data, out } => {
            let cfg = config.resolve()?;
            let eval = cmd_baseline(&cfg, &data_dir(&cfg, &data), &run_dir(&cfg, &out))?;
            report(&eval.rows);
            Ok(())
        }
        Command::Sweep { config, out } => {
            let cfg = config.resolve()?;
            let rows = cmd_sweep(&cfg, &run_dir(&cfg, &out))?;
            println!("{} metric rows", rows.len());
            Ok(())
        }
    }
}

fn exit_code(code: i32) -> ExitCode {
    ExitCode::from(u8::try_from(code).unwrap_or(1))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(e.exit_code())
        }
    }
}
