//! Command-line interface: `train`, `simulate`, `volume`, `weights-grid`.
//!
//! Exit codes: 0 success, 1 numerical failure (divergence, infeasible or
//! non-finite states), 2 usage or IO errors. `SIMPLICITS_THREADS` caps the
//! worker pool; results are bitwise identical regardless of the thread count.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::Vector3;

use crate::elastic::HandleTransforms;
use crate::export::{self, ExportError, TransformLog};
use crate::formats;
use crate::mlp::{MlpError, SkinningField};
use crate::occupancy::{self, OccupancyError, OccupancyField};
use crate::scene::{ExportFormat, SceneConfig, SceneError};
use crate::sim::{self, SimError, SimState, Stepper};
use crate::training::{self, TrainingError};

#[derive(Parser, Debug)]
#[command(
    name = "simplicits",
    version,
    about = "Mesh-free elastic simulation on neural skinning-weight subspaces"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a skinning-weight field for a scene and write a SWGT checkpoint
    Train {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scene's training seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Time-step a trained scene, writing per-frame transforms and exports
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scene's sim step count
        #[arg(long)]
        frames: Option<usize>,
        /// Overrides the scene's export stride
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Monte-Carlo volume estimate of the scene geometry
    Volume {
        #[arg(long)]
        scene: PathBuf,
        /// Number of proposal samples
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
    },
    /// Sample each handle's weight onto a regular SVOL grid
    WeightsGrid {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        res: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Exit 1: the computation itself failed.
    Numerical(String),
    /// Exit 2: bad input, bad config, or IO trouble.
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 1,
            CliError::Usage(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Numerical(m) | CliError::Usage(m) => m,
        }
    }
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<OccupancyError> for CliError {
    fn from(e: OccupancyError) -> Self {
        match e {
            OccupancyError::SparseOccupancy { .. } | OccupancyError::MaterialUndefined(_) => {
                CliError::Numerical(e.to_string())
            }
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<TrainingError> for CliError {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::DivergentSample | TrainingError::Diverged(..) => {
                CliError::Numerical(e.to_string())
            }
            TrainingError::Occupancy(o) => o.into(),
            TrainingError::Mlp(m) => m.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<MlpError> for CliError {
    fn from(e: MlpError) -> Self {
        match e {
            MlpError::DivergentStep => CliError::Numerical(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Infeasible { .. } | SimError::NonFinite(_) | SimError::Linalg(_) => {
                CliError::Numerical(e.to_string())
            }
            SimError::Occupancy(o) => o.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<ExportError> for CliError {
    fn from(e: ExportError) -> Self {
        CliError::Usage(e.to_string())
    }
}

/// Parses arguments and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own exit code convention: 0 for help/version, 2 otherwise.
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Train { scene, out, seed } => cmd_train(&scene, &out, seed),
        Command::Simulate { scene, weights, out, frames, stride } => {
            cmd_simulate(&scene, &weights, &out, frames, stride)
        }
        Command::Volume { scene, samples } => cmd_volume(&scene, samples),
        Command::WeightsGrid { weights, res, out } => cmd_weights_grid(&weights, res, &out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn build_field(scene: &SceneConfig) -> Result<OccupancyField, CliError> {
    Ok(occupancy::build_occupancy_with_materials(&scene.geometry, scene.materials.clone())?)
}

/// Trains per the scene, writing the checkpoint to `out` and the training
/// report CSV beside it.
pub fn cmd_train(scene_path: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let scene = SceneConfig::parse_file(scene_path)?;
    let mut config = scene.train.clone();
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let field = build_field(&scene)?;
    let (net, report) = training::train(&field, config)?;
    net.save_checkpoint(out)?;
    let report_path = out.with_extension("csv");
    report.write_csv(&report_path).map_err(|e| CliError::Usage(e.to_string()))?;
    println!(
        "trained {} handles for {} steps; gram deviation {:.4}; wrote {} and {}",
        net.n_handles(),
        report.records.len(),
        report.gram_deviation(),
        out.display(),
        report_path.display()
    );
    Ok(())
}

/// Steps the scene from rest and writes `transforms.csv` plus the requested
/// geometry exports every `stride` frames.
pub fn cmd_simulate(
    scene_path: &Path,
    weights: &Path,
    out_dir: &Path,
    frames: Option<usize>,
    stride: Option<usize>,
) -> Result<(), CliError> {
    let scene = SceneConfig::parse_file(scene_path)?;
    let field = build_field(&scene)?;
    let net = SkinningField::load_checkpoint(weights)?;
    if net.n_handles() != scene.train.n_handles {
        return Err(CliError::Usage(format!(
            "handle-count mismatch: checkpoint has {}, scene expects {}",
            net.n_handles(),
            scene.train.n_handles
        )));
    }
    let steps = frames.unwrap_or(scene.sim.steps);
    let stride = stride.unwrap_or(scene.export.stride);
    if stride == 0 {
        return Err(CliError::Usage("stride must be at least 1".into()));
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", out_dir.display())))?;

    let cub = sim::build_cubature(&field, &net, scene.sim.cubature_count, scene.sim.cubature_seed)?;
    if cub.needs_regularization() {
        eprintln!("warning: reduced basis is rank deficient; enabling Tikhonov regularization");
    }
    let stepper = Stepper::new(&cub, &scene.sim, field.bbox().diagonal())?;
    let mut state = SimState::rest(net.n_handles(), scene.sim.barrier_kappa0);
    if let Some((point, distance)) =
        sim::initial_penetration(&cub, &scene.sim.colliders, &state.z)
    {
        return Err(CliError::Numerical(
            SimError::Infeasible { point, distance }.to_string(),
        ));
    }

    let rest_mesh = match &scene.export.mesh_path {
        Some(path) => Some(formats::read_obj(path).map_err(ExportError::from)?),
        None => None,
    };
    let rest_splats = match &scene.export.splats_path {
        Some(path) => Some(formats::read_splt(path).map_err(ExportError::from)?),
        None => None,
    };

    let mut log = TransformLog::create(&out_dir.join("transforms.csv"))?;
    for frame in 1..=steps {
        let (next, report) = stepper.step(&state)?;
        if report.stalled() {
            eprintln!("warning: Newton line search stalled at frame {frame}");
        }
        state = next;
        log.write_row(frame, state.time, &state.z)?;
        if frame % stride == 0 {
            write_frame_exports(&scene, &cub, &net, &state, rest_mesh.as_ref(),
                                rest_splats.as_ref(), out_dir, frame)?;
        }
    }
    log.finish()?;
    println!("simulated {steps} steps into {}", out_dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn write_frame_exports(
    scene: &SceneConfig,
    cub: &sim::CubatureSet,
    net: &SkinningField,
    state: &SimState,
    rest_mesh: Option<&formats::TriMesh>,
    rest_splats: Option<&formats::GaussianSplatSet>,
    out_dir: &Path,
    frame: usize,
) -> Result<(), CliError> {
    let transforms = HandleTransforms::from_flat(state.z.clone());
    for format in &scene.export.formats {
        match format {
            ExportFormat::Points => {
                let positions: Vec<Vector3<f64>> =
                    (0..cub.len()).map(|i| cub.deformed(i, &state.z)).collect();
                export::export_points(&out_dir.join(format!("frame_{frame:05}.xyz")), &positions)?;
            }
            ExportFormat::Mesh => {
                let mesh = rest_mesh.expect("validated at parse time");
                export::export_mesh(
                    &out_dir.join(format!("frame_{frame:05}.obj")),
                    mesh,
                    net,
                    &transforms,
                )?;
            }
            ExportFormat::Splats => {
                let splats = rest_splats.expect("validated at parse time");
                let moved = export::transform_gaussians(splats, net, &transforms);
                formats::write_splt(&out_dir.join(format!("frame_{frame:05}.splt")), &moved)
                    .map_err(ExportError::from)?;
            }
        }
    }
    Ok(())
}

/// Prints the Monte-Carlo volume estimate of the scene geometry.
pub fn cmd_volume(scene_path: &Path, samples: u64) -> Result<(), CliError> {
    let scene = SceneConfig::parse_file(scene_path)?;
    let field = build_field(&scene)?;
    let est = occupancy::estimate_volume(&field, samples.max(100), scene.train.seed);
    println!(
        "volume {:.6} m^3 (std error {:.6}, {} / {} proposals accepted)",
        est.volume, est.std_error, est.accepted, est.proposed
    );
    Ok(())
}

/// Writes per-handle weight grids over the checkpoint's normalized domain.
pub fn cmd_weights_grid(weights: &Path, res: usize, out_dir: &Path) -> Result<(), CliError> {
    let net = SkinningField::load_checkpoint(weights)?;
    // The checkpoint stores the normalization cube: center +- scale covers
    // the training bbox on every axis.
    let center = net.input_center();
    let scale = net.input_scale();
    let bbox = occupancy::Aabb::new(
        center - Vector3::repeat(scale),
        center + Vector3::repeat(scale),
    );
    let paths = export::export_weight_grid(&net, &bbox, res, out_dir)?;
    println!("wrote {} weight grids to {}", paths.len(), out_dir.display());
    Ok(())
}
