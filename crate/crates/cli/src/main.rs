use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use nalgebra::Vector3;

use sparsevox::camera::Camera;
use sparsevox::checkpoint::{load_checkpoint, save_checkpoint};
use sparsevox::dataset::{load_dataset, read_cameras, write_cameras, CAMERAS_FILE};
use sparsevox::image::{write_depth, write_png};
use sparsevox::mesh::{
    marching_cubes, tsdf_fuse, uniformize_levels, DepthView, IsoField, DEFAULT_DENSITY_ISO,
    DEFAULT_TRUNCATION_VOXELS, DEFAULT_VOXEL_CAP,
};
use sparsevox::metrics::evaluate_dirs;
use sparsevox::obj::write_obj;
use sparsevox::optim::{train, TrainConfig, TrainEvent};
use sparsevox::raster::{render, RenderOptions};
use sparsevox::synth::{generate, write_dataset, Shape};
use sparsevox::SceneBounds;

#[derive(Parser)]
#[command(name = "sparsevox", version, about = "Sparse-voxel radiance fields")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset from an analytic shape.
    Synth {
        #[arg(long)]
        shape: Shape,
        #[arg(long, default_value_t = 16)]
        views: usize,
        #[arg(long, default_value_t = 128)]
        res: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize a scene from a posed image collection.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// JSON training config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mesh_mode: bool,
    },
    /// Render a scene from the cameras of a cameras.json file.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write median depth maps.
        #[arg(long)]
        depth: bool,
        /// Also write normal maps.
        #[arg(long)]
        normal: bool,
        #[arg(long, default_value_t = 1.5)]
        ss: f64,
    },
    /// Extract a triangle mesh.
    Mesh {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = MeshMode::Tsdf)]
        mode: MeshMode,
        /// Iso value (activated density, or signed distance for tsdf).
        #[arg(long)]
        iso: Option<f64>,
        /// TSDF truncation in world units (default 4 finest voxels).
        #[arg(long)]
        trunc: Option<f64>,
        /// Cameras for the depth maps (default: 32 views around the scene).
        #[arg(long)]
        views: Option<PathBuf>,
    },
    /// Compare rendered images against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MeshMode {
    Tsdf,
    Density,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Synth { shape, views, res, out } => synth(shape, views, res, &out, cli.seed.unwrap_or(0)),
        Command::Train { data, config, out, mesh_mode } => run_train(&data, config.as_deref(), &out, mesh_mode, cli.seed),
        Command::Render { scene, cameras, out, depth, normal, ss } => run_render(&scene, &cameras, &out, depth, normal, ss),
        Command::Mesh { scene, out, mode, iso, trunc, views } => run_mesh(&scene, &out, mode, iso, trunc, views.as_deref()),
        Command::Eval { pred, gt, out } => {
            let report = evaluate_dirs(&pred, &gt)?;
            info!("mean psnr {:.3} ssim {:.4} over {} frames", report.mean_psnr, report.mean_ssim, report.per_frame.len());
            let mut text = serde_json::to_string_pretty(&report)?;
            text.push('\n');
            fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
            Ok(())
        }
    }
}

fn synth(shape: Shape, views: usize, res: u32, out: &Path, seed: u64) -> Result<()> {
    let data = generate(shape, views, res, seed)?;
    write_dataset(&data, out)?;
    info!("wrote {views} views of {shape} ({} voxels) to {}", data.scene.len(), out.display());
    Ok(())
}

/// `scene.svrx` -> `scene.iter5000.svrx`
fn checkpoint_path(out: &Path, iteration: usize) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.iter{iteration}.svrx"))
}

fn run_train(data: &Path, config: Option<&Path>, out: &Path, mesh_mode: bool, seed: Option<u64>) -> Result<()> {
    let mut cfg = match config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if mesh_mode {
        cfg.mesh_mode = true;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let ds = load_dataset(data)?;
    if cfg.bounds.is_none() {
        cfg.bounds = ds.bounds;
    }
    let views = ds.load_views()?;
    info!("training on {} views for {} iterations", views.len(), cfg.iterations);
    let (scene, _) = train::<f32>(&views, &cfg, |e| {
        match e {
            TrainEvent::Step(r) => println!("{}", r.line()),
            TrainEvent::Adapted { iteration, pruned, subdivided } => {
                info!("iteration {iteration}: pruned {pruned}, subdivided {subdivided}")
            }
            TrainEvent::Checkpoint { iteration, scene } => {
                let p = checkpoint_path(out, iteration);
                save_checkpoint(scene, &p)?;
                info!("checkpoint {}", p.display());
            }
        }
        Ok(())
    })?;
    save_checkpoint(&scene, out)?;
    info!("wrote {} ({} voxels)", out.display(), scene.len());
    Ok(())
}

fn run_render(scene: &Path, cameras: &Path, out: &Path, depth: bool, normal: bool, ss: f64) -> Result<()> {
    let scene = load_checkpoint(scene)?;
    let file = read_cameras(cameras)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let opts = RenderOptions {
        supersample: ss,
        ..TrainConfig::default().render_options()
    };
    for f in &file.frames {
        let cam = f.camera()?;
        let r = render(&scene, &cam, &opts, false)?;
        let path = out.join(&f.image);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        write_png(&path, r.width, r.height, &r.color)?;
        if depth {
            write_depth(&path.with_extension("depth"), r.width, r.height, &r.median_depth)?;
        }
        if normal {
            let n: Vec<f64> = r.normal.iter().map(|x| 0.5 * (x + 1.0)).collect();
            write_png(&sibling(&path, "_normal.png"), r.width, r.height, &n)?;
        }
    }
    write_cameras(&out.join(CAMERAS_FILE), &file)?;
    info!("rendered {} views to {}", file.frames.len(), out.display());
    Ok(())
}

/// `dir/frame.png` -> `dir/frame{suffix}`
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

/// Cameras on a Fibonacci sphere at 1.5 scene sizes from the center.
fn orbit_cameras(bounds: &SceneBounds, n: usize, size: u32) -> Result<Vec<Camera>> {
    let c = Vector3::from(bounds.center);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let a = i as f64 * golden;
            let dir = Vector3::new(r * a.cos(), r * a.sin(), z);
            let up = if z.abs() > 0.9 { Vector3::x() } else { Vector3::z() };
            Ok(Camera::look_at(size, size, 50.0, c + dir * 1.5 * bounds.size, c, up)?)
        })
        .collect()
}

fn run_mesh(
    scene: &Path,
    out: &Path,
    mode: MeshMode,
    iso: Option<f64>,
    trunc: Option<f64>,
    views: Option<&Path>,
) -> Result<()> {
    let mut scene = load_checkpoint(scene)?.cast::<f64>();
    if scene.is_empty() {
        bail!("scene has no voxels");
    }
    let mesh = match mode {
        MeshMode::Density => {
            uniformize_levels(&mut scene, DEFAULT_VOXEL_CAP)?;
            marching_cubes(&scene, IsoField::Density, iso.unwrap_or(DEFAULT_DENSITY_ISO))?
        }
        MeshMode::Tsdf => {
            let cams = match views {
                Some(p) => read_cameras(p)?.frames.iter().map(|f| f.camera()).collect::<Result<Vec<_>, _>>()?,
                None => orbit_cameras(&scene.bounds, 32, 256)?,
            };
            // depth at voxel-sample resolution, no supersampling
            let opts = RenderOptions {
                samples: 8,
                supersample: 1.0,
                ..RenderOptions::default()
            };
            let depth_views = cams
                .into_iter()
                .map(|camera| {
                    let depth = render(&scene, &camera, &opts, false)?.median_depth;
                    Ok(DepthView { camera, depth })
                })
                .collect::<Result<Vec<_>>>()?;
            uniformize_levels(&mut scene, DEFAULT_VOXEL_CAP)?;
            let level = scene.max_level().expect("non-empty");
            let finest = scene.bounds.size / (1u64 << level) as f64;
            let t = trunc.unwrap_or(DEFAULT_TRUNCATION_VOXELS * finest);
            let field = tsdf_fuse(&scene, &depth_views, t)?;
            marching_cubes(&scene, IsoField::Tsdf(&field), iso.unwrap_or(0.0))?
        }
    };
    write_obj(out, &mesh)?;
    info!("wrote {} ({} vertices, {} triangles)", out.display(), mesh.vertices.len(), mesh.triangles.len());
    Ok(())
}
