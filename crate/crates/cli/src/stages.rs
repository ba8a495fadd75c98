//! Stage commands and the pipeline driver.
//!
//! Output layout under `paths.output_dir`:
//! `poses/` (images.txt, origin.json), `regularize/` (scene.ply, report.json),
//! `fill/` (scene.ply, report.json), `simulate/` (checkpoints, sim.json) and
//! `render/` (frames). Each holds a `manifest.json`.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use splatslide::anisotropy::{aniso_loss, clamp_scales, scene_scales};
use splatslide::fill::{fill_interior, heightfield_surface, load_obj_file, FillStats};
use splatslide::geo::{read_pose_csv, to_colmap, write_images_txt, GeoError, GeoPose, OriginRecord};
use splatslide::mpm::checkpoint::checkpoint_file_name;
use splatslide::mpm::{init_particles, Checkpoint, CheckpointEntry, MaterialParams, SimConfig, SimManifest, Simulation};
use splatslide::ply::{read_ply_file, write_ply_file};
use splatslide::render::render_sequence;
use splatslide::Scene;

use crate::config::{FillBlock, PipelineConfig, RenderBlock};
use crate::{manifest, PipelineError};

pub const SCENE_FILE: &str = "scene.ply";
pub const REPORT_FILE: &str = "report.json";
pub const SIM_FILE: &str = "sim.json";

fn input(stage: &'static str) -> impl Fn(String) -> PipelineError {
    move |message| PipelineError::Input { stage, message }
}

fn runtime(stage: &'static str) -> impl Fn(String) -> PipelineError {
    move |message| PipelineError::Runtime { stage, message }
}

fn write_json(path: &Path, value: &impl Serialize) -> std::io::Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(value).map_err(std::io::Error::other)?)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: &'static str) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| runtime(stage)(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| runtime(stage)(format!("{}: {e}", path.display())))
}

fn load_scene(path: &Path, stage: &'static str) -> Result<Scene, PipelineError> {
    read_ply_file(path).map_err(|e| input(stage)(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub cameras: usize,
    pub origin: Option<OriginRecord>,
}

/// Converts a pose CSV into `images.txt` and `origin.json` in `out_dir`.
pub fn cmd_ingest_poses(csv: &Path, origin: Option<&GeoPose>, out_dir: &Path) -> Result<IngestReport, PipelineError> {
    const STAGE: &str = "ingest-poses";
    let file = File::open(csv).map_err(|e| input(STAGE)(format!("{}: {e}", csv.display())))?;
    let poses = read_pose_csv(file).map_err(|e| match e {
        GeoError::Io(_) => runtime(STAGE)(e.to_string()),
        other => input(STAGE)(format!("{}: {other}", csv.display())),
    })?;
    let cameras = to_colmap(&poses, origin);
    let (used, source) = match origin {
        Some(o) => (Some(o), "config"),
        None => (poses.first(), "first pose"),
    };
    let record = used.map(|o| OriginRecord::new(o, source));
    let io = |e: std::io::Error| runtime(STAGE)(e.to_string());
    let mut w = BufWriter::new(File::create(out_dir.join("images.txt")).map_err(io)?);
    write_images_txt(&mut w, &cameras, used).map_err(io)?;
    drop(w);
    write_json(&out_dir.join("origin.json"), &record).map_err(io)?;
    Ok(IngestReport { cameras: cameras.len(), origin: record })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizeReport {
    pub loss_before: f64,
    pub loss_after: f64,
    pub n_clamped: usize,
}

/// Clamps every Gaussian to aspect ratio `r` and writes the clamped scene.
pub fn cmd_regularize(ply: &Path, r: f64, out_dir: &Path) -> Result<RegularizeReport, PipelineError> {
    const STAGE: &str = "regularize";
    let scene = load_scene(ply, STAGE)?;
    let loss = |s: &Scene| -> Result<f64, PipelineError> {
        if s.is_empty() {
            return Ok(0.0);
        }
        aniso_loss(&scene_scales(s), r).map_err(|e| input(STAGE)(e.to_string()))
    };
    let loss_before = loss(&scene)?;
    let (clamped, n_clamped) = clamp_scales(&scene, r);
    let report = RegularizeReport { loss_before, loss_after: loss(&clamped)?, n_clamped };
    let io = |e: String| runtime(STAGE)(e);
    write_ply_file(&clamped, out_dir.join(SCENE_FILE)).map_err(|e| io(e.to_string()))?;
    write_json(&out_dir.join(REPORT_FILE), &report).map_err(|e| io(e.to_string()))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillReport {
    /// Surface Gaussians come first in the output scene; fill Gaussians follow.
    pub surface: usize,
    pub surface_source: String,
    pub stats: FillStats,
}

/// Appends interior Gaussians below the mesh (or a heightfield of the splat
/// centers when no mesh is given).
pub fn cmd_fill(ply: &Path, mesh: Option<&Path>, block: &FillBlock, out_dir: &Path) -> Result<FillReport, PipelineError> {
    const STAGE: &str = "fill";
    let surface = load_scene(ply, STAGE)?;
    let (mesh, source) = match mesh {
        Some(p) => (
            load_obj_file(p).map_err(|e| input(STAGE)(format!("{}: {e}", p.display())))?,
            p.display().to_string(),
        ),
        None => (
            heightfield_surface(&surface, block.heightfield_cell(), &block.domain.footprint())
                .map_err(|e| input(STAGE)(e.to_string()))?,
            "heightfield".to_string(),
        ),
    };
    let out = fill_interior(&surface, &mesh, &block.domain).map_err(|e| input(STAGE)(e.to_string()))?;
    let mut combined = surface.clone();
    combined.gaussians.extend(out.scene.gaussians);
    let report = FillReport { surface: surface.len(), surface_source: source, stats: out.stats };
    write_ply_file(&combined, out_dir.join(SCENE_FILE)).map_err(|e| runtime(STAGE)(e.to_string()))?;
    write_json(&out_dir.join(REPORT_FILE), &report).map_err(|e| runtime(STAGE)(e.to_string()))?;
    Ok(report)
}

/// Simulates the filled scene, writing a checkpoint every
/// `sim.checkpoint_every` steps plus `sim.json`. Gaussians before
/// `filled_from` are surface splats and are left static unless
/// `include_surface` is set.
#[allow(clippy::too_many_arguments)]
pub fn cmd_simulate(
    ply: &Path,
    filled_from: usize,
    h_fill: f64,
    material: &MaterialParams,
    sim: &SimConfig,
    include_surface: bool,
    threads: usize,
    out_dir: &Path,
) -> Result<SimManifest, PipelineError> {
    const STAGE: &str = "simulate";
    let scene = load_scene(ply, STAGE)?;
    let spec = sim.grid_spec();
    let mut init = init_particles(&scene, filled_from, h_fill, material, &spec).map_err(|e| input(STAGE)(e.to_string()))?;
    if !include_surface {
        init.particles.retain(|p| p.source_index.is_some_and(|s| s as usize >= filled_from));
    }
    let rejected = init.rejected;
    let mut solver =
        Simulation::new(sim.clone(), *material, init.particles, threads).map_err(|e| input(STAGE)(e.to_string()))?;
    log::info!(
        "simulating {} particles for {} steps, dt = {:.3e} s",
        solver.particles.len(),
        sim.n_steps,
        solver.dt
    );
    let dt = solver.dt;
    let mut entries = Vec::new();
    solver
        .run(sim.n_steps, sim.checkpoint_every, |cp: &Checkpoint| {
            let file = checkpoint_file_name(cp.step);
            cp.write_file(&out_dir.join(&file))?;
            log::debug!("checkpoint {file}");
            entries.push(CheckpointEntry { step: cp.step, time: cp.step as f64 * dt, file });
            Ok::<_, splatslide::mpm::SimError>(())
        })
        .map_err(|e| runtime(STAGE)(e.to_string()))?;
    let manifest = SimManifest {
        config: sim.clone(),
        material: *material,
        dt,
        particles: solver.particles.len(),
        rejected,
        escaped: solver.escaped(),
        checkpoints: entries,
    };
    write_json(&out_dir.join(SIM_FILE), &manifest).map_err(|e| runtime(STAGE)(e.to_string()))?;
    Ok(manifest)
}

/// Renders every `frame_stride`-th checkpoint listed in `sim_dir/sim.json`.
pub fn cmd_render(ply: &Path, sim_dir: &Path, block: &RenderBlock, threads: usize, out_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    const STAGE: &str = "render";
    let scene = load_scene(ply, STAGE)?;
    let sim: SimManifest = read_json(&sim_dir.join(SIM_FILE), STAGE)?;
    let checkpoints = sim
        .checkpoints
        .iter()
        .step_by(block.frame_stride.max(1))
        .map(|e| {
            Checkpoint::read_file(&sim_dir.join(&e.file)).map_err(|err| runtime(STAGE)(format!("{}: {err}", e.file)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let cam = block.camera.camera()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| runtime(STAGE)(e.to_string()))?;
    pool.install(|| render_sequence(&scene, &checkpoints, &cam, &block.options, out_dir, block.png))
        .map_err(|e| runtime(STAGE)(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub force: bool,
    /// 1 selects the deterministic serial path.
    pub threads: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { force: false, threads: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: &'static str,
    pub status: StageStatus,
    pub dir: PathBuf,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub options: RunOptions,
}

impl Pipeline {
    /// Validates the whole config; nothing is written on failure.
    pub fn new(config: PipelineConfig, options: RunOptions) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self { config, options })
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.config.paths.output_dir.join(stage)
    }

    fn stage<T: Serialize>(
        &self,
        stage: &'static str,
        config: &impl Serialize,
        inputs: &[PathBuf],
        body: impl FnOnce(&Path) -> Result<T, PipelineError>,
    ) -> Result<StageReport, PipelineError> {
        let dir = self.stage_dir(stage);
        let missing: Vec<_> = inputs.iter().filter(|p| !p.is_file()).collect();
        if let Some(p) = missing.first() {
            return Err(runtime(stage)(format!("missing input {}; run the earlier stages first", p.display())));
        }
        let io = |e: std::io::Error| runtime(stage)(e.to_string());
        let hash = manifest::stage_hash(stage, config, inputs).map_err(io)?;
        if !self.options.force && manifest::is_current(&dir, &hash) {
            log::info!("{stage}: up to date, skipping");
            return Ok(StageReport { stage, status: StageStatus::Skipped, dir });
        }
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(io)?;
        }
        std::fs::create_dir_all(&dir).map_err(io)?;
        log::info!("{stage}: running");
        let summary = body(&dir)?;
        let summary = serde_json::to_value(&summary).map_err(|e| runtime(stage)(e.to_string()))?;
        manifest::write(&dir, stage, &hash, summary).map_err(io)?;
        log::info!("{stage}: done");
        Ok(StageReport { stage, status: StageStatus::Ran, dir })
    }

    pub fn ingest_poses(&self) -> Result<Option<StageReport>, PipelineError> {
        let Some(csv) = self.config.paths.poses.clone() else {
            return Ok(None);
        };
        let origin = self.config.origin.map(|o| o.to_pose());
        self.stage("poses", &self.config.origin, std::slice::from_ref(&csv), |dir| {
            cmd_ingest_poses(&csv, origin.as_ref(), dir)
        })
        .map(Some)
    }

    pub fn regularize(&self) -> Result<StageReport, PipelineError> {
        let ply = self.config.paths.ply.clone();
        let r = self.config.regularize.r;
        self.stage("regularize", &self.config.regularize, std::slice::from_ref(&ply), |dir| cmd_regularize(&ply, r, dir))
    }

    pub fn regularize_report(&self) -> Result<RegularizeReport, PipelineError> {
        read_json(&self.stage_dir("regularize").join(REPORT_FILE), "regularize")
    }

    pub fn fill(&self) -> Result<StageReport, PipelineError> {
        let ply = self.stage_dir("regularize").join(SCENE_FILE);
        let mesh = self.config.paths.mesh.clone();
        let mut inputs = vec![ply.clone()];
        inputs.extend(mesh.clone());
        let block = self.config.fill;
        self.stage("fill", &block, &inputs, |dir| cmd_fill(&ply, mesh.as_deref(), &block, dir))
    }

    pub fn simulate(&self) -> Result<StageReport, PipelineError> {
        let fill_dir = self.stage_dir("fill");
        let ply = fill_dir.join(SCENE_FILE);
        let report_path = fill_dir.join(REPORT_FILE);
        let (material, sim) = (self.config.material, self.config.sim.clone());
        let h_fill = self.config.fill.domain.h_fill;
        let threads = self.options.threads;
        self.stage("simulate", &(&material, &sim), &[ply.clone(), report_path.clone()], |dir| {
            let report: FillReport = read_json(&report_path, "simulate")?;
            cmd_simulate(&ply, report.surface, h_fill, &material, &sim.config, sim.include_surface, threads, dir)
        })
    }

    pub fn render(&self) -> Result<StageReport, PipelineError> {
        let ply = self.stage_dir("fill").join(SCENE_FILE);
        let sim_dir = self.stage_dir("simulate");
        let block = self.config.render.clone();
        let threads = self.options.threads;
        self.stage("render", &block, &[ply.clone(), sim_dir.join(manifest::MANIFEST_FILE)], |dir| {
            let frames = cmd_render(&ply, &sim_dir, &block, threads, dir)?;
            Ok(frames.len())
        })
    }

    /// Runs every stage in order.
    pub fn run(&self) -> Result<Vec<StageReport>, PipelineError> {
        let mut reports = Vec::new();
        reports.extend(self.ingest_poses()?);
        reports.push(self.regularize()?);
        reports.push(self.fill()?);
        reports.push(self.simulate()?);
        reports.push(self.render()?);
        Ok(reports)
    }
}

/// Validates `config` and runs the full pipeline.
pub fn cmd_run(config: &PipelineConfig, options: RunOptions) -> Result<Vec<StageReport>, PipelineError> {
    Pipeline::new(config.clone(), options)?.run()
}
