use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use splatslide::anisotropy::AnisoConfig;
use splatslide::fill::FillDomain;
use splatslide::geo::GeoPose;
use splatslide::mpm::{MaterialParams, SimConfig};
use splatslide::render::{Camera, RenderOptions};

use crate::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    /// ENU origin for pose ingestion; the first pose when absent.
    #[serde(default)]
    pub origin: Option<Origin>,
    #[serde(default)]
    pub regularize: AnisoConfig,
    pub fill: FillBlock,
    #[serde(default)]
    pub material: MaterialParams,
    pub sim: SimBlock,
    pub render: RenderBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub ply: PathBuf,
    #[serde(default)]
    pub mesh: Option<PathBuf>,
    #[serde(default)]
    pub poses: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Origin {
    pub latitude: f64,
    pub longitude: f64,
    pub altitude: f64,
}

impl Origin {
    pub fn to_pose(self) -> GeoPose {
        GeoPose::at(self.latitude, self.longitude, self.altitude)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FillBlock {
    #[serde(flatten)]
    pub domain: FillDomain,
    /// Heightfield pitch used when no mesh is given. Defaults to `h_fill`.
    #[serde(default)]
    pub heightfield_cell: Option<f64>,
}

impl FillBlock {
    pub fn heightfield_cell(&self) -> f64 {
        self.heightfield_cell.unwrap_or(self.domain.h_fill)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimBlock {
    #[serde(flatten)]
    pub config: SimConfig,
    /// Simulate the surface Gaussians along with the fill. When off they stay
    /// where they are.
    #[serde(default = "default_true")]
    pub include_surface: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraBlock {
    pub eye: [f64; 3],
    pub target: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    /// Defaults to the image center.
    #[serde(default)]
    pub cx: Option<f64>,
    #[serde(default)]
    pub cy: Option<f64>,
    #[serde(default = "default_near")]
    pub near: f64,
}

fn default_up() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

fn default_near() -> f64 {
    0.01
}

impl CameraBlock {
    pub fn camera(&self) -> Result<Camera, PipelineError> {
        let pose = Camera::look_at(&Vector3::from(self.eye), &Vector3::from(self.target), &Vector3::from(self.up))
            .map_err(|e| PipelineError::Config(format!("render.camera: {e}")))?;
        let cam = Camera {
            pose,
            fx: self.fx,
            fy: self.fy,
            cx: self.cx.unwrap_or(self.width as f64 / 2.0),
            cy: self.cy.unwrap_or(self.height as f64 / 2.0),
            width: self.width,
            height: self.height,
            near: self.near,
        };
        cam.validate().map_err(|e| PipelineError::Config(format!("render.camera: {e}")))?;
        Ok(cam)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderBlock {
    pub camera: CameraBlock,
    #[serde(default)]
    pub options: RenderOptions,
    /// Render every n-th checkpoint.
    #[serde(default = "default_stride")]
    pub frame_stride: usize,
    #[serde(default)]
    pub png: bool,
}

fn default_stride() -> usize {
    1
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        cfg.resolve_relative_to(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes relative paths relative to the config file's directory.
    pub fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.ply);
        fix(&mut self.paths.output_dir);
        if let Some(p) = self.paths.mesh.as_mut() {
            fix(p);
        }
        if let Some(p) = self.paths.poses.as_mut() {
            fix(p);
        }
    }

    /// Checks every block before any stage runs.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |m: String| PipelineError::Config(m);
        let must_exist = |what: &str, p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(cfg(format!("{what} {} does not exist", p.display())))
            }
        };
        must_exist("paths.ply", &self.paths.ply)?;
        if let Some(m) = &self.paths.mesh {
            must_exist("paths.mesh", m)?;
        }
        if let Some(p) = &self.paths.poses {
            must_exist("paths.poses", p)?;
        }
        if self.paths.output_dir.exists() && !self.paths.output_dir.is_dir() {
            return Err(cfg(format!("paths.output_dir {} is not a directory", self.paths.output_dir.display())));
        }
        if let Some(o) = self.origin {
            o.to_pose().validated().map_err(|e| cfg(format!("origin: {e}")))?;
        }
        self.regularize.validate().map_err(|e| cfg(format!("regularize: {e}")))?;
        self.fill.domain.validate().map_err(|e| cfg(format!("fill: {e}")))?;
        if !(self.fill.heightfield_cell() > 0.0) {
            return Err(cfg("fill.heightfield_cell must be positive".into()));
        }
        self.sim.config.resolve_dt(&self.material).map_err(|e| cfg(format!("sim: {e}")))?;
        self.render.camera.camera()?;
        if self.render.frame_stride == 0 {
            return Err(cfg("render.frame_stride must be at least 1".into()));
        }
        Ok(())
    }
}
