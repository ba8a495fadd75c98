//! Synthetic desk-scale scenes with matching pipeline configs, used by the
//! smoke example and the test suites.

use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};

use splatslide::fill::FillDomain;
use splatslide::mpm::{MaterialParams, SimConfig};
use splatslide::ply::write_ply_file;
use splatslide::render::RenderOptions;
use splatslide::scene::SH_C0;
use splatslide::{Gaussian, Scene};

use crate::config::{CameraBlock, FillBlock, Paths, PipelineConfig, RenderBlock, SimBlock};
use crate::PipelineError;

fn splat(center: Vector3<f64>, radius: f64, rgb: [f64; 3]) -> Gaussian {
    let dc = Vector3::from(rgb).map(|c| (c - 0.5) / SH_C0);
    Gaussian::from_activated(center, Vector3::repeat(radius), UnitQuaternion::identity(), 0.9, dc)
}

fn checker(i: usize, j: usize, a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    if (i + j).is_multiple_of(2) {
        a
    } else {
        b
    }
}

fn write_scene(scene: &Scene, path: &Path) -> Result<(), PipelineError> {
    write_ply_file(scene, path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

/// Planar 10 x 10 m slope `z = 2 + 0.1 x` sampled every 0.4 m, filled down to
/// `z = 0.5` with a 0.5 m lattice: about 2k particles, 50 steps, 5 frames.
pub fn slope_smoke(dir: &Path) -> Result<PipelineConfig, PipelineError> {
    let n = 26;
    let pitch = 10.0 / (n - 1) as f64;
    let mut gaussians = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let (x, y) = (-5.0 + i as f64 * pitch, -5.0 + j as f64 * pitch);
            let rgb = checker(i, j, [0.55, 0.42, 0.28], [0.35, 0.5, 0.3]);
            gaussians.push(splat(Vector3::new(x, y, 2.0 + 0.1 * x), 0.5 * pitch, rgb));
        }
    }
    let ply = dir.join("slope.ply");
    write_scene(&Scene::new(gaussians), &ply)?;
    Ok(PipelineConfig {
        paths: Paths { ply, mesh: None, poses: None, output_dir: dir.join("out") },
        origin: None,
        regularize: Default::default(),
        fill: FillBlock {
            domain: FillDomain { x_min: -5.0, x_max: 5.0, y_min: -5.0, y_max: 5.0, z_min: 0.5, h_fill: 0.5 },
            heightfield_cell: Some(pitch),
        },
        material: MaterialParams::default(),
        sim: SimBlock {
            config: SimConfig {
                dx: 0.25,
                n_steps: 50,
                checkpoint_every: 13,
                domain_min: [-6.0, -6.0, 0.0],
                domain_max: [6.0, 6.0, 4.0],
                ..SimConfig::default()
            },
            include_surface: true,
        },
        render: RenderBlock {
            camera: CameraBlock {
                eye: [0.0, -14.0, 8.0],
                target: [0.0, 0.0, 1.5],
                up: [0.0, 0.0, 1.0],
                width: 160,
                height: 120,
                fx: 120.0,
                fy: 120.0,
                cx: None,
                cy: None,
                near: 0.01,
            },
            options: RenderOptions { background: [0.6, 0.75, 0.9], ..RenderOptions::default() },
            frame_stride: 1,
            png: false,
        },
    })
}

/// Height of the floor the column stands on.
pub const COLUMN_FLOOR: f64 = 0.2;
/// Particles per meter of the column lattice.
pub const COLUMN_LATTICE: usize = 22;

/// A 1 x 1 x 1.5 m column standing on a 4 x 4 m ground plane. Only the
/// column's top and the ground are sampled as splats; the fill derives the
/// column body from the heightfield, giving 22 x 22 x 33 interior seeds.
pub fn column(dir: &Path, n_steps: u64) -> Result<PipelineConfig, PipelineError> {
    let h = 1.0 / COLUMN_LATTICE as f64;
    let mut gaussians = Vec::new();
    for i in 0..COLUMN_LATTICE {
        for j in 0..COLUMN_LATTICE {
            let c = Vector3::new(-0.5 + (i as f64 + 0.5) * h, -0.5 + (j as f64 + 0.5) * h, COLUMN_FLOOR + 1.5);
            gaussians.push(splat(c, 0.6 * h, checker(i / 2, j / 2, [0.85, 0.55, 0.2], [0.75, 0.45, 0.15])));
        }
    }
    let g = 2.0 * h;
    let n = 45;
    for i in 0..n {
        for j in 0..n {
            let (x, y) = (-2.0 + i as f64 * g, -2.0 + j as f64 * g);
            if x.abs() < 0.5 + g && y.abs() < 0.5 + g {
                continue;
            }
            let rgb = checker(i, j, [0.35, 0.45, 0.3], [0.3, 0.38, 0.25]);
            gaussians.push(splat(Vector3::new(x, y, COLUMN_FLOOR), 0.6 * g, rgb));
        }
    }
    let ply = dir.join("column.ply");
    write_scene(&Scene::new(gaussians), &ply)?;
    let dx = 2.0 * h;
    Ok(PipelineConfig {
        paths: Paths { ply, mesh: None, poses: None, output_dir: dir.join("out") },
        origin: None,
        regularize: Default::default(),
        fill: FillBlock {
            domain: FillDomain { x_min: -0.5, x_max: 0.5, y_min: -0.5, y_max: 0.5, z_min: COLUMN_FLOOR, h_fill: h },
            heightfield_cell: Some(h),
        },
        material: MaterialParams::default(),
        sim: SimBlock {
            config: SimConfig {
                dx,
                n_steps,
                checkpoint_every: (n_steps / 4).max(1),
                domain_min: [-2.5, -2.5, COLUMN_FLOOR - 2.0 * dx],
                domain_max: [2.5, 2.5, 2.0],
                ..SimConfig::default()
            },
            include_surface: true,
        },
        render: RenderBlock {
            camera: CameraBlock {
                eye: [0.0, -4.5, 1.4],
                target: [0.0, 0.0, 0.8],
                up: [0.0, 0.0, 1.0],
                width: 160,
                height: 120,
                fx: 140.0,
                fy: 140.0,
                cx: None,
                cy: None,
                near: 0.01,
            },
            options: RenderOptions { background: [0.6, 0.75, 0.9], ..RenderOptions::default() },
            frame_stride: 1,
            png: false,
        },
    })
}

/// Writes `config` as JSON next to its inputs.
pub fn write_config(config: &PipelineConfig, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(config).map_err(std::io::Error::other)?)
}
