//! CPU splat rasterizer: EWA projection, global depth sort and front-to-back
//! alpha compositing.
//!
//! Pixel `(i, j)` samples the image plane at `(i, j)`, so a principal point
//! of `(W / 2, H / 2)` lands exactly on pixel `(W / 2, H / 2)`.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::ColmapCamera;
use crate::mpm::Checkpoint;
use crate::scene::Scene;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("checkpoint at step {step}: {message}")]
    Checkpoint { step: u64, message: String },
    #[error("image encoding: {0}")]
    Encode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub pose: ColmapCamera,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(RenderError::Camera(format!("focal lengths must be positive, got ({}, {})", self.fx, self.fy)));
        }
        if !(self.near > 0.0) {
            return Err(RenderError::Camera(format!("near plane must be positive, got {}", self.near)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(RenderError::Camera("image dimensions must be non-zero".into()));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(RenderError::Camera("principal point must be finite".into()));
        }
        Ok(())
    }

    /// COLMAP-convention pose (x right, y down, z forward) at `eye` looking at
    /// `target`.
    pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Result<ColmapCamera, RenderError> {
        let z = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| RenderError::Camera("eye and target coincide".into()))?;
        let x = z
            .cross(up)
            .try_normalize(1e-12)
            .ok_or_else(|| RenderError::Camera("up vector is parallel to the view direction".into()))?;
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Ok(ColmapCamera::from_rotation_center(1, 1, String::new(), &r, eye))
    }

    pub fn world_to_camera(&self) -> (Matrix3<f64>, Vector3<f64>) {
        (self.pose.rotation(), self.pose.translation())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    /// Linear RGB in `[0, 1]`.
    pub background: [f64; 3],
    /// Added to the diagonal of every projected covariance, pixels².
    pub cov_floor: f64,
    /// Contributions with smaller alpha are skipped.
    pub alpha_min: f64,
    pub tile_size: u32,
    /// Evaluate higher-order SH for Gaussians that carry them.
    pub view_dependent: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            cov_floor: 0.3,
            alpha_min: 1.0 / 255.0,
            tile_size: 16,
            view_dependent: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub depth: f64,
}

/// EWA projection of one Gaussian. `None` when the center is not in front of
/// the near plane or the Gaussian is invalid.
pub fn project_gaussian(g: &crate::scene::Gaussian, cam: &Camera, cov_floor: f64) -> Option<Projection> {
    let (w, t) = cam.world_to_camera();
    let p = w * g.center + t;
    let z = p.z;
    if !(z > cam.near) {
        return None;
    }
    let sigma = g.covariance().ok()?;
    let j = Matrix2x3::new(
        cam.fx / z, 0.0, -cam.fx * p.x / (z * z),
        0.0, cam.fy / z, -cam.fy * p.y / (z * z),
    );
    let jw = j * w;
    let mut cov = jw * sigma * jw.transpose();
    cov[(0, 1)] = cov[(1, 0)];
    cov[(0, 0)] += cov_floor;
    cov[(1, 1)] += cov_floor;
    Some(Projection {
        mean: Vector2::new(cam.fx * p.x / z + cam.cx, cam.fy * p.y / z + cam.cy),
        cov,
        depth: z,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RenderStats {
    pub visible: usize,
    pub culled: usize,
    pub singular: usize,
}

/// Screen-space splat ready for compositing.
#[derive(Debug, Clone, Copy)]
struct Splat {
    mean: Vector2<f64>,
    /// Inverse 2D covariance as (a, b, c) of `[[a, b], [b, c]]`.
    conic: [f64; 3],
    opacity: f64,
    color: Vector3<f64>,
    /// Inclusive pixel bounds where alpha can reach `alpha_min`.
    bbox: [i64; 4],
}

impl Splat {
    #[inline]
    fn alpha(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.mean.x;
        let dy = py - self.mean.y;
        let q = self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy;
        self.opacity * (-0.5 * q).exp()
    }
}

fn prepare(scene: &Scene, cam: &Camera, opts: &RenderOptions) -> (Vec<Splat>, RenderStats) {
    let mut stats = RenderStats::default();
    let eye = cam.pose.center();
    let mut items: Vec<(f64, usize, Splat)> = Vec::with_capacity(scene.len());
    for (index, g) in scene.gaussians.iter().enumerate() {
        let opacity = g.opacity();
        if !(opacity >= opts.alpha_min) {
            continue;
        }
        let Some(proj) = project_gaussian(g, cam, opts.cov_floor) else {
            if g.covariance().is_err() {
                stats.singular += 1;
            } else {
                stats.culled += 1;
            }
            continue;
        };
        let (a, b, c) = (proj.cov[(0, 0)], proj.cov[(0, 1)], proj.cov[(1, 1)]);
        let det = a * c - b * b;
        if !(det > 0.0 && det.is_finite()) {
            stats.singular += 1;
            continue;
        }
        // alpha >= alpha_min needs a Mahalanobis radius below m
        let m = (2.0 * (opacity / opts.alpha_min).ln()).max(0.0).sqrt();
        let (rx, ry) = (m * a.sqrt(), m * c.sqrt());
        let bbox = [
            (proj.mean.x - rx).floor() as i64 - 1,
            (proj.mean.y - ry).floor() as i64 - 1,
            (proj.mean.x + rx).ceil() as i64 + 1,
            (proj.mean.y + ry).ceil() as i64 + 1,
        ];
        let color = if opts.view_dependent && g.has_view_dependence() {
            g.view_color(&(g.center - eye).normalize())
        } else {
            g.base_color()
        };
        stats.visible += 1;
        items.push((
            proj.depth,
            index,
            Splat { mean: proj.mean, conic: [c / det, -b / det, a / det], opacity, color, bbox },
        ));
    }
    items.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    (items.into_iter().map(|(_, _, s)| s).collect(), stats)
}

/// Floating-point render result with per-pixel compositing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<Vector3<f64>>,
    /// `sum_i T_i alpha_i` per pixel.
    pub splat_weight: Vec<f64>,
    /// Transmittance left for the background.
    pub transmittance: Vec<f64>,
}

#[derive(Clone, Copy)]
struct PixelOut {
    rgb: Vector3<f64>,
    weight: f64,
    t: f64,
}

#[inline]
fn shade<'a>(px: i64, py: i64, splats: impl Iterator<Item = &'a Splat>, opts: &RenderOptions) -> PixelOut {
    let (fx, fy) = (px as f64, py as f64);
    let mut t = 1.0;
    let mut rgb = Vector3::zeros();
    let mut weight = 0.0;
    for s in splats {
        if px < s.bbox[0] || px > s.bbox[2] || py < s.bbox[1] || py > s.bbox[3] {
            continue;
        }
        let alpha = s.alpha(fx, fy);
        if alpha < opts.alpha_min {
            continue;
        }
        let w = t * alpha;
        rgb += s.color * w;
        weight += w;
        t *= 1.0 - alpha;
    }
    rgb += Vector3::from(opts.background) * t;
    PixelOut { rgb, weight, t }
}

fn assemble(width: u32, height: u32, pixels: Vec<PixelOut>) -> LinearImage {
    LinearImage {
        width,
        height,
        rgb: pixels.iter().map(|p| p.rgb).collect(),
        splat_weight: pixels.iter().map(|p| p.weight).collect(),
        transmittance: pixels.iter().map(|p| p.t).collect(),
    }
}

/// Untiled reference: every pixel walks the full sorted splat list.
pub fn render_reference(scene: &Scene, cam: &Camera, opts: &RenderOptions) -> Result<(LinearImage, RenderStats), RenderError> {
    cam.validate()?;
    let (splats, stats) = prepare(scene, cam, opts);
    let (w, h) = (cam.width as i64, cam.height as i64);
    let pixels = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| shade(x, y, splats.iter(), opts))
        .collect();
    Ok((assemble(cam.width, cam.height, pixels), stats))
}

/// Tiled render. Each tile composites only the splats whose bounds touch it,
/// in global depth order, so output equals [`render_reference`]. Tiles run
/// on the ambient rayon pool.
pub fn render_linear(scene: &Scene, cam: &Camera, opts: &RenderOptions) -> Result<(LinearImage, RenderStats), RenderError> {
    cam.validate()?;
    let (splats, stats) = prepare(scene, cam, opts);
    let ts = opts.tile_size.max(1) as i64;
    let (w, h) = (cam.width as i64, cam.height as i64);
    let (tx, ty) = ((w + ts - 1) / ts, (h + ts - 1) / ts);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); (tx * ty) as usize];
    for (i, s) in splats.iter().enumerate() {
        let x0 = s.bbox[0].max(0) / ts;
        let y0 = s.bbox[1].max(0) / ts;
        let x1 = s.bbox[2].min(w - 1);
        let y1 = s.bbox[3].min(h - 1);
        if x1 < 0 || y1 < 0 || s.bbox[0] >= w || s.bbox[1] >= h {
            continue;
        }
        for by in y0..=y1 / ts {
            for bx in x0..=x1 / ts {
                bins[(by * tx + bx) as usize].push(i as u32);
            }
        }
    }
    let tiles: Vec<Vec<(i64, i64, PixelOut)>> = bins
        .par_iter()
        .enumerate()
        .map(|(t, bin)| {
            let (bx, by) = (t as i64 % tx, t as i64 / tx);
            let mut out = Vec::with_capacity((ts * ts) as usize);
            for y in by * ts..((by + 1) * ts).min(h) {
                for x in bx * ts..((bx + 1) * ts).min(w) {
                    out.push((x, y, shade(x, y, bin.iter().map(|&i| &splats[i as usize]), opts)));
                }
            }
            out
        })
        .collect();
    let empty = PixelOut { rgb: Vector3::zeros(), weight: 0.0, t: 1.0 };
    let mut pixels = vec![empty; (w * h) as usize];
    for tile in tiles {
        for (x, y, p) in tile {
            pixels[(y * w + x) as usize] = p;
        }
    }
    Ok((assemble(cam.width, cam.height, pixels), stats))
}

/// 8-bit RGB frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB triples.
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn from_linear(img: &LinearImage) -> Self {
        let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        Self {
            width: img.width,
            height: img.height,
            pixels: img.rgb.iter().flat_map(|c| [to_u8(c.x), to_u8(c.y), to_u8(c.z)]).collect(),
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let o = 3 * (y * self.width + x) as usize;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self, RenderError> {
        let bad = || RenderError::Encode("not a binary 8-bit PPM".into());
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad());
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?.to_string());
        }
        pos += 1;
        let (width, height): (u32, u32) = (fields[1].parse().map_err(|_| bad())?, fields[2].parse().map_err(|_| bad())?);
        if fields[0] != "P6" || fields[3] != "255" || bytes.len() != pos + 3 * (width * height) as usize {
            return Err(bad());
        }
        Ok(Self { width, height, pixels: bytes[pos..].to_vec() })
    }

    pub fn write_ppm(&self, path: &Path) -> Result<(), RenderError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_ppm())?;
        Ok(())
    }

    #[cfg(feature = "png")]
    pub fn write_png(&self, path: &Path) -> Result<(), RenderError> {
        image::save_buffer(path, &self.pixels, self.width, self.height, image::ExtendedColorType::Rgb8)
            .map_err(|e| RenderError::Encode(e.to_string()))
    }

    /// Fraction of pixels where any channel differs by at least `threshold`.
    pub fn changed_fraction(&self, other: &Frame, threshold: u8) -> f64 {
        let n = (self.width * self.height) as usize;
        let changed = self
            .pixels
            .chunks_exact(3)
            .zip(other.pixels.chunks_exact(3))
            .filter(|(a, b)| a.iter().zip(b.iter()).any(|(x, y)| x.abs_diff(*y) >= threshold))
            .count();
        changed as f64 / n.max(1) as f64
    }
}

pub fn render(scene: &Scene, cam: &Camera, opts: &RenderOptions) -> Result<(Frame, RenderStats), RenderError> {
    let (img, stats) = render_linear(scene, cam, opts)?;
    Ok((Frame::from_linear(&img), stats))
}

/// Moves Gaussian centers to the checkpoint's particle positions.
pub fn apply_checkpoint(scene: &Scene, cp: &Checkpoint) -> Result<Scene, RenderError> {
    let mut out = scene.clone();
    for (i, (x, src)) in cp.positions.iter().zip(&cp.sources).enumerate() {
        let bad = |message: String| RenderError::Checkpoint { step: cp.step, message };
        let s = src.ok_or_else(|| bad(format!("particle {i} has no source Gaussian")))? as usize;
        let g = out
            .gaussians
            .get_mut(s)
            .ok_or_else(|| bad(format!("particle {i} refers to Gaussian {s}, scene has {}", scene.len())))?;
        g.center = *x;
    }
    Ok(out)
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.ppm")
}

/// Renders one frame per checkpoint into `out_dir` as `frame_%06d.ppm`
/// (plus PNG copies when `png` is set and the feature is enabled).
pub fn render_sequence(
    scene: &Scene,
    checkpoints: &[Checkpoint],
    cam: &Camera,
    opts: &RenderOptions,
    out_dir: &Path,
    png: bool,
) -> Result<Vec<PathBuf>, RenderError> {
    cam.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut paths = Vec::with_capacity(checkpoints.len());
    for (i, cp) in checkpoints.iter().enumerate() {
        let moved = apply_checkpoint(scene, cp)?;
        let (frame, _) = render(&moved, cam, opts)?;
        let path = out_dir.join(frame_file_name(i));
        frame.write_ppm(&path)?;
        if png {
            #[cfg(feature = "png")]
            frame.write_png(&path.with_extension("png"))?;
            #[cfg(not(feature = "png"))]
            log::warn!("PNG output requested but the png feature is not enabled");
        }
        paths.push(path);
    }
    Ok(paths)
}
