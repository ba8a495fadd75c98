//! Subsurface Gaussian synthesis below a reconstructed slope surface.
//!
//! Seeds sit at the cell centers of a uniform lattice inside the fill box.
//! A seed is kept when it lies strictly below the surface along the vertical
//! through it; its three axes are `(d, 1.5 d, 2 d)` where `d` is the distance
//! to the nearest surface point, and the short axis points at that point.

pub mod mesh;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mesh::{heightfield_surface, load_obj, load_obj_file, Footprint, SurfaceHit, SurfaceMesh};

use crate::scene::{Gaussian, Scene};
use crate::spatial::PointIndex;

/// Opacity given to every synthesized Gaussian.
pub const FILL_OPACITY: f64 = 0.99;
/// Axis multipliers of the short, middle and long axes.
pub const AXIS_RATIOS: [f64; 3] = [1.0, 1.5, 2.0];

#[derive(Debug, Error)]
pub enum FillError {
    #[error("invalid fill domain: {0}")]
    Domain(String),
    #[error("invalid mesh: {0}")]
    Mesh(String),
    #[error("no Gaussians inside the surface footprint")]
    EmptySurface,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FillDomain {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    /// Seed lattice pitch.
    pub h_fill: f64,
}

impl FillDomain {
    pub fn validate(&self) -> Result<(), FillError> {
        let vals = [self.x_min, self.x_max, self.y_min, self.y_max, self.z_min, self.h_fill];
        if !vals.iter().all(|v| v.is_finite()) {
            return Err(FillError::Domain("non-finite bound".into()));
        }
        if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            return Err(FillError::Domain(format!(
                "empty footprint [{}, {}] x [{}, {}]",
                self.x_min, self.x_max, self.y_min, self.y_max
            )));
        }
        if self.h_fill <= 0.0 {
            return Err(FillError::Domain(format!("h_fill must be positive, got {}", self.h_fill)));
        }
        Ok(())
    }

    pub fn footprint(&self) -> Footprint {
        Footprint {
            x_min: self.x_min,
            x_max: self.x_max,
            y_min: self.y_min,
            y_max: self.y_max,
        }
    }

    fn axis_count(lo: f64, hi: f64, h: f64) -> usize {
        ((hi - lo) / h + 1e-9).floor().max(0.0) as usize
    }

    /// Seed coordinate along one axis.
    pub fn seed(lo: f64, h: f64, i: usize) -> f64 {
        lo + (i as f64 + 0.5) * h
    }

    pub fn columns(&self) -> (usize, usize) {
        (
            Self::axis_count(self.x_min, self.x_max, self.h_fill),
            Self::axis_count(self.y_min, self.y_max, self.h_fill),
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FillStats {
    pub candidates: usize,
    pub kept: usize,
    pub columns_over_gaps: usize,
    pub zero_distance: usize,
    pub surface_top: f64,
}

#[derive(Debug, Clone)]
pub struct FillOutput {
    pub scene: Scene,
    pub stats: FillStats,
}

/// Orientation whose local x axis is `normal`; local y and z follow the
/// minimal rotation carrying +z onto `normal`.
pub fn short_axis_frame(normal: &Vector3<f64>) -> UnitQuaternion<f64> {
    let n = normal.normalize();
    let min_rot = UnitQuaternion::rotation_between(&Vector3::z(), &n)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI));
    // local x -> +z, local y -> +x, local z -> +y
    let cycle = Rotation3::from_matrix_unchecked(Matrix3::new(
        0.0, 1.0, 0.0, //
        0.0, 0.0, 1.0, //
        1.0, 0.0, 0.0,
    ));
    min_rot * UnitQuaternion::from_rotation_matrix(&cycle)
}

/// Synthesizes interior Gaussians. Output order is lexicographic in the seed
/// lattice (x outermost, then y, then z).
pub fn fill_interior(surface: &Scene, mesh: &SurfaceMesh, dom: &FillDomain) -> Result<FillOutput, FillError> {
    dom.validate()?;
    let top = mesh.max_z().ok_or_else(|| FillError::Mesh("mesh has no triangles".into()))?;
    let h = dom.h_fill;
    let (nx, ny) = dom.columns();
    let nz = ((top - dom.z_min) / h).ceil().max(0.0) as usize;

    let colors = PointIndex::new(
        surface
            .gaussians
            .iter()
            .map(|g| [g.center.x, g.center.y, g.center.z])
            .collect(),
    );
    let opacity_logit = crate::scene::logit(FILL_OPACITY);

    struct Column {
        gaussians: Vec<Gaussian>,
        gap: bool,
        zero: usize,
    }

    let columns: Vec<Column> = (0..nx * ny)
        .into_par_iter()
        .map(|c| {
            let x = FillDomain::seed(dom.x_min, h, c / ny);
            let y = FillDomain::seed(dom.y_min, h, c % ny);
            let Some(surface_z) = mesh.height_at(x, y) else {
                return Column { gaussians: Vec::new(), gap: true, zero: 0 };
            };
            let mut gaussians = Vec::new();
            let mut zero = 0;
            for k in 0..nz {
                let z = FillDomain::seed(dom.z_min, h, k);
                if !(z < surface_z && z >= dom.z_min) {
                    continue;
                }
                let p = Vector3::new(x, y, z);
                let hit = mesh.nearest(&p).expect("mesh is non-empty");
                let d = hit.distance;
                if !(d > 0.0) {
                    zero += 1;
                    continue;
                }
                let rotation = short_axis_frame(&(hit.point - p));
                let sh_dc = colors
                    .nearest(&[x, y, z])
                    .map(|(i, _)| surface.gaussians[i].sh_dc)
                    .unwrap_or_else(Vector3::zeros);
                let scales = Vector3::new(AXIS_RATIOS[0] * d, AXIS_RATIOS[1] * d, AXIS_RATIOS[2] * d);
                let mut g = Gaussian::from_activated(p, scales, rotation, FILL_OPACITY, sh_dc);
                g.opacity_logit = opacity_logit;
                gaussians.push(g);
            }
            Column { gaussians, gap: false, zero }
        })
        .collect();

    let mut stats = FillStats {
        candidates: nx * ny * nz,
        surface_top: top,
        ..Default::default()
    };
    let mut gaussians = Vec::new();
    for col in columns {
        stats.columns_over_gaps += col.gap as usize;
        stats.zero_distance += col.zero;
        gaussians.extend(col.gaussians);
    }
    stats.kept = gaussians.len();
    if gaussians.is_empty() {
        log::warn!("interior fill produced no Gaussians ({} candidates)", stats.candidates);
    }
    Ok(FillOutput {
        scene: Scene {
            gaussians,
            frame: surface.frame,
        },
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn flat(z: f64, size: f64) -> SurfaceMesh {
        SurfaceMesh::new(
            vec![
                Vector3::new(0.0, 0.0, z),
                Vector3::new(size, 0.0, z),
                Vector3::new(size, size, z),
                Vector3::new(0.0, size, z),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    fn domain(h: f64) -> FillDomain {
        FillDomain { x_min: 0.0, x_max: 4.0, y_min: 0.0, y_max: 4.0, z_min: 0.0, h_fill: h }
    }

    #[test]
    fn flat_surface_count_and_order() {
        let out = fill_interior(&Scene::default(), &flat(5.0, 4.0), &domain(1.0)).unwrap();
        assert_eq!(out.scene.len(), 80);
        assert!(out.scene.gaussians.iter().all(|g| g.center.z < 5.0 && g.center.z >= 0.0));
        let first = &out.scene.gaussians[0].center;
        let second = &out.scene.gaussians[1].center;
        assert_eq!((first.x, first.y, first.z), (0.5, 0.5, 0.5));
        assert_eq!((second.x, second.y, second.z), (0.5, 0.5, 1.5));
    }

    #[test]
    fn scale_rule() {
        let out = fill_interior(&Scene::default(), &flat(5.0, 4.0), &domain(1.0)).unwrap();
        // the seed at z = 4.5 sits 0.5 below the surface
        let g = out.scene.gaussians.iter().find(|g| g.center.z == 4.5).unwrap();
        let s = g.scales();
        assert_relative_eq!(s, Vector3::new(0.5, 0.75, 1.0), epsilon = 1e-15);
        assert_relative_eq!(g.opacity(), 0.99, epsilon = 1e-12);
        assert!(g.sh_rest.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn short_axis_points_up_under_flat_surface() {
        let q = short_axis_frame(&Vector3::z());
        assert_relative_eq!(q * Vector3::x(), Vector3::z(), epsilon = 1e-15);
        let q = short_axis_frame(&-Vector3::z());
        assert_relative_eq!(q * Vector3::x(), -Vector3::z(), epsilon = 1e-15);
        let n = Vector3::new(1.0, -2.0, 0.5).normalize();
        assert_relative_eq!(short_axis_frame(&n) * Vector3::x(), n, epsilon = 1e-12);
    }

    #[test]
    fn colors_from_nearest_surface_gaussian() {
        let red = Gaussian { center: Vector3::new(1.0, 1.0, 5.0), sh_dc: Vector3::new(1.0, 0.0, 0.0), ..Default::default() };
        let blue = Gaussian { center: Vector3::new(3.0, 3.0, 5.0), sh_dc: Vector3::new(0.0, 0.0, 1.0), ..Default::default() };
        let mut rest_heavy = red.clone();
        rest_heavy.sh_rest = [0.3; 45];
        let surface = Scene::new(vec![rest_heavy, blue]);
        let out = fill_interior(&surface, &flat(5.0, 4.0), &domain(1.0)).unwrap();
        for g in &out.scene.gaussians {
            // equidistant seeds take the lower surface index
            let expect = if g.center.x + g.center.y <= 4.0 { Vector3::new(1.0, 0.0, 0.0) } else { Vector3::new(0.0, 0.0, 1.0) };
            assert_eq!(g.sh_dc, expect);
            assert!(g.sh_rest.iter().all(|c| *c == 0.0));
        }
    }

    #[test]
    fn gaps_are_skipped() {
        let mesh = flat(5.0, 2.0);
        let out = fill_interior(&Scene::default(), &mesh, &domain(1.0)).unwrap();
        assert_eq!(out.stats.columns_over_gaps, 12);
        assert_eq!(out.scene.len(), 4 * 5);
    }

    #[test]
    fn invalid_domain() {
        let mut d = domain(1.0);
        d.x_max = -1.0;
        assert!(fill_interior(&Scene::default(), &flat(5.0, 4.0), &d).is_err());
        let mut d = domain(0.0);
        d.h_fill = 0.0;
        assert!(d.validate().is_err());
    }

    #[test]
    fn empty_fill_is_not_an_error() {
        let mut d = domain(1.0);
        d.z_min = 6.0;
        let out = fill_interior(&Scene::default(), &flat(5.0, 4.0), &d).unwrap();
        assert!(out.scene.is_empty());
    }
}
