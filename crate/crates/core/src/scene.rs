//! Gaussian splat primitives and the scene container.
//!
//! Values are held in `f64` in memory. The on-disk splat PLY stores `f32`, so
//! a scene loaded from disk round-trips bit-exactly while scenes synthesized in
//! memory are rounded once on save.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

/// Number of higher-order (degree 1..=3) SH coefficients per Gaussian.
pub const SH_REST_LEN: usize = 45;
/// Higher-order SH coefficients per color channel.
pub const SH_REST_PER_CHANNEL: usize = SH_REST_LEN / 3;
/// Degree-0 real spherical harmonic basis constant, `1 / (2 sqrt(pi))`.
pub const SH_C0: f64 = 0.28209479177387814;

const SH_C1: f64 = 0.4886025119029199;
const SH_C2: [f64; 5] = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
];
const SH_C3: [f64; 7] = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
];

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("invalid primitive: {0}")]
    InvalidPrimitive(String),
    #[error("degenerate primitive: {0}")]
    DegeneratePrimitive(String),
}

/// One splat primitive in storage form (pre-activation).
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub center: Vector3<f64>,
    /// Natural log of the per-axis standard deviations.
    pub log_scale: Vector3<f64>,
    /// Rotation as stored, not necessarily unit length.
    pub rotation: Quaternion<f64>,
    pub opacity_logit: f64,
    pub sh_dc: Vector3<f64>,
    /// Channel-major: `[0..15]` red, `[15..30]` green, `[30..45]` blue.
    pub sh_rest: [f64; SH_REST_LEN],
}

impl Default for Gaussian {
    fn default() -> Self {
        Self {
            center: Vector3::zeros(),
            log_scale: Vector3::zeros(),
            rotation: Quaternion::identity(),
            opacity_logit: 0.0,
            sh_dc: Vector3::zeros(),
            sh_rest: [0.0; SH_REST_LEN],
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl Gaussian {
    /// Builds a Gaussian from activated quantities.
    pub fn from_activated(
        center: Vector3<f64>,
        scales: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
        opacity: f64,
        sh_dc: Vector3<f64>,
    ) -> Self {
        Self {
            center,
            log_scale: scales.map(f64::ln),
            rotation: *rotation.quaternion(),
            opacity_logit: logit(opacity),
            sh_dc,
            sh_rest: [0.0; SH_REST_LEN],
        }
    }

    pub fn scales(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// Normalized rotation. A zero quaternion yields `None`.
    pub fn unit_rotation(&self) -> Option<UnitQuaternion<f64>> {
        let n = self.rotation.norm();
        if n > 0.0 && n.is_finite() {
            Some(UnitQuaternion::new_unchecked(self.rotation / n))
        } else {
            None
        }
    }

    pub fn rotation_matrix(&self) -> Option<Matrix3<f64>> {
        self.unit_rotation().map(|q| q.to_rotation_matrix().into_inner())
    }

    fn check_finite(&self) -> Result<(), SceneError> {
        let finite = self.center.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.rotation.coords.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite();
        if finite {
            Ok(())
        } else {
            Err(SceneError::InvalidPrimitive("non-finite field".into()))
        }
    }

    /// `R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
    pub fn covariance(&self) -> Result<Matrix3<f64>, SceneError> {
        self.check_finite()?;
        let r = self
            .rotation_matrix()
            .ok_or_else(|| SceneError::InvalidPrimitive("zero-norm rotation".into()))?;
        let s = self.scales();
        if !s.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(SceneError::InvalidPrimitive(format!(
                "scales must be finite and positive, got {s:?}"
            )));
        }
        let m = r * Matrix3::from_diagonal(&s);
        let mut cov = m * m.transpose();
        // exact symmetry
        for i in 0..3 {
            for j in (i + 1)..3 {
                cov[(j, i)] = cov[(i, j)];
            }
        }
        Ok(cov)
    }

    /// Unnormalized Gaussian density `exp(-½ dᵀ Σ⁻¹ d)`.
    ///
    /// The quadratic form is evaluated in the principal frame, so `Σ` is never
    /// inverted explicitly.
    pub fn density_at(&self, x: &Vector3<f64>) -> Result<f64, SceneError> {
        self.check_finite()?;
        let r = self
            .rotation_matrix()
            .ok_or_else(|| SceneError::DegeneratePrimitive("zero-norm rotation".into()))?;
        let s = self.scales();
        if !s.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(SceneError::DegeneratePrimitive(format!(
                "singular covariance, scales {s:?}"
            )));
        }
        let local = r.transpose() * (x - self.center);
        let m2: f64 = (0..3).map(|i| (local[i] / s[i]).powi(2)).sum();
        Ok((-0.5 * m2).exp())
    }

    /// View-independent color from the DC term only.
    pub fn base_color(&self) -> Vector3<f64> {
        self.sh_dc.map(|c| (0.5 + SH_C0 * c).clamp(0.0, 1.0))
    }

    pub fn has_view_dependence(&self) -> bool {
        self.sh_rest.iter().any(|c| *c != 0.0)
    }

    /// Degree-3 SH color for a unit viewing direction (camera to Gaussian),
    /// clamped to `[0, 1]`.
    pub fn view_color(&self, dir: &Vector3<f64>) -> Vector3<f64> {
        let (x, y, z) = (dir.x, dir.y, dir.z);
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let basis = [
            -SH_C1 * y,
            SH_C1 * z,
            -SH_C1 * x,
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2.0 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
            SH_C3[0] * y * (3.0 * xx - yy),
            SH_C3[1] * x * y * z,
            SH_C3[2] * y * (4.0 * zz - xx - yy),
            SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            SH_C3[4] * x * (4.0 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3.0 * yy),
        ];
        let mut rgb = Vector3::zeros();
        for ch in 0..3 {
            let rest = &self.sh_rest[ch * SH_REST_PER_CHANNEL..(ch + 1) * SH_REST_PER_CHANNEL];
            let higher: f64 = rest.iter().zip(basis.iter()).map(|(c, b)| c * b).sum();
            rgb[ch] = (0.5 + SH_C0 * self.sh_dc[ch] + higher).clamp(0.0, 1.0);
        }
        rgb
    }
}

/// Coordinate frame a scene is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoordinateFrame {
    /// Local East-North-Up frame anchored at a geodetic origin.
    LocalEnu,
    /// Arbitrary frame of the reconstruction.
    #[default]
    Reconstruction,
}

impl CoordinateFrame {
    pub fn tag(self) -> &'static str {
        match self {
            CoordinateFrame::LocalEnu => "enu",
            CoordinateFrame::Reconstruction => "reconstruction",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "enu" => Some(CoordinateFrame::LocalEnu),
            "reconstruction" => Some(CoordinateFrame::Reconstruction),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub gaussians: Vec<Gaussian>,
    pub frame: CoordinateFrame,
}

impl Scene {
    pub fn new(gaussians: Vec<Gaussian>) -> Self {
        Self {
            gaussians,
            frame: CoordinateFrame::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}
