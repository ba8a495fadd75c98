//! Hencky-strain elasticity with Drucker-Prager plasticity for dry sand.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaterialParams {
    /// Pa.
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    /// Degrees.
    pub friction_angle: f64,
    /// kg/m³.
    pub density: f64,
    /// m/s².
    pub gravity: [f64; 3],
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self {
            youngs_modulus: 5.0e7,
            poisson_ratio: 0.3,
            friction_angle: 22.0,
            density: 2000.0,
            gravity: [0.0, 0.0, -9.8],
        }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Material(m));
        if !(self.youngs_modulus > 0.0 && self.youngs_modulus.is_finite()) {
            return bad(format!("youngs_modulus must be positive, got {}", self.youngs_modulus));
        }
        if !(self.poisson_ratio > 0.0 && self.poisson_ratio < 0.5) {
            return bad(format!("poisson_ratio must lie in (0, 0.5), got {}", self.poisson_ratio));
        }
        if !(self.friction_angle > 0.0 && self.friction_angle < 90.0) {
            return bad(format!("friction_angle must lie in (0, 90) degrees, got {}", self.friction_angle));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return bad(format!("density must be positive, got {}", self.density));
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return bad("gravity must be finite".into());
        }
        Ok(())
    }

    /// Lamé parameters `(mu, lambda)`.
    pub fn lame(&self) -> (f64, f64) {
        let (e, nu) = (self.youngs_modulus, self.poisson_ratio);
        (e / (2.0 * (1.0 + nu)), e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)))
    }

    /// Drucker-Prager cone slope in Hencky-strain space.
    pub fn friction_alpha(&self) -> f64 {
        let s = self.friction_angle.to_radians().sin();
        (2.0f64 / 3.0).sqrt() * 2.0 * s / (3.0 - s)
    }

    /// One-dimensional elastic wave speed `sqrt(E / rho)`.
    pub fn wave_speed(&self) -> f64 {
        (self.youngs_modulus / self.density).sqrt()
    }

    pub fn gravity(&self) -> Vector3<f64> {
        Vector3::from(self.gravity)
    }

    pub fn constants(&self) -> Constants {
        let (mu, lambda) = self.lame();
        Constants { mu, lambda, alpha: self.friction_alpha() }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Constants {
    pub mu: f64,
    pub lambda: f64,
    pub alpha: f64,
}

/// Polar data of an elastic deformation gradient, `F = U diag(exp(eps)) V^T`.
#[derive(Debug, Clone, Copy)]
pub struct Hencky {
    pub u: Matrix3<f64>,
    pub eps: Vector3<f64>,
    pub v: Matrix3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Degenerate {
    pub det: f64,
}

/// Singular value decomposition `F = U diag(s) V^T` by one-sided Jacobi
/// rotations. Accurate to rounding even with clustered singular values,
/// which is the common case for near-rest deformation gradients.
pub fn svd3(f: &Matrix3<f64>) -> (Matrix3<f64>, Vector3<f64>, Matrix3<f64>) {
    let mut a = *f;
    let mut v = Matrix3::identity();
    for _ in 0..40 {
        let mut rotated = false;
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let alpha = a.column(p).norm_squared();
            let beta = a.column(q).norm_squared();
            let gamma = a.column(p).dot(&a.column(q));
            if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = c * t;
            for m in [&mut a, &mut v] {
                for r in 0..3 {
                    let (x, y) = (m[(r, p)], m[(r, q)]);
                    m[(r, p)] = c * x - s * y;
                    m[(r, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma = Vector3::from_fn(|i, _| a.column(i).norm());
    let u = Matrix3::from_fn(|r, c| if sigma[c] > 0.0 { a[(r, c)] / sigma[c] } else { 0.0 });
    (u, sigma, v)
}

pub fn hencky(f: &Matrix3<f64>) -> Result<Hencky, Degenerate> {
    let det = f.determinant();
    if !(det > 0.0 && det.is_finite()) {
        return Err(Degenerate { det });
    }
    let (u, s, v) = svd3(f);
    if !s.iter().all(|x| *x > 0.0) {
        return Err(Degenerate { det });
    }
    Ok(Hencky { u, eps: s.map(f64::ln), v })
}

/// Kirchhoff stress `U (2 mu eps + lambda tr(eps) I) U^T`.
pub fn kirchhoff(u: &Matrix3<f64>, eps: &Vector3<f64>, mu: f64, lambda: f64) -> Matrix3<f64> {
    let tr = eps.sum();
    let d = eps.map(|e| 2.0 * mu * e + lambda * tr);
    let ud = Matrix3::from_fn(|r, c| u[(r, c)] * d[c]);
    let tau = ud * u.transpose();
    // exact symmetry regardless of rounding in the product
    (tau + tau.transpose()) * 0.5
}

/// Cauchy stress of an elastic deformation gradient.
pub fn stress(f_e: &Matrix3<f64>, params: &MaterialParams) -> Result<Matrix3<f64>, Degenerate> {
    let h = hencky(f_e)?;
    let (mu, lambda) = params.lame();
    Ok(kirchhoff(&h.u, &h.eps, mu, lambda) / f_e.determinant())
}

/// Drucker-Prager return mapping on principal Hencky strains. Returns `None`
/// when the state is admissible.
pub fn project_strain(eps: &Vector3<f64>, mu: f64, lambda: f64, alpha: f64) -> Option<Vector3<f64>> {
    let tr = eps.sum();
    let dev = eps.add_scalar(-tr / 3.0);
    let dev_norm = dev.norm();
    if tr > 0.0 {
        return Some(Vector3::zeros());
    }
    if dev_norm == 0.0 {
        return None;
    }
    let dgamma = dev_norm + (3.0 * lambda + 2.0 * mu) / (2.0 * mu) * tr * alpha;
    if dgamma <= 0.0 {
        return None;
    }
    Some(eps - dev * (dgamma / dev_norm))
}

/// Yield function value; positive outside the cone.
pub fn yield_value(eps: &Vector3<f64>, mu: f64, lambda: f64, alpha: f64) -> f64 {
    let tr = eps.sum();
    eps.add_scalar(-tr / 3.0).norm() + (3.0 * lambda + 2.0 * mu) / (2.0 * mu) * tr * alpha
}

/// Result of advancing one particle's deformation state.
pub(crate) struct PlasticUpdate {
    pub f_elastic: Matrix3<f64>,
    pub f_plastic: Matrix3<f64>,
    pub kirchhoff: Matrix3<f64>,
}

/// Applies the trial update `F_E <- (I + dt grad_v) F_E` and the return
/// mapping. `F_P` only changes when the state is projected.
pub(crate) fn plastic_update(
    f_elastic: &Matrix3<f64>,
    f_plastic: &Matrix3<f64>,
    grad_v: &Matrix3<f64>,
    dt: f64,
    k: &Constants,
) -> Result<PlasticUpdate, Degenerate> {
    let trial = (Matrix3::identity() + grad_v * dt) * f_elastic;
    let h = hencky(&trial)?;
    match project_strain(&h.eps, k.mu, k.lambda, k.alpha) {
        None => Ok(PlasticUpdate {
            f_elastic: trial,
            f_plastic: *f_plastic,
            kirchhoff: kirchhoff(&h.u, &h.eps, k.mu, k.lambda),
        }),
        Some(eps) => {
            let stretch = eps.map(f64::exp);
            let f_e = Matrix3::from_fn(|r, c| h.u[(r, c)] * stretch[c]) * h.v.transpose();
            // F_E_new^-1 F_trial = V diag(exp(eps_trial - eps_new)) V^T
            let ratio = (h.eps - eps).map(f64::exp);
            let plastic_step = Matrix3::from_fn(|r, c| h.v[(r, c)] * ratio[c]) * h.v.transpose();
            Ok(PlasticUpdate {
                f_elastic: f_e,
                f_plastic: plastic_step * f_plastic,
                kirchhoff: kirchhoff(&h.u, &eps, k.mu, k.lambda),
            })
        }
    }
}
