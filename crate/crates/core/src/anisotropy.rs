//! Hinge penalty on Gaussian aspect ratios and the matching projection.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::Scene;

#[derive(Debug, Error, PartialEq)]
pub enum AnisoError {
    #[error("anisotropy loss is undefined for an empty set")]
    Empty,
    #[error("scale triple {index} has a non-positive or non-finite component: {scales:?}")]
    InvalidScale { index: usize, scales: [f64; 3] },
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnisoConfig {
    /// Largest allowed max/min scale ratio.
    pub r: f64,
    pub lambda_aniso: f64,
}

impl Default for AnisoConfig {
    fn default() -> Self {
        Self {
            r: 3.0,
            lambda_aniso: 10.0,
        }
    }
}

impl AnisoConfig {
    pub fn validate(&self) -> Result<(), AnisoError> {
        if !(self.r >= 1.0 && self.r.is_finite()) {
            return Err(AnisoError::Config(format!("r must be >= 1, got {}", self.r)));
        }
        if !(self.lambda_aniso >= 0.0 && self.lambda_aniso.is_finite()) {
            return Err(AnisoError::Config(format!(
                "lambda_aniso must be >= 0, got {}",
                self.lambda_aniso
            )));
        }
        Ok(())
    }
}

/// Pairwise summation in a fixed split order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// Indices of the max and min components, ties resolved to the lowest index.
fn extremes(s: &Vector3<f64>) -> (usize, usize) {
    let mut imax = 0;
    let mut imin = 0;
    for i in 1..3 {
        if s[i] > s[imax] {
            imax = i;
        }
        if s[i] < s[imin] {
            imin = i;
        }
    }
    (imax, imin)
}

fn check(scales: &[Vector3<f64>]) -> Result<(), AnisoError> {
    if scales.is_empty() {
        return Err(AnisoError::Empty);
    }
    for (index, s) in scales.iter().enumerate() {
        if !s.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(AnisoError::InvalidScale {
                index,
                scales: [s.x, s.y, s.z],
            });
        }
    }
    Ok(())
}

fn hinge(s: &Vector3<f64>, r: f64) -> f64 {
    let (imax, imin) = extremes(s);
    (s[imax] / s[imin]).max(r) - r
}

/// Mean over Gaussians of `max(max(s)/min(s), r) - r`, on activated scales.
pub fn aniso_loss(scales: &[Vector3<f64>], r: f64) -> Result<f64, AnisoError> {
    check(scales)?;
    let hinges: Vec<f64> = scales.iter().map(|s| hinge(s, r)).collect();
    Ok(pairwise_sum(&hinges) / scales.len() as f64)
}

/// Subgradient of [`aniso_loss`] with respect to each activated scale triple.
///
/// Zero where the ratio is at or below `r`.
pub fn aniso_subgradient(scales: &[Vector3<f64>], r: f64) -> Result<Vec<Vector3<f64>>, AnisoError> {
    check(scales)?;
    let inv_n = 1.0 / scales.len() as f64;
    Ok(scales
        .iter()
        .map(|s| {
            let (imax, imin) = extremes(s);
            let (hi, lo) = (s[imax], s[imin]);
            let mut g = Vector3::zeros();
            if hi / lo > r {
                g[imax] += inv_n / lo;
                g[imin] -= inv_n * hi / (lo * lo);
            }
            g
        })
        .collect())
}

/// `rec_loss + lambda_aniso * aniso_loss`.
pub fn combined_loss(rec_loss: f64, scales: &[Vector3<f64>], cfg: &AnisoConfig) -> Result<f64, AnisoError> {
    if cfg.lambda_aniso == 0.0 {
        return Ok(rec_loss);
    }
    Ok(rec_loss + cfg.lambda_aniso * aniso_loss(scales, cfg.r)?)
}

pub fn scene_scales(scene: &Scene) -> Vec<Vector3<f64>> {
    scene.gaussians.iter().map(|g| g.scales()).collect()
}

/// Largest log-scale whose activation stays within `r` times `exp(min_log)`.
fn capped_log_scale(min_log: f64, r: f64) -> f64 {
    let lo = min_log.exp();
    let mut cand = min_log + r.ln();
    while cand.exp() / lo > r {
        cand = cand.next_down();
    }
    cand
}

/// Shrinks every scale axis longer than `r` times the shortest axis of its
/// Gaussian. Returns the projected scene and the number of Gaussians changed.
pub fn clamp_scales(scene: &Scene, r: f64) -> (Scene, usize) {
    let mut out = scene.clone();
    let mut changed = 0;
    for g in &mut out.gaussians {
        let s = g.scales();
        let (_, imin) = extremes(&s);
        let cap = capped_log_scale(g.log_scale[imin], r);
        let mut touched = false;
        for i in 0..3 {
            if s[i] / s[imin] > r && g.log_scale[i] > cap {
                g.log_scale[i] = cap;
                touched = true;
            }
        }
        changed += touched as usize;
    }
    (out, changed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Gaussian;
    use proptest::prelude::*;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    fn scene_of(scales: &[Vector3<f64>]) -> Scene {
        Scene::new(
            scales
                .iter()
                .map(|s| Gaussian {
                    log_scale: s.map(f64::ln),
                    ..Default::default()
                })
                .collect(),
        )
    }

    #[test]
    fn loss_examples() {
        assert_eq!(aniso_loss(&[v(1.0, 1.0, 1.0)], 3.0).unwrap(), 0.0);
        assert_eq!(aniso_loss(&[v(1.0, 2.0, 6.0)], 3.0).unwrap(), 3.0);
        assert_eq!(aniso_loss(&[v(1.0, 1.0, 2.0), v(1.0, 1.0, 9.0)], 3.0).unwrap(), 3.0);
    }

    #[test]
    fn loss_errors() {
        assert_eq!(aniso_loss(&[], 3.0), Err(AnisoError::Empty));
        assert!(matches!(
            aniso_loss(&[v(1.0, 1.0, 1.0), v(1.0, 0.0, 1.0)], 3.0),
            Err(AnisoError::InvalidScale { index: 1, .. })
        ));
    }

    #[test]
    fn subgradient_examples() {
        assert_eq!(aniso_subgradient(&[v(1.0, 1.0, 1.0)], 3.0).unwrap()[0], Vector3::zeros());
        assert_eq!(aniso_subgradient(&[v(1.0, 2.0, 6.0)], 3.0).unwrap()[0], v(-6.0, 0.0, 1.0));
        assert_eq!(aniso_subgradient(&[v(1.0, 2.0, 3.0)], 3.0).unwrap()[0], Vector3::zeros());
    }

    #[test]
    fn subgradient_ties_use_lowest_index() {
        let g = aniso_subgradient(&[v(5.0, 1.0, 5.0)], 3.0).unwrap()[0];
        assert_eq!(g, v(1.0, -5.0, 0.0));
    }

    #[test]
    fn clamp_examples() {
        let (out, n) = clamp_scales(&scene_of(&[v(1.0, 2.0, 6.0)]), 3.0);
        assert_eq!(n, 1);
        let s = out.gaussians[0].scales();
        assert_eq!(s.x, 1.0);
        assert!((s.y - 2.0).abs() < 1e-15);
        assert!((s.z - 3.0).abs() < 1e-14);

        // ln(3) rounds up, so exp(ln 3) is one ulp above 3 and moves by one ulp in log space
        let input = scene_of(&[v(1.0, 2.0, 3.0), v(2.0, 2.0, 2.0)]);
        let (out, _) = clamp_scales(&input, 3.0);
        let s = out.gaussians[0].scales();
        assert_eq!(out.gaussians[0].log_scale.z, 3f64.ln().next_down());
        assert!((s.z - 3.0).abs() < 1e-15);
        assert_eq!(out.gaussians[1], input.gaussians[1]);
        assert_eq!(aniso_loss(&scene_scales(&out), 3.0).unwrap(), 0.0);
        let (again, n) = clamp_scales(&out, 3.0);
        assert_eq!((again, n), (out, 0));
        let (out, n) = clamp_scales(&scene_of(&[v(2.0, 2.0, 2.0)]), 1.0);
        assert_eq!(n, 0);
        assert_eq!(out.gaussians[0].scales(), v(2.0, 2.0, 2.0));
    }

    #[test]
    fn clamp_leaves_other_fields() {
        let mut g = Gaussian {
            log_scale: v(0.0, 3.0, -1.0),
            center: v(1.0, 2.0, 3.0),
            opacity_logit: 0.7,
            sh_dc: v(0.1, 0.2, 0.3),
            ..Default::default()
        };
        g.sh_rest[7] = 0.25;
        g.rotation = nalgebra::Quaternion::new(0.9, 0.1, 0.2, 0.3);
        let (out, _) = clamp_scales(&Scene::new(vec![g.clone()]), 2.0);
        let h = &out.gaussians[0];
        assert_eq!((h.center, h.rotation, h.opacity_logit, h.sh_dc, h.sh_rest), (g.center, g.rotation, g.opacity_logit, g.sh_dc, g.sh_rest));
        assert_eq!(h.log_scale.z, -1.0);
    }

    #[test]
    fn combined_examples() {
        let cfg = AnisoConfig { r: 3.0, lambda_aniso: 2.0 };
        assert_eq!(combined_loss(0.5, &[v(1.0, 1.0, 1.0)], &cfg).unwrap(), 0.5);
        assert_eq!(combined_loss(0.0, &[v(1.0, 2.0, 6.0)], &cfg).unwrap(), 6.0);
        let off = AnisoConfig { r: 3.0, lambda_aniso: 0.0 };
        assert_eq!(combined_loss(0.25, &[v(1.0, 1.0, 100.0)], &off).unwrap(), 0.25);
    }

    #[test]
    fn config_validation() {
        assert!(AnisoConfig::default().validate().is_ok());
        assert!(AnisoConfig { r: 0.5, lambda_aniso: 1.0 }.validate().is_err());
        assert!(AnisoConfig { r: 3.0, lambda_aniso: -1.0 }.validate().is_err());
    }

    fn triple() -> impl Strategy<Value = Vector3<f64>> {
        prop::array::uniform3(0.01..10.0f64).prop_map(Vector3::from)
    }

    proptest! {
        #[test]
        fn loss_permutation_invariant(mut set in prop::collection::vec(triple(), 1..20), seed in 0usize..6) {
            let r = 3.0;
            let before = aniso_loss(&set, r).unwrap();
            set.reverse();
            let perm = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]][seed];
            let permuted: Vec<_> = set.iter().map(|s| v(s[perm[0]], s[perm[1]], s[perm[2]])).collect();
            let after = aniso_loss(&permuted, r).unwrap();
            prop_assert!((before - after).abs() <= 1e-12 * before.max(1.0));
        }

        #[test]
        fn loss_scale_invariant(s in triple(), k in 0.01..100.0f64) {
            let a = aniso_loss(&[s], 3.0).unwrap();
            let b = aniso_loss(&[s * k], 3.0).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn clamp_idempotent_and_feasible(set in prop::collection::vec(triple(), 1..20), r in 1.0..5.0f64) {
            let scene = scene_of(&set);
            let (once, _) = clamp_scales(&scene, r);
            let (twice, n) = clamp_scales(&once, r);
            prop_assert_eq!(n, 0);
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(aniso_loss(&scene_scales(&once), r).unwrap(), 0.0);
            for (a, b) in scene.gaussians.iter().zip(&once.gaussians) {
                for i in 0..3 {
                    prop_assert!(b.log_scale[i] <= a.log_scale[i]);
                }
            }
        }
    }
}
