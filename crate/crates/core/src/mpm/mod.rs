//! Explicit material point method for dry granular flow.
//!
//! Each step runs particle-to-grid transfer, grid forces, the grid velocity
//! update with boundary conditions, grid-to-particle transfer, and the
//! deformation-gradient update with Drucker-Prager projection.

pub mod checkpoint;
pub mod constitutive;
pub mod grid;
pub mod transfer;

use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointEntry, SimManifest};
pub use constitutive::{hencky, kirchhoff, project_strain, stress, yield_value, MaterialParams};
pub use grid::{Grid, GridSpec, Stencil};
pub use transfer::{
    advance_velocity, apply_boundaries, g2p, grid_forces, grid_update, p2g, update_f, Boundaries, BoundaryCondition,
    Transfer,
};

use crate::scene::Scene;
use constitutive::Constants;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid material: {0}")]
    Material(String),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("particle {particle}: degenerate elastic deformation (det = {det})")]
    Degenerate { particle: usize, det: f64 },
    #[error("non-finite state at step {step} in particle {particle}")]
    NonFinite { step: u64, particle: usize },
    #[error("step {step}: {source}")]
    AtStep {
        step: u64,
        #[source]
        source: Box<SimError>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub mass: f64,
    /// Rest volume.
    pub volume: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub f_elastic: Matrix3<f64>,
    pub f_plastic: Matrix3<f64>,
    /// Total deformation gradient, tracked independently of the split.
    pub deformation: Matrix3<f64>,
    pub source_index: Option<u32>,
    /// Kirchhoff stress of `f_elastic`.
    pub kirchhoff: Matrix3<f64>,
    /// Velocity gradient from the latest grid-to-particle transfer.
    pub velocity_gradient: Matrix3<f64>,
    /// Affine velocity used by the APIC transfer.
    pub affine: Matrix3<f64>,
    /// Set once the particle has been clamped back into the domain.
    pub escaped: bool,
}

impl Default for Particle {
    fn default() -> Self {
        Self {
            mass: 0.0,
            volume: 0.0,
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
            f_elastic: Matrix3::identity(),
            f_plastic: Matrix3::identity(),
            deformation: Matrix3::identity(),
            source_index: None,
            kirchhoff: Matrix3::zeros(),
            velocity_gradient: Matrix3::zeros(),
            affine: Matrix3::zeros(),
            escaped: false,
        }
    }
}

impl Particle {
    /// Recomputes the cached Kirchhoff stress after `f_elastic` was set directly.
    pub fn refresh_stress(&mut self, params: &MaterialParams) -> Result<(), SimError> {
        let h = hencky(&self.f_elastic).map_err(|d| SimError::Degenerate { particle: 0, det: d.det })?;
        let (mu, lambda) = params.lame();
        self.kirchhoff = kirchhoff(&h.u, &h.eps, mu, lambda);
        Ok(())
    }

    fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).all(|v| v.is_finite())
            && self.f_elastic.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Grid spacing, m.
    pub dx: f64,
    /// Time step, s. Derived from the CFL bound when absent.
    pub dt: Option<f64>,
    pub n_steps: u64,
    /// Grid extent. Material must start at least two cells inside it.
    pub domain_min: [f64; 3],
    pub domain_max: [f64; 3],
    pub boundaries: Boundaries,
    pub cfl_max: f64,
    pub checkpoint_every: u64,
    pub transfer: Transfer,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dx: 0.1,
            dt: None,
            n_steps: 1000,
            domain_min: [0.0; 3],
            domain_max: [1.0; 3],
            boundaries: [BoundaryCondition::Slip; 6],
            cfl_max: 0.4,
            checkpoint_every: 100,
            transfer: Transfer::Pic,
        }
    }
}

impl SimConfig {
    /// Validates the config against the material and returns the time step.
    pub fn resolve_dt(&self, params: &MaterialParams) -> Result<f64, SimError> {
        params.validate()?;
        let bad = |m: String| Err(SimError::Config(m));
        if !(self.dx > 0.0 && self.dx.is_finite()) {
            return bad(format!("dx must be positive, got {}", self.dx));
        }
        if !(self.cfl_max > 0.0 && self.cfl_max <= 1.0) {
            return bad(format!("cfl_max must lie in (0, 1], got {}", self.cfl_max));
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be at least 1".into());
        }
        for a in 0..3 {
            let extent = self.domain_max[a] - self.domain_min[a];
            if !(extent >= 4.0 * self.dx) {
                return bad(format!("domain axis {a} spans {extent} m, need at least 4 dx"));
            }
        }
        let limit = self.cfl_max * self.dx / params.wave_speed();
        match self.dt {
            None => Ok(limit),
            Some(dt) if dt > 0.0 && dt <= limit => Ok(dt),
            Some(dt) => bad(format!("dt = {dt} violates the CFL bound {limit} (cfl_max * dx / sqrt(E / rho))")),
        }
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec::covering(&Vector3::from(self.domain_min), &Vector3::from(self.domain_max), self.dx)
    }
}

#[derive(Debug, Clone)]
pub struct ParticleInit {
    pub particles: Vec<Particle>,
    /// Gaussians outside the stencil-valid region, not turned into particles.
    pub rejected: usize,
}

/// One particle per Gaussian center. Gaussians before `filled_from` are
/// surface splats with volume `dx³ / 8`; the rest are fill seeds with volume
/// `h_fill³`. Source indices refer to positions in `scene`.
pub fn init_particles(
    scene: &Scene,
    filled_from: usize,
    h_fill: f64,
    params: &MaterialParams,
    spec: &GridSpec,
) -> Result<ParticleInit, SimError> {
    params.validate()?;
    if !(h_fill > 0.0) {
        return Err(SimError::Config(format!("h_fill must be positive, got {h_fill}")));
    }
    if scene.len() >= u32::MAX as usize {
        return Err(SimError::Config("too many Gaussians for 32-bit source indices".into()));
    }
    let mut particles = Vec::with_capacity(scene.len());
    let mut rejected = 0;
    for (i, g) in scene.gaussians.iter().enumerate() {
        if !spec.is_valid(&g.center) {
            rejected += 1;
            continue;
        }
        let volume = if i < filled_from { spec.dx.powi(3) / 8.0 } else { h_fill.powi(3) };
        particles.push(Particle {
            mass: params.density * volume,
            volume,
            position: g.center,
            source_index: Some(i as u32),
            ..Particle::default()
        });
    }
    if rejected > 0 {
        log::warn!("{rejected} Gaussians lie outside the simulation domain and stay static");
    }
    Ok(ParticleInit { particles, rejected })
}

pub struct Simulation {
    pub params: MaterialParams,
    pub config: SimConfig,
    pub dt: f64,
    pub grid: Grid,
    pub particles: Vec<Particle>,
    pub step_index: u64,
    constants: Constants,
    pool: Option<Arc<rayon::ThreadPool>>,
    threads: usize,
}

impl Simulation {
    /// `threads == 1` selects the serial reference path.
    pub fn new(config: SimConfig, params: MaterialParams, particles: Vec<Particle>, threads: usize) -> Result<Self, SimError> {
        let dt = config.resolve_dt(&params)?;
        let spec = config.grid_spec();
        if let Some(i) = particles.iter().position(|p| !spec.is_valid(&p.position)) {
            return Err(SimError::Config(format!("particle {i} lies outside the stencil-valid region")));
        }
        if let Some(i) = particles.iter().position(|p| !(p.mass > 0.0 && p.volume > 0.0)) {
            return Err(SimError::Config(format!("particle {i} has non-positive mass or volume")));
        }
        let threads = threads.max(1);
        let pool = if threads > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| SimError::Config(format!("thread pool: {e}")))?;
            Some(Arc::new(pool))
        } else {
            None
        };
        Ok(Self {
            constants: params.constants(),
            params,
            config,
            dt,
            grid: Grid::new(spec),
            particles,
            step_index: 0,
            pool,
            threads,
        })
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.dt
    }

    pub fn step(&mut self) -> Result<(), SimError> {
        match self.pool.clone() {
            Some(pool) => pool.install(|| self.step_inner()),
            None => self.step_inner(),
        }
    }

    fn step_inner(&mut self) -> Result<(), SimError> {
        let step = self.step_index;
        let (dt, threads, transfer) = (self.dt, self.threads, self.config.transfer);
        p2g(&self.particles, &mut self.grid, transfer, threads);
        grid_forces(&self.particles, &mut self.grid, &self.params.gravity(), threads);
        grid_update(&mut self.grid, dt, &self.config.boundaries);
        let clamped = g2p(&mut self.particles, &self.grid, dt, transfer, threads);
        if clamped > 0 {
            log::debug!("step {step}: {clamped} particles clamped to the domain");
        }
        update_f(&mut self.particles, dt, &self.constants, threads)
            .map_err(|e| SimError::AtStep { step, source: Box::new(e) })?;
        if let Some(particle) = self.particles.iter().position(|p| !p.is_finite()) {
            return Err(SimError::NonFinite { step, particle });
        }
        self.step_index += 1;
        Ok(())
    }

    /// Advances `n_steps`, handing a checkpoint to `sink` at the start when
    /// the current step is a multiple of `every`, after every such step, and
    /// at the end.
    pub fn run<E: From<SimError>>(
        &mut self,
        n_steps: u64,
        every: u64,
        mut sink: impl FnMut(&Checkpoint) -> Result<(), E>,
    ) -> Result<(), E> {
        let every = every.max(1);
        let end = self.step_index + n_steps;
        let mut last = None;
        if self.step_index.is_multiple_of(every) {
            sink(&self.checkpoint())?;
            last = Some(self.step_index);
        }
        while self.step_index < end {
            self.step()?;
            if self.step_index.is_multiple_of(every) {
                sink(&self.checkpoint())?;
                last = Some(self.step_index);
            }
        }
        if last != Some(self.step_index) {
            sink(&self.checkpoint())?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step_index,
            positions: self.particles.iter().map(|p| p.position).collect(),
            velocities: self.particles.iter().map(|p| p.velocity).collect(),
            sources: self.particles.iter().map(|p| p.source_index).collect(),
        }
    }

    pub fn max_speed(&self) -> f64 {
        self.particles.iter().map(|p| p.velocity.norm()).fold(0.0, f64::max)
    }

    pub fn escaped(&self) -> usize {
        self.particles.iter().filter(|p| p.escaped).count()
    }
}
