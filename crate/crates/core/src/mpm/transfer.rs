//! Particle/grid transfers and the grid momentum update.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::constitutive::{plastic_update, Constants};
use super::grid::{Grid, GridSpec};
use super::{Particle, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transfer {
    #[default]
    Pic,
    /// Affine particle-in-cell: particles carry a velocity gradient that is
    /// included in the momentum transfer.
    Apic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    /// Outgoing normal velocity is removed; tangential motion is free.
    #[default]
    Slip,
    /// All velocity is removed.
    Sticky,
}

/// Boundary conditions in face order `-x, +x, -y, +y, -z, +z`.
pub type Boundaries = [BoundaryCondition; 6];

/// Scatter buffers for one chunk of particles.
struct Accum {
    scalar: Vec<f64>,
    vector: Vec<Vector3<f64>>,
}

/// Runs `body` over the particles, reducing per-chunk node buffers in chunk
/// order. With one thread the particles scatter straight into one buffer.
fn scatter<F>(particles: &[Particle], spec: &GridSpec, threads: usize, body: F) -> Accum
where
    F: Fn(&Particle, &mut [f64], &mut [Vector3<f64>]) + Sync,
{
    let n = spec.node_count();
    let fresh = || Accum { scalar: vec![0.0; n], vector: vec![Vector3::zeros(); n] };
    if threads <= 1 || particles.len() < 2 {
        let mut acc = fresh();
        for p in particles {
            body(p, &mut acc.scalar, &mut acc.vector);
        }
        return acc;
    }
    let chunk = particles.len().div_ceil(threads);
    let parts: Vec<Accum> = particles
        .par_chunks(chunk)
        .map(|ps| {
            let mut acc = fresh();
            for p in ps {
                body(p, &mut acc.scalar, &mut acc.vector);
            }
            acc
        })
        .collect();
    let mut it = parts.into_iter();
    let mut total = it.next().unwrap_or_else(fresh);
    for part in it {
        total.scalar.par_iter_mut().zip(part.scalar.par_iter()).for_each(|(a, b)| *a += b);
        total.vector.par_iter_mut().zip(part.vector.par_iter()).for_each(|(a, b)| *a += b);
    }
    total
}

fn stencil(spec: &GridSpec, p: &Particle) -> super::grid::Stencil {
    // positions are kept inside the valid region by g2p and init
    spec.stencil(&p.position).expect("particle inside stencil-valid region")
}

/// Particle to grid: nodal mass, momentum and velocity.
pub fn p2g(particles: &[Particle], grid: &mut Grid, transfer: Transfer, threads: usize) {
    let spec = grid.spec;
    let acc = scatter(particles, &spec, threads, |p, mass, momentum| {
        let st = stencil(&spec, p);
        st.for_each(&spec, |node, a, b, c| {
            let wm = st.weight(a, b, c) * p.mass;
            mass[node] += wm;
            let mut v = p.velocity;
            if transfer == Transfer::Apic {
                v += p.affine * st.offset(&spec, &p.position, a, b, c);
            }
            momentum[node] += v * wm;
        });
    });
    grid.mass = acc.scalar;
    grid.momentum = acc.vector;
    for ((v, m), mv) in grid.velocity.iter_mut().zip(&grid.mass).zip(&grid.momentum) {
        *v = if *m > 0.0 { mv / *m } else { Vector3::zeros() };
    }
    grid.force.fill(Vector3::zeros());
}

/// Internal and gravity forces: `f_i = m_i g - sum_p V_p sigma_p grad w_ip`.
///
/// `V_p sigma_p` is evaluated as rest volume times Kirchhoff stress, which is
/// the same product in the current configuration.
pub fn grid_forces(particles: &[Particle], grid: &mut Grid, gravity: &Vector3<f64>, threads: usize) {
    let spec = grid.spec;
    let acc = scatter(particles, &spec, threads, |p, _, force| {
        if p.kirchhoff == Matrix3::zeros() {
            return;
        }
        let st = stencil(&spec, p);
        let vt = p.kirchhoff * p.volume;
        st.for_each(&spec, |node, a, b, c| {
            force[node] -= vt * st.gradient(a, b, c);
        });
    });
    for ((f, fi), m) in grid.force.iter_mut().zip(acc.vector).zip(&grid.mass) {
        *f = fi + gravity * *m;
    }
}

/// Explicit velocity update on loaded nodes, before boundary conditions.
pub fn advance_velocity(grid: &mut Grid, dt: f64) {
    for ((v, m), f) in grid.velocity.iter_mut().zip(&grid.mass).zip(&grid.force) {
        if *m > 0.0 {
            *v += f * (dt / *m);
        } else {
            *v = Vector3::zeros();
        }
    }
}

/// Applies the per-face boundary conditions to nodes in the boundary band.
pub fn apply_boundaries(grid: &mut Grid, bcs: &Boundaries) {
    let spec = grid.spec;
    let [nx, ny, nz] = spec.dims;
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let idx = spec.index(i, j, k);
                if grid.mass[idx] == 0.0 {
                    continue;
                }
                let v = &mut grid.velocity[idx];
                for (axis, n) in [i, j, k].into_iter().enumerate() {
                    let (low, high) = spec.is_boundary_node(axis, n);
                    for (face, outgoing) in [(2 * axis, low && v[axis] < 0.0), (2 * axis + 1, high && v[axis] > 0.0)] {
                        let in_band = if face % 2 == 0 { low } else { high };
                        match bcs[face] {
                            BoundaryCondition::Sticky if in_band => *v = Vector3::zeros(),
                            BoundaryCondition::Slip if outgoing => v[axis] = 0.0,
                            _ => {}
                        }
                    }
                }
            }
        }
    }
}

/// Velocity update followed by boundary conditions.
pub fn grid_update(grid: &mut Grid, dt: f64, bcs: &Boundaries) {
    advance_velocity(grid, dt);
    apply_boundaries(grid, bcs);
}

/// Grid to particle: interpolated velocity, velocity gradient and position.
/// Particles pushed out of the valid region are clamped back and flagged.
/// Returns the number of particles clamped in this call.
pub fn g2p(particles: &mut [Particle], grid: &Grid, dt: f64, transfer: Transfer, threads: usize) -> usize {
    let spec = grid.spec;
    let apic_scale = 4.0 / (spec.dx * spec.dx);
    let one = |p: &mut Particle| -> usize {
        let st = stencil(&spec, p);
        let mut v = Vector3::zeros();
        let mut grad = Matrix3::zeros();
        let mut affine = Matrix3::zeros();
        st.for_each(&spec, |node, a, b, c| {
            let vi = grid.velocity[node];
            let w = st.weight(a, b, c);
            v += vi * w;
            grad += vi * st.gradient(a, b, c).transpose();
            if transfer == Transfer::Apic {
                affine += vi * st.offset(&spec, &p.position, a, b, c).transpose() * (w * apic_scale);
            }
        });
        p.velocity = v;
        p.velocity_gradient = grad;
        p.affine = affine;
        let (x, moved) = spec.clamp(&(p.position + v * dt));
        p.position = x;
        if moved {
            p.escaped = true;
        }
        moved as usize
    };
    if threads <= 1 {
        particles.iter_mut().map(one).sum()
    } else {
        particles.par_iter_mut().map(one).sum()
    }
}

/// Advances elastic and plastic deformation gradients from the velocity
/// gradient stored by [`g2p`], refreshing the cached Kirchhoff stress.
pub fn update_f(particles: &mut [Particle], dt: f64, k: &Constants, threads: usize) -> Result<(), SimError> {
    let one = |(i, p): (usize, &mut Particle)| -> Result<(), SimError> {
        let out = plastic_update(&p.f_elastic, &p.f_plastic, &p.velocity_gradient, dt, k)
            .map_err(|d| SimError::Degenerate { particle: i, det: d.det })?;
        p.deformation = (Matrix3::identity() + p.velocity_gradient * dt) * p.deformation;
        p.f_elastic = out.f_elastic;
        p.f_plastic = out.f_plastic;
        p.kirchhoff = out.kirchhoff;
        Ok(())
    };
    if threads <= 1 {
        particles.iter_mut().enumerate().try_for_each(one)
    } else {
        particles.par_iter_mut().enumerate().try_for_each(one)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpm::constitutive::MaterialParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec() -> GridSpec {
        GridSpec { origin: Vector3::zeros(), dx: 0.1, dims: [16, 16, 16] }
    }

    fn particle(x: Vector3<f64>, v: Vector3<f64>, m: f64) -> Particle {
        Particle { mass: m, volume: m / 2000.0, position: x, velocity: v, ..Particle::default() }
    }

    fn random_particles(n: usize, seed: u64) -> Vec<Particle> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x = Vector3::from_fn(|_, _| rng.gen_range(0.1..1.4));
                let v = Vector3::from_fn(|_, _| rng.gen_range(-2.0..2.0));
                particle(x, v, rng.gen_range(0.1..3.0))
            })
            .collect()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn single_particle_on_node() {
        let s = spec();
        let mut g = Grid::new(s);
        let x = s.node_position(5, 6, 7);
        p2g(&[particle(x, Vector3::x(), 2.0)], &mut g, Transfer::Pic, 1);
        assert!((g.total_mass() - 2.0).abs() < 1e-15);
        assert!((g.velocity[s.index(5, 6, 7)] - Vector3::x()).norm() < 1e-15);
    }

    #[test]
    fn symmetric_pair_cancels() {
        let s = spec();
        let mut g = Grid::new(s);
        let c = s.node_position(8, 8, 8);
        let d = Vector3::new(0.03, 0.0, 0.0);
        let u = Vector3::new(1.0, -0.5, 0.25);
        p2g(&[particle(c + d, u, 1.0), particle(c - d, -u, 1.0)], &mut g, Transfer::Pic, 1);
        assert!(g.momentum[s.index(8, 8, 8)].norm() < 1e-15);
    }

    #[test]
    fn p2g_conserves_mass_and_momentum() {
        let ps = random_particles(100, 1);
        for threads in [1, 3] {
            let mut g = Grid::new(spec());
            p2g(&ps, &mut g, Transfer::Pic, threads);
            let m: f64 = ps.iter().map(|p| p.mass).sum();
            let mv: Vector3<f64> = ps.iter().map(|p| p.velocity * p.mass).sum();
            assert!(rel(g.total_mass(), m) < 1e-12);
            for a in 0..3 {
                assert!(rel(g.total_momentum()[a], mv[a]) < 1e-12);
                assert!(rel(g.velocity_momentum()[a], mv[a]) < 1e-12);
            }
        }
    }

    #[test]
    fn gravity_only_forces_and_update() {
        let ps = random_particles(50, 2);
        let mut g = Grid::new(spec());
        p2g(&ps, &mut g, Transfer::Pic, 1);
        let gravity = Vector3::new(0.0, 0.0, -9.8);
        grid_forces(&ps, &mut g, &gravity, 1);
        for (f, m) in g.force.iter().zip(&g.mass) {
            assert_eq!(*f, gravity * *m);
        }
        let before = g.velocity.clone();
        advance_velocity(&mut g, 1e-3);
        for ((v, b), m) in g.velocity.iter().zip(&before).zip(&g.mass) {
            if *m > 0.0 {
                assert!((v - b - Vector3::new(0.0, 0.0, -0.0098)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_force_leaves_velocity() {
        let ps = random_particles(50, 4);
        let mut g = Grid::new(spec());
        p2g(&ps, &mut g, Transfer::Pic, 1);
        grid_forces(&ps, &mut g, &Vector3::zeros(), 1);
        let before = g.velocity.clone();
        advance_velocity(&mut g, 1e-3);
        assert_eq!(before, g.velocity);
    }

    #[test]
    fn grid_momentum_change_equals_impulse() {
        let mut ps = random_particles(200, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for p in &mut ps {
            let a = Matrix3::from_fn(|_, _| rng.gen_range(-1e5..1e5));
            p.kirchhoff = (a + a.transpose()) * 0.5;
        }
        let mut g = Grid::new(spec());
        p2g(&ps, &mut g, Transfer::Pic, 1);
        grid_forces(&ps, &mut g, &Vector3::new(0.0, 0.0, -9.8), 1);
        let before = g.velocity_momentum();
        let impulse: Vector3<f64> = g.force.iter().sum::<Vector3<f64>>() * 1e-4;
        advance_velocity(&mut g, 1e-4);
        let change = g.velocity_momentum() - before;
        assert!((change - impulse).norm() <= 1e-12 * impulse.norm().max(before.norm()));
    }

    #[test]
    fn uniform_stress_forces_cancel_in_interior() {
        // a filled block of particles under hydrostatic stress: net internal
        // force vanishes, only the block's surface nodes carry force
        let s = spec();
        let mut ps = Vec::new();
        for i in 0..16 {
            for j in 0..16 {
                for k in 0..16 {
                    let x = Vector3::new(0.4, 0.4, 0.4) + Vector3::new(i as f64, j as f64, k as f64) * 0.05 + Vector3::repeat(0.025);
                    let mut p = particle(x, Vector3::zeros(), 1.0);
                    p.kirchhoff = Matrix3::identity() * -1e4;
                    ps.push(p);
                }
            }
        }
        let mut g = Grid::new(s);
        p2g(&ps, &mut g, Transfer::Pic, 1);
        grid_forces(&ps, &mut g, &Vector3::zeros(), 1);
        let net: Vector3<f64> = g.force.iter().sum();
        let scale: f64 = g.force.iter().map(|f| f.norm()).sum();
        assert!(net.norm() < 1e-9 * scale);
        let center = g.force[s.index(8, 8, 8)].norm();
        let edge = g.force[s.index(4, 8, 8)].norm();
        assert!(center < 1e-9 * edge, "{center} {edge}");
    }

    #[test]
    fn slip_removes_outgoing_normal_only() {
        let s = spec();
        let mut g = Grid::new(s);
        let floor = s.index(7, 7, 1);
        let top = s.index(7, 7, 14);
        g.mass[floor] = 1.0;
        g.mass[top] = 1.0;
        g.velocity[floor] = Vector3::new(1.0, 2.0, -3.0);
        g.velocity[top] = Vector3::new(1.0, 2.0, -3.0);
        let bcs = [BoundaryCondition::Slip; 6];
        apply_boundaries(&mut g, &bcs);
        assert_eq!(g.velocity[floor], Vector3::new(1.0, 2.0, 0.0));
        assert_eq!(g.velocity[top], Vector3::new(1.0, 2.0, -3.0));
        let mut sticky = bcs;
        sticky[4] = BoundaryCondition::Sticky;
        g.velocity[floor] = Vector3::new(1.0, 2.0, 3.0);
        apply_boundaries(&mut g, &sticky);
        assert_eq!(g.velocity[floor], Vector3::zeros());
    }

    #[test]
    fn uniform_grid_velocity_reaches_particles() {
        let s = spec();
        let mut g = Grid::new(s);
        let u = Vector3::new(0.3, -0.2, 0.1);
        g.velocity.fill(u);
        let mut ps = random_particles(100, 6);
        g2p(&mut ps, &g, 0.0, Transfer::Pic, 1);
        for p in &ps {
            assert!((p.velocity - u).norm() < 1e-15);
            assert!(p.velocity_gradient.amax() < 1e-12);
        }
    }

    #[test]
    fn g2p_position_rule() {
        let s = spec();
        let mut g = Grid::new(s);
        g.velocity.fill(Vector3::new(0.0, 0.0, -0.0098));
        let x = s.node_position(7, 7, 7) + Vector3::new(0.013, 0.021, 0.002);
        let mut ps = vec![particle(x, Vector3::zeros(), 1.0)];
        g2p(&mut ps, &g, 1e-3, Transfer::Pic, 1);
        assert!((ps[0].position - x - Vector3::new(0.0, 0.0, -9.8e-6)).norm() < 1e-15);
        g.velocity.fill(Vector3::zeros());
        let before = ps[0].position;
        g2p(&mut ps, &g, 1e-3, Transfer::Pic, 1);
        assert_eq!(ps[0].position, before);
    }

    #[test]
    fn escaped_particles_are_clamped() {
        let s = spec();
        let mut g = Grid::new(s);
        g.velocity.fill(Vector3::new(0.0, 0.0, -100.0));
        let mut ps = vec![particle(s.node_position(5, 5, 2), Vector3::zeros(), 1.0)];
        assert_eq!(g2p(&mut ps, &g, 1e-2, Transfer::Pic, 1), 1);
        assert!(ps[0].escaped);
        assert!(s.is_valid(&ps[0].position));
    }

    #[test]
    fn linear_velocity_field_gives_exact_gradient() {
        let s = spec();
        let mut g = Grid::new(s);
        let a = 2.5;
        for i in 0..16 {
            for j in 0..16 {
                for k in 0..16 {
                    g.velocity[s.index(i, j, k)] = s.node_position(i, j, k) * a;
                }
            }
        }
        let mut ps = random_particles(20, 7);
        let olds: Vec<Matrix3<f64>> = ps.iter().map(|p| p.f_elastic).collect();
        g2p(&mut ps, &g, 1e-4, Transfer::Pic, 1);
        for p in &ps {
            assert!((p.velocity_gradient - Matrix3::identity() * a).amax() < 1e-11);
        }
        // before projection the trial gradient is (1 + dt a) F_old
        for (p, f) in ps.iter().zip(olds) {
            let trial = (Matrix3::identity() + p.velocity_gradient * 1e-4) * f;
            assert!((trial - f * (1.0 + 1e-4 * a)).amax() < 1e-14);
        }
    }

    #[test]
    fn zero_velocity_keeps_deformation() {
        let k = MaterialParams::default().constants();
        let mut ps = random_particles(10, 8);
        for p in &mut ps {
            p.f_elastic = Matrix3::new(0.990, 0.0002, 0.0, 0.0, 0.991, 0.0001, 0.0, 0.0, 0.989);
        }
        let before: Vec<_> = ps.iter().map(|p| p.f_elastic).collect();
        update_f(&mut ps, 1e-3, &k, 1).unwrap();
        for (p, f) in ps.iter().zip(before) {
            assert_eq!(p.f_elastic, f);
        }
    }

    #[test]
    fn apic_preserves_affine_field() {
        // a rigid rotation is represented exactly by the affine transfer
        let s = spec();
        let omega = Vector3::new(0.0, 0.0, 1.5);
        let c = Vector3::repeat(0.8);
        let mut ps = random_particles(300, 10);
        for p in &mut ps {
            p.velocity = omega.cross(&(p.position - c));
            p.affine = omega.cross_matrix();
        }
        let mut g = Grid::new(s);
        p2g(&ps, &mut g, Transfer::Apic, 1);
        let mut out = ps.clone();
        g2p(&mut out, &g, 0.0, Transfer::Apic, 1);
        for (a, b) in ps.iter().zip(&out) {
            assert!((a.velocity - b.velocity).norm() < 1e-9);
        }
    }
}
