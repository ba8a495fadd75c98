//! Collapses a 1 x 1 x 1.5 m sand column on a slip floor and prints the
//! maximum particle speed as it settles.
//!
//! cargo run --release -p splatslide --example column_collapse [-- --apic]

use std::time::Instant;

use nalgebra::Vector3;
use splatslide::mpm::{MaterialParams, Particle, SimConfig, Simulation, Transfer};

fn main() {
    let params = MaterialParams::default();
    let spacing = 1.0 / 22.0;
    let dx = 2.0 * spacing;
    let floor = 2.0 * dx;
    let cfg = SimConfig {
        dx,
        domain_min: [-2.5, -2.5, 0.0],
        domain_max: [2.5, 2.5, 2.0],
        transfer: if std::env::args().any(|a| a == "--apic") { Transfer::Apic } else { Transfer::Pic },
        ..SimConfig::default()
    };
    let volume = spacing.powi(3);
    let mut particles = Vec::new();
    for i in 0..22 {
        for j in 0..22 {
            for k in 0..33 {
                let x = Vector3::new(-0.5, -0.5, floor) + Vector3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * spacing;
                particles.push(Particle {
                    mass: params.density * volume,
                    volume,
                    position: x,
                    source_index: Some(particles.len() as u32),
                    ..Particle::default()
                });
            }
        }
    }
    let mut sim = Simulation::new(cfg, params, particles, 1).expect("valid setup");
    println!("{} particles, dt = {:.3e} s", sim.particles.len(), sim.dt);
    let start = Instant::now();
    while sim.time() < 3.0 {
        sim.step().expect("step");
        if sim.step_index.is_multiple_of(500) {
            let top = sim.particles.iter().map(|p| p.position.z).fold(0.0, f64::max) - floor;
            let reach = sim.particles.iter().map(|p| p.position.x.abs().max(p.position.y.abs())).fold(0.0, f64::max);
            println!(
                "t = {:.3} s  max speed {:.4} m/s  height {:.3} m  reach {:.3} m  ({:.1} s wall)",
                sim.time(),
                sim.max_speed(),
                top,
                reach,
                start.elapsed().as_secs_f64()
            );
        }
    }
}
