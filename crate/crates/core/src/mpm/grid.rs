//! Background grid and quadratic B-spline interpolation stencils.

use nalgebra::Vector3;

/// Nodes within this many layers of a face are boundary nodes.
pub const BOUNDARY_BAND: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: Vector3<f64>,
    pub dx: f64,
    /// Node counts per axis.
    pub dims: [usize; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutOfStencil {
    pub position: Vector3<f64>,
}

impl GridSpec {
    /// Smallest grid with spacing `dx` whose nodes span `[lo, hi]`.
    pub fn covering(lo: &Vector3<f64>, hi: &Vector3<f64>, dx: f64) -> Self {
        let dims = [0, 1, 2].map(|a| ((hi[a] - lo[a]) / dx - 1e-9).ceil().max(0.0) as usize + 1);
        Self { origin: *lo, dx, dims }
    }

    pub fn node_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin + Vector3::new(i as f64, j as f64, k as f64) * self.dx
    }

    /// Position in cell units relative to the origin.
    #[inline]
    pub fn cell_coords(&self, x: &Vector3<f64>) -> Vector3<f64> {
        (x - self.origin) / self.dx
    }

    /// Particles must stay within cell coordinates `[1, n - 2]` on every axis
    /// so their 3x3x3 stencil lies inside the grid.
    pub fn is_valid(&self, x: &Vector3<f64>) -> bool {
        let c = self.cell_coords(x);
        (0..3).all(|a| c[a] >= 1.0 && c[a] <= (self.dims[a] as f64 - 2.0))
    }

    /// Clamps into the valid region. Returns the clamped point and whether it
    /// moved.
    pub fn clamp(&self, x: &Vector3<f64>) -> (Vector3<f64>, bool) {
        let mut out = *x;
        let mut moved = false;
        for a in 0..3 {
            let lo = self.origin[a] + self.dx;
            let hi = self.origin[a] + (self.dims[a] as f64 - 2.0) * self.dx;
            // the float bounds can round outside the valid cell range; step inward
            let lo = if (lo - self.origin[a]) / self.dx < 1.0 { lo.next_up() } else { lo };
            let hi = if (hi - self.origin[a]) / self.dx > self.dims[a] as f64 - 2.0 { hi.next_down() } else { hi };
            if !(out[a] >= lo) {
                out[a] = lo;
                moved = true;
            } else if out[a] > hi {
                out[a] = hi;
                moved = true;
            }
        }
        (out, moved)
    }

    pub fn is_boundary_node(&self, axis: usize, index: usize) -> (bool, bool) {
        (index < BOUNDARY_BAND, index + BOUNDARY_BAND >= self.dims[axis])
    }

    pub fn stencil(&self, x: &Vector3<f64>) -> Result<Stencil, OutOfStencil> {
        if !self.is_valid(x) {
            return Err(OutOfStencil { position: *x });
        }
        let c = self.cell_coords(x);
        let mut base = [0usize; 3];
        let mut w = [[0.0; 3]; 3];
        let mut dw = [[0.0; 3]; 3];
        for a in 0..3 {
            let b = (c[a] - 0.5).floor();
            base[a] = b as usize;
            let (wa, da) = bspline(c[a] - b);
            w[a] = wa;
            dw[a] = da.map(|d| d / self.dx);
        }
        Ok(Stencil { base, w, dw })
    }
}

/// Quadratic B-spline weights and derivatives (per cell unit) at offset
/// `fx` in `[0.5, 1.5)` from the first stencil node.
#[inline]
pub fn bspline(fx: f64) -> ([f64; 3], [f64; 3]) {
    let w = [0.5 * (1.5 - fx).powi(2), 0.75 - (fx - 1.0).powi(2), 0.5 * (fx - 0.5).powi(2)];
    let dw = [fx - 1.5, -2.0 * (fx - 1.0), fx - 0.5];
    (w, dw)
}

/// Separable 3x3x3 interpolation stencil of one particle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub base: [usize; 3],
    pub w: [[f64; 3]; 3],
    /// Per-axis weight derivatives in physical units.
    pub dw: [[f64; 3]; 3],
}

impl Stencil {
    #[inline]
    pub fn weight(&self, a: usize, b: usize, c: usize) -> f64 {
        self.w[0][a] * self.w[1][b] * self.w[2][c]
    }

    #[inline]
    pub fn gradient(&self, a: usize, b: usize, c: usize) -> Vector3<f64> {
        Vector3::new(
            self.dw[0][a] * self.w[1][b] * self.w[2][c],
            self.w[0][a] * self.dw[1][b] * self.w[2][c],
            self.w[0][a] * self.w[1][b] * self.dw[2][c],
        )
    }

    /// Visits the 27 nodes as `(node index, (a, b, c))`.
    #[inline]
    pub fn for_each(&self, spec: &GridSpec, mut f: impl FnMut(usize, usize, usize, usize)) {
        for a in 0..3 {
            for b in 0..3 {
                let row = spec.index(self.base[0] + a, self.base[1] + b, self.base[2]);
                for c in 0..3 {
                    f(row + c, a, b, c);
                }
            }
        }
    }

    /// Node offset from the particle, `x_i - x_p`.
    #[inline]
    pub fn offset(&self, spec: &GridSpec, x: &Vector3<f64>, a: usize, b: usize, c: usize) -> Vector3<f64> {
        spec.node_position(self.base[0] + a, self.base[1] + b, self.base[2] + c) - x
    }
}

/// Per-node grid state.
#[derive(Debug, Clone)]
pub struct Grid {
    pub spec: GridSpec,
    pub mass: Vec<f64>,
    pub momentum: Vec<Vector3<f64>>,
    pub velocity: Vec<Vector3<f64>>,
    pub force: Vec<Vector3<f64>>,
}

impl Grid {
    pub fn new(spec: GridSpec) -> Self {
        let n = spec.node_count();
        Self {
            spec,
            mass: vec![0.0; n],
            momentum: vec![Vector3::zeros(); n],
            velocity: vec![Vector3::zeros(); n],
            force: vec![Vector3::zeros(); n],
        }
    }

    pub fn clear(&mut self) {
        self.mass.fill(0.0);
        self.momentum.fill(Vector3::zeros());
        self.velocity.fill(Vector3::zeros());
        self.force.fill(Vector3::zeros());
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn total_momentum(&self) -> Vector3<f64> {
        self.momentum.iter().sum()
    }

    /// Momentum implied by the current nodal velocities.
    pub fn velocity_momentum(&self) -> Vector3<f64> {
        self.mass.iter().zip(&self.velocity).map(|(m, v)| *m * v).sum()
    }
}
