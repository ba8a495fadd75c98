//! Triangle surface used as the top boundary of the fill region.

use std::io::BufRead;
use std::path::Path;

use nalgebra::Vector3;

use super::FillError;
use crate::scene::Scene;
use crate::spatial::PointIndex;

type V3 = Vector3<f64>;

/// Closest point to `p` on triangle `(a, b, c)`.
///
/// Voronoi-region walk over vertices, edges and face.
pub fn closest_point_on_triangle(p: &V3, a: &V3, b: &V3, c: &V3) -> V3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: V3,
    max: V3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: V3::repeat(f64::INFINITY),
            max: V3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &V3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn dist2(&self, p: &V3) -> f64 {
        let mut d = 0.0;
        for i in 0..3 {
            let v = if p[i] < self.min[i] {
                self.min[i] - p[i]
            } else if p[i] > self.max[i] {
                p[i] - self.max[i]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }
}

#[derive(Debug, Clone)]
enum BvhNode {
    Leaf { bounds: Aabb, start: u32, end: u32 },
    Inner { bounds: Aabb, left: u32, right: u32 },
}

impl BvhNode {
    fn bounds(&self) -> &Aabb {
        match self {
            BvhNode::Leaf { bounds, .. } | BvhNode::Inner { bounds, .. } => bounds,
        }
    }
}

const LEAF_SIZE: usize = 4;

/// Bounding-volume hierarchy over triangles for exact nearest-point queries.
#[derive(Debug, Clone)]
struct Bvh {
    nodes: Vec<BvhNode>,
    tris: Vec<u32>,
}

impl Bvh {
    fn build(mesh: &SurfaceMeshData) -> Self {
        let mut tris: Vec<u32> = (0..mesh.triangles.len() as u32).collect();
        let centroids: Vec<V3> = mesh
            .triangles
            .iter()
            .map(|t| (mesh.vertices[t[0] as usize] + mesh.vertices[t[1] as usize] + mesh.vertices[t[2] as usize]) / 3.0)
            .collect();
        let mut nodes = Vec::new();
        if !tris.is_empty() {
            let n = tris.len();
            Self::build_rec(mesh, &centroids, &mut tris, 0, n, &mut nodes);
        }
        Self { nodes, tris }
    }

    fn build_rec(
        mesh: &SurfaceMeshData,
        centroids: &[V3],
        tris: &mut [u32],
        start: usize,
        end: usize,
        nodes: &mut Vec<BvhNode>,
    ) -> u32 {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &t in &tris[start..end] {
            for &v in &mesh.triangles[t as usize] {
                bounds.grow(&mesh.vertices[v as usize]);
            }
            cbounds.grow(&centroids[t as usize]);
        }
        let id = nodes.len() as u32;
        if end - start <= LEAF_SIZE {
            nodes.push(BvhNode::Leaf {
                bounds,
                start: start as u32,
                end: end as u32,
            });
            return id;
        }
        let extent = cbounds.max - cbounds.min;
        let axis = extent.imax();
        let mid = (start + end) / 2;
        tris[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a as usize][axis]
                .total_cmp(&centroids[b as usize][axis])
                .then(a.cmp(&b))
        });
        nodes.push(BvhNode::Leaf {
            bounds,
            start: 0,
            end: 0,
        });
        let left = Self::build_rec(mesh, centroids, tris, start, mid, nodes);
        let right = Self::build_rec(mesh, centroids, tris, mid, end, nodes);
        nodes[id as usize] = BvhNode::Inner { bounds, left, right };
        id
    }
}

#[derive(Debug, Clone)]
struct SurfaceMeshData {
    vertices: Vec<V3>,
    triangles: Vec<[u32; 3]>,
}

/// Triangle mesh with acceleration structures for distance and vertical-ray
/// queries.
#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    data: SurfaceMeshData,
    bvh: Bvh,
    columns: ColumnGrid,
}

/// Nearest point on the mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    pub distance: f64,
    pub point: V3,
    pub triangle: usize,
}

impl SurfaceMesh {
    /// Builds a mesh, dropping zero-area triangles. Fails on out-of-range
    /// indices or non-finite vertices.
    pub fn new(vertices: Vec<V3>, triangles: Vec<[u32; 3]>) -> Result<Self, FillError> {
        if let Some(v) = vertices.iter().find(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(FillError::Mesh(format!("non-finite vertex {v:?}")));
        }
        let n = vertices.len() as u32;
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|i| *i >= n)) {
            return Err(FillError::Mesh(format!(
                "triangle {t:?} references a vertex outside 0..{n}"
            )));
        }
        let triangles: Vec<[u32; 3]> = triangles
            .into_iter()
            .filter(|t| {
                let [a, b, c] = t.map(|i| vertices[i as usize]);
                (b - a).cross(&(c - a)).norm_squared() > 0.0
            })
            .collect();
        let data = SurfaceMeshData { vertices, triangles };
        let bvh = Bvh::build(&data);
        let columns = ColumnGrid::build(&data);
        Ok(Self { data, bvh, columns })
    }

    pub fn vertices(&self) -> &[V3] {
        &self.data.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.data.triangles
    }

    pub fn is_empty(&self) -> bool {
        self.data.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [V3; 3] {
        self.data.triangles[t].map(|i| self.data.vertices[i as usize])
    }

    pub fn max_z(&self) -> Option<f64> {
        self.data
            .triangles
            .iter()
            .flat_map(|t| t.iter())
            .map(|&i| self.data.vertices[i as usize].z)
            .reduce(f64::max)
    }

    /// Exact minimum point-to-triangle distance with its witness point. Among
    /// equidistant triangles the lowest index wins.
    pub fn nearest(&self, p: &V3) -> Option<SurfaceHit> {
        if self.bvh.nodes.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, u32::MAX, V3::zeros());
        let mut stack = vec![0u32];
        while let Some(n) = stack.pop() {
            let node = &self.bvh.nodes[n as usize];
            if node.bounds().dist2(p) > best.0 {
                continue;
            }
            match node {
                BvhNode::Leaf { start, end, .. } => {
                    for &t in &self.bvh.tris[*start as usize..*end as usize] {
                        let [a, b, c] = self.triangle(t as usize);
                        let q = closest_point_on_triangle(p, &a, &b, &c);
                        let d2 = (q - p).norm_squared();
                        if (d2, t) < (best.0, best.1) {
                            best = (d2, t, q);
                        }
                    }
                }
                BvhNode::Inner { left, right, .. } => {
                    let dl = self.bvh.nodes[*left as usize].bounds().dist2(p);
                    let dr = self.bvh.nodes[*right as usize].bounds().dist2(p);
                    if dl <= dr {
                        stack.push(*right);
                        stack.push(*left);
                    } else {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        Some(SurfaceHit {
            distance: best.0.sqrt(),
            point: best.2,
            triangle: best.1 as usize,
        })
    }

    /// Highest intersection of the vertical line through `(x, y)` with the
    /// mesh, or `None` over a gap.
    pub fn height_at(&self, x: f64, y: f64) -> Option<f64> {
        let mut top: Option<f64> = None;
        for &t in self.columns.candidates(x, y) {
            let [a, b, c] = self.triangle(t as usize);
            if let Some(z) = vertical_hit(x, y, &a, &b, &c) {
                top = Some(top.map_or(z, |cur| cur.max(z)));
            }
        }
        top
    }
}

/// z of the triangle above/below `(x, y)` if the point lies in its xy
/// projection (edges inclusive).
fn vertical_hit(x: f64, y: f64, a: &V3, b: &V3, c: &V3) -> Option<f64> {
    let det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
    if det == 0.0 {
        return None;
    }
    let l1 = ((x - a.x) * (c.y - a.y) - (c.x - a.x) * (y - a.y)) / det;
    let l2 = ((b.x - a.x) * (y - a.y) - (x - a.x) * (b.y - a.y)) / det;
    let l0 = 1.0 - l1 - l2;
    const TOL: f64 = -1e-12;
    if l0 >= TOL && l1 >= TOL && l2 >= TOL {
        Some(l0 * a.z + l1 * b.z + l2 * c.z)
    } else {
        None
    }
}

/// Uniform xy bucketing of triangle footprints.
#[derive(Debug, Clone)]
struct ColumnGrid {
    origin: [f64; 2],
    cell: f64,
    dims: [usize; 2],
    buckets: Vec<Vec<u32>>,
}

impl ColumnGrid {
    fn build(mesh: &SurfaceMeshData) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for t in &mesh.triangles {
            for &i in t {
                let v = mesh.vertices[i as usize];
                lo = [lo[0].min(v.x), lo[1].min(v.y)];
                hi = [hi[0].max(v.x), hi[1].max(v.y)];
            }
        }
        if mesh.triangles.is_empty() {
            return Self {
                origin: [0.0; 2],
                cell: 1.0,
                dims: [0, 0],
                buckets: Vec::new(),
            };
        }
        let area = ((hi[0] - lo[0]) * (hi[1] - lo[1])).max(1e-12);
        let target = (mesh.triangles.len() as f64).max(1.0);
        let cell = (area / target).sqrt().max(1e-9);
        let dims = [
            (((hi[0] - lo[0]) / cell).floor() as usize + 1).min(4096),
            (((hi[1] - lo[1]) / cell).floor() as usize + 1).min(4096),
        ];
        let cell = cell.max((hi[0] - lo[0]) / dims[0] as f64).max((hi[1] - lo[1]) / dims[1] as f64);
        let mut grid = Self {
            origin: lo,
            cell,
            dims,
            buckets: vec![Vec::new(); dims[0] * dims[1]],
        };
        for (ti, t) in mesh.triangles.iter().enumerate() {
            let vs = t.map(|i| mesh.vertices[i as usize]);
            let (x0, x1) = (vs.iter().map(|v| v.x).reduce(f64::min).unwrap(), vs.iter().map(|v| v.x).reduce(f64::max).unwrap());
            let (y0, y1) = (vs.iter().map(|v| v.y).reduce(f64::min).unwrap(), vs.iter().map(|v| v.y).reduce(f64::max).unwrap());
            let (i0, j0) = grid.cell_of(x0, y0);
            let (i1, j1) = grid.cell_of(x1, y1);
            for i in i0..=i1 {
                for j in j0..=j1 {
                    grid.buckets[i * dims[1] + j].push(ti as u32);
                }
            }
        }
        grid
    }

    fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let fx = ((x - self.origin[0]) / self.cell).floor();
        let fy = ((y - self.origin[1]) / self.cell).floor();
        (
            (fx.max(0.0) as usize).min(self.dims[0] - 1),
            (fy.max(0.0) as usize).min(self.dims[1] - 1),
        )
    }

    fn candidates(&self, x: f64, y: f64) -> &[u32] {
        if self.buckets.is_empty() {
            return &[];
        }
        let eps = 1e-9 * self.cell;
        let fx = (x - self.origin[0]) / self.cell;
        let fy = (y - self.origin[1]) / self.cell;
        if fx < -eps || fy < -eps || fx > self.dims[0] as f64 + eps || fy > self.dims[1] as f64 + eps {
            return &[];
        }
        let (i, j) = self.cell_of(x, y);
        &self.buckets[i * self.dims[1] + j]
    }
}

/// Loads an ASCII OBJ surface; polygons are fan-triangulated and all objects
/// are merged into one mesh.
pub fn load_obj<R: BufRead>(reader: &mut R) -> Result<SurfaceMesh, FillError> {
    let opts = tobj::LoadOptions {
        triangulate: true,
        single_index: false,
        ignore_points: true,
        ignore_lines: true,
    };
    let (models, _) = tobj::load_obj_buf(reader, &opts, |_| Ok(Default::default()))
        .map_err(|e| FillError::Mesh(format!("OBJ parse error: {e}")))?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for model in models {
        let base = vertices.len() as u32;
        let m = model.mesh;
        vertices.extend(m.positions.chunks_exact(3).map(|c| V3::new(c[0], c[1], c[2])));
        triangles.extend(m.indices.chunks_exact(3).map(|c| [base + c[0], base + c[1], base + c[2]]));
    }
    SurfaceMesh::new(vertices, triangles)
}

pub fn load_obj_file(path: impl AsRef<Path>) -> Result<SurfaceMesh, FillError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| FillError::Mesh(format!("cannot open {}: {e}", path.display())))?;
    load_obj(&mut std::io::BufReader::new(file))
}

/// Axis-aligned xy rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

/// Upper-envelope heightfield of Gaussian centers over `footprint`.
///
/// Nodes sit on a lattice of pitch `cell` starting at the footprint corner.
/// Each center contributes to its closest node; a node takes the highest
/// contributing z. Empty nodes copy the nearest non-empty node (ties to the
/// lowest node index). Each lattice cell becomes two triangles.
pub fn heightfield_surface(scene: &Scene, cell: f64, footprint: &Footprint) -> Result<SurfaceMesh, FillError> {
    if !(cell > 0.0 && cell.is_finite()) {
        return Err(FillError::Domain(format!("heightfield cell must be positive, got {cell}")));
    }
    let span = |lo: f64, hi: f64| ((hi - lo) / cell - 1e-9).ceil().max(1.0) as usize;
    let nx = span(footprint.x_min, footprint.x_max) + 1;
    let ny = span(footprint.y_min, footprint.y_max) + 1;
    let mut height = vec![f64::NEG_INFINITY; nx * ny];
    for g in &scene.gaussians {
        let c = g.center;
        let fi = ((c.x - footprint.x_min) / cell).round();
        let fj = ((c.y - footprint.y_min) / cell).round();
        if fi < 0.0 || fj < 0.0 || fi >= nx as f64 || fj >= ny as f64 || !c.z.is_finite() {
            continue;
        }
        let k = fi as usize * ny + fj as usize;
        height[k] = height[k].max(c.z);
    }
    let filled: Vec<usize> = (0..height.len()).filter(|&k| height[k].is_finite()).collect();
    if filled.is_empty() {
        return Err(FillError::EmptySurface);
    }
    if filled.len() < height.len() {
        let index = PointIndex::new(filled.iter().map(|&k| [(k / ny) as f64, (k % ny) as f64]).collect());
        let snapshot = height.clone();
        for (k, h) in height.iter_mut().enumerate() {
            if !h.is_finite() {
                let (near, _) = index.nearest(&[(k / ny) as f64, (k % ny) as f64]).unwrap();
                *h = snapshot[filled[near]];
            }
        }
    }
    let mut vertices = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            vertices.push(V3::new(
                footprint.x_min + i as f64 * cell,
                footprint.y_min + j as f64 * cell,
                height[i * ny + j],
            ));
        }
    }
    let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    let id = |i: usize, j: usize| (i * ny + j) as u32;
    for i in 0..nx - 1 {
        for j in 0..ny - 1 {
            triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    SurfaceMesh::new(vertices, triangles)
}
