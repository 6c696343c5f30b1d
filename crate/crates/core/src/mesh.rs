//! Triangulated surfaces, test domains and point location on them.

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

use crate::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("triangle {triangle} references vertex {vertex} but the mesh has {count} vertices")]
    IndexOutOfRange {
        triangle: usize,
        vertex: usize,
        count: usize,
    },
    #[error("triangle {0} repeats a vertex index")]
    RepeatedVertex(usize),
    #[error("triangle {0} is degenerate (zero area)")]
    Degenerate(usize),
    #[error("edge ({0}, {1}) is shared by more than two triangles")]
    NonManifoldEdge(usize, usize),
    #[error("edge ({0}, {1}) is traversed twice in the same direction; orientation is inconsistent")]
    InconsistentOrientation(usize, usize),
    #[error("vertex {0} has a non-manifold triangle fan")]
    NonManifoldVertex(usize),
    #[error("mesh has no triangles")]
    Empty,
}

/// Immutable triangulated surface with cached per-triangle geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    areas: Vec<f64>,
    normals: Vec<Vec3>,
    /// Edge lengths, entry `k` is the edge opposite local corner `k`.
    edge_lengths: Vec<[f64; 3]>,
    vertex_triangles: Vec<Vec<usize>>,
    vertex_neighbors: Vec<Vec<usize>>,
    boundary: Vec<bool>,
}

impl TriMesh {
    /// Builds a mesh and checks every structural invariant.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        if triangles.is_empty() {
            return Err(MeshError::Empty);
        }
        let nv = vertices.len();
        let mut areas = Vec::with_capacity(triangles.len());
        let mut normals = Vec::with_capacity(triangles.len());
        let mut edge_lengths = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= nv {
                    return Err(MeshError::IndexOutOfRange {
                        triangle: t,
                        vertex: v,
                        count: nv,
                    });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::RepeatedVertex(t));
            }
            let [p0, p1, p2] = tri.map(|i| vertices[i]);
            let lens = [(p2 - p1).norm(), (p0 - p2).norm(), (p1 - p0).norm()];
            let cross = (p1 - p0).cross(&(p2 - p0));
            let twice_area = cross.norm();
            let scale = lens.iter().fold(0.0f64, |a, &b| a.max(b));
            if !(twice_area > 1e-14 * scale * scale) || !twice_area.is_finite() {
                return Err(MeshError::Degenerate(t));
            }
            areas.push(0.5 * twice_area);
            normals.push(cross / twice_area);
            edge_lengths.push(lens);
        }

        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        let mut undirected: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let c = undirected.entry(key).or_insert(0);
                *c += 1;
                if *c > 2 {
                    return Err(MeshError::NonManifoldEdge(key.0, key.1));
                }
                let d = directed.entry((a, b)).or_insert(0);
                *d += 1;
                if *d > 1 {
                    return Err(MeshError::InconsistentOrientation(a, b));
                }
            }
        }

        let mut vertex_triangles = vec![Vec::new(); nv];
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                vertex_triangles[v].push(t);
            }
        }
        let mut vertex_neighbors = vec![Vec::new(); nv];
        let mut boundary = vec![false; nv];
        for (&(a, b), &count) in &undirected {
            vertex_neighbors[a].push(b);
            vertex_neighbors[b].push(a);
            if count == 1 {
                boundary[a] = true;
                boundary[b] = true;
            }
        }
        for n in &mut vertex_neighbors {
            n.sort_unstable();
        }

        let mesh = Self {
            vertices,
            triangles,
            areas,
            normals,
            edge_lengths,
            vertex_triangles,
            vertex_neighbors,
            boundary,
        };
        debug_assert!(mesh.check_invariants().is_ok());
        Ok(mesh)
    }

    /// Re-verifies the cached geometry; used by tests and debug assertions.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= self.vertices.len()) {
                return Err(format!("triangle {t} out of range"));
            }
            if self.areas[t] <= 0.0 {
                return Err(format!("triangle {t} has non-positive area"));
            }
            if (self.normals[t].norm() - 1.0).abs() > 1e-12 {
                return Err(format!("triangle {t} normal is not unit"));
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertex(&self, i: usize) -> Vec3 {
        self.vertices[i]
    }

    pub fn area(&self, t: usize) -> f64 {
        self.areas[t]
    }

    pub fn normal(&self, t: usize) -> Vec3 {
        self.normals[t]
    }

    pub fn edge_lengths(&self, t: usize) -> [f64; 3] {
        self.edge_lengths[t]
    }

    pub fn vertex_triangles(&self, v: usize) -> &[usize] {
        &self.vertex_triangles[v]
    }

    pub fn vertex_neighbors(&self, v: usize) -> &[usize] {
        &self.vertex_neighbors[v]
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn centroid(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.triangles[t];
        (self.vertices[a] + self.vertices[b] + self.vertices[c]) / 3.0
    }

    pub fn mean_edge_length(&self) -> f64 {
        let (sum, n) = self
            .edge_lengths
            .iter()
            .fold((0.0, 0usize), |(s, n), l| (s + l[0] + l[1] + l[2], n + 3));
        sum / n as f64
    }

    /// Area-weighted unit vertex normal.
    pub fn vertex_normal(&self, v: usize) -> Vec3 {
        let n: Vec3 = self.vertex_triangles[v]
            .iter()
            .map(|&t| self.normals[t] * self.areas[t])
            .sum();
        n.normalize()
    }

    pub fn vertex_normals(&self) -> Vec<Vec3> {
        (0..self.vertex_count()).map(|v| self.vertex_normal(v)).collect()
    }

    /// One third of the incident triangle areas (lumped mass).
    pub fn vertex_area(&self, v: usize) -> f64 {
        self.vertex_triangles[v].iter().map(|&t| self.areas[t]).sum::<f64>() / 3.0
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.vertices {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    /// Unique undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .vertex_neighbors
            .iter()
            .enumerate()
            .flat_map(|(a, ns)| ns.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
            .collect();
        e.sort_unstable();
        e
    }

    /// Position of a barycentric sample.
    pub fn point_at(&self, t: usize, bary: [f64; 3]) -> Vec3 {
        let [a, b, c] = self.triangles[t];
        self.vertices[a] * bary[0] + self.vertices[b] * bary[1] + self.vertices[c] * bary[2]
    }

    /// Linear interpolation of a per-vertex scalar at a sample.
    pub fn interpolate(&self, field: &[f64], sample: &PointSample) -> f64 {
        let [a, b, c] = self.triangles[sample.triangle];
        let w = sample.bary;
        field[a] * w[0] + field[b] * w[1] + field[c] * w[2]
    }

    /// Whether all triangle normals are parallel (same orientation) within `tol`.
    pub fn is_planar(&self, tol: f64) -> bool {
        let n0 = self.normals[0];
        let p0 = self.vertices[self.triangles[0][0]];
        let (lo, hi) = self.bounding_box();
        let extent = (hi - lo).norm().max(1.0);
        self.normals.iter().all(|n| (n - n0).norm() <= tol)
            && self
                .vertices
                .iter()
                .all(|p| (p - p0).dot(&n0).abs() <= tol * extent)
    }
}

/// Regular grid on `[-1, 1]^2` in the `z = 0` plane with `n` points per side.
///
/// Each cell is split along its lower-left to upper-right diagonal; both
/// triangles are counter-clockwise seen from `+z`.
pub fn build_unit_grid_mesh(n: usize) -> Result<TriMesh, MeshError> {
    build_grid_mesh(n, 1.0)
}

/// Same as [`build_unit_grid_mesh`] on `[-half_width, half_width]^2`.
pub fn build_grid_mesh(n: usize, half_width: f64) -> Result<TriMesh, MeshError> {
    if n < 2 {
        return Err(MeshError::InvalidArgument(format!(
            "grid needs at least 2 points per side, got {n}"
        )));
    }
    if !(half_width > 0.0) {
        return Err(MeshError::InvalidArgument(format!(
            "grid half width must be positive, got {half_width}"
        )));
    }
    let step = 2.0 * half_width / (n - 1) as f64;
    let mut vertices = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            vertices.push(Vec3::new(
                -half_width + step * i as f64,
                -half_width + step * j as f64,
                0.0,
            ));
        }
    }
    let mut triangles = Vec::with_capacity(2 * (n - 1) * (n - 1));
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            let v00 = j * n + i;
            let v10 = v00 + 1;
            let v01 = v00 + n;
            let v11 = v01 + 1;
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    TriMesh::new(vertices, triangles)
}

/// Open cylinder around the `z` axis, `n_around` segments by `n_along` rings.
pub fn open_cylinder(
    radius: f64,
    height: f64,
    n_around: usize,
    n_along: usize,
) -> Result<TriMesh, MeshError> {
    if n_around < 3 || n_along < 2 {
        return Err(MeshError::InvalidArgument(
            "cylinder needs at least 3 segments and 2 rings".into(),
        ));
    }
    let mut vertices = Vec::with_capacity(n_around * n_along);
    for j in 0..n_along {
        let z = height * j as f64 / (n_along - 1) as f64 - 0.5 * height;
        for i in 0..n_around {
            let th = std::f64::consts::TAU * i as f64 / n_around as f64;
            vertices.push(Vec3::new(radius * th.cos(), radius * th.sin(), z));
        }
    }
    let mut triangles = Vec::new();
    for j in 0..n_along - 1 {
        for i in 0..n_around {
            let i1 = (i + 1) % n_around;
            let v00 = j * n_around + i;
            let v10 = j * n_around + i1;
            let v01 = (j + 1) * n_around + i;
            let v11 = (j + 1) * n_around + i1;
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    TriMesh::new(vertices, triangles)
}

/// A location on the surface given by a triangle and barycentric weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSample {
    pub triangle: usize,
    pub bary: [f64; 3],
    pub position: Vec3,
}

impl PointSample {
    pub fn new(mesh: &TriMesh, triangle: usize, bary: [f64; 3]) -> Self {
        let s: f64 = bary.iter().sum();
        let bary = bary.map(|b| b.max(0.0) / s);
        Self {
            triangle,
            bary,
            position: mesh.point_at(triangle, bary),
        }
    }

    /// The sample sitting on vertex `v` (first incident triangle).
    pub fn at_vertex(mesh: &TriMesh, v: usize) -> Self {
        let t = mesh.vertex_triangles(v)[0];
        let tri = mesh.triangles()[t];
        let mut bary = [0.0; 3];
        bary[tri.iter().position(|&x| x == v).unwrap()] = 1.0;
        Self {
            triangle: t,
            bary,
            position: mesh.vertex(v),
        }
    }

    pub fn centroid(mesh: &TriMesh, t: usize) -> Self {
        Self::new(mesh, t, [1.0 / 3.0; 3])
    }
}

/// Result of projecting a point onto the mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub sample: PointSample,
    pub distance: f64,
}

/// Closest point on triangle `abc` to `p`, returned as barycentric weights.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> [f64; 3] {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return [0.0, 1.0, 0.0];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return [1.0 - v, v, 0.0];
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return [0.0, 0.0, 1.0];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return [1.0 - w, 0.0, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [0.0, 1.0 - w, w];
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    [1.0 - v - w, v, w]
}

/// Closest point on the mesh for every query point.
///
/// Triangles are visited in order of a bounding-sphere lower bound so that
/// the scan stops as soon as no remaining triangle can be closer.
pub fn project_points(mesh: &TriMesh, points: &[Vec3]) -> Vec<Projection> {
    let spheres: Vec<(Vec3, f64)> = (0..mesh.triangle_count())
        .map(|t| {
            let c = mesh.centroid(t);
            let r = mesh.triangles()[t]
                .iter()
                .map(|&v| (mesh.vertex(v) - c).norm())
                .fold(0.0, f64::max);
            (c, r)
        })
        .collect();
    crate::exec::map_slice(points, |p| {
        let mut order: Vec<(f64, usize)> = spheres
            .iter()
            .enumerate()
            .map(|(t, (c, r))| (((p - c).norm() - r).max(0.0), t))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut best = Projection {
            sample: PointSample::centroid(mesh, 0),
            distance: f64::INFINITY,
        };
        for (bound, t) in order {
            if bound > best.distance {
                break;
            }
            let [a, b, c] = mesh.triangles()[t].map(|i| mesh.vertex(i));
            let bary = closest_point_on_triangle(p, &a, &b, &c);
            let q = a * bary[0] + b * bary[1] + c * bary[2];
            let d = (p - q).norm();
            if d < best.distance {
                best = Projection {
                    sample: PointSample {
                        triangle: t,
                        bary,
                        position: q,
                    },
                    distance: d,
                };
            }
        }
        best
    })
}

/// `n` points drawn uniformly with respect to surface area.
pub fn sample_uniform_by_area<R: Rng + ?Sized>(
    mesh: &TriMesh,
    n: usize,
    rng: &mut R,
) -> Vec<PointSample> {
    let mut cumulative = Vec::with_capacity(mesh.triangle_count());
    let mut acc = 0.0;
    for t in 0..mesh.triangle_count() {
        acc += mesh.area(t);
        cumulative.push(acc);
    }
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            let t = cumulative
                .partition_point(|&c| c < u)
                .min(mesh.triangle_count() - 1);
            let (mut r1, mut r2): (f64, f64) = (rng.random(), rng.random());
            if r1 + r2 > 1.0 {
                r1 = 1.0 - r1;
                r2 = 1.0 - r2;
            }
            PointSample::new(mesh, t, [1.0 - r1 - r2, r1, r2])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_counts() {
        for (n, nv, nt) in [(2, 4, 2), (3, 9, 8), (35, 1225, 2312)] {
            let m = build_unit_grid_mesh(n).unwrap();
            assert_eq!(m.vertex_count(), nv);
            assert_eq!(m.triangle_count(), nt);
            m.check_invariants().unwrap();
        }
        assert!(matches!(
            build_unit_grid_mesh(1),
            Err(MeshError::InvalidArgument(_))
        ));
    }

    #[test]
    fn grid_is_ccw_and_covers_square() {
        let m = build_unit_grid_mesh(5).unwrap();
        for t in 0..m.triangle_count() {
            assert_relative_eq!(m.normal(t).z, 1.0, epsilon = 1e-14);
        }
        assert_relative_eq!(m.total_area(), 4.0, epsilon = 1e-12);
        assert!(m.is_boundary(0) && !m.is_boundary(12));
    }

    #[test]
    fn rejects_bad_topology() {
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.0, -1.0, 0.0),
        ];
        assert_eq!(
            TriMesh::new(v.clone(), vec![[0, 1, 7]]).unwrap_err(),
            MeshError::IndexOutOfRange {
                triangle: 0,
                vertex: 7,
                count: 5
            }
        );
        assert_eq!(
            TriMesh::new(v.clone(), vec![[0, 1, 1]]).unwrap_err(),
            MeshError::RepeatedVertex(0)
        );
        let collinear = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
        ];
        assert_eq!(
            TriMesh::new(collinear, vec![[0, 1, 2]]).unwrap_err(),
            MeshError::Degenerate(0)
        );
        // three triangles on edge (0, 1)
        assert_eq!(
            TriMesh::new(v.clone(), vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]]).unwrap_err(),
            MeshError::NonManifoldEdge(0, 1)
        );
        assert_eq!(
            TriMesh::new(v, vec![[0, 1, 2], [0, 1, 3]]).unwrap_err(),
            MeshError::InconsistentOrientation(0, 1)
        );
    }

    #[test]
    fn projection_examples() {
        let m = build_unit_grid_mesh(3).unwrap();
        let p = project_points(&m, &[Vec3::new(1.0, 1.0, 0.0)]);
        assert_eq!(p[0].distance, 0.0);
        assert_relative_eq!(p[0].sample.position, Vec3::new(1.0, 1.0, 0.0));

        let single = TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let c = single.centroid(0);
        let p = project_points(&single, &[c + Vec3::new(0.0, 0.0, 0.7)]);
        assert_relative_eq!(p[0].distance, 0.7, epsilon = 1e-14);
        assert_relative_eq!(p[0].sample.position, c, epsilon = 1e-14);
        for b in p[0].sample.bary {
            assert_relative_eq!(b, 1.0 / 3.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn area_sampling_is_on_surface() {
        let m = open_cylinder(1.0, 2.0, 16, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = sample_uniform_by_area(&m, 500, &mut rng);
        for p in &s {
            assert_relative_eq!(p.bary.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert!(p.bary.iter().all(|&b| b >= 0.0));
            assert!(p.position.z.abs() <= 1.0 + 1e-12);
        }
    }
}
