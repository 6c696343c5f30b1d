//! Smooth per-vertex tangent frames.
//!
//! The fiber angle is measured against `v1`, so the frame should vary as
//! little as possible over the surface. On planar domains a constant frame
//! suffices; on curved surfaces `v1` is obtained by short-time diffusion of a
//! single tangent vector under the connection Laplacian (vector heat method),
//! which approximates its parallel transport.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

use crate::mesh::{MeshError, PointSample, TriMesh};
use crate::sparse::{conjugate_gradient, CsrMatrix, EnvelopeLdl, SolveError};
use crate::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("mesh is not planar")]
    NotPlanar,
    #[error("linear solve failed: {0}")]
    Solve(#[from] SolveError),
    #[error("vertex {0} received no transported vector; the mesh is disconnected")]
    Disconnected(usize),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Orthonormal right-handed frame `{v1, v2, n}` with `v2 = n x v1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub v1: Vec3,
    pub v2: Vec3,
    pub n: Vec3,
}

impl Frame {
    /// Frame from a normal and an approximate first direction.
    pub fn from_normal_and_direction(n: Vec3, dir: Vec3) -> Option<Self> {
        let n = n.try_normalize(1e-300)?;
        let v1 = (dir - n * n.dot(&dir)).try_normalize(1e-300)?;
        Some(Self {
            v1,
            v2: n.cross(&v1),
            n,
        })
    }

    pub fn planar() -> Self {
        Self {
            v1: Vec3::x(),
            v2: Vec3::y(),
            n: Vec3::z(),
        }
    }

    /// Coordinates of a vector in the tangent plane.
    pub fn to_coords(&self, v: &Vec3) -> [f64; 2] {
        [self.v1.dot(v), self.v2.dot(v)]
    }

    pub fn from_coords(&self, c: [f64; 2]) -> Vec3 {
        self.v1 * c[0] + self.v2 * c[1]
    }

    /// Largest deviation from orthonormality and right-handedness.
    pub fn orthonormality_residual(&self) -> f64 {
        [
            (self.v1.norm() - 1.0).abs(),
            (self.v2.norm() - 1.0).abs(),
            (self.n.norm() - 1.0).abs(),
            self.v1.dot(&self.v2).abs(),
            self.v1.dot(&self.n).abs(),
            self.v2.dot(&self.n).abs(),
            (self.n.cross(&self.v1) - self.v2).norm(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Per-vertex tangent frames.
#[derive(Debug, Clone)]
pub struct TangentBasis {
    frames: Vec<Frame>,
}

impl TangentBasis {
    pub fn from_frames(frames: Vec<Frame>) -> Self {
        Self { frames }
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame(&self, v: usize) -> &Frame {
        &self.frames[v]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn max_orthonormality_residual(&self) -> f64 {
        self.frames
            .iter()
            .map(Frame::orthonormality_residual)
            .fold(0.0, f64::max)
    }

    /// Frame at a point inside a triangle: barycentric blend of `v1`,
    /// re-orthonormalized against the triangle normal.
    pub fn interpolate(&self, mesh: &TriMesh, sample: &PointSample) -> Frame {
        let tri = mesh.triangles()[sample.triangle];
        let n = mesh.normal(sample.triangle);
        let v1: Vec3 = (0..3).map(|k| self.frames[tri[k]].v1 * sample.bary[k]).sum();
        Frame::from_normal_and_direction(n, v1)
            .or_else(|| Frame::from_normal_and_direction(n, self.frames[tri[0]].v1))
            .unwrap_or_else(|| {
                let any = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
                Frame::from_normal_and_direction(n, any).expect("axis not parallel to unit normal")
            })
    }
}

/// Constant frame for a planar mesh: `v1` is the global x axis projected to
/// the plane (the y axis if x is normal to it).
pub fn trivial_planar_basis(mesh: &TriMesh) -> Result<TangentBasis, BasisError> {
    if !mesh.is_planar(1e-8) {
        return Err(BasisError::NotPlanar);
    }
    let n = mesh.normal(0);
    let frame = Frame::from_normal_and_direction(n, Vec3::x())
        .filter(|f| (Vec3::x() - n * n.x).norm() > 1e-6 && f.v1.norm() > 0.0)
        .or_else(|| Frame::from_normal_and_direction(n, Vec3::y()))
        .ok_or_else(|| BasisError::InvalidArgument("cannot orient planar frame".into()))?;
    Ok(TangentBasis::from_frames(vec![frame; mesh.vertex_count()]))
}

/// Ordered fan of outgoing edges around a vertex.
#[derive(Debug, Clone)]
struct VertexFan {
    /// Neighbor at the end of each outgoing edge, in counter-clockwise order.
    neighbors: Vec<usize>,
    /// Cumulative intrinsic angle of each edge from the first one.
    intrinsic: Vec<f64>,
    /// Breakpoints `(intrinsic, projected)` of a monotone map between the
    /// intrinsic angle and the angle in the vertex tangent plane.
    breakpoints: Vec<(f64, f64)>,
    /// Angular rescaling applied for the connection (`2 pi / angle sum` on
    /// interior vertices, one on the boundary).
    scale: f64,
    /// Whether the breakpoints cover a full turn, so angles wrap around.
    wraps: bool,
    normal: Vec3,
    reference: Vec3,
}

impl VertexFan {
    fn build(mesh: &TriMesh, v: usize) -> Result<Self, BasisError> {
        let tris = mesh.vertex_triangles(v);
        if tris.is_empty() {
            return Err(BasisError::Mesh(MeshError::NonManifoldVertex(v)));
        }
        // wedge (start neighbor -> end neighbor, corner angle), counter-clockwise
        let mut wedges: Vec<(usize, usize, f64)> = tris
            .iter()
            .map(|&t| {
                let tri = mesh.triangles()[t];
                let k = tri.iter().position(|&x| x == v).unwrap();
                let (j, l) = (tri[(k + 1) % 3], tri[(k + 2) % 3]);
                let e1 = mesh.vertex(j) - mesh.vertex(v);
                let e2 = mesh.vertex(l) - mesh.vertex(v);
                let ang = e1.cross(&e2).norm().atan2(e1.dot(&e2));
                (j, l, ang)
            })
            .collect();
        wedges.sort_by_key(|w| (w.0, w.1));
        let boundary = mesh.is_boundary(v);
        let start = if boundary {
            wedges
                .iter()
                .find(|w| !wedges.iter().any(|o| o.1 == w.0))
                .ok_or(MeshError::NonManifoldVertex(v))?
                .0
        } else {
            wedges[0].0
        };
        let mut neighbors = vec![start];
        let mut intrinsic = vec![0.0];
        let mut cur = start;
        let mut used = 0;
        while let Some(w) = wedges.iter().find(|w| w.0 == cur) {
            used += 1;
            let next = w.1;
            let acc = intrinsic.last().unwrap() + w.2;
            if next == start {
                intrinsic.push(acc);
                break;
            }
            if used > wedges.len() {
                break;
            }
            neighbors.push(next);
            intrinsic.push(acc);
            cur = next;
        }
        if used != wedges.len() {
            return Err(BasisError::Mesh(MeshError::NonManifoldVertex(v)));
        }
        // for interior vertices `intrinsic` has one extra entry: the full angle sum
        let angle_sum = *intrinsic.last().unwrap();
        let normal = mesh.vertex_normal(v);
        let project = |u: Vec3| u - normal * normal.dot(&u);
        let reference = project(mesh.vertex(start) - mesh.vertex(v))
            .try_normalize(1e-300)
            .ok_or(MeshError::NonManifoldVertex(v))?;
        let ortho = normal.cross(&reference);
        let mut breakpoints = Vec::with_capacity(intrinsic.len() + 1);
        let mut last = 0.0f64;
        for (k, &phi) in intrinsic.iter().enumerate() {
            let psi = if k == neighbors.len() {
                TAU
            } else {
                let e = project(mesh.vertex(neighbors[k]) - mesh.vertex(v));
                let mut a = e.dot(&ortho).atan2(e.dot(&reference));
                while a < last - 1e-12 {
                    a += TAU;
                }
                a
            };
            last = psi;
            breakpoints.push((phi, psi));
        }
        let mut wraps = !boundary;
        if boundary {
            let (phi_last, psi_last) = *breakpoints.last().unwrap();
            if phi_last < TAU && psi_last < TAU {
                breakpoints.push((TAU, TAU));
                wraps = true;
            }
        }
        let scale = if boundary { 1.0 } else { TAU / angle_sum };
        Ok(Self {
            neighbors,
            intrinsic,
            breakpoints,
            scale,
            wraps,
            normal,
            reference,
        })
    }

    /// Scaled intrinsic angle of the outgoing edge towards `j`.
    fn edge_angle(&self, j: usize) -> f64 {
        let k = self.neighbors.iter().position(|&x| x == j).expect("neighbor in fan");
        self.intrinsic[k] * self.scale
    }

    fn period(&self) -> f64 {
        self.breakpoints.last().unwrap().0
    }

    /// Tangent-plane direction for a scaled intrinsic angle.
    fn decode(&self, angle: f64) -> Vec3 {
        let mut phi = angle / self.scale;
        if self.wraps {
            phi = phi.rem_euclid(self.period());
        }
        let psi = interpolate_breakpoints(&self.breakpoints, phi, false);
        let ortho = self.normal.cross(&self.reference);
        self.reference * psi.cos() + ortho * psi.sin()
    }

    /// Scaled intrinsic angle of a (projected) world vector.
    fn encode(&self, v: &Vec3) -> Option<f64> {
        let ortho = self.normal.cross(&self.reference);
        let (x, y) = (v.dot(&self.reference), v.dot(&ortho));
        if x.hypot(y) <= 1e-14 * v.norm().max(1e-300) {
            return None;
        }
        let psi = y.atan2(x).rem_euclid(TAU);
        Some(interpolate_breakpoints(&self.breakpoints, psi, true) * self.scale)
    }
}

/// Piecewise-linear map through `(phi, psi)` breakpoints; `inverse` maps
/// psi to phi. Outside the covered range the nearest segment is extended.
fn interpolate_breakpoints(bp: &[(f64, f64)], x: f64, inverse: bool) -> f64 {
    let key = |p: &(f64, f64)| if inverse { (p.1, p.0) } else { *p };
    let pts: Vec<(f64, f64)> = bp.iter().map(key).collect();
    if pts.len() == 1 {
        return pts[0].1 + (x - pts[0].0);
    }
    let k = pts
        .windows(2)
        .position(|w| x <= w[1].0)
        .unwrap_or(pts.len() - 2);
    let (x0, y0) = pts[k];
    let (x1, y1) = pts[k + 1];
    if x < x0 || (x1 - x0).abs() < 1e-300 {
        return y0 + (x - x0);
    }
    if x > x1 {
        return y1 + (x - x1);
    }
    y0 + (x - x0) * (y1 - y0) / (x1 - x0)
}

/// Cotangent weight `(cot a + cot b) / 2` of every edge, keyed by sorted pair.
fn cotan_weights(mesh: &TriMesh) -> Vec<((usize, usize), f64)> {
    let mut w = std::collections::BTreeMap::new();
    for tri in mesh.triangles() {
        for k in 0..3 {
            let (i, j, o) = (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
            let a = mesh.vertex(i) - mesh.vertex(o);
            let b = mesh.vertex(j) - mesh.vertex(o);
            let cot = a.dot(&b) / a.cross(&b).norm();
            *w.entry((i.min(j), i.max(j))).or_insert(0.0) += 0.5 * cot;
        }
    }
    w.into_iter().collect()
}

/// Result of transporting one tangent vector over the whole mesh.
#[derive(Debug, Clone)]
pub struct VectorHeatTransport {
    pub basis: TangentBasis,
    /// Diffusion time that was used.
    pub diffusion_time: f64,
}

/// Smooth frame whose `v1` is the vector-heat transport of `source_vector`
/// from `source_vertex`. `diffusion_time` defaults to the squared mean edge
/// length.
pub fn vector_heat_basis(
    mesh: &TriMesh,
    source_vertex: usize,
    source_vector: Vec3,
    diffusion_time: Option<f64>,
) -> Result<TangentBasis, BasisError> {
    vector_heat_transport(mesh, source_vertex, source_vector, diffusion_time).map(|t| t.basis)
}

pub fn vector_heat_transport(
    mesh: &TriMesh,
    source_vertex: usize,
    source_vector: Vec3,
    diffusion_time: Option<f64>,
) -> Result<VectorHeatTransport, BasisError> {
    let nv = mesh.vertex_count();
    if source_vertex >= nv {
        return Err(BasisError::InvalidArgument(format!(
            "source vertex {source_vertex} out of range"
        )));
    }
    let t = diffusion_time.unwrap_or_else(|| mesh.mean_edge_length().powi(2));
    if !(t > 0.0) {
        return Err(BasisError::InvalidArgument(format!(
            "diffusion time must be positive, got {t}"
        )));
    }
    let fans = (0..nv)
        .map(|v| VertexFan::build(mesh, v))
        .collect::<Result<Vec<_>, _>>()?;
    let src_fan = &fans[source_vertex];
    let tangential = source_vector - src_fan.normal * src_fan.normal.dot(&source_vector);
    if tangential.norm() <= 1e-12 * source_vector.norm().max(1e-300) {
        return Err(BasisError::InvalidArgument(
            "source vector has no tangential component".into(),
        ));
    }
    let src_angle = src_fan
        .encode(&tangential)
        .ok_or_else(|| BasisError::InvalidArgument("source vector has no tangential component".into()))?;

    // (M + t L_conn) X = X0 with Hermitian connection Laplacian
    let mut trip: Vec<(usize, usize, Complex64)> = Vec::new();
    for v in 0..nv {
        trip.push((v, v, Complex64::new(mesh.vertex_area(v), 0.0)));
    }
    for ((i, j), w) in cotan_weights(mesh) {
        let wt = w * t;
        // rho_ij carries a vector expressed at i into the frame of j
        let rho_ij = Complex64::from_polar(1.0, fans[j].edge_angle(i) - fans[i].edge_angle(j) + PI);
        trip.push((i, i, Complex64::new(wt, 0.0)));
        trip.push((j, j, Complex64::new(wt, 0.0)));
        trip.push((j, i, -rho_ij * wt));
        trip.push((i, j, -rho_ij.conj() * wt));
    }
    let system = CsrMatrix::from_triplets(nv, trip);
    let mut rhs = vec![Complex64::default(); nv];
    rhs[source_vertex] = Complex64::from_polar(1.0, src_angle);
    let factor = EnvelopeLdl::factor(&system)?;
    let x = conjugate_gradient(&system, &rhs, &factor, 1e-10, 50)?;

    // With a single unit source the scalar magnitude-recovery solves of the
    // method have a constant ratio, so only the direction is needed here.
    let max_mag = x.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut frames = Vec::with_capacity(nv);
    for (v, z) in x.iter().enumerate() {
        if !(z.norm() > 1e-280 && z.norm() > max_mag * 1e-300) {
            return Err(BasisError::Disconnected(v));
        }
        let fan = &fans[v];
        let dir = fan.decode(z.arg());
        let frame = Frame::from_normal_and_direction(fan.normal, dir)
            .ok_or(BasisError::Disconnected(v))?;
        frames.push(frame);
    }
    Ok(VectorHeatTransport {
        basis: TangentBasis::from_frames(frames),
        diffusion_time: t,
    })
}

/// Default seed for the transport: the vertex with the largest incident area
/// and the mesh's first principal axis projected onto its tangent plane.
pub fn default_source(mesh: &TriMesh) -> (usize, Vec3) {
    let v = (0..mesh.vertex_count())
        .max_by(|&a, &b| {
            mesh.vertex_area(a)
                .total_cmp(&mesh.vertex_area(b))
                .then(b.cmp(&a))
        })
        .unwrap_or(0);
    let n = mesh.vertex_count() as f64;
    let mean: Vec3 = mesh.vertices().iter().sum::<Vec3>() / n;
    let cov: Matrix3<f64> = mesh
        .vertices()
        .iter()
        .map(|p| (p - mean) * (p - mean).transpose())
        .sum::<Matrix3<f64>>()
        / n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let normal = mesh.vertex_normal(v);
    let dir = order
        .iter()
        .map(|&k| eig.eigenvectors.column(k).into_owned())
        .find(|axis| (axis - normal * normal.dot(axis)).norm() > 1e-3)
        .unwrap_or_else(Vec3::x);
    (v, dir - normal * normal.dot(&dir))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_unit_grid_mesh, open_cylinder};

    fn angle(a: &Vec3, b: &Vec3) -> f64 {
        a.cross(b).norm().atan2(a.dot(b))
    }

    #[test]
    fn planar_basis_on_grid() {
        let m = build_unit_grid_mesh(6).unwrap();
        let b = trivial_planar_basis(&m).unwrap();
        for f in b.frames() {
            assert!((f.v1 - Vec3::x()).norm() < 1e-14);
            assert!((f.v2 - Vec3::y()).norm() < 1e-14);
        }
        assert!(b.max_orthonormality_residual() < 1e-12);
    }

    #[test]
    fn planar_basis_rotated_grid() {
        let m = build_unit_grid_mesh(4).unwrap();
        let rot = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), 0.5 * PI);
        let verts = m.vertices().iter().map(|p| rot * p).collect();
        let m = TriMesh::new(verts, m.triangles().to_vec()).unwrap();
        let b = trivial_planar_basis(&m).unwrap();
        assert!(b.max_orthonormality_residual() < 1e-12);
        assert!(b.frame(0).v1.z.abs() < 1e-14);

        // plane containing the x axis direction as its normal
        let verts = m.vertices().iter().map(|p| Vec3::new(0.0, p.x, p.y)).collect();
        let m = TriMesh::new(verts, m.triangles().to_vec()).unwrap();
        let b = trivial_planar_basis(&m).unwrap();
        assert!(b.max_orthonormality_residual() < 1e-12);
    }

    #[test]
    fn planar_basis_rejects_curved_mesh() {
        let m = open_cylinder(1.0, 1.0, 8, 3).unwrap();
        assert_eq!(trivial_planar_basis(&m).unwrap_err(), BasisError::NotPlanar);
    }

    #[test]
    fn flat_transport_is_identity() {
        let m = build_unit_grid_mesh(15).unwrap();
        for src in [0, 7 * 15 + 7, 14] {
            let b = vector_heat_basis(&m, src, Vec3::x(), None).unwrap();
            for f in b.frames() {
                assert!(angle(&f.v1, &Vec3::x()) < 1e-6);
            }
            assert!(b.max_orthonormality_residual() < 1e-10);
        }
    }

    #[test]
    fn flat_transport_of_oblique_vector() {
        let m = build_unit_grid_mesh(9).unwrap();
        let dir = Vec3::new(0.3, -0.8, 0.4);
        let b = vector_heat_basis(&m, 40, dir, None).unwrap();
        let expect = Vec3::new(0.3, -0.8, 0.0).normalize();
        for f in b.frames() {
            assert!(angle(&f.v1, &expect) < 1e-6);
        }
    }

    #[test]
    fn cylinder_transport_stays_axial() {
        let m = open_cylinder(1.0, 3.0, 32, 16).unwrap();
        let src = 8 * 32 + 5;
        let b = vector_heat_basis(&m, src, Vec3::z(), None).unwrap();
        for (v, f) in b.frames().iter().enumerate() {
            let z = m.vertex(v).z;
            if z.abs() < 1.2 {
                assert!(angle(&f.v1, &Vec3::z()) < 1e-3, "vertex {v}");
            }
        }
        assert!(b.max_orthonormality_residual() < 1e-10);
    }

    #[test]
    fn source_vertex_keeps_source_direction() {
        let m = open_cylinder(1.0, 3.0, 24, 10).unwrap();
        let src = 5 * 24 + 3;
        let raw = Vec3::new(0.2, 0.5, 1.0);
        let b = vector_heat_basis(&m, src, raw, None).unwrap();
        let n = m.vertex_normal(src);
        let expect = (raw - n * n.dot(&raw)).normalize();
        assert!((b.frame(src).v1 - expect).norm() < 1e-8);
    }

    #[test]
    fn rejects_normal_source_and_disconnected_mesh() {
        let m = build_unit_grid_mesh(4).unwrap();
        assert!(matches!(
            vector_heat_basis(&m, 0, Vec3::z(), None),
            Err(BasisError::InvalidArgument(_))
        ));
        let mut verts = m.vertices().to_vec();
        let mut tris = m.triangles().to_vec();
        let off = verts.len();
        verts.extend(m.vertices().iter().map(|p| p + Vec3::new(5.0, 0.0, 0.0)));
        tris.extend(m.triangles().iter().map(|t| t.map(|i| i + off)));
        let two = TriMesh::new(verts, tris).unwrap();
        assert!(matches!(
            vector_heat_basis(&two, 0, Vec3::x(), None),
            Err(BasisError::Disconnected(_))
        ));
    }

    #[test]
    fn coordinates_round_trip() {
        let m = open_cylinder(1.0, 2.0, 12, 5).unwrap();
        let b = vector_heat_basis(&m, 20, Vec3::z(), None).unwrap();
        for (v, f) in b.frames().iter().enumerate() {
            let n = m.vertex_normal(v);
            let raw = Vec3::new(0.3, -1.1, 0.7);
            let tangent = raw - n * n.dot(&raw);
            let back = f.from_coords(f.to_coords(&tangent));
            assert!((back - tangent).norm() < 1e-10);
        }
    }

    #[test]
    fn interpolated_frames_are_orthonormal() {
        let m = open_cylinder(1.0, 2.0, 12, 5).unwrap();
        let b = vector_heat_basis(&m, 20, Vec3::z(), None).unwrap();
        for t in 0..m.triangle_count() {
            let f = b.interpolate(&m, &PointSample::new(&m, t, [0.2, 0.3, 0.5]));
            assert!(f.orthonormality_residual() < 1e-12);
            assert!((f.n - m.normal(t)).norm() < 1e-12);
        }
    }

    #[test]
    fn default_source_on_grid_is_tangent() {
        let m = build_unit_grid_mesh(7).unwrap();
        let (v, d) = default_source(&m);
        assert!(v < m.vertex_count());
        assert!(d.z.abs() < 1e-12 && d.norm() > 0.0);
    }
}
