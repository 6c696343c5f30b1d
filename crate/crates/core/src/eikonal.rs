//! Forward anisotropic eikonal solver on triangle meshes.
//!
//! Arrival times satisfy `sqrt(D grad(phi) . grad(phi)) = 1`. The discrete
//! problem is solved with the fast iterative method: an active list of
//! vertices is relaxed with a per-triangle local solver until no value
//! changes by more than `1e-9` times the current largest arrival time.

use std::collections::VecDeque;

use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector2};
use thiserror::Error;

use crate::basis::TangentBasis;
use crate::conductivity::{assemble_tensor, FiberParams};
use crate::mesh::TriMesh;
use crate::Vec3;

/// Relative convergence tolerance of the active-list iteration.
pub const FIM_RELATIVE_TOLERANCE: f64 = 1e-9;

/// Radius, as a fraction of the bounding-box diagonal, of the neighborhood
/// around each source initialized with the local constant-tensor solution.
pub const SOURCE_BALL_FRACTION: f64 = 0.1;

/// Gradient norm under which the local speed is undefined.
pub const CV_GRADIENT_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EikonalError {
    #[error("tensor on triangle {triangle} is not positive definite in its plane (eigenvalues {eigenvalues:?})")]
    NotPositiveDefinite { triangle: usize, eigenvalues: [f64; 2] },
    #[error("no source given")]
    NoSources,
    #[error("source vertex {0} out of range")]
    SourceOutOfRange(usize),
    #[error("tensor field has {got} entries, mesh has {expected} vertices")]
    SizeMismatch { expected: usize, got: usize },
    #[error("tensor is singular")]
    Singular,
}

/// Per-vertex conductivity tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductivityTensorField {
    tensors: Vec<Matrix3<f64>>,
}

impl ConductivityTensorField {
    pub fn new(tensors: Vec<Matrix3<f64>>) -> Self {
        Self { tensors }
    }

    /// Same tensor at every vertex.
    pub fn constant(mesh: &TriMesh, d: Matrix3<f64>) -> Self {
        Self::new(vec![d; mesh.vertex_count()])
    }

    /// Unit-speed isotropic field, `D = I - n n^T` after projection.
    pub fn isotropic(mesh: &TriMesh, speed_sq: f64) -> Self {
        Self::constant(mesh, Matrix3::identity() * speed_sq)
    }

    pub fn from_params(basis: &TangentBasis, params: &[FiberParams]) -> Self {
        Self::new(
            params
                .iter()
                .zip(basis.frames())
                .map(|(p, f)| assemble_tensor(p, f))
                .collect(),
        )
    }

    pub fn tensors(&self) -> &[Matrix3<f64>] {
        &self.tensors
    }

    pub fn tensor(&self, v: usize) -> &Matrix3<f64> {
        &self.tensors[v]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Vertex average projected onto the triangle plane.
    pub fn triangle_tensor(&self, mesh: &TriMesh, t: usize) -> Matrix3<f64> {
        let [a, b, c] = mesh.triangles()[t];
        let avg = (self.tensors[a] + self.tensors[b] + self.tensors[c]) / 3.0;
        let avg = (avg + avg.transpose()) * 0.5;
        let n = mesh.normal(t);
        let p = Matrix3::identity() - n * n.transpose();
        p * avg * p
    }

    /// Checks symmetry, tangential semi-definiteness and zero normal action
    /// of every triangle tensor.
    pub fn check_invariants(&self, mesh: &TriMesh) -> Result<(), String> {
        if self.tensors.len() != mesh.vertex_count() {
            return Err("size mismatch".into());
        }
        for t in 0..mesh.triangle_count() {
            let d = self.triangle_tensor(mesh, t);
            if (d - d.transpose()).abs().max() > 1e-12 {
                return Err(format!("triangle {t}: not symmetric"));
            }
            if (d * mesh.normal(t)).norm() > 1e-10 {
                return Err(format!("triangle {t}: nonzero normal action"));
            }
            let ev = tangential_eigenvalues(&d, mesh, t);
            if ev[0] < -1e-14 {
                return Err(format!("triangle {t}: negative tangential eigenvalue"));
            }
        }
        Ok(())
    }
}

/// In-plane orthonormal axes of a triangle (first edge direction, its
/// in-plane perpendicular).
fn triangle_axes(mesh: &TriMesh, t: usize) -> (Vec3, Vec3) {
    let [a, b, _] = mesh.triangles()[t];
    let u = (mesh.vertex(b) - mesh.vertex(a)).normalize();
    let w = mesh.normal(t).cross(&u);
    (u, w)
}

fn restrict(d: &Matrix3<f64>, u: &Vec3, w: &Vec3) -> Matrix2<f64> {
    Matrix2::new(
        u.dot(&(d * u)),
        u.dot(&(d * w)),
        w.dot(&(d * u)),
        w.dot(&(d * w)),
    )
}

fn tangential_eigenvalues(d: &Matrix3<f64>, mesh: &TriMesh, t: usize) -> [f64; 2] {
    let (u, w) = triangle_axes(mesh, t);
    let d2 = restrict(d, &u, &w);
    let e = SymmetricEigen::new((d2 + d2.transpose()) * 0.5).eigenvalues;
    [e[0].min(e[1]), e[0].max(e[1])]
}

/// Arrival-time map with its sources.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    pub times: Vec<f64>,
    pub sources: Vec<(usize, f64)>,
}

impl ActivationMap {
    pub fn max_finite_time(&self) -> f64 {
        self.times
            .iter()
            .copied()
            .filter(|t| t.is_finite())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_reachable(&self, v: usize) -> bool {
        self.times[v].is_finite()
    }
}

/// Triangle prepared for the local solver: vertex coordinates in the
/// triangle plane and the travel-time metric `D^{-1}` restricted to it.
#[derive(Debug, Clone, Copy)]
struct LocalTriangle {
    coords: [Vector2<f64>; 3],
    metric: Matrix2<f64>,
}

fn prepare_triangles(
    mesh: &TriMesh,
    field: &ConductivityTensorField,
) -> Result<Vec<LocalTriangle>, EikonalError> {
    if field.len() != mesh.vertex_count() {
        return Err(EikonalError::SizeMismatch {
            expected: mesh.vertex_count(),
            got: field.len(),
        });
    }
    (0..mesh.triangle_count())
        .map(|t| {
            let (u, w) = triangle_axes(mesh, t);
            let d2 = restrict(&field.triangle_tensor(mesh, t), &u, &w);
            let d2 = (d2 + d2.transpose()) * 0.5;
            let ev = SymmetricEigen::new(d2).eigenvalues;
            let (lo, hi) = (ev[0].min(ev[1]), ev[0].max(ev[1]));
            if !(lo > 1e-14 * hi.abs().max(1e-300)) || !lo.is_finite() {
                return Err(EikonalError::NotPositiveDefinite {
                    triangle: t,
                    eigenvalues: [lo, hi],
                });
            }
            let metric = d2.try_inverse().ok_or(EikonalError::NotPositiveDefinite {
                triangle: t,
                eigenvalues: [lo, hi],
            })?;
            let tri = mesh.triangles()[t];
            let o = mesh.vertex(tri[0]);
            let coords = tri.map(|i| {
                let p = mesh.vertex(i) - o;
                Vector2::new(p.dot(&u), p.dot(&w))
            });
            Ok(LocalTriangle {
                coords,
                metric: (metric + metric.transpose()) * 0.5,
            })
        })
        .collect()
}

fn metric_norm(m: &Matrix2<f64>, v: &Vector2<f64>) -> f64 {
    v.dot(&(m * v)).max(0.0).sqrt()
}

/// Smallest arrival time at `target` through the segment `[pa, pb]` with
/// known times `ta`, `tb`; linear interpolation of time along the segment.
fn triangle_update(
    ta: f64,
    tb: f64,
    pa: &Vector2<f64>,
    pb: &Vector2<f64>,
    target: &Vector2<f64>,
    m: &Matrix2<f64>,
) -> f64 {
    match (ta.is_finite(), tb.is_finite()) {
        (false, false) => return f64::INFINITY,
        (true, false) => return ta + metric_norm(m, &(target - pa)),
        (false, true) => return tb + metric_norm(m, &(target - pb)),
        _ => {}
    }
    let a = pb - pa;
    let b = target - pa;
    let ma = m * a;
    let aa = a.dot(&ma);
    let ab = b.dot(&ma);
    let bb = b.dot(&(m * b));
    let dt = tb - ta;
    let mut best = (ta + bb.max(0.0).sqrt()).min(tb + (aa - 2.0 * ab + bb).max(0.0).sqrt());
    if dt * dt < aa {
        let k = (bb - ab * ab / aa).max(0.0);
        let mu = -dt.signum() * dt.abs() * (k / (aa * (aa - dt * dt))).sqrt();
        let lambda = ab / aa + mu;
        if lambda > 0.0 && lambda < 1.0 {
            let q = bb - 2.0 * lambda * ab + lambda * lambda * aa;
            best = best.min(ta + lambda * dt + q.max(0.0).sqrt());
        }
    }
    best
}

struct FimSolver<'a> {
    mesh: &'a TriMesh,
    field: &'a ConductivityTensorField,
    local: Vec<LocalTriangle>,
    ball: f64,
}

impl FimSolver<'_> {
    /// Straight-line travel times from `s` under the tensor at `s`, for the
    /// vertices within a fraction `ball` of the mesh diagonal that are
    /// connected to `s` through vertices carrying the same tensor. Removes
    /// the logarithmic error of a point source. Empty if the tensor at `s` is
    /// not definite on its tangent plane.
    fn source_neighborhood(&self, s: usize) -> Vec<(usize, f64)> {
        let n = self.mesh.vertex_normal(s);
        let seed = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let u = (seed - n * n.dot(&seed)).normalize();
        let w = n.cross(&u);
        let ds = self.field.tensor(s);
        let d2 = restrict(ds, &u, &w);
        let Some(m) = ((d2 + d2.transpose()) * 0.5).try_inverse() else {
            return Vec::new();
        };
        if !(m[(0, 0)] > 0.0 && m.determinant() > 0.0) {
            return Vec::new();
        }
        let (lo, hi) = self.mesh.bounding_box();
        let radius = self.ball * (hi - lo).norm();
        let o = self.mesh.vertex(s);
        let same = |v: usize| (self.field.tensor(v) - ds).abs().max() <= 1e-9 * ds.abs().max();
        let mut seen = vec![s];
        let mut stack = vec![s];
        let mut out = Vec::new();
        while let Some(v) = stack.pop() {
            for &nb in self.mesh.vertex_neighbors(v) {
                if seen.contains(&nb) {
                    continue;
                }
                seen.push(nb);
                let p = self.mesh.vertex(nb) - o;
                if p.norm() <= radius && same(nb) {
                    out.push((nb, metric_norm(&m, &Vector2::new(p.dot(&u), p.dot(&w)))));
                    stack.push(nb);
                }
            }
        }
        out
    }


    fn solve_vertex(&self, v: usize, times: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        for &t in self.mesh.vertex_triangles(v) {
            let tri = self.mesh.triangles()[t];
            let k = tri.iter().position(|&x| x == v).unwrap();
            let (i, j) = ((k + 1) % 3, (k + 2) % 3);
            let lt = &self.local[t];
            let q = triangle_update(
                times[tri[i]],
                times[tri[j]],
                &lt.coords[i],
                &lt.coords[j],
                &lt.coords[k],
                &lt.metric,
            );
            best = best.min(q);
        }
        best
    }

    fn run(&self, sources: &[(usize, f64)]) -> Vec<f64> {
        let nv = self.mesh.vertex_count();
        let mut times = vec![f64::INFINITY; nv];
        let mut fixed = vec![false; nv];
        for &(v, t0) in sources {
            times[v] = times[v].min(t0);
            fixed[v] = true;
        }
        let mut in_list = vec![false; nv];
        let mut active = VecDeque::new();
        for &(s, t0) in sources {
            for (v, dt) in self.source_neighborhood(s) {
                times[v] = times[v].min(t0 + dt);
            }
        }
        for v in 0..nv {
            if times[v].is_finite() && !fixed[v] {
                in_list[v] = true;
                active.push_back(v);
            }
        }
        for &(s, _) in sources {
            for &nb in self.mesh.vertex_neighbors(s) {
                if !fixed[nb] && !in_list[nb] {
                    in_list[nb] = true;
                    active.push_back(nb);
                }
            }
        }
        let mut max_time = sources.iter().map(|s| s.1).fold(0.0f64, |a, b| a.max(b.abs()));
        while !active.is_empty() {
            let tol = FIM_RELATIVE_TOLERANCE * max_time;
            let sweep = active.len();
            for _ in 0..sweep {
                let v = active.pop_front().unwrap();
                let p = times[v];
                let q = self.solve_vertex(v, &times);
                if q < p {
                    times[v] = q;
                    if q.is_finite() {
                        max_time = max_time.max(q);
                    }
                }
                let converged = !(q < p - tol) || !q.is_finite();
                if converged {
                    in_list[v] = false;
                    for &nb in self.mesh.vertex_neighbors(v) {
                        if fixed[nb] || in_list[nb] {
                            continue;
                        }
                        let pn = times[nb];
                        let qn = self.solve_vertex(nb, &times);
                        if qn < pn - tol {
                            times[nb] = qn;
                            max_time = max_time.max(qn);
                            in_list[nb] = true;
                            active.push_back(nb);
                        }
                    }
                } else {
                    active.push_back(v);
                }
            }
        }
        times
    }
}

fn validate_sources(mesh: &TriMesh, sources: &[(usize, f64)]) -> Result<(), EikonalError> {
    if sources.is_empty() {
        return Err(EikonalError::NoSources);
    }
    if let Some(&(v, _)) = sources.iter().find(|s| s.0 >= mesh.vertex_count()) {
        return Err(EikonalError::SourceOutOfRange(v));
    }
    Ok(())
}

/// Arrival times from `sources` (vertex, initial time) under `field`.
/// Vertices not connected to any source keep an infinite time.
pub fn solve_fim(
    mesh: &TriMesh,
    field: &ConductivityTensorField,
    sources: &[(usize, f64)],
) -> Result<ActivationMap, EikonalError> {
    solve_fim_with_ball(mesh, field, sources, SOURCE_BALL_FRACTION)
}

/// [`solve_fim`] with an explicit source-neighborhood radius; `0` gives the
/// plain point-source scheme.
pub fn solve_fim_with_ball(
    mesh: &TriMesh,
    field: &ConductivityTensorField,
    sources: &[(usize, f64)],
    ball_fraction: f64,
) -> Result<ActivationMap, EikonalError> {
    validate_sources(mesh, sources)?;
    let solver = FimSolver {
        mesh,
        field,
        local: prepare_triangles(mesh, field)?,
        ball: ball_fraction.max(0.0),
    };
    Ok(ActivationMap {
        times: solver.run(sources),
        sources: sources.to_vec(),
    })
}

/// One independent solve per source set, sharing the prepared triangles.
pub fn solve_fim_many(
    mesh: &TriMesh,
    field: &ConductivityTensorField,
    source_sets: &[Vec<(usize, f64)>],
) -> Result<Vec<ActivationMap>, EikonalError> {
    for s in source_sets {
        validate_sources(mesh, s)?;
    }
    let solver = FimSolver {
        mesh,
        field,
        local: prepare_triangles(mesh, field)?,
        ball: SOURCE_BALL_FRACTION,
    };
    Ok(crate::exec::map_slice(source_sets, |s| ActivationMap {
        times: solver.run(s),
        sources: s.clone(),
    }))
}

/// Unit-speed geodesic distance from a set of vertices.
pub fn geodesic_distance(mesh: &TriMesh, from: &[usize]) -> Result<Vec<f64>, EikonalError> {
    let sources: Vec<(usize, f64)> = from.iter().map(|&v| (v, 0.0)).collect();
    solve_fim(mesh, &ConductivityTensorField::isotropic(mesh, 1.0), &sources).map(|m| m.times)
}

/// `sqrt(D^{-1} x . x)`: arrival time at `x` for a constant 2-D tensor and a
/// source at the origin.
pub fn analytic_constant_tensor_map(d: &Matrix2<f64>, x: &Vector2<f64>) -> Result<f64, EikonalError> {
    let det = d.determinant();
    if !(det.abs() > 1e-300) {
        return Err(EikonalError::Singular);
    }
    let inv = d.try_inverse().ok_or(EikonalError::Singular)?;
    Ok(x.dot(&(inv * x)).max(0.0).sqrt())
}

/// Same as [`analytic_constant_tensor_map`] for a tangential 3x3 tensor
/// acting on the plane with normal `normal`.
pub fn analytic_constant_tensor_map_3d(
    d: &Matrix3<f64>,
    normal: &Vec3,
    x: &Vec3,
) -> Result<f64, EikonalError> {
    let n = normal.normalize();
    let seed = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = (seed - n * n.dot(&seed)).normalize();
    let w = n.cross(&u);
    let d2 = restrict(d, &u, &w);
    analytic_constant_tensor_map(&d2, &Vector2::new(x.dot(&u), x.dot(&w)))
}

/// Gradient of the piecewise-linear interpolant on each triangle. Triangles
/// touching a non-finite value get a NaN gradient.
pub fn map_gradient(mesh: &TriMesh, times: &[f64]) -> Vec<Vec3> {
    (0..mesh.triangle_count())
        .map(|t| {
            let tri = mesh.triangles()[t];
            let n = mesh.normal(t);
            let p = tri.map(|i| mesh.vertex(i));
            let scale = 1.0 / (2.0 * mesh.area(t));
            (0..3)
                .map(|k| {
                    let e = p[(k + 2) % 3] - p[(k + 1) % 3];
                    n.cross(&e) * (times[tri[k]] * scale)
                })
                .sum()
        })
        .collect()
}

/// Local speed `1 / |grad phi|` per triangle; `None` where the gradient is
/// too small for the speed to be defined (front collisions, breakthroughs).
pub fn local_cv(mesh: &TriMesh, times: &[f64]) -> Vec<Option<f64>> {
    map_gradient(mesh, times)
        .into_iter()
        .map(|g| {
            let n = g.norm();
            (n > CV_GRADIENT_EPS).then(|| 1.0 / n)
        })
        .collect()
}
