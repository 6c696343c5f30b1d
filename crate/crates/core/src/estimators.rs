//! Data-driven baselines and error metrics.
//!
//! The baseline fits a tensor per vertex directly to estimated map
//! gradients by minimizing `sum_m (sqrt(D g_m . g_m) - 1)^2`. The metrics
//! compare fiber fields and activation maps; the unseen-map check simulates
//! a map from a new source under learned and true tensors.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::basis::{Frame, TangentBasis};
use crate::conductivity::FiberParams;
use crate::eikonal::{solve_fim, ActivationMap, ConductivityTensorField, EikonalError};
use crate::exec;
use crate::io::SampleRecord;
use crate::mesh::TriMesh;
use crate::Vec3;

/// Samples of the fiber cosine in the coarse search.
pub const FIT_GRID_SAMPLES: usize = 65;
/// Relative singular-value threshold for the rank diagnostics.
pub const RANK_TOLERANCE: f64 = 1e-8;
const FIT_MAX_ITERATIONS: usize = 500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("vertex {0} has no gradients")]
    NoGradients(usize),
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("zero vector in angle comparison")]
    ZeroVector,
    #[error("no values to summarize")]
    Empty,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Eikonal(#[from] EikonalError),
}

/// Result of the tensor fit at one vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexFit {
    pub params: FiberParams,
    /// Objective value at the returned minimizer.
    pub residual: f64,
    /// Rank of the rows `[g1^2, 2 g1 g2, g2^2]` of the normalized gradients.
    /// The tensor is determined by the maps only when this is 3.
    pub rank: usize,
    /// Ratio of extreme singular values of those rows (infinite when
    /// rank deficient).
    pub condition: f64,
    pub unique: bool,
    /// Both squared speeds are positive, so the tensor is usable by the
    /// forward solver.
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub vertices: Vec<VertexFit>,
}

impl FitReport {
    pub fn params(&self) -> Vec<FiberParams> {
        self.vertices.iter().map(|v| v.params).collect()
    }

    pub fn all_unique(&self) -> bool {
        self.vertices.iter().all(|v| v.unique)
    }

    pub fn none_unique(&self) -> bool {
        self.vertices.iter().all(|v| !v.unique)
    }

    pub fn total_residual(&self) -> f64 {
        self.vertices.iter().map(|v| v.residual).sum()
    }

    pub fn tensor_field(&self, basis: &TangentBasis) -> ConductivityTensorField {
        ConductivityTensorField::from_params(basis, &self.params())
    }
}

/// `(u, t)`: components of `g` along the fiber at angle `theta` and across it.
fn rotated(theta: f64, g: &Vector2<f64>) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    (c * g.x + s * g.y, -s * g.x + c * g.y)
}

fn objective(p: &Vector3<f64>, grads: &[Vector2<f64>]) -> f64 {
    grads
        .iter()
        .map(|g| {
            let (u, t) = rotated(p.x, g);
            let r = (p.y * u * u + p.z * t * t).max(0.0).sqrt() - 1.0;
            r * r
        })
        .sum()
}

/// Least-squares `(e1, e2)` of `e1 u^2 + e2 t^2 = 1` at fixed angle, clipped
/// to be nonnegative. The minimum-norm solution is used when the system is
/// underdetermined.
fn linear_speeds(theta: f64, grads: &[Vector2<f64>]) -> (f64, f64) {
    let m = grads.len();
    let mut a = DMatrix::zeros(m, 2);
    for (i, g) in grads.iter().enumerate() {
        let (u, t) = rotated(theta, g);
        a[(i, 0)] = u * u;
        a[(i, 1)] = t * t;
    }
    let b = DVector::from_element(m, 1.0);
    let x = a
        .svd(true, true)
        .solve(&b, RANK_TOLERANCE)
        .unwrap_or_else(|_| DVector::zeros(2));
    (x[0].max(0.0), x[1].max(0.0))
}

/// Levenberg-Marquardt on `(theta, e1, e2)` with the speeds kept
/// nonnegative by projection.
fn refine(mut p: Vector3<f64>, grads: &[Vector2<f64>]) -> Vector3<f64> {
    let mut f = objective(&p, grads);
    let mut lambda = 1e-3;
    for _ in 0..FIT_MAX_ITERATIONS {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for g in grads {
            let (u, t) = rotated(p.x, g);
            let q = p.y * u * u + p.z * t * t;
            let root = q.max(1e-300).sqrt();
            let r = root - 1.0;
            let k = 0.5 / root;
            let j = Vector3::new(k * 2.0 * (p.y - p.z) * u * t, k * u * u, k * t * t);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        if jtr.norm() < 1e-15 {
            break;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj;
            for i in 0..3 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&-jtr) else {
                lambda *= 10.0;
                continue;
            };
            let mut cand = p + step;
            cand.y = cand.y.max(0.0);
            cand.z = cand.z.max(0.0);
            let fc = objective(&cand, grads);
            if fc < f {
                let done = (cand - p).norm() < 1e-15 * (1.0 + p.norm());
                p = cand;
                f = fc;
                lambda = (lambda * 0.1).max(1e-15);
                improved = !done;
                break;
            }
            lambda *= 10.0;
        }
        if !improved || f < 1e-30 {
            break;
        }
    }
    p
}

/// Rank and conditioning of the quadratic-form rows of the gradient
/// directions.
fn identifiability(grads: &[Vector2<f64>]) -> (usize, f64) {
    let rows: Vec<[f64; 3]> = grads
        .iter()
        .filter(|g| g.norm() > 0.0)
        .map(|g| {
            let d = g.normalize();
            [d.x * d.x, 2.0 * d.x * d.y, d.y * d.y]
        })
        .collect();
    if rows.is_empty() {
        return (0, f64::INFINITY);
    }
    let m = DMatrix::from_fn(rows.len(), 3, |i, j| rows[i][j]);
    let sv = m.singular_values();
    let max = sv.max();
    let rank = sv.iter().filter(|s| **s > RANK_TOLERANCE * max).count();
    let condition = if rank == 3 { max / sv.min() } else { f64::INFINITY };
    (rank, condition)
}

/// Fits `(a, e1, e2)` to the tangential gradients `g` of one vertex.
pub fn fit_vertex(grads: &[Vector2<f64>]) -> VertexFit {
    let mut best = (f64::INFINITY, Vector3::zeros());
    for k in 0..FIT_GRID_SAMPLES {
        let a = -1.0 + 2.0 * k as f64 / (FIT_GRID_SAMPLES - 1) as f64;
        let theta = a.clamp(-1.0, 1.0).acos();
        let (e1, e2) = linear_speeds(theta, grads);
        let p = Vector3::new(theta, e1, e2);
        let f = objective(&p, grads);
        if f < best.0 {
            best = (f, p);
        }
    }
    let p = refine(best.1, grads);
    let residual = objective(&p, grads);
    let theta = p.x.rem_euclid(std::f64::consts::PI);
    let (rank, condition) = identifiability(grads);
    VertexFit {
        params: FiberParams {
            a: theta.cos(),
            e1: p.y,
            e2: p.z,
        },
        residual,
        rank,
        condition,
        unique: grads.len() >= 3 && rank == 3,
        feasible: p.y > 0.0 && p.z > 0.0,
    }
}

/// Fits a tensor at every vertex. `gradients[m][v]` is the gradient of map
/// `m` at vertex `v`; only its tangential part in the vertex frame is used.
pub fn fit_tensor_from_gradients(gradients: &[Vec<Vec3>], basis: &TangentBasis) -> Result<FitReport, EstimatorError> {
    let n = basis.len();
    if gradients.is_empty() {
        return Err(EstimatorError::NoGradients(0));
    }
    for g in gradients {
        if g.len() != n {
            return Err(EstimatorError::LengthMismatch {
                expected: n,
                got: g.len(),
            });
        }
    }
    let vertices = exec::map_range(n, |v| {
        let f = basis.frame(v);
        let local: Vec<Vector2<f64>> = gradients
            .iter()
            .map(|g| Vector2::from(f.to_coords(&g[v])))
            .collect();
        fit_vertex(&local)
    });
    Ok(FitReport { vertices })
}

/// Frobenius norm of the difference of two tensors restricted to the
/// tangent plane of `frame`.
pub fn tangential_frobenius_error(truth: &Matrix3<f64>, fitted: &Matrix3<f64>, frame: &Frame) -> f64 {
    let diff = truth - fitted;
    let b = [frame.v1, frame.v2];
    let local = Matrix2::from_fn(|i, j| b[i].dot(&(diff * b[j])));
    local.norm()
}

/// Tangential gradients at each vertex from scattered samples of one map,
/// by a least-squares plane through the `k` nearest samples in the vertex
/// tangent plane. Vertices whose neighborhood is degenerate get a zero
/// gradient.
pub fn estimate_vertex_gradients(
    mesh: &TriMesh,
    basis: &TangentBasis,
    positions: &[Vec3],
    times: &[f64],
    k: usize,
) -> Result<Vec<Vec3>, EstimatorError> {
    if positions.len() != times.len() {
        return Err(EstimatorError::LengthMismatch {
            expected: positions.len(),
            got: times.len(),
        });
    }
    if positions.len() < 3 || k < 3 {
        return Err(EstimatorError::InvalidArgument(
            "gradient estimation needs at least 3 samples and neighbors".into(),
        ));
    }
    let k = k.min(positions.len());
    Ok(exec::map_range(mesh.vertex_count(), |v| {
        let x = mesh.vertex(v);
        let frame = basis.frame(v);
        let mut order: Vec<(f64, usize)> = positions
            .iter()
            .enumerate()
            .map(|(i, p)| ((p - x).norm_squared(), i))
            .collect();
        order.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let near = &order[..k];
        let rows = DMatrix::from_fn(k, 3, |r, c| {
            let d = frame.to_coords(&(positions[near[r].1] - x));
            [1.0, d[0], d[1]][c]
        });
        let rhs = DVector::from_fn(k, |r, _| times[near[r].1]);
        let svd = rows.svd(true, true);
        let max = svd.singular_values.max();
        if svd.singular_values.min() <= 1e-8 * max {
            return Vec3::zeros();
        }
        match svd.solve(&rhs, 0.0) {
            Ok(c) => frame.from_coords([c[1], c[2]]),
            Err(_) => Vec3::zeros(),
        }
    }))
}

/// Unsigned angle between two line directions, in degrees.
pub fn fiber_angle_error(truth: &Vec3, predicted: &Vec3) -> Result<f64, EstimatorError> {
    let (nt, np) = (truth.norm(), predicted.norm());
    if nt == 0.0 || np == 0.0 {
        return Err(EstimatorError::ZeroVector);
    }
    let c = (truth.dot(predicted) / (nt * np)).abs().min(1.0);
    Ok(c.acos().to_degrees())
}

/// Root mean squared difference.
pub fn map_rmse(predicted: &[f64], truth: &[f64]) -> Result<f64, EstimatorError> {
    if predicted.len() != truth.len() {
        return Err(EstimatorError::LengthMismatch {
            expected: truth.len(),
            got: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(EstimatorError::Empty);
    }
    let sum: f64 = predicted.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sum / truth.len() as f64).sqrt())
}

/// Adds zero-mean Gaussian noise of standard deviation `sigma` to every
/// time.
pub fn add_noise(samples: &[SampleRecord], sigma: f64, seed: u64) -> Result<Vec<SampleRecord>, EstimatorError> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(EstimatorError::InvalidArgument(format!("noise level {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(samples.to_vec());
    }
    let normal = Normal::new(0.0, sigma).expect("valid standard deviation");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(samples
        .iter()
        .map(|s| SampleRecord {
            time_ms: s.time_ms + normal.sample(&mut rng),
            ..*s
        })
        .collect())
}

/// Maps from a held-out source under the learned and the true tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct UnseenMapValidation {
    /// Over vertices reached in both maps.
    pub rmse: f64,
    pub learned: ActivationMap,
    pub truth: ActivationMap,
}

pub fn validate_unseen_map(
    mesh: &TriMesh,
    learned: &ConductivityTensorField,
    truth: &ConductivityTensorField,
    source: usize,
) -> Result<UnseenMapValidation, EstimatorError> {
    let ml = solve_fim(mesh, learned, &[(source, 0.0)])?;
    let mt = solve_fim(mesh, truth, &[(source, 0.0)])?;
    let (p, t): (Vec<f64>, Vec<f64>) = ml
        .times
        .iter()
        .zip(&mt.times)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(a, b)| (*a, *b))
        .unzip();
    let rmse = map_rmse(&p, &t)?;
    Ok(UnseenMapValidation {
        rmse,
        learned: ml,
        truth: mt,
    })
}

/// Mean and quartiles of a set of values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
}

/// Percentile `q` in [0, 100] of sorted values, interpolating linearly
/// between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Result<Summary, EstimatorError> {
    if values.is_empty() {
        return Err(EstimatorError::Empty);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(Summary {
        count: v.len(),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        median: percentile(&v, 50.0),
        p25: percentile(&v, 25.0),
        p75: percentile(&v, 75.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::trivial_planar_basis;
    use crate::conductivity::assemble_tensor;
    use crate::mesh::build_unit_grid_mesh;
    use proptest::prelude::*;

    fn local_grads(d: &Matrix2<f64>, dirs: &[f64]) -> Vec<Vector2<f64>> {
        // Exact gradients of plane waves with unit directional speed:
        // g = k / sqrt(D k . k).
        dirs.iter()
            .map(|t| {
                let k = Vector2::new(t.cos(), t.sin());
                k / (k.dot(&(d * k))).sqrt()
            })
            .collect()
    }

    fn local_tensor(p: &FiberParams) -> Matrix2<f64> {
        let d = assemble_tensor(p, &Frame::planar());
        d.fixed_view::<2, 2>(0, 0).into_owned()
    }

    #[test]
    fn three_exact_maps_recover_tensor() {
        for truth in [
            FiberParams { a: 1.0, e1: 1.0, e2: 0.5 },
            FiberParams { a: 0.3, e1: 2.0, e2: 0.4 },
            FiberParams { a: -0.8, e1: 0.36, e2: 0.16 },
        ] {
            let d = local_tensor(&truth);
            let g = local_grads(&d, &[0.1, 1.2, 2.4]);
            let fit = fit_vertex(&g);
            let err = (local_tensor(&fit.params) - d).norm();
            assert!(err < 1e-6, "{truth:?} -> {:?}, error {err}", fit.params);
            assert!(fit.unique && fit.feasible && fit.rank == 3);
            // The true tensor has zero residual.
            assert!(fit.residual <= 1e-9);
        }
    }

    #[test]
    fn parallel_and_single_gradients_are_not_unique() {
        let d = local_tensor(&FiberParams { a: 1.0, e1: 1.0, e2: 0.5 });
        let g = local_grads(&d, &[0.4, 0.4]);
        let fit = fit_vertex(&g);
        assert!(!fit.unique);
        assert_eq!(fit.rank, 1);
        let g = local_grads(&d, &[0.4, 0.4 + std::f64::consts::PI, 0.4]);
        assert!(!fit_vertex(&g).unique);
        let single = fit_vertex(&local_grads(&d, &[0.7]));
        assert!(!single.unique);
        assert!(single.residual < 1e-12);
    }

    #[test]
    fn field_fit_on_grid() {
        let mesh = build_unit_grid_mesh(5).unwrap();
        let basis = trivial_planar_basis(&mesh).unwrap();
        let truth = FiberParams { a: 1.0, e1: 1.0, e2: 0.5 };
        let d = local_tensor(&truth);
        let grads: Vec<Vec<Vec3>> = local_grads(&d, &[0.0, 1.0, 2.0])
            .into_iter()
            .map(|g| vec![Vec3::new(g.x, g.y, 0.0); mesh.vertex_count()])
            .collect();
        let report = fit_tensor_from_gradients(&grads, &basis).unwrap();
        assert!(report.all_unique());
        let dt = assemble_tensor(&truth, &Frame::planar());
        for (v, f) in report.vertices.iter().enumerate() {
            let df = assemble_tensor(&f.params, basis.frame(v));
            assert!(tangential_frobenius_error(&dt, &df, basis.frame(v)) < 1e-6);
        }
        let one = fit_tensor_from_gradients(&grads[..1], &basis).unwrap();
        assert!(one.none_unique());
        assert!(fit_tensor_from_gradients(&[], &basis).is_err());
        assert!(fit_tensor_from_gradients(&[vec![Vec3::x(); 3]], &basis).is_err());
    }

    #[test]
    fn gradients_from_scattered_linear_samples_are_exact() {
        let mesh = build_unit_grid_mesh(6).unwrap();
        let basis = trivial_planar_basis(&mesh).unwrap();
        let g = Vec3::new(0.7, -1.3, 0.0);
        let positions: Vec<Vec3> = (0..40)
            .map(|i| {
                let t = i as f64 * 0.61803398875;
                Vec3::new((t * 7.0).sin(), (t * 3.0).cos(), 0.0)
            })
            .collect();
        let times: Vec<f64> = positions.iter().map(|p| 2.0 + g.dot(p)).collect();
        let est = estimate_vertex_gradients(&mesh, &basis, &positions, &times, 8).unwrap();
        for e in est {
            assert!((e - g).norm() < 1e-9);
        }
    }

    #[test]
    fn angle_error_examples() {
        let f = Vec3::new(1.0, 0.0, 0.0);
        assert_eq!(fiber_angle_error(&f, &f).unwrap(), 0.0);
        assert_eq!(fiber_angle_error(&f, &-f).unwrap(), 0.0);
        let g = Vec3::new(30f64.to_radians().cos(), 30f64.to_radians().sin(), 0.0);
        assert!((fiber_angle_error(&f, &g).unwrap() - 30.0).abs() < 1e-12);
        assert_eq!(fiber_angle_error(&f, &Vec3::zeros()), Err(EstimatorError::ZeroVector));
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(map_rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((map_rmse(&[1.5, 2.5, 0.5], &[1.0, 2.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(map_rmse(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(map_rmse(&[0.0], &[1.0, 1.0]).is_err());
    }

    fn samples(n: usize) -> Vec<SampleRecord> {
        (0..n)
            .map(|i| SampleRecord {
                map_id: i % 3,
                x: i as f64,
                y: -(i as f64),
                z: 0.5,
                time_ms: 10.0,
            })
            .collect()
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let s = samples(10_000);
        assert_eq!(add_noise(&s, 0.0, 3).unwrap(), s);
        let a = add_noise(&s, 1.0, 3).unwrap();
        assert_eq!(a, add_noise(&s, 1.0, 3).unwrap());
        assert_ne!(a, add_noise(&s, 1.0, 4).unwrap());
        let d: Vec<f64> = a.iter().map(|r| r.time_ms - 10.0).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let std = (d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        assert!((0.97..=1.03).contains(&std), "std {std}");
        for (x, y) in a.iter().zip(&s) {
            assert_eq!((x.map_id, x.x, x.y, x.z), (y.map_id, y.x, y.y, y.z));
        }
        assert!(add_noise(&s, -1.0, 0).is_err());
    }

    #[test]
    fn unseen_map_validation() {
        let mesh = build_unit_grid_mesh(11).unwrap();
        let basis = trivial_planar_basis(&mesh).unwrap();
        let p = vec![FiberParams { a: 1.0, e1: 1.0, e2: 0.5 }; mesh.vertex_count()];
        let truth = ConductivityTensorField::from_params(&basis, &p);
        let same = validate_unseen_map(&mesh, &truth, &truth, 17).unwrap();
        assert_eq!(same.rmse, 0.0);
        let iso = ConductivityTensorField::isotropic(&mesh, 0.5);
        let other = validate_unseen_map(&mesh, &iso, &truth, 17).unwrap();
        assert!(other.rmse > 0.0);
        assert!(validate_unseen_map(&mesh, &iso, &truth, 1000).is_err());
    }

    #[test]
    fn summary_quartiles() {
        let s = summarize(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!((s.mean, s.median, s.p25, s.p75), (3.0, 3.0, 2.0, 4.0));
        let s = summarize(&[0.0, 10.0]).unwrap();
        assert_eq!((s.median, s.p25, s.p75), (5.0, 2.5, 7.5));
        assert!(summarize(&[]).is_err());
    }

    proptest! {
        #[test]
        fn angle_error_is_symmetric_and_bounded(
            a in prop::array::uniform3(-1.0f64..1.0),
            b in prop::array::uniform3(-1.0f64..1.0),
        ) {
            let (u, v) = (Vec3::from(a), Vec3::from(b));
            prop_assume!(u.norm() > 1e-3 && v.norm() > 1e-3);
            let e = fiber_angle_error(&u, &v).unwrap();
            prop_assert!((0.0..=90.0).contains(&e));
            prop_assert!((e - fiber_angle_error(&v, &u).unwrap()).abs() < 1e-9);
            prop_assert!((e - fiber_angle_error(&-u, &v).unwrap()).abs() < 1e-9);
            prop_assert!((e - fiber_angle_error(&u, &-v).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn fit_residual_not_above_truth(
            theta in 0.0f64..std::f64::consts::PI,
            e1 in 0.2f64..2.0,
            e2 in 0.1f64..1.0,
            d0 in 0.0f64..1.0,
        ) {
            let truth = FiberParams { a: theta.cos(), e1, e2 };
            let d = local_tensor(&truth);
            let g = local_grads(&d, &[d0, d0 + 1.0, d0 + 2.1]);
            let fit = fit_vertex(&g);
            let at_truth = objective(&Vector3::new(theta, e1, e2), &g);
            prop_assert!(fit.residual <= at_truth + 1e-9);
        }
    }
}
