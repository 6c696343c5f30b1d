//! Sampling designs: Latin hypercube points in a box and farthest-point
//! selection of pacing sites on a mesh.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::eikonal::{geodesic_distance, EikonalError};
use crate::mesh::TriMesh;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Eikonal(#[from] EikonalError),
}

/// `n` points in the box `[lo, hi]` with exactly one point per stratum of
/// width `(hi - lo) / n` on every axis.
pub fn latin_hypercube_sample<const D: usize>(
    n: usize,
    lo: [f64; D],
    hi: [f64; D],
    seed: u64,
) -> Result<Vec<[f64; D]>, SamplingError> {
    if n == 0 {
        return Err(SamplingError::InvalidArgument("n must be at least 1".into()));
    }
    if let Some(k) = (0..D).find(|&k| !(hi[k] > lo[k]) || !lo[k].is_finite() || !hi[k].is_finite()) {
        return Err(SamplingError::InvalidArgument(format!("degenerate bounds on axis {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![[0.0; D]; n];
    for k in 0..D {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        let width = (hi[k] - lo[k]) / n as f64;
        for (p, &s) in points.iter_mut().zip(&strata) {
            let u: f64 = rng.random();
            let x = lo[k] + (s as f64 + u) * width;
            // keep rounding inside the stratum
            let top = lo[k] + (s + 1) as f64 * width;
            p[k] = if x >= top { lo[k] + s as f64 * width } else { x };
        }
    }
    Ok(points)
}

/// Greedy farthest-point selection under unit-speed geodesic distance.
/// The first element is `start`; ties go to the lowest vertex index.
pub fn farthest_point_sample(mesh: &TriMesh, k: usize, start: usize) -> Result<Vec<usize>, SamplingError> {
    farthest_point_sample_with_distances(mesh, k, start).map(|(s, _)| s)
}

/// As [`farthest_point_sample`], also returning the distance from each
/// selected vertex to those selected before it (infinite for the first).
pub fn farthest_point_sample_with_distances(
    mesh: &TriMesh,
    k: usize,
    start: usize,
) -> Result<(Vec<usize>, Vec<f64>), SamplingError> {
    let nv = mesh.vertex_count();
    if k == 0 || k > nv {
        return Err(SamplingError::InvalidArgument(format!(
            "k = {k} must be in 1..={nv}"
        )));
    }
    if start >= nv {
        return Err(SamplingError::InvalidArgument(format!("start vertex {start} out of range")));
    }
    let mut selected = vec![start];
    let mut gaps = vec![f64::INFINITY];
    let mut nearest = geodesic_distance(mesh, &[start])?;
    while selected.len() < k {
        let mut best = None::<(usize, f64)>;
        for (v, &d) in nearest.iter().enumerate() {
            if selected.contains(&v) {
                continue;
            }
            if best.is_none_or(|(_, b)| d > b) {
                best = Some((v, d));
            }
        }
        let (v, d) = best.expect("k <= vertex count");
        selected.push(v);
        gaps.push(d);
        let dv = geodesic_distance(mesh, &[v])?;
        for (n, x) in nearest.iter_mut().zip(dv) {
            *n = n.min(x);
        }
    }
    Ok((selected, gaps))
}

/// Uniform random point in `[lo, hi]`.
pub fn uniform_in_box<const D: usize, R: Rng + ?Sized>(lo: [f64; D], hi: [f64; D], rng: &mut R) -> [f64; D] {
    std::array::from_fn(|k| rng.random_range(lo[k]..hi[k]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_unit_grid_mesh;
    use proptest::prelude::*;

    fn check_strata<const D: usize>(pts: &[[f64; D]], lo: [f64; D], hi: [f64; D]) -> bool {
        let n = pts.len();
        (0..D).all(|k| {
            let w = (hi[k] - lo[k]) / n as f64;
            let mut hit = vec![false; n];
            for p in pts {
                if p[k] < lo[k] || p[k] >= hi[k] {
                    return false;
                }
                let s = (((p[k] - lo[k]) / w).floor() as usize).min(n - 1);
                // guard against floor rounding at a stratum edge
                let s = if p[k] < lo[k] + s as f64 * w { s - 1 } else { s };
                hit[s] = true;
            }
            hit.iter().all(|&h| h)
        })
    }

    #[test]
    fn lhs_examples() {
        let one = latin_hypercube_sample(1, [-1.0; 2], [1.0; 2], 3).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one[0].iter().all(|x| (-1.0..1.0).contains(x)));

        let five = latin_hypercube_sample(5, [-1.0; 2], [1.0; 2], 11).unwrap();
        for k in 0..2 {
            let mut xs: Vec<f64> = five.iter().map(|p| p[k]).collect();
            xs.sort_by(f64::total_cmp);
            for (i, x) in xs.iter().enumerate() {
                let lo = -1.0 + 0.4 * i as f64;
                assert!(*x >= lo && *x < lo + 0.4, "axis {k}: {x} not in stratum {i}");
            }
        }
        assert_eq!(five, latin_hypercube_sample(5, [-1.0; 2], [1.0; 2], 11).unwrap());
        assert_ne!(five, latin_hypercube_sample(5, [-1.0; 2], [1.0; 2], 12).unwrap());
        assert!(latin_hypercube_sample(0, [-1.0; 2], [1.0; 2], 0).is_err());
        assert!(latin_hypercube_sample(3, [0.0; 2], [0.0, 1.0], 0).is_err());
    }

    #[test]
    fn lhs_stratified_for_all_small_n() {
        for n in 1..=100 {
            let p2 = latin_hypercube_sample(n, [-1.0; 2], [1.0; 2], n as u64).unwrap();
            assert!(check_strata(&p2, [-1.0; 2], [1.0; 2]), "n = {n}");
            let p3 = latin_hypercube_sample(n, [0.0, -2.0, 5.0], [1.0, 3.0, 5.5], 7 * n as u64).unwrap();
            assert!(check_strata(&p3, [0.0, -2.0, 5.0], [1.0, 3.0, 5.5]), "n = {n}");
        }
    }

    proptest! {
        #[test]
        fn lhs_stratified_any_seed(n in 1usize..100, seed in any::<u64>(), a in -10.0f64..10.0, w in 1e-3f64..20.0) {
            let pts = latin_hypercube_sample(n, [a, -w], [a + w, 0.0], seed).unwrap();
            prop_assert!(check_strata(&pts, [a, -w], [a + w, 0.0]));
        }
    }

    #[test]
    fn fps_examples() {
        let mesh = build_unit_grid_mesh(9).unwrap();
        assert_eq!(farthest_point_sample(&mesh, 1, 40).unwrap(), vec![40]);
        // (-1, -1) is vertex 0, (1, 1) is vertex 80
        assert_eq!(farthest_point_sample(&mesh, 2, 0).unwrap(), vec![0, 80]);
        assert!(farthest_point_sample(&mesh, 82, 0).is_err());
        assert!(farthest_point_sample(&mesh, 0, 0).is_err());
        assert!(farthest_point_sample(&mesh, 2, 81).is_err());
    }

    #[test]
    fn fps_second_point_matches_brute_force() {
        let mesh = build_unit_grid_mesh(7).unwrap();
        let d0 = geodesic_distance(&mesh, &[0]).unwrap();
        let far = (0..mesh.vertex_count())
            .fold(0, |b, v| if d0[v] > d0[b] { v } else { b });
        assert_eq!(far, 48);
        assert_eq!(farthest_point_sample(&mesh, 2, 0).unwrap()[1], far);
    }

    #[test]
    fn fps_greedy_property() {
        let mesh = build_unit_grid_mesh(15).unwrap();
        let (sel, gaps) = farthest_point_sample_with_distances(&mesh, 5, 37).unwrap();
        assert_eq!(sel[0], 37);
        let last = gaps[4];
        for (i, &a) in sel.iter().enumerate() {
            let da = geodesic_distance(&mesh, &[a]).unwrap();
            for &b in &sel[i + 1..] {
                assert!(da[b] >= last - 1e-9, "{a}->{b}: {} < {last}", da[b]);
            }
        }
        for w in gaps[1..].windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
        assert_eq!(sel, farthest_point_sample(&mesh, 5, 37).unwrap());
    }
}
