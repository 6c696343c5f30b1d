//! The `(a, e1, e2)` parameterization of the conduction-velocity tensor.
//!
//! `a` is the cosine of the fiber angle measured from `v1`, `e1` and `e2`
//! are the squared longitudinal and transverse speeds. The tensor is
//! `D = e1 l l^T + e2 t t^T` with `l = a v1 + sqrt(1 - a^2) v2` and
//! `t = -sqrt(1 - a^2) v1 + a v2`, so `D n = 0` by construction.

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::Frame;
use crate::Vec3;

/// Default cap on the squared speed (1.5 m/s squared).
pub const DEFAULT_SPEED_SQ_CAP: f64 = 2.25;

/// Relative gap under which the two tangential eigenvalues count as equal.
pub const DEGENERATE_EIGEN_GAP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FiberParamsError {
    #[error("fiber cosine {0} outside [-1, 1]")]
    CosineOutOfRange(f64),
    #[error("squared speed {value} outside (0, {cap}]")]
    SpeedOutOfRange { value: f64, cap: f64 },
}

/// Pointwise fiber parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberParams {
    pub a: f64,
    pub e1: f64,
    pub e2: f64,
}

impl FiberParams {
    /// Validated constructor; `cap` is the squared-speed ceiling.
    pub fn new(a: f64, e1: f64, e2: f64, cap: f64) -> Result<Self, FiberParamsError> {
        if !(-1.0..=1.0).contains(&a) {
            return Err(FiberParamsError::CosineOutOfRange(a));
        }
        for e in [e1, e2] {
            if !(e > 0.0 && e <= cap) {
                return Err(FiberParamsError::SpeedOutOfRange { value: e, cap });
            }
        }
        Ok(Self { a, e1, e2 })
    }

    /// Parameters for fibers at `angle` radians from `v1` with the given speeds.
    pub fn from_angle_and_speeds(angle: f64, v_long: f64, v_trans: f64) -> Self {
        // l(a) only covers [0, pi]; fibers are unsigned lines
        let angle = angle.rem_euclid(std::f64::consts::PI);
        Self {
            a: angle.cos(),
            e1: v_long * v_long,
            e2: v_trans * v_trans,
        }
    }

    pub fn longitudinal_speed(&self) -> f64 {
        self.e1.sqrt()
    }

    pub fn transverse_speed(&self) -> f64 {
        self.e2.sqrt()
    }
}

/// Fiber and transverse unit vectors for cosine `a` in `frame`.
pub fn fiber_and_transverse(a: f64, frame: &Frame) -> (Vec3, Vec3) {
    let a = a.clamp(-1.0, 1.0);
    let s = (1.0 - a * a).max(0.0).sqrt();
    (
        frame.v1 * a + frame.v2 * s,
        frame.v1 * (-s) + frame.v2 * a,
    )
}

/// `D = e1 l l^T + e2 t t^T`.
pub fn assemble_tensor(d: &FiberParams, frame: &Frame) -> Matrix3<f64> {
    let (l, t) = fiber_and_transverse(d.a, frame);
    l * l.transpose() * d.e1 + t * t.transpose() * d.e2
}

/// Tensor from an explicit fiber direction and squared speeds.
pub fn tensor_from_fiber(fiber: &Vec3, normal: &Vec3, e1: f64, e2: f64) -> Matrix3<f64> {
    let n = normal.normalize();
    let l = (fiber - n * n.dot(fiber)).normalize();
    let t = n.cross(&l);
    l * l.transpose() * e1 + t * t.transpose() * e2
}

/// Fiber direction of `(a, e1, e2)`: the faster of `l` and `t`. Equal
/// speeds give `l`.
pub fn principal_fiber(p: &FiberParams, frame: &Frame) -> Vec3 {
    let (l, t) = fiber_and_transverse(p.a.clamp(-1.0, 1.0), frame);
    if p.e1 >= p.e2 {
        l
    } else {
        t
    }
}

/// Speed in unit direction `p`: `sqrt(D p . p)`.
pub fn conduction_velocity(d: &Matrix3<f64>, p: &Vec3) -> f64 {
    (d * p).dot(p).max(0.0).sqrt()
}

/// Principal direction of a tensor, as an unsigned line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FiberDirection {
    /// Unit eigenvector of the largest eigenvalue, oriented so that its dot
    /// product with the reference direction is nonnegative.
    Unique(Vec3),
    /// The two largest eigenvalues coincide: every tangential direction is a
    /// fiber direction. Carries an arbitrary representative.
    Degenerate(Vec3),
}

impl FiberDirection {
    pub fn vector(&self) -> Vec3 {
        match *self {
            Self::Unique(v) | Self::Degenerate(v) => v,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self, Self::Degenerate(_))
    }
}

/// Eigenvector of the largest eigenvalue with sign fixed against `reference`.
pub fn fiber_direction(d: &Matrix3<f64>, reference: &Vec3) -> FiberDirection {
    let sym = (d + d.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l0, l1) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    let mut v: Vec3 = eig.eigenvectors.column(order[0]).into_owned();
    if v.dot(reference) < 0.0 {
        v = -v;
    }
    let scale = l0.abs().max(1e-300);
    if (l0 - l1).abs() <= DEGENERATE_EIGEN_GAP * scale.max(1.0) {
        FiberDirection::Degenerate(v)
    } else {
        FiberDirection::Unique(v)
    }
}

/// Recovers `(a, e1, e2)` of a tangential tensor in `frame`.
pub fn params_from_tensor(d: &Matrix3<f64>, frame: &Frame) -> FiberParams {
    let dir = fiber_direction(d, &frame.v1).vector();
    let mut c = frame.to_coords(&dir);
    // l(a) has a nonnegative v2 component
    if c[1] < 0.0 {
        c = [-c[0], -c[1]];
    }
    let norm = (c[0] * c[0] + c[1] * c[1]).sqrt();
    let a = if norm > 0.0 { c[0] / norm } else { 1.0 };
    let (l, t) = fiber_and_transverse(a, frame);
    FiberParams {
        a,
        e1: (d * l).dot(&l),
        e2: (d * t).dot(&t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn planar() -> Frame {
        Frame::planar()
    }

    #[test]
    fn fiber_and_transverse_examples() {
        let f = planar();
        let (l, t) = fiber_and_transverse(1.0, &f);
        assert_relative_eq!(l, f.v1);
        assert_relative_eq!(t, f.v2);
        let (l, t) = fiber_and_transverse(0.0, &f);
        assert_relative_eq!(l, f.v2);
        assert_relative_eq!(t, -f.v1);
        let (l, _) = fiber_and_transverse(30f64.to_radians().cos(), &f);
        assert_relative_eq!(l, Vec3::new(0.8660254037844387, 0.5, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn assemble_examples() {
        let d = assemble_tensor(&FiberParams::new(1.0, 0.36, 0.16, 2.25).unwrap(), &planar());
        let expect = Matrix3::from_diagonal(&Vec3::new(0.36, 0.16, 0.0));
        assert!((d - expect).abs().max() <= 1e-12);

        let a = std::f64::consts::FRAC_1_SQRT_2;
        let d = assemble_tensor(&FiberParams { a, e1: 1.0, e2: 0.5 }, &planar());
        let expect = Matrix3::new(0.75, 0.25, 0.0, 0.25, 0.75, 0.0, 0.0, 0.0, 0.0);
        assert!((d - expect).abs().max() <= 1e-12);

        for a in [-0.9, -0.2, 0.0, 0.4, 1.0] {
            let d = assemble_tensor(&FiberParams { a, e1: 0.3, e2: 0.3 }, &planar());
            let n = Vec3::z();
            let expect = (Matrix3::identity() - n * n.transpose()) * 0.3;
            assert!((d - expect).abs().max() <= 1e-12);
        }
    }

    #[test]
    fn velocity_examples() {
        let d = Matrix3::from_diagonal(&Vec3::new(1.0, 0.5, 0.0));
        assert!((conduction_velocity(&d, &Vec3::x()) - 1.0).abs() <= 1e-12);
        assert!((conduction_velocity(&d, &Vec3::y()) - 0.5f64.sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn fiber_direction_examples() {
        let d = Matrix3::from_diagonal(&Vec3::new(0.36, 0.16, 0.0));
        assert_eq!(fiber_direction(&d, &Vec3::x()), FiberDirection::Unique(Vec3::x()));
        let d = assemble_tensor(&FiberParams { a: 1.0, e1: 0.5, e2: 0.2 }, &planar());
        assert_relative_eq!(fiber_direction(&d, &Vec3::x()).vector(), Vec3::x(), epsilon = 1e-12);
        let d = assemble_tensor(&FiberParams { a: 0.3, e1: 0.4, e2: 0.4 }, &planar());
        assert!(fiber_direction(&d, &Vec3::x()).is_degenerate());
    }

    #[test]
    fn params_validation() {
        assert!(FiberParams::new(1.2, 0.1, 0.1, 2.25).is_err());
        assert!(FiberParams::new(0.2, 0.0, 0.1, 2.25).is_err());
        assert!(FiberParams::new(0.2, 3.0, 0.1, 2.25).is_err());
        assert!(FiberParams::new(-1.0, 2.25, 0.1, 2.25).is_ok());
    }

    fn arb_frame() -> impl Strategy<Value = Frame> {
        (-1.0f64..1.0, -1.0f64..1.0, 0.2f64..1.0, 0.0f64..std::f64::consts::TAU).prop_map(|(x, y, z, th)| {
            let n = Vec3::new(x, y, z).normalize();
            Frame::from_normal_and_direction(n, Vec3::new(th.cos(), th.sin(), 0.3)).unwrap()
        })
    }

    proptest! {
        #[test]
        fn tensor_invariants(a in -1.0f64..=1.0, e1 in 1e-3f64..2.25, e2 in 1e-3f64..2.25, f in arb_frame()) {
            let p = FiberParams { a, e1, e2 };
            let d = assemble_tensor(&p, &f);
            prop_assert!((d - d.transpose()).abs().max() <= 1e-12);
            prop_assert!((d * f.n).norm() <= 1e-10);
            let (l, t) = fiber_and_transverse(a, &f);
            prop_assert!((l.norm() - 1.0).abs() < 1e-12 && (t.norm() - 1.0).abs() < 1e-12);
            prop_assert!(l.dot(&t).abs() < 1e-12 && l.dot(&f.n).abs() < 1e-12);
            prop_assert!((conduction_velocity(&d, &l) - e1.sqrt()).abs() <= 1e-12);
            prop_assert!((conduction_velocity(&d, &t) - e2.sqrt()).abs() <= 1e-12);
            if e1 > e2 + 1e-9 {
                let dir = fiber_direction(&d, &f.v1).vector();
                prop_assert!(dir.dot(&l).abs() > 1.0 - 1e-9);
            }
        }

        #[test]
        fn params_round_trip(a in -0.999f64..0.999, e1 in 0.2f64..2.0, ratio in 0.1f64..0.9, f in arb_frame()) {
            let p = FiberParams { a, e1, e2: e1 * ratio };
            let q = params_from_tensor(&assemble_tensor(&p, &f), &f);
            prop_assert!((q.a - p.a).abs() < 1e-8);
            prop_assert!((q.e1 - p.e1).abs() < 1e-10 && (q.e2 - p.e2).abs() < 1e-10);
        }
    }
}
