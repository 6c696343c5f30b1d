use thiserror::Error;

use crate::basis::Frame;
use crate::exec;
use crate::nn::{Mlp, NnError};
use crate::Vec3;

/// Floor on the squared speed inside the square root of the eikonal term.
pub const EIKONAL_SQRT_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Network(#[from] NnError),
}

/// Huber penalty of a gradient vector: `|q|^2 / (2 delta)` up to `delta`,
/// `|q| - delta / 2` beyond.
pub fn huber(q: &[f64], delta: f64) -> f64 {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n <= delta {
        n * n / (2.0 * delta)
    } else {
        n - 0.5 * delta
    }
}

/// Adds `scale * d huber / d q` to `out`.
fn huber_grad(q: &[f64], delta: f64, scale: f64, out: &mut [f64]) {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let f = if n <= delta { 1.0 / delta } else { 1.0 / n };
    for (o, v) in out.iter_mut().zip(q) {
        *o += scale * f * v;
    }
}

/// Weights of the regularized loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub eikonal: f64,
    pub speed_tv: f64,
    pub angle_tv: f64,
    pub speed_delta: f64,
    pub angle_delta: f64,
}

/// A measured activation time (normalized) at a surface point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataPoint {
    pub position: Vec3,
    pub time: f64,
}

/// A surface point where the eikonal residual is penalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollocationPoint {
    pub position: Vec3,
    pub frame: Frame,
}

/// One activation network per map and the shared conductivity network,
/// whose outputs are `(a, e1, e2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Networks {
    pub activation: Vec<Mlp>,
    pub conductivity: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub activation: Vec<Vec<f64>>,
    pub conductivity: Vec<f64>,
}

impl Gradients {
    pub fn zeros(nets: &Networks) -> Self {
        Self {
            activation: nets.activation.iter().map(|n| vec![0.0; n.param_count()]).collect(),
            conductivity: vec![0.0; nets.conductivity.param_count()],
        }
    }

    fn add(&mut self, other: &Gradients) {
        for (a, b) in self.activation.iter_mut().zip(&other.activation) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (x, y) in self.conductivity.iter_mut().zip(&other.conductivity) {
            *x += y;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.activation.iter().flatten().chain(&self.conductivity).all(|v| v.is_finite())
    }
}

/// Unweighted terms and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub data: f64,
    pub eikonal: f64,
    pub speed_tv: f64,
    pub angle_tv: f64,
    pub total: f64,
}

struct PointContribution {
    eikonal: f64,
    speed_tv: f64,
    angle_tv: f64,
    grads: Option<Gradients>,
}

fn input(p: &Vec3, dim: usize) -> &[f64] {
    &p.as_slice()[..dim]
}

fn embed(g: &[f64]) -> Vec3 {
    Vec3::new(g[0], g.get(1).copied().unwrap_or(0.0), g.get(2).copied().unwrap_or(0.0))
}

fn collocation_term(
    nets: &Networks,
    y: &CollocationPoint,
    w: &LossWeights,
    time_scale: f64,
    dim: usize,
    n_colloc: usize,
    with_grad: bool,
) -> Result<PointContribution, NnError> {
    let n_maps = nets.activation.len();
    let x = input(&y.position, dim);
    let td = nets.conductivity.trace(x, true)?;
    let (a, e1, e2) = (td.outputs()[0], td.outputs()[1], td.outputs()[2]);
    let (ga, ge1, ge2) = (td.output_gradient(0), td.output_gradient(1), td.output_gradient(2));
    let s = (1.0 - a * a).max(0.0).sqrt();
    let ds = -a / s.max(1e-12);
    let (v1, v2) = (y.frame.v1, y.frame.v2);
    let eik_scale = w.eikonal / (n_maps * n_colloc) as f64;
    let mut grads = with_grad.then(|| Gradients::zeros(nets));
    let mut d_bar = [0.0; 3];
    let mut eikonal = 0.0;
    for (m, net) in nets.activation.iter().enumerate() {
        let tp = net.trace(x, true)?;
        let g = embed(tp.output_gradient(0));
        let (g1, g2) = (v1.dot(&g), v2.dot(&g));
        let u = a * g1 + s * g2;
        let t = -s * g1 + a * g2;
        let q = e1 * u * u + e2 * t * t;
        let root = q.max(EIKONAL_SQRT_FLOOR).sqrt();
        let r = time_scale * root - 1.0;
        eikonal += r * r;
        if let Some(gr) = grads.as_mut() {
            let dr_dq = if q > EIKONAL_SQRT_FLOOR { time_scale / (2.0 * root) } else { 0.0 };
            let k = 2.0 * r * eik_scale * dr_dq;
            d_bar[0] += k * (2.0 * e1 * u * (g1 + ds * g2) + 2.0 * e2 * t * (-ds * g1 + g2));
            d_bar[1] += k * u * u;
            d_bar[2] += k * t * t;
            let dq1 = 2.0 * e1 * u * a - 2.0 * e2 * t * s;
            let dq2 = 2.0 * e1 * u * s + 2.0 * e2 * t * a;
            let gbar = (v1 * dq1 + v2 * dq2) * k;
            net.backprop(&tp, &[0.0], &gbar.as_slice()[..dim], &mut gr.activation[m]);
        }
    }
    let speed_tv = huber(ge1, w.speed_delta) + huber(ge2, w.speed_delta);
    let angle_tv = huber(ga, w.angle_delta);
    if let Some(gr) = grads.as_mut() {
        let mut jac_bar = vec![0.0; 3 * dim];
        let c = 1.0 / n_colloc as f64;
        huber_grad(ga, w.angle_delta, w.angle_tv * c, &mut jac_bar[..dim]);
        huber_grad(ge1, w.speed_delta, w.speed_tv * c, &mut jac_bar[dim..2 * dim]);
        huber_grad(ge2, w.speed_delta, w.speed_tv * c, &mut jac_bar[2 * dim..]);
        nets.conductivity.backprop(&td, &d_bar, &jac_bar, &mut gr.conductivity);
    }
    Ok(PointContribution {
        eikonal,
        speed_tv,
        angle_tv,
        grads,
    })
}

/// Squared speed `D g . g` for `D` from `(a, e1, e2)` in `frame`.
pub fn directional_speed_sq(a: f64, e1: f64, e2: f64, g: &Vec3, frame: &Frame) -> f64 {
    let s = (1.0 - a * a).max(0.0).sqrt();
    let (g1, g2) = (frame.v1.dot(g), frame.v2.dot(g));
    let u = a * g1 + s * g2;
    let t = -s * g1 + a * g2;
    e1 * u * u + e2 * t * t
}

/// Loss terms (no gradients) for arbitrary fields. `activation(m, x)` gives
/// the normalized time of map `m` and its gradient; `conductivity(x)` gives
/// `(a, e1, e2)` and their gradients. Used to evaluate the loss on fields
/// that no network represents exactly, such as analytic solutions.
pub fn loss_terms_from_fields<P, C>(
    n_maps: usize,
    data: &[Vec<DataPoint>],
    collocation: &[CollocationPoint],
    weights: &LossWeights,
    time_scale: f64,
    activation: P,
    conductivity: C,
) -> LossTerms
where
    P: Fn(usize, &Vec3) -> (f64, Vec3),
    C: Fn(&Vec3) -> ([f64; 3], [Vec3; 3]),
{
    let mut terms = LossTerms::default();
    for (m, samples) in data.iter().enumerate() {
        for p in samples {
            let r = activation(m, &p.position).0 - p.time;
            terms.data += r * r / (n_maps * samples.len()) as f64;
        }
    }
    for y in collocation {
        let ([a, e1, e2], [ga, ge1, ge2]) = conductivity(&y.position);
        for m in 0..n_maps {
            let g = activation(m, &y.position).1;
            let q = directional_speed_sq(a, e1, e2, &g, &y.frame);
            let r = time_scale * q.max(EIKONAL_SQRT_FLOOR).sqrt() - 1.0;
            terms.eikonal += r * r;
        }
        terms.speed_tv += huber(ge1.as_slice(), weights.speed_delta) + huber(ge2.as_slice(), weights.speed_delta);
        terms.angle_tv += huber(ga.as_slice(), weights.angle_delta);
    }
    let nc = collocation.len() as f64;
    terms.eikonal /= n_maps as f64 * nc;
    terms.speed_tv /= nc;
    terms.angle_tv /= nc;
    terms.total = terms.data
        + weights.eikonal * terms.eikonal
        + weights.speed_tv * terms.speed_tv
        + weights.angle_tv * terms.angle_tv;
    terms
}

/// Loss of the networks on one batch, with parameter gradients when
/// `with_grad` is set. `data[m]` holds the samples of map `m`; times are
/// normalized by `time_scale`. Network inputs are the first `dim`
/// coordinates of each point.
pub fn compute_loss(
    nets: &Networks,
    data: &[Vec<DataPoint>],
    collocation: &[CollocationPoint],
    weights: &LossWeights,
    time_scale: f64,
    dim: usize,
    with_grad: bool,
) -> Result<(LossTerms, Option<Gradients>), LossError> {
    let n_maps = nets.activation.len();
    if n_maps == 0 || data.len() != n_maps || data.iter().any(Vec::is_empty) || collocation.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let mut grads = with_grad.then(|| Gradients::zeros(nets));
    let mut terms = LossTerms::default();

    for (m, (net, samples)) in nets.activation.iter().zip(data).enumerate() {
        let scale = 1.0 / (n_maps * samples.len()) as f64;
        let parts = exec::try_map_range(samples.len(), |i| -> Result<_, NnError> {
            let p = &samples[i];
            let t = net.trace(input(&p.position, dim), false)?;
            let r = t.outputs()[0] - p.time;
            let g = with_grad.then(|| {
                let mut g = vec![0.0; net.param_count()];
                net.backprop(&t, &[2.0 * r * scale], &[], &mut g);
                g
            });
            Ok((r * r * scale, g))
        })?;
        for (v, g) in parts {
            terms.data += v;
            if let (Some(total), Some(g)) = (grads.as_mut(), g) {
                for (x, y) in total.activation[m].iter_mut().zip(g) {
                    *x += y;
                }
            }
        }
    }

    let nc = collocation.len();
    let parts = exec::try_map_range(nc, |j| {
        collocation_term(nets, &collocation[j], weights, time_scale, dim, nc, with_grad)
    })?;
    for p in parts {
        terms.eikonal += p.eikonal;
        terms.speed_tv += p.speed_tv;
        terms.angle_tv += p.angle_tv;
        if let (Some(total), Some(g)) = (grads.as_mut(), p.grads.as_ref()) {
            total.add(g);
        }
    }
    terms.eikonal /= (n_maps * nc) as f64;
    terms.speed_tv /= nc as f64;
    terms.angle_tv /= nc as f64;
    terms.total = terms.data
        + weights.eikonal * terms.eikonal
        + weights.speed_tv * terms.speed_tv
        + weights.angle_tv * terms.angle_tv;
    for (name, v) in [
        ("L_data", terms.data),
        ("L_eiko", terms.eikonal),
        ("L_cv", terms.speed_tv),
        ("L_ang", terms.angle_tv),
        ("total", terms.total),
    ] {
        if !v.is_finite() {
            return Err(LossError::NonFinite(name));
        }
    }
    if grads.as_ref().is_some_and(|g| !g.is_finite()) {
        return Err(LossError::NonFinite("gradient"));
    }
    Ok((terms, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn huber_examples() {
        assert_eq!(huber(&[0.0, 0.0], 1e-3), 0.0);
        let d = 1e-3;
        let at = [d * 0.6, d * 0.8];
        assert!((huber(&at, d) - d / 2.0).abs() < 1e-12);
        assert!((huber(&[0.6, 0.8], 1e-3) - 0.9995).abs() < 1e-12);
        assert!((huber(&[3.0], 2.0) - 2.0).abs() < 1e-12);
        assert!((huber(&[1.0], 2.0) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn huber_gradient_matches_finite_differences() {
        for q in [[0.3e-3, -0.2e-3], [0.5, 1.2], [-2.0, 0.1]] {
            let mut g = [0.0; 2];
            huber_grad(&q, 1e-3, 1.0, &mut g);
            for k in 0..2 {
                let h = 1e-9;
                let mut qp = q;
                let mut qm = q;
                qp[k] += h;
                qm[k] -= h;
                let fd = (huber(&qp, 1e-3) - huber(&qm, 1e-3)) / (2.0 * h);
                assert!((g[k] - fd).abs() < 1e-5 * fd.abs().max(1.0));
            }
        }
    }
}
