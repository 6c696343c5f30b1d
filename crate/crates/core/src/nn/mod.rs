//! Small dense networks with exact input Jacobians and parameter gradients
//! of losses that depend on both outputs and input Jacobians.
//!
//! Tangents of the input coordinates are pushed forward alongside the
//! values (input dimension is at most 3, so this is cheap). The reverse pass
//! then propagates adjoints of both values and tangents, which yields the
//! second-order paths needed when a loss contains the input gradient.

mod head;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use head::Head;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("expected {expected} values, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

/// Layer layout and output heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub heads: Vec<Head>,
}

impl MlpSpec {
    /// `depth` hidden layers of `width` units.
    pub fn uniform(input_dim: usize, depth: usize, width: usize, heads: Vec<Head>) -> Self {
        Self {
            input_dim,
            hidden: vec![width; depth],
            heads,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 {
            return Err(NnError::InvalidSpec("input dimension must be at least 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(NnError::InvalidSpec("hidden layer sizes must be at least 1".into()));
        }
        if self.heads.is_empty() {
            return Err(NnError::InvalidSpec("at least one output head is required".into()));
        }
        for h in &self.heads {
            if let Head::ScaledSigmoid { cap } = h {
                if !(*cap > 0.0 && cap.is_finite()) {
                    return Err(NnError::InvalidSpec(format!("scaled sigmoid cap {cap} must be positive")));
                }
            }
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.heads.len()
    }

    /// Input, hidden and output widths.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden);
        w.push(self.heads.len());
        w
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }
}

/// Affine map applied to world coordinates before the first layer:
/// `z = (x - center) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub center: Vec<f64>,
    pub scale: f64,
}

impl InputScaling {
    pub fn identity(dim: usize) -> Self {
        Self {
            center: vec![0.0; dim],
            scale: 1.0,
        }
    }

    /// Centers on the bounding box and scales by its largest half-width.
    pub fn from_points<'a>(dim: usize, points: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for p in points {
            for k in 0..dim {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        if lo.iter().any(|v| !v.is_finite()) {
            return Self::identity(dim);
        }
        let center = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let half = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (b - a)).fold(0.0, f64::max);
        Self {
            center,
            scale: if half > 0.0 { half } else { 1.0 },
        }
    }
}

/// A dense network: tanh hidden layers, per-channel output heads.
///
/// Parameters are stored flat, layer by layer, each layer as its weight
/// matrix (row-major, `out x in`) followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    scaling: InputScaling,
    params: Vec<f64>,
}

/// Intermediate values of one evaluation, needed by [`Mlp::backprop`].
#[derive(Debug, Clone)]
pub struct Trace {
    tangents: usize,
    /// Input of each layer; entry 0 is the scaled input.
    acts: Vec<Vec<f64>>,
    /// Tangents of each layer input, tangent-major.
    dacts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    dpre: Vec<Vec<f64>>,
    out: Vec<f64>,
    /// Output Jacobian, row-major `out x tangents`.
    jac: Vec<f64>,
}

impl Trace {
    pub fn outputs(&self) -> &[f64] {
        &self.out
    }

    /// `d out_j / d x_k` at index `j * input_dim + k`; empty when traced
    /// without tangents.
    pub fn jacobian(&self) -> &[f64] {
        &self.jac
    }

    pub fn output_gradient(&self, j: usize) -> &[f64] {
        &self.jac[j * self.tangents..(j + 1) * self.tangents]
    }
}

impl Mlp {
    /// Glorot-uniform weights and zero biases.
    pub fn new(spec: MlpSpec, scaling: InputScaling, seed: u64) -> Result<Self, NnError> {
        spec.validate()?;
        if scaling.center.len() != spec.input_dim {
            return Err(NnError::Dimension {
                expected: spec.input_dim,
                got: scaling.center.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(spec.param_count());
        for w in spec.widths().windows(2) {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            params.extend((0..w[0] * w[1]).map(|_| dist.sample(&mut rng)));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Ok(Self { spec, scaling, params })
    }

    pub fn from_parts(spec: MlpSpec, scaling: InputScaling, params: Vec<f64>) -> Result<Self, NnError> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(NnError::Dimension {
                expected: spec.param_count(),
                got: params.len(),
            });
        }
        if scaling.center.len() != spec.input_dim || !(scaling.scale > 0.0) {
            return Err(NnError::InvalidSpec("bad input scaling".into()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(NnError::NonFinite("parameters".into()));
        }
        Ok(Self { spec, scaling, params })
    }

    /// Re-validates a deserialized network.
    pub fn validated(self) -> Result<Self, NnError> {
        Self::from_parts(self.spec, self.scaling, self.params)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn scaling(&self) -> &InputScaling {
        &self.scaling
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.spec.input_dim {
            return Err(NnError::Dimension {
                expected: self.spec.input_dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("network input".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.trace(x, false)?.out)
    }

    /// Outputs and their Jacobian with respect to world coordinates.
    pub fn forward_with_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>), NnError> {
        let t = self.trace(x, true)?;
        Ok((t.out, t.jac))
    }

    /// Evaluates the network, keeping what the reverse pass needs. With
    /// `with_jacobian`, input tangents are propagated as well.
    pub fn trace(&self, x: &[f64], with_jacobian: bool) -> Result<Trace, NnError> {
        self.check_input(x)?;
        let d = self.spec.input_dim;
        let nt = if with_jacobian { d } else { 0 };
        let widths = self.spec.widths();
        let layers = widths.len() - 1;
        let inv = 1.0 / self.scaling.scale;
        let z: Vec<f64> = x.iter().zip(&self.scaling.center).map(|(a, c)| (a - c) * inv).collect();
        let mut dz = vec![0.0; nt * d];
        for k in 0..nt {
            dz[k * d + k] = inv;
        }
        let mut acts = vec![z];
        let mut dacts = vec![dz];
        let mut pre = Vec::with_capacity(layers);
        let mut dpre = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (widths[l], widths[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let a = &acts[l];
            let da = &dacts[l];
            let mut p = b.to_vec();
            let mut dp = vec![0.0; nt * n_out];
            for (i, row) in w.chunks_exact(n_in).enumerate() {
                p[i] += row.iter().zip(a).map(|(w, a)| w * a).sum::<f64>();
                for k in 0..nt {
                    dp[k * n_out + i] = row.iter().zip(&da[k * n_in..(k + 1) * n_in]).map(|(w, a)| w * a).sum();
                }
            }
            if l + 1 < layers {
                let h: Vec<f64> = p.iter().map(|v| v.tanh()).collect();
                let mut dh = dp.clone();
                for k in 0..nt {
                    for i in 0..n_out {
                        dh[k * n_out + i] *= 1.0 - h[i] * h[i];
                    }
                }
                acts.push(h);
                dacts.push(dh);
            }
            pre.push(p);
            dpre.push(dp);
        }
        let p = pre.last().expect("at least one layer");
        let dp = dpre.last().expect("at least one layer");
        let n_out = self.spec.output_dim();
        let mut out = vec![0.0; n_out];
        let mut jac = vec![0.0; n_out * nt];
        for (j, head) in self.spec.heads.iter().enumerate() {
            let (v, d1, _) = head.eval(p[j]);
            out[j] = v;
            for k in 0..nt {
                jac[j * nt + k] = d1 * dp[k * n_out + j];
            }
        }
        Ok(Trace {
            tangents: nt,
            acts,
            dacts,
            pre,
            dpre,
            out,
            jac,
        })
    }

    /// Accumulates into `grad` the parameter gradient of a scalar whose
    /// partial derivatives with respect to the traced outputs and Jacobian
    /// entries are `out_bar` and `jac_bar` (same layout as
    /// [`Trace::jacobian`]; may be empty when the trace has no tangents).
    pub fn backprop(&self, trace: &Trace, out_bar: &[f64], jac_bar: &[f64], grad: &mut [f64]) {
        let nt = trace.tangents;
        let widths = self.spec.widths();
        let layers = widths.len() - 1;
        let n_out = self.spec.output_dim();
        debug_assert_eq!(grad.len(), self.params.len());
        debug_assert_eq!(out_bar.len(), n_out);
        let use_jac = nt > 0 && !jac_bar.is_empty();
        let mut pbar = vec![0.0; n_out];
        let mut dpbar = vec![0.0; if use_jac { nt * n_out } else { 0 }];
        let p = &trace.pre[layers - 1];
        let dp = &trace.dpre[layers - 1];
        for (j, head) in self.spec.heads.iter().enumerate() {
            let (_, d1, d2) = head.eval(p[j]);
            pbar[j] = out_bar[j] * d1;
            if use_jac {
                for k in 0..nt {
                    let jb = jac_bar[j * nt + k];
                    pbar[j] += jb * d2 * dp[k * n_out + j];
                    dpbar[k * n_out + j] = jb * d1;
                }
            }
        }
        let tangents = if use_jac { nt } else { 0 };
        let mut off_end = self.params.len();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (widths[l], widths[l + 1]);
            let off = off_end - (n_in * n_out + n_out);
            off_end = off;
            let a = &trace.acts[l];
            let da = &trace.dacts[l];
            {
                let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for i in 0..n_out {
                    gb[i] += pbar[i];
                    let row = &mut gw[i * n_in..(i + 1) * n_in];
                    for (r, av) in row.iter_mut().zip(a) {
                        *r += pbar[i] * av;
                    }
                    for k in 0..tangents {
                        let g = dpbar[k * n_out + i];
                        if g != 0.0 {
                            for (r, dv) in row.iter_mut().zip(&da[k * n_in..(k + 1) * n_in]) {
                                *r += g * dv;
                            }
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut abar = vec![0.0; n_in];
            let mut dabar = vec![0.0; tangents * n_in];
            for (i, row) in w.chunks_exact(n_in).enumerate() {
                for (ab, wv) in abar.iter_mut().zip(row) {
                    *ab += wv * pbar[i];
                }
                for k in 0..tangents {
                    let g = dpbar[k * n_out + i];
                    for (ab, wv) in dabar[k * n_in..(k + 1) * n_in].iter_mut().zip(row) {
                        *ab += wv * g;
                    }
                }
            }
            // layer l's input is tanh of layer l-1's pre-activation
            let h = a;
            let dpp = &trace.dpre[l - 1];
            let mut np = vec![0.0; n_in];
            let mut ndp = vec![0.0; tangents * n_in];
            for i in 0..n_in {
                let s1 = 1.0 - h[i] * h[i];
                let s2 = -2.0 * h[i] * s1;
                np[i] = abar[i] * s1;
                for k in 0..tangents {
                    np[i] += dabar[k * n_in + i] * s2 * dpp[k * n_in + i];
                    ndp[k * n_in + i] = dabar[k * n_in + i] * s1;
                }
            }
            pbar = np;
            dpbar = ndp;
        }
    }
}
