use serde::{Deserialize, Serialize};

/// Output activation of one network channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    /// Logistic function, range (0, 1).
    Sigmoid,
    /// Hyperbolic tangent, range (-1, 1).
    Tanh,
    /// `cap * sigmoid`, range (0, cap).
    ScaledSigmoid { cap: f64 },
    Identity,
}

fn sigmoid(p: f64) -> f64 {
    if p >= 0.0 {
        1.0 / (1.0 + (-p).exp())
    } else {
        let e = p.exp();
        e / (1.0 + e)
    }
}

impl Head {
    /// Value, first and second derivative at pre-activation `p`.
    pub fn eval(&self, p: f64) -> (f64, f64, f64) {
        match *self {
            Head::Sigmoid => {
                let s = sigmoid(p);
                let d1 = s * (1.0 - s);
                (s, d1, d1 * (1.0 - 2.0 * s))
            }
            Head::Tanh => {
                let t = p.tanh();
                let d1 = 1.0 - t * t;
                (t, d1, -2.0 * t * d1)
            }
            Head::ScaledSigmoid { cap } => {
                let s = sigmoid(p);
                let d1 = s * (1.0 - s);
                (cap * s, cap * d1, cap * d1 * (1.0 - 2.0 * s))
            }
            Head::Identity => (p, 1.0, 0.0),
        }
    }

    /// Open interval containing every output.
    pub fn range(&self) -> (f64, f64) {
        match *self {
            Head::Sigmoid => (0.0, 1.0),
            Head::Tanh => (-1.0, 1.0),
            Head::ScaledSigmoid { cap } => (0.0, cap),
            Head::Identity => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_finite_differences() {
        let heads = [Head::Sigmoid, Head::Tanh, Head::ScaledSigmoid { cap: 2.25 }, Head::Identity];
        for h in heads {
            for p in [-3.0, -0.4, 0.0, 0.7, 2.5] {
                let eps = 1e-5;
                let (_, d1, d2) = h.eval(p);
                let fd1 = (h.eval(p + eps).0 - h.eval(p - eps).0) / (2.0 * eps);
                let fd2 = (h.eval(p + eps).1 - h.eval(p - eps).1) / (2.0 * eps);
                assert!((d1 - fd1).abs() < 1e-8, "{h:?} at {p}");
                assert!((d2 - fd2).abs() < 1e-8, "{h:?} at {p}");
            }
        }
    }

    #[test]
    fn saturation_is_finite() {
        for h in [Head::Sigmoid, Head::Tanh, Head::ScaledSigmoid { cap: 1.5 }] {
            for p in [-50.0, 50.0, -800.0, 800.0] {
                let (v, d1, d2) = h.eval(p);
                assert!(v.is_finite() && d1.is_finite() && d2.is_finite());
            }
        }
        assert_eq!(Head::Sigmoid.eval(0.0).0, 0.5);
    }
}
