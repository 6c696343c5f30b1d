use std::path::Path;

use serde::{Deserialize, Serialize};

use super::loss::Networks;
use super::TrainError;
use crate::conductivity::FiberParams;
use crate::nn::{Mlp, NnError};
use crate::Vec3;

/// Version written to and required from model files.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Trained networks with everything needed to evaluate them in world units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    /// Number of leading coordinates fed to the networks.
    pub input_dim: usize,
    /// Factor from normalized to raw times (ms).
    pub time_scale: f64,
    pub speed_sq_cap: f64,
    pub activation_nets: Vec<Mlp>,
    pub conductivity_net: Mlp,
}

impl TrainedModel {
    pub fn new(nets: Networks, input_dim: usize, time_scale: f64, speed_sq_cap: f64) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            input_dim,
            time_scale,
            speed_sq_cap,
            activation_nets: nets.activation,
            conductivity_net: nets.conductivity,
        }
    }

    pub fn networks(&self) -> Networks {
        Networks {
            activation: self.activation_nets.clone(),
            conductivity: self.conductivity_net.clone(),
        }
    }

    pub fn map_count(&self) -> usize {
        self.activation_nets.len()
    }

    fn input<'a>(&self, x: &'a Vec3) -> &'a [f64] {
        &x.as_slice()[..self.input_dim]
    }

    pub fn fiber_params(&self, x: &Vec3) -> Result<FiberParams, NnError> {
        let o = self.conductivity_net.forward(self.input(x))?;
        Ok(FiberParams { a: o[0], e1: o[1], e2: o[2] })
    }

    /// Predicted activation time (ms) of map `m` at `x`.
    pub fn activation_time(&self, m: usize, x: &Vec3) -> Result<f64, NnError> {
        Ok(self.activation_nets[m].forward(self.input(x))?[0] * self.time_scale)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| TrainError::Model(format!("not a model file: {e}")))?;
        let version = raw.get("format_version").and_then(|v| v.as_u64());
        if version != Some(MODEL_FORMAT_VERSION as u64) {
            return Err(TrainError::Model(format!(
                "unsupported model format version {version:?}, expected {MODEL_FORMAT_VERSION}"
            )));
        }
        let m: Self = serde_json::from_value(raw).map_err(|e| TrainError::Model(e.to_string()))?;
        let activation_nets = m
            .activation_nets
            .into_iter()
            .map(Mlp::validated)
            .collect::<Result<Vec<_>, _>>()?;
        let conductivity_net = m.conductivity_net.validated()?;
        if conductivity_net.spec().output_dim() != 3
            || activation_nets.iter().any(|n| n.spec().output_dim() != 1 || n.spec().input_dim != m.input_dim)
            || conductivity_net.spec().input_dim != m.input_dim
        {
            return Err(TrainError::Model("network shapes do not match".into()));
        }
        Ok(Self {
            activation_nets,
            conductivity_net,
            ..m
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_json()).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
