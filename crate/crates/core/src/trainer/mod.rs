//! Joint fit of one activation network per map and a single conductivity
//! network.
//!
//! The loss combines the data misfit of every map, the eikonal residual
//! `T sqrt(D grad(phi) . grad(phi)) - 1` at collocation points, and Huber
//! total variation of the speed and angle channels. It is minimized with
//! Adam on mini-batches.

mod adam;
mod loss;
mod model;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::Adam;
pub use loss::{
    compute_loss, directional_speed_sq, huber, loss_terms_from_fields, CollocationPoint, DataPoint, Gradients,
    LossError, LossTerms, LossWeights, Networks, EIKONAL_SQRT_FLOOR,
};
pub use model::{TrainedModel, MODEL_FORMAT_VERSION};

use crate::conductivity::DEFAULT_SPEED_SQ_CAP;
use crate::io::HistoryRecord;
use crate::nn::{Head, InputScaling, Mlp, MlpSpec, NnError};
use crate::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("invalid dataset: {0}")]
    Data(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error("training diverged at iteration {iteration} ({term} became non-finite)")]
    Diverged {
        iteration: usize,
        term: String,
        /// State before the failing iteration.
        last: Box<TrainOutcome>,
    },
    #[error("model file: {0}")]
    Model(String),
    #[error("io: {0}")]
    Io(String),
}

/// Depth and width of a network's hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetShape {
    pub depth: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// Weight of the eikonal residual.
    pub eikonal_weight: f64,
    /// Weight of the Huber total variation of the two speed channels.
    pub speed_tv_weight: f64,
    /// Weight of the Huber total variation of the angle channel.
    pub angle_tv_weight: f64,
    pub speed_huber_delta: f64,
    pub angle_huber_delta: f64,
    /// Ceiling on squared speeds, in squared length units per squared time
    /// unit of the data. The default 2.25 corresponds to 1.5 m/s with mm and
    /// ms.
    pub speed_sq_cap: f64,
    /// Fixed normalization time; the largest sample time when absent.
    pub time_scale: Option<f64>,
    pub activation_net: NetShape,
    pub conductivity_net: NetShape,
    pub iterations: usize,
    /// Samples per map and collocation points per iteration.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Loss history interval in iterations.
    pub history_every: usize,
    /// Collocation points used for the history loss (evenly strided subset).
    pub history_points: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self::preset_2d()
    }
}

impl TrainingConfig {
    /// Settings of the planar experiments.
    pub fn preset_2d() -> Self {
        Self {
            eikonal_weight: 1e-2,
            speed_tv_weight: 1e-5,
            angle_tv_weight: 1e-9,
            speed_huber_delta: 1e-3,
            angle_huber_delta: 1e-3,
            speed_sq_cap: DEFAULT_SPEED_SQ_CAP,
            time_scale: None,
            activation_net: NetShape { depth: 5, width: 10 },
            conductivity_net: NetShape { depth: 5, width: 5 },
            iterations: 3000,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            history_every: 100,
            history_points: 2048,
        }
    }

    /// Settings of the surface experiments.
    pub fn preset_3d() -> Self {
        Self {
            eikonal_weight: 1e-4,
            activation_net: NetShape { depth: 7, width: 20 },
            conductivity_net: NetShape { depth: 5, width: 20 },
            iterations: 30000,
            ..Self::preset_2d()
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            eikonal: self.eikonal_weight,
            speed_tv: self.speed_tv_weight,
            angle_tv: self.angle_tv_weight,
            speed_delta: self.speed_huber_delta,
            angle_delta: self.angle_huber_delta,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        let weights = [self.eikonal_weight, self.speed_tv_weight, self.angle_tv_weight];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("loss weights must be finite and nonnegative");
        }
        if !(self.speed_huber_delta > 0.0 && self.angle_huber_delta > 0.0) {
            return bad("Huber thresholds must be positive");
        }
        if !(self.speed_sq_cap > 0.0 && self.speed_sq_cap.is_finite()) {
            return bad("speed_sq_cap must be positive");
        }
        if self.time_scale.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
            return bad("time_scale must be positive");
        }
        for s in [self.activation_net, self.conductivity_net] {
            if s.width == 0 {
                return bad("network width must be at least 1");
            }
        }
        if self.iterations == 0 || self.batch_size == 0 || self.history_every == 0 || self.history_points == 0 {
            return bad("iterations, batch_size, history_every and history_points must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

/// Divides every time by the largest one. All-zero input gives scale 1.
pub fn normalize_times(raw: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let max = raw.iter().flatten().copied().fold(0.0, f64::max);
    let scale = if max > 0.0 {
        max
    } else {
        log::warn!("all activation times are zero; using time scale 1");
        1.0
    };
    (scale, raw.iter().map(|m| m.iter().map(|t| t / scale).collect()).collect())
}

/// Normalized training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Number of leading coordinates used as network input (2 or 3).
    pub dim: usize,
    /// Raw time corresponding to normalized time 1.
    pub time_scale: f64,
    pub maps: Vec<Vec<DataPoint>>,
    pub collocation: Vec<CollocationPoint>,
}

impl Dataset {
    /// Builds a dataset from raw samples `(position, time)` per map.
    /// Negative times (noise near a source) are clamped to zero.
    pub fn new(
        dim: usize,
        raw_maps: Vec<Vec<(Vec3, f64)>>,
        collocation: Vec<CollocationPoint>,
        time_scale: Option<f64>,
    ) -> Result<Self, TrainError> {
        if !(dim == 2 || dim == 3) {
            return Err(TrainError::Data(format!("input dimension {dim} is not 2 or 3")));
        }
        if raw_maps.is_empty() || raw_maps.iter().any(Vec::is_empty) {
            return Err(TrainError::Data("every map needs at least one sample".into()));
        }
        if collocation.is_empty() {
            return Err(TrainError::Data("no collocation points".into()));
        }
        if raw_maps.iter().flatten().any(|(p, t)| !t.is_finite() || p.iter().any(|c| !c.is_finite())) {
            return Err(TrainError::Data("non-finite sample".into()));
        }
        let clamped = raw_maps.iter().flatten().filter(|s| s.1 < 0.0).count();
        if clamped > 0 {
            log::warn!("{clamped} negative sample times clamped to zero");
        }
        let times: Vec<Vec<f64>> = raw_maps.iter().map(|m| m.iter().map(|s| s.1.max(0.0)).collect()).collect();
        let (scale, normalized) = match time_scale {
            None => normalize_times(&times),
            Some(t) => {
                let max = times.iter().flatten().copied().fold(0.0, f64::max);
                if !(t > 0.0) || max > t {
                    return Err(TrainError::Data(format!("time scale {t} is below the largest time {max}")));
                }
                (t, times.iter().map(|m| m.iter().map(|v| v / t).collect()).collect())
            }
        };
        let maps = raw_maps
            .iter()
            .zip(normalized)
            .map(|(m, ts)| m.iter().zip(ts).map(|(s, time)| DataPoint { position: s.0, time }).collect())
            .collect();
        Ok(Self {
            dim,
            time_scale: scale,
            maps,
            collocation,
        })
    }

    pub fn map_count(&self) -> usize {
        self.maps.len()
    }

    fn input_scaling(&self) -> InputScaling {
        let pts = self
            .collocation
            .iter()
            .map(|c| &c.position.as_slice()[..self.dim])
            .chain(self.maps.iter().flatten().map(|p| &p.position.as_slice()[..self.dim]));
        InputScaling::from_points(self.dim, pts)
    }
}

/// Freshly initialized networks for `dataset`.
pub fn init_networks(config: &TrainingConfig, dataset: &Dataset, seed: u64) -> Result<Networks, TrainError> {
    let scaling = dataset.input_scaling();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = config.activation_net;
    let activation = (0..dataset.map_count())
        .map(|_| {
            Mlp::new(
                MlpSpec::uniform(dataset.dim, a.depth, a.width, vec![Head::Sigmoid]),
                scaling.clone(),
                rng.next_u64(),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let c = config.conductivity_net;
    let cap = config.speed_sq_cap;
    let conductivity = Mlp::new(
        MlpSpec::uniform(
            dataset.dim,
            c.depth,
            c.width,
            vec![Head::Tanh, Head::ScaledSigmoid { cap }, Head::ScaledSigmoid { cap }],
        ),
        scaling,
        rng.next_u64(),
    )?;
    Ok(Networks { activation, conductivity })
}

/// Draws indices without replacement, reshuffling at each new epoch.
struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
}

impl EpochSampler {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn take(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let k = k.min(self.order.len());
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Result of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub history: Vec<HistoryRecord>,
}

fn record(iteration: usize, t: &LossTerms) -> HistoryRecord {
    HistoryRecord {
        iteration,
        data: t.data,
        eikonal: t.eikonal,
        speed_tv: t.speed_tv,
        angle_tv: t.angle_tv,
        total: t.total,
    }
}

/// Loss of `nets` on all data and an evenly strided subset of at most
/// `max_points` collocation points.
pub fn evaluation_loss(
    nets: &Networks,
    dataset: &Dataset,
    weights: &LossWeights,
    max_points: usize,
) -> Result<LossTerms, LossError> {
    let n = dataset.collocation.len();
    let stride = n.div_ceil(max_points.max(1)).max(1);
    let colloc: Vec<CollocationPoint> = dataset.collocation.iter().step_by(stride).copied().collect();
    compute_loss(nets, &dataset.maps, &colloc, weights, dataset.time_scale, dataset.dim, false).map(|r| r.0)
}

/// Runs Adam for `config.iterations` mini-batch steps. History entries are
/// evaluated on the full data every `history_every` iterations and after the
/// last step.
pub fn train(config: &TrainingConfig, dataset: &Dataset) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init_seed = rng.next_u64();
    let mut nets = init_networks(config, dataset, init_seed)?;
    let weights = config.weights();
    let mut opt_act: Vec<Adam> = nets
        .activation
        .iter()
        .map(|n| Adam::new(n.param_count(), config.learning_rate))
        .collect();
    let mut opt_cond = Adam::new(nets.conductivity.param_count(), config.learning_rate);
    let mut map_samplers: Vec<EpochSampler> =
        dataset.maps.iter().map(|m| EpochSampler::new(m.len(), &mut rng)).collect();
    let mut colloc_sampler = EpochSampler::new(dataset.collocation.len(), &mut rng);
    let mut history = Vec::new();
    let snapshot = |nets: &Networks, history: &Vec<HistoryRecord>| TrainOutcome {
        model: TrainedModel::new(nets.clone(), dataset.dim, dataset.time_scale, config.speed_sq_cap),
        history: history.clone(),
    };
    let diverged = |iteration: usize, e: LossError, nets: &Networks, history: &Vec<HistoryRecord>| match e {
        LossError::NonFinite(term) => TrainError::Diverged {
            iteration,
            term: term.into(),
            last: Box::new(snapshot(nets, history)),
        },
        other => TrainError::Loss(other),
    };

    for it in 0..config.iterations {
        if it % config.history_every == 0 {
            let t = evaluation_loss(&nets, dataset, &weights, config.history_points)
                .map_err(|e| diverged(it, e, &nets, &history))?;
            log::debug!("iteration {it}: total {:.4e} data {:.4e} eikonal {:.4e}", t.total, t.data, t.eikonal);
            history.push(record(it, &t));
        }
        let data: Vec<Vec<DataPoint>> = dataset
            .maps
            .iter()
            .zip(map_samplers.iter_mut())
            .map(|(m, s)| s.take(config.batch_size, &mut rng).into_iter().map(|i| m[i]).collect())
            .collect();
        let colloc: Vec<CollocationPoint> = colloc_sampler
            .take(config.batch_size, &mut rng)
            .into_iter()
            .map(|i| dataset.collocation[i])
            .collect();
        let (_, grads) = compute_loss(&nets, &data, &colloc, &weights, dataset.time_scale, dataset.dim, true)
            .map_err(|e| diverged(it, e, &nets, &history))?;
        let grads = grads.expect("gradients requested");
        for ((net, opt), g) in nets.activation.iter_mut().zip(&mut opt_act).zip(&grads.activation) {
            opt.step(net.params_mut(), g);
        }
        opt_cond.step(nets.conductivity.params_mut(), &grads.conductivity);
    }
    let t = evaluation_loss(&nets, dataset, &weights, config.history_points)
        .map_err(|e| diverged(config.iterations, e, &nets, &history))?;
    history.push(record(config.iterations, &t));
    Ok(snapshot(&nets, &history))
}
