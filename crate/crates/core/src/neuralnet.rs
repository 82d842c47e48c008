//! Small dense regression networks: rectifier hidden layers, linear output,
//! mean-squared-error loss, mini-batch SGD or Adam.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{TrainingEntry, N_SPATIAL_FEATURES};
use crate::error::{Error, Result};
use crate::features::ScalerStats;

/// Current model-file schema version.
pub const MODEL_FILE_VERSION: u64 = 1;

/// Row-major feature matrix with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Samples {
    pub fn new(dim: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if dim == 0 || x.len() != dim * y.len() {
            return Err(Error::Dimension {
                expected: dim * y.len(),
                actual: x.len(),
            });
        }
        Ok(Samples { dim, x, y })
    }

    pub fn from_entries(entries: &[TrainingEntry]) -> Self {
        let mut x = Vec::with_capacity(entries.len() * N_SPATIAL_FEATURES);
        for e in entries {
            x.extend_from_slice(&e.features());
        }
        let y = entries.iter().map(|e| e.label).collect();
        Samples {
            dim: N_SPATIAL_FEATURES,
            x,
            y,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + Clone {
        self.x.chunks_exact(self.dim)
    }

    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    pub fn label(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn select(&self, idx: &[usize]) -> Samples {
        let mut x = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            x.extend_from_slice(self.row(i));
        }
        Samples {
            dim: self.dim,
            x,
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

/// Layer widths after the input; the last width is the scalar output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub layer_sizes: Vec<usize>,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, layer_sizes: Vec<usize>) -> Result<Self> {
        let spec = NetworkSpec {
            input_dim,
            layer_sizes,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// On-site model: five climate inputs, layers of 5, 7 and 1 units.
    pub fn baseline() -> Self {
        NetworkSpec {
            input_dim: 5,
            layer_sizes: vec![5, 7, 1],
        }
    }

    /// Spatial submodel: 13 inputs, layers of 10, 14, 9, 8 and 1 units.
    pub fn submodel() -> Self {
        NetworkSpec {
            input_dim: N_SPATIAL_FEATURES,
            layer_sizes: vec![10, 14, 9, 8, 1],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.layer_sizes.is_empty()
            || self.layer_sizes.contains(&0)
            || *self.layer_sizes.last().unwrap() != 1
        {
            return Err(Error::InvalidInput(format!(
                "invalid network spec: input {} layers {:?}",
                self.input_dim, self.layer_sizes
            )));
        }
        Ok(())
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        let mut fan_in = self.input_dim;
        self.layer_sizes
            .iter()
            .map(|&out| {
                let s = (fan_in, out);
                fan_in = out;
                s
            })
            .collect()
    }

    pub fn n_parameters(&self) -> usize {
        self.shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Fully connected layer. `weights[i * outputs + j]` connects input `i` to
/// unit `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
}

/// Gradient of the loss with respect to each layer's weights and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    fn zeros(net: &Network) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]))
                .collect(),
        }
    }

    fn reset(&mut self) {
        for (w, b) in &mut self.layers {
            w.fill(0.0);
            b.fill(0.0);
        }
    }

    /// Same ordering as [`Network::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

/// Glorot-uniform weights, zero biases; deterministic in `seed`.
pub fn init_network(spec: &NetworkSpec, seed: u64) -> Result<Network> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .shapes()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Layer {
                inputs: fan_in,
                outputs: fan_out,
                weights: (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect(),
                biases: vec![0.0; fan_out],
            }
        })
        .collect();
    Ok(Network {
        spec: spec.clone(),
        layers,
    })
}

/// Per-sample scratch space for forward and backward passes.
struct Workspace {
    /// `acts[0]` is the input; `acts[k + 1]` the output of layer `k`.
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(spec: &NetworkSpec) -> Self {
        let mut acts = vec![vec![0.0; spec.input_dim]];
        acts.extend(spec.layer_sizes.iter().map(|&n| vec![0.0; n]));
        let deltas = acts.clone();
        Workspace { acts, deltas }
    }
}

impl Network {
    pub fn from_layers(spec: NetworkSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.shapes();
        if layers.len() != shapes.len() {
            return Err(Error::Format(format!(
                "spec has {} layers, parameters have {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (l, (i, o)) in layers.iter().zip(shapes) {
            if l.inputs != i || l.outputs != o || l.weights.len() != i * o || l.biases.len() != o {
                return Err(Error::Format(format!("layer shape does not match spec ({i}x{o})")));
            }
            if !l.weights.iter().chain(&l.biases).all(|v| v.is_finite()) {
                return Err(Error::Format("non-finite network parameter".into()));
            }
        }
        Ok(Network { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// All weights and biases, layer by layer, weights before biases.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
            .collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.spec.n_parameters() {
            return Err(Error::Dimension {
                expected: self.spec.n_parameters(),
                actual: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *w = it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.spec.input_dim {
            return Err(Error::Dimension {
                expected: self.spec.input_dim,
                actual: x.len(),
            });
        }
        let mut ws = Workspace::new(&self.spec);
        Ok(self.forward_ws(x, &mut ws))
    }

    /// Forward pass over every row.
    pub fn predict_all(&self, samples: &Samples) -> Result<Vec<f64>> {
        if samples.dim() != self.spec.input_dim {
            return Err(Error::Dimension {
                expected: self.spec.input_dim,
                actual: samples.dim(),
            });
        }
        let mut ws = Workspace::new(&self.spec);
        Ok(samples.rows().map(|r| self.forward_ws(r, &mut ws)).collect())
    }

    fn forward_ws(&self, x: &[f64], ws: &mut Workspace) -> f64 {
        ws.acts[0].copy_from_slice(x);
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(k + 1);
            let input = &head[k];
            let out = &mut tail[0];
            out.copy_from_slice(&layer.biases);
            for (i, &a) in input.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let row = &layer.weights[i * layer.outputs..(i + 1) * layer.outputs];
                for (o, w) in out.iter_mut().zip(row) {
                    *o += a * w;
                }
            }
            if k != last {
                for o in out.iter_mut() {
                    if *o < 0.0 {
                        *o = 0.0;
                    }
                }
            }
        }
        ws.acts[self.layers.len()][0]
    }

    /// Adds `scale * d(prediction - y)^2 / d(params)` for one sample into `grads`;
    /// returns the squared error.
    fn accumulate(&self, x: &[f64], y: f64, scale: f64, ws: &mut Workspace, grads: &mut Gradients) -> f64 {
        let pred = self.forward_ws(x, ws);
        let err = pred - y;
        let n_layers = self.layers.len();
        ws.deltas[n_layers][0] = 2.0 * err * scale;
        for k in (0..n_layers).rev() {
            let layer = &self.layers[k];
            let (gw, gb) = &mut grads.layers[k];
            let (dhead, dtail) = ws.deltas.split_at_mut(k + 1);
            let delta = &dtail[0];
            let input = &ws.acts[k];
            for (g, d) in gb.iter_mut().zip(delta) {
                *g += d;
            }
            for (i, &a) in input.iter().enumerate() {
                if a != 0.0 {
                    let row = &mut gw[i * layer.outputs..(i + 1) * layer.outputs];
                    for (g, d) in row.iter_mut().zip(delta) {
                        *g += a * d;
                    }
                }
            }
            if k > 0 {
                let prev = &mut dhead[k];
                for (i, p) in prev.iter_mut().enumerate() {
                    // Rectifier derivative, taken as 0 at the kink.
                    *p = if input[i] > 0.0 {
                        let row = &layer.weights[i * layer.outputs..(i + 1) * layer.outputs];
                        row.iter().zip(delta).map(|(w, d)| w * d).sum()
                    } else {
                        0.0
                    };
                }
            }
        }
        err * err
    }
}

/// Analytic gradient of `(1/n) Σ (forward(x) - y)^2` over `batch`.
pub fn gradients(net: &Network, batch: &Samples) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::EmptyData("gradient of an empty batch".into()));
    }
    if batch.dim() != net.spec.input_dim {
        return Err(Error::Dimension {
            expected: net.spec.input_dim,
            actual: batch.dim(),
        });
    }
    let mut ws = Workspace::new(&net.spec);
    let mut grads = Gradients::zeros(net);
    let scale = 1.0 / batch.len() as f64;
    for (x, &y) in batch.rows().zip(batch.labels()) {
        net.accumulate(x, y, scale, &mut ws, &mut grads);
    }
    Ok(grads)
}

/// Mean squared error of `net` on `samples`.
pub fn mse(net: &Network, samples: &Samples) -> Result<f64> {
    let preds = net.predict_all(samples)?;
    if preds.is_empty() {
        return Err(Error::EmptyData("mse of an empty set".into()));
    }
    Ok(preds
        .iter()
        .zip(samples.labels())
        .map(|(p, y)| (p - y).powi(2))
        .sum::<f64>()
        / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    PlainSgd,
    AdaptiveMoment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping; 0 disables
    /// early stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            epochs: 200,
            batch_size: 256,
            learning_rate: 1e-3,
            optimizer: Optimizer::AdaptiveMoment,
            validation_fraction: 0.1,
            patience: 10,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || !(self.learning_rate > 0.0)
            || !(0.0..1.0).contains(&self.validation_fraction)
        {
            return Err(Error::InvalidInput(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// 1-based.
    pub epoch: usize,
    pub train: f64,
    /// Absent when no validation rows were held out.
    pub validation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub history: Vec<EpochLoss>,
    /// Epoch whose parameters were kept; 0 when no epoch ran.
    pub best_epoch: usize,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    step: i32,
    m: Vec<(Vec<f64>, Vec<f64>)>,
    v: Vec<(Vec<f64>, Vec<f64>)>,
}

impl OptimizerState {
    fn new(net: &Network, cfg: &TrainConfig) -> Self {
        let zeros = Gradients::zeros(net).layers;
        OptimizerState {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn apply(&mut self, net: &mut Network, grads: &Gradients) {
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step);
        for (k, layer) in net.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[k];
            let (mw, mb) = &mut self.m[k];
            let (vw, vb) = &mut self.v[k];
            let groups = [
                (&mut layer.weights, gw, mw, vw),
                (&mut layer.biases, gb, mb, vb),
            ];
            for (params, g, m, v) in groups {
                match self.kind {
                    Optimizer::PlainSgd => {
                        for (p, g) in params.iter_mut().zip(g.iter()) {
                            *p -= self.lr * g;
                        }
                    }
                    Optimizer::AdaptiveMoment => {
                        for i in 0..params.len() {
                            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                            let mh = m[i] / bc1;
                            let vh = v[i] / bc2;
                            params[i] -= self.lr * mh / (vh.sqrt() + ADAM_EPS);
                        }
                    }
                }
            }
        }
    }
}

/// Mini-batch training with early stopping on held-out rows.
///
/// A seeded permutation holds out `validation_fraction` of the rows; the
/// parameters with the lowest validation loss (training loss when nothing is
/// held out) are returned. Deterministic in `cfg.seed` and row order.
pub fn train(net: &Network, samples: &Samples, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyData("no training rows".into()));
    }
    if samples.dim() != net.spec.input_dim {
        return Err(Error::Dimension {
            expected: net.spec.input_dim,
            actual: samples.dim(),
        });
    }
    let mut net = net.clone();
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            network: net,
            history: Vec::new(),
            best_epoch: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = (samples.len() as f64 * cfg.validation_fraction).floor() as usize;
    let n_val = n_val.min(samples.len() - 1);
    let validation = samples.select(&order[..n_val]);
    let mut train_idx = order[n_val..].to_vec();

    let mut ws = Workspace::new(&net.spec);
    let mut grads = Gradients::zeros(&net);
    let mut opt = OptimizerState::new(&net, cfg);
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, net.clone(), 0usize);
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut sq_sum = 0.0;
        for batch in train_idx.chunks(cfg.batch_size) {
            grads.reset();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                sq_sum += net.accumulate(samples.row(i), samples.label(i), scale, &mut ws, &mut grads);
            }
            opt.apply(&mut net, &grads);
        }
        let train_loss = sq_sum / train_idx.len() as f64;
        let val_loss = if validation.is_empty() {
            None
        } else {
            Some(mse(&net, &validation)?)
        };
        if !train_loss.is_finite() || val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        history.push(EpochLoss {
            epoch,
            train: train_loss,
            validation: val_loss,
        });
        let monitored = val_loss.unwrap_or(train_loss);
        if monitored < best.0 {
            best = (monitored, net.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        network: best.1,
        history,
        best_epoch: best.2,
    })
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u64,
    spec: NetworkSpec,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    scaler: Option<ScalerStats>,
}

/// Serializes a network and its optional scaler as a versioned JSON document.
pub fn network_to_json(net: &Network, scaler: Option<&ScalerStats>) -> String {
    let file = ModelFile {
        version: MODEL_FILE_VERSION,
        spec: net.spec.clone(),
        weights: net.layers.iter().map(|l| l.weights.clone()).collect(),
        biases: net.layers.iter().map(|l| l.biases.clone()).collect(),
        scaler: scaler.cloned(),
    };
    serde_json::to_string(&file).expect("model serializes")
}

pub fn network_from_json(text: &str) -> Result<(Network, Option<ScalerStats>)> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let version = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Format("model file has no version".into()))?;
    if version != MODEL_FILE_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let file: ModelFile = serde_json::from_value(value)?;
    if file.weights.len() != file.biases.len() {
        return Err(Error::Format("weights and biases disagree on layer count".into()));
    }
    let shapes = file.spec.shapes();
    let layers = file
        .weights
        .into_iter()
        .zip(file.biases)
        .zip(shapes.iter().chain(std::iter::repeat(&(0, 0))))
        .map(|((weights, biases), &(inputs, outputs))| Layer {
            inputs,
            outputs,
            weights,
            biases,
        })
        .collect();
    let net = Network::from_layers(file.spec, layers)?;
    if let Some(s) = &file.scaler {
        if s.dim() != net.spec.input_dim || s.feature_sd.len() != s.dim() {
            return Err(Error::Format("scaler dimension does not match network input".into()));
        }
    }
    Ok((net, file.scaler))
}

pub fn save_network(path: &Path, net: &Network, scaler: Option<&ScalerStats>) -> Result<()> {
    std::fs::write(path, network_to_json(net, scaler))?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<(Network, Option<ScalerStats>)> {
    network_from_json(&std::fs::read_to_string(path)?)
}
