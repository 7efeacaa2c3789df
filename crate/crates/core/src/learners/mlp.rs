//! Single-hidden-layer ReLU perceptrons trained with mini-batch Adam, in a
//! softmax/cross-entropy classifier flavor and a linear/squared-error
//! regressor flavor.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use crate::error::{invalid, CcrError, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Hidden layer width; `None` means `100 * d`.
    pub hidden_width: Option<usize>,
    /// Penalty `alpha`: a batch of `n` rows adds `alpha / (2n) * ||W||^2` to its mean loss.
    pub l2_penalty: f64,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs without a `tolerance` improvement before stopping.
    pub patience: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_width: None,
            l2_penalty: 0.001,
            max_epochs: 200,
            validation_fraction: 0.1,
            learning_rate: 0.01,
            batch_size: 200,
            patience: 10,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn width_for(&self, d: usize) -> usize {
        self.hidden_width.unwrap_or(100 * d)
    }

    fn validate(&self) -> Result<()> {
        if self.hidden_width == Some(0) {
            return Err(invalid("hidden width must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(invalid("validation fraction must lie in [0, 1)"));
        }
        if !(self.l2_penalty >= 0.0) {
            return Err(invalid("l2 penalty must be non-negative"));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(invalid(
                "learning rate, batch size and epoch limit must be positive",
            ));
        }
        Ok(())
    }
}

/// Parameters of `x -> W2 relu(W1 x + b1) + b2`, stored flat as
/// `[W1 (hidden x inputs), b1, W2 (outputs x hidden), b2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub params: Vec<f64>,
}

/// What the output layer is fit to.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    /// Class indices; softmax + mean cross-entropy.
    Classes(&'a [usize]),
    /// Real values; single linear output + mean squared error.
    Values(ArrayView1<'a, f64>),
}

impl Target<'_> {
    fn len(&self) -> usize {
        match self {
            Target::Classes(c) => c.len(),
            Target::Values(v) => v.len(),
        }
    }

    fn select(&self, idx: &[usize]) -> OwnedTarget {
        match self {
            Target::Classes(c) => OwnedTarget::Classes(idx.iter().map(|&i| c[i]).collect()),
            Target::Values(v) => OwnedTarget::Values(v.select(Axis(0), idx)),
        }
    }
}

enum OwnedTarget {
    Classes(Vec<usize>),
    Values(Array1<f64>),
}

impl OwnedTarget {
    fn view(&self) -> Target<'_> {
        match self {
            OwnedTarget::Classes(c) => Target::Classes(c),
            OwnedTarget::Values(v) => Target::Values(v.view()),
        }
    }
}

fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax of one logit vector.
pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let m = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = logits.mapv(|v| (v - m).exp());
    let total = e.sum();
    e / total
}

impl Network {
    fn offsets(&self) -> [usize; 4] {
        let w1 = self.hidden * self.inputs;
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.outputs * self.hidden;
        [w1, b1, w2, w2 + self.outputs]
    }

    pub fn num_params(&self) -> usize {
        self.offsets()[3]
    }

    /// Glorot-uniform weights and biases, `U(-b, b)` with `b = sqrt(6/(fan_in+fan_out))`.
    pub fn init(inputs: usize, hidden: usize, outputs: usize, rng: &mut rng::Rng) -> Self {
        let mut net = Network {
            inputs,
            hidden,
            outputs,
            params: Vec::new(),
        };
        let n = net.num_params();
        let bound1 = (6.0 / (inputs + hidden) as f64).sqrt();
        let bound2 = (6.0 / (hidden + outputs) as f64).sqrt();
        let split = net.offsets()[1];
        net.params = (0..n)
            .map(|i| {
                let b = if i < split { bound1 } else { bound2 };
                rng.random_range(-b..b)
            })
            .collect();
        net
    }

    pub fn zeros(inputs: usize, hidden: usize, outputs: usize) -> Self {
        let mut net = Network {
            inputs,
            hidden,
            outputs,
            params: Vec::new(),
        };
        net.params = vec![0.0; net.num_params()];
        net
    }

    fn parts(params: &[f64], inputs: usize, hidden: usize, outputs: usize) -> Layers<'_> {
        let (w1, rest) = params.split_at(hidden * inputs);
        let (b1, rest) = rest.split_at(hidden);
        let (w2, b2) = rest.split_at(outputs * hidden);
        Layers {
            w1: ArrayView2::from_shape((hidden, inputs), w1).expect("layout"),
            b1: ArrayView1::from(b1),
            w2: ArrayView2::from_shape((outputs, hidden), w2).expect("layout"),
            b2: ArrayView1::from(b2),
        }
    }

    fn layers(&self) -> Layers<'_> {
        Self::parts(&self.params, self.inputs, self.hidden, self.outputs)
    }

    pub fn w1(&self) -> ArrayView2<'_, f64> {
        self.layers().w1
    }

    pub fn b1(&self) -> ArrayView1<'_, f64> {
        self.layers().b1
    }

    pub fn w2(&self) -> ArrayView2<'_, f64> {
        self.layers().w2
    }

    pub fn b2(&self) -> ArrayView1<'_, f64> {
        self.layers().b2
    }

    /// Squared Frobenius norm of the weight matrices (biases excluded).
    pub fn weight_norm_sq(&self) -> f64 {
        let l = self.layers();
        l.w1.iter().chain(l.w2.iter()).map(|w| w * w).sum()
    }

    fn hidden_pre(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let l = self.layers();
        let mut a = x.dot(&l.w1.t());
        a += &l.b1;
        a
    }

    /// Output-layer values (logits or regression outputs) for every row.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        const CHUNK: usize = 4096;
        let l = self.layers();
        let mut out = Array2::zeros((x.nrows(), self.outputs));
        for (xc, mut oc) in x
            .axis_chunks_iter(Axis(0), CHUNK)
            .zip(out.axis_chunks_iter_mut(Axis(0), CHUNK))
        {
            let h = self.hidden_pre(xc).mapv_into(|v| v.max(0.0));
            oc.assign(&h.dot(&l.w2.t()));
            oc += &l.b2;
        }
        out
    }

    /// Mean data loss over the rows (no penalty term).
    pub fn data_loss(&self, x: ArrayView2<f64>, target: Target) -> f64 {
        let z = self.forward(x);
        mean_loss(z.view(), target)
    }

    /// Data loss plus `l2/2 * ||W||^2`.
    pub fn objective(&self, x: ArrayView2<f64>, target: Target, l2: f64) -> f64 {
        self.data_loss(x, target) + 0.5 * l2 * self.weight_norm_sq()
    }

    /// Objective and its gradient (same flat layout as `params`).
    pub fn objective_and_gradient(
        &self,
        x: ArrayView2<f64>,
        target: Target,
        l2: f64,
        grad: &mut [f64],
    ) -> f64 {
        let n = x.nrows() as f64;
        let l = self.layers();
        let pre = self.hidden_pre(x);
        let h = pre.mapv(|v| v.max(0.0));
        let mut z = h.dot(&l.w2.t());
        z += &l.b2;
        let loss = mean_loss(z.view(), target);

        // dL/dz, already divided by n.
        let mut dz = z;
        match target {
            Target::Classes(c) => {
                for (mut row, &k) in dz.outer_iter_mut().zip(c) {
                    let lse = log_sum_exp(row.view());
                    row.mapv_inplace(|v| (v - lse).exp());
                    row[k] -= 1.0;
                    row /= n;
                }
            }
            Target::Values(y) => {
                for (mut row, &t) in dz.outer_iter_mut().zip(y.iter()) {
                    row[0] = 2.0 * (row[0] - t) / n;
                }
            }
        }

        let (inputs, hidden, outputs) = (self.inputs, self.hidden, self.outputs);
        let mut g = GradLayers::new(grad, inputs, hidden, outputs);
        g.w2.assign(&dz.t().dot(&h));
        g.w2.scaled_add(l2, &l.w2);
        g.b2.assign(&dz.sum_axis(Axis(0)));
        let mut dh = dz.dot(&l.w2);
        dh.zip_mut_with(&pre, |d, &p| {
            if p <= 0.0 {
                *d = 0.0
            }
        });
        g.w1.assign(&dh.t().dot(&x));
        g.w1.scaled_add(l2, &l.w1);
        g.b1.assign(&dh.sum_axis(Axis(0)));

        loss + 0.5 * l2 * self.weight_norm_sq()
    }
}

struct Layers<'a> {
    w1: ArrayView2<'a, f64>,
    b1: ArrayView1<'a, f64>,
    w2: ArrayView2<'a, f64>,
    b2: ArrayView1<'a, f64>,
}

struct GradLayers<'a> {
    w1: ArrayViewMut2<'a, f64>,
    b1: ArrayViewMut1<'a, f64>,
    w2: ArrayViewMut2<'a, f64>,
    b2: ArrayViewMut1<'a, f64>,
}

impl<'a> GradLayers<'a> {
    fn new(grad: &'a mut [f64], inputs: usize, hidden: usize, outputs: usize) -> Self {
        let (w1, rest) = grad.split_at_mut(hidden * inputs);
        let (b1, rest) = rest.split_at_mut(hidden);
        let (w2, b2) = rest.split_at_mut(outputs * hidden);
        GradLayers {
            w1: ArrayViewMut2::from_shape((hidden, inputs), w1).expect("layout"),
            b1: ArrayViewMut1::from(b1),
            w2: ArrayViewMut2::from_shape((outputs, hidden), w2).expect("layout"),
            b2: ArrayViewMut1::from(b2),
        }
    }
}

fn mean_loss(z: ArrayView2<f64>, target: Target) -> f64 {
    let n = z.nrows() as f64;
    match target {
        Target::Classes(c) => {
            z.outer_iter()
                .zip(c)
                .map(|(row, &k)| log_sum_exp(row) - row[k])
                .sum::<f64>()
                / n
        }
        Target::Values(y) => {
            z.column(0)
                .iter()
                .zip(y.iter())
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
                / n
        }
    }
}

/// Diagnostics of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs: usize,
    /// Full-training-set objective at initialization and for the returned parameters.
    pub initial_objective: f64,
    pub final_objective: f64,
    /// Monitored loss per epoch (validation loss, or mean batch loss without holdout).
    pub monitored: Vec<f64>,
    pub used_validation: bool,
}

fn holdout_split(
    n: usize,
    target: Target,
    fraction: f64,
    rng: &mut rng::Rng,
) -> (Vec<usize>, Vec<usize>) {
    const MIN_ROWS_FOR_HOLDOUT: usize = 20;
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(rng);
    if fraction == 0.0 {
        return (all, Vec::new());
    }
    if n < MIN_ROWS_FOR_HOLDOUT {
        log::warn!("{n} rows is too few for a validation holdout; training on all rows");
        return (all, Vec::new());
    }
    let mut val = Vec::new();
    let mut train = Vec::new();
    match target {
        // Stratified so every class keeps most of its rows for training.
        Target::Classes(c) => {
            let k = c.iter().max().map_or(0, |m| m + 1);
            let mut by_class = vec![Vec::new(); k];
            for &i in &all {
                by_class[c[i]].push(i);
            }
            for rows in by_class {
                let take = (rows.len() as f64 * fraction).floor() as usize;
                val.extend_from_slice(&rows[..take]);
                train.extend_from_slice(&rows[take..]);
            }
            train.shuffle(rng);
        }
        Target::Values(_) => {
            let take = ((n as f64 * fraction).ceil() as usize).min(n - 1);
            val.extend_from_slice(&all[..take]);
            train.extend_from_slice(&all[take..]);
        }
    }
    (train, val)
}

/// Mini-batch Adam on the penalized objective with validation-based early
/// stopping; returns the parameters with the best monitored loss.
pub fn train(
    x: ArrayView2<f64>,
    target: Target,
    outputs: usize,
    cfg: &MlpConfig,
) -> Result<(Network, FitReport)> {
    cfg.validate()?;
    let n = x.nrows();
    if n != target.len() {
        return Err(invalid(format!("{n} rows but {} targets", target.len())));
    }
    if let Some((i, j)) = x
        .indexed_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(ij, _)| ij)
    {
        return Err(CcrError::NonFinite { row: i, column: j });
    }
    let d = x.ncols();
    let mut rng = rng::seeded(cfg.seed);
    let mut net = Network::init(d, cfg.width_for(d), outputs, &mut rng);
    let initial_objective = net.objective(x, target, cfg.l2_penalty / n as f64);

    let (mut train_idx, val_idx) = holdout_split(n, target, cfg.validation_fraction, &mut rng);
    let used_validation = !val_idx.is_empty();
    let (val_x, val_t) = if used_validation {
        (Some(x.select(Axis(0), &val_idx)), Some(target.select(&val_idx)))
    } else {
        (None, None)
    };

    let mut adam = AdamState::new(net.num_params());
    let mut grad = vec![0.0; net.num_params()];
    let batch = cfg.batch_size.min(train_idx.len());
    let mut best_loss = f64::INFINITY;
    let mut best_params = net.params.clone();
    let mut stale = 0;
    let mut monitored = Vec::new();
    let mut epochs = 0;

    for _ in 0..cfg.max_epochs {
        epochs += 1;
        train_idx.shuffle(&mut rng);
        let mut batch_loss_sum = 0.0;
        for chunk in train_idx.chunks(batch) {
            let xb = x.select(Axis(0), chunk);
            let tb = target.select(chunk);
            let l2 = cfg.l2_penalty / chunk.len() as f64;
            let obj = net.objective_and_gradient(xb.view(), tb.view(), l2, &mut grad);
            batch_loss_sum += obj * chunk.len() as f64;
            adam.update(&mut net.params, &grad, cfg.learning_rate)?;
        }
        let loss = match (&val_x, &val_t) {
            (Some(vx), Some(vt)) => net.data_loss(vx.view(), vt.view()),
            _ => batch_loss_sum / train_idx.len() as f64,
        };
        monitored.push(loss);
        if !loss.is_finite() {
            log::warn!("training diverged at epoch {epochs}; keeping best parameters");
            break;
        }
        if loss < best_loss - cfg.tolerance {
            stale = 0;
        } else {
            stale += 1;
        }
        if loss < best_loss {
            best_loss = loss;
            best_params.clone_from(&net.params);
        }
        if stale >= cfg.patience {
            break;
        }
    }
    net.params = best_params;
    let final_objective = net.objective(x, target, cfg.l2_penalty / n as f64);
    Ok((
        net,
        FitReport {
            epochs,
            initial_objective,
            final_objective,
            monitored,
            used_validation,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpClassifier {
    pub network: Network,
}

impl MlpClassifier {
    pub fn num_classes(&self) -> usize {
        self.network.outputs
    }

    pub fn dim(&self) -> usize {
        self.network.inputs
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = self.network.forward(x);
        for mut row in z.outer_iter_mut() {
            let p = softmax(row.view());
            row.assign(&p);
        }
        z
    }
}

/// The network is fit to standardized targets `(y - y_mean) / y_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpRegressor {
    pub network: Network,
    pub y_mean: f64,
    pub y_scale: f64,
}

impl MlpRegressor {
    pub fn dim(&self) -> usize {
        self.network.inputs
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Array1<f64> {
        self.network
            .forward(x)
            .column(0)
            .mapv(|v| self.y_mean + self.y_scale * v)
    }
}

pub fn fit_mlp_classifier(
    x: ArrayView2<f64>,
    labels: &[usize],
    num_classes: usize,
    cfg: &MlpConfig,
) -> Result<(MlpClassifier, FitReport)> {
    super::check_labels(x.nrows(), labels, num_classes)?;
    let (network, report) = train(x, Target::Classes(labels), num_classes, cfg)?;
    Ok((MlpClassifier { network }, report))
}

pub fn fit_mlp_regressor(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    cfg: &MlpConfig,
) -> Result<(MlpRegressor, FitReport)> {
    if x.nrows() < 2 {
        return Err(invalid("regression needs at least 2 rows"));
    }
    let y_mean = y.mean().unwrap_or(0.0);
    let sd = y.std(0.0);
    let y_scale = if sd > 0.0 { sd } else { 1.0 };
    let z = y.mapv(|v| (v - y_mean) / y_scale);
    let (network, report) = train(x, Target::Values(z.view()), 1, cfg)?;
    Ok((
        MlpRegressor {
            network,
            y_mean,
            y_scale,
        },
        report,
    ))
}
