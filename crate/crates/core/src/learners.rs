//! Small differentiable models and a seeded mini-batch SGD trainer.
//!
//! Three model kinds are provided: a linear softmax classifier, a linear
//! one-vs-rest squared-hinge classifier and a one-hidden-layer tanh network
//! with a softmax output. Parameters live in one flat vector so that
//! per-example gradients, norms and checkpoints treat every kind alike.
//!
//! The per-example objective is `f_i(w) = l_i(w) + lambda * ||W||^2`, where
//! `W` collects the weight matrices (biases are not penalised). Training
//! minimises the (optionally importance-weighted) mean of `f_i`.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Observed;
use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LinearSoftmax,
    LinearSquaredHinge,
    Mlp1Hidden,
}

impl ModelKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear-softmax" => Some(ModelKind::LinearSoftmax),
            "linear-squared-hinge" => Some(ModelKind::LinearSquaredHinge),
            "mlp-1hidden" => Some(ModelKind::Mlp1Hidden),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LinearSoftmax => "linear-softmax",
            ModelKind::LinearSquaredHinge => "linear-squared-hinge",
            ModelKind::Mlp1Hidden => "mlp-1hidden",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub hidden_width: usize,
    #[serde(default)]
    pub l2_lambda: f64,
}

impl ModelSpec {
    pub fn linear(kind: ModelKind, input_dim: usize, num_classes: usize, l2_lambda: f64) -> Self {
        ModelSpec {
            kind,
            input_dim,
            num_classes,
            hidden_width: 0,
            l2_lambda,
        }
    }

    pub fn mlp(input_dim: usize, num_classes: usize, hidden_width: usize, l2_lambda: f64) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp1Hidden,
            input_dim,
            num_classes,
            hidden_width,
            l2_lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::param("input_dim", "must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::param("num_classes", "need at least two classes"));
        }
        if self.kind == ModelKind::Mlp1Hidden && self.hidden_width == 0 {
            return Err(Error::param("hidden_width", "an MLP needs at least one hidden unit"));
        }
        if !(self.l2_lambda >= 0.0) || !self.l2_lambda.is_finite() {
            return Err(Error::param("l2_lambda", "must be a finite nonnegative number"));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let (d, c, h) = (self.input_dim, self.num_classes, self.hidden_width);
        match self.kind {
            ModelKind::LinearSoftmax | ModelKind::LinearSquaredHinge => c * d + c,
            ModelKind::Mlp1Hidden => h * d + h + c * h + c,
        }
    }

    /// Whether flat parameter `idx` belongs to a weight matrix (penalised)
    /// rather than a bias.
    pub fn is_weight(&self, idx: usize) -> bool {
        let (d, c, h) = (self.input_dim, self.num_classes, self.hidden_width);
        match self.kind {
            ModelKind::LinearSoftmax | ModelKind::LinearSquaredHinge => idx < c * d,
            ModelKind::Mlp1Hidden => idx < h * d || (idx >= h * d + h && idx < h * d + h + c * h),
        }
    }

    fn fan_in(&self, idx: usize) -> usize {
        let (d, h) = (self.input_dim, self.hidden_width);
        match self.kind {
            ModelKind::Mlp1Hidden if idx >= h * d + h => h,
            _ => d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    Constant,
    Cosine,
    /// `lr / (1 + t / T0)` with `T0` a tenth of the total step count, floored
    /// at `lr / 100`.
    DecreasingClamped,
}

impl Schedule {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "constant" => Some(Schedule::Constant),
            "cosine" => Some(Schedule::Cosine),
            "decreasing-clamped" => Some(Schedule::DecreasingClamped),
            _ => None,
        }
    }

    pub fn lr_at(self, base: f64, step: usize, total_steps: usize) -> f64 {
        let total = total_steps.max(1) as f64;
        let t = step as f64;
        match self {
            Schedule::Constant => base,
            Schedule::Cosine => base * 0.5 * (1.0 + math::cos(core::f64::consts::PI * t / total)),
            Schedule::DecreasingClamped => {
                let t0 = (total / 10.0).max(1.0);
                (base / (1.0 + t / t0)).max(base / 100.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: Schedule,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
    /// Caps every step at the inverse of a per-batch curvature bound,
    /// `1 / mean_i(zeta_i * 2 * (||x_i||^2 + 1 + lambda))`. The bound is exact for the
    /// squared-hinge model and conservative for softmax; for the MLP it only
    /// scales with the input energy.
    #[serde(default)]
    pub curvature_clamp: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::param("lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::param("weight_decay", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Per-example statistics of a model on a dataset.
///
/// `loss` is the data loss `l_i` (no penalty), `margin` is
/// `z_y - max_{k != y} z_k`, and `grad_norm` is the Euclidean norm of the
/// full-parameter gradient of `f_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerSampleStats {
    pub loss: Vec<f64>,
    pub margin: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub correct: Vec<bool>,
}

impl PerSampleStats {
    pub fn len(&self) -> usize {
        self.loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    spec: ModelSpec,
    params: Vec<f64>,
}

struct Scratch {
    logits: Vec<f64>,
    dz: Vec<f64>,
    hidden: Vec<f64>,
    dh: Vec<f64>,
}

impl Scratch {
    fn new(spec: &ModelSpec) -> Self {
        Scratch {
            logits: vec![0.0; spec.num_classes],
            dz: vec![0.0; spec.num_classes],
            hidden: vec![0.0; spec.hidden_width],
            dh: vec![0.0; spec.hidden_width],
        }
    }
}

impl TrainedModel {
    /// Uniform initialisation in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for
    /// weights and biases alike.
    pub fn init(spec: ModelSpec, rng: &mut Stream) -> Result<Self> {
        spec.validate()?;
        let params = (0..spec.num_params())
            .map(|i| {
                let bound = 1.0 / math::sqrt(spec.fan_in(i) as f64);
                rng.random_range(-bound..bound)
            })
            .collect();
        Ok(TrainedModel { spec, params })
    }

    pub fn from_params(spec: ModelSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        check_dim("parameter vector", spec.num_params(), params.len())?;
        Ok(TrainedModel { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn weight_norm_sq(&self) -> f64 {
        self.params
            .iter()
            .enumerate()
            .filter(|(i, _)| self.spec.is_weight(*i))
            .map(|(_, w)| w * w)
            .sum()
    }

    fn forward(&self, x: &[f64], s: &mut Scratch) {
        let (d, c, h) = (self.spec.input_dim, self.spec.num_classes, self.spec.hidden_width);
        let p = &self.params;
        match self.spec.kind {
            ModelKind::LinearSoftmax | ModelKind::LinearSquaredHinge => {
                for k in 0..c {
                    s.logits[k] = math::dot(&p[k * d..(k + 1) * d], x) + p[c * d + k];
                }
            }
            ModelKind::Mlp1Hidden => {
                let (w1, rest) = p.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(c * h);
                for u in 0..h {
                    s.hidden[u] = math::tanh(math::dot(&w1[u * d..(u + 1) * d], x) + b1[u]);
                }
                for k in 0..c {
                    s.logits[k] = math::dot(&w2[k * h..(k + 1) * h], &s.hidden) + b2[k];
                }
            }
        }
    }

    /// Data loss from logits, with `dl/dz` written into `s.dz`.
    fn loss_and_dz(&self, y: usize, s: &mut Scratch) -> f64 {
        match self.spec.kind {
            ModelKind::LinearSquaredHinge => {
                let mut loss = 0.0;
                for k in 0..self.spec.num_classes {
                    let t = if k == y { 1.0 } else { -1.0 };
                    let slack = 1.0 - t * s.logits[k];
                    if slack > 0.0 {
                        loss += slack * slack;
                        s.dz[k] = -2.0 * t * slack;
                    } else {
                        s.dz[k] = 0.0;
                    }
                }
                loss
            }
            ModelKind::LinearSoftmax | ModelKind::Mlp1Hidden => {
                let lse = math::log_sum_exp(&s.logits);
                math::softmax(&s.logits, &mut s.dz);
                s.dz[y] -= 1.0;
                lse - s.logits[y]
            }
        }
    }

    /// Adds `scale * grad l_i` (data part only) into `acc`; returns `l_i`.
    fn accumulate(&self, x: &[f64], y: usize, scale: f64, acc: &mut [f64], s: &mut Scratch) -> f64 {
        self.forward(x, s);
        let loss = self.loss_and_dz(y, s);
        let (d, c, h) = (self.spec.input_dim, self.spec.num_classes, self.spec.hidden_width);
        match self.spec.kind {
            ModelKind::LinearSoftmax | ModelKind::LinearSquaredHinge => {
                for k in 0..c {
                    let g = scale * s.dz[k];
                    if g != 0.0 {
                        for (a, &xj) in acc[k * d..(k + 1) * d].iter_mut().zip(x) {
                            *a += g * xj;
                        }
                        acc[c * d + k] += g;
                    }
                }
            }
            ModelKind::Mlp1Hidden => {
                let w2 = &self.params[h * d + h..h * d + h + c * h];
                for u in 0..h {
                    let mut back = 0.0;
                    for k in 0..c {
                        back += w2[k * h + u] * s.dz[k];
                    }
                    s.dh[u] = back * (1.0 - s.hidden[u] * s.hidden[u]);
                }
                let (gw1, rest) = acc.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(c * h);
                for u in 0..h {
                    let g = scale * s.dh[u];
                    for (a, &xj) in gw1[u * d..(u + 1) * d].iter_mut().zip(x) {
                        *a += g * xj;
                    }
                    gb1[u] += g;
                }
                for k in 0..c {
                    let g = scale * s.dz[k];
                    for (a, &hu) in gw2[k * h..(k + 1) * h].iter_mut().zip(&s.hidden) {
                        *a += g * hu;
                    }
                    gb2[k] += g;
                }
            }
        }
        loss
    }

    fn add_penalty_gradient(&self, scale: f64, acc: &mut [f64]) {
        let lam = self.spec.l2_lambda;
        if lam == 0.0 {
            return;
        }
        for (i, (a, &w)) in acc.iter_mut().zip(&self.params).enumerate() {
            if self.spec.is_weight(i) {
                *a += scale * 2.0 * lam * w;
            }
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut s = Scratch::new(&self.spec);
        self.forward(x, &mut s);
        s.logits
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let z = self.logits(x);
        let mut p = vec![0.0; z.len()];
        math::softmax(&z, &mut p);
        p
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    pub fn data_loss(&self, x: &[f64], y: usize) -> f64 {
        let mut s = Scratch::new(&self.spec);
        self.forward(x, &mut s);
        self.loss_and_dz(y, &mut s)
    }

    /// `f_i = l_i + lambda * ||W||^2`.
    pub fn objective_loss(&self, x: &[f64], y: usize) -> f64 {
        self.data_loss(x, y) + self.spec.l2_lambda * self.weight_norm_sq()
    }

    /// Writes the full-parameter gradient of `f_i` into `grad` and returns
    /// the data loss `l_i`.
    pub fn sample_gradient(&self, x: &[f64], y: usize, grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut s = Scratch::new(&self.spec);
        let loss = self.accumulate(x, y, 1.0, grad, &mut s);
        self.add_penalty_gradient(1.0, grad);
        loss
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
}

/// First index attaining the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `z_y - max_{k != y} z_k`.
pub fn margin(logits: &[f64], y: usize) -> f64 {
    let other = logits
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != y)
        .map(|(_, &z)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    logits[y] - other
}

fn check_model_data(model: &TrainedModel, data: &Observed) -> Result<()> {
    check_dim("input features", model.spec.input_dim, data.dim())?;
    check_dim("class count", model.spec.num_classes, data.num_classes())
}

/// Weighted mini-batch gradient `(1/|B|) sum_{i in B} w(i) grad f_i` written
/// into `out`. Returns the weighted mean data loss of the batch.
pub fn batch_gradient(
    model: &TrainedModel,
    data: &Observed,
    batch: &[usize],
    weight: impl Fn(usize) -> f64,
    out: &mut [f64],
) -> Result<f64> {
    check_model_data(model, data)?;
    check_dim("gradient buffer", model.num_params(), out.len())?;
    out.iter_mut().for_each(|g| *g = 0.0);
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut s = Scratch::new(&model.spec);
    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut weight_sum = 0.0;
    for &i in batch {
        if i >= data.len() {
            return Err(Error::param("batch", "index outside dataset"));
        }
        let w = weight(i);
        weight_sum += w;
        loss += w * model.accumulate(data.x(i), data.labels()[i], w * inv, out, &mut s);
    }
    model.add_penalty_gradient(weight_sum * inv, out);
    Ok(loss * inv)
}

/// How one epoch visits the training set.
pub trait EpochSampler {
    fn epoch_indices(&self, n: usize, rng: &mut Stream) -> Vec<usize>;

    /// Length of the sequence returned by `epoch_indices`.
    fn draws_per_epoch(&self, n: usize) -> usize {
        n
    }

    /// Gradient multiplier for example `i`.
    fn weight(&self, _i: usize) -> f64 {
        1.0
    }
}

/// Full shuffle once per epoch, unit weights.
#[derive(Debug, Clone, Copy, Default)]
pub struct Shuffle;

impl EpochSampler for Shuffle {
    fn epoch_indices(&self, n: usize, rng: &mut Stream) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        idx
    }
}

/// Passed to the epoch hook after every epoch.
pub struct EpochReport<'a> {
    /// 1-based epoch number.
    pub epoch: usize,
    pub model: &'a TrainedModel,
    pub stats: &'a PerSampleStats,
}

pub fn train(spec: &ModelSpec, cfg: &TrainConfig, data: &Observed) -> Result<TrainedModel> {
    train_with(spec, cfg, data, &Shuffle, None)
}

/// Mini-batch SGD with optional momentum and decoupled weight decay.
///
/// Initialisation and batch order draw from separate streams derived from
/// `cfg.seed`. When `hook` is given it receives per-example statistics of
/// the current model after every epoch.
pub fn train_with(
    spec: &ModelSpec,
    cfg: &TrainConfig,
    data: &Observed,
    sampler: &dyn EpochSampler,
    mut hook: Option<&mut dyn FnMut(EpochReport<'_>)>,
) -> Result<TrainedModel> {
    spec.validate()?;
    cfg.validate()?;
    check_dim("input features", spec.input_dim, data.dim())?;
    check_dim("class count", spec.num_classes, data.num_classes())?;
    if data.is_empty() {
        return Err(Error::param("data", "cannot train on an empty dataset"));
    }
    let mut model = TrainedModel::init(spec.clone(), &mut rng::stream(cfg.seed, "init"))?;
    let mut order_rng = rng::stream(cfg.seed, "batch-order");
    let n = data.len();
    let steps_per_epoch = sampler.draws_per_epoch(n).div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut grad = vec![0.0; model.num_params()];
    let mut velocity = vec![0.0; model.num_params()];
    let sq_norms: Vec<f64> = if cfg.curvature_clamp {
        (0..n).map(|i| math::dot(data.x(i), data.x(i))).collect()
    } else {
        Vec::new()
    };
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let order = sampler.epoch_indices(n, &mut order_rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut lr = cfg.schedule.lr_at(cfg.lr, step, total_steps);
            step += 1;
            let loss = batch_gradient(&model, data, batch, |i| sampler.weight(i), &mut grad)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            if cfg.curvature_clamp {
                let curvature = batch
                    .iter()
                    .map(|&i| sampler.weight(i) * 2.0 * (sq_norms[i] + 1.0 + spec.l2_lambda))
                    .sum::<f64>()
                    / batch.len() as f64;
                if curvature > 0.0 {
                    lr = lr.min(1.0 / curvature);
                }
            }
            let params = model.params_mut();
            for ((p, v), &g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                let g = g + cfg.weight_decay * *p;
                *v = cfg.momentum * *v + g;
                *p -= lr * *v;
            }
        }
        if let Some(h) = hook.as_mut() {
            let stats = eval_stats(&model, data)?;
            if stats.loss.iter().any(|l| !l.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            h(EpochReport {
                epoch,
                model: &model,
                stats: &stats,
            });
        }
    }
    if model.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Divergence { epoch: cfg.epochs });
    }
    Ok(model)
}

pub fn eval_stats(model: &TrainedModel, data: &Observed) -> Result<PerSampleStats> {
    check_model_data(model, data)?;
    let n = data.len();
    let mut out = PerSampleStats {
        loss: Vec::with_capacity(n),
        margin: Vec::with_capacity(n),
        grad_norm: Vec::with_capacity(n),
        correct: Vec::with_capacity(n),
    };
    let mut s = Scratch::new(&model.spec);
    let mut grad = vec![0.0; model.num_params()];
    for i in 0..n {
        let (x, y) = (data.x(i), data.labels()[i]);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let loss = model.accumulate(x, y, 1.0, &mut grad, &mut s);
        model.add_penalty_gradient(1.0, &mut grad);
        out.loss.push(loss);
        out.margin.push(margin(&s.logits, y));
        out.correct.push(argmax(&s.logits) == y);
        out.grad_norm.push(math::norm2(&grad));
    }
    Ok(out)
}

pub fn gradient_norms(model: &TrainedModel, data: &Observed) -> Result<Vec<f64>> {
    Ok(eval_stats(model, data)?.grad_norm)
}

/// Fraction of correctly classified examples, over all of `data` or over the
/// examples selected by `mask`.
pub fn accuracy(model: &TrainedModel, data: &Observed, mask: Option<&[bool]>) -> Result<f64> {
    check_model_data(model, data)?;
    if let Some(m) = mask {
        check_dim("mask", data.len(), m.len())?;
    }
    let mut hit = 0usize;
    let mut total = 0usize;
    for i in 0..data.len() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        total += 1;
        hit += usize::from(model.predict(data.x(i)) == data.labels()[i]);
    }
    if total == 0 {
        return Err(Error::UndefinedStatistic("accuracy over an empty selection"));
    }
    Ok(hit as f64 / total as f64)
}
