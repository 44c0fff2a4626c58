//! Maximum-likelihood fitting of the ground intensity.
//!
//! The log-likelihood splits into one term per event,
//! `log lambda_d(t_n) - int_{t_{n-1}^d}^{t_n} lambda_d(s) ds`, each of which
//! depends only on row `d` of the kernel matrix and on `mu_d`. Mini-batches
//! of these per-event gradients drive an Adam ascent.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::compensator_model_space;
use crate::model::{apply_scaling, EventSequence, HawkesModel, KernelNet, MarkedEvent, ModelKind};

/// Floor applied to the clamped intensity inside the log at observed events.
pub const LOG_FLOOR: f64 = 1e-10;
/// Lower bound kept on base intensities during optimisation (model units).
pub const MU_FLOOR: f64 = 1e-6;

/// Log-term gradient used by the fit at events whose clamped intensity hit [`LOG_FLOOR`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlooredGradient {
    /// The exact gradient of the floored term, which is zero: nothing pulls
    /// the intensity back up at such an event.
    Exact,
    /// The pre-clamp intensity gradient divided by the base rate, as if the
    /// event saw only `mu_d`. Restores a push towards positive intensity.
    #[default]
    BaseRate,
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub neurons: usize,
    pub batch_size: usize,
    pub lr_output: f64,
    pub lr_hidden: f64,
    pub lr_mu: f64,
    /// Chronological (train, validation, test) fractions.
    pub split: (f64, f64, f64),
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    #[serde(default)]
    pub floored_gradient: FlooredGradient,
    /// Optional kernel support limit in model time units.
    pub lookback: Option<f64>,
}

impl FitConfig {
    /// Defaults with the learning rates suited to `kind`.
    pub fn for_kind(kind: ModelKind) -> Self {
        let (lr_output, lr_hidden) = match kind {
            ModelKind::LinearSnh => (2e-2, 2e-3),
            ModelKind::NonLinearNnnh => (5e-3, 5e-4),
        };
        Self {
            neurons: 64,
            batch_size: 100,
            lr_output,
            lr_hidden,
            lr_mu: 1e-3,
            split: (0.70, 0.15, 0.15),
            patience: 10,
            max_epochs: 200,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            floored_gradient: FlooredGradient::BaseRate,
            lookback: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.split;
        if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions {a}/{b}/{c} must be in [0, 1] and sum to 1"
            )));
        }
        if self.neurons == 0 {
            return Err(Error::Config("neurons must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        let lrs = [self.lr_output, self.lr_hidden, self.lr_mu, self.adam_eps];
        if lrs.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(
                "learning rates and epsilon must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        Self::for_kind(ModelKind::LinearSnh)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sum of training-event terms accumulated while the epoch ran.
    pub train_ll: f64,
    pub valid_ll: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Epoch 0 is the evaluation of the initial parameters.
    pub records: Vec<EpochRecord>,
    pub selected_epoch: usize,
    /// Index of the first validation event and of the first test event.
    pub split_points: (usize, usize),
    /// Events whose clamped intensity hit the log floor in the final validation pass.
    pub floored_events: usize,
}

impl TrainTrace {
    pub fn best_valid_ll(&self) -> Option<f64> {
        self.records
            .iter()
            .map(|r| r.valid_ll)
            .max_by(f64::total_cmp)
    }
}

/// Stops after `patience` consecutive evaluations without a strict improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records the score of `epoch`; true once training should halt.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        if score > self.best {
            self.best = score;
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn improved_last(&self) -> bool {
        self.stale == 0
    }
}

/// Adam ascent with one learning rate per parameter.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Moves `params` along `grad` (maximisation).
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] += lr[i] * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Start of the integration window of event `n`: the previous event of the same dimension, or 0.
pub(crate) fn previous_same_dim(events: &[MarkedEvent], n: usize) -> f64 {
    let d = events[n].dim;
    events[..n]
        .iter()
        .rev()
        .find(|e| e.dim == d)
        .map_or(0.0, |e| e.time)
}

fn prev_times(events: &[MarkedEvent], dims: usize) -> Vec<f64> {
    let mut last = vec![0.0; dims];
    events
        .iter()
        .map(|e| {
            let p = last[e.dim];
            last[e.dim] = e.time;
            p
        })
        .collect()
}

/// Adds `scale * d(pre-intensity of dim d at t)/d theta` to `grad`.
fn add_intensity_gradient(
    model: &HawkesModel,
    d: usize,
    t: f64,
    history: &[MarkedEvent],
    scale: f64,
    grad: &mut [f64],
) {
    let p = model.neurons();
    grad[model.mu_index(d)] += scale;
    let row = model.row(d);
    for e in history {
        let el = t - e.time;
        if !model.in_window(el) {
            continue;
        }
        let net = &row[e.dim];
        let off = model.kernel_offset(d, e.dim);
        // the exponential link multiplies by phi; the identity link by one
        let outer = match net.link {
            crate::model::Link::Exponential => scale * net.eval(el, e.mark),
            crate::model::Link::Identity => scale,
        };
        for i in 0..p {
            let z = net.a1[i] * el + net.a2[i] * e.mark + net.b1[i];
            if z > 0.0 {
                let w = outer * net.a3[i];
                grad[off + i] += w * el;
                grad[off + p + i] += w * e.mark;
                grad[off + 2 * p + i] += w;
                grad[off + 3 * p + i] += outer * z;
            }
        }
        grad[off + 4 * p] += outer;
    }
}

/// Value of `log lambda_d(t_n) - int_{prev}^{t_n} lambda_d` in model space, and
/// whether the log floor was applied. With `grad` (zeroed, full layout) the
/// gradient of that value is written into it.
pub(crate) fn event_term(
    model: &HawkesModel,
    events: &[MarkedEvent],
    n: usize,
    prev: f64,
    grad: Option<&mut [f64]>,
    on_floor: FlooredGradient,
) -> Result<(f64, bool)> {
    let ev = events[n];
    let d = ev.dim;
    let history = &events[..events.partition_point(|e| e.time < ev.time)];
    let pre = model.pre_intensity(d, ev.time, history);
    let (lambda, floored) = match model.kind {
        ModelKind::LinearSnh => {
            if !(pre > 0.0) {
                return Err(Error::LogNonPositive {
                    index: n,
                    value: pre,
                });
            }
            (pre, false)
        }
        ModelKind::NonLinearNnnh => {
            if pre > LOG_FLOOR {
                (pre, false)
            } else {
                (LOG_FLOOR, true)
            }
        }
    };
    match grad {
        None => {
            let comp = compensator_model_space(model, d, events, prev, ev.time, None)?;
            Ok((lambda.ln() - comp, floored))
        }
        Some(g) => {
            let comp = compensator_model_space(model, d, events, prev, ev.time, Some(&mut *g))?;
            for v in g.iter_mut() {
                *v = -*v;
            }
            if !floored {
                add_intensity_gradient(model, d, ev.time, history, 1.0 / lambda, g);
            } else if on_floor == FlooredGradient::BaseRate {
                add_intensity_gradient(model, d, ev.time, history, 1.0 / model.mu[d], g);
            }
            Ok((lambda.ln() - comp, floored))
        }
    }
}

/// Gradient of event `n`'s log-likelihood term with respect to the model's parameters.
///
/// The layout is that of [`HawkesModel::params`]; entries outside row `d` of
/// the kernel matrix and `mu_d` are zero.
pub fn event_gradient(model: &HawkesModel, seq: &EventSequence, n: usize) -> Result<Vec<f64>> {
    if n >= seq.len() {
        return Err(Error::Precondition(format!("event index {n} out of range")));
    }
    let scaled = model.to_model_space(seq)?;
    let events = scaled.events();
    let mut g = vec![0.0; model.n_params()];
    event_term(
        model,
        events,
        n,
        previous_same_dim(events, n),
        Some(&mut g),
        FlooredGradient::Exact,
    )?;
    Ok(g)
}

/// Ground-intensity log-likelihood of dimension `d` on `[a, b]` in raw units.
pub fn log_likelihood_dim(
    model: &HawkesModel,
    d: usize,
    seq: &EventSequence,
    a: f64,
    b: f64,
) -> Result<f64> {
    let scaled = model.to_model_space(seq)?;
    let ts = model.scaling().time_scale;
    let events = scaled.events();
    let mut total = 0.0;
    for (n, e) in events.iter().enumerate() {
        let raw_t = seq.events()[n].time;
        if e.dim != d || raw_t < a || raw_t > b {
            continue;
        }
        let history = &events[..events.partition_point(|h| h.time < e.time)];
        let pre = model.pre_intensity(d, e.time, history);
        let lambda = match model.kind {
            ModelKind::LinearSnh if pre > 0.0 => pre,
            ModelKind::LinearSnh => {
                return Err(Error::LogNonPositive {
                    index: n,
                    value: pre,
                })
            }
            ModelKind::NonLinearNnnh => pre.max(LOG_FLOOR),
        };
        total += (lambda * ts).ln();
    }
    total -= compensator_model_space(model, d, events, a * ts, b * ts, None)?;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("log-likelihood of dimension {d}")));
    }
    Ok(total)
}

/// Gradient of [`log_likelihood_dim`] with respect to the model parameters,
/// computed with one compensator over the whole of `[a, b]`.
pub fn log_likelihood_gradient(
    model: &HawkesModel,
    d: usize,
    seq: &EventSequence,
    a: f64,
    b: f64,
) -> Result<Vec<f64>> {
    let scaled = model.to_model_space(seq)?;
    let ts = model.scaling().time_scale;
    let events = scaled.events();
    let mut g = vec![0.0; model.n_params()];
    compensator_model_space(model, d, events, a * ts, b * ts, Some(&mut g))?;
    for v in g.iter_mut() {
        *v = -*v;
    }
    for (n, e) in events.iter().enumerate() {
        let raw_t = seq.events()[n].time;
        if e.dim != d || raw_t < a || raw_t > b {
            continue;
        }
        let history = &events[..events.partition_point(|h| h.time < e.time)];
        let pre = model.pre_intensity(d, e.time, history);
        match model.kind {
            ModelKind::LinearSnh if pre > 0.0 => {
                add_intensity_gradient(model, d, e.time, history, 1.0 / pre, &mut g)
            }
            ModelKind::LinearSnh => {
                return Err(Error::LogNonPositive {
                    index: n,
                    value: pre,
                })
            }
            ModelKind::NonLinearNnnh if pre > LOG_FLOOR => {
                add_intensity_gradient(model, d, e.time, history, 1.0 / pre, &mut g)
            }
            ModelKind::NonLinearNnnh => {}
        }
    }
    Ok(g)
}

/// `sum_d [ sum_{a <= t_n <= b} log lambda_d(t_n) - int_a^b lambda_d ]` in raw units.
pub fn log_likelihood_ground(
    model: &HawkesModel,
    seq: &EventSequence,
    a: f64,
    b: f64,
) -> Result<f64> {
    (0..model.dims())
        .map(|d| log_likelihood_dim(model, d, seq, a, b))
        .sum()
}

/// Draws initial parameters from the ranges used for each model kind.
pub fn init_model(kind: ModelKind, dims: usize, neurons: usize, seed: u64) -> Result<HawkesModel> {
    if dims == 0 || neurons == 0 {
        return Err(Error::Config("dims and neurons must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(lo..hi)).collect()
    };
    let mut kernels = Vec::with_capacity(dims * dims);
    for _ in 0..dims * dims {
        let net = match kind {
            ModelKind::LinearSnh => {
                let a1 = draw(-0.5, 0.5, neurons);
                let a2 = draw(-0.2, 0.2, neurons);
                let a3 = draw(-1.0, 0.0, neurons);
                let b1 = draw(0.0, 0.03, neurons);
                let b2 = draw(-0.1, 0.0, 1)[0];
                KernelNet::new(a1, a2, b1, a3, b2, kind.link())?
            }
            ModelKind::NonLinearNnnh => {
                let a1 = draw(-0.7, 0.0, neurons);
                let a2 = draw(-0.2, 0.2, neurons);
                let a3 = draw(0.0, 1.0, neurons);
                let b1 = draw(0.0, 0.25, neurons);
                KernelNet::new(a1, a2, b1, a3, 0.0, kind.link())?
            }
        };
        kernels.push(net);
    }
    HawkesModel::new(kind, vec![1.0; dims], kernels)
}

fn learning_rates(model: &HawkesModel, config: &FitConfig) -> Vec<f64> {
    let p = model.neurons();
    let mut lr = vec![0.0; model.n_params()];
    for d in 0..model.dims() {
        lr[model.mu_index(d)] = config.lr_mu;
        for j in 0..model.dims() {
            let off = model.kernel_offset(d, j);
            lr[off..off + 3 * p].fill(config.lr_hidden);
            lr[off + 3 * p..off + 4 * p + 1].fill(config.lr_output);
        }
    }
    lr
}

/// Sum of event terms over `range` (value only), with the number of floored events.
fn sum_terms(
    model: &HawkesModel,
    events: &[MarkedEvent],
    prev: &[f64],
    range: std::ops::Range<usize>,
) -> Result<(f64, usize)> {
    let parts: Vec<Result<(f64, bool)>> = range
        .into_par_iter()
        .map(|n| event_term(model, events, n, prev[n], None, FlooredGradient::Exact))
        .collect();
    let mut total = 0.0;
    let mut floored = 0;
    for p in parts {
        let (v, f) = p?;
        total += v;
        floored += f as usize;
    }
    Ok((total, floored))
}

/// Fits a model of the given kind to `seq`.
///
/// Data are scaled first; the returned model carries the scaling so that it
/// evaluates in raw units. Training runs over the first `split.0` of the
/// events, the next `split.1` drive early stopping, and the remainder is left
/// for testing. Held-out terms condition on the full prior history.
pub fn fit(
    seq: &EventSequence,
    kind: ModelKind,
    config: &FitConfig,
) -> Result<(HawkesModel, TrainTrace)> {
    config.validate()?;
    for d in 0..seq.dims() {
        let c = seq.count(d);
        if c < 10 {
            return Err(Error::Config(format!(
                "dimension {d} has {c} events; at least 10 are needed"
            )));
        }
    }
    let (scaled, transform) = apply_scaling(seq)?;
    let events = scaled.events();
    let n = events.len();
    let train_end = (config.split.0 * n as f64).floor() as usize;
    let valid_end = ((config.split.0 + config.split.1) * n as f64).floor() as usize;
    if train_end == 0 || valid_end == train_end || (config.split.2 > 0.0 && valid_end >= n) {
        return Err(Error::Config(format!(
            "split {:?} leaves an empty partition of {n} events",
            config.split
        )));
    }

    let mut model = init_model(kind, seq.dims(), config.neurons, config.seed)?
        .with_lookback(config.lookback)?;
    let prev = prev_times(events, seq.dims());
    let lr = learning_rates(&model, config);
    let mut params = model.params();
    let mut adam = Adam::new(
        params.len(),
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5DEE_CE66);
    let mut order: Vec<usize> = (0..train_end).collect();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut trace = TrainTrace {
        split_points: (train_end, valid_end),
        ..Default::default()
    };
    let started = Instant::now();

    let abort = |epoch: usize, reason: String, trace: &TrainTrace| Error::TrainingAborted {
        epoch,
        reason,
        trace: Box::new(trace.clone()),
    };

    let (train0, _) = sum_terms(&model, events, &prev, 0..train_end)?;
    let (valid0, floored0) = sum_terms(&model, events, &prev, train_end..valid_end)?;
    trace.records.push(EpochRecord {
        epoch: 0,
        train_ll: train0,
        valid_ll: valid0,
        wall_secs: 0.0,
    });
    trace.floored_events = floored0;
    stopper.observe(0, valid0);
    let mut best = params.clone();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut train_ll = 0.0;
        for batch in order.chunks(config.batch_size) {
            let width = params.len();
            let grads: Vec<Result<(f64, Vec<f64>)>> = batch
                .par_iter()
                .map(|&i| {
                    let mut g = vec![0.0; width];
                    event_term(
                        &model,
                        events,
                        i,
                        prev[i],
                        Some(&mut g),
                        config.floored_gradient,
                    )
                    .map(|(v, _)| (v, g))
                })
                .collect();
            let mut sum = vec![0.0; width];
            for r in grads {
                let (v, g) = r.map_err(|e| abort(epoch, e.to_string(), &trace))?;
                train_ll += v;
                for (s, x) in sum.iter_mut().zip(&g) {
                    *s += x;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            sum.iter_mut().for_each(|s| *s *= scale);
            if sum.iter().any(|s| !s.is_finite()) {
                return Err(abort(epoch, "non-finite gradient".into(), &trace));
            }
            adam.step(&mut params, &sum, &lr);
            for d in 0..model.dims() {
                let i = model.mu_index(d);
                params[i] = params[i].max(MU_FLOOR);
            }
            model.set_params(&params);
        }
        let (valid_ll, floored) = match sum_terms(&model, events, &prev, train_end..valid_end) {
            Ok(v) => v,
            Err(e) => return Err(abort(epoch, e.to_string(), &trace)),
        };
        if !(train_ll.is_finite() && valid_ll.is_finite()) {
            return Err(abort(epoch, "non-finite log-likelihood".into(), &trace));
        }
        trace.records.push(EpochRecord {
            epoch,
            train_ll,
            valid_ll,
            wall_secs: started.elapsed().as_secs_f64(),
        });
        log::debug!("epoch {epoch}: train {train_ll:.4} valid {valid_ll:.4}");
        let stop = stopper.observe(epoch, valid_ll);
        if stopper.improved_last() {
            best.clone_from(&params);
            trace.floored_events = floored;
        }
        if stop {
            break;
        }
    }
    trace.selected_epoch = stopper.best_epoch();
    model.set_params(&best);
    let model = model.with_scaling(transform)?;
    Ok((model, trace))
}
