//! Thinning simulation of marked Hawkes processes.
//!
//! Candidates are drawn from a piecewise-constant dominating rate. Over a
//! lookahead window `[t, t + window]` the rate is `1.2 x` the largest total
//! intensity seen on a 64-point grid; a candidate whose true intensity
//! exceeds the bound doubles it and restarts the window, so non-monotone
//! network kernels are handled without giving up exactness.
//!
//! Past events whose influence has reached a closed tail form are folded
//! into per-kernel aggregates (or dropped once negligible), which keeps the
//! cost per candidate independent of the history length.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::density::MarkDensity;
use crate::error::{Error, Result};
use crate::integrate::exp_kernel_integral;
use crate::model::{EventSequence, HawkesModel, KernelNet, Link, MarkedEvent, ModelKind};

const GRID_POINTS: usize = 64;
const SAFETY: f64 = 1.2;
const MAX_RETRIES: usize = 20;
const WINDOW_INTERARRIVALS: f64 = 10.0;

/// One term `weight * m^mark_power * exp(-t (decay + mark_decay * m))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpTerm {
    pub weight: f64,
    #[serde(default)]
    pub mark_power: f64,
    pub decay: f64,
    #[serde(default)]
    pub mark_decay: f64,
}

impl ExpTerm {
    fn rate(&self, m: f64) -> f64 {
        self.decay + self.mark_decay * m
    }

    fn amplitude(&self, m: f64) -> f64 {
        if self.mark_power == 0.0 {
            self.weight
        } else {
            self.weight * m.powf(self.mark_power)
        }
    }
}

/// Ground-truth kernel `phi(t, m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    Zero,
    /// `alpha * m * exp(-t (beta + gamma m))`
    ExpTimesMark {
        alpha: f64,
        beta: f64,
        gamma: f64,
    },
    /// `alpha * ln(m) * exp(-beta t)`
    LogMarkTimesExp {
        alpha: f64,
        beta: f64,
    },
    /// Sum of [`ExpTerm`]s.
    Custom {
        terms: Vec<ExpTerm>,
    },
    Net {
        net: KernelNet,
    },
}

impl KernelSpec {
    pub fn eval(&self, t: f64, m: f64) -> f64 {
        match self {
            KernelSpec::Zero => 0.0,
            KernelSpec::ExpTimesMark { alpha, beta, gamma } => {
                alpha * m * (-t * (beta + gamma * m)).exp()
            }
            KernelSpec::LogMarkTimesExp { alpha, beta } => alpha * m.ln() * (-beta * t).exp(),
            KernelSpec::Custom { terms } => terms
                .iter()
                .map(|c| c.amplitude(m) * (-t * c.rate(m)).exp())
                .sum(),
            KernelSpec::Net { net } => net.eval(t, m),
        }
    }

    /// True when the kernel cannot be negative for positive marks.
    pub fn is_excitatory(&self) -> bool {
        match self {
            KernelSpec::Zero => true,
            KernelSpec::ExpTimesMark { alpha, .. } => *alpha >= 0.0,
            KernelSpec::LogMarkTimesExp { alpha, .. } => *alpha == 0.0,
            KernelSpec::Custom { terms } => terms.iter().all(|c| c.weight >= 0.0),
            KernelSpec::Net { net } => net.link() == Link::Exponential,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidModel(msg.to_string()));
        match self {
            KernelSpec::Zero => Ok(()),
            KernelSpec::ExpTimesMark { alpha, beta, gamma } => {
                if !(alpha.is_finite()
                    && *beta > 0.0
                    && *gamma >= 0.0
                    && beta.is_finite()
                    && gamma.is_finite())
                {
                    return bad("exp-times-mark kernel needs beta > 0 and gamma >= 0");
                }
                Ok(())
            }
            KernelSpec::LogMarkTimesExp { alpha, beta } => {
                if !(alpha.is_finite() && *beta > 0.0 && beta.is_finite()) {
                    return bad("log-mark kernel needs beta > 0");
                }
                Ok(())
            }
            KernelSpec::Custom { terms } => {
                for c in terms {
                    let ok = c.weight.is_finite()
                        && c.mark_power.is_finite()
                        && c.decay > 0.0
                        && c.decay.is_finite()
                        && c.mark_decay >= 0.0
                        && c.mark_decay.is_finite();
                    if !ok {
                        return bad("custom kernel terms need decay > 0 and mark_decay >= 0");
                    }
                }
                Ok(())
            }
            KernelSpec::Net { net } => net.validate(),
        }
    }

    /// `int_lo^hi phi(s, m) ds`.
    pub fn integral(&self, m: f64, lo: f64, hi: f64) -> Result<f64> {
        if !(hi > lo) {
            return Ok(0.0);
        }
        let decayed = |rate: f64| ((-rate * lo).exp() - (-rate * hi).exp()) / rate;
        Ok(match self {
            KernelSpec::Zero => 0.0,
            KernelSpec::ExpTimesMark { alpha, beta, gamma } => {
                alpha * m * decayed(beta + gamma * m)
            }
            KernelSpec::LogMarkTimesExp { alpha, beta } => alpha * m.ln() * decayed(*beta),
            KernelSpec::Custom { terms } => terms
                .iter()
                .map(|c| c.amplitude(m) * decayed(c.rate(m)))
                .sum(),
            KernelSpec::Net { net } => match net.link() {
                Link::Exponential => exp_kernel_integral(net, m, lo, hi, None)?,
                Link::Identity => identity_net_integral(net, m, lo, hi),
            },
        })
    }

    fn tail(&self, m: f64, tol: f64) -> Tail {
        // elapsed time after which amp * exp(-rate t) stays below tol
        let quiet = |amp: f64, rate: f64| -> f64 {
            let amp = amp.abs();
            if amp <= tol {
                0.0
            } else {
                (amp / tol).ln() / rate
            }
        };
        match self {
            KernelSpec::Zero => Tail::Negligible { after: 0.0 },
            KernelSpec::ExpTimesMark { alpha, beta, gamma } => Tail::Negligible {
                after: quiet(alpha * m, beta + gamma * m),
            },
            KernelSpec::LogMarkTimesExp { alpha, beta } => Tail::Negligible {
                after: quiet(alpha * m.ln(), *beta),
            },
            KernelSpec::Custom { terms } => {
                let share = tol / terms.len().max(1) as f64;
                let after = terms
                    .iter()
                    .map(|c| {
                        let amp = c.amplitude(m).abs();
                        if amp <= share {
                            0.0
                        } else {
                            (amp / share).ln() / c.rate(m)
                        }
                    })
                    .fold(0.0, f64::max);
                Tail::Negligible { after }
            }
            KernelSpec::Net { net } => net_tail(net, m, 1.0),
        }
    }
}

fn identity_net_integral(net: &KernelNet, m: f64, lo: f64, hi: f64) -> f64 {
    let mut pts = vec![lo, hi];
    for i in 0..net.neurons() {
        if net.a1()[i] != 0.0 {
            let y = -(net.a2()[i] * m + net.b1()[i]) / net.a1()[i];
            if y > lo && y < hi {
                pts.push(y);
            }
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.windows(2)
        .map(|w| (w[1] - w[0]) * net.activation(0.5 * (w[0] + w[1]), m))
        .sum()
}

/// Closed form of a kernel's influence once elapsed time passes `after`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tail {
    /// Below tolerance from `after` on.
    Negligible { after: f64 },
    /// `exp(log_level + slope (t - after))` for `t >= after`.
    ExpAffine {
        after: f64,
        slope: f64,
        log_level: f64,
    },
    /// `level + slope (t - after)` for `t >= after`.
    Affine { after: f64, slope: f64, level: f64 },
}

impl Tail {
    fn after(&self) -> f64 {
        match *self {
            Tail::Negligible { after }
            | Tail::ExpAffine { after, .. }
            | Tail::Affine { after, .. } => after,
        }
    }
}

/// Tail of a network kernel in model units, with elapsed time measured in units of `1 / time_scale`.
fn net_tail(net: &KernelNet, m: f64, time_scale: f64) -> Tail {
    let mut after: f64 = 0.0;
    let mut slope = 0.0;
    for i in 0..net.neurons() {
        let a1 = net.a1()[i];
        if a1 != 0.0 {
            after = after.max(-(net.a2()[i] * m + net.b1()[i]) / a1);
        }
        if a1 > 0.0 {
            slope += net.a3()[i] * a1;
        }
    }
    let level = net.activation(after, m);
    let ts = time_scale;
    match net.link() {
        Link::Exponential => Tail::ExpAffine {
            after: after / ts,
            slope: slope * ts,
            log_level: level + ts.ln(),
        },
        Link::Identity => Tail::Affine {
            after: after / ts,
            slope: slope * ts * ts,
            level: level * ts,
        },
    }
}

/// Mark distribution used for sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MarkSampler {
    /// `ln m ~ N(mu, sigma^2)`
    LogNormal {
        mu: f64,
        sigma: f64,
    },
    Exponential {
        rate: f64,
    },
    Gmm(MarkDensity),
}

impl MarkSampler {
    fn validate(&self) -> Result<()> {
        match self {
            MarkSampler::LogNormal { mu, sigma }
                if mu.is_finite() && *sigma > 0.0 && sigma.is_finite() =>
            {
                Ok(())
            }
            MarkSampler::Exponential { rate } if *rate > 0.0 && rate.is_finite() => Ok(()),
            MarkSampler::Gmm(d) => d.gmm.validate(),
            other => Err(Error::InvalidModel(format!(
                "invalid mark sampler {other:?}"
            ))),
        }
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain(format!(
                "quantile level {u} must lie in (0, 1)"
            )));
        }
        match self {
            MarkSampler::LogNormal { mu, sigma } => {
                let z = Normal::new(0.0, 1.0)
                    .expect("standard normal")
                    .inverse_cdf(u);
                Ok((mu + sigma * z).exp())
            }
            MarkSampler::Exponential { rate } => Ok(-(-u).ln_1p() / rate),
            MarkSampler::Gmm(d) => d.quantile(u),
        }
    }

    pub fn cdf(&self, m: f64) -> f64 {
        match self {
            MarkSampler::LogNormal { mu, sigma } => {
                if m <= 0.0 {
                    0.0
                } else {
                    Normal::new(*mu, *sigma)
                        .expect("validated sigma")
                        .cdf(m.ln())
                }
            }
            MarkSampler::Exponential { rate } => {
                if m <= 0.0 {
                    0.0
                } else {
                    -(-rate * m).exp_m1()
                }
            }
            MarkSampler::Gmm(d) => d.cdf(m),
        }
    }
}

/// The `u`-quantile of a mark distribution.
pub fn sample_mark(density: &MarkSampler, u: f64) -> Result<f64> {
    density.quantile(u)
}

/// Mark distributions for a generator: one per dimension, or one per kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkSpec {
    PerDimension(Vec<MarkSampler>),
    /// Row-major `D x D`; an event of dimension `j` draws its single mark
    /// from the diagonal entry `(j, j)`.
    PerKernel(Vec<MarkSampler>),
}

/// Ground-truth process for simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub dims: usize,
    pub mu: Vec<f64>,
    /// Row-major: entry `d * dims + j` is the effect of `j` on `d`.
    pub kernels: Vec<KernelSpec>,
    pub marks: MarkSpec,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d == 0 || self.mu.len() != d || self.kernels.len() != d * d {
            return Err(Error::InvalidModel(
                "generator needs D base rates and D x D kernels".into(),
            ));
        }
        if self.mu.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::InvalidModel(
                "base rates must be finite and nonnegative".into(),
            ));
        }
        for k in &self.kernels {
            k.validate()?;
        }
        let samplers = match &self.marks {
            MarkSpec::PerDimension(s) if s.len() == d => s,
            MarkSpec::PerKernel(s) if s.len() == d * d => s,
            _ => {
                return Err(Error::InvalidModel(
                    "mark sampler count does not match the dimension".into(),
                ))
            }
        };
        samplers.iter().try_for_each(MarkSampler::validate)
    }

    pub fn kernel(&self, d: usize, j: usize) -> &KernelSpec {
        &self.kernels[d * self.dims + j]
    }

    /// Mark distribution of events of dimension `j`.
    pub fn mark_sampler(&self, j: usize) -> &MarkSampler {
        match &self.marks {
            MarkSpec::PerDimension(s) => &s[j],
            MarkSpec::PerKernel(s) => &s[j * self.dims + j],
        }
    }

    pub fn is_excitatory(&self) -> bool {
        self.kernels.iter().all(KernelSpec::is_excitatory)
    }

    /// `mu m e^{-t(1 + 5m)}` coupled kernel with log-normal(0, 0.5) marks and `mu = 0.7`.
    pub fn coupled_exp_1d() -> Self {
        Self {
            dims: 1,
            mu: vec![0.7],
            kernels: vec![KernelSpec::ExpTimesMark {
                alpha: 1.0,
                beta: 1.0,
                gamma: 5.0,
            }],
            marks: MarkSpec::PerDimension(vec![MarkSampler::LogNormal {
                mu: 0.0,
                sigma: 0.5,
            }]),
        }
    }

    /// Inhibitory-capable `ln(m) (-0.4 e^{-2t})` kernel with log-normal(0.5, 1) marks and `mu = 0.9`.
    pub fn decoupled_log_1d() -> Self {
        Self {
            dims: 1,
            mu: vec![0.9],
            kernels: vec![KernelSpec::LogMarkTimesExp {
                alpha: -0.4,
                beta: 2.0,
            }],
            marks: MarkSpec::PerDimension(vec![MarkSampler::LogNormal {
                mu: 0.5,
                sigma: 1.0,
            }]),
        }
    }

    /// Two dimensions with `m e^{-beta t}` kernels (`beta = [[2, 50], [4.5, 3]]`),
    /// exponential marks per kernel (rates `[[2.5, 6], [3, 1.5]]`) and `mu = [0.3, 0.3]`.
    pub fn two_dim_exp() -> Self {
        let k = |beta: f64| KernelSpec::ExpTimesMark {
            alpha: 1.0,
            beta,
            gamma: 0.0,
        };
        let e = |rate: f64| MarkSampler::Exponential { rate };
        Self {
            dims: 2,
            mu: vec![0.3, 0.3],
            kernels: vec![k(2.0), k(50.0), k(4.5), k(3.0)],
            marks: MarkSpec::PerKernel(vec![e(2.5), e(6.0), e(3.0), e(1.5)]),
        }
    }

    /// `int_a^b lambda_d(s) ds` for an excitatory generator conditioned on `events`.
    pub fn compensator(&self, d: usize, events: &[MarkedEvent], a: f64, b: f64) -> Result<f64> {
        if !self.is_excitatory() {
            return Err(Error::Precondition(
                "closed-form compensators need kernels that cannot turn the intensity negative"
                    .into(),
            ));
        }
        if !(b > a) {
            return Ok(0.0);
        }
        let end = events.partition_point(|e| e.time < b);
        let mut total = self.mu[d] * (b - a);
        for e in &events[..end] {
            total += self
                .kernel(d, e.dim)
                .integral(e.mark, a.max(e.time) - e.time, b - e.time)?;
        }
        Ok(total)
    }
}

/// A process that can be simulated by thinning.
pub trait ProcessSource: Sync {
    fn dims(&self) -> usize;
    /// Base rate of dimension `d`.
    fn base(&self, d: usize) -> f64;
    /// Influence on `d` of a `j` event with mark `m` after elapsed time `t`.
    fn kernel(&self, d: usize, j: usize, t: f64, m: f64) -> f64;
    /// Closed-form tail of that influence; `tol` is the negligibility threshold.
    fn tail(&self, d: usize, j: usize, m: f64, tol: f64) -> Tail;
    fn sample_mark(&self, j: usize, u: f64) -> Result<f64>;
}

impl ProcessSource for GeneratorSpec {
    fn dims(&self) -> usize {
        self.dims
    }

    fn base(&self, d: usize) -> f64 {
        self.mu[d]
    }

    fn kernel(&self, d: usize, j: usize, t: f64, m: f64) -> f64 {
        self.kernel(d, j).eval(t, m)
    }

    fn tail(&self, d: usize, j: usize, m: f64, tol: f64) -> Tail {
        self.kernel(d, j).tail(m, tol)
    }

    fn sample_mark(&self, j: usize, u: f64) -> Result<f64> {
        self.mark_sampler(j).quantile(u)
    }
}

/// A fitted model paired with mark densities, evaluated in raw units.
pub struct FittedProcess<'a> {
    pub model: &'a HawkesModel,
    pub marks: &'a [MarkDensity],
}

impl ProcessSource for FittedProcess<'_> {
    fn dims(&self) -> usize {
        self.model.dims()
    }

    fn base(&self, d: usize) -> f64 {
        self.model.base_intensity(d)
    }

    fn kernel(&self, d: usize, j: usize, t: f64, m: f64) -> f64 {
        let ts = self.model.scaling().time_scale;
        if !self.model.in_window(t * ts) {
            return 0.0;
        }
        self.model.kernel_raw(d, j, t, m)
    }

    fn tail(&self, d: usize, j: usize, m: f64, _tol: f64) -> Tail {
        let s = self.model.scaling();
        if let Some(l) = self.model.lookback() {
            return Tail::Negligible {
                after: l / s.time_scale,
            };
        }
        net_tail(self.model.kernel(d, j), m * s.mark_scale[j], s.time_scale)
    }

    fn sample_mark(&self, j: usize, u: f64) -> Result<f64> {
        self.marks[j].quantile(u)
    }
}

struct Active {
    event: MarkedEvent,
    /// Per target dimension; `None` once folded into an aggregate or dropped.
    tails: Vec<Option<Tail>>,
}

#[derive(Clone, Copy, Default)]
struct Aggregate {
    // exp tails: level * exp(slope (t - reference))
    exp_level: f64,
    exp_slope: Option<f64>,
    reference: f64,
    // affine tails: intercept + slope * t
    lin_intercept: f64,
    lin_slope: f64,
}

impl Aggregate {
    fn value(&self, t: f64) -> f64 {
        let mut v = self.lin_intercept + self.lin_slope * t;
        if let Some(s) = self.exp_slope {
            v += self.exp_level * (s * (t - self.reference)).exp();
        }
        v
    }

    /// Folds a tail that started at absolute time `start`; false if slopes differ.
    fn absorb(&mut self, tail: Tail, start: f64, now: f64) -> bool {
        match tail {
            Tail::Negligible { .. } => true,
            Tail::Affine { slope, level, .. } => {
                self.lin_intercept += level - slope * start;
                self.lin_slope += slope;
                true
            }
            Tail::ExpAffine {
                slope, log_level, ..
            } => {
                match self.exp_slope {
                    Some(s) if s != slope => return false,
                    Some(s) => {
                        self.exp_level *= (s * (now - self.reference)).exp();
                    }
                    None => {
                        self.exp_slope = Some(slope);
                        self.exp_level = 0.0;
                    }
                }
                self.reference = now;
                self.exp_level += (log_level + slope * (now - start)).exp();
                true
            }
        }
    }
}

/// Thinning state for one run.
pub struct Thinning<'a, S: ProcessSource, R: Rng> {
    source: &'a S,
    rng: &'a mut R,
    dims: usize,
    clamp: bool,
    tol: f64,
    active: Vec<Active>,
    aggregates: Vec<Aggregate>,
    t: f64,
    start: f64,
    accepted: usize,
    max_retries_used: usize,
}

impl<'a, S: ProcessSource, R: Rng> Thinning<'a, S, R> {
    /// Starts at time `start` conditioned on `history` (events at or before `start`).
    pub fn new(source: &'a S, history: &[MarkedEvent], start: f64, rng: &'a mut R) -> Self {
        let dims = source.dims();
        let scale = (0..dims).map(|d| source.base(d)).fold(1e-6, f64::max);
        let mut me = Self {
            source,
            rng,
            dims,
            clamp: true,
            tol: 1e-14 * scale,
            active: Vec::new(),
            aggregates: vec![Aggregate::default(); dims * dims],
            t: start,
            start,
            accepted: 0,
            max_retries_used: 0,
        };
        for e in history {
            me.push_active(*e);
        }
        me.settle();
        me
    }

    fn push_active(&mut self, event: MarkedEvent) {
        let tails = (0..self.dims)
            .map(|d| Some(self.source.tail(d, event.dim, event.mark, self.tol)))
            .collect();
        self.active.push(Active { event, tails });
    }

    /// Moves settled influences into aggregates and drops fully settled events.
    fn settle(&mut self) {
        let now = self.t;
        let dims = self.dims;
        for a in &mut self.active {
            for d in 0..dims {
                if let Some(tail) = a.tails[d] {
                    let start = a.event.time + tail.after();
                    if start <= now {
                        let agg = &mut self.aggregates[d * dims + a.event.dim];
                        if agg.absorb(tail, start, now) {
                            a.tails[d] = None;
                        }
                    }
                }
            }
        }
        self.active.retain(|a| a.tails.iter().any(Option::is_some));
    }

    /// Intensity of each dimension at `s` (not before the current time).
    fn intensities(&self, s: f64, out: &mut [f64]) {
        for d in 0..self.dims {
            let mut v = self.source.base(d);
            for j in 0..self.dims {
                v += self.aggregates[d * self.dims + j].value(s);
            }
            out[d] = v;
        }
        for a in &self.active {
            let el = s - a.event.time;
            for (d, tail) in a.tails.iter().enumerate() {
                if tail.is_some() {
                    out[d] += self.source.kernel(d, a.event.dim, el, a.event.mark);
                }
            }
        }
        if self.clamp {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }

    fn total(&self, s: f64, buf: &mut [f64]) -> f64 {
        self.intensities(s, buf);
        buf.iter().sum()
    }

    fn window(&self, buf: &mut [f64]) -> f64 {
        let est = if self.accepted >= 5 {
            (self.t - self.start) / self.accepted as f64
        } else {
            let rate = self.total(self.t, buf);
            if rate > 0.0 {
                1.0 / rate
            } else {
                1.0
            }
        };
        (WINDOW_INTERARRIVALS * est).max(1e-9)
    }

    fn uniform_open(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.gen();
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Runs until `end` or until `stop` returns true for an accepted event.
    pub fn run(
        &mut self,
        end: f64,
        mut stop: impl FnMut(&MarkedEvent) -> bool,
    ) -> Result<Vec<MarkedEvent>> {
        let mut out = Vec::new();
        let mut buf = vec![0.0; self.dims];
        'windows: while self.t < end {
            self.settle();
            let w0 = self.t;
            let w1 = (w0 + self.window(&mut buf)).min(end);
            let mut peak: f64 = 0.0;
            for g in 0..GRID_POINTS {
                let s = w0 + (w1 - w0) * g as f64 / (GRID_POINTS - 1) as f64;
                peak = peak.max(self.total(s, &mut buf));
            }
            let mut bound = SAFETY * peak;
            if !(bound > 0.0) {
                self.t = w1;
                continue;
            }
            let mut retries = 0;
            let mut t = w0;
            loop {
                let e = -self.uniform_open().ln() / bound;
                let s = t + e;
                if s >= w1 {
                    self.t = w1;
                    continue 'windows;
                }
                let lambda = self.total(s, &mut buf);
                if !lambda.is_finite() {
                    return Err(Error::Simulation(format!("non-finite intensity at {s}")));
                }
                if lambda > bound {
                    retries += 1;
                    self.max_retries_used = self.max_retries_used.max(retries);
                    if retries > MAX_RETRIES {
                        return Err(Error::Simulation(format!(
                            "intensity {lambda} at {s} still exceeds the bound {bound} after {MAX_RETRIES} doublings \
                             (window [{w0}, {w1}], {} events so far)",
                            self.accepted
                        )));
                    }
                    bound *= 2.0;
                    t = w0;
                    continue;
                }
                t = s;
                let u: f64 = self.rng.gen();
                if u * bound <= lambda {
                    debug_assert!(lambda <= bound);
                    let mut pick = self.rng.gen::<f64>() * lambda;
                    let mut dim = self.dims - 1;
                    for (d, &v) in buf.iter().enumerate() {
                        if pick < v {
                            dim = d;
                            break;
                        }
                        pick -= v;
                    }
                    let u = self.uniform_open();
                    let mark = self.source.sample_mark(dim, u)?;
                    let event = MarkedEvent::new(dim, s, mark);
                    self.t = s;
                    self.accepted += 1;
                    self.push_active(event);
                    out.push(event);
                    if stop(&event) {
                        break 'windows;
                    }
                    continue 'windows;
                }
            }
        }
        Ok(out)
    }

    /// Largest number of bound doublings needed in any window so far.
    pub fn max_retries_used(&self) -> usize {
        self.max_retries_used
    }
}

/// Simulates `spec` on `[0, horizon)`.
pub fn simulate(spec: &GeneratorSpec, horizon: f64, seed: u64) -> Result<EventSequence> {
    spec.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Precondition(format!(
            "horizon {horizon} must be positive"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let events = Thinning::new(spec, &[], 0.0, &mut rng).run(horizon, |_| false)?;
    EventSequence::new(spec.dims, horizon, events)
}

/// Simulates a fitted model with the given mark densities on `[0, horizon)`.
pub fn simulate_fitted(
    model: &HawkesModel,
    marks: &[MarkDensity],
    horizon: f64,
    seed: u64,
) -> Result<EventSequence> {
    if marks.len() != model.dims() {
        return Err(Error::Precondition(
            "one mark density per dimension is required".into(),
        ));
    }
    let source = FittedProcess { model, marks };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let events = Thinning::new(&source, &[], 0.0, &mut rng).run(horizon, |_| false)?;
    EventSequence::new(model.dims(), horizon, events)
}

impl HawkesModel {
    /// A generator with this model's kernels in raw units (identity scaling only).
    pub fn as_generator(&self, marks: MarkSpec) -> Result<GeneratorSpec> {
        if !self.scaling().is_identity()
            || self.kind() == ModelKind::NonLinearNnnh && self.lookback().is_some()
        {
            return Err(Error::Precondition(
                "only unscaled models convert to generators".into(),
            ));
        }
        let spec = GeneratorSpec {
            dims: self.dims(),
            mu: self.mu().to_vec(),
            kernels: self
                .kernels()
                .iter()
                .map(|k| KernelSpec::Net { net: k.clone() })
                .collect(),
            marks,
        };
        spec.validate()?;
        Ok(spec)
    }
}
