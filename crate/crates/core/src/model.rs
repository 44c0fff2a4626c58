//! Model data types and pointwise evaluation.
//!
//! A [`HawkesModel`] stores its network parameters in *model space*: the
//! time and mark units produced by [`apply_scaling`]. Public evaluation
//! methods accept raw (unscaled) times and marks and map them through the
//! model's [`ScalingTransform`]; intensities are returned in raw units, so a
//! rate of events per raw time unit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One event of a multivariate marked point process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkedEvent {
    pub dim: usize,
    pub time: f64,
    pub mark: f64,
}

impl MarkedEvent {
    pub fn new(dim: usize, time: f64, mark: f64) -> Self {
        Self { dim, time, mark }
    }
}

/// Chronologically ordered events over `dims` dimensions observed on `[0, horizon)`.
///
/// Events sharing a timestamp are ordered by dimension index. Two events of
/// the same dimension at the same time are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSequence {
    events: Vec<MarkedEvent>,
    horizon: f64,
    dims: usize,
}

impl EventSequence {
    /// Builds a sequence from events that are already in order.
    pub fn new(dims: usize, horizon: f64, events: Vec<MarkedEvent>) -> Result<Self> {
        if dims == 0 {
            return Err(Error::InvalidSequence(
                "dimension count must be at least 1".into(),
            ));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidSequence(format!(
                "horizon {horizon} must be finite and positive"
            )));
        }
        for (i, e) in events.iter().enumerate() {
            if e.dim >= dims {
                return Err(Error::InvalidSequence(format!(
                    "event {i} has dimension {} but the sequence has {dims}",
                    e.dim
                )));
            }
            if !(e.time.is_finite() && e.time >= 0.0) {
                return Err(Error::InvalidSequence(format!(
                    "event {i} has invalid time {}",
                    e.time
                )));
            }
            if e.time >= horizon {
                return Err(Error::InvalidSequence(format!(
                    "event {i} at time {} is not before the horizon {horizon}",
                    e.time
                )));
            }
            if !e.mark.is_finite() {
                return Err(Error::InvalidSequence(format!(
                    "event {i} has non-finite mark"
                )));
            }
            if i > 0 {
                let p = &events[i - 1];
                if e.time < p.time || (e.time == p.time && e.dim < p.dim) {
                    return Err(Error::InvalidSequence(format!("event {i} is out of order")));
                }
                if e.time == p.time && e.dim == p.dim {
                    return Err(Error::InvalidSequence(format!(
                        "events {} and {i} share dimension {} and time {}",
                        i - 1,
                        e.dim,
                        e.time
                    )));
                }
            }
        }
        Ok(Self {
            events,
            horizon,
            dims,
        })
    }

    /// Sorts by (time, dim) before validating.
    pub fn from_unsorted(dims: usize, horizon: f64, mut events: Vec<MarkedEvent>) -> Result<Self> {
        events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.dim.cmp(&b.dim)));
        Self::new(dims, horizon, events)
    }

    pub fn empty(dims: usize, horizon: f64) -> Result<Self> {
        Self::new(dims, horizon, Vec::new())
    }

    pub fn events(&self) -> &[MarkedEvent] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, dim: usize) -> usize {
        self.events.iter().filter(|e| e.dim == dim).count()
    }

    pub fn marks(&self, dim: usize) -> Vec<f64> {
        self.events
            .iter()
            .filter(|e| e.dim == dim)
            .map(|e| e.mark)
            .collect()
    }

    /// Number of events strictly before `t`.
    pub fn count_before(&self, t: f64) -> usize {
        self.events.partition_point(|e| e.time < t)
    }

    /// The same events observed up to a different horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(self.dims, horizon, self.events.clone())
    }

    /// The first `n` events, keeping the horizon.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.events.len());
        Self {
            events: self.events[..n].to_vec(),
            horizon: self.horizon,
            dims: self.dims,
        }
    }

    pub fn into_events(self) -> Vec<MarkedEvent> {
        self.events
    }
}

/// Output nonlinearity of a kernel network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// Strictly positive kernels.
    Exponential,
    /// Signed kernels (excitation and inhibition).
    Identity,
}

/// One-hidden-layer ReLU network approximating a kernel `phi(t, m)`.
///
/// `phi(t, m) = link(b2 + sum_i a3[i] * max(a1[i] * t + a2[i] * m + b1[i], 0))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelNet {
    pub(crate) a1: Vec<f64>,
    pub(crate) a2: Vec<f64>,
    pub(crate) b1: Vec<f64>,
    pub(crate) a3: Vec<f64>,
    pub(crate) b2: f64,
    pub(crate) link: Link,
}

impl KernelNet {
    pub fn new(
        a1: Vec<f64>,
        a2: Vec<f64>,
        b1: Vec<f64>,
        a3: Vec<f64>,
        b2: f64,
        link: Link,
    ) -> Result<Self> {
        let net = Self {
            a1,
            a2,
            b1,
            a3,
            b2,
            link,
        };
        net.validate()?;
        Ok(net)
    }

    /// A network whose output is constant: `exp(b2)` or `b2` depending on the link.
    pub fn constant(p: usize, b2: f64, link: Link) -> Self {
        Self {
            a1: vec![0.0; p],
            a2: vec![0.0; p],
            b1: vec![0.0; p],
            a3: vec![0.0; p],
            b2,
            link,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.a1.len();
        if p == 0 {
            return Err(Error::InvalidModel(
                "kernel network needs at least one neuron".into(),
            ));
        }
        if self.a2.len() != p || self.b1.len() != p || self.a3.len() != p {
            return Err(Error::InvalidModel(
                "kernel parameter vectors differ in length".into(),
            ));
        }
        let finite = self
            .a1
            .iter()
            .chain(&self.a2)
            .chain(&self.b1)
            .chain(&self.a3)
            .chain(std::iter::once(&self.b2))
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidModel(
                "kernel has non-finite parameters".into(),
            ));
        }
        Ok(())
    }

    pub fn neurons(&self) -> usize {
        self.a1.len()
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn a1(&self) -> &[f64] {
        &self.a1
    }

    pub fn a2(&self) -> &[f64] {
        &self.a2
    }

    pub fn b1(&self) -> &[f64] {
        &self.b1
    }

    pub fn a3(&self) -> &[f64] {
        &self.a3
    }

    pub fn b2(&self) -> f64 {
        self.b2
    }

    /// Pre-link output: `b2 + sum_i a3[i] * relu(a1[i] t + a2[i] m + b1[i])`.
    #[inline]
    pub fn activation(&self, t: f64, m: f64) -> f64 {
        let mut acc = self.b2;
        for i in 0..self.a1.len() {
            let z = self.a1[i] * t + self.a2[i] * m + self.b1[i];
            if z > 0.0 {
                acc += self.a3[i] * z;
            }
        }
        acc
    }

    #[inline]
    pub fn eval(&self, t: f64, m: f64) -> f64 {
        let a = self.activation(t, m);
        match self.link {
            Link::Exponential => a.exp(),
            Link::Identity => a,
        }
    }

    /// Number of scalar parameters, `4p + 1`.
    pub fn n_params(&self) -> usize {
        4 * self.neurons() + 1
    }

    /// Writes parameters in the order `a1, a2, b1, a3, b2`.
    pub fn write_params(&self, out: &mut [f64]) {
        let p = self.neurons();
        out[..p].copy_from_slice(&self.a1);
        out[p..2 * p].copy_from_slice(&self.a2);
        out[2 * p..3 * p].copy_from_slice(&self.b1);
        out[3 * p..4 * p].copy_from_slice(&self.a3);
        out[4 * p] = self.b2;
    }

    pub fn read_params(&mut self, src: &[f64]) {
        let p = self.neurons();
        self.a1.copy_from_slice(&src[..p]);
        self.a2.copy_from_slice(&src[p..2 * p]);
        self.b1.copy_from_slice(&src[2 * p..3 * p]);
        self.a3.copy_from_slice(&src[3 * p..4 * p]);
        self.b2 = src[4 * p];
    }
}

/// Eval a kernel, checking the elapsed-time precondition.
pub fn eval_kernel(net: &KernelNet, t: f64, m: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Precondition(format!(
            "kernel evaluated at negative elapsed time {t}"
        )));
    }
    let v = net.eval(t, m);
    if !v.is_finite() {
        return Err(Error::InvalidModel(format!(
            "kernel value at ({t}, {m}) is not finite"
        )));
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Linear intensity, exponential-link kernels.
    LinearSnh,
    /// ReLU-clamped intensity, identity-link kernels.
    NonLinearNnnh,
}

impl ModelKind {
    pub fn link(self) -> Link {
        match self {
            ModelKind::LinearSnh => Link::Exponential,
            ModelKind::NonLinearNnnh => Link::Identity,
        }
    }
}

/// Rounding can land the last event on a horizon that sat one ulp above it.
fn scaled_horizon(horizon: f64, events: &[MarkedEvent]) -> f64 {
    match events.last() {
        Some(e) if e.time >= horizon => e.time.next_up(),
        _ => horizon,
    }
}

/// Maps raw times and marks into model space: `t * time_scale`, `m * mark_scale[dim]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTransform {
    pub time_scale: f64,
    pub mark_scale: Vec<f64>,
}

impl ScalingTransform {
    pub fn identity(dims: usize) -> Self {
        Self {
            time_scale: 1.0,
            mark_scale: vec![1.0; dims],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.time_scale == 1.0 && self.mark_scale.iter().all(|&s| s == 1.0)
    }

    pub fn validate(&self, dims: usize) -> Result<()> {
        if self.mark_scale.len() != dims {
            return Err(Error::InvalidModel(
                "mark scale length differs from dimension count".into(),
            ));
        }
        let ok = self.time_scale.is_finite()
            && self.time_scale > 0.0
            && self.mark_scale.iter().all(|s| s.is_finite() && *s > 0.0);
        if !ok {
            return Err(Error::InvalidModel(
                "scaling factors must be finite and positive".into(),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, seq: &EventSequence) -> Result<EventSequence> {
        let events = seq
            .events()
            .iter()
            .map(|e| {
                MarkedEvent::new(
                    e.dim,
                    e.time * self.time_scale,
                    e.mark * self.mark_scale[e.dim],
                )
            })
            .collect::<Vec<_>>();
        EventSequence::new(
            seq.dims(),
            scaled_horizon(seq.horizon() * self.time_scale, &events),
            events,
        )
    }

    pub fn invert(&self, seq: &EventSequence) -> Result<EventSequence> {
        let events = seq
            .events()
            .iter()
            .map(|e| {
                MarkedEvent::new(
                    e.dim,
                    e.time / self.time_scale,
                    e.mark / self.mark_scale[e.dim],
                )
            })
            .collect::<Vec<_>>();
        EventSequence::new(
            seq.dims(),
            scaled_horizon(seq.horizon() / self.time_scale, &events),
            events,
        )
    }
}

/// Scales times by `N / T_max` (total event count over the last event time)
/// and each dimension's marks by the inverse of that dimension's mean mark.
pub fn apply_scaling(seq: &EventSequence) -> Result<(EventSequence, ScalingTransform)> {
    if seq.is_empty() {
        return Err(Error::DegenerateScaling(
            "cannot scale an empty sequence".into(),
        ));
    }
    let n = seq.len() as f64;
    let t_max = seq.events().last().map(|e| e.time).unwrap_or(0.0);
    if !(t_max > 0.0) {
        return Err(Error::DegenerateScaling("last event time is zero".into()));
    }
    let mut sums = vec![0.0; seq.dims()];
    let mut counts = vec![0usize; seq.dims()];
    for e in seq.events() {
        sums[e.dim] += e.mark;
        counts[e.dim] += 1;
    }
    let mut mark_scale = Vec::with_capacity(seq.dims());
    for d in 0..seq.dims() {
        if counts[d] == 0 {
            // nothing to scale in this dimension
            mark_scale.push(1.0);
            continue;
        }
        let mean = sums[d] / counts[d] as f64;
        if !(mean.is_finite() && mean != 0.0) {
            return Err(Error::DegenerateScaling(format!(
                "dimension {d} has mean mark {mean}"
            )));
        }
        if mean < 0.0 {
            return Err(Error::DegenerateScaling(format!(
                "dimension {d} has negative mean mark {mean}"
            )));
        }
        mark_scale.push(1.0 / mean);
    }
    let transform = ScalingTransform {
        time_scale: n / t_max,
        mark_scale,
    };
    let scaled = transform.apply(seq)?;
    Ok((scaled, transform))
}

/// Marked Hawkes model with network kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct HawkesModel {
    pub(crate) dims: usize,
    pub(crate) mu: Vec<f64>,
    pub(crate) kernels: Vec<KernelNet>,
    pub(crate) kind: ModelKind,
    pub(crate) scaling: ScalingTransform,
    pub(crate) lookback: Option<f64>,
}

impl HawkesModel {
    /// `kernels` is row-major: entry `d * dims + j` is the effect of dimension `j` on dimension `d`.
    pub fn new(kind: ModelKind, mu: Vec<f64>, kernels: Vec<KernelNet>) -> Result<Self> {
        let dims = mu.len();
        let model = Self {
            dims,
            mu,
            kernels,
            kind,
            scaling: ScalingTransform::identity(dims),
            lookback: None,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims == 0 {
            return Err(Error::InvalidModel(
                "model needs at least one dimension".into(),
            ));
        }
        if self.kernels.len() != self.dims * self.dims {
            return Err(Error::InvalidModel(format!(
                "expected {} kernels, found {}",
                self.dims * self.dims,
                self.kernels.len()
            )));
        }
        if self.mu.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::InvalidModel(
                "base intensities must be finite and nonnegative".into(),
            ));
        }
        let p = self.kernels[0].neurons();
        for k in &self.kernels {
            k.validate()?;
            if k.link != self.kind.link() {
                return Err(Error::InvalidModel(format!(
                    "{:?} model needs {:?} kernels",
                    self.kind,
                    self.kind.link()
                )));
            }
            if k.neurons() != p {
                return Err(Error::InvalidModel(
                    "all kernels must have the same neuron count".into(),
                ));
            }
        }
        self.scaling.validate(self.dims)?;
        if let Some(l) = self.lookback {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidModel(format!(
                    "lookback window {l} must be positive"
                )));
            }
        }
        Ok(())
    }

    pub fn with_scaling(mut self, scaling: ScalingTransform) -> Result<Self> {
        scaling.validate(self.dims)?;
        self.scaling = scaling;
        Ok(self)
    }

    /// Restricts every kernel to elapsed times (model units) at most `window`.
    pub fn with_lookback(mut self, window: Option<f64>) -> Result<Self> {
        self.lookback = window;
        self.validate()?;
        Ok(self)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn neurons(&self) -> usize {
        self.kernels[0].neurons()
    }

    /// Base intensities in model units.
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn scaling(&self) -> &ScalingTransform {
        &self.scaling
    }

    pub fn lookback(&self) -> Option<f64> {
        self.lookback
    }

    pub fn kernel(&self, d: usize, j: usize) -> &KernelNet {
        &self.kernels[d * self.dims + j]
    }

    pub fn kernels(&self) -> &[KernelNet] {
        &self.kernels
    }

    pub(crate) fn row(&self, d: usize) -> &[KernelNet] {
        &self.kernels[d * self.dims..(d + 1) * self.dims]
    }

    /// Base intensity of dimension `d` in raw units.
    pub fn base_intensity(&self, d: usize) -> f64 {
        self.mu[d] * self.scaling.time_scale
    }

    /// Kernel `phi_dj` evaluated on raw elapsed time and raw mark, in raw intensity units.
    pub fn kernel_raw(&self, d: usize, j: usize, t: f64, m: f64) -> f64 {
        let s = &self.scaling;
        s.time_scale
            * self
                .kernel(d, j)
                .eval(t * s.time_scale, m * s.mark_scale[j])
    }

    #[inline]
    pub(crate) fn in_window(&self, elapsed: f64) -> bool {
        self.lookback.map_or(true, |l| elapsed <= l)
    }

    /// Pre-clamp intensity in model space from the events of `history` strictly before `t`.
    pub(crate) fn pre_intensity(&self, d: usize, t: f64, history: &[MarkedEvent]) -> f64 {
        let end = history.partition_point(|e| e.time < t);
        let row = self.row(d);
        let mut acc = self.mu[d];
        for e in &history[..end] {
            let el = t - e.time;
            if self.in_window(el) {
                acc += row[e.dim].eval(el, e.mark);
            }
        }
        acc
    }

    /// Ground intensity of dimension `d` at raw time `t` conditioned on the
    /// events of `seq` strictly before `t`.
    pub fn intensity_at(&self, d: usize, t: f64, seq: &EventSequence) -> f64 {
        let s = &self.scaling;
        let ts = s.time_scale;
        let end = seq.count_before(t);
        let row = self.row(d);
        let mut acc = self.mu[d];
        for e in &seq.events()[..end] {
            let el = (t - e.time) * ts;
            if self.in_window(el) {
                acc += row[e.dim].eval(el, e.mark * s.mark_scale[e.dim]);
            }
        }
        let v = match self.kind {
            ModelKind::LinearSnh => acc,
            ModelKind::NonLinearNnnh => acc.max(0.0),
        };
        v * ts
    }

    /// Layout of the flat parameter vector: `mu` first, then each kernel block row-major.
    pub fn n_params(&self) -> usize {
        self.dims + self.kernels.iter().map(KernelNet::n_params).sum::<usize>()
    }

    pub fn mu_index(&self, d: usize) -> usize {
        d
    }

    pub fn kernel_offset(&self, d: usize, j: usize) -> usize {
        self.dims + (d * self.dims + j) * (4 * self.neurons() + 1)
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_params()];
        out[..self.dims].copy_from_slice(&self.mu);
        for d in 0..self.dims {
            for j in 0..self.dims {
                let off = self.kernel_offset(d, j);
                let k = self.kernel(d, j);
                k.write_params(&mut out[off..off + k.n_params()]);
            }
        }
        out
    }

    pub fn set_params(&mut self, src: &[f64]) {
        assert_eq!(src.len(), self.n_params(), "parameter vector length");
        self.mu.copy_from_slice(&src[..self.dims]);
        let width = 4 * self.neurons() + 1;
        for (idx, k) in self.kernels.iter_mut().enumerate() {
            let off = self.dims + idx * width;
            k.read_params(&src[off..off + width]);
        }
    }

    /// Copy of `seq` mapped into this model's units.
    pub fn to_model_space(&self, seq: &EventSequence) -> Result<EventSequence> {
        if seq.dims() != self.dims {
            return Err(Error::Precondition(format!(
                "sequence has {} dimensions, model has {}",
                seq.dims(),
                self.dims
            )));
        }
        if self.scaling.is_identity() {
            Ok(seq.clone())
        } else {
            self.scaling.apply(seq)
        }
    }
}

/// Ground intensity of dimension `d` at time `t` given a history of earlier events.
///
/// History events at exactly `t` are excluded; an event after `t` is an error.
pub fn eval_ground_intensity(
    model: &HawkesModel,
    d: usize,
    t: f64,
    history: &EventSequence,
) -> Result<f64> {
    if d >= model.dims() {
        return Err(Error::Precondition(format!("dimension {d} out of range")));
    }
    if !(t >= 0.0) {
        return Err(Error::Precondition(format!("time {t} is negative")));
    }
    if let Some(e) = history.events().iter().find(|e| e.time > t) {
        return Err(Error::Precondition(format!(
            "history contains an event at {} after t = {t}",
            e.time
        )));
    }
    let v = model.intensity_at(d, t, history);
    if !v.is_finite() {
        return Err(Error::NonFinite(format!(
            "intensity of dimension {d} at {t}"
        )));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(a1: f64, a2: f64, b1: f64, a3: f64, b2: f64, link: Link) -> KernelNet {
        KernelNet::new(vec![a1], vec![a2], vec![b1], vec![a3], b2, link).unwrap()
    }

    #[test]
    fn scaling_keeps_horizon_after_last_event() {
        let t: f64 = 2999.9999999999995;
        let seq = EventSequence::new(1, t.next_up(), vec![MarkedEvent::new(0, t, 1.0)]).unwrap();
        for ts in [0.3, 0.7, 1.1, 3.0, 1.0 / 3.0] {
            let s = ScalingTransform {
                time_scale: ts,
                mark_scale: vec![1.0],
            };
            let scaled = s.apply(&seq).unwrap();
            assert!(scaled.horizon() > scaled.events()[0].time);
            assert!(s.invert(&scaled).is_ok());
        }
    }

    #[test]
    fn kernel_examples() {
        let k = single(0.3, -0.2, 0.1, 0.0, 0.0, Link::Exponential);
        assert_eq!(eval_kernel(&k, 1.7, 3.0).unwrap(), 1.0);
        let z = single(0.0, 0.0, 0.0, 0.0, 0.0, Link::Identity);
        assert_eq!(eval_kernel(&z, 4.0, -2.0).unwrap(), 0.0);
        let k = single(-1.0, 0.0, 1.0, 1.0, 0.0, Link::Identity);
        assert!((eval_kernel(&k, 0.5, 123.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(eval_kernel(&k, -0.1, 1.0).is_err());
    }

    #[test]
    fn rejects_bad_nets() {
        assert!(KernelNet::new(vec![], vec![], vec![], vec![], 0.0, Link::Identity).is_err());
        assert!(KernelNet::new(
            vec![1.0],
            vec![1.0, 2.0],
            vec![0.0],
            vec![0.0],
            0.0,
            Link::Identity
        )
        .is_err());
        assert!(KernelNet::new(
            vec![f64::NAN],
            vec![1.0],
            vec![0.0],
            vec![0.0],
            0.0,
            Link::Identity
        )
        .is_err());
    }

    #[test]
    fn ground_intensity_examples() {
        let m = HawkesModel::new(
            ModelKind::LinearSnh,
            vec![0.7],
            vec![KernelNet::constant(2, 0.0, Link::Exponential)],
        )
        .unwrap();
        let empty = EventSequence::empty(1, 10.0).unwrap();
        assert_eq!(eval_ground_intensity(&m, 0, 3.0, &empty).unwrap(), 0.7);

        let k = single(-1.0, 0.5, 0.2, -0.3, 0.1, Link::Exponential);
        let m = HawkesModel::new(ModelKind::LinearSnh, vec![0.4], vec![k.clone()]).unwrap();
        let h = EventSequence::new(1, 10.0, vec![MarkedEvent::new(0, 1.0, 2.0)]).unwrap();
        let v = eval_ground_intensity(&m, 0, 2.5, &h).unwrap();
        assert!((v - (0.4 + k.eval(1.5, 2.0))).abs() < 1e-15);
        assert!(eval_ground_intensity(&m, 0, 0.5, &h).is_err());
        // the event at exactly t is not part of H_{t-}
        assert_eq!(eval_ground_intensity(&m, 0, 1.0, &h).unwrap(), 0.4);
    }

    #[test]
    fn nnnh_clamps_at_zero() {
        let k = KernelNet::constant(1, -1.2, Link::Identity);
        let m = HawkesModel::new(ModelKind::NonLinearNnnh, vec![0.9], vec![k]).unwrap();
        let h = EventSequence::new(1, 10.0, vec![MarkedEvent::new(0, 1.0, 1.0)]).unwrap();
        assert!((m.pre_intensity(0, 2.0, h.events()) + 0.3).abs() < 1e-15);
        assert_eq!(eval_ground_intensity(&m, 0, 2.0, &h).unwrap(), 0.0);
    }

    #[test]
    fn kind_and_link_must_agree() {
        let k = KernelNet::constant(1, 0.0, Link::Identity);
        assert!(HawkesModel::new(ModelKind::LinearSnh, vec![1.0], vec![k]).is_err());
        let k = KernelNet::constant(1, 0.0, Link::Exponential);
        assert!(HawkesModel::new(ModelKind::LinearSnh, vec![-1.0], vec![k]).is_err());
    }

    #[test]
    fn scaling_examples() {
        let seq = EventSequence::new(1, 3.0, vec![MarkedEvent::new(0, 2.0, 4.0)]).unwrap();
        let (s, tr) = apply_scaling(&seq).unwrap();
        assert_eq!(tr.time_scale, 0.5);
        assert_eq!(tr.mark_scale, vec![0.25]);
        assert_eq!(s.events()[0], MarkedEvent::new(0, 1.0, 1.0));

        let zero = EventSequence::new(
            1,
            3.0,
            vec![
                MarkedEvent::new(0, 1.0, 1.0),
                MarkedEvent::new(0, 2.0, -1.0),
            ],
        )
        .unwrap();
        assert!(matches!(
            apply_scaling(&zero),
            Err(Error::DegenerateScaling(_))
        ));
        assert!(apply_scaling(&EventSequence::empty(1, 1.0).unwrap()).is_err());
    }

    #[test]
    fn scaling_time_scale_from_counts() {
        // 1743 events with the last one at 2000
        let mut ev: Vec<MarkedEvent> = (0..1742)
            .map(|i| MarkedEvent::new(0, 1.0 + i as f64, 1.0))
            .collect();
        ev.push(MarkedEvent::new(0, 2000.0, 1.0));
        let seq = EventSequence::new(1, 2000.5, ev).unwrap();
        let (_, tr) = apply_scaling(&seq).unwrap();
        assert!((tr.time_scale - 0.8715).abs() < 1e-15);
    }

    #[test]
    fn sequence_validation() {
        let e = |d, t| MarkedEvent::new(d, t, 1.0);
        assert!(EventSequence::new(2, 5.0, vec![e(0, 1.0), e(1, 1.0)]).is_ok());
        assert!(EventSequence::new(2, 5.0, vec![e(1, 1.0), e(0, 1.0)]).is_err());
        assert!(EventSequence::new(2, 5.0, vec![e(0, 1.0), e(0, 1.0)]).is_err());
        assert!(EventSequence::new(2, 5.0, vec![e(0, 5.0)]).is_err());
        assert!(EventSequence::new(2, 5.0, vec![e(2, 1.0)]).is_err());
        let s =
            EventSequence::from_unsorted(2, 5.0, vec![e(1, 2.0), e(1, 1.0), e(0, 1.0)]).unwrap();
        assert_eq!(s.events()[0], e(0, 1.0));
        assert_eq!(s.events()[1], e(1, 1.0));
    }

    #[test]
    fn param_round_trip() {
        let k = |s: f64| {
            KernelNet::new(
                vec![s, 1.0],
                vec![2.0, s],
                vec![3.0, 4.0],
                vec![5.0, 6.0],
                s * 7.0,
                Link::Exponential,
            )
            .unwrap()
        };
        let mut m = HawkesModel::new(
            ModelKind::LinearSnh,
            vec![0.1, 0.2],
            vec![k(1.0), k(2.0), k(3.0), k(4.0)],
        )
        .unwrap();
        assert_eq!(m.n_params(), 2 + 4 * 9);
        let mut p = m.params();
        assert_eq!(p[m.kernel_offset(1, 0) + 8], 21.0);
        p[0] = 0.5;
        p[m.kernel_offset(1, 1)] = -9.0;
        m.set_params(&p);
        assert_eq!(m.mu()[0], 0.5);
        assert_eq!(m.kernel(1, 1).a1()[0], -9.0);
        assert_eq!(m.params(), p);
    }

    #[test]
    fn raw_units_follow_scaling() {
        let k = single(-0.7, 0.3, 0.2, 0.8, -0.1, Link::Exponential);
        let m = HawkesModel::new(ModelKind::LinearSnh, vec![1.3], vec![k.clone()])
            .unwrap()
            .with_scaling(ScalingTransform {
                time_scale: 0.5,
                mark_scale: vec![0.25],
            })
            .unwrap();
        let seq = EventSequence::new(1, 10.0, vec![MarkedEvent::new(0, 2.0, 4.0)]).unwrap();
        let raw = m.intensity_at(0, 3.0, &seq);
        let expected = 0.5 * (1.3 + k.eval(0.5, 1.0));
        assert!((raw - expected).abs() < 1e-14);
        assert!((m.kernel_raw(0, 0, 1.0, 4.0) - 0.5 * k.eval(0.5, 1.0)).abs() < 1e-15);
    }
}
