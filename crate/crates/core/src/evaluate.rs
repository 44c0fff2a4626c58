//! Calibration diagnostics, kernel surfaces and simulation-based forecasts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::MarkDensity;
use crate::error::{Error, Result};
use crate::integrate::compensator_model_space;
use crate::model::{EventSequence, HawkesModel, KernelNet, Link, MarkedEvent};
use crate::simulate::{FittedProcess, GeneratorSpec, KernelSpec, ProcessSource, Thinning};

/// Probability-integral transforms `1 - exp(-int lambda_d)` over each
/// event's same-dimension interarrival, from a compensator callback
/// `(d, a, b) -> int_a^b lambda_d`.
pub fn pit_from_compensator(
    seq: &EventSequence,
    start: usize,
    mut compensator: impl FnMut(usize, f64, f64) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut last = vec![0.0; seq.dims()];
    let mut out = Vec::with_capacity(seq.len().saturating_sub(start));
    for (n, e) in seq.events().iter().enumerate() {
        let prev = last[e.dim];
        last[e.dim] = e.time;
        if n < start {
            continue;
        }
        let c = compensator(e.dim, prev, e.time)?;
        if !c.is_finite() {
            return Err(Error::NonFinite(format!(
                "compensator of dimension {} over [{prev}, {}] (event {n}) is {c}",
                e.dim, e.time
            )));
        }
        out.push(-(-c).exp_m1());
    }
    Ok(out)
}

/// PIT values of a fitted model for the events of `seq` from index `start` on.
/// Earlier events act as conditioning history.
pub fn pit_values(model: &HawkesModel, seq: &EventSequence, start: usize) -> Result<Vec<f64>> {
    let scaled = model.to_model_space(seq)?;
    let ts = model.scaling().time_scale;
    let events = scaled.events();
    let terms: Vec<(usize, f64, f64)> = {
        let mut last = vec![0.0; seq.dims()];
        seq.events()
            .iter()
            .enumerate()
            .filter_map(|(n, e)| {
                let prev = std::mem::replace(&mut last[e.dim], e.time);
                (n >= start).then_some((e.dim, prev, e.time))
            })
            .collect()
    };
    let values: Vec<Result<f64>> = terms
        .par_iter()
        .map(|&(d, a, b)| {
            let c = compensator_model_space(model, d, events, a * ts, b * ts, None)?;
            if !c.is_finite() {
                return Err(Error::NonFinite(format!(
                    "compensator of dimension {d} over [{a}, {b}] is {c}"
                )));
            }
            Ok(-(-c).exp_m1())
        })
        .collect();
    values.into_iter().collect()
}

/// PIT values of a closed-form generator on a sequence.
pub fn pit_values_generator(
    spec: &GeneratorSpec,
    seq: &EventSequence,
    start: usize,
) -> Result<Vec<f64>> {
    let events = seq.events();
    pit_from_compensator(seq, start, |d, a, b| spec.compensator(d, events, a, b))
}

/// Kolmogorov-Smirnov distance between a sample and Uniform(0, 1).
pub fn ks_uniform(u: &[f64]) -> f64 {
    let mut s = u.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Confidence level against empirical coverage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QqCurve {
    pub points: Vec<(f64, f64)>,
}

impl QqCurve {
    /// Largest `|coverage - q|`.
    pub fn max_deviation(&self) -> f64 {
        self.points
            .iter()
            .map(|(q, c)| (c - q).abs())
            .fold(0.0, f64::max)
    }
}

/// `levels` evenly spaced confidence levels `1/(levels+1) .. levels/(levels+1)`.
pub fn default_levels(levels: usize) -> Vec<f64> {
    (1..=levels)
        .map(|i| i as f64 / (levels + 1) as f64)
        .collect()
}

/// Coverage `#{u <= q} / n` for each level `q`.
pub fn qq_curve(u: &[f64], levels: &[f64]) -> Result<QqCurve> {
    if u.is_empty() {
        return Err(Error::Precondition(
            "QQ curve needs at least one value".into(),
        ));
    }
    if let Some(bad) = u.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::Domain(format!("PIT value {bad} outside [0, 1]")));
    }
    let mut s = u.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let points = levels
        .iter()
        .map(|&q| (q, s.partition_point(|x| *x <= q) as f64 / n))
        .collect();
    Ok(QqCurve { points })
}

/// Sorted values against uniform plotting positions `(i + 0.5) / n`.
pub fn uniform_quantile_pairs(u: &[f64]) -> Vec<(f64, f64)> {
    let mut s = u.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.into_iter()
        .enumerate()
        .map(|(i, x)| ((i as f64 + 0.5) / n, x))
        .collect()
}

/// Kernel values on a rectangular `(t, m)` grid; `values[i][k]` is at `(t[i], m[k])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelGrid {
    pub t: Vec<f64>,
    pub m: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl KernelGrid {
    pub fn mean_abs(&self) -> f64 {
        let n = (self.t.len() * self.m.len()) as f64;
        self.values.iter().flatten().map(|v| v.abs()).sum::<f64>() / n
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .map(|v| v.abs())
            .fold(0.0, f64::max)
    }

    /// Riemann (trapezoid) approximation of the integral over the grid rectangle.
    pub fn area(&self) -> f64 {
        let w = |axis: &[f64], i: usize| {
            let lo = if i == 0 {
                axis[0]
            } else {
                0.5 * (axis[i - 1] + axis[i])
            };
            let hi = if i + 1 == axis.len() {
                axis[i]
            } else {
                0.5 * (axis[i] + axis[i + 1])
            };
            hi - lo
        };
        let mut s = 0.0;
        for (i, row) in self.values.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                s += v * w(&self.t, i) * w(&self.m, k);
            }
        }
        s
    }
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Evaluates `f` on an `nt x nm` grid over `t_range x m_range`.
pub fn kernel_grid(
    f: impl Fn(f64, f64) -> f64,
    t_range: (f64, f64),
    m_range: (f64, f64),
    resolution: (usize, usize),
) -> Result<KernelGrid> {
    let ok = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.1 > r.0;
    if !ok(t_range) || !ok(m_range) || resolution.0 < 2 || resolution.1 < 2 {
        return Err(Error::Precondition(format!(
            "grid needs increasing finite ranges and at least 2 points per axis, got {t_range:?} x {m_range:?}"
        )));
    }
    let t = axis(t_range.0, t_range.1, resolution.0);
    let m = axis(m_range.0, m_range.1, resolution.1);
    let values = t
        .iter()
        .map(|&ti| m.iter().map(|&mk| f(ti, mk)).collect())
        .collect();
    Ok(KernelGrid { t, m, values })
}

/// Elementwise `|a - b|` of grids on the same axes.
pub fn abs_diff(a: &KernelGrid, b: &KernelGrid) -> Result<KernelGrid> {
    if a.t != b.t || a.m != b.m {
        return Err(Error::Precondition("grids have different axes".into()));
    }
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (x - y).abs()).collect())
        .collect();
    Ok(KernelGrid {
        t: a.t.clone(),
        m: a.m.clone(),
        values,
    })
}

/// Empirical `p`-quantile by linear interpolation.
pub fn percentile(xs: &[f64], p: f64) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Precondition("percentile of an empty sample".into()));
    }
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(s.len() - 1);
    Ok(s[i] + (pos - i as f64) * (s[j] - s[i]))
}

/// Default mark axis: 1st to 99th percentile of the observed marks.
pub fn default_mark_range(marks: &[f64]) -> Result<(f64, f64)> {
    let lo = percentile(marks, 0.01)?;
    let hi = percentile(marks, 0.99)?;
    if hi > lo {
        Ok((lo, hi))
    } else {
        Ok((lo - 0.5, lo + 0.5))
    }
}

impl KernelSpec {
    /// Characteristic decay time at mark `m`.
    pub fn decay_scale(&self, m: f64) -> f64 {
        match self {
            KernelSpec::Zero => 1.0,
            KernelSpec::ExpTimesMark { beta, gamma, .. } => 1.0 / (beta + gamma * m),
            KernelSpec::LogMarkTimesExp { beta, .. } => 1.0 / beta,
            KernelSpec::Custom { terms } => terms
                .iter()
                .map(|c| 1.0 / (c.decay + c.mark_decay * m))
                .fold(0.0, f64::max),
            KernelSpec::Net { net } => net_decay_scale(net, m),
        }
    }
}

/// Decay time of a network kernel: the later of its last bend and the
/// tail's e-folding time (or its slope's inverse for an identity link).
pub fn net_decay_scale(net: &KernelNet, m: f64) -> f64 {
    let mut bend: f64 = 0.0;
    let mut slope = 0.0;
    for i in 0..net.neurons() {
        let a1 = net.a1()[i];
        if a1 != 0.0 {
            bend = bend.max(-(net.a2()[i] * m + net.b1()[i]) / a1);
        }
        if a1 > 0.0 {
            slope += net.a3()[i] * a1;
        }
    }
    let tail = match net.link() {
        Link::Exponential if slope < 0.0 => -1.0 / slope,
        _ => 0.0,
    };
    let s = bend.max(tail);
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

/// Default grid for a true kernel: `[0, 4 decay scales]` at the median mark
/// over the 1st..99th mark percentile, 100 x 100.
pub fn default_grid_ranges(truth: &KernelSpec, marks: &[f64]) -> Result<((f64, f64), (f64, f64))> {
    let median = percentile(marks, 0.5)?;
    Ok((
        (0.0, 4.0 * truth.decay_scale(median)),
        default_mark_range(marks)?,
    ))
}

pub const DEFAULT_RESOLUTION: (usize, usize) = (100, 100);

/// Fitted kernel `phi_dj` in raw units on a grid.
pub fn model_kernel_grid(
    model: &HawkesModel,
    d: usize,
    j: usize,
    t_range: (f64, f64),
    m_range: (f64, f64),
    resolution: (usize, usize),
) -> Result<KernelGrid> {
    kernel_grid(
        |t, m| model.kernel_raw(d, j, t, m),
        t_range,
        m_range,
        resolution,
    )
}

/// Forecast summary for one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimForecast {
    /// Fraction of runs with at least one event in the window.
    pub p_event: f64,
    pub mean_count: f64,
    pub sd_count: f64,
    /// Per-run event counts.
    pub counts: Vec<usize>,
    /// Per-run time to the first event; `None` when censored at the window end.
    pub next_times: Vec<Option<f64>>,
}

impl DimForecast {
    /// Median time to next event, `None` when more than half the runs are censored.
    pub fn median_next(&self) -> Option<f64> {
        let mut v: Vec<f64> = self
            .next_times
            .iter()
            .map(|x| x.unwrap_or(f64::INFINITY))
            .collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n == 0 {
            return None;
        }
        let med = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        med.is_finite().then_some(med)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub start: f64,
    pub delta: f64,
    pub sims: usize,
    pub dims: Vec<DimForecast>,
}

/// Runs `n_sims` thinning simulations over `[start, start + delta)` after `history`.
/// Run `r` uses stream `r` of a generator seeded with `seed`.
pub fn predict_source<S: ProcessSource>(
    source: &S,
    history: &[MarkedEvent],
    start: f64,
    delta: f64,
    n_sims: usize,
    seed: u64,
) -> Result<Forecast> {
    if !(delta > 0.0 && delta.is_finite()) || n_sims == 0 {
        return Err(Error::Precondition(
            "prediction needs delta > 0 and at least one simulation".into(),
        ));
    }
    let dims = source.dims();
    let runs: Vec<Result<Vec<MarkedEvent>>> = (0..n_sims)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            Thinning::new(source, history, start, &mut rng)
                .run(start + delta, |_| false)
                .map_err(|e| Error::Simulation(format!("run {r}: {e}")))
        })
        .collect();
    let mut out: Vec<DimForecast> = (0..dims)
        .map(|_| DimForecast {
            p_event: 0.0,
            mean_count: 0.0,
            sd_count: 0.0,
            counts: Vec::with_capacity(n_sims),
            next_times: Vec::with_capacity(n_sims),
        })
        .collect();
    for run in runs {
        let run = run?;
        for (d, f) in out.iter_mut().enumerate() {
            f.counts.push(run.iter().filter(|e| e.dim == d).count());
            f.next_times
                .push(run.iter().find(|e| e.dim == d).map(|e| e.time - start));
        }
    }
    let n = n_sims as f64;
    for f in &mut out {
        f.p_event = f.counts.iter().filter(|c| **c > 0).count() as f64 / n;
        f.mean_count = f.counts.iter().sum::<usize>() as f64 / n;
        let var = f
            .counts
            .iter()
            .map(|c| (*c as f64 - f.mean_count).powi(2))
            .sum::<f64>()
            / (n - 1.0).max(1.0);
        f.sd_count = var.sqrt();
    }
    Ok(Forecast {
        start,
        delta,
        sims: n_sims,
        dims: out,
    })
}

/// Forecast from a fitted model and its mark densities, starting at the end
/// of `history` (its horizon).
pub fn predict(
    model: &HawkesModel,
    marks: &[MarkDensity],
    history: &EventSequence,
    delta: f64,
    n_sims: usize,
    seed: u64,
) -> Result<Forecast> {
    if marks.len() != model.dims() || history.dims() != model.dims() {
        return Err(Error::Precondition(
            "model, mark densities and history must share the dimension".into(),
        ));
    }
    let source = FittedProcess { model, marks };
    predict_source(
        &source,
        history.events(),
        history.horizon(),
        delta,
        n_sims,
        seed,
    )
}
