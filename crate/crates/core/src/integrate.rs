//! Closed-form compensators of network intensities.
//!
//! Between hidden-unit zero crossings a kernel network is affine in elapsed
//! time, so an exponential-link kernel integrates to a sum of
//! `exp(affine)` pieces and a clamped identity-link intensity to a sum of
//! trapezoids. The same sweeps also accumulate exact parameter gradients of
//! the integrals (crossings are held fixed; the integrands are continuous at
//! every crossing so their motion does not contribute).

use crate::error::{Error, Result};
use crate::model::{EventSequence, HawkesModel, KernelNet, Link, MarkedEvent, ModelKind};

const MERGE_TOL: f64 = 1e-12;
const SMALL_SLOPE: f64 = 1e-10;
const MAX_EXPONENT: f64 = 700.0;

/// Sorted integration breakpoints on a bounded interval, endpoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct BreakpointList {
    points: Vec<f64>,
}

impl BreakpointList {
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn segments(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }

    /// Adds interior points (deduplicated with the same tolerance as construction).
    pub fn refined(&self, extra: &[f64]) -> Self {
        let lo = self.points[0];
        let hi = *self.points.last().unwrap();
        let mut inner: Vec<f64> = self.points[1..self.points.len() - 1].to_vec();
        inner.extend(extra.iter().copied().filter(|&y| y > lo && y < hi));
        Self {
            points: merge_points(lo, hi, inner),
        }
    }
}

#[inline]
fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= MERGE_TOL * a.abs().max(b.abs()).max(1.0)
}

fn merge_points(lo: f64, hi: f64, mut inner: Vec<f64>) -> Vec<f64> {
    inner.sort_by(f64::total_cmp);
    let mut pts = Vec::with_capacity(inner.len() + 2);
    pts.push(lo);
    for y in inner {
        if !close(y, *pts.last().unwrap()) && !close(y, hi) {
            pts.push(y);
        }
    }
    pts.push(hi);
    pts
}

/// Zero crossing in elapsed time of neuron `i` for mark `m`, if the neuron depends on time.
#[inline]
fn crossing(net: &KernelNet, i: usize, m: f64) -> Option<f64> {
    let a1 = net.a1[i];
    (a1 != 0.0).then(|| -(net.a2[i] * m + net.b1[i]) / a1)
}

fn breakpoints_between(net: &KernelNet, m: f64, lo: f64, hi: f64) -> BreakpointList {
    let inner = (0..net.neurons())
        .filter_map(|i| crossing(net, i, m))
        .filter(|&y| y > lo && y < hi)
        .collect();
    BreakpointList {
        points: merge_points(lo, hi, inner),
    }
}

/// Hidden-unit zero crossings of `net` at mark `m` inside `(0, length)`, plus both endpoints.
pub fn hidden_breakpoints(net: &KernelNet, m: f64, length: f64) -> Result<BreakpointList> {
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::Precondition(format!(
            "interval length {length} must be positive"
        )));
    }
    Ok(breakpoints_between(net, m, 0.0, length))
}

/// `(x e^x - e^x + 1) / x^2`, i.e. `int_0^1 u e^{x u} du`, for `x <= 0`.
fn first_moment_factor(x: f64) -> f64 {
    if x.abs() < 0.5 {
        // sum_n x^n / (n! (n + 2))
        let mut term = 1.0;
        let mut acc = 0.5;
        for n in 1..30 {
            term *= x / n as f64;
            acc += term / (n + 2) as f64;
        }
        acc
    } else {
        (x * x.exp() - x.exp_m1()) / (x * x)
    }
}

/// Integrals `G = int e^E` and `H = int s e^E` of `E(s) = e_a + c1 (s - a)` on `[a, b]`.
fn exp_affine_moments(e_a: f64, c1: f64, a: f64, b: f64) -> (f64, f64) {
    let w = b - a;
    let x = c1 * w;
    if c1.abs() < SMALL_SLOPE {
        let ea = e_a.exp();
        let g = ea * w * (1.0 + 0.5 * x);
        let h = a * g + ea * w * w * (0.5 + x / 3.0);
        return (g, h);
    }
    if c1 < 0.0 {
        let ea = e_a.exp();
        let g = ea * x.exp_m1() / c1;
        let h = a * g + ea * w * w * first_moment_factor(x);
        (g, h)
    } else {
        let eb = (e_a + x).exp();
        let g = eb * -(-x).exp_m1() / c1;
        let h = b * g - eb * w * w * first_moment_factor(-x);
        (g, h)
    }
}

/// Integral of an exponential-link kernel over elapsed times `[lo, hi]` at mark `m`.
///
/// When `grad` is given (length `4p + 1`, layout of [`KernelNet::write_params`])
/// the parameter gradient of the integral is added to it.
pub(crate) fn exp_kernel_integral(
    net: &KernelNet,
    m: f64,
    lo: f64,
    hi: f64,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    debug_assert_eq!(net.link, Link::Exponential);
    if !(hi > lo) {
        return Ok(0.0);
    }
    exp_segments_integral(net, m, &breakpoints_between(net, m, lo, hi), grad)
}

/// Integral of an exponential-link kernel segment by segment over `bps`,
/// which must contain every hidden-unit crossing inside its range.
fn exp_segments_integral(
    net: &KernelNet,
    m: f64,
    bps: &BreakpointList,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    let p = net.neurons();
    let mut total = 0.0;
    let mut active = Vec::with_capacity(p);
    for (seg, (a, b)) in bps.segments().enumerate() {
        let mid = 0.5 * (a + b);
        active.clear();
        let mut e_a = net.b2;
        let mut c1 = 0.0;
        for i in 0..p {
            if net.a1[i] * mid + net.a2[i] * m + net.b1[i] > 0.0 {
                active.push(i);
                e_a += net.a3[i] * (net.a1[i] * a + net.a2[i] * m + net.b1[i]);
                c1 += net.a3[i] * net.a1[i];
            }
        }
        let e_b = e_a + c1 * (b - a);
        if e_a.max(e_b) > MAX_EXPONENT {
            return Err(Error::NumericOverflow(format!(
                "kernel exponent {} exceeds {MAX_EXPONENT} on segment {seg} [{a}, {b}]",
                e_a.max(e_b)
            )));
        }
        let (g, h) = exp_affine_moments(e_a, c1, a, b);
        total += g;
        if let Some(gr) = grad.as_deref_mut() {
            for &i in &active {
                let off = net.a2[i] * m + net.b1[i];
                gr[i] += net.a3[i] * h;
                gr[p + i] += net.a3[i] * m * g;
                gr[2 * p + i] += net.a3[i] * g;
                gr[3 * p + i] += net.a1[i] * h + off * g;
            }
            gr[4 * p] += g;
        }
    }
    Ok(total)
}

/// `int_0^length phi(s, m) ds` for an exponential-link kernel.
pub fn integrate_kernel_exp(net: &KernelNet, m: f64, length: f64) -> Result<f64> {
    if net.link != Link::Exponential {
        return Err(Error::Precondition(
            "integrate_kernel_exp needs an exponential-link kernel".into(),
        ));
    }
    if !(length >= 0.0) {
        return Err(Error::Precondition(format!(
            "interval length {length} is negative"
        )));
    }
    exp_kernel_integral(net, m, 0.0, length, None)
}

/// `int phi(s, m) ds` over the span of `bps` for an exponential-link kernel,
/// summed segment by segment. Extra interior points leave the value unchanged.
pub fn integrate_kernel_exp_over(net: &KernelNet, m: f64, bps: &BreakpointList) -> Result<f64> {
    if net.link != Link::Exponential {
        return Err(Error::Precondition(
            "integrate_kernel_exp_over needs an exponential-link kernel".into(),
        ));
    }
    let (lo, hi) = (bps.points[0], *bps.points.last().unwrap());
    let full = breakpoints_between(net, m, lo, hi);
    exp_segments_integral(net, m, &full.refined(&bps.points), None)
}

/// Integral of the linear-model intensity of dimension `d` over `[a, b]` in model space.
///
/// `events` must be sorted; only events before `b` contribute. When `grad` is
/// given (full model parameter layout) the gradient is accumulated into it.
pub(crate) fn snh_compensator(
    model: &HawkesModel,
    d: usize,
    events: &[MarkedEvent],
    a: f64,
    b: f64,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    if !(b > a) {
        return Ok(0.0);
    }
    let mut total = model.mu[d] * (b - a);
    if let Some(g) = grad.as_deref_mut() {
        g[model.mu_index(d)] += b - a;
    }
    let end = events.partition_point(|e| e.time < b);
    let row = model.row(d);
    for e in &events[..end] {
        let lo = (a.max(e.time)) - e.time;
        let mut hi = b - e.time;
        if let Some(l) = model.lookback {
            hi = hi.min(l);
        }
        if hi <= lo {
            continue;
        }
        let net = &row[e.dim];
        let block = grad.as_deref_mut().map(|g| {
            let off = model.kernel_offset(d, e.dim);
            &mut g[off..off + net.n_params()]
        });
        total += exp_kernel_integral(net, e.mark, lo, hi, block)?;
    }
    Ok(total)
}

/// Per-neuron sums over the currently active (event, neuron) pairs of one kernel.
#[derive(Clone, Copy, Default)]
struct ActiveStats {
    count: f64,
    elapsed: f64,
    marks: f64,
}

struct Toggle {
    at: f64,
    slot: usize,
    sign: f64,
    elapsed: f64,
    mark: f64,
}

/// Integral of `max(mu_d + sum phi, 0)` over `[a, b]` for the non-linear model, in model space.
pub(crate) fn nnnh_compensator(
    model: &HawkesModel,
    d: usize,
    events: &[MarkedEvent],
    a: f64,
    b: f64,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    if !(b > a) {
        return Ok(0.0);
    }
    // the history changes at event arrivals and, with a lookback window, at expiries
    let mut cuts: Vec<f64> = events
        .iter()
        .map(|e| e.time)
        .filter(|&t| t > a && t < b)
        .collect();
    if let Some(l) = model.lookback {
        cuts.extend(
            events
                .iter()
                .map(|e| e.time + l)
                .filter(|&t| t > a && t < b),
        );
        cuts.sort_by(f64::total_cmp);
    }
    cuts.dedup();
    let mut total = 0.0;
    let mut lo = a;
    for hi in cuts.into_iter().chain(std::iter::once(b)) {
        if hi > lo {
            total += nnnh_fixed_history(model, d, events, lo, hi, grad.as_deref_mut());
        }
        lo = hi;
    }
    if !total.is_finite() {
        return Err(Error::NonFinite(format!(
            "compensator of dimension {d} on [{a}, {b}]"
        )));
    }
    Ok(total)
}

/// One stretch `[lo, hi]` with no arrivals or expiries inside.
fn nnnh_fixed_history(
    model: &HawkesModel,
    d: usize,
    events: &[MarkedEvent],
    lo: f64,
    hi: f64,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let dims = model.dims;
    let p = model.neurons();
    let row = model.row(d);
    let mid = 0.5 * (lo + hi);
    let end = events.partition_point(|e| e.time <= lo);

    let mut stats = vec![ActiveStats::default(); dims * p];
    let mut counts = vec![0.0; dims];
    let mut toggles: Vec<Toggle> = Vec::new();
    for e in &events[..end] {
        if !model.in_window(mid - e.time) {
            continue;
        }
        let j = e.dim;
        counts[j] += 1.0;
        let net = &row[j];
        let el = lo - e.time;
        for i in 0..p {
            let slot = j * p + i;
            let a1 = net.a1[i];
            let (active, toggle) = if a1 == 0.0 {
                (net.a2[i] * e.mark + net.b1[i] > 0.0, None)
            } else {
                let y = e.time - (net.a2[i] * e.mark + net.b1[i]) / a1;
                if a1 > 0.0 {
                    (y <= lo, (y > lo && y < hi).then_some((y, 1.0)))
                } else {
                    (y > lo, (y > lo && y < hi).then_some((y, -1.0)))
                }
            };
            if active {
                let s = &mut stats[slot];
                s.count += 1.0;
                s.elapsed += el;
                s.marks += e.mark;
            }
            if let Some((at, sign)) = toggle {
                toggles.push(Toggle {
                    at,
                    slot,
                    sign,
                    elapsed: el,
                    mark: e.mark,
                });
            }
        }
    }
    toggles.sort_by(|x, y| x.at.total_cmp(&y.at));

    let base_b2: f64 = (0..dims).map(|j| row[j].b2 * counts[j]).sum();
    let mut total = 0.0;
    let mut seg_lo = lo;
    let mut k = 0;
    loop {
        let seg_hi = if k < toggles.len() { toggles[k].at } else { hi };
        if seg_hi - seg_lo > MERGE_TOL * seg_hi.abs().max(1.0) {
            total += clamped_segment(
                model,
                d,
                &stats,
                &counts,
                base_b2,
                seg_lo - lo,
                seg_hi - lo,
                grad.as_deref_mut(),
            );
            seg_lo = seg_hi;
        }
        if k >= toggles.len() {
            break;
        }
        // apply every toggle at (or merged into) this crossing
        let at = toggles[k].at;
        while k < toggles.len() && close(toggles[k].at, at) {
            let t = &toggles[k];
            let s = &mut stats[t.slot];
            s.count += t.sign;
            s.elapsed += t.sign * t.elapsed;
            s.marks += t.sign * t.mark;
            k += 1;
        }
    }
    total
}

/// Integral of the positive part of the affine pre-intensity on local coordinates `[x0, x1]`.
#[allow(clippy::too_many_arguments)]
fn clamped_segment(
    model: &HawkesModel,
    d: usize,
    stats: &[ActiveStats],
    counts: &[f64],
    base_b2: f64,
    x0: f64,
    x1: f64,
    grad: Option<&mut [f64]>,
) -> f64 {
    let p = model.neurons();
    let row = model.row(d);
    let mut c0 = model.mu[d] + base_b2;
    let mut c1 = 0.0;
    for (j, net) in row.iter().enumerate() {
        for i in 0..p {
            let s = &stats[j * p + i];
            if s.count == 0.0 {
                continue;
            }
            c1 += net.a3[i] * net.a1[i] * s.count;
            c0 += net.a3[i] * (net.a1[i] * s.elapsed + net.a2[i] * s.marks + net.b1[i] * s.count);
        }
    }
    let v0 = c0 + c1 * x0;
    let v1 = c0 + c1 * x1;
    let (p0, p1) = match (v0 > 0.0, v1 > 0.0) {
        (true, true) => (x0, x1),
        (false, false) => return 0.0,
        (true, false) => (x0, x0 + (x1 - x0) * v0 / (v0 - v1)),
        (false, true) => (x0 + (x1 - x0) * (-v0) / (v1 - v0), x1),
    };
    let w = p1 - p0;
    if w <= 0.0 {
        return 0.0;
    }
    let xm = 0.5 * (p0 + p1);
    let value = w * (c0 + c1 * xm);
    if let Some(g) = grad {
        g[model.mu_index(d)] += w;
        for (j, net) in row.iter().enumerate() {
            let off = model.kernel_offset(d, j);
            g[off + 4 * p] += w * counts[j];
            for i in 0..p {
                let s = &stats[j * p + i];
                if s.count == 0.0 {
                    continue;
                }
                let lin = s.count * xm + s.elapsed;
                g[off + i] += w * net.a3[i] * lin;
                g[off + p + i] += w * net.a3[i] * s.marks;
                g[off + 2 * p + i] += w * net.a3[i] * s.count;
                g[off + 3 * p + i] +=
                    w * (net.a1[i] * lin + net.a2[i] * s.marks + net.b1[i] * s.count);
            }
        }
    }
    value
}

/// Model-space compensator dispatching on the model kind.
pub(crate) fn compensator_model_space(
    model: &HawkesModel,
    d: usize,
    events: &[MarkedEvent],
    a: f64,
    b: f64,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    match model.kind {
        ModelKind::LinearSnh => snh_compensator(model, d, events, a, b, grad),
        ModelKind::NonLinearNnnh => nnnh_compensator(model, d, events, a, b, grad),
    }
}

/// `int_a^b lambda_d(s) ds` with raw times, conditioning on the events of `seq`.
pub fn compensator(
    model: &HawkesModel,
    d: usize,
    seq: &EventSequence,
    a: f64,
    b: f64,
) -> Result<f64> {
    if d >= model.dims() {
        return Err(Error::Precondition(format!("dimension {d} out of range")));
    }
    if !(a <= b) {
        return Err(Error::Precondition(format!(
            "interval [{a}, {b}] is reversed"
        )));
    }
    let scaled = model.to_model_space(seq)?;
    let ts = model.scaling().time_scale;
    compensator_model_space(model, d, scaled.events(), a * ts, b * ts, None)
}

/// `int_0^T lambda_d(s) ds` for a linear model, `T` being the sequence horizon.
pub fn integrated_ground_intensity_snh(
    model: &HawkesModel,
    d: usize,
    seq: &EventSequence,
) -> Result<f64> {
    if model.kind() != ModelKind::LinearSnh {
        return Err(Error::Precondition("expected a linear model".into()));
    }
    compensator(model, d, seq, 0.0, seq.horizon())
}

/// `int_0^T lambda_d(s) ds` for a non-linear model, `T` being the sequence horizon.
pub fn integrated_ground_intensity_nnnh(
    model: &HawkesModel,
    d: usize,
    seq: &EventSequence,
) -> Result<f64> {
    if model.kind() != ModelKind::NonLinearNnnh {
        return Err(Error::Precondition("expected a non-linear model".into()));
    }
    compensator(model, d, seq, 0.0, seq.horizon())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net1(a1: f64, a2: f64, b1: f64, a3: f64, b2: f64, link: Link) -> KernelNet {
        KernelNet::new(vec![a1], vec![a2], vec![b1], vec![a3], b2, link).unwrap()
    }

    #[test]
    fn breakpoint_examples() {
        let n = net1(1.0, 0.0, -2.0, 1.0, 0.0, Link::Exponential);
        assert_eq!(
            hidden_breakpoints(&n, 7.0, 5.0).unwrap().points(),
            &[0.0, 2.0, 5.0]
        );
        let n = net1(1.0, 1.0, 0.0, 1.0, 0.0, Link::Exponential);
        assert_eq!(
            hidden_breakpoints(&n, 3.0, 5.0).unwrap().points(),
            &[0.0, 5.0]
        );
        let n = net1(0.0, 1.0, 0.0, 1.0, 0.0, Link::Exponential);
        assert_eq!(
            hidden_breakpoints(&n, 3.0, 5.0).unwrap().points(),
            &[0.0, 5.0]
        );
        assert!(hidden_breakpoints(&n, 3.0, 0.0).is_err());
    }

    #[test]
    fn near_duplicate_breakpoints_merge() {
        let n = KernelNet::new(
            vec![1.0, 1.0, 1.0],
            vec![0.0; 3],
            vec![-2.0, -2.0 - 1e-14, -1e-15],
            vec![1.0; 3],
            0.0,
            Link::Exponential,
        )
        .unwrap();
        assert_eq!(
            hidden_breakpoints(&n, 0.0, 5.0).unwrap().points(),
            &[0.0, 2.0, 5.0]
        );
    }

    #[test]
    fn constant_exp_kernel_integral() {
        let n = KernelNet::constant(3, 2f64.ln(), Link::Exponential);
        assert!((integrate_kernel_exp(&n, 1.0, 3.0).unwrap() - 6.0).abs() < 1e-14);
        assert_eq!(integrate_kernel_exp(&n, 1.0, 0.0).unwrap(), 0.0);
        assert!(
            integrate_kernel_exp(&KernelNet::constant(1, 0.0, Link::Identity), 1.0, 1.0).is_err()
        );
    }

    #[test]
    fn exp_kernel_matches_closed_form() {
        // exp(-2 t) for t < 1.5, then flat: relu(1.5 - t) with weight 2, offset -3
        let n = net1(-1.0, 0.0, 1.5, 2.0, -3.0, Link::Exponential);
        let expected = ((-3.0f64).exp() * (3.0f64.exp() - 1.0)) / 2.0 + (-3.0f64).exp() * 2.5;
        let got = integrate_kernel_exp(&n, 0.4, 4.0).unwrap();
        assert!(
            (got - expected).abs() < 1e-13 * expected,
            "{got} vs {expected}"
        );
    }

    #[test]
    fn overflow_is_reported() {
        let n = net1(1.0, 0.0, 0.0, 100.0, 0.0, Link::Exponential);
        let err = integrate_kernel_exp(&n, 0.0, 10.0).unwrap_err();
        assert!(matches!(err, Error::NumericOverflow(ref s) if s.contains("segment")));
    }

    #[test]
    fn small_slope_branch_is_continuous() {
        for c1 in [1e-9, 1e-11, -1e-11, 0.0, -1e-9, 1e-6] {
            let (g, h) = exp_affine_moments(0.3, c1, 1.0, 3.0);
            let (g0, h0) = (0.3f64.exp() * 2.0, 0.3f64.exp() * 4.0);
            assert!((g - g0).abs() < 1e-5 * g0);
            assert!((h - h0).abs() < 1e-5 * h0);
        }
        let x: f64 = -0.49;
        let closed = (x * x.exp() - x.exp_m1()) / (x * x);
        assert!((first_moment_factor(x) - closed).abs() < 1e-13);
    }

    #[test]
    fn snh_integral_examples() {
        let k = KernelNet::constant(2, 2f64.ln(), Link::Exponential);
        let model = HawkesModel::new(ModelKind::LinearSnh, vec![0.7], vec![k.clone()]).unwrap();
        let empty = EventSequence::empty(1, 10.0).unwrap();
        assert!((integrated_ground_intensity_snh(&model, 0, &empty).unwrap() - 7.0).abs() < 1e-14);

        let model = HawkesModel::new(ModelKind::LinearSnh, vec![0.0], vec![k]).unwrap();
        let seq = EventSequence::new(1, 4.0, vec![MarkedEvent::new(0, 1.0, 3.0)]).unwrap();
        assert!((integrated_ground_intensity_snh(&model, 0, &seq).unwrap() - 6.0).abs() < 1e-14);
    }

    #[test]
    fn nnnh_integral_examples() {
        let model = HawkesModel::new(
            ModelKind::NonLinearNnnh,
            vec![0.9],
            vec![KernelNet::constant(2, 0.0, Link::Identity)],
        )
        .unwrap();
        let empty = EventSequence::empty(1, 5.0).unwrap();
        assert!((integrated_ground_intensity_nnnh(&model, 0, &empty).unwrap() - 4.5).abs() < 1e-14);

        // one event at 0 with phi(t) = -t, so the pre-intensity is 1 - s
        let k = net1(1.0, 0.0, 0.0, -1.0, 0.0, Link::Identity);
        let model = HawkesModel::new(ModelKind::NonLinearNnnh, vec![1.0], vec![k]).unwrap();
        let seq = EventSequence::new(1, 2.0, vec![MarkedEvent::new(0, 0.0, 1.0)]).unwrap();
        assert!((integrated_ground_intensity_nnnh(&model, 0, &seq).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn lookback_truncates_kernels() {
        let k = KernelNet::constant(1, 2f64.ln(), Link::Exponential);
        let model = HawkesModel::new(ModelKind::LinearSnh, vec![0.0], vec![k])
            .unwrap()
            .with_lookback(Some(1.5))
            .unwrap();
        let seq = EventSequence::new(1, 4.0, vec![MarkedEvent::new(0, 1.0, 3.0)]).unwrap();
        assert!((integrated_ground_intensity_snh(&model, 0, &seq).unwrap() - 3.0).abs() < 1e-14);

        let k = KernelNet::constant(1, 0.5, Link::Identity);
        let model = HawkesModel::new(ModelKind::NonLinearNnnh, vec![0.0], vec![k])
            .unwrap()
            .with_lookback(Some(1.5))
            .unwrap();
        assert!((integrated_ground_intensity_nnnh(&model, 0, &seq).unwrap() - 0.75).abs() < 1e-14);
    }
}
