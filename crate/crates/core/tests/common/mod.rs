#![allow(dead_code)]

use markhawk::{
    compensator, eval_ground_intensity, event_gradient, EventSequence, HawkesModel, KernelNet,
    Link, MarkedEvent, ModelKind,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Kernel value recomputed from the raw weights.
pub fn kernel_value(net: &KernelNet, t: f64, m: f64) -> f64 {
    let mut z = net.b2();
    for i in 0..net.neurons() {
        z += net.a3()[i] * (net.a1()[i] * t + net.a2()[i] * m + net.b1()[i]).max(0.0);
    }
    match net.link() {
        Link::Exponential => z.exp(),
        Link::Identity => z,
    }
}

/// Intensity of dimension `d` at `s` from events strictly before `s`, identity scaling.
pub fn intensity(model: &HawkesModel, d: usize, s: f64, events: &[MarkedEvent]) -> f64 {
    let end = events.partition_point(|e| e.time < s);
    fixed_history_intensity(model, d, s, &events[..end])
}

/// Intensity with every event of `history` counted (all must be at or before `s`).
pub fn fixed_history_intensity(
    model: &HawkesModel,
    d: usize,
    s: f64,
    history: &[MarkedEvent],
) -> f64 {
    let mut v = model.mu()[d];
    for e in history {
        v += kernel_value(model.kernel(d, e.dim), s - e.time, e.mark);
    }
    match model.kind() {
        ModelKind::LinearSnh => v,
        ModelKind::NonLinearNnnh => v.max(0.0),
    }
}

fn simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, 60)
}

/// `int_a^b lambda_d` by quadrature, split at the event times where the intensity jumps.
pub fn quadrature_compensator(
    model: &HawkesModel,
    d: usize,
    events: &[MarkedEvent],
    a: f64,
    b: f64,
    tol: f64,
) -> f64 {
    let mut cuts = vec![a];
    cuts.extend(events.iter().map(|e| e.time).filter(|t| *t > a && *t < b));
    cuts.push(b);
    cuts.dedup();
    cuts.windows(2)
        .map(|w| {
            let (lo, hi) = (w[0], w[1]);
            let hist = &events[..events.partition_point(|e| e.time <= lo)];
            let g = |s: f64| fixed_history_intensity(model, d, s, hist);
            adaptive_simpson(&g, lo, hi, tol * (hi - lo) / (b - a))
        })
        .sum()
}

pub fn uniform_vec(rng: &mut impl Rng, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Random unscaled model with `dims` dimensions and `neurons` hidden units.
pub fn random_model(
    rng: &mut impl Rng,
    kind: ModelKind,
    dims: usize,
    neurons: usize,
) -> HawkesModel {
    let kernels = (0..dims * dims)
        .map(|_| {
            KernelNet::new(
                uniform_vec(rng, -1.0, 1.0, neurons),
                uniform_vec(rng, -1.0, 1.0, neurons),
                uniform_vec(rng, -1.0, 1.0, neurons),
                uniform_vec(rng, -1.0, 1.0, neurons),
                rng.gen_range(-1.0..0.5),
                kind.link(),
            )
            .unwrap()
        })
        .collect();
    HawkesModel::new(kind, uniform_vec(rng, 0.1, 1.0, dims), kernels).unwrap()
}

/// Random event sequence: `n` events with uniform times on `[0, horizon)` and marks in `[0.1, 3)`.
pub fn random_sequence(rng: &mut impl Rng, dims: usize, n: usize, horizon: f64) -> EventSequence {
    let events = (0..n)
        .map(|_| {
            MarkedEvent::new(
                rng.gen_range(0..dims),
                rng.gen_range(0.0..horizon),
                rng.gen_range(0.1..3.0),
            )
        })
        .collect();
    EventSequence::from_unsorted(dims, horizon, events).unwrap()
}

/// Relative difference with a floor on the scale.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Random instance within the integrator test envelope: D <= 2, P <= 8, <= 20 events.
pub fn instance(seed: u64, kind: ModelKind) -> (HawkesModel, EventSequence) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = rng.gen_range(1..=2);
    let p = rng.gen_range(1..=8);
    let n = rng.gen_range(0..=20);
    let horizon = rng.gen_range(2.0..10.0);
    (
        random_model(&mut rng, kind, dims, p),
        random_sequence(&mut rng, dims, n, horizon),
    )
}

pub const STEP: f64 = 1e-4;
/// Gradient components smaller than this are compared in absolute terms.
pub const SCALE_FLOOR: f64 = 1e-4;

/// Event `n`'s term `log lambda(t_n) - int_{prev}^{t_n} lambda` through the public raw-unit API.
pub fn event_value(model: &HawkesModel, seq: &EventSequence, n: usize) -> f64 {
    let e = seq.events()[n];
    let prev = seq.events()[..n]
        .iter()
        .rev()
        .find(|h| h.dim == e.dim)
        .map_or(0.0, |h| h.time);
    let before = seq
        .events()
        .iter()
        .copied()
        .filter(|h| h.time < e.time)
        .collect();
    let history = EventSequence::new(seq.dims(), seq.horizon(), before).unwrap();
    let lambda = eval_ground_intensity(model, e.dim, e.time, &history).unwrap();
    let lambda = match model.kind() {
        ModelKind::LinearSnh => lambda,
        ModelKind::NonLinearNnnh => lambda.max(1e-10),
    };
    lambda.ln() - compensator(model, e.dim, seq, prev, e.time).unwrap()
}

/// Fourth-order central difference of `f` in parameter `k`.
pub fn finite_difference(model: &HawkesModel, k: usize, f: impl Fn(&HawkesModel) -> f64) -> f64 {
    let base = model.params();
    let at = |delta: f64| {
        let mut m = model.clone();
        let mut p = base.clone();
        p[k] += delta;
        m.set_params(&p);
        f(&m)
    };
    (8.0 * (at(STEP) - at(-STEP)) - (at(2.0 * STEP) - at(-2.0 * STEP))) / (12.0 * STEP)
}

/// True when no hidden unit sits within reach of its kink at any event
/// evaluation and the non-linear intensity stays clear of its clamp, so the
/// event term is smooth across the finite-difference stencil.
pub fn smooth_at_events(model: &HawkesModel, seq: &EventSequence) -> bool {
    let events = seq.events();
    for (n, e) in events.iter().enumerate() {
        let mut pre = model.mu()[e.dim];
        for h in events[..n].iter().filter(|h| h.time < e.time) {
            let net = model.kernel(e.dim, h.dim);
            let el = e.time - h.time;
            for i in 0..net.neurons() {
                let z = net.a1()[i] * el + net.a2()[i] * h.mark + net.b1()[i];
                if z.abs() < 0.01 {
                    return false;
                }
            }
            pre += kernel_value(net, el, h.mark);
        }
        if model.kind() == ModelKind::NonLinearNnnh && pre.abs() < 0.05 {
            return false;
        }
    }
    true
}

pub fn smooth_instance(seed: u64, kind: ModelKind) -> (HawkesModel, EventSequence) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let dims = rng.gen_range(1..=2);
        let p = rng.gen_range(1..=8);
        let n = rng.gen_range(1..=20);
        let horizon = rng.gen_range(2.0..10.0);
        let model = random_model(&mut rng, kind, dims, p);
        let seq = random_sequence(&mut rng, dims, n, horizon);
        if smooth_at_events(&model, &seq) {
            return (model, seq);
        }
    }
}

pub fn check_instance(model: &HawkesModel, seq: &EventSequence) -> Result<(), String> {
    for n in 0..seq.len() {
        let g = event_gradient(model, seq, n).unwrap();
        for (k, gk) in g.iter().enumerate() {
            let fd = finite_difference(model, k, |m| event_value(m, seq, n));
            if rel_err(*gk, fd, SCALE_FLOOR) > 1e-5 {
                return Err(format!(
                    "event {n} param {k}: analytic {gk} vs finite difference {fd}"
                ));
            }
        }
    }
    Ok(())
}
