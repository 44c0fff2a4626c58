//! Gaussian-mixture mark densities fitted by expectation maximisation.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

const PDF_FLOOR: f64 = 1e-300;
const MAX_RESEEDS: usize = 5;

/// `sum_j z_j N(m; mean_j, var_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmDensity {
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl GmmDensity {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let g = Self {
            weights,
            means,
            variances,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.variances.len() != k {
            return Err(Error::InvalidModel(
                "mixture vectors must be non-empty and of equal length".into(),
            ));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidModel(
                "mixture weights must be nonnegative".into(),
            ));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidModel(format!(
                "mixture weights sum to {total}"
            )));
        }
        if self.variances.iter().any(|v| !(v.is_finite() && *v > 0.0))
            || self.means.iter().any(|m| !m.is_finite())
        {
            return Err(Error::InvalidModel(
                "mixture means must be finite and variances positive".into(),
            ));
        }
        Ok(())
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn pdf(&self, m: f64) -> f64 {
        (0..self.components())
            .map(|j| self.weights[j] * normal_pdf(m, self.means[j], self.variances[j]))
            .sum()
    }

    pub fn cdf(&self, m: f64) -> f64 {
        (0..self.components())
            .map(|j| {
                let z = (m - self.means[j]) / (2.0 * self.variances[j]).sqrt();
                self.weights[j] * 0.5 * erfc(-z)
            })
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| w * m)
            .sum()
    }

    /// The `u`-quantile by bisection on the mixture CDF, to 1e-10 in `m`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain(format!(
                "quantile level {u} must lie in (0, 1)"
            )));
        }
        let spread = self.variances.iter().fold(0.0f64, |a, v| a.max(v.sqrt()));
        let lo_mean = self.means.iter().copied().fold(f64::INFINITY, f64::min);
        let hi_mean = self.means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut lo = lo_mean - 40.0 * spread;
        let mut hi = hi_mean + 40.0 * spread;
        while hi - lo > 1e-10 * (1.0 + lo.abs().max(hi.abs())) {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

fn normal_pdf(m: f64, mean: f64, var: f64) -> f64 {
    (-(m - mean).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

pub fn gmm_pdf(g: &GmmDensity, m: f64) -> f64 {
    g.pdf(m)
}

/// Sum of log densities with a per-point floor, and how many points hit the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkLikelihood {
    pub value: f64,
    pub floored: usize,
}

pub fn mark_log_likelihood(g: &GmmDensity, marks: &[f64]) -> MarkLikelihood {
    let mut value = 0.0;
    let mut floored = 0;
    for &m in marks {
        let p = g.pdf(m);
        if p < PDF_FLOOR {
            floored += 1;
            value += PDF_FLOOR.ln();
        } else {
            value += p.ln();
        }
    }
    if floored > 0 {
        log::warn!("{floored} mark densities underflowed and were floored at {PDF_FLOOR:e}");
    }
    MarkLikelihood { value, floored }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub density: GmmDensity,
    /// Mark log-likelihood after initialisation and after every EM step.
    pub ll_history: Vec<f64>,
    pub iterations: usize,
    pub reseeds: usize,
}

impl GmmFit {
    pub fn bic(&self, n: usize) -> f64 {
        let k = self.density.components() as f64;
        let params = 3.0 * k - 1.0;
        params * (n as f64).ln()
            - 2.0 * self.ll_history.last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

fn total_ll(g: &GmmDensity, xs: &[f64]) -> f64 {
    xs.iter().map(|&x| g.pdf(x).max(PDF_FLOOR).ln()).sum()
}

/// EM fit with quantile-block initialisation.
pub fn fit_gmm_traced(
    marks: &[f64],
    k: usize,
    seed: u64,
    tol: f64,
    max_iter: usize,
) -> Result<GmmFit> {
    if k == 0 {
        return Err(Error::Config("mixture needs at least one component".into()));
    }
    if marks.iter().any(|m| !m.is_finite()) {
        return Err(Error::Domain("marks must be finite".into()));
    }
    let mut sorted = marks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::Precondition(format!(
            "{} distinct marks cannot support {k} components",
            distinct.len()
        )));
    }
    let n = marks.len();
    let nf = n as f64;
    let sample_mean = marks.iter().sum::<f64>() / nf;
    let sample_var = marks.iter().map(|m| (m - sample_mean).powi(2)).sum::<f64>() / nf;
    let collapse = 1e-8 * sample_var;

    let mut means = Vec::with_capacity(k);
    for c in 0..k {
        let block = &sorted[c * n / k..(c + 1) * n / k];
        means.push(block.iter().sum::<f64>() / block.len() as f64);
    }
    let mut g = GmmDensity {
        weights: vec![1.0 / k as f64; k],
        means,
        variances: vec![sample_var; k],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ll = total_ll(&g, marks);
    let mut history = vec![ll];
    let mut reseeds = 0;
    let mut resp = vec![0.0; n * k];
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        // E step
        for (i, &x) in marks.iter().enumerate() {
            let row = &mut resp[i * k..(i + 1) * k];
            let mut total = 0.0;
            for j in 0..k {
                row[j] = g.weights[j] * normal_pdf(x, g.means[j], g.variances[j]);
                total += row[j];
            }
            if total > 0.0 {
                row.iter_mut().for_each(|r| *r /= total);
            } else {
                // far in every tail: give it to the nearest mean
                let near = (0..k)
                    .min_by(|&a, &b| (x - g.means[a]).abs().total_cmp(&(x - g.means[b]).abs()))
                    .unwrap();
                row.fill(0.0);
                row[near] = 1.0;
            }
        }
        // M step
        let mut reseeded = false;
        for j in 0..k {
            let nj: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            let mean = if nj > 0.0 {
                (0..n).map(|i| resp[i * k + j] * marks[i]).sum::<f64>() / nj
            } else {
                0.0
            };
            let var = if nj > 0.0 {
                (0..n)
                    .map(|i| resp[i * k + j] * (marks[i] - mean).powi(2))
                    .sum::<f64>()
                    / nj
            } else {
                0.0
            };
            if nj <= 0.0 || !(var > collapse) {
                reseeds += 1;
                if reseeds > MAX_RESEEDS {
                    return Err(Error::DegenerateFit(format!(
                        "component {j} collapsed {reseeds} times"
                    )));
                }
                g.means[j] = marks[rng.gen_range(0..n)];
                g.variances[j] = sample_var;
                g.weights[j] = 1.0 / k as f64;
                reseeded = true;
            } else {
                g.weights[j] = nj / nf;
                g.means[j] = mean;
                g.variances[j] = var;
            }
        }
        let wsum: f64 = g.weights.iter().sum();
        g.weights.iter_mut().for_each(|w| *w /= wsum);

        let next = total_ll(&g, marks);
        history.push(next);
        if reseeded {
            ll = next;
            continue;
        }
        if next < ll - 1e-9 * ll.abs().max(1.0) {
            return Err(Error::DegenerateFit(format!(
                "EM log-likelihood decreased from {ll} to {next}"
            )));
        }
        let gain = next - ll;
        ll = next;
        if gain < tol {
            break;
        }
    }
    g.validate()?;
    Ok(GmmFit {
        density: g,
        ll_history: history,
        iterations,
        reseeds,
    })
}

/// EM fit of a `k`-component mixture to `marks`.
pub fn fit_gmm(
    marks: &[f64],
    k: usize,
    seed: u64,
    tol: f64,
    max_iter: usize,
) -> Result<GmmDensity> {
    fit_gmm_traced(marks, k, seed, tol, max_iter).map(|f| f.density)
}

/// Fits every `k` in `ks` and keeps the fit with the smallest BIC.
pub fn fit_gmm_bic(
    marks: &[f64],
    ks: std::ops::RangeInclusive<usize>,
    seed: u64,
    tol: f64,
    max_iter: usize,
) -> Result<GmmFit> {
    let mut best: Option<GmmFit> = None;
    for k in ks {
        let fit = match fit_gmm_traced(marks, k, seed, tol, max_iter) {
            Ok(f) => f,
            Err(Error::Precondition(_)) | Err(Error::DegenerateFit(_)) => continue,
            Err(e) => return Err(e),
        };
        if best
            .as_ref()
            .map_or(true, |b| fit.bic(marks.len()) < b.bic(marks.len()))
        {
            best = Some(fit);
        }
    }
    best.ok_or_else(|| Error::DegenerateFit("no component count produced a valid fit".into()))
}

/// A mixture fitted either to raw marks or to their logarithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkDensity {
    pub gmm: GmmDensity,
    #[serde(default)]
    pub log_marks: bool,
}

impl MarkDensity {
    pub fn raw(gmm: GmmDensity) -> Self {
        Self {
            gmm,
            log_marks: false,
        }
    }

    pub fn pdf(&self, m: f64) -> f64 {
        if self.log_marks {
            if m > 0.0 {
                self.gmm.pdf(m.ln()) / m
            } else {
                0.0
            }
        } else {
            self.gmm.pdf(m)
        }
    }

    pub fn cdf(&self, m: f64) -> f64 {
        if self.log_marks {
            if m > 0.0 {
                self.gmm.cdf(m.ln())
            } else {
                0.0
            }
        } else {
            self.gmm.cdf(m)
        }
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        let q = self.gmm.quantile(u)?;
        Ok(if self.log_marks { q.exp() } else { q })
    }

    /// Fits `k` components (or picks `k` in 1..=6 by BIC when `k` is `None`).
    pub fn fit(marks: &[f64], k: Option<usize>, log_marks: bool, seed: u64) -> Result<Self> {
        let xs: Vec<f64> = if log_marks {
            if marks.iter().any(|m| !(*m > 0.0)) {
                return Err(Error::Domain(
                    "log-mark densities need positive marks".into(),
                ));
            }
            marks.iter().map(|m| m.ln()).collect()
        } else {
            marks.to_vec()
        };
        let gmm = match k {
            Some(k) => fit_gmm(&xs, k, seed, 1e-8, 500)?,
            None => fit_gmm_bic(&xs, 1..=6, seed, 1e-8, 500)?.density,
        };
        Ok(Self { gmm, log_marks })
    }
}
