//! Gaussian peak fits to reconstructed spectra and stretched-exponential fits
//! to decay curves.

use std::f64::consts::{E, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::CoherenceCurve;

use super::lm::{levenberg_marquardt, LmOptions, LmOutcome};
use super::DecompositionResult;

const GAUSSIAN_MIN_POINTS: usize = 6;
const STRETCHED_MIN_POINTS: usize = 8;
/// A fitted peak must exceed this many standard errors of its amplitude.
const PEAK_SIGNIFICANCE: f64 = 3.0;
const P_BOUNDS: (f64, f64) = (0.5 + 1e-9, 4.0 - 1e-9);

/// baseline + amplitude * exp(-(f - center)^2 / (2 width^2)) with its gradient
/// in the order (center, amplitude, width, baseline).
pub fn gaussian_model(p: &[f64], f: f64) -> (f64, Vec<f64>) {
    let (c, a, w, b) = (p[0], p[1], p[2], p[3]);
    let u = (f - c) / w;
    let g = (-0.5 * u * u).exp();
    (b + a * g, vec![a * g * u / w, g, a * g * u * u / w, 1.0])
}

/// a * exp(-(t / t2)^p) with its gradient in the order (a, t2, p).
pub fn stretched_exp_model(q: &[f64], t: f64) -> (f64, Vec<f64>) {
    let (a, t2, p) = (q[0], q[1], q[2]);
    if t <= 0.0 {
        return (a, vec![1.0, 0.0, 0.0]);
    }
    let x = t / t2;
    let xp = x.powf(p);
    let e = (-xp).exp();
    (a * e, vec![e, a * e * xp * p / t2, -a * e * xp * x.ln()])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianOptions {
    /// Fit window in MHz.
    pub band_mhz: (f64, f64),
}

impl Default for GaussianOptions {
    fn default() -> Self {
        Self {
            band_mhz: (10.0, 100.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub center_mhz: f64,
    /// rad/us
    pub amplitude: f64,
    pub width_mhz: f64,
    /// rad/us
    pub baseline: f64,
    /// Row-major 4x4 in the order (center, amplitude, width, baseline).
    pub covariance: Vec<Vec<f64>>,
    /// sqrt of the weighted residual sum of squares.
    pub residual_norm: f64,
    pub points: usize,
    pub weighted: bool,
    pub converged: bool,
}

impl GaussianFit {
    pub fn center_sigma_mhz(&self) -> f64 {
        self.covariance[0][0].max(0.0).sqrt()
    }

    pub fn amplitude_sigma(&self) -> f64 {
        self.covariance[1][1].max(0.0).sqrt()
    }

    /// Peak value of the fitted curve, baseline included.
    pub fn peak_value(&self) -> f64 {
        self.amplitude + self.baseline
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StretchedExpFit {
    pub a: f64,
    pub t2_star_ns: f64,
    pub p: f64,
    /// Row-major 3x3 in the order (a, T2* in ns, p).
    pub covariance: Vec<Vec<f64>>,
    pub residual_norm: f64,
    pub points: usize,
    pub weighted: bool,
    pub converged: bool,
}

/// Unit weights unless every sigma is positive.
fn weights(sigma: &[f64]) -> (Vec<f64>, bool) {
    if !sigma.is_empty() && sigma.iter().all(|s| *s > 0.0 && s.is_finite()) {
        (sigma.to_vec(), true)
    } else {
        (vec![1.0; sigma.len()], false)
    }
}

/// Covariance from the inverse Hessian: unscaled for measured errors, scaled by
/// the reduced residual for unit weights.
fn covariance(out: &LmOutcome, m: usize, weighted: bool) -> Vec<Vec<f64>> {
    let p = out.params.len();
    let scale = if weighted {
        1.0
    } else {
        out.cost / (m.saturating_sub(p).max(1)) as f64
    };
    match &out.inverse_hessian {
        Some(h) => (0..p)
            .map(|i| (0..p).map(|j| h[(i, j)] * scale).collect())
            .collect(),
        None => vec![vec![f64::NAN; p]; p],
    }
}

/// Value at which the cumulative of `mass` reaches `q`, linearly interpolated.
fn mass_quantile(x: &[f64], mass: &[f64], q: f64) -> f64 {
    let total: f64 = mass.iter().sum();
    let target = q * total;
    let mut acc = 0.0;
    for i in 0..x.len() {
        if acc + mass[i] >= target && mass[i] > 0.0 {
            if i == 0 {
                return x[0];
            }
            let f = (target - acc) / mass[i];
            return x[i - 1] + f * (x[i] - x[i - 1]);
        }
        acc += mass[i];
    }
    x[x.len() - 1]
}

/// Weighted Gaussian fit to (f in MHz, S, sigma) samples.
pub fn fit_gaussian_points(f: &[f64], s: &[f64], sigma: &[f64]) -> Result<GaussianFit> {
    let m = f.len();
    if m < GAUSSIAN_MIN_POINTS {
        return Err(Error::DegenerateFit(format!(
            "{m} valid points, at least {GAUSSIAN_MIN_POINTS} required"
        )));
    }
    let (lo_f, hi_f) = (f[0], f[m - 1]);
    let s_max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s_min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(s_max - s_min > 1e-12 * s_max.abs().max(s_min.abs())) || s_max == s_min {
        return Err(Error::DegenerateFit("spectrum is flat over the fit band".into()));
    }
    let (w, weighted) = weights(sigma);

    let mut sorted = s.to_vec();
    sorted.sort_by(f64::total_cmp);
    let base0 = sorted[m / 10];
    let excess: Vec<f64> = s.iter().map(|v| (v - base0).max(0.0)).collect();
    let q25 = mass_quantile(f, &excess, 0.25);
    let q75 = mass_quantile(f, &excess, 0.75);
    let span = hi_f - lo_f;
    let min_spacing = f.windows(2).map(|p| p[1] - p[0]).fold(f64::INFINITY, f64::min);
    let width_lo = (0.5 * min_spacing).max(1e-9 * span);
    let width0 = ((q75 - q25) / 1.349).clamp(2.0 * width_lo, 0.5 * span);
    let argmax = (0..m).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap_or(0);
    let mut centers = vec![f[argmax]];
    centers.extend([0.2, 0.4, 0.6, 0.8].map(|q| mass_quantile(f, &excess, q)));

    let lower = [lo_f, 0.0, width_lo, f64::NEG_INFINITY];
    let upper = [hi_f, f64::INFINITY, span, f64::INFINITY];
    let mut best: Option<LmOutcome> = None;
    for c0 in centers {
        let a0 = (s[nearest(f, c0)] - base0).max(0.5 * (s_max - base0));
        let start = [c0, a0, width0, base0];
        let Ok(out) = levenberg_marquardt(gaussian_model, f, s, &w, &start, &lower, &upper, &LmOptions::default())
        else {
            continue;
        };
        if best.as_ref().is_none_or(|b| out.cost < b.cost) {
            best = Some(out);
        }
    }
    let out = best.ok_or_else(|| Error::DegenerateFit("no start converged".into()))?;
    let p = &out.params;
    let cov = covariance(&out, m, weighted);
    let amp_sd = cov[1][1].sqrt();
    if !(p[1] > PEAK_SIGNIFICANCE * amp_sd) {
        return Err(Error::DegenerateFit(format!(
            "peak amplitude {:.3e} is within {PEAK_SIGNIFICANCE} sigma ({amp_sd:.3e}) of zero",
            p[1]
        )));
    }
    Ok(GaussianFit {
        center_mhz: p[0],
        amplitude: p[1],
        width_mhz: p[2],
        baseline: p[3],
        covariance: cov,
        residual_norm: out.cost.sqrt(),
        points: m,
        weighted,
        converged: out.converged,
    })
}

fn nearest(x: &[f64], v: f64) -> usize {
    (0..x.len())
        .min_by(|&a, &b| (x[a] - v).abs().total_cmp(&(x[b] - v).abs()))
        .unwrap_or(0)
}

/// Gaussian fit to the non-missing points of a decomposition inside the band.
pub fn fit_gaussian(result: &DecompositionResult, options: &GaussianOptions) -> Result<GaussianFit> {
    let (lo, hi) = options.band_mhz;
    let mut f = Vec::new();
    let mut s = Vec::new();
    let mut sigma = Vec::new();
    for (omega, value, sd) in result.valid() {
        let mhz = omega / TAU;
        if mhz >= lo && mhz <= hi {
            f.push(mhz);
            s.push(value);
            sigma.push(sd);
        }
    }
    fit_gaussian_points(&f, &s, &sigma)
}

/// Fits a exp(-(T/T2*)^p) to a coherence curve.
///
/// Requires at least eight samples and a decay to below 1/e of the first
/// sample within the record.
pub fn fit_stretched_exp(curve: &CoherenceCurve) -> Result<StretchedExpFit> {
    let samples = &curve.samples;
    let m = samples.len();
    if m < STRETCHED_MIN_POINTS {
        return Err(Error::DegenerateFit(format!(
            "{m} samples, at least {STRETCHED_MIN_POINTS} required"
        )));
    }
    let t: Vec<f64> = samples.iter().map(|s| s.t).collect();
    let c: Vec<f64> = samples.iter().map(|s| s.c).collect();
    let sigma: Vec<f64> = samples.iter().map(|s| s.sigma).collect();
    let a0 = c[0];
    if !(a0 > 0.0) {
        return Err(Error::NoDecay("first sample is not positive".into()));
    }
    let threshold = a0 / E;
    let Some(k) = c.iter().position(|&v| v <= threshold) else {
        return Err(Error::NoDecay(format!(
            "coherence never falls below {threshold:.4} (1/e of the first sample)"
        )));
    };
    // 1/e crossing, extrapolated back to an amplitude a0 at T = 0
    let t_e = if k == 0 {
        t[0]
    } else {
        let f = (c[k - 1] - threshold) / (c[k - 1] - c[k]);
        t[k - 1] + f * (t[k] - t[k - 1])
    };
    let t2_0 = t_e.max(f64::MIN_POSITIVE);
    let (w, weighted) = weights(&sigma);
    let t_max = t[m - 1].max(t2_0);
    let lower = [f64::MIN_POSITIVE, 1e-6 * t2_0, P_BOUNDS.0];
    let upper = [1.0, 1e3 * t_max, P_BOUNDS.1];
    let out = levenberg_marquardt(
        stretched_exp_model,
        &t,
        &c,
        &w,
        &[a0.min(1.0), t2_0, 2.0],
        &lower,
        &upper,
        &LmOptions::default(),
    )?;
    let mut cov = covariance(&out, m, weighted);
    // the time axis is in us; report T2* and its covariance rows in ns
    for (i, row) in cov.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v *= if i == 1 { 1e3 } else { 1.0 } * if j == 1 { 1e3 } else { 1.0 };
        }
    }
    Ok(StretchedExpFit {
        a: out.params[0],
        t2_star_ns: out.params[1] * 1e3,
        p: out.params[2],
        covariance: cov,
        residual_norm: out.cost.sqrt(),
        points: m,
        weighted,
        converged: out.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{CoherenceSample, Provenance};
    use crate::sequence::SequenceKind;

    fn gaussian_samples(c: f64, a: f64, w: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let f: Vec<f64> = (0..60).map(|i| 10.0 + 1.5 * i as f64).collect();
        let s = f.iter().map(|&x| gaussian_model(&[c, a, w, b], x).0).collect();
        (f, s)
    }

    fn ramsey_curve(a: f64, t2_us: f64, p: f64, times: &[f64]) -> CoherenceCurve {
        CoherenceCurve {
            kind: SequenceKind::Ramsey,
            n_pi: 0,
            field_b: 2.0,
            provenance: Provenance::External,
            seed: None,
            t1: None,
            samples: times
                .iter()
                .map(|&t| CoherenceSample {
                    t,
                    c: stretched_exp_model(&[a, t2_us, p], t).0,
                    sigma: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn model_gradients_match_finite_differences() {
        let p = [37.0, 2.0, 6.0, 0.3];
        let (_, g) = gaussian_model(&p, 41.0);
        for k in 0..4 {
            let mut q = p;
            let h = 1e-6 * p[k].abs().max(1.0);
            q[k] += h;
            let fd = (gaussian_model(&q, 41.0).0 - gaussian_model(&p, 41.0).0) / h;
            assert!((fd - g[k]).abs() < 1e-5, "param {k}: {fd} vs {}", g[k]);
        }
        let q = [0.5, 0.048, 1.85];
        let (_, g) = stretched_exp_model(&q, 0.03);
        for k in 0..3 {
            let mut r = q;
            let h = 1e-7 * q[k];
            r[k] += h;
            let fd = (stretched_exp_model(&r, 0.03).0 - stretched_exp_model(&q, 0.03).0) / h;
            assert!((fd - g[k]).abs() < 1e-4 * g[k].abs().max(1.0), "param {k}");
        }
    }

    #[test]
    fn exact_gaussian_is_recovered() {
        let (f, s) = gaussian_samples(38.0, 2.5, 7.0, 0.2);
        let fit = fit_gaussian_points(&f, &s, &vec![0.0; f.len()]).unwrap();
        assert!((fit.center_mhz - 38.0).abs() < 1e-6);
        assert!((fit.amplitude - 2.5).abs() < 1e-6);
        assert!((fit.width_mhz - 7.0).abs() < 1e-6);
        assert!((fit.baseline - 0.2).abs() < 1e-6);
        assert!(!fit.weighted);
    }

    #[test]
    fn flat_spectrum_is_degenerate() {
        let f: Vec<f64> = (0..20).map(|i| i as f64 + 10.0).collect();
        let s = vec![1.0; 20];
        assert!(matches!(
            fit_gaussian_points(&f, &s, &[0.1; 20]),
            Err(Error::DegenerateFit(_))
        ));
        assert!(matches!(
            fit_gaussian_points(&f[..5], &s[..5], &[0.1; 5]),
            Err(Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn stretched_exponential_recovers_ramsey_parameters() {
        let times: Vec<f64> = (1..=60).map(|i| i as f64 * 0.002).collect();
        let fit = fit_stretched_exp(&ramsey_curve(0.13, 0.048, 1.85, &times)).unwrap();
        assert!((fit.a - 0.13).abs() < 1e-6);
        assert!((fit.t2_star_ns - 48.0).abs() < 1e-4);
        assert!((fit.p - 1.85).abs() < 1e-6);
    }

    #[test]
    fn pure_exponential_gives_unit_power() {
        let times: Vec<f64> = (1..=40).map(|i| i as f64 * 0.05).collect();
        let fit = fit_stretched_exp(&ramsey_curve(0.9, 0.5, 1.0, &times)).unwrap();
        assert!((fit.p - 1.0).abs() < 0.05);
    }

    #[test]
    fn non_decaying_curve_is_rejected() {
        let times: Vec<f64> = (1..=20).map(|i| i as f64 * 0.01).collect();
        let curve = ramsey_curve(0.8, 100.0, 2.0, &times);
        assert!(matches!(fit_stretched_exp(&curve), Err(Error::NoDecay(_))));
    }
}
