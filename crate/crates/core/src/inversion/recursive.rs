//! Back-substitution through the CPMG harmonic comb.
//!
//! Each (n, T) sample probes S mostly at its first comb harmonic n pi / T,
//! with odd-harmonic leakage k n pi / T weighted by 1/k^2. Solving from the
//! highest probed frequency downwards, every harmonic contribution is already
//! known (or zero beyond the cutoff) and can be subtracted.

use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::forward::CoherenceCurve;
use crate::sequence::{harmonic_weights, SequenceKind};

use super::{DecompositionResult, Method, SpectralPoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecursiveOptions {
    /// Largest odd harmonic included in the back-substitution.
    pub k_max: usize,
    /// S is taken as zero above this angular frequency, rad/us.
    pub omega_cutoff: f64,
    /// Samples whose envelope-corrected coherence falls below this are dropped.
    pub c_floor: f64,
    /// T1 divided out of every sample; falls back to the curve's own T1.
    pub t1: Option<f64>,
}

impl Default for RecursiveOptions {
    fn default() -> Self {
        Self {
            k_max: 11,
            omega_cutoff: TAU * 120.0,
            c_floor: 0.02,
            t1: None,
        }
    }
}

/// chi sample extracted from one curve point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSample {
    pub n_pi: usize,
    pub t: f64,
    pub chi: f64,
    pub sigma_chi: f64,
}

impl ChiSample {
    /// First comb harmonic n pi / T.
    pub fn omega(&self) -> f64 {
        self.n_pi as f64 * PI / self.t
    }
}

pub(crate) fn check_family(curves: &[CoherenceCurve]) -> Result<()> {
    if curves.is_empty() {
        return Err(Error::Coverage("no coherence curves supplied".into()));
    }
    let b0 = curves[0].field_b;
    for c in curves {
        if c.kind != SequenceKind::Cpmg || c.n_pi == 0 {
            return Err(Error::InvalidArgument(format!(
                "{} cannot be decomposed; only CPMG curves carry comb harmonics",
                c.label()
            )));
        }
        let same = (c.field_b - b0).abs() <= 1e-9 * b0.abs().max(1.0)
            || (c.field_b.is_nan() && b0.is_nan());
        if !same {
            return Err(Error::InvalidArgument(format!(
                "curves mix fields {b0} T and {} T",
                c.field_b
            )));
        }
    }
    Ok(())
}

/// chi = -ln(C / exp(-T/T1)) for every usable sample.
pub fn extract_chi(curves: &[CoherenceCurve], c_floor: f64, t1: Option<f64>) -> Result<Vec<ChiSample>> {
    check_family(curves)?;
    let mut out = Vec::new();
    for curve in curves {
        let t1 = t1.or(curve.t1).unwrap_or(f64::INFINITY);
        if !(t1 > 0.0) {
            return Err(Error::Config("T1 must be positive".into()));
        }
        for s in &curve.samples {
            if s.t <= 0.0 {
                continue;
            }
            let envelope = (-s.t / t1).exp();
            let pure = s.c / envelope;
            if !(pure >= c_floor) || pure <= 0.0 {
                continue;
            }
            out.push(ChiSample {
                n_pi: curve.n_pi,
                t: s.t,
                chi: -pure.ln(),
                sigma_chi: s.sigma / s.c.max(f64::MIN_POSITIVE),
            });
        }
    }
    Ok(out)
}

/// Solved values in strictly descending frequency order.
struct Solved {
    omega: Vec<f64>,
    value: Vec<f64>,
    sigma: Vec<f64>,
}

impl Solved {
    /// Linear interpolation; `None` outside the solved range.
    fn at(&self, w: f64) -> Option<(f64, f64)> {
        let n = self.omega.len();
        if n == 0 || w > self.omega[0] * (1.0 + 1e-9) || w < self.omega[n - 1] * (1.0 - 1e-9) {
            return None;
        }
        // omega is descending; j = first index with omega[j] <= w
        let j = self.omega.partition_point(|&o| o > w);
        if j < n && (self.omega[j] - w).abs() <= 1e-9 * w {
            return Some((self.value[j], self.sigma[j]));
        }
        if j == 0 || j >= n {
            let k = j.min(n - 1);
            return Some((self.value[k], self.sigma[k]));
        }
        let (hi, lo) = (j - 1, j);
        let f = (w - self.omega[lo]) / (self.omega[hi] - self.omega[lo]);
        let v = self.value[lo] + f * (self.value[hi] - self.value[lo]);
        let s = ((1.0 - f) * self.sigma[lo]).hypot(f * self.sigma[hi]);
        Some((v, s))
    }
}

/// Among estimates of one frequency, the one from the largest pulse count:
/// the comb approximation sharpens with n, so lower counts only fill gaps.
fn select_largest_n(group: Vec<SpectralPoint>) -> SpectralPoint {
    let omega = group[0].omega;
    group
        .into_iter()
        .filter(|p| !p.missing)
        .max_by_key(|p| p.n_pi)
        .unwrap_or_else(|| SpectralPoint::missing(omega))
}

/// Recursive comb decomposition of a CPMG family into S(omega).
pub fn decompose_recursive(
    curves: &[CoherenceCurve],
    options: &RecursiveOptions,
) -> Result<DecompositionResult> {
    if options.k_max.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("k_max must be odd, got {}", options.k_max)));
    }
    if !(options.omega_cutoff > 0.0) {
        return Err(Error::InvalidArgument("omega_cutoff must be positive".into()));
    }
    // a target on the cutoff itself is kept, and its harmonics are zero
    let cutoff = options.omega_cutoff * (1.0 + 1e-9);
    let mut samples: Vec<ChiSample> = extract_chi(curves, options.c_floor, options.t1)?
        .into_iter()
        .filter(|s| s.omega() <= cutoff)
        .collect();
    if samples.is_empty() {
        return Err(Error::Coverage(format!(
            "no samples with C above the floor {} below the cutoff {:.1} rad/us",
            options.c_floor, options.omega_cutoff
        )));
    }
    samples.sort_by(|a, b| b.omega().total_cmp(&a.omega()).then(a.n_pi.cmp(&b.n_pi)));

    // the weights depend only on k, so a unit spacing suffices
    let harmonics = harmonic_weights(1, 1.0, options.k_max)?;
    let w1 = harmonics[0].weight;
    let mut solved = Solved {
        omega: Vec::new(),
        value: Vec::new(),
        sigma: Vec::new(),
    };
    let mut points = Vec::with_capacity(samples.len());

    let mut i = 0;
    while i < samples.len() {
        // samples sharing one target frequency are solved together
        let omega = samples[i].omega();
        let mut j = i;
        while j < samples.len() && (samples[j].omega() - omega).abs() <= 1e-9 * omega {
            j += 1;
        }
        let mut group = Vec::with_capacity(j - i);
        for s in &samples[i..j] {
            let mut leak = 0.0;
            let mut leak_var = 0.0;
            let mut covered = true;
            for h in &harmonics[1..] {
                let wk = h.k as f64 * omega;
                if wk > cutoff {
                    break;
                }
                match solved.at(wk) {
                    Some((v, sd)) => {
                        leak += h.weight * v;
                        leak_var += (h.weight / w1 * sd).powi(2);
                    }
                    None => {
                        covered = false;
                        break;
                    }
                }
            }
            if !covered {
                group.push(SpectralPoint::missing(omega));
                continue;
            }
            let value = (s.chi / s.t - leak) / w1;
            let sigma = ((s.sigma_chi / (s.t * w1)).powi(2) + leak_var).sqrt();
            group.push(SpectralPoint {
                n_pi: s.n_pi,
                ..SpectralPoint::new(omega, value, sigma)
            });
        }
        let merged = select_largest_n(group);
        if !merged.missing {
            solved.omega.push(merged.omega);
            solved.value.push(merged.value);
            solved.sigma.push(merged.sigma);
        }
        points.push(merged);
        i = j;
    }

    let inputs = curves.iter().map(|c| c.label()).collect();
    points.reverse();
    Ok(DecompositionResult::from_points(points, Method::Recursive, inputs))
}
