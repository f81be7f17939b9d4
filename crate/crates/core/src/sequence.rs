//! Ramsey and CPMG pulse timelines and their filter functions.
//!
//! Pulses are instantaneous. The filter function is normalised as
//! F(wT) = (w^2 / 2) |int_0^T s(t) e^{iwt} dt|^2, so that the dephasing
//! exponent reads chi = (1/pi) int_0^inf S(w) F(wT) / w^2 dw and a white
//! spectrum S0 gives chi = S0 T / 2 for every sequence.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::NoiseSpectrum;

/// |cos(z / 2n)| below which the closed form is treated as 0/0.
pub const SINGULAR_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceKind {
    Ramsey,
    Cpmg,
}

impl fmt::Display for SequenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SequenceKind::Ramsey => "ramsey",
            SequenceKind::Cpmg => "cpmg",
        })
    }
}

impl FromStr for SequenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ramsey" => Ok(SequenceKind::Ramsey),
            "cpmg" | "hahn" => Ok(SequenceKind::Cpmg),
            other => Err(Error::Parse(format!("unknown sequence kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    kind: SequenceKind,
    n_pi: usize,
    total_time: f64,
    pi_times: Vec<f64>,
}

impl PulseSequence {
    /// pi/2 - (pi)^n - pi/2 with pulses at t_j = T (2j - 1) / (2n).
    pub fn build(kind: SequenceKind, n_pi: usize, total_time: f64) -> Result<Self> {
        if !(total_time > 0.0) || !total_time.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "total time must be positive, got {total_time}"
            )));
        }
        match (kind, n_pi) {
            (SequenceKind::Ramsey, n) if n > 0 => {
                return Err(Error::InvalidArgument(format!(
                    "a Ramsey sequence has no pi pulses, got n = {n}"
                )))
            }
            (SequenceKind::Cpmg, 0) => {
                return Err(Error::InvalidArgument(
                    "a CPMG sequence needs at least one pi pulse".into(),
                ))
            }
            _ => {}
        }
        let n = n_pi as f64;
        let pi_times = (1..=n_pi)
            .map(|j| total_time * (2.0 * j as f64 - 1.0) / (2.0 * n))
            .collect();
        Ok(Self {
            kind,
            n_pi,
            total_time,
            pi_times,
        })
    }

    pub fn ramsey(total_time: f64) -> Result<Self> {
        Self::build(SequenceKind::Ramsey, 0, total_time)
    }

    pub fn cpmg(n_pi: usize, total_time: f64) -> Result<Self> {
        Self::build(SequenceKind::Cpmg, n_pi, total_time)
    }

    /// Same kind and pulse count, `n_pi == 0` meaning Ramsey.
    pub fn for_count(n_pi: usize, total_time: f64) -> Result<Self> {
        if n_pi == 0 {
            Self::ramsey(total_time)
        } else {
            Self::cpmg(n_pi, total_time)
        }
    }

    pub fn kind(&self) -> SequenceKind {
        self.kind
    }

    pub fn n_pi(&self) -> usize {
        self.n_pi
    }

    pub fn total_time(&self) -> f64 {
        self.total_time
    }

    pub fn pi_times(&self) -> &[f64] {
        &self.pi_times
    }

    /// Inter-pulse spacing T / n (T for Ramsey).
    pub fn spacing(&self) -> f64 {
        self.total_time / self.n_pi.max(1) as f64
    }

    /// Segment boundaries 0, t_1, ..., t_n, T.
    pub fn boundaries(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.n_pi + 2);
        b.push(0.0);
        b.extend_from_slice(&self.pi_times);
        b.push(self.total_time);
        b
    }

    /// Toggling-frame sign s(t): +1 until the first pi pulse, flipping at each.
    pub fn switching_value(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.total_time).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                total: self.total_time,
            });
        }
        let flips = self.pi_times.partition_point(|&tj| tj <= t);
        Ok(if flips % 2 == 0 { 1.0 } else { -1.0 })
    }

    /// int_0^T s(t) e^{iwt} dt by exact per-segment integration.
    pub fn response(&self, omega: f64) -> Complex64 {
        let b = self.boundaries();
        let mut acc = Complex64::new(0.0, 0.0);
        let mut sign = 1.0;
        for w in b.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            let half = 0.5 * (t1 - t0);
            let mid = 0.5 * (t0 + t1);
            // (e^{iw t1} - e^{iw t0}) / (iw) = (2 / w) sin(w half) e^{iw mid}
            let amp = if omega == 0.0 {
                2.0 * half
            } else {
                2.0 * (omega * half).sin() / omega
            };
            acc += Complex64::from_polar(sign * amp, omega * mid);
            sign = -sign;
        }
        acc
    }

    /// Filter function by the segment sum; finite for every w >= 0.
    pub fn filter_value(&self, omega: f64) -> f64 {
        let b = self.boundaries();
        let mut acc = Complex64::new(0.0, 0.0);
        let mut sign = 1.0;
        for w in b.windows(2) {
            let half = 0.5 * (w[1] - w[0]);
            let mid = 0.5 * (w[0] + w[1]);
            acc += Complex64::from_polar(sign * 2.0 * (omega * half).sin(), omega * mid);
            sign = -sign;
        }
        0.5 * acc.norm_sqr()
    }

    /// F(wT) / w^2 with the w -> 0 limit filled in.
    pub fn filter_over_omega2(&self, omega: f64) -> f64 {
        if omega == 0.0 {
            return if self.n_pi == 0 {
                0.5 * self.total_time * self.total_time
            } else {
                0.0
            };
        }
        filter_fast(self.n_pi, omega * self.total_time) / (omega * omega)
    }
}

/// Closed-form filter in z = wT: Ramsey 2 sin^2(z/2); CPMG-n
/// 8 sin^4(z/4n) / cos^2(z/2n) times sin^2(z/2) (n even) or cos^2(z/2) (n odd).
pub fn filter_closed_form(n_pi: usize, z: f64) -> Result<f64> {
    if n_pi == 0 {
        let s = (0.5 * z).sin();
        return Ok(2.0 * s * s);
    }
    let n = n_pi as f64;
    let c = (z / (2.0 * n)).cos();
    if c.abs() < SINGULAR_THRESHOLD {
        return Err(Error::SingularPoint(z));
    }
    let s = (z / (4.0 * n)).sin();
    let parity = if n_pi.is_multiple_of(2) {
        (0.5 * z).sin()
    } else {
        (0.5 * z).cos()
    };
    Ok(8.0 * s.powi(4) * parity * parity / (c * c))
}

/// Closed form where it is regular, segment sum at its removable singularities.
pub fn filter_fast(n_pi: usize, z: f64) -> f64 {
    match filter_closed_form(n_pi, z) {
        Ok(f) => f,
        Err(_) => PulseSequence::for_count(n_pi, 1.0)
            .expect("unit-time sequence is valid")
            .filter_value(z),
    }
}

/// Comb harmonic of a CPMG filter: frequency k pi / tau and weight 4 / (pi^2 k^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Harmonic {
    pub k: usize,
    pub omega: f64,
    pub weight: f64,
}

/// Odd harmonics k <= k_max of the square-wave switching function.
///
/// In the comb approximation chi(T) = T * sum_k weight_k * S(omega_k); the
/// weights sum to 1/2 as k_max grows, reproducing chi = S0 T / 2 for white
/// noise.
pub fn harmonic_weights(n_pi: usize, tau: f64, k_max: usize) -> Result<Vec<Harmonic>> {
    if n_pi < 1 {
        return Err(Error::InvalidArgument(
            "harmonic weights need at least one pi pulse".into(),
        ));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument("pulse spacing must be positive".into()));
    }
    if k_max.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("k_max must be odd, got {k_max}")));
    }
    Ok((1..=k_max)
        .step_by(2)
        .map(|k| {
            let kf = k as f64;
            Harmonic {
                k,
                omega: kf * PI / tau,
                weight: 4.0 / (PI * PI * kf * kf),
            }
        })
        .collect())
}

/// Comb-approximated dephasing exponent T * sum_k w_k S(k pi / tau).
pub fn comb_chi(spectrum: &NoiseSpectrum, seq: &PulseSequence, k_max: usize) -> Result<f64> {
    let harmonics = harmonic_weights(seq.n_pi(), seq.spacing(), k_max)?;
    Ok(seq.total_time()
        * harmonics
            .iter()
            .map(|h| h.weight * spectrum.value_at(h.omega))
            .sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn pulse_times() {
        let hahn = PulseSequence::cpmg(1, 1.0).unwrap();
        assert_eq!(hahn.pi_times(), &[0.5]);
        let c4 = PulseSequence::cpmg(4, 1.0).unwrap();
        assert_eq!(c4.pi_times(), &[0.125, 0.375, 0.625, 0.875]);
        assert!((c4.spacing() - 0.25).abs() < 1e-15);
        let r = PulseSequence::ramsey(0.05).unwrap();
        assert!(r.pi_times().is_empty());
    }

    #[test]
    fn build_rejects_inconsistent_requests() {
        assert!(PulseSequence::build(SequenceKind::Ramsey, 2, 1.0).is_err());
        assert!(PulseSequence::build(SequenceKind::Cpmg, 0, 1.0).is_err());
        assert!(PulseSequence::build(SequenceKind::Cpmg, 1, 0.0).is_err());
        assert!(PulseSequence::build(SequenceKind::Cpmg, 1, -1.0).is_err());
    }

    #[test]
    fn switching_function() {
        let hahn = PulseSequence::cpmg(1, 2.0).unwrap();
        assert_eq!(hahn.switching_value(0.5).unwrap(), 1.0);
        assert_eq!(hahn.switching_value(1.5).unwrap(), -1.0);
        let c2 = PulseSequence::cpmg(2, 1.0).unwrap();
        assert_eq!(c2.switching_value(0.5).unwrap(), -1.0);
        assert_eq!(c2.switching_value(0.9).unwrap(), 1.0);
        assert!(matches!(
            c2.switching_value(1.5),
            Err(Error::TimeOutOfRange { .. })
        ));
        assert!(c2.switching_value(-0.1).is_err());
    }

    #[test]
    fn filter_anchor_values() {
        let r = PulseSequence::ramsey(1.0).unwrap();
        assert!(close(r.filter_value(PI), 2.0, 1e-14));
        let hahn = PulseSequence::cpmg(1, 1.0).unwrap();
        assert!(close(hahn.filter_value(2.0 * PI), 8.0, 1e-14));
        assert!(close(filter_closed_form(1, 2.0 * PI).unwrap(), 8.0, 1e-14));
        assert!(filter_closed_form(0, 2.0 * PI).unwrap() < 1e-30);
        let c2 = PulseSequence::cpmg(2, 1.0).unwrap();
        let z = 8.0 * PI / 3.0;
        assert!(close(filter_closed_form(2, z).unwrap(), c2.filter_value(z), 1e-10));
    }

    #[test]
    fn comb_peak_is_finite_limit() {
        // z = 4 pi is a removable singularity of the CPMG-4 closed form
        let c4 = PulseSequence::cpmg(4, 1.0).unwrap();
        let z0 = 4.0 * PI;
        assert!(matches!(filter_closed_form(4, z0), Err(Error::SingularPoint(_))));
        let at = c4.filter_value(z0);
        assert!(at.is_finite());
        let eps = 1e-3;
        let left = filter_closed_form(4, z0 - eps).unwrap();
        let right = filter_closed_form(4, z0 + eps).unwrap();
        assert!(close(at, 0.5 * (left + right), 1e-5), "{at} {left} {right}");
        assert_eq!(filter_fast(4, z0), at);
    }

    #[test]
    fn response_matches_filter() {
        let c8 = PulseSequence::cpmg(8, 0.3).unwrap();
        for &w in &[0.1, 3.0, 50.0, 500.0] {
            let r = c8.response(w);
            assert!(close(0.5 * w * w * r.norm_sqr(), c8.filter_value(w), 1e-10));
        }
    }

    #[test]
    fn static_noise_rejection() {
        let r = PulseSequence::ramsey(1.0).unwrap();
        assert_eq!(r.filter_over_omega2(0.0), 0.5);
        for n in [1, 2, 4, 8] {
            let c = PulseSequence::cpmg(n, 1.0).unwrap();
            assert_eq!(c.filter_value(0.0), 0.0);
            let mut prev = f64::INFINITY;
            for w in [1e-1, 1e-2, 1e-3] {
                let ratio = c.filter_value(w) / r.filter_value(w);
                assert!(ratio < prev);
                prev = ratio;
            }
            assert!(prev < 1e-6);
        }
    }

    #[test]
    fn harmonic_weight_values() {
        let h = harmonic_weights(1, 0.5, 1).unwrap();
        assert_eq!(h.len(), 1);
        assert!(close(h[0].omega, 2.0 * PI, 1e-15));
        assert!(close(h[0].weight, 4.0 / (PI * PI), 1e-15));
        let h = harmonic_weights(4, 0.25, 5).unwrap();
        assert!(close(h[1].weight / h[0].weight, 1.0 / 9.0, 1e-14));
        assert!(close(h[2].weight / h[0].weight, 1.0 / 25.0, 1e-14));
        let total: f64 = harmonic_weights(1, 1.0, 200_001)
            .unwrap()
            .iter()
            .map(|h| h.weight)
            .sum();
        assert!((total - 0.5).abs() < 1e-5);
        assert!(harmonic_weights(1, 1.0, 4).is_err());
        assert!(harmonic_weights(0, 1.0, 3).is_err());
    }
}
