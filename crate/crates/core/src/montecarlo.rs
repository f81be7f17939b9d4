//! Monte-Carlo dephasing: random-phase noise modes, exact phase integrals.
//!
//! Each realization draws b(t) = sum_m a_m cos(w_m t + theta_m) with
//! a_m = sqrt(2 S(w_m) dw / pi) and theta_m uniform. The accumulated phase
//! is linear in the mode phasors, so the per-mode sequence responses are
//! tabulated once and every realization reduces to dot products.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bath::pairwise_sum;
use crate::error::{Error, Result};
use crate::forward::{validate_times, CoherenceCurve, CoherenceSample, Provenance};
use crate::sequence::{PulseSequence, SequenceKind};
use crate::spectrum::NoiseSpectrum;

pub const MIN_REALIZATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    pub realizations: usize,
    pub seed: u64,
    /// Mode spacing in rad/us; derived from the T grid and spectrum if unset.
    pub mode_spacing: Option<f64>,
}

impl McOptions {
    pub fn new(realizations: usize, seed: u64) -> Self {
        Self {
            realizations,
            seed,
            mode_spacing: None,
        }
    }
}

/// One discrete noise mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseMode {
    pub omega: f64,
    pub amplitude: f64,
}

/// dw = min(2 pi / (10 T_max), feature / 8) with the narrowest resolvable
/// feature taken as twice the grid spacing.
pub fn default_mode_spacing(spectrum: &NoiseSpectrum, t_max: f64) -> f64 {
    let feature = 2.0 * spectrum.min_spacing();
    let recurrence = if t_max > 0.0 {
        TAU / (10.0 * t_max)
    } else {
        f64::INFINITY
    };
    recurrence.min(feature / 8.0)
}

/// Midpoint modes covering the spectrum grid.
pub fn discretize(spectrum: &NoiseSpectrum, spacing: f64) -> Result<Vec<NoiseMode>> {
    if !(spacing > 0.0) {
        return Err(Error::InvalidArgument("mode spacing must be positive".into()));
    }
    let lo = spectrum.omega_min();
    let count = ((spectrum.omega_max() - lo) / spacing).floor() as usize;
    if count < 2 {
        return Err(Error::TooFewModes(count));
    }
    Ok((0..count)
        .map(|m| {
            let omega = lo + (m as f64 + 0.5) * spacing;
            let s = spectrum.value_at(omega);
            NoiseMode {
                omega,
                amplitude: (2.0 * s * spacing / PI).sqrt(),
            }
        })
        .filter(|m| m.amplitude > 0.0)
        .collect())
}

/// Sample mean and standard error over realizations for each T.
fn aggregate(per_realization: &[Vec<f64>], n_times: usize) -> Vec<(f64, f64)> {
    let r = per_realization.len() as f64;
    (0..n_times)
        .map(|i| {
            let xs: Vec<f64> = per_realization.iter().map(|v| v[i]).collect();
            let mean = pairwise_sum(&xs) / r;
            let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
            let var = pairwise_sum(&dev) / (r - 1.0);
            (mean, (var / r).sqrt())
        })
        .collect()
}

/// Monte-Carlo coherence <cos phi> for explicit modes.
pub fn mc_coherence_modes(
    modes: &[NoiseMode],
    n_pi: usize,
    times: &[f64],
    options: &McOptions,
) -> Result<Vec<(f64, f64)>> {
    validate_times(times)?;
    if options.realizations < MIN_REALIZATIONS {
        return Err(Error::InvalidArgument(format!(
            "at least {MIN_REALIZATIONS} realizations required, got {}",
            options.realizations
        )));
    }
    if modes.is_empty() {
        return Ok(vec![(1.0, 0.0); times.len()]);
    }
    // responses[t][m] = a_m * int_0^T s(t) e^{i w_m t} dt
    let responses: Vec<Vec<Complex64>> = times
        .iter()
        .map(|&t| {
            if t == 0.0 {
                return Ok(vec![Complex64::new(0.0, 0.0); modes.len()]);
            }
            let seq = PulseSequence::for_count(n_pi, t)?;
            Ok(modes
                .iter()
                .map(|m| seq.response(m.omega) * m.amplitude)
                .collect())
        })
        .collect::<Result<_>>()?;

    let per_realization: Vec<Vec<f64>> = (0..options.realizations)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            rng.set_stream(r as u64);
            let phasors: Vec<(f64, f64)> = (0..modes.len())
                .map(|_| (TAU * rng.random::<f64>()).sin_cos())
                .collect();
            responses
                .iter()
                .map(|resp| {
                    // phi = sum_m Re(e^{i theta_m} R_m)
                    let phi: f64 = resp
                        .iter()
                        .zip(&phasors)
                        .map(|(z, (s, c))| c * z.re - s * z.im)
                        .sum();
                    phi.cos()
                })
                .collect()
        })
        .collect();
    Ok(aggregate(&per_realization, times.len()))
}

/// Monte-Carlo coherence curve for a spectrum; pure dephasing, no envelope.
pub fn mc_coherence(
    spectrum: &NoiseSpectrum,
    n_pi: usize,
    times: &[f64],
    options: &McOptions,
    field_b: f64,
) -> Result<CoherenceCurve> {
    validate_times(times)?;
    let t_max = times[times.len() - 1];
    let spacing = options
        .mode_spacing
        .unwrap_or_else(|| default_mode_spacing(spectrum, t_max));
    let modes = discretize(spectrum, spacing)?;
    let stats = mc_coherence_modes(&modes, n_pi, times, options)?;
    let kind = if n_pi == 0 {
        SequenceKind::Ramsey
    } else {
        SequenceKind::Cpmg
    };
    Ok(CoherenceCurve {
        kind,
        n_pi,
        field_b,
        provenance: Provenance::MonteCarlo,
        seed: Some(options.seed),
        t1: None,
        samples: times
            .iter()
            .zip(stats)
            .map(|(&t, (c, sigma))| CoherenceSample { t, c, sigma })
            .collect(),
    })
}
