//! Microscopic nuclear-spin bath and the Overhauser noise spectra it produces.
//!
//! The parallel component is a coupling-weighted sum of narrow peaks at the
//! first and second nuclear Larmor harmonics, each nucleus shifted by a
//! relative strain offset. The perpendicular component is a zero-centred
//! Lorentzian.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::{validate_grid, Component, NoiseSpectrum, MIN_BAND_EDGE};
use crate::species::{larmor_angular, SpeciesTable};

/// Largest grid-clipped power fraction accepted by the parallel synthesis.
pub const CLIP_TOLERANCE: f64 = 1e-6;

const KERNEL_REACH: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BathConfig {
    #[serde(skip)]
    pub species: SpeciesTable,
    pub n_nuclei: usize,
    /// External field in tesla.
    pub field_b: f64,
    /// Relative Gaussian spread sigma/f of each nucleus' precession frequency.
    pub strain_width: f64,
    /// Weights of the first and second Larmor harmonics.
    pub harmonic_weights: [f64; 2],
    /// Sum of squared couplings, rad^2/us^2.
    pub hyperfine_variance: f64,
    /// Radius of the sampled region in units of the wavefunction length.
    pub envelope_extent: f64,
    /// Zero-frequency perpendicular density, rad/us.
    pub perp_amplitude: f64,
    /// Lorentzian half-width of the perpendicular density, rad/us.
    pub perp_cutoff: f64,
    /// Binning-kernel standard deviation, rad/us. Twice the grid spacing if unset.
    pub kernel_width: Option<f64>,
    pub seed: u64,
}

impl Default for BathConfig {
    fn default() -> Self {
        Self {
            species: SpeciesTable::inas(),
            n_nuclei: 40_000,
            field_b: 2.0,
            strain_width: 0.35,
            harmonic_weights: [0.0, 1.0],
            hyperfine_variance: 22_000.0,
            envelope_extent: 1.5,
            perp_amplitude: 5.5,
            perp_cutoff: 15.0,
            kernel_width: None,
            seed: 1,
        }
    }
}

impl BathConfig {
    pub fn at_field(mut self, field_b: f64) -> Self {
        self.field_b = field_b;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.species.validate()?;
        if self.n_nuclei < 1 {
            return Err(Error::Config("n_nuclei must be at least 1".into()));
        }
        if !(self.field_b >= 0.0) {
            return Err(Error::NegativeField(self.field_b));
        }
        if !(self.strain_width >= 0.0) {
            return Err(Error::Config("strain_width must be non-negative".into()));
        }
        if self.harmonic_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("harmonic weights must be non-negative".into()));
        }
        if self.harmonic_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("harmonic weights must not all vanish".into()));
        }
        if !(self.hyperfine_variance >= 0.0) {
            return Err(Error::Config("hyperfine_variance must be non-negative".into()));
        }
        if !(self.envelope_extent > 0.0) {
            return Err(Error::Config("envelope_extent must be positive".into()));
        }
        if !(self.perp_amplitude >= 0.0) {
            return Err(Error::Config("perp_amplitude must be non-negative".into()));
        }
        if !(self.perp_cutoff > 0.0) {
            return Err(Error::Config("perp_cutoff must be positive".into()));
        }
        if let Some(k) = self.kernel_width {
            if !(k > 0.0) {
                return Err(Error::Config("kernel_width must be positive".into()));
            }
        }
        Ok(())
    }

    /// Larmor angular frequency of a species at the configured field.
    pub fn larmor_angular(&self, species: &str) -> Result<f64> {
        let s = self
            .species
            .get(species)
            .ok_or_else(|| Error::Config(format!("unknown species {species}")))?;
        larmor_angular(s, self.field_b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NucleusRecord {
    pub species: usize,
    /// Hyperfine coupling, rad/us.
    pub coupling: f64,
    /// Precession frequency at harmonics k = 1, 2 in rad/us.
    pub frequencies: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BathSample {
    pub records: Vec<NucleusRecord>,
    /// Harmonic weights normalised to unit sum.
    pub harmonic_weights: [f64; 2],
    pub kernel_width: Option<f64>,
}

impl BathSample {
    pub fn empty() -> Self {
        Self {
            records: Vec::new(),
            harmonic_weights: [0.0, 1.0],
            kernel_width: None,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_power(&self) -> f64 {
        pairwise_sum(&self.records.iter().map(|r| r.coupling * r.coupling).collect::<Vec<_>>())
    }

    /// Fraction of nuclei belonging to each species index.
    pub fn species_fractions(&self, n_species: usize) -> Vec<f64> {
        let mut counts = vec![0usize; n_species];
        for r in &self.records {
            counts[r.species] += 1;
        }
        let n = self.records.len().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }
}

/// Draws the per-nucleus couplings and precession frequencies.
pub fn sample_bath(config: &BathConfig) -> Result<BathSample> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let species = &config.species.species;
    let mut cumulative = Vec::with_capacity(species.len());
    let mut acc = 0.0;
    for s in species {
        acc += s.abundance;
        cumulative.push(acc);
    }
    let larmor: Vec<f64> = species
        .iter()
        .map(|s| larmor_angular(s, config.field_b))
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(config.n_nuclei);
    for _ in 0..config.n_nuclei {
        let u: f64 = rng.random();
        let idx = cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(species.len() - 1);
        // uniform position in a ball, Gaussian wavefunction density
        let radius = config.envelope_extent * rng.random::<f64>().cbrt();
        let envelope = (-radius * radius).exp();
        let offset: f64 = rng.sample(StandardNormal);
        let shift = 1.0 + config.strain_width * offset;
        let base = (larmor[idx] * shift).abs();
        records.push(NucleusRecord {
            species: idx,
            coupling: species[idx].hyperfine_scale * species[idx].spin_factor() * envelope,
            frequencies: [base, 2.0 * base],
        });
    }

    let raw = pairwise_sum(&records.iter().map(|r| r.coupling * r.coupling).collect::<Vec<_>>());
    let scale = if raw > 0.0 {
        (config.hyperfine_variance / raw).sqrt()
    } else {
        0.0
    };
    for r in &mut records {
        r.coupling *= scale;
    }

    let wsum: f64 = config.harmonic_weights.iter().sum();
    Ok(BathSample {
        records,
        harmonic_weights: config.harmonic_weights.map(|w| w / wsum),
        kernel_width: config.kernel_width,
    })
}

fn grid_spacing(grid: &[f64]) -> f64 {
    grid.windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Coupling-squared weighted Larmor-harmonic peaks, each broadened by a
/// unit-area Gaussian kernel folded at w = 0.
pub fn synthesize_parallel_spectrum(bath: &BathSample, grid: &[f64]) -> Result<NoiseSpectrum> {
    validate_grid(grid)?;
    let lo = grid[0];
    let hi = grid[grid.len() - 1];
    if lo > 1e-12 || hi < MIN_BAND_EDGE * (1.0 - 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "grid [{lo}, {hi}] rad/us must cover [0, {MIN_BAND_EDGE:.3}] rad/us"
        )));
    }
    let sigma = bath.kernel_width.unwrap_or(2.0 * grid_spacing(grid));
    let norm = 1.0 / (sigma * TAU.sqrt());
    let reach = KERNEL_REACH * sigma;
    let mut values = vec![0.0; grid.len()];
    let mut clipped = 0.0;
    let mut worst = (0.0, 0.0);

    for r in &bath.records {
        let a2 = r.coupling * r.coupling;
        for (k, &center) in r.frequencies.iter().enumerate() {
            let weight = a2 * bath.harmonic_weights[k];
            if weight == 0.0 {
                continue;
            }
            let inside = normal_cdf((hi - center) / sigma) - normal_cdf((lo - center) / sigma)
                + normal_cdf((hi + center) / sigma)
                - normal_cdf((lo + center) / sigma);
            let lost = weight * (1.0 - inside).max(0.0);
            clipped += lost;
            if lost > worst.1 {
                worst = (center, lost);
            }
            for mirror in [center, -center] {
                let start = grid.partition_point(|&w| w < mirror - reach);
                let end = grid.partition_point(|&w| w <= mirror + reach);
                for j in start..end {
                    let x = (grid[j] - mirror) / sigma;
                    values[j] += weight * norm * (-0.5 * x * x).exp();
                }
            }
        }
    }

    let total = bath.total_power();
    if total > 0.0 && clipped / total > CLIP_TOLERANCE {
        return Err(Error::ClippedPower {
            fraction: clipped / total,
            detail: format!(
                "largest loss from a peak at {:.3} rad/us outside [{lo}, {hi}]",
                worst.0
            ),
        });
    }
    NoiseSpectrum::new(grid.to_vec(), values, Component::Parallel)
}

/// Lorentzian S_perp(w) = amplitude / (1 + (w / cutoff)^2).
pub fn synthesize_perpendicular_spectrum(
    config: &BathConfig,
    grid: &[f64],
) -> Result<NoiseSpectrum> {
    config.validate()?;
    let (amp, cut) = (config.perp_amplitude, config.perp_cutoff);
    NoiseSpectrum::from_fn(grid.to_vec(), Component::Perpendicular, |w| {
        amp / (1.0 + (w / cut).powi(2))
    })
}

/// Samples the bath and returns (parallel, perpendicular, total) spectra.
pub fn synthesize_spectra(
    config: &BathConfig,
    grid: &[f64],
) -> Result<(NoiseSpectrum, NoiseSpectrum, NoiseSpectrum)> {
    let bath = sample_bath(config)?;
    let par = synthesize_parallel_spectrum(&bath, grid)?;
    let perp = synthesize_perpendicular_spectrum(config, grid)?;
    let total = NoiseSpectrum::compose(&par, &perp)?;
    Ok((par, perp, total))
}

/// Order-fixed pairwise summation.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 32 => xs.iter().sum(),
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}
