//! Decoherence of a quantum-dot electron spin in a strained nuclear-spin bath
//! under Ramsey and CPMG sequences, and reconstruction of the noise spectrum
//! from families of coherence curves.

// `!(x > 0.0)` is the idiom for rejecting NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod bath;
pub mod error;
pub mod forward;
pub mod inversion;
pub mod montecarlo;
pub mod quadrature;
pub mod sequence;
pub mod species;
pub mod spectrum;

pub use bath::{
    sample_bath, synthesize_parallel_spectrum, synthesize_perpendicular_spectrum,
    synthesize_spectra, BathConfig, BathSample, NucleusRecord,
};
pub use error::{Error, Result};
pub use forward::{
    chi_integral, coherence_curve, CoherenceCurve, CoherenceSample, EnvelopeParams, Provenance,
    TimeGrid,
};
pub use montecarlo::{mc_coherence, McOptions};
pub use sequence::{filter_closed_form, harmonic_weights, PulseSequence, SequenceKind};
pub use species::{larmor_frequency, NuclearSpecies, SpeciesTable};
pub use spectrum::{Component, NoiseSpectrum};
