//! Experiment configuration: one TOML file with a section per stage.
//!
//! The bath seed and field are not set inside `[bath]`; the top-level `seed`
//! and `b_tesla` keys (or their command-line flags) provide them.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use dotspec::forward::{EnvelopeParams, TimeGrid};
use dotspec::inversion::{GaussianOptions, LsqOptions, Method, RecursiveOptions};
use dotspec::spectrum::uniform_grid;
use dotspec::{BathConfig, SequenceKind, SpeciesTable};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult, StageExt};

const STAGE: &str = "config";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Fields in tesla; each stage runs once per entry.
    pub b_tesla: Vec<f64>,
    /// Species table replacing the bundled InAs constants.
    pub species_file: Option<PathBuf>,
    pub bath: BathConfig,
    pub grid: GridConfig,
    pub envelope: EnvelopeParams,
    pub forward: ForwardConfig,
    pub inversion: InversionConfig,
    pub oracle: OracleConfig,
    pub sequences: Vec<SequenceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub f_max_mhz: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardConfig {
    /// Relative Gaussian noise added to every C and reported as sigma_C.
    pub noise_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    pub method: Method,
    pub k_max: usize,
    pub omega_cutoff_mhz: f64,
    pub c_floor: f64,
    /// Overrides the T1 recorded in the curve files.
    pub t1_us: Option<f64>,
    /// Relative smoothing strength of the lsq method.
    pub lambda: f64,
    /// lsq bin centres as a uniform MHz grid.
    pub lsq_bins: BinGrid,
    pub fit_band_mhz: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinGrid {
    pub f_min_mhz: f64,
    pub f_max_mhz: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub realizations: usize,
    /// Sequence names that receive Monte-Carlo columns under `--oracle`.
    pub sequences: Vec<String>,
    /// Mode spacing in rad/us; derived from the T grid if unset.
    pub mode_spacing: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSpec {
    /// File stem; `<kind>-n<n>` if unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub kind: SequenceKind,
    pub n: usize,
    pub t_grid: TimeGrid,
    /// Whether the curve feeds the spectral decomposition.
    #[serde(default = "yes")]
    pub invert: bool,
}

fn yes() -> bool {
    true
}

impl SequenceSpec {
    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("{}-n{}", self.kind, self.n))
    }

    fn comb(n: usize) -> Self {
        Self {
            name: None,
            kind: SequenceKind::Cpmg,
            n,
            t_grid: TimeGrid::Frequency {
                f_min_mhz: 5.0,
                f_max_mhz: 120.0,
                points: 116,
            },
            invert: true,
        }
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            f_max_mhz: 300.0,
            points: 301,
        }
    }
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self { noise_rel: 0.0 }
    }
}

impl Default for InversionConfig {
    fn default() -> Self {
        let r = RecursiveOptions::default();
        Self {
            method: Method::Recursive,
            k_max: r.k_max,
            omega_cutoff_mhz: 120.0,
            c_floor: r.c_floor,
            t1_us: None,
            lambda: LsqOptions::default().lambda,
            lsq_bins: BinGrid {
                f_min_mhz: 2.0,
                f_max_mhz: 120.0,
                points: 60,
            },
            fit_band_mhz: [10.0, 100.0],
        }
    }
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            realizations: 20_000,
            sequences: vec!["cpmg-n1".into(), "cpmg-n4".into()],
            mode_spacing: None,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut sequences: Vec<SequenceSpec> = [1, 2, 4, 8].into_iter().map(SequenceSpec::comb).collect();
        sequences.push(SequenceSpec {
            name: Some("hahn-long".into()),
            kind: SequenceKind::Cpmg,
            n: 1,
            t_grid: TimeGrid::Log {
                start_us: 0.004,
                stop_us: 4.0,
                points: 400,
            },
            invert: false,
        });
        sequences.push(SequenceSpec {
            name: None,
            kind: SequenceKind::Ramsey,
            n: 0,
            t_grid: TimeGrid::Linear {
                start_us: 0.0,
                stop_us: 0.5,
                points: 201,
            },
            invert: false,
        });
        Self {
            seed: 1,
            out_dir: PathBuf::from("out"),
            b_tesla: vec![1.2, 1.6, 2.0],
            species_file: None,
            bath: BathConfig::default(),
            grid: GridConfig::default(),
            envelope: EnvelopeParams::default(),
            forward: ForwardConfig::default(),
            inversion: InversionConfig::default(),
            oracle: OracleConfig::default(),
            sequences,
        }
    }
}

impl ExperimentConfig {
    /// Parses a config file; keys left out take their defaults.
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        let value: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::config(STAGE, e.message().to_string()))?;
        if let Some(bath) = value.get("bath").and_then(|b| b.as_table()) {
            for key in ["seed", "field_b"] {
                if bath.contains_key(key) {
                    return Err(CliError::config(
                        STAGE,
                        format!("bath.{key} is set through the top-level `seed` / `b_tesla` keys"),
                    ));
                }
            }
        }
        let config: Self = value
            .try_into()
            .map_err(|e: toml::de::Error| CliError::config(STAGE, e.message().to_string()))?;
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(STAGE, path, e))?;
        let mut config = Self::from_toml_str(&text)?;
        if let Some(species) = &config.species_file {
            // relative to the config file
            if species.is_relative() {
                if let Some(dir) = path.parent() {
                    config.species_file = Some(dir.join(species));
                }
            }
        }
        Ok(config)
    }

    /// Canonical TOML without `out_dir`, which cannot affect any result.
    pub fn to_canonical_toml(&self) -> String {
        let mut value = toml::Table::try_from(self).expect("config serializes");
        value.remove("out_dir");
        if let Some(bath) = value.get_mut("bath").and_then(|b| b.as_table_mut()) {
            bath.remove("seed");
            bath.remove("field_b");
        }
        toml::to_string(&value).expect("table serializes")
    }

    /// SHA-256 of the canonical TOML, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_toml().as_bytes()))
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.b_tesla.is_empty() {
            return Err(CliError::config(STAGE, "b_tesla is empty"));
        }
        if self.b_tesla.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
            return Err(CliError::config(STAGE, "b_tesla entries must be finite and >= 0"));
        }
        self.bath_at(self.b_tesla[0])?.validate().stage(STAGE)?;
        self.envelope.validate().stage(STAGE)?;
        if !(self.grid.f_max_mhz > 0.0) || self.grid.points < 3 {
            return Err(CliError::config(STAGE, "grid needs f_max_mhz > 0 and at least 3 points"));
        }
        if !(self.forward.noise_rel >= 0.0) {
            return Err(CliError::config(STAGE, "forward.noise_rel must be >= 0"));
        }
        let inv = &self.inversion;
        if inv.k_max.is_multiple_of(2) {
            return Err(CliError::config(STAGE, "inversion.k_max must be odd"));
        }
        if !(inv.omega_cutoff_mhz > 0.0) || !(inv.c_floor > 0.0 && inv.c_floor < 1.0) {
            return Err(CliError::config(STAGE, "inversion cutoff must be > 0 and c_floor in (0, 1)"));
        }
        if inv.t1_us.is_some_and(|t| !(t > 0.0)) || !(inv.lambda >= 0.0) {
            return Err(CliError::config(STAGE, "inversion t1_us must be > 0 and lambda >= 0"));
        }
        let bins = &inv.lsq_bins;
        if !(bins.f_min_mhz > 0.0 && bins.f_max_mhz > bins.f_min_mhz) || bins.points < 3 {
            return Err(CliError::config(STAGE, "inversion.lsq_bins must be an increasing grid of >= 3 points"));
        }
        if !(inv.fit_band_mhz[1] > inv.fit_band_mhz[0]) {
            return Err(CliError::config(STAGE, "inversion.fit_band_mhz must be increasing"));
        }
        let mut names = Vec::new();
        for seq in &self.sequences {
            let name = seq.name();
            if name.is_empty() || name.contains(['/', '\\']) {
                return Err(CliError::config(STAGE, format!("invalid sequence name `{name}`")));
            }
            if names.contains(&name) {
                return Err(CliError::config(STAGE, format!("duplicate sequence name `{name}`")));
            }
            dotspec::PulseSequence::build(seq.kind, seq.n, 1.0).stage(STAGE)?;
            let times = seq.t_grid.resolve(seq.n).stage(STAGE)?;
            if times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(CliError::config(STAGE, format!("{name}: T grid must be positive and increasing")));
            }
            names.push(name);
        }
        Ok(())
    }

    pub fn species(&self) -> CliResult<SpeciesTable> {
        match &self.species_file {
            Some(path) => SpeciesTable::load(path).stage(STAGE),
            None => Ok(SpeciesTable::inas()),
        }
    }

    /// Bath parameters at one field with the run seed.
    pub fn bath_at(&self, field_b: f64) -> CliResult<BathConfig> {
        let mut bath = self.bath.clone().at_field(field_b).with_seed(self.seed);
        bath.species = self.species()?;
        Ok(bath)
    }

    pub fn spectral_grid(&self) -> Vec<f64> {
        uniform_grid(TAU * self.grid.f_max_mhz, self.grid.points)
    }

    pub fn recursive_options(&self) -> RecursiveOptions {
        RecursiveOptions {
            k_max: self.inversion.k_max,
            omega_cutoff: TAU * self.inversion.omega_cutoff_mhz,
            c_floor: self.inversion.c_floor,
            t1: self.inversion.t1_us,
        }
    }

    pub fn lsq_options(&self) -> LsqOptions {
        LsqOptions {
            lambda: self.inversion.lambda,
            c_floor: self.inversion.c_floor,
            t1: self.inversion.t1_us,
            max_iterations: None,
        }
    }

    /// lsq bin centres in rad/us.
    pub fn lsq_centers(&self) -> Vec<f64> {
        let b = &self.inversion.lsq_bins;
        (0..b.points)
            .map(|i| TAU * (b.f_min_mhz + (b.f_max_mhz - b.f_min_mhz) * i as f64 / (b.points - 1) as f64))
            .collect()
    }

    pub fn gaussian_options(&self) -> GaussianOptions {
        GaussianOptions {
            band_mhz: (self.inversion.fit_band_mhz[0], self.inversion.fit_band_mhz[1]),
        }
    }
}
