//! Nuclear species constants.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_TABLE: &str = include_str!("../data/species.toml");

const ALLOWED_SPINS: [f64; 5] = [0.5, 1.5, 2.5, 3.5, 4.5];

/// One nuclear isotope of the host lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuclearSpecies {
    pub name: String,
    /// gamma / 2pi in MHz per tesla.
    #[serde(rename = "gyro_ratio_mhz_per_t")]
    pub gyro_ratio: f64,
    #[serde(rename = "spin")]
    pub spin_quantum: f64,
    /// Fraction of lattice sites.
    pub abundance: f64,
    /// Contact hyperfine constant in rad/us.
    pub hyperfine_scale: f64,
}

impl NuclearSpecies {
    pub fn validate(&self) -> Result<()> {
        if !(self.gyro_ratio > 0.0) {
            return Err(Error::Config(format!(
                "species {}: gyro ratio must be positive",
                self.name
            )));
        }
        if !ALLOWED_SPINS.contains(&self.spin_quantum) {
            return Err(Error::Config(format!(
                "species {}: spin {} is not one of 1/2..9/2",
                self.name, self.spin_quantum
            )));
        }
        if !(0.0..=1.0).contains(&self.abundance) {
            return Err(Error::Config(format!(
                "species {}: abundance {} outside [0, 1]",
                self.name, self.abundance
            )));
        }
        if !(self.hyperfine_scale >= 0.0) {
            return Err(Error::Config(format!(
                "species {}: hyperfine scale must be non-negative",
                self.name
            )));
        }
        Ok(())
    }

    /// sqrt(I(I+1)/3): rms projection of the nuclear spin on one axis.
    pub fn spin_factor(&self) -> f64 {
        (self.spin_quantum * (self.spin_quantum + 1.0) / 3.0).sqrt()
    }
}

/// Larmor frequency gamma * B in MHz (ordinary frequency).
pub fn larmor_frequency(species: &NuclearSpecies, field_b: f64) -> Result<f64> {
    if field_b < 0.0 || field_b.is_nan() {
        return Err(Error::NegativeField(field_b));
    }
    Ok(species.gyro_ratio * field_b)
}

/// Larmor angular frequency 2 pi gamma B in rad/us.
pub fn larmor_angular(species: &NuclearSpecies, field_b: f64) -> Result<f64> {
    Ok(std::f64::consts::TAU * larmor_frequency(species, field_b)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesTable {
    pub species: Vec<NuclearSpecies>,
}

impl SpeciesTable {
    /// The committed InAs table (In-115, In-113, As-75).
    pub fn inas() -> Self {
        Self::from_toml_str(DEFAULT_TABLE).expect("bundled species table is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: SpeciesTable =
            toml::from_str(text).map_err(|e| Error::Config(format!("species table: {e}")))?;
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.species.is_empty() {
            return Err(Error::Config("species table is empty".into()));
        }
        for s in &self.species {
            s.validate()?;
        }
        let total: f64 = self.species.iter().map(|s| s.abundance).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "species abundances sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&NuclearSpecies> {
        self.species.iter().find(|s| s.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s.name == name)
    }

    pub fn len(&self) -> usize {
        self.species.len()
    }

    pub fn is_empty(&self) -> bool {
        self.species.is_empty()
    }
}

impl Default for SpeciesTable {
    fn default() -> Self {
        Self::inas()
    }
}
