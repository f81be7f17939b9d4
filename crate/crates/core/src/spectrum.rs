//! Sampled one-sided noise spectral densities.
//!
//! Frequencies are angular, in rad/us, and the density S(w) carries units of
//! rad/us so that the dephasing exponent (1/pi) * int S(w) F(wT) / w^2 dw is
//! dimensionless.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPECTRUM_SCHEMA: &str = "# schema: noise-spectrum v1";
pub const SPECTRUM_HEADER: &str = "omega_rad_per_us,S_rad_per_us,component";

/// Upper edge of the default grid, 2 pi * 300 MHz.
pub const DEFAULT_OMEGA_MAX: f64 = std::f64::consts::TAU * 300.0;
pub const DEFAULT_GRID_POINTS: usize = 301;
/// Smallest upper edge a grid may have for bath synthesis, 2 pi * 120 MHz.
pub const MIN_BAND_EDGE: f64 = std::f64::consts::TAU * 120.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Parallel,
    Perpendicular,
    Total,
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Parallel => "parallel",
            Component::Perpendicular => "perpendicular",
            Component::Total => "total",
        })
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "parallel" => Ok(Component::Parallel),
            "perpendicular" => Ok(Component::Perpendicular),
            "total" => Ok(Component::Total),
            other => Err(Error::schema(
                "component",
                format!("unknown component `{other}`"),
            )),
        }
    }
}

/// `points` equally spaced frequencies on [0, omega_max].
pub fn uniform_grid(omega_max: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2, "a grid needs at least two points");
    let step = omega_max / (points - 1) as f64;
    (0..points).map(|i| i as f64 * step).collect()
}

pub fn default_grid() -> Vec<f64> {
    uniform_grid(DEFAULT_OMEGA_MAX, DEFAULT_GRID_POINTS)
}

pub(crate) fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidArgument(
            "frequency grid needs at least two points".into(),
        ));
    }
    if grid[0] < 0.0 || !grid[0].is_finite() {
        return Err(Error::InvalidArgument(
            "frequency grid must start at w >= 0".into(),
        ));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
        return Err(Error::InvalidArgument(
            "frequency grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpectrum {
    grid: Vec<f64>,
    values: Vec<f64>,
    component: Component,
}

impl NoiseSpectrum {
    pub fn new(grid: Vec<f64>, values: Vec<f64>, component: Component) -> Result<Self> {
        validate_grid(&grid)?;
        if grid.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "grid has {} points but {} values were given",
                grid.len(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "spectral density must be finite and non-negative, found {v}"
            )));
        }
        Ok(Self {
            grid,
            values,
            component,
        })
    }

    pub fn zeros(grid: Vec<f64>, component: Component) -> Result<Self> {
        let values = vec![0.0; grid.len()];
        Self::new(grid, values, component)
    }

    /// Flat density `level` over the grid.
    pub fn flat(grid: Vec<f64>, level: f64) -> Result<Self> {
        let values = vec![level; grid.len()];
        Self::new(grid, values, Component::Total)
    }

    /// Tabulates `f` on the grid.
    pub fn from_fn(grid: Vec<f64>, component: Component, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.iter().map(|&w| f(w)).collect();
        Self::new(grid, values, component)
    }

    /// Pointwise sum of a parallel and a perpendicular component.
    pub fn compose(parallel: &NoiseSpectrum, perpendicular: &NoiseSpectrum) -> Result<Self> {
        if parallel.grid != perpendicular.grid {
            return Err(Error::InvalidArgument(
                "components must share the same frequency grid".into(),
            ));
        }
        let values = parallel
            .values
            .iter()
            .zip(&perpendicular.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            grid: parallel.grid.clone(),
            values,
            component: Component::Total,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn component(&self) -> Component {
        self.component
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn omega_min(&self) -> f64 {
        self.grid[0]
    }

    pub fn omega_max(&self) -> f64 {
        self.grid[self.grid.len() - 1]
    }

    pub fn min_spacing(&self) -> f64 {
        self.grid
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Piecewise-linear interpolation; zero outside the grid.
    pub fn value_at(&self, omega: f64) -> f64 {
        let n = self.grid.len();
        if omega < self.grid[0] || omega > self.grid[n - 1] {
            return 0.0;
        }
        let j = self.grid.partition_point(|&g| g <= omega);
        if j == 0 {
            return self.values[0];
        }
        if j >= n {
            return self.values[n - 1];
        }
        let (w0, w1) = (self.grid[j - 1], self.grid[j]);
        let (s0, s1) = (self.values[j - 1], self.values[j]);
        s0 + (s1 - s0) * (omega - w0) / (w1 - w0)
    }

    /// Trapezoidal integral of S over the grid.
    pub fn integrate(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(w, s)| 0.5 * (w[1] - w[0]) * (s[0] + s[1]))
            .sum()
    }

    /// (omega, S) at the largest sample; the first one on ties.
    pub fn argmax(&self) -> (f64, f64) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (self.grid[best], self.values[best])
    }

    /// Argmax restricted to omega in [lo, hi].
    pub fn argmax_in(&self, lo: f64, hi: f64) -> Option<(f64, f64)> {
        self.grid
            .iter()
            .zip(&self.values)
            .filter(|(w, _)| **w >= lo && **w <= hi)
            .fold(None, |best: Option<(f64, f64)>, (&w, &s)| match best {
                Some((_, bs)) if bs >= s => best,
                _ => Some((w, s)),
            })
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.grid.clone(),
            self.values.iter().map(|v| v * factor).collect(),
            self.component,
        )
    }

    pub fn with_component(mut self, component: Component) -> Self {
        self.component = component;
        self
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{SPECTRUM_SCHEMA}")?;
        writeln!(out, "{SPECTRUM_HEADER}")?;
        for (w, s) in self.grid.iter().zip(&self.values) {
            writeln!(out, "{w:.10e},{s:.10e},{}", self.component)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut header_seen = false;
        let mut grid = Vec::new();
        let mut values = Vec::new();
        let mut component = None;
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                check_header(line, &["omega_rad_per_us", "S_rad_per_us", "component"])?;
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::Parse(format!(
                    "line {}: expected 3 fields, found {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            grid.push(parse_field(fields[0], "omega_rad_per_us", lineno)?);
            values.push(parse_field(fields[1], "S_rad_per_us", lineno)?);
            let c: Component = fields[2].parse()?;
            match component {
                None => component = Some(c),
                Some(prev) if prev != c => {
                    return Err(Error::schema("component", "mixed components in one file"))
                }
                _ => {}
            }
        }
        if !header_seen {
            return Err(Error::schema("omega_rad_per_us", "missing header row"));
        }
        Self::new(grid, values, component.unwrap_or(Component::Total))
    }
}

/// Checks that a CSV header begins with `expected`, naming the first
/// offending column otherwise. Extra trailing columns are reported too.
pub(crate) fn check_header(line: &str, expected: &[&str]) -> Result<Vec<String>> {
    let cols: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
    for (i, want) in expected.iter().enumerate() {
        match cols.get(i) {
            Some(got) if got == want => {}
            Some(got) => {
                return Err(Error::schema(
                    got.clone(),
                    format!("expected column `{want}` at position {}", i + 1),
                ))
            }
            None => {
                return Err(Error::schema(
                    *want,
                    format!("missing column at position {}", i + 1),
                ))
            }
        }
    }
    Ok(cols)
}

pub(crate) fn parse_field(text: &str, column: &str, lineno: usize) -> Result<f64> {
    text.trim().parse::<f64>().map_err(|_| {
        Error::Parse(format!(
            "line {}: column `{column}` holds non-numeric `{}`",
            lineno + 1,
            text.trim()
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_and_integral() {
        let s = NoiseSpectrum::new(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 0.0], Component::Total)
            .unwrap();
        assert_eq!(s.value_at(0.5), 1.0);
        assert_eq!(s.value_at(2.0), 1.0);
        assert_eq!(s.value_at(3.5), 0.0);
        assert!((s.integrate() - 3.0).abs() < 1e-15);
        assert_eq!(s.argmax(), (1.0, 2.0));
    }

    #[test]
    fn rejects_invalid_spectra() {
        assert!(NoiseSpectrum::new(vec![0.0, 0.0], vec![1.0, 1.0], Component::Total).is_err());
        assert!(NoiseSpectrum::new(vec![0.0, 1.0], vec![1.0, -1.0], Component::Total).is_err());
        assert!(NoiseSpectrum::new(vec![-1.0, 1.0], vec![1.0, 1.0], Component::Total).is_err());
        assert!(NoiseSpectrum::new(vec![0.0, 1.0], vec![1.0], Component::Total).is_err());
    }

    #[test]
    fn compose_requires_shared_grid() {
        let a = NoiseSpectrum::flat(vec![0.0, 1.0], 1.0).unwrap();
        let b = NoiseSpectrum::flat(vec![0.0, 2.0], 1.0).unwrap();
        assert!(NoiseSpectrum::compose(&a, &b).is_err());
        let t = NoiseSpectrum::compose(&a, &a).unwrap();
        assert_eq!(t.values(), &[2.0, 2.0]);
        assert_eq!(t.component(), Component::Total);
    }

    #[test]
    fn csv_round_trip_and_schema_errors() {
        let s = NoiseSpectrum::from_fn(uniform_grid(10.0, 11), Component::Parallel, |w| w * w)
            .unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = NoiseSpectrum::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.component(), Component::Parallel);
        for (a, b) in back.values().iter().zip(s.values()) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }

        let bad = "omega,S_rad_per_us,component\n0,1,total\n";
        match NoiseSpectrum::read_csv(bad.as_bytes()) {
            Err(Error::Schema { column, .. }) => assert_eq!(column, "omega"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }
}
