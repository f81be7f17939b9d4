//! Reconstruction of S(omega) from CPMG coherence families, and parametric fits.

mod fit;
mod lm;
mod lsq;
mod recursive;

use std::f64::consts::TAU;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::{check_header, parse_field};

pub use fit::{
    fit_gaussian, fit_gaussian_points, fit_stretched_exp, gaussian_model, stretched_exp_model,
    GaussianFit, GaussianOptions, StretchedExpFit,
};
pub use lm::{levenberg_marquardt, LmOptions, LmOutcome};
pub use lsq::{decompose_lsq, design_matrix, nnls, LsqOptions};
pub use recursive::{decompose_recursive, extract_chi, ChiSample, RecursiveOptions};

pub const DECOMPOSITION_SCHEMA: &str = "# schema: decomposition v1";
pub const DECOMPOSITION_COLUMNS: [&str; 3] = ["f_MHz", "S_rad_per_us", "sigma_S"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Recursive,
    Lsq,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Recursive => "recursive",
            Method::Lsq => "lsq",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "recursive" => Ok(Method::Recursive),
            "lsq" => Ok(Method::Lsq),
            other => Err(Error::schema("method", format!("unknown method `{other}`"))),
        }
    }
}

/// One reconstructed frequency before assembly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SpectralPoint {
    pub omega: f64,
    pub value: f64,
    pub sigma: f64,
    /// Pulse count the estimate came from; 0 when not from a single curve.
    pub n_pi: usize,
    pub missing: bool,
}

impl SpectralPoint {
    pub fn new(omega: f64, value: f64, sigma: f64) -> Self {
        Self {
            omega,
            value,
            sigma,
            n_pi: 0,
            missing: false,
        }
    }

    pub fn missing(omega: f64) -> Self {
        Self {
            omega,
            value: f64::NAN,
            sigma: f64::NAN,
            n_pi: 0,
            missing: true,
        }
    }
}

/// Reconstructed spectrum on a strictly increasing angular-frequency grid.
///
/// `s_hat` is clipped at zero; `pre_clip` keeps the raw estimates. Missing
/// points carry NaN in all value columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionResult {
    pub grid: Vec<f64>,
    pub s_hat: Vec<f64>,
    pub sigma_s: Vec<f64>,
    pub pre_clip: Vec<f64>,
    pub missing: Vec<bool>,
    pub method: Method,
    pub inputs: Vec<String>,
}

impl DecompositionResult {
    pub(crate) fn from_points(points: Vec<SpectralPoint>, method: Method, inputs: Vec<String>) -> Self {
        let mut r = Self {
            grid: Vec::with_capacity(points.len()),
            s_hat: Vec::with_capacity(points.len()),
            sigma_s: Vec::with_capacity(points.len()),
            pre_clip: Vec::with_capacity(points.len()),
            missing: Vec::with_capacity(points.len()),
            method,
            inputs,
        };
        for p in points {
            r.grid.push(p.omega);
            r.pre_clip.push(p.value);
            r.s_hat.push(if p.missing { f64::NAN } else { p.value.max(0.0) });
            r.sigma_s.push(p.sigma);
            r.missing.push(p.missing);
        }
        r
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Grid in MHz.
    pub fn frequencies_mhz(&self) -> Vec<f64> {
        self.grid.iter().map(|w| w / TAU).collect()
    }

    /// Non-missing (omega, S, sigma) triples.
    pub fn valid(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.len())
            .filter(|&i| !self.missing[i])
            .map(|i| (self.grid[i], self.s_hat[i], self.sigma_s[i]))
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    /// Copy with S and sigma multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut r = self.clone();
        for v in r.s_hat.iter_mut().chain(&mut r.sigma_s).chain(&mut r.pre_clip) {
            *v *= factor;
        }
        r
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.len();
        if [self.s_hat.len(), self.sigma_s.len(), self.pre_clip.len(), self.missing.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::InvalidArgument("decomposition columns differ in length".into()));
        }
        if self.grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("decomposition grid not strictly increasing".into()));
        }
        for i in 0..n {
            if self.missing[i] {
                continue;
            }
            if !(self.s_hat[i] >= 0.0) || !(self.sigma_s[i] >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "point {i}: S = {}, sigma = {}",
                    self.s_hat[i], self.sigma_s[i]
                )));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{DECOMPOSITION_SCHEMA}")?;
        writeln!(out, "# method: {}", self.method)?;
        writeln!(out, "# inputs: {}", self.inputs.join(";"))?;
        writeln!(out, "{}", DECOMPOSITION_COLUMNS.join(","))?;
        for i in 0..self.len() {
            let f = self.grid[i] / TAU;
            if self.missing[i] {
                writeln!(out, "{f:.10e},nan,nan")?;
            } else {
                writeln!(out, "{f:.10e},{:.10e},{:.10e}", self.s_hat[i], self.sigma_s[i])?;
            }
        }
        Ok(())
    }

    /// Reads the CSV form; `pre_clip` is restored as `s_hat`.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut method = Method::Recursive;
        let mut inputs = Vec::new();
        let mut header_seen = false;
        let mut points = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((key, value)) = meta.split_once(':') {
                    match key.trim() {
                        "method" => method = value.parse()?,
                        "inputs" => {
                            inputs = value
                                .split(';')
                                .map(|s| s.trim().to_string())
                                .filter(|s| !s.is_empty())
                                .collect()
                        }
                        _ => {}
                    }
                }
                continue;
            }
            if !header_seen {
                let cols = check_header(line, &DECOMPOSITION_COLUMNS)?;
                if let Some(extra) = cols.get(DECOMPOSITION_COLUMNS.len()) {
                    return Err(Error::schema(extra.clone(), "unexpected column"));
                }
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
            let f = parse_field(fields[0], "f_MHz", lineno)?;
            let s = parse_field(fields[1], "S_rad_per_us", lineno)?;
            let sigma = parse_field(fields[2], "sigma_S", lineno)?;
            points.push(if s.is_nan() {
                SpectralPoint::missing(f * TAU)
            } else {
                SpectralPoint::new(f * TAU, s, sigma)
            });
        }
        if !header_seen {
            return Err(Error::schema("f_MHz", "missing header row"));
        }
        let r = Self::from_points(points, method, inputs);
        r.validate()?;
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(omega: f64, value: f64, sigma: f64) -> SpectralPoint {
        SpectralPoint::new(omega, value, sigma)
    }

    #[test]
    fn clipping_keeps_raw_values() {
        let r = DecompositionResult::from_points(
            vec![pt(1.0, -0.5, 0.2), pt(2.0, 0.5, 0.2), SpectralPoint::missing(3.0)],
            Method::Recursive,
            vec![],
        );
        assert_eq!(r.s_hat[0], 0.0);
        assert_eq!(r.pre_clip[0], -0.5);
        assert_eq!(r.missing_count(), 1);
        r.validate().unwrap();
    }

    #[test]
    fn csv_round_trip() {
        let r = DecompositionResult::from_points(
            vec![pt(TAU * 10.0, 1.5, 0.25), SpectralPoint::missing(TAU * 20.0)],
            Method::Lsq,
            vec!["cpmg-1".into(), "cpmg-2".into()],
        );
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("f_MHz,S_rad_per_us,sigma_S"));
        let back = DecompositionResult::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.method, Method::Lsq);
        assert_eq!(back.inputs, r.inputs);
        assert!((back.grid[0] - r.grid[0]).abs() < 1e-9);
        assert!(back.missing[1]);
    }

    #[test]
    fn csv_schema_errors_name_the_column() {
        let bad = "f_MHz,S,sigma_S\n1,2,3\n";
        match DecompositionResult::read_csv(bad.as_bytes()) {
            Err(Error::Schema { column, .. }) => assert_eq!(column, "S"),
            other => panic!("{other:?}"),
        }
        let extra = "f_MHz,S_rad_per_us,sigma_S,x\n";
        assert!(matches!(
            DecompositionResult::read_csv(extra.as_bytes()),
            Err(Error::Schema { .. })
        ));
    }
}
