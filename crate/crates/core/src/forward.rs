//! Coherence functions from a noise spectrum by filter-function quadrature.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, integrate_panels};
use crate::sequence::{filter_fast, PulseSequence, SequenceKind};
use crate::spectrum::{check_header, parse_field, NoiseSpectrum};

pub const CURVE_SCHEMA: &str = "# schema: coherence-curve v1";
pub const CURVE_COLUMNS: [&str; 3] = ["T_us", "C", "sigma_C"];
pub const ORACLE_COLUMNS: [&str; 2] = ["C_mc", "sigma_C_mc"];

pub const CHI_REL_TOL: f64 = 1e-6;
/// Largest fraction of the chi integrand mass allowed outside the grid.
pub const BAND_CLIP_LIMIT: f64 = 1e-3;
/// Clipped chi below this never changes C by a resolvable amount.
pub const BAND_CLIP_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Quadrature,
    MonteCarlo,
    External,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Quadrature => "quadrature",
            Provenance::MonteCarlo => "monte-carlo",
            Provenance::External => "external",
        })
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "quadrature" => Ok(Provenance::Quadrature),
            "monte-carlo" => Ok(Provenance::MonteCarlo),
            "external" => Ok(Provenance::External),
            other => Err(Error::Parse(format!("unknown provenance `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvelopeParams {
    /// Spin relaxation time, us.
    #[serde(rename = "t1_us")]
    pub t1: f64,
    /// Residual quasistatic Overhauser spread, rad/us (Ramsey only).
    pub quasistatic_sigma: f64,
}

impl Default for EnvelopeParams {
    fn default() -> Self {
        Self {
            t1: 1.0,
            quasistatic_sigma: 0.0,
        }
    }
}

impl EnvelopeParams {
    pub fn none() -> Self {
        Self {
            t1: f64::INFINITY,
            quasistatic_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t1 > 0.0) {
            return Err(Error::Config("T1 must be positive".into()));
        }
        if !(self.quasistatic_sigma >= 0.0) {
            return Err(Error::Config("quasistatic_sigma must be non-negative".into()));
        }
        Ok(())
    }

    /// Multiplicative decay exp(-T/T1), times exp(-sigma^2 T^2 / 2) for Ramsey.
    pub fn factor(&self, n_pi: usize, t: f64) -> f64 {
        let relax = (-t / self.t1).exp();
        if n_pi == 0 {
            relax * (-0.5 * (self.quasistatic_sigma * t).powi(2)).exp()
        } else {
            relax
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherenceSample {
    /// Interrogation time, us.
    pub t: f64,
    pub c: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceCurve {
    pub kind: SequenceKind,
    pub n_pi: usize,
    pub field_b: f64,
    pub provenance: Provenance,
    pub seed: Option<u64>,
    /// T1 used for the envelope, if known.
    pub t1: Option<f64>,
    pub samples: Vec<CoherenceSample>,
}

impl CoherenceCurve {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.c).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == SequenceKind::Ramsey && self.n_pi != 0 {
            return Err(Error::InvalidArgument("Ramsey curve with pi pulses".into()));
        }
        if self
            .samples
            .windows(2)
            .any(|w| !(w[1].t > w[0].t))
        {
            return Err(Error::InvalidArgument("curve times must be strictly increasing".into()));
        }
        if self.samples.iter().any(|s| s.t < 0.0 || !(s.sigma >= 0.0)) {
            return Err(Error::InvalidArgument(
                "curve times and uncertainties must be non-negative".into(),
            ));
        }
        if self.provenance == Provenance::Quadrature
            && self.samples.iter().any(|s| !(0.0..=1.0).contains(&s.c))
        {
            return Err(Error::InvalidArgument("quadrature coherence outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Identifier such as `cpmg-n4`.
    pub fn label(&self) -> String {
        format!("{}-n{}", self.kind, self.n_pi)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        self.write_csv_with_oracle(out, None)
    }

    /// Writes the curve, optionally with Monte-Carlo columns sharing its T grid.
    pub fn write_csv_with_oracle<W: Write>(
        &self,
        mut out: W,
        oracle: Option<&CoherenceCurve>,
    ) -> Result<()> {
        if let Some(mc) = oracle {
            if mc.samples.len() != self.samples.len()
                || mc.samples.iter().zip(&self.samples).any(|(a, b)| a.t != b.t)
            {
                return Err(Error::InvalidArgument(
                    "oracle curve must share the T grid".into(),
                ));
            }
        }
        writeln!(out, "{CURVE_SCHEMA}")?;
        writeln!(out, "# kind: {}", self.kind)?;
        writeln!(out, "# n_pi: {}", self.n_pi)?;
        writeln!(out, "# field_B_T: {}", self.field_b)?;
        if let Some(seed) = self.seed {
            writeln!(out, "# seed: {seed}")?;
        }
        if let Some(t1) = self.t1 {
            writeln!(out, "# T1_us: {t1}")?;
        }
        writeln!(out, "# provenance: {}", self.provenance)?;
        let mut header = CURVE_COLUMNS.join(",");
        if oracle.is_some() {
            header.push(',');
            header.push_str(&ORACLE_COLUMNS.join(","));
        }
        writeln!(out, "{header}")?;
        for (i, s) in self.samples.iter().enumerate() {
            write!(out, "{:.10e},{:.12e},{:.6e}", s.t, s.c, s.sigma)?;
            if let Some(mc) = oracle {
                let m = mc.samples[i];
                write!(out, ",{:.12e},{:.6e}", m.c, m.sigma)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Reads a curve; Monte-Carlo columns, when present, are validated and skipped.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut kind = None;
        let mut n_pi = None;
        let mut field_b = None;
        let mut seed = None;
        let mut t1 = None;
        let mut provenance = Provenance::External;
        let mut columns: Option<usize> = None;
        let mut samples = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((key, value)) = meta.split_once(':') {
                    let value = value.trim();
                    match key.trim() {
                        "kind" => kind = Some(value.parse::<SequenceKind>()?),
                        "n_pi" => {
                            n_pi = Some(value.parse::<usize>().map_err(|_| {
                                Error::Parse(format!("bad n_pi `{value}`"))
                            })?)
                        }
                        "field_B_T" => field_b = Some(parse_field(value, "field_B_T", lineno)?),
                        "seed" => seed = value.parse::<u64>().ok(),
                        "T1_us" => t1 = Some(parse_field(value, "T1_us", lineno)?),
                        "provenance" => provenance = value.parse()?,
                        _ => {}
                    }
                }
                continue;
            }
            let Some(ncols) = columns else {
                let cols = check_header(line, &CURVE_COLUMNS)?;
                if cols.len() > CURVE_COLUMNS.len() {
                    check_header(
                        &cols[CURVE_COLUMNS.len()..].join(","),
                        &ORACLE_COLUMNS[..(cols.len() - CURVE_COLUMNS.len()).min(2)],
                    )?;
                    if cols.len() > CURVE_COLUMNS.len() + ORACLE_COLUMNS.len() {
                        return Err(Error::schema(
                            cols[CURVE_COLUMNS.len() + ORACLE_COLUMNS.len()].clone(),
                            "unexpected extra column",
                        ));
                    }
                }
                columns = Some(cols.len());
                continue;
            };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != ncols {
                return Err(Error::Parse(format!(
                    "line {}: expected {ncols} fields, found {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            samples.push(CoherenceSample {
                t: parse_field(fields[0], "T_us", lineno)?,
                c: parse_field(fields[1], "C", lineno)?,
                sigma: parse_field(fields[2], "sigma_C", lineno)?,
            });
        }
        if columns.is_none() {
            return Err(Error::schema("T_us", "missing header row"));
        }
        let n_pi = n_pi.ok_or_else(|| Error::schema("n_pi", "missing `# n_pi:` header line"))?;
        let kind = kind.unwrap_or(if n_pi == 0 {
            SequenceKind::Ramsey
        } else {
            SequenceKind::Cpmg
        });
        let curve = CoherenceCurve {
            kind,
            n_pi,
            field_b: field_b.unwrap_or(f64::NAN),
            provenance,
            seed,
            t1,
            samples,
        };
        curve.validate()?;
        Ok(curve)
    }
}

/// int_{z0}^inf F(z) / z^2 (z / z0)^alpha dz for alpha <= 0, with the
/// large-z average <F> = 1 + 2n closing the tail.
pub fn filter_tail_integral(n_pi: usize, z0: f64, alpha: f64) -> f64 {
    let z0 = z0.max(0.0);
    let alpha = if z0 > 0.0 { alpha.min(0.0) } else { 0.0 };
    let span = (3.0 * z0).max(400.0 * PI);
    let z1 = z0 + span;
    let panels = (span / PI).ceil() as usize;
    let g = |z: f64| {
        let weight = if alpha == 0.0 { 1.0 } else { (z / z0).powf(alpha) };
        if z == 0.0 {
            if n_pi == 0 {
                0.5
            } else {
                0.0
            }
        } else {
            weight * filter_fast(n_pi, z) / (z * z)
        }
    };
    let head = integrate(g, z0, z1, panels, 1e-9).value;
    let closure = if alpha == 0.0 {
        1.0 / z1
    } else {
        z0.powf(-alpha) * z1.powf(alpha - 1.0) / (1.0 - alpha)
    };
    head + (1.0 + 2.0 * n_pi as f64) * closure
}

/// Log-log slope of the upper spectrum edge, clamped to <= 0.
fn edge_slope(spectrum: &NoiseSpectrum) -> f64 {
    let grid = spectrum.grid();
    let values = spectrum.values();
    let last = grid.len() - 1;
    let probe = grid.partition_point(|&w| w < 0.9 * grid[last]).min(last - 1);
    let (w0, w1) = (grid[probe], grid[last]);
    let (s0, s1) = (values[probe], values[last]);
    if w0 > 0.0 && s0 > 0.0 && s1 > 0.0 {
        ((s1 / s0).ln() / (w1 / w0).ln()).min(0.0)
    } else {
        0.0
    }
}

/// chi(T) = (1/pi) int S(w) F(wT) / w^2 dw.
///
/// S is piecewise linear between grid points and zero beyond them. The mass
/// a continuation of the edges would add is estimated (power law fitted to the
/// top tenth of the grid, flat below the first point); more than
/// [`BAND_CLIP_LIMIT`] of the total is an error unless it is below
/// [`BAND_CLIP_FLOOR`] in absolute terms.
pub fn chi_integral(spectrum: &NoiseSpectrum, seq: &PulseSequence) -> Result<f64> {
    chi_integral_checked(spectrum, seq).map(|(chi, _)| chi)
}

/// chi together with the estimated clipped fraction.
pub fn chi_integral_checked(spectrum: &NoiseSpectrum, seq: &PulseSequence) -> Result<(f64, f64)> {
    if spectrum.is_zero() {
        return Ok((0.0, 0.0));
    }
    let t = seq.total_time();
    let grid = spectrum.grid();
    let values = spectrum.values();
    let period = 2.0 * PI / t;

    // each grid cell is one or more panels, at most one filter period wide
    let mut breakpoints = Vec::with_capacity(grid.len());
    let mut chi = 0.0;
    let flush = |bp: &mut Vec<f64>, acc: &mut f64| {
        if bp.len() >= 2 {
            let r = integrate_panels(
                |w| spectrum.value_at(w) * seq.filter_over_omega2(w),
                bp,
                CHI_REL_TOL * 1e-2,
                1e-300,
                1 << 22,
            );
            *acc += r.value;
        }
        bp.clear();
    };
    for j in 0..grid.len() - 1 {
        if values[j] == 0.0 && values[j + 1] == 0.0 {
            flush(&mut breakpoints, &mut chi);
            continue;
        }
        let (a, b) = (grid[j], grid[j + 1]);
        let pieces = ((b - a) / period).ceil().max(1.0) as usize;
        if breakpoints.last() != Some(&a) {
            breakpoints.push(a);
        }
        for p in 1..=pieces {
            breakpoints.push(a + (b - a) * p as f64 / pieces as f64);
        }
    }
    flush(&mut breakpoints, &mut chi);
    let chi = chi / PI;

    let s_edge = values[values.len() - 1];
    let upper = if s_edge > 0.0 {
        s_edge * t * filter_tail_integral(seq.n_pi(), spectrum.omega_max() * t, edge_slope(spectrum)) / PI
    } else {
        0.0
    };
    let lower = if spectrum.omega_min() > 0.0 {
        let w0 = spectrum.omega_min();
        values[0] * integrate(|w| seq.filter_over_omega2(w), 0.0, w0, 16, 1e-8).value / PI
    } else {
        0.0
    };
    let clipped = upper + lower;
    let fraction = if chi + clipped > 0.0 {
        clipped / (chi + clipped)
    } else {
        0.0
    };
    if fraction > BAND_CLIP_LIMIT && clipped > BAND_CLIP_FLOOR {
        return Err(Error::BandClipping { fraction, t_us: t });
    }
    Ok((chi.max(0.0), fraction))
}

pub(crate) fn validate_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidArgument("empty T grid".into()));
    }
    if times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::InvalidArgument("T grid values must be finite and >= 0".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("T grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Pure-dephasing exponents chi(T) for a pulse count over a T grid.
pub fn chi_curve(spectrum: &NoiseSpectrum, n_pi: usize, times: &[f64]) -> Result<Vec<f64>> {
    validate_times(times)?;
    times
        .par_iter()
        .map(|&t| {
            if t == 0.0 {
                return Ok(0.0);
            }
            let seq = PulseSequence::for_count(n_pi, t)?;
            chi_integral(spectrum, &seq)
        })
        .collect()
}

/// C(T) = exp(-chi) exp(-T/T1) [exp(-sigma^2 T^2 / 2) for Ramsey].
pub fn coherence_curve(
    spectrum: &NoiseSpectrum,
    kind: SequenceKind,
    n_pi: usize,
    times: &[f64],
    env: &EnvelopeParams,
    field_b: f64,
) -> Result<CoherenceCurve> {
    env.validate()?;
    // consistency of kind and n_pi
    PulseSequence::build(kind, n_pi, 1.0)?;
    let chi = chi_curve(spectrum, n_pi, times)?;
    let samples = times
        .iter()
        .zip(chi)
        .map(|(&t, chi)| CoherenceSample {
            t,
            c: ((-chi).exp() * env.factor(n_pi, t)).clamp(0.0, 1.0),
            sigma: 0.0,
        })
        .collect();
    Ok(CoherenceCurve {
        kind,
        n_pi,
        field_b,
        provenance: Provenance::Quadrature,
        seed: None,
        t1: Some(env.t1),
        samples,
    })
}

/// How a T grid is laid out in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum TimeGrid {
    /// Explicit times in us.
    List { times_us: Vec<f64> },
    Linear { start_us: f64, stop_us: f64, points: usize },
    Log { start_us: f64, stop_us: f64, points: usize },
    /// Times T = n / (2 f) that place the first comb harmonic n pi / T on a
    /// uniform grid of ordinary frequencies.
    Frequency { f_min_mhz: f64, f_max_mhz: f64, points: usize },
}

impl TimeGrid {
    pub fn resolve(&self, n_pi: usize) -> Result<Vec<f64>> {
        let spaced = |a: f64, b: f64, n: usize| -> Result<Vec<f64>> {
            if n < 1 || !(b >= a) {
                return Err(Error::Config("grid needs points >= 1 and stop >= start".into()));
            }
            if n == 1 {
                return Ok(vec![a]);
            }
            Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect())
        };
        let mut times = match self {
            TimeGrid::List { times_us } => times_us.clone(),
            TimeGrid::Linear { start_us, stop_us, points } => spaced(*start_us, *stop_us, *points)?,
            TimeGrid::Log { start_us, stop_us, points } => {
                if !(*start_us > 0.0) {
                    return Err(Error::Config("log grid must start above 0".into()));
                }
                spaced(start_us.ln(), stop_us.ln(), *points)?
                    .into_iter()
                    .map(f64::exp)
                    .collect()
            }
            TimeGrid::Frequency { f_min_mhz, f_max_mhz, points } => {
                if !(*f_min_mhz > 0.0) {
                    return Err(Error::Config("frequency grid must start above 0".into()));
                }
                let n = n_pi.max(1) as f64;
                spaced(*f_min_mhz, *f_max_mhz, *points)?
                    .into_iter()
                    .map(|f| n / (2.0 * f))
                    .collect()
            }
        };
        times.sort_by(f64::total_cmp);
        Ok(times)
    }

    /// Union of several grids, sorted with duplicates removed.
    pub fn resolve_all(grids: &[TimeGrid], n_pi: usize) -> Result<Vec<f64>> {
        let mut all = Vec::new();
        for g in grids {
            all.extend(g.resolve(n_pi)?);
        }
        all.sort_by(f64::total_cmp);
        all.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1e-12));
        validate_times(&all)?;
        Ok(all)
    }
}
