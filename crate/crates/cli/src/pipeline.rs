//! The five stages. Each reads its inputs from, and writes into, the output
//! root, one subdirectory per field:
//!
//! ```text
//! spectra/B2.000T/{parallel,perpendicular,total}.csv
//! curves/B2.000T/<sequence>.csv
//! inversion/B2.000T/{decomposition.csv,gaussian_fit.json}
//! fits/B2.000T/<name>.json
//! reproduce/{trends.json,trends.txt}
//! ```
//!
//! Every directory written gets a `config.toml` and `manifest.json`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use dotspec::forward::{coherence_curve, CURVE_SCHEMA};
use dotspec::inversion::{
    decompose_lsq, decompose_recursive, fit_gaussian, fit_stretched_exp, DecompositionResult,
    GaussianFit, Method, StretchedExpFit, DECOMPOSITION_SCHEMA,
};
use dotspec::montecarlo::{mc_coherence, McOptions};
use dotspec::{synthesize_spectra, CoherenceCurve, NoiseSpectrum, Provenance, SequenceKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::config::{ExperimentConfig, SequenceSpec};
use crate::error::{CliError, CliResult, ErrorKind, StageExt};
use crate::manifest::{write_manifest, write_text};
use crate::report::{evaluate, in115_ratio, two_stage, FieldSummary, TrendReport};

pub const SPECTRA_DIR: &str = "spectra";
pub const CURVES_DIR: &str = "curves";
pub const INVERSION_DIR: &str = "inversion";
pub const FITS_DIR: &str = "fits";
pub const REPRODUCE_DIR: &str = "reproduce";
pub const DECOMPOSITION_FILE: &str = "decomposition.csv";
pub const GAUSSIAN_FIT_FILE: &str = "gaussian_fit.json";

/// Sequence counts a full decomposition expects.
const FULL_FAMILY: [usize; 4] = [1, 2, 4, 8];

pub fn field_dir(b: f64) -> String {
    format!("B{b:.3}T")
}

fn warn(message: &str) {
    eprintln!("warning: {message}");
}

fn open(stage: &str, path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::new(ErrorKind::Config, stage, "missing-input", format!("{}: {e}", path.display())))
}

fn create(stage: &str, path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(stage, dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(stage, path, e))
}

fn finish(stage: &str, path: &Path, mut w: BufWriter<File>) -> CliResult<()> {
    w.flush().map_err(|e| CliError::io(stage, path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("record serializes");
    write_text(path, &(text + "\n"))
}

fn read_spectrum(stage: &str, path: &Path) -> CliResult<NoiseSpectrum> {
    NoiseSpectrum::read_csv(open(stage, path)?).map_err(|e| with_path(stage, path, e))
}

fn read_curve(stage: &str, path: &Path) -> CliResult<CoherenceCurve> {
    CoherenceCurve::read_csv(open(stage, path)?).map_err(|e| with_path(stage, path, e))
}

fn read_decomposition(stage: &str, path: &Path) -> CliResult<DecompositionResult> {
    DecompositionResult::read_csv(open(stage, path)?).map_err(|e| with_path(stage, path, e))
}

fn with_path(stage: &str, path: &Path, e: dotspec::Error) -> CliError {
    let mut err = CliError::from_core(stage, e);
    err.message = format!("{}: {}", path.display(), err.message);
    err
}

/// Writes parallel, perpendicular and total spectra for every field.
pub fn cmd_synth(config: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    const STAGE: &str = "synth";
    config.validate()?;
    let root = &config.out_dir;
    let grid = config.spectral_grid();
    let mut dirs = Vec::new();
    for &b in &config.b_tesla {
        let dir = root.join(SPECTRA_DIR).join(field_dir(b));
        let (par, perp, total) = synthesize_spectra(&config.bath_at(b)?, &grid).stage(STAGE)?;
        let mut outputs = Vec::new();
        for (name, s) in [("parallel", &par), ("perpendicular", &perp), ("total", &total)] {
            let path = dir.join(format!("{name}.csv"));
            let mut w = create(STAGE, &path)?;
            s.write_csv(&mut w).stage(STAGE)?;
            finish(STAGE, &path, w)?;
            outputs.push(path);
        }
        write_manifest(root, &dir, STAGE, config, Some(b), &[], &outputs, "")?;
        dirs.push(dir);
    }
    Ok(dirs)
}

#[derive(Debug, Clone, Default)]
pub struct ForwardOptions {
    /// Add Monte-Carlo columns to the sequences listed in `[oracle]`.
    pub oracle: bool,
    /// External total spectrum used for every field instead of `synth` output.
    pub spectrum: Option<PathBuf>,
}

fn add_noise(curve: &mut CoherenceCurve, rel: f64, seed: u64, stream: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    for s in &mut curve.samples {
        let e: f64 = StandardNormal.sample(&mut rng);
        s.sigma = rel * s.c;
        s.c *= 1.0 + rel * e;
    }
    curve.provenance = Provenance::External;
    curve.seed = Some(seed);
}

/// Coherence curves for every configured sequence and field.
pub fn cmd_forward(config: &ExperimentConfig, options: &ForwardOptions) -> CliResult<Vec<PathBuf>> {
    const STAGE: &str = "forward";
    config.validate()?;
    let root = &config.out_dir;
    let mut dirs = Vec::new();
    for (ib, &b) in config.b_tesla.iter().enumerate() {
        let spectrum_path = options
            .spectrum
            .clone()
            .unwrap_or_else(|| root.join(SPECTRA_DIR).join(field_dir(b)).join("total.csv"));
        let spectrum = read_spectrum(STAGE, &spectrum_path)?;
        let dir = root.join(CURVES_DIR).join(field_dir(b));
        let mut outputs = Vec::new();
        for (is, seq) in config.sequences.iter().enumerate() {
            let name = seq.name();
            let stage = format!("{STAGE} {name} at {b} T");
            let times = seq.t_grid.resolve(seq.n).stage(&stage)?;
            let mut curve =
                coherence_curve(&spectrum, seq.kind, seq.n, &times, &config.envelope, b).stage(&stage)?;
            if config.forward.noise_rel > 0.0 {
                add_noise(&mut curve, config.forward.noise_rel, config.seed, ((ib as u64) << 32) | is as u64);
            }
            let oracle = if options.oracle && config.oracle.sequences.contains(&name) {
                let mc_options = McOptions {
                    realizations: config.oracle.realizations,
                    seed: config.seed,
                    mode_spacing: config.oracle.mode_spacing,
                };
                let mut mc = mc_coherence(&spectrum, seq.n, &times, &mc_options, b).stage(&stage)?;
                // the same envelope as the quadrature column
                for s in &mut mc.samples {
                    let f = config.envelope.factor(seq.n, s.t);
                    s.c *= f;
                    s.sigma *= f;
                }
                Some(mc)
            } else {
                None
            };
            let path = dir.join(format!("{name}.csv"));
            let mut w = create(STAGE, &path)?;
            curve.write_csv_with_oracle(&mut w, oracle.as_ref()).stage(STAGE)?;
            finish(STAGE, &path, w)?;
            outputs.push(path);
        }
        let mut flags = String::new();
        if options.oracle {
            flags.push_str(" --oracle");
        }
        if let Some(p) = &options.spectrum {
            flags.push_str(&format!(" --input {}", p.display()));
        }
        write_manifest(root, &dir, STAGE, config, Some(b), &[spectrum_path], &outputs, &flags)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

#[derive(Debug, Clone, Default)]
pub struct InvertOptions {
    /// Directory of curve files instead of `forward` output.
    pub input: Option<PathBuf>,
    /// Overrides `inversion.method`.
    pub method: Option<Method>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GaussianRecord {
    pub field_b_tesla: f64,
    pub method: Method,
    pub status: &'static str,
    pub fit: Option<GaussianFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<CliError>,
}

fn inversion_inputs(config: &ExperimentConfig) -> Vec<&SequenceSpec> {
    config
        .sequences
        .iter()
        .filter(|s| s.invert && s.kind == SequenceKind::Cpmg && s.n >= 1)
        .collect()
}

fn decompose(
    config: &ExperimentConfig,
    method: Method,
    curves: &[CoherenceCurve],
    stage: &str,
) -> CliResult<DecompositionResult> {
    match method {
        Method::Recursive => decompose_recursive(curves, &config.recursive_options()),
        Method::Lsq => decompose_lsq(curves, &config.lsq_centers(), &config.lsq_options()),
    }
    .stage(stage)
}

fn gaussian_record(config: &ExperimentConfig, b: f64, method: Method, result: &DecompositionResult, stage: &str) -> GaussianRecord {
    let fit = fit_gaussian(result, &config.gaussian_options()).stage(stage).and_then(|f| {
        if f.converged {
            Ok(f)
        } else {
            Err(CliError::new(ErrorKind::Numerical, stage, "non-convergence", "Gaussian fit did not converge"))
        }
    });
    match fit {
        Ok(fit) => GaussianRecord {
            field_b_tesla: b,
            method,
            status: "converged",
            fit: Some(fit),
            error: None,
        },
        Err(e) => GaussianRecord {
            field_b_tesla: b,
            method,
            status: "failed",
            fit: None,
            error: Some(e),
        },
    }
}

/// Decomposition and Gaussian fit per field. Outputs are written even when a
/// fit fails; the first failure is returned afterwards.
pub fn cmd_invert(config: &ExperimentConfig, options: &InvertOptions) -> CliResult<Vec<GaussianRecord>> {
    const STAGE: &str = "invert";
    config.validate()?;
    let root = &config.out_dir;
    let method = options.method.unwrap_or(config.inversion.method);
    let mut records = Vec::new();
    let mut first_failure = None;
    for &b in &config.b_tesla {
        let stage = format!("{STAGE} at {b} T");
        let input_dir = options
            .input
            .clone()
            .unwrap_or_else(|| root.join(CURVES_DIR).join(field_dir(b)));
        let mut curves = Vec::new();
        let mut inputs = Vec::new();
        for seq in inversion_inputs(config) {
            let path = input_dir.join(format!("{}.csv", seq.name()));
            if !path.exists() {
                warn(&format!("{}: no curve file, continuing without it", path.display()));
                continue;
            }
            curves.push(read_curve(&stage, &path)?);
            inputs.push(path);
        }
        if curves.is_empty() {
            return Err(CliError::new(
                ErrorKind::Numerical,
                &stage,
                "coverage",
                format!("no inversion curves found in {}", input_dir.display()),
            ));
        }
        let missing: Vec<usize> = FULL_FAMILY
            .iter()
            .copied()
            .filter(|n| !curves.iter().any(|c| c.n_pi == *n))
            .collect();
        if !missing.is_empty() {
            warn(&format!("{stage}: pulse counts {missing:?} absent, decomposing a subset"));
        }
        let result = decompose(config, method, &curves, &stage)?;
        if result.missing_count() > 0 {
            warn(&format!("{stage}: {} grid points without coverage", result.missing_count()));
        }
        let dir = root.join(INVERSION_DIR).join(field_dir(b));
        let csv = dir.join(DECOMPOSITION_FILE);
        let mut w = create(STAGE, &csv)?;
        result.write_csv(&mut w).stage(STAGE)?;
        finish(STAGE, &csv, w)?;

        let record = gaussian_record(config, b, method, &result, &stage);
        if let Some(e) = &record.error {
            warn(&e.to_string());
            first_failure.get_or_insert_with(|| e.clone());
        }
        let json = dir.join(GAUSSIAN_FIT_FILE);
        write_json(&json, &record)?;
        let mut flags = format!(" --method {method}");
        if let Some(p) = &options.input {
            flags.push_str(&format!(" --input {}", p.display()));
        }
        write_manifest(root, &dir, STAGE, config, Some(b), &inputs, &[csv, json], &flags)?;
        records.push(record);
    }
    match first_failure {
        Some(e) => Err(e),
        None => Ok(records),
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// A decomposition or coherence-curve CSV; detected from its schema line.
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum FitRecord {
    Gaussian { source: String, fit: GaussianFit },
    StretchedExponential { source: String, fit: StretchedExpFit },
}

fn schema_line(stage: &str, path: &Path) -> CliResult<String> {
    let mut line = String::new();
    open(stage, path)?
        .read_line(&mut line)
        .map_err(|e| CliError::io(stage, path, e))?;
    Ok(line.trim().to_string())
}

fn fit_file(config: &ExperimentConfig, path: &Path, stage: &str) -> CliResult<FitRecord> {
    let source = path.to_string_lossy().replace('\\', "/");
    let source = Path::new(&source)
        .strip_prefix(&config.out_dir)
        .map(|p| p.to_string_lossy().into_owned())
        .unwrap_or(source);
    let schema = schema_line(stage, path)?;
    if schema == DECOMPOSITION_SCHEMA {
        let result = read_decomposition(stage, path)?;
        let fit = fit_gaussian(&result, &config.gaussian_options()).stage(stage)?;
        Ok(FitRecord::Gaussian { source, fit })
    } else if schema == CURVE_SCHEMA {
        let curve = read_curve(stage, path)?;
        let fit = fit_stretched_exp(&curve).stage(stage)?;
        Ok(FitRecord::StretchedExponential { source, fit })
    } else {
        Err(CliError::new(
            ErrorKind::Schema,
            stage,
            "schema",
            format!("{}: unrecognised schema line `{schema}`", path.display()),
        ))
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".into())
}

/// Stretched-exponential fits of Ramsey curves and Gaussian fits of
/// decompositions, per field; or a single file with `--input`.
pub fn cmd_fit(config: &ExperimentConfig, options: &FitOptions) -> CliResult<Vec<FitRecord>> {
    const STAGE: &str = "fit";
    config.validate()?;
    let root = &config.out_dir;
    if let Some(path) = &options.input {
        let record = fit_file(config, path, STAGE)?;
        let dir = root.join(FITS_DIR);
        let out = dir.join(format!("{}.json", file_stem(path)));
        write_json(&out, &record)?;
        let flags = format!(" --input {}", path.display());
        write_manifest(root, &dir, STAGE, config, None, std::slice::from_ref(path), &[out], &flags)?;
        return Ok(vec![record]);
    }
    let mut records = Vec::new();
    for &b in &config.b_tesla {
        let stage = format!("{STAGE} at {b} T");
        let dir = root.join(FITS_DIR).join(field_dir(b));
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        let decomposition = root.join(INVERSION_DIR).join(field_dir(b)).join(DECOMPOSITION_FILE);
        let mut sources = Vec::new();
        if decomposition.exists() {
            sources.push(("gaussian".to_string(), decomposition));
        }
        for seq in config.sequences.iter().filter(|s| s.kind == SequenceKind::Ramsey) {
            let path = root.join(CURVES_DIR).join(field_dir(b)).join(format!("{}.csv", seq.name()));
            if path.exists() {
                sources.push((seq.name(), path));
            }
        }
        if sources.is_empty() {
            warn(&format!("{stage}: nothing to fit"));
            continue;
        }
        for (name, path) in sources {
            let record = fit_file(config, &path, &stage)?;
            let out = dir.join(format!("{name}.json"));
            write_json(&out, &record)?;
            inputs.push(path);
            outputs.push(out);
            records.push(record);
        }
        write_manifest(root, &dir, STAGE, config, Some(b), &inputs, &outputs, "")?;
    }
    Ok(records)
}

/// synth, forward, invert and fit over the configured fields, then the
/// trend verdicts.
pub fn cmd_reproduce(config: &ExperimentConfig) -> CliResult<TrendReport> {
    const STAGE: &str = "reproduce";
    config.validate()?;
    let root = &config.out_dir;
    cmd_synth(config)?;
    cmd_forward(config, &ForwardOptions::default())?;
    let records = cmd_invert(config, &InvertOptions::default())?;
    cmd_fit(config, &FitOptions::default())?;

    let hahn = config
        .sequences
        .iter()
        .filter(|s| s.kind == SequenceKind::Cpmg && s.n == 1 && !s.invert)
        .map(|s| s.name())
        .next();
    let mut fields = Vec::new();
    let mut inputs = Vec::new();
    for record in records {
        let b = record.field_b_tesla;
        let hahn = match &hahn {
            Some(name) => {
                let path = root.join(CURVES_DIR).join(field_dir(b)).join(format!("{name}.csv"));
                let curve = read_curve(STAGE, &path)?;
                inputs.push(path);
                two_stage(&curve)
            }
            None => None,
        };
        inputs.push(root.join(INVERSION_DIR).join(field_dir(b)).join(GAUSSIAN_FIT_FILE));
        fields.push(FieldSummary {
            field_b_tesla: b,
            fit: record.fit.expect("converged fits only reach here"),
            hahn,
        });
    }
    let report = evaluate(config.seed, fields, in115_ratio(&config.species()?));
    let dir = root.join(REPRODUCE_DIR);
    let json = dir.join("trends.json");
    let txt = dir.join("trends.txt");
    write_json(&json, &report)?;
    write_text(&txt, &report.table())?;
    write_manifest(root, &dir, STAGE, config, None, &inputs, &[json, txt], "")?;
    Ok(report)
}
