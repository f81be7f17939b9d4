//! Full-filter inversion: non-negative least squares with second-difference smoothing.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::CoherenceCurve;
use crate::quadrature::integrate_panels;
use crate::sequence::filter_fast;

use super::recursive::{check_family, extract_chi};
use super::{DecompositionResult, Method, SpectralPoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsqOptions {
    /// Smoothing strength relative to trace(M^T M) / trace(D^T D).
    pub lambda: f64,
    pub c_floor: f64,
    pub t1: Option<f64>,
    /// Outer active-set iterations; defaults to 3 x the number of bins.
    pub max_iterations: Option<usize>,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            lambda: 1e-2,
            c_floor: 0.02,
            t1: None,
            max_iterations: None,
        }
    }
}

/// Bin edges around strictly increasing centres; the first edge is clamped at zero.
fn bin_edges(centers: &[f64]) -> Vec<f64> {
    let n = centers.len();
    let mut edges = Vec::with_capacity(n + 1);
    let first_half = if n > 1 { 0.5 * (centers[1] - centers[0]) } else { 0.5 * centers[0] };
    edges.push((centers[0] - first_half).max(0.0));
    for w in centers.windows(2) {
        edges.push(0.5 * (w[0] + w[1]));
    }
    let last_half = if n > 1 { 0.5 * (centers[n - 1] - centers[n - 2]) } else { first_half };
    edges.push(centers[n - 1] + last_half);
    edges
}

/// (1/pi) int_a^b F_n(wT) / w^2 dw = (T/pi) int_{aT}^{bT} F_n(z) / z^2 dz.
fn bin_response(n_pi: usize, t: f64, a: f64, b: f64) -> f64 {
    let (za, zb) = (a * t, b * t);
    if zb <= za {
        return 0.0;
    }
    let f = |z: f64| {
        if z <= 0.0 {
            if n_pi == 0 { 0.5 } else { 0.0 }
        } else {
            filter_fast(n_pi, z) / (z * z)
        }
    };
    let panels = ((zb - za) / PI).ceil().max(1.0) as usize;
    let bp: Vec<f64> = (0..=panels)
        .map(|i| za + (zb - za) * i as f64 / panels as f64)
        .collect();
    integrate_panels(f, &bp, 1e-9, 1e-15, 1 << 14).value * t / PI
}

/// Design matrix rows (n, T) against bins centred on `centers` (rad/us).
pub fn design_matrix(rows: &[(usize, f64)], centers: &[f64]) -> Result<DMatrix<f64>> {
    crate::spectrum::validate_grid(centers)?;
    let edges = bin_edges(centers);
    let p = centers.len();
    let data: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|&(n, t)| (0..p).map(|m| bin_response(n, t, edges[m], edges[m + 1])).collect())
        .collect();
    Ok(DMatrix::from_fn(rows.len(), p, |i, j| data[i][j]))
}

fn second_difference(p: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(p.saturating_sub(2), p);
    for i in 0..p.saturating_sub(2) {
        d[(i, i)] = 1.0;
        d[(i, i + 1)] = -2.0;
        d[(i, i + 2)] = 1.0;
    }
    d
}

fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let tol = 1e-13 * svd.singular_values.max();
    svd.solve(b, tol).unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// Lawson-Hanson active-set solution of min ||Ax - b|| subject to x >= 0.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>, max_iterations: usize) -> Result<DVector<f64>> {
    let p = a.ncols();
    let mut x = DVector::zeros(p);
    let mut passive = vec![false; p];
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())) * b.amax().max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale * (a.nrows() as f64);
    // columns whose entry immediately failed; cleared once x changes
    let mut blocked = vec![false; p];
    let mut iterations = 0;
    loop {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..p)
            .filter(|&j| !passive[j] && !blocked[j])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate.filter(|&j| w[j] > tol) else {
            return Ok(x);
        };
        iterations += 1;
        if iterations > max_iterations {
            return Err(Error::NonConvergence {
                iterations: max_iterations,
                residual: (b - a * &x).norm(),
            });
        }
        passive[j] = true;
        let mut first = true;
        loop {
            let cols: Vec<usize> = (0..p).filter(|&k| passive[k]).collect();
            if cols.is_empty() {
                break;
            }
            let s_p = lstsq(&a.select_columns(&cols), b);
            if s_p.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (k, &c) in cols.iter().enumerate() {
                    x[c] = s_p[k];
                }
                blocked.fill(false);
                break;
            }
            let entering = cols.iter().position(|&c| c == j);
            if first && entering.is_some_and(|k| s_p[k] <= 0.0) {
                // no progress possible along j at this x
                passive[j] = false;
                blocked[j] = true;
                break;
            }
            first = false;
            // step back to the feasible boundary
            let (mut alpha, mut hit) = (f64::INFINITY, cols[0]);
            for (k, &c) in cols.iter().enumerate() {
                if s_p[k] <= 0.0 {
                    let ratio = x[c] / (x[c] - s_p[k]);
                    if ratio < alpha {
                        alpha = ratio;
                        hit = c;
                    }
                }
            }
            for (k, &c) in cols.iter().enumerate() {
                x[c] += alpha * (s_p[k] - x[c]);
                if c == hit || x[c] <= 0.0 {
                    x[c] = 0.0;
                    passive[c] = false;
                }
            }
        }
    }
}

/// NNLS reconstruction of S on bins centred at `grid` (rad/us).
///
/// Error bars follow from the data residual propagated through the
/// regularized normal equations.
pub fn decompose_lsq(
    curves: &[CoherenceCurve],
    grid: &[f64],
    options: &LsqOptions,
) -> Result<DecompositionResult> {
    check_family(curves)?;
    if !(options.lambda >= 0.0) {
        return Err(Error::InvalidArgument("regularization must be non-negative".into()));
    }
    if grid.len() < 3 {
        return Err(Error::InvalidArgument("lsq grid needs at least 3 bins".into()));
    }
    let samples = extract_chi(curves, options.c_floor, options.t1)?;
    if samples.len() < 2 {
        return Err(Error::Coverage("fewer than two usable chi samples".into()));
    }
    let rows: Vec<(usize, f64)> = samples.iter().map(|s| (s.n_pi, s.t)).collect();
    let m = design_matrix(&rows, grid)?;
    let chi = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.chi));

    let p = grid.len();
    let d = second_difference(p);
    let mtm = m.transpose() * &m;
    let dtd = d.transpose() * &d;
    let lambda = options.lambda * mtm.trace() / dtd.trace().max(f64::MIN_POSITIVE);
    let root = lambda.sqrt();

    let r = m.nrows();
    let mut a = DMatrix::zeros(r + d.nrows(), p);
    a.view_mut((0, 0), (r, p)).copy_from(&m);
    a.view_mut((r, 0), (d.nrows(), p)).copy_from(&(&d * root));
    let mut b = DVector::zeros(r + d.nrows());
    b.rows_mut(0, r).copy_from(&chi);

    let x = nnls(&a, &b, options.max_iterations.unwrap_or(3 * p))?;

    let resid = &chi - &m * &x;
    let dof = r.saturating_sub(p).max(1) as f64;
    let s2 = resid.norm_squared() / dof;
    let h = &mtm + &dtd * lambda;
    let h_inv = h
        .clone()
        .try_inverse()
        .unwrap_or_else(|| h.pseudo_inverse(1e-14).expect("svd of a symmetric matrix"));
    let cov = &h_inv * &mtm * &h_inv * s2;

    let points = (0..p)
        .map(|j| SpectralPoint::new(grid[j], x[j], cov[(j, j)].max(0.0).sqrt()))
        .collect();
    let inputs = curves.iter().map(|c| c.label()).collect();
    Ok(DecompositionResult::from_points(points, Method::Lsq, inputs))
}
