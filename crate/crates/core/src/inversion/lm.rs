//! Box-constrained Levenberg-Marquardt for small weighted least-squares problems.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub cost_tol: f64,
    /// Stop when the step is smaller than this relative to the parameters.
    pub step_tol: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            cost_tol: 1e-14,
            step_tol: 1e-13,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// Sum of squared weighted residuals.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// (J^T W J)^-1 at the optimum; `None` if singular.
    pub inverse_hessian: Option<DMatrix<f64>>,
}

#[allow(clippy::too_many_arguments)]
/// Minimises sum_i ((y_i - f(p, x_i)) / sigma_i)^2 with lower <= p <= upper.
///
/// `model` returns the value and the gradient with respect to p.
pub fn levenberg_marquardt<F>(
    model: F,
    x: &[f64],
    y: &[f64],
    sigma: &[f64],
    initial: &[f64],
    lower: &[f64],
    upper: &[f64],
    options: &LmOptions,
) -> Result<LmOutcome>
where
    F: Fn(&[f64], f64) -> (f64, Vec<f64>),
{
    let m = x.len();
    let p = initial.len();
    if y.len() != m || sigma.len() != m || lower.len() != p || upper.len() != p {
        return Err(Error::InvalidArgument("least-squares inputs differ in length".into()));
    }
    if m < p {
        return Err(Error::DegenerateFit(format!("{m} points for {p} parameters")));
    }
    if sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidArgument("weights must be positive".into()));
    }
    let clamp = |v: &mut [f64]| {
        for i in 0..p {
            v[i] = v[i].clamp(lower[i], upper[i]);
        }
    };
    let evaluate = |params: &[f64]| -> (DVector<f64>, DMatrix<f64>) {
        let mut r = DVector::zeros(m);
        let mut j = DMatrix::zeros(m, p);
        for i in 0..m {
            let (v, g) = model(params, x[i]);
            r[i] = (y[i] - v) / sigma[i];
            for k in 0..p {
                j[(i, k)] = g[k] / sigma[i];
            }
        }
        (r, j)
    };

    let mut params = initial.to_vec();
    clamp(&mut params);
    let (mut r, mut j) = evaluate(&params);
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return Err(Error::DegenerateFit("non-finite residuals at the starting point".into()));
    }
    let mut damping = options.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        iterations += 1;
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        if g.amax() <= 1e-300 || cost == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = false;
        while damping < 1e16 {
            let mut a = jtj.clone();
            for k in 0..p {
                a[(k, k)] += damping * jtj[(k, k)].max(1e-30);
            }
            let Some(chol) = a.cholesky() else {
                damping *= 10.0;
                continue;
            };
            let delta = chol.solve(&g);
            let mut trial: Vec<f64> = params.iter().zip(delta.iter()).map(|(p, d)| p + d).collect();
            clamp(&mut trial);
            let (tr, tj) = evaluate(&trial);
            let tcost = tr.norm_squared();
            if tcost.is_finite() && tcost < cost {
                let step: f64 = trial
                    .iter()
                    .zip(&params)
                    .map(|(a, b)| (a - b).abs() / b.abs().max(1e-300))
                    .fold(0.0, f64::max);
                let gain = (cost - tcost) / cost;
                params = trial;
                r = tr;
                j = tj;
                cost = tcost;
                damping = (damping / 10.0).max(1e-12);
                accepted = true;
                if gain < options.cost_tol || step < options.step_tol {
                    converged = true;
                }
                break;
            }
            damping *= 10.0;
        }
        if !accepted {
            // no downhill step at any damping: a (constrained) stationary point
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    let jtj = j.transpose() * &j;
    let inverse_hessian = jtj.try_inverse().filter(|h| h.iter().all(|v| v.is_finite()));
    Ok(LmOutcome {
        params,
        cost,
        iterations,
        converged,
        inverse_hessian,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exponential_parameters() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|t| 2.5 * (-1.3 * t).exp()).collect();
        let model = |p: &[f64], t: f64| {
            let e = (-p[1] * t).exp();
            (p[0] * e, vec![e, -p[0] * t * e])
        };
        let out = levenberg_marquardt(
            model,
            &x,
            &y,
            &vec![1.0; x.len()],
            &[1.0, 0.5],
            &[0.0, 0.0],
            &[10.0, 10.0],
            &LmOptions::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert!((out.params[0] - 2.5).abs() < 1e-9);
        assert!((out.params[1] - 1.3).abs() < 1e-9);
    }

    #[test]
    fn respects_bounds() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [5.0, 5.0, 5.0, 5.0];
        let model = |p: &[f64], _t: f64| (p[0], vec![1.0]);
        let out = levenberg_marquardt(model, &x, &y, &[1.0; 4], &[1.0], &[0.0], &[2.0], &LmOptions::default())
            .unwrap();
        assert_eq!(out.params[0], 2.0);
    }

    #[test]
    fn rejects_underdetermined_problems() {
        let model = |p: &[f64], _t: f64| (p[0] + p[1], vec![1.0, 1.0]);
        assert!(levenberg_marquardt(model, &[0.0], &[1.0], &[1.0], &[0.0, 0.0], &[-1.0; 2], &[1.0; 2], &LmOptions::default())
            .is_err());
    }
}
