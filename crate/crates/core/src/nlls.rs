//! Damped nonlinear least squares: a Levenberg–Marquardt loop with optional
//! log transforms for positive parameters, analytic or finite-difference
//! Jacobians, and a covariance estimate at the solution.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// How a parameter is represented inside the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamScale {
    /// Optimized as-is.
    Linear,
    /// Optimized as ln(value); keeps the parameter strictly positive.
    LogPositive,
}

/// One model parameter: name, starting value, transform, frozen flag.
#[derive(Debug, Clone, Copy)]
pub struct ParamSpec {
    pub name: &'static str,
    pub initial: f64,
    pub scale: ParamScale,
    pub frozen: bool,
}

impl ParamSpec {
    pub fn linear(name: &'static str, initial: f64) -> Self {
        Self {
            name,
            initial,
            scale: ParamScale::Linear,
            frozen: false,
        }
    }

    pub fn log_positive(name: &'static str, initial: f64) -> Self {
        Self {
            name,
            initial,
            scale: ParamScale::LogPositive,
            frozen: false,
        }
    }

    /// Holds the parameter at its initial value.
    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }
}

/// Stopping and stepping controls.
#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    /// Outer iteration cap; exceeding it returns the best point with
    /// `converged = false`.
    pub max_iterations: usize,
    /// Converged when an accepted step reduces the cost by less than this
    /// fraction (and the linearized model predicts no more).
    pub cost_rel_tol: f64,
    /// Converged when every column's scaled gradient |J^T r| / (|col| |r|)
    /// falls below this.
    pub grad_tol: f64,
    /// Relative step for finite-difference Jacobian columns.
    pub fd_rel_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            cost_rel_tol: 1.0e-10,
            grad_tol: 1.0e-8,
            fd_rel_step: 1.0e-6,
        }
    }
}

/// A residual vector as a function of the model parameters.
///
/// Parameters are passed in natural units (never log-transformed); the
/// optimizer applies its internal transform on its side of this interface.
pub trait ResidualModel {
    fn residual_count(&self) -> usize;

    /// Writes the weighted residuals at `params` into `out`.
    fn residuals(&self, params: &[f64], out: &mut [f64]);

    /// Writes d residual_i / d param_j into `out` and returns true, or
    /// returns false to request finite differences.
    fn jacobian(&self, params: &[f64], out: &mut DMatrix<f64>) -> bool {
        let _ = (params, out);
        false
    }
}

/// One fitted parameter with its variance estimate.
#[derive(Debug, Clone)]
pub struct FittedParam {
    pub name: &'static str,
    pub value: f64,
    /// Variance from the local linearization; 0 for frozen parameters.
    pub variance: f64,
    pub frozen: bool,
}

impl FittedParam {
    pub fn stderr(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }
}

/// Fit outcome: parameter estimates, goodness, and diagnostics.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub parameters: Vec<FittedParam>,
    /// sqrt of the summed squared weighted residuals at the solution.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Free-form remark set by the engine or the specific fit.
    pub note: Option<String>,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<&FittedParam> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// Value of a named parameter; panics when the name is absent, which is
    /// a bug at the call site rather than a data condition.
    pub fn value(&self, name: &str) -> f64 {
        self.param(name)
            .unwrap_or_else(|| panic!("no parameter named {name:?} in fit result"))
            .value
    }

    /// Standard error of a named parameter; panics when absent.
    pub fn stderr(&self, name: &str) -> f64 {
        self.param(name)
            .unwrap_or_else(|| panic!("no parameter named {name:?} in fit result"))
            .stderr()
    }

}

fn compose_x(specs: &[ParamSpec], free: &[usize], z: &DVector<f64>) -> Vec<f64> {
    let mut x: Vec<f64> = specs.iter().map(|s| s.initial).collect();
    for (k, &j) in free.iter().enumerate() {
        x[j] = match specs[j].scale {
            ParamScale::Linear => z[k],
            ParamScale::LogPositive => z[k].exp(),
        };
    }
    x
}

fn eval_cost(model: &dyn ResidualModel, x: &[f64], m: usize) -> Option<(DVector<f64>, f64)> {
    let mut r = DVector::zeros(m);
    model.residuals(x, r.as_mut_slice());
    let cost = r.norm_squared();
    cost.is_finite().then_some((r, cost))
}

fn jacobian_in_z(
    model: &dyn ResidualModel,
    specs: &[ParamSpec],
    free: &[usize],
    z: &DVector<f64>,
    x: &[f64],
    m: usize,
    fd_rel_step: f64,
) -> DMatrix<f64> {
    let nf = free.len();
    let mut jac = DMatrix::zeros(m, nf);

    let mut full = DMatrix::zeros(m, specs.len());
    if model.jacobian(x, &mut full) {
        for (k, &j) in free.iter().enumerate() {
            let dx_dz = match specs[j].scale {
                ParamScale::Linear => 1.0,
                ParamScale::LogPositive => x[j],
            };
            for i in 0..m {
                jac[(i, k)] = full[(i, j)] * dx_dz;
            }
        }
        if jac.iter().all(|v| v.is_finite()) {
            return jac;
        }
        // Fall back to differences when the analytic values misbehave.
        jac.fill(0.0);
    }

    for k in 0..nf {
        let mut h = fd_rel_step * z[k].abs().max(1.0);
        let mut filled = false;
        for _ in 0..8 {
            let mut z_hi = z.clone();
            z_hi[k] += h;
            let mut z_lo = z.clone();
            z_lo[k] -= h;
            let hi = eval_cost(model, &compose_x(specs, free, &z_hi), m);
            let lo = eval_cost(model, &compose_x(specs, free, &z_lo), m);
            if let (Some((r_hi, _)), Some((r_lo, _))) = (hi, lo) {
                let scale = 0.5 / h;
                for i in 0..m {
                    jac[(i, k)] = (r_hi[i] - r_lo[i]) * scale;
                }
                filled = true;
                break;
            }
            h *= 0.125;
        }
        if !filled {
            // The model is non-finite on both sides at every tried step; a
            // zero column lets the damped solve and the gradient test treat
            // the parameter as locally uninformative.
            for i in 0..m {
                jac[(i, k)] = 0.0;
            }
        }
    }
    jac
}

/// Minimizes the squared residual norm of `model` over the free parameters.
///
/// Free parameters move in an internal coordinate (identity or log); the
/// damped normal equations (J^T J + lambda diag) delta = -J^T r are solved by
/// Cholesky factorization, with lambda shrinking on accepted steps and
/// growing on rejected ones. Deterministic for identical inputs.
pub fn nlls_solve(
    model: &dyn ResidualModel,
    specs: &[ParamSpec],
    options: &LmOptions,
) -> Result<FitResult> {
    let m = model.residual_count();
    if m == 0 {
        return Err(Error::EmptyAxis { name: "residuals" });
    }
    for spec in specs {
        if !spec.initial.is_finite() {
            return Err(Error::BadInitialGuess {
                name: spec.name,
                detail: format!("initial value {} is not finite", spec.initial),
            });
        }
        if spec.scale == ParamScale::LogPositive && spec.initial <= 0.0 {
            return Err(Error::BadInitialGuess {
                name: spec.name,
                detail: format!(
                    "initial value {} must be positive for a log-scaled parameter",
                    spec.initial
                ),
            });
        }
    }
    let free: Vec<usize> = (0..specs.len()).filter(|&j| !specs[j].frozen).collect();
    let nf = free.len();
    if m < nf {
        return Err(Error::TooFewPoints {
            operation: "nlls_solve",
            required: nf,
            actual: m,
        });
    }

    let mut z = DVector::from_iterator(
        nf,
        free.iter().map(|&j| match specs[j].scale {
            ParamScale::Linear => specs[j].initial,
            ParamScale::LogPositive => specs[j].initial.ln(),
        }),
    );
    let mut x = compose_x(specs, &free, &z);
    let (mut r, mut cost) = eval_cost(model, &x, m).ok_or(Error::NonFiniteModel)?;

    let mut lambda = 1.0e-3;
    let mut converged = nf == 0;
    let mut iterations = 0;
    let mut note: Option<String> = None;

    while !converged && iterations < options.max_iterations {
        iterations += 1;
        let jac = jacobian_in_z(model, specs, &free, &z, &x, m, options.fd_rel_step);
        let grad = jac.transpose() * &r;
        let normal = jac.transpose() * &jac;

        let residual_scale = cost.sqrt();
        if residual_scale == 0.0 {
            converged = true;
            break;
        }
        let mut worst = 0.0_f64;
        for k in 0..nf {
            let col_norm = jac.column(k).norm();
            if col_norm > 0.0 {
                worst = worst.max(grad[k].abs() / (col_norm * residual_scale));
            }
        }
        if worst <= options.grad_tol {
            converged = true;
            break;
        }

        let max_diag = normal.diagonal().max();
        if !(max_diag > 0.0) || !max_diag.is_finite() {
            return Err(Error::SingularNormalEquations {
                condition: f64::INFINITY,
                params: param_names(specs),
            });
        }
        let diag_floor = 1.0e-12 * max_diag;

        let mut accepted = false;
        loop {
            let mut damped = normal.clone();
            for k in 0..nf {
                damped[(k, k)] += lambda * normal[(k, k)].max(diag_floor);
            }
            let Some(chol) = Cholesky::new(damped) else {
                lambda *= 10.0;
                if lambda > 1.0e16 {
                    let min_diag = normal.diagonal().min().max(diag_floor);
                    return Err(Error::SingularNormalEquations {
                        condition: max_diag / min_diag,
                        params: param_names(specs),
                    });
                }
                continue;
            };
            let delta = chol.solve(&(-&grad));
            let z_trial = &z + &delta;
            let x_trial = compose_x(specs, &free, &z_trial);
            if let Some((r_trial, cost_trial)) = eval_cost(model, &x_trial, m) {
                if cost_trial < cost {
                    let drop = cost - cost_trial;
                    let predicted =
                        -(2.0 * grad.dot(&delta) + (&normal * &delta).dot(&delta));
                    let stalled = drop <= options.cost_rel_tol * cost
                        && predicted <= options.cost_rel_tol * cost;
                    z = z_trial;
                    x = x_trial;
                    r = r_trial;
                    cost = cost_trial;
                    lambda = (lambda / 3.0).max(1.0e-12);
                    accepted = true;
                    if stalled {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
            if lambda > 1.0e16 {
                break;
            }
        }
        if !accepted {
            // Damping ran out: even the steepest-descent limit of the step
            // family cannot lower the cost, so the iterate already sits at a
            // minimum as representable in floating point.
            note = Some("cost at machine precision floor".to_string());
            converged = true;
            break;
        }
    }

    // Covariance from the linearization at the solution.
    let mut variances = vec![0.0; nf];
    if nf > 0 {
        let jac = jacobian_in_z(model, specs, &free, &z, &x, m, options.fd_rel_step);
        let normal = jac.transpose() * &jac;
        let dof = m.saturating_sub(nf);
        let s2 = if dof > 0 { cost / dof as f64 } else { 0.0 };
        let inverse = Cholesky::new(normal.clone()).map(|c| c.inverse()).or_else(|| {
            let ridge = 1.0e-12 * normal.diagonal().max().max(f64::MIN_POSITIVE);
            let mut ridged = normal;
            for k in 0..nf {
                ridged[(k, k)] += ridge;
            }
            Cholesky::new(ridged).map(|c| c.inverse())
        });
        match inverse {
            Some(inv) => {
                for (k, &j) in free.iter().enumerate() {
                    let var_z = (s2 * inv[(k, k)]).max(0.0);
                    variances[k] = match specs[j].scale {
                        ParamScale::Linear => var_z,
                        ParamScale::LogPositive => var_z * x[j] * x[j],
                    };
                }
            }
            None => {
                let text = "covariance unavailable: normal equations singular".to_string();
                note = Some(match note {
                    Some(prev) => format!("{prev}; {text}"),
                    None => text,
                });
            }
        }
    }

    let mut parameters = Vec::with_capacity(specs.len());
    let mut free_cursor = 0;
    for (j, spec) in specs.iter().enumerate() {
        let variance = if spec.frozen {
            0.0
        } else {
            let v = variances[free_cursor];
            free_cursor += 1;
            v
        };
        parameters.push(FittedParam {
            name: spec.name,
            value: x[j],
            variance,
            frozen: spec.frozen,
        });
    }

    Ok(FitResult {
        parameters,
        residual_norm: cost.sqrt(),
        iterations,
        converged,
        note,
    })
}

fn param_names(specs: &[ParamSpec]) -> String {
    specs
        .iter()
        .map(|s| s.name)
        .collect::<Vec<_>>()
        .join(", ")
}

/// Adapts a scalar curve y = f(x, params) with optional per-point weights to
/// the residual interface. Weights multiply squared residuals, so a zero
/// weight excludes a point.
pub struct CurveModel<'a, F, J = fn(f64, &[f64], &mut [f64])> {
    x: &'a [f64],
    y: &'a [f64],
    weights: Option<&'a [f64]>,
    f: F,
    jac: Option<J>,
}

impl<'a, F> CurveModel<'a, F>
where
    F: Fn(f64, &[f64]) -> f64,
{
    pub fn new(x: &'a [f64], y: &'a [f64], f: F) -> Result<Self> {
        check_lengths(x, y)?;
        Ok(Self {
            x,
            y,
            weights: None,
            f,
            jac: None,
        })
    }
}

impl<'a, F, J> CurveModel<'a, F, J>
where
    F: Fn(f64, &[f64]) -> f64,
    J: Fn(f64, &[f64], &mut [f64]),
{
    /// Curve with an analytic gradient: `jac(x, params, out)` writes
    /// d f / d param_j into `out`.
    pub fn with_jacobian(x: &'a [f64], y: &'a [f64], f: F, jac: J) -> Result<Self> {
        check_lengths(x, y)?;
        Ok(Self {
            x,
            y,
            weights: None,
            f,
            jac: Some(jac),
        })
    }

    pub fn weighted(mut self, weights: &'a [f64]) -> Result<Self> {
        if weights.len() != self.x.len() {
            return Err(Error::LengthMismatch {
                left_name: "weights",
                left: weights.len(),
                right_name: "x",
                right: self.x.len(),
            });
        }
        if let Some(&w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::NonPositive {
                name: "weight",
                value: w,
            });
        }
        self.weights = Some(weights);
        Ok(self)
    }

    fn sqrt_weight(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i].sqrt())
    }
}

fn check_lengths(x: &[f64], y: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::EmptyAxis { name: "x" });
    }
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left_name: "x",
            left: x.len(),
            right_name: "y",
            right: y.len(),
        });
    }
    Ok(())
}

impl<F, J> ResidualModel for CurveModel<'_, F, J>
where
    F: Fn(f64, &[f64]) -> f64,
    J: Fn(f64, &[f64], &mut [f64]),
{
    fn residual_count(&self) -> usize {
        self.x.len()
    }

    fn residuals(&self, params: &[f64], out: &mut [f64]) {
        for (i, (&x, &y)) in self.x.iter().zip(self.y.iter()).enumerate() {
            out[i] = self.sqrt_weight(i) * ((self.f)(x, params) - y);
        }
    }

    fn jacobian(&self, params: &[f64], out: &mut DMatrix<f64>) -> bool {
        let Some(jac) = &self.jac else {
            return false;
        };
        let mut row = vec![0.0; params.len()];
        for i in 0..self.x.len() {
            jac(self.x[i], params, &mut row);
            let w = self.sqrt_weight(i);
            for (j, &d) in row.iter().enumerate() {
                out[(i, j)] = w * d;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_model_matches_closed_form_weighted_solution() {
        let x: [f64; 6] = [0.5, 1.0, 2.0, 3.5, 4.0, 6.0];
        let w = [1.0, 2.0, 1.0, 0.5, 1.5, 1.0];
        let y: Vec<f64> = x.iter().map(|v| 2.75 * v + 0.01 * (v * 3.0).sin()).collect();
        let model = CurveModel::new(&x, &y, |xi, p| p[0] * xi)
            .unwrap()
            .weighted(&w)
            .unwrap();
        let fit = nlls_solve(
            &model,
            &[ParamSpec::linear("slope", 1.0)],
            &LmOptions::default(),
        )
        .unwrap();

        let num: f64 = x.iter().zip(&y).zip(&w).map(|((x, y), w)| w * x * y).sum();
        let den: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        let closed_form = num / den;
        assert!(fit.converged);
        assert!((fit.value("slope") - closed_form).abs() <= 1.0e-10 * closed_form.abs());

        // Closed-form variance of the weighted through-origin slope.
        let m = x.len() as f64;
        let chi2: f64 = x
            .iter()
            .zip(&y)
            .zip(&w)
            .map(|((x, y), w)| w * (y - closed_form * x).powi(2))
            .sum();
        let var = chi2 / (m - 1.0) / den;
        assert!((fit.param("slope").unwrap().variance - var).abs() <= 1.0e-8 * var);
    }

    #[test]
    fn exponential_decay_recovers_in_log_space() {
        let x: Vec<f64> = (0..40).map(|k| k as f64 * 0.25).collect();
        let truth = [3.0, 0.7];
        let y: Vec<f64> = x.iter().map(|&xi| truth[0] * (-truth[1] * xi).exp()).collect();
        let model = CurveModel::new(&x, &y, |xi, p| p[0] * (-p[1] * xi).exp()).unwrap();
        let fit = nlls_solve(
            &model,
            &[
                ParamSpec::log_positive("amplitude", 1.0),
                ParamSpec::log_positive("rate", 0.2),
            ],
            &LmOptions::default(),
        )
        .unwrap();
        assert!(fit.converged);
        assert!((fit.value("amplitude") - truth[0]).abs() < 1.0e-8 * truth[0]);
        assert!((fit.value("rate") - truth[1]).abs() < 1.0e-8 * truth[1]);
    }

    #[test]
    fn frozen_parameters_do_not_move_and_carry_zero_variance() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [3.1, 5.2, 6.8, 9.1];
        let model = CurveModel::new(&x, &y, |xi, p| p[0] * xi + p[1]).unwrap();
        let fit = nlls_solve(
            &model,
            &[
                ParamSpec::linear("slope", 1.0),
                ParamSpec::linear("intercept", 0.5).frozen(),
            ],
            &LmOptions::default(),
        )
        .unwrap();
        let intercept = fit.param("intercept").unwrap();
        assert_eq!(intercept.value, 0.5);
        assert_eq!(intercept.variance, 0.0);
        assert!(intercept.frozen);
    }

    #[test]
    fn iteration_cap_returns_best_point_unconverged() {
        let x: Vec<f64> = (0..30).map(|k| k as f64 * 0.3).collect();
        let y: Vec<f64> = x.iter().map(|&xi| 5.0 * (-1.3 * xi).exp() + 0.2).collect();
        let model =
            CurveModel::new(&x, &y, |xi, p| p[0] * (-p[1] * xi).exp() + p[2]).unwrap();
        let options = LmOptions {
            max_iterations: 1,
            ..LmOptions::default()
        };
        let fit = nlls_solve(
            &model,
            &[
                ParamSpec::log_positive("amplitude", 1.0),
                ParamSpec::log_positive("rate", 3.0),
                ParamSpec::linear("offset", 0.0),
            ],
            &options,
        )
        .unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 1);
    }

    #[test]
    fn bad_initial_guesses_are_rejected_up_front() {
        let x = [1.0, 2.0];
        let y = [1.0, 2.0];
        let model = CurveModel::new(&x, &y, |xi, p| p[0] * xi).unwrap();
        let err = nlls_solve(
            &model,
            &[ParamSpec::log_positive("rate", -1.0)],
            &LmOptions::default(),
        );
        assert!(matches!(err, Err(Error::BadInitialGuess { .. })));
    }

    #[test]
    fn more_points_than_free_parameters_required() {
        let x = [1.0];
        let y = [2.0];
        let model = CurveModel::new(&x, &y, |xi, p| p[0] * xi + p[1]).unwrap();
        let err = nlls_solve(
            &model,
            &[ParamSpec::linear("a", 1.0), ParamSpec::linear("b", 0.0)],
            &LmOptions::default(),
        );
        assert!(matches!(err, Err(Error::TooFewPoints { .. })));
    }
}
