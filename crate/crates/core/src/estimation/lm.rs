//! Levenberg–Marquardt weighted least squares with Marquardt diagonal scaling.
//!
//! Parameters are optimised in internal coordinates `u`: identity for
//! [`Transform::Linear`], `u = ln θ` for [`Transform::Log`]. Bounds are given in
//! natural units and enforced by clamping trial points.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Linear,
    /// Positive parameter fitted as its logarithm.
    Log,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub initial: f64,
    pub transform: Transform,
    pub lower: f64,
    pub upper: f64,
}

impl ParamSpec {
    pub fn linear(name: impl Into<String>, initial: f64) -> Self {
        ParamSpec {
            name: name.into(),
            initial,
            transform: Transform::Linear,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    pub fn log(name: impl Into<String>, initial: f64) -> Self {
        ParamSpec {
            name: name.into(),
            initial,
            transform: Transform::Log,
            lower: 0.0,
            upper: f64::INFINITY,
        }
    }

    pub fn bounded(mut self, lower: f64, upper: f64) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    fn to_internal(&self, theta: f64) -> f64 {
        match self.transform {
            Transform::Linear => theta,
            Transform::Log => theta.ln(),
        }
    }

    fn to_natural(&self, u: f64) -> f64 {
        let theta = match self.transform {
            Transform::Linear => u,
            Transform::Log => u.exp(),
        };
        theta.clamp(self.lower, self.upper)
    }

    /// dθ/du at θ.
    fn derivative(&self, theta: f64) -> f64 {
        match self.transform {
            Transform::Linear => 1.0,
            Transform::Log => theta,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Converged when the relative χ² decrease of an accepted step falls below this.
    pub chi2_rtol: f64,
    /// Converged when the internal step norm falls below this.
    pub step_tol: f64,
    /// Relative forward-difference step for the numerical Jacobian.
    pub fd_step: f64,
    pub initial_damping: f64,
    /// Damping beyond which the fit is abandoned as ill-conditioned.
    pub max_damping: f64,
    /// Multiply the covariance by the reduced χ² (for data with unknown absolute σ).
    pub scale_covariance: bool,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 200,
            chi2_rtol: 1e-10,
            step_tol: 1e-12,
            fd_step: 1e-6,
            initial_damping: 1e-3,
            max_damping: 1e12,
            scale_covariance: false,
        }
    }
}

/// Vectorised model: natural parameters and abscissae to predictions.
pub type Model<'a> = Box<dyn Fn(&[f64], &[f64]) -> Result<Vec<f64>> + Send + Sync + 'a>;
/// Analytic Jacobian ∂prediction/∂θ in natural parameters, one row per datum.
pub type Jacobian<'a> = Box<dyn Fn(&[f64], &[f64]) -> Vec<Vec<f64>> + Send + Sync + 'a>;

pub struct FitProblem<'a> {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub sigma: Vec<f64>,
    pub params: Vec<ParamSpec>,
    pub model: Model<'a>,
    pub jacobian: Option<Jacobian<'a>>,
    pub options: LmOptions,
}

impl<'a> FitProblem<'a> {
    pub fn new<M>(
        x: Vec<f64>,
        y: Vec<f64>,
        sigma: Vec<f64>,
        params: Vec<ParamSpec>,
        model: M,
    ) -> Self
    where
        M: Fn(&[f64], &[f64]) -> Result<Vec<f64>> + Send + Sync + 'a,
    {
        FitProblem {
            x,
            y,
            sigma,
            params,
            model: Box::new(model),
            jacobian: None,
            options: LmOptions::default(),
        }
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&[f64], &[f64]) -> Vec<Vec<f64>> + Send + Sync + 'a,
    {
        self.jacobian = Some(Box::new(jac));
        self
    }

    pub fn with_options(mut self, options: LmOptions) -> Self {
        self.options = options;
        self
    }

    fn validate(&self) -> Result<()> {
        let n = self.y.len();
        for (name, len) in [("x", self.x.len()), ("sigma", self.sigma.len())] {
            if len != n {
                return Err(Error::LengthMismatch {
                    left: "y",
                    left_len: n,
                    right: name,
                    right_len: len,
                });
            }
        }
        if n < self.params.len() {
            return Err(Error::InsufficientData(format!(
                "{n} data points for {} parameters",
                self.params.len()
            )));
        }
        ensure(
            self.sigma.iter().all(|s| *s > 0.0 && s.is_finite()),
            "sigma",
            || "all uncertainties must be positive and finite".into(),
        )?;
        ensure(
            self.y.iter().chain(&self.x).all(|v| v.is_finite()),
            "data",
            || "contains non-finite values".into(),
        )?;
        for p in &self.params {
            ensure(p.lower <= p.upper, "bounds", || {
                format!("`{}` has lower > upper", p.name)
            })?;
            let ok = match p.transform {
                Transform::Linear => p.initial.is_finite(),
                Transform::Log => p.initial > 0.0 && p.initial.is_finite(),
            };
            ensure(ok, "initial", || {
                format!("`{}` = {} is not admissible", p.name, p.initial)
            })?;
        }
        Ok(())
    }

    fn natural(&self, u: &[f64]) -> Vec<f64> {
        self.params
            .iter()
            .zip(u)
            .map(|(p, &ui)| p.to_natural(ui))
            .collect()
    }

    /// Weighted residuals (y − f)/σ, or `None` if the model fails or is non-finite.
    fn residuals(&self, theta: &[f64]) -> Option<Vec<f64>> {
        let f = (self.model)(theta, &self.x).ok()?;
        if f.len() != self.y.len() {
            return None;
        }
        let r: Vec<f64> = self
            .y
            .iter()
            .zip(&f)
            .zip(&self.sigma)
            .map(|((y, f), s)| (y - f) / s)
            .collect();
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    /// Jacobian of the weighted model, ∂(f/σ)/∂u.
    fn jacobian_internal(&self, u: &[f64], r0: &[f64]) -> Option<DMatrix<f64>> {
        let theta = self.natural(u);
        let n = self.y.len();
        let m = u.len();
        let mut j = DMatrix::zeros(n, m);
        if let Some(jac) = &self.jacobian {
            let rows = jac(&theta, &self.x);
            for (i, row) in rows.iter().enumerate().take(n) {
                for k in 0..m {
                    j[(i, k)] = row[k] * self.params[k].derivative(theta[k]) / self.sigma[i];
                }
            }
            return Some(j);
        }
        for k in 0..m {
            let h = self.fd_step(k, u[k]);
            let mut up = u.to_vec();
            up[k] += h;
            let mut theta_p = self.natural(&up);
            // Clamped at a bound: difference backwards instead.
            let (theta_p, sign) = if theta_p[k] == theta[k] {
                up[k] = u[k] - h;
                theta_p = self.natural(&up);
                (theta_p, -1.0)
            } else {
                (theta_p, 1.0)
            };
            let rp = self.residuals(&theta_p)?;
            for i in 0..n {
                // r = (y − f)/σ, so ∂(f/σ)/∂u = −∂r/∂u.
                j[(i, k)] = -(rp[i] - r0[i]) / (sign * h);
            }
        }
        Some(j)
    }

    fn fd_step(&self, k: usize, uk: f64) -> f64 {
        let rel = self.options.fd_step;
        match self.params[k].transform {
            Transform::Log => rel,
            Transform::Linear => {
                let scale = if uk != 0.0 {
                    uk.abs()
                } else if self.params[k].initial != 0.0 {
                    self.params[k].initial.abs()
                } else {
                    1.0
                };
                rel * scale
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Relative χ² change below tolerance.
    Chi2Converged,
    /// Step norm below tolerance.
    StepConverged,
    /// χ² reached zero (exact data).
    ExactFit,
    MaxIterations,
    /// Damping escalated past the limit: normal equations singular or no descent direction.
    DampingExceeded,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(
            self,
            Termination::Chi2Converged | Termination::StepConverged | Termination::ExactFit
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub params: Vec<f64>,
    pub errors: Vec<f64>,
    /// Covariance in natural parameters, row-major.
    pub covariance: Vec<Vec<f64>>,
    pub chi2: f64,
    pub dof: usize,
    pub reduced_chi2: f64,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    pub final_damping: f64,
    /// Rank of the weighted Jacobian at the optimum.
    pub jacobian_rank: usize,
    pub diagnostics: Vec<String>,
}

impl FitResult {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Value and standard error of a named parameter.
    pub fn get(&self, name: &str) -> Option<(f64, f64)> {
        self.index(name).map(|i| (self.params[i], self.errors[i]))
    }

    pub fn value(&self, name: &str) -> f64 {
        self.get(name)
            .unwrap_or_else(|| panic!("no parameter `{name}`"))
            .0
    }

    pub fn error(&self, name: &str) -> f64 {
        self.get(name)
            .unwrap_or_else(|| panic!("no parameter `{name}`"))
            .1
    }

    /// Correlation coefficient between two parameters.
    pub fn correlation(&self, a: usize, b: usize) -> f64 {
        self.covariance[a][b] / (self.covariance[a][a] * self.covariance[b][b]).sqrt()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One line per parameter in `value(error)` notation.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for (i, name) in self.names.iter().enumerate() {
            s.push_str(&format!(
                "{name} = {}\n",
                format_value_error(self.params[i], self.errors[i])
            ));
        }
        s.push_str(&format!(
            "chi2/dof = {:.3} ({} dof), {:?} after {} iterations\n",
            self.reduced_chi2, self.dof, self.termination, self.iterations
        ));
        s
    }
}

/// Formats a value with its one-digit standard error in parenthetical notation,
/// e.g. `15(2)`, `2.3(2)e-4`, `47(20)`.
pub fn format_value_error(value: f64, error: f64) -> String {
    if !value.is_finite() {
        return format!("{value}");
    }
    if !(error > 0.0 && error.is_finite()) {
        return format!("{value:.6e}");
    }
    let mag = if value != 0.0 {
        value.abs().log10().floor() as i32
    } else {
        0
    };
    let (scale_exp, v, e) = if !(-2..5).contains(&mag) {
        let f = 10f64.powi(-mag);
        (Some(mag), value * f, error * f)
    } else {
        (None, value, error)
    };
    let mut err_exp = e.log10().floor() as i32;
    let mut digit = (e / 10f64.powi(err_exp)).round();
    if digit >= 10.0 {
        digit = 1.0;
        err_exp += 1;
    }
    let body = if err_exp >= 0 {
        format!(
            "{}({})",
            v.round() as i64,
            (digit * 10f64.powi(err_exp)) as i64
        )
    } else {
        let decimals = (-err_exp) as usize;
        format!("{v:.decimals$}({})", digit as i64)
    };
    match scale_exp {
        Some(x) => format!("{body}e{x}"),
        None => body,
    }
}

fn solve_damped(a: &DMatrix<f64>, g: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let m = a.nrows();
    let max_diag = (0..m).map(|i| a[(i, i)]).fold(0.0, f64::max);
    if !(max_diag > 0.0) {
        return None;
    }
    let mut damped = a.clone();
    for i in 0..m {
        // Marquardt scaling; parameters without leverage get a floor so the system stays definite.
        let d = a[(i, i)].max(1e-15 * max_diag);
        damped[(i, i)] += lambda * d;
    }
    let step = damped.cholesky()?.solve(g);
    step.iter().all(|v| v.is_finite()).then_some(step)
}

/// Minimises Σ((y − f(θ))/σ)² from the initial parameters.
///
/// Non-convergence is reported in the result, never as an error; errors are
/// reserved for invalid input or a model that fails at the initial point.
pub fn lm_fit(problem: &FitProblem) -> Result<FitResult> {
    problem.validate()?;
    let opts = problem.options;
    let m = problem.params.len();
    let n = problem.y.len();
    let mut u: Vec<f64> = problem
        .params
        .iter()
        .map(|p| p.to_internal(p.initial))
        .collect();
    let mut theta = problem.natural(&u);
    let mut r = problem.residuals(&theta).ok_or_else(|| {
        Error::InsufficientData("model is not finite at the initial parameters".into())
    })?;
    let mut chi2: f64 = r.iter().map(|v| v * v).sum();
    let mut lambda = opts.initial_damping;
    let mut diagnostics = Vec::new();
    let mut iterations = 0;

    let termination = 'outer: loop {
        if chi2 == 0.0 {
            break Termination::ExactFit;
        }
        if iterations >= opts.max_iterations {
            break Termination::MaxIterations;
        }
        iterations += 1;
        let Some(j) = problem.jacobian_internal(&u, &r) else {
            diagnostics.push(format!(
                "Jacobian evaluation failed at iteration {iterations}"
            ));
            break Termination::DampingExceeded;
        };
        let a = j.transpose() * &j;
        let g = j.transpose() * DVector::from_column_slice(&r);

        loop {
            let step = solve_damped(&a, &g, lambda);
            if let Some(step) = step {
                let step_norm = step.norm();
                let u_new: Vec<f64> = u.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                let theta_new = problem.natural(&u_new);
                // Re-derive u from the clamped natural values so bounds are respected.
                let u_new: Vec<f64> = problem
                    .params
                    .iter()
                    .zip(&theta_new)
                    .map(|(p, &t)| p.to_internal(t))
                    .collect();
                if let Some(r_new) = problem.residuals(&theta_new) {
                    let chi2_new: f64 = r_new.iter().map(|v| v * v).sum();
                    if chi2_new <= chi2 {
                        let rel = (chi2 - chi2_new) / chi2;
                        u = u_new;
                        theta = theta_new;
                        r = r_new;
                        chi2 = chi2_new;
                        lambda = (lambda / 10.0).max(1e-15);
                        if rel < opts.chi2_rtol {
                            break 'outer Termination::Chi2Converged;
                        }
                        if step_norm < opts.step_tol {
                            break 'outer Termination::StepConverged;
                        }
                        continue 'outer;
                    }
                }
                if step_norm < opts.step_tol {
                    break 'outer Termination::StepConverged;
                }
            }
            lambda *= 10.0;
            if lambda > opts.max_damping {
                diagnostics.push(format!(
                    "damping exceeded {:e} at iteration {iterations}: normal equations singular or no descent direction",
                    opts.max_damping
                ));
                break 'outer Termination::DampingExceeded;
            }
        }
    };

    // Covariance from the Jacobian at the final point.
    let mut covariance = vec![vec![f64::NAN; m]; m];
    let mut rank = 0;
    if let Some(j) = problem.jacobian_internal(&u, &r) {
        let svd = j.clone().svd(false, true);
        let smax = svd.singular_values.max();
        // Forward differences carry ~√ε relative error, so near-parallel columns only
        // count as independent above that noise level.
        let rel = if problem.jacobian.is_some() {
            1e-12 * (n.max(m) as f64)
        } else {
            1e-7
        };
        let cutoff = smax * rel;
        rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
        if rank < m {
            diagnostics.push(format!(
                "weighted Jacobian has rank {rank} < {m}; parameters are not all identifiable"
            ));
        }
        let a = j.transpose() * &j;
        let inv = a
            .clone()
            .try_inverse()
            .filter(|_| rank == m)
            .or_else(|| a.pseudo_inverse(cutoff * cutoff).ok());
        if let Some(inv) = inv {
            let dof = n.saturating_sub(m).max(1) as f64;
            let s = if opts.scale_covariance {
                chi2 / dof
            } else {
                1.0
            };
            for a in 0..m {
                for b in 0..m {
                    let da = problem.params[a].derivative(theta[a]);
                    let db = problem.params[b].derivative(theta[b]);
                    covariance[a][b] = inv[(a, b)] * da * db * s;
                }
            }
        }
    } else {
        diagnostics
            .push("Jacobian evaluation failed at the optimum; covariance unavailable".into());
    }
    // Symmetrise against rounding.
    for a in 0..m {
        for b in 0..a {
            let v = 0.5 * (covariance[a][b] + covariance[b][a]);
            covariance[a][b] = v;
            covariance[b][a] = v;
        }
    }
    let errors = (0..m).map(|i| covariance[i][i].max(0.0).sqrt()).collect();
    let dof = n - m;
    if termination == Termination::MaxIterations {
        diagnostics.push(format!(
            "no convergence after {} iterations",
            opts.max_iterations
        ));
    }

    Ok(FitResult {
        names: problem.params.iter().map(|p| p.name.clone()).collect(),
        params: theta,
        errors,
        covariance,
        chi2,
        dof,
        reduced_chi2: if dof > 0 { chi2 / dof as f64 } else { f64::NAN },
        converged: termination.converged(),
        termination,
        iterations,
        final_damping: lambda,
        jacobian_rank: rank,
        diagnostics,
    })
}

/// Maximum relative deviation between the forward-difference and analytic Jacobians
/// (both in natural parameters) at `theta`.
pub fn jacobian_discrepancy(problem: &FitProblem, theta: &[f64]) -> Option<f64> {
    let jac = problem.jacobian.as_ref()?;
    let analytic = jac(theta, &problem.x);
    let base = (problem.model)(theta, &problem.x).ok()?;
    let mut worst: f64 = 0.0;
    for k in 0..theta.len() {
        let h = problem.options.fd_step * theta[k].abs().max(1e-300);
        let mut tp = theta.to_vec();
        tp[k] += h;
        let fp = (problem.model)(&tp, &problem.x).ok()?;
        let col_scale = analytic
            .iter()
            .map(|row| row[k].abs())
            .fold(0.0, f64::max)
            .max(1e-300);
        for i in 0..base.len() {
            let fd = (fp[i] - base[i]) / h;
            worst = worst.max((fd - analytic[i][k]).abs() / col_scale);
        }
    }
    Some(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_problem() -> FitProblem<'static> {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.5).collect();
        let y: Vec<f64> = x.iter().map(|x| 2.5 * x - 1.25).collect();
        FitProblem::new(
            x,
            y,
            vec![1.0; 20],
            vec![ParamSpec::linear("a", 1.0), ParamSpec::linear("b", 0.0)],
            |p, x| Ok(x.iter().map(|x| p[0] * x + p[1]).collect()),
        )
    }

    #[test]
    fn exact_linear_fit() {
        let fit = lm_fit(&line_problem()).unwrap();
        assert!(fit.converged, "{:?}", fit.termination);
        assert!((fit.params[0] - 2.5).abs() < 1e-10);
        assert!((fit.params[1] + 1.25).abs() < 1e-10);
    }

    #[test]
    fn linear_errors_match_closed_form() {
        let fit = lm_fit(&line_problem()).unwrap();
        // Unit weights: var(a) = n/Δ, var(b) = Σx²/Δ with Δ = nΣx² − (Σx)².
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.5).collect();
        let n = 20.0;
        let sx: f64 = x.iter().sum();
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let delta = n * sxx - sx * sx;
        assert!((fit.errors[0] - (n / delta).sqrt()).abs() < 1e-6);
        assert!((fit.errors[1] - (sxx / delta).sqrt()).abs() < 1e-6);
        assert!((fit.covariance[0][1] - fit.covariance[1][0]).abs() < 1e-18);
    }

    #[test]
    fn log_parameter_exponential() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.02).collect();
        let y: Vec<f64> = x.iter().map(|t| 3.0 * (-4.0 * t).exp()).collect();
        let problem = FitProblem::new(
            x,
            y,
            vec![0.01; 50],
            vec![ParamSpec::log("amp", 1.0), ParamSpec::log("rate", 0.5)],
            |p, x| Ok(x.iter().map(|t| p[0] * (-p[1] * t).exp()).collect()),
        );
        let fit = lm_fit(&problem).unwrap();
        assert!(fit.converged);
        assert!((fit.value("rate") - 4.0).abs() < 1e-8);
        assert!((fit.value("amp") - 3.0).abs() < 1e-8);
    }

    #[test]
    fn degenerate_parameters_reported() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|x| 2.0 * x).collect();
        let problem = FitProblem::new(
            x,
            y,
            vec![1.0; 10],
            vec![ParamSpec::linear("a", 0.5), ParamSpec::linear("b", 0.5)],
            |p, x| Ok(x.iter().map(|x| (p[0] + p[1]) * x).collect()),
        );
        let fit = lm_fit(&problem).unwrap();
        assert!((fit.params[0] + fit.params[1] - 2.0).abs() < 1e-8);
        assert_eq!(fit.jacobian_rank, 1);
        assert!(
            fit.diagnostics.iter().any(|d| d.contains("rank")),
            "{:?}",
            fit.diagnostics
        );
    }

    #[test]
    fn flat_model_escalates_damping() {
        let problem = FitProblem::new(
            vec![0.0, 1.0, 2.0],
            vec![1.0, 2.0, 3.0],
            vec![1.0; 3],
            vec![ParamSpec::linear("a", 0.0)],
            |_, x| Ok(vec![0.0; x.len()]),
        );
        let fit = lm_fit(&problem).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.termination, Termination::DampingExceeded);
        assert!(fit.diagnostics.iter().any(|d| d.contains("damping")));
    }

    #[test]
    fn max_iterations_flagged() {
        let mut problem = FitProblem::new(
            (0..30).map(|i| i as f64 * 0.1).collect(),
            (0..30).map(|i| (-(i as f64) * 0.3).exp()).collect(),
            vec![1e-3; 30],
            vec![ParamSpec::log("rate", 50.0)],
            |p, x| Ok(x.iter().map(|t| (-p[0] * t).exp()).collect()),
        );
        problem.options.max_iterations = 1;
        let fit = lm_fit(&problem).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.termination, Termination::MaxIterations);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut p = line_problem();
        p.sigma[3] = 0.0;
        assert!(lm_fit(&p).is_err());
        let mut p = line_problem();
        p.y.pop();
        assert!(lm_fit(&p).is_err());
        let p = FitProblem::new(
            vec![1.0],
            vec![1.0],
            vec![1.0],
            vec![ParamSpec::linear("a", 0.0), ParamSpec::linear("b", 0.0)],
            |p, x| Ok(x.iter().map(|x| p[0] * x + p[1]).collect()),
        );
        assert!(lm_fit(&p).is_err());
    }

    #[test]
    fn bounds_are_respected() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|x| -0.5 * x).collect();
        let problem = FitProblem::new(
            x,
            y,
            vec![1.0; 10],
            vec![ParamSpec::linear("a", 1.0).bounded(0.0, 10.0)],
            |p, x| Ok(x.iter().map(|x| p[0] * x).collect()),
        );
        let fit = lm_fit(&problem).unwrap();
        assert!(fit.params[0] >= 0.0);
        assert!(fit.params[0] < 1e-6);
    }

    #[test]
    fn analytic_jacobian_agrees_with_finite_differences() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 * 0.05).collect();
        let y: Vec<f64> = x.iter().map(|t| 2.0 * (-1.5 * t).exp()).collect();
        let problem = FitProblem::new(
            x,
            y,
            vec![0.01; 40],
            vec![ParamSpec::log("amp", 1.0), ParamSpec::log("rate", 1.0)],
            |p, x| Ok(x.iter().map(|t| p[0] * (-p[1] * t).exp()).collect()),
        )
        .with_jacobian(|p, x| {
            x.iter()
                .map(|t| {
                    let e = (-p[1] * t).exp();
                    vec![e, -p[0] * t * e]
                })
                .collect()
        });
        let fit = lm_fit(&problem).unwrap();
        assert!(fit.converged);
        assert!((fit.value("rate") - 1.5).abs() < 1e-9);
        let dev = jacobian_discrepancy(&problem, &fit.params).unwrap();
        assert!(dev < 1e-4, "{dev}");
    }

    #[test]
    fn value_error_notation() {
        assert_eq!(format_value_error(15.2, 2.1), "15(2)");
        assert_eq!(format_value_error(453.2, 3.0), "453(3)");
        assert_eq!(format_value_error(2.31e-4, 0.2e-4), "2.3(2)e-4");
        assert_eq!(format_value_error(47.0, 20.0), "47(20)");
        assert_eq!(format_value_error(90.04, 0.96), "90(1)");
        assert_eq!(format_value_error(1.34e7, 0.05e7), "1.34(5)e7");
        assert_eq!(format_value_error(0.9, 0.0), "9.000000e-1");
    }
}
