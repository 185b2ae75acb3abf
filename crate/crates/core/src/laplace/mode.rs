use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dist::LN_2PI;
use crate::error::{Error, Result};
use crate::model::{BetaMixedModel, BlockCholesky, Curvature, HyperPoint};

/// Inner Newton settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonOptions {
    /// Max-norm gradient tolerance.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100, max_halvings: 30 }
    }
}

/// Gaussian approximation of `x | theta, y`.
#[derive(Debug, Clone)]
pub struct ConditionalMode {
    pub latent: DVector<f64>,
    /// Factor of the negative Hessian at the mode (the precision of the approximation).
    pub precision: BlockCholesky,
    /// `log p(y | x*, theta) + log p(x* | theta)`.
    pub objective: f64,
    pub iterations: usize,
    /// Whether any step used expected instead of observed curvature.
    pub used_expected_curvature: bool,
}

/// Starting latent vector: intercept at the link of the mean response, everything else zero.
pub fn cold_start(model: &BetaMixedModel) -> DVector<f64> {
    let y = model.response();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let mut x = DVector::zeros(model.latent_dim());
    x[model.design().beta_offset()] = model.link().eval(mean);
    x
}

/// Newton ascent with step halving on the latent objective for fixed `theta`.
pub fn find_conditional_mode(
    model: &BetaMixedModel,
    theta: &HyperPoint,
    start: Option<&DVector<f64>>,
    opts: &NewtonOptions,
) -> Result<ConditionalMode> {
    let mut x = match start {
        Some(s) if s.len() == model.latent_dim() => s.clone(),
        _ => cold_start(model),
    };
    let mut f = model.latent_objective(x.as_slice(), theta);
    if !f.is_finite() {
        x = cold_start(model);
        f = model.latent_objective(x.as_slice(), theta);
        if !f.is_finite() {
            return Err(Error::Domain(format!("latent objective not finite at {theta:?}")));
        }
    }
    let mut used_expected = false;
    let mut trace = Vec::new();
    for it in 0..=opts.max_iter {
        let der = model.derivatives(x.as_slice(), theta, Curvature::Observed);
        let gmax = der.gradient.amax();
        trace.push(gmax);
        let observed = der.neg_hessian.factor();
        if gmax < opts.tol {
            if let Ok(precision) = observed {
                return Ok(ConditionalMode { latent: x, precision, objective: f, iterations: it, used_expected_curvature: used_expected });
            }
        }
        if it == opts.max_iter {
            break;
        }
        let chol = match observed {
            Ok(c) => c,
            Err(_) => {
                used_expected = true;
                model.derivatives(x.as_slice(), theta, Curvature::Expected).neg_hessian.factor()?
            }
        };
        let step = chol.solve(&der.gradient);
        let decrement = step.dot(&der.gradient);
        let mut t = 1.0;
        let mut moved = false;
        // tolerate rounding noise in the objective near the mode
        let slack = 1e-12 * (1.0 + f.abs());
        for _ in 0..=opts.max_halvings {
            let xn = &x + t * &step;
            let fnew = model.latent_objective(xn.as_slice(), theta);
            if fnew.is_finite() && fnew >= f - slack {
                x = xn;
                f = fnew;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            // at the noise floor of the objective: accept if the Newton decrement is negligible
            if decrement.abs() < 1e-12 * (1.0 + f.abs()) {
                let precision = model.derivatives(x.as_slice(), theta, Curvature::Observed).neg_hessian.factor()?;
                return Ok(ConditionalMode { latent: x, precision, objective: f, iterations: it, used_expected_curvature: used_expected });
            }
            return Err(Error::NonConvergence { stage: "conditional mode line search", iterations: it, grad_norm: gmax, trace });
        }
    }
    let gmax = *trace.last().unwrap_or(&f64::NAN);
    Err(Error::NonConvergence { stage: "conditional mode", iterations: opts.max_iter, grad_norm: gmax, trace })
}

/// Laplace approximation of `log p(theta, y)` (internal scale), plus the conditional mode used.
pub fn log_posterior_theta(
    model: &BetaMixedModel,
    theta: &HyperPoint,
    start: Option<&DVector<f64>>,
    opts: &NewtonOptions,
) -> Result<(f64, ConditionalMode)> {
    let mode = find_conditional_mode(model, theta, start, opts)?;
    let d = model.latent_dim() as f64;
    let lp = mode.objective + theta.log_hyperprior(model.priors())? + 0.5 * d * LN_2PI - 0.5 * mode.precision.logdet();
    if !lp.is_finite() {
        return Err(Error::Domain(format!("Laplace log posterior not finite at {theta:?}")));
    }
    Ok((lp, mode))
}
