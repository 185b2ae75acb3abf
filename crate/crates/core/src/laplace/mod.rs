//! Nested Laplace approximation: Gaussian conditionals for the latent field,
//! a Laplace-approximated hyperparameter posterior on a standardized
//! lattice, and mixture marginals.

mod lattice;
mod mode;

use std::cell::RefCell;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use lattice::{build_lattice, standardizing_transform, Lattice, LatticeOptions, LatticePoint};
pub use mode::{cold_start, find_conditional_mode, log_posterior_theta, ConditionalMode, NewtonOptions};

use crate::error::{Error, Result};
use crate::marginal::{gaussian_mixture, kernel_marginal, MarginalDensity, Scale};
use crate::model::{BetaMixedModel, Dataset, HyperPoint, ModelSpec};
use crate::optim::{maximize, numerical_hessian, BfgsOptions};
use crate::prior::PriorSpec;
use crate::selection::{self, Criteria};

/// Tuning of the deterministic engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaplaceConfig {
    pub z_step: f64,
    pub log_cutoff: f64,
    pub max_z: f64,
    pub max_points: usize,
    /// Points per tabulated marginal.
    pub density_points: usize,
    /// Kernel bandwidth for hyperparameter marginals, in units of `z_step` times the marginal sd.
    pub bandwidth: f64,
    /// Finite-difference step for the curvature of the hyperparameter posterior.
    pub hessian_step: f64,
    pub newton: NewtonOptions,
    /// Compute DIC, LML and CPO as part of the fit.
    pub criteria: bool,
}

impl Default for LaplaceConfig {
    fn default() -> Self {
        Self {
            z_step: 0.75,
            log_cutoff: 6.0,
            max_z: 8.0,
            max_points: 50_000,
            density_points: 401,
            bandwidth: 0.6,
            hessian_step: 5e-3,
            newton: NewtonOptions::default(),
            criteria: true,
        }
    }
}

impl LaplaceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.z_step > 0.0 && self.log_cutoff > 0.0 && self.max_z >= self.z_step && self.density_points >= 11) {
            return Err(Error::InvalidInput(format!("invalid Laplace configuration {self:?}")));
        }
        Ok(())
    }
}

/// Gaussian conditional at one lattice point.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub theta: HyperPoint,
    pub log_post: f64,
    pub weight: f64,
    pub mode: ConditionalMode,
    /// Marginal variances of the latent field under the conditional Gaussian.
    pub latent_var: DVector<f64>,
}

/// Hyperparameter lattice with weights and conditional moments.
#[derive(Debug, Clone)]
pub struct ThetaGrid {
    pub points: Vec<GridPoint>,
    pub mode: HyperPoint,
    pub mode_log_post: f64,
    /// Negative Hessian of the log posterior of `theta` at the mode.
    pub curvature: DMatrix<f64>,
    pub z_step: f64,
    pub log_cell_volume: f64,
    pub failed_points: usize,
}

impl ThetaGrid {
    pub fn weights(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.weight).collect()
    }

    /// `log ∫ p(theta, y) dtheta` by the lattice rule.
    pub fn log_integral(&self) -> f64 {
        let m = self.points.iter().map(|p| p.log_post).fold(f64::NEG_INFINITY, f64::max);
        m + self.points.iter().map(|p| (p.log_post - m).exp()).sum::<f64>().ln() + self.log_cell_volume
    }
}

/// Crude starting point for the hyperparameter search.
pub fn initial_theta(model: &BetaMixedModel) -> HyperPoint {
    let y = model.response();
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    let v = y.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n.max(2.0);
    let phi = if v > 0.0 { (m * (1.0 - m) / v - 1.0).clamp(1.0, 1e4) } else { 100.0 };
    let d = model.design();
    let log_tau = if d.q() > 0 {
        let link = model.link();
        let means: Vec<f64> = (0..d.n_groups())
            .map(|g| {
                let rows = d.group_rows(g);
                rows.iter().map(|&i| link.eval(y[i])).sum::<f64>() / rows.len() as f64
            })
            .collect();
        let gm = means.iter().sum::<f64>() / means.len() as f64;
        let gv = means.iter().map(|a| (a - gm).powi(2)).sum::<f64>() / (means.len() as f64 - 1.0).max(1.0);
        (1.0 / gv.max(1e-3)).clamp(1.0, 1e3).ln()
    } else {
        0.0
    };
    match d.q() {
        0 => HyperPoint::Phi { log_phi: phi.ln() },
        1 => HyperPoint::Scalar { log_phi: phi.ln(), log_tau },
        _ => HyperPoint::Pair { log_phi: phi.ln(), log_tau1: log_tau, log_tau2: log_tau, z_rho: 0.0 },
    }
}

/// Mode of the Laplace log posterior of `theta` (internal scale), its negative
/// Hessian and the conditional Gaussian there.
pub fn hyper_mode(model: &BetaMixedModel, cfg: &LaplaceConfig) -> Result<(Vec<f64>, DMatrix<f64>, ConditionalMode)> {
    cfg.validate()?;
    let q = model.design().q();
    let warm: RefCell<Option<DVector<f64>>> = RefCell::new(None);
    let objective = |v: &[f64]| -> f64 {
        let Ok(theta) = HyperPoint::from_slice(q, v) else { return f64::NEG_INFINITY };
        let start = warm.borrow().clone();
        match log_posterior_theta(model, &theta, start.as_ref(), &cfg.newton) {
            Ok((lp, mode)) => {
                *warm.borrow_mut() = Some(mode.latent);
                lp
            }
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let x0 = initial_theta(model).to_vec();
    let opt = maximize(objective, &x0, &BfgsOptions::default())?;
    let mut obj2 = objective;
    let neg_hessian = -numerical_hessian(&mut obj2, &opt.x, cfg.hessian_step);
    let theta = HyperPoint::from_slice(q, &opt.x)?;
    let start = warm.borrow().clone();
    let (_, mode) = log_posterior_theta(model, &theta, start.as_ref(), &cfg.newton)?;
    Ok((opt.x, neg_hessian, mode))
}

/// Maximizes the Laplace log posterior of `theta`, then tabulates the lattice.
pub fn explore_theta(model: &BetaMixedModel, cfg: &LaplaceConfig) -> Result<ThetaGrid> {
    let q = model.design().q();
    let (center, neg_hessian, center_mode) = hyper_mode(model, cfg)?;
    let center_theta = HyperPoint::from_slice(q, &center)?;
    let center_latent = center_mode.latent.clone();
    let lat = build_lattice(
        &center,
        &neg_hessian,
        &LatticeOptions { z_step: cfg.z_step, log_cutoff: cfg.log_cutoff, max_z: cfg.max_z, max_points: cfg.max_points },
        |c: &[f64]| {
            let theta = HyperPoint::from_slice(q, c)?;
            let (lp, mode) = log_posterior_theta(model, &theta, Some(&center_latent), &cfg.newton)?;
            Ok((lp, (theta, mode)))
        },
    )?;
    let lat_center_lp = lat
        .points
        .iter()
        .find(|p| p.index.iter().all(|&k| k == 0))
        .map(|p| p.log_post)
        .unwrap_or(f64::NAN);
    let points = lat
        .points
        .into_iter()
        .zip(lat.weights)
        .map(|(p, weight)| {
            let (theta, mode) = p.payload;
            let latent_var = mode.precision.marginal_variances();
            GridPoint { theta, log_post: p.log_post, weight, mode, latent_var }
        })
        .collect();
    Ok(ThetaGrid {
        points,
        mode: center_theta,
        mode_log_post: lat_center_lp,
        curvature: neg_hessian,
        z_step: cfg.z_step,
        log_cell_volume: lat.log_cell_volume,
        failed_points: lat.failed,
    })
}

/// Natural-scale hyperparameters of a point with their smoothing scales.
/// The order is [`HyperPoint::names`], followed by the implied correlation when `q = 2`.
pub fn hyper_values(theta: &HyperPoint) -> Vec<(&'static str, f64, Scale)> {
    let n = theta.natural();
    let mut out = vec![("phi", n.phi, Scale::Log)];
    if let Some(t) = n.tau1_sq {
        out.push(("tau1_sq", t, Scale::Log));
    }
    if let (Some(t2), Some(r), Some(c)) = (n.tau2_sq, n.rho, n.correlation) {
        out.push(("tau2_sq", t2, Scale::Log));
        out.push(("rho", r, Scale::Identity));
        out.push(("correlation", c, Scale::Atanh));
    }
    out
}

/// Marginal of hyperparameter `j` (index into [`hyper_values`]).
pub fn marginal_hyper(j: usize, grid: &ThetaGrid, cfg: &LaplaceConfig) -> Result<MarginalDensity> {
    let vals: Vec<(&'static str, f64, Scale)> = grid.points.iter().map(|p| hyper_values(&p.theta)[j]).collect();
    let (name, _, scale) = *vals.first().ok_or_else(|| Error::InvalidInput("empty grid".into()))?;
    let x: Vec<f64> = vals.iter().map(|v| v.1).collect();
    kernel_marginal(name, &x, &grid.weights(), scale, cfg.bandwidth * cfg.z_step, cfg.density_points)
}

/// Gaussian-mixture marginal of latent coordinate `k`.
pub fn marginal_latent(k: usize, name: &str, grid: &ThetaGrid, cfg: &LaplaceConfig) -> Result<MarginalDensity> {
    let comps: Vec<(f64, f64, f64)> =
        grid.points.iter().map(|p| (p.weight, p.mode.latent[k], p.latent_var[k])).collect();
    gaussian_mixture(name, &comps, cfg.density_points, 7.0)
}

/// Output of [`fit_laplace`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: BetaMixedModel,
    pub spec: ModelSpec,
    pub grid: ThetaGrid,
    /// One marginal per model parameter: coefficients, then hyperparameters.
    pub marginals: Vec<MarginalDensity>,
    /// Derived quantities (the implied correlation for two random effects).
    pub derived: Vec<MarginalDensity>,
    pub criteria: Option<Criteria>,
    pub elapsed_secs: f64,
}

impl FitResult {
    pub fn marginal(&self, name: &str) -> Option<&MarginalDensity> {
        self.marginals.iter().chain(&self.derived).find(|m| m.name == name)
    }

    pub fn param_names(&self) -> Vec<String> {
        self.marginals.iter().map(|m| m.name.clone()).collect()
    }

    pub fn posterior_means(&self) -> Vec<(String, f64)> {
        self.marginals.iter().map(|m| (m.name.clone(), m.mean)).collect()
    }

    pub fn priors(&self) -> &PriorSpec {
        self.model.priors()
    }
}

/// Full deterministic pipeline on a prepared model.
pub fn fit_model(model: BetaMixedModel, spec: &ModelSpec, cfg: &LaplaceConfig) -> Result<FitResult> {
    let started = Instant::now();
    let grid = explore_theta(&model, cfg)?;
    let design = model.design();
    let mut marginals = Vec::new();
    for (k, name) in design.beta_names().iter().enumerate() {
        marginals.push(marginal_latent(design.beta_offset() + k, name, &grid, cfg)?);
    }
    let n_hyper = hyper_values(&grid.mode).len();
    let n_model = HyperPoint::names(design.q()).len();
    let mut derived = Vec::new();
    for j in 0..n_hyper {
        let m = marginal_hyper(j, &grid, cfg)?;
        if j < n_model {
            marginals.push(m);
        } else {
            derived.push(m);
        }
    }
    let criteria = if cfg.criteria { Some(selection::criteria(&model, &grid)?) } else { None };
    Ok(FitResult {
        model,
        spec: spec.clone(),
        grid,
        marginals,
        derived,
        criteria,
        elapsed_secs: started.elapsed().as_secs_f64(),
    })
}

/// Builds the model and runs the deterministic pipeline.
pub fn fit_laplace(data: &Dataset, spec: &ModelSpec, priors: &PriorSpec, cfg: &LaplaceConfig) -> Result<FitResult> {
    let model = BetaMixedModel::new(data, spec, priors.clone())?;
    fit_model(model, spec, cfg)
}
