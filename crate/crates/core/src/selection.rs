//! Goodness-of-fit criteria from a nested-Laplace fit: DIC, log marginal
//! likelihood and conditional predictive ordinates, plus multi-model tables.
//!
//! Expectations over the latent field use the conditional Gaussian at every
//! lattice point: the linear predictor of row `i` is `N(m_i, v_i)` and its
//! expectation is taken with 32-node Gauss-Hermite quadrature.
//!
//! Sign conventions: deviance is `-2 log L`; `mean_log_cpo` is the average of
//! `ln CPO_i` (higher is better).

use rayon::prelude::*;
use serde::Serialize;

use crate::dist::special::ln_gamma;
use crate::error::{Error, Result};
use crate::laplace::{FitResult, ThetaGrid};
use crate::model::BetaMixedModel;
use crate::quad::gh32;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Criteria {
    pub dic: f64,
    pub p_d: f64,
    pub mean_deviance: f64,
    pub deviance_at_mean: f64,
    /// Log marginal likelihood, up to a model-independent constant.
    pub lml: f64,
    pub cpo: Vec<f64>,
    pub mean_log_cpo: f64,
    /// Rows whose CPO underflowed or was not finite.
    pub cpo_flagged: Vec<usize>,
}

struct PointTerms {
    deviance: f64,
    log_inv_f: Vec<f64>,
}

fn log_sum_exp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = v.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.map(|a| (a - m).exp()).sum::<f64>().ln()
}

fn point_terms(model: &BetaMixedModel, eta_mean: &[f64], eta_var: &[f64], phi: f64) -> PointTerms {
    let (nodes, weights) = gh32();
    let lg = ln_gamma(phi);
    let mut deviance = 0.0;
    let mut log_inv_f = Vec::with_capacity(eta_mean.len());
    for i in 0..eta_mean.len() {
        let s = eta_var[i].max(0.0).sqrt();
        if s == 0.0 {
            let ll = model.row_loglik(i, eta_mean[i], phi, lg);
            deviance -= 2.0 * ll;
            log_inv_f.push(-ll);
            continue;
        }
        let lls: Vec<f64> = nodes.iter().map(|z| model.row_loglik(i, eta_mean[i] + s * z, phi, lg)).collect();
        deviance -= 2.0 * lls.iter().zip(weights).map(|(l, w)| w * l).sum::<f64>();
        log_inv_f.push(log_sum_exp(lls.iter().zip(weights).map(|(l, w)| w.ln() - l)));
    }
    PointTerms { deviance, log_inv_f }
}

/// Linear-predictor means and variances under the conditional Gaussian of a grid point.
pub fn predictor_moments(model: &BetaMixedModel, point: &crate::laplace::GridPoint) -> (Vec<f64>, Vec<f64>) {
    let d = model.design();
    let latent = point.mode.latent.as_slice();
    let mut m = Vec::with_capacity(d.n_rows());
    let mut v = Vec::with_capacity(d.n_rows());
    for i in 0..d.n_rows() {
        m.push(d.eta(i, latent));
        let g = if d.q() > 0 { Some(d.group(i)) } else { None };
        v.push(point.mode.precision.predictor_variance(g, d.z_row(i), d.x_row(i)));
    }
    (m, v)
}

/// DIC, LML and CPO for a model and its lattice.
pub fn criteria(model: &BetaMixedModel, grid: &ThetaGrid) -> Result<Criteria> {
    if grid.points.is_empty() {
        return Err(Error::InvalidInput("empty hyperparameter grid".into()));
    }
    let terms: Vec<PointTerms> = grid
        .points
        .par_iter()
        .map(|p| {
            let (m, v) = predictor_moments(model, p);
            point_terms(model, &m, &v, p.theta.phi())
        })
        .collect();
    let n = model.design().n_rows();
    let mean_deviance: f64 = terms.iter().zip(&grid.points).map(|(t, p)| p.weight * t.deviance).sum();

    let mut latent_mean = vec![0.0; model.latent_dim()];
    let mut phi_mean = 0.0;
    for p in &grid.points {
        phi_mean += p.weight * p.theta.phi();
        for (a, b) in latent_mean.iter_mut().zip(p.mode.latent.iter()) {
            *a += p.weight * b;
        }
    }
    let deviance_at_mean = -2.0 * model.row_logliks(&latent_mean, phi_mean).iter().sum::<f64>();
    let p_d = mean_deviance - deviance_at_mean;

    let mut cpo = Vec::with_capacity(n);
    let mut flagged = Vec::new();
    for i in 0..n {
        let log_inv = log_sum_exp(terms.iter().zip(&grid.points).map(|(t, p)| p.weight.ln() + t.log_inv_f[i]));
        let c = (-log_inv).exp();
        if !(c > 0.0 && c.is_finite()) {
            flagged.push(i);
        }
        cpo.push(c);
    }
    let logs: Vec<f64> = cpo.iter().filter(|c| **c > 0.0 && c.is_finite()).map(|c| c.ln()).collect();
    let mean_log_cpo = logs.iter().sum::<f64>() / logs.len().max(1) as f64;
    Ok(Criteria {
        dic: mean_deviance + p_d,
        p_d,
        mean_deviance,
        deviance_at_mean,
        lml: grid.log_integral(),
        cpo,
        mean_log_cpo,
        cpo_flagged: flagged,
    })
}

fn fit_criteria(fit: &FitResult) -> Result<Criteria> {
    match &fit.criteria {
        Some(c) => Ok(c.clone()),
        None => criteria(&fit.model, &fit.grid),
    }
}

/// `(DIC, p_D)`.
pub fn dic(fit: &FitResult) -> Result<(f64, f64)> {
    let c = fit_criteria(fit)?;
    Ok((c.dic, c.p_d))
}

pub fn log_marginal_likelihood(fit: &FitResult) -> f64 {
    fit.grid.log_integral()
}

/// Per-observation CPO and their mean log.
pub fn cpo(fit: &FitResult) -> Result<(Vec<f64>, f64)> {
    let c = fit_criteria(fit)?;
    Ok((c.cpo, c.mean_log_cpo))
}

/// Posterior means and criteria side by side, one column per model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub models: Vec<String>,
    pub parameters: Vec<String>,
    /// `means[r][c]`: posterior mean of parameter `r` under model `c`.
    pub means: Vec<Vec<Option<f64>>>,
    pub lml: Vec<f64>,
    pub dic: Vec<f64>,
    pub p_d: Vec<f64>,
    pub mean_log_cpo: Vec<f64>,
    pub best_dic: usize,
    pub best_lml: usize,
}

pub fn compare_models(fits: &[FitResult], labels: &[String]) -> Result<ComparisonTable> {
    if fits.is_empty() || fits.len() != labels.len() {
        return Err(Error::InvalidInput("need one label per fit and at least one fit".into()));
    }
    let y0 = fits[0].model.response();
    if fits.iter().any(|f| f.model.response() != y0) {
        return Err(Error::InvalidInput("fits were computed on different datasets".into()));
    }
    let mut parameters: Vec<String> = Vec::new();
    for f in fits {
        for name in f.param_names() {
            if !parameters.contains(&name) {
                parameters.push(name);
            }
        }
    }
    let means = parameters
        .iter()
        .map(|name| fits.iter().map(|f| f.marginal(name).map(|m| m.mean)).collect())
        .collect();
    let crit: Vec<Criteria> = fits.iter().map(fit_criteria).collect::<Result<_>>()?;
    let argbest = |v: &[f64], better: fn(f64, f64) -> bool| {
        (0..v.len()).fold(0, |b, i| if better(v[i], v[b]) { i } else { b })
    };
    let dic: Vec<f64> = crit.iter().map(|c| c.dic).collect();
    let lml: Vec<f64> = crit.iter().map(|c| c.lml).collect();
    Ok(ComparisonTable {
        models: labels.to_vec(),
        parameters,
        means,
        best_dic: argbest(&dic, |a, b| a < b),
        best_lml: argbest(&lml, |a, b| a > b),
        lml,
        dic,
        p_d: crit.iter().map(|c| c.p_d).collect(),
        mean_log_cpo: crit.iter().map(|c| c.mean_log_cpo).collect(),
    })
}

impl ComparisonTable {
    /// Rows of `(label, cells)` in display order: parameters, then LML, DIC, pD, CPO.
    pub fn rows(&self) -> Vec<(String, Vec<Option<f64>>)> {
        let mut rows: Vec<(String, Vec<Option<f64>>)> =
            self.parameters.iter().cloned().zip(self.means.iter().cloned()).collect();
        let some = |v: &[f64]| v.iter().map(|x| Some(*x)).collect();
        rows.push(("LML".into(), some(&self.lml)));
        rows.push(("DIC".into(), some(&self.dic)));
        rows.push(("pD".into(), some(&self.p_d)));
        rows.push(("mean_log_CPO".into(), some(&self.mean_log_cpo)));
        rows
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["parameter".to_string()];
        header.extend(self.models.iter().cloned());
        w.write_record(&header)?;
        for (label, cells) in self.rows() {
            let mut rec = vec![label];
            rec.extend(cells.iter().map(|c| c.map(|v| format!("{v:.6}")).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Fixed-width plain-text rendering.
    pub fn to_text(&self) -> String {
        let width = 12;
        let mut out = format!("{:<14}", "");
        for m in &self.models {
            out += &format!("{m:>width$}");
        }
        out.push('\n');
        for (label, cells) in self.rows() {
            out += &format!("{label:<14}");
            for c in cells {
                match c {
                    Some(v) => out += &format!("{v:>width$.4}"),
                    None => out += &format!("{:>width$}", "-"),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{beta_logpdf, BetaMeanPrecision};
    use crate::laplace::{ConditionalMode, GridPoint};
    use crate::model::{BlockSymmetric, Dataset, HyperPoint, ModelSpec};
    use crate::prior::PriorSpec;
    use nalgebra::{DMatrix, DVector};
    use std::collections::BTreeMap;

    // a grid with one point whose conditional Gaussian is (numerically) a point mass
    fn point_mass_grid(model: &BetaMixedModel, beta0: f64, phi: f64) -> ThetaGrid {
        let mut h = BlockSymmetric::zeros(0, 0, 1);
        h.beta[(0, 0)] = 1e30;
        let mode = ConditionalMode {
            latent: DVector::from_element(1, beta0),
            precision: h.factor().unwrap(),
            objective: 0.0,
            iterations: 0,
            used_expected_curvature: false,
        };
        let var = mode.precision.marginal_variances();
        let theta = HyperPoint::Phi { log_phi: phi.ln() };
        let _ = model;
        ThetaGrid {
            points: vec![GridPoint { theta, log_post: 0.0, weight: 1.0, mode, latent_var: var }],
            mode: theta,
            mode_log_post: 0.0,
            curvature: DMatrix::identity(1, 1),
            z_step: 0.75,
            log_cell_volume: 0.0,
            failed_points: 0,
        }
    }

    #[test]
    fn degenerate_posterior_gives_zero_pd_and_density_cpo() {
        let data = Dataset::ungrouped(vec![0.31], BTreeMap::new()).unwrap();
        let model = BetaMixedModel::new(&data, &ModelSpec::default(), PriorSpec::default()).unwrap();
        let grid = point_mass_grid(&model, -0.4, 12.0);
        let c = criteria(&model, &grid).unwrap();
        assert!(c.p_d.abs() < 1e-9, "{}", c.p_d);
        assert!((c.dic - c.deviance_at_mean).abs() < 1e-9);
        let mu = 1.0 / (1.0 + 0.4f64.exp());
        let f = beta_logpdf(0.31, &BetaMeanPrecision::new(mu, 12.0).unwrap()).unwrap().exp();
        assert!((c.cpo[0] - f).abs() < 1e-9 * f);
        assert!(c.cpo_flagged.is_empty());
    }
}
