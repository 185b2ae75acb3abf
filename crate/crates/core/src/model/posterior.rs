use nalgebra::DVector;

use super::block::BlockSymmetric;
use super::data::Dataset;
use super::design::{build_design, Design, ModelSpec};
use super::hyper::HyperPoint;
use super::link::Link;
use crate::dist::special::{digamma, ln_gamma, trigamma};
use crate::dist::LN_2PI;
use crate::error::{Error, Result};
use crate::prior::PriorSpec;

/// Stacked latent vector `(b_1, ..., b_N, beta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentField {
    values: DVector<f64>,
    n_groups: usize,
    q: usize,
}

impl LatentField {
    pub fn zeros(design: &Design) -> Self {
        Self { values: DVector::zeros(design.latent_dim()), n_groups: design.n_groups(), q: design.q() }
    }

    pub fn from_vector(design: &Design, values: DVector<f64>) -> Result<Self> {
        if values.len() != design.latent_dim() {
            return Err(Error::InvalidInput(format!(
                "latent vector has length {}, model needs {}",
                values.len(),
                design.latent_dim()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite latent value".into()));
        }
        Ok(Self { values, n_groups: design.n_groups(), q: design.q() })
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.values
    }

    pub fn b(&self, g: usize) -> &[f64] {
        &self.values.as_slice()[g * self.q..(g + 1) * self.q]
    }

    pub fn beta(&self) -> &[f64] {
        &self.values.as_slice()[self.n_groups * self.q..]
    }
}

/// Which curvature the derivative routine reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curvature {
    /// Exact second derivatives of the log posterior.
    Observed,
    /// Expected (Fisher) information of the beta likelihood; always PSD.
    Expected,
}

/// Gradient and *negative* Hessian of the log posterior in the latent field.
#[derive(Debug, Clone)]
pub struct LatentDerivatives {
    pub gradient: DVector<f64>,
    pub neg_hessian: BlockSymmetric,
}

/// Per-row beta log-likelihood pieces on the linear-predictor scale.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RowTerms {
    pub score: f64,
    pub observed_info: f64,
    pub expected_info: f64,
}

/// Beta mixed model bound to a dataset and prior suite.
#[derive(Debug, Clone)]
pub struct BetaMixedModel {
    design: Design,
    link: Link,
    priors: PriorSpec,
    y: Vec<f64>,
    ln_y: Vec<f64>,
    ln_1my: Vec<f64>,
    with_likelihood: bool,
}

impl BetaMixedModel {
    pub fn new(data: &Dataset, spec: &ModelSpec, priors: PriorSpec) -> Result<Self> {
        let design = build_design(data, spec)?;
        priors.validate(design.q())?;
        let y = data.response().to_vec();
        Ok(Self {
            link: spec.link,
            priors,
            ln_y: y.iter().map(|v| v.ln()).collect(),
            ln_1my: y.iter().map(|v| (-v).ln_1p()).collect(),
            y,
            design,
            with_likelihood: true,
        })
    }

    /// Same model with the likelihood replaced by a constant (prior only).
    pub fn prior_only(mut self) -> Self {
        self.with_likelihood = false;
        self
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn priors(&self) -> &PriorSpec {
        &self.priors
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn response(&self) -> &[f64] {
        &self.y
    }

    pub fn latent_dim(&self) -> usize {
        self.design.latent_dim()
    }

    pub fn hyper_dim(&self) -> usize {
        HyperPoint::dim_for(self.design.q())
    }

    pub fn has_likelihood(&self) -> bool {
        self.with_likelihood
    }

    /// Beta log density of row `i` at linear predictor `eta`; `ln_gamma_phi = ln Γ(φ)`.
    #[inline]
    pub fn row_loglik(&self, i: usize, eta: f64, phi: f64, ln_gamma_phi: f64) -> f64 {
        let mu = self.link.inverse(eta);
        let a = mu * phi;
        let b = phi - a;
        ln_gamma_phi - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * self.ln_y[i] + (b - 1.0) * self.ln_1my[i]
    }

    #[inline]
    pub(crate) fn row_terms(&self, i: usize, eta: f64, phi: f64) -> RowTerms {
        let (mu, d1, d2) = self.link.inverse_with_derivs(eta);
        let a = mu * phi;
        let b = phi - a;
        let dmu = phi * ((self.ln_y[i] - self.ln_1my[i]) - (digamma(a) - digamma(b)));
        let d2mu = -phi * phi * (trigamma(a) + trigamma(b));
        let expected_info = -d2mu * d1 * d1;
        RowTerms { score: dmu * d1, observed_info: expected_info - dmu * d2, expected_info }
    }

    /// Beta log-likelihood summed over rows (zero for a prior-only model).
    pub fn log_likelihood(&self, latent: &[f64], phi: f64) -> f64 {
        if !self.with_likelihood {
            return 0.0;
        }
        let lg = ln_gamma(phi);
        (0..self.design.n_rows()).map(|i| self.row_loglik(i, self.design.eta(i, latent), phi, lg)).sum()
    }

    /// Per-row beta log densities (always evaluated, even for a prior-only model).
    pub fn row_logliks(&self, latent: &[f64], phi: f64) -> Vec<f64> {
        let lg = ln_gamma(phi);
        (0..self.design.n_rows()).map(|i| self.row_loglik(i, self.design.eta(i, latent), phi, lg)).collect()
    }

    /// Log Gaussian prior of the latent field given `theta` (random effects and slopes).
    pub fn log_latent_prior(&self, latent: &[f64], theta: &HyperPoint) -> f64 {
        let d = &self.design;
        let mut lp = 0.0;
        if let Some(q) = theta.precision() {
            let logdet = theta.precision_logdet();
            let qd = d.q();
            for g in 0..d.n_groups() {
                let b = &latent[d.b_offset(g)..d.b_offset(g) + qd];
                let mut quad = 0.0;
                for r in 0..qd {
                    for c in 0..qd {
                        quad += b[r] * q[(r, c)] * b[c];
                    }
                }
                lp += 0.5 * logdet - 0.5 * qd as f64 * LN_2PI - 0.5 * quad;
            }
        }
        let lam = self.priors.slope_precision;
        for &beta in &latent[d.beta_offset() + 1..] {
            lp += 0.5 * lam.ln() - 0.5 * LN_2PI - 0.5 * lam * beta * beta;
        }
        lp
    }

    fn check_theta(&self, theta: &HyperPoint) -> Result<()> {
        if theta.q() != self.design.q() {
            return Err(Error::InvalidInput(format!(
                "hyper point has q = {}, model has q = {}",
                theta.q(),
                self.design.q()
            )));
        }
        Ok(())
    }

    /// `log p(y | x, θ) + log p(x | θ)`: the latent-field objective for fixed `θ`.
    pub fn latent_objective(&self, latent: &[f64], theta: &HyperPoint) -> f64 {
        self.log_likelihood(latent, theta.phi()) + self.log_latent_prior(latent, theta)
    }

    /// Full joint log posterior `log p(y, x, θ)` on the internal hyper scale.
    pub fn joint_log_posterior(&self, x: &LatentField, theta: &HyperPoint) -> Result<f64> {
        self.check_theta(theta)?;
        let v = self.latent_objective(x.as_slice(), theta) + theta.log_hyperprior(&self.priors)?;
        if !v.is_finite() {
            return Err(Error::Domain("joint log posterior is not finite".into()));
        }
        Ok(v)
    }

    /// Analytic gradient and negative Hessian of [`Self::latent_objective`].
    pub fn derivatives(&self, latent: &[f64], theta: &HyperPoint, curvature: Curvature) -> LatentDerivatives {
        let d = &self.design;
        let (q, p) = (d.q(), d.p());
        let bo = d.beta_offset();
        let mut grad = DVector::zeros(d.latent_dim());
        let mut h = BlockSymmetric::zeros(d.n_groups(), q, p);
        let phi = theta.phi();
        if self.with_likelihood {
            for i in 0..d.n_rows() {
                let t = self.row_terms(i, d.eta(i, latent), phi);
                let w = match curvature {
                    Curvature::Observed => t.observed_info,
                    Curvature::Expected => t.expected_info,
                };
                let x = d.x_row(i);
                for a in 0..p {
                    grad[bo + a] += t.score * x[a];
                    for b in 0..=a {
                        h.beta[(a, b)] += w * x[a] * x[b];
                    }
                }
                if q > 0 {
                    let g = d.group(i);
                    let z = d.z_row(i);
                    for a in 0..q {
                        grad[d.b_offset(g) + a] += t.score * z[a];
                        for b in 0..q {
                            h.diag[g][(a, b)] += w * z[a] * z[b];
                        }
                        for b in 0..p {
                            h.cross[g][(a, b)] += w * z[a] * x[b];
                        }
                    }
                }
            }
            for a in 0..p {
                for b in 0..a {
                    h.beta[(b, a)] = h.beta[(a, b)];
                }
            }
        }
        if let Some(qm) = theta.precision() {
            for g in 0..d.n_groups() {
                let o = d.b_offset(g);
                for a in 0..q {
                    for b in 0..q {
                        grad[o + a] -= qm[(a, b)] * latent[o + b];
                        h.diag[g][(a, b)] += qm[(a, b)];
                    }
                }
            }
        }
        let lam = self.priors.slope_precision;
        for k in 1..p {
            grad[bo + k] -= lam * latent[bo + k];
            h.beta[(k, k)] += lam;
        }
        LatentDerivatives { gradient: grad, neg_hessian: h }
    }

    /// Gradient and negative Hessian with input validation.
    pub fn joint_grad_hessian(&self, x: &LatentField, theta: &HyperPoint) -> Result<LatentDerivatives> {
        self.check_theta(theta)?;
        Ok(self.derivatives(x.as_slice(), theta, Curvature::Observed))
    }
}
