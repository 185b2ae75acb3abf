use nalgebra::DMatrix;

use super::{sample, BlockSpec, ChainOutput, GibbsTarget, McmcConfig};
use crate::dist::special::ln_gamma;
use crate::error::{Error, Result};
use crate::laplace::{hyper_mode, hyper_values, LaplaceConfig};
use crate::model::{BetaMixedModel, Curvature, Dataset, HyperPoint, ModelSpec};
use crate::prior::{PriorSpec, RaneffPrior};

/// Sampler state with cached linear predictors and row log-likelihoods.
#[derive(Debug, Clone)]
pub struct BetaState {
    latent: Vec<f64>,
    theta: HyperPoint,
    eta: Vec<f64>,
    ll: Vec<f64>,
    precision: Option<DMatrix<f64>>,
}

/// Blocks: one per coefficient, one per group's effects, one for all hyperparameters.
pub struct BetaModelTarget<'a> {
    model: &'a BetaMixedModel,
    blocks: Vec<BlockSpec>,
    init_latent: Vec<f64>,
    init_theta: HyperPoint,
}

pub enum BetaPending {
    Rows(Vec<(usize, f64, f64)>),
    Hyper(Vec<f64>),
}

const RW_SCALE: f64 = 2.4;

impl<'a> BetaModelTarget<'a> {
    /// Starts at the Laplace mode with proposal shapes from the local curvature.
    pub fn from_laplace(model: &'a BetaMixedModel, cfg: &LaplaceConfig) -> Result<Self> {
        let (theta_mode, curvature, mode) = hyper_mode(model, cfg)?;
        let theta = HyperPoint::from_slice(model.design().q(), &theta_mode)?;
        let h = model.derivatives(mode.latent.as_slice(), &theta, Curvature::Observed).neg_hessian;
        let d = model.design();
        let mut blocks = Vec::new();
        for (j, name) in d.beta_names().iter().enumerate() {
            blocks.push(BlockSpec::scalar(name.clone(), RW_SCALE / h.beta_block()[(j, j)].sqrt()));
        }
        for g in 0..d.n_groups() {
            let cov = h.diag_block(g).clone().try_inverse().ok_or_else(|| Error::NotPositiveDefinite("group block".into()))?;
            let l = cov.cholesky().ok_or_else(|| Error::NotPositiveDefinite("group block covariance".into()))?.l();
            blocks.push(BlockSpec { name: format!("b[{}]", d.group_labels()[g]), shape: l * (RW_SCALE / (d.q() as f64).sqrt()) });
        }
        let cov = curvature.clone().try_inverse().ok_or_else(|| Error::NotPositiveDefinite("hyper curvature".into()))?;
        let sym = 0.5 * (&cov + cov.transpose());
        let l = sym.cholesky().ok_or_else(|| Error::NotPositiveDefinite("hyper covariance".into()))?.l();
        let dim = theta_mode.len() as f64;
        blocks.push(BlockSpec { name: "theta".into(), shape: l * (2.38 / dim.sqrt()) });
        Ok(Self { model, blocks, init_latent: mode.latent.as_slice().to_vec(), init_theta: theta })
    }

    /// Starts at prior-typical values; used when the likelihood is switched off.
    pub fn from_prior(model: &'a BetaMixedModel) -> Result<Self> {
        let d = model.design();
        let pr = model.priors();
        let log_phi = pr.phi.mean().ln();
        let theta = match &pr.raneff {
            _ if d.q() == 0 => HyperPoint::Phi { log_phi },
            RaneffPrior::Gamma(g) => HyperPoint::Scalar { log_phi, log_tau: g.mean().ln() },
            RaneffPrior::Wishart { df, .. } => {
                let s = pr.raneff.scale_matrix().expect("wishart");
                HyperPoint::Pair {
                    log_phi,
                    log_tau1: (df * s[(0, 0)]).ln(),
                    log_tau2: (df * s[(1, 1)]).ln(),
                    z_rho: 0.0,
                }
            }
        };
        let mut blocks = Vec::new();
        for (j, name) in d.beta_names().iter().enumerate() {
            let sd = if j == 0 { 1.0 } else { 1.0 / pr.slope_precision.sqrt() };
            blocks.push(BlockSpec::scalar(name.clone(), sd));
        }
        if let Some(q) = theta.precision() {
            let l = q.try_inverse().and_then(|c| c.cholesky()).ok_or_else(|| Error::NotPositiveDefinite("prior covariance".into()))?.l();
            for g in 0..d.n_groups() {
                blocks.push(BlockSpec { name: format!("b[{}]", d.group_labels()[g]), shape: l.clone() });
            }
        }
        let dim = HyperPoint::dim_for(d.q());
        blocks.push(BlockSpec { name: "theta".into(), shape: DMatrix::identity(dim, dim) });
        Ok(Self { model, blocks, init_latent: vec![0.0; d.latent_dim()], init_theta: theta })
    }

    pub fn initial_state(&self) -> BetaState {
        self.state_at(self.init_latent.clone(), self.init_theta)
    }

    fn state_at(&self, latent: Vec<f64>, theta: HyperPoint) -> BetaState {
        let d = self.model.design();
        let eta: Vec<f64> = (0..d.n_rows()).map(|i| d.eta(i, &latent)).collect();
        let phi = theta.phi();
        let lg = ln_gamma(phi);
        let ll = eta.iter().enumerate().map(|(i, &e)| self.row_ll(i, e, phi, lg)).collect();
        BetaState { latent, theta, eta, ll, precision: theta.precision() }
    }

    #[inline]
    fn row_ll(&self, i: usize, eta: f64, phi: f64, lg: f64) -> f64 {
        if self.model.has_likelihood() {
            self.model.row_loglik(i, eta, phi, lg)
        } else {
            0.0
        }
    }

    fn b_quad(q: &DMatrix<f64>, b: &[f64]) -> f64 {
        let mut s = 0.0;
        for r in 0..b.len() {
            for c in 0..b.len() {
                s += b[r] * q[(r, c)] * b[c];
            }
        }
        s
    }
}

impl GibbsTarget for BetaModelTarget<'_> {
    type State = BetaState;
    type Pending = BetaPending;

    fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    fn names(&self) -> Vec<String> {
        let mut n: Vec<String> = self.model.design().beta_names().to_vec();
        n.extend(hyper_values(&self.init_theta).iter().map(|h| h.0.to_string()));
        n
    }

    fn get(&self, s: &BetaState, k: usize) -> Vec<f64> {
        let d = self.model.design();
        let (p, ng) = (d.p(), d.n_groups());
        if k < p {
            vec![s.latent[d.beta_offset() + k]]
        } else if k < p + ng {
            let o = d.b_offset(k - p);
            s.latent[o..o + d.q()].to_vec()
        } else {
            s.theta.to_vec()
        }
    }

    fn delta(&self, s: &BetaState, k: usize, new: &[f64]) -> (f64, BetaPending) {
        let d = self.model.design();
        let (p, ng, q) = (d.p(), d.n_groups(), d.q());
        let phi = s.theta.phi();
        let lg = ln_gamma(phi);
        if k < p {
            let old = s.latent[d.beta_offset() + k];
            let dv = new[0] - old;
            let mut rows = Vec::new();
            let mut delta = 0.0;
            for i in 0..d.n_rows() {
                let xv = d.x_row(i)[k];
                if xv == 0.0 {
                    continue;
                }
                let e = s.eta[i] + dv * xv;
                let l = self.row_ll(i, e, phi, lg);
                delta += l - s.ll[i];
                rows.push((i, e, l));
            }
            if k > 0 {
                delta -= 0.5 * self.model.priors().slope_precision * (new[0] * new[0] - old * old);
            }
            (delta, BetaPending::Rows(rows))
        } else if k < p + ng {
            let g = k - p;
            let o = d.b_offset(g);
            let old = &s.latent[o..o + q];
            let qm = s.precision.as_ref().expect("groups imply q > 0");
            let mut delta = -0.5 * (Self::b_quad(qm, new) - Self::b_quad(qm, old));
            let mut rows = Vec::with_capacity(d.group_rows(g).len());
            for &i in d.group_rows(g) {
                let z = d.z_row(i);
                let de: f64 = (0..q).map(|r| z[r] * (new[r] - old[r])).sum();
                let e = s.eta[i] + de;
                let l = self.row_ll(i, e, phi, lg);
                delta += l - s.ll[i];
                rows.push((i, e, l));
            }
            (delta, BetaPending::Rows(rows))
        } else {
            let Ok(theta) = HyperPoint::from_slice(q, new) else { return (f64::NEG_INFINITY, BetaPending::Hyper(Vec::new())) };
            let Ok(prior_new) = theta.log_hyperprior(self.model.priors()) else {
                return (f64::NEG_INFINITY, BetaPending::Hyper(Vec::new()));
            };
            let prior_old = s.theta.log_hyperprior(self.model.priors()).unwrap_or(f64::NEG_INFINITY);
            let phi_new = theta.phi();
            let lg_new = ln_gamma(phi_new);
            let ll: Vec<f64> = s.eta.iter().enumerate().map(|(i, &e)| self.row_ll(i, e, phi_new, lg_new)).collect();
            let mut delta = prior_new - prior_old + ll.iter().sum::<f64>() - s.ll.iter().sum::<f64>();
            if let (Some(qn), Some(qo)) = (theta.precision(), s.precision.as_ref()) {
                let dl = theta.precision_logdet() - s.theta.precision_logdet();
                for g in 0..ng {
                    let o = d.b_offset(g);
                    let b = &s.latent[o..o + q];
                    delta += 0.5 * dl - 0.5 * (Self::b_quad(&qn, b) - Self::b_quad(qo, b));
                }
            }
            (delta, BetaPending::Hyper(ll))
        }
    }

    fn accept(&self, s: &mut BetaState, k: usize, new: &[f64], pending: BetaPending) {
        let d = self.model.design();
        let (p, ng, q) = (d.p(), d.n_groups(), d.q());
        if k < p {
            s.latent[d.beta_offset() + k] = new[0];
        } else if k < p + ng {
            let o = d.b_offset(k - p);
            s.latent[o..o + q].copy_from_slice(new);
        } else {
            s.theta = HyperPoint::from_slice(q, new).expect("checked in delta");
            s.precision = s.theta.precision();
        }
        match pending {
            BetaPending::Rows(rows) => {
                for (i, e, l) in rows {
                    s.eta[i] = e;
                    s.ll[i] = l;
                }
            }
            BetaPending::Hyper(ll) => s.ll = ll,
        }
    }

    fn record(&self, s: &BetaState, out: &mut Vec<f64>) {
        let d = self.model.design();
        out.extend_from_slice(&s.latent[d.beta_offset()..]);
        out.extend(hyper_values(&s.theta).iter().map(|h| h.1));
    }
}

/// Samples the posterior of a model, initialized at its Laplace mode.
pub fn run_mcmc(data: &Dataset, spec: &ModelSpec, priors: &PriorSpec, cfg: &McmcConfig) -> Result<ChainOutput> {
    let model = BetaMixedModel::new(data, spec, priors.clone())?;
    let target = BetaModelTarget::from_laplace(&model, &LaplaceConfig::default())?;
    let init = target.initial_state();
    if !init.ll.iter().all(|v| v.is_finite()) {
        return Err(Error::Domain("log posterior is not finite at the initial state".into()));
    }
    sample(&target, &init, cfg)
}
