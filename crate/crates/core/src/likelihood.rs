//! Maximum likelihood with the random effects integrated out by a Laplace
//! approximation, and profile-likelihood intervals.
//!
//! With `beta` and `theta` held fixed the groups decouple, so the integral is a
//! product of `q`-dimensional Laplace approximations, one per group.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::dist::special::{ln_gamma, std_normal_cdf};
use crate::error::{Error, Result};
use crate::laplace::{cold_start, initial_theta};
use crate::marginal::Scale;
use crate::model::{BetaMixedModel, Dataset, HyperPoint, ModelSpec};
use crate::optim::{bisect, maximize, numerical_hessian, BfgsOptions};
use crate::prior::default_priors;

const GROUP_TOL: f64 = 1e-9;
const GROUP_MAX_ITER: usize = 100;

/// Laplace-approximated log marginal likelihood `log ∫ p(y | beta, b, phi) N(b | 0, Q^-1) db`.
/// No priors enter; for `q = 0` this is the plain beta log-likelihood.
pub fn marginal_loglik(model: &BetaMixedModel, beta: &[f64], theta: &HyperPoint) -> Result<f64> {
    let d = model.design();
    if beta.len() != d.p() || theta.q() != d.q() {
        return Err(Error::InvalidInput(format!(
            "marginal_loglik needs {} coefficients and q = {}; got {} and q = {}",
            d.p(),
            d.q(),
            beta.len(),
            theta.q()
        )));
    }
    let phi = theta.phi();
    let lg = ln_gamma(phi);
    let xb = |i: usize| d.x_row(i).iter().zip(beta).map(|(x, b)| x * b).sum::<f64>();
    let Some(qmat) = theta.precision() else {
        let v: f64 = (0..d.n_rows()).map(|i| model.row_loglik(i, xb(i), phi, lg)).sum();
        return finite(v);
    };
    let logdet_q = theta.precision_logdet();
    let mut total = 0.0;
    for g in 0..d.n_groups() {
        let rows = d.group_rows(g);
        let offsets: Vec<f64> = rows.iter().map(|&i| xb(i)).collect();
        total += group_laplace(model, rows, &offsets, &qmat, logdet_q, phi, lg)?;
    }
    finite(total)
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Domain("marginal log-likelihood is not finite".into()))
    }
}

// log of one group's integral over b by Newton plus Laplace
fn group_laplace(
    model: &BetaMixedModel,
    rows: &[usize],
    offsets: &[f64],
    qmat: &DMatrix<f64>,
    logdet_q: f64,
    phi: f64,
    lg: f64,
) -> Result<f64> {
    let d = model.design();
    let q = qmat.nrows();
    let eta_at = |b: &DVector<f64>, k: usize| offsets[k] + d.z_row(rows[k]).iter().zip(b.iter()).map(|(z, v)| z * v).sum::<f64>();
    let objective = |b: &DVector<f64>| {
        let ll: f64 = (0..rows.len()).map(|k| model.row_loglik(rows[k], eta_at(b, k), phi, lg)).sum();
        ll - 0.5 * b.dot(&(qmat * b))
    };
    let mut b = DVector::<f64>::zeros(q);
    let mut f = objective(&b);
    for it in 0..=GROUP_MAX_ITER {
        let mut grad = -(qmat * &b);
        let mut obs = qmat.clone();
        let mut exp = qmat.clone();
        for (k, &i) in rows.iter().enumerate() {
            let t = model.row_terms(i, eta_at(&b, k), phi);
            let z = DVector::from_column_slice(d.z_row(i));
            grad += t.score * &z;
            obs += t.observed_info * &z * z.transpose();
            exp += t.expected_info * &z * z.transpose();
        }
        let observed = obs.clone().cholesky();
        if grad.amax() < GROUP_TOL {
            if let Some(c) = observed {
                let logdet_h = 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                return Ok(f + 0.5 * logdet_q - 0.5 * logdet_h);
            }
        }
        if it == GROUP_MAX_ITER {
            return Err(Error::NonConvergence {
                stage: "group random-effect mode",
                iterations: it,
                grad_norm: grad.amax(),
                trace: Vec::new(),
            });
        }
        let chol = match observed {
            Some(c) => c,
            None => exp.cholesky().ok_or_else(|| Error::NotPositiveDefinite("group curvature".into()))?,
        };
        let step = chol.solve(&grad);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let bn = &b + t * &step;
            let fnew = objective(&bn);
            if fnew.is_finite() && fnew >= f - 1e-12 * (1.0 + f.abs()) {
                b = bn;
                f = fnew;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            return Err(Error::NonConvergence {
                stage: "group random-effect line search",
                iterations: it,
                grad_norm: grad.amax(),
                trace: Vec::new(),
            });
        }
    }
    unreachable!("loop returns")
}

/// Reporting name and scale of each coordinate of the ML parameter vector
/// `[beta, theta]`; hyperparameters are optimized on their internal scale.
fn parameter_layout(model: &BetaMixedModel) -> Vec<(String, Scale)> {
    let mut out: Vec<(String, Scale)> =
        model.design().beta_names().iter().map(|n| (n.clone(), Scale::Identity)).collect();
    out.push(("phi".into(), Scale::Log));
    match model.design().q() {
        0 => {}
        1 => out.push(("tau1_sq".into(), Scale::Log)),
        _ => {
            out.push(("tau1_sq".into(), Scale::Log));
            out.push(("tau2_sq".into(), Scale::Log));
            out.push(("correlation".into(), Scale::Atanh));
        }
    }
    out
}

fn split<'a>(model: &BetaMixedModel, v: &'a [f64]) -> Result<(&'a [f64], HyperPoint)> {
    let p = model.design().p();
    Ok((&v[..p], HyperPoint::from_slice(model.design().q(), &v[p..])?))
}

fn loglik_vec(model: &BetaMixedModel, v: &[f64]) -> f64 {
    split(model, v).and_then(|(beta, theta)| marginal_loglik(model, beta, &theta)).unwrap_or(f64::NEG_INFINITY)
}

/// Maximum-likelihood fit.
#[derive(Debug, Clone, Serialize)]
pub struct MlFit {
    pub names: Vec<String>,
    /// Estimates on the natural scale.
    pub estimates: Vec<f64>,
    /// Delta-method standard errors on the natural scale.
    pub std_errors: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    /// Optimum on the optimization scale (`beta`, internal `theta`).
    pub internal: Vec<f64>,
    pub internal_std_errors: Vec<f64>,
    #[serde(skip)]
    pub scales: Vec<Scale>,
    #[serde(skip)]
    pub covariance: DMatrix<f64>,
}

/// Numerical-Hessian step on the optimization scale.
pub const ML_HESSIAN_STEP: f64 = 1e-3;

pub fn ml_fit(data: &Dataset, spec: &ModelSpec) -> Result<MlFit> {
    let model = BetaMixedModel::new(data, spec, default_priors(spec))?;
    ml_fit_model(&model)
}

/// Quasi-Newton maximization of [`marginal_loglik`]; standard errors from the inverse numerical Hessian.
pub fn ml_fit_model(model: &BetaMixedModel) -> Result<MlFit> {
    let d = model.design();
    let mut x0: Vec<f64> = cold_start(model).as_slice()[d.beta_offset()..].to_vec();
    x0.extend(initial_theta(model).to_vec());
    let opts = BfgsOptions { grad_tol: 1e-6, max_iter: 500, ..Default::default() };
    let opt = maximize(|v: &[f64]| loglik_vec(model, v), &x0, &opts)?;
    let mut f = |v: &[f64]| loglik_vec(model, v);
    let info = -numerical_hessian(&mut f, &opt.x, ML_HESSIAN_STEP);
    let covariance = info
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::NotPositiveDefinite("observed information at the ML estimate".into()))?;
    let layout = parameter_layout(model);
    let internal_std_errors: Vec<f64> = (0..opt.x.len()).map(|k| covariance[(k, k)].sqrt()).collect();
    let estimates = layout.iter().zip(&opt.x).map(|((_, s), &u)| s.inverse(u)).collect();
    let std_errors =
        layout.iter().zip(&opt.x).zip(&internal_std_errors).map(|(((_, s), &u), se)| s.inverse_derivative(u).abs() * se).collect();
    Ok(MlFit {
        names: layout.iter().map(|(n, _)| n.clone()).collect(),
        estimates,
        std_errors,
        loglik: opt.value,
        iterations: opt.iterations,
        internal: opt.x,
        internal_std_errors,
        scales: layout.into_iter().map(|(_, s)| s).collect(),
        covariance,
    })
}

impl MlFit {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Likelihood-ratio cutoff `chi2_1(level) / 2`.
pub fn profile_cutoff(level: f64) -> Result<f64> {
    let z = normal_quantile(0.5 + level / 2.0)?;
    Ok(0.5 * z * z)
}

/// Standard normal quantile by bisection on the CDF.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("quantile probability {p} outside (0, 1)")));
    }
    bisect(|x| std_normal_cdf(x) - p, -40.0, 40.0, 1e-16)
}

/// Profile interval of one parameter; `None` endpoints are open-ended.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileInterval {
    pub name: String,
    pub level: f64,
    pub estimate: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct ProfileOptions {
    /// Probe step as a multiple of the standard error.
    pub step_se: f64,
    pub max_probes: usize,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self { step_se: 0.2, max_probes: 150 }
    }
}

/// Profile-likelihood interval of coordinate `k` of a generic log-likelihood on
/// an unconstrained scale, maximized at `xhat` with value `fhat`.
///
/// `cov` (the inverse observed information at `xhat`) sets the probe step and
/// preconditions the nuisance re-optimization. Returns internal-scale endpoints.
pub fn profile_bounds(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    xhat: &[f64],
    fhat: f64,
    cov: &DMatrix<f64>,
    k: usize,
    level: f64,
    opts: &ProfileOptions,
) -> Result<(Option<f64>, Option<f64>)> {
    let n = xhat.len();
    if k >= n || cov.nrows() != n || cov.ncols() != n || !(cov[(k, k)] > 0.0) {
        return Err(Error::InvalidInput(format!("profile of coordinate {k} needs a {n}x{n} covariance with positive diagonal")));
    }
    let cutoff = profile_cutoff(level)?;
    let nuis: Vec<usize> = (0..n).filter(|&j| j != k).collect();
    let info = cov.clone().try_inverse().ok_or_else(|| Error::NotPositiveDefinite("profile covariance".into()))?;
    let info_nn = info.select_rows(&nuis).select_columns(&nuis);
    // v_nuis = base + L^-T u, so the nuisance Hessian in u is close to the identity
    let precond = if nuis.is_empty() {
        DMatrix::zeros(0, 0)
    } else {
        let l = info_nn.cholesky().ok_or_else(|| Error::NotPositiveDefinite("nuisance information".into()))?.l();
        l.transpose().try_inverse().ok_or_else(|| Error::NotPositiveDefinite("nuisance information".into()))?
    };
    let slope = DVector::from_iterator(nuis.len(), nuis.iter().map(|&j| cov[(j, k)] / cov[(k, k)]));
    let ctx = SideSearch { f, xhat, fhat, k, nuis: &nuis, precond: &precond, slope: &slope, cutoff };
    let step = opts.step_se * cov[(k, k)].sqrt();
    let sides: Vec<Result<Option<f64>>> = [-1.0, 1.0].par_iter().map(|&sign| ctx.run(sign * step, opts.max_probes)).collect();
    let mut it = sides.into_iter();
    Ok((it.next().expect("two sides")?, it.next().expect("two sides")?))
}

struct SideSearch<'a> {
    f: &'a (dyn Fn(&[f64]) -> f64 + Sync),
    xhat: &'a [f64],
    fhat: f64,
    k: usize,
    nuis: &'a [usize],
    precond: &'a DMatrix<f64>,
    slope: &'a DVector<f64>,
    cutoff: f64,
}

impl SideSearch<'_> {
    /// Profile log-likelihood at `t`; `warm` holds the nuisance optimum at `warm_t` and is updated.
    fn profile(&self, t: f64, warm: &mut DVector<f64>, warm_t: &mut f64) -> Result<f64> {
        let base = &*warm + self.slope * (t - *warm_t);
        let full = |u: &[f64]| {
            let v_n = &base + self.precond * DVector::from_column_slice(u);
            let mut v = self.xhat.to_vec();
            v[self.k] = t;
            for (a, &j) in self.nuis.iter().enumerate() {
                v[j] = v_n[a];
            }
            v
        };
        let value = if self.nuis.is_empty() {
            (self.f)(&full(&[]))
        } else {
            let bfgs = BfgsOptions { grad_tol: 1e-6, max_iter: 300, fd_step: 1e-4, ..Default::default() };
            let r = maximize(|u: &[f64]| (self.f)(&full(u)), &vec![0.0; self.nuis.len()], &bfgs)?;
            *warm = &base + self.precond * DVector::from_column_slice(&r.x);
            r.value
        };
        *warm_t = t;
        Ok(value)
    }

    fn run(&self, step: f64, max_probes: usize) -> Result<Option<f64>> {
        let x0 = self.xhat[self.k];
        let mut warm = DVector::from_iterator(self.nuis.len(), self.nuis.iter().map(|&j| self.xhat[j]));
        let mut warm_t = x0;
        let mut prev = x0;
        for probe in 1..=max_probes {
            let t = x0 + probe as f64 * step;
            let val = match self.profile(t, &mut warm, &mut warm_t) {
                Ok(v) if v.is_finite() => v,
                // the parameter left the region where the likelihood can be evaluated
                _ => return Ok(None),
            };
            if self.fhat - val >= self.cutoff {
                let mut failure = None;
                let root = bisect(
                    |s| match self.profile(s, &mut warm, &mut warm_t) {
                        Ok(v) => self.fhat - v - self.cutoff,
                        Err(e) => {
                            failure.get_or_insert(e);
                            f64::NAN
                        }
                    },
                    prev,
                    t,
                    1e-9,
                );
                if let Some(e) = failure {
                    return Err(e);
                }
                return root.map(Some);
            }
            prev = t;
        }
        Ok(None)
    }
}

/// Profile interval of `fit.names[k]` reported on the natural scale.
pub fn profile_interval(model: &BetaMixedModel, fit: &MlFit, k: usize, level: f64) -> Result<ProfileInterval> {
    if k >= fit.names.len() {
        return Err(Error::InvalidInput(format!("no parameter with index {k}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("level {level} outside (0, 1)")));
    }
    let f = |v: &[f64]| loglik_vec(model, v);
    let (lo, hi) =
        profile_bounds(&f, &fit.internal, fit.loglik, &fit.covariance, k, level, &ProfileOptions::default())?;
    let s = fit.scales[k];
    Ok(ProfileInterval {
        name: fit.names[k].clone(),
        level,
        estimate: fit.estimates[k],
        lower: lo.map(|u| s.inverse(u)),
        upper: hi.map(|u| s.inverse(u)),
    })
}

/// Profile intervals for every parameter, computed concurrently.
pub fn profile_all(model: &BetaMixedModel, fit: &MlFit, level: f64) -> Result<Vec<ProfileInterval>> {
    (0..fit.names.len()).into_par_iter().map(|k| profile_interval(model, fit, k, level)).collect()
}

/// Wald interval `estimate ± z se` on the optimization scale, mapped back.
pub fn wald_interval(fit: &MlFit, k: usize, level: f64) -> Result<(f64, f64)> {
    let z = normal_quantile(0.5 + level / 2.0)?;
    let s = fit.scales[k];
    let (u, se) = (fit.internal[k], fit.internal_std_errors[k]);
    Ok((s.inverse(u - z * se), s.inverse(u + z * se)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{beta_logpdf, BetaMeanPrecision};
    use crate::io::{simulate, TrueParams};
    use crate::model::{Link, RandomEffects};
    use crate::quad::{integrate, Support};

    #[test]
    fn cutoff_value() {
        assert!((profile_cutoff(0.95).unwrap() - 1.920_729_4).abs() < 1e-6);
        assert!((normal_quantile(0.975).unwrap() - 1.959_963_985).abs() < 1e-8);
    }

    #[test]
    fn quadratic_profile_is_wald() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let c = [0.3, -1.0, 2.0];
        let f = |x: &[f64]| {
            let dv = DVector::from_iterator(3, x.iter().zip(&c).map(|(a, b)| a - b));
            -0.5 * dv.dot(&(&a * &dv))
        };
        let cov = a.clone().try_inverse().unwrap();
        for k in 0..3 {
            let se = cov[(k, k)].sqrt();
            let (lo, hi) = profile_bounds(&f, &c, 0.0, &cov, k, 0.95, &ProfileOptions::default()).unwrap();
            let z = 1.959_963_985;
            assert!((lo.unwrap() - (c[k] - z * se)).abs() < 1e-6);
            assert!((hi.unwrap() - (c[k] + z * se)).abs() < 1e-6);
        }
        // a flat direction never reaches the cutoff
        let flat = |x: &[f64]| -0.5 * x[0] * x[0];
        let (lo, hi) = profile_bounds(&flat, &[0.0, 0.0], 0.0, &DMatrix::identity(2, 2), 1, 0.95, &ProfileOptions::default()).unwrap();
        assert!(lo.is_none() && hi.is_none());
    }

    fn small_data(q_random: bool, sizes: &[usize], seed: u64) -> (Dataset, ModelSpec) {
        let spec = ModelSpec {
            fixed: vec!["income".into()],
            random: if q_random { RandomEffects::Intercept } else { RandomEffects::None },
            link: Link::Logit,
        };
        let truth = TrueParams { beta: vec![0.4, 0.47], phi: 60.0, tau1_sq: q_random.then_some(16.0), tau2_sq: None, rho: None };
        (simulate(&spec, &truth, sizes, seed).unwrap(), spec)
    }

    #[test]
    fn q0_is_plain_loglik_and_matches_direct_fit() {
        let (data, spec) = small_data(false, &[120], 3);
        let model = BetaMixedModel::new(&data, &spec, default_priors(&spec)).unwrap();
        let d = model.design();
        let y = data.response();
        let direct = |v: &[f64]| -> f64 {
            (0..y.len())
                .map(|i| {
                    let eta = v[0] * d.x_row(i)[0] + v[1] * d.x_row(i)[1];
                    let p = BetaMeanPrecision::new(1.0 / (1.0 + (-eta).exp()), v[2].exp()).unwrap();
                    beta_logpdf(y[i], &p).unwrap()
                })
                .sum()
        };
        let v = [0.2, 0.3, 3.0];
        let ml = marginal_loglik(&model, &v[..2], &HyperPoint::Phi { log_phi: 3.0 }).unwrap();
        assert!((ml - direct(&v)).abs() < 1e-9);
        let fit = ml_fit_model(&model).unwrap();
        // independent fit of the direct beta-regression likelihood
        let r = maximize(direct, &[0.0, 0.0, 1.0], &BfgsOptions { grad_tol: 1e-8, ..Default::default() }).unwrap();
        for k in 0..3 {
            assert!((fit.internal[k] - r.x[k]).abs() < 1e-5, "{k}: {} vs {}", fit.internal[k], r.x[k]);
        }
        // profile and Wald agree for a well-conditioned q = 0 fit
        for k in 0..3 {
            let p = profile_interval(&model, &fit, k, 0.95).unwrap();
            let (wl, wh) = wald_interval(&fit, k, 0.95).unwrap();
            let width = wh - wl;
            assert!((p.lower.unwrap() - wl).abs() < 0.1 * width && (p.upper.unwrap() - wh).abs() < 0.1 * width);
            assert!(p.lower.unwrap() < p.estimate && p.estimate < p.upper.unwrap());
        }
    }

    #[test]
    fn laplace_matches_quadrature_per_group() {
        let (data, spec) = small_data(true, &[500, 500, 500], 5);
        let model = BetaMixedModel::new(&data, &spec, default_priors(&spec)).unwrap();
        let beta = [0.35, 0.5];
        let (phi, tau) = (60.0f64, 16.0f64);
        let theta = HyperPoint::Scalar { log_phi: phi.ln(), log_tau: tau.ln() };
        let approx = marginal_loglik(&model, &beta, &theta).unwrap();
        let d = model.design();
        let lg = ln_gamma(phi);
        let mut exact = 0.0;
        for g in 0..3 {
            let rows = d.group_rows(g);
            let lf = |b: f64| -> f64 {
                rows.iter()
                    .map(|&i| model.row_loglik(i, beta[0] + beta[1] * d.x_row(i)[1] + b, phi, lg))
                    .sum::<f64>()
                    + 0.5 * tau.ln()
                    - 0.5 * crate::dist::LN_2PI
                    - 0.5 * tau * b * b
            };
            // rescale by the value at the mode to keep the integrand in range
            let m = (-200..=200).map(|k| lf(k as f64 * 0.005)).fold(f64::NEG_INFINITY, f64::max);
            let v = integrate(|b| (lf(b) - m).exp(), Support::Interval(-1.5, 1.5), 1e-14, 1e-12).unwrap();
            exact += m + v.ln();
        }
        assert!((approx - exact).abs() < 1e-4, "{approx} vs {exact}");
    }

    #[test]
    fn recovers_slope_and_is_row_order_invariant() {
        let (data, spec) = small_data(true, &[40, 35, 30, 45, 50, 38], 11);
        let fit = ml_fit(&data, &spec).unwrap();
        let k = fit.index("income").unwrap();
        assert!((fit.estimates[k] - 0.47).abs() < 3.0 * fit.std_errors[k]);
        let order: Vec<usize> = (0..data.n_rows()).rev().collect();
        let fit2 = ml_fit(&data.permute_rows(&order).unwrap(), &spec).unwrap();
        for (a, b) in fit.estimates.iter().zip(&fit2.estimates) {
            assert!((a - b).abs() < 1e-4 * (1.0 + a.abs()));
        }
    }
}
