//! Hellinger distances and prior-sensitivity scans for the precision parameters.
//!
//! `H(f, g) = sqrt(1 - BC)` with Bhattacharyya coefficient `BC = ∫ sqrt(f g)`.
//! The sensitivity ratio of a shifted prior is the posterior distance divided
//! by the prior distance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::special::ln_gamma;
use crate::dist::GammaShapeRate;
use crate::error::{Error, Result};
use crate::laplace::{fit_laplace, FitResult, LaplaceConfig};
use crate::marginal::MarginalDensity;
use crate::model::{Dataset, ModelSpec};
use crate::optim::bisect;
use crate::prior::{PriorSpec, RaneffPrior};
use crate::quad::{integrate, Support};

/// Default used to calibrate shifted priors for `phi`.
pub const PHI_SENSITIVITY_DEFAULT: GammaShapeRate = GammaShapeRate { shape: 1.0, rate: 0.01 };
pub const DEFAULT_TARGETS: [f64; 6] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];

/// Hellinger distance between two densities by adaptive quadrature, clipped to `[0, 1]`.
pub fn hellinger(f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64, support: Support) -> Result<f64> {
    let bc = integrate(|x| (f(x).max(0.0) * g(x).max(0.0)).sqrt(), support, 1e-12, 1e-10)?;
    Ok((1.0 - bc).clamp(0.0, 1.0).sqrt())
}

/// Closed-form Hellinger distance between two Gamma (shape, rate) densities.
pub fn gamma_hellinger_closed(g1: &GammaShapeRate, g2: &GammaShapeRate) -> f64 {
    let (a1, b1, a2, b2) = (g1.shape, g1.rate, g2.shape, g2.rate);
    let abar = 0.5 * (a1 + a2);
    let ln_bc = ln_gamma(abar) - 0.5 * (ln_gamma(a1) + ln_gamma(a2)) + 0.5 * a1 * b1.ln() + 0.5 * a2 * b2.ln()
        - abar * (0.5 * (b1 + b2)).ln();
    (1.0 - ln_bc.exp()).clamp(0.0, 1.0).sqrt()
}

/// Hellinger distance between two tabulated densities on the union of their grids.
pub fn hellinger_marginals(f: &MarginalDensity, g: &MarginalDensity) -> f64 {
    let mut xs: Vec<f64> = f.x().iter().chain(g.x()).copied().collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let vals: Vec<f64> = xs.iter().map(|&x| (f.pdf(x) * g.pdf(x)).sqrt()).collect();
    let bc = crate::quad::trapezoid(&xs, &vals);
    (1.0 - bc).clamp(0.0, 1.0).sqrt()
}

/// Keeps the shape and moves the rate upward until the prior distance equals `target_h`.
pub fn calibrate_prior(default: &GammaShapeRate, target_h: f64) -> Result<GammaShapeRate> {
    if !(target_h > 0.0 && target_h < 1.0) {
        return Err(Error::InvalidInput(format!("target distance {target_h} must lie in (0, 1)")));
    }
    default.validate()?;
    let dist = |ln_rate: f64| {
        gamma_hellinger_closed(default, &GammaShapeRate { shape: default.shape, rate: ln_rate.exp() }) - target_h
    };
    let lo = default.rate.ln();
    let mut hi = lo + 1.0;
    while dist(hi) < 0.0 {
        hi += 1.0;
        if hi - lo > 200.0 {
            return Err(Error::Bracketing(format!("no rate reaches Hellinger distance {target_h}")));
        }
    }
    let ln_rate = bisect(dist, lo, hi, 1e-15)?;
    Ok(GammaShapeRate { shape: default.shape, rate: ln_rate.exp() })
}

/// Posterior distance relative to prior distance.
pub fn sensitivity_ratio(post_default: &MarginalDensity, post_shifted: &MarginalDensity, prior_h: f64) -> Result<f64> {
    if !(prior_h > 0.0) {
        return Err(Error::InvalidInput("prior distance must be positive".into()));
    }
    Ok(hellinger_marginals(post_default, post_shifted) / prior_h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensitivityParam {
    Phi,
    Tau,
}

impl SensitivityParam {
    pub fn marginal_name(self) -> &'static str {
        match self {
            SensitivityParam::Phi => "phi",
            SensitivityParam::Tau => "tau1_sq",
        }
    }

    fn prior_of(self, priors: &PriorSpec) -> Result<GammaShapeRate> {
        match (self, &priors.raneff) {
            (SensitivityParam::Phi, _) => Ok(priors.phi),
            (SensitivityParam::Tau, RaneffPrior::Gamma(g)) => Ok(*g),
            (SensitivityParam::Tau, _) => Err(Error::InvalidInput("tau scans need a Gamma random-effect prior (q = 1)".into())),
        }
    }

    fn with_prior(self, priors: &PriorSpec, g: GammaShapeRate) -> PriorSpec {
        match self {
            SensitivityParam::Phi => priors.clone().with_phi(g),
            SensitivityParam::Tau => priors.clone().with_raneff(RaneffPrior::Gamma(g)),
        }
    }
}

/// Posterior mean and sd of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

fn summaries(fit: &FitResult) -> Vec<ParamSummary> {
    fit.marginals.iter().map(|m| ParamSummary { name: m.name.clone(), mean: m.mean, sd: m.sd }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityRow {
    pub target: f64,
    pub prior: GammaShapeRate,
    pub prior_h: f64,
    pub posterior_h: Option<f64>,
    pub ratio: Option<f64>,
    pub summaries: Vec<ParamSummary>,
    /// Set when the refit failed; the other rows are unaffected.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub param: SensitivityParam,
    pub default_prior: GammaShapeRate,
    pub default_summaries: Vec<ParamSummary>,
    pub rows: Vec<SensitivityRow>,
}

/// Calibrates one shifted prior per target, refits, and compares posteriors with the default fit.
///
/// `calibration_default` replaces the scanned parameter's prior in `priors`
/// for the default fit; `None` keeps the prior in `priors`.
pub fn sensitivity_scan(
    data: &Dataset,
    spec: &ModelSpec,
    priors: &PriorSpec,
    param: SensitivityParam,
    targets: &[f64],
    calibration_default: Option<GammaShapeRate>,
    cfg: &LaplaceConfig,
) -> Result<SensitivityReport> {
    if targets.is_empty() || targets.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("scan targets must be strictly increasing".into()));
    }
    let default_prior = match calibration_default {
        Some(g) => g,
        None => param.prior_of(priors)?,
    };
    param.prior_of(priors)?;
    let base = param.with_prior(priors, default_prior);
    let cfg = LaplaceConfig { criteria: false, ..*cfg };
    let default_fit = fit_laplace(data, spec, &base, &cfg)?;
    let name = param.marginal_name();
    let default_marginal = default_fit
        .marginal(name)
        .ok_or_else(|| Error::InvalidInput(format!("model has no `{name}` parameter")))?
        .clone();
    let calibrated: Vec<(f64, GammaShapeRate)> =
        targets.iter().map(|&t| calibrate_prior(&default_prior, t).map(|g| (t, g))).collect::<Result<_>>()?;
    let rows = calibrated
        .par_iter()
        .map(|&(target, prior)| {
            let prior_h = gamma_hellinger_closed(&default_prior, &prior);
            let shifted = param.with_prior(&base, prior);
            match fit_laplace(data, spec, &shifted, &cfg) {
                Ok(fit) => {
                    let m = fit.marginal(name).expect("same model structure");
                    let post_h = hellinger_marginals(&default_marginal, m);
                    SensitivityRow {
                        target,
                        prior,
                        prior_h,
                        posterior_h: Some(post_h),
                        ratio: Some(post_h / prior_h),
                        summaries: summaries(&fit),
                        error: None,
                    }
                }
                Err(e) => SensitivityRow {
                    target,
                    prior,
                    prior_h,
                    posterior_h: None,
                    ratio: None,
                    summaries: Vec::new(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(SensitivityReport { param, default_prior, default_summaries: summaries(&default_fit), rows })
}

impl SensitivityReport {
    /// Distance table: prior, prior distance, posterior distance, ratio.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["prior", "shape", "rate", "prior_h", "posterior_h", "ratio"])?;
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            w.write_record([
                format!("Ga({}, {:.6})", r.prior.shape, r.prior.rate),
                format!("{}", r.prior.shape),
                format!("{:.6}", r.prior.rate),
                format!("{:.6}", r.prior_h),
                opt(r.posterior_h),
                opt(r.ratio),
            ])?;
        }
        finish(w)
    }

    /// Refit summaries: one row per parameter, mean and sd under the default and each shifted prior.
    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["parameter".to_string(), "default_mean".into(), "default_sd".into()];
        for r in &self.rows {
            header.push(format!("h{:.2}_mean", r.target));
            header.push(format!("h{:.2}_sd", r.target));
        }
        w.write_record(&header)?;
        for (k, d) in self.default_summaries.iter().enumerate() {
            let mut rec = vec![d.name.clone(), format!("{:.6}", d.mean), format!("{:.6}", d.sd)];
            for r in &self.rows {
                match r.summaries.get(k) {
                    Some(s) => {
                        rec.push(format!("{:.6}", s.mean));
                        rec.push(format!("{:.6}", s.sd));
                    }
                    None => rec.extend([String::new(), String::new()]),
                }
            }
            w.write_record(&rec)?;
        }
        finish(w)
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
