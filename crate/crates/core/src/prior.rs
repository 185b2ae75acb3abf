//! Prior construction: the default prior suite and range-based elicitation of
//! Gamma priors for random-effect precisions.
//!
//! If `b | tau ~ N(0, 1/tau)` and `tau ~ Gamma(a1, a2)` then marginally
//! `b ~ t(0, a2 / a1, 2 a1)`. Fixing the degrees of freedom `d = 2 a1` and
//! asking that `(-R, R)` hold probability `q` gives `a1 = d / 2` and
//! `a2 = d R^2 / (2 t^2)`, with `t` the `1 - (1 - q) / 2` quantile of `t_d`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dist::{student_t_quantile, GammaShapeRate};
use crate::error::{Error, Result};
use crate::model::ModelSpec;

/// Default precision of the zero-mean Gaussian prior on non-intercept slopes.
pub const DEFAULT_SLOPE_PRECISION: f64 = 1e-4;
pub const DEFAULT_PHI_PRIOR: GammaShapeRate = GammaShapeRate { shape: 1.0, rate: 0.001 };
pub const DEFAULT_TAU_PRIOR: GammaShapeRate = GammaShapeRate { shape: 0.5, rate: 0.001487 };
pub const DEFAULT_WISHART_DF: f64 = 5.0;
pub const DEFAULT_WISHART_SCALE_DIAG: [f64; 2] = [0.001487, 0.005];

/// Prior on the random-effect precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum RaneffPrior {
    /// Scalar precision `tau ~ Gamma(shape, rate)`.
    Gamma(GammaShapeRate),
    /// 2x2 precision matrix `Q ~ W(df, scale)`, `E[Q] = df * scale`.
    Wishart { df: f64, scale: [[f64; 2]; 2] },
}

impl RaneffPrior {
    pub fn scale_matrix(&self) -> Option<DMatrix<f64>> {
        match self {
            RaneffPrior::Wishart { scale, .. } => {
                Some(DMatrix::from_row_slice(2, 2, &[scale[0][0], scale[0][1], scale[1][0], scale[1][1]]))
            }
            RaneffPrior::Gamma(_) => None,
        }
    }
}

/// Complete prior suite. The intercept always carries a flat improper prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub slope_precision: f64,
    pub phi: GammaShapeRate,
    pub raneff: RaneffPrior,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            slope_precision: DEFAULT_SLOPE_PRECISION,
            phi: DEFAULT_PHI_PRIOR,
            raneff: RaneffPrior::Gamma(DEFAULT_TAU_PRIOR),
        }
    }
}

impl PriorSpec {
    /// Checks component validity and that the random-effect prior matches `q`.
    pub fn validate(&self, q: usize) -> Result<()> {
        if !(self.slope_precision > 0.0 && self.slope_precision.is_finite()) {
            return Err(Error::InvalidInput(format!("slope precision {} must be positive", self.slope_precision)));
        }
        self.phi.validate()?;
        match (&self.raneff, q) {
            (_, 0) => Ok(()),
            (RaneffPrior::Gamma(g), 1) => g.validate(),
            (RaneffPrior::Wishart { df, .. }, 2) => {
                if !(*df > 1.0) {
                    return Err(Error::Domain(format!("wishart df {df} must exceed 1")));
                }
                let s = self.raneff.scale_matrix().expect("wishart");
                if (s[(0, 1)] - s[(1, 0)]).abs() > 1e-14 || s.cholesky().is_none() {
                    return Err(Error::NotPositiveDefinite("wishart scale".into()));
                }
                Ok(())
            }
            (RaneffPrior::Gamma(_), q) => Err(Error::InvalidInput(format!(
                "a Gamma random-effect prior needs q = 1, model has q = {q}"
            ))),
            (RaneffPrior::Wishart { .. }, q) => Err(Error::InvalidInput(format!(
                "a Wishart random-effect prior needs q = 2, model has q = {q}"
            ))),
        }
    }

    pub fn with_phi(mut self, phi: GammaShapeRate) -> Self {
        self.phi = phi;
        self
    }

    pub fn with_raneff(mut self, raneff: RaneffPrior) -> Self {
        self.raneff = raneff;
        self
    }
}

/// The default prior suite for a model.
pub fn default_priors(model: &ModelSpec) -> PriorSpec {
    let raneff = match model.q() {
        2 => RaneffPrior::Wishart {
            df: DEFAULT_WISHART_DF,
            scale: [[DEFAULT_WISHART_SCALE_DIAG[0], 0.0], [0.0, DEFAULT_WISHART_SCALE_DIAG[1]]],
        },
        _ => RaneffPrior::Gamma(DEFAULT_TAU_PRIOR),
    };
    PriorSpec { slope_precision: DEFAULT_SLOPE_PRECISION, phi: DEFAULT_PHI_PRIOR, raneff }
}

/// Range statement for a generic random effect on the linear-predictor scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElicitationInput {
    /// Half-width `R` of the interval `(-R, R)`.
    pub range: f64,
    /// Degrees of freedom `d` of the marginal t.
    pub df: f64,
    /// Probability assigned to `(-R, R)`.
    #[serde(default = "default_coverage")]
    pub coverage: f64,
}

fn default_coverage() -> f64 {
    0.95
}

impl ElicitationInput {
    pub fn new(range: f64, df: f64) -> Self {
        Self { range, df, coverage: default_coverage() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.range > 0.0 && self.df > 0.0 && self.coverage > 0.0 && self.coverage < 1.0) {
            return Err(Error::InvalidInput(format!(
                "elicitation needs range > 0, df > 0, coverage in (0,1); got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Gamma prior on a precision whose implied marginal puts `coverage` on `(-R, R)`.
pub fn elicit_gamma_prior(e: &ElicitationInput) -> Result<GammaShapeRate> {
    e.validate()?;
    let t = student_t_quantile(1.0 - (1.0 - e.coverage) / 2.0, e.df)?;
    GammaShapeRate::new(e.df / 2.0, e.df * e.range * e.range / (2.0 * t * t))
}

/// Inverse of [`elicit_gamma_prior`]: the half-width covered with probability `coverage`.
pub fn elicited_range_roundtrip(g: &GammaShapeRate, coverage: f64) -> Result<f64> {
    g.validate()?;
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(Error::InvalidInput(format!("coverage {coverage} outside (0, 1)")));
    }
    let t = student_t_quantile(1.0 - (1.0 - coverage) / 2.0, 2.0 * g.shape)?;
    Ok(t * (g.rate / g.shape).sqrt())
}
