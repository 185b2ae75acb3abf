use nalgebra::DMatrix;

use crate::dist::{gamma_logpdf, wishart_logpdf};
use crate::error::{Error, Result};
use crate::prior::{PriorSpec, RaneffPrior};

/// Hyperparameters on the unconstrained internal scale.
///
/// `tau` always denotes a random-effect *precision*: for one random effect
/// `b_i ~ N(0, 1/tau)`. With two effects the covariance is
/// `Sigma = [[1/tau1^2, rho], [rho, 1/tau2^2]]`; here `log_tau1 = ln(tau1^2)`,
/// `log_tau2 = ln(tau2^2)` and `z_rho = atanh(rho * tau1 * tau2)`, i.e. the
/// Fisher transform of the implied correlation, so every finite point maps
/// to an SPD precision `Q = Sigma^{-1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HyperPoint {
    Phi { log_phi: f64 },
    Scalar { log_phi: f64, log_tau: f64 },
    Pair { log_phi: f64, log_tau1: f64, log_tau2: f64, z_rho: f64 },
}

/// Natural-scale view of a [`HyperPoint`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaturalHyper {
    pub phi: f64,
    /// `tau1^2` (or the scalar precision).
    pub tau1_sq: Option<f64>,
    pub tau2_sq: Option<f64>,
    /// Off-diagonal entry of `Sigma` as printed (a covariance).
    pub rho: Option<f64>,
    /// Implied correlation `rho * tau1 * tau2`.
    pub correlation: Option<f64>,
}

impl HyperPoint {
    /// Number of hyperparameters for `q` random effects.
    pub fn dim_for(q: usize) -> usize {
        match q {
            0 => 1,
            1 => 2,
            _ => 4,
        }
    }

    pub fn from_slice(q: usize, v: &[f64]) -> Result<Self> {
        if v.len() != Self::dim_for(q) || q > 2 {
            return Err(Error::InvalidInput(format!("hyper point of length {} for q = {q}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("non-finite hyper point {v:?}")));
        }
        Ok(match q {
            0 => HyperPoint::Phi { log_phi: v[0] },
            1 => HyperPoint::Scalar { log_phi: v[0], log_tau: v[1] },
            _ => HyperPoint::Pair { log_phi: v[0], log_tau1: v[1], log_tau2: v[2], z_rho: v[3] },
        })
    }

    /// Maps natural-scale values back. For `q = 2`, `rho` is the printed covariance.
    pub fn from_natural(
        phi: f64,
        tau1_sq: Option<f64>,
        tau2_sq: Option<f64>,
        rho: Option<f64>,
    ) -> Result<Self> {
        if !(phi > 0.0) {
            return Err(Error::Domain(format!("phi = {phi} must be positive")));
        }
        match (tau1_sq, tau2_sq, rho) {
            (None, None, None) => Ok(HyperPoint::Phi { log_phi: phi.ln() }),
            (Some(t), None, None) if t > 0.0 => Ok(HyperPoint::Scalar { log_phi: phi.ln(), log_tau: t.ln() }),
            (Some(t1), Some(t2), Some(r)) if t1 > 0.0 && t2 > 0.0 => {
                let corr = r * (t1 * t2).sqrt();
                if !(corr.abs() < 1.0) {
                    return Err(Error::NotPositiveDefinite(format!("implied correlation {corr}")));
                }
                Ok(HyperPoint::Pair { log_phi: phi.ln(), log_tau1: t1.ln(), log_tau2: t2.ln(), z_rho: corr.atanh() })
            }
            other => Err(Error::InvalidInput(format!("inconsistent natural hyperparameters {other:?}"))),
        }
    }

    pub fn q(&self) -> usize {
        match self {
            HyperPoint::Phi { .. } => 0,
            HyperPoint::Scalar { .. } => 1,
            HyperPoint::Pair { .. } => 2,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match *self {
            HyperPoint::Phi { log_phi } => vec![log_phi],
            HyperPoint::Scalar { log_phi, log_tau } => vec![log_phi, log_tau],
            HyperPoint::Pair { log_phi, log_tau1, log_tau2, z_rho } => vec![log_phi, log_tau1, log_tau2, z_rho],
        }
    }

    pub fn log_phi(&self) -> f64 {
        match *self {
            HyperPoint::Phi { log_phi } | HyperPoint::Scalar { log_phi, .. } | HyperPoint::Pair { log_phi, .. } => {
                log_phi
            }
        }
    }

    pub fn phi(&self) -> f64 {
        self.log_phi().exp()
    }

    pub fn natural(&self) -> NaturalHyper {
        match *self {
            HyperPoint::Phi { log_phi } => {
                NaturalHyper { phi: log_phi.exp(), tau1_sq: None, tau2_sq: None, rho: None, correlation: None }
            }
            HyperPoint::Scalar { log_phi, log_tau } => NaturalHyper {
                phi: log_phi.exp(),
                tau1_sq: Some(log_tau.exp()),
                tau2_sq: None,
                rho: None,
                correlation: None,
            },
            HyperPoint::Pair { log_phi, log_tau1, log_tau2, z_rho } => {
                let corr = z_rho.tanh();
                NaturalHyper {
                    phi: log_phi.exp(),
                    tau1_sq: Some(log_tau1.exp()),
                    tau2_sq: Some(log_tau2.exp()),
                    rho: Some(corr * (-0.5 * (log_tau1 + log_tau2)).exp()),
                    correlation: Some(corr),
                }
            }
        }
    }

    /// Random-effect precision matrix `Q` (q x q), `None` when `q == 0`.
    pub fn precision(&self) -> Option<DMatrix<f64>> {
        match *self {
            HyperPoint::Phi { .. } => None,
            HyperPoint::Scalar { log_tau, .. } => Some(DMatrix::from_element(1, 1, log_tau.exp())),
            HyperPoint::Pair { log_tau1, log_tau2, z_rho, .. } => {
                let corr = z_rho.tanh();
                let (t1, t2) = (log_tau1.exp(), log_tau2.exp());
                let rho = corr / (t1 * t2).sqrt();
                let det = (1.0 - corr * corr) / (t1 * t2);
                Some(DMatrix::from_row_slice(2, 2, &[1.0 / (t2 * det), -rho / det, -rho / det, 1.0 / (t1 * det)]))
            }
        }
    }

    /// `ln |Q|`, without a factorization.
    pub fn precision_logdet(&self) -> f64 {
        match *self {
            HyperPoint::Phi { .. } => 0.0,
            HyperPoint::Scalar { log_tau, .. } => log_tau,
            HyperPoint::Pair { log_tau1, log_tau2, z_rho, .. } => log_tau1 + log_tau2 + 2.0 * ln_cosh(z_rho),
        }
    }

    /// Log hyperprior density on the internal scale (natural-scale prior plus log-Jacobian).
    pub fn log_hyperprior(&self, priors: &PriorSpec) -> Result<f64> {
        let mut lp = gamma_logpdf(self.phi(), &priors.phi)? + self.log_phi();
        match (self, &priors.raneff) {
            (HyperPoint::Phi { .. }, _) => {}
            (HyperPoint::Scalar { log_tau, .. }, RaneffPrior::Gamma(g)) => {
                lp += gamma_logpdf(log_tau.exp(), g)? + log_tau;
            }
            (HyperPoint::Pair { log_tau1, log_tau2, z_rho, .. }, RaneffPrior::Wishart { df, .. }) => {
                let s = priors.raneff.scale_matrix().expect("wishart scale");
                let q = self.precision().expect("q = 2");
                lp += wishart_logpdf(&q, *df, &s)? + 1.5 * (log_tau1 + log_tau2) + 4.0 * ln_cosh(*z_rho);
            }
            (h, r) => {
                return Err(Error::InvalidInput(format!(
                    "random-effect prior {r:?} does not match hyper point with q = {}",
                    h.q()
                )))
            }
        }
        Ok(lp)
    }

    /// Reporting names of the natural-scale hyperparameters.
    pub fn names(q: usize) -> &'static [&'static str] {
        match q {
            0 => &["phi"],
            1 => &["phi", "tau1_sq"],
            _ => &["phi", "tau1_sq", "tau2_sq", "rho"],
        }
    }
}

pub(crate) fn ln_cosh(z: f64) -> f64 {
    let a = z.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}
