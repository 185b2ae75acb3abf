use serde::{Deserialize, Serialize};

use crate::dist::special::{std_normal_cdf, std_normal_pdf};

/// Smallest distance from 0 or 1 that an inverse-link mean is allowed to reach.
pub const MU_CLAMP: f64 = 1e-12;

/// Link between the mean in (0, 1) and the linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    #[default]
    Logit,
    Probit,
    Cloglog,
}

impl Link {
    /// `g(mu)`; `mu` is clamped to `[MU_CLAMP, 1 - MU_CLAMP]` first.
    pub fn eval(self, mu: f64) -> f64 {
        let mu = mu.clamp(MU_CLAMP, 1.0 - MU_CLAMP);
        match self {
            Link::Logit => (mu / (1.0 - mu)).ln(),
            Link::Probit => probit_quantile(mu),
            Link::Cloglog => (-(-mu).ln_1p()).ln(),
        }
    }

    /// `g^{-1}(eta)`, clamped to `[MU_CLAMP, 1 - MU_CLAMP]`.
    pub fn inverse(self, eta: f64) -> f64 {
        self.inverse_with_derivs(eta).0
    }

    /// `(mu, dmu/deta, d2mu/deta2)` at `eta`.
    pub fn inverse_with_derivs(self, eta: f64) -> (f64, f64, f64) {
        let (mu, d1, d2) = match self {
            Link::Logit => {
                let mu = if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                };
                let d1 = mu * (1.0 - mu);
                (mu, d1, d1 * (1.0 - 2.0 * mu))
            }
            Link::Probit => {
                let d1 = std_normal_pdf(eta);
                (std_normal_cdf(eta), d1, -eta * d1)
            }
            Link::Cloglog => {
                let ee = eta.exp();
                let mu = -(-ee).exp_m1();
                let d1 = (eta - ee).exp();
                (mu, d1, d1 * (1.0 - ee))
            }
        };
        (mu.clamp(MU_CLAMP, 1.0 - MU_CLAMP), d1, d2)
    }
}

// Standard normal quantile by Newton refinement of a bisection bracket.
fn probit_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if std_normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..3 {
        let d = std_normal_pdf(x);
        if d > 0.0 {
            x -= (std_normal_cdf(x) - p) / d;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logit_examples() {
        assert_eq!(Link::Logit.eval(0.5), 0.0);
        assert!((Link::Logit.inverse(0.4) - 0.598_687_660_112_452_3).abs() < 1e-15);
    }

    #[test]
    fn roundtrips() {
        for link in [Link::Logit, Link::Probit, Link::Cloglog] {
            for k in 0..=200 {
                let t = k as f64 / 200.0;
                let mu = 1e-8 + t * (1.0 - 2e-8);
                let back = link.inverse(link.eval(mu));
                assert!((back - mu).abs() < 1e-12, "{link:?} mu={mu} back={back}");
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for link in [Link::Logit, Link::Probit, Link::Cloglog] {
            for &eta in &[-3.0, -0.7, 0.0, 0.4, 2.2] {
                let h = 1e-5;
                let (_, d1, d2) = link.inverse_with_derivs(eta);
                let fd1 = (link.inverse(eta + h) - link.inverse(eta - h)) / (2.0 * h);
                let fd2 = (link.inverse_with_derivs(eta + h).1 - link.inverse_with_derivs(eta - h).1) / (2.0 * h);
                assert!((d1 - fd1).abs() < 1e-9, "{link:?}");
                assert!((d2 - fd2).abs() < 1e-8, "{link:?}");
            }
        }
    }

    #[test]
    fn saturates_without_nan() {
        for link in [Link::Logit, Link::Probit, Link::Cloglog] {
            for &eta in &[-800.0, 800.0] {
                let mu = link.inverse(eta);
                assert!((MU_CLAMP..=1.0 - MU_CLAMP).contains(&mu));
            }
        }
    }
}
