use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_design, Column, Dataset, HyperPoint, ModelSpec, RandomEffects};

/// Generating values for [`simulate`]; `beta` follows the design's coefficient order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrueParams {
    pub beta: Vec<f64>,
    pub phi: f64,
    #[serde(default)]
    pub tau1_sq: Option<f64>,
    #[serde(default)]
    pub tau2_sq: Option<f64>,
    /// Off-diagonal of the random-effect covariance.
    #[serde(default)]
    pub rho: Option<f64>,
}

pub const SIZE_COLUMN: &str = "size";
pub const INCOME_COLUMN: &str = "income";
pub const SIZE_LEVELS: [&str; 3] = ["Large", "Medium", "Small"];
/// Rows per group of the default scenario (8 groups, 365 rows).
pub const DEFAULT_GROUP_SIZES: [usize; 8] = [70, 58, 52, 46, 41, 38, 33, 27];

/// Default scenario: random-intercept model with size and centred log income.
pub fn default_scenario() -> (ModelSpec, TrueParams) {
    let spec = ModelSpec::new(vec![SIZE_COLUMN.into(), INCOME_COLUMN.into()], RandomEffects::Intercept);
    let truth = TrueParams { beta: vec![0.40, -0.07, -0.13, 0.47], phi: 93.0, tau1_sq: Some(64.0), tau2_sq: None, rho: None };
    (spec, truth)
}

/// Draws covariates, random effects and beta responses.
///
/// Every dataset carries a three-level `size` factor (baseline `Large`) and a
/// centred log-income column `income`, whether or not `spec` uses them.
pub fn simulate(spec: &ModelSpec, truth: &TrueParams, sizes: &[usize], seed: u64) -> Result<Dataset> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::InvalidInput("every group needs at least one row".into()));
    }
    let theta = HyperPoint::from_natural(truth.phi, truth.tau1_sq, truth.tau2_sq, truth.rho)?;
    if theta.q() != spec.q() {
        return Err(Error::InvalidInput(format!(
            "true random-effect parameters imply q = {}, model has q = {}",
            theta.q(),
            spec.q()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = (sizes.len() as f64).log10().floor() as usize + 1;
    let mut labels = Vec::new();
    let mut size = Vec::new();
    let mut log_income = Vec::new();
    for (g, &n) in sizes.iter().enumerate() {
        // groups differ a little in typical income
        let shift = 0.3 * rng.sample::<f64, _>(StandardNormal);
        for _ in 0..n {
            labels.push(format!("G{:0width$}", g + 1));
            let u: f64 = rng.random();
            let level = if u < 0.3 { 0 } else if u < 0.65 { 1 } else { 2 };
            size.push(SIZE_LEVELS[level].to_string());
            log_income.push(11.0 + shift + 0.8 * rng.sample::<f64, _>(StandardNormal));
        }
    }
    let mean = log_income.iter().sum::<f64>() / log_income.len() as f64;
    let income: Vec<f64> = log_income.iter().map(|v| v - mean).collect();
    let mut columns = BTreeMap::new();
    columns.insert(SIZE_COLUMN.to_string(), Column::categorical(&size, Some("Large"))?);
    columns.insert(INCOME_COLUMN.to_string(), Column::Numeric(income));
    let placeholder = Dataset::new(vec![0.5; labels.len()], &labels, columns.clone())?;
    let design = build_design(&placeholder, spec)?;
    if truth.beta.len() != design.p() {
        return Err(Error::InvalidInput(format!("{} true coefficients for p = {}", truth.beta.len(), design.p())));
    }
    let mut latent = DVector::zeros(design.latent_dim());
    if let Some(q) = theta.precision() {
        let cov = q.clone().try_inverse().ok_or_else(|| Error::NotPositiveDefinite("true precision".into()))?;
        let l = cov.cholesky().ok_or_else(|| Error::NotPositiveDefinite("true covariance".into()))?.l();
        for g in 0..design.n_groups() {
            let e = DVector::from_fn(design.q(), |_, _| rng.sample::<f64, _>(StandardNormal));
            latent.rows_mut(design.b_offset(g), design.q()).copy_from(&(&l * e));
        }
    }
    latent.rows_mut(design.beta_offset(), design.p()).copy_from_slice(&truth.beta);
    let mut y = Vec::with_capacity(labels.len());
    for i in 0..labels.len() {
        let mu = spec.link.inverse(design.eta(i, latent.as_slice()));
        let dist = Beta::new(mu * truth.phi, (1.0 - mu) * truth.phi)
            .map_err(|e| Error::Domain(format!("cannot draw beta response: {e}")))?;
        let mut v: f64 = dist.sample(&mut rng);
        let mut tries = 0;
        while !(v > 0.0 && v < 1.0) && tries < 100 {
            v = dist.sample(&mut rng);
            tries += 1;
        }
        y.push(v);
    }
    Dataset::new(y, &labels, columns)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_simulation_is_reproducible() {
        let (spec, truth) = default_scenario();
        let a = simulate(&spec, &truth, &DEFAULT_GROUP_SIZES, 17).unwrap();
        let b = simulate(&spec, &truth, &DEFAULT_GROUP_SIZES, 17).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_rows(), 365);
        assert_eq!(a.n_groups(), 8);
        assert_ne!(a, simulate(&spec, &truth, &DEFAULT_GROUP_SIZES, 18).unwrap());
    }

    #[test]
    fn huge_precision_collapses_within_group_spread() {
        let spec = ModelSpec::new(vec![], RandomEffects::Intercept);
        let truth = TrueParams { beta: vec![0.2], phi: 1e6, tau1_sq: Some(10.0), tau2_sq: None, rho: None };
        let d = simulate(&spec, &truth, &[40, 40, 40], 3).unwrap();
        for g in 0..3 {
            let ys: Vec<f64> = (0..d.n_rows()).filter(|&i| d.groups()[i] == g).map(|i| d.response()[i]).collect();
            let m = ys.iter().sum::<f64>() / ys.len() as f64;
            let v = ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (ys.len() - 1) as f64;
            assert!(v < 1e-5, "{v}");
        }
    }

    #[test]
    fn mismatched_truth_is_rejected() {
        let (spec, mut truth) = default_scenario();
        truth.beta.pop();
        assert!(simulate(&spec, &truth, &[10, 10], 1).is_err());
        let (_, truth) = default_scenario();
        assert!(simulate(&ModelSpec::default(), &truth, &[10], 1).is_err());
    }
}
