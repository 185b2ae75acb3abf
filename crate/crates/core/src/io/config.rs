use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::table::{load_csv, DataConfig};
use super::{default_scenario, simulate, TrueParams, DEFAULT_GROUP_SIZES, INCOME_COLUMN, SIZE_COLUMN};
use crate::dist::GammaShapeRate;
use crate::error::{Error, Result};
use crate::laplace::LaplaceConfig;
use crate::mcmc::McmcConfig;
use crate::model::{Dataset, ModelSpec};
use crate::prior::{default_priors, ElicitationInput, PriorSpec, RaneffPrior};
use crate::sensitivity::{SensitivityParam, DEFAULT_TARGETS, PHI_SENSITIVITY_DEFAULT};

/// Seed of the synthetic default dataset.
pub const DEFAULT_SEED: u64 = 2024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    #[default]
    Laplace,
    Mcmc,
}

/// Everything a command needs. Every section is optional; missing values take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Seeds the simulated dataset and the MCMC chains.
    pub seed: u64,
    pub engine: Engine,
    /// CSV input; without it commands run on simulated data from `simulate`.
    pub data: Option<DataSource>,
    pub model: ModelSpec,
    pub priors: PriorOverrides,
    pub laplace: LaplaceConfig,
    pub mcmc: McmcConfig,
    pub ml: MlSection,
    pub sensitivity: SensitivitySection,
    pub compare: CompareSection,
    pub elicit: ElicitationInput,
    pub simulate: SimulateSection,
    pub output: OutputSection,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        let (model, _) = default_scenario();
        Self {
            seed: DEFAULT_SEED,
            engine: Engine::Laplace,
            data: None,
            model,
            priors: PriorOverrides::default(),
            laplace: LaplaceConfig::default(),
            mcmc: McmcConfig::default(),
            ml: MlSection::default(),
            sensitivity: SensitivitySection::default(),
            compare: CompareSection::default(),
            elicit: ElicitationInput::new(std::f64::consts::LN_2, 1.0),
            simulate: SimulateSection::default(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub path: PathBuf,
    pub response: String,
    #[serde(default)]
    pub group: Option<String>,
    #[serde(default)]
    pub numeric: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default)]
    pub baselines: std::collections::BTreeMap<String, String>,
    #[serde(default)]
    pub center: Vec<String>,
}

impl DataSource {
    pub fn layout(&self) -> DataConfig {
        DataConfig {
            response: self.response.clone(),
            group: self.group.clone(),
            numeric: self.numeric.clone(),
            categorical: self.categorical.clone(),
            baselines: self.baselines.clone(),
            center: self.center.clone(),
        }
    }
}

/// Replacements for parts of the default prior suite.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorOverrides {
    pub slope_precision: Option<f64>,
    pub phi: Option<GammaShapeRate>,
    /// Scalar random-effect precision (q = 1).
    pub tau: Option<GammaShapeRate>,
    pub wishart_df: Option<f64>,
    pub wishart_scale: Option<[[f64; 2]; 2]>,
}

impl PriorOverrides {
    pub fn apply(&self, spec: &ModelSpec) -> Result<PriorSpec> {
        let mut p = default_priors(spec);
        if let Some(v) = self.slope_precision {
            p.slope_precision = v;
        }
        if let Some(g) = self.phi {
            p.phi = g;
        }
        match &mut p.raneff {
            RaneffPrior::Gamma(g) => {
                if let Some(t) = self.tau {
                    *g = t;
                }
            }
            RaneffPrior::Wishart { df, scale } => {
                if let Some(d) = self.wishart_df {
                    *df = d;
                }
                if let Some(s) = self.wishart_scale {
                    *scale = s;
                }
            }
        }
        p.validate(spec.q())?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlSection {
    pub level: f64,
}

impl Default for MlSection {
    fn default() -> Self {
        Self { level: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivitySection {
    pub param: SensitivityParam,
    pub targets: Vec<f64>,
    /// Default prior the shifted priors are calibrated against; `None` keeps the model prior.
    pub phi_default: Option<GammaShapeRate>,
    pub tau_default: Option<GammaShapeRate>,
}

impl Default for SensitivitySection {
    fn default() -> Self {
        Self {
            param: SensitivityParam::Phi,
            targets: DEFAULT_TARGETS.to_vec(),
            phi_default: Some(PHI_SENSITIVITY_DEFAULT),
            tau_default: None,
        }
    }
}

impl SensitivitySection {
    pub fn calibration_default(&self) -> Option<GammaShapeRate> {
        match self.param {
            SensitivityParam::Phi => self.phi_default,
            SensitivityParam::Tau => self.tau_default,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub label: String,
    #[serde(default)]
    pub fixed: Vec<String>,
    #[serde(default)]
    pub random: crate::model::RandomEffects,
    #[serde(default)]
    pub link: crate::model::Link,
}

impl ModelEntry {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec { link: self.link, fixed: self.fixed.clone(), random: self.random.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub models: Vec<ModelEntry>,
}

impl Default for CompareSection {
    /// The nested sequence, labelled `model1` to `model5`.
    fn default() -> Self {
        let models = ModelSpec::nested_sequence(SIZE_COLUMN, INCOME_COLUMN)
            .into_iter()
            .enumerate()
            .map(|(k, s)| ModelEntry { label: format!("model{}", k + 1), fixed: s.fixed, random: s.random, link: s.link })
            .collect();
        Self { models }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Structure of the generating model (covariates are always generated).
    pub model: ModelSpec,
    pub truth: TrueParams,
    pub sizes: Vec<usize>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let (model, truth) = default_scenario();
        Self { model, truth, sizes: DEFAULT_GROUP_SIZES.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("betamix-out") }
    }
}

impl AnalysisConfig {
    /// Checks the parts that serde cannot.
    pub fn validate(&self) -> Result<()> {
        self.laplace.validate()?;
        McmcConfig { seed: self.seed, ..self.mcmc }.validate()?;
        self.priors.apply(&self.model)?;
        let t = &self.sensitivity.targets;
        if t.is_empty() || t.iter().any(|&h| !(h > 0.0 && h < 1.0)) || t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(format!("sensitivity targets {t:?} must be increasing values in (0, 1)")));
        }
        if !(self.ml.level > 0.0 && self.ml.level < 1.0) {
            return Err(Error::InvalidInput(format!("ml level {} outside (0, 1)", self.ml.level)));
        }
        if self.compare.models.is_empty() {
            return Err(Error::InvalidInput("compare needs at least one model".into()));
        }
        Ok(())
    }

    pub fn priors(&self) -> Result<PriorSpec> {
        self.priors.apply(&self.model)
    }

    /// MCMC settings with the top-level seed applied.
    pub fn mcmc_config(&self) -> McmcConfig {
        McmcConfig { seed: self.seed, ..self.mcmc }
    }

    /// Loads `data.path`, or simulates from the `simulate` section with `seed`.
    pub fn dataset(&self) -> Result<Dataset> {
        match &self.data {
            Some(src) => load_csv(&src.path, &src.layout()),
            None => self.simulated(),
        }
    }

    pub fn simulated(&self) -> Result<Dataset> {
        simulate(&self.simulate.model, &self.simulate.truth, &self.simulate.sizes, self.seed)
    }
}
