use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

use betamix::io::{write_atomic, AnalysisConfig};
use betamix::marginal::MarginalDensity;
use betamix::model::Dataset;
use betamix::selection::Criteria;

use crate::CliError;

/// One reported parameter. `lower`/`upper` bound the 95% interval of the engine.
#[derive(Debug, Serialize)]
pub struct ParamRow {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub median: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl ParamRow {
    pub fn from_marginal(m: &MarginalDensity) -> Self {
        let (lower, upper) = m.equal_tail(0.95);
        Self { name: m.name.clone(), mean: m.mean, sd: m.sd, median: Some(m.quantile(0.5)), lower: Some(lower), upper: Some(upper) }
    }
}

#[derive(Debug, Serialize)]
pub struct DataInfo {
    pub source: String,
    pub rows: usize,
    pub groups: usize,
}

#[derive(Debug, Serialize)]
pub struct CriteriaSummary {
    pub dic: f64,
    pub p_d: f64,
    pub lml: f64,
    pub mean_log_cpo: f64,
    pub cpo_flagged: usize,
}

impl From<&Criteria> for CriteriaSummary {
    fn from(c: &Criteria) -> Self {
        Self { dic: c.dic, p_d: c.p_d, lml: c.lml, mean_log_cpo: c.mean_log_cpo, cpo_flagged: c.cpo_flagged.len() }
    }
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    status: &'static str,
    command: &'a str,
    version: &'static str,
    seed: u64,
    engine: &'a str,
    data: Option<&'a DataInfo>,
    parameters: &'a [ParamRow],
    criteria: Option<&'a CriteriaSummary>,
    timings: Timings,
    files: &'a [String],
    details: &'a Value,
}

#[derive(Debug, Serialize)]
struct Timings {
    total_secs: f64,
}

/// Collects output files under the output directory and writes the summary last.
pub struct Output {
    dir: PathBuf,
    files: Vec<String>,
    started: Instant,
}

impl Output {
    pub fn new(cfg: &AnalysisConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(&cfg.output.dir)?;
        Ok(Self { dir: cfg.output.dir.clone(), files: Vec::new(), started: Instant::now() })
    }

    pub fn write(&mut self, rel: impl AsRef<Path>, contents: &str) -> Result<(), CliError> {
        let rel = rel.as_ref();
        write_atomic(self.dir.join(rel), contents.as_bytes())?;
        self.files.push(rel.to_string_lossy().replace('\\', "/"));
        Ok(())
    }

    /// One two-column CSV per marginal under `marginals/`.
    pub fn write_marginals<'m>(&mut self, marginals: impl IntoIterator<Item = &'m MarginalDensity>) -> Result<(), CliError> {
        self.marginals_in(PathBuf::from("marginals"), marginals)
    }

    /// Same as [`Output::write_marginals`] in `marginals/<label>/`.
    pub fn write_marginals_under<'m>(
        &mut self,
        label: &str,
        marginals: impl IntoIterator<Item = &'m MarginalDensity>,
    ) -> Result<(), CliError> {
        self.marginals_in(PathBuf::from("marginals").join(file_stem(label)), marginals)
    }

    fn marginals_in<'m>(&mut self, dir: PathBuf, marginals: impl IntoIterator<Item = &'m MarginalDensity>) -> Result<(), CliError> {
        for m in marginals {
            let csv = betamix::io::marginal_to_csv(m)?;
            self.write(dir.join(format!("{}.csv", file_stem(&m.name))), &csv)?;
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    pub fn finish(
        mut self,
        command: &str,
        cfg: &AnalysisConfig,
        engine: &str,
        data: Option<&DataInfo>,
        parameters: &[ParamRow],
        criteria: Option<&CriteriaSummary>,
        details: Value,
    ) -> Result<PathBuf, CliError> {
        self.files.push("summary.json".into());
        let summary = Summary {
            status: "ok",
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.seed,
            engine,
            data,
            parameters,
            criteria,
            timings: Timings { total_secs: self.started.elapsed().as_secs_f64() },
            files: &self.files,
            details: &details,
        };
        let path = self.dir.join("summary.json");
        write_atomic(&path, format!("{:#}\n", serde_json::to_value(&summary)?).as_bytes())?;
        Ok(path)
    }
}

pub fn data_info(cfg: &AnalysisConfig, data: &Dataset) -> DataInfo {
    let source = match &cfg.data {
        Some(src) => src.path.display().to_string(),
        None => format!("simulated (seed {})", cfg.seed),
    };
    DataInfo { source, rows: data.n_rows(), groups: data.n_groups() }
}

/// File-name-safe form of a parameter name: `(Intercept)` becomes `Intercept`.
pub fn file_stem(name: &str) -> String {
    let s: String = name.chars().filter(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')).collect();
    if s.is_empty() {
        "param".into()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems() {
        assert_eq!(file_stem("(Intercept)"), "Intercept");
        assert_eq!(file_stem("tau1_sq"), "tau1_sq");
        assert_eq!(file_stem("()"), "param");
    }
}
