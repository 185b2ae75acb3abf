use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marginal::MarginalDensity;
use crate::model::{Column, Dataset};

/// Which CSV columns play which role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub response: String,
    /// Grouping factor; without one every row is its own single group.
    #[serde(default)]
    pub group: Option<String>,
    #[serde(default)]
    pub numeric: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
    /// Baseline level per categorical column (default: first level in sorted order).
    #[serde(default)]
    pub baselines: BTreeMap<String, String>,
    /// Numeric columns to centre at their sample mean.
    #[serde(default)]
    pub center: Vec<String>,
}

impl DataConfig {
    /// Layout written by [`dataset_to_csv`] for simulated data.
    pub fn synthetic() -> Self {
        Self {
            response: "y".into(),
            group: Some("group".into()),
            numeric: vec![super::INCOME_COLUMN.into()],
            categorical: vec![super::SIZE_COLUMN.into()],
            baselines: BTreeMap::from([(super::SIZE_COLUMN.to_string(), "Large".to_string())]),
            center: Vec::new(),
        }
    }
}

fn is_missing(s: &str) -> bool {
    matches!(s.trim(), "" | "NA" | "na" | "NaN" | "nan" | "null" | ".")
}

/// Reads a header-first CSV into a validated [`Dataset`].
pub fn load_csv(path: impl AsRef<Path>, cfg: &DataConfig) -> Result<Dataset> {
    let text = fs::read_to_string(path.as_ref())?;
    parse_csv(&text, cfg)
}

/// Same as [`load_csv`] for in-memory text.
pub fn parse_csv(text: &str, cfg: &DataConfig) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: HashMap<String, usize> =
        reader.headers()?.iter().enumerate().map(|(i, h)| (h.to_string(), i)).collect();
    let index = |name: &str| header.get(name).copied().ok_or_else(|| Error::UnknownColumn(name.to_string()));
    let y_col = index(&cfg.response)?;
    let g_col = cfg.group.as_deref().map(index).transpose()?;
    let num_cols: Vec<(String, usize)> = cfg.numeric.iter().map(|n| index(n).map(|i| (n.clone(), i))).collect::<Result<_>>()?;
    let cat_cols: Vec<(String, usize)> =
        cfg.categorical.iter().map(|n| index(n).map(|i| (n.clone(), i))).collect::<Result<_>>()?;
    for c in &cfg.center {
        if !cfg.numeric.contains(c) {
            return Err(Error::InvalidInput(format!("centred column `{c}` is not listed as numeric")));
        }
    }
    for b in cfg.baselines.keys() {
        if !cfg.categorical.contains(b) {
            return Err(Error::InvalidInput(format!("baseline given for `{b}`, which is not categorical")));
        }
    }

    let mut y = Vec::new();
    let mut groups = Vec::new();
    let mut nums: Vec<Vec<f64>> = vec![Vec::new(); num_cols.len()];
    let mut cats: Vec<Vec<String>> = vec![Vec::new(); cat_cols.len()];
    for (k, rec) in reader.records().enumerate() {
        let row = k + 1;
        let rec = rec?;
        let field = |i: usize, name: &str| -> Result<&str> {
            let v = rec.get(i).unwrap_or("");
            if is_missing(v) {
                return Err(Error::Data { row, message: format!("missing value in column `{name}`") });
            }
            Ok(v)
        };
        let number = |i: usize, name: &str| -> Result<f64> {
            let v = field(i, name)?;
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Data { row, message: format!("`{v}` in column `{name}` is not a finite number") })
        };
        let v = number(y_col, &cfg.response)?;
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Data { row, message: format!("response {v} is outside the open interval (0, 1)") });
        }
        y.push(v);
        if let (Some(i), Some(name)) = (g_col, cfg.group.as_deref()) {
            groups.push(field(i, name)?.to_string());
        }
        for (j, (name, i)) in num_cols.iter().enumerate() {
            nums[j].push(number(*i, name)?);
        }
        for (j, (name, i)) in cat_cols.iter().enumerate() {
            cats[j].push(field(*i, name)?.to_string());
        }
    }
    if y.is_empty() {
        return Err(Error::InvalidInput("CSV has a header but no data rows".into()));
    }
    let mut columns = BTreeMap::new();
    for ((name, _), mut v) in num_cols.into_iter().zip(nums) {
        if cfg.center.contains(&name) {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter_mut().for_each(|x| *x -= m);
        }
        columns.insert(name, Column::Numeric(v));
    }
    for ((name, _), labels) in cat_cols.into_iter().zip(cats) {
        let col = Column::categorical(&labels, cfg.baselines.get(&name).map(String::as_str))?;
        columns.insert(name, col);
    }
    match cfg.group {
        Some(_) => Dataset::new(y, &groups, columns),
        None => Dataset::ungrouped(y, columns),
    }
}

/// Writes a dataset in the [`DataConfig::synthetic`] layout: `y`, `group`, then covariates by name.
pub fn dataset_to_csv(data: &Dataset) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["y".to_string(), "group".to_string()];
    header.extend(data.columns().keys().cloned());
    w.write_record(&header)?;
    for i in 0..data.n_rows() {
        let mut rec = vec![data.response()[i].to_string(), data.group_labels()[data.groups()[i]].clone()];
        for col in data.columns().values() {
            rec.push(match col {
                Column::Numeric(v) => v[i].to_string(),
                Column::Categorical { levels, codes, .. } => levels[codes[i]].clone(),
            });
        }
        w.write_record(&rec)?;
    }
    finish(w)
}

/// Two-column density grid.
pub fn marginal_to_csv(m: &MarginalDensity) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "density"])?;
    for (x, d) in m.x().iter().zip(m.density()) {
        w.write_record([x.to_string(), d.to_string()])?;
    }
    finish(w)
}

pub(crate) fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes through a temporary file in the same directory and renames it into place.
pub fn write_atomic(path: impl AsRef<Path>, contents: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| Error::InvalidInput(format!("`{}` is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}
