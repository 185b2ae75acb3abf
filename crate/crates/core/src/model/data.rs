use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// A covariate column.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    /// Factor with sorted `levels`; `codes[i]` indexes into `levels`.
    Categorical { levels: Vec<String>, codes: Vec<usize>, baseline: usize },
}

impl Column {
    /// Builds a factor from raw labels. `baseline` defaults to the first sorted level.
    pub fn categorical(labels: &[String], baseline: Option<&str>) -> Result<Self> {
        let mut levels: Vec<String> = labels.to_vec();
        levels.sort();
        levels.dedup();
        let codes = labels
            .iter()
            .map(|l| levels.binary_search(l).expect("level present"))
            .collect();
        let baseline = match baseline {
            Some(b) => levels
                .iter()
                .position(|l| l == b)
                .ok_or_else(|| Error::InvalidInput(format!("baseline level `{b}` not present")))?,
            None => 0,
        };
        Ok(Column::Categorical { levels, codes, baseline })
    }

    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn permuted(&self, order: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(order.iter().map(|&i| v[i]).collect()),
            Column::Categorical { levels, codes, baseline } => Column::Categorical {
                levels: levels.clone(),
                codes: order.iter().map(|&i| codes[i]).collect(),
                baseline: *baseline,
            },
        }
    }
}

/// Bounded responses with a single grouping factor and named covariates.
///
/// Group labels are sorted, so group indices `0..N` do not depend on row order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    response: Vec<f64>,
    groups: Vec<usize>,
    group_labels: Vec<String>,
    columns: BTreeMap<String, Column>,
}

impl Dataset {
    /// Validates and assembles a dataset. Responses must lie strictly inside (0, 1).
    pub fn new(response: Vec<f64>, group_labels: &[String], columns: BTreeMap<String, Column>) -> Result<Self> {
        let n = response.len();
        if n == 0 {
            return Err(Error::InvalidInput("dataset has no rows".into()));
        }
        for (row, &y) in response.iter().enumerate() {
            if !(y > 0.0 && y < 1.0) {
                return Err(Error::Data {
                    row: row + 1,
                    message: format!("response {y} is outside the open interval (0, 1)"),
                });
            }
        }
        if group_labels.len() != n {
            return Err(Error::InvalidInput(format!(
                "group column has {} entries for {n} responses",
                group_labels.len()
            )));
        }
        for (name, col) in &columns {
            if col.len() != n {
                return Err(Error::InvalidInput(format!("column `{name}` has {} entries, expected {n}", col.len())));
            }
            if let Column::Numeric(v) = col {
                if let Some(row) = v.iter().position(|x| !x.is_finite()) {
                    return Err(Error::Data { row: row + 1, message: format!("non-finite value in column `{name}`") });
                }
            }
        }
        let mut labels: Vec<String> = group_labels.to_vec();
        labels.sort();
        labels.dedup();
        let groups = group_labels
            .iter()
            .map(|g| labels.binary_search(g).expect("label present"))
            .collect();
        Ok(Self { response, groups, group_labels: labels, columns })
    }

    /// Dataset with every row in one group.
    pub fn ungrouped(response: Vec<f64>, columns: BTreeMap<String, Column>) -> Result<Self> {
        let labels = vec!["all".to_string(); response.len()];
        Self::new(response, &labels, columns)
    }

    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn n_groups(&self) -> usize {
        self.group_labels.len()
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn group_labels(&self) -> &[String] {
        &self.group_labels
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_groups()];
        for &g in &self.groups {
            sizes[g] += 1;
        }
        sizes
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns.get(name).ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn columns(&self) -> &BTreeMap<String, Column> {
        &self.columns
    }

    /// Reorders rows; `order[k]` is the source row of new row `k`.
    pub fn permute_rows(&self, order: &[usize]) -> Result<Self> {
        let n = self.n_rows();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::InvalidInput("row order is not a permutation".into()));
        }
        Ok(Self {
            response: order.iter().map(|&i| self.response[i]).collect(),
            groups: order.iter().map(|&i| self.groups[i]).collect(),
            group_labels: self.group_labels.clone(),
            columns: self.columns.iter().map(|(k, c)| (k.clone(), c.permuted(order))).collect(),
        })
    }

    /// Copy without row `row` (used for leave-one-out checks).
    pub fn without_row(&self, row: usize) -> Result<Self> {
        let keep: Vec<usize> = (0..self.n_rows()).filter(|&i| i != row).collect();
        let labels: Vec<String> = keep.iter().map(|&i| self.group_labels[self.groups[i]].clone()).collect();
        let columns = self
            .columns
            .iter()
            .map(|(k, c)| {
                let col = match c {
                    Column::Numeric(v) => Column::Numeric(keep.iter().map(|&i| v[i]).collect()),
                    Column::Categorical { levels, codes, baseline } => Column::Categorical {
                        levels: levels.clone(),
                        codes: keep.iter().map(|&i| codes[i]).collect(),
                        baseline: *baseline,
                    },
                };
                (k.clone(), col)
            })
            .collect();
        Self::new(keep.iter().map(|&i| self.response[i]).collect(), &labels, columns)
    }
}
