use serde::{Deserialize, Serialize};

use super::data::{Column, Dataset};
use super::link::Link;
use crate::error::{Error, Result};

/// Random-effect structure for the single grouping factor.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomEffects {
    #[default]
    None,
    Intercept,
    /// Random intercept plus a random slope on the named numeric column.
    InterceptSlope(String),
}

/// Model structure: link, fixed-effect columns and random effects.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub link: Link,
    /// Covariate columns entering the fixed effects (the intercept is implicit).
    #[serde(default)]
    pub fixed: Vec<String>,
    #[serde(default)]
    pub random: RandomEffects,
}

impl ModelSpec {
    pub fn new(fixed: Vec<String>, random: RandomEffects) -> Self {
        Self { link: Link::Logit, fixed, random }
    }

    /// Number of random effects per group.
    pub fn q(&self) -> usize {
        match self.random {
            RandomEffects::None => 0,
            RandomEffects::Intercept => 1,
            RandomEffects::InterceptSlope(_) => 2,
        }
    }

    /// The nested sequence: null, +size, +income, +random intercept, +random income slope.
    pub fn nested_sequence(size: &str, income: &str) -> Vec<ModelSpec> {
        let both = vec![size.to_string(), income.to_string()];
        vec![
            ModelSpec::new(vec![], RandomEffects::None),
            ModelSpec::new(vec![size.to_string()], RandomEffects::None),
            ModelSpec::new(both.clone(), RandomEffects::None),
            ModelSpec::new(both.clone(), RandomEffects::Intercept),
            ModelSpec::new(both, RandomEffects::InterceptSlope(income.to_string())),
        ]
    }
}

/// Design matrices in row-major storage plus the group index map.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    n: usize,
    p: usize,
    q: usize,
    x: Vec<f64>,
    z: Vec<f64>,
    groups: Vec<usize>,
    group_rows: Vec<Vec<usize>>,
    beta_names: Vec<String>,
    group_labels: Vec<String>,
}

impl Design {
    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Number of groups carrying random effects (0 when `q == 0`).
    pub fn n_groups(&self) -> usize {
        if self.q == 0 {
            0
        } else {
            self.group_rows.len()
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.n_groups() * self.q + self.p
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn z_row(&self, i: usize) -> &[f64] {
        &self.z[i * self.q..(i + 1) * self.q]
    }

    pub fn group(&self, i: usize) -> usize {
        self.groups[i]
    }

    pub fn group_rows(&self, g: usize) -> &[usize] {
        &self.group_rows[g]
    }

    pub fn beta_names(&self) -> &[String] {
        &self.beta_names
    }

    pub fn group_labels(&self) -> &[String] {
        &self.group_labels
    }

    /// Offset of group `g`'s effects inside the latent vector.
    pub fn b_offset(&self, g: usize) -> usize {
        g * self.q
    }

    /// Offset of the regression coefficients inside the latent vector.
    pub fn beta_offset(&self) -> usize {
        self.n_groups() * self.q
    }

    /// Dense `X` (n x p).
    pub fn x_matrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.n, self.p, &self.x)
    }

    /// Dense `Z` (n x q).
    pub fn z_matrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.n, self.q, &self.z)
    }

    /// Linear predictor for row `i` given the stacked latent vector.
    #[inline]
    pub fn eta(&self, i: usize, latent: &[f64]) -> f64 {
        let off = self.beta_offset();
        let mut eta: f64 = self.x_row(i).iter().zip(&latent[off..]).map(|(a, b)| a * b).sum();
        if self.q > 0 {
            let b = &latent[self.b_offset(self.groups[i])..];
            eta += self.z_row(i).iter().zip(b).map(|(a, b)| a * b).sum::<f64>();
        }
        eta
    }
}

/// Builds `X` (intercept plus treatment-coded factors) and `Z` for a model.
pub fn build_design(data: &Dataset, spec: &ModelSpec) -> Result<Design> {
    let n = data.n_rows();
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut names = vec!["(Intercept)".to_string()];
    for name in &spec.fixed {
        match data.column(name)? {
            Column::Numeric(v) => {
                let first = v[0];
                if v.iter().all(|&x| x == first) {
                    return Err(Error::InvalidInput(format!(
                        "column `{name}` is constant and duplicates the intercept"
                    )));
                }
                cols.push(v.clone());
                names.push(name.clone());
            }
            Column::Categorical { levels, codes, baseline } => {
                if levels.len() < 2 {
                    return Err(Error::InvalidInput(format!("factor `{name}` has a single level")));
                }
                for (lvl, label) in levels.iter().enumerate() {
                    if lvl == *baseline {
                        continue;
                    }
                    cols.push(codes.iter().map(|&c| if c == lvl { 1.0 } else { 0.0 }).collect());
                    names.push(format!("{name}{label}"));
                }
            }
        }
    }
    for a in 0..cols.len() {
        for b in (a + 1)..cols.len() {
            if cols[a] == cols[b] {
                return Err(Error::InvalidInput(format!(
                    "design columns `{}` and `{}` are identical",
                    names[a], names[b]
                )));
            }
        }
    }
    let p = cols.len();
    let mut x = vec![0.0; n * p];
    for (j, c) in cols.iter().enumerate() {
        for i in 0..n {
            x[i * p + j] = c[i];
        }
    }
    let q = spec.q();
    let z = match &spec.random {
        RandomEffects::None => Vec::new(),
        RandomEffects::Intercept => vec![1.0; n],
        RandomEffects::InterceptSlope(col) => match data.column(col)? {
            Column::Numeric(v) => v.iter().flat_map(|&s| [1.0, s]).collect(),
            Column::Categorical { .. } => {
                return Err(Error::InvalidInput(format!("random slope column `{col}` must be numeric")))
            }
        },
    };
    let mut group_rows = vec![Vec::new(); data.n_groups()];
    for (i, &g) in data.groups().iter().enumerate() {
        group_rows[g].push(i);
    }
    Ok(Design {
        n,
        p,
        q,
        x,
        z,
        groups: data.groups().to_vec(),
        group_rows,
        beta_names: names,
        group_labels: data.group_labels().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn toy() -> Dataset {
        let labels: Vec<String> = ["a", "a", "b", "b", "c"].iter().map(|s| s.to_string()).collect();
        let size: Vec<String> = ["Large", "Small", "Medium", "Large", "Small"].iter().map(|s| s.to_string()).collect();
        let mut cols = BTreeMap::new();
        cols.insert("size".into(), Column::categorical(&size, Some("Large")).unwrap());
        cols.insert("income".into(), Column::Numeric(vec![-0.2, 0.1, 0.4, -0.3, 0.0]));
        cols.insert("const".into(), Column::Numeric(vec![2.0; 5]));
        Dataset::new(vec![0.2, 0.4, 0.6, 0.5, 0.3], &labels, cols).unwrap()
    }

    #[test]
    fn intercept_only() {
        let d = build_design(&toy(), &ModelSpec::default()).unwrap();
        assert_eq!(d.p(), 1);
        assert_eq!(d.q(), 0);
        assert!((0..5).all(|i| d.x_row(i) == [1.0]));
        assert_eq!(d.latent_dim(), 1);
    }

    #[test]
    fn full_structure_dimensions_and_treatment_coding() {
        let spec = ModelSpec::new(
            vec!["size".into(), "income".into()],
            RandomEffects::InterceptSlope("income".into()),
        );
        let d = build_design(&toy(), &spec).unwrap();
        assert_eq!((d.p(), d.q(), d.n_groups()), (4, 2, 3));
        assert_eq!(d.beta_names(), &["(Intercept)", "sizeMedium", "sizeSmall", "income"]);
        // Large rows carry zeros in both dummies
        assert_eq!(&d.x_row(0)[1..3], &[0.0, 0.0]);
        assert_eq!(&d.x_row(3)[1..3], &[0.0, 0.0]);
        assert_eq!(&d.x_row(1)[1..3], &[0.0, 1.0]);
        assert_eq!(d.z_row(2), &[1.0, 0.4]);
        assert_eq!(d.group_rows(1), &[2, 3]);
        assert_eq!(d.latent_dim(), 3 * 2 + 4);
    }

    #[test]
    fn rejects_bad_columns() {
        let d = toy();
        assert!(matches!(
            build_design(&d, &ModelSpec::new(vec!["nope".into()], RandomEffects::None)),
            Err(Error::UnknownColumn(_))
        ));
        assert!(build_design(&d, &ModelSpec::new(vec!["const".into()], RandomEffects::None)).is_err());
        assert!(build_design(&d, &ModelSpec::new(vec!["income".into(), "income".into()], RandomEffects::None)).is_err());
        assert!(build_design(&d, &ModelSpec::new(vec![], RandomEffects::InterceptSlope("size".into()))).is_err());
    }
}
