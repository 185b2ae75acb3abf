use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Settings for the standardized lattice around the hyperparameter mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeOptions {
    pub z_step: f64,
    /// Points whose log density falls this far below the centre are dropped.
    pub log_cutoff: f64,
    /// Largest |z| explored on any axis.
    pub max_z: f64,
    pub max_points: usize,
}

/// One evaluated lattice point.
#[derive(Debug, Clone)]
pub struct LatticePoint<T> {
    pub index: Vec<i32>,
    pub coords: Vec<f64>,
    pub log_post: f64,
    pub payload: T,
}

/// Points on `center + transform * (step * index)` that survived the cutoff.
#[derive(Debug, Clone)]
pub struct Lattice<T> {
    pub center: Vec<f64>,
    pub neg_hessian: DMatrix<f64>,
    pub transform: DMatrix<f64>,
    pub z_step: f64,
    pub points: Vec<LatticePoint<T>>,
    pub weights: Vec<f64>,
    /// Log of the coordinate-space volume represented by each point.
    pub log_cell_volume: f64,
    /// Candidates whose evaluation failed (treated as outside the cutoff).
    pub failed: usize,
}

impl<T> Lattice<T> {
    /// `log ∫ exp(log_post)` by the lattice rule.
    pub fn log_integral(&self) -> f64 {
        let m = self.points.iter().map(|p| p.log_post).fold(f64::NEG_INFINITY, f64::max);
        m + self.points.iter().map(|p| (p.log_post - m).exp()).sum::<f64>().ln() + self.log_cell_volume
    }
}

/// Standardizing map `coords = center + transform * z` from a negative Hessian.
pub fn standardizing_transform(neg_hessian: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = 0.5 * (neg_hessian + neg_hessian.transpose());
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(Error::NotPositiveDefinite(format!(
            "hyperparameter curvature at the mode has eigenvalues {:?}",
            eig.eigenvalues.as_slice()
        )));
    }
    let scale = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&scale))
}

/// Flood-fills the lattice from the centre, evaluating each frontier in parallel.
///
/// `eval` returns the log density and a payload; errors drop the point.
/// Frontiers are processed in index order so the result does not depend on
/// thread scheduling.
pub fn build_lattice<T, F>(
    center: &[f64],
    neg_hessian: &DMatrix<f64>,
    opts: &LatticeOptions,
    eval: F,
) -> Result<Lattice<T>>
where
    T: Send,
    F: Fn(&[f64]) -> Result<(f64, T)> + Sync,
{
    let dim = center.len();
    let transform = standardizing_transform(neg_hessian)?;
    let coords_of = |idx: &[i32]| -> Vec<f64> {
        let z = DVector::from_iterator(dim, idx.iter().map(|&k| k as f64 * opts.z_step));
        (DVector::from_column_slice(center) + &transform * z).as_slice().to_vec()
    };
    let kmax = (opts.max_z / opts.z_step).floor() as i32;
    let mut seen: BTreeMap<Vec<i32>, ()> = BTreeMap::new();
    let origin = vec![0i32; dim];
    seen.insert(origin.clone(), ());
    let mut frontier: BTreeSet<Vec<i32>> = BTreeSet::from([origin]);
    let mut points: Vec<LatticePoint<T>> = Vec::new();
    let mut failed = 0;
    let mut reference: Option<f64> = None;
    while !frontier.is_empty() {
        let batch: Vec<Vec<i32>> = std::mem::take(&mut frontier).into_iter().collect();
        let results: Vec<(Vec<i32>, Vec<f64>, Result<(f64, T)>)> = batch
            .into_par_iter()
            .map(|idx| {
                let c = coords_of(&idx);
                let r = eval(&c);
                (idx, c, r)
            })
            .collect();
        for (idx, coords, r) in results {
            let (lp, payload) = match r {
                Ok(v) => v,
                Err(e) => {
                    if reference.is_none() {
                        return Err(e);
                    }
                    failed += 1;
                    continue;
                }
            };
            let lp0 = *reference.get_or_insert(lp);
            if lp < lp0 - opts.log_cutoff {
                continue;
            }
            for axis in 0..dim {
                for dir in [-1, 1] {
                    let mut nb = idx.clone();
                    nb[axis] += dir;
                    if nb[axis].abs() > kmax || seen.contains_key(&nb) {
                        continue;
                    }
                    seen.insert(nb.clone(), ());
                    frontier.insert(nb);
                }
            }
            points.push(LatticePoint { index: idx, coords, log_post: lp, payload });
        }
        if points.len() + frontier.len() > opts.max_points {
            return Err(Error::InvalidInput(format!(
                "hyperparameter lattice exceeds {} points; increase z_step",
                opts.max_points
            )));
        }
    }
    points.sort_by(|a, b| a.index.cmp(&b.index));
    let m = points.iter().map(|p| p.log_post).fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = points.iter().map(|p| (p.log_post - m).exp()).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    let log_cell_volume = transform.determinant().abs().ln() + dim as f64 * opts.z_step.ln();
    Ok(Lattice {
        center: center.to_vec(),
        neg_hessian: neg_hessian.clone(),
        transform,
        z_step: opts.z_step,
        points,
        weights,
        log_cell_volume,
        failed,
    })
}
