//! Symmetric block matrices with the latent-field sparsity pattern:
//! block-diagonal random-effect blocks, dense coupling to the regression
//! coefficients, and a dense coefficient block.
//!
//! ```text
//!   [ D_1          C_1 ]
//!   [     ...      ... ]
//!   [         D_N  C_N ]
//!   [ C_1' ... C_N'  B ]
//! ```
//!
//! Factorization goes through the Schur complement `S = B - sum C_i' D_i^{-1} C_i`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSymmetric {
    q: usize,
    p: usize,
    pub(crate) diag: Vec<DMatrix<f64>>,
    pub(crate) cross: Vec<DMatrix<f64>>,
    pub(crate) beta: DMatrix<f64>,
}

impl BlockSymmetric {
    pub fn zeros(n_groups: usize, q: usize, p: usize) -> Self {
        Self {
            q,
            p,
            diag: vec![DMatrix::zeros(q, q); n_groups],
            cross: vec![DMatrix::zeros(q, p); n_groups],
            beta: DMatrix::zeros(p, p),
        }
    }

    pub fn n_groups(&self) -> usize {
        self.diag.len()
    }

    pub fn dim(&self) -> usize {
        self.n_groups() * self.q + self.p
    }

    pub fn diag_block(&self, g: usize) -> &DMatrix<f64> {
        &self.diag[g]
    }

    pub fn cross_block(&self, g: usize) -> &DMatrix<f64> {
        &self.cross[g]
    }

    pub fn beta_block(&self) -> &DMatrix<f64> {
        &self.beta
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let off = self.n_groups() * self.q;
        let mut m = DMatrix::zeros(n, n);
        for g in 0..self.n_groups() {
            let o = g * self.q;
            m.view_mut((o, o), (self.q, self.q)).copy_from(&self.diag[g]);
            m.view_mut((o, off), (self.q, self.p)).copy_from(&self.cross[g]);
            m.view_mut((off, o), (self.p, self.q)).copy_from(&self.cross[g].transpose());
        }
        m.view_mut((off, off), (self.p, self.p)).copy_from(&self.beta);
        m
    }

    /// `self * v` without densifying.
    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let off = self.n_groups() * self.q;
        let vb = v.rows(off, self.p).clone_owned();
        let mut out = DVector::zeros(self.dim());
        let mut top = &self.beta * &vb;
        for g in 0..self.n_groups() {
            let o = g * self.q;
            let vg = v.rows(o, self.q).clone_owned();
            let r = &self.diag[g] * &vg + &self.cross[g] * &vb;
            out.rows_mut(o, self.q).copy_from(&r);
            top += self.cross[g].transpose() * vg;
        }
        out.rows_mut(off, self.p).copy_from(&top);
        out
    }

    /// Cholesky-based factorization; fails when the matrix is not SPD.
    pub fn factor(&self) -> Result<BlockCholesky> {
        let mut diag_chol = Vec::with_capacity(self.n_groups());
        let mut w = Vec::with_capacity(self.n_groups());
        let mut schur = self.beta.clone();
        let mut logdet = 0.0;
        for g in 0..self.n_groups() {
            let chol = Cholesky::new(self.diag[g].clone())
                .ok_or_else(|| Error::NotPositiveDefinite(format!("random-effect block {g}")))?;
            logdet += 2.0 * chol.l().diagonal().map(f64::ln).sum();
            let wg = chol.solve(&self.cross[g]);
            schur -= self.cross[g].transpose() * &wg;
            diag_chol.push(chol);
            w.push(wg);
        }
        let schur = 0.5 * (&schur + schur.transpose());
        let schur_chol =
            Cholesky::new(schur).ok_or_else(|| Error::NotPositiveDefinite("coefficient Schur complement".into()))?;
        logdet += 2.0 * schur_chol.l().diagonal().map(f64::ln).sum();
        let beta_cov = schur_chol.inverse();
        Ok(BlockCholesky { q: self.q, p: self.p, diag_chol, w, cross: self.cross.clone(), schur_chol, beta_cov, logdet })
    }
}

/// Factorized [`BlockSymmetric`]; exposes solves, the log-determinant and
/// the covariance pieces needed for marginal variances.
#[derive(Debug, Clone)]
pub struct BlockCholesky {
    q: usize,
    p: usize,
    diag_chol: Vec<Cholesky<f64, Dyn>>,
    w: Vec<DMatrix<f64>>,
    cross: Vec<DMatrix<f64>>,
    schur_chol: Cholesky<f64, Dyn>,
    beta_cov: DMatrix<f64>,
    logdet: f64,
}

impl BlockCholesky {
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn dim(&self) -> usize {
        self.diag_chol.len() * self.q + self.p
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let off = self.diag_chol.len() * self.q;
        let mut ys = Vec::with_capacity(self.diag_chol.len());
        let mut rb = rhs.rows(off, self.p).clone_owned();
        for (g, chol) in self.diag_chol.iter().enumerate() {
            let y = chol.solve(&rhs.rows(g * self.q, self.q).clone_owned());
            rb -= self.cross[g].transpose() * &y;
            ys.push(y);
        }
        let xb = self.schur_chol.solve(&rb);
        let mut out = DVector::zeros(self.dim());
        for (g, y) in ys.into_iter().enumerate() {
            out.rows_mut(g * self.q, self.q).copy_from(&(y - &self.w[g] * &xb));
        }
        out.rows_mut(off, self.p).copy_from(&xb);
        out
    }

    /// Covariance of the coefficient block, `S^{-1}`.
    pub fn beta_cov(&self) -> &DMatrix<f64> {
        &self.beta_cov
    }

    /// Covariance block of group `g`'s effects.
    pub fn b_cov(&self, g: usize) -> DMatrix<f64> {
        let d_inv = self.diag_chol[g].inverse();
        &d_inv + &self.w[g] * &self.beta_cov * self.w[g].transpose()
    }

    /// Cross-covariance between group `g`'s effects and the coefficients.
    pub fn b_beta_cov(&self, g: usize) -> DMatrix<f64> {
        -(&self.w[g] * &self.beta_cov)
    }

    /// Diagonal of the inverse.
    pub fn marginal_variances(&self) -> DVector<f64> {
        let off = self.diag_chol.len() * self.q;
        let mut out = DVector::zeros(self.dim());
        for g in 0..self.diag_chol.len() {
            let c = self.b_cov(g);
            for k in 0..self.q {
                out[g * self.q + k] = c[(k, k)];
            }
        }
        for k in 0..self.p {
            out[off + k] = self.beta_cov[(k, k)];
        }
        out
    }

    /// Variance of `z' b_g + x' beta` under the inverse.
    pub fn predictor_variance(&self, g: Option<usize>, z: &[f64], x: &[f64]) -> f64 {
        let mut v = DVector::from_column_slice(x);
        let mut out = 0.0;
        if let Some(g) = g {
            let zv = DVector::from_column_slice(z);
            let dz = self.diag_chol[g].solve(&zv);
            out += zv.dot(&dz);
            // u = W_g' z
            v -= self.w[g].transpose() * &zv;
        }
        out + v.dot(&(&self.beta_cov * &v))
    }
}
