//! Gridded univariate densities and the mixture constructors that build them.

use serde::Serialize;

use crate::dist::special::std_normal_pdf;
use crate::error::{Error, Result};
use crate::quad::trapezoid;

/// Probability levels reported in every summary.
pub const QUANTILE_LEVELS: [f64; 5] = [0.025, 0.25, 0.5, 0.75, 0.975];

/// A normalized density on an ordered grid, linear between nodes.
///
/// The CDF is the exact integral of the piecewise-linear density, so
/// quantiles, interval probabilities and the trapezoid normalization all agree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalDensity {
    pub name: String,
    x: Vec<f64>,
    density: Vec<f64>,
    #[serde(skip)]
    cum: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub quantiles: Vec<(f64, f64)>,
}

impl MarginalDensity {
    /// Builds from raw (unnormalized) values; rescales so the trapezoid integral is 1.
    pub fn from_grid(name: impl Into<String>, x: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if x.len() < 2 || x.len() != density.len() {
            return Err(Error::InvalidInput(format!("marginal `{name}` needs matching grids of length >= 2")));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("marginal `{name}` abscissae must be finite and strictly increasing")));
        }
        if density.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidInput(format!("marginal `{name}` has negative or non-finite density")));
        }
        let mass = trapezoid(&x, &density);
        if !(mass > 0.0) {
            return Err(Error::InvalidInput(format!("marginal `{name}` has zero mass")));
        }
        let density: Vec<f64> = density.iter().map(|d| d / mass).collect();
        let mut cum = vec![0.0; x.len()];
        for i in 1..x.len() {
            cum[i] = cum[i - 1] + 0.5 * (x[i] - x[i - 1]) * (density[i] + density[i - 1]);
        }
        let xf: Vec<f64> = x.iter().zip(&density).map(|(a, d)| a * d).collect();
        let mean = trapezoid(&x, &xf);
        let x2f: Vec<f64> = x.iter().zip(&density).map(|(a, d)| (a - mean) * (a - mean) * d).collect();
        let sd = trapezoid(&x, &x2f).max(0.0).sqrt();
        let mut out = Self { name, x, density, cum, mean, sd, quantiles: Vec::new() };
        out.quantiles = QUANTILE_LEVELS.iter().map(|&p| (p, out.quantile(p))).collect();
        Ok(out)
    }

    /// A single Gaussian on a grid of `n` points spanning `mean ± span·sd`.
    pub fn gaussian(name: impl Into<String>, mean: f64, sd: f64, n: usize, span: f64) -> Result<Self> {
        gaussian_mixture(name, &[(1.0, mean, sd * sd)], n, span)
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn support(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    pub fn total_mass(&self) -> f64 {
        self.cum[self.cum.len() - 1]
    }

    /// Linear interpolation of the density; zero outside the grid.
    pub fn pdf(&self, v: f64) -> f64 {
        let n = self.x.len();
        if !(v >= self.x[0] && v <= self.x[n - 1]) {
            return 0.0;
        }
        let i = self.segment(v);
        let h = self.x[i + 1] - self.x[i];
        let t = (v - self.x[i]) / h;
        self.density[i] * (1.0 - t) + self.density[i + 1] * t
    }

    pub fn cdf(&self, v: f64) -> f64 {
        let n = self.x.len();
        if v <= self.x[0] {
            return 0.0;
        }
        if v >= self.x[n - 1] {
            return self.cum[n - 1];
        }
        let i = self.segment(v);
        let h = self.x[i + 1] - self.x[i];
        let u = v - self.x[i];
        let slope = (self.density[i + 1] - self.density[i]) / h;
        self.cum[i] + self.density[i] * u + 0.5 * slope * u * u
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.x.len();
        let target = p.clamp(0.0, 1.0) * self.cum[n - 1];
        let i = match self.cum.partition_point(|&c| c < target) {
            0 => return self.x[0],
            k if k >= n => return self.x[n - 1],
            k => k - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let r = target - self.cum[i];
        let a = 0.5 * (self.density[i + 1] - self.density[i]) / h;
        let b = self.density[i];
        let disc = (b * b + 4.0 * a * r).max(0.0);
        let denom = b + disc.sqrt();
        let u = if denom > 0.0 { 2.0 * r / denom } else { h };
        self.x[i] + u.clamp(0.0, h)
    }

    /// Probability mass of `[lo, hi]`, clipped to the grid.
    pub fn probability_in_interval(&self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo < hi) {
            return Err(Error::InvalidInput(format!("degenerate interval [{lo}, {hi}]")));
        }
        Ok(self.cdf(hi) - self.cdf(lo))
    }

    /// Equal-tail credible interval.
    pub fn equal_tail(&self, level: f64) -> (f64, f64) {
        let a = 0.5 * (1.0 - level);
        (self.quantile(a), self.quantile(1.0 - a))
    }

    fn segment(&self, v: f64) -> usize {
        let k = self.x.partition_point(|&a| a <= v);
        k.saturating_sub(1).min(self.x.len() - 2)
    }
}

/// Mixture of Gaussians `(weight, mean, variance)` tabulated on `n` points.
pub fn gaussian_mixture(name: impl Into<String>, comps: &[(f64, f64, f64)], n: usize, span: f64) -> Result<MarginalDensity> {
    let name = name.into();
    let comps: Vec<(f64, f64, f64)> = comps.iter().copied().filter(|c| c.0 > 0.0).collect();
    if comps.is_empty() || comps.iter().any(|c| !(c.2 > 0.0 && c.1.is_finite())) {
        return Err(Error::InvalidInput(format!("mixture `{name}` needs positive weights and variances")));
    }
    let lo = comps.iter().map(|c| c.1 - span * c.2.sqrt()).fold(f64::INFINITY, f64::min);
    let hi = comps.iter().map(|c| c.1 + span * c.2.sqrt()).fold(f64::NEG_INFINITY, f64::max);
    let x: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let d = x
        .iter()
        .map(|&v| {
            comps.iter().map(|&(w, m, var)| {
                let s = var.sqrt();
                w * std_normal_pdf((v - m) / s) / s
            }).sum()
        })
        .collect();
    MarginalDensity::from_grid(name, x, d)
}

/// Scale on which a hyperparameter marginal is smoothed before mapping back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Identity,
    Log,
    Atanh,
}

impl Scale {
    /// Smoothing scale for a reported parameter: log for precisions, Fisher for correlations.
    pub fn for_parameter(name: &str) -> Self {
        match name {
            "phi" | "tau1_sq" | "tau2_sq" => Scale::Log,
            "correlation" => Scale::Atanh,
            _ => Scale::Identity,
        }
    }

    pub fn forward(self, x: f64) -> f64 {
        match self {
            Scale::Identity => x,
            Scale::Log => x.ln(),
            Scale::Atanh => x.atanh(),
        }
    }

    pub fn inverse(self, u: f64) -> f64 {
        match self {
            Scale::Identity => u,
            Scale::Log => u.exp(),
            Scale::Atanh => u.tanh(),
        }
    }

    /// `dx/du` at `u`.
    pub fn inverse_derivative(self, u: f64) -> f64 {
        match self {
            Scale::Identity => 1.0,
            Scale::Log => u.exp(),
            Scale::Atanh => 1.0 - u.tanh().powi(2),
        }
    }
}

/// Weighted Gaussian-kernel density of `values` (natural scale), smoothed on `scale`.
///
/// The bandwidth on the smoothing scale is `rel_bandwidth` times the weighted
/// standard deviation; kernel centres are pulled toward the mean so the
/// mixture keeps the weighted variance.
pub fn kernel_marginal(
    name: impl Into<String>,
    values: &[f64],
    weights: &[f64],
    scale: Scale,
    rel_bandwidth: f64,
    n: usize,
) -> Result<MarginalDensity> {
    let name = name.into();
    let u: Vec<f64> = values.iter().map(|&v| scale.forward(v)).collect();
    let wsum: f64 = weights.iter().sum();
    let mean = u.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>() / wsum;
    let var = u.iter().zip(weights).map(|(a, w)| w * (a - mean).powi(2)).sum::<f64>() / wsum;
    if !(var > 0.0) {
        return Err(Error::InvalidInput(format!("marginal `{name}` has no spread across the grid")));
    }
    let rb = rel_bandwidth.min(0.9);
    let h2 = rb * rb * var;
    let shrink = (1.0 - rb * rb).sqrt();
    let comps: Vec<(f64, f64)> = u.iter().zip(weights).filter(|(_, w)| **w > 0.0).map(|(a, w)| (w / wsum, mean + (a - mean) * shrink)).collect();
    let h = h2.sqrt();
    let lo = comps.iter().map(|c| c.1).fold(f64::INFINITY, f64::min) - 7.0 * h;
    let hi = comps.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max) + 7.0 * h;
    let mut xs = Vec::with_capacity(n);
    let mut ds = Vec::with_capacity(n);
    for i in 0..n {
        let uu = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let x = scale.inverse(uu);
        if xs.last().is_some_and(|&p: &f64| !(x > p)) || !x.is_finite() {
            continue;
        }
        let fu: f64 = comps.iter().map(|&(w, m)| w * std_normal_pdf((uu - m) / h) / h).sum();
        xs.push(x);
        ds.push(fu / scale.inverse_derivative(uu));
    }
    MarginalDensity::from_grid(name, xs, ds)
}
